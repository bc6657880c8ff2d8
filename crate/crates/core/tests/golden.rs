//! Regression pin: a fixed-seed two-layer model and fixed input must keep
//! producing the same output words. Values were recorded from the first
//! verified implementation run and guard against accidental changes to
//! initialization, quantization, or accumulation order.

use seofp::nn::{self, Activation, LayerKind, Model, Tensor};
use seofp::quant::{self, QuantSpec};

#[test]
fn golden_forward_two_layer() {
    let specs = [
        (
            LayerKind::Conv1d {
                filters: 3,
                kernel: 3,
                in_channels: 1,
            },
            Activation::Clamp,
        ),
        (
            LayerKind::Dense {
                in_units: 18,
                out_units: 4,
            },
            Activation::Identity,
        ),
    ];
    let mut model = Model::init(&specs, 42).unwrap();
    quant::fraction_quantize_model(&mut model, QuantSpec::new(9).unwrap()).unwrap();
    let input = Tensor::from_samples(
        (0..6)
            .map(|i| ((i * i + 1) as f32 * 0.0625) % 1.0 - 0.5)
            .collect(),
    );
    let out = nn::forward(&model, &input).unwrap();
    let words: Vec<u32> = out.data.iter().map(|v| v.to_bits()).collect();
    assert_eq!(words, vec![0xbc943000, 0x3d248000, 0x3c54c000, 0x3d006000]);

    // The integer-add engine must reproduce the same words.
    let inf = nn::build_inference_model(&model).unwrap();
    let (fast, flushed) = inf.forward(&input).unwrap();
    assert_eq!(flushed, 0);
    let fast_words: Vec<u32> = fast.data.iter().map(|v| v.to_bits()).collect();
    assert_eq!(fast_words, words);
}
