//! Fraction and exponent quantization.
//!
//! Fraction quantization keeps the head `x` bits of a parameter word and
//! zeroes the rest, with a rounding-like step: for `9 < x < 32` the last
//! surviving bit absorbs the first dropped bit with an OR (upward only, no
//! carry chain); at `x == 9` the dropped fraction MSB is added into the
//! exponent field, so a parameter collapses to a signed power of two.
//! Direct removal is the plain mask, kept as the comparison baseline.
//!
//! Exponent quantization runs after training on an all-power-of-two model:
//! it remaps each stored exponent to its offset from the model's minimum
//! exponent, reserving code 0 for zero, so a parameter needs only
//! `width + 1` bits (sign included) in the packed format.

use std::collections::BTreeMap;

use crate::bitcore::{FloatBits, BIAS, EXP_SHIFT};
#[cfg(test)]
use crate::bitcore::{FRAC_MASK, SIGN_MASK};
use crate::nn::{Activation, Layer, LayerKind, Model};
use crate::{Error, Result};

/// Retained bit-width `x` plus the derived head mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantSpec {
    x: u32,
    kernel: u32,
}

impl QuantSpec {
    /// `x` must lie in `[9, 32]`. The kernel has the top `x` bits set.
    pub fn new(x: u32) -> Result<Self> {
        if !(9..=32).contains(&x) {
            return Err(Error::BadWidth(x));
        }
        let kernel = if x == 32 { u32::MAX } else { !(u32::MAX >> x) };
        Ok(QuantSpec { x, kernel })
    }

    pub fn x(self) -> u32 {
        self.x
    }

    pub fn kernel(self) -> u32 {
        self.kernel
    }
}

/// Rounding-like fraction quantization of one parameter word.
pub fn fraction_quantize(word: u32, spec: QuantSpec) -> Result<u32> {
    let bits = FloatBits::split(word).check_normal_or_zero()?;
    if spec.x == 32 {
        return Ok(word);
    }
    let mut w = word;
    if spec.x > 9 {
        // bit[32-x] |= bit[31-x]; the OR stops any carry chain into the
        // exponent segment.
        let keep = 32 - spec.x;
        let or_bit = (w >> (keep - 1)) & 1;
        w |= or_bit << keep;
    } else {
        // x == 9: round the dropped fraction MSB into the exponent field.
        if !bits.is_zero_pattern() {
            let exp = bits.exponent() + bits.bit(22);
            if exp == 255 {
                return Err(Error::ExponentOverflow(word));
            }
            w = (w & !crate::bitcore::EXP_MASK) | (exp << EXP_SHIFT);
        }
    }
    Ok(w & spec.kernel)
}

/// Masks the trailing `32 - x` bits with no rounding.
pub fn direct_remove(word: u32, spec: QuantSpec) -> Result<u32> {
    FloatBits::split(word).check_normal_or_zero()?;
    Ok(word & spec.kernel)
}

fn quantize_model_with(model: &mut Model, mut op: impl FnMut(u32) -> Result<u32>) -> Result<()> {
    for (li, layer) in model.layers.iter_mut().enumerate() {
        for (tensor, params) in [("weights", &mut layer.weights), ("bias", &mut layer.bias)] {
            for (i, p) in params.iter_mut().enumerate() {
                let word = op(p.to_bits()).map_err(|e| Error::Param {
                    layer: li,
                    tensor,
                    index: i,
                    source: Box::new(e),
                })?;
                *p = f32::from_bits(word);
            }
        }
    }
    Ok(())
}

/// Applies [`fraction_quantize`] to every weight and bias of the model.
pub fn fraction_quantize_model(model: &mut Model, spec: QuantSpec) -> Result<()> {
    quantize_model_with(model, |w| fraction_quantize(w, spec))
}

/// Applies [`direct_remove`] to every weight and bias of the model.
pub fn direct_remove_model(model: &mut Model, spec: QuantSpec) -> Result<()> {
    quantize_model_with(model, |w| direct_remove(w, spec))
}

/// Offset mapping for stored exponents: `{max, min, width}` with code 0
/// reserved for zero and nonzero exponents coded as `E - min + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExponentCodebook {
    pub max_exp: i32,
    pub min_exp: i32,
    pub width: u32,
}

impl ExponentCodebook {
    pub fn from_range(max_exp: i32, min_exp: i32) -> Self {
        debug_assert!(max_exp >= min_exp);
        let span = (max_exp - min_exp + 1) as u32 + 1;
        let width = 32 - (span - 1).leading_zeros(); // ceil(log2(span))
        ExponentCodebook {
            max_exp,
            min_exp,
            width,
        }
    }

    /// Bits one packed parameter costs: the sign bit plus the code.
    pub fn bits_per_param(&self) -> u32 {
        self.width + 1
    }

    /// Sign flag and exponent code of a zero-fraction word.
    pub fn encode(&self, word: u32) -> Result<(u32, u32)> {
        let bits = FloatBits::split(word).check_normal_or_zero()?;
        if bits.is_zero_pattern() {
            // Code 0 marks zero; the sign rides along so ±0 round-trips.
            return Ok((bits.sign(), 0));
        }
        if bits.fraction() != 0 {
            return Err(Error::FractionNotZero(word));
        }
        let exp = bits.exponent() as i32 - BIAS;
        if exp < self.min_exp || exp > self.max_exp {
            return Err(Error::EncodingMismatch(format!(
                "exponent {exp} outside codebook range [{}, {}]",
                self.min_exp, self.max_exp
            )));
        }
        Ok((bits.sign(), (exp - self.min_exp + 1) as u32))
    }

    /// Inverse of [`encode`](Self::encode); reproduces the original word.
    pub fn decode(&self, sign: u32, code: u32) -> Result<u32> {
        if code == 0 {
            return Ok(sign << 31);
        }
        if code >= 1u32 << self.width {
            return Err(Error::CorruptHeader(format!(
                "exponent code {code} does not fit width {}",
                self.width
            )));
        }
        let exp = code as i32 - 1 + self.min_exp;
        let biased = exp + BIAS;
        if !(1..=254).contains(&biased) {
            return Err(Error::CorruptHeader(format!(
                "decoded exponent {exp} outside the normal range"
            )));
        }
        Ok((sign << 31) | ((biased as u32) << EXP_SHIFT))
    }
}

/// Model re-expressed as per-parameter (sign, exponent code) pairs.
#[derive(Debug, Clone)]
pub struct ExpQuantModel {
    pub codebook: ExponentCodebook,
    pub layers: Vec<ExpQuantLayer>,
}

#[derive(Debug, Clone)]
pub struct ExpQuantLayer {
    pub kind: LayerKind,
    pub activation: Activation,
    pub sigma: f32,
    pub weight_codes: Vec<(u32, u32)>,
    pub bias_codes: Vec<(u32, u32)>,
}

impl ExpQuantModel {
    /// Reconstructs the original model word for word (zeros canonical +0).
    pub fn decode(&self) -> Result<Model> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let decode_all = |codes: &[(u32, u32)]| -> Result<Vec<f32>> {
                codes
                    .iter()
                    .map(|&(s, c)| Ok(f32::from_bits(self.codebook.decode(s, c)?)))
                    .collect()
            };
            layers.push(Layer {
                kind: l.kind,
                activation: l.activation,
                sigma: l.sigma,
                weights: decode_all(&l.weight_codes)?,
                bias: decode_all(&l.bias_codes)?,
            });
        }
        Ok(Model { layers })
    }
}

/// Post-training exponent quantization of an all-power-of-two model.
///
/// Every parameter must already have a zero fraction (i.e. the model was
/// fraction-quantized at `x == 9`). Returns the codebook together with the
/// recoded model; decoding is word-exact.
pub fn exponent_quantize(model: &Model) -> Result<ExpQuantModel> {
    let mut max_exp = i32::MIN;
    let mut min_exp = i32::MAX;
    let mut total = 0usize;
    for (li, layer) in model.layers.iter().enumerate() {
        for (tensor, params) in [("weights", &layer.weights), ("bias", &layer.bias)] {
            for (i, p) in params.iter().enumerate() {
                total += 1;
                let bits = FloatBits::from_f32(*p);
                let wrap = |e: Error| Error::Param {
                    layer: li,
                    tensor,
                    index: i,
                    source: Box::new(e),
                };
                bits.check_normal_or_zero().map_err(wrap)?;
                if bits.is_zero_pattern() {
                    continue;
                }
                if bits.fraction() != 0 {
                    return Err(wrap(Error::FractionNotZero(bits.word())));
                }
                let exp = bits.exponent() as i32 - BIAS;
                max_exp = max_exp.max(exp);
                min_exp = min_exp.min(exp);
            }
        }
    }
    if total == 0 {
        return Err(Error::EmptyModel);
    }
    if max_exp == i32::MIN {
        // All-zero model: a degenerate one-value codebook still encodes it.
        max_exp = 0;
        min_exp = 0;
    }
    let codebook = ExponentCodebook::from_range(max_exp, min_exp);
    let layers = model
        .layers
        .iter()
        .map(|layer| {
            let encode_all = |params: &[f32]| -> Result<Vec<(u32, u32)>> {
                params
                    .iter()
                    .map(|p| codebook.encode(p.to_bits()))
                    .collect()
            };
            Ok(ExpQuantLayer {
                kind: layer.kind,
                activation: layer.activation,
                sigma: layer.sigma,
                weight_codes: encode_all(&layer.weights)?,
                bias_codes: encode_all(&layer.bias)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExpQuantModel { codebook, layers })
}

/// Parameter counts per log2 magnitude bucket; zeros counted separately.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExponentHistogram {
    pub zeros: u64,
    pub counts: BTreeMap<i32, u64>,
    /// Patterns outside the normalized range (subnormal/inf/NaN), if any.
    pub other: u64,
}

/// Counts model parameters per unbiased exponent, as in the value
/// distribution plot the exponent codebook is built from.
pub fn exponent_histogram(model: &Model) -> ExponentHistogram {
    let mut hist = ExponentHistogram::default();
    for layer in &model.layers {
        for p in layer.weights.iter().chain(layer.bias.iter()) {
            let bits = FloatBits::from_f32(*p);
            if bits.is_zero_pattern() {
                hist.zeros += 1;
            } else if bits.is_subnormal() || bits.is_inf_or_nan() {
                hist.other += 1;
            } else {
                *hist
                    .counts
                    .entry(bits.exponent() as i32 - BIAS)
                    .or_insert(0) += 1;
            }
        }
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tests_support::single_param_model;
    use proptest::prelude::*;

    const EXAMPLE: u32 = 0x3DFC_B924; // 0.123400002718...

    #[test]
    fn kernel_shape() {
        assert_eq!(QuantSpec::new(9).unwrap().kernel(), 0xFF80_0000);
        assert_eq!(QuantSpec::new(26).unwrap().kernel(), 0xFFFF_FFC0);
        assert_eq!(QuantSpec::new(32).unwrap().kernel(), 0xFFFF_FFFF);
        assert!(matches!(QuantSpec::new(8), Err(Error::BadWidth(8))));
        assert!(matches!(QuantSpec::new(33), Err(Error::BadWidth(33))));
    }

    #[test]
    fn fraction_quantize_x9_rounds_to_power_of_two() {
        // 0.1234 carries into the exponent and becomes 0.125.
        let spec = QuantSpec::new(9).unwrap();
        let q = fraction_quantize(EXAMPLE, spec).unwrap();
        assert_eq!(f32::from_bits(q), 0.125);
        // Exact power of two is a fixed point.
        let q2 = fraction_quantize(0.125f32.to_bits(), spec).unwrap();
        assert_eq!(f32::from_bits(q2), 0.125);
    }

    #[test]
    fn fraction_quantize_x26_or_rounds() {
        // Hand application on the 0.1234 pattern: fraction bit 5 is 1, so
        // bit 6 ORs to 1 and the last 6 bits clear.
        let spec = QuantSpec::new(26).unwrap();
        let q = fraction_quantize(EXAMPLE, spec).unwrap();
        let expected = (0b0111_1011 << EXP_SHIFT) | (0b1_1111_0010_1110_0101 << 6);
        assert_eq!(q, expected);
        assert_eq!(q & 0x3F, 0);
    }

    #[test]
    fn fraction_quantize_x32_is_identity() {
        let spec = QuantSpec::new(32).unwrap();
        assert_eq!(fraction_quantize(EXAMPLE, spec).unwrap(), EXAMPLE);
    }

    #[test]
    fn direct_remove_reference_values() {
        let v6 = direct_remove(EXAMPLE, QuantSpec::new(26).unwrap()).unwrap();
        assert_eq!(
            format!("{:.12}", f32::from_bits(v6) as f64),
            "0.123399734497"
        );
        let v12 = direct_remove(EXAMPLE, QuantSpec::new(20).unwrap()).unwrap();
        assert_eq!(
            format!("{:.12}", f32::from_bits(v12) as f64),
            "0.123382568359"
        );
        let id = direct_remove(EXAMPLE, QuantSpec::new(32).unwrap()).unwrap();
        assert_eq!(id, EXAMPLE);
    }

    #[test]
    fn zero_is_fixed_point_at_every_width() {
        for x in 9..=32 {
            let spec = QuantSpec::new(x).unwrap();
            assert_eq!(fraction_quantize(0, spec).unwrap(), 0);
            assert_eq!(fraction_quantize(SIGN_MASK, spec).unwrap(), SIGN_MASK);
            assert_eq!(direct_remove(0, spec).unwrap(), 0);
        }
    }

    #[test]
    fn rejects_inf_nan() {
        let spec = QuantSpec::new(9).unwrap();
        let inf = f32::INFINITY.to_bits();
        assert!(matches!(
            fraction_quantize(inf, spec),
            Err(Error::InfNan(_))
        ));
        assert!(matches!(direct_remove(inf, spec), Err(Error::InfNan(_))));
    }

    #[test]
    fn x9_rounding_bound_exhaustive_fractions() {
        // Brute force over all 2^23 fractions at a fixed exponent: the
        // relative error of the x == 9 rounding never exceeds 1/3.
        let spec = QuantSpec::new(9).unwrap();
        let exp = 120u32;
        for frac in 0..=FRAC_MASK {
            let word = (exp << EXP_SHIFT) | frac;
            let v = f32::from_bits(word) as f64;
            let q = f32::from_bits(fraction_quantize(word, spec).unwrap()) as f64;
            let rel = ((q - v) / v).abs();
            assert!(rel <= 1.0 / 3.0 + 1e-9, "frac {frac:#x}: rel {rel}");
        }
    }

    #[test]
    fn model_quantize_single_param() {
        let mut model = single_param_model(f32::from_bits(EXAMPLE));
        fraction_quantize_model(&mut model, QuantSpec::new(9).unwrap()).unwrap();
        assert_eq!(model.layers[0].weights[0], 0.125);
    }

    #[test]
    fn model_quantize_error_carries_context() {
        let mut model = single_param_model(1.0);
        model.layers[0].weights[0] = f32::NAN;
        let err = fraction_quantize_model(&mut model, QuantSpec::new(9).unwrap());
        match err {
            Err(Error::Param {
                layer: 0,
                tensor: "weights",
                index: 0,
                source,
            }) => {
                assert!(matches!(*source, Error::InfNan(_)));
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn codebook_widths_match_worked_examples() {
        // {±0, ±2^-11 ... ±2^2}: width 4 (5 bits with the sign).
        let cb = ExponentCodebook::from_range(2, -11);
        assert_eq!(cb.width, 4);
        assert_eq!(cb.bits_per_param(), 5);
        assert_eq!(cb.encode(0).unwrap(), (0, 0));
        assert_eq!(cb.encode(SIGN_MASK).unwrap(), (1, 0));
        let p = |v: f32| v.to_bits();
        assert_eq!(cb.encode(p(2f32.powi(-11))).unwrap(), (0, 1));
        assert_eq!(cb.encode(p(-2.0)).unwrap(), (1, 13));
        // Exponents spanning {0, ..., -23}: width 5.
        assert_eq!(ExponentCodebook::from_range(0, -23).width, 5);
    }

    #[test]
    fn exponent_quantize_single_half() {
        let model = single_param_model(0.5);
        let eq = exponent_quantize(&model).unwrap();
        assert_eq!(eq.codebook.width, 1);
        assert_eq!(eq.codebook.min_exp, -1);
        assert_eq!(eq.layers[0].weight_codes[0], (0, 1));
        let back = eq.decode().unwrap();
        assert_eq!(back.layers[0].weights[0].to_bits(), 0.5f32.to_bits());
    }

    #[test]
    fn exponent_quantize_rejects_nonzero_fraction_and_empty() {
        let model = single_param_model(0.1234);
        match exponent_quantize(&model) {
            Err(Error::Param { source, .. }) => {
                assert!(matches!(*source, Error::FractionNotZero(_)))
            }
            other => panic!("unexpected: {other:?}"),
        }
        let empty = Model { layers: vec![] };
        assert!(matches!(exponent_quantize(&empty), Err(Error::EmptyModel)));
    }

    #[test]
    fn histogram_counts() {
        let mut model = single_param_model(0.5);
        model.layers[0].weights = vec![0.5, 0.5, 0.25];
        model.layers[0].bias = vec![];
        let hist = exponent_histogram(&model);
        assert_eq!(hist.zeros, 0);
        assert_eq!(hist.counts.get(&-1), Some(&2));
        assert_eq!(hist.counts.get(&-2), Some(&1));

        model.layers[0].weights = vec![0.0, -0.0, 0.0];
        let hist = exponent_histogram(&model);
        assert_eq!(hist.zeros, 3);
        assert!(hist.counts.is_empty());
    }

    fn normal_word() -> impl Strategy<Value = u32> {
        (any::<bool>(), 1u32..=254, 0u32..=FRAC_MASK)
            .prop_map(|(s, e, f)| ((s as u32) << 31) | (e << EXP_SHIFT) | f)
    }

    proptest! {
        // Idempotent composition of masks: remove at x2 then x1 <= x2
        // equals removing at x1 directly.
        #[test]
        fn monotone_masking(word in normal_word(), x1 in 9u32..=32, x2 in 9u32..=32) {
            let (x1, x2) = (x1.min(x2), x1.max(x2));
            let s1 = QuantSpec::new(x1).unwrap();
            let s2 = QuantSpec::new(x2).unwrap();
            let once = direct_remove(word, s1).unwrap();
            let twice = direct_remove(direct_remove(word, s2).unwrap(), s1).unwrap();
            prop_assert_eq!(once, twice);
        }

        // The sign bit survives quantization untouched.
        #[test]
        fn no_sign_corruption(word in normal_word(), x in 9u32..=32) {
            let spec = QuantSpec::new(x).unwrap();
            if let Ok(q) = fraction_quantize(word, spec) {
                prop_assert_eq!(q & SIGN_MASK, word & SIGN_MASK);
            }
        }

        // Relative rounding error bound for x > 9.
        #[test]
        fn rounding_bound_above_9(word in normal_word(), x in 10u32..=31) {
            let spec = QuantSpec::new(x).unwrap();
            let v = f32::from_bits(word) as f64;
            let q = f32::from_bits(fraction_quantize(word, spec).unwrap()) as f64;
            prop_assert!((q - v).abs() <= v.abs() * (-(x as f64 - 9.0)).exp2() + 1e-30);
        }

        // Trailing bits are all zero after quantization.
        #[test]
        fn trailing_bits_clear(word in normal_word(), x in 9u32..=31) {
            let spec = QuantSpec::new(x).unwrap();
            if let Ok(q) = fraction_quantize(word, spec) {
                prop_assert_eq!(q & !spec.kernel(), 0);
            }
        }

        // Exponent codec round-trip on random power-of-two models.
        #[test]
        fn exponent_codec_roundtrip(
            exps in proptest::collection::vec((any::<bool>(), 60u32..=190), 1..40)
        ) {
            let mut model = single_param_model(0.0);
            model.layers[0].weights = exps
                .iter()
                .map(|&(s, e)| f32::from_bits(((s as u32) << 31) | (e << EXP_SHIFT)))
                .collect();
            model.layers[0].bias = vec![0.0];
            let eq = exponent_quantize(&model).unwrap();
            let back = eq.decode().unwrap();
            for (a, b) in model.layers[0].weights.iter().zip(&back.layers[0].weights) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
