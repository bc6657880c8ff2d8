//! Implementations behind the CLI subcommands. Everything here is a
//! plain function over paths and options so the integration tests can
//! drive the same code the binary does.

use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seofp::nn::{self, Model, Tensor, TrainConfig};
use seofp::pack::{self, Encoding};
use seofp::quant::{self, QuantSpec};
use serde::{Deserialize, Serialize};

use crate::arch;
use crate::data;

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).with_context(|| format!("read {}", path.display()))?;
    Ok(pack::unpack(&bytes)?)
}

pub fn save_model(model: &Model, encoding: Encoding, path: &Path) -> Result<u64> {
    let bytes = pack::pack(model, encoding)?;
    fs::write(path, &bytes).with_context(|| format!("write {}", path.display()))?;
    Ok(bytes.len() as u64)
}

pub fn parse_encoding(name: &str) -> Result<Encoding> {
    Ok(match name {
        "full32" => Encoding::Full32,
        "se9" => Encoding::SignExponent9,
        "codebook" => Encoding::Codebook,
        other => bail!("unknown encoding `{other}`; use full32, se9, or codebook"),
    })
}

/// Test-split pairs shaped for the model: framed for dense stacks,
/// whole utterances for convolutional ones.
fn pairs_for_model(model: &Model, dir: &Path) -> Result<Vec<(Tensor, Tensor)>> {
    let meta = data::load_meta(dir)?;
    let pairs = data::load_split(dir, &meta.test)?;
    match arch::model_input_shape(model)? {
        (1, Some(frame)) => {
            if meta.utterance_len % frame != 0 {
                bail!(
                    "utterance length {} is not a multiple of the model frame {frame}",
                    meta.utterance_len
                );
            }
            Ok(data::frame_pairs(&pairs, frame))
        }
        (1, None) => Ok(pairs),
        (ch, _) => bail!("model expects {ch}-channel input; datasets are 1-channel"),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub bits: u32,
    pub epochs: usize,
    pub param_count: usize,
    pub epoch_losses: Vec<f32>,
    pub train_mse: f64,
    pub test_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub layers: String,
    pub frame: usize,
    pub bits: u32,
    pub epochs: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub seed: u64,
}

pub fn train_command(data_dir: &Path, out: &Path, opts: &TrainOptions) -> Result<TrainSummary> {
    let arch_layers = arch::parse_layers(&opts.layers)?;
    let meta = data::load_meta(data_dir)?;
    let train_pairs = data::load_split(data_dir, &meta.train)?;
    let test_pairs = data::load_split(data_dir, &meta.test)?;
    let (train_pairs, test_pairs, frame) = if arch::wants_frames(&arch_layers) {
        if meta.utterance_len % opts.frame != 0 {
            bail!(
                "utterance length {} is not a multiple of --frame {}",
                meta.utterance_len,
                opts.frame
            );
        }
        (
            data::frame_pairs(&train_pairs, opts.frame),
            data::frame_pairs(&test_pairs, opts.frame),
            opts.frame,
        )
    } else {
        let frame = meta.utterance_len;
        (train_pairs, test_pairs, frame)
    };
    let specs = arch::build_specs(&arch_layers, frame)?;
    let mut model = Model::init(&specs, opts.seed)?;
    let cfg = TrainConfig {
        x: opts.bits,
        learning_rate: opts.learning_rate,
        epochs: opts.epochs,
        batch_size: opts.batch_size,
        seed: opts.seed,
    };
    let epoch_losses = nn::train(&mut model, &train_pairs, &cfg)?;
    let summary = TrainSummary {
        bits: opts.bits,
        epochs: opts.epochs,
        param_count: model.param_count(),
        train_mse: nn::evaluate_mse(&model, &train_pairs)?,
        test_mse: nn::evaluate_mse(&model, &test_pairs)?,
        epoch_losses,
    };
    save_model(&model, Encoding::Full32, out)?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    /// Rounding removal (carries into the exponent at the 9-bit width).
    Fraction,
    /// Plain masking of the dropped fraction bits.
    Direct,
}

pub fn quantize_command(model_path: &Path, out: &Path, bits: u32, mode: QuantMode) -> Result<()> {
    let mut model = load_model(model_path)?;
    let spec = QuantSpec::new(bits)?;
    match mode {
        QuantMode::Fraction => quant::fraction_quantize_model(&mut model, spec)?,
        QuantMode::Direct => quant::direct_remove_model(&mut model, spec)?,
    }
    save_model(&model, Encoding::Full32, out)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct PackSummary {
    pub encoding: String,
    pub param_count: usize,
    pub packed_bytes: u64,
    pub baseline_bytes: u64,
    /// Signed percentage change from the 32-bit baseline payload.
    pub ratio_percent: f64,
    pub codebook_width: Option<u32>,
}

pub fn pack_command(model_path: &Path, out: &Path, encoding: Encoding) -> Result<PackSummary> {
    let model = load_model(model_path)?;
    let packed_bytes = save_model(&model, encoding, out)?;
    let baseline_bytes = pack::baseline_param_bytes(&model);
    let codebook_width = match encoding {
        Encoding::Codebook => Some(quant::exponent_quantize(&model)?.codebook.width),
        _ => None,
    };
    Ok(PackSummary {
        encoding: format!("{encoding:?}"),
        param_count: model.param_count(),
        packed_bytes,
        baseline_bytes,
        ratio_percent: pack::compression_ratio(packed_bytes, baseline_bytes)?,
        codebook_width,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct InferSummary {
    pub engine: String,
    pub mse: f64,
    pub input_snr_db: f64,
    pub output_snr_db: f64,
    pub flushed_activations: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Native,
    Seofp,
}

pub fn infer_command(model_path: &Path, data_dir: &Path, engine: Engine) -> Result<InferSummary> {
    let model = load_model(model_path)?;
    let pairs = pairs_for_model(&model, data_dir)?;
    let inference = match engine {
        Engine::Seofp => Some(nn::build_inference_model(&model)?),
        Engine::Native => None,
    };
    let mut err_sq = 0.0f64;
    let mut in_err_sq = 0.0f64;
    let mut clean_sq = 0.0f64;
    let mut count = 0usize;
    let mut flushed = 0u64;
    for (noisy, clean) in &pairs {
        let out = match &inference {
            Some(inf) => {
                let (out, fl) = inf.forward(noisy)?;
                flushed += fl;
                out
            }
            None => nn::forward(&model, noisy)?,
        };
        for ((y, t), x) in out.data.iter().zip(&clean.data).zip(&noisy.data) {
            let e = (*y - *t) as f64;
            err_sq += e * e;
            let ein = (*x - *t) as f64;
            in_err_sq += ein * ein;
            clean_sq += (*t as f64) * (*t as f64);
        }
        count += out.data.len();
    }
    let n = count.max(1) as f64;
    Ok(InferSummary {
        engine: match engine {
            Engine::Native => "native".into(),
            Engine::Seofp => "seofp".into(),
        },
        mse: err_sq / n,
        input_snr_db: 10.0 * (clean_sq / in_err_sq.max(f64::MIN_POSITIVE)).log10(),
        output_snr_db: 10.0 * (clean_sq / err_sq.max(f64::MIN_POSITIVE)).log10(),
        flushed_activations: flushed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub inputs_checked: usize,
    pub outputs_checked: u64,
    pub word_mismatches: u64,
    pub flushed_params: u64,
    pub flushed_activations: u64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.word_mismatches == 0
    }
}

/// Runs the same inputs through the native-multiply and integer-add
/// paths and compares every output word. Inputs come from the dataset's
/// test split when `data_dir` is given, otherwise from a seeded RNG.
pub fn verify_command(
    model_path: &Path,
    data_dir: Option<&Path>,
    random_inputs: usize,
    input_len: usize,
    seed: u64,
) -> Result<VerifyReport> {
    let model = load_model(model_path)?;
    let inference = nn::build_inference_model(&model)?;
    let inputs: Vec<Tensor> = match data_dir {
        Some(dir) => pairs_for_model(&model, dir)?
            .into_iter()
            .map(|(noisy, _)| noisy)
            .collect(),
        None => {
            let (channels, fixed_len) = arch::model_input_shape(&model)?;
            let len = fixed_len.unwrap_or(input_len);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..random_inputs)
                .map(|_| {
                    let data = (0..channels * len)
                        .map(|_| rng.gen_range(-1.0f32..1.0))
                        .collect();
                    Tensor::new(channels, len, data)
                })
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    let mut report = VerifyReport {
        inputs_checked: inputs.len(),
        outputs_checked: 0,
        word_mismatches: 0,
        flushed_params: inference.flushed_params,
        flushed_activations: 0,
    };
    for input in &inputs {
        let native = nn::forward(&model, input)?;
        let (fast, flushed) = inference.forward(input)?;
        report.flushed_activations += flushed;
        for (a, b) in native.data.iter().zip(&fast.data) {
            report.outputs_checked += 1;
            if a.to_bits() != b.to_bits() {
                report.word_mismatches += 1;
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: String,
    pub param_count: usize,
    pub inputs: usize,
    pub repeats: usize,
    pub samples_processed: u64,
    pub native_seconds: f64,
    pub seofp_seconds: f64,
    /// native_seconds / seofp_seconds; > 1 means the add path is faster.
    pub speedup: f64,
    pub flushed_activations: u64,
    pub bit_exact: bool,
}

pub fn bench_command(model_path: &Path, data_dir: &Path, repeats: usize) -> Result<BenchReport> {
    let model = load_model(model_path)?;
    let inference = nn::build_inference_model(&model)?;
    let pairs = pairs_for_model(&model, data_dir)?;
    if pairs.is_empty() || repeats == 0 {
        bail!("benchmark needs at least one test input and one repeat");
    }

    // Correctness first: the timing numbers only mean anything if both
    // paths produce identical words.
    let mut bit_exact = true;
    let mut flushed = 0u64;
    for (noisy, _) in &pairs {
        let native = nn::forward(&model, noisy)?;
        let (fast, fl) = inference.forward(noisy)?;
        flushed += fl;
        if native
            .data
            .iter()
            .zip(&fast.data)
            .any(|(a, b)| a.to_bits() != b.to_bits())
        {
            bit_exact = false;
        }
    }

    let mut samples = 0u64;
    let start = Instant::now();
    for _ in 0..repeats {
        for (noisy, _) in &pairs {
            let out = nn::forward(&model, noisy)?;
            samples += out.data.len() as u64;
        }
    }
    let native_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    for _ in 0..repeats {
        for (noisy, _) in &pairs {
            inference.forward(noisy)?;
        }
    }
    let seofp_seconds = start.elapsed().as_secs_f64();

    Ok(BenchReport {
        model: model_path.display().to_string(),
        param_count: model.param_count(),
        inputs: pairs.len(),
        repeats,
        samples_processed: samples,
        native_seconds,
        seofp_seconds,
        speedup: native_seconds / seofp_seconds.max(f64::MIN_POSITIVE),
        flushed_activations: flushed,
        bit_exact,
    })
}

impl BenchReport {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        s.push_str("# Inference benchmark\n\n");
        s.push_str(
            "Both engines run the same forward pass over the test split; the \
             integer-add engine replaces every float multiply with one 32-bit \
             integer addition. Wall-clock times cover the whole forward pass \
             (adjustment, accumulation, activation), measured with a monotonic \
             clock over all repeats.\n\n",
        );
        s.push_str("| metric | value |\n|---|---|\n");
        s.push_str(&format!("| model | `{}` |\n", self.model));
        s.push_str(&format!("| parameters | {} |\n", self.param_count));
        s.push_str(&format!(
            "| test inputs x repeats | {} x {} |\n",
            self.inputs, self.repeats
        ));
        s.push_str(&format!(
            "| samples processed | {} |\n",
            self.samples_processed
        ));
        s.push_str(&format!(
            "| native multiply time | {:.6} s |\n",
            self.native_seconds
        ));
        s.push_str(&format!(
            "| integer-add time | {:.6} s |\n",
            self.seofp_seconds
        ));
        s.push_str(&format!(
            "| speedup (native / add) | {:.3}x |\n",
            self.speedup
        ));
        s.push_str(&format!(
            "| activations flushed to zero | {} |\n",
            self.flushed_activations
        ));
        s.push_str(&format!(
            "| bit-exact vs native | {} |\n",
            if self.bit_exact { "yes" } else { "NO" }
        ));
        s.push_str(
            "\nContext: the original hardware evaluation of this arithmetic \
             reports end-to-end speedups of 1.192x-1.212x on dedicated \
             implementations. Software timings on a general-purpose CPU are \
             not comparable to those figures and are reported here only to \
             document the measurement methodology.\n",
        );
        s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DegradationRow {
    pub bits: u32,
    pub in_loop_test_mse: f64,
    pub direct_removal_test_mse: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DegradationReport {
    pub float_test_mse: f64,
    pub rows: Vec<DegradationRow>,
}

#[derive(Debug, Clone)]
pub struct ReportOptions {
    pub layers: String,
    pub frame: usize,
    pub bit_widths: Vec<u32>,
    pub epochs: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub seed: u64,
}

/// Bit-width degradation study: one float baseline, then per width both
/// quantize-in-the-loop retraining and post-hoc direct removal of the
/// baseline's fraction bits, all evaluated on the test split.
pub fn report_command(data_dir: &Path, opts: &ReportOptions) -> Result<DegradationReport> {
    let arch_layers = arch::parse_layers(&opts.layers)?;
    let meta = data::load_meta(data_dir)?;
    let train_pairs = data::load_split(data_dir, &meta.train)?;
    let test_pairs = data::load_split(data_dir, &meta.test)?;
    let (train_pairs, test_pairs, frame) = if arch::wants_frames(&arch_layers) {
        (
            data::frame_pairs(&train_pairs, opts.frame),
            data::frame_pairs(&test_pairs, opts.frame),
            opts.frame,
        )
    } else {
        let frame = meta.utterance_len;
        (train_pairs, test_pairs, frame)
    };
    let specs = arch::build_specs(&arch_layers, frame)?;

    let train_at = |bits: u32| -> Result<Model> {
        let mut model = Model::init(&specs, opts.seed)?;
        let cfg = TrainConfig {
            x: bits,
            learning_rate: opts.learning_rate,
            epochs: opts.epochs,
            batch_size: opts.batch_size,
            seed: opts.seed,
        };
        nn::train(&mut model, &train_pairs, &cfg)?;
        Ok(model)
    };

    let float_model = train_at(32)?;
    let float_test_mse = nn::evaluate_mse(&float_model, &test_pairs)?;
    let mut rows = Vec::new();
    for &bits in &opts.bit_widths {
        let in_loop = train_at(bits)?;
        let mut removed = float_model.clone();
        quant::direct_remove_model(&mut removed, QuantSpec::new(bits)?)?;
        rows.push(DegradationRow {
            bits,
            in_loop_test_mse: nn::evaluate_mse(&in_loop, &test_pairs)?,
            direct_removal_test_mse: nn::evaluate_mse(&removed, &test_pairs)?,
        });
    }
    Ok(DegradationReport {
        float_test_mse,
        rows,
    })
}

impl DegradationReport {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        s.push_str("# Bit-width degradation\n\n");
        s.push_str(&format!(
            "Float (32-bit) baseline test MSE: {:.6e}\n\n",
            self.float_test_mse
        ));
        s.push_str("| retained bits | in-loop quantization MSE | direct removal MSE |\n");
        s.push_str("|---|---|---|\n");
        for row in &self.rows {
            s.push_str(&format!(
                "| {} | {:.6e} | {:.6e} |\n",
                row.bits, row.in_loop_test_mse, row.direct_removal_test_mse
            ));
        }
        s.push_str(
            "\nIn-loop numbers come from retraining with the weights held \
             fraction-free after every update; direct removal masks the \
             fraction bits of the trained float baseline without retraining.\n",
        );
        s
    }
}
