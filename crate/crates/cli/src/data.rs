//! Synthetic denoising corpus: clean signals are sums of random-phase
//! sinusoids, noisy signals add white plus amplitude-modulated noise
//! scaled to a requested SNR. Everything is deterministic per seed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seofp::nn::Tensor;
use serde::{Deserialize, Serialize};

pub const SAMPLE_RATE: u32 = 8000;

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub utterance_len: usize,
    pub sample_rate: u32,
    pub snr_levels_db: Vec<f32>,
    pub train: Vec<UtteranceMeta>,
    pub test: Vec<UtteranceMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UtteranceMeta {
    pub clean: String,
    pub noisy: String,
    pub snr_db: f32,
    pub measured_snr_db: f64,
}

fn write_f32(path: &Path, samples: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(samples.len() * 4);
    for s in samples {
        bytes.extend_from_slice(&s.to_le_bytes());
    }
    let mut f = fs::File::create(path).with_context(|| format!("create {}", path.display()))?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_f32(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).with_context(|| format!("read {}", path.display()))?;
    if bytes.len() % 4 != 0 {
        bail!("{} is not a whole number of f32 samples", path.display());
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn power(signal: &[f64]) -> f64 {
    signal.iter().map(|v| v * v).sum::<f64>() / signal.len() as f64
}

pub fn measured_snr_db(clean: &[f32], noisy: &[f32]) -> f64 {
    let clean64: Vec<f64> = clean.iter().map(|v| *v as f64).collect();
    let noise: Vec<f64> = clean
        .iter()
        .zip(noisy)
        .map(|(c, n)| (*n - *c) as f64)
        .collect();
    10.0 * (power(&clean64) / power(&noise)).log10()
}

/// One clean/noisy pair at the requested SNR. Both signals stay inside
/// [-1, 1]; if the mix peaks above 1 the pair is rescaled together, which
/// leaves the SNR untouched.
fn synthesize_pair(rng: &mut ChaCha8Rng, len: usize, snr_db: f32) -> (Vec<f32>, Vec<f32>) {
    let n_tones = rng.gen_range(3..=8);
    let mut clean = vec![0.0f64; len];
    for _ in 0..n_tones {
        let amp = rng.gen_range(0.2..1.0);
        let freq = rng.gen_range(0.01..0.45); // cycles per sample
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        for (t, c) in clean.iter_mut().enumerate() {
            *c += amp * (std::f64::consts::TAU * freq * t as f64 + phase).sin();
        }
    }
    let peak = clean.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    for c in clean.iter_mut() {
        *c *= 0.6 / peak;
    }

    // Stationary white noise plus a slowly amplitude-modulated component.
    let mod_freq = rng.gen_range(0.001..0.01);
    let mod_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut noise: Vec<f64> = (0..len)
        .map(|t| {
            let white = rng.gen_range(-1.0f64..1.0);
            let am = rng.gen_range(-1.0f64..1.0)
                * (0.5 + 0.5 * (std::f64::consts::TAU * mod_freq * t as f64 + mod_phase).sin());
            white + am
        })
        .collect();
    let target_noise_power = power(&clean) / 10f64.powf(snr_db as f64 / 10.0);
    let scale = (target_noise_power / power(&noise)).sqrt();
    for n in noise.iter_mut() {
        *n *= scale;
    }

    let mut noisy: Vec<f64> = clean.iter().zip(&noise).map(|(c, n)| c + n).collect();
    let peak = noisy.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if peak > 1.0 {
        for v in clean.iter_mut().chain(noisy.iter_mut()) {
            *v /= peak;
        }
    }
    (
        clean.iter().map(|v| *v as f32).collect(),
        noisy.iter().map(|v| *v as f32).collect(),
    )
}

pub fn generate(
    out_dir: &Path,
    seed: u64,
    count: usize,
    len: usize,
    snr_levels_db: &[f32],
    train_fraction: f64,
) -> Result<DatasetMeta> {
    if snr_levels_db.is_empty() {
        bail!("at least one SNR level is required");
    }
    for snr in snr_levels_db {
        if !snr.is_finite() {
            bail!("SNR level {snr} dB is not finite");
        }
    }
    if count == 0 || len == 0 {
        bail!("count and utterance length must be positive");
    }
    fs::create_dir_all(out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_train = ((count as f64 * train_fraction).round() as usize).clamp(1, count.max(1) - 1);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for i in 0..count {
        let snr_db = snr_levels_db[i % snr_levels_db.len()];
        let (clean, noisy) = synthesize_pair(&mut rng, len, snr_db);
        let measured = measured_snr_db(&clean, &noisy);
        if (measured - snr_db as f64).abs() > 0.1 {
            bail!("generated pair {i} missed the SNR target: {measured:.3} vs {snr_db}");
        }
        let clean_name = format!("clean_{i:04}.f32");
        let noisy_name = format!("noisy_{i:04}.f32");
        write_f32(&out_dir.join(&clean_name), &clean)?;
        write_f32(&out_dir.join(&noisy_name), &noisy)?;
        let meta = UtteranceMeta {
            clean: clean_name,
            noisy: noisy_name,
            snr_db,
            measured_snr_db: measured,
        };
        if i < n_train {
            train.push(meta);
        } else {
            test.push(meta);
        }
    }
    let meta = DatasetMeta {
        seed,
        utterance_len: len,
        sample_rate: SAMPLE_RATE,
        snr_levels_db: snr_levels_db.to_vec(),
        train,
        test,
    };
    let json = serde_json::to_string_pretty(&meta)?;
    fs::write(out_dir.join("meta.json"), json)?;
    Ok(meta)
}

pub fn load_meta(dir: &Path) -> Result<DatasetMeta> {
    let path = dir.join("meta.json");
    let json = fs::read_to_string(&path).with_context(|| format!("read {}", path.display()))?;
    Ok(serde_json::from_str(&json)?)
}

/// Noisy/clean utterance pairs as 1-channel tensors.
pub fn load_split(dir: &Path, entries: &[UtteranceMeta]) -> Result<Vec<(Tensor, Tensor)>> {
    entries
        .iter()
        .map(|u| {
            let noisy = read_f32(&dir.join(&u.noisy))?;
            let clean = read_f32(&dir.join(&u.clean))?;
            Ok((Tensor::from_samples(noisy), Tensor::from_samples(clean)))
        })
        .collect()
}

/// Cuts utterance pairs into non-overlapping frames for dense models.
pub fn frame_pairs(pairs: &[(Tensor, Tensor)], frame: usize) -> Vec<(Tensor, Tensor)> {
    let mut out = Vec::new();
    for (noisy, clean) in pairs {
        for (nc, cc) in noisy
            .data
            .chunks_exact(frame)
            .zip(clean.data.chunks_exact(frame))
        {
            out.push((
                Tensor::from_samples(nc.to_vec()),
                Tensor::from_samples(cc.to_vec()),
            ));
        }
    }
    out
}

pub fn dataset_paths(dir: &Path, meta: &DatasetMeta) -> Vec<PathBuf> {
    meta.train
        .iter()
        .chain(&meta.test)
        .flat_map(|u| [dir.join(&u.clean), dir.join(&u.noisy)])
        .collect()
}
