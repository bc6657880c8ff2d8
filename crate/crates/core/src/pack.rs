//! Bit-packed `.seofp` model serialization.
//!
//! Layout (multi-byte header integers little-endian, payload bitstreams
//! MSB-first and byte-aligned per tensor):
//!
//! ```text
//! magic "SEOF" | version u8
//! layer_count u32
//! per layer:
//!   kind u8 (0 dense, 1 conv1d) | shape u32s | activation u8
//!   sigma' u32       -- f32 bits of sigma * 2^64
//!   weights tensor, bias tensor:
//!     encoding u8 (0 full32, 1 se9, 2 codebook)
//!     codebook only: width u8, min_exp i16
//!     count u32 | payload ceil(count * bits / 8) bytes
//! ```
//!
//! Bit cost per parameter: 32 (full32), 9 (sign-exponent-9), or
//! `width + 1` (codebook), which is what realizes the published
//! compression ratios.

use crate::bitcore::FloatBits;
use crate::nn::{Activation, Layer, LayerKind, Model};
use crate::quant::{self, ExponentCodebook};
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SEOF";
pub const VERSION: u8 = 1;
/// Conventional file extension for packed models.
pub const EXTENSION: &str = "seofp";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    /// Raw 32-bit words.
    Full32,
    /// Sign and exponent bits only; requires fraction-free parameters.
    SignExponent9,
    /// Sign plus exponent-offset code from the model-wide codebook.
    Codebook,
}

impl Encoding {
    fn tag(self) -> u8 {
        match self {
            Encoding::Full32 => 0,
            Encoding::SignExponent9 => 1,
            Encoding::Codebook => 2,
        }
    }
}

struct BitWriter {
    bytes: Vec<u8>,
    bit: u32,
}

impl BitWriter {
    fn new() -> Self {
        BitWriter {
            bytes: Vec::new(),
            bit: 0,
        }
    }

    /// Appends the low `width` bits of `value`, most significant first.
    fn push(&mut self, value: u32, width: u32) {
        for i in (0..width).rev() {
            if self.bit == 0 {
                self.bytes.push(0);
            }
            let b = (value >> i) & 1;
            let last = self.bytes.len() - 1;
            self.bytes[last] |= (b as u8) << (7 - self.bit);
            self.bit = (self.bit + 1) % 8;
        }
    }

    fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    bit: u32,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        BitReader {
            bytes,
            pos: 0,
            bit: 0,
        }
    }

    fn read(&mut self, width: u32) -> Result<u32> {
        let mut out = 0u32;
        for _ in 0..width {
            if self.pos >= self.bytes.len() {
                return Err(Error::Truncated { needed: 1 });
            }
            let b = (self.bytes[self.pos] >> (7 - self.bit)) & 1;
            out = (out << 1) | b as u32;
            self.bit += 1;
            if self.bit == 8 {
                self.bit = 0;
                self.pos += 1;
            }
        }
        Ok(out)
    }
}

fn write_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                needed: self.pos + n - self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i16(&mut self) -> Result<i16> {
        Ok(i16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
}

fn pack_tensor(
    out: &mut Vec<u8>,
    params: &[f32],
    encoding: Encoding,
    codebook: Option<&ExponentCodebook>,
) -> Result<()> {
    out.push(encoding.tag());
    let bits_per_param = match encoding {
        Encoding::Full32 => 32,
        Encoding::SignExponent9 => 9,
        Encoding::Codebook => {
            let cb = codebook.expect("codebook encoding requires a codebook");
            out.push(cb.width as u8);
            out.extend_from_slice(&(cb.min_exp as i16).to_le_bytes());
            cb.bits_per_param()
        }
    };
    write_u32(out, params.len() as u32);
    let mut writer = BitWriter::new();
    for p in params {
        let word = p.to_bits();
        match encoding {
            Encoding::Full32 => writer.push(word, 32),
            Encoding::SignExponent9 => {
                let bits = FloatBits::split(word).check_normal_or_zero()?;
                if bits.fraction() != 0 {
                    return Err(Error::EncodingMismatch(format!(
                        "sign-exponent-9 needs zero fractions, found {word:#010x}"
                    )));
                }
                writer.push(word >> 23, 9);
            }
            Encoding::Codebook => {
                let cb = codebook.unwrap();
                let (sign, code) = cb.encode(word)?;
                writer.push(sign, 1);
                writer.push(code, cb.width);
            }
        }
    }
    let payload = writer.into_bytes();
    debug_assert_eq!(
        payload.len(),
        (params.len() * bits_per_param as usize).div_ceil(8)
    );
    out.extend_from_slice(&payload);
    Ok(())
}

/// Serializes a model. The codebook encoding derives one model-wide
/// exponent codebook and stores it in every tensor header.
pub fn pack(model: &Model, encoding: Encoding) -> Result<Vec<u8>> {
    model.validate()?;
    let codebook = match encoding {
        Encoding::Codebook => Some(quant::exponent_quantize(model)?.codebook),
        _ => None,
    };
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    write_u32(&mut out, model.layers.len() as u32);
    for layer in &model.layers {
        match layer.kind {
            LayerKind::Dense {
                in_units,
                out_units,
            } => {
                out.push(0);
                write_u32(&mut out, in_units as u32);
                write_u32(&mut out, out_units as u32);
            }
            LayerKind::Conv1d {
                filters,
                kernel,
                in_channels,
            } => {
                out.push(1);
                write_u32(&mut out, filters as u32);
                write_u32(&mut out, kernel as u32);
                write_u32(&mut out, in_channels as u32);
            }
        }
        out.push(match layer.activation {
            Activation::Identity => 0,
            Activation::Clamp => 1,
        });
        let sigma_prime = layer.sigma * 2f32.powi(64);
        write_u32(&mut out, sigma_prime.to_bits());
        pack_tensor(&mut out, &layer.weights, encoding, codebook.as_ref())?;
        pack_tensor(&mut out, &layer.bias, encoding, codebook.as_ref())?;
    }
    Ok(out)
}

fn unpack_tensor(cur: &mut Cursor, expect_count: usize) -> Result<Vec<f32>> {
    let encoding = cur.u8()?;
    let codebook = if encoding == 2 {
        let width = cur.u8()? as u32;
        let min_exp = cur.i16()? as i32;
        if width == 0 || width > 8 {
            return Err(Error::CorruptHeader(format!("codebook width {width}")));
        }
        Some(ExponentCodebook {
            // max_exp is not stored; reconstruct the loosest consistent one.
            max_exp: min_exp + (1 << width) - 2,
            min_exp,
            width,
        })
    } else {
        None
    };
    let count = cur.u32()? as usize;
    if count != expect_count {
        return Err(Error::CorruptHeader(format!(
            "tensor count {count} does not match layer shape ({expect_count})"
        )));
    }
    let bits_per_param = match encoding {
        0 => 32,
        1 => 9,
        2 => codebook.as_ref().unwrap().bits_per_param(),
        other => {
            return Err(Error::CorruptHeader(format!(
                "unknown encoding tag {other}"
            )))
        }
    };
    let payload = cur.take((count * bits_per_param as usize).div_ceil(8))?;
    let mut reader = BitReader::new(payload);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let word = match encoding {
            0 => reader.read(32)?,
            1 => reader.read(9)? << 23,
            _ => {
                let cb = codebook.as_ref().unwrap();
                let sign = reader.read(1)?;
                let code = reader.read(cb.width)?;
                cb.decode(sign, code)?
            }
        };
        out.push(f32::from_bits(word));
    }
    Ok(out)
}

/// Reconstructs a model from packed bytes; parameter words are exact.
pub fn unpack(bytes: &[u8]) -> Result<Model> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = cur.u8()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let layer_count = cur.u32()? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let kind = match cur.u8()? {
            0 => LayerKind::Dense {
                in_units: cur.u32()? as usize,
                out_units: cur.u32()? as usize,
            },
            1 => LayerKind::Conv1d {
                filters: cur.u32()? as usize,
                kernel: cur.u32()? as usize,
                in_channels: cur.u32()? as usize,
            },
            other => return Err(Error::CorruptHeader(format!("unknown layer kind {other}"))),
        };
        let activation = match cur.u8()? {
            0 => Activation::Identity,
            1 => Activation::Clamp,
            other => {
                return Err(Error::CorruptHeader(format!(
                    "unknown activation tag {other}"
                )))
            }
        };
        let sigma_prime = f32::from_bits(cur.u32()?);
        let sigma = sigma_prime / 2f32.powi(64);
        if !sigma.is_finite() || sigma <= 0.0 {
            return Err(Error::CorruptHeader(format!(
                "normalization scale {sigma} out of range"
            )));
        }
        let weights = unpack_tensor(&mut cur, kind.weight_count())?;
        let bias = unpack_tensor(&mut cur, kind.bias_count())?;
        layers.push(Layer {
            kind,
            activation,
            weights,
            bias,
            sigma,
        });
    }
    let model = Model { layers };
    model.validate()?;
    Ok(model)
}

/// Signed percentage change from the baseline size; negative is smaller.
pub fn compression_ratio(packed_size: u64, baseline_size: u64) -> Result<f64> {
    if baseline_size == 0 {
        return Err(Error::ZeroBaseline);
    }
    Ok((packed_size as f64 - baseline_size as f64) / baseline_size as f64 * 100.0)
}

/// Raw 32-bit parameter payload of the unquantized model, in bytes.
pub fn baseline_param_bytes(model: &Model) -> u64 {
    model.param_count() as u64 * 4
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tests_support::single_param_model;
    use proptest::prelude::*;

    fn sample_model() -> Model {
        let mut model = single_param_model(0.0);
        model.layers[0].kind = LayerKind::Dense {
            in_units: 3,
            out_units: 2,
        };
        model.layers[0].weights = vec![0.5, -0.25, 0.0, -0.0, 0.125, -1.0];
        model.layers[0].bias = vec![0.0625, -0.5];
        model.layers[0].sigma = 1.5;
        model
    }

    #[test]
    fn roundtrip_all_encodings() {
        let model = sample_model();
        for encoding in [
            Encoding::Full32,
            Encoding::SignExponent9,
            Encoding::Codebook,
        ] {
            let bytes = pack(&model, encoding).unwrap();
            let back = unpack(&bytes).unwrap();
            assert_eq!(back.layers.len(), 1);
            assert_eq!(back.layers[0].kind, model.layers[0].kind);
            assert_eq!(
                back.layers[0].sigma.to_bits(),
                model.layers[0].sigma.to_bits()
            );
            for (a, b) in model.layers[0]
                .weights
                .iter()
                .chain(&model.layers[0].bias)
                .zip(back.layers[0].weights.iter().chain(&back.layers[0].bias))
            {
                assert_eq!(a.to_bits(), b.to_bits(), "{encoding:?}");
            }
        }
    }

    #[test]
    fn full32_allows_fractions_se9_rejects_them() {
        let model = single_param_model(0.1234);
        assert!(pack(&model, Encoding::Full32).is_ok());
        assert!(matches!(
            pack(&model, Encoding::SignExponent9),
            Err(Error::EncodingMismatch(_))
        ));
    }

    #[test]
    fn empty_layer_list_is_header_only() {
        let model = Model { layers: vec![] };
        let bytes = pack(&model, Encoding::Full32).unwrap();
        assert_eq!(bytes.len(), 4 + 1 + 4);
        let back = unpack(&bytes).unwrap();
        assert!(back.layers.is_empty());
    }

    #[test]
    fn corrupt_inputs_distinct_errors() {
        let bytes = pack(&sample_model(), Encoding::Full32).unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] ^= 0xFF;
        assert!(matches!(unpack(&bad_magic), Err(Error::BadMagic(_))));

        let mut bad_version = bytes.clone();
        bad_version[4] = 99;
        assert!(matches!(
            unpack(&bad_version),
            Err(Error::UnsupportedVersion(99))
        ));

        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(unpack(truncated), Err(Error::Truncated { .. })));

        let mut bad_kind = bytes.clone();
        bad_kind[9] = 7;
        assert!(matches!(unpack(&bad_kind), Err(Error::CorruptHeader(_))));
    }

    #[test]
    fn payload_size_law() {
        // Measured payload bits equal count * bits-per-param exactly
        // (tensor headers aside).
        let mut model = sample_model();
        model.layers[0].kind = LayerKind::Dense {
            in_units: 101,
            out_units: 1,
        };
        model.layers[0].weights = (0..101)
            .map(|i| {
                if i % 5 == 0 {
                    0.0
                } else {
                    2f32.powi(-((i % 7) as i32) - 1)
                }
            })
            .collect();
        model.layers[0].bias = vec![0.0];
        let fixed = 4 + 1 + 4 + (1 + 4 + 4 + 1 + 4); // file + layer headers
        let tensor_hdr = 1 + 4;
        let bytes = pack(&model, Encoding::SignExponent9).unwrap();
        let payload = bytes.len() - fixed - 2 * tensor_hdr;
        assert_eq!(payload, (101 * 9 + 7) / 8 + (9 + 7) / 8);

        let bytes = pack(&model, Encoding::Codebook).unwrap();
        let cb = quant::exponent_quantize(&model).unwrap().codebook;
        let bits = cb.bits_per_param() as usize;
        let payload = bytes.len() - fixed - 2 * (tensor_hdr + 3);
        assert_eq!(payload, (101 * bits + 7) / 8 + (bits + 7) / 8);
    }

    #[test]
    fn compression_ratio_values() {
        // Published size pairs for this scheme, in KB.
        let r = compression_ratio(3_162, 11_242).unwrap();
        assert!((r + 71.87).abs() < 0.02, "{r}");
        let r = compression_ratio(2_108, 11_242).unwrap();
        assert!((r + 81.25).abs() < 0.01, "{r}");
        assert_eq!(compression_ratio(42, 42).unwrap(), 0.0);
        assert!(matches!(compression_ratio(1, 0), Err(Error::ZeroBaseline)));
    }

    proptest! {
        // Round-trip word identity across encodings on random
        // power-of-two parameter sets.
        #[test]
        fn roundtrip_random_pow2_models(
            words in proptest::collection::vec((any::<bool>(), 64u32..=127), 2..50),
        ) {
            let n = words.len();
            let mut model = single_param_model(0.0);
            model.layers[0].kind = LayerKind::Dense { in_units: n, out_units: 1 };
            model.layers[0].weights = words
                .iter()
                .map(|&(s, e)| f32::from_bits(((s as u32) << 31) | (e << 23)))
                .collect();
            model.layers[0].bias = vec![0.0];
            for encoding in [Encoding::Full32, Encoding::SignExponent9, Encoding::Codebook] {
                let back = unpack(&pack(&model, encoding).unwrap()).unwrap();
                for (a, b) in model.layers[0].weights.iter().zip(&back.layers[0].weights) {
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }
}
