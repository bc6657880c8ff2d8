//! Bit-level views of IEEE-754 single-precision words.
//!
//! Everything downstream (quantization, the integer-add multiplier, the
//! packed format) manipulates raw 32-bit words through [`FloatBits`].
//! The crate only deals in normalized values and signed zero; subnormals,
//! infinities, and NaNs are rejected with distinct errors.

use crate::{Error, Result};

pub const SIGN_MASK: u32 = 0x8000_0000;
pub const EXP_MASK: u32 = 0x7F80_0000;
pub const FRAC_MASK: u32 = 0x007F_FFFF;
pub const EXP_SHIFT: u32 = 23;
/// Exponent bias of the binary32 format.
pub const BIAS: i32 = 127;

/// A 32-bit word viewed as (sign:1, exponent:8, fraction:23).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FloatBits {
    word: u32,
}

impl FloatBits {
    /// Splits a raw word into its three bit-field views. Lossless for every
    /// possible word.
    pub fn split(word: u32) -> Self {
        FloatBits { word }
    }

    pub fn from_f32(value: f32) -> Self {
        FloatBits {
            word: value.to_bits(),
        }
    }

    /// Recomposes the original word. `join(split(w)) == w` for all `w`.
    pub fn join(self) -> u32 {
        self.word
    }

    pub fn word(self) -> u32 {
        self.word
    }

    /// Sign flag: bit 31.
    pub fn sign(self) -> u32 {
        self.word >> 31
    }

    /// Biased exponent: bits 30-23, in `[0, 255]`.
    pub fn exponent(self) -> u32 {
        (self.word & EXP_MASK) >> EXP_SHIFT
    }

    /// Fraction field: bits 22-0.
    pub fn fraction(self) -> u32 {
        self.word & FRAC_MASK
    }

    /// Fraction bit `i` for `i` in `[0, 22]`.
    pub fn bit(self, i: u32) -> u32 {
        debug_assert!(i <= 22);
        (self.word >> i) & 1
    }

    /// Builds a word from its three fields.
    pub fn from_fields(sign: u32, exponent: u32, fraction: u32) -> Self {
        debug_assert!(sign <= 1 && exponent <= 255 && fraction <= FRAC_MASK);
        FloatBits {
            word: (sign << 31) | (exponent << EXP_SHIFT) | fraction,
        }
    }

    /// True iff exponent and fraction bits are all zero; the sign is
    /// ignored, so both +0 and -0 qualify.
    pub fn is_zero_pattern(self) -> bool {
        self.word & !SIGN_MASK == 0
    }

    pub fn is_inf_or_nan(self) -> bool {
        self.exponent() == 255
    }

    pub fn is_subnormal(self) -> bool {
        self.exponent() == 0 && self.fraction() != 0
    }

    /// Rejects the patterns the SEOFP scheme does not handle.
    pub fn check_normal_or_zero(self) -> Result<Self> {
        if self.is_inf_or_nan() {
            return Err(Error::InfNan(self.word));
        }
        if self.is_subnormal() {
            return Err(Error::Subnormal(self.word));
        }
        Ok(self)
    }

    /// Sign factor, significand in `[1, 2)`, and unbiased exponent.
    pub fn value_parts(self) -> Result<ValueParts> {
        self.check_normal_or_zero()?;
        let sign_factor = if self.sign() == 0 { 1 } else { -1 };
        let significand = 1.0 + self.fraction() as f64 / (1u64 << 23) as f64;
        Ok(ValueParts {
            sign_factor,
            significand,
            unbiased_exponent: self.exponent() as i32 - BIAS,
        })
    }

    /// Decimal value of the word: `(-1)^sign * significand * 2^(e - 127)`.
    /// The all-zero exponent-and-fraction pattern decodes to signed zero.
    pub fn decode_value(self) -> Result<f32> {
        if self.is_zero_pattern() {
            return Ok(if self.sign() == 0 { 0.0 } else { -0.0 });
        }
        let parts = self.value_parts()?;
        let magnitude = parts.significand * (parts.unbiased_exponent as f64).exp2();
        Ok((parts.sign_factor as f64 * magnitude) as f32)
    }

    /// Maps -0 to +0, leaving every other word untouched.
    pub fn canonicalize_zero(self) -> Self {
        if self.is_zero_pattern() {
            FloatBits { word: 0 }
        } else {
            self
        }
    }
}

/// Decoded form of a normalized (or zero) word.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueParts {
    /// +1 or -1.
    pub sign_factor: i32,
    /// `1 + sum(bit[i] * 2^(i-23))`, in `[1, 2)`.
    pub significand: f64,
    /// Stored exponent minus the bias, in `[-127, 128]`.
    pub unbiased_exponent: i32,
}
