//! Sign-exponent-only floating-point (SEOFP) networks.
//!
//! Small regression networks whose parameters carry only the IEEE-754 sign
//! and exponent bits. Training quantizes the fraction away between
//! iterations; inference then replaces every floating-point multiplication
//! with a single 32-bit integer addition that reproduces the float result
//! bit for bit.
//!
//! Module layout:
//! - [`bitcore`]: lossless decomposition/valuation of `f32` bit patterns.
//! - [`quant`]: fraction quantization (rounding-like and direct removal)
//!   and post-training exponent quantization.
//! - [`arith`]: the reference multiplier, the 63/64 bias-split operand
//!   adjustments, and the integer-add product kernel.
//! - [`nn`]: dense/conv1d training with quantize-in-the-loop, plus the
//!   adjusted inference engine.
//! - [`pack`]: bit-packed `.seofp` model serialization.

pub mod arith;
pub mod bitcore;
pub mod nn;
pub mod pack;
pub mod quant;

/// Errors shared across the crate. Each rejected pattern class gets its own
/// variant so callers can tell them apart.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("pattern {0:#010x} is an infinity or NaN")]
    InfNan(u32),
    #[error("pattern {0:#010x} is subnormal")]
    Subnormal(u32),
    #[error("retained bit-width {0} outside [9, 32]")]
    BadWidth(u32),
    #[error("rounding pattern {0:#010x} would overflow the exponent to the infinity code")]
    ExponentOverflow(u32),
    #[error("product exponent {0} fell outside the normal range [1, 254]")]
    ProductExponentRange(i32),
    #[error("pattern {0:#010x} has magnitude above 1")]
    MagnitudeAboveOne(u32),
    #[error("pattern {0:#010x} has nonzero fraction bits")]
    FractionNotZero(u32),
    #[error("layer {layer} {tensor} parameter {index}: {source}")]
    Param {
        layer: usize,
        tensor: &'static str,
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("model has no parameters")]
    EmptyModel,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("length mismatch: {0} inputs vs {1} parameters")]
    LengthMismatch(usize, usize),
    #[error("training loss diverged to NaN at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("bad magic {0:02x?}, expected \"SEOF\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("payload truncated: needed {needed} more byte(s)")]
    Truncated { needed: usize },
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("encoding/model mismatch: {0}")]
    EncodingMismatch(String),
    #[error("baseline size is zero")]
    ZeroBaseline,
}

pub type Result<T> = std::result::Result<T, Error>;
