//! Multiplier replacement: the reference float multiplier, the 63/64
//! bias-split operand adjustments, and the integer-add product kernel.
//!
//! The trick: subtract 64 from every input exponent and 63 from every
//! parameter exponent up front. Since the parameter fraction is zero and
//! both adjusted exponent fields keep their MSB clear, adding the two raw
//! 32-bit words then produces the true IEEE product word. The sign XOR
//! falls out of the add with the carry out of bit 31 dropped; the bias
//! subtraction is already paid for by the two pre-shifts.

use crate::bitcore::{FloatBits, EXP_SHIFT, FRAC_MASK, SIGN_MASK};
use crate::{Error, Result};

/// Exponent pre-shift applied to model parameters (division by 2^63).
pub const PARAM_EXP_SHIFT: u32 = 63;
/// Exponent pre-shift applied to layer inputs (division by 2^64).
pub const INPUT_EXP_SHIFT: u32 = 64;

/// Input word with its exponent pre-decremented by 64; fraction untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdjustedInput {
    word: u32,
}

impl AdjustedInput {
    pub fn word(self) -> u32 {
        self.word
    }
}

/// Parameter word with zero fraction and exponent pre-decremented by 63.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdjustedParam {
    word: u32,
}

impl AdjustedParam {
    pub fn word(self) -> u32 {
        self.word
    }
}

/// 32-bit IEEE pattern of a product.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProductWord {
    word: u32,
}

impl ProductWord {
    pub fn word(self) -> u32 {
        self.word
    }

    pub fn to_f32(self) -> f32 {
        f32::from_bits(self.word)
    }
}

/// Reference single-precision multiplier: sign XOR, 9-bit exponent addition
/// minus the bias, 24x24 significand multiply with conditional
/// renormalization. The significand product is truncated; that is exact for
/// every in-scope multiply because one operand's fraction is zero.
/// Zero operands short-circuit to +0, matching the zero-detect circuit.
pub fn reference_multiply(a: u32, b: u32) -> Result<ProductWord> {
    let fa = FloatBits::split(a).check_normal_or_zero()?;
    let fb = FloatBits::split(b).check_normal_or_zero()?;
    if fa.is_zero_pattern() || fb.is_zero_pattern() {
        return Ok(ProductWord { word: 0 });
    }
    let sign = fa.sign() ^ fb.sign();
    // 9-bit temporary: [0, 510] minus the bias.
    let mut exp = fa.exponent() as i32 + fb.exponent() as i32 - 127;
    // 24-bit significands; the 48-bit product lies in [2^46, 2^48).
    let sig_a = (1u64 << 23) | fa.fraction() as u64;
    let sig_b = (1u64 << 23) | fb.fraction() as u64;
    let prod = sig_a * sig_b;
    let frac = if prod >= 1u64 << 47 {
        // Product significand >= 2: halve it and carry into the exponent.
        exp += 1;
        (prod >> 24) as u32 & FRAC_MASK
    } else {
        (prod >> 23) as u32 & FRAC_MASK
    };
    if !(1..=254).contains(&exp) {
        return Err(Error::ProductExponentRange(exp));
    }
    Ok(ProductWord {
        word: (sign << 31) | ((exp as u32) << EXP_SHIFT) | frac,
    })
}

/// Pre-shifts a zero-fraction parameter word by -63 exponent steps.
///
/// Returns the adjusted word plus a flag marking whether the value was
/// flushed to +0 because its exponent underflowed the normal range.
pub fn adjust_parameter(p: u32) -> Result<(AdjustedParam, bool)> {
    let bits = FloatBits::split(p).check_normal_or_zero()?;
    if bits.is_zero_pattern() {
        return Ok((AdjustedParam { word: 0 }, false));
    }
    if bits.fraction() != 0 {
        return Err(Error::FractionNotZero(p));
    }
    let exp = bits.exponent();
    if exp > 127 {
        return Err(Error::MagnitudeAboveOne(p));
    }
    if exp <= PARAM_EXP_SHIFT {
        return Ok((AdjustedParam { word: 0 }, true));
    }
    let word = (p & SIGN_MASK) | ((exp - PARAM_EXP_SHIFT) << EXP_SHIFT);
    Ok((AdjustedParam { word }, false))
}

/// Pre-shifts an input word by -64 exponent steps; sign and fraction pass
/// through. Subnormal inputs count as flushed rather than erroring, since
/// they already sit below every representable adjusted magnitude.
pub fn adjust_input(a: u32) -> Result<(AdjustedInput, bool)> {
    let bits = FloatBits::split(a);
    if bits.is_inf_or_nan() {
        return Err(Error::InfNan(a));
    }
    if bits.is_zero_pattern() {
        return Ok((AdjustedInput { word: 0 }, false));
    }
    let exp = bits.exponent();
    if exp > 127 || (exp == 127 && bits.fraction() != 0) {
        return Err(Error::MagnitudeAboveOne(a));
    }
    if exp <= INPUT_EXP_SHIFT {
        return Ok((AdjustedInput { word: 0 }, true));
    }
    let word = (a & (SIGN_MASK | FRAC_MASK)) | ((exp - INPUT_EXP_SHIFT) << EXP_SHIFT);
    Ok((AdjustedInput { word }, false))
}

/// One integer addition on raw words stands in for the float multiply.
///
/// Zero operands take the OR/OR/NAND detect path and yield +0. Otherwise
/// the raw sum (carry out of bit 31 discarded) is the IEEE product word of
/// the unadjusted operands.
pub fn seofp_multiply(a: AdjustedInput, b: AdjustedParam) -> ProductWord {
    if a.word & !SIGN_MASK == 0 || b.word & !SIGN_MASK == 0 {
        return ProductWord { word: 0 };
    }
    // Both adjusted exponents have a clear MSB, so the exponent addition
    // can never carry into bit 31; only the sign pair touches it.
    debug_assert!(
        (a.word >> EXP_SHIFT) & 0xFF <= 63 && (b.word >> EXP_SHIFT) & 0xFF <= 64,
        "adjusted exponent out of range: a={:#010x} b={:#010x}",
        a.word,
        b.word
    );
    ProductWord {
        word: a.word.wrapping_add(b.word),
    }
}

/// Left-to-right sum of integer-add products with ordinary float addition.
pub fn mac_row(inputs: &[AdjustedInput], params: &[AdjustedParam]) -> Result<f32> {
    if inputs.len() != params.len() {
        return Err(Error::LengthMismatch(inputs.len(), params.len()));
    }
    let mut acc = 0.0f32;
    for (a, p) in inputs.iter().zip(params) {
        acc += seofp_multiply(*a, *p).to_f32();
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reference_multiply_exponent_path() {
        // 32.0 x 8.0 = 256.0: 10000111 = 10000100 + 10000010 - 01111111.
        let c = reference_multiply(32.0f32.to_bits(), 8.0f32.to_bits()).unwrap();
        assert_eq!(c.to_f32(), 256.0);
        assert_eq!(FloatBits::split(c.word()).exponent(), 0b1000_0111);
    }

    #[test]
    fn reference_multiply_worked_example() {
        let c = reference_multiply((-0.8765f32).to_bits(), (-0.125f32).to_bits()).unwrap();
        assert_eq!(c.to_f32(), 0.109_562_5f32);
        assert_eq!(c.word(), (0.109_562_5f32).to_bits());
    }

    #[test]
    fn reference_multiply_identity() {
        for v in [0.1234f32, -0.5, 1.0, -1.0, 3.75e-20, -9.5e17] {
            let c = reference_multiply(v.to_bits(), 1.0f32.to_bits()).unwrap();
            assert_eq!(c.word(), v.to_bits());
        }
    }

    #[test]
    fn reference_multiply_zero_detect() {
        let c = reference_multiply(0u32, (-0.5f32).to_bits()).unwrap();
        assert_eq!(c.word(), 0);
        let c = reference_multiply((-0.5f32).to_bits(), 0x8000_0000).unwrap();
        assert_eq!(c.word(), 0);
    }

    #[test]
    fn reference_multiply_range_errors() {
        let big = 1.5e38f32;
        assert!(matches!(
            reference_multiply(big.to_bits(), big.to_bits()),
            Err(Error::ProductExponentRange(_))
        ));
        let tiny = 1.5e-38f32;
        assert!(matches!(
            reference_multiply(tiny.to_bits(), tiny.to_bits()),
            Err(Error::ProductExponentRange(_))
        ));
    }

    #[test]
    fn adjust_parameter_cases() {
        // 1.0: biased exponent 127 - 63 = 64.
        let (p, flushed) = adjust_parameter(1.0f32.to_bits()).unwrap();
        assert!(!flushed);
        assert_eq!(FloatBits::split(p.word()).exponent(), 64);
        // Zero passes through.
        let (z, flushed) = adjust_parameter(0).unwrap();
        assert_eq!((z.word(), flushed), (0, false));
        // -0 canonicalizes to +0.
        let (z, _) = adjust_parameter(0x8000_0000).unwrap();
        assert_eq!(z.word(), 0);
        // -0.125 keeps its sign, exponent 124 - 63 = 61.
        let (b3, _) = adjust_parameter((-0.125f32).to_bits()).unwrap();
        let bits = FloatBits::split(b3.word());
        assert_eq!((bits.sign(), bits.exponent(), bits.fraction()), (1, 61, 0));
    }

    #[test]
    fn adjust_parameter_errors_and_flush() {
        assert!(matches!(
            adjust_parameter(0.1234f32.to_bits()),
            Err(Error::FractionNotZero(_))
        ));
        assert!(matches!(
            adjust_parameter(2.0f32.to_bits()),
            Err(Error::MagnitudeAboveOne(_))
        ));
        // |p| = 2^-64 < 2^-63 underflows the adjusted range.
        let tiny = 2f32.powi(-64);
        let (p, flushed) = adjust_parameter(tiny.to_bits()).unwrap();
        assert!(flushed);
        assert_eq!(p.word(), 0);
    }

    #[test]
    fn adjust_input_cases() {
        // 1.0: exponent 127 - 64 = 63.
        let (a, flushed) = adjust_input(1.0f32.to_bits()).unwrap();
        assert!(!flushed);
        assert_eq!(FloatBits::split(a.word()).exponent(), 63);
        // -0.8765 keeps sign and fraction, exponent drops 64.
        let src = FloatBits::from_f32(-0.8765);
        let (a3, _) = adjust_input(src.join()).unwrap();
        let bits = FloatBits::split(a3.word());
        assert_eq!(bits.sign(), src.sign());
        assert_eq!(bits.fraction(), src.fraction());
        assert_eq!(bits.exponent(), src.exponent() - 64);
        // Zero maps to +0.
        assert_eq!(adjust_input(0x8000_0000).unwrap(), adjust_input(0).unwrap());
        // Magnitude above one rejected.
        assert!(matches!(
            adjust_input(1.5f32.to_bits()),
            Err(Error::MagnitudeAboveOne(_))
        ));
        // Subnormal input flushes instead of erroring.
        let (a, flushed) = adjust_input(0x0040_0000).unwrap();
        assert!(flushed);
        assert_eq!(a.word(), 0);
    }

    #[test]
    fn seofp_worked_example() {
        // Worked example: adjusted(-0.8765) + adjusted(-0.125) equals the word of
        // the float product 0.1095625.
        let (a, _) = adjust_input((-0.8765f32).to_bits()).unwrap();
        let (b, _) = adjust_parameter((-0.125f32).to_bits()).unwrap();
        let c = seofp_multiply(a, b);
        assert_eq!(c.word(), (0.109_562_5f32).to_bits());
        assert_eq!(c.word(), (-0.8765f32 * -0.125f32).to_bits());
    }

    #[test]
    fn seofp_zero_operand_rule() {
        let (a, _) = adjust_input(0.75f32.to_bits()).unwrap();
        let (zero_param, _) = adjust_parameter(0).unwrap();
        assert_eq!(seofp_multiply(a, zero_param).word(), 0);
        let (zero_input, _) = adjust_input(0).unwrap();
        let (b, _) = adjust_parameter(0.5f32.to_bits()).unwrap();
        assert_eq!(seofp_multiply(zero_input, b).word(), 0);
    }

    #[test]
    fn sign_truth_table() {
        // The four sign pairs produce result signs 0, 1, 1, 0 via
        // add-with-carry-drop.
        for (sa, sb, expect) in [(0u32, 0u32, 0u32), (0, 1, 1), (1, 0, 1), (1, 1, 0)] {
            let a_val = if sa == 0 { 0.75f32 } else { -0.75 };
            let b_val = if sb == 0 { 0.25f32 } else { -0.25 };
            let (a, _) = adjust_input(a_val.to_bits()).unwrap();
            let (b, _) = adjust_parameter(b_val.to_bits()).unwrap();
            assert_eq!(seofp_multiply(a, b).word() >> 31, expect);
        }
    }

    #[test]
    fn bit_exact_sweep_small() {
        // Smaller cousin of the acceptance sweep: every legal parameter
        // exponent x 500 random inputs, bitwise against the reference
        // multiplier and the native multiply.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let inputs: Vec<u32> = (0..500)
            .map(|_| {
                let exp = rng.gen_range(65u32..=126);
                let frac = rng.gen_range(0u32..=FRAC_MASK);
                let sign = rng.gen_range(0u32..=1);
                (sign << 31) | (exp << EXP_SHIFT) | frac
            })
            .collect();
        for sign in 0..2u32 {
            for exp in 64u32..=127 {
                let b = (sign << 31) | (exp << EXP_SHIFT);
                let (bp, flushed) = adjust_parameter(b).unwrap();
                assert!(!flushed);
                for &a in &inputs {
                    let (ap, flushed) = adjust_input(a).unwrap();
                    assert!(!flushed);
                    let got = seofp_multiply(ap, bp).word();
                    let reference = reference_multiply(a, b).unwrap().word();
                    let native = (f32::from_bits(a) * f32::from_bits(b)).to_bits();
                    assert_eq!(got, reference, "a={a:#010x} b={b:#010x}");
                    assert_eq!(got, native, "a={a:#010x} b={b:#010x}");
                }
            }
        }
    }

    #[test]
    fn mac_row_cases() {
        assert_eq!(mac_row(&[], &[]).unwrap(), 0.0);
        let (a, _) = adjust_input((-0.8765f32).to_bits()).unwrap();
        let (b, _) = adjust_parameter((-0.125f32).to_bits()).unwrap();
        assert_eq!(mac_row(&[a], &[b]).unwrap(), 0.109_562_5);
        assert!(matches!(
            mac_row(&[a], &[]),
            Err(Error::LengthMismatch(1, 0))
        ));
    }

    #[test]
    fn mac_row_matches_native_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let xs: Vec<f32> = (0..16).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            let ws: Vec<f32> = (0..16)
                .map(|_| {
                    let exp = rng.gen_range(110u32..=126);
                    let sign = rng.gen_range(0u32..=1);
                    f32::from_bits((sign << 31) | (exp << EXP_SHIFT))
                })
                .collect();
            let adj_x: Vec<AdjustedInput> = xs
                .iter()
                .map(|x| adjust_input(x.to_bits()).unwrap().0)
                .collect();
            let adj_w: Vec<AdjustedParam> = ws
                .iter()
                .map(|w| adjust_parameter(w.to_bits()).unwrap().0)
                .collect();
            let got = mac_row(&adj_x, &adj_w).unwrap();
            let mut native = 0.0f32;
            for (x, w) in xs.iter().zip(&ws) {
                native += x * w;
            }
            assert_eq!(got.to_bits(), native.to_bits());
        }
    }

    proptest! {
        // Bit-exactness against the native multiply for random legal pairs.
        #[test]
        fn bit_exact_random(
            sa in 0u32..2, ea in 65u32..=126, fa in 0u32..=FRAC_MASK,
            sb in 0u32..2, eb in 64u32..=127,
        ) {
            let a = (sa << 31) | (ea << EXP_SHIFT) | fa;
            let b = (sb << 31) | (eb << EXP_SHIFT);
            let (ap, _) = adjust_input(a).unwrap();
            let (bp, _) = adjust_parameter(b).unwrap();
            let got = seofp_multiply(ap, bp).word();
            prop_assert_eq!(got, (f32::from_bits(a) * f32::from_bits(b)).to_bits());
            prop_assert_eq!(got, reference_multiply(a, b).unwrap().word());
        }
    }
}
