//! Extended-precision scalars for the Laplace recursion.
//!
//! The recursion sums exp-over-poly contributions whose magnitudes can exceed the
//! final volume by ten or more orders of magnitude, so plain `f64` loses most of its
//! digits to cancellation. Two types cover that:
//!
//! * [`Dd`]: an unevaluated sum `hi + lo` of two doubles (~106 bit mantissa).
//! * [`Wide`]: a sign-carrying `Dd` mantissa with a separate binary exponent, i.e. a
//!   log2-scaled value. Products of many small denominator entries never underflow.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Exact power of two for `k` in the normal exponent range.
#[inline]
fn pow2(k: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&k));
    f64::from_bits(((1023 + k) as u64) << 52)
}

/// `x * 2^k` without intermediate overflow for moderate `k`.
pub fn ldexp(mut x: f64, mut k: i32) -> f64 {
    while k > 1000 {
        x *= pow2(1000);
        k -= 1000;
    }
    while k < -1000 {
        x *= pow2(-1000);
        k += 1000;
    }
    x * pow2(k)
}

/// Split a finite nonzero `x` into `f * 2^e` with `0.5 <= |f| < 1`.
pub fn frexp(x: f64) -> (f64, i32) {
    if x == 0.0 || !x.is_finite() {
        return (x, 0);
    }
    let bits = x.to_bits();
    let exp_bits = ((bits >> 52) & 0x7ff) as i32;
    if exp_bits == 0 {
        // subnormal
        let (f, e) = frexp(x * pow2(64));
        return (f, e - 64);
    }
    let e = exp_bits - 1022;
    let f = f64::from_bits((bits & !(0x7ffu64 << 52)) | (1022u64 << 52));
    (f, e)
}

/// Double-double number `hi + lo` with `|lo| <= ulp(hi)/2`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    #[inline]
    pub const fn from_f64(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    #[inline]
    pub fn from_parts(hi: f64, lo: f64) -> Dd {
        let (hi, lo) = quick_two_sum(hi, lo);
        Dd { hi, lo }
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.hi == 0.0
    }

    #[inline]
    pub fn abs(self) -> Dd {
        if self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0) {
            -self
        } else {
            self
        }
    }

    #[inline]
    pub fn signum(self) -> i8 {
        if self.hi > 0.0 {
            1
        } else if self.hi < 0.0 {
            -1
        } else {
            0
        }
    }

    #[inline]
    pub fn mul_f64(self, b: f64) -> Dd {
        let (p, e) = two_prod(self.hi, b);
        let e = e + self.lo * b;
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }

    #[inline]
    pub fn scale_pow2(self, k: i32) -> Dd {
        Dd {
            hi: ldexp(self.hi, k),
            lo: ldexp(self.lo, k),
        }
    }

    pub fn recip(self) -> Dd {
        Dd::ONE / self
    }

    pub fn powi(self, n: u32) -> Dd {
        let mut base = self;
        let mut acc = Dd::ONE;
        let mut n = n;
        while n > 0 {
            if n & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            n >>= 1;
        }
        acc
    }

    pub fn is_finite(self) -> bool {
        self.hi.is_finite() && self.lo.is_finite()
    }
}

impl From<f64> for Dd {
    fn from(x: f64) -> Dd {
        Dd::from_f64(x)
    }
}

impl Add for Dd {
    type Output = Dd;
    #[inline]
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let e = e + t;
        let (s, e) = quick_two_sum(s, e);
        let e = e + f;
        let (hi, lo) = quick_two_sum(s, e);
        Dd { hi, lo }
    }
}

impl AddAssign for Dd {
    #[inline]
    fn add_assign(&mut self, b: Dd) {
        *self = *self + b;
    }
}

impl Neg for Dd {
    type Output = Dd;
    #[inline]
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    #[inline]
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    #[inline]
    fn mul(self, b: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, b.hi);
        let e = e + (self.hi * b.lo + self.lo * b.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        let (q1, q2) = quick_two_sum(q1, q2);
        Dd { hi: q1, lo: q2 } + Dd::from_f64(q3)
    }
}

impl PartialOrd for Dd {
    fn partial_cmp(&self, other: &Dd) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi) {
            Some(Ordering::Equal) => self.lo.partial_cmp(&other.lo),
            ord => ord,
        }
    }
}

impl fmt::Display for Dd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

/// Signed scalar `mant * 2^exp` with a double-double mantissa normalised to
/// `0.5 <= |mant.hi| < 1` (or exactly zero).
///
/// This is the log-scaled coefficient type: `ln|x| = exp * ln 2 + ln|mant|`, so
/// products of hundreds of tiny factors stay representable, while the mantissa
/// keeps enough digits for cancelling sums.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wide {
    mant: Dd,
    exp: i64,
}

impl Default for Wide {
    fn default() -> Self {
        Wide::ZERO
    }
}

impl Wide {
    pub const ZERO: Wide = Wide {
        mant: Dd::ZERO,
        exp: 0,
    };
    pub const ONE: Wide = Wide {
        mant: Dd { hi: 0.5, lo: 0.0 },
        exp: 1,
    };

    #[inline]
    fn normalized(mant: Dd, exp: i64) -> Wide {
        if mant.hi == 0.0 {
            return Wide::ZERO;
        }
        let (_, k) = frexp(mant.hi);
        Wide {
            mant: mant.scale_pow2(-k),
            exp: exp + k as i64,
        }
    }

    pub fn from_dd(x: Dd) -> Wide {
        Wide::normalized(x, 0)
    }

    pub fn from_f64(x: f64) -> Wide {
        Wide::from_dd(Dd::from_f64(x))
    }

    /// Reassemble from raw parts; the mantissa is renormalised.
    pub fn from_raw(mant: Dd, exp: i64) -> Wide {
        Wide::normalized(mant, exp)
    }

    pub fn mantissa(self) -> Dd {
        self.mant
    }

    pub fn exponent(self) -> i64 {
        self.exp
    }

    pub fn signum(self) -> i8 {
        self.mant.signum()
    }

    pub fn is_zero(self) -> bool {
        self.mant.hi == 0.0
    }

    pub fn abs(self) -> Wide {
        Wide {
            mant: self.mant.abs(),
            exp: self.exp,
        }
    }

    /// Natural log of the magnitude; `-inf` for zero.
    pub fn ln_abs(self) -> f64 {
        if self.is_zero() {
            return f64::NEG_INFINITY;
        }
        let m = self.mant.abs();
        m.hi.ln() + m.lo / m.hi + self.exp as f64 * std::f64::consts::LN_2
    }

    /// Conversion to double; saturates to 0 or ±inf outside the f64 range.
    pub fn to_f64(self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        if self.exp > 1100 {
            return f64::INFINITY * self.mant.hi.signum();
        }
        if self.exp < -1100 {
            return 0.0 * self.mant.hi.signum();
        }
        ldexp(self.mant.to_f64(), self.exp as i32)
    }

    /// Conversion to double-double (saturating like [`Wide::to_f64`]).
    pub fn to_dd(self) -> Dd {
        if self.is_zero() || self.exp < -1000 {
            return Dd::ZERO;
        }
        if self.exp > 1000 {
            return Dd::from_f64(f64::INFINITY * self.mant.hi.signum());
        }
        self.mant.scale_pow2(self.exp as i32)
    }

    pub fn recip(self) -> Wide {
        Wide::normalized(Dd::ONE / self.mant, -self.exp)
    }

    pub fn powi(self, n: u32) -> Wide {
        let mut base = self;
        let mut acc = Wide::ONE;
        let mut n = n;
        while n > 0 {
            if n & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            n >>= 1;
        }
        acc
    }

    pub fn is_finite(self) -> bool {
        self.mant.is_finite()
    }
}

impl From<Dd> for Wide {
    fn from(x: Dd) -> Wide {
        Wide::from_dd(x)
    }
}

impl From<f64> for Wide {
    fn from(x: f64) -> Wide {
        Wide::from_f64(x)
    }
}

impl Mul for Wide {
    type Output = Wide;
    #[inline]
    fn mul(self, b: Wide) -> Wide {
        Wide::normalized(self.mant * b.mant, self.exp + b.exp)
    }
}

impl Div for Wide {
    type Output = Wide;
    #[inline]
    fn div(self, b: Wide) -> Wide {
        Wide::normalized(self.mant / b.mant, self.exp - b.exp)
    }
}

impl Neg for Wide {
    type Output = Wide;
    #[inline]
    fn neg(self) -> Wide {
        Wide {
            mant: -self.mant,
            exp: self.exp,
        }
    }
}

impl Add for Wide {
    type Output = Wide;
    #[inline]
    fn add(self, b: Wide) -> Wide {
        if self.is_zero() {
            return b;
        }
        if b.is_zero() {
            return self;
        }
        let (big, small) = if self.exp >= b.exp { (self, b) } else { (b, self) };
        let shift = small.exp - big.exp;
        if shift < -220 {
            return big;
        }
        Wide::normalized(big.mant + small.mant.scale_pow2(shift as i32), big.exp)
    }
}

impl AddAssign for Wide {
    #[inline]
    fn add_assign(&mut self, b: Wide) {
        *self = *self + b;
    }
}

impl Sub for Wide {
    type Output = Wide;
    #[inline]
    fn sub(self, b: Wide) -> Wide {
        self + (-b)
    }
}

impl PartialOrd for Wide {
    fn partial_cmp(&self, other: &Wide) -> Option<Ordering> {
        (*self - *other).mant.hi.partial_cmp(&0.0)
    }
}

impl fmt::Display for Wide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.exp.abs() < 1000 {
            write!(f, "{}", self.to_f64())
        } else {
            let l10 = self.ln_abs() / std::f64::consts::LN_10;
            let sign = if self.signum() < 0 { "-" } else { "" };
            let e = l10.floor();
            write!(f, "{sign}{}e{}", 10f64.powf(l10 - e), e as i64)
        }
    }
}

/// Sum with a deterministic left-to-right order.
pub fn wide_sum<I: IntoIterator<Item = Wide>>(it: I) -> Wide {
    it.into_iter().fold(Wide::ZERO, |acc, x| acc + x)
}

/// `n!` as a wide scalar.
pub fn factorial(n: u32) -> Wide {
    (2..=n).fold(Wide::ONE, |acc, k| acc * Wide::from_f64(k as f64))
}

/// Binomial coefficient as f64 (exact for the small arguments used here).
pub fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64).round()
}

/// Bit-exact hex encoding of an f64 (`0x` + 16 hex digits of the IEEE bits).
pub fn f64_to_hex(x: f64) -> String {
    format!("0x{:016x}", x.to_bits())
}

pub fn f64_from_hex(s: &str) -> Option<f64> {
    let digits = s.strip_prefix("0x").unwrap_or(s);
    u64::from_str_radix(digits, 16).ok().map(f64::from_bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frexp_roundtrip() {
        for &x in &[1.0, -3.5, 1e-310, 7.25e200, 0.5] {
            let (f, e) = frexp(x);
            assert!((0.5..1.0).contains(&f.abs()), "{x} -> {f}");
            assert_eq!(ldexp(f, e), x);
        }
    }

    #[test]
    fn dd_recovers_cancelled_digits() {
        let big = Dd::from_f64(1e17);
        let small = Dd::from_f64(1.0);
        let s = (big + small) - big;
        assert_eq!(s.to_f64(), 1.0);
    }

    #[test]
    fn dd_division_is_accurate() {
        let third = Dd::ONE / Dd::from_f64(3.0);
        let back = third * Dd::from_f64(3.0) - Dd::ONE;
        assert!(back.to_f64().abs() < 1e-31);
    }

    #[test]
    fn wide_survives_underflowing_products() {
        let tiny = Wide::from_f64(1e-200);
        let p = tiny * tiny * tiny;
        assert!((p.ln_abs() - (-600.0 * std::f64::consts::LN_10)).abs() < 1e-9);
        assert_eq!(p.to_f64(), 0.0);
        let back = p * Wide::from_f64(1e300) * Wide::from_f64(1e300);
        assert!((back.to_f64() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn factorial_and_binomial() {
        assert_eq!(factorial(5).to_f64(), 120.0);
        assert_eq!(factorial(0).to_f64(), 1.0);
        assert_eq!(binomial(5, 2), 10.0);
        assert_eq!(binomial(3, 4), 0.0);
    }

    #[test]
    fn hex_roundtrip() {
        let x = 0.1 + 0.2;
        assert_eq!(f64_from_hex(&f64_to_hex(x)).unwrap().to_bits(), x.to_bits());
    }

    proptest! {
        #[test]
        fn wide_arithmetic_matches_f64(a in -1e6f64..1e6, b in -1e6f64..1e6) {
            let (wa, wb) = (Wide::from_f64(a), Wide::from_f64(b));
            prop_assert!(((wa + wb).to_f64() - (a + b)).abs() <= 1e-9 * (1.0 + (a + b).abs()));
            prop_assert!(((wa * wb).to_f64() - a * b).abs() <= 1e-12 * (1.0 + (a * b).abs()));
            if b.abs() > 1e-3 {
                prop_assert!(((wa / wb).to_f64() - a / b).abs() <= 1e-12 * (1.0 + (a / b).abs()));
            }
        }

        #[test]
        fn wide_ordering_matches_f64(a in -1e3f64..1e3, b in -1e3f64..1e3) {
            let ord = Wide::from_f64(a).partial_cmp(&Wide::from_f64(b));
            prop_assert_eq!(ord, a.partial_cmp(&b));
        }
    }
}
