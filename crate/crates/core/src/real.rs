//! Scalar abstraction shared by the double and double-double code paths.
//!
//! Large correlation lengths push the smallest eigenvalues of `WᵀΣW` far
//! below `f64` resolution. Every kernel entry and every dense operation is
//! therefore written once against [`Real`] and instantiated with either `f64`
//! or [`Dd`], a double-double number with about 32 significant digits.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use qd::Quad;

/// Arithmetic needed by the kernels and the dense linear algebra.
pub trait Real:
    Copy
    + Send
    + Sync
    + PartialOrd
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn abs(self) -> Self {
        if self.to_f64() < 0.0 { -self } else { self }
    }
    /// `self^e` for positive `self`.
    fn powf(self, e: f64) -> Self {
        (self.ln() * Self::from_f64(e)).exp()
    }
    fn powi(self, k: u32) -> Self {
        let mut out = Self::one();
        let mut base = self;
        let mut k = k;
        while k > 0 {
            if k & 1 == 1 {
                out *= base;
            }
            base *= base;
            k >>= 1;
        }
        out
    }
    /// Euler's constant at the precision of `Self`.
    fn euler_gamma() -> Self;
    /// Unit roundoff of the representation.
    fn epsilon() -> f64;
}

impl Real for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn powf(self, e: f64) -> Self {
        f64::powf(self, e)
    }
    fn euler_gamma() -> Self {
        0.577_215_664_901_532_9
    }
    fn epsilon() -> f64 {
        f64::EPSILON
    }
}

/// Double-double number: an unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`.
///
/// Thin wrapper over [`qd::Quad`] that always uses the accurate addition
/// (the crate's `+` operator uses the faster estimate, which loses the low
/// word under cancellation, and cancellation is exactly what we fight here).
#[derive(Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Dd(pub f64, pub f64);

impl Dd {
    #[inline]
    fn q(self) -> Quad {
        Quad(self.0, self.1)
    }
    #[inline]
    fn from_q(q: Quad) -> Self {
        Dd(q.0, q.1)
    }
    pub const EULER: Dd = Dd(0.577_215_664_901_532_9, -4.942_915_152_430_645e-18);
    pub const PI: Dd = Dd(std::f64::consts::PI, 1.224_646_799_147_353_2e-16);
}

impl fmt::Debug for Dd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dd({:e}, {:e})", self.0, self.1)
    }
}

impl fmt::Display for Dd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0 + self.1)
    }
}

impl Add for Dd {
    type Output = Dd;
    #[inline]
    fn add(self, rhs: Dd) -> Dd {
        Dd::from_q(self.q().add_accurate(rhs.q()))
    }
}
impl Sub for Dd {
    type Output = Dd;
    #[inline]
    fn sub(self, rhs: Dd) -> Dd {
        Dd::from_q(self.q().sub_accurate(rhs.q()))
    }
}
impl Mul for Dd {
    type Output = Dd;
    #[inline]
    fn mul(self, rhs: Dd) -> Dd {
        Dd::from_q(self.q() * rhs.q())
    }
}
impl Div for Dd {
    type Output = Dd;
    #[inline]
    fn div(self, rhs: Dd) -> Dd {
        Dd::from_q(self.q() / rhs.q())
    }
}
impl Neg for Dd {
    type Output = Dd;
    #[inline]
    fn neg(self) -> Dd {
        Dd(-self.0, -self.1)
    }
}
impl AddAssign for Dd {
    fn add_assign(&mut self, rhs: Dd) {
        *self = *self + rhs;
    }
}
impl SubAssign for Dd {
    fn sub_assign(&mut self, rhs: Dd) {
        *self = *self - rhs;
    }
}
impl MulAssign for Dd {
    fn mul_assign(&mut self, rhs: Dd) {
        *self = *self * rhs;
    }
}
impl DivAssign for Dd {
    fn div_assign(&mut self, rhs: Dd) {
        *self = *self / rhs;
    }
}
impl Sum for Dd {
    fn sum<I: Iterator<Item = Dd>>(iter: I) -> Dd {
        iter.fold(Dd(0.0, 0.0), |a, b| a + b)
    }
}

impl Real for Dd {
    #[inline]
    fn from_f64(x: f64) -> Self {
        Dd(x, 0.0)
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self.0 + self.1
    }
    fn sqrt(self) -> Self {
        if self.0 <= 0.0 {
            return Dd(0.0, 0.0);
        }
        Dd::from_q(self.q().sqrt())
    }
    fn exp(self) -> Self {
        Dd::from_q(self.q().exp())
    }
    fn ln(self) -> Self {
        Dd::from_q(self.q().ln())
    }
    fn euler_gamma() -> Self {
        Dd::EULER
    }
    fn epsilon() -> f64 {
        f64::EPSILON * f64::EPSILON
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference digits from a 50-digit mpmath session.
    fn dd_close(x: Dd, hi: f64, lo: f64, rtol: f64) -> bool {
        let d = (x - Dd(hi, lo)).to_f64();
        d.abs() <= rtol * hi.abs()
    }

    #[test]
    fn exp_and_ln_reach_double_double_accuracy() {
        // exp(1.7), ln(1.7) with 1.7 the nearest double
        let e = Dd::from_f64(1.7).exp();
        assert!(dd_close(e, 5.4739473917272, -3.893534160478952e-16, 1e-30));
        let l = Dd::from_f64(1.7).ln();
        assert!(dd_close(l, 0.5306282510621704, -5.076541175216486e-18, 1e-30));
        let e = Dd::from_f64(-30.0).exp();
        assert!(dd_close(e, 9.357622968840175e-14, -2.1170146272646483e-30, 1e-30));
    }

    #[test]
    fn cancellation_keeps_low_word() {
        let a = Dd::from_f64(1.0) + Dd::from_f64(1e-20);
        let b = a - Dd::from_f64(1.0);
        assert_eq!(b.to_f64(), 1e-20);
    }

    #[test]
    fn sqrt_two_squared() {
        let s = Dd::from_f64(2.0).sqrt();
        let r = s * s - Dd::from_f64(2.0);
        assert!(r.to_f64().abs() < 1e-31);
    }

    #[test]
    fn powi_matches_repeated_product() {
        let x = Dd::from_f64(1.1);
        let p = x.powi(5);
        let q = x * x * x * x * x;
        assert!((p - q).to_f64().abs() < 1e-30);
    }
}
