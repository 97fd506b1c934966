//! Modified Bessel function of the second kind, `K_ν(z)`, for real `ν ≥ 0`.
//!
//! Temme's series for `z ≤ 2` and Steed's continued fraction (CF2) above,
//! both evaluated at the reduced order `μ = ν − round(ν) ∈ [−½, ½)`, then
//! forward recurrence in the order, which is stable for `K`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const EPS: f64 = 1e-16;
const MAXIT: usize = 10_000;
const SERIES_LIMIT: f64 = 2.0;

/// Taylor coefficients of `1/Γ(x)` about 0: `1/Γ(x) = Σ_{k≥1} C[k] x^k`.
const RGAMMA: [f64; 29] = [
    0.0,
    1.0,
    0.577_215_664_901_532_9,
    -0.655_878_071_520_253_9,
    -0.042_002_635_034_095_24,
    0.166_538_611_382_291_48,
    -0.042_197_734_555_544_33,
    -0.009_621_971_527_876_973,
    0.007_218_943_246_663_1,
    -0.001_165_167_591_859_065_2,
    -0.000_215_241_674_114_950_98,
    0.000_128_050_282_388_116_2,
    -2.013_485_478_078_824e-5,
    -1.250_493_482_142_670_6e-6,
    1.133_027_231_981_696e-6,
    -2.056_338_416_977_607e-7,
    6.116_095_104_481_416e-9,
    5.002_007_644_469_223e-9,
    -1.181_274_570_487_02e-9,
    1.043_426_711_691_100_5e-10,
    7.782_263_439_905_071e-12,
    -3.696_805_618_642_206e-12,
    5.100_370_287_454_476e-13,
    -2.058_326_053_566_506_6e-14,
    -5.348_122_539_423_018e-15,
    1.226_778_628_238_260_8e-15,
    -1.181_259_301_697_458_8e-16,
    1.186_692_254_751_600_4e-18,
    1.412_380_655_318_031_9e-18,
];

/// Temme's auxiliary gammas for `|μ| ≤ ½`:
/// `(γ₁, γ₂, 1/Γ(1+μ), 1/Γ(1−μ))` with
/// `γ₁ = (1/Γ(1−μ) − 1/Γ(1+μ)) / (2μ)` and `γ₂ = (1/Γ(1−μ) + 1/Γ(1+μ)) / 2`.
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    // 1/Γ(1±μ) = Σ_{k≥1} C[k] (±μ)^{k−1}: odd k build γ₂, even k build γ₁.
    let mu2 = mu * mu;
    let mut g1 = 0.0;
    let mut g2 = 0.0;
    let mut p = 1.0;
    for j in 0..RGAMMA.len() / 2 {
        g2 += RGAMMA[2 * j + 1] * p;
        if 2 * j + 2 < RGAMMA.len() {
            g1 -= RGAMMA[2 * j + 2] * p;
        }
        p *= mu2;
    }
    (g1, g2, g2 - mu * g1, g2 + mu * g1)
}

/// `Γ(x)` for real noninteger-or-positive `x`, accurate to a few ulps for moderate `|x|`.
pub fn gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection: Γ(x) Γ(1−x) = π / sin(πx)
        return PI / ((PI * x).sin() * gamma(1.0 - x));
    }
    if x > 150.0 {
        return ln_gamma(x).exp();
    }
    // x = 1 + μ + m with |μ| ≤ ½
    let m = (x - 0.5).floor();
    let mu = x - 1.0 - m;
    let (g1, g2, _, _) = temme_gammas(mu);
    let mut g = 1.0 / (g2 - mu * g1);
    for i in 1..=(m as i64) {
        g *= mu + i as f64;
    }
    g
}

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 100.0 {
        gamma(x).abs().ln()
    } else {
        statrs::function::gamma::ln_gamma(x)
    }
}

/// `(K_μ(x), K_{μ+1}(x))` for `|μ| ≤ ½`, optionally scaled by `e^x`.
fn k_pair_reduced(mu: f64, x: f64, scaled: bool) -> (f64, f64) {
    let mu2 = mu * mu;
    if x <= SERIES_LIMIT {
        let x2 = 0.5 * x;
        let pimu = PI * mu;
        let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
        let (g1, g2, gampl, gammi) = temme_gammas(mu);
        let mut ff = fact * (g1 * e.cosh() + g2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        for i in 1..MAXIT {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu2);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        let k0 = sum;
        let k1 = sum1 * 2.0 / x;
        if scaled {
            let s = x.exp();
            (k0 * s, k1 * s)
        } else {
            (k0, k1)
        }
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut delh = d;
        let mut h = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 1..MAXIT {
            let fi = i as f64;
            a -= 2.0 * fi;
            c = -a * c / (fi + 1.0);
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh = (b * d - 1.0) * delh;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                break;
            }
        }
        h *= a1;
        let base = (PI / (2.0 * x)).sqrt() / s;
        let k0 = if scaled { base } else { base * (-x).exp() };
        let k1 = k0 * (mu + x + 0.5 - h) / x;
        (k0, k1)
    }
}

fn k_impl(nu: f64, z: f64, scaled: bool) -> Result<f64> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::Domain(format!("bessel K requires z > 0, got {z}")));
    }
    if !(nu >= 0.0) || !nu.is_finite() {
        return Err(Error::Domain(format!("bessel K requires nu >= 0, got {nu}")));
    }
    let nl = (nu + 0.5).floor();
    let mu = nu - nl;
    let (mut kmu, mut k1) = k_pair_reduced(mu, z, scaled);
    let xi2 = 2.0 / z;
    for i in 1..=(nl as usize) {
        let next = (mu + i as f64) * xi2 * k1 + kmu;
        kmu = k1;
        k1 = next;
    }
    Ok(kmu)
}

/// `K_ν(z)` for `ν ≥ 0`, `z > 0`. Underflows to 0 for very large `z`.
pub fn bessel_k(nu: f64, z: f64) -> Result<f64> {
    if z > 745.0 {
        return Ok(0.0);
    }
    k_impl(nu, z, false)
}

/// `e^z K_ν(z)`, finite for all `z > 0`.
pub fn bessel_k_scaled(nu: f64, z: f64) -> Result<f64> {
    k_impl(nu, z, true)
}

/// `K_ν(z)` for any real order, using `K_{−ν} = K_ν`.
pub fn bessel_k_any(nu: f64, z: f64) -> Result<f64> {
    bessel_k(nu.abs(), z)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: `K_ν(z) = ∫₀^∞ exp(−z cosh t) cosh(ν t) dt`, trapezoid
    /// rule on a fine grid (spectrally accurate for this analytic integrand).
    fn k_integral(nu: f64, z: f64) -> f64 {
        let h: f64 = 1e-3;
        let mut s = 0.5 * (-z).exp();
        let mut t = h;
        loop {
            let v = (-z * t.cosh() + nu * t).exp() * 0.5 + (-z * t.cosh() - nu * t).exp() * 0.5;
            s += v;
            if v < 1e-300 || t > 60.0 {
                break;
            }
            t += h;
        }
        s * h
    }

    // Values from mpmath.besselk at 30 digits, arguments taken as exact doubles.
    const FROZEN: &[(f64, f64, f64)] = &[
        (0.0, 0.1, 2.4270690247020164),
        (0.0, 1.0, 0.42102443824070834),
        (0.3, 1e-08, 462.5636031890663),
        (0.5, 1.0, 0.46106850444789454),
        (1.0, 1e-08, 99999999.9999999),
        (1.0, 2.0, 0.13986588181652243),
        (1.5, 0.5, 3.2251428104997606),
        (2.5, 3.7, 0.03270051497518573),
        (3.0, 10.0, 2.725270025659869e-05),
        (0.7, 50.0, 3.426753929472965e-23),
        (4.25, 0.01, 24925341714.88822),
        (1.5, 700.0, 4.677282099650328e-306),
        (0.0, 1e-08, 18.536612259610777),
        (2.0, 0.001, 1999999.5000009716),
        (0.9, 2.0, 0.13455046216572558),
        (0.1, 2.0000001, 0.1141301895111127),
    ];

    #[test]
    fn matches_frozen_high_precision_values() {
        for &(nu, z, want) in FROZEN {
            let got = bessel_k(nu, z).unwrap();
            let rel = ((got - want) / want).abs();
            assert!(rel < 1e-12, "K_{nu}({z}) = {got}, want {want}, rel {rel:e}");
        }
    }

    #[test]
    fn matches_integral_representation() {
        for &nu in &[0.0, 0.25, 0.5, 1.0, 1.7, 2.5, 3.0] {
            for &z in &[0.05, 0.3, 1.0, 1.99, 2.01, 5.0, 20.0] {
                let got = bessel_k(nu, z).unwrap();
                let want = k_integral(nu, z);
                let rel = ((got - want) / want).abs();
                assert!(rel < 1e-12, "nu={nu} z={z}: {got} vs {want} ({rel:e})");
            }
        }
    }

    #[test]
    fn half_integer_closed_forms() {
        for &z in &[1e-6, 0.2, 2.0, 9.0, 80.0] {
            let base = (PI / (2.0 * z)).sqrt() * (-z).exp();
            let k12 = bessel_k(0.5, z).unwrap();
            let k32 = bessel_k(1.5, z).unwrap();
            assert!(((k12 - base) / base).abs() < 1e-13);
            let want = base * (1.0 + 1.0 / z);
            assert!(((k32 - want) / want).abs() < 1e-13);
        }
    }

    #[test]
    fn small_argument_limit_of_z_k1() {
        let z = 1e-8;
        assert!((z * bessel_k(1.0, z).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scaled_variant_is_consistent() {
        for &(nu, z) in &[(0.3, 0.5), (2.0, 3.0), (1.5, 40.0)] {
            let a = bessel_k(nu, z).unwrap() * z.exp();
            let b = bessel_k_scaled(nu, z).unwrap();
            assert!(((a - b) / b).abs() < 1e-13);
        }
        assert!(bessel_k_scaled(1.0, 5000.0).unwrap().is_finite());
    }

    #[test]
    fn gamma_matches_known_values() {
        assert!((gamma(0.5) - PI.sqrt()).abs() < 4e-16);
        assert!((gamma(5.0) - 24.0).abs() < 1e-14);
        // Γ(−1.5) = 4√π/3, Γ(2.5) = 3√π/4
        assert!((gamma(-1.5) - 4.0 * PI.sqrt() / 3.0).abs() < 1e-15);
        assert!((gamma(2.5) - 0.75 * PI.sqrt()).abs() < 1e-15);
        assert!((ln_gamma(200.0) - 857.933_669_825_857_5).abs() < 1e-10);
    }

    #[test]
    fn rejects_nonpositive_argument() {
        assert!(bessel_k(1.0, 0.0).is_err());
        assert!(bessel_k(1.0, -2.0).is_err());
    }
}
