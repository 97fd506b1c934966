//! Isotropic correlation kernels `K_θ(d) = K(d/θ)`, their θ-derivatives and
//! their small-argument expansions.

use serde::{Deserialize, Serialize};
use crate::bessel::{bessel_k_scaled, gamma, ln_gamma};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[serde(alias = "sph")]
    Spherical,
    #[serde(alias = "pe")]
    PowerExponential,
    #[serde(alias = "se", alias = "gaussian")]
    SquaredExponential,
    #[serde(alias = "rq")]
    RationalQuadratic,
    Matern,
}

/// Whether the Matérn argument carries the `2√ν` factor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Parametrization {
    /// `K(x) = 2^{1−ν}/Γ(ν) (2√ν x)^ν K_ν(2√ν x)`.
    #[default]
    #[serde(rename = "hw94")]
    Hw94,
    /// `K(x) = 2^{1−ν}/Γ(ν) x^ν K_ν(x)`.
    #[serde(rename = "bdos")]
    Bdos,
}

/// A kernel family with its parameters. Serializes as
/// `{"family": ..., "q": ..., "nu": ..., "parametrization": ...}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parametrization: Option<Parametrization>,
}

impl KernelSpec {
    pub fn spherical() -> Self {
        KernelSpec { family: Family::Spherical, q: None, nu: None, parametrization: None }
    }
    pub fn power_exponential(q: f64) -> Self {
        KernelSpec { family: Family::PowerExponential, q: Some(q), nu: None, parametrization: None }
    }
    pub fn squared_exponential() -> Self {
        KernelSpec { family: Family::SquaredExponential, q: None, nu: None, parametrization: None }
    }
    pub fn rational_quadratic(nu: f64) -> Self {
        KernelSpec { family: Family::RationalQuadratic, q: None, nu: Some(nu), parametrization: None }
    }
    pub fn matern(nu: f64) -> Self {
        KernelSpec { family: Family::Matern, q: None, nu: Some(nu), parametrization: Some(Parametrization::Hw94) }
    }
    pub fn with_parametrization(mut self, p: Parametrization) -> Self {
        self.parametrization = Some(p);
        self
    }

    /// Checks the parameter domain of the family.
    pub fn validate(&self) -> Result<()> {
        match self.family {
            Family::PowerExponential => match self.q {
                Some(q) if q > 0.0 && q <= 2.0 => Ok(()),
                other => Err(Error::Domain(format!("power exponential needs q in (0, 2], got {other:?}"))),
            },
            Family::RationalQuadratic | Family::Matern => match self.nu {
                Some(nu) if nu > 0.0 && nu.is_finite() => Ok(()),
                other => Err(Error::Domain(format!("{:?} needs nu > 0, got {other:?}", self.family))),
            },
            Family::Spherical | Family::SquaredExponential => Ok(()),
        }
    }

    pub fn nu(&self) -> f64 {
        self.nu.unwrap_or(f64::NAN)
    }

    pub fn parametrization(&self) -> Parametrization {
        self.parametrization.unwrap_or_default()
    }

    /// Short human-readable label, e.g. `matern(nu=1.5)`.
    pub fn label(&self) -> String {
        match self.family {
            Family::Spherical => "spherical".into(),
            Family::PowerExponential => format!("power_exponential(q={})", self.q.unwrap_or(f64::NAN)),
            Family::SquaredExponential => "squared_exponential".into(),
            Family::RationalQuadratic => format!("rational_quadratic(nu={})", self.nu()),
            Family::Matern => match self.parametrization() {
                Parametrization::Hw94 => format!("matern(nu={})", self.nu()),
                Parametrization::Bdos => format!("matern(nu={}, bdos)", self.nu()),
            },
        }
    }

    /// Matérn scale `ρ` with `(z/2)² = ρ (d/θ)²`.
    fn matern_rho(&self) -> f64 {
        match self.parametrization() {
            Parametrization::Hw94 => self.nu(),
            Parametrization::Bdos => 0.25,
        }
    }

    /// Value and θ-derivative of `K(d/θ)` at the precision of `T`.
    /// Parameters must already be validated and `θ > 0`, `d ≥ 0`.
    pub(crate) fn pair<T: Real>(&self, d: f64, theta: f64) -> (T, T) {
        let d = T::from_f64(d);
        self.pair_sq(d * d, theta)
    }

    /// As [`pair`](Self::pair) but from the squared distance, so that callers
    /// holding `d²` exactly in extended precision do not round it through `d`.
    pub(crate) fn pair_sq<T: Real>(&self, d2: T, theta: f64) -> (T, T) {
        if d2.to_f64() == 0.0 {
            return (T::one(), T::zero());
        }
        let th = T::from_f64(theta);
        let s2 = d2 / (th * th);
        match self.family {
            Family::Spherical => {
                let s = s2.sqrt();
                if s.to_f64() >= 1.0 {
                    return (T::zero(), T::zero());
                }
                let s3 = s * s2;
                let k = T::one() - T::from_f64(1.5) * s + T::from_f64(0.5) * s3;
                let dk = (T::from_f64(1.5) * s - T::from_f64(1.5) * s3) / th;
                (k, dk)
            }
            Family::SquaredExponential => {
                let k = (-s2).exp();
                (k, T::from_f64(2.0) * s2 * k / th)
            }
            Family::PowerExponential => {
                let q = self.q.unwrap_or(2.0);
                let t = if q == 2.0 { s2 } else { s2.powf(0.5 * q) };
                let k = (-t).exp();
                (k, T::from_f64(q) * t * k / th)
            }
            Family::RationalQuadratic => {
                let nu = self.nu();
                let one_t = T::one() + s2;
                let k = (-(one_t.ln() * T::from_f64(nu))).exp();
                (k, T::from_f64(2.0 * nu) * s2 * k / (one_t * th))
            }
            Family::Matern => matern_pair(self.nu(), self.matern_rho(), s2, th),
        }
    }

    /// Smoothness profile near the origin: `K(d/θ) = 1 + g₀(θ) D + R₀(θ)` with `q` the
    /// exponent of the leading distance power.
    pub fn smoothness_profile(&self) -> Result<SmoothnessProfile> {
        self.validate()?;
        let p = match self.family {
            Family::Spherical => SmoothnessProfile::new(1.0, -1.5, 1.0, false, 3.0, true),
            Family::PowerExponential => {
                let q = self.q.unwrap();
                SmoothnessProfile::new(q, -1.0, q, false, 2.0 * q, q < 2.0)
            }
            Family::SquaredExponential => SmoothnessProfile::new(2.0, -1.0, 2.0, false, 4.0, false),
            Family::RationalQuadratic => SmoothnessProfile::new(2.0, -self.nu(), 2.0, false, 4.0, false),
            Family::Matern => {
                let nu = self.nu();
                let rho = self.matern_rho();
                if nu < 1.0 {
                    let a_nu = gamma_ratio_neg(nu) * rho.powf(nu);
                    SmoothnessProfile::new(2.0 * nu, a_nu, 2.0 * nu, false, 2.0, true)
                } else if nu == 1.0 {
                    SmoothnessProfile::new(2.0, -2.0 * rho, 2.0, true, 2.0, false)
                } else {
                    SmoothnessProfile::new(2.0, -rho / (nu - 1.0), 2.0, false, 2.0 * nu.min(2.0), false)
                }
            }
        };
        Ok(p)
    }
}

/// `Γ(−ν)/Γ(ν)` for noninteger `ν > 0`.
fn gamma_ratio_neg(nu: f64) -> f64 {
    gamma(-nu) / gamma(nu)
}

/// Leading small-distance behaviour of a kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SmoothnessProfile {
    /// Exponent of the leading distance power (`q`).
    pub q: f64,
    /// `g₀(θ) = coefficient · θ^{−exponent} · log(θ)^{[log]}`.
    pub g0_coefficient: f64,
    pub g0_exponent: f64,
    pub g0_log: bool,
    /// `‖R₀(θ)‖ = O(θ^{−remainder_exponent})`.
    pub remainder_exponent: f64,
    /// Whether the leading distance matrix is nonsingular (for `n > r + 2`).
    pub d_nonsingular: bool,
}

impl SmoothnessProfile {
    fn new(q: f64, c: f64, e: f64, log: bool, rem: f64, nonsing: bool) -> Self {
        SmoothnessProfile { q, g0_coefficient: c, g0_exponent: e, g0_log: log, remainder_exponent: rem, d_nonsingular: nonsing }
    }
}

const MATERN_SERIES_LIMIT: f64 = 1.0; // w = (z/2)², i.e. z ≤ 2
const NEAR_INTEGER: f64 = 1e-3;

fn integer_order(nu: f64) -> Option<u32> {
    if nu.fract() == 0.0 && nu <= 64.0 { Some(nu as u32) } else { None }
}

fn matern_pair<T: Real>(nu: f64, rho: f64, s2: T, th: T) -> (T, T) {
    let w = T::from_f64(rho) * s2;
    let wf = w.to_f64();
    let near_int = (nu - nu.round()).abs() < NEAR_INTEGER;
    if wf <= MATERN_SERIES_LIMIT {
        if let Some(n) = integer_order(nu) {
            let (k, wdk) = matern_series_integer(n, w);
            return (k, T::from_f64(-2.0) * wdk / th);
        }
        if !near_int {
            let (k, wdk) = matern_series_fractional(nu, w);
            return (k, T::from_f64(-2.0) * wdk / th);
        }
    }
    let z = 2.0 * wf.sqrt();
    let thf = th.to_f64();
    let ln_c0 = (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu);
    let kv = bessel_k_scaled(nu, z).unwrap_or(0.0);
    let km1 = bessel_k_scaled((nu - 1.0).abs(), z).unwrap_or(0.0);
    let k = (ln_c0 + nu * z.ln() - z).exp() * kv;
    let dk = (ln_c0 + (nu + 1.0) * z.ln() - z).exp() * km1 / thf;
    (T::from_f64(k), T::from_f64(dk))
}

/// Noninteger order: `K = Σ A_k w^k + w^ν Σ B_k w^k` with `w = (z/2)²`.
/// Returns `(K, w dK/dw)`.
fn matern_series_fractional<T: Real>(nu: f64, w: T) -> (T, T) {
    let tol = T::epsilon() * 0.1;
    let nut = T::from_f64(nu);
    let mut a = T::one();
    let mut wk = T::one();
    let mut k_reg = T::one();
    let mut wd_reg = T::zero();
    let wnu = w.powf(nu);
    let mut b = T::from_f64(gamma_ratio_neg(nu));
    let mut k_frac = b;
    let mut wd_frac = b * nut;
    for k in 1..200u32 {
        let kt = T::from_f64(k as f64);
        a = a / (kt * (kt - nut));
        b = b / (kt * (kt + nut));
        wk *= w;
        let ta = a * wk;
        let tb = b * wk;
        k_reg += ta;
        wd_reg += kt * ta;
        k_frac += tb;
        wd_frac += (kt + nut) * tb;
        let mag = ta.abs().to_f64().max((tb * wnu).abs().to_f64());
        if mag < tol && k > (nu as u32) + 1 {
            break;
        }
    }
    (k_reg + wnu * k_frac, wd_reg + wnu * wd_frac)
}

/// Integer order `n`:
/// `K = Σ_{k<n} P_k (−w)^k + (2/(n−1)!) (−1)^n Σ_k w^{n+k}/(k!(n+k)!) [−½ ln w + ½(ψ(k+1) + ψ(n+k+1))]`.
/// Returns `(K, w dK/dw)`.
fn matern_series_integer<T: Real>(n: u32, w: T) -> (T, T) {
    let tol = T::epsilon() * 0.1;
    let fact = |m: u32| -> T { (1..=m).fold(T::one(), |acc, i| acc * T::from_f64(i as f64)) };
    let fn1 = fact(n - 1);
    let mut k_val = T::zero();
    let mut wd = T::zero();
    // polynomial part
    let mut wk = T::one();
    for k in 0..n {
        let p = fact(n - k - 1) / (fn1 * fact(k));
        let term = if k % 2 == 0 { p * wk } else { -(p * wk) };
        k_val += term;
        wd += T::from_f64(k as f64) * term;
        wk *= w;
    }
    // logarithmic part; wk == w^n here
    let sign = if n % 2 == 0 { T::one() } else { -T::one() };
    let lead = sign * T::from_f64(2.0) / fn1;
    let half = T::from_f64(0.5);
    let lw = w.ln();
    let gamma_e = T::euler_gamma();
    // ψ(m) = −γ + H_{m−1}
    let mut h_k = T::zero(); // H_k
    let mut h_nk = (1..=n).fold(T::zero(), |acc, i| acc + T::one() / T::from_f64(i as f64)); // H_{n+k}
    let mut c = lead / fact(n); // lead / (k! (n+k)!)
    let mut wnk = wk;
    for k in 0..400u32 {
        if k > 0 {
            let kt = T::from_f64(k as f64);
            h_k += T::one() / kt;
            h_nk += T::one() / T::from_f64((n + k) as f64);
            c = c / (kt * T::from_f64((n + k) as f64));
            wnk *= w;
        }
        let bracket = -half * lw + half * (h_k + h_nk) - gamma_e;
        let cw = c * wnk;
        let term = cw * bracket;
        let e = T::from_f64((n + k) as f64);
        k_val += term;
        wd += e * term - half * cw;
        if k > 0 && cw.abs().to_f64() * (1.0 + lw.abs().to_f64()) < tol {
            break;
        }
    }
    (k_val, wd)
}

/// Validated scalar evaluation of `K(d/θ)`.
pub fn eval_kernel(spec: &KernelSpec, d: f64, theta: f64) -> Result<f64> {
    check_args(spec, d, theta)?;
    Ok(spec.pair::<f64>(d, theta).0)
}

/// Validated scalar evaluation of `∂/∂θ K(d/θ)`.
pub fn eval_kernel_dtheta(spec: &KernelSpec, d: f64, theta: f64) -> Result<f64> {
    check_args(spec, d, theta)?;
    Ok(spec.pair::<f64>(d, theta).1)
}

fn check_args(spec: &KernelSpec, d: f64, theta: f64) -> Result<()> {
    spec.validate()?;
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::Domain(format!("theta must be positive and finite, got {theta}")));
    }
    if !(d >= 0.0) || !d.is_finite() {
        return Err(Error::Domain(format!("distance must be nonnegative and finite, got {d}")));
    }
    Ok(())
}

/// Expansion of `K(s)` around `s = 0`, in powers of `s = d/θ`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeriesExpansion {
    /// `a_k`, the coefficient of `s^{2k}`, for `k = 0..=k_max`. For Matérn these
    /// are the leading integer powers only (`k ≤ ⌊ν⌋`, or `k < ν` for integer `ν`).
    pub regular: Vec<f64>,
    /// Noninteger Matérn: `Σ_k b_k s^{2ν+2k}`, with `b_0 = a_ν`.
    pub fractional: Option<FractionalTerm>,
    /// Integer Matérn: `Σ_k s^{2ν+2k} (l_k (−ln s) + c_k)`, with `l_0 = ã_ν`.
    pub logarithmic: Option<LogTerm>,
    /// Radius of convergence in `s²`; `None` means entire.
    pub radius_s2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FractionalTerm {
    pub exponent: f64,
    pub coefficients: Vec<f64>,
    /// Regular coefficients beyond the leading ones, for partial sums.
    pub regular_tail: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogTerm {
    pub exponent: f64,
    /// `ã_ν`, multiplying `log(θ) θ^{−2ν} D^{(ν)}`.
    pub coefficient: f64,
    /// Constant in `D̃^{(ν)}_{ij} = d^{2ν} (−½ log d² + offset)`.
    pub offset: f64,
    pub log_coefficients: Vec<f64>,
    pub const_coefficients: Vec<f64>,
}

impl SeriesExpansion {
    /// Partial sum at `s`, using the terms held by the expansion.
    pub fn partial_sum<T: Real>(&self, s: f64) -> T {
        let st = T::from_f64(s);
        let s2 = st * st;
        let pw = |k: usize| s2.powi(k as u32);
        let mut out = T::zero();
        for (k, &a) in self.regular.iter().enumerate().skip(1) {
            out += T::from_f64(a) * pw(k);
        }
        if let Some(f) = &self.fractional {
            let off = self.regular.len();
            for (k, &a) in f.regular_tail.iter().enumerate() {
                out += T::from_f64(a) * pw(off + k);
            }
            let base = st.powf(f.exponent);
            for (k, &b) in f.coefficients.iter().enumerate() {
                out += T::from_f64(b) * base * pw(k);
            }
        }
        if let Some(l) = &self.logarithmic {
            let base = st.powf(l.exponent);
            let ls = -st.ln();
            for (k, (&lc, &cc)) in l.log_coefficients.iter().zip(&l.const_coefficients).enumerate() {
                out += base * pw(k) * (T::from_f64(lc) * ls + T::from_f64(cc));
            }
        }
        out + T::from_f64(self.regular.first().copied().unwrap_or(0.0))
    }
}

/// Small-argument series coefficients (`k_max ≤ 12`).
pub fn series_coefficients(spec: &KernelSpec, k_max: usize) -> Result<SeriesExpansion> {
    spec.validate()?;
    if k_max > 12 {
        return Err(Error::Domain(format!("k_max must be at most 12, got {k_max}")));
    }
    match spec.family {
        Family::Spherical => Err(Error::Unsupported("spherical kernel has no power series at the origin".into())),
        Family::PowerExponential if spec.q != Some(2.0) => {
            Err(Error::Unsupported("power exponential with q < 2 has no power series at the origin".into()))
        }
        Family::SquaredExponential | Family::PowerExponential => {
            let mut a = vec![1.0];
            for k in 1..=k_max {
                let prev = a[k - 1];
                a.push(-prev / k as f64);
            }
            Ok(SeriesExpansion { regular: a, fractional: None, logarithmic: None, radius_s2: None })
        }
        Family::RationalQuadratic => {
            // (1 + x)^{−ν} = Σ (−1)^k (ν)_k / k! x^k
            let nu = spec.nu();
            let mut a = vec![1.0];
            for k in 1..=k_max {
                let prev = a[k - 1];
                a.push(-prev * (nu + (k - 1) as f64) / k as f64);
            }
            Ok(SeriesExpansion { regular: a, fractional: None, logarithmic: None, radius_s2: Some(1.0) })
        }
        Family::Matern => {
            let nu = spec.nu();
            let rho = spec.matern_rho();
            if let Some(n) = integer_order(nu) {
                let n = n as usize;
                let fact = |m: usize| -> f64 { (1..=m).map(|i| i as f64).product() };
                let regular: Vec<f64> = (0..n)
                    .map(|k| {
                        let p = fact(n - k - 1) / (fact(n - 1) * fact(k));
                        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                        sign * p * rho.powi(k as i32)
                    })
                    .collect();
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                let lead = sign * 2.0 / fact(n - 1);
                let gamma_e = f64::euler_gamma();
                let mut log_c = Vec::new();
                let mut const_c = Vec::new();
                let harmonic = |m: usize| -> f64 { (1..=m).map(|i| 1.0 / i as f64).sum() };
                for k in 0..=k_max {
                    let c = lead / (fact(k) * fact(n + k)) * rho.powi((n + k) as i32);
                    // −½ ln w = −ln s − ½ ln ρ
                    let bracket = -0.5 * rho.ln() + 0.5 * (harmonic(k) + harmonic(n + k)) - gamma_e;
                    log_c.push(c);
                    const_c.push(c * bracket);
                }
                let coefficient = log_c[0];
                let offset = const_c[0] / coefficient;
                Ok(SeriesExpansion {
                    regular,
                    fractional: None,
                    logarithmic: Some(LogTerm {
                        exponent: 2.0 * nu,
                        coefficient,
                        offset,
                        log_coefficients: log_c,
                        const_coefficients: const_c,
                    }),
                    radius_s2: None,
                })
            } else {
                let lead_count = nu.floor() as usize + 1;
                let mut regular = Vec::new();
                let mut tail = Vec::new();
                let mut a = 1.0;
                for k in 0..(lead_count + k_max) {
                    if k > 0 {
                        a /= k as f64 * (k as f64 - nu);
                    }
                    let v = a * rho.powi(k as i32);
                    if k < lead_count { regular.push(v) } else { tail.push(v) }
                }
                let mut coefficients = Vec::new();
                let mut b = gamma_ratio_neg(nu);
                for k in 0..=k_max {
                    if k > 0 {
                        b /= k as f64 * (k as f64 + nu);
                    }
                    coefficients.push(b * rho.powf(nu + k as f64));
                }
                Ok(SeriesExpansion {
                    regular,
                    fractional: Some(FractionalTerm { exponent: 2.0 * nu, coefficients, regular_tail: tail }),
                    logarithmic: None,
                    radius_s2: None,
                })
            }
        }
    }
}
