//! Numerical checks of the spectral side of the stationary kernels.
//!
//! For the three smooth families the quadratic form `ξᵀΣ_θξ` equals
//! `M_r θ^r ∫ w_θ(s) |Σ_j ξ_j e^{i⟨s,x_j⟩}|² ds` with
//!
//! | family | `M_r` | `w_θ(s)` |
//! |---|---|---|
//! | Matérn | `Γ(ν+r/2) a^{2ν} / (π^{r/2} Γ(ν))` | `(a² + θ²|s|²)^{−ν−r/2}` |
//! | RQ | `2^{1−ν} / ((2π)^{r/2} Γ(ν))` | `(θ|s|)^{ν−r/2} K_{ν−r/2}(θ|s|)` |
//! | SE | `(2√π)^{−r}` | `exp(−θ²|s|²/4)` |
//!
//! where `a = 2√ν` (or `1` for the Bdos parametrization). In one dimension the
//! modulus is expanded into a cosine double sum and each term is integrated by
//! adaptive Gauss–Kronrod quadrature. Higher dimensions fall back to Monte Carlo.
//!
//! The second half checks the matrix `F_θ = rθ⁻¹Σ_θ − dΣ_θ/dθ`: it should be
//! positive semi-definite and dominated by `t₂ Σ_θ` with a family-dependent `t₂`,
//! which caps the reference prior at `(n−p) t₂`.

use nalgebra::SymmetricEigen;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::bessel::{bessel_k_any, bessel_k_scaled, ln_gamma};
use crate::dense::Mat;
use crate::design::DesignSet;
use crate::error::{Error, Result};
use crate::kernel::{Family, KernelSpec, Parametrization};
use crate::model::{correlation_state, GpModel};
use crate::prior::{log_reference_prior, Form};
use crate::real::{Dd, Real};

/// Absolute accuracy asked of each kernel-scale integral `M θ W(d)`.
const TERM_TOL: f64 = 1e-11;
/// Monte Carlo sample count used when `r ≥ 2`.
pub const MC_SAMPLES: usize = 1_000_000;
const MAX_INTERVALS: usize = 4000;
const MAX_PANELS: usize = 2_000_000;

#[derive(Clone, Debug, Serialize)]
pub struct SpectralReport {
    pub theta: f64,
    pub xi: Vec<f64>,
    pub quadratic_form_direct: f64,
    pub quadratic_form_spectral: f64,
    pub rel_error: f64,
    /// Integrand evaluations (quadrature nodes or Monte Carlo samples).
    pub nodes: usize,
    /// Bound on the truncated parts of the frequency domain, on the scale of the quadratic form.
    pub tail_bound: f64,
    /// Standard error of the Monte Carlo estimate when `r ≥ 2`.
    pub mc_std_error: Option<f64>,
}

impl SpectralReport {
    pub fn positive(&self) -> bool {
        self.quadratic_form_direct > 0.0 && self.quadratic_form_spectral > 0.0
    }
}

// ---------------------------------------------------------------------------
// Gauss–Kronrod 7–15

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

#[derive(Clone, Copy, Debug, Default)]
struct Quad {
    value: f64,
    error: f64,
    nodes: usize,
}

/// Adaptive bisection of the worst interval until the summed error estimate
/// is below `max(abs_tol, rel_tol·|I|)`.
fn adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<Quad> {
    let (v, e) = gk15(f, a, b);
    let mut ivs = vec![(a, b, v, e)];
    let mut nodes = 15;
    loop {
        let value: f64 = ivs.iter().map(|t| t.2).sum();
        let error: f64 = ivs.iter().map(|t| t.3).sum();
        if error <= abs_tol.max(rel_tol * value.abs()) {
            return Ok(Quad { value, error, nodes });
        }
        if ivs.len() >= MAX_INTERVALS {
            return Err(Error::Quadrature(format!(
                "spectral integral on [{a:e}, {b:e}] did not converge after {nodes} nodes (error {error:e})"
            )));
        }
        let (k, _) = ivs.iter().enumerate().max_by(|x, y| x.1.3.total_cmp(&y.1.3)).unwrap();
        let (lo, hi, _, _) = ivs.swap_remove(k);
        let mid = 0.5 * (lo + hi);
        let l = gk15(f, lo, mid);
        let r = gk15(f, mid, hi);
        nodes += 30;
        ivs.push((lo, mid, l.0, l.1));
        ivs.push((mid, hi, r.0, r.1));
    }
}

// ---------------------------------------------------------------------------
// Spectral weights

#[derive(Clone, Copy, Debug)]
enum Weight {
    Matern { nu: f64, a: f64 },
    Rq { nu: f64 },
    Se,
}

impl Weight {
    fn of(kernel: &KernelSpec) -> Result<Self> {
        kernel.validate()?;
        match kernel.family {
            Family::Matern => {
                let nu = kernel.nu();
                let a = match kernel.parametrization() {
                    Parametrization::Hw94 => 2.0 * nu.sqrt(),
                    Parametrization::Bdos => 1.0,
                };
                Ok(Weight::Matern { nu, a })
            }
            Family::RationalQuadratic => Ok(Weight::Rq { nu: kernel.nu() }),
            Family::SquaredExponential => Ok(Weight::Se),
            _ => Err(Error::Domain(format!(
                "spectral reconstruction covers Matern, rational quadratic and squared exponential kernels, not {}",
                kernel.label()
            ))),
        }
    }

    /// `ln M_r`.
    fn ln_m(&self, r: usize) -> f64 {
        let h = 0.5 * r as f64;
        let pi = std::f64::consts::PI;
        match *self {
            Weight::Matern { nu, a } => ln_gamma(nu + h) + 2.0 * nu * a.ln() - h * pi.ln() - ln_gamma(nu),
            Weight::Rq { nu } => (1.0 - nu) * 2f64.ln() - h * (2.0 * pi).ln() - ln_gamma(nu),
            Weight::Se => -(r as f64) * (2.0 * pi.sqrt()).ln(),
        }
    }

    /// `w_θ(s)` for `r = 1`.
    fn w(&self, theta: f64, s: f64) -> f64 {
        let x = theta * s;
        match *self {
            Weight::Matern { nu, a } => (-(nu + 0.5) * (a * a + x * x).ln()).exp(),
            Weight::Rq { nu } => {
                let mu = nu - 0.5;
                if x <= 0.0 {
                    return if mu > 0.0 { (ln_gamma(mu) + (mu - 1.0) * 2f64.ln()).exp() } else { f64::INFINITY };
                }
                if x < 2.0 {
                    x.powf(mu) * bessel_k_any(mu, x).unwrap_or(f64::NAN)
                } else {
                    (mu * x.ln() - x).exp() * bessel_k_scaled(mu.abs(), x).unwrap_or(f64::NAN)
                }
            }
            Weight::Se => (-0.25 * x * x).exp(),
        }
    }

    /// Bound on `∫₀^ε w`, using the behaviour of `w` at the origin.
    fn head_bound(&self, theta: f64, eps: f64) -> f64 {
        let w = self.w(theta, eps);
        match *self {
            // w ~ (θs)^{2μ} near 0 when μ < 0; a logarithm when μ = 0
            Weight::Rq { nu } if nu < 0.5 => eps * w / (2.0 * nu),
            Weight::Rq { nu } if nu == 0.5 => 2.0 * eps * w,
            _ => eps * w.max(self.w(theta, 0.0)),
        }
    }

    /// Upper end `S` and a bound on `∫_S^∞ w` below `tol`.
    fn cutoff(&self, theta: f64, tol: f64) -> (f64, f64) {
        match *self {
            Weight::Matern { nu, .. } => {
                // ∫_S^∞ (θs)^{−2ν−1} ds = θ^{−2ν−1} S^{−2ν} / (2ν)
                let bound = |s: f64| (-(2.0 * nu + 1.0) * theta.ln() - 2.0 * nu * s.ln()).exp() / (2.0 * nu);
                let s = ((-(2.0 * nu + 1.0) * theta.ln() - (2.0 * nu * tol).ln()) / (2.0 * nu)).exp();
                (s, bound(s))
            }
            Weight::Se => {
                let c = 0.25 * theta * theta;
                let mut s = 1.0 / theta;
                while (-c * s * s).exp() / (2.0 * c * s) > tol {
                    s *= 1.25;
                }
                (s, (-c * s * s).exp() / (2.0 * c * s))
            }
            Weight::Rq { nu } => {
                // x^μ K_μ(x) decays like e^{−x} with the ratio K_{μ−1}/K_μ ≥ ½ beyond this point
                let x0 = 2.0 * (nu - 1.0).abs() + 2.0;
                let mut s = x0 / theta;
                while 2.0 * self.w(theta, s) / theta > tol {
                    s *= 1.25;
                }
                (s, 2.0 * self.w(theta, s) / theta)
            }
        }
    }

    /// Largest `ε ≤ start` whose head bound is below `tol`.
    fn floor(&self, theta: f64, start: f64, tol: f64) -> (f64, f64) {
        let mut eps = start;
        let mut b = self.head_bound(theta, eps);
        while b > tol && eps > 1e-300 {
            eps *= 1e-2;
            b = self.head_bound(theta, eps);
        }
        (eps, b)
    }
}

/// `2∫₀^∞ w(s) ds` on a logarithmic abscissa, with the bound on what was cut off.
fn weight_mass(weight: &Weight, theta: f64, tol: f64) -> Result<(Quad, f64)> {
    let (top, tail) = weight.cutoff(theta, 0.25 * tol);
    let (eps, head) = weight.floor(theta, top.min(1.0 / theta), 0.25 * tol);
    let f = |v: f64| {
        let s = v.exp();
        s * weight.w(theta, s)
    };
    let q = adaptive(&f, eps.ln(), top.ln(), 0.1 * tol, 1e-13)?;
    Ok((Quad { value: 2.0 * q.value, error: 2.0 * q.error, nodes: q.nodes }, 2.0 * (head + tail)))
}

/// `2∫₀^∞ w(s) cos(sd) ds` for `d > 0`.
///
/// The head `[0, π/d]` runs on a logarithmic abscissa. Beyond it the integral
/// is summed over half periods `[kπ/d, (k+1)π/d]` until the integration-by-parts
/// bound `w(S)/d`, valid for decreasing `w` and `sin(Sd) = 0`, is below `tol`.
fn weight_cosine(weight: &Weight, theta: f64, d: f64, tol: f64) -> Result<(Quad, f64)> {
    let half = std::f64::consts::PI / d;
    let (eps, head_cut) = weight.floor(theta, half.min(1.0 / theta), 0.25 * tol);
    let f_head = |v: f64| {
        let s = v.exp();
        s * weight.w(theta, s) * (s * d).cos()
    };
    let head = adaptive(&f_head, eps.ln(), half.ln(), 0.05 * tol, 1e-13)?;
    let mut total = head;
    let f = |s: f64| weight.w(theta, s) * (s * d).cos();
    let mut k = 1usize;
    loop {
        let s = k as f64 * half;
        let bound = weight.w(theta, s) / d;
        if bound < 0.25 * tol {
            let q = Quad { value: 2.0 * total.value, error: 2.0 * total.error, nodes: total.nodes };
            return Ok((q, 2.0 * (bound + head_cut)));
        }
        if k > MAX_PANELS {
            return Err(Error::Quadrature(format!(
                "oscillatory spectral integral at d = {d:e} still above tolerance after {} nodes",
                total.nodes
            )));
        }
        let q = adaptive(&f, s, s + half, 1e-3 * tol, 1e-13)?;
        total.value += q.value;
        total.error += q.error;
        total.nodes += q.nodes;
        k += 1;
    }
}

fn direct_form(kernel: &KernelSpec, design: &DesignSet, xi: &[f64], theta: f64) -> f64 {
    let n = design.n();
    let mut acc = Dd::zero();
    for j in 0..n {
        acc += Dd::from_f64(xi[j] * xi[j]);
        for k in (j + 1)..n {
            let (kv, _) = kernel.pair_sq(design.sq_distance_dd(j, k), theta);
            acc += kv * Dd::from_f64(2.0 * xi[j] * xi[k]);
        }
    }
    acc.to_f64()
}

fn check_inputs(design: &DesignSet, xi: &[f64], theta: f64) -> Result<()> {
    if xi.len() != design.n() {
        return Err(Error::Input(format!("probe vector has {} entries for {} design points", xi.len(), design.n())));
    }
    if xi.iter().any(|x| !x.is_finite()) || xi.iter().all(|&x| x == 0.0) {
        return Err(Error::Domain("probe vector must be finite and nonzero".into()));
    }
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::Domain(format!("theta must be positive and finite, got {theta}")));
    }
    Ok(())
}

/// `ξᵀΣ_θξ` evaluated directly and through the spectral representation.
/// One-dimensional designs use deterministic quadrature; others use
/// [`MC_SAMPLES`] Monte Carlo draws with a fixed seed.
pub fn spectral_quadratic_form(kernel: &KernelSpec, design: &DesignSet, xi: &[f64], theta: f64) -> Result<SpectralReport> {
    if design.r() == 1 {
        spectral_quadratic_form_1d(kernel, design, xi, theta)
    } else {
        spectral_quadratic_form_mc(kernel, design, xi, theta, MC_SAMPLES, 0)
    }
}

fn spectral_quadratic_form_1d(kernel: &KernelSpec, design: &DesignSet, xi: &[f64], theta: f64) -> Result<SpectralReport> {
    let weight = Weight::of(kernel)?;
    check_inputs(design, xi, theta)?;
    if design.r() != 1 {
        return Err(Error::Unsupported("deterministic spectral quadrature needs a one-dimensional design".into()));
    }
    let n = design.n();
    let scale = (weight.ln_m(1) + theta.ln()).exp();
    let tol = TERM_TOL / scale;
    let (w0, b0) = weight_mass(&weight, theta, tol)?;
    let sq: f64 = xi.iter().map(|x| x * x).sum();
    let mut pairs = Vec::new();
    for j in 0..n {
        for k in (j + 1)..n {
            pairs.push((j, k));
        }
    }
    let terms = pairs
        .par_iter()
        .map(|&(j, k)| weight_cosine(&weight, theta, design.distance(j, k), tol).map(|q| (j, k, q)))
        .collect::<Result<Vec<_>>>()?;
    let mut spectral = sq * w0.value;
    let mut bound = sq * (b0 + w0.error);
    let mut nodes = w0.nodes;
    for (j, k, (q, b)) in terms {
        let c = 2.0 * xi[j] * xi[k];
        spectral += c * q.value;
        bound += c.abs() * (b + q.error);
        nodes += q.nodes;
    }
    let spectral = scale * spectral;
    let direct = direct_form(kernel, design, xi, theta);
    Ok(SpectralReport {
        theta,
        xi: xi.to_vec(),
        quadratic_form_direct: direct,
        quadratic_form_spectral: spectral,
        rel_error: (spectral - direct).abs() / direct.abs(),
        nodes,
        tail_bound: scale * bound,
        mc_std_error: None,
    })
}

/// Monte Carlo version for any dimension: `ξᵀΣ_θξ = E|Σ_j ξ_j e^{i⟨ω, x_j⟩/θ}|²`
/// with `ω` drawn from the normalized spectral density of `K`.
pub fn spectral_quadratic_form_mc(
    kernel: &KernelSpec,
    design: &DesignSet,
    xi: &[f64],
    theta: f64,
    samples: usize,
    seed: u64,
) -> Result<SpectralReport> {
    let weight = Weight::of(kernel)?;
    check_inputs(design, xi, theta)?;
    if samples < 2 {
        return Err(Error::Domain("need at least two Monte Carlo samples".into()));
    }
    let r = design.r();
    let pts: Vec<Vec<f64>> = design.points().iter().map(|p| p.iter().map(|x| x / theta).collect()).collect();
    const CHUNK: usize = 16384;
    let chunks = samples.div_ceil(CHUNK);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = CHUNK.min(samples - c * CHUNK);
            let mut omega = vec![0.0; r];
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let mult = match weight {
                    Weight::Se => 2f64.sqrt(),
                    Weight::Rq { nu } => (2.0 * Gamma::new(nu, 1.0).unwrap().sample(&mut rng)).sqrt(),
                    Weight::Matern { nu, a } => a / ChiSquared::new(2.0 * nu).unwrap().sample(&mut rng).sqrt(),
                };
                for o in omega.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *o = mult * z;
                }
                let (mut re, mut im) = (0.0, 0.0);
                for (x, &c) in pts.iter().zip(xi) {
                    let phase: f64 = x.iter().zip(&omega).map(|(a, b)| a * b).sum();
                    re += c * phase.cos();
                    im += c * phase.sin();
                }
                let v = re * re + im * im;
                s1 += v;
                s2 += v * v;
            }
            (s1, s2)
        })
        .collect();
    let (s1, s2) = sums.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let nf = samples as f64;
    let mean = s1 / nf;
    let var = ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0);
    let direct = direct_form(kernel, design, xi, theta);
    Ok(SpectralReport {
        theta,
        xi: xi.to_vec(),
        quadratic_form_direct: direct,
        quadratic_form_spectral: mean,
        rel_error: (mean - direct).abs() / direct.abs(),
        nodes: samples,
        tail_bound: 0.0,
        mc_std_error: Some((var / nf).sqrt()),
    })
}

// ---------------------------------------------------------------------------
// F_θ

#[derive(Clone, Debug, Serialize)]
pub struct FMatrixReport {
    pub theta: f64,
    pub min_eigenvalue: f64,
    /// Spectral norm of `F_θ`.
    pub norm: f64,
    /// Largest generalized eigenvalue of `(F_θ, Σ_θ)`; `None` when `Σ_θ` is
    /// singular at working precision.
    pub t2: Option<f64>,
    /// Family bound on `t₂`.
    pub bound: f64,
    /// Whether θ lies where the family bound is asserted.
    pub bound_applies: bool,
    pub threshold: f64,
    pub psd: bool,
    pub satisfied: bool,
}

const PSD_RTOL: f64 = 1e-10;
const BOUND_ATOL: f64 = 1e-8;

/// Default start of the large-θ regime for the RQ and SE bounds.
pub fn default_threshold(design: &DesignSet) -> f64 {
    10.0 * design.distances().max()
}

/// `F_θ = rθ⁻¹Σ_θ − dΣ_θ/dθ` and its pencil against `Σ_θ`, on a bare design.
pub fn f_matrix_check_design(kernel: &KernelSpec, design: &DesignSet, theta: f64, threshold: Option<f64>) -> Result<FMatrixReport> {
    let weight = Weight::of(kernel)?;
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::Domain(format!("theta must be positive and finite, got {theta}")));
    }
    let n = design.n();
    let r = design.r() as f64;
    let mut sigma = Mat::<Dd>::identity(n);
    let mut dsigma = Mat::<Dd>::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let (k, dk) = kernel.pair_sq(design.sq_distance_dd(i, j), theta);
            sigma[(i, j)] = k;
            sigma[(j, i)] = k;
            dsigma[(i, j)] = dk;
            dsigma[(j, i)] = dk;
        }
    }
    let f = sigma.scale(Dd::from_f64(r) / Dd::from_f64(theta)).sub(&dsigma);
    let eig = SymmetricEigen::new(f.to_dmatrix()).eigenvalues;
    let min_eigenvalue = eig.min();
    let norm = eig.amax();
    let t2 = sigma.cholesky().ok().map(|chol| {
        let g = chol.whiten(&f).to_dmatrix();
        SymmetricEigen::new((&g + g.transpose()) * 0.5).eigenvalues.max()
    });
    let threshold = threshold.unwrap_or_else(|| default_threshold(design));
    let (bound, bound_applies) = match weight {
        Weight::Matern { nu, .. } => ((2.0 * nu + r) / theta, true),
        Weight::Rq { .. } => (r + 2.0, theta >= threshold),
        Weight::Se => (theta, theta >= threshold),
    };
    let psd = min_eigenvalue >= -PSD_RTOL * norm;
    let satisfied = psd && (!bound_applies || t2.is_none_or(|t| t <= bound + BOUND_ATOL));
    Ok(FMatrixReport { theta, min_eigenvalue, norm, t2, bound, bound_applies, threshold, psd, satisfied })
}

/// [`f_matrix_check_design`] on the model's design and kernel.
pub fn f_matrix_check(model: &GpModel, theta: f64, threshold: Option<f64>) -> Result<FMatrixReport> {
    f_matrix_check_design(model.kernel(), model.design(), theta, threshold)
}

/// The reference prior against its ceiling `(n−p) t₂`.
#[derive(Clone, Debug, Serialize)]
pub struct PriorCeiling {
    pub theta: f64,
    pub log_prior: f64,
    /// `ln((n−p) t₂)`.
    pub log_ceiling: f64,
    /// `ln((n−p) · family bound)` where that bound applies.
    pub log_family_ceiling: Option<f64>,
    pub satisfied: bool,
}

/// Checks `ln π(θ) ≤ ln((n−p) t₂)` at one θ, with π normalized as in
/// [`log_reference_prior`]. Requires `F_θ` to be positive semi-definite.
pub fn prior_ceiling(model: &GpModel, theta: f64, threshold: Option<f64>) -> Result<PriorCeiling> {
    let f = f_matrix_check(model, theta, threshold)?;
    if !f.psd {
        return Err(Error::BoundViolation(format!(
            "F is not positive semi-definite at theta = {theta:e} (min eigenvalue {:e})",
            f.min_eigenvalue
        )));
    }
    let t2 = f.t2.ok_or_else(|| {
        Error::Numerical(format!("correlation matrix is singular at working precision at theta = {theta:e}"))
    })?;
    let state = correlation_state(model, theta)?;
    let log_prior = log_reference_prior(model, &state, Form::W)?;
    let m = model.m() as f64;
    let log_ceiling = (m * t2).ln();
    let log_family_ceiling = f.bound_applies.then(|| (m * f.bound).ln());
    // relative slack for the rounding of both sides
    let satisfied = log_prior <= log_ceiling + 1e-8;
    Ok(PriorCeiling { theta, log_prior, log_ceiling, log_family_ceiling, satisfied })
}

// ---------------------------------------------------------------------------
// Bundled suite

/// Kernels covered by the spectral checks.
pub fn suite_kernels() -> Vec<KernelSpec> {
    vec![
        KernelSpec::squared_exponential(),
        KernelSpec::rational_quadratic(0.5),
        KernelSpec::rational_quadratic(1.0),
        KernelSpec::rational_quadratic(2.0),
        KernelSpec::matern(0.5),
        KernelSpec::matern(1.0),
        KernelSpec::matern(1.5),
        KernelSpec::matern(2.5),
    ]
}

/// Random one-dimensional designs on `[0, 1]` with matching Gaussian probes.
pub fn suite_designs(count: usize, n: usize) -> Result<Vec<(DesignSet, Vec<f64>)>> {
    use rand::Rng;
    (0..count as u64)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let xi: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            Ok((DesignSet::from_1d(&xs)?, xi))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::RegressionBasis;
    use crate::model::build_model;

    #[test]
    fn gk_integrates_polynomials_and_exponentials() {
        let q = adaptive(&|x: f64| x.powi(5) - 2.0 * x, 0.0, 2.0, 1e-14, 1e-14).unwrap();
        assert!((q.value - (64.0 / 6.0 - 4.0)).abs() < 1e-13);
        let q = adaptive(&|x: f64| (-x).exp(), 0.0, 40.0, 1e-14, 1e-14).unwrap();
        assert!((q.value - (1.0 - (-40f64).exp())).abs() < 1e-13);
    }

    #[test]
    fn single_point_has_unit_mass() {
        let design = DesignSet::from_1d(&[0.3]).unwrap();
        for kernel in suite_kernels() {
            for theta in [0.3, 1.0, 3.0] {
                let rep = spectral_quadratic_form(&kernel, &design, &[1.0], theta).unwrap();
                assert_eq!(rep.quadratic_form_direct, 1.0);
                assert!((rep.quadratic_form_spectral - 1.0).abs() < 1e-8, "{} {theta}: {rep:?}", kernel.label());
            }
        }
    }

    #[test]
    fn squared_exponential_pair() {
        let design = DesignSet::from_1d(&[0.0, 1.0]).unwrap();
        let rep = spectral_quadratic_form(&KernelSpec::squared_exponential(), &design, &[1.0, 1.0], 1.0).unwrap();
        let exact = 2.0 + 2.0 * (-1f64).exp();
        assert!((rep.quadratic_form_direct - exact).abs() < 1e-15);
        assert!((rep.quadratic_form_spectral - exact).abs() < 1e-6);
    }

    #[test]
    fn matern_three_halves_random_design() {
        let (design, xi) = suite_designs(1, 3).unwrap().remove(0);
        for theta in [0.3, 1.0, 3.0] {
            let rep = spectral_quadratic_form(&KernelSpec::matern(1.5), &design, &xi, theta).unwrap();
            assert!(rep.rel_error < 1e-4, "{rep:?}");
            assert!(rep.tail_bound < 1e-8 * rep.quadratic_form_direct.abs().max(1.0));
        }
    }

    #[test]
    fn bdos_matern_reconstructs() {
        let k = KernelSpec::matern(1.0).with_parametrization(Parametrization::Bdos);
        let (design, xi) = suite_designs(1, 4).unwrap().remove(0);
        let rep = spectral_quadratic_form(&k, &design, &xi, 1.0).unwrap();
        assert!(rep.rel_error < 1e-4, "{rep:?}");
    }

    #[test]
    fn rough_kernels_are_rejected() {
        let design = DesignSet::from_1d(&[0.0, 1.0]).unwrap();
        assert!(matches!(
            spectral_quadratic_form(&KernelSpec::spherical(), &design, &[1.0, 1.0], 1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn monte_carlo_within_a_few_standard_errors() {
        let design = DesignSet::new(vec![vec![0.0, 0.0], vec![0.5, 0.1], vec![0.2, 0.7]]).unwrap();
        let xi = [1.0, -0.5, 0.8];
        for kernel in [KernelSpec::squared_exponential(), KernelSpec::rational_quadratic(1.0), KernelSpec::matern(1.5)] {
            let rep = spectral_quadratic_form_mc(&kernel, &design, &xi, 0.7, 100_000, 7).unwrap();
            let se = rep.mc_std_error.unwrap();
            assert!((rep.quadratic_form_spectral - rep.quadratic_form_direct).abs() < 5.0 * se, "{rep:?}");
        }
    }

    #[test]
    fn scalar_f_is_r_over_theta() {
        let design = DesignSet::from_1d(&[0.4]).unwrap();
        for theta in [0.1, 1.0, 10.0] {
            let rep = f_matrix_check_design(&KernelSpec::matern(1.0), &design, theta, None).unwrap();
            assert!((rep.min_eigenvalue - 1.0 / theta).abs() < 1e-14 / theta);
            assert!((rep.t2.unwrap() - 1.0 / theta).abs() < 1e-14 / theta);
            assert!(rep.satisfied);
        }
    }

    #[test]
    fn matern_bound_holds_at_every_scale() {
        let design = DesignSet::from_1d(&[0.0, 0.3, 0.45, 1.0]).unwrap();
        for theta in [0.1, 1.0, 10.0] {
            let rep = f_matrix_check_design(&KernelSpec::matern(1.0), &design, theta, None).unwrap();
            assert!(rep.bound_applies);
            assert!(rep.t2.unwrap() <= 3.0 / theta + 1e-8, "{rep:?}");
            assert!(rep.psd);
        }
    }

    #[test]
    fn squared_exponential_bound_at_large_theta() {
        let design = DesignSet::from_1d(&[0.0, 0.3, 0.45, 1.0]).unwrap();
        let theta = 50.0 * design.median_distance();
        let rep = f_matrix_check_design(&KernelSpec::squared_exponential(), &design, theta, None).unwrap();
        assert!(rep.bound_applies);
        assert!(rep.t2.unwrap() <= theta, "{rep:?}");
    }

    #[test]
    fn f_is_psd_over_a_wide_range() {
        let (design, _) = suite_designs(1, 5).unwrap().remove(0);
        for kernel in suite_kernels() {
            for theta in crate::asymptotics::log_grid(1e-2, 1e3, 31) {
                let rep = f_matrix_check_design(&kernel, &design, theta, None).unwrap();
                assert!(rep.psd, "{} {rep:?}", kernel.label());
                assert!(rep.satisfied, "{} {rep:?}", kernel.label());
            }
        }
    }

    #[test]
    fn prior_stays_under_its_ceiling() {
        let design = DesignSet::new(vec![
            vec![0.1, 0.2],
            vec![0.9, 0.3],
            vec![0.4, 0.8],
            vec![0.7, 0.65],
            vec![0.25, 0.55],
        ])
        .unwrap();
        for kernel in [KernelSpec::matern(1.5), KernelSpec::rational_quadratic(1.0), KernelSpec::squared_exponential()] {
            let model = build_model(design.clone(), RegressionBasis::Constant, kernel).unwrap();
            for theta in crate::asymptotics::log_grid(0.05, 20.0, 12) {
                let c = prior_ceiling(&model, theta, None).unwrap();
                assert!(c.satisfied, "{} {c:?}", kernel.label());
                if let Some(fam) = c.log_family_ceiling {
                    assert!(c.log_prior <= fam + 1e-8, "{} {c:?}", kernel.label());
                }
            }
        }
    }
}
