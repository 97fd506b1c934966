//! Large-θ structure: distance-matrix spectra, the series expansion of
//! `WᵀΣ_θW` and its case classification, the kernel-intersection test on
//! `Wᵀy`, and empirical slope measurement.
//!
//! For the smooth families `K(d/θ) = Σ_k a_k θ^{−2k} d^{2k} + …`, so
//! `WᵀΣ_θW` is a sum of projected distance-power matrices `WᵀD^{(k)}W`
//! weighted by powers of θ. Which of these vanish decides how fast the
//! smallest eigenvalue of `WᵀΣ_θW` decays and hence the tail rates of the
//! prior and of the integrated likelihood.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen, SVD};
use rayon::prelude::*;
use serde::Serialize;

use crate::dense::Mat;
use crate::design::DesignSet;
use crate::error::{Error, Result};
use crate::kernel::{series_coefficients, Family, KernelSpec, SeriesExpansion};
use crate::likelihood::{log_integrated_likelihood, DEGENERACY_RTOL};
use crate::model::{correlation_state, GpModel};
use crate::prior::{log_reference_prior, Form};
use crate::real::{Dd, Real};

/// Relative threshold separating zero from nonzero singular values.
pub const RANK_RTOL: f64 = 1e-9;
/// Singular values within this factor of the threshold make a rank ambiguous.
pub const RANK_GAP: f64 = 10.0;
/// Relative norm of the critical component of `Wᵀy` below which `y` is degenerate.
pub const NONDEGENERACY_THRESHOLD: f64 = 1e-8;
const MAX_POWER: u32 = 12;

/// `n × n` matrix of `d(i, j)^q` with a zero diagonal.
pub fn distance_power_matrix(design: &DesignSet, exponent: f64) -> Result<DMatrix<f64>> {
    if !(exponent > 0.0) || !exponent.is_finite() {
        return Err(Error::Domain(format!("distance exponent must be positive, got {exponent}")));
    }
    let n = design.n();
    Ok(DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { design.distance(i, j).powf(exponent) }))
}

/// How [`signed_spectrum`] decides that an eigenvalue is zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum TolPolicy {
    /// `dim · ε · max|λ|`.
    #[default]
    Default,
    /// `r · max|λ|`.
    Relative(f64),
    Absolute(f64),
}

/// Eigenvalue signs of a symmetric matrix.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignedSpectrum {
    pub n_positive: usize,
    pub n_negative: usize,
    pub n_zero: usize,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    pub tolerance: f64,
}

impl SignedSpectrum {
    pub fn rank(&self) -> usize {
        self.n_positive + self.n_negative
    }
}

pub fn signed_spectrum(m: &DMatrix<f64>, tol: TolPolicy) -> Result<SignedSpectrum> {
    if m.nrows() != m.ncols() {
        return Err(Error::Input(format!("signed spectrum of a {}×{} matrix", m.nrows(), m.ncols())));
    }
    let scale = m.amax();
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * scale || m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input(format!("matrix is not symmetric (max |a_ij − a_ji| = {asym:e})")));
    }
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    let top = eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tolerance = match tol {
        TolPolicy::Default => m.nrows() as f64 * f64::EPSILON * top,
        TolPolicy::Relative(r) => r * top,
        TolPolicy::Absolute(a) => a,
    };
    let n_positive = eigenvalues.iter().filter(|&&v| v > tolerance).count();
    let n_negative = eigenvalues.iter().filter(|&&v| v < -tolerance).count();
    Ok(SignedSpectrum { n_positive, n_negative, n_zero: eigenvalues.len() - n_positive - n_negative, eigenvalues, tolerance })
}

/// One matrix of the expansion of `Σ_θ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Slot {
    /// `D^{(k)}_{ij} = d_{ij}^{2k}` at `θ^{−2k}`.
    Power { k: u32 },
    /// Noninteger Matérn: `D^{(ν)}_{ij} = d_{ij}^{2ν}` at `θ^{−2ν}`.
    Fractional { nu: f64 },
    /// Integer Matérn: `D^{(ν)}` at `log(θ) θ^{−2ν}`.
    LogPower { nu: f64 },
    /// Integer Matérn: `D̃^{(ν)}_{ij} = d_{ij}^{2ν}(−½ log d_{ij}² + c)` at `θ^{−2ν}`.
    LogCompanion { nu: f64 },
}

impl Slot {
    /// Power of `1/θ` carried by the slot.
    pub fn order(&self) -> f64 {
        match *self {
            Slot::Power { k } => 2.0 * k as f64,
            Slot::Fractional { nu } | Slot::LogPower { nu } | Slot::LogCompanion { nu } => 2.0 * nu,
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Slot::Power { k } => write!(f, "D^({k})"),
            Slot::Fractional { nu } => write!(f, "D^({nu})"),
            Slot::LogPower { nu } => write!(f, "D^({nu})[log]"),
            Slot::LogCompanion { nu } => write!(f, "D~^({nu})"),
        }
    }
}

/// Symbolic scale function `θ^{−exponent} log(θ)^{log_power}`, or the sum
/// `Σ c_i θ^{−e_i}` when `terms` is not empty.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Scale {
    pub exponent: f64,
    pub log_power: i32,
    pub terms: Vec<(f64, f64)>,
}

impl Scale {
    fn power(exponent: f64) -> Self {
        Scale { exponent, log_power: 0, terms: Vec::new() }
    }
    fn with_log(exponent: f64, log_power: i32) -> Self {
        Scale { exponent, log_power, terms: Vec::new() }
    }

    pub fn eval(&self, theta: f64) -> f64 {
        if !self.terms.is_empty() {
            return self.terms.iter().map(|&(c, e)| c * theta.powf(-e)).sum();
        }
        theta.powf(-self.exponent) * theta.ln().powi(self.log_power)
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.terms.is_empty() {
            let parts: Vec<String> = self.terms.iter().map(|(c, e)| format!("{c}·θ^-{e}")).collect();
            return write!(f, "{}", parts.join(" + "));
        }
        let mut s = Vec::new();
        if self.exponent != 0.0 {
            s.push(format!("θ^-{}", self.exponent));
        }
        match self.log_power {
            0 => {}
            1 => s.push("log(θ)".into()),
            p => s.push(format!("log(θ)^{p}")),
        }
        if s.is_empty() { write!(f, "1") } else { write!(f, "{}", s.join("·")) }
    }
}

/// `coefficient · D` for one slot, with the rank of its projection `WᵀDW`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Term {
    pub slot: Slot,
    pub coefficient: f64,
    pub label: String,
    /// `coefficient · D`, row-major.
    pub matrix: Vec<Vec<f64>>,
    pub projected_rank: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Case {
    /// `WᵀDW` nonsingular.
    #[serde(rename = "1a")]
    OneA,
    /// `WᵀDW` singular, `WᵀDW + g* WᵀD*W` nonsingular.
    #[serde(rename = "1b")]
    OneB,
    /// `Ker(WᵀDW) ∩ Ker(WᵀD*W)` nontrivial, Matérn.
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "2-usual")]
    TwoUsual,
    /// Rank-one `WᵀDW` with the next projected matrix proportional to it.
    #[serde(rename = "2-special")]
    TwoSpecial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Branch {
    #[serde(rename = "standard")]
    Standard,
    /// Integer-ν Matérn with `g = log(θ) θ^{−2ν}`.
    #[serde(rename = "matern-log-branch")]
    MaternLog,
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Case::OneA => "1a",
            Case::OneB => "1b",
            Case::Two => "2",
            Case::TwoUsual => "2-usual",
            Case::TwoSpecial => "2-special",
        };
        f.write_str(s)
    }
}

/// The leading terms `g D + g g* D*` of `Σ_θ` on the contrast space and the
/// tail rates they imply. Exponents are `θ^{e} log(θ)^{f}` upper bounds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExpansionReport {
    pub kernel: String,
    pub m: usize,
    pub k1: Option<Slot>,
    pub k2: Option<Slot>,
    pub d: Term,
    pub d_star: Option<Term>,
    pub g: Scale,
    pub g_star: Scale,
    pub l: f64,
    pub case: Case,
    pub branch: Branch,
    /// Whether `WᵀDW + g*(θ) WᵀD*W` is nonsingular at `perturbation_theta`.
    pub perturbed_nonsingular: bool,
    pub perturbation_theta: f64,
    pub predicted_prior_exponent: f64,
    pub predicted_prior_log_power: f64,
    pub predicted_lik_exponent: f64,
    pub predicted_lik_log_power: f64,
    /// `(slot, rank of its projection)` for every slot examined.
    pub projected_ranks: Vec<(String, usize)>,
}

/// Whether the series machinery covers the kernel: SE (and power exponential
/// with `q = 2`), RQ, and Matérn with `ν ≥ 1`.
pub fn in_scope(kernel: &KernelSpec) -> bool {
    match kernel.family {
        Family::SquaredExponential | Family::RationalQuadratic => true,
        Family::PowerExponential => kernel.q == Some(2.0),
        Family::Matern => kernel.nu() >= 1.0,
        Family::Spherical => false,
    }
}

fn check_kernel_scope(model: &GpModel) -> Result<()> {
    let k = model.kernel();
    if !in_scope(k) {
        return Err(Error::Domain(format!("{} is outside the smooth families covered by the expansion", k.label())));
    }
    Ok(())
}

fn check_scope(model: &GpModel) -> Result<()> {
    check_kernel_scope(model)?;
    if model.m() < 2 {
        return Err(Error::Unsupported(format!("n − p = {} < 2", model.m())));
    }
    Ok(())
}

/// A slot with its matrices. `projected` is `WᵀDW` (without coefficient).
struct Rung {
    slot: Slot,
    coefficient: f64,
    full: Mat<Dd>,
    projected_dd: Mat<Dd>,
    projected: DMatrix<f64>,
    /// Threshold for singular values of `projected`.
    tau: f64,
    null: Option<DMatrix<f64>>,
}

/// Slots of the kernel in increasing order, computed on demand.
struct Ladder<'a> {
    model: &'a GpModel,
    plan: Vec<(Slot, f64)>,
    offset: f64,
    rungs: Vec<Rung>,
}

impl<'a> Ladder<'a> {
    fn new(model: &'a GpModel) -> Result<Self> {
        let kernel = model.kernel();
        let series: SeriesExpansion = series_coefficients(kernel, MAX_POWER as usize)?;
        let mut plan = Vec::new();
        let mut offset = 0.0;
        match kernel.family {
            Family::Matern => {
                let nu = kernel.nu();
                for (k, &a) in series.regular.iter().enumerate() {
                    plan.push((Slot::Power { k: k as u32 }, a));
                }
                if let Some(f) = &series.fractional {
                    plan.push((Slot::Fractional { nu }, f.coefficients[0]));
                }
                if let Some(l) = &series.logarithmic {
                    plan.push((Slot::LogPower { nu }, l.coefficient));
                    plan.push((Slot::LogCompanion { nu }, l.coefficient));
                    offset = l.offset;
                }
            }
            _ => {
                for (k, &a) in series.regular.iter().enumerate() {
                    plan.push((Slot::Power { k: k as u32 }, a));
                }
            }
        }
        Ok(Ladder { model, plan, offset, rungs: Vec::new() })
    }

    fn len(&self) -> usize {
        self.plan.len()
    }

    fn position(&self, slot: Slot) -> Option<usize> {
        self.plan.iter().position(|(s, _)| *s == slot)
    }

    fn rung(&mut self, i: usize) -> Result<&Rung> {
        while self.rungs.len() <= i {
            let (slot, coefficient) = self.plan[self.rungs.len()];
            let full = slot_matrix(self.model, slot, self.offset);
            let projected_dd = full.congruence(&self.model.frame_dd().w);
            let projected = projected_dd.to_dmatrix();
            let full64 = full.to_dmatrix();
            let tau = RANK_RTOL * full64.norm();
            self.rungs.push(Rung { slot, coefficient, full, projected_dd, projected, tau, null: None });
        }
        Ok(&self.rungs[i])
    }

    /// Orthonormal basis of `Ker(WᵀD_iW)`.
    fn null(&mut self, i: usize) -> Result<DMatrix<f64>> {
        self.rung(i)?;
        if self.rungs[i].null.is_none() {
            let r = &self.rungs[i];
            let z = null_within(&r.projected, &DMatrix::identity(self.model.m(), self.model.m()), r.tau, &r.slot.to_string())?;
            self.rungs[i].null = Some(z);
        }
        Ok(self.rungs[i].null.clone().unwrap())
    }

    fn is_null(&mut self, i: usize) -> Result<bool> {
        Ok(self.null(i)?.ncols() == self.model.m())
    }

    fn rank(&mut self, i: usize) -> Result<usize> {
        Ok(self.model.m() - self.null(i)?.ncols())
    }

    fn term(&mut self, i: usize) -> Result<Term> {
        let c = self.plan[i].1;
        self.term_with(i, c)
    }

    fn term_with(&mut self, i: usize, coefficient: f64) -> Result<Term> {
        let rank = self.rank(i)?;
        let r = &self.rungs[i];
        let m = r.full.to_dmatrix() * coefficient;
        Ok(Term {
            slot: r.slot,
            coefficient,
            label: format!("{coefficient:e}·{}", r.slot),
            matrix: m.row_iter().map(|row| row.iter().copied().collect()).collect(),
            projected_rank: rank,
        })
    }
}

fn slot_matrix(model: &GpModel, slot: Slot, offset: f64) -> Mat<Dd> {
    let d2 = &model.frame_dd().d2;
    let n = model.n();
    Mat::from_fn(n, n, |i, j| {
        if let Slot::Power { k: 0 } = slot {
            return Dd::one();
        }
        if i == j {
            return Dd::zero();
        }
        let x = d2[(i, j)];
        match slot {
            Slot::Power { k } => x.powi(k),
            Slot::Fractional { nu } => x.powf(nu),
            Slot::LogPower { nu } => x.powi(nu as u32),
            Slot::LogCompanion { nu } => {
                x.powi(nu as u32) * (Dd::from_f64(-0.5) * x.ln() + Dd::from_f64(offset))
            }
        }
    })
}

/// Orthonormal basis of `{z c : A z c = 0}` for `z` with orthonormal columns.
/// Singular values within a factor [`RANK_GAP`] of `tau` are ambiguous.
fn null_within(a: &DMatrix<f64>, z: &DMatrix<f64>, tau: f64, what: &str) -> Result<DMatrix<f64>> {
    let k = z.ncols();
    if k == 0 {
        return Ok(z.clone());
    }
    let az = a * z;
    let svd = SVD::new(az, false, true);
    let vt = svd.v_t.as_ref().expect("requested v_t");
    let mut null_rows = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tau / RANK_GAP && s <= tau * RANK_GAP {
            return Err(Error::AmbiguousRank(format!(
                "{what}: singular value {s:e} is within a factor {RANK_GAP} of the threshold {tau:e}"
            )));
        }
        if s <= tau {
            null_rows.push(i);
        }
    }
    // `a z` is m × k with m ≥ k, so v_t is k × k and its rows span R^k.
    let mut out = DMatrix::zeros(z.nrows(), null_rows.len());
    for (c, &i) in null_rows.iter().enumerate() {
        let v = vt.row(i).transpose();
        out.set_column(c, &(z * v));
    }
    Ok(out)
}

/// Smallest `|pivot|` of Gaussian elimination with partial pivoting, relative to `max |a_ij|`.
fn lu_min_pivot_ratio(a: &Mat<Dd>) -> f64 {
    let n = a.rows();
    let scale = a.max_abs();
    if scale == 0.0 {
        return 0.0;
    }
    let mut m = a.clone();
    let mut min_pivot = f64::INFINITY;
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| m[(i, c)].to_f64().abs().total_cmp(&m[(j, c)].to_f64().abs())).unwrap();
        if piv != c {
            for j in 0..n {
                let t = m[(c, j)];
                m[(c, j)] = m[(piv, j)];
                m[(piv, j)] = t;
            }
        }
        let p = m[(c, c)];
        min_pivot = min_pivot.min(p.to_f64().abs());
        if p.to_f64() == 0.0 {
            break;
        }
        for i in (c + 1)..n {
            let f = m[(i, c)] / p;
            for j in c..n {
                let v = m[(c, j)];
                m[(i, j)] -= f * v;
            }
        }
    }
    min_pivot / scale
}

/// Classifies the leading behaviour of `WᵀΣ_θW` as `θ → ∞` and reads off the
/// predicted tail exponents of `π(θ)` and `L(y|θ)`.
pub fn expansion_report(model: &GpModel) -> Result<ExpansionReport> {
    check_scope(model)?;
    let kernel = *model.kernel();
    let mut lad = Ladder::new(model)?;
    let m = model.m();
    let nu = kernel.nu();
    let matern = kernel.family == Family::Matern;
    let integer_nu = matern && nu.fract() == 0.0;

    // k1: first non-null slot among those allowed to lead.
    let leading_ok = |s: Slot| match s {
        Slot::Power { .. } => true,
        Slot::LogPower { .. } => true,
        Slot::Fractional { .. } | Slot::LogCompanion { .. } => false,
    };
    let mut k1_idx = None;
    for i in 0..lad.len() {
        if !leading_ok(lad.plan[i].0) {
            continue;
        }
        if !lad.is_null(i)? {
            k1_idx = Some(i);
            break;
        }
    }

    // The slot that leads when no integer power survives.
    let fallback = if integer_nu { Slot::LogCompanion { nu } } else { Slot::Fractional { nu } };

    let (d_idx, g) = match k1_idx {
        Some(i) => {
            let s = lad.plan[i].0;
            let g = match s {
                Slot::LogPower { .. } => Scale::with_log(2.0 * nu, 1),
                _ => Scale::power(s.order()),
            };
            (i, g)
        }
        None => {
            if !matern {
                return Err(Error::Numerical(format!(
                    "every projected distance-power matrix up to k = {MAX_POWER} vanishes"
                )));
            }
            let i = lad.position(fallback).expect("fallback slot in plan");
            if lad.is_null(i)? {
                return Err(Error::Numerical("every projected term of the expansion vanishes".into()));
            }
            (i, Scale::power(2.0 * nu))
        }
    };
    let d_slot = lad.plan[d_idx].0;
    let d_rank = lad.rank(d_idx)?;
    let nonsingular = d_rank == m;
    let log_branch = matches!(d_slot, Slot::LogPower { .. });

    // k2, D* and g*.
    let next_nonnull = |lad: &mut Ladder, from: usize, to_incl: usize| -> Result<Option<usize>> {
        for i in from..=to_incl.min(lad.len() - 1) {
            if !lad.is_null(i)? {
                return Ok(Some(i));
            }
        }
        Ok(None)
    };
    let (k2_idx, g_star): (Option<usize>, Scale) = if log_branch {
        let i = lad.position(Slot::LogCompanion { nu }).unwrap();
        (Some(i), Scale::with_log(0.0, -1))
    } else if k1_idx.is_none() {
        if integer_nu {
            (None, Scale::power(1.0))
        } else {
            (None, Scale::power(nu.floor() + 1.0 - nu))
        }
    } else if !matern {
        let last = lad.len() - 1;
        let i = if nonsingular { Some(d_idx + 1) } else { next_nonnull(&mut lad, d_idx + 1, last)? };
        let Some(i) = i.filter(|&i| i < lad.len()) else {
            return Err(Error::Numerical(format!("no non-null projected matrix after {d_slot}")));
        };
        (Some(i), Scale::power(lad.plan[i].0.order() - d_slot.order()))
    } else if !integer_nu {
        // slots after k1: the remaining integer powers, then the fractional one
        let frac = lad.position(Slot::Fractional { nu }).unwrap();
        let i = if nonsingular { Some(d_idx + 1) } else { next_nonnull(&mut lad, d_idx + 1, frac)? };
        let Some(i) = i else {
            return Err(Error::Numerical(format!("no non-null projected matrix after {d_slot}")));
        };
        (Some(i), Scale::power(lad.plan[i].0.order() - d_slot.order()))
    } else {
        let logp = lad.position(Slot::LogPower { nu }).unwrap();
        let comp = logp + 1;
        let i = if nonsingular { d_idx + 1 } else { next_nonnull(&mut lad, d_idx + 1, logp)?.unwrap_or(comp) };
        let s = lad.plan[i].0;
        let e = s.order() - d_slot.order();
        let g_star = match s {
            Slot::LogPower { .. } => Scale::with_log(e, 1),
            _ => Scale::power(e),
        };
        (Some(i), g_star)
    };
    let l = g_star.exponent / 2.0;

    let mut d_term = lad.term(d_idx)?;
    let d_star_term = match k2_idx {
        Some(i) => Some(lad.term(i)?),
        None => None,
    };

    let mut projected_ranks = Vec::new();
    for i in 0..lad.rungs.len() {
        projected_ranks.push((lad.plan[i].0.to_string(), lad.rank(i)?));
    }

    // Classification.
    let d_null = lad.null(d_idx)?;
    let joint_null = match k2_idx {
        Some(i) => {
            let r = lad.rung(i)?;
            let (p, tau) = (r.projected.clone(), r.tau);
            null_within(&p, &d_null, tau, "Ker(WᵀDW) ∩ Ker(WᵀD*W)")?.ncols()
        }
        None => d_null.ncols(),
    };
    let mut g = g;
    let mut case = if nonsingular {
        Case::OneA
    } else if joint_null == 0 {
        Case::OneB
    } else if matern {
        Case::Two
    } else {
        Case::TwoUsual
    };
    let (mut k2_slot, mut d_star_term, mut g_star, mut l) = (k2_idx.map(|i| lad.plan[i].0), d_star_term, g_star, l);

    if case == Case::TwoUsual && d_rank == 1 && d_idx + 2 < lad.len() && !lad.is_null(d_idx + 1)? {
        let n0 = lad.null(d_idx)?;
        let r1 = lad.rung(d_idx + 1)?;
        let (p1, tau1, c1) = (r1.projected.clone(), r1.tau, r1.coefficient);
        let n01 = null_within(&p1, &n0, tau1, "Ker(k1) ∩ Ker(k1+1)")?;
        let r2 = lad.rung(d_idx + 2)?;
        let (p2, tau2) = (r2.projected.clone(), r2.tau);
        let n012 = null_within(&p2, &n01, tau2, "Ker(k1) ∩ Ker(k1+1) ∩ Ker(k1+2)")?;
        let p0 = lad.rungs[d_idx].projected.clone();
        let b = p1.dot(&p0) / p0.dot(&p0);
        let proportional = (&p1 - &p0 * b).norm() <= tau1 && b != 0.0;
        if n012.ncols() == 0 && proportional {
            case = Case::TwoSpecial;
            let a0 = lad.plan[d_idx].1;
            let e0 = d_slot.order();
            g = Scale { exponent: e0, log_power: 0, terms: vec![(a0, e0), (c1 * b, e0 + 2.0)] };
            // g carries a_{k1} and a_{k1+1}·b, so D is the bare D^{(k1)}
            d_term = lad.term_with(d_idx, 1.0)?;
            d_star_term = Some(lad.term(d_idx + 2)?);
            k2_slot = Some(lad.plan[d_idx + 2].0);
            g_star = Scale::power(4.0);
            l = 2.0;
        }
    }

    // Nonsingularity of WᵀDW + g*(θ) WᵀD*W at large θ.
    let mut perturbation_theta = 1e6;
    let perturbed_nonsingular = match k2_slot.and_then(|s| lad.position(s)) {
        None => nonsingular,
        Some(i2) => {
            let mut eps = g_star.eval(perturbation_theta);
            if eps < 1e-20 && g_star.log_power == 0 && g_star.terms.is_empty() {
                perturbation_theta = 10f64.powf(20.0 / g_star.exponent);
                eps = 1e-20;
            }
            let dd = lad.rungs[d_idx].projected_dd.scale(Dd::from_f64(lad.plan[d_idx].1));
            let r2 = lad.rung(i2)?;
            let ds = r2.projected_dd.scale(Dd::from_f64(r2.coefficient * eps));
            lu_min_pivot_ratio(&dd.add(&ds)) > 1e-29
        }
    };

    let (pe, pl, le, ll) = predicted_exponents(case, log_branch, &g_star, l, matern)?;

    Ok(ExpansionReport {
        kernel: kernel.label(),
        m,
        k1: k1_idx.map(|i| lad.plan[i].0),
        k2: k2_slot,
        d: d_term,
        d_star: d_star_term,
        g,
        g_star,
        l,
        case,
        branch: if log_branch { Branch::MaternLog } else { Branch::Standard },
        perturbed_nonsingular,
        perturbation_theta,
        predicted_prior_exponent: pe,
        predicted_prior_log_power: pl,
        predicted_lik_exponent: le,
        predicted_lik_log_power: ll,
        projected_ranks,
    })
}

/// `(π exponent, π log power, L exponent, L log power)`.
fn predicted_exponents(case: Case, log_branch: bool, g_star: &Scale, l: f64, matern: bool) -> Result<(f64, f64, f64, f64)> {
    let glog = if g_star.log_power > 0 { 1.0 } else { 0.0 };
    if log_branch {
        return match case {
            Case::OneA => Ok((-1.0, -2.0, 0.0, 0.0)),
            Case::OneB => Ok((-1.0, -1.0, 0.0, -0.5)),
            _ => Err(Error::Numerical("case 2 cannot occur on the integer-ν logarithmic branch".into())),
        };
    }
    Ok(match case {
        Case::OneA => (-2.0 * l - 1.0, glog, 0.0, 0.0),
        Case::OneB | Case::Two => (-1.0, 0.0, -l, 0.5 * glog),
        Case::TwoUsual => {
            debug_assert!(!matern);
            (1.0, 0.0, -3.0, 0.0)
        }
        Case::TwoSpecial => (-1.0, 0.0, -1.0, 0.0),
    })
}

/// Component of `Wᵀy` in the critical kernel subspace.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NondegeneracyReport {
    pub passes: bool,
    /// `‖P Wᵀy‖ / ‖Wᵀy‖` with `P` the projector onto the critical subspace.
    pub margin: f64,
    pub critical_subspace_dim: usize,
    /// Number of leading slots whose projected kernels intersect nontrivially.
    pub intersection_depth: usize,
    /// The slot at which the intersection becomes trivial.
    pub terminal_slot: String,
    pub threshold: f64,
}

/// Nested kernels `N_k = ∩_{j ≤ k} Ker(WᵀD_jW)` up to the first trivial one.
/// Returns `(k′, N_{k′−1})`, where `N_{−1}` is the whole contrast space.
fn kernel_intersection(lad: &mut Ladder) -> Result<(usize, DMatrix<f64>, Slot)> {
    let m = lad.model.m();
    let mut z = DMatrix::identity(m, m);
    for i in 0..lad.len() {
        let r = lad.rung(i)?;
        let (p, tau, slot) = (r.projected.clone(), r.tau, r.slot);
        let next = null_within(&p, &z, tau, &format!("intersection through {slot}"))?;
        if next.ncols() == 0 {
            return Ok((i, z, slot));
        }
        z = next;
    }
    Err(Error::Numerical(format!(
        "projected kernels still intersect in dimension {} after {} slots",
        z.ncols(),
        lad.len()
    )))
}

/// Checks that `Wᵀy` has a component in the last nontrivial kernel intersection,
/// the subspace along which `WᵀΣ_θW` degenerates fastest.
pub fn nondegeneracy_check(model: &GpModel, y: &[f64]) -> Result<NondegeneracyReport> {
    check_kernel_scope(model)?;
    let wy = DMatrix::from_column_slice(model.m(), 1, &model.contrasts(y)?);
    let mut lad = Ladder::new(model)?;
    let (depth, z, slot) = kernel_intersection(&mut lad)?;
    let norm_y = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm_wy = wy.norm();
    let margin = if norm_wy <= DEGENERACY_RTOL * norm_y || norm_wy == 0.0 {
        0.0
    } else {
        ((z.transpose() * &wy).norm() / norm_wy).min(1.0)
    };
    Ok(NondegeneracyReport {
        passes: margin > NONDEGENERACY_THRESHOLD,
        margin,
        critical_subspace_dim: z.ncols(),
        intersection_depth: depth,
        terminal_slot: slot.to_string(),
        threshold: NONDEGENERACY_THRESHOLD,
    })
}

/// Orthonormal basis of the critical subspace (in contrast coordinates).
pub fn critical_subspace(model: &GpModel) -> Result<DMatrix<f64>> {
    check_kernel_scope(model)?;
    let mut lad = Ladder::new(model)?;
    Ok(kernel_intersection(&mut lad)?.1)
}

/// Least-squares fit of `log f = intercept + slope·log θ [+ log_coefficient·log log θ]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub log_coefficient: Option<f64>,
    pub residual_rms: f64,
    pub nodes: usize,
}

/// Fits the log-log slope of `(θ, log f(θ))` samples. With `log_regressor`
/// a `log log θ` column is added (all `θ` must then exceed 1).
pub fn fit_tail_slope(samples: &[(f64, f64)], log_regressor: bool) -> Result<SlopeFit> {
    if samples.len() < 8 {
        return Err(Error::Input(format!("slope fit needs at least 8 nodes, got {}", samples.len())));
    }
    if samples.iter().any(|&(t, v)| !(t > 0.0) || !t.is_finite() || !v.is_finite()) {
        return Err(Error::Input("slope fit samples must be finite with θ > 0".into()));
    }
    let (lo, hi) = samples.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &(t, _)| (a.min(t), b.max(t)));
    if hi / lo < 100.0 * (1.0 - 1e-12) {
        return Err(Error::Input(format!("slope fit must span two decades, got [{lo:e}, {hi:e}]")));
    }
    if log_regressor && lo <= 1.0 {
        return Err(Error::Input("the log log θ regressor needs θ > 1".into()));
    }
    let cols = if log_regressor { 3 } else { 2 };
    let n = samples.len();
    let x = DMatrix::from_fn(n, cols, |i, j| {
        let t = samples[i].0;
        match j {
            0 => 1.0,
            1 => t.ln(),
            _ => t.ln().ln(),
        }
    });
    let b = DMatrix::from_fn(n, 1, |i, _| samples[i].1);
    let coef = x
        .clone()
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::Numerical(format!("slope fit: {e}")))?;
    let resid = &x * &coef - &b;
    Ok(SlopeFit {
        slope: coef[1],
        intercept: coef[0],
        log_coefficient: log_regressor.then(|| coef[2]),
        residual_rms: (resid.norm_squared() / n as f64).sqrt(),
        nodes: n,
    })
}

/// `count` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1).max(1) as f64).exp()).collect()
}

/// Measured growth of `‖(WᵀΣ_θW)⁻¹‖` against its predicted ceiling.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InverseNormReport {
    pub measured: f64,
    pub fit: SlopeFit,
    /// `2ν` for Matérn, `2k′` for RQ/SE.
    pub predicted: f64,
    /// `k′`, the kernel-intersection depth (RQ/SE only).
    pub intersection_depth: Option<usize>,
    /// Smallest polynomial degree `K` with `span(H) + P_K` interpolating the design.
    pub unisolvence_depth: usize,
    pub thetas: Vec<f64>,
    pub log_norms: Vec<f64>,
    /// Nodes dropped because `WᵀΣ_θW` was no longer resolved.
    pub truncated: bool,
}

/// Pivot ratio below which `WᵀΣ_θW` is treated as unresolved at working precision.
pub(crate) fn resolution_floor(model: &GpModel) -> f64 {
    match model.precision() {
        crate::model::Precision::Double => 1e-12,
        crate::model::Precision::Extended => 1e-28,
    }
}

pub fn inverse_norm_exponent(model: &GpModel, thetas: &[f64]) -> Result<InverseNormReport> {
    check_kernel_scope(model)?;
    let kernel = model.kernel();
    let evals: Vec<Result<(f64, f64)>> = thetas
        .par_iter()
        .map(|&t| {
            let st = correlation_state(model, t)?;
            if st.sigma_w_pivot_ratio() < resolution_floor(model) {
                return Err(Error::Numerical(format!("WᵀΣW unresolved at θ = {t:e}")));
            }
            Ok((t, st.sigma_w_inverse_norm().ln()))
        })
        .collect();
    let mut samples = Vec::new();
    let mut truncated = false;
    for e in evals {
        match e {
            Ok(s) => samples.push(s),
            Err(err @ (Error::NotPositiveDefinite { .. } | Error::Numerical(_))) => {
                log::warn!("inverse-norm grid truncated: {err}");
                truncated = true;
                break;
            }
            Err(err) => return Err(err),
        }
    }
    let fit = fit_tail_slope(&samples, false)?;
    let (predicted, depth) = if kernel.family == Family::Matern {
        (2.0 * kernel.nu(), None)
    } else {
        let mut lad = Ladder::new(model)?;
        let (k, _, _) = kernel_intersection(&mut lad)?;
        (2.0 * k as f64, Some(k))
    };
    Ok(InverseNormReport {
        measured: fit.slope,
        fit,
        predicted,
        intersection_depth: depth,
        unisolvence_depth: unisolvence_depth(model),
        thetas: samples.iter().map(|s| s.0).collect(),
        log_norms: samples.iter().map(|s| s.1).collect(),
        truncated,
    })
}

/// Smallest `K` such that the regression functions together with all monomials
/// of total degree `≤ K` have rank `n` on the design.
pub fn unisolvence_depth(model: &GpModel) -> usize {
    let design = model.design();
    let (n, r) = (design.n(), design.r());
    let mut center = vec![0.0; r];
    for p in design.points() {
        for (c, x) in center.iter_mut().zip(p) {
            *c += x / n as f64;
        }
    }
    let scale = design.max_distance().max(f64::MIN_POSITIVE);
    let pts: Vec<Vec<f64>> = design.points().iter().map(|p| p.iter().zip(&center).map(|(x, c)| (x - c) / scale).collect()).collect();
    let mut cols: Vec<Vec<f64>> = (0..model.p()).map(|j| model.h().column(j).iter().copied().collect()).collect();
    let rank = |cols: &[Vec<f64>]| -> usize {
        if cols.is_empty() {
            return 0;
        }
        let a = DMatrix::from_fn(n, cols.len(), |i, j| {
            let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            cols[j][i] / norm
        });
        let sv = a.singular_values();
        let top = sv.max();
        sv.iter().filter(|&&s| s > 1e-9 * top).count()
    };
    for k in 0..=n {
        for e in exponents_of_degree(r, k as u32) {
            cols.push(pts.iter().map(|p| p.iter().zip(&e).map(|(x, &q)| x.powi(q as i32)).product()).collect());
        }
        if rank(&cols) >= n {
            return k;
        }
    }
    n
}

fn exponents_of_degree(r: usize, k: u32) -> Vec<Vec<u32>> {
    if r == 1 {
        return vec![vec![k]];
    }
    let mut out = Vec::new();
    for first in (0..=k).rev() {
        for mut rest in exponents_of_degree(r - 1, k - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Measured large-θ slopes of `log π` and `log L`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailSlopes {
    pub prior: SlopeFit,
    pub likelihood: SlopeFit,
    pub thetas: Vec<f64>,
    pub log_prior: Vec<f64>,
    pub log_lik: Vec<f64>,
    pub truncated: bool,
}

/// Samples `log π` and `log L` on `thetas` and fits both slopes. Nodes past the
/// working-precision resolution of `WᵀΣ_θW` are dropped.
pub fn measure_tail_slopes(model: &GpModel, y: &[f64], thetas: &[f64], log_regressor: bool) -> Result<TailSlopes> {
    let floor = resolution_floor(model);
    let evals: Vec<Result<(f64, f64, f64)>> = thetas
        .par_iter()
        .map(|&t| {
            let st = correlation_state(model, t)?;
            if st.sigma_w_pivot_ratio() < floor {
                return Err(Error::Numerical(format!("WᵀΣW unresolved at θ = {t:e}")));
            }
            Ok((t, log_reference_prior(model, &st, Form::W)?, log_integrated_likelihood(model, &st, y)?))
        })
        .collect();
    let mut rows = Vec::new();
    let mut truncated = false;
    for e in evals {
        match e {
            Ok(v) => rows.push(v),
            Err(err @ (Error::NotPositiveDefinite { .. } | Error::Numerical(_))) => {
                log::warn!("slope grid truncated: {err}");
                truncated = true;
                break;
            }
            Err(err) => return Err(err),
        }
    }
    let prior: Vec<(f64, f64)> = rows.iter().map(|r| (r.0, r.1)).collect();
    let lik: Vec<(f64, f64)> = rows.iter().map(|r| (r.0, r.2)).collect();
    Ok(TailSlopes {
        prior: fit_tail_slope(&prior, log_regressor)?,
        likelihood: fit_tail_slope(&lik, log_regressor)?,
        thetas: rows.iter().map(|r| r.0).collect(),
        log_prior: rows.iter().map(|r| r.1).collect(),
        log_lik: rows.iter().map(|r| r.2).collect(),
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::RegressionBasis;
    use crate::kernel::{eval_kernel, KernelSpec};
    use crate::model::build_model;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_design(rng: &mut ChaCha8Rng, n: usize, r: usize) -> DesignSet {
        DesignSet::new((0..n).map(|_| (0..r).map(|_| rng.random::<f64>()).collect()).collect()).unwrap()
    }

    fn circle(n: usize, radius: f64) -> DesignSet {
        let angles = [0.3f64, 1.4, 2.9, 4.6, 5.5, 6.0];
        DesignSet::new(angles[..n].iter().map(|a| vec![radius * a.cos(), radius * a.sin()]).collect()).unwrap()
    }

    #[test]
    fn distance_powers() {
        let two = DesignSet::from_1d(&[0.0, 1.0]).unwrap();
        for q in [0.5, 1.0, 2.0] {
            assert_eq!(distance_power_matrix(&two, q).unwrap(), DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        }
        let three = DesignSet::from_1d(&[0.0, 1.0, 2.0]).unwrap();
        let d2 = distance_power_matrix(&three, 2.0).unwrap();
        assert_eq!(d2, DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 4.0, 1.0, 0.0, 1.0, 4.0, 1.0, 0.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_design(&mut rng, 6, 2);
        let d6 = distance_power_matrix(&d, 6.0).unwrap();
        let cube = distance_power_matrix(&d, 2.0).unwrap().map(|v| v * v * v);
        assert!((d6 - cube).amax() < 1e-13);
        assert!(distance_power_matrix(&d, 0.0).is_err());
    }

    #[test]
    fn spectrum_examples() {
        let four = DesignSet::new(vec![vec![0.0, 0.0], vec![1.0, 0.2], vec![0.3, 1.1], vec![1.4, 1.3]]).unwrap();
        let s = signed_spectrum(&distance_power_matrix(&four, 1.0).unwrap(), TolPolicy::Default).unwrap();
        assert_eq!((s.n_positive, s.n_negative, s.n_zero), (1, 3, 0));

        let square = DesignSet::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        let s = signed_spectrum(&distance_power_matrix(&square, 2.0).unwrap(), TolPolicy::Default).unwrap();
        assert_eq!(s.rank(), 3);

        let line = DesignSet::from_1d(&[0.0, 1.0, 2.0]).unwrap();
        let m = distance_power_matrix(&line, 2.0).unwrap();
        assert!((m.determinant() - 8.0).abs() < 1e-12);
        assert_eq!(signed_spectrum(&m, TolPolicy::Default).unwrap().rank(), 3);

        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(matches!(signed_spectrum(&asym, TolPolicy::Default), Err(Error::Input(_))));
    }

    #[test]
    fn schoenberg_signature() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let n = rng.random_range(3..=12);
            let r = rng.random_range(1..=3);
            let d = random_design(&mut rng, n, r);
            for q in [0.5, 1.0, 1.5] {
                let m = distance_power_matrix(&d, q).unwrap();
                let s = signed_spectrum(&m, TolPolicy::Default).unwrap();
                assert_eq!((s.n_positive, s.n_negative, s.n_zero), (1, n - 1, 0), "trial {trial} q {q}");
                let half = signed_spectrum(&m, TolPolicy::Absolute(0.5 * s.tolerance)).unwrap();
                assert_eq!((half.n_positive, half.n_negative), (s.n_positive, s.n_negative));
            }
        }
    }

    #[test]
    fn gower_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let r = rng.random_range(1..=3);
            let n = rng.random_range(r + 3..=12);
            let d = random_design(&mut rng, n, r);
            let s = signed_spectrum(&distance_power_matrix(&d, 2.0).unwrap(), TolPolicy::Relative(1e-10)).unwrap();
            assert_eq!(s.rank(), r + 2);
        }
        // points on spheres: rank drops to r + 1
        for r in [2usize, 3] {
            let pts: Vec<Vec<f64>> = (0..8)
                .map(|_| {
                    let v: Vec<f64> = (0..r).map(|_| rng.random::<f64>() - 0.5).collect();
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    v.iter().map(|x| 1.0 + 2.0 * x / norm).collect()
                })
                .collect();
            let d = DesignSet::new(pts).unwrap();
            let s = signed_spectrum(&distance_power_matrix(&d, 2.0).unwrap(), TolPolicy::Relative(1e-10)).unwrap();
            assert_eq!(s.rank(), r + 1);
        }
    }

    #[test]
    fn leading_slot_follows_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = random_design(&mut rng, 5, 2);
        let se = KernelSpec::squared_exponential();
        let p0 = expansion_report(&build_model(d.clone(), RegressionBasis::None, se).unwrap()).unwrap();
        assert_eq!(p0.k1, Some(Slot::Power { k: 0 }));
        assert_eq!(p0.d.projected_rank, 1);
        let p1 = expansion_report(&build_model(d.clone(), RegressionBasis::Constant, se).unwrap()).unwrap();
        assert!(matches!(p1.k1, Some(Slot::Power { k }) if k >= 1));
        let lin = expansion_report(&build_model(d, RegressionBasis::Linear, se).unwrap()).unwrap();
        assert_eq!(lin.k1, Some(Slot::Power { k: 2 }));
    }

    #[test]
    fn case_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d6 = random_design(&mut rng, 6, 2);
        // linear basis on 6 generic points: WᵀD^(2)W is nonsingular
        let r = expansion_report(&build_model(d6.clone(), RegressionBasis::Linear, KernelSpec::squared_exponential()).unwrap()).unwrap();
        assert_eq!((r.case, r.l), (Case::OneA, 1.0));
        assert_eq!((r.predicted_prior_exponent, r.predicted_lik_exponent), (-3.0, 0.0));
        assert!(r.perturbed_nonsingular);
        // constant basis: rank-2 WᵀD^(1)W completed by D^(2)
        let r = expansion_report(&build_model(d6.clone(), RegressionBasis::Constant, KernelSpec::rational_quadratic(1.0)).unwrap()).unwrap();
        assert_eq!(r.case, Case::OneB);
        assert_eq!((r.predicted_prior_exponent, r.predicted_lik_exponent), (-1.0, -1.0));
        assert!(r.perturbed_nonsingular);
        // noninteger Matérn: the fractional slot follows D^(1)
        let r = expansion_report(&build_model(d6.clone(), RegressionBasis::Constant, KernelSpec::matern(1.5)).unwrap()).unwrap();
        assert_eq!(r.k2, Some(Slot::Fractional { nu: 1.5 }));
        assert_eq!((r.case, r.l), (Case::OneB, 0.5));
        // integer Matérn ν = 1 with a constant basis sits on the log branch
        let r = expansion_report(&build_model(d6.clone(), RegressionBasis::Constant, KernelSpec::matern(1.0)).unwrap()).unwrap();
        assert_eq!(r.branch, Branch::MaternLog);
        assert_eq!((r.g.log_power, r.g_star.log_power, r.g_star.exponent), (1, -1, 0.0));
        // p = 0 in the plane: rank-one D^(0), D^(1) cannot fill its kernel
        let d5 = random_design(&mut rng, 5, 2);
        let r = expansion_report(&build_model(d5, RegressionBasis::None, KernelSpec::squared_exponential()).unwrap()).unwrap();
        assert_eq!(r.case, Case::TwoUsual);
        assert_eq!((r.predicted_prior_exponent, r.predicted_lik_exponent), (1.0, -3.0));
    }

    #[test]
    fn special_subcase_on_a_centred_circle() {
        // H = (x₁, x₂) and |x|² = 4: WᵀD^(1)W = 8·WᵀD^(0)W, both rank one
        let m = build_model(circle(4, 2.0), RegressionBasis::Custom(vec![vec![1, 0], vec![0, 1]]), KernelSpec::squared_exponential()).unwrap();
        let r = expansion_report(&m).unwrap();
        assert_eq!(r.case, Case::TwoSpecial);
        assert_eq!(r.g.terms, vec![(1.0, 0.0), (-8.0, 2.0)]);
        assert_eq!(r.k2, Some(Slot::Power { k: 2 }));
        assert_eq!((r.predicted_prior_exponent, r.predicted_lik_exponent), (-1.0, -1.0));
        // Matérn has no special subcase
        let r = expansion_report(&m.with_kernel(KernelSpec::matern(2.5)).unwrap()).unwrap();
        assert_eq!(r.case, Case::Two);
    }

    #[test]
    fn scope_errors() {
        let d = DesignSet::from_1d(&[0.0, 1.0, 2.5]).unwrap();
        let m = build_model(d.clone(), RegressionBasis::Constant, KernelSpec::matern(0.5)).unwrap();
        assert!(matches!(expansion_report(&m), Err(Error::Domain(_))));
        let m = build_model(d.clone(), RegressionBasis::Constant, KernelSpec::power_exponential(1.0)).unwrap();
        assert!(matches!(nondegeneracy_check(&m, &[1.0, 2.0, 0.0]), Err(Error::Domain(_))));
        let m = build_model(d, RegressionBasis::Linear, KernelSpec::squared_exponential()).unwrap();
        assert!(matches!(expansion_report(&m), Err(Error::Unsupported(_))));
    }

    #[test]
    fn nondegeneracy_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = random_design(&mut rng, 6, 2);
        let m = build_model(d.clone(), RegressionBasis::Constant, KernelSpec::squared_exponential()).unwrap();
        let flat = nondegeneracy_check(&m, &[2.5; 6]).unwrap();
        assert!(!flat.passes);
        assert_eq!(flat.margin, 0.0);

        let m0 = build_model(d, RegressionBasis::None, KernelSpec::matern(2.5)).unwrap();
        let y: Vec<f64> = (0..6).map(|_| rng.random::<f64>() - 0.5).collect();
        let rep = nondegeneracy_check(&m0, &y).unwrap();
        assert!(rep.passes && rep.critical_subspace_dim > 0);
        assert!((0.0..=1.0).contains(&rep.margin));

        // remove the critical component: y = W (c − Z Zᵀ c)
        for model in [&m, &m0] {
            let z = critical_subspace(model).unwrap();
            let c = DMatrix::from_fn(model.m(), 1, |_, _| rng.random::<f64>() - 0.5);
            let v = &c - &z * (z.transpose() * &c);
            let y = model.w() * v;
            let rep = nondegeneracy_check(model, y.as_slice()).unwrap();
            assert!(!rep.passes, "margin {}", rep.margin);
        }
    }

    #[test]
    fn intersection_terminates_within_n_slots() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let n = rng.random_range(3..=8);
            let r = rng.random_range(1..=3);
            let d = random_design(&mut rng, n, r);
            for basis in [RegressionBasis::None, RegressionBasis::Constant] {
                let m = build_model(d.clone(), basis, KernelSpec::rational_quadratic(1.5)).unwrap();
                let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                let rep = nondegeneracy_check(&m, &y).unwrap();
                assert!(rep.intersection_depth <= n);
            }
        }
    }

    #[test]
    fn slope_fits() {
        let grid = log_grid(1e2, 1e4, 17);
        let exact: Vec<(f64, f64)> = grid.iter().map(|&t| (t, -2.0 * t.ln() + 0.7)).collect();
        let f = fit_tail_slope(&exact, false).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-12 && (f.intercept - 0.7).abs() < 1e-10);

        let with_log: Vec<(f64, f64)> = grid.iter().map(|&t| (t, -t.ln() + t.ln().ln())).collect();
        let plain = fit_tail_slope(&with_log, false).unwrap();
        assert!(plain.slope > -1.0);
        let two = fit_tail_slope(&with_log, true).unwrap();
        assert!((two.slope + 1.0).abs() < 0.02);
        assert!((two.log_coefficient.unwrap() - 1.0).abs() < 0.02);

        assert!(fit_tail_slope(&exact[..7], false).is_err());
        assert!(fit_tail_slope(&exact[..9], false).is_err()); // one decade only
        let mut bad = exact.clone();
        bad[3].1 = f64::NEG_INFINITY;
        assert!(matches!(fit_tail_slope(&bad, false), Err(Error::Input(_))));
    }

    #[test]
    fn inverse_norm_growth() {
        let grid = log_grid(1e2, 1e4, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let d = random_design(&mut rng, 5, 2);
        let m = build_model(d, RegressionBasis::None, KernelSpec::matern(1.5)).unwrap();
        let rep = inverse_norm_exponent(&m, &grid).unwrap();
        assert_eq!(rep.predicted, 3.0);
        assert!(rep.measured <= 3.0 + 0.15, "{}", rep.measured);

        let d = random_design(&mut rng, 4, 2);
        let m = build_model(d, RegressionBasis::Constant, KernelSpec::squared_exponential()).unwrap();
        let rep = inverse_norm_exponent(&m, &grid).unwrap();
        assert_eq!(rep.intersection_depth, Some(2));
        assert!(rep.measured <= rep.predicted + 0.15);

        // n = 2, constant basis: WᵀΣW = 1 − K(d/θ)
        let d = DesignSet::from_1d(&[0.0, 0.7]).unwrap();
        let m = build_model(d, RegressionBasis::Constant, KernelSpec::squared_exponential()).unwrap();
        let rep = inverse_norm_exponent(&m, &grid).unwrap();
        for (t, got) in rep.thetas.iter().zip(&rep.log_norms) {
            let x: f64 = 0.49 / (t * t);
            let want = -(-(-x).exp_m1()).ln();
            assert!((got - want).abs() < 1e-12, "θ {t}: {got} vs {want}");
        }
        assert!((rep.measured - 2.0).abs() < 1e-3);
        assert!(eval_kernel(&KernelSpec::squared_exponential(), 0.7, 1e2).unwrap() < 1.0);
    }

    #[test]
    fn unisolvence_depths() {
        let line = DesignSet::from_1d(&[0.0, 0.4, 1.0]).unwrap();
        let m = build_model(line, RegressionBasis::None, KernelSpec::squared_exponential()).unwrap();
        assert_eq!(unisolvence_depth(&m), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = build_model(random_design(&mut rng, 7, 2), RegressionBasis::None, KernelSpec::squared_exponential()).unwrap();
        assert_eq!(unisolvence_depth(&m), 3);
    }
}
