//! The marginal posterior `π(θ | y) ∝ π(θ) L(y | θ)`: normalization by
//! adaptive quadrature on `u = log θ`, conditional draws of `(β, σ²)`, the
//! MAP estimate and the predictive mixture over the θ grid.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::asymptotics::{in_scope, nondegeneracy_check, NondegeneracyReport};
use crate::design::sq_distance;
use crate::error::{Error, Result};
use crate::io::ser_f64_vec;
use crate::kernel::{Family, KernelSpec};
use crate::likelihood::{check_nondegenerate, log_integrated_likelihood, rss, DEGENERACY_RTOL};
use crate::model::{correlation_state, with_parts, CorrelationState, Frame, GpModel, Parts, Precision};
use crate::prior::{log_reference_prior, Form};
use crate::real::Real;

/// A tail slope (of `log π L θ` against `u`) flatter than this does not count as decay.
const MIN_DECAY_SLOPE: f64 = 1e-2;

/// Controls for [`build_posterior_curve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureOptions {
    /// Target relative error of the normalizer.
    pub rtol: f64,
    /// Largest acceptable share of the mass in an endpoint panel or beyond the grid.
    pub tail_tol: f64,
    /// Bisection rounds before giving up.
    pub max_refinements: usize,
    pub initial_panels: usize,
    /// Two-decade extensions allowed on each side.
    pub max_extensions: usize,
    /// Integrate even when `y` fails the nondegeneracy check.
    pub force: bool,
    /// Initial θ bracket. Defaults to `[1e-4·d̄, 1e4·d̄]`, `d̄` the median distance.
    pub bounds: Option<(f64, f64)>,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions {
            rtol: 1e-6,
            tail_tol: 1e-8,
            max_refinements: 40,
            initial_panels: 32,
            max_extensions: 10,
            force: false,
            bounds: None,
        }
    }
}

impl QuadratureOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.rtol < 1.0) {
            return Err(Error::Input(format!("rtol must lie in (0, 1), got {}", self.rtol)));
        }
        if !(self.tail_tol > 0.0 && self.tail_tol < 1.0) {
            return Err(Error::Input(format!("tail_tol must lie in (0, 1), got {}", self.tail_tol)));
        }
        if self.initial_panels < 2 {
            return Err(Error::Input("need at least 2 initial panels".into()));
        }
        if let Some(b) = self.bounds {
            check_bounds(b)?;
        }
        Ok(())
    }
}

fn check_bounds((lo, hi): (f64, f64)) -> Result<()> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::Input(format!("θ bounds must satisfy 0 < lo < hi < ∞, got ({lo}, {hi})")));
    }
    Ok(())
}

/// Default θ bracket `[1e-4·d̄, 1e4·d̄]`, `d̄` the median pairwise distance.
pub fn default_bounds(model: &GpModel) -> (f64, f64) {
    let d = model.design().median_distance();
    (1e-4 * d, 1e4 * d)
}

/// Convergence record of the normalizing quadrature.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuadratureDiagnostics {
    /// Bisection rounds.
    pub refinements: usize,
    pub panels: usize,
    pub nodes: usize,
    pub extensions_lower: usize,
    pub extensions_upper: usize,
    /// Share of the total mass in the first and last panel.
    pub lower_mass_fraction: f64,
    pub upper_mass_fraction: f64,
    /// Panel error estimates plus tail-closure uncertainty, over the total mass.
    pub estimated_rel_error: f64,
    /// Power-law extrapolated mass beyond each end, as a share of the total.
    pub lower_tail_fraction: f64,
    pub upper_tail_fraction: f64,
    /// Fitted slope of `log(π L θ)` against `log θ` over the outer decade.
    pub lower_tail_slope: Option<f64>,
    pub upper_tail_slope: Option<f64>,
    /// The grid stops where `WᵀΣ_θW` is no longer resolved at working precision.
    pub truncated_lower_by_floor: bool,
    pub truncated_upper_by_floor: bool,
    /// `log ∫ π L dθ` over `[interior_lower, interior_upper]` only.
    pub interior_log_integral: f64,
    pub interior_lower: f64,
    pub interior_upper: f64,
    pub tail_tol_met: bool,
}

/// Samples of the unnormalized log posterior on an adaptive θ grid.
#[derive(Clone, Debug, Serialize)]
pub struct PosteriorCurve {
    pub theta_grid: Vec<f64>,
    #[serde(serialize_with = "ser_f64_vec")]
    pub log_prior: Vec<f64>,
    pub log_lik: Vec<f64>,
    #[serde(serialize_with = "ser_f64_vec")]
    pub log_post_unnorm: Vec<f64>,
    /// `log ∫ π(θ) L(y | θ) dθ`, tails included.
    pub log_normalizer: f64,
    pub quadrature_diag: QuadratureDiagnostics,
    pub nondegeneracy: Option<NondegeneracyReport>,
    #[serde(skip)]
    panels: Vec<(f64, f64)>,
    /// `log θ` of each node exactly as evaluated.
    #[serde(skip)]
    us: Vec<f64>,
}

impl PosteriorCurve {
    /// Normalized posterior density `π(θ | y)` at the grid nodes.
    pub fn density(&self) -> Vec<f64> {
        self.log_post_unnorm.iter().map(|g| (g - self.log_normalizer).exp()).collect()
    }

    /// Mass `∫ π(θ | y) dθ` over the grid, by composite Simpson in `log θ` on
    /// the panels the quadrature settled on.
    pub fn grid_mass(&self) -> f64 {
        let at: HashMap<u64, f64> = self
            .us
            .iter()
            .zip(&self.log_post_unnorm)
            .map(|(u, g)| (u.to_bits(), (g + u - self.log_normalizer).exp()))
            .collect();
        self.panels
            .iter()
            .map(|&p| {
                let f: Vec<f64> = panel_nodes(p).iter().map(|u| at[&u.to_bits()]).collect();
                (p.1 - p.0) / 12.0 * (f[0] + 4.0 * f[1] + 2.0 * f[2] + 4.0 * f[3] + f[4])
            })
            .sum()
    }
}

#[derive(Clone, Copy, Debug)]
struct Node {
    lp: f64,
    ll: f64,
}

/// Pivot ratio of `WᵀΣ_θW` below which a node counts as unresolved. Looser than
/// the floor used for slope fits: the prior differentiates through the factor.
fn posterior_floor(model: &GpModel) -> f64 {
    match model.precision() {
        Precision::Double => 1e-10,
        Precision::Extended => 1e-24,
    }
}

/// `None` when θ lies beyond what the working precision resolves.
fn eval_node(model: &GpModel, y: &[f64], theta: f64) -> Result<Option<Node>> {
    let st = match correlation_state(model, theta) {
        Ok(s) => s,
        Err(Error::NotPositiveDefinite { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    if st.sigma_w_pivot_ratio() < posterior_floor(model) {
        return Ok(None);
    }
    let lp = match log_reference_prior(model, &st, Form::W) {
        Ok(v) => v,
        Err(Error::Numerical(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let ll = match log_integrated_likelihood(model, &st, y) {
        Ok(v) => v,
        Err(Error::Numerical(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    Ok(Some(Node { lp, ll }))
}

/// Memoized node evaluations keyed by the bit pattern of `u`.
struct Nodes<'a> {
    model: &'a GpModel,
    y: &'a [f64],
    map: HashMap<u64, Option<Node>>,
}

impl<'a> Nodes<'a> {
    fn ensure(&mut self, us: impl Iterator<Item = f64>) -> Result<()> {
        let mut missing: Vec<f64> = us.filter(|u| !self.map.contains_key(&u.to_bits())).collect();
        missing.sort_by(f64::total_cmp);
        missing.dedup();
        let (model, y) = (self.model, self.y);
        let vals: Vec<Result<Option<Node>>> = missing.par_iter().map(|&u| eval_node(model, y, u.exp())).collect();
        for (u, v) in missing.iter().zip(vals) {
            self.map.insert(u.to_bits(), v?);
        }
        Ok(())
    }

    fn node(&self, u: f64) -> Option<Node> {
        self.map[&u.to_bits()]
    }

    /// `log(π L θ)`, the integrand on the `u` scale.
    fn log_f(&self, u: f64) -> Option<f64> {
        self.node(u).map(|n| n.lp + n.ll + u)
    }
}

/// The five Simpson nodes of a panel. Quarter points are midpoints of
/// midpoints so that a bisected panel reuses its parent's nodes bit for bit.
fn panel_nodes((a, b): (f64, f64)) -> [f64; 5] {
    let c = 0.5 * (a + b);
    [a, 0.5 * (a + c), c, 0.5 * (c + b), b]
}

fn all_nodes(panels: &[(f64, f64)]) -> impl Iterator<Item = f64> + '_ {
    panels.iter().flat_map(|&p| panel_nodes(p))
}

#[derive(Clone, Copy, Debug, Default)]
struct Tail {
    mass: f64,
    uncertainty: f64,
    slope: Option<f64>,
    decaying: bool,
}

/// Points at which the tail closure is fitted: the outer decade at 20
/// equal steps, fixed by the end alone so that refining the interior grid
/// leaves the closure unchanged.
const CLOSURE_STEPS: usize = 20;

fn closure_points(end: f64, sign: f64) -> Vec<f64> {
    let decade = std::f64::consts::LN_10;
    (0..=CLOSURE_STEPS).map(|k| end - sign * decade * k as f64 / CLOSURE_STEPS as f64).collect()
}

/// Least-squares slope of `log f` against `x(u)` over the first `count` closure points.
fn end_slope(nodes: &Nodes, pts: &[f64], count: usize, x: &dyn Fn(f64) -> f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = pts[..count]
        .iter()
        .filter_map(|&u| nodes.log_f(u).filter(|v| v.is_finite()).map(|v| (x(u), v)))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let mv = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - mv)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Closure beyond one end (`sign` +1 for the upper end).
///
/// The default model is a power law in θ, `f ∝ e^{s u}`, giving mass `f/|s|`.
/// With `log_law` (upper end, where the prior and likelihood carry powers of
/// `log θ`) the model is `f ∝ u^{−a}` instead, giving `f u/(a − 1)`.
/// The uncertainty is the change when the fit uses only the outer half decade.
fn tail_closure(nodes: &Nodes, end: f64, shift: f64, sign: f64, log_law: bool) -> Tail {
    let lf_end = nodes.log_f(end).unwrap();
    if lf_end == f64::NEG_INFINITY {
        return Tail { mass: 0.0, uncertainty: 0.0, slope: None, decaying: true };
    }
    let f_end = (lf_end - shift).exp();
    let pts = closure_points(end, sign);
    let (all, half) = (pts.len(), CLOSURE_STEPS / 2 + 1);
    let undecided = |slope| Tail { mass: f64::INFINITY, uncertainty: f64::INFINITY, slope, decaying: false };
    let Some(s) = end_slope(nodes, &pts, all, &|u| u) else {
        return undecided(None);
    };
    let log_law = log_law && sign > 0.0 && end > 1.0;
    let mass_for = |count: usize| -> Option<f64> {
        if log_law {
            let a = -end_slope(nodes, &pts, count, &|u: f64| u.ln())?;
            (a - 1.0 > MIN_DECAY_SLOPE).then(|| f_end * end / (a - 1.0))
        } else {
            let rate = -sign * end_slope(nodes, &pts, count, &|u| u)?;
            (rate > MIN_DECAY_SLOPE).then(|| f_end / rate)
        }
    };
    let Some(mass) = mass_for(all) else {
        return undecided(Some(s));
    };
    let uncertainty = match mass_for(half) {
        Some(m) => (m - mass).abs(),
        None => mass,
    };
    Tail { mass, uncertainty, slope: Some(s), decaying: true }
}

struct Integral {
    shift: f64,
    interior: f64,
    panel_err: Vec<f64>,
    panel_mass: Vec<f64>,
    lower: Tail,
    upper: Tail,
}

impl Integral {
    fn total(&self) -> f64 {
        self.interior + self.lower.mass + self.upper.mass
    }
    fn rel_error(&self) -> f64 {
        (self.panel_err.iter().sum::<f64>() + self.lower.uncertainty + self.upper.uncertainty) / self.total()
    }
}

fn integrate(nodes: &mut Nodes, panels: &[(f64, f64)], log_law: bool) -> Result<Integral> {
    let (lo, hi) = (panels[0].0, panels[panels.len() - 1].1);
    nodes.ensure(closure_points(lo, -1.0).into_iter().chain(closure_points(hi, 1.0)))?;
    let shift = all_nodes(panels).filter_map(|u| nodes.log_f(u)).fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(Error::Numerical("π(θ)L(y | θ) vanishes on the whole θ bracket".into()));
    }
    let mut panel_err = Vec::with_capacity(panels.len());
    let mut panel_mass = Vec::with_capacity(panels.len());
    for &p in panels {
        let f: Vec<f64> = panel_nodes(p).iter().map(|&u| (nodes.log_f(u).unwrap() - shift).exp()).collect();
        let h = p.1 - p.0;
        let s1 = h / 6.0 * (f[0] + 4.0 * f[2] + f[4]);
        let s2 = h / 12.0 * (f[0] + 4.0 * f[1] + 2.0 * f[2] + 4.0 * f[3] + f[4]);
        panel_mass.push(s2);
        panel_err.push((s2 - s1).abs() / 15.0);
    }
    Ok(Integral {
        shift,
        interior: panel_mass.iter().sum(),
        lower: tail_closure(nodes, lo, shift, -1.0, false),
        upper: tail_closure(nodes, hi, shift, 1.0, log_law),
        panel_err,
        panel_mass,
    })
}

/// Integer-ν Matérn tails carry powers of `log θ`.
fn log_tail(model: &GpModel) -> bool {
    let k = model.kernel();
    k.family == Family::Matern && k.nu().fract() == 0.0
}

/// Panels of roughly `width` covering `[a, b]`.
fn uniform_panels(a: f64, b: f64, width: f64) -> Vec<(f64, f64)> {
    let k = ((b - a) / width).ceil().max(1.0) as usize;
    let h = (b - a) / k as f64;
    (0..k).map(|i| (a + h * i as f64, if i + 1 == k { b } else { a + h * (i + 1) as f64 })).collect()
}

/// Keeps the run of fully resolved panels around the largest resolved value.
/// Returns whether panels were dropped below and above.
fn keep_resolved_run(nodes: &Nodes, panels: &mut Vec<(f64, f64)>) -> Result<(bool, bool)> {
    let good: Vec<bool> = panels.iter().map(|&p| panel_nodes(p).iter().all(|&u| nodes.node(u).is_some())).collect();
    let best = (0..panels.len())
        .filter(|&i| good[i])
        .map(|i| (i, panel_nodes(panels[i]).iter().map(|&u| nodes.log_f(u).unwrap()).fold(f64::NEG_INFINITY, f64::max)))
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
    let Some((i, _)) = best else {
        return Err(Error::Numerical("no θ node in the bracket is resolved at working precision".into()));
    };
    let mut lo = i;
    while lo > 0 && good[lo - 1] {
        lo -= 1;
    }
    let mut hi = i;
    while hi + 1 < panels.len() && good[hi + 1] {
        hi += 1;
    }
    let cut = (lo > 0, hi + 1 < panels.len());
    panels.truncate(hi + 1);
    panels.drain(..lo);
    Ok(cut)
}

/// Normalizes `π(θ) L(y | θ)` over `θ > 0`.
///
/// Adaptive Simpson on `u = log θ`: panels whose error estimate exceeds their
/// share of `rtol` are bisected; ends are pushed out two decades at a time
/// until the integrand decays and the outer mass is below `tail_tol`; what
/// lies beyond the final grid is closed with a fitted power law.
pub fn build_posterior_curve(model: &GpModel, y: &[f64], opts: &QuadratureOptions) -> Result<PosteriorCurve> {
    opts.validate()?;
    model.check_obs(y)?;
    let nondegeneracy = nondegeneracy_gate(model, y, opts.force)?;
    let (lo, hi) = opts.bounds.unwrap_or_else(|| default_bounds(model));
    let mut nodes = Nodes { model, y, map: HashMap::new() };
    let width0 = (hi.ln() - lo.ln()) / opts.initial_panels as f64;
    let mut panels = uniform_panels(lo.ln(), hi.ln(), width0);
    let two_decades = 2.0 * std::f64::consts::LN_10;
    let mut blocked = [false, false];
    let mut extensions = [0usize, 0];
    let mut refinements = 0;
    let integral = loop {
        nodes.ensure(all_nodes(&panels))?;
        let (cut_lo, cut_hi) = keep_resolved_run(&nodes, &mut panels)?;
        blocked[0] |= cut_lo;
        blocked[1] |= cut_hi;
        let int = integrate(&mut nodes, &panels, log_tail(model))?;
        let total = int.total();
        let end_frac = [int.panel_mass[0] / total, int.panel_mass[panels.len() - 1] / total];
        let tails = [int.lower, int.upper];
        let mut extended = false;
        for side in 0..2 {
            let unmet = end_frac[side] > opts.tail_tol || !tails[side].decaying || tails[side].mass / total > opts.tail_tol;
            if unmet && !blocked[side] && extensions[side] < opts.max_extensions {
                extensions[side] += 1;
                extended = true;
                if side == 0 {
                    let a = panels[0].0;
                    let mut fresh = uniform_panels(a - two_decades, a, width0);
                    fresh.extend_from_slice(&panels);
                    panels = fresh;
                } else {
                    let b = panels[panels.len() - 1].1;
                    panels.extend(uniform_panels(b, b + two_decades, width0));
                }
            }
        }
        if extended {
            continue;
        }
        let span = panels[panels.len() - 1].1 - panels[0].0;
        let flagged: Vec<bool> = panels
            .iter()
            .zip(&int.panel_err)
            .map(|(p, e)| *e > opts.rtol * int.interior * (p.1 - p.0) / span && p.1 - p.0 > 1e-9)
            .collect();
        if !flagged.iter().any(|&f| f) {
            break int;
        }
        refinements += 1;
        if refinements > opts.max_refinements {
            return Err(Error::Quadrature(format!(
                "no convergence after {} refinements: {} panels, estimated relative error {:e}",
                opts.max_refinements,
                panels.len(),
                int.rel_error()
            )));
        }
        panels = panels
            .iter()
            .zip(&flagged)
            .flat_map(|(&(a, b), &f)| {
                let c = 0.5 * (a + b);
                if f { vec![(a, c), (c, b)] } else { vec![(a, b)] }
            })
            .collect();
    };
    for (tail, side) in [(&integral.lower, "θ → 0"), (&integral.upper, "θ → ∞")] {
        if !tail.decaying {
            return Err(Error::Impropriety(format!(
                "π(θ)L(y | θ) does not decay toward {side} (slope of log π·L·θ against log θ over the outer decade: {})",
                tail.slope.map_or("undetermined".to_string(), |s| format!("{s:.3}"))
            )));
        }
    }
    let total = integral.total();
    let lower_mass_fraction = integral.panel_mass[0] / total;
    let upper_mass_fraction = integral.panel_mass[panels.len() - 1] / total;
    let (lower_tail_fraction, upper_tail_fraction) = (integral.lower.mass / total, integral.upper.mass / total);
    let tail_tol_met = [lower_mass_fraction, upper_mass_fraction, lower_tail_fraction, upper_tail_fraction]
        .iter()
        .all(|&f| f <= opts.tail_tol);
    if !tail_tol_met {
        log::warn!(
            "tail tolerance {:e} not met (endpoint fractions {lower_mass_fraction:e}/{upper_mass_fraction:e}, \
             extrapolated {lower_tail_fraction:e}/{upper_tail_fraction:e}); the extrapolated tails are in the error budget",
            opts.tail_tol
        );
    }
    let mut us: Vec<f64> = all_nodes(&panels).collect();
    us.sort_by(f64::total_cmp);
    us.dedup();
    let node_vals: Vec<Node> = us.iter().map(|&u| nodes.node(u).unwrap()).collect();
    let diag = QuadratureDiagnostics {
        refinements,
        panels: panels.len(),
        nodes: us.len(),
        extensions_lower: extensions[0],
        extensions_upper: extensions[1],
        lower_mass_fraction,
        upper_mass_fraction,
        estimated_rel_error: integral.rel_error(),
        lower_tail_fraction,
        upper_tail_fraction,
        lower_tail_slope: integral.lower.slope,
        upper_tail_slope: integral.upper.slope,
        truncated_lower_by_floor: blocked[0],
        truncated_upper_by_floor: blocked[1],
        interior_log_integral: integral.shift + integral.interior.ln(),
        interior_lower: us[0].exp(),
        interior_upper: us[us.len() - 1].exp(),
        tail_tol_met,
    };
    Ok(PosteriorCurve {
        theta_grid: us.iter().map(|u| u.exp()).collect(),
        log_prior: node_vals.iter().map(|n| n.lp).collect(),
        log_lik: node_vals.iter().map(|n| n.ll).collect(),
        log_post_unnorm: node_vals.iter().map(|n| n.lp + n.ll).collect(),
        log_normalizer: integral.shift + total.ln(),
        quadrature_diag: diag,
        nondegeneracy,
        panels,
        us,
    })
}

fn nondegeneracy_gate(model: &GpModel, y: &[f64], force: bool) -> Result<Option<NondegeneracyReport>> {
    let report = if in_scope(model.kernel()) {
        match nondegeneracy_check(model, y) {
            Ok(r) => Some(r),
            Err(e) if force => {
                log::warn!("nondegeneracy check skipped: {e}");
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        log::info!("nondegeneracy check not available for {}", model.kernel().label());
        None
    };
    if let Some(r) = &report
        && !r.passes
        && !force
    {
        return Err(Error::DegenerateObservation(format!(
            "y fails the nondegeneracy check: its component in the critical subspace is {:e} of ‖Wᵀy‖ \
             (threshold {:e}); the posterior may be improper",
            r.margin, r.threshold
        )));
    }
    let wy = model.contrasts(y)?;
    let norm_wy = wy.iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm_y = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_wy <= DEGENERACY_RTOL * norm_y {
        return Err(Error::Impropriety(
            "Wᵀy = 0: the integrated likelihood is infinite at every θ, so no endpoint mass decays".into(),
        ));
    }
    Ok(report)
}

/// Recomputes the normalizer with every panel of `curve` bisected once.
pub fn doubled_log_normalizer(model: &GpModel, y: &[f64], curve: &PosteriorCurve) -> Result<f64> {
    let panels: Vec<(f64, f64)> = curve
        .panels
        .iter()
        .flat_map(|&(a, b)| {
            let c = 0.5 * (a + b);
            [(a, c), (c, b)]
        })
        .collect();
    let mut nodes = Nodes { model, y, map: HashMap::new() };
    nodes.ensure(all_nodes(&panels))?;
    if all_nodes(&panels).any(|u| nodes.node(u).is_none()) {
        return Err(Error::Numerical("doubled grid contains unresolved θ nodes".into()));
    }
    let int = integrate(&mut nodes, &panels, log_tail(model))?;
    Ok(int.shift + int.total().ln())
}

/// `log ∫_{lo}^{hi} π(θ) L(y | θ) dθ` by the trapezoid rule on `count`
/// equally spaced nodes in `log θ`. Independent of the adaptive machinery.
pub fn fixed_grid_log_integral(model: &GpModel, y: &[f64], lo: f64, hi: f64, count: usize) -> Result<f64> {
    check_bounds((lo, hi))?;
    if count < 2 {
        return Err(Error::Input("trapezoid rule needs at least 2 nodes".into()));
    }
    let (a, b) = (lo.ln(), hi.ln());
    let h = (b - a) / (count - 1) as f64;
    let vals: Vec<Result<f64>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let u = if i + 1 == count { b } else { a + h * i as f64 };
            let st = correlation_state(model, u.exp())?;
            Ok(log_reference_prior(model, &st, Form::W)? + log_integrated_likelihood(model, &st, y)? + u)
        })
        .collect();
    let vals = vals.into_iter().collect::<Result<Vec<f64>>>()?;
    let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = vals
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let w = if i == 0 || i + 1 == count { 0.5 } else { 1.0 };
            w * (v - m).exp()
        })
        .sum();
    Ok(m + (h * s).ln())
}

/// Conditional posterior of `(β, σ²)` given θ: `σ² ~ IG(shape, scale)` and
/// `β | σ² ~ N(β̂, σ² (HᵀΣ⁻¹H)⁻¹)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionalMoments {
    pub beta_hat: Vec<f64>,
    /// `(HᵀΣ⁻¹H)⁻¹`, row major.
    pub beta_cov_unit: Vec<Vec<f64>>,
    /// `(n − p)/2`.
    pub shape: f64,
    /// `yᵀΣ⁻¹Q_θy / 2`.
    pub scale: f64,
}

/// One draw from the conditional posterior.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionalDraw {
    pub beta: Vec<f64>,
    pub sigma2: f64,
}

fn gls_beta<T: Real>(p: &Parts<T>, f: &Frame<T>, y: &[f64]) -> Result<(Vec<T>, T, Option<crate::dense::Cholesky<T>>)> {
    let wy = check_nondegenerate(f, y)?;
    let s = rss(p, &wy)?;
    if f.h.cols() == 0 {
        return Ok((Vec::new(), s, None));
    }
    let (sh, cg) = p.gls(f)?;
    let yt: Vec<T> = y.iter().map(|&v| T::from_f64(v)).collect();
    let beta = cg.solve(&sh.tr_matvec(&yt));
    Ok((beta, s, Some(cg)))
}

pub fn conditional_moments(model: &GpModel, state: &CorrelationState, y: &[f64]) -> Result<ConditionalMoments> {
    model.check_obs(y)?;
    with_parts!(state, model, |p, f| {
        let (beta, s, cg) = gls_beta(p, f, y)?;
        let cov = match cg {
            Some(cg) => {
                let inv = cg.inverse();
                (0..inv.rows()).map(|i| inv.row(i).iter().map(|v| v.to_f64()).collect()).collect()
            }
            None => Vec::new(),
        };
        Ok(ConditionalMoments {
            beta_hat: beta.iter().map(|v| v.to_f64()).collect(),
            beta_cov_unit: cov,
            shape: 0.5 * model.m() as f64,
            scale: 0.5 * s.to_f64(),
        })
    })
}

fn draw_t<T: Real, R: Rng + ?Sized>(p: &Parts<T>, f: &Frame<T>, y: &[f64], rng: &mut R) -> Result<ConditionalDraw> {
    let (beta, s, cg) = gls_beta(p, f, y)?;
    let shape = 0.5 * f.w.cols() as f64;
    let gamma = Gamma::new(shape, 1.0).map_err(|e| Error::Numerical(format!("gamma({shape}): {e}")))?;
    let sigma2 = 0.5 * s.to_f64() / gamma.sample(rng);
    let beta = match cg {
        Some(cg) => {
            // β̂ + σ L_G^{-T} z has covariance σ² G⁻¹
            let mut z: Vec<T> = (0..beta.len()).map(|_| T::from_f64(StandardNormal.sample(rng))).collect();
            cg.backward(&mut z);
            let sd = sigma2.sqrt();
            beta.iter().zip(&z).map(|(b, e)| b.to_f64() + sd * e.to_f64()).collect()
        }
        None => Vec::new(),
    };
    if !(sigma2 > 0.0 && sigma2.is_finite()) || beta.iter().any(|b: &f64| !b.is_finite()) {
        return Err(Error::Numerical(format!("conditional draw is not finite (σ² = {sigma2:e})")));
    }
    Ok(ConditionalDraw { beta, sigma2 })
}

/// Draws `(β, σ²)` from their conditional posterior at `state.theta`.
pub fn sample_conditional<R: Rng + ?Sized>(
    model: &GpModel,
    state: &CorrelationState,
    y: &[f64],
    rng: &mut R,
) -> Result<ConditionalDraw> {
    model.check_obs(y)?;
    with_parts!(state, model, |p, f| draw_t(p, f, y, rng))
}

/// Posterior mode of θ.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MapEstimate {
    pub theta: f64,
    pub log_post: f64,
    /// Best node of the coarse grid.
    pub grid_theta: f64,
    /// The same search run on θ instead of `log θ`.
    pub theta_via_theta: f64,
    pub invariance_rel_diff: f64,
    /// The maximum sits in an end cell of the bracket.
    pub boundary: bool,
    pub bounds: (f64, f64),
}

const MAP_GRID: usize = 81;

fn log_post_at(model: &GpModel, y: &[f64], theta: f64) -> Result<f64> {
    Ok(match eval_node(model, y, theta)? {
        Some(n) if !(n.lp + n.ll).is_nan() => n.lp + n.ll,
        _ => f64::NEG_INFINITY,
    })
}

/// Golden-section maximization of `g` on `[a, b]` down to width `tol`.
fn golden_max(mut a: f64, mut b: f64, tol: f64, g: &dyn Fn(f64) -> Result<f64>) -> Result<f64> {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut gc, mut gd) = (g(c)?, g(d)?);
    while b - a > tol {
        if gc >= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - r * (b - a);
            gc = g(c)?;
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + r * (b - a);
            gd = g(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// Maximizes `log π(θ) + log L(y | θ)`: a log-spaced grid locates the mode,
/// then golden section on `u = log θ` refines it to `|Δu| < 1e-8`.
pub fn map_theta(model: &GpModel, y: &[f64], bounds: Option<(f64, f64)>) -> Result<MapEstimate> {
    model.check_obs(y)?;
    let bounds = bounds.unwrap_or_else(|| default_bounds(model));
    check_bounds(bounds)?;
    let (a, b) = (bounds.0.ln(), bounds.1.ln());
    let us: Vec<f64> = (0..MAP_GRID).map(|i| a + (b - a) * i as f64 / (MAP_GRID - 1) as f64).collect();
    let vals = us.par_iter().map(|&u| log_post_at(model, y, u.exp())).collect::<Result<Vec<f64>>>()?;
    let (best, best_val) = vals
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    if best_val == f64::NEG_INFINITY {
        return Err(Error::Numerical("log posterior is -inf on the whole MAP grid".into()));
    }
    let boundary = best == 0 || best == MAP_GRID - 1;
    if boundary {
        log::warn!("MAP search: maximum on the boundary of [{:e}, {:e}]", bounds.0, bounds.1);
    }
    let (ua, ub) = (us[best.saturating_sub(1)], us[(best + 1).min(MAP_GRID - 1)]);
    let u_star = golden_max(ua, ub, 1e-8, &|u| log_post_at(model, y, u.exp()))?;
    let (ta, tb) = (ua.exp(), ub.exp());
    let t_alt = golden_max(ta, tb, 1e-8 * ta, &|t| log_post_at(model, y, t))?;
    let theta = u_star.exp();
    Ok(MapEstimate {
        theta,
        log_post: log_post_at(model, y, theta)?,
        grid_theta: us[best].exp(),
        theta_via_theta: t_alt,
        invariance_rel_diff: (t_alt - theta).abs() / theta,
        boundary,
        bounds,
    })
}

/// Kriging predictive at one θ: Student-t with `dof` degrees of freedom.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KrigingMoments {
    pub mean: f64,
    pub scale: f64,
    pub dof: f64,
}

fn krige_t<T: Real>(
    p: &Parts<T>,
    f: &Frame<T>,
    model: &GpModel,
    kernel: &KernelSpec,
    theta: f64,
    y: &[f64],
    xs: &[Vec<f64>],
) -> Result<Vec<KrigingMoments>> {
    let n = y.len();
    let (beta, s, cg) = gls_beta(p, f, y)?;
    let m = f.w.cols() as f64;
    let sig2 = s.to_f64() / m;
    let yt: Vec<T> = y.iter().map(|&v| T::from_f64(v)).collect();
    let fitted = if beta.is_empty() { vec![T::zero(); n] } else { f.h.matvec(&beta) };
    let resid: Vec<T> = yt.iter().zip(&fitted).map(|(&a, &b)| a - b).collect();
    let v = p.chol.solve(&resid);
    let sh = if beta.is_empty() { None } else { Some(p.gls(f)?.0) };
    let design = model.design();
    xs.iter()
        .map(|x| {
            let k: Vec<T> = (0..n).map(|i| kernel.pair_sq(sq_distance::<T>(x, design.point(i)), theta).0).collect();
            let h: Vec<T> = model.basis().evaluate(x)?.into_iter().map(T::from_f64).collect();
            let mut mean: T = k.iter().zip(&v).map(|(&a, &b)| a * b).sum();
            mean += h.iter().zip(&beta).map(|(&a, &b)| a * b).sum::<T>();
            let mut c = T::one() - p.chol.quad_form(&k);
            if let (Some(sh), Some(cg)) = (&sh, &cg) {
                let u: Vec<T> = h.iter().zip(sh.tr_matvec(&k)).map(|(&a, b)| a - b).collect();
                c += cg.quad_form(&u);
            }
            let c = c.to_f64().max(0.0);
            Ok(KrigingMoments { mean: mean.to_f64(), scale: (sig2 * c).sqrt(), dof: m })
        })
        .collect()
}

/// Universal-kriging predictive moments at fixed θ.
pub fn kriging_moments(model: &GpModel, state: &CorrelationState, y: &[f64], x_new: &[Vec<f64>]) -> Result<Vec<KrigingMoments>> {
    model.check_obs(y)?;
    check_points(model, x_new)?;
    let kernel = model.kernel();
    with_parts!(state, model, |p, f| krige_t(p, f, model, kernel, state.theta, y, x_new))
}

fn check_points(model: &GpModel, x_new: &[Vec<f64>]) -> Result<()> {
    let r = model.design().r();
    for x in x_new {
        if x.len() != r {
            return Err(Error::Input(format!("prediction point {x:?} has dimension {} but the design has {r}", x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("prediction point {x:?} is not finite")));
        }
    }
    Ok(())
}

/// Posterior predictive summary at one point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub x: Vec<f64>,
    pub mean: f64,
    pub lo95: f64,
    pub hi95: f64,
    /// θ nodes that carried weight.
    pub components: usize,
}

/// Mixture CDF `Σ w_k T_ν((v − μ_k)/s_k)`, weights summing to one.
fn mixture_cdf(comps: &[(f64, KrigingMoments)], t: &StudentsT, v: f64) -> f64 {
    comps
        .iter()
        .map(|(w, c)| {
            let z = if c.scale > 0.0 {
                t.cdf((v - c.mean) / c.scale)
            } else if v >= c.mean {
                1.0
            } else {
                0.0
            };
            w * z
        })
        .sum()
}

fn mixture_quantile(comps: &[(f64, KrigingMoments)], t: &StudentsT, q: f64) -> f64 {
    let spread = comps.iter().map(|c| c.1.scale).fold(0.0, f64::max).max(1e-300);
    let lo0 = comps.iter().map(|c| c.1.mean).fold(f64::INFINITY, f64::min);
    let hi0 = comps.iter().map(|c| c.1.mean).fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (lo0 - spread, hi0 + spread);
    let mut step = spread;
    while mixture_cdf(comps, t, lo) > q {
        step *= 2.0;
        lo -= step;
    }
    step = spread;
    while mixture_cdf(comps, t, hi) < q {
        step *= 2.0;
        hi += step;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mixture_cdf(comps, t, mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Posterior predictive at `x_new`: the fixed-θ Student-t predictives mixed
/// over the curve's θ nodes with trapezoid weights in `log θ`. Intervals are
/// central 95% quantiles of the mixture. A point that coincides with a design
/// point returns the observation with a zero-width interval.
pub fn predict(model: &GpModel, y: &[f64], curve: &PosteriorCurve, x_new: &[Vec<f64>]) -> Result<Vec<Prediction>> {
    model.check_obs(y)?;
    check_points(model, x_new)?;
    let design = model.design();
    let tie = 1e-12 * design.max_distance();
    let us: Vec<f64> = curve.theta_grid.iter().map(|t| t.ln()).collect();
    let k = us.len();
    if k < 2 {
        return Err(Error::Input("posterior curve needs at least 2 nodes".into()));
    }
    let logw: Vec<f64> = (0..k)
        .map(|i| {
            let du = 0.5 * (us[(i + 1).min(k - 1)] - us[i.saturating_sub(1)]);
            curve.log_post_unnorm[i] + us[i] + du.ln()
        })
        .collect();
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<(usize, f64)> = logw.iter().enumerate().map(|(i, l)| (i, (l - top).exp())).filter(|w| w.1 > 1e-14).collect();
    let wsum: f64 = weights.iter().map(|w| w.1).sum();
    for w in &mut weights {
        w.1 /= wsum;
    }
    let per_node = weights
        .par_iter()
        .map(|&(i, w)| {
            let st = correlation_state(model, curve.theta_grid[i])?;
            Ok((w, kriging_moments(model, &st, y, x_new)?))
        })
        .collect::<Result<Vec<(f64, Vec<KrigingMoments>)>>>()?;
    let dof = model.m() as f64;
    let t = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::Numerical(format!("Student t({dof}): {e}")))?;
    x_new
        .iter()
        .enumerate()
        .map(|(j, x)| {
            if let Some(i) = (0..design.n()).find(|&i| sq_distance::<f64>(x, design.point(i)).sqrt() <= tie) {
                return Ok(Prediction { x: x.clone(), mean: y[i], lo95: y[i], hi95: y[i], components: per_node.len() });
            }
            let comps: Vec<(f64, KrigingMoments)> = per_node.iter().map(|(w, ms)| (*w, ms[j])).collect();
            let mean = comps.iter().map(|(w, c)| w * c.mean).sum();
            Ok(Prediction {
                x: x.clone(),
                mean,
                lo95: mixture_quantile(&comps, &t, 0.025),
                hi95: mixture_quantile(&comps, &t, 0.975),
                components: comps.len(),
            })
        })
        .collect()
}

/// `log π(θ)` on a log grid. Nodes where `WᵀΣ_θW` is not resolved are dropped.
#[derive(Clone, Debug, Serialize)]
pub struct PriorCurve {
    pub theta: Vec<f64>,
    #[serde(serialize_with = "ser_f64_vec")]
    pub log_prior: Vec<f64>,
    pub dropped: usize,
}

pub fn prior_curve(model: &GpModel, bounds: Option<(f64, f64)>, count: usize) -> Result<PriorCurve> {
    let bounds = bounds.unwrap_or_else(|| default_bounds(model));
    check_bounds(bounds)?;
    if count < 2 {
        return Err(Error::Input("prior curve needs at least 2 points".into()));
    }
    let grid = crate::asymptotics::log_grid(bounds.0, bounds.1, count);
    let vals = grid
        .par_iter()
        .map(|&t| {
            let st = match correlation_state(model, t) {
                Ok(s) => s,
                Err(Error::NotPositiveDefinite { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            if st.sigma_w_pivot_ratio() < posterior_floor(model) {
                return Ok(None);
            }
            match log_reference_prior(model, &st, Form::W) {
                Ok(v) => Ok(Some((t, v))),
                Err(Error::Numerical(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let kept: Vec<(f64, f64)> = vals.iter().flatten().copied().collect();
    Ok(PriorCurve {
        theta: kept.iter().map(|v| v.0).collect(),
        log_prior: kept.iter().map(|v| v.1).collect(),
        dropped: count - kept.len(),
    })
}

/// One draw of `(θ, β, σ²)` from the joint posterior.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JointDraw {
    pub theta: f64,
    pub sigma2: f64,
    pub beta: Vec<f64>,
}

/// Draws θ from the curve, with a density linear in `log θ` between nodes,
/// then `(β, σ²)` from their conditional posterior. Mass beyond the grid is
/// not represented.
pub fn sample_joint<R: Rng + ?Sized>(
    model: &GpModel,
    y: &[f64],
    curve: &PosteriorCurve,
    count: usize,
    rng: &mut R,
) -> Result<Vec<JointDraw>> {
    let us: Vec<f64> = curve.theta_grid.iter().map(|t| t.ln()).collect();
    if us.len() < 2 {
        return Err(Error::Input("posterior curve needs at least 2 nodes".into()));
    }
    let top = curve.log_post_unnorm.iter().zip(&us).map(|(g, u)| g + u).fold(f64::NEG_INFINITY, f64::max);
    let f: Vec<f64> = curve.log_post_unnorm.iter().zip(&us).map(|(g, u)| (g + u - top).exp()).collect();
    let mut cum = vec![0.0];
    for i in 0..us.len() - 1 {
        let m = 0.5 * (f[i] + f[i + 1]) * (us[i + 1] - us[i]);
        cum.push(cum[i] + m);
    }
    let total = *cum.last().unwrap();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Numerical("posterior curve carries no mass".into()));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let target = rng.random::<f64>() * total;
        let i = cum.partition_point(|&c| c <= target).clamp(1, us.len() - 1) - 1;
        // invert the linear density on [u_i, u_{i+1}]
        let (fa, fb, h) = (f[i], f[i + 1], us[i + 1] - us[i]);
        let rest = (target - cum[i]) / h;
        let t = if (fb - fa).abs() < 1e-12 * fa.max(fb) {
            rest / fa.max(f64::MIN_POSITIVE)
        } else {
            let slope = fb - fa;
            ((fa * fa + 2.0 * slope * rest).max(0.0).sqrt() - fa) / slope
        };
        let theta = (us[i] + t.clamp(0.0, 1.0) * h).exp();
        let st = correlation_state(model, theta)?;
        let draw = sample_conditional(model, &st, y, rng)?;
        out.push(JointDraw { theta, sigma2: draw.sigma2, beta: draw.beta });
    }
    Ok(out)
}
