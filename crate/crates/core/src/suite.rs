//! Bundled validation corpus behind `refprior validate`.
//!
//! Every check produces a [`Row`]; a suite passes when all of its rows do.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::asymptotics::{inverse_norm_exponent, log_grid};
use crate::basis::RegressionBasis;
use crate::design::DesignSet;
use crate::error::Result;
use crate::kernel::{eval_kernel, eval_kernel_dtheta, KernelSpec, Parametrization};
use crate::model::{build_model, correlation_state, verify_identities};
use crate::spectral::{f_matrix_check_design, prior_ceiling, spectral_quadratic_form, suite_designs, suite_kernels};

/// One checked quantity. Absent numbers were not finite or not applicable.
#[derive(Clone, Debug, Serialize)]
pub struct Row {
    pub suite: String,
    pub check: String,
    pub case: String,
    pub theta: Option<f64>,
    pub value: Option<f64>,
    pub tolerance: Option<f64>,
    pub pass: bool,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn row(suite: &str, check: &str, case: String, theta: Option<f64>, value: f64, tolerance: f64, pass: bool) -> Row {
    Row {
        suite: suite.into(),
        check: check.into(),
        case,
        theta,
        value: finite(value),
        tolerance: finite(tolerance),
        pass,
    }
}

/// Every kernel family with a few parameter choices.
pub fn all_kernels() -> Vec<KernelSpec> {
    vec![
        KernelSpec::spherical(),
        KernelSpec::power_exponential(0.7),
        KernelSpec::power_exponential(1.5),
        KernelSpec::squared_exponential(),
        KernelSpec::rational_quadratic(0.5),
        KernelSpec::rational_quadratic(2.0),
        KernelSpec::matern(0.5),
        KernelSpec::matern(1.0),
        KernelSpec::matern(1.5),
        KernelSpec::matern(2.5),
        KernelSpec::matern(1.5).with_parametrization(Parametrization::Bdos),
    ]
}

/// Uniform random design in the unit cube.
pub fn random_design(seed: u64, n: usize, r: usize) -> Result<DesignSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DesignSet::new((0..n).map(|_| (0..r).map(|_| rng.random::<f64>()).collect()).collect())
}

/// Five planar designs and one line.
pub fn corpus_designs() -> Result<Vec<DesignSet>> {
    let mut out: Vec<DesignSet> = (0..5).map(|s| random_design(500 + s, 6, 2)).collect::<Result<_>>()?;
    out.push(DesignSet::from_1d(&[0.0, 0.13, 0.41, 0.55, 0.8, 1.0])?);
    Ok(out)
}

/// Kernel identities, the determinant factorization and the agreement of
/// both prior forms.
pub fn identity_suite() -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    for (di, design) in corpus_designs()?.into_iter().enumerate() {
        for kernel in all_kernels() {
            for basis in [RegressionBasis::Constant, RegressionBasis::Linear] {
                let model = build_model(design.clone(), basis.clone(), kernel)?;
                for theta in [0.1, 0.5, 2.0] {
                    let st = correlation_state(&model, theta)?;
                    let rep = verify_identities(&st, &model)?;
                    let case = format!("design {di}, {}, {basis:?}", kernel.label());
                    let rel = rep.kernel_identity_relative();
                    rows.push(row("identities", "w_form_equals_q_form", case.clone(), Some(theta), rel, 1e-10, rel <= 1e-10));
                    let ld = rep.log_det_residual.abs();
                    rows.push(row("identities", "determinant_factorization", case.clone(), Some(theta), ld, 1e-9, ld <= 1e-9));
                    if let Some(pf) = rep.prior_forms_rel_diff {
                        rows.push(row("identities", "prior_forms", case, Some(theta), pf, 1e-8, pf <= 1e-8));
                    }
                }
            }
        }
    }
    Ok(rows)
}

/// Analytic `∂K(d/θ)/∂θ` against central differences at 50 random `(d, θ)`.
pub fn derivative_suite() -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let pts: Vec<(f64, f64)> = (0..50)
        .map(|_| (10f64.powf(rng.random_range(-2.0..0.5)), 10f64.powf(rng.random_range(-1.0..0.7))))
        .collect();
    for kernel in all_kernels() {
        let mut worst: f64 = 0.0;
        for &(d, th) in &pts {
            let h = 1e-6 * th;
            let fd = (eval_kernel(&kernel, d, th + h)? - eval_kernel(&kernel, d, th - h)?) / (2.0 * h);
            let an = eval_kernel_dtheta(&kernel, d, th)?;
            worst = worst.max((fd - an).abs() / an.abs().max(1e-8));
        }
        rows.push(row("derivatives", "central_difference", kernel.label(), None, worst, 1e-6, worst < 1e-6));
    }
    Ok(rows)
}

/// Spectral reconstruction on random one-dimensional designs.
pub fn spectral_suite() -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    let designs = suite_designs(5, 4)?;
    for kernel in suite_kernels() {
        for (di, (design, xi)) in designs.iter().enumerate() {
            for theta in [0.3, 1.0, 3.0] {
                let rep = spectral_quadratic_form(&kernel, design, xi, theta)?;
                let case = format!("design {di}, {}", kernel.label());
                let pass = rep.rel_error < 1e-4 && rep.positive();
                rows.push(row("spectral", "reconstruction", case, Some(theta), rep.rel_error, 1e-4, pass));
            }
        }
    }
    Ok(rows)
}

/// `F_θ` bounds, the prior ceiling they imply and the growth of `‖(WᵀΣ_θW)⁻¹‖`.
pub fn bound_suite() -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    let designs = corpus_designs()?;
    for kernel in suite_kernels() {
        for (di, design) in designs.iter().take(2).enumerate() {
            let case = format!("design {di}, {}", kernel.label());
            for theta in log_grid(1e-2, 1e3, 16) {
                let rep = f_matrix_check_design(&kernel, design, theta, None)?;
                let neg = (-rep.min_eigenvalue / rep.norm).max(0.0);
                rows.push(row("bounds", "f_psd", case.clone(), Some(theta), neg, 1e-10, rep.psd));
                if rep.bound_applies {
                    if let Some(t2) = rep.t2 {
                        rows.push(row("bounds", "f_pencil_bound", case.clone(), Some(theta), t2, rep.bound + 1e-8, rep.satisfied));
                    }
                }
            }
            let model = build_model(design.clone(), RegressionBasis::Constant, kernel)?;
            for theta in log_grid(0.05, 20.0, 8) {
                let c = prior_ceiling(&model, theta, None)?;
                rows.push(row(
                    "bounds",
                    "prior_ceiling",
                    case.clone(),
                    Some(theta),
                    c.log_prior - c.log_ceiling,
                    1e-8,
                    c.satisfied,
                ));
            }
        }
    }
    let grid = log_grid(1e2, 1e4, 13);
    let instances = [
        (random_design(21, 5, 2)?, RegressionBasis::None, KernelSpec::matern(1.5)),
        (random_design(22, 4, 2)?, RegressionBasis::Constant, KernelSpec::squared_exponential()),
        (random_design(23, 5, 2)?, RegressionBasis::Constant, KernelSpec::rational_quadratic(1.0)),
        (DesignSet::from_1d(&[0.0, 0.7])?, RegressionBasis::Constant, KernelSpec::squared_exponential()),
    ];
    for (design, basis, kernel) in instances {
        let case = format!("n={}, {basis:?}, {}", design.n(), kernel.label());
        let model = build_model(design, basis, kernel)?;
        let rep = inverse_norm_exponent(&model, &grid)?;
        rows.push(row(
            "bounds",
            "inverse_norm_exponent",
            case,
            None,
            rep.measured,
            rep.predicted + 0.15,
            rep.measured <= rep.predicted + 0.15,
        ));
    }
    Ok(rows)
}
