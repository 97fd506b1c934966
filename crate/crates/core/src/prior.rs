//! The reference prior on the correlation length.
//!
//! `π(θ) ∝ √(Tr[(Σ′Σ⁻¹Q)²] − Tr[Σ′Σ⁻¹Q]²/(n−p))`, equivalently computed from
//! the projected pencil `(WᵀΣ′W, WᵀΣW)`. The proportionality constant is dropped.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::model::{with_parts, CorrelationState, Frame, GpModel, Parts};
use crate::real::{Dd, Real};

/// Which algebraic route to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    /// Through `Σ⁻¹Q_θ` on the full `n × n` problem.
    Q,
    /// Through `W`, on the `(n−p) × (n−p)` projected problem. The primary path.
    #[default]
    W,
}

/// `Tr(B²) − Tr(B)²/m` with `B = L⁻¹(WᵀΣ′W)L⁻ᵀ`, `LLᵀ = WᵀΣW`.
pub(crate) fn bracket_w<T: Real>(p: &Parts<T>) -> T {
    pencil_bracket(&p.chol_w.whiten(&p.dsigma_w))
}

fn pencil_bracket<T: Real>(b: &Mat<T>) -> T {
    let m = T::from_f64(b.rows() as f64);
    let tr = b.trace();
    b.frobenius_dot(b) - tr * tr / m
}

/// Same quantity through `M = Σ′Σ⁻¹Q`.
pub(crate) fn bracket_q<T: Real>(p: &Parts<T>, f: &Frame<T>) -> Result<T> {
    let m = T::from_f64((f.h.rows() - f.h.cols()) as f64);
    let mm = p.dsigma.matmul(&p.sigma_inv_q(f)?);
    let tr = mm.trace();
    // Tr(M²) = Σ_ij M_ij M_ji
    let tr2 = mm.frobenius_dot(&mm.transpose());
    Ok(tr2 - tr * tr / m)
}

/// Scale against which a negative bracket is judged: `Tr(B²)`.
fn bracket_scale_w<T: Real>(p: &Parts<T>) -> f64 {
    let b = p.chol_w.whiten(&p.dsigma_w);
    b.frobenius_dot(&b).to_f64()
}

fn log_from_bracket(bracket: f64, scale: f64) -> Result<f64> {
    if bracket > 0.0 && bracket > 1e-10 * scale * f64::EPSILON {
        return Ok(0.5 * bracket.ln());
    }
    if bracket < -1e-10 * scale {
        return Err(Error::Numerical(format!("reference-prior bracket is negative ({bracket:e}, scale {scale:e})")));
    }
    Ok(f64::NEG_INFINITY)
}

/// Log of the unnormalized reference prior `π(θ)`. Needs `n − p ≥ 2`.
pub fn log_reference_prior(model: &GpModel, state: &CorrelationState, form: Form) -> Result<f64> {
    if model.m() < 2 {
        return Err(Error::Unsupported(format!(
            "reference prior with n - p = {} (the trace bracket vanishes identically)",
            model.m()
        )));
    }
    with_parts!(state, model, |p, f| {
        let scale = bracket_scale_w(p);
        let b = match form {
            Form::W => bracket_w(p),
            Form::Q => bracket_q(p, f)?,
        };
        log_from_bracket(b.to_f64(), scale)
    })
}

/// The bracket `Tr(B²) − Tr(B)²/m` of the pencil `(A, S)` for an arbitrary
/// symmetric `A` and SPD `S`, evaluated in double-double.
pub fn prior_bracket(a: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<f64> {
    let s = Mat::<Dd>::from_dmatrix(s);
    let chol = s
        .cholesky()
        .map_err(|f| Error::NotPositiveDefinite { theta: f64::NAN, index: f.index, pivot: f.pivot })?;
    Ok(pencil_bracket(&chol.whiten(&Mat::from_dmatrix(a))).to_f64())
}
