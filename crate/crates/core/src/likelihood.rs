//! Integrated likelihood `L(y | θ)`, after integrating out `β` (flat prior)
//! and `σ²` (prior `1/σ²`):
//!
//! `L = Γ(a) π^{−a} |HᵀH|^{−1/2} |WᵀΣW|^{−1/2} (yᵀW(WᵀΣW)⁻¹Wᵀy)^{−a}`, `a = (n−p)/2`.

use crate::bessel::ln_gamma;
use crate::error::{Error, Result};
use crate::model::{with_parts, CorrelationState, Frame, GpModel, Parts};
use crate::prior::Form;
use crate::real::Real;

/// `‖Wᵀy‖ ≤ DEGENERACY_RTOL · ‖y‖` counts as `Wᵀy = 0`: `y` lies in `span(H)` to
/// within the rounding of its own entries.
pub const DEGENERACY_RTOL: f64 = 64.0 * f64::EPSILON;

pub(crate) fn contrasts_t<T: Real>(f: &Frame<T>, y: &[f64]) -> Vec<T> {
    let yt: Vec<T> = y.iter().map(|&v| T::from_f64(v)).collect();
    f.w.tr_matvec(&yt)
}

pub(crate) fn check_nondegenerate<T: Real>(f: &Frame<T>, y: &[f64]) -> Result<Vec<T>> {
    let wy = contrasts_t(f, y);
    let norm_wy = wy.iter().map(|&v| v * v).sum::<T>().sqrt().to_f64();
    let norm_y = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm_wy > DEGENERACY_RTOL * norm_y) {
        return Err(Error::DegenerateObservation(
            "Wᵀy = 0: the observations lie in the span of the regression functions".into(),
        ));
    }
    Ok(wy)
}

/// Generalized residual sum of squares `yᵀW(WᵀΣW)⁻¹Wᵀy = yᵀΣ⁻¹Q_θy`.
pub(crate) fn rss<T: Real>(p: &Parts<T>, wy: &[T]) -> Result<T> {
    let s = p.chol_w.quad_form(wy);
    if !(s.to_f64() > 0.0) {
        return Err(Error::Numerical(format!("quadratic form yᵀW(WᵀΣW)⁻¹Wᵀy = {:e} is not positive", s.to_f64())));
    }
    Ok(s)
}

fn log_lik_w<T: Real>(p: &Parts<T>, f: &Frame<T>, y: &[f64], log_det_hth: f64) -> Result<f64> {
    let a = 0.5 * (f.w.cols() as f64);
    let wy = check_nondegenerate(f, y)?;
    let s = rss(p, &wy)?;
    let log_det = p.chol_w.log_det().to_f64();
    Ok(ln_gamma(a) - a * std::f64::consts::PI.ln() - 0.5 * log_det_hth - 0.5 * log_det - a * s.ln().to_f64())
}

fn log_lik_q<T: Real>(p: &Parts<T>, f: &Frame<T>, y: &[f64]) -> Result<f64> {
    let n = f.h.rows();
    let a = 0.5 * ((n - f.h.cols()) as f64);
    check_nondegenerate(f, y)?;
    let yt: Vec<T> = y.iter().map(|&v| T::from_f64(v)).collect();
    let pq = p.sigma_inv_q(f)?;
    let s: T = yt.iter().zip(pq.matvec(&yt)).map(|(&u, v)| u * v).sum();
    if !(s.to_f64() > 0.0) {
        return Err(Error::Numerical(format!("quadratic form yᵀΣ⁻¹Qy = {:e} is not positive", s.to_f64())));
    }
    let log_det_g = if f.h.cols() == 0 { T::zero() } else { p.gls(f)?.1.log_det() };
    let log_det = (p.chol.log_det() + log_det_g).to_f64();
    Ok(ln_gamma(a) - a * std::f64::consts::PI.ln() - 0.5 * log_det - a * s.ln().to_f64())
}

/// `log L(y | θ)` through the primary `W` route.
pub fn log_integrated_likelihood(model: &GpModel, state: &CorrelationState, y: &[f64]) -> Result<f64> {
    log_integrated_likelihood_form(model, state, y, Form::W)
}

/// `log L(y | θ)` through the chosen route; the `Q` route is the cross-check.
pub fn log_integrated_likelihood_form(model: &GpModel, state: &CorrelationState, y: &[f64], form: Form) -> Result<f64> {
    model.check_obs(y)?;
    with_parts!(state, model, |p, f| match form {
        Form::W => log_lik_w(p, f, y, model.log_det_hth()),
        Form::Q => log_lik_q(p, f, y),
    })
}
