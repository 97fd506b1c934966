//! The kriging model: `H`, `W`, `Σ_θ`, `dΣ_θ/dθ`, `Q_θ` and the matrix
//! identities that tie the `Q`-based and `W`-based formulas together.
//!
//! Heavy lifting happens at the precision chosen by [`Precision`]; the public
//! `f64` matrices on [`CorrelationState`] are roundings of that computation.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::basis::RegressionBasis;
use crate::dense::{Cholesky, Mat};
use crate::design::DesignSet;
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::real::{Dd, Real};

/// Working precision of the dense algebra.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    /// Plain `f64`. Adequate for moderate θ or large `n`.
    Double,
    /// Double-double (~32 digits). Needed to resolve `WᵀΣ_θW` at large θ.
    #[default]
    Extended,
}

/// `H`, `W` and squared distances at working precision `T`.
#[derive(Clone, Debug)]
pub(crate) struct Frame<T> {
    pub h: Mat<T>,
    pub w: Mat<T>,
    pub d2: Mat<T>,
}

/// Assembled model. Immutable once built.
#[derive(Clone, Debug)]
pub struct GpModel {
    design: DesignSet,
    basis: RegressionBasis,
    kernel: KernelSpec,
    precision: Precision,
    h: DMatrix<f64>,
    w: DMatrix<f64>,
    log_det_hth: f64,
    frame64: Frame<f64>,
    frame_dd: Frame<Dd>,
}

/// Builds `H` from the basis, checks its rank and completes it with `W`.
pub fn build_model(design: DesignSet, basis: RegressionBasis, kernel: KernelSpec) -> Result<GpModel> {
    kernel.validate()?;
    if design.n() < 2 {
        return Err(Error::Design(format!("need at least 2 points, got {}", design.n())));
    }
    let h = basis.matrix(&design)?;
    GpModel::from_parts(design, basis, kernel, h)
}

impl GpModel {
    fn from_parts(design: DesignSet, basis: RegressionBasis, kernel: KernelSpec, h: DMatrix<f64>) -> Result<Self> {
        let n = design.n();
        let p = h.ncols();
        if p >= n {
            return Err(Error::Identifiability(format!("p = {p} regression functions need more than {p} points")));
        }
        check_rank(&h)?;
        let w_dd = complement_basis_dd(&h)?;
        let w = w_dd.to_dmatrix();
        let log_det_hth = if p == 0 { 0.0 } else { (h.transpose() * &h).cholesky().map(|c| 2.0 * c.l().diagonal().map(f64::ln).sum()).unwrap_or(f64::NEG_INFINITY) };
        let d2_dd = Mat::from_fn(n, n, |i, j| if i == j { Dd::zero() } else { design.sq_distance_dd(i, j) });
        let frame_dd = Frame { h: Mat::from_dmatrix(&h), w: w_dd, d2: d2_dd.clone() };
        let frame64 = Frame {
            h: Mat::from_dmatrix(&h),
            w: Mat::from_dmatrix(&w),
            d2: Mat::from_fn(n, n, |i, j| d2_dd[(i, j)].to_f64()),
        };
        Ok(GpModel { design, basis, kernel, precision: Precision::default(), h, w, log_det_hth, frame64, frame_dd })
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    /// Same design and basis, different kernel.
    pub fn with_kernel(&self, kernel: KernelSpec) -> Result<Self> {
        kernel.validate()?;
        let mut m = self.clone();
        m.kernel = kernel;
        Ok(m)
    }

    pub fn design(&self) -> &DesignSet {
        &self.design
    }
    pub fn basis(&self) -> &RegressionBasis {
        &self.basis
    }
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }
    pub fn precision(&self) -> Precision {
        self.precision
    }
    pub fn n(&self) -> usize {
        self.h.nrows()
    }
    pub fn p(&self) -> usize {
        self.h.ncols()
    }
    /// `n − p`, the dimension of the error contrasts `Wᵀy`.
    pub fn m(&self) -> usize {
        self.n() - self.p()
    }
    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }
    /// `log|HᵀH|` (zero when `p = 0`).
    pub fn log_det_hth(&self) -> f64 {
        self.log_det_hth
    }

    pub(crate) fn frame64(&self) -> &Frame<f64> {
        &self.frame64
    }
    pub(crate) fn frame_dd(&self) -> &Frame<Dd> {
        &self.frame_dd
    }

    /// `Wᵀy`, the part of the observations not explained by the mean.
    pub fn contrasts(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_obs(y)?;
        let yv = nalgebra::DVector::from_column_slice(y);
        Ok((self.w.transpose() * yv).iter().copied().collect())
    }

    pub(crate) fn check_obs(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.n() {
            return Err(Error::Input(format!("{} observations for {} design points", y.len(), self.n())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite observation".into()));
        }
        Ok(())
    }
}

/// Numerical rank test: `σ_p > 1e−10 · σ_1 · max(n, p)`.
fn check_rank(h: &DMatrix<f64>) -> Result<()> {
    let (n, p) = h.shape();
    if p == 0 {
        return Ok(());
    }
    let sv = h.clone().svd(false, false).singular_values;
    let s1 = sv.max();
    let sp = sv.min();
    let threshold = 1e-10 * s1 * n.max(p) as f64;
    if !(sp > threshold) {
        return Err(Error::Identifiability(format!(
            "H has numerical rank below p = {p} (smallest singular value {sp:e}, threshold {threshold:e})"
        )));
    }
    Ok(())
}

/// Orthonormal basis of the orthogonal complement of `span(H)`, as `f64`.
///
/// Columns come from the trailing left singular vectors of `H`, with the
/// sign fixed so the first nonzero entry of each column is positive. For
/// `p = 0` the identity is returned.
pub fn complement_basis(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_rank(h)?;
    Ok(complement_basis_dd(h)?.to_dmatrix())
}

/// As [`complement_basis`], polished to double-double orthogonality.
fn complement_basis_dd(h: &DMatrix<f64>) -> Result<Mat<Dd>> {
    let (n, p) = h.shape();
    if p == 0 {
        return Ok(Mat::identity(n));
    }
    // Padding to n × n makes the SVD return a full U.
    let mut padded = DMatrix::zeros(n, n);
    padded.view_mut((0, 0), (n, p)).copy_from(h);
    let svd = padded.svd(true, false);
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD did not return U".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let m = n - p;
    let mut w0 = DMatrix::zeros(n, m);
    for (c, &k) in order[p..].iter().enumerate() {
        let mut col = u.column(k).into_owned();
        let scale = col.amax();
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-8 * scale) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        w0.set_column(c, &col);
    }

    // Polish in double-double: orthonormal basis P of span(H), then
    // project W off P and re-orthonormalize, twice each.
    let mut basis: Vec<Vec<Dd>> = Vec::with_capacity(n);
    for j in 0..p {
        let v: Vec<Dd> = (0..n).map(|i| Dd::from_f64(h[(i, j)])).collect();
        basis.push(orthonormalize_against(v, &basis)?);
    }
    let mut w = Mat::zeros(n, m);
    for j in 0..m {
        let v: Vec<Dd> = (0..n).map(|i| Dd::from_f64(w0[(i, j)])).collect();
        let v = orthonormalize_against(v, &basis)?;
        for (i, x) in v.iter().enumerate() {
            w[(i, j)] = *x;
        }
        basis.push(v);
    }
    Ok(w)
}

fn orthonormalize_against(mut v: Vec<Dd>, basis: &[Vec<Dd>]) -> Result<Vec<Dd>> {
    let norm0 = v.iter().map(|&x| x * x).sum::<Dd>().sqrt().to_f64();
    for _ in 0..2 {
        for b in basis {
            let c: Dd = b.iter().zip(&v).map(|(&x, &y)| x * y).sum();
            for (vi, &bi) in v.iter_mut().zip(b) {
                *vi -= c * bi;
            }
        }
    }
    let norm = v.iter().map(|&x| x * x).sum::<Dd>().sqrt();
    if !(norm.to_f64() > 1e-12 * norm0) {
        return Err(Error::Identifiability("basis columns are numerically dependent".into()));
    }
    Ok(v.into_iter().map(|x| x / norm).collect())
}

/// Σ_θ, its derivative and the factorizations derived from them, at precision `T`.
#[derive(Clone, Debug)]
pub(crate) struct Parts<T> {
    pub sigma: Mat<T>,
    pub dsigma: Mat<T>,
    pub chol: Cholesky<T>,
    pub sigma_w: Mat<T>,
    pub dsigma_w: Mat<T>,
    pub chol_w: Cholesky<T>,
}

impl<T: Real> Parts<T> {
    pub fn kernel(frame: &Frame<T>, kernel: &KernelSpec, theta: f64) -> Result<Self> {
        let n = frame.d2.rows();
        let mut sigma = Mat::identity(n);
        let mut dsigma = Mat::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let (k, dk) = kernel.pair_sq(frame.d2[(i, j)], theta);
                sigma[(i, j)] = k;
                sigma[(j, i)] = k;
                dsigma[(i, j)] = dk;
                dsigma[(j, i)] = dk;
            }
        }
        Self::assemble(sigma, dsigma, frame, theta)
    }

    pub fn assemble(sigma: Mat<T>, dsigma: Mat<T>, frame: &Frame<T>, theta: f64) -> Result<Self> {
        let chol = sigma
            .cholesky()
            .map_err(|f| Error::NotPositiveDefinite { theta, index: f.index, pivot: f.pivot })?;
        let sigma_w = sigma.congruence(&frame.w);
        let dsigma_w = dsigma.congruence(&frame.w);
        let chol_w = sigma_w
            .cholesky()
            .map_err(|f| Error::NotPositiveDefinite { theta, index: f.index, pivot: f.pivot })?;
        Ok(Parts { sigma, dsigma, chol, sigma_w, dsigma_w, chol_w })
    }

    /// `S = Σ⁻¹H` and the Cholesky factor of `G = HᵀΣ⁻¹H`.
    pub fn gls(&self, frame: &Frame<T>) -> Result<(Mat<T>, Cholesky<T>)> {
        let s = self.chol.solve_mat(&frame.h);
        let mut g = frame.h.tr_matmul(&s);
        g.symmetrize();
        let cg = g.cholesky().map_err(|_| Error::Identifiability("HᵀΣ⁻¹H is not positive definite".into()))?;
        Ok((s, cg))
    }

    /// `Σ⁻¹Q_θ = Σ⁻¹ − Σ⁻¹H(HᵀΣ⁻¹H)⁻¹HᵀΣ⁻¹`, symmetric.
    pub fn sigma_inv_q(&self, frame: &Frame<T>) -> Result<Mat<T>> {
        let inv = self.chol.inverse();
        if frame.h.cols() == 0 {
            return Ok(inv);
        }
        let (s, cg) = self.gls(frame)?;
        let gs = cg.solve_mat(&s.transpose());
        let mut out = inv.sub(&s.matmul(&gs));
        out.symmetrize();
        Ok(out)
    }

    /// `Q_θ = I − H(HᵀΣ⁻¹H)⁻¹HᵀΣ⁻¹`.
    pub fn q(&self, frame: &Frame<T>) -> Result<Mat<T>> {
        let n = frame.h.rows();
        if frame.h.cols() == 0 {
            return Ok(Mat::identity(n));
        }
        let (s, cg) = self.gls(frame)?;
        let gs = cg.solve_mat(&s.transpose());
        Ok(Mat::identity(n).sub(&frame.h.matmul(&gs)))
    }

    /// `W(WᵀΣW)⁻¹Wᵀ`.
    pub fn w_inv_wt(&self, frame: &Frame<T>) -> Mat<T> {
        let inner = self.chol_w.inverse();
        let mut out = frame.w.matmul(&inner).matmul(&frame.w.transpose());
        out.symmetrize();
        out
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Core {
    Double(Parts<f64>),
    Extended(Parts<Dd>),
}

/// Runs `$body` with `$p: &Parts<T>` and `$f: &Frame<T>` for the state's precision.
macro_rules! with_parts {
    ($state:expr, $model:expr, |$p:ident, $f:ident| $body:expr) => {
        match &$state.core {
            $crate::model::Core::Double($p) => {
                let $f = $model.frame64();
                $body
            }
            $crate::model::Core::Extended($p) => {
                let $f = $model.frame_dd();
                $body
            }
        }
    };
}
pub(crate) use with_parts;

/// `Σ_θ` and friends at one θ, with `f64` views of every matrix.
#[derive(Clone, Debug)]
pub struct CorrelationState {
    pub theta: f64,
    /// `Σ_θ`.
    pub sigma: DMatrix<f64>,
    /// Lower Cholesky factor of `Σ_θ`.
    pub chol: DMatrix<f64>,
    /// `dΣ_θ/dθ`.
    pub dsigma: DMatrix<f64>,
    /// `WᵀΣ_θW`.
    pub sigma_w: DMatrix<f64>,
    /// Lower Cholesky factor of `WᵀΣ_θW`.
    pub sigma_w_chol: DMatrix<f64>,
    pub(crate) core: Core,
}

/// Assembles `Σ_θ`, `dΣ_θ/dθ` and `WᵀΣ_θW` with their Cholesky factors.
/// A failed factorization is reported, never patched with jitter.
pub fn correlation_state(model: &GpModel, theta: f64) -> Result<CorrelationState> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::Domain(format!("theta must be positive and finite, got {theta}")));
    }
    let core = match model.precision {
        Precision::Double => Core::Double(Parts::kernel(model.frame64(), &model.kernel, theta)?),
        Precision::Extended => Core::Extended(Parts::kernel(model.frame_dd(), &model.kernel, theta)?),
    };
    Ok(CorrelationState::from_core(theta, core))
}

impl CorrelationState {
    fn from_core(theta: f64, core: Core) -> Self {
        fn views<T: Real>(p: &Parts<T>) -> [DMatrix<f64>; 5] {
            [p.sigma.to_dmatrix(), p.chol.l().to_dmatrix(), p.dsigma.to_dmatrix(), p.sigma_w.to_dmatrix(), p.chol_w.l().to_dmatrix()]
        }
        let [sigma, chol, dsigma, sigma_w, sigma_w_chol] = match &core {
            Core::Double(p) => views(p),
            Core::Extended(p) => views(p),
        };
        CorrelationState { theta, sigma, chol, dsigma, sigma_w, sigma_w_chol, core }
    }

    pub fn precision(&self) -> Precision {
        match self.core {
            Core::Double(_) => Precision::Double,
            Core::Extended(_) => Precision::Extended,
        }
    }

    pub fn log_det_sigma(&self) -> f64 {
        match &self.core {
            Core::Double(p) => p.chol.log_det(),
            Core::Extended(p) => p.chol.log_det().to_f64(),
        }
    }

    pub fn log_det_sigma_w(&self) -> f64 {
        match &self.core {
            Core::Double(p) => p.chol_w.log_det(),
            Core::Extended(p) => p.chol_w.log_det().to_f64(),
        }
    }

    /// Spectral norm of `(WᵀΣ_θW)⁻¹`, i.e. `1/v_{n−p}(θ)`, resolved at working precision.
    pub fn sigma_w_inverse_norm(&self) -> f64 {
        let inv = match &self.core {
            Core::Double(p) => p.chol_w.inverse().to_dmatrix(),
            Core::Extended(p) => p.chol_w.inverse().to_dmatrix(),
        };
        SymmetricEigen::new(inv).eigenvalues.max()
    }

    /// Eigenvalues `v_1 ≥ … ≥ v_{n−p}` of `WᵀΣ_θW`. The small ones are obtained
    /// as reciprocals of the eigenvalues of the working-precision inverse, which
    /// keeps them accurate far below `f64` resolution of the largest one.
    pub fn sigma_w_eigenvalues(&self) -> Vec<f64> {
        let direct = SymmetricEigen::new(self.sigma_w.clone()).eigenvalues;
        let inv = match &self.core {
            Core::Double(p) => p.chol_w.inverse().to_dmatrix(),
            Core::Extended(p) => p.chol_w.inverse().to_dmatrix(),
        };
        let recip = SymmetricEigen::new(inv).eigenvalues;
        let mut a: Vec<f64> = direct.iter().copied().collect();
        let mut b: Vec<f64> = recip.iter().map(|x| 1.0 / x).collect();
        a.sort_by(|x, y| y.total_cmp(x));
        b.sort_by(|x, y| y.total_cmp(x));
        // each source is reliable where its eigenvalues are large relative to its own scale
        let top = a[0];
        a.iter().zip(&b).map(|(&x, &y)| if x > 1e-6 * top { x } else { y }).collect()
    }

    /// Smallest Cholesky pivot of `WᵀΣ_θW`. `Σ_θ` has a unit diagonal and
    /// entries known to working precision in absolute terms, so this is also the
    /// pivot's size relative to the rounding noise scale.
    pub fn sigma_w_pivot_ratio(&self) -> f64 {
        match &self.core {
            Core::Double(p) => p.chol_w.min_pivot(),
            Core::Extended(p) => p.chol_w.min_pivot(),
        }
    }
}

/// `Q_θ = I − H(HᵀΣ_θ⁻¹H)⁻¹HᵀΣ_θ⁻¹`; the identity when `p = 0`.
pub fn projector_q(state: &CorrelationState, model: &GpModel) -> Result<DMatrix<f64>> {
    with_parts!(state, model, |p, f| Ok(p.q(f)?.to_dmatrix()))
}

/// Residuals of the matrix identities linking the `Q`- and `W`-forms.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityReport {
    pub theta: f64,
    /// `‖W(WᵀΣW)⁻¹Wᵀ − Σ⁻¹Q‖_F`.
    pub kernel_identity_residual: f64,
    /// `‖Σ⁻¹‖_F`, the scale for the residual above.
    pub sigma_inverse_norm: f64,
    /// `log|Σ| − (log|WᵀΣW| + log|HᵀH| − log|HᵀΣ⁻¹H|)`.
    pub log_det_residual: f64,
    /// Relative difference of the two reference-prior forms; `None` when the prior is not defined.
    pub prior_forms_rel_diff: Option<f64>,
}

impl IdentityReport {
    pub fn kernel_identity_relative(&self) -> f64 {
        self.kernel_identity_residual / self.sigma_inverse_norm
    }
}

/// Identity residuals at one θ. Requires `p ≥ 1`.
pub fn verify_identities(state: &CorrelationState, model: &GpModel) -> Result<IdentityReport> {
    if model.p() == 0 {
        return Err(Error::Domain("identity suite needs p >= 1".into()));
    }
    with_parts!(state, model, |p, f| identity_report(p, f, model.log_det_hth, state.theta))
}

/// Identity residuals for an arbitrary SPD `Σ`, symmetric `dΣ` and full-rank `H`,
/// computed in double-double.
pub fn identity_residuals(sigma: &DMatrix<f64>, dsigma: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<IdentityReport> {
    let n = sigma.nrows();
    if h.ncols() == 0 || h.ncols() >= n || sigma.ncols() != n || dsigma.shape() != (n, n) || h.nrows() != n {
        return Err(Error::Input("identity_residuals: incompatible shapes or p = 0".into()));
    }
    check_rank(h)?;
    let w = complement_basis_dd(h)?;
    let frame = Frame { h: Mat::<Dd>::from_dmatrix(h), w, d2: Mat::zeros(n, n) };
    let parts = Parts::assemble(Mat::from_dmatrix(sigma), Mat::from_dmatrix(dsigma), &frame, f64::NAN)?;
    let hth = h.transpose() * h;
    let log_det_hth = 2.0 * hth.cholesky().ok_or_else(|| Error::Identifiability("HᵀH singular".into()))?.l().diagonal().map(f64::ln).sum();
    identity_report(&parts, &frame, log_det_hth, f64::NAN)
}

fn identity_report<T: Real>(p: &Parts<T>, f: &Frame<T>, log_det_hth: f64, theta: f64) -> Result<IdentityReport> {
    let lhs = p.w_inv_wt(f);
    let rhs = p.sigma_inv_q(f)?;
    let diff = lhs.sub(&rhs);
    let residual = diff.frobenius_dot(&diff).to_f64().sqrt();
    let inv = p.chol.inverse();
    let inv_norm = inv.frobenius_dot(&inv).to_f64().sqrt();
    let (_, cg) = p.gls(f)?;
    let log_det_residual =
        (p.chol.log_det() - p.chol_w.log_det() + cg.log_det()).to_f64() - log_det_hth;
    let prior_forms_rel_diff = if f.w.cols() >= 2 {
        let bw = crate::prior::bracket_w(p);
        let bq = crate::prior::bracket_q(p, f)?;
        let scale = bw.to_f64().abs().max(bq.to_f64().abs());
        if scale > 0.0 { Some((bw - bq).to_f64().abs() / scale) } else { None }
    } else {
        None
    };
    Ok(IdentityReport {
        theta,
        kernel_identity_residual: residual,
        sigma_inverse_norm: inv_norm,
        log_det_residual,
        prior_forms_rel_diff,
    })
}
