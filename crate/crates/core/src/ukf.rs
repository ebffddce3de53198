//! Sigma-point machinery shared by both filter variants.
//!
//! Everything here is dimension-agnostic: the cardiovascular filters in
//! [`crate::filter`] pass 14-dimensional augmented vectors, the tests also
//! drive it with small linear-Gaussian systems.
//!
//! The innovation solve exploits the structure of the unscented covariance.
//! With `W_i = 1/(2(L+λ))` for `i >= 1` and `Σ W^m = 1`,
//!
//! ```text
//! Σ W^c_i (Y_i - ŷ)(Y_i - ŷ)ᵀ = Σ_{i>=1} W_i e_i e_iᵀ + (β - α²) m mᵀ
//! e_i = Y_i - Y_0,   m = ŷ - Y_0
//! ```
//!
//! so `P_yy = R + S Sᵀ` with `S` of width `2L+1`. [`GainSolver::LowRank`]
//! factors the `(2L+1) × (2L+1)` capacitance matrix `I + Sᵀ R⁻¹ S` instead of
//! the `a × a` innovation covariance; [`GainSolver::Dense`] forms `P_yy` and
//! factors it directly. Both are exact.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UkfError {
    #[error("covariance is not positive semi-definite after jitter escalation")]
    CovarianceNotPsd,
    #[error("innovation covariance could not be factorised")]
    InnovationNotPsd,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid unscented transform parameters: {0}")]
    InvalidUt(String),
}

/// Unscented transform scaling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UtParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UtParams {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

impl UtParams {
    pub fn lambda(&self, dim: usize) -> f64 {
        self.alpha * self.alpha * (dim as f64 + self.kappa) - dim as f64
    }

    pub fn validate(&self, dim: usize) -> Result<(), UkfError> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(UkfError::InvalidUt(format!("alpha must be > 0, got {}", self.alpha)));
        }
        let l = dim as f64 + self.lambda(dim);
        if l == 0.0 || !l.is_finite() {
            return Err(UkfError::InvalidUt("L + lambda must be non-zero".into()));
        }
        Ok(())
    }

    pub fn weights(&self, dim: usize) -> SigmaWeights {
        let lambda = self.lambda(dim);
        // L + λ = α²(L + κ), evaluated without cancellation.
        let c = self.alpha * self.alpha * (dim as f64 + self.kappa);
        let n = 2 * dim + 1;
        let wi = 1.0 / (2.0 * c);
        let mut w_mean = vec![wi; n];
        let mut w_cov = vec![wi; n];
        w_mean[0] = lambda / c;
        w_cov[0] = lambda / c + (1.0 - self.alpha * self.alpha + self.beta);
        SigmaWeights { w_mean, w_cov }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SigmaWeights {
    pub w_mean: Vec<f64>,
    pub w_cov: Vec<f64>,
}

impl SigmaWeights {
    pub fn len(&self) -> usize {
        self.w_mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w_mean.is_empty()
    }

    /// Non-negative Gram weights `(W_1, …, W_{n-1}, W^c_0 - W^m_0 - 1)` when the
    /// weights have the scaled-UT structure, `None` otherwise.
    fn gram_weights(&self) -> Option<Vec<f64>> {
        gram_weights(&self.w_mean, &self.w_cov)
    }
}

fn gram_weights(w_mean: &[f64], w_cov: &[f64]) -> Option<Vec<f64>> {
    let n = w_mean.len();
    let sum: f64 = w_mean.iter().sum();
    if n < 2 || w_cov.len() != n || (sum - 1.0).abs() > 1e-9 {
        return None;
    }
    let mut g = Vec::with_capacity(n);
    for i in 1..n {
        let w = w_mean[i];
        if w < 0.0 || (w_cov[i] - w).abs() > 1e-12 * w.abs().max(1.0) {
            return None;
        }
        g.push(w);
    }
    let c0 = w_cov[0] - w_mean[0] - 1.0;
    if c0 < -1e-12 {
        return None;
    }
    g.push(c0.max(0.0));
    Some(g)
}

/// Square-root factor `F` with `Σ W^c_i (X_i - x̄)(X_i - x̄)ᵀ = F Fᵀ`: columns
/// `sqrt(W_i) (X_i - X_0)` for `i >= 1` and `sqrt(β - α²) (x̄ - X_0)`.
fn gram_factor(points: &DMatrix<f64>, mean: &DVector<f64>, gram: &[f64]) -> DMatrix<f64> {
    let n = gram.len();
    let x0 = points.column(0);
    let mut f = DMatrix::zeros(points.nrows(), n);
    for (k, w) in gram.iter().enumerate() {
        let g = w.sqrt();
        if k + 1 < n {
            f.set_column(k, &((points.column(k + 1) - x0) * g));
        } else {
            f.set_column(k, &((mean - x0) * g));
        }
    }
    f
}

/// Filter belief: mean and covariance of the augmented vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedEstimate {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl AugmentedEstimate {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self, UkfError> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(UkfError::Dimension(format!(
                "mean has {} entries but covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `2L+1` points stored column-wise with their weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaPointSet {
    pub points: DMatrix<f64>,
    pub weights: SigmaWeights,
}

impl SigmaPointSet {
    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.points.ncols() == 0
    }
}

/// Symmetrise-then-jitter ladder for covariance repair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsdRepair {
    /// First jitter as a multiple of `trace / L`.
    pub rel_jitter: f64,
    /// Number of ×10 escalations after the first jitter.
    pub escalations: u32,
    /// Absolute floor added to the first jitter.
    pub abs_floor: f64,
}

impl Default for PsdRepair {
    fn default() -> Self {
        Self {
            rel_jitter: 1e-12,
            escalations: 3,
            abs_floor: 0.0,
        }
    }
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

impl PsdRepair {
    /// Symmetrise `cov` in place and add the smallest rung of diagonal jitter
    /// for which a Cholesky factorisation succeeds. Returns the factor.
    pub fn repair(&self, cov: &mut DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, UkfError> {
        symmetrize(cov);
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(UkfError::CovarianceNotPsd);
        }
        if let Some(c) = Cholesky::new(cov.clone()) {
            return Ok(c);
        }
        let n = cov.nrows().max(1);
        let base = self.rel_jitter * (cov.trace().abs() / n as f64) + self.abs_floor;
        let mut added = 0.0;
        for k in 0..=self.escalations {
            let target = base * 10f64.powi(k as i32);
            let step = target - added;
            for i in 0..cov.nrows() {
                cov[(i, i)] += step;
            }
            added = target;
            if let Some(c) = Cholesky::new(cov.clone()) {
                return Ok(c);
            }
        }
        Err(UkfError::CovarianceNotPsd)
    }
}

/// Scaled symmetric sigma points around `est.mean`.
pub fn sigma_points(
    est: &AugmentedEstimate,
    ut: &UtParams,
    repair: &PsdRepair,
) -> Result<SigmaPointSet, UkfError> {
    let dim = est.dim();
    ut.validate(dim)?;
    if est.mean.iter().any(|v| !v.is_finite()) {
        return Err(UkfError::CovarianceNotPsd);
    }
    let scale = ut.alpha * ut.alpha * (dim as f64 + ut.kappa);
    if scale <= 0.0 {
        return Err(UkfError::InvalidUt("L + lambda must be positive for real sigma points".into()));
    }
    let mut cov = est.cov.clone();
    let chol = repair.repair(&mut cov)?;
    let root = chol.l() * scale.sqrt();
    let mut points = DMatrix::zeros(dim, 2 * dim + 1);
    points.set_column(0, &est.mean);
    for i in 0..dim {
        let col = root.column(i);
        points.set_column(1 + i, &(&est.mean + col));
        points.set_column(1 + dim + i, &(&est.mean - col));
    }
    Ok(SigmaPointSet {
        points,
        weights: ut.weights(dim),
    })
}

/// Weighted mean `X_0 + Σ_{i>=1} W_i (X_i - X_0)`, valid because the mean
/// weights sum to one. Avoids cancelling `W_0 ~ -1/α²` against the outer weights.
pub fn weighted_mean(points: &DMatrix<f64>, w_mean: &[f64]) -> DVector<f64> {
    let x0 = points.column(0).into_owned();
    let mut mean = x0.clone();
    for (i, w) in w_mean.iter().enumerate().skip(1) {
        mean.axpy(*w, &(points.column(i) - &x0), 1.0);
    }
    mean
}

/// Mean and covariance of propagated points (columns).
pub fn unscented_moments(
    points: &DMatrix<f64>,
    w_mean: &[f64],
    w_cov: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>), UkfError> {
    if points.ncols() != w_mean.len() || w_mean.len() != w_cov.len() {
        return Err(UkfError::Dimension(format!(
            "{} points but {} / {} weights",
            points.ncols(),
            w_mean.len(),
            w_cov.len()
        )));
    }
    let mean = weighted_mean(points, w_mean);
    // The factored form is PSD by construction; the direct sum cancels large
    // terms of opposite sign when W_0 is strongly negative.
    if let Some(g) = gram_weights(w_mean, w_cov) {
        let f = gram_factor(points, &mean, &g);
        let mut cov = &f * f.transpose();
        symmetrize(&mut cov);
        return Ok((mean, cov));
    }
    let mut dev = points.clone();
    for mut c in dev.column_iter_mut() {
        c -= &mean;
    }
    let mut scaled = dev.clone();
    for (mut c, w) in scaled.column_iter_mut().zip(w_cov) {
        c *= *w;
    }
    let mut cov = &scaled * dev.transpose();
    symmetrize(&mut cov);
    Ok((mean, cov))
}

/// How the innovation system `K P_yy = P_xy` is solved.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainSolver {
    /// Woodbury form through the `(2L+1)`-wide factor of `P_yy - R`.
    #[default]
    LowRank,
    /// Explicit `a × a` innovation covariance and its Cholesky factor.
    Dense,
}

/// Result of a measurement update.
#[derive(Clone, Debug, PartialEq)]
pub struct Correction {
    pub posterior: AugmentedEstimate,
    /// `||y_obs - ŷ||₂`.
    pub innovation_norm: f64,
    /// Predicted observation mean `ŷ`.
    pub y_mean: DVector<f64>,
    /// Gain matrix `K` (L × a).
    pub gain: DMatrix<f64>,
}

/// Measurement update from propagated state points `x_points` (L × n) and
/// observation points `y_points` (a × n) with diagonal noise `r_diag`.
///
/// `prior.cov` is the predicted state covariance; `prior.mean` is the
/// predicted state mean.
#[allow(clippy::too_many_arguments)]
pub fn correct(
    prior: &AugmentedEstimate,
    x_points: &DMatrix<f64>,
    y_points: &DMatrix<f64>,
    y_obs: &DVector<f64>,
    r_diag: &DVector<f64>,
    weights: &SigmaWeights,
    solver: GainSolver,
    repair: &PsdRepair,
) -> Result<Correction, UkfError> {
    let n = weights.len();
    let a = y_points.nrows();
    let dim = prior.dim();
    if x_points.ncols() != n || y_points.ncols() != n || x_points.nrows() != dim {
        return Err(UkfError::Dimension(format!(
            "points {}x{} / {}x{} vs {} weights, state dim {}",
            x_points.nrows(),
            x_points.ncols(),
            y_points.nrows(),
            y_points.ncols(),
            n,
            dim
        )));
    }
    if y_obs.len() != a || r_diag.len() != a {
        return Err(UkfError::Dimension(format!(
            "observation length {} / noise length {} vs predicted {}",
            y_obs.len(),
            r_diag.len(),
            a
        )));
    }
    if r_diag.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(UkfError::InnovationNotPsd);
    }

    let y_mean = weighted_mean(y_points, &weights.w_mean);
    let innovation = y_obs - &y_mean;

    let (gain, mut cov) = match (solver, weights.gram_weights()) {
        (GainSolver::LowRank, Some(g)) => {
            low_rank_gain(prior, x_points, y_points, &y_mean, r_diag, &g)?
        }
        _ => dense_gain(prior, x_points, y_points, &y_mean, r_diag, weights)?,
    };

    repair.repair(&mut cov)?;
    let mean = &prior.mean + &gain * &innovation;
    Ok(Correction {
        posterior: AugmentedEstimate { mean, cov },
        innovation_norm: innovation.norm(),
        y_mean,
        gain,
    })
}

/// Returns `(K, P⁺)`.
///
/// With the prior written as `P = F Fᵀ + E` (`E` is whatever the points do not
/// explain, zero up to roundoff when `prior` came from the same points), the
/// posterior is `E + F (I + M)⁻¹ Fᵀ`, a sum of PSD terms. Subtracting
/// `K P_yy Kᵀ` instead cancels catastrophically once `M` is large.
fn low_rank_gain(
    prior: &AugmentedEstimate,
    x_points: &DMatrix<f64>,
    y_points: &DMatrix<f64>,
    y_mean: &DVector<f64>,
    r_diag: &DVector<f64>,
    gram: &[f64],
) -> Result<(DMatrix<f64>, DMatrix<f64>), UkfError> {
    let n = gram.len();
    let s = gram_factor(y_points, y_mean, gram);
    let f = gram_factor(x_points, &prior.mean, gram);
    let mut s_scaled = s.clone();
    for (i, mut row) in s_scaled.row_iter_mut().enumerate() {
        row /= r_diag[i];
    }
    // M = Sᵀ R⁻¹ S
    let m = s.transpose() * &s_scaled;
    let mut cap = m.clone();
    for i in 0..n {
        cap[(i, i)] += 1.0;
    }
    let chol = Cholesky::new(cap).ok_or(UkfError::InnovationNotPsd)?;
    // K = F (I + M)⁻¹ Sᵀ R⁻¹
    let rhs = s_scaled.transpose();
    let solved = chol.solve(&rhs);
    let gain = &f * solved;
    // F (I + M)⁻¹ Fᵀ = G Gᵀ with G = F L⁻ᵀ.
    let g = chol
        .l()
        .solve_lower_triangular(&f.transpose())
        .ok_or(UkfError::InnovationNotPsd)?
        .transpose();
    let mut post = &prior.cov - &f * f.transpose() + &g * g.transpose();
    symmetrize(&mut post);
    Ok((gain, post))
}

fn dense_gain(
    prior: &AugmentedEstimate,
    x_points: &DMatrix<f64>,
    y_points: &DMatrix<f64>,
    y_mean: &DVector<f64>,
    r_diag: &DVector<f64>,
    weights: &SigmaWeights,
) -> Result<(DMatrix<f64>, DMatrix<f64>), UkfError> {
    let (p_yy, p_xy) = innovation_covariances(prior, x_points, y_points, y_mean, r_diag, weights);
    let chol = Cholesky::new(p_yy.clone()).ok_or(UkfError::InnovationNotPsd)?;
    // P_yy Kᵀ = P_xyᵀ
    let gain = chol.solve(&p_xy.transpose()).transpose();
    let mut post = &prior.cov - &gain * &p_yy * gain.transpose();
    symmetrize(&mut post);
    Ok((gain, post))
}

/// Explicit `(P_yy, P_xy)` from propagated points.
pub fn innovation_covariances(
    prior: &AugmentedEstimate,
    x_points: &DMatrix<f64>,
    y_points: &DMatrix<f64>,
    y_mean: &DVector<f64>,
    r_diag: &DVector<f64>,
    weights: &SigmaWeights,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut dy = y_points.clone();
    for mut c in dy.column_iter_mut() {
        c -= y_mean;
    }
    let mut dx = x_points.clone();
    for mut c in dx.column_iter_mut() {
        c -= &prior.mean;
    }
    let mut dy_w = dy.clone();
    for (mut c, w) in dy_w.column_iter_mut().zip(&weights.w_cov) {
        c *= *w;
    }
    let mut p_yy = &dy_w * dy.transpose();
    symmetrize(&mut p_yy);
    for i in 0..p_yy.nrows() {
        p_yy[(i, i)] += r_diag[i];
    }
    let p_xy = dx * dy_w.transpose();
    (p_yy, p_xy)
}
