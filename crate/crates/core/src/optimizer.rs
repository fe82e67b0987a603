//! Fitting control-variate parameters by minimising the spectral variance
//! (ESVM) or the sample variance (EVM) of `f - g_θ` on a training chain.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::chain::Trajectory;
use crate::error::{EsvmError, Result};
use crate::stein::{feature_row_into, rbf_gradient_into, SteinFamily};
use crate::variance::{apply_weight_operator, LagWindow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Esvm,
    Evm,
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Criterion::Esvm => "ESVM",
            Criterion::Evm => "EVM",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    LinearSolve,
    QuasiNewton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta: Vec<f64>,
    pub objective_at_theta: f64,
    pub objective_at_zero: f64,
    pub method: FitMethod,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
enum Features {
    /// Row-major `n × p` feature matrix `Ψ`.
    Linear { psi: Vec<f64>, p: usize },
    /// States and `U'` of a one-dimensional chain.
    Rbf { x: Vec<f64>, du: Vec<f64>, r: usize },
}

/// Training problem: `F = (f(X_k))`, the control-variate features, and the
/// lag window used by the ESVM criterion.
#[derive(Debug, Clone)]
pub struct DesignSet {
    f: Vec<f64>,
    features: Features,
    window: LagWindow,
}

impl DesignSet {
    /// Builds the design for `family` from a training trajectory, the values
    /// of `f` along it, and `∇U` along it (row-major).
    pub fn assemble(
        family: &SteinFamily,
        f: &[f64],
        traj: &Trajectory,
        grads: &[f64],
        window: LagWindow,
    ) -> Result<Self> {
        let n = traj.len();
        let d = traj.dim();
        if f.len() != n || grads.len() != n * d {
            return Err(EsvmError::invalid("design inputs disagree on chain length"));
        }
        if family.dim() != d {
            return Err(EsvmError::DimensionMismatch {
                expected: family.dim(),
                found: d,
            });
        }
        let features = match *family {
            SteinFamily::Rbf { r } => Features::Rbf {
                x: traj.as_flat().to_vec(),
                du: grads.to_vec(),
                r,
            },
            _ => {
                let p = family.n_params();
                let mut psi = vec![0.0; n * p];
                for ((x, g), row) in traj.states().zip(grads.chunks_exact(d)).zip(psi.chunks_exact_mut(p)) {
                    feature_row_into(family, x, g, row)?;
                }
                Features::Linear { psi, p }
            }
        };
        Self::build(f.to_vec(), features, window)
    }

    /// Design with an explicit row-major feature matrix.
    pub fn linear(f: Vec<f64>, psi: Vec<f64>, p: usize, window: LagWindow) -> Result<Self> {
        if p == 0 || psi.len() != f.len() * p {
            return Err(EsvmError::invalid("feature matrix must be n × p"));
        }
        Self::build(f, Features::Linear { psi, p }, window)
    }

    fn build(f: Vec<f64>, features: Features, window: LagWindow) -> Result<Self> {
        if f.len() < 2 {
            return Err(EsvmError::invalid("design needs at least two observations"));
        }
        if window.bn() > f.len() {
            return Err(EsvmError::TruncationExceedsSampleSize {
                bn: window.bn(),
                n: f.len(),
            });
        }
        let finite = match &features {
            Features::Linear { psi, .. } => psi.iter().all(|v| v.is_finite()),
            Features::Rbf { x, du, .. } => x.iter().chain(du).all(|v| v.is_finite()),
        };
        if let Some(index) = f.iter().position(|v| !v.is_finite()) {
            return Err(EsvmError::NonFinite { index });
        }
        if !finite {
            return Err(EsvmError::Numeric("non-finite feature in design".into()));
        }
        Ok(Self { f, features, window })
    }

    pub fn n(&self) -> usize {
        self.f.len()
    }

    pub fn p(&self) -> usize {
        match &self.features {
            Features::Linear { p, .. } => *p,
            Features::Rbf { r, .. } => 2 * r,
        }
    }

    pub fn window(&self) -> &LagWindow {
        &self.window
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.features, Features::Linear { .. })
    }

    /// Residuals `F - g_θ(X_k)`.
    fn residuals(&self, theta: &[f64]) -> Vec<f64> {
        match &self.features {
            Features::Linear { psi, p } => self
                .f
                .iter()
                .zip(psi.chunks_exact(*p))
                .map(|(fk, row)| fk - row.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>())
                .collect(),
            Features::Rbf { x, du, .. } => {
                let mut scratch = vec![0.0; theta.len()];
                self.f
                    .iter()
                    .zip(x.iter().zip(du))
                    .map(|(fk, (&xk, &dk))| fk - rbf_gradient_into(theta, xk, dk, &mut scratch))
                    .collect()
            }
        }
    }

    /// `Jᵀ v` with `J_{k,i} = ∂g_θ(X_k)/∂θ_i`.
    fn jacobian_t_apply(&self, theta: &[f64], v: &[f64]) -> Vec<f64> {
        let p = self.p();
        let mut out = vec![0.0; p];
        match &self.features {
            Features::Linear { psi, .. } => {
                for (row, &vk) in psi.chunks_exact(p).zip(v) {
                    for (o, r) in out.iter_mut().zip(row) {
                        *o += r * vk;
                    }
                }
            }
            Features::Rbf { x, du, .. } => {
                let mut partials = vec![0.0; p];
                for ((&xk, &dk), &vk) in x.iter().zip(du).zip(v) {
                    rbf_gradient_into(theta, xk, dk, &mut partials);
                    for (o, q) in out.iter_mut().zip(&partials) {
                        *o += q * vk;
                    }
                }
            }
        }
        out
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.p() {
            return Err(EsvmError::DimensionMismatch {
                expected: self.p(),
                found: theta.len(),
            });
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(EsvmError::invalid("non-finite parameter vector"));
        }
        Ok(())
    }

    /// Applies the criterion's weight operator `M` to `v`: `A_n` for ESVM,
    /// `P / (n - 1)` for EVM.
    fn apply_criterion(&self, criterion: Criterion, v: &[f64]) -> Result<Vec<f64>> {
        match criterion {
            Criterion::Esvm => apply_weight_operator(v, &self.window),
            Criterion::Evm => {
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                Ok(v.iter().map(|x| (x - mean) / (n - 1.0)).collect())
            }
        }
    }

    /// Criterion value and gradient at `theta`.
    pub fn objective(&self, criterion: Criterion, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_theta(theta)?;
        let z = self.residuals(theta);
        let mz = self.apply_criterion(criterion, &z)?;
        let value = z.iter().zip(&mz).map(|(a, b)| a * b).sum::<f64>();
        let grad = self.jacobian_t_apply(theta, &mz).into_iter().map(|g| -2.0 * g).collect();
        Ok((value, grad))
    }

    /// Normal equations `(Ψᵀ M Ψ, Ψᵀ M F)` of a linear design.
    pub fn normal_equations(&self, criterion: Criterion) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let (psi, p) = match &self.features {
            Features::Linear { psi, p } => (psi, *p),
            Features::Rbf { .. } => return Err(EsvmError::NonLinearFamily),
        };
        let n = self.n();
        let mut h = DMatrix::zeros(p, p);
        let mut col = vec![0.0; n];
        for j in 0..p {
            for (c, row) in col.iter_mut().zip(psi.chunks_exact(p)) {
                *c = row[j];
            }
            let m_col = self.apply_criterion(criterion, &col)?;
            let proj = self.jacobian_t_apply(&[], &m_col);
            for i in 0..p {
                h[(i, j)] = proj[i];
            }
        }
        let h = (&h + h.transpose()) * 0.5;
        let mf = self.apply_criterion(criterion, &self.f)?;
        let rhs = DVector::from_vec(self.jacobian_t_apply(&[], &mf));
        Ok((h, rhs))
    }
}

/// ESVM criterion `V_n(F - g_θ)` and its gradient.
pub fn esvm_objective(theta: &[f64], design: &DesignSet) -> Result<(f64, Vec<f64>)> {
    design.objective(Criterion::Esvm, theta)
}

/// EVM criterion `V'_n(F - g_θ)` and its gradient.
pub fn evm_objective(theta: &[f64], design: &DesignSet) -> Result<(f64, Vec<f64>)> {
    design.objective(Criterion::Evm, theta)
}

/// Default ridge `1e-8 · trace(H) / p`.
pub fn default_ridge(h: &DMatrix<f64>) -> f64 {
    1e-8 * h.trace().abs() / h.nrows() as f64
}

/// Solves `(H + ridge I) θ = rhs` by Cholesky. Fails when the regularised
/// matrix is not positive definite or is numerically singular.
pub fn solve_normal_equations(h: &DMatrix<f64>, rhs: &DVector<f64>, ridge: f64) -> Result<DVector<f64>> {
    let p = h.nrows();
    let reg = h + DMatrix::identity(p, p) * ridge;
    let chol = reg
        .cholesky()
        .ok_or_else(|| EsvmError::Numeric("normal equations are not positive definite".into()))?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
    if !(lo * lo > 1e-14 * hi * hi) {
        return Err(EsvmError::Numeric("normal equations are singular".into()));
    }
    let theta = chol.solve(rhs);
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(EsvmError::Numeric("normal equations produced non-finite parameters".into()));
    }
    Ok(theta)
}

/// Tuning for [`fit_quasi_newton`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuasiNewtonConfig {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub history: usize,
    pub backtrack: f64,
    pub sufficient_decrease: f64,
}

impl Default for QuasiNewtonConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-8,
            history: 10,
            backtrack: 0.5,
            sufficient_decrease: 1e-4,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Limited-memory BFGS with a backtracking (Armijo) line search.
///
/// `objective` returns the value and gradient; non-finite values are treated
/// as a failed trial step.
pub fn fit_quasi_newton<F>(mut objective: F, theta0: &[f64], config: &QuasiNewtonConfig) -> Result<FitResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let p = theta0.len();
    let (objective_at_zero, _) = objective(&vec![0.0; p])?;
    let mut x = theta0.to_vec();
    let (mut fx, mut gx) = objective(&x)?;
    if !fx.is_finite() || gx.iter().any(|g| !g.is_finite()) {
        return Err(EsvmError::Numeric("objective is not finite at the starting point".into()));
    }
    let mut s_hist: Vec<Vec<f64>> = Vec::with_capacity(config.history);
    let mut y_hist: Vec<Vec<f64>> = Vec::with_capacity(config.history);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < config.max_iter {
        if sup_norm(&gx) <= config.grad_tol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
        iterations += 1;

        // Two-loop recursion for d = -H g.
        let mut q = gx.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, y) in s_hist.iter().zip(&y_hist).rev() {
            let rho = 1.0 / dot(y, s);
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push((rho, a));
        }
        let scale = match (s_hist.last(), y_hist.last()) {
            (Some(s), Some(y)) => dot(s, y) / dot(y, y),
            _ => 1.0 / sup_norm(&gx).max(1.0),
        };
        for qi in q.iter_mut() {
            *qi *= scale;
        }
        for ((s, y), (rho, a)) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q.into_iter().map(|v| -v).collect();
        let mut slope = dot(&gx, &dir);
        if !(slope < 0.0) {
            s_hist.clear();
            y_hist.clear();
            let scale = 1.0 / sup_norm(&gx).max(1.0);
            dir = gx.iter().map(|g| -g * scale).collect();
            slope = dot(&gx, &dir);
        }

        let mut step = 1.0;
        let accepted = loop {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (ft, gt) = objective(&trial)?;
            if ft.is_finite()
                && gt.iter().all(|g| g.is_finite())
                && ft <= fx + config.sufficient_decrease * step * slope
            {
                break Some((trial, ft, gt));
            }
            step *= config.backtrack;
            if step < 1e-20 {
                break None;
            }
        };
        let Some((trial, ft, gt)) = accepted else {
            break;
        };
        let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let stalled = ft >= fx && sup_norm(&s) <= f64::EPSILON * (1.0 + sup_norm(&x));
        if dot(&s, &y) > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if s_hist.len() == config.history {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        x = trial;
        fx = ft;
        gx = gt;
        if stalled {
            break;
        }
    }
    if !converged {
        converged = sup_norm(&gx) <= config.grad_tol * (1.0 + fx.abs());
    }
    Ok(FitResult {
        theta: x,
        objective_at_theta: fx,
        objective_at_zero,
        method: FitMethod::QuasiNewton,
        iterations,
        converged,
    })
}

/// Exact minimisation of the quadratic criterion of a linear design. Falls
/// back to [`fit_quasi_newton`] from `θ = 0` when the system cannot be solved
/// or its solution does not lower the criterion.
pub fn solve_linear(design: &DesignSet, criterion: Criterion, ridge: Option<f64>) -> Result<FitResult> {
    let (h, rhs) = design.normal_equations(criterion)?;
    let p = design.p();
    let zero = vec![0.0; p];
    let (objective_at_zero, _) = design.objective(criterion, &zero)?;
    let ridge = ridge.unwrap_or_else(|| default_ridge(&h));
    if let Ok(theta) = solve_normal_equations(&h, &rhs, ridge) {
        let theta: Vec<f64> = theta.iter().copied().collect();
        let (value, _) = design.objective(criterion, &theta)?;
        if value <= objective_at_zero {
            return Ok(FitResult {
                theta,
                objective_at_theta: value,
                objective_at_zero,
                method: FitMethod::LinearSolve,
                iterations: 0,
                converged: true,
            });
        }
    }
    fit_quasi_newton(
        |t| design.objective(criterion, t),
        &zero,
        &QuasiNewtonConfig::default(),
    )
}

/// Radial-basis starting point: zero amplitudes, centres at the
/// `k / (r + 1)` empirical quantiles of the training states.
pub fn rbf_initial_theta(states: &[f64], r: usize) -> Vec<f64> {
    let mut sorted = states.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut theta = vec![0.0; 2 * r];
    for k in 1..=r {
        theta[r + k - 1] = quantile_sorted(&sorted, k as f64 / (r + 1) as f64);
    }
    theta
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil().min((n - 1) as f64) as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Fits the control variate encoded in `design` under `criterion`.
pub fn fit(design: &DesignSet, criterion: Criterion) -> Result<FitResult> {
    fit_with_ridge(design, criterion, None)
}

/// [`fit`] with an explicit ridge for linear designs; ignored for RBF.
pub fn fit_with_ridge(design: &DesignSet, criterion: Criterion, ridge: Option<f64>) -> Result<FitResult> {
    match &design.features {
        Features::Linear { .. } => solve_linear(design, criterion, ridge),
        Features::Rbf { x, r, .. } => {
            let theta0 = rbf_initial_theta(x, *r);
            fit_quasi_newton(
                |t| design.objective(criterion, t),
                &theta0,
                &QuasiNewtonConfig::default(),
            )
        }
    }
}
