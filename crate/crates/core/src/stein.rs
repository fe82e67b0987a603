//! Stein control variates `g_Φ = -⟨Φ, ∇U⟩ + div Φ`.
//!
//! Families:
//! - first order, `Φ(x) = b`, parameters `b` (length `d`);
//! - second order, `Φ(x) = A x + b`, parameters `(b | A)` with `A` row-major
//!   (length `d + d²`);
//! - radial basis (`d = 1`), `Φ(x) = Σ_k a_k (x - b_k) exp(-(x - b_k)²/2)`,
//!   parameters `(a_1..a_r, b_1..b_r)`.
//!
//! The polynomial families are linear in their parameters, so
//! `g_θ(x) = ⟨θ, ψ(x)⟩` for a feature row `ψ`.

use serde::{Deserialize, Serialize};

use crate::chain::Trajectory;
use crate::error::{EsvmError, Result};
use crate::models::TargetModel;
use crate::samplers::{sample_chain, SamplerConfig};
use crate::variance::{default_bn, spectral_variance_of, LagWindow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SteinFamily {
    FirstOrder { d: usize },
    SecondOrder { d: usize },
    Rbf { r: usize },
}

impl SteinFamily {
    pub fn dim(&self) -> usize {
        match *self {
            SteinFamily::FirstOrder { d } | SteinFamily::SecondOrder { d } => d,
            SteinFamily::Rbf { .. } => 1,
        }
    }

    pub fn n_params(&self) -> usize {
        match *self {
            SteinFamily::FirstOrder { d } => d,
            SteinFamily::SecondOrder { d } => d + d * d,
            SteinFamily::Rbf { r } => 2 * r,
        }
    }

    pub fn is_linear(&self) -> bool {
        !matches!(self, SteinFamily::Rbf { .. })
    }

    pub fn name(&self) -> String {
        match self {
            SteinFamily::FirstOrder { .. } => "first_order".into(),
            SteinFamily::SecondOrder { .. } => "second_order".into(),
            SteinFamily::Rbf { r } => format!("rbf{r}"),
        }
    }

    fn check(&self, theta: &[f64], x: &[f64], grad_u: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(EsvmError::DimensionMismatch {
                expected: self.n_params(),
                found: theta.len(),
            });
        }
        let d = self.dim();
        if x.len() != d || grad_u.len() != d {
            return Err(EsvmError::DimensionMismatch {
                expected: d,
                found: if x.len() != d { x.len() } else { grad_u.len() },
            });
        }
        Ok(())
    }
}

/// Parameter vector of a control variate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThetaVector(pub Vec<f64>);

impl ThetaVector {
    pub fn zeros(p: usize) -> Self {
        Self(vec![0.0; p])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `ψ(x)` with `g_θ(x) = ⟨θ, ψ(x)⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow(pub Vec<f64>);

/// Evaluates `g_θ(x)` given `∇U(x)`.
pub fn stein_value(family: &SteinFamily, theta: &[f64], x: &[f64], grad_u: &[f64]) -> Result<f64> {
    family.check(theta, x, grad_u)?;
    Ok(match *family {
        SteinFamily::FirstOrder { d } => -(0..d).map(|i| theta[i] * grad_u[i]).sum::<f64>(),
        SteinFamily::SecondOrder { d } => {
            let (b, a) = theta.split_at(d);
            let mut g = 0.0;
            for i in 0..d {
                let row = &a[i * d..(i + 1) * d];
                let phi_i = b[i] + row.iter().zip(x).map(|(aij, xj)| aij * xj).sum::<f64>();
                g += -phi_i * grad_u[i] + row[i];
            }
            g
        }
        SteinFamily::Rbf { r } => rbf_value(&theta[..r], &theta[r..], x[0], grad_u[0]),
    })
}

fn rbf_value(a: &[f64], centers: &[f64], x: f64, du: f64) -> f64 {
    a.iter()
        .zip(centers)
        .map(|(&ak, &bk)| ak * rbf_response(x - bk, du))
        .sum()
}

/// `-u e U' + (1 - u²) e` with `u = x - b`, `e = exp(-u²/2)`.
#[inline]
fn rbf_response(u: f64, du: f64) -> f64 {
    let e = (-0.5 * u * u).exp();
    e * (1.0 - u * u - u * du)
}

/// Writes `ψ(x)` into `out` (length `p`).
pub(crate) fn feature_row_into(family: &SteinFamily, x: &[f64], grad_u: &[f64], out: &mut [f64]) -> Result<()> {
    match *family {
        SteinFamily::FirstOrder { d } => {
            for i in 0..d {
                out[i] = -grad_u[i];
            }
        }
        SteinFamily::SecondOrder { d } => {
            for i in 0..d {
                out[i] = -grad_u[i];
                for j in 0..d {
                    out[d + i * d + j] = -x[j] * grad_u[i] + if i == j { 1.0 } else { 0.0 };
                }
            }
        }
        SteinFamily::Rbf { .. } => return Err(EsvmError::NonLinearFamily),
    }
    Ok(())
}

pub fn feature_row(family: &SteinFamily, x: &[f64], grad_u: &[f64]) -> Result<FeatureRow> {
    if !family.is_linear() {
        return Err(EsvmError::NonLinearFamily);
    }
    family.check(&vec![0.0; family.n_params()], x, grad_u)?;
    let mut out = vec![0.0; family.n_params()];
    feature_row_into(family, x, grad_u, &mut out)?;
    Ok(FeatureRow(out))
}

/// Value of the radial-basis control variate and its partial derivatives
/// with respect to `(a_1..a_r, b_1..b_r)`.
pub fn rbf_gradient(theta: &[f64], x: f64, grad_u: f64) -> Result<(f64, Vec<f64>)> {
    if theta.len() % 2 != 0 {
        return Err(EsvmError::invalid("radial-basis parameters come in (a, b) pairs"));
    }
    let r = theta.len() / 2;
    let mut partials = vec![0.0; 2 * r];
    let g = rbf_gradient_into(theta, x, grad_u, &mut partials);
    Ok((g, partials))
}

pub(crate) fn rbf_gradient_into(theta: &[f64], x: f64, du: f64, partials: &mut [f64]) -> f64 {
    let r = theta.len() / 2;
    let (a, centers) = theta.split_at(r);
    let mut g = 0.0;
    for k in 0..r {
        let u = x - centers[k];
        let e = (-0.5 * u * u).exp();
        let resp = e * (1.0 - u * u - u * du);
        g += a[k] * resp;
        partials[k] = resp;
        // d(resp)/du = e (u³ - 3u - (1 - u²) U'), and du/db = -1.
        partials[r + k] = a[k] * e * ((1.0 - u * u) * du - u * u * u + 3.0 * u);
    }
    g
}

/// `∇U` at every state of `traj`, row-major.
pub fn gradients_along<T: TargetModel + ?Sized>(target: &T, traj: &Trajectory) -> Result<Vec<f64>> {
    let d = traj.dim();
    if d != target.dim() {
        return Err(EsvmError::DimensionMismatch {
            expected: target.dim(),
            found: d,
        });
    }
    let mut grads = vec![0.0; traj.len() * d];
    for (k, (x, g)) in traj.states().zip(grads.chunks_exact_mut(d)).enumerate() {
        target.gradient(x, g);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(EsvmError::NonFinite { index: k });
        }
    }
    Ok(grads)
}

/// `g_θ(X_k)` along a trajectory, given precomputed gradients.
pub fn control_variate_series(family: &SteinFamily, theta: &[f64], traj: &Trajectory, grads: &[f64]) -> Result<Vec<f64>> {
    let d = traj.dim();
    traj.states()
        .zip(grads.chunks_exact(d))
        .map(|(x, g)| stein_value(family, theta, x, g))
        .collect()
}

/// Ergodic mean of `g_θ` on a fresh chain, divided by its spectral standard
/// error `√(V_n / n)` with `b_n = ⌈n^{1/3}⌉`. Returns 0 when `g ≡ 0`.
pub fn zero_mean_check<T: TargetModel + ?Sized>(
    family: &SteinFamily,
    theta: &[f64],
    target: &T,
    config: &SamplerConfig,
    n: usize,
) -> Result<f64> {
    if theta.iter().all(|&t| t == 0.0) {
        return Ok(0.0);
    }
    let config = SamplerConfig {
        n_steps: n,
        ..config.clone()
    };
    let x0 = vec![0.0; target.dim()];
    let (traj, _) = sample_chain(&config, target, &x0)?;
    let grads = gradients_along(target, &traj)?;
    let g = control_variate_series(family, theta, &traj, &grads)?;
    let mean = g.iter().sum::<f64>() / n as f64;
    let v = spectral_variance_of(&g, &LagWindow::trapezoid(default_bn(n))?)?;
    if v <= 0.0 {
        return Ok(if mean == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(mean / (v / n as f64).sqrt())
}
