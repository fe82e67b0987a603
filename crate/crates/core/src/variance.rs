//! Sample autocovariances and the lag-window spectral variance estimator
//!
//! ```text
//! V_n(h) = Σ_{|s| < b_n} w(s / b_n) R̂_n(h, |s|),
//! R̂_n(h, s) = n⁻¹ Σ_{k=0}^{n-s-1} (h_k - π̄)(h_{k+s} - π̄).
//! ```
//!
//! The autocovariance divisor is `n` for every lag, not `n - s`. With that
//! choice `V_n(h) = zᵀ A_n z` for `A_n = n⁻¹ P W_n P`, where `P` centres and
//! `W_n = (w_n(j - i))` is a banded Toeplitz matrix. Production code never
//! forms `A_n`; [`weight_matrix_oracle`] exists for tests.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::chain::FunctionalSeries;
use crate::error::{EsvmError, Result};

/// Largest `n` accepted by [`weight_matrix_oracle`].
pub const ORACLE_MAX_N: usize = 512;

/// Trapezoid lag window: 1 on `[-1/2, 1/2]`, linear down to 0 at `±1`.
pub fn trapezoid_kernel(u: f64) -> Result<f64> {
    if !(u.abs() <= 1.0) {
        return Err(EsvmError::invalid(format!("kernel argument {u} outside [-1, 1]")));
    }
    Ok(if u < -0.5 {
        2.0 * u + 2.0
    } else if u <= 0.5 {
        1.0
    } else {
        -2.0 * u + 2.0
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    #[default]
    Trapezoid,
    /// Indicator of `|u| <= 1/2`.
    Flat,
}

impl Kernel {
    pub fn eval(self, u: f64) -> Result<f64> {
        match self {
            Kernel::Trapezoid => trapezoid_kernel(u),
            Kernel::Flat => {
                if !(u.abs() <= 1.0) {
                    return Err(EsvmError::invalid(format!("kernel argument {u} outside [-1, 1]")));
                }
                Ok(if u.abs() <= 0.5 { 1.0 } else { 0.0 })
            }
        }
    }
}

/// Truncation point `b_n` and kernel `w`, giving weights `w(s / b_n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WindowRepr", into = "WindowRepr")]
pub struct LagWindow {
    bn: usize,
    kernel: Kernel,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct WindowRepr {
    bn: usize,
    kernel: Kernel,
}

impl TryFrom<WindowRepr> for LagWindow {
    type Error = EsvmError;

    fn try_from(r: WindowRepr) -> Result<Self> {
        LagWindow::new(r.bn, r.kernel)
    }
}

impl From<LagWindow> for WindowRepr {
    fn from(w: LagWindow) -> Self {
        WindowRepr {
            bn: w.bn,
            kernel: w.kernel,
        }
    }
}

impl LagWindow {
    pub fn new(bn: usize, kernel: Kernel) -> Result<Self> {
        if bn == 0 {
            return Err(EsvmError::invalid("truncation point b_n must be positive"));
        }
        let weights = (0..bn)
            .map(|s| kernel.eval(s as f64 / bn as f64))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { bn, kernel, weights })
    }

    pub fn trapezoid(bn: usize) -> Result<Self> {
        Self::new(bn, Kernel::Trapezoid)
    }

    pub fn bn(&self) -> usize {
        self.bn
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    /// `w(s / b_n)` for lags `s = 0..b_n`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `w_n(s)` for any integer lag; zero outside `(-b_n, b_n)`.
    pub fn weight(&self, s: isize) -> f64 {
        self.weights.get(s.unsigned_abs()).copied().unwrap_or(0.0)
    }

    fn check(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(EsvmError::EmptySeries);
        }
        if self.bn > n {
            return Err(EsvmError::TruncationExceedsSampleSize { bn: self.bn, n });
        }
        Ok(())
    }
}

/// `⌈n^{1/3}⌉`, the default test-time truncation point.
pub fn default_bn(n: usize) -> usize {
    let mut b = (n as f64).cbrt().ceil() as usize;
    while b > 1 && (b - 1).pow(3) >= n {
        b -= 1;
    }
    while b.pow(3) < n {
        b += 1;
    }
    b.max(1)
}

/// Spectral variance estimate with the sizes it was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralVariance {
    /// Raw value. The trapezoid window is not positive definite, so this may
    /// be slightly negative.
    pub value: f64,
    pub bn: usize,
    pub n: usize,
}

impl SpectralVariance {
    /// Value clamped at zero, for reporting.
    pub fn reported(&self) -> f64 {
        self.value.max(0.0)
    }
}

fn centered(values: &[f64]) -> Vec<f64> {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| v - mean).collect()
}

fn lagged_dot(c: &[f64], s: usize) -> f64 {
    c[..c.len() - s].iter().zip(&c[s..]).map(|(a, b)| a * b).sum()
}

/// `R̂_n(h, s)`.
pub fn sample_autocovariance(series: &FunctionalSeries, s: usize) -> Result<f64> {
    let n = series.len();
    if n == 0 {
        return Err(EsvmError::EmptySeries);
    }
    if s >= n {
        return Err(EsvmError::invalid(format!("lag {s} must be below series length {n}")));
    }
    let c = centered(series.values());
    Ok(lagged_dot(&c, s) / n as f64)
}

/// `R̂_n(h, s)` for all `s = 0..=max_lag`.
pub fn autocovariances(values: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = values.len();
    if n == 0 {
        return Err(EsvmError::EmptySeries);
    }
    if max_lag >= n {
        return Err(EsvmError::invalid(format!("lag {max_lag} must be below series length {n}")));
    }
    let c = centered(values);
    Ok((0..=max_lag).map(|s| lagged_dot(&c, s) / n as f64).collect())
}

/// `V_n(h)` as a weighted sum of sample autocovariances, in `O(n b_n)`.
pub fn spectral_variance(series: &FunctionalSeries, window: &LagWindow) -> Result<SpectralVariance> {
    let value = spectral_variance_of(series.values(), window)?;
    Ok(SpectralVariance {
        value,
        bn: window.bn(),
        n: series.len(),
    })
}

pub(crate) fn spectral_variance_of(values: &[f64], window: &LagWindow) -> Result<f64> {
    window.check(values.len())?;
    let acov = autocovariances(values, window.bn() - 1)?;
    let w = window.weights();
    Ok(acov[0] + 2.0 * (1..window.bn()).map(|s| w[s] * acov[s]).sum::<f64>())
}

/// `y = W_n c`, the banded Toeplitz product.
fn toeplitz_apply(c: &[f64], window: &LagWindow, y: &mut [f64]) {
    let n = c.len();
    let w = window.weights();
    for (yk, ck) in y.iter_mut().zip(c) {
        *yk = w[0] * ck;
    }
    for (s, &ws) in w.iter().enumerate().skip(1) {
        if ws == 0.0 || s >= n {
            continue;
        }
        let (head, tail) = (&c[..n - s], &c[s..]);
        for (k, (a, b)) in head.iter().zip(tail).enumerate() {
            y[k] += ws * b;
            y[k + s] += ws * a;
        }
    }
}

/// `A_n v = n⁻¹ P W_n P v`, matrix-free.
pub fn apply_weight_operator(v: &[f64], window: &LagWindow) -> Result<Vec<f64>> {
    window.check(v.len())?;
    let c = centered(v);
    let mut y = vec![0.0; v.len()];
    toeplitz_apply(&c, window, &mut y);
    let n = v.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    Ok(y.into_iter().map(|yk| (yk - mean) / n).collect())
}

/// `zᵀ A_n z`, computed by centring `z` and applying the Toeplitz window.
pub fn quadratic_form_apply(z: &[f64], window: &LagWindow) -> Result<f64> {
    window.check(z.len())?;
    let c = centered(z);
    let mut y = vec![0.0; z.len()];
    toeplitz_apply(&c, window, &mut y);
    Ok(c.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / z.len() as f64)
}

/// `V'_n(h) = (n - 1)⁻¹ Σ (h_k - π̄)²`.
pub fn empirical_variance(series: &FunctionalSeries) -> Result<f64> {
    empirical_variance_of(series.values())
}

pub(crate) fn empirical_variance_of(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(EsvmError::invalid("empirical variance needs at least 2 values"));
    }
    let c = centered(values);
    Ok(c.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64)
}

/// Dense `A_n = n⁻¹ Pᵀ W_n P`. Test instrument only.
pub fn weight_matrix_oracle(n: usize, window: &LagWindow) -> Result<DMatrix<f64>> {
    if n > ORACLE_MAX_N {
        return Err(EsvmError::invalid(format!(
            "dense weight matrix limited to n <= {ORACLE_MAX_N}, got {n}"
        )));
    }
    window.check(n)?;
    let w = DMatrix::from_fn(n, n, |i, j| window.weight(j as isize - i as isize));
    let p = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    Ok(p.transpose() * w * p / n as f64)
}
