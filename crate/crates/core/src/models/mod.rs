//! Target densities `π ∝ exp(-U)` with analytic gradients.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::chain::{Trajectory, TrajectoryMeta};
use crate::error::{EsvmError, Result};
use crate::seed::SeedKey;

mod banana;
mod gmm;
mod regression;

pub use banana::{banana_target, Banana};
pub use gmm::{gmm_isolated_target, gmm_target, Gmm, IsolatedGmm};
pub use regression::{
    ingest_csv, log_ndtr, logistic_target, probit_target, synthetic_logistic_dataset, Dataset,
    DatasetManifest, Link, RegressionPosterior, SyntheticDataset,
};

/// A target density given through its potential `U` and gradient `∇U`.
pub trait TargetModel: Send + Sync {
    fn dim(&self) -> usize;

    fn potential(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64], grad: &mut [f64]);

    /// Returns `U(x)` and writes `∇U(x)` into `grad`. Targets whose potential
    /// and gradient share work override this.
    fn potential_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.gradient(x, grad);
        self.potential(x)
    }

    fn label(&self) -> String;

    /// Known expectations keyed by functional name (`mean[i]`,
    /// `second_moment[i]`, `cube[i]`).
    fn exact_moments(&self) -> BTreeMap<String, f64> {
        BTreeMap::new()
    }
}

impl<T: TargetModel + ?Sized> TargetModel for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn potential(&self, x: &[f64]) -> f64 {
        (**self).potential(x)
    }
    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        (**self).gradient(x, grad)
    }
    fn potential_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (**self).potential_and_gradient(x, grad)
    }
    fn label(&self) -> String {
        (**self).label()
    }
    fn exact_moments(&self) -> BTreeMap<String, f64> {
        (**self).exact_moments()
    }
}

/// `U(x) = ‖x‖² / 2`, the standard Gaussian.
#[derive(Debug, Clone)]
pub struct StandardGaussian {
    dim: usize,
}

impl StandardGaussian {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(EsvmError::invalid("dimension must be positive"));
        }
        Ok(Self { dim })
    }
}

impl TargetModel for StandardGaussian {
    fn dim(&self) -> usize {
        self.dim
    }

    fn potential(&self, x: &[f64]) -> f64 {
        0.5 * x.iter().map(|v| v * v).sum::<f64>()
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        grad.copy_from_slice(x);
    }

    fn label(&self) -> String {
        format!("standard_gaussian(d={})", self.dim)
    }

    fn exact_moments(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        for i in 0..self.dim {
            m.insert(format!("mean[{i}]"), 0.0);
            m.insert(format!("second_moment[{i}]"), 1.0);
            m.insert(format!("cube[{i}]"), 0.0);
        }
        m
    }
}

/// Worst relative discrepancy between `∇U(x)` and a central finite
/// difference of `U` at `x`, measured in the sup norm.
pub fn gradient_fd_error<T: TargetModel + ?Sized>(target: &T, x: &[f64]) -> f64 {
    let d = target.dim();
    let mut grad = vec![0.0; d];
    target.gradient(x, &mut grad);
    let mut probe = x.to_vec();
    let mut worst_abs = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..d {
        let h = 1e-5 * (1.0 + x[i].abs());
        probe[i] = x[i] + h;
        let up = target.potential(&probe);
        probe[i] = x[i] - h;
        let down = target.potential(&probe);
        probe[i] = x[i];
        let fd = (up - down) / (2.0 * h);
        worst_abs = worst_abs.max((fd - grad[i]).abs());
        scale = scale.max(fd.abs()).max(grad[i].abs());
    }
    worst_abs / scale.max(1e-8)
}

/// Linear autoregression `x_{k+1} = a x_k + z_k`, started from its
/// stationary law. Returns the chain and the exact asymptotic variance of
/// `h(x) = x`, `(1 + a) / ((1 - a)(1 - a²)) = 1 / (1 - a)²`.
pub fn ar1_reference(a: f64, n: usize, seed: u64) -> Result<(Trajectory, f64)> {
    if !(a.abs() < 1.0) {
        return Err(EsvmError::invalid(format!("AR(1) coefficient |a| = {} must be < 1", a.abs())));
    }
    if n == 0 {
        return Err(EsvmError::invalid("AR(1) length must be positive"));
    }
    let key = SeedKey::train(seed);
    let mut rng = key.rng();
    let stationary_var = 1.0 / (1.0 - a * a);
    let mut x = stationary_var.sqrt() * rng.sample::<f64, _>(StandardNormal);
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(x);
        x = a * x + rng.sample::<f64, _>(StandardNormal);
    }
    let meta = TrajectoryMeta {
        seed: Some(key),
        ..Default::default()
    };
    let v_inf = stationary_var * (1.0 + a) / (1.0 - a);
    Ok((Trajectory::from_flat(data, 1, meta)?, v_inf))
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;
    use rand::SeedableRng;

    /// Max finite-difference error over `probes` random points drawn with
    /// coordinates from `N(0, scale²)`.
    pub fn audit<T: TargetModel + ?Sized>(target: &T, probes: usize, scale: f64) -> f64 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        (0..probes)
            .map(|_| {
                let x: Vec<f64> = (0..target.dim())
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                gradient_fd_error(target, &x)
            })
            .fold(0.0, f64::max)
    }
}
