use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::TargetModel;
use crate::error::{EsvmError, Result};

/// Stable `log(e^a + e^b)`, also returning the weight of `a`.
fn log_add_exp(a: f64, b: f64) -> (f64, f64) {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return (m, 0.5);
    }
    let ea = (a - m).exp();
    let eb = (b - m).exp();
    let s = ea + eb;
    (m + s.ln(), ea / s)
}

/// Symmetric mixture `ρ N(μ, Σ) + (1 - ρ) N(-μ, Σ)`.
#[derive(Debug, Clone)]
pub struct Gmm {
    rho: f64,
    mu: Vec<f64>,
    sigma: DMatrix<f64>,
    precision: DMatrix<f64>,
}

pub fn gmm_target(rho: f64, mu: Vec<f64>, sigma: Vec<Vec<f64>>) -> Result<Gmm> {
    let d = mu.len();
    if d == 0 {
        return Err(EsvmError::invalid("mixture mean must be non-empty"));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(EsvmError::invalid(format!("mixture weight {rho} outside [0, 1]")));
    }
    if sigma.len() != d || sigma.iter().any(|r| r.len() != d) {
        return Err(EsvmError::invalid(format!("covariance must be {d}x{d}")));
    }
    let sigma = DMatrix::from_fn(d, d, |i, j| sigma[i][j]);
    let asym = (&sigma - sigma.transpose()).amax();
    if asym > 1e-12 * sigma.amax().max(1.0) {
        return Err(EsvmError::invalid("covariance is not symmetric"));
    }
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| EsvmError::invalid("covariance is not positive definite"))?;
    let precision = chol.inverse();
    Ok(Gmm {
        rho,
        mu,
        sigma,
        precision,
    })
}

impl Gmm {
    /// Half Mahalanobis distances to `μ` and `-μ`, plus `Σ⁻¹(x ∓ μ)`.
    fn parts(&self, x: &[f64]) -> (f64, f64, DVector<f64>, DVector<f64>) {
        let d = self.mu.len();
        let xp = DVector::from_fn(d, |i, _| x[i] - self.mu[i]);
        let xm = DVector::from_fn(d, |i, _| x[i] + self.mu[i]);
        let pp = &self.precision * &xp;
        let pm = &self.precision * &xm;
        (0.5 * xp.dot(&pp), 0.5 * xm.dot(&pm), pp, pm)
    }
}

impl TargetModel for Gmm {
    fn dim(&self) -> usize {
        self.mu.len()
    }

    fn potential(&self, x: &[f64]) -> f64 {
        self.potential_and_gradient(x, &mut vec![0.0; self.mu.len()])
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        self.potential_and_gradient(x, grad);
    }

    fn potential_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let (qp, qm, pp, pm) = self.parts(x);
        let (lse, r) = log_add_exp(self.rho.ln() - qp, (1.0 - self.rho).ln() - qm);
        for i in 0..grad.len() {
            grad[i] = r * pp[i] + (1.0 - r) * pm[i];
        }
        -lse
    }

    fn label(&self) -> String {
        format!("gmm(d={}, rho={})", self.mu.len(), self.rho)
    }

    fn exact_moments(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        for (i, &mu) in self.mu.iter().enumerate() {
            let s = self.sigma[(i, i)];
            m.insert(format!("mean[{i}]"), (2.0 * self.rho - 1.0) * mu);
            m.insert(format!("second_moment[{i}]"), s + mu * mu);
            m.insert(
                format!("cube[{i}]"),
                (2.0 * self.rho - 1.0) * (mu.powi(3) + 3.0 * mu * s),
            );
        }
        m
    }
}

/// One-dimensional mixture `ρ N(μ₁, σ₁²) + (1 - ρ) N(-μ₂, σ₂²)`.
#[derive(Debug, Clone)]
pub struct IsolatedGmm {
    rho: f64,
    means: [f64; 2],
    sds: [f64; 2],
}

pub fn gmm_isolated_target(rho: f64, mu1: f64, sigma1: f64, mu2: f64, sigma2: f64) -> Result<IsolatedGmm> {
    if !(sigma1 > 0.0 && sigma2 > 0.0) {
        return Err(EsvmError::invalid("component standard deviations must be positive"));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(EsvmError::invalid(format!("mixture weight {rho} outside [0, 1]")));
    }
    Ok(IsolatedGmm {
        rho,
        means: [mu1, -mu2],
        sds: [sigma1, sigma2],
    })
}

impl IsolatedGmm {
    pub fn component_means(&self) -> [f64; 2] {
        self.means
    }
}

impl TargetModel for IsolatedGmm {
    fn dim(&self) -> usize {
        1
    }

    fn potential(&self, x: &[f64]) -> f64 {
        self.potential_and_gradient(x, &mut [0.0])
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        self.potential_and_gradient(x, grad);
    }

    fn potential_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let z: [f64; 2] = std::array::from_fn(|k| (x[0] - self.means[k]) / self.sds[k]);
        let la = self.rho.ln() - self.sds[0].ln() - 0.5 * z[0] * z[0];
        let lb = (1.0 - self.rho).ln() - self.sds[1].ln() - 0.5 * z[1] * z[1];
        let (lse, r) = log_add_exp(la, lb);
        grad[0] = r * z[0] / self.sds[0] + (1.0 - r) * z[1] / self.sds[1];
        -lse
    }

    fn label(&self) -> String {
        format!(
            "gmm_isolated(rho={}, means=[{}, {}], sds=[{}, {}])",
            self.rho, self.means[0], self.means[1], self.sds[0], self.sds[1]
        )
    }

    fn exact_moments(&self) -> BTreeMap<String, f64> {
        let w = [self.rho, 1.0 - self.rho];
        let moment = |f: &dyn Fn(f64, f64) -> f64| {
            (0..2).map(|k| w[k] * f(self.means[k], self.sds[k])).sum::<f64>()
        };
        let mut m = BTreeMap::new();
        m.insert("mean[0]".into(), moment(&|mu, _| mu));
        m.insert("second_moment[0]".into(), moment(&|mu, s| mu * mu + s * s));
        m.insert("cube[0]".into(), moment(&|mu, s| mu.powi(3) + 3.0 * mu * s * s));
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::test_util::audit;

    fn unit_cov_gmm() -> Gmm {
        gmm_target(0.5, vec![0.5, 0.5], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()
    }

    #[test]
    fn symmetric_mixture_moments() {
        let m = unit_cov_gmm().exact_moments();
        assert_eq!(m["mean[0]"], 0.0);
        assert!((m["second_moment[0]"] - 1.25).abs() < 1e-15);
    }

    #[test]
    fn gradient_vanishes_at_origin() {
        let mut g = [1.0, 1.0];
        unit_cov_gmm().gradient(&[0.0, 0.0], &mut g);
        assert_eq!(g, [0.0, 0.0]);
    }

    #[test]
    fn rejects_non_pd_covariance() {
        assert!(gmm_target(0.5, vec![0.0, 0.0], vec![vec![1.0, 2.0], vec![2.0, 1.0]]).is_err());
        assert!(gmm_target(0.5, vec![0.0, 0.0], vec![vec![1.0, 0.5], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn gmm_gradient_audit() {
        assert!(audit(&unit_cov_gmm(), 64, 2.0) < 1e-5);
        let coloured = gmm_target(
            0.3,
            vec![1.0, -0.5, 0.2],
            vec![vec![2.0, 0.3, 0.1], vec![0.3, 1.0, 0.2], vec![0.1, 0.2, 0.5]],
        )
        .unwrap();
        assert!(audit(&coloured, 64, 2.0) < 1e-5);
    }

    #[test]
    fn gmm_tails_are_finite() {
        let t = unit_cov_gmm();
        let mut g = [0.0; 2];
        for x in [[100.0, -100.0], [-70.0, -70.0], [0.0, 100.0]] {
            let u = t.potential_and_gradient(&x, &mut g);
            assert!(u.is_finite() && g.iter().all(|v| v.is_finite()));
            // Far from both means the gradient is that of a single Gaussian.
            assert!((g[0] - x[0]).abs() <= 1.0);
        }
    }

    #[test]
    fn isolated_mixture_third_moment() {
        let t = gmm_isolated_target(0.4, -3.0, 1.0, 4.0, 0.5).unwrap();
        let expected = 0.4 * (-27.0 - 9.0) + 0.6 * (-64.0 - 12.0 * 0.25);
        assert!((t.exact_moments()["cube[0]"] - expected).abs() < 1e-12);
        assert!(gmm_isolated_target(0.4, -3.0, 0.0, 4.0, 0.5).is_err());
    }

    #[test]
    fn isolated_mixture_tails_and_gradient() {
        let t = gmm_isolated_target(0.4, -3.0, 1.0, 4.0, 0.5).unwrap();
        let mut g = [0.0];
        for x in [50.0, -50.0] {
            let u = t.potential_and_gradient(&[x], &mut g);
            assert!(u.is_finite() && g[0].is_finite());
        }
        assert!(audit(&t, 64, 4.0) < 1e-5);
    }
}
