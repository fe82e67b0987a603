use std::collections::BTreeMap;

use super::TargetModel;
use crate::error::{EsvmError, Result};

/// Banana-shaped density
/// `U(x) = x₁²/(2p) + (x₂ + b x₁² - p b)² + Σ_{k≥3} x_k²/2`.
#[derive(Debug, Clone)]
pub struct Banana {
    p: f64,
    b: f64,
    dim: usize,
}

pub fn banana_target(p: f64, b: f64, dim: usize) -> Result<Banana> {
    if dim < 2 {
        return Err(EsvmError::invalid("banana target needs d >= 2"));
    }
    if !(p > 0.0 && b > 0.0) {
        return Err(EsvmError::invalid("banana parameters p and b must be positive"));
    }
    Ok(Banana { p, b, dim })
}

impl TargetModel for Banana {
    fn dim(&self) -> usize {
        self.dim
    }

    fn potential(&self, x: &[f64]) -> f64 {
        let r = x[1] + self.b * x[0] * x[0] - self.p * self.b;
        let tail: f64 = x[2..].iter().map(|v| 0.5 * v * v).sum();
        x[0] * x[0] / (2.0 * self.p) + r * r + tail
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        let r = x[1] + self.b * x[0] * x[0] - self.p * self.b;
        grad[0] = x[0] / self.p + 4.0 * self.b * x[0] * r;
        grad[1] = 2.0 * r;
        grad[2..].copy_from_slice(&x[2..]);
    }

    fn label(&self) -> String {
        format!("banana(p={}, b={}, d={})", self.p, self.b, self.dim)
    }

    fn exact_moments(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        for i in 0..self.dim {
            m.insert(format!("mean[{i}]"), 0.0);
        }
        m.insert("second_moment[0]".into(), self.p);
        for i in 2..self.dim {
            m.insert(format!("second_moment[{i}]"), 1.0);
        }
        m
    }
}
