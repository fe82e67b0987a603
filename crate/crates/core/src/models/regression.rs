//! Logistic and probit posteriors under a Zellner g-prior, in the
//! whitened parameterisation `x̃ = (XᵀX)^{1/2} x`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::function::erf::erfc;

use super::TargetModel;
use crate::error::{EsvmError, Result};
use crate::seed::SeedKey;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this argument `log Φ` switches to its asymptotic expansion.
const LOG_NDTR_ASYMPTOTIC: f64 = -8.0;

/// `log Φ(z)` for the standard normal CDF, accurate far into both tails.
pub fn log_ndtr(z: f64) -> f64 {
    if z > 0.0 {
        (-0.5 * erfc(z / std::f64::consts::SQRT_2)).ln_1p()
    } else if z >= LOG_NDTR_ASYMPTOTIC {
        (0.5 * erfc(-z / std::f64::consts::SQRT_2)).ln()
    } else {
        // Φ(z) = φ(z)/|z| · Σ_k (-1)^k (2k-1)!! / z^{2k}
        let z2 = z * z;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..40 {
            let next = -term * (2 * k - 1) as f64 / z2;
            if next.abs() >= term.abs() {
                break;
            }
            term = next;
            sum += term;
            if term.abs() < 1e-17 {
                break;
            }
        }
        -0.5 * z2 - LN_SQRT_2PI - (-z).ln() + sum.ln()
    }
}

/// `φ(z) / Φ(z)`.
fn inverse_mills(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI - log_ndtr(z)).exp()
}

/// `log(1 + e^z)`.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Logistic,
    Probit,
}

impl Link {
    /// Log-likelihood of label `y ∈ {0, 1}` at linear predictor `eta`.
    fn log_lik(self, y: f64, eta: f64) -> f64 {
        match self {
            Link::Logistic => y * eta - softplus(eta),
            Link::Probit => y * log_ndtr(eta) + (1.0 - y) * log_ndtr(-eta),
        }
    }

    /// Derivative of the log-likelihood in `eta`.
    fn score(self, y: f64, eta: f64) -> f64 {
        match self {
            Link::Logistic => y - sigmoid(eta),
            Link::Probit => y * inverse_mills(eta) - (1.0 - y) * inverse_mills(-eta),
        }
    }
}

/// Binary-response data split into train/test parts, with covariates
/// mapped by `(XᵀX)^{-1/2}` computed from the training rows.
#[derive(Debug, Clone)]
pub struct Dataset {
    dim: usize,
    pub x_train: Vec<f64>,
    pub y_train: Vec<f64>,
    pub x_test: Vec<f64>,
    pub y_test: Vec<f64>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    /// Row-major `(XᵀX)^{-1/2}`.
    pub transform: Vec<f64>,
}

/// Provenance of an ingested dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub path: String,
    pub sha256: String,
    pub label_column: String,
    pub split_seed: u64,
    pub k_test: usize,
    pub n_rows: usize,
    pub dim: usize,
    pub intercept: bool,
}

impl Dataset {
    /// Splits `rows` (raw covariates, without intercept) and `labels` into
    /// `k_test` test rows and the rest for training, then whitens.
    pub fn from_raw(
        rows: &[Vec<f64>],
        labels: &[f64],
        k_test: usize,
        seed: u64,
        intercept: bool,
    ) -> Result<Dataset> {
        if rows.len() != labels.len() {
            return Err(EsvmError::invalid("row and label counts differ"));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(EsvmError::invalid(format!("label {bad} is not binary")));
        }
        let raw_dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != raw_dim) {
            return Err(EsvmError::invalid("ragged covariate rows"));
        }
        let dim = raw_dim + usize::from(intercept);
        if dim == 0 {
            return Err(EsvmError::invalid("no covariates"));
        }
        if k_test >= rows.len() {
            return Err(EsvmError::invalid(format!(
                "test size {k_test} leaves no training rows out of {}",
                rows.len()
            )));
        }

        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.shuffle(&mut SeedKey::new(seed, 0).rng());
        let mut test_idx = order[..k_test].to_vec();
        let mut train_idx = order[k_test..].to_vec();
        test_idx.sort_unstable();
        train_idx.sort_unstable();

        let design = |i: usize| -> Vec<f64> {
            let mut r = rows[i].clone();
            if intercept {
                r.push(1.0);
            }
            r
        };

        let mut gram = DMatrix::<f64>::zeros(dim, dim);
        for &i in &train_idx {
            let r = DVector::from_vec(design(i));
            gram += &r * r.transpose();
        }
        let eig = gram.symmetric_eigen();
        let top = eig.eigenvalues.amax();
        if let Some(&small) = eig
            .eigenvalues
            .iter()
            .find(|&&l| !(l > 1e-12 * top.max(f64::MIN_POSITIVE)))
        {
            return Err(EsvmError::Numeric(format!(
                "design is rank deficient: XᵀX has eigenvalue {small:e} (largest {top:e})"
            )));
        }
        let inv_sqrt = DVector::from_iterator(dim, eig.eigenvalues.iter().map(|l| l.powf(-0.5)));
        let m = &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();

        let map = |idx: &[usize]| -> Vec<f64> {
            idx.iter()
                .flat_map(|&i| {
                    let r = DVector::from_vec(design(i));
                    (&m * r).iter().copied().collect::<Vec<_>>()
                })
                .collect()
        };
        Ok(Dataset {
            dim,
            x_train: map(&train_idx),
            y_train: train_idx.iter().map(|&i| labels[i]).collect(),
            x_test: map(&test_idx),
            y_test: test_idx.iter().map(|&i| labels[i]).collect(),
            transform: (0..dim * dim).map(|k| m[(k / dim, k % dim)]).collect(),
            train_idx,
            test_idx,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_train(&self) -> usize {
        self.y_train.len()
    }

    pub fn n_test(&self) -> usize {
        self.y_test.len()
    }
}

/// Reads a comma-separated file with a header row. Every column other than
/// `label_column` is a covariate.
pub fn ingest_csv(
    path: &Path,
    label_column: &str,
    k_test: usize,
    seed: u64,
    intercept: bool,
) -> Result<(Dataset, DatasetManifest)> {
    let bytes = std::fs::read(path).map_err(|e| EsvmError::io(path, e))?;
    let sha256 = Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect::<String>();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let bad = |e: &dyn std::fmt::Display| EsvmError::invalid(format!("{}: {e}", path.display()));
    let headers = reader.headers().map_err(|e| bad(&e))?.clone();
    let label_pos = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| bad(&format!("no column named `{label_column}`")))?;

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(&e))?;
        let mut row = Vec::with_capacity(record.len().saturating_sub(1));
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| bad(&format!("row {}: `{field}` is not numeric", line + 2)))?;
            if j == label_pos {
                labels.push(v);
            } else {
                row.push(v);
            }
        }
        rows.push(row);
    }
    let dataset = Dataset::from_raw(&rows, &labels, k_test, seed, intercept)?;
    let manifest = DatasetManifest {
        path: path.display().to_string(),
        sha256,
        label_column: label_column.to_owned(),
        split_seed: seed,
        k_test,
        n_rows: rows.len(),
        dim: dataset.dim(),
        intercept,
    };
    Ok((dataset, manifest))
}

/// Raw rows of the bundled synthetic logistic dataset.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    /// Generating coefficients, intercept last.
    pub x_star: Vec<f64>,
}

/// 500 rows of 7 Gaussian covariates plus an intercept (d = 8), labels drawn
/// from a logistic model with fixed coefficients.
pub fn synthetic_logistic_dataset(seed: u64) -> SyntheticDataset {
    const N: usize = 500;
    let x_star = vec![1.0, -0.5, 0.8, 0.0, -1.2, 0.3, 0.6, 0.5];
    let mut rng = SeedKey::new(seed, 0).rng();
    let mut rows = Vec::with_capacity(N);
    let mut labels = Vec::with_capacity(N);
    for _ in 0..N {
        let row: Vec<f64> = (0..7).map(|_| rng.sample(StandardNormal)).collect();
        let eta: f64 = row.iter().zip(&x_star).map(|(a, b)| a * b).sum::<f64>() + x_star[7];
        let y = if rng.random::<f64>() < sigmoid(eta) { 1.0 } else { 0.0 };
        rows.push(row);
        labels.push(y);
    }
    SyntheticDataset {
        rows,
        labels,
        x_star,
    }
}

/// Posterior `exp(-U(x̃))`, `U(x̃) = -Σ ℓ(y_i | x̃, x̃_i) + ‖x̃‖²/(2g)`.
#[derive(Debug, Clone)]
pub struct RegressionPosterior {
    link: Link,
    g: f64,
    data: Dataset,
}

pub fn logistic_target(data: Dataset, g: f64) -> Result<RegressionPosterior> {
    RegressionPosterior::new(Link::Logistic, data, g)
}

pub fn probit_target(data: Dataset, g: f64) -> Result<RegressionPosterior> {
    RegressionPosterior::new(Link::Probit, data, g)
}

impl RegressionPosterior {
    pub fn new(link: Link, data: Dataset, g: f64) -> Result<Self> {
        if !(g > 0.0) {
            return Err(EsvmError::invalid("prior scale g must be positive"));
        }
        if data
            .y_train
            .iter()
            .chain(&data.y_test)
            .any(|&y| y != 0.0 && y != 1.0)
        {
            return Err(EsvmError::invalid("labels must be binary"));
        }
        Ok(Self { link, g, data })
    }

    pub fn link(&self) -> Link {
        self.link
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    /// Log-likelihood of the training data.
    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        let d = self.data.dim;
        self.data
            .x_train
            .chunks_exact(d)
            .zip(&self.data.y_train)
            .map(|(row, &y)| self.link.log_lik(y, dot(row, x)))
            .sum()
    }

    /// Average likelihood of the held-out rows,
    /// `K⁻¹ Σ_i exp(ℓ(y'_i | x̃, x̃'_i))`.
    pub fn average_test_likelihood(&self, x: &[f64]) -> f64 {
        let d = self.data.dim;
        let k = self.data.n_test();
        self.data
            .x_test
            .chunks_exact(d)
            .zip(&self.data.y_test)
            .map(|(row, &y)| self.link.log_lik(y, dot(row, x)).exp())
            .sum::<f64>()
            / k as f64
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl TargetModel for RegressionPosterior {
    fn dim(&self) -> usize {
        self.data.dim
    }

    fn potential(&self, x: &[f64]) -> f64 {
        let prior = dot(x, x) / (2.0 * self.g);
        prior - self.log_likelihood(x)
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        self.potential_and_gradient(x, grad);
    }

    fn potential_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.data.dim;
        for (g, &xi) in grad.iter_mut().zip(x) {
            *g = xi / self.g;
        }
        let mut ll = 0.0;
        for (row, &y) in self.data.x_train.chunks_exact(d).zip(&self.data.y_train) {
            let eta = dot(row, x);
            ll += self.link.log_lik(y, eta);
            let s = self.link.score(y, eta);
            for (g, &r) in grad.iter_mut().zip(row) {
                *g -= s * r;
            }
        }
        dot(x, x) / (2.0 * self.g) - ll
    }

    fn label(&self) -> String {
        let link = match self.link {
            Link::Logistic => "logistic",
            Link::Probit => "probit",
        };
        format!("{link}(N={}, d={}, g={})", self.data.n_train(), self.data.dim, self.g)
    }

    fn exact_moments(&self) -> BTreeMap<String, f64> {
        BTreeMap::new()
    }
}
