//! Declarative experiment configuration (TOML).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{EsvmError, Result};
use crate::models::{
    banana_target, gmm_isolated_target, gmm_target, ingest_csv, synthetic_logistic_dataset, Dataset,
    DatasetManifest, Link, RegressionPosterior, StandardGaussian, TargetModel,
};
use crate::optimizer::Criterion;
use crate::samplers::SamplerKind;
use crate::stein::SteinFamily;
use crate::variance::{default_bn, Kernel};

fn default_g() -> f64 {
    100.0
}

fn default_k_test() -> usize {
    100
}

fn default_true() -> bool {
    true
}

fn default_test_chains() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// The bundled synthetic logistic dataset (N = 500, d = 8).
    Synthetic { seed: u64 },
    Csv {
        path: PathBuf,
        label_column: String,
        #[serde(default = "default_true")]
        intercept: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Gaussian {
        dim: usize,
    },
    Gmm {
        rho: f64,
        mu: Vec<f64>,
        sigma: Vec<Vec<f64>>,
    },
    GmmIsolated {
        rho: f64,
        mu1: f64,
        sigma1: f64,
        mu2: f64,
        sigma2: f64,
    },
    Banana {
        p: f64,
        b: f64,
        dim: usize,
    },
    Logistic {
        dataset: DatasetSpec,
        #[serde(default = "default_g")]
        g: f64,
        #[serde(default = "default_k_test")]
        k_test: usize,
        #[serde(default)]
        split_seed: u64,
    },
    Probit {
        dataset: DatasetSpec,
        #[serde(default = "default_g")]
        g: f64,
        #[serde(default = "default_k_test")]
        k_test: usize,
        #[serde(default)]
        split_seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionalSpec {
    /// `x_i`
    Coordinate { index: usize },
    /// `x_i²`
    SecondMoment { index: usize },
    /// `x_i³`
    Cube { index: usize },
    /// Average likelihood of the held-out regression rows.
    TestLikelihood,
}

impl FunctionalSpec {
    /// Key into [`TargetModel::exact_moments`].
    pub fn name(&self) -> String {
        match self {
            FunctionalSpec::Coordinate { index } => format!("mean[{index}]"),
            FunctionalSpec::SecondMoment { index } => format!("second_moment[{index}]"),
            FunctionalSpec::Cube { index } => format!("cube[{index}]"),
            FunctionalSpec::TestLikelihood => "test_likelihood".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    pub gamma: f64,
    /// Starting point of every chain; the origin when absent.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Protocol {
    pub n_burn: usize,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default = "default_test_chains")]
    pub n_test_chains: usize,
    /// Truncation point for training.
    pub bn_train: usize,
    /// Truncation point on test chains; `⌈n_test^{1/3}⌉` when absent.
    #[serde(default)]
    pub bn_test: Option<usize>,
    #[serde(default)]
    pub kernel: Kernel,
    /// Emit the training-chain ACF up to this lag.
    #[serde(default)]
    pub acf_max_lag: Option<usize>,
}

impl Protocol {
    pub fn bn_test(&self) -> usize {
        self.bn_test.unwrap_or_else(|| default_bn(self.n_test))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilySpec {
    FirstOrder,
    SecondOrder,
    Rbf { r: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodSpec {
    Esvm,
    Evm,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlVariateSpec {
    pub family: FamilySpec,
    pub methods: Vec<MethodSpec>,
    /// Ridge on the normal equations; `1e-8 · trace / p` when absent.
    #[serde(default)]
    pub ridge: Option<f64>,
}

impl ControlVariateSpec {
    /// Fitting criteria in the order listed, `none` dropped.
    pub fn criteria(&self) -> Vec<Criterion> {
        let mut out = Vec::new();
        for m in &self.methods {
            let c = match m {
                MethodSpec::Esvm => Criterion::Esvm,
                MethodSpec::Evm => Criterion::Evm,
                MethodSpec::None => continue,
            };
            if !out.contains(&c) {
                out.push(c);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub target: TargetSpec,
    pub functional: FunctionalSpec,
    pub sampler: SamplerSpec,
    pub protocol: Protocol,
    pub control_variate: ControlVariateSpec,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| EsvmError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EsvmError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            EsvmError::Config(msg) => EsvmError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| EsvmError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.protocol;
        let bad = |msg: String| Err(EsvmError::Config(msg));
        if p.n_train < 2 || p.n_test < 2 {
            return bad("n_train and n_test must be at least 2".into());
        }
        if p.n_test_chains == 0 {
            return bad("n_test_chains must be positive".into());
        }
        if p.bn_train == 0 || p.bn_train > p.n_train {
            return bad(format!("bn_train = {} must lie in [1, n_train = {}]", p.bn_train, p.n_train));
        }
        let bn_test = p.bn_test();
        if bn_test == 0 || bn_test > p.n_test {
            return bad(format!("bn_test = {bn_test} must lie in [1, n_test = {}]", p.n_test));
        }
        if let Some(lag) = p.acf_max_lag {
            if lag >= p.n_train {
                return bad(format!("acf_max_lag = {lag} must be below n_train"));
            }
        }
        if !(self.sampler.gamma > 0.0 && self.sampler.gamma.is_finite()) {
            return bad(format!("step size {} must be positive", self.sampler.gamma));
        }
        if self.control_variate.methods.is_empty() {
            return bad("methods must list at least one of esvm, evm, none".into());
        }
        if let FamilySpec::Rbf { r } = self.control_variate.family {
            if r == 0 {
                return bad("rbf family needs r >= 1".into());
            }
        }
        if let Some(ridge) = self.control_variate.ridge {
            if !(ridge >= 0.0) {
                return bad("ridge must be non-negative".into());
            }
        }
        Ok(())
    }
}

/// Scalar functional of a state.
pub type Functional = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Everything a run needs, instantiated from a config.
pub struct BuiltExperiment {
    pub target: Arc<dyn TargetModel>,
    pub functional: Functional,
    pub family: SteinFamily,
    /// Exact `π(f)` when the target provides it.
    pub exact_value: Option<f64>,
    pub dataset_manifest: Option<DatasetManifest>,
    pub x0: Vec<f64>,
}

fn load_dataset(spec: &DatasetSpec, k_test: usize, split_seed: u64) -> Result<(Dataset, Option<DatasetManifest>)> {
    match spec {
        DatasetSpec::Synthetic { seed } => {
            let s = synthetic_logistic_dataset(*seed);
            Ok((Dataset::from_raw(&s.rows, &s.labels, k_test, split_seed, true)?, None))
        }
        DatasetSpec::Csv {
            path,
            label_column,
            intercept,
        } => {
            let (d, m) = ingest_csv(path, label_column, k_test, split_seed, *intercept)?;
            Ok((d, Some(m)))
        }
    }
}

impl BuiltExperiment {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let mut regression: Option<Arc<RegressionPosterior>> = None;
        let mut dataset_manifest = None;
        let target: Arc<dyn TargetModel> = match &config.target {
            TargetSpec::Gaussian { dim } => Arc::new(StandardGaussian::new(*dim)?),
            TargetSpec::Gmm { rho, mu, sigma } => Arc::new(gmm_target(*rho, mu.clone(), sigma.clone())?),
            TargetSpec::GmmIsolated {
                rho,
                mu1,
                sigma1,
                mu2,
                sigma2,
            } => Arc::new(gmm_isolated_target(*rho, *mu1, *sigma1, *mu2, *sigma2)?),
            TargetSpec::Banana { p, b, dim } => Arc::new(banana_target(*p, *b, *dim)?),
            TargetSpec::Logistic {
                dataset,
                g,
                k_test,
                split_seed,
            }
            | TargetSpec::Probit {
                dataset,
                g,
                k_test,
                split_seed,
            } => {
                let link = if matches!(config.target, TargetSpec::Logistic { .. }) {
                    Link::Logistic
                } else {
                    Link::Probit
                };
                let (data, manifest) = load_dataset(dataset, *k_test, *split_seed)?;
                dataset_manifest = manifest;
                let post = Arc::new(RegressionPosterior::new(link, data, *g)?);
                regression = Some(post.clone());
                post
            }
        };
        let d = target.dim();
        let functional: Functional = match config.functional {
            FunctionalSpec::Coordinate { index }
            | FunctionalSpec::SecondMoment { index }
            | FunctionalSpec::Cube { index }
                if index >= d =>
            {
                return Err(EsvmError::Config(format!(
                    "functional index {index} out of range for dimension {d}"
                )))
            }
            FunctionalSpec::Coordinate { index } => Arc::new(move |x: &[f64]| x[index]),
            FunctionalSpec::SecondMoment { index } => Arc::new(move |x: &[f64]| x[index] * x[index]),
            FunctionalSpec::Cube { index } => Arc::new(move |x: &[f64]| x[index].powi(3)),
            FunctionalSpec::TestLikelihood => {
                let post = regression.ok_or_else(|| {
                    EsvmError::Config("test_likelihood needs a logistic or probit target".into())
                })?;
                Arc::new(move |x: &[f64]| post.average_test_likelihood(x))
            }
        };
        let family = match config.control_variate.family {
            FamilySpec::FirstOrder => SteinFamily::FirstOrder { d },
            FamilySpec::SecondOrder => SteinFamily::SecondOrder { d },
            FamilySpec::Rbf { r } => {
                if d != 1 {
                    return Err(EsvmError::Config("rbf control variates need a one-dimensional target".into()));
                }
                SteinFamily::Rbf { r }
            }
        };
        let x0 = match &config.sampler.x0 {
            Some(x0) if x0.len() != d => {
                return Err(EsvmError::Config(format!("x0 has length {}, target dimension is {d}", x0.len())))
            }
            Some(x0) => x0.clone(),
            None => vec![0.0; d],
        };
        let exact_value = target.exact_moments().get(&config.functional.name()).copied();
        Ok(Self {
            target,
            functional,
            family,
            exact_value,
            dataset_manifest,
            x0,
        })
    }
}
