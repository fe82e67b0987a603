//! Empirical spectral variance minimisation (ESVM) for MCMC estimators.
//!
//! Given a training chain targeting `π ∝ exp(-U)`, the crate fits a Stein
//! control variate `g_θ = -⟨Φ_θ, ∇U⟩ + div Φ_θ` by minimising the lag-window
//! spectral variance of `f - g_θ`, then measures the variance reduction on
//! independent test chains.
//!
//! Module map:
//! - [`chain`]: trajectories, functional series, persistence;
//! - [`samplers`]: ULA, MALA, RWM;
//! - [`variance`]: autocovariances and the spectral variance estimator;
//! - [`stein`]: control-variate families;
//! - [`optimizer`]: ESVM/EVM fitting;
//! - [`models`]: target densities and datasets;
//! - [`harness`]: experiment configs, runs, and reports.

pub mod chain;
pub mod error;
pub mod harness;
pub mod models;
pub mod optimizer;
pub mod samplers;
pub mod seed;
pub mod stein;
pub mod variance;

pub use chain::{ergodic_average, evaluate, FunctionalSeries, Trajectory, TrajectoryMeta};
pub use error::{EsvmError, Result};
pub use harness::{run_experiment, ExperimentConfig, VrfReport};
pub use models::TargetModel;
pub use optimizer::{fit, fit_with_ridge, Criterion, DesignSet, FitMethod, FitResult};
pub use samplers::{sample_chain, AcceptanceStats, SamplerConfig, SamplerKind};
pub use seed::SeedKey;
pub use stein::{SteinFamily, ThetaVector};
pub use variance::{spectral_variance, LagWindow, SpectralVariance};
