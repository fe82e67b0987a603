//! The train / fit / evaluate pipeline.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{BuiltExperiment, ExperimentConfig};
use super::report::{
    fmt_float, write_file, EstimatorSummary, FittedControlVariate, FittedMethod, MethodReport, RunInfo, VrfReport,
    SCHEMA_VERSION,
};
use crate::chain::{evaluate, mean, FunctionalSeries, Trajectory};
use crate::error::{EsvmError, Result};
use crate::optimizer::{fit_with_ridge, Criterion, DesignSet};
use crate::samplers::{sample_chain, AcceptanceStats, SamplerConfig};
use crate::seed::SeedKey;
use crate::stein::{control_variate_series, gradients_along};
use crate::variance::{autocovariances, spectral_variance_of, LagWindow};

/// Denominators at or below this mark a VRF as infinite.
pub const VRF_FLOOR: f64 = 1e-300;

/// A post-burn-in chain with `f` and `∇U` evaluated along it.
pub struct ChainData {
    pub trajectory: Trajectory,
    pub f: Vec<f64>,
    pub grads: Vec<f64>,
    pub acceptance: AcceptanceStats,
}

/// Samples the chain on `stream` (0 for training, `j` for test chain `j`)
/// and drops the burn-in. Test chains keep `n_test` states, training
/// `n_train`.
pub fn sample_stream(config: &ExperimentConfig, built: &BuiltExperiment, stream: u64) -> Result<(Trajectory, AcceptanceStats)> {
    let keep = if stream == 0 {
        config.protocol.n_train
    } else {
        config.protocol.n_test
    };
    let sampler = SamplerConfig {
        kind: config.sampler.kind,
        gamma: config.sampler.gamma,
        n_steps: config.protocol.n_burn + keep,
        seed: SeedKey::new(config.seed, stream),
    };
    let (traj, stats) = sample_chain(&sampler, built.target.as_ref(), &built.x0)?;
    Ok((traj.split_burn_in(config.protocol.n_burn)?, stats))
}

fn chain_data(config: &ExperimentConfig, built: &BuiltExperiment, stream: u64) -> Result<ChainData> {
    let (trajectory, acceptance) = sample_stream(config, built, stream)?;
    let f = evaluate(|x| (built.functional)(x), &trajectory)?.into_inner();
    let grads = gradients_along(built.target.as_ref(), &trajectory)?;
    Ok(ChainData {
        trajectory,
        f,
        grads,
        acceptance,
    })
}

/// Spectral variance ratio `V_n(f) / V_n(h)` on one trajectory, both
/// clamped at zero. `None` when the denominator is below [`VRF_FLOOR`].
pub fn vrf(f: &FunctionalSeries, h: &FunctionalSeries, window: &LagWindow) -> Result<Option<f64>> {
    if f.len() != h.len() {
        return Err(EsvmError::DimensionMismatch {
            expected: f.len(),
            found: h.len(),
        });
    }
    let vf = spectral_variance_of(f.values(), window)?.max(0.0);
    let vh = spectral_variance_of(h.values(), window)?.max(0.0);
    Ok(ratio(vf, vh))
}

fn ratio(vf: f64, vh: f64) -> Option<f64> {
    (vh > VRF_FLOOR).then(|| vf / vh)
}

/// Normalised autocorrelations `R̂(s) / R̂(0)` for `s = 0..=max_lag`.
pub fn acf_dump(series: &FunctionalSeries, max_lag: usize) -> Result<Vec<f64>> {
    let acov = autocovariances(series.values(), max_lag)?;
    if acov[0] <= 0.0 {
        return Err(EsvmError::DegenerateSeries);
    }
    Ok(acov.iter().map(|r| r / acov[0]).collect())
}

/// Output of the training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingOutcome {
    pub fits: Vec<FittedMethod>,
    pub bn_train: usize,
    pub acceptance: AcceptanceStats,
    pub acf: Option<Vec<f64>>,
    #[serde(skip)]
    pub train_seconds: f64,
    #[serde(skip)]
    pub fit_seconds: f64,
}

impl TrainingOutcome {
    pub fn to_json(&self) -> Result<String> {
        super::report::to_json_string(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| EsvmError::Config(format!("malformed fit file: {e}")))
    }
}

fn fit_all(
    config: &ExperimentConfig,
    built: &BuiltExperiment,
    train: &ChainData,
    criteria: &[Criterion],
    bn: usize,
) -> Result<Vec<FittedMethod>> {
    if criteria.is_empty() {
        return Ok(Vec::new());
    }
    let window = LagWindow::new(bn, config.protocol.kernel)?;
    let design = DesignSet::assemble(&built.family, &train.f, &train.trajectory, &train.grads, window)?;
    criteria
        .par_iter()
        .map(|&criterion| {
            let fit = fit_with_ridge(&design, criterion, config.control_variate.ridge)?;
            Ok(FittedMethod {
                criterion,
                control_variate: FittedControlVariate {
                    family: built.family,
                    params: fit.theta.clone(),
                },
                fit,
            })
        })
        .collect()
}

/// Samples the training chain and fits every configured method on it.
pub fn train_and_fit(config: &ExperimentConfig, built: &BuiltExperiment) -> Result<TrainingOutcome> {
    let clock = Instant::now();
    let train = chain_data(config, built, 0).map_err(|e| e.in_stage("train"))?;
    let acf = match config.protocol.acf_max_lag {
        Some(lag) => Some(
            FunctionalSeries::new(train.f.clone())
                .and_then(|s| acf_dump(&s, lag))
                .map_err(|e| e.in_stage("train"))?,
        ),
        None => None,
    };
    let train_seconds = clock.elapsed().as_secs_f64();
    let clock = Instant::now();
    let criteria = config.control_variate.criteria();
    let fits = fit_all(config, built, &train, &criteria, config.protocol.bn_train).map_err(|e| e.in_stage("fit"))?;
    Ok(TrainingOutcome {
        fits,
        bn_train: config.protocol.bn_train,
        acceptance: train.acceptance,
        acf,
        train_seconds,
        fit_seconds: clock.elapsed().as_secs_f64(),
    })
}

/// Per-chain estimates: the vanilla one first, then one per control variate.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainEstimates {
    pub acceptance_rate: f64,
    pub averages: Vec<f64>,
    pub spectral_variances: Vec<f64>,
}

/// Test-stage results, indexed by chain (stream `j + 1` at position `j`).
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub chains: Vec<ChainEstimates>,
    pub bn_test: usize,
    pub seconds: f64,
}

impl Evaluation {
    /// Averages and clamped spectral variances of estimator `k` (0 = vanilla).
    fn column(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        self.chains
            .iter()
            .map(|c| (c.averages[k], c.spectral_variances[k]))
            .unzip()
    }

    fn vrfs(&self, k: usize) -> Vec<Option<f64>> {
        self.chains
            .iter()
            .map(|c| ratio(c.spectral_variances[0], c.spectral_variances[k]))
            .collect()
    }

    /// Mean of the finite VRFs of control variate `k` (1-based) and the
    /// number of infinite ones.
    pub fn mean_vrf(&self, k: usize) -> (Option<f64>, usize) {
        let v = self.vrfs(k);
        let finite: Vec<f64> = v.iter().flatten().copied().collect();
        let mean = (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64);
        (mean, v.len() - finite.len())
    }
}

/// Runs the `n_test_chains` test chains and evaluates the vanilla estimator
/// and every control variate on each. All control variates share the same
/// chains.
pub fn evaluate_control_variates(
    config: &ExperimentConfig,
    built: &BuiltExperiment,
    cvs: &[FittedControlVariate],
) -> Result<Evaluation> {
    let clock = Instant::now();
    let bn_test = config.protocol.bn_test();
    let window = LagWindow::new(bn_test, config.protocol.kernel)?;
    for cv in cvs {
        if cv.family != built.family || cv.params.len() != built.family.n_params() {
            return Err(EsvmError::Config(format!(
                "fitted control variate ({}, {} parameters) does not match the configured family {}",
                cv.family.name(),
                cv.params.len(),
                built.family.name()
            )));
        }
    }
    let chains = (1..=config.protocol.n_test_chains as u64)
        .into_par_iter()
        .map(|j| -> Result<ChainEstimates> {
            let chain = chain_data(config, built, j)?;
            let mut averages = vec![mean(&chain.f)?];
            let mut spectral_variances = vec![spectral_variance_of(&chain.f, &window)?.max(0.0)];
            for cv in cvs {
                let g = control_variate_series(&cv.family, &cv.params, &chain.trajectory, &chain.grads)?;
                let h: Vec<f64> = chain.f.iter().zip(&g).map(|(f, g)| f - g).collect();
                let h = FunctionalSeries::new(h)?;
                averages.push(mean(h.values())?);
                spectral_variances.push(spectral_variance_of(h.values(), &window)?.max(0.0));
            }
            Ok(ChainEstimates {
                acceptance_rate: chain.acceptance.rate(),
                averages,
                spectral_variances,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("test"))?;
    Ok(Evaluation {
        chains,
        bn_test,
        seconds: clock.elapsed().as_secs_f64(),
    })
}

/// Evaluates the fits of `training` on the test chains and assembles the
/// report.
pub fn evaluate_training(
    config: &ExperimentConfig,
    built: &BuiltExperiment,
    training: &TrainingOutcome,
) -> Result<VrfReport> {
    let cvs: Vec<FittedControlVariate> = training.fits.iter().map(|m| m.control_variate.clone()).collect();
    let evaluation = evaluate_control_variates(config, built, &cvs)?;
    let (avg, sv) = evaluation.column(0);
    let vanilla = EstimatorSummary::new(avg, sv, built.exact_value);
    let methods = training
        .fits
        .iter()
        .enumerate()
        .map(|(i, fitted)| {
            let (avg, sv) = evaluation.column(i + 1);
            MethodReport::new(
                fitted.clone(),
                EstimatorSummary::new(avg, sv, built.exact_value),
                evaluation.vrfs(i + 1),
            )
        })
        .collect();
    let mut run_info = RunInfo::now(rayon::current_num_threads());
    run_info.train_seconds = training.train_seconds;
    run_info.fit_seconds = training.fit_seconds;
    run_info.test_seconds = evaluation.seconds;
    Ok(VrfReport {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        target: built.target.label(),
        functional: config.functional.name(),
        exact_value: built.exact_value,
        bn_train: training.bn_train,
        bn_test: evaluation.bn_test,
        dataset: built.dataset_manifest.clone(),
        train_acceptance: training.acceptance,
        test_acceptance_rates: evaluation.chains.iter().map(|c| c.acceptance_rate).collect(),
        vanilla,
        methods,
        acf: training.acf.clone(),
        run_info,
    })
}

/// Full pipeline: train chain, fits, test chains, report.
pub fn run_experiment(config: &ExperimentConfig) -> Result<VrfReport> {
    let built = BuiltExperiment::new(config).map_err(|e| e.in_stage("setup"))?;
    let training = train_and_fit(config, &built)?;
    evaluate_training(config, &built, &training)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub bn_train: usize,
    pub objective_at_theta: f64,
    pub mean_vrf: Option<f64>,
    pub n_infinite: usize,
}

/// Re-fits ESVM for every training truncation point in `bn_values` on one
/// training chain and evaluates all fits on a shared set of test chains.
pub fn bn_sweep(config: &ExperimentConfig, bn_values: &[usize]) -> Result<Vec<SweepRow>> {
    if bn_values.is_empty() {
        return Err(EsvmError::Config("bn sweep needs at least one value".into()));
    }
    if let Some(&bn) = bn_values.iter().find(|&&b| b == 0 || b > config.protocol.n_train) {
        return Err(EsvmError::Config(format!(
            "sweep value b_n = {bn} must lie in [1, n_train = {}]",
            config.protocol.n_train
        )));
    }
    let built = BuiltExperiment::new(config).map_err(|e| e.in_stage("setup"))?;
    let train = chain_data(config, &built, 0).map_err(|e| e.in_stage("train"))?;
    let fits = bn_values
        .iter()
        .map(|&bn| fit_all(config, &built, &train, &[Criterion::Esvm], bn).map(|mut v| v.remove(0)))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("fit"))?;
    let cvs: Vec<FittedControlVariate> = fits.iter().map(|m| m.control_variate.clone()).collect();
    let evaluation = evaluate_control_variates(config, &built, &cvs)?;
    Ok(bn_values
        .iter()
        .zip(&fits)
        .enumerate()
        .map(|(i, (&bn_train, fitted))| {
            let (mean_vrf, n_infinite) = evaluation.mean_vrf(i + 1);
            SweepRow {
                bn_train,
                objective_at_theta: fitted.fit.objective_at_theta,
                mean_vrf,
                n_infinite,
            }
        })
        .collect())
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    write_file(path, |w| {
        writeln!(w, "bn_train,objective_at_theta,mean_vrf,n_infinite")?;
        for r in rows {
            writeln!(
                w,
                "{},{},{},{}",
                r.bn_train,
                fmt_float(r.objective_at_theta),
                r.mean_vrf.map(fmt_float).unwrap_or_default(),
                r.n_infinite
            )?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::report::emit_report;
    use crate::variance::spectral_variance;

    fn small_config(methods: &str) -> ExperimentConfig {
        let text = format!(
            r#"
name = "small"
seed = 11

[target]
kind = "gmm"
rho = 0.5
mu = [0.5, 0.5]
sigma = [[1.0, 0.0], [0.0, 1.0]]

[functional]
kind = "coordinate"
index = 0

[sampler]
kind = "ula"
gamma = 0.1

[protocol]
n_burn = 100
n_train = 2000
n_test = 1000
n_test_chains = 2
bn_train = 20

[control_variate]
family = "second_order"
methods = {methods}
"#
        );
        ExperimentConfig::from_toml_str(&text).unwrap()
    }

    fn series(v: Vec<f64>) -> FunctionalSeries {
        FunctionalSeries::new(v).unwrap()
    }

    #[test]
    fn vrf_examples() {
        let w = LagWindow::trapezoid(3).unwrap();
        let f = series((0..50).map(|k| (k as f64 * 0.1).sin()).collect());
        assert_eq!(vrf(&f, &f, &w).unwrap(), Some(1.0));
        assert_eq!(vrf(&f, &series(vec![2.0; 50]), &w).unwrap(), None);
        assert!(vrf(&f, &series(vec![2.0; 49]), &w).is_err());
    }

    #[test]
    fn acf_examples() {
        let s = series((0..200).map(|k| (k as f64 * 0.7).sin()).collect());
        let acf = acf_dump(&s, 5).unwrap();
        assert_eq!(acf[0], 1.0);
        assert_eq!(acf.len(), 6);
        assert!(matches!(acf_dump(&series(vec![1.0; 10]), 2), Err(EsvmError::DegenerateSeries)));
    }

    #[test]
    fn shapes_with_two_chains() {
        let report = run_experiment(&small_config(r#"["esvm", "evm"]"#)).unwrap();
        assert_eq!(report.n_test_chains(), 2);
        assert_eq!(report.test_acceptance_rates.len(), 2);
        assert_eq!(report.methods.len(), 2);
        for m in &report.methods {
            assert_eq!(m.vrf.len(), 2);
            assert_eq!(m.estimates.averages.len(), 2);
            assert!(m.fit.objective_at_theta <= m.fit.objective_at_zero);
        }
        assert_eq!(report.bn_test, 10);
    }

    #[test]
    fn none_only_has_empty_vrf_section() {
        let report = run_experiment(&small_config(r#"["none"]"#)).unwrap();
        assert!(report.methods.is_empty());
        assert_eq!(report.vanilla.averages.len(), 2);
    }

    #[test]
    fn vrf_matches_offline_recomputation() {
        let config = small_config(r#"["esvm"]"#);
        let report = run_experiment(&config).unwrap();
        let built = BuiltExperiment::new(&config).unwrap();
        let m = &report.methods[0];
        let window = LagWindow::trapezoid(report.bn_test).unwrap();
        for j in 0..2 {
            let (traj, _) = sample_stream(&config, &built, j as u64 + 1).unwrap();
            let f = evaluate(|x| x[0], &traj).unwrap();
            let grads = gradients_along(built.target.as_ref(), &traj).unwrap();
            let g = control_variate_series(&built.family, &m.control_variate.params, &traj, &grads).unwrap();
            let h = series(f.values().iter().zip(&g).map(|(a, b)| a - b).collect());
            assert_eq!(vrf(&f, &h, &window).unwrap(), m.vrf[j]);
            assert_eq!(spectral_variance(&f, &window).unwrap().reported(), report.vanilla.spectral_variances[j]);
        }
    }

    #[test]
    fn report_round_trips_and_is_deterministic() {
        let config = small_config(r#"["esvm", "evm"]"#);
        let a = run_experiment(&config).unwrap();
        let mut b = run_experiment(&config).unwrap();
        b.run_info = a.run_info.clone();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(VrfReport::from_json(&a.to_json().unwrap()).unwrap(), a);

        let dir = tempfile::tempdir().unwrap();
        emit_report(&a, dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("vrf.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 2 * 2);
        assert!(!dir.path().join("acf.csv").exists());
    }

    #[test]
    fn single_value_sweep_matches_run() {
        let config = small_config(r#"["esvm"]"#);
        let report = run_experiment(&config).unwrap();
        let rows = bn_sweep(&config, &[config.protocol.bn_train]).unwrap();
        assert_eq!(rows[0].mean_vrf, report.mean_vrf(Criterion::Esvm));
        assert!(bn_sweep(&config, &[0]).is_err());
    }

    #[test]
    fn stage_tagged_errors() {
        let mut config = small_config(r#"["esvm"]"#);
        config.sampler.gamma = 50.0;
        let err = run_experiment(&config).unwrap_err();
        assert!(matches!(err, EsvmError::Stage { stage: "train", .. }), "{err}");
    }
}
