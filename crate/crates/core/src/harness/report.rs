//! Run reports and their on-disk formats.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{EsvmError, Result};
use crate::models::DatasetManifest;
use crate::optimizer::{quantile_sorted, Criterion, FitResult};
use crate::samplers::AcceptanceStats;
use crate::stein::SteinFamily;

pub const SCHEMA_VERSION: u32 = 1;

/// Five-number summary of per-chain ergodic averages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    /// Linear-interpolation quantiles; `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        Some(Self {
            min: sorted[0],
            q1: quantile_sorted(&sorted, 0.25),
            median: quantile_sorted(&sorted, 0.5),
            q3: quantile_sorted(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
        })
    }
}

/// Per-chain estimates for one estimator (vanilla or a fitted method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub averages: Vec<f64>,
    /// `V_n` on each test chain, clamped at zero.
    pub spectral_variances: Vec<f64>,
    pub boxplot: Option<Quartiles>,
    /// Boxplot of `average - exact value`, when the exact value is known.
    pub centered_boxplot: Option<Quartiles>,
}

impl EstimatorSummary {
    pub fn new(averages: Vec<f64>, spectral_variances: Vec<f64>, exact: Option<f64>) -> Self {
        let boxplot = Quartiles::of(&averages);
        let centered_boxplot = exact.and_then(|m| {
            let c: Vec<f64> = averages.iter().map(|a| a - m).collect();
            Quartiles::of(&c)
        });
        Self {
            averages,
            spectral_variances,
            boxplot,
            centered_boxplot,
        }
    }
}

/// Fitted parameters tagged with their family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedControlVariate {
    #[serde(flatten)]
    pub family: SteinFamily,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedMethod {
    pub criterion: Criterion,
    pub control_variate: FittedControlVariate,
    pub fit: FitResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub criterion: Criterion,
    pub control_variate: FittedControlVariate,
    pub fit: FitResult,
    pub estimates: EstimatorSummary,
    /// Per-chain VRF; `None` marks a vanishing denominator.
    pub vrf: Vec<Option<f64>>,
    /// Average of the finite per-chain VRFs.
    pub mean_vrf: Option<f64>,
    pub n_infinite: usize,
}

impl MethodReport {
    pub fn new(fitted: FittedMethod, estimates: EstimatorSummary, vrf: Vec<Option<f64>>) -> Self {
        let finite: Vec<f64> = vrf.iter().flatten().copied().collect();
        let mean_vrf = (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64);
        Self {
            criterion: fitted.criterion,
            control_variate: fitted.control_variate,
            fit: fitted.fit,
            estimates,
            n_infinite: vrf.len() - finite.len(),
            vrf,
            mean_vrf,
        }
    }
}

/// Wall-clock facts about a run; ignored when comparing reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub threads: usize,
    pub train_seconds: f64,
    pub fit_seconds: f64,
    pub test_seconds: f64,
}

impl RunInfo {
    pub fn now(threads: usize) -> Self {
        let timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            timestamp,
            threads,
            train_seconds: 0.0,
            fit_seconds: 0.0,
            test_seconds: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VrfReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub target: String,
    pub functional: String,
    pub exact_value: Option<f64>,
    pub bn_train: usize,
    pub bn_test: usize,
    pub dataset: Option<DatasetManifest>,
    pub train_acceptance: AcceptanceStats,
    pub test_acceptance_rates: Vec<f64>,
    pub vanilla: EstimatorSummary,
    pub methods: Vec<MethodReport>,
    /// Training-chain ACF of `f`, when requested.
    pub acf: Option<Vec<f64>>,
    pub run_info: RunInfo,
}

impl VrfReport {
    pub fn method(&self, criterion: Criterion) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.criterion == criterion)
    }

    pub fn mean_vrf(&self, criterion: Criterion) -> Option<f64> {
        self.method(criterion).and_then(|m| m.mean_vrf)
    }

    pub fn n_test_chains(&self) -> usize {
        self.vanilla.averages.len()
    }

    /// JSON with every float written to 17 significant digits.
    pub fn to_json(&self) -> Result<String> {
        to_json_string(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| EsvmError::invalid(format!("malformed report: {e}")))
    }
}

/// Writes floats as `d.dddddddddddddddde±x`; non-finite values become `null`.
struct RoundTripFormatter;

impl serde_json::ser::Formatter for RoundTripFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Serializes with the 17-digit float formatter.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, RoundTripFormatter);
    value
        .serialize(&mut ser)
        .map_err(|e| EsvmError::Numeric(format!("serialization failed: {e}")))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub(crate) fn fmt_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

pub(crate) fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| EsvmError::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| EsvmError::io(path, e))
}

fn write_vrf_csv(report: &VrfReport, w: &mut impl Write) -> io::Result<()> {
    writeln!(
        w,
        "chain,method,vanilla_average,vanilla_spectral_variance,average,spectral_variance,vrf,infinite"
    )?;
    for m in &report.methods {
        for (j, vrf) in m.vrf.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                j + 1,
                m.criterion,
                fmt_float(report.vanilla.averages[j]),
                fmt_float(report.vanilla.spectral_variances[j]),
                fmt_float(m.estimates.averages[j]),
                fmt_float(m.estimates.spectral_variances[j]),
                vrf.map(fmt_float).unwrap_or_else(|| "inf".into()),
                vrf.is_none()
            )?;
        }
    }
    Ok(())
}

fn write_boxplot_csv(report: &VrfReport, w: &mut impl Write) -> io::Result<()> {
    writeln!(w, "estimator,centered,min,q1,median,q3,max")?;
    let rows = std::iter::once(("vanilla".to_string(), &report.vanilla))
        .chain(report.methods.iter().map(|m| (m.criterion.to_string(), &m.estimates)));
    for (name, est) in rows {
        for (centered, q) in [(false, est.boxplot), (true, est.centered_boxplot)] {
            if let Some(q) = q {
                writeln!(
                    w,
                    "{name},{centered},{},{},{},{},{}",
                    fmt_float(q.min),
                    fmt_float(q.q1),
                    fmt_float(q.median),
                    fmt_float(q.q3),
                    fmt_float(q.max)
                )?;
            }
        }
    }
    Ok(())
}

pub(crate) fn write_acf_csv(acf: &[f64], w: &mut impl Write) -> io::Result<()> {
    writeln!(w, "lag,acf")?;
    for (s, v) in acf.iter().enumerate() {
        writeln!(w, "{s},{}", fmt_float(*v))?;
    }
    Ok(())
}

/// Writes `report.json`, `vrf.csv`, `boxplot.csv` and, when the report has
/// an ACF, `acf.csv` into `dir`. Returns the paths written.
pub fn emit_report(report: &VrfReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| EsvmError::io(dir, e))?;
    let json = report.to_json()?;
    let mut written = Vec::new();
    let path = dir.join("report.json");
    write_file(&path, |w| w.write_all(json.as_bytes()))?;
    written.push(path);
    let path = dir.join("vrf.csv");
    write_file(&path, |w| write_vrf_csv(report, w))?;
    written.push(path);
    let path = dir.join("boxplot.csv");
    write_file(&path, |w| write_boxplot_csv(report, w))?;
    written.push(path);
    if let Some(acf) = &report.acf {
        let path = dir.join("acf.csv");
        write_file(&path, |w| write_acf_csv(acf, w))?;
        written.push(path);
    }
    Ok(written)
}
