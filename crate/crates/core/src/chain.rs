//! Trajectories, functional series, and their persistence.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EsvmError, Result};
use crate::samplers::SamplerKind;
use crate::seed::SeedKey;

/// Magic bytes opening a binary trajectory file.
pub const TRAJ_MAGIC: &[u8; 8] = b"ESVMTRAJ";
const HEADER_LEN: usize = 16;

/// Provenance of a trajectory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub sampler: Option<SamplerKind>,
    pub gamma: Option<f64>,
    pub seed: Option<SeedKey>,
    pub x0: Option<Vec<f64>>,
    pub burn_in_removed: bool,
}

/// An immutable chain of `dim`-dimensional states stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    data: Vec<f64>,
    dim: usize,
    meta: TrajectoryMeta,
}

impl Trajectory {
    /// Builds a trajectory from row-major state data.
    pub fn from_flat(data: Vec<f64>, dim: usize, meta: TrajectoryMeta) -> Result<Self> {
        if dim == 0 {
            return Err(EsvmError::invalid("trajectory dimension must be positive"));
        }
        if data.is_empty() {
            return Err(EsvmError::invalid("trajectory must hold at least one state"));
        }
        if data.len() % dim != 0 {
            return Err(EsvmError::invalid(format!(
                "{} values do not split into states of dimension {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(EsvmError::NonFinite { index: pos / dim });
        }
        Ok(Self { data, dim, meta })
    }

    pub fn from_states(states: &[Vec<f64>], meta: TrajectoryMeta) -> Result<Self> {
        let dim = states.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = states.iter().find(|s| s.len() != dim) {
            return Err(EsvmError::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        Self::from_flat(states.concat(), dim, meta)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn meta(&self) -> &TrajectoryMeta {
        &self.meta
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn states(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Drops the first `n_burn` states.
    pub fn split_burn_in(&self, n_burn: usize) -> Result<Trajectory> {
        let n = self.len();
        if n_burn >= n {
            return Err(EsvmError::invalid(format!(
                "burn-in {n_burn} leaves no states out of {n}"
            )));
        }
        let mut meta = self.meta.clone();
        meta.burn_in_removed = true;
        Ok(Trajectory {
            data: self.data[n_burn * self.dim..].to_vec(),
            dim: self.dim,
            meta,
        })
    }

    /// Writes the binary trajectory file plus a `<path>.json` metadata sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| EsvmError::io(path, e))?;
        let mut w = BufWriter::new(file);
        let dim = u32::try_from(self.dim)
            .map_err(|_| EsvmError::invalid("dimension does not fit in u32"))?;
        let mut header = [0u8; HEADER_LEN];
        header[..8].copy_from_slice(TRAJ_MAGIC);
        header[8..12].copy_from_slice(&dim.to_le_bytes());
        let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
            w.write_all(&header)?;
            for v in &self.data {
                w.write_all(&v.to_le_bytes())?;
            }
            w.flush()
        };
        write(&mut w).map_err(|e| EsvmError::io(path, e))?;

        let sidecar = sidecar_path(path);
        let json = serde_json::to_string_pretty(&self.meta)
            .map_err(|e| EsvmError::Numeric(e.to_string()))?;
        std::fs::write(&sidecar, json).map_err(|e| EsvmError::io(&sidecar, e))
    }

    /// Reads a trajectory written by [`Trajectory::save`]. A missing sidecar
    /// yields default metadata.
    pub fn load(path: &Path) -> Result<Trajectory> {
        let file = File::open(path).map_err(|e| EsvmError::io(path, e))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| EsvmError::io(path, e))?;
        if bytes.len() < HEADER_LEN || &bytes[..8] != TRAJ_MAGIC {
            return Err(EsvmError::invalid(format!(
                "{}: not a trajectory file",
                path.display()
            )));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[HEADER_LEN..];
        if body.len() % 8 != 0 {
            return Err(EsvmError::invalid(format!(
                "{}: truncated payload",
                path.display()
            )));
        }
        let data: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();

        let sidecar = sidecar_path(path);
        let meta = match std::fs::read_to_string(&sidecar) {
            Ok(s) => serde_json::from_str(&s)
                .map_err(|e| EsvmError::invalid(format!("{}: {e}", sidecar.display())))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => TrajectoryMeta::default(),
            Err(e) => return Err(EsvmError::io(&sidecar, e)),
        };
        Trajectory::from_flat(data, dim, meta)
    }

    /// CSV export: header `x0,x1,...` and one state per row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.dim).map(|i| format!("x{i}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for s in self.states() {
            let row: Vec<String> = s.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Values `h(X_0), ..., h(X_{n-1})` of a scalar functional along a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSeries(Vec<f64>);

impl FunctionalSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(EsvmError::NonFinite { index });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for FunctionalSeries {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// `n^{-1} Σ h(X_k)`.
pub fn ergodic_average(series: &FunctionalSeries) -> Result<f64> {
    mean(series.values())
}

pub(crate) fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(EsvmError::EmptySeries);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Applies `f` to every state, in order.
pub fn evaluate<F>(f: F, traj: &Trajectory) -> Result<FunctionalSeries>
where
    F: Fn(&[f64]) -> f64,
{
    let values = traj
        .states()
        .enumerate()
        .map(|(index, x)| {
            let v = f(x);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(EsvmError::NonFinite { index })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FunctionalSeries(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(rows: &[&[f64]]) -> Trajectory {
        let states: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        Trajectory::from_states(&states, TrajectoryMeta::default()).unwrap()
    }

    #[test]
    fn average_of_small_series() {
        let s = FunctionalSeries::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(ergodic_average(&s).unwrap(), 2.0);
        let c = FunctionalSeries::new(vec![2.5; 17]).unwrap();
        assert_eq!(ergodic_average(&c).unwrap(), 2.5);
    }

    #[test]
    fn empty_series_is_an_error() {
        let s = FunctionalSeries::new(vec![]).unwrap();
        let err = ergodic_average(&s).unwrap_err();
        assert_eq!(err.to_string(), "empty series");
    }

    #[test]
    fn burn_in_keeps_suffix() {
        let t = traj(&[&[0.0], &[1.0], &[2.0], &[3.0], &[4.0]]);
        let s = t.split_burn_in(2).unwrap();
        assert_eq!(s.as_flat(), &[2.0, 3.0, 4.0]);
        assert!(s.meta().burn_in_removed);
        assert_eq!(t.split_burn_in(0).unwrap().as_flat(), t.as_flat());
        assert!(t.split_burn_in(5).is_err());
    }

    #[test]
    fn burn_in_composes() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, -(i as f64)]).collect();
        let t = Trajectory::from_states(&rows, TrajectoryMeta::default()).unwrap();
        let once = t.split_burn_in(7).unwrap();
        let twice = t.split_burn_in(3).unwrap().split_burn_in(4).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn evaluate_applies_in_order() {
        let t = traj(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let s = evaluate(|x| x[0], &t).unwrap();
        assert_eq!(s.values(), &[1.0, 3.0]);
        let t = traj(&[&[2.0, 0.0]]);
        assert_eq!(evaluate(|x| x[0] * x[0], &t).unwrap().values(), &[4.0]);
    }

    #[test]
    fn evaluate_names_non_finite_index() {
        let t = traj(&[&[1.0], &[0.0], &[2.0]]);
        match evaluate(|x| 1.0 / x[0], &t) {
            Err(EsvmError::NonFinite { index }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_non_finite_states() {
        let err = Trajectory::from_flat(vec![0.0, 1.0, f64::NAN, 2.0], 2, Default::default());
        assert!(matches!(err, Err(EsvmError::NonFinite { index: 1 })));
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain.bin");
        let meta = TrajectoryMeta {
            sampler: Some(SamplerKind::Mala),
            gamma: Some(0.25),
            seed: Some(SeedKey::new(3, 4)),
            x0: Some(vec![0.0, 0.0]),
            burn_in_removed: true,
        };
        let t = Trajectory::from_flat(vec![0.1, -2.0, 3.5e-300, 1e300, 7.0, 8.0], 2, meta)
            .unwrap();
        t.save(&path).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"ESVMTRAJ");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(&bytes[12..16], &[0, 0, 0, 0]);
        assert_eq!(bytes.len(), 16 + 6 * 8);
        assert_eq!(&bytes[16..24], &0.1f64.to_le_bytes());

        assert_eq!(Trajectory::load(&path).unwrap(), t);
    }

    #[test]
    fn csv_export() {
        let t = traj(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x0,x1");
        assert_eq!(lines.len(), 3);
        let parsed: Vec<f64> = lines[2].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(parsed, vec![3.0, 4.0]);
    }
}
