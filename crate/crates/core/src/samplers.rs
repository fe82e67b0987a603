//! ULA, MALA, and random-walk Metropolis kernels.
//!
//! Every step draws `d` standard normals (coordinate order), and the
//! Metropolis kernels then draw exactly one uniform, whether or not the
//! proposal is accepted. Acceptance is decided as `ln u < ln α`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::chain::{Trajectory, TrajectoryMeta};
use crate::error::{EsvmError, Result};
use crate::models::TargetModel;
use crate::seed::SeedKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Ula,
    Mala,
    Rwm,
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplerKind::Ula => "ULA",
            SamplerKind::Mala => "MALA",
            SamplerKind::Rwm => "RWM",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub gamma: f64,
    pub n_steps: usize,
    pub seed: SeedKey,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(EsvmError::invalid(format!("step size {} must be positive", self.gamma)));
        }
        if self.n_steps == 0 {
            return Err(EsvmError::invalid("n_steps must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub proposed: u64,
    pub accepted: u64,
    /// Proposals rejected because the log acceptance ratio was not finite.
    pub non_finite: u64,
}

impl AcceptanceStats {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            return f64::NAN;
        }
        self.accepted as f64 / self.proposed as f64
    }
}

/// `x - γ ∇U(x) + √(2γ) ξ`.
pub fn ula_step(x: &[f64], grad_u: &[f64], gamma: f64, noise: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len()];
    ula_step_into(x, grad_u, gamma, noise, &mut out)?;
    Ok(out)
}

fn ula_step_into(x: &[f64], grad_u: &[f64], gamma: f64, noise: &[f64], out: &mut [f64]) -> Result<()> {
    if noise.len() != x.len() || grad_u.len() != x.len() {
        return Err(EsvmError::DimensionMismatch {
            expected: x.len(),
            found: if noise.len() != x.len() { noise.len() } else { grad_u.len() },
        });
    }
    if grad_u.iter().any(|g| !g.is_finite()) {
        return Err(EsvmError::Numeric("non-finite gradient in ULA step".into()));
    }
    let scale = (2.0 * gamma).sqrt();
    for i in 0..x.len() {
        out[i] = x[i] - gamma * grad_u[i] + scale * noise[i];
    }
    Ok(())
}

/// `log q_γ(from, to)` up to its normalising constant:
/// `-‖to - from + γ∇U(from)‖² / (4γ)`.
fn log_langevin_density(from: &[f64], grad_from: &[f64], to: &[f64], gamma: f64) -> f64 {
    let sq: f64 = (0..from.len())
        .map(|i| {
            let r = to[i] - from[i] + gamma * grad_from[i];
            r * r
        })
        .sum();
    -sq / (4.0 * gamma)
}

/// Log MALA acceptance ratio `log[π(y) q(y, x) / (π(x) q(x, y))]`.
pub fn mala_log_ratio(
    x: &[f64],
    u_x: f64,
    grad_x: &[f64],
    y: &[f64],
    u_y: f64,
    grad_y: &[f64],
    gamma: f64,
) -> f64 {
    (u_x - u_y) + log_langevin_density(y, grad_y, x, gamma)
        - log_langevin_density(x, grad_x, y, gamma)
}

/// Log RWM acceptance ratio `U(x) - U(y)`.
pub fn rwm_log_ratio(u_x: f64, u_y: f64) -> f64 {
    u_x - u_y
}

/// Mutable state of a single chain: position with cached `U` and `∇U`.
struct Cursor {
    x: Vec<f64>,
    u: f64,
    grad: Vec<f64>,
    y: Vec<f64>,
    grad_y: Vec<f64>,
    noise: Vec<f64>,
}

impl Cursor {
    fn new<T: TargetModel + ?Sized>(target: &T, x0: &[f64]) -> Self {
        let d = x0.len();
        let mut grad = vec![0.0; d];
        let u = target.potential_and_gradient(x0, &mut grad);
        Self {
            x: x0.to_vec(),
            u,
            grad,
            y: vec![0.0; d],
            grad_y: vec![0.0; d],
            noise: vec![0.0; d],
        }
    }

    fn draw_noise<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for z in self.noise.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
    }

    /// Metropolis decision; consumes exactly one uniform.
    fn decide<R: Rng + ?Sized>(&mut self, log_ratio: f64, u_y: f64, rng: &mut R, stats: &mut AcceptanceStats) -> bool {
        let log_u = rng.random::<f64>().ln();
        stats.proposed += 1;
        if !log_ratio.is_finite() && log_ratio != f64::INFINITY {
            stats.non_finite += 1;
            return false;
        }
        if log_u < log_ratio {
            std::mem::swap(&mut self.x, &mut self.y);
            std::mem::swap(&mut self.grad, &mut self.grad_y);
            self.u = u_y;
            stats.accepted += 1;
            true
        } else {
            false
        }
    }

    fn ula<T: TargetModel + ?Sized, R: Rng + ?Sized>(&mut self, target: &T, gamma: f64, rng: &mut R, stats: &mut AcceptanceStats) -> Result<()> {
        self.draw_noise(rng);
        ula_step_into(&self.x, &self.grad, gamma, &self.noise, &mut self.y)?;
        std::mem::swap(&mut self.x, &mut self.y);
        self.u = target.potential_and_gradient(&self.x, &mut self.grad);
        stats.proposed += 1;
        stats.accepted += 1;
        Ok(())
    }

    fn mala<T: TargetModel + ?Sized, R: Rng + ?Sized>(&mut self, target: &T, gamma: f64, rng: &mut R, stats: &mut AcceptanceStats) -> Result<bool> {
        self.draw_noise(rng);
        ula_step_into(&self.x, &self.grad, gamma, &self.noise, &mut self.y)?;
        let u_y = target.potential_and_gradient(&self.y, &mut self.grad_y);
        let log_ratio = if u_y.is_finite() && self.grad_y.iter().all(|g| g.is_finite()) {
            mala_log_ratio(&self.x, self.u, &self.grad, &self.y, u_y, &self.grad_y, gamma)
        } else {
            f64::NAN
        };
        Ok(self.decide(log_ratio, u_y, rng, stats))
    }

    fn rwm<T: TargetModel + ?Sized, R: Rng + ?Sized>(&mut self, target: &T, gamma: f64, rng: &mut R, stats: &mut AcceptanceStats) -> bool {
        self.draw_noise(rng);
        let scale = gamma.sqrt();
        for i in 0..self.x.len() {
            self.y[i] = self.x[i] + scale * self.noise[i];
        }
        let u_y = target.potential(&self.y);
        let log_ratio = if u_y.is_finite() { rwm_log_ratio(self.u, u_y) } else { f64::NAN };
        // The cached gradient is unused by RWM and goes stale after a move.
        self.decide(log_ratio, u_y, rng, stats)
    }
}

/// One MALA transition from `x`. Returns the new state and whether the
/// proposal was accepted.
pub fn mala_step<T: TargetModel + ?Sized, R: Rng + ?Sized>(
    x: &[f64],
    target: &T,
    gamma: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, bool)> {
    let mut cursor = Cursor::new(target, x);
    let accepted = cursor.mala(target, gamma, rng, &mut AcceptanceStats::default())?;
    Ok((cursor.x, accepted))
}

/// One random-walk Metropolis transition from `x`.
pub fn rwm_step<T: TargetModel + ?Sized, R: Rng + ?Sized>(
    x: &[f64],
    target: &T,
    gamma: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, bool)> {
    let mut cursor = Cursor::new(target, x);
    let accepted = cursor.rwm(target, gamma, rng, &mut AcceptanceStats::default());
    Ok((cursor.x, accepted))
}

/// Runs `config.n_steps - 1` transitions from `x0`; the returned trajectory
/// holds `x0` as its first state.
pub fn sample_chain<T: TargetModel + ?Sized>(
    config: &SamplerConfig,
    target: &T,
    x0: &[f64],
) -> Result<(Trajectory, AcceptanceStats)> {
    config.validate()?;
    if x0.len() != target.dim() {
        return Err(EsvmError::DimensionMismatch {
            expected: target.dim(),
            found: x0.len(),
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(EsvmError::invalid("starting point must be finite"));
    }
    let d = x0.len();
    let mut rng = config.seed.rng();
    let mut stats = AcceptanceStats::default();
    let mut cursor = Cursor::new(target, x0);
    if config.kind != SamplerKind::Rwm && cursor.grad.iter().any(|g| !g.is_finite()) {
        return Err(EsvmError::Numeric("non-finite gradient at the starting point".into()));
    }
    let mut data = Vec::with_capacity(config.n_steps * d);
    data.extend_from_slice(x0);
    for k in 1..config.n_steps {
        match config.kind {
            SamplerKind::Ula => cursor.ula(target, config.gamma, &mut rng, &mut stats)?,
            SamplerKind::Mala => {
                cursor.mala(target, config.gamma, &mut rng, &mut stats)?;
            }
            SamplerKind::Rwm => {
                cursor.rwm(target, config.gamma, &mut rng, &mut stats);
            }
        }
        if cursor.x.iter().any(|v| !v.is_finite()) {
            return Err(EsvmError::Numeric(format!("{} chain diverged at step {k}", config.kind)));
        }
        data.extend_from_slice(&cursor.x);
    }
    let meta = TrajectoryMeta {
        sampler: Some(config.kind),
        gamma: Some(config.gamma),
        seed: Some(config.seed),
        x0: Some(x0.to_vec()),
        burn_in_removed: false,
    };
    Ok((Trajectory::from_flat(data, d, meta)?, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::StandardGaussian;
    use rand::SeedableRng;

    struct Flat(usize);

    impl TargetModel for Flat {
        fn dim(&self) -> usize {
            self.0
        }
        fn potential(&self, _: &[f64]) -> f64 {
            0.0
        }
        fn gradient(&self, _: &[f64], g: &mut [f64]) {
            g.fill(0.0);
        }
        fn label(&self) -> String {
            "flat".into()
        }
    }

    fn cfg(kind: SamplerKind, gamma: f64, n_steps: usize, stream: u64) -> SamplerConfig {
        SamplerConfig {
            kind,
            gamma,
            n_steps,
            seed: SeedKey::new(2024, stream),
        }
    }

    #[test]
    fn ula_step_examples() {
        assert_eq!(ula_step(&[0.0, 0.0], &[0.0, 0.0], 0.5, &[1.0, 1.0]).unwrap(), vec![1.0, 1.0]);
        let y = ula_step(&[2.0, 0.0], &[2.0, 0.0], 0.1, &[0.0, 0.0]).unwrap();
        assert!((y[0] - 1.8).abs() < 1e-15 && y[1] == 0.0);
        assert!(ula_step(&[0.0], &[f64::NAN], 0.1, &[0.0]).is_err());
        assert!(ula_step(&[0.0], &[0.0], 0.1, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn ula_on_gaussian_is_the_ar1_recursion() {
        let target = StandardGaussian::new(2).unwrap();
        let gamma = 0.1;
        let config = cfg(SamplerKind::Ula, gamma, 500, 1);
        let (traj, stats) = sample_chain(&config, &target, &[1.0, -2.0]).unwrap();
        assert_eq!(stats.accepted, stats.proposed);
        let mut rng = config.seed.rng();
        let mut x = [1.0, -2.0];
        for k in 1..500 {
            for xi in x.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *xi = (1.0 - gamma) * *xi + (2.0 * gamma).sqrt() * z;
            }
            for (a, b) in traj.state(k).iter().zip(&x) {
                assert!((a - b).abs() <= 1e-14 * (1.0 + b.abs()), "step {k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn mala_accepts_null_move_at_stationary_point() {
        let target = StandardGaussian::new(2).unwrap();
        let zero = [0.0, 0.0];
        let log_ratio = mala_log_ratio(&zero, 0.0, &zero, &zero, 0.0, &zero, 0.7);
        assert_eq!(log_ratio, 0.0);
        // Any uniform in (0,1) has ln u < 0.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let _ = mala_step(&zero, &target, 0.7, &mut rng).unwrap();
    }

    #[test]
    fn rwm_log_ratio_examples() {
        assert_eq!(rwm_log_ratio(1.3, 1.3).exp().min(1.0), 1.0);
        let alpha = rwm_log_ratio(0.2, 0.2 + 2f64.ln()).exp();
        assert!((alpha - 0.5).abs() < 1e-15);
    }

    #[test]
    fn log_ratio_matches_direct_ratio() {
        let target = StandardGaussian::new(3).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let gamma = 0.05 + rng.random::<f64>();
            let (mut gx, mut gy) = (vec![0.0; 3], vec![0.0; 3]);
            let ux = target.potential_and_gradient(&x, &mut gx);
            let uy = target.potential_and_gradient(&y, &mut gy);
            let log_ratio = mala_log_ratio(&x, ux, &gx, &y, uy, &gy, gamma);
            let q = |a: &[f64], ga: &[f64], b: &[f64]| {
                let s: f64 = (0..3).map(|i| (b[i] - a[i] + gamma * ga[i]).powi(2)).sum();
                (-s / (4.0 * gamma)).exp()
            };
            let direct = ((-uy).exp() * q(&y, &gy, &x)) / ((-ux).exp() * q(&x, &gx, &y));
            assert!((log_ratio.exp() - direct).abs() <= 1e-12 * direct.max(1.0));
        }
    }

    #[test]
    fn returned_state_is_proposal_iff_accepted() {
        let target = StandardGaussian::new(2).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let mut x = vec![0.3, -0.4];
        for _ in 0..200 {
            let (y, acc) = rwm_step(&x, &target, 4.0, &mut rng).unwrap();
            assert_eq!(acc, y != x);
            x = y;
            let (y, acc) = mala_step(&x, &target, 2.0, &mut rng).unwrap();
            assert_eq!(acc, y != x);
            x = y;
        }
    }

    #[test]
    fn rng_consumption_is_independent_of_acceptance() {
        // d normals + one uniform per step, accepted or not.
        let target = StandardGaussian::new(2).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut shadow = rng.clone();
        for _ in 0..50 {
            let _ = rwm_step(&[0.0, 0.0], &target, 25.0, &mut rng).unwrap();
            let _: f64 = shadow.sample(StandardNormal);
            let _: f64 = shadow.sample(StandardNormal);
            let _: f64 = shadow.random();
        }
        assert_eq!(rng.random::<u64>(), shadow.random::<u64>());
    }

    #[test]
    fn single_step_chain_is_x0() {
        let target = StandardGaussian::new(2).unwrap();
        for kind in [SamplerKind::Ula, SamplerKind::Mala, SamplerKind::Rwm] {
            let (t, s) = sample_chain(&cfg(kind, 0.1, 1, 0), &target, &[1.0, 2.0]).unwrap();
            assert_eq!(t.as_flat(), &[1.0, 2.0]);
            assert_eq!(s.proposed, 0);
        }
    }

    #[test]
    fn chains_are_deterministic() {
        let target = StandardGaussian::new(2).unwrap();
        for kind in [SamplerKind::Ula, SamplerKind::Mala, SamplerKind::Rwm] {
            let a = sample_chain(&cfg(kind, 0.3, 1000, 4), &target, &[0.0, 0.0]).unwrap();
            let b = sample_chain(&cfg(kind, 0.3, 1000, 4), &target, &[0.0, 0.0]).unwrap();
            assert_eq!(a, b);
            let c = sample_chain(&cfg(kind, 0.3, 1000, 5), &target, &[0.0, 0.0]).unwrap();
            assert_ne!(a.0, c.0);
        }
    }

    #[test]
    fn pure_diffusion_on_flat_target() {
        let (t, _) = sample_chain(&cfg(SamplerKind::Ula, 0.5, 2, 0), &Flat(1), &[0.0]).unwrap();
        let mut rng = SeedKey::new(2024, 0).rng();
        let z: f64 = rng.sample(StandardNormal);
        assert_eq!(t.state(1)[0], z);
    }

    #[test]
    fn mala_acceptance_band_on_gaussian() {
        let target = StandardGaussian::new(1).unwrap();
        let (_, stats) = sample_chain(&cfg(SamplerKind::Mala, 1.0, 100_000, 2), &target, &[0.0]).unwrap();
        let rate = stats.rate();
        assert!(rate > 0.4 && rate < 0.9, "acceptance {rate}");
    }

    #[test]
    fn invalid_configs() {
        let target = StandardGaussian::new(2).unwrap();
        assert!(sample_chain(&cfg(SamplerKind::Ula, 0.0, 10, 0), &target, &[0.0, 0.0]).is_err());
        assert!(sample_chain(&cfg(SamplerKind::Ula, 0.1, 0, 0), &target, &[0.0, 0.0]).is_err());
        assert!(sample_chain(&cfg(SamplerKind::Ula, 0.1, 10, 0), &target, &[0.0]).is_err());
    }
}
