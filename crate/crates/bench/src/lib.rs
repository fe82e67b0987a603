//! Fixtures shared by the benchmarks.

use esvm::models::{ar1_reference, gmm_target, Gmm};
use esvm::stein::gradients_along;
use esvm::{sample_chain, DesignSet, LagWindow, SamplerConfig, SamplerKind, SeedKey, SteinFamily, Trajectory};

/// AR(1) series of length `n` with coefficient 0.9.
pub fn ar1_series(n: usize) -> Vec<f64> {
    ar1_reference(0.9, n, 1).expect("valid AR(1)").0.as_flat().to_vec()
}

pub fn gmm() -> Gmm {
    gmm_target(0.5, vec![0.5, 0.5], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).expect("valid mixture")
}

pub fn gmm_chain(kind: SamplerKind, n: usize) -> Trajectory {
    let config = SamplerConfig {
        kind,
        gamma: 0.1,
        n_steps: n,
        seed: SeedKey::new(3, 0),
    };
    sample_chain(&config, &gmm(), &[0.0, 0.0]).expect("chain").0
}

/// Second-order design for `E[X_1]` on a ULA chain.
pub fn gmm_design(n: usize, bn: usize) -> DesignSet {
    let traj = gmm_chain(SamplerKind::Ula, n);
    let grads = gradients_along(&gmm(), &traj).expect("gradients");
    let f: Vec<f64> = traj.states().map(|x| x[0]).collect();
    DesignSet::assemble(
        &SteinFamily::SecondOrder { d: 2 },
        &f,
        &traj,
        &grads,
        LagWindow::trapezoid(bn).expect("window"),
    )
    .expect("design")
}
