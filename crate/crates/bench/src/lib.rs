//! Shared fixtures for the benchmarks in `benches/`.

use std::f64::consts::FRAC_PI_4;

use cspez_core::surrogate::{FeatureFrame, MlpModel, ParameterRanges, N_FEATURES};
use cspez_core::{EvaderState, PursuerBelief, RngStream, Vec2};

/// Belief used throughout the planning scenario.
pub fn reference_belief() -> PursuerBelief {
    PursuerBelief::new([0.0, 0.0, FRAC_PI_4, 0.2, 1.0, 2.0], [[0.025, 0.04], [0.04, 0.1]], 0.2, 0.005, 0.1, 0.3)
        .expect("valid belief")
}

/// `n` evader states spread over `[-4, 4]²` with random headings.
pub fn evaders(n: usize, seed: u64) -> Vec<EvaderState> {
    let mut rng = RngStream::new(seed);
    (0..n)
        .map(|_| {
            let p = Vec2::new(8.0 * rng.uniform() - 4.0, 8.0 * rng.uniform() - 4.0);
            EvaderState::new(p, std::f64::consts::TAU * rng.uniform(), 1.0).expect("valid evader")
        })
        .collect()
}

/// Untrained network with unit standardization; forward cost does not depend
/// on the weights.
pub fn network() -> MlpModel {
    MlpModel::init(1, FeatureFrame::default(), [0.0; N_FEATURES], [1.0; N_FEATURES], ParameterRanges::default())
}
