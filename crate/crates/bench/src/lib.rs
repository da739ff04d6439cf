//! Shared fixtures for the benchmarks in `benches/`.

use std::sync::Arc;

use gridarena::scenario::{calibrate_thermal_limits, generate, GenerationConfig};
use gridarena::{GridCase, Scenario};

/// The 14-bus case calibrated on one generated scenario of `horizon` steps.
pub fn calibrated_case(horizon: usize) -> (Arc<GridCase>, Arc<Scenario>) {
    let base = GridCase::ieee14();
    let scenario = generate(&base, &GenerationConfig::default(), horizon, 1).expect("generation");
    let case = calibrate_thermal_limits(&base, std::slice::from_ref(&scenario), &[5, 10, 13], 0.03)
        .expect("calibration");
    (Arc::new(case), Arc::new(scenario))
}
