//! Shared setup for the benchmark targets.

use rabiqpt_core::dynamics::QuenchSchedule;
use rabiqpt_core::model::{khz, IonParams, DEFAULT_ETA};

/// The R = 25 working point.
pub fn bench_ion() -> IonParams {
    IonParams {
        delta_b: khz(52.0),
        delta_r: khz(48.0),
        omega_sb: 0.0,
        eta: DEFAULT_ETA,
    }
}

/// A shortened ramp: same drive slope as the 2 ms experiment, fewer samples.
pub fn bench_schedule(tau_q: f64) -> QuenchSchedule {
    QuenchSchedule::uniform(khz(14.2), tau_q, 11)
}
