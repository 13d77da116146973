//! Simulation and analysis toolkit for the quantum Rabi model as realized
//! with a single trapped ion driven on its red and blue motional sidebands.
//!
//! The Rabi Hamiltonian (hbar = 1)
//!
//! ```text
//! H = (omega_a / 2) sz + omega_f adag a + lambda (sp + sm)(a + adag)
//! ```
//!
//! undergoes a superradiant phase transition in the limit
//! R = omega_a / omega_f -> infinity at the critical coupling
//! g = 2 lambda / sqrt(omega_a omega_f) = 1. At finite R the transition is
//! smoothed; this crate simulates slow quenches of g across the critical
//! point, the sideband spectroscopy used to read out the phonon
//! distribution, and the finite-frequency scaling analysis of both spin and
//! phonon observables.
//!
//! Conventions used throughout:
//!
//! * angular frequencies in rad/s, times in seconds;
//! * the joint Hilbert space is ordered spin-major: index = s * (n_cut + 1) + n
//!   with s = 0 the lower spin state;
//! * `g` always denotes the dimensionless control parameter, never a decay rate.

pub mod analysis;
pub mod dynamics;
pub mod hilbert;
pub mod model;
pub mod sideband;
pub mod spectra;

pub use analysis::{ErrorBudget, ScalingPoint};
pub use dynamics::{
    DissipatorConfig, NoiseModel, QuenchSchedule, TrajectorySample,
};
pub use hilbert::SpaceConfig;
pub use model::{IonParams, NonlinearConfig, QrmParams};
pub use sideband::{PhononFitResult, SidebandSignal};
pub use spectra::GroundStateResult;

/// Errors shared by the simulation and analysis layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("Fock cutoff {cutoff} insufficient: tail population {tail:.3e} exceeds {tolerance:.3e} after {retries} retries")]
    CutoffExhausted {
        cutoff: usize,
        tail: f64,
        tolerance: f64,
        retries: usize,
    },
    #[error("numerical failure: {0}")]
    Numerics(String),
    #[error("fit did not converge after {iterations} iterations (cost {cost:.3e})")]
    NoConvergence { iterations: usize, cost: f64 },
    #[error("normal equations are rank deficient; reduce k_max or supply more time points")]
    RankDeficient,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("population threshold {threshold} unreachable; best candidate k_max = {best_k} captures {best_total:.4}")]
    ThresholdUnreachable {
        threshold: f64,
        best_k: usize,
        best_total: f64,
        best: Box<PhononFitResult>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
