//! JSON run configuration.
//!
//! All frequencies enter as kHz over 2 pi and all times as milliseconds;
//! conversion to internal angular units happens here and nowhere else.

use serde::{Deserialize, Serialize};

use rabiqpt_core::dynamics::{default_ac_stark_alpha, DissipatorConfig, NoiseModel, QuenchSchedule};
use rabiqpt_core::hilbert::SpaceConfig;
use rabiqpt_core::model::{khz, IonParams, NonlinearConfig, DEFAULT_ETA};

use crate::Failure;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ion: Option<IonSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quench: Option<QuenchSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dissipator: Option<DissipatorSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonlinear: Option<NonlinearSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<SpaceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sideband: Option<SidebandSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_budget: Option<ErrorBudgetSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_state: Option<GroundStateSection>,
    #[serde(default)]
    pub seed: u64,
    /// Output file name, joined onto --out.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Failure::Config(format!("config: {}", e)))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Failure::Config(format!(
                "config: unsupported schema_version {} (expected {})",
                cfg.schema_version, SCHEMA_VERSION
            )));
        }
        Ok(cfg)
    }

    pub fn ion(&self) -> Result<IonParams, Failure> {
        let sec = self
            .ion
            .as_ref()
            .ok_or_else(|| Failure::Config("config: missing `ion` section".into()))?;
        Ok(sec.to_params())
    }

    pub fn schedule(&self) -> Result<QuenchSchedule, Failure> {
        let sec = self
            .quench
            .as_ref()
            .ok_or_else(|| Failure::Config("config: missing `quench` section".into()))?;
        Ok(sec.to_schedule())
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise.as_ref().map(NoiseSection::to_model).unwrap_or_default()
    }

    pub fn dissipator(&self) -> Option<DissipatorConfig> {
        self.dissipator.as_ref().map(DissipatorSection::to_config)
    }

    pub fn nonlinear(&self) -> NonlinearConfig {
        self.nonlinear
            .as_ref()
            .map(NonlinearSection::to_config)
            .unwrap_or_default()
    }

    pub fn space(&self) -> SpaceConfig {
        self.space.as_ref().map(SpaceSection::to_config).unwrap_or_default()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IonSection {
    pub delta_b_khz: f64,
    pub delta_r_khz: f64,
    #[serde(default)]
    pub omega_sb_khz: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
}

fn default_eta() -> f64 {
    DEFAULT_ETA
}

impl IonSection {
    pub fn to_params(&self) -> IonParams {
        IonParams {
            delta_b: khz(self.delta_b_khz),
            delta_r: khz(self.delta_r_khz),
            omega_sb: khz(self.omega_sb_khz),
            eta: self.eta,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuenchSection {
    pub omega_sb_max_khz: f64,
    pub tau_q_ms: f64,
    /// Number of uniformly spaced samples over [0, tau_q].
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    201
}

impl QuenchSection {
    pub fn to_schedule(&self) -> QuenchSchedule {
        QuenchSchedule::uniform(
            khz(self.omega_sb_max_khz),
            self.tau_q_ms * 1e-3,
            self.samples,
        )
    }
}

/// Stark shift given as its size at a reference drive, the natural
/// calibration language.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default = "default_stark_shift")]
    pub ac_stark_shift_khz: f64,
    #[serde(default = "default_stark_drive")]
    pub at_drive_khz: f64,
    #[serde(default = "default_true")]
    pub compensation_enabled: bool,
    #[serde(default)]
    pub trap_offset_khz: f64,
}

fn default_stark_shift() -> f64 {
    10.0
}

fn default_stark_drive() -> f64 {
    14.2
}

fn default_true() -> bool {
    true
}

impl NoiseSection {
    pub fn to_model(&self) -> NoiseModel {
        let alpha = if self.ac_stark_shift_khz == 0.0 {
            0.0
        } else if self.at_drive_khz > 0.0 {
            khz(self.ac_stark_shift_khz) / khz(self.at_drive_khz).powi(2)
        } else {
            default_ac_stark_alpha()
        };
        NoiseModel {
            ac_stark_alpha: alpha,
            compensation_enabled: self.compensation_enabled,
            trap_offset: khz(self.trap_offset_khz),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DissipatorSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_d_ms: Option<f64>,
    #[serde(default)]
    pub heating_quanta_per_s: f64,
    #[serde(default)]
    pub qubit_rate_per_s: f64,
}

impl DissipatorSection {
    pub fn to_config(&self) -> DissipatorConfig {
        DissipatorConfig {
            tau_d: self.tau_d_ms.map(|ms| ms * 1e-3),
            heating_rate: self.heating_quanta_per_s,
            qubit_rate: self.qubit_rate_per_s,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearSection {
    pub enabled: bool,
    #[serde(default = "default_l_max")]
    pub l_max: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
}

fn default_l_max() -> usize {
    1
}

impl NonlinearSection {
    pub fn to_config(&self) -> NonlinearConfig {
        NonlinearConfig {
            enabled: self.enabled,
            l_max: self.l_max,
            eta: self.eta,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSection {
    pub fock_cutoff: usize,
    #[serde(default = "default_tail")]
    pub tail_tolerance: f64,
}

fn default_tail() -> f64 {
    1e-6
}

impl SpaceSection {
    pub fn to_config(&self) -> SpaceConfig {
        SpaceConfig {
            fock_cutoff: self.fock_cutoff,
            tail_tolerance: self.tail_tolerance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SidebandMode {
    Synth,
    Fit,
    Select,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidebandSection {
    pub mode: SidebandMode,
    /// Truth occupations for synth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occupations: Option<Vec<f64>>,
    #[serde(default = "default_probe")]
    pub omega_probe_khz: f64,
    #[serde(default = "default_gamma0")]
    pub gamma0_per_s: f64,
    /// Fit gamma0 instead of holding it at gamma0_per_s.
    #[serde(default)]
    pub fit_gamma0: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times_ms: Option<TimeGrid>,
    /// 0 means a noise-free signal.
    #[serde(default)]
    pub shots: u64,
    #[serde(default)]
    pub dark_error: f64,
    #[serde(default)]
    pub bright_error: f64,
    /// Signal CSV consumed by fit/select.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_range: Option<[usize; 2]>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_probe() -> f64 {
    20.0
}

fn default_gamma0() -> f64 {
    500.0
}

fn default_threshold() -> f64 {
    0.95
}

/// Uniform grid over (0, stop_ms], endpoint included.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub stop_ms: f64,
    pub points: usize,
}

impl TimeGrid {
    pub fn seconds(&self) -> Vec<f64> {
        (1..=self.points)
            .map(|i| i as f64 * self.stop_ms * 1e-3 / self.points as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingWhich {
    Spin,
    Phonon,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSection {
    pub which: ScalingWhich,
    /// Frequency ratio for the spin branch.
    #[serde(default = "default_spin_ratio")]
    pub ratio: f64,
    /// Couplings for the spin branch; must avoid g = 1 itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_values: Option<Vec<f64>>,
    /// Scaled-coupling window the slope is fitted in.
    #[serde(default = "default_window")]
    pub window: [f64; 2],
    #[serde(default = "default_spin_cutoff")]
    pub fock_cutoff: usize,
    /// Ratios for the phonon branch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_grid: Option<Vec<f64>>,
}

fn default_spin_ratio() -> f64 {
    50.0
}

fn default_window() -> [f64; 2] {
    [0.005, 0.5]
}

fn default_spin_cutoff() -> usize {
    200
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBudgetSection {
    #[serde(default = "default_sigma_common")]
    pub sigma_common_khz: f64,
    #[serde(default = "default_eps_trap")]
    pub eps_trap_khz: f64,
    pub pairs: Vec<DetuningPair>,
}

fn default_sigma_common() -> f64 {
    0.4
}

fn default_eps_trap() -> f64 {
    0.15
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetuningPair {
    pub delta_b_khz: f64,
    pub delta_r_khz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundStateSection {
    pub ratio: f64,
    #[serde(default = "default_omega_f")]
    pub omega_f_khz: f64,
    pub g_values: Vec<f64>,
    /// Overrides the per-g recommended cutoff when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fock_cutoff: Option<usize>,
}

fn default_omega_f() -> f64 {
    2.0
}
