//! Model parameterizations and Hamiltonian builders.
//!
//! Two equivalent parameter sets are supported: the abstract Rabi form
//! (omega_a, omega_f, lambda) and the trapped-ion form (delta_b, delta_r,
//! omega_sb) where delta_b/delta_r are the blue/red sideband detunings and
//! omega_sb = eta * Omega is the sideband Rabi frequency. They map onto each
//! other via
//!
//! ```text
//! omega_a = (delta_b + delta_r) / 2
//! omega_f = (delta_b - delta_r) / 2
//! lambda  = omega_sb / 2
//! ```
//!
//! All angular frequencies are rad/s. Configs quote kHz-over-2pi values as
//! is customary; convert at the boundary with [`khz`].

use nalgebra::DMatrix;

use crate::hilbert::{Operator, SpaceConfig};
use crate::{Error, Result};

/// Converts a linear frequency in kHz to angular rad/s.
pub fn khz(f: f64) -> f64 {
    f * 1e3 * std::f64::consts::TAU
}

/// Converts angular rad/s back to linear kHz.
pub fn to_khz(w: f64) -> f64 {
    w / (1e3 * std::f64::consts::TAU)
}

/// Abstract Rabi-model parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QrmParams {
    pub omega_a: f64,
    pub omega_f: f64,
    pub lambda: f64,
}

impl QrmParams {
    pub fn validate(&self) -> Result<()> {
        if self.omega_a <= 0.0 || self.omega_f <= 0.0 {
            return Err(Error::InvalidParameter(
                "omega_a and omega_f must be positive".into(),
            ));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidParameter("lambda must be >= 0".into()));
        }
        Ok(())
    }

    /// Dimensionless control parameter g = 2 lambda / sqrt(omega_a omega_f).
    pub fn g(&self) -> f64 {
        2.0 * self.lambda / (self.omega_a * self.omega_f).sqrt()
    }

    /// Frequency ratio R = omega_a / omega_f; the transition sharpens as
    /// R -> infinity.
    pub fn ratio(&self) -> f64 {
        self.omega_a / self.omega_f
    }
}

/// Trapped-ion drive parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IonParams {
    pub delta_b: f64,
    pub delta_r: f64,
    pub omega_sb: f64,
    /// Lamb-Dicke parameter; only the nonlinear variant depends on it.
    pub eta: f64,
}

pub const DEFAULT_ETA: f64 = 0.07;

impl IonParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_b > self.delta_r && self.delta_r > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "detunings must satisfy delta_b > delta_r > 0, got ({}, {})",
                self.delta_b, self.delta_r
            )));
        }
        if self.omega_sb < 0.0 {
            return Err(Error::InvalidParameter("omega_sb must be >= 0".into()));
        }
        if !(self.eta > 0.0 && self.eta < 0.5) {
            return Err(Error::InvalidParameter(format!(
                "eta must lie in (0, 0.5), got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

/// Nonlinear Lamb-Dicke correction to the sideband coupling.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NonlinearConfig {
    pub enabled: bool,
    /// Expansion order of the f-hat series.
    pub l_max: usize,
    pub eta: f64,
}

impl Default for NonlinearConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            l_max: 1,
            eta: DEFAULT_ETA,
        }
    }
}

/// Maps ion drive parameters to the Rabi form.
pub fn ion_to_qrm(ion: &IonParams) -> Result<QrmParams> {
    ion.validate()?;
    Ok(QrmParams {
        omega_a: 0.5 * (ion.delta_b + ion.delta_r),
        omega_f: 0.5 * (ion.delta_b - ion.delta_r),
        lambda: 0.5 * ion.omega_sb,
    })
}

/// Inverse of [`ion_to_qrm`]; requires R > 1 so that delta_r > 0.
pub fn qrm_to_ion(qrm: &QrmParams, eta: f64) -> Result<IonParams> {
    qrm.validate()?;
    if qrm.omega_a <= qrm.omega_f {
        return Err(Error::InvalidParameter(
            "ion mapping requires omega_a > omega_f (R > 1)".into(),
        ));
    }
    let ion = IonParams {
        delta_b: qrm.omega_a + qrm.omega_f,
        delta_r: qrm.omega_a - qrm.omega_f,
        omega_sb: 2.0 * qrm.lambda,
        eta,
    };
    ion.validate()?;
    Ok(ion)
}

/// Detunings that realize frequency ratio R with critical sideband Rabi
/// frequency omega_sb_crit: delta_b,r = Omega_c (sqrt(R) +- 1/sqrt(R)).
pub fn detunings_from_ratio(ratio: f64, omega_sb_crit: f64) -> Result<(f64, f64)> {
    if ratio <= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "ratio must exceed 1, got {}",
            ratio
        )));
    }
    if omega_sb_crit <= 0.0 {
        return Err(Error::InvalidParameter(
            "omega_sb_crit must be positive".into(),
        ));
    }
    let rt = ratio.sqrt();
    Ok((omega_sb_crit * (rt + 1.0 / rt), omega_sb_crit * (rt - 1.0 / rt)))
}

/// g = 2 omega_sb / sqrt(delta_b^2 - delta_r^2).
pub fn control_parameter(ion: &IonParams) -> Result<f64> {
    ion.validate()?;
    Ok(2.0 * ion.omega_sb / (ion.delta_b * ion.delta_b - ion.delta_r * ion.delta_r).sqrt())
}

fn fill_common(h: &mut DMatrix<f64>, qrm: &QrmParams, space: &SpaceConfig) {
    let nf = space.fock_dim();
    for n in 0..nf {
        h[(n, n)] = -0.5 * qrm.omega_a + qrm.omega_f * n as f64;
        h[(nf + n, nf + n)] = 0.5 * qrm.omega_a + qrm.omega_f * n as f64;
    }
}

fn fill_coupling(h: &mut DMatrix<f64>, lambda: f64, space: &SpaceConfig, f_diag: &[f64]) {
    // (sp+sm)(f a + a_dag f): band between |s,n> and |1-s,n+1> with
    // amplitude lambda sqrt(n+1) f(n)
    for n in 0..space.fock_cutoff {
        let c = lambda * ((n + 1) as f64).sqrt() * f_diag[n];
        for s in 0..2 {
            let i = space.index(s, n);
            let j = space.index(1 - s, n + 1);
            h[(i, j)] += c;
            h[(j, i)] += c;
        }
    }
}

/// H = (omega_a/2) sz + omega_f a_dag a + lambda (sp+sm)(a+a_dag).
pub fn build_qrm_hamiltonian(qrm: &QrmParams, space: &SpaceConfig) -> Result<Operator> {
    qrm.validate()?;
    space.validate()?;
    let mut h = DMatrix::zeros(space.dim(), space.dim());
    fill_common(&mut h, qrm, space);
    let ones = vec![1.0; space.fock_dim()];
    fill_coupling(&mut h, qrm.lambda, space, &ones);
    Ok(h)
}

/// Diagonal of f-hat = e^{-eta^2/2} sum_{l<=l_max} (-eta^2)^l / (l!(l+1)!)
/// a_dag^l a^l in the Fock basis.
pub fn nonlinear_f_diagonal(nl: &NonlinearConfig, space: &SpaceConfig) -> Vec<f64> {
    let eta2 = nl.eta * nl.eta;
    let prefactor = (-0.5 * eta2).exp();
    (0..space.fock_dim())
        .map(|n| {
            let mut sum = 0.0;
            let mut term = 1.0; // (-eta^2)^l / (l!(l+1)!) * n!/(n-l)!
            for l in 0..=nl.l_max.min(n) {
                if l > 0 {
                    term *= -eta2 * (n - l + 1) as f64 / (l * (l + 1)) as f64;
                }
                sum += term;
            }
            prefactor * sum
        })
        .collect()
}

/// Rabi Hamiltonian with the coupling replaced by
/// lambda (sp+sm)(f-hat a + a_dag f-hat).
pub fn build_nonlinear_hamiltonian(
    qrm: &QrmParams,
    nl: &NonlinearConfig,
    space: &SpaceConfig,
) -> Result<Operator> {
    if !nl.enabled {
        return Err(Error::InvalidParameter(
            "nonlinear config is disabled; use build_qrm_hamiltonian".into(),
        ));
    }
    qrm.validate()?;
    space.validate()?;
    let mut h = DMatrix::zeros(space.dim(), space.dim());
    fill_common(&mut h, qrm, space);
    let f_diag = nonlinear_f_diagonal(nl, space);
    fill_coupling(&mut h, qrm.lambda, space, &f_diag);
    Ok(h)
}

/// Leading-order ground energy of the effective phase Hamiltonians in the
/// R -> infinity limit: H_np for g < 1, H_sp for g > 1. Useful only as an
/// asymptotic reference.
pub fn effective_ground_energy(qrm: &QrmParams) -> Result<f64> {
    qrm.validate()?;
    let g = qrm.g();
    if (g - 1.0).abs() < 1e-6 {
        return Err(Error::InvalidParameter(
            "effective phase energies are degenerate at g = 1".into(),
        ));
    }
    let e = if g < 1.0 {
        -0.5 * qrm.omega_a + 0.5 * qrm.omega_f * ((1.0 - g * g).sqrt() - 1.0)
    } else {
        let g2 = g * g;
        -0.25 * qrm.omega_a * (g2 + 1.0 / g2)
            + 0.5 * qrm.omega_f * ((1.0 - 1.0 / (g2 * g2)).sqrt() - 1.0)
    };
    Ok(e)
}
