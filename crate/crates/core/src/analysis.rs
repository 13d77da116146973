//! Finite-ratio scaling transforms, scaling-exponent fits, the ratio error
//! budget, and the linear-vs-nonlinear model comparison.

use crate::dynamics::{evolve_schrodinger, NoiseModel, QuenchSchedule};
use crate::hilbert::{tail_population, SpaceConfig};
use crate::model::{build_qrm_hamiltonian, IonParams, NonlinearConfig, QrmParams};
use crate::spectra::{ground_state, recommended_cutoff};
use crate::{Error, Result};

/// One observation mapped onto the universal scaling axes.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScalingPoint {
    pub g: f64,
    pub p_up: f64,
    pub ratio: f64,
    /// G = R |g-1|^(3/2).
    pub g_scaled: f64,
    /// S_s = 2 p_up / |g-1|.
    pub s_s: f64,
}

/// Contributions to the uncertainty of the frequency ratio R.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ErrorBudget {
    /// From a common shift of both detunings (AC Stark residual).
    pub delta_r_common: f64,
    /// From an asymmetric trap-frequency offset.
    pub delta_r_trap: f64,
}

/// Maps (g, p_up, R) onto the scaling axes G and S_s.
pub fn scaling_transform(g: f64, p_up: f64, ratio: f64) -> Result<ScalingPoint> {
    let dev = (g - 1.0).abs();
    if dev <= 1e-9 {
        return Err(Error::InvalidParameter(
            "scaling variables are singular at g = 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&p_up) {
        return Err(Error::InvalidParameter(format!(
            "p_up must be a probability, got {}",
            p_up
        )));
    }
    Ok(ScalingPoint {
        g,
        p_up,
        ratio,
        g_scaled: ratio * dev.powf(1.5),
        s_s: 2.0 * p_up / dev,
    })
}

/// Least-squares slope of ln(y) against ln(x).
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InsufficientData(
            "log-log slope needs at least two matched points".into(),
        ));
    }
    if xs.iter().chain(ys.iter()).any(|&v| v <= 0.0) {
        return Err(Error::InvalidParameter(
            "log-log slope requires strictly positive data".into(),
        ));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 0.0 {
        return Err(Error::InsufficientData(
            "degenerate abscissa: all x values coincide".into(),
        ));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Slope of log S_s versus log G over the points inside the window.
pub fn spin_scaling_slope(points: &[ScalingPoint], window: (f64, f64)) -> Result<f64> {
    let (lo, hi) = window;
    let selected: Vec<&ScalingPoint> = points
        .iter()
        .filter(|p| p.g_scaled >= lo && p.g_scaled <= hi && p.s_s > 0.0)
        .collect();
    if selected.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "spin scaling fit needs at least 4 points in the window, found {}",
            selected.len()
        )));
    }
    let xs: Vec<f64> = selected.iter().map(|p| p.g_scaled).collect();
    let ys: Vec<f64> = selected.iter().map(|p| p.s_s).collect();
    log_log_slope(&xs, &ys)
}

/// Exact ground-state n_bar at g = 1 across the ratio grid, returned as the
/// log-log slope of n_bar versus R.
pub fn phonon_ratio_slope(r_grid: &[f64], space: &SpaceConfig) -> Result<f64> {
    space.validate()?;
    if r_grid.len() < 6 {
        return Err(Error::InsufficientData(
            "ratio grid needs at least 6 points".into(),
        ));
    }
    let min = r_grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = r_grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min > 5.0 || max < 1000.0 {
        return Err(Error::InsufficientData(
            "ratio grid must span at least [5, 1000]".into(),
        ));
    }
    for (i, a) in r_grid.iter().enumerate() {
        if r_grid[i + 1..].iter().any(|b| a == b) {
            return Err(Error::InsufficientData(
                "degenerate abscissa: duplicate ratio values".into(),
            ));
        }
    }

    let mut n_bars = Vec::with_capacity(r_grid.len());
    for &ratio in r_grid {
        n_bars.push(ground_state_n_bar_at_critical(ratio, space)?);
    }
    log_log_slope(r_grid, &n_bars)
}

/// Exact ground-state occupation at g = 1 for one frequency ratio, with
/// the cutoff grown until the tail bound holds.
pub fn ground_state_n_bar_at_critical(ratio: f64, space: &SpaceConfig) -> Result<f64> {
    let qrm = QrmParams {
        omega_a: ratio,
        omega_f: 1.0,
        lambda: 0.5 * ratio.sqrt(),
    };
    let mut current = SpaceConfig {
        fock_cutoff: space.fock_cutoff.max(recommended_cutoff(ratio, 1.0)),
        tail_tolerance: space.tail_tolerance,
    };
    let mut last_tail = 1.0;
    for _ in 0..=3 {
        let h = build_qrm_hamiltonian(&qrm, &current)?;
        let gs = ground_state(&h, &current)?;
        let top = 3.min(current.fock_cutoff - 1).max(1);
        let tail = tail_population(&gs.state, top)?;
        if tail < current.tail_tolerance {
            return Ok(gs.n_bar);
        }
        last_tail = tail;
        current = current.grown();
    }
    Err(Error::CutoffExhausted {
        cutoff: current.fock_cutoff,
        tail: last_tail,
        tolerance: space.tail_tolerance,
        retries: 3,
    })
}

/// Uncertainty of R from a common detuning shift sigma_common and from an
/// asymmetric trap offset eps_trap (one-sided widening of the splitting).
pub fn ratio_error_budget(
    ion: &IonParams,
    sigma_common: f64,
    eps_trap: f64,
) -> Result<ErrorBudget> {
    ion.validate()?;
    if sigma_common < 0.0 || eps_trap < 0.0 {
        return Err(Error::InvalidParameter(
            "perturbation magnitudes must be >= 0".into(),
        ));
    }
    let split = ion.delta_b - ion.delta_r;
    if sigma_common >= 0.5 * split || eps_trap >= 0.5 * split {
        return Err(Error::InvalidParameter(
            "perturbation must stay below half the detuning splitting".into(),
        ));
    }
    let sum = ion.delta_b + ion.delta_r;
    let ratio = sum / split;
    Ok(ErrorBudget {
        // a common shift moves delta_b + delta_r, leaves the splitting
        delta_r_common: 2.0 * sigma_common / split,
        delta_r_trap: ratio - sum / (split + 2.0 * eps_trap),
    })
}

/// First-order (symmetric-linearization) trap contribution 2 R eps / split,
/// for cross-checking the exact recomputation above.
pub fn ratio_error_trap_linearized(ion: &IonParams, eps_trap: f64) -> f64 {
    let split = ion.delta_b - ion.delta_r;
    let ratio = (ion.delta_b + ion.delta_r) / split;
    2.0 * ratio * eps_trap / split
}

/// Deviation of the nonlinear Lamb-Dicke quench from the linear one.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LmNlmComparison {
    /// Max of |n_LM - n_NLM| / n_LM over samples with n_LM > 1.
    pub max_rel_dev: f64,
    /// The same deviation at the sample closest to g = 1.
    pub crit_rel_dev: f64,
}

/// Runs the quench under the linear and the nonlinear coupling and compares
/// phonon numbers. The nonlinear drive is calibrated on the n = 0 sideband
/// (its amplitude rescaled by e^{eta^2/2}), matching how the sideband Rabi
/// frequency is measured.
pub fn compare_lm_nlm(
    ion: &IonParams,
    schedule: &QuenchSchedule,
    nl: &NonlinearConfig,
    space: &SpaceConfig,
) -> Result<LmNlmComparison> {
    if !nl.enabled {
        return Err(Error::InvalidParameter(
            "comparison requires an enabled nonlinear config".into(),
        ));
    }
    schedule.validate()?;

    // make sure the critical crossing itself is sampled
    let omega_c = 0.5 * (ion.delta_b * ion.delta_b - ion.delta_r * ion.delta_r).sqrt();
    let mut times = schedule.sample_times.clone();
    if schedule.omega_sb_max > omega_c {
        let t_c = schedule.tau_q * omega_c / schedule.omega_sb_max;
        if !times.iter().any(|&t| (t - t_c).abs() < 1e-15) {
            times.push(t_c);
            times.sort_by(f64::total_cmp);
        }
    }
    let lm_schedule = QuenchSchedule {
        omega_sb_max: schedule.omega_sb_max,
        tau_q: schedule.tau_q,
        sample_times: times.clone(),
    };
    let calibration = (0.5 * nl.eta * nl.eta).exp();
    let nlm_schedule = QuenchSchedule {
        omega_sb_max: schedule.omega_sb_max * calibration,
        tau_q: schedule.tau_q,
        sample_times: times,
    };

    let noise = NoiseModel::default();
    let nl_off = NonlinearConfig {
        enabled: false,
        ..*nl
    };
    let lm = evolve_schrodinger(ion, &lm_schedule, &noise, &nl_off, space, None)?;
    let nlm = evolve_schrodinger(ion, &nlm_schedule, &noise, nl, space, None)?;

    let mut max_rel_dev = 0.0_f64;
    let mut crit_rel_dev = 0.0_f64;
    let mut best_gap = f64::INFINITY;
    for (a, b) in lm.iter().zip(nlm.iter()) {
        let dev = (a.n_bar - b.n_bar).abs() / a.n_bar.max(1e-300);
        if a.n_bar > 1.0 {
            max_rel_dev = max_rel_dev.max(dev);
        }
        let gap = (a.g - 1.0).abs();
        if gap < best_gap {
            best_gap = gap;
            crit_rel_dev = dev;
        }
    }
    Ok(LmNlmComparison {
        max_rel_dev,
        crit_rel_dev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{khz, DEFAULT_ETA};
    use approx::assert_abs_diff_eq;

    #[test]
    fn scaling_transform_examples() {
        let p = scaling_transform(0.994, 0.0453, 25.0).unwrap();
        assert_abs_diff_eq!(p.g_scaled, 0.0116189, epsilon = 1e-6);
        assert_abs_diff_eq!(p.s_s, 15.1, epsilon = 1e-10);

        let zero = scaling_transform(0.9, 0.0, 25.0).unwrap();
        assert_eq!(zero.s_s, 0.0);

        let unit = scaling_transform(2.0, 0.3, 1.0).unwrap();
        assert_abs_diff_eq!(unit.g_scaled, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(unit.s_s, 0.6, epsilon = 1e-12);

        assert!(scaling_transform(1.0, 0.1, 25.0).is_err());
        assert!(scaling_transform(0.9, 1.5, 25.0).is_err());
    }

    #[test]
    fn spin_slope_recovers_exact_power_law() {
        let points: Vec<ScalingPoint> = (1..=12)
            .map(|k| {
                let g_scaled = 0.01 * 1.5_f64.powi(k);
                ScalingPoint {
                    g: 0.99,
                    p_up: 0.0,
                    ratio: 25.0,
                    g_scaled,
                    s_s: 3.7 * g_scaled.powf(-2.0 / 3.0),
                }
            })
            .collect();
        let slope = spin_scaling_slope(&points, (0.0, f64::INFINITY)).unwrap();
        assert_abs_diff_eq!(slope, -2.0 / 3.0, epsilon = 1e-9);

        let flat: Vec<ScalingPoint> = points
            .iter()
            .map(|p| ScalingPoint { s_s: 2.0, ..*p })
            .collect();
        let slope = spin_scaling_slope(&flat, (0.0, f64::INFINITY)).unwrap();
        assert_abs_diff_eq!(slope, 0.0, epsilon = 1e-12);

        assert!(spin_scaling_slope(&points[..3], (0.0, f64::INFINITY)).is_err());
        // window that excludes everything
        assert!(spin_scaling_slope(&points, (1e6, 2e6)).is_err());
    }

    #[test]
    fn phonon_slope_against_frozen_eigensolver_values() {
        let space = SpaceConfig {
            fock_cutoff: 100,
            tail_tolerance: 1e-6,
        };
        let grid = [5.0, 15.0, 25.0, 100.0, 300.0, 1000.0];
        // frozen per-ratio ground-state occupations at g = 1
        let frozen = [0.148548, 0.250309, 0.326900, 0.660686, 1.097789, 1.828271];
        for (&ratio, &expect) in grid.iter().zip(frozen.iter()) {
            let n = ground_state_n_bar_at_critical(ratio, &space).unwrap();
            assert_abs_diff_eq!(n, expect, epsilon = 1e-4);
        }
        let slope = phonon_ratio_slope(&grid, &space).unwrap();
        assert_abs_diff_eq!(slope, 0.4791, epsilon = 1e-3);
        assert!((slope - 0.48).abs() < 0.05);

        let dup = [5.0, 5.0, 25.0, 100.0, 300.0, 1000.0];
        assert!(phonon_ratio_slope(&dup, &space).is_err());
        let short_span = [5.0, 15.0, 25.0, 100.0, 300.0, 900.0];
        assert!(phonon_ratio_slope(&short_span, &space).is_err());
    }

    #[test]
    fn synthetic_cube_root_asymptotics() {
        // in the true R -> infinity limit the exponent is 1/3
        let rs: Vec<f64> = (0..8).map(|k| 1e4 * 2.0_f64.powi(k)).collect();
        let ns: Vec<f64> = rs.iter().map(|r| 0.8 * r.powf(1.0 / 3.0)).collect();
        let slope = log_log_slope(&rs, &ns).unwrap();
        assert_abs_diff_eq!(slope, 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn ratio_error_budget_published_numbers() {
        let sigma = khz(0.4);
        let eps = khz(0.15);
        // quoted settings, as-published rounded detunings
        let cases = [
            (52.0, 48.0, 0.20, 1.7442),
            (41.3, 36.1, 0.1538, 0.8119),
            (26.8, 17.9, 0.0899, 0.1638),
        ];
        for (db, dr, common, trap) in cases {
            let ion = IonParams {
                delta_b: khz(db),
                delta_r: khz(dr),
                omega_sb: khz(10.0),
                eta: DEFAULT_ETA,
            };
            let budget = ratio_error_budget(&ion, sigma, eps).unwrap();
            assert_abs_diff_eq!(budget.delta_r_common, common, epsilon = 5e-4);
            assert_abs_diff_eq!(budget.delta_r_trap, trap, epsilon = 5e-4);
            // linearization agrees with the exact recomputation to ~10%
            let lin = ratio_error_trap_linearized(&ion, eps);
            assert!((lin - budget.delta_r_trap).abs() / budget.delta_r_trap < 0.12);
        }

        let ion = IonParams {
            delta_b: khz(52.0),
            delta_r: khz(48.0),
            omega_sb: khz(10.0),
            eta: DEFAULT_ETA,
        };
        assert!(ratio_error_budget(&ion, khz(3.0), 0.0).is_err());
    }

    #[test]
    fn lm_nlm_comparison_vanishes_without_nonlinearity() {
        let ion = IonParams {
            delta_b: khz(52.0),
            delta_r: khz(48.0),
            omega_sb: 0.0,
            eta: DEFAULT_ETA,
        };
        let schedule = QuenchSchedule::uniform(khz(8.0), 0.2e-3, 5);
        let space = SpaceConfig::new(12);
        let nl = NonlinearConfig {
            enabled: true,
            l_max: 1,
            eta: 0.0,
        };
        let cmp = compare_lm_nlm(&ion, &schedule, &nl, &space).unwrap();
        assert!(cmp.max_rel_dev < 1e-12);
        assert!(cmp.crit_rel_dev < 1e-12);

        let disabled = NonlinearConfig {
            enabled: false,
            ..nl
        };
        assert!(compare_lm_nlm(&ion, &schedule, &disabled, &space).is_err());
    }
}
