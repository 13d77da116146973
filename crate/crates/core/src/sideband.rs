//! Blue-sideband Rabi signals and phonon-distribution reconstruction.
//!
//! The signal model is
//!
//!   P_up(t) = 1/2 [1 - sum_k p_k e^{-gamma_k t} cos(sqrt(k+1) Omega t)],
//!
//! with gamma_k = gamma0 (k+1)^0.7. Occupations are reconstructed by
//! weighted nonlinear least squares with the reparameterization p_k = q_k^2,
//! so the solution stays nonnegative and the covariance remains defined on
//! the boundary (mapped back through the chain rule).

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::dynamics::measurement_model;
use crate::{Error, Result};

/// Empirical decay-law exponent for gamma_k; held fixed, never fitted.
pub const DECAY_EXPONENT: f64 = 0.7;
/// Default total-occupation threshold for cutoff selection.
pub const DEFAULT_OCCUPATION_THRESHOLD: f64 = 0.95;

const GAMMA0_INIT: f64 = 500.0; // 0.5 / ms
const MAX_ITER: usize = 200;
const MAX_DAMP_TRIALS: usize = 30;
const VAR_FLOOR: f64 = 1e-4;

/// A measured (or synthesized) blue-sideband Rabi flopping record.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SidebandSignal {
    /// Probe durations in seconds.
    pub times: Vec<f64>,
    /// Spin-up probabilities, one per duration.
    pub p_up: Vec<f64>,
    /// Detections per point; 0 marks an ideal noise-free signal.
    pub shots_per_point: u64,
    /// Bare sideband Rabi frequency of the probe in rad/s.
    pub omega_sb_probe: f64,
}

impl SidebandSignal {
    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.p_up.len() {
            return Err(Error::InvalidParameter(format!(
                "times and p_up lengths differ: {} vs {}",
                self.times.len(),
                self.p_up.len()
            )));
        }
        if self.omega_sb_probe <= 0.0 || !self.omega_sb_probe.is_finite() {
            return Err(Error::InvalidParameter(
                "probe Rabi frequency must be positive".into(),
            ));
        }
        if self.times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidParameter(
                "probe times must be finite and >= 0".into(),
            ));
        }
        if self.p_up.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParameter(
                "p_up entries must be probabilities".into(),
            ));
        }
        Ok(())
    }
}

/// Optional shot-noise specification for synthesized signals.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseSpec {
    pub shots: u64,
    pub seed: u64,
    pub dark_error: f64,
    pub bright_error: f64,
}

/// Whether the base decay rate is fixed a priori or fitted jointly.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gamma0Mode {
    Fixed(f64),
    Fitted,
}

/// Reconstructed phonon occupations with their joint covariance.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhononFitResult {
    /// Occupations p_0 .. p_{k_max}.
    pub p: Vec<f64>,
    /// Covariance of the occupations (k_max+1 square, row major).
    pub covariance: Vec<Vec<f64>>,
    /// Standard deviations of the raw fit amplitudes q_k (p_k = q_k^2).
    /// Unlike the occupation sigmas these do not collapse when an
    /// amplitude sits near zero, so they expose unconstrained modes.
    pub amp_sigmas: Vec<f64>,
    pub k_max: usize,
    /// Base decay rate in 1/s (the fitted value, or the fixed input).
    pub gamma0: f64,
    /// Standard deviation of gamma0 when it was fitted.
    pub gamma0_sigma: Option<f64>,
    pub n_bar: f64,
    pub sigma_n_bar: f64,
    pub total_occupation: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl PhononFitResult {
    /// Standard deviations of the individual occupations.
    pub fn param_sigmas(&self) -> Vec<f64> {
        (0..self.p.len())
            .map(|i| self.covariance[i][i].max(0.0).sqrt())
            .collect()
    }
}

/// Cutoff selection outcome: the chosen k_max, its fit, and the
/// overfitting flag from probing three levels beyond it.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KmaxSelection {
    pub k_max: usize,
    pub result: PhononFitResult,
    pub overfit: bool,
}

fn model_p_up(p: &[f64], omega: f64, gamma0: f64, t: f64) -> f64 {
    let mut acc = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        let kk = (k + 1) as f64;
        let decay = (-gamma0 * kk.powf(DECAY_EXPONENT) * t).exp();
        acc += pk * decay * (kk.sqrt() * omega * t).cos();
    }
    0.5 * (1.0 - acc)
}

/// Evaluates the signal model, optionally corrupting each point with
/// detector errors and binomial shot noise (seeded per point).
pub fn synthesize_signal(
    p: &[f64],
    omega_sb_probe: f64,
    gamma0: f64,
    times: &[f64],
    noise: Option<&NoiseSpec>,
) -> Result<SidebandSignal> {
    if p.iter().any(|&pk| pk < 0.0) {
        return Err(Error::InvalidParameter(
            "occupations must be >= 0".into(),
        ));
    }
    let total: f64 = p.iter().sum();
    if total > 1.0 + 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "occupations sum to {} > 1",
            total
        )));
    }
    if omega_sb_probe <= 0.0 || gamma0 < 0.0 {
        return Err(Error::InvalidParameter(
            "need omega_sb_probe > 0 and gamma0 >= 0".into(),
        ));
    }
    let mut p_up = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        let clean = model_p_up(p, omega_sb_probe, gamma0, t);
        match noise {
            None => p_up.push(clean),
            Some(n) => p_up.push(measurement_model(
                clean,
                n.shots,
                n.dark_error,
                n.bright_error,
                n.seed.wrapping_add(i as u64),
            )?),
        }
    }
    let signal = SidebandSignal {
        times: times.to_vec(),
        p_up,
        shots_per_point: noise.map_or(0, |n| n.shots),
        omega_sb_probe,
    };
    signal.validate()?;
    Ok(signal)
}

struct Design<'a> {
    times: &'a [f64],
    weights: Vec<f64>,
    y: &'a [f64],
    omega: f64,
    n_levels: usize,
    fit_gamma: bool,
    gamma_fixed: f64,
}

impl Design<'_> {
    fn n_params(&self) -> usize {
        self.n_levels + usize::from(self.fit_gamma)
    }

    fn gamma(&self, theta: &DVector<f64>) -> f64 {
        if self.fit_gamma {
            theta[self.n_levels]
        } else {
            self.gamma_fixed
        }
    }

    /// Weighted residuals r_i = w_i (model_i - y_i).
    fn residuals(&self, theta: &DVector<f64>) -> DVector<f64> {
        let gamma = self.gamma(theta);
        let p: Vec<f64> = (0..self.n_levels).map(|k| theta[k] * theta[k]).collect();
        DVector::from_iterator(
            self.times.len(),
            self.times.iter().zip(self.y).zip(&self.weights).map(
                |((&t, &y), &w)| w * (model_p_up(&p, self.omega, gamma, t) - y),
            ),
        )
    }

    fn cost(&self, theta: &DVector<f64>) -> f64 {
        self.residuals(theta).norm_squared()
    }

    /// Weighted Jacobian of the residual vector in theta = (q, [gamma]).
    fn jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let gamma = self.gamma(theta);
        let n = self.times.len();
        let m = self.n_params();
        let mut jac = DMatrix::zeros(n, m);
        for (i, &t) in self.times.iter().enumerate() {
            let w = self.weights[i];
            let mut dgamma = 0.0;
            for k in 0..self.n_levels {
                let kk = (k + 1) as f64;
                let rate = kk.powf(DECAY_EXPONENT);
                let damped_cos = (-gamma * rate * t).exp() * (kk.sqrt() * self.omega * t).cos();
                jac[(i, k)] = -w * theta[k] * damped_cos;
                dgamma += theta[k] * theta[k] * rate * t * damped_cos;
            }
            if self.fit_gamma {
                jac[(i, self.n_levels)] = w * 0.5 * dgamma;
            }
        }
        jac
    }
}

fn solve_normal(jac: &DMatrix<f64>, residuals: &DVector<f64>, mu: f64) -> Option<DVector<f64>> {
    let mut normal = jac.transpose() * jac;
    for i in 0..normal.nrows() {
        normal[(i, i)] += mu;
    }
    Cholesky::new(normal).map(|ch| ch.solve(&(-(jac.transpose() * residuals))))
}

/// Weighted damped Gauss-Newton fit of the occupations (and optionally
/// gamma0) to a sideband record.
pub fn fit_phonon_distribution(
    signal: &SidebandSignal,
    k_max: usize,
    gamma0_mode: Gamma0Mode,
) -> Result<PhononFitResult> {
    signal.validate()?;
    let n_levels = k_max + 1;
    let n_points = signal.times.len();
    if n_points < 2 * (k_max + 2) {
        return Err(Error::InsufficientData(format!(
            "k_max = {} needs at least {} points, signal has {}",
            k_max,
            2 * (k_max + 2),
            n_points
        )));
    }
    if let Gamma0Mode::Fixed(g) = gamma0_mode {
        if g < 0.0 || !g.is_finite() {
            return Err(Error::InvalidParameter(
                "fixed gamma0 must be finite and >= 0".into(),
            ));
        }
    }

    // binomial per-point variance, floored so ideal signals get flat weights
    let shots = signal.shots_per_point as f64;
    let weights: Vec<f64> = signal
        .p_up
        .iter()
        .map(|&y| {
            let var = if shots > 0.0 { y * (1.0 - y) / shots } else { 0.0 };
            1.0 / var.max(VAR_FLOOR).sqrt()
        })
        .collect();

    let fit_gamma = matches!(gamma0_mode, Gamma0Mode::Fitted);
    let design = Design {
        times: &signal.times,
        weights,
        y: &signal.p_up,
        omega: signal.omega_sb_probe,
        n_levels,
        fit_gamma,
        gamma_fixed: match gamma0_mode {
            Gamma0Mode::Fixed(g) => g,
            Gamma0Mode::Fitted => f64::NAN,
        },
    };

    let m = design.n_params();
    let mut theta = DVector::from_element(m, (0.95 / n_levels as f64).sqrt());
    if fit_gamma {
        theta[n_levels] = GAMMA0_INIT;
    }

    let mut cost = design.cost(&theta);
    let mut mu = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    let mut last_rel_drop = f64::INFINITY;

    while iterations < MAX_ITER {
        iterations += 1;
        let residuals = design.residuals(&theta);
        let jac = design.jacobian(&theta);

        let mut accepted = false;
        for _ in 0..MAX_DAMP_TRIALS {
            let Some(step) = solve_normal(&jac, &residuals, mu) else {
                mu *= 10.0;
                continue;
            };
            let candidate = &theta + &step;
            if fit_gamma && candidate[n_levels] < 0.0 {
                mu *= 10.0;
                continue;
            }
            let new_cost = design.cost(&candidate);
            if new_cost <= cost {
                last_rel_drop = (cost - new_cost) / cost.max(1e-300);
                let done = step.norm() < 1e-12 * (1.0 + theta.norm());
                theta = candidate;
                cost = new_cost;
                mu = (mu / 3.0).max(1e-14);
                accepted = true;
                if done {
                    converged = true;
                }
                break;
            }
            mu *= 10.0;
        }
        if converged {
            break;
        }
        if !accepted {
            // damping exhausted: no descent direction left at this precision
            converged = true;
            break;
        }
    }
    if !converged && last_rel_drop > 1e-6 {
        return Err(Error::NoConvergence { iterations, cost });
    }

    // covariance at the solution: sigma_q = s^2 (J^T J)^-1, then p = q^2
    let jac = design.jacobian(&theta);
    let normal = jac.transpose() * &jac;
    let Some(chol) = Cholesky::new(normal) else {
        return Err(Error::RankDeficient);
    };
    let cov_q = chol.inverse();
    let dof = (n_points - m).max(1) as f64;
    let s2 = design.cost(&theta) / dof;

    let p: Vec<f64> = (0..n_levels).map(|k| theta[k] * theta[k]).collect();
    let mut covariance = vec![vec![0.0; n_levels]; n_levels];
    for i in 0..n_levels {
        for j in 0..n_levels {
            covariance[i][j] = s2 * 4.0 * theta[i] * theta[j] * cov_q[(i, j)];
        }
    }
    let amp_sigmas: Vec<f64> = (0..n_levels)
        .map(|i| (s2 * cov_q[(i, i)]).max(0.0).sqrt())
        .collect();
    let gamma0 = design.gamma(&theta);
    let gamma0_sigma = fit_gamma.then(|| (s2 * cov_q[(n_levels, n_levels)]).max(0.0).sqrt());

    let n_bar: f64 = p.iter().enumerate().map(|(k, &pk)| k as f64 * pk).sum();
    let mut var_n = 0.0;
    for i in 0..n_levels {
        for j in 0..n_levels {
            var_n += i as f64 * j as f64 * covariance[i][j];
        }
    }
    let total_occupation = p.iter().sum();

    Ok(PhononFitResult {
        p,
        covariance,
        amp_sigmas,
        k_max,
        gamma0,
        gamma0_sigma,
        n_bar,
        sigma_n_bar: var_n.max(0.0).sqrt(),
        total_occupation,
        iterations,
        converged,
    })
}

/// Smallest cutoff in the range whose fit captures at least `threshold`
/// total occupation; probes three levels beyond the winner for the
/// overfitting signature (n_bar shift beyond 3 sigma, or any amplitude
/// uncertainty blowing past 0.5).
pub fn select_kmax(
    signal: &SidebandSignal,
    k_range: std::ops::RangeInclusive<usize>,
    occupation_threshold: f64,
    gamma0_mode: Gamma0Mode,
) -> Result<KmaxSelection> {
    if k_range.is_empty() {
        return Err(Error::InvalidParameter("empty k_max range".into()));
    }
    if !(0.0..=1.0).contains(&occupation_threshold) {
        return Err(Error::InvalidParameter(
            "occupation threshold must be a probability".into(),
        ));
    }

    let mut best: Option<PhononFitResult> = None;
    let mut selected: Option<PhononFitResult> = None;
    for k in k_range {
        let result = match fit_phonon_distribution(signal, k, gamma0_mode) {
            Ok(r) => r,
            // ran out of points or conditioning at large k: stop scanning up
            Err(Error::InsufficientData(_)) | Err(Error::RankDeficient) => break,
            Err(e) => return Err(e),
        };
        let better = best
            .as_ref()
            .map_or(true, |b| result.total_occupation > b.total_occupation);
        if better {
            best = Some(result.clone());
        }
        if result.total_occupation >= occupation_threshold {
            selected = Some(result);
            break;
        }
    }

    let Some(result) = selected else {
        let best = best.ok_or_else(|| {
            Error::InsufficientData("no cutoff in range could be fitted".into())
        })?;
        return Err(Error::ThresholdUnreachable {
            threshold: occupation_threshold,
            best_k: best.k_max,
            best_total: best.total_occupation,
            best: Box::new(best),
        });
    };

    let overfit = match fit_phonon_distribution(signal, result.k_max + 3, gamma0_mode) {
        Ok(probe) => {
            // the 1e-9 floor keeps noise-free signals (sigma ~ 0) stable
            let shifted =
                (probe.n_bar - result.n_bar).abs() > 3.0 * result.sigma_n_bar + 1e-9;
            // read in amplitude space: occupation sigmas scale with the
            // amplitude itself and stay small for empty modes no matter
            // how unconstrained the fit is
            let blown = probe
                .amp_sigmas
                .iter()
                .fold(0.0_f64, |m, &s| m.max(s))
                > 0.5;
            shifted || blown
        }
        Err(_) => false,
    };

    Ok(KmaxSelection {
        k_max: result.k_max,
        result,
        overfit,
    })
}
