//! Time evolution through the coupling quench.
//!
//! The sideband Rabi frequency ramps linearly, omega_sb(t) = omega_sb_max
//! t / tau_q, which sweeps the control parameter g across the transition.
//! Closed-system dynamics integrate the Schrodinger equation with a fixed
//! step classical RK4; open-system dynamics integrate the Lindblad master
//! equation with dephasing handled by an exact elementwise integrating
//! factor (Lawson form of RK4), which keeps the stiff high-Fock dephasing
//! rates unconditionally stable at the step size dictated by the coherent
//! part.
//!
//! Within each step the Hamiltonian is frozen at the midpoint coupling, so
//! both integrators approximate a piecewise-constant propagator; tests
//! compare them against exact matrix exponentials of the same sequence.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::hilbert::{tail_population, QuantumState, SpaceConfig, StateRepr};
use crate::model::{IonParams, NonlinearConfig, nonlinear_f_diagonal};
use crate::{Error, Result};

/// Steps per period of the fastest nominal frequency. RK4's amplitude
/// error scales as theta^6 per step; 80 keeps the norm drift of a 2 ms
/// quench below 1e-6 with margin.
const STEPS_PER_CYCLE: f64 = 80.0;
const MAX_CUTOFF_RETRIES: usize = 3;
/// Fock levels counted by the post-evolution truncation check.
const TAIL_LEVELS: usize = 3;

/// Linear ramp of the sideband Rabi frequency.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QuenchSchedule {
    pub omega_sb_max: f64,
    pub tau_q: f64,
    /// Times (seconds) at which observables are recorded; strictly
    /// increasing, within [0, tau_q].
    pub sample_times: Vec<f64>,
}

impl QuenchSchedule {
    /// Uniform grid of n samples over [0, tau_q].
    pub fn uniform(omega_sb_max: f64, tau_q: f64, n: usize) -> Self {
        let n = n.max(2);
        let sample_times = (0..n)
            .map(|k| tau_q * k as f64 / (n - 1) as f64)
            .collect();
        Self {
            omega_sb_max,
            tau_q,
            sample_times,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_q > 0.0) {
            return Err(Error::InvalidParameter("tau_q must be positive".into()));
        }
        if self.omega_sb_max < 0.0 {
            return Err(Error::InvalidParameter(
                "omega_sb_max must be >= 0".into(),
            ));
        }
        if self.sample_times.is_empty() {
            return Err(Error::InvalidParameter(
                "sample_times must not be empty".into(),
            ));
        }
        let mut prev = -f64::EPSILON;
        for &t in &self.sample_times {
            if t <= prev {
                return Err(Error::InvalidParameter(
                    "sample_times must be strictly increasing".into(),
                ));
            }
            if t < 0.0 || t > self.tau_q * (1.0 + 1e-12) {
                return Err(Error::InvalidParameter(format!(
                    "sample time {} outside [0, tau_q]",
                    t
                )));
            }
            prev = t;
        }
        Ok(())
    }

    pub fn omega_sb_at(&self, t: f64) -> f64 {
        self.omega_sb_max * (t / self.tau_q).clamp(0.0, 1.0)
    }
}

/// Systematic drive imperfections.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseModel {
    /// Coefficient alpha in the AC Stark shift Delta_ac = alpha omega_sb^2,
    /// pulling both detunings when compensation is off.
    pub ac_stark_alpha: f64,
    /// Dynamical frequency correction tracking the Stark shift.
    pub compensation_enabled: bool,
    /// Static trap-frequency offset epsilon: delta_b -> delta_b + epsilon,
    /// delta_r -> delta_r - epsilon.
    pub trap_offset: f64,
}

/// Calibrated so the shift reaches 2pi x 10 kHz at the full ramp amplitude
/// 2pi x 14.2 kHz.
pub fn default_ac_stark_alpha() -> f64 {
    crate::model::khz(10.0) / crate::model::khz(14.2).powi(2)
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            ac_stark_alpha: default_ac_stark_alpha(),
            compensation_enabled: true,
            trap_offset: 0.0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self, ion: &IonParams) -> Result<()> {
        if self.trap_offset.abs() >= 0.5 * (ion.delta_b - ion.delta_r) {
            return Err(Error::InvalidParameter(
                "trap_offset magnitude must stay below (delta_b - delta_r)/2".into(),
            ));
        }
        Ok(())
    }
}

/// Open-system rates; each channel is independently optional.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DissipatorConfig {
    /// Motional dephasing time; None means no dephasing.
    pub tau_d: Option<f64>,
    /// Product rate gamma n_th in quanta/s, used for both the upward and
    /// downward heating channels (n_th >> 1 regime).
    pub heating_rate: f64,
    /// Qubit dephasing rate Gamma_q in 1/s.
    pub qubit_rate: f64,
}

impl Default for DissipatorConfig {
    fn default() -> Self {
        Self {
            tau_d: None,
            heating_rate: 0.0,
            qubit_rate: 0.0,
        }
    }
}

impl DissipatorConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(td) = self.tau_d {
            if !(td > 0.0) {
                return Err(Error::InvalidParameter("tau_d must be positive".into()));
            }
        }
        if self.heating_rate < 0.0 || self.qubit_rate < 0.0 {
            return Err(Error::InvalidParameter("rates must be >= 0".into()));
        }
        Ok(())
    }

    /// Motional dephasing rate Gamma_m = 1/tau_d.
    pub fn gamma_m(&self) -> f64 {
        self.tau_d.map(|td| 1.0 / td).unwrap_or(0.0)
    }
}

/// Observables recorded at one sample time.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub omega_sb: f64,
    pub g: f64,
    pub p_up: f64,
    pub n_bar: f64,
    /// Rescaled mode occupation (omega_f / omega_a) n_bar.
    pub n_f: f64,
    pub parity_exp: f64,
    pub norm_or_trace: f64,
    pub phonon_dist: Vec<f64>,
}

/// Detunings actually seen by the ion at drive amplitude omega_sb.
pub fn effective_detunings(ion: &IonParams, noise: &NoiseModel, omega_sb: f64) -> (f64, f64) {
    let mut db = ion.delta_b + noise.trap_offset;
    let mut dr = ion.delta_r - noise.trap_offset;
    if !noise.compensation_enabled {
        let shift = noise.ac_stark_alpha * omega_sb * omega_sb;
        db -= shift;
        dr -= shift;
    }
    (db, dr)
}

// banded representation of H: diagonal plus the spin-flip coupling band
// c[n] between |s,n> and |1-s,n+1>
struct Bands {
    diag: Vec<f64>,
    coup: Vec<f64>,
    nf: usize,
}

impl Bands {
    fn new(space: &SpaceConfig) -> Self {
        Self {
            diag: vec![0.0; space.dim()],
            coup: vec![0.0; space.fock_cutoff],
            nf: space.fock_dim(),
        }
    }

    fn fill(&mut self, ion: &IonParams, noise: &NoiseModel, omega_sb: f64, f_diag: &[f64]) {
        let (db, dr) = effective_detunings(ion, noise, omega_sb);
        let omega_a = 0.5 * (db + dr);
        let omega_f = 0.5 * (db - dr);
        let lambda = 0.5 * omega_sb;
        let nf = self.nf;
        for n in 0..nf {
            self.diag[n] = -0.5 * omega_a + omega_f * n as f64;
            self.diag[nf + n] = 0.5 * omega_a + omega_f * n as f64;
        }
        for n in 0..nf - 1 {
            self.coup[n] = lambda * ((n + 1) as f64).sqrt() * f_diag[n];
        }
    }

    // out = -i H v
    fn apply_minus_i_h(&self, v: &[Complex64], out: &mut [Complex64]) {
        let nf = self.nf;
        for s in 0..2 {
            let base = s * nf;
            let partner = (1 - s) * nf;
            for n in 0..nf {
                let i = base + n;
                let mut acc = self.diag[i] * v[i];
                if n > 0 {
                    acc += self.coup[n - 1] * v[partner + n - 1];
                }
                if n + 1 < nf {
                    acc += self.coup[n] * v[partner + n + 1];
                }
                out[i] = Complex64::new(acc.im, -acc.re);
            }
        }
    }

    // out = H x
    fn mul_left(&self, x: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        let nf = self.nf;
        let dim = 2 * nf;
        for j in 0..dim {
            for s in 0..2 {
                let base = s * nf;
                let partner = (1 - s) * nf;
                for n in 0..nf {
                    let i = base + n;
                    let mut acc = self.diag[i] * x[(i, j)];
                    if n > 0 {
                        acc += self.coup[n - 1] * x[(partner + n - 1, j)];
                    }
                    if n + 1 < nf {
                        acc += self.coup[n] * x[(partner + n + 1, j)];
                    }
                    out[(i, j)] = acc;
                }
            }
        }
    }

    // out = x H; uses H = H^T
    fn mul_right(&self, x: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        let nf = self.nf;
        let dim = 2 * nf;
        for s in 0..2 {
            let base = s * nf;
            let partner = (1 - s) * nf;
            for n in 0..nf {
                let j = base + n;
                for i in 0..dim {
                    let mut acc = self.diag[j] * x[(i, j)];
                    if n > 0 {
                        acc += self.coup[n - 1] * x[(i, partner + n - 1)];
                    }
                    if n + 1 < nf {
                        acc += self.coup[n] * x[(i, partner + n + 1)];
                    }
                    out[(i, j)] = acc;
                }
            }
        }
    }
}

fn base_step(ion: &IonParams, omega_sb_peak: f64) -> f64 {
    let fastest = ion.delta_b.max(omega_sb_peak).max(1.0);
    std::f64::consts::TAU / (STEPS_PER_CYCLE * fastest)
}

fn assemble_sample(
    space: &SpaceConfig,
    ion: &IonParams,
    noise: &NoiseModel,
    t: f64,
    omega_sb: f64,
    dist: Vec<f64>,
    p_up: f64,
    parity: f64,
    weight: f64,
) -> TrajectorySample {
    let n_bar: f64 = dist.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
    let _ = space;
    let (db, dr) = effective_detunings(ion, noise, omega_sb);
    TrajectorySample {
        t,
        omega_sb,
        g: 2.0 * omega_sb / (db * db - dr * dr).sqrt(),
        p_up,
        n_bar,
        n_f: (db - dr) / (db + dr) * n_bar,
        parity_exp: parity,
        norm_or_trace: weight,
        phonon_dist: dist,
    }
}

fn sample_from_pure(
    space: &SpaceConfig,
    ion: &IonParams,
    noise: &NoiseModel,
    t: f64,
    omega_sb: f64,
    psi: &DVector<Complex64>,
) -> TrajectorySample {
    let nf = space.fock_dim();
    let mut dist = vec![0.0; nf];
    let mut p_up = 0.0;
    let mut parity = 0.0;
    let mut norm = 0.0;
    for s in 0..2 {
        let spin_sign = if s == 0 { -1.0 } else { 1.0 };
        for n in 0..nf {
            let p = psi[s * nf + n].norm_sqr();
            dist[n] += p;
            norm += p;
            if s == 1 {
                p_up += p;
            }
            parity += spin_sign * if n % 2 == 0 { p } else { -p };
        }
    }
    assemble_sample(space, ion, noise, t, omega_sb, dist, p_up, parity, norm)
}

fn embed_pure(
    space: &SpaceConfig,
    psi: &DVector<Complex64>,
    bigger: &SpaceConfig,
) -> Result<DVector<Complex64>> {
    if space.fock_cutoff > bigger.fock_cutoff {
        return Err(Error::InvalidParameter(
            "initial state lives on a larger space than the target".into(),
        ));
    }
    let mut out = DVector::zeros(bigger.dim());
    for s in 0..2 {
        for n in 0..space.fock_dim() {
            out[bigger.index(s, n)] = psi[space.index(s, n)];
        }
    }
    Ok(out)
}

fn init_pure(space: &SpaceConfig, init: Option<&QuantumState>) -> Result<DVector<Complex64>> {
    match init {
        None => {
            let mut v = DVector::zeros(space.dim());
            v[0] = Complex64::new(1.0, 0.0);
            Ok(v)
        }
        Some(state) => {
            state.validate()?;
            match &state.repr {
                StateRepr::Pure(v) => embed_pure(&state.space, v, space),
                StateRepr::Mixed(_) => Err(Error::InvalidParameter(
                    "Schrodinger evolution requires a pure initial state".into(),
                )),
            }
        }
    }
}

fn tail_ok(space: &SpaceConfig, state: &QuantumState) -> Result<(bool, f64)> {
    let top = TAIL_LEVELS.min(space.fock_cutoff.saturating_sub(1)).max(1);
    let tail = tail_population(state, top)?;
    Ok((tail < space.tail_tolerance, tail))
}

// reruns `run` on 1.5x grown cutoffs until the final-state tail fits
fn with_cutoff_retry<F>(space: &SpaceConfig, mut run: F) -> Result<Vec<TrajectorySample>>
where
    F: FnMut(&SpaceConfig) -> Result<(Vec<TrajectorySample>, QuantumState)>,
{
    let mut current = *space;
    let mut last_tail = 1.0;
    for _ in 0..=MAX_CUTOFF_RETRIES {
        let (samples, final_state) = run(&current)?;
        let (ok, tail) = tail_ok(&current, &final_state)?;
        if ok {
            return Ok(samples);
        }
        last_tail = tail;
        current = current.grown();
    }
    Err(Error::CutoffExhausted {
        cutoff: current.fock_cutoff,
        tail: last_tail,
        tolerance: space.tail_tolerance,
        retries: MAX_CUTOFF_RETRIES,
    })
}

#[allow(clippy::too_many_arguments)]
fn integrate_schrodinger(
    ion: &IonParams,
    omega_fn: &dyn Fn(f64) -> f64,
    sample_times: &[f64],
    noise: &NoiseModel,
    nl: &NonlinearConfig,
    space: &SpaceConfig,
    init: Option<&QuantumState>,
    h_max: f64,
) -> Result<(Vec<TrajectorySample>, QuantumState)> {
    let dim = space.dim();
    let f_diag = if nl.enabled {
        nonlinear_f_diagonal(nl, space)
    } else {
        vec![1.0; space.fock_dim()]
    };
    let mut psi = init_pure(space, init)?;
    let mut bands = Bands::new(space);

    let mut k1 = vec![Complex64::default(); dim];
    let mut k2 = vec![Complex64::default(); dim];
    let mut k3 = vec![Complex64::default(); dim];
    let mut k4 = vec![Complex64::default(); dim];
    let mut tmp = vec![Complex64::default(); dim];

    let mut samples = Vec::with_capacity(sample_times.len());
    let mut t = 0.0;
    for &ts in sample_times {
        let seg = ts - t;
        if seg > 1e-15 {
            let n_steps = (seg / h_max).ceil().max(1.0) as usize;
            let h = seg / n_steps as f64;
            for k in 0..n_steps {
                let t_mid = t + (k as f64 + 0.5) * h;
                bands.fill(ion, noise, omega_fn(t_mid), &f_diag);
                // classical RK4 on the frozen midpoint Hamiltonian
                bands.apply_minus_i_h(psi.as_slice(), &mut k1);
                for i in 0..dim {
                    tmp[i] = psi[i] + 0.5 * h * k1[i];
                }
                bands.apply_minus_i_h(&tmp, &mut k2);
                for i in 0..dim {
                    tmp[i] = psi[i] + 0.5 * h * k2[i];
                }
                bands.apply_minus_i_h(&tmp, &mut k3);
                for i in 0..dim {
                    tmp[i] = psi[i] + h * k3[i];
                }
                bands.apply_minus_i_h(&tmp, &mut k4);
                for i in 0..dim {
                    psi[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
            t = ts;
        }
        samples.push(sample_from_pure(space, ion, noise, ts, omega_fn(ts), &psi));
    }
    let final_state = QuantumState {
        space: *space,
        repr: StateRepr::Pure(psi),
    };
    Ok((samples, final_state))
}

/// Closed-system quench. `init` defaults to |down, 0>.
///
/// The truncation is checked after the run; on a violated tail bound the
/// evolution reruns with the cutoff grown by 1.5x, at most three times.
pub fn evolve_schrodinger(
    ion: &IonParams,
    schedule: &QuenchSchedule,
    noise: &NoiseModel,
    nl: &NonlinearConfig,
    space: &SpaceConfig,
    init: Option<&QuantumState>,
) -> Result<Vec<TrajectorySample>> {
    ion.validate()?;
    schedule.validate()?;
    noise.validate(ion)?;
    space.validate()?;
    let h_max = base_step(ion, schedule.omega_sb_max);
    with_cutoff_retry(space, |sp| {
        integrate_schrodinger(
            ion,
            &|t| schedule.omega_sb_at(t),
            &schedule.sample_times,
            noise,
            nl,
            sp,
            init,
            h_max,
        )
    })
}

/// Like [`evolve_schrodinger`] but also returns the final state, and runs
/// on the given space as-is (no cutoff retry): callers own the truncation.
pub fn evolve_schrodinger_with_state(
    ion: &IonParams,
    schedule: &QuenchSchedule,
    noise: &NoiseModel,
    nl: &NonlinearConfig,
    space: &SpaceConfig,
    init: Option<&QuantumState>,
) -> Result<(Vec<TrajectorySample>, QuantumState)> {
    ion.validate()?;
    schedule.validate()?;
    noise.validate(ion)?;
    space.validate()?;
    let h_max = base_step(ion, schedule.omega_sb_max);
    integrate_schrodinger(
        ion,
        &|t| schedule.omega_sb_at(t),
        &schedule.sample_times,
        noise,
        nl,
        space,
        init,
        h_max,
    )
}

/// Adaptive-step variant: halves the base step until the endpoint
/// observables (p_up, n_bar) move by less than `tol`.
#[allow(clippy::too_many_arguments)]
pub fn evolve_schrodinger_adaptive(
    ion: &IonParams,
    schedule: &QuenchSchedule,
    noise: &NoiseModel,
    nl: &NonlinearConfig,
    space: &SpaceConfig,
    init: Option<&QuantumState>,
    tol: f64,
) -> Result<Vec<TrajectorySample>> {
    ion.validate()?;
    schedule.validate()?;
    noise.validate(ion)?;
    space.validate()?;
    let omega_fn = |t: f64| schedule.omega_sb_at(t);
    let mut h = base_step(ion, schedule.omega_sb_max);
    let (mut samples, _) = integrate_schrodinger(
        ion,
        &omega_fn,
        &schedule.sample_times,
        noise,
        nl,
        space,
        init,
        h,
    )?;
    for _ in 0..8 {
        h *= 0.5;
        let (finer, final_state) = integrate_schrodinger(
            ion,
            &omega_fn,
            &schedule.sample_times,
            noise,
            nl,
            space,
            init,
            h,
        )?;
        let a = samples.last().unwrap();
        let b = finer.last().unwrap();
        let delta = (a.p_up - b.p_up).abs().max((a.n_bar - b.n_bar).abs());
        samples = finer;
        if delta < tol {
            let (ok, tail) = tail_ok(space, &final_state)?;
            if !ok {
                return Err(Error::CutoffExhausted {
                    cutoff: space.fock_cutoff,
                    tail,
                    tolerance: space.tail_tolerance,
                    retries: 0,
                });
            }
            return Ok(samples);
        }
    }
    Err(Error::Numerics(
        "step-size control failed to converge after 8 halvings".into(),
    ))
}

/// Constant-coupling evolution (frozen lambda), e.g. for probe pulses and
/// conservation checks. Drives at ion.omega_sb throughout.
pub fn evolve_schrodinger_constant(
    ion: &IonParams,
    duration: f64,
    n_samples: usize,
    noise: &NoiseModel,
    nl: &NonlinearConfig,
    space: &SpaceConfig,
    init: Option<&QuantumState>,
) -> Result<Vec<TrajectorySample>> {
    ion.validate()?;
    noise.validate(ion)?;
    space.validate()?;
    if !(duration > 0.0) {
        return Err(Error::InvalidParameter("duration must be positive".into()));
    }
    let sample_times = QuenchSchedule::uniform(0.0, duration, n_samples).sample_times;
    let h_max = base_step(ion, ion.omega_sb);
    with_cutoff_retry(space, |sp| {
        integrate_schrodinger(
            ion,
            &|_| ion.omega_sb,
            &sample_times,
            noise,
            nl,
            sp,
            init,
            h_max,
        )
    })
}

// real/imaginary split of a density matrix; all generators are real in this
// basis so the parts mix only through -i[H, .]
struct RhoSplit {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
}

// D[a_dag] + D[a] with equal folded rates, acting on one real part of rho
fn add_heating(rate: f64, nf: usize, m: &DMatrix<f64>, out: &mut DMatrix<f64>) {
    if rate == 0.0 {
        return;
    }
    let dim = 2 * nf;
    for j in 0..dim {
        let njf = j % nf;
        for i in 0..dim {
            let nif = i % nf;
            let mut acc = 0.0;
            // a_dag rho a
            if nif > 0 && njf > 0 {
                acc += ((nif * njf) as f64).sqrt() * m[(i - 1, j - 1)];
            }
            // a rho a_dag
            if nif + 1 < nf && njf + 1 < nf {
                acc += (((nif + 1) * (njf + 1)) as f64).sqrt() * m[(i + 1, j + 1)];
            }
            // -(1/2){a a_dag + a_dag a, rho}; a_dag is truncated at the top,
            // so a a_dag has diagonal n+1 except 0 at the edge (trace-exact)
            let qi = nif as f64 + if nif + 1 < nf { (nif + 1) as f64 } else { 0.0 };
            let qj = njf as f64 + if njf + 1 < nf { (njf + 1) as f64 } else { 0.0 };
            acc -= 0.5 * (qi + qj) * m[(i, j)];
            out[(i, j)] += rate * acc;
        }
    }
}

// coherent part plus heating: kx + i ky = -i[H, rho] + D_heat(rho)
fn lindblad_rhs(
    bands: &Bands,
    heating_rate: f64,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    hx: &mut DMatrix<f64>,
    xh: &mut DMatrix<f64>,
    kx: &mut DMatrix<f64>,
    ky: &mut DMatrix<f64>,
) {
    bands.mul_left(y, hx);
    bands.mul_right(y, xh);
    for j in 0..kx.ncols() {
        for i in 0..kx.nrows() {
            kx[(i, j)] = hx[(i, j)] - xh[(i, j)];
        }
    }
    bands.mul_left(x, hx);
    bands.mul_right(x, xh);
    for j in 0..ky.ncols() {
        for i in 0..ky.nrows() {
            ky[(i, j)] = xh[(i, j)] - hx[(i, j)];
        }
    }
    add_heating(heating_rate, bands.nf, x, kx);
    add_heating(heating_rate, bands.nf, y, ky);
}

// elementwise decay rates of the diagonal dissipators:
// L[sqrt(2 Gamma_m) n] + L[sqrt(2 Gamma_q) sp sm] damp rho_ij at
// Gamma_m (n_i - n_j)^2 + Gamma_q (u_i - u_j)^2
fn dephasing_rates(space: &SpaceConfig, gamma_m: f64, gamma_q: f64) -> DMatrix<f64> {
    let nf = space.fock_dim();
    let dim = space.dim();
    let mut lam = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let (sj, nj) = (j / nf, j % nf);
        for i in 0..dim {
            let (si, ni) = (i / nf, i % nf);
            let dn = ni as f64 - nj as f64;
            let du = si as f64 - sj as f64;
            lam[(i, j)] = gamma_m * dn * dn + gamma_q * du * du;
        }
    }
    lam
}

fn sample_from_split(
    space: &SpaceConfig,
    ion: &IonParams,
    noise: &NoiseModel,
    t: f64,
    omega_sb: f64,
    rho: &RhoSplit,
) -> TrajectorySample {
    let nf = space.fock_dim();
    let mut dist = vec![0.0; nf];
    let mut p_up = 0.0;
    let mut parity = 0.0;
    let mut trace = 0.0;
    for s in 0..2 {
        let spin_sign = if s == 0 { -1.0 } else { 1.0 };
        for n in 0..nf {
            let p = rho.x[(s * nf + n, s * nf + n)];
            dist[n] += p;
            trace += p;
            if s == 1 {
                p_up += p;
            }
            parity += spin_sign * if n % 2 == 0 { p } else { -p };
        }
    }
    assemble_sample(space, ion, noise, t, omega_sb, dist, p_up, parity, trace)
}

fn check_positivity(space: &SpaceConfig, rho: &RhoSplit, t: f64) -> Result<()> {
    let dim = space.dim();
    let mut c = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        for i in 0..dim {
            c[(i, j)] = Complex64::new(rho.x[(i, j)], rho.y[(i, j)]);
        }
    }
    let eig = c.symmetric_eigen();
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig <= -1e-6 {
        return Err(Error::Numerics(format!(
            "density matrix lost positivity at t = {:.6e} s: min eigenvalue {:.3e}",
            t, min_eig
        )));
    }
    Ok(())
}

fn init_split(space: &SpaceConfig, init: Option<&QuantumState>) -> Result<RhoSplit> {
    let dim = space.dim();
    match init {
        None => {
            let mut x = DMatrix::zeros(dim, dim);
            x[(0, 0)] = 1.0;
            Ok(RhoSplit {
                x,
                y: DMatrix::zeros(dim, dim),
            })
        }
        Some(state) => {
            state.validate()?;
            match &state.repr {
                StateRepr::Pure(v) => {
                    let big = embed_pure(&state.space, v, space)?;
                    let mut x = DMatrix::zeros(dim, dim);
                    let mut y = DMatrix::zeros(dim, dim);
                    for j in 0..dim {
                        for i in 0..dim {
                            let z = big[i] * big[j].conj();
                            x[(i, j)] = z.re;
                            y[(i, j)] = z.im;
                        }
                    }
                    Ok(RhoSplit { x, y })
                }
                StateRepr::Mixed(m) => {
                    if state.space.fock_cutoff > space.fock_cutoff {
                        return Err(Error::InvalidParameter(
                            "initial state lives on a larger space than the target".into(),
                        ));
                    }
                    let mut x = DMatrix::zeros(dim, dim);
                    let mut y = DMatrix::zeros(dim, dim);
                    let small_nf = state.space.fock_dim();
                    for sj in 0..2 {
                        for nj in 0..small_nf {
                            for si in 0..2 {
                                for ni in 0..small_nf {
                                    let z = m[(state.space.index(si, ni), state.space.index(sj, nj))];
                                    let (bi, bj) = (space.index(si, ni), space.index(sj, nj));
                                    x[(bi, bj)] = z.re;
                                    y[(bi, bj)] = z.im;
                                }
                            }
                        }
                    }
                    Ok(RhoSplit { x, y })
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn integrate_lindblad(
    ion: &IonParams,
    omega_fn: &dyn Fn(f64) -> f64,
    sample_times: &[f64],
    noise: &NoiseModel,
    nl: &NonlinearConfig,
    diss: &DissipatorConfig,
    space: &SpaceConfig,
    init: Option<&QuantumState>,
    h_max: f64,
) -> Result<(Vec<TrajectorySample>, QuantumState)> {
    let dim = space.dim();
    let f_diag = if nl.enabled {
        nonlinear_f_diagonal(nl, space)
    } else {
        vec![1.0; space.fock_dim()]
    };
    let mut rho = init_split(space, init)?;
    let lam = dephasing_rates(space, diss.gamma_m(), diss.qubit_rate);
    let mut bands = Bands::new(space);

    let z = || DMatrix::<f64>::zeros(dim, dim);
    let mut hx = z();
    let mut xh = z();
    let mut kx = [z(), z(), z(), z()];
    let mut ky = [z(), z(), z(), z()];
    let mut tx = z();
    let mut ty = z();

    // elementwise integrating-factor masks, rebuilt when the step changes
    let mut mask_h = f64::NAN;
    let mut e2 = z();
    let mut e2i = z();
    let mut eh = z();
    let mut ehi = z();

    let mut samples = Vec::with_capacity(sample_times.len());
    let mut t = 0.0;
    for &ts in sample_times {
        let seg = ts - t;
        if seg > 1e-15 {
            let n_steps = (seg / h_max).ceil().max(1.0) as usize;
            let h = seg / n_steps as f64;
            if mask_h.is_nan() || (h - mask_h).abs() > 1e-18 {
                for j in 0..dim {
                    for i in 0..dim {
                        let l = lam[(i, j)];
                        e2[(i, j)] = (-0.5 * l * h).exp();
                        e2i[(i, j)] = (0.5 * l * h).exp();
                        eh[(i, j)] = (-l * h).exp();
                        ehi[(i, j)] = (l * h).exp();
                    }
                }
                mask_h = h;
            }
            for k in 0..n_steps {
                let t_mid = t + (k as f64 + 0.5) * h;
                bands.fill(ion, noise, omega_fn(t_mid), &f_diag);

                // Lawson RK4: dephasing factors applied exactly, the
                // remaining generator N integrated classically
                lindblad_rhs(
                    &bands,
                    diss.heating_rate,
                    &rho.x,
                    &rho.y,
                    &mut hx,
                    &mut xh,
                    &mut kx[0],
                    &mut ky[0],
                );
                for idx in 0..3 {
                    let (w, mask, unmask) = match idx {
                        0 => (0.5 * h, &e2, &e2i),
                        1 => (0.5 * h, &e2, &e2i),
                        _ => (h, &eh, &ehi),
                    };
                    for j in 0..dim {
                        for i in 0..dim {
                            tx[(i, j)] = mask[(i, j)] * (rho.x[(i, j)] + w * kx[idx][(i, j)]);
                            ty[(i, j)] = mask[(i, j)] * (rho.y[(i, j)] + w * ky[idx][(i, j)]);
                        }
                    }
                    let (kx_out, ky_out) = (&mut kx[idx + 1], &mut ky[idx + 1]);
                    // borrow juggling: rhs writes into stage idx+1
                    let (txr, tyr) = (&tx, &ty);
                    bands.mul_left(tyr, &mut hx);
                    bands.mul_right(tyr, &mut xh);
                    for j in 0..dim {
                        for i in 0..dim {
                            kx_out[(i, j)] = hx[(i, j)] - xh[(i, j)];
                        }
                    }
                    bands.mul_left(txr, &mut hx);
                    bands.mul_right(txr, &mut xh);
                    for j in 0..dim {
                        for i in 0..dim {
                            ky_out[(i, j)] = xh[(i, j)] - hx[(i, j)];
                        }
                    }
                    add_heating(diss.heating_rate, bands.nf, txr, kx_out);
                    add_heating(diss.heating_rate, bands.nf, tyr, ky_out);
                    for j in 0..dim {
                        for i in 0..dim {
                            kx_out[(i, j)] *= unmask[(i, j)];
                            ky_out[(i, j)] *= unmask[(i, j)];
                        }
                    }
                }

                for j in 0..dim {
                    for i in 0..dim {
                        let sx = rho.x[(i, j)]
                            + h / 6.0
                                * (kx[0][(i, j)]
                                    + 2.0 * kx[1][(i, j)]
                                    + 2.0 * kx[2][(i, j)]
                                    + kx[3][(i, j)]);
                        let sy = rho.y[(i, j)]
                            + h / 6.0
                                * (ky[0][(i, j)]
                                    + 2.0 * ky[1][(i, j)]
                                    + 2.0 * ky[2][(i, j)]
                                    + ky[3][(i, j)]);
                        tx[(i, j)] = eh[(i, j)] * sx;
                        ty[(i, j)] = eh[(i, j)] * sy;
                    }
                }
                // hermitize: x symmetric, y antisymmetric
                for j in 0..dim {
                    for i in 0..=j {
                        let xs = 0.5 * (tx[(i, j)] + tx[(j, i)]);
                        rho.x[(i, j)] = xs;
                        rho.x[(j, i)] = xs;
                        let ya = 0.5 * (ty[(i, j)] - ty[(j, i)]);
                        rho.y[(i, j)] = ya;
                        rho.y[(j, i)] = -ya;
                    }
                }
            }
            t = ts;
        }
        check_positivity(space, &rho, ts)?;
        samples.push(sample_from_split(space, ion, noise, ts, omega_fn(ts), &rho));
    }

    let mut c = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        for i in 0..dim {
            c[(i, j)] = Complex64::new(rho.x[(i, j)], rho.y[(i, j)]);
        }
    }
    let final_state = QuantumState {
        space: *space,
        repr: StateRepr::Mixed(c),
    };
    Ok((samples, final_state))
}

/// Open-system quench under the master equation with motional dephasing,
/// heating and qubit dephasing. Same retry ladder as the closed variant.
pub fn evolve_lindblad(
    ion: &IonParams,
    schedule: &QuenchSchedule,
    noise: &NoiseModel,
    nl: &NonlinearConfig,
    diss: &DissipatorConfig,
    space: &SpaceConfig,
    init: Option<&QuantumState>,
) -> Result<Vec<TrajectorySample>> {
    ion.validate()?;
    schedule.validate()?;
    noise.validate(ion)?;
    diss.validate()?;
    space.validate()?;
    let h_max = base_step(ion, schedule.omega_sb_max);
    with_cutoff_retry(space, |sp| {
        integrate_lindblad(
            ion,
            &|t| schedule.omega_sb_at(t),
            &schedule.sample_times,
            noise,
            nl,
            diss,
            sp,
            init,
            h_max,
        )
    })
}

/// Like [`evolve_lindblad`] but also returns the final density matrix, and
/// runs on the given space as-is (no cutoff retry).
#[allow(clippy::too_many_arguments)]
pub fn evolve_lindblad_with_state(
    ion: &IonParams,
    schedule: &QuenchSchedule,
    noise: &NoiseModel,
    nl: &NonlinearConfig,
    diss: &DissipatorConfig,
    space: &SpaceConfig,
    init: Option<&QuantumState>,
) -> Result<(Vec<TrajectorySample>, QuantumState)> {
    ion.validate()?;
    schedule.validate()?;
    noise.validate(ion)?;
    diss.validate()?;
    space.validate()?;
    let h_max = base_step(ion, schedule.omega_sb_max);
    integrate_lindblad(
        ion,
        &|t| schedule.omega_sb_at(t),
        &schedule.sample_times,
        noise,
        nl,
        diss,
        space,
        init,
        h_max,
    )
}

/// Base integration step for the given drive ceiling; quench integrators
/// subdivide sampling segments into steps no longer than this.
pub fn max_step(ion: &IonParams, omega_sb_peak: f64) -> f64 {
    base_step(ion, omega_sb_peak)
}

/// State-detection model: corrupts the true probability with dark/bright
/// errors, samples a binomial frequency, then subtracts the dark background
/// as done in the experiment. Deterministic for a fixed seed.
pub fn measurement_model(
    p_up_true: f64,
    shots: u64,
    dark_error: f64,
    bright_error: f64,
    seed: u64,
) -> Result<f64> {
    for (name, p) in [
        ("p_up_true", p_up_true),
        ("dark_error", dark_error),
        ("bright_error", bright_error),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!(
                "{} must be a probability, got {}",
                name, p
            )));
        }
    }
    if shots == 0 {
        return Err(Error::InvalidParameter("shots must be >= 1".into()));
    }
    let p_corrupt = p_up_true * (1.0 - bright_error) + (1.0 - p_up_true) * dark_error;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = Binomial::new(shots, p_corrupt)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?
        .sample(&mut rng);
    let freq = draw as f64 / shots as f64;
    Ok((freq - dark_error).clamp(0.0, 1.0))
}
