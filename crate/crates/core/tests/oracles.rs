//! Independent propagation oracles.
//!
//! Both production integrators freeze the Hamiltonian at the midpoint
//! coupling of each internal step, so on a sample grid finer than the base
//! step (one step per segment) the exact reference is the product of dense
//! matrix exponentials of the same frozen generator sequence. The closed
//! system is checked in state norm distance, the open system elementwise on
//! the density matrix.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use rabiqpt_core::dynamics::{
    effective_detunings, evolve_lindblad_with_state, evolve_schrodinger_with_state, max_step,
    DissipatorConfig, NoiseModel, QuenchSchedule,
};
use rabiqpt_core::hilbert::{build_ladder, SpaceConfig, StateRepr};
use rabiqpt_core::model::{
    build_nonlinear_hamiltonian, build_qrm_hamiltonian, khz, IonParams, NonlinearConfig,
    QrmParams, DEFAULT_ETA,
};

fn fig_ion(omega_sb: f64) -> IonParams {
    IonParams {
        delta_b: khz(52.0),
        delta_r: khz(48.0),
        omega_sb,
        eta: DEFAULT_ETA,
    }
}

const NL_OFF: NonlinearConfig = NonlinearConfig {
    enabled: false,
    l_max: 1,
    eta: DEFAULT_ETA,
};

/// QRM parameters seen by the integrator at drive amplitude omega_sb.
fn effective_qrm(ion: &IonParams, noise: &NoiseModel, omega_sb: f64) -> QrmParams {
    let (db, dr) = effective_detunings(ion, noise, omega_sb);
    QrmParams {
        omega_a: 0.5 * (db + dr),
        omega_f: 0.5 * (db - dr),
        lambda: 0.5 * omega_sb,
    }
}

/// psi <- exp(-i H dt) psi through the eigendecomposition of real
/// symmetric H.
fn apply_expm(h: &DMatrix<f64>, dt: f64, psi: &DVector<Complex64>) -> DVector<Complex64> {
    let eig = h.clone().symmetric_eigen();
    let v = &eig.eigenvectors;
    let mut coeff = DVector::<Complex64>::zeros(psi.len());
    for k in 0..psi.len() {
        let mut acc = Complex64::default();
        for i in 0..psi.len() {
            acc += v[(i, k)] * psi[i];
        }
        coeff[k] = acc * Complex64::from_polar(1.0, -eig.eigenvalues[k] * dt);
    }
    let mut out = DVector::<Complex64>::zeros(psi.len());
    for i in 0..psi.len() {
        let mut acc = Complex64::default();
        for k in 0..psi.len() {
            acc += v[(i, k)] * coeff[k];
        }
        out[i] = acc;
    }
    out
}

/// Sample grid of n segments, each half the base integration step, so the
/// integrator takes exactly one step per segment.
fn dense_schedule(ion: &IonParams, omega_max: f64, n: usize) -> QuenchSchedule {
    let h = 0.5 * max_step(ion, omega_max);
    QuenchSchedule {
        omega_sb_max: omega_max,
        tau_q: n as f64 * h,
        sample_times: (1..=n).map(|k| k as f64 * h).collect(),
    }
}

fn pure_vector(state: &rabiqpt_core::hilbert::QuantumState) -> DVector<Complex64> {
    match &state.repr {
        StateRepr::Pure(v) => v.clone(),
        StateRepr::Mixed(_) => panic!("expected a pure state"),
    }
}

fn mixed_matrix(state: &rabiqpt_core::hilbert::QuantumState) -> DMatrix<Complex64> {
    match &state.repr {
        StateRepr::Mixed(m) => m.clone(),
        StateRepr::Pure(_) => panic!("expected a density matrix"),
    }
}

#[test]
fn schrodinger_matches_matrix_exponential() {
    let ion = fig_ion(khz(6.0));
    let noise = NoiseModel::default();
    let space = SpaceConfig::new(3);
    let schedule = dense_schedule(&ion, khz(6.0), 10);

    let (samples, final_state) =
        evolve_schrodinger_with_state(&ion, &schedule, &noise, &NL_OFF, &space, None).unwrap();

    // reference: product of exact exponentials of the same midpoint sequence
    let mut psi = DVector::<Complex64>::zeros(space.dim());
    psi[0] = Complex64::new(1.0, 0.0);
    let mut t = 0.0;
    for (k, &ts) in schedule.sample_times.iter().enumerate() {
        let t_mid = 0.5 * (t + ts);
        let qrm = effective_qrm(&ion, &noise, schedule.omega_sb_at(t_mid));
        let h = build_qrm_hamiltonian(&qrm, &space).unwrap();
        psi = apply_expm(&h, ts - t, &psi);
        t = ts;

        let s = &samples[k];
        let mut p_up = 0.0;
        let mut norm = 0.0;
        let mut n_bar = 0.0;
        for sp in 0..2 {
            for n in 0..space.fock_dim() {
                let p = psi[space.index(sp, n)].norm_sqr();
                norm += p;
                n_bar += n as f64 * p;
                if sp == 1 {
                    p_up += p;
                }
            }
        }
        assert!((s.p_up - p_up).abs() < 1e-7, "p_up dev at sample {}", k);
        assert!((s.n_bar - n_bar).abs() < 1e-7, "n_bar dev at sample {}", k);
        assert!((s.norm_or_trace - norm).abs() < 1e-7);
    }

    let dev = (pure_vector(&final_state) - &psi).norm();
    assert!(dev < 1e-8, "state norm distance {:e}", dev);
}

#[test]
fn nonlinear_schrodinger_matches_matrix_exponential() {
    let ion = IonParams {
        eta: 0.14,
        ..fig_ion(khz(6.0))
    };
    let nl = NonlinearConfig {
        enabled: true,
        l_max: 2,
        eta: 0.14,
    };
    let noise = NoiseModel {
        compensation_enabled: false,
        ..NoiseModel::default()
    };
    let space = SpaceConfig::new(3);
    let schedule = dense_schedule(&ion, khz(6.0), 8);

    let (_, final_state) =
        evolve_schrodinger_with_state(&ion, &schedule, &noise, &nl, &space, None).unwrap();

    let mut psi = DVector::<Complex64>::zeros(space.dim());
    psi[0] = Complex64::new(1.0, 0.0);
    let mut t = 0.0;
    for &ts in &schedule.sample_times {
        let t_mid = 0.5 * (t + ts);
        let qrm = effective_qrm(&ion, &noise, schedule.omega_sb_at(t_mid));
        let h = build_nonlinear_hamiltonian(&qrm, &nl, &space).unwrap();
        psi = apply_expm(&h, ts - t, &psi);
        t = ts;
    }
    let dev = (pure_vector(&final_state) - &psi).norm();
    assert!(dev < 1e-8, "state norm distance {:e}", dev);
}

/// vec(A rho B) = (B^T kron A) vec(rho) for column-stacked vec.
fn sandwich(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    b.transpose().kronecker(a)
}

fn dissipator_super(c: &DMatrix<f64>) -> DMatrix<f64> {
    let dim = c.nrows();
    let id = DMatrix::<f64>::identity(dim, dim);
    let ctc = c.transpose() * c;
    sandwich(c, &c.transpose()) - 0.5 * sandwich(&ctc, &id) - 0.5 * sandwich(&id, &ctc)
}

/// Full master-equation generator, frozen at one drive amplitude.
fn lindblad_super(
    ion: &IonParams,
    noise: &NoiseModel,
    diss: &DissipatorConfig,
    space: &SpaceConfig,
    omega_sb: f64,
) -> DMatrix<Complex64> {
    let dim = space.dim();
    let qrm = effective_qrm(ion, noise, omega_sb);
    let h = build_qrm_hamiltonian(&qrm, space).unwrap();
    let id = DMatrix::<f64>::identity(dim, dim);

    // -i [H, rho]
    let commutator = sandwich(&h, &id) - sandwich(&id, &h);
    let mut g: DMatrix<Complex64> = commutator.map(|x| Complex64::new(0.0, -x));

    // heating: D[a] + D[a_dag] at the folded rate; a_dag truncated at the
    // top exactly as in the banded integrator
    let (a, a_dag) = build_ladder(space);
    let heat = (dissipator_super(&a) + dissipator_super(&a_dag)) * diss.heating_rate;
    g += heat.map(|x| Complex64::new(x, 0.0));

    // motional + qubit dephasing: diagonal in the vectorized basis
    let nf = space.fock_dim();
    for j in 0..dim {
        for i in 0..dim {
            let dn = (i % nf) as f64 - (j % nf) as f64;
            let du = (i / nf) as f64 - (j / nf) as f64;
            let lam = diss.gamma_m() * dn * dn + diss.qubit_rate * du * du;
            g[(j * dim + i, j * dim + i)] -= Complex64::new(lam, 0.0);
        }
    }
    g
}

/// Matrix exponential by scaling and squaring with a Taylor kernel.
fn expm_complex(a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let dim = a.nrows();
    let norm1 = (0..dim)
        .map(|j| (0..dim).map(|i| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm1 > 0.25 {
        (norm1 / 0.25).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a / Complex64::new(2f64.powi(squarings as i32), 0.0);
    let mut result = DMatrix::<Complex64>::identity(dim, dim);
    let mut term = DMatrix::<Complex64>::identity(dim, dim);
    for k in 1..=20 {
        term = (&term * &scaled) / Complex64::new(k as f64, 0.0);
        result += &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

#[test]
fn lindblad_matches_superoperator_exponential() {
    let ion = fig_ion(khz(8.0));
    let noise = NoiseModel::default();
    let diss = DissipatorConfig {
        tau_d: Some(0.4e-3),
        heating_rate: 80.0,
        qubit_rate: 30.0,
    };
    let space = SpaceConfig::new(4);
    let dim = space.dim();
    let schedule = dense_schedule(&ion, khz(8.0), 12);

    let (samples, final_state) = evolve_lindblad_with_state(
        &ion,
        &schedule,
        &noise,
        &NL_OFF,
        &diss,
        &space,
        None,
    )
    .unwrap();

    // reference: exact exponential of the frozen generator per segment
    let mut rho_vec = DVector::<Complex64>::zeros(dim * dim);
    rho_vec[0] = Complex64::new(1.0, 0.0);
    let mut t = 0.0;
    for (k, &ts) in schedule.sample_times.iter().enumerate() {
        let t_mid = 0.5 * (t + ts);
        let g = lindblad_super(&ion, &noise, &diss, &space, schedule.omega_sb_at(t_mid));
        let u = expm_complex(&(g * Complex64::new(ts - t, 0.0)));
        rho_vec = u * rho_vec;
        t = ts;

        let mut trace = 0.0;
        let mut p_up = 0.0;
        let mut n_bar = 0.0;
        for sp in 0..2 {
            for n in 0..space.fock_dim() {
                let i = space.index(sp, n);
                let p = rho_vec[i * dim + i].re;
                trace += p;
                n_bar += n as f64 * p;
                if sp == 1 {
                    p_up += p;
                }
            }
        }
        let s = &samples[k];
        assert!((s.norm_or_trace - trace).abs() < 1e-7, "trace at {}", k);
        assert!((s.p_up - p_up).abs() < 1e-7, "p_up at {}", k);
        assert!((s.n_bar - n_bar).abs() < 1e-7, "n_bar at {}", k);
    }

    let rho = mixed_matrix(&final_state);
    let mut max_dev = 0.0_f64;
    for j in 0..dim {
        for i in 0..dim {
            max_dev = max_dev.max((rho[(i, j)] - rho_vec[j * dim + i]).norm());
        }
    }
    assert!(max_dev < 1e-7, "element deviation {:e}", max_dev);
}

#[test]
fn heating_truncation_is_trace_exact() {
    // the truncated a_dag keeps the heating dissipator exactly traceless,
    // so the trace error is pure roundoff even on a hot trajectory
    let ion = fig_ion(khz(4.0));
    let diss = DissipatorConfig {
        tau_d: None,
        heating_rate: 2000.0,
        qubit_rate: 0.0,
    };
    let space = SpaceConfig {
        fock_cutoff: 6,
        tail_tolerance: 0.9,
    };
    let schedule = QuenchSchedule::uniform(khz(4.0), 0.2e-3, 5);
    let (samples, _) = evolve_lindblad_with_state(
        &ion,
        &schedule,
        &NoiseModel::default(),
        &NL_OFF,
        &diss,
        &space,
        None,
    )
    .unwrap();
    for s in &samples {
        assert!(
            (s.norm_or_trace - 1.0).abs() < 1e-10,
            "trace drift {:e}",
            s.norm_or_trace - 1.0
        );
    }
    // the drive does heat the mode
    assert!(samples.last().unwrap().n_bar > 0.05);
}
