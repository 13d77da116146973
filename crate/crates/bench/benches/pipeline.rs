//! Hot paths of the simulation pipeline, at sizes close to production use.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use rabiqpt_bench::{bench_ion, bench_schedule};
use rabiqpt_core::dynamics::{
    evolve_lindblad, evolve_schrodinger, DissipatorConfig, NoiseModel,
};
use rabiqpt_core::hilbert::SpaceConfig;
use rabiqpt_core::model::{build_qrm_hamiltonian, khz, NonlinearConfig, QrmParams, DEFAULT_ETA};
use rabiqpt_core::sideband::{
    fit_phonon_distribution, synthesize_signal, Gamma0Mode, NoiseSpec,
};
use rabiqpt_core::spectra::ground_state;

const NL_OFF: NonlinearConfig = NonlinearConfig {
    enabled: false,
    l_max: 1,
    eta: DEFAULT_ETA,
};

fn hamiltonian_build(c: &mut Criterion) {
    let qrm = QrmParams {
        omega_a: 25.0,
        omega_f: 1.0,
        lambda: 2.5,
    };
    let space = SpaceConfig::new(60);
    c.bench_function("hamiltonian_build_dim122", |b| {
        b.iter(|| build_qrm_hamiltonian(black_box(&qrm), &space).unwrap())
    });
}

fn ground_state_ed(c: &mut Criterion) {
    let qrm = QrmParams {
        omega_a: 25.0,
        omega_f: 1.0,
        lambda: 2.5,
    };
    let space = SpaceConfig::new(100);
    let h = build_qrm_hamiltonian(&qrm, &space).unwrap();
    let mut group = c.benchmark_group("spectra");
    group.sample_size(20);
    group.bench_function("ground_state_dim202", |b| {
        b.iter(|| ground_state(black_box(&h), &space).unwrap())
    });
    group.finish();
}

fn schrodinger_quench(c: &mut Criterion) {
    let ion = bench_ion();
    let schedule = bench_schedule(0.25e-3);
    let noise = NoiseModel::default();
    let space = SpaceConfig::new(40);
    let mut group = c.benchmark_group("dynamics");
    group.sample_size(30);
    group.bench_function("schrodinger_quench_250us_dim82", |b| {
        b.iter(|| {
            evolve_schrodinger(
                black_box(&ion),
                &schedule,
                &noise,
                &NL_OFF,
                &space,
                None,
            )
            .unwrap()
        })
    });
    group.finish();
}

fn lindblad_quench(c: &mut Criterion) {
    let ion = bench_ion();
    let schedule = bench_schedule(0.05e-3);
    let noise = NoiseModel::default();
    let diss = DissipatorConfig {
        tau_d: Some(5.5e-3),
        heating_rate: 50.0,
        qubit_rate: 20.0,
    };
    let space = SpaceConfig {
        fock_cutoff: 20,
        tail_tolerance: 0.5,
    };
    let mut group = c.benchmark_group("dynamics_open");
    group.sample_size(10);
    group.bench_function("lindblad_quench_50us_dim42", |b| {
        b.iter(|| {
            evolve_lindblad(
                black_box(&ion),
                &schedule,
                &noise,
                &NL_OFF,
                &diss,
                &space,
                None,
            )
            .unwrap()
        })
    });
    group.finish();
}

fn sideband_fit(c: &mut Criterion) {
    let p: Vec<f64> = {
        let raw: Vec<f64> = (0..=23)
            .map(|k| (-0.5 * ((k as f64 - 11.5) / 5.0).powi(2)).exp())
            .collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|x| x / s).collect()
    };
    let times: Vec<f64> = (1..=120).map(|i| i as f64 * 0.4e-3 / 120.0).collect();
    let noise = NoiseSpec {
        shots: 200,
        seed: 7,
        dark_error: 0.01,
        bright_error: 0.03,
    };
    let signal = synthesize_signal(&p, khz(20.0), 500.0, &times, Some(&noise)).unwrap();
    let mut group = c.benchmark_group("sideband");
    group.sample_size(20);
    group.bench_function("fit_24_levels_120_points", |b| {
        b.iter(|| {
            fit_phonon_distribution(black_box(&signal), 23, Gamma0Mode::Fixed(500.0)).unwrap()
        })
    });
    group.finish();
}

criterion_group!(
    benches,
    hamiltonian_build,
    ground_state_ed,
    schrodinger_quench,
    lindblad_quench,
    sideband_fit
);
criterion_main!(benches);
