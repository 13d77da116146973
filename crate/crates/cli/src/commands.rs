//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use rabiqpt_core::analysis::{
    ground_state_n_bar_at_critical, log_log_slope, ratio_error_budget,
    ratio_error_trap_linearized, scaling_transform, spin_scaling_slope, ScalingPoint,
};
use rabiqpt_core::dynamics::{evolve_lindblad, evolve_schrodinger, TrajectorySample};
use rabiqpt_core::hilbert::SpaceConfig;
use rabiqpt_core::model::{build_qrm_hamiltonian, khz, to_khz, IonParams, QrmParams};
use rabiqpt_core::sideband::{
    fit_phonon_distribution, select_kmax, synthesize_signal, Gamma0Mode, NoiseSpec,
    SidebandSignal,
};
use rabiqpt_core::spectra::{ground_state, recommended_cutoff};

use crate::config::{RunConfig, ScalingWhich, SidebandMode};
use crate::Failure;

/// 9 significant digits, the workspace CSV convention.
fn sig9(x: f64) -> String {
    format!("{:.8e}", x)
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {}", path.display(), e)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::Io(format!("serialize: {}", e)))?;
    text.push('\n');
    write_text(path, &text)
}

fn out_path(out_dir: &Path, cfg: &RunConfig, default_name: &str) -> PathBuf {
    out_dir.join(cfg.output.as_deref().unwrap_or(default_name))
}

fn trajectory_csv(samples: &[TrajectorySample]) -> String {
    let mut s = String::from("t_us, omega_sb_khz, g, p_up, n_bar, n_f, parity, norm\n");
    for r in samples {
        s.push_str(&format!(
            "{}, {}, {}, {}, {}, {}, {}, {}\n",
            sig9(r.t * 1e6),
            sig9(to_khz(r.omega_sb)),
            sig9(r.g),
            sig9(r.p_up),
            sig9(r.n_bar),
            sig9(r.n_f),
            sig9(r.parity_exp),
            sig9(r.norm_or_trace),
        ));
    }
    s
}

pub fn cmd_quench(cfg: &RunConfig, out_dir: &Path) -> Result<(), Failure> {
    let ion = cfg.ion()?;
    let schedule = cfg.schedule()?;
    let noise = cfg.noise();
    let nl = cfg.nonlinear();
    let space = cfg.space();

    let samples = match cfg.dissipator() {
        Some(diss) => {
            log::info!("open-system quench, dim {}", space.dim());
            evolve_lindblad(&ion, &schedule, &noise, &nl, &diss, &space, None)?
        }
        None => {
            log::info!("closed-system quench, dim {}", space.dim());
            evolve_schrodinger(&ion, &schedule, &noise, &nl, &space, None)?
        }
    };
    let path = out_path(out_dir, cfg, "quench.csv");
    write_text(&path, &trajectory_csv(&samples))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn signal_csv(signal: &SidebandSignal) -> String {
    let mut s = String::from("t_us, p_up, shots, omega_probe_khz\n");
    for (t, y) in signal.times.iter().zip(&signal.p_up) {
        s.push_str(&format!(
            "{}, {}, {}, {}\n",
            sig9(t * 1e6),
            sig9(*y),
            signal.shots_per_point,
            sig9(to_khz(signal.omega_sb_probe)),
        ));
    }
    s
}

fn parse_signal_csv(path: &Path) -> Result<SidebandSignal, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {}", path.display(), e)))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Failure::Io(format!("{}: empty signal CSV", path.display())))?;
    if !header.starts_with("t_us") {
        return Err(Failure::Io(format!(
            "{}: expected a `t_us, p_up, shots, omega_probe_khz` header",
            path.display()
        )));
    }
    let mut times = Vec::new();
    let mut p_up = Vec::new();
    let mut shots = 0u64;
    let mut omega = 0.0;
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 4 {
            return Err(Failure::Io(format!(
                "{}: line {}: expected 4 columns, got {}",
                path.display(),
                i + 2,
                cols.len()
            )));
        }
        let bad = |what: &str| {
            Failure::Io(format!("{}: line {}: bad {}", path.display(), i + 2, what))
        };
        times.push(cols[0].parse::<f64>().map_err(|_| bad("t_us"))? * 1e-6);
        p_up.push(cols[1].parse::<f64>().map_err(|_| bad("p_up"))?);
        shots = cols[2].parse::<u64>().map_err(|_| bad("shots"))?;
        omega = khz(cols[3].parse::<f64>().map_err(|_| bad("omega_probe_khz"))?);
    }
    Ok(SidebandSignal {
        times,
        p_up,
        shots_per_point: shots,
        omega_sb_probe: omega,
    })
}

pub fn cmd_sideband(cfg: &RunConfig, out_dir: &Path, seed: u64) -> Result<(), Failure> {
    let sec = cfg
        .sideband
        .as_ref()
        .ok_or_else(|| Failure::Config("config: missing `sideband` section".into()))?;
    let gamma0_mode = if sec.fit_gamma0 {
        Gamma0Mode::Fitted
    } else {
        Gamma0Mode::Fixed(sec.gamma0_per_s)
    };

    match sec.mode {
        SidebandMode::Synth => {
            let p = sec.occupations.as_deref().ok_or_else(|| {
                Failure::Config("config: sideband synth needs `occupations`".into())
            })?;
            let grid = sec.times_ms.as_ref().ok_or_else(|| {
                Failure::Config("config: sideband synth needs `times_ms`".into())
            })?;
            let noise = (sec.shots > 0).then(|| NoiseSpec {
                shots: sec.shots,
                seed,
                dark_error: sec.dark_error,
                bright_error: sec.bright_error,
            });
            let signal = synthesize_signal(
                p,
                khz(sec.omega_probe_khz),
                sec.gamma0_per_s,
                &grid.seconds(),
                noise.as_ref(),
            )?;
            let path = out_path(out_dir, cfg, "signal.csv");
            write_text(&path, &signal_csv(&signal))?;
            log::info!("wrote {}", path.display());
        }
        SidebandMode::Fit => {
            let input = sec.input.as_deref().ok_or_else(|| {
                Failure::Config("config: sideband fit needs `input`".into())
            })?;
            let k_max = sec.k_max.ok_or_else(|| {
                Failure::Config("config: sideband fit needs `k_max`".into())
            })?;
            let signal = parse_signal_csv(&out_dir.join(input))?;
            let fit = fit_phonon_distribution(&signal, k_max, gamma0_mode)?;
            write_json(&out_path(out_dir, cfg, "fit.json"), &fit)?;
        }
        SidebandMode::Select => {
            let input = sec.input.as_deref().ok_or_else(|| {
                Failure::Config("config: sideband select needs `input`".into())
            })?;
            let [lo, hi] = sec.k_range.ok_or_else(|| {
                Failure::Config("config: sideband select needs `k_range`".into())
            })?;
            let signal = parse_signal_csv(&out_dir.join(input))?;
            let sel = select_kmax(&signal, lo..=hi, sec.threshold, gamma0_mode)?;
            write_json(&out_path(out_dir, cfg, "select.json"), &sel)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SlopeReport {
    which: String,
    slope: f64,
    points: usize,
}

fn spin_points(
    ratio: f64,
    g_values: &[f64],
    cutoff: usize,
) -> Result<Vec<ScalingPoint>, Failure> {
    let space = SpaceConfig::new(cutoff);
    g_values
        .par_iter()
        .map(|&g| {
            let qrm = QrmParams {
                omega_a: ratio,
                omega_f: 1.0,
                lambda: 0.5 * g * ratio.sqrt(),
            };
            let h = build_qrm_hamiltonian(&qrm, &space)?;
            let gs = ground_state(&h, &space)?;
            scaling_transform(g, gs.p_up, ratio)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(Failure::from)
}

/// Default spin-branch grid: couplings approaching the critical point from
/// below, geometric in |g - 1|.
fn default_spin_grid() -> Vec<f64> {
    let (lo, hi, n) = (2.2e-3_f64, 0.045_f64, 18);
    (0..n)
        .map(|i| {
            let f = i as f64 / (n - 1) as f64;
            1.0 - lo * (hi / lo).powf(1.0 - f)
        })
        .collect()
}

pub fn cmd_scaling(cfg: &RunConfig, out_dir: &Path) -> Result<(), Failure> {
    let sec = cfg
        .scaling
        .as_ref()
        .ok_or_else(|| Failure::Config("config: missing `scaling` section".into()))?;
    match sec.which {
        ScalingWhich::Spin => {
            let grid = match &sec.g_values {
                Some(v) if v.is_empty() => {
                    return Err(Failure::Config("config: empty `g_values`".into()))
                }
                Some(v) => v.clone(),
                None => default_spin_grid(),
            };
            let points = spin_points(sec.ratio, &grid, sec.fock_cutoff)?;
            let slope = spin_scaling_slope(&points, (sec.window[0], sec.window[1]))?;

            let mut csv = String::from("g, p_up, g_scaled, s_s\n");
            for p in &points {
                csv.push_str(&format!(
                    "{}, {}, {}, {}\n",
                    sig9(p.g),
                    sig9(p.p_up),
                    sig9(p.g_scaled),
                    sig9(p.s_s)
                ));
            }
            let path = out_path(out_dir, cfg, "scaling_spin.csv");
            write_text(&path, &csv)?;
            write_json(
                &path.with_extension("slope.json"),
                &SlopeReport {
                    which: "spin".into(),
                    slope,
                    points: points.len(),
                },
            )?;
            log::info!("spin scaling slope {:.4}", slope);
        }
        ScalingWhich::Phonon => {
            let grid = sec
                .r_grid
                .clone()
                .ok_or_else(|| Failure::Config("config: phonon scaling needs `r_grid`".into()))?;
            if grid.is_empty() {
                return Err(Failure::Config("config: empty `r_grid`".into()));
            }
            let space = cfg.space();
            let n_bars = grid
                .par_iter()
                .map(|&r| ground_state_n_bar_at_critical(r, &space))
                .collect::<Result<Vec<_>, _>>()
                .map_err(Failure::from)?;
            let slope = log_log_slope(&grid, &n_bars)?;

            let mut csv = String::from("ratio, n_bar, log_ratio, log_n_bar\n");
            for (r, nb) in grid.iter().zip(&n_bars) {
                csv.push_str(&format!(
                    "{}, {}, {}, {}\n",
                    sig9(*r),
                    sig9(*nb),
                    sig9(r.ln()),
                    sig9(nb.ln())
                ));
            }
            let path = out_path(out_dir, cfg, "scaling_phonon.csv");
            write_text(&path, &csv)?;
            write_json(
                &path.with_extension("slope.json"),
                &SlopeReport {
                    which: "phonon".into(),
                    slope,
                    points: grid.len(),
                },
            )?;
            log::info!("phonon scaling slope {:.4}", slope);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct BudgetRow {
    delta_b_khz: f64,
    delta_r_khz: f64,
    ratio: f64,
    delta_r_common: f64,
    delta_r_trap: f64,
    delta_r_trap_linearized: f64,
}

pub fn cmd_error_budget(cfg: &RunConfig, out_dir: &Path) -> Result<(), Failure> {
    let sec = cfg
        .error_budget
        .as_ref()
        .ok_or_else(|| Failure::Config("config: missing `error_budget` section".into()))?;
    if sec.pairs.is_empty() {
        return Err(Failure::Config("config: `pairs` must not be empty".into()));
    }
    let sigma = khz(sec.sigma_common_khz);
    let eps = khz(sec.eps_trap_khz);
    let mut rows = Vec::with_capacity(sec.pairs.len());
    for pair in &sec.pairs {
        let ion = IonParams {
            delta_b: khz(pair.delta_b_khz),
            delta_r: khz(pair.delta_r_khz),
            omega_sb: 0.0,
            eta: rabiqpt_core::model::DEFAULT_ETA,
        };
        ion.validate()?;
        let budget = ratio_error_budget(&ion, sigma, eps)?;
        rows.push(BudgetRow {
            delta_b_khz: pair.delta_b_khz,
            delta_r_khz: pair.delta_r_khz,
            ratio: (ion.delta_b + ion.delta_r) / (ion.delta_b - ion.delta_r),
            delta_r_common: budget.delta_r_common,
            delta_r_trap: budget.delta_r_trap,
            delta_r_trap_linearized: ratio_error_trap_linearized(&ion, eps),
        });
    }
    write_json(&out_path(out_dir, cfg, "error_budget.json"), &rows)
}

pub fn cmd_ground_state(cfg: &RunConfig, out_dir: &Path) -> Result<(), Failure> {
    let sec = cfg
        .ground_state
        .as_ref()
        .ok_or_else(|| Failure::Config("config: missing `ground_state` section".into()))?;
    if sec.g_values.is_empty() {
        return Err(Failure::Config("config: empty `g_values`".into()));
    }
    if !(sec.ratio > 0.0 && sec.omega_f_khz > 0.0) {
        return Err(Failure::Config(
            "config: ratio and omega_f_khz must be positive".into(),
        ));
    }
    let omega_f = khz(sec.omega_f_khz);
    let rows = sec
        .g_values
        .par_iter()
        .map(|&g| {
            let cutoff = sec
                .fock_cutoff
                .unwrap_or_else(|| recommended_cutoff(sec.ratio, g.max(0.1)));
            let space = SpaceConfig::new(cutoff);
            let qrm = QrmParams {
                omega_a: sec.ratio * omega_f,
                omega_f,
                lambda: 0.5 * g * (sec.ratio * omega_f * omega_f).sqrt(),
            };
            let h = build_qrm_hamiltonian(&qrm, &space)?;
            let gs = ground_state(&h, &space)?;
            Ok::<_, rabiqpt_core::Error>((g, gs))
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(Failure::from)?;

    let mut csv = String::from("g, gap_khz, n_bar, n_f, p_up\n");
    for (g, gs) in &rows {
        csv.push_str(&format!(
            "{}, {}, {}, {}, {}\n",
            sig9(*g),
            sig9(to_khz(gs.gap)),
            sig9(gs.n_bar),
            sig9(gs.n_f),
            sig9(gs.p_up)
        ));
    }
    let path = out_path(out_dir, cfg, "ground_state.csv");
    write_text(&path, &csv)?;
    log::info!("wrote {}", path.display());
    Ok(())
}
