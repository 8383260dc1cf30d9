//! Command-line driver for the ks2d Keller-Segel solver.
//!
//! Exit codes: 0 completed, 2 blow-up suspected, 3 unclassified solver
//! failure, 4 configuration error.

mod config;
mod output;

use std::process::ExitCode;

use ks2d::diagnostics::{self, ClassifyThresholds, Verdict};
use ks2d::harness::{convergence_study, InitialCondition, SimulationSetup};
use ks2d::scheme::{NewtonOptions, StepStatus};
use ks2d::Params;

use config::{parse_config, Initial, Mode, RunConfig};

const USAGE: &str = "usage: ks2d [--config FILE] [KEY=VALUE]...

Runs the positivity-preserving finite-element scheme for the 2D
parabolic-elliptic Keller-Segel system.

Options:
  --config FILE   read `key = value` settings from FILE (dotted section keys,
                  `#` comments); KEY=VALUE arguments override file values
  --help          show this message

Modes (mode = run | converge | blowup):
  run       advance to scheme.final_time, writing timeseries.csv, optional
            VTK snapshots and a summary
  converge  self-convergence rate study, writing rates.csv
  blowup    like run, but an early blow-up-suspected stop is the expected
            outcome (exit code 2)

Exit codes: 0 completed, 2 blow-up suspected, 3 solver failure, 4 bad config";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut file: Option<String> = None;
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        match arg.as_str() {
            "--help" | "-h" => {
                println!("{USAGE}");
                return ExitCode::SUCCESS;
            }
            "--config" => match it.next() {
                Some(path) => file = Some(path),
                None => {
                    eprintln!("configuration error: --config needs a file path");
                    return ExitCode::from(4);
                }
            },
            other => overrides.push(other.to_string()),
        }
    }

    let cfg = match parse_config(file.as_deref(), &overrides) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(4);
        }
    };
    for w in &cfg.warnings {
        eprintln!("warning: {w}");
    }

    match execute(&cfg) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}

fn setup_from(cfg: &RunConfig) -> SimulationSetup {
    SimulationSetup {
        x_range: cfg.x_range,
        y_range: cfg.y_range,
        nx: cfg.nx,
        ny: cfg.ny,
        params: Params {
            chi: cfg.chi,
            alpha: cfg.alpha,
            tau: cfg.tau,
        },
        initial: match cfg.initial {
            Initial::Constant { value } => InitialCondition::Constant(value),
            Initial::Gaussian { center, width, mass } => InitialCondition::Gaussian {
                center,
                width,
                mass,
            },
        },
        newton: NewtonOptions {
            tol: cfg.newton_tol,
            max_iter: cfg.newton_max_iter,
            ..NewtonOptions::default()
        },
    }
}

fn execute(cfg: &RunConfig) -> Result<u8, Box<dyn std::error::Error>> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    output::write_text(&cfg.output_dir.join("config.effective"), &cfg.render())?;
    match cfg.mode {
        Mode::Run | Mode::Blowup => simulate(cfg),
        Mode::Converge => converge(cfg),
    }
}

fn simulate(cfg: &RunConfig) -> Result<u8, Box<dyn std::error::Error>> {
    let setup = setup_from(cfg);
    let (scheme, state) = setup.build()?;
    let weight = match cfg.moment {
        Some((q, r1, r2)) => diagnostics::build_moment_weight(scheme.mesh(), q, r1, r2)?,
        None => diagnostics::default_moment_weight(scheme.mesh())?,
    };
    let steps = (cfg.final_time / cfg.tau).round().max(1.0) as usize;

    let mut csv = output::TimeseriesWriter::create(&cfg.output_dir.join("timeseries.csv"))?;
    let out = {
        let mut csv_err = None;
        let out = scheme.advance(state, steps, Some(&weight), |rec| {
            if csv_err.is_none() {
                csv_err = csv.write(rec).err();
            }
        })?;
        if let Some(e) = csv_err {
            return Err(e.into());
        }
        out
    };
    csv.finish()?;

    if cfg.snapshot_every > 0 {
        // Snapshots were not captured during the run (states are not retained);
        // re-run the simulation writing the requested states. Deterministic
        // stepping makes the replay identical.
        let (scheme2, mut st) = setup.build()?;
        let snap = |s: &ks2d::SchemeState| -> std::io::Result<()> {
            let path = cfg.output_dir.join(format!("snapshot_{:06}.vtk", s.k));
            output::write_vtk(&path, scheme2.mesh(), s)
        };
        snap(&st)?;
        for _ in 0..steps {
            let step = scheme2.nonlinear_step(&st);
            if step.status != StepStatus::Ok {
                break;
            }
            st = step.state;
            if st.k % cfg.snapshot_every == 0 || st.k == steps {
                snap(&st)?;
            }
        }
    }

    let thresholds = ClassifyThresholds {
        growth_factor: cfg.blowup_growth_factor,
        moment_window: cfg.blowup_moment_window,
    };
    let verdict = diagnostics::classify_run(&out.history, out.status, &thresholds);

    let mass0 = out.history[0].mass;
    let mass_drift = out
        .history
        .iter()
        .map(|r| (r.mass - mass0).abs() / mass0)
        .fold(0.0, f64::max);
    let min_u = out
        .history
        .iter()
        .map(|r| r.u_min)
        .fold(f64::INFINITY, f64::min);
    let energy_violation = out
        .history
        .windows(2)
        .map(|p| p[1].energy - p[0].energy - 1e-10 * (1.0 + p[0].energy.abs()))
        .fold(f64::NEG_INFINITY, f64::max);

    let mut summary = String::new();
    summary.push_str(&format!(
        "mode: {}\n",
        if cfg.mode == Mode::Blowup { "blowup" } else { "run" }
    ));
    summary.push_str(&format!(
        "verdict: {}\n",
        match verdict {
            Verdict::Completed =>
                if out.status == StepStatus::Ok {
                    "completed"
                } else {
                    "solver_failure"
                },
            Verdict::BlowupSuspected => "blowup_suspected",
        }
    ));
    let accepted = out.history.len() - 1;
    summary.push_str(&format!("steps_accepted: {accepted} of {steps}\n"));
    if out.status == StepStatus::NewtonFailed {
        if let Some(k) = out.failed_step {
            summary.push_str(&format!("failed_step: {k}\n"));
        }
        if let Some(last) = out.history.last() {
            summary.push_str(&format!("t_max: {:.16e}\n", last.t));
        }
    }
    summary.push_str(&format!("mass_drift_relative: {mass_drift:.16e} (bound 1e-10)\n"));
    summary.push_str(&format!("min_u: {min_u:.16e} (must stay positive)\n"));
    summary.push_str(&format!(
        "max_energy_increase_beyond_slack: {energy_violation:.16e} (must be <= 0)\n"
    ));
    summary.push_str(&format!(
        "invariants: mass {} | positivity {} | energy_decay {}\n",
        if mass_drift <= 1e-10 { "ok" } else { "VIOLATED" },
        if min_u > 0.0 { "ok" } else { "VIOLATED" },
        if energy_violation <= 0.0 { "ok" } else { "VIOLATED" },
    ));
    output::write_text(&cfg.output_dir.join("summary"), &summary)?;

    Ok(match (out.status, verdict) {
        (StepStatus::Ok, _) => 0,
        (StepStatus::NewtonFailed, Verdict::BlowupSuspected) => 2,
        (StepStatus::NewtonFailed, Verdict::Completed) => 3,
    })
}

fn converge(cfg: &RunConfig) -> Result<u8, Box<dyn std::error::Error>> {
    let setup = setup_from(cfg);
    let table = convergence_study(
        &setup,
        cfg.converge_levels,
        cfg.converge_coupling,
        cfg.final_time,
    )?;
    output::write_rates(&cfg.output_dir.join("rates.csv"), &table)?;

    let mut summary = String::from("mode: converge\nverdict: completed\n");
    summary.push_str(&format!(
        "levels: {} (plus one reference refinement)\n",
        cfg.converge_levels
    ));
    for row in &table.rows {
        summary.push_str(&format!(
            "level {}: h {:.6e} tau {:.6e} err_u {:.6e} err_v {:.6e}\n",
            row.level, row.h, row.tau, row.err_u_l2h, row.err_v_h1
        ));
    }
    output::write_text(&cfg.output_dir.join("summary"), &summary)?;
    Ok(0)
}
