//! The run modes and their output files.
//!
//! Every mode writes `config.echo` first. Paths are processed in parallel
//! and collected in path order, so reruns produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::{Mode, Setup};
use crate::error::{Error, Result};
use crate::fixedpoint::{constant_in_time, picard};
use crate::glue::{escalate_and_glue, exceedance_nonincreasing, exceedance_prob};
use crate::linearized::{solve_coupled, Stepper, SystemState, Trajectory};
use crate::monitors::{energy_report, residual_defn, EnergyReport};
use crate::noise::NoisePath;
use crate::spectral::snapshot::write_snapshot;
use crate::verify::run_suite;

/// Result of a run that got past configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Passed,
    CheckFailed,
    BlowUp,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Passed => 0,
            Outcome::CheckFailed => 1,
            Outcome::BlowUp => 3,
        }
    }
}

/// Process exit code for an error that aborted the run.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        e if e.is_blow_up() => 3,
        _ => 1,
    }
}

#[derive(Debug, Clone, Serialize)]
struct Failure {
    path_id: Option<u64>,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn from_error(path_id: u64, e: &Error) -> Self {
        let kind = if e.is_blow_up() { "blow_up" } else { "error" };
        Self { path_id: Some(path_id), kind, message: e.to_string() }
    }
}

/// Run `mode` and write its outputs into `out`.
pub fn execute(setup: &Setup, mode: Mode, out: &Path) -> Result<Outcome> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.echo"), setup.config.to_toml())?;
    let (outcome, failures) = match mode {
        Mode::Simulate => simulate(setup, out)?,
        Mode::Fixpoint => fixpoint(setup, out)?,
        Mode::Glue => glue(setup, out)?,
        Mode::Verify => verify(setup, out)?,
    };
    if outcome != Outcome::Passed {
        fs::write(out.join("failures.json"), serde_json::to_string_pretty(&failures)?)?;
    }
    Ok(outcome)
}

fn path_ids(setup: &Setup) -> Vec<u64> {
    (0..setup.config.paths as u64).collect()
}

fn outcome_of(failures: &[Failure]) -> Outcome {
    if failures.iter().any(|f| f.kind == "blow_up") {
        Outcome::BlowUp
    } else if failures.is_empty() {
        Outcome::Passed
    } else {
        Outcome::CheckFailed
    }
}

/// Monitored grid indices: the start and eight evenly spaced checkpoints.
pub fn checkpoints(steps: usize) -> Vec<usize> {
    let mut out = vec![0];
    for m in 1..=8 {
        let i = (m * steps).div_ceil(8);
        if out.last() != Some(&i) {
            out.push(i);
        }
    }
    out
}

fn simulate(setup: &Setup, out: &Path) -> Result<(Outcome, Vec<Failure>)> {
    let st = Stepper::new(&setup.basis, &setup.params)?;
    let init = SystemState::default_initial(&setup.basis);
    let p = &setup.params;
    let kappa = setup.config.kappa;
    let runs: Vec<(u64, Result<(Trajectory, EnergyReport)>)> = path_ids(setup)
        .into_par_iter()
        .map(|id| {
            let r = (|| {
                let w = NoisePath::sample(&setup.noise, p.steps, p.dt, id)?;
                let traj = solve_coupled(&st, &init, &w, kappa, false)?;
                let report = energy_report(&traj, p.q)?;
                Ok((traj, report))
            })();
            (id, r)
        })
        .collect();

    let mut energy = String::from("path_id,kappa,sup_u2,int_uV,sup_c2,int_cH1,sup_nHm1,int_nq,mass_drift\n");
    let mut rows: Vec<(usize, u64, String)> = Vec::new();
    let mut failures = Vec::new();
    let snaps = out.join("snapshots");
    fs::create_dir_all(&snaps)?;
    let marks = checkpoints(p.steps);
    for (id, r) in runs {
        let (traj, rep) = match r {
            Ok(x) => x,
            Err(e) if e.is_blow_up() => {
                failures.push(Failure::from_error(id, &e));
                continue;
            }
            Err(e) => return Err(e),
        };
        writeln!(
            energy,
            "{id},{kappa},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            rep.sup_u2,
            rep.int_u_v,
            rep.sup_c2,
            rep.int_c_h1,
            rep.sup_n_hm1,
            rep.int_nq,
            rep.mass_drift()
        )
        .expect("string write");
        for &i in &marks {
            let s = &traj.states[i];
            rows.push((
                i,
                id,
                format!(
                    "{i},{:.6},{id},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                    traj.time(i),
                    s.u.l2_norm(),
                    s.c.l2_norm(),
                    s.n.sobolev_norm(-1.0),
                    s.n.integral(),
                    traj.sup_u[i]
                ),
            ));
        }
        let last = traj.last();
        for (name, field) in [("n", &last.n), ("c", &last.c), ("ux", &last.u.x), ("uy", &last.u.y)] {
            fs::write(snaps.join(format!("path{id}_{name}.txt")), write_snapshot(field))?;
        }
    }
    rows.sort_by_key(|r| (r.0, r.1));
    let mut monitors = String::from("step,time,path_id,u_l2,c_l2,n_hm1,mass_n,sup_u\n");
    for (_, _, line) in rows {
        monitors.push_str(&line);
        monitors.push('\n');
    }
    fs::write(out.join("energy.csv"), energy)?;
    fs::write(out.join("monitors.csv"), monitors)?;
    fs::write(out.join("plot.gp"), PLOT_SCRIPT)?;
    Ok((outcome_of(&failures), failures))
}

const PLOT_SCRIPT: &str = "\
set datafile separator ','
set key autotitle columnhead
set xlabel 't'
set multiplot layout 2,2
set title '|u|_{L2}'
plot 'monitors.csv' using 2:4:3 with points palette notitle
set title '|c|_{L2}'
plot 'monitors.csv' using 2:5:3 with points palette notitle
set title '|n|_{H-1}'
plot 'monitors.csv' using 2:6:3 with points palette notitle
set title 'mass of n'
plot 'monitors.csv' using 2:7:3 with points palette notitle
unset multiplot
";

fn fixpoint(setup: &Setup, out: &Path) -> Result<(Outcome, Vec<Failure>)> {
    let st = Stepper::new(&setup.basis, &setup.params)?;
    let init = SystemState::default_initial(&setup.basis);
    let p = &setup.params;
    let cfg = &setup.fixpoint;
    let start = constant_in_time(&init.n, p.steps);
    let runs: Vec<(u64, Result<Value>, Vec<String>)> = path_ids(setup)
        .into_par_iter()
        .map(|id| {
            let mut lines = Vec::new();
            let r = (|| {
                let w = NoisePath::sample(&setup.noise, p.steps, p.dt, id)?;
                let outcome = picard(start.clone(), &st, &init, &w, cfg)?;
                for h in &outcome.history {
                    lines.push(format!("{id},{},{:.12e},{:.12e}", h.iter, h.residual, h.x_norm));
                }
                let identity = residual_defn(&outcome.trajectory, None, &w, &st)?;
                let worst = identity.iter().map(|r| r.n.max(r.c).max(r.u)).fold(0.0, f64::max);
                Ok(json!({
                    "path_id": id,
                    "converged": outcome.converged,
                    "iterations": outcome.history.len(),
                    "final_residual": outcome.history.last().map(|h| h.residual),
                    "x_norm": outcome.history.last().map(|h| h.x_norm),
                    "identity_residual": worst,
                }))
            })();
            (id, r, lines)
        })
        .collect();
    let mut csv = String::from("path_id,iter,residual,x_norm\n");
    let mut paths = Vec::new();
    let mut failures = Vec::new();
    for (id, r, lines) in runs {
        for l in lines {
            csv.push_str(&l);
            csv.push('\n');
        }
        match r {
            Ok(v) => {
                if v["converged"] != json!(true) {
                    failures.push(Failure {
                        path_id: Some(id),
                        kind: "not_converged",
                        message: format!("no convergence to {} within {} iterations", cfg.tol, cfg.max_iter),
                    });
                }
                paths.push(v);
            }
            Err(e) if e.is_blow_up() => failures.push(Failure::from_error(id, &e)),
            Err(e) => return Err(e),
        }
    }
    let converged = paths.iter().filter(|v| v["converged"] == json!(true)).count();
    let summary = json!({
        "tol": cfg.tol,
        "max_iter": cfg.max_iter,
        "kappa": cfg.kappa,
        "m_star": cfg.m_star,
        "s_star": cfg.s_star,
        "haar_level": cfg.level,
        "converged": converged,
        "paths": paths,
    });
    fs::write(out.join("residuals.csv"), csv)?;
    fs::write(out.join("fixpoint.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok((outcome_of(&failures), failures))
}

fn glue(setup: &Setup, out: &Path) -> Result<(Outcome, Vec<Failure>)> {
    let st = Stepper::new(&setup.basis, &setup.params)?;
    let init = SystemState::default_initial(&setup.basis);
    let options = setup.config.glue_options()?;
    let kappa = setup.config.kappa;
    let runs: Vec<Result<_>> = path_ids(setup)
        .into_par_iter()
        .map(|id| escalate_and_glue(&init, kappa, std::slice::from_ref(&st), &setup.noise, id, &options))
        .collect();
    let mut failures = Vec::new();
    let mut summaries = Vec::new();
    for (id, r) in path_ids(setup).into_iter().zip(runs) {
        let run = r?;
        if !run.complete {
            let reason = run
                .segments
                .iter()
                .find_map(|s| s.failure.clone())
                .unwrap_or_else(|| format!("segment limit {} reached", options.max_segments));
            let kind = if run.segments.iter().any(|s| s.failure.is_some()) { "blow_up" } else { "incomplete" };
            failures.push(Failure { path_id: Some(id), kind, message: reason });
        }
        summaries.push(json!({
            "path_id": id,
            "max_boundary_jump": run.max_boundary_jump(),
            "cutoff_inactive": run.cutoff_inactive(),
            "summary": run.summary(),
        }));
    }
    let exceedance = if setup.config.paths >= 16 {
        let rows = exceedance_prob(&st, &init, &setup.noise, &setup.config.kappas, setup.config.paths)?;
        let products: Vec<f64> = rows.iter().map(|r| r.probability * r.kappa.powi(2)).collect();
        json!({
            "rows": rows,
            "nonincreasing": exceedance_nonincreasing(&rows),
            "p_times_kappa_squared": products,
        })
    } else {
        json!({ "skipped": "exceedance estimates need at least 16 paths" })
    };
    let doc = json!({
        "kappa0": kappa,
        "escalation": setup.config.escalation,
        "runs": summaries,
        "exceedance": exceedance,
    });
    fs::write(out.join("glue.json"), serde_json::to_string_pretty(&doc)?)?;
    Ok((outcome_of(&failures), failures))
}

fn verify(setup: &Setup, out: &Path) -> Result<(Outcome, Vec<Failure>)> {
    let report = run_suite(setup, |c| log::info!("{}", c.summary_line()))?;
    for c in &report.criteria {
        println!("{}", c.summary_line());
    }
    fs::write(out.join("verify.json"), serde_json::to_string_pretty(&report)?)?;
    let failures: Vec<Failure> = report
        .criteria
        .iter()
        .filter(|c| !c.passed)
        .map(|c| Failure { path_id: None, kind: "criterion", message: c.summary_line() })
        .collect();
    Ok((outcome_of(&failures), failures))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoints_cover_the_horizon() {
        assert_eq!(checkpoints(500), vec![0, 63, 125, 188, 250, 313, 375, 438, 500]);
        assert_eq!(checkpoints(4), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(Outcome::BlowUp.code(), 3);
        assert_eq!(Outcome::CheckFailed.code(), 1);
    }
}
