use std::path::PathBuf;

use log::info;
use nalgebra::DVector;
use nhhj::geometry::bracket_generating_rank;
use nhhj::hj::{theorem_equivalence_check, verify};
use nhhj::integrate::{integrate_phase, Termination, Trajectory};
use nhhj::mechanics::PhaseState;
use serde::Serialize;

use crate::config::Resolved;
use crate::output::{self, CsvWriter};
use crate::CliError;

/// Where the data product goes and where the human-readable summary goes.
struct Sinks {
    data: Option<PathBuf>,
}

impl Sinks {
    fn new(cli_output: Option<PathBuf>, run: &Resolved) -> Self {
        Self { data: cli_output.or_else(|| run.config.output.clone()) }
    }

    fn summary(&self, line: &str) {
        // Keep standard output clean when it carries the data.
        if self.data.is_some() {
            println!("{line}");
        } else {
            eprintln!("{line}");
        }
    }
}

fn termination_name(t: Termination) -> &'static str {
    match t {
        Termination::Completed => "completed",
        Termination::DomainExit => "domain_exit",
        Termination::StepLimit => "step_limit",
    }
}

fn phase_header(coords: &[String], monitors: &[String], prefix: &str) -> Vec<String> {
    coords
        .iter()
        .map(|c| format!("{prefix}{c}"))
        .chain(coords.iter().map(|c| format!("{prefix}p_{c}")))
        .chain(monitors.iter().map(|m| format!("{prefix}{m}")))
        .collect()
}

fn phase_row(tr: &Trajectory, i: usize, out: &mut Vec<f64>) {
    out.extend(tr.q[i].iter());
    if let Some(p) = &tr.p {
        out.extend(p[i].iter());
    }
    out.extend(tr.monitors.iter().map(|m| m.values[i]));
}

fn fmt_vec(v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.10e}")).collect();
    format!("[{}]", parts.join(", "))
}

pub fn simulate(run: Resolved, output: Option<PathBuf>) -> Result<(), CliError> {
    let sinks = Sinks::new(output, &run);
    let sys = &run.system;
    let z = &run.initial;
    let p = sys.project_onto_m(&z.q, &z.p).map_err(|e| CliError::Failed(e.to_string()))?;
    let shift = (&p - &z.p).amax();
    if shift > 0.0 {
        info!("initial momentum projected onto the constrained momentum space (shift {shift:e})");
    }
    let z0 = PhaseState::new(z.q.clone(), p, z.t);
    let tr = integrate_phase(sys, &z0, run.config.t_span[1], &run.config.integrator, &run.config.differentiation)
        .map_err(|e| CliError::Failed(e.to_string()))?;

    let names: Vec<String> = tr.monitors.iter().map(|m| m.name.clone()).collect();
    let mut header = vec!["t".to_string()];
    header.extend(phase_header(&tr.coords, &names, ""));
    let mut csv = CsvWriter::new(output::open(sinks.data.as_deref())?, &header)?;
    let mut row = Vec::with_capacity(header.len());
    for i in 0..tr.len() {
        row.clear();
        row.push(tr.times[i]);
        phase_row(&tr, i, &mut row);
        csv.row(&row)?;
    }
    csv.finish()?;

    let last = tr.phase_state(tr.len() - 1).expect("phase trajectory");
    sinks.summary(&format!("system: {}", run.label));
    sinks.summary(&format!("termination: {}", termination_name(tr.termination)));
    sinks.summary(&format!("final t: {:.10e}", last.t));
    sinks.summary(&format!("final q: {}", fmt_vec(&last.q)));
    sinks.summary(&format!("final p: {}", fmt_vec(&last.p)));
    sinks.summary(&format!("max energy drift: {:.3e}", tr.energy_drift().unwrap_or(0.0)));
    sinks.summary(&format!("max constraint residual: {:.3e}", tr.max_constraint_residual()));
    match tr.termination {
        Termination::Completed => Ok(()),
        t => Err(CliError::Failed(format!("integration stopped early ({}) at t = {}", termination_name(t), last.t))),
    }
}

fn sample_points(run: &Resolved) -> Result<Vec<DVector<f64>>, CliError> {
    if run.config.samples == 0 {
        return Err(CliError::Invalid("samples must be at least 1".into()));
    }
    Ok(run.domain_box.sample(run.config.samples, run.config.seed))
}

fn max_depth(run: &Resolved) -> usize {
    run.config.max_depth.unwrap_or(run.system.dim())
}

pub fn verify_hj(run: Resolved, output: Option<PathBuf>) -> Result<(), CliError> {
    let sinks = Sinks::new(output, &run);
    let points = sample_points(&run)?;
    let report = verify(
        &run.label,
        &run.system,
        &run.gamma,
        &points,
        &run.config.tolerances,
        max_depth(&run),
        &run.config.differentiation,
    )
    .map_err(|e| CliError::Failed(e.to_string()))?;
    output::write_json(output::open(sinks.data.as_deref())?, &report)?;

    let verdict = |ok: bool| if ok { "pass" } else { "fail" };
    sinks.summary(&format!("system: {} ({})", run.label, report.scope));
    sinks.summary(&format!("membership: {} ({:.3e})", verdict(report.membership.passed), report.m_residual_max));
    sinks.summary(&format!("dgamma on D: {} ({:.3e})", verdict(report.dgamma.passed), report.dgamma_residual_max));
    sinks.summary(&format!("H o gamma = E: {} (E = {:.10e}, spread {:.3e})", verdict(report.hj_equation.passed), report.energy_estimate, report.energy_spread));
    if report.membership.passed && report.dgamma.passed && report.hj_equation.passed {
        Ok(())
    } else {
        Err(CliError::Failed("candidate one-form fails at least one condition".into()))
    }
}

#[derive(Debug, Serialize)]
struct PointStructure {
    q: Vec<f64>,
    bracket_rank: usize,
    bracket_depth: usize,
    regularity_min_eig: f64,
}

#[derive(Debug, Serialize)]
struct StructureReport {
    system: String,
    dimension: usize,
    num_constraints: usize,
    sample_count: usize,
    seed: u64,
    max_depth: usize,
    rank_tol: f64,
    regularity_margin: f64,
    min_bracket_rank: usize,
    min_regularity_eig: f64,
    bracket_generating: bool,
    regular: bool,
    points: Vec<PointStructure>,
    scope: String,
}

pub fn check_structure(run: Resolved, output: Option<PathBuf>) -> Result<(), CliError> {
    let sinks = Sinks::new(output, &run);
    let points = sample_points(&run)?;
    let tol = &run.config.tolerances;
    let depth = max_depth(&run);
    let mut rows = Vec::with_capacity(points.len());
    for q in &points {
        let r = bracket_generating_rank(&run.system.dist, q, depth, tol.rank_tol, &run.config.differentiation)
            .map_err(|e| CliError::Failed(e.to_string()))?;
        let eig = run.system.regularity_min_eigenvalue(q).map_err(|e| CliError::Failed(e.to_string()))?;
        rows.push(PointStructure { q: q.iter().copied().collect(), bracket_rank: r.rank, bracket_depth: r.depth, regularity_min_eig: eig });
    }
    let n = run.system.dim();
    let min_rank = rows.iter().map(|r| r.bracket_rank).min().unwrap_or(n);
    let min_eig = rows.iter().map(|r| r.regularity_min_eig).fold(f64::INFINITY, f64::min);
    let report = StructureReport {
        system: run.label.clone(),
        dimension: n,
        num_constraints: run.system.num_constraints(),
        sample_count: rows.len(),
        seed: run.config.seed,
        max_depth: depth,
        rank_tol: tol.rank_tol,
        regularity_margin: tol.regularity_margin,
        min_bracket_rank: min_rank,
        min_regularity_eig: min_eig,
        bracket_generating: min_rank == n,
        regular: min_eig > 0.0 && min_eig >= tol.regularity_margin,
        points: rows,
        scope: format!("verified at {} samples", points.len()),
    };
    output::write_json(output::open(sinks.data.as_deref())?, &report)?;
    sinks.summary(&format!("system: {} ({})", report.system, report.scope));
    sinks.summary(&format!("bracket rank: min {min_rank} of {n} (max depth {depth})"));
    sinks.summary(&format!("regularity: min eigenvalue {min_eig:.3e}"));
    if report.bracket_generating && report.regular {
        Ok(())
    } else {
        Err(CliError::Failed("distribution is not bracket generating or not regular at some sample".into()))
    }
}

pub fn compare(run: Resolved, output: Option<PathBuf>) -> Result<(), CliError> {
    let sinks = Sinks::new(output, &run);
    let t_span = (run.config.t_span[0], run.config.t_span[1]);
    let out = theorem_equivalence_check(
        &run.system,
        &run.gamma,
        &run.initial.q,
        t_span,
        &run.config.integrator,
        &run.config.differentiation,
    )
    .map_err(|e| CliError::Failed(e.to_string()))?;

    let names: Vec<String> = out.full.monitors.iter().map(|m| m.name.clone()).collect();
    let mut header = vec!["t".to_string()];
    header.extend(phase_header(&out.lifted.coords, &names, "reduced_"));
    header.extend(phase_header(&out.full.coords, &names, "full_"));
    header.push("gap".into());
    let mut csv = CsvWriter::new(output::open(sinks.data.as_deref())?, &header)?;
    let mut row = Vec::with_capacity(header.len());
    for i in 0..out.gap.len() {
        row.clear();
        row.push(out.lifted.times[i]);
        phase_row(&out.lifted, i, &mut row);
        phase_row(&out.full, i, &mut row);
        row.push(out.gap[i]);
        csv.row(&row)?;
    }
    csv.finish()?;

    let t_end = out.lifted.final_time();
    sinks.summary(&format!("system: {}", run.label));
    sinks.summary(&format!("termination: {} at t = {t_end:.10e}", termination_name(out.termination)));
    sinks.summary(&format!("max gap: {:.3e} (tolerance {:.3e})", out.max_gap, run.config.gap_tolerance));
    if out.truncated() {
        return Err(CliError::Failed(format!(
            "comparison truncated ({}) at t = {t_end}",
            termination_name(out.termination)
        )));
    }
    if out.max_gap <= run.config.gap_tolerance {
        Ok(())
    } else {
        Err(CliError::Failed(format!("gap {:.3e} exceeds tolerance {:.3e}", out.max_gap, run.config.gap_tolerance)))
    }
}
