//! Subcommand bodies. Each writes its files into the output directory and
//! returns a short human-readable report.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::warn;

use chbc_core::control::{oracle, project_admissible};
use chbc_core::output::{write_control, write_iterations, write_series, write_snapshot, write_vtk};
use chbc_core::potentials::check_assumptions;
use chbc_core::state::{initial_regularity_indicator, REGULARITY_GROWTH_WARNING};
use chbc_core::{
    build_interval_mesh, build_square_mesh, Dimension, Discretization, StateSolver, StateTrajectory, Termination,
};

use crate::config::Problem;
use crate::error::{CliError, CliResult};
use crate::verify;

fn create(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| CliError::io(&path, e))
}

fn write_with(dir: &Path, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> CliResult<()> {
    let mut out = create(dir, name)?;
    let path = dir.join(name);
    f(&mut out).and_then(|_| out.flush()).map_err(|e| CliError::io(&path, e))
}

fn prepare_output(p: &Problem) -> CliResult<()> {
    std::fs::create_dir_all(&p.output_dir).map_err(|e| CliError::io(&p.output_dir, e))
}

/// Warnings that never block a run.
fn advisory_checks(p: &Problem) -> CliResult<()> {
    let report = check_assumptions(&p.pots, p.validation_range, p.config.potentials.validation_samples)?;
    for c in report.checks.iter().filter(|c| !c.passed) {
        warn!("potential assumption '{}' fails: {}", c.name, c.detail);
    }
    if p.y0_profile.is_named() {
        let fine = match p.disc.dimension() {
            Dimension::One => build_interval_mesh(2 * p.disc.cells_per_side())?,
            Dimension::Two => build_square_mesh(2 * p.disc.cells_per_side())?,
        };
        let coarse = initial_regularity_indicator(&p.disc, &p.y0)?;
        let refined = initial_regularity_indicator(&fine, &p.y0_profile.sample(&fine)?)?;
        if refined > REGULARITY_GROWTH_WARNING * coarse.max(f64::MIN_POSITIVE) {
            warn!(
                "initial datum looks rough: regularity indicator grows from {coarse:.3e} to {refined:.3e} under refinement"
            );
        }
    }
    Ok(())
}

fn snapshot_levels(p: &Problem) -> Vec<usize> {
    let n = p.grid.steps();
    let every = p.config.output.snapshot_every;
    let mut levels: Vec<usize> = if every == 0 { vec![0] } else { (0..=n).step_by(every).collect() };
    if levels.last() != Some(&n) {
        levels.push(n);
    }
    levels
}

fn write_snapshots(p: &Problem, traj: &StateTrajectory) -> CliResult<()> {
    let d = &p.disc;
    for k in snapshot_levels(p) {
        // The chemical potential exists from level 1 on.
        let mut fields: Vec<(&str, &[f64])> = vec![("y", &traj.y[k])];
        if k > 0 {
            fields.push(("w", &traj.w[k - 1]));
        }
        write_with(&p.output_dir, &format!("snapshot_{k:05}.csv"), |o| write_snapshot(o, d, &fields))?;
        if d.dimension() == Dimension::Two && p.config.output.vtk {
            let title = format!("t = {:.16e}", p.grid.time(k));
            write_with(&p.output_dir, &format!("snapshot_{k:05}.vtk"), |o| write_vtk(o, d, &title, &fields[..1]))?;
        }
    }
    Ok(())
}

fn export_operators(dir: &Path, d: &Discretization) -> CliResult<()> {
    for (name, m) in d.operators() {
        write_with(dir, &format!("operator_{name}.coo"), |o| m.write_coo(o))?;
    }
    Ok(())
}

pub fn state(p: &Problem) -> CliResult<String> {
    advisory_checks(p)?;
    prepare_output(p)?;
    let solver = StateSolver::new(&p.disc, &p.pots, p.newton)?;
    let traj = solver.solve(&p.y0, &p.u_init, &p.grid)?;
    let energies = traj.energies(&p.disc, &p.pots);
    let drift = traj.mass_drift(&p.disc);
    let worst = energies.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    write_with(&p.output_dir, "series.csv", |o| write_series(o, &p.disc, &p.pots, &traj, &p.grid))?;
    write_snapshots(p, &traj)?;
    if p.config.output.export_operators {
        export_operators(&p.output_dir, &p.disc)?;
    }
    let mut s = String::new();
    let _ = writeln!(s, "mesh: {}", p.disc);
    let _ = writeln!(s, "time steps: {} (tau = {:.3e})", p.grid.steps(), p.grid.tau());
    let _ = writeln!(s, "mass drift: {drift:.3e}");
    let _ = writeln!(s, "energy: initial {:.10e}, final {:.10e}", energies[0], energies[energies.len() - 1]);
    let _ = writeln!(s, "largest energy increase per step: {worst:.3e}");
    let _ = writeln!(s, "max |y|: {:.6e}", traj.max_abs());
    let _ = writeln!(s, "Newton iterations: {}", traj.newton_iterations.iter().sum::<usize>());
    write_with(&p.output_dir, "summary.txt", |o| o.write_all(s.as_bytes()))?;
    Ok(s)
}

fn reject_terminal_weights(p: &Problem) -> CliResult<()> {
    if p.weights.has_terminal_terms() {
        return Err(CliError::Config(
            "b_omega and b_gamma must be zero: the adjoint terminal condition requires the \
             boundary terminal residual to equal the trace of the Neumann preimage of the \
             bulk terminal residual, which cannot be maintained along optimizer iterates"
                .into(),
        ));
    }
    p.weights.validate()?;
    Ok(())
}

pub fn optimize(p: &Problem) -> CliResult<String> {
    reject_terminal_weights(p)?;
    advisory_checks(p)?;
    prepare_output(p)?;
    let data = p.tracking_data(p.weights)?;
    let opts = p.optimize_options();
    let report = chbc_core::control::optimize(&p.disc, &p.pots, &p.y0, &data, &p.set, &p.grid, &p.u_init, &opts)?;
    write_with(&p.output_dir, "iterations.csv", |o| write_iterations(o, &report))?;
    write_with(&p.output_dir, "control.csv", |o| write_control(o, &p.grid, &report.final_control))?;
    write_with(&p.output_dir, "gradient.csv", |o| write_control(o, &p.grid, &report.final_gradient))?;
    write_with(&p.output_dir, "series.csv", |o| {
        write_series(o, &p.disc, &p.pots, &report.final_state, &p.grid)
    })?;
    write_snapshots(p, &report.final_state)?;
    let mut s = String::new();
    let _ = writeln!(s, "termination: {}", report.termination);
    let _ = writeln!(s, "iterations: {}", report.iterations());
    let _ = writeln!(s, "initial cost: {:.10e}", report.initial_cost());
    let _ = writeln!(s, "final cost: {:.10e}", report.final_cost());
    let _ = writeln!(s, "final VI residual: {:.3e}", report.final_vi_residual());
    write_with(&p.output_dir, "summary.txt", |o| o.write_all(s.as_bytes()))?;
    match report.termination {
        Termination::Converged => Ok(s),
        Termination::IterationCap => Err(CliError::IterationCap(format!(
            "{} iterations, VI residual {:.3e}",
            report.iterations(),
            report.final_vi_residual()
        ))),
        Termination::LineSearchFailed(why) => Err(CliError::Solver(format!("line search failed: {why}"))),
    }
}

pub fn grad_check(p: &Problem) -> CliResult<String> {
    reject_terminal_weights(p)?;
    prepare_output(p)?;
    let data = p.tracking_data(p.weights)?;
    let probes = verify::gradient_probes(p, &data)?;
    write_with(&p.output_dir, "grad_check.csv", |o| {
        writeln!(o, "probe,directional,finite_difference,rel_error")?;
        for (i, q) in probes.iter().enumerate() {
            writeln!(o, "{i},{:.16e},{:.16e},{:.16e}", q.directional, q.finite_difference, q.rel_error)?;
        }
        Ok(())
    })?;
    let tol = p.config.solver.grad_check_tol;
    let mut s = String::new();
    for (i, q) in probes.iter().enumerate() {
        let _ = writeln!(
            s,
            "probe {i}: <g, h> = {:.10e}, difference quotient = {:.10e}, relative error {:.2e}",
            q.directional, q.finite_difference, q.rel_error
        );
    }
    let worst = probes.iter().map(|q| q.rel_error).fold(0.0, f64::max);
    if worst > tol {
        return Err(CliError::Verification(format!("{s}worst relative error {worst:.2e} exceeds {tol:.0e}")));
    }
    Ok(s)
}

pub fn verify(p: &Problem) -> CliResult<String> {
    prepare_output(p)?;
    let results = verify::run_all(p);
    write_with(&p.output_dir, "verify.csv", |o| {
        writeln!(o, "suite,passed,detail")?;
        for r in &results {
            writeln!(o, "{},{},\"{}\"", r.name, r.passed, r.detail.replace('"', "'"))?;
        }
        Ok(())
    })?;
    let table: String = results.iter().map(|r| format!("{r}\n")).collect();
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(table)
    } else {
        Err(CliError::Verification(format!("{table}failed suites: {}\n", failed.join(", "))))
    }
}

pub fn project(p: &Problem) -> CliResult<String> {
    prepare_output(p)?;
    let (result, trials) = verify::projection(p)?;
    write_with(&p.output_dir, "projection.csv", |o| {
        writeln!(o, "trial,deviation,sweeps,converged")?;
        for (i, t) in trials.iter().enumerate() {
            writeln!(o, "{i},{:.16e},{},{}", t.deviation, t.sweeps, t.converged)?;
        }
        Ok(())
    })?;
    let s = &p.config.solver;
    let projected = project_admissible(&p.disc, &p.grid, &p.u_init, &p.set, s.projection_tol, s.projection_max_sweeps)?;
    let reference = oracle::qp_projection(&p.disc, &p.grid, &p.u_init, &p.set, s.projection_tol)?;
    let deviation = projected.value.sub(&reference).max_abs();
    write_with(&p.output_dir, "projected_control.csv", |o| write_control(o, &p.grid, &projected.value))?;
    let text = format!(
        "{result}\ninitial control: deviation from oracle {deviation:.2e}, {} sweeps\n",
        projected.sweeps
    );
    if result.passed && deviation <= verify::PROJECTION_MATCH_TOL {
        Ok(text)
    } else {
        Err(CliError::Verification(text))
    }
}
