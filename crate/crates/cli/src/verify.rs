//! Property suites driven by a run configuration.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chbc_core::control::{derivative_norm, evaluate_cost, oracle, project_admissible, reduced_gradient};
use chbc_core::potentials::check_assumptions;
use chbc_core::sensitivity::{build_coefficients, duality_gap, solve_adjoint, solve_linearized};
use chbc_core::state::sigma_inner;
use chbc_core::{
    AdmissibleSet, Bound, BoundaryField, CostWeights, Field, NeumannSolver, SpaceTimeControl, StateSolver, TimeGrid,
    TrackingData, ZeroMeanField,
};

use crate::config::Problem;
use crate::error::CliResult;

pub const MASS_TOL: f64 = 1e-10;
pub const ENERGY_TOL: f64 = 1e-12;
pub const SYMMETRY_TOL: f64 = 1e-10;
pub const TANGENT_RATIO: (f64, f64) = (3.5, 4.5);
pub const DUALITY_TOL: f64 = 1e-8;
pub const STATE_RESIDUAL_TOL: f64 = 1e-8;
pub const PROJECTION_MATCH_TOL: f64 = 1e-6;
pub const PROJECTION_TRIALS: usize = 10;
pub const PROJECTION_STEPS: usize = 5;

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for SuiteOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{:<12} {status}  {}", self.name, self.detail)
    }
}

fn outcome(name: &'static str, passed: bool, detail: String) -> SuiteOutcome {
    SuiteOutcome { name, passed, detail }
}

/// Runs `suite`; an error inside it is a failed row, not an abort.
fn guarded(name: &'static str, suite: impl FnOnce() -> CliResult<SuiteOutcome>) -> SuiteOutcome {
    suite().unwrap_or_else(|e| outcome(name, false, e.to_string()))
}

pub fn run_all(p: &Problem) -> Vec<SuiteOutcome> {
    vec![
        guarded("potentials", || potentials(p)),
        guarded("neumann", || neumann(p)),
        guarded("mass", || mass(p)),
        guarded("energy", || energy(p)),
        guarded("tangent", || tangent(p)),
        guarded("duality", || duality(p)),
        guarded("projection", || projection(p).map(|(o, _)| o)),
        guarded("gradient", || gradient(p).map(|(o, _)| o)),
    ]
}

fn random_control(d_nodes: usize, grid: &TimeGrid, rng: &mut ChaCha8Rng, amp: f64) -> SpaceTimeControl {
    SpaceTimeControl {
        values: (0..=grid.steps())
            .map(|_| BoundaryField((0..d_nodes).map(|_| rng.gen_range(-amp..amp)).collect()))
            .collect(),
    }
}

/// Weights usable with the adjoint: terminal terms dropped, and a bulk
/// tracking term added if nothing else remains.
pub fn running_weights(w: CostWeights) -> CostWeights {
    let mut w = CostWeights {
        b_omega: 0.0,
        b_gamma: 0.0,
        ..w
    };
    if w.b_q == 0.0 && w.b_sigma == 0.0 && w.b0 == 0.0 {
        w.b_q = 1.0;
    }
    w
}

pub fn potentials(p: &Problem) -> CliResult<SuiteOutcome> {
    let report = check_assumptions(&p.pots, p.validation_range, p.config.potentials.validation_samples)?;
    let failed: Vec<String> = report
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} ({})", c.name, c.detail))
        .collect();
    let detail = if failed.is_empty() {
        format!("{} checks on [{}, {}]", report.checks.len(), report.range.0, report.range.1)
    } else {
        format!("violated: {}", failed.join("; "))
    };
    Ok(outcome("potentials", report.all_passed(), detail))
}

pub fn neumann(p: &Problem) -> CliResult<SuiteOutcome> {
    let d = &p.disc;
    let s = NeumannSolver::new(d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut worst_sym: f64 = 0.0;
    let mut worst_res: f64 = 0.0;
    for _ in 0..p.config.solver.random_pairs {
        let mut draw = || {
            let f = Field((0..d.bulk_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect());
            ZeroMeanField::project(d, &f)
        };
        let (a, b) = (draw()?, draw()?);
        let ab = s.pairing(&a, &b)?;
        let ba = s.pairing(&b, &a)?;
        worst_sym = worst_sym.max((ab - ba).abs() / ab.abs().max(1.0));
        let v = s.solve(&a)?;
        let kv = d.stiffness().mul_vec(&v);
        let r = kv
            .iter()
            .zip(a.iter())
            .zip(d.mass_diag())
            .map(|((k, x), m)| (k - m * x).abs())
            .fold(0.0, f64::max);
        worst_res = worst_res.max(r);
    }
    Ok(outcome(
        "neumann",
        worst_sym <= SYMMETRY_TOL && worst_res <= SYMMETRY_TOL,
        format!("symmetry {worst_sym:.2e}, residual {worst_res:.2e} (<= {SYMMETRY_TOL:.0e})"),
    ))
}

pub fn mass(p: &Problem) -> CliResult<SuiteOutcome> {
    let traj = chbc_core::solve_state(&p.disc, &p.pots, &p.y0, &p.u_init, &p.grid, p.newton)?;
    let drift = traj.mass_drift(&p.disc);
    Ok(outcome("mass", drift <= MASS_TOL, format!("max mean drift {drift:.2e} (<= {MASS_TOL:.0e})")))
}

pub fn energy(p: &Problem) -> CliResult<SuiteOutcome> {
    let u = SpaceTimeControl::zeros(&p.disc, &p.grid);
    let traj = chbc_core::solve_state(&p.disc, &p.pots, &p.y0, &u, &p.grid, p.newton)?;
    let e = traj.energies(&p.disc, &p.pots);
    let worst = e.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    Ok(outcome(
        "energy",
        worst <= ENERGY_TOL,
        format!("largest step increase {worst:.2e} (<= {ENERGY_TOL:.0e}) at zero control"),
    ))
}

pub fn tangent(p: &Problem) -> CliResult<SuiteOutcome> {
    let (d, grid) = (&p.disc, &p.grid);
    let solver = StateSolver::new(d, &p.pots, p.newton)?;
    let base = solver.solve(&p.y0, &p.u_init, grid)?;
    let coeffs = build_coefficients(&p.pots, &base)?;
    let h = SpaceTimeControl::from_fn(d, grid, |b, t| {
        (1.0 + b as f64 / d.boundary_nodes() as f64) * (1.0 + (2.0 * PI * t / grid.final_time()).sin())
    });
    let lin = solve_linearized(d, &coeffs, &h, grid)?;
    let mut errors = Vec::new();
    for e in [1e-2, 5e-3, 2.5e-3] {
        let pert = solver.solve(&p.y0, &p.u_init.axpy(e, &h), grid)?;
        let sq: f64 = (0..=grid.steps())
            .map(|k| {
                let dy = pert.y[k].sub(&base.y[k]).axpy(-e, &lin.xi[k]);
                let dg = pert.y_gamma[k].sub(&base.y_gamma[k]).axpy(-e, &lin.xi_gamma[k]);
                grid.weight(k) * (d.inner(&dy, &dy) + d.inner_boundary(&dg, &dg))
            })
            .sum();
        errors.push(sq.sqrt());
    }
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let ok = ratios.iter().all(|r| (TANGENT_RATIO.0..=TANGENT_RATIO.1).contains(r));
    Ok(outcome(
        "tangent",
        ok,
        format!(
            "error ratios {:.3}, {:.3} (in [{}, {}])",
            ratios[0], ratios[1], TANGENT_RATIO.0, TANGENT_RATIO.1
        ),
    ))
}

pub fn duality(p: &Problem) -> CliResult<SuiteOutcome> {
    let (d, grid) = (&p.disc, &p.grid);
    let solver = StateSolver::new(d, &p.pots, p.newton)?;
    let traj = solver.solve(&p.y0, &p.u_init, grid)?;
    let residual = solver.max_residual(&traj, &p.u_init, grid);
    let coeffs = build_coefficients(&p.pots, &traj)?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed.wrapping_add(1));
    let h = random_control(d.boundary_nodes(), grid, &mut rng, 1.0);
    let lin = solve_linearized(d, &coeffs, &h, grid)?;
    let plain = p.tracking_data(running_weights(p.weights))?;
    let big_phi = ZeroMeanField::project(d, &d.sample(|x, y| (PI * x).cos() + 0.5 * (2.0 * PI * y).cos()))?;
    let compat = plain.clone().with_compatible_terminal(d, &traj, &big_phi, 0.25, 1.0, 1.0)?;
    let mut gaps = Vec::new();
    for data in [&plain, &compat] {
        let adj = solve_adjoint(d, &coeffs, data, &traj, grid)?;
        gaps.push(duality_gap(d, &lin, &adj, &h, grid)?);
    }
    let ok = residual <= STATE_RESIDUAL_TOL && gaps.iter().all(|g| *g <= DUALITY_TOL);
    Ok(outcome(
        "duality",
        ok,
        format!(
            "gaps {:.2e} (running), {:.2e} (terminal) (<= {DUALITY_TOL:.0e}); state residual {residual:.2e} (<= {STATE_RESIDUAL_TOL:.0e})",
            gaps[0], gaps[1]
        ),
    ))
}

/// One row per trial: max-norm deviation of the alternating projection from
/// the oracle, and its sweep count.
#[derive(Debug, Clone)]
pub struct ProjectionTrial {
    pub deviation: f64,
    pub sweeps: usize,
    pub converged: bool,
}

/// Random inputs on the configured boundary over a short time grid.
pub fn projection(p: &Problem) -> CliResult<(SuiteOutcome, Vec<ProjectionTrial>)> {
    let d = &p.disc;
    let grid = TimeGrid::new(p.grid.final_time(), PROJECTION_STEPS)?;
    let scalar = |b: &Bound| match b {
        Bound::Scalar(v) if v.is_finite() => Some(*v),
        _ => None,
    };
    let (lo, hi) = match (scalar(&p.set.lower), scalar(&p.set.upper)) {
        (Some(lo), Some(hi)) => (lo, hi),
        _ => (-0.6, 0.8),
    };
    let tol = p.config.solver.projection_tol;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed.wrapping_add(2));
    let mut trials = Vec::new();
    for _ in 0..PROJECTION_TRIALS {
        let amp = 2.0 * (lo.abs().max(hi.abs())).max(1.0);
        let u = random_control(d.boundary_nodes(), &grid, &mut rng, amp);
        let m0 = if p.set.m0.is_finite() {
            p.set.m0
        } else {
            rng.gen_range(0.1..0.6) * derivative_norm(d, &grid, &u)
        };
        let set = AdmissibleSet::new(Bound::Scalar(lo), Bound::Scalar(hi), m0)?;
        let fast = project_admissible(d, &grid, &u, &set, tol, p.config.solver.projection_max_sweeps)?;
        let reference = oracle::qp_projection(d, &grid, &u, &set, tol)?;
        trials.push(ProjectionTrial {
            deviation: fast.value.sub(&reference).max_abs(),
            sweeps: fast.sweeps,
            converged: fast.converged,
        });
    }
    let worst = trials.iter().map(|t| t.deviation).fold(0.0, f64::max);
    let converged = trials.iter().all(|t| t.converged);
    Ok((
        outcome(
            "projection",
            worst <= PROJECTION_MATCH_TOL && converged,
            format!(
                "worst deviation from oracle {worst:.2e} over {PROJECTION_TRIALS} inputs (<= {PROJECTION_MATCH_TOL:.0e}){}",
                if converged { "" } else { ", not all converged" }
            ),
        ),
        trials,
    ))
}

/// One finite-difference probe of the reduced gradient.
#[derive(Debug, Clone)]
pub struct GradientProbe {
    pub directional: f64,
    pub finite_difference: f64,
    pub rel_error: f64,
}

/// Central differences at the initial control and at random feasible controls.
pub fn gradient_probes(p: &Problem, data: &TrackingData) -> CliResult<Vec<GradientProbe>> {
    let (d, grid) = (&p.disc, &p.grid);
    let s = &p.config.solver;
    let solver = StateSolver::new(d, &p.pots, p.newton)?;
    let eps = s.fd_epsilon;
    let cost = |u: &SpaceTimeControl| -> CliResult<f64> {
        let t = solver.solve(&p.y0, u, grid)?;
        Ok(evaluate_cost(d, &t, u, data, grid)?)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed.wrapping_add(3));
    let mut controls = vec![p.u_init.clone()];
    for _ in 0..s.grad_check_samples {
        let raw = random_control(d.boundary_nodes(), grid, &mut rng, 0.5);
        controls.push(project_admissible(d, grid, &raw, &p.set, s.projection_tol, s.projection_max_sweeps)?.value);
    }
    let mut probes = Vec::new();
    for u in &controls {
        let h = random_control(d.boundary_nodes(), grid, &mut rng, 1.0);
        let traj = solver.solve(&p.y0, u, grid)?;
        let coeffs = build_coefficients(&p.pots, &traj)?;
        let adj = solve_adjoint(d, &coeffs, data, &traj, grid)?;
        let g = reduced_gradient(&adj, u, data.weights.b0)?;
        let directional = sigma_inner(d, grid, &g, &h);
        let fd = (cost(&u.axpy(eps, &h))? - cost(&u.axpy(-eps, &h))?) / (2.0 * eps);
        let rel_error = (directional - fd).abs() / fd.abs().max(directional.abs()).max(f64::MIN_POSITIVE);
        probes.push(GradientProbe {
            directional,
            finite_difference: fd,
            rel_error,
        });
    }
    Ok(probes)
}

pub fn gradient(p: &Problem) -> CliResult<(SuiteOutcome, Vec<GradientProbe>)> {
    let data = p.tracking_data(running_weights(p.weights))?;
    let probes = gradient_probes(p, &data)?;
    let tol = p.config.solver.grad_check_tol;
    let worst = probes.iter().map(|q| q.rel_error).fold(0.0, f64::max);
    Ok((
        outcome(
            "gradient",
            worst <= tol,
            format!("worst relative error {worst:.2e} over {} controls (<= {tol:.0e})", probes.len()),
        ),
        probes,
    ))
}
