//! Tracking cost, reduced gradient, projections onto the admissible set and
//! a projected-gradient optimizer.
//!
//! All space-time inner products on Σ use `M_Γ` in space and the trapezoid
//! rule in time, the same quadrature as the cost, so the reduced gradient is
//! the exact gradient of the discrete cost.

use std::fmt;

use log::{debug, info};

use crate::discretization::{Discretization, Field};
use crate::error::{invalid, Error, Result};
use crate::potentials::PotentialPair;
use crate::sensitivity::{build_coefficients, solve_adjoint, AdjointTrajectory, TrackingData};
use crate::state::{sigma_inner, sigma_norm, NewtonOptions, SpaceTimeControl, StateSolver, StateTrajectory, TimeGrid};

/// One side of the control box.
#[derive(Debug, Clone, PartialEq)]
pub enum Bound {
    Scalar(f64),
    Field(SpaceTimeControl),
}

impl Bound {
    #[inline]
    pub fn at(&self, k: usize, b: usize) -> f64 {
        match self {
            Bound::Scalar(v) => *v,
            Bound::Field(f) => f.values[k][b],
        }
    }

    fn is_scalar(&self) -> bool {
        matches!(self, Bound::Scalar(_))
    }
}

/// Box `u_min ≤ u ≤ u_max` intersected with `‖∂_t u‖_{L²(Σ)} ≤ M0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibleSet {
    pub lower: Bound,
    pub upper: Bound,
    /// May be `f64::INFINITY`.
    pub m0: f64,
}

impl AdmissibleSet {
    pub fn new(lower: Bound, upper: Bound, m0: f64) -> Result<Self> {
        if m0.is_nan() || m0 < 0.0 {
            return invalid(format!("derivative bound must be nonnegative, got {m0}"));
        }
        let set = Self { lower, upper, m0 };
        let bad = |v: f64| v.is_nan();
        let pairs: Vec<(f64, f64)> = match (&set.lower, &set.upper) {
            (Bound::Scalar(a), Bound::Scalar(b)) => vec![(*a, *b)],
            (Bound::Field(a), Bound::Scalar(b)) => a.iter_values().map(|x| (x, *b)).collect(),
            (Bound::Scalar(a), Bound::Field(b)) => b.iter_values().map(|x| (*a, x)).collect(),
            (Bound::Field(a), Bound::Field(b)) => {
                if a.time_levels() != b.time_levels() || a.boundary_nodes() != b.boundary_nodes() {
                    return invalid("lower and upper bound arrays differ in shape");
                }
                a.iter_values().zip(b.iter_values()).collect()
            }
        };
        for (a, b) in pairs {
            if bad(a) || bad(b) || a > b {
                return invalid(format!("inconsistent control box: u_min = {a} > u_max = {b}"));
            }
        }
        Ok(set)
    }

    /// Box only.
    pub fn boxed(lo: f64, hi: f64) -> Result<Self> {
        Self::new(Bound::Scalar(lo), Bound::Scalar(hi), f64::INFINITY)
    }

    pub fn unconstrained() -> Self {
        Self {
            lower: Bound::Scalar(f64::NEG_INFINITY),
            upper: Bound::Scalar(f64::INFINITY),
            m0: f64::INFINITY,
        }
    }

    pub fn check(&self, d: &Discretization, grid: &TimeGrid) -> Result<()> {
        for b in [&self.lower, &self.upper] {
            if let Bound::Field(f) = b {
                f.check(d, grid)?;
            }
        }
        Ok(())
    }

    /// Membership up to `tol` (absolute on the box, relative to M0 on the ball).
    pub fn contains(&self, d: &Discretization, grid: &TimeGrid, u: &SpaceTimeControl, tol: f64) -> bool {
        let in_box = u.values.iter().enumerate().all(|(k, v)| {
            v.iter()
                .enumerate()
                .all(|(b, x)| *x >= self.lower.at(k, b) - tol && *x <= self.upper.at(k, b) + tol)
        });
        in_box && derivative_norm(d, grid, u) <= self.m0 * (1.0 + tol) + tol
    }
}

/// `‖Du‖` with forward differences, `Σ_b M_Γ,b Σ_k (u_{k+1} − u_k)²/τ`.
pub fn derivative_norm(d: &Discretization, grid: &TimeGrid, u: &SpaceTimeControl) -> f64 {
    crate::state::time_derivative_norm(d, grid, u)
}

/// `(b_Q/2)‖y−z_Q‖²_Q + (b_Σ/2)‖y_Γ−z_Σ‖²_Σ + (b_Ω/2)‖y(T)−z_Ω‖² + (b_Γ/2)‖y_Γ(T)−z_Γ‖² + (b_0/2)‖u‖²_Σ`.
pub fn evaluate_cost(
    d: &Discretization,
    traj: &StateTrajectory,
    u: &SpaceTimeControl,
    data: &TrackingData,
    grid: &TimeGrid,
) -> Result<f64> {
    let levels = grid.steps() + 1;
    if traj.y.len() != levels || data.z_q.len() != levels {
        return invalid("trajectory, targets and grid disagree on the number of time levels");
    }
    u.check(d, grid)?;
    let w = data.weights;
    let n = grid.steps();
    let mut running = 0.0;
    for k in 0..levels {
        let ey = traj.y[k].sub(&data.z_q[k]);
        let eg = traj.y_gamma[k].sub(&data.z_sigma[k]);
        running += grid.weight(k)
            * (w.b_q * d.inner(&ey, &ey) + w.b_sigma * d.inner_boundary(&eg, &eg) + w.b0 * d.inner_boundary(&u.values[k], &u.values[k]));
    }
    let eo = traj.y[n].sub(&data.z_omega);
    let eg = traj.y_gamma[n].sub(&data.z_gamma);
    Ok(0.5 * (running + w.b_omega * d.inner(&eo, &eo) + w.b_gamma * d.inner_boundary(&eg, &eg)))
}

/// `g = q_Γ + b0·u` at every boundary node and time level.
pub fn reduced_gradient(adj: &AdjointTrajectory, u: &SpaceTimeControl, b0: f64) -> Result<SpaceTimeControl> {
    if adj.q_gamma.len() != u.time_levels() || adj.q_gamma.first().map(|v| v.len()) != Some(u.boundary_nodes()) {
        return invalid("adjoint and control shapes differ");
    }
    Ok(SpaceTimeControl {
        values: adj
            .q_gamma
            .iter()
            .zip(&u.values)
            .map(|(q, v)| q.axpy(b0, v))
            .collect(),
    })
}

/// Componentwise clamp.
pub fn project_box(u: &SpaceTimeControl, set: &AdmissibleSet) -> SpaceTimeControl {
    SpaceTimeControl {
        values: u
            .values
            .iter()
            .enumerate()
            .map(|(k, v)| {
                v.iter()
                    .enumerate()
                    .map(|(b, x)| x.max(set.lower.at(k, b)).min(set.upper.at(k, b)))
                    .collect::<Vec<_>>()
                    .into()
            })
            .collect(),
    }
}

/// Solves `(diag(ω) + c LᵀL) v = rhs` with `L` the forward difference.
fn solve_smoothing(omega: &[f64], c: f64, rhs: &[f64]) -> Vec<f64> {
    let n = omega.len();
    if n == 1 {
        return vec![rhs[0] / omega[0]];
    }
    let diag: Vec<f64> = (0..n)
        .map(|k| omega[k] + c * if k == 0 || k == n - 1 { 1.0 } else { 2.0 })
        .collect();
    let off = -c;
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = off / diag[0];
    dp[0] = rhs[0] / diag[0];
    for k in 1..n {
        let den = diag[k] - off * cp[k - 1];
        cp[k] = off / den;
        dp[k] = (rhs[k] - off * dp[k - 1]) / den;
    }
    let mut v = vec![0.0; n];
    v[n - 1] = dp[n - 1];
    for k in (0..n - 1).rev() {
        v[k] = dp[k] - cp[k] * v[k + 1];
    }
    v
}

/// Per-node time series of a control.
fn node_series(u: &SpaceTimeControl, b: usize) -> Vec<f64> {
    u.values.iter().map(|v| v[b]).collect()
}

fn from_node_series(series: &[Vec<f64>]) -> SpaceTimeControl {
    let levels = series.first().map_or(0, |s| s.len());
    SpaceTimeControl {
        values: (0..levels)
            .map(|k| series.iter().map(|s| s[k]).collect::<Vec<_>>().into())
            .collect(),
    }
}

fn time_weights(grid: &TimeGrid) -> Vec<f64> {
    (0..=grid.steps()).map(|k| grid.weight(k)).collect()
}

/// `argmin ‖v − u‖²_Σ + μ ‖Dv‖²`, node by node.
fn smooth(grid: &TimeGrid, u: &SpaceTimeControl, mu: f64) -> SpaceTimeControl {
    let omega = time_weights(grid);
    let c = mu / grid.tau();
    let series: Vec<Vec<f64>> = (0..u.boundary_nodes())
        .map(|b| {
            let rhs: Vec<f64> = node_series(u, b).iter().zip(&omega).map(|(x, w)| x * w).collect();
            solve_smoothing(&omega, c, &rhs)
        })
        .collect();
    from_node_series(&series)
}

/// Σ-projection onto `{‖Dv‖ ≤ M0}`.
///
/// The minimizer is `v(μ) = argmin ‖v − u‖²_Σ + μ‖Dv‖²` for the multiplier
/// `μ ≥ 0` with `‖Dv(μ)‖ = M0`; `‖Dv(μ)‖` is decreasing, so μ is found by
/// bracketing and bisection. The returned `v` satisfies
/// `M0(1 − tol) ≤ ‖Dv‖ ≤ M0`.
pub fn project_derivative_ball(
    d: &Discretization,
    grid: &TimeGrid,
    u: &SpaceTimeControl,
    m0: f64,
    tol: f64,
) -> Result<SpaceTimeControl> {
    if m0.is_nan() || m0 < 0.0 {
        return invalid(format!("derivative bound must be nonnegative, got {m0}"));
    }
    if m0.is_infinite() || derivative_norm(d, grid, u) <= m0 {
        return Ok(u.clone());
    }
    if m0 == 0.0 {
        let omega = time_weights(grid);
        let total: f64 = omega.iter().sum();
        let series: Vec<Vec<f64>> = (0..u.boundary_nodes())
            .map(|b| {
                let mean = node_series(u, b).iter().zip(&omega).map(|(x, w)| x * w).sum::<f64>() / total;
                vec![mean; grid.steps() + 1]
            })
            .collect();
        return Ok(from_node_series(&series));
    }
    let excess = |mu: f64| derivative_norm(d, grid, &smooth(grid, u, mu)) - m0;
    let mut hi = grid.tau();
    let mut doublings = 0;
    while excess(hi) > 0.0 {
        hi *= 2.0;
        doublings += 1;
        if doublings > 400 {
            return Err(Error::Solver("derivative-ball multiplier could not be bracketed".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..300 {
        if excess(hi) >= -tol * m0 {
            break;
        }
        let mid = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
        if mid <= lo || mid >= hi {
            break;
        }
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(smooth(grid, u, hi))
}

#[derive(Debug, Clone)]
pub struct Projection {
    pub value: SpaceTimeControl,
    pub converged: bool,
    pub sweeps: usize,
}

/// Σ-projection onto the admissible set by Dykstra's alternating projections
/// between the box and the derivative ball.
///
/// Stops once successive iterates and the box/ball iterates agree to `tol`
/// in the Σ-norm. The result is clamped to the box; for scalar bounds this
/// does not increase `‖Dv‖`.
pub fn project_admissible(
    d: &Discretization,
    grid: &TimeGrid,
    u: &SpaceTimeControl,
    set: &AdmissibleSet,
    tol: f64,
    max_sweeps: usize,
) -> Result<Projection> {
    u.check(d, grid)?;
    set.check(d, grid)?;
    let clamped = project_box(u, set);
    if set.m0.is_infinite() || derivative_norm(d, grid, &clamped) <= set.m0 {
        return Ok(Projection {
            value: clamped,
            converged: true,
            sweeps: 1,
        });
    }
    let ball_tol = 1e-13;
    let zero = SpaceTimeControl {
        values: u.values.iter().map(|v| v.scaled(0.0)).collect(),
    };
    let mut y = u.clone();
    let mut p = zero.clone();
    let mut q = zero;
    for sweep in 1..=max_sweeps {
        let x = project_box(&y.axpy(1.0, &p), set);
        p = y.axpy(1.0, &p).sub(&x);
        let y_new = project_derivative_ball(d, grid, &x.axpy(1.0, &q), set.m0, ball_tol)?;
        q = x.axpy(1.0, &q).sub(&y_new);
        let change = sigma_norm(d, grid, &y_new.sub(&y));
        let gap = sigma_norm(d, grid, &x.sub(&y_new));
        y = y_new;
        if change <= tol && gap <= tol {
            return Ok(Projection {
                value: project_box(&y, set),
                converged: true,
                sweeps: sweep,
            });
        }
    }
    Ok(Projection {
        value: project_box(&y, set),
        converged: false,
        sweeps: max_sweeps,
    })
}

/// Default accuracy of projections used inside residuals and the optimizer.
pub const PROJECTION_TOL: f64 = 1e-12;
pub const PROJECTION_SWEEPS: usize = 20_000;

/// Natural residual `‖u − P(u − g)‖_Σ`.
pub fn vi_residual(
    d: &Discretization,
    grid: &TimeGrid,
    u: &SpaceTimeControl,
    g: &SpaceTimeControl,
    set: &AdmissibleSet,
) -> Result<f64> {
    let p = project_admissible(d, grid, &u.sub(g), set, PROJECTION_TOL, PROJECTION_SWEEPS)?;
    Ok(sigma_norm(d, grid, &u.sub(&p.value)))
}

/// Fraction of control entries sitting on a box bound.
pub fn active_box_fraction(u: &SpaceTimeControl, set: &AdmissibleSet) -> f64 {
    let mut active = 0usize;
    let mut total = 0usize;
    for (k, v) in u.values.iter().enumerate() {
        for (b, x) in v.iter().enumerate() {
            total += 1;
            let (lo, hi) = (set.lower.at(k, b), set.upper.at(k, b));
            if *x <= lo + 1e-12 * (1.0 + lo.abs()) || *x >= hi - 1e-12 * (1.0 + hi.abs()) {
                active += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        active as f64 / total as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOptions {
    /// Stop once the VI residual is at most this.
    pub tol: f64,
    /// Cap on recorded iterates, the initial one included.
    pub max_iter: usize,
    pub armijo_sigma: f64,
    pub initial_step: f64,
    pub step_min: f64,
    pub step_max: f64,
    pub max_backtracks: usize,
    pub projection_tol: f64,
    pub projection_sweeps: usize,
    pub newton: NewtonOptions,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 200,
            armijo_sigma: 1e-4,
            initial_step: 1.0,
            step_min: 1e-6,
            step_max: 1e2,
            max_backtracks: 40,
            projection_tol: PROJECTION_TOL,
            projection_sweeps: PROJECTION_SWEEPS,
            newton: NewtonOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    /// 1-based; iteration 1 is the initial control.
    pub iter: usize,
    pub cost: f64,
    pub grad_norm: f64,
    /// Step that produced this iterate (0 for the first).
    pub step: f64,
    pub vi_residual: f64,
    pub active_box_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Converged,
    IterationCap,
    LineSearchFailed(String),
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Termination::Converged => write!(f, "converged"),
            Termination::IterationCap => write!(f, "iteration cap reached"),
            Termination::LineSearchFailed(why) => write!(f, "line search failed: {why}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizationReport {
    pub iterates: Vec<IterationRecord>,
    pub final_control: SpaceTimeControl,
    pub final_state: StateTrajectory,
    pub final_adjoint: AdjointTrajectory,
    pub final_gradient: SpaceTimeControl,
    pub termination: Termination,
}

impl OptimizationReport {
    pub fn initial_cost(&self) -> f64 {
        self.iterates[0].cost
    }

    pub fn final_cost(&self) -> f64 {
        self.iterates.last().expect("report has an initial record").cost
    }

    pub fn iterations(&self) -> usize {
        self.iterates.len()
    }

    pub fn final_vi_residual(&self) -> f64 {
        self.iterates.last().expect("report has an initial record").vi_residual
    }
}

struct Evaluation {
    traj: StateTrajectory,
    adj: AdjointTrajectory,
    cost: f64,
    grad: SpaceTimeControl,
}

fn evaluate(
    solver: &StateSolver,
    data: &TrackingData,
    grid: &TimeGrid,
    u: &SpaceTimeControl,
    traj: StateTrajectory,
    cost: f64,
) -> Result<Evaluation> {
    let d = solver.discretization();
    let coeffs = build_coefficients(solver.potentials(), &traj)?;
    let adj = solve_adjoint(d, &coeffs, data, &traj, grid)?;
    let grad = reduced_gradient(&adj, u, data.weights.b0)?;
    Ok(Evaluation { traj, adj, cost, grad })
}

/// Projected gradient descent with Armijo backtracking and
/// Barzilai-Borwein initial steps.
#[allow(clippy::too_many_arguments)]
pub fn optimize(
    d: &Discretization,
    pots: &PotentialPair,
    y0: &Field,
    data: &TrackingData,
    set: &AdmissibleSet,
    grid: &TimeGrid,
    u_init: &SpaceTimeControl,
    opts: &OptimizeOptions,
) -> Result<OptimizationReport> {
    data.check(d, grid)?;
    set.check(d, grid)?;
    u_init.check(d, grid)?;
    if data.weights.has_terminal_terms() {
        return invalid(
            "terminal weights b_Omega, b_Gamma must be zero for optimization: the terminal \
             compatibility condition of the adjoint cannot hold along the iterates",
        );
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return invalid("optimizer tolerance must be positive and max_iter >= 1");
    }
    let solver = StateSolver::new(d, pots, opts.newton)?;
    let project = |v: &SpaceTimeControl| -> Result<SpaceTimeControl> {
        Ok(project_admissible(d, grid, v, set, opts.projection_tol, opts.projection_sweeps)?.value)
    };

    let mut u = project(u_init)?;
    let traj = solver.solve(y0, &u, grid)?;
    let cost = evaluate_cost(d, &traj, &u, data, grid)?;
    let mut cur = evaluate(&solver, data, grid, &u, traj, cost)?;
    let mut records = Vec::new();
    let mut step_taken = 0.0;
    let mut next_step = opts.initial_step.clamp(opts.step_min, opts.step_max);

    let termination = loop {
        let vi = vi_residual(d, grid, &u, &cur.grad, set)?;
        let rec = IterationRecord {
            iter: records.len() + 1,
            cost: cur.cost,
            grad_norm: sigma_norm(d, grid, &cur.grad),
            step: step_taken,
            vi_residual: vi,
            active_box_fraction: active_box_fraction(&u, set),
        };
        debug!(
            "iter {} cost {:.6e} |g| {:.3e} vi {:.3e} step {:.3e}",
            rec.iter, rec.cost, rec.grad_norm, rec.vi_residual, rec.step
        );
        records.push(rec);
        if vi <= opts.tol {
            break Termination::Converged;
        }
        if records.len() >= opts.max_iter {
            break Termination::IterationCap;
        }

        let mut s = next_step;
        let mut accepted = None;
        let mut last_failure = String::from("Armijo condition never met");
        for _ in 0..=opts.max_backtracks {
            let cand = project(&u.axpy(-s, &cur.grad))?;
            let diff = sigma_norm(d, grid, &cand.sub(&u));
            if diff == 0.0 {
                last_failure = "projected step is zero".into();
                break;
            }
            match solver.solve(y0, &cand, grid) {
                Ok(traj) => {
                    let c = evaluate_cost(d, &traj, &cand, data, grid)?;
                    if c <= cur.cost - opts.armijo_sigma / s * diff * diff {
                        accepted = Some((cand, traj, c));
                        break;
                    }
                }
                Err(e @ (Error::StepFailure { .. } | Error::Solver(_))) => {
                    last_failure = format!("state solve failed: {e}");
                }
                Err(e) => return Err(e),
            }
            s *= 0.5;
        }
        let Some((cand, traj, c)) = accepted else {
            break Termination::LineSearchFailed(last_failure);
        };
        let next = evaluate(&solver, data, grid, &cand, traj, c)?;
        let du = cand.sub(&u);
        let dg = next.grad.sub(&cur.grad);
        let curv = sigma_inner(d, grid, &du, &dg);
        next_step = if curv > 0.0 {
            (sigma_inner(d, grid, &du, &du) / curv).clamp(opts.step_min, opts.step_max)
        } else {
            opts.step_max
        };
        step_taken = s;
        u = cand;
        cur = next;
    };
    info!(
        "optimizer: {} after {} iterations, cost {:.6e}",
        termination,
        records.len(),
        cur.cost
    );
    Ok(OptimizationReport {
        iterates: records,
        final_control: u,
        final_state: cur.traj,
        final_adjoint: cur.adj,
        final_gradient: cur.grad,
        termination,
    })
}

/// Reference projection onto the admissible set, independent of the
/// alternating scheme: bisection on the multiplier of the derivative bound,
/// each inner problem being a box-constrained quadratic solved by projected
/// Gauss-Seidel.
pub mod oracle {
    use super::*;

    fn box_qp_node(
        omega: &[f64],
        c: f64,
        u: &[f64],
        lo: &[f64],
        hi: &[f64],
        start: &[f64],
        tol: f64,
    ) -> Vec<f64> {
        let n = omega.len();
        let mut v = start.to_vec();
        let diag = |k: usize| omega[k] + c * if n == 1 { 0.0 } else if k == 0 || k == n - 1 { 1.0 } else { 2.0 };
        for _ in 0..2_000_000 {
            let mut change: f64 = 0.0;
            for k in 0..n {
                let mut r = omega[k] * u[k];
                if k > 0 {
                    r += c * v[k - 1];
                }
                if k + 1 < n {
                    r += c * v[k + 1];
                }
                let nv = (r / diag(k)).max(lo[k]).min(hi[k]);
                change = change.max((nv - v[k]).abs());
                v[k] = nv;
            }
            if change <= tol {
                break;
            }
        }
        v
    }

    fn penalized(grid: &TimeGrid, u: &SpaceTimeControl, set: &AdmissibleSet, mu: f64, start: &SpaceTimeControl) -> SpaceTimeControl {
        let omega = time_weights(grid);
        let c = mu / grid.tau();
        let levels = grid.steps() + 1;
        let series: Vec<Vec<f64>> = (0..u.boundary_nodes())
            .map(|b| {
                let lo: Vec<f64> = (0..levels).map(|k| set.lower.at(k, b)).collect();
                let hi: Vec<f64> = (0..levels).map(|k| set.upper.at(k, b)).collect();
                box_qp_node(&omega, c, &node_series(u, b), &lo, &hi, &node_series(start, b), 1e-15)
            })
            .collect();
        from_node_series(&series)
    }

    /// Σ-projection of `u` onto the admissible set to about `tol`.
    pub fn qp_projection(
        d: &Discretization,
        grid: &TimeGrid,
        u: &SpaceTimeControl,
        set: &AdmissibleSet,
        tol: f64,
    ) -> Result<SpaceTimeControl> {
        u.check(d, grid)?;
        set.check(d, grid)?;
        let clamped = project_box(u, set);
        if set.m0.is_infinite() || derivative_norm(d, grid, &clamped) <= set.m0 {
            return Ok(clamped);
        }
        if !(set.lower.is_scalar() && set.upper.is_scalar()) {
            debug!("oracle with array bounds: feasibility of the limit is not guaranteed");
        }
        let excess = |v: &SpaceTimeControl| derivative_norm(d, grid, v) - set.m0;
        let mut hi = grid.tau();
        let mut v_hi = penalized(grid, u, set, hi, &clamped);
        let mut doublings = 0;
        while excess(&v_hi) > 0.0 {
            hi *= 2.0;
            v_hi = penalized(grid, u, set, hi, &v_hi);
            doublings += 1;
            if doublings > 200 {
                return Err(Error::Solver("oracle multiplier could not be bracketed".into()));
            }
        }
        let mut lo = 0.0;
        for _ in 0..300 {
            if excess(&v_hi) >= -tol * set.m0.max(1e-300) {
                break;
            }
            let mid = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
            if mid <= lo || mid >= hi {
                break;
            }
            let v_mid = penalized(grid, u, set, mid, &v_hi);
            if excess(&v_mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
                v_hi = v_mid;
            }
        }
        Ok(v_hi)
    }
}
