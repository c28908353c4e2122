//! Forward solver for the state system: implicit Euler in time with a
//! convex-concave split of the potentials and Newton iterations on the
//! coupled (y, w) step system.
//!
//! One step from `yᵏ` to `yᵏ⁺¹` solves
//!
//! ```text
//! M (yᵏ⁺¹ − yᵏ)/τ + K wᵏ⁺¹ = 0
//! M wᵏ⁺¹ = B (yᵏ⁺¹ − yᵏ)/τ + A yᵏ⁺¹ + M (f_cx'(yᵏ⁺¹) + f_cc'(yᵏ))
//!          + Tᵀ M_Γ (f_Γ,cx'(T yᵏ⁺¹) + f_Γ,cc'(T yᵏ) − uᵏ⁺¹)
//! ```
//!
//! with `A = K + Tᵀ K_Γ T` and `B = Tᵀ M_Γ T`. The trace is shared with the
//! bulk unknowns, so `y_Γ = T y` holds by construction, and testing the first
//! equation with the constant vector gives exact mass conservation.

use crate::banded::BandedMatrix;
use crate::discretization::{BoundaryField, Discretization, Field};
use crate::error::{invalid, Error, Result};
use crate::neumann::{NeumannSolver, ZeroMeanField};
use crate::potentials::{ConvexConcaveSplit, PotentialPair, DEFAULT_VALIDATION_RANGE};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    final_time: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(final_time: f64, steps: usize) -> Result<Self> {
        if !(final_time > 0.0 && final_time.is_finite()) {
            return invalid(format!("final time must be positive, got {final_time}"));
        }
        if steps == 0 {
            return invalid("time grid needs at least one step");
        }
        Ok(Self { final_time, steps })
    }

    pub fn final_time(&self) -> f64 {
        self.final_time
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn tau(&self) -> f64 {
        self.final_time / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.tau()
    }

    /// Trapezoidal weight of time node `k`.
    pub fn weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.steps {
            0.5 * self.tau()
        } else {
            self.tau()
        }
    }
}

/// Boundary control sampled at every boundary node and time node.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeControl {
    pub values: Vec<BoundaryField>,
}

impl SpaceTimeControl {
    pub fn zeros(d: &Discretization, grid: &TimeGrid) -> Self {
        Self::constant(d, grid, 0.0)
    }

    pub fn constant(d: &Discretization, grid: &TimeGrid, c: f64) -> Self {
        Self {
            values: vec![BoundaryField::constant(d.boundary_nodes(), c); grid.steps() + 1],
        }
    }

    /// Samples `f(boundary_node_index, t)`.
    pub fn from_fn(d: &Discretization, grid: &TimeGrid, f: impl Fn(usize, f64) -> f64) -> Self {
        Self {
            values: (0..=grid.steps())
                .map(|k| BoundaryField((0..d.boundary_nodes()).map(|b| f(b, grid.time(k))).collect()))
                .collect(),
        }
    }

    pub fn time_levels(&self) -> usize {
        self.values.len()
    }

    pub fn boundary_nodes(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    pub fn check(&self, d: &Discretization, grid: &TimeGrid) -> Result<()> {
        if self.values.len() != grid.steps() + 1 {
            return invalid(format!(
                "control has {} time levels, grid needs {}",
                self.values.len(),
                grid.steps() + 1
            ));
        }
        for v in &self.values {
            d.check_boundary_field(v, "control")?;
        }
        Ok(())
    }

    pub fn map2(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.values.len(), other.values.len());
        Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| BoundaryField(a.iter().zip(b.iter()).map(|(x, y)| f(*x, *y)).collect()))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self
                .values
                .iter()
                .map(|a| BoundaryField(a.iter().map(|x| f(*x)).collect()))
                .collect(),
        }
    }

    /// `self + c·other`
    pub fn axpy(&self, c: f64, other: &Self) -> Self {
        self.map2(other, |a, b| a + c * b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.axpy(-1.0, other)
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|a| c * a)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.max_abs()).fold(0.0, f64::max)
    }

    pub fn iter_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().flat_map(|v| v.iter().copied())
    }
}

/// Space-time inner product on Σ: `M_Γ` in space, trapezoid in time.
pub fn sigma_inner(d: &Discretization, grid: &TimeGrid, a: &SpaceTimeControl, b: &SpaceTimeControl) -> f64 {
    a.values
        .iter()
        .zip(&b.values)
        .enumerate()
        .map(|(k, (x, y))| grid.weight(k) * d.inner_boundary(x, y))
        .sum()
}

pub fn sigma_norm(d: &Discretization, grid: &TimeGrid, a: &SpaceTimeControl) -> f64 {
    sigma_inner(d, grid, a, a).max(0.0).sqrt()
}

/// `‖∂_t u‖_{L²(Σ)}` from forward differences.
pub fn time_derivative_norm(d: &Discretization, grid: &TimeGrid, u: &SpaceTimeControl) -> f64 {
    let tau = grid.tau();
    u.values
        .windows(2)
        .map(|w| {
            let diff: Vec<f64> = w[1].iter().zip(w[0].iter()).map(|(b, a)| (b - a) / tau).collect();
            tau * d.inner_boundary(&diff, &diff)
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Halvings tried when a full Newton step does not reduce the residual.
    pub max_backtracks: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-11,
            rel_tol: 1e-10,
            max_iter: 25,
            max_backtracks: 10,
        }
    }
}

impl NewtonOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) || self.max_iter == 0 {
            return invalid("Newton tolerances must be positive and max_iter >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StateTrajectory {
    /// Order parameter at t_0..t_N.
    pub y: Vec<Field>,
    /// Traces of `y` at t_0..t_N.
    pub y_gamma: Vec<BoundaryField>,
    /// Chemical potential at t_1..t_N (`w[k-1]` belongs to t_k).
    pub w: Vec<Field>,
    /// Mean of the initial datum.
    pub m0: f64,
    /// Newton iterations used per step.
    pub newton_iterations: Vec<usize>,
}

impl StateTrajectory {
    pub fn steps(&self) -> usize {
        self.y.len() - 1
    }

    pub fn max_abs(&self) -> f64 {
        self.y.iter().map(|v| v.max_abs()).fold(0.0, f64::max)
    }

    /// Largest `|mean(y_k) − m0|`.
    pub fn mass_drift(&self, d: &Discretization) -> f64 {
        self.y
            .iter()
            .map(|v| (d.integrate(v) / d.omega_measure() - self.m0).abs())
            .fold(0.0, f64::max)
    }

    pub fn energies(&self, d: &Discretization, pots: &PotentialPair) -> Vec<f64> {
        self.y
            .iter()
            .zip(&self.y_gamma)
            .map(|(y, g)| energy_unchecked(d, pots, y, g))
            .collect()
    }
}

/// Assembled operators shared by the state, linearized and adjoint steppers.
#[derive(Debug, Clone)]
pub(crate) struct StepOperators {
    pub m: Vec<f64>,
    /// Diagonal of `B = Tᵀ M_Γ T`.
    pub b: Vec<f64>,
    pub k: CsrMatrix,
    /// `A = K + Tᵀ K_Γ T`
    pub a: CsrMatrix,
    pub bandwidth: usize,
}

impl StepOperators {
    pub fn new(d: &Discretization) -> Self {
        let bidx = d.boundary_indices();
        let mut b = vec![0.0; d.bulk_nodes()];
        for (&i, &m) in bidx.iter().zip(d.boundary_mass_diag()) {
            b[i] += m;
        }
        let mut trip: Vec<(usize, usize, f64)> = d.stiffness().triplets().collect();
        trip.extend(d.boundary_stiffness().triplets().map(|(r, c, v)| (bidx[r], bidx[c], v)));
        let a = CsrMatrix::from_triplets(d.bulk_nodes(), d.bulk_nodes(), &trip);
        Self {
            m: d.mass_diag().to_vec(),
            b,
            k: d.stiffness().clone(),
            a,
            bandwidth: d.node_bandwidth(),
        }
    }

    pub fn nodes(&self) -> usize {
        self.m.len()
    }

    /// Step matrix `[[M/τ, K], [B/τ + A + diag(curv), −M]]` in interleaved
    /// (y, w) ordering.
    pub fn step_matrix(&self, tau: f64, curv: &[f64]) -> BandedMatrix {
        let n = self.nodes();
        let band = 2 * self.bandwidth + 1;
        let mut s = BandedMatrix::zeros(2 * n, band, band);
        for i in 0..n {
            s.add(2 * i, 2 * i, self.m[i] / tau);
            for (j, v) in self.k.row(i) {
                s.add(2 * i, 2 * j + 1, v);
            }
            for (j, v) in self.a.row(i) {
                s.add(2 * i + 1, 2 * j, v);
            }
            s.add(2 * i + 1, 2 * i, self.b[i] / tau + curv[i]);
            s.add(2 * i + 1, 2 * i + 1, -self.m[i]);
        }
        s
    }
}

pub(crate) fn interleave(y: &[f64], w: &[f64]) -> Vec<f64> {
    y.iter().zip(w).flat_map(|(a, b)| [*a, *b]).collect()
}

pub(crate) fn deinterleave(z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (z.iter().step_by(2).copied().collect(), z.iter().skip(1).step_by(2).copied().collect())
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Forward solver bound to one discretization and potential pair.
#[derive(Debug, Clone)]
pub struct StateSolver<'a> {
    disc: &'a Discretization,
    pots: &'a PotentialPair,
    bulk: ConvexConcaveSplit,
    boundary: ConvexConcaveSplit,
    ops: StepOperators,
    opts: NewtonOptions,
}

impl<'a> StateSolver<'a> {
    pub fn new(disc: &'a Discretization, pots: &'a PotentialPair, opts: NewtonOptions) -> Result<Self> {
        opts.validate()?;
        Ok(Self {
            disc,
            pots,
            bulk: pots.bulk_split(DEFAULT_VALIDATION_RANGE)?,
            boundary: pots.boundary_split(DEFAULT_VALIDATION_RANGE)?,
            ops: StepOperators::new(disc),
            opts,
        })
    }

    pub fn discretization(&self) -> &'a Discretization {
        self.disc
    }

    pub fn potentials(&self) -> &'a PotentialPair {
        self.pots
    }

    pub fn options(&self) -> &NewtonOptions {
        &self.opts
    }

    pub fn bulk_split(&self) -> &ConvexConcaveSplit {
        &self.bulk
    }

    pub fn boundary_split(&self) -> &ConvexConcaveSplit {
        &self.boundary
    }

    /// Diagonal of the curvature block `M f_cx''(y) + Tᵀ M_Γ f_Γ,cx''(T y)`.
    fn convex_curvature(&self, y: &[f64]) -> Vec<f64> {
        let d = self.disc;
        let mut c: Vec<f64> = y
            .iter()
            .zip(&self.ops.m)
            .map(|(v, m)| m * self.bulk.convex_d2(*v))
            .collect();
        for (&i, &mg) in d.boundary_indices().iter().zip(d.boundary_mass_diag()) {
            c[i] += mg * self.boundary.convex_d2(y[i]);
        }
        c
    }

    /// Residual of one step, interleaved as (eq_a, eq_b) per node.
    pub fn step_residual(&self, tau: f64, y_old: &[f64], y: &[f64], w: &[f64], u_new: &[f64]) -> Vec<f64> {
        let d = self.disc;
        let ops = &self.ops;
        let n = ops.nodes();
        let kw = ops.k.mul_vec(w);
        let ay = ops.a.mul_vec(y);
        let mut r = vec![0.0; 2 * n];
        for i in 0..n {
            r[2 * i] = ops.m[i] * (y[i] - y_old[i]) / tau + kw[i];
            r[2 * i + 1] = ops.b[i] * (y[i] - y_old[i]) / tau + ay[i]
                + ops.m[i] * (self.bulk.convex_d1(y[i]) + self.bulk.concave_d1(y_old[i]))
                - ops.m[i] * w[i];
        }
        for ((&i, &mg), &u) in d.boundary_indices().iter().zip(d.boundary_mass_diag()).zip(u_new) {
            r[2 * i + 1] += mg * (self.boundary.convex_d1(y[i]) + self.boundary.concave_d1(y_old[i]) - u);
        }
        r
    }

    fn step(&self, k: usize, tau: f64, y_old: &[f64], w_guess: &[f64], u_new: &[f64]) -> Result<(Vec<f64>, Vec<f64>, usize)> {
        let mut y = y_old.to_vec();
        let mut w = w_guess.to_vec();
        let mut res = self.step_residual(tau, y_old, &y, &w, u_new);
        let r0 = norm2(&res);
        let mut rn = r0;
        let converged = |rn: f64| rn <= self.opts.abs_tol || rn <= self.opts.rel_tol * r0;
        let mut it = 0;
        while !converged(rn) {
            if it == self.opts.max_iter {
                return Err(Error::StepFailure {
                    step: k + 1,
                    iterations: it,
                    residual: rn,
                    initial: r0,
                });
            }
            it += 1;
            let jac = self.ops.step_matrix(tau, &self.convex_curvature(&y));
            let rhs: Vec<f64> = res.iter().map(|v| -v).collect();
            let delta = jac.factor()?.solve(&rhs);
            let (dy, dw) = deinterleave(&delta);

            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..=self.opts.max_backtracks {
                let yt: Vec<f64> = y.iter().zip(&dy).map(|(a, b)| a + alpha * b).collect();
                let wt: Vec<f64> = w.iter().zip(&dw).map(|(a, b)| a + alpha * b).collect();
                let rt = self.step_residual(tau, y_old, &yt, &wt, u_new);
                let nt = norm2(&rt);
                if !nt.is_finite() {
                    alpha *= 0.5;
                    continue;
                }
                if nt < rn || converged(nt) {
                    y = yt;
                    w = wt;
                    res = rt;
                    rn = nt;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                return Err(Error::StepFailure {
                    step: k + 1,
                    iterations: it,
                    residual: rn,
                    initial: r0,
                });
            }
        }
        if !(y.iter().all(|v| v.is_finite()) && w.iter().all(|v| v.is_finite())) {
            return Err(Error::Solver(format!("non-finite state at step {}", k + 1)));
        }
        Ok((y, w, it))
    }

    pub fn solve(&self, y0: &Field, u: &SpaceTimeControl, grid: &TimeGrid) -> Result<StateTrajectory> {
        let d = self.disc;
        d.check_field(y0, "initial datum")?;
        u.check(d, grid)?;
        let tau = grid.tau();
        let mut y = Vec::with_capacity(grid.steps() + 1);
        let mut w = Vec::with_capacity(grid.steps());
        let mut its = Vec::with_capacity(grid.steps());
        y.push(y0.clone());
        let mut w_prev = vec![0.0; d.bulk_nodes()];
        for k in 0..grid.steps() {
            let (yn, wn, it) = self.step(k, tau, &y[k], &w_prev, &u.values[k + 1])?;
            w_prev.clone_from(&wn);
            y.push(Field(yn));
            w.push(Field(wn));
            its.push(it);
        }
        let y_gamma = y.iter().map(|v| d.trace_unchecked(v)).collect();
        Ok(StateTrajectory {
            y,
            y_gamma,
            w,
            m0: d.mean_value(y0)?,
            newton_iterations: its,
        })
    }

    /// Largest step residual (max norm) of a stored trajectory.
    pub fn max_residual(&self, traj: &StateTrajectory, u: &SpaceTimeControl, grid: &TimeGrid) -> f64 {
        let tau = grid.tau();
        (0..grid.steps())
            .map(|k| {
                self.step_residual(tau, &traj.y[k], &traj.y[k + 1], &traj.w[k], &u.values[k + 1])
                    .iter()
                    .fold(0.0_f64, |m, v| m.max(v.abs()))
            })
            .fold(0.0, f64::max)
    }
}

/// Runs the forward solver once.
pub fn solve_state(
    d: &Discretization,
    pots: &PotentialPair,
    y0: &Field,
    u: &SpaceTimeControl,
    grid: &TimeGrid,
    opts: NewtonOptions,
) -> Result<StateTrajectory> {
    StateSolver::new(d, pots, opts)?.solve(y0, u, grid)
}

/// `½yᵀKy + ½y_ΓᵀK_Γy_Γ + 1ᵀM f(y) + 1ᵀM_Γ f_Γ(y_Γ)`.
pub fn free_energy(d: &Discretization, pots: &PotentialPair, y: &Field, y_gamma: &BoundaryField) -> Result<f64> {
    d.check_field(y, "free_energy")?;
    d.check_boundary_field(y_gamma, "free_energy")?;
    if d.trace_unchecked(y) != *y_gamma {
        return invalid("boundary values do not match the trace of the bulk field");
    }
    Ok(energy_unchecked(d, pots, y, y_gamma))
}

fn energy_unchecked(d: &Discretization, pots: &PotentialPair, y: &[f64], g: &[f64]) -> f64 {
    let grad = 0.5 * d.stiffness().quad_form(y) + 0.5 * d.boundary_stiffness().quad_form(g);
    let bulk: f64 = d.mass_diag().iter().zip(y).map(|(m, v)| m * pots.bulk.d(*v, 0)).sum();
    let bnd: f64 = d
        .boundary_mass_diag()
        .iter()
        .zip(g)
        .map(|(m, v)| m * pots.boundary.d(*v, 0))
        .sum();
    grad + bulk + bnd
}

/// Aggregate of the state differences appearing in the continuous dependence
/// estimate, divided by `‖u₁ − u₂‖_{L²(Σ)}`:
///
/// `sqrt(sup‖δy‖²_* + sup‖δy_Γ‖²_Γ + ∫‖∇δy‖² + ∫‖∇_Γδy_Γ‖²)`.
pub fn continuous_dependence_ratio(
    d: &Discretization,
    pots: &PotentialPair,
    y0: &Field,
    u1: &SpaceTimeControl,
    u2: &SpaceTimeControl,
    grid: &TimeGrid,
    opts: NewtonOptions,
) -> Result<f64> {
    u1.check(d, grid)?;
    u2.check(d, grid)?;
    let du = sigma_norm(d, grid, &u1.sub(u2));
    if du == 0.0 {
        return invalid("controls coincide; the ratio is undefined");
    }
    let solver = StateSolver::new(d, pots, opts)?;
    let s1 = solver.solve(y0, u1, grid)?;
    let s2 = solver.solve(y0, u2, grid)?;
    state_difference_aggregate(d, grid, &s1, &s2).map(|num| num / du)
}

/// Numerator of [`continuous_dependence_ratio`].
pub fn state_difference_aggregate(d: &Discretization, grid: &TimeGrid, s1: &StateTrajectory, s2: &StateTrajectory) -> Result<f64> {
    let neumann = NeumannSolver::new(d)?;
    let mut sup_dual: f64 = 0.0;
    let mut sup_gamma: f64 = 0.0;
    let mut grad: f64 = 0.0;
    for k in 0..=grid.steps() {
        let dy = s1.y[k].sub(&s2.y[k]);
        let dg = s1.y_gamma[k].sub(&s2.y_gamma[k]);
        let zm = ZeroMeanField::project(d, &dy)?;
        let nd = neumann.dual_norm(&zm)?;
        sup_dual = sup_dual.max(nd * nd);
        sup_gamma = sup_gamma.max(d.inner_boundary(&dg, &dg));
        grad += grid.weight(k) * (d.stiffness().quad_form(&dy) + d.boundary_stiffness().quad_form(&dg));
    }
    Ok((sup_dual + sup_gamma + grad).sqrt())
}

/// `‖∇(M⁻¹ K y₀)‖²`, a discrete stand-in for the norm of `∇Δy₀`.
pub fn initial_regularity_indicator(d: &Discretization, y0: &Field) -> Result<f64> {
    d.check_field(y0, "initial datum")?;
    let lap: Vec<f64> = d
        .stiffness()
        .mul_vec(y0)
        .iter()
        .zip(d.mass_diag())
        .map(|(v, m)| v / m)
        .collect();
    Ok(d.stiffness().quad_form(&lap))
}

/// Growth factor of the regularity indicator between a mesh and its
/// refinement above which the initial datum is flagged as rough.
pub const REGULARITY_GROWTH_WARNING: f64 = 2.5;
