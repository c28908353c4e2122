//! Linearized and adjoint solvers on the state's space-time grid.
//!
//! The linearized step is the exact derivative of one state step: with
//! `Sᵏ = [[M/τ, K], [B/τ + A + Dᵏ, −M]]` and `Dᵏ` the convex curvature at
//! `ȳᵏ`,
//!
//! ```text
//! Sᵏ (ξᵏ, ηᵏ) = (M ξᵏ⁻¹/τ, (B/τ + E) ξᵏ⁻¹ + Tᵀ M_Γ hᵏ),   ξ⁰ = 0,
//! ```
//!
//! where `E = ρM + ρ_Γ B` carries the explicit concave part. The adjoint
//! steps with `(Sᵏ)ᵀ` backwards in time, so the duality identity holds to
//! linear-solver precision.

use crate::discretization::{BoundaryField, Discretization, Field};
use crate::error::{invalid, Result};
use crate::potentials::{PotentialPair, DEFAULT_VALIDATION_RANGE};
use crate::state::{deinterleave, interleave, SpaceTimeControl, StateTrajectory, StepOperators, TimeGrid};

/// Relative tolerance of the terminal compatibility check.
pub const COMPATIBILITY_TOLERANCE: f64 = 1e-8;

/// Second derivatives of the potentials along a base trajectory.
#[derive(Debug, Clone)]
pub struct CoefficientFields {
    /// `f''(ȳᵏ)`, k = 0..N
    pub lam: Vec<Field>,
    /// `f_Γ''(ȳ_Γᵏ)`, k = 0..N
    pub lam_gamma: Vec<BoundaryField>,
    /// Concave shift of the bulk split.
    pub rho: f64,
    /// Concave shift of the boundary split.
    pub rho_gamma: f64,
}

impl CoefficientFields {
    pub fn levels(&self) -> usize {
        self.lam.len()
    }

    fn check(&self, d: &Discretization, grid: &TimeGrid) -> Result<()> {
        if self.lam.len() != grid.steps() + 1 || self.lam_gamma.len() != grid.steps() + 1 {
            return invalid(format!(
                "coefficients have {} levels, grid needs {}",
                self.lam.len(),
                grid.steps() + 1
            ));
        }
        for (l, g) in self.lam.iter().zip(&self.lam_gamma) {
            d.check_field(l, "coefficient")?;
            d.check_boundary_field(g, "boundary coefficient")?;
        }
        Ok(())
    }

    /// Diagonal of `Dᵏ = M (λᵏ + ρ) + Tᵀ M_Γ (λ_Γᵏ + ρ_Γ) T`.
    fn curvature(&self, d: &Discretization, k: usize) -> Vec<f64> {
        let mut c: Vec<f64> = self.lam[k]
            .iter()
            .zip(d.mass_diag())
            .map(|(l, m)| m * (l + self.rho))
            .collect();
        for ((&i, &mg), l) in d
            .boundary_indices()
            .iter()
            .zip(d.boundary_mass_diag())
            .zip(self.lam_gamma[k].iter())
        {
            c[i] += mg * (l + self.rho_gamma);
        }
        c
    }

    /// Diagonal of `B/τ + E`.
    fn explicit_block(&self, ops: &StepOperators, tau: f64) -> Vec<f64> {
        ops.m
            .iter()
            .zip(&ops.b)
            .map(|(m, b)| b / tau + self.rho * m + self.rho_gamma * b)
            .collect()
    }
}

pub fn build_coefficients(pots: &PotentialPair, traj: &StateTrajectory) -> Result<CoefficientFields> {
    let rho = pots.bulk_split(DEFAULT_VALIDATION_RANGE)?.rho;
    let rho_gamma = pots.boundary_split(DEFAULT_VALIDATION_RANGE)?.rho;
    Ok(CoefficientFields {
        lam: traj
            .y
            .iter()
            .map(|y| Field(y.iter().map(|v| pots.bulk.d(*v, 2)).collect()))
            .collect(),
        lam_gamma: traj
            .y_gamma
            .iter()
            .map(|y| BoundaryField(y.iter().map(|v| pots.boundary.d(*v, 2)).collect()))
            .collect(),
        rho,
        rho_gamma,
    })
}

#[derive(Debug, Clone)]
pub struct LinearizedTrajectory {
    /// k = 0..N, with `xi[0] = 0`.
    pub xi: Vec<Field>,
    pub xi_gamma: Vec<BoundaryField>,
    /// k = 1..N (`eta[k-1]` belongs to t_k).
    pub eta: Vec<Field>,
}

pub fn solve_linearized(
    d: &Discretization,
    coeffs: &CoefficientFields,
    h: &SpaceTimeControl,
    grid: &TimeGrid,
) -> Result<LinearizedTrajectory> {
    coeffs.check(d, grid)?;
    h.check(d, grid)?;
    let ops = StepOperators::new(d);
    let tau = grid.tau();
    let n = d.bulk_nodes();
    let explicit = coeffs.explicit_block(&ops, tau);
    let mut xi = vec![Field::zeros(n)];
    let mut eta = Vec::with_capacity(grid.steps());
    for k in 1..=grid.steps() {
        let prev = &xi[k - 1];
        let mut rhs_b: Vec<f64> = prev.iter().zip(&explicit).map(|(x, e)| e * x).collect();
        let src = d.trace_transpose(
            &h.values[k]
                .iter()
                .zip(d.boundary_mass_diag())
                .map(|(v, m)| v * m)
                .collect::<Vec<_>>(),
        );
        for (r, s) in rhs_b.iter_mut().zip(src.iter()) {
            *r += s;
        }
        let rhs_a: Vec<f64> = prev.iter().zip(&ops.m).map(|(x, m)| m * x / tau).collect();
        let lu = ops.step_matrix(tau, &coeffs.curvature(d, k)).factor()?;
        let (x, e) = deinterleave(&lu.solve(&interleave(&rhs_a, &rhs_b)));
        let x = Field(x);
        if !x.is_finite() || e.iter().any(|v| !v.is_finite()) {
            return Err(crate::Error::Solver(format!("non-finite linearized state at step {k}")));
        }
        xi.push(x);
        eta.push(Field(e));
    }
    let xi_gamma = xi.iter().map(|v| d.trace_unchecked(v)).collect();
    Ok(LinearizedTrajectory { xi, xi_gamma, eta })
}

/// Nonnegative weights of the tracking cost.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostWeights {
    pub b_q: f64,
    pub b_sigma: f64,
    pub b_omega: f64,
    pub b_gamma: f64,
    pub b0: f64,
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.b_q, self.b_sigma, self.b_omega, self.b_gamma, self.b0];
        if all.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return invalid("cost weights must be finite and nonnegative");
        }
        if all.iter().all(|b| *b == 0.0) {
            return invalid("cost weights must not all be zero");
        }
        Ok(())
    }

    pub fn has_terminal_terms(&self) -> bool {
        self.b_omega > 0.0 || self.b_gamma > 0.0
    }
}

/// Targets and weights of the tracking cost.
#[derive(Debug, Clone)]
pub struct TrackingData {
    /// Bulk target at t_0..t_N.
    pub z_q: Vec<Field>,
    /// Boundary target at t_0..t_N.
    pub z_sigma: Vec<BoundaryField>,
    pub z_omega: Field,
    pub z_gamma: BoundaryField,
    pub weights: CostWeights,
}

impl TrackingData {
    /// Time-independent targets.
    pub fn stationary(d: &Discretization, grid: &TimeGrid, z: &Field, weights: CostWeights) -> Result<Self> {
        d.check_field(z, "target")?;
        let zg = d.trace_unchecked(z);
        Ok(Self {
            z_q: vec![z.clone(); grid.steps() + 1],
            z_sigma: vec![zg.clone(); grid.steps() + 1],
            z_omega: z.clone(),
            z_gamma: zg,
            weights,
        })
    }

    /// Targets equal to a given trajectory, so every residual vanishes on it.
    pub fn from_trajectory(traj: &StateTrajectory, weights: CostWeights) -> Self {
        Self {
            z_q: traj.y.clone(),
            z_sigma: traj.y_gamma.clone(),
            z_omega: traj.y.last().cloned().unwrap_or_default(),
            z_gamma: traj.y_gamma.last().cloned().unwrap_or_default(),
            weights,
        }
    }

    /// Replaces the terminal targets so that, at `traj`, the terminal
    /// residuals are `φ_Ω = 𝒩Φ + c` and `φ_Γ = TΦ` for a zero-mean `Φ`.
    pub fn with_compatible_terminal(
        mut self,
        d: &Discretization,
        traj: &StateTrajectory,
        big_phi: &crate::neumann::ZeroMeanField,
        offset: f64,
        b_omega: f64,
        b_gamma: f64,
    ) -> Result<Self> {
        if !(b_omega > 0.0 && b_gamma > 0.0) {
            return invalid("compatible terminal data needs positive terminal weights");
        }
        let phi_omega = crate::neumann::NeumannSolver::new(d)?
            .solve(big_phi)?
            .into_inner()
            .axpy(offset, &Field::constant(d.bulk_nodes(), 1.0));
        let phi_gamma = d.trace(big_phi)?;
        let y_t = traj.y.last().expect("trajectory has levels");
        let yg_t = traj.y_gamma.last().expect("trajectory has levels");
        self.z_omega = y_t.axpy(-1.0 / b_omega, &phi_omega);
        self.z_gamma = yg_t.axpy(-1.0 / b_gamma, &phi_gamma);
        self.weights.b_omega = b_omega;
        self.weights.b_gamma = b_gamma;
        Ok(self)
    }

    pub fn check(&self, d: &Discretization, grid: &TimeGrid) -> Result<()> {
        self.weights.validate()?;
        if self.z_q.len() != grid.steps() + 1 || self.z_sigma.len() != grid.steps() + 1 {
            return invalid("tracking targets do not match the time grid");
        }
        for z in &self.z_q {
            d.check_field(z, "bulk target")?;
        }
        for z in &self.z_sigma {
            d.check_boundary_field(z, "boundary target")?;
        }
        d.check_field(&self.z_omega, "terminal target")?;
        d.check_boundary_field(&self.z_gamma, "terminal boundary target")
    }

    /// Residual sources `φ` at a trajectory.
    pub fn sources(&self, traj: &StateTrajectory) -> Sources {
        let w = self.weights;
        let n = traj.y.len() - 1;
        Sources {
            phi_q: traj.y.iter().zip(&self.z_q).map(|(y, z)| y.sub(z).scaled(w.b_q)).collect(),
            phi_sigma: traj
                .y_gamma
                .iter()
                .zip(&self.z_sigma)
                .map(|(y, z)| y.sub(z).scaled(w.b_sigma))
                .collect(),
            phi_omega: traj.y[n].sub(&self.z_omega).scaled(w.b_omega),
            phi_gamma: traj.y_gamma[n].sub(&self.z_gamma).scaled(w.b_gamma),
        }
    }
}

/// `φ_Q = b_Q(ȳ − z_Q)`, `φ_Σ`, `φ_Ω`, `φ_Γ` at one trajectory.
#[derive(Debug, Clone)]
pub struct Sources {
    pub phi_q: Vec<Field>,
    pub phi_sigma: Vec<BoundaryField>,
    pub phi_omega: Field,
    pub phi_gamma: BoundaryField,
}

impl Sources {
    /// `Σ_k ω_k (φ_Qᵀ M ξ + φ_Σᵀ M_Γ ξ_Γ) + φ_Ωᵀ M ξ(T) + φ_Γᵀ M_Γ ξ_Γ(T)`.
    pub fn observe(&self, d: &Discretization, grid: &TimeGrid, xi: &[Field], xi_gamma: &[BoundaryField]) -> f64 {
        let n = grid.steps();
        let running: f64 = (0..=n)
            .map(|k| {
                grid.weight(k)
                    * (d.inner(&self.phi_q[k], &xi[k]) + d.inner_boundary(&self.phi_sigma[k], &xi_gamma[k]))
            })
            .sum();
        running + d.inner(&self.phi_omega, &xi[n]) + d.inner_boundary(&self.phi_gamma, &xi_gamma[n])
    }
}

/// Adjoint fields stored as Σ-Riesz representatives: `q_Γᵏ` is the gradient
/// density at t_k, so `∫_Σ q_Γ h` uses the trapezoid weights.
#[derive(Debug, Clone)]
pub struct AdjointTrajectory {
    /// k = 0..N; level 0 is zero since u⁰ does not enter the scheme.
    pub p: Vec<Field>,
    pub q: Vec<Field>,
    pub q_gamma: Vec<BoundaryField>,
    /// Terminal value of p.
    pub p_final: Field,
    /// Terminal value of q, zero-mean with `K p_final = M q_final`.
    pub q_final: Field,
    /// Terminal value of q_Γ, the trace of `q_final`.
    pub q_gamma_final: BoundaryField,
    pub sources: Sources,
}

/// Checks the terminal compatibility condition and returns `Φ = M⁻¹ K φ_Ω`.
fn compatible_terminal(d: &Discretization, src: &Sources) -> Result<Field> {
    let big_phi = Field(
        d.stiffness()
            .mul_vec(&src.phi_omega)
            .iter()
            .zip(d.mass_diag())
            .map(|(v, m)| v / m)
            .collect(),
    );
    let tr = d.trace_unchecked(&big_phi);
    let scale = 1.0_f64.max(tr.max_abs()).max(src.phi_gamma.max_abs());
    let mismatch = tr.sub(&src.phi_gamma).max_abs();
    if mismatch > COMPATIBILITY_TOLERANCE * scale {
        return invalid(format!(
            "terminal data are incompatible: the boundary residual must equal the trace of \
             M⁻¹K applied to the bulk residual (mismatch {mismatch:.3e}); use zero terminal \
             weights or targets built from a zero-mean Φ"
        ));
    }
    Ok(big_phi)
}

pub fn solve_adjoint(
    d: &Discretization,
    coeffs: &CoefficientFields,
    data: &TrackingData,
    traj: &StateTrajectory,
    grid: &TimeGrid,
) -> Result<AdjointTrajectory> {
    adjoint_sweep(d, coeffs, data, traj, grid, false)
}

/// Backward sweep; `assembled` factors the explicit transpose of each step
/// matrix instead of reusing the forward factors.
fn adjoint_sweep(
    d: &Discretization,
    coeffs: &CoefficientFields,
    data: &TrackingData,
    traj: &StateTrajectory,
    grid: &TimeGrid,
    assembled: bool,
) -> Result<AdjointTrajectory> {
    coeffs.check(d, grid)?;
    data.check(d, grid)?;
    if traj.y.len() != grid.steps() + 1 {
        return invalid("trajectory does not match the time grid");
    }
    let sources = data.sources(traj);
    let q_final = compatible_terminal(d, &sources)?;

    let ops = StepOperators::new(d);
    let tau = grid.tau();
    let n = d.bulk_nodes();
    let steps = grid.steps();
    let explicit = coeffs.explicit_block(&ops, tau);

    // Multipliers (a, b) of the two step equations; `b` is the q variable
    // before division by the time weight.
    let mut a = vec![vec![0.0; n]; steps + 1];
    let mut b = vec![vec![0.0; n]; steps + 1];
    for k in (1..=steps).rev() {
        let wk = grid.weight(k);
        let obs = d.trace_transpose(
            &sources.phi_sigma[k]
                .iter()
                .zip(d.boundary_mass_diag())
                .map(|(v, m)| v * m)
                .collect::<Vec<_>>(),
        );
        let mut rhs_x: Vec<f64> = (0..n)
            .map(|i| wk * (ops.m[i] * sources.phi_q[k][i] + obs[i]))
            .collect();
        if k == steps {
            let term = d.trace_transpose(
                &sources
                    .phi_gamma
                    .iter()
                    .zip(d.boundary_mass_diag())
                    .map(|(v, m)| v * m)
                    .collect::<Vec<_>>(),
            );
            for i in 0..n {
                rhs_x[i] += ops.m[i] * sources.phi_omega[i] + term[i];
            }
        } else {
            for i in 0..n {
                rhs_x[i] += ops.m[i] * a[k + 1][i] / tau + explicit[i] * b[k + 1][i];
            }
        }
        let rhs_e = vec![0.0; n];
        let s = ops.step_matrix(tau, &coeffs.curvature(d, k));
        let rhs = interleave(&rhs_x, &rhs_e);
        let sol = if assembled {
            s.transpose().factor()?.solve(&rhs)
        } else {
            s.factor()?.solve_transpose(&rhs)
        };
        let (ak, bk) = deinterleave(&sol);
        if ak.iter().chain(&bk).any(|v| !v.is_finite()) {
            return Err(crate::Error::Solver(format!("non-finite adjoint at step {k}")));
        }
        a[k] = ak;
        b[k] = bk;
    }

    let p: Vec<Field> = (0..=steps)
        .map(|k| if k == 0 { Field::zeros(n) } else { Field(a[k].clone()).scaled(1.0 / grid.weight(k)) })
        .collect();
    let q: Vec<Field> = (0..=steps)
        .map(|k| if k == 0 { Field::zeros(n) } else { Field(b[k].clone()).scaled(1.0 / grid.weight(k)) })
        .collect();
    let q_gamma = q.iter().map(|v| d.trace_unchecked(v)).collect();
    Ok(AdjointTrajectory {
        p,
        q,
        q_gamma,
        p_final: sources.phi_omega.clone(),
        q_gamma_final: d.trace_unchecked(&q_final),
        q_final,
        sources,
    })
}

/// `|∫_Σ q_Γ h − (φ-terms against ξ)| / (1 + |φ-terms|)`.
pub fn duality_gap(
    d: &Discretization,
    lin: &LinearizedTrajectory,
    adj: &AdjointTrajectory,
    h: &SpaceTimeControl,
    grid: &TimeGrid,
) -> Result<f64> {
    let levels = grid.steps() + 1;
    if lin.xi.len() != levels || adj.q_gamma.len() != levels {
        return invalid("linearized and adjoint trajectories must share the time grid");
    }
    h.check(d, grid)?;
    let lhs: f64 = (0..levels)
        .map(|k| grid.weight(k) * d.inner_boundary(&adj.q_gamma[k], &h.values[k]))
        .sum();
    let rhs = adj.sources.observe(d, grid, &lin.xi, &lin.xi_gamma);
    Ok((lhs - rhs).abs() / (1.0 + rhs.abs()))
}
