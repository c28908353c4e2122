//! Inverse of the zero-flux Laplacian on mean-free data and the induced dual norm.

use std::ops::Deref;

use crate::banded::{BandedLu, BandedMatrix};
use crate::discretization::{Discretization, Field};
use crate::error::{invalid, Result};

/// Relative tolerance on the mean of an admissible datum.
pub const MEAN_TOLERANCE: f64 = 1e-10;

/// A bulk field with vanishing M-weighted mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroMeanField(Field);

impl ZeroMeanField {
    /// Accepts `v` if its mean is zero to `MEAN_TOLERANCE` relative to `max|v|`.
    pub fn new(d: &Discretization, v: Field) -> Result<Self> {
        d.check_field(&v, "zero-mean field")?;
        let mean = d.mean_value(&v)?;
        if mean.abs() > MEAN_TOLERANCE * v.max_abs().max(f64::MIN_POSITIVE) {
            return invalid(format!("datum has mean {mean:.3e}, expected zero"));
        }
        Ok(Self(v))
    }

    /// Subtracts the mean.
    pub fn project(d: &Discretization, v: &Field) -> Result<Self> {
        let mean = d.mean_value(v)?;
        Ok(Self(Field(v.iter().map(|x| x - mean).collect())))
    }

    pub fn into_inner(self) -> Field {
        self.0
    }
}

impl Deref for ZeroMeanField {
    type Target = Field;
    fn deref(&self) -> &Field {
        &self.0
    }
}

/// Factored Neumann operator.
///
/// `K v = M v*` is consistent whenever `1ᵀ M v* = 0`; the system is made
/// regular by fixing the value at node 0, and the mean is removed afterwards.
/// The factor is immutable so a solver can be shared across threads.
#[derive(Debug, Clone)]
pub struct NeumannSolver<'a> {
    disc: &'a Discretization,
    lu: BandedLu,
}

impl<'a> NeumannSolver<'a> {
    pub fn new(disc: &'a Discretization) -> Result<Self> {
        let n = disc.bulk_nodes();
        let bw = disc.node_bandwidth();
        let mut a = BandedMatrix::zeros(n, bw, bw);
        for (r, c, v) in disc.stiffness().triplets() {
            if r != 0 && c != 0 {
                a.add(r, c, v);
            }
        }
        a.add(0, 0, 1.0);
        Ok(Self { disc, lu: a.factor()? })
    }

    pub fn discretization(&self) -> &Discretization {
        self.disc
    }

    /// Returns `v` with `K v = M v*` and zero mean.
    pub fn solve(&self, v_star: &ZeroMeanField) -> Result<ZeroMeanField> {
        let d = self.disc;
        d.check_field(v_star, "neumann datum")?;
        let mut rhs: Vec<f64> = v_star.iter().zip(d.mass_diag()).map(|(v, m)| v * m).collect();
        rhs[0] = 0.0;
        let v = Field(self.lu.solve(&rhs));
        if !v.is_finite() {
            return Err(crate::Error::Solver("Neumann solve produced non-finite values".into()));
        }
        ZeroMeanField::project(d, &v)
    }

    /// Convenience wrapper validating the mean of a plain field first.
    pub fn solve_field(&self, v_star: &Field) -> Result<ZeroMeanField> {
        let z = ZeroMeanField::new(self.disc, v_star.clone())?;
        self.solve(&z)
    }

    /// `‖v*‖_* = ‖∇𝒩v*‖`, evaluated as `sqrt((𝒩v*)ᵀ K 𝒩v*)`.
    pub fn dual_norm(&self, v_star: &ZeroMeanField) -> Result<f64> {
        let v = self.solve(v_star)?;
        Ok(self.disc.stiffness().quad_form(&v).max(0.0).sqrt())
    }

    /// `u*ᵀ M 𝒩 v*`, the duality pairing `⟨u*, 𝒩v*⟩`.
    pub fn pairing(&self, u_star: &ZeroMeanField, v_star: &ZeroMeanField) -> Result<f64> {
        let nv = self.solve(v_star)?;
        Ok(self.disc.inner(u_star, &nv))
    }
}

/// One-shot helper: `𝒩 v*`.
pub fn solve_neumann(d: &Discretization, v_star: &ZeroMeanField) -> Result<ZeroMeanField> {
    NeumannSolver::new(d)?.solve(v_star)
}

/// One-shot helper: `‖v*‖_*`.
pub fn dual_norm(d: &Discretization, v_star: &ZeroMeanField) -> Result<f64> {
    NeumannSolver::new(d)?.dual_norm(v_star)
}
