//! Uniform meshes of the unit interval and the unit square together with the
//! lumped mass, stiffness and boundary (Laplace-Beltrami) operators of the weak
//! formulation.
//!
//! The bulk stiffness `K` is assembled edge by edge with integer weights
//! divided by powers of `h`, so `K·1 = 0` and `K_Γ·1 = 0` hold exactly.

use std::fmt;
use std::ops::{Deref, DerefMut};

use crate::error::{invalid, Result};
use crate::sparse::CsrMatrix;

/// Nodal values over the bulk nodes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Field(pub Vec<f64>);

/// Nodal values over the boundary nodes, in boundary enumeration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundaryField(pub Vec<f64>);

macro_rules! nodal_vector {
    ($t:ident) => {
        impl $t {
            pub fn zeros(len: usize) -> Self {
                Self(vec![0.0; len])
            }

            pub fn constant(len: usize, c: f64) -> Self {
                Self(vec![c; len])
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }

            pub fn max_abs(&self) -> f64 {
                self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
            }

            pub fn scaled(&self, c: f64) -> Self {
                Self(self.0.iter().map(|v| c * v).collect())
            }

            /// `self + c·other`
            pub fn axpy(&self, c: f64, other: &Self) -> Self {
                assert_eq!(self.0.len(), other.0.len());
                Self(self.0.iter().zip(&other.0).map(|(a, b)| a + c * b).collect())
            }

            pub fn sub(&self, other: &Self) -> Self {
                self.axpy(-1.0, other)
            }
        }

        impl Deref for $t {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl DerefMut for $t {
            fn deref_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }

        impl From<Vec<f64>> for $t {
            fn from(v: Vec<f64>) -> Self {
                Self(v)
            }
        }
    };
}

nodal_vector!(Field);
nodal_vector!(BoundaryField);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    One,
    Two,
}

impl Dimension {
    pub fn as_usize(self) -> usize {
        match self {
            Dimension::One => 1,
            Dimension::Two => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Discretization {
    dimension: Dimension,
    n: usize,
    h: f64,
    coords: Vec<[f64; 2]>,
    boundary: Vec<usize>,
    mass: Vec<f64>,
    stiffness: CsrMatrix,
    boundary_mass: Vec<f64>,
    boundary_stiffness: CsrMatrix,
    node_bandwidth: usize,
}

/// Uniform mesh of Ω = (0, 1) with Γ = {0, 1}.
///
/// Γ consists of two isolated points, so the Laplace-Beltrami operator is zero
/// and `M_Γ` is the counting measure.
pub fn build_interval_mesh(n: usize) -> Result<Discretization> {
    if n < 2 {
        return invalid(format!("interval mesh needs n >= 2 cells, got {n}"));
    }
    let h = 1.0 / n as f64;
    let nodes = n + 1;
    let coords = (0..nodes).map(|i| [i as f64 * h, 0.0]).collect();
    let mut mass = vec![h; nodes];
    mass[0] = 0.5 * h;
    mass[n] = 0.5 * h;

    let mut trip = Vec::with_capacity(4 * n);
    for e in 0..n {
        push_edge(&mut trip, e, e + 1, 1.0 / h);
    }
    Ok(Discretization {
        dimension: Dimension::One,
        n,
        h,
        coords,
        boundary: vec![0, n],
        mass,
        stiffness: CsrMatrix::from_triplets(nodes, nodes, &trip),
        boundary_mass: vec![1.0, 1.0],
        boundary_stiffness: CsrMatrix::zeros(2),
        node_bandwidth: 1,
    })
}

/// Uniform tensor grid of Ω = (0, 1)², nodes numbered `j·(n+1) + i`.
///
/// The bulk stiffness is the five-point stencil written as a sum over grid
/// edges (weight 1 inside, ½ along Γ). Boundary nodes run counterclockwise
/// from the origin and `K_Γ` is the periodic second difference in arc length.
pub fn build_square_mesh(n: usize) -> Result<Discretization> {
    if n < 2 {
        return invalid(format!("square mesh needs n >= 2 cells per side, got {n}"));
    }
    let h = 1.0 / n as f64;
    let side = n + 1;
    let nodes = side * side;
    let id = |i: usize, j: usize| j * side + i;

    let mut coords = Vec::with_capacity(nodes);
    let mut mass = Vec::with_capacity(nodes);
    for j in 0..side {
        for i in 0..side {
            coords.push([i as f64 * h, j as f64 * h]);
            let wx = if i == 0 || i == n { 0.5 } else { 1.0 };
            let wy = if j == 0 || j == n { 0.5 } else { 1.0 };
            mass.push(wx * wy * h * h);
        }
    }

    let mut trip = Vec::new();
    for j in 0..side {
        for i in 0..n {
            let w = if j == 0 || j == n { 0.5 } else { 1.0 };
            push_edge(&mut trip, id(i, j), id(i + 1, j), w);
        }
    }
    for i in 0..side {
        for j in 0..n {
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            push_edge(&mut trip, id(i, j), id(i, j + 1), w);
        }
    }

    let mut boundary = Vec::with_capacity(4 * n);
    boundary.extend((0..n).map(|i| id(i, 0)));
    boundary.extend((0..n).map(|j| id(n, j)));
    boundary.extend((1..=n).rev().map(|i| id(i, n)));
    boundary.extend((1..=n).rev().map(|j| id(0, j)));

    let nb = boundary.len();
    let mut btrip = Vec::with_capacity(4 * nb);
    for k in 0..nb {
        push_edge(&mut btrip, k, (k + 1) % nb, 1.0 / h);
    }

    Ok(Discretization {
        dimension: Dimension::Two,
        n,
        h,
        coords,
        boundary,
        mass,
        stiffness: CsrMatrix::from_triplets(nodes, nodes, &trip),
        boundary_mass: vec![h; nb],
        boundary_stiffness: CsrMatrix::from_triplets(nb, nb, &btrip),
        node_bandwidth: side,
    })
}

fn push_edge(trip: &mut Vec<(usize, usize, f64)>, a: usize, b: usize, w: f64) {
    trip.push((a, a, w));
    trip.push((b, b, w));
    trip.push((a, b, -w));
    trip.push((b, a, -w));
}

impl Discretization {
    pub fn dimension(&self) -> Dimension {
        self.dimension
    }

    pub fn cells_per_side(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn bulk_nodes(&self) -> usize {
        self.mass.len()
    }

    pub fn boundary_nodes(&self) -> usize {
        self.boundary.len()
    }

    /// Bulk indices of the boundary nodes.
    pub fn boundary_indices(&self) -> &[usize] {
        &self.boundary
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn boundary_coords(&self) -> Vec<[f64; 2]> {
        self.boundary.iter().map(|&i| self.coords[i]).collect()
    }

    /// Arc-length parameter of each boundary node (zero-based cumulative in 2D,
    /// the node index in 1D).
    pub fn boundary_arclength(&self) -> Vec<f64> {
        match self.dimension {
            Dimension::One => vec![0.0, 1.0],
            Dimension::Two => (0..self.boundary.len()).map(|k| k as f64 * self.h).collect(),
        }
    }

    /// Diagonal of the lumped bulk mass `M`.
    pub fn mass_diag(&self) -> &[f64] {
        &self.mass
    }

    /// Diagonal of the lumped boundary mass `M_Γ`.
    pub fn boundary_mass_diag(&self) -> &[f64] {
        &self.boundary_mass
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    pub fn boundary_stiffness(&self) -> &CsrMatrix {
        &self.boundary_stiffness
    }

    pub fn mass_matrix(&self) -> CsrMatrix {
        CsrMatrix::diagonal(&self.mass)
    }

    pub fn boundary_mass_matrix(&self) -> CsrMatrix {
        CsrMatrix::diagonal(&self.boundary_mass)
    }

    /// Maximum index distance between coupled bulk nodes.
    pub fn node_bandwidth(&self) -> usize {
        self.node_bandwidth
    }

    /// |Ω|
    pub fn omega_measure(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// |Γ|
    pub fn gamma_measure(&self) -> f64 {
        self.boundary_mass.iter().sum()
    }

    pub fn check_field(&self, v: &Field, what: &str) -> Result<()> {
        if v.len() != self.bulk_nodes() {
            return invalid(format!(
                "{what}: expected {} bulk values, got {}",
                self.bulk_nodes(),
                v.len()
            ));
        }
        if !v.is_finite() {
            return invalid(format!("{what}: non-finite entries"));
        }
        Ok(())
    }

    pub fn check_boundary_field(&self, v: &BoundaryField, what: &str) -> Result<()> {
        if v.len() != self.boundary_nodes() {
            return invalid(format!(
                "{what}: expected {} boundary values, got {}",
                self.boundary_nodes(),
                v.len()
            ));
        }
        if !v.is_finite() {
            return invalid(format!("{what}: non-finite entries"));
        }
        Ok(())
    }

    /// Restriction of a bulk field to the boundary nodes.
    pub fn trace(&self, v: &Field) -> Result<BoundaryField> {
        if v.len() != self.bulk_nodes() {
            return invalid(format!(
                "trace: expected {} bulk values, got {}",
                self.bulk_nodes(),
                v.len()
            ));
        }
        Ok(self.trace_unchecked(v))
    }

    pub(crate) fn trace_unchecked(&self, v: &[f64]) -> BoundaryField {
        BoundaryField(self.boundary.iter().map(|&i| v[i]).collect())
    }

    /// Transpose of the trace map: scatters boundary values into a zero bulk field.
    pub fn trace_transpose(&self, g: &[f64]) -> Field {
        assert_eq!(g.len(), self.boundary_nodes());
        let mut out = Field::zeros(self.bulk_nodes());
        for (&i, &v) in self.boundary.iter().zip(g) {
            out[i] += v;
        }
        out
    }

    /// `1ᵀ M v`
    pub fn integrate(&self, v: &[f64]) -> f64 {
        self.mass.iter().zip(v).map(|(m, x)| m * x).sum()
    }

    /// `1ᵀ M_Γ g`
    pub fn integrate_boundary(&self, g: &[f64]) -> f64 {
        self.boundary_mass.iter().zip(g).map(|(m, x)| m * x).sum()
    }

    /// `uᵀ M v`
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.mass.iter().zip(u).zip(v).map(|((m, a), b)| m * a * b).sum()
    }

    /// `uᵀ M_Γ v`
    pub fn inner_boundary(&self, u: &[f64], v: &[f64]) -> f64 {
        self.boundary_mass
            .iter()
            .zip(u)
            .zip(v)
            .map(|((m, a), b)| m * a * b)
            .sum()
    }

    /// Generalized mean value `(1ᵀ M v) / |Ω|`.
    pub fn mean_value(&self, v: &Field) -> Result<f64> {
        if v.len() != self.bulk_nodes() {
            return invalid(format!(
                "mean_value: expected {} bulk values, got {}",
                self.bulk_nodes(),
                v.len()
            ));
        }
        Ok(self.integrate(v) / self.omega_measure())
    }

    /// Samples `f(x, y)` at the bulk nodes (y = 0 in 1D).
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Field {
        Field(self.coords.iter().map(|c| f(c[0], c[1])).collect())
    }

    pub fn sample_boundary(&self, f: impl Fn(f64, f64) -> f64) -> BoundaryField {
        BoundaryField(self.boundary.iter().map(|&i| f(self.coords[i][0], self.coords[i][1])).collect())
    }

    /// Named operators for coordinate-format export.
    pub fn operators(&self) -> Vec<(&'static str, CsrMatrix)> {
        vec![
            ("mass", self.mass_matrix()),
            ("stiffness", self.stiffness.clone()),
            ("boundary_mass", self.boundary_mass_matrix()),
            ("boundary_stiffness", self.boundary_stiffness.clone()),
        ]
    }
}

impl fmt::Display for Discretization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "dimension={} n={} h={:.6e} bulk_nodes={} boundary_nodes={}",
            self.dimension.as_usize(),
            self.n,
            self.h,
            self.bulk_nodes(),
            self.boundary_nodes()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn rejects_coarse_meshes() {
        assert!(build_interval_mesh(1).is_err());
        assert!(build_square_mesh(0).is_err());
    }

    #[test]
    fn interval_constant_kernel() {
        let d = build_interval_mesh(2).unwrap();
        assert_eq!(d.stiffness().mul_vec(&[1.0, 1.0, 1.0]), vec![0.0, 0.0, 0.0]);
        assert_eq!(d.boundary_nodes(), 2);
        assert_eq!(d.boundary_stiffness().quad_form(&[3.0, -1.0]), 0.0);
        assert_eq!(d.boundary_mass_diag(), &[1.0, 1.0]);
    }

    #[test]
    fn interval_measure() {
        let d = build_interval_mesh(4).unwrap();
        assert!((d.omega_measure() - 1.0).abs() < 1e-12);
        assert!((d.gamma_measure() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn interval_dirichlet_energy_of_cosine() {
        let d = build_interval_mesh(32).unwrap();
        let v = d.sample(|x, _| (PI * x).cos());
        let e = d.stiffness().quad_form(&v);
        let exact = PI * PI / 2.0;
        assert!((e - exact).abs() / exact < 0.01, "{e} vs {exact}");
    }

    #[test]
    fn square_boundary_count_and_kernel() {
        let d = build_square_mesh(2).unwrap();
        assert_eq!(d.boundary_nodes(), 8);
        let ones = vec![1.0; 8];
        assert!(d.boundary_stiffness().mul_vec(&ones).iter().all(|&v| v == 0.0));
        let ones = vec![1.0; d.bulk_nodes()];
        assert!(d.stiffness().mul_vec(&ones).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn square_perimeter_and_area() {
        let d = build_square_mesh(4).unwrap();
        assert!((d.gamma_measure() - 4.0).abs() < 1e-12);
        assert!((d.omega_measure() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn square_boundary_is_counterclockwise_chain() {
        let d = build_square_mesh(3).unwrap();
        let c = d.boundary_coords();
        let nb = c.len();
        for k in 0..nb {
            let a = c[k];
            let b = c[(k + 1) % nb];
            let dist = (a[0] - b[0]).abs() + (a[1] - b[1]).abs();
            assert!((dist - d.h()).abs() < 1e-14);
        }
        assert_eq!(c[0], [0.0, 0.0]);
        assert_eq!(c[3], [1.0, 0.0]);
        assert_eq!(c[6], [1.0, 1.0]);
    }

    #[test]
    fn square_laplace_beltrami_energy() {
        let d = build_square_mesh(16).unwrap();
        let g: Vec<f64> = d
            .boundary_arclength()
            .iter()
            .map(|s| (2.0 * PI * s / 4.0).sin())
            .collect();
        let e = d.boundary_stiffness().quad_form(&g);
        let exact = 2.0 * PI * PI / 4.0;
        assert!((e - exact).abs() / exact < 0.02, "{e} vs {exact}");
    }

    #[test]
    fn trace_selects_endpoints() {
        let d = build_interval_mesh(2).unwrap();
        let t = d.trace(&Field(vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(t.0, vec![1.0, 3.0]);
        assert!(d.trace(&Field(vec![1.0])).is_err());
        let ones = d.trace(&Field::constant(3, 1.0)).unwrap();
        assert_eq!(ones.0, vec![1.0, 1.0]);
    }

    #[test]
    fn trace_of_x_coordinate_on_square() {
        let d = build_square_mesh(2).unwrap();
        let x = d.sample(|x, _| x);
        let t = d.trace(&x).unwrap();
        let expect: Vec<f64> = d.boundary_coords().iter().map(|c| c[0]).collect();
        assert_eq!(t.0, expect);
    }

    #[test]
    fn trace_transpose_reembeds() {
        let d = build_square_mesh(3).unwrap();
        let v = d.sample(|x, y| x * x - y);
        let t = d.trace(&v).unwrap();
        let back = d.trace_transpose(&t);
        assert_eq!(d.trace(&back).unwrap(), t);
    }

    #[test]
    fn mean_values() {
        let d = build_interval_mesh(32).unwrap();
        assert!((d.mean_value(&Field::constant(33, 2.5)).unwrap() - 2.5).abs() < 1e-14);
        assert_eq!(d.mean_value(&Field::zeros(33)).unwrap(), 0.0);
        let v = d.sample(|x, _| (PI * x).cos());
        assert!(d.mean_value(&v).unwrap().abs() < 1e-12);
    }

    #[test]
    fn operators_are_symmetric_with_expected_bandwidth() {
        for d in [build_interval_mesh(5).unwrap(), build_square_mesh(4).unwrap()] {
            assert!(d.stiffness().is_symmetric(0.0));
            assert!(d.boundary_stiffness().is_symmetric(0.0));
            assert!(d.stiffness().bandwidth() <= d.node_bandwidth());
            let b = d.boundary_indices();
            for (r, c, _) in d.boundary_stiffness().triplets() {
                assert!(b[r].abs_diff(b[c]) <= d.node_bandwidth());
            }
        }
    }
}
