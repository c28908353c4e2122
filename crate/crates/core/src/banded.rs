//! Banded LU factorization with partial pivoting.
//!
//! The per-step systems of the state, linearized and adjoint solvers couple
//! each node only with its mesh neighbours, so with an interleaved (y, w)
//! ordering they are banded. Pivoting widens the upper band by `kl`, the same
//! fill pattern as LAPACK `gbtrf`.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let k = self.idx(i, j);
        &mut self.data[k]
    }

    /// Adds `v` to entry (i, j). Panics if (i, j) lies outside the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            i < self.n && j < self.n && i <= j + self.kl && j <= i + self.ku,
            "entry ({i}, {j}) outside band (kl={}, ku={})",
            self.kl,
            self.ku
        );
        *self.at_mut(i, j) += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i > j + self.kl || j > i + self.ku {
            0.0
        } else {
            self.at(i, j)
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.at(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// Explicit transpose, with the band widths swapped.
    pub fn transpose(&self) -> BandedMatrix {
        let mut t = BandedMatrix::zeros(self.n, self.ku, self.kl);
        for i in 0..self.n {
            for j in i.saturating_sub(self.kl)..=(i + self.ku).min(self.n - 1) {
                t.add(j, i, self.at(i, j));
            }
        }
        t
    }

    pub fn factor(mut self) -> Result<BandedLu> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let mut piv = vec![0usize; n];
        for j in 0..n {
            let last_row = (j + kl).min(n - 1);
            let last_col = (j + kl + ku).min(n - 1);
            let mut p = j;
            let mut best = self.at(j, j).abs();
            for i in j + 1..=last_row {
                let v = self.at(i, j).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Solver(format!("singular banded matrix at column {j}")));
            }
            piv[j] = p;
            if p != j {
                for c in j..=last_col {
                    let a = self.idx(j, c);
                    let b = self.idx(p, c);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.at(j, j);
            for i in j + 1..=last_row {
                let l = self.at(i, j) / pivot;
                if l == 0.0 {
                    continue;
                }
                *self.at_mut(i, j) = l;
                for c in j + 1..=last_col {
                    let u = self.at(j, c);
                    *self.at_mut(i, c) -= l * u;
                }
            }
        }
        Ok(BandedLu { lu: self, piv })
    }
}

#[derive(Debug, Clone)]
pub struct BandedLu {
    lu: BandedMatrix,
    piv: Vec<usize>,
}

impl BandedLu {
    pub fn dim(&self) -> usize {
        self.lu.n
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let a = &self.lu;
        let n = a.n;
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for j in 0..n {
            x.swap(j, self.piv[j]);
            let xj = x[j];
            for i in j + 1..=(j + a.kl).min(n - 1) {
                x[i] -= a.at(i, j) * xj;
            }
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for c in i + 1..=(i + a.kl + a.ku).min(n - 1) {
                s -= a.at(i, c) * x[c];
            }
            x[i] = s / a.at(i, i);
        }
        x
    }

    /// Solves `Aᵀ x = b` with the same factors.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let a = &self.lu;
        let n = a.n;
        assert_eq!(b.len(), n);
        let reach = a.kl + a.ku;
        let mut x = b.to_vec();
        // Uᵀ z = b
        for i in 0..n {
            let mut s = x[i];
            for c in i.saturating_sub(reach)..i {
                s -= a.at(c, i) * x[c];
            }
            x[i] = s / a.at(i, i);
        }
        // x = M_0ᵀ ... M_{n-1}ᵀ z with M_j = L_j P_j
        for j in (0..n).rev() {
            let mut s = 0.0;
            for i in j + 1..=(j + a.kl).min(n - 1) {
                s += a.at(i, j) * x[i];
            }
            x[j] -= s;
            x.swap(j, self.piv[j]);
        }
        x
    }
}
