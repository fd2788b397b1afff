//! Fixed-width row storage for lattice stencil operators and a sparse
//! Cholesky factorisation used as a preconditioner.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Marks an absent column (clamped site).
pub const NONE: u32 = u32::MAX;

/// Square matrix with at most `width` entries per row. Column `NONE` slots
/// are padding.
#[derive(Clone, Debug, PartialEq)]
pub struct EllMatrix {
    pub n: usize,
    pub width: usize,
    pub cols: Vec<u32>,
    pub vals: Vec<f64>,
}

const ROW_CHUNK: usize = 1024;

impl EllMatrix {
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        let w = self.width;
        y.par_chunks_mut(ROW_CHUNK).enumerate().for_each(|(c, out)| {
            let base = c * ROW_CHUNK;
            for (k, yi) in out.iter_mut().enumerate() {
                let i = base + k;
                let mut acc = 0.0;
                for s in i * w..(i + 1) * w {
                    let j = self.cols[s];
                    if j != NONE {
                        acc += self.vals[s] * x[j as usize];
                    }
                }
                *yi = acc;
            }
        });
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.apply(x, &mut y);
        y
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let w = self.width;
        (i * w..(i + 1) * w).filter(|&s| self.cols[s] == j as u32).map(|s| self.vals[s]).sum()
    }

    /// Largest `|A_ij - A_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for s in i * self.width..(i + 1) * self.width {
                let j = self.cols[s];
                if j != NONE && (j as usize) > i {
                    worst = worst.max((self.vals[s] - self.get(j as usize, i)).abs());
                }
            }
        }
        worst / scale
    }

    fn lower_triplets(&self) -> Vec<Triplet<usize, usize, f64>> {
        let mut t = Vec::with_capacity(self.n * (self.width / 2 + 1));
        for i in 0..self.n {
            for s in i * self.width..(i + 1) * self.width {
                let j = self.cols[s];
                if j != NONE && (j as usize) >= i && self.vals[s] != 0.0 {
                    t.push(Triplet::new(j as usize, i, self.vals[s]));
                }
            }
        }
        t
    }
}

/// Sparse Cholesky factor `A = L Lᵀ` of a symmetric positive definite
/// stencil matrix.
pub struct Cholesky {
    n: usize,
    llt: Llt<usize, f64>,
}

impl std::fmt::Debug for Cholesky {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Cholesky").field("n", &self.n).finish()
    }
}

impl Cholesky {
    pub fn factor(a: &EllMatrix) -> Result<Self> {
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(a.n, a.n, &a.lower_triplets())
            .map_err(|e| Error::Solver(format!("assembling sparse matrix: {e:?}")))?;
        let llt = m
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::Solver(format!("Cholesky factorisation failed (matrix not positive definite?): {e:?}")))?;
        Ok(Cholesky { n: a.n, llt })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let rhs = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        let x = self.llt.solve(&rhs);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> EllMatrix {
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for i in 0..n {
            for (d, v) in [(-1i64, -1.0), (0, 2.0), (1, -1.0)] {
                let j = i as i64 + d;
                if j < 0 || j >= n as i64 {
                    cols.push(NONE);
                    vals.push(0.0);
                } else {
                    cols.push(j as u32);
                    vals.push(v);
                }
            }
        }
        EllMatrix { n, width: 3, cols, vals }
    }

    #[test]
    fn apply_and_solve() {
        let a = laplacian_1d(50);
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.mul(&x);
        let c = Cholesky::factor(&a).unwrap();
        let y = c.solve(&b);
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-10);
        }
        assert_eq!(a.asymmetry(), 0.0);
        assert_eq!(a.get(3, 4), -1.0);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut a = laplacian_1d(10);
        for v in a.vals.iter_mut() {
            *v = -*v;
        }
        assert!(Cholesky::factor(&a).is_err());
    }
}
