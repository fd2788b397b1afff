//! Dense tensors over the plane, `(R^2)^{⊗m}` for `m <= 4`, with the rotation
//! action, symmetrisation, the group-average projector and the invariant
//! bases used to identify the Cauchy-Born coefficients.

use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};
use crate::lattice::{mat_mul, Mat2};

/// A tensor of order `m` stored densely; entry `(l_1, ..., l_m)` with
/// `l_i ∈ {0, 1}` lives at the binary number `l_1 l_2 ... l_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymTensor {
    order: usize,
    entries: Vec<f64>,
}

impl SymTensor {
    pub fn zeros(order: usize) -> Self {
        assert!((1..=4).contains(&order), "tensor order {order} out of range");
        SymTensor { order, entries: vec![0.0; 1 << order] }
    }

    pub fn from_entries(order: usize, entries: Vec<f64>) -> Self {
        assert_eq!(entries.len(), 1 << order);
        SymTensor { order, entries }
    }

    /// `E_{i_1 ... i_m}` with one-based indices, e.g. `&[1, 2, 2]`.
    pub fn unit(idx: &[usize]) -> Self {
        let mut t = SymTensor::zeros(idx.len());
        *t.get_mut(&idx.iter().map(|i| i - 1).collect::<Vec<_>>()) = 1.0;
        t
    }

    pub fn identity() -> Self {
        SymTensor::from_entries(2, vec![1.0, 0.0, 0.0, 1.0])
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.order);
        idx.iter().fold(0, |acc, &i| (acc << 1) | i)
    }

    /// Zero-based multi-index access.
    pub fn get(&self, idx: &[usize]) -> f64 {
        self.entries[self.offset(idx)]
    }

    pub fn get_mut(&mut self, idx: &[usize]) -> &mut f64 {
        let o = self.offset(idx);
        &mut self.entries[o]
    }

    fn multi_index(&self, flat: usize) -> Vec<usize> {
        (0..self.order).map(|i| (flat >> (self.order - 1 - i)) & 1).collect()
    }

    pub fn dot(&self, other: &SymTensor) -> f64 {
        assert_eq!(self.order, other.order);
        self.entries.iter().zip(&other.entries).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `B^{⊗m} A`, applying `B` along one axis at a time.
    pub fn rotate_apply(&self, b: &Mat2) -> SymTensor {
        let mut cur = self.entries.clone();
        let m = self.order;
        for axis in 0..m {
            let stride = 1 << (m - 1 - axis);
            let mut next = vec![0.0; cur.len()];
            for (flat, out) in next.iter_mut().enumerate() {
                let l = (flat / stride) & 1;
                let base = flat - l * stride;
                *out = b[l][0] * cur[base] + b[l][1] * cur[base + stride];
            }
            cur = next;
        }
        SymTensor { order: m, entries: cur }
    }

    /// Average over all permutations of the indices.
    pub fn symmetrize(&self) -> SymTensor {
        let perms = permutations(self.order);
        let mut out = SymTensor::zeros(self.order);
        for flat in 0..self.entries.len() {
            let idx = self.multi_index(flat);
            let mut acc = 0.0;
            for p in &perms {
                let permuted: Vec<usize> = p.iter().map(|&k| idx[k]).collect();
                acc += self.get(&permuted);
            }
            out.entries[flat] = acc / perms.len() as f64;
        }
        out
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.symmetrize().entries.iter().zip(&self.entries).all(|(a, b)| (a - b).abs() <= tol)
    }

    pub fn scale(&self, s: f64) -> SymTensor {
        SymTensor { order: self.order, entries: self.entries.iter().map(|v| v * s).collect() }
    }
}

impl Add for &SymTensor {
    type Output = SymTensor;
    fn add(self, o: &SymTensor) -> SymTensor {
        assert_eq!(self.order, o.order);
        SymTensor { order: self.order, entries: self.entries.iter().zip(&o.entries).map(|(a, b)| a + b).collect() }
    }
}

impl Sub for &SymTensor {
    type Output = SymTensor;
    fn sub(self, o: &SymTensor) -> SymTensor {
        assert_eq!(self.order, o.order);
        SymTensor { order: self.order, entries: self.entries.iter().zip(&o.entries).map(|(a, b)| a - b).collect() }
    }
}

impl Mul<f64> for &SymTensor {
    type Output = SymTensor;
    fn mul(self, s: f64) -> SymTensor {
        self.scale(s)
    }
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; m], &mut out);
    out
}

fn check_rotation(q: &Mat2, n: usize) -> Result<()> {
    let qtq = mat_mul(&[[q[0][0], q[1][0]], [q[0][1], q[1][1]]], q);
    let mut pow = [[1.0, 0.0], [0.0, 1.0]];
    for _ in 0..n {
        pow = mat_mul(&pow, q);
    }
    let dev = |m: &Mat2| {
        let mut d = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                d = d.max((m[i][j] - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        d
    };
    if n == 0 || dev(&pow) > 1e-12 {
        return Err(Error::BadRotation(format!("Q^{n} differs from the identity by {:e}", dev(&pow))));
    }
    if dev(&qtq) > 1e-12 {
        return Err(Error::BadRotation("Q is not orthogonal".into()));
    }
    Ok(())
}

/// Group average `P A = (1/N) Σ_{M<N} (Q^M)^{⊗m} A`, the orthogonal projector
/// onto the `Q`-invariant tensors.
pub fn project(a: &SymTensor, q: &Mat2, n: usize) -> Result<SymTensor> {
    check_rotation(q, n)?;
    let mut acc = a.clone();
    let mut cur = a.clone();
    for _ in 1..n {
        cur = cur.rotate_apply(q);
        acc = &acc + &cur;
    }
    Ok(acc.scale(1.0 / n as f64))
}

/// `P sym A`.
pub fn project_sym(a: &SymTensor, q: &Mat2, n: usize) -> Result<SymTensor> {
    project(&a.symmetrize(), q, n)
}

/// `E_111 - 3 sym E_122`.
pub fn e111_minus_3e122() -> SymTensor {
    let mut t = SymTensor::unit(&[1, 1, 1]);
    for idx in [[1, 2, 2], [2, 1, 2], [2, 2, 1]] {
        t = &t - &SymTensor::unit(&idx);
    }
    t
}

/// `E_222 - 3 sym E_112`.
pub fn e222_minus_3e112() -> SymTensor {
    let mut t = SymTensor::unit(&[2, 2, 2]);
    for idx in [[1, 1, 2], [1, 2, 1], [2, 1, 1]] {
        t = &t - &SymTensor::unit(&idx);
    }
    t
}

/// `E_1111 + E_2222 + 2 sym E_1122`.
pub fn isotropic_fourth() -> SymTensor {
    let mut t = &SymTensor::unit(&[1, 1, 1, 1]) + &SymTensor::unit(&[2, 2, 2, 2]);
    let mixed = [[1, 1, 2, 2], [1, 2, 1, 2], [1, 2, 2, 1], [2, 1, 1, 2], [2, 1, 2, 1], [2, 2, 1, 1]];
    for idx in mixed {
        t = &t + &SymTensor::unit(&idx).scale(1.0 / 3.0);
    }
    t
}

/// Line reflection `S = a⊗a - a⊥⊗a⊥` with `a = (√3/2, 1/2)`.
pub fn line_reflection() -> Mat2 {
    let s3 = 3f64.sqrt() / 2.0;
    [[0.5, s3], [s3, -0.5]]
}

/// Basis of `{A : sym A = A, Q^{⊗m} A = A}` (and `S^{⊗3} A = -A` when
/// `reflection`), for `Q` the rotation by `2π/N`. Unnormalised, in the
/// `E`-combination scaling.
pub fn invariant_basis(order: usize, n: usize, reflection: bool) -> Result<Vec<SymTensor>> {
    match (order, n, reflection) {
        (2, n, false) if n >= 3 => Ok(vec![SymTensor::identity()]),
        (3, 3, false) => Ok(vec![e111_minus_3e122(), e222_minus_3e112()]),
        (3, 3, true) => Ok(vec![e111_minus_3e122()]),
        (4, 3, false) => Ok(vec![isotropic_fourth()]),
        _ => Err(Error::UnsupportedTensorSpace { order, n, reflection }),
    }
}

/// Dimension of the span of `tensors` (Gaussian elimination with relative
/// pivot tolerance).
pub fn rank(tensors: &[SymTensor], tol: f64) -> usize {
    if tensors.is_empty() {
        return 0;
    }
    let mut rows: Vec<Vec<f64>> = tensors.iter().map(|t| t.entries.clone()).collect();
    let scale = rows.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let cols = rows[0].len();
    let mut r = 0;
    for c in 0..cols {
        let Some(p) = (r..rows.len()).max_by(|&i, &j| rows[i][c].abs().total_cmp(&rows[j][c].abs())) else {
            break;
        };
        if rows[p][c].abs() <= tol * scale {
            continue;
        }
        rows.swap(r, p);
        for i in 0..rows.len() {
            if i != r {
                let f = rows[i][c] / rows[r][c];
                for k in c..cols {
                    rows[i][k] -= f * rows[r][k];
                }
            }
        }
        r += 1;
        if r == rows.len() {
            break;
        }
    }
    r
}

/// Dimension of the invariant space, measured as the rank of `P sym` (and
/// the reflection projector) applied to the canonical basis.
pub fn invariant_dimension(order: usize, q: &Mat2, n: usize, reflection: Option<&Mat2>) -> Result<usize> {
    let mut images = Vec::new();
    for flat in 0..(1usize << order) {
        let mut e = SymTensor::zeros(order);
        e.entries[flat] = 1.0;
        let mut p = project_sym(&e, q, n)?;
        if let Some(s) = reflection {
            // Projector onto the odd part under S.
            p = (&p - &p.rotate_apply(s)).scale(0.5);
        }
        images.push(p);
    }
    Ok(rank(&images, 1e-10))
}
