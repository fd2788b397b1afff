//! Site potentials `V((D_ρ u)_ρ)` for anti-plane kinematics.
//!
//! Two families are provided: a nearest-neighbour pair model
//! `V = Σ_ρ ψ(D_ρ u)` with `ψ(r) = a sin²(π r / p)`, and an embedded-atom
//! model obtained by projecting a BCC crystal along `[111]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{
    bcc_height, bcc_lifts, mat_vec, norm, CoreChoice, LatticeKind, LatticeSpec, Mat2, NeighborSet, Site, Vec2,
    BCC_PERIOD,
};
use crate::tensors::{e111_minus_3e122, SymTensor};

/// Parameters of the projected BCC embedded-atom model.
///
/// Electron density `ρ_e(r) = k_rho (d - r)² ψ_c(r/d)` and pair repulsion
/// `φ(r) = k_phi (d - r)³ ψ_c(r/d)` with the smooth cutoff
/// `ψ_c(t) = exp(1 - 1/(1 - t²))` for `t < 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EamParams {
    pub k_rho: f64,
    pub k_phi: f64,
    pub cutoff: f64,
}

impl Default for EamParams {
    fn default() -> Self {
        EamParams { k_rho: 1.0, k_phi: 8.0, cutoff: 1.3 * BCC_PERIOD }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryFlags {
    pub rotational: bool,
    pub mirror: bool,
    pub line_reflection: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PotentialKind {
    /// `ψ(r) = amplitude · sin²(π r / p)`.
    PairSin2 { amplitude: f64 },
    Eam(EamParams),
}

/// Per-direction geometry of the EAM model: squared in-plane length and the
/// height offset of the neighbouring column.
#[derive(Clone, Debug, PartialEq)]
struct Column {
    rho2: f64,
    z0: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SitePotential {
    pub kind: PotentialKind,
    pub lattice: LatticeSpec,
    pub neighbors: NeighborSet,
    pub period: f64,
    pub flags: SymmetryFlags,
    columns: Vec<Column>,
    /// Density and pair energy of the purely vertical neighbours.
    vertical: (f64, f64),
}

/// Value, gradient and Hessian of a site potential at one strain tuple.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteEval {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Row-major `|R| x |R|`.
    pub hess: Vec<f64>,
}

fn cutoff_fn(t: f64) -> (f64, f64, f64) {
    if t >= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    let s = 1.0 - t * t;
    let g = 1.0 - 1.0 / s;
    let e = g.exp();
    if e == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let g1 = -2.0 * t / (s * s);
    let g2 = -2.0 / (s * s) - 8.0 * t * t / (s * s * s);
    (e, g1 * e, (g2 + g1 * g1) * e)
}

/// `k (d - r)^n ψ_c(r/d)` and its first two derivatives in `r`.
fn radial(k: f64, n: i32, d: f64, r: f64) -> (f64, f64, f64) {
    if r >= d {
        return (0.0, 0.0, 0.0);
    }
    let (c, c1, c2) = cutoff_fn(r / d);
    let w = d - r;
    let nf = n as f64;
    let p0 = w.powi(n);
    let p1 = nf * w.powi(n - 1);
    let p2 = nf * (nf - 1.0) * w.powi(n - 2);
    (k * p0 * c, k * (-p1 * c + p0 * c1 / d), k * (p2 * c - 2.0 * p1 * c1 / d + p0 * c2 / (d * d)))
}

pub fn eam_density(p: &EamParams, r: f64) -> (f64, f64, f64) {
    radial(p.k_rho, 2, p.cutoff, r)
}

pub fn eam_pair(p: &EamParams, r: f64) -> (f64, f64, f64) {
    radial(p.k_phi, 3, p.cutoff, r)
}

impl SitePotential {
    /// Nearest-neighbour `sin²` pair model with period 1.
    pub fn pair_sin2(kind: LatticeKind, amplitude: f64) -> Result<Self> {
        let lattice = LatticeSpec::new(kind, CoreChoice::Symmetric)?;
        let neighbors = lattice.nearest_neighbors();
        Ok(SitePotential {
            kind: PotentialKind::PairSin2 { amplitude },
            lattice,
            neighbors,
            period: 1.0,
            flags: SymmetryFlags { rotational: true, mirror: true, line_reflection: true },
            columns: Vec::new(),
            vertical: (0.0, 0.0),
        })
    }

    /// Projected BCC embedded-atom model on the triangular lattice.
    pub fn eam_bcc(params: EamParams) -> Result<Self> {
        if !(params.k_rho > 0.0) || !params.k_phi.is_finite() {
            return Err(Error::Config(format!("invalid EAM parameters {params:?}")));
        }
        let lattice = LatticeSpec::new(LatticeKind::Triangular, CoreChoice::Symmetric)?;
        let neighbors = bcc_lifts(params.cutoff)?;
        let columns = neighbors
            .dirs
            .iter()
            .map(|&d| {
                let p = lattice.position(d);
                Column { rho2: p[0] * p[0] + p[1] * p[1], z0: bcc_height(d) }
            })
            .collect();
        let vertical = neighbors.vertical.iter().fold((0.0, 0.0), |acc, z| {
            (acc.0 + eam_density(&params, z.abs()).0, acc.1 + eam_pair(&params, z.abs()).0)
        });
        Ok(SitePotential {
            kind: PotentialKind::Eam(params),
            lattice,
            neighbors,
            period: BCC_PERIOD,
            flags: SymmetryFlags { rotational: true, mirror: false, line_reflection: true },
            columns,
            vertical,
        })
    }

    pub fn n_dirs(&self) -> usize {
        self.neighbors.len()
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            PotentialKind::PairSin2 { .. } => "pair-sin2",
            PotentialKind::Eam(_) => "eam-bcc",
        }
    }

    /// Evaluates `V(A)`, writing the gradient and the row-major Hessian when
    /// requested.
    pub fn eval_into(&self, a: &[f64], grad: Option<&mut [f64]>, hess: Option<&mut [f64]>) -> Result<f64> {
        debug_assert_eq!(a.len(), self.n_dirs());
        match &self.kind {
            PotentialKind::PairSin2 { amplitude } => Ok(self.eval_pair(*amplitude, a, grad, hess)),
            PotentialKind::Eam(p) => self.eval_eam(p, a, grad, hess),
        }
    }

    pub fn value(&self, a: &[f64]) -> Result<f64> {
        self.eval_into(a, None, None)
    }

    pub fn eval(&self, a: &[f64]) -> Result<SiteEval> {
        let n = self.n_dirs();
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n * n];
        let value = self.eval_into(a, Some(&mut grad), Some(&mut hess))?;
        Ok(SiteEval { value, grad, hess })
    }

    fn eval_pair(&self, amp: f64, a: &[f64], grad: Option<&mut [f64]>, hess: Option<&mut [f64]>) -> f64 {
        let k = std::f64::consts::PI / self.period;
        let mut v = 0.0;
        for &x in a {
            let s = (k * x).sin();
            v += amp * s * s;
        }
        if let Some(g) = grad {
            for (gi, &x) in g.iter_mut().zip(a) {
                *gi = amp * k * (2.0 * k * x).sin();
            }
        }
        if let Some(h) = hess {
            let n = a.len();
            h.fill(0.0);
            for (i, &x) in a.iter().enumerate() {
                h[i * n + i] = 2.0 * amp * k * k * (2.0 * k * x).cos();
            }
        }
        v
    }

    fn eval_eam(&self, p: &EamParams, a: &[f64], grad: Option<&mut [f64]>, hess: Option<&mut [f64]>) -> Result<f64> {
        let n = a.len();
        let per = self.period;
        let d = p.cutoff;
        let mut dens = self.vertical.0;
        let mut pair = self.vertical.1;
        // Per-direction first and second derivatives of density and pair sums.
        let mut ds = [0.0f64; 32];
        let mut dds = [0.0f64; 32];
        let mut dphi = [0.0f64; 32];
        let mut ddphi = [0.0f64; 32];
        assert!(n <= 32, "too many neighbour directions");
        for (i, col) in self.columns.iter().enumerate() {
            let s = col.z0 + a[i];
            let h = (d * d - col.rho2).sqrt();
            let k_lo = ((-h - s) / per).ceil() as i64;
            let k_hi = ((h - s) / per).floor() as i64;
            for k in k_lo..=k_hi {
                let w = s + k as f64 * per;
                let r = (col.rho2 + w * w).sqrt();
                if r >= d {
                    continue;
                }
                let dr = w / r;
                let ddr = col.rho2 / (r * r * r);
                let (f, f1, f2) = eam_density(p, r);
                let (g, g1, g2) = eam_pair(p, r);
                dens += f;
                pair += g;
                ds[i] += f1 * dr;
                dds[i] += f2 * dr * dr + f1 * ddr;
                dphi[i] += g1 * dr;
                ddphi[i] += g2 * dr * dr + g1 * ddr;
            }
        }
        if !(dens > 0.0) {
            return Err(Error::EmbeddingDomain(dens));
        }
        let sq = dens.sqrt();
        if let Some(g) = grad {
            for i in 0..n {
                g[i] = -ds[i] / (2.0 * sq) + dphi[i];
            }
        }
        if let Some(hm) = hess {
            let c = 1.0 / (4.0 * dens * sq);
            for i in 0..n {
                for j in 0..n {
                    hm[i * n + j] = c * ds[i] * ds[j];
                }
                hm[i * n + i] += -dds[i] / (2.0 * sq) + ddphi[i];
            }
        }
        Ok(-sq + pair)
    }

    /// Permutation induced on `R` by the lattice rotation.
    pub fn rotation_perm(&self) -> Vec<usize> {
        self.neighbors
            .permutation(|d| self.lattice.rotate_dir(d))
            .expect("neighbour set is closed under the lattice rotation")
    }

    /// Reflection used for the line-reflection symmetry: the line spanned by
    /// `(√3/2, 1/2)` on the triangular lattice, the diagonal on the square one.
    pub fn reflection_matrix(&self) -> Mat2 {
        match self.lattice.kind {
            LatticeKind::Triangular => crate::tensors::line_reflection(),
            LatticeKind::Square => [[0.0, 1.0], [1.0, 0.0]],
        }
    }

    pub fn reflection_perm(&self) -> Option<Vec<usize>> {
        let s = self.reflection_matrix();
        self.neighbors.permutation(|d| {
            let l = self.lattice.to_lattice_coords(mat_vec(&s, self.lattice.position(d)));
            [l[0].round() as i64, l[1].round() as i64]
        })
    }

    /// `∇²V(0)` (row-major).
    pub fn hessian_at_zero(&self) -> Result<Vec<f64>> {
        Ok(self.eval(&vec![0.0; self.n_dirs()])?.hess)
    }

    /// `W(F) = V((F·ρ)_ρ) / det A`.
    pub fn cauchy_born_energy(&self, f: Vec2) -> Result<f64> {
        let a: Vec<f64> = self.strain_of_gradient(f);
        Ok(self.value(&a)? / self.lattice.det())
    }

    pub fn strain_of_gradient(&self, f: Vec2) -> Vec<f64> {
        self.neighbors
            .dirs
            .iter()
            .map(|&d| {
                let r = self.lattice.position(d);
                f[0] * r[0] + f[1] * r[1]
            })
            .collect()
    }

    pub fn dir_vectors(&self) -> Vec<Vec2> {
        self.neighbors.dirs.iter().map(|&d| self.lattice.position(d)).collect()
    }

    pub fn dirs(&self) -> &[Site] {
        &self.neighbors.dirs
    }
}

/// Outcome of randomised symmetry testing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub rotational: bool,
    pub mirror: bool,
    pub line_reflection: bool,
    pub max_deviation: [f64; 3],
}

/// Tests rotation, mirror and line-reflection invariance of `V` on `trials`
/// random strains drawn from `[-p/2, p/2]^R`. Fails if a declared symmetry
/// does not hold.
pub fn check_symmetries(pot: &SitePotential, trials: usize, seed: u64) -> Result<SymmetryReport> {
    const TOL: f64 = 1e-10;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = pot.n_dirs();
    let rot = pot.rotation_perm();
    let refl = pot.reflection_perm();
    let mut dev = [0.0f64; 3];
    for _ in 0..trials {
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5) * pot.period).collect();
        let v = pot.value(&a)?;
        let scale = v.abs().max(1.0);
        let rotated: Vec<f64> = (0..n).map(|i| a[rot[i]]).collect();
        dev[0] = dev[0].max((pot.value(&rotated)? - v).abs() / scale);
        let negated: Vec<f64> = a.iter().map(|x| -x).collect();
        dev[1] = dev[1].max((pot.value(&negated)? - v).abs() / scale);
        match &refl {
            Some(perm) => {
                let reflected: Vec<f64> = (0..n).map(|i| -a[perm[i]]).collect();
                dev[2] = dev[2].max((pot.value(&reflected)? - v).abs() / scale);
            }
            None => dev[2] = f64::INFINITY,
        }
    }
    let report = SymmetryReport {
        rotational: dev[0] <= TOL,
        mirror: dev[1] <= TOL,
        line_reflection: dev[2] <= TOL,
        max_deviation: dev,
    };
    let declared = [
        ("rotational", pot.flags.rotational, report.rotational, dev[0]),
        ("mirror", pot.flags.mirror, report.mirror, dev[1]),
        ("line-reflection", pot.flags.line_reflection, report.line_reflection, dev[2]),
    ];
    for (name, want, got, d) in declared {
        if want && !got {
            return Err(Error::SymmetryViolated { symmetry: name, deviation: d });
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CauchyBornTensors {
    pub w2: SymTensor,
    pub w3: SymTensor,
    pub c_lin: f64,
    pub c_quad: f64,
    /// Finite-difference steps accepted for `W2` and `W3`.
    pub steps: [f64; 2],
}

// Fourth-order central stencils for derivatives of order 0..=3.
const STENCILS: [&[(i32, f64)]; 4] = [
    &[(0, 1.0)],
    &[(-2, 1.0 / 12.0), (-1, -8.0 / 12.0), (1, 8.0 / 12.0), (2, -1.0 / 12.0)],
    &[(-2, -1.0 / 12.0), (-1, 16.0 / 12.0), (0, -30.0 / 12.0), (1, 16.0 / 12.0), (2, -1.0 / 12.0)],
    &[(-3, 0.125), (-2, -1.0), (-1, 1.625), (1, -1.625), (2, 1.0), (3, -0.125)],
];

/// `∂^{k1}_{F1} ∂^{k2}_{F2} W(0)` by a tensor-product stencil with step `h`.
fn mixed_derivative(pot: &SitePotential, k: [usize; 2], h: f64) -> Result<f64> {
    let mut acc = 0.0;
    for &(i, ci) in STENCILS[k[0]] {
        for &(j, cj) in STENCILS[k[1]] {
            acc += ci * cj * pot.cauchy_born_energy([i as f64 * h, j as f64 * h])?;
        }
    }
    Ok(acc / h.powi((k[0] + k[1]) as i32))
}

fn derivative_tensor(pot: &SitePotential, order: usize, h: f64) -> Result<SymTensor> {
    let mut t = SymTensor::zeros(order);
    for flat in 0..(1usize << order) {
        let idx: Vec<usize> = (0..order).map(|i| (flat >> (order - 1 - i)) & 1).collect();
        let ones = idx.iter().filter(|&&i| i == 1).count();
        *t.get_mut(&idx) = mixed_derivative(pot, [order - ones, ones], h)?;
    }
    Ok(t)
}

/// Halves the step until two successive estimates agree to `1e-6` relative.
fn richardson(pot: &SitePotential, order: usize, h0: f64, abs_tol: f64) -> Result<(SymTensor, f64)> {
    let mut h = h0;
    let mut prev = derivative_tensor(pot, order, h)?;
    let mut best: Option<(f64, SymTensor, f64)> = None;
    for _ in 0..6 {
        h *= 0.5;
        let cur = derivative_tensor(pot, order, h)?;
        let diff = (&cur - &prev).norm();
        let scale = cur.norm().max(abs_tol);
        if diff <= (1e-6 * cur.norm()).max(abs_tol) {
            return Ok((cur, h));
        }
        if best.as_ref().map_or(true, |b| diff / scale < b.0) {
            best = Some((diff / scale, cur.clone(), h));
        }
        prev = cur;
    }
    let (rel, t, h) = best.expect("at least one halving");
    Err(Error::CauchyBorn(format!(
        "order-{order} derivatives did not stabilise under step halving (best relative change {rel:e} at h = {h:e}, {t:?})"
    )))
}

/// `∇²W(0)`, `∇³W(0)` by finite differences and the scalar coefficients
/// `c_lin = ½ tr ∇²W(0)`, `c_quad = ¼(∇³W_111 - 3 ∇³W_122)`.
pub fn cauchy_born(pot: &SitePotential) -> Result<CauchyBornTensors> {
    let (w2, h2) = richardson(pot, 2, 1e-3 * pot.period, 0.0)?;
    let c_lin = 0.5 * (w2.get(&[0, 0]) + w2.get(&[1, 1]));
    let iso = (&w2 - &SymTensor::identity().scale(c_lin)).norm();
    if iso > 1e-8 * c_lin.abs() {
        return Err(Error::CauchyBorn(format!("∇²W(0) is not a multiple of the identity (deviation {iso:e})")));
    }
    let (w3, h3) = richardson(pot, 3, 1e-2 * pot.period, 1e-10 * c_lin.abs().max(1.0))?;
    let c_quad = 0.25 * (w3.get(&[0, 0, 0]) - 3.0 * w3.get(&[0, 1, 1]));
    if pot.flags.mirror && w3.norm() > 1e-8 * c_lin.abs().max(1.0) {
        return Err(Error::CauchyBorn(format!("mirror-symmetric potential has ∇³W(0) = {w3:?}")));
    }
    if pot.flags.line_reflection && pot.lattice.kind == LatticeKind::Triangular {
        let dev = (&w3 - &e111_minus_3e122().scale(c_quad)).norm();
        if dev > 1e-6 * c_quad.abs().max(1.0) {
            return Err(Error::CauchyBorn(format!(
                "∇³W(0) is not proportional to E111 - 3 sym E122 (deviation {dev:e})"
            )));
        }
    }
    Ok(CauchyBornTensors { w2, w3, c_lin, c_quad, steps: [h2, h3] })
}

/// Quadratic form of `H_hom` on a field given by its values on a finite
/// set of sites (zero elsewhere): returns `(⟨H_hom u, u⟩, ‖u‖²_{Ḣ¹})`.
pub fn homogeneous_forms(pot: &SitePotential, hess0: &[f64], sites: &[Site], values: &[f64]) -> (f64, f64) {
    use std::collections::{BTreeMap, BTreeSet};
    let dirs = pot.dirs();
    let n = dirs.len();
    let field: BTreeMap<Site, f64> = sites.iter().copied().zip(values.iter().copied()).collect();
    let u = |x: Site| field.get(&x).copied().unwrap_or(0.0);
    let mut support = BTreeSet::new();
    for &x in sites {
        support.insert(x);
        for d in dirs {
            support.insert([x[0] - d[0], x[1] - d[1]]);
        }
    }
    let mut quad = 0.0;
    let mut h1 = 0.0;
    let mut du = vec![0.0; n];
    for x in support {
        for (k, d) in dirs.iter().enumerate() {
            du[k] = u([x[0] + d[0], x[1] + d[1]]) - u(x);
        }
        for i in 0..n {
            h1 += du[i] * du[i];
            for j in 0..n {
                quad += hess0[i * n + j] * du[i] * du[j];
            }
        }
    }
    (quad, h1)
}

/// Sampled lower estimate of the lattice-stability constant: minimum of the
/// Rayleigh quotient `⟨H_hom u, u⟩ / ‖u‖²_{Ḣ¹}` over random fields supported in
/// a ball of radius `radius`. Positive values are evidence of stability, not
/// a proof.
pub fn stability_estimate(pot: &SitePotential, trials: usize, radius: f64, seed: u64) -> Result<f64> {
    let hess0 = pot.hessian_at_zero()?;
    let sites = crate::lattice::sites_within(&pot.lattice, radius);
    if sites.is_empty() {
        return Err(Error::DomainTooSmall { radius, min: 1.0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    for t in 0..trials {
        let mut values: Vec<f64> = sites.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        // Alternate rough and smoothed fields so both ends of the spectrum are probed.
        let smoothing = t % 4;
        for _ in 0..smoothing * 3 {
            values = smooth(pot, &sites, &values);
        }
        let (q, h) = homogeneous_forms(pot, &hess0, &sites, &values);
        if h > 0.0 {
            best = best.min(q / h);
        }
    }
    Ok(best)
}

fn smooth(pot: &SitePotential, sites: &[Site], values: &[f64]) -> Vec<f64> {
    let index = crate::lattice::SiteIndex::new(sites);
    sites
        .iter()
        .map(|&x| {
            let mut acc = values[index.get(x).unwrap()];
            for d in pot.dirs() {
                acc += index.get([x[0] + d[0], x[1] + d[1]]).map_or(0.0, |k| values[k]);
            }
            acc / (pot.n_dirs() + 1) as f64
        })
        .collect()
}

/// `∇²W(0)` by direct contraction `Σ ∇²V(0)_{ρσ} ρ⊗σ / det A`.
pub fn contracted_w2(pot: &SitePotential) -> Result<SymTensor> {
    let h = pot.hessian_at_zero()?;
    let v = pot.dir_vectors();
    let n = v.len();
    let mut t = SymTensor::zeros(2);
    for i in 0..n {
        for j in 0..n {
            for a in 0..2 {
                for b in 0..2 {
                    *t.get_mut(&[a, b]) += h[i * n + j] * v[i][a] * v[j][b];
                }
            }
        }
    }
    Ok(t.scale(1.0 / pot.lattice.det()))
}

/// Length of the longest in-plane interaction.
pub fn interaction_range(pot: &SitePotential) -> f64 {
    pot.dir_vectors().into_iter().map(norm).fold(0.0, f64::max)
}
