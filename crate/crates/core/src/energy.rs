//! Energy difference `E(u_pred; u) = Σ_x V(D u_pred + D u) - V(D u_pred)` on a
//! clamped supercell, its gradient and Hessian, the homogeneous Hessian, and
//! the linear residual with its moments.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{norm, Domain, Site, SiteIndex, Vec2};
use crate::numeric::pairwise_sum;
use crate::potentials::SitePotential;
use crate::predictor::Predictor;
use crate::sparse::{EllMatrix, NONE};

/// Corrector values on the free sites of a domain; zero outside.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    pub domain: Arc<Domain>,
    pub values: Vec<f64>,
}

impl DisplacementField {
    pub fn zeros(domain: Arc<Domain>) -> Self {
        let n = domain.len();
        DisplacementField { domain, values: vec![0.0; n] }
    }

    pub fn from_fn(domain: Arc<Domain>, f: impl Fn(Site) -> f64) -> Self {
        let values = domain.sites.iter().map(|&x| f(x)).collect();
        DisplacementField { domain, values }
    }

    pub fn get(&self, x: Site) -> f64 {
        self.domain.index_of(x).map_or(0.0, |i| self.values[i])
    }

    pub fn max_abs(&self) -> f64 {
        crate::numeric::max_abs(&self.values)
    }
}

const CHUNK: usize = 512;

/// Precomputed bond structure of `E(u_pred; ·)` on a supercell.
///
/// Evaluation sites are the free sites (in domain order) followed by the
/// halo `(Ω_R + ℛ) \ Ω_R`; every site whose strain depends on a free value is
/// included.
#[derive(Debug)]
pub struct EnergyModel {
    pub pot: SitePotential,
    pub pred: Predictor,
    pub domain: Arc<Domain>,
    nr: usize,
    eval_sites: Vec<Site>,
    /// `fwd[e * nr + r]`: free index of `e + ρ_r`, or `NONE`.
    fwd: Vec<u32>,
    /// `back[i * nr + r]`: evaluation index of `i - ρ_r`.
    back: Vec<u32>,
    /// `D_ρ u_pred` at every evaluation site, reduced across the branch cut.
    pred_diff: Vec<f64>,
    /// `V(D u_pred)` at every evaluation site.
    base: Vec<f64>,
    pattern: EllPattern,
}

/// Column layout of the Hessian rows: offsets `{0, ±ρ, ρ - σ}`.
#[derive(Debug)]
struct EllPattern {
    width: usize,
    /// `slot[a * (nr + 1) + b]`: row slot for local node `b` seen from role `a`.
    slot: Vec<usize>,
    cols: Vec<u32>,
}

impl EnergyModel {
    pub fn new(pot: SitePotential, pred: Predictor, domain: Arc<Domain>) -> Result<Self> {
        if domain.spec.kind != pot.lattice.kind {
            return Err(Error::Config(format!(
                "potential is defined on a {:?} lattice but the domain is {:?}",
                pot.lattice.kind, domain.spec.kind
            )));
        }
        if domain.is_empty() {
            return Err(Error::DomainTooSmall { radius: domain.radius, min: 1.0 });
        }
        let dirs = pot.dirs().to_vec();
        let nr = dirs.len();
        let n_free = domain.len();
        let mut eval_sites = domain.sites.clone();
        let mut halo = std::collections::BTreeSet::new();
        for &x in &domain.sites {
            for d in &dirs {
                let y = [x[0] - d[0], x[1] - d[1]];
                if domain.index_of(y).is_none() {
                    halo.insert(y);
                }
            }
        }
        eval_sites.extend(halo);
        let eval_index = SiteIndex::new(&eval_sites);

        let mut fwd = vec![NONE; eval_sites.len() * nr];
        for (e, x) in eval_sites.iter().enumerate() {
            for (r, d) in dirs.iter().enumerate() {
                if let Some(j) = domain.index_of([x[0] + d[0], x[1] + d[1]]) {
                    fwd[e * nr + r] = j as u32;
                }
            }
        }
        let mut back = vec![NONE; n_free * nr];
        for (i, x) in domain.sites.iter().enumerate() {
            for (r, d) in dirs.iter().enumerate() {
                let e = eval_index.get([x[0] - d[0], x[1] - d[1]]).expect("halo contains x - ρ");
                back[i * nr + r] = e as u32;
            }
        }

        let spec = &domain.spec;
        let mut pred_diff = vec![0.0; eval_sites.len() * nr];
        pred_diff.par_chunks_mut(nr).zip(eval_sites.par_iter()).try_for_each(|(out, &x)| -> Result<()> {
            let px = spec.position(x);
            for (r, d) in dirs.iter().enumerate() {
                let py = spec.position([x[0] + d[0], x[1] + d[1]]);
                out[r] = pred.bond_difference(px, py)?;
            }
            Ok(())
        })?;
        let base: Vec<f64> = pred_diff.par_chunks(nr).map(|a| pot.value(a)).collect::<Result<_>>()?;

        let pattern = EllPattern::new(&domain, &dirs);
        Ok(EnergyModel { pot, pred, domain, nr, eval_sites, fwd, back, pred_diff, base, pattern })
    }

    pub fn n_free(&self) -> usize {
        self.domain.len()
    }

    pub fn n_eval(&self) -> usize {
        self.eval_sites.len()
    }

    pub fn n_dirs(&self) -> usize {
        self.nr
    }

    pub fn eval_sites(&self) -> &[Site] {
        &self.eval_sites
    }

    /// `D_ρ u(e)` for every direction.
    fn corrector_strain(&self, u: &[f64], e: usize, out: &mut [f64]) {
        let own = if e < u.len() { u[e] } else { 0.0 };
        for r in 0..self.nr {
            let j = self.fwd[e * self.nr + r];
            let there = if j == NONE { 0.0 } else { u[j as usize] };
            out[r] = there - own;
        }
    }

    /// `D_ρ(u_pred + u)(e)`.
    fn total_strain(&self, u: &[f64], e: usize, out: &mut [f64]) {
        self.corrector_strain(u, e, out);
        for (o, p) in out.iter_mut().zip(&self.pred_diff[e * self.nr..(e + 1) * self.nr]) {
            *o += p;
        }
    }

    /// `D_ρ(u_pred + u)` at all evaluation sites (row-major).
    pub fn strains(&self, u: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; self.n_eval() * self.nr];
        a.par_chunks_mut(self.nr).enumerate().for_each(|(e, out)| self.total_strain(u, e, out));
        a
    }

    fn check_len(&self, u: &[f64]) {
        assert_eq!(u.len(), self.n_free(), "field does not match the domain");
    }

    pub fn energy(&self, u: &[f64]) -> Result<f64> {
        self.check_len(u);
        let nr = self.nr;
        let contrib: Vec<f64> = (0..self.n_eval())
            .into_par_iter()
            .with_min_len(CHUNK)
            .map_init(
                || vec![0.0; nr],
                |a, e| -> Result<f64> {
                    self.corrector_strain(u, e, a);
                    if a.iter().all(|&x| x == 0.0) {
                        return Ok(0.0);
                    }
                    for (x, p) in a.iter_mut().zip(&self.pred_diff[e * nr..(e + 1) * nr]) {
                        *x += p;
                    }
                    Ok(self.pot.value(a)? - self.base[e])
                },
            )
            .collect::<Result<_>>()?;
        Ok(pairwise_sum(&contrib))
    }

    /// `∇V` at every evaluation site (row-major `n_eval x nr`).
    fn site_gradients(&self, u: &[f64]) -> Result<Vec<f64>> {
        let nr = self.nr;
        let mut g = vec![0.0; self.n_eval() * nr];
        g.par_chunks_mut(nr).with_min_len(CHUNK).enumerate().try_for_each_init(
            || vec![0.0; nr],
            |a, (e, out)| -> Result<()> {
                self.total_strain(u, e, a);
                self.pot.eval_into(a, Some(out), None)?;
                Ok(())
            },
        )?;
        Ok(g)
    }

    /// `-div_ℛ w` on the free sites for a per-site co-vector field `w`.
    fn gather(&self, w: &[f64]) -> Vec<f64> {
        let nr = self.nr;
        let mut out = vec![0.0; self.n_free()];
        out.par_iter_mut().with_min_len(CHUNK).enumerate().for_each(|(i, o)| {
            let mut acc = 0.0;
            for r in 0..nr {
                let e = self.back[i * nr + r] as usize;
                acc += w[e * nr + r] - w[i * nr + r];
            }
            *o = acc;
        });
        out
    }

    /// `∂E/∂u(x)` for every free site.
    pub fn gradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u);
        Ok(self.gather(&self.site_gradients(u)?))
    }

    /// Energy and gradient from a single sweep over the evaluation sites.
    pub fn energy_and_gradient(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_len(u);
        let nr = self.nr;
        let mut g = vec![0.0; self.n_eval() * nr];
        let mut contrib = vec![0.0; self.n_eval()];
        g.par_chunks_mut(nr).zip(contrib.par_iter_mut()).with_min_len(CHUNK).enumerate().try_for_each_init(
            || vec![0.0; nr],
            |a, (e, (out, c))| -> Result<()> {
                self.total_strain(u, e, a);
                *c = self.pot.eval_into(a, Some(out), None)? - self.base[e];
                Ok(())
            },
        )?;
        Ok((pairwise_sum(&contrib), self.gather(&g)))
    }

    /// `∇²V` at every evaluation site (row-major `n_eval x nr x nr`).
    fn site_hessians(&self, u: &[f64]) -> Result<Vec<f64>> {
        let nr = self.nr;
        let mut h = vec![0.0; self.n_eval() * nr * nr];
        h.par_chunks_mut(nr * nr).with_min_len(CHUNK / 4).enumerate().try_for_each_init(
            || (vec![0.0; nr], vec![0.0; nr]),
            |(a, g), (e, out)| -> Result<()> {
                self.total_strain(u, e, a);
                self.pot.eval_into(a, Some(g), Some(out))?;
                Ok(())
            },
        )?;
        Ok(h)
    }

    /// Matrix-free `∇²E(u) v`.
    pub fn hessian_apply(&self, u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u);
        self.check_len(v);
        let nr = self.nr;
        let mut w = vec![0.0; self.n_eval() * nr];
        w.par_chunks_mut(nr).with_min_len(CHUNK).enumerate().try_for_each_init(
            || (vec![0.0; nr], vec![0.0; nr], vec![0.0; nr * nr], vec![0.0; nr]),
            |(a, g, h, dv), (e, out)| -> Result<()> {
                self.corrector_strain(v, e, dv);
                if dv.iter().all(|&x| x == 0.0) {
                    out.fill(0.0);
                    return Ok(());
                }
                self.total_strain(u, e, a);
                self.pot.eval_into(a, Some(g), Some(h))?;
                for r in 0..nr {
                    out[r] = (0..nr).map(|s| h[r * nr + s] * dv[s]).sum();
                }
                Ok(())
            },
        )?;
        Ok(self.gather(&w))
    }

    /// Explicit sparse `∇²E(u)`.
    pub fn assemble_hessian(&self, u: &[f64]) -> Result<EllMatrix> {
        self.check_len(u);
        let h = self.site_hessians(u)?;
        let nr2 = self.nr * self.nr;
        Ok(self.assemble(|e| &h[e * nr2..(e + 1) * nr2]))
    }

    /// Homogeneous Hessian `H_hom`: the Hessian of the energy of the perfect
    /// lattice, restricted to the free sites.
    pub fn homogeneous_hessian(&self) -> Result<EllMatrix> {
        let h0 = self.pot.hessian_at_zero()?;
        Ok(self.assemble(|_| &h0))
    }

    fn assemble<'a>(&self, site_hess: impl Fn(usize) -> &'a [f64] + Sync) -> EllMatrix {
        let nr = self.nr;
        let n = self.n_free();
        let p = &self.pattern;
        let w = p.width;
        let mut vals = vec![0.0; n * w];
        vals.par_chunks_mut(w).with_min_len(CHUNK).enumerate().for_each(|(i, row)| {
            for a in 0..=nr {
                let e = if a == 0 { i } else { self.back[i * nr + a - 1] as usize };
                let h = site_hess(e);
                for b in 0..=nr {
                    let s = p.slot[a * (nr + 1) + b];
                    if p.cols[i * w + s] == NONE {
                        continue;
                    }
                    row[s] += local_entry(h, nr, a, b);
                }
            }
        });
        EllMatrix { n, width: w, cols: p.cols.clone(), vals }
    }

    /// Position of free site `i` relative to the core.
    pub fn offset(&self, i: usize) -> Vec2 {
        self.domain.spec.offset(self.domain.sites[i])
    }
}

/// Entry of the local Hessian on nodes `{e, e + ρ_1, …}` (node 0 is `e`).
fn local_entry(h: &[f64], nr: usize, a: usize, b: usize) -> f64 {
    match (a, b) {
        (0, 0) => h.iter().sum(),
        (0, b) => -(0..nr).map(|r| h[r * nr + b - 1]).sum::<f64>(),
        (a, 0) => -(0..nr).map(|s| h[(a - 1) * nr + s]).sum::<f64>(),
        (a, b) => h[(a - 1) * nr + b - 1],
    }
}

impl EllPattern {
    fn new(domain: &Domain, dirs: &[Site]) -> Self {
        let nr = dirs.len();
        let node = |b: usize| if b == 0 { [0, 0] } else { dirs[b - 1] };
        let mut offsets: Vec<Site> = Vec::new();
        let mut slot = vec![0; (nr + 1) * (nr + 1)];
        for a in 0..=nr {
            for b in 0..=nr {
                let (pa, pb) = (node(a), node(b));
                let o = [pb[0] - pa[0], pb[1] - pa[1]];
                let k = match offsets.iter().position(|&q| q == o) {
                    Some(k) => k,
                    None => {
                        offsets.push(o);
                        offsets.len() - 1
                    }
                };
                slot[a * (nr + 1) + b] = k;
            }
        }
        let width = offsets.len();
        let mut cols = vec![NONE; domain.len() * width];
        for (i, x) in domain.sites.iter().enumerate() {
            for (k, o) in offsets.iter().enumerate() {
                if let Some(j) = domain.index_of([x[0] + o[0], x[1] + o[1]]) {
                    cols[i * width + k] = j as u32;
                }
            }
        }
        EllPattern { width, slot, cols }
    }
}

/// `‖u‖_{Ḣ¹} = (Σ_x Σ_ρ |D_ρ u(x)|²)^{1/2}` for a field that vanishes off the
/// given site set.
pub fn h1_norm(pot: &SitePotential, sites: &[Site], values: &[f64]) -> f64 {
    let h = LatticeFunction::new(sites, values);
    let contrib: Vec<f64> = h
        .stencil_support(pot.dirs(), 1)
        .par_iter()
        .map(|&x| {
            let ux = h.get(x);
            pot.dirs().iter().map(|d| (h.get([x[0] + d[0], x[1] + d[1]]) - ux).powi(2)).sum::<f64>()
        })
        .collect();
    pairwise_sum(&contrib).sqrt()
}

/// Scalar lattice function given on a finite site list, zero elsewhere.
#[derive(Clone, Debug)]
pub struct LatticeFunction<'a> {
    sites: &'a [Site],
    values: &'a [f64],
    index: SiteIndex,
}

impl<'a> LatticeFunction<'a> {
    pub fn new(sites: &'a [Site], values: &'a [f64]) -> Self {
        assert_eq!(sites.len(), values.len());
        LatticeFunction { sites, values, index: SiteIndex::new(sites) }
    }

    pub fn get(&self, x: Site) -> f64 {
        self.index.get(x).map_or(0.0, |i| self.values[i])
    }

    /// Sites within `depth` stencil steps (in `±ℛ`) of the support, sorted.
    pub fn stencil_support(&self, dirs: &[Site], depth: usize) -> Vec<Site> {
        let mut set: std::collections::BTreeSet<Site> = self.sites.iter().copied().collect();
        for _ in 0..depth {
            let grown: Vec<Site> = set
                .iter()
                .flat_map(|&x| dirs.iter().flat_map(move |d| [[x[0] + d[0], x[1] + d[1]], [x[0] - d[0], x[1] - d[1]]]))
                .collect();
            set.extend(grown);
        }
        set.into_iter().collect()
    }
}

/// Linear residual `f_u = -div_ℛ(∇²V(0)[D_ℛ u])` on the full support of the
/// stencil.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualField {
    pub sites: Vec<Site>,
    /// Positions relative to the core.
    pub offsets: Vec<Vec2>,
    pub values: Vec<f64>,
    /// Sites farther than this from the core see the clamped boundary.
    pub valid_radius: f64,
}

/// `f_u` for a field `u` given on `sites` (zero elsewhere). `valid_radius`
/// is `R - 2·max|ρ|`, where `R` is the radius of the supercell on which `u`
/// was computed.
pub fn linear_residual(pot: &SitePotential, domain: &Domain, values: &[f64]) -> Result<ResidualField> {
    let h0 = pot.hessian_at_zero()?;
    let dirs = pot.dirs();
    let nr = dirs.len();
    let u = LatticeFunction::new(&domain.sites, values);
    let support = u.stencil_support(dirs, 2);
    // σ_ρ(y) = Σ_σ h_ρσ D_σ u(y), needed on support - ℛ.
    let stress = |y: Site| -> Vec<f64> {
        let uy = u.get(y);
        let du: Vec<f64> = dirs.iter().map(|d| u.get([y[0] + d[0], y[1] + d[1]]) - uy).collect();
        (0..nr).map(|r| (0..nr).map(|s| h0[r * nr + s] * du[s]).sum()).collect()
    };
    let f: Vec<f64> = support
        .par_iter()
        .map(|&x| {
            let here = stress(x);
            let mut acc = 0.0;
            for (r, d) in dirs.iter().enumerate() {
                acc += stress([x[0] - d[0], x[1] - d[1]])[r] - here[r];
            }
            acc
        })
        .collect();
    let offsets = support.iter().map(|&x| domain.spec.offset(x)).collect();
    let valid_radius = domain.radius - 2.0 * pot.neighbors.max_length(&domain.spec);
    Ok(ResidualField { sites: support, offsets, values: f, valid_radius })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    /// `Σ f` over the whole support; vanishes for any compactly supported `u`.
    pub m0: f64,
    /// First and second moments about the core over `|x - x̂| <= valid_radius`.
    pub m1: [f64; 2],
    pub m2: [[f64; 2]; 2],
    /// `‖m2 - ½ tr(m2) Id‖ / ‖m2‖`.
    pub m2_anisotropy: f64,
    /// `Σ|f|` over the whole support.
    pub abs_sum: f64,
    /// `Σ |f| |x - x̂|^k`, k = 0, 1, 2, over the outermost valid annulus
    /// `0.8 r_v < |x - x̂| <= r_v`; bounds the error of the truncated moments.
    pub truncation: [f64; 3],
    /// `truncation[2] / ‖m2‖`, the matching bound for `m2_anisotropy`.
    pub anisotropy_bound: f64,
    /// Share of `Σ |f| |x - x̂|²` over the valid ball carried by the outer annulus.
    pub outer_annulus_change: f64,
    pub flagged: bool,
}

/// Moments of `f` about the core.
pub fn moments(f: &ResidualField) -> Moments {
    let n = f.values.len();
    let rv = f.valid_radius;
    let r: Vec<f64> = f.offsets.iter().map(|&o| norm(o)).collect();
    let col = |g: &dyn Fn(usize) -> f64| pairwise_sum(&(0..n).map(g).collect::<Vec<_>>());
    let inside = |i: usize, v: f64| if r[i] <= rv { v } else { 0.0 };
    let m0 = col(&|i| f.values[i]);
    let abs_sum = col(&|i| f.values[i].abs());
    let m1 = [col(&|i| inside(i, f.values[i] * f.offsets[i][0])), col(&|i| inside(i, f.values[i] * f.offsets[i][1]))];
    let m2_entry = |a: usize, b: usize| col(&|i| inside(i, f.values[i] * f.offsets[i][a] * f.offsets[i][b]));
    let m12 = m2_entry(0, 1);
    let m2 = [[m2_entry(0, 0), m12], [m12, m2_entry(1, 1)]];
    let half_tr = 0.5 * (m2[0][0] + m2[1][1]);
    let dev = ((m2[0][0] - half_tr).powi(2) + (m2[1][1] - half_tr).powi(2) + 2.0 * m12.powi(2)).sqrt();
    let m2_norm = (m2[0][0].powi(2) + m2[1][1].powi(2) + 2.0 * m12.powi(2)).sqrt().max(f64::MIN_POSITIVE);
    let annulus = |k: i32| col(&|i| if r[i] > 0.8 * rv && r[i] <= rv { f.values[i].abs() * r[i].powi(k) } else { 0.0 });
    let truncation = [annulus(0), annulus(1), annulus(2)];
    let weighted = col(&|i| inside(i, f.values[i].abs() * r[i] * r[i]));
    let outer_annulus_change = truncation[2] / weighted.max(f64::MIN_POSITIVE);
    Moments {
        m0,
        m1,
        m2,
        m2_anisotropy: dev / m2_norm,
        abs_sum,
        truncation,
        anisotropy_bound: truncation[2] / m2_norm,
        outer_annulus_change,
        flagged: outer_annulus_change > 0.1,
    }
}
