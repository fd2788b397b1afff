//! Equilibration of the clamped supercell problem: damped Newton with
//! preconditioned CG, and preconditioned LBFGS.

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::energy::{h1_norm, EnergyModel};
use crate::error::{Error, Result};
use crate::lattice::Domain;
use crate::numeric::{dot, max_abs};
use crate::potentials::SitePotential;
use crate::predictor::Predictor;
use crate::sparse::{Cholesky, EllMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Newton,
    Lbfgs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub method: Method,
    /// Stop when `max |∇E| <= tol_inf`.
    pub tol_inf: f64,
    pub max_iter: usize,
    /// Relative residual tolerance of the inner CG solves.
    pub cg_rel_tol: f64,
    /// Inner CG iteration cap; 0 means ten times the number of unknowns.
    pub cg_max_iter: usize,
    pub lbfgs_memory: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig::newton()
    }
}

impl SolveConfig {
    pub fn newton() -> Self {
        SolveConfig {
            method: Method::Newton,
            tol_inf: 1e-8,
            max_iter: 100,
            cg_rel_tol: 1e-10,
            cg_max_iter: 0,
            lbfgs_memory: 20,
        }
    }

    pub fn lbfgs() -> Self {
        SolveConfig { method: Method::Lbfgs, tol_inf: 1e-6, max_iter: 5000, ..SolveConfig::newton() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol_inf > 0.0) {
            return Err(Error::Config(format!("tol_inf must be positive, got {}", self.tol_inf)));
        }
        if !(self.cg_rel_tol > 0.0 && self.cg_rel_tol < 1.0) {
            return Err(Error::Config(format!("cg_rel_tol must lie in (0, 1), got {}", self.cg_rel_tol)));
        }
        if self.max_iter == 0 || self.lbfgs_memory == 0 {
            return Err(Error::Config("max_iter and lbfgs_memory must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: Method,
    pub iterations: usize,
    /// Total inner CG iterations (Newton) or energy evaluations (LBFGS).
    pub inner_iterations: usize,
    pub residual_inf: f64,
    pub energy: f64,
    pub converged: bool,
    pub wall_time_s: f64,
    /// Energies after each accepted step.
    pub energy_history: Vec<f64>,
    /// Set when Newton handed over to LBFGS, or LBFGS restarted.
    pub notes: Vec<String>,
}

/// Smooth objective on `R^n` with a sparse Hessian.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn energy_and_gradient(&self, u: &[f64]) -> Result<(f64, Vec<f64>)>;
    fn hessian(&self, u: &[f64]) -> Result<EllMatrix>;
}

impl Objective for EnergyModel {
    fn dim(&self) -> usize {
        self.n_free()
    }

    fn energy_and_gradient(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        EnergyModel::energy_and_gradient(self, u)
    }

    fn hessian(&self, u: &[f64]) -> Result<EllMatrix> {
        self.assemble_hessian(u)
    }
}

/// `½ uᵀ A u - fᵀ u`.
#[derive(Clone, Debug)]
pub struct Quadratic {
    pub a: EllMatrix,
    pub f: Vec<f64>,
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.a.n
    }

    fn energy_and_gradient(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        let au = self.a.mul(u);
        let e = 0.5 * dot(u, &au) - dot(&self.f, u);
        let g = au.iter().zip(&self.f).map(|(a, b)| a - b).collect();
        Ok((e, g))
    }

    fn hessian(&self, _u: &[f64]) -> Result<EllMatrix> {
        Ok(self.a.clone())
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn add_scaled(x: &[f64], a: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(p, q)| p + a * q).collect()
}

enum CgOutcome {
    Converged(Vec<f64>, usize),
    /// Non-positive curvature `pᵀAp <= 0` was met.
    NegativeCurvature(usize),
    MaxIter(Vec<f64>, usize),
}

/// Preconditioned CG for `A x = b` from `x = 0`.
fn pcg(a: &EllMatrix, b: &[f64], prec: &Cholesky, rel_tol: f64, max_iter: usize) -> CgOutcome {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return CgOutcome::Converged(x, 0);
    }
    let mut r = b.to_vec();
    let mut z = prec.solve(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        a.apply(&p, &mut ap);
        let curv = dot(&p, &ap);
        if !(curv > 0.0) {
            return CgOutcome::NegativeCurvature(it);
        }
        let alpha = rz / curv;
        axpy(&mut x, alpha, &p);
        axpy(&mut r, -alpha, &ap);
        if dot(&r, &r).sqrt() <= rel_tol * bnorm {
            return CgOutcome::Converged(x, it);
        }
        z = prec.solve(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    CgOutcome::MaxIter(x, max_iter)
}

/// Energies are compared with this relative slack: near convergence the
/// decrease per step is below the rounding error of the energy sum.
const ENERGY_SLACK: f64 = 1e-12;

fn slack(e: f64) -> f64 {
    ENERGY_SLACK * e.abs().max(1.0)
}

/// Damped Newton. Steps solve `∇²E(u) d = -∇E(u)` by CG preconditioned with
/// `prec`; a step is accepted when it satisfies the Armijo condition, or when
/// the energy is unchanged to rounding and the residual drops. If CG meets
/// negative curvature the solve continues with LBFGS and this is recorded.
pub fn newton_solve(
    obj: &impl Objective,
    prec: &Cholesky,
    u0: Vec<f64>,
    cfg: &SolveConfig,
) -> Result<(Vec<f64>, SolveReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let n = obj.dim();
    let cg_max = if cfg.cg_max_iter == 0 { 10 * n.max(1) } else { cfg.cg_max_iter };
    let mut u = u0;
    let (mut e, mut g) = obj.energy_and_gradient(&u)?;
    let mut report = SolveReport {
        method: Method::Newton,
        iterations: 0,
        inner_iterations: 0,
        residual_inf: max_abs(&g),
        energy: e,
        converged: false,
        wall_time_s: 0.0,
        energy_history: vec![e],
        notes: Vec::new(),
    };
    while report.iterations < cfg.max_iter {
        let res = max_abs(&g);
        report.residual_inf = res;
        if res <= cfg.tol_inf {
            report.converged = true;
            break;
        }
        let h = obj.hessian(&u)?;
        let neg_g: Vec<f64> = g.iter().map(|x| -x).collect();
        let d = match pcg(&h, &neg_g, prec, cfg.cg_rel_tol, cg_max) {
            CgOutcome::Converged(d, it) | CgOutcome::MaxIter(d, it) => {
                report.inner_iterations += it;
                d
            }
            CgOutcome::NegativeCurvature(it) => {
                report.inner_iterations += it;
                report.notes.push(format!(
                    "Newton iteration {}: negative curvature in CG, continuing with LBFGS",
                    report.iterations
                ));
                let lcfg = SolveConfig { method: Method::Lbfgs, max_iter: cfg.max_iter.max(5000), ..cfg.clone() };
                let (v, sub) = lbfgs_solve(obj, prec, u, &lcfg)?;
                report.iterations += sub.iterations;
                report.inner_iterations += sub.inner_iterations;
                report.energy_history.extend(sub.energy_history.iter().skip(1));
                report.notes.extend(sub.notes);
                report.residual_inf = sub.residual_inf;
                report.energy = sub.energy;
                report.converged = sub.converged;
                report.wall_time_s = start.elapsed().as_secs_f64();
                return Ok((v, report));
            }
        };
        let slope = dot(&g, &d);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = add_scaled(&u, t, &d);
            match obj.energy_and_gradient(&trial) {
                Ok((et, gt)) => {
                    let armijo = et <= e + 1e-4 * t * slope;
                    let flat = (et - e).abs() <= slack(e) && max_abs(&gt) < res;
                    if armijo || flat {
                        accepted = Some((trial, et, gt));
                        break;
                    }
                }
                Err(Error::EmbeddingDomain(_)) => {}
                Err(other) => return Err(other),
            }
            t *= 0.5;
        }
        let Some((trial, et, gt)) = accepted else {
            report.notes.push(format!("Newton iteration {}: line search failed", report.iterations));
            break;
        };
        u = trial;
        e = et;
        g = gt;
        report.iterations += 1;
        report.energy_history.push(e);
    }
    report.residual_inf = max_abs(&g);
    report.converged = report.residual_inf <= cfg.tol_inf;
    report.energy = e;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((u, report))
}

struct LineSearchResult {
    t: f64,
    u: Vec<f64>,
    e: f64,
    g: Vec<f64>,
    evals: usize,
}

/// Strong Wolfe line search (bracketing, then zoom with safeguarded cubic
/// interpolation). Energies that agree to rounding count as sufficient
/// decrease, so the derivative condition decides near convergence.
fn wolfe_search(obj: &impl Objective, u: &[f64], e0: f64, g0: &[f64], d: &[f64]) -> Result<Option<LineSearchResult>> {
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    const MAX_EVALS: usize = 60;
    let dphi0 = dot(g0, d);
    if !(dphi0 < 0.0) {
        return Ok(None);
    }
    struct Point {
        t: f64,
        e: f64,
        dphi: f64,
        u: Vec<f64>,
        g: Vec<f64>,
    }
    let count = std::cell::Cell::new(0usize);
    let eval = |t: f64| -> Result<Point> {
        count.set(count.get() + 1);
        let x = add_scaled(u, t, d);
        match obj.energy_and_gradient(&x) {
            Ok((e, g)) => Ok(Point { t, e, dphi: dot(&g, d), u: x, g }),
            Err(Error::EmbeddingDomain(_)) => Ok(Point { t, e: f64::INFINITY, dphi: f64::NAN, u: x, g: Vec::new() }),
            Err(other) => Err(other),
        }
    };
    let tol = slack(e0);
    let too_high = |p: &Point| !(p.e <= e0 + C1 * p.t * dphi0 || (p.e - e0).abs() <= tol);
    let curvature_ok = |p: &Point| p.dphi.abs() <= -C2 * dphi0;
    let done = |p: Point, evals: usize| Some(LineSearchResult { t: p.t, u: p.u, e: p.e, g: p.g, evals });

    let origin = Point { t: 0.0, e: e0, dphi: dphi0, u: Vec::new(), g: Vec::new() };
    let mut prev = origin;
    let mut t = 1.0;
    let (mut lo, mut hi);
    let mut first = true;
    loop {
        let p = eval(t)?;
        if too_high(&p) || (!first && p.e > prev.e + tol) {
            lo = prev;
            hi = p;
            break;
        }
        if curvature_ok(&p) {
            return Ok(done(p, count.get()));
        }
        if p.dphi >= 0.0 {
            lo = p;
            hi = prev;
            break;
        }
        if count.get() >= MAX_EVALS {
            return Ok(None);
        }
        first = false;
        t = 2.0 * p.t;
        prev = p;
    }
    while count.get() < MAX_EVALS {
        if (hi.t - lo.t).abs() <= 1e-14 * hi.t.abs().max(lo.t.abs()).max(1e-300) {
            break;
        }
        let t = next_trial(lo.t, lo.e, lo.dphi, hi.t, hi.e, hi.dphi);
        let p = eval(t)?;
        if too_high(&p) || p.e > lo.e + tol {
            hi = p;
        } else {
            if curvature_ok(&p) {
                return Ok(done(p, count.get()));
            }
            if p.dphi * (hi.t - lo.t) >= 0.0 {
                hi = lo;
            }
            lo = p;
        }
    }
    Ok(None)
}

/// Minimiser of the cubic through two points with derivatives, clamped into
/// the middle of the bracket; bisection when the data are unusable.
fn next_trial(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let mid = 0.5 * (a + b);
    if !(fa.is_finite() && fb.is_finite() && da.is_finite() && db.is_finite()) {
        return mid;
    }
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    let margin = 0.1 * (hi - lo);
    if t.is_finite() && t > lo + margin && t < hi - margin {
        t
    } else {
        mid
    }
}

/// LBFGS with initial inverse-Hessian approximation `γ P⁻¹`, where `P` is
/// given by its Cholesky factor, and a strong Wolfe line search. After a
/// line-search failure the history is cleared once; a second failure aborts.
pub fn lbfgs_solve(
    obj: &impl Objective,
    prec: &Cholesky,
    u0: Vec<f64>,
    cfg: &SolveConfig,
) -> Result<(Vec<f64>, SolveReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut u = u0;
    let (mut e, mut g) = obj.energy_and_gradient(&u)?;
    let mut report = SolveReport {
        method: Method::Lbfgs,
        iterations: 0,
        inner_iterations: 1,
        residual_inf: max_abs(&g),
        energy: e,
        converged: false,
        wall_time_s: 0.0,
        energy_history: vec![e],
        notes: Vec::new(),
    };
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut gamma = 1.0;
    let mut restarted = false;
    while report.iterations < cfg.max_iter {
        if max_abs(&g) <= cfg.tol_inf {
            break;
        }
        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            axpy(&mut q, -a, y);
            alphas.push(a);
        }
        let mut r = prec.solve(&q);
        r.iter_mut().for_each(|x| *x *= gamma);
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &r);
            axpy(&mut r, a - b, s);
        }
        let d: Vec<f64> = r.iter().map(|x| -x).collect();
        match wolfe_search(obj, &u, e, &g, &d)? {
            Some(ls) => {
                report.inner_iterations += ls.evals;
                let s: Vec<f64> = d.iter().map(|x| ls.t * x).collect();
                let y: Vec<f64> = ls.g.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 0.0 {
                    let py = prec.solve(&y);
                    gamma = sy / dot(&y, &py);
                    hist.push_back((s, y, 1.0 / sy));
                    if hist.len() > cfg.lbfgs_memory {
                        hist.pop_front();
                    }
                }
                u = ls.u;
                e = ls.e;
                g = ls.g;
                report.iterations += 1;
                report.energy_history.push(e);
            }
            None if !restarted && !hist.is_empty() => {
                restarted = true;
                hist.clear();
                gamma = 1.0;
                report
                    .notes
                    .push(format!("LBFGS iteration {}: line search failed, history cleared", report.iterations));
            }
            None => {
                report.notes.push(format!(
                    "LBFGS iteration {}: line search failed again at residual {:e}, aborting",
                    report.iterations,
                    max_abs(&g)
                ));
                break;
            }
        }
    }
    report.residual_inf = max_abs(&g);
    report.converged = report.residual_inf <= cfg.tol_inf;
    report.energy = e;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((u, report))
}

/// Factorises `H_hom` of the model and runs the configured method from `u = 0`.
pub fn solve(model: &EnergyModel, cfg: &SolveConfig) -> Result<(Vec<f64>, SolveReport)> {
    solve_from(model, vec![0.0; model.n_free()], cfg)
}

pub fn solve_from(model: &EnergyModel, u0: Vec<f64>, cfg: &SolveConfig) -> Result<(Vec<f64>, SolveReport)> {
    let prec = Cholesky::factor(&model.homogeneous_hessian()?)?;
    match cfg.method {
        Method::Newton => newton_solve(model, &prec, u0, cfg),
        Method::Lbfgs => lbfgs_solve(model, &prec, u0, cfg),
    }
}

/// Solution of one supercell problem.
#[derive(Clone, Debug)]
pub struct Solution {
    pub domain: Arc<Domain>,
    pub values: Vec<f64>,
    pub report: SolveReport,
}

pub fn solve_supercell(
    pot: &SitePotential,
    pred: &Predictor,
    domain: Arc<Domain>,
    cfg: &SolveConfig,
) -> Result<Solution> {
    let model = EnergyModel::new(pot.clone(), *pred, domain.clone())?;
    let (values, report) = solve(&model, cfg)?;
    Ok(Solution { domain, values, report })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub radius: f64,
    pub h1_error: f64,
    pub converged: bool,
    pub energy: f64,
    pub report: SolveReport,
}

/// Errors `‖ũ_R - ũ_ref‖_{Ḣ¹}` for each radius against a reference solve on
/// a larger supercell, with `ũ_R` extended by zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupercellStudy {
    pub r_ref: f64,
    pub reference: SolveReport,
    pub rows: Vec<ConvergenceRow>,
    /// `E(ũ_R) >= E(ũ_R') - tol` for `R < R'` (larger spaces reach lower energies).
    pub nesting_ok: bool,
}

/// Solves on each radius and on `r_ref`, which must be at least four times
/// the largest radius. Returns the study and the reference solution.
pub fn supercell_study(
    pot: &SitePotential,
    pred: &Predictor,
    spec: &crate::lattice::LatticeSpec,
    radii: &[f64],
    r_ref: f64,
    cfg: &SolveConfig,
    jobs: usize,
) -> Result<(SupercellStudy, Solution)> {
    let r_max = radii.iter().copied().fold(0.0, f64::max);
    if radii.is_empty() || r_ref < 4.0 * r_max {
        return Err(Error::Config(format!("reference radius {r_ref} must be at least 4x the largest radius {r_max}")));
    }
    let reference = solve_supercell(pot, pred, Arc::new(Domain::ball(spec, r_ref)?), cfg)?;
    let solve_one = |r: f64| -> Result<Solution> { solve_supercell(pot, pred, Arc::new(Domain::ball(spec, r)?), cfg) };
    let sols: Vec<Solution> = if jobs > 1 {
        use rayon::prelude::*;
        radii.par_iter().map(|&r| solve_one(r)).collect::<Result<_>>()?
    } else {
        radii.iter().map(|&r| solve_one(r)).collect::<Result<_>>()?
    };
    let ref_dom = &reference.domain;
    let mut rows = Vec::with_capacity(radii.len());
    for (r, sol) in radii.iter().zip(&sols) {
        let diff: Vec<f64> = ref_dom
            .sites
            .iter()
            .zip(&reference.values)
            .map(|(&x, &v)| sol.domain.index_of(x).map_or(0.0, |i| sol.values[i]) - v)
            .collect();
        rows.push(ConvergenceRow {
            radius: *r,
            h1_error: h1_norm(pot, &ref_dom.sites, &diff),
            converged: sol.report.converged,
            energy: sol.report.energy,
            report: sol.report.clone(),
        });
    }
    let mut by_radius: Vec<(f64, f64)> = rows.iter().map(|r| (r.radius, r.energy)).collect();
    by_radius.push((r_ref, reference.report.energy));
    by_radius.sort_by(|a, b| a.0.total_cmp(&b.0));
    let nesting_ok = by_radius.windows(2).all(|w| w[0].1 >= w[1].1 - slack(w[1].1) * 1e3);
    let study = SupercellStudy { r_ref, reference: reference.report.clone(), rows, nesting_ok };
    Ok((study, reference))
}
