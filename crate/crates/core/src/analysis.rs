//! Decay envelopes, log-log fits and convergence tables.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::energy::{LatticeFunction, ResidualField};
use crate::error::{Error, Result};
use crate::lattice::{norm, Domain, Site, Vec2};
use crate::potentials::SitePotential;
use crate::predictor::Predictor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    pub r_range: [f64; 2],
    pub n: usize,
}

/// Least-squares line through `(ln x, ln y)`; non-positive values are skipped.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Option<Fit> {
    let pts: Vec<(f64, f64)> =
        xs.iter().zip(ys).filter(|(x, y)| **x > 0.0 && **y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let lo = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).exp();
    let hi = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).exp();
    Some(Fit { slope, intercept: my - slope * mx, r_range: [lo, hi], n: pts.len() })
}

/// `|D_ℛ u(x)|` at one site.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub x: Vec2,
    pub r: f64,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeBin {
    pub r_lo: f64,
    pub r_hi: f64,
    /// Geometric centre of the bin.
    pub r_center: f64,
    pub max: f64,
    pub mean: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecaySeries {
    pub points: Vec<DecayPoint>,
    pub envelope: Vec<EnvelopeBin>,
    /// Fit of the per-bin maxima.
    pub fit: Option<Fit>,
    /// Fit of the per-bin means.
    pub mean_fit: Option<Fit>,
    /// Number of empty bins merged into a neighbour.
    pub merged_bins: usize,
}

/// `|D_ℛ u(x)| = (Σ_ρ |D_ρ u(x)|²)^{1/2}` at every site of `domain`; `u`
/// vanishes outside the domain.
pub fn strain_magnitudes(pot: &SitePotential, domain: &Domain, values: &[f64]) -> Vec<DecayPoint> {
    let u = LatticeFunction::new(&domain.sites, values);
    domain
        .sites
        .iter()
        .map(|&x| {
            let ux = u.get(x);
            let s: f64 = pot.dirs().iter().map(|d| (u.get([x[0] + d[0], x[1] + d[1]]) - ux).powi(2)).sum();
            let off = domain.spec.offset(x);
            DecayPoint { x: domain.spec.position(x), r: norm(off), value: s.sqrt() }
        })
        .collect()
}

/// Envelope of `points` over log-spaced bins in `[r_min, r_max]`, with
/// least-squares slopes of the per-bin maxima and means.
pub fn envelope_from_points(points: Vec<DecayPoint>, r_min: f64, r_max: f64, bins: usize) -> Result<DecaySeries> {
    if !(r_min > 0.0 && r_max > r_min) || bins == 0 {
        return Err(Error::Analysis(format!("invalid fit window [{r_min}, {r_max}] with {bins} bins")));
    }
    let ratio = (r_max / r_min).ln() / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| r_min * (ratio * k as f64).exp()).collect();
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); bins];
    for p in &points {
        if p.r < r_min || p.r > r_max {
            continue;
        }
        let k = (((p.r / r_min).ln() / ratio) as usize).min(bins - 1);
        groups[k].push(p.value);
    }
    // Merge empty bins into the following bin (the last one into its predecessor).
    let mut merged = 0;
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for k in 0..bins {
        if groups[k].is_empty() && k + 1 < bins {
            merged += 1;
            continue;
        }
        if groups[k].is_empty() {
            merged += 1;
            if let Some(last) = spans.last_mut() {
                last.1 = k + 1;
            }
            continue;
        }
        spans.push((start, k + 1));
        start = k + 1;
    }
    let envelope: Vec<EnvelopeBin> = spans
        .into_iter()
        .map(|(a, b)| {
            let vals: Vec<f64> = groups[a..b].iter().flatten().copied().collect();
            let (lo, hi) = (edges[a], edges[b]);
            EnvelopeBin {
                r_lo: lo,
                r_hi: hi,
                r_center: (lo * hi).sqrt(),
                max: vals.iter().copied().fold(0.0, f64::max),
                mean: vals.iter().sum::<f64>() / vals.len() as f64,
                count: vals.len(),
            }
        })
        .collect();
    let rc: Vec<f64> = envelope.iter().map(|b| b.r_center).collect();
    let fit = fit_loglog(&rc, &envelope.iter().map(|b| b.max).collect::<Vec<_>>());
    let mean_fit = fit_loglog(&rc, &envelope.iter().map(|b| b.mean).collect::<Vec<_>>());
    Ok(DecaySeries { points, envelope, fit, mean_fit, merged_bins: merged })
}

/// Decay envelope of `|D_ℛ u|` for a solved corrector.
pub fn decay_envelope(
    pot: &SitePotential,
    domain: &Domain,
    values: &[f64],
    r_min: f64,
    r_max: f64,
    bins: usize,
) -> Result<DecaySeries> {
    let valid = domain.radius - pot.neighbors.max_length(&domain.spec);
    if r_max > valid {
        return Err(Error::Analysis(format!("fit window ends at {r_max}, beyond the valid radius {valid}")));
    }
    envelope_from_points(strain_magnitudes(pot, domain, values), r_min, r_max, bins)
}

/// Decay envelope of `|f|` inside the valid radius of a residual field.
pub fn residual_envelope(f: &ResidualField, r_min: f64, r_max: f64, bins: usize) -> Result<DecaySeries> {
    if r_max > f.valid_radius {
        return Err(Error::Analysis(format!("fit window ends at {r_max}, beyond the valid radius {}", f.valid_radius)));
    }
    let points = f
        .sites
        .iter()
        .zip(&f.offsets)
        .zip(&f.values)
        .map(|((_, &off), &v)| DecayPoint { x: off, r: norm(off), value: v.abs() })
        .collect();
    envelope_from_points(points, r_min, r_max, bins)
}

/// `u - Σ_{l ≤ order} u_l` sampled on the domain sites, where the levels are
/// those of `pred`.
pub fn remainder_field(domain: &Domain, values: &[f64], pred: &Predictor) -> Result<Vec<f64>> {
    domain
        .sites
        .iter()
        .zip(values)
        .map(|(&x, &v)| Ok(v - pred.corrections(domain.spec.position(x))?))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceEntry {
    pub radius: f64,
    pub h1_error: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceEntry>,
    pub fit: Option<Fit>,
    /// Errors decrease with the radius over the unflagged rows.
    pub monotone: bool,
}

impl ConvergenceTable {
    pub fn new(rows: Vec<ConvergenceEntry>) -> Self {
        let mut t = ConvergenceTable { rows, fit: None, monotone: true };
        t.monotone = t.rows.iter().filter(|r| r.converged).collect::<Vec<_>>().windows(2).all(|w| w[1].h1_error < w[0].h1_error);
        t.fit = fit_rate(&t).ok();
        t
    }
}

/// Log-log slope of error against radius over the converged rows.
pub fn fit_rate(table: &ConvergenceTable) -> Result<Fit> {
    let rows: Vec<&ConvergenceEntry> = table.rows.iter().filter(|r| r.converged).collect();
    if rows.len() < 3 {
        return Err(Error::Analysis(format!("need at least 3 converged rows for a rate, have {}", rows.len())));
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.radius).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.h1_error).collect();
    fit_loglog(&xs, &ys).ok_or_else(|| Error::Analysis("degenerate convergence table".into()))
}

pub fn write_decay_csv(path: &Path, points: &[DecayPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x1", "x2", "r", "du_norm"])?;
    for p in points {
        w.write_record([fmt(p.x[0]), fmt(p.x[1]), fmt(p.r), fmt(p.value)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_convergence_csv(path: &Path, table: &ConvergenceTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["R", "h1_error", "converged"])?;
    for r in &table.rows {
        w.write_record([fmt(r.radius), fmt(r.h1_error), r.converged.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Shortest representation that round-trips.
fn fmt(x: f64) -> String {
    format!("{x:?}")
}

/// Lattice sites as plain coordinates, for callers that report per-site data.
pub fn site_positions(domain: &Domain) -> Vec<(Site, Vec2)> {
    domain.sites.iter().map(|&x| (x, domain.spec.position(x))).collect()
}
