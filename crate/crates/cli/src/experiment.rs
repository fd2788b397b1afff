//! Experiment orchestration and artifact emission.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use dislocore::analysis::{
    decay_envelope, residual_envelope, write_convergence_csv, write_decay_csv, write_json, ConvergenceEntry,
    ConvergenceTable, DecaySeries, EnvelopeBin, Fit,
};
use dislocore::energy::{linear_residual, moments, Moments};
use dislocore::lattice::{Domain, LatticeSpec};
use dislocore::potentials::{check_symmetries, cauchy_born, stability_estimate, SitePotential, SymmetryReport};
use dislocore::predictor::{verify_corrector_pdes, PdeReport, Predictor};
use dislocore::solve::{solve_supercell, supercell_study, SolveConfig, SolveReport, SupercellStudy};
use dislocore::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{Case, ExperimentConfig};
use crate::svg::{Guide, LogLogPlot, Series, Style};

/// `|c_quad|` below this makes the BCC predictor ladder vacuous.
pub const MIN_C_QUAD: f64 = 1e-8;
const SYMMETRY_TRIALS: usize = 200;
const STABILITY_TRIALS: usize = 16;
const STABILITY_RADIUS: f64 = 8.0;
const PDE_RADII: [f64; 3] = [5.0, 10.0, 20.0];

/// Model quantities computed and checked before any solve.
#[derive(Clone, Debug)]
pub struct Setup {
    pub spec: LatticeSpec,
    pub pot: SitePotential,
    pub pred: Predictor,
    pub c_lin: f64,
    pub c_quad: f64,
    pub symmetry: SymmetryReport,
    pub stability: f64,
}

pub fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let case = cfg.case;
    let spec = case.spec()?;
    let pot = cfg.potential.clone().unwrap_or_else(|| case.default_potential()).build(case.lattice())?;
    let symmetry = check_symmetries(&pot, SYMMETRY_TRIALS, cfg.seed)?;
    let cb = cauchy_born(&pot)?;
    let stability = stability_estimate(&pot, STABILITY_TRIALS, STABILITY_RADIUS, cfg.seed)?;
    if !(stability > 0.0) {
        return Err(Error::Config(format!("potential is not lattice stable (stability estimate {stability:.3e})")));
    }
    require_quadratic_term(case, cb.c_quad)?;
    let pred = Predictor::new(case.burgers(), spec.core, cfg.order, cb.c_lin, cb.c_quad, pot.period)?;
    Ok(Setup { spec, pot, pred, c_lin: cb.c_lin, c_quad: cb.c_quad, symmetry, stability })
}

/// The BCC cases exist to test the effect of `c_quad`; refuse to run them
/// when it vanishes.
pub fn require_quadratic_term(case: Case, c_quad: f64) -> Result<()> {
    if case.is_bcc() && !(c_quad.abs() >= MIN_C_QUAD) {
        return Err(Error::Config(format!(
            "|c_quad| = {:.3e} < {MIN_C_QUAD:e}: the configured potential has no quadratic Cauchy-Born term, \
             so the predictor ladder cannot be tested",
            c_quad.abs()
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Plan {
    pub decay: bool,
    pub convergence: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecaySummary {
    pub slope: Option<f64>,
    pub mean_slope: Option<f64>,
    pub expected: f64,
    pub r_range: [f64; 2],
    pub bins: usize,
    pub merged_bins: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub slope: Option<f64>,
    pub m0: f64,
    pub m1: [f64; 2],
    pub m2_anisotropy: f64,
    pub abs_sum: f64,
    pub truncation: [f64; 3],
    pub anisotropy_bound: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub rate: Option<f64>,
    pub expected: f64,
    pub monotone: bool,
    pub nesting_ok: bool,
    pub rows: Vec<ConvergenceEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub case: Case,
    pub order: u8,
    #[serde(rename = "R")]
    pub radius: f64,
    pub version: String,
    pub config_hash: String,
    pub c_lin: f64,
    pub c_quad: f64,
    pub stability: f64,
    pub symmetry: SymmetryReport,
    pub decay: Option<DecaySummary>,
    pub residual: Option<ResidualSummary>,
    pub convergence: Option<ConvergenceSummary>,
    /// Every solve met its tolerance.
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub c_lin: f64,
    pub c_quad: f64,
    pub stability: f64,
    pub symmetry: SymmetryReport,
    pub predictor: Predictor,
    pub pde: Option<PdeReport>,
    pub decay_solve: Option<SolveReport>,
    pub decay_envelope: Vec<EnvelopeBin>,
    pub decay_fit: Option<Fit>,
    pub moments: Option<Moments>,
    pub convergence: Option<SupercellStudy>,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub summary: Summary,
    pub report: Report,
    pub out: PathBuf,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.summary.converged {
            0
        } else {
            1
        }
    }
}

/// Exit code for an error returned by [`run_experiment`].
pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}

/// Runs the decay solve at `R` and, if radii are configured, the supercell
/// convergence study. Artifacts are written to `cfg.out` as they become
/// available.
pub fn run_experiment(cfg: &ExperimentConfig, plan: Plan) -> Result<Outcome> {
    let cfg = cfg.clone().normalized()?;
    if plan.convergence && cfg.radii.is_empty() {
        return Err(Error::Config("a convergence study needs radii".into()));
    }
    let s = setup(&cfg)?;
    let solver: SolveConfig = cfg.solver.clone().expect("normalized");
    std::fs::create_dir_all(&cfg.out)?;
    let out = cfg.out.clone();
    let case = cfg.case;

    let mut report = Report {
        config: cfg.clone(),
        c_lin: s.c_lin,
        c_quad: s.c_quad,
        stability: s.stability,
        symmetry: s.symmetry.clone(),
        predictor: s.pred,
        pde: if cfg.order > 0 { Some(verify_corrector_pdes(&s.pred, &PDE_RADII)?) } else { None },
        decay_solve: None,
        decay_envelope: Vec::new(),
        decay_fit: None,
        moments: None,
        convergence: None,
    };
    let mut summary = Summary {
        case,
        order: cfg.order,
        radius: cfg.radius,
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        c_lin: s.c_lin,
        c_quad: s.c_quad,
        stability: s.stability,
        symmetry: s.symmetry.clone(),
        decay: None,
        residual: None,
        convergence: None,
        converged: true,
    };

    if plan.decay {
        let domain = Arc::new(Domain::ball(&s.spec, cfg.radius)?);
        let sol = solve_supercell(&s.pot, &s.pred, domain, &solver)?;
        summary.converged &= sol.report.converged;
        report.decay_solve = Some(sol.report.clone());
        let r_max = cfg.fit.r_max.expect("normalized");
        let series = decay_envelope(&s.pot, &sol.domain, &sol.values, cfg.fit.r_min, r_max, cfg.fit.bins)?;
        let f = linear_residual(&s.pot, &sol.domain, &sol.values)?;
        let fit_end = r_max.min(f.valid_radius);
        let f_series = residual_envelope(&f, cfg.fit.r_min, fit_end, cfg.fit.bins)?;
        let m = moments(&f);
        write_decay_csv(&out.join("decay.csv"), &series.points)?;
        write_envelope_csv(&out.join("envelope.csv"), &series.envelope)?;
        if cfg.plots {
            std::fs::write(out.join("decay.svg"), decay_plot(case, cfg.order, &series).render())?;
        }
        summary.decay = Some(DecaySummary {
            slope: series.fit.map(|f| f.slope),
            mean_slope: series.mean_fit.map(|f| f.slope),
            expected: case.expected_decay(cfg.order),
            r_range: [cfg.fit.r_min, r_max],
            bins: cfg.fit.bins,
            merged_bins: series.merged_bins,
        });
        summary.residual = Some(ResidualSummary {
            slope: f_series.fit.map(|f| f.slope),
            m0: m.m0,
            m1: m.m1,
            m2_anisotropy: m.m2_anisotropy,
            abs_sum: m.abs_sum,
            truncation: m.truncation,
            anisotropy_bound: m.anisotropy_bound,
            flagged: m.flagged,
        });
        report.decay_envelope = series.envelope.clone();
        report.decay_fit = series.fit;
        report.moments = Some(m);
        emit(&out, &summary, &report)?;
    }

    if plan.convergence || !cfg.radii.is_empty() {
        let r_ref = cfg.r_ref.expect("normalized");
        let (study, _) = supercell_study(&s.pot, &s.pred, &s.spec, &cfg.radii, r_ref, &solver, cfg.jobs)?;
        summary.converged &= study.reference.converged && study.rows.iter().all(|r| r.converged);
        let table = ConvergenceTable::new(
            study
                .rows
                .iter()
                .map(|r| ConvergenceEntry { radius: r.radius, h1_error: r.h1_error, converged: r.converged })
                .collect(),
        );
        write_convergence_csv(&out.join("convergence.csv"), &table)?;
        if cfg.plots {
            std::fs::write(out.join("convergence.svg"), convergence_plot(case, cfg.order, &table).render())?;
        }
        summary.convergence = Some(ConvergenceSummary {
            rate: table.fit.map(|f| f.slope),
            expected: case.expected_rate(cfg.order),
            monotone: table.monotone,
            nesting_ok: study.nesting_ok,
            rows: table.rows.clone(),
        });
        report.convergence = Some(study);
    }
    emit(&out, &summary, &report)?;
    Ok(Outcome { summary, report, out })
}

fn emit(out: &Path, summary: &Summary, report: &Report) -> Result<()> {
    write_json(&out.join("summary.json"), summary)?;
    write_json(&out.join("report.json"), report)
}

pub fn write_envelope_csv(path: &Path, bins: &[EnvelopeBin]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["r_lo", "r_hi", "r_center", "max", "mean", "count"])?;
    for b in bins {
        w.write_record([
            format!("{:?}", b.r_lo),
            format!("{:?}", b.r_hi),
            format!("{:?}", b.r_center),
            format!("{:?}", b.max),
            format!("{:?}", b.mean),
            b.count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Keeps at most `limit` points, chosen with a fixed stride.
fn thin(points: Vec<(f64, f64)>, limit: usize) -> Vec<(f64, f64)> {
    let stride = points.len().div_ceil(limit).max(1);
    points.into_iter().step_by(stride).collect()
}

fn slope_label(p: f64) -> String {
    format!("slope {p}")
}

pub fn decay_plot_from_data(
    case: Case,
    order: u8,
    points: Vec<(f64, f64)>,
    envelope: Vec<(f64, f64)>,
) -> LogLogPlot {
    let expected = case.expected_decay(order);
    let mut guides = Vec::new();
    if let Some(&(r, v)) = envelope.first() {
        guides.push(Guide { label: slope_label(expected), slope: expected, anchor: (r, 3.0 * v) });
    }
    LogLogPlot {
        title: format!("{case}, predictor order {order}"),
        x_label: "r".into(),
        y_label: "|D u|".into(),
        series: vec![
            Series { label: "sites".into(), points: thin(points, 4000), style: Style::Points },
            Series { label: "envelope".into(), points: envelope, style: Style::LineMarkers },
        ],
        guides,
    }
}

fn decay_plot(case: Case, order: u8, s: &DecaySeries) -> LogLogPlot {
    decay_plot_from_data(
        case,
        order,
        s.points.iter().filter(|p| p.r >= 1.0).map(|p| (p.r, p.value)).collect(),
        s.envelope.iter().map(|b| (b.r_center, b.max)).collect(),
    )
}

pub fn convergence_plot(case: Case, order: u8, t: &ConvergenceTable) -> LogLogPlot {
    let expected = case.expected_rate(order);
    let pts: Vec<(f64, f64)> = t.rows.iter().map(|r| (r.radius, r.h1_error)).collect();
    let guides = pts
        .first()
        .map(|&(r, e)| vec![Guide { label: slope_label(expected), slope: expected, anchor: (r, 2.0 * e) }])
        .unwrap_or_default();
    LogLogPlot {
        title: format!("{case}, predictor order {order}: supercell error"),
        x_label: "R".into(),
        y_label: "H1 error".into(),
        series: vec![Series { label: "error".into(), points: pts, style: Style::LineMarkers }],
        guides,
    }
}

/// Regenerates the SVG plots of a result directory from its CSV files.
pub fn replot(dir: &Path) -> Result<Vec<PathBuf>> {
    let summary: Summary = serde_json::from_reader(std::fs::File::open(dir.join("summary.json"))?)?;
    let mut written = Vec::new();
    let read = |name: &str, cols: [&str; 2]| -> Result<Option<Vec<(f64, f64)>>> {
        let path = dir.join(name);
        if !path.exists() {
            return Ok(None);
        }
        let mut r = csv::Reader::from_path(&path)?;
        let head = r.headers()?.clone();
        let idx = cols.map(|c| head.iter().position(|h| h == c));
        let [Some(a), Some(b)] = idx else {
            return Err(Error::Analysis(format!("{} lacks columns {cols:?}", path.display())));
        };
        let mut pts = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |k: usize| {
                rec[k].parse::<f64>().map_err(|e| Error::Analysis(format!("{}: bad number {:?}: {e}", path.display(), &rec[k])))
            };
            pts.push((parse(a)?, parse(b)?));
        }
        Ok(Some(pts))
    };
    if let (Some(points), Some(env)) = (read("decay.csv", ["r", "du_norm"])?, read("envelope.csv", ["r_center", "max"])?) {
        let points = points.into_iter().filter(|p| p.0 >= 1.0).collect();
        let path = dir.join("decay.svg");
        std::fs::write(&path, decay_plot_from_data(summary.case, summary.order, points, env).render())?;
        written.push(path);
    }
    if let Some(c) = &summary.convergence {
        let path = dir.join("convergence.svg");
        let table = ConvergenceTable::new(c.rows.clone());
        std::fs::write(&path, convergence_plot(summary.case, summary.order, &table).render())?;
        written.push(path);
    }
    Ok(written)
}
