//! End-to-end acceptance checks. Runs every preset plus targeted checks and
//! prints one PASS/FAIL line per criterion; exits non-zero if any fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use dislocore::analysis::{envelope_from_points, DecayPoint};
use dislocore::energy::EnergyModel;
use dislocore::lattice::{rotation, Domain, LatticeKind};
use dislocore::potentials::{cauchy_born, contracted_w2, EamParams, SitePotential};
use dislocore::predictor::{verify_corrector_pdes, Predictor};
use dislocore::solve::{Method, SolveReport};
use dislocore::tensors::{e111_minus_3e122, invariant_dimension, line_reflection, project, SymTensor};
use dislocore_cli::config::{Case, ExperimentConfig, FitConfig};
use dislocore_cli::experiment::{require_quadratic_term, run_experiment, Outcome, Plan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Check {
    pass: bool,
    detail: String,
}

impl Check {
    fn new(pass: bool, detail: String) -> Self {
        Check { pass, detail }
    }
}

struct PresetRun {
    tol: f64,
    method: Method,
    decay: Outcome,
    decay_seconds: f64,
    convergence: Outcome,
}

fn presets_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets")
}

fn run_presets(tmp: &Path) -> BTreeMap<String, PresetRun> {
    let mut runs = BTreeMap::new();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(presets_dir()).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    for path in paths {
        let name = path.file_stem().unwrap().to_string_lossy().into_owned();
        let cfg = ExperimentConfig::load(&path).unwrap().normalized().unwrap();
        let solver = cfg.solver.clone().unwrap();
        let mut decay_cfg = cfg.clone();
        decay_cfg.radii.clear();
        decay_cfg.r_ref = None;
        decay_cfg.plots = false;
        decay_cfg.out = tmp.join(format!("{name}-decay"));
        let t = Instant::now();
        let decay = run_experiment(&decay_cfg, Plan { decay: true, convergence: false }).unwrap();
        let decay_seconds = t.elapsed().as_secs_f64();
        let mut conv_cfg = cfg.clone();
        conv_cfg.plots = false;
        conv_cfg.out = tmp.join(format!("{name}-convergence"));
        let convergence = run_experiment(&conv_cfg, Plan { decay: false, convergence: true }).unwrap();
        eprintln!("  ran preset {name} (decay solve {decay_seconds:.1} s)");
        runs.insert(
            name,
            PresetRun {
                tol: solver.tol_inf,
                method: solver.method,
                decay,
                decay_seconds,
                convergence,
            },
        );
    }
    runs
}

fn slope(r: &PresetRun) -> f64 {
    r.decay.summary.decay.as_ref().and_then(|d| d.slope).unwrap_or(f64::NAN)
}

fn rate(r: &PresetRun) -> f64 {
    r.convergence.summary.convergence.as_ref().and_then(|c| c.rate).unwrap_or(f64::NAN)
}

fn in_range(x: f64, lo: f64, hi: f64) -> bool {
    x >= lo && x <= hi
}

fn decay_criterion(runs: &BTreeMap<String, PresetRun>, name: &str, lo: f64, hi: f64, max_seconds: Option<f64>) -> Check {
    let r = &runs[name];
    let s = slope(r);
    let mut pass = in_range(s, lo, hi) && r.decay.summary.converged;
    let mut detail = format!("{name} R = 128: envelope slope {s:.3} on [10, 40], required [{lo}, {hi}]");
    if let Some(limit) = max_seconds {
        pass &= r.decay_seconds < limit;
        detail += &format!("; runtime {:.1} s (< {limit} s)", r.decay_seconds);
    }
    Check::new(pass, detail)
}

fn criterion4(runs: &BTreeMap<String, PresetRun>) -> Check {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, expect) in [("square-sym", -2.0), ("tri-sym", -3.0), ("tri-asym", -1.0)] {
        let r = &runs[name];
        let k = rate(r);
        pass &= (k - expect).abs() <= 0.5 && r.convergence.summary.converged;
        parts.push(format!("{name} {k:.3} (target {expect})"));
    }
    Check::new(pass, format!("R in {{8,16,32,64}}, Rref = 256: rates {}", parts.join(", ")))
}

fn criterion5(runs: &BTreeMap<String, PresetRun>) -> Check {
    let mut pass = true;
    let mut parts = Vec::new();
    for core in ["bcc-easy", "bcc-hard"] {
        let rs: Vec<&PresetRun> = (0..3).map(|o| &runs[&format!("{core}-order{o}")]).collect();
        let slopes: Vec<f64> = rs.iter().map(|r| slope(r)).collect();
        let rates: Vec<f64> = rs.iter().map(|r| rate(r)).collect();
        for (o, r) in rs.iter().enumerate() {
            pass &= r.decay.summary.c_quad.abs() >= 1e-8;
            pass &= (slopes[o] - (-2.0 - o as f64)).abs() <= 0.5;
            pass &= (rates[o] - (-1.0 - o as f64)).abs() <= 0.5;
            pass &= r.decay.summary.converged && r.convergence.summary.converged;
        }
        pass &= slopes[0] > slopes[1] && slopes[1] > slopes[2];
        pass &= rates[0] > rates[1] && rates[1] > rates[2];
        parts.push(format!(
            "{core} c_quad {:.3}: slopes {:.2}/{:.2}/{:.2}, rates {:.2}/{:.2}/{:.2}",
            rs[0].decay.summary.c_quad, slopes[0], slopes[1], slopes[2], rates[0], rates[1], rates[2]
        ));
    }
    let aborts = require_quadratic_term(Case::BccEasy, 5e-9).is_err();
    pass &= aborts;
    parts.push(format!("c_quad = 5e-9 aborts: {aborts}"));
    Check::new(pass, parts.join("; "))
}

fn random_tensor(order: usize, rng: &mut ChaCha8Rng) -> SymTensor {
    SymTensor::from_entries(order, (0..1 << order).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn criterion6() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut idem, mut adj) = (0.0f64, 0.0f64);
    for order in 2..=4 {
        for n in [3usize, 4] {
            let q = rotation(2.0 * PI / n as f64);
            for _ in 0..100 {
                let a = random_tensor(order, &mut rng);
                let b = random_tensor(order, &mut rng);
                let pa = project(&a, &q, n).unwrap();
                let pb = project(&b, &q, n).unwrap();
                idem = idem.max((&project(&pa, &q, n).unwrap() - &pa).max_abs());
                adj = adj.max((pa.dot(&b) - a.dot(&pb)).abs());
            }
        }
    }
    let q3 = rotation(2.0 * PI / 3.0);
    let s = line_reflection();
    let dims = [
        invariant_dimension(2, &q3, 3, None).unwrap(),
        invariant_dimension(3, &q3, 3, None).unwrap(),
        invariant_dimension(3, &q3, 3, Some(&s)).unwrap(),
        invariant_dimension(4, &q3, 3, None).unwrap(),
    ];
    let mut trace_dev = 0.0f64;
    for _ in 0..100 {
        let a = random_tensor(2, &mut rng).symmetrize();
        let tr = a.get(&[0, 0]) + a.get(&[1, 1]);
        trace_dev = trace_dev.max((&project(&a, &q3, 3).unwrap() - &SymTensor::identity().scale(0.5 * tr)).max_abs());
    }
    let pass = idem <= 1e-12 && adj <= 1e-12 && dims == [1, 2, 1, 1] && trace_dev <= 1e-14;
    Check::new(
        pass,
        format!(
            "max |P²A - PA| {idem:.1e}, max |<PA,B> - <A,PB>| {adj:.1e}; dimensions {dims:?} (want [1, 2, 1, 1]); \
             max |PA - ½tr(A) Id| {trace_dev:.1e}"
        ),
    )
}

fn shipped_potentials() -> Vec<SitePotential> {
    vec![
        SitePotential::pair_sin2(LatticeKind::Square, 1.0).unwrap(),
        SitePotential::pair_sin2(LatticeKind::Triangular, 1.0).unwrap(),
        SitePotential::eam_bcc(EamParams::default()).unwrap(),
    ]
}

fn criterion7() -> Check {
    let mut pass = true;
    let mut parts = Vec::new();
    let closed = [4.0 * PI * PI, 4.0 * 3f64.sqrt() * PI * PI];
    for (k, pot) in shipped_potentials().iter().enumerate() {
        let cb = cauchy_born(pot).unwrap();
        let iso = (&cb.w2 - &SymTensor::identity().scale(cb.c_lin)).norm() / cb.c_lin.abs();
        pass &= iso < 1e-8;
        let oracle = contracted_w2(pot).unwrap();
        let c_oracle = 0.5 * (oracle.get(&[0, 0]) + oracle.get(&[1, 1]));
        if k < 2 {
            let rel = (cb.c_lin - closed[k]).abs() / closed[k];
            let rel_oracle = (c_oracle - closed[k]).abs() / closed[k];
            let w3 = cb.w3.max_abs();
            pass &= rel < 1e-6 && rel_oracle < 1e-12 && w3 < 1e-8;
            parts.push(format!(
                "{} c_lin {:.9} (closed form rel {rel:.1e}, contraction rel {rel_oracle:.1e}), |W3| {w3:.1e}, iso {iso:.1e}",
                pot.name(),
                cb.c_lin
            ));
        } else {
            let model = e111_minus_3e122().scale(cb.c_quad);
            let rel = (&cb.w3 - &model).norm() / cb.w3.norm();
            let rel_oracle = (cb.c_lin - c_oracle).abs() / c_oracle;
            pass &= rel < 1e-5 && rel_oracle < 1e-6 && cb.c_quad.abs() > 1e-8;
            parts.push(format!(
                "{} c_lin {:.6} (contraction rel {rel_oracle:.1e}), c_quad {:.6}, |W3 - c_quad E|/|W3| {rel:.1e}, iso {iso:.1e}",
                pot.name(),
                cb.c_lin,
                cb.c_quad
            ));
        }
    }
    Check::new(pass, parts.join("; "))
}

fn criterion8(runs: &BTreeMap<String, PresetRun>) -> Check {
    let r = &runs["tri-sym"];
    let f = r.decay.summary.residual.as_ref().unwrap();
    let s = f.slope.unwrap_or(f64::NAN);
    let m1 = f.m1[0].hypot(f.m1[1]);
    let pass = s <= -4.5
        && f.m0.abs() <= 1e-8 * f.abs_sum
        && m1 <= f.truncation[1]
        && f.m2_anisotropy <= f.anisotropy_bound
        && !f.flagged;
    Check::new(
        pass,
        format!(
            "tri-sym R = 128: f slope {s:.3} (<= -4.5); |m0| {:.1e} vs 1e-8·Σ|f| = {:.1e}; |m1| {m1:.1e} <= bound {:.1e}; \
             m2 anisotropy {:.2e} <= bound {:.2e}",
            f.m0.abs(),
            1e-8 * f.abs_sum,
            f.truncation[1],
            f.m2_anisotropy,
            f.anisotropy_bound
        ),
    )
}

fn criterion9() -> Check {
    let pot = SitePotential::eam_bcc(EamParams::default()).unwrap();
    let cb = cauchy_born(&pot).unwrap();
    let mut worst = [0.0f64; 2];
    let mut pass = true;
    for b in [-pot.period, pot.period] {
        let pred = Predictor::new(b, pot.lattice.core, 2, cb.c_lin, cb.c_quad, pot.period).unwrap();
        let rep = verify_corrector_pdes(&pred, &[5.0, 10.0, 20.0]).unwrap();
        pass &= rep.passed;
        worst = [worst[0].max(rep.max_rel_residual[0]), worst[1].max(rep.max_rel_residual[1])];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pred = Predictor::linear(1.0, [0.0, 0.0], 1.0).unwrap();
    let mut h = 0.0f64;
    for _ in 0..20 {
        let x = [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)];
        h = h.max(pred.mean_curvature_uhat(x).unwrap().abs());
    }
    pass &= worst[0] < 1e-3 && worst[1] < 1e-3 && h < 1e-10;
    Check::new(
        pass,
        format!("max relative residual u1 {:.1e}, u2 {:.1e} at r in {{5, 10, 20}}; max |H(û)| {h:.1e} at 20 points", worst[0], worst[1]),
    )
}

fn fd_errors(pot: SitePotential, pred: Predictor, seed: u64) -> (f64, f64) {
    let spec = pot.lattice.clone();
    let model = EnergyModel::new(pot, pred, Arc::new(Domain::ball(&spec, 8.0).unwrap())).unwrap();
    let n = model.n_free();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Vec<f64> = (0..n).map(|_| rng.random_range(-0.15..0.15)).collect();
    let (_, g) = model.energy_and_gradient(&u).unwrap();
    let hess = model.assemble_hessian(&u).unwrap();
    let (mut eg, mut eh) = (0.0f64, 0.0f64);
    for _ in 0..5 {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let shift = |s: f64| -> Vec<f64> { u.iter().zip(&v).map(|(a, b)| a + s * b).collect() };
        let norm = |x: &[f64]| x.iter().map(|y| y * y).sum::<f64>().sqrt();
        let h = 1e-6;
        let fd = (model.energy(&shift(h)).unwrap() - model.energy(&shift(-h)).unwrap()) / (2.0 * h);
        let gv: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
        eg = eg.max((fd - gv).abs() / (norm(&g) * norm(&v)));
        let h = 1e-5;
        let (gp, gm) = (model.gradient(&shift(h)).unwrap(), model.gradient(&shift(-h)).unwrap());
        let hv = hess.mul(&v);
        let diff: Vec<f64> = (0..n).map(|i| (gp[i] - gm[i]) / (2.0 * h) - hv[i]).collect();
        eh = eh.max(norm(&diff) / norm(&hv));
    }
    (eg, eh)
}

fn thread_reproducible(tmp: &Path) -> (bool, String) {
    let mut ok = true;
    let mut names = Vec::new();
    for (case, order) in [(Case::TriAsym, 0u8), (Case::BccEasy, 2)] {
        let mut outputs = Vec::new();
        for threads in [1usize, 4] {
            let mut cfg = ExperimentConfig::new(case);
            cfg.order = order;
            cfg.radius = 32.0;
            cfg.radii = vec![6.0, 8.0, 12.0];
            cfg.fit = FitConfig { r_min: 4.0, r_max: Some(12.0), bins: 6 };
            cfg.plots = false;
            cfg.out = tmp.join(format!("threads-{case}-{threads}"));
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| run_experiment(&cfg, Plan { decay: true, convergence: true })).unwrap();
            outputs.push(["decay.csv", "envelope.csv", "convergence.csv"].map(|f| std::fs::read(cfg.out.join(f)).unwrap()));
        }
        ok &= outputs[0] == outputs[1];
        names.push(case.name());
    }
    (ok, format!("CSVs identical with 1 and 4 threads for {}: {ok}", names.join(", ")))
}

fn solve_reports(r: &PresetRun) -> Vec<&SolveReport> {
    let mut v: Vec<&SolveReport> = r.decay.report.decay_solve.iter().collect();
    if let Some(study) = &r.convergence.report.convergence {
        v.push(&study.reference);
        v.extend(study.rows.iter().map(|row| &row.report));
    }
    v
}

fn criterion10(runs: &BTreeMap<String, PresetRun>, tmp: &Path) -> Check {
    let mut pass = true;
    let mut parts = Vec::new();
    let (mut eg, mut eh) = (0.0f64, 0.0f64);
    for (k, pot) in shipped_potentials().into_iter().enumerate() {
        let (b, order) = if k == 2 { (-pot.period, 2) } else { (1.0, 0) };
        let cb = cauchy_born(&pot).unwrap();
        let pred = Predictor::new(b, pot.lattice.core, order, cb.c_lin, cb.c_quad, pot.period).unwrap();
        let (g, h) = fd_errors(pot, pred, 10 + k as u64);
        eg = eg.max(g);
        eh = eh.max(h);
    }
    pass &= eg < 1e-6 && eh < 1e-5;
    parts.push(format!("gradient vs FD {eg:.1e}, Hessian vs FD {eh:.1e}"));
    let (mut newton, mut lbfgs) = (0.0f64, 0.0f64);
    let mut count = 0;
    for r in runs.values() {
        for rep in solve_reports(r) {
            count += 1;
            pass &= rep.converged && rep.residual_inf <= r.tol;
            match r.method {
                Method::Newton => {
                    pass &= r.tol <= 1e-8;
                    newton = newton.max(rep.residual_inf);
                }
                Method::Lbfgs => {
                    pass &= r.tol <= 1e-6;
                    lbfgs = lbfgs.max(rep.residual_inf);
                }
            }
        }
    }
    parts.push(format!("{count} preset solves: max residual Newton {newton:.1e} (<= 1e-8), LBFGS {lbfgs:.1e} (<= 1e-6)"));
    let (ok, msg) = thread_reproducible(tmp);
    pass &= ok;
    parts.push(msg);
    Check::new(pass, parts.join("; "))
}

/// Halving the number of bins moves each preset's slope by less than 0.15.
fn fit_stability(runs: &BTreeMap<String, PresetRun>) -> Check {
    let mut worst = 0.0f64;
    for r in runs.values() {
        let mut rd = csv::Reader::from_path(r.decay.out.join("decay.csv")).unwrap();
        let pts: Vec<DecayPoint> = rd
            .records()
            .map(|rec| {
                let rec = rec.unwrap();
                let v = |k: usize| rec[k].parse::<f64>().unwrap();
                DecayPoint { x: [v(0), v(1)], r: v(2), value: v(3) }
            })
            .collect();
        let s4 = envelope_from_points(pts, 10.0, 40.0, 4).unwrap().fit.unwrap().slope;
        worst = worst.max((s4 - slope(r)).abs());
    }
    Check::new(worst < 0.15, format!("largest slope change with half the bins {worst:.3} (< 0.15) over all presets"))
}

fn main() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    eprintln!("acceptance: running presets");
    let runs = run_presets(tmp.path());
    let checks: Vec<(&str, Check)> = vec![
        ("decay, square symmetric core", decay_criterion(&runs, "square-sym", -3.5, -2.6, Some(120.0))),
        ("decay, triangular symmetric core", decay_criterion(&runs, "tri-sym", -4.6, -3.5, None)),
        ("decay, asymmetric core", decay_criterion(&runs, "tri-asym", -2.4, -1.8, None)),
        ("supercell convergence rates", criterion4(&runs)),
        ("BCC predictor ladder", criterion5(&runs)),
        ("tensor projector and invariant spaces", criterion6()),
        ("Cauchy-Born coefficients", criterion7()),
        ("linear residual decay and moments", criterion8(&runs)),
        ("predictor PDEs and helicoid", criterion9()),
        ("numerical hygiene", criterion10(&runs, tmp.path())),
    ];
    let mut failed = 0;
    for (k, (title, c)) in checks.iter().enumerate() {
        println!("criterion {:>2} {} {title}: {}", k + 1, if c.pass { "PASS" } else { "FAIL" }, c.detail);
        failed += usize::from(!c.pass);
    }
    let stab = fit_stability(&runs);
    println!("check        {} fit stability: {}", if stab.pass { "PASS" } else { "FAIL" }, stab.detail);
    failed += usize::from(!stab.pass);
    println!(
        "acceptance: {} of {} passed in {:.0} s",
        checks.len() + 1 - failed,
        checks.len() + 1,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
