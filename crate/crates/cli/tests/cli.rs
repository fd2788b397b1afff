use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dislocore_cli::config::{Case, ExperimentConfig, FitConfig};
use dislocore_cli::experiment::{require_quadratic_term, run_experiment, Plan};
use dislocore_cli::Summary;
use proptest::prelude::*;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dislocore"))
}

fn presets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn summary(dir: &Path) -> Summary {
    serde_json::from_reader(std::fs::File::open(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn run_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("tri");
    let o = run(&["run", "--case", "tri-sym", "--R", "64", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["decay.csv", "envelope.csv", "decay.svg", "report.json", "summary.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let head = std::fs::read_to_string(out.join("decay.csv")).unwrap();
    assert!(head.starts_with("x1,x2,r,du_norm\n"));
    let s = summary(&out);
    let slope = s.decay.unwrap().slope.unwrap();
    assert!((-4.6..=-3.5).contains(&slope), "{slope}");
    assert!(s.converged);
    assert_eq!(s.config_hash.len(), 64);
    assert!(!out.join("convergence.csv").exists());
}

#[test]
fn bcc_convergence_study_has_one_row_per_radius() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bcc");
    let o = run(&[
        "converge", "--case", "bcc-easy", "--order", "2", "--radii", "8,16,32,64", "--Rref", "256", "--out",
        out.to_str().unwrap(), "--no-plots",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("convergence.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "R,h1_error,converged");
    assert_eq!(lines.len(), 5);
    assert!(lines[1..].iter().all(|l| l.ends_with(",true")));
    let rate = summary(&out).convergence.unwrap().rate.unwrap();
    assert!((rate + 3.0).abs() < 0.5, "{rate}");
    assert!(!out.join("convergence.svg").exists());
}

#[test]
fn tensors_prints_closed_form_coefficients() {
    let o = run(&["tensors", "--potential", "pair-sin2", "--lattice", "square"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let value = |key: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(key)).unwrap();
        line.split('=').nth(1).unwrap().trim().parse().unwrap()
    };
    let c_lin = value("c_lin");
    assert!((c_lin / (4.0 * std::f64::consts::PI.powi(2)) - 1.0).abs() < 1e-6);
    assert!(value("c_quad").abs() < 1e-8);
}

#[test]
fn check_symmetry_reports_missing_mirror_for_bcc() {
    let o = run(&["check-symmetry", "--potential", "eam-bcc"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("mirror") && l.contains("false")));
    assert!(text.lines().any(|l| l.starts_with("rotation") && l.contains("true")));
}

#[test]
fn invalid_configurations_exit_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["run", "--case", "tri-sym", "--order", "2", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("order"));
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "case = \"tri-sym\"\nunknown_key = 1\n").unwrap();
    assert_eq!(run(&["run", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["run", tmp.path().join("missing.toml").to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["run"]).status.code(), Some(2));
    let o = bin().args(["tensors"]).env("DISLOCORE_THREADS", "zero").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn vanishing_quadratic_term_aborts_bcc_runs() {
    assert!(matches!(require_quadratic_term(Case::BccEasy, 5e-9), Err(dislocore::Error::Config(_))));
    assert!(require_quadratic_term(Case::BccHard, 14.0).is_ok());
    assert!(require_quadratic_term(Case::TriSym, 0.0).is_ok());
}

#[test]
fn unconverged_runs_exit_with_code_1_and_keep_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.toml");
    let out = tmp.path().join("out");
    std::fs::write(
        &cfg,
        format!(
            "case = \"tri-asym\"\nR = 40\nout = {:?}\n[fit]\nr_min = 5\nr_max = 12\n[solver]\nmethod = \"lbfgs\"\nmax_iter = 1\n",
            out.to_str().unwrap()
        ),
    )
    .unwrap();
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("report.json").exists() && out.join("decay.csv").exists());
    assert!(!summary(&out).converged);
}

#[test]
fn plot_regenerates_svgs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("asym");
    let o = run(&[
        "run", "--case", "tri-asym", "--R", "48", "--radii", "6,8,12", "--out", out.to_str().unwrap(), "--no-plots",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join("decay.svg").exists());
    let o = run(&["plot", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    for f in ["decay.svg", "convergence.svg"] {
        let svg = std::fs::read_to_string(out.join(f)).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("slope"));
    }
}

#[test]
fn every_preset_is_valid() {
    let mut n = 0;
    for entry in std::fs::read_dir(presets()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap().normalized().unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap().normalized().unwrap();
        assert_eq!(again, cfg, "{}", path.display());
        assert_eq!(cfg.fit.r_max, Some(40.0));
        assert_eq!(cfg.radii.len(), 4);
        n += 1;
    }
    assert_eq!(n, 9);
}

fn small_config(case: Case, order: u8, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(case);
    cfg.order = order;
    cfg.radius = 30.0;
    cfg.radii = vec![6.0, 8.0, 12.0];
    cfg.fit = FitConfig { r_min: 4.0, r_max: Some(12.0), bins: 6 };
    cfg.out = out.to_path_buf();
    cfg
}

#[test]
fn outputs_are_reproducible_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    for (case, order) in [(Case::TriAsym, 0), (Case::BccHard, 2)] {
        let mut files = Vec::new();
        for threads in [1, 3] {
            let out = tmp.path().join(format!("{case}-{threads}"));
            let cfg = small_config(case, order, &out);
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let o = pool.install(|| run_experiment(&cfg, Plan { decay: true, convergence: true })).unwrap();
            assert!(o.summary.converged);
            files.push(
                ["decay.csv", "envelope.csv", "convergence.csv", "summary.json"]
                    .map(|f| std::fs::read(out.join(f)).unwrap()),
            );
        }
        for k in 0..4 {
            assert!(files[0][k] == files[1][k], "{case}: file {k} differs between thread counts");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trips(
        case in prop::sample::select(vec![Case::SquareSym, Case::TriSym, Case::TriAsym, Case::BccEasy, Case::BccHard]),
        order in 0u8..=2,
        radius in 40.0f64..300.0,
        n_radii in 0usize..5,
        seed in any::<u64>(),
        bins in 2usize..20,
        plots in any::<bool>(),
    ) {
        let mut cfg = ExperimentConfig::new(case);
        cfg.order = if case.is_bcc() { order } else { 0 };
        cfg.radius = radius;
        cfg.radii = if n_radii >= 3 { (0..n_radii).map(|k| 4.0 * 2f64.powi(k as i32)).collect() } else { Vec::new() };
        cfg.seed = seed;
        cfg.fit.bins = bins;
        cfg.plots = plots;
        let text = cfg.to_toml();
        let parsed = ExperimentConfig::from_toml(&text).unwrap();
        prop_assert_eq!(&parsed, &cfg);
        let n = parsed.normalized().unwrap();
        prop_assert_eq!(ExperimentConfig::from_toml(&n.to_toml()).unwrap(), n.clone());
        prop_assert_eq!(n.clone().normalized().unwrap().to_toml(), n.to_toml());
    }
}
