use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dislocore::lattice::LatticeKind;
use dislocore::potentials::{cauchy_born, check_symmetries, stability_estimate};
use dislocore::Result;
use dislocore_cli::config::{Case, ExperimentConfig};
use dislocore_cli::experiment::{error_exit_code, replot, run_experiment, Plan};

const DEFAULT_RADII: [f64; 4] = [8.0, 16.0, 32.0, 64.0];

#[derive(Parser)]
#[command(name = "dislocore", version, about = "Lattice statics of anti-plane screw dislocations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve at radius R and report corrector decay; also runs a convergence
    /// study when radii are given.
    Run(ExperimentArgs),
    /// Supercell convergence study only (radii default to 8,16,32,64).
    Converge(ExperimentArgs),
    /// Print the Cauchy-Born coefficients of a potential.
    Tensors(ModelArgs),
    /// Test the declared symmetries of a potential on random strains.
    CheckSymmetry(ModelArgs),
    /// Regenerate SVG plots from the CSV files of a result directory.
    Plot { dir: PathBuf },
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML experiment file; flags override its values.
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    case: Option<Case>,
    #[arg(long)]
    order: Option<u8>,
    #[arg(long = "R")]
    radius: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    radii: Option<Vec<f64>>,
    #[arg(long = "Rref")]
    r_ref: Option<f64>,
    #[arg(long, value_enum)]
    potential: Option<PotentialName>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Skip SVG output.
    #[arg(long)]
    no_plots: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PotentialName {
    PairSin2,
    EamBcc,
}

#[derive(Clone, Copy, ValueEnum)]
enum LatticeName {
    Square,
    Triangular,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "pair-sin2")]
    potential: PotentialName,
    /// Ignored for eam-bcc, which always uses the triangular lattice.
    #[arg(long, value_enum, default_value = "triangular")]
    lattice: LatticeName,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ModelArgs {
    fn build(&self) -> Result<dislocore::potentials::SitePotential> {
        let (cfg, lattice) = match (self.potential, self.lattice) {
            (PotentialName::EamBcc, _) => (Case::BccEasy.default_potential(), LatticeKind::Triangular),
            (PotentialName::PairSin2, LatticeName::Square) => (Case::SquareSym.default_potential(), LatticeKind::Square),
            (PotentialName::PairSin2, LatticeName::Triangular) => (Case::TriSym.default_potential(), LatticeKind::Triangular),
        };
        cfg.build(lattice)
    }
}

fn experiment_config(a: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg = match (&a.config, a.case) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(case)) => ExperimentConfig::new(case),
        (None, None) => return Err(dislocore::Error::Config("give a config file or --case".into())),
    };
    if let Some(case) = a.case {
        cfg.case = case;
    }
    if let Some(o) = a.order {
        cfg.order = o;
    }
    if let Some(r) = a.radius {
        cfg.radius = r;
    }
    if let Some(r) = &a.radii {
        cfg.radii = r.clone();
    }
    if let Some(r) = a.r_ref {
        cfg.r_ref = Some(r);
    }
    if let Some(p) = a.potential {
        let case = match p {
            PotentialName::PairSin2 if cfg.case.is_bcc() => Case::TriSym,
            PotentialName::EamBcc if !cfg.case.is_bcc() => Case::BccEasy,
            _ => cfg.case,
        };
        cfg.potential = Some(case.default_potential());
    }
    if let Some(o) = &a.out {
        cfg.out = o.clone();
    }
    if let Some(j) = a.jobs {
        cfg.jobs = j;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.no_plots {
        cfg.plots = false;
    }
    Ok(cfg)
}

fn run(a: &ExperimentArgs, plan: Plan) -> i32 {
    let result = experiment_config(a).and_then(|mut cfg| {
        if plan.convergence && cfg.radii.is_empty() {
            cfg.radii = DEFAULT_RADII.to_vec();
        }
        run_experiment(&cfg, plan)
    });
    match result {
        Ok(o) => {
            let s = &o.summary;
            if let Some(d) = &s.decay {
                println!("decay slope {} (expected {}), mean-envelope slope {}", fmt_opt(d.slope), d.expected, fmt_opt(d.mean_slope));
            }
            if let Some(r) = &s.residual {
                println!("residual slope {}, m0 {:.3e}, |m1| {:.3e}", fmt_opt(r.slope), r.m0, r.m1[0].hypot(r.m1[1]));
            }
            if let Some(c) = &s.convergence {
                for row in &c.rows {
                    println!("R = {:>6}  error {:.4e}  converged {}", row.radius, row.h1_error, row.converged);
                }
                println!("convergence rate {} (expected {})", fmt_opt(c.rate), c.expected);
            }
            println!("results in {}", o.out.display());
            if !s.converged {
                eprintln!("error: not every solve converged");
            }
            o.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            error_exit_code(&e)
        }
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), |v| format!("{v:.3}"))
}

fn tensors(a: &ModelArgs) -> Result<()> {
    let pot = a.build()?;
    let cb = cauchy_born(&pot)?;
    println!("potential {}", pot.name());
    println!("c_lin = {:.12}", cb.c_lin);
    println!("c_quad = {:.12}", cb.c_quad);
    println!("W2 = {:?}", cb.w2.entries());
    println!("W3 = {:?}", cb.w3.entries());
    println!("stability estimate = {:.6}", stability_estimate(&pot, 16, 8.0, a.seed)?);
    Ok(())
}

fn symmetry(a: &ModelArgs) -> Result<()> {
    let pot = a.build()?;
    let r = check_symmetries(&pot, 200, a.seed)?;
    println!("potential {}", pot.name());
    let names = ["rotation", "mirror", "line reflection"];
    let held = [r.rotational, r.mirror, r.line_reflection];
    for k in 0..3 {
        println!("{:<16} {:<5} max deviation {:.3e}", names[k], held[k], r.max_deviation[k]);
    }
    Ok(())
}

fn report(r: Result<()>) -> i32 {
    match r {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            error_exit_code(&e)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(n) = std::env::var("DISLOCORE_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: DISLOCORE_THREADS must be a positive integer, got {n:?}");
                return ExitCode::from(2);
            }
        }
    }
    let code = match &cli.command {
        Command::Run(a) => run(a, Plan { decay: true, convergence: false }),
        Command::Converge(a) => run(a, Plan { decay: false, convergence: true }),
        Command::Tensors(a) => report(tensors(a)),
        Command::CheckSymmetry(a) => report(symmetry(a)),
        Command::Plot { dir } => report(replot(dir).map(|paths| {
            for p in paths {
                println!("wrote {}", p.display());
            }
        })),
    };
    ExitCode::from(code as u8)
}
