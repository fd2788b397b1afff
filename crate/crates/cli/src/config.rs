//! Experiment configuration: a TOML file, optionally overridden by flags.
//!
//! ```toml
//! case = "bcc-easy"        # square-sym | tri-sym | tri-asym | bcc-easy | bcc-hard
//! order = 2                # predictor corrections (BCC only)
//! R = 128                  # supercell radius of the decay run
//! radii = [8, 16, 32, 64]  # convergence study radii (optional)
//! Rref = 256               # reference radius (default 4 × max radii)
//! seed = 0
//! out = "out/bcc-easy-2"
//! jobs = 1
//! plots = true
//!
//! [fit]
//! r_min = 10
//! r_max = 40               # default R/3
//! bins = 8
//!
//! [solver]                 # default: newton for pair cases, lbfgs for BCC
//! method = "lbfgs"
//! tol_inf = 1e-6
//!
//! [potential]              # default follows the case
//! type = "eam-bcc"
//! k_rho = 1.0
//! k_phi = 8.0
//! cutoff = 1.378858
//! ```

use std::path::{Path, PathBuf};

use dislocore::lattice::{CoreChoice, LatticeKind, LatticeSpec, BCC_PERIOD};
use dislocore::potentials::{EamParams, SitePotential};
use dislocore::solve::SolveConfig;
use dislocore::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Core position of the asymmetric triangular case, in lattice units.
pub const ASYMMETRIC_CORE: [f64; 2] = [0.25, 0.125];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Case {
    SquareSym,
    TriSym,
    TriAsym,
    BccEasy,
    BccHard,
}

impl Case {
    pub fn name(self) -> &'static str {
        match self {
            Case::SquareSym => "square-sym",
            Case::TriSym => "tri-sym",
            Case::TriAsym => "tri-asym",
            Case::BccEasy => "bcc-easy",
            Case::BccHard => "bcc-hard",
        }
    }

    pub fn is_bcc(self) -> bool {
        matches!(self, Case::BccEasy | Case::BccHard)
    }

    pub fn lattice(self) -> LatticeKind {
        match self {
            Case::SquareSym => LatticeKind::Square,
            _ => LatticeKind::Triangular,
        }
    }

    pub fn spec(self) -> Result<LatticeSpec> {
        let core = match self {
            Case::TriAsym => CoreChoice::Custom(ASYMMETRIC_CORE),
            _ => CoreChoice::Symmetric,
        };
        LatticeSpec::new(self.lattice(), core)
    }

    pub fn burgers(self) -> f64 {
        match self {
            Case::BccEasy => -BCC_PERIOD,
            Case::BccHard => BCC_PERIOD,
            _ => 1.0,
        }
    }

    /// Expected decay exponent of `|D ū|`.
    pub fn expected_decay(self, order: u8) -> f64 {
        match self {
            Case::SquareSym => -3.0,
            Case::TriSym => -4.0,
            Case::TriAsym => -2.0,
            Case::BccEasy | Case::BccHard => -2.0 - order as f64,
        }
    }

    /// Expected rate of the supercell error in `R`.
    pub fn expected_rate(self, order: u8) -> f64 {
        self.expected_decay(order) + 1.0
    }

    pub fn default_potential(self) -> PotentialConfig {
        if self.is_bcc() {
            let p = EamParams::default();
            PotentialConfig::EamBcc { k_rho: p.k_rho, k_phi: p.k_phi, cutoff: p.cutoff }
        } else {
            PotentialConfig::PairSin2 { amplitude: 1.0 }
        }
    }

    pub fn default_solver(self) -> SolveConfig {
        if self.is_bcc() {
            SolveConfig::lbfgs()
        } else {
            SolveConfig::newton()
        }
    }
}

impl std::fmt::Display for Case {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialConfig {
    PairSin2 { amplitude: f64 },
    EamBcc { k_rho: f64, k_phi: f64, cutoff: f64 },
}

impl PotentialConfig {
    pub fn build(&self, lattice: LatticeKind) -> Result<SitePotential> {
        match *self {
            PotentialConfig::PairSin2 { amplitude } => SitePotential::pair_sin2(lattice, amplitude),
            PotentialConfig::EamBcc { k_rho, k_phi, cutoff } => {
                if lattice != LatticeKind::Triangular {
                    return Err(Error::Config("the BCC model lives on the triangular lattice".into()));
                }
                SitePotential::eam_bcc(EamParams { k_rho, k_phi, cutoff })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "default_r_min")]
    pub r_min: f64,
    /// Defaults to `R / 3`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_max: Option<f64>,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_r_min() -> f64 {
    10.0
}

fn default_bins() -> usize {
    8
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { r_min: default_r_min(), r_max: None, bins: default_bins() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub case: Case,
    #[serde(default)]
    pub order: u8,
    #[serde(rename = "R", default = "default_radius")]
    pub radius: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub radii: Vec<f64>,
    #[serde(rename = "Rref", default, skip_serializing_if = "Option::is_none")]
    pub r_ref: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default = "default_plots")]
    pub plots: bool,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolveConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialConfig>,
}

fn default_radius() -> f64 {
    64.0
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_jobs() -> usize {
    1
}

fn default_plots() -> bool {
    true
}

impl ExperimentConfig {
    pub fn new(case: Case) -> Self {
        ExperimentConfig {
            case,
            order: 0,
            radius: default_radius(),
            radii: Vec::new(),
            r_ref: None,
            seed: 0,
            out: default_out(),
            jobs: default_jobs(),
            plots: default_plots(),
            fit: FitConfig::default(),
            solver: None,
            potential: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    /// Fills every default and validates. Idempotent.
    pub fn normalized(mut self) -> Result<Self> {
        if self.solver.is_none() {
            self.solver = Some(self.case.default_solver());
        }
        if self.potential.is_none() {
            self.potential = Some(self.case.default_potential());
        }
        if !self.radii.is_empty() && self.r_ref.is_none() {
            self.r_ref = Some(4.0 * self.radii.iter().copied().fold(0.0, f64::max));
        }
        if self.fit.r_max.is_none() {
            self.fit.r_max = Some(self.radius / 3.0);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.order > 2 {
            return bad(format!("order must be 0, 1 or 2, got {}", self.order));
        }
        if self.order > 0 && !self.case.is_bcc() {
            return bad(format!(
                "case {} has a mirror-symmetric potential, so u1 = u2 = 0; use order 0",
                self.case
            ));
        }
        if !(self.radius.is_finite() && self.radius >= 2.0) {
            return bad(format!("R must be at least 2, got {}", self.radius));
        }
        if self.radii.iter().any(|r| !(r.is_finite() && *r >= 2.0)) {
            return bad(format!("every convergence radius must be at least 2, got {:?}", self.radii));
        }
        if !self.radii.is_empty() && self.radii.len() < 3 {
            return bad(format!("a convergence study needs at least 3 radii, got {}", self.radii.len()));
        }
        if let Some(r_ref) = self.r_ref {
            let r_max = self.radii.iter().copied().fold(0.0, f64::max);
            if !self.radii.is_empty() && r_ref < 4.0 * r_max {
                return bad(format!("Rref = {r_ref} must be at least 4 x max(radii) = {}", 4.0 * r_max));
            }
        }
        if self.jobs == 0 {
            return bad("jobs must be positive".into());
        }
        let f = &self.fit;
        if !(f.r_min > 0.0) || f.bins < 2 {
            return bad(format!("fit window needs r_min > 0 and at least 2 bins, got {f:?}"));
        }
        if let Some(r_max) = f.r_max {
            if r_max <= f.r_min {
                return bad(format!("fit r_max = {r_max} must exceed r_min = {}", f.r_min));
            }
        }
        if let Some(s) = &self.solver {
            s.validate()?;
        }
        match (&self.potential, self.case.is_bcc()) {
            (Some(PotentialConfig::PairSin2 { .. }), true) => {
                return bad(format!("case {} needs the eam-bcc potential", self.case))
            }
            (Some(PotentialConfig::EamBcc { .. }), false) => {
                return bad(format!("case {} needs the pair-sin2 potential", self.case))
            }
            _ => {}
        }
        Ok(())
    }

    /// SHA-256 of the TOML text, ignoring settings that do not affect
    /// results (output directory, plots, job count).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.plots = default_plots();
        c.jobs = default_jobs();
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
