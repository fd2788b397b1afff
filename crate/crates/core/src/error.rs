use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dislocation core {0:?} coincides with a lattice site")]
    CoreOnSite([f64; 2]),

    #[error("domain radius {radius} is too small (need at least {min})")]
    DomainTooSmall { radius: f64, min: f64 },

    #[error("image of site {0:?} under the core rotation is not a lattice site")]
    NotOnLattice([i64; 2]),

    #[error("invalid rotation: {0}")]
    BadRotation(String),

    #[error("unsupported invariant tensor space (m = {order}, N = {n}, reflection = {reflection})")]
    UnsupportedTensorSpace { order: usize, n: usize, reflection: bool },

    #[error("embedding density {0} is not positive")]
    EmbeddingDomain(f64),

    #[error("potential declares {symmetry} symmetry but it fails on random strains (deviation {deviation:e})")]
    SymmetryViolated { symmetry: &'static str, deviation: f64 },

    #[error("Cauchy-Born tensors: {0}")]
    CauchyBorn(String),

    #[error("predictor: {0}")]
    Predictor(String),

    #[error("solver: {0}")]
    Solver(String),

    #[error("analysis: {0}")]
    Analysis(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
