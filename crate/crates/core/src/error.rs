use thiserror::Error;

/// Errors raised by the spectral, analysis and simulation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value in component {component} at lattice index {index}")]
    NonFinite { component: usize, index: usize },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("rank mismatch: expected {expected}, found {found}")]
    RankMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("multiplier is singular at lattice mode {mode:?}")]
    SingularMultiplier { mode: Vec<i64> },

    #[error("negative-order operator applied to a field with nonzero mean (|mean| = {mean:e})")]
    NonzeroMean { mean: f64 },

    #[error("dyadic block {j} is outside the resolvable range [{min}, {max}]")]
    BlockOutOfRange { j: i32, min: i32, max: i32 },

    #[error("field is not band-limited to the dealiased range (energy fraction {fraction:e} outside)")]
    NotBandLimited { fraction: f64 },

    #[error("density floor violated: 1 + a = {value} < {floor} at lattice index {index}")]
    DensityFloor { value: f64, floor: f64, index: usize },

    #[error("CFL bound violated: dt = {dt} exceeds {limit}; suggested dt = {suggested}")]
    Cfl { dt: f64, limit: f64, suggested: f64 },

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("series is empty")]
    EmptySeries,

    #[error("need at least {needed} samples, found {found}")]
    TooFewSamples { needed: usize, found: usize },

    #[error("non-finite propagator output at xi = {xi:?}")]
    NonFinitePropagator { xi: Vec<f64> },

    #[error("energy functional is only equivalent for k <= k0 (k = {k}, k0 = {k0})")]
    AboveThreshold { k: i32, k0: i32 },

    #[error("eigen-decomposition failed at xi = {xi:?}")]
    EigenFailure { xi: Vec<f64> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error("run aborted after step {step} (t = {t}): {cause}")]
    RunAborted { step: usize, t: f64, cause: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
