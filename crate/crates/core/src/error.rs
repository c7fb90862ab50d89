use thiserror::Error;

/// Errors produced anywhere in the simulation pipeline.
///
/// Every variant carries enough context to be reported as a machine-readable
/// record by the command-line front end (see [`Error::kind`]).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown material preset `{0}` (expected one of Au, nSi, paper-metal)")]
    UnknownPreset(String),

    #[error("invalid value for `{key}`: {constraint}")]
    Validation { key: String, constraint: String },

    #[error(
        "quadrature did not converge: error {error:.3e} exceeds tolerance {tolerance:.3e}; \
         worst subinterval [{worst_lo}, {worst_hi}]"
    )]
    QuadratureNonconvergence {
        error: f64,
        tolerance: f64,
        worst_lo: f64,
        worst_hi: f64,
    },

    #[error("time grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("time {t} outside tabulated range [0, {t_max}]")]
    OutOfRange { t: f64, t_max: f64 },

    #[error("step size underflow at t = {t} (h = {h:.3e}; D = {d:.6e}, f = {f:.6e}, zeta = {zeta:.6e})")]
    StepSizeUnderflow {
        t: f64,
        h: f64,
        d: f64,
        f: f64,
        zeta: f64,
    },

    #[error("purity {purity} exceeds 1 at t = {t}; coupling too strong for the weak-coupling master equation")]
    PurityExcursion { t: f64, purity: f64 },

    #[error("degenerate spectrum at sample {index} (t = {t}): |e1 - e2| = {gap:.3e}")]
    DegenerateSpectrum { index: usize, t: f64, gap: f64 },

    #[error("eigenvector branch tracking ambiguous at sample {index} (t = {t}): best overlap {overlap}")]
    OverlapBreak { index: usize, t: f64, overlap: f64 },

    #[error("insufficient points for fit: need at least {needed} distinct u > 0, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("all velocity corrections are below the numerical floor")]
    ZeroCorrection,

    #[error("target ratio {target} not bracketed for g in [{g_lo:e}, {g_hi:e}] (ratios {r_lo}, {r_hi})")]
    NoBracket {
        target: f64,
        g_lo: f64,
        g_hi: f64,
        r_lo: f64,
        r_hi: f64,
    },

    #[error("ratio is not monotone in g near g = {g:e}")]
    NonMonotonic { g: f64 },

    #[error("configuration syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("cache format error: {0}")]
    CacheFormat(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl Error {
    pub fn validation(key: &str, constraint: impl Into<String>) -> Self {
        Error::Validation {
            key: key.to_string(),
            constraint: constraint.into(),
        }
    }

    /// Short stable identifier used in error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnknownPreset(_) => "unknown-preset",
            Error::Validation { .. } => "validation",
            Error::QuadratureNonconvergence { .. } => "quadrature-nonconvergence",
            Error::GridTooCoarse(_) => "grid-too-coarse",
            Error::OutOfRange { .. } => "out-of-range",
            Error::StepSizeUnderflow { .. } => "step-size-underflow",
            Error::PurityExcursion { .. } => "purity-excursion",
            Error::DegenerateSpectrum { .. } => "degenerate-spectrum",
            Error::OverlapBreak { .. } => "overlap-break",
            Error::InsufficientPoints { .. } => "insufficient-points",
            Error::ZeroCorrection => "zero-correction",
            Error::NoBracket { .. } => "no-bracket",
            Error::NonMonotonic { .. } => "non-monotonic",
            Error::Syntax { .. } => "syntax",
            Error::CacheFormat(_) => "cache-format",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
