use thiserror::Error;

/// Everything that can go wrong in the library proper.
///
/// Numerical failures carry enough context (magnitudes, names) to be
/// actionable without a debugger; IO and config problems are kept separate
/// so the CLI can map them onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("operator entries must be finite")]
    NonFiniteEntries,

    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: {left} vs {right} in {context}")]
    DimensionMismatch {
        left: usize,
        right: usize,
        context: &'static str,
    },

    #[error("matrix is not Hermitian (max asymmetry {asymmetry:.3e}, tolerance {tol:.3e})")]
    NotHermitian { asymmetry: f64, tol: f64 },

    #[error("outcome has probability {prob:.3e}, below the zero threshold")]
    ZeroProbabilityOutcome { prob: f64 },

    #[error("Kraus operators do not resolve the identity (deviation {deviation:.3e}, tolerance {tol:.3e})")]
    IncompleteMeasurement { deviation: f64, tol: f64 },

    #[error("past-state denominator Tr(rho E) = {denominator:.3e} is degenerate")]
    DegeneratePastState { denominator: f64 },

    #[error("projectors are not mutually orthogonal (deviation {deviation:.3e})")]
    NonOrthogonalProjectors { deviation: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("step too large: {what} = {value:.3e} exceeds limit {limit:.3e}; reduce dt")]
    StepTooLarge {
        what: &'static str,
        value: f64,
        limit: f64,
    },

    #[error("non-finite increment encountered at step {step}")]
    NonFiniteIncrement { step: usize },

    #[error("record was produced by a different model (record {record}, model {model})")]
    FingerprintMismatch { record: String, model: String },

    #[error("observation sequence has zero probability at step {step}")]
    ImpossibleObservation { step: usize },

    #[error("{states} states over {steps} steps needs {paths:.3e} paths, above the enumeration cap {cap:.3e}")]
    TooLargeForEnumeration {
        states: usize,
        steps: usize,
        paths: f64,
        cap: f64,
    },

    #[error("{what} deviates by {value:.3e}, above tolerance {tol:.3e}")]
    ToleranceExceeded {
        what: &'static str,
        value: f64,
        tol: f64,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
