use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParams { field: &'static str, reason: String },

    #[error("angular frequency must be positive, got {0}")]
    NonPositiveOmega(f64),

    #[error("intensity must be positive, got {intensity} at t = {t} s")]
    NonPositiveIntensity { t: f64, intensity: f64 },

    #[error("time step {dt:e} s exceeds the resolution guard {max:e} s")]
    ResolutionGuard { dt: f64, max: f64 },

    #[error("integration became unstable at t = {t:e} s: {detail}")]
    Instability { t: f64, detail: String },

    #[error("least-squares fit did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("rank-deficient Jacobian at the optimum")]
    RankDeficient,

    #[error("not enough data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate histogram: all samples fall into a single bin")]
    DegenerateHistogram,

    #[error("ambiguous fold: folded and unfolded solutions fit equally well")]
    AmbiguousFold,

    #[error("response is not linear in the acceleration step (second/first difference = {ratio:e})")]
    Nonlinear { ratio: f64 },

    #[error("degenerate variance at t = {t:e} s")]
    DegenerateVariance { t: f64 },

    #[error("no post-quench extremum found")]
    NoExtremum,

    #[error("calibration slope must be non-zero")]
    ZeroSlope,

    #[error("zero uncertainty entry at index {0}")]
    ZeroUncertainty(usize),

    #[error("angle must be non-zero")]
    ZeroAngle,

    #[error("width must be positive")]
    ZeroWidth,

    #[error("minimizer {value:e} lies on the grid boundary [{lo:e}, {hi:e}]")]
    GridBoundary { value: f64, lo: f64, hi: f64 },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed input: {0}")]
    Format(String),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs or IO.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ResolutionGuard { .. }
                | Error::Instability { .. }
                | Error::NonConvergence { .. }
                | Error::RankDeficient
                | Error::DegenerateHistogram
                | Error::AmbiguousFold
                | Error::Nonlinear { .. }
                | Error::DegenerateVariance { .. }
                | Error::NoExtremum
                | Error::GridBoundary { .. }
        )
    }
}

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParams {
        field,
        reason: reason.into(),
    }
}
