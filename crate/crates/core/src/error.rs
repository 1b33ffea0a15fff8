use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("direction ({0}, {1}, {2}) is horizontal and lies outside the non-horizontal chart")]
    HorizontalDirection(f64, f64, f64),

    #[error("quadrature did not converge on [{a}, {b}]: estimated error {estimate:e} exceeds target {target:e}")]
    QuadratureNonConvergence { a: f64, b: f64, estimate: f64, target: f64 },

    #[error("stencil node alpha = ({0}, {1}) leaves the chart box |alpha_i| <= {2}")]
    StencilOutOfChart(f64, f64, f64),

    #[error("rank mismatch: expected rank {expected}, got rank {got}")]
    RankMismatch { expected: usize, got: usize },

    #[error("supports of superposed solutions overlap")]
    OverlappingSupports,

    #[error("unknown suite `{0}`")]
    UnknownSuite(String),

    #[error("unknown sample object `{0}`")]
    UnknownObject(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::QuadratureNonConvergence { .. } | Error::StencilOutOfChart(..)
        )
    }
}
