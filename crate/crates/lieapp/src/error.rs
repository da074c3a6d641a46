use thiserror::Error;

/// Errors raised by the geometric pipeline.
///
/// Vertex indices are flat (`i * nv + j`, `i` along u).
#[derive(Debug, Clone, Error, PartialEq)]
pub enum LieError {
    #[error("degenerate pair: (L, L^) = 0")]
    DegeneratePair,
    #[error("subspace has a definite induced metric; no null directions")]
    NoNullVectors,
    #[error("unknown surface `{0}`")]
    UnknownSurface(String),
    #[error("bad surface parameters: {0}")]
    BadParams(String),
    #[error("surface is umbilic at every sample")]
    UmbilicEverywhere,
    #[error("grid size must be at least 8x8, got {nu}x{nv}")]
    GridTooSmall { nu: usize, nv: usize },
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("geometry error: {0}")]
    GeometryError(String),
    #[error("space-form projection is singular")]
    ProjectionSingular,
    #[error("linear Weingarten coefficients are all zero")]
    AllZeroCoefficients,
    #[error("gauge at vertex {vertex} is not a multiple of f^t")]
    TauNotInWedgeF { vertex: usize },
    #[error("dual frame of f degenerates at vertex {vertex}")]
    FrameDegenerate { vertex: usize },
    #[error("associate surface is singular at vertex {vertex}")]
    AssociateSingular { vertex: usize },
    #[error("conserved quantities are linearly dependent")]
    DependentQuantities,
    #[error("g_inf is degenerate")]
    DegenerateGInfinity,
    #[error("connection is not approximately flat: mean defect {defect:.3e} > {threshold:.3e}")]
    NotApproximatelyFlat { defect: f64, threshold: f64 },
    #[error("Darboux seed nearly orthogonal to a curvature sphere: margin {margin:.3e}")]
    RegularityViolation { margin: f64 },
    #[error("seed line orthogonal to f at vertex {vertex}")]
    SingularIntersection { vertex: usize },
    #[error("configuration error: {0}")]
    Config(String),
}

impl LieError {
    /// CLI exit code class: 2 configuration, 3 geometry.
    pub fn exit_code(&self) -> i32 {
        match self {
            LieError::UnknownSurface(_)
            | LieError::BadParams(_)
            | LieError::GridTooSmall { .. }
            | LieError::SchemaError(_)
            | LieError::AllZeroCoefficients
            | LieError::Config(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, LieError>;
