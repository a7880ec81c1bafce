use thiserror::Error;

/// Errors produced anywhere in the localization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("region filter selects an empty region")]
    EmptyRegion,
    #[error("every candidate propagation path is blocked at ({x:.2}, {y:.2})")]
    NoPaths { x: f64, y: f64 },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("empty path estimate list")]
    EmptyEstimates,
    #[error("range {range:.3} m does not reach the user plane (height gap {height_gap:.3} m)")]
    RangeTooShort { range: f64, height_gap: f64 },
    #[error("marginals have different mass ({source_mass} vs {target_mass})")]
    InfeasibleMarginals { source_mass: f64, target_mass: f64 },
    #[error("Sinkhorn kernel underflowed; enable log-domain updates")]
    NumericalUnderflow,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("reference geometry is degenerate (collinear or too few points)")]
    DegenerateGeometry,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stale artifact: {0}")]
    StaleArtifact(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
