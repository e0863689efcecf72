use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {point:?} lies outside the domain of chart {chart}")]
    Domain { chart: usize, point: Vec<f64> },

    #[error("path left the atlas coverage at {point:?} (chart {chart})")]
    Coverage { chart: usize, point: Vec<f64> },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("covering does not cover every node: partition denominator {denominator:e} at node {node}")]
    CoverageFailure { node: usize, denominator: f64 },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("operator is not symmetric: defect {defect:e} exceeds {tolerance:e}")]
    NotSymmetric { defect: f64, tolerance: f64 },

    #[error("input rejected: {0}")]
    Rejected(String),

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("degenerate subspace: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;
