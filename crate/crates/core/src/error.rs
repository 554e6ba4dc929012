use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("grid error: {0}")]
    Grid(String),
    #[error("integral diverges: decay exponent {decay} does not exceed {needed}")]
    Divergence { decay: f64, needed: f64 },
    #[error("kernel error: {0}")]
    Kernel(String),
    #[error("singular bordered system: {0}")]
    Degenerate(String),
    #[error("contraction failed after {iterations} iterations: {reason}")]
    Contraction { iterations: usize, reason: String },
    #[error("degree undefined: {0}")]
    DegreeUndefined(String),
    #[error("newton failed: {0}")]
    Newton(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("cache file: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
