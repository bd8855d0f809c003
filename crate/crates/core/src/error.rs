use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("no density operator satisfies the constraints at this cutoff (residual {residual:.3e}); increase n_c")]
    InfeasibleAtCutoff { residual: f64 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("linear algebra backend error: {0}")]
    Linalg(#[from] ndarray_linalg::error::LinalgError),
}
