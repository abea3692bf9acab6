use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("operator on {n_qubits} qubits exceeds the cap of {cap} qubits")]
    CapExceeded { n_qubits: usize, cap: usize },

    #[error("matrix is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("density matrix is not positive semidefinite (eigenvalue {eigenvalue:.3e})")]
    NotPositive { eigenvalue: f64 },

    #[error("density matrix trace {trace} differs from 1")]
    BadTrace { trace: f64 },

    #[error("invalid probability {name} = {value}: {reason}")]
    InvalidProbability {
        name: String,
        value: f64,
        reason: String,
    },

    #[error("invalid experiment plan: {0}")]
    InvalidPlan(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no records supplied for {0}")]
    EmptyRecords(String),

    #[error("calibration table has no entry for iteration {0}")]
    MissingCalibration(usize),

    /// Survival probability at or below one half: the robust-shadow
    /// coefficients diverge and mitigation is refused.
    #[error("survival probability G = {g:.4} <= 1/2 for qubit {qubit} in iteration {iteration}")]
    CalibrationGuard { iteration: usize, qubit: usize, g: f64 },

    #[error("need at least {required} batches, got {available}")]
    TooFewBatches { required: usize, available: usize },

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("readout fast path refused: {0}")]
    FastPathRefused(String),

    #[error("malformed record: {0}")]
    Record(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for the numerical guard that maps to a dedicated CLI exit code.
    pub fn is_numerical_guard(&self) -> bool {
        matches!(self, Error::CalibrationGuard { .. })
    }
}
