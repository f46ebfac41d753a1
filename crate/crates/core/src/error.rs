use thiserror::Error;

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid word: {0}")]
    InvalidWord(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("word {word} composes to a map within 1e-9 of a rotation-by-integer on a whole scan cell (orbit continuum)")]
    OrbitContinuum { word: String, degenerate: bool },
    #[error("not a periodic orbit: {0}")]
    NotPeriodic(String),
    #[error("malformed certificate: {0}")]
    MalformedCertificate(String),
    #[error("plan infeasible ({constraint}): {detail}")]
    PlanInfeasible { constraint: String, detail: String },
    #[error("realization failed: {0}")]
    Realization(String),
    #[error("shadowing failure: best gamma {best_gamma:e} exceeds {eps:e}")]
    ShadowingFailure { best_gamma: f64, eps: f64 },
    #[error("not found: closest radius {radius}, closest |dλ| {dlambda}")]
    NotFound { radius: f64, dlambda: f64 },
    #[error("i/o: {0}")]
    Io(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl LabError {
    /// Short machine-readable kind, used in the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            LabError::InvalidModel(_) => "invalid-model",
            LabError::InvalidWord(_) => "invalid-word",
            LabError::Parameter(_) => "parameter",
            LabError::Precondition(_) => "precondition",
            LabError::Configuration(_) => "configuration",
            LabError::OrbitContinuum { .. } => "orbit-continuum",
            LabError::NotPeriodic(_) => "not-periodic",
            LabError::MalformedCertificate(_) => "malformed-certificate",
            LabError::PlanInfeasible { .. } => "plan-infeasible",
            LabError::Realization(_) => "realization",
            LabError::ShadowingFailure { .. } => "shadowing-failure",
            LabError::NotFound { .. } => "not-found",
            LabError::Io(_) => "io",
            LabError::Json(_) => "json",
            LabError::Csv(_) => "csv",
        }
    }

    /// CLI exit status: 2 for validation problems, 3 for construction failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::PlanInfeasible { .. }
            | LabError::Realization(_)
            | LabError::ShadowingFailure { .. }
            | LabError::NotFound { .. } => 3,
            _ => 2,
        }
    }
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}
