use nanocavity::farfield::FarfieldError;
use nanocavity::fdtd::FdtdError;
use nanocavity::geometry::GeometryError;
use nanocavity::photonstats::StatsError;
use nanocavity::purcell::PurcellError;
use nanocavity::study::StudyError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("stage mismatch: {0}")]
    StageMismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::StageMismatch(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<FdtdError> for CliError {
    fn from(e: FdtdError) -> Self {
        match e {
            FdtdError::InvalidGrid(_) | FdtdError::InvalidSource(_) | FdtdError::Courant(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<FarfieldError> for CliError {
    fn from(e: FarfieldError) -> Self {
        match e {
            FarfieldError::InvalidInput(_) | FarfieldError::GeometryMismatch(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<StudyError> for CliError {
    fn from(e: StudyError) -> Self {
        match e {
            StudyError::Geometry(e) => e.into(),
            StudyError::Fdtd(e) => e.into(),
            StudyError::Farfield(e) => e.into(),
            StudyError::Config(m) => CliError::Config(m),
        }
    }
}

impl From<PurcellError> for CliError {
    fn from(e: PurcellError) -> Self {
        match e {
            PurcellError::NegativeNumerator { .. } | PurcellError::Spectrum(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}
