use std::fmt;

use ring_clusters::Error;

/// Process exit codes, one per failure class.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 2;
    pub const CONFIG: u8 = 3;
    pub const NOT_CONVERGED: u8 = 4;
    pub const CONTINUATION: u8 = 5;
    pub const AUDIT: u8 = 6;
    pub const SIMULATION: u8 = 7;
    pub const IO: u8 = 8;
    pub const NO_BRANCH: u8 = 9;
    pub const EIGEN: u8 = 10;
}

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Config(String),
    Usage(String),
    /// Some requested points failed to converge; the rest were written.
    Unconverged(String),
    Audit(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Core(e) => match e {
                Error::NonPositiveRadius { .. }
                | Error::FrequencySolve { .. }
                | Error::NewtonDiverged { .. }
                | Error::SingularJacobian { .. } => exit::NOT_CONVERGED,
                Error::InvalidArgument(_) => exit::USAGE,
                Error::Eigen(_) => exit::EIGEN,
                Error::Continuation(_) | Error::StepUnderflow { .. } => exit::CONTINUATION,
                Error::NoBranchFound => exit::NO_BRANCH,
                Error::RadiusCollapse { .. } | Error::Saturated { .. } | Error::TooFewPeaks { .. } => exit::SIMULATION,
                Error::Config(_) => exit::CONFIG,
                Error::Io(_) | Error::Json(_) => exit::IO,
            },
            Self::Config(_) => exit::CONFIG,
            Self::Usage(_) => exit::USAGE,
            Self::Unconverged(_) => exit::NOT_CONVERGED,
            Self::Audit(_) => exit::AUDIT,
            Self::Io(_) => exit::IO,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Core(e) => write!(f, "{e}"),
            Self::Config(m) => write!(f, "config error: {m}"),
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Unconverged(m) => write!(f, "unconverged points: {m}"),
            Self::Audit(m) => write!(f, "audit failed: {m}"),
            Self::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }
}
