use std::path::PathBuf;

use lobqr_core::baselines::BaselineError;
use lobqr_core::combine::CombineError;
use lobqr_core::eval::EvalError;
use lobqr_core::ingest::IngestError;
use lobqr_core::model::ModelError;
use lobqr_core::nn::NnError;
use lobqr_core::synthgen::SynthError;
use thiserror::Error;

/// Every failure maps to one exit code: 1 I/O or bad data, 2 configuration,
/// 3 missing upstream artifact, 4 numeric fault.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{} not found; run the upstream stage first", .0.display())]
    MissingArtifact(PathBuf),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Data(String),
    #[error("{} is locked by another run (remove the lock file if that run is gone)", .0.display())]
    Locked(PathBuf),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Data(_) | CliError::Locked(_) | CliError::Io { .. } => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::MissingArtifact(_) => "missing_artifact",
            CliError::Numeric(_) => "numeric",
            CliError::Data(_) => "data",
            CliError::Locked(_) => "locked",
            CliError::Io { .. } => "io",
        }
    }

    /// The single line printed on failure.
    pub fn line(&self) -> String {
        format!("lobqr: error[{}:{}]: {}", self.code(), self.kind(), self.to_string().replace('\n', " "))
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io { context: context.into(), source }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::io("i/o", e)
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidSnapshot { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io(source) => CliError::io("reading stream", source),
            IngestError::InvalidTickSize(_)
            | IngestError::NormalizationWindow(_)
            | IngestError::StreamTooShort { .. }
            | IngestError::InvalidSplit(_)
            | IngestError::EmptySplit(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io(source) => CliError::io("model file", source),
            ModelError::ConfigInvalid(_) | ModelError::Kv(_) | ModelError::EmptySplit(_) => {
                CliError::Config(e.to_string())
            }
            ModelError::DivergedLoss { .. } | ModelError::Nn(NnError::NonFinite(_)) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::Model(m) => m.into(),
            BaselineError::TooFewObservations { .. } | BaselineError::OrderTooLarge { .. } => {
                CliError::Config(e.to_string())
            }
            BaselineError::Malformed(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<CombineError> for CliError {
    fn from(e: CombineError) -> Self {
        match e {
            CombineError::Io(source) => CliError::io("weights file", source),
            CombineError::EmptySegment => CliError::Config(e.to_string()),
            CombineError::WeightsOffSimplex { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(source) => CliError::io("report file", source),
            EvalError::NonFinite => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_and_line_format() {
        let e = CliError::MissingArtifact(PathBuf::from("out/k100/deeplob_qr.ckpt"));
        assert_eq!(e.code(), 3);
        assert_eq!(e.line(), "lobqr: error[3:missing_artifact]: out/k100/deeplob_qr.ckpt not found; run the upstream stage first");
        assert_eq!(CliError::from(ModelError::DivergedLoss { epoch: 2 }).code(), 4);
        assert_eq!(CliError::from(IngestError::EmptySplit("test")).code(), 2);
    }
}
