use crate::config::ConfigError;
use ogstyle::corpus::CorpusError;
use ogstyle::evalsuite::EvalError;
use ogstyle::net::NetError;
use ogstyle::spe::SpeError;
use ogstyle::synth::SynthError;
use ogstyle::trainer::TrainError;

/// Command failure, classified for the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    MissingArtifact(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact(_) => 3,
            CliError::Data(_) => 4,
            CliError::Internal(_) => 5,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::MissingArtifact(_) => "missing-artifact",
            CliError::Data(_) => "data",
            CliError::Internal(_) => "internal",
        }
    }

    /// `error[<tag>]: <message>` on one line.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace('\n', " ");
        format!("error[{}]: {msg}", self.tag())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Missing(p) => CliError::MissingArtifact(format!("corpus file not found: {}", p.display())),
            CorpusError::InvalidNoise(_) => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::InvalidConfig(_) | NetError::BadTemperature(_) => CliError::Config(e.to_string()),
            NetError::Io(io) => CliError::Internal(io.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SpeError> for CliError {
    fn from(e: SpeError) -> Self {
        match e {
            SpeError::InvalidConfig(_) => CliError::Config(e.to_string()),
            SpeError::Net(n) => n.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Net(n) => n.into(),
            EvalError::Io(io) => io.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Io(io) => io.into(),
            SynthError::Invalid(_) => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) | TrainError::Loss(_) => CliError::Config(e.to_string()),
            TrainError::Net(n) => n.into(),
            TrainError::Spe(s) => s.into(),
            TrainError::Eval(v) => v.into(),
            TrainError::Corpus(c) => c.into(),
            TrainError::Io(io) => io.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}
