use std::path::PathBuf;

use thiserror::Error;
use woundsev::dataset::DatasetError;
use woundsev::model::ModelError;
use woundsev::roi::RoiError;
use woundsev::rubric::RubricError;
use woundsev::train::TrainError;

/// Process exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    pub const DATA: i32 = 65;
    pub const RUNTIME: i32 = 70;
    pub const CONFIG: i32 = 78;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("no prepared dataset at {0}; run `prepare` first")]
    MissingPreparedData(PathBuf),
    #[error("no trained model at {0}; run `train` first")]
    MissingArtifacts(PathBuf),
    #[error("model artifacts do not match the experiment: {0}")]
    ArtifactSpecMismatch(String),
    #[error("no evaluation reports under {0}")]
    NoResults(PathBuf),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Roi(#[from] RoiError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Rubric(#[from] RubricError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Parse { .. } => exit::CONFIG,
            Self::MissingPreparedData(_)
            | Self::MissingArtifacts(_)
            | Self::ArtifactSpecMismatch(_)
            | Self::NoResults(_)
            | Self::Data(_)
            | Self::Dataset(_)
            | Self::Roi(_)
            | Self::Rubric(_)
            | Self::Image { .. } => exit::DATA,
            Self::Model(e) => model_code(e),
            Self::Train(e) => match e {
                TrainError::LossClassMismatch { .. } | TrainError::InvalidConfig(_) => exit::CONFIG,
                TrainError::Model(m) => model_code(m),
                _ => exit::DATA,
            },
            Self::Io { .. } => exit::RUNTIME,
        }
    }
}

fn model_code(e: &ModelError) -> i32 {
    match e {
        ModelError::UnknownBackbone(_)
        | ModelError::DuplicateBackbone(_)
        | ModelError::InvalidSpec(_)
        | ModelError::UnfrozenBackbone => exit::CONFIG,
        ModelError::ArtifactMismatch(_) | ModelError::ShapeMismatch(_) | ModelError::ArityMismatch { .. } => exit::DATA,
        _ => exit::RUNTIME,
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
