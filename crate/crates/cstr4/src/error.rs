use std::fmt;

use thiserror::Error;

/// Pipeline stage a failure came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Truth,
    Selection,
    Decomposition,
    Estimation,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Truth => "truth simulation",
            Stage::Selection => "variable selection",
            Stage::Decomposition => "decomposition",
            Stage::Estimation => "estimation",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: dspe_core::Error,
    },

    #[error("truth trajectory leaves the operating envelope at step {step}: {detail}")]
    OutsideEnvelope { step: usize, detail: String },

    #[error("true value of {name} is zero at step {step}, relative error undefined")]
    ZeroTruth { step: usize, name: String },

    #[error("invalid case: {0}")]
    InvalidCase(String),

    #[error(transparent)]
    Core(#[from] dspe_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Tags a core failure with its stage.
pub trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for std::result::Result<T, dspe_core::Error> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|source| Error::Stage { stage, source })
    }
}
