use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Violated internal bookkeeping (out-of-order feedback, missing terms).
    #[error("logic error: {0}")]
    Logic(String),

    #[error("slot {slot}, stage `{stage}`: {source}")]
    Stage {
        slot: usize,
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn logic(msg: impl Into<String>) -> Self {
        Error::Logic(msg.into())
    }

    pub(crate) fn at(self, slot: usize, stage: Stage) -> Self {
        Error::Stage {
            slot,
            stage,
            source: Box::new(self),
        }
    }
}

/// Steps of one controller slot, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Act,
    ObserveCost,
    RecordDisturbance,
    UpdateRegularizer,
    ReceivePredictions,
    BuildHint,
    SolveUpdate,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Stage::Act => "act",
            Stage::ObserveCost => "observe cost / record gradient",
            Stage::RecordDisturbance => "observe state / record disturbance",
            Stage::UpdateRegularizer => "compute hint error / update regularizer",
            Stage::ReceivePredictions => "receive predictions",
            Stage::BuildHint => "build hint",
            Stage::SolveUpdate => "solve regularized leader update",
        };
        f.write_str(name)
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}
