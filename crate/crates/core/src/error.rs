//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },

    #[error("frame index {index} out of range {start}..{end}")]
    FrameIndex {
        index: usize,
        start: usize,
        end: usize,
    },

    #[error("missing {direction} flow slice at frame {frame}")]
    MissingFlowSlice { direction: &'static str, frame: usize },

    #[error("non-finite value at x={x} y={y} frame={frame} channel={channel}")]
    NonFinite {
        x: usize,
        y: usize,
        frame: usize,
        channel: usize,
    },

    #[error("descent diverged: energy rose for {steps} consecutive steps ending at iteration {iteration}")]
    Diverged { steps: usize, iteration: usize },

    #[error("pyramid level {level} would be {width}x{height}, below the {min}x{min} minimum")]
    LevelTooSmall {
        level: usize,
        width: usize,
        height: usize,
        min: usize,
    },

    #[error("invalid configuration: {reason}")]
    InvalidConfig { reason: String },
}

impl Error {
    pub fn dims(context: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
        }
    }

    pub fn config(reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
