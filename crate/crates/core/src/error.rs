use thiserror::Error;

use crate::grid::{Heading, Pos};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid size {width}x{height} is invalid (need width >= 2, height >= 1)")]
    BadSize { width: usize, height: usize },
    #[error("cell {0} is outside the grid")]
    OutOfBounds(Pos),
    #[error("cell {0} is not a rail cell")]
    NotRail(Pos),
    #[error("inconsistent transition at {cell} ({incoming:?} -> {outgoing:?}): {reason}")]
    Inconsistent {
        cell: Pos,
        incoming: Heading,
        outgoing: Heading,
        reason: &'static str,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid placement: {0}")]
    InvalidPlacement(String),
    #[error("action given for unknown agent {0}")]
    UnknownAgent(usize),
    #[error("agent {0} has no action")]
    MissingAction(usize),
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("max_steps must be positive")]
    ZeroMaxSteps,
    #[error("invalid malfunction parameters: {0}")]
    Malfunction(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("no valid environment after {attempts} attempts: {reason}")]
    Infeasible { attempts: usize, reason: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty trajectory")]
    EmptyTrajectory,
}

/// Malformed text or binary input, with the 1-based line (or byte offset
/// for binary formats) where parsing stopped.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {msg}")]
pub struct FormatError {
    pub line: usize,
    pub msg: String,
}

impl FormatError {
    pub fn new(line: usize, msg: impl Into<String>) -> FormatError {
        FormatError { line, msg: msg.into() }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("comm protocol violation: {0}")]
    Comm(String),
    #[error("training aborted: {0}")]
    Aborted(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
