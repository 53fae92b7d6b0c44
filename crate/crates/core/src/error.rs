use std::io;

use thiserror::Error;

use crate::estimation::StartLog;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("row {row}: cannot parse date `{value}`")]
    DateParse { row: usize, value: String },

    #[error("row {row}: cannot parse `{column}` value `{value}`")]
    NumberParse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: duplicate date {date}")]
    DuplicateDate { row: usize, date: String },

    #[error("series too short: need at least {needed} observations, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("inadmissible parameters: {0}")]
    Params(String),

    #[error("transform error: {0}")]
    Transform(String),

    #[error("path enumeration needs {paths} paths, limit is {limit}")]
    TooManyPaths { paths: u128, limit: u128 },

    #[error("transition matrix is numerically rank deficient (no unique ergodic distribution)")]
    RankDeficient,

    #[error("estimation failed: {message}")]
    Estimation {
        message: String,
        starts: Vec<StartLog>,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("series are not aligned; offending dates: {}", .0.join(", "))]
    Alignment(Vec<String>),

    #[error("empty or inconsistent task: {0}")]
    EmptyTask(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
