use std::path::PathBuf;

use thiserror::Error;
use uuid::Uuid;

use crate::quiz::QuestionKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{quiz}:{line}:{column}: syntax error: {message}")]
    QuizSyntax {
        quiz: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{0}: empty quiz")]
    EmptyQuiz(String),
    #[error("{quiz}: duplicate id {id}")]
    DuplicateId { quiz: String, id: Uuid },
    #[error("{quiz}: question #{index}: unknown question type {kind:?}")]
    UnknownQuestionType {
        quiz: String,
        index: usize,
        kind: String,
    },
    #[error("{quiz}: question #{index}: missing required field `{field}`")]
    MissingField {
        quiz: String,
        index: usize,
        field: String,
    },
    #[error("{quiz}: question #{index}: invalid `{field}`: {message}")]
    InvalidField {
        quiz: String,
        index: usize,
        field: String,
        message: String,
    },
    #[error("question {question}: submission is {found}, expected {expected}")]
    KindMismatch {
        question: Uuid,
        expected: QuestionKind,
        found: QuestionKind,
    },

    #[error("{chapter}: cannot resolve quiz `{path}`: {reason}")]
    UnresolvedQuiz {
        chapter: PathBuf,
        path: String,
        reason: String,
    },
    #[error("quiz `{name}` is used in chapter {first} and chapter {second}")]
    DuplicateQuizName {
        name: String,
        first: u32,
        second: u32,
    },
    #[error("invalid commit hash {0:?}: expected 40 hex characters")]
    InvalidCommitHash(String),
    #[error("quiz validation failed:\n{0}")]
    Validation(String),

    #[error("{skipped} of {total} export lines could not be read (limit 1%)")]
    TooManySkippedLines { skipped: usize, total: usize },
    #[error("unknown reader {0}")]
    UnknownReader(Uuid),
    #[error("unknown question {0}")]
    UnknownQuestion(Uuid),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite log posterior at {0}")]
    NonFinite(String),
    #[error("fit diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("no valid subset of size {k} found after {attempts} attempts")]
    ResampleExhausted { k: usize, attempts: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}
