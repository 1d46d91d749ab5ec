use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph document syntax error at line {line}, column {column}: {message}")]
    GraphSyntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("graph document schema violation: {0}")]
    GraphSchema(String),

    #[error("invalid graph: {}", .0.join("; "))]
    InvalidGraph(Vec<String>),

    #[error("unknown stream `{0}`")]
    UnknownStream(String),

    #[error("invalid identifier `{0}`: identifiers must match [A-Za-z0-9_]+")]
    InvalidIdentifier(String),

    #[error("cycle detected among streams: {}", .0.join(", "))]
    Cycle(Vec<String>),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("cannot fit mechanism for `{stream}`: {reason}")]
    Fit { stream: String, reason: String },

    #[error("no mechanism fitted for stream `{0}`")]
    MissingMechanism(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("discrete KL support violation: value {0} observed in p but not in q")]
    SupportViolation(f64),

    #[error("exact Shapley enumeration supports at most {max} players, got {got}")]
    TooManyPlayers { got: usize, max: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid fault: {0}")]
    InvalidFault(String),
}
