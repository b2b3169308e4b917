use thiserror::Error;

/// Errors produced by the simulator and its kernels.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("rank {rank} out of range 1..={max}")]
    RankOutOfRange { rank: usize, max: usize },

    #[error("optimizer variant mismatch: {0} vs {1}")]
    VariantMismatch(String, String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("hessian-vector oracle required at step {0}")]
    MissingHvp(u64),

    #[error("uninitialized preconditioner state")]
    Uninitialized,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("divergence at round {round}{}", divergence_site(*.client, *.step))]
    Divergence {
        round: usize,
        client: Option<usize>,
        step: Option<usize>,
    },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(expected: impl Into<String>, got: impl Into<String>) -> Error {
    Error::Shape {
        expected: expected.into(),
        got: got.into(),
    }
}

fn divergence_site(client: Option<usize>, step: Option<usize>) -> String {
    match (client, step) {
        (Some(c), Some(s)) => format!(", client {c}, step {s}"),
        (Some(c), None) => format!(", client {c}"),
        _ => String::new(),
    }
}
