use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] sixdma_core::Error),

    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    #[error("malformed CSV field {field:?} in {path}: {value:?}")]
    Field {
        path: String,
        field: &'static str,
        value: String,
    },

    #[error("failed to parse {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, HarnessError>;
