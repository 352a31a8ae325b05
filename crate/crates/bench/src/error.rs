use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("cannot read config {path}: {source}")]
    ConfigIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error(transparent)]
    Core(#[from] knotmpc::Error),
    #[error("output error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl BenchError {
    /// 1 for configuration problems, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config { .. }
            | BenchError::Parse(_)
            | BenchError::ConfigIo { .. }
            | BenchError::UnknownPreset(_) => 1,
            BenchError::Core(_) | BenchError::Io(_) | BenchError::Csv(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
