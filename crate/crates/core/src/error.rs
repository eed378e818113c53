use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("table error at line {line}: {msg}")]
    Table { line: usize, msg: String },

    #[error("group column `{0}` not found")]
    MissingGroup(String),

    #[error("need at least 2 clusters, found {0}")]
    TooFewClusters(usize),

    #[error("formula syntax error at byte {offset}: {msg}")]
    Formula { offset: usize, msg: String },

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("random-effect design of cluster `{cluster}` is rank deficient (rank {rank} < {q})")]
    RankDeficientZ {
        cluster: String,
        rank: usize,
        q: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidTheta(String),

    #[error("{block} information block is singular (smallest eigenvalue {min_eigenvalue:e})")]
    SingularInformation {
        block: &'static str,
        min_eigenvalue: f64,
    },

    #[error("too few observations: N = {n} but the model needs more than {needed}")]
    TooFewObservations { n: usize, needed: usize },

    #[error("regression design is rank deficient")]
    RankDeficientRegression,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Numerical(String),
}
