use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid rating data: {0}")]
    InvalidData(String),

    #[error("duplicate rating for user {user} on item {item}")]
    DuplicateEntry { user: u64, item: u64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index {index} out of range for {kind} count {count}")]
    IndexOutOfRange {
        kind: &'static str,
        index: usize,
        count: usize,
    },

    #[error("training diverged at iteration {iteration} (objective {objective:e}); try a smaller learning rate")]
    Diverged { iteration: usize, objective: f64 },

    #[error("user profile {user} has norm {norm} > 1; the perturbation calibration requires ||u_i|| <= 1")]
    UserNormBound { user: usize, norm: f64 },

    #[error("privacy specification does not cover rating {index} (user {user}, item {item})")]
    SpecCoverage { index: usize, user: u64, item: u64 },

    #[error("privacy policy violation: {0}")]
    PrivacyPolicy(String),

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
