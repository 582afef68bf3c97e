use thiserror::Error;

pub type Result<T> = std::result::Result<T, CzError>;

#[derive(Debug, Error)]
pub enum CzError {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("lambda is out of range: need lambda > {bound} (C = {constant}, ||f||_1 = {l1}, mu(M) = {total})")]
    LambdaRange {
        lambda: f64,
        bound: f64,
        constant: f64,
        l1: f64,
        total: f64,
    },

    #[error("family is not doubling at C = {constant}: no container for the enlargement of set {set}")]
    NotDoubling { set: usize, constant: f64 },

    #[error("chain gap: metric ratio {ratio} outside [{lo}, {hi}] ({context})")]
    ChainGap {
        ratio: f64,
        lo: f64,
        hi: f64,
        context: String,
    },

    #[error("product leaves the enumerated region ({0}); regenerate the model with a larger radius")]
    Truncation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CzError {
    pub fn input(msg: impl Into<String>) -> Self {
        CzError::Input(msg.into())
    }
}
