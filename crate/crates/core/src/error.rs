use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{name} = {value} is outside its valid domain ({expected})")]
    Domain {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("topology parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("topology validation failed: {0}")]
    Validation(String),

    #[error("node {0} has no candidate parent toward the root")]
    Disconnected(String),

    #[error("path from node {0} does not reach the root")]
    NoPath(String),

    #[error("flow balance system is singular")]
    Singular,

    #[error("offered load saturates the node: busy fraction {busy_fraction:.4} exceeds 1")]
    Saturated { busy_fraction: f64 },

    #[error("unknown metric '{0}'")]
    UnknownMetric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_probability(name: &'static str, value: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(Error::Domain {
            name,
            value,
            expected: "[0, 1]",
        })
    }
}
