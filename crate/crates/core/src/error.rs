use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid state (d={d}, delta={delta}): {reason}")]
    InvalidState {
        d: usize,
        delta: usize,
        reason: &'static str,
    },

    /// The truncation cap is too small for the multiplier being probed.
    #[error("truncation cap m={m} too small: {detail}")]
    Truncation { m: usize, detail: String },

    #[error("value iteration did not converge after {iterations} sweeps (last span {span:e})")]
    NotConverged { iterations: usize, span: f64 },

    /// An action map or policy violates the threshold structure.
    #[error("threshold structure violated: {0}")]
    Structure(String),

    #[error("singular linear system ({kind}, dim={dim}): {detail}")]
    Singular {
        kind: &'static str,
        dim: usize,
        detail: String,
    },

    #[error("negative stationary mass {value:e} at {location}")]
    NegativeMass { value: f64, location: String },

    #[error("config error{}: {msg}", at_line(*line))]
    Config { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn at_line(line: usize) -> String {
    if line == 0 {
        String::new()
    } else {
        format!(" at line {line}")
    }
}

pub type Result<T> = std::result::Result<T, Error>;
