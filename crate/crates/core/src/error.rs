use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("derivative order {0} outside 1..=5")]
    Order(usize),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("vacuum: w <= z at x = {x} (w = {w}, z = {z})")]
    Vacuum { x: f64, w: f64, z: f64 },
    #[error("initial data construction failed: {0}")]
    Construction(String),
    #[error("no self-similar frame: slope is nonnegative everywhere")]
    NoFrame,
    #[error("ill-conditioned modulation: third derivative at the origin is {0}")]
    IllConditioned(f64),
    #[error("self-similar window [{lo}, {hi}] leaves the computational domain")]
    Window { lo: f64, hi: f64 },
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
