use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fractional order must lie in (0, 1], got {0}")]
    InvalidAlpha(f64),

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{kind} index ({i}, {j}, {n}) is out of range")]
    IndexOutOfRange {
        kind: &'static str,
        i: usize,
        j: usize,
        n: usize,
    },

    #[error("nonpositive density sum {value:e} at cell ({i}, {j}), time level {n}")]
    DensityGuard {
        i: usize,
        j: usize,
        n: usize,
        value: f64,
    },

    #[error("iteration diverged at step {0} (non-finite constraint residual)")]
    Diverged(usize),

    #[error("total mass must be positive, got {0:e}")]
    ZeroMass(f64),

    #[error("image is {got_w}x{got_h}, grid needs {want_w}x{want_h}")]
    ImageDimension {
        want_w: usize,
        want_h: usize,
        got_w: usize,
        got_h: usize,
    },

    #[error("malformed PGM: {0}")]
    Pgm(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("cache entry: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            what,
            expected,
            got,
        })
    }
}
