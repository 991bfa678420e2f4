use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape mismatch, non-positive std, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Non-finite values appeared in a computation.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// Triangulation or geometry could not be built.
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("solver error: {0}")]
    Solver(#[from] SolverError),
    /// Malformed dataset/checkpoint/config content.
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    /// An error raised while processing one shooting block.
    #[error("block {block}: {source}")]
    InBlock {
        block: usize,
        #[source]
        source: Box<Error>,
    },
    /// An error raised while drawing one forecast sample.
    #[error("sample {sample}: {source}")]
    InSample {
        sample: usize,
        #[source]
        source: Box<Error>,
    },
    /// An error raised at one training iteration.
    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
    /// The training loss became NaN or infinite (the solver itself succeeded).
    #[error("loss diverged: {0}")]
    LossDivergence(String),
}

impl Error {
    /// The innermost error, skipping block, sample and iteration context.
    pub fn root(&self) -> &Error {
        match self {
            Error::InBlock { source, .. } | Error::InSample { source, .. } | Error::AtIteration { source, .. } => {
                source.root()
            }
            e => e,
        }
    }

    pub fn in_block(self, block: usize) -> Error {
        Error::InBlock {
            block,
            source: Box::new(self),
        }
    }

    pub fn in_sample(self, sample: usize) -> Error {
        Error::InSample {
            sample,
            source: Box::new(self),
        }
    }

    pub fn at_iteration(self, iteration: usize) -> Error {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }
}

/// Failures of the ODE integrators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("exceeded max_steps={max_steps} before reaching t={target} (stopped at t={reached})")]
    Divergence {
        max_steps: usize,
        target: f64,
        reached: f64,
    },
    #[error("step size underflow at t={t} (h={h:e}); problem is likely stiff")]
    Stiffness { t: f64, h: f64 },
    #[error("non-finite state at t={t}")]
    NonFinite { t: f64 },
    #[error("backward integration requested (t0={t0}, target={target})")]
    Backward { t0: f64, target: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! contract {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)*)));
        }
    };
}
pub(crate) use contract;
