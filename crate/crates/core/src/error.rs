use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("size error: {0}")]
    Size(String),

    #[error("length {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("non-finite value produced in stage `{stage}`")]
    NonFinite { stage: &'static str },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("backward called without a matching forward cache")]
    MissingCache,

    #[error("training diverged at step {step} (loss {loss}, step size {lr})")]
    Diverged { step: usize, loss: f64, lr: f64 },

    #[error("gradient check failed at `{path}`: relative error {rel_err:e} exceeds {threshold:e}")]
    GradCheck {
        path: String,
        rel_err: f64,
        threshold: f64,
    },

    #[error("flop audit failed for stage `{stage}`: analytic {analytic}, measured {measured}")]
    Audit {
        stage: &'static str,
        analytic: f64,
        measured: f64,
    },
}

/// Builds an [`Error::Size`] with a formatted message.
macro_rules! size_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Size(alloc::format!($($arg)*))
    };
}

pub(crate) use size_err;
