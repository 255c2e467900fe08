use thiserror::Error;

/// Errors produced by every module of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{solver} failed after {iterations} iterations: {message}")]
    Solver {
        solver: &'static str,
        iterations: usize,
        message: String,
    },

    #[error("no convergence: {0}")]
    Convergence(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("placement error: {0}")]
    Placement(String),

    #[error("ill-conditioned reduction: coercivity {coercivity:.3e} below threshold {threshold:.1e}")]
    IllConditioned { coercivity: f64, threshold: f64 },

    #[error("degenerate Morse index: reduced Hessian eigenvalue {eigenvalue:.3e}")]
    DegenerateIndex { eigenvalue: f64 },

    #[error("Newton iteration collapsed onto the trivial solution (amplitude {amplitude:.3e}); try a larger seed")]
    TrivialAttractor { amplitude: f64 },

    #[error("degenerate crossing: transversality pairing {pairing:.3e}")]
    DegenerateCrossing { pairing: f64 },

    #[error("refinement failed: {0}")]
    Refinement(String),

    #[error("parse error at {position}: {message}")]
    Parse { position: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn solver(solver: &'static str, iterations: usize, message: impl Into<String>) -> Self {
        Error::Solver {
            solver,
            iterations,
            message: message.into(),
        }
    }

    /// Short machine-readable tag, used in serialized error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation { .. } => "validation",
            Error::Resource(_) => "resource",
            Error::Domain(_) => "domain",
            Error::Solver { .. } => "solver",
            Error::Convergence(_) => "convergence",
            Error::Degenerate(_) => "degenerate",
            Error::Placement(_) => "placement",
            Error::IllConditioned { .. } => "ill_conditioned",
            Error::DegenerateIndex { .. } => "degenerate_index",
            Error::TrivialAttractor { .. } => "trivial_attractor",
            Error::DegenerateCrossing { .. } => "degenerate_crossing",
            Error::Refinement(_) => "refinement",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
