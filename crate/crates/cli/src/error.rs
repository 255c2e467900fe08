use concentra_core::Error as CoreError;
use serde_json::json;
use thiserror::Error;

/// Failure of a run, split by exit status.
#[derive(Debug, Error)]
pub enum RunError {
    #[error("{path}: {message}")]
    Validation { path: String, message: String },
    #[error("{0}")]
    Solver(CoreError),
    #[error(transparent)]
    Io(#[from] anyhow::Error),
}

/// Config keys living in the problem block; validation errors raised by the
/// core library on these fields are reported under `problem.`.
const PROBLEM_FIELDS: [&str; 17] = [
    "n", "p", "epsilon", "V", "K", "A", "k", "q", "s", "alpha", "a", "sigma", "lambda", "radius", "sphere_dim",
    "direction", "phi",
];

impl RunError {
    pub fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        RunError::Validation { path: path.into(), message: message.into() }
    }

    #[cfg(test)]
    pub fn path(&self) -> Option<&str> {
        match self {
            RunError::Validation { path, .. } => Some(path),
            _ => None,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation { .. } => 2,
            RunError::Solver(_) => 3,
            RunError::Io(_) => 1,
        }
    }

    /// JSON record for solver failures.
    pub fn record(&self) -> Option<serde_json::Value> {
        let RunError::Solver(e) = self else { return None };
        let mut rec = json!({ "kind": e.kind(), "message": e.to_string() });
        let extra = match e {
            CoreError::Solver { solver, iterations, .. } => json!({ "solver": solver, "iterations": iterations }),
            CoreError::TrivialAttractor { amplitude } => json!({ "amplitude": amplitude }),
            CoreError::DegenerateCrossing { pairing } => json!({ "pairing": pairing }),
            CoreError::Parse { position, .. } => json!({ "position": position }),
            _ => json!({}),
        };
        if let (Some(r), Some(x)) = (rec.as_object_mut(), extra.as_object()) {
            r.extend(x.clone());
        }
        Some(rec)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.into())
    }
}

/// Maps a core error to a run error, placing validation fields under the
/// config section they came from.
pub fn core(e: CoreError) -> RunError {
    match e {
        CoreError::Validation { field, message } => {
            let section = if PROBLEM_FIELDS.contains(&field.as_str()) { "problem" } else { "numerics" };
            RunError::Validation { path: format!("{section}.{field}"), message }
        }
        CoreError::Parse { position, message } => {
            RunError::Validation { path: "expression".into(), message: format!("at {position}: {message}") }
        }
        CoreError::Io(e) => RunError::Io(e.into()),
        other => RunError::Solver(other),
    }
}

/// Like [`core`] but for errors tied to a known config key.
pub fn at(key: &'static str) -> impl Fn(CoreError) -> RunError {
    move |e| match e {
        CoreError::Validation { message, .. } | CoreError::Parse { message, .. } => RunError::validation(key, message),
        other => core(other),
    }
}
