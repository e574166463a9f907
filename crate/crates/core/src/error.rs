use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed world document: {0}")]
    Parse(String),
    #[error("invalid world at `{path}`: {reason}")]
    Validation { path: String, reason: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanningError {
    #[error("no inspectable surface")]
    NoInspectableSurface,
    #[error("home not recorded")]
    HomeNotRecorded,
    #[error("invalid mission: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("conflicting intention behaviors active: {0:?}")]
    ConflictingIntentions(Vec<String>),
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed mission script: {0}")]
    Parse(String),
    #[error("invalid mission script step {index}: {reason}")]
    Validation { index: usize, reason: String },
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed run configuration: {0}")]
    Parse(String),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Manifest(String),
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed log: {0}")]
    Malformed(String),
    #[error("scenario not found in log: {0}")]
    ScenarioNotFound(String),
}
