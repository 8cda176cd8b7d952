use std::path::PathBuf;

/// Everything that can go wrong while loading, generating, scoring or
/// reporting.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    // corpus
    #[error("duplicate utterance id `{0}`")]
    DuplicateUtterance(String),
    #[error("speaker `{speaker}` labelled with two accents (`{first}` and `{second}`)")]
    InconsistentAccent {
        speaker: String,
        first: String,
        second: String,
    },
    #[error("malformed manifest (line {line}): {reason}")]
    MalformedManifest { line: usize, reason: String },
    #[error("unknown utterance `{0}`")]
    UnknownUtterance(String),
    #[error("non-finite component in embedding for `{0}`")]
    NonFiniteEmbedding(String),
    #[error("zero-norm embedding for `{0}`")]
    DegenerateEmbedding(String),
    #[error("embedding file format error: {0}")]
    FormatError(String),
    #[error("failed to write `{path}`: {source}")]
    WriteError {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to read `{path}`: {source}")]
    ReadError {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid identifier `{0}`")]
    InvalidId(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    // trials
    #[error("need at least 2 speakers, found {0}")]
    InsufficientSpeakers(usize),
    #[error("speaker `{0}` has fewer than 2 utterances")]
    InsufficientUtterances(String),
    #[error("need at least 2 accents, found {0}")]
    InsufficientAccents(usize),
    #[error("accent `{0}` has fewer than 2 speakers")]
    InsufficientSpeakersForAccent(String),
    #[error("only {available} distinct non-target pairs available, {requested} requested")]
    InsufficientPairs { requested: usize, available: usize },
    #[error("malformed trial list: {0}")]
    MalformedTrials(String),

    // scoring
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("no embedding for utterance `{utt_id}` under condition `{condition}` (probe `{probe}`)")]
    MissingEmbedding {
        utt_id: String,
        condition: String,
        probe: String,
    },
    #[error("no embedding set loaded for probe `{probe}`, condition `{condition}`")]
    MissingEmbeddingSet { probe: String, condition: String },

    // metrics
    #[error("EER needs at least one target and one non-target score")]
    MissingTrialClass,
    #[error("accent class `{0}` has no utterances")]
    EmptyAccentClass(String),
    #[error("unknown accent `{0}`")]
    UnknownAccent(String),
    #[error("class count must be at least 1")]
    InvalidClassCount,
    #[error("relative change undefined for a zero baseline")]
    DivisionByZeroBaseline,
    #[error("malformed confusion matrix: {0}")]
    MalformedConfusion(String),

    // classifier
    #[error("centroid for accent `{0}` has zero norm")]
    DegenerateCentroid(String),
    #[error("utterance `{utt_id}`: {source}")]
    AtUtterance {
        utt_id: String,
        #[source]
        source: Box<Error>,
    },

    // synthlab
    #[error("invalid synthetic corpus config: {0}")]
    InvalidSynthConfig(String),
    #[error("invalid condition: {0}")]
    ConditionError(String),

    // pipeline
    #[error("config error: {0}")]
    Config(String),
    #[error("reports are not comparable: {0}")]
    IncomparableReports(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True for errors raised while validating a run configuration.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Context { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
