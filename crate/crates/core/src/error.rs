use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("no expert registered for task {0}")]
    NoMatchingExpert(String),

    #[error("tool id {0:?} is already registered")]
    DuplicateToolId(String),
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("tool {tool} unavailable: {reason}")]
    ToolUnavailable { tool: String, reason: String },
    #[error("tool {tool} returned malformed output: {reason}")]
    MalformedOutput { tool: String, reason: String },
    #[error("no fixture for tool {tool} and image {image}")]
    MissingFixture { tool: String, image: String },
    #[error("all tools of expert {0} failed")]
    AllToolsFailed(String),

    #[error("masks have mismatched dimensions: {0}")]
    DimensionMismatch(String),
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("degenerate ellipse fit: {0}")]
    DegenerateFit(String),
    #[error("no candidate mask produced a usable ellipse fit")]
    AllFitsFailed,

    #[error("text backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("no scripted reply for role {role} and query {query}")]
    MissingScript { role: String, query: String },

    #[error("no option text yields a numeric value")]
    UnparseableOptions,
    #[error("no evidence available for arbitration")]
    NoEvidence,

    #[error("{0} entries are not allowed in a general-task evidence bank")]
    ModeViolation(String),
    #[error("retrieval index is empty")]
    EmptyIndex,

    #[error("gestational age {ga} weeks outside chart domain [{min}, {max}]")]
    OutOfDomain { ga: f64, min: f64, max: f64 },
    #[error("value {value} outside chart range [{min}, {max}]")]
    OutOfRange { value: f64, min: f64, max: f64 },
    #[error("evidence bank is empty")]
    EmptyBank,

    #[error("video has no frames")]
    EmptyVideo,

    #[error("fixture {0} has no label")]
    MissingLabel(String),
    #[error("prediction references unknown item {0:?}")]
    UnknownItemId(String),

    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("image decode: {0}")]
    Image(String),
}

impl Error {
    /// Stable snake_case name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Invalid(_) => "invalid",
            Error::NoMatchingExpert(_) => "no_matching_expert",
            Error::DuplicateToolId(_) => "duplicate_tool_id",
            Error::UnknownTool(_) => "unknown_tool",
            Error::ToolUnavailable { .. } => "tool_unavailable",
            Error::MalformedOutput { .. } => "malformed_output",
            Error::MissingFixture { .. } => "missing_fixture",
            Error::AllToolsFailed(_) => "all_tools_failed",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::EmptyMask => "empty_mask",
            Error::DegenerateFit(_) => "degenerate_fit",
            Error::AllFitsFailed => "all_fits_failed",
            Error::BackendUnavailable(_) => "backend_unavailable",
            Error::MissingScript { .. } => "missing_script",
            Error::UnparseableOptions => "unparseable_options",
            Error::NoEvidence => "no_evidence",
            Error::ModeViolation(_) => "mode_violation",
            Error::EmptyIndex => "empty_index",
            Error::OutOfDomain { .. } => "out_of_domain",
            Error::OutOfRange { .. } => "out_of_range",
            Error::EmptyBank => "empty_bank",
            Error::EmptyVideo => "empty_video",
            Error::MissingLabel(_) => "missing_label",
            Error::UnknownItemId(_) => "unknown_item_id",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Image(_) => "image",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
