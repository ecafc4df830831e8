use thiserror::Error;

pub type Result<T> = std::result::Result<T, AuditError>;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("missing column `{0}` in input header")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: {reason} (value `{value}`)")]
    InvalidCell {
        row: usize,
        column: String,
        value: String,
        reason: String,
    },

    #[error("unknown protected attribute `{0}`")]
    UnknownAttribute(String),

    #[error("attribute `{0}` listed more than once")]
    DuplicateAttribute(String),

    #[error("rate undefined: {0}")]
    UndefinedRate(String),

    #[error("causal graph has a cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),

    #[error("node `{node}` lists undeclared parent `{parent}`")]
    UnknownParent { node: String, parent: String },

    #[error("protected node `{0}` must be a root but has parents")]
    ProtectedWithParents(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("malformed scm spec: {0}")]
    SpecFormat(String),

    #[error("singular design for node `{0}` (constant or collinear parents)")]
    SingularFit(String),

    #[error("node `{node}` uses a log link but row {row} has non-positive value {value}")]
    NonPositiveLog { node: String, row: usize, value: f64 },

    #[error("no noise entry for row {row}, node `{node}`")]
    MissingNoise { row: usize, node: String },

    #[error("feature `{0}` is constant in the factual data but the compared values differ")]
    ConstantFeature(String),

    #[error("search space is empty")]
    EmptySearchSpace,

    #[error("no counterfactual row for complainant {0}")]
    MissingCounterfactual(usize),

    #[error("classifier: {0}")]
    Classifier(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("intersection: {0}")]
    Intersection(String),
}

impl AuditError {
    /// Stable snake_case tag for machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            AuditError::Io(_) => "io",
            AuditError::Csv(_) => "csv",
            AuditError::Schema(_) => "schema",
            AuditError::MissingColumn(_) => "missing_column",
            AuditError::InvalidCell { .. } => "invalid_cell",
            AuditError::UnknownAttribute(_) => "unknown_attribute",
            AuditError::DuplicateAttribute(_) => "duplicate_attribute",
            AuditError::UndefinedRate(_) => "undefined_rate",
            AuditError::Cycle(_) => "cycle",
            AuditError::UnknownParent { .. } => "unknown_parent",
            AuditError::ProtectedWithParents(_) => "protected_with_parents",
            AuditError::UnknownNode(_) => "unknown_node",
            AuditError::SpecFormat(_) => "spec_format",
            AuditError::SingularFit(_) => "singular_fit",
            AuditError::NonPositiveLog { .. } => "non_positive_log",
            AuditError::MissingNoise { .. } => "missing_noise",
            AuditError::ConstantFeature(_) => "constant_feature",
            AuditError::EmptySearchSpace => "empty_search_space",
            AuditError::MissingCounterfactual(_) => "missing_counterfactual",
            AuditError::Classifier(_) => "classifier",
            AuditError::Config(_) => "config",
            AuditError::Intersection(_) => "intersection",
        }
    }
}
