use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("newick syntax error at byte {position}: {message}")]
    NewickSyntax { position: usize, message: String },
    #[error("duplicate tip label `{0}`")]
    DuplicateLabel(String),
    #[error("negative branch length {length} on node `{node}`")]
    NegativeBranchLength { node: String, length: f64 },
    #[error("unknown taxon `{0}`")]
    UnknownTaxon(String),
    #[error("taxon `{0}` already present in tree")]
    TaxonExists(String),
    #[error("pruning would leave {0} taxa; at least 2 are required")]
    TooFewTaxa(usize),
    #[error("coalescent needs at least 2 taxa, got {0}")]
    CoalescentSize(usize),
    #[error("split fraction {0} outside (0, 1)")]
    SplitFraction(f64),
    #[error("tree samples disagree on taxon sets (tree {0})")]
    TaxonSetMismatch(usize),

    #[error("invalid rate parameters: s = {s}, p = {p}")]
    InvalidRates { s: f64, p: f64 },
    #[error("negative branch length {0}")]
    NegativeTime(f64),

    #[error("tree tip `{0}` has no entry in the character data")]
    MissingTip(String),
    #[error("character data names taxon `{0}`, which is not in the tree")]
    ExtraTaxon(String),
    #[error("enumeration oracle limited to {limit} free nodes, tree has {actual}")]
    OracleTooLarge { limit: usize, actual: usize },

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    Dimension { expected: usize, actual: usize, context: &'static str },
    #[error("alignment mismatch: {0}")]
    Alignment(String),

    #[error("sampler could not find a finite starting point after {0} attempts")]
    Initialization(usize),
    #[error("tree {tree}: {source}")]
    TreeRun { tree: usize, source: Box<Error> },
    #[error("no draws to summarize")]
    EmptyDraws,
    #[error("invalid sampler configuration: {0}")]
    Config(String),

    #[error("observation {obs}: only {tail} tail samples, at least 5 are needed")]
    ShortTail { obs: usize, tail: usize },
    #[error("models have different observation sets: {0}")]
    ObservationMismatch(String),

    #[error("malformed interval [{0}, {1}]")]
    Interval(f64, f64),

    #[error("negative binomial fit: {0}")]
    NegBin(String),
    #[error("zero standard error for coefficient {0}")]
    ZeroStandardError(usize),

    #[error("empty record set")]
    EmptyRecords,

    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), message: message.into() }
    }
}
