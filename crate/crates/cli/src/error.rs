use std::path::PathBuf;
use std::process::ExitCode;

use colexphylo::Error as LibError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("input file not found: {}", .0.display())]
    MissingInput(PathBuf),

    #[error(transparent)]
    Lib(#[from] LibError),

    #[error("cannot write {}: {source}", path.display())]
    Output { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) | CliError::MissingInput(_) => 2,
            CliError::Lib(e) if is_input_error(e) => 2,
            CliError::Lib(_) | CliError::Output { .. } => 1,
        })
    }
}

fn is_input_error(e: &LibError) -> bool {
    match e {
        LibError::TreeRun { source, .. } => is_input_error(source),
        LibError::NewickSyntax { .. }
        | LibError::DuplicateLabel(_)
        | LibError::NegativeBranchLength { .. }
        | LibError::UnknownTaxon(_)
        | LibError::TaxonExists(_)
        | LibError::TooFewTaxa(_)
        | LibError::TaxonSetMismatch(_)
        | LibError::MissingTip(_)
        | LibError::ExtraTaxon(_)
        | LibError::Dimension { .. }
        | LibError::Alignment(_)
        | LibError::Config(_)
        | LibError::ObservationMismatch(_)
        | LibError::EmptyRecords
        | LibError::Parse { .. }
        | LibError::Io { .. }
        | LibError::Csv(_)
        | LibError::Json(_) => true,
        _ => false,
    }
}

pub type CliResult<T> = Result<T, CliError>;
