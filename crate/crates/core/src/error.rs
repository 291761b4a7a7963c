use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// Variants are grouped by [`ErrorKind`] so the command-line front end can map
/// them onto process exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input tables share no subject ids")]
    EmptyIntersection,
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("SNP `{0}` has no observed dosages")]
    AllMissing(String),
    #[error("SNP `{0}` has (near) zero allele-frequency spread")]
    DegenerateSnp(String),
    #[error("pedigree contains a cycle involving `{0}`")]
    CyclicPedigree(String),
    #[error("gene `{0}` has no surviving SNPs")]
    EmptyGene(String),
    #[error("no genes in the design")]
    EmptyDesign,
    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("covariance block is singular (condition number {0:e})")]
    SingularH(f64),
    #[error("variance components are not identifiable: kinship eigenvalue spread {0:e}")]
    NonIdentifiable(f64),
    #[error("AI-REML did not converge within {0} iterations")]
    MaxIterations(usize),
    #[error("gene `{0}` has a rank-deficient whitened design block")]
    RankDeficientGroup(String),
    #[error("fold {fold} has {size} training subjects, at least {min} required")]
    FoldTooSmall { fold: usize, size: usize, min: usize },
    #[error("trait {0} has zero genetic and residual variance")]
    SingularTraitH(usize),
    #[error("correlation input has zero variance")]
    ZeroVariance,
    #[error("truth set is empty or contains every gene")]
    DegenerateTruth,
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            Config(_) | Io { .. } => ErrorKind::Usage,
            NotPsd(_) | SingularH(_) | NonIdentifiable(_) | MaxIterations(_)
            | RankDeficientGroup(_) | SingularTraitH(_) | Numerical(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidData(msg.into())
    }
}
