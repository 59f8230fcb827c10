use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid generator index {letter} (degree is {degree})")]
    InvalidGenerator { letter: usize, degree: usize },

    #[error("degenerate group: degree d = 2k + r = {degree}, need d >= 3 and d <= 255")]
    DegenerateGroup { degree: usize },

    #[error("the root has no parent")]
    RootHasNoParent,

    #[error("ellipticity floor {epsilon} is infeasible for degree {degree}: need epsilon < 1/d")]
    InfeasibleEllipticity { epsilon: f64, degree: usize },

    #[error("ellipticity violated: {0}")]
    EllipticityViolation(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid regeneration margin {0}: must be >= 1")]
    InvalidMargin(usize),

    #[error("insufficient blocks: have {have}, need at least {need}")]
    InsufficientBlocks { have: usize, need: usize },

    #[error("path enumeration too large: (d-1)^psi = {paths} exceeds cap {cap}")]
    TooLargePsi { paths: f64, cap: f64 },

    #[error("absorbing structure error: {0}")]
    AbsorbingStructure(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration errors:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
