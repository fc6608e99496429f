use alloc::string::String;
use core::fmt;

/// Crate-wide result type.
pub type Result<T> = core::result::Result<T, Error>;

/// Errors surfaced by graph construction, model evaluation, and training.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operands have incompatible shapes for the named operation.
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    /// An argument violated a documented precondition.
    InvalidArgument(String),
    /// A graph record failed validation.
    InvalidGraph(String),
    /// A row of an adjacency matrix sums to zero; self-loops were not
    /// applied before normalization.
    ZeroDegreeRow { row: usize },
    /// The training loss left the finite range at the given epoch.
    NonFiniteLoss { epoch: usize },
    /// An operation that needs a nonempty node set received an empty one.
    EmptyNodeSet,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => write!(
                f,
                "shape mismatch in {op}: {}x{} vs {}x{}",
                left.0, left.1, right.0, right.1
            ),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::InvalidGraph(msg) => write!(f, "invalid graph: {msg}"),
            Error::ZeroDegreeRow { row } => write!(
                f,
                "row {row} has zero degree; add self-loops before normalizing"
            ),
            Error::NonFiniteLoss { epoch } => {
                write!(f, "training loss became non-finite at epoch {epoch}")
            }
            Error::EmptyNodeSet => write!(f, "node set is empty"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
