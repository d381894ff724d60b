use thiserror::Error;

pub type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape {shape:?} needs {expected} values, got {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("node {node} ({op}): expected {expected}, got {actual:?}")]
    ShapeMismatch {
        node: usize,
        op: &'static str,
        expected: String,
        actual: Vec<Vec<usize>>,
    },

    #[error("input `{0}` is not bound")]
    UnboundInput(String),

    #[error("parameter `{0}` is not in the store")]
    UnknownParameter(String),

    #[error("parameter `{0}` already exists")]
    DuplicateParameter(String),

    #[error("backward requires a scalar root, node {node} has shape {shape:?}")]
    NonScalarRoot { node: usize, shape: Vec<usize> },

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("node {0} does not belong to this graph")]
    UnknownNode(usize),

    #[error("evaluation order is not topological at node {0}")]
    InvalidOrder(usize),

    #[error("non-finite gradient for `{0}`; step aborted")]
    NonFiniteGradient(String),

    #[error("optimizer step produced non-finite values in `{0}`")]
    NonFiniteParameter(String),

    #[error("gradient for `{name}` has shape {actual:?}, parameter has {expected:?}")]
    GradientShape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("loss is not finite at perturbed point of `{name}`[{index}]")]
    NonFiniteLoss { name: String, index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
