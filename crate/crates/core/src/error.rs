use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Everything that can go wrong inside the numerical core.
///
/// Graph errors carry the index of the offending node so a failure deep
/// inside an encoder can be traced back to the op that produced it.
#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// Incompatible operand shapes while building or evaluating a graph.
    Shape {
        node: usize,
        op: &'static str,
        detail: String,
    },
    /// A graph leaf had nothing bound to it at evaluation time.
    MissingInput { node: usize, name: String },
    /// An op produced NaN or an infinity.
    NonFinite { node: usize, op: &'static str },
    /// l2-normalization of an all-zero row.
    ZeroNorm { node: usize },
    /// `backward` was asked to differentiate a tensor with more than one element.
    NonScalarLoss { shape: Vec<usize> },
    /// Tensor constructed with a bad shape/data combination.
    InvalidTensor(String),
    /// A configuration value is out of range.
    Config(String),
    /// An operation received an empty collection it cannot reduce.
    EmptyInput(&'static str),
    /// A word outside the fixed context vocabulary.
    Vocabulary(String),
    /// A text sequence longer than the encoder's context window.
    ContextOverflow { len: usize, capacity: usize },
    /// A metric is undefined for the given labels (e.g. AP without positives).
    UndefinedMetric(&'static str),
    DuplicateParam(String),
    UnknownParam(String),
    /// An optimizer step tried to modify a frozen tensor.
    FrozenUpdate(String),
    /// A loss term went non-finite during training.
    NonFiniteLoss { term: &'static str, step: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { node, op, detail } => {
                write!(f, "shape mismatch at node {node} ({op}): {detail}")
            }
            Error::MissingInput { node, name } => {
                write!(f, "node {node}: no tensor bound to `{name}`")
            }
            Error::NonFinite { node, op } => {
                write!(f, "numeric overflow: node {node} ({op}) produced a non-finite value")
            }
            Error::ZeroNorm { node } => write!(f, "node {node}: l2-normalize of a zero vector"),
            Error::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            Error::InvalidTensor(msg) => write!(f, "invalid tensor: {msg}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::Vocabulary(word) => write!(f, "word `{word}` is not in the vocabulary"),
            Error::ContextOverflow { len, capacity } => write!(
                f,
                "text sequence of length {len} overflows the context capacity {capacity}"
            ),
            Error::UndefinedMetric(msg) => write!(f, "undefined metric: {msg}"),
            Error::DuplicateParam(name) => write!(f, "parameter `{name}` already exists"),
            Error::UnknownParam(name) => write!(f, "unknown parameter `{name}`"),
            Error::FrozenUpdate(name) => write!(f, "attempted to update frozen parameter `{name}`"),
            Error::NonFiniteLoss { term, step } => {
                write!(f, "loss term `{term}` became non-finite at step {step}")
            }
        }
    }
}

impl core::error::Error for Error {}
