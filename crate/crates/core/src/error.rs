use thiserror::Error;

use crate::workload::{Dim, OperandKind};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("layer `{layer}`: {field} must be >= 1")]
    InvalidLayer { layer: String, field: &'static str },

    #[error("spatial factor {factor} on {dim} does not divide the dimension size {size}")]
    NonDivisibleUnrolling { dim: Dim, factor: u64, size: u64 },

    #[error("invalid spatial unrolling: {0}")]
    InvalidSpatial(String),

    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("index out of range: {index} (ordering length {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("swap indices must differ (got {0} twice)")]
    SameIndex(usize),

    #[error("ordering of length {0} has no swap neighbours")]
    TooShort(usize),

    #[error("a single {operand} word does not fit in memory level `{level}`")]
    InfeasibleLowestLevel { operand: OperandKind, level: String },

    #[error("ordering does not match the layer's loop multiset")]
    OrderingMismatch,

    #[error("unsupported objective metric `{0}`")]
    UnsupportedMetric(String),

    #[error("simulation needs {needed} iterations, budget is {budget}")]
    BudgetExceeded { needed: u128, budget: u64 },

    #[error("search space of {count} orderings exceeds the cap of {cap}")]
    SpaceTooLarge { count: String, cap: u64 },

    #[error("acceptance probability needs positive inputs (v={v}, v_new={v_new}, t={t})")]
    NonPositiveInput { v: f64, v_new: f64, t: f64 },

    #[error("invalid search parameters: {0}")]
    InvalidParams(String),
}
