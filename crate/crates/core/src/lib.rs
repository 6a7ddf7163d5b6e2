//! Dual-engine loop-ordering scheduler for DNN accelerators.
//!
//! A layer's loop nest is decomposed into prime-factor loops; every ordering
//! of those loops gets a memory allocation inferred bottom-up and an energy
//! from an analytical access-count model. Small ordering spaces are searched
//! exhaustively, large ones with simulated annealing.

pub mod allocator;
pub mod archspec;
pub mod costmodel;
pub mod engines;
pub mod error;
pub mod fixtures;
pub mod oracle;
pub mod ordering;
pub mod workload;

pub use allocator::{allocate, unique_layers, AllocationMode, TemporalMapping};
pub use archspec::{
    spatial_scale, validate_arch, ArchSpec, Axis, Capacity, MemoryLevel, SpatialEntry,
    SpatialUnrolling,
};
pub use costmodel::{evaluate, objective, CostBreakdown, Metric};
pub use engines::{EngineChoice, EngineKind, SaParams, SearchProblem, SearchResult};
pub use error::{Error, Result};
pub use ordering::LoopOrdering;
pub use workload::{Dim, LayerSpec, Loop, Lpf, OperandKind, PerOperand};
