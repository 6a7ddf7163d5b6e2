//! Structured run output.

use loopsched_core::engines::SearchResult;
use loopsched_core::{
    AllocationMode, ArchSpec, CostBreakdown, EngineKind, LoopOrdering, OperandKind, SaParams,
    TemporalMapping,
};
use serde::{Deserialize, Serialize};

/// Loops `[start, end)` of the ordering held at `level`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSegment {
    pub level: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperandAllocation {
    pub operand: OperandKind,
    pub boundaries: Vec<usize>,
    pub levels: Vec<LevelSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostRow {
    pub operand: OperandKind,
    pub level: String,
    pub reads: u64,
    pub writes: u64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostReport {
    pub mac_count: u64,
    pub mac_energy_total: f64,
    pub total_energy: f64,
    pub terms: Vec<CostRow>,
}

impl CostReport {
    pub fn new(cb: &CostBreakdown, arch: &ArchSpec) -> Self {
        CostReport {
            mac_count: cb.mac_count,
            mac_energy_total: cb.mac_energy_total,
            total_energy: cb.total_energy,
            terms: cb
                .terms
                .iter()
                .map(|t| CostRow {
                    operand: t.operand,
                    level: arch.levels[t.level].name.clone(),
                    reads: t.reads,
                    writes: t.writes,
                    energy: t.energy,
                })
                .collect(),
        }
    }
}

pub fn allocations(mapping: &TemporalMapping, arch: &ArchSpec) -> Vec<OperandAllocation> {
    let n = mapping.ordering.len();
    OperandKind::ALL
        .iter()
        .map(|&op| {
            let chain = arch.chain(op);
            let b = &mapping.boundaries[op];
            let levels = chain
                .iter()
                .enumerate()
                .map(|(j, &li)| LevelSegment {
                    level: arch.levels[li].name.clone(),
                    start: if j == 0 { 0 } else { b[j - 1] },
                    end: b.get(j).copied().unwrap_or(n),
                })
                .collect();
            OperandAllocation {
                operand: op,
                boundaries: b.clone(),
                levels,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub layer: String,
    pub arch: String,
    pub engine_used: EngineKind,
    pub mode: AllocationMode,
    /// Exact count, as a decimal string (it can exceed 64 bits).
    pub distinct_orderings: String,
    pub lpf_limit: Option<usize>,
    /// Innermost loop first.
    pub ordering: LoopOrdering,
    pub allocation: Vec<OperandAllocation>,
    pub cost: CostReport,
    pub objective: f64,
    pub evaluations: u64,
    pub seed: u64,
    pub sa_params: SaParams,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn new(
        layer: &str,
        arch: &ArchSpec,
        result: &SearchResult,
        distinct_orderings: String,
        params: &SaParams,
        lpf_limit: Option<usize>,
    ) -> Self {
        RunReport {
            layer: layer.to_string(),
            arch: arch.name.clone(),
            engine_used: result.engine_used,
            mode: result.best_mapping.mode,
            distinct_orderings,
            lpf_limit,
            ordering: result.best_mapping.ordering.clone(),
            allocation: allocations(&result.best_mapping, arch),
            cost: CostReport::new(&result.best_cost, arch),
            objective: result.best_objective,
            evaluations: result.evaluations,
            seed: params.seed,
            sa_params: *params,
            wall_time_s: result.wall_time.as_secs_f64(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepEntry {
    pub multiplicity: usize,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepReport {
    pub network: String,
    pub total_layers: usize,
    pub unique_layers: usize,
    /// Sum of each unique layer's objective times its multiplicity.
    pub total_energy: f64,
    pub layers: Vec<SweepEntry>,
    pub wall_time_s: f64,
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}
