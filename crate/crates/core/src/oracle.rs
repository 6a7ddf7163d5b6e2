//! Ground truth by brute force: a literal loop-nest simulation that counts
//! every tile refresh, and an exhaustive best-ordering search.
//!
//! Nothing here shares code with the analytical counting in `costmodel`;
//! the simulation tracks which tile each level currently holds and counts
//! the words moved whenever that changes.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::allocator::{allocate, AllocationMode, TemporalMapping};
use crate::archspec::{ArchSpec, SpatialUnrolling};
use crate::costmodel::{evaluate, AccessTable, ReadWrite};
use crate::engines::TIE_TOLERANCE;
use crate::error::{Error, Result};
use crate::ordering::generate_orderings;
use crate::workload::{lpf_decompose, tile_footprint, DimSizes, LayerSpec, Loop, OperandKind};

pub const SIMULATION_BUDGET: u64 = 1_000_000;
pub const BRUTE_FORCE_LIMIT: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimTrace {
    pub accesses: AccessTable,
    pub iterations_executed: u64,
}

/// Mixed-radix id of the loop indices at `positions`.
fn tile_id(idx: &[u64], loops: &[Loop], positions: &[usize]) -> u64 {
    positions
        .iter()
        .fold(0, |acc, &p| acc * loops[p].size + idx[p])
}

struct Boundary {
    lower: usize,
    upper: usize,
    words: u64,
    relevant_above: Vec<usize>,
    resident: Option<u64>,
    touched: HashSet<u64>,
}

/// Executes the temporal loops of `mapping` one iteration at a time.
///
/// Only valid without spatial unrolling.
pub fn simulate(mapping: &TemporalMapping, layer: &LayerSpec, arch: &ArchSpec) -> Result<SimTrace> {
    let loops = &mapping.ordering.loops;
    let needed: u128 = loops.iter().map(|l| u128::from(l.size)).product();
    if needed > u128::from(SIMULATION_BUDGET) {
        return Err(Error::BudgetExceeded {
            needed,
            budget: SIMULATION_BUDGET,
        });
    }
    let iterations = needed as u64;

    let mut table = AccessTable::new();
    let mut boundaries: Vec<(OperandKind, Boundary)> = Vec::new();
    for op in OperandKind::ALL {
        let chain = arch.chain(op);
        for &li in &chain {
            table.insert((op, li), ReadWrite::default());
        }
        for (t, &cut) in mapping.boundaries[op].iter().enumerate() {
            let words = tile_footprint(op, &DimSizes::from_loops(&loops[..cut]), layer);
            let relevant_above = (cut..loops.len())
                .filter(|&p| op.is_relevant(loops[p].dim))
                .collect();
            boundaries.push((
                op,
                Boundary {
                    lower: chain[t],
                    upper: chain[t + 1],
                    words,
                    relevant_above,
                    resident: None,
                    touched: HashSet::new(),
                },
            ));
        }
    }
    let lowest = |op: OperandKind| arch.chain(op)[0];
    let (low_i, low_w, low_o) = (
        lowest(OperandKind::I),
        lowest(OperandKind::W),
        lowest(OperandKind::O),
    );
    let out_positions: Vec<usize> = (0..loops.len())
        .filter(|&p| OperandKind::O.is_relevant(loops[p].dim))
        .collect();
    let mut outputs_touched: HashSet<u64> = HashSet::new();

    let mut idx = vec![0u64; loops.len()];
    for _ in 0..iterations {
        for (op, b) in boundaries.iter_mut() {
            let id = tile_id(&idx, loops, &b.relevant_above);
            if b.resident == Some(id) {
                continue;
            }
            match op {
                OperandKind::I | OperandKind::W => {
                    table.get_mut(&(*op, b.upper)).unwrap().reads += b.words;
                    table.get_mut(&(*op, b.lower)).unwrap().writes += b.words;
                }
                OperandKind::O => {
                    if b.resident.is_some() {
                        table.get_mut(&(*op, b.lower)).unwrap().reads += b.words;
                        table.get_mut(&(*op, b.upper)).unwrap().writes += b.words;
                    }
                    if !b.touched.insert(id) {
                        table.get_mut(&(*op, b.upper)).unwrap().reads += b.words;
                        table.get_mut(&(*op, b.lower)).unwrap().writes += b.words;
                    }
                }
            }
            b.resident = Some(id);
        }

        table.get_mut(&(OperandKind::I, low_i)).unwrap().reads += 1;
        table.get_mut(&(OperandKind::W, low_w)).unwrap().reads += 1;
        let o = table.get_mut(&(OperandKind::O, low_o)).unwrap();
        o.writes += 1;
        if !outputs_touched.insert(tile_id(&idx, loops, &out_positions)) {
            o.reads += 1;
        }

        for (p, l) in loops.iter().enumerate() {
            idx[p] += 1;
            if idx[p] < l.size {
                break;
            }
            idx[p] = 0;
        }
    }

    // Drain the output tiles still resident at the end.
    for (op, b) in &boundaries {
        if *op == OperandKind::O && b.resident.is_some() {
            table.get_mut(&(*op, b.lower)).unwrap().reads += b.words;
            table.get_mut(&(*op, b.upper)).unwrap().writes += b.words;
        }
    }

    Ok(SimTrace {
        accesses: table,
        iterations_executed: iterations,
    })
}

/// Evaluates every distinct ordering and returns the cheapest mapping; ties
/// (within `TIE_TOLERANCE`) keep the first one in lexicographic order.
pub fn brute_force_best(
    layer: &LayerSpec,
    arch: &ArchSpec,
    spatial: &SpatialUnrolling,
    mode: AllocationMode,
) -> Result<(TemporalMapping, f64)> {
    let loops: Vec<Loop> = lpf_decompose(layer, spatial)?
        .into_iter()
        .map(Loop::from)
        .collect();
    let count = crate::ordering::count_distinct_orderings(&loops);
    if count > BRUTE_FORCE_LIMIT.into() {
        return Err(Error::SpaceTooLarge {
            count: count.to_string(),
            cap: BRUTE_FORCE_LIMIT,
        });
    }
    let mut best: Option<(TemporalMapping, f64)> = None;
    for o in generate_orderings(&loops) {
        let m = allocate(&o, layer, arch, spatial, mode)?;
        let v = evaluate(&m, layer, arch, spatial)?.total_energy;
        if best
            .as_ref()
            .is_none_or(|(_, b)| b - v > TIE_TOLERANCE * b.abs())
        {
            best = Some((m, v));
        }
    }
    Ok(best.expect("at least one ordering"))
}
