//! Analytical access counting and energy for a temporal mapping.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::allocator::TemporalMapping;
use crate::archspec::{spatial_scale, ArchSpec, SpatialUnrolling};
use crate::error::{Error, Result};
use crate::workload::{
    tensor_size, tile_footprint, total_macs, DimSizes, LayerSpec, Loop, OperandKind,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReadWrite {
    pub reads: u64,
    pub writes: u64,
}

/// Word accesses keyed by (operand, index into `ArchSpec::levels`).
pub type AccessTable = BTreeMap<(OperandKind, usize), ReadWrite>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTerm {
    pub operand: OperandKind,
    /// Index into `ArchSpec::levels`.
    pub level: usize,
    pub reads: u64,
    pub writes: u64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub mac_count: u64,
    /// One term per (operand, serving level), operands in I, W, O order and
    /// levels innermost first.
    pub terms: Vec<CostTerm>,
    pub mac_energy_total: f64,
    pub total_energy: f64,
}

impl CostBreakdown {
    pub fn accesses(&self) -> AccessTable {
        self.terms
            .iter()
            .map(|t| {
                (
                    (t.operand, t.level),
                    ReadWrite {
                        reads: t.reads,
                        writes: t.writes,
                    },
                )
            })
            .collect()
    }

    pub fn energy_term(&self, op: OperandKind, level: usize) -> Option<f64> {
        self.terms
            .iter()
            .find(|t| t.operand == op && t.level == level)
            .map(|t| t.energy)
    }
}

/// Words crossing one boundary of an operand's chain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Traffic {
    /// Upper level to lower level (fills, and partial-sum re-reads for O).
    pub down: u64,
    /// Lower level to upper level (partial-sum write-backs, O only).
    pub up: u64,
}

/// Traffic across a boundary whose lower side holds a `tile`-word tile and
/// whose upper side iterates the `above` loops (innermost first).
///
/// The tile is refreshed once per iteration of the above loops, except that
/// a run of operand-irrelevant loops directly above the boundary keeps it
/// resident. `replicas` is `p_total / reuse` for the operand.
pub fn traffic(op: OperandKind, tile: u64, above: &[Loop], replicas: u64) -> Traffic {
    let all: u64 = above.iter().map(|l| l.size).product();
    let stationary: u64 = above
        .iter()
        .take_while(|l| !op.is_relevant(l.dim))
        .map(|l| l.size)
        .product();
    let refreshes = all / stationary;
    match op {
        OperandKind::I | OperandKind::W => Traffic {
            down: tile * refreshes * replicas,
            up: 0,
        },
        OperandKind::O => {
            let distinct: u64 = above
                .iter()
                .filter(|l| op.is_relevant(l.dim))
                .map(|l| l.size)
                .product();
            Traffic {
                down: tile * (refreshes - distinct) * replicas,
                up: tile * refreshes * replicas,
            }
        }
    }
}

/// Traffic across the `transition`-th boundary (0-based) of `op`'s chain.
pub fn boundary_traffic(
    mapping: &TemporalMapping,
    layer: &LayerSpec,
    spatial: &SpatialUnrolling,
    op: OperandKind,
    transition: usize,
) -> Traffic {
    let cut = mapping.boundaries[op][transition];
    let loops = &mapping.ordering.loops;
    let tile = tile_footprint(op, &DimSizes::from_loops(&loops[..cut]), layer);
    let (p_total, reuse) = spatial_scale(op, spatial);
    traffic(op, tile, &loops[cut..], p_total / reuse)
}

/// Access counts per (operand, level) for `mapping`, without energies.
pub fn access_counts(
    mapping: &TemporalMapping,
    layer: &LayerSpec,
    arch: &ArchSpec,
    spatial: &SpatialUnrolling,
) -> AccessTable {
    let macs = total_macs(layer);
    let mut table = AccessTable::new();
    for op in OperandKind::ALL {
        let chain = arch.chain(op);
        for &li in &chain {
            table.insert((op, li), ReadWrite::default());
        }
        let lowest = table.get_mut(&(op, chain[0])).expect("chain is non-empty");
        match op {
            OperandKind::I | OperandKind::W => lowest.reads += macs,
            OperandKind::O => {
                lowest.writes += macs;
                lowest.reads += macs - tensor_size(OperandKind::O, layer);
            }
        }
        for t in 0..chain.len() - 1 {
            let Traffic { down, up } = boundary_traffic(mapping, layer, spatial, op, t);
            let (lower, upper) = (chain[t], chain[t + 1]);
            let u = table.get_mut(&(op, upper)).unwrap();
            u.reads += down;
            u.writes += up;
            let l = table.get_mut(&(op, lower)).unwrap();
            l.writes += down;
            l.reads += up;
        }
    }
    table
}

/// Full cost of `mapping`: access counts, per-(operand, level) energies and
/// the total.
pub fn evaluate(
    mapping: &TemporalMapping,
    layer: &LayerSpec,
    arch: &ArchSpec,
    spatial: &SpatialUnrolling,
) -> Result<CostBreakdown> {
    let mac_count = total_macs(layer);
    let terms: Vec<CostTerm> = access_counts(mapping, layer, arch, spatial)
        .into_iter()
        .map(|((operand, level), rw)| {
            let lv = &arch.levels[level];
            let energy = rw.reads as f64 * lv.read_energy + rw.writes as f64 * lv.write_energy;
            CostTerm {
                operand,
                level,
                reads: rw.reads,
                writes: rw.writes,
                energy,
            }
        })
        .collect();
    let mac_energy_total = mac_count as f64 * arch.mac_energy;
    let total_energy = terms.iter().fold(mac_energy_total, |acc, t| acc + t.energy);
    Ok(CostBreakdown {
        mac_count,
        terms,
        mac_energy_total,
        total_energy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Energy,
    Latency,
    Edp,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Energy => "energy",
            Metric::Latency => "latency",
            Metric::Edp => "edp",
        })
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "energy" => Ok(Metric::Energy),
            "latency" => Ok(Metric::Latency),
            "edp" => Ok(Metric::Edp),
            other => Err(format!("unknown metric `{other}`")),
        }
    }
}

/// The scalar being minimized. Only energy is modelled.
pub fn objective(cb: &CostBreakdown, metric: Metric) -> Result<f64> {
    match metric {
        Metric::Energy => Ok(cb.total_energy),
        other => Err(Error::UnsupportedMetric(other.to_string())),
    }
}
