//! Accelerator description: PE array, memory hierarchy and the fixed
//! spatial unrolling.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::workload::{Dim, OperandKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Capacity {
    Bits(u64),
    Unbounded,
}

impl Capacity {
    pub fn is_unbounded(&self) -> bool {
        matches!(self, Capacity::Unbounded)
    }
}

impl Serialize for Capacity {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Capacity::Bits(b) => s.serialize_u64(*b),
            Capacity::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

impl<'de> Deserialize<'de> for Capacity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Bits(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Bits(b) => Ok(Capacity::Bits(b)),
            Raw::Text(t) if t == "unbounded" => Ok(Capacity::Unbounded),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "capacity_bits must be a non-negative integer or \"unbounded\", got \"{t}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryLevel {
    pub name: String,
    pub capacity_bits: Capacity,
    pub read_energy: f64,
    pub write_energy: f64,
    pub serves: BTreeSet<OperandKind>,
    /// One instance for the whole array (true) or one per PE (false).
    pub shared: bool,
}

impl MemoryLevel {
    pub fn serves(&self, op: OperandKind) -> bool {
        self.serves.contains(&op)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub name: String,
    pub pe_rows: u64,
    pub pe_cols: u64,
    pub mac_energy: f64,
    /// Innermost level first.
    pub levels: Vec<MemoryLevel>,
}

/// A violated architecture invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArchIssue {
    NoLevels,
    EmptyPeArray,
    TopLevelBounded,
    UnboundedBelowTop { level: String },
    EmptyServes { level: String },
    DuplicateLevelName { level: String },
    TopMissingOperand { operand: OperandKind },
    PerPeAboveShared { operand: OperandKind, level: String },
    BadEnergy { level: String },
}

impl fmt::Display for ArchIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArchIssue::NoLevels => write!(f, "levels: hierarchy is empty"),
            ArchIssue::EmptyPeArray => write!(f, "pe_rows/pe_cols: must be >= 1"),
            ArchIssue::TopLevelBounded => write!(f, "levels: topmost level must be unbounded"),
            ArchIssue::UnboundedBelowTop { level } => {
                write!(
                    f,
                    "levels.{level}.capacity_bits: only the topmost level may be unbounded"
                )
            }
            ArchIssue::EmptyServes { level } => {
                write!(f, "levels.{level}.serves: must not be empty")
            }
            ArchIssue::DuplicateLevelName { level } => {
                write!(f, "levels.{level}.name: duplicate level name")
            }
            ArchIssue::TopMissingOperand { operand } => {
                write!(f, "levels: the unbounded top level must serve {operand}")
            }
            ArchIssue::PerPeAboveShared { operand, level } => {
                write!(f, "levels.{level}.shared: per-PE level above a shared level in the {operand} chain")
            }
            ArchIssue::BadEnergy { level } => {
                write!(f, "{level}: energies must be finite and non-negative")
            }
        }
    }
}

impl ArchSpec {
    /// Indices into `levels` of the levels serving `op`, innermost first.
    pub fn chain(&self, op: OperandKind) -> Vec<usize> {
        (0..self.levels.len())
            .filter(|&i| self.levels[i].serves(op))
            .collect()
    }

    pub fn level_index(&self, name: &str) -> Option<usize> {
        self.levels.iter().position(|l| l.name == name)
    }

    /// Multiplies every energy coefficient by `factor`.
    pub fn scaled_energies(&self, factor: f64) -> ArchSpec {
        let mut out = self.clone();
        out.mac_energy *= factor;
        for l in &mut out.levels {
            l.read_energy *= factor;
            l.write_energy *= factor;
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let issues = validate_arch(self);
        if issues.is_empty() {
            Ok(())
        } else {
            let msgs: Vec<String> = issues.iter().map(ToString::to_string).collect();
            Err(Error::InvalidArch(format!(
                "{}: {}",
                self.name,
                msgs.join("; ")
            )))
        }
    }

    /// Eyeriss-like illustrative configuration: 14x12 PEs, per-PE
    /// scratchpads for each operand, a shared global buffer for inputs and
    /// outputs and an unbounded DRAM. Energies are normalized to one MAC.
    pub fn eyeriss_like() -> ArchSpec {
        use OperandKind::*;
        let level =
            |name: &str, cap: Capacity, e: f64, serves: &[OperandKind], shared: bool| MemoryLevel {
                name: name.into(),
                capacity_bits: cap,
                read_energy: e,
                write_energy: e,
                serves: serves.iter().copied().collect(),
                shared,
            };
        ArchSpec {
            name: "eyeriss_like".into(),
            pe_rows: 14,
            pe_cols: 12,
            mac_energy: 1.0,
            levels: vec![
                level("spad_W", Capacity::Bits(224 * 16), 1.0, &[W], false),
                level("spad_I", Capacity::Bits(12 * 16), 1.0, &[I], false),
                level("spad_O", Capacity::Bits(24 * 16), 1.0, &[O], false),
                level(
                    "global_buffer",
                    Capacity::Bits(108 * 1024 * 8),
                    6.0,
                    &[I, O],
                    true,
                ),
                level("dram", Capacity::Unbounded, 200.0, &[I, W, O], true),
            ],
        }
    }
}

/// Returns every invariant violation of `arch`; an empty list means valid.
pub fn validate_arch(arch: &ArchSpec) -> Vec<ArchIssue> {
    let mut issues = Vec::new();
    if arch.pe_rows == 0 || arch.pe_cols == 0 {
        issues.push(ArchIssue::EmptyPeArray);
    }
    let Some(top) = arch.levels.last() else {
        issues.push(ArchIssue::NoLevels);
        return issues;
    };
    if !top.capacity_bits.is_unbounded() {
        issues.push(ArchIssue::TopLevelBounded);
    }
    let mut names = BTreeSet::new();
    let last = arch.levels.len() - 1;
    for (i, l) in arch.levels.iter().enumerate() {
        if i < last && l.capacity_bits.is_unbounded() {
            issues.push(ArchIssue::UnboundedBelowTop {
                level: l.name.clone(),
            });
        }
        if l.serves.is_empty() {
            issues.push(ArchIssue::EmptyServes {
                level: l.name.clone(),
            });
        }
        if !names.insert(l.name.as_str()) {
            issues.push(ArchIssue::DuplicateLevelName {
                level: l.name.clone(),
            });
        }
        let ok = |e: f64| e.is_finite() && e >= 0.0;
        if !ok(l.read_energy) || !ok(l.write_energy) {
            issues.push(ArchIssue::BadEnergy {
                level: l.name.clone(),
            });
        }
    }
    if !(arch.mac_energy.is_finite() && arch.mac_energy >= 0.0) {
        issues.push(ArchIssue::BadEnergy {
            level: "mac_energy".into(),
        });
    }
    for op in OperandKind::ALL {
        if !top.serves(op) {
            issues.push(ArchIssue::TopMissingOperand { operand: op });
        }
        let mut seen_shared = false;
        for i in arch.chain(op) {
            let l = &arch.levels[i];
            if l.shared {
                seen_shared = true;
            } else if seen_shared {
                issues.push(ArchIssue::PerPeAboveShared {
                    operand: op,
                    level: l.name.clone(),
                });
            }
        }
    }
    issues
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Row,
    Col,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialEntry {
    pub dim: Dim,
    pub factor: u64,
    pub axis: Axis,
}

/// The parfor loops mapped onto the PE array.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpatialUnrolling {
    pub entries: Vec<SpatialEntry>,
}

impl SpatialUnrolling {
    pub fn new(entries: Vec<SpatialEntry>) -> Self {
        SpatialUnrolling { entries }
    }

    pub fn none() -> Self {
        Self::default()
    }

    /// Product of the factors unrolled on `dim`.
    pub fn factor(&self, dim: Dim) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.dim == dim)
            .map(|e| e.factor)
            .product()
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.factor).product()
    }

    pub fn validate(&self, arch: &ArchSpec) -> Result<()> {
        if let Some(e) = self.entries.iter().find(|e| e.factor < 2) {
            return Err(Error::InvalidSpatial(format!(
                "{}: factor must be > 1, got {}",
                e.dim, e.factor
            )));
        }
        for (axis, limit) in [(Axis::Row, arch.pe_rows), (Axis::Col, arch.pe_cols)] {
            let used: u64 = self
                .entries
                .iter()
                .filter(|e| e.axis == axis)
                .map(|e| e.factor)
                .product();
            if used > limit {
                return Err(Error::InvalidSpatial(format!(
                    "{axis:?} factors multiply to {used}, array has {limit}"
                )));
            }
        }
        Ok(())
    }
}

/// `(p_total, reuse)`: number of active PEs and how many of them share each
/// word of `operand` (product of operand-irrelevant spatial factors).
pub fn spatial_scale(operand: OperandKind, spatial: &SpatialUnrolling) -> (u64, u64) {
    let reuse = spatial
        .entries
        .iter()
        .filter(|e| !operand.is_relevant(e.dim))
        .map(|e| e.factor)
        .product();
    (spatial.total(), reuse)
}
