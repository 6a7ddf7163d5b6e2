//! Curated fixtures and the annealing optimality study.
//!
//! Fixtures are small, deterministic (layer, arch, spatial, mode) bundles.
//! Their `expected` section is always filled in by the brute-force oracle,
//! see [`Fixture::with_expected`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocator::{allocate, AllocationMode, TemporalMapping};
use crate::archspec::{ArchSpec, Axis, Capacity, MemoryLevel, SpatialEntry, SpatialUnrolling};
use crate::costmodel::AccessTable;
use crate::engines::{sa_search, SaParams, SearchProblem};
use crate::error::{Error, Result};
use crate::oracle::{brute_force_best, simulate, BRUTE_FORCE_LIMIT, SIMULATION_BUDGET};
use crate::ordering::{count_distinct_orderings, random_ordering, LoopOrdering};
use crate::workload::{lpf_decompose, total_macs, Dim, LayerSpec, Loop, OperandKind};

/// One row of an access table with the level given by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccessRow {
    pub operand: OperandKind,
    pub level: String,
    pub reads: u64,
    pub writes: u64,
}

pub fn access_rows(table: &AccessTable, arch: &ArchSpec) -> Vec<AccessRow> {
    table
        .iter()
        .map(|(&(operand, level), rw)| AccessRow {
            operand,
            level: arch.levels[level].name.clone(),
            reads: rw.reads,
            writes: rw.writes,
        })
        .collect()
}

/// Oracle-produced reference values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expected {
    /// Number of distinct loop orderings.
    pub distinct_orderings: u64,
    /// Brute-force optimum, when the space is small enough to enumerate.
    pub optimal_objective: Option<f64>,
    /// Simulated counts for the canonical ordering, when within the
    /// simulation budget and temporal-only.
    pub canonical_accesses: Option<Vec<AccessRow>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    pub name: String,
    pub layer: LayerSpec,
    pub arch: ArchSpec,
    #[serde(default)]
    pub spatial: SpatialUnrolling,
    #[serde(default)]
    pub mode: AllocationMode,
    #[serde(default)]
    pub expected: Option<Expected>,
}

impl Fixture {
    pub fn new(name: impl Into<String>, layer: LayerSpec, arch: ArchSpec) -> Self {
        Fixture {
            name: name.into(),
            layer,
            arch,
            spatial: SpatialUnrolling::none(),
            mode: AllocationMode::Uneven,
            expected: None,
        }
    }

    pub fn with_spatial(mut self, spatial: SpatialUnrolling) -> Self {
        self.spatial = spatial;
        self
    }

    pub fn with_mode(mut self, mode: AllocationMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn loops(&self) -> Result<Vec<Loop>> {
        Ok(lpf_decompose(&self.layer, &self.spatial)?
            .into_iter()
            .map(Loop::from)
            .collect())
    }

    pub fn problem(&self) -> Result<SearchProblem> {
        SearchProblem::new(
            self.layer.clone(),
            self.arch.clone(),
            self.spatial.clone(),
            self.mode,
            None,
        )
    }

    /// True when `oracle::simulate` accepts this fixture.
    pub fn simulable(&self) -> bool {
        self.spatial.total() == 1 && total_macs(&self.layer) <= SIMULATION_BUDGET
    }

    pub fn canonical_mapping(&self) -> Result<TemporalMapping> {
        allocate(
            &LoopOrdering::canonical(&self.loops()?),
            &self.layer,
            &self.arch,
            &self.spatial,
            self.mode,
        )
    }

    /// Fills `expected` from the oracle. Parts that exceed the oracle's
    /// budgets are left empty.
    pub fn with_expected(mut self) -> Result<Self> {
        let d = count_distinct_orderings(&self.loops()?);
        let distinct_orderings = u64::try_from(&d).map_err(|_| Error::SpaceTooLarge {
            count: d.to_string(),
            cap: u64::MAX,
        })?;
        let optimal_objective = if distinct_orderings <= BRUTE_FORCE_LIMIT {
            Some(brute_force_best(&self.layer, &self.arch, &self.spatial, self.mode)?.1)
        } else {
            None
        };
        let canonical_accesses = if self.simulable() {
            let sim = simulate(&self.canonical_mapping()?, &self.layer, &self.arch)?;
            Some(access_rows(&sim.accesses, &self.arch))
        } else {
            None
        };
        self.expected = Some(Expected {
            distinct_orderings,
            optimal_objective,
            canonical_accesses,
        });
        Ok(self)
    }
}

fn level(
    name: &str,
    words: Option<u64>,
    energy: f64,
    serves: &[OperandKind],
    shared: bool,
) -> MemoryLevel {
    MemoryLevel {
        name: name.into(),
        capacity_bits: words.map_or(Capacity::Unbounded, |w| Capacity::Bits(w * 16)),
        read_energy: energy,
        write_energy: energy,
        serves: serves.iter().copied().collect(),
        shared,
    }
}

/// Register file plus unbounded DRAM, 16-bit words.
pub fn toy_arch_two_level(rf_words: u64) -> ArchSpec {
    use OperandKind::*;
    ArchSpec {
        name: format!("toy2_rf{rf_words}"),
        pe_rows: 1,
        pe_cols: 1,
        mac_energy: 1.0,
        levels: vec![
            level("rf", Some(rf_words), 1.0, &[I, W, O], false),
            level("dram", None, 100.0, &[I, W, O], true),
        ],
    }
}

/// Register file, a buffer for inputs and outputs, and DRAM, 16-bit words.
pub fn toy_arch_three_level(rf_words: u64, buf_words: u64) -> ArchSpec {
    use OperandKind::*;
    ArchSpec {
        name: format!("toy3_rf{rf_words}_buf{buf_words}"),
        pe_rows: 1,
        pe_cols: 1,
        mac_energy: 1.0,
        levels: vec![
            level("rf", Some(rf_words), 1.0, &[I, W, O], false),
            level("buf", Some(buf_words), 6.0, &[I, O], true),
            level("dram", None, 200.0, &[I, W, O], true),
        ],
    }
}

/// Per-operand register files, a shared buffer for all operands, and DRAM.
pub fn toy_arch_split_rf(rf: [u64; 3], buf_words: u64) -> ArchSpec {
    use OperandKind::*;
    ArchSpec {
        name: format!("toy3_split_{}_{}_{}_buf{buf_words}", rf[0], rf[1], rf[2]),
        pe_rows: 1,
        pe_cols: 1,
        mac_energy: 1.0,
        levels: vec![
            level("rf_I", Some(rf[0]), 1.0, &[I], false),
            level("rf_W", Some(rf[1]), 1.0, &[W], false),
            level("rf_O", Some(rf[2]), 1.5, &[O], false),
            level("buf", Some(buf_words), 6.0, &[I, W, O], true),
            level("dram", None, 200.0, &[I, W, O], true),
        ],
    }
}

/// The spatial unrolling shipped with the Eyeriss-like example.
pub fn eyeriss_spatial() -> SpatialUnrolling {
    SpatialUnrolling {
        entries: vec![
            SpatialEntry {
                dim: Dim::K,
                factor: 8,
                axis: Axis::Row,
            },
            SpatialEntry {
                dim: Dim::K,
                factor: 4,
                axis: Axis::Col,
            },
        ],
    }
}

fn layer(name: &str, dims: [u64; 7]) -> LayerSpec {
    LayerSpec::new(name, dims)
}

/// Temporal-only fixtures with at most 10^4 MACs on 2- and 3-level
/// hierarchies; every one is simulable and brute-forceable.
pub fn oracle_fixtures() -> Vec<Fixture> {
    let two = toy_arch_two_level(16);
    let two_big = toy_arch_two_level(64);
    let three = toy_arch_three_level(8, 64);
    let three_big = toy_arch_three_level(24, 256);
    let split = toy_arch_split_rf([4, 6, 4], 96);
    let mut out = vec![
        Fixture::new("single_mac", layer("single_mac", [1; 7]), two.clone()),
        Fixture::new("kc4", layer("kc4", [1, 4, 4, 1, 1, 1, 1]), two.clone()),
        Fixture::new(
            "kc4_buf",
            layer("kc4_buf", [1, 4, 4, 1, 1, 1, 1]),
            three.clone(),
        ),
        Fixture::new("k6c3", layer("k6c3", [1, 6, 3, 1, 1, 1, 1]), three.clone()),
        Fixture::new("fc_b2", layer("fc_b2", [2, 8, 6, 1, 1, 1, 1]), two.clone()),
        Fixture::new(
            "fc_b4",
            layer("fc_b4", [4, 6, 4, 1, 1, 1, 1]),
            three_big.clone(),
        ),
        Fixture::new(
            "conv1d_y",
            layer("conv1d_y", [1, 2, 2, 6, 1, 3, 1]),
            three.clone(),
        ),
        Fixture::new(
            "conv1d_x",
            layer("conv1d_x", [1, 4, 1, 1, 8, 1, 3]),
            two_big.clone(),
        ),
        Fixture::new(
            "conv2d_small",
            layer("conv2d_small", [1, 2, 2, 4, 4, 3, 3]),
            three_big.clone(),
        ),
        Fixture::new(
            "conv2d_k4",
            layer("conv2d_k4", [1, 4, 2, 3, 3, 3, 3]),
            three.clone(),
        ),
        Fixture::new(
            "depthwise_like",
            layer("depthwise_like", [1, 1, 1, 8, 8, 3, 3]),
            two_big.clone(),
        ),
        Fixture::new(
            "pointwise",
            layer("pointwise", [1, 8, 8, 4, 4, 1, 1]),
            three_big.clone(),
        ),
        Fixture::new(
            "pointwise_split",
            layer("pointwise_split", [1, 8, 4, 2, 4, 1, 1]),
            split.clone(),
        ),
        Fixture::new(
            "conv_split",
            layer("conv_split", [1, 4, 2, 4, 2, 3, 1]),
            split.clone(),
        ),
        Fixture::new(
            "batch_conv",
            layer("batch_conv", [2, 3, 2, 2, 2, 2, 2]),
            three.clone(),
        ),
        Fixture::new(
            "prime_dims",
            layer("prime_dims", [1, 5, 3, 7, 1, 1, 1]),
            two.clone(),
        ),
        Fixture::new(
            "wide_filter",
            layer("wide_filter", [1, 2, 1, 2, 2, 5, 5]),
            three_big.clone(),
        ),
        Fixture::new(
            "tight_rf",
            layer("tight_rf", [1, 4, 4, 2, 2, 1, 1]),
            toy_arch_three_level(2, 16),
        ),
        Fixture::new(
            "unit_rf",
            layer("unit_rf", [1, 3, 2, 2, 1, 2, 1]),
            toy_arch_two_level(1),
        ),
        Fixture::new(
            "single_dim",
            layer("single_dim", [1, 16, 1, 1, 1, 1, 1]),
            three.clone(),
        ),
        Fixture::new(
            "mixed_primes",
            layer("mixed_primes", [1, 6, 5, 3, 2, 1, 1]),
            split.clone(),
        ),
    ];
    out.push(Fixture::new(
        "strided",
        layer("strided", [1, 2, 2, 3, 3, 3, 3]).with_strides(2, 2),
        three_big.clone(),
    ));
    for name in ["kc4_buf", "conv2d_k4", "pointwise_split", "batch_conv"] {
        let base = out
            .iter()
            .find(|f| f.name == name)
            .expect("listed above")
            .clone();
        out.push(Fixture {
            name: format!("{name}_even"),
            ..base.with_mode(AllocationMode::Even)
        });
    }
    out
}

/// Fixtures with 10^3 <= D <= 10^5 distinct orderings for the annealing
/// optimality study.
pub fn study_fixtures() -> Vec<Fixture> {
    let eyeriss = ArchSpec::eyeriss_like();
    vec![
        Fixture::new(
            "study_conv_3x3",
            layer("study_conv_3x3", [1, 8, 8, 4, 1, 3, 1]),
            toy_arch_three_level(16, 512),
        ),
        Fixture::new(
            "study_fc",
            layer("study_fc", [2, 4, 6, 4, 1, 1, 3]),
            toy_arch_split_rf([6, 12, 8], 256),
        ),
        Fixture::new(
            "study_pointwise",
            layer("study_pointwise", [1, 16, 4, 4, 2, 1, 1]),
            toy_arch_three_level(8, 128),
        ),
        Fixture::new(
            "study_batch",
            layer("study_batch", [2, 8, 4, 4, 4, 1, 1]),
            toy_arch_split_rf([4, 8, 4], 128),
        ),
        Fixture::new(
            "study_eyeriss",
            layer("study_eyeriss", [1, 6, 6, 6, 1, 3, 1]),
            eyeriss.clone(),
        ),
        Fixture::new(
            "study_eyeriss_spatial",
            layer("study_eyeriss_spatial", [1, 64, 8, 4, 4, 3, 1]),
            eyeriss,
        )
        .with_spatial(eyeriss_spatial()),
    ]
}

/// A realistic layer whose space is far beyond brute force (D >= 10^6):
/// an AlexNet conv2-like shape (one group) on the Eyeriss-like array.
pub fn complex_fixture() -> Fixture {
    Fixture::new(
        "alexnet_conv2_like",
        layer("alexnet_conv2_like", [1, 256, 48, 27, 27, 5, 5]),
        ArchSpec::eyeriss_like(),
    )
    .with_spatial(eyeriss_spatial())
}

/// A random temporal-only case within the oracle's preconditions: a layer
/// with at most `max_macs` MACs, a 2- or 3-level toy hierarchy and a
/// uniformly random ordering of its loops.
pub fn random_oracle_case<R: Rng + ?Sized>(
    rng: &mut R,
    max_macs: u64,
) -> (LayerSpec, ArchSpec, TemporalMapping) {
    const CHOICES: [u64; 7] = [1, 2, 3, 4, 5, 6, 8];
    let dims = loop {
        let d: [u64; 7] = std::array::from_fn(|i| {
            // Batch and filter dims stay small.
            let hi = if i == 0 || i >= 5 { 4 } else { CHOICES.len() };
            CHOICES[rng.random_range(0..hi)]
        });
        if d.iter().product::<u64>() <= max_macs {
            break d;
        }
    };
    let stride = rng.random_range(1..=2);
    let layer = LayerSpec::new("random", dims).with_strides(stride, stride);
    let arch = match rng.random_range(0..3) {
        0 => toy_arch_two_level(rng.random_range(1..=32)),
        1 => {
            let rf = rng.random_range(1..=16);
            toy_arch_three_level(rf, rf * rng.random_range(1..=16))
        }
        _ => {
            let rf: [u64; 3] = std::array::from_fn(|_| rng.random_range(1..=12));
            toy_arch_split_rf(rf, rng.random_range(12..=200))
        }
    };
    let mode = if rng.random_bool(0.5) {
        AllocationMode::Uneven
    } else {
        AllocationMode::Even
    };
    let loops: Vec<Loop> = lpf_decompose(&layer, &SpatialUnrolling::none())
        .expect("valid layer")
        .into_iter()
        .map(Loop::from)
        .collect();
    let ordering = random_ordering(&loops, rng);
    let mapping = allocate(&ordering, &layer, &arch, &SpatialUnrolling::none(), mode)
        .expect("unit tiles fit");
    (layer, arch, mapping)
}

/// `n` random oracle cases from `seed`.
pub fn random_oracle_cases(n: usize, seed: u64) -> Vec<(LayerSpec, ArchSpec, TemporalMapping)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| random_oracle_case(&mut rng, 10_000))
        .collect()
}

/// Per-fixture outcome of [`optimality_study`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub fixture: String,
    pub distinct_orderings: u64,
    pub optimum: f64,
    pub runs: u32,
    pub hits: u32,
    pub mean_excess: f64,
    pub max_excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOutcome {
    pub hit_rate: f64,
    pub mean_excess: f64,
    pub rows: Vec<StudyRow>,
}

impl StudyOutcome {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "fixture,distinct_orderings,optimum,runs,hits,hit_rate,mean_excess,max_excess\n",
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.fixture,
                r.distinct_orderings,
                r.optimum,
                r.runs,
                r.hits,
                f64::from(r.hits) / f64::from(r.runs),
                r.mean_excess,
                r.max_excess
            ));
        }
        s
    }
}

/// Relative tolerance under which an annealing result counts as optimal.
pub const HIT_TOLERANCE: f64 = crate::engines::TIE_TOLERANCE;

/// Runs annealing `runs` times per fixture (seeds `base_seed + r`) with
/// `params` and compares against the brute-force optimum.
pub fn optimality_study(
    fixtures: &[Fixture],
    runs: u32,
    base_seed: u64,
    params: &SaParams,
) -> Result<StudyOutcome> {
    if runs == 0 {
        return Err(Error::InvalidParams("runs must be >= 1".into()));
    }
    let mut rows = Vec::with_capacity(fixtures.len());
    let mut all_excess = Vec::new();
    for f in fixtures {
        let d = count_distinct_orderings(&f.loops()?);
        let distinct_orderings = match u64::try_from(&d) {
            Ok(v) if v <= BRUTE_FORCE_LIMIT => v,
            _ => {
                return Err(Error::SpaceTooLarge {
                    count: d.to_string(),
                    cap: BRUTE_FORCE_LIMIT,
                })
            }
        };
        let optimum = match f.expected.as_ref().and_then(|e| e.optimal_objective) {
            Some(v) => v,
            None => brute_force_best(&f.layer, &f.arch, &f.spatial, f.mode)?.1,
        };
        let problem = f.problem()?;
        let objectives: Vec<f64> = (0..runs)
            .into_par_iter()
            .map(|r| {
                let p = SaParams {
                    seed: base_seed.wrapping_add(u64::from(r)),
                    ..*params
                };
                sa_search(&problem, &p).map(|res| res.best_objective)
            })
            .collect::<Result<_>>()?;
        let excess: Vec<f64> = objectives.iter().map(|v| v / optimum - 1.0).collect();
        let hits = excess.iter().filter(|&&e| e <= HIT_TOLERANCE).count() as u32;
        rows.push(StudyRow {
            fixture: f.name.clone(),
            distinct_orderings,
            optimum,
            runs,
            hits,
            mean_excess: excess.iter().sum::<f64>() / f64::from(runs),
            max_excess: excess.iter().copied().fold(0.0, f64::max),
        });
        all_excess.extend(excess);
    }
    let total = all_excess.len() as f64;
    let hits: u32 = rows.iter().map(|r| r.hits).sum();
    Ok(StudyOutcome {
        hit_rate: if total > 0.0 {
            f64::from(hits) / total
        } else {
            1.0
        },
        mean_excess: if total > 0.0 {
            all_excess.iter().sum::<f64>() / total
        } else {
            0.0
        },
        rows,
    })
}
