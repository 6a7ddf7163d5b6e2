//! Bottom-up memory allocation: infers, for one loop ordering, which memory
//! level holds each operand's data for every loop.

use serde::{Deserialize, Serialize};

use crate::archspec::{spatial_scale, ArchSpec, Capacity, MemoryLevel, SpatialUnrolling};
use crate::error::{Error, Result};
use crate::ordering::LoopOrdering;
use crate::workload::{tile_footprint, DimSizes, LayerSpec, OperandKind, PerOperand};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocationMode {
    /// All operands are promoted to the next level at the same loop.
    Even,
    /// Each operand is promoted independently.
    #[default]
    Uneven,
}

/// A loop ordering plus the per-operand level boundaries.
///
/// `boundaries[X][j]` is the number of innermost loops held at or below the
/// `j`-th level of X's serving chain; loops `[boundaries[X][j-1],
/// boundaries[X][j])` live in chain level `j`. One entry per chain
/// transition, so an operand served by three levels has two entries.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TemporalMapping {
    pub ordering: LoopOrdering,
    pub boundaries: PerOperand<Vec<usize>>,
    pub mode: AllocationMode,
}

impl TemporalMapping {
    /// Chain position (0 = lowest serving level) holding loop `loop_idx` for `op`.
    pub fn chain_level_of(&self, op: OperandKind, loop_idx: usize) -> usize {
        self.boundaries[op]
            .iter()
            .take_while(|&&b| b <= loop_idx)
            .count()
    }
}

/// Words of `op` a single level can hold. Shared levels keep one tile per
/// group of PEs that need distinct data.
fn level_words(op: OperandKind, level: &MemoryLevel, layer: &LayerSpec, replicas: u64) -> u64 {
    match level.capacity_bits {
        Capacity::Unbounded => u64::MAX,
        Capacity::Bits(cap) => {
            let copies = if level.shared { replicas } else { 1 };
            cap / (u64::from(layer.word_bits[op]) * copies)
        }
    }
}

/// Largest tile (in words) each chain position can take, given that a tile
/// kept at one level also passes through every level above it.
fn effective_capacities(
    op: OperandKind,
    chain: &[usize],
    layer: &LayerSpec,
    arch: &ArchSpec,
    spatial: &SpatialUnrolling,
) -> Vec<u64> {
    let (p_total, reuse) = spatial_scale(op, spatial);
    let mut out: Vec<u64> = chain
        .iter()
        .map(|&i| level_words(op, &arch.levels[i], layer, p_total / reuse))
        .collect();
    for pos in (0..out.len().saturating_sub(1)).rev() {
        out[pos] = out[pos].min(out[pos + 1]);
    }
    out
}

/// Infers the memory allocation for ordering `o`.
///
/// Walks loops innermost to outermost, keeping each operand at the lowest
/// level whose capacity still holds the tile of every loop so far; levels
/// never go back down. Shared levels hold the tiles of all PEs that need
/// distinct data (`p_total / reuse` copies).
pub fn allocate(
    o: &LoopOrdering,
    layer: &LayerSpec,
    arch: &ArchSpec,
    spatial: &SpatialUnrolling,
    mode: AllocationMode,
) -> Result<TemporalMapping> {
    let chains = PerOperand::from_fn(|op| arch.chain(op));
    let caps =
        PerOperand::from_fn(|op| effective_capacities(op, &chains[op], layer, arch, spatial));

    for op in OperandKind::ALL {
        if caps[op][0] < 1 {
            let (p_total, reuse) = spatial_scale(op, spatial);
            let level = chains[op]
                .iter()
                .map(|&i| &arch.levels[i])
                .find(|lv| level_words(op, lv, layer, p_total / reuse) < 1)
                .expect("some level limits the unit tile");
            return Err(Error::InfeasibleLowestLevel {
                operand: op,
                level: level.name.clone(),
            });
        }
    }

    let n = o.len();
    let mut level = PerOperand::from_fn(|_| 0usize);
    let mut assigned = PerOperand::from_fn(|_| Vec::with_capacity(n));
    let mut tile = DimSizes::ones();
    for l in &o.loops {
        tile[l.dim] *= l.size;
        let fp = PerOperand::from_fn(|op| tile_footprint(op, &tile, layer));
        let overflows = |op: OperandKind, lv: &PerOperand<usize>| fp[op] > caps[op][lv[op]];
        match mode {
            AllocationMode::Uneven => {
                for op in OperandKind::ALL {
                    while overflows(op, &level) {
                        level[op] += 1;
                    }
                }
            }
            AllocationMode::Even => {
                while OperandKind::ALL.iter().any(|&op| overflows(op, &level)) {
                    for op in OperandKind::ALL {
                        if level[op] + 1 < chains[op].len() {
                            level[op] += 1;
                        }
                    }
                }
            }
        }
        for op in OperandKind::ALL {
            assigned[op].push(level[op]);
        }
    }

    let boundaries = PerOperand::from_fn(|op| {
        (1..chains[op].len())
            .map(|j| assigned[op].iter().take_while(|&&lv| lv < j).count())
            .collect()
    });
    Ok(TemporalMapping {
        ordering: o.clone(),
        boundaries,
        mode,
    })
}

/// Groups layers with identical numeric fields, keeping first-occurrence order.
pub fn unique_layers(network: &[LayerSpec]) -> Vec<(LayerSpec, usize)> {
    let mut out: Vec<(LayerSpec, usize)> = Vec::new();
    for layer in network {
        match out
            .iter_mut()
            .find(|(l, _)| l.shape_key() == layer.shape_key())
        {
            Some((_, n)) => *n += 1,
            None => out.push((layer.clone(), 1)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{Dim, Loop};
    use proptest::prelude::*;

    fn level(name: &str, cap: Capacity, serves: &[OperandKind]) -> MemoryLevel {
        MemoryLevel {
            name: name.into(),
            capacity_bits: cap,
            read_energy: 1.0,
            write_energy: 1.0,
            serves: serves.iter().copied().collect(),
            shared: false,
        }
    }

    fn two_level(words: PerOperand<u64>) -> ArchSpec {
        use OperandKind::*;
        ArchSpec {
            name: "toy".into(),
            pe_rows: 1,
            pe_cols: 1,
            mac_energy: 1.0,
            levels: vec![
                level("rf_I", Capacity::Bits(words.input * 8), &[I]),
                level("rf_W", Capacity::Bits(words.weight * 8), &[W]),
                level("rf_O", Capacity::Bits(words.output * 8), &[O]),
                level("dram", Capacity::Unbounded, &[I, W, O]),
            ],
        }
    }

    fn byte_layer(dims: [u64; 7]) -> LayerSpec {
        let mut l = LayerSpec::new("t", dims);
        l.word_bits = PerOperand {
            input: 8,
            weight: 8,
            output: 8,
        };
        l
    }

    fn kc_ordering() -> LoopOrdering {
        LoopOrdering::new(vec![
            Loop::new(Dim::K, 2),
            Loop::new(Dim::C, 2),
            Loop::new(Dim::K, 2),
            Loop::new(Dim::C, 2),
        ])
    }

    #[test]
    fn weight_boundary_from_cumulative_footprint() {
        // Cumulative W footprints along the ordering: 2, 4, 8, 16.
        let layer = byte_layer([1, 4, 4, 1, 1, 1, 1]);
        let arch = two_level(PerOperand {
            input: 64,
            weight: 4,
            output: 64,
        });
        let m = allocate(
            &kc_ordering(),
            &layer,
            &arch,
            &SpatialUnrolling::none(),
            AllocationMode::Uneven,
        )
        .unwrap();
        assert_eq!(m.boundaries.weight, vec![2]);
        assert_eq!(m.boundaries.input, vec![4]);
        assert_eq!(m.boundaries.output, vec![4]);
    }

    #[test]
    fn even_mode_takes_earliest_overflow() {
        // O footprints 2, 2, 4, 4 overflow capacity 2 at index 2;
        // W footprints 2, 4, 8, 16 overflow capacity 8 at index 3.
        let layer = byte_layer([1, 4, 4, 1, 1, 1, 1]);
        let arch = two_level(PerOperand {
            input: 64,
            weight: 8,
            output: 2,
        });
        let un = allocate(
            &kc_ordering(),
            &layer,
            &arch,
            &SpatialUnrolling::none(),
            AllocationMode::Uneven,
        )
        .unwrap();
        assert_eq!(un.boundaries.output, vec![2]);
        assert_eq!(un.boundaries.weight, vec![3]);
        let ev = allocate(
            &kc_ordering(),
            &layer,
            &arch,
            &SpatialUnrolling::none(),
            AllocationMode::Even,
        )
        .unwrap();
        assert_eq!(
            ev.boundaries,
            PerOperand {
                input: vec![2],
                weight: vec![2],
                output: vec![2]
            }
        );
    }

    #[test]
    fn empty_ordering() {
        let layer = byte_layer([1; 7]);
        let arch = two_level(PerOperand {
            input: 1,
            weight: 1,
            output: 1,
        });
        let m = allocate(
            &LoopOrdering::new(vec![]),
            &layer,
            &arch,
            &SpatialUnrolling::none(),
            AllocationMode::Uneven,
        )
        .unwrap();
        assert!(m.boundaries.iter().all(|(_, b)| b == &vec![0]));
    }

    #[test]
    fn unit_tile_must_fit() {
        let layer = byte_layer([1, 2, 1, 1, 1, 1, 1]);
        let arch = two_level(PerOperand {
            input: 1,
            weight: 0,
            output: 1,
        });
        let err = allocate(
            &LoopOrdering::new(vec![]),
            &layer,
            &arch,
            &SpatialUnrolling::none(),
            AllocationMode::Uneven,
        )
        .unwrap_err();
        assert_eq!(
            err,
            Error::InfeasibleLowestLevel {
                operand: OperandKind::W,
                level: "rf_W".into()
            }
        );
    }

    #[test]
    fn eyeriss_weights_bypass_buffer() {
        let layer = LayerSpec::new("conv", [1, 16, 8, 4, 4, 3, 3]);
        let arch = ArchSpec::eyeriss_like();
        let loops: Vec<Loop> = crate::workload::lpf_decompose(&layer, &SpatialUnrolling::none())
            .unwrap()
            .into_iter()
            .map(Loop::from)
            .collect();
        let m = allocate(
            &LoopOrdering::new(loops),
            &layer,
            &arch,
            &SpatialUnrolling::none(),
            AllocationMode::Uneven,
        )
        .unwrap();
        assert_eq!(m.boundaries.weight.len(), 1);
        assert_eq!(m.boundaries.input.len(), 2);
    }

    #[test]
    fn unique_layer_groups() {
        let l1 = LayerSpec::new("a", [1, 4, 4, 2, 2, 1, 1]);
        let mut l1b = l1.clone();
        l1b.name = "a_again".into();
        let l2 = LayerSpec::new("b", [1, 8, 4, 2, 2, 1, 1]);
        let groups = unique_layers(&[l1.clone(), l1b, l2.clone()]);
        assert_eq!(groups, vec![(l1, 2), (l2, 1)]);
        assert!(unique_layers(&[]).is_empty());
    }

    fn check_capacity(
        m: &TemporalMapping,
        layer: &LayerSpec,
        arch: &ArchSpec,
        spatial: &SpatialUnrolling,
    ) {
        for op in OperandKind::ALL {
            let chain = arch.chain(op);
            let (p, r) = spatial_scale(op, spatial);
            let n = m.ordering.len();
            for (pos, &li) in chain.iter().enumerate() {
                let upper = m.boundaries[op].get(pos).copied().unwrap_or(n);
                let lv = &arch.levels[li];
                if let Capacity::Bits(cap) = lv.capacity_bits {
                    let tile = DimSizes::from_loops(&m.ordering.loops[..upper]);
                    let copies = if lv.shared { p / r } else { 1 };
                    let bits =
                        tile_footprint(op, &tile, layer) * copies * u64::from(layer.word_bits[op]);
                    assert!(bits <= cap, "{op} exceeds {} ({bits} > {cap})", lv.name);
                }
            }
            assert!(m.boundaries[op].windows(2).all(|w| w[0] <= w[1]));
        }
    }

    fn arb_case() -> impl Strategy<Value = (LayerSpec, ArchSpec, Vec<Loop>)> {
        let dims = prop::array::uniform7(prop::sample::select(vec![1u64, 2, 3, 4, 6]));
        let caps = prop::array::uniform4(1u64..40);
        (dims, caps, any::<u64>()).prop_map(|(d, c, seed)| {
            use OperandKind::*;
            let layer = byte_layer(d);
            let mut arch = two_level(PerOperand {
                input: c[0],
                weight: c[1],
                output: c[2],
            });
            arch.levels.insert(
                3,
                MemoryLevel {
                    shared: true,
                    ..level("buf", Capacity::Bits(c[3] * 8 * 4), &[I, O])
                },
            );
            let mut loops: Vec<Loop> =
                crate::workload::lpf_decompose(&layer, &SpatialUnrolling::none())
                    .unwrap()
                    .into_iter()
                    .map(Loop::from)
                    .collect();
            let mut s = seed;
            for i in (1..loops.len()).rev() {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                loops.swap(i, (s >> 33) as usize % (i + 1));
            }
            (layer, arch, loops)
        })
    }

    proptest! {
        #[test]
        fn capacity_and_ordering_invariants((layer, arch, loops) in arb_case()) {
            let spatial = SpatialUnrolling::none();
            let o = LoopOrdering::new(loops);
            let un = allocate(&o, &layer, &arch, &spatial, AllocationMode::Uneven).unwrap();
            let ev = allocate(&o, &layer, &arch, &spatial, AllocationMode::Even).unwrap();
            check_capacity(&un, &layer, &arch, &spatial);
            check_capacity(&ev, &layer, &arch, &spatial);
            prop_assert_eq!(&un, &allocate(&o, &layer, &arch, &spatial, AllocationMode::Uneven).unwrap());
            for op in OperandKind::ALL {
                for (e, u) in ev.boundaries[op].iter().zip(&un.boundaries[op]) {
                    prop_assert!(e <= u);
                }
            }
            // Even mode: every operand's first transition is at the same loop.
            let firsts: Vec<usize> = ev.boundaries.iter().map(|(_, b)| b[0]).collect();
            prop_assert!(firsts.iter().all(|&f| f == firsts[0]));
        }

        #[test]
        fn permuting_within_segments_keeps_boundaries((layer, arch, loops) in arb_case(), seed in any::<u64>()) {
            let spatial = SpatialUnrolling::none();
            let o = LoopOrdering::new(loops);
            let m = allocate(&o, &layer, &arch, &spatial, AllocationMode::Uneven).unwrap();
            // Segment cut points shared by every operand.
            let promoted: Vec<usize> = m.boundaries.iter().flat_map(|(_, b)| b.clone()).collect();
            let mut cuts = promoted.clone();
            cuts.push(0);
            cuts.push(o.len());
            cuts.sort();
            cuts.dedup();
            let mut permuted = o.clone();
            let mut s = seed;
            // The first loop of an upper segment is the one that triggered the
            // promotion, so it stays put.
            for w in cuts.windows(2) {
                let from = if promoted.contains(&w[0]) { w[0] + 1 } else { w[0] };
                let seg = &mut permuted.loops[from.min(w[1])..w[1]];
                for i in (1..seg.len()).rev() {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    seg.swap(i, (s >> 33) as usize % (i + 1));
                }
            }
            let m2 = allocate(&permuted, &layer, &arch, &spatial, AllocationMode::Uneven).unwrap();
            prop_assert_eq!(m.boundaries, m2.boundaries);
        }
    }
}
