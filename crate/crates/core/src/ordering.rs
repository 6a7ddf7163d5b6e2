//! The loop-ordering search space: distinct multiset permutations of the
//! layer's loops and the swap neighbourhood used by annealing.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::Loop;

/// Loops from innermost (index 0) to outermost.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LoopOrdering {
    pub loops: Vec<Loop>,
}

impl LoopOrdering {
    pub fn new(loops: Vec<Loop>) -> Self {
        LoopOrdering { loops }
    }

    /// The loops sorted into canonical order.
    pub fn canonical(loops: &[Loop]) -> Self {
        let mut loops = loops.to_vec();
        loops.sort();
        LoopOrdering { loops }
    }

    pub fn len(&self) -> usize {
        self.loops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loops.is_empty()
    }

    /// True when `self` is a rearrangement of `loops`.
    pub fn is_permutation_of(&self, loops: &[Loop]) -> bool {
        let mut a = self.loops.clone();
        let mut b = loops.to_vec();
        a.sort();
        b.sort();
        a == b
    }
}

fn multiplicities(loops: &[Loop]) -> Vec<u64> {
    let mut counts: BTreeMap<Loop, u64> = BTreeMap::new();
    for l in loops {
        *counts.entry(*l).or_default() += 1;
    }
    counts.into_values().collect()
}

/// n! / prod(k_i!) over the multiplicities k_i of identical loops.
pub fn count_distinct_orderings(loops: &[Loop]) -> BigUint {
    let factorial = |n: u64| (1..=n).fold(BigUint::from(1u32), |acc, i| acc * i);
    let denom = multiplicities(loops)
        .into_iter()
        .fold(BigUint::from(1u32), |acc, k| acc * factorial(k));
    factorial(loops.len() as u64) / denom
}

/// Multinomial coefficient for the given counts, or `None` on overflow.
fn multinomial(counts: &[u64]) -> Option<u128> {
    let mut total = 0u128;
    let mut acc = 1u128;
    for &k in counts {
        // Multiply by binomial(total + k, k), built incrementally so every
        // intermediate is itself a binomial coefficient.
        for i in 1..=u128::from(k) {
            total += 1;
            acc = acc.checked_mul(total)? / i;
        }
    }
    Some(acc)
}

/// Lexicographic stream of distinct permutations.
#[derive(Debug, Clone)]
pub struct Orderings {
    current: Vec<Loop>,
    remaining: Option<u128>,
    started: bool,
    done: bool,
}

impl Orderings {
    /// Starts at the permutation of lexicographic rank `rank` and yields at
    /// most `limit` items. Returns `None` if the rank is out of range.
    pub(crate) fn from_rank(loops: &[Loop], rank: u128, limit: Option<u128>) -> Option<Self> {
        let mut pool: BTreeMap<Loop, u64> = BTreeMap::new();
        for l in loops {
            *pool.entry(*l).or_default() += 1;
        }
        let mut rank = rank;
        let mut current = Vec::with_capacity(loops.len());
        for _ in 0..loops.len() {
            let keys: Vec<Loop> = pool.keys().copied().collect();
            let mut chosen = None;
            for key in keys {
                *pool.get_mut(&key).unwrap() -= 1;
                let counts: Vec<u64> = pool.values().copied().collect();
                let block = multinomial(&counts)?;
                if rank < block {
                    chosen = Some(key);
                    break;
                }
                rank -= block;
                *pool.get_mut(&key).unwrap() += 1;
            }
            let key = chosen?;
            if pool[&key] == 0 {
                pool.remove(&key);
            }
            current.push(key);
        }
        if rank != 0 {
            return None;
        }
        Some(Orderings {
            current,
            remaining: limit,
            started: false,
            done: false,
        })
    }

    /// Standard next-permutation step; false when already the last one.
    fn advance(&mut self) -> bool {
        let v = &mut self.current;
        if v.len() < 2 {
            return false;
        }
        let mut i = v.len() - 1;
        while i > 0 && v[i - 1] >= v[i] {
            i -= 1;
        }
        if i == 0 {
            return false;
        }
        let mut j = v.len() - 1;
        while v[j] <= v[i - 1] {
            j -= 1;
        }
        v.swap(i - 1, j);
        v[i..].reverse();
        true
    }
}

impl Iterator for Orderings {
    type Item = LoopOrdering;

    fn next(&mut self) -> Option<LoopOrdering> {
        if self.done || self.remaining == Some(0) {
            return None;
        }
        if self.started {
            if !self.advance() {
                self.done = true;
                return None;
            }
        } else {
            self.started = true;
        }
        if let Some(r) = self.remaining.as_mut() {
            *r -= 1;
        }
        Some(LoopOrdering::new(self.current.clone()))
    }
}

/// Every distinct ordering of `loops` exactly once, in lexicographic order
/// of the canonical loop order.
pub fn generate_orderings(loops: &[Loop]) -> Orderings {
    let mut current = loops.to_vec();
    current.sort();
    Orderings {
        current,
        remaining: None,
        started: false,
        done: false,
    }
}

/// Copy of `o` with entries `i` and `j` exchanged.
pub fn swap_neighbor(o: &LoopOrdering, i: usize, j: usize) -> Result<LoopOrdering> {
    let len = o.len();
    for idx in [i, j] {
        if idx >= len {
            return Err(Error::IndexOutOfRange { index: idx, len });
        }
    }
    if i == j {
        return Err(Error::SameIndex(i));
    }
    let mut out = o.clone();
    out.loops.swap(i, j);
    Ok(out)
}

/// Draws `i` uniformly from `[0, n)` and `j` uniformly from `[0, n) \ {i}`.
pub fn sample_swap_indices<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<(usize, usize)> {
    if n < 2 {
        return Err(Error::TooShort(n));
    }
    let i = rng.random_range(0..n);
    let j = rng.random_range(0..n - 1);
    let j = if j >= i { j + 1 } else { j };
    Ok((i, j))
}

pub fn sample_swap<R: Rng + ?Sized>(
    o: &LoopOrdering,
    rng: &mut R,
) -> Result<(LoopOrdering, usize, usize)> {
    let (i, j) = sample_swap_indices(o.len(), rng)?;
    Ok((swap_neighbor(o, i, j)?, i, j))
}

/// Uniform shuffle of `loops`.
pub fn random_ordering<R: Rng + ?Sized>(loops: &[Loop], rng: &mut R) -> LoopOrdering {
    let mut v = loops.to_vec();
    v.shuffle(rng);
    LoopOrdering::new(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::Dim;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn lp(d: Dim, s: u64) -> Loop {
        Loop::new(d, s)
    }

    fn unique(n: usize) -> Vec<Loop> {
        const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];
        (0..n)
            .map(|i| lp(Dim::ALL[i % 7], PRIMES[i / 7 + i % 3]))
            .collect()
    }

    /// Heap's algorithm over positions, deduplicated.
    fn brute_force_distinct(loops: &[Loop]) -> HashSet<Vec<Loop>> {
        fn heap(k: usize, v: &mut Vec<Loop>, out: &mut HashSet<Vec<Loop>>) {
            if k <= 1 {
                out.insert(v.clone());
                return;
            }
            for i in 0..k {
                heap(k - 1, v, out);
                if k.is_multiple_of(2) {
                    v.swap(i, k - 1);
                } else {
                    v.swap(0, k - 1);
                }
            }
        }
        let mut out = HashSet::new();
        let mut v = loops.to_vec();
        heap(v.len(), &mut v, &mut out);
        out
    }

    #[test]
    fn counts() {
        let twenty = unique(20);
        assert_eq!(twenty.iter().collect::<HashSet<_>>().len(), 20);
        assert_eq!(
            count_distinct_orderings(&twenty).to_string(),
            "2432902008176640000"
        );
        let k2 = lp(Dim::K, 2);
        let c3 = lp(Dim::C, 3);
        let c2 = lp(Dim::C, 2);
        assert_eq!(count_distinct_orderings(&[k2, k2, c3]), BigUint::from(3u32));
        assert_eq!(
            count_distinct_orderings(&[k2, k2, c2, c2]),
            BigUint::from(6u32)
        );
        assert_eq!(brute_force_distinct(&[k2, k2, c2, c2]).len(), 6);
        assert_eq!(count_distinct_orderings(&[]), BigUint::from(1u32));
    }

    #[test]
    fn generation_order() {
        let k2 = lp(Dim::K, 2);
        let c3 = lp(Dim::C, 3);
        let all: Vec<Vec<Loop>> = generate_orderings(&[c3, k2, k2]).map(|o| o.loops).collect();
        assert_eq!(
            all,
            vec![vec![k2, k2, c3], vec![k2, c3, k2], vec![c3, k2, k2]]
        );
        assert_eq!(generate_orderings(&[k2]).count(), 1);
        assert_eq!(generate_orderings(&[]).count(), 1);
        let six: HashSet<LoopOrdering> = generate_orderings(&unique(6)).collect();
        assert_eq!(six.len(), 720);
    }

    #[test]
    fn rank_restart_matches_stream() {
        let k2 = lp(Dim::K, 2);
        let loops = vec![k2, k2, lp(Dim::C, 2), lp(Dim::C, 3), lp(Dim::OX, 5), k2];
        let all: Vec<LoopOrdering> = generate_orderings(&loops).collect();
        for start in [0usize, 1, 7, 59, all.len() - 1] {
            let tail: Vec<LoopOrdering> = Orderings::from_rank(&loops, start as u128, Some(5))
                .unwrap()
                .collect();
            let expect: Vec<LoopOrdering> = all.iter().skip(start).take(5).cloned().collect();
            assert_eq!(tail, expect);
        }
        assert!(Orderings::from_rank(&loops, all.len() as u128, None).is_none());
    }

    #[test]
    fn swaps() {
        let (x, y, z) = (lp(Dim::K, 2), lp(Dim::C, 3), lp(Dim::OX, 5));
        let o = LoopOrdering::new(vec![x, y, z]);
        let s = swap_neighbor(&o, 0, 2).unwrap();
        assert_eq!(s.loops, vec![z, y, x]);
        assert_eq!(o.loops, vec![x, y, z]);
        assert_eq!(swap_neighbor(&s, 0, 2).unwrap(), o);
        assert_eq!(swap_neighbor(&o, 1, 1), Err(Error::SameIndex(1)));
        assert_eq!(
            swap_neighbor(&o, 0, 3),
            Err(Error::IndexOutOfRange { index: 3, len: 3 })
        );
    }

    #[test]
    fn every_permutation_within_n_minus_1_swaps() {
        // Breadth-first search over the swap graph.
        for n in 1..=5 {
            let start = LoopOrdering::new(unique(n));
            let mut dist = std::collections::HashMap::from([(start.clone(), 0usize)]);
            let mut frontier = vec![start];
            while let Some(o) = frontier.pop() {
                let d = dist[&o];
                for i in 0..n {
                    for j in i + 1..n {
                        let nb = swap_neighbor(&o, i, j).unwrap();
                        if dist.get(&nb).is_none_or(|&old| old > d + 1) {
                            dist.insert(nb.clone(), d + 1);
                            frontier.push(nb);
                        }
                    }
                }
            }
            assert_eq!(dist.len(), (1..=n).product::<usize>());
            assert!(dist.values().all(|&d| d < n.max(1)));
        }
    }

    #[test]
    fn neighbourhood_size() {
        for n in 2..=6 {
            let o = LoopOrdering::new(unique(n));
            let nbs: HashSet<LoopOrdering> = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| swap_neighbor(&o, i, j).unwrap())
                .collect();
            assert_eq!(nbs.len(), n * (n - 1) / 2);
        }
        let k2 = lp(Dim::K, 2);
        let o = LoopOrdering::new(vec![k2, k2, lp(Dim::C, 3)]);
        let nbs: HashSet<LoopOrdering> = [(0, 1), (0, 2), (1, 2)]
            .iter()
            .map(|&(i, j)| swap_neighbor(&o, i, j).unwrap())
            .filter(|nb| nb != &o)
            .collect();
        assert_eq!(nbs.len(), 2);
    }

    #[test]
    fn sampling_is_deterministic() {
        let o = LoopOrdering::new(unique(3));
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| sample_swap(&o, &mut rng).unwrap())
                .map(|(_, i, j)| (i, j))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let (_, i, j) = sample_swap(&LoopOrdering::new(unique(2)), &mut rng).unwrap();
            assert_eq!((i.min(j), i.max(j)), (0, 1));
        }
        assert_eq!(
            sample_swap(&LoopOrdering::new(unique(1)), &mut rng).unwrap_err(),
            Error::TooShort(1)
        );
    }

    /// Each of `k` categories should sit within 3 sigma of n/k.
    fn assert_uniform(counts: &[u64]) {
        let n: u64 = counts.iter().sum();
        let p = 1.0 / counts.len() as f64;
        let mean = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for &c in counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn swap_pairs_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = BTreeMap::new();
        for _ in 0..100_000 {
            let (i, j) = sample_swap_indices(4, &mut rng).unwrap();
            *counts.entry((i.min(j), i.max(j))).or_insert(0u64) += 1;
        }
        assert_eq!(counts.len(), 6);
        assert_uniform(&counts.into_values().collect::<Vec<_>>());
    }

    #[test]
    fn shuffles_uniform() {
        let loops = unique(3);
        assert!(random_ordering(&[], &mut ChaCha8Rng::seed_from_u64(1)).is_empty());
        let a = random_ordering(&unique(7), &mut ChaCha8Rng::seed_from_u64(9));
        let b = random_ordering(&unique(7), &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut counts = BTreeMap::new();
        for _ in 0..100_000 {
            *counts
                .entry(random_ordering(&loops, &mut rng))
                .or_insert(0u64) += 1;
        }
        assert_eq!(counts.len(), 6);
        assert_uniform(&counts.into_values().collect::<Vec<_>>());
    }

    fn arb_multiset() -> impl Strategy<Value = Vec<Loop>> {
        prop::collection::vec((0usize..3, prop::sample::select(vec![2u64, 3])), 0..=7)
            .prop_map(|v| v.into_iter().map(|(d, s)| lp(Dim::ALL[d], s)).collect())
    }

    proptest! {
        #[test]
        fn count_matches_generation(loops in arb_multiset()) {
            let generated: Vec<LoopOrdering> = generate_orderings(&loops).collect();
            let set: HashSet<&LoopOrdering> = generated.iter().collect();
            prop_assert_eq!(set.len(), generated.len());
            prop_assert_eq!(BigUint::from(generated.len()), count_distinct_orderings(&loops));
            prop_assert!(generated.windows(2).all(|w| w[0].loops < w[1].loops));
        }

        #[test]
        fn swap_preserves_multiset(loops in arb_multiset(), i in 0usize..7, j in 0usize..7) {
            let o = LoopOrdering::new(loops.clone());
            if let Ok(s) = swap_neighbor(&o, i, j) {
                prop_assert!(s.is_permutation_of(&loops));
            }
        }
    }
}
