//! The two search engines and the runtime-based choice between them.
//!
//! Exhaustive search walks every distinct loop ordering and is exact; its
//! runtime is proportional to the number of distinct orderings. Simulated
//! annealing costs a fixed number of evaluations regardless of the layer.

use std::time::{Duration, Instant};

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocator::{allocate, AllocationMode, TemporalMapping};
use crate::archspec::{ArchSpec, SpatialUnrolling};
use crate::costmodel::{evaluate, objective, CostBreakdown, Metric};
use crate::error::{Error, Result};
use crate::ordering::{
    count_distinct_orderings, random_ordering, sample_swap, LoopOrdering, Orderings,
};
use crate::workload::{limit_lpfs, lpf_decompose, LayerSpec, Loop};

pub const DEFAULT_HARD_CAP: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Exhaustive,
    Sa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineChoice {
    #[default]
    Auto,
    Sa,
    Exhaustive,
}

/// Where an annealing chain starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StartPoint {
    #[default]
    Random,
    Canonical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaParams {
    pub iterations: u64,
    pub rho: f64,
    pub t0: f64,
    pub seed: u64,
    pub restarts: u32,
    pub start: StartPoint,
}

impl Default for SaParams {
    fn default() -> Self {
        SaParams {
            iterations: 1000,
            rho: 0.999,
            t0: 0.05,
            seed: 0,
            restarts: 1,
            start: StartPoint::Random,
        }
    }
}

impl SaParams {
    pub fn with_seed(seed: u64) -> Self {
        SaParams {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidParams("iterations must be >= 1".into()));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidParams(format!(
                "rho must be in (0, 1), got {}",
                self.rho
            )));
        }
        if !(self.t0 > 0.0 && self.t0.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "t0 must be positive, got {}",
                self.t0
            )));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidParams("restarts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Threshold knobs for the engine choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    /// Exhaustive is chosen while its estimated time is within `kappa` times
    /// the annealing time.
    pub kappa: f64,
    /// Largest space exhaustive search will walk.
    pub hard_cap: u64,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy {
            kappa: 1.0,
            hard_cap: DEFAULT_HARD_CAP,
        }
    }
}

/// One evaluated candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated {
    pub mapping: TemporalMapping,
    pub cost: CostBreakdown,
    pub objective: f64,
}

/// A layer bound to an accelerator: everything an engine needs to turn an
/// ordering into an objective value.
#[derive(Debug, Clone)]
pub struct SearchProblem {
    pub layer: LayerSpec,
    pub arch: ArchSpec,
    pub spatial: SpatialUnrolling,
    pub mode: AllocationMode,
    pub metric: Metric,
    loops: Vec<Loop>,
}

impl SearchProblem {
    pub fn new(
        layer: LayerSpec,
        arch: ArchSpec,
        spatial: SpatialUnrolling,
        mode: AllocationMode,
        lpf_limit: Option<usize>,
    ) -> Result<Self> {
        layer.validate()?;
        arch.ensure_valid()?;
        spatial.validate(&arch)?;
        let lpfs: Vec<Loop> = lpf_decompose(&layer, &spatial)?
            .into_iter()
            .map(Loop::from)
            .collect();
        let loops = match lpf_limit {
            Some(n) => limit_lpfs(&lpfs, n),
            None => lpfs,
        };
        Ok(SearchProblem {
            layer,
            arch,
            spatial,
            mode,
            metric: Metric::Energy,
            loops,
        })
    }

    /// The loops being ordered (prime factors, possibly merged).
    pub fn loops(&self) -> &[Loop] {
        &self.loops
    }

    pub fn distinct_orderings(&self) -> BigUint {
        count_distinct_orderings(&self.loops)
    }

    /// Same problem on a different accelerator description.
    pub fn with_arch(&self, arch: ArchSpec) -> Result<Self> {
        arch.ensure_valid()?;
        Ok(SearchProblem {
            arch,
            ..self.clone()
        })
    }

    pub fn evaluate(&self, o: &LoopOrdering) -> Result<Evaluated> {
        let mapping = allocate(o, &self.layer, &self.arch, &self.spatial, self.mode)?;
        let cost = evaluate(&mapping, &self.layer, &self.arch, &self.spatial)?;
        let objective = objective(&cost, self.metric)?;
        Ok(Evaluated {
            mapping,
            cost,
            objective,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub iteration: u64,
    pub temperature: f64,
    /// Swapped positions.
    pub swap: (usize, usize),
    pub objective: f64,
    pub accepted: bool,
}

/// Everything one annealing chain visited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub chain: u32,
    pub seed: u64,
    pub initial_objective: f64,
    pub steps: Vec<TraceStep>,
}

impl ChainTrace {
    pub fn min_objective(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.objective)
            .fold(self.initial_objective, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best_mapping: TemporalMapping,
    pub best_cost: CostBreakdown,
    pub best_objective: f64,
    pub engine_used: EngineKind,
    pub evaluations: u64,
    pub wall_time: Duration,
    pub trace: Option<Vec<ChainTrace>>,
}

/// Metropolis acceptance on the cost ratio: `min(1, exp((v / v_new - 1) / t))`.
pub fn acceptance_probability(v: f64, v_new: f64, t: f64) -> Result<f64> {
    if !(v > 0.0 && v_new > 0.0 && t > 0.0) {
        return Err(Error::NonPositiveInput { v, v_new, t });
    }
    Ok(((v / v_new - 1.0) / t).exp().min(1.0))
}

/// Objectives within this relative distance count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// True when `candidate` beats `incumbent` by more than the tie tolerance.
/// Energies that are mathematically equal can round differently once the
/// coefficients are rescaled; treating them as ties keeps the first one
/// found regardless of scale.
pub fn improves(candidate: f64, incumbent: f64) -> bool {
    incumbent - candidate > TIE_TOLERANCE * incumbent.abs()
}

pub fn cooling_step(t: f64, rho: f64) -> f64 {
    rho * t
}

fn chain_seed(seed: u64, chain: u32) -> u64 {
    seed.wrapping_add(u64::from(chain))
}

fn run_chain(
    problem: &SearchProblem,
    params: &SaParams,
    chain: u32,
) -> Result<(Evaluated, ChainTrace)> {
    let seed = chain_seed(params.seed, chain);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = match params.start {
        StartPoint::Random => random_ordering(problem.loops(), &mut rng),
        StartPoint::Canonical => LoopOrdering::canonical(problem.loops()),
    };
    let mut current = problem.evaluate(&start)?;
    let mut best = current.clone();
    let mut trace = ChainTrace {
        chain,
        seed,
        initial_objective: current.objective,
        steps: Vec::with_capacity(params.iterations as usize),
    };
    let mut t = params.t0;
    for iteration in 0..params.iterations {
        let (candidate, i, j) = sample_swap(&current.mapping.ordering, &mut rng)?;
        let cand = problem.evaluate(&candidate)?;
        let p = acceptance_probability(current.objective, cand.objective, t)?;
        let u: f64 = rng.random();
        let accepted = u < p;
        trace.steps.push(TraceStep {
            iteration,
            temperature: t,
            swap: (i, j),
            objective: cand.objective,
            accepted,
        });
        if improves(cand.objective, best.objective) {
            best = cand.clone();
        }
        if accepted {
            current = cand;
        }
        t = cooling_step(t, params.rho);
    }
    Ok((best, trace))
}

/// Simulated annealing over the swap neighbourhood. Returns the best mapping
/// seen by any chain (ties go to the lower chain index).
pub fn sa_search(problem: &SearchProblem, params: &SaParams) -> Result<SearchResult> {
    params.validate()?;
    let started = Instant::now();
    if problem.distinct_orderings() == BigUint::from(1u32) {
        return single_ordering(problem, EngineKind::Sa, started);
    }
    let chains: Vec<(Evaluated, ChainTrace)> = (0..params.restarts)
        .into_par_iter()
        .map(|c| run_chain(problem, params, c))
        .collect::<Result<_>>()?;
    let mut best: Option<&Evaluated> = None;
    for (e, _) in &chains {
        if best.is_none_or(|b| improves(e.objective, b.objective)) {
            best = Some(e);
        }
    }
    let best = best.expect("restarts >= 1").clone();
    Ok(SearchResult {
        best_mapping: best.mapping,
        best_cost: best.cost,
        best_objective: best.objective,
        engine_used: EngineKind::Sa,
        evaluations: params.iterations * u64::from(params.restarts),
        wall_time: started.elapsed(),
        trace: Some(chains.into_iter().map(|(_, t)| t).collect()),
    })
}

fn single_ordering(
    problem: &SearchProblem,
    engine: EngineKind,
    started: Instant,
) -> Result<SearchResult> {
    let e = problem.evaluate(&LoopOrdering::canonical(problem.loops()))?;
    Ok(SearchResult {
        best_mapping: e.mapping,
        best_cost: e.cost,
        best_objective: e.objective,
        engine_used: engine,
        evaluations: 1,
        wall_time: started.elapsed(),
        trace: None,
    })
}

fn best_in_range(problem: &SearchProblem, start: u128, len: u128) -> Result<Option<Evaluated>> {
    let orderings =
        Orderings::from_rank(problem.loops(), start, Some(len)).expect("rank within the space");
    let mut best: Option<Evaluated> = None;
    for o in orderings {
        let e = problem.evaluate(&o)?;
        if best
            .as_ref()
            .is_none_or(|b| improves(e.objective, b.objective))
        {
            best = Some(e);
        }
    }
    Ok(best)
}

/// Evaluates every distinct ordering. The stream is split into rank ranges
/// searched in parallel; ties resolve to the lowest rank.
pub fn exhaustive_search(problem: &SearchProblem, hard_cap: u64) -> Result<SearchResult> {
    let started = Instant::now();
    let count = problem.distinct_orderings();
    let total = match count.to_u64() {
        Some(d) if d <= hard_cap => u128::from(d),
        _ => {
            return Err(Error::SpaceTooLarge {
                count: count.to_string(),
                cap: hard_cap,
            })
        }
    };
    let chunks = if total < 2048 {
        1
    } else {
        (rayon::current_num_threads() as u128 * 8).min(total)
    };
    let chunk_len = total.div_ceil(chunks);
    let ranges: Vec<(u128, u128)> = (0..chunks)
        .map(|c| {
            (
                c * chunk_len,
                chunk_len.min(total.saturating_sub(c * chunk_len)),
            )
        })
        .filter(|&(_, len)| len > 0)
        .collect();
    let locals: Vec<Option<Evaluated>> = ranges
        .into_par_iter()
        .map(|(s, len)| best_in_range(problem, s, len))
        .collect::<Result<_>>()?;
    let mut best: Option<Evaluated> = None;
    for e in locals.into_iter().flatten() {
        if best
            .as_ref()
            .is_none_or(|b| improves(e.objective, b.objective))
        {
            best = Some(e);
        }
    }
    let best = best.expect("space is non-empty");
    Ok(SearchResult {
        best_mapping: best.mapping,
        best_cost: best.cost,
        best_objective: best.objective,
        engine_used: EngineKind::Exhaustive,
        evaluations: total as u64,
        wall_time: started.elapsed(),
        trace: None,
    })
}

/// Estimated exhaustive search time in seconds: `tau` times the number of
/// distinct orderings.
pub fn estimate_exhaustive_time(loops: &[Loop], tau: f64) -> f64 {
    tau * count_distinct_orderings(loops)
        .to_f64()
        .unwrap_or(f64::INFINITY)
}

/// Estimated annealing time in seconds; independent of the layer.
pub fn estimate_sa_time(params: &SaParams, tau: f64) -> f64 {
    tau * params.iterations as f64 * f64::from(params.restarts)
}

/// Median wall time of one allocate + evaluate, in seconds.
pub fn calibrate_tau(problem: &SearchProblem, samples: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7a75);
    let mut times = Vec::with_capacity(samples.max(1));
    for _ in 0..samples.max(1) {
        let o = random_ordering(problem.loops(), &mut rng);
        let t = Instant::now();
        std::hint::black_box(problem.evaluate(&o)?);
        times.push(t.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}

/// Exhaustive iff its estimated time is within `kappa` times the annealing
/// time. `tau` cancels out of that comparison, so this compares counts.
pub fn select_engine(loops: &[Loop], params: &SaParams, policy: &SelectionPolicy) -> EngineKind {
    let budget = policy.kappa * params.iterations as f64 * f64::from(params.restarts);
    let threshold = BigUint::from(budget.floor().max(0.0) as u128);
    if count_distinct_orderings(loops) <= threshold {
        EngineKind::Exhaustive
    } else {
        EngineKind::Sa
    }
}

/// Runs the requested engine, choosing one when `choice` is `Auto`.
pub fn schedule(
    problem: &SearchProblem,
    choice: EngineChoice,
    params: &SaParams,
    policy: &SelectionPolicy,
) -> Result<SearchResult> {
    let engine = match choice {
        EngineChoice::Auto => select_engine(problem.loops(), params, policy),
        EngineChoice::Sa => EngineKind::Sa,
        EngineChoice::Exhaustive => EngineKind::Exhaustive,
    };
    match engine {
        EngineKind::Exhaustive => exhaustive_search(problem, policy.hard_cap),
        EngineKind::Sa => sa_search(problem, params),
    }
}

/// Objectives of `samples` uniformly random orderings, drawn from a stream
/// of the same seed family as an annealing chain seeded with `seed`.
pub fn random_sample_objectives(
    problem: &SearchProblem,
    samples: u64,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    (0..samples)
        .map(|_| {
            problem
                .evaluate(&random_ordering(problem.loops(), &mut rng))
                .map(|e| e.objective)
        })
        .collect()
}
