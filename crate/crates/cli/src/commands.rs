//! Subcommand implementations. Each returns its output as a value; `main`
//! decides where it goes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use loopsched_core::engines::{
    random_sample_objectives, sa_search, schedule, EngineChoice, SelectionPolicy, StartPoint,
    DEFAULT_HARD_CAP,
};
use loopsched_core::fixtures::{
    access_rows, complex_fixture, oracle_fixtures, random_oracle_cases, study_fixtures, AccessRow,
    Fixture,
};
use loopsched_core::oracle::simulate;
use loopsched_core::ordering::{count_distinct_orderings, random_ordering};
use loopsched_core::{
    allocate, evaluate, unique_layers, AllocationMode, ArchSpec, LayerSpec, SaParams,
    SearchProblem, SpatialUnrolling, TemporalMapping,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config;
use crate::error::{CliError, CliResult};
use crate::report::{to_json, RunReport, SweepEntry, SweepReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    Auto,
    Sa,
    Exhaustive,
}

impl From<EngineArg> for EngineChoice {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Auto => EngineChoice::Auto,
            EngineArg::Sa => EngineChoice::Sa,
            EngineArg::Exhaustive => EngineChoice::Exhaustive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Even,
    Uneven,
}

impl From<ModeArg> for AllocationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Even => AllocationMode::Even,
            ModeArg::Uneven => AllocationMode::Uneven,
        }
    }
}

/// Accelerator inputs shared by every search command.
#[derive(Debug, Clone, Args)]
pub struct HardwareArgs {
    /// Architecture config (JSON).
    #[arg(long)]
    pub arch: PathBuf,
    /// Spatial unrolling config (JSON list); none when omitted.
    #[arg(long)]
    pub spatial: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "uneven")]
    pub mode: ModeArg,
}

#[derive(Debug, Clone, Args)]
pub struct SearchArgs {
    #[arg(long, value_enum, default_value = "auto")]
    pub engine: EngineArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Annealing iterations per chain.
    #[arg(long, default_value_t = 1000)]
    pub iterations: u64,
    /// Geometric cooling factor.
    #[arg(long, default_value_t = 0.999)]
    pub rho: f64,
    /// Starting temperature.
    #[arg(long, default_value_t = 0.05)]
    pub t0: f64,
    /// Independent annealing chains (seeds seed, seed+1, ...).
    #[arg(long, default_value_t = 1)]
    pub restarts: u32,
    /// Merge prime-factor loops until at most this many remain.
    #[arg(long)]
    pub lpf_limit: Option<usize>,
    /// Exhaustive is chosen while D <= kappa * iterations * restarts.
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    /// Largest space the exhaustive engine will walk.
    #[arg(long, default_value_t = DEFAULT_HARD_CAP)]
    pub hard_cap: u64,
}

impl SearchArgs {
    pub fn sa_params(&self) -> SaParams {
        SaParams {
            iterations: self.iterations,
            rho: self.rho,
            t0: self.t0,
            seed: self.seed,
            restarts: self.restarts,
            start: StartPoint::Random,
        }
    }

    pub fn policy(&self) -> SelectionPolicy {
        SelectionPolicy {
            kappa: self.kappa,
            hard_cap: self.hard_cap,
        }
    }

    fn check(&self) -> CliResult<()> {
        self.sa_params()
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(CliError::Usage(format!(
                "--kappa must be a non-negative number, got {}",
                self.kappa
            )));
        }
        Ok(())
    }
}

fn load_hardware(hw: &HardwareArgs) -> CliResult<(ArchSpec, SpatialUnrolling)> {
    let arch = config::load_arch(&hw.arch)?;
    let spatial = config::load_spatial(hw.spatial.as_deref(), &arch)?;
    Ok((arch, spatial))
}

/// Binds a layer to the hardware. Errors that stem from the layer/spatial
/// combination are reported against `layer_file`.
fn bind(
    layer: &LayerSpec,
    layer_file: &Path,
    arch: &ArchSpec,
    spatial: &SpatialUnrolling,
    hw: &HardwareArgs,
    lpf_limit: Option<usize>,
) -> CliResult<SearchProblem> {
    SearchProblem::new(
        layer.clone(),
        arch.clone(),
        spatial.clone(),
        hw.mode.into(),
        lpf_limit,
    )
    .map_err(|e| match e {
        loopsched_core::Error::NonDivisibleUnrolling { dim, .. } => CliError::config(
            hw.spatial.as_deref().unwrap_or(layer_file),
            format!("{dim}"),
            format!("layer `{}`: {e}", layer.name),
        ),
        other => CliError::Search(other),
    })
}

fn run_one(problem: &SearchProblem, search: &SearchArgs) -> CliResult<RunReport> {
    let params = search.sa_params();
    let result = schedule(problem, search.engine.into(), &params, &search.policy())?;
    Ok(RunReport::new(
        &problem.layer.name,
        &problem.arch,
        &result,
        problem.distinct_orderings().to_string(),
        &params,
        search.lpf_limit,
    ))
}

pub fn cmd_schedule(
    layer_file: &Path,
    hw: &HardwareArgs,
    search: &SearchArgs,
) -> CliResult<RunReport> {
    search.check()?;
    let layer = config::load_layer(layer_file)?;
    let (arch, spatial) = load_hardware(hw)?;
    let problem = bind(&layer, layer_file, &arch, &spatial, hw, search.lpf_limit)?;
    run_one(&problem, search)
}

pub fn cmd_sweep(
    network_file: &Path,
    hw: &HardwareArgs,
    search: &SearchArgs,
) -> CliResult<SweepReport> {
    search.check()?;
    let started = Instant::now();
    let network = config::load_network(network_file)?;
    let (arch, spatial) = load_hardware(hw)?;
    let groups = unique_layers(&network);
    let mut layers = Vec::with_capacity(groups.len());
    for (layer, multiplicity) in &groups {
        let problem = bind(layer, network_file, &arch, &spatial, hw, search.lpf_limit)?;
        layers.push(SweepEntry {
            multiplicity: *multiplicity,
            report: run_one(&problem, search)?,
        });
    }
    let total_energy = layers
        .iter()
        .map(|e| e.report.objective * e.multiplicity as f64)
        .sum();
    Ok(SweepReport {
        network: network_file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        total_layers: network.len(),
        unique_layers: groups.len(),
        total_energy,
        layers,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

pub const DISTRIBUTION_HEADER: &str = "strategy,iteration,objective,accepted";

/// One annealing chain of `samples` iterations followed by `samples`
/// uniformly random orderings, as CSV.
pub fn cmd_distribution(
    layer_file: &Path,
    hw: &HardwareArgs,
    samples: u64,
    seed: u64,
    lpf_limit: Option<usize>,
) -> CliResult<String> {
    let layer = config::load_layer(layer_file)?;
    let (arch, spatial) = load_hardware(hw)?;
    let problem = bind(&layer, layer_file, &arch, &spatial, hw, lpf_limit)?;
    distribution_csv(&problem, samples, seed)
}

pub fn distribution_csv(problem: &SearchProblem, samples: u64, seed: u64) -> CliResult<String> {
    if samples == 0 {
        return Err(CliError::Usage("--samples must be >= 1".into()));
    }
    let params = SaParams {
        iterations: samples,
        seed,
        ..SaParams::default()
    };
    let sa = sa_search(problem, &params)?;
    let mut out = String::from(DISTRIBUTION_HEADER);
    out.push('\n');
    match sa.trace.as_ref().and_then(|t| t.first()) {
        Some(chain) => {
            for s in &chain.steps {
                writeln!(out, "sa,{},{},{}", s.iteration, s.objective, s.accepted).unwrap();
            }
        }
        // A single-ordering space: every visit is that ordering.
        None => {
            for i in 0..samples {
                writeln!(out, "sa,{i},{},true", sa.best_objective).unwrap();
            }
        }
    }
    for (i, v) in random_sample_objectives(problem, samples, seed)?
        .iter()
        .enumerate()
    {
        writeln!(out, "random,{i},{v},").unwrap();
    }
    Ok(out)
}

/// The first disagreement found by `validate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub case: String,
    pub check: String,
    pub detail: String,
    /// Counts from the analytical model.
    pub model: Option<Vec<AccessRow>>,
    /// Counts from the loop-nest simulation or the stored expectation.
    pub reference: Option<Vec<AccessRow>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateReport {
    pub cases: usize,
    pub checks: usize,
    pub passed: bool,
    pub first_mismatch: Option<Mismatch>,
}

pub enum ValidateSource<'a> {
    Fixtures(&'a Path),
    Random { count: usize, seed: u64 },
}

/// Random orderings checked per fixture, besides the canonical one.
const ORDERINGS_PER_FIXTURE: usize = 4;

struct Checker {
    checks: usize,
    first: Option<Mismatch>,
}

impl Checker {
    fn record(&mut self, ok: bool, mismatch: impl FnOnce() -> Mismatch) {
        self.checks += 1;
        if !ok && self.first.is_none() {
            self.first = Some(mismatch());
        }
    }

    fn model_vs_sim(
        &mut self,
        case: &str,
        layer: &LayerSpec,
        arch: &ArchSpec,
        m: &TemporalMapping,
    ) -> CliResult<()> {
        let model = access_rows(
            &evaluate(m, layer, arch, &SpatialUnrolling::none())?.accesses(),
            arch,
        );
        let sim = access_rows(&simulate(m, layer, arch)?.accesses, arch);
        let ordering = serde_json::to_string(&m.ordering).expect("ordering serializes");
        self.record(model == sim, || Mismatch {
            case: case.to_string(),
            check: "model_vs_simulation".into(),
            detail: format!("ordering {ordering}, boundaries {:?}", m.boundaries),
            model: Some(model.clone()),
            reference: Some(sim.clone()),
        });
        Ok(())
    }
}

fn fixture_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| CliError::io(&d, e))? {
            let path = entry.map_err(|e| CliError::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "json") {
                files.push(path);
            }
        }
    }
    files.sort();
    Ok(files)
}

fn validate_fixture(c: &mut Checker, path: &Path, f: &Fixture, seed: u64) -> CliResult<()> {
    f.arch
        .ensure_valid()
        .map_err(|e| CliError::config(path, "arch", e.to_string()))?;
    f.layer
        .validate()
        .map_err(|e| CliError::config(path, "layer", e.to_string()))?;
    let loops = f.loops()?;
    let case = format!("{} ({})", f.name, path.display());
    if let Some(exp) = &f.expected {
        let d = count_distinct_orderings(&loops);
        c.record(d == exp.distinct_orderings.into(), || Mismatch {
            case: case.clone(),
            check: "distinct_orderings".into(),
            detail: format!("counted {d}, fixture expects {}", exp.distinct_orderings),
            model: None,
            reference: None,
        });
    }
    if !f.simulable() {
        return Ok(());
    }
    let canonical = f.canonical_mapping()?;
    c.model_vs_sim(&case, &f.layer, &f.arch, &canonical)?;
    if let Some(expected) = f
        .expected
        .as_ref()
        .and_then(|e| e.canonical_accesses.as_ref())
    {
        let model = access_rows(
            &evaluate(&canonical, &f.layer, &f.arch, &f.spatial)?.accesses(),
            &f.arch,
        );
        c.record(&model == expected, || Mismatch {
            case: case.clone(),
            check: "canonical_accesses".into(),
            detail: "model counts for the canonical ordering differ from the stored expectation"
                .into(),
            model: Some(model.clone()),
            reference: Some(expected.clone()),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..ORDERINGS_PER_FIXTURE {
        let m = allocate(
            &random_ordering(&loops, &mut rng),
            &f.layer,
            &f.arch,
            &f.spatial,
            f.mode,
        )?;
        c.model_vs_sim(&case, &f.layer, &f.arch, &m)?;
    }
    Ok(())
}

pub fn cmd_validate(source: ValidateSource<'_>, seed: u64) -> CliResult<ValidateReport> {
    let mut c = Checker {
        checks: 0,
        first: None,
    };
    let cases = match source {
        ValidateSource::Fixtures(dir) => {
            let files = fixture_files(dir)?;
            for path in &files {
                let f: Fixture = config::load(path)?;
                validate_fixture(&mut c, path, &f, seed)?;
            }
            files.len()
        }
        ValidateSource::Random { count, seed } => {
            for (i, (layer, arch, m)) in random_oracle_cases(count, seed).iter().enumerate() {
                c.model_vs_sim(&format!("random #{i} on {}", arch.name), layer, arch, m)?;
            }
            count
        }
    };
    Ok(ValidateReport {
        cases,
        checks: c.checks,
        passed: c.first.is_none(),
        first_mismatch: c.first,
    })
}

/// Writes the curated fixture sets, with oracle-computed expectations,
/// under `dir`: `oracle/`, `study/` and `complex.json`.
pub fn cmd_export_fixtures(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut written = Vec::new();
    let sets = [("oracle", oracle_fixtures()), ("study", study_fixtures())];
    for (sub, set) in sets {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| CliError::io(&d, e))?;
        for f in set {
            let path = d.join(format!("{}.json", f.name));
            write_atomic(&path, &to_json(&f.with_expected()?))?;
            written.push(path);
        }
    }
    let path = dir.join("complex.json");
    write_atomic(&path, &to_json(&complex_fixture().with_expected()?))?;
    written.push(path);
    Ok(written)
}

/// Write-then-rename so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = parent.join(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, contents).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::io(path, e)
    })
}
