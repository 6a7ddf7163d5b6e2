use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use loopsched_cli::report::{to_json, RunReport, SweepReport};
use loopsched_core::fixtures::Fixture;
use loopsched_core::oracle::brute_force_best;
use loopsched_core::{ArchSpec, LayerSpec, SpatialUnrolling};
use serde_json::Value;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn cfg(rel: &str) -> String {
    root()
        .join("configs")
        .join(rel)
        .to_string_lossy()
        .into_owned()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loopsched"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn schedule(layer: &str, extra: &[&str]) -> Output {
    let layer = cfg(layer);
    let arch = cfg("arch/eyeriss_like.json");
    let mut args = vec!["schedule", "--layer", &layer, "--arch", &arch];
    args.extend_from_slice(extra);
    run(&args)
}

fn without_wall_time(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("wall_time_s");
    v
}

#[test]
fn exhaustive_on_toy_is_global_minimum() {
    let report: RunReport = serde_json::from_str(&stdout(&schedule(
        "layers/toy_k4c4.json",
        &["--engine", "exhaustive"],
    )))
    .unwrap();
    assert_eq!(report.engine_used, loopsched_core::EngineKind::Exhaustive);
    assert_eq!(report.evaluations, 6);
    let layer: LayerSpec =
        serde_json::from_str(&fs::read_to_string(cfg("layers/toy_k4c4.json")).unwrap()).unwrap();
    let (_, best) = brute_force_best(
        &layer,
        &ArchSpec::eyeriss_like(),
        &SpatialUnrolling::none(),
        Default::default(),
    )
    .unwrap();
    assert_eq!(report.objective, best);
    assert_eq!(report.cost.total_energy, best);
}

#[test]
fn auto_picks_annealing_for_twenty_loops() {
    let report: RunReport =
        serde_json::from_str(&stdout(&schedule("layers/synthetic_20lpf.json", &[]))).unwrap();
    assert_eq!(report.ordering.len(), 20);
    assert_eq!(report.engine_used, loopsched_core::EngineKind::Sa);
    assert_eq!(report.evaluations, 1000);
}

#[test]
fn fixed_seed_reports_are_identical() {
    let a = stdout(&schedule("layers/synthetic_20lpf.json", &["--seed", "7"]));
    let b = stdout(&schedule("layers/synthetic_20lpf.json", &["--seed", "7"]));
    let strip = |s: &str| {
        s.lines()
            .filter(|l| !l.contains("\"wall_time_s\""))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&a), strip(&b));
    let va: Value = serde_json::from_str(&a).unwrap();
    assert_eq!(
        without_wall_time(va.clone()),
        without_wall_time(serde_json::from_str(&b).unwrap())
    );
    assert_eq!(va["seed"], 7);
    assert_eq!(va["sa_params"]["seed"], 7);
}

#[test]
fn report_round_trips() {
    for layer in ["layers/toy_k4c4.json", "layers/synthetic_20lpf.json"] {
        let text = stdout(&schedule(layer, &["--restarts", "2"]));
        let r: RunReport = serde_json::from_str(&text).unwrap();
        assert_eq!(to_json(&r), text);
        assert_eq!(serde_json::from_str::<RunReport>(&to_json(&r)).unwrap(), r);
    }
}

#[test]
fn allocation_names_levels() {
    let r: RunReport =
        serde_json::from_str(&stdout(&schedule("layers/toy_k4c4.json", &[]))).unwrap();
    let w = r
        .allocation
        .iter()
        .find(|a| a.operand == loopsched_core::OperandKind::W)
        .unwrap();
    let names: Vec<&str> = w.levels.iter().map(|l| l.level.as_str()).collect();
    assert_eq!(names, ["spad_W", "dram"]);
    assert_eq!(w.levels.last().unwrap().end, r.ordering.len());
}

#[test]
fn out_file_written_atomically() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested/report.json");
    let o = schedule("layers/toy_k4c4.json", &["--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    let _: RunReport = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let leftovers: Vec<_> = fs::read_dir(out.parent().unwrap()).unwrap().collect();
    assert_eq!(leftovers.len(), 1);
}

fn sweep(network: &str, extra: &[&str]) -> Output {
    let arch = cfg("arch/eyeriss_like.json");
    let mut args = vec!["sweep", "--network", network, "--arch", &arch];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn sweep_deduplicates_and_weights_total() {
    let dir = tempfile::tempdir().unwrap();
    let l1 = LayerSpec::new("l1", [1, 4, 4, 1, 1, 1, 1]);
    let l2 = LayerSpec::new("l2", [1, 2, 6, 2, 1, 1, 1]);
    let path = dir.path().join("net.json");
    fs::write(
        &path,
        serde_json::to_string(&vec![l1.clone(), l1, l2]).unwrap(),
    )
    .unwrap();
    let r: SweepReport =
        serde_json::from_str(&stdout(&sweep(path.to_str().unwrap(), &[]))).unwrap();
    assert_eq!((r.total_layers, r.unique_layers, r.layers.len()), (3, 2, 2));
    assert_eq!(r.layers[0].multiplicity, 2);
    assert_eq!(
        r.total_energy,
        2.0 * r.layers[0].report.objective + r.layers[1].report.objective
    );
}

#[test]
fn empty_network_is_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.json");
    fs::write(&path, "[]").unwrap();
    let r: SweepReport =
        serde_json::from_str(&stdout(&sweep(path.to_str().unwrap(), &[]))).unwrap();
    assert!(r.layers.is_empty());
    assert_eq!(r.total_energy, 0.0);
}

#[test]
fn resnet_like_network_has_repeated_shapes() {
    let net = cfg("networks/resnet50_like.json");
    let r: SweepReport = serde_json::from_str(&stdout(&sweep(
        &net,
        &["--spatial", &cfg("spatial/eyeriss_k8.json")],
    )))
    .unwrap();
    assert_eq!(r.total_layers, 53);
    assert_eq!(r.unique_layers, 20);
    assert_eq!(r.layers.iter().map(|e| e.multiplicity).sum::<usize>(), 53);
}

#[test]
fn alexnet_like_sweeps() {
    let net = cfg("networks/alexnet_like.json");
    let r: SweepReport = serde_json::from_str(&stdout(&sweep(
        &net,
        &["--spatial", &cfg("spatial/eyeriss_k8.json")],
    )))
    .unwrap();
    assert_eq!(r.unique_layers, 8);
}

fn distribution(seed: &str, out: &Path) -> Output {
    run(&[
        "distribution",
        "--layer",
        &cfg("layers/alexnet_conv2.json"),
        "--arch",
        &cfg("arch/eyeriss_like.json"),
        "--spatial",
        &cfg("spatial/eyeriss_k32.json"),
        "--samples",
        "1000",
        "--seed",
        seed,
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn distribution_rows_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert!(distribution("5", &a).status.success());
    assert!(distribution("5", &b).status.success());
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "strategy,iteration,objective,accepted");
    assert_eq!(lines.len(), 2001);
    assert_eq!(lines.iter().filter(|l| l.starts_with("sa,")).count(), 1000);
    assert!(lines
        .iter()
        .filter(|l| l.starts_with("random,"))
        .all(|l| l.ends_with(',')));

    let median = |tag: &str| {
        let mut v: Vec<f64> = lines[1..]
            .iter()
            .filter(|l| l.starts_with(tag))
            .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
            .collect();
        v.sort_by(f64::total_cmp);
        (v[499] + v[500]) / 2.0
    };
    assert!(median("sa,") < median("random,"));
}

#[test]
fn validate_shipped_fixtures_pass() {
    let o = run(&[
        "validate",
        "--fixtures",
        root().join("fixtures").to_str().unwrap(),
    ]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["passed"], true);
    assert!(v["cases"].as_u64().unwrap() >= 20);
}

#[test]
fn validate_detects_corrupted_counts() {
    let dir = tempfile::tempdir().unwrap();
    let src = root().join("fixtures/oracle/conv2d_k4.json");
    let mut f: Fixture = serde_json::from_str(&fs::read_to_string(src).unwrap()).unwrap();
    f.expected
        .as_mut()
        .unwrap()
        .canonical_accesses
        .as_mut()
        .unwrap()[0]
        .reads += 1;
    fs::write(
        dir.path().join("bad.json"),
        serde_json::to_string(&f).unwrap(),
    )
    .unwrap();
    let o = run(&["validate", "--fixtures", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["first_mismatch"]["check"], "canonical_accesses");
    assert!(v["first_mismatch"]["model"].is_array());
    assert!(v["first_mismatch"]["reference"].is_array());
}

#[test]
fn validate_random_is_deterministic() {
    let a = stdout(&run(&["validate", "--random", "100", "--seed", "1"]));
    let b = stdout(&run(&["validate", "--random", "100", "--seed", "1"]));
    assert_eq!(a, b);
    let v: Value = serde_json::from_str(&a).unwrap();
    assert_eq!(
        (v["cases"].as_u64(), v["checks"].as_u64()),
        (Some(100), Some(100))
    );
}

#[test]
fn exported_fixtures_match_shipped() {
    let dir = tempfile::tempdir().unwrap();
    assert!(
        run(&["export-fixtures", "--out", dir.path().to_str().unwrap()])
            .status
            .success()
    );
    let shipped = root().join("fixtures");
    let mut count = 0;
    for sub in ["oracle", "study"] {
        for e in fs::read_dir(dir.path().join(sub)).unwrap() {
            let p = e.unwrap().path();
            let name = p.file_name().unwrap();
            assert_eq!(
                fs::read_to_string(&p).unwrap(),
                fs::read_to_string(shipped.join(sub).join(name)).unwrap(),
                "{sub}/{name:?}"
            );
            count += 1;
        }
        assert!(count > 0);
    }
    assert_eq!(
        fs::read_to_string(dir.path().join("complex.json")).unwrap(),
        fs::read_to_string(shipped.join("complex.json")).unwrap()
    );
}

#[test]
fn shipped_arch_is_the_builtin_example() {
    let arch: ArchSpec =
        serde_json::from_str(&fs::read_to_string(cfg("arch/eyeriss_like.json")).unwrap()).unwrap();
    assert_eq!(arch, ArchSpec::eyeriss_like());
    assert!(loopsched_core::validate_arch(&arch).is_empty());
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn config_errors_exit_2_with_file_and_key() {
    let dir = tempfile::tempdir().unwrap();
    let mut v: Value =
        serde_json::from_str(&fs::read_to_string(cfg("arch/eyeriss_like.json")).unwrap()).unwrap();
    v["levels"][3]["read_energie"] = 6.0.into();
    let bad = dir.path().join("typo_arch.json");
    fs::write(&bad, v.to_string()).unwrap();
    let layer = cfg("layers/toy_k4c4.json");
    let o = run(&[
        "schedule",
        "--layer",
        &layer,
        "--arch",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(
        err.contains("typo_arch.json") && err.contains("levels[3]") && err.contains("read_energie"),
        "{err}"
    );

    let mut v: Value = serde_json::from_str(&fs::read_to_string(&layer).unwrap()).unwrap();
    v["K"] = 0.into();
    let bad = dir.path().join("zero_k.json");
    fs::write(&bad, v.to_string()).unwrap();
    let o = run(&[
        "schedule",
        "--layer",
        bad.to_str().unwrap(),
        "--arch",
        &cfg("arch/eyeriss_like.json"),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("zero_k.json: K"), "{}", stderr(&o));

    // Spatial factor that does not divide the layer.
    let o = run(&[
        "schedule",
        "--layer",
        &layer,
        "--arch",
        &cfg("arch/eyeriss_like.json"),
        "--spatial",
        &cfg("spatial/eyeriss_k32.json"),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("eyeriss_k32.json: K"), "{}", stderr(&o));
}

#[test]
fn oversized_exhaustive_exits_3() {
    let o = schedule("layers/synthetic_20lpf.json", &["--engine", "exhaustive"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("exceeds the cap"));
}

#[test]
fn thread_count_from_environment() {
    let layer = cfg("layers/toy_k4c4.json");
    let arch = cfg("arch/eyeriss_like.json");
    let args = [
        "schedule",
        "--layer",
        layer.as_str(),
        "--arch",
        arch.as_str(),
    ];
    let ok = Command::new(env!("CARGO_BIN_EXE_loopsched"))
        .args(args)
        .env("LOOPSCHED_THREADS", "2")
        .output()
        .unwrap();
    assert!(ok.status.success());
    let bad = Command::new(env!("CARGO_BIN_EXE_loopsched"))
        .args(args)
        .env("LOOPSCHED_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
