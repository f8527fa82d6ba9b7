use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flexdesign::nn::load_checkpoint;
use flexdesign::{build_auto_scenario, load_instance};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flexdesign"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(text: &str) -> Value {
    serde_json::from_str(text).unwrap()
}

/// The run directory is the last line a run command prints.
fn run_dir(dir: &Path, stdout: &str) -> PathBuf {
    dir.join(stdout.trim().lines().last().unwrap())
}

fn synthetic(dir: &Path) -> &'static str {
    ok(dir, &["gen", "synthetic", "--k", "4", "--seed", "3", "--out", "small.json"]);
    "small.json"
}

const TINY_RL: [&str; 10] = [
    "--hidden",
    "8,8",
    "--episodes-per-epoch",
    "40",
    "--max-steps",
    "800",
    "--eval-samples",
    "100",
    "--designs-per-seed",
    "4",
];

#[test]
fn gen_writes_the_scenario_and_rejects_unknown_names() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["gen", "auto", "--k", "16"]);
    let written = load_instance(tmp.path().join("auto-k16.json")).unwrap();
    assert_eq!(written, build_auto_scenario(16).unwrap());
    ok(tmp.path(), &["gen", "fashion", "--k", "10"]);
    assert_eq!(load_instance(tmp.path().join("fashion-k10.json")).unwrap().budget, 10);

    let out = run(tmp.path(), &["gen", "widgets", "--k", "3"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("auto") && err.contains("fashion"), "{err}");
}

#[test]
fn eval_contract() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let inst = synthetic(d);
    let empty = json(&ok(d, &["eval", "--instance", inst, "--arcs", "", "--samples", "500"]));
    assert_eq!((empty["objective"].as_f64(), empty["stderr"].as_f64()), (Some(0.0), Some(0.0)));

    let args = ["eval", "--instance", inst, "--arcs", "0-0,1-1,2-3", "--samples", "400", "--seed", "5"];
    let a = ok(d, &args);
    assert_eq!(a, ok(d, &args));
    let mut reference = args.to_vec();
    reference.extend(["--engine", "reference"]);
    let b = json(&ok(d, &reference));
    let a = json(&a);
    let (x, y) = (a["objective"].as_f64().unwrap(), b["objective"].as_f64().unwrap());
    assert!((x - y).abs() <= 1e-6 * (1.0 + x.abs()), "{x} vs {y}");

    let over = run(d, &["eval", "--instance", inst, "--arcs", "0-0,0-1,0-2,0-3,1-0"]);
    assert_eq!(over.status.code(), Some(3));
    let outside = run(d, &["eval", "--instance", inst, "--arcs", "9-0"]);
    assert_eq!(outside.status.code(), Some(3));
    let missing = run(d, &["eval", "--instance", "nope.json", "--arcs", "0-0"]);
    assert_eq!(missing.status.code(), Some(3));
    let usage = run(d, &["eval", "--instance", inst]);
    assert_eq!(usage.status.code(), Some(2));
}

#[test]
fn bound_dominates_heuristic_designs_on_the_same_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let inst = synthetic(d);
    let common = ["--omega", "300", "--seed", "9", "--out", "runs"];
    let bound_dir = run_dir(d, &ok(d, &[&["bound", "--instance", inst][..], &common].concat()));
    let bound = json(&fs::read_to_string(bound_dir.join("bound.json")).unwrap());
    let ub = bound["upper_bound"].as_f64().unwrap();
    assert_eq!(bound["manifest"], "manifest.json");
    for method in ["greedy", "sp"] {
        let dir = run_dir(d, &ok(d, &[&[method, "--instance", inst][..], &common].concat()));
        let design = json(&fs::read_to_string(dir.join("design.json")).unwrap());
        let score = design["score"].as_f64().unwrap();
        assert!(score <= ub + 1e-6 * ub.abs(), "{method} {score} > bound {ub}");
        let trace = json(&fs::read_to_string(dir.join("trace.json")).unwrap());
        assert!(trace["scores"].as_array().unwrap().len() <= 4);
    }
}

#[test]
fn full_design_on_auto_meets_the_bound() {
    // no arc costs, so the relaxation optimum is the full network itself
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["gen", "auto", "--k", "128", "--out", "auto.json"]);
    let all: Vec<String> = (0..8).flat_map(|i| (0..16).map(move |j| format!("{i}-{j}"))).collect();
    let eval = json(&ok(d, &["eval", "--instance", "auto.json", "--arcs", &all.join(","), "--samples", "2000", "--seed", "4"]));
    let dir = run_dir(d, &ok(d, &["bound", "--instance", "auto.json", "--omega", "2000", "--seed", "4"]));
    let bound = json(&fs::read_to_string(dir.join("bound.json")).unwrap());
    let (full, ub) = (eval["objective"].as_f64().unwrap(), bound["upper_bound"].as_f64().unwrap());
    assert!(ub >= full - 1e-6 * full);
    assert!((ub - full) / full < 1e-3, "{full} vs {ub}");
}

#[test]
fn training_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let inst = synthetic(d);
    let mut args = vec!["train", "--instance", inst, "--seed", "7", "--fixed-clock", "--emit-plotdata"];
    args.extend(TINY_RL);
    let first = run_dir(d, &ok(d, &[&args[..], &["--out", "a"]].concat()));
    let second = run_dir(d, &ok(d, &[&args[..], &["--out", "b"]].concat()));
    for name in ["report.csv", "checkpoint.bin", "designs.json", "plotdata.csv", "manifest.json"] {
        assert_eq!(
            fs::read(first.join(name)).unwrap(),
            fs::read(second.join(name)).unwrap(),
            "{name} differs"
        );
    }
    let report = fs::read_to_string(first.join("report.csv")).unwrap();
    assert!(report.starts_with("step,epoch,mean_return,value_loss,approx_kl,clip_frac,eval_profit,wallclock_s\n0,0,,,,,"));
    let manifest = json(&fs::read_to_string(first.join("manifest.json")).unwrap());
    assert_eq!(manifest["seeds"]["ppo"], 7);
    assert_eq!(manifest["instance_hash"].as_str().unwrap().len(), 64);
    assert!(manifest["deviations"][0].as_str().unwrap().contains("hidden"));
}

#[test]
fn adapt_starts_from_the_meta_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let inst = synthetic(d);
    let mut meta = vec!["meta-train", "--instance", inst, "--k-values", "2,3", "--meta-epochs", "2", "--fixed-clock"];
    meta.extend(&TINY_RL[..8]);
    let meta_dir = run_dir(d, &ok(d, &meta));
    let ckpt = meta_dir.join("checkpoint.bin");
    let (header, nets) = load_checkpoint(&ckpt).unwrap();
    assert_eq!(header.metadata["meta"], true);
    assert_eq!(header.metadata["k_values"], serde_json::json!([2, 3]));
    let csv = fs::read_to_string(meta_dir.join("meta_report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);

    let ckpt = ckpt.to_str().unwrap();
    let adapt = ["adapt", "--meta", ckpt, "--instance", inst, "--k", "4", "--max-steps", "0", "--eval-samples", "100"];
    let adapt_dir = run_dir(d, &ok(d, &adapt));
    let (_, adapted) = load_checkpoint(adapt_dir.join("checkpoint.bin")).unwrap();
    assert_eq!(adapted, nets);
    let report = fs::read_to_string(adapt_dir.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 2);
}

#[test]
fn compare_shares_samples_and_checks_methods() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let inst = synthetic(d);
    let out = ok(
        d,
        &["compare", "--instance", inst, "--k-list", "2,4", "--methods", "greedy,sp", "--omega", "200", "--samples", "500"],
    );
    let dir = run_dir(d, &out);
    let table = fs::read_to_string(dir.join("table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "method,K=2,K=4");
    assert!(lines[1].starts_with("greedy,") && lines[2].starts_with("sp,"));
    let manifest = json(&fs::read_to_string(dir.join("manifest.json")).unwrap());
    assert!(manifest["seeds"]["eval_samples_k2"].is_u64());
    assert!(manifest["seeds"]["eval_samples_k4"].is_u64());

    // the greedy cell agrees with evaluating its design on the recorded samples
    let results = fs::read_to_string(dir.join("results.csv")).unwrap();
    let row: Vec<&str> = results.lines().find(|l| l.starts_with("4,greedy,")).unwrap().split(',').collect();
    let arcs = row[4].replace(' ', ",");
    let seed = manifest["seeds"]["eval_samples_k4"].to_string();
    let check = json(&ok(d, &["eval", "--instance", inst, "--arcs", &arcs, "--samples", "500", "--seed", &seed]));
    assert_eq!(check["objective"].as_f64().unwrap(), row[2].parse::<f64>().unwrap());

    assert_eq!(run(d, &["compare", "--instance", inst, "--k-list", "2", "--methods", "annealing"]).status.code(), Some(2));
    assert_eq!(run(d, &["compare", "--instance", inst, "--k-list", "2"]).status.code(), Some(2));
    assert_eq!(
        run(d, &["compare", "--instance", inst, "--k-list", "0", "--methods", "greedy"]).status.code(),
        Some(3)
    );
}
