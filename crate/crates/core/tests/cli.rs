use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use grassopt::cli::{analyze_lines, read_metrics, ABLATION_HEADER};
use grassopt::diagnostics::aggregate_max_per_index;
use grassopt::harness::{train, Arm, RunConfig, StrategyName};

const SMALL: &str = r#"
[task]
kind = "low_rank_regression"
m = 16
n = 12
true_rank = 2
noise_std = 0.01
train_samples = 64
eval_samples = 32

[subspace]
rank = 4
interval = 5

[run]
steps = 30
seed = 11
warmup = 5
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_grassopt"))
}

fn run(args: &[&str]) -> Output {
    bin()
        .args(args)
        .env_remove("GRASSOPT_SEED")
        .output()
        .unwrap()
}

fn write_config(dir: &Path) -> String {
    let p = dir.join("base.toml");
    fs::write(&p, SMALL).unwrap();
    p.to_str().unwrap().to_string()
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

#[test]
fn train_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("r");
    let out = run(&[
        "train",
        "--config",
        &cfg,
        "--set",
        "run.steps=10",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let metrics = fs::read_to_string(out_dir.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 10);
    let energy = fs::read_to_string(out_dir.join("energy.csv")).unwrap();
    assert_eq!(energy.lines().next(), Some("step,param_id,ratio"));
    let spectrum = fs::read_to_string(out_dir.join("spectrum.csv")).unwrap();
    assert_eq!(spectrum.lines().next(), Some("step,param_id,i,sigma"));
    let loss: f64 = fs::read_to_string(out_dir.join("final_loss.txt"))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(loss.is_finite());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("run_manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["schema_version"], 1);
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["config"]["run"]["steps"], 10);
    assert!(manifest["code_version"].is_string());
}

#[test]
fn rerun_from_manifest_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(
        run(&["train", "--config", &cfg, "--out", a.to_str().unwrap()])
            .status
            .success()
    );
    let manifest = a.join("run_manifest.json");
    assert!(run(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        b.to_str().unwrap()
    ])
    .status
    .success());
    for f in [
        "metrics.jsonl",
        "energy.csv",
        "spectrum.csv",
        "final_loss.txt",
        "run_manifest.json",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, SMALL.replace("seed = 11\n", "")).unwrap();
    let out_dir = dir.path().join("r");
    let out = bin()
        .args([
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .env("GRASSOPT_SEED", "77")
        .output()
        .unwrap();
    assert!(out.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("run_manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"], 77);
}

#[test]
fn config_errors_exit_2() {
    let out = run(&["train", "--config", "/definitely/missing.toml"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "config");
    assert!(err["message"]
        .as_str()
        .unwrap()
        .contains("/definitely/missing.toml"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    for bad in [
        "run.nonsense=1",
        "subspace.interval=0",
        "subspace.strategy=frozen",
    ] {
        let out = run(&[
            "train",
            "--config",
            &cfg,
            "--set",
            bad,
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(2), "{bad}");
    }
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[optimizer]\nlearning_rate = 0.1\n").unwrap();
    assert_eq!(
        run(&["train", "--config", bad.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = run(&[
        "train",
        "--config",
        &cfg,
        "--set",
        "optimizer.lr=1e6",
        "--set",
        "run.warmup=0",
        "--set",
        "run.steps=300",
        "--out",
        dir.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["error"], "divergence");
}

#[test]
fn ablate_writes_fourteen_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("abl");
    let out = run(&[
        "ablate",
        "--config",
        &cfg,
        "--jobs",
        "3",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let mut reader = csv::Reader::from_path(out_dir.join("ablation.csv")).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ABLATION_HEADER
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 14);

    // A row matches the same arm trained directly.
    let base = RunConfig::from_toml(SMALL).unwrap();
    let arm = Arm {
        strategy: StrategyName::GrassJump,
        use_ao: true,
        use_rs: false,
    };
    let direct = train(&arm.apply(&base)).unwrap().final_eval_loss;
    let row = rows
        .iter()
        .find(|r| &r[0] == "grass_jump" && &r[1] == "true" && &r[2] == "false")
        .unwrap();
    assert_eq!(row[3].parse::<f64>().unwrap(), direct);
    assert_eq!(&row[6], "ok");
}

#[test]
fn ablate_fails_only_when_every_arm_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("abl");
    let out = run(&[
        "ablate",
        "--config",
        &cfg,
        "--set",
        "optimizer.lr=1e6",
        "--set",
        "run.warmup=0",
        "--set",
        "run.steps=300",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let text = fs::read_to_string(out_dir.join("ablation.csv")).unwrap();
    assert_eq!(text.lines().count(), 15);
}

#[test]
fn analyze_matches_direct_aggregation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("r");
    assert!(run(&[
        "train",
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap()
    ])
    .status
    .success());

    let out = run(&["analyze", out_dir.to_str().unwrap(), "--group", "w"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();

    let records = read_metrics(&out_dir).unwrap();
    let last = records.iter().rfind(|r| !r.spectrum.is_empty()).unwrap();
    let expect = aggregate_max_per_index(&last.spectrum, "w");
    let line = stdout.lines().find(|l| l.contains("spectrum_max")).unwrap();
    let inside = &line[line.find('[').unwrap() + 1..line.len() - 1];
    let got: Vec<f64> = inside.split(", ").map(|s| s.parse().unwrap()).collect();
    assert_eq!(got.len(), expect.len());
    for (g, e) in got.iter().zip(&expect) {
        assert!((g - e).abs() <= 1e-6 * e.abs().max(1e-300));
    }
    assert_eq!(
        stdout.trim(),
        analyze_lines(&records, &["w".into()]).join("\n")
    );

    let energy = stdout.lines().find(|l| l.contains("energy")).unwrap();
    for key in ["first=", "last=", "min=", "max="] {
        let v: f64 = energy
            .split(key)
            .nth(1)
            .unwrap()
            .split(' ')
            .next()
            .unwrap()
            .parse()
            .unwrap();
        assert!((0.0..=1.0).contains(&v), "{key}{v}");
    }
}

#[test]
fn analyze_empty_group_and_missing_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["analyze", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));

    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("r");
    assert!(run(&[
        "train",
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap()
    ])
    .status
    .success());
    let out = run(&["analyze", out_dir.to_str().unwrap(), "--group", "no_such"]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .contains("group no_such: empty group"));
}

#[test]
fn print_defaults_round_trips() {
    let out = run(&["print-defaults"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(RunConfig::from_toml(&text).unwrap(), RunConfig::default());
    for section in ["[task]", "[optimizer]", "[subspace]", "[recovery]", "[run]"] {
        assert!(text.contains(section));
    }
}
