use std::fs::{self, File};
use std::io::BufReader;
use std::process::Command;

use ism::cli::{self, Scope};
use ism::config::{self, RunConfig, PRESETS};
use ism::controls::ControlField;
use ism::IsmError;

fn config_key(err: IsmError) -> String {
    match err {
        IsmError::Config { key, .. } => key,
        other => panic!("expected a config error, got {other}"),
    }
}

const TWO_LEVEL: &str = r#"
seed = 3

[model]
kind = "two-level"
detuning = 1.0
t_final = 3.0
steps = 128

[ism]
n = 4
workers = 2
max_iterations = 5

[solver]
kind = "gradient"
rho = 20.0

[bench]
n_list = [1, 2]
eps = 0.3
"#;

fn two_level_in(dir: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig::from_toml(TWO_LEVEL).unwrap();
    cfg.output.dir = dir.to_path_buf();
    cfg
}

#[test]
fn missing_model_block_names_the_key() {
    let text = TWO_LEVEL.replace("[model]\nkind = \"two-level\"\ndetuning = 1.0\nt_final = 3.0\nsteps = 128\n", "");
    assert_eq!(config_key(RunConfig::from_toml(&text).unwrap_err()), "model");
}

#[test]
fn unknown_top_level_key_is_rejected() {
    let text = format!("bogus = 1\n{TWO_LEVEL}");
    assert_eq!(config_key(RunConfig::from_toml(&text).unwrap_err()), "bogus");
}

#[test]
fn unknown_field_inside_block_names_the_block() {
    let text = TWO_LEVEL.replace("rho = 20.0", "rho = 20.0\nmomentum = 0.9");
    assert_eq!(config_key(RunConfig::from_toml(&text).unwrap_err()), "solver");
}

#[test]
fn baseline_missing_from_bench_list() {
    let text = TWO_LEVEL.replace("n_list = [1, 2]", "n_list = [2, 4]");
    assert_eq!(config_key(RunConfig::from_toml(&text).unwrap_err()), "bench.n_list");
}

#[test]
fn presets_round_trip_through_toml() {
    for name in PRESETS {
        for quick in [false, true] {
            let cfg = config::preset(name, quick).unwrap();
            let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
            assert_eq!(back, cfg, "{name} quick={quick}");
        }
    }
    assert_eq!(config_key(config::preset("nope", false).unwrap_err()), "preset");
}

#[test]
fn run_writes_artifacts_and_improves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = two_level_in(dir.path());
    let out = cli::cmd_run(&cfg).unwrap();
    assert!(out.record.final_j > out.initial_j);
    assert_eq!(out.record.iterations.len(), 5);

    let u = ControlField::read_csv(BufReader::new(File::open(&out.artifacts.control).unwrap())).unwrap();
    assert_eq!(u, out.control);
    let text = fs::read_to_string(&out.artifacts.control).unwrap();
    assert!(text.starts_with(&format!("# format: {}", cli::CONTROL_FORMAT)));

    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out.artifacts.summary).unwrap()).unwrap();
    assert_eq!(summary["format"], cli::SUMMARY_FORMAT);
    assert_eq!(summary["model"], "two-level");
    assert_eq!(summary["final_j"].as_f64().unwrap(), out.record.final_j);
    assert_eq!(summary["config"]["seed"], 3);

    let (header, its) = cli::read_log(BufReader::new(File::open(&out.artifacts.log).unwrap())).unwrap();
    assert_eq!(header, out.record.config);
    assert_eq!(its, out.record.iterations);
}

#[test]
fn runs_are_deterministic_apart_from_timings() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut cb = two_level_in(b.path());
    cb.ism.workers = None;
    let ra = cli::cmd_run(&two_level_in(a.path())).unwrap();
    let rb = cli::cmd_run(&cb).unwrap();
    assert_eq!(ra.control.as_slice(), rb.control.as_slice());
    assert_eq!(ra.record.final_j.to_bits(), rb.record.final_j.to_bits());
    for (x, y) in ra.record.iterations.iter().zip(&rb.record.iterations) {
        assert_eq!(x.j.to_bits(), y.j.to_bits());
        assert_eq!(x.err.to_bits(), y.err.to_bits());
        assert_eq!(x.sub_values, y.sub_values);
    }
}

#[test]
fn log_rejects_foreign_header() {
    let err = cli::read_log(BufReader::new("{\"format\":\"other/9\"}\n".as_bytes())).unwrap_err();
    assert!(matches!(err, IsmError::Wire(_)));
    assert!(cli::read_log(BufReader::new("".as_bytes())).is_err());
}

#[test]
fn initial_control_file_with_wrong_shape() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u0.csv");
    fs::write(&path, "t,u_1\n0.25,1.0\n0.75,2.0\n").unwrap();
    let mut cfg = two_level_in(dir.path());
    cfg.ism.initial_control = Some(path);
    assert_eq!(config_key(cli::cmd_run(&cfg).unwrap_err()), "ism.initial_control");
}

#[test]
fn resume_from_written_control() {
    let dir = tempfile::tempdir().unwrap();
    let first = cli::cmd_run(&two_level_in(dir.path())).unwrap();
    let mut cfg = two_level_in(&dir.path().join("second"));
    cfg.ism.initial_control = Some(first.artifacts.control.clone());
    let second = cli::cmd_run(&cfg).unwrap();
    assert_eq!(second.initial_j.to_bits(), first.record.final_j.to_bits());
    assert!(second.record.final_j > second.initial_j);
}

#[test]
fn verify_theorems_quick_passes() {
    let report = cli::cmd_verify(Scope::Theorems, 11, true).unwrap();
    assert!(report.passed(), "{}", report.to_table());
    assert_eq!(report.checks.len(), 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("verify.json");
    cli::write_verify_report(&report, &path).unwrap();
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(v["format"], cli::VERIFY_FORMAT);
    assert!("sideways".parse::<Scope>().is_err());
}

#[test]
fn bench_writes_table_and_profile() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = two_level_in(dir.path());
    let out = cli::cmd_bench(&cfg, None).unwrap();
    assert_eq!(out.records.len(), 2);
    let csv = fs::read_to_string(&out.csv).unwrap();
    assert!(csv.contains("# format: ism-efficiency/1"));
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 3, "{csv}");
    assert!(rows[1].starts_with("1,"));
    assert!(rows[2].starts_with("2,"));
    assert!(dir.path().join("history_n1.csv").exists());
    assert!(dir.path().join("history_n2.csv").exists());
    let profile: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out.profile).unwrap()).unwrap();
    assert_eq!(profile["runs"].as_array().unwrap().len(), 2);
    assert_eq!(profile["runs"][1]["workers"], 2);

    let mut cfg = two_level_in(dir.path());
    cfg.bench = None;
    assert_eq!(config_key(cli::cmd_bench(&cfg, None).unwrap_err()), "bench");
}

#[test]
fn binary_run_and_verify() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, TWO_LEVEL).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ism"))
        .args(["run", "--config"])
        .arg(&path)
        .arg("--out-dir")
        .arg(dir.path().join("out"))
        .args(["--workers", "0", "--seed", "5"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/summary.json").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["seed"], 5);
    assert_eq!(summary["workers"], 1);

    let out = Command::new(env!("CARGO_BIN_EXE_ism"))
        .args(["verify", "theorems", "--quick"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));

    let out = Command::new(env!("CARGO_BIN_EXE_ism")).args(["run"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
