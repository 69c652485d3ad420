use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dart(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dart"))
        .current_dir(dir)
        .env_remove("DART_OUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dart(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn generate(dir: &Path, name: &str) {
    ok(dir, &["--out-dir", ".", "generate", name]);
}

#[test]
fn generate_bundled_scenario_and_inspect() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), "clean_balanced");
    let info: Value = serde_json::from_str(&ok(tmp.path(), &["inspect", "clean_balanced.dfs", "--labels"])).unwrap();
    assert_eq!(info["num_batches"], 100);
    assert_eq!(info["num_samples"], 20000);
    assert_eq!(info["batches"][0]["labels"], serde_json::json!([100, 100, 0]));
    assert_eq!(info["header"]["layer_dims"], serde_json::json!([16, 32]));
}

#[test]
fn continual_ood_manifest_lists_switches() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), "continual_ood");
    let manifest = json(&tmp.path().join("continual_ood.manifest.json"));
    let switches: Vec<u64> = manifest["markers"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|m| m["kind"] == "ood_source")
        .map(|m| m["batch"].as_u64().unwrap())
        .collect();
    assert_eq!(switches, vec![34, 67]);
}

#[test]
fn malformed_scenario_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("bad.toml");
    let text = ok(tmp.path(), &["generate", "clean_balanced", "--print-spec"]).replace("batch_size = 200", "batch_size = 200\nbatchsize = 10");
    fs::write(&spec, text).unwrap();
    let out = dart(tmp.path(), &["generate", "bad.toml"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("batchsize"));
}

#[test]
fn detect_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), "covariate_shift");
    ok(tmp.path(), &["--out-dir", "a", "detect", "covariate_shift.dfs", "--axis-alignment"]);
    ok(tmp.path(), &["--out-dir", "b", "detect", "covariate_shift.dfs", "--axis-alignment"]);
    for f in ["batches.csv", "report.json"] {
        assert_eq!(fs::read(tmp.path().join("a").join(f)).unwrap(), fs::read(tmp.path().join("b").join(f)).unwrap());
    }
    let csv = fs::read_to_string(tmp.path().join("a/batches.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "batch,n,n_id,n_ood,auroc,fpr95,flips,mean_score_id,mean_score_ood,cos_l0,cos_l1"
    );
    assert_eq!(csv.lines().count(), 101);
}

#[test]
fn dart_beats_msp_on_the_separable_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), "clean_balanced");
    ok(tmp.path(), &["--out-dir", "dart", "detect", "clean_balanced.dfs"]);
    ok(tmp.path(), &["--out-dir", "msp", "detect", "clean_balanced.dfs", "--detector", "msp"]);
    let d = json(&tmp.path().join("dart/report.json"))["summary"]["mean_auroc"].as_f64().unwrap();
    let m = json(&tmp.path().join("msp/report.json"))["summary"]["mean_auroc"].as_f64().unwrap();
    assert!(d >= 0.98, "{d}");
    assert!(m < d, "{m} vs {d}");
}

#[test]
fn several_inputs_fan_out_into_subdirectories() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), "clean_balanced");
    generate(tmp.path(), "flip_inverted");
    let out = Command::new(env!("CARGO_BIN_EXE_dart"))
        .current_dir(tmp.path())
        .env("DART_OUT_DIR", "reports")
        .args(["detect", "clean_balanced.dfs", "flip_inverted.dfs", "--format", "json"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("reports/clean_balanced/report.json").exists());
    assert!(!tmp.path().join("reports/clean_balanced/batches.csv").exists());
    let flips = json(&tmp.path().join("reports/flip_inverted/report.json"))["flip_log"].as_array().unwrap().len();
    assert!(flips >= 1);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(dart(tmp.path(), &["detect"]).status.code(), Some(2));
    assert_eq!(dart(tmp.path(), &["detect", "missing.dfs"]).status.code(), Some(3));
    fs::write(tmp.path().join("junk.dfs"), b"NOPE").unwrap();
    assert_eq!(dart(tmp.path(), &["inspect", "junk.dfs"]).status.code(), Some(3));
    generate(tmp.path(), "well_separated_logits");
    assert_eq!(
        dart(tmp.path(), &["detect", "well_separated_logits.dfs", "--alpha", "1.5"]).status.code(),
        Some(4)
    );
    assert_eq!(
        dart(tmp.path(), &["detect", "well_separated_logits.dfs", "--layers", "7"]).status.code(),
        Some(4)
    );
    fs::write(tmp.path().join("f.csv"), "1,2\n3,4\n").unwrap();
    ok(tmp.path(), &["convert", "--layer", "f.csv", "-o", "bare.dfs"]);
    assert_eq!(dart(tmp.path(), &["detect", "bare.dfs"]).status.code(), Some(5));
    assert_eq!(dart(tmp.path(), &["theory", "bare.dfs"]).status.code(), Some(5));
}

#[test]
fn convert_then_detect_and_theory() {
    let tmp = tempfile::tempdir().unwrap();
    let (mut l0, mut l1, mut logits, mut labels) = (String::new(), String::new(), String::new(), String::new());
    for i in 0..120 {
        let ood = i % 3 == 0;
        let s = if ood { -1.0 } else { 1.0 };
        let wobble = (i as f64 * 0.37).sin() * 0.3;
        l0.push_str(&format!("{},{}\n", 2.0 * s + wobble, s - wobble));
        l1.push_str(&format!("{},{},{}\n", s + wobble, wobble, -s));
        let top = if ood { 0.5 } else { 5.0 };
        logits.push_str(&format!("{},{},{}\n", top + wobble, wobble, -wobble));
        labels.push_str(if ood { "ood\n" } else { "id\n" });
    }
    for (name, text) in [("l0.csv", &l0), ("l1.csv", &l1), ("logits.csv", &logits), ("labels.txt", &labels)] {
        fs::write(tmp.path().join(name), text).unwrap();
    }
    ok(
        tmp.path(),
        &[
            "convert", "--layer", "l0.csv", "--layer", "l1.csv", "--logits", "logits.csv", "--labels", "labels.txt",
            "--batch-size", "50", "-o", "conv.dfs",
        ],
    );
    let info: Value = serde_json::from_str(&ok(tmp.path(), &["inspect", "conv.dfs"])).unwrap();
    assert_eq!(info["num_batches"], 3);
    assert_eq!(info["batches"][2]["n"], 20);
    assert_eq!(info["header"]["num_classes"], 3);

    ok(tmp.path(), &["--out-dir", "r", "detect", "conv.dfs", "--layer-scores", "--save-state"]);
    let scores = fs::read_to_string(tmp.path().join("r/scores.csv")).unwrap();
    assert_eq!(scores.lines().next().unwrap(), "batch,sample,label,pseudo_label,fused,rds_l0,rds_l1");
    assert_eq!(scores.lines().count(), 121);
    assert!(tmp.path().join("r/tracker.json").exists());

    fs::write(tmp.path().join("bn.csv"), "gamma,sigma_sq,delta\n2.0,3.0,0.5\n1.0,1.0,1.0\n").unwrap();
    ok(tmp.path(), &["--out-dir", "t", "theory", "conv.dfs", "--layer", "1", "--bn-stats", "bn.csv"]);
    let t = json(&tmp.path().join("t/theory.json"));
    assert_eq!(t["layers"][0]["layer"], 1);
    assert_eq!(t["layers"][0]["separation"]["bound_holds"], true);
    let total = t["bn"]["total"].as_f64().unwrap();
    let expected = 4.0 / (3.0 + 1e-5) * 0.25 + 1.0 / (1.0 + 1e-5);
    assert!((total - expected).abs() < 1e-12);
}
