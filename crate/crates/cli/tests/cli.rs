use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_eigengrowth"));
    c.env_remove("EIGENGROWTH_OUT");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin().arg("run").arg(config).arg("--out").arg(out).args(extra).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const SMALL_RETURN_MAP: &str = r#"
experiments = ["return-map", "recurrence"]
seed = 5

[model]
kind = "sphere"
radius = 1.5

[params]
directions = 12
t_max = 12.0

[[check]]
kind = "range"
table = "return_map"
column = "return_time"
target = 4.71238898038469
max = 1e-6
"#;

#[test]
fn lists_every_experiment() {
    let o = bin().arg("list-experiments").output().unwrap();
    assert!(o.status.success());
    let names: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(names, ["flow", "return-map", "recurrence", "quasimode", "defect", "bounds", "scaling", "cluster"]);
}

#[test]
fn scaling_bundle_passes_its_checks() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("scaling");
    let o = run(&configs().join("sphere-scaling.toml"), &out, &["--check"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let csv = fs::read_to_string(out.join("scaling.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("l,h,sup,scaled_sup"));
    let last: Vec<f64> = lines.last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(last[0], 200.0);
    assert!((last[3] / 0.3989422804014327 - 1.0).abs() < 0.03);

    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["experiments"][0]["schema"], "scaling/1");
    assert_eq!(meta["tables"]["scaling"]["rows"], 3);
    assert!(meta["experiments"][0]["provenance"].as_array().unwrap().iter().any(|p| p == "quasimode::sup_norm_scan"));
}

#[test]
fn tampered_tables_fail_the_check() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "small.toml", SMALL_RETURN_MAP);
    let out = tmp.path().join("bundle");
    assert!(run(&config, &out, &[]).status.success());

    let ok = bin().arg("check").arg(&out).arg(&config).output().unwrap();
    assert!(ok.status.success(), "{}", stdout(&ok));
    assert!(stdout(&ok).starts_with("PASS"));

    let path = out.join("return_map.csv");
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, text.replacen("returned", "returned ", 1)).unwrap();
    let bad = bin().arg("check").arg(&out).arg(&config).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(stdout(&bad).contains("sha256"), "{}", stdout(&bad));
}

#[test]
fn missing_tables_fail_with_a_reason() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "small.toml", SMALL_RETURN_MAP);
    let out = tmp.path().join("bundle");
    assert!(run(&config, &out, &[]).status.success());
    let criteria = write_config(
        tmp.path(),
        "criteria.toml",
        "[[check]]\nkind = \"equals\"\ntable = \"cluster\"\ncolumn = \"l\"\nvalue = \"200\"\n",
    );
    let o = bin().arg("check").arg(&out).arg(&criteria).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("missing table `cluster`"));
}

#[test]
fn failing_checks_set_the_exit_status() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL_RETURN_MAP.replace("4.71238898038469", "3.141592653589793");
    let config = write_config(tmp.path(), "wrong.toml", &text);
    let o = run(&config, &tmp.path().join("bundle"), &["--check"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn empty_experiment_list_gives_an_empty_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("empty");
    let o = run(&configs().join("empty.toml"), &out, &[]);
    assert!(o.status.success());
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    assert!(meta["tables"].as_object().unwrap().is_empty());
    assert!(meta["experiments"].as_array().unwrap().is_empty());
}

#[test]
fn reruns_are_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "small.toml", SMALL_RETURN_MAP);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(run(&config, &a, &["--threads", "1"]).status.success());
    assert!(run(&config, &b, &[]).status.success());
    for file in ["return_map.csv", "recurrence.csv", "recurrence_summary.csv", "metadata.json"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn invalid_configs_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(
        tmp.path(),
        "bad.toml",
        "experiments = [\"scaling\"]\n[model]\nkind = \"sphere\"\n[params]\nh = [0.01, 0.02]\n",
    );
    let o = run(&bad, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("params.h"));

    let typo = write_config(tmp.path(), "typo.toml", "[model]\nkind = \"sphere\"\nradios = 2.0\n");
    let o = run(&typo, &tmp.path().join("out"), &[]);
    let err = String::from_utf8_lossy(&o.stderr).into_owned();
    assert_eq!(o.status.code(), Some(1));
    assert!(err.contains("radios") && err.contains("line"), "{err}");
}

#[test]
fn output_directory_can_come_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("from-env");
    let o = bin().env("EIGENGROWTH_OUT", &out).arg("run").arg(configs().join("empty.toml")).output().unwrap();
    assert!(o.status.success());
    assert!(out.join("metadata.json").exists());
}
