use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[scenario]
substations = 3
days = 28

[calibration]
n = 60

[select]
model_features = 3

[gp]
restarts = 2

[eval]
n_train = 80
sizes = [40, 80]
k_max = 3
seeds = [1, 2]

[grid]
resolution = 12
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ubem-gp"));
    c.env_remove("UBEM_GP_CONFIG");
    for (k, _) in std::env::vars() {
        if k.starts_with("UBEM_GP__") {
            c.env_remove(k);
        }
    }
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let config = dir.join("config.toml");
    if !config.exists() {
        std::fs::write(&config, SMALL).unwrap();
    }
    bin().arg("--config").arg(&config).arg("--out-dir").arg(dir.join("run")).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no JSON error in {stderr}"));
    serde_json::from_str(line).unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn synth_writes_the_file_contracts() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth"]);
    let data = dir.path().join("run/data");
    let files: Vec<_> = std::fs::read_dir(data.join("measurements")).unwrap().collect();
    assert_eq!(files.len(), 3);
    let s01 = std::fs::read_to_string(data.join("measurements/S01.csv")).unwrap();
    assert_eq!(s01.lines().next().unwrap(), "substation_id,timestamp,heat_power_kw,flow_m3h,supply_temp_c,return_temp_c");
    assert_eq!(s01.lines().count(), 28 * 24 + 1);
    assert!(s01.lines().nth(1).unwrap().starts_with("S01,2021-01-04T00:00:00Z,"));
    let weather = std::fs::read_to_string(data.join("weather.csv")).unwrap();
    assert_eq!(weather.lines().next().unwrap(), "timestamp,temp_c,ghi_wm2");
    assert_eq!(weather.lines().count(), 28 * 24 + 1);

    let first = tree(&data);
    ok(dir.path(), &["synth"]);
    assert_eq!(tree(&data), first, "synth is not byte-identical across reruns");

    ok(dir.path(), &["--seed", "43", "synth"]);
    assert_ne!(tree(&data), first, "--seed had no effect");
}

#[test]
fn pipeline_is_deterministic_resumable_and_tamper_aware() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        ok(d, &["synth"]);
        let out = ok(d, &["pipeline"]);
        for stage in ["clean", "calibrate", "build-ve", "select", "train", "eval", "grid"] {
            assert!(out.contains(&format!("{stage}: done")), "{stage} did not run:\n{out}");
        }
    }
    let (ta, tb) = (tree(&a.path().join("run")), tree(&b.path().join("run")));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(v == &tb[k], "{} differs between identical runs", k.display());
    }
    for expected in [
        "manifest.json",
        "clean/S01_mask.csv",
        "clean/screens.json",
        "calibration/index.json",
        "ve/dataset.csv",
        "ve/dataset.csv.meta.json",
        "ve/feature_schema.json",
        "select/report.json",
        "model/model.json",
        "eval/interpolation.json",
        "eval/extrapolation.json",
        "grid/summary.json",
    ] {
        assert!(ta.contains_key(Path::new(expected)), "missing artifact {expected}");
    }

    // every JSON artifact carries the stamp
    for (k, v) in &ta {
        if k.extension().is_some_and(|e| e == "json") && k != Path::new("manifest.json") {
            let j: serde_json::Value = serde_json::from_slice(v).unwrap();
            let stamp = &j["stamp"];
            assert!(stamp["config_hash"].is_string() && stamp["seed"] == 42 && stamp["tool_version"].is_string(), "{}", k.display());
        }
    }

    let again = ok(a.path(), &["pipeline"]);
    assert_eq!(again.matches("up to date").count(), 7, "{again}");

    let report = a.path().join("run/select/report.json");
    let original = std::fs::read(&report).unwrap();
    std::fs::write(&report, b"{\"tampered\": true}").unwrap();
    let out = ok(a.path(), &["pipeline"]);
    assert!(out.contains("select: done"), "{out}");
    assert!(out.contains("train: up to date"), "identical recomputed output should leave downstream cached:\n{out}");
    assert_eq!(std::fs::read(&report).unwrap(), original);

    // a config change reruns only what depends on it
    std::fs::write(a.path().join("config.toml"), SMALL.replace("resolution = 12", "resolution = 9")).unwrap();
    let out = ok(a.path(), &["pipeline"]);
    assert!(out.contains("eval: up to date") && out.contains("grid: done"), "{out}");
    let curve = std::fs::read_to_string(a.path().join("run/grid/curve_power_variation.csv"));
    if let Ok(curve) = curve {
        assert_eq!(curve.lines().count(), 10);
    }
}

#[test]
fn subcommands_honor_overrides_and_report_errors() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    ok(dir, &["synth"]);

    let out = run(dir, &["pipeline", "--stage", "eval"]);
    assert_eq!(out.status.code(), Some(3));
    let err = error_json(&out);
    assert_eq!(err["error"]["kind"], "missing_dependency");
    assert_eq!(err["error"]["stage"], "eval");
    assert!(err["error"]["message"].as_str().unwrap().contains("run `build-ve` first"));

    for stage in ["clean", "calibrate", "build-ve", "select"] {
        ok(dir, &[stage]);
    }
    ok(dir, &["train", "--features", "hdd,power_variation", "--n", "50"]);
    let model: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("run/model/model.json")).unwrap()).unwrap();
    assert_eq!(model["data"]["artifact"]["features"], serde_json::json!(["hdd", "power_variation"]));
    assert_eq!(model["data"]["n_train"], 50);
    assert_eq!(model["data"]["artifact"]["train_rows"].as_array().unwrap().len(), 50);

    let table = ok(dir, &["eval", "--split", "extrapolation"]);
    for label in ["Overall", "Min", "Max", "MSE", "Coverage", "NLPD"] {
        assert!(table.contains(label), "{table}");
    }
    assert!(dir.join("run/eval/extrapolation.json").exists());

    ok(dir, &["sweep-features", "--k", "1..3", "--n", "40"]);
    let sweep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("run/sweep/features.json")).unwrap()).unwrap();
    let values: Vec<u64> = sweep["data"]["points"].as_array().unwrap().iter().map(|p| p["value"].as_u64().unwrap()).collect();
    assert_eq!(values, vec![1, 2, 3]);
    let csv = std::fs::read_to_string(dir.join("run/sweep/features.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "split,axis,value,seed,n_test,mse,nlpd,coverage95");
    assert_eq!(csv.lines().count(), 1 + 3 * 2 * 2);

    let out = run(dir, &["train", "--features", "no_such_feature"]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_json(&out);
    assert_eq!(err["error"]["stage"], "train");
}

#[test]
fn configuration_errors_and_reference() {
    let d = tempfile::tempdir().unwrap();
    let reference = bin().arg("config-reference").output().unwrap();
    assert!(reference.status.success());
    let text = String::from_utf8(reference.stdout).unwrap();
    assert!(text.contains("[gp]") && text.contains("# "));
    let path = d.path().join("ref.toml");
    std::fs::write(&path, &text).unwrap();
    let out = bin().arg("--config").arg(&path).arg("--out-dir").arg(d.path().join("r")).arg("synth").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    std::fs::write(&path, "[gp]\nrestarts = 0\n").unwrap();
    let out = bin().arg("--config").arg(&path).arg("synth").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["error"]["kind"], "config");
    assert!(err["error"]["message"].as_str().unwrap().contains("gp.restarts"));

    std::fs::write(&path, "[scenario]\nsubstation = 3\n").unwrap();
    let out = bin().arg("--config").arg(&path).arg("synth").output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // environment overrides beat the file
    std::fs::write(&path, "[scenario]\nsubstations = 3\ndays = 14\n").unwrap();
    let out = bin()
        .arg("--config")
        .arg(&path)
        .arg("--out-dir")
        .arg(d.path().join("e"))
        .arg("synth")
        .env("UBEM_GP__SCENARIO__SUBSTATIONS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read_dir(d.path().join("e/data/measurements")).unwrap().count(), 2);
}
