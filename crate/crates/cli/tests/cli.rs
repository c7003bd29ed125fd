use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"{
    "algorithm": "fedadamw",
    "task": {"kind": "quadratic", "dim": 8, "clients": 12, "sigma_g": 2.0, "sigma_l": 0.5},
    "participating": 4,
    "local_steps": 3,
    "rounds": 6,
    "optim": {"eta": 0.01, "alpha": 0.5, "lambda": 0.01},
    "seed": 5
}"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fedopt-lab"));
    c.env_remove("FEDOPT_LAB_OUT");
    c
}

fn exec(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|r| r.unwrap()).collect()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn run_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.json", SMALL);
    let out = tmp.path().join("out");
    let o = exec(bin().arg("run").arg(&cfg).arg("--out").arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let rows = csv_rows(&out.join("metrics.csv"));
    assert_eq!(rows.len(), 6);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[0].parse::<usize>().unwrap(), i);
        assert!(row[1].parse::<f64>().unwrap().is_finite());
    }
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["algorithm"], "fedadamw");
    assert_eq!(summary["rounds"], 6);
    assert_eq!(summary["dim"], 8);
    assert_eq!(summary["empty_client_repairs"], 0);
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);
    let last_loss: f64 = rows[5][1].parse().unwrap();
    assert_eq!(summary["final"]["loss"].as_f64().unwrap(), last_loss);
    let resolved = json(&out.join("config_resolved.json"));
    assert_eq!(resolved["task_seed"], 5);
    assert_eq!(resolved["optim"]["beta2"], 0.999);
}

#[test]
fn resolved_config_replays_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.json", SMALL);
    let first = tmp.path().join("first");
    assert!(exec(bin().arg("run").arg(&cfg).arg("--out").arg(&first)).status.success());
    let replay = tmp.path().join("replay");
    let o = exec(bin().args(["--jobs", "3", "run"]).arg(first.join("config_resolved.json")).arg("--out").arg(&replay));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(first.join("metrics.csv")).unwrap(), fs::read(replay.join("metrics.csv")).unwrap());
    assert_eq!(json(&first.join("summary.json"))["config_hash"], json(&replay.join("summary.json"))["config_hash"]);
}

#[test]
fn seed_flag_changes_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.json", SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(exec(bin().arg("run").arg(&cfg).arg("--out").arg(&a)).status.success());
    assert!(exec(bin().args(["--seed", "6", "run"]).arg(&cfg).arg("--out").arg(&b)).status.success());
    assert_ne!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
    assert_eq!(json(&b.join("config_resolved.json"))["seed"], 6);
}

#[test]
fn missing_field_exits_2_and_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.json", &SMALL.replace("\"algorithm\": \"fedadamw\",", ""));
    let o = exec(bin().arg("run").arg(&cfg).arg("--out").arg(tmp.path().join("o")));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("algorithm"));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn invalid_values_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    for (from, to) in [
        ("\"participating\": 4", "\"participating\": 13"),
        ("\"eta\": 0.01", "\"eta\": -1.0"),
        ("\"alpha\": 0.5", "\"alpha\": 1.5"),
        ("\"rounds\": 6", "\"rounds\": 6, \"partition\": {\"rule\": \"equal\", \"blocks\": 9}"),
    ] {
        let cfg = write(tmp.path(), "bad.json", &SMALL.replace(from, to));
        let o = exec(bin().arg("run").arg(&cfg).arg("--out").arg(tmp.path().join("o")));
        assert_eq!(o.status.code(), Some(2), "{to}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = exec(bin().arg("run").arg(tmp.path().join("absent.json")));
    assert_eq!(o.status.code(), Some(1));
    let cfg = write(tmp.path(), "ok.json", SMALL);
    let o = exec(bin().args(["--jobs", "0", "run"]).arg(&cfg));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergence_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let body = SMALL
        .replace("\"algorithm\": \"fedadamw\"", "\"algorithm\": \"fedavg\"")
        .replace("\"eta\": 0.01", "\"eta\": 1e6")
        .replace("\"rounds\": 6", "\"rounds\": 60");
    let cfg = write(tmp.path(), "blowup.json", &body);
    let o = exec(bin().arg("run").arg(&cfg).arg("--out").arg(tmp.path().join("o")));
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let msg = String::from_utf8_lossy(&o.stderr);
    assert!(msg.contains("round") && msg.contains("client"), "{msg}");
}

#[test]
fn alpha_sweep_table() {
    let tmp = tempfile::tempdir().unwrap();
    let body = SMALL.replace(
        "\"seed\": 5",
        "\"seed\": 5, \"repetitions\": 5, \"sweep\": {\"alpha\": [0.0, 0.25, 0.5, 0.75, 1.0]}",
    );
    let cfg = write(tmp.path(), "sweep.json", &body);
    let out = tmp.path().join("sweep");
    let o = exec(bin().args(["--jobs", "2", "sweep"]).arg(&cfg).arg("--out").arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let mut runs = 0;
    for c in 0..5 {
        let cell = out.join(format!("cell-{c:03}"));
        assert!(cell.join("cell.json").exists());
        for r in 0..5 {
            assert_eq!(csv_rows(&cell.join(format!("rep-{r}")).join("metrics.csv")).len(), 6);
            runs += 1;
        }
    }
    assert_eq!(runs, 25);
    let table = csv_rows(&out.join("table.csv"));
    assert_eq!(table.len(), 5);
    let alphas: Vec<f64> = table.iter().map(|r| r[2].parse().unwrap()).collect();
    assert_eq!(alphas, [0.0, 0.25, 0.5, 0.75, 1.0]);
    for row in &table {
        assert_eq!(&row[8], "5");
        assert_eq!(&row[9], "0");
    }
    assert_eq!(json(&out.join("failures.json")), Value::Array(vec![]));

    let rep3 = json(&out.join("cell-002/rep-3/config_resolved.json"));
    assert_eq!((rep3["seed"].as_u64(), rep3["task_seed"].as_u64()), (Some(8), Some(8)));
}

#[test]
fn single_cell_sweep_matches_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.json", SMALL);
    let run_out = tmp.path().join("run");
    let sweep_out = tmp.path().join("sweep");
    assert!(exec(bin().arg("run").arg(&cfg).arg("--out").arg(&run_out)).status.success());
    assert!(exec(bin().arg("sweep").arg(&cfg).arg("--out").arg(&sweep_out)).status.success());
    assert_eq!(
        fs::read(run_out.join("metrics.csv")).unwrap(),
        fs::read(sweep_out.join("cell-000/rep-0/metrics.csv")).unwrap()
    );
    assert_eq!(csv_rows(&sweep_out.join("table.csv")).len(), 1);
}

#[test]
fn sweep_jobs_do_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let body = SMALL.replace(
        "\"seed\": 5",
        "\"seed\": 5, \"repetitions\": 2, \"sweep\": {\"algorithm\": [\"fedavg\", \"scaffold\", \"fedcm\", \"local_adamw\", \"fedadamw\"]}",
    );
    let cfg = write(tmp.path(), "sweep.json", &body);
    let serial = tmp.path().join("serial");
    let parallel = tmp.path().join("parallel");
    assert!(exec(bin().arg("sweep").arg(&cfg).arg("--out").arg(&serial)).status.success());
    assert!(exec(bin().args(["--jobs", "4", "sweep"]).arg(&cfg).arg("--out").arg(&parallel)).status.success());
    assert_eq!(fs::read(serial.join("table.csv")).unwrap(), fs::read(parallel.join("table.csv")).unwrap());
    for c in 0..5 {
        let rel = format!("cell-{c:03}/rep-1/metrics.csv");
        assert_eq!(fs::read(serial.join(&rel)).unwrap(), fs::read(parallel.join(&rel)).unwrap(), "{rel}");
    }
}

#[test]
fn failed_sweep_cells_are_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let body = SMALL
        .replace("\"algorithm\": \"fedadamw\"", "\"algorithm\": \"fedavg\"")
        .replace("\"seed\": 5", "\"seed\": 5, \"sweep\": {\"local_steps\": [1, 400]}")
        .replace("\"eta\": 0.01", "\"eta\": 2.0");
    let cfg = write(tmp.path(), "sweep.json", &body);
    let out = tmp.path().join("out");
    let o = exec(bin().arg("sweep").arg(&cfg).arg("--out").arg(&out));
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let failures = json(&out.join("failures.json"));
    let failures = failures.as_array().unwrap();
    assert!(!failures.is_empty());
    assert!(failures.iter().all(|f| f["exit_code"] == 3));
    assert_eq!(csv_rows(&out.join("table.csv")).len(), 2);
}

#[test]
fn output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "named.json", SMALL);
    let root = tmp.path().join("root");
    let o = exec(bin().env("FEDOPT_LAB_OUT", &root).arg("run").arg(&cfg));
    assert!(o.status.success());
    assert!(root.join("named/metrics.csv").exists());

    let cfg = write(tmp.path(), "dir.json", &SMALL.replace("\"seed\": 5", "\"seed\": 5, \"output_dir\": \"custom\""));
    assert!(exec(bin().env("FEDOPT_LAB_OUT", &root).arg("run").arg(&cfg)).status.success());
    assert!(root.join("custom/summary.json").exists());

    let o = exec(bin().env("FEDOPT_LAB_OUT", &root).args(["calc", "rate", "--l", "1", "--delta", "1", "--sigma-l", "1", "--s", "1", "--k", "1", "--r", "100", "--eps", "0.1"]));
    assert!(o.status.success());
    assert!(root.join("calc/rate.json").exists());
}

fn calc(args: &[&str]) -> (Option<i32>, Value) {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("rec.json");
    let o = exec(bin().arg("calc").args(args).arg("--out").arg(&path));
    let rec = if o.status.success() {
        let printed: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(printed, json(&path));
        printed
    } else {
        Value::Null
    };
    (o.status.code(), rec)
}

#[test]
fn calc_records() {
    let (code, rec) = calc(&["rate", "--l", "1", "--delta", "1", "--sigma-l", "1", "--s", "1", "--k", "1", "--r", "100", "--eps", "0.1"]);
    assert_eq!(code, Some(0));
    assert_eq!(rec["kind"], "rate");
    let v = rec["outputs"]["value"].as_f64().unwrap();
    let terms = &rec["terms"];
    assert!((v - terms["noise"].as_f64().unwrap() - terms["optimization"].as_f64().unwrap()).abs() < 1e-15);

    let (code, rec) = calc(&["pac", "--sigmas", "1", "--eta", "2", "--rho", "1", "--b", "1", "--n", "100", "--tau", "0.5"]);
    assert_eq!(code, Some(0));
    assert!((rec["outputs"]["value"].as_f64().unwrap() - 0.9994).abs() < 1e-3);
    assert_eq!(rec["inputs"]["sigmas"], serde_json::json!([1.0]));

    let (code, rec) = calc(&["cov", "--h", "2,0;0,8", "--eta", "0.01", "--b", "10"]);
    assert_eq!(code, Some(0));
    let m = &rec["outputs"]["covariance"];
    assert!((m[0][0].as_f64().unwrap() - 0.01 / 20.0 / 2f64.sqrt()).abs() < 1e-15);
    assert_eq!(m[0][1].as_f64().unwrap(), 0.0);

    let (code, rec) = calc(&["cov", "--h", "4", "--eta", "0.01", "--b", "10", "--simulate-steps", "200000", "--seed", "1"]);
    assert_eq!(code, Some(0));
    let emp = rec["outputs"]["empirical"][0][0].as_f64().unwrap();
    assert!((emp / 2.5e-4 - 1.0).abs() < 0.2, "{emp}");
}

#[test]
fn calc_domain_errors_exit_3() {
    assert_eq!(calc(&["pac", "--sigmas", "0", "--eta", "2", "--rho", "1", "--b", "1", "--n", "100", "--tau", "0.5"]).0, Some(3));
    assert_eq!(calc(&["pac", "--sigmas", "1", "--eta", "2", "--rho", "1", "--b", "1", "--n", "100", "--tau", "1.5"]).0, Some(3));
    assert_eq!(calc(&["cov", "--h", "1,2;3,4", "--eta", "0.01", "--b", "10"]).0, Some(3));
    assert_eq!(calc(&["cov", "--h", "-1", "--eta", "0.01", "--b", "10"]).0, Some(3));
    assert_eq!(calc(&["rate", "--l", "1", "--delta", "1", "--sigma-l", "1", "--s", "0", "--k", "1", "--r", "1", "--eps", "0.1"]).0, Some(3));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        fedopt_lab::config::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        seen += 1;
    }
    assert!(seen >= 5);
    assert!(repo_config("alpha_sweep.json").exists());
}
