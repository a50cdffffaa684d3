use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn dfm(args: &[&str], config: Option<&str>, dir: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dfm"));
    cmd.args(args).arg("--out").arg(dir);
    if let Some(json) = config {
        let path = dir.join("config.json");
        std::fs::write(&path, json).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

/// Data rows of a CSV written by the tool, after checking the seed comment.
fn rows(path: &Path, seed: u64) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), format!("# seed={seed}"));
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).unwrap();
    let header = reader.headers().unwrap().iter().map(String::from).collect();
    let data = reader.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
    (header, data)
}

fn assert_round_trips(field: &str) {
    if field == "inf" || field == "skipped" {
        return;
    }
    let v: f64 = field.parse().unwrap();
    assert_eq!(format!("{v:?}").parse::<f64>().unwrap().to_bits(), v.to_bits());
    assert_eq!(format!("{:.16e}", v).parse::<f64>().unwrap().to_bits(), v.to_bits());
}

#[test]
fn verify_default_config_passes() {
    let dir = TempDir::new().unwrap();
    let out = dfm(&["verify"], None, dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("verify_report.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["dynamics"], "urw");
    assert!(report["checks"].as_array().unwrap().len() >= 10);
}

#[test]
fn kernels_check_passes() {
    let dir = TempDir::new().unwrap();
    let out = dfm(&["kernels-check"], Some(r#"{"dynamics":"nnrw","m":5,"d":2}"#), dir.path());
    assert_eq!(code(&out), 0);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    for bad in [
        r#"{"eta":1e-5}"#,
        r#"{"m":2,"d":1,"coupling":{"type":"independent","mu0":[0.5,0.4],"mu1":[0.5,0.5]}}"#,
        r#"{"train":{"lr":0}}"#,
        r#"{"train":{"lr":-1}}"#,
        r#"{"unknown":true}"#,
        "not json",
    ] {
        let out = dfm(&["verify"], Some(bad), dir.path());
        assert_eq!(code(&out), 2, "{bad}");
        assert!(!out.stderr.is_empty());
    }
    assert_eq!(code(&dfm(&["frobnicate"], None, dir.path())), 2);
    assert_eq!(code(&dfm(&["sample", "--threads", "0"], None, dir.path())), 2);
}

const SAMPLE: &str = r#"{"dynamics":"urw","m":3,"d":1,"seed":31,"paths":3000,"events":true,
  "coupling":{"type":"independent","mu0":[0.2,0.3,0.5],"mu1":[0.6,0.1,0.3]}}"#;

#[test]
fn sampling_is_reproducible_across_runs_and_threads() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    assert_eq!(code(&dfm(&["sample", "--threads", "1"], Some(SAMPLE), a.path())), 0);
    assert_eq!(code(&dfm(&["sample", "--threads", "4"], Some(SAMPLE), b.path())), 0);
    for name in ["final_states.csv", "events.csv"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
    }
    let (header, data) = rows(&a.path().join("final_states.csv"), 31);
    assert_eq!(header, ["path_id", "final_index"]);
    assert_eq!(data.len(), 3000);
    let (header, events) = rows(&a.path().join("events.csv"), 31);
    assert_eq!(header, ["path_id", "time", "from_index", "jump_family", "jump_axis", "jump_param", "to_index"]);
    for e in &events {
        assert_eq!(e[3], "uniform");
        assert_round_trips(&e[1]);
        let (from, to, param): (usize, usize, usize) = (e[2].parse().unwrap(), e[6].parse().unwrap(), e[5].parse().unwrap());
        assert_eq!(to, (from + param) % 3);
    }
}

#[test]
fn zero_paths_give_header_only_file() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&dfm(&["sample"], Some(r#"{"paths":0,"seed":5}"#), dir.path())), 0);
    let text = std::fs::read_to_string(dir.path().join("final_states.csv")).unwrap();
    assert_eq!(text, "# seed=5\npath_id,final_index\n");
}

#[test]
fn sweep_rows_are_consistent() {
    let dir = TempDir::new().unwrap();
    let config = r#"{"dynamics":"nnrw","m":3,"d":1,"seed":2,
      "coupling":{"type":"independent","mu0":[0.1,0.3,0.6],"mu1":[0.5,0.2,0.3]},
      "sweep":{"h":[0.4,0.2,0.1],"eta":[0.05,0.1],"gamma":[0,0.3]}}"#;
    let out = dfm(&["sweep"], Some(config), dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (header, data) = rows(&dir.path().join("sweep.csv"), 2);
    assert_eq!(header, ["h", "eta", "gamma", "eps_tilde", "K", "kl", "tv_early", "tv_target", "runtime_ms"]);
    assert_eq!(data.len(), 12);
    let f = |r: &Vec<String>, i: usize| r[i].parse::<f64>().unwrap();
    for r in &data {
        for field in &r[..8] {
            assert_round_trips(field);
        }
        if f(r, 2) == 0.0 {
            assert_eq!(f(r, 3), 0.0);
        }
    }
    for eta in [0.05, 0.1] {
        let kls: Vec<f64> = data.iter().filter(|r| f(r, 1) == eta && f(r, 2) == 0.0).map(|r| f(r, 5)).collect();
        assert_eq!(kls.len(), 3);
        assert!(kls[0] > kls[1] && kls[1] > kls[2], "{kls:?}");
    }
    // tv(mu_{1-eta}, mu_1) <= tv_early + tv_target
    let mu1 = [0.5, 0.2, 0.3];
    for r in &data {
        let eta = f(r, 1);
        let core = dfm_core_gap(eta, &mu1);
        assert!(f(r, 7) >= core - f(r, 6) - 1e-15);
    }
}

fn dfm_core_gap(eta: f64, mu1: &[f64]) -> f64 {
    use dfm_core::{Coupling, Dynamics, DynamicsKind, ExactEngine, LatticeSpec};
    let spec = LatticeSpec::new(3, 1).unwrap();
    let c = Coupling::independent(spec.clone(), &[0.1, 0.3, 0.6], mu1).unwrap();
    let e = ExactEngine::new(Dynamics::new(DynamicsKind::Nnrw, spec), &c).unwrap();
    dfm_core::tv(&e.interpolant_marginal(1.0 - eta).unwrap().probs, mu1).unwrap()
}

#[test]
fn training_outputs() {
    let dir = TempDir::new().unwrap();
    let out = dfm(&["train"], Some(r#"{"m":2,"d":1,"seed":4,"train":{"init":"exact"}}"#), dir.path());
    assert_eq!(code(&out), 0);
    let (header, data) = rows(&dir.path().join("train_history.csv"), 4);
    assert_eq!(header, ["step", "l_entropy", "l_two", "l_total"]);
    assert_eq!(data.len(), 1);
    assert!(data[0][3].parse::<f64>().unwrap() <= 1e-12);

    let config = r#"{"dynamics":"nnrw","m":2,"d":1,"seed":4,
      "coupling":{"type":"explicit","entries":[[0,1,0.7],[1,1,0.1],[1,0,0.2]]},
      "train":{"init":"perturbed:0.5","steps":500}}"#;
    let out = dfm(&["train"], Some(config), dir.path());
    assert_eq!(code(&out), 0);
    let (_, data) = rows(&dir.path().join("train_history.csv"), 4);
    let losses: Vec<f64> = data.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(*losses.last().unwrap() <= 1e-6);
    assert!(losses.windows(2).all(|w| w[1] <= w[0]));

    // the trained table feeds back into sampling
    let sample = r#"{"dynamics":"nnrw","m":2,"d":1,"seed":4,"paths":10,
      "coupling":{"type":"explicit","entries":[[0,1,0.7],[1,1,0.1],[1,0,0.2]]},
      "score":"tabular:trained_table.json"}"#;
    assert_eq!(code(&dfm(&["sample"], Some(sample), dir.path())), 0);
}
