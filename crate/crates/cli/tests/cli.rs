//! The binary's subcommands, outputs and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn histoport(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_histoport")).args(args).output().expect("spawn histoport")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A 2-iteration run config without evaluation.
fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.json");
    fs::write(&path, r#"{"iterations": 2, "eval_every": 0, "eval_episodes": 0, "demos": 2}"#).unwrap();
    path
}

#[test]
fn gen_data_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let o = histoport(&["gen-data", "--episodes", "2", "--seed", "3", "--out", p(dir)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for file in ["episode_00000/obs_0.tns", "episode_00001/act_0.json"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    let labels: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("episode_00000/act_0.json")).unwrap()).unwrap();
    for key in ["pick", "place", "N", "seed"] {
        assert!(labels.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn exit_codes_distinguish_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere");
    assert_eq!(histoport(&["eval", "--checkpoint", p(&missing), "--episodes", "1"]).status.code(), Some(2));

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"no_such_key": 1}"#).unwrap();
    assert_eq!(histoport(&["--config", p(&bad), "eval", "--oracle", "--episodes", "1"]).status.code(), Some(3));

    let run = tmp.path().join("run");
    let cfg = tiny_config(tmp.path());
    assert!(histoport(&["--config", p(&cfg), "train", "--out", p(&run)]).status.success());
    let weights = run.join("checkpoint/weights.bin");
    let blob = fs::read(&weights).unwrap();
    fs::write(&weights, &blob[..blob.len() - 3]).unwrap();
    let o = histoport(&["eval", "--checkpoint", p(&run.join("checkpoint")), "--episodes", "1"]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn check_passes_and_detects_injected_fault() {
    let first = histoport(&["check"]);
    assert!(first.status.success(), "{}", stdout(&first));
    let second = histoport(&["check"]);
    assert_eq!(stdout(&first), stdout(&second));

    let faulty = histoport(&["check", "--inject-fault"]);
    assert_eq!(faulty.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&faulty.stderr).contains("group.homomorphism"));
}

#[test]
fn train_eval_and_viz() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let run = tmp.path().join("run");
    let o = histoport(&["--config", p(&cfg), "train", "--out", p(&run)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3, "{metrics}");
    assert!(metrics.starts_with("iteration,loss_pick_pos,loss_pick_angle,loss_place,eval_success_rate,wall_seconds"));

    let csv_path = tmp.path().join("eval.csv");
    let o = histoport(&["eval", "--checkpoint", p(&run.join("checkpoint")), "--episodes", "2", "--out", p(&csv_path)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("success "), "{}", stdout(&o));
    assert!(stdout(&o).contains("/100 ("));
    let mut rows = csv::Reader::from_path(&csv_path).unwrap();
    let rate: f64 = rows.records().next().unwrap().unwrap()[2].parse().unwrap();
    assert!((0.0..=100.0).contains(&rate));

    let viz = tmp.path().join("viz");
    let o = histoport(&["viz-eoh", "--checkpoint", p(&run.join("checkpoint")), "--stride", "8", "--out", p(&viz)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ppm = fs::read(viz.join("eoh_heatmap.ppm")).unwrap();
    let header = String::from_utf8_lossy(&ppm[..15]).into_owned();
    let mut fields = header.split_whitespace();
    assert_eq!(fields.next(), Some("P6"));
    let w: usize = fields.next().unwrap().parse().unwrap();
    let h: usize = fields.next().unwrap().parse().unwrap();
    let header_len = format!("P6\n{w} {h}\n255\n").len();
    assert_eq!(ppm.len(), header_len + 3 * w * h);
    let svg = fs::read_to_string(viz.join("eoh_arrows.svg")).unwrap();
    let bins = 12;
    assert_eq!(svg.matches("<line").count(), h.div_ceil(8) * w.div_ceil(8) * bins);
}

#[test]
fn oracle_eval_is_perfect() {
    let o = histoport(&["eval", "--oracle", "--episodes", "10"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("success 100.0/100"), "{}", stdout(&o));
}

#[test]
fn bench_parameter_count_ignores_repeats() {
    let tmp = tempfile::tempdir().unwrap();
    let mut counts = Vec::new();
    for repeats in ["1", "5"] {
        let path = tmp.path().join(format!("bench_{repeats}.csv"));
        let o = histoport(&["bench", "--ns", "36,72", "--repeats", repeats, "--out", p(&path)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let mut r = csv::Reader::from_path(&path).unwrap();
        let header = r.headers().unwrap().clone();
        let col = header.iter().position(|h| h == "params").expect("params column");
        let params: Vec<String> = r.records().map(|rec| rec.unwrap()[col].to_string()).collect();
        assert_eq!(params.len(), 2);
        assert_eq!(params[0], params[1]);
        counts.push(params);
    }
    assert_eq!(counts[0], counts[1]);
}
