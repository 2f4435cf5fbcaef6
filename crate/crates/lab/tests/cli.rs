use std::path::Path;
use std::process::Command;

const TINY: &str = "[data]\nn_train = 200\nn_test = 100\n\
[experiment]\nrho = 0.1\nseeds = 0\nworkers = 1\n\
[train]\nbiased_iters = 20\ndebiased_iters = 20\nbatch_size = 16\nhidden = 8\n\
[bounds]\npopulation_per_group = 500\nmc_trials = 1000\n";

fn dpr(dir: &Path, args: &[&str]) -> (i32, String) {
    let cfg = dir.join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dpr"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn run_succeeds_and_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = dpr(dir.path(), &["run", "--mode", "erm"]);
    assert_eq!(code, 0, "{err}");
    let metrics = std::fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "run_id,phase,rho,seed,group,n,avg_loss,accuracy,unbiased_acc,worst_group_acc,loss_gap"
    );
    assert_eq!(lines.count(), 3);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["run", "--rho", "1.5"][..],
        &["run", "--seeds", "x"],
        &["ablate"],
        &["run", "--idx-images", "missing.idx"],
        &["run", "--tau", "0"],
    ] {
        assert_eq!(dpr(dir.path(), args).0, 2, "{args:?}");
    }
}

#[test]
fn unreadable_checkpoint_fails_the_cell() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("bad.dprm");
    std::fs::write(&ckpt, b"not a checkpoint").unwrap();
    let (code, _) = dpr(dir.path(), &["verify-bounds", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(code, 1);
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn q_grid_gives_one_row_per_q_and_rho() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = dpr(dir.path(), &["ablate", "--q", "0.3,0.5,0.7,0.9", "--rho", "0.1,0.2"]);
    assert_eq!(code, 0, "{err}");
    let summary = rows(&dir.path().join("out/ablation_q_summary.csv"));
    assert_eq!(summary.len(), 8);
    let mut keys: Vec<(String, String)> = summary.iter().map(|r| (r[2].to_string(), r[3].to_string())).collect();
    keys.dedup();
    assert_eq!(keys.len(), 8);
}

#[test]
fn summary_aggregates_exactly_the_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = dpr(dir.path(), &["run", "--mode", "erm", "--seeds", "0..3"]);
    assert_eq!(code, 0, "{err}");
    let accs: Vec<f64> = rows(&dir.path().join("out/metrics.csv"))
        .iter()
        .filter(|r| &r[4] == "all")
        .map(|r| r[7].parse().unwrap())
        .collect();
    assert_eq!(accs.len(), 3);
    let mean = accs.iter().sum::<f64>() / 3.0;
    let std = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
    let summary = rows(&dir.path().join("out/summary.csv"));
    assert_eq!(summary.len(), 1);
    assert_eq!(&summary[0][3], "3");
    assert!((summary[0][4].parse::<f64>().unwrap() - mean).abs() < 2e-6);
    assert!((summary[0][5].parse::<f64>().unwrap() - std).abs() < 2e-6);
}
