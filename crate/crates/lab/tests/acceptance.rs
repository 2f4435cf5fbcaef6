//! Acceptance suite. Each test checks one criterion and writes a single
//! `criterion N: PASS|FAIL` line straight to stdout (not captured by the
//! harness). Tests hold a shared lock so timings are not inflated by
//! concurrent training.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};

use dpr_core::bounds::{average_loss_concentration, group_gap_concentration};
use dpr_core::data::FeatureLayout;
use dpr_core::engine::{
    init_model, oracle_weights, weighted_group_objective, CategoricalSampler, SamplingTable,
};
use dpr_core::eval::{check_assumption1, disagreement_histogram, group_losses};
use dpr_core::nn::{ce_loss_and_grad, gce_loss_and_grad, LossKind, Workspace};
use dpr_core::{BiasedDataset, BiasedExample, Classifier, GradientBuffer};
use dpr_lab::commands::{ablation_axes, cmd_verify_bounds};
use dpr_lab::{ExperimentConfig, Lab, Mode, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: u32, pass: bool, detail: &str) {
    let line = format!("criterion {n}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {n}: {detail}");
}

const SEEDS: [u64; 3] = [0, 1, 2];

/// Desk-scale defaults: K=10, n=20 000, 3000 + 3000 iterations, batch 128.
fn desk() -> &'static Lab {
    static LAB: OnceLock<Lab> = OnceLock::new();
    LAB.get_or_init(|| {
        let cfg = ExperimentConfig {
            rhos: vec![0.005, 0.01],
            seeds: SEEDS.to_vec(),
            workers: 1,
            ..ExperimentConfig::default()
        };
        Lab::new(cfg).unwrap()
    })
}

fn variant(mode: Mode) -> Variant {
    Variant {
        mode,
        ..Variant::from_config(desk().config())
    }
}

/// Unbiased test accuracy of `v` per seed, plus the training seconds spent.
fn accuracies(rho: f64, v: &Variant) -> (Vec<f64>, f64) {
    let mut acc = Vec::new();
    let mut secs = 0.0;
    for seed in SEEDS {
        let cell = desk().run_cell(rho, seed, v).unwrap();
        acc.push(cell.final_phase().metrics.unbiased_accuracy);
        secs += cell.phases.iter().map(|p| p.seconds).sum::<f64>();
    }
    (acc, secs)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn criterion_01_dpr_beats_erm() {
    let _g = serial();
    let (dpr, t_dpr) = accuracies(0.01, &variant(Mode::Dpr));
    let (erm, t_erm) = accuracies(0.01, &variant(Mode::Erm));
    let gap = mean(&dpr) - mean(&erm);
    let secs = t_dpr + t_erm;
    verdict(
        1,
        gap >= 0.15 && secs <= 600.0,
        &format!(
            "rho=0.01 dpr={:.4} erm={:.4} gap={gap:.4} (>= 0.15) train_seconds={secs:.1} (<= 600)",
            mean(&dpr),
            mean(&erm)
        ),
    );
}

#[test]
fn criterion_02_ablation_ordering() {
    let _g = serial();
    let cfg = ExperimentConfig {
        sweep: dpr_lab::config::SweepConfig {
            toggles: true,
            ..Default::default()
        },
        ..desk().config().clone()
    };
    let axes = ablation_axes(&cfg);
    let (_, rows) = &axes[0];
    let means: BTreeMap<&str, f64> = rows
        .iter()
        .map(|(label, v)| (label.as_str(), mean(&accuracies(0.005, v).0)))
        .collect();
    let full = means["init1_gce1_aug1"];
    let init_gain = means["init1_gce0_aug0"] - means["init0_gce0_aug0"];
    let worst_margin = means
        .iter()
        .filter(|(k, _)| **k != "init1_gce1_aug1")
        .map(|(_, m)| full - m)
        .fold(f64::INFINITY, f64::min);
    let table: Vec<String> = means.iter().map(|(k, m)| format!("{k}={m:.4}")).collect();
    verdict(
        2,
        init_gain >= 0.10 && worst_margin >= 0.0,
        &format!(
            "rho=0.005 {} init_gain={init_gain:.4} (>= 0.10) full_minus_best_ablation={worst_margin:.4} (>= 0)",
            table.join(" ")
        ),
    );
}

#[test]
fn criterion_03_resampling_vs_reweighting() {
    let _g = serial();
    let mut pass = true;
    let mut parts = Vec::new();
    for rho in [0.005, 0.01] {
        let re = mean(&accuracies(rho, &variant(Mode::Dpr)).0);
        let rw = mean(&accuracies(rho, &variant(Mode::Reweighted)).0);
        pass &= re >= rw;
        parts.push(format!("rho={rho} resample={re:.4} reweight={rw:.4}"));
    }
    verdict(3, pass, &parts.join(" "));
}

/// Relative error `‖a - b‖ / max(‖a‖, ‖b‖)` in the Euclidean norm.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na.max(nb) == 0.0 {
        0.0
    } else {
        diff / na.max(nb)
    }
}

fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Reads parameter `i` of layer `l` and optionally overwrites it.
fn param(m: &mut Classifier, l: usize, is_bias: bool, i: usize, set: Option<f64>) -> f64 {
    let layer = &mut m.layers_mut()[l];
    let p = if is_bias {
        &mut layer.bias_mut()[i]
    } else {
        &mut layer.weights_mut()[i]
    };
    let old = *p;
    if let Some(v) = set {
        *p = v;
    }
    old
}

#[test]
fn criterion_04_gradient_suite() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_ce, mut worst_gce, mut worst_scale) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let k = rng.random_range(2..=12);
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y = rng.random_range(0..k);
        let q = rng.random_range(0.05..=1.0);
        let (_, g_ce) = ce_loss_and_grad(&logits, y).unwrap();
        let (_, g_gce) = gce_loss_and_grad(&logits, y, q).unwrap();
        let fd_ce = central_diff(|z| ce_loss_and_grad(z, y).unwrap().0, &logits, 1e-5);
        let fd_gce = central_diff(|z| gce_loss_and_grad(z, y, q).unwrap().0, &logits, 1e-5);
        worst_ce = worst_ce.max(rel_err(&g_ce, &fd_ce));
        worst_gce = worst_gce.max(rel_err(&g_gce, &fd_gce));
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        let p_y = (logits[y] - m).exp() / z;
        for (a, b) in g_gce.iter().zip(&g_ce) {
            worst_scale = worst_scale.max((a - p_y.powf(q) * b).abs());
        }
    }
    // Same check through the network: parameter gradients of a small MLP.
    let mut worst_net = 0.0f64;
    for draw in 0..100 {
        let mut model = Classifier::mlp(6, &[5], 4, &mut rng).unwrap();
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
        let y = rng.random_range(0..4);
        let loss = if draw % 2 == 0 {
            LossKind::CrossEntropy
        } else {
            LossKind::Generalized { q: 0.7 }
        };
        let mut ws = Workspace::for_model(&model);
        let logits = model.forward_with(&x, &mut ws).unwrap().to_vec();
        let mut dl = vec![0.0; 4];
        loss.loss_and_grad_into(&logits, y, &mut dl).unwrap();
        let mut grads = GradientBuffer::zeros_like(&model);
        model.backward_with(&x, &dl, 1.0, &mut ws, &mut grads).unwrap();
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for l in 0..model.layers().len() {
            for (is_bias, len) in [(false, model.layers()[l].weights().len()), (true, model.layers()[l].bias().len())] {
                for i in 0..len {
                    let orig = param(&mut model, l, is_bias, i, None);
                    let h = 1e-6;
                    let mut eval = |v: f64| {
                        param(&mut model, l, is_bias, i, Some(v));
                        loss.loss(&model.forward(&x).unwrap(), y).unwrap()
                    };
                    let fd = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
                    param(&mut model, l, is_bias, i, Some(orig));
                    numeric.push(fd);
                    analytic.push(if is_bias { grads.bias(l)[i] } else { grads.weights(l)[i] });
                }
            }
        }
        worst_net = worst_net.max(rel_err(&analytic, &numeric));
    }
    verdict(
        4,
        worst_ce <= 1e-4 && worst_gce <= 1e-4 && worst_net <= 1e-4 && worst_scale <= 1e-12,
        &format!(
            "max rel err ce={worst_ce:.2e} gce={worst_gce:.2e} mlp={worst_net:.2e} (<= 1e-4); |gce - p_y^q ce|={worst_scale:.2e} (<= 1e-12)"
        ),
    );
}

fn tiny_dataset(rng: &mut ChaCha8Rng) -> BiasedDataset<f64> {
    let k = 3;
    let n = rng.random_range(2..=8);
    let mut examples: Vec<BiasedExample<f64>> = (0..n)
        .map(|i| {
            let y = rng.random_range(0..k);
            // Guarantee both groups: the first example aligned, the second conflicting.
            let conflicting = match i {
                0 => false,
                1 => true,
                _ => rng.random_bool(0.4),
            };
            let b = if conflicting { (y + rng.random_range(1..k)) % k } else { y };
            BiasedExample {
                features: (0..4).map(|_| rng.random_range(0.0..1.0)).collect(),
                y,
                bias_labels: vec![b],
                aligned: vec![!conflicting],
            }
        })
        .collect();
    examples.rotate_left(rng.random_range(0..n));
    BiasedDataset::new(examples, k, 1, 0.4, 0, FeatureLayout::Flat).unwrap()
}

#[test]
fn criterion_05_reformulation_oracle() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut found = 0;
    let mut tries = 0;
    while found < 20 {
        tries += 1;
        assert!(tries < 10_000, "could not draw datasets satisfying the assumption");
        let data = tiny_dataset(&mut rng);
        let model = Classifier::mlp(4, &[3], 3, &mut rng).unwrap();
        if !check_assumption1(&model, &data).unwrap().holds() {
            continue;
        }
        found += 1;
        let w = oracle_weights(&data).unwrap();
        let objective = weighted_group_objective(&model, &data, &w).unwrap();
        let m = group_losses(&model, &data, LossKind::CrossEntropy, None).unwrap();
        worst = worst.max((objective - m.conflicting.unwrap().avg_loss).abs());
    }
    verdict(
        5,
        worst <= 1e-12,
        &format!("20 datasets (n <= 8), max |oracle objective - conflicting loss| = {worst:.2e} (<= 1e-12)"),
    );
}

#[test]
fn criterion_06_sampling_law() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let d: Vec<f64> = (0..100).map(|_| rng.random_range(0.001..1.0)).collect();
    let table = SamplingTable::from_disagreements(d).unwrap();
    let sum_err = (table.probs().iter().sum::<f64>() - 1.0).abs();
    let sampler = CategoricalSampler::new(&table);
    let draws = 1_000_000;
    let mut counts = vec![0usize; 100];
    for _ in 0..draws {
        counts[sampler.sample(&mut rng)] += 1;
    }
    let kl: f64 = counts
        .iter()
        .zip(table.probs())
        .filter(|(c, _)| **c > 0)
        .map(|(&c, &p)| {
            let e = c as f64 / draws as f64;
            e * (e / p).ln()
        })
        .sum();
    verdict(
        6,
        sum_err <= 1e-9 && kl < 1e-4,
        &format!("|sum - 1| = {sum_err:.2e} (<= 1e-9); KL(empirical || table) over 1e6 draws = {kl:.2e} (< 1e-4)"),
    );
}

#[test]
fn criterion_07_disagreement_separation() {
    let _g = serial();
    let lab = desk();
    let mut seps = Vec::new();
    for seed in SEEDS {
        let biased = lab.biased(0.01, seed).unwrap();
        let train = &lab.data(0.01, seed).unwrap().train;
        let h = disagreement_histogram(biased.as_ref(), train, 1.0, 20).unwrap();
        seps.push(h.mean_separation().unwrap());
    }
    let min = seps.iter().copied().fold(f64::INFINITY, f64::min);
    verdict(
        7,
        min > 0.2,
        &format!("rho=0.01 mean disagreement conflicting - aligned per seed {seps:.4?} (> 0.2)"),
    );
}

#[test]
fn criterion_08_assumption_diagnostics() {
    let _g = serial();
    let lab = desk();
    let ln_k = 10f64.ln();
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let train = &lab.data(0.01, seed).unwrap().train;
        let biased = check_assumption1(lab.biased(0.01, seed).unwrap().as_ref(), train).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let fresh = init_model(train, &lab.config().schedule, &mut rng).unwrap();
        let fresh_gap = check_assumption1(&fresh, train).unwrap().gap().unwrap();
        pass &= biased.holds() && biased.gap().unwrap() > 0.0 && fresh_gap.abs() < 0.1 * ln_k;
        parts.push(format!(
            "seed {seed}: biased gap={:.4} fresh |gap|={:.4}",
            biased.gap().unwrap(),
            fresh_gap.abs()
        ));
    }
    verdict(
        8,
        pass,
        &format!("{} (biased > 0, fresh < {:.4})", parts.join("; "), 0.1 * ln_k),
    );
}

fn read_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn criterion_09_bounds() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::parse(
        "[data]\nn_train = 1000\nn_test = 100\n\
         [experiment]\nrho = 0.01\nseeds = 0..100\nworkers = 1\n\
         [train]\nbiased_iters = 300\ndebiased_iters = 300\nbatch_size = 64\nhidden = 32\n\
         [bounds]\ndeltas = 0.05\npopulation_per_group = 50000\nmc_trials = 10000\nmc_sample_size = 50\n",
    )
    .unwrap();
    cfg.out_dir = dir.path().to_path_buf();
    let out = cmd_verify_bounds(&cfg, None).unwrap();
    assert_eq!(out.failed_cells, 0, "{:?}", out.messages);
    let rows = read_rows(&dir.path().join("bounds_rho0.01.csv"));
    let rate = |t: &str| {
        let r: Vec<_> = rows.iter().filter(|r| &r[0] == t).collect();
        assert_eq!(r.len(), 100);
        r.iter().filter(|r| &r[6] == "true").count() as f64 / r.len() as f64
    };
    let (r1, r2) = (rate("1"), rate("2"));
    let c = 4.0 * 10f64.ln();
    assert!(rows.iter().all(|r| (r[2].parse::<f64>().unwrap() - c).abs() < 1e-5));
    let mc = read_rows(&dir.path().join("hoeffding.csv"));
    let worst_mc = mc.iter().map(|r| r[6].parse::<f64>().unwrap()).fold(0.0, f64::max);
    assert!(mc.iter().all(|r| &r[4] == "10000"));
    let s1 = group_gap_concentration(1.0, 0.05, &[100, 100]);
    let s2 = average_loss_concentration(1.0, 0.05, 1000);
    let scalars = (s1 - 0.5432).abs() <= 1e-4 && (s2 - 0.07740).abs() <= 1e-4;
    verdict(
        9,
        r1 >= 0.95 && r2 >= 0.95 && worst_mc <= 0.05 && scalars,
        &format!(
            "100 seeds, C=4 ln K, delta=0.05: holds-rate thm1={r1:.2} thm2={r2:.2} (>= 0.95); \
             max Hoeffding violation rate={worst_mc:.4} (<= 0.05); terms {s1:.4} {s2:.5}"
        ),
    );
}

const TINY: &str = "[data]\nn_train = 500\nn_test = 200\n\
[experiment]\nrho = 0.02, 0.05\nseeds = 0, 1\nworkers = 2\nhistogram_bins = 10\n\
[train]\nbiased_iters = 60\ndebiased_iters = 60\nbatch_size = 32\nhidden = 16\n\
[sweep]\ntoggles = true\nmodes = dpr, reweighted\n\
[bounds]\npopulation_per_group = 1000\nmc_trials = 1000\n";

fn dpr(args: &[&str], cfg: &Path, out: &Path) {
    let status = Command::new(env!("CARGO_BIN_EXE_dpr"))
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{args:?}: {}", String::from_utf8_lossy(&status.stderr));
}

#[test]
fn criterion_10_determinism() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let commands: [(&[&str], &[&str]); 5] = [
        (&["generate"], &["generate.csv", "train_rho0.02_seed0.dprd", "test_seed1.dprd"]),
        (&["run"], &["metrics.csv", "summary.csv"]),
        (&["ablate", "--q", "0.5,0.9"], &["metrics.csv", "ablation_toggles.csv", "ablation_q.csv", "ablation_mode.csv"]),
        (&["verify-bounds"], &["bounds_rho0.02.csv", "bounds_rho0.05.csv", "hoeffding.csv"]),
        (&["diagnose"], &["assumption.csv", "histograms/biased_rho0.05_seed1.csv"]),
    ];
    let mut identical = 0;
    let mut differing = Vec::new();
    for (args, files) in commands {
        let a = dir.path().join(format!("{}-a", args[0]));
        let b = dir.path().join(format!("{}-b", args[0]));
        dpr(args, &cfg, &a);
        dpr(args, &cfg, &b);
        for f in files {
            let (x, y) = (std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
            if x == y && !x.is_empty() {
                identical += 1;
            } else {
                differing.push(format!("{} {f}", args[0]));
            }
        }
    }
    verdict(
        10,
        differing.is_empty(),
        &format!("{identical} output files byte-identical across reruns of all five commands; differing: {differing:?}"),
    );
}
