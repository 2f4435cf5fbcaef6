//! The five subcommands. Each writes CSVs under the configured output
//! directory and reports how many cells failed.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use dpr_core::bounds::{bound_reports, hoeffding_violation_rate};
use dpr_core::data::{encoded_len, empirical_conflict_ratio, generate, save_dataset};
use dpr_core::engine::init_model;
use dpr_core::eval::{check_assumption1, disagreement_histogram, AssumptionStatus};
use dpr_core::nn::load_checkpoint;
use dpr_core::{BiasedDataset, Classifier, Dataset, DatasetKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, Mode};
use crate::error::{LabError, LabResult};
use crate::report::{self, f, opt, write_csv};
use crate::runner::{derive_seed, parallel_map, CellResult, Lab, Variant, SALT_FRESH, SALT_POPULATION};

#[derive(Debug, Default)]
pub struct Outcome {
    pub failed_cells: usize,
    /// CSV files written, in creation order.
    pub files: Vec<PathBuf>,
    /// Human-readable progress and results.
    pub messages: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        i32::from(self.failed_cells > 0)
    }

    fn say(&mut self, msg: String) {
        self.messages.push(msg);
    }

    fn fail(&mut self, what: &str, rho: f64, seed: u64, e: &LabError) {
        self.failed_cells += 1;
        self.say(format!("FAILED {what} rho={rho} seed={seed}: {e}"));
    }
}

fn cells(cfg: &ExperimentConfig) -> Vec<(f64, u64)> {
    cfg.rhos
        .iter()
        .flat_map(|&r| cfg.seeds.iter().map(move |&s| (r, s)))
        .collect()
}

/// Writes the train file of every (rho, seed) and the test file of every
/// seed, plus a `generate.csv` manifest.
pub fn cmd_generate(cfg: &ExperimentConfig) -> LabResult<Outcome> {
    let lab = Lab::new(cfg.clone())?;
    let out_dir = &cfg.out_dir;
    report::create_dir(out_dir)?;
    let mut out = Outcome::default();
    let mut rows = Vec::new();
    let mut tests_written = Vec::new();
    for (rho, seed) in cells(cfg) {
        let pair = match lab.data(rho, seed) {
            Ok(p) => p,
            Err(e) => {
                out.fail("generate", rho, seed, &e);
                continue;
            }
        };
        let mut files = vec![("train", format!("train_rho{rho}_seed{seed}.dprd"), &pair.train)];
        if !tests_written.contains(&seed) {
            tests_written.push(seed);
            files.push(("test", format!("test_seed{seed}.dprd"), &pair.test));
        }
        for (split, name, data) in files {
            save_dataset(data, out_dir.join(&name))?;
            let ratio = empirical_conflict_ratio(data)?;
            out.say(format!(
                "{name}: n={} rho={} empirical_conflict_ratio={ratio:.6}",
                data.len(),
                data.rho()
            ));
            rows.push(vec![
                name,
                split.into(),
                data.rho().to_string(),
                seed.to_string(),
                data.len().to_string(),
                encoded_len(data).to_string(),
                f(ratio),
            ]);
        }
    }
    let manifest = out_dir.join("generate.csv");
    write_csv(
        &manifest,
        &["file", "split", "rho", "seed", "n", "bytes", "conflict_ratio"],
        &rows,
    )?;
    out.files.push(manifest);
    Ok(out)
}

/// Trains the configured mode on every (rho, seed) cell.
pub fn cmd_run(cfg: &ExperimentConfig) -> LabResult<Outcome> {
    let lab = Lab::new(cfg.clone())?;
    let run_id = cfg.run_id();
    let variant = Variant::from_config(cfg);
    let mut out = Outcome::default();
    out.say(format!("run {run_id}: mode={} rho={:?} seeds={:?}", cfg.mode, cfg.rhos, cfg.seeds));
    let results = lab.run_grid(&variant);
    let mut metrics = Vec::new();
    let mut timings = Vec::new();
    let mut ok = Vec::new();
    for (rho, seed, res) in &results {
        match res {
            Ok(cell) => {
                metrics.extend(report::metrics_rows(&run_id, cell));
                timings.extend(timing_rows(&run_id, cell));
                report::write_cell_artifacts(&cfg.out_dir, cell)?;
                let m = &cell.final_phase().metrics;
                out.say(format!(
                    "rho={rho} seed={seed} {}: unbiased_acc={:.4} worst_group_acc={:.4}",
                    cell.final_phase().phase,
                    m.unbiased_accuracy,
                    m.worst_group_accuracy
                ));
                ok.push(cell);
            }
            Err(e) => {
                out.fail(cfg.mode.as_str(), *rho, *seed, e);
                metrics.push(report::failed_row(&run_id, cfg.mode.as_str(), *rho, *seed));
            }
        }
    }
    write_run_tables(cfg, &run_id, &metrics, &report::summary_rows(&run_id, &ok, &cfg.rhos), &timings, &mut out)?;
    Ok(out)
}

fn timing_rows(run_id: &str, cell: &CellResult) -> Vec<Vec<String>> {
    cell.phases
        .iter()
        .map(|p| {
            vec![
                run_id.into(),
                p.phase.to_string(),
                cell.rho.to_string(),
                cell.seed.to_string(),
                format!("{:.3}", p.seconds),
            ]
        })
        .collect()
}

fn write_run_tables(
    cfg: &ExperimentConfig,
    run_id: &str,
    metrics: &[Vec<String>],
    summary: &[Vec<String>],
    timings: &[Vec<String>],
    out: &mut Outcome,
) -> LabResult<()> {
    let dir = &cfg.out_dir;
    let files = [
        (dir.join("metrics.csv"), &report::METRICS_HEADER[..], metrics),
        (dir.join("summary.csv"), &report::SUMMARY_HEADER[..], summary),
        (dir.join("timings.csv"), &["run_id", "phase", "rho", "seed", "seconds"][..], timings),
    ];
    for (path, header, rows) in files {
        write_csv(&path, header, rows)?;
        out.files.push(path);
    }
    let cfg_path = dir.join("config.txt");
    std::fs::write(&cfg_path, format!("# run_id {run_id}\n{}", cfg.canonical()))
        .map_err(|e| LabError::io(&cfg_path, e))?;
    Ok(())
}

/// One sweep axis: labelled variants sharing every other setting.
pub fn ablation_axes(cfg: &ExperimentConfig) -> Vec<(&'static str, Vec<(String, Variant)>)> {
    let base = Variant {
        mode: Mode::Dpr,
        ..Variant::from_config(cfg)
    };
    let mut axes = Vec::new();
    if cfg.sweep.toggles {
        let rows = [
            (false, false, false),
            (false, true, true),
            (true, false, false),
            (true, true, false),
            (true, true, true),
        ];
        axes.push((
            "toggles",
            rows.iter()
                .map(|&(i, g, a)| {
                    (
                        format!("init{}_gce{}_aug{}", i as u8, g as u8, a as u8),
                        Variant {
                            init_from_biased: i,
                            use_gce: g,
                            augment: a,
                            ..base
                        },
                    )
                })
                .collect(),
        ));
    }
    if !cfg.sweep.q.is_empty() {
        axes.push(("q", cfg.sweep.q.iter().map(|&q| (format!("q={q}"), Variant { q, ..base })).collect()));
    }
    if !cfg.sweep.tau.is_empty() {
        axes.push((
            "tau",
            cfg.sweep.tau.iter().map(|&tau| (format!("tau={tau}"), Variant { tau, ..base })).collect(),
        ));
    }
    if !cfg.sweep.modes.is_empty() {
        axes.push((
            "mode",
            cfg.sweep
                .modes
                .iter()
                .map(|&mode| (mode.to_string(), Variant { mode, ..base }))
                .collect(),
        ));
    }
    axes
}

const ABLATION_HEADER: [&str; 10] = [
    "run_id",
    "axis",
    "variant",
    "rho",
    "seed",
    "status",
    "unbiased_acc",
    "worst_group_acc",
    "aligned_acc",
    "conflicting_acc",
];

const ABLATION_SUMMARY_HEADER: [&str; 10] = [
    "run_id",
    "axis",
    "variant",
    "rho",
    "n_seeds",
    "unbiased_acc_mean",
    "unbiased_acc_std",
    "worst_group_acc_mean",
    "worst_group_acc_std",
    "conflicting_acc_mean",
];

/// Runs every variant of every configured sweep axis over all cells. Biased
/// models are shared between variants that agree on the biased phase.
pub fn cmd_ablate(cfg: &ExperimentConfig) -> LabResult<Outcome> {
    if cfg.sweep.is_empty() {
        return Err(LabError::config(
            "ablate needs a sweep axis: sweep.toggles, sweep.modes, --q or --tau",
        ));
    }
    let lab = Lab::new(cfg.clone())?;
    let mut out = Outcome::default();
    let mut metrics = Vec::new();
    let mut runs = Vec::new();
    for (axis, variants) in ablation_axes(cfg) {
        let mut rows = Vec::new();
        let mut summary = Vec::new();
        for (label, v) in &variants {
            let vcfg = v.apply_to(cfg);
            let run_id = vcfg.run_id();
            runs.push(vec![run_id.clone(), axis.into(), label.clone()]);
            let results = lab.run_grid(v);
            let mut ok: Vec<&CellResult> = Vec::new();
            for (rho, seed, res) in &results {
                let mut row = vec![run_id.clone(), axis.into(), label.clone(), rho.to_string(), seed.to_string()];
                match res {
                    Ok(cell) => {
                        metrics.extend(report::metrics_rows(&run_id, cell));
                        let m = &cell.final_phase().metrics;
                        row.extend([
                            "ok".into(),
                            f(m.unbiased_accuracy),
                            f(m.worst_group_accuracy),
                            opt(report::group_accuracy(m, false)),
                            opt(report::group_accuracy(m, true)),
                        ]);
                        ok.push(cell);
                    }
                    Err(e) => {
                        out.fail(&format!("{axis}/{label}"), *rho, *seed, e);
                        metrics.push(report::failed_row(&run_id, v.mode.as_str(), *rho, *seed));
                        row.push("failed".into());
                        row.resize(ABLATION_HEADER.len(), String::new());
                    }
                }
                rows.push(row);
            }
            for &rho in &cfg.rhos {
                let finals: Vec<_> = ok.iter().filter(|c| c.rho == rho).map(|c| &c.final_phase().metrics).collect();
                if finals.is_empty() {
                    continue;
                }
                let ua: Vec<f64> = finals.iter().map(|m| m.unbiased_accuracy).collect();
                let wg: Vec<f64> = finals.iter().map(|m| m.worst_group_accuracy).collect();
                let ca: Vec<f64> = finals.iter().filter_map(|m| report::group_accuracy(m, true)).collect();
                let (um, us) = report::mean_std(&ua);
                let (wm, ws) = report::mean_std(&wg);
                out.say(format!("{axis} {label} rho={rho}: unbiased_acc={um:.4}±{us:.4}"));
                summary.push(vec![
                    run_id.clone(),
                    axis.into(),
                    label.clone(),
                    rho.to_string(),
                    finals.len().to_string(),
                    f(um),
                    f(us),
                    f(wm),
                    f(ws),
                    if ca.is_empty() { String::new() } else { f(report::mean_std(&ca).0) },
                ]);
            }
        }
        for (name, header, data) in [
            (format!("ablation_{axis}.csv"), &ABLATION_HEADER[..], &rows),
            (format!("ablation_{axis}_summary.csv"), &ABLATION_SUMMARY_HEADER[..], &summary),
        ] {
            let path = cfg.out_dir.join(name);
            write_csv(&path, header, data)?;
            out.files.push(path);
        }
    }
    for (path, header, rows) in [
        (cfg.out_dir.join("metrics.csv"), &report::METRICS_HEADER[..], &metrics),
        (cfg.out_dir.join("runs.csv"), &["run_id", "axis", "variant"][..], &runs),
    ] {
        write_csv(&path, header, rows)?;
        out.files.push(path);
    }
    Ok(out)
}

/// Stand-in for the group-conditional distributions: `per_group` aligned and
/// `per_group` conflicting examples from generators independent of every
/// training seed. Colored data only, where the group-conditional law does not
/// depend on rho.
pub fn population(cfg: &ExperimentConfig, rho: f64) -> LabResult<Dataset> {
    if cfg.data.kind != DatasetKind::Colored || cfg.data.train_path.is_some() {
        return Err(LabError::config("bound verification needs generated colored data"));
    }
    let n = cfg.bounds.population_per_group;
    let gen = cfg.data.gen_config(0.0);
    let salt = SALT_POPULATION ^ rho.to_bits();
    let aligned: Dataset = generate(&gen, n, derive_seed(0, salt))?;
    let conflicting: Dataset = generate(&gen.clone().with_rho(1.0), n, derive_seed(1, salt))?;
    let layout = aligned.layout();
    let mut examples = aligned.examples().to_vec();
    examples.extend_from_slice(conflicting.examples());
    Ok(BiasedDataset::new(
        examples,
        cfg.data.num_classes,
        cfg.data.num_bias_attrs,
        0.5,
        salt,
        layout,
    )?)
}

fn load_model(path: &Path) -> LabResult<Arc<Classifier>> {
    Ok(Arc::new(load_checkpoint(path)?))
}

/// The model under test for a cell: the checkpoint if given, else the
/// configured mode trained on the cell's data.
fn cell_model(lab: &Lab, fixed: &Option<Arc<Classifier>>, rho: f64, seed: u64) -> LabResult<Arc<Classifier>> {
    match fixed {
        Some(m) => Ok(m.clone()),
        None => Ok(lab
            .run_cell(rho, seed, &Variant::from_config(lab.config()))?
            .final_phase()
            .model
            .clone()),
    }
}

const HOEFFDING_HEADER: [&str; 8] = [
    "seed",
    "C",
    "delta",
    "n_b",
    "trials",
    "violations",
    "violation_rate",
    "radius",
];

/// Both bounds over the (C, delta) grid for every (rho, seed), plus Monte
/// Carlo Hoeffding checks on a two-point population `{0, C}`.
pub fn cmd_verify_bounds(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> LabResult<Outcome> {
    let lab = Lab::new(cfg.clone())?;
    let fixed = checkpoint.map(load_model).transpose()?;
    let caps = cfg.bounds.resolved_caps(cfg.data.num_classes);
    let deltas = &cfg.bounds.deltas;
    let mut out = Outcome::default();
    let mut mc_rows = Vec::new();
    for &rho in &cfg.rhos {
        let pop = population(cfg, rho)?;
        let results = parallel_map(cfg.seeds.len(), cfg.workers, |i| -> LabResult<_> {
            let seed = cfg.seeds[i];
            let model = cell_model(&lab, &fixed, rho, seed)?;
            let train = &lab.data(rho, seed)?.train;
            let mut reports = Vec::new();
            for &cap in &caps {
                reports.extend(bound_reports(model.as_ref(), train, &pop, cap, deltas)?);
            }
            let (a, c) = train.group_sizes();
            Ok((reports, cfg.bounds.population_per_group >= 50 * a.max(c)))
        });
        let mut rows = Vec::new();
        let mut holds = [0usize; 2];
        let mut total = [0usize; 2];
        for (&seed, res) in cfg.seeds.iter().zip(results) {
            match res {
                Ok((reports, big_enough)) => {
                    if !big_enough {
                        out.say(format!("warning: population smaller than 50x the train groups (seed {seed})"));
                    }
                    for r in reports {
                        let t = r.theorem.id() as usize - 1;
                        total[t] += 1;
                        holds[t] += usize::from(r.holds);
                        rows.push(vec![
                            r.theorem.to_string(),
                            seed.to_string(),
                            f(r.cap),
                            r.delta.to_string(),
                            f(r.lhs),
                            f(r.rhs),
                            r.holds.to_string(),
                            f(r.max_group_train_loss),
                            f(r.concentration_term),
                        ]);
                    }
                }
                Err(e) => out.fail("verify-bounds", rho, seed, &e),
            }
        }
        for t in 0..2 {
            if total[t] > 0 {
                out.say(format!(
                    "rho={rho} theorem {}: holds {}/{} ({:.3})",
                    t + 1,
                    holds[t],
                    total[t],
                    holds[t] as f64 / total[t] as f64
                ));
            }
        }
        let path = cfg.out_dir.join(format!("bounds_rho{rho}.csv"));
        write_csv(&path, &report::BOUNDS_HEADER, &rows)?;
        out.files.push(path);
    }
    for &seed in &cfg.seeds {
        for &cap in &caps {
            let values: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 0.0 } else { cap }).collect();
            for &delta in deltas {
                let n_b = cfg.bounds.mc_sample_size;
                let mc_seed = derive_seed(seed, cap.to_bits() ^ delta.to_bits().rotate_left(17));
                let s = hoeffding_violation_rate(&values, n_b, cap, delta, cfg.bounds.mc_trials, mc_seed)?;
                mc_rows.push(vec![
                    seed.to_string(),
                    f(cap),
                    delta.to_string(),
                    n_b.to_string(),
                    s.trials.to_string(),
                    s.violations.to_string(),
                    f(s.violation_rate),
                    f(dpr_core::bounds::hoeffding_radius(cap, delta, n_b)),
                ]);
            }
        }
    }
    let path = cfg.out_dir.join("hoeffding.csv");
    write_csv(&path, &HOEFFDING_HEADER, &mc_rows)?;
    out.files.push(path);
    Ok(out)
}

const ASSUMPTION_HEADER: [&str; 11] = [
    "run_id",
    "model",
    "rho",
    "seed",
    "status",
    "aligned_loss",
    "conflicting_loss",
    "gap",
    "abs_gap_over_ln_k",
    "aligned_disagreement",
    "conflicting_disagreement",
];

fn status_str(s: AssumptionStatus) -> &'static str {
    match s {
        AssumptionStatus::Holds => "holds",
        AssumptionStatus::Violated => "violated",
        AssumptionStatus::Inconclusive => "inconclusive",
    }
}

/// Disagreement histograms and the group-loss ordering on the training data,
/// for the biased model and for a freshly initialized one.
pub fn cmd_diagnose(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> LabResult<Outcome> {
    let lab = Lab::new(cfg.clone())?;
    let fixed = checkpoint.map(load_model).transpose()?;
    let run_id = cfg.run_id();
    let ln_k = (cfg.data.num_classes as f64).ln();
    let hist_dir = cfg.out_dir.join("histograms");
    report::create_dir(&hist_dir)?;
    let mut out = Outcome::default();
    let mut rows = Vec::new();
    for (rho, seed) in cells(cfg) {
        let res = (|| -> LabResult<Vec<Vec<String>>> {
            let train = lab.data(rho, seed)?.train.clone();
            let biased = match &fixed {
                Some(m) => m.clone(),
                None => lab.biased(rho, seed)?,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SALT_FRESH));
            let fresh = init_model(&train, &cfg.schedule, &mut rng)?;
            let mut rows = Vec::new();
            for (name, model) in [("biased", biased.as_ref()), ("random", &fresh)] {
                let hist = disagreement_histogram(model, &train, cfg.schedule.tau, cfg.histogram_bins)?;
                let path = hist_dir.join(format!("{name}_rho{rho}_seed{seed}.csv"));
                let file = File::create(&path).map_err(|e| LabError::io(&path, e))?;
                hist.write_csv(BufWriter::new(file))?;
                let a = check_assumption1(model, &train)?;
                let gap = a.gap();
                out.say(format!(
                    "rho={rho} seed={seed} {name}: assumption {} gap={} separation={}",
                    status_str(a.status),
                    opt(gap),
                    opt(hist.mean_separation())
                ));
                rows.push(vec![
                    run_id.clone(),
                    name.into(),
                    rho.to_string(),
                    seed.to_string(),
                    status_str(a.status).into(),
                    opt(a.aligned_loss),
                    opt(a.conflicting_loss),
                    opt(gap),
                    opt(gap.map(|g| g.abs() / ln_k)),
                    opt(hist.aligned_mean),
                    opt(hist.conflicting_mean),
                ]);
            }
            Ok(rows)
        })();
        match res {
            Ok(r) => rows.extend(r),
            Err(e) => out.fail("diagnose", rho, seed, &e),
        }
    }
    let path = cfg.out_dir.join("assumption.csv");
    write_csv(&path, &ASSUMPTION_HEADER, &rows)?;
    out.files.push(path);
    Ok(out)
}
