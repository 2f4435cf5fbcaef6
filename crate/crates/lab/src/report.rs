//! CSV emission. Floats are written with fixed precision through `format!`,
//! which never consults the locale.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use dpr_core::nn::save_checkpoint;
use dpr_core::GroupMetrics;

use crate::error::{LabError, LabResult};
use crate::runner::CellResult;

pub const METRICS_HEADER: [&str; 11] = [
    "run_id",
    "phase",
    "rho",
    "seed",
    "group",
    "n",
    "avg_loss",
    "accuracy",
    "unbiased_acc",
    "worst_group_acc",
    "loss_gap",
];

pub const SUMMARY_HEADER: [&str; 12] = [
    "run_id",
    "phase",
    "rho",
    "n_seeds",
    "unbiased_acc_mean",
    "unbiased_acc_std",
    "worst_group_acc_mean",
    "worst_group_acc_std",
    "aligned_acc_mean",
    "aligned_acc_std",
    "conflicting_acc_mean",
    "conflicting_acc_std",
];

pub const BOUNDS_HEADER: [&str; 9] = [
    "theorem",
    "seed",
    "C",
    "delta",
    "lhs",
    "rhs",
    "holds",
    "max_group_loss",
    "conc_term",
];

pub fn f(x: f64) -> String {
    format!("{x:.6}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(f).unwrap_or_default()
}

pub fn create_dir(dir: &Path) -> LabResult<()> {
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))
}

/// Writes `header` then `rows` to `path`, creating parent directories.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> LabResult<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    let file = File::create(path).map_err(|e| LabError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| LabError::io(path, e))?;
    Ok(())
}

/// Three rows per phase: aligned, conflicting and the whole test set.
pub fn metrics_rows(run_id: &str, cell: &CellResult) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for p in &cell.phases {
        let m = &p.metrics;
        let head = [run_id.to_string(), p.phase.to_string(), cell.rho.to_string(), cell.seed.to_string()];
        let tail = [f(m.unbiased_accuracy), f(m.worst_group_accuracy), opt(m.loss_gap)];
        let groups = [
            ("aligned", m.aligned.as_ref().map(|g| (g.n, g.avg_loss, g.accuracy))),
            ("conflicting", m.conflicting.as_ref().map(|g| (g.n, g.avg_loss, g.accuracy))),
            ("all", Some((m.n, m.avg_loss, m.unbiased_accuracy))),
        ];
        for (name, stat) in groups {
            let mut row = head.to_vec();
            row.push(name.into());
            match stat {
                Some((n, loss, acc)) => row.extend([n.to_string(), f(loss), f(acc)]),
                None => row.extend(["0".into(), String::new(), String::new()]),
            }
            row.extend(tail.iter().cloned());
            rows.push(row);
        }
    }
    rows
}

/// Marker row for a cell whose training or evaluation errored.
pub fn failed_row(run_id: &str, phase: &str, rho: f64, seed: u64) -> Vec<String> {
    let mut row = vec![run_id.into(), phase.into(), rho.to_string(), seed.to_string(), "failed".into()];
    row.resize(METRICS_HEADER.len(), String::new());
    row
}

pub fn group_accuracy(m: &GroupMetrics<f64>, conflicting: bool) -> Option<f64> {
    let g = if conflicting { &m.conflicting } else { &m.aligned };
    g.as_ref().map(|g| g.accuracy)
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn stat_cols(xs: &[f64]) -> [String; 2] {
    if xs.is_empty() {
        return [String::new(), String::new()];
    }
    let (m, s) = mean_std(xs);
    [f(m), f(s)]
}

/// Aggregates successful cells per (phase, rho) across seeds.
pub fn summary_rows(run_id: &str, cells: &[&CellResult], rhos: &[f64]) -> Vec<Vec<String>> {
    let mut phases: Vec<_> = cells.iter().flat_map(|c| c.phases.iter().map(|p| p.phase)).collect();
    phases.sort();
    phases.dedup();
    let mut rows = Vec::new();
    for &rho in rhos {
        for &phase in &phases {
            let ms: Vec<&GroupMetrics<f64>> = cells
                .iter()
                .filter(|c| c.rho == rho)
                .flat_map(|c| c.phases.iter().filter(|p| p.phase == phase).map(|p| &p.metrics))
                .collect();
            if ms.is_empty() {
                continue;
            }
            let col = |g: &dyn Fn(&GroupMetrics<f64>) -> Option<f64>| {
                stat_cols(&ms.iter().filter_map(|m| g(m)).collect::<Vec<_>>())
            };
            let mut row = vec![run_id.into(), phase.to_string(), rho.to_string(), ms.len().to_string()];
            row.extend(col(&|m| Some(m.unbiased_accuracy)));
            row.extend(col(&|m| Some(m.worst_group_accuracy)));
            row.extend(col(&|m| group_accuracy(m, false)));
            row.extend(col(&|m| group_accuracy(m, true)));
            rows.push(row);
        }
    }
    rows
}

/// Checkpoints and training logs of every phase of `cell` under `dir`.
pub fn write_cell_artifacts(dir: &Path, cell: &CellResult) -> LabResult<Vec<PathBuf>> {
    let ckpt_dir = dir.join("checkpoints");
    let log_dir = dir.join("logs");
    create_dir(&ckpt_dir)?;
    create_dir(&log_dir)?;
    let mut written = Vec::new();
    for p in &cell.phases {
        let stem = format!("{}_rho{}_seed{}", p.phase, cell.rho, cell.seed);
        let ckpt = ckpt_dir.join(format!("{stem}.dprm"));
        save_checkpoint(p.model.as_ref(), &ckpt)?;
        let log = log_dir.join(format!("{stem}.csv"));
        let file = File::create(&log).map_err(|e| LabError::io(&log, e))?;
        p.log.write_csv(BufWriter::new(file))?;
        written.extend([ckpt, log]);
    }
    Ok(written)
}
