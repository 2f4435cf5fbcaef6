//! Cells of an experiment: one (variant, rho, seed) triple each, trained and
//! evaluated independently of every other cell.

use std::collections::HashMap;
use std::hash::Hash;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use dpr_core::data::{colorize_idx, generate, load_dataset, make_unbiased_test, UNBIASED_TEST_RHO};
use dpr_core::engine::{
    compute_sampling_table, train_biased, train_debiased, train_erm, train_reweighted, Phase,
};
use dpr_core::eval::group_losses;
use dpr_core::{BiasedDataset, Classifier, Dataset, LossKind, Metrics, TrainSchedule, TrainingLog};

use crate::config::{ExperimentConfig, Mode};
use crate::error::{LabError, LabResult};

/// Salts separating the seed streams of derived datasets.
const SALT_TRAIN: u64 = 0x7472_6169_6e00_0000;
const SALT_TEST: u64 = 0x7465_7374_0000_0000;
pub(crate) const SALT_POPULATION: u64 = 0x706f_7075_6c00_0000;
pub(crate) const SALT_FRESH: u64 = 0x6672_6573_6800_0000;

/// SplitMix64 finalizer over `seed` and `salt`.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Training toggles that distinguish the rows of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variant {
    pub mode: Mode,
    pub init_from_biased: bool,
    pub use_gce: bool,
    pub augment: bool,
    pub q: f64,
    pub tau: f64,
}

impl Variant {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        let s = &cfg.schedule;
        Self {
            mode: cfg.mode,
            init_from_biased: s.init_from_biased,
            use_gce: s.use_gce,
            augment: s.augment,
            q: s.q,
            tau: s.tau,
        }
    }

    pub fn schedule(&self, base: &TrainSchedule) -> TrainSchedule {
        TrainSchedule {
            init_from_biased: self.init_from_biased,
            use_gce: self.use_gce,
            augment: self.augment,
            q: self.q,
            tau: self.tau,
            ..base.clone()
        }
    }

    /// The same experiment as `cfg` with this variant's toggles.
    pub fn apply_to(&self, cfg: &ExperimentConfig) -> ExperimentConfig {
        ExperimentConfig {
            mode: self.mode,
            schedule: self.schedule(&cfg.schedule),
            ..cfg.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhaseResult {
    pub phase: Phase,
    pub model: Arc<Classifier>,
    pub log: Arc<TrainingLog>,
    /// Evaluation on the unbiased test set.
    pub metrics: Metrics,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub rho: f64,
    pub seed: u64,
    pub variant: Variant,
    /// The biased phase (when the mode has one) then the reported model.
    pub phases: Vec<PhaseResult>,
}

impl CellResult {
    /// The phase the mode is judged by.
    pub fn final_phase(&self) -> &PhaseResult {
        self.phases.last().expect("cells always train at least one phase")
    }

    pub fn biased_phase(&self) -> Option<&PhaseResult> {
        self.phases.iter().find(|p| p.phase == Phase::Biased)
    }
}

#[derive(Debug, Clone)]
pub struct DataPair {
    pub train: Dataset,
    pub test: Dataset,
}

struct BiasedModel {
    model: Arc<Classifier>,
    log: Arc<TrainingLog>,
    seconds: f64,
}

type BiasedKey = (u64, u64, bool, u64);

/// Per-key slots: callers asking for the same key wait for one computation
/// instead of repeating it. Errors are not cached.
type Memo<K, V> = Mutex<HashMap<K, Arc<Mutex<Option<V>>>>>;

fn memo<K: Eq + Hash, V: Clone>(map: &Memo<K, V>, key: K, make: impl FnOnce() -> LabResult<V>) -> LabResult<V> {
    let slot = map.lock().unwrap().entry(key).or_default().clone();
    let mut guard = slot.lock().unwrap();
    if let Some(v) = guard.as_ref() {
        return Ok(v.clone());
    }
    let v = make()?;
    *guard = Some(v.clone());
    Ok(v)
}

/// Shared state of a sweep: configuration plus memoized datasets and biased
/// models, so variants that differ only downstream of the biased phase reuse
/// it.
pub struct Lab {
    cfg: ExperimentConfig,
    data: Memo<(u64, u64), Arc<DataPair>>,
    biased: Memo<BiasedKey, Arc<BiasedModel>>,
}

impl Lab {
    pub fn new(cfg: ExperimentConfig) -> LabResult<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            data: Mutex::default(),
            biased: Mutex::default(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// Train and unbiased test data of a cell. The test set depends only on
    /// the seed, so every rho is scored against the same examples.
    pub fn data(&self, rho: f64, seed: u64) -> LabResult<Arc<DataPair>> {
        memo(&self.data, (rho.to_bits(), seed), || Ok(Arc::new(self.build_data(rho, seed)?)))
    }

    fn build_data(&self, rho: f64, seed: u64) -> LabResult<DataPair> {
        let d = &self.cfg.data;
        if let (Some(train), Some(test)) = (&d.train_path, &d.test_path) {
            let train: Dataset = load_dataset(train)?;
            let test: Dataset = load_dataset(test)?;
            if train.rho() != rho {
                return Err(LabError::config(format!(
                    "train file has rho {} but the config asks for {rho}",
                    train.rho()
                )));
            }
            return Ok(DataPair { train, test });
        }
        let gen = d.gen_config(rho);
        let train_seed = derive_seed(seed, SALT_TRAIN ^ rho.to_bits());
        let test_seed = derive_seed(seed, SALT_TEST);
        if let (Some(images), Some(labels)) = (&d.idx_images, &d.idx_labels) {
            // Disjoint images: the head is colored for training at rho, the
            // tail for testing at the unbiased ratio.
            let train_all: Dataset = colorize_idx(images, labels, &gen, train_seed)?;
            let test_all: Dataset =
                colorize_idx(images, labels, &gen.clone().with_rho(UNBIASED_TEST_RHO), test_seed)?;
            let total = train_all.len();
            if d.n_test >= total {
                return Err(LabError::config(format!(
                    "n_test {} leaves no training images out of {total}",
                    d.n_test
                )));
            }
            let cut = total - d.n_test;
            let head: Vec<usize> = (0..cut.min(d.n_train)).collect();
            let tail: Vec<usize> = (cut..total).collect();
            return Ok(DataPair {
                train: train_all.subset(&head),
                test: test_all.subset(&tail),
            });
        }
        Ok(DataPair {
            train: generate(&gen, d.n_train, train_seed)?,
            test: make_unbiased_test(&gen, d.n_test, test_seed)?,
        })
    }

    fn biased_model(&self, rho: f64, seed: u64, v: &Variant) -> LabResult<Arc<BiasedModel>> {
        let q_bits = if v.use_gce { v.q.to_bits() } else { 0 };
        let key = (rho.to_bits(), seed, v.use_gce, q_bits);
        memo(&self.biased, key, || {
            let data = self.data(rho, seed)?;
            let start = Instant::now();
            let out = train_biased(&data.train, &v.schedule(&self.cfg.schedule), seed)?;
            Ok(Arc::new(BiasedModel {
                model: Arc::new(out.model),
                log: Arc::new(out.log),
                seconds: start.elapsed().as_secs_f64(),
            }))
        })
    }

    /// Biased model of a cell under the config's own toggles.
    pub fn biased(&self, rho: f64, seed: u64) -> LabResult<Arc<Classifier>> {
        Ok(self.biased_model(rho, seed, &Variant::from_config(&self.cfg))?.model.clone())
    }

    pub fn run_cell(&self, rho: f64, seed: u64, v: &Variant) -> LabResult<CellResult> {
        let data = self.data(rho, seed)?;
        let schedule = v.schedule(&self.cfg.schedule);
        let mut phases = Vec::new();
        match v.mode {
            Mode::Erm => {
                let start = Instant::now();
                let out = train_erm(&data.train, &schedule, seed)?;
                let seconds = start.elapsed().as_secs_f64();
                phases.push(evaluate(Phase::Erm, out.model, out.log, seconds, &data.test)?);
            }
            Mode::Dpr | Mode::Reweighted => {
                let b = self.biased_model(rho, seed, v)?;
                phases.push(PhaseResult {
                    phase: Phase::Biased,
                    metrics: test_metrics(&b.model, &data.test)?,
                    model: b.model.clone(),
                    log: b.log.clone(),
                    seconds: b.seconds,
                });
                let start = Instant::now();
                let table = compute_sampling_table(&b.model, &data.train, v.tau)?;
                let (phase, out) = if v.mode == Mode::Dpr {
                    (Phase::Debiased, train_debiased(&data.train, &table, &b.model, &schedule, seed)?)
                } else {
                    (Phase::Reweighted, train_reweighted(&data.train, &table, &b.model, &schedule, seed)?)
                };
                let seconds = start.elapsed().as_secs_f64();
                phases.push(evaluate(phase, out.model, out.log, seconds, &data.test)?);
            }
        }
        Ok(CellResult {
            rho,
            seed,
            variant: *v,
            phases,
        })
    }

    /// Every (rho, seed) cell of `variant`, in rho-major order.
    pub fn run_grid(&self, v: &Variant) -> Vec<(f64, u64, LabResult<CellResult>)> {
        let cells: Vec<(f64, u64)> = self
            .cfg
            .rhos
            .iter()
            .flat_map(|&r| self.cfg.seeds.iter().map(move |&s| (r, s)))
            .collect();
        let results = parallel_map(cells.len(), self.cfg.workers, |i| {
            let (r, s) = cells[i];
            self.run_cell(r, s, v)
        });
        cells.into_iter().zip(results).map(|((r, s), res)| (r, s, res)).collect()
    }
}

fn test_metrics(model: &Classifier, test: &Dataset) -> LabResult<Metrics> {
    Ok(group_losses(model, test, LossKind::CrossEntropy, None)?)
}

fn evaluate(
    phase: Phase,
    model: Classifier,
    log: TrainingLog,
    seconds: f64,
    test: &BiasedDataset<f64>,
) -> LabResult<PhaseResult> {
    Ok(PhaseResult {
        phase,
        metrics: test_metrics(&model, test)?,
        model: Arc::new(model),
        log: Arc::new(log),
        seconds,
    })
}

/// Applies `f` to `0..n` on up to `workers` threads (0 = available cores);
/// results come back in index order regardless of scheduling.
pub fn parallel_map<T: Send>(n: usize, workers: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = match workers {
        0 => std::thread::available_parallelism().map_or(1, |p| p.get()),
        w => w,
    }
    .min(n.max(1));
    if workers <= 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let value = f(i);
                *slots[i].lock().unwrap() = Some(value);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every index is visited"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_keeps_order() {
        for workers in [1, 3] {
            assert_eq!(parallel_map(10, workers, |i| i * i), (0..10).map(|i| i * i).collect::<Vec<_>>());
        }
        assert!(parallel_map(0, 4, |i| i).is_empty());
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(0, SALT_TRAIN);
        assert_ne!(a, derive_seed(1, SALT_TRAIN));
        assert_ne!(a, derive_seed(0, SALT_TEST));
        assert_eq!(a, derive_seed(0, SALT_TRAIN));
    }
}
