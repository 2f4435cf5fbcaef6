use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::log::{GapEntry, LogEntry, Phase, TrainingLog};
use super::sampling::{CategoricalSampler, SamplingTable};
use crate::data::{augment::augment_features_into, AugmentParams, BiasedDataset};
use crate::eval::group_losses;
use crate::nn::{
    sgd_step, ClassifierModel, GradientBuffer, LossKind, OptimizerState, SgdConfig, Workspace,
};
use crate::{DprError, Result, Scalar};

/// Hyperparameters of every training mode.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub biased_iters: usize,
    pub debiased_iters: usize,
    pub batch_size: usize,
    pub optimizer: SgdConfig,
    /// GCE exponent for the biased model.
    pub q: f64,
    /// Softmax temperature of the disagreement probability.
    pub tau: f64,
    /// Augment debiased (and reweighted) minibatches.
    pub augment: bool,
    /// Also augment biased and ERM minibatches.
    pub augment_biased: bool,
    pub augment_params: AugmentParams,
    /// Start the debiased model from the biased model's parameters.
    pub init_from_biased: bool,
    /// Train the biased model with GCE; plain cross-entropy otherwise.
    pub use_gce: bool,
    pub hidden: Vec<usize>,
    /// Record training-set group losses once per epoch.
    pub monitor_groups: bool,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            biased_iters: 3000,
            debiased_iters: 3000,
            batch_size: 128,
            optimizer: SgdConfig::default(),
            q: 0.7,
            tau: 1.0,
            augment: true,
            augment_biased: false,
            augment_params: AugmentParams::default(),
            init_from_biased: true,
            use_gce: true,
            hidden: vec![128],
            monitor_groups: false,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(DprError::param("batch size must be positive"));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(DprError::param("temperature must be positive"));
        }
        LossKind::Generalized { q: self.q }.validate()?;
        self.optimizer.validate()?;
        if self.hidden.contains(&0) {
            return Err(DprError::param("hidden widths must be positive"));
        }
        Ok(())
    }

    fn biased_loss(&self) -> LossKind {
        if self.use_gce {
            LossKind::Generalized { q: self.q }
        } else {
            LossKind::CrossEntropy
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    pub model: ClassifierModel<S>,
    pub log: TrainingLog,
}

// Independent ChaCha streams per purpose so phases never share randomness.
const STREAM_INIT: u64 = 1;
const STREAM_BIASED: u64 = 2;
const STREAM_DEBIASED_INIT: u64 = 3;
const STREAM_DEBIASED: u64 = 4;
const STREAM_ERM: u64 = 5;
const STREAM_REWEIGHTED: u64 = 6;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Fresh MLP sized for `data` with the schedule's hidden widths.
pub fn init_model<S: Scalar, R: Rng + ?Sized>(
    data: &BiasedDataset<S>,
    schedule: &TrainSchedule,
    rng: &mut R,
) -> Result<ClassifierModel<S>> {
    if data.is_empty() {
        return Err(DprError::param("cannot size a model from an empty dataset"));
    }
    ClassifierModel::mlp(data.feature_dim(), &schedule.hidden, data.num_classes(), rng)
}

enum Draw<'a> {
    Uniform,
    Table(&'a CategoricalSampler),
}

struct Loop<'a, S> {
    phase: Phase,
    iters: usize,
    loss: LossKind,
    draw: Draw<'a>,
    weights: Option<&'a [S]>,
    augment: Option<AugmentParams>,
}

fn run_sgd<S: Scalar>(
    model: &mut ClassifierModel<S>,
    data: &BiasedDataset<S>,
    schedule: &TrainSchedule,
    spec: Loop<'_, S>,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingLog> {
    let mut log = TrainingLog::default();
    if spec.iters == 0 {
        return Ok(log);
    }
    if data.is_empty() {
        return Err(DprError::param("cannot train on an empty dataset"));
    }
    let n = data.len();
    let batch = schedule.batch_size;
    let epoch = n.div_ceil(batch);
    let mut optimizer = OptimizerState::new(schedule.optimizer.clone(), model)?;
    let mut grads = GradientBuffer::zeros_like(model);
    let mut ws = Workspace::for_model(model);
    let mut dlogits = vec![S::zero(); model.num_classes()];
    let mut augmented = Vec::new();
    let inv_batch = S::one() / S::from_usize_lossy(batch);

    for step in 0..spec.iters {
        grads.clear();
        let mut total = S::zero();
        for _ in 0..batch {
            let i = match spec.draw {
                Draw::Uniform => rng.random_range(0..n),
                Draw::Table(sampler) => sampler.sample(rng),
            };
            let example = data.get(i);
            let x: &[S] = match &spec.augment {
                Some(params) => {
                    augment_features_into(&example.features, data.layout(), params, rng, &mut augmented)?;
                    &augmented
                }
                None => &example.features,
            };
            let logits = model.forward_with(x, &mut ws)?;
            let loss = spec.loss.loss_and_grad_into(logits, example.y, &mut dlogits)?;
            let w = spec.weights.map_or(S::one(), |w| w[i]);
            total += w * loss;
            model.backward_with(x, &dlogits, w * inv_batch, &mut ws, &mut grads)?;
        }
        let mean = total * inv_batch;
        if !mean.is_finite() {
            return Err(DprError::Training {
                step,
                reason: format!("non-finite {} loss", spec.phase),
            });
        }
        sgd_step(model, &grads, &mut optimizer, step)?;
        log.entries.push(LogEntry {
            step,
            phase: spec.phase,
            loss: mean.to_f64_lossy(),
            lr: schedule.optimizer.learning_rate_at(step),
        });
        if schedule.monitor_groups && ((step + 1) % epoch == 0 || step + 1 == spec.iters) {
            let m = group_losses(model, data, LossKind::CrossEntropy, None)?;
            log.gaps.push(GapEntry {
                step,
                phase: spec.phase,
                aligned_loss: m.aligned.as_ref().map(|g| g.avg_loss.to_f64_lossy()),
                conflicting_loss: m.conflicting.as_ref().map(|g| g.avg_loss.to_f64_lossy()),
            });
        }
    }
    Ok(log)
}

/// Trains the intentionally biased model with GCE (or CE when
/// `use_gce` is off) on uniformly drawn minibatches.
pub fn train_biased<S: Scalar>(
    train: &BiasedDataset<S>,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<TrainOutcome<S>> {
    schedule.validate()?;
    let mut model = init_model(train, schedule, &mut stream(seed, STREAM_INIT))?;
    let log = run_sgd(
        &mut model,
        train,
        schedule,
        Loop {
            phase: Phase::Biased,
            iters: schedule.biased_iters,
            loss: schedule.biased_loss(),
            draw: Draw::Uniform,
            weights: None,
            augment: schedule.augment_biased.then_some(schedule.augment_params),
        },
        &mut stream(seed, STREAM_BIASED),
    )?;
    Ok(TrainOutcome { model, log })
}

fn debiased_start<S: Scalar>(
    train: &BiasedDataset<S>,
    table: &SamplingTable<S>,
    biased: &ClassifierModel<S>,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<ClassifierModel<S>> {
    schedule.validate()?;
    if table.len() != train.len() {
        return Err(DprError::Consistency(format!(
            "table covers {} examples but the dataset has {}",
            table.len(),
            train.len()
        )));
    }
    table.validate()?;
    if schedule.init_from_biased {
        let fresh = init_model(train, schedule, &mut stream(seed, STREAM_DEBIASED_INIT))?;
        let congruent = fresh.layers().len() == biased.layers().len()
            && fresh
                .layers()
                .iter()
                .zip(biased.layers())
                .all(|(a, b)| a.rows() == b.rows() && a.cols() == b.cols());
        if !congruent {
            return Err(DprError::shape(
                "biased model does not match the debiased architecture",
            ));
        }
        Ok(biased.clone())
    } else {
        init_model(train, schedule, &mut stream(seed, STREAM_DEBIASED_INIT))
    }
}

/// Cross-entropy training on minibatches drawn from `table`, starting from
/// the biased model when `init_from_biased` is set.
pub fn train_debiased<S: Scalar>(
    train: &BiasedDataset<S>,
    table: &SamplingTable<S>,
    biased: &ClassifierModel<S>,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<TrainOutcome<S>> {
    let mut model = debiased_start(train, table, biased, schedule, seed)?;
    let sampler = CategoricalSampler::new(table);
    let log = run_sgd(
        &mut model,
        train,
        schedule,
        Loop {
            phase: Phase::Debiased,
            iters: schedule.debiased_iters,
            loss: LossKind::CrossEntropy,
            draw: Draw::Table(&sampler),
            weights: None,
            augment: schedule.augment.then_some(schedule.augment_params),
        },
        &mut stream(seed, STREAM_DEBIASED),
    )?;
    Ok(TrainOutcome { model, log })
}

/// Like [`train_debiased`] but with uniform minibatches and each example's
/// loss multiplied by `n * r_i`.
pub fn train_reweighted<S: Scalar>(
    train: &BiasedDataset<S>,
    table: &SamplingTable<S>,
    biased: &ClassifierModel<S>,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<TrainOutcome<S>> {
    let mut model = debiased_start(train, table, biased, schedule, seed)?;
    let weights = table.loss_weights();
    let log = run_sgd(
        &mut model,
        train,
        schedule,
        Loop {
            phase: Phase::Reweighted,
            iters: schedule.debiased_iters,
            loss: LossKind::CrossEntropy,
            draw: Draw::Uniform,
            weights: Some(&weights),
            augment: schedule.augment.then_some(schedule.augment_params),
        },
        &mut stream(seed, STREAM_REWEIGHTED),
    )?;
    Ok(TrainOutcome { model, log })
}

/// Plain cross-entropy baseline from a fresh initialization, running for
/// `debiased_iters` steps.
pub fn train_erm<S: Scalar>(
    train: &BiasedDataset<S>,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<TrainOutcome<S>> {
    schedule.validate()?;
    let mut model = init_model(train, schedule, &mut stream(seed, STREAM_INIT))?;
    let log = run_sgd(
        &mut model,
        train,
        schedule,
        Loop {
            phase: Phase::Erm,
            iters: schedule.debiased_iters,
            loss: LossKind::CrossEntropy,
            draw: Draw::Uniform,
            weights: None,
            augment: schedule.augment_biased.then_some(schedule.augment_params),
        },
        &mut stream(seed, STREAM_ERM),
    )?;
    Ok(TrainOutcome { model, log })
}
