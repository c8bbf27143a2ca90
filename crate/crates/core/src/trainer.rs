//! The training loop: warm-up on plain cross-entropy, then per-batch
//! threshold selection and the mode's objective. Also evaluation and k
//! sweeps.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::augment::{strong_augment, weak_augment, AugmentStream, Image};
use crate::config::{Mode, Precision, TrainConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::losses::{bottomk_mask, topk_mask, LossReport};
use crate::model::{
    forward, gradient_at, init_params, loss_and_gradient, ConsistencyHead, ConsistencyTerm,
    ImageBatch, ModelParams, Objective, TrainBatch,
};
use crate::optim::Optimizer;
use crate::real::Real;
use crate::selection::select;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::Shape(format!(
                "confusion matrix needs {} counts, got {}",
                classes * classes,
                counts.len()
            )));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.classes + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.classes..(truth + 1) * self.classes]
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.classes).map(|c| self.row(c).iter().sum()).collect()
    }

    /// `trace / total`, or 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

/// Index of the largest entry; the lower index wins ties.
pub fn argmax<R: PartialOrd + Copy>(row: &[R]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

const EVAL_CHUNK: usize = 256;

/// Accuracy of the positive head's argmax on un-augmented images against
/// the true labels.
pub fn evaluate<R: Real>(params: &ModelParams<R>, test: &Dataset) -> Result<Metrics> {
    let classes = params.arch().num_classes;
    if classes != test.num_classes {
        return Err(Error::Shape(format!(
            "model has {classes} classes, test set has {}",
            test.num_classes
        )));
    }
    let (h, w) = (test.height, test.width);
    let mut confusion = ConfusionMatrix::new(classes);
    for chunk in test.samples.chunks(EVAL_CHUNK) {
        let data: Vec<R> = chunk
            .iter()
            .flat_map(|s| s.intensities().map(|v| R::from_f64_lossy(v as f64)))
            .collect();
        let fwd = forward(params, ImageBatch::new(&data, chunk.len(), h, w)?, None)?;
        for (s, row) in chunk.iter().zip(fwd.predictions.p_w_p.chunks(classes)) {
            confusion.record(s.true_label as usize, argmax(row));
        }
    }
    Ok(Metrics {
        accuracy: confusion.accuracy(),
        confusion,
    })
}

/// Sample order for one epoch, a pure function of `(seed, epoch)`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5348_5546_464C_4521);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Loss of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub batch: usize,
    pub loss: LossReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub warmup: bool,
    pub test_accuracy: f64,
    /// Batch means of the two loss terms.
    pub mean_supervised: f64,
    pub mean_consistency: f64,
    /// Share of the epoch's samples that entered the supervised term.
    pub confident_fraction: f64,
    /// The same share per training label; `None` for labels absent from the
    /// training set.
    pub confident_fraction_per_class: Vec<Option<f64>>,
    /// Wall-clock time, only when `record_timing` is set.
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub mode: Mode,
    pub k: usize,
    pub seed: u64,
    pub epochs: Vec<EpochStats>,
    pub steps: Vec<StepRecord>,
    pub max_accuracy: f64,
    pub last5_mean: f64,
    /// Test confusion matrix after the final epoch.
    pub confusion: ConfusionMatrix,
    pub params: ModelParams<f64>,
}

impl TrainResult {
    pub fn accuracies(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.test_accuracy).collect()
    }
}

/// Largest value, or 0 for an empty slice.
pub fn max_accuracy(acc: &[f64]) -> f64 {
    acc.iter().copied().fold(0.0, f64::max)
}

/// Mean of the final five values (all of them if there are fewer).
pub fn last5_mean(acc: &[f64]) -> f64 {
    let tail = &acc[acc.len().saturating_sub(5)..];
    if tail.is_empty() {
        0.0
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

/// Called after every epoch with the epoch's statistics and parameters.
pub type EpochHook<'a> = dyn FnMut(&EpochStats, &ModelParams<f64>) -> Result<()> + 'a;

pub fn train(config: &TrainConfig, train_set: &Dataset, test_set: &Dataset) -> Result<TrainResult> {
    train_with_hook(config, train_set, test_set, &mut |_, _| Ok(()))
}

pub fn train_with_hook(
    config: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    hook: &mut EpochHook<'_>,
) -> Result<TrainResult> {
    match config.precision {
        Precision::F32 => train_in::<f32>(config, train_set, test_set, hook),
        Precision::F64 => train_in::<f64>(config, train_set, test_set, hook),
    }
}

/// The single-classifier ablation: least-k consistency on the positive head.
pub fn run_mode_single_head(
    config: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<TrainResult> {
    if config.mode != Mode::SingleHeadConsistency {
        return Err(Error::invalid(format!(
            "run_mode_single_head needs mode single_head_consistency, got {}",
            config.mode
        )));
    }
    train(config, train_set, test_set)
}

/// Worker count for fan-out: `NCCT_THREADS` if set, else the machine's
/// parallelism.
pub fn worker_threads() -> usize {
    std::env::var("NCCT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `jobs` on a pool of [`worker_threads`] threads, keeping input order.
pub fn run_parallel<T, U, F>(jobs: Vec<T>, f: F) -> Result<Vec<U>>
where
    T: Send,
    U: Send,
    F: Fn(T) -> Result<U> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    pool.install(|| jobs.into_par_iter().map(f).collect())
}

/// One training run per `k`, in the order given.
pub fn sweep_k(
    config: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    k_values: &[usize],
) -> Result<Vec<TrainResult>> {
    for &k in k_values {
        if k == 0 || k > train_set.num_classes {
            return Err(Error::invalid(format!(
                "k = {k} outside 1..={}",
                train_set.num_classes
            )));
        }
    }
    let jobs: Vec<TrainConfig> = k_values
        .iter()
        .map(|&k| TrainConfig { k, ..config.clone() })
        .collect();
    run_parallel(jobs, |c| train(&c, train_set, test_set))
}

fn check_compatible(config: &TrainConfig, train_set: &Dataset, test_set: &Dataset) -> Result<()> {
    if (train_set.num_classes, train_set.height, train_set.width)
        != (test_set.num_classes, test_set.height, test_set.width)
    {
        return Err(Error::Shape(format!(
            "train set is {} classes of {}x{}, test set is {} classes of {}x{}",
            train_set.num_classes,
            train_set.height,
            train_set.width,
            test_set.num_classes,
            test_set.height,
            test_set.width
        )));
    }
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::invalid("train and test sets must be non-empty"));
    }
    config.validate_for(train_set.num_classes)
}

struct EpochAccumulator {
    supervised: f64,
    consistency: f64,
    batches: usize,
    confident: Vec<usize>,
    seen: Vec<usize>,
}

impl EpochAccumulator {
    fn new(classes: usize) -> Self {
        EpochAccumulator {
            supervised: 0.0,
            consistency: 0.0,
            batches: 0,
            confident: vec![0; classes],
            seen: vec![0; classes],
        }
    }
}

fn train_in<R: Real>(
    config: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    hook: &mut EpochHook<'_>,
) -> Result<TrainResult> {
    check_compatible(config, train_set, test_set)?;
    let classes = train_set.num_classes;
    let (h, w) = (train_set.height, train_set.width);
    let images: Vec<Image> = train_set
        .samples
        .iter()
        .map(|s| Image::from_u8(h, w, &s.pixels))
        .collect();

    let mut params: ModelParams<R> = init_params(config.arch(classes), config.seed)?;
    let mut opt = Optimizer::new(config.optimizer, config.rates(), &params)?;
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut steps = Vec::new();
    let mut confusion = ConfusionMatrix::new(classes);

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let warmup = epoch <= config.warmup_epochs;
        let mut acc = EpochAccumulator::new(classes);
        let order = epoch_order(config.seed, epoch, train_set.len());
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let loss = train_step(config, train_set, &images, idx, epoch, warmup, &mut params, &mut opt, &mut acc)
                .map_err(|e| match e {
                    Error::NonFiniteLoss { value, .. } => Error::Diverged {
                        epoch,
                        batch: b + 1,
                        loss: value,
                    },
                    Error::NonFiniteGradient { .. } => Error::Diverged {
                        epoch,
                        batch: b + 1,
                        loss: f64::NAN,
                    },
                    other => other,
                })?;
            steps.push(StepRecord {
                epoch,
                batch: b + 1,
                loss,
            });
        }
        if params.first_non_finite().is_some() {
            return Err(Error::Diverged {
                epoch,
                batch: acc.batches,
                loss: f64::NAN,
            });
        }
        let metrics = evaluate(&params, test_set)?;
        confusion = metrics.confusion;
        let seen: usize = acc.seen.iter().sum();
        let stats = EpochStats {
            epoch,
            warmup,
            test_accuracy: metrics.accuracy,
            mean_supervised: acc.supervised / acc.batches as f64,
            mean_consistency: acc.consistency / acc.batches as f64,
            confident_fraction: acc.confident.iter().sum::<usize>() as f64 / seen as f64,
            confident_fraction_per_class: acc
                .confident
                .iter()
                .zip(&acc.seen)
                .map(|(&c, &n)| (n > 0).then(|| c as f64 / n as f64))
                .collect(),
            seconds: config
                .record_timing
                .then(|| started.elapsed().as_secs_f64()),
        };
        hook(&stats, &params.cast())?;
        epochs.push(stats);
    }

    let acc: Vec<f64> = epochs.iter().map(|e| e.test_accuracy).collect();
    Ok(TrainResult {
        mode: config.mode,
        k: config.k,
        seed: config.seed,
        max_accuracy: max_accuracy(&acc),
        last5_mean: last5_mean(&acc),
        epochs,
        steps,
        confusion,
        params: params.cast(),
    })
}

fn make_batch<R: Real>(
    train_set: &Dataset,
    images: &[Image],
    idx: &[usize],
    seed: u64,
    epoch: usize,
    with_strong: bool,
) -> TrainBatch<R> {
    let px = train_set.height * train_set.width;
    let mut weak = Vec::with_capacity(idx.len() * px);
    let mut strong = with_strong.then(|| Vec::with_capacity(idx.len() * px));
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        let s = &train_set.samples[i];
        let stream = AugmentStream::new(seed, epoch as u32, s.id);
        let lift = |v: &f32| R::from_f64_lossy(*v as f64);
        weak.extend(weak_augment(&images[i], &stream).data.iter().map(lift));
        if let Some(out) = strong.as_mut() {
            out.extend(strong_augment(&images[i], &stream).data.iter().map(lift));
        }
        labels.push(s.train_label);
    }
    TrainBatch {
        weak,
        strong,
        labels,
        height: train_set.height,
        width: train_set.width,
    }
}

#[allow(clippy::too_many_arguments)]
fn train_step<R: Real>(
    config: &TrainConfig,
    train_set: &Dataset,
    images: &[Image],
    idx: &[usize],
    epoch: usize,
    warmup: bool,
    params: &mut ModelParams<R>,
    opt: &mut Optimizer<R>,
    acc: &mut EpochAccumulator,
) -> Result<LossReport> {
    let classes = train_set.num_classes;
    let all_rows: Vec<usize> = (0..idx.len()).collect();
    let plain = warmup || config.mode == Mode::BaselineCe;
    let with_strong = !plain && matches!(config.mode, Mode::Ncct | Mode::SingleHeadConsistency);
    let batch: TrainBatch<R> = make_batch(train_set, images, idx, config.seed, epoch, with_strong);

    let report = if plain {
        loss_and_gradient(params, &batch, &Objective::supervised(&all_rows))?
    } else {
        let fwd = forward(params, batch.weak_view()?, batch.strong_view()?)?;
        let p = &fwd.predictions;
        let (_, part) = select(&p.p_w_p, classes, &batch.labels);
        let mask = match config.mode {
            Mode::Ncct => Some((ConsistencyHead::Negative, topk_mask(&p.p_w_n, classes, config.k)?)),
            Mode::SingleHeadConsistency => Some((
                ConsistencyHead::Positive,
                bottomk_mask(&p.p_w_p, classes, config.k)?,
            )),
            _ => None,
        };
        let objective = Objective {
            supervised_rows: &part.confident,
            consistency: mask.as_ref().map(|(head, m)| ConsistencyTerm {
                head: *head,
                rows: &part.non_confident,
                mask: m,
            }),
        };
        let r = gradient_at(params, &batch, &objective, fwd)?;
        for &i in &part.confident {
            acc.confident[batch.labels[i] as usize] += 1;
        }
        r
    };
    if plain {
        for &l in &batch.labels {
            acc.confident[l as usize] += 1;
        }
    }
    for &l in &batch.labels {
        acc.seen[l as usize] += 1;
    }
    acc.supervised += report.loss.supervised;
    acc.consistency += report.loss.consistency;
    acc.batches += 1;
    opt.step(params, &report.grads);
    Ok(report.loss)
}
