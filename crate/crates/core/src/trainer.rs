//! Mini-batch training with early stopping, validation and evaluation.
//!
//! The outer loop ([`fit_source`]) only sees an [`EpochSource`], so its
//! stopping and scheduling rules can be exercised with scripted losses.
//! [`ModelTrainer`] is the real source.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{bail, Error, Result};
use crate::exec::Executor;
use crate::loss::{hybrid_loss_node, recon_loss, LossConfig};
use crate::metrics::{aggregate, fid_latent, MetricsReport, SignalMetrics};
use crate::model::{eligible_patches, sample_mask, FhrFormer, ModelConfig, PatchLayout};
use crate::numerics::{AdamConfig, AdamState, DftBasis, Graph, NamedTensor, PlateauScheduler};
use crate::prep::PreparedSignal;
use crate::rng::{stream, Stream};

/// Samples per gradient-reduction group. Groups are the unit of parallel
/// work and are reduced in index order, so the sum never depends on the
/// number of workers.
pub const REDUCTION_GROUP: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub scheduler_patience: usize,
    pub scheduler_factor: f64,
    pub seed: u64,
    pub mask_ratio: f64,
    pub loss: LossConfig,
}

impl TrainConfig {
    /// Full-scale training hyperparameters.
    pub fn paper() -> Self {
        Self {
            batch_size: 128,
            learning_rate: 1e-4,
            weight_decay: 0.01,
            max_epochs: 200,
            early_stop_patience: 20,
            scheduler_patience: 5,
            scheduler_factor: 0.1,
            seed: 42,
            mask_ratio: 0.15,
            loss: LossConfig::default(),
        }
    }

    /// Desk-scale training: smaller batches and a larger step size.
    pub fn toy() -> Self {
        Self { batch_size: 8, learning_rate: 1e-3, max_epochs: 40, ..Self::paper() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.early_stop_patience == 0 || self.scheduler_patience == 0 {
            bail!(Config, "batch size, epochs and patience values must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            bail!(Config, "learning rate must be positive and weight decay non-negative");
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            bail!(Config, "mask ratio {} outside (0, 1)", self.mask_ratio);
        }
        self.loss.validate().map_err(|e| Error::Config(e.to_string()))
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, weight_decay: self.weight_decay, ..AdamConfig::default() }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Rate used during this epoch.
    pub lr: f64,
    /// Consecutive non-improving epochs after this one.
    pub stale: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Anything that can run a training epoch and report a validation loss.
pub trait EpochSource {
    type Snapshot;
    /// Runs epoch `epoch` (1-based) at rate `lr`, returns the mean training loss.
    fn train_epoch(&mut self, epoch: usize, lr: f64) -> Result<f64>;
    fn validate(&mut self) -> Result<f64>;
    fn snapshot(&self) -> Self::Snapshot;
    fn restore(&mut self, snapshot: Self::Snapshot);
}

/// Hooks into the outer loop; an error from either aborts training.
pub trait Observer<S> {
    fn on_epoch(&mut self, _log: &EpochLog) -> Result<()> {
        Ok(())
    }
    fn on_best(&mut self, _epoch: usize, _snapshot: &S) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoObserver;

impl<S> Observer<S> for NoObserver {}

/// Outer loop: train, validate, keep the best snapshot, stop after
/// `early_stop_patience` non-improving epochs, step the scheduler, and
/// finally restore the best snapshot.
pub fn fit_source<S, O>(source: &mut S, cfg: &TrainConfig, observer: &mut O) -> Result<FitReport>
where
    S: EpochSource,
    O: Observer<S::Snapshot>,
{
    cfg.validate()?;
    let mut sched = PlateauScheduler::new(cfg.learning_rate, cfg.scheduler_patience, cfg.scheduler_factor)?;
    let mut best_val = f64::INFINITY;
    let mut best: Option<(usize, S::Snapshot)> = None;
    let mut stale = 0;
    let mut history = Vec::new();
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let lr = sched.learning_rate();
        let train_loss = source.train_epoch(epoch, lr)?;
        let val_loss = source.validate()?;
        if !val_loss.is_finite() {
            bail!(Training, "epoch {}: validation loss is {}", epoch, val_loss);
        }
        if val_loss < best_val {
            best_val = val_loss;
            stale = 0;
            let snap = source.snapshot();
            observer.on_best(epoch, &snap)?;
            best = Some((epoch, snap));
        } else {
            stale += 1;
        }
        sched.step(val_loss)?;
        let log = EpochLog { epoch, train_loss, val_loss, lr, stale };
        observer.on_epoch(&log)?;
        history.push(log);
        if stale >= cfg.early_stop_patience {
            stopped_early = true;
            break;
        }
    }
    let (best_epoch, snap) = best.ok_or_else(|| Error::Training("no epoch completed".to_string()))?;
    source.restore(snap);
    Ok(FitReport { history, best_epoch, best_val_loss: best_val, stopped_early })
}

/// Masked-patch layout for one sample.
fn layout_for(signal: &PreparedSignal, cfg: &ModelConfig, ratio: f64, rng: &mut crate::rng::StreamRng) -> Result<PatchLayout> {
    let n = cfg.n_patches();
    let eligible = eligible_patches(signal.pad_len(), cfg.patch_size, n);
    sample_mask(n, ratio, &eligible, rng)
}

fn check_signals(data: &[PreparedSignal], cfg: &ModelConfig, what: &str) -> Result<()> {
    if data.is_empty() {
        bail!(Data, "{} split is empty", what);
    }
    if let Some(s) = data.iter().find(|s| s.values.len() != cfg.signal_length) {
        bail!(Dimension, "episode {} has length {}, model expects {}", s.episode_id, s.values.len(), cfg.signal_length);
    }
    Ok(())
}

/// Loss and parameter gradient of one training sample.
fn sample_gradient(
    model: &FhrFormer<f32>,
    basis: &DftBasis<f32>,
    signal: &PreparedSignal,
    cfg: &TrainConfig,
    epoch: usize,
    idx: usize,
    grads: &mut [Vec<f32>],
) -> Result<f64> {
    let mut mask_rng = stream(cfg.seed, Stream::Mask, epoch as u64, idx as u64);
    let layout = layout_for(signal, model.config(), cfg.mask_ratio, &mut mask_rng)?;
    let mut drop_rng = stream(cfg.seed, Stream::Dropout, epoch as u64, idx as u64);
    let mut g = Graph::new();
    let b = model.bind(&mut g);
    let out = model.forward(&mut g, &b, &signal.values, &layout, 0, Some(&mut drop_rng))?;
    let nodes = hybrid_loss_node(&mut g, basis, &out, &layout, &cfg.loss)?;
    let gr = g.backward(nodes.total)?;
    gr.accumulate_params(grads);
    Ok(g.scalar(nodes.total) as f64)
}

/// Validation loss of one sample with its fixed validation mask.
fn sample_loss(
    model: &FhrFormer<f32>,
    basis: &DftBasis<f32>,
    signal: &PreparedSignal,
    loss: &LossConfig,
    layout: &PatchLayout,
) -> Result<f64> {
    let mut g = Graph::new();
    let b = model.bind(&mut g);
    let out = model.forward(&mut g, &b, &signal.values, layout, 0, None)?;
    let nodes = hybrid_loss_node(&mut g, basis, &out, layout, loss)?;
    let v = g.scalar(nodes.total) as f64;
    if !v.is_finite() {
        bail!(NonFinite, "loss of episode {} is {}", signal.episode_id, v);
    }
    Ok(v)
}

/// Fixed validation mask of the `idx`-th validation signal.
pub fn validation_layout(signal: &PreparedSignal, cfg: &ModelConfig, ratio: f64, seed: u64, idx: usize) -> Result<PatchLayout> {
    layout_for(signal, cfg, ratio, &mut stream(seed, Stream::ValidationMask, idx as u64, 0))
}

/// Mean validation loss: dropout off, masks fixed by `seed`.
pub fn validate<E: Executor>(
    model: &FhrFormer<f32>,
    data: &[PreparedSignal],
    cfg: &TrainConfig,
    exec: &E,
) -> Result<f64> {
    check_signals(data, model.config(), "validation")?;
    let basis = DftBasis::new(model.config().signal_length)?;
    let losses = exec.map(data.len(), |i| {
        let layout = validation_layout(&data[i], model.config(), cfg.mask_ratio, cfg.seed, i)?;
        sample_loss(model, &basis, &data[i], &cfg.loss, &layout)
    });
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / data.len() as f64)
}

/// The real epoch source: a model, its optimizer and two data splits.
pub struct ModelTrainer<'d, E> {
    pub model: FhrFormer<f32>,
    adam: AdamState<f32>,
    basis: DftBasis<f32>,
    train: &'d [PreparedSignal],
    val: &'d [PreparedSignal],
    cfg: TrainConfig,
    exec: &'d E,
}

impl<'d, E: Executor> ModelTrainer<'d, E> {
    pub fn new(
        model: FhrFormer<f32>,
        train: &'d [PreparedSignal],
        val: &'d [PreparedSignal],
        cfg: TrainConfig,
        exec: &'d E,
    ) -> Result<Self> {
        cfg.validate()?;
        check_signals(train, model.config(), "training")?;
        check_signals(val, model.config(), "validation")?;
        let adam = AdamState::new(cfg.adam(), model.params());
        let basis = DftBasis::new(model.config().signal_length)?;
        Ok(Self { model, adam, basis, train, val, cfg, exec })
    }

    pub fn into_model(self) -> FhrFormer<f32> {
        self.model
    }

    /// Epoch order: a permutation that depends only on `(seed, epoch)`.
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut stream(self.cfg.seed, Stream::Shuffle, epoch as u64, 0));
        order
    }

    fn batch_step(&mut self, epoch: usize, batch_no: usize, batch: &[usize]) -> Result<f64> {
        let model = &self.model;
        let basis = &self.basis;
        let train = self.train;
        let cfg = &self.cfg;
        let sizes: Vec<usize> = model.params().iter().map(|p| p.tensor.len()).collect();
        let groups = batch.len().div_ceil(REDUCTION_GROUP);
        let partials = self.exec.map(groups, |gi| -> Result<(f64, Vec<Vec<f32>>)> {
            let mut grads: Vec<Vec<f32>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
            let mut loss = 0.0;
            for &idx in batch.iter().skip(gi * REDUCTION_GROUP).take(REDUCTION_GROUP) {
                loss += sample_gradient(model, basis, &train[idx], cfg, epoch, idx, &mut grads)?;
            }
            Ok((loss, grads))
        });
        let mut total_loss = 0.0;
        let mut total: Vec<Vec<f32>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
        for part in partials {
            let (loss, grads) = part.map_err(|e| Error::Training(format!("epoch {epoch} batch {batch_no}: {e}")))?;
            total_loss += loss;
            for (t, g) in total.iter_mut().zip(&grads) {
                t.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
        let inv = 1.0 / batch.len() as f32;
        total.iter_mut().flatten().for_each(|v| *v *= inv);
        let mean_loss = total_loss / batch.len() as f64;
        if !mean_loss.is_finite() {
            bail!(Training, "epoch {} batch {}: loss is {}", epoch, batch_no, mean_loss);
        }
        self.adam
            .step(self.model.params_mut(), &total)
            .map_err(|e| Error::Training(format!("epoch {epoch} batch {batch_no}: {e}")))?;
        Ok(mean_loss)
    }
}

impl<E: Executor> EpochSource for ModelTrainer<'_, E> {
    type Snapshot = Vec<NamedTensor<f32>>;

    fn train_epoch(&mut self, epoch: usize, lr: f64) -> Result<f64> {
        self.adam.set_learning_rate(lr);
        let order = self.epoch_order(epoch);
        let mut total = 0.0;
        for (b, batch) in order.chunks(self.cfg.batch_size).enumerate() {
            total += self.batch_step(epoch, b, batch)? * batch.len() as f64;
        }
        Ok(total / order.len() as f64)
    }

    fn validate(&mut self) -> Result<f64> {
        validate(&self.model, self.val, &self.cfg, self.exec)
    }

    fn snapshot(&self) -> Self::Snapshot {
        self.model.params().to_vec()
    }

    fn restore(&mut self, snapshot: Self::Snapshot) {
        self.model.params_mut().clone_from_slice(&snapshot);
    }
}

/// Trains `model` and returns the best-validation weights with the log.
pub fn fit<E, O>(
    model: FhrFormer<f32>,
    train: &[PreparedSignal],
    val: &[PreparedSignal],
    cfg: &TrainConfig,
    exec: &E,
    observer: &mut O,
) -> Result<(FhrFormer<f32>, FitReport)>
where
    E: Executor,
    O: Observer<Vec<NamedTensor<f32>>>,
{
    let mut trainer = ModelTrainer::new(model, train, val, *cfg, exec)?;
    let report = fit_source(&mut trainer, cfg, observer)?;
    Ok((trainer.into_model(), report))
}

/// Per-signal evaluation output.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated {
    pub episode_id: u64,
    pub recon: Vec<f32>,
    pub metrics: SignalMetrics,
}

/// Masks each test signal (seeded), reconstructs it in inference mode and
/// reports metrics on the composed signal.
pub fn evaluate_signals<E: Executor>(
    model: &FhrFormer<f32>,
    data: &[PreparedSignal],
    mask_ratio: f64,
    seed: u64,
    exec: &E,
) -> Result<Vec<Evaluated>> {
    check_signals(data, model.config(), "test")?;
    let cfg = model.config();
    exec.map(data.len(), |i| {
        let s = &data[i];
        let layout = layout_for(s, cfg, mask_ratio, &mut stream(seed, Stream::EvalMask, i as u64, 0))?;
        let mut g = Graph::new();
        let b = model.bind(&mut g);
        let out = model.forward(&mut g, &b, &s.values, &layout, 0, None)?;
        let recon = g.value(out.recon).to_vec();
        let rl = recon_loss(g.value(out.predictions), &s.values, cfg.patch_size, &layout.masked)?;
        let metrics = SignalMetrics::compute(&s.values, &recon, rl)?;
        Ok(Evaluated { episode_id: s.episode_id, recon, metrics })
    })
    .into_iter()
    .collect()
}

/// Aggregated test metrics, FID included.
pub fn evaluate<E: Executor>(
    model: &FhrFormer<f32>,
    data: &[PreparedSignal],
    mask_ratio: f64,
    seed: u64,
    exec: &E,
) -> Result<MetricsReport> {
    let rows = evaluate_signals(model, data, mask_ratio, seed, exec)?;
    report_from(model, data, &rows)
}

pub fn report_from(model: &FhrFormer<f32>, data: &[PreparedSignal], rows: &[Evaluated]) -> Result<MetricsReport> {
    let originals: Vec<Vec<f32>> = data.iter().map(|s| s.values.clone()).collect();
    let recons: Vec<Vec<f32>> = rows.iter().map(|r| r.recon.clone()).collect();
    let fid = fid_latent(model, &originals, &recons)?;
    let per: Vec<SignalMetrics> = rows.iter().map(|r| r.metrics).collect();
    aggregate(&per, fid)
}

/// One cell of a patch-size × mask-ratio sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub patch_size: usize,
    pub mask_ratio: f64,
    pub outcome: core::result::Result<(MetricsReport, usize), String>,
}

/// Trains and evaluates one model per grid cell. A failing cell is
/// recorded and the sweep moves on.
#[allow(clippy::too_many_arguments)]
pub fn sweep<E: Executor>(
    patch_sizes: &[usize],
    mask_ratios: &[f64],
    base: &ModelConfig,
    cfg: &TrainConfig,
    train: &[PreparedSignal],
    val: &[PreparedSignal],
    test: &[PreparedSignal],
    exec: &E,
) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for &patch_size in patch_sizes {
        for &mask_ratio in mask_ratios {
            let outcome = (|| -> Result<(MetricsReport, usize)> {
                let mc = ModelConfig { patch_size, mask_ratio, ..*base };
                let tc = TrainConfig { mask_ratio, ..*cfg };
                let model = FhrFormer::new(mc, cfg.seed)?;
                let (model, report) = fit(model, train, val, &tc, exec, &mut NoObserver)?;
                Ok((evaluate(&model, test, mask_ratio, cfg.seed, exec)?, report.best_epoch))
            })()
            .map_err(|e| e.to_string());
            rows.push(SweepRow { patch_size, mask_ratio, outcome });
        }
    }
    rows
}
