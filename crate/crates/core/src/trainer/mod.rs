//! Episodic multi-task training, evaluation with confidence intervals,
//! metrics logging, and the sweep/ablation drivers.

mod config;
mod experiments;
mod optim;

pub use config::{NumericMode, RunConfig, SEED_ENV};
pub use experiments::{
    ablate, ablation_variants, sweep, write_ablation_csv, write_sweep_csv, AblationRow, SweepParam, SweepRow,
    Variant,
};
pub use optim::{
    Optimizer, OptimizerKind, Plateau, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, MIN_LR, PLATEAU_FACTOR, PLATEAU_PATIENCE,
    PLATEAU_THRESHOLD, SGD_MOMENTUM,
};

use std::fmt::Write as _;
use std::path::Path;

use crate::backbone::BackboneConfig;
use crate::episodes::{build_batch, sample_episode, Dataset, Split, Transform};
use crate::error::{Error, Result};
use crate::fusion::{default_scale, SE_REDUCTION};
use crate::metric;
use crate::model::{EpisodeBatch, LossSpec, Model, ModelConfig};
use crate::rng;
use crate::semantics::{soft_target, SoftLabel, WordVectorTable};
use crate::tensor::{BnMode, Graph, Real};

/// z-value of the two-sided 95% normal interval.
pub const Z95: f64 = 1.96;

pub const METRICS_HEADER: &str = "epoch,split,mean_acc,ci95,loss_cls,loss_aux,lr";

/// Mean and 95% half-width `1.96·s/√n`, with `s` the sample standard
/// deviation; a single observation has half-width 0.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, Z95 * var.sqrt() / (n as f64).sqrt())
}

/// Images plus the soft targets of the classes the auxiliary task trains on.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub dataset: Dataset,
    /// Indexed by dataset class id; present for meta-train classes only.
    pub targets: Vec<Option<SoftLabel>>,
    pub word_dim: usize,
}

impl TaskData {
    /// Soft targets are built for meta-train classes only: val and test
    /// labels are never turned into model inputs.
    pub fn new(dataset: Dataset, table: &WordVectorTable, tau_t: f64) -> Result<Self> {
        let targets = dataset
            .classes
            .iter()
            .map(|c| match c.split {
                Split::Train => soft_target(&c.label, table, tau_t).map(Some),
                _ => Ok(None),
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            dataset,
            targets,
            word_dim: table.dim(),
        })
    }
}

/// Architecture implied by a run config and the word-vector dimension.
pub fn model_config(cfg: &RunConfig, word_dim: usize) -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig {
            in_channels: 3,
            filters: cfg.filters.clone(),
        },
        word_dim,
        fusion: cfg.fusion,
        scale: cfg.scale.unwrap_or_else(|| default_scale(word_dim)),
        tau: cfg.tau,
        se_reduction: SE_REDUCTION,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mean_acc: f64,
    pub ci95: f64,
    pub episodes: usize,
    pub accuracies: Vec<f64>,
    /// Per-episode classification loss.
    pub losses: Vec<f64>,
}

impl EvalReport {
    pub fn from_episodes(accuracies: Vec<f64>, losses: Vec<f64>) -> Self {
        let (mean_acc, ci95) = mean_ci95(&accuracies);
        Self {
            mean_acc,
            ci95,
            episodes: accuracies.len(),
            accuracies,
            losses,
        }
    }

    pub fn mean_loss(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len().max(1) as f64
    }
}

/// One row of the metrics CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: Split,
    pub mean_acc: f64,
    pub ci95: f64,
    pub loss_cls: f64,
    pub loss_aux: f64,
    pub lr: f64,
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:e}",
            r.epoch, r.split, r.mean_acc, r.ci95, r.loss_cls, r.loss_aux, r.lr
        );
    }
    s
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    std::fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(path, e))
}

/// Fraction of rows whose nearest prototype is the label.
pub fn episode_accuracy<T: Real>(distances: &crate::tensor::Tensor<T>, labels: &[usize]) -> f64 {
    let pred = metric::nearest(distances);
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Losses and accuracy of one optimization step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss_cls: f64,
    pub loss_aux: f64,
    pub total: f64,
    pub accuracy: f64,
}

/// Model, optimizer and schedule state of one training run.
#[derive(Clone, Debug)]
pub struct Trainer<T: Real> {
    pub config: RunConfig,
    pub model: Model<T>,
    pub optimizer: Optimizer,
    pub plateau: Plateau,
    pub step: u64,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: RunConfig, word_dim: usize) -> Result<Self> {
        config.validate()?;
        let model = Model::new(model_config(&config, word_dim), rng::derive(config.seed, "init"))?;
        Ok(Self {
            optimizer: Optimizer::new(config.optimizer, config.weight_decay),
            plateau: Plateau::new(config.lr),
            model,
            config,
            step: 0,
        })
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            lambda: self.config.lambda,
            aux: self.config.aux_loss,
            multi_task: self.config.multi_task(),
        }
    }

    /// Forward, backward and one optimizer update on `batch`.
    pub fn train_step(&mut self, batch: &EpisodeBatch<T>) -> Result<StepStats> {
        self.train_step_with(batch, self.loss_spec())
    }

    pub fn train_step_with(&mut self, batch: &EpisodeBatch<T>, loss: LossSpec) -> Result<StepStats> {
        let step = self.step;
        self.step += 1;
        let mut g = Graph::new();
        let bound = self.model.params.bind(&mut g, true);
        let fwd = self.model.forward_episode(&mut g, &bound, batch, BnMode::Train, loss)?;
        let total = g.value(fwd.total).item()?.as_f64();
        if !total.is_finite() {
            return Err(Error::Divergence { step: step as usize });
        }
        let stats = StepStats {
            loss_cls: g.value(fwd.loss_cls).item()?.as_f64(),
            loss_aux: match fwd.loss_aux {
                Some(v) => g.value(v).item()?.as_f64(),
                None => 0.0,
            },
            total,
            accuracy: episode_accuracy(g.value(fwd.distances), &batch.query_labels),
        };
        g.backward(fwd.total)?;
        let grads = bound.grads(&g);
        if !grads.all_finite() {
            return Err(Error::Divergence { step: step as usize });
        }
        self.optimizer.step(&mut self.model.params, &grads, self.plateau.lr)?;
        self.model.apply_bn_updates(fwd.bn_updates)?;
        Ok(stats)
    }

    /// Sample, augment and train on the next meta-train episode.
    pub fn train_episode(&mut self, data: &TaskData) -> Result<StepStats> {
        let cfg = &self.config;
        let mut r = rng::child(rng::derive(cfg.seed, "train"), self.step);
        let ep = sample_episode(&data.dataset, Split::Train, cfg.ways, cfg.shots, cfg.queries, &mut r)?;
        let targets = cfg.multi_task().then_some(data.targets.as_slice());
        let batch = build_batch(&data.dataset, &ep, Transform::Augment { size: cfg.image_size }, targets, &mut r)?;
        self.train_step(&batch)
    }
}

/// Evaluate `episodes` episodes of `split` with deterministic center crops.
/// Episode `i` always draws from the same random stream, so the report does
/// not depend on `threads`.
pub fn evaluate<T: Real>(
    model: &Model<T>,
    dataset: &Dataset,
    split: Split,
    cfg: &RunConfig,
    episodes: usize,
    threads: usize,
) -> Result<EvalReport> {
    let seed = rng::derive(cfg.seed, &format!("eval-{split}"));
    let one = |i: usize| -> Result<(f64, f64)> {
        let mut r = rng::child(seed, i as u64);
        let ep = sample_episode(dataset, split, cfg.ways, cfg.shots, cfg.queries, &mut r)?;
        let batch = build_batch::<T, _>(dataset, &ep, Transform::Center { size: cfg.image_size }, None, &mut r)?;
        let mut g = Graph::new();
        let bound = model.params.bind(&mut g, false);
        let spec = LossSpec {
            lambda: 0.0,
            aux: cfg.aux_loss,
            multi_task: false,
        };
        let fwd = model.forward_episode(&mut g, &bound, &batch, BnMode::Eval, spec)?;
        let acc = episode_accuracy(g.value(fwd.distances), &batch.query_labels);
        Ok((acc, g.value(fwd.loss_cls).item()?.as_f64()))
    };
    let threads = threads.clamp(1, episodes.max(1));
    let results: Vec<Result<(f64, f64)>> = if threads == 1 {
        (0..episodes).map(one).collect()
    } else {
        let mut slots: Vec<Option<Result<(f64, f64)>>> = (0..episodes).map(|_| None).collect();
        let chunk = episodes.div_ceil(threads);
        std::thread::scope(|s| {
            for (t, part) in slots.chunks_mut(chunk).enumerate() {
                let one = &one;
                s.spawn(move || {
                    for (j, slot) in part.iter_mut().enumerate() {
                        *slot = Some(one(t * chunk + j));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("every episode evaluated")).collect()
    };
    let mut accs = Vec::with_capacity(episodes);
    let mut losses = Vec::with_capacity(episodes);
    for r in results {
        let (a, l) = r?;
        accs.push(a);
        losses.push(l);
    }
    Ok(EvalReport::from_episodes(accs, losses))
}

/// Result of a complete training run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    /// Final parameters, widened to 64-bit (exact for 32-bit runs).
    pub model: Model<f64>,
    pub rows: Vec<MetricsRow>,
    /// Test-split evaluation when requested.
    pub test: Option<EvalReport>,
}

/// Train for the configured epochs, validating after each epoch and
/// adjusting the learning rate on plateaus. With `test_episodes`, the final
/// model is also evaluated on the test split.
pub fn train_generic<T: Real>(
    cfg: &RunConfig,
    data: &TaskData,
    threads: usize,
    test_episodes: Option<usize>,
) -> Result<RunOutcome> {
    let mut trainer = Trainer::<T>::new(cfg.clone(), data.word_dim)?;
    let mut rows = Vec::with_capacity(2 * cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let lr = trainer.plateau.lr;
        let mut accs = Vec::with_capacity(cfg.episodes_per_epoch);
        let (mut l_cls, mut l_aux) = (0.0, 0.0);
        for _ in 0..cfg.episodes_per_epoch {
            let s = trainer.train_episode(data)?;
            accs.push(s.accuracy);
            l_cls += s.loss_cls;
            l_aux += s.loss_aux;
        }
        let n = cfg.episodes_per_epoch as f64;
        let (mean_acc, ci95) = mean_ci95(&accs);
        rows.push(MetricsRow {
            epoch,
            split: Split::Train,
            mean_acc,
            ci95,
            loss_cls: l_cls / n,
            loss_aux: l_aux / n,
            lr,
        });
        let val = evaluate(&trainer.model, &data.dataset, Split::Val, cfg, cfg.val_episodes, threads)?;
        rows.push(MetricsRow {
            epoch,
            split: Split::Val,
            mean_acc: val.mean_acc,
            ci95: val.ci95,
            loss_cls: val.mean_loss(),
            loss_aux: 0.0,
            lr,
        });
        trainer.plateau.observe(val.mean_acc);
        log::info!(
            "epoch {epoch}: train acc {mean_acc:.4} loss {:.4}, val acc {:.4}",
            l_cls / n,
            val.mean_acc
        );
    }
    let test = match test_episodes {
        Some(n) => Some(evaluate(&trainer.model, &data.dataset, Split::Test, cfg, n, threads)?),
        None => None,
    };
    Ok(RunOutcome {
        model: trainer.model.cast(),
        rows,
        test,
    })
}

/// [`train_generic`] in the configured numeric mode.
pub fn train(cfg: &RunConfig, data: &TaskData, threads: usize, test_episodes: Option<usize>) -> Result<RunOutcome> {
    match cfg.numeric_mode {
        NumericMode::F32 => train_generic::<f32>(cfg, data, threads, test_episodes),
        NumericMode::F64 => train_generic::<f64>(cfg, data, threads, test_episodes),
    }
}

/// Evaluate a stored model in the configured numeric mode.
pub fn evaluate_model(
    model: &Model<f64>,
    dataset: &Dataset,
    split: Split,
    cfg: &RunConfig,
    episodes: usize,
    threads: usize,
) -> Result<EvalReport> {
    match cfg.numeric_mode {
        NumericMode::F32 => evaluate(&model.cast::<f32>(), dataset, split, cfg, episodes, threads),
        NumericMode::F64 => evaluate(model, dataset, split, cfg, episodes, threads),
    }
}
