//! Mini-batch training loop: augmentation sampling, smooth-loss objective,
//! AdamW, and the learning-rate cut on validation-loss increase.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::SamplerRegistry;
use crate::error::{Error, Result};
use crate::forecaster::{ModelParams, Mode, ParamGrads};
use crate::geometry::{apply, GeomTransform};
use crate::losses::{total_loss, LossConfig};
use crate::optim::{adamw_step, AdamWConfig, AdamWState};
use crate::rng::{self, name_tag};
use crate::synth::{Dataset, Sample};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_decay_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Name of a registered augmentation sampler.
    pub aug_policy: String,
    pub loss: LossConfig,
    pub seed: u64,
    /// Width of the reference forecaster.
    pub features: usize,
    pub dropout_rate: f64,
    /// Write a checkpoint every N epochs (0 = never).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 0.1,
            batch_size: 16,
            epochs: 15,
            lr_decay_factor: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            aug_policy: "paper".into(),
            loss: LossConfig::default(),
            seed: 0,
            features: 8,
            dropout_rate: 0.4,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return Err(Error::Config(format!(
                "lr_decay_factor must lie in (0, 1), got {}",
                self.lr_decay_factor
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be >= 1".into()));
        }
        self.loss.validate()?;
        SamplerRegistry::builtin().get(&self.aug_policy)?;
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub bce: f64,
    pub spatial: f64,
    pub temporal: f64,
    pub total: f64,
    pub val_total: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<EpochRow>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,bce,spatial,temporal,total,val_total,lr";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.epoch, r.bce, r.spatial, r.temporal, r.total, r.val_total, r.lr
            );
        }
        s
    }
}

/// An input/label pair moved by one group element. Built only through
/// [`AugmentedPair::new`], so input and label always share the transform.
#[derive(Debug, Clone)]
pub struct AugmentedPair {
    transform: GeomTransform,
    input: Tensor,
    label: Tensor,
}

impl AugmentedPair {
    pub fn new(g: GeomTransform, sample: &Sample) -> Result<Self> {
        Ok(AugmentedPair {
            transform: g,
            input: apply(g, &sample.input)?,
            label: apply(g, &sample.label)?,
        })
    }

    pub fn transform(&self) -> GeomTransform {
        self.transform
    }

    pub fn input(&self) -> &Tensor {
        &self.input
    }

    pub fn label(&self) -> &Tensor {
        &self.label
    }
}

struct SampleResult {
    bce: f64,
    spatial: f64,
    temporal: f64,
    total: f64,
    grads: ParamGrads,
}

fn sample_gradient(
    model: &ModelParams,
    pair: &AugmentedPair,
    loss: &LossConfig,
    dropout_seed: u64,
) -> Result<SampleResult> {
    let (logits, trace) = model.forward(pair.input(), Mode::Train(dropout_seed))?;
    let report = total_loss(&logits, pair.label(), loss)?;
    let grads = model.backward(trace, &report.grad_logits)?;
    Ok(SampleResult {
        bce: report.bce,
        spatial: report.spatial,
        temporal: report.temporal,
        total: report.total,
        grads,
    })
}

/// Mean total loss over a dataset, eval mode, no augmentation.
pub fn mean_loss(model: &ModelParams, data: &Dataset, loss: &LossConfig) -> Result<f64> {
    let per: Vec<f64> = data
        .samples
        .par_iter()
        .map(|s| {
            let (logits, _) = model.forward(&s.input, Mode::Eval)?;
            Ok(total_loss(&logits, &s.label, loss)?.total)
        })
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / per.len().max(1) as f64)
}

fn check_dataset(name: &str, d: &Dataset, model: &ModelParams) -> Result<()> {
    if d.is_empty() {
        return Err(Error::Config(format!("{name} dataset is empty")));
    }
    if d.layout != model.layout {
        return Err(Error::Config(format!(
            "{name} dataset layout {:?} does not match model layout {:?}",
            d.layout, model.layout
        )));
    }
    Ok(())
}

pub fn train(
    initial: ModelParams,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    train_with_hook(initial, train_set, val_set, cfg, |_, _| Ok(()))
}

/// As [`train`], calling `on_epoch(epoch, params)` after every epoch.
pub fn train_with_hook(
    initial: ModelParams,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &ModelParams) -> Result<()>,
) -> Result<(ModelParams, TrainLog)> {
    cfg.validate()?;
    check_dataset("training", train_set, &initial)?;
    check_dataset("validation", val_set, &initial)?;
    let registry = SamplerRegistry::builtin();
    let sampler = registry.get(&cfg.aug_policy)?;
    let opt = cfg.optimizer();

    let mut model = initial;
    let mut state = AdamWState::new(&model.weights);
    let mut log = TrainLog::default();
    let mut lr = cfg.lr;
    let mut prev_val: Option<f64> = None;
    let n = train_set.len();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        shuffle(&mut order, &mut rng::seeded(cfg.seed, &[name_tag("shuffle"), epoch as u64]));

        let mut sums = [0.0f64; 4];
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut aug_rng = rng::seeded(cfg.seed, &[name_tag("augment"), epoch as u64, batch_idx as u64]);
            let pairs: Vec<(AugmentedPair, u64)> = batch
                .iter()
                .enumerate()
                .map(|(k, &i)| {
                    let g = sampler.sample(&mut aug_rng);
                    let seed = rng::stream_id(&[
                        cfg.seed,
                        name_tag("dropout"),
                        epoch as u64,
                        batch_idx as u64,
                        k as u64,
                    ]);
                    Ok((AugmentedPair::new(g, &train_set.samples[i])?, seed))
                })
                .collect::<Result<_>>()?;
            let results: Vec<SampleResult> = pairs
                .par_iter()
                .map(|(pair, seed)| sample_gradient(&model, pair, &cfg.loss, *seed))
                .collect::<Result<_>>()?;

            let scale = 1.0 / results.len() as f64;
            let mut grads = model.weights.zeros_like();
            for r in &results {
                grads.add_scaled(&r.grads, scale);
                sums[0] += r.bce;
                sums[1] += r.spatial;
                sums[2] += r.temporal;
                sums[3] += r.total;
            }
            adamw_step(&mut model.weights, &grads, &mut state, &opt, lr)?;
        }

        let val_total = mean_loss(&model, val_set, &cfg.loss)?;
        let nf = n as f64;
        log.rows.push(EpochRow {
            epoch,
            bce: sums[0] / nf,
            spatial: sums[1] / nf,
            temporal: sums[2] / nf,
            total: sums[3] / nf,
            val_total,
            lr,
        });
        log::info!(
            "epoch {epoch}: train total {:.5}, val total {val_total:.5}, lr {lr:e}",
            sums[3] / nf
        );
        on_epoch(epoch, &model)?;
        if let Some(p) = prev_val {
            if val_total > p {
                lr *= cfg.lr_decay_factor;
            }
        }
        prev_val = Some(val_total);
    }
    Ok((model, log))
}

/// Fisher–Yates with the crate's seeded stream.
fn shuffle(v: &mut [usize], rng: &mut rng::Rng) {
    use rand::Rng as _;
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}
