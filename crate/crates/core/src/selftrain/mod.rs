//! Model-agnostic self-training: warm up on labeled data, then periodically
//! add confidently scored generated molecules as extra actives.

mod logistic;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::MolGraph;
use crate::hash::derive_seed;
use crate::metrics::{bedroc, log_auc, MetricError, RankedList};

pub use logistic::{sigmoid, LogisticModel};

#[derive(Debug, Error)]
pub enum SelfTrainError {
    #[error("training data needs both classes (actives {actives}, inactives {inactives})")]
    DegenerateData { actives: usize, inactives: usize },
    #[error("invalid self-training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// An activity classifier trained by minibatch gradient steps on encoded
/// molecules. `logit` must be deterministic given the parameters.
pub trait Predictor: Clone + Send + Sync {
    type Input: Send + Sync;
    fn encode(&self, mol: &MolGraph) -> Self::Input;
    fn logit(&self, x: &Self::Input) -> f64;
    /// Applies one update and returns the batch loss before it.
    fn sgd_step(&mut self, batch: &[(&Self::Input, bool)], lr: f64) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    Original,
    Pseudo,
}

#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub molecules: Vec<MolGraph>,
    pub labels: Vec<bool>,
    pub origin: Origin,
}

impl LabeledSet {
    pub fn new(molecules: Vec<MolGraph>, labels: Vec<bool>, origin: Origin) -> Self {
        assert_eq!(molecules.len(), labels.len());
        LabeledSet {
            molecules,
            labels,
            origin,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn actives(&self) -> usize {
        self.labels.iter().filter(|&&y| y).count()
    }

    pub fn active_fraction(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.actives() as f64 / self.len() as f64
        }
    }
}

/// Model-selection metric on the validation fold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationMetric {
    /// BEDROC with α = 20.
    #[default]
    Bedroc,
    /// logAUC over FPR [0.001, 0.1].
    Logauc,
}

impl std::str::FromStr for ValidationMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bedroc" => Ok(ValidationMetric::Bedroc),
            "logauc" => Ok(ValidationMetric::Logauc),
            _ => Err(format!("unknown validation metric '{s}' (bedroc or logauc)")),
        }
    }
}

impl ValidationMetric {
    pub fn name(self) -> &'static str {
        match self {
            ValidationMetric::Bedroc => "bedroc",
            ValidationMetric::Logauc => "logauc",
        }
    }

    pub fn score(self, rl: &RankedList) -> Result<f64, MetricError> {
        match self {
            ValidationMetric::Bedroc => bedroc(rl, 20.0),
            ValidationMetric::Logauc => log_auc(rl, 0.001, 0.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfTrainConfig {
    pub e_start: usize,
    pub e_freq: usize,
    pub tau: f64,
    pub epochs: usize,
    pub lr: f64,
    pub lr_power: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub val_metric: ValidationMetric,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        SelfTrainConfig {
            e_start: 20,
            e_freq: 5,
            tau: 0.9,
            epochs: 100,
            lr: 0.1,
            lr_power: 0.9,
            batch_size: 128,
            seed: 0,
            val_metric: ValidationMetric::Bedroc,
        }
    }
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<(), SelfTrainError> {
        let bad = |m: &str| Err(SelfTrainError::InvalidConfig(m.to_string()));
        if !(0 < self.e_start && self.e_start < self.epochs) {
            return bad("need 0 < e_start < epochs");
        }
        if self.e_freq == 0 {
            return bad("e_freq must be at least 1");
        }
        if !(self.tau > 0.5 && self.tau < 1.0) {
            return bad("tau must lie in (0.5, 1)");
        }
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return bad("batch_size and lr must be positive");
        }
        Ok(())
    }

    /// `lr · (1 − epoch/epochs)^power`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.lr * (1.0 - epoch as f64 / self.epochs as f64).powf(self.lr_power)
    }
}

/// Epoch composition with the minority class topped up (each minority item
/// once, the rest drawn with replacement) to match the majority, shuffled.
fn balanced_order(labels: &[bool], rng: &mut ChaCha8Rng) -> Result<Vec<usize>, SelfTrainError> {
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| labels[i]);
    if pos.is_empty() || neg.is_empty() {
        return Err(SelfTrainError::DegenerateData {
            actives: pos.len(),
            inactives: neg.len(),
        });
    }
    let (minor, major) = if pos.len() <= neg.len() { (pos, neg) } else { (neg, pos) };
    let mut order = major.clone();
    order.extend(&minor);
    for _ in minor.len()..major.len() {
        order.push(minor[rng.random_range(0..minor.len())]);
    }
    order.shuffle(rng);
    Ok(order)
}

/// One oversampled pass of minibatch updates; returns the mean batch loss.
pub fn train_epoch<P: Predictor>(
    model: &mut P,
    inputs: &[&P::Input],
    labels: &[bool],
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<f64, SelfTrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = balanced_order(labels, &mut rng)?;
    let mut total = 0.0;
    let mut batches = 0;
    for chunk in order.chunks(batch_size.max(1)) {
        let batch: Vec<(&P::Input, bool)> = chunk.iter().map(|&i| (inputs[i], labels[i])).collect();
        total += model.sgd_step(&batch, lr);
        batches += 1;
    }
    Ok(total / batches as f64)
}

pub fn predict<P: Predictor>(model: &P, inputs: &[P::Input]) -> Vec<f64> {
    inputs.par_iter().map(|x| model.logit(x)).collect()
}

/// Indices of the inputs whose confidence `σ(logit)` exceeds `tau`.
pub fn pseudo_label<P: Predictor>(model: &P, inputs: &[P::Input], tau: f64) -> Vec<usize> {
    predict(model, inputs)
        .into_iter()
        .enumerate()
        .filter(|&(_, z)| sigmoid(z) > tau)
        .map(|(i, _)| i)
        .collect()
}

/// Molecules of `d_prime` kept by [`pseudo_label`], all labeled active.
pub fn pseudo_labeled_set<P: Predictor>(model: &P, d_prime: &[MolGraph], tau: f64) -> LabeledSet {
    let inputs: Vec<P::Input> = d_prime.iter().map(|m| model.encode(m)).collect();
    let keep = pseudo_label(model, &inputs, tau);
    LabeledSet::new(
        keep.iter().map(|&i| d_prime[i].clone()).collect(),
        vec![true; keep.len()],
        Origin::Pseudo,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Validation score under the configured metric.
    pub val_score: f64,
    pub n_pseudo: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub metric: ValidationMetric,
}

impl History {
    /// Writes `epoch,loss,val_<metric>,n_pseudo`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        let val = format!("val_{}", self.metric.name());
        out.write_record(["epoch", "loss", val.as_str(), "n_pseudo"])?;
        for r in &self.epochs {
            out.write_record([
                r.epoch.to_string(),
                format!("{:.9}", r.loss),
                format!("{:.9}", r.val_score),
                r.n_pseudo.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Warm-up on `d` for `e_start` epochs; afterwards, every `e_freq` epochs the
/// confident part of `d_prime` is recomputed with the current model and used
/// alongside `d` until the next refresh. The model with the best validation
/// score (`cfg.val_metric`) is returned.
pub fn self_train<P: Predictor>(
    init: P,
    d: &LabeledSet,
    d_prime: &[MolGraph],
    d_valid: &LabeledSet,
    cfg: &SelfTrainConfig,
) -> Result<(P, History), SelfTrainError> {
    cfg.validate()?;
    let train_x: Vec<P::Input> = d.molecules.iter().map(|m| init.encode(m)).collect();
    let aug_x: Vec<P::Input> = d_prime.iter().map(|m| init.encode(m)).collect();
    let valid_x: Vec<P::Input> = d_valid.molecules.iter().map(|m| init.encode(m)).collect();

    let mut model = init;
    let mut best: Option<(f64, P)> = None;
    let mut history = History {
        metric: cfg.val_metric,
        ..Default::default()
    };
    let mut pseudo: Vec<usize> = Vec::new();
    for epoch in 0..cfg.epochs {
        if epoch >= cfg.e_start && epoch % cfg.e_freq == 0 {
            pseudo = pseudo_label(&model, &aug_x, cfg.tau);
        }
        let active_pseudo: &[usize] = if epoch >= cfg.e_start { &pseudo } else { &[] };
        let mut inputs: Vec<&P::Input> = train_x.iter().collect();
        let mut labels = d.labels.clone();
        for &i in active_pseudo {
            inputs.push(&aug_x[i]);
            labels.push(true);
        }
        let loss = train_epoch(
            &mut model,
            &inputs,
            &labels,
            cfg.learning_rate(epoch),
            cfg.batch_size,
            derive_seed(cfg.seed, "epoch", epoch as u64),
        )?;
        let scores = predict(&model, &valid_x);
        let val = cfg
            .val_metric
            .score(&RankedList::from_scores(&scores, &d_valid.labels)?)?;
        history.epochs.push(EpochRecord {
            epoch,
            loss,
            val_score: val,
            n_pseudo: active_pseudo.len(),
        });
        if best.as_ref().is_none_or(|(b, _)| val > *b) {
            best = Some((val, model.clone()));
            history.best_epoch = epoch;
        }
    }
    let (_, best) = best.expect("at least one epoch");
    Ok((best, history))
}

#[cfg(test)]
mod tests;
