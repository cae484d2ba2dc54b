//! Few-shot training and inference.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Ablation, ModelConfig, PreparedShape, SegGraphModel};
use crate::nn::{AdamConfig, AdamState, Tape, Tensor};
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub shots: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub ablation: Ablation,
    pub category: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            shots: 8,
            epochs: 100,
            lr: 1e-3,
            seed: 0,
            ablation: Ablation::full(),
            category: String::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            return Err(Error::Configuration("shots must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Configuration(format!("invalid learning rate {}", self.lr)));
        }
        Ok(())
    }
}

/// Indices of the training shapes used as shots: all of them when the pool
/// is no larger than `shots`, otherwise a seeded sample in ascending order.
pub fn select_shots(pool: usize, shots: usize, seed: u64) -> Vec<usize> {
    if pool <= shots {
        return (0..pool).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, pool, shots).into_vec();
    picked.sort_unstable();
    picked
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: SegGraphModel<T>,
    /// Loss before each epoch's update, then the final loss.
    pub loss_curve: Vec<f64>,
    /// Indices into the training pool that were used.
    pub shots: Vec<usize>,
}

/// Full-batch Adam on the mean cross-entropy over every labeled point of
/// the selected shots. Single-threaded and deterministic for a fixed seed.
pub fn train_fewshot<T: Scalar>(
    config: &TrainConfig,
    model_config: ModelConfig,
    pool: &[PreparedShape<T>],
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if pool.is_empty() {
        return Err(Error::Configuration("no training shapes".into()));
    }
    let shots = select_shots(pool.len(), config.shots, config.seed);
    let chosen: Vec<&PreparedShape<T>> = shots.iter().map(|&i| &pool[i]).collect();
    let mut total = 0usize;
    for s in &chosen {
        if s.labels.is_none() {
            return Err(Error::MissingArtifact {
                shape: s.name.clone(),
                what: "labels".into(),
            });
        }
        if s.in_channels != model_config.in_channels {
            return Err(Error::Configuration(format!(
                "shape `{}` has {} feature channels, model expects {}",
                s.name, s.in_channels, model_config.in_channels
            )));
        }
        total += s.labeled_count();
    }
    if total == 0 {
        return Err(Error::UndefinedLoss);
    }

    let mut model = SegGraphModel::init(model_config, config.ablation, config.seed)?;
    let net = model.net();
    let mut adam = AdamState::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &model.params,
    );
    let mut loss_curve = Vec::with_capacity(config.epochs + 1);
    for epoch in 0..=config.epochs {
        let mut epoch_loss = 0.0;
        for s in &chosen {
            let count = s.labeled_count();
            if count == 0 {
                continue;
            }
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            let loss = net.loss(&mut tape, &bound, s, config.ablation)?;
            let share = count as f64 / total as f64;
            epoch_loss += share * tape.value(loss).item().to_f64().unwrap_or(f64::NAN);
            if epoch < config.epochs {
                tape.backward_scaled(loss, lit(share));
                model.params.accumulate_grads(&mut tape, &bound);
            }
        }
        loss_curve.push(epoch_loss);
        if epoch < config.epochs {
            adam.step(&mut model.params)?;
        }
    }
    Ok(TrainOutcome {
        model,
        loss_curve,
        shots,
    })
}

#[derive(Debug, Clone)]
pub struct Prediction<T> {
    pub labels: Vec<usize>,
    pub logits: Tensor<T>,
}

/// Per-point argmax of the logits, ties to the lowest class.
pub fn predict_labels<T: Scalar>(model: &SegGraphModel<T>, shape: &PreparedShape<T>) -> Result<Prediction<T>> {
    let logits = model.logits(shape)?;
    Ok(Prediction {
        labels: logits.argmax_rows(),
        logits,
    })
}

/// Fraction of labeled points predicted correctly.
pub fn point_accuracy(pred: &[usize], gt: &[i64]) -> Option<f64> {
    let mut right = 0usize;
    let mut total = 0usize;
    for (&p, &g) in pred.iter().zip(gt) {
        if g >= 0 {
            total += 1;
            right += usize::from(p as i64 == g);
        }
    }
    (total > 0).then(|| right as f64 / total as f64)
}
