//! The few-shot protocol: train on shots drawn from a training pool,
//! score every held-out shape, and aggregate over seeds.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{mean_iou, mean_sd, EvalReport, ShapeScore, DEFAULT_SMALL_FRACTION};
use crate::model::{Ablation, ModelConfig, PreparedShape, SegGraphModel};
use crate::pipeline::{prepare_shape, preprocess_inputs, PreprocessConfig};
use crate::scalar::Scalar;
use crate::synth::{class_prototypes, generate_sample, SynthConfig, CATEGORY};
use crate::train::{predict_labels, train_fewshot, TrainConfig};

/// Prepared training pool and test set of one category.
#[derive(Debug, Clone)]
pub struct StudyData<T> {
    pub category: String,
    pub classes: usize,
    pub train: Vec<PreparedShape<T>>,
    pub test: Vec<PreparedShape<T>>,
}

impl<T: Scalar> StudyData<T> {
    /// Generates and preprocesses a synthetic corpus in memory.
    pub fn synthetic(config: &SynthConfig, pre: &PreprocessConfig) -> Result<Self> {
        config.validate()?;
        let prototypes = class_prototypes(config);
        let mut shapes = Vec::with_capacity(config.num_shapes);
        for i in 0..config.num_shapes {
            let sample = generate_sample(config, i, &prototypes)?;
            let (p, _) = preprocess_inputs(&sample.inputs, pre)?;
            shapes.push(prepare_shape(&sample.name, &sample.inputs.cloud, &p)?);
        }
        let test = shapes.split_off(config.num_train);
        Ok(Self {
            category: CATEGORY.into(),
            classes: config.parts_per_shape,
            train: shapes,
            test,
        })
    }

    pub fn in_channels(&self) -> Result<usize> {
        self.train
            .first()
            .or(self.test.first())
            .map(|s| s.in_channels)
            .ok_or_else(|| Error::Configuration("no shapes".into()))
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        Ok(ModelConfig::new(self.in_channels()?, self.classes))
    }
}

/// Scores one labeled shape.
pub fn score_shape<T: Scalar>(model: &SegGraphModel<T>, shape: &PreparedShape<T>) -> Result<ShapeScore> {
    let gt = shape.labels.as_ref().ok_or_else(|| Error::MissingArtifact {
        shape: shape.name.clone(),
        what: "labels".into(),
    })?;
    let pred: Vec<i64> = predict_labels(model, shape)?.labels.iter().map(|&l| l as i64).collect();
    mean_iou(&pred, gt, model.config.classes)
}

pub fn evaluate<T: Scalar>(category: &str, model: &SegGraphModel<T>, shapes: &[PreparedShape<T>]) -> Result<EvalReport> {
    let scores = shapes.iter().map(|s| score_shape(model, s)).collect::<Result<Vec<_>>>()?;
    EvalReport::from_shapes(category, &scores, DEFAULT_SMALL_FRACTION)
}

/// One seed of one configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub report: EvalReport,
    pub loss_curve: Vec<f64>,
    pub train_seconds: f64,
    pub inference_seconds: f64,
}

pub fn run_seed<T: Scalar>(data: &StudyData<T>, config: &TrainConfig) -> Result<(SegGraphModel<T>, SeedRun)> {
    let t = Instant::now();
    let out = train_fewshot(config, data.model_config()?, &data.train)?;
    let train_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let report = evaluate(&data.category, &out.model, &data.test)?;
    let run = SeedRun {
        seed: config.seed,
        report,
        loss_curve: out.loss_curve,
        train_seconds,
        inference_seconds: t.elapsed().as_secs_f64(),
    };
    Ok((out.model, run))
}

/// Runs of one ablation row over several seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowResult {
    pub name: String,
    pub ablation: Ablation,
    pub runs: Vec<SeedRun>,
}

impl RowResult {
    /// Mean and sample deviation of test mIoU, in percent.
    pub fn miou(&self) -> (f64, f64) {
        let v: Vec<f64> = self.runs.iter().map(|r| 100.0 * r.report.miou).collect();
        mean_sd(&v).unwrap_or((f64::NAN, f64::NAN))
    }

    /// Same for small-class mIoU; runs without small classes are left out.
    pub fn small_miou(&self) -> (f64, f64) {
        let v: Vec<f64> = self.runs.iter().filter_map(|r| r.report.small_miou).map(|x| 100.0 * x).collect();
        mean_sd(&v).unwrap_or((f64::NAN, f64::NAN))
    }

    pub fn train_seconds(&self) -> f64 {
        self.runs.iter().map(|r| r.train_seconds + r.inference_seconds).sum()
    }
}

pub fn run_row<T: Scalar>(data: &StudyData<T>, name: &str, ablation: Ablation, base: &TrainConfig, seeds: &[u64]) -> Result<RowResult> {
    let runs = seeds
        .iter()
        .map(|&seed| {
            let config = TrainConfig {
                seed,
                ablation,
                ..base.clone()
            };
            run_seed(data, &config).map(|(_, run)| run)
        })
        .collect::<Result<_>>()?;
    Ok(RowResult {
        name: name.into(),
        ablation,
        runs,
    })
}
