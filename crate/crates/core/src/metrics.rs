//! Part-segmentation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of a shape's labeled points under which a class counts as small.
pub const DEFAULT_SMALL_FRACTION: f64 = 0.05;

/// Scores of one shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeScore {
    /// `None` for classes absent from both prediction and ground truth.
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub point_accuracy: f64,
    pub valid_points: usize,
    /// Share of valid points carrying each ground-truth class.
    pub gt_fraction: Vec<f64>,
}

/// Per-class IoU `TP / (TP + FP + FN)` over points with `gt >= 0`.
///
/// Classes with an empty denominator are left out of the mean.
pub fn mean_iou(pred: &[i64], gt: &[i64], classes: usize) -> Result<ShapeScore> {
    if pred.len() != gt.len() {
        return Err(Error::Configuration(format!(
            "{} predictions for {} ground-truth labels",
            pred.len(),
            gt.len()
        )));
    }
    let check = |l: i64| l >= -1 && l < classes as i64;
    if let Some(&bad) = pred.iter().chain(gt).find(|&&l| !check(l)) {
        return Err(Error::Configuration(format!("label {bad} outside [-1, {classes})")));
    }
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fnc = vec![0usize; classes];
    let mut gt_count = vec![0usize; classes];
    let mut valid = 0usize;
    let mut correct = 0usize;
    for (&p, &g) in pred.iter().zip(gt) {
        if g < 0 {
            continue;
        }
        valid += 1;
        gt_count[g as usize] += 1;
        if p == g {
            tp[g as usize] += 1;
            correct += 1;
        } else {
            fnc[g as usize] += 1;
            if p >= 0 {
                fp[p as usize] += 1;
            }
        }
    }
    if valid == 0 {
        return Err(Error::UndefinedMetric);
    }
    let per_class_iou: Vec<Option<f64>> = (0..classes)
        .map(|c| {
            let denom = tp[c] + fp[c] + fnc[c];
            (denom > 0).then(|| tp[c] as f64 / denom as f64)
        })
        .collect();
    let ratios: Vec<(u128, u128)> = (0..classes)
        .map(|c| (tp[c] as u128, (tp[c] + fp[c] + fnc[c]) as u128))
        .filter(|&(_, d)| d > 0)
        .collect();
    Ok(ShapeScore {
        miou: mean_of_ratios(&ratios),
        per_class_iou,
        point_accuracy: correct as f64 / valid as f64,
        valid_points: valid,
        gt_fraction: gt_count.iter().map(|&n| n as f64 / valid as f64).collect(),
    })
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Mean of `n / d` fractions, summed exactly and rounded once, falling back
/// to floating point if the common denominator overflows.
fn mean_of_ratios(ratios: &[(u128, u128)]) -> f64 {
    let exact = ratios.iter().try_fold((0u128, 1u128), |(n, d), &(a, b)| {
        let g = gcd(d, b);
        let den = (d / g).checked_mul(b)?;
        let num = n.checked_mul(b / g)?.checked_add(a.checked_mul(d / g)?)?;
        let r = gcd(num, den).max(1);
        Some((num / r, den / r))
    });
    match exact.and_then(|(n, d)| Some((n, d.checked_mul(ratios.len() as u128)?))) {
        Some((n, d)) => n as f64 / d as f64,
        None => ratios.iter().map(|&(a, b)| a as f64 / b as f64).sum::<f64>() / ratios.len() as f64,
    }
}

/// Mean of per-shape mIoUs.
pub fn category_score(shapes: &[ShapeScore]) -> Result<f64> {
    if shapes.is_empty() {
        return Err(Error::UndefinedMetric);
    }
    Ok(shapes.iter().map(|s| s.miou).sum::<f64>() / shapes.len() as f64)
}

/// mIoU over the ground-truth classes of one shape, split by size.
/// Either side is `None` when it has no classes.
pub fn shape_size_split(score: &ShapeScore, small_fraction: f64) -> (Option<f64>, Option<f64>) {
    let mut small = Vec::new();
    let mut large = Vec::new();
    for (iou, &frac) in score.per_class_iou.iter().zip(&score.gt_fraction) {
        if frac <= 0.0 {
            continue;
        }
        let iou = iou.unwrap_or(0.0);
        if frac < small_fraction {
            small.push(iou);
        } else {
            large.push(iou);
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    (mean(&small), mean(&large))
}

/// Small- and large-class mIoU averaged over the shapes that have classes
/// of that kind.
pub fn small_part_breakdown(shapes: &[ShapeScore], small_fraction: f64) -> (Option<f64>, Option<f64>) {
    let mut small = Vec::new();
    let mut large = Vec::new();
    for s in shapes {
        let (a, b) = shape_size_split(s, small_fraction);
        small.extend(a);
        large.extend(b);
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    (mean(&small), mean(&large))
}

/// Aggregate evaluation of one category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub category: String,
    pub shapes: usize,
    pub miou: f64,
    pub small_miou: Option<f64>,
    pub large_miou: Option<f64>,
    pub point_accuracy: f64,
    /// Per class, mean IoU over the shapes where it is defined.
    pub per_class_iou: Vec<Option<f64>>,
    pub valid_points: usize,
}

impl EvalReport {
    pub fn from_shapes(category: impl Into<String>, shapes: &[ShapeScore], small_fraction: f64) -> Result<Self> {
        let miou = category_score(shapes)?;
        let classes = shapes.iter().map(|s| s.per_class_iou.len()).max().unwrap_or(0);
        let per_class_iou = (0..classes)
            .map(|c| {
                let v: Vec<f64> = shapes.iter().filter_map(|s| s.per_class_iou.get(c).copied().flatten()).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect();
        let (small_miou, large_miou) = small_part_breakdown(shapes, small_fraction);
        Ok(Self {
            category: category.into(),
            shapes: shapes.len(),
            miou,
            small_miou,
            large_miou,
            point_accuracy: shapes.iter().map(|s| s.point_accuracy).sum::<f64>() / shapes.len() as f64,
            per_class_iou,
            valid_points: shapes.iter().map(|s| s.valid_points).sum(),
        })
    }
}

/// Mean and sample standard deviation (`n - 1`); the deviation of a single
/// value is zero.
pub fn mean_sd(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}
