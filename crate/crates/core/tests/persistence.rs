mod common;

use std::fs;
use std::path::Path;

use proptest::prelude::*;

use seggraph_core::container::{read_checkpoint, read_shape, write_checkpoint, write_shape, Blob, Manifest};
use seggraph_core::geometry::RasterConfig;
use seggraph_core::model::{Ablation, ModelConfig};
use seggraph_core::nn::Tensor;
use seggraph_core::pipeline::{load_prepared, preprocess_dir, PreprocessConfig};
use seggraph_core::synth::{class_prototypes, generate_sample, write_sample, SynthConfig};
use seggraph_core::train::{point_accuracy, predict_labels, train_fewshot, TrainConfig};
use seggraph_core::{Model32, PreparedShape32};

fn tiny_corpus() -> SynthConfig {
    SynthConfig {
        num_shapes: 4,
        num_train: 3,
        points_per_shape: 500,
        views: 4,
        resolution: 56,
        channels: 16,
        render: RasterConfig { splat: 3, depth_epsilon: 0.01 },
        ..SynthConfig::default()
    }
}

fn small_model(in_channels: usize, classes: usize) -> ModelConfig {
    ModelConfig {
        channels: 24,
        ..ModelConfig::new(in_channels, classes)
    }
}

/// Every file under `dir` with its bytes, keyed by relative path.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn prepared_corpus(root: &Path, config: &SynthConfig) -> Vec<PreparedShape32> {
    let protos = class_prototypes(config);
    (0..config.num_shapes)
        .map(|i| {
            write_sample(root, config, i, &protos).unwrap();
            let dir = root.join(seggraph_core::synth::shape_name(i));
            preprocess_dir(&dir, &PreprocessConfig::default()).unwrap();
            load_prepared::<f32>(&dir).unwrap().1
        })
        .collect()
}

#[test]
fn shape_directory_round_trips_bitwise() {
    let config = tiny_corpus();
    let sample = generate_sample(&config, 0, &class_prototypes(&config)).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    write_shape(&a, &sample.inputs).unwrap();
    let read = read_shape(&a).unwrap();
    write_shape(&b, &read).unwrap();
    assert_eq!(snapshot(&a), snapshot(&b));
    assert_eq!(read_shape(&b).unwrap(), read);
    assert_eq!(read.masks, sample.inputs.masks);
    assert_eq!(read.features, sample.inputs.features);
    assert_eq!(read.cloud.labels, sample.inputs.cloud.labels);
    for (p, q) in read.cloud.positions.iter().zip(&sample.inputs.cloud.positions) {
        assert!((p - q).norm() < 1e-6);
    }
    assert_eq!(Manifest::read(&a).unwrap(), read.manifest);
}

#[test]
fn preprocessing_is_idempotent() {
    let config = tiny_corpus();
    let tmp = tempfile::tempdir().unwrap();
    write_sample(tmp.path(), &config, 1, &class_prototypes(&config)).unwrap();
    let dir = tmp.path().join(seggraph_core::synth::shape_name(1));
    preprocess_dir(&dir, &PreprocessConfig::default()).unwrap();
    let first = snapshot(&dir);
    preprocess_dir(&dir, &PreprocessConfig::default()).unwrap();
    assert_eq!(first, snapshot(&dir));
}

#[test]
fn checkpoint_round_trip_and_training_determinism() {
    let config = tiny_corpus();
    let tmp = tempfile::tempdir().unwrap();
    let shapes = prepared_corpus(&tmp.path().join("corpus"), &config);
    let mc = small_model(shapes[0].in_channels, config.parts_per_shape);
    let train = TrainConfig { epochs: 5, shots: 2, seed: 3, ..TrainConfig::default() };

    let runs: Vec<_> = (0..2).map(|_| train_fewshot(&train, mc, &shapes[..3]).unwrap()).collect();
    let dirs = [tmp.path().join("ck0"), tmp.path().join("ck1")];
    for (run, dir) in runs.iter().zip(&dirs) {
        write_checkpoint(dir, "synthetic", mc, train.ablation, train.seed, &run.model.params).unwrap();
    }
    assert_eq!(snapshot(&dirs[0]), snapshot(&dirs[1]));
    assert_eq!(runs[0].loss_curve, runs[1].loss_curve);

    let (manifest, params) = read_checkpoint::<f32>(&dirs[0]).unwrap();
    assert_eq!((manifest.model, manifest.ablation, manifest.seed), (mc, train.ablation, 3));
    for ((n1, t1), (n2, t2)) in params.iter().zip(runs[0].model.params.iter()) {
        assert_eq!(n1, n2);
        let bits = |t: &Tensor<f32>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(t1), bits(t2));
    }

    // reloaded model predicts identically
    let reloaded = Model32 { config: mc, ablation: train.ablation, params };
    let a = predict_labels(&runs[0].model, &shapes[3]).unwrap();
    let b = predict_labels(&reloaded, &shapes[3]).unwrap();
    assert_eq!(a.labels, b.labels);
    assert_eq!(a.logits, b.logits);
}

#[test]
fn zero_epochs_keeps_the_initialization() {
    let config = tiny_corpus();
    let tmp = tempfile::tempdir().unwrap();
    let shapes = prepared_corpus(tmp.path(), &config);
    let mc = small_model(shapes[0].in_channels, config.parts_per_shape);
    let train = TrainConfig { epochs: 0, seed: 9, ..TrainConfig::default() };
    let out = train_fewshot(&train, mc, &shapes).unwrap();
    let init = Model32::init(mc, train.ablation, 9).unwrap();
    for ((_, a), (_, b)) in out.model.params.iter().zip(init.params.iter()) {
        assert_eq!(a.data(), b.data());
    }
    assert_eq!(out.loss_curve.len(), 1);
}

#[test]
fn fits_a_separable_corpus() {
    let config = SynthConfig {
        feature_noise: 0.0,
        split_rate: 0.0,
        merge_rate: 0.0,
        // thin splats and small patches keep boundary features unblended
        patch_size: 2,
        render: RasterConfig { splat: 2, depth_epsilon: 0.01 },
        ..tiny_corpus()
    };
    let tmp = tempfile::tempdir().unwrap();
    let shapes = prepared_corpus(tmp.path(), &config);
    let mc = small_model(shapes[0].in_channels, config.parts_per_shape);
    let train = TrainConfig { epochs: 150, lr: 1e-2, shots: 3, ..TrainConfig::default() };
    let out = train_fewshot(&train, mc, &shapes[..3]).unwrap();
    assert!(out.loss_curve.last().unwrap() < &out.loss_curve[0]);
    for s in &shapes[..3] {
        let pred = predict_labels(&out.model, s).unwrap();
        let acc = point_accuracy(&pred.labels, s.labels.as_ref().unwrap()).unwrap();
        assert!(acc > 0.95, "{}: {acc}", s.name);
    }
}

#[test]
fn argmax_ties_go_to_the_lowest_class() {
    let t = Tensor::new(vec![2, 3], vec![0.2f32, 0.9, 0.9, 0.5, 0.1, 0.5]).unwrap();
    assert_eq!(t.argmax_rows(), vec![1, 0]);
}

#[test]
fn all_ablation_rows_survive_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let mc = small_model(8, 3);
    for (i, (name, ab)) in Ablation::study_rows().into_iter().enumerate() {
        let dir = tmp.path().join(format!("row{i}"));
        let model = Model32::init(mc, ab, i as u64).unwrap();
        write_checkpoint(&dir, name, mc, ab, i as u64, &model.params).unwrap();
        let (m, _) = read_checkpoint::<f64>(&dir).unwrap();
        assert_eq!(m.ablation, ab);
        assert_eq!(m.category, name);
    }
}

#[test]
fn mismatched_checkpoint_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let mc = small_model(8, 3);
    let model = Model32::init(mc, Ablation::full(), 0).unwrap();
    write_checkpoint(tmp.path(), "c", mc, Ablation::full(), 0, &model.params).unwrap();
    let path = tmp.path().join("checkpoint.json");
    let text = fs::read_to_string(&path).unwrap().replace("\"in_channels\": 8", "\"in_channels\": 9");
    fs::write(&path, text).unwrap();
    assert!(read_checkpoint::<f32>(tmp.path()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn f32_blobs_round_trip_bitwise(bits in prop::collection::vec(any::<u32>(), 0..64)) {
        let data: Vec<f32> = bits.iter().map(|&b| f32::from_bits(b)).collect();
        let blob = Blob::f32(vec![data.len()], data).unwrap();
        let back = Blob::decode(&blob.encode()).unwrap();
        prop_assert_eq!(back.encode(), blob.encode());
    }

    #[test]
    fn integer_blobs_round_trip(a in prop::collection::vec(any::<u32>(), 0..64), b in prop::collection::vec(any::<u8>(), 0..64)) {
        let ua = Blob::u32(vec![a.len()], a).unwrap();
        let ub = Blob::u8(vec![1, b.len()], b).unwrap();
        prop_assert_eq!(Blob::decode(&ua.encode()).unwrap(), ua);
        prop_assert_eq!(Blob::decode(&ub.encode()).unwrap(), ub);
    }
}
