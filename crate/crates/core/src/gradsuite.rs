//! Gradient checks of every tape primitive and of the end-to-end loss.
//!
//! Shared by the test suite and the `gradcheck` command.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::features::PointFeatureBank;
use crate::geometry::{PointCloud, Vec3};
use crate::graph::{build_segment_graph, GraphThresholds};
use crate::masks::{Segment, SegmentSet};
use crate::model::{Ablation, ModelConfig, PreparedShape, SegGraphNet};
use crate::nn::{gradcheck, AdamConfig, AdamState, Bound, GradcheckReport, Tape, Tensor, Var};

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Acceptance bound on the max relative error.
pub const TOLERANCE: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f64> {
    let len = dims.iter().product();
    // keep entries away from 0 so relu/max kinks are rarely within `STEP`
    let data = (0..len)
        .map(|_| {
            let x: f64 = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                x
            } else {
                -x
            }
        })
        .collect();
    Tensor::new(dims.to_vec(), data).unwrap()
}

/// `sum(out ⊙ w)` with a fixed random `w`, so every output coordinate
/// carries a distinct weight.
fn weighted_sum(tape: &mut Tape<f64>, out: Var, w: &Tensor<f64>) -> Result<Var> {
    let wv = tape.constant(w.clone());
    let prod = tape.mul(out, wv)?;
    Ok(tape.sum(prod))
}

type OpFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// Each primitive on random inputs of a few rows by 4 columns.
pub fn primitive_suite(seed: u64) -> Result<Vec<(&'static str, GradcheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random(&mut rng, &[3, 4]);
    let b = random(&mut rng, &[3, 4]);
    let sq = random(&mut rng, &[4, 3]);
    let row = random(&mut rng, &[4]);
    let heads = random(&mut rng, &[3, 2]);
    let group: Arc<[usize]> = vec![0, 1, 1].into();
    let gather: Arc<[usize]> = vec![2, 0, 2, 1, 0].into();
    let labels: Arc<[i64]> = vec![1, -1, 3].into();
    let factors: Arc<[f64]> = vec![0.5, -2.0, 1.5].into();

    let mut cases: Vec<(&'static str, Vec<Tensor<f64>>, Vec<usize>, OpFn)> = Vec::new();
    let mut case = |name, inputs: Vec<&Tensor<f64>>, out: &[usize], f: OpFn| {
        cases.push((name, inputs.into_iter().cloned().collect(), out.to_vec(), f));
    };
    case("matmul", vec![&a, &sq], &[3, 3], Box::new(|t, v| t.matmul(v[0], v[1])));
    case("add", vec![&a, &b], &[3, 4], Box::new(|t, v| t.add(v[0], v[1])));
    case("sub", vec![&a, &b], &[3, 4], Box::new(|t, v| t.sub(v[0], v[1])));
    case("mul", vec![&a, &b], &[3, 4], Box::new(|t, v| t.mul(v[0], v[1])));
    case("add_row", vec![&a, &row], &[3, 4], Box::new(|t, v| t.add_row(v[0], v[1])));
    case("mul_row", vec![&a, &row], &[3, 4], Box::new(|t, v| t.mul_row(v[0], v[1])));
    case("scale", vec![&a], &[3, 4], Box::new(|t, v| Ok(t.scale(v[0], -1.7))));
    case("concat_cols", vec![&a, &b], &[3, 8], Box::new(|t, v| t.concat_cols(v[0], v[1])));
    {
        let idx = gather.clone();
        case("gather_rows", vec![&a], &[5, 4], Box::new(move |t, v| t.gather_rows(v[0], idx.clone())));
    }
    {
        let idx: Arc<[usize]> = vec![1, 1, 0].into();
        case("scatter_add_rows", vec![&a], &[2, 4], Box::new(move |t, v| t.scatter_add_rows(v[0], idx.clone(), 2)));
    }
    case("relu", vec![&a], &[3, 4], Box::new(|t, v| Ok(t.relu(v[0]))));
    case("leaky_relu", vec![&a], &[3, 4], Box::new(|t, v| Ok(t.leaky_relu(v[0], 0.2))));
    case("tanh", vec![&a], &[3, 4], Box::new(|t, v| Ok(t.tanh(v[0]))));
    case("exp", vec![&a], &[3, 4], Box::new(|t, v| Ok(t.exp(v[0]))));
    {
        let g = group.clone();
        case("grouped_softmax", vec![&a], &[3, 4], Box::new(move |t, v| t.grouped_softmax(v[0], g.clone())));
    }
    {
        let g = group.clone();
        case("segment_max", vec![&a], &[2, 4], Box::new(move |t, v| t.segment_max(v[0], &g, 2)));
    }
    case("mul_heads", vec![&a, &heads], &[3, 4], Box::new(|t, v| t.mul_heads(v[0], v[1])));
    case("block_sum", vec![&a], &[3, 2], Box::new(|t, v| t.block_sum(v[0], 2)));
    {
        let f = factors.clone();
        case("scale_rows", vec![&a], &[3, 4], Box::new(move |t, v| t.scale_rows(v[0], f.clone())));
    }
    case("sum", vec![&a], &[1], Box::new(|t, v| Ok(t.sum(v[0]))));

    let mut out = Vec::new();
    for (name, inputs, out_dims, f) in cases {
        let w = random(&mut rng, &out_dims);
        let report = gradcheck(&inputs, STEP, |t, v| {
            let y = f(t, v)?;
            if out_dims == [1] {
                return Ok(y);
            }
            weighted_sum(t, y, &w)
        })?;
        out.push((name, report));
    }
    let labels_ce = labels.clone();
    let report = gradcheck(&[a.clone()], STEP, move |t, v| t.cross_entropy(v[0], labels_ce.clone()))?;
    out.push(("cross_entropy", report));
    Ok(out)
}

fn unit(rng: &mut ChaCha8Rng) -> Vec3 {
    let v = Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    if v.norm() < 1e-3 {
        Vec3::x()
    } else {
        v.normalize()
    }
}

/// A random shape with at most 60 points and 10 segments from three views.
pub fn tiny_shape(seed: u64, in_channels: usize, classes: usize) -> Result<PreparedShape<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 48;
    // one cluster and one feature prototype per class, so segments differ
    let centers: Vec<Vec3> = (0..classes).map(|_| unit(&mut rng) * 0.3).collect();
    let prototypes: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..in_channels).map(|_| rng.random_range(-1.5..1.5)).collect())
        .collect();
    let labels: Vec<i32> = (0..n).map(|j| (j % classes) as i32).collect();
    // points on small spheres with outward normals
    let normals: Vec<Vec3> = (0..n).map(|_| unit(&mut rng)).collect();
    let positions: Vec<Vec3> = labels.iter().zip(&normals).map(|(&l, nrm)| centers[l as usize] + nrm * 0.12).collect();
    let cloud = PointCloud {
        positions,
        normals,
        colors: None,
        labels: Some(labels.clone()),
        category: "tiny".into(),
        num_classes: classes,
    };

    // each view splits a random subset of points into slabs along one axis
    let mut segments = Vec::new();
    for (view, count) in [4usize, 3, 3].into_iter().enumerate() {
        let cam = unit(&mut rng) * 2.2;
        let axis = view % 3;
        let mut ids: Vec<u32> = (0..n as u32).filter(|_| rng.random_bool(0.8)).collect();
        ids.sort_by(|&p, &q| cloud.positions[p as usize][axis].total_cmp(&cloud.positions[q as usize][axis]));
        let chunk = ids.len().div_ceil(count);
        for part in ids.chunks(chunk) {
            segments.push(Segment::new(0, view, cam, part.to_vec(), &cloud.positions));
        }
    }
    let set = SegmentSet::from_segments(segments, n)?;
    let graph = build_segment_graph(
        &set,
        &cloud.positions,
        GraphThresholds {
            iou: 0.10,
            adjacency: 0.3,
        },
    )?;
    let bank = PointFeatureBank {
        channels: in_channels,
        features: labels
            .iter()
            .flat_map(|&l| prototypes[l as usize].clone())
            .map(|x| (x + rng.random_range(-0.3..0.3)) as f32)
            .collect(),
        view_count: vec![1; n],
    };
    PreparedShape::new("tiny", &cloud, &set, &graph, &bank)
}

/// Reduced-width configuration for finite differencing.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        in_channels: 5,
        channels: 8,
        heads: 4,
        layers: 3,
        classes: 3,
        quality_hidden: 4,
    }
}

/// Adam steps taken before the end-to-end check.
pub const FIT_STEPS: usize = 300;

/// Gradient of the loss with respect to every parameter, for one ablation.
///
/// The check runs after a short fit to the tiny shape. At initialization
/// many attention-query gradients are exact zeros (the query is shared by
/// a whole softmax group), and the central difference of an `O(1)` loss
/// then measures one ulp over `2h`, about `1e-11`, which the relative
/// error floor of `1e-8` blows up past the tolerance. At a fitted point the
/// loss is small and accurately computed, so round-off shrinks with it.
pub fn model_gradcheck(seed: u64, ablation: Ablation) -> Result<GradcheckReport> {
    let config = tiny_config();
    let shape = tiny_shape(seed, config.in_channels, config.classes)?;
    let mut store = config.init_params::<f64>(seed)?;
    let net = SegGraphNet::new(config);
    let mut adam = AdamState::new(
        AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        },
        &store,
    );
    for _ in 0..FIT_STEPS {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let loss = net.loss(&mut tape, &bound, &shape, ablation)?;
        tape.backward(loss);
        store.accumulate_grads(&mut tape, &bound);
        adam.step(&mut store)?;
    }
    let names = store.names().to_vec();
    let inputs: Vec<Tensor<f64>> = names.iter().map(|n| store.get(n).unwrap().clone()).collect();
    gradcheck(&inputs, STEP, |tape, vars| {
        let bound = Bound::from_vars(&store, vars.to_vec());
        net.loss(tape, &bound, &shape, ablation)
    })
}

/// End-to-end checks over the ablation rows that use distinct code paths.
pub fn model_suite(seed: u64) -> Result<Vec<(String, GradcheckReport)>> {
    let rows = [
        ("model[full]", Ablation::full()),
        ("model[mlp]", Ablation::mlp_baseline()),
        (
            "model[mean-pool,uniform]",
            Ablation {
                segment_encoder: false,
                quality_unpool: false,
                ..Ablation::full()
            },
        ),
        (
            "model[overlap-only]",
            Ablation {
                adjacency_edges: false,
                ..Ablation::full()
            },
        ),
    ];
    rows.into_iter()
        .map(|(name, ab)| Ok((name.to_string(), model_gradcheck(seed, ab)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_shape_is_within_bounds() {
        let s = tiny_shape(0, 5, 3).unwrap();
        assert!(s.num_points <= 60);
        assert!(s.num_segments <= 10 && s.num_segments >= 6);
        assert!(s.overlap.len() > s.num_segments, "expected some overlap edges");
        assert!(s.adjacency.len() > s.num_segments, "expected some adjacency edges");
    }

    #[test]
    fn suites_pass() {
        for (name, r) in primitive_suite(0).unwrap() {
            assert!(r.passes(TOLERANCE) && r.checked > 0, "{name}: {r:?}");
        }
        for (name, r) in (0..3).flat_map(|s| model_suite(s).unwrap()) {
            assert!(r.passes(TOLERANCE) && r.checked > 0, "{name}: {r:?}");
        }
    }
}
