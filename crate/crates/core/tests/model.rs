//! The network against a straight-line reference written with plain
//! loops over `Vec<f64>`.

mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use seggraph_core::features::PointFeatureBank;
use seggraph_core::geometry::{PointCloud, Vec3};
use seggraph_core::graph::{build_segment_graph, GraphThresholds, SegmentGraph};
use seggraph_core::masks::{Segment, SegmentSet};
use seggraph_core::model::{raw_view_quality, relative_normalize, EdgeIndex, LEAKY_SLOPE};
use seggraph_core::nn::{ParamStore, Tape, Tensor};
use seggraph_core::{Ablation, ModelConfig, PreparedShape64, SegGraphNet};

use common::{random_rotation, random_segments, rng, unit_vector};

type Mat = Vec<Vec<f64>>;

struct Reference<'a> {
    p: &'a ParamStore<f64>,
    heads: usize,
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

impl Reference<'_> {
    fn weight(&self, name: &str) -> Mat {
        let t = self.p.get(name).unwrap();
        let (rows, cols) = (t.dims()[0], t.len() / t.dims()[0]);
        (0..rows).map(|r| t.data()[r * cols..(r + 1) * cols].to_vec()).collect()
    }

    fn vector(&self, name: &str) -> Vec<f64> {
        self.p.get(name).unwrap().data().to_vec()
    }

    fn times(x: &[f64], w: &Mat) -> Vec<f64> {
        let mut out = vec![0.0; w[0].len()];
        for (i, xi) in x.iter().enumerate() {
            for (k, o) in out.iter_mut().enumerate() {
                *o += xi * w[i][k];
            }
        }
        out
    }

    fn linear(&self, prefix: &str, x: &[f64]) -> Vec<f64> {
        add(&Self::times(x, &self.weight(&format!("{prefix}.w"))), &self.vector(&format!("{prefix}.b")))
    }

    fn mlp2(&self, prefix: &str, x: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = self.linear(&format!("{prefix}.0"), x).into_iter().map(relu).collect();
        self.linear(&format!("{prefix}.1"), &h)
    }

    fn project(&self, shape: &PreparedShape64) -> Mat {
        (0..shape.num_points).map(|j| self.linear("proj", shape.point_features.row(j))).collect()
    }

    fn members(shape: &PreparedShape64) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); shape.num_segments];
        for e in 0..shape.num_entries() {
            m[shape.entry_segment[e]].push(e);
        }
        m
    }

    fn encode(&self, shape: &PreparedShape64, fp: &Mat, encoder: bool) -> Mat {
        let (w_point, w_seg, v) = (self.weight("attn.w_point"), self.weight("attn.w_segment"), self.vector("attn.v"));
        Self::members(shape)
            .iter()
            .map(|entries| {
                if !encoder {
                    let mut mean = vec![0.0; fp[0].len()];
                    for &e in entries {
                        for (o, x) in mean.iter_mut().zip(&fp[shape.entry_point[e]]) {
                            *o += x / entries.len() as f64;
                        }
                    }
                    return mean;
                }
                let local: Mat = entries.iter().map(|&e| self.mlp2("geom", shape.geom_input.row(e))).collect();
                let mut pooled = local[0].clone();
                for l in &local[1..] {
                    for (o, x) in pooled.iter_mut().zip(l) {
                        *o = o.max(*x);
                    }
                }
                let k = Self::times(&pooled, &w_seg);
                let scores: Vec<f64> = local
                    .iter()
                    .map(|l| {
                        let q = Self::times(l, &w_point);
                        (0..q.len()).map(|c| v[c] * (q[c] + k[c]).tanh()).sum()
                    })
                    .collect();
                let alpha = softmax(&scores);
                let mut out = pooled;
                for (a, &e) in alpha.iter().zip(entries) {
                    for (o, x) in out.iter_mut().zip(&fp[shape.entry_point[e]]) {
                        *o += a * x;
                    }
                }
                out
            })
            .collect()
    }

    /// Dense attention matrix per head over the adjacency with self-loops.
    fn gat(&self, prefix: &str, h: &Mat, edges: &[(u32, u32)]) -> Mat {
        let g = h.len();
        let mut adj = vec![vec![false; g]; g];
        for i in 0..g {
            adj[i][i] = true;
        }
        for &(a, b) in edges {
            adj[a as usize][b as usize] = true;
            adj[b as usize][a as usize] = true;
        }
        let (wq, wm, att) = (
            self.weight(&format!("{prefix}.w_query")),
            self.weight(&format!("{prefix}.w_message")),
            self.vector(&format!("{prefix}.att")),
        );
        let q: Mat = h.iter().map(|x| Self::times(x, &wq)).collect();
        let m: Mat = h.iter().map(|x| Self::times(x, &wm)).collect();
        let c = att.len();
        let d = c / self.heads;
        let mut out = vec![vec![0.0; c]; g];
        for i in 0..g {
            for hd in 0..self.heads {
                let cols = hd * d..(hd + 1) * d;
                let nbrs: Vec<usize> = (0..g).filter(|&j| adj[i][j]).collect();
                let e: Vec<f64> = nbrs
                    .iter()
                    .map(|&j| {
                        cols.clone()
                            .map(|k| {
                                let z = q[i][k] + m[j][k];
                                att[k] * if z > 0.0 { z } else { LEAKY_SLOPE * z }
                            })
                            .sum()
                    })
                    .collect();
                for (a, &j) in softmax(&e).iter().zip(&nbrs) {
                    for k in cols.clone() {
                        out[i][k] += a * m[j][k];
                    }
                }
            }
        }
        out
    }

    fn propagate(&self, mut h: Mat, layers: usize, overlap: &[(u32, u32)], adjacency: &[(u32, u32)]) -> Mat {
        for l in 0..layers {
            let ho = self.gat(&format!("gat.{l}.overlap"), &h, overlap);
            let ha = self.gat(&format!("gat.{l}.adjacency"), &h, adjacency);
            h = h
                .iter()
                .zip(ho.iter().zip(&ha))
                .map(|(x, (o, a))| {
                    let cat: Vec<f64> = o.iter().chain(a).cloned().collect();
                    add(x, &self.mlp2(&format!("fuse.{l}"), &cat))
                })
                .collect();
        }
        h
    }

    fn unpool(&self, shape: &PreparedShape64, quality: bool) -> Vec<f64> {
        let mut by_point = vec![Vec::new(); shape.num_points];
        for e in 0..shape.num_entries() {
            by_point[shape.entry_point[e]].push(e);
        }
        let mut w = vec![0.0; shape.num_entries()];
        for entries in by_point.iter().filter(|e| !e.is_empty()) {
            let logits: Vec<f64> = entries
                .iter()
                .map(|&e| if quality { self.mlp2("quality", shape.raw_quality.row(e))[0] } else { 0.0 })
                .collect();
            for (x, &e) in softmax(&logits).iter().zip(entries) {
                w[e] = *x;
            }
        }
        w
    }

    fn embed(&self, shape: &PreparedShape64, graph: &SegmentGraph, layers: usize, ab: Ablation) -> Mat {
        let fp = self.project(shape);
        if !ab.segments {
            return fp;
        }
        let mut fs = self.encode(shape, &fp, ab.segment_encoder);
        if ab.overlap_edges || ab.adjacency_edges {
            let o = if ab.overlap_edges { &graph.overlap_edges[..] } else { &[] };
            let a = if ab.adjacency_edges { &graph.adjacency_edges[..] } else { &[] };
            fs = self.propagate(fs, layers, o, a);
        }
        let w = self.unpool(shape, ab.quality_unpool);
        let mut fused = fp;
        for e in 0..shape.num_entries() {
            let (s, p) = (shape.entry_segment[e], shape.entry_point[e]);
            for (o, x) in fused[p].iter_mut().zip(&fs[s]) {
                *o += w[e] * x;
            }
        }
        fused
    }

    fn logits(&self, shape: &PreparedShape64, graph: &SegmentGraph, layers: usize, ab: Ablation) -> Mat {
        self.embed(shape, graph, layers, ab).iter().map(|x| self.mlp2("head", x)).collect()
    }
}

/// Random labeled shape over the given segments with random features.
fn build_shape(seed: u64, segs: &SegmentSet, positions: &[Vec3], in_channels: usize, classes: usize) -> (PreparedShape64, SegmentGraph) {
    let mut r = rng(seed);
    let n = positions.len();
    let cloud = PointCloud {
        positions: positions.to_vec(),
        normals: (0..n).map(|_| unit_vector(&mut r)).collect(),
        colors: None,
        labels: Some((0..n).map(|_| r.random_range(-1..classes as i32)).collect()),
        category: "t".into(),
        num_classes: classes,
    };
    let graph = build_segment_graph(segs, positions, GraphThresholds { iou: 0.1, adjacency: 0.05 }).unwrap();
    let bank = PointFeatureBank {
        channels: in_channels,
        features: (0..n * in_channels).map(|_| r.random_range(-1.0..1.0)).collect(),
        view_count: vec![1; n],
    };
    (PreparedShape64::new("t", &cloud, segs, &graph, &bank).unwrap(), graph)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * y.abs().max(1.0))
}

fn rows(t: &Tensor<f64>) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn assert_close(got: &Mat, want: &Mat, tol: f64) {
    assert_eq!(got.len(), want.len());
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!(close(g, w, tol), "row {i}: {g:?} vs {w:?}");
    }
}

fn graph_edges(g: usize, r: &mut impl Rng, p: f64) -> Vec<(u32, u32)> {
    let mut e = Vec::new();
    for i in 0..g as u32 {
        for j in i + 1..g as u32 {
            if r.random_bool(p) {
                e.push((i, j));
            }
        }
    }
    e
}

fn random_features(r: &mut impl Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
}

#[test]
fn gat_layer_matches_dense_attention() {
    let config = ModelConfig::new(8, 3);
    let params = config.init_params::<f64>(1).unwrap();
    let net = SegGraphNet::new(config);
    let reference = Reference { p: &params, heads: config.heads };
    let mut r = rng(4);
    for _ in 0..10 {
        let h = random_features(&mut r, 12, config.channels);
        let edges = graph_edges(12, &mut r, 0.25);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let hv = tape.constant(h.clone());
        let index = EdgeIndex::with_self_loops(12, &edges).unwrap();
        let out = net.gatv2_layer(&mut tape, &bound, "gat.1.adjacency", hv, &index).unwrap();
        assert_close(&rows(tape.value(out)), &reference.gat("gat.1.adjacency", &rows(&h), &edges), 1e-5);
    }
}

#[test]
fn propagation_matches_unrolled_reference() {
    let config = ModelConfig::new(8, 3);
    let params = config.init_params::<f64>(2).unwrap();
    let net = SegGraphNet::new(config);
    let reference = Reference { p: &params, heads: config.heads };
    let mut r = rng(6);
    for _ in 0..5 {
        let h = random_features(&mut r, 15, config.channels);
        let (o, a) = (graph_edges(15, &mut r, 0.2), graph_edges(15, &mut r, 0.2));
        let o: Vec<_> = o.into_iter().filter(|e| !a.contains(e)).collect();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let hv = tape.constant(h.clone());
        let out = net
            .propagate(
                &mut tape,
                &bound,
                hv,
                &EdgeIndex::with_self_loops(15, &o).unwrap(),
                &EdgeIndex::with_self_loops(15, &a).unwrap(),
            )
            .unwrap();
        assert_close(&rows(tape.value(out)), &reference.propagate(rows(&h), config.layers, &o, &a), 1e-5);
    }
}

#[test]
fn encoder_matches_loop_reference_on_a_20_point_segment() {
    let mut r = rng(10);
    let positions: Vec<Vec3> = (0..30).map(|_| unit_vector(&mut r) * r.random_range(0.0..0.5)).collect();
    let ids: Vec<u32> = (0..30).filter(|_| r.random_bool(0.5)).take(20).collect();
    let ids = if ids.len() < 20 { (0..20).collect() } else { ids };
    let segs = SegmentSet::from_segments(vec![Segment::new(0, 0, Vec3::new(0.0, 0.0, 2.2), ids, &positions)], 30).unwrap();
    let (shape, _) = build_shape(3, &segs, &positions, 7, 2);
    let config = ModelConfig::new(7, 2);
    let params = config.init_params::<f64>(5).unwrap();
    let reference = Reference { p: &params, heads: config.heads };
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let net = SegGraphNet::new(config);
    let fp = net.project(&mut tape, &bound, &shape).unwrap();
    let fs = net.encode_segments(&mut tape, &bound, &shape, fp, true).unwrap();
    let want = reference.encode(&shape, &reference.project(&shape), true);
    assert_eq!(shape.num_entries(), 20);
    assert_close(&rows(tape.value(fs)), &want, 1e-6);
}

#[test]
fn end_to_end_matches_reference_for_every_ablation_row() {
    for seed in 0..3 {
        let (segs, positions) = random_segments(40 + seed, 25);
        let (shape, graph) = build_shape(seed, &segs, &positions, 11, 4);
        assert!(!graph.overlap_edges.is_empty() && !graph.adjacency_edges.is_empty());
        let config = ModelConfig::new(11, 4);
        let params = config.init_params::<f64>(seed).unwrap();
        let reference = Reference { p: &params, heads: config.heads };
        let net = SegGraphNet::new(config);
        for (name, ab) in Ablation::study_rows() {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let out = net.forward(&mut tape, &bound, &shape, ab).unwrap();
            let want = reference.logits(&shape, &graph, config.layers, ab);
            for (i, (g, w)) in rows(tape.value(out)).iter().zip(&want).enumerate() {
                assert!(close(g, w, 1e-5), "{name} row {i}");
            }
        }
    }
}

#[test]
fn fusion_weights_are_positive_and_sum_to_one() {
    let (segs, positions) = random_segments(77, 40);
    let (shape, _) = build_shape(1, &segs, &positions, 4, 2);
    let config = ModelConfig::new(4, 2);
    let params = config.init_params::<f64>(9).unwrap();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let w = SegGraphNet::new(config).unpool_weights(&mut tape, &bound, &shape, true).unwrap();
    let w = tape.value(w).data();
    let mut sums = vec![0.0; shape.num_points];
    for (e, &x) in w.iter().enumerate() {
        assert!(x > 0.0);
        sums[shape.entry_point[e]] += x;
    }
    for (p, s) in sums.iter().enumerate() {
        if !segs.point_memberships[p].is_empty() {
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}

/// One point in one segment, one in none, and a single-point segment.
fn sparse_shape() -> (PreparedShape64, Vec<Vec3>) {
    let positions = vec![
        Vec3::new(0.1, 0.0, 0.0),
        Vec3::new(-0.1, 0.0, 0.0),
        Vec3::new(0.0, 0.2, 0.0),
        Vec3::new(0.0, -0.2, 0.1),
    ];
    let segs = SegmentSet::from_segments(
        vec![
            Segment::new(0, 0, Vec3::new(0.0, 0.0, 2.0), vec![0, 1], &positions),
            Segment::new(0, 1, Vec3::new(2.0, 0.0, 0.0), vec![2], &positions),
        ],
        4,
    )
    .unwrap();
    (build_shape(2, &segs, &positions, 5, 3).0, positions)
}

#[test]
fn single_point_segment_and_uncovered_point() {
    let (shape, _) = sparse_shape();
    let config = ModelConfig::new(5, 3);
    let params = config.init_params::<f64>(3).unwrap();
    let net = SegGraphNet::new(config);
    let reference = Reference { p: &params, heads: config.heads };
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let fp = net.project(&mut tape, &bound, &shape).unwrap();
    let fs = net.encode_segments(&mut tape, &bound, &shape, fp, true).unwrap();
    // softmax over one member: pooled local feature plus the point feature
    let local = reference.mlp2("geom", shape.geom_input.row(2));
    let expected = add(&local, tape.value(fp).row(2));
    assert!(close(tape.value(fs).row(1), &expected, 1e-12));

    let w = net.unpool_weights(&mut tape, &bound, &shape, true).unwrap();
    assert_eq!(tape.value(w).data()[2], 1.0);
    let fused = net.fuse(&mut tape, &shape, fp, fs, w).unwrap();
    // point 3 is in no segment
    assert_eq!(tape.value(fused).row(3), tape.value(fp).row(3));
    assert!(close(tape.value(fused).row(2), &add(tape.value(fp).row(2), tape.value(fs).row(1)), 1e-12));
}

#[test]
fn zero_segment_features_reduce_to_the_head_on_point_features() {
    let (shape, _) = sparse_shape();
    let config = ModelConfig::new(5, 3);
    let params = config.init_params::<f64>(3).unwrap();
    let net = SegGraphNet::new(config);
    let reference = Reference { p: &params, heads: config.heads };
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let fp = net.project(&mut tape, &bound, &shape).unwrap();
    let zero = tape.constant(Tensor::zeros(&[shape.num_segments, config.channels]));
    let w = net.unpool_weights(&mut tape, &bound, &shape, true).unwrap();
    let out = net.fuse_and_classify(&mut tape, &bound, &shape, fp, zero, w).unwrap();
    let want: Mat = reference.project(&shape).iter().map(|x| reference.mlp2("head", x)).collect();
    assert_close(&rows(tape.value(out)), &want, 1e-12);
}

#[test]
fn isolated_and_symmetric_gat_cases() {
    let config = ModelConfig::new(4, 2);
    let params = config.init_params::<f64>(8).unwrap();
    let net = SegGraphNet::new(config);
    let reference = Reference { p: &params, heads: config.heads };
    let mut r = rng(1);
    let h = random_features(&mut r, 3, config.channels);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let hv = tape.constant(h.clone());
    let out = net
        .gatv2_layer(&mut tape, &bound, "gat.0.overlap", hv, &EdgeIndex::with_self_loops(3, &[]).unwrap())
        .unwrap();
    let wm = reference.weight("gat.0.overlap.w_message");
    for i in 0..3 {
        assert!(close(tape.value(out).row(i), &Reference::times(h.row(i), &wm), 1e-12));
    }

    let same = Tensor::from_fn(2, config.channels, |_, c| h.at(0, c));
    let sv = tape.constant(same.clone());
    let out = net
        .gatv2_layer(&mut tape, &bound, "gat.0.overlap", sv, &EdgeIndex::with_self_loops(2, &[(0, 1)]).unwrap())
        .unwrap();
    let msg = Reference::times(same.row(0), &wm);
    assert!(close(tape.value(out).row(0), &msg, 1e-12) && close(tape.value(out).row(1), &msg, 1e-12));
}

#[test]
fn empty_graph_propagation_is_finite_and_deterministic() {
    let config = ModelConfig::new(4, 2);
    let params = config.init_params::<f32>(8).unwrap();
    let net = SegGraphNet::new(config);
    let h = Tensor::from_fn(6, config.channels, |r, c| ((r * 7 + c) % 5) as f32 - 2.0);
    let run = || {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let hv = tape.constant(h.clone());
        let none = EdgeIndex::with_self_loops(6, &[]).unwrap();
        let out = net.propagate(&mut tape, &bound, hv, &none, &none).unwrap();
        tape.value(out).clone()
    };
    let a = run();
    assert!(a.data().iter().all(|x| x.is_finite()));
    assert_eq!(a, run());
}

#[test]
fn relative_positions_are_bounded_and_centered() {
    let mut r = rng(12);
    for _ in 0..10_000 {
        let n = r.random_range(1..12);
        let scale = Vec3::new(r.random_range(0.0..0.5), r.random_range(0.0..0.5), r.random_range(0.0..0.5));
        let positions: Vec<Vec3> = (0..n)
            .map(|_| unit_vector(&mut r).component_mul(&scale) + Vec3::repeat(r.random_range(-0.3..0.3)))
            .collect();
        let mut ids: Vec<u32> = (0..n as u32).collect();
        if r.random_bool(0.2) {
            ids.truncate(1);
        }
        let seg = Segment::new(0, 0, Vec3::zeros(), ids, &positions);
        let rel = relative_normalize(&positions, &seg);
        assert!(rel.iter().all(|p| p.iter().all(|x| (-1.0..=1.0).contains(x))));
        // the centroid maps to the origin, so the members average to zero
        let mean = rel.iter().sum::<Vec3>() / rel.len() as f64;
        assert!(mean.norm() < 1e-9, "{mean:?}");
    }
}

#[test]
fn raw_view_weight_is_absolute_cosine_and_rotation_invariant() {
    let mut r = rng(13);
    for _ in 0..10_000 {
        let normal = unit_vector(&mut r);
        let point = Vec3::new(r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), r.random_range(-0.5..0.5));
        let camera = unit_vector(&mut r) * 2.2;
        let w = raw_view_quality(&normal, &point, &camera).unwrap();
        let ray = point - camera;
        let angle = normal.angle(&ray);
        assert!((w - angle.cos().abs()).abs() < 1e-9);
        let rot = random_rotation(&mut r);
        let wr = raw_view_quality(&(rot * normal), &(rot * point), &(rot * camera)).unwrap();
        assert!((w - wr).abs() < 1e-9);
    }
}

/// The same segments over a relabeled point set.
fn permuted_points(segs: &SegmentSet, positions: &[Vec3], perm: &[usize]) -> (SegmentSet, Vec<Vec3>) {
    // perm[old] = new
    let mut new_positions = vec![Vec3::zeros(); positions.len()];
    for (old, &new) in perm.iter().enumerate() {
        new_positions[new] = positions[old];
    }
    let segments = segs
        .segments
        .iter()
        .map(|s| {
            let ids = s.point_ids.iter().map(|&p| perm[p as usize] as u32).collect();
            Segment::new(0, s.view_id, s.camera_position, ids, &new_positions)
        })
        .collect();
    (SegmentSet::from_segments(segments, positions.len()).unwrap(), new_positions)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn segment_features_ignore_member_order(seed in 0u64..1000) {
        let (segs, positions) = random_segments(seed, 12);
        let (shape, _) = build_shape(seed, &segs, &positions, 6, 3);
        let mut perm: Vec<usize> = (0..positions.len()).collect();
        perm.shuffle(&mut rng(seed + 1));
        let (psegs, ppositions) = permuted_points(&segs, &positions, &perm);
        // carry normals and features along with their points
        let mut pshape = build_shape(seed, &psegs, &ppositions, 6, 3).0;
        let mut feats = vec![0.0; shape.point_features.len()];
        for (old, &new) in perm.iter().enumerate() {
            feats[new * 6..(new + 1) * 6].copy_from_slice(shape.point_features.row(old));
        }
        pshape.point_features = Tensor::new(vec![positions.len(), 6], feats).unwrap();
        let cloud_normals = |s: &PreparedShape64, e: usize| s.geom_input.row(e)[..3].to_vec();
        // rebuild geometric inputs from the original normals
        let mut geom = pshape.geom_input.data().to_vec();
        let inverse: Vec<usize> = { let mut inv = vec![0; perm.len()]; for (o, &n) in perm.iter().enumerate() { inv[n] = o; } inv };
        let original_normal: std::collections::HashMap<usize, Vec<f64>> =
            (0..shape.num_entries()).map(|e| (shape.entry_point[e], cloud_normals(&shape, e))).collect();
        for e in 0..pshape.num_entries() {
            let old = inverse[pshape.entry_point[e]];
            geom[e * 6..e * 6 + 3].copy_from_slice(&original_normal[&old]);
        }
        pshape.geom_input = Tensor::new(vec![pshape.num_entries(), 6], geom).unwrap();

        let config = ModelConfig::new(6, 3);
        let params = config.init_params::<f64>(seed).unwrap();
        let net = SegGraphNet::new(config);
        let encode = |s: &PreparedShape64| {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let fp = net.project(&mut tape, &bound, s).unwrap();
            let fs = net.encode_segments(&mut tape, &bound, s, fp, true).unwrap();
            rows(tape.value(fs))
        };
        let (a, b) = (encode(&shape), encode(&pshape));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(close(x, y, 1e-12));
        }
    }

    #[test]
    fn gat_is_equivariant_under_node_relabeling(seed in 0u64..1000) {
        let config = ModelConfig::new(4, 2);
        let params = config.init_params::<f64>(seed).unwrap();
        let net = SegGraphNet::new(config);
        let mut r = rng(seed);
        let g = r.random_range(2..14);
        let h = random_features(&mut r, g, config.channels);
        let edges = graph_edges(g, &mut r, 0.3);
        let mut perm: Vec<usize> = (0..g).collect();
        perm.shuffle(&mut r);
        let ph = Tensor::from_fn(g, config.channels, |i, c| h.at(perm.iter().position(|&p| p == i).unwrap(), c));
        let pedges: Vec<(u32, u32)> = edges
            .iter()
            .map(|&(a, b)| {
                let (a, b) = (perm[a as usize] as u32, perm[b as usize] as u32);
                (a.min(b), a.max(b))
            })
            .collect();
        let run = |h: &Tensor<f64>, e: &[(u32, u32)]| {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let hv = tape.constant(h.clone());
            let out = net.gatv2_layer(&mut tape, &bound, "gat.2.overlap", hv, &EdgeIndex::with_self_loops(g, e).unwrap()).unwrap();
            rows(tape.value(out))
        };
        let (a, b) = (run(&h, &edges), run(&ph, &pedges));
        for i in 0..g {
            prop_assert!(close(&a[i], &b[perm[i]], 1e-12));
        }
        let uniq: BTreeSet<_> = pedges.iter().collect();
        prop_assert_eq!(uniq.len(), edges.len());
    }
}
