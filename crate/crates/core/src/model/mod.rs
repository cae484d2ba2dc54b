//! The segment-graph network.
//!
//! Point features are projected to `C` channels, pooled into segment
//! features (geometric max-pool refined by additive attention over member
//! point features), propagated through stacked GATv2 layers with separate
//! weights for overlap and adjacency edges, and unpooled back to points
//! with softmax-normalized view-quality weights before a two-layer head.

pub mod prepare;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Bound, ParamStore, Tape, Tensor, Var};
use crate::scalar::{lit, Scalar};

pub use prepare::{raw_view_quality, relative_normalize, EdgeIndex, PreparedShape, EXTENT_EPSILON};

/// Sizes of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub channels: usize,
    pub heads: usize,
    pub layers: usize,
    pub classes: usize,
    pub quality_hidden: usize,
}

/// Negative slope inside GATv2 attention.
pub const LEAKY_SLOPE: f64 = 0.2;

impl ModelConfig {
    pub fn new(in_channels: usize, classes: usize) -> Self {
        Self {
            in_channels,
            channels: 96,
            heads: 4,
            layers: 3,
            classes,
            quality_hidden: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.in_channels == 0 || self.channels == 0 {
            return Err(Error::Configuration("model sizes must be positive".into()));
        }
        if self.heads == 0 || self.channels % self.heads != 0 {
            return Err(Error::Configuration(format!(
                "{} channels do not split into {} heads",
                self.channels, self.heads
            )));
        }
        Ok(())
    }

    /// Parameter names and shapes in initialization order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (c, q) = (self.channels, self.quality_hidden);
        let mut out: Vec<(String, Vec<usize>)> = vec![
            ("proj.w".into(), vec![self.in_channels, c]),
            ("proj.b".into(), vec![c]),
            ("geom.0.w".into(), vec![6, c]),
            ("geom.0.b".into(), vec![c]),
            ("geom.1.w".into(), vec![c, c]),
            ("geom.1.b".into(), vec![c]),
            ("attn.w_point".into(), vec![c, c]),
            ("attn.w_segment".into(), vec![c, c]),
            ("attn.v".into(), vec![c, 1]),
        ];
        for l in 0..self.layers {
            for t in ["overlap", "adjacency"] {
                out.push((format!("gat.{l}.{t}.w_query"), vec![c, c]));
                out.push((format!("gat.{l}.{t}.w_message"), vec![c, c]));
                out.push((format!("gat.{l}.{t}.att"), vec![c]));
            }
            out.push((format!("fuse.{l}.0.w"), vec![2 * c, c]));
            out.push((format!("fuse.{l}.0.b"), vec![c]));
            out.push((format!("fuse.{l}.1.w"), vec![c, c]));
            out.push((format!("fuse.{l}.1.b"), vec![c]));
        }
        out.extend([
            ("quality.0.w".into(), vec![1, q]),
            ("quality.0.b".into(), vec![q]),
            ("quality.1.w".into(), vec![q, 1]),
            ("quality.1.b".into(), vec![1]),
            ("head.0.w".into(), vec![c, c]),
            ("head.0.b".into(), vec![c]),
            ("head.1.w".into(), vec![c, self.classes]),
            ("head.1.b".into(), vec![self.classes]),
        ]);
        out
    }

    /// Glorot-uniform weights and zero biases from a seeded stream.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> Result<ParamStore<T>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, dims) in self.param_shapes() {
            let len: usize = dims.iter().product();
            let data: Vec<T> = if dims.len() == 1 && !name.ends_with(".att") {
                vec![T::zero(); len]
            } else {
                let (fan_in, fan_out) = if dims.len() == 2 { (dims[0], dims[1]) } else { (dims[0], 1) };
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..len).map(|_| lit(rng.random_range(-bound..bound))).collect()
            };
            store.insert(name, Tensor::new(dims, data)?)?;
        }
        Ok(store)
    }
}

/// Switches for the component ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Use lifted segments at all; off gives the per-point MLP baseline.
    pub segments: bool,
    /// Attention segment encoder; off pools member features by their mean.
    pub segment_encoder: bool,
    /// View-quality unpooling; off averages uniformly.
    pub quality_unpool: bool,
    pub overlap_edges: bool,
    pub adjacency_edges: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self::full()
    }
}

impl Ablation {
    pub const fn full() -> Self {
        Self {
            segments: true,
            segment_encoder: true,
            quality_unpool: true,
            overlap_edges: true,
            adjacency_edges: true,
        }
    }

    /// Head on projected pooled point features only.
    pub const fn mlp_baseline() -> Self {
        Self {
            segments: false,
            segment_encoder: false,
            quality_unpool: false,
            overlap_edges: false,
            adjacency_edges: false,
        }
    }

    /// Full model without graph propagation.
    pub const fn no_graph() -> Self {
        Self {
            overlap_edges: false,
            adjacency_edges: false,
            ..Self::full()
        }
    }

    /// Graph propagation runs when at least one edge type is enabled.
    pub fn propagates(&self) -> bool {
        self.segments && (self.overlap_edges || self.adjacency_edges)
    }

    /// The nine component combinations of the ablation study, in order.
    pub fn study_rows() -> [(&'static str, Ablation); 9] {
        let seg = |se, q, o, a| Ablation {
            segments: true,
            segment_encoder: se,
            quality_unpool: q,
            overlap_edges: o,
            adjacency_edges: a,
        };
        [
            ("mlp", Self::mlp_baseline()),
            ("segments", seg(false, false, false, false)),
            ("segments+se", seg(true, false, false, false)),
            ("segments+quality", seg(false, true, false, false)),
            ("no-graph", seg(true, true, false, false)),
            ("segments+edges", seg(false, false, true, true)),
            ("full-no-adjacency", seg(true, true, true, false)),
            ("full-no-overlap", seg(true, true, false, true)),
            ("full", Self::full()),
        ]
    }

    pub fn label(&self) -> String {
        if !self.segments {
            return "mlp".into();
        }
        let flag = |on: bool, s: &str| if on { s.to_string() } else { format!("-{s}") };
        [
            flag(self.segment_encoder, "se"),
            flag(self.quality_unpool, "quality"),
            flag(self.overlap_edges, "overlap"),
            flag(self.adjacency_edges, "adjacency"),
        ]
        .join(",")
    }
}

/// Graph-building forward pass of the network; parameters come in bound
/// to a tape so that the same code serves training and gradient checking.
#[derive(Debug, Clone, Copy)]
pub struct SegGraphNet {
    pub config: ModelConfig,
}

impl SegGraphNet {
    pub fn new(config: ModelConfig) -> Self {
        Self { config }
    }

    fn linear<T: Scalar>(tape: &mut Tape<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.get(&format!("{prefix}.w")))?;
        tape.add_row(y, p.get(&format!("{prefix}.b")))
    }

    fn mlp2<T: Scalar>(tape: &mut Tape<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
        let h = Self::linear(tape, p, &format!("{prefix}.0"), x)?;
        let h = tape.relu(h);
        Self::linear(tape, p, &format!("{prefix}.1"), h)
    }

    /// `point_features · W + b`: `num_points × C`.
    pub fn project<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, shape: &PreparedShape<T>) -> Result<Var> {
        if shape.in_channels != self.config.in_channels {
            return Err(Error::Configuration(format!(
                "shape `{}` has {} feature channels, model expects {}",
                shape.name, shape.in_channels, self.config.in_channels
            )));
        }
        let x = tape.constant(shape.point_features.clone());
        Self::linear(tape, p, "proj", x)
    }

    /// Segment features `num_segments × C`.
    ///
    /// With the encoder, each member gets a local geometric feature from
    /// its normal and relative position; the segment's max-pool of those is
    /// refined by adding member point features weighted by additive
    /// attention between local and pooled features.
    pub fn encode_segments<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        shape: &PreparedShape<T>,
        points: Var,
        encoder: bool,
    ) -> Result<Var> {
        let g = shape.num_segments;
        let member_feats = tape.gather_rows(points, shape.entry_point.clone())?;
        if !encoder {
            let scaled = tape.scale_rows(member_feats, shape.mean_pool.clone())?;
            return tape.scatter_add_rows(scaled, shape.entry_segment.clone(), g);
        }
        let geom = tape.constant(shape.geom_input.clone());
        let local = Self::mlp2(tape, p, "geom", geom)?;
        let pooled = tape.segment_max(local, &shape.entry_segment, g)?;

        let q = tape.matmul(local, p.get("attn.w_point"))?;
        let k = tape.matmul(pooled, p.get("attn.w_segment"))?;
        let k = tape.gather_rows(k, shape.entry_segment.clone())?;
        let s = tape.add(q, k)?;
        let s = tape.tanh(s);
        let scores = tape.matmul(s, p.get("attn.v"))?;
        let alpha = tape.grouped_softmax(scores, shape.entry_segment.clone())?;
        let weighted = tape.mul_heads(member_feats, alpha)?;
        let refined = tape.scatter_add_rows(weighted, shape.entry_segment.clone(), g)?;
        tape.add(pooled, refined)
    }

    /// One multi-head GATv2 layer over `edges` (self-loops included).
    ///
    /// For target `i` and neighbor `j`, per head:
    /// `e_ij = att · LeakyReLU(W_q h_i + W_m h_j)`, softmax over `j`, and the
    /// output is `Σ_j α_ij W_m h_j`; heads are concatenated.
    pub fn gatv2_layer<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, prefix: &str, h: Var, edges: &EdgeIndex) -> Result<Var> {
        let nodes = tape.value(h).rows();
        if let Some(&bad) = edges.src.iter().chain(edges.dst.iter()).find(|&&i| i >= nodes) {
            return Err(Error::Graph(format!("edge endpoint {bad} out of range for {nodes} nodes")));
        }
        let query = tape.matmul(h, p.get(&format!("{prefix}.w_query")))?;
        let message = tape.matmul(h, p.get(&format!("{prefix}.w_message")))?;
        let qi = tape.gather_rows(query, edges.dst.clone())?;
        let mj = tape.gather_rows(message, edges.src.clone())?;
        let z = tape.add(qi, mj)?;
        let z = tape.leaky_relu(z, lit(LEAKY_SLOPE));
        let z = tape.mul_row(z, p.get(&format!("{prefix}.att")))?;
        let logits = tape.block_sum(z, self.config.heads)?;
        let alpha = tape.grouped_softmax(logits, edges.dst.clone())?;
        let weighted = tape.mul_heads(mj, alpha)?;
        tape.scatter_add_rows(weighted, edges.dst.clone(), nodes)
    }

    /// Stacked dual-edge propagation with residual updates:
    /// `h <- h + fuse([gat_overlap(h) | gat_adjacency(h)])`.
    pub fn propagate<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        mut h: Var,
        overlap: &EdgeIndex,
        adjacency: &EdgeIndex,
    ) -> Result<Var> {
        for l in 0..self.config.layers {
            let ho = self.gatv2_layer(tape, p, &format!("gat.{l}.overlap"), h, overlap)?;
            let ha = self.gatv2_layer(tape, p, &format!("gat.{l}.adjacency"), h, adjacency)?;
            let cat = tape.concat_cols(ho, ha)?;
            let update = Self::mlp2(tape, p, &format!("fuse.{l}"), cat)?;
            h = tape.add(h, update)?;
        }
        Ok(h)
    }

    /// Per-entry unpooling weights, `entries × 1`, summing to one per point.
    pub fn unpool_weights<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, shape: &PreparedShape<T>, quality: bool) -> Result<Var> {
        if !quality {
            let e = shape.num_entries();
            let w = Tensor::new(vec![e, 1], shape.uniform_unpool.to_vec())?;
            return Ok(tape.constant(w));
        }
        let raw = tape.constant(shape.raw_quality.clone());
        let logits = Self::mlp2(tape, p, "quality", raw)?;
        tape.grouped_softmax(logits, shape.entry_point.clone())
    }

    /// `F' = F_p + Σ w · F_s` over the segments containing each point.
    /// Points in no segment keep `F_p`.
    pub fn fuse<T: Scalar>(&self, tape: &mut Tape<T>, shape: &PreparedShape<T>, points: Var, segments: Var, weights: Var) -> Result<Var> {
        let per_entry = tape.gather_rows(segments, shape.entry_segment.clone())?;
        let weighted = tape.mul_heads(per_entry, weights)?;
        let fused = tape.scatter_add_rows(weighted, shape.entry_point.clone(), shape.num_points)?;
        tape.add(points, fused)
    }

    /// [`Self::fuse`] followed by the two-layer head.
    pub fn fuse_and_classify<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        shape: &PreparedShape<T>,
        points: Var,
        segments: Var,
        weights: Var,
    ) -> Result<Var> {
        let fused = self.fuse(tape, shape, points, segments, weights)?;
        Self::mlp2(tape, p, "head", fused)
    }

    /// Logits `num_points × classes`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, shape: &PreparedShape<T>, ablation: Ablation) -> Result<Var> {
        let fused = self.embed(tape, p, shape, ablation)?;
        Self::mlp2(tape, p, "head", fused)
    }

    /// Head input `num_points × C`: fused point features, or the projected
    /// features alone when segments are off.
    pub fn embed<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, shape: &PreparedShape<T>, ablation: Ablation) -> Result<Var> {
        let points = self.project(tape, p, shape)?;
        if !ablation.segments || shape.num_segments == 0 {
            return Ok(points);
        }
        let mut segs = self.encode_segments(tape, p, shape, points, ablation.segment_encoder)?;
        if ablation.propagates() {
            let self_only;
            let (overlap, adjacency) = if ablation.overlap_edges && ablation.adjacency_edges {
                (&shape.overlap, &shape.adjacency)
            } else {
                self_only = EdgeIndex::with_self_loops(shape.num_segments, &[])?;
                (
                    if ablation.overlap_edges { &shape.overlap } else { &self_only },
                    if ablation.adjacency_edges { &shape.adjacency } else { &self_only },
                )
            };
            segs = self.propagate(tape, p, segs, overlap, adjacency)?;
        }
        let w = self.unpool_weights(tape, p, shape, ablation.quality_unpool)?;
        self.fuse(tape, shape, points, segs, w)
    }

    /// Mean cross-entropy over the shape's labeled points.
    pub fn loss<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, shape: &PreparedShape<T>, ablation: Ablation) -> Result<Var> {
        let labels = shape.labels.clone().ok_or_else(|| Error::MissingArtifact {
            shape: shape.name.clone(),
            what: "labels".into(),
        })?;
        let logits = self.forward(tape, p, shape, ablation)?;
        tape.cross_entropy(logits, labels)
    }
}

/// Network description plus trained weights.
#[derive(Debug, Clone)]
pub struct SegGraphModel<T> {
    pub config: ModelConfig,
    pub ablation: Ablation,
    pub params: ParamStore<T>,
}

impl<T: Scalar> SegGraphModel<T> {
    pub fn init(config: ModelConfig, ablation: Ablation, seed: u64) -> Result<Self> {
        Ok(Self {
            config,
            ablation,
            params: config.init_params(seed)?,
        })
    }

    pub fn net(&self) -> SegGraphNet {
        SegGraphNet::new(self.config)
    }

    /// Logits for one shape.
    pub fn logits(&self, shape: &PreparedShape<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let out = self.net().forward(&mut tape, &bound, shape, self.ablation)?;
        Ok(tape.value(out).clone())
    }

    /// Fused point features fed to the head.
    pub fn embeddings(&self, shape: &PreparedShape<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let out = self.net().embed(&mut tape, &bound, shape, self.ablation)?;
        Ok(tape.value(out).clone())
    }
}
