//! Graph-neural emphasis predictor.
//!
//! Character nodes start from a projection of `semantic ⊕ POS` vectors, BOS
//! and EOS nodes from two learned vectors. A gated graph network runs a fixed
//! number of propagation steps with one message matrix per relation and
//! direction. Each character's final state goes through
//! `linear → ReLU → linear → softmax` to give `(p_plain, p_emphasized)`.

mod backprop;
mod checkpoint;
mod metrics;
mod train;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DepAnnotation, EmphasisLabels, LabelSource, Tagset, Utterance};
use crate::embed::{EmbedError, EmbeddingTable, SemanticProvider};
use crate::graph::{self, CharGraph, GraphError, GraphOptions};

pub use backprop::{batch_loss, ggn_forward, loss_and_grads, softmax_rows};


pub use checkpoint::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, PEMO_MAGIC, PEMO_VERSION};
pub use metrics::{evaluate, filter_by_confidence, Metrics};
pub use train::{split_ids, train, validation_metrics, EpochLog, Optimizer, OptimizerKind, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("utterance {id}: {expected} characters expected, got {found}")]
    LengthMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("predicted and gold utterance sets differ")]
    UtteranceSetMismatch,
    #[error("training set is empty")]
    EmptyDataset,
    #[error("utterance {0} has no labels")]
    MissingLabels(String),
    #[error("checkpoint tag inventory {found:016x} does not match corpus {expected:016x}")]
    TagsetMismatch { expected: u64, found: u64 },
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Architecture sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub num_iterations: usize,
    pub head_hidden: usize,
    pub pos_dim: usize,
    pub semantic_dim: usize,
    /// Relation ids, including ROOT/BOS/EOS/SEQ.
    pub num_relations: usize,
    pub num_pos: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let t = Tagset::default();
        ModelConfig {
            hidden_dim: 512,
            num_iterations: 3,
            head_hidden: 128,
            pos_dim: 30,
            semantic_dim: 128,
            num_relations: t.num_rel(),
            num_pos: t.num_pos(),
        }
    }
}

impl ModelConfig {
    pub fn for_tagset(mut self, tagset: &Tagset) -> Self {
        self.num_relations = tagset.num_rel();
        self.num_pos = tagset.num_pos();
        self
    }

    pub fn input_dim(&self) -> usize {
        self.semantic_dim + self.pos_dim
    }
}

/// Input, recurrent and bias terms of one GRU gate.
#[derive(Clone, Debug, PartialEq)]
pub struct GateParams {
    pub input: Array2<f64>,
    pub recurrent: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GgnParams {
    pub hidden_dim: usize,
    pub num_iterations: usize,
    /// Indexed by `2 * relation + direction`.
    pub msg_w: Vec<Array2<f64>>,
    pub msg_b: Vec<Array1<f64>>,
    pub update: GateParams,
    pub reset: GateParams,
    pub candidate: GateParams,
}

impl GgnParams {
    pub fn msg_index(relation: usize, direction: graph::Direction) -> usize {
        2 * relation + direction as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Every trainable tensor. Also used as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub pos_table: EmbeddingTable,
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
    /// Rows 0 and 1 are the BOS and EOS initial states.
    pub boundary: Array2<f64>,
    pub ggn: GgnParams,
    pub head: HeadParams,
}

fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt() as f32;
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-a..=a) as f64)
}

fn gate(h: usize, bias: f64, rng: &mut impl Rng) -> GateParams {
    GateParams {
        input: glorot(h, h, rng),
        recurrent: glorot(h, h, rng),
        bias: Array1::from_elem(h, bias),
    }
}

impl Params {
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let h = cfg.hidden_dim;
        let pos_table = EmbeddingTable::seeded("pos", cfg.num_pos, cfg.pos_dim, rng);
        let proj_w = glorot(h, cfg.input_dim(), rng);
        let boundary = Array2::from_shape_fn((2, h), |_| rng.gen_range(-0.1f32..=0.1) as f64);
        let msgs = 2 * cfg.num_relations;
        let msg_w = (0..msgs).map(|_| glorot(h, h, rng)).collect();
        let ggn = GgnParams {
            hidden_dim: h,
            num_iterations: cfg.num_iterations,
            msg_w,
            msg_b: (0..msgs).map(|_| Array1::zeros(h)).collect(),
            update: gate(h, 1.0, rng),
            reset: gate(h, 0.0, rng),
            candidate: gate(h, 0.0, rng),
        };
        let head = HeadParams {
            w1: glorot(cfg.head_hidden, h, rng),
            b1: Array1::zeros(cfg.head_hidden),
            w2: glorot(2, cfg.head_hidden, rng),
            b2: Array1::zeros(2),
        };
        Params {
            pos_table,
            proj_w,
            proj_b: Array1::zeros(h),
            boundary,
            ggn,
            head,
        }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, s) in z.slices_mut() {
            s.fill(0.0);
        }
        z
    }

    /// Zero gradients with empty message matrices, filled on first use.
    pub(crate) fn sparse_zeros_like(&self) -> Self {
        let g = &self.ggn;
        let z2 = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        let z1 = |a: &Array1<f64>| Array1::zeros(a.raw_dim());
        let zg = |p: &GateParams| GateParams {
            input: z2(&p.input),
            recurrent: z2(&p.recurrent),
            bias: z1(&p.bias),
        };
        Params {
            pos_table: EmbeddingTable::new("pos", z2(&self.pos_table.matrix)),
            proj_w: z2(&self.proj_w),
            proj_b: z1(&self.proj_b),
            boundary: z2(&self.boundary),
            ggn: GgnParams {
                hidden_dim: g.hidden_dim,
                num_iterations: g.num_iterations,
                msg_w: g.msg_w.iter().map(|_| Array2::zeros((0, 0))).collect(),
                msg_b: g.msg_b.iter().map(|_| Array1::zeros(0)).collect(),
                update: zg(&g.update),
                reset: zg(&g.reset),
                candidate: zg(&g.candidate),
            },
            head: HeadParams {
                w1: z2(&self.head.w1),
                b1: z1(&self.head.b1),
                w2: z2(&self.head.w2),
                b2: z1(&self.head.b2),
            },
        }
    }

    /// Adds `other` into `self`; empty tensors in `other` are skipped.
    pub fn accumulate(&mut self, other: &Params) {
        let mut dst = self.slices_mut();
        for ((_, d), (_, s)) in dst.iter_mut().zip(other.slices()) {
            if s.is_empty() {
                continue;
            }
            for (a, b) in d.iter_mut().zip(s) {
                *a += b;
            }
        }
    }

    /// Named flat views in a fixed order; the names key checkpoint tensors.
    pub fn named_tensors(&self) -> Vec<(String, (usize, usize), &[f64])> {
        type Entry<'a> = (String, (usize, usize), &'a [f64]);
        fn m(a: &Array2<f64>) -> ((usize, usize), &[f64]) {
            (a.dim(), a.as_slice().expect("standard layout"))
        }
        fn v(a: &Array1<f64>) -> ((usize, usize), &[f64]) {
            ((1, a.len()), a.as_slice().expect("standard layout"))
        }
        let mut out: Vec<Entry<'_>> = Vec::new();
        macro_rules! push {
            ($name:expr, $t:expr) => {{
                let (shape, data) = $t;
                out.push(($name, shape, data));
            }};
        }
        push!("pos_table".into(), m(&self.pos_table.matrix));
        push!("proj.weight".into(), m(&self.proj_w));
        push!("proj.bias".into(), v(&self.proj_b));
        push!("boundary".into(), m(&self.boundary));
        for (k, (w, b)) in self.ggn.msg_w.iter().zip(&self.ggn.msg_b).enumerate() {
            let dir = if k % 2 == 0 { "out" } else { "in" };
            push!(format!("ggn.msg.{}.{dir}.weight", k / 2), m(w));
            push!(format!("ggn.msg.{}.{dir}.bias", k / 2), v(b));
        }
        for (name, g) in [
            ("update", &self.ggn.update),
            ("reset", &self.ggn.reset),
            ("candidate", &self.ggn.candidate),
        ] {
            push!(format!("ggn.{name}.input"), m(&g.input));
            push!(format!("ggn.{name}.recurrent"), m(&g.recurrent));
            push!(format!("ggn.{name}.bias"), v(&g.bias));
        }
        push!("head.l1.weight".into(), m(&self.head.w1));
        push!("head.l1.bias".into(), v(&self.head.b1));
        push!("head.l2.weight".into(), m(&self.head.w2));
        push!("head.l2.bias".into(), v(&self.head.b2));
        out
    }

    pub fn slices(&self) -> Vec<(String, &[f64])> {
        self.named_tensors()
            .into_iter()
            .map(|(n, _, s)| (n, s))
            .collect()
    }

    /// Mutable views in the same order as [`Params::named_tensors`].
    pub fn slices_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let names: Vec<String> = self.named_tensors().into_iter().map(|(n, _, _)| n).collect();
        let mut views: Vec<&mut [f64]> = Vec::new();
        views.push(self.pos_table.matrix.as_slice_mut().unwrap());
        views.push(self.proj_w.as_slice_mut().unwrap());
        views.push(self.proj_b.as_slice_mut().unwrap());
        views.push(self.boundary.as_slice_mut().unwrap());
        for (w, b) in self.ggn.msg_w.iter_mut().zip(self.ggn.msg_b.iter_mut()) {
            views.push(w.as_slice_mut().unwrap());
            views.push(b.as_slice_mut().unwrap());
        }
        for g in [
            &mut self.ggn.update,
            &mut self.ggn.reset,
            &mut self.ggn.candidate,
        ] {
            views.push(g.input.as_slice_mut().unwrap());
            views.push(g.recurrent.as_slice_mut().unwrap());
            views.push(g.bias.as_slice_mut().unwrap());
        }
        views.push(self.head.w1.as_slice_mut().unwrap());
        views.push(self.head.b1.as_slice_mut().unwrap());
        views.push(self.head.w2.as_slice_mut().unwrap());
        views.push(self.head.b2.as_slice_mut().unwrap());
        names.into_iter().zip(views).collect()
    }

    /// Rounds every value to the nearest f32.
    pub fn round_to_f32(&mut self) {
        for (_, s) in self.slices_mut() {
            for v in s.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn num_values(&self) -> usize {
        self.slices().iter().map(|(_, s)| s.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorModel {
    pub config: ModelConfig,
    pub params: Params,
    pub tagset_hash: u64,
    pub seed: u64,
}

impl PredictorModel {
    /// Seeded initialization; all parameters lie on the f32 grid so that
    /// checkpoints round-trip exactly.
    pub fn new(config: ModelConfig, tagset: &Tagset, seed: u64) -> Self {
        let config = config.for_tagset(tagset);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PredictorModel {
            params: Params::init(&config, &mut rng),
            config,
            tagset_hash: tagset.hash(),
            seed,
        }
    }

    pub fn check_tagset(&self, tagset: &Tagset) -> Result<(), ModelError> {
        if tagset.hash() != self.tagset_hash {
            return Err(ModelError::TagsetMismatch {
                expected: tagset.hash(),
                found: self.tagset_hash,
            });
        }
        Ok(())
    }

    /// Initial node states `[num_nodes × hidden]`.
    pub fn node_init(&self, ex: &Example) -> Result<Array2<f64>, ModelError> {
        Ok(backprop::node_init(&self.params, ex)?.1)
    }

    /// `(p_plain, p_emphasized)` per character.
    pub fn forward(&self, ex: &Example) -> Result<Array2<f64>, ModelError> {
        backprop::check_example(&self.config, ex)?;
        Ok(softmax_rows(&backprop::logits(&self.params, ex)?))
    }

    pub fn predict(&self, ex: &Example) -> Result<EmphasisLabels, ModelError> {
        let probs = self.forward(ex)?;
        Ok(labels_from_probs(&ex.id, &probs))
    }
}

/// Argmax labels with ties resolved to "not emphasized".
pub fn labels_from_probs(id: &str, probs: &Array2<f64>) -> EmphasisLabels {
    let (labels, confidences) = probs
        .axis_iter(Axis(0))
        .map(|p| {
            let emph = p[1] > p[0];
            (u8::from(emph), if emph { p[1] } else { p[0] })
        })
        .unzip();
    EmphasisLabels {
        utterance_id: id.to_string(),
        labels,
        confidences,
        source: LabelSource::Predicted,
    }
}

/// Everything the network consumes for one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub graph: CharGraph,
    /// `[num_chars × semantic_dim]`
    pub semantic: Array2<f64>,
    /// POS id of each character's word.
    pub pos_per_char: Vec<usize>,
    pub labels: Option<Vec<u8>>,
}

impl Example {
    pub fn new(
        utt: &Utterance,
        ann: &DepAnnotation,
        tagset: &Tagset,
        provider: &SemanticProvider,
        opts: GraphOptions,
        labels: Option<&EmphasisLabels>,
    ) -> Result<Self, ModelError> {
        let semantic = provider.vectors(utt)?;
        let pos_per_char = graph::expand_word_to_char(&ann.pos_tags, utt)?;
        if let Some(l) = labels {
            if l.len() != utt.num_chars() {
                return Err(ModelError::LengthMismatch {
                    id: utt.id.clone(),
                    expected: utt.num_chars(),
                    found: l.len(),
                });
            }
        }
        Ok(Example {
            id: utt.id.clone(),
            graph: graph::build_char_graph_with(utt, ann, tagset, opts),
            semantic,
            pos_per_char,
            labels: labels.map(|l| l.labels.clone()),
        })
    }

    pub fn num_chars(&self) -> usize {
        self.pos_per_char.len()
    }
}
