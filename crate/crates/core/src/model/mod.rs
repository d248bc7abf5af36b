//! Small encoder-decoder transformer that retains every intermediate decoder
//! state, with per-task heads over a learned aggregation of those states.
//!
//! The decoder stack has `N >= 3` layers. Layers `1..N-1` are the
//! intermediate states: each task head aggregates them with a softmax over
//! its weighting parameters plus a uniform residual term, then projects to
//! vocabulary logits with its own untied projection. The main head reads
//! layer `N` only, through a final layer norm and the transposed embedding
//! (weight tying).

mod generate;
mod transformer;

pub use generate::{generate, DecodeMode, Generated};

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Vocab;
use crate::tensor::{Graph, NodeId, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model config: {0}")]
    Config(String),
    #[error("sequence length {got} exceeds maximum {max}")]
    TooLong { got: usize, max: usize },
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenId { id: u32, vocab: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Resolved from the corpus at initialization when left at 0.
    pub vocab_size: usize,
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    /// Decoder depth N; at least 3 so N-1 intermediate layers exist.
    pub decoder_layers: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub max_source_len: usize,
    pub max_target_len: usize,
    pub activation: Activation,
    /// Uniform residual term in the intermediate aggregation; off only for
    /// the ablation study.
    pub residual_aggregation: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            d_model: 64,
            heads: 4,
            encoder_layers: 2,
            decoder_layers: 3,
            ff_dim: 128,
            dropout: 0.1,
            max_source_len: 48,
            max_target_len: 40,
            activation: Activation::Relu,
            residual_aggregation: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vocab_size == 0 {
            return Err(ModelError::Config("vocab_size unresolved".into()));
        }
        if self.d_model == 0 || self.d_model % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.decoder_layers < 3 {
            return Err(ModelError::Config(format!(
                "decoder_layers must be at least 3, got {}",
                self.decoder_layers
            )));
        }
        if self.encoder_layers == 0 || self.ff_dim == 0 {
            return Err(ModelError::Config("zero-sized encoder or feed-forward".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config("dropout must be in [0, 1)".into()));
        }
        if self.max_source_len == 0 || self.max_target_len == 0 {
            return Err(ModelError::Config("zero maximum lengths".into()));
        }
        Ok(())
    }

    pub fn intermediate_layers(&self) -> usize {
        self.decoder_layers - 1
    }
}

/// The two intermediate supervision tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Sae,
    Saa,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Sae => "sae",
            TaskKind::Saa => "saa",
        }
    }
}

/// Which heads exist and whether they read the intermediate layers or the
/// final one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSet {
    pub sae: bool,
    pub saa: bool,
    pub hierarchy: bool,
}

impl TaskSet {
    pub fn active(&self) -> Vec<TaskKind> {
        let mut v = Vec::new();
        if self.sae {
            v.push(TaskKind::Sae);
        }
        if self.saa {
            v.push(TaskKind::Saa);
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Arc<Vec<f64>>,
}

impl Param {
    pub fn len(&self) -> usize {
        self.values.len()
    }
}

/// Named parameter tensors in a fixed order; the order is the checkpoint
/// order and the gradient-vector order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param> {
        self.params.iter()
    }

    pub fn get(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    fn push(&mut self, name: String, shape: Vec<usize>, values: Vec<f64>) -> usize {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.params.push(Param { name, shape, values: Arc::new(values) });
        self.params.len() - 1
    }

    /// Apply an in-place update; clones only if a graph still shares the
    /// storage.
    pub fn update(&mut self, idx: usize, f: impl FnOnce(&mut [f64])) {
        f(Arc::make_mut(&mut self.params[idx].values).as_mut_slice());
    }

    /// Insert every parameter as a leaf of `g`, in store order.
    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> BoundParams {
        let ids = self
            .params
            .iter()
            .map(|p| g.leaf_shared(Arc::clone(&p.values), p.shape.clone(), requires_grad))
            .collect();
        BoundParams { ids }
    }
}

/// Tape leaves for one forward pass, parallel to [`ParamStore`] order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub ids: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnIdx {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncLayerIdx {
    pub ln1g: usize,
    pub ln1b: usize,
    pub attn: AttnIdx,
    pub ln2g: usize,
    pub ln2b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DecLayerIdx {
    pub ln1g: usize,
    pub ln1b: usize,
    pub self_attn: AttnIdx,
    pub ln2g: usize,
    pub ln2b: usize,
    pub cross_attn: AttnIdx,
    pub ln3g: usize,
    pub ln3b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct HeadIdx {
    pub proj_w: usize,
    pub proj_b: usize,
    pub hier_w: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Layout {
    pub embedding: usize,
    pub enc: Vec<EncLayerIdx>,
    pub enc_lng: usize,
    pub enc_lnb: usize,
    pub dec: Vec<DecLayerIdx>,
    pub dec_lng: usize,
    pub dec_lnb: usize,
    pub heads: BTreeMap<TaskKind, HeadIdx>,
}

/// Per-task outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct TaskTrace {
    /// Aggregated hidden states the head projected ([k, d]).
    pub aggregated: NodeId,
    /// Softmax over the layer-weighting parameters; absent without
    /// hierarchy.
    pub coeffs: Option<NodeId>,
    pub logits: NodeId,
}

/// Everything one teacher-forced pass exposes: encoder output, every decoder
/// layer state, main logits, and per-task aggregations and logits.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub encoder: NodeId,
    /// `decoder_layers[i]` is the output of decoder layer `i+1`; the last
    /// entry is the final layer feeding the main head.
    pub decoder_layers: Vec<NodeId>,
    pub main_logits: NodeId,
    pub tasks: BTreeMap<TaskKind, TaskTrace>,
    pub bound: BoundParams,
}

impl ForwardTrace {
    /// Intermediate states H^1..H^{N-1} (the final layer excluded).
    pub fn intermediate_states(&self) -> &[NodeId] {
        &self.decoder_layers[..self.decoder_layers.len() - 1]
    }

    pub fn final_state(&self) -> NodeId {
        *self.decoder_layers.last().expect("decoder has layers")
    }
}

/// Forward-pass options: gradients and dropout are both off by default.
#[derive(Default)]
pub struct ForwardOpts<'r> {
    pub requires_grad: bool,
    pub dropout_rng: Option<&'r mut ChaCha8Rng>,
}

impl<'r> ForwardOpts<'r> {
    pub fn train(rng: &'r mut ChaCha8Rng) -> Self {
        ForwardOpts { requires_grad: true, dropout_rng: Some(rng) }
    }

    pub fn eval() -> Self {
        ForwardOpts::default()
    }

    pub fn with_grad() -> Self {
        ForwardOpts { requires_grad: true, dropout_rng: None }
    }
}

pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
    pub tasks: TaskSet,
    pub(crate) layout: Layout,
}

impl Model {
    /// Fresh model with scaled-normal init (std 0.02), unit layer-norm
    /// gains, and zero biases and layer weights.
    pub fn init(
        config: ModelConfig,
        vocab: Vocab,
        tasks: TaskSet,
        seed: u64,
    ) -> Result<Model, ModelError> {
        let mut config = config;
        if config.vocab_size == 0 {
            config.vocab_size = vocab.len();
        }
        if config.vocab_size != vocab.len() {
            return Err(ModelError::Config(format!(
                "vocab_size {} disagrees with vocabulary of {}",
                config.vocab_size,
                vocab.len()
            )));
        }
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::default();
        let layout = build_layout(&config, tasks, &mut params, &mut rng);
        Ok(Model { config, vocab, params, tasks, layout })
    }

    /// Rebuild from checkpointed parts; parameter names and shapes must
    /// match the layout implied by the config.
    pub fn from_parts(
        config: ModelConfig,
        vocab: Vocab,
        tasks: TaskSet,
        saved: Vec<Param>,
    ) -> Result<Model, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ParamStore::default();
        let layout = build_layout(&config, tasks, &mut params, &mut rng);
        if saved.len() != params.len() {
            return Err(ModelError::Config(format!(
                "checkpoint has {} parameters, layout expects {}",
                saved.len(),
                params.len()
            )));
        }
        for (slot, loaded) in params.params.iter_mut().zip(saved) {
            if slot.name != loaded.name || slot.shape != loaded.shape {
                return Err(ModelError::Config(format!(
                    "checkpoint parameter {}/{:?} does not match layout {}/{:?}",
                    loaded.name, loaded.shape, slot.name, slot.shape
                )));
            }
            slot.values = loaded.values;
        }
        Ok(Model { config, vocab, params, tasks, layout })
    }

    pub fn head_index(&self, task: TaskKind) -> Option<(usize, usize, Option<usize>)> {
        self.layout.heads.get(&task).map(|h| (h.proj_w, h.proj_b, h.hier_w))
    }
}

fn normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    // Box-Muller; plain rejection of the zero sample keeps ln finite
    let mut u1: f64 = 0.0;
    while u1 <= f64::MIN_POSITIVE {
        u1 = rng.gen::<f64>();
    }
    let u2: f64 = rng.gen();
    std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    (0..rows * cols).map(|_| normal(rng, 0.02)).collect()
}

fn build_layout(
    cfg: &ModelConfig,
    tasks: TaskSet,
    params: &mut ParamStore,
    rng: &mut ChaCha8Rng,
) -> Layout {
    let d = cfg.d_model;
    let v = cfg.vocab_size;
    let f = cfg.ff_dim;
    let mut layout = Layout {
        embedding: params.push("embedding".into(), vec![v, d], matrix(rng, v, d)),
        ..Layout::default()
    };

    let attn = |params: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: String| AttnIdx {
        wq: params.push(format!("{prefix}.wq"), vec![d, d], matrix(rng, d, d)),
        bq: params.push(format!("{prefix}.bq"), vec![d], vec![0.0; d]),
        wk: params.push(format!("{prefix}.wk"), vec![d, d], matrix(rng, d, d)),
        bk: params.push(format!("{prefix}.bk"), vec![d], vec![0.0; d]),
        wv: params.push(format!("{prefix}.wv"), vec![d, d], matrix(rng, d, d)),
        bv: params.push(format!("{prefix}.bv"), vec![d], vec![0.0; d]),
        wo: params.push(format!("{prefix}.wo"), vec![d, d], matrix(rng, d, d)),
        bo: params.push(format!("{prefix}.bo"), vec![d], vec![0.0; d]),
    };

    for i in 0..cfg.encoder_layers {
        let p = format!("enc.{i}");
        layout.enc.push(EncLayerIdx {
            ln1g: params.push(format!("{p}.ln1.g"), vec![d], vec![1.0; d]),
            ln1b: params.push(format!("{p}.ln1.b"), vec![d], vec![0.0; d]),
            attn: attn(params, rng, format!("{p}.attn")),
            ln2g: params.push(format!("{p}.ln2.g"), vec![d], vec![1.0; d]),
            ln2b: params.push(format!("{p}.ln2.b"), vec![d], vec![0.0; d]),
            w1: params.push(format!("{p}.ff.w1"), vec![d, f], matrix(rng, d, f)),
            b1: params.push(format!("{p}.ff.b1"), vec![f], vec![0.0; f]),
            w2: params.push(format!("{p}.ff.w2"), vec![f, d], matrix(rng, f, d)),
            b2: params.push(format!("{p}.ff.b2"), vec![d], vec![0.0; d]),
        });
    }
    layout.enc_lng = params.push("enc.final_ln.g".into(), vec![d], vec![1.0; d]);
    layout.enc_lnb = params.push("enc.final_ln.b".into(), vec![d], vec![0.0; d]);

    for i in 0..cfg.decoder_layers {
        let p = format!("dec.{i}");
        layout.dec.push(DecLayerIdx {
            ln1g: params.push(format!("{p}.ln1.g"), vec![d], vec![1.0; d]),
            ln1b: params.push(format!("{p}.ln1.b"), vec![d], vec![0.0; d]),
            self_attn: attn(params, rng, format!("{p}.self_attn")),
            ln2g: params.push(format!("{p}.ln2.g"), vec![d], vec![1.0; d]),
            ln2b: params.push(format!("{p}.ln2.b"), vec![d], vec![0.0; d]),
            cross_attn: attn(params, rng, format!("{p}.cross_attn")),
            ln3g: params.push(format!("{p}.ln3.g"), vec![d], vec![1.0; d]),
            ln3b: params.push(format!("{p}.ln3.b"), vec![d], vec![0.0; d]),
            w1: params.push(format!("{p}.ff.w1"), vec![d, f], matrix(rng, d, f)),
            b1: params.push(format!("{p}.ff.b1"), vec![f], vec![0.0; f]),
            w2: params.push(format!("{p}.ff.w2"), vec![f, d], matrix(rng, f, d)),
            b2: params.push(format!("{p}.ff.b2"), vec![d], vec![0.0; d]),
        });
    }
    layout.dec_lng = params.push("dec.final_ln.g".into(), vec![d], vec![1.0; d]);
    layout.dec_lnb = params.push("dec.final_ln.b".into(), vec![d], vec![0.0; d]);

    let n_inter = cfg.intermediate_layers();
    for task in tasks.active() {
        let name = task.name();
        let head = HeadIdx {
            proj_w: params.push(format!("head.{name}.w"), vec![d, v], matrix(rng, d, v)),
            proj_b: params.push(format!("head.{name}.b"), vec![v], vec![0.0; v]),
            hier_w: tasks.hierarchy.then(|| {
                params.push(format!("hier.{name}.w"), vec![n_inter], vec![0.0; n_inter])
            }),
        };
        layout.heads.insert(task, head);
    }
    layout
}

/// Softmax-weighted sum of the intermediate states plus, when enabled, a
/// uniform residual over the same states. Both coefficient sets sum to 1,
/// so the total mass is 2 with the residual on.
pub fn aggregate_intermediate(
    g: &mut Graph,
    states: &[NodeId],
    hier_w: NodeId,
    residual: bool,
) -> Result<NodeId, TensorError> {
    let coeffs = g.softmax(hier_w, 0)?;
    let learned = g.weighted_sum(states, coeffs)?;
    if !residual {
        return Ok(learned);
    }
    let n = states.len();
    let uniform = g.leaf(vec![1.0 / n as f64; n], vec![n], false);
    let resid = g.weighted_sum(states, uniform)?;
    g.add(learned, resid)
}

/// Project aggregated states into vocabulary logits with a task head.
pub fn head_logits(
    g: &mut Graph,
    hidden: NodeId,
    proj_w: NodeId,
    proj_b: NodeId,
) -> Result<NodeId, TensorError> {
    let raw = g.matmul(hidden, proj_w)?;
    g.add(raw, proj_b)
}
