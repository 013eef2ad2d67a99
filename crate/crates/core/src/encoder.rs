//! A toy transformer encoder (post-layer-norm residual blocks, first-token
//! pooling) with per-layer tap points: any forward pass can be started from
//! the input of an arbitrary layer, and every layer's output is recorded.
//!
//! The "input of layer b" is the hidden state entering encoder layer `b`; for
//! `b = 1` that is the embedding + position sum after the embedding layer
//! norm, so perturbations at `b = 1` reach everything downstream.

use crate::rng;
use crate::tape::{NodeId, TapeBuilder, TapeError};
use crate::tensor::{TensorMap, TensorValue};
use indexmap::IndexMap;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub mod snapshot;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    BadConfig(String),
    #[error("token id {id} out of range (vocab size {vocab})")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty token sequence")]
    EmptySequence,
    #[error("layer index {b} out of range 1..={num_layers}")]
    BadLayerIndex { b: usize, num_layers: usize },
    #[error("layer input shape {got:?}, expected [seq_len, {d_model}]")]
    BadLayerInput { got: Vec<usize>, d_model: usize },
    #[error("tape error: {0}")]
    Tape(#[from] TapeError),
    #[error("snapshot io: {0}")]
    SnapshotIo(#[from] std::io::Error),
    #[error("snapshot format: {0}")]
    SnapshotFormat(String),
    #[error("parameter set mismatch: {0}")]
    ParamMismatch(String),
}

/// Classifier or regressor head on the pooled first-token state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum HeadKind {
    Classification { num_labels: usize },
    Regression,
}

impl HeadKind {
    pub fn output_dim(&self) -> usize {
        match self {
            HeadKind::Classification { num_labels } => *num_labels,
            HeadKind::Regression => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub head: HeadKind,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    #[serde(default = "default_ln_eps")]
    pub ln_eps: f64,
}

fn default_init_std() -> f64 {
    0.02
}

fn default_ln_eps() -> f64 {
    1e-12
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let fail = |msg: String| Err(EncoderError::BadConfig(msg));
        if self.num_layers == 0 {
            return fail("num_layers must be positive".into());
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.d_ff == 0 {
            return fail("d_ff must be positive".into());
        }
        if self.vocab_size <= crate::harness::data::FIRST_CONTENT_TOKEN as usize {
            return fail(format!(
                "vocab_size {} leaves no room for content tokens",
                self.vocab_size
            ));
        }
        if self.max_seq_len < 2 {
            return fail("max_seq_len must be at least 2".into());
        }
        if let HeadKind::Classification { num_labels } = self.head {
            if num_labels < 2 {
                return fail("classification head needs at least 2 labels".into());
            }
        }
        if self.init_std < 0.0 || !self.init_std.is_finite() {
            return fail(format!("init_std {} must be a finite nonnegative", self.init_std));
        }
        if self.ln_eps <= 0.0 {
            return fail("ln_eps must be positive".into());
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// All model weights, keyed by a stable naming scheme, plus the config that
/// determines every shape. The task head lives under the `head.` prefix; all
/// other tensors form the body (the pre-trainable part).
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    config: EncoderConfig,
    tensors: TensorMap,
}

pub const HEAD_PREFIX: &str = "head.";

impl Parameters {
    pub fn from_parts(config: EncoderConfig, tensors: TensorMap) -> Self {
        Parameters { config, tensors }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn tensors(&self) -> &TensorMap {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut TensorMap {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&TensorValue> {
        self.tensors.get(name)
    }

    pub fn is_head_name(name: &str) -> bool {
        name.starts_with(HEAD_PREFIX)
    }

    pub fn body_names(&self) -> impl Iterator<Item = &str> {
        self.tensors
            .keys()
            .map(|s| s.as_str())
            .filter(|n| !Parameters::is_head_name(n))
    }

    pub fn head_names(&self) -> impl Iterator<Item = &str> {
        self.tensors
            .keys()
            .map(|s| s.as_str())
            .filter(|n| Parameters::is_head_name(n))
    }

    pub fn has_head(&self) -> bool {
        self.head_names().next().is_some()
    }

    /// Total scalar count across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(TensorValue::numel).sum()
    }

    /// Body-only copy (drops `head.*`), used for pre-trained snapshots.
    pub fn body_only(&self) -> Parameters {
        let tensors = self
            .tensors
            .iter()
            .filter(|(n, _)| !Parameters::is_head_name(n))
            .map(|(n, t)| (n.clone(), t.clone()))
            .collect();
        Parameters {
            config: self.config.clone(),
            tensors,
        }
    }

    /// Hex hash of config and every tensor byte; identifies a model state.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for (name, t) in &self.tensors {
            hasher.update(name.as_bytes());
            for d in t.shape() {
                hasher.update(d.to_le_bytes());
            }
            for v in t.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        hex_prefix(&digest, 12)
    }

    pub fn forward(&self, tokens: &[u32]) -> Result<LayerTrace, EncoderError> {
        let mut tb = TapeBuilder::new();
        let nodes = bind_params(&mut tb, self, false)?;
        let plan = build_forward(&mut tb, &nodes, &self.config, tokens)?;
        Ok(extract_trace(&tb, &self.config, &plan, 1))
    }

    /// Run layers `b..=L` from a supplied input of layer `b`.
    pub fn forward_from(&self, layer_input: &TensorValue, b: usize) -> Result<LayerTrace, EncoderError> {
        let cfg = &self.config;
        if b < 1 || b > cfg.num_layers {
            return Err(EncoderError::BadLayerIndex {
                b,
                num_layers: cfg.num_layers,
            });
        }
        let shape = layer_input.shape();
        if shape.len() != 2 || shape[1] != cfg.d_model {
            return Err(EncoderError::BadLayerInput {
                got: shape.to_vec(),
                d_model: cfg.d_model,
            });
        }
        let mut tb = TapeBuilder::new();
        let nodes = bind_params(&mut tb, self, false)?;
        let x = tb.constant(layer_input.clone());
        let (layer_out, pooled, output) = build_layers_from(&mut tb, &nodes, cfg, x, b)?;
        let plan = ForwardPlan {
            embedded: None,
            layer_out,
            pooled,
            output,
        };
        Ok(extract_trace(&tb, cfg, &plan, b))
    }
}

fn hex_prefix(bytes: &[u8], n: usize) -> String {
    bytes.iter().take(n / 2).map(|b| format!("{b:02x}")).collect()
}

/// Draw fresh parameters: matrix and embedding weights iid N(0, init_std²),
/// biases and layer-norm shifts zero, layer-norm gains one.
pub fn init_params(config: &EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Parameters, EncoderError> {
    config.validate()?;
    let d = config.d_model;
    let mut tensors = TensorMap::new();
    {
        let mut gauss = |name: String, shape: Vec<usize>| {
            let t = rng::gaussian_tensor(rng, shape, config.init_std);
            tensors.insert(name, t);
        };
        gauss("embed.tok".into(), vec![config.vocab_size, d]);
        gauss("embed.pos".into(), vec![config.max_seq_len, d]);
    }
    tensors.insert("embed.ln.gamma".into(), TensorValue::filled(vec![d], 1.0));
    tensors.insert("embed.ln.beta".into(), TensorValue::zeros(vec![d]));
    for layer in 1..=config.num_layers {
        let p = |suffix: &str| format!("layer.{layer}.{suffix}");
        for (w, b, rows, cols) in [
            ("attn.wq", "attn.bq", d, d),
            ("attn.wk", "attn.bk", d, d),
            ("attn.wv", "attn.bv", d, d),
            ("attn.wo", "attn.bo", d, d),
        ] {
            let t = rng::gaussian_tensor(rng, vec![rows, cols], config.init_std);
            tensors.insert(p(w), t);
            tensors.insert(p(b), TensorValue::zeros(vec![cols]));
        }
        tensors.insert(p("ln1.gamma"), TensorValue::filled(vec![d], 1.0));
        tensors.insert(p("ln1.beta"), TensorValue::zeros(vec![d]));
        let w1 = rng::gaussian_tensor(rng, vec![d, config.d_ff], config.init_std);
        tensors.insert(p("ffn.w1"), w1);
        tensors.insert(p("ffn.b1"), TensorValue::zeros(vec![config.d_ff]));
        let w2 = rng::gaussian_tensor(rng, vec![config.d_ff, d], config.init_std);
        tensors.insert(p("ffn.w2"), w2);
        tensors.insert(p("ffn.b2"), TensorValue::zeros(vec![d]));
        tensors.insert(p("ln2.gamma"), TensorValue::filled(vec![d], 1.0));
        tensors.insert(p("ln2.beta"), TensorValue::zeros(vec![d]));
    }
    let out_dim = config.head.output_dim();
    let head_w = rng::gaussian_tensor(rng, vec![d, out_dim], config.init_std);
    tensors.insert("head.w".into(), head_w);
    tensors.insert("head.b".into(), TensorValue::zeros(vec![out_dim]));
    Ok(Parameters {
        config: config.clone(),
        tensors,
    })
}

/// Re-draw only the `head.*` tensors (fresh task head per run seed).
pub fn reinit_head(params: &mut Parameters, rng: &mut ChaCha8Rng) {
    let d = params.config.d_model;
    let out_dim = params.config.head.output_dim();
    let std = params.config.init_std;
    let head_w = rng::gaussian_tensor(rng, vec![d, out_dim], std);
    params.tensors.insert("head.w".into(), head_w);
    params
        .tensors
        .insert("head.b".into(), TensorValue::zeros(vec![out_dim]));
}

/// Per-layer output sequence of one forward pass. For a pass started at layer
/// `b`, outputs exist for layers `b..=L`; the full forward also records the
/// embedding output (the input of layer 1).
#[derive(Debug, Clone)]
pub struct LayerTrace {
    start_layer: usize,
    embedded: Option<TensorValue>,
    layer_outputs: Vec<TensorValue>,
    pub pooled: TensorValue,
    pub output: TensorValue,
}

impl LayerTrace {
    pub(crate) fn from_parts(
        start_layer: usize,
        embedded: Option<TensorValue>,
        layer_outputs: Vec<TensorValue>,
        pooled: TensorValue,
        output: TensorValue,
    ) -> Self {
        LayerTrace {
            start_layer,
            embedded,
            layer_outputs,
            pooled,
            output,
        }
    }

    pub fn start_layer(&self) -> usize {
        self.start_layer
    }

    pub fn last_layer(&self) -> usize {
        self.start_layer + self.layer_outputs.len() - 1
    }

    /// Output of absolute layer `r` (1-based), if present on this trace.
    pub fn layer_output(&self, r: usize) -> Option<&TensorValue> {
        if r < self.start_layer {
            return None;
        }
        self.layer_outputs.get(r - self.start_layer)
    }

    /// Embedding output (the input of layer 1); full forwards only.
    pub fn embedding_output(&self) -> Option<&TensorValue> {
        self.embedded.as_ref()
    }

    /// The input of layer `b`: the embedding output for `b = 1`, otherwise
    /// the output of layer `b − 1`.
    pub fn layer_input(&self, b: usize) -> Option<&TensorValue> {
        if b == 1 {
            self.embedding_output()
        } else {
            self.layer_output(b - 1)
        }
    }

    /// State `k` in output-of-layer indexing: `k = 0` is the embedding
    /// output, `k ≥ 1` the output of layer `k`.
    pub fn state(&self, k: usize) -> Option<&TensorValue> {
        if k == 0 {
            self.embedding_output()
        } else {
            self.layer_output(k)
        }
    }

    pub fn outputs(&self) -> &[TensorValue] {
        &self.layer_outputs
    }
}

// ── Graph building (shared by inference, training, and the probe) ──────

/// Tape node ids for every bound parameter tensor.
pub(crate) struct ParamNodes {
    map: IndexMap<String, NodeId>,
}

impl ParamNodes {
    pub(crate) fn get(&self, name: &str) -> NodeId {
        *self
            .map
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name:?} not bound"))
    }

    pub(crate) fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }
}

/// Register every tensor of `params` on the tape. Trainable binding creates
/// gradient-carrying param nodes; otherwise constants.
pub(crate) fn bind_params(
    tb: &mut TapeBuilder,
    params: &Parameters,
    trainable: bool,
) -> Result<ParamNodes, TapeError> {
    let mut map = IndexMap::new();
    for (name, value) in params.tensors() {
        let id = if trainable {
            tb.param(name, value.clone())?
        } else {
            tb.constant(value.clone())
        };
        map.insert(name.clone(), id);
    }
    Ok(ParamNodes { map })
}

pub(crate) struct ForwardPlan {
    pub embedded: Option<NodeId>,
    pub layer_out: Vec<NodeId>,
    pub pooled: NodeId,
    pub output: NodeId,
}

/// Token and position embedding plus embedding layer norm: the input of
/// layer 1.
pub(crate) fn build_embedding(
    tb: &mut TapeBuilder,
    nodes: &ParamNodes,
    cfg: &EncoderConfig,
    tokens: &[u32],
) -> Result<NodeId, EncoderError> {
    if tokens.is_empty() {
        return Err(EncoderError::EmptySequence);
    }
    if tokens.len() > cfg.max_seq_len {
        return Err(EncoderError::SequenceTooLong {
            len: tokens.len(),
            max: cfg.max_seq_len,
        });
    }
    if let Some(&bad) = tokens.iter().find(|&&t| (t as usize) >= cfg.vocab_size) {
        return Err(EncoderError::TokenOutOfRange {
            id: bad,
            vocab: cfg.vocab_size,
        });
    }
    let tok_idx: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
    let pos_idx: Vec<usize> = (0..tokens.len()).collect();
    let tok = tb.gather_rows(nodes.get("embed.tok"), &tok_idx)?;
    let pos = tb.gather_rows(nodes.get("embed.pos"), &pos_idx)?;
    let summed = tb.add(tok, pos)?;
    let x1 = tb.layer_norm(
        summed,
        nodes.get("embed.ln.gamma"),
        nodes.get("embed.ln.beta"),
        cfg.ln_eps,
    )?;
    Ok(x1)
}

/// One post-layer-norm encoder layer: multi-head self-attention, residual,
/// layer norm, GELU feed-forward, residual, layer norm.
pub(crate) fn build_layer(
    tb: &mut TapeBuilder,
    nodes: &ParamNodes,
    cfg: &EncoderConfig,
    x: NodeId,
    layer: usize,
) -> Result<NodeId, EncoderError> {
    let p = |suffix: &str| format!("layer.{layer}.{suffix}");
    let d_head = cfg.d_head();
    let scale = 1.0 / (d_head as f64).sqrt();

    let q = {
        let m = tb.matmul(x, nodes.get(&p("attn.wq")))?;
        tb.add_row(m, nodes.get(&p("attn.bq")))?
    };
    let k = {
        let m = tb.matmul(x, nodes.get(&p("attn.wk")))?;
        tb.add_row(m, nodes.get(&p("attn.bk")))?
    };
    let v = {
        let m = tb.matmul(x, nodes.get(&p("attn.wv")))?;
        tb.add_row(m, nodes.get(&p("attn.bv")))?
    };

    let mut head_ctx = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let (lo, hi) = (h * d_head, (h + 1) * d_head);
        let qh = tb.slice_cols(q, lo, hi)?;
        let kh = tb.slice_cols(k, lo, hi)?;
        let vh = tb.slice_cols(v, lo, hi)?;
        let kt = tb.transpose(kh)?;
        let scores = {
            let raw = tb.matmul(qh, kt)?;
            tb.scale(raw, scale)?
        };
        let probs = tb.softmax(scores)?;
        head_ctx.push(tb.matmul(probs, vh)?);
    }
    let ctx = tb.concat_cols(&head_ctx)?;
    let attn = {
        let m = tb.matmul(ctx, nodes.get(&p("attn.wo")))?;
        tb.add_row(m, nodes.get(&p("attn.bo")))?
    };
    let res1 = tb.add(x, attn)?;
    let x_mid = tb.layer_norm(
        res1,
        nodes.get(&p("ln1.gamma")),
        nodes.get(&p("ln1.beta")),
        cfg.ln_eps,
    )?;

    let ffn = {
        let h1 = tb.matmul(x_mid, nodes.get(&p("ffn.w1")))?;
        let h1b = tb.add_row(h1, nodes.get(&p("ffn.b1")))?;
        let act = tb.gelu(h1b)?;
        let h2 = tb.matmul(act, nodes.get(&p("ffn.w2")))?;
        tb.add_row(h2, nodes.get(&p("ffn.b2")))?
    };
    let res2 = tb.add(x_mid, ffn)?;
    let out = tb.layer_norm(
        res2,
        nodes.get(&p("ln2.gamma")),
        nodes.get(&p("ln2.beta")),
        cfg.ln_eps,
    )?;
    Ok(out)
}

/// First-token pooling followed by the task head.
pub(crate) fn build_head(
    tb: &mut TapeBuilder,
    nodes: &ParamNodes,
    hidden_last: NodeId,
) -> Result<(NodeId, NodeId), EncoderError> {
    let pooled = tb.gather_rows(hidden_last, &[0])?;
    let logits = {
        let m = tb.matmul(pooled, nodes.get("head.w"))?;
        tb.add_row(m, nodes.get("head.b"))?
    };
    Ok((pooled, logits))
}

/// Layers `b..=L` from a bound layer-`b` input node, plus pooling and head.
pub(crate) fn build_layers_from(
    tb: &mut TapeBuilder,
    nodes: &ParamNodes,
    cfg: &EncoderConfig,
    input: NodeId,
    b: usize,
) -> Result<(Vec<NodeId>, NodeId, NodeId), EncoderError> {
    let mut layer_out = Vec::with_capacity(cfg.num_layers - b + 1);
    let mut x = input;
    for layer in b..=cfg.num_layers {
        x = build_layer(tb, nodes, cfg, x, layer)?;
        layer_out.push(x);
    }
    let (pooled, output) = build_head(tb, nodes, x)?;
    Ok((layer_out, pooled, output))
}

/// Full forward: embedding, all layers, pooling, head.
pub(crate) fn build_forward(
    tb: &mut TapeBuilder,
    nodes: &ParamNodes,
    cfg: &EncoderConfig,
    tokens: &[u32],
) -> Result<ForwardPlan, EncoderError> {
    let x1 = build_embedding(tb, nodes, cfg, tokens)?;
    let (layer_out, pooled, output) = build_layers_from(tb, nodes, cfg, x1, 1)?;
    Ok(ForwardPlan {
        embedded: Some(x1),
        layer_out,
        pooled,
        output,
    })
}

fn extract_trace(
    tb: &TapeBuilder,
    cfg: &EncoderConfig,
    plan: &ForwardPlan,
    start_layer: usize,
) -> LayerTrace {
    let pooled_flat = {
        let v = tb.value(plan.pooled);
        TensorValue::vector(v.data().to_vec())
    };
    let output = {
        let v = tb.value(plan.output);
        match cfg.head {
            HeadKind::Classification { .. } => TensorValue::vector(v.data().to_vec()),
            HeadKind::Regression => TensorValue::scalar(v.data()[0]),
        }
    };
    LayerTrace {
        start_layer,
        embedded: plan.embedded.map(|id| tb.value(id).clone()),
        layer_outputs: plan.layer_out.iter().map(|&id| tb.value(id).clone()).collect(),
        pooled: pooled_flat,
        output,
    }
}
