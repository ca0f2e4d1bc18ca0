//! Phone augmented transformer (PAT).
//!
//! Two encoders (sub-word text and phonemes) feed a decoder whose layers run
//! causal self-attention, cross-attention over the text encoder output, then
//! cross-attention over the phoneme encoder output, then a feed-forward
//! block — pre-norm residuals throughout, with a final layer norm per stack.
//! The final decoder states project to vocabulary logits and double as the
//! raw material for datastore keys.

#[cfg(test)]
mod tests;
mod train;

pub use train::{evaluate_model, EpochStats, StepStats, TrainItem, TrainOptions, Trainer};

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};
use crate::graph::{causal_mask, padding_mask, Graph, NodeRef};
use crate::tensor::{Scalar, Tensor, TensorError};
use crate::tokenizer::{BOS_ID, EOS_ID, PAD_ID};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("decoder prefix must be non-empty and start with BOS")]
    BadPrefix,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint missing parameter {0}")]
    MissingParam(String),
    #[error("checkpoint has unexpected parameter {0}")]
    UnexpectedParam(String),
    #[error("parameter {name}: model shape {model:?} vs checkpoint shape {file:?}")]
    ParamShape {
        name: String,
        model: Vec<usize>,
        file: Vec<usize>,
    },
    #[error("non-finite loss at step {step} (lr {lr:.3e}); aborting training")]
    NonFiniteLoss { step: usize, lr: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatConfig {
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    /// Model width; also the datastore key dimension.
    pub d_k: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub text_vocab: usize,
    pub phone_vocab: usize,
    pub dropout_rate: f64,
    /// Probability of replacing a source token with UNK during training.
    pub input_dropout_rate: f64,
    /// Probability of swapping the (noisy) source text for the clean
    /// reference during training.
    pub clean_swap_prob: f64,
    /// Attention temperature T; scores are divided by `T * sqrt(d_head)`.
    pub attn_temperature: f64,
    pub max_len: usize,
    pub label_smoothing: f64,
}

impl PatConfig {
    /// Small configuration that trains in minutes on one CPU core.
    pub fn desk(text_vocab: usize, phone_vocab: usize) -> Self {
        PatConfig {
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_k: 64,
            n_heads: 4,
            d_ff: 256,
            text_vocab,
            phone_vocab,
            dropout_rate: 0.1,
            input_dropout_rate: 0.1,
            clean_swap_prob: 0.3,
            attn_temperature: 1.0,
            max_len: 128,
            label_smoothing: 0.0,
        }
    }

    /// Full-size configuration: 4-layer encoders and decoder, width 128,
    /// 8 heads, feed-forward 512.
    pub fn paper(text_vocab: usize, phone_vocab: usize) -> Self {
        PatConfig {
            n_enc_layers: 4,
            n_dec_layers: 4,
            d_k: 128,
            n_heads: 8,
            d_ff: 512,
            text_vocab,
            phone_vocab,
            dropout_rate: 0.1,
            input_dropout_rate: 0.1,
            clean_swap_prob: 0.3,
            attn_temperature: 1.0,
            max_len: 256,
            label_smoothing: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_k == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return Err(ModelError::BadConfig("dimensions must be positive".into()));
        }
        if self.d_k % self.n_heads != 0 {
            return Err(ModelError::BadConfig(format!(
                "d_k {} not divisible by n_heads {}",
                self.d_k, self.n_heads
            )));
        }
        if self.n_enc_layers == 0 || self.n_dec_layers == 0 {
            return Err(ModelError::BadConfig("need at least one layer".into()));
        }
        if self.text_vocab <= 4 || self.phone_vocab <= 4 {
            return Err(ModelError::BadConfig("vocab too small".into()));
        }
        if self.attn_temperature <= 0.0 {
            return Err(ModelError::BadConfig("attention temperature must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ParamId(usize);

pub(crate) struct ParamSet<S: Scalar> {
    names: Vec<String>,
    values: Vec<Arc<Tensor<S>>>,
}

impl<S: Scalar> ParamSet<S> {
    fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    fn add(&mut self, name: String, t: Tensor<S>) -> ParamId {
        self.names.push(name);
        self.values.push(Arc::new(t));
        ParamId(self.values.len() - 1)
    }

    fn bind(&self, g: &mut Graph<S>, requires_grad: bool) -> Vec<NodeRef> {
        self.values
            .iter()
            .map(|v| g.shared_leaf(v, requires_grad))
            .collect()
    }

    pub(crate) fn len(&self) -> usize {
        self.values.len()
    }

    fn get(&self, id: ParamId) -> &Arc<Tensor<S>> {
        &self.values[id.0]
    }

    pub(crate) fn value_mut(&mut self, i: usize) -> &mut Tensor<S> {
        Arc::make_mut(&mut self.values[i])
    }


    pub fn named(&self) -> Vec<(String, Tensor<S>)> {
        self.names
            .iter()
            .cloned()
            .zip(self.values.iter().map(|v| (**v).clone()))
            .collect()
    }

    pub fn cloned_values(&self) -> Vec<Tensor<S>> {
        self.values.iter().map(|v| (**v).clone()).collect()
    }
}

struct NormParams {
    gain: ParamId,
    bias: ParamId,
}

struct AttnParams {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

struct FfnParams {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

struct EncLayerParams {
    norm1: NormParams,
    attn: AttnParams,
    norm2: NormParams,
    ffn: FfnParams,
}

struct DecLayerParams {
    norm1: NormParams,
    self_attn: AttnParams,
    norm2: NormParams,
    cross_text: AttnParams,
    norm3: NormParams,
    cross_phone: AttnParams,
    norm4: NormParams,
    ffn: FfnParams,
}

struct PatLayout {
    text_embed: ParamId,
    phone_embed: ParamId,
    text_enc: Vec<EncLayerParams>,
    text_enc_norm: NormParams,
    phone_enc: Vec<EncLayerParams>,
    phone_enc_norm: NormParams,
    dec: Vec<DecLayerParams>,
    dec_norm: NormParams,
    out_w: ParamId,
    out_b: ParamId,
}

/// Encoder output: hidden states (including BOS/EOS rows) plus a per-row
/// flag marking padded key positions that must never be attended to.
#[derive(Debug, Clone)]
pub struct EncoderOutput<S> {
    pub hidden: Tensor<S>,
    pub key_pad: Vec<bool>,
}

/// Per-item training inputs after source-side augmentation: text encoder
/// ids, phone encoder ids, and target ids (all without BOS/EOS wrappers).
#[derive(Debug, Clone)]
pub struct PreparedItem {
    pub text: Vec<u32>,
    pub phones: Vec<u32>,
    pub target: Vec<u32>,
}

pub(crate) struct BatchForward {
    pub loss: NodeRef,
    /// (logits node, padded target row ids) per item, for accuracy metrics.
    pub per_item: Vec<(NodeRef, Vec<u32>)>,
}

/// Dropout context during training forwards.
pub(crate) struct DropCtx<'r> {
    pub rng: &'r mut ChaCha8Rng,
    pub rate: f64,
}

pub struct PatModel<S: Scalar> {
    cfg: PatConfig,
    params: ParamSet<S>,
    layout: PatLayout,
}

impl<S: Scalar> PatModel<S> {
    pub fn new(cfg: PatConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let d = cfg.d_k;

        let text_embed = ps.add("text_embed".into(), Tensor::xavier_uniform(cfg.text_vocab, d, &mut rng));
        let phone_embed = ps.add("phone_embed".into(), Tensor::xavier_uniform(cfg.phone_vocab, d, &mut rng));

        let enc_stack = |ps: &mut ParamSet<S>, rng: &mut ChaCha8Rng, prefix: &str| {
            let layers = (0..cfg.n_enc_layers)
                .map(|i| EncLayerParams {
                    norm1: norm_params(ps, &format!("{prefix}.{i}.norm1"), d),
                    attn: attn_params(ps, &format!("{prefix}.{i}.attn"), d, rng),
                    norm2: norm_params(ps, &format!("{prefix}.{i}.norm2"), d),
                    ffn: ffn_params(ps, &format!("{prefix}.{i}.ffn"), d, cfg.d_ff, rng),
                })
                .collect::<Vec<_>>();
            let final_norm = norm_params(ps, &format!("{prefix}.norm"), d);
            (layers, final_norm)
        };
        let (text_enc, text_enc_norm) = enc_stack(&mut ps, &mut rng, "text_enc");
        let (phone_enc, phone_enc_norm) = enc_stack(&mut ps, &mut rng, "phone_enc");

        let dec = (0..cfg.n_dec_layers)
            .map(|i| DecLayerParams {
                norm1: norm_params(&mut ps, &format!("dec.{i}.norm1"), d),
                self_attn: attn_params(&mut ps, &format!("dec.{i}.self_attn"), d, &mut rng),
                norm2: norm_params(&mut ps, &format!("dec.{i}.norm2"), d),
                cross_text: attn_params(&mut ps, &format!("dec.{i}.cross_text"), d, &mut rng),
                norm3: norm_params(&mut ps, &format!("dec.{i}.norm3"), d),
                cross_phone: attn_params(&mut ps, &format!("dec.{i}.cross_phone"), d, &mut rng),
                norm4: norm_params(&mut ps, &format!("dec.{i}.norm4"), d),
                ffn: ffn_params(&mut ps, &format!("dec.{i}.ffn"), d, cfg.d_ff, &mut rng),
            })
            .collect::<Vec<_>>();
        let dec_norm = norm_params(&mut ps, "dec.norm", d);
        let out_w = ps.add("out.w".into(), Tensor::xavier_uniform(d, cfg.text_vocab, &mut rng));
        let out_b = ps.add("out.b".into(), Tensor::zeros(vec![cfg.text_vocab]));

        Ok(PatModel {
            cfg,
            params: ps,
            layout: PatLayout {
                text_embed,
                phone_embed,
                text_enc,
                text_enc_norm,
                phone_enc,
                phone_enc_norm,
                dec,
                dec_norm,
                out_w,
                out_b,
            },
        })
    }

    pub fn config(&self) -> &PatConfig {
        &self.cfg
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub(crate) fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }

    /// SHA-256 over the serialized parameters; identifies the key space a
    /// datastore was built in.
    pub fn checksum(&self) -> [u8; 32] {
        checkpoint::params_checksum(&self.params.named())
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        checkpoint::save_to_path(path, &self.params.named())?;
        let sidecar = sidecar_path(path);
        let json = serde_json::to_string_pretty(&self.cfg)
            .map_err(|e| ModelError::BadConfig(e.to_string()))?;
        std::fs::write(&sidecar, json).map_err(CheckpointError::Io)?;
        Ok(())
    }

    /// Load weights saved by [`PatModel::save`]; the config comes from the
    /// JSON sidecar next to the checkpoint.
    pub fn load(path: &Path) -> Result<PatModel<S>, ModelError> {
        let sidecar = sidecar_path(path);
        let json = std::fs::read_to_string(&sidecar).map_err(CheckpointError::Io)?;
        let cfg: PatConfig =
            serde_json::from_str(&json).map_err(|e| ModelError::BadConfig(e.to_string()))?;
        let mut model = PatModel::<S>::new(cfg, 0)?;
        let loaded = checkpoint::load_from_path(path)?;
        let mut by_name: std::collections::HashMap<String, Tensor<f32>> =
            loaded.into_iter().collect();
        for (i, name) in model.params.names.clone().iter().enumerate() {
            let t = by_name
                .remove(name)
                .ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            let dst = model.params.value_mut(i);
            if dst.shape() != t.shape() {
                return Err(ModelError::ParamShape {
                    name: name.clone(),
                    model: dst.shape().to_vec(),
                    file: t.shape().to_vec(),
                });
            }
            *dst = t.cast::<S>();
        }
        if let Some(extra) = by_name.into_keys().next() {
            return Err(ModelError::UnexpectedParam(extra));
        }
        Ok(model)
    }

    pub(crate) fn bind(&self, g: &mut Graph<S>, requires_grad: bool) -> Vec<NodeRef> {
        self.params.bind(g, requires_grad)
    }

    fn multi_head(
        &self,
        g: &mut Graph<S>,
        bound: &[NodeRef],
        p: &AttnParams,
        q_in: NodeRef,
        kv_in: NodeRef,
        mask: Option<NodeRef>,
    ) -> Result<NodeRef, TensorError> {
        let q = g.matmul(q_in, bound[p.wq.0])?;
        let k = g.matmul(kv_in, bound[p.wk.0])?;
        let v = g.matmul(kv_in, bound[p.wv.0])?;
        let d_head = self.cfg.d_k / self.cfg.n_heads;
        let mut heads = Vec::with_capacity(self.cfg.n_heads);
        for h in 0..self.cfg.n_heads {
            let qh = g.slice_cols(q, h * d_head, d_head)?;
            let kh = g.slice_cols(k, h * d_head, d_head)?;
            let vh = g.slice_cols(v, h * d_head, d_head)?;
            heads.push(g.attention(qh, kh, vh, mask, self.cfg.attn_temperature)?);
        }
        let cat = g.concat_cols(&heads)?;
        g.matmul(cat, bound[p.wo.0])
    }

    fn ffn(
        &self,
        g: &mut Graph<S>,
        bound: &[NodeRef],
        p: &FfnParams,
        x: NodeRef,
    ) -> Result<NodeRef, TensorError> {
        let h = g.matmul(x, bound[p.w1.0])?;
        let h = g.add_row(h, bound[p.b1.0])?;
        let h = g.relu(h)?;
        let h = g.matmul(h, bound[p.w2.0])?;
        g.add_row(h, bound[p.b2.0])
    }

    fn norm(
        &self,
        g: &mut Graph<S>,
        bound: &[NodeRef],
        p: &NormParams,
        x: NodeRef,
    ) -> Result<NodeRef, TensorError> {
        g.layer_norm(x, bound[p.gain.0], bound[p.bias.0])
    }

    fn maybe_drop(
        &self,
        g: &mut Graph<S>,
        x: NodeRef,
        drop: &mut Option<DropCtx<'_>>,
    ) -> Result<NodeRef, TensorError> {
        match drop {
            Some(ctx) => g.dropout(x, ctx.rate, ctx.rng),
            None => Ok(x),
        }
    }

    /// Embedding + sinusoidal positions, scaled by sqrt(d).
    fn embed_sequence(
        &self,
        g: &mut Graph<S>,
        bound: &[NodeRef],
        table: ParamId,
        ids: &[u32],
        drop: &mut Option<DropCtx<'_>>,
    ) -> Result<NodeRef, TensorError> {
        let x = g.embed(bound[table.0], ids)?;
        let x = g.scale(x, (self.cfg.d_k as f64).sqrt())?;
        let pos = g.leaf(sinusoidal_positions(ids.len(), self.cfg.d_k), false);
        let x = g.add(x, pos)?;
        self.maybe_drop(g, x, drop)
    }

    fn encoder_stack(
        &self,
        g: &mut Graph<S>,
        bound: &[NodeRef],
        layers: &[EncLayerParams],
        final_norm: &NormParams,
        table: ParamId,
        ids: &[u32],
        key_pad: &[bool],
        drop: &mut Option<DropCtx<'_>>,
    ) -> Result<NodeRef, TensorError> {
        let mut x = self.embed_sequence(g, bound, table, ids, drop)?;
        let mask = if key_pad.iter().any(|&p| p) {
            Some(g.leaf(padding_mask(ids.len(), key_pad), false))
        } else {
            None
        };
        for layer in layers {
            let normed = self.norm(g, bound, &layer.norm1, x)?;
            let attn = self.multi_head(g, bound, &layer.attn, normed, normed, mask)?;
            let attn = self.maybe_drop(g, attn, drop)?;
            x = g.add(x, attn)?;
            let normed = self.norm(g, bound, &layer.norm2, x)?;
            let ff = self.ffn(g, bound, &layer.ffn, normed)?;
            let ff = self.maybe_drop(g, ff, drop)?;
            x = g.add(x, ff)?;
        }
        self.norm(g, bound, final_norm, x)
    }

    pub(crate) fn encode_text_node(
        &self,
        g: &mut Graph<S>,
        bound: &[NodeRef],
        tokens: &[u32],
        drop: &mut Option<DropCtx<'_>>,
    ) -> Result<(NodeRef, Vec<bool>), ModelError> {
        let (ids, pad) = self.wrap_sequence(tokens)?;
        let h = self.encoder_stack(
            g,
            bound,
            &self.layout.text_enc,
            &self.layout.text_enc_norm,
            self.layout.text_embed,
            &ids,
            &pad,
            drop,
        )?;
        Ok((h, pad))
    }

    pub(crate) fn encode_phones_node(
        &self,
        g: &mut Graph<S>,
        bound: &[NodeRef],
        phones: &[u32],
        drop: &mut Option<DropCtx<'_>>,
    ) -> Result<(NodeRef, Vec<bool>), ModelError> {
        let (ids, pad) = self.wrap_sequence(phones)?;
        let h = self.encoder_stack(
            g,
            bound,
            &self.layout.phone_enc,
            &self.layout.phone_enc_norm,
            self.layout.phone_embed,
            &ids,
            &pad,
            drop,
        )?;
        Ok((h, pad))
    }

    /// BOS + core + EOS + trailing pads, with the key-padding flags.
    /// Over-length input is truncated with a warning.
    fn wrap_sequence(&self, tokens: &[u32]) -> Result<(Vec<u32>, Vec<bool>), ModelError> {
        let n_trail = tokens.iter().rev().take_while(|&&t| t == PAD_ID).count();
        let core = &tokens[..tokens.len() - n_trail];
        if core.contains(&PAD_ID) {
            return Err(ModelError::Tensor(TensorError::InvalidParameter {
                op: "wrap_sequence",
                message: "PAD tokens only allowed at the end of a sequence".into(),
            }));
        }
        let limit = self.cfg.max_len - 2;
        let core = if core.len() > limit {
            log::warn!("input of {} tokens truncated to {}", core.len(), limit);
            &core[..limit]
        } else {
            core
        };
        let mut ids = Vec::with_capacity(core.len() + 2 + n_trail);
        ids.push(BOS_ID);
        ids.extend_from_slice(core);
        ids.push(EOS_ID);
        ids.extend(std::iter::repeat(PAD_ID).take(n_trail));
        let mut pad = vec![false; core.len() + 2];
        pad.extend(std::iter::repeat(true).take(n_trail));
        Ok((ids, pad))
    }

    pub(crate) fn decoder_stack(
        &self,
        g: &mut Graph<S>,
        bound: &[NodeRef],
        prefix: &[u32],
        enc_text: NodeRef,
        text_pad: &[bool],
        enc_phones: NodeRef,
        phone_pad: &[bool],
        drop: &mut Option<DropCtx<'_>>,
    ) -> Result<(NodeRef, NodeRef), ModelError> {
        if prefix.is_empty() || prefix[0] != BOS_ID {
            return Err(ModelError::BadPrefix);
        }
        let prefix = if prefix.len() > self.cfg.max_len {
            log::warn!("decoder prefix truncated to {}", self.cfg.max_len);
            &prefix[..self.cfg.max_len]
        } else {
            prefix
        };
        let n = prefix.len();
        let mut x = self.embed_sequence(g, bound, self.layout.text_embed, prefix, drop)?;
        let self_mask = Some(g.leaf(causal_mask(n), false));
        let text_mask = if text_pad.iter().any(|&p| p) {
            Some(g.leaf(padding_mask(n, text_pad), false))
        } else {
            None
        };
        let phone_mask = if phone_pad.iter().any(|&p| p) {
            Some(g.leaf(padding_mask(n, phone_pad), false))
        } else {
            None
        };
        for layer in &self.layout.dec {
            let normed = self.norm(g, bound, &layer.norm1, x)?;
            let sa = self.multi_head(g, bound, &layer.self_attn, normed, normed, self_mask)?;
            let sa = self.maybe_drop(g, sa, drop)?;
            x = g.add(x, sa)?;

            let normed = self.norm(g, bound, &layer.norm2, x)?;
            let ca_t = self.multi_head(g, bound, &layer.cross_text, normed, enc_text, text_mask)?;
            let ca_t = self.maybe_drop(g, ca_t, drop)?;
            x = g.add(x, ca_t)?;

            let normed = self.norm(g, bound, &layer.norm3, x)?;
            let ca_p = self.multi_head(g, bound, &layer.cross_phone, normed, enc_phones, phone_mask)?;
            let ca_p = self.maybe_drop(g, ca_p, drop)?;
            x = g.add(x, ca_p)?;

            let normed = self.norm(g, bound, &layer.norm4, x)?;
            let ff = self.ffn(g, bound, &layer.ffn, normed)?;
            let ff = self.maybe_drop(g, ff, drop)?;
            x = g.add(x, ff)?;
        }
        let states = self.norm(g, bound, &self.layout.dec_norm, x)?;
        let logits = g.matmul(states, bound[self.layout.out_w.0])?;
        let logits = g.add_row(logits, bound[self.layout.out_b.0])?;
        Ok((states, logits))
    }

    /// Run the text encoder on raw token ids (no BOS/EOS; the model adds
    /// them). Trailing PAD tokens become masked positions.
    pub fn encode_text(&self, tokens: &[u32]) -> Result<EncoderOutput<S>, ModelError> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let (h, pad) = self.encode_text_node(&mut g, &bound, tokens, &mut None)?;
        Ok(EncoderOutput {
            hidden: g.value(h).clone(),
            key_pad: pad,
        })
    }

    pub fn encode_phones(&self, phones: &[u32]) -> Result<EncoderOutput<S>, ModelError> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let (h, pad) = self.encode_phones_node(&mut g, &bound, phones, &mut None)?;
        Ok(EncoderOutput {
            hidden: g.value(h).clone(),
            key_pad: pad,
        })
    }

    /// Teacher-forced decoder run over a prefix that starts with BOS.
    /// Returns the final decoder states (one row per prefix position) and
    /// the vocabulary logits.
    pub fn decode_states(
        &self,
        enc_text: &EncoderOutput<S>,
        enc_phones: &EncoderOutput<S>,
        prefix: &[u32],
    ) -> Result<(Tensor<S>, Tensor<S>), ModelError> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let t = g.leaf(enc_text.hidden.clone(), false);
        let p = g.leaf(enc_phones.hidden.clone(), false);
        let (states, logits) = self.decoder_stack(
            &mut g,
            &bound,
            prefix,
            t,
            &enc_text.key_pad,
            p,
            &enc_phones.key_pad,
            &mut None,
        )?;
        Ok((g.value(states).clone(), g.value(logits).clone()))
    }

    /// Logits for a single decoder state row, without building a graph.
    pub fn state_logits(&self, state_row: &[S]) -> Vec<S> {
        let w = self.params.get(self.layout.out_w);
        let b = self.params.get(self.layout.out_b);
        let v = self.cfg.text_vocab;
        let mut out: Vec<S> = b.data().to_vec();
        crate::tensor::matmul_acc(state_row, w.data(), &mut out, 1, self.cfg.d_k, v);
        out
    }

    /// Greedy decoding: argmax per step (ties to the lowest token id) until
    /// EOS or `max_len` generated tokens. Returns generated ids without
    /// BOS/EOS.
    pub fn greedy_decode(
        &self,
        asr_tokens: &[u32],
        phones: &[u32],
        max_len: usize,
    ) -> Result<Vec<u32>, ModelError> {
        let enc_t = self.encode_text(asr_tokens)?;
        let enc_p = self.encode_phones(phones)?;
        let mut out: Vec<u32> = Vec::new();
        let mut prefix = vec![BOS_ID];
        while out.len() < max_len {
            let (states, _) = self.decode_states(&enc_t, &enc_p, &prefix)?;
            let last = states.row(states.rows() - 1);
            let logits = self.state_logits(last);
            let next = argmax_lowest(&logits);
            if next == EOS_ID {
                break;
            }
            out.push(next);
            prefix.push(next);
        }
        Ok(out)
    }

    /// Teacher-forced batch loss over prepared items. Each item contributes
    /// its mean-token cross entropy; the batch loss is the mean over items.
    pub(crate) fn batch_loss(
        &self,
        g: &mut Graph<S>,
        bound: &[NodeRef],
        items: &[PreparedItem],
        mut drop: Option<DropCtx<'_>>,
    ) -> Result<BatchForward, ModelError> {
        if items.is_empty() {
            return Err(ModelError::Tensor(TensorError::EmptyInput { op: "batch_loss" }));
        }
        let mut per_item = Vec::with_capacity(items.len());
        let mut total: Option<NodeRef> = None;
        for item in items {
            let (enc_t, t_pad) = self.encode_text_node(g, bound, &item.text, &mut drop)?;
            let (enc_p, p_pad) = self.encode_phones_node(g, bound, &item.phones, &mut drop)?;
            let mut prefix = Vec::with_capacity(item.target.len() + 1);
            prefix.push(BOS_ID);
            prefix.extend_from_slice(&item.target);
            let mut targets = Vec::with_capacity(item.target.len() + 1);
            targets.extend_from_slice(&item.target);
            targets.push(EOS_ID);
            let (_, logits) =
                self.decoder_stack(g, bound, &prefix, enc_t, &t_pad, enc_p, &p_pad, &mut drop)?;
            let loss = g.cross_entropy(logits, &targets, PAD_ID, self.cfg.label_smoothing)?;
            per_item.push((logits, targets));
            total = Some(match total {
                None => loss,
                Some(acc) => g.add(acc, loss)?,
            });
        }
        let total = g.scale(total.unwrap(), 1.0 / items.len() as f64)?;
        Ok(BatchForward { loss: total, per_item })
    }
}

fn norm_params<S: Scalar>(ps: &mut ParamSet<S>, prefix: &str, d: usize) -> NormParams {
    NormParams {
        gain: ps.add(format!("{prefix}.gain"), Tensor::filled(vec![d], S::ONE)),
        bias: ps.add(format!("{prefix}.bias"), Tensor::zeros(vec![d])),
    }
}

fn attn_params<S: Scalar>(
    ps: &mut ParamSet<S>,
    prefix: &str,
    d: usize,
    rng: &mut ChaCha8Rng,
) -> AttnParams {
    AttnParams {
        wq: ps.add(format!("{prefix}.wq"), Tensor::xavier_uniform(d, d, rng)),
        wk: ps.add(format!("{prefix}.wk"), Tensor::xavier_uniform(d, d, rng)),
        wv: ps.add(format!("{prefix}.wv"), Tensor::xavier_uniform(d, d, rng)),
        wo: ps.add(format!("{prefix}.wo"), Tensor::xavier_uniform(d, d, rng)),
    }
}

fn ffn_params<S: Scalar>(
    ps: &mut ParamSet<S>,
    prefix: &str,
    d: usize,
    d_ff: usize,
    rng: &mut ChaCha8Rng,
) -> FfnParams {
    FfnParams {
        w1: ps.add(format!("{prefix}.w1"), Tensor::xavier_uniform(d, d_ff, rng)),
        b1: ps.add(format!("{prefix}.b1"), Tensor::zeros(vec![d_ff])),
        w2: ps.add(format!("{prefix}.w2"), Tensor::xavier_uniform(d_ff, d, rng)),
        b2: ps.add(format!("{prefix}.b2"), Tensor::zeros(vec![d])),
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    std::path::PathBuf::from(os)
}

/// Standard sinusoidal position encoding.
fn sinusoidal_positions<S: Scalar>(len: usize, d: usize) -> Tensor<S> {
    let mut t = Tensor::zeros(vec![len, d]);
    for pos in 0..len {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            t.data_mut()[pos * d + 2 * i] = S::from_f64(angle.sin());
            t.data_mut()[pos * d + 2 * i + 1] = S::from_f64(angle.cos());
        }
    }
    t
}

/// Index of the maximum value; ties resolve to the lowest index.
pub fn argmax_lowest<S: Scalar>(values: &[S]) -> u32 {
    let mut best = 0usize;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best as u32
}

/// Stable softmax over a logits row.
pub fn softmax_vec<S: Scalar>(logits: &[S]) -> Vec<S> {
    let mut out = logits.to_vec();
    crate::graph::softmax_in_place(&mut out);
    out
}
