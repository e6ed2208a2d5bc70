use std::rc::Rc;

use crate::corruption::CorruptionPair;
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Rng, Tensor, Var, RMS_NORM_EPS};
use crate::vocab::TokenId;

use super::mask::{MaskPattern, ModelBatch, StackInput};
use super::{Architecture, ModelConfig};

#[derive(Clone, Debug)]
struct Attention {
    q: ParamId,
    k: ParamId,
    v: ParamId,
    o: ParamId,
}

impl Attention {
    fn ids(&self) -> [ParamId; 4] {
        [self.q, self.k, self.v, self.o]
    }
}

#[derive(Clone, Debug)]
struct Layer {
    norm_self: ParamId,
    self_attn: Attention,
    cross: Option<(ParamId, Attention)>,
    norm_ffn: ParamId,
    wi: ParamId,
    wo: ParamId,
    adapter: Option<(ParamId, ParamId)>,
}

impl Layer {
    fn ids(&self) -> Vec<ParamId> {
        let mut out = vec![self.norm_self];
        out.extend(self.self_attn.ids());
        if let Some((n, a)) = &self.cross {
            out.push(*n);
            out.extend(a.ids());
        }
        out.extend([self.norm_ffn, self.wi, self.wo]);
        if let Some((d, u)) = self.adapter {
            out.extend([d, u]);
        }
        out
    }

    fn norms(&self) -> Vec<ParamId> {
        let mut out = vec![self.norm_self, self.norm_ffn];
        out.extend(self.cross.as_ref().map(|(n, _)| *n));
        out
    }
}

#[derive(Clone, Debug)]
struct Stack {
    layers: Vec<Layer>,
    rel_bias: ParamId,
    final_norm: ParamId,
    bidirectional: bool,
}

impl Stack {
    fn ids(&self) -> Vec<ParamId> {
        let mut out: Vec<ParamId> = self.layers.iter().flat_map(Layer::ids).collect();
        out.extend([self.rel_bias, self.final_norm]);
        out
    }
}

/// Which stack of the model a layer belongs to. Single-stack models only
/// have a decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StackKind {
    Encoder,
    Decoder,
}

/// The Transformer in any of the four layouts, owning its parameters.
#[derive(Clone, Debug)]
pub struct Transformer {
    cfg: ModelConfig,
    store: ParamStore,
    embedding: ParamId,
    encoder: Option<Stack>,
    decoder: Stack,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut Rng,
}

impl Init<'_> {
    fn normal(&mut self, name: String, shape: &[usize], std: f64) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.normal() * std).collect();
        self.store.add(name, Tensor::new(shape.to_vec(), data)?)
    }

    fn fill(&mut self, name: String, shape: &[usize], value: f64) -> Result<ParamId> {
        self.store.add(name, Tensor::full(shape, value))
    }

    fn attention(&mut self, cfg: &ModelConfig, prefix: &str) -> Result<Attention> {
        let (d, inner) = (cfg.d_model, cfg.inner_dim());
        let std = 1.0 / (d as f64).sqrt();
        // folding 1/sqrt(d_kv) into the query init keeps unscaled logits tame
        let q_std = if cfg.scale_attention { std } else { std / (cfg.d_kv as f64).sqrt() };
        Ok(Attention {
            q: self.normal(format!("{prefix}/q"), &[d, inner], q_std)?,
            k: self.normal(format!("{prefix}/k"), &[d, inner], std)?,
            v: self.normal(format!("{prefix}/v"), &[d, inner], std)?,
            o: self.normal(format!("{prefix}/o"), &[inner, d], 1.0 / (inner as f64).sqrt())?,
        })
    }

    fn layer(&mut self, cfg: &ModelConfig, prefix: &str, cross: bool) -> Result<Layer> {
        let d = cfg.d_model;
        let norm_self = self.fill(format!("{prefix}/self_attn_norm"), &[d], 1.0)?;
        let self_attn = self.attention(cfg, &format!("{prefix}/self_attn"))?;
        let cross = if cross { Some(self.cross(cfg, prefix)?) } else { None };
        self.ffn(cfg, prefix, norm_self, self_attn, cross)
    }

    fn cross(&mut self, cfg: &ModelConfig, prefix: &str) -> Result<(ParamId, Attention)> {
        let n = self.fill(format!("{prefix}/cross_attn_norm"), &[cfg.d_model], 1.0)?;
        Ok((n, self.attention(cfg, &format!("{prefix}/cross_attn"))?))
    }

    fn ffn(
        &mut self,
        cfg: &ModelConfig,
        prefix: &str,
        norm_self: ParamId,
        self_attn: Attention,
        cross: Option<(ParamId, Attention)>,
    ) -> Result<Layer> {
        let (d, f) = (cfg.d_model, cfg.d_ff);
        let out_std = 1.0 / (f as f64).sqrt() / (cfg.num_layers.max(1) as f64).sqrt();
        Ok(Layer {
            norm_self,
            self_attn,
            cross,
            norm_ffn: self.fill(format!("{prefix}/ffn_norm"), &[d], 1.0)?,
            wi: self.normal(format!("{prefix}/ffn/wi"), &[d, f], 1.0 / (d as f64).sqrt())?,
            wo: self.normal(format!("{prefix}/ffn/wo"), &[f, d], out_std)?,
            adapter: None,
        })
    }

    fn stack(&mut self, cfg: &ModelConfig, name: &str, cross: bool, bidirectional: bool) -> Result<Stack> {
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for i in 0..cfg.num_layers {
            layers.push(self.layer(cfg, &format!("{name}/layer_{i}"), cross)?);
        }
        Ok(Stack {
            layers,
            rel_bias: self.fill(format!("{name}/rel_bias"), &[cfg.num_heads, cfg.num_rel_buckets], 0.0)?,
            final_norm: self.fill(format!("{name}/final_norm"), &[cfg.d_model], 1.0)?,
            bidirectional,
        })
    }
}

impl Transformer {
    /// Freshly initialized model. Embeddings and projections draw from
    /// normal distributions scaled by fan-in, relative biases start at zero
    /// and norm gains at one.
    pub fn new(cfg: ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init { store: &mut store, rng };
        let embedding = init.normal(
            "shared/embedding".into(),
            &[cfg.vocab_size, cfg.d_model],
            1.0 / (cfg.d_model as f64).sqrt(),
        )?;
        let (encoder, decoder) = match cfg.architecture {
            Architecture::EncoderDecoder => {
                let enc = init.stack(&cfg, "encoder", false, true)?;
                let dec = init.stack(&cfg, "decoder", true, false)?;
                (Some(enc), dec)
            }
            Architecture::EncoderDecoderShared => {
                let enc = init.stack(&cfg, "encoder", false, true)?;
                let mut dec = enc.clone();
                for (i, layer) in dec.layers.iter_mut().enumerate() {
                    layer.cross = Some(init.cross(&cfg, &format!("decoder/layer_{i}"))?);
                }
                (Some(enc), dec)
            }
            Architecture::DecoderLm | Architecture::PrefixLm => {
                let bidirectional = cfg.architecture == Architecture::PrefixLm;
                (None, init.stack(&cfg, "decoder", false, bidirectional)?)
            }
        };
        let mut model = Transformer {
            cfg: cfg.clone(),
            store,
            embedding,
            encoder,
            decoder,
        };
        if let Some(dim) = cfg.adapter_dim {
            model.cfg.adapter_dim = None;
            model.insert_adapters(dim, rng)?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn embedding_id(&self) -> ParamId {
        self.embedding
    }

    /// Adds an adapter block after every feed-forward sub-layer. The second
    /// projection starts at zero so outputs are unchanged. Layers shared
    /// between stacks share their adapter.
    pub fn insert_adapters(&mut self, dim: usize, rng: &mut Rng) -> Result<()> {
        if dim == 0 {
            return Err(Error::Config("adapter dimension must be positive".into()));
        }
        if self.cfg.adapter_dim.is_some() {
            return Err(Error::Config("adapters already inserted".into()));
        }
        let d = self.cfg.d_model;
        let shared = self.cfg.architecture == Architecture::EncoderDecoderShared;
        let mut init = Init { store: &mut self.store, rng };
        let mut stacks: Vec<(&str, &mut Stack)> = Vec::new();
        if let Some(enc) = self.encoder.as_mut() {
            stacks.push(("encoder", enc));
        }
        stacks.push(("decoder", &mut self.decoder));
        let mut made: Vec<(ParamId, ParamId)> = Vec::new();
        for (si, (name, stack)) in stacks.into_iter().enumerate() {
            for (i, layer) in stack.layers.iter_mut().enumerate() {
                if shared && si == 1 {
                    layer.adapter = Some(made[i]);
                    continue;
                }
                let down = init.normal(format!("{name}/layer_{i}/adapter/down"), &[d, dim], 1.0 / (d as f64).sqrt())?;
                let up = init.fill(format!("{name}/layer_{i}/adapter/up"), &[dim, d], 0.0)?;
                layer.adapter = Some((down, up));
                made.push((down, up));
            }
        }
        self.cfg.adapter_dim = Some(dim);
        Ok(())
    }

    fn stack(&self, kind: StackKind) -> Option<&Stack> {
        match kind {
            StackKind::Encoder => self.encoder.as_ref(),
            StackKind::Decoder => Some(&self.decoder),
        }
    }

    /// Distinct parameters used by a stack.
    pub fn stack_params(&self, kind: StackKind) -> Vec<ParamId> {
        self.stack(kind).map(Stack::ids).unwrap_or_default()
    }

    /// Parameters of layer `layer` (0 = bottom) of a stack.
    pub fn layer_params(&self, kind: StackKind, layer: usize) -> Vec<ParamId> {
        self.stack(kind)
            .and_then(|s| s.layers.get(layer))
            .map(Layer::ids)
            .unwrap_or_default()
    }

    /// Embedding, relative bias tables and final norms.
    pub fn non_layer_params(&self) -> Vec<ParamId> {
        let mut out = vec![self.embedding];
        for s in self.encoder.iter().chain(std::iter::once(&self.decoder)) {
            out.extend([s.rel_bias, s.final_norm]);
        }
        dedup(out)
    }

    /// Every norm gain, including final norms.
    pub fn norm_params(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        for s in self.encoder.iter().chain(std::iter::once(&self.decoder)) {
            out.extend(s.layers.iter().flat_map(Layer::norms));
            out.push(s.final_norm);
        }
        dedup(out)
    }

    pub fn adapter_params(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        for s in self.encoder.iter().chain(std::iter::once(&self.decoder)) {
            for l in &s.layers {
                if let Some((d, u)) = l.adapter {
                    out.extend([d, u]);
                }
            }
        }
        dedup(out)
    }

    /// Restricts training to adapters and norm gains.
    pub fn freeze_for_adapters(&mut self) {
        self.store.set_all_trainable(false);
        for id in self.adapter_params().into_iter().chain(self.norm_params()) {
            self.store.set_trainable(id, true);
        }
    }

    /// Logits `[rows * decoder.len, vocab]` for a batch.
    pub fn forward(&self, g: &mut Graph, batch: &ModelBatch, rng: &mut Rng, training: bool) -> Result<Var> {
        let mut f = Fwd {
            g,
            store: &self.store,
            cfg: &self.cfg,
            rng,
            training,
        };
        let memory = match (&self.encoder, &batch.encoder) {
            (Some(stack), Some(input)) => Some((f.stack(stack, self.embedding, input, None)?, input)),
            (Some(_), None) => return Err(Error::Config("encoder-decoder model needs encoder input".into())),
            (None, Some(_)) => return Err(Error::Config("single-stack model given encoder input".into())),
            (None, None) => None,
        };
        let hidden = f.stack(&self.decoder, self.embedding, &batch.decoder, memory)?;
        let emb = f.g.param(f.store, self.embedding);
        f.g.matmul_t(hidden, emb)
    }

    /// Mean token cross-entropy over labelled positions.
    pub fn loss(&self, g: &mut Graph, batch: &ModelBatch, rng: &mut Rng, training: bool) -> Result<Var> {
        let logits = self.forward(g, batch, rng, training)?;
        g.cross_entropy(logits, &batch.labels)
    }

    /// Final encoder states `[len, d_model]` for one sequence.
    pub fn encoder_forward(&self, ids: &[TokenId], rng: &mut Rng, training: bool) -> Result<Tensor> {
        let stack = self
            .encoder
            .as_ref()
            .ok_or_else(|| Error::Config("model has no encoder".into()))?;
        let mut g = if training { Graph::new() } else { Graph::inference() };
        let input = StackInput::single(ids, MaskPattern::FullyVisible)?;
        let mut f = Fwd {
            g: &mut g,
            store: &self.store,
            cfg: &self.cfg,
            rng,
            training,
        };
        let out = f.stack(stack, self.embedding, &input, None)?;
        Ok(g.value(out).clone())
    }

    /// Logits `[len, vocab]` for one decoder sequence, attending to
    /// `encoder_out` when the model has an encoder.
    pub fn decoder_forward(
        &self,
        ids: &[TokenId],
        encoder_out: Option<&Tensor>,
        pattern: MaskPattern,
        rng: &mut Rng,
        training: bool,
    ) -> Result<Tensor> {
        if self.encoder.is_some() != encoder_out.is_some() {
            return Err(Error::Config(if self.encoder.is_some() {
                "encoder-decoder model needs encoder output".into()
            } else {
                "single-stack model given encoder output".into()
            }));
        }
        let mut g = if training { Graph::new() } else { Graph::inference() };
        let input = StackInput::single(ids, pattern)?;
        let memory_input;
        let mut f = Fwd {
            g: &mut g,
            store: &self.store,
            cfg: &self.cfg,
            rng,
            training,
        };
        let memory = match encoder_out {
            Some(t) => {
                if t.rank() != 2 || t.shape()[1] != self.cfg.d_model {
                    return Err(Error::dims("decoder_forward", t.shape(), &[0, self.cfg.d_model]));
                }
                memory_input = StackInput::single(&vec![0; t.shape()[0]], MaskPattern::FullyVisible)?;
                Some((f.g.constant(t.clone()), &memory_input))
            }
            None => None,
        };
        let hidden = f.stack(&self.decoder, self.embedding, &input, memory)?;
        let emb = f.g.param(f.store, self.embedding);
        let logits = f.g.matmul_t(hidden, emb)?;
        Ok(g.value(logits).clone())
    }

    /// Next-token logits after each prefix, given the same input. Runs a
    /// full forward pass in evaluation mode.
    pub fn next_token_logits(&self, input: &[TokenId], prefixes: &[Vec<TokenId>]) -> Result<Vec<Vec<f64>>> {
        let pairs: Vec<CorruptionPair> = prefixes
            .iter()
            .map(|p| CorruptionPair {
                input: input.to_vec(),
                target: p.iter().copied().chain([self.cfg.start_id]).collect(),
            })
            .collect();
        let rows: Vec<Vec<&CorruptionPair>> = pairs.iter().map(|p| vec![p]).collect();
        let batch = ModelBatch::from_rows(&self.cfg, &rows);
        let mut g = Graph::inference();
        let mut rng = Rng::new(0, 0);
        let logits = self.forward(&mut g, &batch, &mut rng, false)?;
        let v = self.cfg.vocab_size;
        let data = g.value(logits).data();
        let len = batch.decoder.len;
        Ok((0..prefixes.len())
            .map(|r| {
                let last = (0..len).rev().find(|i| batch.decoder.segments[r * len + i] != 0).unwrap_or(0);
                data[(r * len + last) * v..(r * len + last + 1) * v].to_vec()
            })
            .collect())
    }

    /// Copies every parameter value from `other`, which must share this
    /// model's layout.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.store.len() {
            return Err(Error::Parameter(format!(
                "parameter count mismatch: {} vs {}",
                other.len(),
                self.store.len()
            )));
        }
        let ids: Vec<ParamId> = self.store.ids().collect();
        for id in ids {
            let name = self.store.name(id).to_string();
            let src = other
                .id(&name)
                .ok_or_else(|| Error::Parameter(format!("missing parameter {name}")))?;
            let value = other.value(src);
            if value.shape() != self.store.value(id).shape() {
                return Err(Error::dims("load", value.shape(), self.store.value(id).shape()));
            }
            *self.store.value_mut(id) = value.clone();
        }
        Ok(())
    }
}

/// Multi-head dot-product attention on already projected `[.., len, d_kv]`
/// queries, keys and values: logits (optionally scaled) plus bias, masked
/// softmax, optional dropout on the weights, weighted sum of values.
#[allow(clippy::too_many_arguments)]
pub fn attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    mask: Rc<Vec<bool>>,
    bias: Option<Var>,
    scale: Option<f64>,
    dropout: Option<(f64, &mut Rng)>,
) -> Result<Var> {
    let mut scores = g.matmul_t(q, k)?;
    if let Some(c) = scale {
        scores = g.scale(scores, c);
    }
    if let Some(b) = bias {
        scores = g.add(scores, b)?;
    }
    let mut weights = g.masked_softmax(scores, mask)?;
    if let Some((rate, rng)) = dropout {
        weights = g.dropout(weights, rate, rng, true)?;
    }
    g.matmul(weights, v)
}

fn dedup(mut ids: Vec<ParamId>) -> Vec<ParamId> {
    ids.sort();
    ids.dedup();
    ids
}

struct Fwd<'a> {
    g: &'a mut Graph,
    store: &'a ParamStore,
    cfg: &'a ModelConfig,
    rng: &'a mut Rng,
    training: bool,
}

impl Fwd<'_> {
    fn p(&mut self, id: ParamId) -> Var {
        self.g.param(self.store, id)
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        self.g.dropout(x, self.cfg.dropout_rate, self.rng, self.training)
    }

    fn norm(&mut self, x: Var, gain: ParamId) -> Result<Var> {
        let w = self.p(gain);
        self.g.rms_norm(x, w, RMS_NORM_EPS)
    }

    /// `[rows * len, heads * d_kv]` to `[rows * heads, len, d_kv]`.
    fn split_heads(&mut self, x: Var, rows: usize, len: usize) -> Result<Var> {
        let (h, dk) = (self.cfg.num_heads, self.cfg.d_kv);
        let x = self.g.reshape(x, &[rows, len, h, dk])?;
        let x = self.g.permute(x, &[0, 2, 1, 3])?;
        self.g.reshape(x, &[rows * h, len, dk])
    }

    fn merge_heads(&mut self, x: Var, rows: usize, len: usize) -> Result<Var> {
        let (h, dk) = (self.cfg.num_heads, self.cfg.d_kv);
        let x = self.g.reshape(x, &[rows, h, len, dk])?;
        let x = self.g.permute(x, &[0, 2, 1, 3])?;
        self.g.reshape(x, &[rows * len, h * dk])
    }

    #[allow(clippy::too_many_arguments)]
    fn attention(
        &mut self,
        x: Var,
        memory: Var,
        rows: usize,
        len: usize,
        mem_len: usize,
        attn: &Attention,
        bias: Option<Var>,
        mask: Rc<Vec<bool>>,
    ) -> Result<Var> {
        let (wq, wk, wv, wo) = (self.p(attn.q), self.p(attn.k), self.p(attn.v), self.p(attn.o));
        let q = self.g.matmul(x, wq)?;
        let k = self.g.matmul(memory, wk)?;
        let v = self.g.matmul(memory, wv)?;
        let q = self.split_heads(q, rows, len)?;
        let k = self.split_heads(k, rows, mem_len)?;
        let v = self.split_heads(v, rows, mem_len)?;
        let scale = self.cfg.scale_attention.then(|| 1.0 / (self.cfg.d_kv as f64).sqrt());
        let dropout = (self.training && self.cfg.dropout_rate > 0.0).then_some((self.cfg.dropout_rate, &mut *self.rng));
        let ctx = attention(self.g, q, k, v, mask, bias, scale, dropout)?;
        let ctx = self.merge_heads(ctx, rows, len)?;
        self.g.matmul(ctx, wo)
    }

    fn stack(
        &mut self,
        stack: &Stack,
        embedding: ParamId,
        input: &StackInput,
        memory: Option<(Var, &StackInput)>,
    ) -> Result<Var> {
        let (rows, len) = (input.rows, input.len);
        let ids: Vec<usize> = input.tokens.iter().map(|t| *t as usize).collect();
        let emb = self.p(embedding);
        let mut x = self.g.gather(emb, &ids)?;
        x = self.dropout(x)?;
        let self_mask = Rc::new(input.self_mask());
        let buckets = Rc::new(input.buckets(stack.bidirectional, self.cfg.num_rel_buckets, self.cfg.rel_max_distance));
        let table = self.p(stack.rel_bias);
        let bias = if len > 0 {
            Some(self.g.relative_bias(table, buckets, len, len)?)
        } else {
            None
        };
        let cross_mask = memory.map(|(_, m)| Rc::new(input.cross_mask(m)));
        for layer in &stack.layers {
            let h = self.norm(x, layer.norm_self)?;
            let a = self.attention(h, h, rows, len, len, &layer.self_attn, bias, self_mask.clone())?;
            let a = self.dropout(a)?;
            x = self.g.add(x, a)?;
            if let (Some((norm, attn)), Some((mem, mem_input)), Some(mask)) = (&layer.cross, memory, &cross_mask) {
                let h = self.norm(x, *norm)?;
                let a = self.attention(h, mem, rows, len, mem_input.len, attn, None, mask.clone())?;
                let a = self.dropout(a)?;
                x = self.g.add(x, a)?;
            }
            let h = self.norm(x, layer.norm_ffn)?;
            let (wi, wo) = (self.p(layer.wi), self.p(layer.wo));
            let u = self.g.matmul(h, wi)?;
            let u = self.g.relu(u);
            let u = self.dropout(u)?;
            let mut y = self.g.matmul(u, wo)?;
            if let Some((down, up)) = layer.adapter {
                let (down, up) = (self.p(down), self.p(up));
                let a = self.g.matmul(y, down)?;
                let a = self.g.relu(a);
                let a = self.g.matmul(a, up)?;
                y = self.g.add(y, a)?;
            }
            let y = self.dropout(y)?;
            x = self.g.add(x, y)?;
        }
        let x = self.norm(x, stack.final_norm)?;
        self.dropout(x)
    }
}
