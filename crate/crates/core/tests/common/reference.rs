//! Plain-loop forward pass used as an oracle for the model, counting every
//! multiply-accumulate of its matrix products.

use ttx::model::{Architecture, ModelConfig};
use ttx::numerics::{ParamStore, Tensor};
use ttx::vocab::TokenId;

use super::oracle_bucket;

type Mat = Vec<Vec<f64>>;

pub struct Reference<'a> {
    pub cfg: &'a ModelConfig,
    pub store: &'a ParamStore,
    pub macs: u64,
}

impl<'a> Reference<'a> {
    pub fn new(cfg: &'a ModelConfig, store: &'a ParamStore) -> Self {
        Reference { cfg, store, macs: 0 }
    }

    fn w(&self, name: &str) -> &'a Tensor {
        let id = self.store.id(name).unwrap_or_else(|| panic!("missing {name}"));
        self.store.value(id)
    }

    fn has(&self, name: &str) -> bool {
        self.store.id(name).is_some()
    }

    fn matmul(&mut self, a: &Mat, b: &Tensor) -> Mat {
        let (k, n) = (b.shape()[0], b.shape()[1]);
        let bd = b.data();
        a.iter()
            .map(|row| {
                assert_eq!(row.len(), k);
                (0..n)
                    .map(|j| {
                        let mut s = 0.0;
                        for p in 0..k {
                            s += row[p] * bd[p * n + j];
                            self.macs += 1;
                        }
                        s
                    })
                    .collect()
            })
            .collect()
    }

    fn rms(&self, x: &Mat, gain: &str) -> Mat {
        let g = self.w(gain).data();
        x.iter()
            .map(|row| {
                let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
                let inv = 1.0 / (ms + 1e-6).sqrt();
                row.iter().zip(g).map(|(v, w)| v * inv * w).collect()
            })
            .collect()
    }

    fn add(x: &mut Mat, y: &Mat) {
        for (a, b) in x.iter_mut().zip(y) {
            for (u, v) in a.iter_mut().zip(b) {
                *u += v;
            }
        }
    }

    fn attention(
        &mut self,
        x: &Mat,
        mem: &Mat,
        prefix: &str,
        bias: Option<(&str, bool)>,
        visible: &dyn Fn(usize, usize) -> bool,
    ) -> Mat {
        let (h, dk) = (self.cfg.num_heads, self.cfg.d_kv);
        let q = self.matmul(x, self.w(&format!("{prefix}/q")));
        let k = self.matmul(mem, self.w(&format!("{prefix}/k")));
        let v = self.matmul(mem, self.w(&format!("{prefix}/v")));
        let table = bias.map(|(name, bidir)| (self.w(name).data(), bidir));
        let nb = self.cfg.num_rel_buckets;
        let mut ctx = vec![vec![0.0; h * dk]; x.len()];
        for head in 0..h {
            for i in 0..x.len() {
                let mut logits = vec![f64::NEG_INFINITY; mem.len()];
                for j in 0..mem.len() {
                    let mut s = 0.0;
                    for d in 0..dk {
                        s += q[i][head * dk + d] * k[j][head * dk + d];
                        self.macs += 1;
                    }
                    if self.cfg.scale_attention {
                        s /= (dk as f64).sqrt();
                    }
                    if let Some((t, bidir)) = table {
                        let b = oracle_bucket(i as i64 - j as i64, bidir, nb, self.cfg.rel_max_distance);
                        s += t[head * nb + b];
                    }
                    if visible(i, j) {
                        logits[j] = s;
                    }
                }
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|l| if l.is_finite() { (l - max).exp() } else { 0.0 }).collect();
                let z: f64 = exps.iter().sum();
                for j in 0..mem.len() {
                    let w = exps[j] / z;
                    for d in 0..dk {
                        ctx[i][head * dk + d] += w * v[j][head * dk + d];
                        self.macs += 1;
                    }
                }
            }
        }
        self.matmul(&ctx, self.w(&format!("{prefix}/o")))
    }

    fn stack(
        &mut self,
        tokens: &[TokenId],
        names: &StackNames,
        memory: Option<&Mat>,
        visible: &dyn Fn(usize, usize) -> bool,
    ) -> Mat {
        let emb = self.w("shared/embedding");
        let d = self.cfg.d_model;
        let mut x: Mat = tokens
            .iter()
            .map(|t| emb.data()[*t as usize * d..(*t as usize + 1) * d].to_vec())
            .collect();
        for i in 0..self.cfg.num_layers {
            let own = format!("{}/layer_{i}", names.layers);
            let h = self.rms(&x, &format!("{own}/self_attn_norm"));
            let a = self.attention(&h, &h, &format!("{own}/self_attn"), Some((&names.bias, names.bidirectional)), visible);
            Self::add(&mut x, &a);
            if let Some(mem) = memory {
                let cross = format!("decoder/layer_{i}");
                let h = self.rms(&x, &format!("{cross}/cross_attn_norm"));
                let a = self.attention(&h, mem, &format!("{cross}/cross_attn"), None, &|_, _| true);
                Self::add(&mut x, &a);
            }
            let h = self.rms(&x, &format!("{own}/ffn_norm"));
            let u: Mat = self
                .matmul(&h, self.w(&format!("{own}/ffn/wi")))
                .into_iter()
                .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
                .collect();
            let mut y = self.matmul(&u, self.w(&format!("{own}/ffn/wo")));
            let down = format!("{own}/adapter/down");
            if self.has(&down) {
                let a: Mat = self
                    .matmul(&y, self.w(&down))
                    .into_iter()
                    .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
                    .collect();
                let a = self.matmul(&a, self.w(&format!("{own}/adapter/up")));
                Self::add(&mut y, &a);
            }
            Self::add(&mut x, &y);
        }
        self.rms(&x, &names.final_norm)
    }

    fn logits(&mut self, hidden: &Mat) -> Mat {
        let emb = self.w("shared/embedding");
        let (v, d) = (emb.shape()[0], emb.shape()[1]);
        hidden
            .iter()
            .map(|row| {
                (0..v)
                    .map(|t| {
                        let mut s = 0.0;
                        for p in 0..d {
                            s += row[p] * emb.data()[t * d + p];
                            self.macs += 1;
                        }
                        s
                    })
                    .collect()
            })
            .collect()
    }

    /// Logits `[target positions, vocab]` for one example laid out the way
    /// the model lays out training examples.
    pub fn forward(&mut self, input: &[TokenId], target: &[TokenId]) -> Mat {
        let start = self.cfg.start_id;
        let shared = self.cfg.architecture == Architecture::EncoderDecoderShared;
        let enc_names = StackNames::new("encoder", "encoder", true);
        match self.cfg.architecture {
            Architecture::EncoderDecoder | Architecture::EncoderDecoderShared => {
                let memory = self.stack(input, &enc_names, None, &|_, _| true);
                if target.is_empty() {
                    return Vec::new();
                }
                let mut dec: Vec<TokenId> = vec![start];
                dec.extend_from_slice(&target[..target.len() - 1]);
                let names = if shared { enc_names } else { StackNames::new("decoder", "decoder", false) };
                let h = self.stack(&dec, &names, Some(&memory), &|i, j| j <= i);
                self.logits(&h)
            }
            Architecture::DecoderLm | Architecture::PrefixLm => {
                let full: Vec<TokenId> = input.iter().chain(target).copied().collect();
                let mut dec: Vec<TokenId> = vec![start];
                dec.extend_from_slice(&full[..full.len() - 1]);
                let prefix = self.cfg.architecture == Architecture::PrefixLm;
                let visible_len = if prefix { input.len() + 1 } else { 0 };
                let names = StackNames::new("decoder", "decoder", prefix);
                let h = self.stack(&dec, &names, None, &|i, j| j < visible_len || j <= i);
                self.logits(&h)
            }
        }
    }
}

struct StackNames {
    layers: String,
    bias: String,
    final_norm: String,
    bidirectional: bool,
}

impl StackNames {
    fn new(layers: &str, stack: &str, bidirectional: bool) -> Self {
        StackNames {
            layers: layers.into(),
            bias: format!("{stack}/rel_bias"),
            final_norm: format!("{stack}/final_norm"),
            bidirectional,
        }
    }
}
