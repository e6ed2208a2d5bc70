//! Analytic parameter and compute accounting.

use super::{Architecture, ModelConfig};

/// Exact number of learned scalars, counting shared storage once.
pub fn count_params(cfg: &ModelConfig) -> u64 {
    let d = cfg.d_model as u64;
    let attn = 4 * d * cfg.inner_dim() as u64;
    let ffn = 2 * d * cfg.d_ff as u64;
    let adapter = cfg.adapter_dim.map_or(0, |a| 2 * d * a as u64);
    let layer = 2 * d + attn + ffn + adapter;
    let cross = d + attn;
    let l = cfg.num_layers as u64;
    let stack_extra = (cfg.num_heads * cfg.num_rel_buckets) as u64 + d;
    let embedding = cfg.vocab_size as u64 * d;
    let stack = l * layer + stack_extra;
    embedding
        + match cfg.architecture {
            Architecture::EncoderDecoder => 2 * stack + l * cross,
            Architecture::EncoderDecoderShared => stack + l * cross,
            Architecture::DecoderLm | Architecture::PrefixLm => stack,
        }
}

/// Multiply-accumulate count of every matrix product in one forward pass
/// over a stack of `len` tokens attending to itself.
fn self_stack_macs(cfg: &ModelConfig, len: u64) -> u64 {
    let d = cfg.d_model as u64;
    let inner = cfg.inner_dim() as u64;
    let adapter = cfg.adapter_dim.map_or(0, |a| 2 * d * a as u64);
    let per_layer = len * (4 * d * inner + 2 * d * cfg.d_ff as u64 + adapter) + 2 * len * len * inner;
    cfg.num_layers as u64 * per_layer
}

fn cross_macs(cfg: &ModelConfig, len: u64, mem: u64) -> u64 {
    let d = cfg.d_model as u64;
    let inner = cfg.inner_dim() as u64;
    cfg.num_layers as u64 * (2 * len * d * inner + 2 * mem * d * inner + 2 * len * mem * inner)
}

/// Forward-pass FLOPs (two per multiply-accumulate) of the matrix products,
/// including the output projection. Single-stack models process the
/// concatenation of input and target.
pub fn estimate_flops(cfg: &ModelConfig, input_len: usize, target_len: usize) -> u64 {
    let (n, t) = (input_len as u64, target_len as u64);
    let logits = |len: u64| len * cfg.d_model as u64 * cfg.vocab_size as u64;
    let macs = match cfg.architecture {
        Architecture::EncoderDecoder | Architecture::EncoderDecoderShared => {
            let decoder = if t == 0 {
                0
            } else {
                self_stack_macs(cfg, t) + cross_macs(cfg, t, n) + logits(t)
            };
            self_stack_macs(cfg, n) + decoder
        }
        Architecture::DecoderLm | Architecture::PrefixLm => self_stack_macs(cfg, n + t) + logits(n + t),
    };
    2 * macs
}
