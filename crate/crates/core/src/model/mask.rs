//! Attention visibility and relative position buckets.

use crate::corruption::CorruptionPair;
use crate::error::{Error, Result};
use crate::vocab::TokenId;

use super::{Architecture, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskPattern {
    FullyVisible,
    Causal,
    CausalWithPrefix(usize),
}

/// Row-major `len × len` matrix; `true` at `[i * len + j]` lets `i` attend to `j`.
pub fn build_mask(pattern: MaskPattern, len: usize) -> Result<Vec<bool>> {
    if len == 0 {
        return Err(Error::Parameter("mask length must be positive".into()));
    }
    let prefix = match pattern {
        MaskPattern::FullyVisible => len,
        MaskPattern::Causal => 0,
        MaskPattern::CausalWithPrefix(p) if p > len => {
            return Err(Error::Parameter(format!("prefix {p} longer than sequence {len}")));
        }
        MaskPattern::CausalWithPrefix(p) => p,
    };
    Ok((0..len * len)
        .map(|at| {
            let (i, j) = (at / len, at % len);
            j < prefix || j <= i
        })
        .collect())
}

/// Bucket for the offset `query_pos - key_pos` (positive when the key lies
/// in the past).
///
/// In bidirectional mode half of the buckets serve keys in the future. Within
/// one direction, the first half of that direction's `n` buckets hold the
/// exact offsets `0..n/2`; offset `d` beyond that goes to
/// `n/2 + floor(log2(d / (n/2)) / log2(max_distance / (n/2)) * (n - n/2))`,
/// capped at the direction's last bucket. Unidirectional mode sends keys in
/// the future to bucket 0.
pub fn relative_bucket(offset: i64, bidirectional: bool, num_buckets: usize, max_distance: usize) -> usize {
    let mut n = num_buckets;
    let mut base = 0;
    let distance = if bidirectional {
        n /= 2;
        if offset < 0 {
            base = n;
        }
        offset.unsigned_abs() as usize
    } else {
        offset.max(0) as usize
    };
    let max_exact = (n / 2).max(1);
    if distance < max_exact {
        return base + distance;
    }
    if max_distance <= max_exact {
        return base + n - 1;
    }
    let ratio = (distance as f64 / max_exact as f64).log2() / (max_distance as f64 / max_exact as f64).log2();
    let large = max_exact + (ratio * (n - max_exact) as f64).floor() as usize;
    base + large.min(n - 1)
}

/// One stack's view of a batch: `rows × len` tokens with segment ids
/// (0 = padding), within-segment positions, and a flag for tokens every
/// position of their segment may see.
#[derive(Clone, Debug, PartialEq)]
pub struct StackInput {
    pub rows: usize,
    pub len: usize,
    pub tokens: Vec<TokenId>,
    pub segments: Vec<u32>,
    pub positions: Vec<usize>,
    pub visible: Vec<bool>,
}

impl StackInput {
    /// A single unpacked sequence under `pattern`.
    pub fn single(tokens: &[TokenId], pattern: MaskPattern) -> Result<Self> {
        let len = tokens.len();
        let prefix = match pattern {
            MaskPattern::FullyVisible => len,
            MaskPattern::Causal => 0,
            MaskPattern::CausalWithPrefix(p) if p > len => {
                return Err(Error::Parameter(format!("prefix {p} longer than sequence {len}")));
            }
            MaskPattern::CausalWithPrefix(p) => p,
        };
        Ok(StackInput {
            rows: 1,
            len,
            tokens: tokens.to_vec(),
            segments: vec![1; len],
            positions: (0..len).collect(),
            visible: (0..len).map(|i| i < prefix).collect(),
        })
    }

    /// `rows` copies of equal-length sequences, one segment each.
    pub fn batch(seqs: &[Vec<TokenId>], pattern: MaskPattern) -> Result<Self> {
        let mut rows: Vec<Vec<Segment>> = Vec::new();
        for s in seqs {
            let prefix = match pattern {
                MaskPattern::FullyVisible => s.len(),
                MaskPattern::Causal => 0,
                MaskPattern::CausalWithPrefix(p) => p.min(s.len()),
            };
            rows.push(vec![Segment {
                tokens: s.clone(),
                visible: prefix,
            }]);
        }
        Ok(Self::from_segments(&rows, 0))
    }

    fn from_segments(rows: &[Vec<Segment>], pad: TokenId) -> Self {
        let len = rows
            .iter()
            .map(|r| r.iter().map(|s| s.tokens.len()).sum::<usize>())
            .max()
            .unwrap_or(0);
        let n = rows.len() * len;
        let mut out = StackInput {
            rows: rows.len(),
            len,
            tokens: vec![pad; n],
            segments: vec![0; n],
            positions: vec![0; n],
            visible: vec![false; n],
        };
        for (r, row) in rows.iter().enumerate() {
            let mut at = r * len;
            for (s, seg) in row.iter().enumerate() {
                for (p, t) in seg.tokens.iter().enumerate() {
                    out.tokens[at] = *t;
                    out.segments[at] = s as u32 + 1;
                    out.positions[at] = p;
                    out.visible[at] = p < seg.visible;
                    at += 1;
                }
            }
        }
        out
    }

    pub fn num_tokens(&self) -> usize {
        self.segments.iter().filter(|s| **s != 0).count()
    }

    /// `[rows, len, len]` self-attention visibility.
    pub fn self_mask(&self) -> Vec<bool> {
        let l = self.len;
        let mut m = vec![false; self.rows * l * l];
        for r in 0..self.rows {
            for i in 0..l {
                let qi = r * l + i;
                if self.segments[qi] == 0 {
                    continue;
                }
                for j in 0..l {
                    let kj = r * l + j;
                    m[(r * l + i) * l + j] = self.segments[kj] == self.segments[qi] && (self.visible[kj] || j <= i);
                }
            }
        }
        m
    }

    /// `[rows, len, memory.len]` visibility of `memory` tokens in the same
    /// segment.
    pub fn cross_mask(&self, memory: &StackInput) -> Vec<bool> {
        let (l, s) = (self.len, memory.len);
        let mut m = vec![false; self.rows * l * s];
        for r in 0..self.rows {
            for i in 0..l {
                let seg = self.segments[r * l + i];
                if seg == 0 {
                    continue;
                }
                for j in 0..s {
                    m[(r * l + i) * s + j] = memory.segments[r * s + j] == seg;
                }
            }
        }
        m
    }

    /// `[rows, len, len]` relative position buckets from within-segment
    /// positions.
    pub fn buckets(&self, bidirectional: bool, num_buckets: usize, max_distance: usize) -> Vec<usize> {
        let l = self.len;
        let mut out = Vec::with_capacity(self.rows * l * l);
        for r in 0..self.rows {
            for i in 0..l {
                for j in 0..l {
                    let offset = self.positions[r * l + i] as i64 - self.positions[r * l + j] as i64;
                    out.push(relative_bucket(offset, bidirectional, num_buckets, max_distance));
                }
            }
        }
        out
    }
}

struct Segment {
    tokens: Vec<TokenId>,
    visible: usize,
}

/// Everything a forward pass consumes: optional encoder input, decoder
/// input, and per-decoder-position labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBatch {
    pub encoder: Option<StackInput>,
    pub decoder: StackInput,
    pub labels: Vec<Option<usize>>,
}

impl ModelBatch {
    /// Lays out rows of examples for `cfg.architecture`. Each inner list
    /// becomes one packed row; examples in a row never attend to each other.
    ///
    /// Encoder-decoder models read the input in the encoder and predict the
    /// target behind a start token. Single-stack models read
    /// `start, input, target` with everything but the final token as input;
    /// the decoder-only LM is trained on every position, the prefix LM only
    /// on target positions and sees the input bidirectionally.
    pub fn from_rows(cfg: &ModelConfig, rows: &[Vec<&CorruptionPair>]) -> Self {
        let start = cfg.start_id;
        let mut enc_rows = Vec::new();
        let mut dec_rows = Vec::new();
        let mut label_rows: Vec<Vec<Option<usize>>> = Vec::new();
        for row in rows {
            let mut enc = Vec::new();
            let mut dec = Vec::new();
            let mut labels = Vec::new();
            for ex in row {
                match cfg.architecture {
                    Architecture::EncoderDecoder | Architecture::EncoderDecoderShared => {
                        enc.push(Segment {
                            tokens: ex.input.clone(),
                            visible: ex.input.len(),
                        });
                        let (tokens, l) = shifted(start, &[], &ex.target, true);
                        dec.push(Segment { tokens, visible: 0 });
                        labels.extend(l);
                    }
                    Architecture::DecoderLm => {
                        let (tokens, l) = shifted(start, &ex.input, &ex.target, false);
                        dec.push(Segment { tokens, visible: 0 });
                        labels.extend(l);
                    }
                    Architecture::PrefixLm => {
                        let (tokens, l) = shifted(start, &ex.input, &ex.target, true);
                        let visible = (ex.input.len() + 1).min(tokens.len());
                        dec.push(Segment { tokens, visible });
                        labels.extend(l);
                    }
                }
            }
            enc_rows.push(enc);
            dec_rows.push(dec);
            label_rows.push(labels);
        }
        let decoder = StackInput::from_segments(&dec_rows, start);
        let mut labels = vec![None; decoder.rows * decoder.len];
        for (r, l) in label_rows.into_iter().enumerate() {
            for (i, v) in l.into_iter().enumerate() {
                labels[r * decoder.len + i] = v;
            }
        }
        let encoder = cfg
            .architecture
            .has_encoder()
            .then(|| StackInput::from_segments(&enc_rows, start));
        ModelBatch {
            encoder,
            decoder,
            labels,
        }
    }

    /// Number of positions contributing to the loss.
    pub fn num_labels(&self) -> usize {
        self.labels.iter().flatten().count()
    }
}

/// `start, input, target` without its last token, and labels for each
/// position (only target positions when `targets_only`).
fn shifted(start: TokenId, input: &[TokenId], target: &[TokenId], targets_only: bool) -> (Vec<TokenId>, Vec<Option<usize>>) {
    let full: Vec<TokenId> = input.iter().chain(target).copied().collect();
    if full.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let mut tokens = Vec::with_capacity(full.len());
    tokens.push(start);
    tokens.extend_from_slice(&full[..full.len() - 1]);
    let labels = full
        .iter()
        .enumerate()
        .map(|(i, t)| (!targets_only || i >= input.len()).then_some(*t as usize))
        .collect();
    (tokens, labels)
}
