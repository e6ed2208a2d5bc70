//! Unsupervised objectives as pure transforms from a token sequence to an
//! (input, target) pair.
//!
//! Each randomized objective is split in two: a draw that decides *which*
//! tokens are corrupted, and a deterministic transform that applies those
//! decisions. The transforms are public so fixed decisions can be replayed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::vocab::{TokenId, Vocabulary};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorruptionPair {
    pub input: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    PrefixLm,
    BertStyle,
    MassStyle,
    IidReplaceSpans,
    IidDropTokens,
    RandomSpans,
    Deshuffle,
    FullLm,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 8] = [
        ObjectiveKind::PrefixLm,
        ObjectiveKind::BertStyle,
        ObjectiveKind::MassStyle,
        ObjectiveKind::IidReplaceSpans,
        ObjectiveKind::IidDropTokens,
        ObjectiveKind::RandomSpans,
        ObjectiveKind::Deshuffle,
        ObjectiveKind::FullLm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::PrefixLm => "prefix_lm",
            ObjectiveKind::BertStyle => "bert_style",
            ObjectiveKind::MassStyle => "mass_style",
            ObjectiveKind::IidReplaceSpans => "iid_replace_spans",
            ObjectiveKind::IidDropTokens => "iid_drop_tokens",
            ObjectiveKind::RandomSpans => "random_spans",
            ObjectiveKind::Deshuffle => "deshuffle",
            ObjectiveKind::FullLm => "full_lm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown objective {s:?}")))
    }

    /// Objectives whose targets are delimited by sentinels.
    pub fn uses_sentinels(self) -> bool {
        matches!(self, ObjectiveKind::IidReplaceSpans | ObjectiveKind::RandomSpans)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    pub corruption_rate: f64,
    pub mean_span_length: f64,
}

impl ObjectiveSpec {
    pub fn new(kind: ObjectiveKind, corruption_rate: f64, mean_span_length: f64) -> Result<Self> {
        if !(corruption_rate > 0.0 && corruption_rate < 1.0) {
            return Err(Error::Parameter(format!("corruption rate {corruption_rate} not in (0, 1)")));
        }
        if !(mean_span_length >= 1.0) {
            return Err(Error::Parameter(format!("mean span length {mean_span_length} below 1")));
        }
        Ok(ObjectiveSpec {
            kind,
            corruption_rate,
            mean_span_length,
        })
    }

    /// Span corruption at 15% with mean span length 3.
    pub fn span_corruption() -> Self {
        ObjectiveSpec {
            kind: ObjectiveKind::RandomSpans,
            corruption_rate: 0.15,
            mean_span_length: 3.0,
        }
    }

    pub fn apply(&self, x: &[TokenId], rng: &mut Rng, vocab: &Vocabulary) -> Result<CorruptionPair> {
        let rate = self.corruption_rate;
        match self.kind {
            ObjectiveKind::PrefixLm => prefix_lm_split(x, rng),
            ObjectiveKind::BertStyle => Ok(bert_style(x, rate, rng, vocab)),
            ObjectiveKind::MassStyle => Ok(mass_style(x, rate, rng, vocab)),
            ObjectiveKind::IidReplaceSpans => iid_replace_spans(x, rate, rng, vocab),
            ObjectiveKind::IidDropTokens => Ok(iid_drop_tokens(x, rate, rng)),
            ObjectiveKind::RandomSpans => random_spans(x, rate, self.mean_span_length, rng, vocab),
            ObjectiveKind::Deshuffle => Ok(deshuffle(x, rng)),
            ObjectiveKind::FullLm => Ok(CorruptionPair {
                input: Vec::new(),
                target: x.to_vec(),
            }),
        }
    }
}

/// Splits at `s` drawn uniformly from `1..len`.
pub fn prefix_lm_split(x: &[TokenId], rng: &mut Rng) -> Result<CorruptionPair> {
    if x.len() < 2 {
        return Err(Error::Data(format!("prefix LM split needs 2 tokens, got {}", x.len())));
    }
    let s = 1 + rng.below(x.len() - 1);
    Ok(split_at(x, s))
}

pub fn split_at(x: &[TokenId], s: usize) -> CorruptionPair {
    CorruptionPair {
        input: x[..s].to_vec(),
        target: x[s..].to_vec(),
    }
}

/// What happens to one position under mask-style corruption.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenAction {
    Keep,
    Mask,
    Replace(TokenId),
}

/// Independent per-token draws: corrupt with probability `rate`; a corrupted
/// token becomes the mask w.p. 0.9, otherwise a uniformly random text id
/// (`random_branch`), or always the mask when `random_branch` is false.
pub fn draw_mask_actions(len: usize, rate: f64, rng: &mut Rng, vocab: &Vocabulary, random_branch: bool) -> Vec<TokenAction> {
    (0..len)
        .map(|_| {
            if !rng.bernoulli(rate) {
                TokenAction::Keep
            } else if random_branch && rng.uniform() >= 0.9 {
                TokenAction::Replace(rng.below(vocab.num_text_ids()) as TokenId)
            } else {
                TokenAction::Mask
            }
        })
        .collect()
}

/// Applies mask-style decisions; the target is the untouched sequence.
pub fn apply_mask_actions(x: &[TokenId], actions: &[TokenAction], vocab: &Vocabulary) -> CorruptionPair {
    let input = x
        .iter()
        .zip(actions)
        .map(|(t, a)| match a {
            TokenAction::Keep => *t,
            TokenAction::Mask => vocab.mask_id(),
            TokenAction::Replace(r) => *r,
        })
        .collect();
    CorruptionPair {
        input,
        target: x.to_vec(),
    }
}

pub fn bert_style(x: &[TokenId], rate: f64, rng: &mut Rng, vocab: &Vocabulary) -> CorruptionPair {
    let actions = draw_mask_actions(x.len(), rate, rng, vocab, true);
    apply_mask_actions(x, &actions, vocab)
}

pub fn mass_style(x: &[TokenId], rate: f64, rng: &mut Rng, vocab: &Vocabulary) -> CorruptionPair {
    let actions = draw_mask_actions(x.len(), rate, rng, vocab, false);
    apply_mask_actions(x, &actions, vocab)
}

pub fn draw_iid_mask(len: usize, rate: f64, rng: &mut Rng) -> Vec<bool> {
    (0..len).map(|_| rng.bernoulli(rate)).collect()
}

/// Maximal corrupted runs become consecutive sentinels in the input; the
/// target lists each sentinel followed by its run, then one final sentinel.
pub fn replace_spans(x: &[TokenId], corrupted: &[bool], vocab: &Vocabulary) -> Result<CorruptionPair> {
    debug_assert_eq!(x.len(), corrupted.len());
    let spans = corrupted
        .iter()
        .enumerate()
        .filter(|(i, c)| **c && (*i == 0 || !corrupted[i - 1]))
        .count();
    if spans + 1 > vocab.num_sentinels() {
        return Err(Error::Capacity {
            needed: spans + 1,
            available: vocab.num_sentinels(),
        });
    }
    let mut input = Vec::with_capacity(x.len());
    let mut target = Vec::new();
    let mut next = 0;
    for (i, (tok, c)) in x.iter().zip(corrupted).enumerate() {
        if *c {
            if i == 0 || !corrupted[i - 1] {
                let s = vocab.sentinel_id(next)?;
                next += 1;
                input.push(s);
                target.push(s);
            }
            target.push(*tok);
        } else {
            input.push(*tok);
        }
    }
    target.push(vocab.sentinel_id(next)?);
    Ok(CorruptionPair { input, target })
}

pub fn iid_replace_spans(x: &[TokenId], rate: f64, rng: &mut Rng, vocab: &Vocabulary) -> Result<CorruptionPair> {
    let mask = draw_iid_mask(x.len(), rate, rng);
    replace_spans(x, &mask, vocab)
}

/// Corrupted tokens leave the input and form the target, in order.
pub fn drop_tokens(x: &[TokenId], corrupted: &[bool]) -> CorruptionPair {
    let (dropped, kept): (Vec<_>, Vec<_>) = x.iter().zip(corrupted).partition(|(_, c)| **c);
    CorruptionPair {
        input: kept.into_iter().map(|(t, _)| *t).collect(),
        target: dropped.into_iter().map(|(t, _)| *t).collect(),
    }
}

pub fn iid_drop_tokens(x: &[TokenId], rate: f64, rng: &mut Rng) -> CorruptionPair {
    let mask = draw_iid_mask(x.len(), rate, rng);
    drop_tokens(x, &mask)
}

/// Token and span counts used by [`random_spans`] for a sequence of `len`.
pub fn span_counts(len: usize, rate: f64, mean_span_length: f64) -> (usize, usize) {
    let corrupted = ((rate * len as f64).round() as usize).clamp(1, len.max(1));
    let spans = ((corrupted as f64 / mean_span_length).round() as usize).max(1);
    let clean = len - corrupted;
    (corrupted, spans.min(corrupted).min(clean + 1))
}

/// Uniformly random composition of `total` into `parts` positive integers.
fn random_composition(total: usize, parts: usize, rng: &mut Rng) -> Vec<usize> {
    debug_assert!(parts >= 1 && total >= parts);
    // stars and bars: choose parts-1 of the total-1 interior cut points
    let mut cuts = vec![false; total - 1];
    cuts.iter_mut().take(parts - 1).for_each(|c| *c = true);
    rng.shuffle(&mut cuts);
    let mut out = Vec::with_capacity(parts);
    let mut run = 1;
    for c in cuts {
        if c {
            out.push(run);
            run = 1;
        } else {
            run += 1;
        }
    }
    out.push(run);
    out
}

/// Corruption mask for `random_spans`: `spans` runs totalling `corrupted`
/// tokens, separated by at least one clean token, with the leading and
/// trailing clean stretches allowed to be empty.
pub fn draw_span_mask(len: usize, corrupted: usize, spans: usize, rng: &mut Rng) -> Vec<bool> {
    let span_lens = random_composition(corrupted, spans, rng);
    // spans+1 gaps; shifting the two outer gaps by one makes all parts positive
    let mut gaps = random_composition(len - corrupted + 2, spans + 1, rng);
    gaps[0] -= 1;
    gaps[spans] -= 1;
    let mut mask = Vec::with_capacity(len);
    for (i, span) in span_lens.iter().enumerate() {
        mask.extend(std::iter::repeat(false).take(gaps[i]));
        mask.extend(std::iter::repeat(true).take(*span));
    }
    mask.extend(std::iter::repeat(false).take(gaps[spans]));
    mask
}

pub fn random_spans(
    x: &[TokenId],
    rate: f64,
    mean_span_length: f64,
    rng: &mut Rng,
    vocab: &Vocabulary,
) -> Result<CorruptionPair> {
    if rate * (x.len() as f64) < 1.0 {
        return Err(Error::Data(format!(
            "rate {rate} corrupts no token of a length-{} sequence",
            x.len()
        )));
    }
    let (corrupted, spans) = span_counts(x.len(), rate, mean_span_length);
    if spans + 1 > vocab.num_sentinels() {
        return Err(Error::Capacity {
            needed: spans + 1,
            available: vocab.num_sentinels(),
        });
    }
    let mask = draw_span_mask(x.len(), corrupted, spans, rng);
    replace_spans(x, &mask, vocab)
}

pub fn deshuffle(x: &[TokenId], rng: &mut Rng) -> CorruptionPair {
    let mut input = x.to_vec();
    rng.shuffle(&mut input);
    CorruptionPair {
        input,
        target: x.to_vec(),
    }
}

/// Inverse of the sentinel objectives: each input sentinel is replaced by
/// the target tokens that follow the same sentinel.
pub fn splice_spans(pair: &CorruptionPair, vocab: &Vocabulary) -> Result<Vec<TokenId>> {
    let mut spans: Vec<(TokenId, &[TokenId])> = Vec::new();
    let mut i = 0;
    while i < pair.target.len() {
        let s = pair.target[i];
        if !vocab.is_sentinel(s) {
            return Err(Error::Data("target does not start a span with a sentinel".into()));
        }
        let end = pair.target[i + 1..]
            .iter()
            .position(|t| vocab.is_sentinel(*t))
            .map_or(pair.target.len(), |p| i + 1 + p);
        spans.push((s, &pair.target[i + 1..end]));
        i = end;
    }
    let mut out = Vec::new();
    for tok in &pair.input {
        if vocab.is_sentinel(*tok) {
            let (_, span) = spans
                .iter()
                .find(|(s, _)| s == tok)
                .ok_or_else(|| Error::Data("input sentinel missing from target".into()))?;
            out.extend_from_slice(span);
        } else {
            out.push(*tok);
        }
    }
    Ok(out)
}

/// Concatenation of input and target for single-stack models, plus the
/// prefix length separating them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LmSequence {
    pub tokens: Vec<TokenId>,
    pub prefix_len: usize,
}

impl LmSequence {
    pub fn split(&self) -> CorruptionPair {
        split_at(&self.tokens, self.prefix_len)
    }
}

/// Separator placed between input and target in an [`LmSequence`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SepStrategy {
    #[default]
    None,
    Token(TokenId),
}

pub fn to_lm_concat(pair: &CorruptionPair, sep: SepStrategy) -> LmSequence {
    let mut tokens = pair.input.clone();
    if let SepStrategy::Token(t) = sep {
        tokens.push(t);
    }
    let prefix_len = tokens.len();
    tokens.extend_from_slice(&pair.target);
    LmSequence { tokens, prefix_len }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::from_pieces(vec![b"ab".to_vec()], 100).unwrap()
    }

    #[test]
    fn prefix_split_of_two_tokens() {
        let mut rng = Rng::new(0, 0);
        for _ in 0..20 {
            let p = prefix_lm_split(&[5, 6], &mut rng).unwrap();
            assert_eq!((p.input, p.target), (vec![5], vec![6]));
        }
        assert!(matches!(prefix_lm_split(&[5], &mut rng), Err(Error::Data(_))));
    }

    #[test]
    fn zero_corruption_cases() {
        let v = vocab();
        let x = [1, 2, 3];
        let keep = [TokenAction::Keep; 3];
        let p = apply_mask_actions(&x, &keep, &v);
        assert_eq!((p.input.as_slice(), p.target.as_slice()), (&x[..], &x[..]));
        let p = replace_spans(&x, &[false; 3], &v).unwrap();
        assert_eq!(p.input, x);
        assert_eq!(p.target, vec![v.sentinel_id(0).unwrap()]);
        let p = drop_tokens(&x, &[false; 3]);
        assert_eq!(p.input, x);
        assert!(p.target.is_empty());
    }

    #[test]
    fn capacity_error_when_sentinels_run_out() {
        let v = Vocabulary::from_pieces(vec![], 2).unwrap();
        let err = replace_spans(&[1, 2, 3, 4], &[true, false, true, false], &v).unwrap_err();
        assert!(matches!(err, Error::Capacity { needed: 3, available: 2 }));
    }

    #[test]
    fn span_counts_follow_rounding() {
        assert_eq!(span_counts(500, 0.15, 3.0), (75, 25));
        assert_eq!(span_counts(512, 0.15, 3.0), (77, 26));
        assert_eq!(span_counts(100, 0.15, 1.0), (15, 15));
        assert_eq!(span_counts(4, 0.1, 3.0), (1, 1));
    }

    #[test]
    fn span_mask_has_requested_shape() {
        let mut rng = Rng::new(3, 0);
        for _ in 0..200 {
            let mask = draw_span_mask(40, 9, 4, &mut rng);
            assert_eq!(mask.len(), 40);
            assert_eq!(mask.iter().filter(|m| **m).count(), 9);
            let runs = mask.iter().enumerate().filter(|(i, m)| **m && (*i == 0 || !mask[i - 1])).count();
            assert_eq!(runs, 4);
        }
    }

    #[test]
    fn random_spans_needs_a_corrupted_token() {
        let v = vocab();
        let mut rng = Rng::new(0, 0);
        assert!(matches!(random_spans(&[1, 2, 3], 0.1, 3.0, &mut rng, &v), Err(Error::Data(_))));
    }

    #[test]
    fn lm_concat_examples() {
        let p = CorruptionPair {
            input: vec![1, 2],
            target: vec![3],
        };
        let s = to_lm_concat(&p, SepStrategy::None);
        assert_eq!(s.tokens, vec![1, 2, 3]);
        assert_eq!(s.prefix_len, 2);
        assert_eq!(s.split(), p);
        let empty = CorruptionPair {
            input: vec![1, 2],
            target: vec![],
        };
        let s = to_lm_concat(&empty, SepStrategy::None);
        assert_eq!(s.prefix_len, s.tokens.len());
    }

    #[test]
    fn spec_validation() {
        assert!(ObjectiveSpec::new(ObjectiveKind::BertStyle, 0.0, 1.0).is_err());
        assert!(ObjectiveSpec::new(ObjectiveKind::BertStyle, 1.0, 1.0).is_err());
        assert!(ObjectiveSpec::new(ObjectiveKind::RandomSpans, 0.15, 0.5).is_err());
        for k in ObjectiveKind::ALL {
            assert_eq!(ObjectiveKind::parse(k.name()).unwrap(), k);
        }
    }
}
