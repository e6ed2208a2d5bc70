//! Autoregressive generation: greedy, beam search, logit-averaging
//! ensembles.

use crate::error::{Error, Result};
use crate::model::Transformer;
use crate::vocab::TokenId;

/// Anything that scores the next token given an input and decoded prefixes.
pub trait LogitModel {
    fn vocab_size(&self) -> usize;

    /// One logit row per prefix, each of length [`LogitModel::vocab_size`].
    fn next_logits(&self, input: &[TokenId], prefixes: &[Vec<TokenId>]) -> Result<Vec<Vec<f64>>>;
}

impl LogitModel for Transformer {
    fn vocab_size(&self) -> usize {
        self.config().vocab_size
    }

    fn next_logits(&self, input: &[TokenId], prefixes: &[Vec<TokenId>]) -> Result<Vec<Vec<f64>>> {
        self.next_token_logits(input, prefixes)
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|l| l - z).collect()
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Picks the highest-scoring token at every step (lowest id on ties) until
/// `eos` or `max_len` tokens. The returned ids exclude `eos`.
pub fn greedy_decode(model: &dyn LogitModel, input: &[TokenId], eos: TokenId, max_len: usize) -> Result<Vec<TokenId>> {
    if max_len == 0 {
        return Err(Error::Parameter("max_len must be at least 1".into()));
    }
    let mut out = Vec::new();
    for _ in 0..max_len {
        let logits = model.next_logits(input, std::slice::from_ref(&out))?;
        let t = argmax(&logits[0]) as TokenId;
        if t == eos {
            break;
        }
        out.push(t);
    }
    Ok(out)
}

/// `((5 + len) / 6)^alpha`
pub fn length_penalty(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamHypothesis {
    /// Generated ids without the closing `eos`.
    pub ids: Vec<TokenId>,
    /// Sum of token log-probabilities, including `eos` when finished.
    pub log_prob: f64,
    pub finished: bool,
}

impl BeamHypothesis {
    /// Tokens counted by the length penalty; a closing `eos` counts.
    pub fn len(&self) -> usize {
        self.ids.len() + self.finished as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn score(&self, alpha: f64) -> f64 {
        self.log_prob / length_penalty(self.len(), alpha)
    }
}

/// Beam search over log-probabilities.
///
/// Each step expands every live hypothesis by every token and keeps the
/// `beam_width` best candidates by log-probability, skipping candidates of
/// probability zero. Candidates ending in
/// `eos` leave the beam as finished hypotheses, so the live beam shrinks by
/// one for each of them; with width 1 this is exactly greedy decoding. The
/// search stops when nothing is live, at `max_len` tokens, or once the best
/// finished score is at least `log_prob / lp(max_len)` of every live
/// hypothesis, a bound no extension can beat. The best finished hypothesis
/// by `log_prob / lp(len)` is returned; if none finished, the best live one
/// is returned with `finished == false`.
pub fn beam_decode(
    model: &dyn LogitModel,
    input: &[TokenId],
    eos: TokenId,
    beam_width: usize,
    alpha: f64,
    max_len: usize,
) -> Result<BeamHypothesis> {
    if beam_width == 0 {
        return Err(Error::Parameter("beam width must be at least 1".into()));
    }
    if max_len == 0 {
        return Err(Error::Parameter("max_len must be at least 1".into()));
    }
    let mut alive = vec![BeamHypothesis {
        ids: Vec::new(),
        log_prob: 0.0,
        finished: false,
    }];
    let mut finished: Vec<BeamHypothesis> = Vec::new();
    let mut slots = beam_width;
    for _ in 0..max_len {
        let prefixes: Vec<Vec<TokenId>> = alive.iter().map(|h| h.ids.clone()).collect();
        let rows = model.next_logits(input, &prefixes)?;
        let mut candidates: Vec<(f64, usize, TokenId)> = Vec::new();
        for (parent, row) in rows.iter().enumerate() {
            for (t, lp) in log_softmax(row).into_iter().enumerate() {
                candidates.push((alive[parent].log_prob + lp, parent, t as TokenId));
            }
        }
        // stable: equal log-probs keep parent-then-token order
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut next = Vec::new();
        let possible = candidates.into_iter().filter(|c| c.0 > f64::NEG_INFINITY);
        for (log_prob, parent, t) in possible.take(slots) {
            let mut ids = alive[parent].ids.clone();
            if t == eos {
                finished.push(BeamHypothesis {
                    ids,
                    log_prob,
                    finished: true,
                });
                slots -= 1;
            } else {
                ids.push(t);
                next.push(BeamHypothesis {
                    ids,
                    log_prob,
                    finished: false,
                });
            }
        }
        alive = next;
        if alive.is_empty() {
            break;
        }
        if let Some(best) = best_by_score(&finished, alpha) {
            let bound = alive
                .iter()
                .map(|h| h.log_prob / length_penalty(max_len, alpha))
                .fold(f64::NEG_INFINITY, f64::max);
            if best.score(alpha) >= bound {
                break;
            }
        }
    }
    if let Some(best) = best_by_score(&finished, alpha) {
        debug_assert!(finished.iter().all(|h| best.score(alpha) >= h.score(alpha)));
        return Ok(best.clone());
    }
    best_by_score(&alive, alpha)
        .cloned()
        .ok_or_else(|| Error::Data("beam search produced no hypothesis".into()))
}

/// First hypothesis with the highest score.
fn best_by_score(hyps: &[BeamHypothesis], alpha: f64) -> Option<&BeamHypothesis> {
    let mut best: Option<&BeamHypothesis> = None;
    for h in hyps {
        if best.is_none_or(|b| h.score(alpha) > b.score(alpha)) {
            best = Some(h);
        }
    }
    best
}

/// Averages member logits before the softmax.
pub struct Ensemble<'a> {
    members: Vec<&'a dyn LogitModel>,
}

impl<'a> Ensemble<'a> {
    pub fn new(members: Vec<&'a dyn LogitModel>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Config("an ensemble needs at least one member".into()))?
            .vocab_size();
        if let Some(m) = members.iter().find(|m| m.vocab_size() != first) {
            return Err(Error::Config(format!(
                "ensemble vocabulary mismatch: {} vs {}",
                first,
                m.vocab_size()
            )));
        }
        Ok(Ensemble { members })
    }
}

impl LogitModel for Ensemble<'_> {
    fn vocab_size(&self) -> usize {
        self.members[0].vocab_size()
    }

    fn next_logits(&self, input: &[TokenId], prefixes: &[Vec<TokenId>]) -> Result<Vec<Vec<f64>>> {
        ensemble_logits(&self.members, input, prefixes)
    }
}

/// Arithmetic mean of every member's logits.
pub fn ensemble_logits(models: &[&dyn LogitModel], input: &[TokenId], prefixes: &[Vec<TokenId>]) -> Result<Vec<Vec<f64>>> {
    let first = models
        .first()
        .ok_or_else(|| Error::Config("an ensemble needs at least one member".into()))?;
    if models.iter().any(|m| m.vocab_size() != first.vocab_size()) {
        return Err(Error::Config("ensemble members disagree on vocabulary size".into()));
    }
    let mut sum = first.next_logits(input, prefixes)?;
    for m in &models[1..] {
        for (acc, row) in sum.iter_mut().zip(m.next_logits(input, prefixes)?) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
    }
    let n = models.len() as f64;
    for row in &mut sum {
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    Ok(sum)
}
