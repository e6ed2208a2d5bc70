//! Hand-built logit models for decoding tests.

use ttx::decode::{length_penalty, log_softmax, LogitModel};
use ttx::numerics::Rng;
use ttx::vocab::TokenId;
use ttx::Result;

/// Logits that depend only on the decoding position.
pub struct Positional(pub Vec<Vec<f64>>);

impl LogitModel for Positional {
    fn vocab_size(&self) -> usize {
        self.0[0].len()
    }

    fn next_logits(&self, _: &[TokenId], prefixes: &[Vec<TokenId>]) -> Result<Vec<Vec<f64>>> {
        Ok(prefixes.iter().map(|p| self.0[p.len().min(self.0.len() - 1)].clone()).collect())
    }
}

/// Logits drawn afresh for every distinct (input, prefix).
pub struct Contextual {
    pub vocab: usize,
    pub seed: u64,
}

impl LogitModel for Contextual {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn next_logits(&self, input: &[TokenId], prefixes: &[Vec<TokenId>]) -> Result<Vec<Vec<f64>>> {
        Ok(prefixes
            .iter()
            .map(|p| {
                let key = input.iter().chain(p).fold(self.seed, |h, t| h.wrapping_mul(1_000_003).wrapping_add(*t as u64 + 1));
                let mut rng = Rng::new(key, p.len() as u64);
                (0..self.vocab).map(|_| 2.0 * rng.normal()).collect()
            })
            .collect())
    }
}

/// Best finished sequence over the whole output space, ties to the first
/// in enumeration order; falls back to the best unfinished sequence of
/// length `max_len` if nothing can finish.
pub fn exhaustive(model: &dyn LogitModel, input: &[TokenId], eos: TokenId, alpha: f64, max_len: usize) -> (Vec<TokenId>, f64) {
    let mut best: Option<(Vec<TokenId>, f64)> = None;
    let mut stack = vec![(Vec::<TokenId>::new(), 0.0f64)];
    while let Some((prefix, lp)) = stack.pop() {
        let row = log_softmax(&model.next_logits(input, std::slice::from_ref(&prefix)).unwrap()[0]);
        for (t, l) in row.iter().enumerate() {
            let t = t as TokenId;
            if t == eos {
                let score = (lp + l) / length_penalty(prefix.len() + 1, alpha);
                if best.as_ref().is_none_or(|b| score > b.1) {
                    best = Some((prefix.clone(), score));
                }
            } else if prefix.len() + 1 < max_len {
                let mut next = prefix.clone();
                next.push(t);
                stack.push((next, lp + l));
            }
        }
    }
    best.expect("eos reachable")
}

pub fn random_positional(rng: &mut Rng, vocab: usize, len: usize) -> Positional {
    Positional((0..len).map(|_| (0..vocab).map(|_| 2.0 * rng.normal()).collect()).collect())
}

/// Model whose output space is a handful of complete sequences: every
/// continuation outside them has probability zero.
pub struct Enumerable {
    pub outputs: Vec<Vec<TokenId>>,
    pub vocab: usize,
    pub seed: u64,
}

impl Enumerable {
    pub fn random(rng: &mut Rng, vocab: usize, count: usize, max_tokens: usize) -> Self {
        let outputs = (0..count)
            .map(|_| {
                let n = rng.below(max_tokens + 1);
                (0..n).map(|_| 1 + rng.below(vocab - 1) as TokenId).collect()
            })
            .collect();
        Enumerable {
            outputs,
            vocab,
            seed: rng.next_u64(),
        }
    }
}

impl LogitModel for Enumerable {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn next_logits(&self, input: &[TokenId], prefixes: &[Vec<TokenId>]) -> Result<Vec<Vec<f64>>> {
        let dense = Contextual {
            vocab: self.vocab,
            seed: self.seed,
        }
        .next_logits(input, prefixes)?;
        Ok(prefixes
            .iter()
            .zip(dense)
            .map(|(p, row)| {
                let mut allowed = vec![false; self.vocab];
                for o in self.outputs.iter().filter(|o| o.starts_with(p)) {
                    allowed[o.get(p.len()).map_or(0, |t| *t as usize)] = true;
                }
                row.into_iter()
                    .zip(allowed)
                    .map(|(l, a)| if a { l } else { f64::NEG_INFINITY })
                    .collect()
            })
            .collect())
    }
}
