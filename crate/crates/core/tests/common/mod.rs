#![allow(dead_code)]

use ttx::vocab::{TokenId, Vocabulary};

pub const THANK_YOU: &str = "Thank you for inviting me to your party last week .";

/// Word-level vocabulary where each whitespace-separated word of the
/// fixtures is one token.
pub fn word_vocab(extra: &[&str]) -> Vocabulary {
    let mut words: Vec<Vec<u8>> = Vec::new();
    let all = THANK_YOU.split(' ').chain(["week.", "apple", "fun"]).chain(extra.iter().copied());
    for w in all {
        if w.len() >= 2 && !words.iter().any(|p| p == w.as_bytes()) {
            words.push(w.as_bytes().to_vec());
        }
    }
    Vocabulary::from_pieces(words, 100).unwrap()
}

pub fn words(vocab: &Vocabulary, text: &str) -> Vec<TokenId> {
    if text.is_empty() {
        return Vec::new();
    }
    text.split(' ').map(|w| vocab.id_of(w.as_bytes()).expect(w)).collect()
}

pub fn render(vocab: &Vocabulary, ids: &[TokenId]) -> String {
    vocab.render(ids, " ")
}

/// Mask marking the listed word positions as corrupted.
pub fn positions(len: usize, corrupted: &[usize]) -> Vec<bool> {
    (0..len).map(|i| corrupted.contains(&i)).collect()
}

pub mod reference;
pub mod toy;

use num_bigint::BigUint;

/// Bucket for `offset = query - key` computed with exact integer
/// comparisons: the logarithmic bucket index is the number of thresholds
/// `k` with `(d / exact)^R >= (max_distance / exact)^k`.
pub fn oracle_bucket(offset: i64, bidirectional: bool, num_buckets: usize, max_distance: usize) -> usize {
    let (n, base, d) = if bidirectional {
        let n = num_buckets / 2;
        (n, if offset < 0 { n } else { 0 }, offset.unsigned_abs())
    } else {
        (num_buckets, 0, offset.max(0) as u64)
    };
    let exact = (n / 2).max(1) as u64;
    if d < exact {
        return base + d as usize;
    }
    if max_distance as u64 <= exact {
        return base + n - 1;
    }
    let r = (n as u64 - exact) as u32;
    let big = |v: u64| BigUint::from(v);
    let lhs_base = big(d).pow(r);
    let count = (1..r)
        .filter(|&k| lhs_base.clone() * big(exact).pow(k) >= big(max_distance as u64).pow(k) * big(exact).pow(r))
        .count();
    base + exact as usize + count
}
