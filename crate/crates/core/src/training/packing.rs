use crate::corruption::CorruptionPair;
use crate::model::Architecture;
use crate::vocab::TokenId;
use crate::{Error, Result};

/// Tokens an example occupies in the encoder and decoder rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Footprint {
    pub encoder: usize,
    pub decoder: usize,
}

impl Footprint {
    pub fn of(pair: &CorruptionPair, arch: Architecture) -> Self {
        if arch.has_encoder() {
            Footprint {
                encoder: pair.input.len(),
                decoder: pair.target.len(),
            }
        } else {
            Footprint {
                encoder: 0,
                decoder: pair.input.len() + pair.target.len(),
            }
        }
    }

    pub fn tokens(&self) -> usize {
        self.encoder + self.decoder
    }
}

/// Appends `eos` to the target, and to the input when it is not empty.
pub fn append_eos(pair: &mut CorruptionPair, eos: TokenId) {
    if !pair.input.is_empty() {
        pair.input.push(eos);
    }
    pair.target.push(eos);
}

/// Cuts an example so it fits in a row of `max_len`. Single-stack models
/// keep at least half the row for the input when both parts are long.
pub fn truncate_pair(pair: &mut CorruptionPair, arch: Architecture, max_len: usize) {
    if arch.has_encoder() {
        pair.input.truncate(max_len);
        pair.target.truncate(max_len);
        return;
    }
    let total = pair.input.len() + pair.target.len();
    if total <= max_len {
        return;
    }
    let keep_input = pair.input.len().min(max_len.saturating_sub(pair.target.len()).max(max_len / 2));
    pair.input.truncate(keep_input);
    pair.target.truncate(max_len - keep_input);
}

/// First-fit packing of examples into rows of at most `max_len` tokens per
/// stack, optionally limited to `max_rows` rows.
#[derive(Debug, Clone)]
pub struct Packer {
    max_len: usize,
    max_rows: Option<usize>,
    rows: Vec<(Footprint, Vec<usize>)>,
}

impl Packer {
    pub fn new(max_len: usize, max_rows: Option<usize>) -> Self {
        Packer {
            max_len,
            max_rows,
            rows: Vec::new(),
        }
    }

    /// Places example `index` in the first row with room. Returns `false`
    /// when no row can take it and no new row may be opened.
    pub fn try_add(&mut self, index: usize, fp: Footprint) -> Result<bool> {
        if fp.encoder > self.max_len || fp.decoder > self.max_len {
            return Err(Error::Data(format!(
                "example {index} needs {}/{} tokens, rows hold {}",
                fp.encoder, fp.decoder, self.max_len
            )));
        }
        let max_len = self.max_len;
        let fits = |used: &Footprint| {
            used.encoder + fp.encoder <= max_len && used.decoder + fp.decoder <= max_len
        };
        if let Some((used, members)) = self.rows.iter_mut().find(|(u, _)| fits(u)) {
            used.encoder += fp.encoder;
            used.decoder += fp.decoder;
            members.push(index);
            return Ok(true);
        }
        if self.max_rows.is_some_and(|m| self.rows.len() >= m) {
            return Ok(false);
        }
        self.rows.push((fp, vec![index]));
        Ok(true)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Example indices per row, in row creation order.
    pub fn into_rows(self) -> Vec<Vec<usize>> {
        self.rows.into_iter().map(|(_, m)| m).collect()
    }
}

/// Packs examples first-fit into rows of `max_len`, then groups the rows
/// into batches of `budget / max_len` rows. Returns example indices per row
/// per batch.
pub fn pack_batch(
    examples: &[CorruptionPair],
    arch: Architecture,
    budget: usize,
    max_len: usize,
) -> Result<Vec<Vec<Vec<usize>>>> {
    if max_len == 0 || budget < max_len {
        return Err(Error::Config(format!(
            "token budget {budget} must be at least the row length {max_len} (> 0)"
        )));
    }
    let mut packer = Packer::new(max_len, None);
    for (i, ex) in examples.iter().enumerate() {
        packer.try_add(i, Footprint::of(ex, arch))?;
    }
    let rows_per_batch = budget / max_len;
    Ok(packer
        .into_rows()
        .chunks(rows_per_batch)
        .map(<[Vec<usize>]>::to_vec)
        .collect())
}
