//! Byte-level subword vocabulary with reserved sentinel ids.
//!
//! Layout of ids, low to high:
//!
//! | range                         | contents                         |
//! |-------------------------------|----------------------------------|
//! | `0..256`                      | single bytes                     |
//! | `256..256+merges`             | learned multi-byte pieces        |
//! | next four                     | `<pad>`, `<eos>`, `<unk>`, `<mask>` |
//! | last `num_sentinels`          | `<extra_id_0>`, `<extra_id_1>`, … |
//!
//! Every byte has its own piece, so any byte string encodes and decodes
//! losslessly. Special and sentinel ids are never produced by [`Vocabulary::encode`].

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const NUM_BYTE_PIECES: usize = 256;
pub const NUM_SPECIALS: usize = 4;
pub const DEFAULT_NUM_SENTINELS: usize = 100;

const FILE_MAGIC: &str = "ttx-vocab";
const FILE_VERSION: u32 = 1;
const SPECIAL_NAMES: [&str; NUM_SPECIALS] = ["<pad>", "<eos>", "<unk>", "<mask>"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    pieces: Vec<Vec<u8>>,
    num_merges: usize,
    num_sentinels: usize,
    piece_to_id: HashMap<Vec<u8>, TokenId>,
    max_piece_len: usize,
}

impl Vocabulary {
    /// Vocabulary from explicit multi-byte pieces (in id order after the
    /// byte range). Pieces that are single bytes or duplicates are rejected.
    pub fn from_pieces(merged: Vec<Vec<u8>>, num_sentinels: usize) -> Result<Self> {
        let mut pieces: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        let num_merges = merged.len();
        for p in merged {
            if p.len() < 2 {
                return Err(Error::Parameter("learned pieces must span at least two bytes".into()));
            }
            pieces.push(p);
        }
        for name in SPECIAL_NAMES {
            pieces.push(name.as_bytes().to_vec());
        }
        for k in 0..num_sentinels {
            pieces.push(format!("<extra_id_{k}>").into_bytes());
        }
        let mut piece_to_id = HashMap::new();
        for (id, p) in pieces[..NUM_BYTE_PIECES + num_merges].iter().enumerate() {
            if piece_to_id.insert(p.clone(), id as TokenId).is_some() {
                return Err(Error::Parameter(format!("duplicate piece {:?}", escape(p))));
            }
        }
        let max_piece_len = pieces[..NUM_BYTE_PIECES + num_merges].iter().map(Vec::len).max().unwrap_or(1);
        Ok(Vocabulary {
            pieces,
            num_merges,
            num_sentinels,
            piece_to_id,
            max_piece_len,
        })
    }

    pub fn size(&self) -> usize {
        self.pieces.len()
    }

    pub fn num_sentinels(&self) -> usize {
        self.num_sentinels
    }

    pub fn num_merges(&self) -> usize {
        self.num_merges
    }

    fn special(&self, k: usize) -> TokenId {
        (NUM_BYTE_PIECES + self.num_merges + k) as TokenId
    }

    pub fn pad_id(&self) -> TokenId {
        self.special(0)
    }

    pub fn eos_id(&self) -> TokenId {
        self.special(1)
    }

    pub fn unk_id(&self) -> TokenId {
        self.special(2)
    }

    pub fn mask_id(&self) -> TokenId {
        self.special(3)
    }

    /// Id of the `k`-th sentinel (`k = 0` renders as `<X>`).
    pub fn sentinel_id(&self, k: usize) -> Result<TokenId> {
        if k >= self.num_sentinels {
            return Err(Error::Parameter(format!(
                "sentinel {k} requested but only {} reserved",
                self.num_sentinels
            )));
        }
        Ok((self.size() - self.num_sentinels + k) as TokenId)
    }

    /// Sentinel index of `id`, if it is a sentinel.
    pub fn sentinel_index(&self, id: TokenId) -> Option<usize> {
        let first = self.size() - self.num_sentinels;
        let id = id as usize;
        (id >= first && id < self.size()).then(|| id - first)
    }

    pub fn is_sentinel(&self, id: TokenId) -> bool {
        self.sentinel_index(id).is_some()
    }

    /// True for pad, eos, unk, mask and sentinels.
    pub fn is_special(&self, id: TokenId) -> bool {
        id as usize >= NUM_BYTE_PIECES + self.num_merges
    }

    /// Ids that may stand in for natural text: bytes and learned pieces.
    pub fn num_text_ids(&self) -> usize {
        NUM_BYTE_PIECES + self.num_merges
    }

    pub fn piece(&self, id: TokenId) -> Option<&[u8]> {
        self.pieces.get(id as usize).map(Vec::as_slice)
    }

    pub fn id_of(&self, piece: &[u8]) -> Option<TokenId> {
        self.piece_to_id.get(piece).copied()
    }

    pub fn validate(&self, ids: &[TokenId]) -> Result<()> {
        match ids.iter().find(|i| **i as usize >= self.size()) {
            Some(bad) => Err(Error::Index {
                index: *bad as usize,
                size: self.size(),
            }),
            None => Ok(()),
        }
    }

    /// Greedy longest-match segmentation over the learned pieces.
    pub fn encode_bytes(&self, text: &[u8]) -> Vec<TokenId> {
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < text.len() {
            let longest = self.max_piece_len.min(text.len() - pos);
            let (id, len) = (1..=longest)
                .rev()
                .find_map(|len| self.piece_to_id.get(&text[pos..pos + len]).map(|id| (*id, len)))
                .expect("every single byte is a piece");
            out.push(id);
            pos += len;
        }
        out
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        self.encode_bytes(text.as_bytes())
    }

    /// Concatenated bytes of text pieces; special ids contribute nothing.
    pub fn decode_bytes(&self, ids: &[TokenId]) -> Vec<u8> {
        ids.iter()
            .filter(|id| !self.is_special(**id))
            .filter_map(|id| self.piece(*id))
            .flatten()
            .copied()
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        String::from_utf8_lossy(&self.decode_bytes(ids)).into_owned()
    }

    /// Human-readable rendering that shows specials. Sentinels print as
    /// `<X>`, `<Y>`, `<Z>`, then `<S3>`, `<S4>`, ….
    pub fn render(&self, ids: &[TokenId], separator: &str) -> String {
        ids.iter()
            .map(|id| {
                if let Some(k) = self.sentinel_index(*id) {
                    sentinel_glyph(k)
                } else if *id == self.mask_id() {
                    "<M>".to_string()
                } else {
                    String::from_utf8_lossy(self.piece(*id).unwrap_or(b"?")).into_owned()
                }
            })
            .collect::<Vec<_>>()
            .join(separator)
    }

    pub fn to_file_string(&self) -> String {
        let mut s = format!(
            "{FILE_MAGIC} v{FILE_VERSION} size={} merges={} sentinels={}\n",
            self.size(),
            self.num_merges,
            self.num_sentinels
        );
        for p in &self.pieces {
            s.push_str(&escape(p));
            s.push('\n');
        }
        s
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty vocabulary file".into()))?;
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.len() != 5 || fields[0] != FILE_MAGIC || fields[1] != format!("v{FILE_VERSION}") {
            return Err(Error::Format(format!("bad vocabulary header {header:?}")));
        }
        let num = |field: &str, key: &str| -> Result<usize> {
            field
                .strip_prefix(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("bad header field {field:?}")))
        };
        let size = num(fields[2], "size=")?;
        let merges = num(fields[3], "merges=")?;
        let sentinels = num(fields[4], "sentinels=")?;
        let pieces: Vec<Vec<u8>> = lines.map(unescape).collect::<Result<_>>()?;
        if pieces.len() != size || size != NUM_BYTE_PIECES + merges + NUM_SPECIALS + sentinels {
            return Err(Error::Format(format!(
                "vocabulary lists {} pieces, header says {size}",
                pieces.len()
            )));
        }
        let v = Vocabulary::from_pieces(pieces[NUM_BYTE_PIECES..NUM_BYTE_PIECES + merges].to_vec(), sentinels)?;
        if v.pieces != pieces {
            return Err(Error::Format("vocabulary pieces do not match the fixed layout".into()));
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file_string(&text)
    }
}

/// Glyph used when printing the `k`-th sentinel.
pub fn sentinel_glyph(k: usize) -> String {
    match k {
        0 => "<X>".into(),
        1 => "<Y>".into(),
        2 => "<Z>".into(),
        _ => format!("<S{k}>"),
    }
}

fn escape(piece: &[u8]) -> String {
    let mut s = String::new();
    for b in piece {
        match b {
            b'\\' => s.push_str("\\\\"),
            0x21..=0x7e => s.push(*b as char),
            _ => {
                let _ = write!(s, "\\x{b:02x}");
            }
        }
    }
    s
}

fn unescape(line: &str) -> Result<Vec<u8>> {
    let bytes = line.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'\\' {
            out.push(bytes[i]);
            i += 1;
            continue;
        }
        match bytes.get(i + 1) {
            Some(b'\\') => {
                out.push(b'\\');
                i += 2;
            }
            Some(b'x') if i + 4 <= bytes.len() => {
                let hex = std::str::from_utf8(&bytes[i + 2..i + 4]).map_err(|_| Error::Format(format!("bad escape in {line:?}")))?;
                out.push(u8::from_str_radix(hex, 16).map_err(|_| Error::Format(format!("bad escape in {line:?}")))?);
                i += 4;
            }
            _ => return Err(Error::Format(format!("bad escape in {line:?}"))),
        }
    }
    Ok(out)
}

/// Splits text into chunks of leading whitespace plus a non-space run.
/// Merges never cross chunk boundaries.
fn chunks(text: &[u8]) -> impl Iterator<Item = &[u8]> {
    let mut start = 0;
    std::iter::from_fn(move || {
        if start >= text.len() {
            return None;
        }
        let mut i = start;
        while i < text.len() && text[i].is_ascii_whitespace() {
            i += 1;
        }
        while i < text.len() && !text[i].is_ascii_whitespace() {
            i += 1;
        }
        let chunk = &text[start..i];
        start = i;
        Some(chunk)
    })
}

/// Trains a byte-pair-merge vocabulary of exactly `target_size` ids.
///
/// At each step the most frequent adjacent piece pair is merged; equal
/// counts go to the lexicographically smaller `(left, right)` byte pair.
pub fn train_vocab<I, S>(corpus: I, target_size: usize, num_sentinels: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    let fixed = NUM_BYTE_PIECES + NUM_SPECIALS + num_sentinels;
    if target_size < fixed {
        return Err(Error::Parameter(format!(
            "target size {target_size} is below the {fixed} reserved ids"
        )));
    }
    let num_merges = target_size - fixed;

    let mut word_counts: HashMap<Vec<u8>, u64> = HashMap::new();
    let mut any = false;
    for doc in corpus {
        for c in chunks(doc.as_ref()) {
            any = true;
            *word_counts.entry(c.to_vec()).or_default() += 1;
        }
    }
    if !any {
        return Err(Error::Data("cannot train a vocabulary on an empty corpus".into()));
    }
    let mut sorted: Vec<(Vec<u8>, u64)> = word_counts.into_iter().collect();
    sorted.sort();
    let mut words: Vec<(Vec<Vec<u8>>, u64)> = sorted
        .into_iter()
        .map(|(w, c)| (w.iter().map(|b| vec![*b]).collect(), c))
        .collect();

    let mut merged = Vec::with_capacity(num_merges);
    while merged.len() < num_merges {
        let mut pair_counts: HashMap<(&[u8], &[u8]), u64> = HashMap::new();
        for (pieces, count) in &words {
            for w in pieces.windows(2) {
                *pair_counts.entry((w[0].as_slice(), w[1].as_slice())).or_default() += count;
            }
        }
        let best = pair_counts
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
            .map(|((l, r), _)| (l.to_vec(), r.to_vec()));
        let Some((left, right)) = best else {
            return Err(Error::Data(format!(
                "corpus supports only {} merges, {num_merges} requested",
                merged.len()
            )));
        };
        let joined: Vec<u8> = [left.as_slice(), right.as_slice()].concat();
        for (pieces, _) in &mut words {
            let mut i = 0;
            let mut out = Vec::with_capacity(pieces.len());
            while i < pieces.len() {
                if i + 1 < pieces.len() && pieces[i] == left && pieces[i + 1] == right {
                    out.push(joined.clone());
                    i += 2;
                } else {
                    out.push(std::mem::take(&mut pieces[i]));
                    i += 1;
                }
            }
            *pieces = out;
        }
        merged.push(joined);
    }
    Vocabulary::from_pieces(merged, num_sentinels)
}
