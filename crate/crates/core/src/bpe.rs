//! Byte-pair encoding with a whitespace boundary constraint.
//!
//! The base alphabet is all 256 bytes plus reserved BOS/EOS ids. Space,
//! TAB, and LF are boundary bytes: they stay singleton tokens and no merge
//! ever crosses them, so every learned token lives inside one cell (or one
//! chord member). Training is greedy most-frequent-pair with a
//! deterministic tie-break, so the same corpus always yields the same
//! merge list.

use serde::{Deserialize, Serialize};
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::path::Path;
use thiserror::Error;

pub const BOS_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
const BYTE_BASE: u32 = 2;
const BASE_TABLE: usize = 258; // 2 specials + 256 bytes

pub const DEFAULT_VOCAB_SIZE: usize = 3000;

/// Merging a pair that occurs only once cannot compress anything.
const MIN_PAIR_COUNT: u64 = 2;

pub fn is_boundary_byte(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n')
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum TokenEntry {
    Bos,
    Eos,
    Bytes(Vec<u8>),
}

/// A merge-ordered vocabulary. Token ids: 0 = BOS, 1 = EOS, 2..=257 the
/// single bytes, then learned merges in training order.
#[derive(Debug, Clone)]
pub struct BpeVocab {
    tokens: Vec<TokenEntry>,
    lookup: HashMap<Vec<u8>, u32>,
    merges: Vec<(u32, u32)>,
    merge_ranks: HashMap<(u32, u32), (usize, u32)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BpeError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("unknown token id {0}")]
    UnknownId(u32),
    #[error("decoded byte stream is not UTF-8")]
    DecodedNotUtf8,
    #[error("vocabulary file is invalid: {0}")]
    InvalidVocabFile(String),
}

impl BpeVocab {
    fn with_base() -> Self {
        let mut tokens = Vec::with_capacity(BASE_TABLE);
        tokens.push(TokenEntry::Bos);
        tokens.push(TokenEntry::Eos);
        let mut lookup = HashMap::new();
        for b in 0u16..=255 {
            tokens.push(TokenEntry::Bytes(vec![b as u8]));
            lookup.insert(vec![b as u8], BYTE_BASE + b as u32);
        }
        BpeVocab {
            tokens,
            lookup,
            merges: Vec::new(),
            merge_ranks: HashMap::new(),
        }
    }

    /// Train on normalized corpus text. Pairs spanning a boundary byte are
    /// never counted; on equal frequency the lexicographically smallest
    /// (left bytes, right bytes) pair wins.
    pub fn train<I, S>(corpus: I, vocab_size: usize) -> Result<BpeVocab, BpeError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut word_counts: HashMap<Vec<u8>, u64> = HashMap::new();
        let mut any_text = false;
        for text in corpus {
            let text = text.as_ref();
            if !text.is_empty() {
                any_text = true;
            }
            for word in text
                .as_bytes()
                .split(|&b| is_boundary_byte(b))
                .filter(|w| !w.is_empty())
            {
                *word_counts.entry(word.to_vec()).or_insert(0) += 1;
            }
        }
        if !any_text {
            return Err(BpeError::EmptyCorpus);
        }

        let mut vocab = BpeVocab::with_base();
        let mut words: Vec<(Vec<u32>, u64)> = word_counts
            .into_iter()
            .map(|(bytes, count)| {
                let ids = bytes.iter().map(|&b| BYTE_BASE + b as u32).collect();
                (ids, count)
            })
            .collect();
        // Hash-map iteration order must not leak into the result.
        words.sort();

        let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
        let mut pair_words: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
        for (w, (ids, count)) in words.iter().enumerate() {
            for pair in ids.windows(2) {
                let pair = (pair[0], pair[1]);
                *pair_counts.entry(pair).or_insert(0) += count;
                pair_words.entry(pair).or_default().insert(w);
            }
        }

        // Max-heap on (count, lexicographically smallest pair); entries go
        // stale when counts change and are re-validated on pop.
        let mut heap: BinaryHeap<HeapEntry> = pair_counts
            .iter()
            .map(|(&pair, &count)| HeapEntry::new(count, pair, &vocab))
            .collect();

        while vocab.tokens.len() < vocab_size.max(BASE_TABLE) {
            let best = loop {
                match heap.pop() {
                    None => break None,
                    Some(entry) => {
                        let current = pair_counts.get(&entry.pair).copied().unwrap_or(0);
                        if current != entry.count {
                            if current >= MIN_PAIR_COUNT {
                                heap.push(HeapEntry::new(current, entry.pair, &vocab));
                            }
                            continue;
                        }
                        if current < MIN_PAIR_COUNT {
                            break None;
                        }
                        break Some(entry.pair);
                    }
                }
            };
            let Some(pair) = best else { break };

            let new_id = vocab.tokens.len() as u32;
            let mut merged = vocab.token_bytes(pair.0).expect("merge source").to_vec();
            merged.extend_from_slice(vocab.token_bytes(pair.1).expect("merge source"));
            vocab.tokens.push(TokenEntry::Bytes(merged.clone()));
            vocab.lookup.entry(merged).or_insert(new_id);
            vocab.merge_ranks.insert(pair, (vocab.merges.len(), new_id));
            vocab.merges.push(pair);

            let affected = pair_words.remove(&pair).unwrap_or_default();
            pair_counts.remove(&pair);
            let mut touched: HashSet<(u32, u32)> = HashSet::new();
            for w in affected {
                let (ids, count) = &mut words[w];
                for old in ids.windows(2) {
                    let old = (old[0], old[1]);
                    if let Some(c) = pair_counts.get_mut(&old) {
                        *c -= *count;
                        touched.insert(old);
                    }
                    if let Some(set) = pair_words.get_mut(&old) {
                        set.remove(&w);
                    }
                }
                let mut next = Vec::with_capacity(ids.len());
                let mut i = 0;
                while i < ids.len() {
                    if i + 1 < ids.len() && (ids[i], ids[i + 1]) == pair {
                        next.push(new_id);
                        i += 2;
                    } else {
                        next.push(ids[i]);
                        i += 1;
                    }
                }
                *ids = next;
                for new_pair in ids.windows(2) {
                    let new_pair = (new_pair[0], new_pair[1]);
                    *pair_counts.entry(new_pair).or_insert(0) += *count;
                    pair_words.entry(new_pair).or_default().insert(w);
                    touched.insert(new_pair);
                }
            }
            for pair in touched {
                let count = pair_counts.get(&pair).copied().unwrap_or(0);
                if count >= MIN_PAIR_COUNT {
                    heap.push(HeapEntry::new(count, pair, &vocab));
                }
            }
        }
        Ok(vocab)
    }

    /// Build a vocabulary from explicit token byte strings (ids assigned
    /// in order after BOS/EOS). No merges are attached, so such a
    /// vocabulary supports masking and decoding but not `encode`.
    pub fn from_token_list<T: Into<Vec<u8>>>(token_bytes: Vec<T>) -> BpeVocab {
        let mut tokens = vec![TokenEntry::Bos, TokenEntry::Eos];
        let mut lookup = HashMap::new();
        for t in token_bytes {
            let bytes: Vec<u8> = t.into();
            let id = tokens.len() as u32;
            lookup.entry(bytes.clone()).or_insert(id);
            tokens.push(TokenEntry::Bytes(bytes));
        }
        BpeVocab {
            tokens,
            lookup,
            merges: Vec::new(),
            merge_ranks: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    /// Byte string of a token; `None` for BOS/EOS or out-of-range ids.
    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        match self.tokens.get(id as usize)? {
            TokenEntry::Bytes(b) => Some(b),
            _ => None,
        }
    }

    /// Greedy merge application per boundary-delimited segment.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let bytes = text.as_bytes();
        let mut out = Vec::with_capacity(bytes.len() / 2 + 1);
        let mut start = 0;
        for (i, &b) in bytes.iter().enumerate() {
            if is_boundary_byte(b) {
                self.encode_word(&bytes[start..i], &mut out);
                out.push(BYTE_BASE + b as u32);
                start = i + 1;
            }
        }
        self.encode_word(&bytes[start..], &mut out);
        out
    }

    fn encode_word(&self, word: &[u8], out: &mut Vec<u32>) {
        if word.is_empty() {
            return;
        }
        let mut ids: Vec<u32> = word.iter().map(|&b| BYTE_BASE + b as u32).collect();
        loop {
            let mut best: Option<(usize, u32, usize)> = None; // (rank, new_id, pos)
            for (pos, pair) in ids.windows(2).enumerate() {
                if let Some(&(rank, new_id)) = self.merge_ranks.get(&(pair[0], pair[1])) {
                    if best.map(|(r, _, _)| rank < r).unwrap_or(true) {
                        best = Some((rank, new_id, pos));
                    }
                }
            }
            let Some((rank, new_id, _)) = best else { break };
            let pair = self.merges[rank];
            let mut next = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && (ids[i], ids[i + 1]) == pair {
                    next.push(new_id);
                    i += 2;
                } else {
                    next.push(ids[i]);
                    i += 1;
                }
            }
            ids = next;
        }
        out.extend(ids);
    }

    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>, BpeError> {
        let mut out = Vec::new();
        for &id in ids {
            match self.tokens.get(id as usize) {
                None => return Err(BpeError::UnknownId(id)),
                Some(TokenEntry::Bos) | Some(TokenEntry::Eos) => {}
                Some(TokenEntry::Bytes(b)) => out.extend_from_slice(b),
            }
        }
        Ok(out)
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String, BpeError> {
        String::from_utf8(self.decode_bytes(ids)?).map_err(|_| BpeError::DecodedNotUtf8)
    }

    pub fn save(&self, path: &Path) -> Result<(), std::io::Error> {
        std::fs::write(path, self.to_json())
    }

    pub fn load(path: &Path) -> Result<BpeVocab, BpeError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| BpeError::InvalidVocabFile(e.to_string()))?;
        BpeVocab::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            version: 1,
            vocab_size: self.tokens.len(),
            merges: self
                .merges
                .iter()
                .map(|&(l, r)| {
                    [
                        bytes_to_string(self.token_bytes(l).expect("merge source")),
                        bytes_to_string(self.token_bytes(r).expect("merge source")),
                    ]
                })
                .collect(),
            tokens: self
                .tokens
                .iter()
                .map(|t| match t {
                    TokenEntry::Bos => "<bos>".to_string(),
                    TokenEntry::Eos => "<eos>".to_string(),
                    TokenEntry::Bytes(b) => bytes_to_string(b),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("vocab serializes")
    }

    pub fn from_json(text: &str) -> Result<BpeVocab, BpeError> {
        let file: VocabFile =
            serde_json::from_str(text).map_err(|e| BpeError::InvalidVocabFile(e.to_string()))?;
        if file.version != 1 {
            return Err(BpeError::InvalidVocabFile(format!(
                "unsupported version {}",
                file.version
            )));
        }
        if file.tokens.len() < BASE_TABLE {
            return Err(BpeError::InvalidVocabFile(
                "token table smaller than the base alphabet".into(),
            ));
        }
        let mut vocab = BpeVocab::with_base();
        for (i, tok) in file.tokens.iter().enumerate().skip(BASE_TABLE) {
            let bytes = string_to_bytes(tok)
                .ok_or_else(|| BpeError::InvalidVocabFile(format!("token {i} not byte-safe")))?;
            for &b in &bytes {
                if is_boundary_byte(b) && bytes.len() > 1 {
                    return Err(BpeError::InvalidVocabFile(format!(
                        "token {i} embeds a boundary byte"
                    )));
                }
            }
            let id = vocab.tokens.len() as u32;
            vocab.tokens.push(TokenEntry::Bytes(bytes.clone()));
            vocab.lookup.entry(bytes).or_insert(id);
        }
        for (rank, [l, r]) in file.merges.iter().enumerate() {
            let lb = string_to_bytes(l)
                .ok_or_else(|| BpeError::InvalidVocabFile("merge side not byte-safe".into()))?;
            let rb = string_to_bytes(r)
                .ok_or_else(|| BpeError::InvalidVocabFile("merge side not byte-safe".into()))?;
            let (li, ri) = match (vocab.lookup.get(&lb), vocab.lookup.get(&rb)) {
                (Some(&li), Some(&ri)) => (li, ri),
                _ => {
                    return Err(BpeError::InvalidVocabFile(format!(
                        "merge {rank} references unknown tokens"
                    )))
                }
            };
            let mut joined = lb;
            joined.extend(rb);
            let new_id = vocab.lookup.get(&joined).copied().ok_or_else(|| {
                BpeError::InvalidVocabFile(format!("merge {rank} output missing from table"))
            })?;
            vocab.merge_ranks.insert((li, ri), (rank, new_id));
            vocab.merges.push((li, ri));
        }
        Ok(vocab)
    }
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    vocab_size: usize,
    merges: Vec<[String; 2]>,
    tokens: Vec<String>,
}

/// Lossless byte <-> JSON string mapping: byte b is code point U+00b.
fn bytes_to_string(bytes: &[u8]) -> String {
    bytes.iter().map(|&b| b as char).collect()
}

fn string_to_bytes(s: &str) -> Option<Vec<u8>> {
    s.chars()
        .map(|c| {
            let v = c as u32;
            if v <= 0xFF {
                Some(v as u8)
            } else {
                None
            }
        })
        .collect()
}

#[derive(PartialEq, Eq)]
struct HeapEntry {
    count: u64,
    // Inverted lexicographic key so the max-heap prefers smaller pairs.
    key: std::cmp::Reverse<(Vec<u8>, Vec<u8>)>,
    pair: (u32, u32),
}

impl HeapEntry {
    fn new(count: u64, pair: (u32, u32), vocab: &BpeVocab) -> Self {
        HeapEntry {
            count,
            key: std::cmp::Reverse((
                vocab.token_bytes(pair.0).expect("pair side").to_vec(),
                vocab.token_bytes(pair.1).expect("pair side").to_vec(),
            )),
            pair,
        }
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.count, &self.key).cmp(&(other.count, &other.key))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_pairs_never_proposed() {
        let vocab = BpeVocab::train(["4c 4c 4c"], 3000).unwrap();
        assert!(vocab
            .merges()
            .iter()
            .any(|&(l, r)| vocab.token_bytes(l) == Some(b"4".as_ref())
                && vocab.token_bytes(r) == Some(b"c".as_ref())));
        for id in 0..vocab.len() as u32 {
            if let Some(bytes) = vocab.token_bytes(id) {
                if bytes.len() > 1 {
                    assert!(!bytes.iter().copied().any(is_boundary_byte), "{bytes:?}");
                }
            }
        }
    }

    #[test]
    fn alphabet_sized_vocab_learns_nothing() {
        let vocab = BpeVocab::train(["4c 4c"], 258).unwrap();
        assert!(vocab.merges().is_empty());
        assert_eq!(vocab.len(), 258);
    }

    #[test]
    fn tiny_corpus_matches_pair_counting_oracle() {
        // Brute-force oracle: recount pairs from scratch each round and
        // apply the same (max count, min pair) policy.
        let corpus = "8f[J\t8f[J\n";
        let vocab = BpeVocab::train([corpus], 3000).unwrap();

        let mut oracle_words: Vec<Vec<Vec<u8>>> = corpus
            .as_bytes()
            .split(|&b| is_boundary_byte(b))
            .filter(|w| !w.is_empty())
            .map(|w| w.iter().map(|&b| vec![b]).collect())
            .collect();
        let mut oracle_merges: Vec<(Vec<u8>, Vec<u8>)> = Vec::new();
        loop {
            let mut counts: HashMap<(Vec<u8>, Vec<u8>), u64> = HashMap::new();
            for word in &oracle_words {
                for pair in word.windows(2) {
                    *counts
                        .entry((pair[0].clone(), pair[1].clone()))
                        .or_insert(0) += 1;
                }
            }
            let best = counts
                .into_iter()
                .filter(|&(_, c)| c >= 2)
                .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
            let Some((pair, _)) = best else { break };
            for word in &mut oracle_words {
                let mut next = Vec::new();
                let mut i = 0;
                while i < word.len() {
                    if i + 1 < word.len() && word[i] == pair.0 && word[i + 1] == pair.1 {
                        let mut joined = pair.0.clone();
                        joined.extend(&pair.1);
                        next.push(joined);
                        i += 2;
                    } else {
                        next.push(word[i].clone());
                        i += 1;
                    }
                }
                *word = next;
            }
            oracle_merges.push(pair);
        }

        let got: Vec<(Vec<u8>, Vec<u8>)> = vocab
            .merges()
            .iter()
            .map(|&(l, r)| {
                (
                    vocab.token_bytes(l).unwrap().to_vec(),
                    vocab.token_bytes(r).unwrap().to_vec(),
                )
            })
            .collect();
        assert_eq!(got, oracle_merges);
        // The full cell merges into one token; nothing crosses the TAB.
        assert!(vocab.lookup.contains_key(b"8f[J".as_slice()));
        assert!(!vocab.lookup.contains_key(b"8f[J\t".as_slice()));
    }

    #[test]
    fn encode_decode_roundtrip() {
        let corpus = "**kern\n*clefG2\n4c 4e 4g\n8f[J\n*-\n";
        let vocab = BpeVocab::train([corpus, corpus], 3000).unwrap();
        let ids = vocab.encode(corpus);
        assert_eq!(vocab.decode(&ids).unwrap(), corpus);
    }

    #[test]
    fn chord_needs_at_least_five_tokens() {
        let corpus = "4c 4e 4g\n4c 4e 4g\n";
        let vocab = BpeVocab::train([corpus], 3000).unwrap();
        let ids = vocab.encode("4c 4e 4g");
        assert!(ids.len() >= 5, "{ids:?}");
        for &id in &ids {
            if let Some(bytes) = vocab.token_bytes(id) {
                if bytes.len() > 1 {
                    assert!(!bytes.contains(&b' '));
                }
            }
        }
    }

    #[test]
    fn empty_corpus_rejected() {
        assert_eq!(
            BpeVocab::train(Vec::<String>::new(), 3000).unwrap_err(),
            BpeError::EmptyCorpus
        );
        assert_eq!(
            BpeVocab::train([""], 3000).unwrap_err(),
            BpeError::EmptyCorpus
        );
    }

    #[test]
    fn unknown_id_on_decode() {
        let vocab = BpeVocab::train(["4c"], 258).unwrap();
        assert_eq!(
            vocab.decode(&[9999]).unwrap_err(),
            BpeError::UnknownId(9999)
        );
    }

    #[test]
    fn training_is_reproducible() {
        let corpus = ["**kern\n4c 4e\n*-\n", "**kern\n8f[J 4c\n*-\n"];
        let a = BpeVocab::train(corpus, 300).unwrap();
        let b = BpeVocab::train(corpus, 300).unwrap();
        assert_eq!(a.merges(), b.merges());
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn json_roundtrip() {
        let corpus = "**kern\n*clefG2\n4c 4e 4g\n*-\n";
        let vocab = BpeVocab::train([corpus], 400).unwrap();
        let loaded = BpeVocab::from_json(&vocab.to_json()).unwrap();
        assert_eq!(loaded.merges(), vocab.merges());
        assert_eq!(loaded.encode(corpus), vocab.encode(corpus));
        assert_eq!(loaded.to_json(), vocab.to_json());
    }

    #[test]
    fn byte_string_mapping_is_lossless() {
        let all: Vec<u8> = (0u16..=255).map(|b| b as u8).collect();
        assert_eq!(string_to_bytes(&bytes_to_string(&all)), Some(all));
        assert_eq!(string_to_bytes("π"), None);
    }
}
