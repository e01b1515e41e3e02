//! Greedy longest-match subword tokenizer.
//!
//! Pieces are stored without a continuation marker and may be used at any
//! position inside a word; `##` is only a rendering convention for
//! non-initial pieces. Every character seen while building the vocabulary is
//! a piece, so segmentation of known text never fails.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::example::Example;
use super::vocab::Interner;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;
pub const CONTINUATION: &str = "##";

const RESERVED: [&str; 4] = [PAD, UNK, CLS, SEP];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct SubwordVocab {
    pieces: Interner,
    max_piece_chars: usize,
}

impl From<Vec<String>> for SubwordVocab {
    fn from(pieces: Vec<String>) -> Self {
        let max_piece_chars = pieces
            .iter()
            .skip(RESERVED.len())
            .map(|p| p.chars().count())
            .max()
            .unwrap_or(1);
        Self {
            pieces: Interner::from(pieces),
            max_piece_chars,
        }
    }
}

impl From<SubwordVocab> for Vec<String> {
    fn from(v: SubwordVocab) -> Self {
        v.pieces.into()
    }
}

impl SubwordVocab {
    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn pieces(&self) -> &[String] {
        self.pieces.names()
    }

    pub fn id(&self, piece: &str) -> Option<usize> {
        self.pieces.get(piece)
    }

    pub fn piece(&self, id: usize) -> &str {
        self.pieces.name(id).unwrap_or(UNK)
    }

    pub fn contains(&self, piece: &str) -> bool {
        self.pieces.get(piece).is_some()
    }

    /// Segments one word, greedily taking the longest known piece.
    /// Unknown characters become `[UNK]`.
    pub fn segment(&self, word: &str) -> Vec<usize> {
        let chars: Vec<char> = word.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        let mut buf = String::new();
        while i < chars.len() {
            let longest = (i + self.max_piece_chars).min(chars.len());
            let mut hit = None;
            for j in (i + 1..=longest).rev() {
                buf.clear();
                buf.extend(&chars[i..j]);
                if let Some(id) = self.pieces.get(&buf) {
                    hit = Some((id, j));
                    break;
                }
            }
            match hit {
                Some((id, j)) if id >= RESERVED.len() => {
                    out.push(id);
                    i = j;
                }
                _ => {
                    out.push(UNK_ID);
                    i += 1;
                }
            }
        }
        out
    }
}

/// Builds a vocabulary from the words of `examples`.
pub fn build_subword_vocab(examples: &[Example], max_pieces: usize) -> SubwordVocab {
    build_subword_vocab_from_words(examples.iter().flat_map(|e| e.words.iter().map(String::as_str)), max_pieces)
}

/// Reserved symbols, then every character (sorted), then the most frequent
/// multi-character substrings of words (ties broken lexicographically) until
/// `max_pieces` is reached.
pub fn build_subword_vocab_from_words<'w>(words: impl IntoIterator<Item = &'w str>, max_pieces: usize) -> SubwordVocab {
    let mut word_freq: BTreeMap<&str, usize> = BTreeMap::new();
    for w in words {
        *word_freq.entry(w).or_default() += 1;
    }

    let mut alphabet: Vec<char> = word_freq.keys().flat_map(|w| w.chars()).collect();
    alphabet.sort_unstable();
    alphabet.dedup();

    let mut substr_freq: HashMap<String, usize> = HashMap::new();
    for (w, &n) in &word_freq {
        let chars: Vec<char> = w.chars().collect();
        for i in 0..chars.len() {
            for j in i + 2..=chars.len() {
                *substr_freq.entry(chars[i..j].iter().collect()).or_default() += n;
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = substr_freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut pieces: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    pieces.extend(alphabet.iter().map(|c| c.to_string()));
    let room = max_pieces.saturating_sub(pieces.len());
    pieces.extend(ranked.into_iter().take(room).map(|(s, _)| s));
    SubwordVocab::from(pieces)
}

/// Sub-token ids of one utterance with word boundaries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedExample {
    /// Starts with `[CLS]`, ends with `[SEP]`.
    pub subtoken_ids: Vec<usize>,
    /// Position of each word's first sub-token in `subtoken_ids`.
    pub first_subtoken_index: Vec<usize>,
    pub source: Example,
}

pub fn tokenize(example: &Example, vocab: &SubwordVocab) -> TokenizedExample {
    let mut ids = vec![CLS_ID];
    let mut first = Vec::with_capacity(example.words.len());
    for w in &example.words {
        first.push(ids.len());
        ids.extend(vocab.segment(w));
    }
    ids.push(SEP_ID);
    TokenizedExample {
        subtoken_ids: ids,
        first_subtoken_index: first,
        source: example.clone(),
    }
}

impl TokenizedExample {
    /// Reassembles the words from the sub-token stream.
    pub fn detokenize(&self, vocab: &SubwordVocab) -> Vec<String> {
        let end = self.subtoken_ids.len() - 1;
        self.first_subtoken_index
            .iter()
            .enumerate()
            .map(|(k, &start)| {
                let stop = self.first_subtoken_index.get(k + 1).copied().unwrap_or(end);
                self.subtoken_ids[start..stop].iter().map(|&id| vocab.piece(id)).collect()
            })
            .collect()
    }

    /// Pieces with `##` on non-initial pieces of each word.
    pub fn render(&self, vocab: &SubwordVocab) -> Vec<String> {
        self.subtoken_ids
            .iter()
            .enumerate()
            .map(|(pos, &id)| {
                let p = vocab.piece(id);
                let reserved = id < RESERVED.len();
                if reserved || self.first_subtoken_index.contains(&pos) {
                    p.to_string()
                } else {
                    format!("{CONTINUATION}{p}")
                }
            })
            .collect()
    }
}
