//! Corpora, dictionaries, label inventories and subword tokenization.

mod corpus;
mod dictionary;
mod example;
mod subword;
mod synth;
mod vocab;

pub use corpus::{format_corpus, load_corpus, parse_corpus, read_examples, write_corpus};
pub use dictionary::{load_dictionary, parse_dictionary, BilingualDictionary};
pub use example::{parse_bio, Bio, Example};
pub use subword::{
    build_subword_vocab, build_subword_vocab_from_words, tokenize, SubwordVocab, TokenizedExample, CLS, CLS_ID,
    CONTINUATION, PAD, PAD_ID, SEP, SEP_ID, UNK, UNK_ID,
};
pub use synth::{intent_name, slot_label_name, synth_corpus, Splits, SynthCorpus, SynthSpec};
pub use vocab::{Interner, LabelVocab};
