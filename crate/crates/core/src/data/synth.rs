//! Synthetic parallel SLU corpora.
//!
//! A seeded template grammar produces latent utterances over abstract
//! concepts: an intent keyword, function words, and slot values introduced by
//! optional cue words. Each language realises every concept as its own
//! pseudo-word (disjoint across languages), with identical word order, so the
//! corpora are word-for-word parallel and the source-keyed dictionary is
//! exact.
//!
//! Each intent owns a signature slot label that always appears in its
//! utterances. A shared "ambiguous" keyword is sometimes used instead of the
//! intent keyword; the intent is then recoverable only from the slots.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dictionary::BilingualDictionary;
use super::example::Example;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub languages: Vec<String>,
    pub n_intents: usize,
    pub n_slot_labels: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            languages: vec!["en".into(), "de".into(), "es".into()],
            n_intents: 4,
            n_slot_labels: 6,
            n_train: 200,
            n_dev: 50,
            n_test: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthCorpus {
    /// Source language first.
    pub languages: Vec<String>,
    pub splits: BTreeMap<String, Splits>,
    /// Keyed by source-language words.
    pub dictionary: BilingualDictionary,
}

impl SynthCorpus {
    pub fn source(&self) -> &str {
        &self.languages[0]
    }

    pub fn split(&self, lang: &str) -> &Splits {
        &self.splits[lang]
    }
}

const FUNCTION_WORDS: usize = 6;
const KEYWORDS_PER_INTENT: usize = 2;
const VALUES_PER_LABEL: usize = 4;
const CONSONANTS: &[u8] = b"bcdfghjklmnpqrstvwxyz";
const VOWELS: &[u8] = b"aeiou";

pub fn intent_name(i: usize) -> String {
    format!("intent{i}")
}

pub fn slot_label_name(l: usize) -> String {
    format!("slot{l}")
}

/// Concept inventory of the grammar.
struct Grammar {
    n_concepts: usize,
    function: Vec<usize>,
    keywords: Vec<Vec<usize>>,
    ambiguous: Option<usize>,
    cues: Vec<usize>,
    /// values[label][k] is a sequence of concepts.
    values: Vec<Vec<Vec<usize>>>,
    signature: Vec<usize>,
    generic: Vec<usize>,
}

impl Grammar {
    fn new(n_intents: usize, n_labels: usize) -> Self {
        let mut next = 0;
        let mut fresh = |k: usize| {
            let v: Vec<usize> = (next..next + k).collect();
            next += k;
            v
        };
        let function = fresh(FUNCTION_WORDS);
        let keywords = (0..n_intents).map(|_| fresh(KEYWORDS_PER_INTENT)).collect();
        // Ambiguity is only resolvable when each intent has its own signature.
        let ambiguous = (n_intents <= n_labels && n_intents > 1).then(|| fresh(1)[0]);
        let cues = (0..n_labels).map(|_| fresh(1)[0]).collect();
        let values = (0..n_labels)
            .map(|_| (0..VALUES_PER_LABEL).map(|k| fresh(1 + k % 2)).collect())
            .collect();
        let signature: Vec<usize> = (0..n_intents).map(|i| i % n_labels).collect();
        let generic = (0..n_labels).filter(|l| !signature.contains(l)).collect();
        Self {
            n_concepts: next,
            function,
            keywords,
            ambiguous,
            cues,
            values,
            signature,
            generic,
        }
    }

    /// One latent utterance: (concept, tag) pairs and the intent.
    fn sample(&self, rng: &mut ChaCha8Rng) -> (Vec<(usize, String)>, usize) {
        let intent = rng.random_range(0..self.keywords.len());
        let mut labels = vec![self.signature[intent]];
        let mut extras = self.generic.clone();
        extras.shuffle(rng);
        for &l in extras.iter().take(2) {
            if rng.random_bool(0.5) {
                labels.push(l);
            }
        }
        labels.shuffle(rng);

        let o = || "O".to_string();
        let mut out = Vec::new();
        if rng.random_bool(0.5) {
            out.push((self.function[rng.random_range(0..2)], o()));
        }
        let keyword = match self.ambiguous {
            Some(a) if rng.random_bool(0.2) => a,
            _ => self.keywords[intent][rng.random_range(0..KEYWORDS_PER_INTENT)],
        };
        out.push((keyword, o()));
        if rng.random_bool(0.3) {
            out.push((self.function[2], o()));
        }
        for (k, &l) in labels.iter().enumerate() {
            if k > 0 && rng.random_bool(0.3) {
                out.push((self.function[3 + rng.random_range(0..2)], o()));
            }
            if rng.random_bool(0.7) {
                out.push((self.cues[l], o()));
            }
            let value = &self.values[l][rng.random_range(0..VALUES_PER_LABEL)];
            for (j, &c) in value.iter().enumerate() {
                let prefix = if j == 0 { "B" } else { "I" };
                out.push((c, format!("{prefix}-{}", slot_label_name(l))));
            }
        }
        if rng.random_bool(0.3) {
            out.push((self.function[5], o()));
        }
        (out, intent)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Surface lexicon for one language: one unique pseudo-word per concept.
fn lexicon(seed: u64, lang_index: usize, n_concepts: usize, taken: &mut HashSet<String>) -> Vec<String> {
    let mut order = CONSONANTS.to_vec();
    order.shuffle(&mut stream(seed, 1000));
    let consonants: Vec<u8> = (0..7).map(|k| order[(lang_index * 7 + k) % order.len()]).collect();
    let mut rng = stream(seed, 100 + lang_index as u64);
    let mut words = Vec::with_capacity(n_concepts);
    while words.len() < n_concepts {
        let syllables = rng.random_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push(consonants[rng.random_range(0..consonants.len())] as char);
            w.push(VOWELS[rng.random_range(0..VOWELS.len())] as char);
        }
        if rng.random_bool(0.3) {
            w.push(consonants[rng.random_range(0..consonants.len())] as char);
        }
        if taken.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

pub fn synth_corpus(spec: &SynthSpec) -> Result<SynthCorpus> {
    let mut problems = Vec::new();
    if spec.languages.is_empty() || spec.languages.iter().any(|l| l.trim().is_empty()) {
        problems.push("languages must be a non-empty list of codes".to_string());
    }
    for (name, v) in [
        ("n_intents", spec.n_intents),
        ("n_slot_labels", spec.n_slot_labels),
        ("n_train", spec.n_train),
        ("n_dev", spec.n_dev),
        ("n_test", spec.n_test),
    ] {
        if v == 0 {
            problems.push(format!("{name} must be >= 1"));
        }
    }
    let unique: HashSet<&String> = spec.languages.iter().collect();
    if unique.len() != spec.languages.len() {
        problems.push("languages must be distinct".to_string());
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }

    let grammar = Grammar::new(spec.n_intents, spec.n_slot_labels);
    let mut taken = HashSet::new();
    let lexicons: Vec<Vec<String>> = (0..spec.languages.len())
        .map(|li| lexicon(spec.seed, li, grammar.n_concepts, &mut taken))
        .collect();

    let latent = |id: u64, n: usize| {
        let mut rng = stream(spec.seed, id);
        (0..n).map(|_| grammar.sample(&mut rng)).collect::<Vec<_>>()
    };
    let latent_splits = [latent(1, spec.n_train), latent(2, spec.n_dev), latent(3, spec.n_test)];

    let mut splits = BTreeMap::new();
    for (li, lang) in spec.languages.iter().enumerate() {
        let realise = |sents: &[(Vec<(usize, String)>, usize)]| {
            sents
                .iter()
                .map(|(toks, intent)| Example {
                    words: toks.iter().map(|(c, _)| lexicons[li][*c].clone()).collect(),
                    slot_tags: toks.iter().map(|(_, t)| t.clone()).collect(),
                    intent: intent_name(*intent),
                    language: lang.clone(),
                })
                .collect::<Vec<_>>()
        };
        splits.insert(
            lang.clone(),
            Splits {
                train: realise(&latent_splits[0]),
                dev: realise(&latent_splits[1]),
                test: realise(&latent_splits[2]),
            },
        );
    }

    let mut dictionary = BilingualDictionary::new();
    for c in 0..grammar.n_concepts {
        for (li, lang) in spec.languages.iter().enumerate().skip(1) {
            dictionary.insert(&lexicons[0][c], lang, &lexicons[li][c]);
        }
    }

    Ok(SynthCorpus {
        languages: spec.languages.clone(),
        splits,
        dictionary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::vocab::LabelVocab;

    #[test]
    fn deterministic_in_seed() {
        let spec = SynthSpec::default();
        assert_eq!(synth_corpus(&spec).unwrap(), synth_corpus(&spec).unwrap());
        let other = SynthSpec { seed: 1, ..spec.clone() };
        assert_ne!(synth_corpus(&spec).unwrap().splits, synth_corpus(&other).unwrap().splits);
    }

    #[test]
    fn single_language() {
        let spec = SynthSpec {
            languages: vec!["en".into()],
            n_train: 10,
            ..SynthSpec::default()
        };
        let c = synth_corpus(&spec).unwrap();
        assert_eq!(c.split("en").train.len(), 10);
        assert!(c.split("en").train.iter().all(|e| e.language == "en"));
        assert!(c.dictionary.is_empty());
    }

    #[test]
    fn default_label_inventory() {
        let c = synth_corpus(&SynthSpec::default()).unwrap();
        let v = LabelVocab::from_examples(&c.split("en").train);
        assert_eq!(v.n_intents(), 4);
        assert_eq!(v.n_slot_tags(), 13);
    }

    #[test]
    fn parallel_and_disjoint() {
        let c = synth_corpus(&SynthSpec::default()).unwrap();
        let en = &c.split("en").train;
        let de = &c.split("de").train;
        let en_words: HashSet<&String> = en.iter().flat_map(|e| &e.words).collect();
        for (a, b) in en.iter().zip(de) {
            assert_eq!(a.slot_tags, b.slot_tags);
            assert_eq!(a.intent, b.intent);
            for (wa, wb) in a.words.iter().zip(&b.words) {
                assert_eq!(c.dictionary.lookup(wa, "de"), Some(wb.as_str()));
                assert!(!en_words.contains(wb));
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let spec = SynthSpec {
            languages: vec![],
            n_train: 0,
            ..SynthSpec::default()
        };
        match synth_corpus(&spec) {
            Err(Error::Config(p)) => assert_eq!(p.len(), 2),
            other => panic!("{other:?}"),
        }
    }
}
