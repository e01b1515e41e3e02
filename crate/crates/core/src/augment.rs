//! Code-switching augmentation.
//!
//! Each word is independently replaced, with probability `ratio`, by its
//! dictionary translation into a uniformly chosen available target language.
//! Word count, slot tags and intent never change, so the original and the
//! code-switched utterance stay position-aligned.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{BilingualDictionary, Example};
use crate::error::{Error, Result};
use crate::exec::{self, Exec};

/// Language code given to code-switched utterances.
pub const CODE_SWITCHED_LANG: &str = "cs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeSwitchPolicy {
    pub ratio: f64,
    pub target_languages: Vec<String>,
    pub seed: u64,
}

impl CodeSwitchPolicy {
    pub fn new(ratio: f64, target_languages: Vec<String>, seed: u64) -> Result<Self> {
        let p = Self {
            ratio,
            target_languages,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(0.0..=1.0).contains(&self.ratio) {
            problems.push(format!("ratio must lie in [0, 1], got {}", self.ratio));
        }
        if self.target_languages.is_empty() {
            problems.push("target_languages must not be empty".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// RNG stream for one draw, independent of every other draw index.
    pub fn rng(&self, draw_index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(draw_index);
        rng
    }
}

/// Code-switches one utterance. Returns the new example and how many words
/// were replaced.
pub fn code_switch_counted(
    example: &Example,
    dict: &BilingualDictionary,
    policy: &CodeSwitchPolicy,
    draw_index: u64,
) -> (Example, usize) {
    let mut rng = policy.rng(draw_index);
    let mut replaced = 0;
    let words = example
        .words
        .iter()
        .map(|w| {
            // One uniform draw per word keeps the stream layout independent
            // of dictionary coverage.
            let u: f64 = rng.random();
            if u >= policy.ratio {
                return w.clone();
            }
            let available: Vec<&str> = policy
                .target_languages
                .iter()
                .filter_map(|l| dict.lookup(w, l))
                .collect();
            if available.is_empty() {
                return w.clone();
            }
            replaced += 1;
            available[rng.random_range(0..available.len())].to_string()
        })
        .collect();
    let out = Example {
        words,
        slot_tags: example.slot_tags.clone(),
        intent: example.intent.clone(),
        language: CODE_SWITCHED_LANG.to_string(),
    };
    (out, replaced)
}

pub fn code_switch(example: &Example, dict: &BilingualDictionary, policy: &CodeSwitchPolicy, draw_index: u64) -> Example {
    code_switch_counted(example, dict, policy, draw_index).0
}

/// `draw_index = epoch * |corpus| + position`; output order follows input.
pub fn augment_corpus(examples: &[Example], dict: &BilingualDictionary, policy: &CodeSwitchPolicy, epoch: u64) -> Vec<Example> {
    augment_corpus_counted(examples, dict, policy, epoch, Exec::default()).0
}

/// As [`augment_corpus`], also returning the number of replaced words.
pub fn augment_corpus_counted(
    examples: &[Example],
    dict: &BilingualDictionary,
    policy: &CodeSwitchPolicy,
    epoch: u64,
    mode: Exec,
) -> (Vec<Example>, usize) {
    let n = examples.len() as u64;
    let pairs = exec::map_indexed(mode, examples, |i, ex| code_switch_counted(ex, dict, policy, epoch * n + i as u64));
    let replaced = pairs.iter().map(|p| p.1).sum();
    (pairs.into_iter().map(|p| p.0).collect(), replaced)
}
