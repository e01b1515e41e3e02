use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::example::Example;
use crate::error::{Error, Result};

/// Dense string <-> index map in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Interner {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Interner {
    fn from(names: Vec<String>) -> Self {
        let mut out = Interner::default();
        for n in names {
            out.insert(&n);
        }
        out
    }
}

impl From<Interner> for Vec<String> {
    fn from(i: Interner) -> Self {
        i.names
    }
}

impl Interner {
    pub fn insert(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), self.names.len() - 1);
        self.names.len() - 1
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, i: usize) -> Option<&str> {
        self.names.get(i).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Intent and slot-tag inventories shared by every language.
///
/// `O` always occupies slot index 0; other labels follow in first-occurrence
/// order over the training split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocab {
    pub intents: Interner,
    pub slot_tags: Interner,
}

impl LabelVocab {
    pub fn from_examples<'e>(examples: impl IntoIterator<Item = &'e Example>) -> Self {
        let mut v = LabelVocab::default();
        let mut any = false;
        for ex in examples {
            if !any {
                v.slot_tags.insert("O");
                any = true;
            }
            v.intents.insert(&ex.intent);
            for t in &ex.slot_tags {
                v.slot_tags.insert(t);
            }
        }
        v
    }

    pub fn n_intents(&self) -> usize {
        self.intents.len()
    }

    pub fn n_slot_tags(&self) -> usize {
        self.slot_tags.len()
    }

    pub fn intent_index(&self, name: &str) -> Result<usize> {
        self.intents.get(name).ok_or_else(|| Error::UnknownLabel {
            kind: "intent",
            label: name.to_string(),
        })
    }

    pub fn slot_index(&self, name: &str) -> Result<usize> {
        self.slot_tags.get(name).ok_or_else(|| Error::UnknownLabel {
            kind: "slot",
            label: name.to_string(),
        })
    }

    pub fn intent_name(&self, i: usize) -> &str {
        self.intents.name(i).expect("intent index in range")
    }

    pub fn slot_name(&self, i: usize) -> &str {
        self.slot_tags.name(i).expect("slot index in range")
    }

    /// Gold indices for one example; unknown labels are an error.
    pub fn encode(&self, ex: &Example) -> Result<(usize, Vec<usize>)> {
        let intent = self.intent_index(&ex.intent)?;
        let slots = ex
            .slot_tags
            .iter()
            .map(|t| self.slot_index(t))
            .collect::<Result<_>>()?;
        Ok((intent, slots))
    }
}
