use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One labeled utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub words: Vec<String>,
    pub slot_tags: Vec<String>,
    pub intent: String,
    pub language: String,
}

impl Example {
    pub fn new(words: Vec<String>, slot_tags: Vec<String>, intent: impl Into<String>, language: impl Into<String>) -> Result<Self> {
        let ex = Self {
            words,
            slot_tags,
            intent: intent.into(),
            language: language.into(),
        };
        ex.validate()?;
        Ok(ex)
    }

    pub fn validate(&self) -> Result<()> {
        if self.words.is_empty() || self.words.len() != self.slot_tags.len() {
            return Err(Error::Alignment {
                left: self.words.len(),
                right: self.slot_tags.len(),
            });
        }
        for tag in &self.slot_tags {
            parse_bio(tag)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// A parsed BIO tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bio<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

/// Parses `O`, `B-<label>` or `I-<label>` with a non-empty label.
pub fn parse_bio(tag: &str) -> Result<Bio<'_>> {
    if tag == "O" {
        return Ok(Bio::Outside);
    }
    let bad = || Error::MalformedTag(tag.to_string());
    let (prefix, label) = tag.split_once('-').ok_or_else(bad)?;
    if label.is_empty() || label.chars().any(char::is_whitespace) {
        return Err(bad());
    }
    match prefix {
        "B" => Ok(Bio::Begin(label)),
        "I" => Ok(Bio::Inside(label)),
        _ => Err(bad()),
    }
}
