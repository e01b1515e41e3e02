//! Corpus file format.
//!
//! One token per line as `word<TAB>tag`, then `#intent=<label>` and
//! `#lang=<code>`. A blank line (or end of file) closes the example.

use std::fmt::Write as _;
use std::path::Path;

use super::example::{parse_bio, Example};
use super::vocab::LabelVocab;
use crate::error::{Error, Result};

pub fn load_corpus(path: impl AsRef<Path>) -> Result<(Vec<Example>, LabelVocab)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let examples = parse_corpus(&text, &path.display().to_string())?;
    let vocab = LabelVocab::from_examples(&examples);
    Ok((examples, vocab))
}

/// Loads only the examples; used for dev/test splits whose labels must come
/// from the training vocabulary.
pub fn read_examples(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, &path.display().to_string())
}

#[derive(Default)]
struct Pending {
    words: Vec<String>,
    tags: Vec<String>,
    intent: Option<String>,
    lang: Option<String>,
    start: usize,
}

impl Pending {
    fn is_empty(&self) -> bool {
        self.words.is_empty() && self.intent.is_none() && self.lang.is_none()
    }

    fn finish(self, origin: &str) -> Result<Example> {
        let err = |msg: &str| Error::Parse {
            path: origin.to_string(),
            line: self.start,
            msg: msg.to_string(),
        };
        if self.words.is_empty() {
            return Err(err("example has no tokens"));
        }
        let intent = self.intent.clone().ok_or_else(|| err("missing #intent= line"))?;
        let lang = self.lang.clone().ok_or_else(|| err("missing #lang= line"))?;
        Ok(Example {
            words: self.words,
            slot_tags: self.tags,
            intent,
            language: lang,
        })
    }
}

pub fn parse_corpus(text: &str, origin: &str) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    let mut cur = Pending::default();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let err = |msg: String| Error::Parse {
            path: origin.to_string(),
            line: line_no,
            msg,
        };
        if line.trim().is_empty() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur).finish(origin)?);
            }
            continue;
        }
        if cur.is_empty() {
            cur.start = line_no;
        }
        if let Some(v) = line.strip_prefix("#intent=") {
            if v.is_empty() {
                return Err(err("empty intent label".into()));
            }
            cur.intent = Some(v.to_string());
        } else if let Some(v) = line.strip_prefix("#lang=") {
            if v.is_empty() {
                return Err(err("empty language code".into()));
            }
            cur.lang = Some(v.to_string());
        } else {
            if cur.intent.is_some() || cur.lang.is_some() {
                return Err(err("token line after #intent/#lang; missing blank line?".into()));
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 2 || cols[0].is_empty() {
                return Err(err(format!(
                    "expected `word<TAB>tag`, found {} column(s)",
                    cols.len()
                )));
            }
            parse_bio(cols[1]).map_err(|e| err(e.to_string()))?;
            cur.words.push(cols[0].to_string());
            cur.tags.push(cols[1].to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur.finish(origin)?);
    }
    Ok(out)
}

pub fn format_corpus(examples: &[Example]) -> String {
    let mut s = String::new();
    for ex in examples {
        for (w, t) in ex.words.iter().zip(&ex.slot_tags) {
            let _ = writeln!(s, "{w}\t{t}");
        }
        let _ = writeln!(s, "#intent={}", ex.intent);
        let _ = writeln!(s, "#lang={}", ex.language);
        s.push('\n');
    }
    s
}

pub fn write_corpus(path: impl AsRef<Path>, examples: &[Example]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_corpus(examples)).map_err(|e| Error::io(path, e))
}
