use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Source word -> (language -> translation).
///
/// Keys are lowercased; translations keep their surface form and are always
/// single words.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BilingualDictionary {
    entries: BTreeMap<String, BTreeMap<String, String>>,
    /// Entries rejected at load time because the translation had whitespace.
    pub skipped_multiword: usize,
}

impl BilingualDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one entry; later entries win. Multi-word translations are
    /// rejected and counted.
    pub fn insert(&mut self, source: &str, lang: &str, translation: &str) -> bool {
        if translation.is_empty() || translation.chars().any(char::is_whitespace) {
            self.skipped_multiword += 1;
            return false;
        }
        self.entries
            .entry(source.to_lowercase())
            .or_default()
            .insert(lang.to_string(), translation.to_string());
        true
    }

    pub fn lookup(&self, word: &str, lang: &str) -> Option<&str> {
        self.translations(word)?.get(lang).map(String::as_str)
    }

    pub fn translations(&self, word: &str) -> Option<&BTreeMap<String, String>> {
        self.entries.get(&word.to_lowercase())
    }

    /// Number of (source, language) pairs.
    pub fn len(&self) -> usize {
        self.entries.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn languages(&self) -> Vec<String> {
        let mut langs: Vec<String> = self.entries.values().flat_map(|m| m.keys().cloned()).collect();
        langs.sort();
        langs.dedup();
        langs
    }

    /// Every translated word, for vocabulary building.
    pub fn target_words(&self) -> impl Iterator<Item = &str> {
        self.entries.values().flat_map(|m| m.values().map(String::as_str))
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (src, m) in &self.entries {
            for (lang, tr) in m {
                let _ = writeln!(s, "{src}\t{lang}\t{tr}");
            }
        }
        s
    }
}

pub fn parse_dictionary(text: &str, origin: &str) -> Result<BilingualDictionary> {
    let mut dict = BilingualDictionary::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 || cols.iter().any(|c| c.is_empty()) {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg: format!("expected 3 non-empty tab-separated columns, found {}", cols.len()),
            });
        }
        dict.insert(cols[0], cols[1], cols[2]);
    }
    Ok(dict)
}

pub fn load_dictionary(path: impl AsRef<Path>) -> Result<BilingualDictionary> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dictionary(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_lookup_case_normalised() {
        let d = parse_dictionary("Cheap\tde\tBillig\n", "t").unwrap();
        assert_eq!(d.lookup("cheap", "de"), Some("Billig"));
        assert_eq!(d.lookup("CHEAP", "de"), Some("Billig"));
        assert_eq!(d.lookup("cheap", "fr"), None);
    }

    #[test]
    fn multiword_rules() {
        let d = parse_dictionary("new york\tde\tneuyork\ncheap\tde\tnicht teuer\n# comment\n", "t").unwrap();
        assert_eq!(d.lookup("new york", "de"), Some("neuyork"));
        assert_eq!(d.lookup("cheap", "de"), None);
        assert_eq!(d.skipped_multiword, 1);
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn last_entry_wins() {
        let d = parse_dictionary("a\tde\tx\na\tde\ty\n", "t").unwrap();
        assert_eq!(d.lookup("a", "de"), Some("y"));
    }

    #[test]
    fn wrong_column_count() {
        match parse_dictionary("a\tde\tx\nb\tde\n", "t") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
