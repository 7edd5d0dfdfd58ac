use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Groups of interchangeable words. Two words are synonyms when they share
/// at least one group.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SynonymLexicon {
    groups: Vec<Vec<String>>,
    membership: HashMap<String, Vec<usize>>,
}

impl SynonymLexicon {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_groups<I, G, S>(groups: I) -> Self
    where
        I: IntoIterator<Item = G>,
        G: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut lexicon = Self::default();
        for group in groups {
            lexicon.add_group(group.into_iter().map(Into::into).collect());
        }
        lexicon
    }

    fn add_group(&mut self, mut words: Vec<String>) {
        words.sort();
        words.dedup();
        if words.is_empty() {
            return;
        }
        let id = self.groups.len();
        for w in &words {
            self.membership.entry(w.clone()).or_default().push(id);
        }
        self.groups.push(words);
    }

    /// One group per line, words separated by single spaces; lines starting
    /// with `#` and blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lexicon = Self::default();
        for (n, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let words: Vec<String> = line.split(' ').map(str::to_owned).collect();
            if words.iter().any(|w| w.is_empty() || w.chars().any(char::is_whitespace)) {
                return Err(Error::Format(format!(
                    "lexicon line {}: words must be separated by single spaces",
                    n + 1
                )));
            }
            lexicon.add_group(words);
        }
        Ok(lexicon)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn groups(&self) -> &[Vec<String>] {
        &self.groups
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn are_synonyms(&self, a: &str, b: &str) -> bool {
        match (self.membership.get(a), self.membership.get(b)) {
            (Some(ga), Some(gb)) => ga.iter().any(|g| gb.contains(g)),
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_lookup() {
        let lex = SynonymLexicon::parse("# vehicles\ncar auto vehicle\n\nman guy\nguy fellow\n").unwrap();
        assert_eq!(lex.groups().len(), 3);
        assert!(lex.are_synonyms("car", "vehicle"));
        assert!(lex.are_synonyms("vehicle", "car"));
        assert!(lex.are_synonyms("man", "guy"));
        assert!(lex.are_synonyms("fellow", "guy"));
        // Not transitive across groups.
        assert!(!lex.are_synonyms("man", "fellow"));
        assert!(!lex.are_synonyms("car", "boat"));
        assert!(SynonymLexicon::parse("car  auto").is_err());
        assert!(SynonymLexicon::empty().is_empty());
    }
}
