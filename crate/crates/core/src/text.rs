//! Caption normalization, tokenization and vocabulary handling.
//!
//! Every caption that enters training, decoding or scoring goes through
//! [`caption_tokens`], so hypotheses and references are always compared in
//! the same normalized space.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

/// Literal spellings of the reserved tokens, in index order.
pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Longest caption (in words, excluding BOS/EOS) kept for training.
pub const DEFAULT_MAX_LEN: usize = 14;

/// Words seen fewer times than this are mapped to `<unk>`.
pub const DEFAULT_MIN_FREQ: usize = 3;

/// Lowercases, turns every non-alphanumeric character into a separator and
/// collapses runs of whitespace.
pub fn normalize_caption(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for ch in raw.chars() {
        if ch.is_ascii_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(ch.to_ascii_lowercase());
        } else {
            pending_space = true;
        }
    }
    out
}

pub fn tokenize(normalized: &str) -> Vec<String> {
    normalized
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Normalize then tokenize. The single entry point shared by training and
/// evaluation.
pub fn caption_tokens(raw: &str) -> Vec<String> {
    tokenize(&normalize_caption(raw))
}

/// Keeps the token lists with at most `max_len` words.
pub fn filter_by_length(token_lists: Vec<Vec<String>>, max_len: usize) -> Vec<Vec<String>> {
    token_lists
        .into_iter()
        .filter(|t| t.len() <= max_len)
        .collect()
}

fn is_valid_token(token: &str) -> bool {
    !token.is_empty()
        && token
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
}

/// Bidirectional token/index map with the four reserved tokens at 0..4.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_index: HashMap<String, usize>,
    index_to_token: Vec<String>,
    min_freq: usize,
}

impl Vocabulary {
    /// Builds a vocabulary from the tokens whose corpus frequency reaches
    /// `min_freq`. Tokens are ordered by descending frequency, ties broken
    /// lexicographically.
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>], min_freq: usize) -> Result<Self> {
        if min_freq == 0 {
            return Err(Error::InvalidArgument("min_freq must be at least 1".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for tokens in corpus {
            for token in tokens {
                *counts.entry(token.as_ref()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_freq && is_valid_token(t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut vocab = Self::specials_only(min_freq);
        for (token, _) in kept {
            vocab.push(token.to_owned());
        }
        Ok(vocab)
    }

    fn specials_only(min_freq: usize) -> Self {
        let mut vocab = Vocabulary {
            token_to_index: HashMap::new(),
            index_to_token: Vec::new(),
            min_freq,
        };
        for special in SPECIAL_TOKENS {
            vocab.push(special.to_owned());
        }
        vocab
    }

    fn push(&mut self, token: String) {
        self.token_to_index
            .insert(token.clone(), self.index_to_token.len());
        self.index_to_token.push(token);
    }

    pub fn len(&self) -> usize {
        self.index_to_token.len()
    }

    /// True when only the reserved tokens are present.
    pub fn is_empty(&self) -> bool {
        self.len() == SPECIAL_TOKENS.len()
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.token_to_index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.index_to_token.get(index).map(String::as_str)
    }

    /// Non-reserved tokens in index order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.index_to_token[SPECIAL_TOKENS.len()..]
            .iter()
            .map(String::as_str)
    }

    /// One token per line; the line number is the index.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for token in &self.index_to_token {
            let _ = writeln!(out, "{token}");
        }
        out
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < SPECIAL_TOKENS.len() {
            return Err(Error::Format(format!(
                "vocabulary has {} lines, expected at least {}",
                lines.len(),
                SPECIAL_TOKENS.len()
            )));
        }
        for (i, special) in SPECIAL_TOKENS.iter().enumerate() {
            if lines[i] != *special {
                return Err(Error::Format(format!(
                    "vocabulary line {i} is {:?}, expected {special:?}",
                    lines[i]
                )));
            }
        }
        // The threshold is not stored in the file.
        let mut vocab = Self::specials_only(1);
        for (i, token) in lines.iter().enumerate().skip(SPECIAL_TOKENS.len()) {
            if !is_valid_token(token) {
                return Err(Error::Format(format!(
                    "vocabulary line {i}: invalid token {token:?}"
                )));
            }
            if vocab.token_to_index.contains_key(*token) {
                return Err(Error::Format(format!(
                    "vocabulary line {i}: duplicate token {token:?}"
                )));
            }
            vocab.push((*token).to_owned());
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file_string(&text)
    }
}

/// BOS + word indices + EOS, right-padded with PAD.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    indices: Vec<usize>,
    length: usize,
}

impl TokenSequence {
    /// Validates that `indices` is `BOS ... EOS PAD*` with every index below
    /// `vocab_size` and no special token in the word span.
    pub fn from_indices(indices: Vec<usize>, vocab_size: usize) -> Result<Self> {
        if indices.first() != Some(&BOS) {
            return Err(Error::InvalidArgument("sequence must start with BOS".into()));
        }
        let eos = indices
            .iter()
            .position(|&i| i == EOS)
            .ok_or_else(|| Error::InvalidArgument("sequence has no EOS".into()))?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= vocab_size) {
            return Err(Error::InvalidArgument(format!(
                "index {bad} out of range for vocabulary of {vocab_size}"
            )));
        }
        if indices[1..eos].iter().any(|&i| i == PAD || i == BOS) {
            return Err(Error::InvalidArgument(
                "PAD or BOS inside the word span".into(),
            ));
        }
        if indices[eos + 1..].iter().any(|&i| i != PAD) {
            return Err(Error::InvalidArgument("non-PAD index after EOS".into()));
        }
        Ok(TokenSequence {
            length: eos + 1,
            indices,
        })
    }

    /// All indices including padding.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// BOS through EOS inclusive.
    pub fn unpadded(&self) -> &[usize] {
        &self.indices[..self.length]
    }

    /// Count excluding padding.
    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 2
    }

    /// Word indices between BOS and EOS.
    pub fn words(&self) -> &[usize] {
        &self.indices[1..self.length - 1]
    }

    /// Number of next-word predictions made under teacher forcing (words + EOS).
    pub fn prediction_steps(&self) -> usize {
        self.length - 1
    }
}

/// Maps tokens to indices (unknown words become UNK), wraps them in BOS/EOS
/// and pads to `max_len + 2`.
pub fn encode<S: AsRef<str>>(
    tokens: &[S],
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<TokenSequence> {
    if tokens.len() > max_len {
        return Err(Error::InvalidArgument(format!(
            "caption has {} tokens, max_len is {max_len}",
            tokens.len()
        )));
    }
    let mut indices = Vec::with_capacity(max_len + 2);
    indices.push(BOS);
    indices.extend(
        tokens
            .iter()
            .map(|t| vocab.index_of(t.as_ref()).filter(|&i| i > UNK).unwrap_or(UNK)),
    );
    indices.push(EOS);
    let length = indices.len();
    indices.resize(max_len + 2, PAD);
    Ok(TokenSequence { indices, length })
}

/// Inverse of [`encode`] up to UNK lossiness. Stops at the first EOS and
/// drops BOS/PAD.
pub fn decode(indices: &[usize], vocab: &Vocabulary) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for &i in indices {
        let token = vocab.token(i).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "index {i} out of range for vocabulary of {}",
                vocab.len()
            ))
        })?;
        match i {
            EOS => break,
            PAD | BOS => continue,
            _ => out.push(token.to_owned()),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(
            normalize_caption("Two men kicking, VIOLENTLY!"),
            "two men kicking violently"
        );
        assert_eq!(normalize_caption(""), "");
        assert_eq!(normalize_caption("a man's gun"), "a man s gun");
        assert_eq!(normalize_caption("  ...  "), "");
        assert_eq!(normalize_caption("Room 101\tis\nhere"), "room 101 is here");
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("a man is holding a gun"),
            ["a", "man", "is", "holding", "a", "gun"]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("two men kicking violently").len(), 4);
    }

    #[test]
    fn vocabulary_thresholds() {
        let corpus = vec![toks("a a a"), toks("a b b"), toks("c")];
        let v3 = Vocabulary::build(&corpus, 3).unwrap();
        assert_eq!(v3.words().collect::<Vec<_>>(), ["a"]);
        let v2 = Vocabulary::build(&corpus, 2).unwrap();
        assert_eq!(v2.words().collect::<Vec<_>>(), ["a", "b"]);
        let empty: Vec<Vec<String>> = Vec::new();
        assert_eq!(Vocabulary::build(&empty, 3).unwrap().len(), 4);
        assert!(Vocabulary::build(&corpus, 0).is_err());
    }

    #[test]
    fn vocabulary_ties_are_lexicographic() {
        let corpus = vec![toks("zebra apple mango"), toks("mango apple zebra")];
        let v = Vocabulary::build(&corpus, 1).unwrap();
        assert_eq!(v.words().collect::<Vec<_>>(), ["apple", "mango", "zebra"]);
        assert_eq!(v.index_of("apple"), Some(4));
    }

    #[test]
    fn vocabulary_file_round_trip_and_validation() {
        let corpus = vec![toks("a man is holding a gun"), toks("a man")];
        let v = Vocabulary::build(&corpus, 1).unwrap();
        let text = v.to_file_string();
        assert!(text.starts_with("<pad>\n<bos>\n<eos>\n<unk>\n"));
        let back = Vocabulary::from_file_string(&text).unwrap();
        assert_eq!(back.to_file_string(), text);

        assert!(Vocabulary::from_file_string("<bos>\n<pad>\n<eos>\n<unk>\n").is_err());
        assert!(Vocabulary::from_file_string("<pad>\n<bos>\n<eos>\n<unk>\nA\n").is_err());
        assert!(Vocabulary::from_file_string("<pad>\n<bos>\n<eos>\n<unk>\na\na\n").is_err());
        assert!(Vocabulary::from_file_string("<pad>\n<bos>\n").is_err());
    }

    #[test]
    fn length_filter_is_strict_at_the_boundary() {
        let fourteen = vec!["w".to_string(); 14];
        let fifteen = vec!["w".to_string(); 15];
        let kept = filter_by_length(vec![fourteen.clone(), fifteen, Vec::new()], 14);
        assert_eq!(kept, vec![fourteen, Vec::new()]);
    }

    fn gun_vocab() -> Vocabulary {
        // a -> 4, gun -> 5
        Vocabulary::build(&[toks("a a gun")], 1).unwrap()
    }

    #[test]
    fn encode_examples() {
        let v = gun_vocab();
        assert_eq!(v.index_of("a"), Some(4));
        assert_eq!(v.index_of("gun"), Some(5));
        let seq = encode(&toks("a gun"), &v, 4).unwrap();
        assert_eq!(seq.indices(), [1, 4, 5, 2, 0, 0]);
        assert_eq!(seq.len(), 4);
        let seq = encode(&toks("a zzz"), &v, 4).unwrap();
        assert_eq!(seq.indices()[2], UNK);
        let seq = encode::<String>(&[], &v, 3).unwrap();
        assert_eq!(seq.indices(), [1, 2, 0, 0, 0]);
        assert!(encode(&toks("a a a"), &v, 2).is_err());
        // Reserved spellings in a caption are just unknown words.
        let seq = encode(&["<eos>"], &v, 2).unwrap();
        assert_eq!(seq.indices()[1], UNK);
    }

    #[test]
    fn decode_examples() {
        let v = gun_vocab();
        assert_eq!(decode(&[1, 4, 5, 2, 0, 0], &v).unwrap(), ["a", "gun"]);
        assert!(decode(&[1, 2], &v).unwrap().is_empty());
        assert!(decode(&[1, 99], &v).is_err());
    }

    #[test]
    fn token_sequence_validation() {
        assert!(TokenSequence::from_indices(vec![1, 4, 2, 0], 6).is_ok());
        assert!(TokenSequence::from_indices(vec![4, 2], 6).is_err());
        assert!(TokenSequence::from_indices(vec![1, 4], 6).is_err());
        assert!(TokenSequence::from_indices(vec![1, 9, 2], 6).is_err());
        assert!(TokenSequence::from_indices(vec![1, 2, 4], 6).is_err());
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(raw in "\\PC{0,40}") {
            let once = normalize_caption(&raw);
            prop_assert_eq!(normalize_caption(&once), once.clone());
            prop_assert!(once.bytes().all(|b| b == b' ' || b.is_ascii_lowercase() || b.is_ascii_digit()));
            prop_assert!(!once.starts_with(' ') && !once.ends_with(' ') && !once.contains("  "));
        }

        #[test]
        fn encode_decode_round_trip(words in prop::collection::vec(0usize..6, 0..=14)) {
            let pool = ["a", "man", "gun", "fire", "car", "two"];
            let corpus = vec![pool.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
            let v = Vocabulary::build(&corpus, 1).unwrap();
            let tokens: Vec<String> = words.iter().map(|&i| pool[i].to_string()).collect();
            let seq = encode(&tokens, &v, 14).unwrap();
            prop_assert_eq!(seq.indices().len(), 16);
            prop_assert_eq!(decode(seq.indices(), &v).unwrap(), tokens);
        }

        #[test]
        fn vocabulary_respects_min_freq(
            sentences in prop::collection::vec(prop::collection::vec(0usize..8, 0..6), 0..12),
            min_freq in 1usize..4,
        ) {
            let corpus: Vec<Vec<String>> = sentences
                .iter()
                .map(|s| s.iter().map(|i| format!("w{i}")).collect())
                .collect();
            let v = Vocabulary::build(&corpus, min_freq).unwrap();
            let again = Vocabulary::build(&corpus, min_freq).unwrap();
            prop_assert_eq!(&v, &again);
            for word in v.words() {
                let count = corpus.iter().flatten().filter(|t| t.as_str() == word).count();
                prop_assert!(count >= min_freq);
            }
            for (i, t) in (0..v.len()).map(|i| (i, v.token(i).unwrap())) {
                prop_assert_eq!(v.index_of(t), Some(i));
            }
        }
    }
}
