//! Text cleaning, vocabulary handling and fixed-length tokenization.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;

const RESERVED: [&str; 4] = [PAD, UNK, CLS, SEP];

/// Default maximum sequence length, special tokens included.
pub const DEFAULT_MAX_LEN: usize = 64;

/// A single post as it appears in a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPost {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub labels: Vec<String>,
}

fn is_kept_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '.' | ',' | '!' | '?' | '\'' | '"')
}

fn is_url(token: &str) -> bool {
    token.contains("://") || token.to_lowercase().starts_with("www.")
}

/// Strip URLs, @-mentions and #-hashtags, drop every character that is not a
/// letter, digit or one of `. , ! ? ' "`, and collapse whitespace.
pub fn clean_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for token in raw.split_whitespace() {
        if token.starts_with('@') || token.starts_with('#') || is_url(token) {
            continue;
        }
        let kept: String = token.chars().filter(|&c| is_kept_char(c)).collect();
        // Filtering can expose a `www.` prefix ("w-ww.x"); drop those too so
        // cleaning stays idempotent.
        if kept.is_empty() || is_url(&kept) {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&kept);
    }
    out
}

/// Maps a cleaned string to content token ids (no special tokens).
///
/// The whitespace [`Vocabulary`] is the default implementation; a subword
/// tokenizer can be dropped in behind the same trait.
pub trait Tokenizer {
    fn content_ids(&self, text: &str) -> Vec<usize>;
    fn vocab_size(&self) -> usize;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(std::iter::empty::<String>())
    }
}

impl Vocabulary {
    /// Builds a vocabulary from content tokens; ids start after the reserved ones.
    /// Duplicate tokens keep their first id.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(tokens.into_iter().map(Into::into))
        {
            if !vocab.index.contains_key(&t) {
                vocab.index.insert(t.clone(), vocab.tokens.len());
                vocab.tokens.push(t);
            }
        }
        vocab
    }

    /// Collects every lowercase whitespace token of the given (cleaned) texts
    /// with frequency ≥ `min_freq`, ordered by descending frequency then
    /// lexicographically.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in text.to_lowercase().split_whitespace() {
                *counts.entry(tok.to_string()).or_default() += 1;
            }
        }
        let mut entries: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq.max(1) && !RESERVED.contains(&t.as_str()))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_tokens(entries.into_iter().map(|(t, _)| t))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED.len()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Content tokens in id order (reserved tokens excluded).
    pub fn content_tokens(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    /// Serialized form: one content token per line, line `n` holds id `n + 4`.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in self.content_tokens() {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn parse(contents: &str) -> Self {
        Self::from_tokens(
            contents
                .lines()
                .filter(|l| !l.is_empty())
                .map(str::to_string),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let contents = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&contents))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the serialized vocabulary, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_file_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl Tokenizer for Vocabulary {
    fn content_ids(&self, text: &str) -> Vec<usize> {
        text.to_lowercase()
            .split_whitespace()
            .map(|t| self.id(t).unwrap_or(UNK_ID))
            .collect()
    }

    fn vocab_size(&self) -> usize {
        self.len()
    }
}

/// Fixed-length token ids with attention mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub mask: Vec<u8>,
    pub true_length: usize,
}

impl TokenSequence {
    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    /// Builds a sequence directly from ids and mask, checking the layout rules.
    pub fn from_parts(ids: Vec<usize>, mask: Vec<u8>) -> Result<Self> {
        if ids.len() != mask.len() {
            return Err(Error::Shape(format!(
                "{} ids but {} mask entries",
                ids.len(),
                mask.len()
            )));
        }
        let true_length = mask.iter().filter(|&&m| m == 1).count();
        let seq = Self {
            ids,
            mask,
            true_length,
        };
        seq.validate()?;
        Ok(seq)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Shape(m.to_string()));
        if self.true_length < 2 {
            return bad("sequence needs at least [CLS] and [SEP]");
        }
        if self.ids[0] != CLS_ID {
            return bad("position 0 must hold [CLS]");
        }
        if self.ids[self.true_length - 1] != SEP_ID {
            return bad("[SEP] must be the last real token");
        }
        for (i, (&id, &m)) in self.ids.iter().zip(&self.mask).enumerate() {
            if (m == 0) != (id == PAD_ID) || (m == 0) != (i >= self.true_length) || m > 1 {
                return bad("mask must be 0 exactly on trailing [PAD] positions");
            }
        }
        Ok(())
    }
}

/// Lowercase, split, look up, add `[CLS]`/`[SEP]`, then truncate or pad to `max_len`.
pub fn tokenize(text: &str, tokenizer: &impl Tokenizer, max_len: usize) -> Result<TokenSequence> {
    if max_len < 2 {
        return Err(Error::InvalidArgument(format!(
            "max sequence length must be at least 2, got {max_len}"
        )));
    }
    let mut content = tokenizer.content_ids(text);
    content.truncate(max_len - 2);
    let true_length = content.len() + 2;

    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS_ID);
    ids.extend(content);
    ids.push(SEP_ID);
    ids.resize(max_len, PAD_ID);

    let mut mask = vec![1u8; true_length];
    mask.resize(max_len, 0);
    Ok(TokenSequence {
        ids,
        mask,
        true_length,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab() -> Vocabulary {
        // "hi" lands on id 5 behind one filler token.
        Vocabulary::from_tokens(["filler", "hi", "a", "b", "c", "d", "e"])
    }

    #[test]
    fn clean_removes_urls_mentions_hashtags() {
        assert_eq!(clean_text("check https://x.co @bob #tag hi"), "check hi");
        assert_eq!(clean_text("see www.example.org now"), "see now");
        assert_eq!(clean_text(""), "");
        assert_eq!(clean_text("a   b\t\tc"), "a b c");
    }

    #[test]
    fn clean_drops_disallowed_characters() {
        assert_eq!(clean_text("hey :) you're *great*!"), "hey you're great!");
        assert_eq!(clean_text("w-ww.x.com tail"), "tail");
        assert_eq!(clean_text("  --  "), "");
    }

    #[test]
    fn tokenize_pads_short_text() {
        let seq = tokenize("hi", &vocab(), 4).unwrap();
        assert_eq!(seq.ids, vec![CLS_ID, 5, SEP_ID, PAD_ID]);
        assert_eq!(seq.mask, vec![1, 1, 1, 0]);
        assert_eq!(seq.true_length, 3);
    }

    #[test]
    fn tokenize_empty_text() {
        let seq = tokenize("", &vocab(), 4).unwrap();
        assert_eq!(seq.ids, vec![CLS_ID, SEP_ID, PAD_ID, PAD_ID]);
        assert_eq!(seq.true_length, 2);
    }

    #[test]
    fn tokenize_truncates_keeping_sep() {
        let v = vocab();
        let seq = tokenize("a b c d e", &v, 4).unwrap();
        assert_eq!(
            seq.ids,
            vec![CLS_ID, v.id("a").unwrap(), v.id("b").unwrap(), SEP_ID]
        );
        assert_eq!(seq.mask, vec![1, 1, 1, 1]);
    }

    #[test]
    fn tokenize_rejects_tiny_max_len() {
        assert!(matches!(
            tokenize("hi", &vocab(), 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn unknown_tokens_map_to_unk_and_case_folds() {
        let seq = tokenize("HI zebra", &vocab(), 5).unwrap();
        assert_eq!(seq.ids, vec![CLS_ID, 5, UNK_ID, SEP_ID, PAD_ID]);
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let v = Vocabulary::build(["b a a", "c a b"], 1);
        assert_eq!(v.content_tokens(), &["a", "b", "c"]);
        assert_eq!(v.id("a"), Some(4));
        let back = Vocabulary::parse(&v.to_file_string());
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
    }

    #[test]
    fn reserved_ids_are_distinct() {
        let v = Vocabulary::default();
        let ids = [v.id(PAD), v.id(UNK), v.id(CLS), v.id(SEP)];
        assert_eq!(
            ids,
            [Some(PAD_ID), Some(UNK_ID), Some(CLS_ID), Some(SEP_ID)]
        );
    }

    #[test]
    fn from_parts_rejects_bad_layout() {
        assert!(TokenSequence::from_parts(vec![CLS_ID, SEP_ID, PAD_ID], vec![1, 1, 0]).is_ok());
        assert!(TokenSequence::from_parts(vec![5, SEP_ID, PAD_ID], vec![1, 1, 0]).is_err());
        assert!(TokenSequence::from_parts(vec![CLS_ID, 5, PAD_ID], vec![1, 1, 0]).is_err());
        assert!(TokenSequence::from_parts(vec![CLS_ID, SEP_ID, PAD_ID], vec![1, 1, 1]).is_err());
    }

    proptest! {
        #[test]
        fn clean_is_idempotent(s in "\\PC{0,60}") {
            let once = clean_text(&s);
            prop_assert_eq!(clean_text(&once), once.clone());
        }

        #[test]
        fn clean_is_idempotent_on_social_text(
            words in proptest::collection::vec("[@#]?(www\\.|https?://)?[a-zA-Z0-9.!?,:/'\\-]{0,8}", 0..12)
        ) {
            let s = words.join(" ");
            let once = clean_text(&s);
            prop_assert_eq!(clean_text(&once), once.clone());
        }

        #[test]
        fn tokenize_layout_holds(s in "[a-e ]{0,40}", max_len in 2usize..12) {
            let v = vocab();
            let seq = tokenize(&s, &v, max_len).unwrap();
            prop_assert_eq!(seq.ids.len(), max_len);
            prop_assert_eq!(seq.ids.iter().filter(|&&i| i == CLS_ID).count(), 1);
            prop_assert!(seq.validate().is_ok());
            prop_assert_eq!(tokenize(&s, &v, max_len).unwrap(), seq);
        }
    }
}
