use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::tokenize::tokenize;
use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token ids for one text, truncated to `max_len`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<u32>,
    /// Real tokens after truncation; equals `ids.len()`.
    pub length: usize,
    /// The text produced no tokens and was encoded as a single UNK.
    pub was_empty: bool,
    pub truncated: bool,
    pub unknown: usize,
}

/// Dense token-id mapping with PAD = 0 and UNK = 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    fn from_tokens(words: Vec<String>) -> Result<Self> {
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        tokens.extend(words);
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Data(format!("duplicate vocab token `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Keeps tokens seen at least `min_freq` times, most frequent first
    /// (ties lexicographic), capped at `max_size` entries including PAD
    /// and UNK.
    pub fn build<'a, I>(corpus: I, min_freq: usize, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut docs = 0usize;
        for text in corpus {
            docs += 1;
            for tok in tokenize(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if docs == 0 {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        if max_size < 2 {
            return Err(Error::config("max_size", "must leave room for PAD and UNK"));
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq.max(1) && t != PAD_TOKEN && t != UNK_TOKEN)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        kept.truncate(max_size - 2);
        Self::from_tokens(kept.into_iter().map(|(t, _)| t).collect())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, text: &str, max_len: usize) -> Encoding {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Encoding {
                ids: vec![UNK_ID],
                length: 1,
                was_empty: true,
                truncated: false,
                unknown: 1,
            };
        }
        let truncated = tokens.len() > max_len;
        let ids: Vec<u32> = tokens.iter().take(max_len.max(1)).map(|t| self.id(t)).collect();
        Encoding {
            length: ids.len(),
            unknown: ids.iter().filter(|&&i| i == UNK_ID).count(),
            ids,
            was_empty: false,
            truncated,
        }
    }

    /// One token per line; line `i` holds id `i + 2`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens[2..] {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// FNV-1a over the token list; identifies a vocabulary in checkpoints.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.tokens {
            for b in t.bytes().chain(std::iter::once(b'\n')) {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(v: &Vocab) -> Vec<&str> {
        (0..v.len() as u32).map(|i| v.token(i).unwrap()).collect()
    }

    #[test]
    fn frequency_then_lexicographic_order() {
        let v = Vocab::build(["a b", "b c"], 1, 100).unwrap();
        assert_eq!(words(&v), vec![PAD_TOKEN, UNK_TOKEN, "b", "a", "c"]);
        let v = Vocab::build(["a b", "b c"], 2, 100).unwrap();
        assert_eq!(words(&v), vec![PAD_TOKEN, UNK_TOKEN, "b"]);
        let v = Vocab::build(["a b", "b c"], 1, 3).unwrap();
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(Vocab::build(std::iter::empty::<&str>(), 1, 10).is_err());
    }

    #[test]
    fn encode_cases() {
        let v = Vocab::build(["i am alive", "i am here"], 1, 100).unwrap();
        let e = v.encode("I am alive", 128);
        assert_eq!(e.length, 3);
        assert_eq!(e.ids.len(), 3);
        assert!(e.ids.iter().all(|&i| i >= 2));

        let e = v.encode("zebra", 128);
        assert_eq!(e.ids, vec![UNK_ID]);
        assert!(!e.was_empty);

        let e = v.encode("  ", 128);
        assert_eq!(e.ids, vec![UNK_ID]);
        assert!(e.was_empty);

        let long = vec!["am"; 500].join(" ");
        let e = v.encode(&long, 128);
        assert_eq!(e.length, 128);
        assert!(e.truncated);
    }

    #[test]
    fn text_file_round_trip() {
        let v = Vocab::build(["the cat sat", "the dog, the end."], 1, 100).unwrap();
        let text = v.to_text();
        assert_eq!(text.lines().next(), Some("the"));
        let back = Vocab::from_text(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.fingerprint(), v.fingerprint());
        assert!(Vocab::from_text("a\na\n").is_err());
    }
}
