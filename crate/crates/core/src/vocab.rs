//! Closed word vocabulary with a character fallback. Subword pieces never
//! leave the sequence-model boundary: callers encode words and decode words.

use std::collections::{BTreeSet, HashMap};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{GmeError, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const SEP: u32 = 2;
pub const END_OF_RESPONSE: u32 = 3;
pub const MASK_SPAN: u32 = 4;

/// Rendering of a merged mask placeholder in templates.
pub const MASK_SPAN_TOKEN: &str = "[MASK-SPAN]";
const RESERVED: [&str; 5] = ["[PAD]", "[UNK]", "[SEP]", "[EOR]", MASK_SPAN_TOKEN];
const CONTINUATION: &str = "##";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from every word in `words`, plus start and
    /// continuation pieces for every character seen.
    pub fn build<'a>(words: impl IntoIterator<Item = &'a String>) -> Self {
        let mut full = BTreeSet::new();
        let mut chars = BTreeSet::new();
        for w in words {
            chars.extend(w.chars());
            if !w.starts_with(CONTINUATION) && !RESERVED.contains(&w.as_str()) {
                full.insert(w.clone());
            }
        }
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(full);
        for c in &chars {
            let start = c.to_string();
            if !tokens.contains(&start) {
                tokens.push(start);
            }
        }
        tokens.extend(chars.iter().map(|c| format!("{CONTINUATION}{c}")));
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Hex SHA-256 over the token list; binds checkpoints to a vocabulary.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn encode_word(&self, word: &str, out: &mut Vec<u32>) {
        if let Some(id) = self.id(word).filter(|&id| id > MASK_SPAN || word == MASK_SPAN_TOKEN) {
            out.push(id);
            return;
        }
        for (i, c) in word.chars().enumerate() {
            let piece = if i == 0 {
                c.to_string()
            } else {
                format!("{CONTINUATION}{c}")
            };
            out.push(self.id(&piece).unwrap_or(UNK));
        }
    }

    /// Token ids for `words` and, per word, the range of its pieces.
    pub fn encode(&self, words: &[String]) -> (Vec<u32>, Vec<Range<usize>>) {
        let mut ids = Vec::with_capacity(words.len());
        let mut spans = Vec::with_capacity(words.len());
        for w in words {
            let start = ids.len();
            self.encode_word(w, &mut ids);
            spans.push(start..ids.len());
        }
        (ids, spans)
    }

    /// True for pieces that extend the previous word.
    pub fn is_continuation(&self, id: u32) -> bool {
        self.token(id).len() > CONTINUATION.len() && self.token(id).starts_with(CONTINUATION)
    }

    /// Reassembles words from piece ids.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for &id in ids {
            let t = self.token(id);
            match t.strip_prefix(CONTINUATION).filter(|rest| !rest.is_empty()) {
                Some(rest) if !out.is_empty() => out.last_mut().unwrap().push_str(rest),
                _ => out.push(t.to_string()),
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s).map_err(|e| GmeError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| GmeError::io(path, e))?;
        let v: Vocab = serde_json::from_str(&raw)?;
        Ok(Self::from_tokens(v.tokens))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::words;
    use proptest::prelude::*;

    fn vocab() -> Vocab {
        let w = words("i like apples . the weather is nice");
        Vocab::build(&w)
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = vocab();
        assert_eq!(v.id("[SEP]"), Some(SEP));
        assert_eq!(v.id("[EOR]"), Some(END_OF_RESPONSE));
        assert_eq!(v.id(MASK_SPAN_TOKEN), Some(MASK_SPAN));
    }

    #[test]
    fn known_words_are_single_tokens() {
        let v = vocab();
        let (ids, spans) = v.encode(&words("i like apples ."));
        assert_eq!(ids.len(), 4);
        assert_eq!(spans, vec![0..1, 1..2, 2..3, 3..4]);
        assert_eq!(v.decode(&ids), words("i like apples ."));
    }

    #[test]
    fn unknown_words_fall_back_to_characters() {
        let v = vocab();
        let (ids, spans) = v.encode(&words("i like plates"));
        assert_eq!(spans[2], 2..8);
        assert_eq!(v.decode(&ids), words("i like plates"));
    }

    #[test]
    fn hash_tracks_content() {
        assert_eq!(vocab().hash(), vocab().hash());
        assert_ne!(vocab().hash(), Vocab::build(&words("other words")).hash());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.json");
        let v = vocab();
        v.save(&p).unwrap();
        let back = Vocab::load(&p).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id("apples"), v.id("apples"));
    }

    proptest! {
        #[test]
        fn round_trip_over_seen_characters(ws in proptest::collection::vec("[a-z.]{1,8}", 0..12)) {
            let v = Vocab::build(&words("abcdefghijklmnopqrstuvwxyz . i like"));
            let (ids, spans) = v.encode(&ws);
            prop_assert_eq!(spans.len(), ws.len());
            prop_assert_eq!(v.decode(&ids), ws);
        }
    }
}
