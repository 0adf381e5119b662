//! Byte-level BPE tokenizer in the dual-encoder text tower's format.
//!
//! The asset is a merges file: an optional `#version` header line followed by
//! one `left right` merge per line, highest priority first. The id space is
//! the 256 byte symbols, the same symbols with the `</w>` end-of-word marker,
//! one id per merge, then the start/end-of-text specials.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CONTEXT_WINDOW: usize = 76;
pub const PAD_ID: u32 = 0;
const MAX_MERGES: usize = 49152 - 256 - 2;
const END_OF_WORD: &str = "</w>";

/// Fixed-length token ids; positions at or past `length` hold [`PAD_ID`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub length: usize,
}

/// Byte-to-symbol table indexed by byte value, plus the symbols in id order
/// (printable bytes first, then the remapped control bytes).
fn bytes_to_unicode() -> (Vec<char>, Vec<char>) {
    let mut printable: Vec<u32> = (b'!' as u32..=b'~' as u32)
        .chain(0xA1..=0xAC)
        .chain(0xAE..=0xFF)
        .collect();
    let mut chars: Vec<u32> = printable.clone();
    let mut extra = 0;
    for b in 0..256u32 {
        if !printable.contains(&b) {
            printable.push(b);
            chars.push(256 + extra);
            extra += 1;
        }
    }
    let mut table = vec!['\0'; 256];
    let mut ordered = Vec::with_capacity(256);
    for (b, c) in printable.into_iter().zip(chars) {
        let c = char::from_u32(c).expect("valid code point");
        table[b as usize] = c;
        ordered.push(c);
    }
    (table, ordered)
}

pub struct BpeTokenizer {
    byte_encoder: Vec<char>,
    encoder: HashMap<String, u32>,
    ranks: HashMap<(String, String), usize>,
    pattern: Regex,
    cache: Mutex<HashMap<String, Vec<u32>>>,
}

impl std::fmt::Debug for BpeTokenizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BpeTokenizer")
            .field("vocab_size", &self.vocab_size())
            .finish()
    }
}

impl BpeTokenizer {
    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::VocabularyMissing(path.to_path_buf()));
        }
        Self::from_merges(&fs::read_to_string(path)?)
    }

    pub fn from_merges(text: &str) -> Result<Self> {
        let (byte_encoder, symbols) = bytes_to_unicode();
        let mut vocab: Vec<String> = symbols.iter().map(|c| c.to_string()).collect();
        vocab.extend(symbols.iter().map(|c| format!("{c}{END_OF_WORD}")));
        let mut ranks = HashMap::new();
        let lines = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .skip_while(|l| l.starts_with("#version"))
            .take(MAX_MERGES);
        for (rank, line) in lines.enumerate() {
            let mut parts = line.split_whitespace();
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::MalformedRow {
                    row: rank + 2,
                    reason: format!("merge line `{line}` must hold exactly two symbols"),
                });
            };
            vocab.push(format!("{a}{b}"));
            ranks.insert((a.to_string(), b.to_string()), rank);
        }
        vocab.push("<|startoftext|>".into());
        vocab.push("<|endoftext|>".into());
        let encoder = vocab.into_iter().enumerate().map(|(i, s)| (s, i as u32)).collect();
        let pattern = Regex::new(
            r"(?i)<\|startoftext\|>|<\|endoftext\|>|'s|'t|'re|'ve|'m|'ll|'d|[\p{L}]+|[\p{N}]|[^\s\p{L}\p{N}]+",
        )
        .expect("static pattern");
        Ok(Self {
            byte_encoder,
            encoder,
            ranks,
            pattern,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.encoder.len()
    }

    fn bpe(&self, token: &str) -> Vec<String> {
        let chars: Vec<char> = token.chars().collect();
        let mut word: Vec<String> = chars.iter().map(|c| c.to_string()).collect();
        if let Some(last) = word.last_mut() {
            last.push_str(END_OF_WORD);
        }
        loop {
            let best = word
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|r| (*r, w)))
                .min_by_key(|(r, _)| *r)
                .map(|(_, w)| (w[0].clone(), w[1].clone()));
            let Some((first, second)) = best else { break };
            let mut merged = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && word[i] == first && word[i + 1] == second {
                    merged.push(format!("{first}{second}"));
                    i += 2;
                } else {
                    merged.push(word[i].clone());
                    i += 1;
                }
            }
            word = merged;
            if word.len() == 1 {
                break;
            }
        }
        word
    }

    /// Raw BPE ids for `text`, without special tokens or padding.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let cleaned = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        let mut ids = Vec::new();
        for m in self.pattern.find_iter(&cleaned) {
            let token: String = m.as_str().bytes().map(|b| self.byte_encoder[b as usize]).collect();
            if let Some(hit) = self.cache.lock().unwrap().get(&token) {
                ids.extend_from_slice(hit);
                continue;
            }
            let pieces: Vec<u32> = self.bpe(&token).iter().map(|p| self.encoder[p.as_str()]).collect();
            ids.extend_from_slice(&pieces);
            self.cache.lock().unwrap().insert(token, pieces);
        }
        ids
    }

    /// Tokenizes and truncates or zero-pads to exactly `context_window` ids.
    pub fn tokenize_caption(&self, caption: &str, context_window: usize) -> Result<TokenSequence> {
        if context_window == 0 {
            return Err(Error::ConfigInvalid("context window must be at least 1".into()));
        }
        let mut ids = self.encode(caption);
        ids.truncate(context_window);
        let length = ids.len();
        ids.resize(context_window, PAD_ID);
        Ok(TokenSequence { ids, length })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::path::PathBuf;

    fn fixture() -> BpeTokenizer {
        let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/bpe_merges.txt");
        BpeTokenizer::from_file(&path).unwrap()
    }

    // Expected ids were produced by an independent reference BPE tokenizer run
    // over the same merges file (start/end markers removed).
    #[test]
    fn matches_reference_ids() {
        let tok = fixture();
        assert_eq!(tok.vocab_size(), 628);
        assert_eq!(
            tok.encode("x-ray of the chest showing a small nodule on the left side."),
            vec![343, 268, 545, 522, 513, 542, 523, 320, 568, 567, 516, 513, 533, 524, 269]
        );
        assert_eq!(tok.encode("the chest"), vec![513, 542]);
        assert_eq!(
            tok.encode("Axial CT, 2019: lésion?  It's   large!"),
            vec![
                64, 87, 72, 64, 331, 551, 267, 273, 271, 272, 280, 281, 75, 127, 102, 517, 516, 286, 72, 339, 6, 338,
                596, 256
            ]
        );
    }

    #[test]
    fn short_caption_is_zero_padded() {
        let tok = fixture();
        let seq = tok
            .tokenize_caption("x-ray of the chest showing a small nodule on the left side.", 76)
            .unwrap();
        assert_eq!(seq.ids.len(), 76);
        assert_eq!(seq.length, 15);
        assert!(seq.ids[15..].iter().all(|&i| i == PAD_ID));
    }

    #[test]
    fn long_caption_is_truncated() {
        let tok = fixture();
        let caption = ["mri of the brain showing a large mass on the right side."; 6].join(" ");
        let full = tok.encode(&caption);
        assert_eq!(full.len(), 78);
        let seq = tok.tokenize_caption(&caption, 76).unwrap();
        assert_eq!(seq.length, 76);
        assert_eq!(seq.ids, full[..76]);
    }

    #[test]
    fn empty_caption_is_all_padding() {
        let seq = fixture().tokenize_caption("", 76).unwrap();
        assert_eq!(seq.length, 0);
        assert_eq!(seq.ids, vec![PAD_ID; 76]);
    }

    #[test]
    fn missing_asset() {
        assert!(matches!(
            BpeTokenizer::from_file(Path::new("/nonexistent/merges.txt")),
            Err(Error::VocabularyMissing(_))
        ));
    }

    proptest! {
        #[test]
        fn window_is_exact(text in "\\PC{0,200}", window in 1usize..100) {
            let tok = fixture();
            let seq = tok.tokenize_caption(&text, window).unwrap();
            prop_assert_eq!(seq.ids.len(), window);
            prop_assert!(seq.length <= window);
            prop_assert!(seq.ids[seq.length..].iter().all(|&i| i == PAD_ID));
            prop_assert!(seq.ids.iter().all(|&i| (i as usize) < tok.vocab_size()));
        }
    }
}
