//! Byte-pair-encoding sub-word tokenizer.
//!
//! Greedy highest-frequency merges over a whitespace-split, lowercased
//! corpus. Word-initial symbols carry a `▁` marker so decoding can restore
//! spaces. Ties between equal-count pairs break lexicographically on the
//! merged string, which makes training a pure function of the corpus.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;

pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Marker prefixed to word-initial symbols.
pub const WORD_MARK: char = '\u{2581}';

/// Rendering of unknown tokens in decoded text.
pub const UNK_RENDER: &str = "<unk>";

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("vocab size {vocab_size} too small: need more than {min} (alphabet + specials)")]
    VocabTooSmall { vocab_size: usize, min: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("malformed vocabulary file: {0}")]
    BadVocabFile(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Lowercase and collapse whitespace; the canonical text form everywhere in
/// the pipeline.
pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub text: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    tokens: Vec<String>,
    merges: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    token_ids: HashMap<String, u32>,
    merges: Vec<(String, String)>,
    merge_rank: HashMap<(String, String), usize>,
}

impl Vocabulary {
    /// Train with greedy highest-frequency merges until `vocab_size` tokens
    /// exist or no pair occurs twice (then stop early with a warning).
    pub fn train<I, T>(corpus: I, vocab_size: usize) -> Result<Self, TokenizerError>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<str>,
    {
        let mut word_counts: HashMap<Vec<String>, u64> = HashMap::new();
        let mut n_words = 0u64;
        for line in corpus {
            for word in normalize(line.as_ref()).split_whitespace() {
                n_words += 1;
                *word_counts.entry(word_symbols(word)).or_default() += 1;
            }
        }
        if n_words == 0 {
            return Err(TokenizerError::EmptyCorpus);
        }

        let mut alphabet: Vec<String> = {
            let mut set: Vec<String> = word_counts
                .keys()
                .flat_map(|syms| syms.iter().cloned())
                .collect();
            set.sort();
            set.dedup();
            set
        };
        // vocab_size == alphabet + specials is allowed and yields a
        // character-level vocabulary with zero merges.
        let min = alphabet.len() + SPECIAL_TOKENS.len();
        if vocab_size < min {
            return Err(TokenizerError::VocabTooSmall { vocab_size, min });
        }

        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.append(&mut alphabet);
        let mut merges: Vec<(String, String)> = Vec::new();
        let mut words: Vec<(Vec<String>, u64)> = {
            let mut v: Vec<_> = word_counts.into_iter().collect();
            v.sort(); // fixed iteration order for the merge loop
            v
        };

        while tokens.len() < vocab_size {
            let mut pair_counts: HashMap<(String, String), u64> = HashMap::new();
            for (syms, count) in &words {
                for w in syms.windows(2) {
                    *pair_counts
                        .entry((w[0].clone(), w[1].clone()))
                        .or_default() += count;
                }
            }
            let best = pair_counts
                .iter()
                .filter(|(_, &c)| c >= 2)
                .map(|(pair, &c)| (c, merged_string(pair), pair.clone()))
                .max_by(|a, b| a.0.cmp(&b.0).then_with(|| b.1.cmp(&a.1)));
            let Some((_, merged, pair)) = best else {
                log::warn!(
                    "corpus exhausted at {} tokens (requested {vocab_size}); stopping merges early",
                    tokens.len()
                );
                break;
            };
            for (syms, _) in &mut words {
                apply_merge(syms, &pair, &merged);
            }
            tokens.push(merged);
            merges.push(pair);
        }

        Ok(Self::from_parts(tokens, merges))
    }

    fn from_parts(tokens: Vec<String>, merges: Vec<(String, String)>) -> Self {
        let token_ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let merge_rank = merges
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        Vocabulary {
            tokens,
            token_ids,
            merges,
            merge_rank,
        }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_ids.get(token).copied()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Short fingerprint over tokens and merges; stored in datastore
    /// metadata to catch vocabulary mismatches.
    pub fn version_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        for (a, b) in &self.merges {
            h.update(a.as_bytes());
            h.update([1u8]);
            h.update(b.as_bytes());
            h.update([2u8]);
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn encode(&self, text: &str) -> TokenSequence {
        let normalized = normalize(text);
        let mut ids = Vec::new();
        for word in normalized.split_whitespace() {
            let mut syms = word_symbols(word);
            loop {
                let best = syms
                    .windows(2)
                    .filter_map(|w| {
                        self.merge_rank
                            .get(&(w[0].clone(), w[1].clone()))
                            .map(|&r| (r, (w[0].clone(), w[1].clone())))
                    })
                    .min_by_key(|(r, _)| *r);
                let Some((_, pair)) = best else { break };
                let merged = merged_string(&pair);
                apply_merge(&mut syms, &pair, &merged);
            }
            for sym in syms {
                ids.push(self.id(&sym).unwrap_or(UNK_ID));
            }
        }
        TokenSequence {
            ids,
            text: Some(normalized),
        }
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            match id {
                PAD_ID | BOS_ID | EOS_ID => continue,
                UNK_ID => out.push_str(UNK_RENDER),
                _ => match self.token(id) {
                    Some(tok) => {
                        for c in tok.chars() {
                            if c == WORD_MARK {
                                out.push(' ');
                            } else {
                                out.push(c);
                            }
                        }
                    }
                    None => out.push_str(UNK_RENDER),
                },
            }
        }
        out.trim_start().to_string()
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        let file = VocabFile {
            version: 1,
            tokens: self.tokens.clone(),
            merges: self.merges.clone(),
        };
        let json = serde_json::to_string_pretty(&file)
            .map_err(|e| TokenizerError::BadVocabFile(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        let json = std::fs::read_to_string(path)?;
        let file: VocabFile =
            serde_json::from_str(&json).map_err(|e| TokenizerError::BadVocabFile(e.to_string()))?;
        if file.version != 1 {
            return Err(TokenizerError::BadVocabFile(format!(
                "unsupported vocabulary version {}",
                file.version
            )));
        }
        if file.tokens.len() < SPECIAL_TOKENS.len()
            || file.tokens[..4] != SPECIAL_TOKENS.map(String::from)
        {
            return Err(TokenizerError::BadVocabFile(
                "special tokens missing or reordered".into(),
            ));
        }
        for (a, b) in &file.merges {
            let merged = format!("{a}{b}");
            if !file.tokens.contains(&merged) {
                return Err(TokenizerError::BadVocabFile(format!(
                    "merge ({a}, {b}) has no merged token"
                )));
            }
        }
        Ok(Self::from_parts(file.tokens, file.merges))
    }
}

fn word_symbols(word: &str) -> Vec<String> {
    word.chars()
        .enumerate()
        .map(|(i, c)| {
            if i == 0 {
                format!("{WORD_MARK}{c}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

fn merged_string(pair: &(String, String)) -> String {
    format!("{}{}", pair.0, pair.1)
}

fn apply_merge(syms: &mut Vec<String>, pair: &(String, String), merged: &str) {
    let mut i = 0;
    while i + 1 < syms.len() {
        if syms[i] == pair.0 && syms[i + 1] == pair.1 {
            syms[i] = merged.to_string();
            syms.remove(i + 1);
        } else {
            i += 1;
        }
    }
}
