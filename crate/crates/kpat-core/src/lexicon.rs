//! Pronunciation lexicon and phoneme utilities.
//!
//! Words map to ARPAbet-style phoneme sequences (CMU-dictionary file
//! layout). Lookups are case-insensitive; words outside the dictionary fall
//! back to a fixed letter-to-phoneme rule table so phonemization is total.
//! A class-aware edit distance over phonemes drives the nearest-word search
//! used both by the error simulator and anywhere a "similar sounding word"
//! is needed.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::tokenizer::{BOS_ID, EOS_ID, PAD_ID, UNK_ID};

/// ARPAbet phoneme inventory (no stress markers).
pub const PHONEMES: [&str; 39] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY", "F", "G", "HH",
    "IH", "IY", "JH", "K", "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH", "T", "TH", "UH",
    "UW", "V", "W", "Y", "Z", "ZH",
];

/// Id of the word-boundary marker in the phone embedding space. Ids 0..=3
/// mirror the text specials (pad/bos/eos/unk) so both encoders share one
/// convention; real phonemes start at [`PHONE_BASE`].
pub const WORD_BOUNDARY_ID: u32 = 4;
pub const PHONE_BASE: u32 = 5;

/// Total phone-embedding vocabulary: 4 specials + boundary + inventory.
pub const PHONE_VOCAB: usize = PHONE_BASE as usize + PHONEMES.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhonemeClass {
    Vowel,
    Stop,
    Fricative,
    Nasal,
    Liquid,
}

/// Class of an inventory index (0-based into [`PHONEMES`]).
pub fn phoneme_class(p: u8) -> PhonemeClass {
    use PhonemeClass::*;
    match PHONEMES[p as usize] {
        "AA" | "AE" | "AH" | "AO" | "AW" | "AY" | "EH" | "ER" | "EY" | "IH" | "IY" | "OW"
        | "OY" | "UH" | "UW" => Vowel,
        "B" | "CH" | "D" | "G" | "JH" | "K" | "P" | "T" => Stop,
        "DH" | "F" | "HH" | "S" | "SH" | "TH" | "V" | "Z" | "ZH" => Fricative,
        "M" | "N" | "NG" => Nasal,
        "L" | "R" | "W" | "Y" => Liquid,
        other => unreachable!("unknown phoneme {other}"),
    }
}

pub fn phoneme_index(symbol: &str) -> Option<u8> {
    PHONEMES.iter().position(|&p| p == symbol).map(|i| i as u8)
}

pub fn phoneme_symbol(p: u8) -> &'static str {
    PHONEMES[p as usize]
}

/// Inventory index -> phone-embedding id.
pub fn phone_embedding_id(p: u8) -> u32 {
    PHONE_BASE + p as u32
}

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    BadLine { line: usize, message: String },
}

/// Phoneme ids in embedding space with word-boundary markers between words.
/// Boundaries are never adjacent and never lead or trail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeSequence {
    pub ids: Vec<u32>,
}

impl PhonemeSequence {
    /// Human-readable form, `|` between words.
    pub fn render(&self) -> String {
        self.ids
            .iter()
            .map(|&id| match id {
                WORD_BOUNDARY_ID => "|".to_string(),
                PAD_ID => "<pad>".to_string(),
                BOS_ID => "<s>".to_string(),
                EOS_ID => "</s>".to_string(),
                UNK_ID => "<unk>".to_string(),
                _ => phoneme_symbol((id - PHONE_BASE) as u8).to_string(),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    /// word -> pronunciation variants in file order; first is primary.
    entries: HashMap<String, Vec<Vec<u8>>>,
    /// (pronunciation, word) pairs bucketed by pronunciation length, each
    /// bucket sorted by word for deterministic tie-breaks.
    by_length: Vec<Vec<(Vec<u8>, String)>>,
}

impl Lexicon {
    /// Parse a CMU-style lexicon file: `WORD  PH PH PH` per line, `;;;`
    /// comments. Duplicate words keep all variants, first line is primary.
    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        let mut lex = Lexicon::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with(";;;") {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts.next().unwrap().to_lowercase();
            let mut pron = Vec::new();
            for sym in parts {
                match phoneme_index(sym) {
                    Some(p) => pron.push(p),
                    None => {
                        return Err(LexiconError::BadLine {
                            line: i + 1,
                            message: format!("unknown phoneme symbol {sym:?}"),
                        })
                    }
                }
            }
            if pron.is_empty() {
                return Err(LexiconError::BadLine {
                    line: i + 1,
                    message: "entry has no phonemes".into(),
                });
            }
            lex.entries.entry(word).or_default().push(pron);
        }
        lex.rebuild_buckets();
        Ok(lex)
    }

    fn rebuild_buckets(&mut self) {
        self.by_length.clear();
        let mut flat: Vec<(Vec<u8>, String)> = Vec::new();
        for (word, prons) in &self.entries {
            for pron in prons {
                flat.push((pron.clone(), word.clone()));
            }
        }
        flat.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        for (pron, word) in flat {
            let len = pron.len();
            if self.by_length.len() <= len {
                self.by_length.resize(len + 1, Vec::new());
            }
            self.by_length[len].push((pron, word));
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(&word.to_lowercase())
    }

    /// All pronunciation variants of a word (inventory indices), primary
    /// first. Case-insensitive.
    pub fn lookup(&self, word: &str) -> Option<&[Vec<u8>]> {
        self.entries.get(&word.to_lowercase()).map(|v| v.as_slice())
    }

    /// Primary pronunciation, falling back to letter-to-phoneme rules for
    /// out-of-dictionary words. Total: every word gets some pronunciation.
    pub fn pronounce(&self, word: &str) -> Vec<u8> {
        match self.lookup(word) {
            Some(prons) => prons[0].clone(),
            None => g2p_fallback(word),
        }
    }

    /// Phonemize whitespace-separated text: primary pronunciation per word,
    /// boundary marker between words.
    pub fn phonemize(&self, text: &str) -> PhonemeSequence {
        let mut ids = Vec::new();
        for word in crate::tokenizer::normalize(text).split_whitespace() {
            if !ids.is_empty() {
                ids.push(WORD_BOUNDARY_ID);
            }
            for p in self.pronounce(word) {
                ids.push(phone_embedding_id(p));
            }
        }
        PhonemeSequence { ids }
    }

    /// Closest dictionary word to a pronunciation by phoneme edit distance;
    /// distance ties break alphabetically. Buckets are scanned in order of
    /// length difference (each unit of length difference costs at least one
    /// edit), so the search can stop as soon as the remaining buckets cannot
    /// beat the best distance found: the result equals a brute-force scan.
    /// `max_candidates` caps the number of pronunciations scored.
    pub fn nearest_word(&self, pron: &[u8], max_candidates: usize) -> Option<String> {
        let mut best: Option<(f32, &str)> = None;
        let mut scored = 0usize;
        let max_len = self.by_length.len().saturating_sub(1);
        for band in 0..=max_len.max(pron.len()) {
            if let Some((d, _)) = best {
                if band as f32 > d {
                    break;
                }
            }
            for len in band_lengths(pron.len(), band, max_len) {
                for (cand, word) in &self.by_length[len] {
                    if scored >= max_candidates {
                        return best.map(|(_, w)| w.to_string());
                    }
                    scored += 1;
                    let d = phoneme_edit_distance(pron, cand);
                    let better = match best {
                        None => true,
                        Some((bd, bw)) => d < bd || (d == bd && word.as_str() < bw),
                    };
                    if better {
                        best = Some((d, word));
                    }
                }
            }
        }
        best.map(|(_, w)| w.to_string())
    }
}

fn band_lengths(center: usize, band: usize, max_len: usize) -> Vec<usize> {
    if band == 0 {
        return if center <= max_len { vec![center] } else { vec![] };
    }
    let mut out = Vec::new();
    if center >= band && center - band <= max_len {
        out.push(center - band);
    }
    if center + band <= max_len {
        out.push(center + band);
    }
    out
}

/// Levenshtein distance over phonemes: insert/delete cost 1.0, substitution
/// 1.0, or 0.5 within the same phoneme class.
pub fn phoneme_edit_distance(a: &[u8], b: &[u8]) -> f32 {
    let n = b.len();
    let mut prev: Vec<f32> = (0..=n).map(|j| j as f32).collect();
    let mut curr = vec![0.0f32; n + 1];
    for (i, &pa) in a.iter().enumerate() {
        curr[0] = (i + 1) as f32;
        for (j, &pb) in b.iter().enumerate() {
            let sub_cost = if pa == pb {
                0.0
            } else if phoneme_class(pa) == phoneme_class(pb) {
                0.5
            } else {
                1.0
            };
            curr[j + 1] = (prev[j] + sub_cost)
                .min(prev[j + 1] + 1.0)
                .min(curr[j] + 1.0);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[n]
}

/// Deterministic letter-to-phoneme rules: longest-match digraphs first,
/// then single letters. Crude, but total and stable, which is all the
/// fallback path needs.
pub fn g2p_fallback(word: &str) -> Vec<u8> {
    const DIGRAPHS: [(&str, &[&str]); 18] = [
        ("tch", &["CH"]),
        ("ng", &["NG"]),
        ("th", &["TH"]),
        ("sh", &["SH"]),
        ("ch", &["CH"]),
        ("ph", &["F"]),
        ("wh", &["W"]),
        ("ck", &["K"]),
        ("qu", &["K", "W"]),
        ("ee", &["IY"]),
        ("ea", &["IY"]),
        ("oo", &["UW"]),
        ("ou", &["AW"]),
        ("ow", &["OW"]),
        ("ai", &["EY"]),
        ("ay", &["EY"]),
        ("oa", &["OW"]),
        ("oy", &["OY"]),
    ];
    const SINGLES: [(char, &[&str]); 26] = [
        ('a', &["AE"]),
        ('b', &["B"]),
        ('c', &["K"]),
        ('d', &["D"]),
        ('e', &["EH"]),
        ('f', &["F"]),
        ('g', &["G"]),
        ('h', &["HH"]),
        ('i', &["IH"]),
        ('j', &["JH"]),
        ('k', &["K"]),
        ('l', &["L"]),
        ('m', &["M"]),
        ('n', &["N"]),
        ('o', &["AA"]),
        ('p', &["P"]),
        ('q', &["K"]),
        ('r', &["R"]),
        ('s', &["S"]),
        ('t', &["T"]),
        ('u', &["AH"]),
        ('v', &["V"]),
        ('w', &["W"]),
        ('x', &["K", "S"]),
        ('y', &["Y"]),
        ('z', &["Z"]),
    ];
    let lower = word.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    'outer: while i < chars.len() {
        for (pat, phones) in DIGRAPHS {
            let pat_chars: Vec<char> = pat.chars().collect();
            if chars[i..].starts_with(&pat_chars) {
                for p in phones {
                    out.push(phoneme_index(p).unwrap());
                }
                i += pat_chars.len();
                continue 'outer;
            }
        }
        if let Some((_, phones)) = SINGLES.iter().find(|(c, _)| *c == chars[i]) {
            for p in *phones {
                out.push(phoneme_index(p).unwrap());
            }
        }
        i += 1;
    }
    if out.is_empty() {
        // nothing alphabetic to pronounce; fall back to a schwa-like vowel
        out.push(phoneme_index("AH").unwrap());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Lexicon {
        Lexicon::parse(
            ";;; test fixture\n\
             BEDFORD  B EH D F ER D\n\
             BEDWORTH  B EH D W ER TH\n\
             I  AY\n\
             STAY  S T EY\n\
             IN  IH N\n\
             ABBEY  AE B IY\n\
             ABBOT  AE B AH T\n",
        )
        .unwrap()
    }

    fn pron(symbols: &[&str]) -> Vec<u8> {
        symbols.iter().map(|s| phoneme_index(s).unwrap()).collect()
    }

    #[test]
    fn load_parses_arpabet_entry() {
        let lex = fixture();
        assert_eq!(
            lex.lookup("bedford").unwrap()[0],
            pron(&["B", "EH", "D", "F", "ER", "D"])
        );
        // case-insensitive
        assert_eq!(lex.lookup("BEDFORD").unwrap().len(), 1);
    }

    #[test]
    fn empty_file_gives_empty_lexicon() {
        let lex = Lexicon::parse("").unwrap();
        assert!(lex.is_empty());
        assert!(lex.lookup("anything").is_none());
    }

    #[test]
    fn duplicate_lines_keep_both_variants() {
        let lex = Lexicon::parse("A  AH\nA  EY\n").unwrap();
        let variants = lex.lookup("a").unwrap();
        assert_eq!(variants.len(), 2);
        assert_eq!(variants[0], pron(&["AH"])); // first is primary
        assert_eq!(variants[1], pron(&["EY"]));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = Lexicon::parse("GOOD  G UH D\nBAD  Q9\n").unwrap_err();
        match err {
            LexiconError::BadLine { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn phonemize_uses_primary_and_boundaries() {
        let lex = fixture();
        let seq = lex.phonemize("i stay in bedford");
        let expected: Vec<u32> = {
            let mut ids = Vec::new();
            for (wi, w) in [
                pron(&["AY"]),
                pron(&["S", "T", "EY"]),
                pron(&["IH", "N"]),
                pron(&["B", "EH", "D", "F", "ER", "D"]),
            ]
            .iter()
            .enumerate()
            {
                if wi > 0 {
                    ids.push(WORD_BOUNDARY_ID);
                }
                ids.extend(w.iter().map(|&p| phone_embedding_id(p)));
            }
            ids
        };
        assert_eq!(seq.ids, expected);
        // boundaries never lead, trail, or touch
        assert_ne!(seq.ids.first(), Some(&WORD_BOUNDARY_ID));
        assert_ne!(seq.ids.last(), Some(&WORD_BOUNDARY_ID));
        for w in seq.ids.windows(2) {
            assert!(!(w[0] == WORD_BOUNDARY_ID && w[1] == WORD_BOUNDARY_ID));
        }
    }

    #[test]
    fn fallback_covers_out_of_dictionary_words() {
        let lex = fixture();
        assert_eq!(lex.pronounce("zz"), pron(&["Z", "Z"]));
    }

    #[test]
    fn edit_distance_identity_and_class_discount() {
        let a = pron(&["B", "EH", "D"]);
        assert_eq!(phoneme_edit_distance(&a, &a), 0.0);
        let b = pron(&["B", "IH", "D"]);
        assert_eq!(phoneme_edit_distance(&a, &b), 0.5); // EH -> IH in class
        let c = pron(&["B", "S", "D"]);
        assert_eq!(phoneme_edit_distance(&a, &c), 1.0); // vowel -> fricative
        assert_eq!(phoneme_edit_distance(&a, &a[..2]), 1.0); // one deletion
    }

    /// Independent recursive oracle for the DP distance.
    fn edit_distance_recursive(a: &[u8], b: &[u8], memo: &mut HashMap<(usize, usize), f32>) -> f32 {
        fn go(a: &[u8], b: &[u8], i: usize, j: usize, memo: &mut HashMap<(usize, usize), f32>) -> f32 {
            if i == a.len() {
                return (b.len() - j) as f32;
            }
            if j == b.len() {
                return (a.len() - i) as f32;
            }
            if let Some(&v) = memo.get(&(i, j)) {
                return v;
            }
            let sub = if a[i] == b[j] {
                0.0
            } else if phoneme_class(a[i]) == phoneme_class(b[j]) {
                0.5
            } else {
                1.0
            };
            let v = (go(a, b, i + 1, j + 1, memo) + sub)
                .min(go(a, b, i + 1, j, memo) + 1.0)
                .min(go(a, b, i, j + 1, memo) + 1.0);
            memo.insert((i, j), v);
            v
        }
        go(a, b, 0, 0, memo)
    }

    #[test]
    fn edit_distance_matches_recursive_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let la = rng.gen_range(0..8);
            let lb = rng.gen_range(0..8);
            let a: Vec<u8> = (0..la).map(|_| rng.gen_range(0..39) as u8).collect();
            let b: Vec<u8> = (0..lb).map(|_| rng.gen_range(0..39) as u8).collect();
            let mut memo = HashMap::new();
            let expect = edit_distance_recursive(&a, &b, &mut memo);
            assert_eq!(phoneme_edit_distance(&a, &b), expect);
        }
    }

    #[test]
    fn edit_distance_is_symmetric_and_triangular() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let mk = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<u8> {
                let l = rng.gen_range(0..7);
                (0..l).map(|_| rng.gen_range(0..39) as u8).collect()
            };
            let (a, b, c) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
            let dab = phoneme_edit_distance(&a, &b);
            assert_eq!(dab, phoneme_edit_distance(&b, &a));
            let dac = phoneme_edit_distance(&a, &c);
            let dcb = phoneme_edit_distance(&c, &b);
            assert!(dab <= dac + dcb + 1e-6);
        }
    }

    #[test]
    fn nearest_word_exact_match_and_ties() {
        let lex = fixture();
        assert_eq!(
            lex.nearest_word(&pron(&["B", "EH", "D", "F", "ER", "D"]), usize::MAX),
            Some("bedford".to_string())
        );
        // abbey (AE B IY) is one deletion from AE B; everything else is
        // further away
        let query = pron(&["AE", "B"]);
        assert_eq!(lex.nearest_word(&query, usize::MAX), Some("abbey".to_string()));
    }

    #[test]
    fn nearest_word_tie_breaks_alphabetically() {
        let lex = Lexicon::parse("ZED  Z EH D\nBED  B EH D\n").unwrap();
        // query equidistant from both (substitute first consonant, both
        // stops-vs-fricative... use a stop so both are 1 off in-class)
        let query = pron(&["D", "EH", "D"]);
        // d(bed) = 0.5 (B->D in class), d(zed) = 1.0 -> bed wins outright
        assert_eq!(lex.nearest_word(&query, usize::MAX), Some("bed".to_string()));
        // exact tie: query TED vs BED/ZED? d(T..) to B.. = 0.5, to Z.. = 1.0.
        // Take two words in the same class instead:
        let lex2 = Lexicon::parse("PAT  P AE T\nBAT  B AE T\n").unwrap();
        let query2 = pron(&["T", "AE", "T"]);
        // both are one in-class substitution away (0.5); "bat" < "pat"
        assert_eq!(lex2.nearest_word(&query2, usize::MAX), Some("bat".to_string()));
    }

    #[test]
    fn nearest_word_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let lex = fixture();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let l = rng.gen_range(1..9);
            let query: Vec<u8> = (0..l).map(|_| rng.gen_range(0..39) as u8).collect();
            let fast = lex.nearest_word(&query, usize::MAX);
            // brute force over every entry
            let mut best: Option<(f32, String)> = None;
            for (word, prons) in &lex.entries {
                for p in prons {
                    let d = phoneme_edit_distance(&query, p);
                    let better = match &best {
                        None => true,
                        Some((bd, bw)) => d < *bd || (d == *bd && word < bw),
                    };
                    if better {
                        best = Some((d, word.clone()));
                    }
                }
            }
            assert_eq!(fast, best.map(|(_, w)| w));
        }
    }

    #[test]
    fn nearest_word_inverts_phonemize_for_unique_prons() {
        let lex = fixture();
        for word in ["bedford", "stay", "abbey", "abbot"] {
            let pron = lex.pronounce(word);
            assert_eq!(lex.nearest_word(&pron, usize::MAX), Some(word.to_string()));
        }
    }

    #[test]
    fn g2p_examples() {
        assert_eq!(g2p_fallback("bee"), pron(&["B", "IY"]));
        assert_eq!(g2p_fallback("thing"), pron(&["TH", "IH", "NG"]));
        assert_eq!(g2p_fallback("quick"), pron(&["K", "W", "IH", "K"]));
    }
}
