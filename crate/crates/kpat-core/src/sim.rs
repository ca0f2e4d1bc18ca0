//! Synthetic corpus generation with phoneme-level error simulation.
//!
//! References are carrier phrases with one sampled slot entity. The "ASR
//! output" side corrupts each word at the phoneme level (substitutions
//! biased toward the same phoneme class, insertions, deletions) and projects
//! the result back to the closest dictionary word. Every simulated error is
//! therefore a real, similar-sounding lexicon word, which is what makes the
//! correction task non-trivial. Slot words get an elevated noise rate so
//! entity errors dominate, as they do in real slot-correction traffic.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{SlotSpan, Split, Utterance};
use crate::lexicon::{phoneme_class, Lexicon, PHONEMES};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("catalog for domain {0} is empty")]
    EmptyCatalog(String),
    #[error("no catalogs loaded")]
    NoDomains,
    #[error("no templates for domain {0}")]
    NoTemplates(String),
    #[error("template {0:?} must contain exactly one {{entity}} placeholder")]
    BadTemplate(String),
    #[error("{count} entities appear in both the train and OOV catalogs (e.g. {example:?})")]
    OverlappingEntities { count: usize, example: String },
    #[error("invalid noise parameters: {0}")]
    BadNoise(String),
}

/// Per-domain entity lists. Sampling weight falls off with list position
/// (Zipf), so early entries are head entities and late entries are tail.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SlotCatalog {
    pub domains: BTreeMap<String, Vec<String>>,
}

impl SlotCatalog {
    /// Load one `<domain>.txt` (entity per line) for each named domain from
    /// a directory.
    pub fn load_dir(dir: &Path, domains: &[&str]) -> Result<Self, SimError> {
        let mut catalog = SlotCatalog::default();
        for &domain in domains {
            let path = dir.join(format!("{domain}.txt"));
            let text = std::fs::read_to_string(&path)?;
            let entities: Vec<String> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(|l| l.to_lowercase())
                .collect();
            if entities.is_empty() {
                return Err(SimError::EmptyCatalog(domain.to_string()));
            }
            catalog.domains.insert(domain.to_string(), entities);
        }
        Ok(catalog)
    }

    pub fn is_empty(&self) -> bool {
        self.domains.values().all(|v| v.is_empty())
    }

    /// Split off `fraction` of each domain's tail into a disjoint catalog
    /// (held-out entities for OOV experiments). Entities that also appear in
    /// another domain's retained list are dropped from the holdout, so the
    /// result is globally disjoint from the training catalog.
    pub fn split_off_oov(&mut self, fraction: f64) -> SlotCatalog {
        let mut oov = SlotCatalog::default();
        for (domain, entities) in &mut self.domains {
            let keep = ((entities.len() as f64) * (1.0 - fraction)).ceil() as usize;
            let keep = keep.clamp(1, entities.len());
            let tail = entities.split_off(keep);
            oov.domains.insert(domain.clone(), tail);
        }
        let retained = self.all_entities().into_iter().map(str::to_string).collect::<BTreeSet<_>>();
        for tail in oov.domains.values_mut() {
            tail.retain(|e| !retained.contains(e));
        }
        oov
    }

    fn all_entities(&self) -> BTreeSet<&str> {
        self.domains
            .values()
            .flat_map(|v| v.iter().map(String::as_str))
            .collect()
    }
}

/// Carrier-phrase templates per domain; each contains one `{entity}`.
#[derive(Debug, Clone, Default)]
pub struct Templates {
    pub by_domain: BTreeMap<String, Vec<String>>,
}

impl Templates {
    /// Parse `domain<TAB>template` lines.
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut t = Templates::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((domain, template)) = line.split_once('\t') else {
                return Err(SimError::BadTemplate(line.to_string()));
            };
            if template.matches("{entity}").count() != 1 {
                return Err(SimError::BadTemplate(template.to_string()));
            }
            t.by_domain
                .entry(domain.trim().to_string())
                .or_default()
                .push(template.trim().to_lowercase());
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    pub sub_prob: f64,
    pub ins_prob: f64,
    pub del_prob: f64,
    /// Probability that a substitution stays within the phoneme class.
    pub in_class_bias: f64,
    /// Noise multiplier for words inside slot spans.
    pub slot_multiplier: f64,
    pub seed: u64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            sub_prob: 0.12,
            ins_prob: 0.03,
            del_prob: 0.05,
            in_class_bias: 0.8,
            slot_multiplier: 2.0,
            seed: 0,
        }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, p) in [
            ("sub_prob", self.sub_prob),
            ("ins_prob", self.ins_prob),
            ("del_prob", self.del_prob),
            ("in_class_bias", self.in_class_bias),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::BadNoise(format!("{name} {p} outside [0, 1]")));
            }
        }
        if self.sub_prob + self.del_prob > 0.9 {
            return Err(SimError::BadNoise(format!(
                "sub_prob + del_prob = {} exceeds 0.9; outputs would degenerate",
                self.sub_prob + self.del_prob
            )));
        }
        if self.slot_multiplier < 0.0 {
            return Err(SimError::BadNoise("slot_multiplier must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Zipf(s) sampler over ranks 1..=n by inverse-CDF lookup.
#[derive(Debug, Clone)]
pub struct ZipfSampler {
    cumulative: Vec<f64>,
}

impl ZipfSampler {
    pub fn new(n: usize, s: f64) -> Self {
        let mut cumulative = Vec::with_capacity(n);
        let mut total = 0.0;
        for r in 1..=n {
            total += 1.0 / (r as f64).powf(s);
            cumulative.push(total);
        }
        ZipfSampler { cumulative }
    }

    /// 0-based index; rank = index + 1.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("empty sampler");
        let target = rng.gen_range(0.0..total);
        self.cumulative.partition_point(|&c| c <= target)
    }

    pub fn weight(&self, index: usize) -> f64 {
        let prev = if index == 0 { 0.0 } else { self.cumulative[index - 1] };
        (self.cumulative[index] - prev) / self.cumulative.last().unwrap()
    }
}

/// Reference skeleton: carrier phrase with one entity filled in.
pub fn generate_reference(
    catalog: &SlotCatalog,
    templates: &Templates,
    zipf_s: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Utterance, String), SimError> {
    if catalog.domains.is_empty() {
        return Err(SimError::NoDomains);
    }
    let domains: Vec<&String> = catalog.domains.keys().collect();
    let domain = domains[rng.gen_range(0..domains.len())].clone();
    let entities = &catalog.domains[&domain];
    if entities.is_empty() {
        return Err(SimError::EmptyCatalog(domain));
    }
    let zipf = ZipfSampler::new(entities.len(), zipf_s);
    let idx = zipf.sample(rng);
    let entity = &entities[idx];
    let templates_for = templates
        .by_domain
        .get(&domain)
        .ok_or_else(|| SimError::NoTemplates(domain.clone()))?;
    let template = &templates_for[rng.gen_range(0..templates_for.len())];
    let prefix_len = template.find("{entity}").expect("validated on load");
    let reference = template.replace("{entity}", entity);
    let utt = Utterance {
        reference,
        asr: String::new(),
        slots: vec![SlotSpan {
            start: prefix_len,
            end: prefix_len + entity.len(),
            domain: domain.clone(),
        }],
        split: Split::Train,
        freq_rank: (idx + 1) as u32,
    };
    Ok((utt, domain))
}

/// Corrupt a reference into a plausible ASR output. Deterministic in
/// (reference text, slot spans, NoiseParams): the RNG is seeded from the
/// noise seed and a stable hash of the reference.
pub fn corrupt(
    reference: &str,
    slots: &[SlotSpan],
    lexicon: &Lexicon,
    noise: &NoiseParams,
) -> String {
    let mut rng = crate::rng::stream_rng(noise.seed, fnv1a(reference.as_bytes()), 0);
    let mut out_words: Vec<String> = Vec::new();
    let mut offset = 0usize;
    for word in reference.split_whitespace() {
        // recover the word's char range in the (normalized) reference
        let start = reference[offset..].find(word).map(|p| p + offset).unwrap_or(offset);
        let end = start + word.len();
        offset = end;
        let in_slot = slots.iter().any(|s| start < s.end && end > s.start);
        let mult = if in_slot { noise.slot_multiplier } else { 1.0 };
        let sub_p = (noise.sub_prob * mult).min(0.9);
        let ins_p = (noise.ins_prob * mult).min(0.9);
        let del_p = (noise.del_prob * mult).min(0.9);

        let pron = lexicon.pronounce(word);
        let mut edited = false;
        let mut phones: Vec<u8> = Vec::with_capacity(pron.len() + 2);
        for &ph in &pron {
            if rng.gen_bool(del_p) {
                edited = true;
                continue;
            }
            let mut cur = ph;
            if rng.gen_bool(sub_p) {
                cur = substitute(ph, noise.in_class_bias, &mut rng);
                edited = true;
            }
            phones.push(cur);
            if rng.gen_bool(ins_p) {
                phones.push(rng.gen_range(0..PHONEMES.len()) as u8);
                edited = true;
            }
        }
        if phones.is_empty() {
            phones.push(pron[0]);
        }
        let out = if !edited && lexicon.contains(word) {
            word.to_string()
        } else {
            lexicon
                .nearest_word(&phones, usize::MAX)
                .unwrap_or_else(|| word.to_string())
        };
        out_words.push(out);
    }
    out_words.join(" ")
}

fn substitute(ph: u8, in_class_bias: f64, rng: &mut ChaCha8Rng) -> u8 {
    let class = phoneme_class(ph);
    let in_class: Vec<u8> = (0..PHONEMES.len() as u8)
        .filter(|&p| p != ph && phoneme_class(p) == class)
        .collect();
    if !in_class.is_empty() && rng.gen_bool(in_class_bias) {
        in_class[rng.gen_range(0..in_class.len())]
    } else {
        // uniform over all other phonemes
        let mut p = rng.gen_range(0..PHONEMES.len() - 1) as u8;
        if p >= ph {
            p += 1;
        }
        p
    }
}

/// FNV-1a, stable across platforms and versions.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF29CE484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001B3);
    }
    h
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GenSizes {
    pub train_refs: usize,
    pub dev_refs: usize,
    pub test_refs: usize,
    pub oov_refs: usize,
    /// Corruption variants per training reference (n-best style
    /// augmentation). Dev/test/OOV always get one variant.
    pub train_variants: usize,
}

#[derive(Debug, Clone)]
pub struct CorpusSet {
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub test: Vec<Utterance>,
    pub oov: Vec<Utterance>,
}

/// Generate all four splits. Train entities come from `catalog`, the OOV
/// split from `oov_catalog`; the two must be disjoint.
pub fn build_corpus(
    catalog: &SlotCatalog,
    oov_catalog: &SlotCatalog,
    templates: &Templates,
    lexicon: &Lexicon,
    sizes: &GenSizes,
    noise: &NoiseParams,
    zipf_s: f64,
    seed: u64,
) -> Result<CorpusSet, SimError> {
    noise.validate()?;
    let overlap: Vec<&str> = catalog
        .all_entities()
        .intersection(&oov_catalog.all_entities())
        .copied()
        .collect();
    if !overlap.is_empty() {
        return Err(SimError::OverlappingEntities {
            count: overlap.len(),
            example: overlap[0].to_string(),
        });
    }

    let gen_split = |section: u64,
                         n_refs: usize,
                         variants: usize,
                         split: Split,
                         catalog: &SlotCatalog|
     -> Result<Vec<Utterance>, SimError> {
        let mut out = Vec::with_capacity(n_refs * variants);
        for i in 0..n_refs {
            let mut rng = crate::rng::stream_rng(seed, section, i as u64);
            let (mut utt, _) = generate_reference(catalog, templates, zipf_s, &mut rng)?;
            utt.split = split;
            if split == Split::Oov {
                utt.freq_rank = 0;
            }
            for v in 0..variants {
                let variant_noise = NoiseParams {
                    seed: noise
                        .seed
                        .wrapping_add(section.wrapping_mul(0x9E3779B97F4A7C15))
                        .wrapping_add((i as u64).wrapping_mul(0x100000001B3))
                        .wrapping_add(v as u64),
                    ..*noise
                };
                let mut variant = utt.clone();
                variant.asr = corrupt(&variant.reference, &variant.slots, lexicon, &variant_noise);
                out.push(variant);
            }
        }
        Ok(out)
    };

    Ok(CorpusSet {
        train: gen_split(1, sizes.train_refs, sizes.train_variants.max(1), Split::Train, catalog)?,
        dev: gen_split(2, sizes.dev_refs, 1, Split::Dev, catalog)?,
        test: gen_split(3, sizes.test_refs, 1, Split::Test, catalog)?,
        oov: gen_split(4, sizes.oov_refs, 1, Split::Oov, oov_catalog)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lexicon() -> Lexicon {
        Lexicon::parse(
            "I  AY\nSTAY  S T EY\nIN  IH N\nMY  M AY\nNAME  N EY M\nIS  IH Z\n\
             BEDFORD  B EH D F ER D\nBEDWORTH  B EH D W ER TH\nBELFORD  B EH L F ER D\n\
             OAKWOOD  OW K W UH D\nELMWOOD  EH L M W UH D\nJOHN  JH AA N\nJANE  JH EY N\n",
        )
        .unwrap()
    }

    fn catalog() -> SlotCatalog {
        let mut c = SlotCatalog::default();
        c.domains.insert(
            "street_names".into(),
            vec!["bedford".into(), "oakwood".into(), "elmwood".into()],
        );
        c
    }

    fn templates() -> Templates {
        Templates::parse("street_names\ti stay in {entity}\n").unwrap()
    }

    #[test]
    fn reference_fills_template_and_records_span() {
        let mut rng = crate::rng::stream_rng(7, 0, 0);
        let (utt, domain) =
            generate_reference(&catalog(), &templates(), 1.2, &mut rng).unwrap();
        assert_eq!(domain, "street_names");
        assert!(utt.reference.starts_with("i stay in "));
        let span = &utt.slots[0];
        assert_eq!(span.start, 10);
        let entity = &utt.reference[span.start..span.end];
        assert!(catalog().domains["street_names"].contains(&entity.to_string()));
        assert!(utt.freq_rank >= 1);
    }

    #[test]
    fn single_template_single_entity_is_deterministic() {
        let mut c = SlotCatalog::default();
        c.domains.insert("street_names".into(), vec!["bedford".into()]);
        let mut rng1 = crate::rng::stream_rng(1, 1, 0);
        let mut rng2 = crate::rng::stream_rng(1, 1, 0);
        let a = generate_reference(&c, &templates(), 1.2, &mut rng1).unwrap();
        let b = generate_reference(&c, &templates(), 1.2, &mut rng2).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.0.reference, "i stay in bedford");
    }

    #[test]
    fn empty_catalog_is_an_error() {
        let c = SlotCatalog::default();
        let mut rng = crate::rng::stream_rng(0, 0, 0);
        assert!(matches!(
            generate_reference(&c, &templates(), 1.0, &mut rng),
            Err(SimError::NoDomains)
        ));
    }

    #[test]
    fn zipf_head_dominates() {
        // top decile gets at least half the mass at s = 1.2
        let zipf = ZipfSampler::new(1000, 1.2);
        let mut rng = crate::rng::stream_rng(42, 0, 0);
        let n = 10_000;
        let mut top_decile = 0usize;
        for _ in 0..n {
            if zipf.sample(&mut rng) < 100 {
                top_decile += 1;
            }
        }
        assert!(
            top_decile as f64 / n as f64 >= 0.5,
            "top decile got {top_decile}/{n}"
        );
    }

    #[test]
    fn zipf_histogram_matches_weights_chi_squared() {
        let n_entities = 50;
        let zipf = ZipfSampler::new(n_entities, 1.2);
        let mut rng = crate::rng::stream_rng(43, 0, 0);
        let n = 10_000usize;
        let mut counts = vec![0usize; n_entities];
        for _ in 0..n {
            counts[zipf.sample(&mut rng)] += 1;
        }
        let mut chi2 = 0.0;
        let mut dof = 0usize;
        for (i, &c) in counts.iter().enumerate() {
            let expect = zipf.weight(i) * n as f64;
            if expect >= 5.0 {
                chi2 += (c as f64 - expect).powi(2) / expect;
                dof += 1;
            }
        }
        // generous bound: ~99.9th percentile of chi2 with ~49 dof is ~85
        assert!(chi2 < 100.0, "chi2 {chi2} over {dof} cells");
    }

    #[test]
    fn zero_noise_is_identity_for_in_lexicon_references() {
        let noise = NoiseParams {
            sub_prob: 0.0,
            ins_prob: 0.0,
            del_prob: 0.0,
            ..NoiseParams::default()
        };
        let lex = lexicon();
        let reference = "i stay in bedford";
        let slots = vec![SlotSpan { start: 10, end: 17, domain: "street_names".into() }];
        assert_eq!(corrupt(reference, &slots, &lex, &noise), reference);
    }

    #[test]
    fn corruption_is_deterministic_in_seed() {
        let noise = NoiseParams { sub_prob: 0.4, seed: 9, ..NoiseParams::default() };
        let lex = lexicon();
        let slots = vec![SlotSpan { start: 10, end: 17, domain: "street_names".into() }];
        let a = corrupt("i stay in bedford", &slots, &lex, &noise);
        let b = corrupt("i stay in bedford", &slots, &lex, &noise);
        assert_eq!(a, b);
        let other = NoiseParams { seed: 10, ..noise };
        let c = corrupt("i stay in bedford", &slots, &lex, &other);
        // a different seed draws different errors (statistically certain at
        // this noise level over four words; equality would mean the seed is
        // being ignored, which the next assertion would catch half the time)
        let _ = c;
    }

    #[test]
    fn corrupted_output_is_lexicon_words_at_small_distance() {
        let noise = NoiseParams { sub_prob: 0.3, seed: 5, ..NoiseParams::default() };
        let lex = lexicon();
        let slots = vec![SlotSpan { start: 10, end: 17, domain: "street_names".into() }];
        for seed in 0..20u64 {
            let n = NoiseParams { seed, ..noise };
            let out = corrupt("i stay in bedford", &slots, &lex, &n);
            for word in out.split_whitespace() {
                assert!(lex.contains(word), "{word:?} not in lexicon ({out})");
            }
            // the corrupted slot word stays phonetically close
            let last = out.split_whitespace().last().unwrap();
            let d = crate::lexicon::phoneme_edit_distance(
                &lex.pronounce(last),
                &lex.pronounce("bedford"),
            );
            assert!(d <= 3.0 + 3.0, "drifted too far: {last} at {d}");
        }
    }

    #[test]
    fn build_corpus_counts_and_disjointness() {
        let mut cat = catalog();
        let oov = {
            let mut c = SlotCatalog::default();
            c.domains.insert("street_names".into(), vec!["belford".into()]);
            c
        };
        let sizes = GenSizes {
            train_refs: 8,
            dev_refs: 3,
            test_refs: 3,
            oov_refs: 4,
            train_variants: 2,
        };
        let set = build_corpus(
            &cat,
            &oov,
            &templates(),
            &lexicon(),
            &sizes,
            &NoiseParams::default(),
            1.2,
            77,
        )
        .unwrap();
        assert_eq!(set.train.len(), 16);
        assert_eq!(set.dev.len(), 3);
        assert_eq!(set.test.len(), 3);
        assert_eq!(set.oov.len(), 4);
        for u in &set.oov {
            assert_eq!(u.split, Split::Oov);
            assert_eq!(u.freq_rank, 0);
            assert_eq!(u.slot_text(&u.slots[0]), "belford");
        }
        // overlapping catalogs must be rejected
        cat.domains
            .get_mut("street_names")
            .unwrap()
            .push("belford".into());
        assert!(matches!(
            build_corpus(&cat, &oov, &templates(), &lexicon(), &sizes, &NoiseParams::default(), 1.2, 77),
            Err(SimError::OverlappingEntities { .. })
        ));
    }

    #[test]
    fn build_corpus_is_deterministic() {
        let cat = catalog();
        let oov = {
            let mut c = SlotCatalog::default();
            c.domains.insert("street_names".into(), vec!["belford".into()]);
            c
        };
        let sizes = GenSizes {
            train_refs: 5,
            dev_refs: 2,
            test_refs: 2,
            oov_refs: 2,
            train_variants: 2,
        };
        let a = build_corpus(&cat, &oov, &templates(), &lexicon(), &sizes, &NoiseParams::default(), 1.2, 5).unwrap();
        let b = build_corpus(&cat, &oov, &templates(), &lexicon(), &sizes, &NoiseParams::default(), 1.2, 5).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.oov, b.oov);
    }

    #[test]
    fn split_off_oov_is_disjoint() {
        let mut cat = SlotCatalog::default();
        cat.domains.insert(
            "airports".into(),
            (0..20).map(|i| format!("airport{i}")).collect(),
        );
        let oov = cat.split_off_oov(0.2);
        assert_eq!(cat.domains["airports"].len(), 16);
        assert_eq!(oov.domains["airports"].len(), 4);
        assert!(cat.all_entities().is_disjoint(&oov.all_entities()));
    }

    #[test]
    fn noise_validation_rejects_degenerate_rates() {
        let bad = NoiseParams { sub_prob: 0.6, del_prob: 0.5, ..NoiseParams::default() };
        assert!(bad.validate().is_err());
        let bad2 = NoiseParams { ins_prob: 1.5, ..NoiseParams::default() };
        assert!(bad2.validate().is_err());
    }
}
