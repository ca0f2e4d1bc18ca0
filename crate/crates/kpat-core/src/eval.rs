//! Evaluation: word error rate, slot recall/accuracy, per-domain breakdowns,
//! and frequency-binned comparisons.
//!
//! Metric definitions (recorded in every report's metadata so the numbers
//! are interpretable):
//! - WER: word-level edit distance over reference length; corpus WER is
//!   total edits over total reference words, not the mean of rates.
//! - Slot recall: fraction of (stop-word-filtered) reference slot words
//!   found in the hypothesis, multiset intersection per utterance.
//! - Slot accuracy: fraction of slot-bearing utterances whose filtered slot
//!   word sequence appears contiguously, in order, in the filtered
//!   hypothesis.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Utterance;

pub const STOPWORDS_VERSION: &str = "1";

/// Bundled English function words removed before slot scoring.
pub const STOP_WORDS: [&str; 121] = [
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are",
    "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but",
    "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "few", "for",
    "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers", "him", "his",
    "how", "i", "if", "in", "into", "is", "it", "its", "just", "me", "more", "most", "my", "no",
    "nor", "not", "now", "of", "off", "on", "once", "only", "or", "other", "our", "ours", "out",
    "over", "own", "same", "she", "should", "so", "some", "such", "than", "that", "the", "their",
    "theirs", "them", "then", "there", "these", "they", "this", "those", "through", "to", "too",
    "under", "until", "up", "very", "was", "we", "were", "what", "when", "where", "which",
    "while", "who", "whom", "why", "will", "with", "would", "you", "your", "yours", "im", "ive",
    "id",
];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("reference must be non-empty")]
    EmptyReference,
    #[error("hypothesis count {hyps} does not match utterance count {refs}")]
    CountMismatch { refs: usize, hyps: usize },
    #[error("reports cover different test sets: {0}")]
    TestSetMismatch(String),
}

pub fn is_stop_word(word: &str) -> bool {
    STOP_WORDS.contains(&word)
}

fn content_words(text: &str) -> Vec<&str> {
    text.split_whitespace().filter(|w| !is_stop_word(w)).collect()
}

/// Word-level Levenshtein edit count (substitution/insertion/deletion all
/// cost 1).
pub fn word_edit_distance(reference: &[&str], hypothesis: &[&str]) -> usize {
    let n = hypothesis.len();
    let mut prev: Vec<usize> = (0..=n).collect();
    let mut curr = vec![0usize; n + 1];
    for (i, &rw) in reference.iter().enumerate() {
        curr[0] = i + 1;
        for (j, &hw) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(rw != hw);
            curr[j + 1] = sub.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[n]
}

/// Word error rate of a single utterance.
pub fn wer(reference: &[&str], hypothesis: &[&str]) -> Result<f64, EvalError> {
    if reference.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    Ok(word_edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}

/// Running corpus-level WER: total edits over total reference words.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq)]
pub struct WerCounts {
    pub edits: usize,
    pub ref_words: usize,
}

impl WerCounts {
    pub fn add(&mut self, reference: &str, hypothesis: &str) -> Result<(), EvalError> {
        let r: Vec<&str> = reference.split_whitespace().collect();
        let h: Vec<&str> = hypothesis.split_whitespace().collect();
        if r.is_empty() {
            return Err(EvalError::EmptyReference);
        }
        self.edits += word_edit_distance(&r, &h);
        self.ref_words += r.len();
        Ok(())
    }

    pub fn rate(&self) -> f64 {
        if self.ref_words == 0 {
            0.0
        } else {
            self.edits as f64 / self.ref_words as f64
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq)]
pub struct SlotCounts {
    pub slot_words: usize,
    pub slot_words_found: usize,
    pub slot_utterances: usize,
    pub exact_spans: usize,
}

impl SlotCounts {
    pub fn recall(&self) -> f64 {
        if self.slot_words == 0 {
            0.0
        } else {
            self.slot_words_found as f64 / self.slot_words as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.slot_utterances == 0 {
            0.0
        } else {
            self.exact_spans as f64 / self.slot_utterances as f64
        }
    }
}

/// True when `needle` appears as a contiguous subsequence of `haystack`.
fn contains_contiguous(haystack: &[&str], needle: &[&str]) -> bool {
    if needle.is_empty() {
        return true;
    }
    if haystack.len() < needle.len() {
        return false;
    }
    haystack.windows(needle.len()).any(|w| w == needle)
}

/// Score one utterance's slots against a hypothesis, accumulating counts.
pub fn score_slots(utt: &Utterance, hypothesis: &str, counts: &mut SlotCounts) {
    if utt.slots.is_empty() {
        return;
    }
    let hyp_words = content_words(hypothesis);
    let mut hyp_pool: Vec<&str> = hyp_words.clone();
    let mut all_spans_exact = true;
    for span in &utt.slots {
        let slot_words: Vec<&str> = content_words(utt.slot_text(span));
        counts.slot_words += slot_words.len();
        for w in &slot_words {
            // multiset intersection: each hypothesis word matches once
            if let Some(pos) = hyp_pool.iter().position(|h| h == w) {
                hyp_pool.swap_remove(pos);
                counts.slot_words_found += 1;
            }
        }
        if !contains_contiguous(&hyp_words, &slot_words) {
            all_spans_exact = false;
        }
    }
    counts.slot_utterances += 1;
    if all_spans_exact {
        counts.exact_spans += 1;
    }
}

/// Slot recall and accuracy over a corpus.
pub fn slot_metrics(utts: &[Utterance], hyps: &[String]) -> Result<SlotCounts, EvalError> {
    if utts.len() != hyps.len() {
        return Err(EvalError::CountMismatch {
            refs: utts.len(),
            hyps: hyps.len(),
        });
    }
    let mut counts = SlotCounts::default();
    for (u, h) in utts.iter().zip(hyps) {
        score_slots(u, h, &mut counts);
    }
    Ok(counts)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DomainReport {
    pub n_utterances: usize,
    pub wer: f64,
    pub slot_recall: f64,
    pub slot_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReportMeta {
    pub stopwords_version: String,
    pub recall_definition: String,
    pub accuracy_definition: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl Default for ReportMeta {
    fn default() -> Self {
        ReportMeta {
            stopwords_version: STOPWORDS_VERSION.to_string(),
            recall_definition:
                "stop-word-filtered slot words found in hypothesis (multiset, per utterance)"
                    .to_string(),
            accuracy_definition:
                "utterances whose filtered slot word sequence appears contiguously in the filtered hypothesis"
                    .to_string(),
            extra: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub system: String,
    pub n_utterances: usize,
    pub wer: f64,
    pub wer_counts: WerCounts,
    pub slot_recall: f64,
    pub slot_accuracy: f64,
    pub slot_counts: SlotCounts,
    pub per_domain: BTreeMap<String, DomainReport>,
    pub meta: ReportMeta,
}

/// Score a hypothesis set against its references.
pub fn build_report(
    system: &str,
    utts: &[Utterance],
    hyps: &[String],
) -> Result<EvalReport, EvalError> {
    if utts.len() != hyps.len() {
        return Err(EvalError::CountMismatch {
            refs: utts.len(),
            hyps: hyps.len(),
        });
    }
    let mut wer_counts = WerCounts::default();
    let mut slot_counts = SlotCounts::default();
    let mut per_domain_wer: BTreeMap<String, WerCounts> = BTreeMap::new();
    let mut per_domain_slots: BTreeMap<String, SlotCounts> = BTreeMap::new();
    let mut per_domain_n: BTreeMap<String, usize> = BTreeMap::new();
    for (u, h) in utts.iter().zip(hyps) {
        wer_counts.add(&u.reference, h)?;
        score_slots(u, h, &mut slot_counts);
        if let Some(domain) = u.domain() {
            per_domain_wer
                .entry(domain.to_string())
                .or_default()
                .add(&u.reference, h)?;
            score_slots(u, h, per_domain_slots.entry(domain.to_string()).or_default());
            *per_domain_n.entry(domain.to_string()).or_default() += 1;
        }
    }
    let per_domain = per_domain_n
        .iter()
        .map(|(domain, &n)| {
            let w = &per_domain_wer[domain];
            let s = &per_domain_slots[domain];
            (
                domain.clone(),
                DomainReport {
                    n_utterances: n,
                    wer: w.rate(),
                    slot_recall: s.recall(),
                    slot_accuracy: s.accuracy(),
                },
            )
        })
        .collect();
    Ok(EvalReport {
        system: system.to_string(),
        n_utterances: utts.len(),
        wer: wer_counts.rate(),
        wer_counts,
        slot_recall: slot_counts.recall(),
        slot_accuracy: slot_counts.accuracy(),
        slot_counts,
        per_domain,
        meta: ReportMeta::default(),
    })
}

/// Relative word error rate reduction and metric deltas of a candidate
/// against a baseline on the same test set.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Comparison {
    pub baseline: String,
    pub candidate: String,
    /// (WER_base - WER_cand) / WER_base * 100.
    pub werr_percent: f64,
    pub wer_delta: f64,
    pub recall_delta: f64,
    pub accuracy_delta: f64,
}

pub fn compare_report(base: &EvalReport, cand: &EvalReport) -> Result<Comparison, EvalError> {
    if base.n_utterances != cand.n_utterances
        || base.wer_counts.ref_words != cand.wer_counts.ref_words
    {
        return Err(EvalError::TestSetMismatch(format!(
            "baseline has {} utterances / {} ref words, candidate {} / {}",
            base.n_utterances,
            base.wer_counts.ref_words,
            cand.n_utterances,
            cand.wer_counts.ref_words
        )));
    }
    Ok(Comparison {
        baseline: base.system.clone(),
        candidate: cand.system.clone(),
        werr_percent: werr_percent(base.wer, cand.wer),
        wer_delta: cand.wer - base.wer,
        recall_delta: cand.slot_recall - base.slot_recall,
        accuracy_delta: cand.slot_accuracy - base.slot_accuracy,
    })
}

/// Relative WER reduction in percent; scale-invariant, so it accepts either
/// rates or percentages.
pub fn werr_percent(wer_base: f64, wer_cand: f64) -> f64 {
    if wer_base == 0.0 {
        0.0
    } else {
        (wer_base - wer_cand) / wer_base * 100.0
    }
}

/// Frequency bin edges over training-set slot counts: an OOV bin for unseen
/// slots, then 1-10, 11-50, 51-200, 201+.
pub const FREQ_BINS: [(u64, u64); 5] = [
    (0, 0),
    (1, 10),
    (11, 50),
    (51, 200),
    (201, u64::MAX),
];

pub fn bin_label(lo: u64, hi: u64) -> String {
    if lo == 0 && hi == 0 {
        "oov".to_string()
    } else if hi == u64::MAX {
        format!("{lo}+")
    } else {
        format!("{lo}-{hi}")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FreqBinRow {
    pub bin: String,
    pub lo: u64,
    pub hi: u64,
    pub n_slots: usize,
    pub wer_pat: f64,
    pub wer_kpat: f64,
    pub acc_pat: f64,
    pub acc_kpat: f64,
}

/// Training-set frequency of each exact slot entity string.
pub fn slot_frequency_table(train: &[Utterance]) -> BTreeMap<String, u64> {
    let mut table = BTreeMap::new();
    for u in train {
        for span in &u.slots {
            *table.entry(u.slot_text(span).to_string()).or_default() += 1;
        }
    }
    table
}

/// Bin test slots by training frequency and score both systems per bin.
pub fn frequency_bins(
    train: &[Utterance],
    test: &[Utterance],
    hyp_pat: &[String],
    hyp_kpat: &[String],
) -> Result<Vec<FreqBinRow>, EvalError> {
    if test.len() != hyp_pat.len() || test.len() != hyp_kpat.len() {
        return Err(EvalError::CountMismatch {
            refs: test.len(),
            hyps: hyp_pat.len().min(hyp_kpat.len()),
        });
    }
    let table = slot_frequency_table(train);
    let mut rows: Vec<(WerCounts, WerCounts, SlotCounts, SlotCounts, usize)> =
        vec![Default::default(); FREQ_BINS.len()];
    for ((u, hp), hk) in test.iter().zip(hyp_pat).zip(hyp_kpat) {
        for span in &u.slots {
            let freq = table.get(u.slot_text(span)).copied().unwrap_or(0);
            let bin = FREQ_BINS
                .iter()
                .position(|&(lo, hi)| freq >= lo && freq <= hi)
                .expect("bins cover all frequencies");
            let entry = &mut rows[bin];
            entry.0.add(&u.reference, hp)?;
            entry.1.add(&u.reference, hk)?;
            let single_slot = Utterance {
                slots: vec![span.clone()],
                ..u.clone()
            };
            score_slots(&single_slot, hp, &mut entry.2);
            score_slots(&single_slot, hk, &mut entry.3);
            entry.4 += 1;
        }
    }
    Ok(FREQ_BINS
        .iter()
        .zip(rows)
        .map(|(&(lo, hi), (wp, wk, sp, sk, n))| FreqBinRow {
            bin: bin_label(lo, hi),
            lo,
            hi,
            n_slots: n,
            wer_pat: wp.rate(),
            wer_kpat: wk.rate(),
            acc_pat: sp.accuracy(),
            acc_kpat: sk.accuracy(),
        })
        .collect())
}

/// Plot-ready TSV: `bin  wer_pat  wer_kpat  acc_pat  acc_kpat`.
pub fn bins_tsv(rows: &[FreqBinRow]) -> String {
    let mut out = String::from("bin\twer_pat\twer_kpat\tacc_pat\tacc_kpat\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\n",
            r.bin, r.wer_pat, r.wer_kpat, r.acc_pat, r.acc_kpat
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SlotSpan, Split};

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn wer_basics() {
        assert_eq!(wer(&words("a b c"), &words("a b c")).unwrap(), 0.0);
        assert!((wer(&words("a b c"), &words("a x c")).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(wer(&words("a b c"), &[]).unwrap(), 1.0);
        assert!(matches!(wer(&[], &words("a")), Err(EvalError::EmptyReference)));
    }

    #[test]
    fn corpus_wer_is_edit_ratio_not_mean_of_rates() {
        let mut counts = WerCounts::default();
        counts.add("a", "x").unwrap(); // 1 edit / 1 word
        counts.add("a b c d e f g h i", "a b c d e f g h i").unwrap(); // 0/9
        // mean of rates would be 0.5; edit ratio is 1/10
        assert!((counts.rate() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn shared_suffix_does_not_add_edits() {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(77, 0, 0);
        let vocab = ["alpha", "beta", "gamma", "delta"];
        for _ in 0..200 {
            let mk = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| -> Vec<&str> {
                (0..n).map(|_| vocab[rng.gen_range(0..vocab.len())]).collect()
            };
            let nr = rng.gen_range(1..6);
            let r = mk(&mut rng, nr);
            let nh = rng.gen_range(0..6);
            let h = mk(&mut rng, nh);
            let ns = rng.gen_range(0..4);
            let s = mk(&mut rng, ns);
            let base = word_edit_distance(&r, &h);
            let mut r2 = r.clone();
            r2.extend(&s);
            let mut h2 = h.clone();
            h2.extend(&s);
            assert!(
                word_edit_distance(&r2, &h2) <= base,
                "suffix increased edits: {r:?} {h:?} {s:?}"
            );
        }
    }

    fn utt(reference: &str, slot: (usize, usize, &str)) -> Utterance {
        Utterance {
            reference: reference.to_string(),
            asr: String::new(),
            slots: vec![SlotSpan {
                start: slot.0,
                end: slot.1,
                domain: slot.2.to_string(),
            }],
            split: Split::Test,
            freq_rank: 1,
        }
    }

    #[test]
    fn perfect_hypothesis_scores_perfectly() {
        let u = utt("my name is janie burdick", (11, 24, "full_names"));
        let counts = slot_metrics(&[u.clone()], &[u.reference.clone()]).unwrap();
        assert_eq!(counts.recall(), 1.0);
        assert_eq!(counts.accuracy(), 1.0);
    }

    #[test]
    fn half_right_two_word_slot() {
        let u = utt("my name is janie burdick", (11, 24, "full_names"));
        let counts = slot_metrics(&[u], &["my name is janie burger".to_string()]).unwrap();
        assert_eq!(counts.recall(), 0.5);
        assert_eq!(counts.accuracy(), 0.0);
    }

    #[test]
    fn exact_span_must_be_contiguous_and_ordered() {
        let u = utt("my name is janie burdick", (11, 24, "full_names"));
        // both words present but out of order
        let counts = slot_metrics(&[u.clone()], &["burdick janie is my name".to_string()]).unwrap();
        assert_eq!(counts.recall(), 1.0);
        assert_eq!(counts.accuracy(), 0.0);
        // split by an inserted content word ("big" is not a stop word)
        let counts = slot_metrics(&[u], &["my name is janie big burdick".to_string()]).unwrap();
        assert_eq!(counts.accuracy(), 0.0);
    }

    #[test]
    fn accuracy_one_implies_recall_one_per_utterance() {
        let u = utt("i stay in bedford", (10, 17, "street_names"));
        for hyp in ["i stay in bedford", "bedford", "stay bedford yes"] {
            let counts = slot_metrics(std::slice::from_ref(&u), &[hyp.to_string()]).unwrap();
            if counts.accuracy() == 1.0 {
                assert_eq!(counts.recall(), 1.0, "hyp {hyp:?}");
            }
        }
    }

    #[test]
    fn stop_words_are_ignored_in_slot_scoring() {
        // slot contains a stop word ("the"); it should not count
        let reference = "go to the grand hotel";
        let u = utt(reference, (6, 21, "cities_states"));
        assert_eq!(u.slot_text(&u.slots[0]), "the grand hotel");
        let counts = slot_metrics(&[u], &["go to grand hotel".to_string()]).unwrap();
        assert_eq!(counts.recall(), 1.0);
        assert_eq!(counts.accuracy(), 1.0);
    }

    /// Hand-scored fixture batch: recall and accuracy written out by hand
    /// for each pair, then asserted in aggregate.
    #[test]
    fn hand_scored_fixture_batch() {
        let fixtures: Vec<(Utterance, &str, usize, usize, bool)> = vec![
            // (utterance, hypothesis, slot words, found, exact span)
            (utt("i stay in bedford", (10, 17, "s")), "i stay in bedford", 1, 1, true),
            (utt("i stay in bedford", (10, 17, "s")), "i stay in bedworth", 1, 0, false),
            (utt("my name is janie burdick", (11, 24, "n")), "my name is janie burdick", 2, 2, true),
            (utt("my name is janie burdick", (11, 24, "n")), "my name is jamie burdick", 2, 1, false),
            (utt("my name is janie burdick", (11, 24, "n")), "janie burdick", 2, 2, true),
            (utt("flying into ohare", (12, 17, "a")), "flying into ohare airport", 1, 1, true),
            (utt("flying into ohare", (12, 17, "a")), "flying into nowhere", 1, 0, false),
            (utt("book a car to fairhope", (14, 22, "c")), "book a car to fairgrove", 1, 0, false),
        ];
        let mut counts = SlotCounts::default();
        let mut expect_words = 0;
        let mut expect_found = 0;
        let mut expect_exact = 0;
        for (u, hyp, w, f, exact) in &fixtures {
            score_slots(u, hyp, &mut counts);
            expect_words += w;
            expect_found += f;
            expect_exact += usize::from(*exact);
        }
        assert_eq!(counts.slot_words, expect_words);
        assert_eq!(counts.slot_words_found, expect_found);
        assert_eq!(counts.exact_spans, expect_exact);
        assert_eq!(counts.slot_utterances, fixtures.len());
    }

    #[test]
    fn werr_reproduces_published_relative_numbers() {
        assert!((werr_percent(10.7, 9.9) - 7.5).abs() < 0.1);
        assert!((werr_percent(34.7, 31.3) - 9.8).abs() < 0.1);
        assert_eq!(werr_percent(8.0, 8.0), 0.0);
    }

    #[test]
    fn compare_report_requires_same_test_set() {
        let utts = vec![utt("i stay in bedford", (10, 17, "s"))];
        let a = build_report("pat", &utts, &["i stay in bedford".to_string()]).unwrap();
        let b = build_report("kpat", &utts, &["i stay in bedworth".to_string()]).unwrap();
        let cmp = compare_report(&a, &b).unwrap();
        assert_eq!(cmp.baseline, "pat");
        assert!(cmp.wer_delta > 0.0);
        let other = build_report(
            "kpat",
            &[utt("rather more words here now", (0, 6, "s"))],
            &["rather more words here now".to_string()],
        )
        .unwrap();
        assert!(matches!(compare_report(&a, &other), Err(EvalError::TestSetMismatch(_))));
    }

    fn train_with_freq(entity: &str, n: usize) -> Vec<Utterance> {
        (0..n)
            .map(|_| {
                let reference = format!("i stay in {entity}");
                let end = reference.len();
                utt(Box::leak(reference.into_boxed_str()), (10, end, "s"))
            })
            .collect()
    }

    #[test]
    fn bin_boundaries_are_inclusive() {
        let mut train = train_with_freq("alphaville", 10);
        train.extend(train_with_freq("betatown", 11));
        let test = vec![
            utt("i stay in alphaville", (10, 20, "s")),
            utt("i stay in betatown", (10, 18, "s")),
            utt("i stay in gammaport", (10, 19, "s")), // unseen -> oov bin
        ];
        let hyp: Vec<String> = test.iter().map(|u| u.reference.clone()).collect();
        let rows = frequency_bins(&train, &test, &hyp, &hyp).unwrap();
        assert_eq!(rows[0].bin, "oov");
        assert_eq!(rows[0].n_slots, 1);
        assert_eq!(rows[1].bin, "1-10");
        assert_eq!(rows[1].n_slots, 1); // freq 10 in first bin
        assert_eq!(rows[2].bin, "11-50");
        assert_eq!(rows[2].n_slots, 1); // freq 11 in second bin
        let total: usize = rows.iter().map(|r| r.n_slots).sum();
        assert_eq!(total, 3);
    }

    #[test]
    fn all_unseen_slots_land_in_oov_bin() {
        let train: Vec<Utterance> = Vec::new();
        let test = vec![
            utt("i stay in bedford", (10, 17, "s")),
            utt("i stay in oakwood", (10, 17, "s")),
        ];
        let hyp: Vec<String> = test.iter().map(|u| u.reference.clone()).collect();
        let rows = frequency_bins(&train, &test, &hyp, &hyp).unwrap();
        assert_eq!(rows[0].n_slots, 2);
        assert!(rows[1..].iter().all(|r| r.n_slots == 0));
    }

    #[test]
    fn tsv_emission_has_header_and_rows() {
        let rows = vec![FreqBinRow {
            bin: "1-10".into(),
            lo: 1,
            hi: 10,
            n_slots: 5,
            wer_pat: 0.25,
            wer_kpat: 0.20,
            acc_pat: 0.6,
            acc_kpat: 0.8,
        }];
        let tsv = bins_tsv(&rows);
        let mut lines = tsv.lines();
        assert_eq!(lines.next().unwrap(), "bin\twer_pat\twer_kpat\tacc_pat\tacc_kpat");
        assert_eq!(lines.next().unwrap(), "1-10\t0.2500\t0.2000\t0.6000\t0.8000");
    }

    #[test]
    fn report_serializes_with_metadata() {
        let utts = vec![utt("i stay in bedford", (10, 17, "s"))];
        let report = build_report("pat", &utts, &["i stay in bedford".to_string()]).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("stopwords_version"));
        assert!(json.contains("per_domain"));
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
