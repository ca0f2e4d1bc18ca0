//! Key/value memory over pooled decoder states.
//!
//! Build mode pools the full decoder-state matrix with dot-product
//! self-attention — every key sees past *and future* positions — and pairs
//! the pooled row at position i-1 with the target token at position i.
//! Inference queries are causal: the attention row for the newest position
//! is computed over the prefix only, so a query never peeks ahead. The two
//! agree exactly at the final position, where no future exists.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Utterance;
use crate::graph::softmax_in_place;
use crate::lexicon::Lexicon;
use crate::model::{ModelError, PatModel};
use crate::tensor::{dot, matmul_acc, Scalar, Tensor, TensorError};
use crate::tokenizer::{Vocabulary, BOS_ID};

pub const MAGIC: &[u8; 4] = b"KPAT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatastoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected KPAT")]
    BadMagic,
    #[error("unsupported datastore version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed trailer: {0}")]
    BadTrailer(String),
    #[error("key dimension mismatch: {lhs} vs {rhs}")]
    DimMismatch { lhs: usize, rhs: usize },
    #[error("model checksum mismatch: datastore was built with a different model")]
    ChecksumMismatch,
    #[error("tokenizer mismatch: datastore was built with vocabulary {expected}, got {got}")]
    TokenizerMismatch { expected: String, got: String },
}

/// Full look-ahead pooling: `S = softmax_rows(D D^T)`, `E = S D`. Row i of
/// the result is the attention-weighted mixture the paper uses as key for
/// position i.
pub fn pool_keys<S: Scalar>(states: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
    let (n, d) = (states.rows(), states.cols());
    if n == 0 {
        return Err(TensorError::EmptyInput { op: "pool_keys" });
    }
    let mut scores = Tensor::zeros(vec![n, n]);
    crate::tensor::matmul_nt_acc(states.data(), states.data(), scores.data_mut(), n, d, n);
    for row in scores.data_mut().chunks_exact_mut(n) {
        softmax_in_place(row);
    }
    let mut pooled = Tensor::zeros(vec![n, d]);
    matmul_acc(scores.data(), states.data(), pooled.data_mut(), n, n, d);
    Ok(pooled)
}

/// Causal query key: the attention row for the latest prefix position,
/// computed over the prefix only. With a single-row prefix the key is that
/// row itself.
pub fn query_key<S: Scalar>(prefix_states: &Tensor<S>) -> Result<Vec<S>, TensorError> {
    let (n, d) = (prefix_states.rows(), prefix_states.cols());
    if n == 0 {
        return Err(TensorError::EmptyInput { op: "query_key" });
    }
    let last = prefix_states.row(n - 1);
    let mut weights: Vec<S> = (0..n)
        .map(|i| dot(last, prefix_states.row(i)))
        .collect();
    softmax_in_place(&mut weights);
    let mut key = vec![S::ZERO; d];
    for (i, &w) in weights.iter().enumerate() {
        for (k, &x) in key.iter_mut().zip(prefix_states.row(i)) {
            *k += w * x;
        }
    }
    Ok(key)
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
struct Trailer {
    domains: BTreeMap<String, Vec<(u64, u64)>>,
    tokenizer_version: String,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

/// Flat key/value store: contiguous f32 keys, one token id per key, plus a
/// domain index mapping tags to entry ranges.
#[derive(Debug, Clone)]
pub struct Datastore {
    dim: usize,
    keys: Vec<f32>,
    values: Vec<u32>,
    trailer: Trailer,
    model_checksum: [u8; 32],
}

impl Datastore {
    pub fn new(dim: usize, model_checksum: [u8; 32], tokenizer_version: String) -> Self {
        Datastore {
            dim,
            keys: Vec::new(),
            values: Vec::new(),
            trailer: Trailer {
                domains: BTreeMap::new(),
                tokenizer_version,
                extra: BTreeMap::new(),
            },
            model_checksum,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn key(&self, i: usize) -> &[f32] {
        &self.keys[i * self.dim..(i + 1) * self.dim]
    }

    pub fn keys_flat(&self) -> &[f32] {
        &self.keys
    }

    pub fn value(&self, i: usize) -> u32 {
        self.values[i]
    }

    pub fn model_checksum(&self) -> &[u8; 32] {
        &self.model_checksum
    }

    pub fn tokenizer_version(&self) -> &str {
        &self.trailer.tokenizer_version
    }

    pub fn domains(&self) -> &BTreeMap<String, Vec<(u64, u64)>> {
        &self.trailer.domains
    }

    pub fn set_meta(&mut self, key: &str, value: serde_json::Value) {
        self.trailer.extra.insert(key.to_string(), value);
    }

    pub fn push(&mut self, key: &[f32], value: u32, domain: Option<&str>) -> Result<(), DatastoreError> {
        if key.len() != self.dim {
            return Err(DatastoreError::DimMismatch {
                lhs: key.len(),
                rhs: self.dim,
            });
        }
        if key.iter().any(|v| !v.is_finite()) {
            return Err(DatastoreError::Tensor(TensorError::NonFinite { op: "datastore push" }));
        }
        let idx = self.values.len() as u64;
        self.keys.extend_from_slice(key);
        self.values.push(value);
        if let Some(tag) = domain {
            let ranges = self.trailer.domains.entry(tag.to_string()).or_default();
            match ranges.last_mut() {
                Some(last) if last.1 == idx => last.1 = idx + 1,
                _ => ranges.push((idx, idx + 1)),
            }
        }
        Ok(())
    }

    /// Concatenate two stores built against the same model and key space.
    pub fn merge(a: &Datastore, b: &Datastore) -> Result<Datastore, DatastoreError> {
        if a.dim != b.dim {
            return Err(DatastoreError::DimMismatch { lhs: a.dim, rhs: b.dim });
        }
        if a.model_checksum != b.model_checksum {
            return Err(DatastoreError::ChecksumMismatch);
        }
        if a.trailer.tokenizer_version != b.trailer.tokenizer_version {
            return Err(DatastoreError::TokenizerMismatch {
                expected: a.trailer.tokenizer_version.clone(),
                got: b.trailer.tokenizer_version.clone(),
            });
        }
        let mut out = a.clone();
        let offset = a.len() as u64;
        out.keys.extend_from_slice(&b.keys);
        out.values.extend_from_slice(&b.values);
        for (tag, ranges) in &b.trailer.domains {
            let dst = out.trailer.domains.entry(tag.clone()).or_default();
            for &(s, e) in ranges {
                dst.push((s + offset, e + offset));
            }
        }
        Ok(out)
    }

    /// SHA-256 over dim, count, keys, and values; identifies the store an
    /// index was built against.
    pub fn content_checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        h.update((self.len() as u64).to_le_bytes());
        for &k in &self.keys {
            h.update(k.to_le_bytes());
        }
        for &v in &self.values {
            h.update(v.to_le_bytes());
        }
        let digest = h.finalize();
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        out
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), DatastoreError> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        w.write_u64::<LittleEndian>(self.len() as u64)?;
        w.write_all(&self.model_checksum)?;
        for &k in &self.keys {
            w.write_f32::<LittleEndian>(k)?;
        }
        for &v in &self.values {
            w.write_u32::<LittleEndian>(v)?;
        }
        let trailer = serde_json::to_vec(&self.trailer)
            .map_err(|e| DatastoreError::BadTrailer(e.to_string()))?;
        let trailer_offset = (MAGIC.len() + 4 + 4 + 8 + 32) as u64
            + (self.keys.len() * 4) as u64
            + (self.values.len() * 4) as u64;
        w.write_all(&trailer)?;
        w.write_u64::<LittleEndian>(trailer_offset)?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Datastore, DatastoreError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(DatastoreError::BadMagic);
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(DatastoreError::UnsupportedVersion(version));
        }
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let count = r.read_u64::<LittleEndian>()? as usize;
        let mut model_checksum = [0u8; 32];
        r.read_exact(&mut model_checksum)?;
        let mut keys = Vec::with_capacity(count * dim);
        for _ in 0..count * dim {
            keys.push(r.read_f32::<LittleEndian>()?);
        }
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(r.read_u32::<LittleEndian>()?);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if rest.len() < 8 {
            return Err(DatastoreError::BadTrailer("missing trailer offset".into()));
        }
        let trailer_bytes = &rest[..rest.len() - 8];
        let trailer: Trailer = serde_json::from_slice(trailer_bytes)
            .map_err(|e| DatastoreError::BadTrailer(e.to_string()))?;
        Ok(Datastore {
            dim,
            keys,
            values,
            trailer,
            model_checksum,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DatastoreError> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Datastore, DatastoreError> {
        let bytes = std::fs::read(path)?;
        Datastore::read(bytes.as_slice())
    }
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    /// Only memorize utterances whose domain tag matches.
    pub domain_filter: Option<String>,
    /// Skip the BOS-keyed first-token entry and drop utterances with fewer
    /// than two target tokens, matching the narrower build-mode index range.
    pub strict_first_token: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            domain_filter: None,
            strict_first_token: false,
        }
    }
}

/// Teacher-forced memorization pass: for each utterance, run the decoder
/// over the reference, pool the states with look-ahead, and store one
/// (key, next-token) pair per target position, in corpus order.
pub fn build_datastore(
    model: &PatModel<f32>,
    vocab: &Vocabulary,
    lexicon: &Lexicon,
    corpus: &[Utterance],
    opts: &BuildOptions,
) -> Result<Datastore, DatastoreError> {
    let mut ds = Datastore::new(
        model.config().d_k,
        model.checksum(),
        vocab.version_hash(),
    );
    for utt in corpus {
        let domain = utt.domain().map(str::to_string);
        if let Some(filter) = &opts.domain_filter {
            if domain.as_deref() != Some(filter.as_str()) {
                continue;
            }
        }
        let target = vocab.encode(&utt.reference).ids;
        if target.is_empty() || (opts.strict_first_token && target.len() < 2) {
            continue;
        }
        let asr_tokens = vocab.encode(&utt.asr).ids;
        let phones = lexicon.phonemize(&utt.asr).ids;
        let enc_t = model.encode_text(&asr_tokens)?;
        let enc_p = model.encode_phones(&phones)?;
        let mut prefix = Vec::with_capacity(target.len() + 1);
        prefix.push(BOS_ID);
        prefix.extend_from_slice(&target);
        let (states, _) = model.decode_states(&enc_t, &enc_p, &prefix)?;
        let (pooled, first) = if opts.strict_first_token {
            // paper-style index range: drop the BOS row from the pooled
            // matrix and start at the second target token
            let rows = states.rows();
            let mut sub = Tensor::zeros(vec![rows - 1, states.cols()]);
            sub.data_mut()
                .copy_from_slice(&states.data()[states.cols()..]);
            (pool_keys(&sub)?, 1usize)
        } else {
            (pool_keys(&states)?, 0usize)
        };
        for (t, &value) in target.iter().enumerate().skip(first) {
            let row = if opts.strict_first_token { t - 1 } else { t };
            ds.push(pooled.row(row), value, domain.as_deref())?;
        }
    }
    Ok(ds)
}

/// Checks a (model, vocabulary) pair against the store's metadata.
pub fn verify_compatible(
    ds: &Datastore,
    model: &PatModel<f32>,
    vocab: &Vocabulary,
) -> Result<(), DatastoreError> {
    if ds.dim() != model.config().d_k {
        return Err(DatastoreError::DimMismatch {
            lhs: ds.dim(),
            rhs: model.config().d_k,
        });
    }
    if ds.model_checksum() != &model.checksum() {
        return Err(DatastoreError::ChecksumMismatch);
    }
    if ds.tokenizer_version() != vocab.version_hash() {
        return Err(DatastoreError::TokenizerMismatch {
            expected: ds.tokenizer_version().to_string(),
            got: vocab.version_hash(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_states(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(vec![rows, cols], -1.5, 1.5, &mut rng)
    }

    /// Plain-loop reference for the pooling math.
    fn pool_reference(states: &Tensor<f64>) -> Vec<Vec<f64>> {
        let (n, d) = (states.rows(), states.cols());
        let mut out = Vec::new();
        for i in 0..n {
            let mut scores: Vec<f64> = (0..n)
                .map(|j| {
                    (0..d)
                        .map(|c| states.at(i, c) * states.at(j, c))
                        .sum::<f64>()
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::MIN, f64::max);
            let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            scores = exps.iter().map(|&e| e / sum).collect();
            let mut row = vec![0.0; d];
            for (j, &w) in scores.iter().enumerate() {
                for (c, r) in row.iter_mut().enumerate() {
                    *r += w * states.at(j, c);
                }
            }
            out.push(row);
        }
        out
    }

    #[test]
    fn identical_rows_pool_to_themselves() {
        let states = Tensor::<f64>::new(vec![3, 2], vec![0.4, -0.7, 0.4, -0.7, 0.4, -0.7]).unwrap();
        let pooled = pool_keys(&states).unwrap();
        for r in 0..3 {
            assert!((pooled.at(r, 0) - 0.4).abs() < 1e-12);
            assert!((pooled.at(r, 1) + 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn two_by_two_identity_matches_hand_computation() {
        let states = Tensor::<f64>::eye(2);
        let pooled = pool_keys(&states).unwrap();
        // row 0 scores are [1, 0] -> weights [e/(e+1), 1/(e+1)]
        let e = std::f64::consts::E;
        let w = e / (e + 1.0);
        assert!((pooled.at(0, 0) - w).abs() < 1e-3);
        assert!((pooled.at(0, 1) - (1.0 - w)).abs() < 1e-3);
        assert!((pooled.at(0, 0) - 0.731).abs() < 1e-3);
        assert!((pooled.at(0, 1) - 0.269).abs() < 1e-3);
    }

    #[test]
    fn pooling_matches_reference_on_random_matrices() {
        for seed in 0..20 {
            let states = random_states(2 + (seed as usize % 7), 6, seed);
            let pooled = pool_keys(&states).unwrap();
            let reference = pool_reference(&states);
            for (r, row) in reference.iter().enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    assert!(
                        (pooled.at(r, c) - v).abs() < 1e-5,
                        "seed {seed} ({r},{c}): {} vs {v}",
                        pooled.at(r, c)
                    );
                }
            }
        }
    }

    #[test]
    fn pooled_keys_stay_in_row_envelope() {
        // convex combinations cannot escape the coordinate-wise min/max
        for seed in 20..40 {
            let states = random_states(5, 4, seed);
            let pooled = pool_keys(&states).unwrap();
            for c in 0..4 {
                let lo = (0..5).map(|r| states.at(r, c)).fold(f64::MAX, f64::min);
                let hi = (0..5).map(|r| states.at(r, c)).fold(f64::MIN, f64::max);
                for r in 0..5 {
                    assert!(pooled.at(r, c) >= lo - 1e-9 && pooled.at(r, c) <= hi + 1e-9);
                }
            }
        }
    }

    #[test]
    fn single_row_prefix_query_is_that_row() {
        let states = Tensor::<f64>::new(vec![1, 3], vec![0.1, -2.0, 3.5]).unwrap();
        let key = query_key(&states).unwrap();
        assert_eq!(key, vec![0.1, -2.0, 3.5]);
    }

    #[test]
    fn causal_query_differs_from_lookahead_key_except_at_end() {
        let mut diff_seen = false;
        for seed in 40..50 {
            let states = random_states(6, 8, seed);
            let pooled = pool_keys(&states).unwrap();
            for t in 0..6 {
                let mut prefix = Tensor::zeros(vec![t + 1, 8]);
                prefix
                    .data_mut()
                    .copy_from_slice(&states.data()[..(t + 1) * 8]);
                let q = query_key(&prefix).unwrap();
                if t == 5 {
                    // last position: same attention support, identical math
                    assert_eq!(q.as_slice(), pooled.row(5));
                } else if q
                    .iter()
                    .zip(pooled.row(t))
                    .any(|(a, b)| (a - b).abs() > 1e-9)
                {
                    diff_seen = true;
                }
            }
        }
        assert!(diff_seen, "look-ahead must actually change non-final keys");
    }

    fn tiny_store(checksum: [u8; 32]) -> Datastore {
        let mut ds = Datastore::new(2, checksum, "tokv1".into());
        ds.push(&[0.0, 0.0], 5, Some("airports")).unwrap();
        ds.push(&[1.0, 0.0], 6, Some("airports")).unwrap();
        ds.push(&[0.0, 1.0], 7, Some("cities_states")).unwrap();
        ds
    }

    #[test]
    fn merge_empty_is_identity_and_counts_add() {
        let empty = Datastore::new(2, [1; 32], "tokv1".into());
        let ds = tiny_store([1; 32]);
        let merged = Datastore::merge(&empty, &ds).unwrap();
        assert_eq!(merged.len(), ds.len());
        assert_eq!(merged.keys_flat(), ds.keys_flat());
        let both = Datastore::merge(&ds, &ds).unwrap();
        assert_eq!(both.len(), 2 * ds.len());
        assert_eq!(both.domains()["airports"], vec![(0, 2), (3, 5)]);
    }

    #[test]
    fn merge_refuses_mismatched_stores() {
        let a = tiny_store([1; 32]);
        let b = tiny_store([2; 32]);
        assert!(matches!(
            Datastore::merge(&a, &b),
            Err(DatastoreError::ChecksumMismatch)
        ));
        let c = Datastore::new(3, [1; 32], "tokv1".into());
        assert!(matches!(
            Datastore::merge(&a, &c),
            Err(DatastoreError::DimMismatch { .. })
        ));
    }

    #[test]
    fn file_round_trip_is_byte_stable() {
        let ds = tiny_store([7; 32]);
        let mut buf_a = Vec::new();
        ds.write(&mut buf_a).unwrap();
        let back = Datastore::read(buf_a.as_slice()).unwrap();
        assert_eq!(back.len(), ds.len());
        assert_eq!(back.keys_flat(), ds.keys_flat());
        assert_eq!(back.domains(), ds.domains());
        assert_eq!(back.model_checksum(), ds.model_checksum());
        let mut buf_b = Vec::new();
        back.write(&mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
    }

    #[test]
    fn content_checksum_tracks_entries() {
        let a = tiny_store([7; 32]);
        let mut b = tiny_store([7; 32]);
        assert_eq!(a.content_checksum(), b.content_checksum());
        b.push(&[2.0, 2.0], 9, None).unwrap();
        assert_ne!(a.content_checksum(), b.content_checksum());
    }

    #[test]
    fn domain_ranges_compress_contiguous_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ds = Datastore::new(1, [0; 32], "t".into());
        let mut expect: Vec<(String, u64)> = Vec::new();
        for i in 0..50u64 {
            let tag = if rng.gen_bool(0.5) { "a" } else { "b" };
            ds.push(&[i as f32], i as u32, Some(tag)).unwrap();
            expect.push((tag.to_string(), i));
        }
        // every index appears in exactly one of its domain's ranges
        for (tag, idx) in expect {
            let ranges = &ds.domains()[&tag];
            assert_eq!(
                ranges.iter().filter(|&&(s, e)| idx >= s && idx < e).count(),
                1
            );
        }
    }
}
