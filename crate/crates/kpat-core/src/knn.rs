//! Retrieval-augmented decoding: interpolate the model softmax with a
//! distribution formed over retrieved datastore values.
//!
//! Per step: compute the model distribution and the causal query key from
//! the decoder states, retrieve k neighbors by squared L2, softmax their
//! negative distances aggregated per value, and take the convex combination
//! `(1 - lambda) * p_model + lambda * p_knn`. Retrieval failure at a step
//! degrades that step to lambda = 0 instead of erroring mid-decode.

use serde::Serialize;
use thiserror::Error;

use crate::datastore::{query_key, Datastore, DatastoreError};
use crate::index::{exact_search, AnnIndex, IndexError, NeighborSet};
use crate::lexicon::Lexicon;
use crate::model::{argmax_lowest, softmax_vec, EncoderOutput, ModelError, PatModel};
use crate::tokenizer::{Vocabulary, BOS_ID, EOS_ID};

#[derive(Debug, Error)]
pub enum KnnError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Datastore(#[from] DatastoreError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("lambda {0} outside [0, 1]")]
    BadLambda(f32),
    #[error("{0}")]
    BadParams(String),
}

/// Score-interpolation settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize, Serialize)]
#[serde(default)]
pub struct InterpolationParams {
    pub lambda: f32,
    pub k: usize,
    /// Temperature over squared L2 distances in the retrieval softmax.
    pub knn_temperature: f32,
    pub nprobe: usize,
}

impl Default for InterpolationParams {
    fn default() -> Self {
        InterpolationParams {
            lambda: 0.5,
            k: 10,
            knn_temperature: 1.0,
            nprobe: crate::index::DEFAULT_NPROBE,
        }
    }
}

impl InterpolationParams {
    pub fn validate(&self) -> Result<(), KnnError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(KnnError::BadLambda(self.lambda));
        }
        if self.k == 0 {
            return Err(KnnError::BadParams("k must be at least 1".into()));
        }
        if self.knn_temperature <= 0.0 {
            return Err(KnnError::BadParams(format!(
                "knn temperature {} must be positive",
                self.knn_temperature
            )));
        }
        if self.nprobe == 0 {
            return Err(KnnError::BadParams("nprobe must be at least 1".into()));
        }
        Ok(())
    }
}

/// Distribution over the vocabulary from retrieved neighbors:
/// `p(y) ∝ Σ_j 1[v_j = y] exp(-d_j / T)`, zero elsewhere. The minimum
/// distance is subtracted before exponentiation, which cancels in the
/// normalization and avoids underflowing every term at once.
pub fn knn_distribution(neighbors: &NeighborSet, t_knn: f32, vocab: usize) -> Vec<f32> {
    let mut p = vec![0.0f32; vocab];
    if neighbors.is_empty() {
        return p;
    }
    let min_d = neighbors
        .iter()
        .map(|n| n.dist)
        .fold(f32::MAX, f32::min);
    let mut total = 0.0f32;
    for n in neighbors.iter() {
        let w = (-(n.dist - min_d) / t_knn).exp();
        p[n.value as usize] += w;
        total += w;
    }
    for v in &mut p {
        *v /= total;
    }
    p
}

/// Elementwise convex combination of two distributions over the same
/// vocabulary.
pub fn interpolate(p_model: &[f32], p_knn: &[f32], lambda: f32) -> Result<Vec<f32>, KnnError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(KnnError::BadLambda(lambda));
    }
    if p_model.len() != p_knn.len() {
        return Err(KnnError::BadParams(format!(
            "distribution sizes differ: {} vs {}",
            p_model.len(),
            p_knn.len()
        )));
    }
    Ok(p_model
        .iter()
        .zip(p_knn)
        .map(|(&a, &b)| (1.0 - lambda) * a + lambda * b)
        .collect())
}

/// Per-step trace record for `--trace` output.
#[derive(Debug, Clone, Serialize)]
pub struct StepTrace {
    pub token: u32,
    pub p_pat_top5: Vec<(u32, f32)>,
    pub knn_values: Vec<u32>,
    pub knn_distances: Vec<f32>,
    pub lambda_used: f32,
}

/// Retrieval-augmented greedy decoder bound to a (model, datastore, index)
/// triple whose compatibility has been verified once up front.
pub struct KpatDecoder<'a> {
    model: &'a PatModel<f32>,
    datastore: &'a Datastore,
    index: Option<&'a AnnIndex>,
    params: InterpolationParams,
}

impl<'a> KpatDecoder<'a> {
    /// Verifies the model checksum against the datastore metadata and, when
    /// an index is supplied, the index against the datastore contents. An
    /// empty datastore is allowed and degrades decoding to the model alone.
    pub fn new(
        model: &'a PatModel<f32>,
        vocab: &Vocabulary,
        datastore: &'a Datastore,
        index: Option<&'a AnnIndex>,
        params: InterpolationParams,
    ) -> Result<Self, KnnError> {
        params.validate()?;
        crate::datastore::verify_compatible(datastore, model, vocab)?;
        if let Some(index) = index {
            index.verify(datastore)?;
        }
        if datastore.is_empty() {
            log::warn!("datastore is empty; decoding with lambda = 0 (model only)");
        }
        Ok(KpatDecoder {
            model,
            datastore,
            index,
            params,
        })
    }

    pub fn params(&self) -> &InterpolationParams {
        &self.params
    }

    fn retrieve(&self, query: &[f32]) -> Result<NeighborSet, KnnError> {
        if self.datastore.is_empty() {
            return Ok(NeighborSet::default());
        }
        let k = self.params.k;
        match self.index {
            Some(index) => {
                let nprobe = self.params.nprobe.min(index.n_centroids());
                Ok(index.search(self.datastore, query, k, nprobe)?)
            }
            None => Ok(exact_search(self.datastore, query, k)?),
        }
    }

    /// Greedy decoding with per-step score interpolation. Returns generated
    /// token ids (no BOS/EOS) and per-step traces when `want_trace` is set.
    pub fn decode(
        &self,
        asr_tokens: &[u32],
        phones: &[u32],
        max_len: usize,
        want_trace: bool,
    ) -> Result<(Vec<u32>, Option<Vec<StepTrace>>), KnnError> {
        let enc_t = self.model.encode_text(asr_tokens)?;
        let enc_p = self.model.encode_phones(phones)?;
        self.decode_with_encodings(&enc_t, &enc_p, max_len, want_trace)
    }

    pub fn decode_with_encodings(
        &self,
        enc_t: &EncoderOutput<f32>,
        enc_p: &EncoderOutput<f32>,
        max_len: usize,
        want_trace: bool,
    ) -> Result<(Vec<u32>, Option<Vec<StepTrace>>), KnnError> {
        let vocab = self.model.config().text_vocab;
        let mut out = Vec::new();
        let mut traces = want_trace.then(Vec::new);
        let mut prefix = vec![BOS_ID];
        while out.len() < max_len {
            let (states, _) = self.model.decode_states(enc_t, enc_p, &prefix)?;
            let last = states.row(states.rows() - 1);
            let p_pat = softmax_vec(&self.model.state_logits(last));
            let query = query_key(&states).map_err(DatastoreError::Tensor)?;
            let neighbors = self.retrieve(&query)?;
            let lambda_used = if neighbors.is_empty() {
                0.0
            } else {
                self.params.lambda
            };
            let p = if lambda_used == 0.0 {
                p_pat.clone()
            } else {
                let p_knn = knn_distribution(&neighbors, self.params.knn_temperature, vocab);
                interpolate(&p_pat, &p_knn, lambda_used)?
            };
            let next = argmax_lowest(&p);
            if let Some(traces) = traces.as_mut() {
                traces.push(StepTrace {
                    token: next,
                    p_pat_top5: top_n(&p_pat, 5),
                    knn_values: neighbors.iter().map(|n| n.value).collect(),
                    knn_distances: neighbors.iter().map(|n| n.dist).collect(),
                    lambda_used,
                });
            }
            if next == EOS_ID {
                break;
            }
            out.push(next);
            prefix.push(next);
        }
        Ok((out, traces))
    }
}

/// Convenience single-call form of [`KpatDecoder`].
#[allow(clippy::too_many_arguments)]
pub fn decode_kpat(
    model: &PatModel<f32>,
    vocab: &Vocabulary,
    lexicon: &Lexicon,
    datastore: &Datastore,
    index: Option<&AnnIndex>,
    asr_text: &str,
    params: InterpolationParams,
    max_len: usize,
) -> Result<Vec<u32>, KnnError> {
    let decoder = KpatDecoder::new(model, vocab, datastore, index, params)?;
    let tokens = vocab.encode(asr_text).ids;
    let phones = lexicon.phonemize(asr_text).ids;
    let (out, _) = decoder.decode(&tokens, &phones, max_len, false)?;
    Ok(out)
}

fn top_n(p: &[f32], n: usize) -> Vec<(u32, f32)> {
    let mut idx: Vec<u32> = (0..p.len() as u32).collect();
    idx.sort_by(|&a, &b| {
        p[b as usize]
            .total_cmp(&p[a as usize])
            .then(a.cmp(&b))
    });
    idx.truncate(n);
    idx.into_iter().map(|i| (i, p[i as usize])).collect()
}
