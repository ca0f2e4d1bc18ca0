//! ASR error correction with a phone-augmented transformer and kNN datastore
//! retrieval.
//!
//! The pipeline: a seq2seq corrector reads an ASR hypothesis twice — as
//! sub-word text and as a phoneme sequence — and rewrites it. Decoder states
//! from training data are pooled into keys and memorized in an external
//! datastore; at inference the nearest stored states vote on the next token
//! and their distribution is interpolated with the model softmax. The point
//! of the datastore is rare slot entities (names, airports, streets, cities)
//! that a parametric model alone keeps getting wrong.
//!
//! Crate layout:
//! - [`tensor`] / [`graph`]: dense f32/f64 tensors with reverse-mode autodiff
//! - [`tokenizer`]: byte-pair-encoding sub-word vocabulary
//! - [`lexicon`]: pronunciation dictionary, letter-to-phoneme fallback,
//!   phoneme edit distance
//! - [`model`]: the phone augmented transformer (PAT)
//! - [`datastore`]: self-attention pooled decoder states as key/value memory
//! - [`index`]: IVF approximate nearest-neighbor search plus an exact oracle
//! - [`knn`]: retrieval distribution and score interpolation (k-PAT decoding)
//! - [`sim`]: synthetic corpus generation with phoneme-level error simulation
//! - [`eval`]: WER, slot recall/accuracy, frequency-binned reports

pub mod checkpoint;
pub mod corpus;
pub mod datastore;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod index;
pub mod knn;
pub mod lexicon;
pub mod model;
pub(crate) mod rng;
pub mod sim;
pub mod tensor;
pub mod tokenizer;

pub use graph::{Graph, NodeRef};
pub use tensor::{Scalar, Tensor, TensorError};
