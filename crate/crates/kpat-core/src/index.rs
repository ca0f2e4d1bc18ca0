//! Approximate nearest-neighbor search over datastore keys.
//!
//! An inverted-file (IVF) layout: k-means centroids partition the keys, a
//! query scans only the `nprobe` closest partitions, and distances within a
//! partition are exact squared L2. [`exact_search`] is the brute-force
//! oracle; probing every list reproduces it result-for-result.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::datastore::Datastore;
use crate::tensor::squared_l2;

pub const MAGIC: &[u8; 4] = b"KIVF";
pub const FORMAT_VERSION: u32 = 1;
pub const KMEANS_MAX_ITERS: usize = 25;
pub const DEFAULT_NPROBE: usize = 32;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected KIVF")]
    BadMagic,
    #[error("unsupported index version {0}")]
    UnsupportedVersion(u32),
    #[error("training sample of {sample} points cannot seed {requested} centroids")]
    SampleTooSmall { sample: usize, requested: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("nprobe {nprobe} outside 1..={n_centroids}")]
    BadNprobe { nprobe: usize, n_centroids: usize },
    #[error("dimension mismatch: index {index}, got {got}")]
    DimMismatch { index: usize, got: usize },
    #[error("index was built over a different datastore (checksum mismatch)")]
    DatastoreMismatch,
    #[error("index has no entries; call add first")]
    Unpopulated,
}

/// One retrieved entry: datastore position, stored token id, exact squared
/// L2 distance to the query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub entry: u64,
    pub value: u32,
    pub dist: f32,
}

/// Up to k neighbors, ascending by distance, ties broken by entry id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighborSet(pub Vec<Neighbor>);

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Neighbor> {
        self.0.iter()
    }

    pub fn entry_ids(&self) -> Vec<u64> {
        self.0.iter().map(|n| n.entry).collect()
    }
}

/// Max-heap candidate ordered by (distance, entry id); the heap keeps the k
/// best seen so far.
#[derive(PartialEq)]
struct Candidate {
    dist: f32,
    entry: u64,
    value: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.entry.cmp(&other.entry))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn top_k_collect(
    candidates: impl Iterator<Item = Candidate>,
    k: usize,
) -> NeighborSet {
    let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
    for c in candidates {
        if heap.len() < k {
            heap.push(c);
        } else if let Some(worst) = heap.peek() {
            if c.cmp(worst) == Ordering::Less {
                heap.pop();
                heap.push(c);
            }
        }
    }
    let mut v: Vec<Candidate> = heap.into_vec();
    v.sort_by(|a, b| a.cmp(b));
    NeighborSet(
        v.into_iter()
            .map(|c| Neighbor {
                entry: c.entry,
                value: c.value,
                dist: c.dist,
            })
            .collect(),
    )
}

/// Brute-force top-k by squared L2 over the whole store. The correctness
/// oracle for [`AnnIndex::search`], and the fallback searcher when no index
/// has been built.
pub fn exact_search(ds: &Datastore, query: &[f32], k: usize) -> Result<NeighborSet, IndexError> {
    if k == 0 {
        return Err(IndexError::ZeroK);
    }
    if query.len() != ds.dim() {
        return Err(IndexError::DimMismatch {
            index: ds.dim(),
            got: query.len(),
        });
    }
    Ok(top_k_collect(
        (0..ds.len()).map(|i| Candidate {
            dist: squared_l2(query, ds.key(i)),
            entry: i as u64,
            value: ds.value(i),
        }),
        k,
    ))
}

/// Lloyd's k-means with k-means++ seeding; at most [`KMEANS_MAX_ITERS`]
/// iterations, empty clusters re-seeded from the point farthest from its
/// centroid. Deterministic for a fixed seed.
pub fn train_centroids(
    sample: &[f32],
    dim: usize,
    n_centroids: usize,
    seed: u64,
) -> Result<Vec<f32>, IndexError> {
    let n = sample.len() / dim;
    if n < n_centroids || n_centroids == 0 {
        return Err(IndexError::SampleTooSmall {
            sample: n,
            requested: n_centroids,
        });
    }
    let point = |i: usize| &sample[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding: squared-distance-weighted draws
    let mut centroids: Vec<f32> = Vec::with_capacity(n_centroids * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(point(first));
    let mut d2: Vec<f32> = (0..n)
        .map(|i| squared_l2(point(i), &centroids[..dim]))
        .collect();
    for c in 1..n_centroids {
        let total: f64 = d2.iter().map(|&d| d as f64).sum();
        let pick = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                target -= d as f64;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        let start = c * dim;
        centroids.extend_from_slice(point(pick));
        for i in 0..n {
            let d = squared_l2(point(i), &centroids[start..start + dim]);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }

    let mut assign = vec![0usize; n];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for i in 0..n {
            let mut best = 0usize;
            let mut best_d = f32::MAX;
            for c in 0..n_centroids {
                let d = squared_l2(point(i), &centroids[c * dim..(c + 1) * dim]);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![0f64; n_centroids * dim];
        let mut counts = vec![0usize; n_centroids];
        for i in 0..n {
            counts[assign[i]] += 1;
            let dst = &mut sums[assign[i] * dim..(assign[i] + 1) * dim];
            for (s, &x) in dst.iter_mut().zip(point(i)) {
                *s += x as f64;
            }
        }
        for c in 0..n_centroids {
            if counts[c] == 0 {
                // re-seed from the point farthest from its assigned centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = squared_l2(point(a), &centroids[assign[a] * dim..(assign[a] + 1) * dim]);
                        let db = squared_l2(point(b), &centroids[assign[b] * dim..(assign[b] + 1) * dim]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .unwrap();
                centroids[c * dim..(c + 1) * dim].copy_from_slice(point(far));
                assign[far] = c;
            } else {
                for (j, cv) in centroids[c * dim..(c + 1) * dim].iter_mut().enumerate() {
                    *cv = (sums[c * dim + j] / counts[c] as f64) as f32;
                }
            }
        }
    }
    Ok(centroids)
}

/// Coarse-quantized inverted lists over a datastore's keys.
#[derive(Debug, Clone)]
pub struct AnnIndex {
    dim: usize,
    centroids: Vec<f32>,
    lists: Vec<Vec<u64>>,
    pub nprobe_default: usize,
    datastore_checksum: [u8; 32],
}

impl AnnIndex {
    /// Standard IVF sizing: ceil(sqrt(N)) clamped to [16, 4096].
    pub fn default_n_centroids(n_entries: usize) -> usize {
        ((n_entries as f64).sqrt().ceil() as usize).clamp(16, 4096)
    }

    /// Train centroids on a seeded sample of the store's keys and assign
    /// every entry to its nearest centroid.
    pub fn build(
        ds: &Datastore,
        n_centroids: Option<usize>,
        train_sample: usize,
        seed: u64,
    ) -> Result<AnnIndex, IndexError> {
        let n = ds.len();
        let n_centroids = n_centroids
            .unwrap_or_else(|| Self::default_n_centroids(n))
            .min(n.max(1));
        let dim = ds.dim();
        let sample: Vec<f32> = if train_sample >= n {
            ds.keys_flat().to_vec()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5A4D_504C);
            let mut picked: Vec<usize> = (0..n).collect();
            for i in 0..train_sample {
                let j = rng.gen_range(i..n);
                picked.swap(i, j);
            }
            picked.truncate(train_sample);
            picked.sort_unstable();
            let mut s = Vec::with_capacity(train_sample * dim);
            for i in picked {
                s.extend_from_slice(ds.key(i));
            }
            s
        };
        let centroids = train_centroids(&sample, dim, n_centroids, seed)?;
        let mut index = AnnIndex {
            dim,
            centroids,
            lists: vec![Vec::new(); n_centroids],
            nprobe_default: DEFAULT_NPROBE.min(n_centroids),
            datastore_checksum: ds.content_checksum(),
        };
        index.add(ds)?;
        Ok(index)
    }

    pub fn n_centroids(&self) -> usize {
        self.lists.len()
    }

    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn list(&self, c: usize) -> &[u64] {
        &self.lists[c]
    }

    pub fn datastore_checksum(&self) -> &[u8; 32] {
        &self.datastore_checksum
    }

    /// Assign every datastore entry to its nearest centroid (ties to the
    /// lower centroid id). Replaces existing assignments.
    pub fn add(&mut self, ds: &Datastore) -> Result<(), IndexError> {
        if ds.dim() != self.dim {
            return Err(IndexError::DimMismatch {
                index: self.dim,
                got: ds.dim(),
            });
        }
        for l in &mut self.lists {
            l.clear();
        }
        for i in 0..ds.len() {
            let c = self.nearest_centroid(ds.key(i));
            self.lists[c].push(i as u64);
        }
        self.datastore_checksum = ds.content_checksum();
        Ok(())
    }

    fn nearest_centroid(&self, key: &[f32]) -> usize {
        let mut best = 0usize;
        let mut best_d = f32::MAX;
        for c in 0..self.n_centroids() {
            let d = squared_l2(key, self.centroid(c));
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        best
    }

    /// Guard against pairing an index with the wrong datastore.
    pub fn verify(&self, ds: &Datastore) -> Result<(), IndexError> {
        if self.datastore_checksum != ds.content_checksum() {
            return Err(IndexError::DatastoreMismatch);
        }
        Ok(())
    }

    /// Scan the `nprobe` nearest centroids' lists and return the top-k
    /// entries by exact squared L2. Fewer than k results only if the probed
    /// lists hold fewer entries.
    pub fn search(
        &self,
        ds: &Datastore,
        query: &[f32],
        k: usize,
        nprobe: usize,
    ) -> Result<NeighborSet, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if nprobe == 0 || nprobe > self.n_centroids() {
            return Err(IndexError::BadNprobe {
                nprobe,
                n_centroids: self.n_centroids(),
            });
        }
        if query.len() != self.dim {
            return Err(IndexError::DimMismatch {
                index: self.dim,
                got: query.len(),
            });
        }
        if self.lists.iter().all(|l| l.is_empty()) && ds.len() > 0 {
            return Err(IndexError::Unpopulated);
        }
        let mut order: Vec<(f32, usize)> = (0..self.n_centroids())
            .map(|c| (squared_l2(query, self.centroid(c)), c))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(top_k_collect(
            order[..nprobe].iter().flat_map(|&(_, c)| {
                self.lists[c].iter().map(|&i| Candidate {
                    dist: squared_l2(query, ds.key(i as usize)),
                    entry: i,
                    value: ds.value(i as usize),
                })
            }),
            k,
        ))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), IndexError> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        w.write_u32::<LittleEndian>(self.n_centroids() as u32)?;
        w.write_u32::<LittleEndian>(self.nprobe_default as u32)?;
        w.write_all(&self.datastore_checksum)?;
        for &c in &self.centroids {
            w.write_f32::<LittleEndian>(c)?;
        }
        for l in &self.lists {
            w.write_u64::<LittleEndian>(l.len() as u64)?;
        }
        for l in &self.lists {
            for &i in l {
                w.write_u64::<LittleEndian>(i)?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<AnnIndex, IndexError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(IndexError::BadMagic);
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(IndexError::UnsupportedVersion(version));
        }
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let n_centroids = r.read_u32::<LittleEndian>()? as usize;
        let nprobe_default = r.read_u32::<LittleEndian>()? as usize;
        let mut datastore_checksum = [0u8; 32];
        r.read_exact(&mut datastore_checksum)?;
        let mut centroids = Vec::with_capacity(n_centroids * dim);
        for _ in 0..n_centroids * dim {
            centroids.push(r.read_f32::<LittleEndian>()?);
        }
        let mut lens = Vec::with_capacity(n_centroids);
        for _ in 0..n_centroids {
            lens.push(r.read_u64::<LittleEndian>()? as usize);
        }
        let mut lists = Vec::with_capacity(n_centroids);
        for len in lens {
            let mut l = Vec::with_capacity(len);
            for _ in 0..len {
                l.push(r.read_u64::<LittleEndian>()?);
            }
            lists.push(l);
        }
        Ok(AnnIndex {
            dim,
            centroids,
            lists,
            nprobe_default,
            datastore_checksum,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<AnnIndex, IndexError> {
        let bytes = std::fs::read(path)?;
        AnnIndex::read(bytes.as_slice())
    }
}
