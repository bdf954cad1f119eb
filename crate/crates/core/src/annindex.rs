//! Inverted-file nearest-neighbour index under cosine similarity.
//!
//! Vectors are unit-normalised on insert and query, clustered with seeded
//! spherical k-means, and stored uncompressed in per-cluster lists. A
//! search scans the `nprobe` clusters whose centroids are closest to the
//! query.

use crate::tensor::dot;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::cmp::Ordering;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const KMEANS_MAX_ITERS: usize = 25;
pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"OGSTIVF\0";

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("need at least {clusters} vectors, got {vectors}")]
    TooFewVectors { vectors: usize, clusters: usize },
    #[error("num_clusters must be at least 1")]
    NoClusters,
    #[error("dimension mismatch: index {index}, vector {got}")]
    DimMismatch { index: usize, got: usize },
    #[error("empty index")]
    Empty,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("corrupt index file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
struct InvList {
    ids: Vec<u64>,
    // row-major, one unit vector per id
    vectors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VecIndex {
    dim: usize,
    centroids: Vec<Vec<f64>>,
    lists: Vec<InvList>,
    iterations: usize,
}

/// Scaled copy with unit length; the zero vector stays zero.
pub fn normalize(v: &[f64]) -> Vec<f64> {
    let n = dot(v, v).sqrt();
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

/// Descending by score, ascending id on ties.
pub fn rank_order(a: &(u64, f64), b: &(u64, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

fn nearest(centroids: &[Vec<f64>], v: &[f64]) -> usize {
    let mut best = 0;
    let mut best_s = f64::NEG_INFINITY;
    for (c, cen) in centroids.iter().enumerate() {
        let s = dot(cen, v);
        if s > best_s {
            best_s = s;
            best = c;
        }
    }
    best
}

fn kmeans(data: &[Vec<f64>], k: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>, usize) {
    let dim = data[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = sample(&mut rng, data.len(), k).into_vec();
    picks.sort_unstable();
    let mut centroids: Vec<Vec<f64>> = picks.iter().map(|&i| data[i].clone()).collect();
    let mut assign = vec![usize::MAX; data.len()];
    let mut iters = 0;
    while iters < KMEANS_MAX_ITERS {
        iters += 1;
        let mut changed = false;
        for (i, v) in data.iter().enumerate() {
            let c = nearest(&centroids, v);
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
        }
        repair_empty(data, &mut centroids, &mut assign);
        let mut sums = vec![vec![0.0; dim]; k];
        for (v, &c) in data.iter().zip(&assign) {
            for (s, x) in sums[c].iter_mut().zip(v) {
                *s += x;
            }
        }
        for (c, s) in sums.into_iter().enumerate() {
            let n = normalize(&s);
            if n.iter().any(|x| *x != 0.0) {
                centroids[c] = n;
            }
        }
        if !changed {
            break;
        }
    }
    // final assignment against the final centroids
    for (i, v) in data.iter().enumerate() {
        assign[i] = nearest(&centroids, v);
    }
    repair_empty(data, &mut centroids, &mut assign);
    (centroids, assign, iters)
}

// Each empty cluster takes the member of the currently largest cluster that
// fits its centroid worst.
fn repair_empty(data: &[Vec<f64>], centroids: &mut [Vec<f64>], assign: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        for &c in assign.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&n| n == 0) else {
            return;
        };
        let largest = (0..k).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap();
        if counts[largest] < 2 {
            return;
        }
        let mut worst = None;
        let mut worst_s = f64::INFINITY;
        for (i, &c) in assign.iter().enumerate() {
            if c == largest {
                let s = dot(&centroids[largest], &data[i]);
                if s < worst_s {
                    worst_s = s;
                    worst = Some(i);
                }
            }
        }
        let i = worst.expect("largest cluster has members");
        assign[i] = empty;
        centroids[empty] = data[i].clone();
    }
}

pub fn build_index(vectors: &[(u64, Vec<f64>)], num_clusters: usize, seed: u64) -> Result<VecIndex, IndexError> {
    if num_clusters == 0 {
        return Err(IndexError::NoClusters);
    }
    if vectors.len() < num_clusters {
        return Err(IndexError::TooFewVectors {
            vectors: vectors.len(),
            clusters: num_clusters,
        });
    }
    let dim = vectors[0].1.len();
    if let Some((_, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
        return Err(IndexError::DimMismatch { index: dim, got: v.len() });
    }
    let data: Vec<Vec<f64>> = vectors.iter().map(|(_, v)| normalize(v)).collect();
    let (centroids, assign, iterations) = kmeans(&data, num_clusters, seed);
    let mut lists = vec![
        InvList {
            ids: Vec::new(),
            vectors: Vec::new(),
        };
        num_clusters
    ];
    for ((id, _), (v, &c)) in vectors.iter().zip(data.iter().zip(&assign)) {
        lists[c].ids.push(*id);
        lists[c].vectors.extend_from_slice(v);
    }
    Ok(VecIndex {
        dim,
        centroids,
        lists,
        iterations,
    })
}

impl VecIndex {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn len(&self) -> usize {
        self.lists.iter().map(|l| l.ids.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// k-means iterations used at build time.
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Ids per inverted list.
    pub fn list_ids(&self) -> Vec<Vec<u64>> {
        self.lists.iter().map(|l| l.ids.clone()).collect()
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    /// Top-`k` `(id, cosine)` pairs among the `nprobe` nearest clusters.
    pub fn search(&self, query: &[f64], k: usize, nprobe: usize) -> Result<Vec<(u64, f64)>, IndexError> {
        if self.is_empty() {
            return Err(IndexError::Empty);
        }
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if query.len() != self.dim {
            return Err(IndexError::DimMismatch {
                index: self.dim,
                got: query.len(),
            });
        }
        let q = normalize(query);
        let mut order: Vec<(u64, f64)> = self
            .centroids
            .iter()
            .enumerate()
            .map(|(c, cen)| (c as u64, dot(cen, &q)))
            .collect();
        order.sort_by(rank_order);
        let mut hits = Vec::new();
        for &(c, _) in order.iter().take(nprobe.max(1)) {
            let list = &self.lists[c as usize];
            for (j, id) in list.ids.iter().enumerate() {
                let v = &list.vectors[j * self.dim..(j + 1) * self.dim];
                hits.push((*id, dot(v, &q)));
            }
        }
        hits.sort_by(rank_order);
        hits.truncate(k);
        Ok(hits)
    }

    /// Writes the index with vectors stored as little-endian `f32`.
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.num_clusters() as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        let put = |w: &mut BufWriter<fs::File>, xs: &[f64]| -> std::io::Result<()> {
            for x in xs {
                w.write_all(&(*x as f32).to_le_bytes())?;
            }
            Ok(())
        };
        for c in &self.centroids {
            put(&mut w, c)?;
        }
        for l in &self.lists {
            w.write_all(&(l.ids.len() as u64).to_le_bytes())?;
            for id in &l.ids {
                w.write_all(&id.to_le_bytes())?;
            }
            put(&mut w, &l.vectors)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let mut r = BufReader::new(fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(IndexError::Corrupt("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(IndexError::Corrupt(format!("unsupported version {version}")));
        }
        let dim = read_u32(&mut r)? as usize;
        let clusters = read_u32(&mut r)? as usize;
        let count = read_u64(&mut r)? as usize;
        let centroids = (0..clusters)
            .map(|_| read_f32s(&mut r, dim))
            .collect::<Result<Vec<_>, _>>()?;
        let mut lists = Vec::with_capacity(clusters);
        for _ in 0..clusters {
            let n = read_u64(&mut r)? as usize;
            if n > count {
                return Err(IndexError::Corrupt("list longer than index".into()));
            }
            let ids = (0..n).map(|_| read_u64(&mut r)).collect::<Result<Vec<_>, _>>()?;
            let vectors = read_f32s(&mut r, n * dim)?;
            lists.push(InvList { ids, vectors });
        }
        let idx = Self {
            dim,
            centroids,
            lists,
            iterations: 0,
        };
        if idx.len() != count {
            return Err(IndexError::Corrupt(format!("expected {count} items, found {}", idx.len())));
        }
        Ok(idx)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, IndexError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, IndexError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f64>, IndexError> {
    let mut b = vec![0u8; n * 4];
    r.read_exact(&mut b)?;
    Ok(b.chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}
