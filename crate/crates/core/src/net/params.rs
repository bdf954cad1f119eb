use super::NetError;
use crate::autograd::{Tape, Var};
use crate::tensor::Mat;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Named tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Mat>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, m: Mat) -> usize {
        self.names.push(name.into());
        self.tensors.push(m);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Mat] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Mat] {
        &mut self.tensors
    }

    pub fn get(&self, i: usize) -> &Mat {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Mat {
        &mut self.tensors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Mat::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Mat::all_finite)
    }

    /// Zero-filled tensors of matching shapes.
    pub fn zeros_like(&self) -> Vec<Mat> {
        self.tensors
            .iter()
            .map(|m| Mat::zeros(m.rows(), m.cols()))
            .collect()
    }

    /// Puts every tensor on `tape`; returns one variable per tensor.
    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|m| tape.borrow(m, trainable))
            .collect()
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

const MAGIC: &[u8; 8] = b"OGSTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header<C> {
    kind: String,
    config: C,
    vocab_hash: String,
    tensors: Vec<TensorEntry>,
}

/// Writes `MAGIC | version u32 | header length u64 | JSON header | f64 data`,
/// all little-endian.
pub(crate) fn write_checkpoint<C: Serialize>(
    path: &Path,
    kind: &str,
    config: &C,
    vocab_hash: &str,
    params: &ParamSet,
) -> Result<(), NetError> {
    let header = Header {
        kind: kind.to_string(),
        config,
        vocab_hash: vocab_hash.to_string(),
        tensors: params
            .names
            .iter()
            .zip(&params.tensors)
            .map(|(n, m)| TensorEntry {
                name: n.clone(),
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(json.len() + 8 * params.num_scalars() + 20);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for m in &params.tensors {
        for v in m.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_checkpoint<C: for<'de> Deserialize<'de>>(
    path: &Path,
    kind: &str,
    expected_vocab_hash: &str,
) -> Result<(C, ParamSet), NetError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |msg: &str| NetError::BadCheckpoint(format!("{}: {msg}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header<C> = serde_json::from_slice(body)?;
    if header.kind != kind {
        return Err(bad(&format!("expected a {kind} checkpoint, found {}", header.kind)));
    }
    if header.vocab_hash != expected_vocab_hash {
        return Err(NetError::VocabMismatch {
            expected: expected_vocab_hash.to_string(),
            found: header.vocab_hash,
        });
    }
    let mut offset = 20 + hlen;
    let mut params = ParamSet::new();
    for t in header.tensors {
        let n = t.rows * t.cols;
        let raw = bytes
            .get(offset..offset + 8 * n)
            .ok_or_else(|| bad("truncated tensor data"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push(t.name, Mat::from_vec(t.rows, t.cols, data));
        offset += 8 * n;
    }
    if offset != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok((header.config, params))
}
