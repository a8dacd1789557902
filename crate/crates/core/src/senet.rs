//! The self-expressive network.
//!
//! The coefficient for reconstructing `x_j` from `x_i` is
//! `α · T_b(u(x_j)ᵀ v(x_i))`, where `u` (query) and `v` (key) are MLPs with
//! tanh outputs in `R^p`, `T_b` is soft thresholding with a learnable
//! `b ≥ 0`, and `α = 1/p` keeps every coefficient inside `(−1, 1)`.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, DenseMatrix};
use crate::mlp::{MlpParams, MlpTape};
use crate::objective::HyperParams;
use crate::rng::derive_seed;

/// Default number of columns processed together when evaluating many
/// coefficients.
pub const DEFAULT_BLOCK: usize = 1024;

/// `sgn(t) · max(0, |t| − b)`
#[inline]
pub fn soft_threshold(t: f64, b: f64) -> f64 {
    if t > b {
        t - b
    } else if t < -b {
        t + b
    } else {
        0.0
    }
}

/// A self-expressive coefficient matrix; column `j` reconstructs point `j`
/// and the diagonal is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix(DenseMatrix);

impl CoefficientMatrix {
    pub fn new(m: DenseMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::dims(format!(
                "coefficient matrix must be square, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        let c = CoefficientMatrix(m);
        c.check_diagonal()?;
        Ok(c)
    }

    pub fn check_diagonal(&self) -> Result<()> {
        for j in 0..self.0.cols() {
            let v = self.0.get(j, j);
            if v != 0.0 {
                return Err(Error::NonzeroDiagonal { index: j, value: v });
            }
        }
        Ok(())
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.0.cols() == 0
    }

    pub fn count_zeros(&self) -> usize {
        self.0.data().iter().filter(|&&v| v == 0.0).count()
    }
}

/// Trainable query/key networks plus the threshold and the fixed scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SENetParams {
    pub query: MlpParams,
    pub key: MlpParams,
    pub threshold: f64,
    pub alpha: f64,
    /// When false the threshold stays at zero, which makes `T_b` the identity.
    pub learn_threshold: bool,
}

/// Intermediate values of a single coefficient evaluation.
#[derive(Debug, Clone)]
pub struct CoeffTapes {
    pub query: MlpTape,
    pub key: MlpTape,
    pub inner: f64,
}

impl SENetParams {
    /// Fresh networks `input_dim → hidden… → embed_dim` with `b = 0` and
    /// `α = 1/embed_dim`.
    pub fn init(input_dim: usize, hidden: &[usize], embed_dim: usize, seed: u64) -> Result<Self> {
        let dims: Vec<usize> = std::iter::once(input_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(embed_dim))
            .collect();
        Ok(SENetParams {
            query: MlpParams::init(&dims, derive_seed(seed, 0x5155))?,
            key: MlpParams::init(&dims, derive_seed(seed, 0x4B45))?,
            threshold: 0.0,
            alpha: 1.0 / embed_dim as f64,
            learn_threshold: true,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.query.input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.query.output_dim()
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        let d = self.query.dims();
        d[1..d.len() - 1].to_vec()
    }

    pub fn validate(&self) -> Result<()> {
        self.query.validate()?;
        self.key.validate()?;
        if self.query.dims() != self.key.dims() {
            return Err(Error::dims("query and key networks differ in shape"));
        }
        if self.threshold < 0.0 || !self.threshold.is_finite() {
            return Err(Error::spec(format!("threshold {} must be >= 0", self.threshold)));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        SENetParams {
            query: self.query.zeros_like(),
            key: self.key.zeros_like(),
            threshold: 0.0,
            alpha: self.alpha,
            learn_threshold: self.learn_threshold,
        }
    }

    /// Trainable storage in a fixed order: query layers, key layers, threshold.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut s = self.query.slices();
        s.extend(self.key.slices());
        s.push(std::slice::from_ref(&self.threshold));
        s
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut s = self.query.slices_mut();
        s.extend(self.key.slices_mut());
        s.push(std::slice::from_mut(&mut self.threshold));
        s
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    #[inline]
    pub fn shrink(&self, inner: f64) -> f64 {
        self.alpha * soft_threshold(inner, self.threshold)
    }

    /// Coefficient of `x_i` in the reconstruction of `x_j`.
    pub fn coeff(&self, x_i: &[f64], x_j: &[f64]) -> Result<(f64, CoeffTapes)> {
        let (u, query) = self.query.forward(x_j)?;
        let (v, key) = self.key.forward(x_i)?;
        let inner = dot(&u, &v);
        Ok((self.shrink(inner), CoeffTapes { query, key, inner }))
    }

    /// All pairwise coefficients of the columns of `x`.
    ///
    /// Both embeddings are computed once for every column; inner products are
    /// then formed `block` output columns at a time, in parallel over blocks.
    pub fn coeff_matrix(&self, x: &DenseMatrix, block: usize) -> Result<CoefficientMatrix> {
        let n = x.cols();
        if n == 0 {
            return CoefficientMatrix::new(DenseMatrix::zeros(0, 0));
        }
        let u = self.query.predict_batch(x)?;
        let v = self.key.predict_block(x, block)?;
        let mut c = DenseMatrix::zeros(n, n);
        let block = block.max(1);
        c.data_mut()
            .par_chunks_mut(n * block)
            .enumerate()
            .for_each(|(bi, chunk)| {
                for (jj, col) in chunk.chunks_exact_mut(n).enumerate() {
                    let j = bi * block + jj;
                    let uj = u.col(j);
                    for (i, out) in col.iter_mut().enumerate() {
                        *out = if i == j { 0.0 } else { self.shrink(dot(v.col(i), uj)) };
                    }
                }
            });
        CoefficientMatrix::new(c)
    }
}

impl MlpParams {
    /// Forward-only evaluation in column blocks, concatenated.
    pub(crate) fn predict_block(&self, x: &DenseMatrix, block: usize) -> Result<DenseMatrix> {
        let n = x.cols();
        let block = block.max(1);
        if n <= block {
            return self.predict_batch(x);
        }
        let mut out = DenseMatrix::zeros(self.output_dim(), n);
        let mut start = 0;
        while start < n {
            let end = (start + block).min(n);
            let part = self.predict_batch(&x.column_range(start, end))?;
            let rows = out.rows();
            out.data_mut()[start * rows..end * rows].copy_from_slice(part.data());
            start = end;
        }
        Ok(out)
    }
}

// Checkpoint layout, little-endian:
//   "SENT" | version u32 (=1) | header length u32 | JSON header
//   then per tensor: name length u16 | name | ndim u8 | dims u64… | f64 payload
// Tensors are query weight/bias by layer, then key weight/bias by layer;
// weights are stored column-major as (out, in).

const CKPT_MAGIC: &[u8; 4] = b"SENT";
const CKPT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    #[serde(rename = "D")]
    input_dim: usize,
    p: usize,
    hidden_dims: Vec<usize>,
    gamma: f64,
    lambda: f64,
    alpha: f64,
    b: f64,
}

fn tensor_names(prefix: &str, layers: usize) -> impl Iterator<Item = (String, bool)> + '_ {
    (0..layers).flat_map(move |l| {
        [
            (format!("{prefix}.{l}.weight"), true),
            (format!("{prefix}.{l}.bias"), false),
        ]
    })
}

pub fn save_checkpoint(params: &SENetParams, hyper: &HyperParams, path: impl AsRef<Path>) -> Result<()> {
    params.validate()?;
    let header = CheckpointHeader {
        input_dim: params.input_dim(),
        p: params.embed_dim(),
        hidden_dims: params.hidden_dims(),
        gamma: hyper.gamma,
        lambda: hyper.lambda,
        alpha: params.alpha,
        b: params.threshold,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::spec(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (net, prefix) in [(&params.query, "query"), (&params.key, "key")] {
        for (l, (name, is_weight)) in tensor_names(prefix, net.num_layers()).enumerate() {
            let layer = l / 2;
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let (dims, data): (Vec<usize>, &[f64]) = if is_weight {
                let w = &net.weights[layer];
                (vec![w.rows(), w.cols()], w.data())
            } else {
                let b = &net.biases[layer];
                (vec![b.len()], b)
            };
            out.push(dims.len() as u8);
            for d in dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.pos as u64, format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn tensor(&mut self, want_name: &str, want_dims: &[usize]) -> Result<Vec<f64>> {
        let start = self.pos as u64;
        let len = u16::from_le_bytes(self.take(2, "tensor name length")?.try_into().unwrap());
        let name = self.take(len as usize, "tensor name")?;
        if name != want_name.as_bytes() {
            return Err(Error::format(
                start,
                format!("expected tensor {want_name}, found {}", String::from_utf8_lossy(name)),
            ));
        }
        let dims_at = self.pos as u64;
        let ndim = self.take(1, "ndim")?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let d = u64::from_le_bytes(self.take(8, "tensor dims")?.try_into().unwrap());
            dims.push(d as usize);
        }
        if dims != want_dims {
            return Err(Error::format(
                dims_at,
                format!("tensor {want_name} has shape {dims:?}, header implies {want_dims:?}"),
            ));
        }
        let count: usize = dims.iter().product();
        let payload = self.take(count * 8, "tensor payload")?;
        Ok(payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(SENetParams, HyperParams)> {
    let bytes = fs::read(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(4, "magic")? != CKPT_MAGIC {
        return Err(Error::format(0, "bad magic, expected SENT"));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let hlen = u32::from_le_bytes(r.take(4, "header length")?.try_into().unwrap()) as usize;
    let header: CheckpointHeader = serde_json::from_slice(r.take(hlen, "header")?)
        .map_err(|e| Error::format(12, format!("bad header: {e}")))?;
    let hyper = HyperParams::new(header.gamma, header.lambda)
        .map_err(|e| Error::format(12, e.to_string()))?;

    let dims: Vec<usize> = std::iter::once(header.input_dim)
        .chain(header.hidden_dims.iter().copied())
        .chain(std::iter::once(header.p))
        .collect();
    if dims.contains(&0) {
        return Err(Error::format(12, "zero-sized layer in header"));
    }
    let mut nets = Vec::with_capacity(2);
    for prefix in ["query", "key"] {
        let mut net = MlpParams::init(&dims, 0)?;
        for l in 0..net.num_layers() {
            let (rows, cols) = net.weights[l].shape();
            let w = r.tensor(&format!("{prefix}.{l}.weight"), &[rows, cols])?;
            net.weights[l] = DenseMatrix::new(rows, cols, w)?;
            net.biases[l] = r.tensor(&format!("{prefix}.{l}.bias"), &[rows])?;
        }
        nets.push(net);
    }
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos as u64, "trailing bytes after last tensor"));
    }
    let key = nets.pop().unwrap();
    let query = nets.pop().unwrap();
    let params = SENetParams {
        query,
        key,
        threshold: header.b,
        alpha: header.alpha,
        learn_threshold: true,
    };
    params
        .validate()
        .map_err(|e| Error::format(12, e.to_string()))?;
    Ok((params, hyper))
}
