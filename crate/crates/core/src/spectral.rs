//! Spectral clustering of a coefficient matrix.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eig_smallest, topk_abs, DenseMatrix};
use crate::rng::{derive_seed, rng_from_seed, stream, Rng};
use crate::senet::CoefficientMatrix;

/// Added to every degree when isolated vertices are tolerated.
pub const DEGREE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AffinityMode {
    /// `|C| + |Cᵀ|`
    SymAbs,
    /// Keep the `k` largest-magnitude entries per column, then symmetrize by max.
    Knn(usize),
}

/// Symmetric, non-negative affinity with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph(DenseMatrix);

impl AffinityGraph {
    pub fn new(w: DenseMatrix) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::dims(format!("affinity must be square, got {}x{}", w.rows(), w.cols())));
        }
        let n = w.rows();
        for j in 0..n {
            if w.get(j, j) != 0.0 {
                return Err(Error::NonzeroDiagonal {
                    index: j,
                    value: w.get(j, j),
                });
            }
            for i in 0..n {
                let v = w.get(i, j);
                if v != w.get(j, i) {
                    return Err(Error::NotSymmetric {
                        max_asymmetry: w.max_asymmetry(),
                    });
                }
                if !(v >= 0.0) {
                    return Err(Error::spec(format!("negative or NaN affinity at ({i}, {j})")));
                }
            }
        }
        Ok(AffinityGraph(w))
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn degrees(&self) -> Vec<f64> {
        self.0.columns().map(|c| c.iter().sum()).collect()
    }

    /// Induced subgraph on `idx`.
    pub fn subgraph(&self, idx: &[usize]) -> AffinityGraph {
        AffinityGraph(DenseMatrix::from_fn(idx.len(), idx.len(), |a, b| self.0.get(idx[a], idx[b])))
    }
}

pub fn build_affinity(c: &CoefficientMatrix, mode: AffinityMode) -> Result<AffinityGraph> {
    c.check_diagonal()?;
    let m = c.matrix();
    let n = m.rows();
    let w = match mode {
        AffinityMode::SymAbs => DenseMatrix::from_fn(n, n, |i, j| m.get(i, j).abs() + m.get(j, i).abs()),
        AffinityMode::Knn(k) => {
            let k = k.min(n);
            let mut kept = DenseMatrix::zeros(n, n);
            for j in 0..n {
                for i in topk_abs(m.col(j), k)? {
                    kept.set(i, j, m.get(i, j).abs());
                }
            }
            DenseMatrix::from_fn(n, n, |i, j| kept.get(i, j).max(kept.get(j, i)))
        }
    };
    AffinityGraph::new(w)
}

/// `I − D^{-1/2} W D^{-1/2}`.
pub fn normalized_laplacian(w: &AffinityGraph, regularize: bool) -> Result<DenseMatrix> {
    let mut deg = w.degrees();
    if regularize {
        deg.iter_mut().for_each(|d| *d += DEGREE_EPS);
    } else if let Some(v) = deg.iter().position(|&d| d <= 0.0) {
        return Err(Error::IsolatedVertex(v));
    }
    let inv: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let n = w.len();
    let wm = w.matrix();
    let mut l = DenseMatrix::from_fn(n, n, |i, j| -wm.get(i, j) * inv[i] * inv[j]);
    for i in 0..n {
        l.set(i, i, 1.0 + l.get(i, i));
    }
    Ok(l)
}

/// Rows of the `m` bottom eigenvectors of the normalized Laplacian, each
/// scaled to unit length (zero rows stay zero).
pub fn spectral_embed(w: &AffinityGraph, m: usize, regularize: bool) -> Result<DenseMatrix> {
    if m == 0 || m > w.len() {
        return Err(Error::spec(format!("embedding dimension {m} not in 1..={}", w.len())));
    }
    let l = normalized_laplacian(w, regularize)?;
    let eig = sym_eig_smallest(&l, m)?;
    let mut emb = eig.vectors;
    for i in 0..emb.rows() {
        let norm = (0..m).map(|c| emb.get(i, c).powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for c in 0..m {
                emb.set(i, c, emb.get(i, c) / norm);
            }
        }
    }
    Ok(emb)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iters: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            restarts: 10,
            max_iters: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub centers: DenseMatrix,
    /// Inertia after every Lloyd iteration of the winning restart.
    pub trace: Vec<f64>,
}

fn sq_dist(points: &DenseMatrix, i: usize, centers: &DenseMatrix, c: usize) -> f64 {
    (0..points.cols())
        .map(|d| (points.get(i, d) - centers.get(c, d)).powi(2))
        .sum()
}

// k-means++ seeding; rows of the returned k×m matrix are centers.
fn seed_centers(points: &DenseMatrix, k: usize, rng: &mut Rng) -> DenseMatrix {
    let (n, m) = points.shape();
    let mut centers = DenseMatrix::zeros(k, m);
    let mut chosen = vec![false; n];
    let pick = |centers: &mut DenseMatrix, slot: usize, i: usize, chosen: &mut Vec<bool>| {
        chosen[i] = true;
        for d in 0..m {
            centers.set(slot, d, points.get(i, d));
        }
    };
    pick(&mut centers, 0, rng.random_range(0..n), &mut chosen);
    let mut best: Vec<f64> = (0..n).map(|i| sq_dist(points, i, &centers, 0)).collect();
    for slot in 1..k {
        let total: f64 = best.iter().sum();
        let i = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &b) in best.iter().enumerate() {
                if b > 0.0 && target < b {
                    idx = i;
                    break;
                }
                target -= b;
            }
            // guard against rounding landing on a zero-weight tail
            if best[idx] == 0.0 {
                idx = best.iter().rposition(|&b| b > 0.0).unwrap_or(idx);
            }
            idx
        } else {
            chosen.iter().position(|&c| !c).unwrap_or(0)
        };
        pick(&mut centers, slot, i, &mut chosen);
        for (p, b) in best.iter_mut().enumerate() {
            *b = b.min(sq_dist(points, p, &centers, slot));
        }
    }
    centers
}

fn assign(points: &DenseMatrix, centers: &DenseMatrix, out: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (i, slot) in out.iter_mut().enumerate() {
        let mut best = (f64::INFINITY, 0);
        for c in 0..centers.rows() {
            let d = sq_dist(points, i, centers, c);
            if d < best.0 {
                best = (d, c);
            }
        }
        *slot = best.1;
        inertia += best.0;
    }
    inertia
}

fn lloyd(points: &DenseMatrix, k: usize, max_iters: usize, rng: &mut Rng) -> KMeansResult {
    let (n, m) = points.shape();
    let mut centers = seed_centers(points, k, rng);
    let mut labels = vec![usize::MAX; n];
    let mut next = vec![0; n];
    let mut trace = Vec::new();
    let mut inertia = assign(points, &centers, &mut next);
    for _ in 0..max_iters {
        if next == labels {
            break;
        }
        labels.copy_from_slice(&next);
        let mut sums = DenseMatrix::zeros(k, m);
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for d in 0..m {
                sums.set(c, d, sums.get(c, d) + points.get(i, d));
            }
        }
        for c in 0..k {
            // an emptied cluster keeps its previous center
            if counts[c] > 0 {
                for d in 0..m {
                    centers.set(c, d, sums.get(c, d) / counts[c] as f64);
                }
            }
        }
        inertia = assign(points, &centers, &mut next);
        trace.push(inertia);
    }
    KMeansResult {
        assignments: next,
        inertia,
        centers,
        trace,
    }
}

/// Lloyd's algorithm from k-means++ seeds; the lowest-inertia restart wins,
/// ties going to the earlier restart.
pub fn kmeans(points: &DenseMatrix, k: usize, seed: u64, cfg: &KMeansConfig) -> Result<KMeansResult> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(Error::spec(format!("k = {k} must be in 1..={n}")));
    }
    if cfg.restarts == 0 || cfg.max_iters == 0 {
        return Err(Error::spec("kmeans needs restarts >= 1 and max_iters >= 1"));
    }
    if !points.is_finite() {
        return Err(Error::spec("kmeans input contains non-finite values"));
    }
    let base = derive_seed(seed, stream::KMEANS);
    let runs: Vec<KMeansResult> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_from_seed(derive_seed(base, r as u64));
            lloyd(points, k, cfg.max_iters, &mut rng)
        })
        .collect();
    let mut best = 0;
    for (r, run) in runs.iter().enumerate() {
        if run.inertia < runs[best].inertia {
            best = r;
        }
    }
    Ok(runs.into_iter().nth(best).expect("at least one restart"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    pub affinity: AffinityMode,
    /// Embedding dimension; `None` uses the number of clusters.
    pub embed_dim: Option<usize>,
    /// Add a tiny constant to every degree instead of rejecting isolated vertices.
    pub regularize: bool,
    pub kmeans: KMeansConfig,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            affinity: AffinityMode::SymAbs,
            embed_dim: None,
            regularize: false,
            kmeans: KMeansConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub assignments: Vec<usize>,
    pub embedding: DenseMatrix,
    pub kmeans_inertia: f64,
}

pub fn cluster(c: &CoefficientMatrix, k: usize, seed: u64, cfg: &SpectralConfig) -> Result<ClusterResult> {
    let w = build_affinity(c, cfg.affinity)?;
    cluster_affinity(&w, k, seed, cfg)
}

pub fn cluster_affinity(w: &AffinityGraph, k: usize, seed: u64, cfg: &SpectralConfig) -> Result<ClusterResult> {
    let m = cfg.embed_dim.unwrap_or(k);
    let embedding = spectral_embed(w, m, cfg.regularize)?;
    let km = kmeans(&embedding, k, seed, &cfg.kmeans)?;
    Ok(ClusterResult {
        assignments: km.assignments,
        embedding,
        kmeans_inertia: km.inertia,
    })
}
