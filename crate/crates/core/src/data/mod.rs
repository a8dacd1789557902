//! Synthetic union-of-subspaces data, preprocessing and dataset files.

mod io;

pub use io::{read_labels, read_matrix, write_labels, write_matrix, MATRIX_MAGIC};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, gemm, DenseMatrix};
use crate::rng::rng_from_seed;

/// Parameters of a random union of linear subspaces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub ambient_dim: usize,
    pub subspace_dim: usize,
    pub num_subspaces: usize,
    pub points_per_subspace: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.subspace_dim == 0 || self.subspace_dim > self.ambient_dim {
            return Err(Error::spec(format!(
                "subspace dimension {} must lie in 1..={}",
                self.subspace_dim, self.ambient_dim
            )));
        }
        if self.num_subspaces == 0 || self.points_per_subspace == 0 {
            return Err(Error::spec("need at least one subspace and one point"));
        }
        Ok(())
    }

    pub fn num_points(&self) -> usize {
        self.num_subspaces * self.points_per_subspace
    }
}

/// Data points as columns together with their ground-truth classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(features: DenseMatrix, labels: Vec<usize>) -> Result<Self> {
        if features.cols() != labels.len() {
            return Err(Error::dims(format!(
                "{} labels for {} points",
                labels.len(),
                features.cols()
            )));
        }
        Ok(Dataset { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_columns(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Samples `num_subspaces` random subspaces and unit-norm points on each.
///
/// Each basis is the orthonormalized span of a Gaussian `D×d` matrix, and
/// each point is the basis applied to a normalized Gaussian `d`-vector, so
/// both are rotation invariant. Points are grouped by subspace.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let (dim, sub) = (spec.ambient_dim, spec.subspace_dim);
    let mut rng = rng_from_seed(spec.seed);
    let mut features = DenseMatrix::zeros(dim, spec.num_points());
    let mut labels = Vec::with_capacity(spec.num_points());
    let mut col = 0;
    for k in 0..spec.num_subspaces {
        let basis = loop {
            let g = DenseMatrix::from_fn(dim, sub, |_, _| rng.sample(StandardNormal));
            // rank deficiency has probability zero; redraw if it happens
            if let Ok(q) = linalg::orthonormalize_columns(&g) {
                break q;
            }
        };
        for _ in 0..spec.points_per_subspace {
            let mut coef: Vec<f64> = (0..sub).map(|_| rng.sample(StandardNormal)).collect();
            let nrm = linalg::norm2(&coef);
            coef.iter_mut().for_each(|c| *c /= nrm);
            let x = basis.matvec(&coef)?;
            features.col_mut(col).copy_from_slice(&x);
            labels.push(k);
            col += 1;
        }
    }
    Ok(Dataset { features, labels })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreprocessStep {
    RemoveMean,
    Pca(usize),
    UnitNormalize,
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub matrix: DenseMatrix,
    /// Columns that had zero norm during unit normalization and were left as is.
    pub zero_columns: Vec<usize>,
}

/// Applies the steps in order.
pub fn preprocess(x: &DenseMatrix, steps: &[PreprocessStep]) -> Result<Preprocessed> {
    let mut m = x.clone();
    let mut zero_columns = Vec::new();
    for step in steps {
        match *step {
            PreprocessStep::RemoveMean => remove_mean(&mut m),
            PreprocessStep::Pca(k) => m = pca(&m, k)?,
            PreprocessStep::UnitNormalize => {
                for j in unit_normalize(&mut m) {
                    if !zero_columns.contains(&j) {
                        zero_columns.push(j);
                    }
                }
            }
        }
    }
    Ok(Preprocessed {
        matrix: m,
        zero_columns,
    })
}

/// Subtracts the mean column from every column.
pub fn remove_mean(m: &mut DenseMatrix) {
    let n = m.cols();
    if n == 0 {
        return;
    }
    let mut mean = vec![0.0; m.rows()];
    for c in m.columns() {
        linalg::axpy(1.0 / n as f64, c, &mut mean);
    }
    for j in 0..n {
        linalg::axpy(-1.0, &mean, m.col_mut(j));
    }
}

/// Scales every column to unit norm; returns the indices of zero columns,
/// which are left untouched.
pub fn unit_normalize(m: &mut DenseMatrix) -> Vec<usize> {
    let mut zeros = Vec::new();
    for j in 0..m.cols() {
        let nrm = linalg::norm2(m.col(j));
        if nrm == 0.0 {
            zeros.push(j);
        } else {
            m.col_mut(j).iter_mut().for_each(|x| *x /= nrm);
        }
    }
    zeros
}

/// Projects the mean-centred columns onto their top `k` principal
/// directions and returns the `k×N` coordinates.
///
/// Each direction's sign is fixed so that its largest-magnitude component is
/// positive, which makes the projection idempotent on rank-`k` data.
pub fn pca(x: &DenseMatrix, k: usize) -> Result<DenseMatrix> {
    let (dim, n) = x.shape();
    if k == 0 || k > dim.min(n) {
        return Err(Error::spec(format!(
            "pca target dimension {k} outside 1..={}",
            dim.min(n)
        )));
    }
    let mut xc = x.clone();
    remove_mean(&mut xc);

    let directions = if dim <= n {
        let mut cov = DenseMatrix::zeros(dim, dim);
        gemm(1.0, &xc, false, &xc, true, 0.0, &mut cov);
        let cov = symmetrized(&cov);
        let eig = linalg::sym_eig(&cov)?;
        let idx: Vec<usize> = (0..k).map(|i| dim - 1 - i).collect();
        eig.vectors.select_columns(&idx)
    } else {
        let mut gram = DenseMatrix::zeros(n, n);
        gemm(1.0, &xc, true, &xc, false, 0.0, &mut gram);
        let gram = symmetrized(&gram);
        let eig = linalg::sym_eig(&gram)?;
        let mut dirs = DenseMatrix::zeros(dim, k);
        for i in 0..k {
            let col = n - 1 - i;
            let sigma = eig.values[col].max(0.0).sqrt();
            if sigma > 0.0 {
                let u = xc.matvec(eig.vectors.col(col))?;
                dirs.col_mut(i)
                    .iter_mut()
                    .zip(u)
                    .for_each(|(d, ui)| *d = ui / sigma);
            }
        }
        dirs
    };
    let mut directions = directions;
    for i in 0..k {
        let c = directions.col_mut(i);
        let lead = linalg::topk_abs(c, 1)?[0];
        if c[lead] < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
    }
    directions.t_matmul(&xc)
}

fn symmetrized(a: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(a.rows(), a.cols(), |i, j| 0.5 * (a.get(i, j) + a.get(j, i)))
}

/// Index sets `(train, test)` of a uniform random split, each ascending.
pub fn split_indices(n: usize, n_train: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_train > n {
        return Err(Error::spec(format!(
            "cannot take {n_train} training points from {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let mut test = idx.split_off(n_train);
    idx.sort_unstable();
    test.sort_unstable();
    Ok((idx, test))
}

/// Splits a dataset into training and held-out parts without replacement.
pub fn split(ds: &Dataset, n_train: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(ds.len(), n_train, seed)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}
