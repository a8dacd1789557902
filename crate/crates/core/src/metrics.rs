//! Evaluation quantities: SRE, CONN, ACC, NMI and ARI.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eig, DenseMatrix};
use crate::objective::LossBreakdown;
use crate::senet::CoefficientMatrix;
use crate::spectral::{normalized_laplacian, AffinityGraph};

/// Largest number of clusters `acc` will match.
pub const MAX_ACC_CLUSTERS: usize = 64;

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::dims(format!("{what}: lengths {a} and {b} differ")));
    }
    Ok(())
}

/// Maps arbitrary labels onto `0..k` in sorted order.
fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut ids = BTreeMap::new();
    for &l in labels {
        let next = ids.len();
        ids.entry(l).or_insert(next);
    }
    // reassign in sorted order so the result does not depend on first appearance
    for (k, v) in ids.values_mut().enumerate() {
        *v = k;
    }
    (labels.iter().map(|l| ids[l]).collect(), ids.len())
}

/// Fraction of the ℓ1 mass of `C` connecting points with different labels.
/// An all-zero `C` gives 0.
pub fn sre(c: &CoefficientMatrix, labels: &[usize]) -> Result<f64> {
    c.check_diagonal()?;
    check_len(c.len(), labels.len(), "sre")?;
    let m = c.matrix();
    let (mut wrong, mut total) = (0.0, 0.0);
    for j in 0..m.cols() {
        for (i, &v) in m.col(j).iter().enumerate() {
            let a = v.abs();
            total += a;
            if labels[i] != labels[j] {
                wrong += a;
            }
        }
    }
    Ok(if total == 0.0 { 0.0 } else { wrong / total })
}

/// Minimum over classes of the second-smallest eigenvalue of the class
/// subgraph's normalized Laplacian.
pub fn conn(w: &AffinityGraph, labels: &[usize]) -> Result<f64> {
    check_len(w.len(), labels.len(), "conn")?;
    let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        classes.entry(l).or_default().push(i);
    }
    for (&class, members) in &classes {
        if members.len() < 2 {
            return Err(Error::ClassTooSmall {
                class,
                size: members.len(),
            });
        }
    }
    let mut worst = f64::INFINITY;
    for members in classes.values() {
        let sub = w.subgraph(members);
        let lambda2 = match normalized_laplacian(&sub, false) {
            Ok(l) => sym_eig(&l)?.values[1].max(0.0),
            // an isolated vertex disconnects its class
            Err(Error::IsolatedVertex(_)) => 0.0,
            Err(e) => return Err(e),
        };
        worst = worst.min(lambda2);
    }
    Ok(worst)
}

/// Minimum-cost perfect matching on a square cost matrix; `result[row] = col`.
pub fn hungarian(cost: &DenseMatrix) -> Vec<usize> {
    let n = cost.rows();
    // potentials and matching with a 1-based sentinel column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut owner = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![0; n];
    for j in 1..=n {
        if owner[j] > 0 {
            result[owner[j] - 1] = j - 1;
        }
    }
    result
}

fn contingency(pred: &[usize], truth: &[usize]) -> (DenseMatrix, usize, usize) {
    let (p, kp) = compact(pred);
    let (t, kt) = compact(truth);
    let mut table = DenseMatrix::zeros(kp, kt);
    for (&a, &b) in p.iter().zip(&t) {
        table.set(a, b, table.get(a, b) + 1.0);
    }
    (table, kp, kt)
}

/// Best one-to-one matching accuracy between predicted and true clusters.
pub fn acc(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_len(pred.len(), truth.len(), "acc")?;
    if pred.is_empty() {
        return Err(Error::spec("acc of empty labelings"));
    }
    let (table, kp, kt) = contingency(pred, truth);
    let k = kp.max(kt);
    if k > MAX_ACC_CLUSTERS {
        return Err(Error::spec(format!("acc supports at most {MAX_ACC_CLUSTERS} clusters, got {k}")));
    }
    let cost = DenseMatrix::from_fn(k, k, |a, b| if a < kp && b < kt { -table.get(a, b) } else { 0.0 });
    let matched: f64 = hungarian(&cost)
        .iter()
        .enumerate()
        .map(|(a, &b)| -cost.get(a, b))
        .sum();
    Ok(matched / pred.len() as f64)
}

// Summed in sorted order so relabeling cannot change the rounding.
fn ordered_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

fn entropy(counts: impl Iterator<Item = f64>, n: f64) -> f64 {
    ordered_sum(
        counts
            .filter(|&c| c > 0.0)
            .map(|c| {
                let p = c / n;
                -p * p.ln()
            })
            .collect(),
    )
}

/// Mutual information normalized by the geometric mean of the entropies.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_len(pred.len(), truth.len(), "nmi")?;
    if pred.is_empty() {
        return Err(Error::spec("nmi of empty labelings"));
    }
    let (table, kp, kt) = contingency(pred, truth);
    let n = pred.len() as f64;
    let row: Vec<f64> = (0..kp).map(|a| (0..kt).map(|b| table.get(a, b)).sum()).collect();
    let col: Vec<f64> = (0..kt).map(|b| table.col(b).iter().sum()).collect();
    let hp = entropy(row.iter().copied(), n);
    let ht = entropy(col.iter().copied(), n);
    if hp == 0.0 || ht == 0.0 {
        return Ok(if kp == 1 && kt == 1 { 1.0 } else { 0.0 });
    }
    let mut terms = Vec::new();
    for a in 0..kp {
        for b in 0..kt {
            let nab = table.get(a, b);
            if nab > 0.0 {
                terms.push(nab / n * (n * nab / (row[a] * col[b])).ln());
            }
        }
    }
    let mi = ordered_sum(terms);
    Ok((mi / (hp * ht).sqrt()).clamp(0.0, 1.0))
}

fn pairs(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Pair-counting adjusted Rand index.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_len(pred.len(), truth.len(), "ari")?;
    if pred.is_empty() {
        return Err(Error::spec("ari of empty labelings"));
    }
    let (table, kp, kt) = contingency(pred, truth);
    let n = pred.len() as f64;
    let index: f64 = table.data().iter().map(|&v| pairs(v)).sum();
    let sum_p: f64 = (0..kp).map(|a| pairs((0..kt).map(|b| table.get(a, b)).sum())).sum();
    let sum_t: f64 = (0..kt).map(|b| pairs(table.col(b).iter().sum())).sum();
    let expected = sum_p * sum_t / pairs(n).max(1.0);
    let max = 0.5 * (sum_p + sum_t);
    if max == expected {
        // both partitions trivial in the same way
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sre: Option<f64>,
    pub conn: Option<f64>,
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    #[serde(rename = "L")]
    pub loss: Option<f64>,
    #[serde(rename = "L_rec")]
    pub loss_rec: Option<f64>,
    #[serde(rename = "L_reg")]
    pub loss_reg: Option<f64>,
}

impl MetricsReport {
    /// Label metrics only.
    pub fn from_labels(pred: &[usize], truth: &[usize]) -> Result<Self> {
        Ok(MetricsReport {
            acc: acc(pred, truth)?,
            nmi: nmi(pred, truth)?,
            ari: ari(pred, truth)?,
            ..Default::default()
        })
    }

    /// Label metrics plus SRE and CONN of the coefficients.
    pub fn with_coefficients(
        pred: &[usize],
        truth: &[usize],
        c: &CoefficientMatrix,
        affinity: &AffinityGraph,
    ) -> Result<Self> {
        let mut r = Self::from_labels(pred, truth)?;
        r.sre = Some(sre(c, truth)?);
        r.conn = Some(conn(affinity, truth)?);
        Ok(r)
    }

    pub fn set_losses(&mut self, l: &LossBreakdown) {
        self.loss = Some(l.total);
        self.loss_rec = Some(l.rec);
        self.loss_reg = Some(l.reg);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain numeric struct")
    }
}
