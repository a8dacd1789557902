//! Elastic-net self-expression objective.
//!
//! For a data matrix `X` with columns `x_j` and coefficients `c_ij`, the
//! per-point loss is
//!
//! ```text
//! ℓ_j = (γ/2)·‖x_j − Σ_{i≠j} c_ij x_i‖² + Σ_{i≠j} r(c_ij)
//! r(c) = λ|c| + ((1−λ)/2)·c²
//! ```
//!
//! and the residual `q_j = γ(x_j − Σ_{i≠j} c_ij x_i)` is what couples a
//! point's loss to every other point's coefficient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, gemm, DenseMatrix};
use crate::senet::CoefficientMatrix;

/// Objective constants: reconstruction weight `gamma` and elastic-net mix
/// `lambda` (1 is pure ℓ1, 0 is pure ridge).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            gamma: 50.0,
            lambda: 0.9,
        }
    }
}

impl HyperParams {
    pub fn new(gamma: f64, lambda: f64) -> Result<Self> {
        let h = HyperParams { gamma, lambda };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::spec(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::spec(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Total loss `L = (γ/2)·L_rec + L_reg`, with `L_rec` the plain sum of
/// squared residual norms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    #[serde(rename = "L")]
    pub total: f64,
    #[serde(rename = "L_rec")]
    pub rec: f64,
    #[serde(rename = "L_reg")]
    pub reg: f64,
}

impl LossBreakdown {
    pub fn from_parts(rec: f64, reg: f64, gamma: f64) -> Self {
        LossBreakdown {
            total: 0.5 * gamma * rec + reg,
            rec,
            reg,
        }
    }
}

#[inline]
pub fn reg(c: f64, lambda: f64) -> f64 {
    lambda * c.abs() + 0.5 * (1.0 - lambda) * c * c
}

/// Derivative of [`reg`], taking the subgradient 0 at `c = 0`.
#[inline]
pub fn reg_deriv(c: f64, lambda: f64) -> f64 {
    if c == 0.0 {
        0.0
    } else {
        lambda * c.signum() + (1.0 - lambda) * c
    }
}

fn check_column(x: &DenseMatrix, j: usize, coeffs: &[f64]) -> Result<()> {
    if j >= x.cols() {
        return Err(Error::dims(format!("point {j} out of range for {} points", x.cols())));
    }
    if coeffs.len() != x.cols() {
        return Err(Error::dims(format!(
            "{} coefficients for {} points",
            coeffs.len(),
            x.cols()
        )));
    }
    if coeffs[j] != 0.0 {
        return Err(Error::NonzeroDiagonal {
            index: j,
            value: coeffs[j],
        });
    }
    Ok(())
}

fn reconstruction_error(x: &DenseMatrix, j: usize, coeffs: &[f64]) -> Vec<f64> {
    let mut r = x.col(j).to_vec();
    for (i, &c) in coeffs.iter().enumerate() {
        if i != j && c != 0.0 {
            linalg::axpy(-c, x.col(i), &mut r);
        }
    }
    r
}

/// `q_j = γ(x_j − Σ_{i≠j} c_ij x_i)`
pub fn residual_q(x: &DenseMatrix, j: usize, coeffs: &[f64], gamma: f64) -> Result<Vec<f64>> {
    check_column(x, j, coeffs)?;
    let mut r = reconstruction_error(x, j, coeffs);
    r.iter_mut().for_each(|v| *v *= gamma);
    Ok(r)
}

/// Loss of point `j` split into its squared residual and regularizer parts.
pub fn point_loss_parts(
    x: &DenseMatrix,
    j: usize,
    coeffs: &[f64],
    hyper: &HyperParams,
) -> Result<LossBreakdown> {
    check_column(x, j, coeffs)?;
    let r = reconstruction_error(x, j, coeffs);
    let rec = linalg::dot(&r, &r);
    let reg_sum: f64 = coeffs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != j)
        .map(|(_, &c)| reg(c, hyper.lambda))
        .sum();
    Ok(LossBreakdown::from_parts(rec, reg_sum, hyper.gamma))
}

pub fn point_loss(x: &DenseMatrix, j: usize, coeffs: &[f64], hyper: &HyperParams) -> Result<f64> {
    Ok(point_loss_parts(x, j, coeffs, hyper)?.total)
}

/// Loss over all points for a full coefficient matrix (column `j` holds the
/// coefficients that reconstruct `x_j`).
pub fn total_loss(x: &DenseMatrix, c: &CoefficientMatrix, hyper: &HyperParams) -> Result<LossBreakdown> {
    let cm = c.matrix();
    if cm.rows() != x.cols() || cm.cols() != x.cols() {
        return Err(Error::dims(format!(
            "{}x{} coefficients for {} points",
            cm.rows(),
            cm.cols(),
            x.cols()
        )));
    }
    c.check_diagonal()?;
    let mut resid = x.clone();
    gemm(-1.0, x, false, cm, false, 1.0, &mut resid);
    let rec: f64 = resid.data().iter().map(|v| v * v).sum();
    let reg_sum: f64 = cm.data().iter().map(|&v| reg(v, hyper.lambda)).sum();
    Ok(LossBreakdown::from_parts(rec, reg_sum, hyper.gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = crate::rng::rng_from_seed(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn reg_examples() {
        assert!((reg(1.0, 0.9) - 0.95).abs() < 1e-15);
        assert_eq!(reg(0.0, 0.9), 0.0);
        assert!((reg(-2.0, 0.9) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn reg_deriv_examples() {
        assert_eq!(reg_deriv(0.0, 0.9), 0.0);
        assert!((reg_deriv(1.0, 0.9) - 1.0).abs() < 1e-15);
        assert!((reg_deriv(-2.0, 0.9) + 1.1).abs() < 1e-15);
    }

    #[test]
    fn reg_is_convex_on_a_grid() {
        for &lambda in &[0.0, 0.3, 0.9, 1.0] {
            for ai in -20..=20 {
                for bi in -20..=20 {
                    let (a, b) = (ai as f64 * 0.15, bi as f64 * 0.15);
                    for ti in 0..=10 {
                        let t = ti as f64 / 10.0;
                        let lhs = reg(t * a + (1.0 - t) * b, lambda);
                        let rhs = t * reg(a, lambda) + (1.0 - t) * reg(b, lambda);
                        assert!(lhs <= rhs + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn reg_deriv_matches_finite_differences() {
        let h = 1e-6;
        for &lambda in &[0.0, 0.5, 0.9, 1.0] {
            for k in -50..=50 {
                let c = k as f64 * 0.07 + 0.0123;
                if c.abs() <= 1e-3 {
                    continue;
                }
                let fd = (reg(c + h, lambda) - reg(c - h, lambda)) / (2.0 * h);
                assert!((fd - reg_deriv(c, lambda)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn residual_examples() {
        let x = random(4, 6, 1);
        let zero = vec![0.0; 6];
        let q = residual_q(&x, 2, &zero, 3.0).unwrap();
        for (a, b) in q.iter().zip(x.col(2)) {
            assert_eq!(*a, 3.0 * b);
        }
        // x_0 = 2·x_1 − x_3 reconstructs exactly
        let mut x = random(4, 6, 2);
        let combo: Vec<f64> = (0..4).map(|r| 2.0 * x.get(r, 1) - x.get(r, 3)).collect();
        x.col_mut(0).copy_from_slice(&combo);
        let c = vec![0.0, 2.0, 0.0, -1.0, 0.0, 0.0];
        let q = residual_q(&x, 0, &c, 50.0).unwrap();
        assert!(q.iter().all(|v| v.abs() < 1e-12));
        let loss = point_loss(&x, 0, &c, &HyperParams::default()).unwrap();
        assert!((loss - (reg(2.0, 0.9) + reg(-1.0, 0.9))).abs() < 1e-10);
    }

    #[test]
    fn residual_matches_dense_matvec() {
        let x = random(4, 6, 3);
        let mut c: Vec<f64> = (0..6).map(|i| 0.1 * i as f64 - 0.2).collect();
        c[4] = 0.0;
        let q = residual_q(&x, 4, &c, 2.5).unwrap();
        let xc = x.matvec(&c).unwrap();
        for r in 0..4 {
            assert!((q[r] - 2.5 * (x.get(r, 4) - xc[r])).abs() < 1e-12);
        }
    }

    #[test]
    fn nonzero_diagonal_rejected() {
        let x = random(3, 3, 4);
        assert!(matches!(
            residual_q(&x, 1, &[0.0, 0.5, 0.0], 1.0),
            Err(Error::NonzeroDiagonal { index: 1, .. })
        ));
        assert!(matches!(
            point_loss(&x, 0, &[0.0, 0.0], &HyperParams::default()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn point_loss_examples() {
        let mut x = random(5, 4, 5);
        crate::data::unit_normalize(&mut x);
        let hyper = HyperParams::default();
        let l = point_loss(&x, 1, &[0.0; 4], &hyper).unwrap();
        assert!((l - 25.0).abs() < 1e-12);

        // brute-force expansion
        let c = [0.3, 0.0, -0.7, 0.05];
        let mut resid = 0.0;
        for r in 0..5 {
            let v = x.get(r, 1) - 0.3 * x.get(r, 0) + 0.7 * x.get(r, 2) - 0.05 * x.get(r, 3);
            resid += v * v;
        }
        let want = 25.0 * resid
            + (0.9 * 0.3 + 0.05 * 0.09)
            + (0.9 * 0.7 + 0.05 * 0.49)
            + (0.9 * 0.05 + 0.05 * 0.0025);
        assert!((point_loss(&x, 1, &c, &hyper).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn total_loss_decomposition() {
        let mut x = random(6, 10, 6);
        crate::data::unit_normalize(&mut x);
        let hyper = HyperParams::default();
        let zero = CoefficientMatrix::new(DenseMatrix::zeros(10, 10)).unwrap();
        let l = total_loss(&x, &zero, &hyper).unwrap();
        assert!((l.rec - 10.0).abs() < 1e-12);
        assert_eq!(l.reg, 0.0);

        let mut c = random(10, 10, 7);
        for i in 0..10 {
            c.set(i, i, 0.0);
        }
        c.scale(0.1);
        let cm = CoefficientMatrix::new(c.clone()).unwrap();
        let l = total_loss(&x, &cm, &hyper).unwrap();
        let identity = 0.5 * hyper.gamma * l.rec + l.reg;
        assert!((l.total - identity).abs() <= 1e-10 * l.total);
        // agrees with summing point losses
        let sum: f64 = (0..10)
            .map(|j| point_loss(&x, j, c.col(j), &hyper).unwrap())
            .sum();
        assert!((sum - l.total).abs() <= 1e-10 * sum);
        assert!(l.rec >= 0.0 && l.reg >= 0.0);
    }

    #[test]
    fn hyper_validation() {
        assert!(HyperParams::new(0.0, 0.5).is_err());
        assert!(HyperParams::new(1.0, 1.5).is_err());
        assert!(HyperParams::new(1.0, 1.0).is_ok());
    }
}
