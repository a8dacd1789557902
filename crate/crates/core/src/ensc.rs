//! Per-column elastic-net self-expression solved by proximal gradient.
//!
//! Column `j` minimizes `(γ/2)‖x_j − Σ_{i≠j} c_i x_i‖² + Σ_i r(c_i)`. The
//! quadratic term is the smooth part; the whole regularizer goes through its
//! closed-form prox.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, DenseMatrix};
use crate::objective::{reg, HyperParams};
use crate::senet::{soft_threshold, CoefficientMatrix};

const POWER_STEPS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Stop once an accepted step lowers the objective by less than this
    /// fraction and moves no coefficient by more than `10·tol`.
    pub tol: f64,
    pub hyper: HyperParams,
    /// Factor by which the step may grow after an accepted step. `1.0` keeps
    /// the step at `1/L`, only shrinking it when backtracking fails.
    pub step_growth: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 5000,
            tol: 1e-8,
            hyper: HyperParams::default(),
            step_growth: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.tol > 0.0) {
            return Err(Error::spec("solver needs max_iters >= 1 and tol > 0"));
        }
        if !(self.step_growth >= 1.0) || !self.step_growth.is_finite() {
            return Err(Error::spec("step_growth must be finite and >= 1"));
        }
        self.hyper.validate()
    }
}

/// Minimizer of `(1/(2t))(c − z)² + λ|c| + ((1−λ)/2)c²`.
#[inline]
pub fn prox_elastic_net(z: f64, t: f64, lambda: f64) -> f64 {
    soft_threshold(z, t * lambda) / (1.0 + t * (1.0 - lambda))
}

/// Result of one column solve, with the accepted-step objective trace.
#[derive(Debug, Clone)]
pub struct ColumnSolution {
    pub coeffs: Vec<f64>,
    /// Objective at the start and after every accepted step.
    pub objectives: Vec<f64>,
    pub iterations: usize,
    /// Lipschitz estimate in effect at termination.
    pub lipschitz: f64,
}

/// Gradient of the smooth part, `−γ X₋ⱼᵀ(x_j − X c)`, with the `j` entry zeroed.
pub fn smooth_gradient(x: &DenseMatrix, j: usize, coeffs: &[f64], gamma: f64) -> Vec<f64> {
    let resid = residual(x, j, coeffs);
    let mut g: Vec<f64> = x.columns().map(|xi| -gamma * dot(xi, &resid)).collect();
    g[j] = 0.0;
    g
}

fn residual(x: &DenseMatrix, j: usize, coeffs: &[f64]) -> Vec<f64> {
    let mut r = x.col(j).to_vec();
    for (i, xi) in x.columns().enumerate() {
        let c = coeffs[i];
        if c != 0.0 && i != j {
            r.iter_mut().zip(xi).for_each(|(rv, &xv)| *rv -= c * xv);
        }
    }
    r
}

fn objective(x: &DenseMatrix, j: usize, coeffs: &[f64], hyper: &HyperParams) -> (f64, Vec<f64>) {
    let r = residual(x, j, coeffs);
    let smooth = 0.5 * hyper.gamma * dot(&r, &r);
    let pen: f64 = coeffs.iter().map(|&c| reg(c, hyper.lambda)).sum();
    (smooth + pen, r)
}

// γ‖X₋ⱼ‖₂² by power iteration on the D×D matrix X₋ⱼX₋ⱼᵀ.
fn lipschitz(gram_rows: &DenseMatrix, xj: &[f64], gamma: f64) -> f64 {
    let d = xj.len();
    let m = DenseMatrix::from_fn(d, d, |a, b| gram_rows.get(a, b) - xj[a] * xj[b]);
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut est = 0.0;
    for _ in 0..POWER_STEPS {
        let w = m.matvec(&v).expect("square");
        let norm = dot(&w, &w).sqrt();
        if norm == 0.0 {
            break;
        }
        est = norm;
        v = w.into_iter().map(|x| x / norm).collect();
    }
    (gamma * est).max(f64::MIN_POSITIVE)
}

fn check_column(x: &DenseMatrix, j: usize) -> Result<()> {
    if x.cols() < 2 {
        return Err(Error::dims("need at least two columns"));
    }
    if j >= x.cols() {
        return Err(Error::dims(format!("column {j} out of range for {} columns", x.cols())));
    }
    Ok(())
}

fn solve_with_gram(x: &DenseMatrix, xxt: &DenseMatrix, j: usize, cfg: &SolverConfig) -> ColumnSolution {
    let hyper = &cfg.hyper;
    let n = x.cols();
    let mut lip = lipschitz(xxt, x.col(j), hyper.gamma);
    let mut c = vec![0.0; n];
    let (mut f, mut r) = objective(x, j, &c, hyper);
    let mut objectives = vec![f];
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        let mut grad: Vec<f64> = x.columns().map(|xi| -hyper.gamma * dot(xi, &r)).collect();
        grad[j] = 0.0;
        let smooth = 0.5 * hyper.gamma * dot(&r, &r);
        // backtrack until the quadratic upper bound holds at the candidate
        let (cand, cand_r, cand_f, moved) = loop {
            let t = 1.0 / lip;
            let cand: Vec<f64> = (0..n)
                .map(|i| if i == j { 0.0 } else { prox_elastic_net(c[i] - t * grad[i], t, hyper.lambda) })
                .collect();
            let cand_r = residual(x, j, &cand);
            let cand_smooth = 0.5 * hyper.gamma * dot(&cand_r, &cand_r);
            let mut lin = 0.0;
            let mut sq = 0.0;
            let mut moved = 0.0f64;
            for i in 0..n {
                let dlt = cand[i] - c[i];
                lin += grad[i] * dlt;
                sq += dlt * dlt;
                moved = moved.max(dlt.abs());
            }
            if cand_smooth <= smooth + lin + 0.5 * lip * sq + 1e-12 * smooth.abs() || lip > 1e300 {
                let pen: f64 = cand.iter().map(|&v| reg(v, hyper.lambda)).sum();
                break (cand, cand_r, cand_smooth + pen, moved);
            }
            lip *= 2.0;
        };
        if cand_f > f {
            // numerically flat; the prox step can no longer improve
            break;
        }
        lip /= cfg.step_growth;
        let decrease = f - cand_f;
        c = cand;
        r = cand_r;
        let prev = f;
        f = cand_f;
        objectives.push(f);
        // the prox step doubles as the fixed-point residual
        if decrease <= cfg.tol * prev.abs().max(f64::MIN_POSITIVE) && moved <= 10.0 * cfg.tol {
            break;
        }
    }
    ColumnSolution {
        coeffs: c,
        objectives,
        iterations,
        lipschitz: lip,
    }
}

/// Solves column `j` and returns the full trace.
pub fn solve_column_traced(x: &DenseMatrix, j: usize, cfg: &SolverConfig) -> Result<ColumnSolution> {
    cfg.validate()?;
    check_column(x, j)?;
    let xxt = x.matmul(&x.transpose())?;
    Ok(solve_with_gram(x, &xxt, j, cfg))
}

/// Coefficient vector for column `j`; entry `j` is exactly zero.
pub fn solve_column(x: &DenseMatrix, j: usize, cfg: &SolverConfig) -> Result<Vec<f64>> {
    Ok(solve_column_traced(x, j, cfg)?.coeffs)
}

/// All columns, solved independently in parallel.
pub fn solve_all(x: &DenseMatrix, cfg: &SolverConfig) -> Result<CoefficientMatrix> {
    cfg.validate()?;
    check_column(x, 0)?;
    let xxt = x.matmul(&x.transpose())?;
    let cols: Vec<Vec<f64>> = (0..x.cols())
        .into_par_iter()
        .map(|j| solve_with_gram(x, &xxt, j, cfg).coeffs)
        .collect();
    CoefficientMatrix::new(DenseMatrix::from_columns(&cols)?)
}
