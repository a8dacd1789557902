//! Stochastic training of the self-expressive network.
//!
//! Two gradient routes produce the same batch gradient:
//!
//! * [`naive_gradient`] embeds every point with the key network, keeps the
//!   whole tape, and back-propagates the batch loss in one shot. Working
//!   memory grows linearly with the number of points.
//! * [`two_pass_gradient`] first streams over blocks of points (forward only)
//!   to form the residual `q_j`, then streams again and accumulates
//!   `Σ_i (r'(f_ij) − ⟨x_i, q_j⟩)·∂f_ij/∂Θ` block by block. Working memory
//!   depends on the block size and batch size but not on the number of points.
//!
//! Both feed the same update: mean batch gradient, global-norm clipping, Adam
//! with a cosine-annealed learning rate, and `b` clamped to stay non-negative.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm, DenseMatrix};
use crate::objective::{reg, reg_deriv, HyperParams, LossBreakdown};
use crate::rng::{derive_seed, rng_from_seed, stream};
use crate::senet::{SENetParams, DEFAULT_BLOCK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Naive,
    TwoPass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_min: f64,
    pub clip_norm: f64,
    pub block: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    /// Interval between rows of the loss-history CSV.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 500,
            batch_size: 100,
            learning_rate: 1e-3,
            lr_min: 0.0,
            clip_norm: 1.0,
            block: DEFAULT_BLOCK,
            seed: 0,
            algorithm: Algorithm::Naive,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    /// Zero iterations is accepted and leaves the parameters untouched.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.block == 0 || self.log_every == 0 {
            return Err(Error::spec("batch_size, block and log_every must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || self.lr_min < 0.0 || self.lr_min > self.learning_rate {
            return Err(Error::spec("need 0 <= lr_min <= learning_rate and learning_rate > 0"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::spec("clip_norm must be positive"));
        }
        Ok(())
    }
}

/// `η_min + ½(η_max − η_min)(1 + cos(πt/T))`
pub fn cosine_lr(t: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr_max;
    }
    let frac = t.min(total) as f64 / total as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * frac).cos())
}

/// Rescales `grads` in place so its global ℓ2 norm is at most `clip_norm`.
/// Returns the norm before clipping.
pub fn clip_gradient(grads: &mut SENetParams, clip_norm: f64) -> f64 {
    let norm = grads
        .slices()
        .iter()
        .flat_map(|s| s.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > clip_norm {
        let s = clip_norm / norm;
        for sl in grads.slices_mut() {
            sl.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Adam moment estimates for a list of parameter slices.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(shapes: &[usize]) -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(params: &SENetParams) -> Self {
        let shapes: Vec<usize> = params.slices().iter().map(|s| s.len()).collect();
        Self::new(&shapes)
    }

    /// One bias-corrected Adam update of `params` against `grads`.
    pub fn update(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, lr: f64) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::dims("parameter groups do not match optimizer state"));
        }
        for ((p, g), m) in params.iter().zip(&grads).zip(&self.first) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::dims("parameter group sizes do not match optimizer state"));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for k in 0..p.len() {
                let gk = g[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Adam step on the network followed by clamping `b` to `[0, ∞)`.
pub fn adam_step(
    params: &mut SENetParams,
    grads: &SENetParams,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let fixed = params.threshold;
    state.update(params.slices_mut(), grads.slices(), lr)?;
    params.threshold = if params.learn_threshold {
        params.threshold.max(0.0)
    } else {
        fixed
    };
    Ok(())
}

/// Tracks the number of f64 values held in working buffers.
#[derive(Debug, Clone, Default)]
pub struct MemoryAccountant {
    current: usize,
    peak: usize,
}

impl MemoryAccountant {
    pub fn alloc(&mut self, n: usize) {
        self.current += n;
        self.peak = self.peak.max(self.current);
    }

    pub fn free(&mut self, n: usize) {
        self.current = self.current.saturating_sub(n);
    }

    pub fn current(&self) -> usize {
        self.current
    }

    /// Largest simultaneous buffer footprint seen, in f64 values.
    pub fn peak(&self) -> usize {
        self.peak
    }
}

/// Mean gradient and mean loss over a batch of points.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub grads: SENetParams,
    pub loss: LossBreakdown,
}

fn check_batch(x: &DenseMatrix, params: &SENetParams, batch: &[usize]) -> Result<()> {
    if x.rows() != params.input_dim() {
        return Err(Error::spec(format!(
            "data has {} features, network expects {}",
            x.rows(),
            params.input_dim()
        )));
    }
    if batch.is_empty() {
        return Err(Error::spec("empty batch"));
    }
    if let Some(&j) = batch.iter().find(|&&j| j >= x.cols()) {
        return Err(Error::spec(format!("batch index {j} out of range")));
    }
    Ok(())
}

// Turns dℓ/df (entries of `w`, already masked and batch-scaled) into
// dℓ/d(inner product) in place, and returns the threshold contribution.
fn through_threshold(params: &SENetParams, inner: &DenseMatrix, w: &mut DenseMatrix) -> f64 {
    let (alpha, b) = (params.alpha, params.threshold);
    let mut db = 0.0;
    for (wv, &t) in w.data_mut().iter_mut().zip(inner.data()) {
        // derivative taken as 0 on the dead zone including its edge |t| = b
        if t.abs() > b {
            db -= alpha * t.signum() * *wv;
            *wv *= alpha;
        } else {
            *wv = 0.0;
        }
    }
    db
}

fn coefficients(params: &SENetParams, inner: &DenseMatrix) -> DenseMatrix {
    inner.map(|t| params.shrink(t))
}

fn backward_scratch(net: &crate::mlp::MlpParams, n: usize) -> usize {
    2 * net.dims().into_iter().max().unwrap_or(0) * n
}

/// Batch gradient with the whole key embedding and its tape held in memory.
pub fn naive_gradient(
    params: &SENetParams,
    x: &DenseMatrix,
    batch: &[usize],
    hyper: &HyperParams,
    acct: &mut MemoryAccountant,
) -> Result<BatchGradient> {
    check_batch(x, params, batch)?;
    let (n, bsz) = (x.cols(), batch.len());
    let scale = 1.0 / bsz as f64;
    let mut grads = params.zeros_like();
    acct.alloc(grads.num_params());

    let xb = x.select_columns(batch);
    let (u, tape_u) = params.query.forward_batch(&xb)?;
    let (v, tape_v) = params.key.forward_batch(x)?;
    acct.alloc(xb.data().len() + u.data().len() + tape_u.len_f64());
    acct.alloc(v.data().len() + tape_v.len_f64());

    // inner[i, k] = v_iᵀ u_{batch[k]}
    let inner = v.t_matmul(&u)?;
    let mut f = coefficients(params, &inner);
    for (k, &j) in batch.iter().enumerate() {
        f.set(j, k, 0.0);
    }
    acct.alloc(2 * n * bsz);

    // residuals x_j − X f_j
    let mut resid = xb.clone();
    gemm(-1.0, x, false, &f, false, 1.0, &mut resid);
    acct.alloc(resid.data().len());
    let rec: f64 = resid.data().iter().map(|r| r * r).sum();
    let reg_sum: f64 = f.data().iter().map(|&c| reg(c, hyper.lambda)).sum();

    // dℓ/df_ik = r'(f_ik) − γ⟨x_i, resid_k⟩
    let mut w = f.map(|c| reg_deriv(c, hyper.lambda));
    gemm(-hyper.gamma, x, true, &resid, false, 1.0, &mut w);
    acct.alloc(w.data().len());
    for (k, &j) in batch.iter().enumerate() {
        w.set(j, k, 0.0);
    }
    w.scale(scale);
    grads.threshold = through_threshold(params, &inner, &mut w);

    let du = v.matmul(&w)?;
    let mut dv = DenseMatrix::zeros(v.rows(), n);
    gemm(1.0, &u, false, &w, true, 0.0, &mut dv);
    acct.alloc(du.data().len() + dv.data().len());
    acct.alloc(backward_scratch(&params.key, n));
    params.key.backward_accumulate(&tape_v, &dv, &mut grads.key)?;
    params.query.backward_accumulate(&tape_u, &du, &mut grads.query)?;
    acct.free(acct.current());

    Ok(BatchGradient {
        grads,
        loss: LossBreakdown::from_parts(rec * scale, reg_sum * scale, hyper.gamma),
    })
}

/// Batch gradient accumulated over blocks of `block` points in two passes.
pub fn two_pass_gradient(
    params: &SENetParams,
    x: &DenseMatrix,
    batch: &[usize],
    hyper: &HyperParams,
    block: usize,
    acct: &mut MemoryAccountant,
) -> Result<BatchGradient> {
    check_batch(x, params, batch)?;
    if block == 0 {
        return Err(Error::spec("block must be >= 1"));
    }
    let (n, bsz) = (x.cols(), batch.len());
    let scale = 1.0 / bsz as f64;
    let mut grads = params.zeros_like();
    acct.alloc(grads.num_params());

    let xb = x.select_columns(batch);
    let (u, tape_u) = params.query.forward_batch(&xb)?;
    acct.alloc(xb.data().len() + u.data().len() + tape_u.len_f64());

    let blocks = || (0..n).step_by(block).map(move |s| (s, (s + block).min(n)));
    let mask_self = |m: &mut DenseMatrix, start: usize, end: usize| {
        for (k, &j) in batch.iter().enumerate() {
            if (start..end).contains(&j) {
                m.set(j - start, k, 0.0);
            }
        }
    };

    // First pass: x̄_k = Σ_i f_ik x_i, forward only.
    let mut xbar = DenseMatrix::zeros(x.rows(), bsz);
    acct.alloc(xbar.data().len());
    let mut reg_sum = 0.0;
    for (start, end) in blocks() {
        let xblk = x.column_range(start, end);
        let vblk = params.key.predict_batch(&xblk)?;
        let inner = vblk.t_matmul(&u)?;
        let mut f = coefficients(params, &inner);
        mask_self(&mut f, start, end);
        let held = xblk.data().len() + vblk.data().len() + 2 * f.data().len();
        acct.alloc(held + 2 * params.key.dims().into_iter().max().unwrap_or(0) * (end - start));
        gemm(1.0, &xblk, false, &f, false, 1.0, &mut xbar);
        reg_sum += f.data().iter().map(|&c| reg(c, hyper.lambda)).sum::<f64>();
        acct.free(held + 2 * params.key.dims().into_iter().max().unwrap_or(0) * (end - start));
    }

    // q_k = γ(x_k − x̄_k)
    let mut q = xb.sub(&xbar)?;
    let rec: f64 = q.data().iter().map(|r| r * r).sum();
    q.scale(hyper.gamma);
    acct.alloc(q.data().len());

    // Second pass: dΘ += (r'(f_ik) − ⟨x_i, q_k⟩)·∂f_ik/∂Θ.
    let mut du = DenseMatrix::zeros(u.rows(), bsz);
    acct.alloc(du.data().len());
    for (start, end) in blocks() {
        let xblk = x.column_range(start, end);
        let (vblk, tape) = params.key.forward_batch(&xblk)?;
        let inner = vblk.t_matmul(&u)?;
        let mut w = coefficients(params, &inner).map(|c| reg_deriv(c, hyper.lambda));
        gemm(-1.0, &xblk, true, &q, false, 1.0, &mut w);
        mask_self(&mut w, start, end);
        w.scale(scale);
        grads.threshold += through_threshold(params, &inner, &mut w);
        let mut dv = DenseMatrix::zeros(vblk.rows(), end - start);
        gemm(1.0, &u, false, &w, true, 0.0, &mut dv);
        let held = xblk.data().len()
            + vblk.data().len()
            + tape.len_f64()
            + inner.data().len()
            + w.data().len()
            + dv.data().len()
            + backward_scratch(&params.key, end - start);
        acct.alloc(held);
        gemm(1.0, &vblk, false, &w, false, 1.0, &mut du);
        params.key.backward_accumulate(&tape, &dv, &mut grads.key)?;
        acct.free(held);
    }
    acct.alloc(backward_scratch(&params.query, bsz));
    params.query.backward_accumulate(&tape_u, &du, &mut grads.query)?;
    acct.free(acct.current());

    Ok(BatchGradient {
        grads,
        loss: LossBreakdown::from_parts(rec * scale, reg_sum * scale, hyper.gamma),
    })
}

/// One row of training history: batch-mean per-point losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: SENetParams,
    pub history: Vec<TrainRecord>,
    /// Peak working-buffer size over all gradient evaluations, in f64 values.
    pub peak_buffer_f64: usize,
}

/// Runs the configured algorithm from `init`. `on_step(t, params)` is
/// called after every update with the 1-based iteration count.
pub fn train_with<F>(
    x: &DenseMatrix,
    hyper: &HyperParams,
    cfg: &TrainConfig,
    init: SENetParams,
    mut on_step: F,
) -> Result<TrainOutput>
where
    F: FnMut(usize, &SENetParams),
{
    cfg.validate()?;
    hyper.validate()?;
    init.validate()?;
    if x.rows() != init.input_dim() {
        return Err(Error::spec(format!(
            "data has {} features, network expects {}",
            x.rows(),
            init.input_dim()
        )));
    }
    if x.cols() < 2 && cfg.iterations > 0 {
        return Err(Error::spec("training needs at least two points"));
    }
    let mut params = init;
    let mut adam = AdamState::for_params(&params);
    let mut rng = rng_from_seed(derive_seed(cfg.seed, stream::BATCH));
    let mut acct = MemoryAccountant::default();
    let mut history = Vec::with_capacity(cfg.iterations);
    let bsz = cfg.batch_size.min(x.cols());

    for t in 0..cfg.iterations {
        let lr = cosine_lr(t, cfg.iterations, cfg.learning_rate, cfg.lr_min);
        let batch = index::sample(&mut rng, x.cols(), bsz).into_vec();
        let mut g = match cfg.algorithm {
            Algorithm::Naive => naive_gradient(&params, x, &batch, hyper, &mut acct)?,
            Algorithm::TwoPass => two_pass_gradient(&params, x, &batch, hyper, cfg.block, &mut acct)?,
        };
        if !params.learn_threshold {
            g.grads.threshold = 0.0;
        }
        let grad_norm = clip_gradient(&mut g.grads, cfg.clip_norm);
        adam_step(&mut params, &g.grads, &mut adam, lr)?;
        history.push(TrainRecord {
            iteration: t + 1,
            lr,
            loss: g.loss,
            grad_norm,
        });
        on_step(t + 1, &params);
    }
    Ok(TrainOutput {
        params,
        history,
        peak_buffer_f64: acct.peak(),
    })
}

pub fn train(
    x: &DenseMatrix,
    hyper: &HyperParams,
    cfg: &TrainConfig,
    init: SENetParams,
) -> Result<TrainOutput> {
    train_with(x, hyper, cfg, init, |_, _| {})
}

pub fn train_naive(
    x: &DenseMatrix,
    hyper: &HyperParams,
    cfg: &TrainConfig,
    init: SENetParams,
) -> Result<TrainOutput> {
    if cfg.algorithm != Algorithm::Naive {
        return Err(Error::spec("train_naive called with a two-pass configuration"));
    }
    train(x, hyper, cfg, init)
}

pub fn train_two_pass(
    x: &DenseMatrix,
    hyper: &HyperParams,
    cfg: &TrainConfig,
    init: SENetParams,
) -> Result<TrainOutput> {
    if cfg.algorithm != Algorithm::TwoPass {
        return Err(Error::spec("train_two_pass called with a naive configuration"));
    }
    train(x, hyper, cfg, init)
}

/// CSV with header `iteration,lr,L,L_rec,L_reg`, one row every `log_every`
/// iterations plus the final one.
pub fn history_csv(history: &[TrainRecord], log_every: usize) -> String {
    let mut out = String::from("iteration,lr,L,L_rec,L_reg\n");
    let every = log_every.max(1);
    for (k, r) in history.iter().enumerate() {
        if r.iteration % every == 0 || k + 1 == history.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.iteration, r.lr, r.loss.total, r.loss.rec, r.loss.reg
            );
        }
    }
    out
}

pub fn write_history_csv(path: impl AsRef<Path>, history: &[TrainRecord], log_every: usize) -> Result<()> {
    std::fs::write(path, history_csv(history, log_every))?;
    Ok(())
}
