//! Experiment steps shared by the subcommands.

use rand::Rng as _;
use serde::Serialize;

use senet_core::data::{gen_synthetic, preprocess, read_labels, read_matrix, split};
use senet_core::metrics::{acc, conn, sre, MetricsReport};
use senet_core::objective::total_loss;
use senet_core::rng::{derive_seed, rng_from_seed};
use senet_core::senet::DEFAULT_BLOCK;
use senet_core::spectral::{build_affinity, cluster};
use senet_core::train::{naive_gradient, train, two_pass_gradient, Algorithm, MemoryAccountant};
use senet_core::{CoefficientMatrix, Dataset, DenseMatrix, Error, SENetParams, TrainOutput};

use crate::config::{DataSource, ExperimentConfig};
use crate::error::{CliError, CliResult};

/// Dataset after preprocessing, with labels when the source has them.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub data: Dataset,
    pub labeled: bool,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> CliResult<Loaded> {
    let (mut ds, labeled) = match &cfg.data {
        DataSource::Synthetic { .. } => (gen_synthetic(&cfg.synthetic_spec().expect("synthetic source"))?, true),
        DataSource::Files { features, labels } => {
            let x = read_matrix(features)?;
            match labels {
                Some(path) => (Dataset::new(x, read_labels(path)?)?, true),
                None => {
                    let n = x.cols();
                    (Dataset::new(x, vec![0; n])?, false)
                }
            }
        }
    };
    if !cfg.preprocess.is_empty() {
        ds.features = preprocess(&ds.features, &cfg.preprocess)?.matrix;
    }
    Ok(Loaded { data: ds, labeled })
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Option<Dataset>,
    pub labeled: bool,
}

pub fn prepare(cfg: &ExperimentConfig) -> CliResult<Prepared> {
    let loaded = load_dataset(cfg)?;
    let (train, test) = match cfg.train_size {
        Some(n) if n < loaded.data.len() => {
            let (a, b) = split(&loaded.data, n, cfg.split_seed())?;
            (a, Some(b))
        }
        _ => (loaded.data, None),
    };
    Ok(Prepared {
        train,
        test,
        labeled: loaded.labeled,
    })
}

pub fn num_clusters(cfg: &ExperimentConfig, labels: &[usize]) -> usize {
    cfg.clusters.unwrap_or_else(|| {
        let mut l = labels.to_vec();
        l.sort_unstable();
        l.dedup();
        l.len().max(1)
    })
}

pub fn init_params(cfg: &ExperimentConfig, input_dim: usize) -> CliResult<SENetParams> {
    let mut p = SENetParams::init(input_dim, &cfg.arch.hidden, cfg.arch.embed_dim, cfg.init_seed())?;
    p.learn_threshold = cfg.arch.soft_threshold;
    Ok(p)
}

pub fn train_senet(cfg: &ExperimentConfig, x: &DenseMatrix) -> CliResult<TrainOutput> {
    let init = init_params(cfg, x.rows())?;
    Ok(train(x, &cfg.hyper, &cfg.train, init)?)
}

/// Coefficients of a trained network on `x`.
pub fn infer(params: &SENetParams, x: &DenseMatrix) -> CliResult<CoefficientMatrix> {
    Ok(params.coeff_matrix(x, DEFAULT_BLOCK)?)
}

/// Spectral clustering of `c` plus every metric against `labels`.
pub fn evaluate(
    cfg: &ExperimentConfig,
    c: &CoefficientMatrix,
    x: &DenseMatrix,
    labels: &[usize],
    k: usize,
) -> CliResult<(MetricsReport, Vec<usize>)> {
    let clustered = cluster(c, k, cfg.kmeans_seed(), &cfg.spectral)?;
    let mut report = MetricsReport::from_labels(&clustered.assignments, labels)?;
    report.sre = Some(sre(c, labels)?);
    let w = build_affinity(c, cfg.spectral.affinity)?;
    report.conn = match conn(&w, labels) {
        Ok(v) => Some(v),
        Err(Error::ClassTooSmall { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    report.set_losses(&total_loss(x, c, &cfg.hyper)?);
    Ok((report, clustered.assignments))
}

/// `|L_a − L_b| / L_b`
pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientParity {
    pub probes: usize,
    /// Largest per-coordinate `|g₁ − g₂| / max(|g₁|, |g₂|, 1e-12·‖g₁‖∞)`.
    pub max_relative_error: f64,
    pub max_abs_error: f64,
}

/// Compares the two gradient routes at random parameters and single points.
pub fn gradient_parity(cfg: &ExperimentConfig, x: &DenseMatrix, probes: usize) -> CliResult<GradientParity> {
    if x.cols() < 2 {
        return Err(CliError::Usage("gradient parity needs at least two points".into()));
    }
    let mut rng = rng_from_seed(cfg.probe_seed());
    let mut worst_rel = 0.0f64;
    let mut worst_abs = 0.0f64;
    let mut acct = MemoryAccountant::default();
    for probe in 0..probes {
        let mut params = SENetParams::init(
            x.rows(),
            &cfg.arch.hidden,
            cfg.arch.embed_dim,
            derive_seed(cfg.probe_seed(), probe as u64),
        )?;
        // nonzero biases and threshold so every code path is exercised
        let n_slices = params.slices().len();
        for (s, sl) in params.slices_mut().into_iter().enumerate() {
            if s % 2 == 1 && s + 1 < n_slices {
                sl.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
            }
        }
        params.threshold = rng.random_range(0.0..0.05);
        let j = rng.random_range(0..x.cols());
        let a = naive_gradient(&params, x, &[j], &cfg.hyper, &mut acct)?;
        let b = two_pass_gradient(&params, x, &[j], &cfg.hyper, cfg.train.block, &mut acct)?;
        let ga = a.grads.slices().concat();
        let gb = b.grads.slices().concat();
        let scale = ga.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (u, v) in ga.iter().zip(&gb) {
            let diff = (u - v).abs();
            let denom = u.abs().max(v.abs()).max(1e-12 * scale);
            worst_abs = worst_abs.max(diff);
            if denom > 0.0 {
                worst_rel = worst_rel.max(diff / denom);
            }
        }
    }
    Ok(GradientParity {
        probes,
        max_relative_error: worst_rel,
        max_abs_error: worst_abs,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AlgorithmRun {
    pub algorithm: Algorithm,
    pub acc: f64,
    pub peak_buffer_f64: usize,
}

/// Trains once per algorithm from the same initialization and batches.
pub fn paired_runs(cfg: &ExperimentConfig, ds: &Dataset, k: usize) -> CliResult<Vec<AlgorithmRun>> {
    let mut out = Vec::new();
    for algorithm in [Algorithm::Naive, Algorithm::TwoPass] {
        let mut c = cfg.clone();
        c.train.algorithm = algorithm;
        let trained = train_senet(&c, &ds.features)?;
        let coeffs = infer(&trained.params, &ds.features)?;
        let clustered = cluster(&coeffs, k, c.kmeans_seed(), &c.spectral)?;
        out.push(AlgorithmRun {
            algorithm,
            acc: acc(&clustered.assignments, &ds.labels)?,
            peak_buffer_f64: trained.peak_buffer_f64,
        });
    }
    Ok(out)
}
