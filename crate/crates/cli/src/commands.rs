//! Subcommand implementations.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use senet_core::data::{gen_synthetic, read_labels, read_matrix, write_labels, write_matrix};
use senet_core::ensc::solve_all;
use senet_core::metrics::{conn, sre, MetricsReport};
use senet_core::objective::total_loss;
use senet_core::senet::{load_checkpoint, save_checkpoint};
use senet_core::spectral::{build_affinity, cluster};
use senet_core::train::write_history_csv;
use senet_core::{CoefficientMatrix, Dataset, Error, SyntheticSpec};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::pipeline::{
    evaluate, gradient_parity, infer, num_clusters, paired_runs, prepare, relative_gap, train_senet,
    AlgorithmRun, GradientParity,
};
use crate::Command;

// Reports go to stdout; a closed pipe is not an error worth dying for.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

pub fn dispatch(cmd: Command, seed: Option<u64>, mut overrides: Vec<crate::Override>) -> CliResult<()> {
    if let Some(s) = seed {
        overrides.push(("seed".into(), s.to_string()));
    }
    let load = |path: Option<&Path>| ExperimentConfig::load(path, &overrides);
    match cmd {
        Command::Gen { spec, common } => {
            let spec = match spec {
                Some(p) => {
                    let text = fs::read_to_string(&p)
                        .map_err(|e| CliError::Usage(format!("cannot read spec {}: {e}", p.display())))?;
                    let spec: SyntheticSpec = serde_json::from_str(&text)
                        .map_err(|e| CliError::Usage(format!("invalid spec {}: {e}", p.display())))?;
                    spec.validate().map_err(|e| CliError::Usage(format!("invalid spec: {e}")))?;
                    spec
                }
                None => load(common.config.as_deref())?
                    .synthetic_spec()
                    .ok_or_else(|| CliError::Usage("gen needs a synthetic data source".into()))?,
            };
            gen(&spec, &common.out)
        }
        Command::Train { common } => train(&load(common.config.as_deref())?, &common.out),
        Command::Infer {
            checkpoint,
            features,
            common,
        } => {
            let cfg = load(common.config.as_deref())?;
            run_infer(&cfg, &checkpoint, &features, &common.out)
        }
        Command::Ensc { common } => ensc(&load(common.config.as_deref())?, &common.out),
        Command::Cluster { coefficients, common } => {
            run_cluster(&load(common.config.as_deref())?, &coefficients, &common.out)
        }
        Command::Eval {
            pred,
            truth,
            coefficients,
            features,
            config,
            out,
        } => {
            let cfg = load(config.as_deref())?;
            eval(&cfg, &pred, &truth, coefficients.as_deref(), features.as_deref(), out.as_deref())
        }
        Command::CompareSenetEnsc { common } => compare_senet_ensc(&load(common.config.as_deref())?, &common.out),
        Command::CompareAlgs { common } => compare_algs(&load(common.config.as_deref())?, &common.out),
        Command::Ablate { common } => ablate(&load(common.config.as_deref())?, &common.out),
    }
}

fn out_dir(common_out: &Path) -> CliResult<&Path> {
    fs::create_dir_all(common_out)?;
    Ok(common_out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn gen(spec: &SyntheticSpec, out: &Path) -> CliResult<()> {
    let out = out_dir(out)?;
    let ds = gen_synthetic(spec)?;
    write_matrix(out.join("features.semx"), &ds.features)?;
    write_labels(out.join("labels.csv"), &ds.labels)?;
    write_json(&out.join("spec.json"), spec)?;
    say!("wrote {} points in R^{} to {}", ds.len(), ds.features.rows(), out.display());
    Ok(())
}

fn write_split(out: &Path, prefix: &str, ds: &Dataset, labeled: bool) -> CliResult<()> {
    write_matrix(out.join(format!("{prefix}_features.semx")), &ds.features)?;
    if labeled {
        write_labels(out.join(format!("{prefix}_labels.csv")), &ds.labels)?;
    }
    Ok(())
}

fn print_metrics(name: &str, r: &MetricsReport) {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    say!(
        "{name}: acc {:.4} nmi {:.4} ari {:.4} sre {} conn {} L {}",
        r.acc,
        r.nmi,
        r.ari,
        opt(r.sre),
        opt(r.conn),
        opt(r.loss)
    );
}

pub fn train(cfg: &ExperimentConfig, out: &Path) -> CliResult<()> {
    let out = out_dir(out)?;
    cfg.write(out)?;
    let prep = prepare(cfg)?;
    let trained = train_senet(cfg, &prep.train.features)?;
    save_checkpoint(&trained.params, &cfg.hyper, out.join("checkpoint.sent"))?;
    write_history_csv(out.join("loss_history.csv"), &trained.history, cfg.train.log_every)?;
    write_split(out, "train", &prep.train, prep.labeled)?;

    let c = infer(&trained.params, &prep.train.features)?;
    write_matrix(out.join("coefficients.semx"), c.matrix())?;
    if prep.labeled {
        let k = num_clusters(cfg, &prep.train.labels);
        let (report, _) = evaluate(cfg, &c, &prep.train.features, &prep.train.labels, k)?;
        write_json(&out.join("metrics.json"), &report)?;
        print_metrics("train", &report);
    } else {
        let l = total_loss(&prep.train.features, &c, &cfg.hyper)?;
        say!("train: L {:.4} L_rec {:.4} L_reg {:.4}", l.total, l.rec, l.reg);
    }

    if let Some(test) = &prep.test {
        write_split(out, "test", test, prep.labeled)?;
        let c_test = infer(&trained.params, &test.features)?;
        write_matrix(out.join("test_coefficients.semx"), c_test.matrix())?;
        if prep.labeled {
            let k = num_clusters(cfg, &test.labels);
            let (report, _) = evaluate(cfg, &c_test, &test.features, &test.labels, k)?;
            write_json(&out.join("test_metrics.json"), &report)?;
            print_metrics("test", &report);
        }
    }
    Ok(())
}

pub fn run_infer(cfg: &ExperimentConfig, checkpoint: &Path, features: &Path, out: &Path) -> CliResult<()> {
    let out = out_dir(out)?;
    let (params, _) = load_checkpoint(checkpoint)?;
    let x = read_matrix(features)?;
    let c = infer(&params, &x)?;
    write_matrix(out.join("coefficients.semx"), c.matrix())?;
    let l = total_loss(&x, &c, &cfg.hyper)?;
    say!("inferred {}x{} coefficients, L {:.4}", c.len(), c.len(), l.total);
    Ok(())
}

pub fn ensc(cfg: &ExperimentConfig, out: &Path) -> CliResult<()> {
    let out = out_dir(out)?;
    cfg.write(out)?;
    let prep = prepare(cfg)?;
    write_split(out, "train", &prep.train, prep.labeled)?;
    let c = solve_all(&prep.train.features, &cfg.solver())?;
    write_matrix(out.join("coefficients.semx"), c.matrix())?;
    if prep.labeled {
        let k = num_clusters(cfg, &prep.train.labels);
        let (report, _) = evaluate(cfg, &c, &prep.train.features, &prep.train.labels, k)?;
        write_json(&out.join("metrics.json"), &report)?;
        print_metrics("ensc", &report);
    }
    Ok(())
}

fn read_coefficients(path: &Path) -> CliResult<CoefficientMatrix> {
    Ok(CoefficientMatrix::new(read_matrix(path)?)?)
}

pub fn run_cluster(cfg: &ExperimentConfig, coefficients: &Path, out: &Path) -> CliResult<()> {
    let k = cfg
        .clusters
        .ok_or_else(|| CliError::Usage("cluster needs --clusters".into()))?;
    let out = out_dir(out)?;
    let c = read_coefficients(coefficients)?;
    let result = cluster(&c, k, cfg.kmeans_seed(), &cfg.spectral)?;
    write_labels(out.join("assignments.csv"), &result.assignments)?;
    say!("clustered {} points into {k} groups", result.assignments.len());
    Ok(())
}

pub fn eval(
    cfg: &ExperimentConfig,
    pred: &Path,
    truth: &Path,
    coefficients: Option<&Path>,
    features: Option<&Path>,
    out: Option<&Path>,
) -> CliResult<()> {
    let pred = read_labels(pred)?;
    let truth = read_labels(truth)?;
    let mut report = MetricsReport::from_labels(&pred, &truth)?;
    if let Some(path) = coefficients {
        let c = read_coefficients(path)?;
        report.sre = Some(sre(&c, &truth)?);
        let w = build_affinity(&c, cfg.spectral.affinity)?;
        report.conn = match conn(&w, &truth) {
            Ok(v) => Some(v),
            Err(Error::ClassTooSmall { .. }) => None,
            Err(e) => return Err(e.into()),
        };
        if let Some(fpath) = features {
            report.set_losses(&total_loss(&read_matrix(fpath)?, &c, &cfg.hyper)?);
        }
    } else if features.is_some() {
        return Err(CliError::Usage("--features needs --coefficients".into()));
    }
    let json = report.to_json();
    say!("{json}");
    if let Some(dir) = out {
        let dir = out_dir(dir)?;
        fs::write(dir.join("metrics.json"), json + "\n")?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct SenetEnscReport {
    pub train_points: usize,
    pub ensc: MetricsReport,
    pub senet: MetricsReport,
    pub senet_test: Option<MetricsReport>,
    /// `|L_SENet − L_EnSC| / L_EnSC` on the training set.
    pub relative_loss_gap: f64,
}

pub fn compare_senet_ensc(cfg: &ExperimentConfig, out: &Path) -> CliResult<()> {
    let out = out_dir(out)?;
    cfg.write(out)?;
    let prep = prepare(cfg)?;
    if !prep.labeled {
        return Err(CliError::Usage("compare-senet-ensc needs labels".into()));
    }
    let train = &prep.train;
    let k = num_clusters(cfg, &train.labels);
    let c_ensc = solve_all(&train.features, &cfg.solver())?;
    let (ensc, _) = evaluate(cfg, &c_ensc, &train.features, &train.labels, k)?;
    let trained = train_senet(cfg, &train.features)?;
    let c_senet = infer(&trained.params, &train.features)?;
    let (senet, _) = evaluate(cfg, &c_senet, &train.features, &train.labels, k)?;
    let senet_test = match &prep.test {
        Some(test) => {
            let c = infer(&trained.params, &test.features)?;
            Some(evaluate(cfg, &c, &test.features, &test.labels, num_clusters(cfg, &test.labels))?.0)
        }
        None => None,
    };
    let report = SenetEnscReport {
        train_points: train.len(),
        relative_loss_gap: relative_gap(senet.loss.unwrap_or(f64::NAN), ensc.loss.unwrap_or(f64::NAN)),
        ensc,
        senet,
        senet_test,
    };
    write_json(&out.join("report.json"), &report)?;
    say!("{}", senet_ensc_table(&report).trim_end());
    Ok(())
}

fn senet_ensc_table(r: &SenetEnscReport) -> String {
    let mut s = String::from("method        L          L_rec      L_reg      SRE      ACC\n");
    let mut row = |name: &str, m: &MetricsReport| {
        let _ = writeln!(
            s,
            "{name:<12}  {:<9.3}  {:<9.4}  {:<9.3}  {:<7.4}  {:.4}",
            m.loss.unwrap_or(f64::NAN),
            m.loss_rec.unwrap_or(f64::NAN),
            m.loss_reg.unwrap_or(f64::NAN),
            m.sre.unwrap_or(f64::NAN),
            m.acc
        );
    };
    row("EnSC", &r.ensc);
    row("SENet train", &r.senet);
    if let Some(t) = &r.senet_test {
        row("SENet test", t);
    }
    let _ = writeln!(s, "relative loss gap {:.5}", r.relative_loss_gap);
    s
}

#[derive(Debug, Serialize)]
pub struct AlgorithmReport {
    pub gradient: GradientParity,
    pub runs: Vec<AlgorithmRun>,
    pub acc_difference: f64,
}

pub fn compare_algs(cfg: &ExperimentConfig, out: &Path) -> CliResult<()> {
    let out = out_dir(out)?;
    cfg.write(out)?;
    let prep = prepare(cfg)?;
    let gradient = gradient_parity(cfg, &prep.train.features, cfg.probes)?;
    let runs = paired_runs(cfg, &prep.train, num_clusters(cfg, &prep.train.labels))?;
    let report = AlgorithmReport {
        acc_difference: (runs[0].acc - runs[1].acc).abs(),
        gradient,
        runs,
    };
    write_json(&out.join("report.json"), &report)?;
    say!(
        "gradient max relative error {:.3e} over {} probes",
        report.gradient.max_relative_error, report.gradient.probes
    );
    for r in &report.runs {
        say!("{:?}: acc {:.4} peak buffer {} f64", r.algorithm, r.acc, r.peak_buffer_f64);
    }
    Ok(())
}

/// One row of the ablation CSV.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub sweep: &'static str,
    pub value: String,
    pub report: MetricsReport,
}

/// The configurations swept by `ablate`, in output order.
pub fn ablation_arms(cfg: &ExperimentConfig) -> Vec<(&'static str, String, ExperimentConfig)> {
    let mut arms = Vec::new();
    for on in [true, false] {
        let mut c = cfg.clone();
        c.arch.soft_threshold = on;
        arms.push(("soft_threshold", if on { "on" } else { "off" }.to_string(), c));
    }
    for &depth in &cfg.ablation.depths {
        let mut c = cfg.clone();
        c.arch.hidden = vec![cfg.arch.embed_dim; depth.saturating_sub(1)];
        arms.push(("depth", depth.to_string(), c));
    }
    let depth = cfg.arch.hidden.len();
    for &width in &cfg.ablation.widths {
        let mut c = cfg.clone();
        c.arch.hidden = vec![width; depth];
        c.arch.embed_dim = width;
        arms.push(("width", width.to_string(), c));
    }
    for &batch in &cfg.ablation.batch_sizes {
        let mut c = cfg.clone();
        c.train.batch_size = batch;
        arms.push(("batch_size", batch.to_string(), c));
    }
    arms
}

pub fn ablate(cfg: &ExperimentConfig, out: &Path) -> CliResult<()> {
    let out = out_dir(out)?;
    cfg.write(out)?;
    if cfg.ablation.depths.contains(&0) || cfg.ablation.widths.contains(&0) || cfg.ablation.batch_sizes.contains(&0) {
        return Err(CliError::Usage("ablation values must be positive".into()));
    }
    let prep = prepare(cfg)?;
    if !prep.labeled {
        return Err(CliError::Usage("ablate needs labels".into()));
    }
    let k = num_clusters(cfg, &prep.train.labels);
    let mut csv = String::from("sweep,value,acc,nmi,ari,sre,L,L_rec,L_reg\n");
    for (sweep, value, c) in ablation_arms(cfg) {
        let trained = train_senet(&c, &prep.train.features)?;
        let coeffs = infer(&trained.params, &prep.train.features)?;
        let (r, _) = evaluate(&c, &coeffs, &prep.train.features, &prep.train.labels, k)?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let _ = writeln!(
            csv,
            "{sweep},{value},{},{},{},{},{},{},{}",
            r.acc,
            r.nmi,
            r.ari,
            opt(r.sre),
            opt(r.loss),
            opt(r.loss_rec),
            opt(r.loss_reg)
        );
        say!("{sweep}={value}: acc {:.4} sre {}", r.acc, opt(r.sre));
    }
    fs::write(out.join("ablation.csv"), csv)?;
    Ok(())
}
