//! JSON experiment configuration and `--key value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use senet_core::data::{PreprocessStep, SyntheticSpec};
use senet_core::ensc::SolverConfig;
use senet_core::rng::{derive_seed, stream};
use senet_core::{HyperParams, SpectralConfig, TrainConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Random union of subspaces; its seed is derived from the top-level seed.
    Synthetic {
        ambient_dim: usize,
        subspace_dim: usize,
        num_subspaces: usize,
        points_per_subspace: usize,
    },
    Files {
        features: PathBuf,
        labels: Option<PathBuf>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            ambient_dim: 15,
            subspace_dim: 6,
            num_subspaces: 5,
            points_per_subspace: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    /// `false` replaces the soft threshold by the identity (b frozen at 0).
    pub soft_threshold: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            hidden: vec![1024, 1024],
            embed_dim: 1024,
            soft_threshold: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnscSettings {
    pub max_iters: usize,
    pub tol: f64,
    pub step_growth: f64,
}

impl Default for EnscSettings {
    fn default() -> Self {
        let d = SolverConfig::default();
        EnscSettings {
            max_iters: d.max_iters,
            tol: d.tol,
            step_growth: d.step_growth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Layers per query/key network, each as wide as `arch.embed_dim`.
    pub depths: Vec<usize>,
    /// Width of every hidden and output layer.
    pub widths: Vec<usize>,
    pub batch_sizes: Vec<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            depths: vec![1, 2, 3, 4],
            widths: vec![64, 128, 256],
            batch_sizes: vec![25, 50, 100],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSource,
    pub preprocess: Vec<PreprocessStep>,
    /// Points used for training; the rest become the test split.
    pub train_size: Option<usize>,
    pub hyper: HyperParams,
    pub arch: Architecture,
    pub train: TrainConfig,
    pub spectral: SpectralConfig,
    /// Number of clusters; defaults to the number of distinct labels.
    pub clusters: Option<usize>,
    pub ensc: EnscSettings,
    pub ablation: AblationConfig,
    /// Random (parameter, point) probes used by `compare-algs`.
    pub probes: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            data: DataSource::default(),
            preprocess: Vec::new(),
            train_size: None,
            hyper: HyperParams::default(),
            arch: Architecture::default(),
            train: TrainConfig::default(),
            spectral: SpectralConfig::default(),
            clusters: None,
            ensc: EnscSettings::default(),
            ablation: AblationConfig::default(),
            probes: 20,
        }
    }
}

impl ExperimentConfig {
    /// Reads `path` (or starts from defaults) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> CliResult<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", p.display())))?
            }
            None => serde_json::to_value(ExperimentConfig::default())?,
        };
        for (key, raw) in overrides {
            apply_override(&mut value, key, raw)?;
        }
        let mut cfg: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        cfg.resolve();
        cfg.validate().map_err(|e| match e {
            CliError::Core(inner) => CliError::Usage(format!("invalid config: {inner}")),
            other => other,
        })?;
        Ok(cfg)
    }

    /// Fills derived sub-seeds so the written config is self-contained.
    pub fn resolve(&mut self) {
        self.train.seed = derive_seed(self.seed, stream::BATCH);
    }

    pub fn validate(&self) -> CliResult<()> {
        self.hyper.validate()?;
        self.train.validate()?;
        self.solver().validate()?;
        if self.arch.hidden.contains(&0) || self.arch.embed_dim == 0 {
            return Err(CliError::Usage("layer widths must be positive".into()));
        }
        if self.clusters == Some(0) || self.train_size == Some(0) {
            return Err(CliError::Usage("clusters and train_size must be positive".into()));
        }
        if let Some(m) = self.spectral.embed_dim {
            if m == 0 {
                return Err(CliError::Usage("spectral.embed_dim must be positive".into()));
            }
        }
        if let Some(spec) = self.synthetic_spec() {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn synthetic_spec(&self) -> Option<SyntheticSpec> {
        match self.data {
            DataSource::Synthetic {
                ambient_dim,
                subspace_dim,
                num_subspaces,
                points_per_subspace,
            } => Some(SyntheticSpec {
                ambient_dim,
                subspace_dim,
                num_subspaces,
                points_per_subspace,
                seed: derive_seed(self.seed, stream::DATA),
            }),
            DataSource::Files { .. } => None,
        }
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            max_iters: self.ensc.max_iters,
            tol: self.ensc.tol,
            hyper: self.hyper,
            step_growth: self.ensc.step_growth,
        }
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, stream::SPLIT)
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, stream::INIT)
    }

    pub fn kmeans_seed(&self) -> u64 {
        derive_seed(self.seed, stream::KMEANS)
    }

    pub fn probe_seed(&self) -> u64 {
        derive_seed(self.seed, stream::PROBE)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is plain data") + "\n"
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        std::fs::write(dir.join("config.json"), self.to_json())?;
        Ok(())
    }
}

/// Sets the dotted `key` inside `root`. The value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, key: &str, raw: &str) -> CliResult<()> {
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::Usage(format!("malformed override key --{key}")));
        }
        let obj = match node {
            Value::Object(m) => m,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just set")
            }
            _ => return Err(CliError::Usage(format!("--{key}: {part} is not inside an object"))),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    Ok(())
}
