//! Config-file driven runs: training with a run manifest, checkpoint evaluation.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_io::dataset::{self, CacheMeta, DatasetKind};
use crate::event_io::SliceSequence;
use crate::network::checkpoint::{load_checkpoint, save_checkpoint};
use crate::network::{CellOptions, LossKind, ModelKind, Network, NetworkConfig, Structure, Variant};
use crate::tensor::Real;
use crate::training::{self, Metrics, RunLog, Split, TrainConfig};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const SUMMARY_FILE: &str = "summary.toml";
pub const LOG_FILE: &str = "log.csv";
pub const CHECKPOINT_FILE: &str = "model.nvck";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Prepared cache directory; relative paths resolve against the config file.
    pub cache: PathBuf,
    #[serde(default)]
    pub train_limit: Option<usize>,
    #[serde(default)]
    pub test_limit: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    /// Layer chain; defaults to the dataset's MLP.
    #[serde(default)]
    pub structure: Option<Structure>,
    /// Defaults to `snn_rate_mse` for SNNs and `rate_inspired` otherwise.
    #[serde(default)]
    pub loss: Option<LossKind>,
    #[serde(default)]
    pub precision: Precision,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub cell: CellOptions,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    /// Read a config file, resolving a relative cache path against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).at(path))?;
        let mut c = Self::from_toml(&text).map_err(|e| e.at(path))?;
        if c.data.cache.is_relative() {
            if let Some(dir) = path.parent() {
                c.data.cache = dir.join(&c.data.cache);
            }
        }
        Ok(c)
    }

    pub fn network_config(&self, meta: &CacheMeta) -> Result<NetworkConfig> {
        let mut n = match meta.dataset {
            DatasetKind::Nmnist => NetworkConfig::nmnist_mlp(self.model.kind),
            DatasetKind::Gesture => NetworkConfig::gesture_mlp(self.model.kind),
        };
        if let Some(s) = &self.model.structure {
            n.structure = s.clone();
        }
        if let Some(l) = self.model.loss {
            n.loss = l;
        }
        n.cell = self.cell.clone();
        n.input_height = meta.height;
        n.input_width = meta.width;
        n.steps = meta.steps;
        n.dt_us = meta.dt_us;
        n.validate()?;
        Ok(n)
    }
}

/// Seed of the subset drawn from `split`, derived from the root seed.
pub fn subset_seed(root: u64, split: Split) -> u64 {
    match split {
        Split::Train => root ^ 0x7261_696e,
        Split::Test => root ^ 0x7465_7374,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub load_seconds: f64,
}

/// Written once before the first epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    pub seed: u64,
    pub dataset: DatasetKind,
    pub dataset_checksum: String,
    pub train_samples: usize,
    pub test_samples: usize,
    pub created_unix: u64,
    pub timings: Timings,
    pub config: ExperimentConfig,
    pub network: NetworkConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub epochs: usize,
    pub best_test_epoch: Option<usize>,
    pub best_test_accuracy: Option<f64>,
    pub final_test_accuracy: Option<f64>,
    pub final_train_accuracy: Option<f64>,
    pub train_seconds: f64,
}

fn to_toml<S: Serialize>(v: &S) -> Result<String> {
    toml::to_string(v).map_err(|e| Error::config(e.to_string()))
}

/// Train per `cfg`, writing manifest, CSV log, checkpoint and summary into `out_dir`.
/// `on_record` sees every epoch record.
pub fn run_training(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    mut on_record: impl FnMut(&training::EpochRecord),
) -> Result<RunSummary> {
    cfg.train.validate()?;
    let meta = dataset::read_meta(&cfg.data.cache)?;
    let net_cfg = cfg.network_config(&meta)?;
    let start = Instant::now();
    let seed = cfg.train.seed;
    let train_set =
        dataset::load_split(&cfg.data.cache, Split::Train, cfg.data.train_limit, subset_seed(seed, Split::Train))?;
    let test_set =
        dataset::load_split(&cfg.data.cache, Split::Test, cfg.data.test_limit, subset_seed(seed, Split::Test))?;
    let manifest = RunManifest {
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        dataset: meta.dataset,
        dataset_checksum: dataset::cache_checksum(&cfg.data.cache)?,
        train_samples: train_set.len(),
        test_samples: test_set.len(),
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        timings: Timings { load_seconds: start.elapsed().as_secs_f64() },
        config: cfg.clone(),
        network: net_cfg.clone(),
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::from(e).at(out_dir))?;
    fs::write(out_dir.join(MANIFEST_FILE), to_toml(&manifest)?)?;
    match cfg.model.precision {
        Precision::F32 => train_with::<f32>(net_cfg, cfg, &train_set, &test_set, out_dir, &mut on_record),
        Precision::F64 => train_with::<f64>(net_cfg, cfg, &train_set, &test_set, out_dir, &mut on_record),
    }
}

fn train_with<T: Real>(
    net_cfg: NetworkConfig,
    cfg: &ExperimentConfig,
    train_set: &[SliceSequence],
    test_set: &[SliceSequence],
    out_dir: &Path,
    on_record: &mut impl FnMut(&training::EpochRecord),
) -> Result<RunSummary> {
    let mut net = Network::<T>::build(net_cfg, cfg.train.seed)?;
    let mut log = RunLog::new(File::create(out_dir.join(LOG_FILE))?)?;
    let start = Instant::now();
    let outcome = training::train(&mut net, train_set, test_set, &cfg.train, |r| {
        on_record(r);
        log.append(r)
    })?;
    save_checkpoint(&net, BufWriter::new(File::create(out_dir.join(CHECKPOINT_FILE))?))?;
    let summary = RunSummary {
        epochs: cfg.train.max_epoch,
        best_test_epoch: outcome.best_test.map(|b| b.0),
        best_test_accuracy: outcome.best_test.map(|b| b.1),
        final_test_accuracy: outcome.final_test,
        final_train_accuracy: outcome.final_train,
        train_seconds: start.elapsed().as_secs_f64(),
    };
    fs::write(out_dir.join(SUMMARY_FILE), to_toml(&summary)?)?;
    Ok(summary)
}

#[derive(Clone, Debug)]
pub struct EvalRequest {
    pub checkpoint: PathBuf,
    pub cache: PathBuf,
    pub split: Split,
    pub limit: Option<usize>,
    /// Root seed the subset is derived from.
    pub seed: u64,
    /// Steps to evaluate; defaults to the cache's.
    pub steps: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub metrics: Metrics,
    pub samples: usize,
    pub steps: usize,
    pub dt_us: u32,
    pub trained_steps: usize,
    pub trained_dt_us: u32,
}

impl EvalReport {
    /// `T * dt` of the evaluation, microseconds.
    pub fn window_us(&self) -> u64 {
        self.steps as u64 * u64::from(self.dt_us)
    }

    pub fn trained_window_us(&self) -> u64 {
        self.trained_steps as u64 * u64::from(self.trained_dt_us)
    }

    pub fn window_mismatch(&self) -> bool {
        self.window_us() != self.trained_window_us()
    }
}

pub fn load_network(path: &Path) -> Result<Network<f64>> {
    let f = File::open(path).map_err(|e| Error::from(e).at(path))?;
    load_checkpoint(std::io::BufReader::new(f)).map_err(|e| e.at(path))
}

/// Evaluate a checkpoint on a prepared cache. Adaptive-leak models take the cache's
/// resolution.
pub fn evaluate_checkpoint(req: &EvalRequest) -> Result<EvalReport> {
    let mut net = load_network(&req.checkpoint)?;
    let meta = dataset::read_meta(&req.cache)?;
    let c = net.config().clone();
    if (meta.height, meta.width) != (c.input_height, c.input_width) {
        return Err(Error::shape(format!(
            "cache is {}x{}, model expects {}x{}",
            meta.height, meta.width, c.input_height, c.input_width
        )));
    }
    if c.cell.variant == Variant::AdaptiveLeak {
        net.set_eval_resolution(meta.dt_us);
    }
    let samples = dataset::load_split(&req.cache, req.split, req.limit, subset_seed(req.seed, req.split))?;
    let steps = req.steps.unwrap_or(meta.steps);
    let metrics = training::evaluate(&net, &samples, steps)?;
    Ok(EvalReport {
        metrics,
        samples: samples.len(),
        steps,
        dt_us: meta.dt_us,
        trained_steps: c.steps,
        trained_dt_us: c.dt_us,
    })
}

/// Process exit status for an error: 1 for configuration/usage, 2 for data problems.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Config(_) => 1,
        _ => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let ok = "[data]\ncache = \"c\"\n[model]\nkind = \"snn\"\n";
        assert!(ExperimentConfig::from_toml(ok).is_ok());
        for bad in [
            "[data]\ncache = \"c\"\nbogus = 1\n[model]\nkind = \"snn\"\n",
            "[data]\ncache = \"c\"\n[model]\nkind = \"snn\"\n[train]\nlearning_rate = 1\n",
            "[data]\ncache = \"c\"\n[model]\nkind = \"snn\"\n[cell]\nthreshold = 1\n",
            "[data]\ncache = \"c\"\n[model]\nkind = \"snn\"\n[extra]\n",
        ] {
            assert!(ExperimentConfig::from_toml(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn every_hyperparameter_has_a_key() {
        let text = r#"
[data]
cache = "cache"
[model]
kind = "rnn"
structure = "Input-512FC-10"
loss = "last_step"
[train]
max_epoch = 100
batch_size = 50
seed = 3
lr = 1e-4
beta1 = 0.9
beta2 = 0.999
eps = 1e-8
[cell]
u_th = 0.3
leak = 0.3
a = 0.25
leakage = true
reset = true
variant = "canonical"
"#;
        let c = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(c.train.batch_size, 50);
        assert_eq!(c.model.loss, Some(LossKind::LastStep));
        let meta = CacheMeta { dataset: DatasetKind::Nmnist, dt_us: 3000, steps: 15, height: 34, width: 34, train: 0, test: 0 };
        assert_eq!(c.network_config(&meta).unwrap().steps, 15);
    }

    #[test]
    fn invalid_loss_for_snn_is_a_config_error() {
        let c = ExperimentConfig::from_toml("[data]\ncache = \"c\"\n[model]\nkind = \"snn\"\nloss = \"last_step\"\n").unwrap();
        let meta = CacheMeta { dataset: DatasetKind::Nmnist, dt_us: 3000, steps: 15, height: 34, width: 34, train: 0, test: 0 };
        let e = c.network_config(&meta).unwrap_err();
        assert_eq!(exit_code(&e), 1);
    }
}
