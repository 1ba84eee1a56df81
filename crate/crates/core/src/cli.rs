//! Config-driven experiment commands behind the `cores` binary.
//!
//! A run is described by a [`RunConfig`] TOML file. Every field has a
//! default, and the fully resolved config is echoed into each output
//! directory (`config_echo.toml`) and into `run_report.json`, either of which
//! can be passed back to `--config` to replay the run.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::consistency::{run_cores_star, AugmentationSpec, ConsistencyConfig};
use crate::datagen::{write_noise_json, BlobSource, DiscreteWorld, LabeledDataset, NoiseKind, NoiseSidecar, NoiseSpec};
use crate::loss::BetaSchedule;
use crate::metrics::{write_loss_histogram, SieveReport};
use crate::model::{Architecture, OptimizerConfig};
use crate::rng;
use crate::sieve::{run_cores, BatchNormalization, CoresConfig, CoresRun, EpochMetrics};
use crate::theory::{noisy_posterior, oracle_report, OracleReport};
use crate::{Error, Result};

const TEST_STREAM: u64 = 0x7E57;
const AUGMENT_STREAM: u64 = 0xA06;

fn invalid(field: &str, message: impl Into<String>) -> Error {
    Error::InvalidConfig { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetConfig {
    Blobs(BlobsConfig),
    File(FileDataset),
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Blobs(BlobsConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobsConfig {
    pub num_samples: usize,
    pub num_classes: usize,
    pub dim: usize,
    /// Distance between adjacent class means.
    pub separation: f64,
    pub test_samples: usize,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        Self { num_samples: 5000, num_classes: 4, dim: 30, separation: 3.5, test_samples: 2000 }
    }
}

/// Dataset CSVs as written by `generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileDataset {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    pub epsilon: f64,
    pub include_true_label: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { kind: NoiseKind::Instance, epsilon: 0.4, include_true_label: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub warmup_epochs: usize,
    pub ramp_epochs: usize,
    pub beta_max: f64,
    pub sieve: bool,
    pub sieve_start: usize,
    /// Epoch whose sieve result is handed to consistency training.
    pub tau: usize,
    pub normalization: BatchNormalization,
    /// Epochs after which `loss_hist_epoch{t}.csv` is written.
    pub histogram_epochs: Vec<usize>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            warmup_epochs: 5,
            ramp_epochs: 15,
            beta_max: 2.0,
            sieve: true,
            sieve_start: 20,
            tau: 25,
            normalization: BatchNormalization::SelectedCount,
            histogram_epochs: vec![20, 25],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencySection {
    pub enabled: bool,
    pub sigma_fraction: f64,
    pub epochs: usize,
    pub kl_weight: f64,
}

impl Default for ConsistencySection {
    fn default() -> Self {
        Self { enabled: false, sigma_fraction: 0.1, epochs: 24, kl_weight: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub noise: u64,
    pub train: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { data: 0, noise: 1, train: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub noise: NoiseConfig,
    pub model: Architecture,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleConfig,
    pub consistency: ConsistencySection,
    pub seeds: Seeds,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("runs/default"),
            dataset: DatasetConfig::default(),
            noise: NoiseConfig::default(),
            model: Architecture::Mlp { hidden: 64 },
            optimizer: OptimizerConfig::default(),
            schedule: ScheduleConfig::default(),
            consistency: ConsistencySection::default(),
            seeds: Seeds::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if let DatasetConfig::Blobs(b) = &self.dataset {
            if !(2..=64).contains(&b.num_classes) {
                return Err(invalid("dataset.num_classes", format!("must lie in [2, 64], got {}", b.num_classes)));
            }
            if b.num_samples < b.num_classes {
                return Err(invalid(
                    "dataset.num_samples",
                    format!("must be at least num_classes, got {}", b.num_samples),
                ));
            }
            if b.dim == 0 {
                return Err(invalid("dataset.dim", "must be at least 1"));
            }
            if !(b.separation > 0.0 && b.separation.is_finite()) {
                return Err(invalid("dataset.separation", format!("must be positive, got {}", b.separation)));
            }
            if b.test_samples == 0 {
                return Err(invalid("dataset.test_samples", "must be at least 1"));
            }
        }
        if !(0.0..1.0).contains(&self.noise.epsilon) {
            return Err(invalid("noise.epsilon", format!("must lie in [0, 1), got {}", self.noise.epsilon)));
        }
        if let Architecture::Mlp { hidden: 0 } = self.model {
            return Err(invalid("model.hidden", "must be at least 1"));
        }
        self.optimizer.validate()?;
        let s = &self.schedule;
        if !(s.beta_max >= 0.0 && s.beta_max.is_finite()) {
            return Err(invalid("schedule.beta_max", format!("must be non-negative, got {}", s.beta_max)));
        }
        if self.consistency.enabled && s.tau >= self.optimizer.epochs {
            return Err(invalid("schedule.tau", format!("must be below optimizer.epochs = {}", self.optimizer.epochs)));
        }
        self.consistency_config().validate()
    }

    pub fn cores_config(&self) -> CoresConfig {
        let s = &self.schedule;
        CoresConfig {
            architecture: self.model,
            optimizer: self.optimizer.clone(),
            schedule: BetaSchedule { warmup_epochs: s.warmup_epochs, ramp_epochs: s.ramp_epochs, beta_max: s.beta_max },
            sieve_start: s.sieve.then_some(s.sieve_start),
            normalization: s.normalization,
            train_seed: self.seeds.train,
            histogram_epochs: s.histogram_epochs.clone(),
        }
    }

    pub fn consistency_config(&self) -> ConsistencyConfig {
        ConsistencyConfig {
            augmentation: AugmentationSpec {
                sigma_fraction: self.consistency.sigma_fraction,
                seed: rng::derive(self.seeds.train, AUGMENT_STREAM),
                ..AugmentationSpec::default()
            },
            tau: self.schedule.tau,
            epochs: self.consistency.epochs,
            kl_weight: self.consistency.kl_weight,
        }
    }

    /// Applies `key=value` overrides for `data`, `noise` or `train`.
    pub fn apply_seed_override(&mut self, spec: &str) -> Result<()> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("seed override `{spec}` is not key=value")))?;
        let value: u64 = value
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("seed override `{spec}` has a non-integer value")))?;
        match key.trim() {
            "data" => self.seeds.data = value,
            "noise" => self.seeds.noise = value,
            "train" => self.seeds.train = value,
            other => {
                return Err(Error::InvalidArgument(format!("unknown seed `{other}`; expected data, noise or train")))
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Reads a TOML config, a JSON config, or the `config_echo` of a JSON run
/// report. The result is validated.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    let cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
        let value: serde_json::Value = serde_json::from_str(&text)?;
        match value.get("config_echo") {
            Some(echo) => serde_json::from_value(echo.clone())?,
            None => serde_json::from_value(value)?,
        }
    } else {
        toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Train split, optional test split and, for generated data, the noise record.
pub struct Datasets {
    pub train: LabeledDataset,
    pub test: Option<LabeledDataset>,
    pub sidecar: Option<NoiseSidecar>,
}

pub fn build_datasets(cfg: &RunConfig) -> Result<Datasets> {
    match &cfg.dataset {
        DatasetConfig::Blobs(b) => {
            let source = BlobSource::new(b.num_classes, b.dim, b.separation)?;
            let clean = source.sample(b.num_samples, cfg.seeds.data)?;
            let test = source.sample(b.test_samples, rng::derive(cfg.seeds.data, TEST_STREAM))?;
            let spec = NoiseSpec {
                kind: cfg.noise.kind,
                epsilon: cfg.noise.epsilon,
                include_true_label: cfg.noise.include_true_label,
                instance_params: None,
            };
            let (train, realized) = spec.apply(&clean, cfg.seeds.noise)?;
            let sidecar = NoiseSidecar {
                num_samples: b.num_samples,
                num_classes: b.num_classes,
                dim: b.dim,
                data_seed: cfg.seeds.data,
                noise_seed: cfg.seeds.noise,
                noise: realized,
                feature_standardization: "z-score per dimension before the instance projection".into(),
            };
            Ok(Datasets { train, test: Some(test), sidecar: Some(sidecar) })
        }
        DatasetConfig::File(f) => {
            let train = LabeledDataset::load_csv(&f.path, f.num_classes)?;
            let test =
                f.test_path.as_ref().map(|p| LabeledDataset::load_csv(p, Some(train.num_classes()))).transpose()?;
            Ok(Datasets { train, test, sidecar: None })
        }
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.output_dir)?;
    Ok(cfg.output_dir.clone())
}

fn create(path: PathBuf) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Files written by `generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateOutput {
    pub train_csv: PathBuf,
    pub test_csv: PathBuf,
    pub noise_json: PathBuf,
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<GenerateOutput> {
    cfg.validate()?;
    if !matches!(cfg.dataset, DatasetConfig::Blobs(_)) {
        return Err(invalid("dataset.source", "generate needs a blobs dataset"));
    }
    let data = build_datasets(cfg)?;
    let dir = out_dir(cfg)?;
    let out = GenerateOutput {
        train_csv: dir.join("train.csv"),
        test_csv: dir.join("test.csv"),
        noise_json: dir.join("noise.json"),
    };
    data.train.save_csv(&out.train_csv)?;
    data.test.as_ref().expect("blobs always have a test split").save_csv(&out.test_csv)?;
    write_noise_json(data.sidecar.as_ref().expect("blobs carry a sidecar"), create(out.noise_json.clone())?)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub test_accuracy: Option<f64>,
    pub f_score: f64,
    pub precision: f64,
    pub recall: f64,
    pub num_selected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub crate_version: String,
    pub num_train: usize,
    pub num_test: usize,
    pub corruption_rate: f64,
    pub consistency: bool,
    /// Direction of the consistency term; gradients flow through the second argument only.
    pub kl_direction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_echo: RunConfig,
    pub per_epoch: Vec<EpochMetrics>,
    #[serde(rename = "final")]
    pub final_report: FinalReport,
    pub wall_time_seconds: f64,
    pub metadata: RunMetadata,
}

/// Runs CORES² (or CORES²★ when `consistency.enabled`) without touching the
/// file system.
pub fn execute(cfg: &RunConfig) -> Result<(CoresRun, Datasets)> {
    cfg.validate()?;
    let data = build_datasets(cfg)?;
    let cores = cfg.cores_config();
    let run = if cfg.consistency.enabled {
        run_cores_star(&data.train, data.test.as_ref(), &cores, &cfg.consistency_config())?
    } else {
        run_cores(&data.train, data.test.as_ref(), &cores)?
    };
    Ok((run, data))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// `epoch,beta,num_selected,precision,recall,f_score,train_loss,test_acc`,
/// plus `ce_loss,kl_loss` when any row carries them.
pub fn write_metrics_csv<W: Write>(rows: &[EpochMetrics], writer: W) -> Result<()> {
    let with_kl = rows.iter().any(|r| r.kl_loss.is_some());
    let mut out = csv::Writer::from_writer(writer);
    let mut header = vec!["epoch", "beta", "num_selected", "precision", "recall", "f_score", "train_loss", "test_acc"];
    if with_kl {
        header.extend(["ce_loss", "kl_loss"]);
    }
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.epoch.to_string(),
            r.beta.to_string(),
            r.num_selected.to_string(),
            r.precision.to_string(),
            r.recall.to_string(),
            r.f_score.to_string(),
            r.train_loss.to_string(),
            fmt_opt(r.test_acc),
        ];
        if with_kl {
            rec.extend([fmt_opt(r.ce_loss), fmt_opt(r.kl_loss)]);
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// One row per sieve-phase epoch.
pub fn write_sieve_report_csv<W: Write>(history: &[SieveReport], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["epoch", "precision", "recall", "f_score", "num_selected", "num_clean", "num_selected_clean"])?;
    for (epoch, r) in history.iter().enumerate() {
        out.write_record([
            epoch.to_string(),
            r.precision.to_string(),
            r.recall.to_string(),
            r.f_score.to_string(),
            r.num_selected.to_string(),
            r.num_clean.to_string(),
            r.num_selected_clean.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `index,v,is_clean` for the final sieve state.
pub fn write_split_csv<W: Write>(v: &[bool], data: &LabeledDataset, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["index", "v", "is_clean"])?;
    for (n, &keep) in v.iter().enumerate() {
        out.write_record([n.to_string(), u8::from(keep).to_string(), u8::from(data.is_clean(n)).to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<RunReport> {
    let start = Instant::now();
    let (run, data) = execute(cfg)?;
    let dir = out_dir(cfg)?;
    write_metrics_csv(&run.metrics, create(dir.join("metrics.csv"))?)?;
    write_sieve_report_csv(&run.state.history, create(dir.join("sieve_report.csv"))?)?;
    write_split_csv(&run.state.v, &data.train, create(dir.join("sieve_v.csv"))?)?;
    for (epoch, records) in &run.histograms {
        write_loss_histogram(records, create(dir.join(format!("loss_hist_epoch{epoch}.csv")))?)?;
    }
    let last_epoch = run.metrics.last().map_or(0, |m| m.epoch);
    let mut ckpt = create(dir.join("model.ckpt"))?;
    run.model.save_checkpoint(&mut ckpt, last_epoch)?;
    ckpt.flush()?;
    fs::write(dir.join("config_echo.toml"), cfg.to_toml()?)?;

    let last = run
        .final_report()
        .ok_or(Error::InvalidConfig { field: "optimizer.epochs".into(), message: "must be at least 1".into() })?;
    let report = RunReport {
        config_echo: cfg.clone(),
        per_epoch: run.metrics.clone(),
        final_report: FinalReport {
            test_accuracy: last.test_acc,
            f_score: last.f_score,
            precision: last.precision,
            recall: last.recall,
            num_selected: last.num_selected,
        },
        wall_time_seconds: start.elapsed().as_secs_f64(),
        metadata: RunMetadata {
            crate_version: env!("CARGO_PKG_VERSION").into(),
            num_train: data.train.len(),
            num_test: data.test.as_ref().map_or(0, LabeledDataset::len),
            corruption_rate: data.train.corruption_rate(),
            consistency: cfg.consistency.enabled,
            kl_direction: "KL(snapshot(x_aug) || model(x))".into(),
        },
    };
    let mut w = create(dir.join("run_report.json"))?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(report)
}

/// Reads a world file. Malformed content maps to [`Error::Parse`].
pub fn load_world(path: &Path) -> Result<DiscreteWorld> {
    let file = File::open(path)?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| {
        if e.is_io() {
            Error::Io(e.into())
        } else {
            Error::Parse(format!("{}: {e}", path.display()))
        }
    })
}

/// Oracle report for `world`, evaluated at the noisy posterior table unless
/// `predictions` is given.
pub fn cmd_oracle(world: &DiscreteWorld, predictions: Option<Vec<Vec<f64>>>, beta: f64) -> Result<OracleReport> {
    let f = predictions.unwrap_or_else(|| noisy_posterior(world));
    oracle_report(world, &f, beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub f_score: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedComparison {
    pub seed_offset: u64,
    pub a: ArmResult,
    pub b: ArmResult,
    pub delta_f_score: f64,
    pub delta_test_accuracy: Option<f64>,
}

/// Paired results; deltas are `B − A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub per_seed: Vec<SeedComparison>,
    pub mean_delta_f_score: f64,
    pub mean_delta_test_accuracy: Option<f64>,
}

fn arm(cfg: &RunConfig) -> Result<ArmResult> {
    let (run, _) = execute(cfg)?;
    let last = run.final_report().ok_or_else(|| invalid("optimizer.epochs", "must be at least 1"))?;
    Ok(ArmResult { f_score: last.f_score, test_accuracy: last.test_acc })
}

/// Runs both configs once per offset in `seed_offsets`, adding the offset to
/// each of the three seeds. Both configs must share data and noise seeds.
pub fn cmd_compare(a: &RunConfig, b: &RunConfig, seed_offsets: &[u64]) -> Result<Comparison> {
    if a.seeds.data != b.seeds.data || a.seeds.noise != b.seeds.noise {
        return Err(invalid("seeds", "compared configs must share data and noise seeds"));
    }
    if seed_offsets.is_empty() {
        return Err(Error::InvalidArgument("seed list is empty".into()));
    }
    let shift = |cfg: &RunConfig, k: u64| {
        let mut c = cfg.clone();
        c.seeds = Seeds {
            data: c.seeds.data.wrapping_add(k),
            noise: c.seeds.noise.wrapping_add(k),
            train: c.seeds.train.wrapping_add(k),
        };
        c
    };
    let mut per_seed = Vec::with_capacity(seed_offsets.len());
    for &k in seed_offsets {
        let ra = arm(&shift(a, k))?;
        let rb = arm(&shift(b, k))?;
        per_seed.push(SeedComparison {
            seed_offset: k,
            a: ra,
            b: rb,
            delta_f_score: rb.f_score - ra.f_score,
            delta_test_accuracy: ra.test_accuracy.zip(rb.test_accuracy).map(|(x, y)| y - x),
        });
    }
    let n = per_seed.len() as f64;
    let mean_delta_f_score = per_seed.iter().map(|s| s.delta_f_score).sum::<f64>() / n;
    let mean_delta_test_accuracy =
        per_seed.iter().map(|s| s.delta_test_accuracy).sum::<Option<f64>>().map(|total| total / n);
    Ok(Comparison { per_seed, mean_delta_f_score, mean_delta_test_accuracy })
}
