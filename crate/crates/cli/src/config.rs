//! Experiment configuration: a TOML file with per-field CLI overrides.
//!
//! Defaults mirror the reference experiment settings: ts = 0.1 s, 20-point
//! inputs, 10-point outputs, lr 0.001, dropout 0.5, patience 100, lr step
//! 50 with gamma 0.1, up to 1000 epochs. Every command snapshots the
//! effective config next to its outputs.
//!
//! Seed streams derived from the top-level seed: 10 = trajectory
//! generation (one child per trajectory), 11 = train/val/test split,
//! 12 = training (init/shuffle/dropout substreams), 13 = stream-sim
//! clock jitter.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use uavpred::dataset::Channel;
use uavpred::model::ModelConfig;
use uavpred::normalize::NormMethod;
use uavpred::numerics::{derive_seed, Vec3};
use uavpred::train::TrainConfig;
use uavpred::trajgen::{ParamBounds, TrajectoryKind, TrajectoryParams};

use crate::CliError;

pub const SEED_STREAM_GENERATE: u64 = 10;
pub const SEED_STREAM_SPLIT: u64 = 11;
pub const SEED_STREAM_TRAIN: u64 = 12;
pub const SEED_STREAM_SIM: u64 = 13;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetSection,
    pub bounds: BoundsSection,
    pub normalize: NormalizeSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub stream: StreamSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            out_dir: PathBuf::from("runs/default"),
            dataset: DatasetSection::default(),
            bounds: BoundsSection::default(),
            normalize: NormalizeSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            stream: StreamSection::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub n_trajectories: usize,
    pub duration: f64,
    pub ts: f64,
    /// "circle", "infinity", or "both" (drawn 50/50 per trajectory).
    pub kinds: String,
    pub in_len: usize,
    pub out_len: usize,
    pub stride: usize,
    pub train_frac: f64,
    pub val_frac: f64,
    /// "position", "velocity", or "both" for segment/fit-norm.
    pub channel: String,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            n_trajectories: 5000,
            duration: 20.0,
            ts: 0.1,
            kinds: "both".to_string(),
            in_len: 20,
            out_len: 10,
            stride: 1,
            train_frac: 0.8,
            val_frac: 0.1,
            channel: "velocity".to_string(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsSection {
    pub center_lo: Vec3,
    pub center_hi: Vec3,
    pub normal_lo: Vec3,
    pub normal_hi: Vec3,
    pub radius: [f64; 2],
    pub omega: [f64; 2],
}

impl Default for BoundsSection {
    fn default() -> Self {
        let b = ParamBounds::default();
        BoundsSection {
            center_lo: b.center_lo,
            center_hi: b.center_hi,
            normal_lo: b.normal_lo,
            normal_hi: b.normal_hi,
            radius: [b.radius_lo, b.radius_hi],
            omega: [b.omega_lo, b.omega_hi],
        }
    }
}

impl BoundsSection {
    pub fn to_bounds(&self) -> ParamBounds {
        ParamBounds {
            center_lo: self.center_lo,
            center_hi: self.center_hi,
            normal_lo: self.normal_lo,
            normal_hi: self.normal_hi,
            radius_lo: self.radius[0],
            radius_hi: self.radius[1],
            omega_lo: self.omega[0],
            omega_hi: self.omega[1],
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizeSection {
    /// "whitening" or "maxnorm".
    pub method: String,
}

impl Default for NormalizeSection {
    fn default() -> Self {
        NormalizeSection {
            method: "maxnorm".to_string(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub dropout: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden_dim: 64,
            num_layers: 2,
            dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr0: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub sched_step: usize,
    pub sched_gamma: f64,
    pub batch_size: usize,
    pub target_val_loss: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lr0: t.lr0,
            max_epochs: t.max_epochs,
            patience: t.patience,
            sched_step: t.sched_step,
            sched_gamma: t.sched_gamma,
            batch_size: t.batch_size,
            target_val_loss: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamSection {
    pub jitter: f64,
    pub window: usize,
    pub duration: f64,
    /// Simulated trajectory; defaults are the out-of-distribution
    /// figure-eight at (-100, 0, 10) in the (1,1,1) plane.
    pub kind: String,
    pub center: Vec3,
    pub normal: Vec3,
    pub radius: f64,
    pub omega: f64,
}

impl Default for StreamSection {
    fn default() -> Self {
        StreamSection {
            jitter: 0.3,
            window: 100,
            duration: 30.0,
            kind: "infinity".to_string(),
            center: [-100.0, 0.0, 10.0],
            normal: [1.0, 1.0, 1.0],
            radius: 3.0,
            omega: 0.8,
        }
    }
}

impl ExperimentConfig {
    pub fn channel(&self) -> Result<Channel, CliError> {
        self.dataset
            .channel
            .parse()
            .map_err(|e: String| CliError::data(format!("dataset.channel: {e}")))
    }

    /// Channels a multi-channel command iterates over.
    pub fn channels(&self) -> Result<Vec<Channel>, CliError> {
        match self.dataset.channel.as_str() {
            "both" => Ok(vec![Channel::Position, Channel::Velocity]),
            _ => Ok(vec![self.channel()?]),
        }
    }

    pub fn norm_method(&self) -> Result<NormMethod, CliError> {
        self.normalize
            .method
            .parse()
            .map_err(|e: String| CliError::data(format!("normalize.method: {e}")))
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_dim: 3,
            output_dim: 3,
            hidden_dim: self.model.hidden_dim,
            num_layers: self.model.num_layers,
            dropout_rate: self.model.dropout,
            in_len: self.dataset.in_len,
            out_len: self.dataset.out_len,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr0: self.train.lr0,
            dropout: self.model.dropout,
            max_epochs: self.train.max_epochs,
            patience: self.train.patience,
            sched_step: self.train.sched_step,
            sched_gamma: self.train.sched_gamma,
            batch_size: self.train.batch_size,
            seed: derive_seed(self.seed, SEED_STREAM_TRAIN),
            target_val_loss: self.train.target_val_loss,
            ..TrainConfig::default()
        }
    }

    pub fn sim_params(&self) -> Result<TrajectoryParams, CliError> {
        let kind: TrajectoryKind = self
            .stream
            .kind
            .parse()
            .map_err(|e: String| CliError::data(format!("stream.kind: {e}")))?;
        TrajectoryParams::new(
            kind,
            self.stream.center,
            self.stream.normal,
            self.stream.radius,
            self.stream.omega,
        )
        .map_err(|e| CliError::data(format!("stream trajectory: {e}")))
    }

    /// Deterministic identifier used for checkpoint and report file names.
    pub fn model_id(&self, channel: Channel, method: NormMethod) -> String {
        format!(
            "gru_h{}_l{}_{}_{}",
            self.model.hidden_dim, self.model.num_layers, channel, method
        )
    }

    pub fn trajectories_dir(&self) -> PathBuf {
        self.out_dir.join("trajectories")
    }

    pub fn segments_dir(&self, channel: Channel, split: &str) -> PathBuf {
        self.out_dir
            .join("segments")
            .join(channel.to_string())
            .join(split)
    }

    pub fn stats_path(&self, channel: Channel, method: NormMethod) -> PathBuf {
        self.out_dir
            .join("stats")
            .join(format!("{channel}_{method}.stats"))
    }

    pub fn checkpoint_path(&self, model_id: &str) -> PathBuf {
        self.out_dir.join("models").join(format!("{model_id}.ckpt"))
    }

    pub fn history_path(&self, model_id: &str) -> PathBuf {
        self.out_dir
            .join("models")
            .join(format!("{model_id}_history.csv"))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.out_dir.join("reports")
    }

    pub fn stream_dir(&self) -> PathBuf {
        self.out_dir.join("stream")
    }
}

/// Loads the config file (when given), then applies `--seed`, `--out`, and
/// repeated `--set section.key=value` overrides, then deserializes.
pub fn load_config(
    path: Option<&Path>,
    seed: Option<u64>,
    out: Option<&Path>,
    sets: &[String],
) -> Result<ExperimentConfig, CliError> {
    let mut value: toml::Value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::data(format!("cannot read config {}: {e}", p.display())))?;
            text.parse()
                .map_err(|e| CliError::data(format!("config {}: {e}", p.display())))?
        }
        None => toml::Value::Table(toml::value::Table::new()),
    };

    if let Some(seed) = seed {
        set_path(&mut value, "seed", toml::Value::Integer(seed as i64))?;
    }
    if let Some(out) = out {
        set_path(
            &mut value,
            "out_dir",
            toml::Value::String(out.display().to_string()),
        )?;
    }
    for assignment in sets {
        let (key, raw) = assignment.split_once('=').ok_or_else(|| {
            CliError::usage(format!("--set expects key=value, got '{assignment}'"))
        })?;
        set_path(&mut value, key.trim(), parse_toml_value(raw.trim()))?;
    }

    value
        .try_into()
        .map_err(|e| CliError::data(format!("invalid config: {e}")))
}

/// Parses an override value as TOML, falling back to a bare string.
fn parse_toml_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut table) => table.remove("v").expect("key v exists"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(root: &mut toml::Value, dotted: &str, new: toml::Value) -> Result<(), CliError> {
    let mut cursor = root;
    let parts: Vec<&str> = dotted.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| CliError::usage(format!("--set path '{dotted}' crosses a non-table")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), new);
            return Ok(());
        }
        cursor = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::value::Table::new()));
    }
    Err(CliError::usage(format!("--set got an empty key: '{dotted}'")))
}

/// Serializes the effective config for the run-metadata snapshot.
pub fn config_snapshot(config: &ExperimentConfig) -> String {
    toml::to_string_pretty(config).expect("config serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_settings() {
        let c = ExperimentConfig::default();
        assert_eq!(c.dataset.ts, 0.1);
        assert_eq!(c.dataset.in_len, 20);
        assert_eq!(c.dataset.out_len, 10);
        assert_eq!(c.dataset.n_trajectories, 5000);
        assert_eq!(c.train.lr0, 0.001);
        assert_eq!(c.model.dropout, 0.5);
        assert_eq!(c.train.patience, 100);
        assert_eq!(c.train.sched_step, 50);
        assert_eq!(c.train.sched_gamma, 0.1);
        assert_eq!(c.train.max_epochs, 1000);
        assert_eq!(c.stream.center, [-100.0, 0.0, 10.0]);
        assert_eq!(c.stream.radius, 3.0);
        assert_eq!(c.stream.omega, 0.8);
    }

    #[test]
    fn overrides_apply_in_order() {
        let config = load_config(
            None,
            Some(7),
            Some(Path::new("out/x")),
            &[
                "model.hidden_dim=128".to_string(),
                "dataset.channel=position".to_string(),
                "train.sched_gamma=0.5".to_string(),
                "seed=9".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(config.seed, 9); // --set wins over --seed
        assert_eq!(config.out_dir, PathBuf::from("out/x"));
        assert_eq!(config.model.hidden_dim, 128);
        assert_eq!(config.dataset.channel, "position");
        assert_eq!(config.train.sched_gamma, 0.5);
    }

    #[test]
    fn bad_overrides_are_usage_errors() {
        assert_eq!(load_config(None, None, None, &["nonsense".to_string()])
            .unwrap_err()
            .code, 1);
        // Unknown field is a data error at deserialization.
        assert_eq!(load_config(None, None, None, &["dataset.bogus=1".to_string()])
            .unwrap_err()
            .code, 2);
    }

    #[test]
    fn snapshot_round_trips() {
        let config = ExperimentConfig::default();
        let text = config_snapshot(&config);
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.seed, config.seed);
        assert_eq!(back.dataset.n_trajectories, config.dataset.n_trajectories);
    }
}
