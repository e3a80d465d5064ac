//! Training loop: MSE loss, Adam with bias correction, step-decay learning
//! rate, early stopping with best-checkpoint retention.
//!
//! Seed streams drawn from `TrainConfig::seed` via `derive_seed`:
//! stream 1 = weight init, stream 2 = epoch shuffling (one child per
//! epoch), stream 3 = dropout masks.

use crate::dataset::{fmt_f64, SegmentSet};
use crate::model::{
    model_backward, model_forward, model_predict, init_params, ForwardMode, ModelConfig,
    ModelError, ModelParams,
};
use crate::numerics::{derive_seed, Rng, Vec3};
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

const SEED_STREAM_INIT: u64 = 1;
const SEED_STREAM_SHUFFLE: u64 = 2;
const SEED_STREAM_DROPOUT: u64 = 3;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
    #[error("segment set does not match model config: {0}")]
    ConfigMismatch(String),
    #[error("non-finite gradient at epoch {epoch}")]
    NonFiniteGradient { epoch: usize },
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Optimization hyperparameters. Defaults: lr 0.001, dropout 0.5, up to
/// 1000 epochs, patience 100, lr decays by 0.1 every 50 epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub sched_step: usize,
    pub sched_gamma: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Optional early exit once validation loss reaches a target; useful
    /// for budgeted runs. `None` disables it.
    pub target_val_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.001,
            dropout: 0.5,
            max_epochs: 1000,
            patience: 100,
            sched_step: 50,
            sched_gamma: 0.1,
            batch_size: 256,
            seed: 42,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            target_val_loss: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr0 > 0.0) {
            return Err(TrainError::InvalidConfig(format!("lr0 = {}", self.lr0)));
        }
        if !(self.sched_gamma > 0.0 && self.sched_gamma <= 1.0) {
            return Err(TrainError::InvalidConfig(format!(
                "sched_gamma = {}",
                self.sched_gamma
            )));
        }
        if self.patience < 1 || self.sched_step < 1 || self.batch_size < 1 || self.max_epochs < 1 {
            return Err(TrainError::InvalidConfig(
                "patience, sched_step, batch_size, max_epochs must be >= 1".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TrainError::InvalidConfig(format!(
                "dropout = {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Mean squared error over all scalars plus its gradient w.r.t. the
/// prediction: loss = mean((y - yhat)^2), d_pred = 2 (yhat - y) / n.
pub fn mse_loss(pred: &[Vec3], target: &[Vec3]) -> Result<(f64, Vec<Vec3>), TrainError> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(TrainError::DimensionMismatch(format!(
            "pred has {} rows, target {}",
            pred.len(),
            target.len()
        )));
    }
    let n = (pred.len() * 3) as f64;
    let mut loss = 0.0;
    let mut d_pred = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(target) {
        let mut d = [0.0; 3];
        for k in 0..3 {
            let e = p[k] - t[k];
            loss += e * e;
            d[k] = 2.0 * e / n;
        }
        d_pred.push(d);
    }
    Ok((loss / n, d_pred))
}

/// First/second moment accumulators mirroring the parameter layout.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: ModelParams,
    v: ModelParams,
    step: u64,
}

impl AdamState {
    pub fn new(config: &ModelConfig) -> Self {
        AdamState {
            m: ModelParams::zeros(config),
            v: ModelParams::zeros(config),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction:
/// m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2;
/// theta <- theta - lr * mhat / (sqrt(vhat) + eps).
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    lr: f64,
    config: &TrainConfig,
) -> Result<(), TrainError> {
    if !grads.is_finite() {
        return Err(TrainError::NonFiniteGradient { epoch: 0 });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    let mut p_slices = params.param_slices_mut();
    let g_slices = grads.param_slices();
    let mut m_slices = state.m.param_slices_mut();
    let mut v_slices = state.v.param_slices_mut();
    for (((p, g), m), v) in p_slices
        .iter_mut()
        .zip(&g_slices)
        .zip(m_slices.iter_mut())
        .zip(v_slices.iter_mut())
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p[i] -= lr * mhat / (vhat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}

/// Step-decay schedule: lr0 * gamma^floor(epoch / step).
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    config.lr0 * config.sched_gamma.powi((epoch / config.sched_step) as i32)
}

/// Tracks the best validation loss; `observe` returns false once the loss
/// has failed to improve (strictly) for `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best_epoch: usize,
    best_loss: f64,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best_epoch: 0,
            best_loss: f64::INFINITY,
            stale: 0,
        }
    }

    /// Returns (improved, keep_going).
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> (bool, bool) {
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.best_epoch = epoch;
            self.stale = 0;
            (true, true)
        } else {
            self.stale += 1;
            (false, self.stale < self.patience)
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    EarlyStopped,
    TargetReached,
    NonFiniteLoss,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StopReason::MaxEpochs => write!(f, "max_epochs"),
            StopReason::EarlyStopped => write!(f, "early_stopped"),
            StopReason::TargetReached => write!(f, "target_reached"),
            StopReason::NonFiniteLoss => write!(f, "non_finite_loss"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub is_best: bool,
}

/// Per-epoch losses plus where training stopped and which epoch won.
///
/// `best_epoch` is the epoch whose parameters were returned (lowest
/// validation loss); `stop_epoch` is the last epoch that ran. Both are
/// recorded because reports need to label them separately.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_epoch: usize,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    /// CSV: epoch, train_loss, val_loss, lr, is_best; footer comment lines
    /// carry the stop reason and epoch labels.
    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        let io_err = |e| TrainError::Io {
            path: path.display().to_string(),
            source: e,
        };
        let file = std::fs::File::create(path).map_err(io_err)?;
        let mut w = BufWriter::new(file);
        writeln!(w, "epoch,train_loss,val_loss,lr,is_best").map_err(io_err)?;
        for r in &self.epochs {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.epoch,
                fmt_f64(r.train_loss),
                fmt_f64(r.val_loss),
                fmt_f64(r.lr),
                r.is_best as u8
            )
            .map_err(io_err)?;
        }
        writeln!(w, "# stop_reason = {}", self.stop_reason).map_err(io_err)?;
        writeln!(w, "# best_epoch = {}", self.best_epoch).map_err(io_err)?;
        writeln!(w, "# stop_epoch = {}", self.stop_epoch).map_err(io_err)?;
        w.flush().map_err(io_err)
    }
}

fn check_set(
    set: &SegmentSet,
    mconfig: &ModelConfig,
    name: &'static str,
) -> Result<(), TrainError> {
    if set.is_empty() {
        return Err(TrainError::EmptyDataset(name));
    }
    if set.in_len != mconfig.in_len || set.out_len != mconfig.out_len {
        return Err(TrainError::ConfigMismatch(format!(
            "{name}: windows {}x{} vs config {}x{}",
            set.in_len, set.out_len, mconfig.in_len, mconfig.out_len
        )));
    }
    Ok(())
}

fn mean_eval_loss(
    set: &SegmentSet,
    params: &ModelParams,
    mconfig: &ModelConfig,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for pair in &set.pairs {
        let pred = model_predict(&pair.input, params, mconfig)?;
        let (loss, _) = mse_loss(&pred, &pair.target)?;
        total += loss;
    }
    Ok(total / set.len() as f64)
}

/// Runs the full loop and returns the best-validation parameters with the
/// history. Single-threaded and bitwise reproducible for fixed inputs,
/// configs, and seed. Dropout comes from `mconfig.dropout_rate`, which is
/// overridden by `tconfig.dropout` for the training passes; validation
/// always runs in eval mode.
pub fn train_loop(
    train: &SegmentSet,
    val: &SegmentSet,
    mconfig: &ModelConfig,
    tconfig: &TrainConfig,
) -> Result<(ModelParams, TrainHistory), TrainError> {
    tconfig.validate()?;
    let mconfig = ModelConfig {
        dropout_rate: tconfig.dropout,
        ..*mconfig
    };
    mconfig.validate()?;
    check_set(train, &mconfig, "train")?;
    check_set(val, &mconfig, "val")?;

    let mut params = init_params(&mconfig, derive_seed(tconfig.seed, SEED_STREAM_INIT))?;
    let mut adam = AdamState::new(&mconfig);
    let mut dropout_rng = Rng::new(derive_seed(tconfig.seed, SEED_STREAM_DROPOUT));
    let shuffle_master = derive_seed(tconfig.seed, SEED_STREAM_SHUFFLE);

    let mut stopper = EarlyStopping::new(tconfig.patience);
    let mut best_params = params.clone();
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stop_epoch: 0,
        stop_reason: StopReason::MaxEpochs,
    };

    let mut order: Vec<usize> = (0..train.len()).collect();
    'epochs: for epoch in 0..tconfig.max_epochs {
        let lr = lr_at(epoch, tconfig);
        let mut shuffle_rng = Rng::new(derive_seed(shuffle_master, epoch as u64));
        shuffle_rng.shuffle(&mut order);

        let mut epoch_loss_sum = 0.0;
        for batch in order.chunks(tconfig.batch_size) {
            let mut grads = ModelParams::zeros(&mconfig);
            let mut batch_loss_sum = 0.0;
            for &idx in batch {
                let pair = &train.pairs[idx];
                let (pred, tape) = model_forward(
                    &pair.input,
                    &params,
                    &mconfig,
                    ForwardMode::Train(&mut dropout_rng),
                )?;
                let (loss, d_pred) = mse_loss(&pred, &pair.target)?;
                batch_loss_sum += loss;
                let sample_grads = model_backward(&params, &mconfig, &tape, &d_pred)?;
                let mut acc = grads.param_slices_mut();
                for (a, g) in acc.iter_mut().zip(sample_grads.param_slices()) {
                    for (x, y) in a.iter_mut().zip(g.iter()) {
                        *x += y;
                    }
                }
            }
            // Average over the batch to match the loss mean.
            let scale = 1.0 / batch.len() as f64;
            for slice in grads.param_slices_mut() {
                for g in slice {
                    *g *= scale;
                }
            }
            epoch_loss_sum += batch_loss_sum;
            if !batch_loss_sum.is_finite() {
                history.stop_reason = StopReason::NonFiniteLoss;
                history.stop_epoch = epoch;
                break 'epochs;
            }
            adam_step(&mut params, &grads, &mut adam, lr, tconfig)
                .map_err(|_| TrainError::NonFiniteGradient { epoch })?;
        }
        let train_loss = epoch_loss_sum / train.len() as f64;
        let val_loss = mean_eval_loss(val, &params, &mconfig)?;
        if !val_loss.is_finite() {
            history.stop_reason = StopReason::NonFiniteLoss;
            history.stop_epoch = epoch;
            break;
        }

        let (improved, keep_going) = stopper.observe(epoch, val_loss);
        if improved {
            best_params = params.clone();
            history.best_epoch = epoch;
            history.best_val_loss = val_loss;
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            is_best: improved,
        });
        history.stop_epoch = epoch;

        if let Some(target) = tconfig.target_val_loss {
            if val_loss <= target {
                history.stop_reason = StopReason::TargetReached;
                break;
            }
        }
        if !keep_going {
            history.stop_reason = StopReason::EarlyStopped;
            break;
        }
    }

    Ok((best_params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Channel, SegmentPair};

    #[test]
    fn mse_loss_hand_cases() {
        let zero = vec![[0.0; 3]; 10];
        let one = vec![[1.0; 3]; 10];
        let (loss, d) = mse_loss(&zero, &zero).unwrap();
        assert_eq!(loss, 0.0);
        assert!(d.iter().all(|row| *row == [0.0; 3]));

        let (loss, _) = mse_loss(&one, &zero).unwrap();
        assert!((loss - 1.0).abs() <= 1e-15);

        // y = (1,2,3), yhat = (2,2,2): (1 + 0 + 1)/3 = 2/3.
        let (loss, d) = mse_loss(&[[2.0, 2.0, 2.0]], &[[1.0, 2.0, 3.0]]).unwrap();
        assert!((loss - 2.0 / 3.0).abs() <= 1e-15);
        // d = 2 (yhat - y) / 3.
        assert!((d[0][0] - 2.0 / 3.0).abs() <= 1e-15);
        assert_eq!(d[0][1], 0.0);
        assert!((d[0][2] + 2.0 / 3.0).abs() <= 1e-15);
    }

    #[test]
    fn mse_loss_rejects_shape_mismatch() {
        assert!(matches!(
            mse_loss(&[[0.0; 3]; 2], &[[0.0; 3]; 3]),
            Err(TrainError::DimensionMismatch(_))
        ));
    }

    fn tiny_mconfig() -> ModelConfig {
        ModelConfig {
            hidden_dim: 4,
            num_layers: 1,
            dropout_rate: 0.0,
            in_len: 4,
            out_len: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mconfig = tiny_mconfig();
        let tconfig = TrainConfig::default();
        let mut params = init_params(&mconfig, 1).unwrap();
        let before = params.clone();
        let grads = ModelParams::zeros(&mconfig);
        let mut state = AdamState::new(&mconfig);
        adam_step(&mut params, &grads, &mut state, 0.001, &tconfig).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_first_step_matches_closed_form() {
        // Scalar g = 0.5, lr = 1e-3: mhat = g, vhat = g^2, so the step is
        // -lr * g / (|g| + eps) ~ -lr.
        let mconfig = tiny_mconfig();
        let tconfig = TrainConfig::default();
        let mut params = ModelParams::zeros(&mconfig);
        let mut grads = ModelParams::zeros(&mconfig);
        grads.head_bias[0] = 0.5;
        let mut state = AdamState::new(&mconfig);
        adam_step(&mut params, &grads, &mut state, 0.001, &tconfig).unwrap();
        let expect = -0.001 * 0.5 / (0.5 + 1e-8);
        assert!((params.head_bias[0] - expect).abs() <= 1e-12);
        // Untouched entries stay zero.
        assert_eq!(params.head_bias[1], 0.0);
    }

    #[test]
    fn adam_two_steps_match_recurrence() {
        // Unrolled by hand for two identical gradients g = 0.5.
        let mconfig = tiny_mconfig();
        let tconfig = TrainConfig::default();
        let mut params = ModelParams::zeros(&mconfig);
        let mut grads = ModelParams::zeros(&mconfig);
        grads.head_bias[0] = 0.5;
        let mut state = AdamState::new(&mconfig);
        adam_step(&mut params, &grads, &mut state, 0.001, &tconfig).unwrap();
        adam_step(&mut params, &grads, &mut state, 0.001, &tconfig).unwrap();
        assert_eq!(state.step_count(), 2);

        let (b1, b2, eps, lr, g) = (0.9, 0.999, 1e-8, 0.001, 0.5_f64);
        let mut m = 0.0;
        let mut v = 0.0;
        let mut theta: f64 = 0.0;
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - b1.powi(t));
            let vhat = v / (1.0 - b2.powi(t));
            theta -= lr * mhat / (vhat.sqrt() + eps);
        }
        assert!((params.head_bias[0] - theta).abs() <= 1e-15);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mconfig = tiny_mconfig();
        let tconfig = TrainConfig::default();
        let mut params = ModelParams::zeros(&mconfig);
        let mut grads = ModelParams::zeros(&mconfig);
        grads.head_bias[0] = f64::NAN;
        let mut state = AdamState::new(&mconfig);
        assert!(matches!(
            adam_step(&mut params, &grads, &mut state, 0.001, &tconfig),
            Err(TrainError::NonFiniteGradient { .. })
        ));
    }

    #[test]
    fn adam_descends_on_quadratic_bowls() {
        // One step on loss (theta - c)^2 from theta = 0 must not increase
        // the loss for lr <= 1e-3.
        let mconfig = tiny_mconfig();
        let tconfig = TrainConfig::default();
        let mut rng = Rng::new(99);
        for _ in 0..100 {
            let c = rng.uniform(-5.0, 5.0).unwrap();
            if c == 0.0 {
                continue;
            }
            let mut params = ModelParams::zeros(&mconfig);
            let mut grads = ModelParams::zeros(&mconfig);
            grads.head_bias[0] = 2.0 * (0.0 - c);
            let mut state = AdamState::new(&mconfig);
            adam_step(&mut params, &grads, &mut state, 0.001, &tconfig).unwrap();
            let before = c * c;
            let after = (params.head_bias[0] - c) * (params.head_bias[0] - c);
            assert!(after < before);
        }
    }

    #[test]
    fn lr_schedule_values() {
        let config = TrainConfig::default();
        assert_eq!(lr_at(0, &config), 0.001);
        assert_eq!(lr_at(49, &config), 0.001);
        assert!((lr_at(50, &config) - 0.0001).abs() <= 1e-19);
        assert!((lr_at(100, &config) - 0.00001).abs() <= 1e-19);
    }

    #[test]
    fn early_stopping_constant_loss() {
        // First epoch is best; 100 non-improving epochs follow, stopping
        // at epoch 100 with 101 epochs observed.
        let mut stopper = EarlyStopping::new(100);
        let mut stopped_at = None;
        for epoch in 0..1000 {
            let (_, keep_going) = stopper.observe(epoch, 1.0);
            if !keep_going {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped_at, Some(100));
        assert_eq!(stopper.best_epoch(), 0);
    }

    #[test]
    fn early_stopping_decreasing_never_trips() {
        let mut stopper = EarlyStopping::new(100);
        for epoch in 0..1000 {
            let (improved, keep_going) = stopper.observe(epoch, 1.0 / (epoch + 1) as f64);
            assert!(improved && keep_going);
        }
        assert_eq!(stopper.best_epoch(), 999);
    }

    fn singleton_sets(mconfig: &ModelConfig) -> (SegmentSet, SegmentSet) {
        let mut rng = Rng::new(7);
        let mk_row = |rng: &mut Rng| -> Vec3 {
            [
                rng.uniform(-0.5, 0.5).unwrap(),
                rng.uniform(-0.5, 0.5).unwrap(),
                rng.uniform(-0.5, 0.5).unwrap(),
            ]
        };
        let pair = SegmentPair {
            input: (0..mconfig.in_len).map(|_| mk_row(&mut rng)).collect(),
            target: (0..mconfig.out_len).map(|_| mk_row(&mut rng)).collect(),
            channel: Channel::Velocity,
            source_id: 0,
            start: 0,
        };
        let mut train = SegmentSet::new(0.1, Channel::Velocity, mconfig.in_len, mconfig.out_len);
        train.pairs.push(pair.clone());
        let mut val = SegmentSet::new(0.1, Channel::Velocity, mconfig.in_len, mconfig.out_len);
        val.pairs.push(pair);
        (train, val)
    }

    #[test]
    fn memorizes_single_pair() {
        // One training pair, hidden 16: a couple thousand steps drive the
        // training loss below 1e-6.
        let mconfig = ModelConfig {
            hidden_dim: 16,
            num_layers: 1,
            dropout_rate: 0.0,
            in_len: 20,
            out_len: 10,
            ..ModelConfig::default()
        };
        let tconfig = TrainConfig {
            dropout: 0.0,
            max_epochs: 12_000,
            patience: 20_000,
            sched_step: 20_000, // hold the lr at 1e-3 throughout
            sched_gamma: 1.0,
            batch_size: 1,
            seed: 3,
            target_val_loss: Some(1e-7),
            ..TrainConfig::default()
        };
        let (train, val) = singleton_sets(&mconfig);
        let (best, history) = train_loop(&train, &val, &mconfig, &tconfig).unwrap();
        assert!(
            history.best_val_loss < 1e-6,
            "best val loss {}",
            history.best_val_loss
        );
        assert_eq!(history.stop_reason, StopReason::TargetReached);
        let final_loss = mean_eval_loss(&val, &best, &mconfig).unwrap();
        assert!(final_loss < 1e-6);
    }

    #[test]
    fn best_checkpoint_property_and_reproducibility() {
        let mconfig = ModelConfig {
            hidden_dim: 6,
            num_layers: 2,
            dropout_rate: 0.2,
            in_len: 6,
            out_len: 3,
            ..ModelConfig::default()
        };
        let tconfig = TrainConfig {
            dropout: 0.2,
            max_epochs: 30,
            patience: 100,
            batch_size: 4,
            seed: 11,
            ..TrainConfig::default()
        };
        let mut rng = Rng::new(13);
        let mk_row = |rng: &mut Rng| -> Vec3 {
            [
                rng.uniform(-0.5, 0.5).unwrap(),
                rng.uniform(-0.5, 0.5).unwrap(),
                rng.uniform(-0.5, 0.5).unwrap(),
            ]
        };
        let mut train = SegmentSet::new(0.1, Channel::Velocity, 6, 3);
        let mut val = SegmentSet::new(0.1, Channel::Velocity, 6, 3);
        for id in 0..12u64 {
            let pair = SegmentPair {
                input: (0..6).map(|_| mk_row(&mut rng)).collect(),
                target: (0..3).map(|_| mk_row(&mut rng)).collect(),
                channel: Channel::Velocity,
                source_id: id,
                start: 0,
            };
            if id < 9 {
                train.pairs.push(pair);
            } else {
                val.pairs.push(pair);
            }
        }

        let (best, history) = train_loop(&train, &val, &mconfig, &tconfig).unwrap();
        assert_eq!(history.stop_reason, StopReason::MaxEpochs);
        assert_eq!(history.epochs.len(), tconfig.max_epochs);
        assert_eq!(history.stop_epoch, tconfig.max_epochs - 1);
        // Returned params evaluate to the recorded minimum.
        let min_val = history
            .epochs
            .iter()
            .map(|r| r.val_loss)
            .fold(f64::INFINITY, f64::min);
        let eval_mconfig = ModelConfig {
            dropout_rate: tconfig.dropout,
            ..mconfig
        };
        let best_loss = mean_eval_loss(&val, &best, &eval_mconfig).unwrap();
        assert!((best_loss - min_val).abs() <= 1e-12);
        assert!((history.best_val_loss - min_val).abs() <= 1e-12);

        // Bitwise reproducibility.
        let (best2, history2) = train_loop(&train, &val, &mconfig, &tconfig).unwrap();
        assert_eq!(best, best2);
        assert_eq!(history, history2);
    }

    #[test]
    fn train_loop_rejects_empty_and_mismatched_sets() {
        let mconfig = tiny_mconfig();
        let tconfig = TrainConfig::default();
        let empty = SegmentSet::new(0.1, Channel::Velocity, 4, 2);
        let (train, val) = singleton_sets(&mconfig);
        assert!(matches!(
            train_loop(&empty, &val, &mconfig, &tconfig),
            Err(TrainError::EmptyDataset("train"))
        ));
        let bad_windows = SegmentSet::new(0.1, Channel::Velocity, 9, 9);
        let mut bad = bad_windows.clone();
        bad.pairs.push(train.pairs[0].clone());
        assert!(matches!(
            train_loop(&bad, &val, &mconfig, &tconfig),
            Err(TrainError::ConfigMismatch(_))
        ));
    }

    #[test]
    fn history_csv_round_trip_shape() {
        let history = TrainHistory {
            epochs: vec![
                EpochRecord {
                    epoch: 0,
                    train_loss: 0.5,
                    val_loss: 0.4,
                    lr: 0.001,
                    is_best: true,
                },
                EpochRecord {
                    epoch: 1,
                    train_loss: 0.3,
                    val_loss: 0.45,
                    lr: 0.001,
                    is_best: false,
                },
            ],
            best_epoch: 0,
            best_val_loss: 0.4,
            stop_epoch: 1,
            stop_reason: StopReason::EarlyStopped,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        history.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,train_loss,val_loss,lr,is_best");
        assert_eq!(lines.len(), 1 + 2 + 3);
        assert!(lines[3].contains("stop_reason = early_stopped"));
        assert!(text.contains("best_epoch = 0"));
    }
}
