//! Streaming real-time prediction: buffer timestamped positions, resample
//! onto the training grid, run inference, and report rolling RMSE against
//! the actual trajectory.
//!
//! Position-mode predictors normalize a 20-point position window directly.
//! Velocity-mode predictors resample 21 positions (one extra sample, 2.1 s
//! of buffer at the default grid) so that forward differencing yields
//! exactly 20 velocities without padding, then integrate the predicted
//! velocities forward from the newest raw buffered position:
//! `p_k = p_last + ts * sum_{j<=k} v_j`.
//!
//! Differencing removes the absolute position and integration re-anchors
//! at the buffer, which makes velocity-mode predictions translation
//! equivariant: shifting the whole input stream by a constant offset
//! shifts the predictions by exactly that offset. Position-mode models
//! carry no such identity — that contrast is the point of the
//! out-of-distribution experiments.

use crate::dataset::{fmt_f64, interp_at, Channel, SampledTrajectory};
use crate::model::{model_predict, Checkpoint, ModelError, NormStatsRef};
use crate::normalize::{apply, invert, NormError, NormStats};
use crate::numerics::{add3, derive_seed, scale3, sub3, Rng, Vec3};
use crate::trajgen::{generate_trajectory, TrajectoryParams, TrajError};
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

/// Buffer capacity in samples. Covers the 2.1 s velocity-mode horizon with
/// a wide margin down to 10 ms sample gaps.
pub const DEFAULT_BUFFER_CAPACITY: usize = 256;

/// Rolling-average window in complete records.
pub const DEFAULT_ROLLING_WINDOW: usize = 100;

/// Default per-sample clock jitter: gap = ts * (1 + u), u in [-0.3, 0.3].
pub const DEFAULT_JITTER: f64 = 0.3;

const SEED_STREAM_JITTER: u64 = 4;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("non-monotonic time: sample at {got} after {prev}")]
    NonMonotonicTime { prev: f64, got: f64 },
    #[error("buffer not ready: span {span:.3}s < required {required:.3}s")]
    NotReady { span: f64, required: f64 },
    #[error("channel mismatch: {mode:?} mode but checkpoint was trained on {checkpoint} data")]
    ChannelMismatch { mode: ChannelMode, checkpoint: Channel },
    #[error("stats file does not match the checkpoint's stats fingerprint")]
    StatsMismatch,
    #[error("no complete records to report")]
    NoCompleteRecords,
    #[error("source too short: {got:.3}s, need at least {need:.3}s")]
    SourceTooShort { got: f64, need: f64 },
    #[error("invalid stream setup: {0}")]
    InvalidSetup(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error(transparent)]
    Traj(#[from] TrajError),
}

/// Whether the loaded model consumes position or velocity windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelMode {
    PositionModel,
    VelocityModel,
}

impl ChannelMode {
    fn channel(self) -> Channel {
        match self {
            ChannelMode::PositionModel => Channel::Position,
            ChannelMode::VelocityModel => Channel::Velocity,
        }
    }
}

/// One timestamped position sample from the stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamSample {
    pub t: f64,
    pub p: Vec3,
}

/// One issued prediction: 10 future positions at issued_at + k*ts, the
/// actual positions matched against them later, and the per-record RMSE
/// (root mean squared Euclidean distance) once all actuals are known.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub issued_at: f64,
    pub times: Vec<f64>,
    pub predicted: Vec<Vec3>,
    pub actuals: Vec<Option<Vec3>>,
    pub rmse: Option<f64>,
}

impl PredictionRecord {
    pub fn is_complete(&self) -> bool {
        self.rmse.is_some()
    }
}

/// Streaming predictor: ring buffer plus loaded model and normalization.
#[derive(Debug, Clone)]
pub struct Predictor {
    checkpoint: Checkpoint,
    stats: NormStats,
    mode: ChannelMode,
    ts: f64,
    capacity: usize,
    times: Vec<f64>,
    points: Vec<Vec3>,
}

impl Predictor {
    /// Pairs a checkpoint with the normalization stats it was trained
    /// under. The stats must match the checkpoint's fingerprint and the
    /// mode must match the trained channel.
    pub fn new(
        checkpoint: Checkpoint,
        stats: NormStats,
        mode: ChannelMode,
        ts: f64,
    ) -> Result<Self, StreamError> {
        if checkpoint.stats_ref.channel != mode.channel() {
            return Err(StreamError::ChannelMismatch {
                mode,
                checkpoint: checkpoint.stats_ref.channel,
            });
        }
        if !checkpoint.stats_ref.matches(&stats) {
            return Err(StreamError::StatsMismatch);
        }
        if !(ts > 0.0) {
            return Err(StreamError::InvalidSetup(format!("ts = {ts}")));
        }
        Ok(Predictor {
            checkpoint,
            stats,
            mode,
            ts,
            capacity: DEFAULT_BUFFER_CAPACITY,
            times: Vec::new(),
            points: Vec::new(),
        })
    }

    pub fn mode(&self) -> ChannelMode {
        self.mode
    }

    pub fn ts(&self) -> f64 {
        self.ts
    }

    pub fn stats_ref(&self) -> NormStatsRef {
        self.checkpoint.stats_ref
    }

    fn required_span(&self) -> f64 {
        self.checkpoint.config.in_len as f64 * self.ts
    }

    pub fn ready(&self) -> bool {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => b - a >= self.required_span(),
            _ => false,
        }
    }

    /// Appends a sample; returns whether the buffer now spans the input
    /// horizon. Timestamps must strictly increase.
    pub fn push(&mut self, sample: StreamSample) -> Result<bool, StreamError> {
        if let Some(&prev) = self.times.last() {
            if !(sample.t > prev) {
                return Err(StreamError::NonMonotonicTime {
                    prev,
                    got: sample.t,
                });
            }
        }
        self.times.push(sample.t);
        self.points.push(sample.p);
        if self.times.len() > self.capacity {
            let excess = self.times.len() - self.capacity;
            self.times.drain(..excess);
            self.points.drain(..excess);
        }
        Ok(self.ready())
    }

    /// The newest `n` grid positions, at t_last - (n-1)*ts ... t_last, by
    /// linear interpolation of the buffer; queries landing on buffered
    /// samples return them verbatim.
    fn grid_positions(&self, n: usize) -> Result<Vec<Vec3>, StreamError> {
        let (Some(&first), Some(&last)) = (self.times.first(), self.times.last()) else {
            return Err(StreamError::NotReady {
                span: 0.0,
                required: self.required_span(),
            });
        };
        if last - first < self.required_span() {
            return Err(StreamError::NotReady {
                span: last - first,
                required: self.required_span(),
            });
        }
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let t = last - ((n - 1 - k) as f64) * self.ts;
            let p = interp_at(&self.times, &self.points, t).ok_or(StreamError::NotReady {
                span: last - first,
                required: self.required_span(),
            })?;
            out.push(p);
        }
        Ok(out)
    }

    /// The in_len x 3 position window on the training grid.
    pub fn make_input(&self) -> Result<Vec<Vec3>, StreamError> {
        self.grid_positions(self.checkpoint.config.in_len)
    }

    /// The raw (pre-normalization) window the model consumes: positions in
    /// position mode; in velocity mode, forward differences of one extra
    /// grid point so the window still has in_len rows.
    pub fn model_window(&self) -> Result<Vec<Vec3>, StreamError> {
        let config = &self.checkpoint.config;
        match self.mode {
            ChannelMode::PositionModel => self.make_input(),
            ChannelMode::VelocityModel => {
                let pos = self.grid_positions(config.in_len + 1)?;
                Ok((0..config.in_len)
                    .map(|i| scale3(sub3(pos[i + 1], pos[i]), 1.0 / self.ts))
                    .collect())
            }
        }
    }

    /// Runs one inference over the current buffer.
    pub fn predict(&self) -> Result<PredictionRecord, StreamError> {
        let config = &self.checkpoint.config;
        let issued_at = *self.times.last().ok_or(StreamError::NotReady {
            span: 0.0,
            required: self.required_span(),
        })?;
        let p_last = *self.points.last().expect("non-empty buffer");

        let window = self.model_window()?;
        let mut normalized = Vec::with_capacity(window.len());
        for p in &window {
            normalized.push(apply(*p, &self.stats)?);
        }
        let raw_out = model_predict(&normalized, &self.checkpoint.params, config)?;
        let mut denorm = Vec::with_capacity(raw_out.len());
        for q in &raw_out {
            denorm.push(invert(*q, &self.stats)?);
        }

        let predicted: Vec<Vec3> = match self.mode {
            ChannelMode::PositionModel => denorm,
            ChannelMode::VelocityModel => {
                let mut out = Vec::with_capacity(denorm.len());
                let mut p = p_last;
                for v in &denorm {
                    p = add3(p, scale3(*v, self.ts));
                    out.push(p);
                }
                out
            }
        };
        let times: Vec<f64> = (1..=config.out_len)
            .map(|k| issued_at + k as f64 * self.ts)
            .collect();
        let actuals = vec![None; predicted.len()];
        Ok(PredictionRecord {
            issued_at,
            times,
            predicted,
            actuals,
            rmse: None,
        })
    }
}

/// Fills each record's actuals by interpolating the actual stream at the
/// predicted timestamps; computes the per-record RMSE once all points are
/// matched. Records the stream cannot cover yet stay pending.
pub fn match_actuals(records: &mut [PredictionRecord], actual: &SampledTrajectory) {
    for record in records.iter_mut() {
        if record.is_complete() {
            continue;
        }
        for (k, slot) in record.actuals.iter_mut().enumerate() {
            if slot.is_none() {
                *slot = interp_at(&actual.timestamps, &actual.points, record.times[k]);
            }
        }
        if record.actuals.iter().all(Option::is_some) {
            let n = record.predicted.len() as f64;
            let sum: f64 = record
                .predicted
                .iter()
                .zip(&record.actuals)
                .map(|(p, a)| {
                    let d = sub3(*p, a.unwrap());
                    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
                })
                .sum();
            record.rmse = Some((sum / n).sqrt());
        }
    }
}

/// Rolling average of per-record RMSE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RollingReport {
    pub mean_rmse: f64,
    /// Records averaged (at most `window`).
    pub count: usize,
    pub window: usize,
    /// True when fewer complete records than the window were available.
    pub partial: bool,
}

/// Mean RMSE over the most recent `window` complete records.
pub fn rolling_report(
    records: &[PredictionRecord],
    window: usize,
) -> Result<RollingReport, StreamError> {
    let complete: Vec<f64> = records.iter().filter_map(|r| r.rmse).collect();
    if complete.is_empty() {
        return Err(StreamError::NoCompleteRecords);
    }
    let take = complete.len().min(window);
    let newest = &complete[complete.len() - take..];
    Ok(RollingReport {
        mean_rmse: newest.iter().sum::<f64>() / take as f64,
        count: take,
        window,
        partial: complete.len() < window,
    })
}

/// What a simulated stream replays: a recorded trajectory or a parametric
/// one sampled densely on the fly.
#[derive(Debug, Clone)]
pub enum StreamSource {
    Trajectory(SampledTrajectory),
    Params {
        params: TrajectoryParams,
        duration: f64,
    },
}

/// Results of one simulated streaming run.
#[derive(Debug, Clone)]
pub struct StreamSimOutput {
    pub records: Vec<PredictionRecord>,
    pub report: RollingReport,
}

/// Replays the source through push/predict/match with a jittered clock:
/// sample gaps are ts * (1 + u), u uniform in [-jitter, +jitter], drawn
/// from seed stream 4. Deterministic per seed. One prediction is issued
/// per pushed sample once the buffer is ready.
pub fn run_stream_sim(
    source: &StreamSource,
    predictor: &mut Predictor,
    jitter: f64,
    seed: u64,
    window: usize,
) -> Result<StreamSimOutput, StreamError> {
    if !(0.0..1.0).contains(&jitter) {
        return Err(StreamError::InvalidSetup(format!("jitter = {jitter}")));
    }
    let ts = predictor.ts();
    let actual = match source {
        StreamSource::Trajectory(traj) => traj.clone(),
        StreamSource::Params { params, duration } => {
            // Dense enough that linear interpolation error is far below
            // the prediction errors being measured.
            generate_trajectory(params, *duration, ts / 10.0)?
        }
    };
    let config = &predictor.checkpoint.config;
    let need = (config.in_len + config.out_len + 1) as f64 * ts;
    if actual.duration() < need {
        return Err(StreamError::SourceTooShort {
            got: actual.duration(),
            need,
        });
    }

    let mut rng = Rng::new(derive_seed(seed, SEED_STREAM_JITTER));
    let t_end = *actual.timestamps.last().expect("non-empty source");
    let mut t = actual.timestamps[0];
    let mut records = Vec::new();
    while t <= t_end {
        let p = interp_at(&actual.timestamps, &actual.points, t)
            .expect("clock stays inside the source span");
        let ready = predictor.push(StreamSample { t, p })?;
        if ready {
            records.push(predictor.predict()?);
        }
        let u = if jitter > 0.0 {
            rng.uniform(-jitter, jitter).expect("jitter range")
        } else {
            0.0
        };
        t += ts * (1.0 + u);
    }
    match_actuals(&mut records, &actual);
    let report = rolling_report(&records, window)?;
    Ok(StreamSimOutput { records, report })
}

/// Per-record CSV: one row per predicted point of each complete record,
/// `issued_at,k,t_pred,px,py,pz,ax,ay,az,record_rmse`, with a summary
/// footer carrying the average RMSE and record counts.
pub fn write_records_csv(output: &StreamSimOutput, path: &Path) -> Result<(), StreamError> {
    let io_err = |e| StreamError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "issued_at,k,t_pred,px,py,pz,ax,ay,az,record_rmse").map_err(io_err)?;
    let mut pending = 0usize;
    for record in &output.records {
        let Some(rmse) = record.rmse else {
            pending += 1;
            continue;
        };
        for (k, (p, a)) in record
            .predicted
            .iter()
            .zip(&record.actuals)
            .enumerate()
        {
            let a = a.expect("complete record");
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                fmt_f64(record.issued_at),
                k + 1,
                fmt_f64(record.times[k]),
                fmt_f64(p[0]),
                fmt_f64(p[1]),
                fmt_f64(p[2]),
                fmt_f64(a[0]),
                fmt_f64(a[1]),
                fmt_f64(a[2]),
                fmt_f64(rmse)
            )
            .map_err(io_err)?;
        }
    }
    writeln!(w, "# average_rmse = {}", fmt_f64(output.report.mean_rmse)).map_err(io_err)?;
    writeln!(w, "# records_averaged = {}", output.report.count).map_err(io_err)?;
    writeln!(w, "# records_pending = {pending}").map_err(io_err)?;
    w.flush().map_err(io_err)
}
