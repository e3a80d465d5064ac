//! Trajectory resampling, velocity derivation, window segmentation,
//! per-trajectory splits, and on-disk formats.
//!
//! File formats:
//! - Trajectory CSV: UTF-8, header `t,x,y,z`, one sample per line, `.`
//!   decimal separator, LF line endings, 17 significant digits.
//! - Segment set: a directory holding `manifest.txt` (key-value text with
//!   ts, channel, window sizes, and one `pair = <traj_id>,<start>` line per
//!   pair) and `segments.bin` (16-byte header `UAVSEGMENTS.` + u32 LE
//!   version, then per pair in_len*3 followed by out_len*3 little-endian
//!   f64 values).

use crate::numerics::{derive_seed, Rng, Vec3};
use std::fmt;
use std::io::{BufRead, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const DEFAULT_TS: f64 = 0.1;
pub const DEFAULT_IN_LEN: usize = 20;
pub const DEFAULT_OUT_LEN: usize = 10;

const SEGMENT_MAGIC: &[u8; 12] = b"UAVSEGMENTS.";
const SEGMENT_VERSION: u32 = 1;

/// Snap tolerance for treating a query time as an existing sample time.
/// Far below any real sample gap, far above grid-arithmetic rounding.
const KNOT_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("timestamps are not strictly increasing at index {0}")]
    NonMonotonicTimestamps(usize),
    #[error("too few samples: need at least {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("operation requires channel {expected}, got {got}")]
    WrongChannel { expected: Channel, got: Channel },
    #[error("non-uniform sample spacing at index {index}: gap {gap} vs expected {expected}")]
    NonUniformSpacing {
        index: usize,
        gap: f64,
        expected: f64,
    },
    #[error("invalid duration or step: {0}")]
    InvalidDuration(String),
    #[error("invalid split fractions: train {train}, val {val}")]
    InvalidFractions { train: f64, val: f64 },
    #[error("{path}:{line}: {msg}")]
    ParseError {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("unsupported format version {got} (expected {expected})")]
    VersionMismatch { got: u32, expected: u32 },
    #[error("non-finite value at sample {0}")]
    NonFiniteSample(usize),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Which physical quantity a trajectory or segment carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Position,
    Velocity,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::Position => write!(f, "position"),
            Channel::Velocity => write!(f, "velocity"),
        }
    }
}

impl std::str::FromStr for Channel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "position" => Ok(Channel::Position),
            "velocity" => Ok(Channel::Velocity),
            other => Err(format!("unknown channel '{other}'")),
        }
    }
}

/// Timestamped 3D samples of one channel. Timestamps strictly increase.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledTrajectory {
    pub channel: Channel,
    pub timestamps: Vec<f64>,
    pub points: Vec<Vec3>,
}

impl SampledTrajectory {
    pub fn new(
        channel: Channel,
        timestamps: Vec<f64>,
        points: Vec<Vec3>,
    ) -> Result<Self, DataError> {
        if timestamps.len() != points.len() {
            return Err(DataError::TooFewSamples {
                need: timestamps.len(),
                got: points.len(),
            });
        }
        for i in 1..timestamps.len() {
            if !(timestamps[i] > timestamps[i - 1]) {
                return Err(DataError::NonMonotonicTimestamps(i));
            }
        }
        for (i, p) in points.iter().enumerate() {
            if !(timestamps[i].is_finite() && p.iter().all(|v| v.is_finite())) {
                return Err(DataError::NonFiniteSample(i));
            }
        }
        Ok(SampledTrajectory {
            channel,
            timestamps,
            points,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.timestamps.first(), self.timestamps.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }
}

/// Linear interpolation over a strictly increasing time series.
///
/// Queries within `KNOT_EPS` of a sample time return that sample verbatim,
/// so on-grid queries are bit-exact. `t` must lie within the covered span.
pub fn interp_at(timestamps: &[f64], points: &[Vec3], t: f64) -> Option<Vec3> {
    let n = timestamps.len();
    if n == 0 || t < timestamps[0] - KNOT_EPS || t > timestamps[n - 1] + KNOT_EPS {
        return None;
    }
    // First index with timestamp >= t.
    let hi = timestamps.partition_point(|&x| x < t);
    if hi < n && (timestamps[hi] - t).abs() <= KNOT_EPS {
        return Some(points[hi]);
    }
    if hi > 0 && (timestamps[hi - 1] - t).abs() <= KNOT_EPS {
        return Some(points[hi - 1]);
    }
    if hi == 0 || hi == n {
        // Within KNOT_EPS of the boundary but no knot matched.
        return Some(points[if hi == 0 { 0 } else { n - 1 }]);
    }
    let (t0, t1) = (timestamps[hi - 1], timestamps[hi]);
    let w = (t - t0) / (t1 - t0);
    let (a, b) = (points[hi - 1], points[hi]);
    Some([
        a[0] + w * (b[0] - a[0]),
        a[1] + w * (b[1] - a[1]),
        a[2] + w * (b[2] - a[2]),
    ])
}

/// Resamples onto the uniform grid t0, t0+ts, ... <= t_last by linear
/// interpolation. Grid points landing on input samples are exact.
pub fn resample(traj: &SampledTrajectory, ts: f64) -> Result<SampledTrajectory, DataError> {
    if traj.len() < 2 {
        return Err(DataError::TooFewSamples {
            need: 2,
            got: traj.len(),
        });
    }
    if !(ts > 0.0) {
        return Err(DataError::InvalidDuration(format!("ts = {ts}")));
    }
    let t0 = traj.timestamps[0];
    let span = traj.duration();
    let steps = (span / ts + KNOT_EPS).floor() as usize;
    let mut timestamps = Vec::with_capacity(steps + 1);
    let mut points = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = t0 + k as f64 * ts;
        let p = interp_at(&traj.timestamps, &traj.points, t)
            .expect("grid time inside sampled span");
        timestamps.push(t);
        points.push(p);
    }
    SampledTrajectory::new(traj.channel, timestamps, points)
}

/// First-order forward difference: v_i = (p_{i+1} - p_i) / ts.
///
/// Output keeps timestamps t_0..t_{N-2} and has length N-1. Matches the
/// causal streaming path, where the newest velocity depends on the newest
/// two positions.
pub fn derive_velocity(traj: &SampledTrajectory) -> Result<SampledTrajectory, DataError> {
    if traj.channel != Channel::Position {
        return Err(DataError::WrongChannel {
            expected: Channel::Position,
            got: traj.channel,
        });
    }
    if traj.len() < 2 {
        return Err(DataError::TooFewSamples {
            need: 2,
            got: traj.len(),
        });
    }
    let ts = traj.timestamps[1] - traj.timestamps[0];
    for i in 1..traj.len() {
        let gap = traj.timestamps[i] - traj.timestamps[i - 1];
        if (gap - ts).abs() > 1e-9 {
            return Err(DataError::NonUniformSpacing {
                index: i,
                gap,
                expected: ts,
            });
        }
    }
    let n = traj.len() - 1;
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let d = crate::numerics::sub3(traj.points[i + 1], traj.points[i]);
        points.push(crate::numerics::scale3(d, 1.0 / ts));
    }
    SampledTrajectory::new(Channel::Velocity, traj.timestamps[..n].to_vec(), points)
}

/// One training example: an input window and the target window that follows.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPair {
    pub input: Vec<Vec3>,
    pub target: Vec<Vec3>,
    pub channel: Channel,
    pub source_id: u64,
    pub start: usize,
}

/// A homogeneous collection of segment pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSet {
    pub pairs: Vec<SegmentPair>,
    pub ts: f64,
    pub channel: Channel,
    pub in_len: usize,
    pub out_len: usize,
}

impl SegmentSet {
    pub fn new(ts: f64, channel: Channel, in_len: usize, out_len: usize) -> Self {
        SegmentSet {
            pairs: Vec::new(),
            ts,
            channel,
            in_len,
            out_len,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Cuts sliding windows: pair k starts at k*stride, takes `in_len` input
/// points then `out_len` target points. Emits while the full window fits;
/// short trajectories yield an empty list.
pub fn window(
    traj: &SampledTrajectory,
    in_len: usize,
    out_len: usize,
    stride: usize,
    source_id: u64,
) -> Vec<SegmentPair> {
    assert!(in_len >= 1 && out_len >= 1 && stride >= 1);
    let total = in_len + out_len;
    let mut pairs = Vec::new();
    if traj.len() < total {
        return pairs;
    }
    let mut start = 0;
    while start + total <= traj.len() {
        pairs.push(SegmentPair {
            input: traj.points[start..start + in_len].to_vec(),
            target: traj.points[start + in_len..start + total].to_vec(),
            channel: traj.channel,
            source_id,
            start,
        });
        start += stride;
    }
    pairs
}

/// Expected number of windows for a trajectory of `n` samples.
pub fn window_count(n: usize, in_len: usize, out_len: usize, stride: usize) -> usize {
    let total = in_len + out_len;
    if n < total {
        0
    } else {
        (n - total) / stride + 1
    }
}

/// Splits by source trajectory id so overlapping windows never leak across
/// sets. Trajectory order is shuffled deterministically from the seed;
/// train takes floor(train_frac*n) trajectories, val the next
/// floor(val_frac*n), test the rest.
pub fn split(
    set: &SegmentSet,
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<(SegmentSet, SegmentSet, SegmentSet), DataError> {
    if !(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0) {
        return Err(DataError::InvalidFractions {
            train: train_frac,
            val: val_frac,
        });
    }
    let mut ids: Vec<u64> = set.pairs.iter().map(|p| p.source_id).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut rng = Rng::new(derive_seed(seed, 0));
    rng.shuffle(&mut ids);
    let n = ids.len();
    let n_train = (train_frac * n as f64).floor() as usize;
    let n_val = (val_frac * n as f64).floor() as usize;
    let train_ids: std::collections::HashSet<u64> = ids[..n_train].iter().copied().collect();
    let val_ids: std::collections::HashSet<u64> =
        ids[n_train..n_train + n_val].iter().copied().collect();

    let mk = || SegmentSet::new(set.ts, set.channel, set.in_len, set.out_len);
    let (mut train, mut val, mut test) = (mk(), mk(), mk());
    for pair in &set.pairs {
        if train_ids.contains(&pair.source_id) {
            train.pairs.push(pair.clone());
        } else if val_ids.contains(&pair.source_id) {
            val.pairs.push(pair.clone());
        } else {
            test.pairs.push(pair.clone());
        }
    }
    Ok((train, val, test))
}

// ---------------------------------------------------------------------------
// Trajectory CSV
// ---------------------------------------------------------------------------

/// 17 significant digits: enough to round-trip any f64 exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{:.16e}", v)
}

pub fn write_trajectory_csv(traj: &SampledTrajectory, path: &Path) -> Result<(), DataError> {
    let file = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| DataError::io(path, e);
    writeln!(w, "t,x,y,z").map_err(io_err)?;
    for (t, p) in traj.timestamps.iter().zip(&traj.points) {
        writeln!(
            w,
            "{},{},{},{}",
            fmt_f64(*t),
            fmt_f64(p[0]),
            fmt_f64(p[1]),
            fmt_f64(p[2])
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Reads a `t,x,y,z` CSV. The header is mandatory; the channel is the
/// caller's claim about what the file holds (files carry no channel tag).
pub fn read_trajectory_csv(path: &Path, channel: Channel) -> Result<SampledTrajectory, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let parse_err = |line: usize, msg: String| DataError::ParseError {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut timestamps = Vec::new();
    let mut points = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| DataError::io(path, e))?;
        let lineno = idx + 1;
        if idx == 0 {
            if line.trim() != "t,x,y,z" {
                return Err(parse_err(lineno, "expected header 't,x,y,z'".to_string()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(parse_err(
                lineno,
                format!("expected 4 fields, got {}", fields.len()),
            ));
        }
        let mut vals = [0.0; 4];
        for (k, f) in fields.iter().enumerate() {
            vals[k] = f
                .trim()
                .parse::<f64>()
                .map_err(|e| parse_err(lineno, format!("field {}: {e}", k + 1)))?;
        }
        timestamps.push(vals[0]);
        points.push([vals[1], vals[2], vals[3]]);
    }
    SampledTrajectory::new(channel, timestamps, points)
}

// ---------------------------------------------------------------------------
// Segment-set persistence
// ---------------------------------------------------------------------------

pub fn save_segment_set(set: &SegmentSet, dir: &Path) -> Result<(), DataError> {
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;

    let manifest_path = dir.join("manifest.txt");
    let file =
        std::fs::File::create(&manifest_path).map_err(|e| DataError::io(&manifest_path, e))?;
    let mut w = BufWriter::new(file);
    let m_err = |e| DataError::io(&manifest_path, e);
    writeln!(w, "format_version = {SEGMENT_VERSION}").map_err(m_err)?;
    writeln!(w, "ts = {}", fmt_f64(set.ts)).map_err(m_err)?;
    writeln!(w, "channel = {}", set.channel).map_err(m_err)?;
    writeln!(w, "in_len = {}", set.in_len).map_err(m_err)?;
    writeln!(w, "out_len = {}", set.out_len).map_err(m_err)?;
    writeln!(w, "count = {}", set.pairs.len()).map_err(m_err)?;
    for pair in &set.pairs {
        writeln!(w, "pair = {},{}", pair.source_id, pair.start).map_err(m_err)?;
    }
    w.flush().map_err(m_err)?;

    let bin_path = dir.join("segments.bin");
    let file = std::fs::File::create(&bin_path).map_err(|e| DataError::io(&bin_path, e))?;
    let mut w = BufWriter::new(file);
    let b_err = |e| DataError::io(&bin_path, e);
    w.write_all(SEGMENT_MAGIC).map_err(b_err)?;
    w.write_all(&SEGMENT_VERSION.to_le_bytes()).map_err(b_err)?;
    for pair in &set.pairs {
        for p in pair.input.iter().chain(pair.target.iter()) {
            for v in p {
                w.write_all(&v.to_le_bytes()).map_err(b_err)?;
            }
        }
    }
    w.flush().map_err(b_err)
}

pub fn load_segment_set(dir: &Path) -> Result<SegmentSet, DataError> {
    let manifest_path = dir.join("manifest.txt");
    let text =
        std::fs::read_to_string(&manifest_path).map_err(|e| DataError::io(&manifest_path, e))?;
    let parse_err = |line: usize, msg: String| DataError::ParseError {
        path: manifest_path.display().to_string(),
        line,
        msg,
    };

    let mut ts = None;
    let mut channel = None;
    let mut in_len = None;
    let mut out_len = None;
    let mut count = None;
    let mut refs: Vec<(u64, usize)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(lineno, "expected 'key = value'".to_string()))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "format_version" => {
                let got: u32 = value
                    .parse()
                    .map_err(|e| parse_err(lineno, format!("format_version: {e}")))?;
                if got != SEGMENT_VERSION {
                    return Err(DataError::VersionMismatch {
                        got,
                        expected: SEGMENT_VERSION,
                    });
                }
            }
            "ts" => {
                ts = Some(
                    value
                        .parse::<f64>()
                        .map_err(|e| parse_err(lineno, format!("ts: {e}")))?,
                )
            }
            "channel" => {
                channel = Some(value.parse::<Channel>().map_err(|e| parse_err(lineno, e))?)
            }
            "in_len" => {
                in_len = Some(
                    value
                        .parse::<usize>()
                        .map_err(|e| parse_err(lineno, format!("in_len: {e}")))?,
                )
            }
            "out_len" => {
                out_len = Some(
                    value
                        .parse::<usize>()
                        .map_err(|e| parse_err(lineno, format!("out_len: {e}")))?,
                )
            }
            "count" => {
                count = Some(
                    value
                        .parse::<usize>()
                        .map_err(|e| parse_err(lineno, format!("count: {e}")))?,
                )
            }
            "pair" => {
                let (id, start) = value
                    .split_once(',')
                    .ok_or_else(|| parse_err(lineno, "pair needs 'id,start'".to_string()))?;
                let id = id
                    .trim()
                    .parse::<u64>()
                    .map_err(|e| parse_err(lineno, format!("pair id: {e}")))?;
                let start = start
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| parse_err(lineno, format!("pair start: {e}")))?;
                refs.push((id, start));
            }
            other => return Err(parse_err(lineno, format!("unknown key '{other}'"))),
        }
    }
    let missing = |what: &str| parse_err(0, format!("missing field '{what}'"));
    let ts = ts.ok_or_else(|| missing("ts"))?;
    let channel = channel.ok_or_else(|| missing("channel"))?;
    let in_len = in_len.ok_or_else(|| missing("in_len"))?;
    let out_len = out_len.ok_or_else(|| missing("out_len"))?;
    let count = count.ok_or_else(|| missing("count"))?;
    if refs.len() != count {
        return Err(parse_err(
            0,
            format!("count = {count} but {} pair lines", refs.len()),
        ));
    }

    let bin_path = dir.join("segments.bin");
    let mut file = std::fs::File::open(&bin_path).map_err(|e| DataError::io(&bin_path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| DataError::io(&bin_path, e))?;
    let bin_err = |msg: String| DataError::ParseError {
        path: bin_path.display().to_string(),
        line: 0,
        msg,
    };
    if bytes.len() < 16 || &bytes[..12] != SEGMENT_MAGIC {
        return Err(bin_err("bad magic".to_string()));
    }
    let got = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    if got != SEGMENT_VERSION {
        return Err(DataError::VersionMismatch {
            got,
            expected: SEGMENT_VERSION,
        });
    }
    let per_pair = (in_len + out_len) * 3 * 8;
    let payload = &bytes[16..];
    if payload.len() != per_pair * count {
        return Err(bin_err(format!(
            "payload is {} bytes, expected {}",
            payload.len(),
            per_pair * count
        )));
    }
    let mut set = SegmentSet::new(ts, channel, in_len, out_len);
    let mut offset = 0;
    let read_point = |offset: &mut usize| -> Vec3 {
        let mut p = [0.0; 3];
        for v in &mut p {
            *v = f64::from_le_bytes(payload[*offset..*offset + 8].try_into().unwrap());
            *offset += 8;
        }
        p
    };
    for &(source_id, start) in &refs {
        let input: Vec<Vec3> = (0..in_len).map(|_| read_point(&mut offset)).collect();
        let target: Vec<Vec3> = (0..out_len).map(|_| read_point(&mut offset)).collect();
        set.pairs.push(SegmentPair {
            input,
            target,
            channel,
            source_id,
            start,
        });
    }
    Ok(set)
}
