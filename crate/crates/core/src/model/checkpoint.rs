//! Portable binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "UAVGRUCK"
//! 8       4     format_version (u32)
//! 12      4     input_dim      (u32)
//! 16      4     output_dim     (u32)
//! 20      4     hidden_dim     (u32)
//! 24      4     num_layers     (u32)
//! 28      4     in_len         (u32)
//! 32      4     out_len        (u32)
//! 36      8     dropout_rate   (f64)
//! 44      1     channel        (0 position, 1 velocity)
//! 45      1     norm method    (0 whitening, 1 maxnorm)
//! 46      2     reserved (zero)
//! 48      8     stats fingerprint (u64)
//! 56      ...   weights, f64 LE, in `ModelParams::param_slices` order
//! end-8   8     FNV-1a checksum over all preceding bytes (u64)
//! ```

use super::{ModelConfig, ModelError, ModelParams};
use crate::dataset::Channel;
use crate::normalize::{stats_fingerprint, NormMethod, NormStats};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"UAVGRUCK";
const VERSION: u32 = 1;

/// Which normalization a model was trained with, carried by the checkpoint
/// so the streaming predictor can verify it is paired with the right stats
/// file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormStatsRef {
    pub channel: Channel,
    pub method: NormMethod,
    pub fingerprint: u64,
}

impl NormStatsRef {
    pub fn of(stats: &NormStats) -> Self {
        NormStatsRef {
            channel: stats.channel,
            method: stats.method,
            fingerprint: stats_fingerprint(stats),
        }
    }

    pub fn matches(&self, stats: &NormStats) -> bool {
        *self == NormStatsRef::of(stats)
    }
}

/// A loaded checkpoint: parameters plus the config and stats reference
/// they were trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config: ModelConfig,
    pub stats_ref: NormStatsRef,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325_u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn io_err(path: &Path, source: std::io::Error) -> ModelError {
    ModelError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_checkpoint(
    params: &ModelParams,
    config: &ModelConfig,
    stats_ref: &NormStatsRef,
    path: &Path,
) -> Result<(), ModelError> {
    config.validate()?;
    if !params.matches_config(config) {
        return Err(ModelError::DimensionMismatch(
            "params do not match config".to_string(),
        ));
    }
    let mut bytes = Vec::with_capacity(64 + params.num_scalars() * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    for dim in [
        config.input_dim,
        config.output_dim,
        config.hidden_dim,
        config.num_layers,
        config.in_len,
        config.out_len,
    ] {
        bytes.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    bytes.extend_from_slice(&config.dropout_rate.to_le_bytes());
    bytes.push(match stats_ref.channel {
        Channel::Position => 0,
        Channel::Velocity => 1,
    });
    bytes.push(match stats_ref.method {
        NormMethod::Whitening => 0,
        NormMethod::MaxNorm => 1,
    });
    bytes.extend_from_slice(&[0, 0]);
    bytes.extend_from_slice(&stats_ref.fingerprint.to_le_bytes());
    for slice in params.param_slices() {
        for v in slice {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let checksum = fnv1a(&bytes);
    bytes.extend_from_slice(&checksum.to_le_bytes());

    let mut file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&bytes).map_err(|e| io_err(path, e))?;
    file.flush().map_err(|e| io_err(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| io_err(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| io_err(path, e))?;
    let corrupt = |msg: &str| ModelError::CorruptCheckpoint(msg.to_string());

    if bytes.len() < 64 {
        return Err(corrupt("file shorter than header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let got = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if got != VERSION {
        return Err(ModelError::VersionMismatch {
            got,
            expected: VERSION,
        });
    }
    let stored_checksum = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    if fnv1a(&bytes[..bytes.len() - 8]) != stored_checksum {
        return Err(corrupt("checksum mismatch"));
    }

    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    let config = ModelConfig {
        input_dim: u32_at(12),
        output_dim: u32_at(16),
        hidden_dim: u32_at(20),
        num_layers: u32_at(24),
        in_len: u32_at(28),
        out_len: u32_at(32),
        dropout_rate: f64::from_le_bytes(bytes[36..44].try_into().unwrap()),
    };
    config
        .validate()
        .map_err(|e| ModelError::CorruptCheckpoint(format!("invalid config: {e}")))?;
    let channel = match bytes[44] {
        0 => Channel::Position,
        1 => Channel::Velocity,
        other => return Err(ModelError::CorruptCheckpoint(format!("channel tag {other}"))),
    };
    let method = match bytes[45] {
        0 => NormMethod::Whitening,
        1 => NormMethod::MaxNorm,
        other => return Err(ModelError::CorruptCheckpoint(format!("method tag {other}"))),
    };
    let fingerprint = u64::from_le_bytes(bytes[48..56].try_into().unwrap());

    let mut params = ModelParams::zeros(&config);
    let expected_payload = params.num_scalars() * 8;
    let payload = &bytes[56..bytes.len() - 8];
    if payload.len() != expected_payload {
        return Err(ModelError::CorruptCheckpoint(format!(
            "payload is {} bytes, expected {}",
            payload.len(),
            expected_payload
        )));
    }
    let mut offset = 0;
    for slice in params.param_slices_mut() {
        for v in slice {
            *v = f64::from_le_bytes(payload[offset..offset + 8].try_into().unwrap());
            offset += 8;
        }
    }
    if !params.is_finite() {
        return Err(corrupt("non-finite weight"));
    }

    Ok(Checkpoint {
        params,
        config,
        stats_ref: NormStatsRef {
            channel,
            method,
            fingerprint,
        },
    })
}
