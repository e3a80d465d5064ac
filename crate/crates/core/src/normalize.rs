//! Whitening and max-L2-norm normalization with exact inverses.
//!
//! Whitening maps p to L^-1 (p - mu) where L is the Cholesky factor of the
//! sample covariance (divisor N-1); dewhitening maps back via L pw + mu.
//! Max-norm scales every vector by the largest vector magnitude in the
//! corpus, preserving direction and relative scale.
//!
//! Stats file: key-value text with fields format_version, method, channel,
//! `mean[3]`, `cov[9]`, `chol[9]`, max_norm; floats carry 17 significant
//! digits.

use crate::dataset::{fmt_f64, Channel};
use crate::numerics::{cholesky, solve_lower, Matrix, NumericsError, Vec3};
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

const STATS_VERSION: u32 = 1;

/// Regularization ramp tried before declaring a covariance degenerate.
const RIDGE_STEPS: [f64; 6] = [0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8];

#[derive(Debug, Error)]
pub enum NormError {
    #[error("too few points: need at least {need}, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("degenerate covariance: not positive definite even with ridge 1e-8")]
    DegenerateCovariance,
    #[error("max-norm fit on all-zero data")]
    ZeroData,
    #[error("operation requires method {expected}, stats carry {got}")]
    MethodMismatch { expected: NormMethod, got: NormMethod },
    #[error("{path}:{line}: {msg}")]
    ParseError {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("unsupported stats version {got} (expected {expected})")]
    VersionMismatch { got: u32, expected: u32 },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMethod {
    Whitening,
    MaxNorm,
}

impl std::fmt::Display for NormMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NormMethod::Whitening => write!(f, "whitening"),
            NormMethod::MaxNorm => write!(f, "maxnorm"),
        }
    }
}

impl std::str::FromStr for NormMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "whitening" => Ok(NormMethod::Whitening),
            "maxnorm" => Ok(NormMethod::MaxNorm),
            other => Err(format!("unknown normalization method '{other}'")),
        }
    }
}

/// Fitted normalization parameters for one channel.
///
/// `chol` is the factor L itself (L L^T = cov); whitening applies L^-1 via
/// a triangular solve rather than forming an inverse. For max-norm fits the
/// covariance and factor are populated opportunistically when the data
/// allows and are not used by apply/invert.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub method: NormMethod,
    pub channel: Channel,
    pub mean: Vec3,
    pub cov: Matrix,
    pub chol: Matrix,
    pub max_norm: f64,
}

fn sample_mean(points: &[Vec3]) -> Vec3 {
    let n = points.len() as f64;
    let mut mean = [0.0; 3];
    for p in points {
        for k in 0..3 {
            mean[k] += p[k];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    mean
}

/// Sample covariance with divisor N-1.
fn sample_cov(points: &[Vec3], mean: Vec3) -> Matrix {
    let mut cov = Matrix::zeros(3, 3);
    for p in points {
        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        for i in 0..3 {
            for j in 0..3 {
                cov[(i, j)] += d[i] * d[j];
            }
        }
    }
    let denom = (points.len() - 1) as f64;
    for v in cov.data_mut() {
        *v /= denom;
    }
    cov
}

fn cholesky_with_ridge(cov: &Matrix) -> Option<Matrix> {
    for ridge in RIDGE_STEPS {
        let mut sigma = cov.clone();
        for i in 0..3 {
            sigma[(i, i)] += ridge;
        }
        if let Ok(l) = cholesky(&sigma) {
            return Some(l);
        }
    }
    None
}

/// Fits normalization statistics over a point corpus.
///
/// Whitening needs at least 2 points and a covariance that becomes positive
/// definite within the ridge ramp. Max-norm needs at least one non-zero
/// point.
pub fn fit_stats(
    points: &[Vec3],
    method: NormMethod,
    channel: Channel,
) -> Result<NormStats, NormError> {
    let min_points = match method {
        NormMethod::Whitening => 2,
        NormMethod::MaxNorm => 1,
    };
    if points.len() < min_points {
        return Err(NormError::TooFewPoints {
            need: min_points,
            got: points.len(),
        });
    }
    let mean = sample_mean(points);
    let max_norm = points
        .iter()
        .map(|p| crate::numerics::norm3(*p))
        .fold(0.0, f64::max);
    let cov = if points.len() >= 2 {
        sample_cov(points, mean)
    } else {
        Matrix::zeros(3, 3)
    };
    let chol = match method {
        NormMethod::Whitening => {
            cholesky_with_ridge(&cov).ok_or(NormError::DegenerateCovariance)?
        }
        NormMethod::MaxNorm => {
            if !(max_norm > 0.0) {
                return Err(NormError::ZeroData);
            }
            cholesky_with_ridge(&cov).unwrap_or_else(|| Matrix::zeros(3, 3))
        }
    };
    Ok(NormStats {
        method,
        channel,
        mean,
        cov,
        chol,
        max_norm,
    })
}

fn expect_method(stats: &NormStats, expected: NormMethod) -> Result<(), NormError> {
    if stats.method != expected {
        return Err(NormError::MethodMismatch {
            expected,
            got: stats.method,
        });
    }
    Ok(())
}

/// L^-1 (p - mean) via forward substitution.
pub fn whiten(p: Vec3, stats: &NormStats) -> Result<Vec3, NormError> {
    expect_method(stats, NormMethod::Whitening)?;
    let centered = [
        p[0] - stats.mean[0],
        p[1] - stats.mean[1],
        p[2] - stats.mean[2],
    ];
    let x = solve_lower(&stats.chol, &centered)?;
    Ok([x[0], x[1], x[2]])
}

/// L pw + mean; the exact inverse of `whiten`.
pub fn dewhiten(pw: Vec3, stats: &NormStats) -> Result<Vec3, NormError> {
    expect_method(stats, NormMethod::Whitening)?;
    let mut out = [0.0; 3];
    stats.chol.matvec(&pw, &mut out);
    Ok([
        out[0] + stats.mean[0],
        out[1] + stats.mean[1],
        out[2] + stats.mean[2],
    ])
}

/// p / max_norm.
pub fn maxnorm_apply(p: Vec3, stats: &NormStats) -> Result<Vec3, NormError> {
    expect_method(stats, NormMethod::MaxNorm)?;
    Ok(crate::numerics::scale3(p, 1.0 / stats.max_norm))
}

/// q * max_norm; the exact inverse of `maxnorm_apply`.
pub fn maxnorm_invert(q: Vec3, stats: &NormStats) -> Result<Vec3, NormError> {
    expect_method(stats, NormMethod::MaxNorm)?;
    Ok(crate::numerics::scale3(q, stats.max_norm))
}

/// Normalizes one vector with whichever method the stats carry.
pub fn apply(p: Vec3, stats: &NormStats) -> Result<Vec3, NormError> {
    match stats.method {
        NormMethod::Whitening => whiten(p, stats),
        NormMethod::MaxNorm => maxnorm_apply(p, stats),
    }
}

/// Inverts `apply`.
pub fn invert(q: Vec3, stats: &NormStats) -> Result<Vec3, NormError> {
    match stats.method {
        NormMethod::Whitening => dewhiten(q, stats),
        NormMethod::MaxNorm => maxnorm_invert(q, stats),
    }
}

/// Normalizes every input and target point of a segment set.
pub fn normalize_set(
    set: &crate::dataset::SegmentSet,
    stats: &NormStats,
) -> Result<crate::dataset::SegmentSet, NormError> {
    let mut out = set.clone();
    for pair in &mut out.pairs {
        for p in pair.input.iter_mut().chain(pair.target.iter_mut()) {
            *p = apply(*p, stats)?;
        }
    }
    Ok(out)
}

/// Fingerprint of the fitted values, stored in checkpoints so a model can
/// verify it is paired with the stats it was trained with. FNV-1a over the
/// little-endian bytes of every field.
pub fn stats_fingerprint(stats: &NormStats) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325_u64;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    eat(&[match stats.method {
        NormMethod::Whitening => 0u8,
        NormMethod::MaxNorm => 1u8,
    }]);
    eat(&[match stats.channel {
        Channel::Position => 0u8,
        Channel::Velocity => 1u8,
    }]);
    for v in stats.mean {
        eat(&v.to_le_bytes());
    }
    for v in stats.cov.data() {
        eat(&v.to_le_bytes());
    }
    for v in stats.chol.data() {
        eat(&v.to_le_bytes());
    }
    eat(&stats.max_norm.to_le_bytes());
    hash
}

pub fn save_stats(stats: &NormStats, path: &Path) -> Result<(), NormError> {
    let io_err = |e| NormError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "format_version = {STATS_VERSION}").map_err(io_err)?;
    writeln!(w, "method = {}", stats.method).map_err(io_err)?;
    writeln!(w, "channel = {}", stats.channel).map_err(io_err)?;
    let join = |vals: &[f64]| {
        vals.iter()
            .map(|v| fmt_f64(*v))
            .collect::<Vec<_>>()
            .join(" ")
    };
    writeln!(w, "mean = {}", join(&stats.mean)).map_err(io_err)?;
    writeln!(w, "cov = {}", join(stats.cov.data())).map_err(io_err)?;
    writeln!(w, "chol = {}", join(stats.chol.data())).map_err(io_err)?;
    writeln!(w, "max_norm = {}", fmt_f64(stats.max_norm)).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn load_stats(path: &Path) -> Result<NormStats, NormError> {
    let text = std::fs::read_to_string(path).map_err(|e| NormError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let parse_err = |line: usize, msg: String| NormError::ParseError {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut method = None;
    let mut channel = None;
    let mut mean = None;
    let mut cov = None;
    let mut chol = None;
    let mut max_norm = None;
    let mut saw_version = false;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(lineno, "expected 'key = value'".to_string()))?;
        let (key, value) = (key.trim(), value.trim());
        let floats = |value: &str, want: usize| -> Result<Vec<f64>, NormError> {
            let vals: Result<Vec<f64>, _> =
                value.split_whitespace().map(|v| v.parse::<f64>()).collect();
            let vals = vals.map_err(|e| parse_err(lineno, format!("{key}: {e}")))?;
            if vals.len() != want {
                return Err(parse_err(
                    lineno,
                    format!("{key}: expected {want} values, got {}", vals.len()),
                ));
            }
            Ok(vals)
        };
        match key {
            "format_version" => {
                let got: u32 = value
                    .parse()
                    .map_err(|e| parse_err(lineno, format!("format_version: {e}")))?;
                if got != STATS_VERSION {
                    return Err(NormError::VersionMismatch {
                        got,
                        expected: STATS_VERSION,
                    });
                }
                saw_version = true;
            }
            "method" => {
                method = Some(
                    value
                        .parse::<NormMethod>()
                        .map_err(|e| parse_err(lineno, e))?,
                )
            }
            "channel" => {
                channel = Some(value.parse::<Channel>().map_err(|e| parse_err(lineno, e))?)
            }
            "mean" => {
                let v = floats(value, 3)?;
                mean = Some([v[0], v[1], v[2]]);
            }
            "cov" => cov = Some(Matrix::from_vec(3, 3, floats(value, 9)?)?),
            "chol" => chol = Some(Matrix::from_vec(3, 3, floats(value, 9)?)?),
            "max_norm" => {
                max_norm = Some(
                    value
                        .parse::<f64>()
                        .map_err(|e| parse_err(lineno, format!("max_norm: {e}")))?,
                )
            }
            other => return Err(parse_err(lineno, format!("unknown key '{other}'"))),
        }
    }
    if !saw_version {
        return Err(parse_err(0, "missing field 'format_version'".to_string()));
    }
    let missing = |what: &str| parse_err(0, format!("missing field '{what}'"));
    let stats = NormStats {
        method: method.ok_or_else(|| missing("method"))?,
        channel: channel.ok_or_else(|| missing("channel"))?,
        mean: mean.ok_or_else(|| missing("mean"))?,
        cov: cov.ok_or_else(|| missing("cov"))?,
        chol: chol.ok_or_else(|| missing("chol"))?,
        max_norm: max_norm.ok_or_else(|| missing("max_norm"))?,
    };
    if stats.method == NormMethod::Whitening {
        // The factor must reproduce the stored covariance.
        let rec = stats.chol.matmul(&stats.chol.transpose())?;
        let scale = stats.cov.max_abs().max(1.0);
        for i in 0..3 {
            for j in 0..3 {
                if (rec[(i, j)] - stats.cov[(i, j)]).abs() > 1e-6 * scale {
                    return Err(parse_err(
                        0,
                        "chol does not reproduce cov (corrupt stats?)".to_string(),
                    ));
                }
            }
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn unit_vector_corpus() -> Vec<Vec3> {
        vec![
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ]
    }

    #[test]
    fn fit_on_unit_vectors() {
        let stats = fit_stats(&unit_vector_corpus(), NormMethod::Whitening, Channel::Position)
            .unwrap();
        for m in stats.mean {
            assert!(m.abs() <= 1e-15);
        }
        assert_eq!(stats.max_norm, 1.0);
        // Each diagonal entry sums two squared unit coordinates over N-1 = 5.
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 2.0 / 5.0 } else { 0.0 };
                assert!((stats.cov[(i, j)] - expect).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn whiten_centered_point_is_origin() {
        let mut rng = Rng::new(3);
        let points: Vec<Vec3> = (0..100)
            .map(|_| {
                [
                    rng.uniform(-5.0, 5.0).unwrap() + 2.0,
                    rng.uniform(-1.0, 1.0).unwrap(),
                    rng.uniform(-9.0, 9.0).unwrap(),
                ]
            })
            .collect();
        let stats = fit_stats(&points, NormMethod::Whitening, Channel::Position).unwrap();
        let w = whiten(stats.mean, &stats).unwrap();
        for v in w {
            assert!(v.abs() <= 1e-12);
        }
    }

    #[test]
    fn identity_covariance_whitening_is_identity_map() {
        let stats = NormStats {
            method: NormMethod::Whitening,
            channel: Channel::Position,
            mean: [0.0; 3],
            cov: Matrix::identity(3),
            chol: Matrix::identity(3),
            max_norm: 1.0,
        };
        let p = [0.3, -4.0, 2.5];
        assert_eq!(whiten(p, &stats).unwrap(), p);
    }

    #[test]
    fn dewhiten_inverts_whiten() {
        let mut rng = Rng::new(12);
        let points: Vec<Vec3> = (0..500)
            .map(|_| {
                [
                    10.0 + 3.0 * rng.normal_unit(),
                    -5.0 + 0.5 * rng.normal_unit(),
                    2.0 * rng.normal_unit(),
                ]
            })
            .collect();
        let stats = fit_stats(&points, NormMethod::Whitening, Channel::Position).unwrap();
        for _ in 0..10_000 {
            let p = [
                rng.uniform(-1e3, 1e3).unwrap(),
                rng.uniform(-1e3, 1e3).unwrap(),
                rng.uniform(-1e3, 1e3).unwrap(),
            ];
            let back = dewhiten(whiten(p, &stats).unwrap(), &stats).unwrap();
            for k in 0..3 {
                assert!((back[k] - p[k]).abs() <= 1e-9);
            }
        }
        // pw = 0 maps back to the mean.
        let at_mean = dewhiten([0.0; 3], &stats).unwrap();
        for k in 0..3 {
            assert!((at_mean[k] - stats.mean[k]).abs() <= 1e-15);
        }
    }

    #[test]
    fn dewhiten_diagonal_case() {
        let stats = NormStats {
            method: NormMethod::Whitening,
            channel: Channel::Position,
            mean: [0.0; 3],
            cov: Matrix::diag(&[4.0, 9.0, 25.0]),
            chol: Matrix::diag(&[2.0, 3.0, 5.0]),
            max_norm: 1.0,
        };
        assert_eq!(dewhiten([1.0, 1.0, 1.0], &stats).unwrap(), [2.0, 3.0, 5.0]);
    }

    #[test]
    fn whitened_refit_has_zero_mean_identity_cov() {
        let mut rng = Rng::new(21);
        let points: Vec<Vec3> = (0..2000)
            .map(|_| {
                let z = [rng.normal_unit(), rng.normal_unit(), rng.normal_unit()];
                // Anisotropic, correlated.
                [
                    3.0 * z[0] + 0.5 * z[1] + 1.0,
                    0.4 * z[1] - 2.0,
                    0.8 * z[1] + 0.3 * z[2] + 11.0,
                ]
            })
            .collect();
        let stats = fit_stats(&points, NormMethod::Whitening, Channel::Position).unwrap();
        let whitened: Vec<Vec3> = points.iter().map(|p| whiten(*p, &stats).unwrap()).collect();
        let refit = fit_stats(&whitened, NormMethod::Whitening, Channel::Position).unwrap();
        for m in refit.mean {
            assert!(m.abs() <= 1e-9);
        }
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((refit.cov[(i, j)] - expect).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn maxnorm_apply_and_invert() {
        let stats = NormStats {
            method: NormMethod::MaxNorm,
            channel: Channel::Position,
            mean: [0.0; 3],
            cov: Matrix::zeros(3, 3),
            chol: Matrix::zeros(3, 3),
            max_norm: 61.765,
        };
        let q = maxnorm_apply([61.765, 0.0, 0.0], &stats).unwrap();
        assert!((q[0] - 1.0).abs() <= 1e-15 && q[1] == 0.0 && q[2] == 0.0);
        assert_eq!(maxnorm_apply([0.0; 3], &stats).unwrap(), [0.0; 3]);

        let mut rng = Rng::new(9);
        for _ in 0..10_000 {
            let p = [
                rng.uniform(-1e3, 1e3).unwrap(),
                rng.uniform(-1e3, 1e3).unwrap(),
                rng.uniform(-1e3, 1e3).unwrap(),
            ];
            let back = maxnorm_invert(maxnorm_apply(p, &stats).unwrap(), &stats).unwrap();
            for k in 0..3 {
                assert!((back[k] - p[k]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn maxnorm_bounds_and_direction() {
        let mut rng = Rng::new(30);
        let points: Vec<Vec3> = (0..300)
            .map(|_| {
                [
                    rng.uniform(-60.0, 60.0).unwrap(),
                    rng.uniform(-60.0, 60.0).unwrap(),
                    rng.uniform(0.0, 20.0).unwrap(),
                ]
            })
            .collect();
        let stats = fit_stats(&points, NormMethod::MaxNorm, Channel::Position).unwrap();
        for p in &points {
            let q = maxnorm_apply(*p, &stats).unwrap();
            assert!(crate::numerics::norm3(q) <= 1.0 + 1e-12);
            // Positively parallel: zero cross product, non-negative dot.
            let c = crate::numerics::cross3(*p, q);
            assert!(crate::numerics::norm3(c) <= 1e-9 * crate::numerics::norm3(*p).max(1.0));
            assert!(crate::numerics::dot3(*p, q) >= 0.0);
        }
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(
            fit_stats(&[], NormMethod::MaxNorm, Channel::Position),
            Err(NormError::TooFewPoints { .. })
        ));
        assert!(matches!(
            fit_stats(&[[1.0, 0.0, 0.0]], NormMethod::Whitening, Channel::Position),
            Err(NormError::TooFewPoints { .. })
        ));
        assert!(matches!(
            fit_stats(&[[0.0; 3], [0.0; 3]], NormMethod::MaxNorm, Channel::Position),
            Err(NormError::ZeroData)
        ));
        // Collinear data at large scale: rounding noise in the rank-deficient
        // covariance exceeds the ridge cap and the fit must refuse.
        let collinear: Vec<Vec3> = (0..50)
            .map(|i| {
                let a = i as f64 * 1e5;
                [a, 2.0 * a, -0.5 * a]
            })
            .collect();
        assert!(matches!(
            fit_stats(&collinear, NormMethod::Whitening, Channel::Position),
            Err(NormError::DegenerateCovariance)
        ));
        // All points identical: zero covariance, but the ridge makes it
        // positive definite within the cap, so the fit succeeds.
        assert!(fit_stats(
            &vec![[1.0, 2.0, 3.0]; 50],
            NormMethod::Whitening,
            Channel::Position
        )
        .is_ok());
    }

    #[test]
    fn planar_data_fits_with_ridge() {
        // Points confined to a plane give a singular covariance; the ridge
        // ramp must absorb it.
        let mut rng = Rng::new(44);
        let points: Vec<Vec3> = (0..200)
            .map(|_| {
                let a = rng.uniform(-10.0, 10.0).unwrap();
                let b = rng.uniform(-10.0, 10.0).unwrap();
                [a, b, 5.0]
            })
            .collect();
        let stats = fit_stats(&points, NormMethod::Whitening, Channel::Position).unwrap();
        assert!(stats.chol.is_finite());
        let p = points[0];
        let back = dewhiten(whiten(p, &stats).unwrap(), &stats).unwrap();
        for k in 0..3 {
            assert!((back[k] - p[k]).abs() <= 1e-6);
        }
    }

    #[test]
    fn method_mismatch_errors() {
        let stats = fit_stats(&unit_vector_corpus(), NormMethod::MaxNorm, Channel::Position)
            .unwrap();
        assert!(matches!(
            whiten([1.0, 0.0, 0.0], &stats),
            Err(NormError::MethodMismatch { .. })
        ));
        let stats = fit_stats(&unit_vector_corpus(), NormMethod::Whitening, Channel::Position)
            .unwrap();
        assert!(matches!(
            maxnorm_apply([1.0, 0.0, 0.0], &stats),
            Err(NormError::MethodMismatch { .. })
        ));
    }

    #[test]
    fn stats_file_round_trip() {
        let mut rng = Rng::new(15);
        let points: Vec<Vec3> = (0..100)
            .map(|_| {
                [
                    rng.uniform(-20.0, 60.0).unwrap(),
                    rng.uniform(-60.0, 20.0).unwrap(),
                    rng.uniform(5.0, 20.0).unwrap(),
                ]
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        for method in [NormMethod::Whitening, NormMethod::MaxNorm] {
            let stats = fit_stats(&points, method, Channel::Velocity).unwrap();
            let path = dir.path().join(format!("{method}.stats"));
            save_stats(&stats, &path).unwrap();
            let back = load_stats(&path).unwrap();
            assert_eq!(stats, back);
            assert_eq!(stats_fingerprint(&stats), stats_fingerprint(&back));
        }
    }

    #[test]
    fn stats_file_reference_values_verbatim() {
        // Values as reported for the reference corpus: position max norm
        // 61.765, velocity max norm 8.002, position mean (0.423, 0.501,
        // 11.764). Stored and reloaded bit-exactly.
        let stats = NormStats {
            method: NormMethod::MaxNorm,
            channel: Channel::Position,
            mean: [0.423, 0.501, 11.764],
            cov: Matrix::zeros(3, 3),
            chol: Matrix::zeros(3, 3),
            max_norm: 61.765,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ref.stats");
        save_stats(&stats, &path).unwrap();
        let back = load_stats(&path).unwrap();
        assert_eq!(back.max_norm.to_bits(), 61.765_f64.to_bits());
        assert_eq!(back.mean.map(f64::to_bits), stats.mean.map(f64::to_bits));

        let vstats = NormStats {
            max_norm: 8.002,
            channel: Channel::Velocity,
            ..stats
        };
        save_stats(&vstats, &path).unwrap();
        assert_eq!(load_stats(&path).unwrap().max_norm.to_bits(), 8.002_f64.to_bits());
    }

    #[test]
    fn stats_file_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.stats");
        std::fs::write(&path, "format_version = 1\nmethod = maxnorm\n").unwrap();
        assert!(matches!(load_stats(&path), Err(NormError::ParseError { .. })));
        std::fs::write(&path, "format_version = 2\n").unwrap();
        assert!(matches!(
            load_stats(&path),
            Err(NormError::VersionMismatch { got: 2, .. })
        ));
        // Truncated mid-line.
        std::fs::write(&path, "format_version = 1\nmethod = maxnorm\nmean = 1.0 2.0\n").unwrap();
        assert!(matches!(load_stats(&path), Err(NormError::ParseError { .. })));
    }
}
