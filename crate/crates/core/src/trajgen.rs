//! Parametric circle and infinity-like (figure-eight) trajectories in
//! arbitrary 3D planes, plus bounded random parameter sampling.
//!
//! A trajectory is defined by a plane (center + normal), a radius, and an
//! angular speed. The circle traces
//! `c + r (cos(w t) v1 + sin(w t) v2)` and the figure-eight
//! `c + r (cos(w t) v1 + sin(2 w t) v2)`, where v1 and v2 are orthonormal
//! in-plane axes derived deterministically from the normal.

use crate::dataset::{Channel, DataError, SampledTrajectory};
use crate::numerics::{cross3, dot3, norm3, scale3, sub3, Rng, Vec3};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TrajError {
    #[error("degenerate normal vector (norm {0} <= 1e-12)")]
    DegenerateNormal(f64),
    #[error("invalid trajectory parameter: {0}")]
    InvalidParams(String),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("invalid duration {0}")]
    InvalidDuration(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    Circle,
    Infinity,
}

impl std::fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrajectoryKind::Circle => write!(f, "circle"),
            TrajectoryKind::Infinity => write!(f, "infinity"),
        }
    }
}

impl std::str::FromStr for TrajectoryKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "circle" => Ok(TrajectoryKind::Circle),
            "infinity" => Ok(TrajectoryKind::Infinity),
            other => Err(format!("unknown trajectory kind '{other}'")),
        }
    }
}

/// Plane, size, and speed of one parametric trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryParams {
    pub kind: TrajectoryKind,
    pub center: Vec3,
    pub normal: Vec3,
    pub radius: f64,
    pub omega: f64,
}

impl TrajectoryParams {
    pub fn new(
        kind: TrajectoryKind,
        center: Vec3,
        normal: Vec3,
        radius: f64,
        omega: f64,
    ) -> Result<Self, TrajError> {
        let n = norm3(normal);
        if !(n > 1e-12) {
            return Err(TrajError::DegenerateNormal(n));
        }
        if !(radius > 0.0) {
            return Err(TrajError::InvalidParams(format!("radius = {radius}")));
        }
        if !(omega > 0.0) {
            return Err(TrajError::InvalidParams(format!("omega = {omega}")));
        }
        if center.iter().any(|v| !v.is_finite()) {
            return Err(TrajError::InvalidParams("non-finite center".to_string()));
        }
        Ok(TrajectoryParams {
            kind,
            center,
            normal,
            radius,
            omega,
        })
    }

    /// The common period of both generators: cos(wt) and sin(2wt) repeat
    /// every 2*pi/w.
    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.omega
    }
}

/// Per-axis sampling ranges for random trajectory parameters.
///
/// Defaults: center and normal x,y in [-40, 40], z in [5, 20]; radius in
/// [1, 5]; angular speed in [0.3, 1.0].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBounds {
    pub center_lo: Vec3,
    pub center_hi: Vec3,
    pub normal_lo: Vec3,
    pub normal_hi: Vec3,
    pub radius_lo: f64,
    pub radius_hi: f64,
    pub omega_lo: f64,
    pub omega_hi: f64,
}

impl Default for ParamBounds {
    fn default() -> Self {
        ParamBounds {
            center_lo: [-40.0, -40.0, 5.0],
            center_hi: [40.0, 40.0, 20.0],
            normal_lo: [-40.0, -40.0, 5.0],
            normal_hi: [40.0, 40.0, 20.0],
            radius_lo: 1.0,
            radius_hi: 5.0,
            omega_lo: 0.3,
            omega_hi: 1.0,
        }
    }
}

impl ParamBounds {
    pub fn validate(&self) -> Result<(), TrajError> {
        for k in 0..3 {
            if self.center_lo[k] > self.center_hi[k] {
                return Err(TrajError::InvalidBounds(format!("center axis {k}")));
            }
            if self.normal_lo[k] > self.normal_hi[k] {
                return Err(TrajError::InvalidBounds(format!("normal axis {k}")));
            }
        }
        if self.radius_lo > self.radius_hi || self.radius_lo <= 0.0 {
            return Err(TrajError::InvalidBounds("radius".to_string()));
        }
        if self.omega_lo > self.omega_hi || self.omega_lo <= 0.0 {
            return Err(TrajError::InvalidBounds("omega".to_string()));
        }
        Ok(())
    }
}

/// Deterministic orthonormal in-plane axes (v1, v2) for a plane normal.
///
/// Picks the coordinate axis least aligned with the normalized normal
/// (ties broken in x, y, z order), projects the normal component out of it
/// to get v1, and completes the right-handed pair with v2 = n x v1.
pub fn orthonormal_basis(normal: Vec3) -> Result<(Vec3, Vec3), TrajError> {
    let len = norm3(normal);
    if !(len > 1e-12) {
        return Err(TrajError::DegenerateNormal(len));
    }
    let n = scale3(normal, 1.0 / len);
    let mut axis = 0;
    for k in 1..3 {
        if n[k].abs() < n[axis].abs() {
            axis = k;
        }
    }
    let mut e = [0.0; 3];
    e[axis] = 1.0;
    let v1 = sub3(e, scale3(n, dot3(n, e)));
    let v1 = scale3(v1, 1.0 / norm3(v1));
    let v2 = cross3(n, v1);
    Ok((v1, v2))
}

/// Point on the circle at time t: c + r (cos(wt) v1 + sin(wt) v2).
pub fn circle_point(params: &TrajectoryParams, t: f64) -> Vec3 {
    let (v1, v2) = orthonormal_basis(params.normal).expect("validated params");
    point_in_plane(params, &v1, &v2, t, false)
}

/// Point on the figure-eight at time t: c + r (cos(wt) v1 + sin(2wt) v2).
pub fn infinity_point(params: &TrajectoryParams, t: f64) -> Vec3 {
    let (v1, v2) = orthonormal_basis(params.normal).expect("validated params");
    point_in_plane(params, &v1, &v2, t, true)
}

/// Point at time t, dispatching on the params' kind.
pub fn point_at(params: &TrajectoryParams, t: f64) -> Vec3 {
    match params.kind {
        TrajectoryKind::Circle => circle_point(params, t),
        TrajectoryKind::Infinity => infinity_point(params, t),
    }
}

fn point_in_plane(
    params: &TrajectoryParams,
    v1: &Vec3,
    v2: &Vec3,
    t: f64,
    double_second: bool,
) -> Vec3 {
    let phase = params.omega * t;
    let a = params.radius * phase.cos();
    let b = params.radius * (if double_second { 2.0 * phase } else { phase }).sin();
    [
        params.center[0] + a * v1[0] + b * v2[0],
        params.center[1] + a * v1[1] + b * v2[1],
        params.center[2] + a * v1[2] + b * v2[2],
    ]
}

/// Draws parameters uniformly inside the bounds. Normals with norm below
/// 1e-6 are rejected and resampled; collapsed (lo == hi) ranges yield the
/// bound value itself.
pub fn sample_params(
    rng: &mut Rng,
    bounds: &ParamBounds,
    kind: TrajectoryKind,
) -> Result<TrajectoryParams, TrajError> {
    bounds.validate()?;
    let mut draw = |lo: f64, hi: f64| -> f64 {
        if lo == hi {
            lo
        } else {
            rng.uniform(lo, hi).expect("validated bounds")
        }
    };
    let center = [
        draw(bounds.center_lo[0], bounds.center_hi[0]),
        draw(bounds.center_lo[1], bounds.center_hi[1]),
        draw(bounds.center_lo[2], bounds.center_hi[2]),
    ];
    let mut normal;
    loop {
        normal = [
            draw(bounds.normal_lo[0], bounds.normal_hi[0]),
            draw(bounds.normal_lo[1], bounds.normal_hi[1]),
            draw(bounds.normal_lo[2], bounds.normal_hi[2]),
        ];
        if norm3(normal) >= 1e-6 {
            break;
        }
    }
    let radius = draw(bounds.radius_lo, bounds.radius_hi);
    let omega = draw(bounds.omega_lo, bounds.omega_hi);
    TrajectoryParams::new(kind, center, normal, radius, omega)
}

/// Samples the trajectory on the grid 0, ts, 2ts, ... <= duration.
pub fn generate_trajectory(
    params: &TrajectoryParams,
    duration: f64,
    ts: f64,
) -> Result<SampledTrajectory, TrajError> {
    if !(duration > 0.0) {
        return Err(TrajError::InvalidDuration(duration));
    }
    if !(ts > 0.0) {
        return Err(TrajError::InvalidDuration(ts));
    }
    let (v1, v2) = orthonormal_basis(params.normal)?;
    let double_second = params.kind == TrajectoryKind::Infinity;
    let steps = (duration / ts + 1e-9).floor() as usize;
    let mut timestamps = Vec::with_capacity(steps + 1);
    let mut points = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * ts;
        timestamps.push(t);
        points.push(point_in_plane(params, &v1, &v2, t, double_second));
    }
    SampledTrajectory::new(Channel::Position, timestamps, points)
        .map_err(|e: DataError| TrajError::InvalidParams(e.to_string()))
}
