//! Co-moving frame diagnostics: the lag of the population mean behind the
//! optimum `ct`, and whether the profile in `y = x - ct` settles.

use serde::Serialize;
use thiserror::Error;

use crate::error::FieldError;
use crate::grid::{DensityField, Grid};
use crate::integrator::Snapshot;

/// Mass allowed to fall outside the frame grid when resampling.
pub const FRAME_ESCAPE_TOL: f64 = 1e-8;

pub const DEFAULT_WAVE_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaveError {
    #[error("need at least two snapshots, got {0}")]
    TooFewSnapshots(usize),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Resamples `field` at `x = y + ct` on `frame`, with 4-point cubic
/// interpolation. Where the cubic undershoots below zero the linear
/// interpolant is used instead.
pub fn to_moving_frame_on(
    field: &DensityField,
    t: f64,
    c: f64,
    frame: &Grid,
) -> Result<DensityField, FieldError> {
    let src = field.grid();
    let v = field.values();
    let n = v.len();
    let h = src.spacing();
    let shift = c * t;
    let at = |i: isize| -> f64 {
        if i < 0 || i >= n as isize {
            0.0
        } else {
            v[i as usize]
        }
    };

    let mut out = Vec::with_capacity(frame.n_points());
    for y in frame.nodes() {
        let pos = (y + shift - src.x_min()) / h;
        if pos < -1.0 || pos > n as f64 {
            out.push(0.0);
            continue;
        }
        let mut base = pos.floor();
        let mut u = pos - base;
        if u > 1.0 - 1e-9 {
            base += 1.0;
            u = 0.0;
        } else if u < 1e-9 {
            u = 0.0;
        }
        let i = base as isize;
        if u == 0.0 {
            out.push(at(i));
            continue;
        }
        let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
        let w0 = -u * (u - 1.0) * (u - 2.0) / 6.0;
        let w1 = (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0;
        let w2 = -(u + 1.0) * u * (u - 2.0) / 2.0;
        let w3 = (u + 1.0) * u * (u - 1.0) / 6.0;
        let cubic = w0 * p0 + w1 * p1 + w2 * p2 + w3 * p3;
        out.push(if cubic < 0.0 {
            (1.0 - u) * p1 + u * p2
        } else {
            cubic
        });
    }

    // mass of the source that lands outside the frame window
    let lo = frame.x_min() + shift;
    let hi = frame.x_max() + shift;
    let escaped: f64 = src
        .nodes()
        .enumerate()
        .filter(|(_, x)| *x < lo - h || *x > hi + h)
        .map(|(i, _)| src.weight(i) * v[i])
        .sum();
    if escaped > FRAME_ESCAPE_TOL {
        return Err(FieldError::FrameEscape { lost: escaped });
    }
    DensityField::new(*frame, out)
}

/// [`to_moving_frame_on`] with the frame grid equal to the field's grid.
pub fn to_moving_frame(field: &DensityField, t: f64, c: f64) -> Result<DensityField, FieldError> {
    to_moving_frame_on(field, t, c, field.grid())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WavePoint {
    pub t: f64,
    /// `ct - M_1(φ(·, t))`.
    pub lag: f64,
    /// X-norm distance to the previous frame profile; `None` for the first.
    pub frame_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaveReport {
    pub points: Vec<WavePoint>,
    pub threshold: f64,
    /// First time from which every later frame distance stays below the threshold.
    pub converged_at: Option<f64>,
}

impl WaveReport {
    pub fn converged(&self) -> bool {
        self.converged_at.is_some()
    }

    pub fn distances(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points
            .iter()
            .filter_map(|p| p.frame_distance.map(|d| (p.t, d)))
    }
}

/// Frame distances between consecutive snapshots. Non-convergence is reported,
/// not raised.
pub fn wave_convergence(
    snapshots: &[Snapshot],
    c: f64,
    threshold: f64,
) -> Result<WaveReport, WaveError> {
    if snapshots.len() < 2 {
        return Err(WaveError::TooFewSnapshots(snapshots.len()));
    }
    let mut points = Vec::with_capacity(snapshots.len());
    let mut prev: Option<DensityField> = None;
    for snap in snapshots {
        let profile = to_moving_frame(&snap.field, snap.t, c)?;
        let mass = snap.field.integrate();
        let lag = c * snap.t - snap.field.moment(1)? / mass;
        let frame_distance = prev.as_ref().map(|p| profile.x_distance(p));
        points.push(WavePoint {
            t: snap.t,
            lag,
            frame_distance,
        });
        prev = Some(profile);
    }
    let mut converged_at = None;
    for p in points.iter().rev() {
        match p.frame_distance {
            Some(d) if d < threshold => converged_at = Some(p.t),
            _ => break,
        }
    }
    Ok(WaveReport {
        points,
        threshold,
        converged_at,
    })
}
