//! Quadratic mortality around a moving optimum, the population mean
//! mortality, and the closed-form time integral of the mortality.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::FieldError;
use crate::grid::{quadrature_moment, DensityField, Grid};
use crate::kernel::MutationKernel;

/// Below this speed the `1/(3c)` closed form loses digits; use the `c = 0` branch.
pub const SMALL_SPEED: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("U must lie in (0,1): the mutation probability is a fraction of births (got {0})")]
    MutationProbability(f64),
    #[error("environment speed c must be finite and >= 0, got {0}")]
    Speed(f64),
    #[error("t_final must be finite and >= 0, got {0}")]
    FinalTime(f64),
}

/// Model coefficients: mutation probability `U`, environment speed `c`,
/// mutation kernel and horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    u: f64,
    c: f64,
    kernel: MutationKernel,
    t_final: f64,
}

impl ModelParams {
    // t_final = 0 is accepted: it requests the initial snapshot only.
    pub fn new(u: f64, c: f64, kernel: MutationKernel, t_final: f64) -> Result<Self, ParamError> {
        if !(u > 0.0 && u < 1.0) {
            return Err(ParamError::MutationProbability(u));
        }
        if !(c >= 0.0 && c.is_finite()) {
            return Err(ParamError::Speed(c));
        }
        if !(t_final >= 0.0 && t_final.is_finite()) {
            return Err(ParamError::FinalTime(t_final));
        }
        Ok(Self {
            u,
            c,
            kernel,
            t_final,
        })
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn kernel(&self) -> &MutationKernel {
        &self.kernel
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn with_t_final(mut self, t_final: f64) -> Result<Self, ParamError> {
        if !(t_final >= 0.0 && t_final.is_finite()) {
            return Err(ParamError::FinalTime(t_final));
        }
        self.t_final = t_final;
        Ok(self)
    }
}

/// `d(x - ct) = 1 + (x - ct)²`.
#[inline]
pub fn mortality(x: f64, t: f64, c: f64) -> f64 {
    let z = x - c * t;
    1.0 + z * z
}

/// `∫ d(x - ct) u(x) dx` for raw samples.
///
/// Expanded as `M_0 + M_2 - 2ct M_1 + (ct)² M_0` would cancel badly far from
/// the origin, so the integrand is formed pointwise.
pub fn mean_mortality_of(grid: &Grid, values: &[f64], t: f64, c: f64) -> f64 {
    let mut acc = 0.0;
    for (i, (x, v)) in grid.nodes().zip(values).enumerate() {
        acc += grid.weight(i) * mortality(x, t, c) * v;
    }
    acc
}

/// Mean mortality `d̄(t)` of a probability density.
pub fn mean_mortality(field: &DensityField, t: f64, c: f64) -> f64 {
    let mass = quadrature_moment(field.grid(), field.values(), 0);
    if (mass - 1.0).abs() > 1e-6 {
        log::warn!("mean mortality of a field with mass {mass}; d̄ is not a population average");
    }
    mean_mortality_of(field.grid(), field.values(), t, c)
}

/// `∫_s^t d(x - cτ) dτ` in closed form.
pub fn exponent_g(x: f64, s: f64, t: f64, c: f64) -> Result<f64, FieldError> {
    if s > t {
        return Err(FieldError::Interval { s, t });
    }
    Ok(mortality_integral(x, s, t, c))
}

/// Unchecked [`exponent_g`] for hot loops; requires `s <= t`.
#[inline]
pub(crate) fn mortality_integral(x: f64, s: f64, t: f64, c: f64) -> f64 {
    let dt = t - s;
    if c.abs() < SMALL_SPEED {
        return dt * (1.0 + x * x);
    }
    // (a³ - b³)/(3c) with a - b = c·dt, written without the division
    let a = x - c * s;
    let b = x - c * t;
    dt + dt * (a * a + a * b + b * b) / 3.0
}
