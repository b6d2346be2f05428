//! Uniform grids, sampled densities, trapezoidal quadrature and the weighted
//! sup-norms `p_j(u) = sup |x^j u(x)|` that define the well-posedness space.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::FieldError;

/// Negative samples with magnitude below this are floating-point noise and are
/// clamped to zero; anything more negative is rejected.
pub const CLAMP_THRESHOLD: f64 = 1e-14;

/// Largest moment order the quadrature accepts.
pub const MAX_MOMENT: u32 = 8;

/// A truncated uniform discretization of the trait axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    x_min: f64,
    x_max: f64,
    n_points: usize,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Result<Self, FieldError> {
        if !(x_min.is_finite() && x_max.is_finite()) || x_min >= x_max {
            return Err(FieldError::InvalidGrid(format!(
                "need finite x_min < x_max, got [{x_min}, {x_max}]"
            )));
        }
        if n_points < 16 {
            return Err(FieldError::InvalidGrid(format!(
                "need at least 16 points, got {n_points}"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            n_points,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn spacing(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_points - 1) as f64
    }

    /// Node `i`, computed by multiplication so there is no accumulated drift.
    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.spacing()
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        let h = self.spacing();
        (0..self.n_points).map(move |i| self.x_min + i as f64 * h)
    }

    pub fn is_power_of_two(&self) -> bool {
        self.n_points.is_power_of_two()
    }

    /// Trapezoid weight of node `i`.
    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n_points {
            0.5 * self.spacing()
        } else {
            self.spacing()
        }
    }

    pub fn sample<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        self.nodes().map(f).collect()
    }
}

/// Weighted sup-norms `p0`, `p2`, `p4` and their sum, the X-norm.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SupNorms {
    pub p0: f64,
    pub p2: f64,
    pub p4: f64,
    pub x_norm: f64,
}

impl SupNorms {
    /// Norms of arbitrary (possibly signed) samples on `grid`.
    pub fn of_samples(grid: &Grid, values: &[f64]) -> Self {
        let (mut p0, mut p2, mut p4) = (0.0f64, 0.0f64, 0.0f64);
        for (x, v) in grid.nodes().zip(values) {
            let a = v.abs();
            let x2 = x * x;
            p0 = p0.max(a);
            p2 = p2.max(x2 * a);
            p4 = p4.max(x2 * x2 * a);
        }
        Self {
            p0,
            p2,
            p4,
            x_norm: p0 + p2 + p4,
        }
    }

    pub fn get(&self, j: u32) -> f64 {
        match j {
            0 => self.p0,
            2 => self.p2,
            4 => self.p4,
            _ => panic!("no weighted sup-norm of order {j}"),
        }
    }
}

/// Trapezoidal quadrature of `x^n * values` on `grid`.
pub fn quadrature_moment(grid: &Grid, values: &[f64], n: u32) -> f64 {
    let mut acc = 0.0;
    for (i, (x, v)) in grid.nodes().zip(values).enumerate() {
        acc += grid.weight(i) * x.powi(n as i32) * v;
    }
    acc
}

/// A non-negative density sampled on a [`Grid`]. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    grid: Grid,
    values: Arc<[f64]>,
    clamped_mass: f64,
}

impl DensityField {
    /// Builds a field, clamping negative noise above `-CLAMP_THRESHOLD` to zero.
    pub fn new(grid: Grid, mut values: Vec<f64>) -> Result<Self, FieldError> {
        if values.len() != grid.n_points() {
            return Err(FieldError::LengthMismatch {
                expected: grid.n_points(),
                got: values.len(),
            });
        }
        let mut clamped_mass = 0.0;
        for (i, v) in values.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(FieldError::NonFinite {
                    index: i,
                    x: grid.node(i),
                });
            }
            if *v < 0.0 {
                if *v < -CLAMP_THRESHOLD {
                    return Err(FieldError::Negative {
                        index: i,
                        x: grid.node(i),
                        value: *v,
                    });
                }
                clamped_mass -= grid.weight(i) * *v;
                *v = 0.0;
            }
        }
        if clamped_mass > 0.0 {
            log::trace!("clamped {clamped_mass:e} of negative round-off mass");
        }
        Ok(Self {
            grid,
            values: values.into(),
            clamped_mass,
        })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: Grid, f: F) -> Result<Self, FieldError> {
        Self::new(grid, grid.sample(f))
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.n_points()].into(),
            clamped_mass: 0.0,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Quadrature mass removed by the clamping policy at construction.
    pub fn clamped_mass(&self) -> f64 {
        self.clamped_mass
    }

    pub fn integrate(&self) -> f64 {
        quadrature_moment(&self.grid, &self.values, 0)
    }

    pub fn moment(&self, n: u32) -> Result<f64, FieldError> {
        if n > MAX_MOMENT {
            return Err(FieldError::MomentOrder(n));
        }
        Ok(quadrature_moment(&self.grid, &self.values, n))
    }

    /// Moments `M_0..=M_4`.
    pub fn moments4(&self) -> [f64; 5] {
        let mut m = [0.0; 5];
        for (i, (x, v)) in self.grid.nodes().zip(self.values.iter()).enumerate() {
            let mut p = self.grid.weight(i) * v;
            for slot in m.iter_mut() {
                *slot += p;
                p *= x;
            }
        }
        m
    }

    pub fn sup_norms(&self) -> SupNorms {
        SupNorms::of_samples(&self.grid, &self.values)
    }

    /// Mass in the outermost `margin_cells` cells on each side.
    pub fn boundary_mass(&self, margin_cells: usize) -> Result<f64, FieldError> {
        let limit = self.grid.n_points() / 4;
        if margin_cells >= limit {
            return Err(FieldError::Margin {
                margin: margin_cells,
                limit,
            });
        }
        let h = self.grid.spacing();
        let v = &self.values;
        let n = v.len();
        let mut acc = 0.0;
        for i in 0..margin_cells {
            acc += 0.5 * h * (v[i] + v[i + 1]);
            acc += 0.5 * h * (v[n - 1 - i] + v[n - 2 - i]);
        }
        Ok(acc)
    }

    pub fn sup_distance(&self, other: &DensityField) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// X-norm of the difference of two fields on the same grid.
    pub fn x_distance(&self, other: &DensityField) -> f64 {
        let diff: Vec<f64> = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| a - b)
            .collect();
        SupNorms::of_samples(&self.grid, &diff).x_norm
    }
}

/// Normal density with mean `mu` and variance `var`.
pub fn normal_pdf(x: f64, mu: f64, var: f64) -> f64 {
    let z = x - mu;
    (-(z * z) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}
