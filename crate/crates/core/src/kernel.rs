//! The Gaussian mutation kernel and the convolution `f ⋆ φ`.
//!
//! Two convolution paths are provided. [`ConvolutionMethod::Direct`] is the
//! O(N·K) sum with the kernel cut off at `|x - y - m| > 8σ`; it is the trusted
//! reference. [`ConvolutionMethod::Spectral`] computes the same linear
//! convolution with FFTs, zero-padded to `2N` so nothing wraps around.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::FieldError;
use crate::grid::{DensityField, Grid};

/// Kernel cut-off in standard deviations.
pub const KERNEL_CUTOFF: f64 = 8.0;

/// Normal mutation kernel with mean `m` and standard deviation `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutationKernel {
    m: f64,
    sigma: f64,
    moments: [f64; 5],
    p2: f64,
    p4: f64,
    c_f: f64,
}

/// Raw moments `M_0..M_4` of a normal law with mean `m` and deviation `sigma`.
pub fn kernel_moments(m: f64, sigma: f64) -> Result<[f64; 5], FieldError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(FieldError::KernelSigma(sigma));
    }
    let s2 = sigma * sigma;
    let m2 = m * m;
    Ok([
        1.0,
        m,
        m2 + s2,
        m2 * m + 3.0 * m * s2,
        m2 * m2 + 6.0 * m2 * s2 + 3.0 * s2 * s2,
    ])
}

impl MutationKernel {
    pub fn new(m: f64, sigma: f64) -> Result<Self, FieldError> {
        let moments = kernel_moments(m, sigma)?;
        let mut kernel = Self {
            m,
            sigma,
            moments,
            p2: 0.0,
            p4: 0.0,
            c_f: moments[1..].iter().fold(0.0, |a, b| a.max(b.abs())),
        };
        kernel.p2 = kernel.weighted_sup(2);
        kernel.p4 = kernel.weighted_sup(4);
        Ok(kernel)
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn moments(&self) -> &[f64; 5] {
        &self.moments
    }

    /// `p_2(f) = sup |x² f(x)|`.
    pub fn p2(&self) -> f64 {
        self.p2
    }

    /// `p_4(f) = sup |x⁴ f(x)|`.
    pub fn p4(&self) -> f64 {
        self.p4
    }

    /// `C_f = max_{k=1..4} |M_k(f)|`.
    pub fn c_f(&self) -> f64 {
        self.c_f
    }

    /// Peak value `1/(√(2π)σ)`, which also bounds `‖f ⋆ φ‖_∞` for probability densities.
    pub fn peak(&self) -> f64 {
        1.0 / ((2.0 * PI).sqrt() * self.sigma)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let z = (x - self.m) / self.sigma;
        self.peak() * (-0.5 * z * z).exp()
    }

    // x^j e^{-(x-m)^2/2σ²} is stationary where x² - m x - jσ² = 0.
    fn weighted_sup(&self, j: i32) -> f64 {
        let disc = (self.m * self.m + 4.0 * j as f64 * self.sigma * self.sigma).sqrt();
        [0.5 * (self.m + disc), 0.5 * (self.m - disc)]
            .into_iter()
            .map(|x| x.abs().powi(j) * self.eval(x))
            .fold(0.0, f64::max)
    }

    fn check_support(&self, grid: &Grid) -> Result<(), FieldError> {
        let lo = self.m - KERNEL_CUTOFF * self.sigma;
        let hi = self.m + KERNEL_CUTOFF * self.sigma;
        let half_width = 0.5 * (grid.x_max() - grid.x_min());
        if lo.abs().max(hi.abs()) >= half_width {
            return Err(FieldError::KernelSupport { lo, hi, half_width });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvolutionMethod {
    Direct,
    #[default]
    Spectral,
}

/// A convolution operator bound to one kernel and one grid.
///
/// Holds the FFT plans and the padded kernel spectrum; all state is read-only
/// after construction so one instance can be shared between threads.
#[derive(Clone)]
pub struct Convolver {
    kernel: MutationKernel,
    grid: Grid,
    method: ConvolutionMethod,
    direct_taps: Arc<[f64]>,
    // offset of direct_taps[0] in cells, i.e. taps cover lag = first_lag + k
    first_lag: isize,
    spectral: Option<SpectralPlan>,
}

#[derive(Clone)]
struct SpectralPlan {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    kernel_hat: Arc<[Complex<f64>]>,
}

impl std::fmt::Debug for Convolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Convolver")
            .field("kernel", &self.kernel)
            .field("grid", &self.grid)
            .field("method", &self.method)
            .finish()
    }
}

impl Convolver {
    pub fn new(
        kernel: MutationKernel,
        grid: Grid,
        method: ConvolutionMethod,
    ) -> Result<Self, FieldError> {
        Self::build(kernel, grid, method, true)
    }

    /// Like [`Convolver::new`] but lets the spectral path run on any grid size.
    pub fn new_any_size(
        kernel: MutationKernel,
        grid: Grid,
        method: ConvolutionMethod,
    ) -> Result<Self, FieldError> {
        Self::build(kernel, grid, method, false)
    }

    fn build(
        kernel: MutationKernel,
        grid: Grid,
        method: ConvolutionMethod,
        require_pow2: bool,
    ) -> Result<Self, FieldError> {
        kernel.check_support(&grid)?;
        let h = grid.spacing();
        let n = grid.n_points() as isize;

        let lo = ((kernel.m - KERNEL_CUTOFF * kernel.sigma) / h).floor() as isize;
        let hi = ((kernel.m + KERNEL_CUTOFF * kernel.sigma) / h).ceil() as isize;
        let (lo, hi) = (lo.max(-(n - 1)), hi.min(n - 1));
        let mut direct_taps: Vec<f64> = (lo..=hi)
            .map(|l| {
                let z = l as f64 * h;
                if (z - kernel.m).abs() > KERNEL_CUTOFF * kernel.sigma {
                    0.0
                } else {
                    kernel.eval(z)
                }
            })
            .collect();
        // unit discrete mass: Σ_l f(l h) h = 1
        let norm = 1.0 / (h * direct_taps.iter().sum::<f64>());
        direct_taps.iter_mut().for_each(|t| *t *= norm);

        let spectral = match method {
            ConvolutionMethod::Direct => None,
            ConvolutionMethod::Spectral => {
                if require_pow2 && !grid.is_power_of_two() {
                    return Err(FieldError::NotPowerOfTwo(grid.n_points()));
                }
                let len = 2 * grid.n_points();
                let mut planner = FftPlanner::<f64>::new();
                let forward = planner.plan_fft_forward(len);
                let inverse = planner.plan_fft_inverse(len);
                // lag l >= 0 at index l, lag -l at index len - l
                let mut buf = vec![Complex::new(0.0, 0.0); len];
                for l in 0..grid.n_points() {
                    buf[l].re = kernel.eval(l as f64 * h);
                    if l > 0 {
                        buf[len - l].re = kernel.eval(-(l as f64) * h);
                    }
                }
                let norm = 1.0 / (h * buf.iter().map(|c| c.re).sum::<f64>());
                buf.iter_mut().for_each(|c| c.re *= norm);
                forward.process(&mut buf);
                Some(SpectralPlan {
                    forward,
                    inverse,
                    kernel_hat: buf.into(),
                })
            }
        };

        Ok(Self {
            kernel,
            grid,
            method,
            direct_taps: direct_taps.into(),
            first_lag: lo,
            spectral,
        })
    }

    pub fn kernel(&self) -> &MutationKernel {
        &self.kernel
    }

    pub fn method(&self) -> ConvolutionMethod {
        self.method
    }

    /// `(f ⋆ u)(x_i) ≈ Σ_j f(x_i - x_j) w_j u_j` for raw samples `u`.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        debug_assert_eq!(values.len(), self.grid.n_points());
        match &self.spectral {
            None => self.apply_direct(values),
            Some(plan) => self.apply_spectral(plan, values),
        }
    }

    fn apply_direct(&self, values: &[f64]) -> Vec<f64> {
        let n = values.len() as isize;
        let weighted: Vec<f64> = values
            .iter()
            .enumerate()
            .map(|(j, v)| self.grid.weight(j) * v)
            .collect();
        let mut out = vec![0.0; values.len()];
        for (i, slot) in out.iter_mut().enumerate() {
            let i = i as isize;
            // lag = i - j
            let mut acc = 0.0;
            for (k, tap) in self.direct_taps.iter().enumerate() {
                let j = i - (self.first_lag + k as isize);
                if (0..n).contains(&j) {
                    acc += tap * weighted[j as usize];
                }
            }
            *slot = acc;
        }
        out
    }

    fn apply_spectral(&self, plan: &SpectralPlan, values: &[f64]) -> Vec<f64> {
        let n = values.len();
        let len = 2 * n;
        let mut buf = vec![Complex::new(0.0, 0.0); len];
        for (j, v) in values.iter().enumerate() {
            buf[j].re = self.grid.weight(j) * v;
        }
        plan.forward.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(plan.kernel_hat.iter()) {
            *b *= k;
        }
        plan.inverse.process(&mut buf);
        let scale = 1.0 / len as f64;
        buf[..n].iter().map(|c| c.re * scale).collect()
    }

    pub fn convolve(&self, field: &DensityField) -> Result<DensityField, FieldError> {
        if field.grid() != &self.grid {
            return Err(FieldError::GridMismatch);
        }
        DensityField::new(self.grid, self.apply(field.values()))
    }
}

/// One-shot convolution; builds the operator per call.
pub fn convolve(
    kernel: &MutationKernel,
    field: &DensityField,
    method: ConvolutionMethod,
) -> Result<DensityField, FieldError> {
    Convolver::new(*kernel, *field.grid(), method)?.convolve(field)
}
