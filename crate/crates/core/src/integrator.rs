//! Time stepping.
//!
//! The primary scheme integrates the equation in its variation-of-constants
//! form over one slab `[t, t + dt]`:
//!
//! ```text
//! φ(x, t+dt) = e^{-G(x,t)} φ(x, t) + ∫_t^{t+dt} e^{-G(x,s)} U d̄(s) (f⋆φ)(x, s) ds
//! G(x, s)    = ∫_s^{t+dt} d(x - cτ) dτ - (1-U) ∫_s^{t+dt} d̄(τ) dτ
//! ```
//!
//! The mortality part of `G` is exact and `d̄` is linear across the slab. In the
//! source integral `U d̄ (f⋆φ)` is interpolated linearly between its two end
//! values, so each iterate needs one convolution, and the product with the
//! exponential factor is integrated by three-point Gauss-Legendre. The unknown
//! end value `d̄(t+dt)` is
//! resolved by Picard iteration. A classical RK4 step on the differential form
//! is kept as an independent reference.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificates::{self, AprioriConstants};
use crate::error::FieldError;
use crate::grid::{quadrature_moment, DensityField, Grid, SupNorms};
use crate::kernel::{ConvolutionMethod, Convolver};
use crate::selection::{mean_mortality_of, mortality, mortality_integral, ModelParams};

/// Exponents above this would overflow `f64`.
const MAX_EXPONENT: f64 = 700.0;

/// Three-point Gauss-Legendre rule on [0, 1].
const GAUSS_NODES: [f64; 3] = [
    0.5 - 0.387_298_334_620_741_7,
    0.5,
    0.5 + 0.387_298_334_620_741_7,
];
const GAUSS_WEIGHTS: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];

/// `exp(-∫_s^{t1} d(x - cτ) dτ)` on the grid for one quadrature node `s`,
/// stored relative to its largest value so that the scalar growth factor
/// carries the overflow check.
struct SlabNode {
    node: f64,
    weight: f64,
    shift: f64,
    factor: Vec<f64>,
}

impl SlabNode {
    fn new(grid: &Grid, s: f64, t1: f64, c: f64, node: f64, weight: f64) -> Self {
        let m: Vec<f64> = grid
            .nodes()
            .map(|x| mortality_integral(x, s, t1, c))
            .collect();
        let shift = m.iter().copied().fold(f64::INFINITY, f64::min);
        let factor = m.iter().map(|v| (shift - v).exp()).collect();
        Self {
            node,
            weight,
            shift,
            factor,
        }
    }
}

/// Depth limit for step halving after a rejected Picard step.
const MAX_HALVINGS: u32 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    PicardExponential,
    Rk4Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub dt: f64,
    pub picard_tol: f64,
    pub picard_max_iters: u32,
    pub scheme: Scheme,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            picard_tol: 1e-12,
            picard_max_iters: 20,
            scheme: Scheme::PicardExponential,
        }
    }
}

impl StepConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(format!("dt must lie in (0, 0.1], got {}", self.dt));
        }
        if !(self.picard_tol >= 1e-13) {
            return Err(format!(
                "picard_tol must be >= 1e-13, got {}",
                self.picard_tol
            ));
        }
        if self.picard_max_iters < 2 {
            return Err(format!(
                "picard_max_iters must be >= 2, got {}",
                self.picard_max_iters
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("Picard iteration did not converge in {iters} iterates (last change {change:e})")]
    PicardDivergence { iters: u32, change: f64 },
    #[error("exponent {0:e} overflows; the discrete dynamics blew up")]
    ExponentOverflow(f64),
    #[error("step produced an invalid density: {0}")]
    Positivity(FieldError),
}

/// Failure modes of a whole run. Each maps to its own CLI exit code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error("invalid run input: {0}")]
    InvalidInput(String),
    #[error("boundary escape at t = {t}: {mass:e} of mass within the margin")]
    BoundaryEscape { t: f64, mass: f64 },
    #[error("Picard divergence at t = {t} even at dt = {dt:e}")]
    PicardDivergence { t: f64, dt: f64 },
    #[error("positivity violation at t = {t}: {source}")]
    PositivityViolation { t: f64, source: FieldError },
    #[error("mass drift at t = {t}: mass = {mass}")]
    MassDrift { t: f64, mass: f64 },
    #[error("exponent overflow at t = {t}")]
    ExponentOverflow { t: f64 },
    #[error("certificate '{name}' violated at t = {t} (margin {margin:e})")]
    CertificateViolation { t: f64, name: String, margin: f64 },
}

/// Diagnostics recorded at every step boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub dbar: f64,
    pub mass: f64,
    /// `M_1..M_4`.
    pub moments: [f64; 4],
    pub norms: SupNorms,
}

impl TrajectoryRow {
    /// `dbar` is the population average `∫ d(x - ct) φ dx` of `field` itself.
    pub fn of(field: &DensityField, t: f64, c: f64) -> Self {
        let m = field.moments4();
        Self {
            t,
            dbar: mean_mortality_of(field.grid(), field.values(), t, c),
            mass: m[0],
            moments: [m[1], m[2], m[3], m[4]],
            norms: field.sup_norms(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub field: DensityField,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunStats {
    pub steps: usize,
    pub max_picard_iters: u32,
    pub total_picard_iters: u64,
    pub rejected_steps: usize,
    pub clamped_mass: f64,
    pub max_boundary_mass: f64,
    pub max_mass_drift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
    pub snapshots: Vec<Snapshot>,
    pub final_state: DensityField,
    pub stats: RunStats,
}

impl Trajectory {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|r| r.t)
    }

    pub fn t_end(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.t)
    }

    /// Running trapezoid `∫_0^{t_k} d̄` at every recorded time.
    pub fn dbar_integral(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.rows.len());
        for (k, row) in self.rows.iter().enumerate() {
            if k > 0 {
                let prev = &self.rows[k - 1];
                acc += 0.5 * (row.t - prev.t) * (row.dbar + prev.dbar);
            }
            out.push(acc);
        }
        out
    }
}

/// Result of one accepted step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub field: DensityField,
    pub dbar: f64,
    /// `f ⋆ φ` of the returned field, reusable by the next Picard step.
    pub conv: Vec<f64>,
    pub iters: u32,
}

/// The right-hand side and both steppers, bound to one parameter set and grid.
#[derive(Debug, Clone)]
pub struct Model {
    params: ModelParams,
    grid: Grid,
    conv: Convolver,
}

impl Model {
    pub fn new(
        params: ModelParams,
        grid: Grid,
        method: ConvolutionMethod,
    ) -> Result<Self, FieldError> {
        let conv = Convolver::new_any_size(*params.kernel(), grid, method)?;
        Ok(Self { params, grid, conv })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn convolver(&self) -> &Convolver {
        &self.conv
    }

    /// Population average `∫ d φ / ∫ φ`.
    ///
    /// Equal to `∫ d φ` on unit-mass states. Without the division the total
    /// mass obeys `dM/dt = d̄ (M - 1)`, so any discretization error in the mass
    /// grows like `exp(∫ d̄)`; with it, mass is an exact invariant of the
    /// right-hand side.
    pub fn dbar(&self, values: &[f64], t: f64) -> f64 {
        mean_mortality_of(&self.grid, values, t, self.params.c())
            / quadrature_moment(&self.grid, values, 0)
    }

    /// `((1-U) d̄ - d(x-ct)) φ + U d̄ (f⋆φ)` with `d̄` taken from `values`.
    pub fn rhs(&self, values: &[f64], t: f64) -> Vec<f64> {
        let u = self.params.u();
        let c = self.params.c();
        let dbar = self.dbar(values, t);
        let conv = self.conv.apply(values);
        self.grid
            .nodes()
            .zip(values.iter().zip(conv))
            .map(|(x, (v, fv))| ((1.0 - u) * dbar - mortality(x, t, c)) * v + u * dbar * fv)
            .collect()
    }

    pub fn rhs_eval(&self, field: &DensityField, t: f64) -> Result<Vec<f64>, FieldError> {
        if field.grid() != &self.grid {
            return Err(FieldError::GridMismatch);
        }
        Ok(self.rhs(field.values(), t))
    }

    /// One slab of the exponential scheme. `conv_start` may carry `f ⋆ φ(t)`
    /// from the previous step.
    pub fn step_picard(
        &self,
        field: &DensityField,
        t: f64,
        dt: f64,
        cfg: &StepConfig,
        conv_start: Option<&[f64]>,
    ) -> Result<StepOutcome, StepError> {
        let u = self.params.u();
        let c = self.params.c();
        let t1 = t + dt;
        let phi0 = field.values();
        let dbar0 = self.dbar(phi0, t);
        let conv0_owned;
        let conv0 = match conv_start {
            Some(cv) => cv,
            None => {
                conv0_owned = self.conv.apply(phi0);
                &conv0_owned
            }
        };

        // The source U·d̄·(f⋆φ) is interpolated linearly between the slab ends
        // and integrated against the exact exponential factor with Gauss-Legendre
        // nodes. Only the x-independent growth part depends on the unknown end
        // state, so the spatial factors are tabulated once per step.
        let nodes: Vec<SlabNode> = std::iter::once((0.0, 0.0))
            .chain(GAUSS_NODES.iter().copied().zip(GAUSS_WEIGHTS))
            .map(|(node, weight)| SlabNode::new(&self.grid, t + node * dt, t1, c, node, weight))
            .collect();
        let s0: Vec<f64> = conv0.iter().map(|cv| u * dbar0 * cv).collect();

        let mut dbar1 = dbar0;
        let mut conv1 = conv0.to_vec();
        let mut next = vec![0.0; phi0.len()];
        let mut change = f64::INFINITY;
        for iter in 1..=cfg.picard_max_iters {
            let mut scale = [0.0; 4];
            for (sc, nd) in scale.iter_mut().zip(&nodes) {
                // (1-U)·∫_s^{t1} d̄ with d̄ linear across the slab
                let v = nd.node;
                let growth =
                    (1.0 - u) * dt * ((1.0 - v) * dbar0 + 0.5 * (dbar1 - dbar0) * (1.0 - v * v));
                let expo = growth - nd.shift;
                if expo > MAX_EXPONENT {
                    return Err(StepError::ExponentOverflow(expo));
                }
                *sc = expo.exp();
            }
            for (i, out) in next.iter_mut().enumerate() {
                let s1 = u * dbar1 * conv1[i];
                let mut acc = scale[0] * nodes[0].factor[i] * phi0[i];
                for (nd, sc) in nodes[1..].iter().zip(&scale[1..]) {
                    let v = nd.node;
                    acc += dt * nd.weight * sc * nd.factor[i] * ((1.0 - v) * s0[i] + v * s1);
                }
                *out = acc;
            }
            let dbar_new = self.dbar(&next, t1);
            change = (dbar_new - dbar1).abs();
            dbar1 = dbar_new;
            conv1 = self.conv.apply(&next);
            if change < cfg.picard_tol && iter >= 2 {
                let field = DensityField::new(self.grid, next).map_err(StepError::Positivity)?;
                return Ok(StepOutcome {
                    field,
                    dbar: dbar1,
                    conv: conv1,
                    iters: iter,
                });
            }
        }
        Err(StepError::PicardDivergence {
            iters: cfg.picard_max_iters,
            change,
        })
    }

    /// Classical four-stage Runge-Kutta on the differential form.
    pub fn step_rk4(
        &self,
        field: &DensityField,
        t: f64,
        dt: f64,
    ) -> Result<StepOutcome, StepError> {
        let y = field.values();
        let axpy = |a: f64, k: &[f64]| -> Vec<f64> {
            y.iter().zip(k).map(|(yi, ki)| yi + a * ki).collect()
        };
        let k1 = self.rhs(y, t);
        let k2 = self.rhs(&axpy(0.5 * dt, &k1), t + 0.5 * dt);
        let k3 = self.rhs(&axpy(0.5 * dt, &k2), t + 0.5 * dt);
        let k4 = self.rhs(&axpy(dt, &k3), t + dt);
        let next: Vec<f64> = (0..y.len())
            .map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(StepError::ExponentOverflow(f64::INFINITY));
        }
        let field = DensityField::new(self.grid, next).map_err(StepError::Positivity)?;
        let dbar = self.dbar(field.values(), t + dt);
        Ok(StepOutcome {
            field,
            dbar,
            conv: Vec::new(),
            iters: 0,
        })
    }

    fn step(
        &self,
        field: &DensityField,
        t: f64,
        dt: f64,
        cfg: &StepConfig,
        conv_start: Option<&[f64]>,
    ) -> Result<StepOutcome, StepError> {
        match cfg.scheme {
            Scheme::PicardExponential => self.step_picard(field, t, dt, cfg, conv_start),
            Scheme::Rk4Reference => self.step_rk4(field, t, dt),
        }
    }

    /// Advances `[t, t + dt]`, halving on Picard rejection. Returns the outcome
    /// and the number of rejected attempts.
    fn advance(
        &self,
        field: &DensityField,
        t: f64,
        dt: f64,
        cfg: &StepConfig,
        conv_start: Option<&[f64]>,
        depth: u32,
    ) -> Result<(StepOutcome, usize), (StepError, f64)> {
        match self.step(field, t, dt, cfg, conv_start) {
            Ok(out) => Ok((out, 0)),
            Err(StepError::PicardDivergence { .. }) if depth < MAX_HALVINGS => {
                log::debug!("Picard rejected at t = {t}, dt = {dt:e}; halving");
                let h = 0.5 * dt;
                let (first, r1) = self.advance(field, t, h, cfg, conv_start, depth + 1)?;
                let (second, r2) =
                    self.advance(&first.field, t + h, h, cfg, Some(&first.conv), depth + 1)?;
                let iters = first.iters.max(second.iters);
                Ok((StepOutcome { iters, ..second }, 1 + r1 + r2))
            }
            Err(e) => Err((e, dt)),
        }
    }
}

/// Driver settings beyond the step configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Steps between stored snapshots; the initial state is always stored.
    pub snapshot_stride: usize,
    /// Steps between in-run certificate checks.
    pub certificate_stride: usize,
    pub boundary_margin_cells: usize,
    /// Maximum mass allowed within the boundary margin.
    pub boundary_tol: f64,
    /// Maximum `|mass - 1|` of any accepted state; beyond this `d̄` is no
    /// longer a population average.
    pub mass_tol: f64,
    pub convolution: ConvolutionMethod,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            snapshot_stride: 1000,
            certificate_stride: 100,
            boundary_margin_cells: 10,
            boundary_tol: 1e-8,
            mass_tol: 1e-6,
            convolution: ConvolutionMethod::Spectral,
        }
    }
}

/// Advances `phi0` to `params.t_final()`, recording every step and aborting
/// with a labelled [`RunError`] on positivity, mass, boundary or certificate
/// failure.
pub fn run(
    params: &ModelParams,
    cfg: &StepConfig,
    phi0: &DensityField,
    opts: &RunOptions,
) -> Result<Trajectory, RunError> {
    cfg.validate().map_err(RunError::InvalidInput)?;
    if opts.snapshot_stride == 0 || opts.certificate_stride == 0 {
        return Err(RunError::InvalidInput("strides must be >= 1".into()));
    }
    let grid = *phi0.grid();
    let model = Model::new(*params, grid, opts.convolution)
        .map_err(|e| RunError::InvalidInput(e.to_string()))?;
    let mass0 = phi0.integrate();
    if (mass0 - 1.0).abs() > 1e-6 {
        return Err(RunError::InvalidInput(format!(
            "initial density has mass {mass0}, expected 1"
        )));
    }
    let consts =
        AprioriConstants::new(phi0, params).map_err(|e| RunError::InvalidInput(e.to_string()))?;

    let t_final = params.t_final();
    let n_steps = if t_final > 0.0 {
        (t_final / cfg.dt - 1e-9).ceil().max(1.0) as usize
    } else {
        0
    };
    let time_of = |k: usize| {
        if k == n_steps {
            t_final
        } else {
            k as f64 * cfg.dt
        }
    };

    let c = params.c();
    let mut rows = vec![TrajectoryRow::of(phi0, 0.0, c)];
    let mut snapshots = vec![Snapshot {
        step: 0,
        t: 0.0,
        field: phi0.clone(),
    }];
    let mut stats = RunStats {
        max_mass_drift: (mass0 - 1.0).abs(),
        ..RunStats::default()
    };
    let mut current = phi0.clone();
    let mut conv: Option<Vec<f64>> = None;
    let mut dbar_integral = 0.0;
    let mut prev_dbar = rows[0].dbar;

    for k in 0..n_steps {
        let t = time_of(k);
        let t1 = time_of(k + 1);
        let (out, rejected) = model
            .advance(&current, t, t1 - t, cfg, conv.as_deref(), 0)
            .map_err(|(e, dt)| match e {
                StepError::PicardDivergence { .. } => RunError::PicardDivergence { t, dt },
                StepError::ExponentOverflow(_) => RunError::ExponentOverflow { t },
                StepError::Positivity(source) => RunError::PositivityViolation { t, source },
            })?;
        stats.steps += 1;
        stats.rejected_steps += rejected;
        stats.max_picard_iters = stats.max_picard_iters.max(out.iters);
        stats.total_picard_iters += u64::from(out.iters);
        stats.clamped_mass += out.field.clamped_mass();

        let row = TrajectoryRow::of(&out.field, t1, c);
        let edge = out
            .field
            .boundary_mass(opts.boundary_margin_cells)
            .map_err(|e| RunError::InvalidInput(e.to_string()))?;
        stats.max_boundary_mass = stats.max_boundary_mass.max(edge);
        if edge > opts.boundary_tol {
            return Err(RunError::BoundaryEscape { t: t1, mass: edge });
        }
        let drift = (row.mass - 1.0).abs();
        stats.max_mass_drift = stats.max_mass_drift.max(drift);
        if drift > opts.mass_tol {
            return Err(RunError::MassDrift {
                t: t1,
                mass: row.mass,
            });
        }

        dbar_integral += 0.5 * (t1 - t) * (prev_dbar + row.dbar);
        prev_dbar = row.dbar;
        rows.push(row);

        let step = k + 1;
        if step % opts.certificate_stride == 0 || step == n_steps {
            certificates::in_run_checks(&consts, &out.field, &row, dbar_integral, params).map_err(
                |(name, margin)| RunError::CertificateViolation {
                    t: t1,
                    name,
                    margin,
                },
            )?;
        }
        if step % opts.snapshot_stride == 0 {
            snapshots.push(Snapshot {
                step,
                t: t1,
                field: out.field.clone(),
            });
        }
        conv = (!out.conv.is_empty()).then_some(out.conv);
        current = out.field;
    }

    log::info!(
        "run finished: {} steps, max Picard iterates {}, max |mass-1| {:e}",
        stats.steps,
        stats.max_picard_iters,
        stats.max_mass_drift
    );
    Ok(Trajectory {
        rows,
        snapshots,
        final_state: current,
        stats,
    })
}
