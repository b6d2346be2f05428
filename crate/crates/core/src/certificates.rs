//! Run-time checks of the a-priori estimates: the half-mass radius `R`, the
//! growth constant `C(t, φ₀)`, the `∫d̄` budget, the moment inequalities, the
//! Gronwall envelope on `M_4`, and the weighted sup-norm bounds `P_0, P_2, P_4`.
//!
//! Every bound here is a theorem about the continuous problem. A failure on a
//! run that completed is a solver bug, not a property of the model.

use serde::{Serialize, Serializer};

use crate::error::FieldError;
use crate::grid::{DensityField, SupNorms};
use crate::integrator::{Trajectory, TrajectoryRow};
use crate::selection::ModelParams;

/// Relative slack under which a negative margin still passes.
pub const NUMERICAL_SLACK: f64 = 1e-9;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Leading constant of the Gronwall exponent. The binomial coefficients for
/// n = 4 sum to 15, so 16 over-covers them.
pub const GRONWALL_FACTOR: f64 = 16.0;

fn ser_f64<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

/// One evaluated bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateRecord {
    pub name: String,
    #[serde(serialize_with = "ser_f64")]
    pub bound: f64,
    #[serde(serialize_with = "ser_f64")]
    pub observed: f64,
    #[serde(serialize_with = "ser_f64")]
    pub margin: f64,
    pub pass: bool,
}

impl CertificateRecord {
    /// `observed <= bound`, up to [`NUMERICAL_SLACK`] relative to the bound.
    pub fn upper(name: impl Into<String>, bound: f64, observed: f64) -> Self {
        Self::with_slack(name, bound, observed, NUMERICAL_SLACK * bound.abs())
    }

    pub fn with_slack(name: impl Into<String>, bound: f64, observed: f64, slack: f64) -> Self {
        let margin = bound - observed;
        let pass = if bound == f64::INFINITY {
            observed < f64::INFINITY
        } else {
            margin >= -slack
        };
        Self {
            name: name.into(),
            bound,
            observed,
            margin,
            pass,
        }
    }
}

/// `C(t, φ₀) = 2 exp(t + c²t³/3) exp(R²t + cRt²)`.
pub fn c_constant(t: f64, r: f64, c: f64) -> f64 {
    ln_c_constant(t, r, c).exp()
}

/// `ln C(t, φ₀)`, finite even where `C` itself overflows.
pub fn ln_c_constant(t: f64, r: f64, c: f64) -> f64 {
    std::f64::consts::LN_2 + t + c * c * t * t * t / 3.0 + r * r * t + c * r * t * t
}

/// Smallest `R` with `∫_{|x|<R} φ₀ ≥ 1/2`, by bisection on the CDF of the
/// piecewise-linear interpolant of the samples.
pub fn radius_r(phi0: &DensityField) -> Result<f64, FieldError> {
    let grid = phi0.grid();
    let v = phi0.values();
    let h = grid.spacing();
    let mut cum = Vec::with_capacity(v.len());
    let mut acc = 0.0;
    cum.push(0.0);
    for w in v.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        cum.push(acc);
    }
    let total = acc;
    if total < 0.5 {
        return Err(FieldError::HalfMass(total));
    }
    if (total - 1.0).abs() > 1e-6 {
        log::warn!("half-mass radius of a density with mass {total}");
    }

    let cdf = |x: f64| -> f64 {
        if x <= grid.x_min() {
            return 0.0;
        }
        if x >= grid.x_max() {
            return total;
        }
        let pos = (x - grid.x_min()) / h;
        let i = (pos.floor() as usize).min(v.len() - 2);
        let s = x - grid.node(i);
        cum[i] + v[i] * s + (v[i + 1] - v[i]) * s * s / (2.0 * h)
    };
    let central = |r: f64| cdf(r) - cdf(-r);

    let mut lo = 0.0;
    let mut hi = grid.x_min().abs().max(grid.x_max().abs());
    if central(hi) < 0.5 {
        return Err(FieldError::HalfMass(central(hi)));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if central(mid) >= 0.5 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Everything the estimates need from the initial data and the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AprioriConstants {
    pub t_final: f64,
    pub r_phi0: f64,
    pub c: f64,
    pub u: f64,
    /// `ln C(T, φ₀)`.
    pub ln_c_final: f64,
    #[serde(serialize_with = "ser_f64")]
    pub c_final: f64,
    pub dbar_budget: f64,
    pub c_f: f64,
    pub m4_initial: f64,
    pub phi0_norms: SupNorms,
    pub kernel_peak: f64,
    pub kernel_p2: f64,
    pub kernel_p4: f64,
}

impl AprioriConstants {
    pub fn new(phi0: &DensityField, params: &ModelParams) -> Result<Self, FieldError> {
        let r = radius_r(phi0)?;
        let t = params.t_final();
        let c = params.c();
        let ln_c = ln_c_constant(t, r, c);
        let kernel = params.kernel();
        Ok(Self {
            t_final: t,
            r_phi0: r,
            c,
            u: params.u(),
            ln_c_final: ln_c,
            c_final: ln_c.exp(),
            dbar_budget: ln_c / (1.0 - params.u()),
            c_f: kernel.c_f(),
            m4_initial: phi0.moment(4)?,
            phi0_norms: phi0.sup_norms(),
            kernel_peak: kernel.peak(),
            kernel_p2: kernel.p2(),
            kernel_p4: kernel.p4(),
        })
    }

    pub fn c_of_t(&self, t: f64) -> f64 {
        c_constant(t, self.r_phi0, self.c)
    }

    /// `ln C(t, φ₀) / (1 - U)`, the bound on `∫_0^t d̄`.
    pub fn budget_at(&self, t: f64) -> f64 {
        ln_c_constant(t, self.r_phi0, self.c) / (1.0 - self.u)
    }

    /// `ln` of the Gronwall envelope `M_4(0) C exp(16 C_f C ∫_0^t d̄)`.
    pub fn ln_envelope(&self, dbar_integral: f64) -> f64 {
        let growth = GRONWALL_FACTOR * self.c_f * self.c_final * dbar_integral;
        // 0 · inf when C_f = 0 contributes nothing
        let growth = if growth.is_nan() { 0.0 } else { growth };
        self.m4_initial.ln() + self.ln_c_final + growth
    }

    pub fn envelope(&self, dbar_integral: f64) -> f64 {
        self.ln_envelope(dbar_integral).exp()
    }
}

/// Budget on the mean mortality: trapezoid `∫_0^T d̄ ≤ ln C(T, φ₀)/(1-U)`.
pub fn check_dbar_budget(traj: &Trajectory, consts: &AprioriConstants) -> CertificateRecord {
    let integral = traj.dbar_integral().last().copied().unwrap_or(0.0);
    CertificateRecord::upper("dbar_budget", consts.dbar_budget, integral)
}

/// The moment inequalities `|M_n| ≤ 1 + M_{n+2}` (n even), `|M_n| ≤ 1 + M_{n+1}`
/// (n odd) and `|M_i| ≤ 2 + M_4`, from the raw moments `[M_0, M_1..M_4]`.
pub fn moment_inequalities(m: [f64; 5]) -> Vec<CertificateRecord> {
    let slack = NUMERICAL_SLACK;
    let rec = |name: &str, bound: f64, observed: f64| {
        CertificateRecord::with_slack(name, bound, observed, slack * bound.abs().max(1.0))
    };
    let mut out = vec![
        rec("moment_m0_even", 1.0 + m[2], m[0].abs()),
        rec("moment_m1_odd", 1.0 + m[2], m[1].abs()),
        rec("moment_m2_even", 1.0 + m[4], m[2].abs()),
        rec("moment_m3_odd", 1.0 + m[4], m[3].abs()),
    ];
    for i in 1..=4 {
        out.push(rec(
            &format!("moment_m{i}_le_2_plus_m4"),
            2.0 + m[4],
            m[i].abs(),
        ));
    }
    out
}

pub fn check_moment_inequalities(field: &DensityField) -> Vec<CertificateRecord> {
    moment_inequalities(field.moments4())
}

/// `M_4(t)` against the Gronwall envelope at every recorded time. Reports the
/// tightest point.
pub fn check_gronwall_envelope(traj: &Trajectory, consts: &AprioriConstants) -> CertificateRecord {
    let integral = traj.dbar_integral();
    let mut worst: Option<CertificateRecord> = None;
    for (row, int) in traj.rows.iter().zip(integral) {
        let rec = CertificateRecord::upper("gronwall_m4", consts.envelope(int), row.moments[3]);
        let replace = match &worst {
            None => true,
            Some(w) => !rec.pass && w.pass || (rec.pass == w.pass && rec.margin < w.margin),
        };
        if replace {
            worst = Some(rec);
        }
    }
    worst.unwrap_or_else(|| CertificateRecord::upper("gronwall_m4", f64::INFINITY, 0.0))
}

/// The three weighted sup-norm bounds evaluated on the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupNormBounds {
    pub p0: f64,
    pub p2: f64,
    pub p4: f64,
}

/// `P_0`, `P_2`, `P_4` from `∫_0^T d̄` and the suprema of `M_2`, `M_4` over the run.
pub fn supnorm_bounds(
    consts: &AprioriConstants,
    u: f64,
    dbar_integral: f64,
    sup_m2: f64,
    sup_m4: f64,
) -> SupNormBounds {
    let c = consts.c_final;
    let source = c * u * dbar_integral;
    let peak = consts.kernel_peak;
    let p0 = c * consts.phi0_norms.p0 + source * peak;
    // ‖x² f⋆φ‖ ≤ 2‖f‖ M_2 + 2 p_2(f)
    let p2 = c * consts.phi0_norms.p2 + source * (2.0 * peak * sup_m2 + 2.0 * consts.kernel_p2);
    // from x⁴ ≤ 5y⁴ + 5(x-y)⁴ + 6y²(x-y)²
    let p4 = c * consts.phi0_norms.p4
        + source * (5.0 * peak * sup_m4 + 6.0 * sup_m2 * consts.kernel_p2 + 5.0 * consts.kernel_p4);
    SupNormBounds { p0, p2, p4 }
}

pub fn check_supnorm_bounds(
    traj: &Trajectory,
    consts: &AprioriConstants,
    params: &ModelParams,
) -> Vec<CertificateRecord> {
    let integral = traj.dbar_integral().last().copied().unwrap_or(0.0);
    let sup = |f: fn(&TrajectoryRow) -> f64| traj.rows.iter().map(f).fold(0.0, f64::max);
    let sup_m2 = sup(|r| r.moments[1]);
    let sup_m4 = sup(|r| r.moments[3]);
    let bounds = supnorm_bounds(consts, params.u(), integral, sup_m2, sup_m4);
    vec![
        CertificateRecord::upper("supnorm_p0", bounds.p0, sup(|r| r.norms.p0)),
        CertificateRecord::upper("supnorm_p2", bounds.p2, sup(|r| r.norms.p2)),
        CertificateRecord::upper("supnorm_p4", bounds.p4, sup(|r| r.norms.p4)),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport {
    pub schema_version: u32,
    pub constants: AprioriConstants,
    pub t_end: f64,
    pub records: Vec<CertificateRecord>,
}

impl CertificateReport {
    pub fn all_pass(&self) -> bool {
        self.records.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CertificateRecord> {
        self.records.iter().filter(|r| !r.pass)
    }
}

/// Worst-margin moment inequality records across all trajectory rows.
fn worst_moment_records(traj: &Trajectory) -> Vec<CertificateRecord> {
    let mut worst: Vec<CertificateRecord> = Vec::new();
    for row in &traj.rows {
        let m = [
            row.mass,
            row.moments[0],
            row.moments[1],
            row.moments[2],
            row.moments[3],
        ];
        let recs = moment_inequalities(m);
        if worst.is_empty() {
            worst = recs;
            continue;
        }
        for (w, r) in worst.iter_mut().zip(recs) {
            if (!r.pass && w.pass) || (r.pass == w.pass && r.margin < w.margin) {
                *w = r;
            }
        }
    }
    worst
}

/// Full post-run report.
pub fn certify_trajectory(
    traj: &Trajectory,
    consts: &AprioriConstants,
    params: &ModelParams,
) -> CertificateReport {
    let mut records = vec![check_dbar_budget(traj, consts)];
    records.extend(worst_moment_records(traj));
    records.push(check_gronwall_envelope(traj, consts));
    records.extend(check_supnorm_bounds(traj, consts, params));
    CertificateReport {
        schema_version: REPORT_SCHEMA_VERSION,
        constants: *consts,
        t_end: traj.t_end(),
        records,
    }
}

/// Checks on the initial data alone: moment inequalities on `φ₀`.
pub fn certify_initial(phi0: &DensityField, consts: &AprioriConstants) -> CertificateReport {
    let mut records = check_moment_inequalities(phi0);
    records.push(CertificateRecord::upper(
        "c_constant_at_zero",
        2.0,
        consts.c_of_t(0.0),
    ));
    CertificateReport {
        schema_version: REPORT_SCHEMA_VERSION,
        constants: *consts,
        t_end: 0.0,
        records,
    }
}

/// Cheap checks run while stepping. Returns the failing certificate name and margin.
pub(crate) fn in_run_checks(
    consts: &AprioriConstants,
    field: &DensityField,
    row: &TrajectoryRow,
    dbar_integral: f64,
    _params: &ModelParams,
) -> Result<(), (String, f64)> {
    let budget = CertificateRecord::upper(
        "dbar_budget_running",
        consts.budget_at(row.t),
        dbar_integral,
    );
    let envelope = CertificateRecord::upper(
        "gronwall_m4_running",
        consts.envelope(dbar_integral),
        row.moments[3],
    );
    for rec in check_moment_inequalities(field)
        .into_iter()
        .chain([budget, envelope])
    {
        if !rec.pass {
            return Err((rec.name, rec.margin));
        }
    }
    Ok(())
}
