//! Subcommand orchestration shared by the binary and the integration tests.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::certificates::{
    certify_initial, certify_trajectory, AprioriConstants, CertificateReport,
};
use crate::config::{ConfigError, RawConfig, RunConfig};
use crate::integrator::{run, RunError, Trajectory};
use crate::output;
use crate::waveframe::{wave_convergence, WaveError, WaveReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BOUNDARY_ESCAPE: i32 = 3;
pub const EXIT_PICARD_DIVERGENCE: i32 = 4;
pub const EXIT_POSITIVITY: i32 = 5;
pub const EXIT_CERTIFICATE: i32 = 6;
pub const EXIT_MASS_DRIFT: i32 = 7;
pub const EXIT_OVERFLOW: i32 = 8;

#[derive(Debug, Error)]
pub enum Failure {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Run(#[from] RunError),
    #[error("certificate violation: {}", .0.join(", "))]
    Certificates(Vec<String>),
    #[error("wave diagnostics: {0}")]
    Wave(#[from] WaveError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Run(e) => match e {
                RunError::InvalidInput(_) => EXIT_CONFIG,
                RunError::BoundaryEscape { .. } => EXIT_BOUNDARY_ESCAPE,
                RunError::PicardDivergence { .. } => EXIT_PICARD_DIVERGENCE,
                RunError::PositivityViolation { .. } => EXIT_POSITIVITY,
                RunError::CertificateViolation { .. } => EXIT_CERTIFICATE,
                RunError::MassDrift { .. } => EXIT_MASS_DRIFT,
                RunError::ExponentOverflow { .. } => EXIT_OVERFLOW,
            },
            Failure::Certificates(_) => EXIT_CERTIFICATE,
            Failure::Wave(_) => EXIT_CONFIG,
            Failure::Io(_) => EXIT_IO,
        }
    }
}

pub fn load_config(path: &Path) -> Result<(RawConfig, RunConfig), Failure> {
    let text = fs::read_to_string(path)?;
    let raw = RawConfig::parse(&text)?;
    let cfg = RunConfig::from_raw(&raw)?;
    Ok((raw, cfg))
}

#[derive(Debug, Clone)]
pub struct SimulateOutcome {
    pub trajectory: Trajectory,
    pub report: CertificateReport,
}

fn write_certificates(dir: &Path, report: &CertificateReport) -> io::Result<()> {
    fs::write(
        dir.join("certificates.json"),
        output::certificates_json(report),
    )
}

/// Runs and writes `trajectory.csv`, `certificates.json` and `snapshots/`
/// under the configured output directory.
pub fn simulate(cfg: &RunConfig) -> Result<SimulateOutcome, Failure> {
    let phi0 = cfg.initial_density()?;
    let traj = run(&cfg.params, &cfg.step, &phi0, &cfg.options)?;
    let consts = AprioriConstants::new(&phi0, &cfg.params)
        .map_err(|e| RunError::InvalidInput(e.to_string()))?;
    let report = certify_trajectory(&traj, &consts, &cfg.params);

    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    output::write_trajectory_csv(&traj, fs::File::create(dir.join("trajectory.csv"))?)?;
    let snap_dir = dir.join("snapshots");
    for snap in &traj.snapshots {
        output::write_snapshot(&snap_dir, snap)?;
    }
    write_certificates(dir, &report)?;

    if !report.all_pass() {
        return Err(Failure::Certificates(
            report.failures().map(|r| r.name.clone()).collect(),
        ));
    }
    Ok(SimulateOutcome {
        trajectory: traj,
        report,
    })
}

/// Constants and initial-data checks only; no time stepping.
pub fn certify(cfg: &RunConfig) -> Result<CertificateReport, Failure> {
    let phi0 = cfg.initial_density()?;
    let consts = AprioriConstants::new(&phi0, &cfg.params)
        .map_err(|e| RunError::InvalidInput(e.to_string()))?;
    let report = certify_initial(&phi0, &consts);
    fs::create_dir_all(&cfg.output_dir)?;
    write_certificates(&cfg.output_dir, &report)?;
    if !report.all_pass() {
        return Err(Failure::Certificates(
            report.failures().map(|r| r.name.clone()).collect(),
        ));
    }
    Ok(report)
}

/// `simulate` followed by the moving-frame analysis, written to `wave.csv`.
pub fn wave(cfg: &RunConfig) -> Result<(SimulateOutcome, WaveReport), Failure> {
    let outcome = simulate(cfg)?;
    let report = wave_convergence(
        &outcome.trajectory.snapshots,
        cfg.params.c(),
        cfg.wave_threshold,
    )?;
    output::write_wave_csv(&report, fs::File::create(cfg.output_dir.join("wave.csv"))?)?;
    Ok((outcome, report))
}

/// A parsed `key=lo:hi:n` sweep request.
#[derive(Debug, Clone, PartialEq)]
pub struct Vary {
    pub key: String,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Vary {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let bad = || ConfigError {
            line: None,
            message: format!("--vary expects key=lo:hi:n, got `{text}`"),
        };
        let (key, range) = text.split_once('=').ok_or_else(bad)?;
        let parts: Vec<&str> = range.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo = parts[0].trim().parse().map_err(|_| bad())?;
        let hi = parts[1].trim().parse().map_err(|_| bad())?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        if n == 0 {
            return Err(bad());
        }
        Ok(Self {
            key: key.trim().to_string(),
            lo,
            hi,
            n,
        })
    }

    pub fn values(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.lo];
        }
        let step = (self.hi - self.lo) / (self.n - 1) as f64;
        (0..self.n)
            .map(|i| {
                if i + 1 == self.n {
                    self.hi
                } else {
                    self.lo + i as f64 * step
                }
            })
            .collect()
    }
}

#[derive(Debug)]
pub struct SweepPoint {
    pub value: f64,
    pub dir: PathBuf,
    pub result: Result<(), Failure>,
}

/// Independent runs in parallel, one output directory per point.
pub fn sweep(raw: &RawConfig, vary: &Vary) -> Result<Vec<SweepPoint>, Failure> {
    let base = RunConfig::from_raw(raw)?;
    let mut configs = Vec::with_capacity(vary.n);
    for (i, value) in vary.values().into_iter().enumerate() {
        let mut raw = raw.clone();
        raw.set(&vary.key, output::fmt_f64(value))?;
        let dir = base.output_dir.join(format!("{}_{i:03}", vary.key));
        let cfg = RunConfig::from_raw(&raw).map(|mut c| {
            c.output_dir = dir.clone();
            c
        });
        configs.push((value, dir, cfg));
    }
    Ok(configs
        .into_par_iter()
        .map(|(value, dir, cfg)| {
            let result = cfg
                .map_err(Failure::from)
                .and_then(|c| simulate(&c).map(|_| ()));
            SweepPoint { value, dir, result }
        })
        .collect())
}

/// 0 iff every point completed; otherwise the code of the first failure.
pub fn sweep_exit_code(points: &[SweepPoint]) -> i32 {
    points
        .iter()
        .find_map(|p| p.result.as_ref().err().map(Failure::exit_code))
        .unwrap_or(EXIT_OK)
}
