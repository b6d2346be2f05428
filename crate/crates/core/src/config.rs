//! Flat `key = value` run configuration.
//!
//! ```text
//! # baseline
//! u = 0.1
//! c = 0.1
//! m = 0
//! sigma = 0.05
//! t_final = 5
//! x_max = 9
//! phi0 = gaussian(0, 0.04)
//! ```
//!
//! Initial data families: `gaussian(mean, variance)`, `uniform(a, b)` and
//! `mixture(weight, mean1, var1, mean2, var2)`. Sampled initial data is scaled
//! to unit quadrature mass.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use crate::grid::{normal_pdf, DensityField, Grid};
use crate::integrator::{RunOptions, Scheme, StepConfig};
use crate::kernel::{ConvolutionMethod, MutationKernel};
use crate::selection::ModelParams;
use crate::waveframe::DEFAULT_WAVE_THRESHOLD;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            message: message.into(),
        }
    }

    fn general(message: impl Into<String>) -> Self {
        Self {
            line: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

const KNOWN_KEYS: &[&str] = &[
    "u",
    "c",
    "m",
    "sigma",
    "t_final",
    "x_min",
    "x_max",
    "n_points",
    "dt",
    "picard_tol",
    "picard_max_iters",
    "scheme",
    "convolution",
    "phi0",
    "output_dir",
    "snapshot_stride",
    "certificate_stride",
    "boundary_margin_cells",
    "boundary_tol",
    "mass_tol",
    "wave_threshold",
];

const REQUIRED_KEYS: &[&str] = &["u", "c", "sigma", "t_final"];

/// Key/value pairs as written, with their line numbers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, (usize, String)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| {
                ConfigError::at(lineno, format!("expected `key = value`, got `{content}`"))
            })?;
            let key = key.trim().to_ascii_lowercase();
            let value = value.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(ConfigError::at(lineno, format!("unknown key `{key}`")));
            }
            if value.is_empty() {
                return Err(ConfigError::at(lineno, format!("key `{key}` has no value")));
            }
            if let Some((first, _)) = entries.get(&key) {
                return Err(ConfigError::at(
                    lineno,
                    format!("duplicate key `{key}` (lines {first} and {lineno})"),
                ));
            }
            entries.insert(key, (lineno, value));
        }
        Ok(Self { entries })
    }

    /// Overrides (or adds) a key, as a sweep does.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), ConfigError> {
        let key = key.to_ascii_lowercase();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(ConfigError::general(format!("unknown key `{key}`")));
        }
        let line = self.entries.get(&key).map_or(0, |(l, _)| *l);
        self.entries.insert(key, (line, value.into()));
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    fn line(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|(l, _)| *l).filter(|l| *l > 0)
    }

    fn err(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            line: self.line(key),
            message: message.into(),
        }
    }

    fn number(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.get(key)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| self.err(key, format!("`{key}` expects a number, got `{v}`")))
            })
            .transpose()
    }

    fn integer(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        self.get(key)
            .map(|v| {
                v.parse::<usize>().map_err(|_| {
                    self.err(
                        key,
                        format!("`{key}` expects a non-negative integer, got `{v}`"),
                    )
                })
            })
            .transpose()
    }
}

/// Initial data families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialCondition {
    Gaussian {
        mean: f64,
        var: f64,
    },
    Uniform {
        a: f64,
        b: f64,
    },
    Mixture {
        weight: f64,
        mean1: f64,
        var1: f64,
        mean2: f64,
        var2: f64,
    },
}

impl Default for InitialCondition {
    fn default() -> Self {
        Self::Gaussian {
            mean: 0.0,
            var: 0.04,
        }
    }
}

impl InitialCondition {
    pub fn parse(text: &str) -> Result<Self, String> {
        let text = text.trim();
        let open = text.find('(').ok_or("expected `family(args)`")?;
        if !text.ends_with(')') {
            return Err("missing closing parenthesis".into());
        }
        let family = text[..open].trim().to_ascii_lowercase();
        let args: Vec<f64> = text[open + 1..text.len() - 1]
            .split(',')
            .map(|a| {
                a.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("bad argument `{}`", a.trim()))
            })
            .collect::<Result<_, _>>()?;
        let want = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(format!("{family} takes {n} arguments, got {}", args.len()))
            }
        };
        let ic = match family.as_str() {
            "gaussian" => {
                want(2)?;
                Self::Gaussian {
                    mean: args[0],
                    var: args[1],
                }
            }
            "uniform" => {
                want(2)?;
                Self::Uniform {
                    a: args[0],
                    b: args[1],
                }
            }
            "mixture" => {
                want(5)?;
                Self::Mixture {
                    weight: args[0],
                    mean1: args[1],
                    var1: args[2],
                    mean2: args[3],
                    var2: args[4],
                }
            }
            other => return Err(format!("unknown initial family `{other}`")),
        };
        ic.validate()?;
        Ok(ic)
    }

    fn validate(&self) -> Result<(), String> {
        match *self {
            Self::Gaussian { var, .. } if !(var > 0.0) => Err("variance must be > 0".into()),
            Self::Uniform { a, b } if !(a < b) => Err("uniform(a, b) needs a < b".into()),
            Self::Mixture {
                weight, var1, var2, ..
            } if !(weight > 0.0 && weight < 1.0 && var1 > 0.0 && var2 > 0.0) => {
                Err("mixture needs 0 < weight < 1 and positive variances".into())
            }
            _ => Ok(()),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Self::Gaussian { mean, var } => normal_pdf(x, mean, var),
            Self::Uniform { a, b } => {
                if (a..=b).contains(&x) {
                    1.0 / (b - a)
                } else {
                    0.0
                }
            }
            Self::Mixture {
                weight,
                mean1,
                var1,
                mean2,
                var2,
            } => weight * normal_pdf(x, mean1, var1) + (1.0 - weight) * normal_pdf(x, mean2, var2),
        }
    }

    /// Samples on `grid` and scales to unit quadrature mass.
    pub fn sample(&self, grid: Grid) -> Result<DensityField, String> {
        let raw = grid.sample(|x| self.pdf(x));
        let mass = crate::grid::quadrature_moment(&grid, &raw, 0);
        if !(mass > 0.0) {
            return Err("initial density has no mass on the grid".into());
        }
        DensityField::new(grid, raw.into_iter().map(|v| v / mass).collect())
            .map_err(|e| e.to_string())
    }
}

impl fmt::Display for InitialCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Gaussian { mean, var } => write!(f, "gaussian({mean}, {var})"),
            Self::Uniform { a, b } => write!(f, "uniform({a}, {b})"),
            Self::Mixture {
                weight,
                mean1,
                var1,
                mean2,
                var2,
            } => write!(f, "mixture({weight}, {mean1}, {var1}, {mean2}, {var2})"),
        }
    }
}

/// Everything needed for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: ModelParams,
    pub grid: Grid,
    pub step: StepConfig,
    pub options: RunOptions,
    pub phi0: InitialCondition,
    pub output_dir: PathBuf,
    pub wave_threshold: f64,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_raw(&RawConfig::parse(text)?)
    }

    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        for key in REQUIRED_KEYS {
            if raw.get(key).is_none() {
                return Err(ConfigError::general(format!(
                    "missing required key `{key}`"
                )));
            }
        }
        let num = |k: &str| raw.number(k).map(Option::unwrap);
        let u = num("u")?;
        let c = num("c")?;
        let sigma = num("sigma")?;
        let t_final = num("t_final")?;
        let m = raw.number("m")?.unwrap_or(0.0);

        let kernel = MutationKernel::new(m, sigma).map_err(|e| raw.err("sigma", e.to_string()))?;
        let params = ModelParams::new(u, c, kernel, t_final).map_err(|e| {
            let key = match e {
                crate::selection::ParamError::MutationProbability(_) => "u",
                crate::selection::ParamError::Speed(_) => "c",
                crate::selection::ParamError::FinalTime(_) => "t_final",
            };
            raw.err(key, e.to_string())
        })?;

        let x_min = raw.number("x_min")?.unwrap_or(-8.0);
        let x_max = raw.number("x_max")?.unwrap_or(8.0 + c * t_final);
        let n_points = raw.integer("n_points")?.unwrap_or(2048);
        let grid =
            Grid::new(x_min, x_max, n_points).map_err(|e| raw.err("n_points", e.to_string()))?;

        let defaults = StepConfig::default();
        let scheme = match raw.get("scheme") {
            None => defaults.scheme,
            Some("picard_exponential") => Scheme::PicardExponential,
            Some("rk4_reference") => Scheme::Rk4Reference,
            Some(other) => {
                return Err(raw.err(
                    "scheme",
                    format!("scheme must be picard_exponential or rk4_reference, got `{other}`"),
                ))
            }
        };
        let picard_max_iters = match raw.integer("picard_max_iters")? {
            None => defaults.picard_max_iters,
            Some(v) => {
                u32::try_from(v).map_err(|_| raw.err("picard_max_iters", "value too large"))?
            }
        };
        let step = StepConfig {
            dt: raw.number("dt")?.unwrap_or(defaults.dt),
            picard_tol: raw.number("picard_tol")?.unwrap_or(defaults.picard_tol),
            picard_max_iters,
            scheme,
        };
        step.validate().map_err(|msg| {
            let key = ["dt", "picard_tol", "picard_max_iters"]
                .into_iter()
                .find(|k| msg.starts_with(k))
                .unwrap_or("dt");
            raw.err(key, msg)
        })?;

        let base = RunOptions::default();
        let convolution = match raw.get("convolution") {
            None => base.convolution,
            Some("direct") => ConvolutionMethod::Direct,
            Some("spectral") => ConvolutionMethod::Spectral,
            Some(other) => {
                return Err(raw.err(
                    "convolution",
                    format!("convolution must be direct or spectral, got `{other}`"),
                ))
            }
        };
        let options = RunOptions {
            snapshot_stride: raw
                .integer("snapshot_stride")?
                .unwrap_or(base.snapshot_stride),
            certificate_stride: raw
                .integer("certificate_stride")?
                .unwrap_or(base.certificate_stride),
            boundary_margin_cells: raw
                .integer("boundary_margin_cells")?
                .unwrap_or(base.boundary_margin_cells),
            boundary_tol: raw.number("boundary_tol")?.unwrap_or(base.boundary_tol),
            mass_tol: raw.number("mass_tol")?.unwrap_or(base.mass_tol),
            convolution,
        };
        for key in ["snapshot_stride", "certificate_stride"] {
            if raw.integer(key)? == Some(0) {
                return Err(raw.err(key, format!("`{key}` must be >= 1")));
            }
        }
        if options.boundary_margin_cells >= n_points / 4 {
            return Err(raw.err(
                "boundary_margin_cells",
                "boundary_margin_cells must be below n_points/4",
            ));
        }

        let phi0 = match raw.get("phi0") {
            None => InitialCondition::default(),
            Some(text) => InitialCondition::parse(text).map_err(|e| raw.err("phi0", e))?,
        };
        let wave_threshold = raw
            .number("wave_threshold")?
            .unwrap_or(DEFAULT_WAVE_THRESHOLD);
        let output_dir = PathBuf::from(raw.get("output_dir").unwrap_or("out"));

        Ok(Self {
            params,
            grid,
            step,
            options,
            phi0,
            output_dir,
            wave_threshold,
        })
    }

    pub fn initial_density(&self) -> Result<DensityField, ConfigError> {
        self.phi0
            .sample(self.grid)
            .map_err(|e| ConfigError::general(format!("phi0: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "u = 0.1\nc = 0.1\nsigma = 0.05\nm = 0\nt_final = 5\n";

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.params.u(), 0.1);
        assert_eq!(cfg.grid.x_min(), -8.0);
        assert!((cfg.grid.x_max() - 8.5).abs() < 1e-15);
        assert_eq!(cfg.grid.n_points(), 2048);
        assert_eq!(cfg.step, StepConfig::default());
        assert_eq!(cfg.phi0, InitialCondition::default());
        assert_eq!(cfg.options.convolution, ConvolutionMethod::Spectral);
    }

    #[test]
    fn comments_and_blank_lines() {
        let text =
            "# header\n\nu = 0.1 # inline\nc=0\nsigma=0.05\nt_final=1\nphi0 = uniform(-1, 1)\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.phi0, InitialCondition::Uniform { a: -1.0, b: 1.0 });
    }

    #[test]
    fn mutation_probability_out_of_range() {
        let err = RunConfig::parse(&MINIMAL.replace("u = 0.1", "u = 1.5")).unwrap_err();
        assert_eq!(err.line, Some(1));
        assert!(err.message.contains("U must lie in (0,1)"), "{err}");
    }

    #[test]
    fn duplicate_key_names_both_lines() {
        let err = RunConfig::parse(&format!("{MINIMAL}u = 0.2\n")).unwrap_err();
        assert_eq!(err.line, Some(6));
        assert!(err.message.contains("lines 1 and 6"), "{err}");
    }

    #[test]
    fn unknown_and_malformed() {
        let err = RunConfig::parse(&format!("{MINIMAL}speed = 3\n")).unwrap_err();
        assert!(err.message.contains("unknown key `speed`"));
        let err = RunConfig::parse(&format!("{MINIMAL}dt\n")).unwrap_err();
        assert_eq!(err.line, Some(6));
        let err = RunConfig::parse(&MINIMAL.replace("c = 0.1", "c = fast")).unwrap_err();
        assert_eq!(err.line, Some(2));
        let err = RunConfig::parse("u = 0.1\n").unwrap_err();
        assert!(err.message.contains("missing required key"));
        let err = RunConfig::parse(&format!("{MINIMAL}dt = 0.5\n")).unwrap_err();
        assert_eq!(err.line, Some(6));
        let err = RunConfig::parse(&format!("{MINIMAL}snapshot_stride = 0\n")).unwrap_err();
        assert_eq!(err.line, Some(6));
    }

    #[test]
    fn initial_families() {
        assert!(InitialCondition::parse("gaussian(0, 0.04)").is_ok());
        assert!(InitialCondition::parse("mixture(0.5, -1, 0.1, 1, 0.1)").is_ok());
        assert!(InitialCondition::parse("gaussian(0)").is_err());
        assert!(InitialCondition::parse("uniform(1, -1)").is_err());
        assert!(InitialCondition::parse("cauchy(0, 1)").is_err());
        let ic = InitialCondition::parse("uniform(-1, 1)").unwrap();
        let g = Grid::new(-8.0, 9.0, 2048).unwrap();
        let phi = ic.sample(g).unwrap();
        assert!((phi.integrate() - 1.0).abs() < 1e-14);
        let text = ic.to_string();
        assert_eq!(InitialCondition::parse(&text).unwrap(), ic);
    }

    #[test]
    fn sweep_override() {
        let mut raw = RawConfig::parse(MINIMAL).unwrap();
        raw.set("c", "0.5").unwrap();
        assert_eq!(RunConfig::from_raw(&raw).unwrap().params.c(), 0.5);
        assert!(raw.set("nope", "1").is_err());
    }
}
