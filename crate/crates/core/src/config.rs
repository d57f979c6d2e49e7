//! Run configuration (TOML) and initial-data generation.
//!
//! ```toml
//! model = "a2"            # a2 | a1 | isothermal
//! output_dir = "out"
//! eps0 = 0.5
//!
//! [grid]
//! dim = 2
//! n = 64
//! box_len = 6.283185307179586
//!
//! [params]
//! eps = 0.3
//! theta_bar = 3.0
//!
//! [time]
//! dt = 1e-4
//! t_end = 1e-2
//!
//! [init]
//! kind = "spinodal"
//! amplitude = 0.05
//! seed = 42
//!
//! [theta_init]
//! kind = "constant"
//! ```
//!
//! Every key outside `[grid]` has a default; unknown keys are rejected.

use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};
use crate::io;
use crate::model_a2::{Coupling, SimConfig, DT_CAP};
use crate::picard::PicardConfig;
use crate::thermo::{Model, ModelParams, ThermoState};

/// Which system is evolved; `isothermal` is A2 with `θ ≡ θ̄`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunModel {
    #[default]
    A2,
    A1,
    Isothermal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    pub n: usize,
    #[serde(default = "default_box_len")]
    pub box_len: f64,
}

fn default_dim() -> usize {
    2
}
fn default_box_len() -> f64 {
    std::f64::consts::TAU
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamsConfig {
    pub eps: f64,
    pub theta_bar: f64,
    pub alpha: f64,
    pub kappa: f64,
    pub k_b: f64,
    pub a1_reg: f64,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        let p = ModelParams::default();
        Self {
            eps: p.eps,
            theta_bar: p.theta_bar,
            alpha: p.alpha,
            kappa: p.kappa,
            k_b: p.k_b,
            a1_reg: p.a1_reg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeConfig {
    pub dt: f64,
    pub t_end: f64,
    pub output_every: usize,
    pub dealias: bool,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            t_end: 1e-2,
            output_every: 10,
            dealias: true,
        }
    }
}

/// Initial phase field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitConfig {
    /// `tanh((x−L/4)/w) − tanh((x−3L/4)/w) − 1` along the first axis.
    TanhStripe { width: f64 },
    /// Uniform noise in `[−a, a]`, mean removed, then `mean` added.
    Spinodal {
        amplitude: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        mean: f64,
    },
    /// `amplitude·cos(k·2π x/L)` along the first axis.
    SingleMode { k: u32, amplitude: f64 },
    FromFile { path: PathBuf },
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig::Spinodal {
            amplitude: 0.05,
            seed: 0,
            mean: 0.0,
        }
    }
}

/// Initial temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThetaInitConfig {
    /// `value`, or `θ̄` when absent.
    Constant {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        value: Option<f64>,
    },
    /// `θ̄ + a·sin(k·2π x/L)` along the first axis.
    ConstantPlusSine { a: f64, k: u32 },
    FromFile { path: PathBuf },
}

impl Default for ThetaInitConfig {
    fn default() -> Self {
        ThetaInitConfig::Constant { value: None }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_eps0() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: RunModel,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_eps0")]
    pub eps0: f64,
    pub grid: GridConfig,
    #[serde(default)]
    pub params: ParamsConfig,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub theta_init: ThetaInitConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub picard: Option<PicardConfig>,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_canonical(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid.dim, self.grid.n, self.grid.box_len).map_err(|e| Error::Config(format!("grid: {e}")))
    }

    pub fn model_params(&self) -> ModelParams {
        let c = &self.params;
        ModelParams {
            eps: c.eps,
            theta_bar: c.theta_bar,
            alpha: c.alpha,
            kappa: c.kappa,
            k_b: c.k_b,
            model: if self.model == RunModel::A1 { Model::A1 } else { Model::A2 },
            a1_reg: c.a1_reg,
        }
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let mut sim = SimConfig::new(self.grid_spec()?, self.model_params(), self.time.dt, self.time.t_end);
        sim.output_every = self.time.output_every;
        sim.dealias = self.time.dealias;
        sim.coupling = if self.model == RunModel::Isothermal {
            Coupling::FrozenTheta
        } else {
            Coupling::Full
        };
        Ok(sim)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid_spec()?;
        self.model_params()
            .validate()
            .map_err(|e| Error::Config(format!("params.{}", strip_prefix(e))))?;
        let t = &self.time;
        positive("time.dt", t.dt)?;
        if t.dt > DT_CAP {
            return Err(Error::Config(format!("time.dt must not exceed {DT_CAP}, got {}", t.dt)));
        }
        if !(t.t_end.is_finite() && t.t_end >= t.dt) {
            return Err(Error::Config(format!("time.t_end must be at least dt = {}, got {}", t.dt, t.t_end)));
        }
        if t.output_every == 0 {
            return Err(Error::Config("time.output_every must be at least 1".into()));
        }
        if !(self.eps0 > 0.0 && self.eps0 < 1.0) {
            return Err(Error::Config(format!("eps0 must lie in (0, 1), got {}", self.eps0)));
        }
        match &self.init {
            InitConfig::TanhStripe { width } => {
                positive("init.width", *width)?;
                let h = grid.spacing();
                if *width < 2.0 * h {
                    return Err(Error::Config(format!(
                        "init.width = {width} is under-resolved: must be at least 2h = {}",
                        2.0 * h
                    )));
                }
            }
            InitConfig::Spinodal { amplitude, mean, .. } => {
                if !(amplitude.is_finite() && *amplitude >= 0.0) {
                    return Err(Error::Config(format!("init.amplitude must be >= 0, got {amplitude}")));
                }
                if !mean.is_finite() {
                    return Err(Error::Config(format!("init.mean must be finite, got {mean}")));
                }
            }
            InitConfig::SingleMode { k, amplitude } => {
                if 2 * (*k as usize) >= grid.n() {
                    return Err(Error::Config(format!("init.k = {k} is not resolved on n = {}", grid.n())));
                }
                if !amplitude.is_finite() {
                    return Err(Error::Config(format!("init.amplitude must be finite, got {amplitude}")));
                }
            }
            InitConfig::FromFile { .. } => {}
        }
        match &self.theta_init {
            ThetaInitConfig::Constant { value: Some(v) } => positive("theta_init.value", *v)?,
            ThetaInitConfig::ConstantPlusSine { a, k } => {
                if !(a.abs() < self.params.theta_bar) {
                    return Err(Error::Config(format!(
                        "theta_init.a = {a} would make the temperature non-positive (theta_bar = {})",
                        self.params.theta_bar
                    )));
                }
                if 2 * (*k as usize) >= grid.n() {
                    return Err(Error::Config(format!("theta_init.k = {k} is not resolved on n = {}", grid.n())));
                }
            }
            _ => {}
        }
        if let Some(pc) = &self.picard {
            pc.validate()?;
        }
        Ok(())
    }

    /// Relative `from_file` paths are taken relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let InitConfig::FromFile { path } = &mut self.init {
            fix(path);
        }
        if let ThetaInitConfig::FromFile { path } = &mut self.theta_init {
            fix(path);
        }
    }

    /// Replaces the spinodal seed, if the init uses one.
    pub fn override_seed(&mut self, new_seed: u64) {
        if let InitConfig::Spinodal { seed, .. } = &mut self.init {
            *seed = new_seed;
        }
    }
}

fn strip_prefix(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = RunConfig::parse(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}

/// Uniform samples in `[0, 1)` from the top 53 bits of xoshiro256++ output.
pub fn uniform_samples(seed: u64, count: usize) -> Vec<f64> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    (0..count)
        .map(|_| (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64))
        .collect()
}

fn load_on(path: &Path, grid: GridSpec, what: &str) -> Result<Field> {
    let f = io::read_field(path)?;
    if *f.grid() != grid {
        return Err(Error::GridMismatch(format!(
            "{what} file {} holds {}, config asks for {grid}",
            path.display(),
            f.grid()
        )));
    }
    Ok(f)
}

pub fn initial_phi(cfg: &RunConfig) -> Result<Field> {
    let g = cfg.grid_spec()?;
    let l = g.box_len();
    Ok(match &cfg.init {
        InitConfig::TanhStripe { width } => Field::from_fn(g, |x| {
            ((x[0] - l / 4.0) / width).tanh() - ((x[0] - 3.0 * l / 4.0) / width).tanh() - 1.0
        }),
        InitConfig::Spinodal { amplitude, seed, mean } => {
            let raw: Vec<f64> = uniform_samples(*seed, g.len())
                .into_iter()
                .map(|u| amplitude * (2.0 * u - 1.0))
                .collect();
            let m = raw.iter().sum::<f64>() / raw.len() as f64;
            Field::new(g, raw.into_iter().map(|v| v - m + mean).collect())?
        }
        InitConfig::SingleMode { k, amplitude } => {
            let kk = *k as f64 * g.dk();
            Field::from_fn(g, |x| amplitude * (kk * x[0]).cos())
        }
        InitConfig::FromFile { path } => load_on(path, g, "init")?,
    })
}

pub fn initial_theta(cfg: &RunConfig) -> Result<Field> {
    let g = cfg.grid_spec()?;
    let tb = cfg.params.theta_bar;
    Ok(match &cfg.theta_init {
        ThetaInitConfig::Constant { value } => Field::constant(g, value.unwrap_or(tb)),
        ThetaInitConfig::ConstantPlusSine { a, k } => {
            let kk = *k as f64 * g.dk();
            Field::from_fn(g, |x| tb + a * (kk * x[0]).sin())
        }
        ThetaInitConfig::FromFile { path } => load_on(path, g, "theta_init")?,
    })
}

/// Initial state at rest (zero rate caches).
pub fn generate_initial(cfg: &RunConfig) -> Result<ThermoState> {
    Ok(ThermoState::new(initial_phi(cfg)?, initial_theta(cfg)?)?.at_rest())
}
