//! Run configuration: flat `key = value` files layered over per-benchmark
//! presets.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::diffest::{DiffConfig, DiffMethod};
use crate::dynamics::{
    CartPoleParams, DoublePendulumParams, SliderCrankParams, SmsdParams, SystemParams, TmsdParams,
    SC_CRANK_ANGLE,
};
use crate::error::{Error, Result};
use crate::fnode::TrainConfig;
use crate::integrate::{Integrator, Scheme};
use crate::mpc::MpcConfig;
use crate::net::{Activation, Init};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Benchmark {
    Smsd,
    Tmsd,
    DoublePendulum,
    SliderCrank,
    CartPole,
}

impl Benchmark {
    pub const ALL: [Benchmark; 5] = [
        Benchmark::Smsd,
        Benchmark::Tmsd,
        Benchmark::DoublePendulum,
        Benchmark::SliderCrank,
        Benchmark::CartPole,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Smsd => "smsd",
            Benchmark::Tmsd => "tmsd",
            Benchmark::DoublePendulum => "dp",
            Benchmark::SliderCrank => "slider-crank",
            Benchmark::CartPole => "cartpole",
        }
    }

    /// Coordinates the network learns; `None` means all of them.
    pub fn minimal_coords(self) -> Option<&'static [usize]> {
        match self {
            Benchmark::SliderCrank => Some(&[SC_CRANK_ANGLE]),
            _ => None,
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "smsd" => Ok(Benchmark::Smsd),
            "tmsd" => Ok(Benchmark::Tmsd),
            "dp" | "double-pendulum" => Ok(Benchmark::DoublePendulum),
            "slider-crank" | "slidercrank" => Ok(Benchmark::SliderCrank),
            "cartpole" | "cart-pole" => Ok(Benchmark::CartPole),
            other => Err(Error::config(
                "benchmark",
                format!("unknown benchmark `{other}` (expected smsd, tmsd, dp, slider-crank or cartpole)"),
            )),
        }
    }
}

/// How cart-pole inputs are produced when generating data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlMode {
    /// `u ≡ 0`.
    Free,
    /// Analytic MPC plus a smooth multisine dither.
    MpcDither,
}

impl ControlMode {
    pub fn name(self) -> &'static str {
        match self {
            ControlMode::Free => "free",
            ControlMode::MpcDither => "mpc-dither",
        }
    }
}

impl FromStr for ControlMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "free" => Ok(ControlMode::Free),
            "mpc-dither" => Ok(ControlMode::MpcDither),
            other => Err(Error::invalid(format!("unknown control mode `{other}`"))),
        }
    }
}

/// Everything a run needs, with presets filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub benchmark: Benchmark,
    pub seed: u64,
    pub params: SystemParams,
    /// Initial positions; for the slider-crank just the crank angle.
    pub initial_q: Vec<f64>,
    pub initial_v: Vec<f64>,
    pub integrator: Scheme,
    pub dt: f64,
    pub train_steps: usize,
    pub test_steps: usize,
    pub diff: DiffConfig,
    pub train: TrainConfig,
    pub mpc: MpcConfig,
    pub mpc_steps: usize,
    pub control: ControlMode,
    /// Peak dither force, N.
    pub dither: f64,
}

impl RunConfig {
    /// Preset with the physical constants, splits and training settings of
    /// the benchmark.
    pub fn preset(benchmark: Benchmark, seed: u64) -> Self {
        use std::f64::consts::PI;
        let base_train = TrainConfig {
            seed,
            batch_size: Some(32),
            ..TrainConfig::default()
        };
        let (params, q0, v0, scheme, train_steps, test_steps, train) = match benchmark {
            Benchmark::Smsd => (
                SystemParams::Smsd(SmsdParams::default()),
                vec![1.0],
                vec![0.0],
                Scheme::Rk4,
                700,
                300,
                TrainConfig {
                    epochs: 500,
                    depth: 2,
                    decay_interval: 3,
                    ..base_train
                },
            ),
            Benchmark::Tmsd => (
                SystemParams::Tmsd(TmsdParams::default()),
                vec![1.0, 2.0, 3.0],
                vec![0.0; 3],
                Scheme::Rk4,
                300,
                100,
                TrainConfig {
                    epochs: 5000,
                    depth: 2,
                    decay_interval: 30,
                    ..base_train
                },
            ),
            Benchmark::DoublePendulum => (
                SystemParams::DoublePendulum(DoublePendulumParams::default()),
                vec![3.0 * PI / 7.0, 3.0 * PI / 4.0],
                vec![0.0; 2],
                Scheme::Rk4,
                300,
                100,
                TrainConfig {
                    epochs: 10000,
                    depth: 3,
                    lr_decay: 0.7,
                    decay_interval: 1000,
                    ..base_train
                },
            ),
            Benchmark::SliderCrank => (
                SystemParams::SliderCrank(SliderCrankParams::default()),
                vec![0.0],
                vec![0.0],
                Scheme::Rk4,
                1500,
                3000,
                TrainConfig {
                    epochs: 10000,
                    depth: 3,
                    decay_interval: 60,
                    ..base_train
                },
            ),
            Benchmark::CartPole => (
                SystemParams::CartPole(CartPoleParams::default()),
                vec![PI / 6.0, 1.0],
                vec![0.0; 2],
                Scheme::Midpoint,
                200,
                50,
                TrainConfig {
                    epochs: 10000,
                    depth: 3,
                    decay_interval: 60,
                    ..base_train
                },
            ),
        };
        // Short chaotic or actuated records suit finite differences better
        // than the spectral pipeline.
        let diff = match benchmark {
            Benchmark::DoublePendulum | Benchmark::CartPole => DiffConfig::finite_difference(),
            _ => DiffConfig::default(),
        };
        Self {
            benchmark,
            seed,
            params,
            initial_q: q0,
            initial_v: v0,
            integrator: scheme,
            dt: 0.01,
            train_steps,
            test_steps,
            diff,
            train,
            mpc: MpcConfig::default(),
            mpc_steps: 1000,
            control: ControlMode::Free,
            dither: 2.0,
        }
    }

    pub fn total_steps(&self) -> usize {
        self.train_steps + self.test_steps
    }

    pub fn integrator(&self) -> Result<Integrator> {
        Integrator::new(self.integrator, self.dt)
    }

    /// Number of coordinates the learned model sees.
    pub fn model_coords(&self) -> usize {
        match self.benchmark.minimal_coords() {
            Some(c) => c.len(),
            None => self.params.n_coords(),
        }
    }

    /// Replaces the seed everywhere it is used.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config("dt", format!("must be positive, got {}", self.dt)));
        }
        if self.train_steps == 0 {
            return Err(Error::config("train_steps", "must be at least 1"));
        }
        let n = self.model_coords();
        if self.initial_q.len() != n {
            return Err(Error::config(
                "initial_q",
                format!("expected {n} values, got {}", self.initial_q.len()),
            ));
        }
        if self.initial_v.len() != n {
            return Err(Error::config(
                "initial_v",
                format!("expected {n} values, got {}", self.initial_v.len()),
            ));
        }
        if self.initial_q.iter().chain(&self.initial_v).any(|v| !v.is_finite()) {
            return Err(Error::config("initial_q", "initial state must be finite"));
        }
        self.diff.validate().map_err(|e| Error::config("diff_method", e.to_string()))?;
        self.train.validate().map_err(|e| Error::config("epochs", e.to_string()))?;
        self.mpc.validate().map_err(|e| Error::config("mpc_horizon", e.to_string()))?;
        if !(self.dither.is_finite() && self.dither >= 0.0) {
            return Err(Error::config("dither", "must be non-negative"));
        }
        if self.control == ControlMode::MpcDither && self.benchmark != Benchmark::CartPole {
            return Err(Error::config("control", "only the cart-pole takes control inputs"));
        }
        Ok(())
    }

    /// Every key with its current value, in a form [`parse_config_str`]
    /// reads back to an identical config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let mut e: Vec<(&'static str, String)> = vec![
            ("benchmark", self.benchmark.name().into()),
            ("seed", self.seed.to_string()),
        ];
        for (k, v) in param_entries(&self.params) {
            e.push((k, format!("{v:?}")));
        }
        let diag: Vec<f64> = self.mpc.q.diagonal().iter().copied().collect();
        e.extend([
            ("initial_q", list(&self.initial_q)),
            ("initial_v", list(&self.initial_v)),
            ("integrator", self.integrator.name().into()),
            ("dt", format!("{:?}", self.dt)),
            ("train_steps", self.train_steps.to_string()),
            ("test_steps", self.test_steps.to_string()),
            ("diff_method", self.diff.method.name().into()),
            ("alpha", format!("{:?}", self.diff.alpha)),
            ("sigma", opt_f64(self.diff.sigma)),
            ("mirror_len", opt_usize(self.diff.mirror_len)),
            ("boundary_margin", opt_usize(self.diff.boundary_margin)),
            ("epochs", self.train.epochs.to_string()),
            ("lr", format!("{:?}", self.train.lr)),
            ("lr_decay", format!("{:?}", self.train.lr_decay)),
            ("lr_decay_interval", self.train.decay_interval.to_string()),
            ("width", self.train.width.to_string()),
            ("depth", self.train.depth.to_string()),
            ("activation", self.train.activation.name().into()),
            ("init", self.train.init.name().into()),
            ("batch_size", opt_usize(self.train.batch_size).replace("auto", "full")),
            ("mpc_horizon", self.mpc.horizon.to_string()),
            ("mpc_q", list(&diag)),
            ("mpc_r", format!("{:?}", self.mpc.r[(0, 0)])),
            ("mpc_u_max", self.mpc.u_max.map_or("none".into(), |u| format!("{u:?}"))),
            ("mpc_steps", self.mpc_steps.to_string()),
            ("control", self.control.name().into()),
            ("dither", format!("{:?}", self.dither)),
        ]);
        e
    }
}

fn opt_f64(v: Option<f64>) -> String {
    v.map_or("auto".into(), |x| format!("{x:?}"))
}

fn opt_usize(v: Option<usize>) -> String {
    v.map_or("auto".into(), |x| x.to_string())
}

fn param_entries(p: &SystemParams) -> Vec<(&'static str, f64)> {
    match p {
        SystemParams::Smsd(p) => vec![("m", p.m), ("k", p.k), ("d", p.d)],
        SystemParams::Tmsd(p) => vec![
            ("m1", p.m[0]),
            ("m2", p.m[1]),
            ("m3", p.m[2]),
            ("k1", p.k[0]),
            ("k2", p.k[1]),
            ("k3", p.k[2]),
            ("d1", p.d[0]),
            ("d2", p.d[1]),
            ("d3", p.d[2]),
        ],
        SystemParams::DoublePendulum(p) => {
            vec![("m1", p.m1), ("m2", p.m2), ("l1", p.l1), ("l2", p.l2), ("g", p.g)]
        }
        SystemParams::SliderCrank(p) => vec![
            ("m1", p.m1),
            ("i1", p.i1),
            ("m2", p.m2),
            ("i2", p.i2),
            ("m3", p.m3),
            ("i3", p.i3),
            ("r", p.r),
            ("l", p.l),
            ("k", p.k),
            ("spring_rest", p.spring_rest),
            ("tau", p.tau),
            ("c01", p.c01),
            ("c12", p.c12),
            ("c23", p.c23),
            ("c", p.c),
            ("f", p.f),
        ],
        SystemParams::CartPole(p) => vec![
            ("cart_mass", p.cart_mass),
            ("pole_mass", p.pole_mass),
            ("length", p.length),
            ("g", p.g),
        ],
    }
}

fn set_param(p: &mut SystemParams, key: &str, v: f64) -> bool {
    let slot: Option<&mut f64> = match p {
        SystemParams::Smsd(p) => match key {
            "m" => Some(&mut p.m),
            "k" => Some(&mut p.k),
            "d" => Some(&mut p.d),
            _ => None,
        },
        SystemParams::Tmsd(p) => match key {
            "m1" => Some(&mut p.m[0]),
            "m2" => Some(&mut p.m[1]),
            "m3" => Some(&mut p.m[2]),
            "k1" => Some(&mut p.k[0]),
            "k2" => Some(&mut p.k[1]),
            "k3" => Some(&mut p.k[2]),
            "d1" => Some(&mut p.d[0]),
            "d2" => Some(&mut p.d[1]),
            "d3" => Some(&mut p.d[2]),
            _ => None,
        },
        SystemParams::DoublePendulum(p) => match key {
            "m1" => Some(&mut p.m1),
            "m2" => Some(&mut p.m2),
            "l1" => Some(&mut p.l1),
            "l2" => Some(&mut p.l2),
            "g" => Some(&mut p.g),
            _ => None,
        },
        SystemParams::SliderCrank(p) => match key {
            "m1" => Some(&mut p.m1),
            "i1" => Some(&mut p.i1),
            "m2" => Some(&mut p.m2),
            "i2" => Some(&mut p.i2),
            "m3" => Some(&mut p.m3),
            "i3" => Some(&mut p.i3),
            "r" => Some(&mut p.r),
            "l" => Some(&mut p.l),
            "k" => Some(&mut p.k),
            "spring_rest" => Some(&mut p.spring_rest),
            "tau" => Some(&mut p.tau),
            "c01" => Some(&mut p.c01),
            "c12" => Some(&mut p.c12),
            "c23" => Some(&mut p.c23),
            "c" => Some(&mut p.c),
            "f" => Some(&mut p.f),
            _ => None,
        },
        SystemParams::CartPole(p) => match key {
            "cart_mass" => Some(&mut p.cart_mass),
            "pole_mass" => Some(&mut p.pole_mass),
            "length" => Some(&mut p.length),
            "g" => Some(&mut p.g),
            _ => None,
        },
    };
    match slot {
        Some(s) => {
            *s = v;
            true
        }
        None => false,
    }
}

/// One `key = value` line and where it came from.
struct Entry {
    value: String,
}

fn parse_value<T: FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("expected {what}, got `{value}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|s| parse_value::<f64>(key, s.trim(), "a comma-separated list of numbers"))
        .collect()
}

fn parse_opt_usize(key: &str, value: &str, none_word: &str) -> Result<Option<usize>> {
    if value == none_word {
        Ok(None)
    } else {
        parse_value(key, value, &format!("a non-negative integer or `{none_word}`")).map(Some)
    }
}

const GENERAL_KEYS: &[&str] = &[
    "benchmark",
    "seed",
    "initial_q",
    "initial_v",
    "integrator",
    "dt",
    "train_steps",
    "test_steps",
    "diff_method",
    "alpha",
    "sigma",
    "mirror_len",
    "boundary_margin",
    "epochs",
    "lr",
    "lr_decay",
    "lr_decay_interval",
    "width",
    "depth",
    "activation",
    "init",
    "batch_size",
    "mpc_horizon",
    "mpc_q",
    "mpc_r",
    "mpc_u_max",
    "mpc_steps",
    "control",
    "dither",
];

/// Reads a config file; see [`parse_config_str`].
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

/// Parses `key = value` lines over the preset of the named benchmark.
/// `benchmark` and `seed` are required; every other key is optional.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
    let mut order = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::config(
                format!("line {}", i + 1),
                format!("expected `key = value`, got `{line}`"),
            ));
        };
        let key = k.trim().to_string();
        let value = v.trim().to_string();
        if key.is_empty() {
            return Err(Error::config(format!("line {}", i + 1), "empty key"));
        }
        if entries.contains_key(&key) {
            return Err(Error::config(key, "duplicate key"));
        }
        order.push(key.clone());
        entries.insert(key, Entry { value });
    }

    let benchmark: Benchmark = entries
        .get("benchmark")
        .ok_or_else(|| Error::config("benchmark", "missing required key"))?
        .value
        .parse()?;
    let seed: u64 = match entries.get("seed") {
        Some(e) => parse_value("seed", &e.value, "a non-negative integer")?,
        None => return Err(Error::config("seed", "missing required key")),
    };
    let mut cfg = RunConfig::preset(benchmark, seed);

    for key in &order {
        let value = entries[key].value.as_str();
        let k = key.as_str();
        if !GENERAL_KEYS.contains(&k) {
            let v: f64 = parse_value(k, value, "a number").map_err(|e| {
                // Unknown names read better than type errors.
                if param_entries(&cfg.params).iter().any(|(n, _)| *n == k) {
                    e
                } else {
                    Error::config(k, format!("unknown key for benchmark {benchmark}"))
                }
            })?;
            if !set_param(&mut cfg.params, k, v) {
                return Err(Error::config(k, format!("unknown key for benchmark {benchmark}")));
            }
            continue;
        }
        match k {
            "benchmark" | "seed" => {}
            "initial_q" => cfg.initial_q = parse_list(k, value)?,
            "initial_v" => cfg.initial_v = parse_list(k, value)?,
            "integrator" => {
                cfg.integrator = value
                    .parse()
                    .map_err(|_| Error::config(k, format!("unknown integrator `{value}`")))?
            }
            "dt" => cfg.dt = parse_value(k, value, "a number")?,
            "train_steps" => cfg.train_steps = parse_value(k, value, "a non-negative integer")?,
            "test_steps" => cfg.test_steps = parse_value(k, value, "a non-negative integer")?,
            "diff_method" => {
                cfg.diff.method = value
                    .parse::<DiffMethod>()
                    .map_err(|_| Error::config(k, format!("unknown method `{value}` (hybrid or fd)")))?
            }
            "alpha" => cfg.diff.alpha = parse_value(k, value, "a number")?,
            "sigma" => {
                cfg.diff.sigma = if value == "auto" {
                    None
                } else {
                    Some(parse_value(k, value, "a number or `auto`")?)
                }
            }
            "mirror_len" => cfg.diff.mirror_len = parse_opt_usize(k, value, "auto")?,
            "boundary_margin" => cfg.diff.boundary_margin = parse_opt_usize(k, value, "auto")?,
            "epochs" => cfg.train.epochs = parse_value(k, value, "a positive integer")?,
            "lr" => cfg.train.lr = parse_value(k, value, "a number")?,
            "lr_decay" => cfg.train.lr_decay = parse_value(k, value, "a number")?,
            "lr_decay_interval" => cfg.train.decay_interval = parse_value(k, value, "a positive integer")?,
            "width" => cfg.train.width = parse_value(k, value, "a positive integer")?,
            "depth" => cfg.train.depth = parse_value(k, value, "a positive integer")?,
            "activation" => {
                cfg.train.activation = value
                    .parse::<Activation>()
                    .map_err(|_| Error::config(k, format!("unknown activation `{value}`")))?
            }
            "init" => {
                cfg.train.init = value
                    .parse::<Init>()
                    .map_err(|_| Error::config(k, format!("unknown initialization `{value}`")))?
            }
            "batch_size" => cfg.train.batch_size = parse_opt_usize(k, value, "full")?,
            "mpc_horizon" => cfg.mpc.horizon = parse_value(k, value, "a positive integer")?,
            "mpc_q" => {
                let d = parse_list(k, value)?;
                cfg.mpc.q = match d.len() {
                    1 => DMatrix::identity(4, 4) * d[0],
                    4 => DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d)),
                    n => return Err(Error::config(k, format!("expected 1 or 4 values, got {n}"))),
                };
            }
            "mpc_r" => cfg.mpc.r = DMatrix::from_element(1, 1, parse_value(k, value, "a number")?),
            "mpc_u_max" => {
                cfg.mpc.u_max = if value == "none" {
                    None
                } else {
                    Some(parse_value(k, value, "a number or `none`")?)
                }
            }
            "mpc_steps" => cfg.mpc_steps = parse_value(k, value, "a non-negative integer")?,
            "control" => {
                cfg.control = value
                    .parse()
                    .map_err(|_| Error::config(k, format!("unknown control mode `{value}` (free or mpc-dither)")))?
            }
            "dither" => cfg.dither = parse_value(k, value, "a number")?,
            _ => unreachable!("key list and match arms agree"),
        }
    }
    cfg.train.seed = seed;
    cfg.mpc.dt = cfg.dt;
    cfg.validate()?;
    Ok(cfg)
}
