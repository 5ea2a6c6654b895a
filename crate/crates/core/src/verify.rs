//! Numerical property suites: each runs a small self-contained experiment
//! and compares a measured quantity with a fixed bound.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Benchmark, RunConfig};
use crate::diffest::{gibbs_mitigation_ratio, interior, spectral_derivative, DiffConfig};
use crate::dynamics::{dp_energy, sc_constraints, SystemParams, SC_COORDS};
use crate::error::Result;
use crate::integrate::{convergence_slope, Scheme};
use crate::net::{gradient_check, init_mlp, Activation, Init};
use crate::systems::simulate;

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    /// `(label, measured value, requirement)` for every check.
    pub checks: Vec<(String, f64, String)>,
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} {}", if self.passed { "PASS" } else { "FAIL" }, self.name)?;
        for (label, value, req) in &self.checks {
            writeln!(f, "    {label:<32} {value:>12.4e}   {req}")?;
        }
        Ok(())
    }
}

struct Builder {
    name: &'static str,
    passed: bool,
    checks: Vec<(String, f64, String)>,
}

impl Builder {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            passed: true,
            checks: Vec::new(),
        }
    }

    fn below(mut self, label: &str, value: f64, bound: f64) -> Self {
        self.passed &= value < bound;
        self.checks.push((label.into(), value, format!("< {bound:e}")));
        self
    }

    fn at_most(mut self, label: &str, value: f64, bound: f64) -> Self {
        self.passed &= value <= bound;
        self.checks.push((label.into(), value, format!("<= {bound:e}")));
        self
    }

    fn at_least(mut self, label: &str, value: f64, bound: f64) -> Self {
        self.passed &= value >= bound;
        self.checks.push((label.into(), value, format!(">= {bound}")));
        self
    }

    fn within(mut self, label: &str, value: f64, lo: f64, hi: f64) -> Self {
        self.passed &= (lo..=hi).contains(&value);
        self.checks.push((label.into(), value, format!("in [{lo}, {hi}]")));
        self
    }

    fn done(self) -> SuiteReport {
        SuiteReport {
            name: self.name,
            passed: self.passed,
            checks: self.checks,
        }
    }
}

/// Step sizes for the convergence study on `ż = z`.
pub const ORDER_DTS: [f64; 4] = [0.1, 0.05, 0.025, 0.0125];

pub fn integrator_order() -> Result<SuiteReport> {
    Ok(Builder::new("integrator-order")
        .within("rk4 slope", convergence_slope(Scheme::Rk4, &ORDER_DTS)?, 3.8, 4.2)
        .within("midpoint slope", convergence_slope(Scheme::Midpoint, &ORDER_DTS)?, 1.8, 2.2)
        .done())
}

/// Backprop against central differences on a 2-16-16-1 Tanh network.
pub fn gradient() -> Result<SuiteReport> {
    let mlp = init_mlp(&[2, 16, 16, 1], Activation::Tanh, Init::Xavier, 42)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = DMatrix::from_fn(2, 8, |_, _| rng.random_range(-1.0..1.0));
    let y = DMatrix::from_fn(1, 8, |_, _| rng.random_range(-1.0..1.0));
    let err = gradient_check(&mlp, &x, &y, 1e-5)?;
    Ok(Builder::new("gradient-check").below("max relative error", err, 1e-5).done())
}

/// Interior derivative error of the spectral pipeline on one period of a
/// sine and on a ramp, both with 512 samples.
pub fn spectral_accuracy() -> Result<SuiteReport> {
    let n = 512;
    let dt = 1.0 / n as f64;
    let w = 2.0 * PI / (n as f64 * dt);
    let cfg = DiffConfig::default();
    let sine: Vec<f64> = (0..n).map(|i| (w * i as f64 * dt).sin()).collect();
    let ds = spectral_derivative(&sine, dt, &cfg)?;
    let sine_err = interior(n)
        .map(|i| (ds[i] - w * (w * i as f64 * dt).cos()).abs())
        .fold(0.0, f64::max);
    let ramp: Vec<f64> = (0..n).map(|i| 0.5 + 2.0 * i as f64 * dt).collect();
    let dr = spectral_derivative(&ramp, dt, &cfg)?;
    let ramp_err = interior(n).map(|i| (dr[i] - 2.0).abs()).fold(0.0, f64::max);
    Ok(Builder::new("spectral-accuracy")
        .below("sine interior error", sine_err, 1e-2)
        .below("ramp interior error", ramp_err, 1e-6)
        .done())
}

pub fn gibbs() -> Result<SuiteReport> {
    Ok(Builder::new("gibbs-mitigation")
        .at_least("naive / pipeline error on ramp", gibbs_mitigation_ratio(512)?, 5.0)
        .done())
}

/// Largest `‖Φ(q)‖∞` along the 4500-step slider-crank ground truth.
pub fn constraint_residual() -> Result<SuiteReport> {
    let cfg = RunConfig::preset(Benchmark::SliderCrank, 0);
    let SystemParams::SliderCrank(p) = cfg.params else { unreachable!() };
    let traj = simulate(&cfg)?;
    let worst = (0..traj.len())
        .map(|i| sc_constraints(&traj.state(i)[..SC_COORDS], &p).amax())
        .fold(0.0, f64::max);
    Ok(Builder::new("constraint-residual")
        .at_most(&format!("max residual over {} steps", traj.len() - 1), worst, 1e-6)
        .done())
}

/// Relative energy drift of the undamped double pendulum over the first
/// 300 RK4 steps.
pub fn energy_conservation() -> Result<SuiteReport> {
    let mut cfg = RunConfig::preset(Benchmark::DoublePendulum, 0);
    cfg.train_steps = 300;
    cfg.test_steps = 0;
    let SystemParams::DoublePendulum(p) = cfg.params else { unreachable!() };
    let traj = simulate(&cfg)?;
    let e = |i: usize| {
        let s = traj.state(i);
        dp_energy(s[0], s[1], s[2], s[3], &p)
    };
    let e0 = e(0);
    let drift = (0..traj.len()).map(|i| (e(i) - e0).abs()).fold(0.0, f64::max) / e0.abs();
    Ok(Builder::new("energy-conservation")
        .below("relative drift over 300 steps", drift, 1e-4)
        .done())
}

/// Runs every suite in a fixed order.
pub fn run_all() -> Result<Vec<SuiteReport>> {
    Ok(vec![
        integrator_order()?,
        gradient()?,
        spectral_accuracy()?,
        gibbs()?,
        constraint_residual()?,
        energy_conservation()?,
    ])
}
