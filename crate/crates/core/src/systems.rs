//! Ground-truth simulation for each benchmark.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Benchmark, ControlMode, RunConfig};
use crate::dynamics::{
    double_pendulum_rhs, dp_angular_accel, dp_momenta_from_velocities, dp_velocities_from_momenta,
    slider_crank_reconstruct, slider_crank_rhs, smsd_accel, tmsd_accel, AugmentedState,
    DoublePendulumParams, SliderCrankParams, SystemParams, SC_COORDS,
};
use crate::error::{Error, Result};
use crate::fnode::{build_dataset, rollout_with, FnodeDataset};
use crate::integrate::{rollout, rollout_constrained, wrap_second_order, Trajectory, VectorField};
use crate::mpc::{cartpole_accel_ordered, closed_loop_excited, Controller};

/// Exact acceleration of the unconstrained benchmarks.
pub fn exact_accel(params: &SystemParams, q: &[f64], qdot: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    match params {
        SystemParams::Smsd(p) => Ok(vec![smsd_accel(q[0], qdot[0], p)?]),
        SystemParams::Tmsd(p) => {
            let s = AugmentedState::new(q.to_vec(), qdot.to_vec())?;
            Ok(tmsd_accel(&s, p)?.to_vec())
        }
        SystemParams::DoublePendulum(p) => Ok(dp_angular_accel([q[0], q[1], qdot[0], qdot[1]], p)?.to_vec()),
        SystemParams::CartPole(p) => cartpole_accel_ordered(q, qdot, u.first().copied().unwrap_or(0.0), p),
        SystemParams::SliderCrank(p) => Ok(slider_crank_rhs(q, qdot, p)?.qddot.iter().copied().collect()),
    }
}

struct Hamiltonian<'a>(&'a DoublePendulumParams);

impl VectorField for Hamiltonian<'_> {
    fn eval(&self, _t: f64, z: &[f64]) -> Result<Vec<f64>> {
        Ok(double_pendulum_rhs([z[0], z[1], z[2], z[3]], self.0)?.to_vec())
    }
}

/// Sum of three sines at incommensurate frequencies with seeded phases,
/// scaled so its peak never exceeds `amplitude`.
pub fn multisine(amplitude: f64, seed: u64) -> impl Fn(f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd17e);
    let phases: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..TAU));
    const FREQS: [f64; 3] = [0.37, 0.91, 2.3];
    move |t| amplitude / 3.0 * FREQS.iter().zip(&phases).map(|(f, p)| (TAU * f * t + p).sin()).sum::<f64>()
}

/// Simulates the configured benchmark over `train_steps + test_steps`
/// steps. The result carries exact accelerations, the system parameters
/// and, for the cart-pole, the applied inputs.
pub fn simulate(cfg: &RunConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let integ = cfg.integrator()?;
    let n = cfg.total_steps();
    let z0: Vec<f64> = cfg.initial_q.iter().chain(&cfg.initial_v).copied().collect();
    let params = cfg.params;

    let traj = match &cfg.params {
        SystemParams::SliderCrank(p) => {
            let (q, qd) = slider_crank_reconstruct(cfg.initial_q[0], cfg.initial_v[0], p)?;
            return rollout_constrained(&q, &qd, p, &integ, n);
        }
        SystemParams::DoublePendulum(p) => {
            let (p1, p2) = dp_momenta_from_velocities(z0[0], z0[1], z0[2], z0[3], p);
            let ham = rollout(&Hamiltonian(p), &[z0[0], z0[1], p1, p2], &integ, n)?;
            let mut states = DMatrix::zeros(n + 1, 4);
            for i in 0..=n {
                let r = ham.state(i);
                let (w1, w2) = dp_velocities_from_momenta(r[0], r[1], r[2], r[3], p);
                states.row_mut(i).copy_from_slice(&[r[0], r[1], w1, w2]);
            }
            Trajectory::new(0.0, cfg.dt, states)?
        }
        SystemParams::CartPole(p) => match cfg.control {
            ControlMode::Free => {
                let zero = DMatrix::zeros(n + 1, 1);
                rollout_with(
                    |q: &[f64], qd: &[f64], u: &[f64]| cartpole_accel_ordered(q, qd, u[0], p),
                    2,
                    1,
                    &z0,
                    &integ,
                    n,
                    Some(&zero),
                )?
            }
            ControlMode::MpcDither => {
                let mut mpc = cfg.mpc.clone();
                mpc.dt = cfg.dt;
                closed_loop_excited(
                    p,
                    Controller::Analytic,
                    &mpc,
                    &integ,
                    [z0[0], z0[1], z0[2], z0[3]],
                    n,
                    multisine(cfg.dither, cfg.seed),
                )?
            }
        },
        SystemParams::Smsd(_) | SystemParams::Tmsd(_) => {
            let field = wrap_second_order(cfg.initial_q.len(), |q: &[f64], qd: &[f64]| {
                exact_accel(&params, q, qd, &[])
            });
            rollout(&field, &z0, &integ, n)?
        }
    };
    with_exact_accels(traj, &params)
}

fn with_exact_accels(traj: Trajectory, params: &SystemParams) -> Result<Trajectory> {
    let nz = traj.n_z();
    let mut acc = DMatrix::zeros(traj.len(), nz);
    for i in 0..traj.len() {
        let z = traj.state(i);
        let u = traj.input(i).unwrap_or_default();
        let a = exact_accel(params, &z[..nz], &z[nz..], &u)?;
        acc.row_mut(i).copy_from_slice(&a);
    }
    if acc.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { step: 0 });
    }
    Ok(traj.with_accels(acc)?.with_params(*params))
}

/// The part of a ground-truth trajectory the network learns from: the
/// crank angle for the slider-crank, everything otherwise.
pub fn learning_view(benchmark: Benchmark, traj: &Trajectory) -> Result<Trajectory> {
    match benchmark.minimal_coords() {
        Some(c) => traj.select_coords(c),
        None => Ok(traj.clone()),
    }
}

/// Dataset from the first `train_steps` samples of the learning view,
/// with targets from the configured differentiator.
pub fn training_dataset(cfg: &RunConfig, truth: &Trajectory) -> Result<FnodeDataset> {
    let view = learning_view(cfg.benchmark, truth)?;
    let rows = cfg.train_steps.min(view.len());
    build_dataset(&view.slice(0..rows)?, &cfg.diff)
}

/// Full slider-crank coordinates from a crank-angle trajectory.
pub fn reconstruct_slider_crank(minimal: &Trajectory, p: &SliderCrankParams) -> Result<Trajectory> {
    if minimal.n_z() != 1 {
        return Err(Error::invalid(format!(
            "reconstruction needs a one-coordinate trajectory, got {}",
            minimal.n_z()
        )));
    }
    let mut states = DMatrix::zeros(minimal.len(), 2 * SC_COORDS);
    for i in 0..minimal.len() {
        let (q, qd) = slider_crank_reconstruct(minimal.states[(i, 0)], minimal.states[(i, 1)], p)?;
        for j in 0..SC_COORDS {
            states[(i, j)] = q[j];
            states[(i, SC_COORDS + j)] = qd[j];
        }
    }
    Ok(Trajectory::new(minimal.t0, minimal.dt, states)?.with_params(SystemParams::SliderCrank(*p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{dp_energy, sc_constraints};

    #[test]
    fn smsd_ground_truth_starts_at_rest_displaced() {
        let cfg = RunConfig::preset(Benchmark::Smsd, 0);
        let t = simulate(&cfg).unwrap();
        assert_eq!(t.len(), 1001);
        assert_eq!(t.state(0), vec![1.0, 0.0]);
        let a0 = t.accels.as_ref().unwrap()[(0, 0)];
        assert!((a0 + 5.0).abs() < 1e-15);
    }

    #[test]
    fn double_pendulum_conserves_energy_and_matches_accel_columns() {
        let cfg = RunConfig::preset(Benchmark::DoublePendulum, 0);
        let t = simulate(&cfg).unwrap();
        let SystemParams::DoublePendulum(p) = cfg.params else { unreachable!() };
        let e = |i: usize| {
            let s = t.state(i);
            dp_energy(s[0], s[1], s[2], s[3], &p)
        };
        let e0 = e(0);
        for i in 0..=300 {
            assert!((e(i) - e0).abs() < 1e-4 * e0.abs(), "step {i}");
        }
        let worst = (0..t.len()).map(|i| (e(i) - e0).abs()).fold(0.0, f64::max) / e0.abs();
        assert!(worst < 1e-3, "drift over the full run {worst}");
        // Centered differences of ω against the stored θ̈.
        let acc = t.accels.as_ref().unwrap();
        for i in [50, 200, 350] {
            let fd = (t.state(i + 1)[2] - t.state(i - 1)[2]) / (2.0 * cfg.dt);
            assert!((fd - acc[(i, 0)]).abs() < 1e-2 * acc[(i, 0)].abs().max(1.0));
        }
    }

    #[test]
    fn slider_crank_stays_on_manifold() {
        let mut cfg = RunConfig::preset(Benchmark::SliderCrank, 0);
        cfg.train_steps = 300;
        cfg.test_steps = 0;
        let SystemParams::SliderCrank(p) = cfg.params else { unreachable!() };
        let t = simulate(&cfg).unwrap();
        for i in (0..t.len()).step_by(50) {
            assert!(sc_constraints(&t.state(i)[..SC_COORDS], &p).amax() < 1e-8);
        }
        let view = learning_view(cfg.benchmark, &t).unwrap();
        assert_eq!(view.n_z(), 1);
        assert_eq!(view.state(0), vec![0.0, 0.0]);
        let full = reconstruct_slider_crank(&view, &p).unwrap();
        assert!((&full.states - &t.states).amax() < 1e-7);
    }

    #[test]
    fn cartpole_free_run_has_zero_inputs() {
        let cfg = RunConfig::preset(Benchmark::CartPole, 0);
        let t = simulate(&cfg).unwrap();
        assert_eq!(t.n_u(), 1);
        assert!(t.inputs.as_ref().unwrap().iter().all(|&u| u == 0.0));
        assert!(t.state(1)[0] > t.state(0)[0]);
    }

    #[test]
    fn dithered_cartpole_is_excited_and_stays_upright() {
        let mut cfg = RunConfig::preset(Benchmark::CartPole, 4);
        cfg.control = ControlMode::MpcDither;
        let t = simulate(&cfg).unwrap();
        let u = t.inputs.as_ref().unwrap();
        assert!(u.amax() > 0.5);
        assert!((0..t.len()).all(|i| t.state(i)[0].abs() < 1.0));
    }

    #[test]
    fn multisine_is_bounded_and_seeded() {
        let a = multisine(2.0, 1);
        let b = multisine(2.0, 1);
        let c = multisine(2.0, 2);
        let ts: Vec<f64> = (0..2000).map(|i| i as f64 * 0.01).collect();
        assert!(ts.iter().all(|&t| a(t).abs() <= 2.0));
        assert!(ts.iter().all(|&t| a(t) == b(t)));
        assert!(ts.iter().any(|&t| a(t) != c(t)));
    }
}
