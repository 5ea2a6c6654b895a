//! Receding-horizon LQ control of the cart-pole.
//!
//! States are ordered `(θ, x, ω, v)` with a scalar horizontal force `u`.
//! The finite-horizon problem is solved exactly by a backward Riccati
//! recursion with terminal weight `Q`.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};

use crate::dynamics::{cartpole_accel, CartPoleParams};
use crate::error::{ensure_finite, Error, Result};
use crate::fnode::{rollout_with, FnodeModel};
use crate::integrate::{Integrator, Trajectory};

/// `ż ≈ A z + B u` around an operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: Matrix4<f64>,
    pub b: Vector4<f64>,
    pub state: [f64; 4],
    pub input: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub dt: f64,
    /// Symmetric clamp applied to the first input of every solve.
    pub u_max: Option<f64>,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 300,
            q: DMatrix::identity(4, 4),
            r: DMatrix::identity(1, 1),
            dt: 0.01,
            u_max: None,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("MPC horizon must be at least 1"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid(format!("MPC dt must be positive, got {}", self.dt)));
        }
        if !self.q.is_square() || !self.r.is_square() {
            return Err(Error::invalid("Q and R must be square"));
        }
        ensure_finite(self.q.as_slice(), "Q")?;
        ensure_finite(self.r.as_slice(), "R")?;
        let sym = |m: &DMatrix<f64>| (m - m.transpose()).amax() <= 1e-12 * m.amax().max(1.0);
        if !sym(&self.q) || !sym(&self.r) {
            return Err(Error::invalid("Q and R must be symmetric"));
        }
        let q_min = self.q.clone().symmetric_eigenvalues().min();
        if q_min < -1e-12 {
            return Err(Error::invalid("Q must be positive semidefinite"));
        }
        if self.r.clone().cholesky().is_none() {
            return Err(Error::invalid("R must be positive definite"));
        }
        if let Some(u) = self.u_max {
            if !(u.is_finite() && u > 0.0) {
                return Err(Error::invalid(format!("input bound must be positive, got {u}")));
            }
        }
        Ok(())
    }
}

/// Jacobian of the cart-pole at the upright equilibrium with `u = 0`.
pub fn linearize_analytic(p: &CartPoleParams) -> LinearModel {
    let CartPoleParams {
        cart_mass: big_m,
        pole_mass: m,
        length: l,
        g,
    } = *p;
    let mut a = Matrix4::zeros();
    a[(0, 2)] = 1.0;
    a[(1, 3)] = 1.0;
    a[(2, 0)] = g * (m + big_m) / (big_m * l);
    a[(3, 0)] = -m * g / big_m;
    LinearModel {
        a,
        b: Vector4::new(0.0, 0.0, -1.0 / (big_m * l), 1.0 / big_m),
        state: [0.0; 4],
        input: 0.0,
    }
}

/// Central-difference linearization of the true cart-pole at `(state, input)`.
pub fn linearize_plant(p: &CartPoleParams, state: [f64; 4], input: f64) -> Result<LinearModel> {
    const H: f64 = 1e-6;
    let acc = |z: [f64; 4], u: f64| cartpole_accel_ordered(&z[0..2], &z[2..4], u, p);
    let mut a = Matrix4::zeros();
    a[(0, 2)] = 1.0;
    a[(1, 3)] = 1.0;
    for c in 0..4 {
        let (mut up, mut dn) = (state, state);
        up[c] += H;
        dn[c] -= H;
        let (fu, fd) = (acc(up, input)?, acc(dn, input)?);
        for r in 0..2 {
            a[(2 + r, c)] = (fu[r] - fd[r]) / (2.0 * H);
        }
    }
    let (fu, fd) = (acc(state, input + H)?, acc(state, input - H)?);
    Ok(LinearModel {
        a,
        b: Vector4::new(0.0, 0.0, (fu[0] - fd[0]) / (2.0 * H), (fu[1] - fd[1]) / (2.0 * H)),
        state,
        input,
    })
}

/// Linearizes a learned `(θ, x, ω, v, u) → (θ̈, ẍ)` map at `(state, input)`.
pub fn linearize_model(model: &FnodeModel, state: [f64; 4], input: f64) -> Result<LinearModel> {
    if model.n_z() != 2 || model.n_u() != 1 {
        return Err(Error::invalid(format!(
            "cart-pole control needs a model with 2 coordinates and 1 input, got {} and {}",
            model.n_z(),
            model.n_u()
        )));
    }
    let j = model.accel_jacobian(&state[0..2], &state[2..4], &[input])?;
    let mut a = Matrix4::zeros();
    a[(0, 2)] = 1.0;
    a[(1, 3)] = 1.0;
    for r in 0..2 {
        for c in 0..4 {
            a[(2 + r, c)] = j[(r, c)];
        }
    }
    Ok(LinearModel {
        a,
        b: Vector4::new(0.0, 0.0, j[(0, 4)], j[(1, 4)]),
        state,
        input,
    })
}

/// Forward-Euler discretization `(I + A dt, B dt)`.
pub fn discretize(model: &LinearModel, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let ad = Matrix4::identity() + model.a * dt;
    let bd = model.b * dt;
    (
        DMatrix::from_column_slice(4, 4, ad.as_slice()),
        DMatrix::from_column_slice(4, 1, bd.as_slice()),
    )
}

/// Optimal inputs `u_0..u_{N-1}` of
/// `Σ_{k<N} (z_kᵀ Q z_k + u_kᵀ R u_k) + z_Nᵀ Q z_N` subject to
/// `z_{k+1} = A z_k + B u_k`.
///
/// Returns one row per step, `N × m`.
pub fn solve_horizon(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    config: &MpcConfig,
    z0: &[f64],
) -> Result<DMatrix<f64>> {
    config.validate()?;
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square() || b.nrows() != n || z0.len() != n || config.q.nrows() != n || config.r.nrows() != m {
        return Err(Error::invalid(format!(
            "MPC shapes do not agree: A {:?}, B {:?}, Q {:?}, R {:?}, z0 {}",
            a.shape(),
            b.shape(),
            config.q.shape(),
            config.r.shape(),
            z0.len()
        )));
    }
    ensure_finite(a.as_slice(), "A")?;
    ensure_finite(b.as_slice(), "B")?;
    ensure_finite(z0, "initial state")?;

    let horizon = config.horizon;
    let mut gains = vec![DMatrix::zeros(m, n); horizon];
    let mut p = config.q.clone();
    let bt = b.transpose();
    let at = a.transpose();
    for k in (0..horizon).rev() {
        let pb = &p * b;
        let s = &config.r + &bt * &pb;
        let chol = s.cholesky().ok_or(Error::Conditioning { stage: k })?;
        let l_diag = chol.l_dirty().diagonal();
        let (lo, hi) = l_diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        if lo <= 1e-8 * hi {
            return Err(Error::Conditioning { stage: k });
        }
        let gain = chol.solve(&(pb.transpose() * a));
        let pa = &p * a;
        p = &config.q + &at * &pa - &at * &pb * &gain;
        p = (&p + p.transpose()) * 0.5;
        gains[k] = gain;
    }
    let mut z = DVector::from_column_slice(z0);
    let mut us = DMatrix::zeros(horizon, m);
    for (k, gain) in gains.iter().enumerate() {
        let u = -(gain * &z);
        us.row_mut(k).copy_from(&u.transpose());
        z = a * &z + b * u;
    }
    ensure_finite(us.as_slice(), "MPC inputs")?;
    Ok(us)
}

/// Which model the controller linearizes.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    /// Fixed upright linearization of the true dynamics.
    Analytic,
    /// The true dynamics, linearized at the current state and the previously
    /// applied input every step.
    Relinearized,
    /// A learned acceleration map, linearized at the current state and the
    /// previously applied input every step.
    Learned(&'a FnodeModel),
}

/// Runs the receding-horizon loop on the nonlinear cart-pole for `steps`
/// steps from `z0 = (θ, x, ω, v)`.
///
/// The returned trajectory has `q = (θ, x)`, `q̇ = (ω, v)` and the applied
/// input of every row (the last row repeats the final input).
pub fn closed_loop(
    plant: &CartPoleParams,
    controller: Controller<'_>,
    config: &MpcConfig,
    integ: &Integrator,
    z0: [f64; 4],
    steps: usize,
) -> Result<Trajectory> {
    closed_loop_excited(plant, controller, config, integ, z0, steps, |_| 0.0)
}

/// [`closed_loop`] with `excitation(t)` added to every control before
/// clamping. Used to generate informative training data.
pub fn closed_loop_excited<E: Fn(f64) -> f64>(
    plant: &CartPoleParams,
    controller: Controller<'_>,
    config: &MpcConfig,
    integ: &Integrator,
    z0: [f64; 4],
    steps: usize,
    excitation: E,
) -> Result<Trajectory> {
    config.validate()?;
    ensure_finite(&z0, "initial state")?;
    let fixed = match controller {
        Controller::Analytic => Some(discretize(&linearize_analytic(plant), config.dt)),
        Controller::Relinearized | Controller::Learned(_) => None,
    };
    let mut states = DMatrix::zeros(steps + 1, 4);
    let mut inputs = DMatrix::zeros(steps + 1, 1);
    states.row_mut(0).copy_from_slice(&z0);
    let mut z = z0;
    let mut u_prev = 0.0;
    for k in 0..steps {
        if z[0].abs() > std::f64::consts::FRAC_PI_2 {
            return Err(Error::Instability { step: k, theta: z[0] });
        }
        let (ad, bd) = match (&fixed, controller) {
            (Some(m), _) => m.clone(),
            (None, Controller::Relinearized) => discretize(&linearize_plant(plant, z, u_prev)?, config.dt),
            (None, Controller::Learned(model)) => discretize(&linearize_model(model, z, u_prev)?, config.dt),
            (None, Controller::Analytic) => unreachable!("analytic model is precomputed"),
        };
        let mut u = solve_horizon(&ad, &bd, config, &z)?[(0, 0)] + excitation(k as f64 * integ.dt);
        if let Some(limit) = config.u_max {
            u = u.clamp(-limit, limit);
        }
        let next = plant_step(plant, integ, z, u, k)?;
        inputs[(k, 0)] = u;
        z = next;
        u_prev = u;
        states.row_mut(k + 1).copy_from_slice(&z);
    }
    if z[0].abs() > std::f64::consts::FRAC_PI_2 {
        return Err(Error::Instability { step: steps, theta: z[0] });
    }
    if steps > 0 {
        inputs[(steps, 0)] = u_prev;
    }
    Trajectory::new(0.0, integ.dt, states)?.with_inputs(inputs)
}

/// Acceleration `(θ̈, ẍ)` for the ordering `q = (θ, x)`, `q̇ = (ω, v)`.
pub fn cartpole_accel_ordered(q: &[f64], qdot: &[f64], u: f64, p: &CartPoleParams) -> Result<Vec<f64>> {
    let (tdd, xdd) = cartpole_accel([q[1], q[0], qdot[1], qdot[0]], u, p)?;
    Ok(vec![tdd, xdd])
}

fn plant_step(p: &CartPoleParams, integ: &Integrator, z: [f64; 4], u: f64, k: usize) -> Result<[f64; 4]> {
    let held = DMatrix::from_element(1, 1, u);
    let traj = rollout_with(
        |q: &[f64], qd: &[f64], u: &[f64]| cartpole_accel_ordered(q, qd, u[0], p),
        2,
        1,
        &z,
        integ,
        1,
        Some(&held),
    )
    .map_err(|e| match e {
        Error::Divergence { .. } => Error::Divergence { step: k + 1 },
        other => other,
    })?;
    let row = traj.state(1);
    Ok([row[0], row[1], row[2], row[3]])
}

/// Largest state max-norm difference between two closed-loop runs.
pub fn max_state_deviation(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.states.shape() != b.states.shape() {
        return Err(Error::invalid("closed-loop trajectories differ in shape"));
    }
    Ok((&a.states - &b.states).amax())
}
