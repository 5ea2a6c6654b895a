//! Fixed-step explicit integration, rollouts and coordinate projection.

use std::cell::Cell;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::{DMatrix, SVector};

use crate::dynamics::{
    sc_constraints, sc_jacobian, slider_crank_rhs, SliderCrankParams, SystemParams, SC_COORDS,
};
use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Rk4,
    Midpoint,
    Euler,
}

impl Scheme {
    /// Field evaluations per step.
    pub fn stages(self) -> usize {
        match self {
            Scheme::Rk4 => 4,
            Scheme::Midpoint => 2,
            Scheme::Euler => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Rk4 => "rk4",
            Scheme::Midpoint => "midpoint",
            Scheme::Euler => "euler",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rk4" => Ok(Scheme::Rk4),
            "midpoint" => Ok(Scheme::Midpoint),
            "euler" => Ok(Scheme::Euler),
            other => Err(Error::invalid(format!("unknown integrator `{other}`"))),
        }
    }
}

/// A scheme paired with its step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integrator {
    pub scheme: Scheme,
    pub dt: f64,
}

impl Integrator {
    pub fn new(scheme: Scheme, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        Ok(Self { scheme, dt })
    }

    pub fn rk4(dt: f64) -> Result<Self> {
        Self::new(Scheme::Rk4, dt)
    }

    pub fn midpoint(dt: f64) -> Result<Self> {
        Self::new(Scheme::Midpoint, dt)
    }
}

/// Right-hand side `ż = f(t, z)`.
pub trait VectorField {
    fn eval(&self, t: f64, z: &[f64]) -> Result<Vec<f64>>;
}

impl<F> VectorField for F
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    fn eval(&self, t: f64, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self(t, z))
    }
}

thread_local! {
    static FIELD_EVALS: Cell<u64> = const { Cell::new(0) };
}

/// Number of vector-field evaluations performed by [`step`] on this
/// thread since the last [`reset_field_evaluations`].
pub fn field_evaluations() -> u64 {
    FIELD_EVALS.with(Cell::get)
}

pub fn reset_field_evaluations() {
    FIELD_EVALS.with(|c| c.set(0));
}

fn eval_counted<F: VectorField + ?Sized>(field: &F, t: f64, z: &[f64]) -> Result<Vec<f64>> {
    FIELD_EVALS.with(|c| c.set(c.get() + 1));
    field.eval(t, z)
}

fn axpy(z: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    z.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

pub(crate) fn step_indexed<F: VectorField + ?Sized>(
    field: &F,
    z: &[f64],
    t: f64,
    integ: &Integrator,
    index: usize,
) -> Result<Vec<f64>> {
    let h = integ.dt;
    let check = |k: Vec<f64>| -> Result<Vec<f64>> {
        if k.len() != z.len() {
            return Err(Error::invalid(format!(
                "vector field returned {} components for a state of length {}",
                k.len(),
                z.len()
            )));
        }
        if k.iter().all(|v| v.is_finite()) {
            Ok(k)
        } else {
            Err(Error::Divergence { step: index })
        }
    };
    let next = match integ.scheme {
        Scheme::Euler => {
            let k1 = check(eval_counted(field, t, z)?)?;
            axpy(z, h, &k1)
        }
        Scheme::Midpoint => {
            let k1 = check(eval_counted(field, t, z)?)?;
            let k2 = check(eval_counted(field, t + 0.5 * h, &axpy(z, 0.5 * h, &k1))?)?;
            axpy(z, h, &k2)
        }
        Scheme::Rk4 => {
            let k1 = check(eval_counted(field, t, z)?)?;
            let k2 = check(eval_counted(field, t + 0.5 * h, &axpy(z, 0.5 * h, &k1))?)?;
            let k3 = check(eval_counted(field, t + 0.5 * h, &axpy(z, 0.5 * h, &k2))?)?;
            let k4 = check(eval_counted(field, t + h, &axpy(z, h, &k3))?)?;
            z.iter()
                .enumerate()
                .map(|(i, zi)| zi + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect()
        }
    };
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::Divergence { step: index })
    }
}

/// Advances `z` by one step of the chosen scheme.
pub fn step<F: VectorField + ?Sized>(
    field: &F,
    z: &[f64],
    t: f64,
    integ: &Integrator,
) -> Result<Vec<f64>> {
    step_indexed(field, z, t, integ, 0)
}

/// First-order field `Ż = (q̇, a(q, q̇))` built from an acceleration map.
pub struct SecondOrder<A> {
    n_z: usize,
    accel: A,
}

/// Wraps an acceleration map `(q, q̇) -> q̈` into a first-order field on the
/// stacked state of length `2 n_z`.
pub fn wrap_second_order<A>(n_z: usize, accel: A) -> SecondOrder<A>
where
    A: Fn(&[f64], &[f64]) -> Result<Vec<f64>>,
{
    SecondOrder { n_z, accel }
}

impl<A> VectorField for SecondOrder<A>
where
    A: Fn(&[f64], &[f64]) -> Result<Vec<f64>>,
{
    fn eval(&self, _t: f64, z: &[f64]) -> Result<Vec<f64>> {
        let n = self.n_z;
        if z.len() != 2 * n {
            return Err(Error::invalid(format!(
                "state has length {}, expected {}",
                z.len(),
                2 * n
            )));
        }
        let (q, qdot) = z.split_at(n);
        let a = (self.accel)(q, qdot)?;
        if a.len() != n {
            return Err(Error::invalid(format!(
                "acceleration map returned {} components, expected {n}",
                a.len()
            )));
        }
        let mut out = Vec::with_capacity(2 * n);
        out.extend_from_slice(qdot);
        out.extend(a);
        Ok(out)
    }
}

/// Uniformly sampled trajectory of stacked states `(q, q̇)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    /// `N × 2n_z`, one row per sample.
    pub states: DMatrix<f64>,
    /// Optional `N × n_z` accelerations.
    pub accels: Option<DMatrix<f64>>,
    /// Optional `N × n_u` inputs; row k is held constant over step k.
    pub inputs: Option<DMatrix<f64>>,
    pub params: Option<SystemParams>,
}

impl Trajectory {
    pub fn new(t0: f64, dt: f64, states: DMatrix<f64>) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) || !t0.is_finite() {
            return Err(Error::invalid("trajectory needs finite t0 and positive dt"));
        }
        if states.nrows() == 0 || states.ncols() == 0 || !states.ncols().is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "trajectory states must be N x 2n_z with N >= 1, got {} x {}",
                states.nrows(),
                states.ncols()
            )));
        }
        ensure_finite(states.as_slice(), "trajectory states")?;
        Ok(Self {
            t0,
            dt,
            states,
            accels: None,
            inputs: None,
            params: None,
        })
    }

    pub fn from_rows(t0: f64, dt: f64, rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::invalid("ragged trajectory rows"));
        }
        let m = DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]);
        Self::new(t0, dt, m)
    }

    pub fn with_accels(mut self, accels: DMatrix<f64>) -> Result<Self> {
        if accels.nrows() != self.len() || accels.ncols() != self.n_z() {
            return Err(Error::invalid("acceleration block has the wrong shape"));
        }
        ensure_finite(accels.as_slice(), "accelerations")?;
        self.accels = Some(accels);
        Ok(self)
    }

    pub fn with_inputs(mut self, inputs: DMatrix<f64>) -> Result<Self> {
        if inputs.nrows() != self.len() || inputs.ncols() == 0 {
            return Err(Error::invalid("input block has the wrong shape"));
        }
        ensure_finite(inputs.as_slice(), "inputs")?;
        self.inputs = Some(inputs);
        Ok(self)
    }

    pub fn with_params(mut self, params: SystemParams) -> Self {
        self.params = Some(params);
        self
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_z(&self) -> usize {
        self.states.ncols() / 2
    }

    pub fn n_u(&self) -> usize {
        self.inputs.as_ref().map_or(0, DMatrix::ncols)
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn state(&self, i: usize) -> Vec<f64> {
        self.states.row(i).iter().copied().collect()
    }

    pub fn input(&self, i: usize) -> Option<Vec<f64>> {
        self.inputs.as_ref().map(|u| u.row(i).iter().copied().collect())
    }

    /// Velocity column `j` (the `j`-th generalized velocity over time).
    pub fn velocity_column(&self, j: usize) -> Vec<f64> {
        self.states.column(self.n_z() + j).iter().copied().collect()
    }

    /// Rows `range`, with time origin shifted accordingly.
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::invalid(format!(
                "row range {range:?} out of bounds for {} rows",
                self.len()
            )));
        }
        let n = range.end - range.start;
        let rows = |m: &DMatrix<f64>| m.rows(range.start, n).into_owned();
        Ok(Self {
            t0: self.time(range.start),
            dt: self.dt,
            states: rows(&self.states),
            accels: self.accels.as_ref().map(rows),
            inputs: self.inputs.as_ref().map(rows),
            params: self.params,
        })
    }

    /// Keeps only the generalized coordinates in `coords` (positions,
    /// matching velocities, and accelerations if present).
    pub fn select_coords(&self, coords: &[usize]) -> Result<Self> {
        let n = self.n_z();
        if coords.is_empty() || coords.iter().any(|&c| c >= n) {
            return Err(Error::invalid(format!(
                "coordinate selection {coords:?} invalid for n_z = {n}"
            )));
        }
        let cols: Vec<usize> = coords
            .iter()
            .copied()
            .chain(coords.iter().map(|c| c + n))
            .collect();
        let states = self.states.select_columns(cols.iter());
        Ok(Self {
            t0: self.t0,
            dt: self.dt,
            states,
            accels: self.accels.as_ref().map(|a| a.select_columns(coords.iter())),
            inputs: self.inputs.clone(),
            params: self.params,
        })
    }
}

/// Integrates `n_steps` steps from `z0` starting at t = 0.
pub fn rollout<F: VectorField + ?Sized>(
    field: &F,
    z0: &[f64],
    integ: &Integrator,
    n_steps: usize,
) -> Result<Trajectory> {
    if z0.is_empty() {
        return Err(Error::invalid("empty initial state"));
    }
    ensure_finite(z0, "initial state")?;
    let mut data = Vec::with_capacity((n_steps + 1) * z0.len());
    data.extend_from_slice(z0);
    let mut z = z0.to_vec();
    for k in 0..n_steps {
        z = step_indexed(field, &z, k as f64 * integ.dt, integ, k + 1)?;
        data.extend_from_slice(&z);
    }
    let states = DMatrix::from_row_slice(n_steps + 1, z0.len(), &data);
    Trajectory::new(0.0, integ.dt, states)
}

/// Largest projection iteration count before reporting drift.
pub const MAX_PROJECTION_ITERS: usize = 20;
/// Position residual targeted by the projection.
pub const PROJECTION_TOL: f64 = 1e-8;

/// Gauss-Newton projection of `q` onto `Φ(q) = 0`.
///
/// Returns the projected coordinates and the final residual.
pub fn project_positions(q: &[f64], p: &SliderCrankParams) -> Result<([f64; SC_COORDS], f64)> {
    let mut q: [f64; SC_COORDS] = q
        .try_into()
        .map_err(|_| Error::invalid("slider-crank q must have 9 entries"))?;
    let mut res = sc_constraints(&q, p).amax();
    let mut iters = 0;
    // A few extra sweeps past the tolerance are cheap and keep the drift
    // well below it.
    while res > PROJECTION_TOL * 1e-4 && iters < MAX_PROJECTION_ITERS {
        let phi = sc_constraints(&q, p);
        let jac = sc_jacobian(&q, p);
        let gram = jac * jac.transpose();
        let Some(chol) = gram.cholesky() else {
            return Err(Error::SingularConfiguration(
                "constraint Jacobian lost rank during projection".into(),
            ));
        };
        let dq = jac.transpose() * chol.solve(&phi);
        for i in 0..SC_COORDS {
            q[i] -= dq[i];
        }
        let next = sc_constraints(&q, p).amax();
        iters += 1;
        if next >= res && res <= PROJECTION_TOL {
            break;
        }
        res = next;
    }
    Ok((q, res))
}

/// Removes the component of `q̇` that violates `Φ_q q̇ = 0` (minimum-norm
/// correction).
pub fn project_velocities(
    q: &[f64],
    qdot: &[f64],
    p: &SliderCrankParams,
) -> Result<[f64; SC_COORDS]> {
    let jac = sc_jacobian(q, p);
    let v = SVector::<f64, SC_COORDS>::from_column_slice(qdot);
    let gram = jac * jac.transpose();
    let chol = gram.cholesky().ok_or_else(|| {
        Error::SingularConfiguration("constraint Jacobian lost rank during projection".into())
    })?;
    let dv = jac.transpose() * chol.solve(&(jac * v));
    let out = v - dv;
    Ok(std::array::from_fn(|i| out[i]))
}

/// Integrates the constrained slider-crank and projects `(q, q̇)` back onto
/// the position and velocity constraint manifolds after every step.
///
/// The returned trajectory carries the KKT accelerations of every row.
pub fn rollout_constrained(
    q0: &[f64],
    qdot0: &[f64],
    p: &SliderCrankParams,
    integ: &Integrator,
    n_steps: usize,
) -> Result<Trajectory> {
    if q0.len() != SC_COORDS || qdot0.len() != SC_COORDS {
        return Err(Error::invalid("slider-crank state must have 9 coordinates"));
    }
    if sc_constraints(q0, p).amax() > 1e-6 {
        return Err(Error::invalid(
            "initial slider-crank configuration is off the constraint manifold",
        ));
    }
    let field = wrap_second_order(SC_COORDS, |q: &[f64], qd: &[f64]| {
        slider_crank_rhs(q, qd, p).map(|s| s.qddot.iter().copied().collect())
    });

    let rows = n_steps + 1;
    let mut states = DMatrix::zeros(rows, 2 * SC_COORDS);
    let mut accels = DMatrix::zeros(rows, SC_COORDS);
    let mut z: Vec<f64> = q0.iter().chain(qdot0).copied().collect();
    for k in 0..rows {
        if k > 0 {
            z = step_indexed(&field, &z, (k - 1) as f64 * integ.dt, integ, k)?;
            let (q, res) = project_positions(&z[..SC_COORDS], p)?;
            if res > PROJECTION_TOL {
                return Err(Error::Drift {
                    step: k,
                    residual: res,
                });
            }
            let qd = project_velocities(&q, &z[SC_COORDS..], p)?;
            z = q.iter().chain(qd.iter()).copied().collect();
        }
        let sol = slider_crank_rhs(&z[..SC_COORDS], &z[SC_COORDS..], p)?;
        for j in 0..2 * SC_COORDS {
            states[(k, j)] = z[j];
        }
        for j in 0..SC_COORDS {
            accels[(k, j)] = sol.qddot[j];
        }
    }
    Trajectory::new(0.0, integ.dt, states)?
        .with_accels(accels)
        .map(|t| t.with_params(SystemParams::SliderCrank(*p)))
}

/// Observed convergence order of a scheme on `ż = z` over `t ∈ [0, 1]`,
/// from a least-squares fit of log(error) against log(dt).
pub fn convergence_slope(scheme: Scheme, dts: &[f64]) -> Result<f64> {
    let field = |_t: f64, z: &[f64]| z.to_vec();
    let mut xs = Vec::with_capacity(dts.len());
    let mut ys = Vec::with_capacity(dts.len());
    for &dt in dts {
        let integ = Integrator::new(scheme, dt)?;
        let n = (1.0 / dt).round() as usize;
        let mut z = vec![1.0];
        for _ in 0..n {
            z = step(&field, &z, 0.0, &integ)?;
        }
        let err = (z[0] - (n as f64 * dt).exp()).abs();
        xs.push(dt.ln());
        ys.push(err.ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{slider_crank_reconstruct, smsd_accel, smsd_energy, SmsdParams};
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_field_is_identity() {
        let f = |_t: f64, z: &[f64]| vec![0.0; z.len()];
        for scheme in [Scheme::Rk4, Scheme::Midpoint, Scheme::Euler] {
            let integ = Integrator::new(scheme, 0.3).unwrap();
            assert_eq!(step(&f, &[1.0, -2.0], 0.0, &integ).unwrap(), vec![1.0, -2.0]);
        }
    }

    #[test]
    fn exponential_single_step() {
        let f = |_t: f64, z: &[f64]| z.to_vec();
        let z = step(&f, &[1.0], 0.0, &Integrator::rk4(0.1).unwrap()).unwrap();
        // 1 + h + h²/2 + h³/6 + h⁴/24
        assert_abs_diff_eq!(z[0], 1.105_170_833_333_333_3, epsilon = 1e-15);
        let z = step(&f, &[1.0], 0.0, &Integrator::midpoint(0.1).unwrap()).unwrap();
        assert_abs_diff_eq!(z[0], 1.105, epsilon = 1e-15);
    }

    #[test]
    fn non_finite_stage_is_divergence() {
        let f = |_t: f64, z: &[f64]| vec![f64::NAN; z.len()];
        let integ = Integrator::rk4(0.1).unwrap();
        assert!(matches!(step(&f, &[1.0], 0.0, &integ), Err(Error::Divergence { .. })));
        let g = |_t: f64, z: &[f64]| vec![if z[0] > 2.0 { f64::INFINITY } else { 1.0 }];
        let err = rollout(&g, &[0.0], &Integrator::new(Scheme::Euler, 1.0).unwrap(), 10)
            .unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 4 }), "{err:?}");
    }

    #[test]
    fn invalid_dt() {
        assert!(Integrator::rk4(0.0).is_err());
        assert!(Integrator::rk4(-1.0).is_err());
        assert!(Integrator::rk4(f64::NAN).is_err());
    }

    #[test]
    fn free_motion_is_linear() {
        let field = wrap_second_order(2, |_q: &[f64], _v: &[f64]| Ok(vec![0.0, 0.0]));
        for scheme in [Scheme::Rk4, Scheme::Midpoint, Scheme::Euler] {
            let integ = Integrator::new(scheme, 0.1).unwrap();
            let traj = rollout(&field, &[0.0, 1.0, 2.0, -1.0], &integ, 10).unwrap();
            let last = traj.state(10);
            assert_abs_diff_eq!(last[0], 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(last[1], 0.0, epsilon = 1e-12);
        }
        assert_eq!(field.eval(0.0, &[0.0; 4]).unwrap().len(), 4);
        assert!(field.eval(0.0, &[0.0; 3]).is_err());
    }

    /// Closed-form underdamped oscillator x(t) for x(0)=x0, v(0)=0.
    fn damped_oscillator(p: &SmsdParams, x0: f64, t: f64) -> (f64, f64) {
        let zeta_w = p.d / (2.0 * p.m);
        let w0sq = p.k / p.m;
        let wd = (w0sq - zeta_w * zeta_w).sqrt();
        let e = (-zeta_w * t).exp();
        let (s, c) = (wd * t).sin_cos();
        let x = x0 * e * (c + zeta_w / wd * s);
        let v = -x0 * e * (w0sq / wd) * s;
        (x, v)
    }

    #[test]
    fn smsd_matches_closed_form() {
        let p = SmsdParams::default();
        let field = wrap_second_order(1, |q: &[f64], v: &[f64]| Ok(vec![smsd_accel(q[0], v[0], &p)?]));
        let integ = Integrator::rk4(0.01).unwrap();
        let traj = rollout(&field, &[1.0, 0.0], &integ, 700).unwrap();
        assert_eq!(traj.len(), 701);
        // On a linear system one RK4 step is the degree-4 Taylor polynomial
        // of exp(hA); iterate that propagator as an exact oracle.
        let a = nalgebra::Matrix2::new(0.0, 1.0, -p.k / p.m, -p.d / p.m) * 0.01;
        let a2 = a * a;
        let prop = nalgebra::Matrix2::identity() + a + a2 / 2.0 + a2 * a / 6.0 + a2 * a2 / 24.0;
        let mut z = nalgebra::Vector2::new(1.0, 0.0);
        let (mut err_x, mut err_v) = (0.0f64, 0.0f64);
        for i in 0..traj.len() {
            assert_abs_diff_eq!(traj.states[(i, 0)], z[0], epsilon = 1e-12);
            assert_abs_diff_eq!(traj.states[(i, 1)], z[1], epsilon = 1e-12);
            let (x, v) = damped_oscillator(&p, 1.0, traj.time(i));
            err_x = err_x.max((traj.states[(i, 0)] - x).abs());
            err_v = err_v.max((traj.states[(i, 1)] - v).abs());
            z = prop * z;
        }
        // Global RK4 error of this propagator against exp(tA), computed
        // independently: 1.5625e-8 in x and 3.6188e-8 in v.
        assert!(err_x < 2e-8, "{err_x}");
        assert!(err_v < 4e-8, "{err_v}");
    }

    #[test]
    fn rollout_single_step_matches_step() {
        let f = |_t: f64, z: &[f64]| vec![z[1], -z[0]];
        let integ = Integrator::rk4(0.05).unwrap();
        let traj = rollout(&f, &[1.0, 0.0], &integ, 1).unwrap();
        assert_eq!(traj.len(), 2);
        assert_eq!(traj.state(1), step(&f, &[1.0, 0.0], 0.0, &integ).unwrap());
        assert_eq!(rollout(&f, &[1.0, 0.0], &integ, 0).unwrap().len(), 1);
    }

    #[test]
    fn smsd_amplitude_decays_per_period() {
        let p = SmsdParams::default();
        let field = wrap_second_order(1, |q: &[f64], v: &[f64]| Ok(vec![smsd_accel(q[0], v[0], &p)?]));
        let traj = rollout(&field, &[1.0, 0.0], &Integrator::rk4(0.01).unwrap(), 1000).unwrap();
        let period = 2.0 * std::f64::consts::PI / (p.k / p.m - (p.d / (2.0 * p.m)).powi(2)).sqrt();
        let per = (period / 0.01).floor() as usize;
        let peaks: Vec<f64> = traj
            .states
            .column(0)
            .as_slice()
            .chunks(per)
            .map(|c| c.iter().fold(0.0_f64, |m, x| m.max(x.abs())))
            .collect();
        assert!(peaks.len() >= 3);
        for w in peaks.windows(2) {
            assert!(w[1] <= w[0], "{peaks:?}");
        }
    }

    #[test]
    fn undamped_smsd_conserves_energy() {
        let p = SmsdParams {
            d: 0.0,
            ..Default::default()
        };
        let field = wrap_second_order(1, |q: &[f64], v: &[f64]| Ok(vec![smsd_accel(q[0], v[0], &p)?]));
        let traj = rollout(&field, &[1.0, 0.0], &Integrator::rk4(0.01).unwrap(), 1000).unwrap();
        let e0 = smsd_energy(1.0, 0.0, &p);
        for i in 0..traj.len() {
            let e = smsd_energy(traj.states[(i, 0)], traj.states[(i, 1)], &p);
            assert!(((e - e0) / e0).abs() < 1e-6);
        }
    }

    #[test]
    fn integrator_orders() {
        let dts = [0.1, 0.05, 0.025, 0.0125];
        let rk4 = convergence_slope(Scheme::Rk4, &dts).unwrap();
        let mid = convergence_slope(Scheme::Midpoint, &dts).unwrap();
        assert!((3.8..=4.2).contains(&rk4), "rk4 slope {rk4}");
        assert!((1.8..=2.2).contains(&mid), "midpoint slope {mid}");
    }

    #[test]
    fn counts_field_evaluations() {
        let f = |_t: f64, z: &[f64]| z.to_vec();
        reset_field_evaluations();
        rollout(&f, &[1.0, 0.0], &Integrator::rk4(0.1).unwrap(), 7).unwrap();
        assert_eq!(field_evaluations(), 28);
        reset_field_evaluations();
        rollout(&f, &[1.0, 0.0], &Integrator::midpoint(0.1).unwrap(), 7).unwrap();
        assert_eq!(field_evaluations(), 14);
    }

    #[test]
    fn projection_fixes_on_manifold_state() {
        let p = SliderCrankParams::default();
        let (q, qd) = slider_crank_reconstruct(0.8, 1.5, &p).unwrap();
        let (qp, _) = project_positions(&q, &p).unwrap();
        let vp = project_velocities(&qp, &qd, &p).unwrap();
        for i in 0..9 {
            assert_abs_diff_eq!(q[i], qp[i], epsilon = 1e-12);
            assert_abs_diff_eq!(qd[i], vp[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn projection_removes_perturbation() {
        let p = SliderCrankParams::default();
        let (mut q, mut qd) = slider_crank_reconstruct(0.8, 1.5, &p).unwrap();
        q[0] += 1e-3;
        q[6] -= 2e-3;
        qd[4] += 0.01;
        let (qp, res) = project_positions(&q, &p).unwrap();
        assert!(res <= PROJECTION_TOL);
        let vp = project_velocities(&qp, &qd, &p).unwrap();
        let jv = sc_jacobian(&qp, &p) * SVector::<f64, 9>::from(vp);
        assert!(jv.amax() < 1e-12);
    }

    #[test]
    fn constrained_rollout_short() {
        let p = SliderCrankParams::default();
        let (q, qd) = slider_crank_reconstruct(0.0, 0.0, &p).unwrap();
        let traj = rollout_constrained(&q, &qd, &p, &Integrator::rk4(0.01).unwrap(), 200).unwrap();
        assert_eq!(traj.len(), 201);
        for i in 0..traj.len() {
            let row = traj.state(i);
            assert!(sc_constraints(&row[..9], &p).amax() <= 1e-6);
            assert_abs_diff_eq!(row[8], 0.0, epsilon = 1e-12);
        }
        assert!(traj.accels.is_some());
    }

    #[test]
    fn slicing_and_selection() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 10.0 + i as f64, 0.5, 1.5]).collect();
        let traj = Trajectory::from_rows(0.0, 0.1, &rows).unwrap();
        let s = traj.slice(2..4).unwrap();
        assert_eq!(s.len(), 2);
        assert_abs_diff_eq!(s.t0, 0.2, epsilon = 1e-15);
        let c = traj.select_coords(&[1]).unwrap();
        assert_eq!(c.state(3), vec![13.0, 1.5]);
        assert!(traj.slice(3..3).is_err());
        assert!(traj.select_coords(&[2]).is_err());
    }
}
