//! Ground-truth physics for the five benchmark systems.
//!
//! Every function here is a pure function of its inputs. Units are SI
//! throughout; angles are radians.

use nalgebra::{SMatrix, SVector};

use crate::error::{ensure_finite, Error, Result};

/// Single mass-spring-damper.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmsdParams {
    pub m: f64,
    pub k: f64,
    pub d: f64,
}

impl Default for SmsdParams {
    fn default() -> Self {
        Self {
            m: 10.0,
            k: 50.0,
            d: 2.0,
        }
    }
}

/// Triple mass-spring-damper chain anchored to the ground through spring 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TmsdParams {
    pub m: [f64; 3],
    pub k: [f64; 3],
    pub d: [f64; 3],
}

impl Default for TmsdParams {
    fn default() -> Self {
        Self {
            m: [100.0, 10.0, 1.0],
            k: [50.0; 3],
            d: [2.0; 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoublePendulumParams {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    pub g: f64,
}

impl Default for DoublePendulumParams {
    fn default() -> Self {
        Self {
            m1: 1.0,
            m2: 1.0,
            l1: 1.0,
            l2: 1.0,
            g: 9.81,
        }
    }
}

/// Planar slider-crank: crank (body 1), connecting rod (body 2), slider
/// (body 3). `r` and `l` are the half-lengths of crank and rod.
///
/// The mass matrix of body i is `diag(mi, mi, ii)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliderCrankParams {
    pub m1: f64,
    pub i1: f64,
    pub m2: f64,
    pub i2: f64,
    pub m3: f64,
    pub i3: f64,
    pub r: f64,
    pub l: f64,
    /// Translational spring between the wall and the slider.
    pub k: f64,
    /// Slider position at which the spring is unstretched. The default
    /// `2(r + l)` is the slider position at θ1 = 0.
    pub spring_rest: f64,
    /// Constant motor torque on the crank.
    pub tau: f64,
    pub c01: f64,
    pub c12: f64,
    pub c23: f64,
    /// Viscous slider damping.
    pub c: f64,
    /// Coulomb friction magnitude on the slider.
    pub f: f64,
}

impl Default for SliderCrankParams {
    fn default() -> Self {
        Self {
            m1: 3.0,
            i1: 4.0,
            m2: 6.0,
            i2: 32.0,
            m3: 1.0,
            i3: 1.0,
            r: 1.0,
            l: 2.0,
            k: 1.0,
            spring_rest: 6.0,
            tau: 1.0,
            c01: 0.1,
            c12: 0.1,
            c23: 0.1,
            c: 0.1,
            f: 0.0,
        }
    }
}

/// Cart-pole with the pole angle measured from the upright position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub length: f64,
    pub g: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 1.0,
            length: 1.0,
            g: 9.81,
        }
    }
}

/// Physical parameter vector of one benchmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SystemParams {
    Smsd(SmsdParams),
    Tmsd(TmsdParams),
    DoublePendulum(DoublePendulumParams),
    SliderCrank(SliderCrankParams),
    CartPole(CartPoleParams),
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive, got {v}")))
    }
}

fn check_non_negative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be non-negative, got {v}")))
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        match self {
            SystemParams::Smsd(p) => {
                check_positive("m", p.m)?;
                check_non_negative("k", p.k)?;
                check_non_negative("d", p.d)
            }
            SystemParams::Tmsd(p) => {
                for i in 0..3 {
                    check_positive("m", p.m[i])?;
                    check_non_negative("k", p.k[i])?;
                    check_non_negative("d", p.d[i])?;
                }
                Ok(())
            }
            SystemParams::DoublePendulum(p) => {
                check_positive("m1", p.m1)?;
                check_positive("m2", p.m2)?;
                check_positive("l1", p.l1)?;
                check_positive("l2", p.l2)?;
                check_non_negative("g", p.g)
            }
            SystemParams::SliderCrank(p) => {
                for (n, v) in [
                    ("m1", p.m1),
                    ("i1", p.i1),
                    ("m2", p.m2),
                    ("i2", p.i2),
                    ("m3", p.m3),
                    ("i3", p.i3),
                    ("r", p.r),
                    ("l", p.l),
                ] {
                    check_positive(n, v)?;
                }
                for (n, v) in [
                    ("k", p.k),
                    ("c01", p.c01),
                    ("c12", p.c12),
                    ("c23", p.c23),
                    ("c", p.c),
                    ("f", p.f),
                ] {
                    check_non_negative(n, v)?;
                }
                if !p.tau.is_finite() || !p.spring_rest.is_finite() {
                    return Err(Error::invalid("tau and spring_rest must be finite"));
                }
                Ok(())
            }
            SystemParams::CartPole(p) => {
                check_positive("cart_mass", p.cart_mass)?;
                check_positive("pole_mass", p.pole_mass)?;
                check_positive("length", p.length)?;
                check_non_negative("g", p.g)
            }
        }
    }

    /// Number of generalized coordinates of the full (non-minimal) state.
    pub fn n_coords(&self) -> usize {
        match self {
            SystemParams::Smsd(_) => 1,
            SystemParams::Tmsd(_) => 3,
            SystemParams::DoublePendulum(_) => 2,
            SystemParams::SliderCrank(_) => 9,
            SystemParams::CartPole(_) => 2,
        }
    }
}

/// Augmented state `Z = (q, qdot)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
}

impl AugmentedState {
    pub fn new(q: Vec<f64>, qdot: Vec<f64>) -> Result<Self> {
        if q.is_empty() || q.len() != qdot.len() {
            return Err(Error::invalid(format!(
                "q and qdot must have equal non-zero length (got {} and {})",
                q.len(),
                qdot.len()
            )));
        }
        ensure_finite(&q, "q")?;
        ensure_finite(&qdot, "qdot")?;
        Ok(Self { q, qdot })
    }

    /// Splits a stacked `(q, qdot)` vector.
    pub fn from_stacked(z: &[f64]) -> Result<Self> {
        if !z.len().is_multiple_of(2) {
            return Err(Error::invalid("stacked state must have even length"));
        }
        let n = z.len() / 2;
        Self::new(z[..n].to_vec(), z[n..].to_vec())
    }

    pub fn n_z(&self) -> usize {
        self.q.len()
    }

    pub fn stacked(&self) -> Vec<f64> {
        let mut z = self.q.clone();
        z.extend_from_slice(&self.qdot);
        z
    }
}

// ---------------------------------------------------------------------------
// Mass-spring-damper systems

pub fn smsd_accel(x: f64, v: f64, p: &SmsdParams) -> Result<f64> {
    ensure_finite(&[x, v], "smsd state")?;
    Ok(-(p.k / p.m) * x - (p.d / p.m) * v)
}

/// Total mechanical energy `½kx² + ½mv²`.
pub fn smsd_energy(x: f64, v: f64, p: &SmsdParams) -> f64 {
    0.5 * p.k * x * x + 0.5 * p.m * v * v
}

/// Accelerations of the three-mass chain.
///
/// Mass 1 carries the ground spring `k1`; its damper `d1` acts on the
/// relative velocity `v1 - v2`, exactly as the reference equations are
/// written.
pub fn tmsd_accel(state: &AugmentedState, p: &TmsdParams) -> Result<[f64; 3]> {
    if state.n_z() != 3 {
        return Err(Error::invalid(format!(
            "triple mass-spring-damper needs n_z = 3, got {}",
            state.n_z()
        )));
    }
    let [x1, x2, x3] = [state.q[0], state.q[1], state.q[2]];
    let [v1, v2, v3] = [state.qdot[0], state.qdot[1], state.qdot[2]];
    let [m1, m2, m3] = p.m;
    let [k1, k2, k3] = p.k;
    let [d1, d2, d3] = p.d;
    let a1 = -k1 / m1 * x1 - d1 / m1 * (v1 - v2) + k2 / m1 * (x2 - x1) + d2 / m1 * (v2 - v1);
    let a2 = -k2 / m2 * (x2 - x1) - d2 / m2 * (v2 - v1) + k3 / m2 * (x3 - x2)
        + d3 / m2 * (v3 - v2);
    let a3 = -k3 / m3 * (x3 - x2) - d3 / m3 * (v3 - v2);
    Ok([a1, a2, a3])
}

pub fn tmsd_energy(state: &AugmentedState, p: &TmsdParams) -> f64 {
    let x = &state.q;
    let v = &state.qdot;
    let kinetic: f64 = (0..3).map(|i| 0.5 * p.m[i] * v[i] * v[i]).sum();
    let potential = 0.5 * p.k[0] * x[0] * x[0]
        + 0.5 * p.k[1] * (x[1] - x[0]).powi(2)
        + 0.5 * p.k[2] * (x[2] - x[1]).powi(2);
    kinetic + potential
}

// ---------------------------------------------------------------------------
// Double pendulum (Hamiltonian form)

/// Hamilton's equations for the double pendulum.
///
/// `state = (θ1, θ2, p_θ1, p_θ2)`; returns `(θ̇1, θ̇2, ṗ_θ1, ṗ_θ2)`.
pub fn double_pendulum_rhs(state: [f64; 4], p: &DoublePendulumParams) -> Result<[f64; 4]> {
    ensure_finite(&state, "double pendulum state")?;
    let [th1, th2, p1, p2] = state;
    let DoublePendulumParams { m1, m2, l1, l2, g } = *p;
    let delta = th1 - th2;
    let (sd, cd) = delta.sin_cos();
    let den = m1 + m2 * sd * sd;

    let th1_dot = (l2 * p1 - l1 * p2 * cd) / (l1 * l1 * l2 * den);
    let th2_dot = (-m2 * l2 * p1 * cd + (m1 + m2) * l1 * p2) / (m2 * l1 * l2 * l2 * den);

    let h1 = p1 * p2 * sd / (l1 * l2 * den);
    let h2 = (m2 * l2 * l2 * p1 * p1 + (m1 + m2) * l1 * l1 * p2 * p2
        - 2.0 * m2 * l1 * l2 * p1 * p2 * cd)
        / (2.0 * l1 * l1 * l2 * l2 * den * den);
    let s2d = (2.0 * delta).sin();

    let p1_dot = -(m1 + m2) * g * l1 * th1.sin() - h1 + h2 * s2d;
    let p2_dot = -m2 * g * l2 * th2.sin() + h1 - h2 * s2d;
    Ok([th1_dot, th2_dot, p1_dot, p2_dot])
}

/// Configuration-dependent inertia matrix `∂²T/∂θ̇²` as `[[a, b], [b, c]]`.
fn dp_inertia(th1: f64, th2: f64, p: &DoublePendulumParams) -> (f64, f64, f64) {
    let a = (p.m1 + p.m2) * p.l1 * p.l1;
    let b = p.m2 * p.l1 * p.l2 * (th1 - th2).cos();
    let c = p.m2 * p.l2 * p.l2;
    (a, b, c)
}

/// Conjugate momenta `p = ∂T/∂θ̇`.
pub fn dp_momenta_from_velocities(
    th1: f64,
    th2: f64,
    w1: f64,
    w2: f64,
    p: &DoublePendulumParams,
) -> (f64, f64) {
    let (a, b, c) = dp_inertia(th1, th2, p);
    (a * w1 + b * w2, b * w1 + c * w2)
}

/// Inverse of [`dp_momenta_from_velocities`].
pub fn dp_velocities_from_momenta(
    th1: f64,
    th2: f64,
    p1: f64,
    p2: f64,
    p: &DoublePendulumParams,
) -> (f64, f64) {
    let (a, b, c) = dp_inertia(th1, th2, p);
    let det = a * c - b * b;
    // det = m1 m2 l1² l2² + m2² l1² l2² sin²Δ > 0 for positive parameters
    assert!(det > 0.0, "double pendulum inertia matrix is singular");
    ((c * p1 - b * p2) / det, (-b * p1 + a * p2) / det)
}

/// Total energy `T + V` in angle/angular-velocity coordinates.
pub fn dp_energy(th1: f64, th2: f64, w1: f64, w2: f64, p: &DoublePendulumParams) -> f64 {
    let DoublePendulumParams { m1, m2, l1, l2, g } = *p;
    let t = 0.5 * m1 * l1 * l1 * w1 * w1
        + 0.5 * m2 * (l1 * l1 * w1 * w1 + l2 * l2 * w2 * w2
            + 2.0 * l1 * l2 * w1 * w2 * (th1 - th2).cos());
    let v = -m1 * g * l1 * th1.cos() - m2 * g * (l1 * th1.cos() + l2 * th2.cos());
    t + v
}

/// Angular accelerations `(θ̈1, θ̈2)` from angles and angular velocities,
/// obtained by differentiating the Hamiltonian flow through the momentum
/// map.
pub fn dp_angular_accel(state: [f64; 4], p: &DoublePendulumParams) -> Result<[f64; 2]> {
    let [th1, th2, w1, w2] = state;
    let (p1, p2) = dp_momenta_from_velocities(th1, th2, w1, w2, p);
    let [_, _, p1_dot, p2_dot] = double_pendulum_rhs([th1, th2, p1, p2], p)?;
    // p = M(θ) ω  =>  ṗ = M ω̇ + Ṁ ω, with Ṁ only in the off-diagonal term.
    let b_dot = -p.m2 * p.l1 * p.l2 * (th1 - th2).sin() * (w1 - w2);
    let rhs1 = p1_dot - b_dot * w2;
    let rhs2 = p2_dot - b_dot * w1;
    let (a1, a2) = dp_velocities_from_momenta(th1, th2, rhs1, rhs2, p);
    Ok([a1, a2])
}

// ---------------------------------------------------------------------------
// Cart-pole

/// Returns `(θ̈, ẍ)` for state `(x, θ, v, ω)` and horizontal force `u`.
pub fn cartpole_accel(state: [f64; 4], u: f64, p: &CartPoleParams) -> Result<(f64, f64)> {
    ensure_finite(&state, "cart-pole state")?;
    ensure_finite(&[u], "cart-pole input")?;
    let [_, theta, _, omega] = state;
    let CartPoleParams {
        cart_mass: big_m,
        pole_mass: m,
        length: l,
        g,
    } = *p;
    let (s, c) = theta.sin_cos();
    // [[m l², m l c], [m l c, M + m]] · (θ̈, ẍ) = (m g l s, u + m l ω² s)
    let a11 = m * l * l;
    let a12 = m * l * c;
    let a22 = big_m + m;
    let det = a11 * a22 - a12 * a12;
    assert!(
        det >= m * l * l * big_m * (1.0 - 1e-12),
        "cart-pole mass matrix determinant fell below m l² M"
    );
    let b1 = m * g * l * s;
    let b2 = u + m * l * omega * omega * s;
    let theta_dd = (a22 * b1 - a12 * b2) / det;
    let x_dd = (a11 * b2 - a12 * b1) / det;
    Ok((theta_dd, x_dd))
}

// ---------------------------------------------------------------------------
// Slider-crank

pub const SC_COORDS: usize = 9;
pub const SC_CONSTRAINTS: usize = 8;

/// Index of the crank angle θ1 inside `q`.
pub const SC_CRANK_ANGLE: usize = 2;

/// Accelerations and Lagrange multipliers of the constrained slider-crank.
#[derive(Debug, Clone, PartialEq)]
pub struct KktSolution {
    pub qddot: SVector<f64, SC_COORDS>,
    pub lambda: SVector<f64, SC_CONSTRAINTS>,
}

pub fn sc_mass_matrix(p: &SliderCrankParams) -> SMatrix<f64, SC_COORDS, SC_COORDS> {
    SMatrix::from_diagonal(&SVector::from([
        p.m1, p.m1, p.i1, p.m2, p.m2, p.i2, p.m3, p.m3, p.i3,
    ]))
}

/// Position constraints `Φ(q)`.
pub fn sc_constraints(q: &[f64], p: &SliderCrankParams) -> SVector<f64, SC_CONSTRAINTS> {
    let (r, l) = (p.r, p.l);
    let (s1, c1) = q[2].sin_cos();
    let (s2, c2) = q[5].sin_cos();
    SVector::from([
        q[0] - r * c1,
        q[1] - r * s1,
        q[0] + r * c1 - q[3] + l * c2,
        q[1] + r * s1 - q[4] + l * s2,
        q[3] + l * c2 - q[6],
        q[4] + l * s2 - q[7],
        q[7],
        q[8],
    ])
}

/// Constraint Jacobian `Φ_q`.
pub fn sc_jacobian(q: &[f64], p: &SliderCrankParams) -> SMatrix<f64, SC_CONSTRAINTS, SC_COORDS> {
    let (r, l) = (p.r, p.l);
    let (s1, c1) = q[2].sin_cos();
    let (s2, c2) = q[5].sin_cos();
    let mut j = SMatrix::<f64, SC_CONSTRAINTS, SC_COORDS>::zeros();
    j[(0, 0)] = 1.0;
    j[(0, 2)] = r * s1;
    j[(1, 1)] = 1.0;
    j[(1, 2)] = -r * c1;
    j[(2, 0)] = 1.0;
    j[(2, 2)] = -r * s1;
    j[(2, 3)] = -1.0;
    j[(2, 5)] = -l * s2;
    j[(3, 1)] = 1.0;
    j[(3, 2)] = r * c1;
    j[(3, 4)] = -1.0;
    j[(3, 5)] = l * c2;
    j[(4, 3)] = 1.0;
    j[(4, 5)] = -l * s2;
    j[(4, 6)] = -1.0;
    j[(5, 4)] = 1.0;
    j[(5, 5)] = l * c2;
    j[(5, 7)] = -1.0;
    j[(6, 7)] = 1.0;
    j[(7, 8)] = 1.0;
    j
}

/// Acceleration right-hand side `γ_c = -(Φ_q q̇)_q q̇`.
pub fn sc_gamma(q: &[f64], qdot: &[f64], p: &SliderCrankParams) -> SVector<f64, SC_CONSTRAINTS> {
    let (r, l) = (p.r, p.l);
    let (s1, c1) = q[2].sin_cos();
    let (s2, c2) = q[5].sin_cos();
    let w1sq = qdot[2] * qdot[2];
    let w2sq = qdot[5] * qdot[5];
    SVector::from([
        -r * w1sq * c1,
        -r * w1sq * s1,
        r * w1sq * c1 + l * w2sq * c2,
        r * w1sq * s1 + l * w2sq * s2,
        l * w2sq * c2,
        l * w2sq * s2,
        0.0,
        0.0,
    ])
}

/// Smoothing velocity of the regularized Coulomb friction.
const FRICTION_SMOOTHING: f64 = 0.01;

/// Applied generalized forces: motor torque, rotational joint dampers,
/// slider spring, friction and slider damper.
pub fn sc_external_forces(
    q: &[f64],
    qdot: &[f64],
    p: &SliderCrankParams,
) -> SVector<f64, SC_COORDS> {
    let (w1, w2, w3) = (qdot[2], qdot[5], qdot[8]);
    let x3_dot = qdot[6];
    let joint12 = p.c12 * (w1 - w2);
    let joint23 = p.c23 * (w2 - w3);
    let mut f = SVector::<f64, SC_COORDS>::zeros();
    f[2] = p.tau - p.c01 * w1 - joint12;
    f[5] = joint12 - joint23;
    f[8] = joint23;
    f[6] = -p.k * (q[6] - p.spring_rest)
        - p.f * (x3_dot / FRICTION_SMOOTHING).tanh()
        - p.c * x3_dot;
    f
}

type Kkt = SMatrix<f64, 17, 17>;

fn sc_kkt_system(
    q: &[f64],
    qdot: &[f64],
    p: &SliderCrankParams,
) -> (Kkt, SVector<f64, 17>) {
    let mass = sc_mass_matrix(p);
    let jac = sc_jacobian(q, p);
    let mut a = Kkt::zeros();
    a.fixed_view_mut::<9, 9>(0, 0).copy_from(&mass);
    a.fixed_view_mut::<9, 8>(0, 9).copy_from(&jac.transpose());
    a.fixed_view_mut::<8, 9>(9, 0).copy_from(&jac);
    let mut b = SVector::<f64, 17>::zeros();
    b.fixed_rows_mut::<9>(0)
        .copy_from(&sc_external_forces(q, qdot, p));
    b.fixed_rows_mut::<8>(9).copy_from(&sc_gamma(q, qdot, p));
    (a, b)
}

/// Max-norm residual of the saddle-point system at a candidate solution.
pub fn sc_kkt_residual(q: &[f64], qdot: &[f64], p: &SliderCrankParams, sol: &KktSolution) -> f64 {
    let (a, b) = sc_kkt_system(q, qdot, p);
    let mut x = SVector::<f64, 17>::zeros();
    x.fixed_rows_mut::<9>(0).copy_from(&sol.qddot);
    x.fixed_rows_mut::<8>(9).copy_from(&sol.lambda);
    (a * x - b).amax()
}

/// Solves `[[M, Φ_qᵀ], [Φ_q, 0]] (q̈, λ) = (F_e, γ_c)`.
pub fn slider_crank_rhs(q: &[f64], qdot: &[f64], p: &SliderCrankParams) -> Result<KktSolution> {
    if q.len() != SC_COORDS || qdot.len() != SC_COORDS {
        return Err(Error::invalid("slider-crank state must have 9 coordinates"));
    }
    ensure_finite(q, "slider-crank q")?;
    ensure_finite(qdot, "slider-crank qdot")?;
    let (a, b) = sc_kkt_system(q, qdot, p);
    let x = a.lu().solve(&b).ok_or_else(|| {
        Error::SingularConfiguration(format!("KKT matrix singular at theta1 = {}", q[2]))
    })?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularConfiguration(format!(
            "KKT solve produced non-finite values at theta1 = {}",
            q[2]
        )));
    }
    Ok(KktSolution {
        qddot: x.fixed_rows::<9>(0).into_owned(),
        lambda: x.fixed_rows::<8>(9).into_owned(),
    })
}

/// Closed-form positions and velocities from the crank angle and rate.
///
/// Uses the branch `sin θ2 = -(r/l) sin θ1` with `cos θ2 > 0`, i.e. the
/// slider on the positive x-axis.
pub fn slider_crank_reconstruct(
    theta1: f64,
    theta1_dot: f64,
    p: &SliderCrankParams,
) -> Result<([f64; SC_COORDS], [f64; SC_COORDS])> {
    ensure_finite(&[theta1, theta1_dot], "crank state")?;
    let (r, l) = (p.r, p.l);
    let (s1, c1) = theta1.sin_cos();
    let s2 = -(r / l) * s1;
    let ratio = s2.abs();
    if ratio > 1.0 {
        return Err(Error::KinematicLock { ratio });
    }
    let c2 = (1.0 - s2 * s2).sqrt();
    if c2 <= f64::EPSILON && theta1_dot != 0.0 {
        return Err(Error::KinematicLock { ratio });
    }
    let theta2 = s2.asin();

    let q = [
        r * c1,
        r * s1,
        theta1,
        2.0 * r * c1 + l * c2,
        2.0 * r * s1 + l * s2,
        theta2,
        2.0 * r * c1 + 2.0 * l * c2,
        0.0,
        0.0,
    ];

    let w1 = theta1_dot;
    let w2 = if w1 == 0.0 { 0.0 } else { -(r / l) * c1 * w1 / c2 };
    let qdot = [
        -r * s1 * w1,
        r * c1 * w1,
        w1,
        -2.0 * r * s1 * w1 - l * s2 * w2,
        2.0 * r * c1 * w1 + l * c2 * w2,
        w2,
        -2.0 * r * s1 * w1 - 2.0 * l * s2 * w2,
        0.0,
        0.0,
    ];
    Ok((q, qdot))
}
