//! Acceleration-supervised training and learned-field inference.
//!
//! A network is fit to `(q, q̇[, u]) → q̈` pairs obtained by differentiating
//! sampled velocities, so training never touches an ODE solver. The solver
//! appears only at inference, where the learned acceleration is wrapped into
//! a first-order field and integrated like any analytic model.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffest::{accel_targets, DiffConfig};
use crate::error::{ensure_finite, Error, Result};
use crate::integrate::{step_indexed, wrap_second_order, Integrator, Trajectory};
use crate::net::{adam_step, init_mlp, loss_and_grad, Activation, AdamState, Init, Mlp};

/// Per-column affine normalization `x ↦ (x − mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Columns whose spread is below this are left unscaled.
const MIN_STD: f64 = 1e-12;

impl Standardization {
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    /// Population mean and standard deviation of every column of `rows`.
    pub fn fit(rows: &DMatrix<f64>) -> Self {
        let n = rows.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(rows.ncols());
        let mut std = Vec::with_capacity(rows.ncols());
        for col in rows.column_iter() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let s = var.sqrt();
            mean.push(m);
            std.push(if s < MIN_STD { 1.0 } else { s });
        }
        Self { mean, std }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    /// Standardizes `rows` (`N × width`) into a column-per-sample matrix.
    fn apply_transposed(&self, rows: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(rows.ncols(), rows.nrows(), |j, i| {
            (rows[(i, j)] - self.mean[j]) / self.std[j]
        })
    }

    fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() {
            return Err(Error::invalid("standardization mean and std differ in length"));
        }
        ensure_finite(&self.mean, "standardization mean")?;
        ensure_finite(&self.std, "standardization std")?;
        if self.std.iter().any(|s| *s <= 0.0) {
            return Err(Error::invalid("standardization std must be positive"));
        }
        Ok(())
    }
}

/// State-acceleration pairs with their normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct FnodeDataset {
    /// `N × (2 n_z + n_u)` rows of `(q, q̇[, u])`.
    pub inputs: DMatrix<f64>,
    /// `N × n_z` accelerations.
    pub targets: DMatrix<f64>,
    pub input_stats: Standardization,
    pub target_stats: Standardization,
}

impl FnodeDataset {
    pub fn new(inputs: DMatrix<f64>, targets: DMatrix<f64>) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::invalid("dataset has no rows"));
        }
        if inputs.nrows() != targets.nrows() {
            return Err(Error::invalid(format!(
                "dataset has {} input rows but {} target rows",
                inputs.nrows(),
                targets.nrows()
            )));
        }
        let nz = targets.ncols();
        if nz == 0 || inputs.ncols() < 2 * nz {
            return Err(Error::invalid(format!(
                "input width {} cannot hold the state for {nz} accelerations",
                inputs.ncols()
            )));
        }
        ensure_finite(inputs.as_slice(), "dataset inputs")?;
        ensure_finite(targets.as_slice(), "dataset targets")?;
        let input_stats = Standardization::fit(&inputs);
        let target_stats = Standardization::fit(&targets);
        Ok(Self {
            inputs,
            targets,
            input_stats,
            target_stats,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_width(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn n_z(&self) -> usize {
        self.targets.ncols()
    }

    pub fn n_u(&self) -> usize {
        self.input_width() - 2 * self.n_z()
    }

    /// Standardized inputs, one sample per column.
    pub fn standardized_inputs(&self) -> DMatrix<f64> {
        self.input_stats.apply_transposed(&self.inputs)
    }

    /// Standardized targets, one sample per column.
    pub fn standardized_targets(&self) -> DMatrix<f64> {
        self.target_stats.apply_transposed(&self.targets)
    }
}

/// Pairs every row's `(q, q̇[, u])` with an acceleration estimated from the
/// sampled velocities.
pub fn build_dataset(traj: &Trajectory, diff: &DiffConfig) -> Result<FnodeDataset> {
    dataset_with_targets(traj, accel_targets(traj, diff)?)
}

/// Uses the trajectory's own acceleration columns as targets, e.g. from a
/// cached target file or an exact simulation.
pub fn dataset_from_accels(traj: &Trajectory) -> Result<FnodeDataset> {
    let targets = traj
        .accels
        .clone()
        .ok_or_else(|| Error::invalid("trajectory has no acceleration columns"))?;
    dataset_with_targets(traj, targets)
}

fn dataset_with_targets(traj: &Trajectory, targets: DMatrix<f64>) -> Result<FnodeDataset> {
    let inputs = match &traj.inputs {
        Some(u) => {
            let mut m = DMatrix::zeros(traj.len(), traj.states.ncols() + u.ncols());
            m.columns_mut(0, traj.states.ncols()).copy_from(&traj.states);
            m.columns_mut(traj.states.ncols(), u.ncols()).copy_from(u);
            m
        }
        None => traj.states.clone(),
    };
    FnodeDataset::new(inputs, targets)
}

/// Dataset on a subset of coordinates, e.g. the crank angle of the
/// slider-crank.
pub fn build_minimal_dataset(
    traj: &Trajectory,
    coords: &[usize],
    diff: &DiffConfig,
) -> Result<FnodeDataset> {
    build_dataset(&traj.select_coords(coords)?, diff)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Learning-rate factor applied every `decay_interval` epochs.
    pub lr_decay: f64,
    pub decay_interval: usize,
    pub width: usize,
    /// Number of hidden layers.
    pub depth: usize,
    pub activation: Activation,
    pub init: Init,
    pub seed: u64,
    /// `None` trains on the full dataset each step.
    pub batch_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            lr: 1e-3,
            lr_decay: 0.98,
            decay_interval: 1,
            width: 256,
            depth: 2,
            activation: Activation::Tanh,
            init: Init::Xavier,
            seed: 0,
            batch_size: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.width == 0 || self.depth == 0 {
            return Err(Error::invalid("hidden width and depth must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::invalid(format!("lr decay must be in (0, 1], got {}", self.lr_decay)));
        }
        if self.decay_interval == 0 {
            return Err(Error::invalid("decay interval must be at least 1"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }

    pub fn layer_dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(self.width, self.depth));
        dims.push(output);
        dims
    }
}

/// Trained network together with the normalization it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct FnodeModel {
    pub mlp: Mlp,
    pub input_stats: Standardization,
    pub target_stats: Standardization,
}

impl FnodeModel {
    pub fn new(mlp: Mlp, input_stats: Standardization, target_stats: Standardization) -> Result<Self> {
        input_stats.validate()?;
        target_stats.validate()?;
        if input_stats.width() != mlp.input_dim() || target_stats.width() != mlp.output_dim() {
            return Err(Error::invalid(
                "standardization widths do not match the network dimensions",
            ));
        }
        if mlp.input_dim() < 2 * mlp.output_dim() {
            return Err(Error::invalid(format!(
                "network maps {} inputs to {} accelerations; need at least twice as many inputs",
                mlp.input_dim(),
                mlp.output_dim()
            )));
        }
        Ok(Self {
            mlp,
            input_stats,
            target_stats,
        })
    }

    pub fn n_z(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn n_u(&self) -> usize {
        self.mlp.input_dim() - 2 * self.n_z()
    }

    fn assemble(&self, q: &[f64], qdot: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let nz = self.n_z();
        if q.len() != nz || qdot.len() != nz || u.len() != self.n_u() {
            return Err(Error::invalid(format!(
                "model expects {nz} coordinates and {} inputs, got q:{} q̇:{} u:{}",
                self.n_u(),
                q.len(),
                qdot.len(),
                u.len()
            )));
        }
        let mut x = Vec::with_capacity(self.mlp.input_dim());
        x.extend_from_slice(q);
        x.extend_from_slice(qdot);
        x.extend_from_slice(u);
        Ok(x)
    }

    /// De-standardized acceleration at `(q, q̇, u)`.
    pub fn predict_accel(&self, q: &[f64], qdot: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let x = self.assemble(q, qdot, u)?;
        let y = self.mlp.forward(&self.input_stats.apply(&x))?;
        Ok(self.target_stats.invert(&y))
    }

    /// `∂q̈ / ∂(q, q̇, u)` in physical units, `n_z × (2 n_z + n_u)`.
    pub fn accel_jacobian(&self, q: &[f64], qdot: &[f64], u: &[f64]) -> Result<DMatrix<f64>> {
        let x = self.assemble(q, qdot, u)?;
        let mut j = self.mlp.input_jacobian(&self.input_stats.apply(&x))?;
        for (r, s) in self.target_stats.std.iter().enumerate() {
            j.row_mut(r).scale_mut(*s);
        }
        for (c, s) in self.input_stats.std.iter().enumerate() {
            j.column_mut(c).unscale_mut(*s);
        }
        Ok(j)
    }

    /// Mean squared error over a dataset in standardized units.
    pub fn dataset_loss(&self, data: &FnodeDataset) -> Result<f64> {
        let x = self.input_stats.apply_transposed(&data.inputs);
        let y = self.target_stats.apply_transposed(&data.targets);
        Ok(loss_and_grad(&self.mlp, &x, &y)?.0)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FnodeModel,
    /// Full-dataset standardized loss of the untrained network.
    pub initial_loss: f64,
    /// Mean standardized loss of every epoch, measured batch by batch
    /// before each update.
    pub loss_history: Vec<f64>,
}

/// Fits the acceleration map by Adam on the mean squared error.
pub fn train(data: &FnodeDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(data, config, |_, _| {})
}

/// As [`train`], calling `progress(epoch, loss)` after every epoch.
pub fn train_with_progress(
    data: &FnodeDataset,
    config: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let dims = config.layer_dims(data.input_width(), data.n_z());
    let mut mlp = init_mlp(&dims, config.activation, config.init, config.seed)?;
    let mut adam = AdamState::new(&mlp, config.lr, config.lr_decay)
        .with_decay_interval(config.decay_interval);
    let x = data.standardized_inputs();
    let y = data.standardized_targets();
    let n = data.len();
    let batch = config.batch_size.unwrap_or(n).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut history = Vec::with_capacity(config.epochs);
    let initial_loss = loss_and_grad(&mlp, &x, &y)?.0;

    for epoch in 0..config.epochs {
        let mut total = 0.0;
        if batch == n {
            let (loss, grad) = loss_and_grad(&mlp, &x, &y)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDivergence { epoch, loss });
            }
            adam_step(&mut mlp, &grad, &mut adam, epoch)?;
            total = loss * n as f64;
        } else {
            order.shuffle(&mut rng);
            for chunk in order.chunks(batch) {
                let xb = x.select_columns(chunk.iter());
                let yb = y.select_columns(chunk.iter());
                let (loss, grad) = loss_and_grad(&mlp, &xb, &yb)?;
                if !loss.is_finite() {
                    return Err(Error::TrainingDivergence { epoch, loss });
                }
                adam_step(&mut mlp, &grad, &mut adam, epoch)?;
                total += loss * chunk.len() as f64;
            }
        }
        let epoch_loss = total / n as f64;
        history.push(epoch_loss);
        progress(epoch, epoch_loss);
    }
    if mlp.params_flat().iter().any(|v| !v.is_finite()) {
        let loss = history.last().copied().unwrap_or(f64::NAN);
        return Err(Error::TrainingDivergence {
            epoch: config.epochs - 1,
            loss,
        });
    }
    let model = FnodeModel::new(mlp, data.input_stats.clone(), data.target_stats.clone())?;
    Ok(TrainOutcome {
        model,
        initial_loss,
        loss_history: history,
    })
}

/// Training on minimal coordinates: the same loop, restricted to datasets
/// without control inputs.
pub fn train_minimal(data: &FnodeDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    if data.n_u() != 0 {
        return Err(Error::invalid(
            "minimal-coordinate datasets hold (q, q̇) only, without inputs",
        ));
    }
    train(data, config)
}

/// Integrates the learned acceleration from `z0 = (q, q̇)`.
///
/// With `controls`, row `k` is held constant over step `k`; the returned
/// trajectory carries the inputs actually used.
pub fn rollout_learned(
    model: &FnodeModel,
    z0: &[f64],
    integ: &Integrator,
    n_steps: usize,
    controls: Option<&DMatrix<f64>>,
) -> Result<Trajectory> {
    rollout_with(
        |q: &[f64], qd: &[f64], u: &[f64]| model.predict_accel(q, qd, u),
        model.n_z(),
        model.n_u(),
        z0,
        integ,
        n_steps,
        controls,
    )
}

/// Shared rollout loop for any acceleration map `(q, q̇, u) → q̈`.
pub fn rollout_with<A>(
    accel: A,
    n_z: usize,
    n_u: usize,
    z0: &[f64],
    integ: &Integrator,
    n_steps: usize,
    controls: Option<&DMatrix<f64>>,
) -> Result<Trajectory>
where
    A: Fn(&[f64], &[f64], &[f64]) -> Result<Vec<f64>>,
{
    if z0.len() != 2 * n_z {
        return Err(Error::invalid(format!(
            "initial state has length {}, expected {}",
            z0.len(),
            2 * n_z
        )));
    }
    ensure_finite(z0, "initial state")?;
    let inputs = match (n_u, controls) {
        (0, None) => None,
        (0, Some(_)) => return Err(Error::invalid("model takes no control inputs")),
        (_, None) => return Err(Error::invalid(format!("model needs {n_u} control inputs per step"))),
        (_, Some(c)) => {
            if c.ncols() != n_u || c.nrows() < n_steps.max(1) {
                return Err(Error::invalid(format!(
                    "control sequence is {}x{}, need at least {}x{n_u}",
                    c.nrows(),
                    c.ncols(),
                    n_steps.max(1)
                )));
            }
            // One row per trajectory sample; the final sample repeats the
            // last applied input when no further row is given.
            Some(DMatrix::from_fn(n_steps + 1, n_u, |i, j| c[(i.min(c.nrows() - 1), j)]))
        }
    };
    let mut states = DMatrix::zeros(n_steps + 1, 2 * n_z);
    states.row_mut(0).copy_from_slice(z0);
    let mut z = z0.to_vec();
    let mut u = vec![0.0; n_u];
    for k in 0..n_steps {
        if let Some(inp) = &inputs {
            for (j, uj) in u.iter_mut().enumerate() {
                *uj = inp[(k, j)];
            }
        }
        let field = wrap_second_order(n_z, |q: &[f64], qd: &[f64]| accel(q, qd, &u));
        z = step_indexed(&field, &z, k as f64 * integ.dt, integ, k + 1)?;
        states.row_mut(k + 1).copy_from_slice(&z);
    }
    let traj = Trajectory::new(0.0, integ.dt, states)?;
    match inputs {
        Some(u) => traj.with_inputs(u),
        None => Ok(traj),
    }
}

fn check_same_shape(pred: &Trajectory, truth: &Trajectory) -> Result<()> {
    if pred.states.shape() != truth.states.shape() {
        return Err(Error::invalid(format!(
            "trajectory shapes differ: {:?} vs {:?}",
            pred.states.shape(),
            truth.states.shape()
        )));
    }
    Ok(())
}

/// Mean over all rows and state columns of the squared difference.
pub fn evaluate_mse(pred: &Trajectory, truth: &Trajectory) -> Result<f64> {
    check_same_shape(pred, truth)?;
    Ok((&pred.states - &truth.states).norm_squared() / pred.states.len() as f64)
}

/// MSE over the whole trajectory and over its training and test windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowedMse {
    pub total: f64,
    /// Rows `[0, train_steps)`.
    pub train_window: f64,
    /// Rows `[train_steps, N)`.
    pub test_window: f64,
}

pub fn evaluate_windows(pred: &Trajectory, truth: &Trajectory, train_steps: usize) -> Result<WindowedMse> {
    check_same_shape(pred, truth)?;
    let n = pred.len();
    if train_steps == 0 || train_steps >= n {
        return Err(Error::invalid(format!(
            "train window of {train_steps} rows must leave both windows non-empty in {n} rows"
        )));
    }
    let window = |r: std::ops::Range<usize>| {
        let rows = r.len();
        let d = pred.states.rows(r.start, rows) - truth.states.rows(r.start, rows);
        d.norm_squared() / (rows * pred.states.ncols()) as f64
    };
    Ok(WindowedMse {
        total: evaluate_mse(pred, truth)?,
        train_window: window(0..train_steps),
        test_window: window(train_steps..n),
    })
}

/// Step-by-step global error `E_n = ẑ_n − z_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorGrowthReport {
    /// `N × 2 n_z`.
    pub errors: DMatrix<f64>,
    pub max_norm: Vec<f64>,
    pub l2_norm: Vec<f64>,
}

impl ErrorGrowthReport {
    /// Mean ratio `‖E_{n+1}‖ / ‖E_n‖` over steps where `‖E_n‖` exceeds
    /// `floor`; `None` if there are none.
    pub fn mean_amplification(&self, floor: f64) -> Option<f64> {
        let ratios: Vec<f64> = self
            .l2_norm
            .windows(2)
            .filter(|w| w[0] > floor)
            .map(|w| w[1] / w[0])
            .collect();
        (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64)
    }
}

pub fn error_growth(pred: &Trajectory, truth: &Trajectory) -> Result<ErrorGrowthReport> {
    check_same_shape(pred, truth)?;
    let errors = &pred.states - &truth.states;
    let max_norm = errors.row_iter().map(|r| r.amax()).collect();
    let l2_norm = errors.row_iter().map(|r| r.norm()).collect();
    Ok(ErrorGrowthReport {
        errors,
        max_norm,
        l2_norm,
    })
}
