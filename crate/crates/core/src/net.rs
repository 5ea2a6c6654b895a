//! Fully connected network with hand-derived backpropagation and Adam.
//!
//! Batches are column-major: a batch of `B` inputs is a `dims[0] × B`
//! matrix, one sample per column.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `a = σ(z)`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// `U(-a, a)` with `a = √(6 / (fan_in + fan_out))`.
    Xavier,
    /// `N(0, 2 / fan_in)`.
    Kaiming,
}

impl Init {
    pub fn name(self) -> &'static str {
        match self {
            Init::Xavier => "xavier",
            Init::Kaiming => "kaiming",
        }
    }
}

impl fmt::Display for Init {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xavier" => Ok(Init::Xavier),
            "kaiming" => Ok(Init::Kaiming),
            other => Err(Error::invalid(format!("unknown initialization `{other}`"))),
        }
    }
}

/// One affine map `W x + b`, `W` being `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Self {
        Self {
            weights: DMatrix::zeros(self.weights.nrows(), self.weights.ncols()),
            bias: DVector::zeros(self.bias.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    layers: Vec<Layer>,
    activation: Activation,
    init: Init,
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::invalid("an MLP needs at least input and output dims"));
    }
    if dims.contains(&0) {
        return Err(Error::invalid(format!("layer sizes must be positive: {dims:?}")));
    }
    Ok(())
}

/// Random initialization; biases start at zero. Deterministic per seed.
pub fn init_mlp(dims: &[usize], activation: Activation, init: Init, seed: u64) -> Result<Mlp> {
    check_dims(dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = match init {
                Init::Xavier => {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-a..a))
                }
                Init::Kaiming => {
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                        .expect("positive standard deviation");
                    DMatrix::from_fn(fan_out, fan_in, |_, _| normal.sample(&mut rng))
                }
            };
            Layer {
                weights,
                bias: DVector::zeros(fan_out),
            }
        })
        .collect();
    Ok(Mlp {
        dims: dims.to_vec(),
        layers,
        activation,
        init,
    })
}

impl Mlp {
    /// Builds a network from explicit layers (used by checkpoints and tests).
    pub fn from_layers(layers: Vec<Layer>, activation: Activation, init: Init) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("an MLP needs at least one layer"));
        }
        let mut dims = vec![layers[0].weights.ncols()];
        for (i, l) in layers.iter().enumerate() {
            if l.weights.ncols() != *dims.last().unwrap() || l.bias.len() != l.weights.nrows() {
                return Err(Error::invalid(format!("layer {i} has incompatible shape")));
            }
            if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("layer {i} has non-finite parameters")));
            }
            dims.push(l.weights.nrows());
        }
        check_dims(&dims)?;
        Ok(Self {
            dims,
            layers,
            activation,
            init,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn init(&self) -> Init {
        self.init
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameters, layer by layer, weights (column-major) then bias.
    pub fn params_flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::invalid("flat parameter vector has the wrong length"));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.as_mut_slice().copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Forward pass on a batch; returns every layer's output (hidden layers
    /// after activation, last layer affine).
    fn forward_trace(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let last = self.layers.len() - 1;
        let mut outs: Vec<DMatrix<f64>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { &outs[i - 1] };
            let mut z = &layer.weights * input;
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            if i != last {
                let act = self.activation;
                z.apply(|v| *v = act.apply(*v));
            }
            outs.push(z);
        }
        outs
    }

    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.input_dim() {
            return Err(Error::invalid(format!(
                "batch has {} features, network expects {}",
                x.nrows(),
                self.input_dim()
            )));
        }
        Ok(self.forward_trace(x).pop().unwrap())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = DMatrix::from_column_slice(input.len(), 1, input);
        Ok(self.forward_batch(&x)?.as_slice().to_vec())
    }

    /// Jacobian of the output with respect to the input, `out × in`.
    pub fn input_jacobian(&self, input: &[f64]) -> Result<DMatrix<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "input has {} features, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let x = DMatrix::from_column_slice(input.len(), 1, input);
        let outs = self.forward_trace(&x);
        // Reverse accumulation with one seed per output.
        let mut delta = DMatrix::<f64>::identity(self.output_dim(), self.output_dim());
        for i in (0..self.layers.len()).rev() {
            // delta: out_dim × (units of layer i)
            let mut back = &delta * &self.layers[i].weights;
            if i > 0 {
                let a = &outs[i - 1];
                for (j, mut col) in back.column_iter_mut().enumerate() {
                    col *= self.activation.derivative_from_output(a[j]);
                }
            }
            delta = back;
        }
        Ok(delta)
    }
}

fn flatten(layers: &[Layer]) -> Vec<f64> {
    let mut v = Vec::new();
    for l in layers {
        v.extend_from_slice(l.weights.as_slice());
        v.extend_from_slice(l.bias.as_slice());
    }
    v
}

/// Gradient of the loss with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }
}

/// Mean squared error `(1/B) Σ_b ‖f(x_b) − y_b‖²` and its gradient.
pub fn loss_and_grad(mlp: &Mlp, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<(f64, Gradients)> {
    let batch = x.ncols();
    if batch == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if y.ncols() != batch || y.nrows() != mlp.output_dim() || x.nrows() != mlp.input_dim() {
        return Err(Error::invalid(format!(
            "batch shapes {}x{} -> {}x{} do not fit network {:?}",
            x.nrows(),
            x.ncols(),
            y.nrows(),
            y.ncols(),
            mlp.dims
        )));
    }
    let outs = mlp.forward_trace(x);
    let residual = outs.last().unwrap() - y;
    let scale = 1.0 / batch as f64;
    let loss = residual.norm_squared() * scale;

    let mut grads: Vec<Layer> = mlp.layers.iter().map(Layer::zeros_like).collect();
    let mut delta = residual * (2.0 * scale);
    for i in (0..mlp.layers.len()).rev() {
        let input = if i == 0 { x } else { &outs[i - 1] };
        grads[i].weights = &delta * input.transpose();
        grads[i].bias = delta.column_sum();
        if i > 0 {
            let mut back = mlp.layers[i].weights.transpose() * &delta;
            let act = mlp.activation;
            back.zip_apply(input, |b, a| *b *= act.derivative_from_output(a));
            delta = back;
        }
    }
    Ok((loss, Gradients { layers: grads }))
}

/// Adam moments plus the exponential learning-rate schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Layer>,
    v: Vec<Layer>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub base_lr: f64,
    /// Multiplicative decay applied every `decay_interval` epochs.
    pub decay: f64,
    pub decay_interval: usize,
}

impl AdamState {
    pub fn new(mlp: &Mlp, base_lr: f64, decay: f64) -> Self {
        let zeros: Vec<Layer> = mlp.layers.iter().map(Layer::zeros_like).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            base_lr,
            decay,
            decay_interval: 1,
        }
    }

    pub fn with_decay_interval(mut self, interval: usize) -> Self {
        self.decay_interval = interval.max(1);
        self
    }
}

/// `base · decay^(epoch / interval)` with integer division.
pub fn decay_lr(state: &AdamState, epoch: usize) -> f64 {
    let k = (epoch / state.decay_interval.max(1)) as i32;
    state.base_lr * state.decay.powi(k)
}

/// One bias-corrected Adam update at the learning rate of `epoch`.
pub fn adam_step(mlp: &mut Mlp, grad: &Gradients, state: &mut AdamState, epoch: usize) -> Result<()> {
    if grad.layers.len() != mlp.layers.len()
        || grad
            .layers
            .iter()
            .zip(&mlp.layers)
            .any(|(g, l)| g.weights.shape() != l.weights.shape() || g.bias.len() != l.bias.len())
    {
        return Err(Error::invalid("gradient does not match the network's parameters"));
    }
    let lr = decay_lr(state, epoch);
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] -= lr * mh / (vh.sqrt() + eps);
        }
    };
    for (i, layer) in mlp.layers.iter_mut().enumerate() {
        update(
            layer.weights.as_mut_slice(),
            grad.layers[i].weights.as_slice(),
            state.m[i].weights.as_mut_slice(),
            state.v[i].weights.as_mut_slice(),
        );
        update(
            layer.bias.as_mut_slice(),
            grad.layers[i].bias.as_slice(),
            state.m[i].bias.as_mut_slice(),
            state.v[i].bias.as_mut_slice(),
        );
    }
    Ok(())
}

/// Largest relative deviation between the backprop gradient and central
/// differences of the loss with step `h`.
///
/// The denominator is `max(|g_bp|, |g_fd|)` floored at `1e-6` times the
/// largest gradient entry, so entries that are zero up to rounding do not
/// dominate.
pub fn gradient_check(mlp: &Mlp, x: &DMatrix<f64>, y: &DMatrix<f64>, h: f64) -> Result<f64> {
    let (_, g) = loss_and_grad(mlp, x, y)?;
    let analytic = g.flat();
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut probe = mlp.clone();
    let base = mlp.params_flat();
    let mut worst = 0.0f64;
    let mut params = base.clone();
    for i in 0..base.len() {
        params[i] = base[i] + h;
        probe.set_params_flat(&params)?;
        let lp = loss_and_grad(&probe, x, y)?.0;
        params[i] = base[i] - h;
        probe.set_params_flat(&params)?;
        let lm = loss_and_grad(&probe, x, y)?.0;
        params[i] = base[i];
        let fd = (lp - lm) / (2.0 * h);
        let denom = analytic[i].abs().max(fd.abs()).max(1e-6 * scale);
        if denom > 0.0 {
            worst = worst.max((analytic[i] - fd).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random_batch(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let a = init_mlp(&[3, 8, 2], Activation::Tanh, Init::Xavier, 7).unwrap();
        let b = init_mlp(&[3, 8, 2], Activation::Tanh, Init::Xavier, 7).unwrap();
        let c = init_mlp(&[3, 8, 2], Activation::Tanh, Init::Xavier, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.layers().iter().all(|l| l.bias.iter().all(|&v| v == 0.0)));
        assert!(init_mlp(&[], Activation::Tanh, Init::Xavier, 0).is_err());
        assert!(init_mlp(&[3], Activation::Tanh, Init::Xavier, 0).is_err());
        assert!(init_mlp(&[3, 0, 1], Activation::Tanh, Init::Xavier, 0).is_err());
    }

    #[test]
    fn xavier_variance() {
        let net = init_mlp(&[64, 64, 1], Activation::Tanh, Init::Xavier, 3).unwrap();
        let w = &net.layers()[0].weights;
        let mean = w.mean();
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let expected = 6.0 / 128.0 / 3.0;
        assert!((var - expected).abs() < 0.2 * expected, "{var} vs {expected}");
    }

    #[test]
    fn kaiming_variance() {
        let net = init_mlp(&[100, 100, 1], Activation::Relu, Init::Kaiming, 3).unwrap();
        let w = &net.layers()[0].weights;
        let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        assert!((var - 0.02).abs() < 0.2 * 0.02, "{var}");
    }

    #[test]
    fn forward_examples() {
        let mut net = init_mlp(&[3, 5, 2], Activation::Tanh, Init::Xavier, 1).unwrap();
        net.set_params_flat(&vec![0.0; net.num_params()]).unwrap();
        assert_eq!(net.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0]);

        let id = Mlp::from_layers(
            vec![Layer {
                weights: DMatrix::identity(3, 3),
                bias: DVector::zeros(3),
            }],
            Activation::Tanh,
            Init::Xavier,
        )
        .unwrap();
        assert_eq!(id.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![1.0, -2.0, 0.5]);

        // 1-2-1: hidden = tanh(0.5x + 0.1, -x), out = 2 h1 - h2 + 0.3
        let tiny = Mlp::from_layers(
            vec![
                Layer {
                    weights: DMatrix::from_row_slice(2, 1, &[0.5, -1.0]),
                    bias: DVector::from_vec(vec![0.1, 0.0]),
                },
                Layer {
                    weights: DMatrix::from_row_slice(1, 2, &[2.0, -1.0]),
                    bias: DVector::from_vec(vec![0.3]),
                },
            ],
            Activation::Tanh,
            Init::Xavier,
        )
        .unwrap();
        let x: f64 = 0.8;
        let expected = 2.0 * (0.5 * x + 0.1).tanh() - (-x).tanh() + 0.3;
        assert_abs_diff_eq!(tiny.forward(&[x]).unwrap()[0], expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 2.0 * 0.5f64.tanh() + 0.8f64.tanh() + 0.3, epsilon = 1e-15);
        assert!(tiny.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn loss_zero_at_perfect_fit() {
        let net = init_mlp(&[2, 6, 2], Activation::Tanh, Init::Xavier, 4).unwrap();
        let x = random_batch(2, 10, 1);
        let y = net.forward_batch(&x).unwrap();
        let (loss, g) = loss_and_grad(&net, &x, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn loss_is_permutation_invariant() {
        let net = init_mlp(&[2, 6, 1], Activation::Tanh, Init::Xavier, 4).unwrap();
        let x = random_batch(2, 9, 1);
        let y = random_batch(1, 9, 2);
        let perm = [3, 0, 8, 1, 7, 2, 6, 4, 5];
        let xp = x.select_columns(perm.iter());
        let yp = y.select_columns(perm.iter());
        let (a, _) = loss_and_grad(&net, &x, &y).unwrap();
        let (b, _) = loss_and_grad(&net, &xp, &yp).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-14);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for act in [Activation::Tanh, Activation::Relu] {
            for dims in [vec![2, 16, 2], vec![2, 16, 16, 1], vec![3, 8, 8, 8, 2]] {
                let net = init_mlp(&dims, act, Init::Xavier, 11).unwrap();
                let x = random_batch(dims[0], 12, 5);
                let y = random_batch(*dims.last().unwrap(), 12, 6);
                let err = gradient_check(&net, &x, &y, 1e-5).unwrap();
                assert!(err < 1e-5, "{act} {dims:?}: {err}");
            }
        }
    }

    #[test]
    fn input_jacobian_matches_finite_differences() {
        let net = init_mlp(&[5, 16, 16, 2], Activation::Tanh, Init::Xavier, 2).unwrap();
        let x = [0.3, -0.2, 0.5, 0.1, -0.7];
        let jac = net.input_jacobian(&x).unwrap();
        let h = 1e-5;
        for j in 0..5 {
            let mut a = x;
            let mut b = x;
            a[j] += h;
            b[j] -= h;
            let fa = net.forward(&a).unwrap();
            let fb = net.forward(&b).unwrap();
            for i in 0..2 {
                let fd = (fa[i] - fb[i]) / (2.0 * h);
                assert!((jac[(i, j)] - fd).abs() <= 1e-4 * fd.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut net = init_mlp(&[2, 4, 1], Activation::Tanh, Init::Xavier, 1).unwrap();
        let before = net.clone();
        let mut st = AdamState::new(&net, 1e-3, 0.98);
        let zero = Gradients {
            layers: net.layers().iter().map(Layer::zeros_like).collect(),
        };
        adam_step(&mut net, &zero, &mut st, 0).unwrap();
        assert_eq!(net, before);
    }

    fn scalar_net(theta: f64) -> Mlp {
        Mlp::from_layers(
            vec![Layer {
                weights: DMatrix::from_element(1, 1, theta),
                bias: DVector::zeros(1),
            }],
            Activation::Tanh,
            Init::Xavier,
        )
        .unwrap()
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut net = scalar_net(0.5);
        let mut st = AdamState::new(&net, 1e-3, 0.98);
        let g = Gradients {
            layers: vec![Layer {
                weights: DMatrix::from_element(1, 1, 1.0),
                bias: DVector::zeros(1),
            }],
        };
        adam_step(&mut net, &g, &mut st, 0).unwrap();
        let delta = net.layers()[0].weights[(0, 0)] - 0.5;
        assert_abs_diff_eq!(delta, -1e-3 / (1.0 + 1e-8), epsilon = 1e-15);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut net = scalar_net(1.0);
        let mut st = AdamState::new(&net, 0.05, 1.0);
        for _ in 0..200 {
            let theta = net.layers()[0].weights[(0, 0)];
            let g = Gradients {
                layers: vec![Layer {
                    weights: DMatrix::from_element(1, 1, 2.0 * theta),
                    bias: DVector::zeros(1),
                }],
            };
            adam_step(&mut net, &g, &mut st, 0).unwrap();
        }
        assert!(net.layers()[0].weights[(0, 0)].abs() < 1e-2);
    }

    #[test]
    fn learning_rate_schedule() {
        let net = scalar_net(0.0);
        let st = AdamState::new(&net, 1e-3, 0.98);
        assert_eq!(decay_lr(&st, 0), 1e-3);
        assert_abs_diff_eq!(decay_lr(&st, 1), 9.8e-4, epsilon = 1e-18);
        assert_abs_diff_eq!(decay_lr(&st, 100) / 1e-3, 0.98f64.powi(100), epsilon = 1e-15);
        assert_abs_diff_eq!(0.98f64.powi(100), 0.1326, epsilon = 1e-4);
        let st = st.with_decay_interval(10);
        assert_eq!(decay_lr(&st, 9), 1e-3);
        assert_abs_diff_eq!(decay_lr(&st, 10), 9.8e-4, epsilon = 1e-18);
    }
}
