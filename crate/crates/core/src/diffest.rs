//! Acceleration targets from sampled trajectories.
//!
//! The spectral path removes a least-squares trend, extends the signal by
//! tapered mirror reflections, applies a Tukey window, differentiates in
//! the frequency domain under a Gaussian low-pass filter and crops back to
//! the original samples. Finite differences take over near both ends,
//! where the spectral estimate is least reliable.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{ensure_finite, Error, Result};
use crate::integrate::Trajectory;

/// Smallest series accepted by [`spectral_derivative`].
pub const MIN_SPECTRAL_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffMethod {
    SpectralHybrid,
    FiniteDifference,
}

impl DiffMethod {
    pub fn name(self) -> &'static str {
        match self {
            DiffMethod::SpectralHybrid => "hybrid",
            DiffMethod::FiniteDifference => "fd",
        }
    }
}

impl FromStr for DiffMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hybrid" | "spectral" | "spectral_hybrid" => Ok(DiffMethod::SpectralHybrid),
            "fd" | "finite_difference" => Ok(DiffMethod::FiniteDifference),
            other => Err(Error::invalid(format!("unknown differentiation method `{other}`"))),
        }
    }
}

/// Differentiation settings. `None` fields resolve to length-dependent
/// defaults: `sigma = Ne/20` for a transform of length `Ne`,
/// `mirror_len = N/4` and `boundary_margin = max(5, N/50)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffConfig {
    pub method: DiffMethod,
    pub alpha: f64,
    pub sigma: Option<f64>,
    pub mirror_len: Option<usize>,
    pub boundary_margin: Option<usize>,
}

impl Default for DiffConfig {
    fn default() -> Self {
        Self {
            method: DiffMethod::SpectralHybrid,
            alpha: 0.2,
            sigma: None,
            mirror_len: None,
            boundary_margin: None,
        }
    }
}

impl DiffConfig {
    pub fn finite_difference() -> Self {
        Self {
            method: DiffMethod::FiniteDifference,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!("alpha must be in (0, 1], got {}", self.alpha)));
        }
        if let Some(s) = self.sigma {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::invalid(format!("sigma must be positive, got {s}")));
            }
        }
        if self.mirror_len == Some(0) {
            return Err(Error::invalid("mirror_len must be at least 1"));
        }
        Ok(())
    }

    fn margin_for(&self, n: usize) -> usize {
        self.boundary_margin.unwrap_or_else(|| (n / 50).max(5))
    }
}

/// Least-squares line `a + b t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendFit {
    pub intercept: f64,
    pub slope: f64,
}

impl TrendFit {
    pub fn at(&self, t: f64) -> f64 {
        self.intercept + self.slope * t
    }
}

/// Subtracts the least-squares line through `(i dt, series[i])`.
pub fn detrend(series: &[f64], dt: f64) -> Result<(Vec<f64>, TrendFit)> {
    if series.len() < 2 {
        return Err(Error::invalid("detrending needs at least two samples"));
    }
    ensure_finite(series, "series")?;
    let n = series.len() as f64;
    let t_mean = dt * (n - 1.0) / 2.0;
    let z_mean = series.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, z) in series.iter().enumerate() {
        let dt_i = i as f64 * dt - t_mean;
        sxy += dt_i * (z - z_mean);
        sxx += dt_i * dt_i;
    }
    let slope = sxy / sxx;
    let fit = TrendFit {
        intercept: z_mean - slope * t_mean,
        slope,
    };
    let residual = series
        .iter()
        .enumerate()
        .map(|(i, z)| z - fit.at(i as f64 * dt))
        .collect();
    Ok((residual, fit))
}

/// Cosine ramp `½(1 - cos(π j / M))` for `j = 0..=M`.
pub fn cosine_taper(m: usize) -> Vec<f64> {
    (0..=m)
        .map(|j| 0.5 * (1.0 - (PI * j as f64 / m as f64).cos()))
        .collect()
}

/// Extends `series` by `mirror_len` tapered reflections on each side.
///
/// The reflections are about the first and last samples; the taper is 1 at
/// the junctions and falls to 0 at the outer ends.
pub fn mirror_extend(series: &[f64], mirror_len: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if mirror_len == 0 || n < 2 || mirror_len > n - 1 {
        return Err(Error::invalid(format!(
            "mirror length {mirror_len} must be in 1..={} for {n} samples",
            n.saturating_sub(1)
        )));
    }
    let m = mirror_len;
    let tau = cosine_taper(m);
    let mut out = Vec::with_capacity(n + 2 * m);
    for i in 0..m {
        out.push(tau[i] * series[m - i]);
    }
    out.extend_from_slice(series);
    for j in 1..=m {
        out.push(tau[m - j] * series[n - 1 - j]);
    }
    Ok(out)
}

/// Tukey (tapered-cosine) window over `n` samples, `t = 0..n-1`, `L = n-1`.
pub fn tukey_window(n: usize, alpha: f64) -> Vec<f64> {
    let len = (n.max(1) - 1) as f64;
    let edge = alpha * len / 2.0;
    (0..n)
        .map(|i| {
            let t = i as f64;
            if edge <= 0.0 {
                1.0
            } else if t < edge {
                0.5 * (1.0 + (PI * (edge - t) / edge).cos())
            } else if t <= len - edge {
                1.0
            } else {
                0.5 * (1.0 + (PI * (t - (len - edge)) / edge).cos())
            }
        })
        .collect()
}

/// Signed frequency index of FFT bin `k` out of `n`.
pub fn signed_bin(k: usize, n: usize) -> f64 {
    if k < n.div_ceil(2) {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Gaussian low-pass gains `exp(-½ (k/σ)²)` per FFT bin.
pub fn gaussian_gain(n: usize, sigma: f64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let ks = signed_bin(k, n);
            (-0.5 * (ks / sigma).powi(2)).exp()
        })
        .collect()
}

/// Forward DFT (unnormalized).
pub fn dft(series: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = series.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    if !buf.is_empty() {
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    }
    buf
}

/// Inverse DFT including the `1/N` factor; returns the real part.
pub fn idft(spectrum: &[Complex64]) -> Vec<f64> {
    let mut buf = spectrum.to_vec();
    let n = buf.len();
    if n == 0 {
        return Vec::new();
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Per-length precomputed pieces of the spectral differentiator.
#[derive(Debug, Clone)]
pub struct SpectralPlan {
    pub n: usize,
    pub dt: f64,
    pub window: Vec<f64>,
    pub filter: Vec<f64>,
    pub angular_freqs: Vec<f64>,
}

impl SpectralPlan {
    pub fn new(n: usize, dt: f64, alpha: f64, sigma: f64) -> Self {
        let angular_freqs = (0..n)
            .map(|k| {
                // The Nyquist bin of an even-length transform has no
                // well-defined sign; drop it to keep the derivative real.
                if n.is_multiple_of(2) && k == n / 2 {
                    0.0
                } else {
                    2.0 * PI * signed_bin(k, n) / (n as f64 * dt)
                }
            })
            .collect();
        Self {
            n,
            dt,
            window: tukey_window(n, alpha),
            filter: gaussian_gain(n, sigma),
            angular_freqs,
        }
    }

    /// Windows, transforms, applies `jω G` and transforms back.
    pub fn differentiate(&self, signal: &[f64]) -> Vec<f64> {
        debug_assert_eq!(signal.len(), self.n);
        let windowed: Vec<f64> = signal.iter().zip(&self.window).map(|(z, w)| z * w).collect();
        let mut spec = dft(&windowed);
        for (k, c) in spec.iter_mut().enumerate() {
            *c *= Complex64::new(0.0, self.angular_freqs[k] * self.filter[k]);
        }
        idft(&spec)
    }
}

/// Full spectral pipeline; output has the same length as `series`.
pub fn spectral_derivative(series: &[f64], dt: f64, config: &DiffConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let n = series.len();
    if n < MIN_SPECTRAL_LEN {
        return Err(Error::invalid(format!(
            "spectral differentiation needs at least {MIN_SPECTRAL_LEN} samples, got {n}"
        )));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    let (residual, trend) = detrend(series, dt)?;
    let m = config.mirror_len.unwrap_or(n / 4);
    let extended = mirror_extend(&residual, m)?;
    let ne = extended.len();
    let sigma = config.sigma.unwrap_or(ne as f64 / 20.0);
    let plan = SpectralPlan::new(ne, dt, config.alpha, sigma);
    let deriv = plan.differentiate(&extended);
    Ok(deriv[m..m + n].iter().map(|d| d + trend.slope).collect())
}

/// Plain `DFT → jω → IDFT` with no trend removal, extension, window or
/// filter. Kept as the reference for measuring Gibbs mitigation.
pub fn naive_spectral_derivative(series: &[f64], dt: f64) -> Vec<f64> {
    let n = series.len();
    let mut spec = dft(series);
    for (k, c) in spec.iter_mut().enumerate() {
        let w = if n.is_multiple_of(2) && k == n / 2 {
            0.0
        } else {
            2.0 * PI * signed_bin(k, n) / (n as f64 * dt)
        };
        *c *= Complex64::new(0.0, w);
    }
    idft(&spec)
}

/// Finite-difference stencil family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FdOrder {
    /// Forward differences, backward at the last sample.
    First,
    /// Central differences inside, one-sided first order at both ends.
    #[default]
    Second,
}

pub fn fd_derivative(series: &[f64], dt: f64, order: FdOrder) -> Result<Vec<f64>> {
    let n = series.len();
    if n < 3 {
        return Err(Error::invalid(format!(
            "finite differences need at least 3 samples, got {n}"
        )));
    }
    let mut d = vec![0.0; n];
    match order {
        FdOrder::First => {
            for i in 0..n - 1 {
                d[i] = (series[i + 1] - series[i]) / dt;
            }
        }
        FdOrder::Second => {
            d[0] = (series[1] - series[0]) / dt;
            for i in 1..n - 1 {
                d[i] = (series[i + 1] - series[i - 1]) / (2.0 * dt);
            }
        }
    }
    d[n - 1] = (series[n - 1] - series[n - 2]) / dt;
    Ok(d)
}

/// Derivative of one sampled series under `config`.
pub fn differentiate(series: &[f64], dt: f64, config: &DiffConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let fd = fd_derivative(series, dt, FdOrder::Second)?;
    match config.method {
        DiffMethod::FiniteDifference => Ok(fd),
        DiffMethod::SpectralHybrid => {
            let n = series.len();
            let spectral = spectral_derivative(series, dt, config)?;
            let margin = config.margin_for(n);
            Ok((0..n)
                .map(|i| {
                    let dist = i.min(n - 1 - i);
                    let w = if margin == 0 {
                        1.0
                    } else {
                        (dist as f64 / margin as f64).min(1.0)
                    };
                    w * spectral[i] + (1.0 - w) * fd[i]
                })
                .collect())
        }
    }
}

/// Differentiates every velocity column once; returns `N × n_z`.
pub fn accel_targets(traj: &Trajectory, config: &DiffConfig) -> Result<DMatrix<f64>> {
    let n = traj.len();
    let nz = traj.n_z();
    let mut out = DMatrix::zeros(n, nz);
    for j in 0..nz {
        let d = differentiate(&traj.velocity_column(j), traj.dt, config)?;
        out.set_column(j, &nalgebra::DVector::from_vec(d));
    }
    Ok(out)
}

/// Index range of the central 60 % of `n` samples.
pub fn interior(n: usize) -> std::ops::Range<usize> {
    (n / 5)..(n - n / 5)
}

/// Interior error of the naive spectral derivative divided by that of the
/// full pipeline, for the ramp `z(t) = t` on `[0, 1)` sampled at `n`
/// points. The ramp's jump under periodization is the worst case for
/// Fourier differentiation.
pub fn gibbs_mitigation_ratio(n: usize) -> Result<f64> {
    let dt = 1.0 / n as f64;
    let ramp: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
    let range = interior(n);
    let naive = naive_spectral_derivative(&ramp, dt);
    let piped = spectral_derivative(&ramp, dt, &DiffConfig::default())?;
    let err = |d: &[f64]| range.clone().map(|i| (d[i] - 1.0).abs()).fold(0.0, f64::max);
    Ok(err(&naive) / err(&piped).max(f64::EPSILON))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn detrend_examples() {
        let dt = 0.1;
        let z: Vec<f64> = (0..20).map(|i| 2.0 + 3.0 * i as f64 * dt).collect();
        let (r, fit) = detrend(&z, dt).unwrap();
        assert_abs_diff_eq!(fit.intercept, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.slope, 3.0, epsilon = 1e-12);
        assert!(r.iter().all(|v| v.abs() < 1e-12));

        let (_, fit) = detrend(&[4.5; 10], dt).unwrap();
        assert_abs_diff_eq!(fit.intercept, 4.5, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.slope, 0.0, epsilon = 1e-12);

        assert!(detrend(&[1.0], dt).is_err());
    }

    #[test]
    fn detrend_of_full_periods_of_sine_has_no_slope() {
        // Whole periods of a signal that is even about the window midpoint
        // are orthogonal to (t - t̄), so the fitted slope vanishes.
        let n = 401;
        let dt = 0.01;
        let l = (n - 1) as f64 * dt;
        let z: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * 2.0 * (i as f64 * dt - l / 2.0) / l).cos())
            .collect();
        let (_, fit) = detrend(&z, dt).unwrap();
        assert!(fit.slope.abs() < 1e-10, "{}", fit.slope);
    }

    #[test]
    fn detrend_gradient_vanishes() {
        let dt = 0.05;
        let z: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin() + 0.1 * i as f64).collect();
        let (_, fit) = detrend(&z, dt).unwrap();
        let (mut ga, mut gb) = (0.0, 0.0);
        for (i, zi) in z.iter().enumerate() {
            let t = i as f64 * dt;
            let r = zi - fit.at(t);
            ga += -2.0 * r;
            gb += -2.0 * r * t;
        }
        assert!(ga.abs() < 1e-9 && gb.abs() < 1e-9);
    }

    #[test]
    fn taper_endpoints() {
        let tau = cosine_taper(16);
        assert_eq!(tau[0], 0.0);
        assert_abs_diff_eq!(tau[16], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn mirror_keeps_centre_and_length() {
        let z: Vec<f64> = (0..40).map(|i| (i as f64 * 0.2).sin()).collect();
        let e = mirror_extend(&z, 10).unwrap();
        assert_eq!(e.len(), 60);
        assert_eq!(&e[10..50], &z[..]);
        assert_eq!(e[0], 0.0);
        assert_eq!(e[59], 0.0);
        assert!(mirror_extend(&z, 40).is_err());
        assert!(mirror_extend(&z, 0).is_err());
    }

    #[test]
    fn mirror_of_even_signal_has_no_kink() {
        // cos(πt) on [0, 1] has zero slope at both ends, so its reflection
        // joins smoothly; only the taper's slight departure from 1 next to
        // the junction shows up in the second difference.
        let n = 201;
        let dt = 1.0 / (n - 1) as f64;
        let z: Vec<f64> = (0..n).map(|i| (PI * i as f64 * dt).cos()).collect();
        let m = 50;
        let e = mirror_extend(&z, m).unwrap();
        let tau = cosine_taper(m);
        for j in [m, m + n - 1] {
            let second = e[j + 1] - 2.0 * e[j] + e[j - 1];
            let bound = (PI * dt).powi(2) + (1.0 - tau[m - 1]) + 1e-12;
            assert!(second.abs() <= bound, "junction {j}: {second} > {bound}");
        }
    }

    #[test]
    fn tukey_examples() {
        let w = tukey_window(101, 0.2);
        assert_eq!(w[0], 0.0);
        assert_abs_diff_eq!(w[50], 1.0);
        assert_abs_diff_eq!(w[100], 0.0, epsilon = 1e-15);
        assert!(w.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(DiffConfig::default().alpha, 0.2);
    }

    #[test]
    fn gaussian_examples() {
        let g = gaussian_gain(200, 10.0);
        assert_eq!(g[0], 1.0);
        assert_abs_diff_eq!(g[10], (-0.5f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(g[10], 0.60653, epsilon = 1e-5);
        for k in 1..200 {
            assert_eq!(g[k], g[200 - k]);
        }
    }

    #[test]
    fn dft_of_constant() {
        let x = vec![2.5; 32];
        let s = dft(&x);
        assert_abs_diff_eq!(s[0].re, 80.0, epsilon = 1e-12);
        assert!(s[1..].iter().all(|c| c.norm() < 1e-12));
    }

    /// Direct O(N²) transform.
    fn dft_direct(x: &[f64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, v)| {
                        let a = -2.0 * PI * (k * j) as f64 / n as f64;
                        Complex64::new(v * a.cos(), v * a.sin())
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn fft_matches_direct_dft() {
        let x: Vec<f64> = (0..45).map(|i| ((i * i) as f64 * 0.13).sin()).collect();
        let a = dft(&x);
        let b = dft_direct(&x);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).norm() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn dft_round_trip_and_parseval(x in prop::collection::vec(-10.0f64..10.0, 1..300)) {
            let spec = dft(&x);
            let back = idft(&spec);
            let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for (a, b) in x.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-10 * scale);
            }
            let e_time: f64 = x.iter().map(|v| v * v).sum();
            let e_freq: f64 = spec.iter().map(|c| c.norm_sqr()).sum::<f64>() / x.len() as f64;
            prop_assert!((e_time - e_freq).abs() <= 1e-9 * e_time.max(1e-300));
        }

        #[test]
        fn spectral_derivative_is_linear(
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            f1 in 0.5f64..4.0,
            f2 in 0.5f64..4.0,
        ) {
            let n = 64;
            let dt = 0.02;
            let x: Vec<f64> = (0..n).map(|i| (f1 * i as f64 * dt).sin() + 0.3 * i as f64 * dt).collect();
            let y: Vec<f64> = (0..n).map(|i| (f2 * i as f64 * dt).cos() * (i as f64 * dt)).collect();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
            let c = DiffConfig::default();
            let dx = spectral_derivative(&x, dt, &c).unwrap();
            let dy = spectral_derivative(&y, dt, &c).unwrap();
            let dm = spectral_derivative(&mix, dt, &c).unwrap();
            for i in 0..n {
                prop_assert!((dm[i] - (a * dx[i] + b * dy[i])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn spectral_constant_and_linear() {
        let dt = 0.01;
        let c = vec![3.0; 128];
        let d = spectral_derivative(&c, dt, &DiffConfig::default()).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-8));

        let lin: Vec<f64> = (0..128).map(|i| -1.0 + 2.5 * i as f64 * dt).collect();
        let d = spectral_derivative(&lin, dt, &DiffConfig::default()).unwrap();
        for i in interior(128) {
            assert!((d[i] - 2.5).abs() < 1e-6);
        }
        assert!(spectral_derivative(&lin[..15], dt, &DiffConfig::default()).is_err());
    }

    #[test]
    fn spectral_sine_interior_accuracy() {
        let n = 512;
        let dt = 1.0 / n as f64;
        let l = n as f64 * dt;
        let w = 2.0 * PI / l;
        let z: Vec<f64> = (0..n).map(|i| (w * i as f64 * dt).sin()).collect();
        let d = spectral_derivative(&z, dt, &DiffConfig::default()).unwrap();
        let err = interior(n)
            .map(|i| (d[i] - w * (w * i as f64 * dt).cos()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-2, "interior error {err}");
    }

    #[test]
    fn gibbs_is_mitigated() {
        let ratio = gibbs_mitigation_ratio(256).unwrap();
        assert!(ratio >= 5.0, "ratio {ratio}");
    }

    #[test]
    fn fd_examples() {
        let dt = 0.1;
        let sq: Vec<f64> = (0..20).map(|i| (i as f64 * dt).powi(2)).collect();
        let d = fd_derivative(&sq, dt, FdOrder::Second).unwrap();
        for (i, v) in d.iter().enumerate().take(19).skip(1) {
            assert_abs_diff_eq!(*v, 2.0 * i as f64 * dt, epsilon = 1e-12);
        }
        let lin: Vec<f64> = (0..20).map(|i| 1.0 - 0.7 * i as f64 * dt).collect();
        for order in [FdOrder::First, FdOrder::Second] {
            let d = fd_derivative(&lin, dt, order).unwrap();
            assert!(d.iter().all(|v| (v + 0.7).abs() < 1e-12));
        }
        assert!(fd_derivative(&[1.0, 2.0], dt, FdOrder::Second).is_err());
    }

    #[test]
    fn fd_second_order_convergence() {
        let err_for = |n: usize| {
            let dt = 2.0 / n as f64;
            let z: Vec<f64> = (0..=n).map(|i| (i as f64 * dt).sin()).collect();
            let d = fd_derivative(&z, dt, FdOrder::Second).unwrap();
            (1..n).map(|i| (d[i] - (i as f64 * dt).cos()).abs()).fold(0.0, f64::max)
        };
        let slope = (err_for(100) / err_for(200)).log2();
        assert!((1.8..=2.2).contains(&slope), "slope {slope}");
    }

    #[test]
    fn config_validation() {
        let mut c = DiffConfig::default();
        assert!(c.validate().is_ok());
        c.alpha = 0.0;
        assert!(c.validate().is_err());
        c.alpha = 0.2;
        c.sigma = Some(-1.0);
        assert!(c.validate().is_err());
        c.sigma = None;
        c.mirror_len = Some(0);
        assert!(c.validate().is_err());
    }
}
