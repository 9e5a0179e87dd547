//! Spectral and statistical analysis of stroboscopic magnetization series.
//!
//! Spectra use the unitary-normalised magnitude `|(1/N) Σ m_n e^{-2πikn/N}|`,
//! so a unit-amplitude alternating series has a π/T peak of exactly 1. The
//! crystalline fraction divides the π/T magnitude by the sum of all bin
//! magnitudes, DC included.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::fit::{levenberg_marquardt, linear_least_squares, CurveModel, FitResult, LmOptions};

pub const DEFAULT_WINDOW_PERIODS: usize = 20;
pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 1000;
pub const DEFAULT_BOOTSTRAP_SEED: u64 = 0xB007;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Spectrum {
    /// Bin frequencies `k / (N T)` in 1/ns.
    pub frequencies: Vec<f64>,
    pub magnitudes: Vec<f64>,
    pub n_samples: usize,
    pub period_ns: f64,
}

impl Spectrum {
    pub fn total_weight(&self) -> f64 {
        self.magnitudes.iter().sum()
    }

    /// Index of the π/T bin, `N/2`.
    pub fn pi_bin(&self) -> Result<usize> {
        if self.n_samples % 2 == 1 {
            return Err(Error::OddSampleCount(self.n_samples));
        }
        Ok(self.n_samples / 2)
    }

    /// Largest nonzero-frequency bin; ties resolve to the lowest index.
    pub fn dominant_nonzero_bin(&self) -> Option<usize> {
        (1..self.n_samples).fold(None, |best: Option<usize>, k| match best {
            Some(b) if self.magnitudes[b] >= self.magnitudes[k] => Some(b),
            _ => Some(k),
        })
    }

    /// Whether the π/T bin is at least as large as every other nonzero bin.
    pub fn pi_bin_dominant(&self) -> Result<bool> {
        let k = self.pi_bin()?;
        let peak = self.magnitudes[k];
        Ok((1..self.n_samples).all(|j| self.magnitudes[j] <= peak))
    }
}

/// Normalised DFT magnitude of a series sampled once per period.
pub fn spectrum(series: &[f64], period_ns: f64) -> Result<Spectrum> {
    let n = series.len();
    if n < 2 {
        return Err(Error::SeriesTooShort(format!("spectrum needs at least 2 samples, got {n}")));
    }
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let inv_n = 1.0 / n as f64;
    Ok(Spectrum {
        frequencies: (0..n).map(|k| k as f64 * inv_n / period_ns).collect(),
        magnitudes: buf.iter().map(|c| c.norm() * inv_n).collect(),
        n_samples: n,
        period_ns,
    })
}

/// Magnitude of the π/T bin; no interpolation.
pub fn peak_height(spec: &Spectrum) -> Result<f64> {
    Ok(spec.magnitudes[spec.pi_bin()?])
}

/// π/T magnitude over the summed magnitude of every bin.
pub fn crystalline_fraction(spec: &Spectrum) -> Result<f64> {
    let peak = peak_height(spec)?;
    let total = spec.total_weight();
    if total <= 0.0 {
        return Err(Error::EmptySpectrum);
    }
    Ok(peak / total)
}

/// Drops the last sample of an odd-length series.
pub fn even_prefix(series: &[f64]) -> &[f64] {
    &series[..series.len() - series.len() % 2]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowPeak {
    /// Window start, in periods.
    pub start: usize,
    pub height: f64,
}

/// π/T peak heights of rectangular windows of `window` samples, sliding by
/// `step` samples.
pub fn windowed_peaks(series: &[f64], window: usize, step: usize) -> Result<Vec<WindowPeak>> {
    if step == 0 {
        return Err(invalid("step", "must be at least 1"));
    }
    if window < 2 {
        return Err(invalid("window", "must be at least 2 samples"));
    }
    if window % 2 == 1 {
        return Err(Error::OddSampleCount(window));
    }
    if series.len() < window {
        return Err(Error::SeriesTooShort(format!(
            "window of {window} periods is longer than the series ({})",
            series.len()
        )));
    }
    (0..=series.len() - window)
        .step_by(step)
        .map(|start| {
            let spec = spectrum(&series[start..start + window], 1.0)?;
            Ok(WindowPeak {
                start,
                height: peak_height(&spec)?,
            })
        })
        .collect()
}

/// `C0 + C1 exp(-t/τ1) + C2 exp(-t/τ2)` with `τ = exp(u)`.
struct BiExponential;

impl CurveModel for BiExponential {
    fn n_params(&self) -> usize {
        5
    }

    fn value(&self, p: &[f64], t: f64) -> f64 {
        p[0] + p[1] * (-t * (-p[2]).exp()).exp() + p[3] * (-t * (-p[4]).exp()).exp()
    }

    fn gradient(&self, p: &[f64], t: f64, out: &mut [f64]) {
        let (r1, r2) = ((-p[2]).exp(), (-p[4]).exp());
        let (e1, e2) = ((-t * r1).exp(), (-t * r2).exp());
        out[0] = 1.0;
        out[1] = e1;
        out[2] = p[1] * e1 * t * r1;
        out[3] = e2;
        out[4] = p[3] * e2 * t * r2;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Lifetime {
    Determinate(f64),
    /// The data carry no resolvable decay (flat, or every component negligible).
    Indeterminate,
}

impl Lifetime {
    pub fn value(&self) -> Option<f64> {
        match self {
            Lifetime::Determinate(v) => Some(*v),
            Lifetime::Indeterminate => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BiExponentialFit {
    /// Parameters `c0, c1, tau1, c2, tau2` with `tau1 >= tau2`.
    pub fit: FitResult,
    pub lifetime: Lifetime,
}

// A component whose variation over the data is below this fraction of the
// data range is treated as absent.
const ACTIVE_COMPONENT_FRACTION: f64 = 1e-3;
const FLAT_DATA_TOLERANCE: f64 = 1e-9;
/// Decay times beyond this multiple of the data span are extrapolations and
/// are reported as indeterminate.
pub const MAX_LIFETIME_SPAN_RATIO: f64 = 10.0;

/// Bi-exponential fit with multi-start Levenberg–Marquardt.
///
/// Starts use every pair from a geometric grid of decay times spanning the
/// sample spacing to the data span; the amplitudes of each start come from
/// a linear solve. The lifetime is the largest decay time among components
/// that contribute visibly to the data.
pub fn fit_biexponential(times: &[f64], heights: &[f64]) -> Result<BiExponentialFit> {
    if times.len() != heights.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            actual: heights.len(),
        });
    }
    if times.len() < 6 {
        return Err(Error::SeriesTooShort(format!(
            "bi-exponential fit needs at least 6 points, got {}",
            times.len()
        )));
    }
    if heights.iter().any(|h| !(h.is_finite() && *h >= 0.0)) || times.iter().any(|t| !t.is_finite()) {
        return Err(invalid("heights", "must be finite and non-negative"));
    }
    let t_min = times.iter().copied().fold(f64::INFINITY, f64::min);
    let t_max = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = t_max - t_min;
    let h_min = heights.iter().copied().fold(f64::INFINITY, f64::min);
    let h_max = heights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = h_max - h_min;
    let mean = heights.iter().sum::<f64>() / heights.len() as f64;

    let names = |p: &[f64]| {
        vec![
            ("c0".to_string(), p[0]),
            ("c1".to_string(), p[1]),
            ("tau1".to_string(), p[2]),
            ("c2".to_string(), p[3]),
            ("tau2".to_string(), p[4]),
        ]
    };

    if span <= 0.0 || range <= FLAT_DATA_TOLERANCE * mean.abs().max(1.0) {
        let residual = heights.iter().map(|h| (h - mean).powi(2)).sum::<f64>().sqrt();
        return Ok(BiExponentialFit {
            fit: FitResult {
                parameters: names(&[mean, 0.0, f64::NAN, 0.0, f64::NAN]),
                residual_norm: residual,
                converged: true,
                iterations: 0,
                covariance_diagonal: None,
                diagnostics: vec!["flat data: no decay to resolve".into()],
            },
            lifetime: Lifetime::Indeterminate,
        });
    }

    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let spacing = sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| *d > 0.0)
        .fold(f64::INFINITY, f64::min);
    let grid = geometric_grid(spacing, span, 8);

    let opts = LmOptions::default();
    let mut best: Option<(f64, crate::fit::LmOutcome)> = None;
    for (i, &ta) in grid.iter().enumerate() {
        for &tb in &grid[..i] {
            let design = DMatrix::from_fn(times.len(), 3, |r, c| match c {
                0 => 1.0,
                1 => (-times[r] / ta).exp(),
                _ => (-times[r] / tb).exp(),
            });
            let Some(lin) = linear_least_squares(&design, heights) else {
                continue;
            };
            let start = [lin[0], lin[1], ta.ln(), lin[2], tb.ln()];
            let out = levenberg_marquardt(&BiExponential, times, heights, &start, &opts);
            if out.residual_norm.is_finite()
                && best.as_ref().map_or(true, |(r, _)| out.residual_norm < *r)
            {
                best = Some((out.residual_norm, out));
            }
        }
    }
    let Some((_, out)) = best else {
        return Err(Error::NoCrossover("bi-exponential fit produced no finite start".into()));
    };

    let mut p = out.params.clone();
    let mut cov = out.covariance_diagonal.clone();
    p[2] = p[2].exp();
    p[4] = p[4].exp();
    if let Some(c) = cov.as_mut() {
        // Delta method for τ = exp(u).
        c[2] *= p[2] * p[2];
        c[4] *= p[4] * p[4];
    }
    if p[4] > p[2] {
        p.swap(1, 3);
        p.swap(2, 4);
        if let Some(c) = cov.as_mut() {
            c.swap(1, 3);
            c.swap(2, 4);
        }
    }

    let contribution = |c: f64, tau: f64| c.abs() * ((-t_min / tau).exp() - (-t_max / tau).exp());
    let active: Vec<f64> = [(p[1], p[2]), (p[3], p[4])]
        .iter()
        .filter(|(c, tau)| contribution(*c, *tau) > ACTIVE_COMPONENT_FRACTION * range)
        .map(|(_, tau)| *tau)
        .collect();
    let lifetime = active
        .iter()
        .copied()
        .fold(None, |m: Option<f64>, t| Some(m.map_or(t, |v| v.max(t))))
        .filter(|t| *t <= MAX_LIFETIME_SPAN_RATIO * span)
        .map_or(Lifetime::Indeterminate, Lifetime::Determinate);
    let unresolved = active.iter().any(|t| *t > MAX_LIFETIME_SPAN_RATIO * span);

    let mut diagnostics = Vec::new();
    if !out.converged {
        diagnostics.push(format!(
            "best start did not meet the convergence tolerances after {} iterations",
            out.iterations
        ));
    }
    if unresolved {
        diagnostics.push(format!(
            "fitted decay time exceeds {MAX_LIFETIME_SPAN_RATIO} times the data span ({span} ns)"
        ));
    } else if lifetime == Lifetime::Indeterminate {
        diagnostics.push("no decaying component contributes to the data".into());
    }
    Ok(BiExponentialFit {
        fit: FitResult {
            parameters: names(&p),
            residual_norm: out.residual_norm,
            converged: out.converged,
            iterations: out.iterations,
            covariance_diagonal: cov,
            diagnostics,
        },
        lifetime,
    })
}

fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 || hi <= lo {
        return vec![lo, hi.max(lo * 2.0)];
    }
    let ratio = (hi / lo).powf(1.0 / (n - 1) as f64);
    (0..n).map(|i| lo * ratio.powi(i as i32)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceEstimate {
    /// Unbiased sample variance.
    pub variance: f64,
    /// Bootstrap standard error of the variance.
    pub bootstrap_se: f64,
    pub resamples: usize,
    pub seed: u64,
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Variance of π/T peak heights across disorder realizations, with a
/// seeded bootstrap standard error.
pub fn peak_height_variance(heights: &[f64], resamples: usize, seed: u64) -> Result<VarianceEstimate> {
    if heights.len() < 2 {
        return Err(Error::SeriesTooShort(format!(
            "variance needs at least 2 realizations, got {}",
            heights.len()
        )));
    }
    if resamples < 2 {
        return Err(invalid("resamples", "bootstrap needs at least 2 resamples"));
    }
    let variance = sample_variance(heights);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = heights.len();
    let mut scratch = vec![0.0; n];
    let boot: Vec<f64> = (0..resamples)
        .map(|_| {
            for s in scratch.iter_mut() {
                *s = heights[rng.gen_range(0..n)];
            }
            sample_variance(&scratch)
        })
        .collect();
    Ok(VarianceEstimate {
        variance,
        bootstrap_se: sample_variance(&boot).sqrt(),
        resamples,
        seed,
    })
}

/// `A / (1 + (ln(ε/ε0)/γ)^2) + B` with `v = ln ε0`, evaluated at `x = ln ε`.
struct LogLorentzian;

impl CurveModel for LogLorentzian {
    fn n_params(&self) -> usize {
        4
    }

    fn value(&self, p: &[f64], x: f64) -> f64 {
        let s = (x - p[2]) / p[3];
        p[0] / (1.0 + s * s) + p[1]
    }

    fn gradient(&self, p: &[f64], x: f64, out: &mut [f64]) {
        let s = (x - p[2]) / p[3];
        let d = 1.0 + s * s;
        out[0] = 1.0 / d;
        out[1] = 1.0;
        out[2] = 2.0 * p[0] * s / (p[3] * d * d);
        out[3] = 2.0 * p[0] * s * s / (p[3] * d * d);
    }
}

/// Fits the peaked log-Lorentzian `A / (1 + (ln(ε/ε0)/γ)^2) + B` and returns
/// the critical distortion `ε0` as parameter `epsilon0`.
///
/// Data whose maximum sits at either end of the grid, or fits whose centre
/// falls outside the sampled range, are reported as [`Error::NoCrossover`].
pub fn fit_lorentzian_critical_point(epsilons: &[f64], values: &[f64]) -> Result<FitResult> {
    if epsilons.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: epsilons.len(),
            actual: values.len(),
        });
    }
    if epsilons.len() < 5 {
        return Err(Error::SeriesTooShort(format!(
            "Lorentzian fit needs at least 5 points, got {}",
            epsilons.len()
        )));
    }
    if epsilons.iter().any(|e| !(e.is_finite() && *e > 0.0)) || values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("epsilon", "grid must be strictly positive and finite"));
    }
    let mut order: Vec<usize> = (0..epsilons.len()).collect();
    order.sort_by(|&a, &b| epsilons[a].total_cmp(&epsilons[b]));
    let xs: Vec<f64> = order.iter().map(|&i| epsilons[i].ln()).collect();
    let ys: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let argmax = (0..ys.len()).fold(0, |b, i| if ys[i] > ys[b] { i } else { b });
    if argmax == 0 || argmax == ys.len() - 1 {
        return Err(Error::NoCrossover(
            "maximum at the edge of the grid (monotone data)".into(),
        ));
    }
    let (x_lo, x_hi) = (xs[0], xs[xs.len() - 1]);
    let width = x_hi - x_lo;

    let opts = LmOptions::default();
    let mut best: Option<crate::fit::LmOutcome> = None;
    for &centre in &xs[1..xs.len() - 1] {
        for frac in [0.05, 0.1, 0.2, 0.4, 0.8] {
            let gamma = frac * width;
            let design = DMatrix::from_fn(xs.len(), 2, |r, c| {
                if c == 0 {
                    let s = (xs[r] - centre) / gamma;
                    1.0 / (1.0 + s * s)
                } else {
                    1.0
                }
            });
            let Some(lin) = linear_least_squares(&design, &ys) else {
                continue;
            };
            let start = [lin[0], lin[1], centre, gamma];
            let out = levenberg_marquardt(&LogLorentzian, &xs, &ys, &start, &opts);
            if out.residual_norm.is_finite()
                && best.as_ref().map_or(true, |b| out.residual_norm < b.residual_norm)
            {
                best = Some(out);
            }
        }
    }
    let out = best.ok_or_else(|| Error::NoCrossover("no finite Lorentzian start".into()))?;
    let (a, b, v, gamma) = (out.params[0], out.params[1], out.params[2], out.params[3].abs());
    if a <= 0.0 || v <= x_lo || v >= x_hi {
        return Err(Error::NoCrossover(format!(
            "fitted peak (A = {a:.3e}, eps0 = {:.4}) is not an interior maximum",
            v.exp()
        )));
    }
    let mut cov = out.covariance_diagonal.clone();
    if let Some(c) = cov.as_mut() {
        c[2] *= v.exp().powi(2);
    }
    let mut diagnostics = Vec::new();
    if !out.converged {
        diagnostics.push(format!("did not converge after {} iterations", out.iterations));
    }
    Ok(FitResult {
        parameters: vec![
            ("a".into(), a),
            ("b".into(), b),
            ("gamma".into(), gamma),
            ("epsilon0".into(), v.exp()),
        ],
        residual_norm: out.residual_norm,
        converged: out.converged,
        iterations: out.iterations,
        covariance_diagonal: cov.map(|c| vec![c[0], c[1], c[3], c[2]]),
        diagnostics,
    })
}

/// Evaluates the peaked log-Lorentzian at `epsilon`.
pub fn log_lorentzian(epsilon: f64, a: f64, b: f64, gamma: f64, epsilon0: f64) -> f64 {
    let s = (epsilon / epsilon0).ln() / gamma;
    a / (1.0 + s * s) + b
}

/// Analytic π/T peak of `(-1)^n r^n`, `n = 0..N-1`, for even `N`:
/// `(1/N) Σ r^n = (1 - r^N) / (N (1 - r))`.
pub fn damped_alternating_peak(ratio: f64, n: usize) -> f64 {
    if (ratio - 1.0).abs() < 1e-15 {
        return 1.0;
    }
    (1.0 - ratio.powi(n as i32)) / (n as f64 * (1.0 - ratio))
}

pub fn angular_pi_over_t(period_ns: f64) -> f64 {
    PI / period_ns
}

#[cfg(test)]
mod tests {
    use super::*;

    fn alternating(n: usize) -> Vec<f64> {
        (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect()
    }

    #[test]
    fn constant_and_alternating_spectra() {
        let c = spectrum(&vec![1.0; 16], 95.0).unwrap();
        assert!((c.magnitudes[0] - 1.0).abs() < 1e-12);
        assert!(c.magnitudes[1..].iter().all(|m| m.abs() < 1e-12));
        assert_eq!(peak_height(&c).unwrap(), c.magnitudes[8]);
        assert!(crystalline_fraction(&c).unwrap() < 1e-12);

        let a = spectrum(&alternating(16), 95.0).unwrap();
        assert!((peak_height(&a).unwrap() - 1.0).abs() < 1e-12);
        assert!((crystalline_fraction(&a).unwrap() - 1.0).abs() < 1e-12);
        assert!((a.frequencies[8] - 1.0 / (2.0 * 95.0)).abs() < 1e-15);
        assert!(a.pi_bin_dominant().unwrap());
    }

    #[test]
    fn short_and_odd_series() {
        assert!(spectrum(&[1.0], 1.0).is_err());
        assert!(spectrum(&[], 1.0).is_err());
        let s = spectrum(&[1.0, 0.0, 1.0], 1.0).unwrap();
        assert!(matches!(peak_height(&s), Err(Error::OddSampleCount(3))));
        assert!(matches!(crystalline_fraction(&spectrum(&[0.0; 4], 1.0).unwrap()), Err(Error::EmptySpectrum)));
        assert_eq!(even_prefix(&[1.0, 2.0, 3.0]).len(), 2);
    }

    #[test]
    fn windows() {
        let w = windowed_peaks(&alternating(60), 20, 1).unwrap();
        assert_eq!(w.len(), 41);
        assert!(w.iter().all(|p| (p.height - 1.0).abs() < 1e-12));
        assert!(windowed_peaks(&alternating(10), 20, 1).is_err());
        assert!(windowed_peaks(&alternating(30), 21, 1).is_err());
        assert!(windowed_peaks(&alternating(30), 20, 0).is_err());
    }

    #[test]
    fn variance_small_cases() {
        let same = peak_height_variance(&[0.4; 5], 200, 1).unwrap();
        assert_eq!(same.variance, 0.0);
        assert_eq!(same.bootstrap_se, 0.0);
        let two = peak_height_variance(&[0.0, 1.0], 200, 1).unwrap();
        assert!((two.variance - 0.5).abs() < 1e-15);
        assert!(peak_height_variance(&[1.0], 200, 1).is_err());
        let again = peak_height_variance(&[0.0, 1.0], 200, 1).unwrap();
        assert_eq!(two, again);
    }

    #[test]
    fn flat_data_has_no_lifetime() {
        let t: Vec<f64> = (0..30).map(f64::from).collect();
        let fit = fit_biexponential(&t, &vec![0.3; 30]).unwrap();
        assert_eq!(fit.lifetime, Lifetime::Indeterminate);
        assert!((fit.fit.get("c0").unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(fit.fit.get("c1"), Some(0.0));
        assert!(fit_biexponential(&t[..5], &[0.1; 5]).is_err());
        assert!(fit_biexponential(&t[..6], &[0.1, 0.2, -0.1, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn lorentzian_rejects_monotone_data() {
        let e = [0.02, 0.04, 0.08, 0.12, 0.16, 0.2];
        let v = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        assert!(matches!(fit_lorentzian_critical_point(&e, &v), Err(Error::NoCrossover(_))));
        assert!(fit_lorentzian_critical_point(&[0.0, 0.1, 0.2, 0.3, 0.4], &[0.0; 5]).is_err());
    }
}
