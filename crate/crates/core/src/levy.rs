//! Stochastic integrals against Levy white noise.
//!
//! The discrete integral `y_t = sum_{s<=t} K(t-s) z_s` is a lower-triangular
//! Toeplitz product. Embedding the Toeplitz matrix in a 2T circulant turns it
//! into a diagonal in Fourier space, which the quantum method applies with one
//! postselected flag qubit.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::circuits::{qft_gates, Circuit};
use crate::error::{invalid, Error, Result};
use crate::rng::{stream, Rng};
use crate::statevector::{GateOp, MuxBase, QuantumState};

/// Attempts allowed for the flag postselection (and the half selection).
pub const RETRY_CAP: usize = 10_000;
/// Largest grid for the gate-level integral.
pub const MAX_QUANTUM_STEPS: usize = 1 << 10;

/// Components of the driving Levy process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum NoiseKind {
    GaussianWhite { sigma: f64 },
    /// Poisson(rate dt) jumps per step, each N(jump_mean, jump_std^2).
    CompoundPoisson { rate: f64, jump_mean: f64, jump_std: f64 },
    /// Drift + Brownian + compound Poisson; the drift cancels after centering.
    Mixed { drift: f64, sigma: f64, rate: f64, jump_mean: f64, jump_std: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevyNoiseSpec {
    pub kind: NoiseKind,
    pub steps: usize,
    /// Time step of the grid.
    pub dt: f64,
}

impl LevyNoiseSpec {
    pub fn new(kind: NoiseKind, steps: usize) -> Result<Self> {
        let s = LevyNoiseSpec { kind, steps, dt: 1.0 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return invalid("noise needs at least one step");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return invalid("dt must be positive");
        }
        let (sigma, rate, js) = match self.kind {
            NoiseKind::GaussianWhite { sigma } => (sigma, 0.0, 0.0),
            NoiseKind::CompoundPoisson { rate, jump_std, .. } => (0.0, rate, jump_std),
            NoiseKind::Mixed { sigma, rate, jump_std, .. } => (sigma, rate, jump_std),
        };
        if !(sigma >= 0.0) || !(rate >= 0.0) || !(js >= 0.0) {
            return invalid("sigma, rate and jump_std must be non-negative");
        }
        Ok(())
    }

    /// E[Z_t^2] of the centered noise.
    pub fn second_moment(&self) -> f64 {
        let dt = self.dt;
        match self.kind {
            NoiseKind::GaussianWhite { sigma } => sigma * sigma / dt,
            NoiseKind::CompoundPoisson { rate, jump_mean, jump_std } => {
                rate * (jump_std * jump_std + jump_mean * jump_mean) / dt
            }
            NoiseKind::Mixed { sigma, rate, jump_mean, jump_std, .. } => {
                sigma * sigma / dt + rate * (jump_std * jump_std + jump_mean * jump_mean) / dt
            }
        }
    }
}

fn compound_step(rate: f64, mean: f64, std: f64, dt: f64, rng: &mut Rng) -> f64 {
    let lambda = rate * dt;
    let n = if lambda > 0.0 { Poisson::new(lambda).expect("positive").sample(rng) as usize } else { 0 };
    let jump = Normal::new(mean, std).expect("finite");
    let s: f64 = (0..n).map(|_| jump.sample(rng)).sum();
    s - lambda * mean
}

/// Centered noise Z_i = (dX_i - E dX_i) / dt.
pub fn sample_levy_noise(spec: &LevyNoiseSpec, rng: &mut Rng) -> Result<Vec<f64>> {
    spec.validate()?;
    let dt = spec.dt;
    Ok((0..spec.steps)
        .map(|_| match spec.kind {
            NoiseKind::GaussianWhite { sigma } => {
                let n: f64 = rng.sample(StandardNormal);
                sigma * n / dt.sqrt()
            }
            NoiseKind::CompoundPoisson { rate, jump_mean, jump_std } => {
                compound_step(rate, jump_mean, jump_std, dt, rng) / dt
            }
            NoiseKind::Mixed { drift, sigma, rate, jump_mean, jump_std } => {
                let n: f64 = rng.sample(StandardNormal);
                let dx = drift * dt + sigma * dt.sqrt() * n + compound_step(rate, jump_mean, jump_std, dt, rng);
                (dx - drift * dt) / dt
            }
        })
        .collect())
}

/// |DFT(x)|^2 / T at frequencies 0..T-1.
pub fn periodogram(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut z: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut z);
    z.iter().map(|c| c.norm_sqr() / n as f64).collect()
}

/// Average periodogram over `ensemble` independent noise draws (streams
/// (seed, 0..ensemble)).
pub fn power_spectrum(spec: &LevyNoiseSpec, ensemble: usize, seed: u64) -> Result<Vec<f64>> {
    if ensemble < 100 {
        return invalid("power spectrum needs an ensemble of at least 100");
    }
    spec.validate()?;
    let t = spec.steps;
    let all: Vec<Vec<f64>> = (0..ensemble)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> { Ok(periodogram(&sample_levy_noise(spec, &mut stream(seed, i as u64))?)) })
        .collect::<Result<_>>()?;
    let mut sum = vec![0.0; t];
    for p in &all {
        sum.iter_mut().zip(p).for_each(|(s, v)| *s += v);
    }
    Ok(sum.into_iter().map(|v| v / ensemble as f64).collect())
}

/// (max/min ratio, coefficient of variation) of a spectrum.
pub fn spectrum_flatness(s: &[f64]) -> (f64, f64) {
    let max = s.iter().cloned().fold(f64::MIN, f64::max);
    let min = s.iter().cloned().fold(f64::MAX, f64::min);
    let n = s.len() as f64;
    let m = s.iter().sum::<f64>() / n;
    let v = s.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (max / min, v.sqrt() / m)
}

// -------------------------------------------------------------- integrals

fn check_lengths(kernel: &[f64], noise: &[f64]) -> Result<()> {
    if kernel.len() != noise.len() {
        return invalid(format!("kernel length {} != noise length {}", kernel.len(), noise.len()));
    }
    if kernel.iter().chain(noise).any(|v| !v.is_finite()) {
        return invalid("kernel and noise must be finite");
    }
    Ok(())
}

/// y_t = sum_{s<=t} K(t-s) z_s (diagonal included).
pub fn stochastic_integral_classical(kernel: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
    check_lengths(kernel, noise)?;
    let n = kernel.len();
    if n < 64 {
        return Ok((0..n).map(|t| (0..=t).map(|s| kernel[t - s] * noise[s]).sum()).collect());
    }
    let full = circulant_matvec(&circulant_embed(kernel), &pad(noise));
    Ok(full[..n].to_vec())
}

fn pad(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.resize(2 * x.len(), 0.0);
    v
}

/// First column (K, 0^T) of the 2T circulant whose upper-left block is the
/// lower-triangular Toeplitz matrix of K.
pub fn circulant_embed(column: &[f64]) -> Vec<f64> {
    pad(column)
}

/// Circulant product via FFT: IDFT(DFT(c) * DFT(x)).
pub fn circulant_matvec(c: &[f64], x: &[f64]) -> Vec<f64> {
    let n = c.len();
    assert_eq!(n, x.len());
    let mut p = FftPlanner::new();
    let f = p.plan_fft_forward(n);
    let g = p.plan_fft_inverse(n);
    let mut a: Vec<C64> = c.iter().map(|&v| C64::new(v, 0.0)).collect();
    let mut b: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
    f.process(&mut a);
    f.process(&mut b);
    let mut y: Vec<C64> = a.iter().zip(&b).map(|(u, v)| u * v).collect();
    g.process(&mut y);
    y.iter().map(|v| v.re / n as f64).collect()
}

/// Forward DFT (e^{-2 pi i jk/n}) of a real vector.
pub fn dft(x: &[f64]) -> Vec<C64> {
    let mut z: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(x.len()).process(&mut z);
    z
}

/// Result of one gate-level integral.
#[derive(Clone, Debug)]
pub struct QuantumIntegral {
    /// log2(T)-qubit state; amplitudes proportional to the retained-frequency integral.
    pub state: QuantumState,
    /// Exact flag-0 probability of one attempt.
    pub acceptance_probability: f64,
    /// Probability that the register's top bit reads 0 (Toeplitz half).
    pub forward_probability: f64,
    /// Flag attempts until success, summed over half-selection retries.
    pub flag_attempts: usize,
    pub flag_successes: usize,
    /// Repeats caused by reading the linear-convolution tail half.
    pub half_retries: usize,
    /// Number of retained Fourier coefficients.
    pub retained: usize,
    /// min |b_i| / max |b_i| over retained coefficients.
    pub min_max_ratio: f64,
    pub noise: Vec<f64>,
}

/// Fourier coefficients of (noise, 0^T) with all but the `keep` largest
/// magnitudes set to zero (ties broken by index).
pub fn truncated_spectrum(noise: &[f64], keep: usize) -> Vec<C64> {
    let mut b = dft(&pad(noise));
    if keep < b.len() {
        let mut idx: Vec<usize> = (0..b.len()).collect();
        idx.sort_by(|&i, &j| b[j].norm().total_cmp(&b[i].norm()).then(i.cmp(&j)));
        for &i in &idx[keep..] {
            b[i] = C64::new(0.0, 0.0);
        }
    }
    b
}

/// Circuit on n+1 qubits (register 0..n, flag n): inverse QFT, then the
/// diagonal b_i / max|b| written onto the flag-0 branch.
pub fn integral_diagonal_circuit(b: &[C64]) -> Result<Circuit> {
    let n = b.len().trailing_zeros() as usize;
    let bmax = b.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if bmax == 0.0 {
        return Err(Error::InvalidInput("noise spectrum is identically zero".into()));
    }
    let reg: Vec<usize> = (0..n).collect();
    let mut c = Circuit::new(n + 1);
    c.extend(qft_gates(&reg).iter().rev().map(GateOp::inverse));
    let ry: Vec<f64> = b.iter().map(|z| 2.0 * (z.norm() / bmax).clamp(0.0, 1.0).acos()).collect();
    let ph: Vec<f64> = b.iter().map(|z| z.arg()).collect();
    c.push(GateOp::mux(MuxBase::Ry, vec![n], reg.clone(), ry));
    c.push(GateOp::x(n));
    c.push(GateOp::mux(MuxBase::Phase, vec![n], reg, ph));
    c.push(GateOp::x(n));
    Ok(c)
}

/// Quantum spectral integral for a given noise realization.
pub fn stochastic_integral_quantum_with_noise(
    kernel: &[f64],
    noise: &[f64],
    truncation: usize,
    rng: &mut Rng,
) -> Result<QuantumIntegral> {
    check_lengths(kernel, noise)?;
    let t = kernel.len();
    if t < 2 || !t.is_power_of_two() {
        return invalid("grid length must be a power of two >= 2");
    }
    if t > MAX_QUANTUM_STEPS {
        return Err(Error::Resource(format!("gate-level integral limited to T <= {MAX_QUANTUM_STEPS}")));
    }
    if truncation == 0 || truncation > 2 * t {
        return invalid(format!("truncation must lie in 1..={}", 2 * t));
    }
    let knorm = kernel.iter().map(|v| v * v).sum::<f64>().sqrt();
    if knorm == 0.0 {
        return Err(Error::InvalidInput("cannot load the zero kernel".into()));
    }
    let n = (2 * t).trailing_zeros() as usize;
    let b = truncated_spectrum(noise, truncation);
    let mags: Vec<f64> = b.iter().map(|z| z.norm()).filter(|&m| m > 0.0).collect();
    let bmax = mags.iter().cloned().fold(0.0, f64::max);
    let bmin = mags.iter().cloned().fold(f64::MAX, f64::min);
    if bmax == 0.0 {
        return Err(Error::InvalidInput("noise spectrum is identically zero".into()));
    }
    // amplitude initialization of |K, 0>
    let init: Vec<C64> = circulant_embed(kernel).iter().map(|v| C64::new(v / knorm, 0.0)).collect();
    let mut state = QuantumState::from_amplitudes(init)?.extend(1)?;
    integral_diagonal_circuit(&b)?.apply_mut(&mut state)?;
    let (flagged, p_acc) = state.postselect(n, 0)?;
    let mut fwd = Circuit::new(n + 1);
    fwd.extend(qft_gates(&(0..n).collect::<Vec<_>>()));
    let out = fwd.apply(&flagged)?;
    let (forward, p_fwd) = match out.postselect(n - 1, 0) {
        Ok(v) => v,
        Err(Error::DegeneratePostselection(p)) => {
            return Err(Error::InvalidInput(format!("integral vanishes on the grid (weight {p})")))
        }
        Err(e) => return Err(e),
    };
    // Bernoulli retries for the flag, repeated whenever the top bit reads 1
    let (mut attempts, mut successes, mut half_retries) = (0usize, 0usize, 0usize);
    loop {
        let mut ok = false;
        while attempts < RETRY_CAP {
            attempts += 1;
            if rng.random::<f64>() < p_acc {
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::RetryCapExceeded(RETRY_CAP));
        }
        successes += 1;
        if rng.random::<f64>() < p_fwd {
            break;
        }
        half_retries += 1;
        if half_retries >= RETRY_CAP {
            return Err(Error::RetryCapExceeded(RETRY_CAP));
        }
    }
    let amps: Vec<C64> = forward.amplitudes()[..t].to_vec();
    let state = QuantumState::from_amplitudes(amps)?;
    Ok(QuantumIntegral {
        state,
        acceptance_probability: p_acc,
        forward_probability: p_fwd,
        flag_attempts: attempts,
        flag_successes: successes,
        half_retries,
        retained: mags.len(),
        min_max_ratio: bmin / bmax,
        noise: noise.to_vec(),
    })
}

/// Samples one noise realization and runs the quantum integral on it.
pub fn stochastic_integral_quantum(
    kernel: &[f64],
    spec: &LevyNoiseSpec,
    truncation: usize,
    rng: &mut Rng,
) -> Result<QuantumIntegral> {
    if spec.steps != kernel.len() {
        return invalid("kernel and noise spec lengths differ");
    }
    let noise = sample_levy_noise(spec, rng)?;
    stochastic_integral_quantum_with_noise(kernel, &noise, truncation, rng)
}

/// `runs` independent realizations on streams (seed, 0..runs).
pub fn quantum_integral_ensemble(
    kernel: &[f64],
    spec: &LevyNoiseSpec,
    truncation: usize,
    runs: usize,
    seed: u64,
) -> Result<Vec<QuantumIntegral>> {
    (0..runs)
        .into_par_iter()
        .map(|i| stochastic_integral_quantum(kernel, spec, truncation, &mut stream(seed, i as u64)))
        .collect()
}

/// Cosine similarity of a complex state's real part with a real vector.
pub fn cosine_similarity(state: &[C64], x: &[f64]) -> f64 {
    let dot: f64 = state.iter().zip(x).map(|(a, b)| a.re * b).sum();
    let na = state.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    let nb = x.iter().map(|b| b * b).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Kernel (t dt)^{H - 1/2} sampled at t = 0..T-1 (0 at t = 0 when H < 1/2).
pub fn fractional_kernel(steps: usize, hurst: f64, dt: f64) -> Vec<f64> {
    (0..steps)
        .map(|t| {
            let x = t as f64 * dt;
            if t == 0 && hurst < 0.5 {
                0.0
            } else {
                x.powf(hurst - 0.5)
            }
        })
        .collect()
}

/// X_t = dt * (sum_{s<=t} sigma(t-s) Z_s + sum_{s<=t} mu_s) with Gaussian Z.
pub fn ito_process(sigma_kernel: &[f64], drift: &[f64], spec: &LevyNoiseSpec, rng: &mut Rng) -> Result<Vec<f64>> {
    if !matches!(spec.kind, NoiseKind::GaussianWhite { .. }) {
        return invalid("ito_process drives with Gaussian white noise");
    }
    if sigma_kernel.len() != drift.len() || drift.len() != spec.steps {
        return invalid("sigma kernel, drift and noise lengths must match");
    }
    let z = sample_levy_noise(spec, rng)?;
    let stoch = stochastic_integral_classical(sigma_kernel, &z)?;
    let mut acc = 0.0;
    Ok(stoch
        .iter()
        .zip(drift)
        .map(|(s, m)| {
            acc += m;
            spec.dt * (s + acc)
        })
        .collect())
}

/// Angle frequency of index k on a grid of n points, in [0, 2 pi).
pub fn frequency(k: usize, n: usize) -> f64 {
    2.0 * PI * k as f64 / n as f64
}
