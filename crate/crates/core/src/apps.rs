//! Applications: variance-swap strikes under fBM volatility, the TAMSD test
//! for anomalous diffusion, and the ergodicity-breaking parameter.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::levy::{sample_levy_noise, LevyNoiseSpec, NoiseKind};
use crate::qmc::{
    build_oracle, estimate_probability, ratio_result, BranchModel, EstimationResult, Method, NormFlag,
    OracleConfig, Readout, AE_REPETITIONS,
};
use crate::rng::{stream, Rng};
use crate::spectral_bm::{
    zeta_tail, ProcessSpec, RadiusMode, ShiftSampling, SimOptions, TrajectorySampler,
};
use crate::stats::{linear_fit, quantile_sorted};

// ------------------------------------------------------------------- TAMSD

/// M(tau) = (1/(T - tau)) sum_j (X_{j+tau} - X_j)^2.
pub fn tamsd(traj: &[f64], tau: usize) -> Result<f64> {
    if tau == 0 || tau >= traj.len() {
        return invalid(format!("lag {tau} outside 1..{}", traj.len()));
    }
    let n = traj.len() - tau;
    Ok((0..n).map(|j| (traj[j + tau] - traj[j]).powi(2)).sum::<f64>() / n as f64)
}

/// (T - tau) x (T - tau) covariance of lag-tau fBM increments with
/// E[(X_{t+tau} - X_t)^2] = D tau^{2H}.
pub fn increment_covariance(steps: usize, tau: usize, diffusion: f64, hurst: f64) -> Result<DMatrix<f64>> {
    if tau == 0 || tau >= steps {
        return invalid(format!("lag {tau} outside 1..{steps}"));
    }
    let n = steps - tau;
    let p = |x: f64| if x == 0.0 { 0.0 } else { x.powf(2.0 * hurst) };
    let row: Vec<f64> = (0..n)
        .map(|i| {
            let (i, t) = (i as f64, tau as f64);
            0.5 * diffusion * (p(i + t) - 2.0 * p(i) + p((i - t).abs()))
        })
        .collect();
    Ok(DMatrix::from_fn(n, n, |a, b| row[a.abs_diff(b)]))
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: DMatrix<f64>) -> Vec<f64> {
    let mut e: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    e.sort_by(|a, b| a.total_cmp(b));
    e
}

/// Empirical alpha/2 and 1 - alpha/2 quantiles of sum_j lambda_j U_j with
/// U_j iid chi-square(1), from R draws on streams (seed, 0..R).
pub fn generalized_chisq_quantiles(eigs: &[f64], alpha_sig: f64, samples: usize, rng: &mut Rng) -> Result<(f64, f64)> {
    if samples < 1000 {
        return invalid(format!("need at least 10^3 quantile samples, got {samples}"));
    }
    if !(alpha_sig > 0.0 && alpha_sig < 1.0) {
        return invalid("significance must lie in (0, 1)");
    }
    let seed: u64 = rng.random();
    let mut y: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut r = stream(seed, i as u64);
            eigs.iter()
                .map(|l| {
                    let z: f64 = r.sample(StandardNormal);
                    l * z * z
                })
                .sum()
        })
        .collect();
    y.sort_by(|a, b| a.total_cmp(b));
    Ok((quantile_sorted(&y, alpha_sig / 2.0), quantile_sorted(&y, 1.0 - alpha_sig / 2.0)))
}

// ------------------------------------------------------------ fBM generators

/// Exact fBM path X_0 = 0, ..., X_{T-1} with E[(X_{t+s} - X_t)^2] = D s^{2H}
/// by circulant embedding of the fractional Gaussian noise (Davies-Harte).
pub fn fbm_davies_harte(steps: usize, hurst: f64, diffusion: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if steps < 2 {
        return invalid("path needs at least two points");
    }
    if !(hurst > 0.0 && hurst < 1.0) {
        return invalid(format!("Hurst exponent must lie in (0, 1), got {hurst}"));
    }
    let n = (steps - 1).next_power_of_two();
    let m = 2 * n;
    let p = |k: f64| k.abs().powf(2.0 * hurst);
    let gam = |k: usize| {
        let k = k as f64;
        0.5 * diffusion * (p(k + 1.0) - 2.0 * p(k) + p(k - 1.0))
    };
    let mut c: Vec<C64> = (0..m).map(|j| C64::new(gam(if j <= n { j } else { m - j }), 0.0)).collect();
    let fft = FftPlanner::new().plan_fft_forward(m);
    fft.process(&mut c);
    let mut y: Vec<C64> = Vec::with_capacity(m);
    for (k, l) in c.iter().enumerate() {
        if l.re < -1e-9 * c[0].re.abs() {
            return Err(Error::Verification(format!("negative circulant eigenvalue {} at {k}", l.re)));
        }
        let s = (l.re.max(0.0) / m as f64).sqrt();
        let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        y.push(C64::new(s * a, s * b));
    }
    fft.process(&mut y);
    let mut x = Vec::with_capacity(steps);
    x.push(0.0);
    for i in 0..steps - 1 {
        x.push(x[i] + y[i].re);
    }
    Ok(x)
}

/// Local constant of the sine series: E[(B(t+h) - B(t))^2] ~ C_H h^{2H}
/// averaged over t, C_H = 1 / (Gamma(1 + 2H) sin(pi H)).
pub fn spectral_increment_constant(hurst: f64) -> f64 {
    1.0 / (gamma(1.0 + 2.0 * hurst) * (PI * hurst).sin())
}

/// fBM-like path from the spectral generator: the first `steps` grid values
/// of a series with L = 2T terms on a 4T grid, rescaled to D s^{2H} at small
/// lags. The bridge pinning and the cut at L lower increment variances.
pub fn fbm_spectral(steps: usize, hurst: f64, diffusion: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    let big = 4 * steps.next_power_of_two();
    let spec = ProcessSpec::new(hurst, big / 2, big)?;
    let sampler = TrajectorySampler::new(spec, SimOptions { shift: ShiftSampling::Independent, radius: RadiusMode::Sampled })?;
    let tr = sampler.sample(rng)?;
    let h = PI / big as f64;
    let scale = (diffusion / spectral_increment_constant(hurst)).sqrt() / h.powf(hurst);
    let mut x = Vec::with_capacity(steps);
    x.push(0.0);
    x.extend(tr.values[..steps - 1].iter().map(|v| v * scale));
    Ok(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FbmGenerator {
    Spectral,
    DaviesHarte,
}

pub fn fbm_path(generator: FbmGenerator, steps: usize, hurst: f64, diffusion: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    match generator {
        FbmGenerator::Spectral => fbm_spectral(steps, hurst, diffusion, rng),
        FbmGenerator::DaviesHarte => fbm_davies_harte(steps, hurst, diffusion, rng),
    }
}

// -------------------------------------------------------------- TAMSD test

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Alternative {
    Fbm { hurst: f64 },
    /// Poisson(rate) jumps per step with N(0, jump_std^2) sizes.
    CompoundPoisson { rate: f64, jump_std: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TamsdTestConfig {
    pub steps: usize,
    pub tau: usize,
    pub diffusion: f64,
    pub hurst_null: f64,
    pub alpha_sig: f64,
    pub quantile_samples: usize,
    pub alternative: Alternative,
    pub generator: FbmGenerator,
}

impl TamsdTestConfig {
    /// T = 512, tau = 4, D = 1, alpha = 0.05, R = 10^4, exact fBM paths.
    pub fn new(hurst_null: f64, alternative: Alternative) -> Self {
        TamsdTestConfig {
            steps: 512,
            tau: 4,
            diffusion: 1.0,
            hurst_null,
            alpha_sig: 0.05,
            quantile_samples: 10_000,
            alternative,
            generator: FbmGenerator::DaviesHarte,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 || self.tau >= self.steps {
            return invalid(format!("lag {} outside 1..{}", self.tau, self.steps));
        }
        if !(self.alpha_sig > 0.0 && self.alpha_sig < 1.0) {
            return invalid("significance must lie in (0, 1)");
        }
        if !(self.diffusion > 0.0) || !(self.hurst_null > 0.0 && self.hurst_null < 1.0) {
            return invalid("diffusion must be positive and the null Hurst exponent in (0, 1)");
        }
        match self.alternative {
            Alternative::Fbm { hurst } if !(hurst > 0.0 && hurst < 1.0) => invalid("alternative Hurst exponent outside (0, 1)"),
            Alternative::CompoundPoisson { rate, jump_std } if !(rate > 0.0 && jump_std > 0.0) => {
                invalid("compound Poisson needs positive rate and jump size")
            }
            _ => Ok(()),
        }
    }

    /// Path under the alternative.
    pub fn alternative_path(&self, rng: &mut Rng) -> Result<Vec<f64>> {
        match self.alternative {
            Alternative::Fbm { hurst } => fbm_path(self.generator, self.steps, hurst, self.diffusion, rng),
            Alternative::CompoundPoisson { rate, jump_std } => {
                let spec = LevyNoiseSpec::new(NoiseKind::CompoundPoisson { rate, jump_mean: 0.0, jump_std }, self.steps - 1)?;
                let z = sample_levy_noise(&spec, rng)?;
                let mut x = vec![0.0];
                for v in z {
                    x.push(x.last().unwrap() + v);
                }
                Ok(x)
            }
        }
    }
}

/// Acceptance band for M(tau) under the null.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TamsdBand {
    pub q_low: f64,
    pub q_high: f64,
    pub lower: f64,
    pub upper: f64,
    /// Eigenvalues of the increment covariance at D = 1.
    pub eigenvalues: Vec<f64>,
}

/// [D Q_low / (T - tau), D Q_high / (T - tau)] from the null eigenvalues.
pub fn tamsd_band(config: &TamsdTestConfig, rng: &mut Rng) -> Result<TamsdBand> {
    config.validate()?;
    let eigs = symmetric_eigenvalues(increment_covariance(config.steps, config.tau, 1.0, config.hurst_null)?);
    let (q_low, q_high) = generalized_chisq_quantiles(&eigs, config.alpha_sig, config.quantile_samples, rng)?;
    let n = (config.steps - config.tau) as f64;
    Ok(TamsdBand {
        q_low,
        q_high,
        lower: config.diffusion * q_low / n,
        upper: config.diffusion * q_high / n,
        eigenvalues: eigs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub power: f64,
    pub standard_error: f64,
    pub rejections: usize,
    pub trials: usize,
    pub band: TamsdBand,
}

/// Fraction of alternative paths whose M(tau) leaves the null band.
pub fn test_power(config: &TamsdTestConfig, trials: usize, rng: &mut Rng) -> Result<PowerReport> {
    let band = tamsd_band(config, rng)?;
    test_power_with_band(config, band, trials, rng)
}

/// [`test_power`] with a precomputed band.
pub fn test_power_with_band(config: &TamsdTestConfig, band: TamsdBand, trials: usize, rng: &mut Rng) -> Result<PowerReport> {
    config.validate()?;
    if trials < 100 {
        return invalid(format!("need at least 100 trials, got {trials}"));
    }
    let seed: u64 = rng.random();
    let outside: Result<Vec<bool>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let x = config.alternative_path(&mut stream(seed, i as u64))?;
            let m = tamsd(&x, config.tau)?;
            Ok(m < band.lower || m > band.upper)
        })
        .collect();
    let rejections = outside?.iter().filter(|b| **b).count();
    let p = rejections as f64 / trials as f64;
    Ok(PowerReport {
        power: p,
        standard_error: (p * (1.0 - p) / trials as f64).sqrt(),
        rejections,
        trials,
        band,
    })
}

/// Ensemble of fBM paths on streams (seed, 0..count).
pub fn fbm_ensemble(generator: FbmGenerator, count: usize, steps: usize, hurst: f64, diffusion: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    (0..count)
        .into_par_iter()
        .map(|i| fbm_path(generator, steps, hurst, diffusion, &mut stream(seed, i as u64)))
        .collect()
}

/// Ensemble mean of M(tau) for each lag.
pub fn mean_tamsd(ensemble: &[Vec<f64>], taus: &[usize]) -> Result<Vec<f64>> {
    taus.iter()
        .map(|&t| {
            let v: Result<Vec<f64>> = ensemble.iter().map(|x| tamsd(x, t)).collect();
            let v = v?;
            Ok(v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect()
}

/// Slope of log <M(tau)> against log tau.
pub fn tamsd_slope(ensemble: &[Vec<f64>], taus: &[usize]) -> Result<f64> {
    let m = mean_tamsd(ensemble, taus)?;
    let x: Vec<f64> = taus.iter().map(|&t| (t as f64).ln()).collect();
    let y: Vec<f64> = m.iter().map(|v| v.ln()).collect();
    Ok(linear_fit(&x, &y).0)
}

// ------------------------------------------------------ ergodicity breaking

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum XiOrientation {
    /// xi_i = M_i / <M>.
    Standard,
    /// xi_i = <M> / M_i.
    Literal,
}

/// EB(tau) = <xi^2> - 1 with xi_i = M_i(tau) / <M(tau)>.
pub fn eb_parameter(ensemble: &[Vec<f64>], tau: usize) -> Result<f64> {
    eb_parameter_oriented(ensemble, tau, XiOrientation::Standard)
}

pub fn eb_parameter_oriented(ensemble: &[Vec<f64>], tau: usize, orientation: XiOrientation) -> Result<f64> {
    if ensemble.len() < 10 {
        return invalid(format!("need at least 10 trajectories, got {}", ensemble.len()));
    }
    let m: Result<Vec<f64>> = ensemble.iter().map(|x| tamsd(x, tau)).collect();
    eb_from_tamsd(&m?, orientation)
}

/// EB from per-trajectory TAMSD values.
pub fn eb_from_tamsd(m: &[f64], orientation: XiOrientation) -> Result<f64> {
    let mean = m.iter().sum::<f64>() / m.len() as f64;
    if mean == 0.0 {
        return invalid("mean TAMSD is zero");
    }
    let xi2: f64 = match orientation {
        XiOrientation::Standard => m.iter().map(|v| (v / mean).powi(2)).sum(),
        XiOrientation::Literal => {
            if m.contains(&0.0) {
                return invalid("a trajectory has zero TAMSD");
            }
            m.iter().map(|v| (mean / v).powi(2)).sum()
        }
    };
    Ok(xi2 / m.len() as f64 - 1.0)
}

// ----------------------------------------------------------- variance swap

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwapSpec {
    pub intervals: usize,
    pub annualization: f64,
    pub hurst: f64,
    /// Carried for the log-return model; the strike does not depend on it.
    pub rate: f64,
    /// Time span [lo pi, hi pi] covered by the n intervals.
    pub span: (f64, f64),
    pub norm_window: Option<(f64, f64)>,
}

impl SwapSpec {
    pub fn new(hurst: f64) -> Self {
        SwapSpec { intervals: 1, annualization: 1.0, hurst, rate: 0.0, span: (0.0, 1.0), norm_window: None }
    }

    pub fn validate(&self, process: &ProcessSpec) -> Result<()> {
        process.validate()?;
        if self.intervals == 0 || !(self.annualization > 0.0) {
            return invalid("swap needs n >= 1 and a positive annualization");
        }
        if (self.hurst - process.hurst).abs() > 1e-12 {
            return invalid(format!("swap Hurst {} differs from the process ({})", self.hurst, process.hurst));
        }
        let (a, b) = self.span;
        if !(0.0 <= a && a < b && b <= 1.0) {
            return invalid(format!("time span {a}:{b} must satisfy 0 <= lo < hi <= 1"));
        }
        if let Some((lo, hi)) = self.norm_window {
            if !(lo <= hi) {
                return invalid(format!("norm window [{lo}, {hi}] is empty"));
            }
        }
        Ok(())
    }

    /// A / n.
    pub fn prefactor(&self) -> f64 {
        self.annualization / self.intervals as f64
    }

    /// Grid indices i in 1..T-1 with t_i inside the span.
    pub fn grid_indices(&self, steps: usize) -> Result<(usize, usize)> {
        let lo = ((self.span.0 * steps as f64) - 1e-9).ceil().max(1.0) as usize;
        let hi = ((self.span.1 * steps as f64) + 1e-9).floor().min((steps - 1) as f64) as usize;
        if lo > hi {
            return invalid("time span contains no grid point");
        }
        Ok((lo, hi))
    }
}

/// Exact grid value (A/n)(pi/T) sum_{i in span} Var B(t_i) of the truncated series.
pub fn strike_grid_exact(swap: &SwapSpec, process: &ProcessSpec) -> Result<f64> {
    swap.validate(process)?;
    let (lo, hi) = swap.grid_indices(process.steps)?;
    let h = PI / process.steps as f64;
    Ok(swap.prefactor() * h * (lo..=hi).map(|i| process.covariance(process.time(i), process.time(i))).sum::<f64>())
}

/// (A/n) integral over the span of Var B(t) for the series cut at L terms.
pub fn strike_integral(swap: &SwapSpec, hurst: f64, terms: usize) -> f64 {
    let (a, b) = (swap.span.0 * PI, swap.span.1 * PI);
    let two_a = 2.0 * hurst + 1.0;
    let s: f64 = (1..=terms)
        .map(|k| {
            let k = k as f64;
            let int = 0.5 * (b - a) - ((2.0 * k * b).sin() - (2.0 * k * a).sin()) / (4.0 * k);
            int / k.powf(two_a)
        })
        .sum();
    swap.prefactor() * 2.0 / PI * s
}

/// Contribution of the frequencies above L to the span integral, using the
/// span average 1/2 of sin^2 (exact on the full span).
pub fn strike_tail(swap: &SwapSpec, hurst: f64, terms: usize) -> f64 {
    let len = (swap.span.1 - swap.span.0) * PI;
    swap.prefactor() * 2.0 / PI * 0.5 * len * zeta_tail(2.0 * hurst + 1.0, terms)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwapOptions {
    pub precision_bits: u32,
    pub ae_bits: Option<u32>,
    pub repetitions: usize,
    pub samples: Option<usize>,
}

impl Default for SwapOptions {
    fn default() -> Self {
        SwapOptions { precision_bits: 4, ae_bits: None, repetitions: AE_REPETITIONS, samples: None }
    }
}

/// Strike (A/n) sum_i E int sigma^2 ds over the span with sigma = B^H, on the
/// grid of `process`.
pub fn variance_swap_strike(
    swap: &SwapSpec,
    process: &ProcessSpec,
    epsilon: f64,
    method: Method,
    rng: &mut Rng,
) -> Result<EstimationResult> {
    variance_swap_strike_with(swap, process, epsilon, method, &SwapOptions::default(), rng)
}

pub fn variance_swap_strike_with(
    swap: &SwapSpec,
    process: &ProcessSpec,
    epsilon: f64,
    method: Method,
    opts: &SwapOptions,
    rng: &mut Rng,
) -> Result<EstimationResult> {
    swap.validate(process)?;
    if !(epsilon > 0.0) {
        return invalid("epsilon must be positive");
    }
    let (lo, hi) = swap.grid_indices(process.steps)?;
    let c = swap.prefactor() * PI / process.steps as f64;
    let tail = strike_tail(swap, process.hurst, process.terms);
    let mut r = match method {
        Method::ClassicalMC => swap_mc(swap, process, epsilon, (lo, hi), c, opts, rng)?,
        Method::DirectAmplitude | Method::PhaseEstimationAE => {
            // mass of the span times E|B|^2, the latter from the inverse norm flag
            let model = BranchModel::new(process, opts.precision_bits)?;
            let (b_floor, _) = model.norm_range()?;
            let cfg = OracleConfig {
                precision_bits: opts.precision_bits,
                norm_flag: Some(NormFlag::Inverse { b_floor }),
                norm_window: swap.norm_window,
            };
            let o = build_oracle(process, &Readout::Window { lo, hi }, &cfg)?;
            let flag = o.flag_target.clone().expect("flag present");
            let scale = c * b_floor * b_floor;
            if let Some(w) = &o.window_target {
                if w.probability(&o.state) < 1e-14 {
                    return Err(Error::InvalidInput("no branch norm falls in the postselection window".into()));
                }
            }
            if method == Method::DirectAmplitude {
                let v = scale * o.target_probability() / flag.probability(&o.state);
                EstimationResult {
                    estimate: v,
                    error_bound: 1e-12 * v.abs().max(1.0),
                    oracle_queries: 1,
                    shots: 1,
                    method,
                    standard_error: 0.0,
                    truncation_bound: 0.0,
                }
            } else {
                let (pt, pf) = (o.target_probability(), flag.probability(&o.state));
                let bits: Vec<u32> = match opts.ae_bits {
                    Some(m) => vec![m],
                    None => (4..=20).collect(),
                };
                let mut last = Err(Error::InvalidInput("no phase register width".into()));
                for &m in &bits {
                    let num = estimate_probability(pt, m, opts.repetitions, rng)?;
                    let den = estimate_probability(pf, m, opts.repetitions, rng)?;
                    last = ratio_result(&num, &den).map(|mut rr| {
                        rr.estimate *= scale;
                        rr.error_bound *= scale;
                        rr
                    });
                    if matches!(&last, Ok(rr) if rr.error_bound <= epsilon / 3.0) {
                        break;
                    }
                }
                last?
            }
        }
    };
    r.truncation_bound = tail;
    Ok(r)
}

fn swap_mc(
    swap: &SwapSpec,
    process: &ProcessSpec,
    epsilon: f64,
    (lo, hi): (usize, usize),
    c: f64,
    opts: &SwapOptions,
    rng: &mut Rng,
) -> Result<EstimationResult> {
    let seed: u64 = rng.random();
    let model = match swap.norm_window {
        Some(_) => Some(BranchModel::new(process, opts.precision_bits)?),
        None => None,
    };
    let plan = crate::spectral_bm::DstPlan::new(process.steps)?;
    // one draw: Some(value) if kept by the norm window
    let draw = |r: &mut Rng| -> Result<Option<f64>> {
        let x = match &model {
            None => crate::spectral_bm::trajectory_from_gaussians(
                process,
                &plan,
                &(0..process.terms).map(|_| r.sample(StandardNormal)).collect::<Vec<f64>>(),
            )
            .values,
            Some(m) => {
                let (cells, j) = m.sample_untilted(r);
                m.values(&cells, j)
            }
        };
        if let Some((a, b)) = swap.norm_window {
            let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n < a || n > b {
                return Ok(None);
            }
        }
        Ok(Some(c * x[lo - 1..hi].iter().map(|v| v * v).sum::<f64>()))
    };
    let run = |n: usize, seed: u64| -> Result<(f64, f64, usize, usize)> {
        const CHUNKS: usize = 64;
        let per = n.div_ceil(CHUNKS);
        let parts: Result<Vec<(f64, f64, usize, usize)>> = (0..CHUNKS)
            .into_par_iter()
            .map(|ch| {
                let want = per.min(n.saturating_sub(ch * per));
                let mut r = stream(seed, ch as u64);
                let (mut s, mut s2, mut got, mut tries) = (0.0, 0.0, 0, 0);
                while got < want {
                    tries += 1;
                    if tries > 1000 * want.max(1) {
                        return Err(Error::RetryCapExceeded(tries));
                    }
                    if let Some(v) = draw(&mut r)? {
                        s += v;
                        s2 += v * v;
                        got += 1;
                    }
                }
                Ok((s, s2, got, tries))
            })
            .collect();
        Ok(parts?.into_iter().fold((0.0, 0.0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2, a.3 + b.3)))
    };
    let n = match opts.samples {
        Some(n) => n,
        None => {
            // pilot for the spread, then (3 sigma / (eps/3))^2 samples
            let (s, s2, k, _) = run(1000, seed ^ 0x5eed)?;
            let m = s / k as f64;
            let var = (s2 / k as f64 - m * m).max(0.0);
            ((9.0 * var.sqrt() / epsilon).powi(2).ceil() as usize).clamp(1000, 10_000_000)
        }
    };
    if n < 2 {
        return invalid("need at least two samples");
    }
    let (s, s2, k, tries) = run(n, seed)?;
    let nf = k as f64;
    let mean = s / nf;
    let se = ((s2 / nf - mean * mean).max(0.0) / (nf - 1.0)).sqrt();
    Ok(EstimationResult {
        estimate: mean,
        error_bound: 3.0 * se,
        oracle_queries: 0,
        shots: tries as u64,
        method: Method::ClassicalMC,
        standard_error: se,
        truncation_bound: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn tamsd_of_simple_paths() {
        assert_eq!(tamsd(&[3.0; 10], 2).unwrap(), 0.0);
        let ramp: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!((tamsd(&ramp, 2).unwrap() - 4.0).abs() < 1e-12);
        assert!(tamsd(&ramp, 0).is_err());
        assert!(tamsd(&ramp, 10).is_err());
    }

    #[test]
    fn increment_covariance_structure() {
        let (tau, h) = (3usize, 0.7);
        let m = increment_covariance(20, tau, 2.0, h).unwrap();
        assert_eq!(m.nrows(), 17);
        for i in 0..17 {
            assert!((m[(i, i)] - 2.0 * (tau as f64).powf(2.0 * h)).abs() < 1e-12);
        }
        // Brownian increments over disjoint lags are uncorrelated
        let b = increment_covariance(20, tau, 1.0, 0.5).unwrap();
        assert!((b[(0, 1)] - 2.0).abs() < 1e-12);
        assert!(b[(0, tau)].abs() < 1e-12 && b[(0, 10)].abs() < 1e-12);
        assert!(symmetric_eigenvalues(m)[0] > -1e-10);
    }

    #[test]
    fn chisq_quantiles_single_and_scaled() {
        // central 0.5 quantiles of chi-square(1): median 0.4549
        let (lo, hi) = generalized_chisq_quantiles(&[1.0], 0.999, 200_000, &mut seeded(1)).unwrap();
        assert!((lo - 0.4549).abs() < 0.01 && (hi - 0.4549).abs() < 0.01);
        let (a, b) = generalized_chisq_quantiles(&[1.0; 4], 0.05, 10_000, &mut seeded(2)).unwrap();
        let (c, d) = generalized_chisq_quantiles(&[3.0; 4], 0.05, 10_000, &mut seeded(2)).unwrap();
        assert!((c - 3.0 * a).abs() < 1e-9 && (d - 3.0 * b).abs() < 1e-9);
        assert!(generalized_chisq_quantiles(&[1.0], 0.05, 999, &mut seeded(2)).is_err());
    }

    #[test]
    fn quantiles_stable_in_sample_count() {
        let eigs = symmetric_eigenvalues(increment_covariance(128, 4, 1.0, 0.5).unwrap());
        let (a, b) = generalized_chisq_quantiles(&eigs, 0.05, 10_000, &mut seeded(3)).unwrap();
        let (c, d) = generalized_chisq_quantiles(&eigs, 0.05, 100_000, &mut seeded(4)).unwrap();
        assert!((a / c - 1.0).abs() < 0.02 && (b / d - 1.0).abs() < 0.02);
    }

    #[test]
    fn davies_harte_increment_variance() {
        let h = 0.3;
        let n = 4000;
        let v: f64 = (0..n)
            .map(|i| {
                let x = fbm_davies_harte(64, h, 1.5, &mut stream(11, i)).unwrap();
                assert_eq!(x[0], 0.0);
                (x[40] - x[8]).powi(2)
            })
            .sum::<f64>()
            / n as f64;
        let want = 1.5 * 32f64.powf(2.0 * h);
        assert!((v / want - 1.0).abs() < 0.08, "{v} vs {want}");
    }

    #[test]
    fn eb_two_point_and_constant() {
        // M in {1, 3}: xi in {0.5, 1.5}, <xi^2> = 1.25
        let m: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 1.0 } else { 3.0 }).collect();
        assert!((eb_from_tamsd(&m, XiOrientation::Standard).unwrap() - 0.25).abs() < 1e-12);
        let ramp: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let ens = vec![ramp; 12];
        assert!(eb_parameter(&ens, 3).unwrap().abs() < 1e-12);
        assert!(eb_parameter(&ens[..5], 3).is_err());
    }

    #[test]
    fn strike_integral_full_span_and_pieces() {
        let s = SwapSpec::new(0.5);
        // integral of Var B over [0, pi] = sum 1/k^2 for H = 1/2
        let full = strike_integral(&s, 0.5, 2000) + strike_tail(&s, 0.5, 2000);
        assert!((full - PI * PI / 6.0).abs() < 1e-9);
        let left = SwapSpec { span: (0.0, 0.4), ..s };
        let right = SwapSpec { span: (0.4, 1.0), ..s };
        let sum = strike_integral(&left, 0.5, 50) + strike_integral(&right, 0.5, 50);
        assert!((sum - strike_integral(&s, 0.5, 50)).abs() < 1e-12);
        assert!(strike_integral(&left, 0.5, 50) > 0.0);
        assert!(strike_integral(&s, 0.5, 51) > strike_integral(&s, 0.5, 50));
    }

    #[test]
    fn swap_direct_matches_grid_value() {
        let p = ProcessSpec::new(0.5, 4, 16).unwrap();
        let s = SwapSpec { annualization: 2.0, intervals: 4, ..SwapSpec::new(0.5) };
        let exact = strike_grid_exact(&s, &p).unwrap();
        let r = variance_swap_strike(&s, &p, 0.01, Method::DirectAmplitude, &mut seeded(0)).unwrap();
        assert!((r.estimate - exact).abs() < 1e-10, "{} vs {exact}", r.estimate);
        let bad = SwapSpec::new(0.7);
        assert!(variance_swap_strike(&bad, &p, 0.01, Method::DirectAmplitude, &mut seeded(0)).is_err());
    }
}
