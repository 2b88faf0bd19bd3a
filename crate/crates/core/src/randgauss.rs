//! Gamma, beta and data-loader angle distributions.
//!
//! A Haar-random unit vector of length n is loaded by a tree whose node
//! angles are independent: at a node with n_L leaves on the left and n_R on
//! the right, sin^2(theta) ~ Beta(n_R/2, n_L/2).

use std::f64::consts::FRAC_PI_2;

use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta as BetaDist, ContinuousCDF};
use statrs::function::beta::ln_beta;

use crate::circuits::AngleTree;
use crate::error::{invalid, Error, Result};
use crate::rng::Rng;
use crate::stats::{distance_correlation_matrix, TestReport};

/// Gamma(shape a, scale 1).
pub fn sample_gamma(a: f64, rng: &mut Rng) -> Result<f64> {
    if !(a > 0.0) || !a.is_finite() {
        return invalid(format!("gamma shape must be positive, got {a}"));
    }
    Ok(Gamma::new(a, 1.0).expect("valid shape").sample(rng))
}

/// Beta(a, b) as Y1 / (Y1 + Y2) with independent gammas.
pub fn sample_beta(a: f64, b: f64, rng: &mut Rng) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return invalid(format!("beta parameters must be positive, got ({a}, {b})"));
    }
    let y1 = sample_gamma(a, rng)?;
    let y2 = sample_gamma(b, rng)?;
    Ok(y1 / (y1 + y2))
}

/// Law of the loader angle at a node with the given child leaf counts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleDistribution {
    pub left_leaves: usize,
    pub right_leaves: usize,
}

impl AngleDistribution {
    pub fn new(left_leaves: usize, right_leaves: usize) -> Result<Self> {
        if left_leaves == 0 || right_leaves == 0 {
            return invalid("angle distribution needs at least one leaf per side");
        }
        Ok(AngleDistribution { left_leaves, right_leaves })
    }

    /// Beta shape parameters (a, b) = (n_R/2, n_L/2) of sin^2(theta).
    pub fn beta_params(&self) -> (f64, f64) {
        (self.right_leaves as f64 / 2.0, self.left_leaves as f64 / 2.0)
    }

    /// 2/B(a,b) sin^{2a-1}(t) cos^{2b-1}(t) on [0, pi/2].
    pub fn density(&self, t: f64) -> Result<f64> {
        if !(0.0..=FRAC_PI_2 + 1e-15).contains(&t) {
            return invalid(format!("angle {t} outside [0, pi/2]"));
        }
        let (a, b) = self.beta_params();
        let (s, c) = t.sin_cos();
        let ln = (2.0f64).ln() - ln_beta(a, b);
        let p = |x: f64, e: f64| if e == 0.0 { 1.0 } else { x.abs().powf(e) };
        Ok(ln.exp() * p(s, 2.0 * a - 1.0) * p(c, 2.0 * b - 1.0))
    }

    /// P(theta <= t) = I_{sin^2 t}(a, b).
    pub fn cdf(&self, t: f64) -> f64 {
        let (a, b) = self.beta_params();
        let x = t.clamp(0.0, FRAC_PI_2).sin().powi(2);
        BetaDist::new(a, b).expect("positive").cdf(x)
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        let (a, b) = self.beta_params();
        sample_beta(a, b, rng).expect("positive").sqrt().asin()
    }

    /// Probability mass of 2^k equal cells of [0, pi/2].
    pub fn cell_probabilities(&self, k: u32) -> Vec<f64> {
        let m = 1usize << k;
        let w = FRAC_PI_2 / m as f64;
        (0..m).map(|c| self.cdf((c + 1) as f64 * w) - self.cdf(c as f64 * w)).collect()
    }
}

/// Density of [`AngleDistribution`] at t.
pub fn angle_density(dist: &AngleDistribution, t: f64) -> Result<f64> {
    dist.density(t)
}

/// Tree of independent angles loading a Haar-random unit vector.
///
/// Draw order: node angles in heap order, then one sign per leaf.
pub fn sample_angle_tree(leaf_count: usize, rng: &mut Rng) -> Result<AngleTree> {
    if leaf_count < 2 || !leaf_count.is_power_of_two() {
        return invalid("sample_angle_tree needs a power-of-two leaf count >= 2");
    }
    let mut angles = vec![0.0; leaf_count];
    for j in 1..leaf_count {
        let depth = usize::BITS - 1 - j.leading_zeros();
        let half = (leaf_count >> depth) / 2;
        angles[j] = AngleDistribution { left_leaves: half, right_leaves: half }.sample(rng);
    }
    let signs = (0..leaf_count).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    AngleTree::from_angles(angles, signs)
}

/// Radius sqrt(2 Gamma(n/2)) of an n-dimensional standard Gaussian vector.
pub fn sample_chi_radius(n: usize, rng: &mut Rng) -> f64 {
    (2.0 * sample_gamma(n as f64 / 2.0, rng).expect("n >= 1")).sqrt()
}

/// Pairwise dependence between node angles.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IndependenceReport {
    pub sample_size: usize,
    pub threshold: f64,
    /// (node a, node b, bias-corrected distance correlation).
    pub pairs: Vec<(usize, usize, f64)>,
    pub max_abs: f64,
    pub pass: bool,
}

/// Distance correlation between every pair of internal-node angles.
pub fn independence_check(samples: &[AngleTree]) -> Result<IndependenceReport> {
    if samples.len() < 10_000 {
        return Err(Error::InvalidInput(format!(
            "independence_check needs at least 10^4 trees, got {}",
            samples.len()
        )));
    }
    let n = samples[0].leaf_count;
    let cols: Vec<Vec<f64>> = (1..n).map(|j| samples.iter().map(|t| t.node_angles[j]).collect()).collect();
    let m = distance_correlation_matrix(&cols)?;
    let mut pairs = Vec::new();
    let mut max_abs: f64 = 0.0;
    for a in 0..cols.len() {
        for b in a + 1..cols.len() {
            pairs.push((a + 1, b + 1, m[a][b]));
            max_abs = max_abs.max(m[a][b].abs());
        }
    }
    Ok(IndependenceReport { sample_size: samples.len(), threshold: 0.02, pairs, max_abs, pass: max_abs < 0.02 })
}

/// KS test of sin^2 of sampled angles at node j against its Beta law.
pub fn node_beta_ks(samples: &[AngleTree], j: usize) -> TestReport {
    let t = &samples[0];
    let half = t.subtree_leaves(j) / 2;
    let (a, b) = AngleDistribution { left_leaves: half, right_leaves: half }.beta_params();
    let beta = BetaDist::new(a, b).expect("positive");
    let s: Vec<f64> = samples.iter().map(|t| t.node_angles[j].sin().powi(2)).collect();
    crate::stats::ks_one_sample(&s, |x| beta.cdf(x), &format!("node {j} sin^2 vs Beta({a},{b})"))
}
