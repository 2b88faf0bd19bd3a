//! Spectral Brownian bridges and fractional Brownian motion.
//!
//! A trajectory on the grid t_i = i*pi/T is the sine series
//! `B(t) = scale * sqrt(2/pi) * sum_{k<=L} a_k k^{-alpha} sin(k t)` with
//! `alpha = H + 1/2`. Three generators produce it:
//!
//! - [`classical_wiener_trajectory`]: iid Gaussian coefficients, FFT sine sum.
//! - [`simulate_trajectory_fast`]: the quantum pipeline evaluated inside the
//!   one-hot / value subspace.
//! - [`simulate_trajectory_dense`]: the full gate-level pipeline on a sparse
//!   statevector (K loader, R loader, unary-to-binary, XOR, measurement,
//!   increment, DST).
//!
//! The fast and dense paths consume randomness in the same order (tree angles
//! in heap order, leaf signs, radius, one uniform for the shift), so under a
//! shared seed they produce the same trajectory.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::circuits::{
    amplitude_prep_gates, compute_loader_angles, dst_gates, dst_matrix, increment_gates, loader_subspace_apply, unary_loader_gates,
    unary_to_binary_gates, AngleTree, Circuit, UnaryToBinaryLayout,
};
use crate::error::{invalid, Error, Result};
use crate::randgauss::{sample_angle_tree, sample_chi_radius, AngleDistribution};
use crate::rng::{stream, Rng};
use crate::statevector::{sample_index, GateOp, MuxBase, QuantumState, SparseState, DENSE_QUBIT_GUARD};
use crate::stats::linear_fit;

/// Largest grid handled by the fast path.
pub const MAX_FAST_STEPS: usize = 1 << 20;
/// Largest series / grid handled by the gate-level path.
pub const MAX_DENSE_TERMS: usize = 1 << 6;
pub const MAX_DENSE_STEPS: usize = 1 << 10;

/// Process parameters: Hurst exponent, series length L, grid size T.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub hurst: f64,
    pub terms: usize,
    pub steps: usize,
    /// Multiplies every trajectory value.
    pub scale: f64,
}

impl ProcessSpec {
    pub fn new(hurst: f64, terms: usize, steps: usize) -> Result<Self> {
        let s = ProcessSpec { hurst, terms, steps, scale: 1.0 };
        s.validate()?;
        Ok(s)
    }

    pub fn with_scale(mut self, scale: f64) -> Result<Self> {
        self.scale = scale;
        self.validate()?;
        Ok(self)
    }

    /// L and T powers of two with L < T, so frequency L is visible on the grid.
    pub fn validate(&self) -> Result<()> {
        check_hurst(self.hurst)?;
        if self.terms == 0 || !self.terms.is_power_of_two() {
            return invalid(format!("terms must be a power of two, got {}", self.terms));
        }
        if self.steps < 2 || !self.steps.is_power_of_two() {
            return invalid(format!("steps must be a power of two >= 2, got {}", self.steps));
        }
        if self.terms >= self.steps {
            return invalid(format!(
                "terms ({}) must be below steps ({}): frequency T vanishes on the grid",
                self.terms, self.steps
            ));
        }
        if self.steps > MAX_FAST_STEPS {
            return Err(Error::Resource(format!("steps {} exceeds 2^20", self.steps)));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return invalid("scale must be positive and finite");
        }
        Ok(())
    }

    /// alpha = H + 1/2.
    pub fn decay_exponent(&self) -> f64 {
        self.hurst + 0.5
    }

    pub fn log_terms(&self) -> usize {
        self.terms.trailing_zeros() as usize
    }

    pub fn log_steps(&self) -> usize {
        self.steps.trailing_zeros() as usize
    }

    /// t_i = i pi / T.
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * PI / self.steps as f64
    }

    /// k^{-alpha}, k = 1..=L.
    pub fn weights(&self) -> Vec<f64> {
        let a = self.decay_exponent();
        (1..=self.terms).map(|k| (k as f64).powf(-a)).collect()
    }

    /// Factor in front of every coefficient: scale * sqrt(2/pi).
    pub fn coefficient_scale(&self) -> f64 {
        self.scale * (2.0 / PI).sqrt()
    }

    /// Cov(B(s), B(t)) of the truncated series.
    pub fn covariance(&self, s: f64, t: f64) -> f64 {
        let c2 = self.coefficient_scale().powi(2);
        let two_a = 2.0 * self.decay_exponent();
        c2 * (1..=self.terms)
            .map(|k| {
                let k = k as f64;
                (k * s).sin() * (k * t).sin() / k.powf(two_a)
            })
            .sum::<f64>()
    }

    /// E ||values||^2 on the grid: (T/2) c^2 sum k^{-2 alpha}.
    pub fn expected_sq_norm(&self) -> f64 {
        let w2: f64 = self.weights().iter().map(|w| w * w).sum();
        self.steps as f64 / 2.0 * self.coefficient_scale().powi(2) * w2
    }
}

fn check_hurst(h: f64) -> Result<()> {
    if h == 0.0 {
        return Err(Error::Divergent("H = 0: the coefficient series sum 1/k diverges".into()));
    }
    if !(h > 0.0 && h <= 1.0) {
        return invalid(format!("Hurst exponent must lie in (0, 1], got {h}"));
    }
    Ok(())
}

/// min(s,t) - st/pi, the Brownian bridge covariance on [0, pi].
pub fn bridge_covariance(s: f64, t: f64) -> f64 {
    s.min(t) - s * t / PI
}

/// Smallest L with truncation error at most epsilon: ceil(eps^{-1/(2H)}).
pub fn terms_for_accuracy(epsilon: f64, hurst: f64) -> Result<usize> {
    check_hurst(hurst)?;
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return invalid(format!("epsilon must lie in (0, 1], got {epsilon}"));
    }
    let x = epsilon.powf(-1.0 / (2.0 * hurst));
    // guard against 100.00000000001 -> 101
    Ok(((x * (1.0 - 1e-12)).ceil() as usize).max(1))
}

/// [`terms_for_accuracy`] rounded up to a power of two for circuit use.
pub fn terms_for_circuit(epsilon: f64, hurst: f64) -> Result<usize> {
    Ok(terms_for_accuracy(epsilon, hurst)?.next_power_of_two().max(2))
}

// ---------------------------------------------------------------- trajectories

/// Values at t_1..t_{T-1}; B(0) = B(pi) = 0 are implicit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub values: Vec<f64>,
    pub norm: f64,
    /// a_k k^{-alpha}, k = 1..=L (before the sqrt(2/pi) and scale factors).
    pub fourier_coeffs: Vec<f64>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.values.len() + 1
    }

    /// values / norm.
    pub fn analog_encoding(&self) -> Vec<f64> {
        self.values.iter().map(|v| v / self.norm).collect()
    }

    /// B(t_0), ..., B(t_T) including both pinned endpoints.
    pub fn with_endpoints(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.values.len() + 2);
        v.push(0.0);
        v.extend_from_slice(&self.values);
        v.push(0.0);
        v
    }

    /// B(t_i) for i in 0..=T.
    pub fn value_at(&self, i: usize) -> f64 {
        if i == 0 || i > self.values.len() {
            0.0
        } else {
            self.values[i - 1]
        }
    }
}

/// FFT-backed sine transforms on a grid of T steps.
#[derive(Clone)]
pub struct DstPlan {
    steps: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for DstPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DstPlan").field("steps", &self.steps).finish()
    }
}

impl DstPlan {
    pub fn new(steps: usize) -> Result<Self> {
        if steps < 2 || !steps.is_power_of_two() {
            return invalid(format!("DST grid must be a power of two >= 2, got {steps}"));
        }
        let fft = FftPlanner::new().plan_fft_forward(2 * steps);
        Ok(DstPlan { steps, fft })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// s_i = sum_k c_k sin(pi i k / T) for i = 1..T-1, with c_k = coeffs[k-1].
    pub fn sine_series(&self, coeffs: &[f64]) -> Vec<f64> {
        let t = self.steps;
        assert!(coeffs.len() < t, "at most T-1 frequencies");
        // odd extension: FFT gives -2i times the sine sum
        let mut z = vec![C64::new(0.0, 0.0); 2 * t];
        for (k, &c) in coeffs.iter().enumerate() {
            z[k + 1].re = c;
            z[2 * t - k - 1].re = -c;
        }
        self.fft.process(&mut z);
        z[1..t].iter().map(|y| -y.im / 2.0).collect()
    }

    /// Orthonormal DST-I of x_1..x_{T-1}.
    pub fn orthonormal(&self, x: &[f64]) -> Vec<f64> {
        let s = (2.0 / self.steps as f64).sqrt();
        self.sine_series(x).into_iter().map(|v| v * s).collect()
    }
}

/// Trajectory for given standard-normal coefficients a_1..a_L.
pub fn trajectory_from_gaussians(spec: &ProcessSpec, plan: &DstPlan, a: &[f64]) -> Trajectory {
    let w = spec.weights();
    let fourier: Vec<f64> = a.iter().zip(&w).map(|(a, w)| a * w).collect();
    let c = spec.coefficient_scale();
    let scaled: Vec<f64> = fourier.iter().map(|f| f * c).collect();
    let values = plan.sine_series(&scaled);
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    Trajectory { values, norm, fourier_coeffs: fourier }
}

/// Classical oracle: iid N(0,1) coefficients.
pub fn classical_wiener_trajectory(spec: &ProcessSpec, rng: &mut Rng) -> Result<Trajectory> {
    spec.validate()?;
    let plan = DstPlan::new(spec.steps)?;
    let a: Vec<f64> = (0..spec.terms).map(|_| rng.sample(StandardNormal)).collect();
    Ok(trajectory_from_gaussians(spec, &plan, &a))
}

// ------------------------------------------------------------ quantum paths

/// How the shift j that XORs the Gaussian register is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShiftSampling {
    /// Measure the shift register (the algorithm as written). P(j) depends on
    /// the Gaussian draw, which tilts the per-run coefficient law.
    Born,
    /// j uniform and independent of the draw (postselection in the circuit).
    Independent,
    /// Postselect a fixed j.
    Forced(usize),
}

/// Radius applied to the loaded unit vector in the classical shadow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RadiusMode {
    /// sqrt(2 Gamma(L/2)): makes the coefficients iid N(0,1).
    Sampled,
    /// sqrt(L) for every run.
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimOptions {
    pub shift: ShiftSampling,
    pub radius: RadiusMode,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { shift: ShiftSampling::Born, radius: RadiusMode::Sampled }
    }
}

/// In-place Walsh-Hadamard transform (unnormalized).
fn fwht(v: &mut [f64]) {
    let n = v.len();
    let mut h = 1;
    while h < n {
        for i in (0..n).step_by(2 * h) {
            for j in i..i + h {
                let (x, y) = (v[j], v[j + h]);
                v[j] = x + y;
                v[j + h] = x - y;
            }
        }
        h *= 2;
    }
}

/// P(j) = sum_m w_m^2 u_{m xor j}^2 / sum_m w_m^2 for a unit vector u.
pub fn shift_probabilities(weights: &[f64], u: &[f64]) -> Vec<f64> {
    let n = weights.len();
    let mut a: Vec<f64> = weights.iter().map(|w| w * w).collect();
    let wsum: f64 = a.iter().sum();
    let mut b: Vec<f64> = u.iter().map(|x| x * x).collect();
    fwht(&mut a);
    fwht(&mut b);
    let mut p: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
    fwht(&mut p);
    p.iter_mut().for_each(|x| *x = (*x / (n as f64 * wsum)).max(0.0));
    p
}

/// E[a'_k^2] under Born shift sampling with a sampled radius:
/// (L/(L+2)) (1 + 2 w_k / W), w_k = k^{-2 alpha}, W = sum w.
pub fn born_second_moments(spec: &ProcessSpec) -> Vec<f64> {
    let l = spec.terms as f64;
    let w: Vec<f64> = spec.weights().iter().map(|x| x * x).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|wk| l / (l + 2.0) * (1.0 + 2.0 * wk / total)).collect()
}

/// Cov(B(s), B(t)) of Born-mode trajectories.
pub fn born_covariance(spec: &ProcessSpec, s: f64, t: f64) -> f64 {
    let c2 = spec.coefficient_scale().powi(2);
    let m = born_second_moments(spec);
    let two_a = 2.0 * spec.decay_exponent();
    c2 * m
        .iter()
        .enumerate()
        .map(|(i, mk)| {
            let k = (i + 1) as f64;
            mk * (k * s).sin() * (k * t).sin() / k.powf(two_a)
        })
        .sum::<f64>()
}

struct Draw {
    tree: AngleTree,
    unit: Vec<f64>,
    radius: f64,
}

fn draw_loader(spec: &ProcessSpec, radius: RadiusMode, rng: &mut Rng) -> Result<Draw> {
    let tree = sample_angle_tree(spec.terms, rng)?;
    let unit = loader_subspace_apply(&tree);
    let radius = match radius {
        RadiusMode::Sampled => sample_chi_radius(spec.terms, rng),
        RadiusMode::Fixed => (spec.terms as f64).sqrt(),
    };
    Ok(Draw { tree, unit, radius })
}

fn check_quantum(spec: &ProcessSpec, options: &SimOptions) -> Result<()> {
    spec.validate()?;
    if spec.terms < 2 {
        return invalid("quantum paths need at least two terms");
    }
    if let ShiftSampling::Forced(j) = options.shift {
        if j >= spec.terms {
            return invalid(format!("forced shift {j} out of range"));
        }
    }
    Ok(())
}

fn shifted_gaussians(d: &Draw, j: usize) -> Vec<f64> {
    (0..d.unit.len()).map(|m| d.radius * d.unit[m ^ j]).collect()
}

/// One fast-path run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FastRun {
    pub trajectory: Trajectory,
    pub shift: usize,
    /// Probability of the chosen shift under the Born rule.
    pub shift_probability: f64,
}

/// Reusable fast-path generator (holds the FFT plan).
#[derive(Clone, Debug)]
pub struct TrajectorySampler {
    pub spec: ProcessSpec,
    pub options: SimOptions,
    plan: DstPlan,
    weights: Vec<f64>,
}

impl TrajectorySampler {
    pub fn new(spec: ProcessSpec, options: SimOptions) -> Result<Self> {
        check_quantum(&spec, &options)?;
        Ok(TrajectorySampler { spec, options, plan: DstPlan::new(spec.steps)?, weights: spec.weights() })
    }

    pub fn plan(&self) -> &DstPlan {
        &self.plan
    }

    pub fn run(&self, rng: &mut Rng) -> Result<FastRun> {
        let d = draw_loader(&self.spec, self.options.radius, rng)?;
        let probs = shift_probabilities(&self.weights, &d.unit);
        let j = match self.options.shift {
            ShiftSampling::Born => sample_index(&probs, rng),
            ShiftSampling::Independent => sample_index(&vec![1.0; self.spec.terms], rng),
            ShiftSampling::Forced(j) => j,
        };
        let a = shifted_gaussians(&d, j);
        Ok(FastRun {
            trajectory: trajectory_from_gaussians(&self.spec, &self.plan, &a),
            shift: j,
            shift_probability: probs[j],
        })
    }

    pub fn sample(&self, rng: &mut Rng) -> Result<Trajectory> {
        Ok(self.run(rng)?.trajectory)
    }

    /// `count` runs on streams (seed, 0..count), in parallel.
    pub fn sample_batch(&self, seed: u64, count: usize) -> Result<Vec<FastRun>> {
        (0..count).into_par_iter().map(|i| self.run(&mut stream(seed, i as u64))).collect()
    }
}

/// Fast subspace evaluation of the pipeline with default options.
pub fn simulate_trajectory_fast(spec: &ProcessSpec, rng: &mut Rng) -> Result<Trajectory> {
    TrajectorySampler::new(*spec, SimOptions::default())?.sample(rng)
}

/// Qubit roles of the gate-level pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineLayout {
    pub unary: Vec<usize>,
    pub fanout: Vec<usize>,
    /// log T qubits; the low log L hold the binary K index.
    pub value: Vec<usize>,
    pub dst_ancilla: usize,
    /// Binary Gaussian-register index, then the shift after the XOR.
    pub shift: Vec<usize>,
    pub num_qubits: usize,
}

impl PipelineLayout {
    pub fn new(terms: usize, steps: usize) -> Self {
        let k = terms.trailing_zeros() as usize;
        let t = steps.trailing_zeros() as usize;
        let mut next = 0;
        let mut take = |n: usize| {
            let r: Vec<usize> = (next..next + n).collect();
            next += n;
            r
        };
        let unary = take(terms);
        let fanout = take((terms / 2).saturating_sub(1));
        let value = take(t);
        let dst_ancilla = take(1)[0];
        let shift = take(k);
        PipelineLayout { unary, fanout, value, dst_ancilla, shift, num_qubits: next }
    }

    fn k_converter(&self) -> UnaryToBinaryLayout {
        UnaryToBinaryLayout {
            unary: self.unary.clone(),
            binary: self.value[..self.shift.len()].to_vec(),
            fanout: self.fanout.clone(),
        }
    }

    fn r_converter(&self) -> UnaryToBinaryLayout {
        UnaryToBinaryLayout { unary: self.unary.clone(), binary: self.shift.clone(), fanout: self.fanout.clone() }
    }
}

/// Gates up to (not including) the shift measurement.
pub fn pipeline_prefix_gates(spec: &ProcessSpec, layout: &PipelineLayout, tree: &AngleTree) -> Result<Vec<GateOp>> {
    let ktree = compute_loader_angles(&spec.weights())?;
    let mut g = unary_loader_gates(&ktree, &layout.unary);
    g.extend(unary_to_binary_gates(&layout.k_converter()));
    g.extend(unary_loader_gates(tree, &layout.unary));
    g.extend(unary_to_binary_gates(&layout.r_converter()));
    for (b, &q) in layout.shift.iter().enumerate() {
        g.push(GateOp::cnot(layout.value[b], q));
    }
    Ok(g)
}

/// Gates after the measurement: index m -> frequency m+1, then the DST.
pub fn pipeline_suffix_gates(layout: &PipelineLayout) -> Vec<GateOp> {
    let mut g = increment_gates(&layout.value, &[]);
    g.extend(dst_gates(&layout.value, layout.dst_ancilla));
    g
}

/// Gate-level run: final value-register state and its classical shadow.
#[derive(Clone, Debug)]
pub struct DenseRun {
    pub trajectory: Trajectory,
    /// log T qubits; amplitude i is the analog encoding at t_i.
    pub state: QuantumState,
    pub shift: usize,
    pub shift_probability: f64,
    pub layout: PipelineLayout,
    pub gate_count: usize,
}

/// Full circuit pipeline on a sparse statevector (L <= 64, T <= 1024).
pub fn simulate_trajectory_dense(spec: &ProcessSpec, options: SimOptions, rng: &mut Rng) -> Result<DenseRun> {
    check_quantum(spec, &options)?;
    if spec.terms > MAX_DENSE_TERMS || spec.steps > MAX_DENSE_STEPS {
        return Err(Error::Resource(format!(
            "gate-level path limited to L <= {MAX_DENSE_TERMS}, T <= {MAX_DENSE_STEPS}"
        )));
    }
    let d = draw_loader(spec, options.radius, rng)?;
    let layout = PipelineLayout::new(spec.terms, spec.steps);
    let mut state = SparseState::new_basis_state(layout.num_qubits, 0)?;
    let prefix = pipeline_prefix_gates(spec, &layout, &d.tree)?;
    for g in &prefix {
        state.apply_mut(g)?;
    }
    let probs = state.probabilities(&layout.shift)?;
    let j = match options.shift {
        ShiftSampling::Born => sample_index(&probs, rng),
        ShiftSampling::Independent => sample_index(&vec![1.0; spec.terms], rng),
        ShiftSampling::Forced(j) => j,
    };
    let (mut state, p) = state.postselect_subset(&layout.shift, j as u64)?;
    // reset the shift register classically
    for (b, &q) in layout.shift.iter().enumerate() {
        if (j >> b) & 1 == 1 {
            state.apply_mut(&GateOp::x(q))?;
        }
    }
    let suffix = pipeline_suffix_gates(&layout);
    for g in &suffix {
        state.apply_mut(g)?;
    }
    let amps = state.register_amplitudes(&layout.value)?;
    let state = QuantumState::from_amplitudes(amps)
        .map_err(|e| Error::Verification(format!("pipeline left ancillas entangled: {e}")))?;
    let plan = DstPlan::new(spec.steps)?;
    let trajectory = trajectory_from_gaussians(spec, &plan, &shifted_gaussians(&d, j));
    Ok(DenseRun {
        trajectory,
        state,
        shift: j,
        shift_probability: p,
        layout,
        gate_count: prefix.len() + suffix.len() + j.count_ones() as usize,
    })
}

// --------------------------------------------------------- coherent encoding

/// Discretized loader angles: per internal node, cell probabilities and the
/// loader angle applied for each cell.
///
/// Nodes above the last level carry the magnitude on 2^K cells of [0, pi/2].
/// Nodes whose children are leaves carry the signed angle (sign folding
/// included) on 2^K uniform cells of [0, 2 pi), where it is uniform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleGrid {
    pub precision_bits: u32,
    pub leaf_count: usize,
    /// Index j-1 for node j.
    pub probabilities: Vec<Vec<f64>>,
    pub angles: Vec<Vec<f64>>,
}

impl AngleGrid {
    pub fn new(leaf_count: usize, precision_bits: u32) -> Result<Self> {
        if leaf_count < 2 || !leaf_count.is_power_of_two() {
            return invalid("angle grid needs a power-of-two leaf count >= 2");
        }
        if precision_bits == 0 || precision_bits > 12 {
            return invalid("precision bits must lie in 1..=12");
        }
        let m = 1usize << precision_bits;
        let mut probabilities = Vec::new();
        let mut angles = Vec::new();
        for j in 1..leaf_count {
            if 2 * j >= leaf_count {
                let w = 2.0 * PI / m as f64;
                probabilities.push(vec![1.0 / m as f64; m]);
                angles.push((0..m).map(|c| (c as f64 + 0.5) * w).collect());
            } else {
                let depth = usize::BITS - 1 - j.leading_zeros();
                let half = (leaf_count >> depth) / 2;
                let d = AngleDistribution::new(half, half)?;
                let w = PI / 2.0 / m as f64;
                probabilities.push(d.cell_probabilities(precision_bits));
                angles.push((0..m).map(|c| (c as f64 + 0.5) * w).collect());
            }
        }
        Ok(AngleGrid { precision_bits, leaf_count, probabilities, angles })
    }

    pub fn node_count(&self) -> usize {
        self.leaf_count - 1
    }

    /// Loaded unit vector for cell indices (one per node, j = 1..L-1).
    pub fn branch_vector(&self, cells: &[usize]) -> Vec<f64> {
        let angles: Vec<f64> = cells.iter().enumerate().map(|(i, &c)| self.angles[i][c]).collect();
        cascade(self.leaf_count, &angles)
    }

    /// Probability of a cell tuple.
    pub fn branch_probability(&self, cells: &[usize]) -> f64 {
        cells.iter().enumerate().map(|(i, &c)| self.probabilities[i][c]).product()
    }
}

/// RBS cascade in the one-hot subspace with explicit per-node angles.
fn cascade(n: usize, loader_angles: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[0] = 1.0;
    for j in 1..n {
        let depth = usize::BITS - 1 - j.leading_zeros();
        let len = n >> depth;
        let a = (j - (1usize << depth)) * len;
        let b = a + len / 2;
        let (s, c) = loader_angles[j - 1].sin_cos();
        let (va, vb) = (v[a], v[b]);
        v[a] = c * va - s * vb;
        v[b] = s * va + c * vb;
    }
    v
}

/// Amplitude-encoding gates for a distribution on a register (bit b of the
/// index on `reg[b]`), built as a tree of multiplexed Ry rotations.
pub fn distribution_prep_gates(reg: &[usize], probs: &[f64]) -> Vec<GateOp> {
    let amps: Vec<f64> = probs.iter().map(|p| p.max(0.0).sqrt()).collect();
    amplitude_prep_gates(reg, &amps)
}

/// Qubit roles of the coherent encoding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherentLayout {
    /// Register for node j at index j-1; bit b of the cell on entry b.
    pub angle_registers: Vec<Vec<usize>>,
    pub pipeline: PipelineLayout,
    pub num_qubits: usize,
}

impl CoherentLayout {
    pub fn new(spec: &ProcessSpec, precision_bits: u32) -> Self {
        let k = precision_bits as usize;
        let nodes = spec.terms - 1;
        let angle_registers: Vec<Vec<usize>> = (0..nodes).map(|i| (i * k..(i + 1) * k).collect()).collect();
        let off = nodes * k;
        let mut p = PipelineLayout::new(spec.terms, spec.steps);
        let shift = |v: &mut Vec<usize>| v.iter_mut().for_each(|q| *q += off);
        shift(&mut p.unary);
        shift(&mut p.fanout);
        shift(&mut p.value);
        shift(&mut p.shift);
        p.dst_ancilla += off;
        p.num_qubits += off;
        CoherentLayout { angle_registers, num_qubits: p.num_qubits, pipeline: p }
    }

    /// All garbage qubits: angle registers then the shift register.
    pub fn garbage(&self) -> Vec<usize> {
        let mut g: Vec<usize> = self.angle_registers.iter().flatten().copied().collect();
        g.extend(&self.pipeline.shift);
        g
    }
}

/// Superposition over discretized loader angles with the pipeline kept
/// coherent (no measurement; the shift register stays as garbage).
#[derive(Clone, Debug)]
pub struct CoherentEncoding {
    pub spec: ProcessSpec,
    pub precision_bits: u32,
    pub layout: CoherentLayout,
    pub grid: AngleGrid,
    pub circuit: Circuit,
    pub state: QuantumState,
}

/// Circuit of the coherent encoding on `extra` additional (unused) qubits.
pub fn coherent_encoding_circuit(
    spec: &ProcessSpec,
    precision_bits: u32,
    extra: usize,
) -> Result<(Circuit, CoherentLayout, AngleGrid)> {
    spec.validate()?;
    if spec.terms < 2 {
        return invalid("coherent encoding needs at least two terms");
    }
    let layout = CoherentLayout::new(spec, precision_bits);
    if layout.num_qubits > 24 || layout.num_qubits + extra > DENSE_QUBIT_GUARD {
        return Err(Error::Resource(format!(
            "coherent encoding needs {} qubits, above the dense limit of 24",
            layout.num_qubits
        )));
    }
    let grid = AngleGrid::new(spec.terms, precision_bits)?;
    let p = &layout.pipeline;
    let mut c = Circuit::new(layout.num_qubits + extra);
    for (i, reg) in layout.angle_registers.iter().enumerate() {
        c.extend(distribution_prep_gates(reg, &grid.probabilities[i]));
    }
    let ktree = compute_loader_angles(&spec.weights())?;
    c.extend(unary_loader_gates(&ktree, &p.unary));
    c.extend(unary_to_binary_gates(&p.k_converter()));
    c.push(GateOp::x(p.unary[0]));
    for j in 1..spec.terms {
        let depth = usize::BITS - 1 - j.leading_zeros();
        let len = spec.terms >> depth;
        let a = (j - (1usize << depth)) * len;
        c.push(GateOp::mux(
            MuxBase::Rbs,
            vec![p.unary[a], p.unary[a + len / 2]],
            layout.angle_registers[j - 1].clone(),
            grid.angles[j - 1].clone(),
        ));
    }
    c.extend(unary_to_binary_gates(&p.r_converter()));
    for (b, &q) in p.shift.iter().enumerate() {
        c.push(GateOp::cnot(p.value[b], q));
    }
    c.extend(pipeline_suffix_gates(p));
    Ok((c, layout, grid))
}

/// Builds and runs the coherent encoding ((L-1)K + pipeline qubits <= 24).
pub fn coherent_encoding_build(spec: &ProcessSpec, precision_bits: u32) -> Result<CoherentEncoding> {
    let (circuit, layout, grid) = coherent_encoding_circuit(spec, precision_bits, 0)?;
    let mut state = QuantumState::new_basis_state(circuit.num_qubits, 0)?;
    circuit.apply_mut(&mut state)?;
    Ok(CoherentEncoding { spec: *spec, precision_bits, layout, grid, circuit, state })
}

impl CoherentEncoding {
    /// Reduced density matrix of the value register (T x T).
    pub fn value_density(&self) -> Result<DMatrix<C64>> {
        self.state.reduced_density(&self.layout.pipeline.value)
    }

    /// Normalized value-register vector of branch (cells, j), and the
    /// branch weight |amplitude|^2 in the coherent state.
    pub fn branch(&self, cells: &[usize], j: usize) -> (Vec<f64>, f64) {
        let u = self.grid.branch_vector(cells);
        let w = self.spec.weights();
        let w2: f64 = w.iter().map(|x| x * x).sum();
        let mut coeffs: Vec<f64> = (0..u.len()).map(|m| w[m] * u[m ^ j]).collect();
        let n2: f64 = coeffs.iter().map(|x| x * x).sum();
        let weight = self.grid.branch_probability(cells) * n2 / w2;
        if n2 > 0.0 {
            coeffs.iter_mut().for_each(|x| *x /= n2.sqrt());
        }
        let d = dst_matrix(self.spec.steps);
        let mut x = vec![0.0; self.spec.steps];
        x[1..=coeffs.len()].copy_from_slice(&coeffs);
        let v = (&d * nalgebra::DVector::from_vec(x)).data.as_vec().clone();
        (v, weight)
    }
}

/// Density matrix (T x T) of the value register for pure state vectors.
fn outer(v: &[f64]) -> DMatrix<f64> {
    let n = v.len();
    DMatrix::from_fn(n, n, |i, j| v[i] * v[j])
}

/// Monte Carlo mixture of per-run analog encodings under the given shift mode
/// (the oracle for the coherent encoding; Born matches the coherent state).
pub fn mixture_oracle_density(spec: &ProcessSpec, shift: ShiftSampling, samples: usize, seed: u64) -> Result<DMatrix<C64>> {
    let opts = SimOptions { shift, radius: RadiusMode::Fixed };
    let sampler = TrajectorySampler::new(*spec, opts)?;
    let t = spec.steps;
    let chunks = 64usize;
    let per = samples.div_ceil(chunks);
    let parts: Result<Vec<DMatrix<f64>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = DMatrix::<f64>::zeros(t, t);
            for i in c * per..((c + 1) * per).min(samples) {
                let tr = sampler.sample(&mut stream(seed, i as u64))?;
                let mut v = vec![0.0; t];
                v[1..].copy_from_slice(&tr.analog_encoding());
                acc += outer(&v);
            }
            Ok(acc)
        })
        .collect();
    let sum = parts?.into_iter().fold(DMatrix::<f64>::zeros(t, t), |a, b| a + b);
    Ok((sum / samples as f64).map(|x| C64::new(x, 0.0)))
}

/// Exact Born mixture: the normalized covariance Cov / tr Cov on the grid.
pub fn exact_mixture_density(spec: &ProcessSpec) -> DMatrix<C64> {
    let t = spec.steps;
    let w = spec.weights();
    let total: f64 = w.iter().map(|x| x * x).sum();
    let d = dst_matrix(t);
    let mut diag = DMatrix::<f64>::zeros(t, t);
    for (m, wm) in w.iter().enumerate() {
        diag[(m + 1, m + 1)] = wm * wm / total;
    }
    (&d * diag * &d).map(|x| C64::new(x, 0.0))
}

// ------------------------------------------------------------- truncation

/// sum_{k > n} k^{-s} for s > 1 (direct sum, then Euler-Maclaurin).
pub fn zeta_tail(s: f64, n: usize) -> f64 {
    assert!(s > 1.0);
    let cut = n.max(2000);
    let direct: f64 = (n + 1..=cut).map(|k| (k as f64).powf(-s)).sum();
    let m = cut as f64;
    let em = m.powf(1.0 - s) / (s - 1.0) - 0.5 * m.powf(-s) + s * m.powf(-s - 1.0) / 12.0
        - s * (s + 1.0) * (s + 2.0) * m.powf(-s - 3.0) / 720.0;
    direct + em
}

/// Expected L2[0,pi] truncation error E||B - B_L||^2 = sum_{k>L} k^{-(1+2H)}.
pub fn analytic_truncation_error(hurst: f64, terms: usize) -> f64 {
    zeta_tail(1.0 + 2.0 * hurst, terms)
}

/// Truncation error as a fraction of the total variance E||B||^2.
pub fn relative_residual(hurst: f64, terms: usize) -> f64 {
    analytic_truncation_error(hurst, terms) / zeta_tail(1.0 + 2.0 * hurst, 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationRow {
    pub terms: usize,
    /// sum_{k>L} k^{-(1+2H)}.
    pub analytic: f64,
    /// sum_{L<k<=L_ref} k^{-(1+2H)}, the expectation of `empirical`.
    pub analytic_paired: f64,
    pub empirical: f64,
    pub standard_error: f64,
    pub relative_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub hurst: f64,
    pub reference_terms: usize,
    pub paths: usize,
    pub rows: Vec<TruncationRow>,
    /// Least-squares slope of log(empirical) on log(L).
    pub slope: f64,
}

/// Paired-path truncation study: each path draws L_ref coefficients; the
/// error of its L-term truncation is, by Parseval, sum_{L<k<=L_ref} a_k^2 k^{-2 alpha}.
pub fn truncation_error_report(
    hurst: f64,
    terms: &[usize],
    paths: usize,
    reference_terms: usize,
    seed: u64,
) -> Result<TruncationReport> {
    check_hurst(hurst)?;
    if terms.is_empty() || terms.iter().any(|&l| l < 2 || l >= reference_terms) {
        return invalid("truncation levels must satisfy 2 <= L < reference_terms");
    }
    if paths < 2 {
        return invalid("need at least two paths");
    }
    let mut sorted = terms.to_vec();
    sorted.sort_unstable();
    let two_a = 1.0 + 2.0 * hurst;
    let per_path: Vec<Vec<f64>> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = stream(seed, p as u64);
            let mut tail = vec![0.0; sorted.len()];
            let mut prefix = 0.0;
            let mut next = 0;
            let mut marks = vec![0.0; sorted.len()];
            for k in 1..=reference_terms {
                let a: f64 = rng.sample(StandardNormal);
                prefix += a * a * (k as f64).powf(-two_a);
                while next < sorted.len() && sorted[next] == k {
                    marks[next] = prefix;
                    next += 1;
                }
            }
            for i in 0..sorted.len() {
                tail[i] = prefix - marks[i];
            }
            tail
        })
        .collect();
    let mut rows = Vec::new();
    for (i, &l) in sorted.iter().enumerate() {
        let xs: Vec<f64> = per_path.iter().map(|v| v[i]).collect();
        let (m, se) = crate::stats::mean_se(&xs);
        rows.push(TruncationRow {
            terms: l,
            analytic: analytic_truncation_error(hurst, l),
            analytic_paired: zeta_tail(two_a, l) - zeta_tail(two_a, reference_terms),
            empirical: m,
            standard_error: se,
            relative_residual: relative_residual(hurst, l),
        });
    }
    let lx: Vec<f64> = rows.iter().map(|r| (r.terms as f64).ln()).collect();
    let ly: Vec<f64> = rows.iter().map(|r| r.empirical.ln()).collect();
    let (slope, _) = linear_fit(&lx, &ly);
    Ok(TruncationReport { hurst, reference_terms, paths, rows, slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::statevector::trace_distance;

    #[test]
    fn table_cells() {
        let cells = [
            (1e-2, 0.5, 100),
            (1e-2, 0.65, 35),
            (1e-2, 0.8, 18),
            (1e-3, 0.5, 1000),
            (1e-3, 0.65, 204),
            (1e-3, 0.8, 75),
            (1e-4, 0.5, 10000),
            (1e-4, 0.65, 1194),
            (1e-4, 0.8, 317),
        ];
        for (e, h, l) in cells {
            assert_eq!(terms_for_accuracy(e, h).unwrap(), l, "({e},{h})");
        }
        assert_eq!(terms_for_accuracy(1.0, 0.3).unwrap(), 1);
        assert!(matches!(terms_for_accuracy(0.1, 0.0), Err(Error::Divergent(_))));
        assert_eq!(terms_for_circuit(1e-2, 0.5).unwrap(), 128);
    }

    #[test]
    fn spec_validation() {
        assert!(ProcessSpec::new(0.5, 8, 8).is_err());
        assert!(ProcessSpec::new(0.5, 6, 16).is_err());
        assert!(matches!(ProcessSpec::new(0.0, 8, 16), Err(Error::Divergent(_))));
        assert!(ProcessSpec::new(1.2, 8, 16).is_err());
        let s = ProcessSpec::new(0.5, 8, 16).unwrap();
        assert_eq!(s.decay_exponent(), 1.0);
    }

    #[test]
    fn sine_series_matches_direct_sum() {
        let plan = DstPlan::new(32).unwrap();
        let c = [0.3, -1.0, 0.25, 2.0, 0.0, 0.7];
        let s = plan.sine_series(&c);
        for i in 1..32 {
            let d: f64 = c.iter().enumerate().map(|(k, ck)| ck * (PI * (i * (k + 1)) as f64 / 32.0).sin()).sum();
            assert!((s[i - 1] - d).abs() < 1e-12);
        }
        // orthonormal transform is an involution
        let x: Vec<f64> = (1..32).map(|i| (i as f64 * 0.37).cos()).collect();
        let y = plan.orthonormal(&plan.orthonormal(&x));
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn trajectory_matches_dst_matrix() {
        let spec = ProcessSpec::new(0.7, 8, 32).unwrap();
        let t = classical_wiener_trajectory(&spec, &mut seeded(5)).unwrap();
        let d = dst_matrix(32);
        let mut x = vec![0.0; 32];
        for (k, f) in t.fourier_coeffs.iter().enumerate() {
            x[k + 1] = f * spec.coefficient_scale();
        }
        let y = &d * nalgebra::DVector::from_vec(x);
        for i in 1..32 {
            assert!((t.values[i - 1] - (16.0f64).sqrt() * y[i]).abs() < 1e-10);
        }
        assert_eq!(t.value_at(0), 0.0);
        assert_eq!(t.value_at(32), 0.0);
        assert_eq!(t.with_endpoints().len(), 33);
    }

    #[test]
    fn shift_probabilities_match_direct() {
        let spec = ProcessSpec::new(0.5, 8, 16).unwrap();
        let w = spec.weights();
        let tree = sample_angle_tree(8, &mut seeded(1)).unwrap();
        let u = tree.reconstruct();
        let p = shift_probabilities(&w, &u);
        let wsum: f64 = w.iter().map(|x| x * x).sum();
        for j in 0..8 {
            let d: f64 = (0..8).map(|m| w[m] * w[m] * u[m ^ j] * u[m ^ j]).sum::<f64>() / wsum;
            assert!((p[j] - d).abs() < 1e-14);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dense_equals_fast_under_shared_seed() {
        let spec = ProcessSpec::new(0.5, 8, 32).unwrap();
        let sampler = TrajectorySampler::new(spec, SimOptions::default()).unwrap();
        for seed in 0..5 {
            let dense = simulate_trajectory_dense(&spec, SimOptions::default(), &mut seeded(seed)).unwrap();
            let fast = sampler.run(&mut seeded(seed)).unwrap();
            assert_eq!(dense.shift, fast.shift);
            let enc = fast.trajectory.analog_encoding();
            let amps = dense.state.amplitudes();
            assert!(amps[0].norm() < 1e-12);
            for i in 1..32 {
                assert!((amps[i].re - enc[i - 1]).abs() < 1e-9 && amps[i].im.abs() < 1e-9);
            }
            assert!((dense.shift_probability - fast.shift_probability).abs() < 1e-9);
        }
    }

    #[test]
    fn forced_zero_shift_is_identity() {
        let spec = ProcessSpec::new(0.8, 4, 8).unwrap();
        let opts = SimOptions { shift: ShiftSampling::Forced(0), radius: RadiusMode::Fixed };
        let run = simulate_trajectory_dense(&spec, opts, &mut seeded(3)).unwrap();
        let tree = sample_angle_tree(4, &mut seeded(3)).unwrap();
        let u = tree.reconstruct();
        let w = spec.weights();
        for k in 0..4 {
            assert!((run.trajectory.fourier_coeffs[k] - 2.0 * u[k] * w[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_guard() {
        let spec = ProcessSpec::new(0.5, 128, 256).unwrap();
        assert!(matches!(
            simulate_trajectory_dense(&spec, SimOptions::default(), &mut seeded(0)),
            Err(Error::Resource(_))
        ));
    }

    #[test]
    fn prep_gates_encode_distribution() {
        let probs = [0.1, 0.2, 0.3, 0.05, 0.15, 0.0, 0.1, 0.1];
        let mut c = Circuit::new(3);
        c.extend(distribution_prep_gates(&[0, 1, 2], &probs));
        let s = c.apply(&QuantumState::new_basis_state(3, 0).unwrap()).unwrap();
        for (i, p) in probs.iter().enumerate() {
            assert!((s.amplitudes()[i].re - p.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn coherent_small_matches_exact_mixture() {
        let spec = ProcessSpec::new(0.5, 2, 4).unwrap();
        for k in 2..=5 {
            let enc = coherent_encoding_build(&spec, k).unwrap();
            assert!((enc.state.norm_sqr() - 1.0).abs() < 1e-9);
            let rho = enc.value_density().unwrap();
            assert!(trace_distance(&rho, &exact_mixture_density(&spec)) < 1e-10);
        }
    }

    #[test]
    fn zeta_tail_values() {
        // zeta(2) and zeta(3)
        assert!((zeta_tail(2.0, 0) - PI * PI / 6.0).abs() < 1e-12);
        assert!((zeta_tail(3.0, 0) - 1.2020569031595942).abs() < 1e-12);
        let direct: f64 = (11..=2_000_000).map(|k| (k as f64).powi(-3)).sum();
        assert!((zeta_tail(3.0, 10) - direct).abs() < 1e-12);
        assert!((relative_residual(0.5, 200) - 0.003).abs() < 0.0005);
    }

    #[test]
    fn born_moments_sum() {
        // sum of tilted second moments weighted by w equals the mean of the tilt
        let spec = ProcessSpec::new(0.5, 16, 32).unwrap();
        let m = born_second_moments(&spec);
        let mean: f64 = m.iter().sum::<f64>() / 16.0;
        assert!((mean - 16.0 / 18.0 * (1.0 + 2.0 / 16.0)).abs() < 1e-12);
    }
}
