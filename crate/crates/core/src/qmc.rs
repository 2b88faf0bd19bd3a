//! Monte Carlo estimation of normalized inner products E[<f|B> / (|B| |f|)]
//! over the coherent trajectory superposition.
//!
//! Three estimators share one estimand. `DirectAmplitude` reads the exact
//! amplitudes of the simulated oracle state, `PhaseEstimationAE` runs
//! canonical amplitude estimation on the target probability, and
//! `ClassicalMC` averages over sampled trajectories under the same (Born)
//! law the coherent state carries.
//!
//! The second moment E[(f.B)^2 / (|B|^2 |f|^2)] is the probability of the
//! target subspace and is available to every method. The signed first moment
//! is a sum of branch amplitudes, which phase estimation cannot read; it is
//! available to the direct readout and to sampling only.

use std::f64::consts::PI;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuits::{amplitude_prep_gates, qft_gates, Circuit};
use crate::error::{invalid, Error, Result};
use crate::rng::{stream, Rng};
use crate::spectral_bm::{
    coherent_encoding_circuit, exact_mixture_density, relative_residual, shift_probabilities, AngleGrid,
    CoherentLayout, DstPlan, ProcessSpec, RadiusMode, ShiftSampling, SimOptions, TrajectorySampler,
};
use crate::statevector::{extract_bits, sample_index, GateOp, MuxBase, QuantumState, DENSE_QUBIT_GUARD};

/// Independent phase-estimation runs combined by the median.
pub const AE_REPETITIONS: usize = 7;
/// Largest width of the coherent encoding itself.
pub const MAX_ENCODING_QUBITS: usize = 24;

// ------------------------------------------------------------ test functions

/// Real test function sampled at t_1..t_{T-1}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub values: Vec<f64>,
    pub norm: f64,
}

impl TestFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let t = values.len() + 1;
        if t < 2 || !t.is_power_of_two() {
            return invalid(format!("test function needs T-1 values with T a power of two, got {}", values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("test function values must be finite");
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return invalid("test function is identically zero");
        }
        Ok(TestFunction { values, norm })
    }

    /// f(t_i) for t_i = i pi / T.
    pub fn from_fn(steps: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new((1..steps).map(|i| f(i as f64 * PI / steps as f64)).collect())
    }

    /// Indicator of [lo pi, hi pi].
    pub fn window(steps: usize, lo: f64, hi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
            return invalid(format!("window {lo}:{hi} must satisfy 0 <= lo <= hi <= 1"));
        }
        Self::from_fn(steps, |t| if t >= lo * PI - 1e-12 && t <= hi * PI + 1e-12 { 1.0 } else { 0.0 })
    }

    pub fn steps(&self) -> usize {
        self.values.len() + 1
    }

    /// Unit vector on the value register (index 0 carries no weight).
    pub fn unit_register(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.steps()];
        for (i, x) in self.values.iter().enumerate() {
            v[i + 1] = x / self.norm;
        }
        v
    }

    /// Loader V with V|0> = |f> / |f| on `reg`.
    pub fn loader_gates(&self, reg: &[usize]) -> Vec<GateOp> {
        amplitude_prep_gates(reg, &self.unit_register())
    }

    pub fn loader(&self) -> Circuit {
        let k = self.steps().trailing_zeros() as usize;
        let mut c = Circuit::new(k);
        c.extend(self.loader_gates(&(0..k).collect::<Vec<_>>()));
        c
    }

    /// <f|x> / (|f| |x|) for grid values x (0 when x vanishes).
    pub fn normalized_inner(&self, x: &[f64]) -> f64 {
        let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            return 0.0;
        }
        self.values.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() / (self.norm * n)
    }
}

// --------------------------------------------------------------- estimands

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Moment {
    /// E[<f|B>/(|B||f|)] (signed).
    First,
    /// E[(<f|B>/(|B||f|))^2], the target-subspace probability.
    Second,
}

impl Moment {
    fn apply(self, x: f64) -> f64 {
        match self {
            Moment::First => x,
            Moment::Second => x * x,
        }
    }
}

/// Exact value of the unconditioned estimand. The first moment vanishes since
/// B and -B are equally likely; the second is <f|rho|f> with rho = Cov/tr Cov.
pub fn exact_moment(spec: &ProcessSpec, f: &TestFunction, moment: Moment) -> Result<f64> {
    check_pair(spec, f)?;
    Ok(match moment {
        Moment::First => 0.0,
        Moment::Second => {
            let rho = exact_mixture_density(spec);
            let u = f.unit_register();
            let mut s = 0.0;
            for i in 0..u.len() {
                for j in 0..u.len() {
                    s += u[i] * rho[(i, j)].re * u[j];
                }
            }
            s
        }
    })
}

/// Bound on the change of the estimand when the series is cut at L terms.
///
/// Cutting removes the relative variance tau(L) and renormalizes, which moves
/// rho by at most 2 tau in trace norm. The first moment is zero at every L.
pub fn truncation_bound(hurst: f64, terms: usize, moment: Moment) -> f64 {
    match moment {
        Moment::First => 0.0,
        Moment::Second => 2.0 * relative_residual(hurst, terms),
    }
}

fn check_pair(spec: &ProcessSpec, f: &TestFunction) -> Result<()> {
    spec.validate()?;
    if f.steps() != spec.steps {
        return invalid(format!("test function has {} grid points, process has {}", f.steps(), spec.steps));
    }
    Ok(())
}

// --------------------------------------------------------- discretized model

/// The discretized branch model behind the coherent encoding: loader angles
/// on a grid of 2^K cells, shift j, fixed radius sqrt(L).
#[derive(Clone, Debug)]
pub struct BranchModel {
    pub spec: ProcessSpec,
    pub grid: AngleGrid,
    weights: Vec<f64>,
    wsum: f64,
    plan: DstPlan,
}

impl BranchModel {
    pub fn new(spec: &ProcessSpec, precision_bits: u32) -> Result<Self> {
        spec.validate()?;
        let grid = AngleGrid::new(spec.terms, precision_bits)?;
        let weights = spec.weights();
        let wsum = weights.iter().map(|w| w * w).sum();
        Ok(BranchModel { spec: *spec, grid, weights, wsum, plan: DstPlan::new(spec.steps)? })
    }

    fn cell_bits(&self) -> usize {
        self.grid.precision_bits as usize
    }

    /// 2^{(L-1)K} L branches.
    pub fn branch_count(&self) -> usize {
        (1usize << (self.cell_bits() * self.grid.node_count())) * self.spec.terms
    }

    /// Garbage index -> (cells, shift), matching the coherent layout.
    pub fn decode(&self, g: usize) -> (Vec<usize>, usize) {
        let k = self.cell_bits();
        let mask = (1usize << k) - 1;
        let nodes = self.grid.node_count();
        let cells = (0..nodes).map(|i| (g >> (i * k)) & mask).collect();
        (cells, g >> (nodes * k))
    }

    fn shifted_sq(&self, u: &[f64], j: usize) -> f64 {
        (0..u.len()).map(|m| (self.weights[m] * u[m ^ j]).powi(2)).sum()
    }

    /// |B| on the grid: c sqrt(T/2) sqrt(L) (sum_m w_m^2 u_{m xor j}^2)^{1/2}.
    pub fn norm(&self, cells: &[usize], j: usize) -> f64 {
        let u = self.grid.branch_vector(cells);
        self.norm_of(&u, j)
    }

    fn norm_of(&self, u: &[f64], j: usize) -> f64 {
        let s = &self.spec;
        s.coefficient_scale() * (s.steps as f64 / 2.0 * s.terms as f64 * self.shifted_sq(u, j)).sqrt()
    }

    /// Born weight of the branch: P(cells) P(j | cells).
    pub fn weight(&self, cells: &[usize], j: usize) -> f64 {
        let u = self.grid.branch_vector(cells);
        self.grid.branch_probability(cells) * self.shifted_sq(&u, j) / self.wsum
    }

    /// Grid values of the branch trajectory.
    pub fn values(&self, cells: &[usize], j: usize) -> Vec<f64> {
        let u = self.grid.branch_vector(cells);
        self.values_of(&u, j)
    }

    fn values_of(&self, u: &[f64], j: usize) -> Vec<f64> {
        let c = self.spec.coefficient_scale() * (self.spec.terms as f64).sqrt();
        let coeffs: Vec<f64> = (0..u.len()).map(|m| c * self.weights[m] * u[m ^ j]).collect();
        self.plan.sine_series(&coeffs)
    }

    /// Smallest and largest branch norm.
    pub fn norm_range(&self) -> Result<(f64, f64)> {
        if self.branch_count() > 1 << 24 {
            return Err(Error::Resource("too many branches to enumerate".into()));
        }
        let nodes_states = self.branch_count() / self.spec.terms;
        let (lo, hi) = (0..nodes_states)
            .into_par_iter()
            .map(|g| {
                let (cells, _) = self.decode(g);
                let u = self.grid.branch_vector(&cells);
                (0..self.spec.terms).fold((f64::INFINITY, 0.0f64), |(lo, hi), j| {
                    let n = self.norm_of(&u, j);
                    (lo.min(n), hi.max(n))
                })
            })
            .reduce(|| (f64::INFINITY, 0.0), |a, b| (a.0.min(b.0), a.1.max(b.1)));
        Ok((lo, hi))
    }

    /// Draws cells from the grid and j uniformly (the law before the Born tilt).
    pub fn sample_untilted(&self, rng: &mut Rng) -> (Vec<usize>, usize) {
        let cells = self.grid.probabilities.iter().map(|p| sample_index(p, rng)).collect();
        (cells, rng.random_range(0..self.spec.terms))
    }

    /// Draws (cells, j) from the Born law; returns the branch vector too.
    pub fn sample(&self, rng: &mut Rng) -> (Vec<usize>, usize, Vec<f64>) {
        let cells: Vec<usize> = self.grid.probabilities.iter().map(|p| sample_index(p, rng)).collect();
        let u = self.grid.branch_vector(&cells);
        let j = sample_index(&shift_probabilities(&self.weights, &u), rng);
        (cells, j, u)
    }
}

// ------------------------------------------------------------------ oracles

/// Basis states singled out for estimation: every condition holds and, if
/// given, the register value is in the allowed set.
#[derive(Clone, Debug, PartialEq)]
pub struct Target {
    pub conditions: Vec<(usize, bool)>,
    pub register: Option<(Vec<usize>, Vec<bool>)>,
}

impl Target {
    pub fn qubits(conditions: Vec<(usize, bool)>) -> Self {
        Target { conditions, register: None }
    }

    pub fn contains(&self, index: usize) -> bool {
        self.conditions.iter().all(|&(q, v)| ((index >> q) & 1 == 1) == v)
            && self.register.as_ref().is_none_or(|(qs, allowed)| allowed[extract_bits(index as u128, qs)])
    }

    pub fn probability(&self, state: &QuantumState) -> f64 {
        // fixed chunks, summed in order: independent of thread scheduling
        const CHUNK: usize = 1 << 14;
        let parts: Vec<f64> = state
            .amplitudes()
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, xs)| {
                xs.iter()
                    .enumerate()
                    .filter(|(i, _)| self.contains(c * CHUNK + i))
                    .map(|(_, a)| a.norm_sqr())
                    .sum::<f64>()
            })
            .collect();
        parts.iter().sum()
    }

    fn with(&self, extra: (usize, bool)) -> Target {
        let mut t = self.clone();
        t.conditions.push(extra);
        t
    }
}

/// Extra flag qubit rotated by a function of the branch norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum NormFlag {
    /// Amplitude |B| / b_max on flag |0>.
    Direct { b_max: f64 },
    /// Amplitude b_floor / |B| on flag |0>; P(flag 0) = b_floor^2 E_Born[|B|^-2],
    /// and E_Born[|B|^-2] = 1 / E[|B|^2] under the untilted law.
    Inverse { b_floor: f64 },
}

/// What the value register is compared against.
#[derive(Clone, Debug, PartialEq)]
pub enum Readout {
    /// Undo the loader of f, then target value |0>.
    InnerProduct(TestFunction),
    /// Target grid indices lo..=hi (squared-amplitude mass of a time window).
    Window { lo: usize, hi: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleConfig {
    pub precision_bits: u32,
    pub norm_flag: Option<NormFlag>,
    /// Keep only branches with norm in [lo, hi] (a flag set to 1 inside).
    pub norm_window: Option<(f64, f64)>,
}

impl OracleConfig {
    pub fn new(precision_bits: u32) -> Self {
        OracleConfig { precision_bits, norm_flag: None, norm_window: None }
    }
}

/// Simulated oracle A and the state A|0>.
#[derive(Clone, Debug)]
pub struct Oracle {
    pub spec: ProcessSpec,
    pub config: OracleConfig,
    pub circuit: Circuit,
    pub layout: CoherentLayout,
    pub model: BranchModel,
    pub state: QuantumState,
    /// Value-register condition (plus the direct norm flag and the window flag).
    pub target: Target,
    /// Condition for "branch kept" (window flag = 1), or None.
    pub window_target: Option<Target>,
    /// Condition for "norm flag = 0", or None.
    pub flag_target: Option<Target>,
    pub norm_flag_qubit: Option<usize>,
    pub window_flag_qubit: Option<usize>,
}

/// One garbage branch of the oracle state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BranchEntry {
    pub cells: Vec<usize>,
    pub shift: usize,
    /// Probability of the branch in A|0>.
    pub weight: f64,
    /// Amplitude on the target pattern (value |0>, flags as targeted).
    pub amplitude: f64,
}

fn budget_error(qubits: usize) -> Error {
    Error::Budget(format!(
        "the coherent oracle needs {qubits} qubits, above the dense limit; use Method::ClassicalMC instead"
    ))
}

/// Builds the oracle for `readout` and simulates A|0>.
pub fn build_oracle(spec: &ProcessSpec, readout: &Readout, config: &OracleConfig) -> Result<Oracle> {
    spec.validate()?;
    if let Readout::InnerProduct(f) = readout {
        check_pair(spec, f)?;
    }
    let extra = config.norm_flag.is_some() as usize + config.norm_window.is_some() as usize;
    let (mut circuit, layout, _) = coherent_encoding_circuit(spec, config.precision_bits, extra).map_err(|e| match e {
        Error::Resource(_) => budget_error(CoherentLayout::new(spec, config.precision_bits).num_qubits + extra),
        e => e,
    })?;
    let model = BranchModel::new(spec, config.precision_bits)?;
    let value = layout.pipeline.value.clone();
    let garbage = layout.garbage();
    let mut next = layout.num_qubits;

    let mut target = match readout {
        Readout::InnerProduct(f) => {
            let mut v = Circuit::new(circuit.num_qubits);
            v.extend(f.loader_gates(&value));
            circuit.extend(v.inverse().gates);
            Target::qubits(value.iter().map(|&q| (q, false)).collect())
        }
        Readout::Window { lo, hi } => {
            if lo > hi || *hi >= spec.steps {
                return invalid(format!("window {lo}..={hi} outside the grid"));
            }
            let allowed = (0..spec.steps).map(|i| i >= *lo && i <= *hi).collect();
            Target { conditions: vec![], register: Some((value.clone(), allowed)) }
        }
    };

    let norms: Option<Vec<f64>> = if extra > 0 {
        Some(
            (0..model.branch_count())
                .into_par_iter()
                .map(|g| {
                    let (cells, j) = model.decode(g);
                    model.norm(&cells, j)
                })
                .collect(),
        )
    } else {
        None
    };

    let mut norm_flag_qubit = None;
    let mut flag_target = None;
    if let Some(flag) = config.norm_flag {
        let norms = norms.as_ref().expect("norms computed");
        let (lo, hi) = norms.iter().fold((f64::INFINITY, 0.0f64), |a, &n| (a.0.min(n), a.1.max(n)));
        let ratio: Box<dyn Fn(f64) -> f64 + Sync> = match flag {
            NormFlag::Direct { b_max } => {
                if !(b_max >= hi) {
                    return invalid(format!("b_max {b_max} is below the largest branch norm {hi}"));
                }
                Box::new(move |n| n / b_max)
            }
            NormFlag::Inverse { b_floor } => {
                if !(b_floor > 0.0 && b_floor <= lo) {
                    return invalid(format!("b_floor {b_floor} must lie in (0, {lo}]"));
                }
                Box::new(move |n| b_floor / n)
            }
        };
        let angles = norms.iter().map(|&n| 2.0 * ratio(n).clamp(0.0, 1.0).acos()).collect();
        circuit.push(GateOp::mux(MuxBase::Ry, vec![next], garbage.clone(), angles));
        if matches!(flag, NormFlag::Direct { .. }) {
            target = target.with((next, false));
        }
        flag_target = Some(Target::qubits(vec![(next, false)]));
        norm_flag_qubit = Some(next);
        next += 1;
    }

    let mut window_flag_qubit = None;
    let mut window_target = None;
    if let Some((lo, hi)) = config.norm_window {
        if !(lo <= hi) {
            return invalid(format!("norm window [{lo}, {hi}] is empty"));
        }
        let norms = norms.as_ref().expect("norms computed");
        let angles = norms.iter().map(|&n| if n >= lo && n <= hi { PI } else { 0.0 }).collect();
        circuit.push(GateOp::mux(MuxBase::Ry, vec![next], garbage.clone(), angles));
        target = target.with((next, true));
        flag_target = flag_target.map(|t| t.with((next, true)));
        window_target = Some(Target::qubits(vec![(next, true)]));
        window_flag_qubit = Some(next);
    }

    let mut state = QuantumState::new_basis_state(circuit.num_qubits, 0)?;
    circuit.apply_mut(&mut state)?;
    Ok(Oracle {
        spec: *spec,
        config: config.clone(),
        circuit,
        layout,
        model,
        state,
        target,
        window_target,
        flag_target,
        norm_flag_qubit,
        window_flag_qubit,
    })
}

/// Oracle whose |0> value amplitude on each branch is <B|f>/(|B||f|).
pub fn build_oracle_a(spec: &ProcessSpec, f: &TestFunction, precision_bits: u32) -> Result<Oracle> {
    build_oracle(spec, &Readout::InnerProduct(f.clone()), &OracleConfig::new(precision_bits))
}

/// 3 sqrt(E|B|^2), the default normalization of the norm flag.
pub fn default_b_max(spec: &ProcessSpec) -> f64 {
    3.0 * spec.expected_sq_norm().sqrt()
}

/// [`build_oracle_a`] plus a flag with amplitude |B|/b_max, so the joint
/// |0...0> amplitude is <B|f>/(b_max |f|). `b_max` defaults to
/// [`default_b_max`] and must cover every branch norm.
pub fn build_oracle_a_norm(spec: &ProcessSpec, f: &TestFunction, precision_bits: u32, b_max: Option<f64>) -> Result<Oracle> {
    let mut cfg = OracleConfig::new(precision_bits);
    cfg.norm_flag = Some(NormFlag::Direct { b_max: b_max.unwrap_or_else(|| default_b_max(spec)) });
    build_oracle(spec, &Readout::InnerProduct(f.clone()), &cfg)
}

impl Oracle {
    pub fn num_qubits(&self) -> usize {
        self.circuit.num_qubits
    }

    /// P(target) in A|0>, unconditioned.
    pub fn target_probability(&self) -> f64 {
        self.target.probability(&self.state)
    }

    /// P(branch kept by the norm window); 1 without a window.
    pub fn window_probability(&self) -> f64 {
        self.window_target.as_ref().map_or(1.0, |t| t.probability(&self.state))
    }

    /// P(norm flag = 0 and kept), if a norm flag is present.
    pub fn flag_probability(&self) -> Option<f64> {
        self.flag_target.as_ref().map(|t| t.probability(&self.state))
    }

    /// Per-branch weight and target amplitude read off the state.
    pub fn branches(&self) -> Vec<BranchEntry> {
        let garbage = self.layout.garbage();
        let gmask: usize = garbage.iter().map(|&q| 1usize << q).sum();
        let pattern: usize = self.target.conditions.iter().filter(|c| c.1).map(|&(q, _)| 1usize << q).sum();
        let n = self.model.branch_count();
        let mut weight = vec![0.0; n];
        let mut amp = vec![0.0; n];
        for (i, a) in self.state.amplitudes().iter().enumerate() {
            let g = extract_bits(i as u128, &garbage);
            weight[g] += a.norm_sqr();
            if i & !gmask == pattern {
                amp[g] = a.re;
            }
        }
        (0..n)
            .map(|g| {
                let (cells, shift) = self.model.decode(g);
                BranchEntry { cells, shift, weight: weight[g], amplitude: amp[g] }
            })
            .collect()
    }

    /// Exact estimand read from the state (conditioned on the norm window).
    pub fn direct(&self, moment: Moment) -> Result<f64> {
        let kept = self.window_probability();
        if kept < 1e-14 {
            return Err(Error::DegeneratePostselection(kept));
        }
        match moment {
            Moment::Second => Ok(self.target_probability() / kept),
            Moment::First => {
                if self.target.register.is_some() {
                    return Err(Error::Unsupported("the first moment needs an inner-product readout".into()));
                }
                // sum_g sqrt(p_g) a_g = sum_g p_g <f|B_g>, restricted to kept branches
                let s: f64 = self.branches().iter().map(|b| b.weight.sqrt() * b.amplitude).sum();
                Ok(s / kept)
            }
        }
    }
}

// ------------------------------------------------------ amplitude estimation

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    DirectAmplitude,
    PhaseEstimationAE,
    ClassicalMC,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Method::DirectAmplitude),
            "ae" => Ok(Method::PhaseEstimationAE),
            "classical" => Ok(Method::ClassicalMC),
            _ => invalid(format!("unknown method '{s}' (direct | ae | classical)")),
        }
    }
}

/// How the phase-estimation output is produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AeBackend {
    /// Exact outcome law of canonical phase estimation on the two-dimensional
    /// Grover subspace; needs only the target probability of A|0>.
    Subspace,
    /// Gate-level phase estimation with controlled Grover iterates.
    Circuit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub estimate: f64,
    /// Estimation error bound (excluding truncation).
    pub error_bound: f64,
    /// Oracle calls per circuit run (A plus Grover iterates).
    pub oracle_queries: u64,
    /// Circuit runs or samples.
    pub shots: u64,
    pub method: Method,
    pub standard_error: f64,
    /// Change of the estimand from cutting the series at L.
    pub truncation_bound: f64,
}

/// pi/2^m + pi^2/2^{2m}: error of one run with probability >= 8/pi^2.
pub fn ae_error_bound(m: u32) -> f64 {
    let mm = (1u64 << m) as f64;
    PI / mm + PI * PI / (mm * mm)
}

/// Smallest m with [`ae_error_bound`] at most `eps`.
pub fn ae_bits_for(eps: f64) -> Result<u32> {
    if !(eps > 0.0) {
        return invalid("precision must be positive");
    }
    (1..=40).find(|&m| ae_error_bound(m) <= eps).ok_or_else(|| Error::InvalidInput("precision too small".into()))
}

fn fejer(delta: f64, mm: f64) -> f64 {
    let d = (PI * delta / mm).sin();
    if d.abs() < 1e-12 {
        1.0
    } else {
        ((PI * delta).sin() / (mm * d)).powi(2)
    }
}

/// Law of the m-bit phase-estimation outcome y for target probability a;
/// the estimate is sin^2(pi y / 2^m).
pub fn ae_outcome_distribution(a: f64, m: u32) -> Result<Vec<f64>> {
    if !(0.0..=1.0 + 1e-12).contains(&a) {
        return invalid(format!("probability {a} outside [0, 1]"));
    }
    if m == 0 || m > 24 {
        return invalid("phase register must have 1..=24 bits");
    }
    let mm = (1usize << m) as f64;
    let phi = mm * a.clamp(0.0, 1.0).sqrt().asin() / PI;
    let mut p: Vec<f64> = (0..1usize << m)
        .map(|y| 0.5 * (fejer(y as f64 - phi, mm) + fejer(y as f64 + phi, mm)))
        .collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    Ok(p)
}

fn outcome_estimate(y: usize, m: u32) -> f64 {
    (PI * y as f64 / (1u64 << m) as f64).sin().powi(2)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median of `repetitions` phase-estimation runs on target probability `a`
/// (subspace backend).
pub fn estimate_probability(a: f64, m: u32, repetitions: usize, rng: &mut Rng) -> Result<EstimationResult> {
    if repetitions == 0 {
        return invalid("need at least one repetition");
    }
    let dist = ae_outcome_distribution(a, m)?;
    let runs: Vec<f64> = (0..repetitions).map(|_| outcome_estimate(sample_index(&dist, rng), m)).collect();
    Ok(ae_result(median(runs), m, repetitions))
}

fn ae_result(estimate: f64, m: u32, repetitions: usize) -> EstimationResult {
    EstimationResult {
        estimate,
        error_bound: ae_error_bound(m),
        oracle_queries: 1u64 << m,
        shots: repetitions as u64,
        method: Method::PhaseEstimationAE,
        standard_error: 0.0,
        truncation_bound: 0.0,
    }
}

fn reflection_gates(conds: &[(usize, bool)]) -> Vec<GateOp> {
    let flips: Vec<GateOp> = conds.iter().filter(|c| !c.1).map(|&(q, _)| GateOp::x(q)).collect();
    let (last, rest) = conds.split_last().expect("non-empty");
    let ctrl: Vec<(usize, bool)> = rest.iter().map(|&(q, _)| (q, true)).collect();
    let mut g = flips.clone();
    g.push(GateOp::phase(last.0, PI).with_controls(&ctrl));
    g.extend(flips);
    g
}

/// A S_0 A^-1 S_chi, which is minus the Grover iterate Q.
pub fn grover_iterate(a: &Circuit, target: &Target) -> Result<Circuit> {
    if target.register.is_some() || target.conditions.is_empty() {
        return Err(Error::Unsupported("gate-level reflections need a target given by qubit conditions".into()));
    }
    let mut q = Circuit::new(a.num_qubits);
    q.extend(reflection_gates(&target.conditions));
    q.extend(a.inverse().gates);
    q.extend(reflection_gates(&(0..a.num_qubits).map(|i| (i, false)).collect::<Vec<_>>()));
    q.extend(a.gates.iter().cloned());
    Ok(q)
}

/// Phase estimation of Q on A|0> with m ancillas after the register of A.
pub fn phase_estimation_circuit(a: &Circuit, target: &Target, m: u32) -> Result<(Circuit, Vec<usize>)> {
    let n = a.num_qubits;
    let m = m as usize;
    if n + m > DENSE_QUBIT_GUARD {
        return Err(Error::Resource(format!("phase estimation needs {} qubits", n + m)));
    }
    let g = grover_iterate(a, target)?;
    let anc: Vec<usize> = (n..n + m).collect();
    let mut c = Circuit::new(n + m);
    c.extend(a.gates.iter().cloned());
    c.extend(anc.iter().map(|&q| GateOp::h(q)));
    for (k, &q) in anc.iter().enumerate() {
        let cq = g.controlled(q, true);
        for _ in 0..1usize << k {
            c.extend(cq.gates.iter().cloned());
            c.push(GateOp::phase(q, PI));
        }
    }
    let mut f = Circuit::new(n + m);
    f.extend(qft_gates(&anc));
    c.extend(f.inverse().gates);
    Ok((c, anc))
}

/// One amplitude-estimation run: 2^m - 1 Grover iterates plus one A.
pub fn amplitude_estimate(a: &Circuit, target: &Target, m: u32, rng: &mut Rng) -> Result<EstimationResult> {
    amplitude_estimate_with(a, target, m, AeBackend::Subspace, 1, rng)
}

pub fn amplitude_estimate_with(
    a: &Circuit,
    target: &Target,
    m: u32,
    backend: AeBackend,
    repetitions: usize,
    rng: &mut Rng,
) -> Result<EstimationResult> {
    match backend {
        AeBackend::Subspace => {
            let mut s = QuantumState::new_basis_state(a.num_qubits, 0)?;
            a.apply_mut(&mut s)?;
            estimate_probability(target.probability(&s), m, repetitions, rng)
        }
        AeBackend::Circuit => {
            if repetitions == 0 {
                return invalid("need at least one repetition");
            }
            let dist = phase_estimation_distribution(a, target, m)?;
            let runs: Vec<f64> = (0..repetitions).map(|_| outcome_estimate(sample_index(&dist, rng), m)).collect();
            Ok(ae_result(median(runs), m, repetitions))
        }
    }
}

/// Outcome law of the gate-level phase estimation.
pub fn phase_estimation_distribution(a: &Circuit, target: &Target, m: u32) -> Result<Vec<f64>> {
    let (c, anc) = phase_estimation_circuit(a, target, m)?;
    let mut s = QuantumState::new_basis_state(c.num_qubits, 0)?;
    c.apply_mut(&mut s)?;
    s.probabilities(&anc)
}

// --------------------------------------------------------------- estimators

/// Which trajectory law the sampling estimator draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum McModel {
    /// Continuous loader angles (Born shift, radius sqrt(L)).
    Continuous,
    /// The discretized branch model of the coherent encoding.
    Discretized,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateOptions {
    pub moment: Moment,
    pub precision_bits: u32,
    pub norm_window: Option<(f64, f64)>,
    /// Defaults to Discretized with a norm window, Continuous otherwise.
    pub mc_model: Option<McModel>,
    pub ae_backend: AeBackend,
    /// Overrides the planned phase register width.
    pub ae_bits: Option<u32>,
    pub repetitions: usize,
    /// Overrides the planned sample count.
    pub samples: Option<usize>,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            moment: Moment::Second,
            precision_bits: 4,
            norm_window: None,
            mc_model: None,
            ae_backend: AeBackend::Subspace,
            ae_bits: None,
            repetitions: AE_REPETITIONS,
            samples: None,
        }
    }
}

/// Sample count for a 3-SE half-width of `eps` (range of the summand is
/// [0, 1] for the second moment, [-1, 1] for the first).
pub fn samples_for(eps: f64, moment: Moment) -> usize {
    let sigma = match moment {
        Moment::First => 1.0,
        Moment::Second => 0.5,
    };
    (3.0 * sigma / eps).powi(2).ceil() as usize
}

/// Estimate with error budget `epsilon`: one third each for truncation,
/// discretization (zero: the coherent mixture is exact at every K) and
/// estimation.
pub fn estimate_normalized_inner(
    spec: &ProcessSpec,
    f: &TestFunction,
    epsilon: f64,
    method: Method,
    rng: &mut Rng,
) -> Result<EstimationResult> {
    estimate_normalized_inner_with(spec, f, epsilon, method, &EstimateOptions::default(), rng)
}

pub fn estimate_normalized_inner_with(
    spec: &ProcessSpec,
    f: &TestFunction,
    epsilon: f64,
    method: Method,
    opts: &EstimateOptions,
    rng: &mut Rng,
) -> Result<EstimationResult> {
    check_pair(spec, f)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return invalid("epsilon must be positive");
    }
    let share = epsilon / 3.0;
    let trunc = truncation_bound(spec.hurst, spec.terms, opts.moment);
    let mut r = match method {
        Method::ClassicalMC => {
            let n = opts.samples.unwrap_or_else(|| samples_for(share, opts.moment));
            classical_mc_estimate_with(spec, f, n, opts, rng)?
        }
        Method::DirectAmplitude | Method::PhaseEstimationAE => {
            if method == Method::PhaseEstimationAE && opts.moment == Moment::First {
                return Err(Error::Unsupported(
                    "the signed first moment is not a probability; use DirectAmplitude or ClassicalMC".into(),
                ));
            }
            let mut cfg = OracleConfig::new(opts.precision_bits);
            cfg.norm_window = opts.norm_window;
            let oracle = build_oracle(spec, &Readout::InnerProduct(f.clone()), &cfg)?;
            if method == Method::DirectAmplitude {
                EstimationResult {
                    estimate: oracle.direct(opts.moment)?,
                    error_bound: 1e-12,
                    oracle_queries: 1,
                    shots: 1,
                    method,
                    standard_error: 0.0,
                    truncation_bound: 0.0,
                }
            } else {
                let m = match opts.ae_bits {
                    Some(m) => m,
                    None => ae_bits_for(share)?,
                };
                oracle_ae(&oracle, m, opts.ae_backend, opts.repetitions, rng)?
            }
        }
    };
    r.truncation_bound = trunc;
    Ok(r)
}

/// Conditional target probability of an oracle by amplitude estimation:
/// P(target) alone, or P(target)/P(kept) with a norm window.
pub fn oracle_ae(oracle: &Oracle, m: u32, backend: AeBackend, repetitions: usize, rng: &mut Rng) -> Result<EstimationResult> {
    let run = |t: &Target, rng: &mut Rng| match backend {
        AeBackend::Subspace => estimate_probability(t.probability(&oracle.state), m, repetitions, rng),
        AeBackend::Circuit => amplitude_estimate_with(&oracle.circuit, t, m, backend, repetitions, rng),
    };
    let num = run(&oracle.target, rng)?;
    match &oracle.window_target {
        None => Ok(num),
        Some(w) => {
            let den = run(w, rng)?;
            ratio_result(&num, &den)
        }
    }
}

/// Ratio of two estimates with the interval bound propagated.
pub fn ratio_result(num: &EstimationResult, den: &EstimationResult) -> Result<EstimationResult> {
    let (a, e1, b, e2) = (num.estimate, num.error_bound, den.estimate, den.error_bound);
    if b - e2 <= 0.0 {
        return Err(Error::Budget(
            "the kept probability is not resolved at this precision; raise the phase bits or widen the norm window"
                .into(),
        ));
    }
    let r = a / b;
    let hi = (a + e1) / (b - e2);
    let lo = ((a - e1) / (b + e2)).max(0.0);
    Ok(EstimationResult {
        estimate: r,
        error_bound: (hi - r).max(r - lo),
        oracle_queries: num.oracle_queries,
        shots: num.shots + den.shots,
        method: num.method,
        standard_error: 0.0,
        truncation_bound: 0.0,
    })
}

/// Second-moment sampling estimate over `samples` trajectories.
pub fn classical_mc_estimate(spec: &ProcessSpec, f: &TestFunction, samples: usize, rng: &mut Rng) -> Result<EstimationResult> {
    classical_mc_estimate_with(spec, f, samples, &EstimateOptions::default(), rng)
}

const MC_CHUNKS: usize = 64;

/// Sampling estimate under the Born law; with a norm window, branches outside
/// it are rejected until `samples` are accepted.
pub fn classical_mc_estimate_with(
    spec: &ProcessSpec,
    f: &TestFunction,
    samples: usize,
    opts: &EstimateOptions,
    rng: &mut Rng,
) -> Result<EstimationResult> {
    check_pair(spec, f)?;
    if samples < 2 {
        return invalid("need at least two samples");
    }
    let model = opts.mc_model.unwrap_or(if opts.norm_window.is_some() { McModel::Discretized } else { McModel::Continuous });
    let seed: u64 = rng.random();
    let moment = opts.moment;
    let window = opts.norm_window;
    let keep = |n: f64| window.is_none_or(|(lo, hi)| n >= lo && n <= hi);
    let per = samples.div_ceil(MC_CHUNKS);

    let sampler = match model {
        McModel::Continuous => Some(TrajectorySampler::new(
            *spec,
            SimOptions { shift: ShiftSampling::Born, radius: RadiusMode::Fixed },
        )?),
        McModel::Discretized => None,
    };
    let branches = match model {
        McModel::Discretized => Some(BranchModel::new(spec, opts.precision_bits)?),
        McModel::Continuous => None,
    };

    let parts: Result<Vec<(f64, f64, usize)>> = (0..MC_CHUNKS)
        .into_par_iter()
        .map(|c| {
            let want = per.min(samples.saturating_sub(c * per));
            let mut r = stream(seed, c as u64);
            let (mut s, mut s2, mut tries) = (0.0, 0.0, 0usize);
            let mut got = 0;
            while got < want {
                tries += 1;
                if tries > 1000 * want.max(1) {
                    return Err(Error::RetryCapExceeded(tries));
                }
                let x = match (&sampler, &branches) {
                    (Some(sm), _) => sm.sample(&mut r)?.values,
                    (_, Some(bm)) => {
                        let (_, j, u) = bm.sample(&mut r);
                        bm.values_of(&u, j)
                    }
                    _ => unreachable!(),
                };
                let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !keep(n) {
                    continue;
                }
                let v = moment.apply(f.normalized_inner(&x));
                s += v;
                s2 += v * v;
                got += 1;
            }
            Ok((s, s2, tries))
        })
        .collect();
    let (s, s2, tries) = parts?.into_iter().fold((0.0, 0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let n = samples as f64;
    let mean = s / n;
    let var = ((s2 / n - mean * mean) * n / (n - 1.0)).max(0.0);
    let se = (var / n).sqrt();
    Ok(EstimationResult {
        estimate: mean,
        error_bound: 3.0 * se,
        oracle_queries: 0,
        shots: tries as u64,
        method: Method::ClassicalMC,
        standard_error: se,
        truncation_bound: truncation_bound(spec.hurst, spec.terms, moment),
    })
}

// ------------------------------------------------------------------ planner

/// Parameters chosen for an accuracy target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub terms: usize,
    pub steps: usize,
    pub precision_bits: u32,
    pub ae_bits: u32,
    pub samples: usize,
    pub truncation_bound: f64,
    pub qubits: usize,
}

/// Smallest power-of-two L >= 2 whose truncation bound is within `eps`.
pub fn terms_for_bound(hurst: f64, eps: f64, moment: Moment) -> usize {
    let mut l = 2;
    while truncation_bound(hurst, l, moment) > eps && l < 1 << 20 {
        l *= 2;
    }
    l
}

/// Plans L, T, K and the estimation effort for `epsilon`. Explicit values
/// override the planner; quantum methods fail with a budget error naming the
/// classical fallback when the oracle would not fit.
pub fn plan_estimate(
    hurst: f64,
    epsilon: f64,
    method: Method,
    moment: Moment,
    terms: Option<usize>,
    steps: Option<usize>,
    precision_bits: Option<u32>,
) -> Result<Plan> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return invalid("epsilon must be positive");
    }
    let share = epsilon / 3.0;
    let terms = terms.unwrap_or_else(|| terms_for_bound(hurst, share, moment));
    let steps = steps.unwrap_or((4 * terms).max(16));
    let precision_bits = precision_bits.unwrap_or(4);
    let spec = ProcessSpec::new(hurst, terms, steps)?;
    let qubits = CoherentLayout::new(&spec, precision_bits).num_qubits;
    if method != Method::ClassicalMC && qubits > MAX_ENCODING_QUBITS {
        return Err(budget_error(qubits));
    }
    Ok(Plan {
        terms,
        steps,
        precision_bits,
        ae_bits: ae_bits_for(share)?,
        samples: samples_for(share, moment),
        truncation_bound: truncation_bound(hurst, terms, moment),
        qubits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn loader_prepares_signed_vector() {
        let f = TestFunction::from_fn(16, |t| (3.0 * t).cos() - 0.2).unwrap();
        let s = f.loader().apply(&QuantumState::new_basis_state(4, 0).unwrap()).unwrap();
        for (a, u) in s.amplitudes().iter().zip(f.unit_register()) {
            assert!((a.re - u).abs() < 1e-12 && a.im.abs() < 1e-12);
        }
    }

    #[test]
    fn half_probability_at_three_bits_is_exact() {
        let d = ae_outcome_distribution(0.5, 3).unwrap();
        let mut r = seeded(1);
        for _ in 0..20 {
            let e = estimate_probability(0.5, 3, 1, &mut r).unwrap();
            assert!((e.estimate - 0.5).abs() < 1e-12);
            assert_eq!(e.oracle_queries, 8);
        }
        assert!((d[2] + d[6] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn circuit_backend_matches_subspace_law() {
        // A: Ry on three qubits with a controlled mixing gate
        let mut a = Circuit::new(3);
        a.push(GateOp::ry(0, 0.7));
        a.push(GateOp::ry(1, 1.9));
        a.push(GateOp::cry(0, 2, 0.4));
        a.push(GateOp::cnot(1, 2));
        let t = Target::qubits(vec![(2, true), (0, false)]);
        let mut s = QuantumState::new_basis_state(3, 0).unwrap();
        a.apply_mut(&mut s).unwrap();
        let p = t.probability(&s);
        for m in [3, 5] {
            let exact = ae_outcome_distribution(p, m).unwrap();
            let circ = phase_estimation_distribution(&a, &t, m).unwrap();
            for (x, y) in exact.iter().zip(&circ) {
                assert!((x - y).abs() < 1e-9, "m={m}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn planner_names_classical_fallback() {
        let e = plan_estimate(0.8, 0.01, Method::DirectAmplitude, Moment::Second, None, None, None).unwrap_err();
        assert!(matches!(&e, Error::Budget(m) if m.contains("ClassicalMC")), "{e}");
        let p = plan_estimate(0.8, 0.01, Method::ClassicalMC, Moment::Second, None, None, None).unwrap();
        assert!(p.truncation_bound <= 0.01 / 3.0);
    }

    #[test]
    fn first_moment_rejected_by_phase_estimation() {
        let spec = ProcessSpec::new(0.5, 2, 8).unwrap();
        let f = TestFunction::from_fn(8, |t| t.sin()).unwrap();
        let opts = EstimateOptions { moment: Moment::First, ..Default::default() };
        let e = estimate_normalized_inner_with(&spec, &f, 0.1, Method::PhaseEstimationAE, &opts, &mut seeded(3));
        assert!(matches!(e, Err(Error::Unsupported(_))));
    }

    #[test]
    fn small_oracle_branches_match_classical_inner_products() {
        let spec = ProcessSpec::new(0.5, 2, 8).unwrap();
        let f = TestFunction::from_fn(8, |t| t * (PI - t) + 0.3 * (2.0 * t).sin()).unwrap();
        let o = build_oracle_a(&spec, &f, 3).unwrap();
        let mut total = 0.0;
        for b in o.branches() {
            let x = o.model.values(&b.cells, b.shift);
            let w = o.model.weight(&b.cells, b.shift);
            assert!((b.weight - w).abs() < 1e-10);
            if w > 1e-12 {
                assert!((b.amplitude / w.sqrt() - f.normalized_inner(&x)).abs() < 1e-8);
            }
            total += b.weight;
        }
        assert!((total - 1.0).abs() < 1e-10);
        let exact = exact_moment(&spec, &f, Moment::Second).unwrap();
        assert!((o.direct(Moment::Second).unwrap() - exact).abs() < 1e-10);
        assert!(o.direct(Moment::First).unwrap().abs() < 1e-10);
    }
}
