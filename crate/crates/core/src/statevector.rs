//! Dense and sparse statevector simulation.
//!
//! Qubit 0 is the least-significant bit of a basis index. Two-qubit gate
//! matrices are written in the local basis `|q_first q_second>` with the first
//! listed qubit as the high bit, so `Rbs(pi/2)` on `[a, b]` maps `|10>` (a set)
//! to `|01>` (b set).

use std::collections::hash_map::DefaultHasher;
use std::hash::BuildHasherDefault;

/// Fixed-key hasher: iteration order, and so floating-point summation order,
/// is the same in every process.
type HashMap<K, V> = std::collections::HashMap<K, V, BuildHasherDefault<DefaultHasher>>;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::Rng;

/// Largest register the dense simulator will allocate.
pub const DENSE_QUBIT_GUARD: usize = 26;
/// Largest register for [`SparseState`] (basis keys are `u128`).
pub const SPARSE_QUBIT_GUARD: usize = 128;
/// Branches below this probability cannot be postselected.
pub const POSTSELECT_FLOOR: f64 = 1e-14;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Single-qubit or two-qubit primitive used by multiplexed gates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MuxBase {
    Ry,
    Phase,
    Rbs,
}

/// Gate kinds. Parameters are in radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GateKind {
    Hadamard,
    PauliX,
    /// diag(1, e^{i phi}).
    Phase(f64),
    /// qubits = [control, target].
    ControlledPhase(f64),
    /// qubits = [control, target].
    Cnot,
    Swap,
    /// qubits = [control, a, b].
    ControlledSwap,
    Rbs(f64),
    /// qubits = [control, target].
    ControlledRy(f64),
    Ry(f64),
    /// One `base` gate per value of the select register; `select[b]` is bit b
    /// of the value. `angles.len() == 2^select.len()`.
    Multiplexed {
        base: MuxBase,
        select: Vec<usize>,
        angles: Vec<f64>,
    },
}

impl GateKind {
    pub fn arity(&self) -> usize {
        match self {
            GateKind::Hadamard | GateKind::PauliX | GateKind::Phase(_) | GateKind::Ry(_) => 1,
            GateKind::ControlledPhase(_)
            | GateKind::Cnot
            | GateKind::Swap
            | GateKind::Rbs(_)
            | GateKind::ControlledRy(_) => 2,
            GateKind::ControlledSwap => 3,
            GateKind::Multiplexed { base, .. } => match base {
                MuxBase::Rbs => 2,
                _ => 1,
            },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GateKind::Hadamard => "H",
            GateKind::PauliX => "X",
            GateKind::Phase(_) => "P",
            GateKind::ControlledPhase(_) => "CP",
            GateKind::Cnot => "CNOT",
            GateKind::Swap => "SWAP",
            GateKind::ControlledSwap => "CSWAP",
            GateKind::Rbs(_) => "RBS",
            GateKind::ControlledRy(_) => "CRY",
            GateKind::Ry(_) => "RY",
            GateKind::Multiplexed { base, .. } => match base {
                MuxBase::Ry => "MUX_RY",
                MuxBase::Phase => "MUX_P",
                MuxBase::Rbs => "MUX_RBS",
            },
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            GateKind::Phase(p)
            | GateKind::ControlledPhase(p)
            | GateKind::Rbs(p)
            | GateKind::ControlledRy(p)
            | GateKind::Ry(p) => vec![*p],
            GateKind::Multiplexed { angles, .. } => angles.clone(),
            _ => vec![],
        }
    }
}

/// A gate, its target qubits and any extra controls `(qubit, required value)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateOp {
    pub kind: GateKind,
    pub qubits: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub controls: Vec<(usize, bool)>,
}

impl GateOp {
    pub fn new(kind: GateKind, qubits: Vec<usize>) -> Self {
        GateOp { kind, qubits, controls: Vec::new() }
    }
    pub fn h(q: usize) -> Self {
        Self::new(GateKind::Hadamard, vec![q])
    }
    pub fn x(q: usize) -> Self {
        Self::new(GateKind::PauliX, vec![q])
    }
    pub fn phase(q: usize, phi: f64) -> Self {
        Self::new(GateKind::Phase(phi), vec![q])
    }
    pub fn cp(c: usize, t: usize, phi: f64) -> Self {
        Self::new(GateKind::ControlledPhase(phi), vec![c, t])
    }
    pub fn cnot(c: usize, t: usize) -> Self {
        Self::new(GateKind::Cnot, vec![c, t])
    }
    pub fn swap(a: usize, b: usize) -> Self {
        Self::new(GateKind::Swap, vec![a, b])
    }
    pub fn cswap(c: usize, a: usize, b: usize) -> Self {
        Self::new(GateKind::ControlledSwap, vec![c, a, b])
    }
    pub fn rbs(a: usize, b: usize, theta: f64) -> Self {
        Self::new(GateKind::Rbs(theta), vec![a, b])
    }
    pub fn cry(c: usize, t: usize, theta: f64) -> Self {
        Self::new(GateKind::ControlledRy(theta), vec![c, t])
    }
    pub fn ry(q: usize, theta: f64) -> Self {
        Self::new(GateKind::Ry(theta), vec![q])
    }
    pub fn mux(base: MuxBase, targets: Vec<usize>, select: Vec<usize>, angles: Vec<f64>) -> Self {
        Self::new(GateKind::Multiplexed { base, select, angles }, targets)
    }

    /// Adds a control on `q` requiring value `v`.
    pub fn with_control(mut self, q: usize, v: bool) -> Self {
        self.controls.push((q, v));
        self
    }

    pub fn with_controls(mut self, cs: &[(usize, bool)]) -> Self {
        self.controls.extend_from_slice(cs);
        self
    }

    /// Every qubit the gate reads or writes.
    pub fn support(&self) -> Vec<usize> {
        let mut s = self.qubits.clone();
        s.extend(self.controls.iter().map(|c| c.0));
        if let GateKind::Multiplexed { select, .. } = &self.kind {
            s.extend_from_slice(select);
        }
        s
    }

    pub fn inverse(&self) -> GateOp {
        let kind = match &self.kind {
            GateKind::Phase(p) => GateKind::Phase(-p),
            GateKind::ControlledPhase(p) => GateKind::ControlledPhase(-p),
            GateKind::Rbs(t) => GateKind::Rbs(-t),
            GateKind::ControlledRy(t) => GateKind::ControlledRy(-t),
            GateKind::Ry(t) => GateKind::Ry(-t),
            GateKind::Multiplexed { base, select, angles } => GateKind::Multiplexed {
                base: *base,
                select: select.clone(),
                angles: angles.iter().map(|a| -a).collect(),
            },
            k => k.clone(),
        };
        GateOp { kind, qubits: self.qubits.clone(), controls: self.controls.clone() }
    }

    /// True when the gate permutes basis states (no superposition, no phase).
    pub fn is_classical(&self) -> bool {
        matches!(
            self.kind,
            GateKind::PauliX | GateKind::Cnot | GateKind::Swap | GateKind::ControlledSwap
        )
    }

    /// Checks indices against a register size.
    pub fn validate(&self, num_qubits: usize) -> Result<()> {
        if self.qubits.len() != self.kind.arity() {
            return invalid(format!(
                "{} expects {} qubits, got {}",
                self.kind.name(),
                self.kind.arity(),
                self.qubits.len()
            ));
        }
        if let GateKind::Multiplexed { select, angles, .. } = &self.kind {
            if angles.len() != 1usize << select.len() {
                return invalid("multiplexed gate needs 2^|select| angles");
            }
        }
        let s = self.support();
        for (i, &q) in s.iter().enumerate() {
            if q >= num_qubits {
                return invalid(format!("qubit {q} out of range for {num_qubits} qubits"));
            }
            if s[..i].contains(&q) {
                return invalid(format!("duplicate qubit {q} in {}", self.kind.name()));
            }
        }
        Ok(())
    }

    fn lower(&self) -> Lowered {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut controls = self.controls.clone();
        let mut select = Vec::new();
        let (targets, mats) = match &self.kind {
            GateKind::Hadamard => (self.qubits.clone(), vec![Local::One([c(h), c(h), c(h), c(-h)])]),
            GateKind::PauliX => (self.qubits.clone(), vec![Local::One([ZERO, ONE, ONE, ZERO])]),
            GateKind::Phase(p) => (self.qubits.clone(), vec![phase_mat(*p)]),
            GateKind::Ry(t) => (self.qubits.clone(), vec![ry_mat(*t)]),
            GateKind::ControlledPhase(p) => {
                controls.push((self.qubits[0], true));
                (vec![self.qubits[1]], vec![phase_mat(*p)])
            }
            GateKind::Cnot => {
                controls.push((self.qubits[0], true));
                (vec![self.qubits[1]], vec![Local::One([ZERO, ONE, ONE, ZERO])])
            }
            GateKind::ControlledRy(t) => {
                controls.push((self.qubits[0], true));
                (vec![self.qubits[1]], vec![ry_mat(*t)])
            }
            GateKind::Swap => (self.qubits.clone(), vec![swap_mat()]),
            GateKind::ControlledSwap => {
                controls.push((self.qubits[0], true));
                (vec![self.qubits[1], self.qubits[2]], vec![swap_mat()])
            }
            GateKind::Rbs(t) => (self.qubits.clone(), vec![rbs_mat(*t)]),
            GateKind::Multiplexed { base, select: sel, angles } => {
                select = sel.clone();
                let mats = angles
                    .iter()
                    .map(|&a| match base {
                        MuxBase::Ry => ry_mat(a),
                        MuxBase::Phase => phase_mat(a),
                        MuxBase::Rbs => rbs_mat(a),
                    })
                    .collect();
                (self.qubits.clone(), mats)
            }
        };
        Lowered { targets, controls, select, mats }
    }

    /// Full 2^n unitary of this gate on an n-qubit register (test helper).
    pub fn matrix(&self, num_qubits: usize) -> Result<DMatrix<C64>> {
        let dim = 1usize << num_qubits;
        let mut m = DMatrix::zeros(dim, dim);
        for col in 0..dim {
            let mut s = QuantumState::new_basis_state(num_qubits, col)?;
            s.apply_mut(self)?;
            for (row, a) in s.amplitudes().iter().enumerate() {
                m[(row, col)] = *a;
            }
        }
        Ok(m)
    }
}

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

fn phase_mat(p: f64) -> Local {
    Local::One([ONE, ZERO, ZERO, C64::from_polar(1.0, p)])
}

fn ry_mat(t: f64) -> Local {
    let (s, co) = (t / 2.0).sin_cos();
    Local::One([c(co), c(-s), c(s), c(co)])
}

fn swap_mat() -> Local {
    let mut m = [ZERO; 16];
    m[0] = ONE;
    m[4 + 2] = ONE;
    m[8 + 1] = ONE;
    m[15] = ONE;
    Local::Two(m)
}

fn rbs_mat(t: f64) -> Local {
    let (s, co) = t.sin_cos();
    let mut m = [ZERO; 16];
    m[0] = ONE;
    m[4 + 1] = c(co);
    m[4 + 2] = c(s);
    m[8 + 1] = c(-s);
    m[8 + 2] = c(co);
    m[15] = ONE;
    Local::Two(m)
}

#[derive(Clone, Copy, Debug)]
enum Local {
    One([C64; 4]),
    Two([C64; 16]),
}

struct Lowered {
    targets: Vec<usize>,
    controls: Vec<(usize, bool)>,
    select: Vec<usize>,
    mats: Vec<Local>,
}

impl Lowered {
    fn masks(&self) -> (u128, u128) {
        let mut m = 0u128;
        let mut v = 0u128;
        for &(q, b) in &self.controls {
            m |= 1u128 << q;
            if b {
                v |= 1u128 << q;
            }
        }
        (m, v)
    }

    #[inline]
    fn select_index(&self, key: u128) -> usize {
        let mut s = 0usize;
        for (b, &q) in self.select.iter().enumerate() {
            s |= (((key >> q) & 1) as usize) << b;
        }
        s
    }
}

/// Outcome of measuring a subset of qubits. Bit `i` of `outcome` is the value
/// of `measured_qubits[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub measured_qubits: Vec<usize>,
    pub outcome: u64,
    pub probability: f64,
}

impl MeasurementRecord {
    /// Outcome as a bitstring, first measured qubit first.
    pub fn bitstring(&self) -> String {
        (0..self.measured_qubits.len())
            .map(|i| if (self.outcome >> i) & 1 == 1 { '1' } else { '0' })
            .collect()
    }
}

/// Dense amplitude vector over `num_qubits` qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantumState {
    num_qubits: usize,
    amps: Vec<C64>,
}

fn check_distinct(qubits: &[usize], n: usize) -> Result<()> {
    for (i, &q) in qubits.iter().enumerate() {
        if q >= n {
            return invalid(format!("qubit {q} out of range for {n} qubits"));
        }
        if qubits[..i].contains(&q) {
            return invalid(format!("duplicate qubit {q}"));
        }
    }
    Ok(())
}

/// Picks an index from `probs` by inverse CDF of one uniform draw.
pub(crate) fn sample_index(probs: &[f64], rng: &mut Rng) -> usize {
    let total: f64 = probs.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

impl QuantumState {
    /// |index> on `num_qubits` qubits.
    pub fn new_basis_state(num_qubits: usize, index: usize) -> Result<Self> {
        if num_qubits > DENSE_QUBIT_GUARD {
            return Err(Error::Resource(format!(
                "{num_qubits} qubits exceeds the dense guard of {DENSE_QUBIT_GUARD}"
            )));
        }
        let dim = 1usize << num_qubits;
        if index >= dim {
            return invalid(format!("basis index {index} out of range for {num_qubits} qubits"));
        }
        let mut amps = vec![ZERO; dim];
        amps[index] = ONE;
        Ok(QuantumState { num_qubits, amps })
    }

    /// Wraps an amplitude vector. Its length must be a power of two and its
    /// norm 1 within 1e-10.
    pub fn from_amplitudes(amps: Vec<C64>) -> Result<Self> {
        let dim = amps.len();
        if dim == 0 || !dim.is_power_of_two() {
            return invalid("amplitude vector length must be a power of two");
        }
        let n = dim.trailing_zeros() as usize;
        if n > DENSE_QUBIT_GUARD {
            return Err(Error::Resource(format!("{n} qubits exceeds the dense guard")));
        }
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-10 {
            return invalid(format!("state norm^2 {norm} is not 1"));
        }
        Ok(QuantumState { num_qubits: n, amps })
    }

    /// Normalized amplitude encoding of a real vector, zero-padded to a power of two.
    pub fn from_real(x: &[f64]) -> Result<Self> {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return invalid("cannot encode a zero or non-finite vector");
        }
        let dim = x.len().next_power_of_two().max(1);
        let mut amps = vec![ZERO; dim];
        for (a, v) in amps.iter_mut().zip(x) {
            *a = c(v / norm);
        }
        Self::from_amplitudes(amps)
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn inner(&self, other: &QuantumState) -> C64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }

    /// Appends `extra` qubits in |0> above the current register.
    pub fn extend(&self, extra: usize) -> Result<Self> {
        let n = self.num_qubits + extra;
        if n > DENSE_QUBIT_GUARD {
            return Err(Error::Resource(format!("{n} qubits exceeds the dense guard")));
        }
        let mut amps = vec![ZERO; 1 << n];
        amps[..self.amps.len()].copy_from_slice(&self.amps);
        Ok(QuantumState { num_qubits: n, amps })
    }

    /// Returns a new state with `gate` applied.
    pub fn apply_gate(&self, gate: &GateOp) -> Result<Self> {
        let mut s = self.clone();
        s.apply_mut(gate)?;
        Ok(s)
    }

    /// In-place gate application.
    pub fn apply_mut(&mut self, gate: &GateOp) -> Result<()> {
        gate.validate(self.num_qubits)?;
        let low = gate.lower();
        let (cm, cv) = low.masks();
        let (cm, cv) = (cm as usize, cv as usize);
        let amps = &mut self.amps;
        match low.targets.len() {
            1 => {
                let t = low.targets[0];
                let mt = 1usize << t;
                let half = amps.len() >> 1;
                for r in 0..half {
                    let i0 = ((r >> t) << (t + 1)) | (r & (mt - 1));
                    if i0 & cm != cv {
                        continue;
                    }
                    let m = match low.mats[if low.select.is_empty() { 0 } else { low.select_index(i0 as u128) }] {
                        Local::One(m) => m,
                        Local::Two(_) => unreachable!(),
                    };
                    let i1 = i0 | mt;
                    let (a0, a1) = (amps[i0], amps[i1]);
                    amps[i0] = m[0] * a0 + m[1] * a1;
                    amps[i1] = m[2] * a0 + m[3] * a1;
                }
            }
            2 => {
                let (qa, qb) = (low.targets[0], low.targets[1]);
                let (ma, mb) = (1usize << qa, 1usize << qb);
                let (lo, hi) = if qa < qb { (qa, qb) } else { (qb, qa) };
                let quarter = amps.len() >> 2;
                for r in 0..quarter {
                    let x = ((r >> lo) << (lo + 1)) | (r & ((1 << lo) - 1));
                    let base = ((x >> hi) << (hi + 1)) | (x & ((1 << hi) - 1));
                    if base & cm != cv {
                        continue;
                    }
                    let m = match low.mats[if low.select.is_empty() { 0 } else { low.select_index(base as u128) }] {
                        Local::Two(m) => m,
                        Local::One(_) => unreachable!(),
                    };
                    let idx = [base, base | mb, base | ma, base | ma | mb];
                    let v = [amps[idx[0]], amps[idx[1]], amps[idx[2]], amps[idx[3]]];
                    for (row, &i) in idx.iter().enumerate() {
                        amps[i] = m[4 * row] * v[0]
                            + m[4 * row + 1] * v[1]
                            + m[4 * row + 2] * v[2]
                            + m[4 * row + 3] * v[3];
                    }
                }
            }
            _ => unreachable!(),
        }
        Ok(())
    }

    /// Probability of each outcome of `qubits` (bit i of the outcome index
    /// corresponds to `qubits[i]`).
    pub fn probabilities(&self, qubits: &[usize]) -> Result<Vec<f64>> {
        check_distinct(qubits, self.num_qubits)?;
        if qubits.len() > 24 {
            return Err(Error::Resource("too many measured qubits".into()));
        }
        let mut p = vec![0.0; 1 << qubits.len()];
        for (i, a) in self.amps.iter().enumerate() {
            p[extract_bits(i as u128, qubits)] += a.norm_sqr();
        }
        Ok(p)
    }

    /// Projects `qubits` onto `outcome` and renormalizes.
    pub fn postselect_subset(&self, qubits: &[usize], outcome: u64) -> Result<(Self, f64)> {
        check_distinct(qubits, self.num_qubits)?;
        let mut amps = self.amps.clone();
        let mut p = 0.0;
        for (i, a) in amps.iter_mut().enumerate() {
            if extract_bits(i as u128, qubits) as u64 == outcome {
                p += a.norm_sqr();
            } else {
                *a = ZERO;
            }
        }
        if p < POSTSELECT_FLOOR {
            return Err(Error::DegeneratePostselection(p));
        }
        let s = 1.0 / p.sqrt();
        amps.iter_mut().for_each(|a| *a *= s);
        Ok((QuantumState { num_qubits: self.num_qubits, amps }, p))
    }

    /// Renormalized branch with `qubit` = `outcome`, plus its probability.
    pub fn postselect(&self, qubit: usize, outcome: u8) -> Result<(Self, f64)> {
        self.postselect_subset(&[qubit], outcome as u64)
    }

    /// Born-rule measurement of `qubits`; consumes one uniform draw.
    pub fn measure_subset(&self, qubits: &[usize], rng: &mut Rng) -> Result<(MeasurementRecord, Self)> {
        let probs = self.probabilities(qubits)?;
        let k = sample_index(&probs, rng);
        let (s, p) = self.postselect_subset(qubits, k as u64)?;
        Ok((
            MeasurementRecord { measured_qubits: qubits.to_vec(), outcome: k as u64, probability: p },
            s,
        ))
    }

    /// Diagonal of the reduced density matrix over `keep` (at most 12 qubits).
    pub fn reduced_diagonal(&self, keep: &[usize]) -> Result<Vec<f64>> {
        if keep.len() > 12 {
            return Err(Error::Resource("reduced_diagonal keeps at most 12 qubits".into()));
        }
        self.probabilities(keep)
    }

    /// Reduced density matrix over `keep` (at most 8 qubits). Row/column
    /// index bit i corresponds to `keep[i]`.
    pub fn reduced_density(&self, keep: &[usize]) -> Result<DMatrix<C64>> {
        if keep.len() > 8 {
            return Err(Error::Resource("reduced_density keeps at most 8 qubits".into()));
        }
        check_distinct(keep, self.num_qubits)?;
        let d = 1usize << keep.len();
        let mut rho = DMatrix::zeros(d, d);
        let keep_mask: usize = keep.iter().map(|q| 1usize << q).sum();
        let mut groups: HashMap<usize, Vec<(usize, C64)>> = HashMap::default();
        for (i, a) in self.amps.iter().enumerate() {
            if a.norm_sqr() == 0.0 {
                continue;
            }
            groups.entry(i & !keep_mask).or_default().push((extract_bits(i as u128, keep), *a));
        }
        for v in groups.values() {
            for &(r, ar) in v {
                for &(cc, ac) in v {
                    rho[(r, cc)] += ar * ac.conj();
                }
            }
        }
        Ok(rho)
    }
}

pub(crate) fn extract_bits(key: u128, qubits: &[usize]) -> usize {
    let mut k = 0usize;
    for (b, &q) in qubits.iter().enumerate() {
        k |= (((key >> q) & 1) as usize) << b;
    }
    k
}

/// Sparse statevector for wide registers whose support stays small.
#[derive(Clone, Debug)]
pub struct SparseState {
    num_qubits: usize,
    amps: HashMap<u128, C64>,
}

const PRUNE: f64 = 1e-32;

impl SparseState {
    pub fn new_basis_state(num_qubits: usize, key: u128) -> Result<Self> {
        if num_qubits > SPARSE_QUBIT_GUARD {
            return Err(Error::Resource(format!("{num_qubits} qubits exceeds the sparse guard")));
        }
        if num_qubits < 128 && key >> num_qubits != 0 {
            return invalid("basis key out of range");
        }
        let mut amps = HashMap::default();
        amps.insert(key, ONE);
        Ok(SparseState { num_qubits, amps })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn support_size(&self) -> usize {
        self.amps.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn amplitude(&self, key: u128) -> C64 {
        self.amps.get(&key).copied().unwrap_or(ZERO)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&u128, &C64)> {
        self.amps.iter()
    }

    pub fn apply_mut(&mut self, gate: &GateOp) -> Result<()> {
        gate.validate(self.num_qubits)?;
        let low = gate.lower();
        let (cm, cv) = low.masks();
        let tmask: u128 = low.targets.iter().map(|&q| 1u128 << q).sum();
        let k = low.targets.len();
        let mut groups: HashMap<u128, [C64; 4]> = HashMap::with_capacity_and_hasher(self.amps.len(), Default::default());
        let mut out: HashMap<u128, C64> = HashMap::with_capacity_and_hasher(self.amps.len(), Default::default());
        let rev: Vec<usize> = low.targets.iter().rev().copied().collect();
        for (&key, &a) in &self.amps {
            if key & cm != cv {
                *out.entry(key).or_insert(ZERO) += a;
                continue;
            }
            let l = extract_bits(key, &rev);
            groups.entry(key & !tmask).or_insert([ZERO; 4])[l] += a;
        }
        for (base, v) in groups {
            let m = low.mats[if low.select.is_empty() { 0 } else { low.select_index(base) }];
            let dim = 1usize << k;
            for row in 0..dim {
                let mut acc = ZERO;
                for col in 0..dim {
                    let e = match m {
                        Local::One(m) => m[2 * row + col],
                        Local::Two(m) => m[4 * row + col],
                    };
                    acc += e * v[col];
                }
                if acc.norm_sqr() > PRUNE {
                    let mut key = base;
                    for (i, &q) in low.targets.iter().enumerate() {
                        if (row >> (k - 1 - i)) & 1 == 1 {
                            key |= 1u128 << q;
                        }
                    }
                    *out.entry(key).or_insert(ZERO) += acc;
                }
            }
        }
        out.retain(|_, a| a.norm_sqr() > PRUNE);
        self.amps = out;
        Ok(())
    }

    pub fn probabilities(&self, qubits: &[usize]) -> Result<Vec<f64>> {
        check_distinct(qubits, self.num_qubits)?;
        if qubits.len() > 24 {
            return Err(Error::Resource("too many measured qubits".into()));
        }
        let mut p = vec![0.0; 1 << qubits.len()];
        for (&k, a) in &self.amps {
            p[extract_bits(k, qubits)] += a.norm_sqr();
        }
        Ok(p)
    }

    pub fn postselect_subset(&self, qubits: &[usize], outcome: u64) -> Result<(Self, f64)> {
        check_distinct(qubits, self.num_qubits)?;
        let mut amps: HashMap<u128, C64> = self
            .amps
            .iter()
            .filter(|(&k, _)| extract_bits(k, qubits) as u64 == outcome)
            .map(|(&k, &a)| (k, a))
            .collect();
        let p: f64 = amps.values().map(|a| a.norm_sqr()).sum();
        if p < POSTSELECT_FLOOR {
            return Err(Error::DegeneratePostselection(p));
        }
        let s = 1.0 / p.sqrt();
        amps.values_mut().for_each(|a| *a *= s);
        Ok((SparseState { num_qubits: self.num_qubits, amps }, p))
    }

    pub fn measure_subset(&self, qubits: &[usize], rng: &mut Rng) -> Result<(MeasurementRecord, Self)> {
        let probs = self.probabilities(qubits)?;
        let k = sample_index(&probs, rng);
        let (s, p) = self.postselect_subset(qubits, k as u64)?;
        Ok((
            MeasurementRecord { measured_qubits: qubits.to_vec(), outcome: k as u64, probability: p },
            s,
        ))
    }

    /// Amplitudes on `qubits` (bit i = `qubits[i]`) for basis states whose
    /// other qubits are all zero.
    pub fn register_amplitudes(&self, qubits: &[usize]) -> Result<Vec<C64>> {
        if qubits.len() > DENSE_QUBIT_GUARD {
            return Err(Error::Resource("register too wide to extract".into()));
        }
        let mask: u128 = qubits.iter().map(|&q| 1u128 << q).sum();
        let mut v = vec![ZERO; 1 << qubits.len()];
        for (&k, &a) in &self.amps {
            if k & !mask == 0 {
                v[extract_bits(k, qubits)] += a;
            }
        }
        Ok(v)
    }
}

/// Trace distance 0.5 * ||rho - sigma||_1 of two Hermitian matrices.
pub fn trace_distance(rho: &DMatrix<C64>, sigma: &DMatrix<C64>) -> f64 {
    let d = rho - sigma;
    let h = (&d + d.adjoint()) * C64::new(0.5, 0.0);
    let eig = nalgebra::SymmetricEigen::new(h);
    0.5 * eig.eigenvalues.iter().map(|e| e.abs()).sum::<f64>()
}

pub fn new_basis_state(num_qubits: usize, index: usize) -> Result<QuantumState> {
    QuantumState::new_basis_state(num_qubits, index)
}

pub fn apply_gate(state: &QuantumState, gate: &GateOp) -> Result<QuantumState> {
    state.apply_gate(gate)
}

pub fn measure_subset(
    state: &QuantumState,
    qubits: &[usize],
    rng: &mut Rng,
) -> Result<(MeasurementRecord, QuantumState)> {
    state.measure_subset(qubits, rng)
}

pub fn postselect(state: &QuantumState, qubit: usize, outcome: u8) -> Result<(QuantumState, f64)> {
    state.postselect(qubit, outcome)
}

pub fn reduced_diagonal(state: &QuantumState, keep: &[usize]) -> Result<Vec<f64>> {
    state.reduced_diagonal(keep)
}

pub fn reduced_density(state: &QuantumState, keep: &[usize]) -> Result<DMatrix<C64>> {
    state.reduced_density(keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};

    fn close(a: C64, b: C64) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn basis_states() {
        let s = new_basis_state(2, 3).unwrap();
        assert_eq!(s.amplitudes()[3], ONE);
        assert!(matches!(new_basis_state(27, 0), Err(Error::Resource(_))));
        assert!(new_basis_state(2, 4).is_err());
    }

    #[test]
    fn hadamard_and_rbs() {
        let s = new_basis_state(1, 0).unwrap().apply_gate(&GateOp::h(0)).unwrap();
        assert!(close(s.amplitudes()[0], c(FRAC_1_SQRT_2)));
        assert!(close(s.amplitudes()[1], c(FRAC_1_SQRT_2)));
        // qubit a = 1 is local |10>; RBS(pi/2) moves it to b.
        let s = new_basis_state(2, 0b01).unwrap().apply_gate(&GateOp::rbs(0, 1, FRAC_PI_2)).unwrap();
        assert!(close(s.amplitudes()[0b10], ONE));
        let s0 = QuantumState::from_real(&[0.1, 0.7, -0.3, 0.2]).unwrap();
        assert_eq!(s0.apply_gate(&GateOp::rbs(1, 0, 0.0)).unwrap(), s0);
    }

    #[test]
    fn rbs_matrix_layout() {
        let t = 0.3;
        let m = GateOp::rbs(1, 0, t).matrix(2).unwrap();
        // local index = (q1 << 1) | q0 coincides with the global index here
        assert!(close(m[(1, 1)], c(t.cos())));
        assert!(close(m[(1, 2)], c(t.sin())));
        assert!(close(m[(2, 1)], c(-t.sin())));
        assert!(close(m[(2, 2)], c(t.cos())));
        assert!(close(m[(0, 0)], ONE) && close(m[(3, 3)], ONE));
    }

    #[test]
    fn measurement_examples() {
        let mut bell = new_basis_state(2, 0).unwrap();
        bell.apply_mut(&GateOp::h(0)).unwrap();
        bell.apply_mut(&GateOp::cnot(0, 1)).unwrap();
        let p = bell.probabilities(&[0, 1]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[3] - 0.5).abs() < 1e-12);
        let mut rng = seeded(1);
        let (rec, post) = bell.measure_subset(&[0, 1], &mut rng).unwrap();
        assert!(rec.outcome == 0 || rec.outcome == 3);
        assert!((rec.probability - 0.5).abs() < 1e-12);
        assert!((post.norm_sqr() - 1.0).abs() < 1e-12);

        let s = new_basis_state(2, 0b10).unwrap();
        let (rec, _) = s.measure_subset(&[0], &mut rng).unwrap();
        assert_eq!(rec.outcome, 0);
        assert_eq!(rec.probability, 1.0);
    }

    #[test]
    fn postselect_examples() {
        let plus = new_basis_state(1, 0).unwrap().apply_gate(&GateOp::h(0)).unwrap();
        let (s, p) = postselect(&plus, 0, 0).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
        assert!(close(s.amplitudes()[0], ONE));
        let one = new_basis_state(1, 1).unwrap();
        assert!(matches!(postselect(&one, 0, 0), Err(Error::DegeneratePostselection(_))));
    }

    #[test]
    fn reduced_states() {
        let mut bell = new_basis_state(2, 0).unwrap();
        bell.apply_mut(&GateOp::h(0)).unwrap();
        bell.apply_mut(&GateOp::cnot(0, 1)).unwrap();
        let d = bell.reduced_diagonal(&[0]).unwrap();
        assert!((d[0] - 0.5).abs() < 1e-12 && (d[1] - 0.5).abs() < 1e-12);
        let rho = bell.reduced_density(&[0]).unwrap();
        assert!(close(rho[(0, 0)], c(0.5)) && close(rho[(0, 1)], ZERO));
        let s = QuantumState::from_real(&[0.6, 0.0, 0.8, 0.0]).unwrap();
        let full = s.reduced_diagonal(&[0, 1]).unwrap();
        assert!((full[0] - 0.36).abs() < 1e-12 && (full[2] - 0.64).abs() < 1e-12);
        // separable: |+> (x) |1>; marginal on qubit 0 is a rank-1 projector
        let mut p = new_basis_state(2, 0b10).unwrap();
        p.apply_mut(&GateOp::h(0)).unwrap();
        let rho = p.reduced_density(&[0]).unwrap();
        let r2 = &rho * &rho;
        assert!((r2 - &rho).norm() < 1e-12);
        assert!(s.reduced_diagonal(&(0..13).collect::<Vec<_>>()).is_err());
    }

    #[test]
    fn sparse_matches_dense() {
        let gates = vec![
            GateOp::h(0),
            GateOp::cnot(0, 2),
            GateOp::rbs(2, 1, 0.4),
            GateOp::cp(1, 0, 0.9),
            GateOp::cswap(0, 1, 2),
            GateOp::cry(2, 0, 1.1).with_control(1, false),
            GateOp::mux(MuxBase::Ry, vec![1], vec![0, 2], vec![0.1, 0.2, 0.3, 0.4]),
            GateOp::mux(MuxBase::Rbs, vec![0, 2], vec![1], vec![0.5, -0.7]),
        ];
        let mut d = new_basis_state(3, 0).unwrap();
        let mut s = SparseState::new_basis_state(3, 0).unwrap();
        for g in &gates {
            d.apply_mut(g).unwrap();
            s.apply_mut(g).unwrap();
        }
        for i in 0..8 {
            assert!((d.amplitudes()[i] - s.amplitude(i as u128)).norm() < 1e-12);
        }
    }

    #[test]
    fn bad_gates_rejected() {
        let s = new_basis_state(2, 0).unwrap();
        assert!(s.apply_gate(&GateOp::cnot(1, 1)).is_err());
        assert!(s.apply_gate(&GateOp::h(2)).is_err());
        assert!(s.apply_gate(&GateOp::h(0).with_control(0, true)).is_err());
    }
}
