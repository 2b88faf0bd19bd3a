//! Structured circuits: QFT, DST-I/DCT-I, unary data loaders and the
//! unary-to-binary converter, plus the direct matrices they are tested against.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::statevector::{GateKind, GateOp, MuxBase, QuantumState, SparseState};

/// Ordered gate list over a fixed register.
#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    pub num_qubits: usize,
    pub gates: Vec<GateOp>,
}

#[derive(Serialize)]
struct GateJson<'a> {
    kind: &'a str,
    qubits: &'a [usize],
    params: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    controls: Vec<(usize, bool)>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    select: Vec<usize>,
}

impl Circuit {
    pub fn new(num_qubits: usize) -> Self {
        Circuit { num_qubits, gates: Vec::new() }
    }

    pub fn push(&mut self, g: GateOp) {
        self.gates.push(g);
    }

    pub fn extend(&mut self, gs: impl IntoIterator<Item = GateOp>) {
        self.gates.extend(gs);
    }

    pub fn gate_count(&self) -> usize {
        self.gates.len()
    }

    /// Longest chain of gates sharing a qubit (ASAP layering).
    pub fn depth(&self) -> usize {
        let mut level = vec![0usize; self.num_qubits];
        let mut depth = 0;
        for g in &self.gates {
            let s = g.support();
            let l = 1 + s.iter().map(|&q| level[q]).max().unwrap_or(0);
            for q in s {
                level[q] = l;
            }
            depth = depth.max(l);
        }
        depth
    }

    /// Reversed gate list with inverted parameters.
    pub fn inverse(&self) -> Circuit {
        Circuit {
            num_qubits: self.num_qubits,
            gates: self.gates.iter().rev().map(GateOp::inverse).collect(),
        }
    }

    /// Same circuit with an extra control on every gate.
    pub fn controlled(&self, q: usize, v: bool) -> Circuit {
        Circuit {
            num_qubits: self.num_qubits,
            gates: self.gates.iter().cloned().map(|g| g.with_control(q, v)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for g in &self.gates {
            g.validate(self.num_qubits)?;
        }
        Ok(())
    }

    pub fn apply(&self, state: &QuantumState) -> Result<QuantumState> {
        let mut s = state.clone();
        self.apply_mut(&mut s)?;
        Ok(s)
    }

    pub fn apply_mut(&self, state: &mut QuantumState) -> Result<()> {
        if state.num_qubits() != self.num_qubits {
            return invalid(format!(
                "circuit on {} qubits applied to a {}-qubit state",
                self.num_qubits,
                state.num_qubits()
            ));
        }
        for g in &self.gates {
            state.apply_mut(g)?;
        }
        Ok(())
    }

    pub fn apply_sparse(&self, state: &mut SparseState) -> Result<()> {
        for g in &self.gates {
            state.apply_mut(g)?;
        }
        Ok(())
    }

    /// Runs a circuit of permutation gates on a classical bit vector.
    pub fn apply_classical(&self, bits: &mut [bool]) -> Result<()> {
        if bits.len() != self.num_qubits {
            return invalid("bit vector length differs from circuit width");
        }
        for g in &self.gates {
            if !g.is_classical() {
                return invalid(format!("{} is not a permutation gate", g.kind.name()));
            }
            if !g.controls.iter().all(|&(q, v)| bits[q] == v) {
                continue;
            }
            let q = &g.qubits;
            match g.kind {
                GateKind::PauliX => bits[q[0]] = !bits[q[0]],
                GateKind::Cnot => {
                    if bits[q[0]] {
                        bits[q[1]] = !bits[q[1]]
                    }
                }
                GateKind::Swap => bits.swap(q[0], q[1]),
                GateKind::ControlledSwap => {
                    if bits[q[0]] {
                        bits.swap(q[1], q[2])
                    }
                }
                _ => unreachable!(),
            }
        }
        Ok(())
    }

    /// Gate list as JSON: kind, qubits, parameters (and controls/select when present).
    pub fn to_json(&self) -> serde_json::Value {
        let gates: Vec<_> = self
            .gates
            .iter()
            .map(|g| {
                let select = match &g.kind {
                    GateKind::Multiplexed { select, .. } => select.clone(),
                    _ => vec![],
                };
                serde_json::to_value(GateJson {
                    kind: g.kind.name(),
                    qubits: &g.qubits,
                    params: g.kind.params(),
                    controls: g.controls.clone(),
                    select,
                })
                .expect("gate serializes")
            })
            .collect();
        serde_json::json!({
            "num_qubits": self.num_qubits,
            "depth": self.depth(),
            "gate_count": self.gates.len(),
            "gates": gates,
        })
    }

    /// Full unitary, column by column on basis states (small registers only).
    pub fn matrix(&self) -> Result<DMatrix<C64>> {
        if self.num_qubits > 12 {
            return Err(Error::Resource("matrix extraction limited to 12 qubits".into()));
        }
        let dim = 1usize << self.num_qubits;
        let mut m = DMatrix::zeros(dim, dim);
        for col in 0..dim {
            let s = self.apply(&QuantumState::new_basis_state(self.num_qubits, col)?)?;
            for (row, a) in s.amplitudes().iter().enumerate() {
                m[(row, col)] = *a;
            }
        }
        Ok(m)
    }
}

// ---------------------------------------------------------------- QFT

/// QFT gates on `qubits` (qubits[0] least significant): |x> -> N^{-1/2} sum_y w^{xy} |y>,
/// w = e^{2 pi i / N}.
pub fn qft_gates(qubits: &[usize]) -> Vec<GateOp> {
    let k = qubits.len();
    let mut g = Vec::new();
    for j in (0..k).rev() {
        g.push(GateOp::h(qubits[j]));
        for m in (0..j).rev() {
            g.push(GateOp::cp(qubits[m], qubits[j], PI / (1u64 << (j - m)) as f64));
        }
    }
    for j in 0..k / 2 {
        g.push(GateOp::swap(qubits[j], qubits[k - 1 - j]));
    }
    g
}

/// QFT on k qubits, 1 <= k <= 24.
pub fn qft_circuit(k: usize) -> Result<Circuit> {
    if !(1..=24).contains(&k) {
        return invalid(format!("qft size k={k} outside 1..=24"));
    }
    let mut c = Circuit::new(k);
    c.extend(qft_gates(&(0..k).collect::<Vec<_>>()));
    Ok(c)
}

/// Normalized DFT matrix with entries w^{jk}/sqrt(N).
pub fn dft_matrix(n: usize) -> DMatrix<C64> {
    let s = 1.0 / (n as f64).sqrt();
    DMatrix::from_fn(n, n, |j, k| C64::from_polar(s, 2.0 * PI * ((j * k) % n) as f64 / n as f64))
}

// ------------------------------------------------------- arithmetic helpers

/// Adds 1 mod 2^k to `reg` (reg[0] least significant), under extra controls.
pub fn increment_gates(reg: &[usize], controls: &[(usize, bool)]) -> Vec<GateOp> {
    let mut g = Vec::new();
    for i in (0..reg.len()).rev() {
        let mut op = GateOp::x(reg[i]).with_controls(controls);
        for &q in &reg[..i] {
            op = op.with_control(q, true);
        }
        g.push(op);
    }
    g
}

/// Maps |v> to |-v mod 2^k> when `ctrl` is 1.
fn controlled_negate(reg: &[usize], ctrl: usize) -> Vec<GateOp> {
    let mut g: Vec<GateOp> = reg.iter().map(|&q| GateOp::cnot(ctrl, q)).collect();
    g.extend(increment_gates(reg, &[(ctrl, true)]));
    g
}

// ----------------------------------------------------------- DST-I / DCT-I

/// DST-I of order N-1 on `value` (k qubits, N = 2^k) using one ancilla that
/// must start in |0>. Input supported on 1..N-1 in the ancilla-0 half maps to
/// the orthonormal transform there; index 0 maps to 0 by projection upstream.
pub fn dst_gates(value: &[usize], anc: usize) -> Vec<GateOp> {
    let mut u_odd = vec![GateOp::h(anc), GateOp::phase(anc, PI)];
    u_odd.extend(controlled_negate(value, anc));
    let mut reg = value.to_vec();
    reg.push(anc);
    let mut g = u_odd.clone();
    g.extend(qft_gates(&reg));
    g.extend(u_odd.iter().rev().map(GateOp::inverse));
    // the Fourier step leaves a factor i on the sine branch
    g.push(GateOp::x(anc));
    g.push(GateOp::phase(anc, -PI / 2.0));
    g.push(GateOp::x(anc));
    g
}

/// DCT-I of order N+1 on the (k+1)-qubit register `value ++ [anc]`, acting on
/// indices 0..=N (index N is value 0 with the ancilla set).
pub fn dct_gates(value: &[usize], anc: usize) -> Vec<GateOp> {
    let mut e = vec![GateOp::h(anc)];
    let mut undo = GateOp::h(anc);
    for &q in value {
        undo = undo.with_control(q, false);
    }
    e.push(undo);
    e.extend(controlled_negate(value, anc));
    let mut reg = value.to_vec();
    reg.push(anc);
    let mut g = e.clone();
    g.extend(qft_gates(&reg));
    g.extend(e.iter().rev().map(GateOp::inverse));
    g
}

/// DST circuit on k+1 qubits (value 0..k, ancilla k).
pub fn dst_circuit(k: usize) -> Result<Circuit> {
    if !(1..=23).contains(&k) {
        return invalid(format!("unsupported DST size 2^{k}"));
    }
    let mut c = Circuit::new(k + 1);
    c.extend(dst_gates(&(0..k).collect::<Vec<_>>(), k));
    Ok(c)
}

pub fn dct_circuit(k: usize) -> Result<Circuit> {
    if !(1..=23).contains(&k) {
        return invalid(format!("unsupported DCT size 2^{k}"));
    }
    let mut c = Circuit::new(k + 1);
    c.extend(dct_gates(&(0..k).collect::<Vec<_>>(), k));
    Ok(c)
}

/// size x size orthonormal DST-I, sqrt(2/N) sin(pi i j / N), with row and column 0 zero.
pub fn dst_matrix(size: usize) -> DMatrix<f64> {
    let s = (2.0 / size as f64).sqrt();
    DMatrix::from_fn(size, size, |i, j| {
        if i == 0 || j == 0 {
            0.0
        } else {
            s * (PI * (i * j) as f64 / size as f64).sin()
        }
    })
}

/// (N+1)x(N+1) orthonormal DCT-I, sqrt(2/N) c_i c_j cos(pi i j / N), c_0 = c_N = 1/sqrt 2.
pub fn dct_matrix(size: usize) -> DMatrix<f64> {
    let s = (2.0 / size as f64).sqrt();
    let cw = |i: usize| if i == 0 || i == size { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
    DMatrix::from_fn(size + 1, size + 1, |i, j| {
        s * cw(i) * cw(j) * (PI * (i * j) as f64 / size as f64).cos()
    })
}

fn log2_exact(size: usize) -> Result<usize> {
    if size < 2 || !size.is_power_of_two() {
        return invalid(format!("size {size} must be a power of two >= 2"));
    }
    Ok(size.trailing_zeros() as usize)
}

fn check_real(amps: &[C64]) -> Result<()> {
    if amps.iter().any(|a| a.im.abs() > 1e-12) {
        return invalid("strict mode requires a real input vector");
    }
    Ok(())
}

/// Orthonormal DST-I on a log2(size)-qubit state through the QFT circuit.
///
/// `strict` rejects complex input and any weight on index 0. Otherwise the
/// index-0 component is projected out and the rest renormalized.
pub fn dst_apply(state: &QuantumState, size: usize, strict: bool) -> Result<QuantumState> {
    let k = log2_exact(size)?;
    if state.num_qubits() != k {
        return invalid(format!("DST of size {size} needs a {k}-qubit state"));
    }
    let mut amps = state.amplitudes().to_vec();
    if strict {
        check_real(&amps)?;
        if amps[0].norm() > 1e-10 {
            return invalid("DST input must be supported on indices 1..size-1");
        }
    }
    amps[0] = C64::new(0.0, 0.0);
    let n2: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
    if n2 < 1e-28 {
        return invalid("DST input has no weight on indices 1..size-1");
    }
    let s = 1.0 / n2.sqrt();
    amps.iter_mut().for_each(|a| *a *= s);
    let ext = QuantumState::from_amplitudes(amps)?.extend(1)?;
    let out = dst_circuit(k)?.apply(&ext)?;
    let v: Vec<C64> = out.amplitudes()[..size].to_vec();
    renormalize_half(v)
}

/// Orthonormal DCT-I on a (log2(size)+1)-qubit state supported on 0..=size.
pub fn dct_apply(state: &QuantumState, size: usize, strict: bool) -> Result<QuantumState> {
    let k = log2_exact(size)?;
    if state.num_qubits() != k + 1 {
        return invalid(format!("DCT of size {size} needs a {}-qubit state", k + 1));
    }
    let amps = state.amplitudes();
    if strict {
        check_real(amps)?;
        if amps[size + 1..].iter().any(|a| a.norm() > 1e-10) {
            return invalid("DCT input must be supported on indices 0..=size");
        }
    }
    dct_circuit(k)?.apply(state)
}

fn renormalize_half(v: Vec<C64>) -> Result<QuantumState> {
    let n2: f64 = v.iter().map(|a| a.norm_sqr()).sum();
    if (n2 - 1.0).abs() > 1e-9 {
        return Err(Error::Verification(format!("sine branch carries weight {n2}, expected 1")));
    }
    QuantumState::from_amplitudes(v.into_iter().map(|a| a / n2.sqrt()).collect())
}

// ------------------------------------------------------------ angle trees

/// Binary heap of loader angles. Node j has children 2j, 2j+1; internal nodes
/// are 1..leaf_count, leaves leaf_count..2*leaf_count.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AngleTree {
    pub leaf_count: usize,
    /// Magnitudes in [0, pi/2]; index 0 unused.
    pub node_angles: Vec<f64>,
    /// +1 or -1 per leaf.
    pub leaf_signs: Vec<f64>,
    /// Subtree sums of squares r(j); index 0 unused.
    pub node_norms: Vec<f64>,
}

impl AngleTree {
    /// Builds a tree from internal angles and signs; norms start at r(1) = 1.
    pub fn from_angles(node_angles: Vec<f64>, leaf_signs: Vec<f64>) -> Result<Self> {
        let n = leaf_signs.len();
        if n == 0 || !n.is_power_of_two() || node_angles.len() != n {
            return invalid("angle tree needs power-of-two leaves and one angle slot per leaf");
        }
        let mut r = vec![0.0; 2 * n];
        r[1] = 1.0;
        for j in 1..n {
            let (s, c) = node_angles[j].sin_cos();
            r[2 * j] = r[j] * c * c;
            r[2 * j + 1] = r[j] * s * s;
        }
        Ok(AngleTree { leaf_count: n, node_angles, leaf_signs, node_norms: r })
    }

    /// Leaf count of the subtree rooted at j.
    pub fn subtree_leaves(&self, j: usize) -> usize {
        let depth = usize::BITS - 1 - j.leading_zeros();
        self.leaf_count >> depth
    }

    /// Leaf range [start, start + len) covered by node j.
    pub fn span(&self, j: usize) -> (usize, usize) {
        let depth = usize::BITS - 1 - j.leading_zeros();
        let len = self.leaf_count >> depth;
        ((j - (1usize << depth)) * len, len)
    }

    /// Angle the loader applies at node j: the magnitude, except at nodes whose
    /// children are leaves, where leaf signs fold into atan2.
    pub fn loader_angle(&self, j: usize) -> f64 {
        if 2 * j >= self.leaf_count {
            let (l, r) = (2 * j - self.leaf_count, 2 * j + 1 - self.leaf_count);
            (self.leaf_signs[r] * self.node_norms[2 * j + 1].sqrt())
                .atan2(self.leaf_signs[l] * self.node_norms[2 * j].sqrt())
        } else {
            self.node_angles[j]
        }
    }

    /// Unit vector encoded by the tree.
    pub fn reconstruct(&self) -> Vec<f64> {
        let n = self.leaf_count;
        let root = self.node_norms[1];
        (0..n).map(|i| self.leaf_signs[i] * (self.node_norms[n + i] / root).sqrt()).collect()
    }
}

/// Angle tree for x / ||x||; zero-norm subtrees get angle 0.
pub fn compute_loader_angles(x: &[f64]) -> Result<AngleTree> {
    let n = x.len();
    if n == 0 || !n.is_power_of_two() {
        return invalid("loader input length must be a power of two");
    }
    if x.iter().any(|v| !v.is_finite()) {
        return invalid("loader input must be finite");
    }
    let mut r = vec![0.0; 2 * n];
    for (i, v) in x.iter().enumerate() {
        r[n + i] = v * v;
    }
    for j in (1..n).rev() {
        r[j] = r[2 * j] + r[2 * j + 1];
    }
    if n == 1 {
        r[1] = r[1].max(x[0] * x[0]);
    }
    if r[1] == 0.0 {
        return invalid("cannot load the zero vector");
    }
    let mut angles = vec![0.0; n];
    for j in 1..n {
        if r[j] > 0.0 {
            angles[j] = (r[2 * j] / r[j]).sqrt().clamp(0.0, 1.0).acos();
        }
    }
    let signs = x.iter().map(|v| if *v < 0.0 { -1.0 } else { 1.0 }).collect();
    Ok(AngleTree { leaf_count: n, node_angles: angles, leaf_signs: signs, node_norms: r })
}

/// Loader gates on `qubits` (one per leaf): X on the first, then one RBS per
/// internal node, level by level.
pub fn unary_loader_gates(tree: &AngleTree, qubits: &[usize]) -> Vec<GateOp> {
    let mut g = vec![GateOp::x(qubits[0])];
    for j in 1..tree.leaf_count {
        let (start, len) = tree.span(j);
        g.push(GateOp::rbs(qubits[start], qubits[start + len / 2], tree.loader_angle(j)));
    }
    g
}

/// Unary loader on `leaf_count` qubits.
pub fn unary_loader_circuit(tree: &AngleTree) -> Result<Circuit> {
    if tree.leaf_count > 24 {
        return Err(Error::Resource("dense loader verification limited to 24 leaves".into()));
    }
    let mut c = Circuit::new(tree.leaf_count);
    c.extend(unary_loader_gates(tree, &(0..tree.leaf_count).collect::<Vec<_>>()));
    Ok(c)
}

/// Runs the loader's RBS cascade inside the one-hot subspace (any size).
pub fn loader_subspace_apply(tree: &AngleTree) -> Vec<f64> {
    let mut v = vec![0.0; tree.leaf_count];
    v[0] = 1.0;
    for j in 1..tree.leaf_count {
        let (start, len) = tree.span(j);
        let (a, b) = (start, start + len / 2);
        let (s, c) = tree.loader_angle(j).sin_cos();
        let (va, vb) = (v[a], v[b]);
        v[a] = c * va - s * vb;
        v[b] = s * va + c * vb;
    }
    v
}

/// Prepares sum_i x_i |i> from |0..0> on `reg` (bit b of i on `reg[b]`) for a
/// real unit vector x: a tree of multiplexed Ry rotations, most significant
/// bit first; the last level carries the signs.
pub fn amplitude_prep_gates(reg: &[usize], x: &[f64]) -> Vec<GateOp> {
    let k = reg.len();
    assert_eq!(x.len(), 1 << k, "vector length must be 2^register width");
    let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
    let mut g = Vec::new();
    for b in (0..k).rev() {
        let groups = 1usize << (k - 1 - b);
        let span = 1usize << b;
        let angles: Vec<f64> = (0..groups)
            .map(|s| {
                let (l, h) = ((2 * s) * span, (2 * s + 1) * span);
                if b == 0 {
                    2.0 * x[h].atan2(x[l])
                } else {
                    let lo: f64 = sq[l..h].iter().sum();
                    let hi: f64 = sq[h..h + span].iter().sum();
                    2.0 * hi.sqrt().atan2(lo.sqrt())
                }
            })
            .collect();
        if groups == 1 {
            g.push(GateOp::ry(reg[b], angles[0]));
        } else {
            g.push(GateOp::mux(MuxBase::Ry, vec![reg[b]], reg[b + 1..].to_vec(), angles));
        }
    }
    g
}

// ------------------------------------------------------- unary to binary

/// Qubit roles of the unary-to-binary converter.
#[derive(Clone, Debug, PartialEq)]
pub struct UnaryToBinaryLayout {
    pub unary: Vec<usize>,
    /// Little-endian binary output.
    pub binary: Vec<usize>,
    /// n/2 - 1 fan-out ancillas, returned to |0>.
    pub fanout: Vec<usize>,
}

impl UnaryToBinaryLayout {
    /// Unary 0..n, binary n..n+log n, ancillas after.
    pub fn standard(n: usize) -> Self {
        let k = n.trailing_zeros() as usize;
        let f = (n / 2).saturating_sub(1);
        UnaryToBinaryLayout {
            unary: (0..n).collect(),
            binary: (n..n + k).collect(),
            fanout: (n + k..n + k + f).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.unary.len() + self.binary.len() + self.fanout.len()
    }
}

/// Maps |e_i>|0> to |0^n>|i> for a one-hot unary register.
pub fn unary_to_binary_gates(layout: &UnaryToBinaryLayout) -> Vec<GateOp> {
    let u = &layout.unary;
    let n = u.len();
    let k = layout.binary.len();
    let mut g = Vec::new();
    for bit in (0..k).rev() {
        let m = 1usize << (bit + 1);
        let h = m / 2;
        // parity of the upper half collects at u[m-1]
        let mut tree = Vec::new();
        let mut s = 1;
        while s < h {
            for i in (0..h).step_by(2 * s) {
                tree.push(GateOp::cnot(u[h + i + s - 1], u[h + i + 2 * s - 1]));
            }
            s *= 2;
        }
        g.extend(tree.iter().cloned());
        g.push(GateOp::cnot(u[m - 1], layout.binary[bit]));
        g.extend(tree.iter().rev().cloned());
        // copies of the control bit so the swaps run in parallel
        let mut copies = vec![layout.binary[bit]];
        let mut fan = Vec::new();
        let mut next = 0;
        while copies.len() < h {
            let have = copies.len();
            for c in 0..have.min(h - have) {
                let t = layout.fanout[next];
                next += 1;
                fan.push(GateOp::cnot(copies[c], t));
                copies.push(t);
            }
        }
        g.extend(fan.iter().cloned());
        for i in 0..h {
            g.push(GateOp::cswap(copies[i], u[i], u[i + h]));
        }
        g.extend(fan.iter().rev().cloned());
    }
    if n > 0 {
        g.push(GateOp::x(u[0]));
    }
    g
}

/// Converter for n = 2^k <= 2^12 on the standard layout.
pub fn unary_to_binary_circuit(n: usize) -> Result<Circuit> {
    if n == 0 || !n.is_power_of_two() {
        return invalid("unary-to-binary size must be a power of two");
    }
    if n > 1 << 12 {
        return Err(Error::Resource("unary-to-binary verification limited to n <= 4096".into()));
    }
    let layout = UnaryToBinaryLayout::standard(n);
    let mut c = Circuit::new(layout.width());
    c.extend(unary_to_binary_gates(&layout));
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn max_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn qft_examples() {
        let s = qft_circuit(1).unwrap().apply(&QuantumState::new_basis_state(1, 0).unwrap()).unwrap();
        assert!((s.amplitudes()[0].re - FRAC_1_SQRT_2).abs() < 1e-12);
        let s = qft_circuit(2).unwrap().apply(&QuantumState::new_basis_state(2, 1).unwrap()).unwrap();
        let want = [C64::new(0.5, 0.0), C64::new(0.0, 0.5), C64::new(-0.5, 0.0), C64::new(0.0, -0.5)];
        for (a, w) in s.amplitudes().iter().zip(want) {
            assert!((a - w).norm() < 1e-12);
        }
        let uni = QuantumState::from_real(&[1.0; 8]).unwrap();
        let s = qft_circuit(3).unwrap().apply(&uni).unwrap();
        assert!((s.amplitudes()[0].norm() - 1.0).abs() < 1e-12);
        assert!(qft_circuit(0).is_err() && qft_circuit(25).is_err());
    }

    #[test]
    fn qft_matches_dft() {
        for k in 1..=6 {
            let m = qft_circuit(k).unwrap().matrix().unwrap();
            assert!(max_diff(&m, &dft_matrix(1 << k)) < 1e-9, "k={k}");
        }
    }

    #[test]
    fn dst_example_e1() {
        let s = QuantumState::from_real(&[0.0, 1.0, 0.0, 0.0]).unwrap();
        let out = dst_apply(&s, 4, true).unwrap();
        let want = [0.0, 0.5, FRAC_1_SQRT_2, 0.5];
        for (a, w) in out.amplitudes().iter().zip(want) {
            assert!((a - C64::new(w, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn dst_circuit_matches_matrix() {
        for k in 1..=6 {
            let n = 1usize << k;
            let c = dst_circuit(k).unwrap();
            let d = dst_matrix(n);
            for j in 1..n {
                let out = c.apply(&QuantumState::new_basis_state(k + 1, j).unwrap()).unwrap();
                for i in 0..2 * n {
                    let want = if i < n { d[(i, j)] } else { 0.0 };
                    assert!((out.amplitudes()[i] - C64::new(want, 0.0)).norm() < 1e-9, "k={k} i={i} j={j}");
                }
            }
        }
    }

    #[test]
    fn dst_involution_and_orthogonality() {
        let s = QuantumState::from_real(&[0.0, 0.3, -0.2, 0.5, 0.1, 0.7, -0.4, 0.2]).unwrap();
        let twice = dst_apply(&dst_apply(&s, 8, true).unwrap(), 8, true).unwrap();
        assert!((twice.inner(&s).re - 1.0).abs() < 1e-9);
        let d = dst_matrix(64);
        let dd = &d * d.transpose();
        for i in 1..64 {
            for j in 1..64 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dd[(i, j)] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dst_rejects_bad_input() {
        let s = QuantumState::from_real(&[1.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(dst_apply(&s, 4, true).is_err());
        assert!(dst_apply(&s, 4, false).is_ok());
        let c = QuantumState::from_amplitudes(vec![
            C64::new(0.0, 0.0),
            C64::new(0.0, 1.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
        ])
        .unwrap();
        assert!(dst_apply(&c, 4, true).is_err());
        assert!(dst_apply(&s, 3, false).is_err());
    }

    #[test]
    fn dct_matches_matrix_and_is_involution() {
        for k in 1..=5 {
            let n = 1usize << k;
            let c = dct_circuit(k).unwrap();
            let d = dct_matrix(n);
            for j in 0..=n {
                let out = c.apply(&QuantumState::new_basis_state(k + 1, j).unwrap()).unwrap();
                for i in 0..2 * n {
                    let want = if i <= n { d[(i, j)] } else { 0.0 };
                    assert!((out.amplitudes()[i] - C64::new(want, 0.0)).norm() < 1e-9, "k={k} i={i} j={j}");
                }
            }
        }
        let x = QuantumState::from_real(&[0.2, -0.1, 0.4, 0.3, 0.5, 0.0, 0.0, 0.0]).unwrap();
        let twice = dct_apply(&dct_apply(&x, 4, true).unwrap(), 4, true).unwrap();
        assert!((twice.inner(&x).re - 1.0).abs() < 1e-9);
        // constant input concentrates on low frequencies per the matrix
        let ones = QuantumState::from_real(&[1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let out = dct_apply(&ones, 4, true).unwrap();
        let d = dct_matrix(4);
        let v = nalgebra::DVector::from_element(5, 1.0 / 5f64.sqrt());
        let want = &d * v;
        for i in 0..5 {
            assert!((out.amplitudes()[i].re - want[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn loader_angle_examples() {
        let t = compute_loader_angles(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(t.node_angles[1..].iter().all(|a| *a == 0.0));
        let t = compute_loader_angles(&[3.0, 4.0]).unwrap();
        assert!((t.node_angles[1] - 0.927295218).abs() < 1e-8);
        let t = compute_loader_angles(&[0.5; 4]).unwrap();
        assert!(t.node_angles[1..].iter().all(|a| (a - PI / 4.0).abs() < 1e-12));
        assert!(compute_loader_angles(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn loader_examples() {
        let t = compute_loader_angles(&[1.0, 0.0]).unwrap();
        let s = unary_loader_circuit(&t).unwrap().apply(&QuantumState::new_basis_state(2, 0).unwrap()).unwrap();
        assert!((s.amplitudes()[0b01].re - 1.0).abs() < 1e-12);
        let t = compute_loader_angles(&[0.6, 0.8]).unwrap();
        let s = unary_loader_circuit(&t).unwrap().apply(&QuantumState::new_basis_state(2, 0).unwrap()).unwrap();
        assert!((s.amplitudes()[0b01].re - 0.6).abs() < 1e-12);
        assert!((s.amplitudes()[0b10].re - 0.8).abs() < 1e-12);
    }

    #[test]
    fn loader_depth_is_logarithmic() {
        let t = compute_loader_angles(&[1.0; 16]).unwrap();
        assert_eq!(unary_loader_circuit(&t).unwrap().depth(), 1 + 4);
    }

    #[test]
    fn unary_to_binary_examples() {
        let n = 4;
        let c = unary_to_binary_circuit(n).unwrap();
        let w = c.num_qubits;
        let s = c.apply(&QuantumState::new_basis_state(w, 1).unwrap()).unwrap();
        assert!((s.amplitudes()[0].re - 1.0).abs() < 1e-12);
        let mut amps = vec![C64::new(0.0, 0.0); 1 << w];
        amps[1] = C64::new(FRAC_1_SQRT_2, 0.0);
        amps[8] = C64::new(FRAC_1_SQRT_2, 0.0);
        let s = c.apply(&QuantumState::from_amplitudes(amps).unwrap()).unwrap();
        assert!((s.amplitudes()[0].re - FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((s.amplitudes()[0b11 << 4].re - FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn unary_to_binary_all_basis_inputs() {
        for k in 0..=8 {
            let n = 1usize << k;
            let c = unary_to_binary_circuit(n).unwrap();
            let lay = UnaryToBinaryLayout::standard(n);
            for i in 0..n {
                let mut bits = vec![false; c.num_qubits];
                bits[lay.unary[i]] = true;
                c.apply_classical(&mut bits).unwrap();
                for (b, &q) in lay.binary.iter().enumerate() {
                    assert_eq!(bits[q], (i >> b) & 1 == 1);
                }
                assert!(lay.unary.iter().chain(&lay.fanout).all(|&q| !bits[q]));
            }
        }
    }

    #[test]
    fn circuit_json_export() {
        let c = qft_circuit(2).unwrap();
        let j = c.to_json();
        assert_eq!(j["num_qubits"], 2);
        assert_eq!(j["gates"][0]["kind"], "H");
        assert_eq!(j["gates"][1]["kind"], "CP");
        assert!((j["gates"][1]["params"][0].as_f64().unwrap() - PI / 2.0).abs() < 1e-15);
    }
}
