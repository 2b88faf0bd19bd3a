//! QFT and DST circuits against their matrices; unary loader round trip.

use qstoch::circuits::{compute_loader_angles, dft_matrix, dst_apply, dst_matrix, qft_circuit, unary_loader_circuit};
use qstoch::statevector::QuantumState;

fn main() -> qstoch::error::Result<()> {
    let k = 4;
    let err = (qft_circuit(k)?.matrix()? - dft_matrix(1 << k)).iter().map(|z| z.norm()).fold(0.0, f64::max);
    println!("QFT on {k} qubits: max deviation from the DFT matrix {err:.1e}");

    let x = [0.0, 0.3, -0.5, 0.2, 0.1, -0.4, 0.6, 0.3];
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let u: Vec<f64> = x.iter().map(|v| v / n).collect();
    let out = dst_apply(&QuantumState::from_real(&u)?, 8, true)?;
    let want = dst_matrix(8) * nalgebra::DVector::from_vec(u.clone());
    let err = (0..8).map(|i| (out.amplitudes()[i].re - want[i]).abs()).fold(0.0, f64::max);
    println!("DST-I via the doubled QFT: max deviation {err:.1e}");

    let tree = compute_loader_angles(&x)?;
    let s = unary_loader_circuit(&tree)?.apply(&QuantumState::new_basis_state(8, 0)?)?;
    let loaded: Vec<f64> = (0..8).map(|i| s.amplitudes()[1 << i].re).collect();
    println!("unary loader amplitudes {loaded:.4?}");
    Ok(())
}
