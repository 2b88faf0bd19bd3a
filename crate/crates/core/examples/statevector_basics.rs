//! Bell state: gate application, measurement, postselection, reduced states.

use qstoch::rng::seeded;
use qstoch::statevector::{GateOp, QuantumState};

fn main() -> qstoch::error::Result<()> {
    let s = QuantumState::new_basis_state(2, 0)?.apply_gate(&GateOp::h(0))?.apply_gate(&GateOp::cnot(0, 1))?;
    println!("amplitudes {:?}", s.amplitudes());
    println!("P(qubit 1) {:?}", s.probabilities(&[1])?);
    let (post, p) = s.postselect(0, 1)?;
    println!("postselect q0=1 with probability {p:.3}: {:?}", post.amplitudes());
    let (rec, _) = s.measure_subset(&[0, 1], &mut seeded(7))?;
    println!("measured {}", rec.bitstring());
    println!("reduced density of qubit 0:\n{}", s.reduced_density(&[0])?);
    Ok(())
}
