//! Coherent analog encoding: the value-register density matrix equals the
//! normalized covariance of the process.

use qstoch::spectral_bm::{coherent_encoding_build, exact_mixture_density, mixture_oracle_density, ProcessSpec, ShiftSampling};
use qstoch::statevector::trace_distance;

fn main() -> qstoch::error::Result<()> {
    let spec = ProcessSpec::new(0.65, 4, 16)?;
    for k in [1, 2, 3] {
        let enc = coherent_encoding_build(&spec, k)?;
        let td = trace_distance(&enc.value_density()?, &exact_mixture_density(&spec));
        println!("K={k}: {} qubits, trace distance to Cov/trCov {td:.1e}", enc.circuit.num_qubits);
    }
    let mc = mixture_oracle_density(&spec, ShiftSampling::Born, 20_000, 1)?;
    println!("sampling oracle (2e4 trajectories) vs exact: {:.1e}", trace_distance(&mc, &exact_mixture_density(&spec)));
    Ok(())
}
