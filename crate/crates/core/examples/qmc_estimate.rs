//! Normalized inner product E[(f.B)^2 / |f|^2 |B|^2] three ways.

use qstoch::qmc::{estimate_normalized_inner, exact_moment, Method, Moment, TestFunction};
use qstoch::rng::seeded;
use qstoch::spectral_bm::ProcessSpec;

fn main() -> qstoch::error::Result<()> {
    let spec = ProcessSpec::new(0.5, 4, 16)?;
    let f = TestFunction::window(16, 0.25, 0.75)?;
    println!("exact {:.6}", exact_moment(&spec, &f, Moment::Second)?);
    for method in [Method::DirectAmplitude, Method::PhaseEstimationAE, Method::ClassicalMC] {
        let r = estimate_normalized_inner(&spec, &f, 0.05, method, &mut seeded(1))?;
        println!(
            "{method:?}: {:.6} +- {:.4} (oracle queries {}, shots {}, truncation bound {:.3})",
            r.estimate, r.error_bound, r.oracle_queries, r.shots, r.truncation_bound
        );
    }
    Ok(())
}
