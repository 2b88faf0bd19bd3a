//! Stochastic integral of a fractional kernel against compound-Poisson noise:
//! gate-level spectral method vs the classical Toeplitz product.

use qstoch::levy::{
    cosine_similarity, fractional_kernel, sample_levy_noise, stochastic_integral_classical,
    stochastic_integral_quantum_with_noise, LevyNoiseSpec, NoiseKind,
};
use qstoch::rng::seeded;

fn main() -> qstoch::error::Result<()> {
    let t = 128;
    let spec = LevyNoiseSpec::new(NoiseKind::CompoundPoisson { rate: 2.0, jump_mean: 0.0, jump_std: 1.0 }, t)?;
    let kernel = fractional_kernel(t, 0.75, spec.dt);
    let noise = sample_levy_noise(&spec, &mut seeded(4))?;
    let classical = stochastic_integral_classical(&kernel, &noise)?;
    for keep in [2 * t, t, t / 4, t / 16] {
        let q = stochastic_integral_quantum_with_noise(&kernel, &noise, keep, &mut seeded(5))?;
        println!(
            "keep {keep:>3} coefficients: cosine {:.6}, flag acceptance {:.4} (bound {:.2e}), attempts {}",
            cosine_similarity(q.state.amplitudes(), &classical),
            q.acceptance_probability,
            q.min_max_ratio.powi(2),
            q.flag_attempts
        );
    }
    Ok(())
}
