//! Variance-swap strike with rough volatility B^H on the full window.

use qstoch::apps::{strike_grid_exact, strike_tail, variance_swap_strike, SwapSpec};
use qstoch::qmc::Method;
use qstoch::rng::seeded;
use qstoch::spectral_bm::ProcessSpec;

fn main() -> qstoch::error::Result<()> {
    let process = ProcessSpec::new(0.5, 4, 16)?;
    let swap = SwapSpec::new(0.5);
    println!("grid value {:.6}", strike_grid_exact(&swap, &process)?);
    for method in [Method::DirectAmplitude, Method::PhaseEstimationAE, Method::ClassicalMC] {
        let r = variance_swap_strike(&swap, &process, 0.01, method, &mut seeded(2))?;
        let tail = strike_tail(&swap, 0.5, process.terms);
        println!("{method:?}: {:.6} +- {:.4}; with frequencies above L: {:.6}", r.estimate, r.error_bound, r.estimate + tail);
    }
    println!("limit pi^2/6 = {:.6}", std::f64::consts::PI.powi(2) / 6.0);
    Ok(())
}
