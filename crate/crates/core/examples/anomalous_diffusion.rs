//! TAMSD test for anomalous diffusion, TAMSD slope and ergodicity breaking.

use qstoch::apps::{eb_parameter, fbm_ensemble, tamsd_slope, test_power, Alternative, FbmGenerator, TamsdTestConfig};
use qstoch::rng::seeded;

fn main() -> qstoch::error::Result<()> {
    for alt in [Alternative::Fbm { hurst: 0.5 }, Alternative::Fbm { hurst: 0.8 }, Alternative::CompoundPoisson { rate: 0.5, jump_std: 2f64.sqrt() }] {
        let cfg = TamsdTestConfig::new(0.5, alt);
        let r = test_power(&cfg, 400, &mut seeded(1))?;
        println!("{alt:?}: rejection rate {:.3} +- {:.3}, band [{:.3}, {:.3}]", r.power, r.standard_error, r.band.lower, r.band.upper);
    }
    for h in [0.3, 0.5, 0.8] {
        let ens = fbm_ensemble(FbmGenerator::DaviesHarte, 200, 2048, h, 1.0, 2)?;
        println!("H={h}: TAMSD slope {:.3}, EB(tau=4) {:.5}", tamsd_slope(&ens, &[1, 2, 4, 8, 16])?, eb_parameter(&ens, 4)?);
    }
    Ok(())
}
