//! Fast-path trajectories and the bridge covariance; the Born tilt of the
//! measured shift register; truncation error against L.

use qstoch::spectral_bm::{
    born_covariance, bridge_covariance, truncation_error_report, ProcessSpec, RadiusMode, ShiftSampling, SimOptions,
    TrajectorySampler,
};

fn var_mid(spec: ProcessSpec, shift: ShiftSampling) -> qstoch::error::Result<f64> {
    let s = TrajectorySampler::new(spec, SimOptions { shift, radius: RadiusMode::Sampled })?;
    let runs = s.sample_batch(3, 20_000)?;
    Ok(runs.iter().map(|r| r.trajectory.value_at(spec.steps / 2).powi(2)).sum::<f64>() / runs.len() as f64)
}

fn main() -> qstoch::error::Result<()> {
    let spec = ProcessSpec::new(0.5, 256, 512)?;
    let mid = std::f64::consts::FRAC_PI_2;
    println!("Var B(pi/2): bridge law {:.4}", bridge_covariance(mid, mid));
    println!("  independent shift  {:.4}", var_mid(spec, ShiftSampling::Independent)?);
    println!("  measured shift     {:.4} (size-biased prediction {:.4})", var_mid(spec, ShiftSampling::Born)?, born_covariance(&spec, mid, mid));

    let r = truncation_error_report(0.8, &[16, 32, 64, 128, 256], 2000, 4096, 5)?;
    for row in &r.rows {
        println!("L={:>4} E|B-B_L|^2 {:.3e} (expected {:.3e})", row.terms, row.empirical, row.analytic_paired);
    }
    println!("log-log slope {:.3} (theory {:.1})", r.slope, -2.0 * r.hurst);
    Ok(())
}
