//! Random angle trees loading Haar-random unit vectors; per-node Beta laws.

use qstoch::randgauss::{independence_check, node_beta_ks, sample_angle_tree};
use qstoch::rng::stream;

fn main() -> qstoch::error::Result<()> {
    let trees: Vec<_> = (0..20_000).map(|i| sample_angle_tree(8, &mut stream(1, i))).collect::<Result<_, _>>()?;
    println!("one sampled unit vector: {:.4?}", trees[0].reconstruct());
    for j in 1..8 {
        let r = node_beta_ks(&trees, j);
        println!("{:<36} KS p = {:.3}", r.test, r.p_value);
    }
    let dep = independence_check(&trees)?;
    println!("max pairwise distance correlation {:.4} (threshold {})", dep.max_abs, dep.threshold);
    Ok(())
}
