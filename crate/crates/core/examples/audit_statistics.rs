//! The statistics behind the auditor: 1-D Wasserstein distances, Student-t
//! quantiles and the Grubbs outlier test.

use traj_unlearn::auditor::{grubbs_critical, grubbs_outlier, t_inv_cdf, wasserstein1d};

fn main() -> traj_unlearn::Result<()> {
    let a = [0.0, 1.0, 3.0];
    let b = [5.0, 6.0, 8.0];
    println!("W1({a:?}, {b:?}) = {}", wasserstein1d(&a, &b)?);
    println!("W1 is order free: {}", wasserstein1d(&[3.0, 0.0, 1.0], &b)?);

    for df in [1, 5, 30, 1000] {
        println!("t quantile 0.975, df {df:>4}: {:.5}", t_inv_cdf(0.975, df));
    }
    for n in [5, 10, 26] {
        println!("Grubbs critical value n = {n:>2}, alpha 1e-4: {:.4}", grubbs_critical(n, 1e-4));
    }

    let reference = [0.11, 0.09, 0.12, 0.10, 0.08, 0.13, 0.10, 0.11];
    for target in [0.105, 0.2, 0.6] {
        let g = grubbs_outlier(&reference, target, 1e-4)?;
        println!(
            "target {target}: G = {:.3}, critical {:.3}, outlier {}",
            g.statistic, g.critical, g.is_outlier
        );
    }
    Ok(())
}
