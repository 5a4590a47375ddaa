//! Checks hand-written backpropagation against central differences for a
//! small network and for the IQL value loss.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use traj_unlearn::approx::{finite_diff_check, Activation, Network};
use traj_unlearn::offline_rl::losses::value_loss;

fn main() -> traj_unlearn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let states = Array2::from_shape_fn((8, 3), |_| rng.random_range(-1.0..1.0));
    let targets: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();

    for activation in [Activation::Tanh, Activation::Relu] {
        let net = Network::<f64>::new(&[3, 16, 16, 1], activation, &mut rng)?;
        let report = finite_diff_check(
            |p| {
                let mut n = net.clone();
                n.params_mut().copy_from_slice(p);
                value_loss(&n, states.view(), &targets, 0.7).unwrap()
            },
            net.params(),
            1e-3,
        );
        println!(
            "{activation:?}: {} params, max relative error {:.2e} -> {}",
            net.num_params(),
            report.max_rel_err,
            if report.pass { "ok" } else { "MISMATCH" }
        );
    }
    Ok(())
}
