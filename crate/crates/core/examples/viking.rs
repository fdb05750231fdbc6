//! Variational tracking of the noise and process variances.
//!
//! A noisy regression whose coefficients jump once. The observation variance
//! settles at the noise level (0.09) and bumps up after the jump; with the
//! default priors the process variance drifts only slowly.

use loadcast::kalman::KalmanState;
use loadcast::viking::{init_viking, VikingParams};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> loadcast::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };
    let d = 3;
    let mut state = init_viking(&KalmanState::standard(d), 1e-4, &VikingParams::default())?;
    let mut truth = DVector::from_vec(vec![2.0, -1.0, 0.5]);

    println!(
        "{:>6} {:>10} {:>12} {:>10}",
        "step", "σ²", "e^b", "|θ − θ*|"
    );
    for t in 0..3000 {
        if t == 1500 {
            truth = DVector::from_vec(vec![1.0, 0.0, 1.5]);
            println!("-- coefficients jump --");
        }
        let x = DVector::from_fn(d, |i, _| if i == 0 { 1.0 } else { normal() });
        let y = truth.dot(&x) + 0.3 * normal();
        state.step(&x, y, VikingParams::default().iters)?;
        if t % 250 == 249 || (1500..1520).contains(&t) && t % 5 == 4 {
            println!(
                "{:>6} {:>10.4} {:>12.3e} {:>10.4}",
                t + 1,
                state.observation_variance(),
                state.process_variance(),
                (&state.theta - &truth).norm()
            );
        }
    }
    Ok(())
}
