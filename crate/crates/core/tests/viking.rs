mod common;

use common::*;
use loadcast::kalman::KalmanState;
use loadcast::viking::{init_viking, VikingParams};
use nalgebra::{DVector, SymmetricEigen};

#[test]
fn frozen_dynamics_only_shrink_uncertainty() {
    let mut r = rng(21);
    let d = 3;
    let params = VikingParams {
        rho_a: 0.0,
        rho_b: 0.0,
        s0: 0.5,
        sigma0: 0.5,
        iters: 2,
    };
    let mut v = init_viking(&KalmanState::standard(d), 1e-3, &params).unwrap();
    let truth = DVector::from_vec(vec![1.0, -1.0, 0.5]);
    let (mut s, mut sigma) = (v.s, v.sigma);
    for _ in 0..2000 {
        let x = random_vector(&mut r, d);
        let y = truth.dot(&x) + 0.5 * normal(&mut r);
        let pred = v.step(&x, y, 2).unwrap();
        assert!(pred.variance > 0.0 && pred.variance.is_finite());
        assert!(v.s >= 0.0 && v.s <= s, "s grew: {} -> {}", s, v.s);
        assert!(v.sigma >= 0.0 && v.sigma <= sigma);
        (s, sigma) = (v.s, v.sigma);
    }
    // the learned noise level is close to the truth
    assert!(
        (v.observation_variance() / 0.25 - 1.0).abs() < 0.3,
        "{}",
        v.observation_variance()
    );
}

/// Regressors on the scale of loads in MW, with a shift in the coefficients.
#[test]
fn survives_badly_scaled_regressors() {
    let mut r = rng(22);
    let d = 8;
    let mut v = init_viking(
        &KalmanState::standard(d),
        2f64.powi(-20),
        &VikingParams::default(),
    )
    .unwrap();
    let mut truth = DVector::from_fn(d, |i, _| if i < 2 { 0.4 } else { 5.0 });
    for t in 0..5000 {
        if t == 2500 {
            truth *= 0.8;
        }
        let x = DVector::from_fn(d, |i, _| {
            if i < 2 {
                1000.0 + 200.0 * normal(&mut r)
            } else {
                (normal(&mut r) > 0.0) as u8 as f64
            }
        });
        let y = truth.dot(&x) + 20.0 * normal(&mut r);
        let pred = v.step(&x, y, 2).unwrap();
        assert!(pred.variance > 0.0 && pred.mean.is_finite());
        assert!(v.s >= 0.0 && v.sigma >= 0.0);
    }
    assert_eq!(v.p, v.p.transpose());
    let eig = SymmetricEigen::new(v.p.clone()).eigenvalues;
    assert!(eig.min() >= -1e-8 * eig.max().max(1.0), "{eig}");
}

#[test]
fn single_pass_and_refined_updates_agree_in_the_frozen_case() {
    let mut r = rng(23);
    let params = VikingParams {
        rho_a: 0.0,
        rho_b: 0.0,
        s0: 0.0,
        sigma0: 0.0,
        iters: 1,
    };
    let mut one = init_viking(&KalmanState::standard(2), 0.01, &params).unwrap();
    let mut three = one.clone();
    for _ in 0..200 {
        let x = random_vector(&mut r, 2);
        let y = 3.0 * normal(&mut r);
        one.step(&x, y, 1).unwrap();
        three.step(&x, y, 3).unwrap();
    }
    assert!((&one.theta - &three.theta).amax() < 1e-12);
}
