#![allow(dead_code)]

use knotmpc::condense::MpcSpec;
use knotmpc::dynamics::DiscreteLinearModel;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

pub fn uniform_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// Random model with infinity norm near one so rollouts stay bounded.
pub fn random_model(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DiscreteLinearModel {
    let mut a = uniform_matrix(rng, n, n, 1.0);
    let norm = a
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    a *= rng.random_range(0.8..1.05) / norm;
    let b = uniform_matrix(rng, n, m, 1.0);
    let w = uniform_vector(rng, n, 0.05);
    DiscreteLinearModel::new(a, b, w, 0.1).unwrap()
}

/// Random problem with input bounds tight enough that some bind.
pub fn random_spec(seed: u64, max_n: usize, max_m: usize, max_t: usize) -> (MpcSpec, DVector<f64>) {
    let mut r = rng(seed);
    let n = r.random_range(1..=max_n);
    let m = r.random_range(1..=max_m);
    let t = r.random_range(1..=max_t);
    let model = random_model(&mut r, n, m);
    let l = uniform_matrix(&mut r, n, n, 1.0);
    let q = &l * l.transpose() * 0.5
        + DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| r.random_range(0.0..2.0)));
    let r_diag = DVector::from_fn(m, |_, _| r.random_range(0.05..1.0));
    let bound = DVector::from_fn(m, |_, _| r.random_range(0.1..2.0));
    let spec = MpcSpec::new(
        q,
        DMatrix::from_diagonal(&r_diag),
        uniform_vector(&mut r, n, 2.0),
        uniform_vector(&mut r, m, 0.1),
        -&bound,
        bound,
        t,
        model,
    )
    .unwrap();
    let x0 = uniform_vector(&mut r, n, 2.0);
    (spec, x0)
}
