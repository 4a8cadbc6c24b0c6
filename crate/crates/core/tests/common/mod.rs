#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sparse_arx::objective::{Hyperparameters, PriorMode};
use sparse_arx::regression::{GroupLayout, RegressionProblem};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| normal(rng))
}

/// Gaussian design for node 0 of a `p`-node, `m`-input linear layout.
pub fn random_problem(rng: &mut ChaCha8Rng, p: usize, m: usize, k: usize, rows: usize) -> RegressionProblem {
    let layout = GroupLayout::linear(p, m, 0, k);
    let phi = DMatrix::from_fn(rows, layout.n_cols(), |_, _| normal(rng));
    let y = normal_vec(rng, rows);
    RegressionProblem::new(0, y, phi, layout).unwrap()
}

/// Sparse ground truth plus small noise on a Gaussian design.
pub fn planted_problem(rng: &mut ChaCha8Rng, groups: usize, k: usize, rows: usize, noise: f64) -> (RegressionProblem, DVector<f64>) {
    let layout = GroupLayout::linear(groups, 0, 0, k);
    let phi = DMatrix::from_fn(rows, layout.n_cols(), |_, _| normal(rng));
    let mut w = DVector::zeros(layout.n_cols());
    for g in 0..layout.n_groups() {
        if g % 2 == 0 {
            let r = layout.range(g);
            w[r.start] = 0.5 + rng.random::<f64>();
        }
    }
    let y = &phi * &w + normal_vec(rng, rows) * noise;
    (RegressionProblem::new(0, y, phi, layout).unwrap(), w)
}

/// Log-uniform variances in roughly [0.1, 10].
pub fn random_hyper(rng: &mut ChaCha8Rng, layout: &GroupLayout, mode: PriorMode) -> Hyperparameters {
    let mut h = Hyperparameters::initial(layout, 1.0, mode);
    let draw = |rng: &mut ChaCha8Rng| (rng.random_range(-2.3..2.3f64)).exp();
    for b in h.beta.iter_mut() {
        *b = draw(rng);
    }
    for g in h.gamma.iter_mut() {
        *g = draw(rng);
    }
    h.lambda = draw(rng);
    h
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
