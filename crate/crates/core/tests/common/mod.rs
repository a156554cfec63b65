#![allow(dead_code)]
//! Two-state Markov chain with a fixed linear error `e_k = z_k - a z_{k-1}`.
//! Every (z_{k-1}, z_k) pair maps to a distinct error value, so the exact
//! density ratio is `P(z_{k-1} -> z) / pi(z)` and can be enumerated.

use idras::rng;
use idras::surrogate::{distribution_distance, resample, DistanceKind, DrawMode, ResampleFn, SurrogatePool};
use rand::Rng;

pub const ATOMS: [f64; 4] = [-0.3, 0.0, 0.7, 1.0];

pub const A: f64 = 0.3;
pub const P: [[f64; 2]; 2] = [[0.9, 0.1], [0.2, 0.8]];

pub fn stationary() -> [f64; 2] {
    let p01 = P[0][1];
    let p10 = P[1][0];
    [p10 / (p01 + p10), p01 / (p01 + p10)]
}

pub fn chain(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::substream(seed, &[77]);
    let pi = stationary();
    let mut z = usize::from(r.random::<f64>() >= pi[0]);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(vec![z as f64]);
        z = usize::from(r.random::<f64>() >= P[z][0]);
    }
    out
}

fn error(prev: f64, z: f64) -> f64 {
    z - A * prev
}

/// Exact ratio on well-separated bins around the four error atoms.
pub fn brute_force_zeta() -> ResampleFn {
    let pi = stationary();
    // (prev, z) in increasing error order: -0.3, 0, 0.7, 1
    let atoms = [(1, 0), (0, 0), (1, 1), (0, 1)];
    let ratios = atoms.iter().map(|&(p, z)| P[p][z] / pi[z]).collect();
    ResampleFn::from_bins(vec![-0.5, -0.15, 0.35, 0.85, 1.2], ratios, 1e9).unwrap()
}

/// True errors and one constrained surrogate error per step.
pub fn errors_under(zeta: &ResampleFn, n: usize, candidates: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let zs = chain(n, seed);
    let pool = SurrogatePool::new(&zs, DrawMode::WholeVector).unwrap();
    let mut r = rng::substream(seed, &[78]);
    let mut e = Vec::with_capacity(n - 1);
    let mut e_tilde = Vec::with_capacity(n - 1);
    let mut naive = Vec::new();
    for k in 1..n {
        let prev = zs[k - 1][0];
        e.push(error(prev, zs[k][0]));
        let pick = resample(&pool, candidates, |d| Ok(error(prev, pool.materialize(d)[0])), zeta, &mut r).unwrap();
        e_tilde.push(pick.error);
        naive.extend(pick.candidate_errors);
    }
    (e, e_tilde, naive)
}

pub fn ks(a: &[f64], b: &[f64]) -> f64 {
    distribution_distance(a, b, DistanceKind::KolmogorovSmirnov).unwrap().statistic
}
