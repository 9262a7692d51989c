//! Generators and brute-force oracles shared by the integration tests. The
//! oracles evaluate the formulas directly and share no code with the library.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use corrsched::{Assignment, JointActivationMatrix, ScheduleMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture_matrix(name: &str) -> JointActivationMatrix {
    corrsched::io::read_matrix(&fixture_path(name)).unwrap()
}

/// I.i.d. uniform entries, symmetrized by copying the upper triangle, zero diagonal.
pub fn random_rows(rng: &mut impl Rng, n: usize) -> Vec<Vec<f64>> {
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in i + 1..n {
            let v: f64 = rng.random();
            rows[i][k] = v;
            rows[k][i] = v;
        }
    }
    rows
}

pub fn random_matrix(rng: &mut impl Rng, n: usize) -> JointActivationMatrix {
    JointActivationMatrix::from_rows(random_rows(rng, n)).unwrap()
}

/// Row-stochastic matrix; each row is normalized i.i.d. exponential weights.
pub fn random_soft_rows(rng: &mut impl Rng, n: usize, l: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let w: Vec<f64> = (0..l).map(|_| -(1.0 - rng.random::<f64>()).ln() + 1e-3).collect();
            let s: f64 = w.iter().sum();
            w.iter().map(|x| x / s).collect()
        })
        .collect()
}

pub fn random_schedule(rng: &mut impl Rng, n: usize, l: usize) -> ScheduleMatrix {
    ScheduleMatrix::new(random_soft_rows(rng, n, l)).unwrap()
}

pub fn random_assignment(rng: &mut impl Rng, n: usize, l: usize) -> Assignment {
    Assignment::new((0..n).map(|_| rng.random_range(0..l)).collect())
}

/// `(1/L) sum_j sum_{i<k} A[i][k] e[i][j] e[k][j]`.
pub fn oracle_f(a: &[Vec<f64>], e: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let l = e[0].len();
    let mut total = 0.0;
    for j in 0..l {
        for i in 0..n {
            for k in i + 1..n {
                total += a[i][k] * e[i][j] * e[k][j];
            }
        }
    }
    total / l as f64
}

/// Mean over channels of `1 - prod_{i<k} (1 - A[i][k] e[i][j] e[k][j])`.
pub fn oracle_pc(a: &[Vec<f64>], e: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let l = e[0].len();
    let mut total = 0.0;
    for j in 0..l {
        let mut survive = 1.0;
        for i in 0..n {
            for k in i + 1..n {
                survive *= 1.0 - a[i][k] * e[i][j] * e[k][j];
            }
        }
        total += 1.0 - survive;
    }
    total / l as f64
}

pub fn one_hot(channel_of: &[usize], l: usize) -> Vec<Vec<f64>> {
    channel_of
        .iter()
        .map(|&c| {
            let mut row = vec![0.0; l];
            row[c] = 1.0;
            row
        })
        .collect()
}

pub fn oracle_hard_f(a: &[Vec<f64>], channel_of: &[usize], l: usize) -> f64 {
    oracle_f(a, &one_hot(channel_of, l))
}

/// Every one of the `L^N` labelled assignments, first index varying slowest.
pub fn all_assignments(n: usize, l: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = (l as u64).pow(n as u32);
    (0..total).map(move |mut code| {
        let mut x = vec![0; n];
        for slot in x.iter_mut().rev() {
            *slot = (code % l as u64) as usize;
            code /= l as u64;
        }
        x
    })
}

/// Minimum of `F` over all labelled assignments.
pub fn oracle_min_f(a: &[Vec<f64>], l: usize) -> f64 {
    all_assignments(a.len(), l).map(|x| oracle_hard_f(a, &x, l)).fold(f64::INFINITY, f64::min)
}

pub fn binomial_se(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
