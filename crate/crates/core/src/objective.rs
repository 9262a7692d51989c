//! Collision model and its pairwise (union) upper bound.
//!
//! For a channel `j`, `P_j = 1 - prod_{i1<i2} (1 - A[i1][i2] e[i1][j] e[i2][j])`
//! and the network average is `P_c = mean_j P_j`. The pairwise bound
//! `F(E) = (1/L) sum_j sum_{i1<i2} A[i1][i2] e[i1][j] e[i2][j]` dominates `P_c`
//! and is the quantity the solvers minimize. `F` is reported unclamped.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{assignment_to_schedule, Assignment, CollisionReport, JointActivationMatrix, ScheduleMatrix};
use crate::sim::{activation_round, round_rng, ActivationModel, DeviceLayout};

fn check_dims(a: &JointActivationMatrix, e: &ScheduleMatrix) -> Result<()> {
    if a.dim() != e.n_devices() {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {} devices but schedule has {} rows",
            a.dim(),
            e.n_devices()
        )));
    }
    Ok(())
}

/// Collision probability of channel `j`.
pub fn channel_collision_probability(a: &JointActivationMatrix, e: &ScheduleMatrix, j: usize) -> Result<f64> {
    check_dims(a, e)?;
    if j >= e.n_channels() {
        return Err(Error::InvalidParameter(format!("channel {j} out of range for {} channels", e.n_channels())));
    }
    Ok(channel_probability_unchecked(a, e, j))
}

fn channel_probability_unchecked(a: &JointActivationMatrix, e: &ScheduleMatrix, j: usize) -> f64 {
    let n = a.dim();
    // log of the no-collision product; expm1/log1p keep small terms exact
    let mut log_survival = 0.0;
    for i1 in 0..n {
        let e1 = e.get(i1, j);
        if e1 == 0.0 {
            continue;
        }
        for i2 in i1 + 1..n {
            let term = a.get(i1, i2) * e1 * e.get(i2, j);
            if term > 0.0 {
                log_survival += (-term).ln_1p();
            }
        }
    }
    -log_survival.exp_m1()
}

/// Per-channel collision probabilities, their average `P_c`, and `F(E)`.
pub fn network_collision_probability(a: &JointActivationMatrix, e: &ScheduleMatrix) -> Result<CollisionReport> {
    check_dims(a, e)?;
    let per_channel: Vec<f64> = (0..e.n_channels()).map(|j| channel_probability_unchecked(a, e, j)).collect();
    let network_average = per_channel.iter().sum::<f64>() / e.n_channels() as f64;
    Ok(CollisionReport { per_channel, network_average, pairwise_bound: pairwise_bound_unchecked(a, e) })
}

/// [`network_collision_probability`] of a hard assignment.
pub fn assignment_report(a: &JointActivationMatrix, assignment: &Assignment, n_channels: usize) -> Result<CollisionReport> {
    network_collision_probability(a, &assignment_to_schedule(assignment, n_channels)?)
}

/// Pairwise union bound `F(E)`.
pub fn pairwise_bound(a: &JointActivationMatrix, e: &ScheduleMatrix) -> Result<f64> {
    check_dims(a, e)?;
    Ok(pairwise_bound_unchecked(a, e))
}

fn pairwise_bound_unchecked(a: &JointActivationMatrix, e: &ScheduleMatrix) -> f64 {
    let n = a.dim();
    let mut total = 0.0;
    for j in 0..e.n_channels() {
        for i1 in 0..n {
            let e1 = e.get(i1, j);
            if e1 == 0.0 {
                continue;
            }
            for i2 in i1 + 1..n {
                total += a.get(i1, i2) * e1 * e.get(i2, j);
            }
        }
    }
    total / e.n_channels() as f64
}

/// `F(E)` in trace form, `Tr(E^T Â E) / 2L` with `Â` the matrix with its diagonal zeroed.
pub fn trace_objective(a: &JointActivationMatrix, e: &ScheduleMatrix) -> Result<f64> {
    check_dims(a, e)?;
    let n = a.dim();
    let l = e.n_channels();
    let mut trace = 0.0;
    for j in 0..l {
        for i in 0..n {
            // (Â E)[i][j]
            let ae: f64 = (0..n).filter(|&k| k != i).map(|k| a.get(i, k) * e.get(k, j)).sum();
            trace += e.get(i, j) * ae;
        }
    }
    Ok(trace / (2 * l) as f64)
}

/// `F` of a hard assignment, summed over pairs `i < k` sharing a channel in
/// ascending order and divided by `L`. Solvers report objectives through this
/// function so that equal assignments always produce bit-equal values.
pub fn hard_objective(a: &JointActivationMatrix, assignment: &Assignment, n_channels: usize) -> f64 {
    let n = a.dim();
    let mut total = 0.0;
    for i in 0..n {
        let c = assignment.channel(i);
        for k in i + 1..n {
            if assignment.channel(k) == c {
                total += a.get(i, k);
            }
        }
    }
    total / n_channels as f64
}

/// Empirical collision frequencies from replayed alarm rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloRates {
    pub per_channel: Vec<f64>,
    pub network_average: f64,
    pub rounds: u64,
}

/// Simulates `rounds` alarms; a channel collides in a round when two or more
/// of its devices are active. Rounds use the same streams as
/// [`crate::sim::estimate_joint_activation`] for the same seed.
pub fn monte_carlo_collision_rate(
    layout: &DeviceLayout,
    model: &ActivationModel,
    assignment: &Assignment,
    n_channels: usize,
    rounds: u64,
    seed: u64,
) -> Result<MonteCarloRates> {
    if assignment.len() != layout.len() {
        return Err(Error::DimensionMismatch(format!(
            "assignment covers {} devices, layout has {}",
            assignment.len(),
            layout.len()
        )));
    }
    if rounds == 0 {
        return Err(Error::InvalidParameter("rounds must be at least 1".into()));
    }
    assignment.check_channels(n_channels)?;
    const BATCH: u64 = 4096;
    let collisions = (0..rounds.div_ceil(BATCH))
        .into_par_iter()
        .map(|b| {
            let mut collisions = vec![0u64; n_channels];
            let mut occupancy = vec![0u32; n_channels];
            for step in b * BATCH..((b + 1) * BATCH).min(rounds) {
                occupancy.fill(0);
                for i in activation_round(layout, model, &mut round_rng(seed, step)) {
                    occupancy[assignment.channel(i)] += 1;
                }
                for (c, &o) in collisions.iter_mut().zip(&occupancy) {
                    if o >= 2 {
                        *c += 1;
                    }
                }
            }
            collisions
        })
        .reduce(
            || vec![0u64; n_channels],
            |mut acc, c| {
                acc.iter_mut().zip(c).for_each(|(a, c)| *a += c);
                acc
            },
        );
    let per_channel: Vec<f64> = collisions.iter().map(|&c| c as f64 / rounds as f64).collect();
    let network_average = per_channel.iter().sum::<f64>() / n_channels as f64;
    Ok(MonteCarloRates { per_channel, network_average, rounds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ScheduleMatrix;

    fn uniform_pairs(n: usize, v: f64) -> JointActivationMatrix {
        JointActivationMatrix::from_pairs(n, |_, _| v).unwrap()
    }

    fn hard(channels: &[usize], l: usize) -> ScheduleMatrix {
        assignment_to_schedule(&Assignment::new(channels.to_vec()), l).unwrap()
    }

    #[test]
    fn lone_device_never_collides() {
        let a = uniform_pairs(3, 0.5);
        let e = hard(&[0, 1, 1], 2);
        assert_eq!(channel_collision_probability(&a, &e, 0).unwrap(), 0.0);
    }

    #[test]
    fn single_pair_channel() {
        let a = uniform_pairs(2, 0.5);
        let e = hard(&[0, 0], 2);
        assert!((channel_collision_probability(&a, &e, 0).unwrap() - 0.5).abs() < 1e-15);
        let r = network_collision_probability(&a, &e).unwrap();
        assert!((r.network_average - 0.25).abs() < 1e-15);
        assert_eq!(r.per_channel[1], 0.0);
    }

    #[test]
    fn three_devices_one_channel() {
        let a = uniform_pairs(3, 0.5);
        let e = hard(&[0, 0, 0], 1);
        assert!((channel_collision_probability(&a, &e, 0).unwrap() - 0.875).abs() < 1e-15);
        let f = pairwise_bound(&a, &e).unwrap();
        assert!((f - 1.5).abs() < 1e-15);
    }

    #[test]
    fn singletons_give_zero() {
        let a = uniform_pairs(3, 0.9);
        let r = network_collision_probability(&a, &hard(&[0, 1, 2], 4)).unwrap();
        assert_eq!(r.network_average, 0.0);
        assert_eq!(r.pairwise_bound, 0.0);
    }

    #[test]
    fn balanced_split_of_four() {
        let a = uniform_pairs(4, 0.2);
        let r = network_collision_probability(&a, &hard(&[0, 0, 1, 1], 2)).unwrap();
        assert!((r.network_average - 0.2).abs() < 1e-15);
    }

    #[test]
    fn bound_is_tight_for_a_single_pair() {
        let a = uniform_pairs(2, 0.5);
        let e = hard(&[0, 0], 1);
        let r = network_collision_probability(&a, &e).unwrap();
        assert!((r.pairwise_bound - r.network_average).abs() < 1e-15);
        assert!((r.pairwise_bound - 0.5).abs() < 1e-15);
    }

    #[test]
    fn uniform_soft_schedule_closed_form() {
        let a = JointActivationMatrix::from_pairs(5, |i, j| 0.05 * (i + 2 * j) as f64).unwrap();
        for l in 1..5 {
            let e = ScheduleMatrix::uniform(5, l);
            let pairs: f64 = (0..5).flat_map(|i| (i + 1..5).map(move |j| (i, j))).map(|(i, j)| a.get(i, j)).sum();
            let f = pairwise_bound(&a, &e).unwrap();
            assert!((f - pairs / (l * l) as f64).abs() < 1e-14);
            assert!((trace_objective(&a, &e).unwrap() - f).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_matrix_trace_is_zero() {
        let a = JointActivationMatrix::zeros(4);
        assert_eq!(trace_objective(&a, &ScheduleMatrix::uniform(4, 3)).unwrap(), 0.0);
    }

    #[test]
    fn hard_objective_matches_bound() {
        let a = JointActivationMatrix::from_pairs(6, |i, j| ((i * 7 + j * 3) % 10) as f64 / 10.0).unwrap();
        let x = Assignment::new(vec![0, 1, 2, 0, 1, 0]);
        let f = pairwise_bound(&a, &assignment_to_schedule(&x, 3).unwrap()).unwrap();
        assert!((hard_objective(&a, &x, 3) - f).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = JointActivationMatrix::zeros(3);
        assert!(pairwise_bound(&a, &ScheduleMatrix::uniform(2, 2)).is_err());
        assert!(channel_collision_probability(&a, &ScheduleMatrix::uniform(3, 2), 2).is_err());
    }

    #[test]
    fn distinct_channels_never_collide_in_simulation() {
        let layout = crate::sim::generate_layout(4, 0.2, 2).unwrap();
        let rates = monte_carlo_collision_rate(
            &layout,
            &ActivationModel::default(),
            &Assignment::new(vec![0, 1, 2, 3]),
            4,
            5000,
            2,
        )
        .unwrap();
        assert!(rates.per_channel.iter().all(|&r| r == 0.0));
        assert_eq!(rates.network_average, 0.0);
    }
}
