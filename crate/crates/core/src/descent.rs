//! Single-device improvement operators on `F`.
//!
//! Holding every other row of `E` fixed, `F` is linear in row `i`:
//! `F = const + (1/L) sum_j e[i][j] w(j)` with `w(j) = sum_{k != i} A[i][k] e[k][j]`.
//! Moving all of device `i`'s mass onto `argmin_j w(j)` therefore never
//! increases `F`, which is why an optimal schedule can always be taken hard.

use crate::error::{Error, Result};
use crate::model::{Assignment, JointActivationMatrix, ScheduleMatrix};

/// `costs[j]`: A-weighted mass of the other devices on channel `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceChannelCost {
    pub device: usize,
    pub costs: Vec<f64>,
}

impl DeviceChannelCost {
    /// Cheapest channel, lowest index on ties.
    pub fn argmin(&self) -> usize {
        argmin(&self.costs)
    }
}

fn argmin(costs: &[f64]) -> usize {
    let mut best = 0;
    for (j, &c) in costs.iter().enumerate().skip(1) {
        if c < costs[best] {
            best = j;
        }
    }
    best
}

pub fn device_costs(a: &JointActivationMatrix, e: &ScheduleMatrix, device: usize) -> Result<DeviceChannelCost> {
    if a.dim() != e.n_devices() {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {} devices but schedule has {} rows",
            a.dim(),
            e.n_devices()
        )));
    }
    if device >= a.dim() {
        return Err(Error::InvalidParameter(format!("device {device} out of range for {} devices", a.dim())));
    }
    Ok(DeviceChannelCost { device, costs: soft_costs(a, e, device) })
}

fn soft_costs(a: &JointActivationMatrix, e: &ScheduleMatrix, device: usize) -> Vec<f64> {
    let mut costs = vec![0.0; e.n_channels()];
    for (k, &w) in a.row(device).iter().enumerate() {
        if k == device || w == 0.0 {
            continue;
        }
        for (c, &p) in costs.iter_mut().zip(e.row(k)) {
            *c += w * p;
        }
    }
    costs
}

fn hard_costs(a: &JointActivationMatrix, assignment: &[usize], n_channels: usize, device: usize, costs: &mut Vec<f64>) {
    costs.clear();
    costs.resize(n_channels, 0.0);
    for (k, &w) in a.row(device).iter().enumerate() {
        if k != device {
            costs[assignment[k]] += w;
        }
    }
}

fn hard_channel(row: &[f64]) -> Option<usize> {
    let c = row.iter().position(|&p| p == 1.0)?;
    row.iter().enumerate().all(|(j, &p)| j == c || p == 0.0).then_some(c)
}

/// Rounds a soft schedule to a hard one, one device at a time in ascending
/// index order, each time against the partially rounded matrix. Rows that are
/// already hard keep their channel, so a hard input is returned unchanged.
pub fn round_to_hard(a: &JointActivationMatrix, e: &ScheduleMatrix) -> Result<Assignment> {
    if a.dim() != e.n_devices() {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {} devices but schedule has {} rows",
            a.dim(),
            e.n_devices()
        )));
    }
    let mut work = e.clone();
    let mut channel_of = Vec::with_capacity(a.dim());
    for i in 0..a.dim() {
        if let Some(c) = hard_channel(work.row(i)) {
            channel_of.push(c);
            continue;
        }
        let best = argmin(&soft_costs(a, &work, i));
        work.set_hard_row(i, best);
        channel_of.push(best);
    }
    Ok(Assignment::new(channel_of))
}

/// Repeated single-device moves to the cheapest channel until a full sweep
/// makes no move or `max_sweeps` sweeps have run. A move is taken only when
/// it strictly lowers the device's cost, so `F` strictly decreases on every
/// accepted move.
pub fn coordinate_descent(
    a: &JointActivationMatrix,
    start: &Assignment,
    n_channels: usize,
    max_sweeps: usize,
) -> Result<Assignment> {
    if start.len() != a.dim() {
        return Err(Error::DimensionMismatch(format!(
            "assignment covers {} devices, matrix has {}",
            start.len(),
            a.dim()
        )));
    }
    start.check_channels(n_channels)?;
    let mut channel_of = start.channel_of().to_vec();
    let mut costs = Vec::with_capacity(n_channels);
    for _ in 0..max_sweeps {
        let mut moved = false;
        for i in 0..a.dim() {
            hard_costs(a, &channel_of, n_channels, i, &mut costs);
            let best = argmin(&costs);
            if costs[best] < costs[channel_of[i]] {
                channel_of[i] = best;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    Ok(Assignment::new(channel_of))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::assignment_to_schedule;
    use crate::objective::{hard_objective, pairwise_bound};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> JointActivationMatrix {
        JointActivationMatrix::from_pairs(n, |_, _| rng.random::<f64>()).unwrap()
    }

    fn random_soft(rng: &mut ChaCha8Rng, n: usize, l: usize) -> ScheduleMatrix {
        let rows = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..l).map(|_| rng.random::<f64>()).collect();
                let s: f64 = raw.iter().sum();
                let mut row: Vec<f64> = raw.iter().map(|v| v / s).collect();
                let head: f64 = row[..l - 1].iter().sum();
                row[l - 1] = (1.0 - head).max(0.0);
                row
            })
            .collect();
        ScheduleMatrix::new(rows).unwrap()
    }

    #[test]
    fn zero_matrix_has_zero_costs() {
        let a = JointActivationMatrix::zeros(3);
        let c = device_costs(&a, &ScheduleMatrix::uniform(3, 2), 1).unwrap();
        assert_eq!(c.costs, vec![0.0, 0.0]);
    }

    #[test]
    fn single_peer_cost() {
        let a = JointActivationMatrix::from_pairs(2, |_, _| 0.4).unwrap();
        let e = assignment_to_schedule(&Assignment::new(vec![0, 1]), 2).unwrap();
        assert_eq!(device_costs(&a, &e, 1).unwrap().costs, vec![0.4, 0.0]);
    }

    #[test]
    fn costs_match_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 6);
        let e = random_soft(&mut rng, 6, 3);
        for i in 0..6 {
            let c = device_costs(&a, &e, i).unwrap();
            for j in 0..3 {
                // w1 over i2 > i plus w2 over i1 < i
                let mut w1 = 0.0;
                for i2 in i + 1..6 {
                    w1 += a.get(i, i2) * e.get(i2, j);
                }
                let mut w2 = 0.0;
                for i1 in 0..i {
                    w2 += a.get(i1, i) * e.get(i1, j);
                }
                assert!((c.costs[j] - (w1 + w2)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn hard_input_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a = random_matrix(&mut rng, 7);
            let x = coordinate_descent(&a, &Assignment::new(vec![0; 7]), 3, 100).unwrap();
            let e = assignment_to_schedule(&x, 3).unwrap();
            assert_eq!(round_to_hard(&a, &e).unwrap(), x);
        }
    }

    #[test]
    fn uniform_pair_splits() {
        let a = JointActivationMatrix::from_pairs(2, |_, _| 0.9).unwrap();
        let e = ScheduleMatrix::uniform(2, 2);
        assert!((pairwise_bound(&a, &e).unwrap() - 0.225).abs() < 1e-15);
        let x = round_to_hard(&a, &e).unwrap();
        assert_ne!(x.channel(0), x.channel(1));
        assert_eq!(hard_objective(&a, &x, 2), 0.0);
    }

    #[test]
    fn rounding_never_increases_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let n = rng.random_range(2..=10);
            let l = rng.random_range(1..=4);
            let a = random_matrix(&mut rng, n);
            let e = random_soft(&mut rng, n, l);
            let x = round_to_hard(&a, &e).unwrap();
            let before = pairwise_bound(&a, &e).unwrap();
            let after = pairwise_bound(&a, &assignment_to_schedule(&x, l).unwrap()).unwrap();
            assert!(after <= before + 1e-12, "{after} > {before}");
        }
    }

    #[test]
    fn descent_reaches_the_four_device_optimum() {
        let a = JointActivationMatrix::from_pairs(4, |i, j| match (i, j) {
            (0, 1) => 0.9,
            (2, 3) => 0.8,
            _ => 0.1,
        })
        .unwrap();
        let start = Assignment::new(vec![0, 0, 1, 1]);
        let x = coordinate_descent(&a, &start, 2, 100).unwrap();
        assert!((hard_objective(&a, &x, 2) - 0.1).abs() < 1e-15);
        // already optimal: untouched
        let opt = Assignment::new(vec![0, 1, 0, 1]);
        assert_eq!(coordinate_descent(&a, &opt, 2, 100).unwrap(), opt);
    }

    #[test]
    fn descent_validates_input() {
        let a = JointActivationMatrix::zeros(3);
        assert!(coordinate_descent(&a, &Assignment::new(vec![0, 0]), 2, 10).is_err());
        assert!(coordinate_descent(&a, &Assignment::new(vec![0, 0, 5]), 2, 10).is_err());
    }
}
