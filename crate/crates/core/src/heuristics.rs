//! K-Medoids baselines with uniform and K-Means++ seeding.
//!
//! The dissimilarity between two devices is their joint activation probability
//! by default: devices that rarely wake up together are "close" and end up on
//! the same channel, which points the medoid objective in the same direction as
//! `F`. `1 - A` is available for sensitivity runs. K-Medoids minimizes its own
//! medoid cost; callers compare methods on `F` of the returned assignment.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Assignment, JointActivationMatrix};
use crate::objective::hard_objective;

pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dissimilarity {
    /// `d(i, k) = A[i][k]`.
    #[default]
    Joint,
    /// `d(i, k) = 1 - A[i][k]`.
    OneMinusJoint,
}

impl Dissimilarity {
    #[inline]
    pub fn between(self, a: &JointActivationMatrix, i: usize, k: usize) -> f64 {
        if i == k {
            return 0.0;
        }
        match self {
            Dissimilarity::Joint => a.get(i, k),
            Dissimilarity::OneMinusJoint => 1.0 - a.get(i, k),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Seeding {
    Uniform,
    KMeansPlusPlus,
}

/// Final medoids (ascending; channel `j` belongs to `medoids[j]`) and cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedoidState {
    pub medoids: Vec<usize>,
    pub assignment: Assignment,
    pub cost: f64,
    /// Medoid cost after the assignment step of every sweep.
    pub cost_trace: Vec<f64>,
}

fn check(a: &JointActivationMatrix, l: usize) -> Result<()> {
    if l == 0 {
        return Err(Error::InvalidParameter("number of clusters must be at least 1".into()));
    }
    if l > a.dim() {
        return Err(Error::InvalidParameter(format!("{l} clusters requested for {} devices", a.dim())));
    }
    Ok(())
}

/// `l` distinct medoids drawn uniformly.
pub fn uniform_init(a: &JointActivationMatrix, l: usize, seed: u64) -> Result<Vec<usize>> {
    check(a, l)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, a.dim(), l).into_vec())
}

/// K-Means++ seeding with the default dissimilarity.
pub fn kmeanspp_init(a: &JointActivationMatrix, l: usize, seed: u64) -> Result<Vec<usize>> {
    kmeanspp_init_with(a, l, seed, Dissimilarity::Joint)
}

/// First medoid uniform; each next one drawn with probability proportional to
/// the squared dissimilarity to its nearest chosen medoid. When every
/// unchosen device sits at zero dissimilarity the draw falls back to uniform.
pub fn kmeanspp_init_with(a: &JointActivationMatrix, l: usize, seed: u64, dissim: Dissimilarity) -> Result<Vec<usize>> {
    check(a, l)?;
    let n = a.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = (0..n).map(|i| dissim.between(a, i, chosen[0])).collect();
    while chosen.len() < l {
        let weights: Vec<f64> =
            (0..n).map(|i| if chosen.contains(&i) { 0.0 } else { nearest[i] * nearest[i] }).collect();
        let next = match WeightedIndex::new(&weights) {
            Ok(dist) => dist.sample(&mut rng),
            Err(_) => {
                let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
                free[rng.random_range(0..free.len())]
            }
        };
        chosen.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(dissim.between(a, i, next));
        }
    }
    Ok(chosen)
}

/// Assigns every device to its nearest medoid (medoids to themselves, ties to
/// the lowest-index medoid). Returns cluster index per device and the cost.
fn assign(a: &JointActivationMatrix, medoids: &[usize], dissim: Dissimilarity) -> (Vec<usize>, f64) {
    let mut cost = 0.0;
    let labels = (0..a.dim())
        .map(|i| {
            if let Some(own) = medoids.iter().position(|&m| m == i) {
                return own;
            }
            let mut best = 0;
            let mut best_d = dissim.between(a, i, medoids[0]);
            for (c, &m) in medoids.iter().enumerate().skip(1) {
                let d = dissim.between(a, i, m);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            cost += best_d;
            best
        })
        .collect();
    (labels, cost)
}

/// Voronoi-iteration K-Medoids refined from the given initial medoids.
///
/// Each sweep assigns devices to medoids and then moves each medoid to the
/// cluster member with the smallest summed dissimilarity, but only when that
/// strictly beats the current medoid (lowest index among the best). Stops
/// when no medoid moves or after `max_iter` sweeps.
pub fn kmedoids_from(
    a: &JointActivationMatrix,
    initial: &[usize],
    dissim: Dissimilarity,
    max_iter: usize,
) -> Result<(Assignment, MedoidState)> {
    let l = initial.len();
    check(a, l)?;
    let mut medoids = initial.to_vec();
    medoids.sort_unstable();
    if medoids.windows(2).any(|w| w[0] == w[1]) || medoids.iter().any(|&m| m >= a.dim()) {
        return Err(Error::InvalidParameter(format!("initial medoids {initial:?} are not distinct device indices")));
    }
    let mut trace = Vec::new();
    let (mut labels, mut cost) = assign(a, &medoids, dissim);
    trace.push(cost);
    for _ in 0..max_iter {
        let mut moved = false;
        let mut next = medoids.clone();
        for (c, medoid) in next.iter_mut().enumerate() {
            let members: Vec<usize> = (0..a.dim()).filter(|&i| labels[i] == c).collect();
            let spread = |m: usize| members.iter().map(|&k| dissim.between(a, m, k)).sum::<f64>();
            let mut best_sum = spread(*medoid);
            for &m in &members {
                let s = spread(m);
                if s < best_sum {
                    best_sum = s;
                    *medoid = m;
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
        next.sort_unstable();
        medoids = next;
        (labels, cost) = assign(a, &medoids, dissim);
        trace.push(cost);
    }
    let assignment = Assignment::new(labels);
    Ok((assignment.clone(), MedoidState { medoids, assignment, cost, cost_trace: trace }))
}

/// K-Medoids with uniformly drawn initial medoids.
pub fn kmedoids(a: &JointActivationMatrix, l: usize, seed: u64, max_iter: usize) -> Result<(Assignment, MedoidState)> {
    kmedoids_from(a, &uniform_init(a, l, seed)?, Dissimilarity::Joint, max_iter)
}

/// K-Medoids with K-Means++ seeding.
pub fn kmedoids_pp(a: &JointActivationMatrix, l: usize, seed: u64, max_iter: usize) -> Result<(Assignment, MedoidState)> {
    kmedoids_from(a, &kmeanspp_init(a, l, seed)?, Dissimilarity::Joint, max_iter)
}

pub fn kmedoids_with(
    a: &JointActivationMatrix,
    l: usize,
    seeding: Seeding,
    dissim: Dissimilarity,
    seed: u64,
    max_iter: usize,
) -> Result<(Assignment, MedoidState)> {
    let init = match seeding {
        Seeding::Uniform => uniform_init(a, l, seed)?,
        Seeding::KMeansPlusPlus => kmeanspp_init_with(a, l, seed, dissim)?,
    };
    kmedoids_from(a, &init, dissim, max_iter)
}

/// Best of `restarts` runs (seeds `seed, seed + 1, ...`) by `F`; earliest restart wins ties.
pub fn best_of_restarts(
    a: &JointActivationMatrix,
    l: usize,
    seeding: Seeding,
    dissim: Dissimilarity,
    seed: u64,
    restarts: usize,
    max_iter: usize,
) -> Result<(Assignment, MedoidState, f64)> {
    let mut best: Option<(Assignment, MedoidState, f64)> = None;
    for r in 0..restarts.max(1) {
        let (x, state) = kmedoids_with(a, l, seeding, dissim, seed.wrapping_add(r as u64), max_iter)?;
        let f = hard_objective(a, &x, l);
        if best.as_ref().is_none_or(|(_, _, bf)| f < *bf) {
            best = Some((x, state, f));
        }
    }
    Ok(best.expect("at least one restart"))
}
