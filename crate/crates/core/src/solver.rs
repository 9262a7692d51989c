//! Exact minimization of `F` over hard assignments.
//!
//! [`solve_exact`] is a depth-first branch-and-bound over partial assignments.
//! Devices are fixed one at a time in a branching order; channel-relabeling
//! symmetry is removed by letting the device at depth `d` use at most one
//! channel beyond those already opened. The node bound is
//!
//! ```text
//! cost(prefix)
//!   + sum over unassigned u of min_j (weight of u towards prefix devices on j)
//!   + sum of the P(m, L) lightest pair weights among the m unassigned devices
//! ```
//!
//! all divided by `L`, where an unopened channel counts as zero in the
//! per-device minimum and `P(m, L)` is the fewest same-channel pairs any split
//! of `m` devices into `L` channels can have. The two sums cover disjoint pair
//! sets, so the bound is admissible.
//!
//! [`brute_force`] enumerates every canonical assignment and is the oracle the
//! branch-and-bound is tested against.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descent::coordinate_descent;
use crate::error::{Error, Result};
use crate::heuristics::{kmedoids_pp, DEFAULT_MAX_ITER};
use crate::model::{Assignment, JointActivationMatrix};
use crate::objective::hard_objective;

/// Largest number of canonical assignments [`brute_force`] will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 100_000_000;

/// Relative optimality gap at which the search stops by default.
pub const DEFAULT_GAP: f64 = 0.01;

/// Denominator floor when the gap is taken relative to a zero objective.
pub const GAP_EPSILON: f64 = 1e-12;

/// Order in which devices are fixed along a branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BranchOrder {
    /// Descending `sum_k A[i][k]`, ties by index.
    #[default]
    MostConstrained,
    /// Ascending device index.
    Index,
    /// A seeded random permutation.
    Shuffled(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub gap_tolerance: f64,
    pub time_limit: Option<Duration>,
    pub node_limit: Option<u64>,
    pub initial_incumbent: Option<Assignment>,
    pub branch_order: BranchOrder,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            gap_tolerance: DEFAULT_GAP,
            time_limit: None,
            node_limit: None,
            initial_incumbent: None,
            branch_order: BranchOrder::default(),
        }
    }
}

impl SolverOptions {
    pub fn exact() -> Self {
        Self { gap_tolerance: 0.0, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.gap_tolerance >= 0.0) {
            return Err(Error::InvalidParameter(format!("gap tolerance must be >= 0, got {}", self.gap_tolerance)));
        }
        Ok(())
    }
}

/// Why the search stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Tree exhausted; the gap is within tolerance.
    Completed,
    TimeLimit,
    NodeLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncumbentEntry {
    pub elapsed_s: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    pub assignment: Assignment,
    pub objective: f64,
    pub lower_bound: f64,
    pub gap: f64,
    pub nodes_explored: u64,
    pub incumbent_log: Vec<IncumbentEntry>,
    pub termination: Termination,
}

fn relative_gap(objective: f64, lower_bound: f64) -> f64 {
    ((objective - lower_bound) / objective.max(GAP_EPSILON)).max(0.0)
}

fn check_channels(a: &JointActivationMatrix, n_channels: usize) -> Result<()> {
    if n_channels == 0 {
        return Err(Error::InvalidParameter("n_channels must be at least 1".into()));
    }
    if a.dim() == 0 {
        return Err(Error::InvalidParameter("matrix has no devices".into()));
    }
    Ok(())
}

/// Number of ways to split `n` labelled devices into at most `l` unlabeled non-empty groups.
pub fn canonical_assignment_count(n: usize, l: usize) -> u128 {
    // Stirling numbers of the second kind, row by row.
    let mut row = vec![0u128; l + 1];
    row[0] = 1;
    for _ in 0..n {
        for k in (1..=l).rev() {
            row[k] = row[k].saturating_mul(k as u128).saturating_add(row[k - 1]);
        }
        row[0] = 0;
    }
    row[1..].iter().fold(0u128, |acc, &s| acc.saturating_add(s))
}

/// Exhaustive search over canonical assignments (device 0 on channel 0, each
/// later device at most one channel past the highest used so far). Returns the
/// lexicographically smallest optimal assignment.
pub fn brute_force(a: &JointActivationMatrix, n_channels: usize) -> Result<SolverResult> {
    check_channels(a, n_channels)?;
    let n = a.dim();
    let count = canonical_assignment_count(n, n_channels);
    if count > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge { count, limit: BRUTE_FORCE_LIMIT });
    }
    let start = Instant::now();

    struct Enumerator<'a> {
        a: &'a JointActivationMatrix,
        l: usize,
        channel_of: Vec<usize>,
        best: Option<(f64, Vec<usize>)>,
        leaves: u64,
    }

    impl Enumerator<'_> {
        fn visit(&mut self, i: usize, used: usize, partial: f64) {
            let n = self.channel_of.len();
            if i == n {
                self.leaves += 1;
                let better = match &self.best {
                    None => true,
                    Some((best, _)) => partial <= best * (1.0 + 1e-9),
                };
                if better {
                    let candidate = Assignment::new(self.channel_of.clone());
                    let value = hard_objective(self.a, &candidate, self.l);
                    if self.best.as_ref().is_none_or(|(best, _)| value < *best) {
                        self.best = Some((value, candidate.into_inner()));
                    }
                }
                return;
            }
            let limit = (used + 1).min(self.l);
            for c in 0..limit {
                let added: f64 = (0..i).filter(|&k| self.channel_of[k] == c).map(|k| self.a.get(i, k)).sum();
                self.channel_of[i] = c;
                self.visit(i + 1, used.max(c + 1), partial + added / self.l as f64);
            }
        }
    }

    let mut e = Enumerator { a, l: n_channels, channel_of: vec![0; n], best: None, leaves: 0 };
    e.visit(0, 0, 0.0);
    let (objective, channel_of) = e.best.expect("at least one assignment");
    Ok(SolverResult {
        assignment: Assignment::new(channel_of),
        objective,
        lower_bound: objective,
        gap: 0.0,
        nodes_explored: e.leaves,
        incumbent_log: vec![IncumbentEntry { elapsed_s: start.elapsed().as_secs_f64(), objective }],
        termination: Termination::Completed,
    })
}

/// Snapshot of a node handed to a search observer.
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) struct NodeView<'a> {
    /// Channel per device, `None` while unassigned.
    pub partial: &'a [Option<usize>],
    pub bound: f64,
}

fn branching_permutation(a: &JointActivationMatrix, order: BranchOrder) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..a.dim()).collect();
    match order {
        BranchOrder::Index => {}
        BranchOrder::MostConstrained => {
            let sums: Vec<f64> = (0..a.dim()).map(|i| a.off_diagonal_row_sum(i)).collect();
            perm.sort_by(|&x, &y| sums[y].total_cmp(&sums[x]).then(x.cmp(&y)));
        }
        BranchOrder::Shuffled(seed) => perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
    }
    perm
}

/// Fewest same-channel pairs when `m` devices share `l` channels.
fn min_same_channel_pairs(m: usize, l: usize) -> usize {
    let q = m / l;
    let r = m % l;
    r * (q + 1) * q / 2 + (l - r) * q * q.saturating_sub(1) / 2
}

struct Search<'a, 'o> {
    a: &'a JointActivationMatrix,
    n: usize,
    l: usize,
    perm: Vec<usize>,
    /// Pair weights in branching order, `w[p * n + q]`.
    w: Vec<f64>,
    /// `pair_floor[pos]`: lightest same-channel pair mass among positions `>= pos`.
    pair_floor: Vec<f64>,
    /// `levels[d]`: weight of each position towards prefix devices on each channel, after `d` fixings.
    levels: Vec<Vec<f64>>,
    chan: Vec<usize>,
    gap: f64,
    start: Instant,
    time_limit: Option<Duration>,
    node_limit: Option<u64>,
    nodes: u64,
    incumbent: Option<(f64, Assignment)>,
    log: Vec<IncumbentEntry>,
    pruned_floor: f64,
    open_floor: f64,
    stopped: Option<Termination>,
    observer: Option<&'o mut dyn FnMut(&NodeView<'_>)>,
}

impl Search<'_, '_> {
    fn incumbent_value(&self) -> f64 {
        self.incumbent.as_ref().map_or(f64::INFINITY, |(v, _)| *v)
    }

    /// Bound of the node with `pos` devices fixed, costing `cost` (unscaled).
    fn bound(&self, pos: usize, cost: f64) -> f64 {
        let level = &self.levels[pos];
        let mut total = cost + self.pair_floor[pos];
        for q in pos..self.n {
            let row = &level[q * self.l..(q + 1) * self.l];
            total += row.iter().copied().fold(f64::INFINITY, f64::min);
        }
        total / self.l as f64
    }

    fn fix(&mut self, pos: usize, channel: usize) {
        let (done, rest) = self.levels.split_at_mut(pos + 1);
        let next = &mut rest[0];
        next.copy_from_slice(&done[pos]);
        for q in pos + 1..self.n {
            next[q * self.l + channel] += self.w[q * self.n + pos];
        }
        self.chan[pos] = channel;
    }

    fn partial_view(&self, pos: usize) -> Vec<Option<usize>> {
        let mut partial = vec![None; self.n];
        for p in 0..pos {
            partial[self.perm[p]] = Some(self.chan[p]);
        }
        partial
    }

    fn out_of_budget(&mut self) -> bool {
        if self.incumbent.is_none() {
            return false;
        }
        if self.node_limit.is_some_and(|lim| self.nodes >= lim) {
            self.stopped = Some(Termination::NodeLimit);
        } else if self.nodes % 256 == 0 && self.time_limit.is_some_and(|lim| self.start.elapsed() >= lim) {
            self.stopped = Some(Termination::TimeLimit);
        }
        self.stopped.is_some()
    }

    fn offer(&mut self, assignment: Assignment) {
        let value = hard_objective(self.a, &assignment, self.l);
        if value < self.incumbent_value() {
            self.log.push(IncumbentEntry { elapsed_s: self.start.elapsed().as_secs_f64(), objective: value });
            self.incumbent = Some((value, assignment));
        }
    }

    fn prune_threshold(&self) -> f64 {
        self.incumbent_value() * (1.0 - self.gap)
    }

    fn explore(&mut self, pos: usize, used: usize, cost: f64, bound: f64) {
        self.nodes += 1;
        if self.observer.is_some() {
            let partial = self.partial_view(pos);
            if let Some(obs) = self.observer.as_mut() {
                obs(&NodeView { partial: &partial, bound });
            }
        }
        if pos == self.n {
            let mut channel_of = vec![0; self.n];
            for p in 0..self.n {
                channel_of[self.perm[p]] = self.chan[p];
            }
            self.offer(Assignment::new(channel_of));
            return;
        }
        if self.out_of_budget() {
            self.open_floor = self.open_floor.min(bound);
            return;
        }

        let limit = (used + 1).min(self.l);
        let mut children: Vec<(f64, f64, usize)> = Vec::with_capacity(limit);
        for c in 0..limit {
            let child_cost = cost + self.levels[pos][pos * self.l + c];
            self.fix(pos, c);
            children.push((self.bound(pos + 1, child_cost), child_cost, c));
        }
        children.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.2.cmp(&y.2)));

        for (k, &(child_bound, child_cost, c)) in children.iter().enumerate() {
            if self.stopped.is_some() {
                self.open_floor = children[k..].iter().map(|ch| ch.0).fold(self.open_floor, f64::min);
                return;
            }
            let incumbent = self.incumbent_value();
            if child_bound >= self.prune_threshold() {
                if child_bound < incumbent {
                    self.pruned_floor = self.pruned_floor.min(child_bound);
                }
                continue;
            }
            self.fix(pos, c);
            self.explore(pos + 1, used.max(c + 1), child_cost, child_bound);
        }
    }
}

fn run_search(
    a: &JointActivationMatrix,
    n_channels: usize,
    opts: &SolverOptions,
    observer: Option<&mut dyn FnMut(&NodeView<'_>)>,
) -> Result<SolverResult> {
    check_channels(a, n_channels)?;
    opts.validate()?;
    let n = a.dim();
    let l = n_channels;
    let start = Instant::now();

    let perm = branching_permutation(a, opts.branch_order);
    let mut w = vec![0.0; n * n];
    for p in 0..n {
        for q in 0..n {
            if p != q {
                w[p * n + q] = a.get(perm[p], perm[q]);
            }
        }
    }
    let pair_floor = (0..=n)
        .map(|pos| {
            let mut weights: Vec<f64> =
                (pos..n).flat_map(|p| (p + 1..n).map(move |q| (p, q))).map(|(p, q)| w[p * n + q]).collect();
            weights.sort_by(f64::total_cmp);
            weights.iter().take(min_same_channel_pairs(n - pos, l)).sum()
        })
        .collect();

    let mut search = Search {
        a,
        n,
        l,
        perm,
        w,
        pair_floor,
        levels: vec![vec![0.0; n * l]; n + 1],
        chan: vec![0; n],
        gap: opts.gap_tolerance,
        start,
        time_limit: opts.time_limit,
        node_limit: opts.node_limit,
        nodes: 0,
        incumbent: None,
        log: Vec::new(),
        pruned_floor: f64::INFINITY,
        open_floor: f64::INFINITY,
        stopped: None,
        observer,
    };
    if let Some(warm) = &opts.initial_incumbent {
        if warm.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "warm start covers {} devices, matrix has {n}",
                warm.len()
            )));
        }
        warm.check_channels(l)?;
        search.offer(warm.clone());
    }

    let root_bound = search.bound(0, 0.0);
    if root_bound < search.prune_threshold() {
        search.explore(0, 0, 0.0, root_bound);
    } else if root_bound < search.incumbent_value() {
        search.pruned_floor = root_bound;
    }

    let (objective, assignment) = search.incumbent.clone().expect("search always reaches a leaf or has a warm start");
    let lower_bound = objective.min(search.pruned_floor).min(search.open_floor);
    Ok(SolverResult {
        assignment,
        objective,
        lower_bound,
        gap: relative_gap(objective, lower_bound),
        nodes_explored: search.nodes,
        incumbent_log: search.log,
        termination: search.stopped.unwrap_or(Termination::Completed),
    })
}

/// Branch-and-bound; with `gap_tolerance = 0` the result is optimal.
pub fn solve_exact(a: &JointActivationMatrix, n_channels: usize, opts: &SolverOptions) -> Result<SolverResult> {
    run_search(a, n_channels, opts, None)
}

#[cfg(test)]
pub(crate) fn solve_observed(
    a: &JointActivationMatrix,
    n_channels: usize,
    opts: &SolverOptions,
    observer: &mut dyn FnMut(&NodeView<'_>),
) -> Result<SolverResult> {
    run_search(a, n_channels, opts, Some(observer))
}

/// Runs one search per branching order concurrently and keeps the best
/// (lowest objective, then highest lower bound, then first listed).
pub fn solve_portfolio(
    a: &JointActivationMatrix,
    n_channels: usize,
    opts: &SolverOptions,
    orders: &[BranchOrder],
) -> Result<SolverResult> {
    if orders.is_empty() {
        return solve_exact(a, n_channels, opts);
    }
    let results = orders
        .par_iter()
        .map(|&branch_order| solve_exact(a, n_channels, &SolverOptions { branch_order, ..opts.clone() }))
        .collect::<Result<Vec<_>>>()?;
    Ok(results
        .into_iter()
        .reduce(|best, r| {
            let better = r.objective < best.objective
                || (r.objective == best.objective && r.lower_bound > best.lower_bound);
            if better {
                r
            } else {
                best
            }
        })
        .expect("non-empty"))
}

/// K-Medoids (K-Means++ seeding), polished by coordinate descent, then used
/// as the warm start of [`solve_exact`].
pub fn heuristic_then_exact(
    a: &JointActivationMatrix,
    n_channels: usize,
    opts: &SolverOptions,
    seed: u64,
) -> Result<SolverResult> {
    check_channels(a, n_channels)?;
    let n = a.dim();
    let start = if n_channels >= n {
        Assignment::new((0..n).collect())
    } else {
        let (clustered, _) = kmedoids_pp(a, n_channels, seed, DEFAULT_MAX_ITER)?;
        coordinate_descent(a, &clustered, n_channels, 100)?
    };
    let warm = match &opts.initial_incumbent {
        Some(given) if hard_objective(a, given, n_channels) <= hard_objective(a, &start, n_channels) => given.clone(),
        _ => start,
    };
    solve_exact(a, n_channels, &SolverOptions { initial_incumbent: Some(warm), ..opts.clone() })
}
