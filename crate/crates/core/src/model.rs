//! Core domain types: the joint activation matrix `A`, soft schedules `E`,
//! hard assignments, and the collision report produced by the evaluator.
//!
//! Channel indices are 0-based everywhere. The diagonal of `A` holds each
//! device's marginal activation probability; objective code only reads the
//! off-diagonal entries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};

/// Absolute tolerance on the row sums of a [`ScheduleMatrix`].
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Number of devices `N` and orthogonal channels `L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub n_devices: usize,
    pub n_channels: usize,
}

impl NetworkConfig {
    pub fn new(n_devices: usize, n_channels: usize) -> Result<Self> {
        if n_devices == 0 {
            return Err(Error::InvalidParameter("n_devices must be at least 1".into()));
        }
        if n_channels == 0 {
            return Err(Error::InvalidParameter("n_channels must be at least 1".into()));
        }
        Ok(Self { n_devices, n_channels })
    }

    /// With `L >= N` every device can sit alone and the optimum is trivially zero.
    pub fn is_trivial(&self) -> bool {
        self.n_channels >= self.n_devices
    }
}

/// Symmetric `N x N` matrix of pairwise joint activation probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct JointActivationMatrix {
    dim: usize,
    entries: Vec<f64>,
}

/// Checks a square matrix against the [`JointActivationMatrix`] invariants.
///
/// Range violations are reported per entry; symmetry and consistency
/// violations once per unordered pair `(i, j)` with `i < j`. The consistency
/// rule (joint never exceeds a marginal) is only applied when the diagonal
/// carries marginals, i.e. when at least one diagonal entry is non-zero.
pub fn validate_matrix(rows: &[Vec<f64>]) -> Result<Vec<Violation>> {
    let n = rows.len();
    check_square(rows)?;
    let mut violations = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                violations.push(Violation::Range { row: i, col: j, value: v });
            }
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (rows[i][j], rows[j][i]);
            if !a.is_nan() && !b.is_nan() && a != b {
                violations.push(Violation::Asymmetric { row: i, col: j });
            }
        }
    }
    let has_marginals = (0..n).any(|i| rows[i][i] != 0.0);
    if has_marginals {
        for i in 0..n {
            for j in i + 1..n {
                let marginal = rows[i][i].min(rows[j][j]);
                let joint = rows[i][j];
                if joint > marginal {
                    violations.push(Violation::JointExceedsMarginal { row: i, col: j, joint, marginal });
                }
            }
        }
    }
    Ok(violations)
}

fn check_square(rows: &[Vec<f64>]) -> Result<()> {
    let n = rows.len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(Error::NotSquare { row: i, len: row.len(), expected: n });
        }
    }
    Ok(())
}

impl JointActivationMatrix {
    /// Builds a validated matrix from row vectors.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidParameter("matrix must have at least one device".into()));
        }
        let violations = validate_matrix(&rows)?;
        if !violations.is_empty() {
            return Err(Error::InvalidMatrix(violations));
        }
        let dim = rows.len();
        Ok(Self { dim, entries: rows.into_iter().flatten().collect() })
    }

    /// Builds a matrix with a zero diagonal from a pair function evaluated for `i < j`.
    pub fn from_pairs(dim: usize, mut pair: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut rows = vec![vec![0.0; dim]; dim];
        for i in 0..dim {
            for j in i + 1..dim {
                let v = pair(i, j);
                rows[i][j] = v;
                rows[j][i] = v;
            }
        }
        Self::from_rows(rows)
    }

    pub fn zeros(dim: usize) -> Self {
        Self { dim, entries: vec![0.0; dim * dim] }
    }

    /// Assembles a matrix whose entries are already known to satisfy the invariants.
    pub(crate) fn from_flat_unchecked(dim: usize, entries: Vec<f64>) -> Self {
        debug_assert_eq!(entries.len(), dim * dim);
        Self { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    /// Marginal activation probability of device `i` (diagonal entry).
    pub fn marginal(&self, i: usize) -> f64 {
        self.get(i, i)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    /// Sum of `A[i][k]` over `k != i`.
    pub fn off_diagonal_row_sum(&self, i: usize) -> f64 {
        self.row(i).iter().enumerate().filter(|&(k, _)| k != i).map(|(_, v)| v).sum()
    }

    /// Copy with every off-diagonal entry multiplied by `factor`.
    pub fn scale_off_diagonal(&self, factor: f64) -> Result<Self> {
        let mut rows = self.to_rows();
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                if i != j {
                    *v *= factor;
                }
            }
        }
        Self::from_rows(rows)
    }
}

/// Row-stochastic `N x L` matrix of channel-selection probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl ScheduleMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidParameter("schedule must have at least one row".into()));
        }
        let l = rows[0].len();
        if l == 0 {
            return Err(Error::InvalidSchedule { row: 0, reason: "row has no channels".into() });
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != l {
                return Err(Error::InvalidSchedule {
                    row: i,
                    reason: format!("has {} entries, expected {l}", row.len()),
                });
            }
            if let Some((j, v)) = row.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidSchedule {
                    row: i,
                    reason: format!("entry {j} = {v} is not a probability in [0,1]"),
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidSchedule { row: i, reason: format!("row sums to {sum}, expected 1") });
            }
        }
        Ok(Self { rows: n, cols: l, entries: rows.into_iter().flatten().collect() })
    }

    /// Every device picks each channel with probability `1/L`.
    pub fn uniform(n_devices: usize, n_channels: usize) -> Self {
        let p = 1.0 / n_channels as f64;
        Self { rows: n_devices, cols: n_channels, entries: vec![p; n_devices * n_channels] }
    }

    pub fn n_devices(&self) -> usize {
        self.rows
    }

    pub fn n_channels(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    /// Replaces row `i` with a one-hot row at `channel`.
    pub(crate) fn set_hard_row(&mut self, i: usize, channel: usize) {
        let row = &mut self.entries[i * self.cols..(i + 1) * self.cols];
        row.fill(0.0);
        row[channel] = 1.0;
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    /// Returns a copy with columns reordered: new column `k` is old column `perm[k]`.
    pub fn permute_channels(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "permutation has {} entries for {} channels",
                perm.len(),
                self.cols
            )));
        }
        let rows = self.to_rows().into_iter().map(|row| perm.iter().map(|&p| row[p]).collect()).collect();
        Self::new(rows)
    }

    pub fn is_hard(&self) -> bool {
        self.entries.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

/// Hard schedule: one channel index per device.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Assignment {
    channel_of: Vec<usize>,
}

impl Assignment {
    pub fn new(channel_of: Vec<usize>) -> Self {
        Self { channel_of }
    }

    pub fn channel_of(&self) -> &[usize] {
        &self.channel_of
    }

    #[inline]
    pub fn channel(&self, device: usize) -> usize {
        self.channel_of[device]
    }

    pub fn len(&self) -> usize {
        self.channel_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channel_of.is_empty()
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.channel_of
    }

    /// Errors if any device uses a channel `>= n_channels`.
    pub fn check_channels(&self, n_channels: usize) -> Result<()> {
        match self.channel_of.iter().enumerate().find(|&(_, &c)| c >= n_channels) {
            Some((device, &channel)) => Err(Error::ChannelOutOfRange { device, channel, n_channels }),
            None => Ok(()),
        }
    }

    /// Device sets per channel, each sorted ascending; these partition `0..N`.
    pub fn clusters(&self, n_channels: usize) -> Vec<Vec<usize>> {
        let mut clusters = vec![Vec::new(); n_channels];
        for (device, &c) in self.channel_of.iter().enumerate() {
            clusters[c].push(device);
        }
        clusters
    }

    /// Relabels channels in order of first use, so device 0 is on channel 0.
    pub fn canonical(&self) -> Self {
        let mut relabel: Vec<Option<usize>> = Vec::new();
        let mut next = 0;
        let channel_of = self
            .channel_of
            .iter()
            .map(|&c| {
                if relabel.len() <= c {
                    relabel.resize(c + 1, None);
                }
                *relabel[c].get_or_insert_with(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        Self { channel_of }
    }
}

/// Binary schedule with a single 1 per row at the assigned channel.
pub fn assignment_to_schedule(assignment: &Assignment, n_channels: usize) -> Result<ScheduleMatrix> {
    if n_channels == 0 {
        return Err(Error::InvalidParameter("n_channels must be at least 1".into()));
    }
    assignment.check_channels(n_channels)?;
    let n = assignment.len();
    let mut entries = vec![0.0; n * n_channels];
    for (i, &c) in assignment.channel_of().iter().enumerate() {
        entries[i * n_channels + c] = 1.0;
    }
    Ok(ScheduleMatrix { rows: n, cols: n_channels, entries })
}

/// Inverse of [`assignment_to_schedule`]; fails on rows that are not one-hot.
pub fn schedule_to_assignment(schedule: &ScheduleMatrix) -> Result<Assignment> {
    let channel_of = (0..schedule.n_devices())
        .map(|i| {
            let row = schedule.row(i);
            let ones: Vec<usize> = row.iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(j, _)| j).collect();
            if ones.len() == 1 && row.iter().all(|&v| v == 0.0 || v == 1.0) {
                Ok(ones[0])
            } else {
                Err(Error::InvalidSchedule { row: i, reason: "row is not a hard (one-hot) assignment".into() })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Assignment::new(channel_of))
}

/// Per-channel collision probabilities, their mean, and the pairwise bound `F(E)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub per_channel: Vec<f64>,
    pub network_average: f64,
    pub pairwise_bound: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn valid_matrix_has_no_violations() {
        let v = validate_matrix(&[vec![0.3, 0.1], vec![0.1, 0.3]]).unwrap();
        assert!(v.is_empty());
    }

    #[test]
    fn joint_above_marginal_is_one_violation() {
        let v = validate_matrix(&[vec![0.3, 0.5], vec![0.5, 0.3]]).unwrap();
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::JointExceedsMarginal { row: 0, col: 1, .. }));
    }

    #[test]
    fn asymmetry_is_reported_once() {
        let v = validate_matrix(&[vec![0.3, 0.2], vec![0.1, 0.3]]).unwrap();
        assert_eq!(v, vec![Violation::Asymmetric { row: 0, col: 1 }]);
    }

    #[test]
    fn non_square_is_a_shape_error() {
        let err = validate_matrix(&[vec![0.0, 0.1], vec![0.1]]).unwrap_err();
        assert!(matches!(err, Error::NotSquare { row: 1, len: 1, expected: 2 }));
    }

    #[test]
    fn nan_is_a_range_violation() {
        let err = JointActivationMatrix::from_rows(vec![vec![0.0, f64::NAN], vec![f64::NAN, 0.0]]).unwrap_err();
        match err {
            Error::InvalidMatrix(v) => assert!(v.iter().all(|x| matches!(x, Violation::Range { .. }))),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_diagonal_skips_consistency() {
        let m = JointActivationMatrix::from_pairs(3, |_, _| 0.7).unwrap();
        assert_eq!(m.get(0, 2), 0.7);
        assert_eq!(m.marginal(1), 0.0);
    }

    #[test]
    fn assignment_to_schedule_examples() {
        let s = assignment_to_schedule(&Assignment::new(vec![0, 1]), 2).unwrap();
        assert_eq!(s.to_rows(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let s = assignment_to_schedule(&Assignment::new(vec![0, 0, 0]), 2).unwrap();
        assert_eq!(s.to_rows(), vec![vec![1.0, 0.0]; 3]);
    }

    #[test]
    fn out_of_range_channel_is_rejected() {
        let err = assignment_to_schedule(&Assignment::new(vec![0, 2]), 2).unwrap_err();
        assert!(matches!(err, Error::ChannelOutOfRange { device: 1, channel: 2, n_channels: 2 }));
    }

    #[test]
    fn schedule_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.random_range(1..12);
            let l = rng.random_range(1..5);
            let x = Assignment::new((0..n).map(|_| rng.random_range(0..l)).collect());
            let s = assignment_to_schedule(&x, l).unwrap();
            assert!(s.is_hard());
            assert_eq!(schedule_to_assignment(&s).unwrap(), x);
            // column supports partition the device set
            let clusters = x.clusters(l);
            let mut all: Vec<usize> = clusters.concat();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn soft_rows_do_not_convert() {
        let s = ScheduleMatrix::uniform(2, 2);
        assert!(matches!(schedule_to_assignment(&s), Err(Error::InvalidSchedule { row: 0, .. })));
    }

    #[test]
    fn schedule_row_sum_is_checked() {
        let err = ScheduleMatrix::new(vec![vec![0.5, 0.5], vec![0.5, 0.4]]).unwrap_err();
        assert!(matches!(err, Error::InvalidSchedule { row: 1, .. }));
        assert!(ScheduleMatrix::new(vec![vec![0.5, 0.5 + 1e-12]]).is_ok());
    }

    #[test]
    fn canonical_relabels_by_first_use() {
        let a = Assignment::new(vec![2, 0, 2, 1]);
        assert_eq!(a.canonical().channel_of(), &[0, 1, 0, 2]);
    }

    #[test]
    fn network_config_rejects_zero() {
        assert!(NetworkConfig::new(0, 2).is_err());
        assert!(NetworkConfig::new(3, 0).is_err());
        assert!(NetworkConfig::new(3, 3).unwrap().is_trivial());
    }
}
