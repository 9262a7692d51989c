//! Alarm-epicenter simulation of spatially correlated device activation.
//!
//! Devices are dropped uniformly in a disk whose radius is chosen so that the
//! deployment density is fixed. At every time step one alarm fires at an
//! epicenter drawn uniformly in the same disk, and each device wakes up
//! independently with probability `exp(-d / lambda)`, `d` being its distance
//! to the epicenter.
//!
//! # Random streams
//!
//! All randomness comes from `ChaCha8Rng`. Round `t` of a run seeded with `s`
//! uses `ChaCha8Rng::seed_from_u64(s)` switched to stream `t`, so any round can
//! be replayed in isolation and parallel estimation is bit-identical to a
//! sequential one. Layout generation uses stream [`LAYOUT_STREAM`] of the same
//! seed. Within a round the epicenter is drawn first (two uniforms) and then
//! one uniform per device in index order, independent of `lambda`; runs with
//! different `lambda` and the same seed are therefore coupled monotonically.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::JointActivationMatrix;

/// Stream reserved for layout generation.
pub const LAYOUT_STREAM: u64 = u64::MAX;

/// Deployment density used throughout the experiments, in devices per m².
pub const DEFAULT_DENSITY: f64 = 0.2;
/// Default decay length of the activation function, in meters.
pub const DEFAULT_LAMBDA: f64 = 3.0;
/// Default number of simulated alarm steps.
pub const DEFAULT_STEPS: u64 = 1_000_000;

const BATCH_STEPS: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Device positions inside a disk centered at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceLayout {
    positions: Vec<Point>,
    region_radius: f64,
    density: f64,
}

impl DeviceLayout {
    pub fn new(positions: Vec<Point>, region_radius: f64, density: f64) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidParameter("layout needs at least one device".into()));
        }
        if !(region_radius > 0.0 && region_radius.is_finite()) {
            return Err(Error::InvalidParameter(format!("region radius must be positive, got {region_radius}")));
        }
        if !(density > 0.0 && density.is_finite()) {
            return Err(Error::InvalidParameter(format!("density must be positive, got {density}")));
        }
        if let Some((i, p)) =
            positions.iter().enumerate().find(|(_, p)| !(p.norm() <= region_radius * (1.0 + 1e-12)))
        {
            return Err(Error::InvalidParameter(format!(
                "device {i} at ({}, {}) lies outside the disk of radius {region_radius}",
                p.x, p.y
            )));
        }
        Ok(Self { positions, region_radius, density })
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn region_radius(&self) -> f64 {
        self.region_radius
    }

    pub fn density(&self) -> f64 {
        self.density
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Radius `R` of the disk holding `n` devices at the given density (`n = density * pi * R^2`).
pub fn region_radius_for(n: usize, density: f64) -> f64 {
    (n as f64 / (density * PI)).sqrt()
}

/// Activation law `f(d) = exp(-d / lambda)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationModel {
    lambda: f64,
}

impl ActivationModel {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    #[inline]
    pub fn probability(&self, distance: f64) -> f64 {
        (-distance / self.lambda).exp()
    }
}

impl Default for ActivationModel {
    fn default() -> Self {
        Self { lambda: DEFAULT_LAMBDA }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub steps: u64,
    pub seed: u64,
}

impl SimulationSpec {
    pub fn new(steps: u64, seed: u64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidParameter("steps must be at least 1".into()));
        }
        Ok(Self { steps, seed })
    }
}

/// Generator for round `step` of a run seeded with `seed`.
pub fn round_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Uniform point in the disk of the given radius (polar inverse transform).
pub fn sample_in_disk<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> Point {
    let r = radius * rng.random::<f64>().sqrt();
    let theta = 2.0 * PI * rng.random::<f64>();
    Point::new(r * theta.cos(), r * theta.sin())
}

pub fn generate_layout(n: usize, density: f64, seed: u64) -> Result<DeviceLayout> {
    if n == 0 {
        return Err(Error::InvalidParameter("device count must be at least 1".into()));
    }
    if !(density > 0.0 && density.is_finite()) {
        return Err(Error::InvalidParameter(format!("density must be positive, got {density}")));
    }
    let radius = region_radius_for(n, density);
    let mut rng = round_rng(seed, LAYOUT_STREAM);
    let positions = (0..n).map(|_| sample_in_disk(&mut rng, radius)).collect();
    DeviceLayout::new(positions, radius, density)
}

/// Fires one alarm and returns the indices (ascending) of the devices it wakes up.
pub fn activation_round<R: Rng + ?Sized>(layout: &DeviceLayout, model: &ActivationModel, rng: &mut R) -> Vec<usize> {
    let epicenter = sample_in_disk(rng, layout.region_radius());
    layout
        .positions()
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let u: f64 = rng.random();
            (u < model.probability(p.distance(&epicenter))).then_some(i)
        })
        .collect()
}

/// Empirical joint activation matrix over `spec.steps` alarm rounds.
///
/// Off-diagonal entries are the fraction of rounds in which both devices were
/// active; the diagonal is the fraction in which the device was active.
pub fn estimate_joint_activation(
    layout: &DeviceLayout,
    model: &ActivationModel,
    spec: &SimulationSpec,
) -> JointActivationMatrix {
    let n = layout.len();
    let batches = spec.steps.div_ceil(BATCH_STEPS);
    let counts = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut counts = vec![0u64; n * n];
            let end = ((b + 1) * BATCH_STEPS).min(spec.steps);
            for step in b * BATCH_STEPS..end {
                let active = activation_round(layout, model, &mut round_rng(spec.seed, step));
                for (k, &i) in active.iter().enumerate() {
                    counts[i * n + i] += 1;
                    for &j in &active[k + 1..] {
                        counts[i * n + j] += 1;
                    }
                }
            }
            counts
        })
        .reduce(
            || vec![0u64; n * n],
            |mut acc, c| {
                acc.iter_mut().zip(c).for_each(|(a, c)| *a += c);
                acc
            },
        );
    let steps = spec.steps as f64;
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let p = counts[i * n + j] as f64 / steps;
            entries[i * n + j] = p;
            entries[j * n + i] = p;
        }
    }
    JointActivationMatrix::from_flat_unchecked(n, entries)
}

/// Deterministic counterpart of [`estimate_joint_activation`].
///
/// Midpoint rule on a `grid_resolution x grid_resolution` grid over the
/// bounding square of the deployment disk, keeping cells whose midpoint lies
/// in the disk. Entry `(i, j)` is the disk average of `f(d_i) f(d_j)`; the
/// diagonal uses `f(d_i)` alone.
pub fn quadrature_joint_activation(
    layout: &DeviceLayout,
    model: &ActivationModel,
    grid_resolution: usize,
) -> Result<JointActivationMatrix> {
    if grid_resolution < 64 {
        return Err(Error::InvalidParameter(format!("grid resolution must be at least 64, got {grid_resolution}")));
    }
    let n = layout.len();
    let radius = layout.region_radius();
    let h = 2.0 * radius / grid_resolution as f64;
    let r2 = radius * radius;

    let (sums, cells) = (0..grid_resolution)
        .into_par_iter()
        .map(|row| {
            let y = -radius + (row as f64 + 0.5) * h;
            let mut sums = vec![0.0; n * n];
            let mut f = vec![0.0; n];
            let mut cells = 0u64;
            for col in 0..grid_resolution {
                let x = -radius + (col as f64 + 0.5) * h;
                if x * x + y * y > r2 {
                    continue;
                }
                cells += 1;
                let p = Point::new(x, y);
                for (fi, pos) in f.iter_mut().zip(layout.positions()) {
                    *fi = model.probability(pos.distance(&p));
                }
                for i in 0..n {
                    sums[i * n + i] += f[i];
                    for j in i + 1..n {
                        sums[i * n + j] += f[i] * f[j];
                    }
                }
            }
            (sums, cells)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((vec![0.0; n * n], 0u64), |(mut acc, total), (s, c)| {
            acc.iter_mut().zip(s).for_each(|(a, s)| *a += s);
            (acc, total + c)
        });

    let cells = cells as f64;
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = (sums[i * n + j] / cells).clamp(0.0, 1.0);
            entries[i * n + j] = v;
            entries[j * n + i] = v;
        }
    }
    Ok(JointActivationMatrix::from_flat_unchecked(n, entries))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_device_layout() -> DeviceLayout {
        let r = region_radius_for(3, DEFAULT_DENSITY);
        DeviceLayout::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(-0.5, 1.2)], r, DEFAULT_DENSITY)
            .unwrap()
    }

    #[test]
    fn radius_for_hundred_devices() {
        let layout = generate_layout(100, 0.2, 1).unwrap();
        let expected = (100.0 / (0.2 * PI)).sqrt();
        assert!((layout.region_radius() - expected).abs() <= 1e-9 * expected);
        assert!((expected - 12.6157).abs() < 1e-4);
        assert!(layout.positions().iter().all(|p| p.norm() <= layout.region_radius()));
    }

    #[test]
    fn single_device_lies_in_disk() {
        for seed in 0..50 {
            let layout = generate_layout(1, 3.7, seed).unwrap();
            assert!(layout.positions()[0].norm() <= layout.region_radius());
        }
    }

    #[test]
    fn layout_is_deterministic() {
        assert_eq!(generate_layout(20, 0.2, 9).unwrap(), generate_layout(20, 0.2, 9).unwrap());
        assert_ne!(generate_layout(20, 0.2, 9).unwrap(), generate_layout(20, 0.2, 10).unwrap());
    }

    #[test]
    fn bad_parameters_are_rejected() {
        assert!(generate_layout(5, 0.0, 1).is_err());
        assert!(generate_layout(5, -1.0, 1).is_err());
        assert!(ActivationModel::new(0.0).is_err());
        assert!(SimulationSpec::new(0, 1).is_err());
        assert!(quadrature_joint_activation(&three_device_layout(), &ActivationModel::default(), 32).is_err());
    }

    #[test]
    fn device_at_epicenter_is_always_active() {
        let model = ActivationModel::new(3.0).unwrap();
        assert_eq!(model.probability(0.0), 1.0);
        // a one-device layout with a vanishing disk puts the epicenter on the device
        let layout = DeviceLayout::new(vec![Point::new(0.0, 0.0)], 1e-300, 1.0).unwrap();
        for step in 0..1000 {
            assert_eq!(activation_round(&layout, &model, &mut round_rng(4, step)), vec![0]);
        }
    }

    #[test]
    fn tiny_lambda_never_activates_pairs() {
        let layout = generate_layout(6, 0.2, 3).unwrap();
        let model = ActivationModel::new(1e-6).unwrap();
        let a = estimate_joint_activation(&layout, &model, &SimulationSpec::new(10_000, 3).unwrap());
        for i in 0..6 {
            for j in 0..6 {
                if i != j {
                    assert_eq!(a.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn estimate_is_valid_and_deterministic() {
        let layout = generate_layout(7, 0.2, 5).unwrap();
        let model = ActivationModel::default();
        let spec = SimulationSpec::new(20_000, 5).unwrap();
        let a = estimate_joint_activation(&layout, &model, &spec);
        assert!(crate::model::validate_matrix(&a.to_rows()).unwrap().is_empty());
        assert_eq!(a, estimate_joint_activation(&layout, &model, &spec));
    }

    #[test]
    fn estimate_matches_sequential_replay() {
        let layout = generate_layout(4, 0.2, 8).unwrap();
        let model = ActivationModel::default();
        let spec = SimulationSpec::new(10_000, 21).unwrap();
        let a = estimate_joint_activation(&layout, &model, &spec);
        let mut both = 0u64;
        let mut first = 0u64;
        for step in 0..spec.steps {
            let act = activation_round(&layout, &model, &mut round_rng(spec.seed, step));
            if act.contains(&0) {
                first += 1;
                if act.contains(&3) {
                    both += 1;
                }
            }
        }
        assert_eq!(a.get(0, 3), both as f64 / 1e4);
        assert_eq!(a.marginal(0), first as f64 / 1e4);
    }

    #[test]
    fn quadrature_closed_form_at_origin() {
        // f = exp(-r/lambda), lambda = R: mean = (2 lambda^2 / R^2)(1 - e^{-R/lambda}(1 + R/lambda))
        let radius = 4.0;
        let layout = DeviceLayout::new(vec![Point::new(0.0, 0.0)], radius, 0.2).unwrap();
        let model = ActivationModel::new(radius).unwrap();
        let a = quadrature_joint_activation(&layout, &model, 1024).unwrap();
        let exact = 2.0 * (1.0 - (-1.0f64).exp() * 2.0);
        assert!((a.marginal(0) - exact).abs() < 1e-4, "{} vs {exact}", a.marginal(0));
    }

    #[test]
    fn quadrature_self_convergence() {
        let layout = three_device_layout();
        let model = ActivationModel::default();
        let coarse = quadrature_joint_activation(&layout, &model, 512).unwrap();
        let fine = quadrature_joint_activation(&layout, &model, 1024).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((coarse.get(i, j) - fine.get(i, j)).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn coincident_devices_are_interchangeable() {
        let r = region_radius_for(3, 0.2);
        let p = Point::new(0.4, -0.3);
        let q = Point::new(-1.0, 0.2);
        let m = ActivationModel::default();
        let a = quadrature_joint_activation(&DeviceLayout::new(vec![p, p, q], r, 0.2).unwrap(), &m, 256).unwrap();
        let b = quadrature_joint_activation(&DeviceLayout::new(vec![p, p, q], r, 0.2).unwrap(), &m, 256).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.get(0, 2), a.get(1, 2));
        assert_eq!(a.marginal(0), a.marginal(1));
        // conditional independence: the coincident pair is E[f^2] < E[f]
        assert!(a.get(0, 1) < a.marginal(0));
    }
}
