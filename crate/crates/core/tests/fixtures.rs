mod common;

use std::fs;
use std::time::Duration;

use common::*;
use corrsched::bench::{run_anytime, ExperimentSpec, Method, SweepVariable};
use corrsched::descent::coordinate_descent;
use corrsched::heuristics::{best_of_restarts, kmedoids, Dissimilarity, MedoidState, Seeding, DEFAULT_MAX_ITER};
use corrsched::io::{matrix_to_json, read_layout, read_matrix, write_matrix};
use corrsched::linearize::{build_pilp, export_lp, parse_lp};
use corrsched::objective::hard_objective;
use corrsched::solver::{brute_force, heuristic_then_exact, solve_exact, SolverOptions};
use corrsched::Assignment;

#[test]
fn lp_export_matches_golden_file() {
    let a = fixture_matrix("n3_fixture.json");
    let model = build_pilp(&a, 2).unwrap();
    assert_eq!(model.variables.len(), 18);
    assert_eq!(model.constraints.len(), 3 + 24);
    let text = export_lp(&model);
    let golden = fs::read_to_string(fixture_path("n3_l2.lp")).unwrap();
    assert_eq!(text, golden);
    assert_eq!(parse_lp(&golden).unwrap(), model);
}

#[test]
fn kmedoids_matches_reference_trace() {
    let a = fixture_matrix("sim_n8.json");
    let (x, state) = kmedoids(&a, 2, 7, DEFAULT_MAX_ITER).unwrap();
    let golden: MedoidState =
        serde_json::from_str(&fs::read_to_string(fixture_path("kmedoids_n8_l2_seed7.json")).unwrap()).unwrap();
    assert_eq!(state, golden);
    assert_eq!(x, golden.assignment);
}

#[test]
fn matrix_files_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["sim_n8.json", "sim_n10.json", "sim_n12.json", "sim_n14.json", "n4_example.json"] {
        let a = fixture_matrix(name);
        for ext in ["json", "csv"] {
            let path = dir.path().join(format!("copy.{ext}"));
            write_matrix(&path, &a).unwrap();
            assert_eq!(read_matrix(&path).unwrap(), a, "{name} via {ext}");
        }
        assert_eq!(matrix_to_json(&read_matrix(&fixture_path(name)).unwrap()), matrix_to_json(&a));
    }
}

#[test]
fn shipped_layouts_are_consistent() {
    for n in [8usize, 10, 12, 14] {
        let layout = read_layout(&fixture_path(&format!("layout_n{n}.csv"))).unwrap();
        assert_eq!(layout.len(), n);
        let expected = (n as f64 / (0.2 * std::f64::consts::PI)).sqrt();
        assert!(rel_close(layout.region_radius(), expected, 1e-9));
        assert!(layout.positions().iter().all(|p| p.norm() <= layout.region_radius()));
    }
}

#[test]
fn n4_example_solutions() {
    let a = fixture_matrix("n4_example.json");
    let brute = brute_force(&a, 2).unwrap();
    assert_eq!(brute.objective, 0.1);
    assert_eq!(brute.assignment, Assignment::new(vec![0, 1, 0, 1]));
    let exact = solve_exact(&a, 2, &SolverOptions::exact()).unwrap();
    assert_eq!(exact.objective, 0.1);
    let adversarial = Assignment::new(vec![0, 0, 1, 1]);
    let polished = coordinate_descent(&a, &adversarial, 2, 100).unwrap();
    assert_eq!(hard_objective(&a, &polished, 2), 0.1);
    assert_eq!(coordinate_descent(&a, &brute.assignment, 2, 100).unwrap(), brute.assignment);
}

#[test]
fn warm_start_does_not_grow_the_tree() {
    let a = fixture_matrix("sim_n10.json");
    for l in [2usize, 3, 4] {
        let cold = solve_exact(&a, l, &SolverOptions::exact()).unwrap();
        let warm =
            solve_exact(&a, l, &SolverOptions { initial_incumbent: Some(cold.assignment.clone()), ..SolverOptions::exact() })
                .unwrap();
        assert_eq!(warm.objective, cold.objective);
        assert!(warm.nodes_explored <= cold.nodes_explored, "L={l}: {} > {}", warm.nodes_explored, cold.nodes_explored);
        assert_eq!(warm.incumbent_log.len(), 1);
    }
}

#[test]
fn heuristic_warm_start_reaches_the_same_optimum() {
    let a = fixture_matrix("sim_n12.json");
    let cold = solve_exact(&a, 3, &SolverOptions::exact()).unwrap();
    let piped = heuristic_then_exact(&a, 3, &SolverOptions::exact(), 0).unwrap();
    assert_eq!(piped.objective, cold.objective);
    let (clustered, _) = corrsched::heuristics::kmedoids_pp(&a, 3, 0, DEFAULT_MAX_ITER).unwrap();
    assert!(piped.incumbent_log[0].objective <= hard_objective(&a, &clustered, 3));
}

#[test]
fn seeded_restarts_favor_kmeanspp() {
    let a = fixture_matrix("sim_n12.json");
    let best_cost = |seeding| {
        (0..50u64)
            .map(|s| corrsched::heuristics::kmedoids_with(&a, 3, seeding, Dissimilarity::Joint, s, DEFAULT_MAX_ITER).unwrap().1.cost)
            .fold(f64::INFINITY, f64::min)
    };
    assert!(best_cost(Seeding::KMeansPlusPlus) <= best_cost(Seeding::Uniform));
    let (x, state, f) = best_of_restarts(&a, 3, Seeding::KMeansPlusPlus, Dissimilarity::Joint, 0, 50, DEFAULT_MAX_ITER).unwrap();
    assert_eq!(f, hard_objective(&a, &x, 3));
    assert_eq!(state.assignment, x);
}

#[test]
fn optimum_shrinks_with_more_channels_on_fixtures() {
    for name in ["sim_n8.json", "sim_n10.json", "sim_n12.json"] {
        let a = fixture_matrix(name);
        let optima: Vec<f64> =
            (1..=5).map(|l| solve_exact(&a, l, &SolverOptions::exact()).unwrap().objective).collect();
        for l in 1..optima.len() {
            let bound = optima[l - 1] * l as f64 / (l + 1) as f64;
            assert!(optima[l] <= bound + 1e-12, "{name}: F*_{} = {} > {bound}", l + 1, optima[l]);
        }
    }
}

#[test]
fn anytime_n14_fixture_completes_within_budget() {
    let spec = ExperimentSpec {
        n_devices: 14,
        n_channels: 3,
        trials: 1,
        steps: 100_000,
        seed: 14,
        time_limit_s: Some(60.0),
        methods: vec![Method::Exact, Method::Kmedoids, Method::KmedoidsPp],
        ..ExperimentSpec::new(SweepVariable::N, vec![14.0])
    };
    let started = std::time::Instant::now();
    let rows = run_anytime(&spec).unwrap();
    assert!(started.elapsed() < Duration::from_secs(60));
    let exact: Vec<_> = rows.iter().filter(|r| r.method == Method::Exact).collect();
    for w in exact.windows(2) {
        assert!(w[1].objective < w[0].objective);
    }
    let final_exact = exact.last().unwrap().objective;
    for r in rows.iter().filter(|r| r.method != Method::Exact) {
        assert!(final_exact <= r.objective);
    }
    // The bench instance for seed 14 is the shipped N=14 fixture.
    let a = fixture_matrix("sim_n14.json");
    assert_eq!(final_exact, solve_exact(&a, 3, &SolverOptions::exact()).unwrap().objective);
}

#[test]
fn bound_gap_narrows_with_more_channels_on_fixtures() {
    for name in ["sim_n8.json", "sim_n10.json", "sim_n12.json", "sim_n14.json"] {
        let a = fixture_matrix(name);
        let gaps: Vec<f64> = (2..=6)
            .map(|l| {
                let x = solve_exact(&a, l, &SolverOptions::exact()).unwrap().assignment;
                let r = corrsched::objective::assignment_report(&a, &x, l).unwrap();
                r.pairwise_bound - r.network_average
            })
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] <= w[0]), "{name}: {gaps:?}");
    }
}
