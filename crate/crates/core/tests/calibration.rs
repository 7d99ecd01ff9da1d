mod common;

use common::{chain, exact_cases, junction, pipe, random_tree, scenario};
use hydrocal::calib::annpso::{annpso_run, gen_training_set, infer_full_pressure, pso_calibrate, AnnPsoConfig, PsoMode};
use hydrocal::calib::clustering::{cluster_pipes, cobyla_calibrate, collapse_roughness, expand_roughness, pipe_features, ClusteringConfig};
use hydrocal::calib::{mean_mae, CalibrationCase, MethodDetails};
use hydrocal::hydraulics::{HydraulicModel, SolverConfig};
use hydrocal::kmeans::{kmeans, ClusterAssignment};
use hydrocal::mlp::TrainConfig;
use hydrocal::network::{synth_dma, Bounds, NetworkGraph, Reservoir, SynthConfig};
use hydrocal::optim::pso::PsoParams;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn solver() -> SolverConfig {
    SolverConfig::default()
}

fn one_pipe(roughness: f64) -> NetworkGraph {
    NetworkGraph {
        junctions: vec![junction("J1", 0.0, 25.0)],
        reservoirs: vec![Reservoir {
            id: "R".into(),
            elevation_head: 60.0,
            coordinates: None,
        }],
        pipes: vec![pipe("P1", "R", "J1", 1000.0, 0.1, roughness)],
        sensor_nodes: vec!["J1".into()],
        demand_nodes: vec!["J1".into()],
    }
}

fn small_train() -> TrainConfig {
    TrainConfig {
        hidden: vec![8, 8],
        epochs: 100,
        ..TrainConfig::default()
    }
}

#[test]
fn features_of_identical_pipes_are_zero() {
    // Two equal parallel branches: same roughness and flow everywhere.
    let g = NetworkGraph {
        junctions: vec![junction("A", 0.0, 1.0), junction("B", 0.0, 1.0)],
        reservoirs: vec![Reservoir {
            id: "R".into(),
            elevation_head: 50.0,
            coordinates: None,
        }],
        pipes: vec![pipe("P1", "R", "A", 100.0, 0.1, 1.0), pipe("P2", "R", "B", 100.0, 0.1, 1.0)],
        sensor_nodes: vec!["A".into()],
        demand_nodes: vec!["A".into(), "B".into()],
    };
    let m = HydraulicModel::new(&g).unwrap();
    let f = pipe_features(&m, &[1.0, 1.0], &[scenario(&g, "d", 1.0, None)], &solver()).unwrap();
    assert_eq!(f, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
}

#[test]
fn two_pipe_flow_feature_is_plus_minus_one() {
    let g = chain(2, 1.0);
    let m = HydraulicModel::new(&g).unwrap();
    let f = pipe_features(&m, &[1.0, 1.0], &[scenario(&g, "d", 1.0, None)], &solver()).unwrap();
    // The first pipe carries both demands.
    assert_eq!(f[0][1], 1.0);
    assert_eq!(f[1][1], -1.0);
}

#[test]
fn feature_columns_standardized_on_synthetic_net() {
    let g = synth_dma(&SynthConfig::new(48, 13.55, 4)).unwrap();
    assert!(g.pipe_count() >= 48);
    let m = HydraulicModel::new(&g).unwrap();
    let r0: Vec<f64> = g.pipes.iter().map(|p| p.roughness).collect();
    let scen = vec![scenario(&g, "a", 1.0, None), scenario(&g, "b", 0.5, None)];
    let f = pipe_features(&m, &r0, &scen, &solver()).unwrap();
    let n = f.len() as f64;
    for col in 0..2 {
        let mean: f64 = f.iter().map(|r| r[col]).sum::<f64>() / n;
        let sd = (f.iter().map(|r| (r[col] - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-12, "column {col} mean {mean}");
        assert!((sd - 1.0).abs() < 1e-12, "column {col} sd {sd}");
    }
}

#[test]
fn two_blobs_match_brute_force_partition() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut pts = Vec::new();
    for i in 0..20 {
        let c = if i < 10 { -5.0 } else { 5.0 };
        pts.push(vec![c + rng.random_range(-1.0..1.0), c + rng.random_range(-1.0..1.0)]);
    }
    let res = kmeans(&pts, 2, 7).unwrap();
    let label = res.assignment[0];
    for (i, &a) in res.assignment.iter().enumerate() {
        assert_eq!(a == label, i < 10);
    }
    // Exhaustive minimum of within-cluster squared distance over all 2-partitions.
    let sse = |idx: &[usize]| -> f64 {
        if idx.is_empty() {
            return 0.0;
        }
        let n = idx.len() as f64;
        let mx = idx.iter().map(|&i| pts[i][0]).sum::<f64>() / n;
        let my = idx.iter().map(|&i| pts[i][1]).sum::<f64>() / n;
        idx.iter().map(|&i| (pts[i][0] - mx).powi(2) + (pts[i][1] - my).powi(2)).sum()
    };
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << 19) {
        let (a, b): (Vec<usize>, Vec<usize>) = (0..20).partition(|&i| i < 19 && mask & (1 << i) != 0);
        best = best.min(sse(&a) + sse(&b));
    }
    assert!((res.inertia - best).abs() < 1e-9, "{} vs {best}", res.inertia);
}

#[test]
fn cluster_count_edges() {
    let f: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 0.0]).collect();
    let all = cluster_pipes(&f, 6, 1).unwrap();
    let mut seen = all.assignment.clone();
    seen.sort_unstable();
    assert_eq!(seen, (0..6).collect::<Vec<_>>());
    let one = cluster_pipes(&f, 1, 1).unwrap();
    assert_eq!(one.centroids[0], vec![2.5, 0.0]);
    assert!(cluster_pipes(&f, 7, 1).is_err());
    let same = vec![vec![0.0, 0.0]; 4];
    assert!(cluster_pipes(&same, 2, 1).is_err());
}

#[test]
fn expansion_special_cases() {
    let one = ClusterAssignment {
        assignment: vec![0; 5],
        k: 1,
        centroids: vec![vec![0.0, 0.0]],
        inertia: 0.0,
        iterations: 1,
    };
    assert_eq!(expand_roughness(&[0.5], &one).unwrap(), vec![0.5; 5]);
    let ident = ClusterAssignment {
        assignment: vec![0, 1, 2],
        k: 3,
        centroids: vec![vec![0.0, 0.0]; 3],
        inertia: 0.0,
        iterations: 1,
    };
    assert_eq!(expand_roughness(&[0.3, 0.1, 0.2], &ident).unwrap(), vec![0.3, 0.1, 0.2]);
}

proptest! {
    #[test]
    fn expand_then_collapse_round_trips(k in 1usize..8, extra in 0usize..20, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut assignment: Vec<usize> = (0..k).collect();
        assignment.extend((0..extra).map(|_| rng.random_range(0..k)));
        let a = ClusterAssignment { assignment, k, centroids: vec![vec![0.0]; k], inertia: 0.0, iterations: 1 };
        let reduced: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..10.0)).collect();
        let back = collapse_roughness(&expand_roughness(&reduced, &a).unwrap(), &a);
        for (x, y) in back.iter().zip(&reduced) {
            prop_assert!((x - y).abs() <= 1e-12 * y.abs());
        }
    }
}

#[test]
fn cobyla_recovers_single_pipe_roughness() {
    let g = one_pipe(0.5);
    let m = HydraulicModel::new(&g).unwrap();
    let cases = exact_cases(&m, &[scenario(&g, "d", 1.0, None)], &[2.0]);
    let cfg = ClusteringConfig {
        clusters: 1,
        ..ClusteringConfig::default()
    };
    let c = cobyla_calibrate(&m, &cases, &[0.5], &Bounds::default(), &cfg, &solver()).unwrap();
    assert!((c.roughness[0] - 2.0).abs() < 1e-2, "{:?}", c.roughness);
}

#[test]
fn cobyla_never_worse_than_start_and_constant_per_cluster() {
    let g = random_tree(12, 5, 3);
    let m = HydraulicModel::new(&g).unwrap();
    let r0 = vec![5.005; 12];
    let truth: Vec<f64> = (0..12).map(|i| 0.5 + (i % 4) as f64).collect();
    let scen = vec![scenario(&g, "a", 1.0, None), scenario(&g, "b", 2.0, Some(("J12", 8.0)))];
    for (cases, name) in [(exact_cases(&m, &scen, &r0), "self"), (exact_cases(&m, &scen, &truth), "truth")] {
        let cfg = ClusteringConfig {
            clusters: 4,
            ..ClusteringConfig::default()
        };
        let c = cobyla_calibrate(&m, &cases, &r0, &Bounds::default(), &cfg, &solver()).unwrap();
        let f0 = mean_mae(&m, &cases, &r0, &solver()).unwrap();
        assert!(c.objective_final <= f0, "{name}: {} > {f0}", c.objective_final);
        assert!(c.roughness.iter().all(|r| Bounds::default().contains(*r)));
        let MethodDetails::Cobyla(d) = &c.details else { panic!() };
        for (p, &k) in d.clusters.assignment.iter().enumerate() {
            assert_eq!(c.roughness[p], d.reduced[k]);
        }
    }
}

#[test]
fn cobyla_full_dimension_improves_on_chain() {
    let g = chain(3, 2.0);
    let m = HydraulicModel::new(&g).unwrap();
    let truth = [0.3, 2.0, 6.0];
    let r0 = vec![5.005; 3];
    let scen = vec![scenario(&g, "a", 1.0, None), scenario(&g, "b", 1.0, Some(("J3", 10.0)))];
    let cases = exact_cases(&m, &scen, &truth);
    let cfg = ClusteringConfig {
        clusters: 3,
        ..ClusteringConfig::default()
    };
    let c = cobyla_calibrate(&m, &cases, &r0, &Bounds::default(), &cfg, &solver()).unwrap();
    assert!(c.objective_final < mean_mae(&m, &cases, &r0, &solver()).unwrap());
}

#[test]
fn training_set_keeps_total_demand() {
    let g = random_tree(10, 4, 1);
    let m = HydraulicModel::new(&g).unwrap();
    let s = scenario(&g, "d", 1.0, None);
    let total = s.metered_total();
    let outputs: Vec<usize> = (0..10).collect();
    let set = gen_training_set(&m, &s, m.sensor_positions(), &outputs, &Bounds::default(), 100, 10, 5, &solver()).unwrap();
    assert_eq!(set.len(), 100);
    for t in &set {
        assert!((t.demands.iter().sum::<f64>() - total).abs() < 1e-9);
        assert!(t.roughness.iter().all(|r| (0.01..=10.0).contains(r)));
    }
    let again = gen_training_set(&m, &s, m.sensor_positions(), &outputs, &Bounds::default(), 100, 10, 5, &solver()).unwrap();
    assert_eq!(set, again);
}

#[test]
fn zero_demand_training_sample_is_hydrostatic() {
    let g = random_tree(6, 3, 2);
    let m = HydraulicModel::new(&g).unwrap();
    let s = scenario(&g, "z", 0.0, None);
    let outputs: Vec<usize> = (0..6).collect();
    let set = gen_training_set(&m, &s, m.sensor_positions(), &outputs, &Bounds::default(), 1, 10, 9, &solver()).unwrap();
    for (o, p) in outputs.iter().zip(&set[0].target) {
        let expect = 80.0 - g.junctions[*o].elevation;
        assert!((p - expect).abs() < 1e-9);
    }
}

#[test]
fn inference_replaces_measured_positions() {
    let g = random_tree(8, 4, 5);
    let m = HydraulicModel::new(&g).unwrap();
    let s = scenario(&g, "d", 1.0, None);
    let sensors = m.sensor_positions().to_vec();
    let truth = vec![1.0; 8];
    let measured = m.sensor_pressures(&s, &truth, &solver()).unwrap();
    let set = gen_training_set(&m, &s, &sensors, &sensors, &Bounds::default(), 20, 10, 1, &solver()).unwrap();
    let xs: Vec<Vec<f64>> = set.iter().map(|t| t.input.clone()).collect();
    let ys: Vec<Vec<f64>> = set.iter().map(|t| t.target.clone()).collect();
    let net = hydrocal::mlp::train_surrogate(&xs, &ys, &small_train()).unwrap();
    // O = J = M: output is the measurement.
    assert_eq!(infer_full_pressure(&net, &sensors, &measured, &sensors).unwrap(), measured);

    // Leave one sensor out of J: estimate there, measurements elsewhere.
    let j: Vec<usize> = sensors[1..].to_vec();
    let set = gen_training_set(&m, &s, &j, &sensors, &Bounds::default(), 20, 10, 1, &solver()).unwrap();
    let xs: Vec<Vec<f64>> = set.iter().map(|t| t.input.clone()).collect();
    let ys: Vec<Vec<f64>> = set.iter().map(|t| t.target.clone()).collect();
    let net = hydrocal::mlp::train_surrogate(&xs, &ys, &small_train()).unwrap();
    let out = infer_full_pressure(&net, &j, &measured[1..], &sensors).unwrap();
    assert_eq!(&out[1..], &measured[1..]);
    assert_eq!(out[0], net.predict(&measured[1..])[0]);
    assert!(infer_full_pressure(&net, &sensors, &measured, &sensors).is_err());
}

#[test]
fn pso_reaches_generating_roughness_objective() {
    let g = chain(2, 3.0);
    let m = HydraulicModel::new(&g).unwrap();
    let truth = [1.5, 6.0];
    let scen = vec![scenario(&g, "a", 1.0, None), scenario(&g, "b", 1.0, Some(("J2", 10.0)))];
    let outputs = vec![0, 1];
    let targets: Vec<Vec<f64>> = scen.iter().map(|s| m.pressures_at(s, &truth, &solver(), &outputs).unwrap()).collect();
    let r0 = [5.005, 5.005];
    let f0 = {
        let p: Vec<Vec<f64>> = scen.iter().map(|s| m.pressures_at(s, &r0, &solver(), &outputs).unwrap()).collect();
        p.iter().zip(&targets).map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0).sum::<f64>() / 2.0
    };
    // Low-inertia swarms stagnate on some seeds; the best restart reaches the generating objective.
    let mut best = f64::INFINITY;
    for seed in 0..10 {
        let params = PsoParams {
            seed,
            ..PsoParams::default()
        };
        let r = pso_calibrate(&m, &targets, &outputs, &scen, &r0, &Bounds::default(), &params, &solver()).unwrap();
        assert!(r.best_value < f0);
        best = best.min(r.best_value);
    }
    assert!(best <= 1e-6, "{best}");
}

#[test]
fn annpso_no_worse_than_seed_and_modes_valid() {
    let g = chain(4, 2.0);
    let m = HydraulicModel::new(&g).unwrap();
    let r0 = vec![5.005; 4];
    let one = exact_cases(&m, &[scenario(&g, "a", 1.0, Some(("J4", 6.0)))], &r0);
    let cfg = AnnPsoConfig {
        training_size: 30,
        train: small_train(),
        pso: PsoParams {
            iterations: 20,
            ..PsoParams::default()
        },
        ..AnnPsoConfig::default()
    };
    let c = annpso_run(&m, &r0, &one, &Bounds::default(), &cfg, &solver()).unwrap();
    assert!(mean_mae(&m, &one, &c.roughness, &solver()).unwrap() <= mean_mae(&m, &one, &r0, &solver()).unwrap() + 1e-12 || c.objective_final <= c.objective_initial);
    assert!(c.objective_final <= c.objective_initial);

    let truth = [0.5, 3.0, 8.0, 1.0];
    let scen: Vec<_> = (0..3).map(|i| scenario(&g, &format!("h{i}"), 1.0, Some(("J4", 6.0 + i as f64)))).collect();
    let cases: Vec<CalibrationCase> = exact_cases(&m, &scen, &truth);
    let before = annpso_run(&m, &r0, &cases, &Bounds::default(), &cfg, &solver()).unwrap();
    let after = annpso_run(&m, &r0, &cases, &Bounds::default(), &AnnPsoConfig { mode: PsoMode::After, ..cfg.clone() }, &solver()).unwrap();
    for c in [&before, &after] {
        assert!(c.roughness.iter().all(|r| Bounds::default().contains(*r)));
        let MethodDetails::Annpso(s) = &c.details else { panic!() };
        assert!(s.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(s.history.last() < s.history.first() || s.history[0] == 0.0);
    }
    let MethodDetails::Annpso(s) = &after.details else { panic!() };
    assert_eq!(s.per_scenario.len(), 3);
    let chosen = s.per_scenario.iter().map(|f| f.measured_mae).fold(f64::INFINITY, f64::min);
    assert_eq!(mean_mae(&m, &cases, &after.roughness, &solver()).unwrap(), chosen);
    let again = annpso_run(&m, &r0, &cases, &Bounds::default(), &cfg, &solver()).unwrap();
    assert_eq!(again.roughness, before.roughness);
}
