#![allow(dead_code)]

use hydrocal::calib::CalibrationCase;
use hydrocal::hydraulics::{HydraulicModel, SolverConfig};
use hydrocal::network::{Junction, NetworkGraph, Pipe, Reservoir};
use hydrocal::scenario::Scenario;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn junction(id: &str, elevation: f64, demand: f64) -> Junction {
    Junction {
        id: id.into(),
        elevation,
        base_demand: demand,
        coordinates: None,
    }
}

pub fn pipe(id: &str, from: &str, to: &str, length: f64, diameter: f64, roughness: f64) -> Pipe {
    Pipe {
        id: id.into(),
        from: from.into(),
        to: to.into(),
        length,
        diameter,
        roughness,
    }
}

/// Reservoir R (head 100 m) feeding a chain R - J1 - J2 - ... of `n` pipes.
pub fn chain(n: usize, demand: f64) -> NetworkGraph {
    let junctions: Vec<Junction> = (1..=n).map(|i| junction(&format!("J{i}"), 50.0 - i as f64, demand)).collect();
    let pipes: Vec<Pipe> = (1..=n)
        .map(|i| {
            let from = if i == 1 { "R".to_string() } else { format!("J{}", i - 1) };
            pipe(&format!("P{i}"), &from, &format!("J{i}"), 300.0, 0.08, 1.0)
        })
        .collect();
    NetworkGraph {
        demand_nodes: junctions.iter().map(|j| j.id.clone()).collect(),
        sensor_nodes: junctions.iter().map(|j| j.id.clone()).collect(),
        junctions,
        reservoirs: vec![Reservoir {
            id: "R".into(),
            elevation_head: 100.0,
            coordinates: None,
        }],
        pipes,
    }
}

/// Random tree of `pipes` pipes hanging off one reservoir; sensors on the
/// leaves first, then on the deepest remaining junctions, up to `sensors`.
pub fn random_tree(pipes: usize, sensors: usize, seed: u64) -> NetworkGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut junctions = Vec::with_capacity(pipes);
    let mut links = Vec::with_capacity(pipes);
    let mut depth = vec![0usize; pipes + 1];
    let mut children = vec![0usize; pipes + 1];
    for i in 1..=pipes {
        // Node 0 is the reservoir; prefer recent nodes to get some depth.
        let lo = i.saturating_sub(4);
        let parent = rng.random_range(lo..i);
        depth[i] = depth[parent] + 1;
        children[parent] += 1;
        let from = if parent == 0 { "R".to_string() } else { format!("J{parent}") };
        junctions.push(junction(&format!("J{i}"), rng.random_range(0.0..10.0), rng.random_range(0.5..3.0)));
        links.push(pipe(
            &format!("P{i}"),
            &from,
            &format!("J{i}"),
            rng.random_range(100.0..400.0),
            [0.05, 0.065, 0.08, 0.1][rng.random_range(0..4)],
            1.0,
        ));
    }
    let mut order: Vec<usize> = (1..=pipes).collect();
    order.sort_by_key(|&i| (children[i] != 0, std::cmp::Reverse(depth[i]), i));
    NetworkGraph {
        demand_nodes: junctions.iter().map(|j| j.id.clone()).collect(),
        sensor_nodes: order.iter().take(sensors).map(|i| format!("J{i}")).collect(),
        junctions,
        reservoirs: vec![Reservoir {
            id: "R".into(),
            elevation_head: 80.0,
            coordinates: None,
        }],
        pipes: links,
    }
}

/// Cases measured exactly at every sensor under `truth`.
pub fn exact_cases(model: &HydraulicModel, scenarios: &[Scenario], truth: &[f64]) -> Vec<CalibrationCase> {
    let solver = SolverConfig::default();
    scenarios
        .iter()
        .map(|s| {
            let p = model.sensor_pressures(s, truth, &solver).unwrap();
            CalibrationCase::new(s.clone(), model.sensor_positions().to_vec(), p).unwrap()
        })
        .collect()
}

/// Base-demand scenario scaled by `factor`, optionally with a hydrant discharge.
pub fn scenario(graph: &NetworkGraph, id: &str, factor: f64, hydrant: Option<(&str, f64)>) -> Scenario {
    let demands = graph.base_demands().unwrap().iter().map(|d| d * factor).collect();
    let s = Scenario::daily(id, graph.reservoir().unwrap().elevation_head, demands);
    match hydrant {
        Some((node, flow)) => s.with_hydrant(node, flow),
        None => s,
    }
}
