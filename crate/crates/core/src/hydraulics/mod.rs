//! Demand-driven steady-state hydraulics with Darcy-Weisbach head loss.
//!
//! Heads are solved by the global gradient (Todini-Pilati) Newton iteration:
//! each step linearizes every pipe's head loss around the current flow,
//! solves the junction-head system, then updates flows from the new heads.

mod sparse;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{NetworkGraph, NodeRef, Pipe};
use crate::scenario::Scenario;
use sparse::SymbolicCholesky;

/// Gravitational acceleration, m/s².
pub const GRAVITY: f64 = 9.80665;
/// Kinematic viscosity of water at about 20 °C, m²/s.
pub const KINEMATIC_VISCOSITY: f64 = 1.0e-6;

const RE_LAMINAR: f64 = 2000.0;
const RE_TURBULENT: f64 = 4000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Head tolerance, m.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Flow regularization for the Jacobian, m³/s.
    pub flow_epsilon: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tolerance: 1e-6,
            max_iterations: 200,
            flow_epsilon: 1e-8,
        }
    }
}

impl SolverConfig {
    fn check(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || self.max_iterations == 0 || !(self.flow_epsilon >= 0.0) {
            return Err(Error::InvalidArgument(
                "solver tolerance and max_iterations must be > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HydraulicState {
    /// Pressure head per node, m: junctions in graph order, then the reservoir.
    pub pressure_head: Vec<f64>,
    /// Hydraulic head per node, same layout as `pressure_head`.
    pub head: Vec<f64>,
    /// Pipe flow in the from→to direction, m³/s.
    pub flow: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest energy-equation mismatch over pipes, m.
    pub residual: f64,
}

/// Darcy friction factor and its derivative with respect to Re.
fn friction(re: f64, relative_roughness: f64) -> (f64, f64) {
    if re < RE_LAMINAR {
        (64.0 / re, -64.0 / (re * re))
    } else if re > RE_TURBULENT {
        swamee_jain(re, relative_roughness)
    } else {
        let fl = 64.0 / RE_LAMINAR;
        let (ft, _) = swamee_jain(RE_TURBULENT, relative_roughness);
        let slope = (ft - fl) / (RE_TURBULENT - RE_LAMINAR);
        (fl + slope * (re - RE_LAMINAR), slope)
    }
}

fn swamee_jain(re: f64, relative_roughness: f64) -> (f64, f64) {
    let x = relative_roughness / 3.7 + 5.74 * re.powf(-0.9);
    let lg = x.log10();
    let f = 0.25 / (lg * lg);
    let dx = -0.9 * 5.74 * re.powf(-1.9);
    let df = -0.5 / (lg * lg * lg) * dx / (x * std::f64::consts::LN_10);
    (f, df)
}

/// Head loss (m) and its derivative with respect to flow (s/m²).
fn loss_and_slope(flow: f64, length: f64, diameter: f64, roughness_mm: f64, epsilon: f64) -> (f64, f64) {
    let pi = std::f64::consts::PI;
    let laminar = 128.0 * KINEMATIC_VISCOSITY * length / (GRAVITY * pi * diameter.powi(4));
    let q = flow.abs();
    let re = 4.0 * q / (pi * diameter * KINEMATIC_VISCOSITY);
    if re < RE_LAMINAR {
        return (laminar * flow, laminar);
    }
    let k = 8.0 * length / (GRAVITY * pi * pi * diameter.powi(5));
    let (f, df) = friction(re, roughness_mm * 1e-3 / diameter);
    let h = f * k * flow * q;
    let qj = q.max(epsilon);
    let slope = k * qj * (2.0 * f + re * df);
    (h, slope)
}

/// Signed Darcy-Weisbach head loss (m) along `pipe` for `flow` (m³/s).
pub fn headloss(flow: f64, pipe: &Pipe) -> f64 {
    loss_and_slope(flow, pipe.length, pipe.diameter, pipe.roughness, 0.0).0
}

/// Derivative of [`headloss`] with respect to flow, s/m².
pub fn headloss_slope(flow: f64, pipe: &Pipe) -> f64 {
    loss_and_slope(flow, pipe.length, pipe.diameter, pipe.roughness, 0.0).1
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum End {
    Junction(usize),
    Reservoir,
}

#[derive(Debug, Clone)]
struct PipeData {
    from: End,
    to: End,
    length: f64,
    diameter: f64,
    diag_from: Option<usize>,
    diag_to: Option<usize>,
    off: Option<usize>,
}

/// Network prepared for repeated solves: endpoint indices, fill-reducing
/// ordering and symbolic factorization. Immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct HydraulicModel {
    junction_ids: Vec<String>,
    junction_index: HashMap<String, usize>,
    elevations: Vec<f64>,
    reservoir_elevation: f64,
    pipes: Vec<PipeData>,
    demand_positions: Vec<usize>,
    sensor_positions: Vec<usize>,
    symbolic: SymbolicCholesky,
}

impl HydraulicModel {
    pub fn new(graph: &NetworkGraph) -> Result<Self> {
        let reservoir = graph.reservoir()?;
        let index = graph.node_index();
        let end = |id: &str, pipe: &str| match index.get(id) {
            Some(NodeRef::Junction(j)) => Ok(End::Junction(*j)),
            Some(NodeRef::Reservoir(_)) => Ok(End::Reservoir),
            None => Err(Error::DanglingEndpoint {
                pipe: pipe.to_string(),
                node: id.to_string(),
            }),
        };
        let mut ends = Vec::with_capacity(graph.pipes.len());
        let mut edges = Vec::new();
        for p in &graph.pipes {
            if !(p.length > 0.0 && p.diameter > 0.0) {
                return Err(Error::InvalidNetwork(format!("pipe '{}' has non-positive geometry", p.id)));
            }
            let (a, b) = (end(&p.from, &p.id)?, end(&p.to, &p.id)?);
            if let (End::Junction(i), End::Junction(j)) = (a, b) {
                if i != j {
                    edges.push((i, j));
                }
            }
            ends.push((a, b));
        }
        let n = graph.junction_count();
        let symbolic = SymbolicCholesky::new(n, &edges);
        let pipes = graph
            .pipes
            .iter()
            .zip(ends)
            .map(|(p, (from, to))| {
                let diag = |e: End| match e {
                    End::Junction(j) => Some(symbolic.diag_slot(j)),
                    End::Reservoir => None,
                };
                let off = match (from, to) {
                    (End::Junction(i), End::Junction(j)) if i != j => Some(symbolic.off_slot(i, j)),
                    _ => None,
                };
                PipeData {
                    from,
                    to,
                    length: p.length,
                    diameter: p.diameter,
                    diag_from: diag(from),
                    diag_to: diag(to),
                    off,
                }
            })
            .collect();
        Ok(HydraulicModel {
            junction_ids: graph.junctions.iter().map(|j| j.id.clone()).collect(),
            junction_index: graph
                .junctions
                .iter()
                .enumerate()
                .map(|(i, j)| (j.id.clone(), i))
                .collect(),
            elevations: graph.junctions.iter().map(|j| j.elevation).collect(),
            reservoir_elevation: reservoir.elevation_head,
            pipes,
            demand_positions: graph.demand_positions()?,
            sensor_positions: graph.sensor_positions()?,
            symbolic,
        })
    }

    pub fn junction_count(&self) -> usize {
        self.junction_ids.len()
    }

    pub fn pipe_count(&self) -> usize {
        self.pipes.len()
    }

    pub fn sensor_positions(&self) -> &[usize] {
        &self.sensor_positions
    }

    /// Nodal demands in m³/s per junction.
    fn demands(&self, scenario: &Scenario) -> Result<Vec<f64>> {
        if scenario.demands.len() != self.demand_positions.len() {
            return Err(Error::Dimension {
                what: "scenario demands",
                expected: self.demand_positions.len(),
                got: scenario.demands.len(),
            });
        }
        if !scenario.reservoir_head.is_finite() {
            return Err(Error::InvalidArgument("reservoir head must be finite".into()));
        }
        let mut d = vec![0.0; self.junction_count()];
        for (&j, &v) in self.demand_positions.iter().zip(&scenario.demands) {
            d[j] += v / 3600.0;
        }
        if let Some(h) = &scenario.hydrant {
            let j = self
                .junction_index
                .get(&h.node)
                .ok_or_else(|| Error::InvalidArgument(format!("hydrant node '{}' is not a junction", h.node)))?;
            d[*j] += h.flow / 3600.0;
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("demands must be finite".into()));
        }
        Ok(d)
    }

    /// Steady state for `scenario` under `roughness` (mm, one per pipe).
    /// Non-convergence is reported through the returned state.
    pub fn solve(&self, scenario: &Scenario, roughness: &[f64], config: &SolverConfig) -> Result<HydraulicState> {
        config.check()?;
        if roughness.len() != self.pipes.len() {
            return Err(Error::Dimension {
                what: "roughness",
                expected: self.pipes.len(),
                got: roughness.len(),
            });
        }
        let demand = self.demands(scenario)?;
        let n = self.junction_count();
        let h_res = scenario.reservoir_head;

        let mut flow = vec![0.0; self.pipes.len()];
        let mut loss = vec![0.0; self.pipes.len()];
        let mut slope = vec![0.0; self.pipes.len()];
        let mut head = vec![h_res; n];
        let mut values = vec![0.0; self.symbolic.len()];
        let mut rhs = vec![0.0; n];
        let mut work = vec![0.0; n];
        let linearize = |flow: &[f64], loss: &mut [f64], slope: &mut [f64]| {
            for (k, p) in self.pipes.iter().enumerate() {
                let (h, g) = loss_and_slope(flow[k], p.length, p.diameter, roughness[k], config.flow_epsilon);
                loss[k] = h;
                slope[k] = g;
            }
        };
        let at = |head: &[f64], e: End| match e {
            End::Junction(j) => head[j],
            End::Reservoir => h_res,
        };
        linearize(&flow, &mut loss, &mut slope);

        let mut converged = false;
        let mut iterations = 0;
        let mut residual = f64::INFINITY;
        while iterations < config.max_iterations {
            iterations += 1;
            values.iter_mut().for_each(|v| *v = 0.0);
            for (r, d) in rhs.iter_mut().zip(&demand) {
                *r = -d;
            }
            for (k, p) in self.pipes.iter().enumerate() {
                let w = 1.0 / slope[k];
                let y = flow[k] - loss[k] * w;
                if let Some(s) = p.diag_from {
                    values[s] += w;
                }
                if let Some(s) = p.diag_to {
                    values[s] += w;
                }
                if let Some(s) = p.off {
                    values[s] -= w;
                }
                if let End::Junction(a) = p.from {
                    rhs[a] -= y;
                    if p.to == End::Reservoir {
                        rhs[a] += w * h_res;
                    }
                }
                if let End::Junction(b) = p.to {
                    rhs[b] += y;
                    if p.from == End::Reservoir {
                        rhs[b] += w * h_res;
                    }
                }
            }
            if let Err(j) = self.symbolic.factor(&mut values) {
                if values.iter().chain(&rhs).all(|v| v.is_finite()) {
                    return Err(Error::Singular(format!(
                        "junction '{}' is not hydraulically connected to the reservoir",
                        self.junction_ids[j]
                    )));
                }
                break;
            }
            head.copy_from_slice(&rhs);
            self.symbolic.solve(&values, &mut head, &mut work);
            for (k, p) in self.pipes.iter().enumerate() {
                let w = 1.0 / slope[k];
                let dh = at(&head, p.from) - at(&head, p.to);
                flow[k] = flow[k] - loss[k] * w + dh * w;
            }
            linearize(&flow, &mut loss, &mut slope);
            residual = self
                .pipes
                .iter()
                .enumerate()
                .map(|(k, p)| (at(&head, p.from) - at(&head, p.to) - loss[k]).abs())
                .fold(0.0, f64::max);
            if !residual.is_finite() {
                break;
            }
            if residual <= config.tolerance {
                converged = true;
                break;
            }
        }

        let mut full_head = head;
        full_head.push(h_res);
        let pressure_head = full_head
            .iter()
            .enumerate()
            .map(|(i, h)| h - self.elevations.get(i).copied().unwrap_or(self.reservoir_elevation))
            .collect();
        Ok(HydraulicState {
            pressure_head,
            head: full_head,
            flow,
            converged,
            iterations,
            residual,
        })
    }

    /// Sensor pressure heads (m, sensor order); non-convergence is an error.
    pub fn sensor_pressures(&self, scenario: &Scenario, roughness: &[f64], config: &SolverConfig) -> Result<Vec<f64>> {
        self.pressures_at(scenario, roughness, config, &self.sensor_positions)
    }

    /// Pressure heads at `positions` (junction indices); non-convergence is an error.
    pub fn pressures_at(
        &self,
        scenario: &Scenario,
        roughness: &[f64],
        config: &SolverConfig,
        positions: &[usize],
    ) -> Result<Vec<f64>> {
        let state = self.converged(scenario, roughness, config)?;
        Ok(positions.iter().map(|&j| state.pressure_head[j]).collect())
    }

    /// Like [`HydraulicModel::solve`] but non-convergence is an error.
    pub fn converged(&self, scenario: &Scenario, roughness: &[f64], config: &SolverConfig) -> Result<HydraulicState> {
        let state = self.solve(scenario, roughness, config)?;
        if !state.converged {
            return Err(Error::NotConverged {
                iterations: state.iterations,
                residual: state.residual,
            });
        }
        Ok(state)
    }
}

/// Solve the steady state of `graph` for one scenario.
pub fn solve_steady(
    graph: &NetworkGraph,
    scenario: &Scenario,
    roughness: &[f64],
    config: &SolverConfig,
) -> Result<HydraulicState> {
    HydraulicModel::new(graph)?.solve(scenario, roughness, config)
}

/// Pressure heads at the sensor nodes in their declared order.
pub fn simulate_sensors(
    graph: &NetworkGraph,
    scenario: &Scenario,
    roughness: &[f64],
    config: &SolverConfig,
) -> Result<Vec<f64>> {
    if graph.sensor_nodes.is_empty() {
        return Err(Error::InvalidArgument("network has no sensor nodes".into()));
    }
    HydraulicModel::new(graph)?.sensor_pressures(scenario, roughness, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::tests::two_pipe_net;
    use crate::network::{Junction, Reservoir};

    fn pipe(length: f64, diameter: f64, roughness: f64) -> Pipe {
        Pipe {
            id: "P".into(),
            from: "A".into(),
            to: "B".into(),
            length,
            diameter,
            roughness,
        }
    }

    #[test]
    fn zero_flow_zero_loss() {
        assert_eq!(headloss(0.0, &pipe(100.0, 0.1, 0.5)), 0.0);
    }

    #[test]
    fn hand_evaluated_swamee_jain() {
        let (l, d, e, q) = (100.0_f64, 0.1_f64, 0.5e-3_f64, 0.01_f64);
        let area = std::f64::consts::PI * d * d / 4.0;
        let v = q / area;
        let re = v * d / 1.0e-6;
        let term: f64 = e / (3.7 * d) + 5.74 / re.powf(0.9);
        let f = 0.25 / term.log10().powi(2);
        let expect = f * (l / d) * v * v / (2.0 * 9.80665);
        let got = headloss(q, &pipe(l, d, 0.5));
        assert!((got - expect).abs() < 1e-12 * expect, "{got} vs {expect}");
        assert!((got - 2.59).abs() < 0.05, "{got}");
    }

    #[test]
    fn odd_symmetry() {
        let p = pipe(120.0, 0.15, 1.2);
        for q in [1e-7, 1e-4, 2.1e-3, 0.02, 0.3] {
            assert_eq!(headloss(-q, &p), -headloss(q, &p));
        }
    }

    #[test]
    fn slope_matches_finite_difference_in_every_regime() {
        let p = pipe(80.0, 0.1, 0.8);
        // Re ≈ 1000, 3000 and 1e5.
        for q in [7.85e-5, 2.36e-4, 7.85e-3] {
            let h = 1e-7 * q;
            let fd = (headloss(q + h, &p) - headloss(q - h, &p)) / (2.0 * h);
            let g = headloss_slope(q, &p);
            assert!((fd - g).abs() < 1e-5 * g.abs(), "q={q}: {fd} vs {g}");
        }
    }

    fn one_pipe(elevation: f64, demand: f64) -> NetworkGraph {
        NetworkGraph {
            junctions: vec![Junction {
                id: "J1".into(),
                elevation,
                base_demand: demand,
                coordinates: None,
            }],
            reservoirs: vec![Reservoir {
                id: "R1".into(),
                elevation_head: 300.0,
                coordinates: None,
            }],
            pipes: vec![Pipe {
                id: "P1".into(),
                from: "R1".into(),
                to: "J1".into(),
                length: 250.0,
                diameter: 0.1,
                roughness: 0.7,
            }],
            sensor_nodes: vec!["J1".into()],
            demand_nodes: vec!["J1".into()],
        }
    }

    #[test]
    fn one_pipe_analytic() {
        for d in [0.0, 0.2, 3.0, 25.0] {
            let g = one_pipe(250.0, d);
            let s = Scenario::daily("s", 305.6, vec![d]);
            let st = solve_steady(&g, &s, &g.roughness(), &SolverConfig::default()).unwrap();
            assert!(st.converged);
            let expect = 305.6 - 250.0 - headloss(d / 3600.0, &g.pipes[0]);
            assert!((st.pressure_head[0] - expect).abs() < 1e-9, "{} vs {expect}", st.pressure_head[0]);
            assert!((st.pressure_head[1] - 5.6).abs() < 1e-12);
            let sim = simulate_sensors(&g, &s, &g.roughness(), &SolverConfig::default()).unwrap();
            assert_eq!(sim, vec![st.pressure_head[0]]);
        }
    }

    #[test]
    fn hydrostatic_when_demands_vanish() {
        let g = two_pipe_net();
        let s = Scenario::daily("s", 301.0, vec![0.0, 0.0]);
        let st = solve_steady(&g, &s, &g.roughness(), &SolverConfig::default()).unwrap();
        assert!(st.converged);
        assert!(st.flow.iter().all(|q| q.abs() < 1e-12));
        for (j, junction) in g.junctions.iter().enumerate() {
            assert!((st.pressure_head[j] - (301.0 - junction.elevation)).abs() < 1e-9);
        }
    }

    #[test]
    fn parallel_pipes_split_evenly() {
        let mut g = one_pipe(240.0, 6.0);
        let mut twin = g.pipes[0].clone();
        twin.id = "P2".into();
        g.pipes.push(twin);
        let s = Scenario::daily("s", 300.0, vec![6.0]);
        let st = solve_steady(&g, &s, &g.roughness(), &SolverConfig::default()).unwrap();
        assert!(st.converged);
        assert!((st.flow[0] - st.flow[1]).abs() < 1e-15);
        assert!((st.flow[0] - 3.0 / 3600.0).abs() < 1e-12);
    }

    #[test]
    fn hydrant_adds_demand() {
        let g = two_pipe_net();
        let base = Scenario::daily("s", 301.0, vec![1.0, 1.0]);
        let trial = base.clone().with_hydrant("J2", 10.0);
        let m = HydraulicModel::new(&g).unwrap();
        let cfg = SolverConfig::default();
        let a = m.converged(&base, &g.roughness(), &cfg).unwrap();
        let b = m.converged(&trial, &g.roughness(), &cfg).unwrap();
        assert!((b.flow[1] - 11.0 / 3600.0).abs() < 1e-12);
        assert!(b.pressure_head[1] < a.pressure_head[1]);
    }

    #[test]
    fn dimension_errors() {
        let g = two_pipe_net();
        let cfg = SolverConfig::default();
        let s = Scenario::daily("s", 301.0, vec![1.0]);
        assert!(matches!(solve_steady(&g, &s, &g.roughness(), &cfg), Err(Error::Dimension { .. })));
        let s = Scenario::daily("s", 301.0, vec![1.0, 1.0]);
        assert!(matches!(solve_steady(&g, &s, &[0.5], &cfg), Err(Error::Dimension { .. })));
    }

    #[test]
    fn disconnected_junction_is_singular() {
        let mut g = two_pipe_net();
        g.junctions.push(Junction {
            id: "J3".into(),
            elevation: 0.0,
            base_demand: 0.0,
            coordinates: None,
        });
        let s = Scenario::daily("s", 301.0, vec![1.0, 1.0]);
        assert!(matches!(
            solve_steady(&g, &s, &g.roughness(), &SolverConfig::default()),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn iteration_cap_reports_state() {
        let g = two_pipe_net();
        let s = Scenario::daily("s", 301.0, vec![2.0, 2.0]);
        let cfg = SolverConfig {
            max_iterations: 1,
            ..SolverConfig::default()
        };
        let st = solve_steady(&g, &s, &g.roughness(), &cfg).unwrap();
        assert!(!st.converged);
        assert_eq!(st.iterations, 1);
        assert_eq!(st.pressure_head.len(), 3);
        assert_eq!(st.flow.len(), 2);
    }
}
