//! Hydraulic graph data model.
//!
//! A network is a single-source district: one reservoir, junctions, and pipes
//! carrying Darcy-Weisbach absolute roughness in millimetres. Sensor and demand
//! node subsets are ordered lists of junction ids.

mod inp;
mod synth;

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use inp::{parse_inp, serialize_inp, ParseWarning, ParsedNetwork};
pub use synth::{synth_dma, trial_nodes, SynthConfig, TrialSites, NOMINAL_MEAN_DIAMETER};

/// Inclusive lower/upper bounds for roughness values (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub low: f64,
    pub high: f64,
}

impl Bounds {
    pub const fn new(low: f64, high: f64) -> Self {
        Bounds { low, high }
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.low && value <= self.high
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.low + self.high)
    }
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds::new(0.01, 10.0)
    }
}

impl fmt::Display for Bounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.low, self.high)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Junction {
    pub id: String,
    /// Elevation above datum, m.
    pub elevation: f64,
    /// Base demand, m³/h.
    pub base_demand: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coordinates: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reservoir {
    pub id: String,
    /// Elevation head of the reservoir, m. Scenario heads are built on top of it.
    pub elevation_head: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coordinates: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipe {
    pub id: String,
    pub from: String,
    pub to: String,
    /// m
    pub length: f64,
    /// m
    pub diameter: f64,
    /// Absolute roughness, mm.
    pub roughness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkGraph {
    pub junctions: Vec<Junction>,
    pub reservoirs: Vec<Reservoir>,
    pub pipes: Vec<Pipe>,
    pub sensor_nodes: Vec<String>,
    pub demand_nodes: Vec<String>,
}

/// Position of a node id inside a [`NetworkGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRef {
    Junction(usize),
    Reservoir(usize),
}

impl NetworkGraph {
    pub fn junction_count(&self) -> usize {
        self.junctions.len()
    }

    pub fn pipe_count(&self) -> usize {
        self.pipes.len()
    }

    /// Total node count (junctions plus reservoirs).
    pub fn node_count(&self) -> usize {
        self.junctions.len() + self.reservoirs.len()
    }

    pub fn reservoir(&self) -> Result<&Reservoir> {
        match self.reservoirs.as_slice() {
            [r] => Ok(r),
            other => Err(Error::InvalidNetwork(format!(
                "expected exactly one reservoir, found {}",
                other.len()
            ))),
        }
    }

    /// Map from node id to its position. Later duplicates shadow earlier ones.
    pub fn node_index(&self) -> HashMap<&str, NodeRef> {
        let mut map = HashMap::with_capacity(self.node_count());
        for (i, j) in self.junctions.iter().enumerate() {
            map.insert(j.id.as_str(), NodeRef::Junction(i));
        }
        for (i, r) in self.reservoirs.iter().enumerate() {
            map.insert(r.id.as_str(), NodeRef::Reservoir(i));
        }
        map
    }

    pub fn junction_position(&self, id: &str) -> Option<usize> {
        self.junctions.iter().position(|j| j.id == id)
    }

    /// Junction indices of `ids`, failing on unknown ids.
    pub fn junction_positions(&self, ids: &[String]) -> Result<Vec<usize>> {
        let index = self.node_index();
        ids.iter()
            .map(|id| match index.get(id.as_str()) {
                Some(NodeRef::Junction(i)) => Ok(*i),
                _ => Err(Error::InvalidArgument(format!("'{id}' is not a junction"))),
            })
            .collect()
    }

    pub fn sensor_positions(&self) -> Result<Vec<usize>> {
        self.junction_positions(&self.sensor_nodes)
    }

    pub fn demand_positions(&self) -> Result<Vec<usize>> {
        self.junction_positions(&self.demand_nodes)
    }

    /// Base demands over the demand-node subset, m³/h.
    pub fn base_demands(&self) -> Result<Vec<f64>> {
        Ok(self
            .demand_positions()?
            .into_iter()
            .map(|i| self.junctions[i].base_demand)
            .collect())
    }

    /// Roughness values currently stored on the pipes.
    pub fn roughness(&self) -> RoughnessVector {
        RoughnessVector::new(self.pipes.iter().map(|p| p.roughness).collect())
    }

    /// Copy of the graph with pipe roughness replaced.
    pub fn with_roughness(&self, roughness: &[f64]) -> Result<NetworkGraph> {
        if roughness.len() != self.pipes.len() {
            return Err(Error::Dimension {
                what: "roughness",
                expected: self.pipes.len(),
                got: roughness.len(),
            });
        }
        let mut out = self.clone();
        for (p, &r) in out.pipes.iter_mut().zip(roughness) {
            p.roughness = r;
        }
        Ok(out)
    }

    /// Sum of pipe diameters (m) divided by total base demand (m³/h).
    pub fn diameter_demand_ratio(&self) -> f64 {
        let diameters: f64 = self.pipes.iter().map(|p| p.diameter).sum();
        let demand: f64 = self.junctions.iter().map(|j| j.base_demand).sum();
        diameters / demand
    }
}

/// Per-pipe roughness in millimetres; the calibration decision variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoughnessVector(Vec<f64>);

impl RoughnessVector {
    pub fn new(values: Vec<f64>) -> Self {
        RoughnessVector(values)
    }

    pub fn uniform(len: usize, value: f64) -> Self {
        RoughnessVector(vec![value; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn scaled(&self, factor: f64) -> Self {
        RoughnessVector(self.0.iter().map(|r| r * factor).collect())
    }

    pub fn within(&self, bounds: &Bounds) -> bool {
        self.0.iter().all(|&r| bounds.contains(r))
    }
}

impl Deref for RoughnessVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for RoughnessVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for RoughnessVector {
    fn from(values: Vec<f64>) -> Self {
        RoughnessVector(values)
    }
}

/// Which network invariant a diagnostic reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Invariant {
    UniqueIds,
    PipeEndpoint,
    SingleReservoir,
    Connectivity,
    SensorSubset,
    DemandSubset,
    JunctionValues,
    PipeGeometry,
    RoughnessBounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub invariant: Invariant,
    pub element: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} [{}]: {}", self.invariant, self.element, self.message)
    }
}

pub fn validate(graph: &NetworkGraph) -> Vec<Diagnostic> {
    validate_with_bounds(graph, &Bounds::default())
}

pub fn validate_with_bounds(graph: &NetworkGraph, bounds: &Bounds) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut push = |invariant, element: &str, message: String| {
        out.push(Diagnostic {
            invariant,
            element: element.to_string(),
            message,
        })
    };

    let mut seen = HashSet::new();
    for id in graph
        .junctions
        .iter()
        .map(|j| &j.id)
        .chain(graph.reservoirs.iter().map(|r| &r.id))
    {
        if !seen.insert(id.as_str()) {
            push(Invariant::UniqueIds, id, "duplicate node id".into());
        }
    }
    let mut seen_pipes = HashSet::new();
    for p in &graph.pipes {
        if !seen_pipes.insert(p.id.as_str()) {
            push(Invariant::UniqueIds, &p.id, "duplicate pipe id".into());
        }
    }

    if graph.reservoirs.len() != 1 {
        push(
            Invariant::SingleReservoir,
            "network",
            format!("expected one reservoir, found {}", graph.reservoirs.len()),
        );
    }

    let index = graph.node_index();
    for p in &graph.pipes {
        for end in [&p.from, &p.to] {
            if !index.contains_key(end.as_str()) {
                push(
                    Invariant::PipeEndpoint,
                    &p.id,
                    format!("endpoint '{end}' does not exist"),
                );
            }
        }
        if p.from == p.to {
            push(Invariant::PipeEndpoint, &p.id, "pipe connects a node to itself".into());
        }
        if !(p.length.is_finite() && p.length > 0.0) {
            push(Invariant::PipeGeometry, &p.id, format!("length {} must be > 0", p.length));
        }
        if !(p.diameter.is_finite() && p.diameter > 0.0) {
            push(
                Invariant::PipeGeometry,
                &p.id,
                format!("diameter {} must be > 0", p.diameter),
            );
        }
        if !bounds.contains(p.roughness) {
            push(
                Invariant::RoughnessBounds,
                &p.id,
                format!("roughness {} mm outside {}", p.roughness, bounds),
            );
        }
    }

    for j in &graph.junctions {
        if !j.elevation.is_finite() {
            push(Invariant::JunctionValues, &j.id, "elevation is not finite".into());
        }
        if !(j.base_demand.is_finite() && j.base_demand >= 0.0) {
            push(
                Invariant::JunctionValues,
                &j.id,
                format!("base demand {} must be >= 0", j.base_demand),
            );
        }
    }

    // Breadth-first search from every reservoir over pipes with valid endpoints.
    let mut adjacency: HashMap<&str, Vec<&str>> = HashMap::new();
    for p in &graph.pipes {
        if index.contains_key(p.from.as_str()) && index.contains_key(p.to.as_str()) {
            adjacency.entry(p.from.as_str()).or_default().push(p.to.as_str());
            adjacency.entry(p.to.as_str()).or_default().push(p.from.as_str());
        }
    }
    let mut reached: HashSet<&str> = HashSet::new();
    let mut queue: VecDeque<&str> = graph.reservoirs.iter().map(|r| r.id.as_str()).collect();
    reached.extend(queue.iter().copied());
    while let Some(node) = queue.pop_front() {
        for &next in adjacency.get(node).map(Vec::as_slice).unwrap_or(&[]) {
            if reached.insert(next) {
                queue.push_back(next);
            }
        }
    }
    if !graph.reservoirs.is_empty() {
        for j in &graph.junctions {
            if !reached.contains(j.id.as_str()) {
                push(
                    Invariant::Connectivity,
                    &j.id,
                    "junction is not reachable from a reservoir".into(),
                );
            }
        }
    }

    subset_diagnostics(
        graph,
        &index,
        &graph.sensor_nodes,
        Invariant::SensorSubset,
        &mut out,
    );
    subset_diagnostics(
        graph,
        &index,
        &graph.demand_nodes,
        Invariant::DemandSubset,
        &mut out,
    );
    out
}

fn subset_diagnostics(
    graph: &NetworkGraph,
    index: &HashMap<&str, NodeRef>,
    subset: &[String],
    invariant: Invariant,
    out: &mut Vec<Diagnostic>,
) {
    if subset.len() > graph.junctions.len() {
        out.push(Diagnostic {
            invariant,
            element: "network".into(),
            message: format!(
                "subset size {} exceeds junction count {}",
                subset.len(),
                graph.junctions.len()
            ),
        });
    }
    let mut seen = HashSet::new();
    for id in subset {
        if !seen.insert(id.as_str()) {
            out.push(Diagnostic {
                invariant,
                element: id.clone(),
                message: "duplicate entry".into(),
            });
        }
        if !matches!(index.get(id.as_str()), Some(NodeRef::Junction(_))) {
            out.push(Diagnostic {
                invariant,
                element: id.clone(),
                message: "not a junction of the network".into(),
            });
        }
    }
}
