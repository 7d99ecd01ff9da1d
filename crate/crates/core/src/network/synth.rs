//! Synthetic low-gradient district generator.
//!
//! Topology: one inflow trunk leaving the reservoir, a looped ladder grid at the
//! end of the trunk, and tree-shaped streets attached anywhere. Diameters are
//! scaled so that the summed pipe diameter over the peak inflow hits the
//! configured diameter-to-demand ratio.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Junction, NetworkGraph, NodeRef, Pipe, Reservoir};
use crate::error::{Error, Result};

/// Mean pipe diameter (m) of the reference district: 13.55 m/(m³/h) × 9.05 m³/h
/// spread over 1086 pipes.
pub const NOMINAL_MEAN_DIAMETER: f64 = 13.55 * 9.05 / 1086.0;

const RESERVOIR_ELEVATION_HEAD: f64 = 300.0;
const MIN_DIAMETER: f64 = 0.01;
const MAX_DIAMETER: f64 = 2.0;
/// Minimum pipe distance between far trial sites, m.
const FAR_SEPARATION: f64 = 150.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub junction_count: usize,
    /// Sum of pipe diameters (m) per unit of peak inflow (m³/h).
    pub target_diameter_demand_ratio: f64,
    /// Total base demand at peak, m³/h.
    pub peak_inflow: f64,
    pub active_households: usize,
    pub sensor_count: usize,
    pub seed: u64,
}

impl SynthConfig {
    /// Configuration whose pipes keep the reference mean diameter; the peak
    /// inflow follows from the requested ratio.
    pub fn new(junction_count: usize, ratio: f64, seed: u64) -> Self {
        let pipes = junction_count + loop_count(junction_count);
        let households = ((300.0 * junction_count as f64 / 1071.0).round() as usize).max(1);
        SynthConfig {
            junction_count,
            target_diameter_demand_ratio: ratio,
            peak_inflow: NOMINAL_MEAN_DIAMETER * pipes as f64 / ratio,
            active_households: households,
            sensor_count: 11.min(junction_count),
            seed,
        }
    }

    pub fn loop_count(&self) -> usize {
        loop_count(self.junction_count)
    }

    pub fn pipe_count(&self) -> usize {
        self.junction_count + self.loop_count()
    }

    fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InfeasibleConfig(m.to_string()));
        if self.junction_count == 0 {
            return bad("junction_count must be > 0");
        }
        if self.active_households == 0 {
            return bad("active_households must be > 0");
        }
        if self.sensor_count == 0 || self.sensor_count > self.junction_count {
            return bad("sensor_count must be in 1..=junction_count");
        }
        if !(self.target_diameter_demand_ratio.is_finite() && self.target_diameter_demand_ratio > 0.0) {
            return bad("diameter-to-demand ratio must be > 0");
        }
        if !(self.peak_inflow.is_finite() && self.peak_inflow > 0.0) {
            return bad("peak_inflow must be > 0");
        }
        Ok(())
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig::new(1071, 13.55, 7)
    }
}

fn loop_count(junctions: usize) -> usize {
    if junctions < 8 {
        0
    } else {
        ((junctions as f64 * 15.0 / 1071.0).round() as usize).max(1)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    Trunk,
    Grid,
    Branch,
}

struct Builder {
    junctions: Vec<Junction>,
    roles: Vec<Role>,
    pipes: Vec<(usize, usize, f64, Role)>, // node indices: 0 = reservoir, j+1 = junction j
}

impl Builder {
    fn add_junction(&mut self, xy: [f64; 2], role: Role) -> usize {
        let id = format!("J{}", self.junctions.len() + 1);
        self.junctions.push(Junction {
            id,
            elevation: 0.0,
            base_demand: 0.0,
            coordinates: Some(xy),
        });
        self.roles.push(role);
        self.junctions.len()
    }

    fn xy(&self, node: usize) -> [f64; 2] {
        if node == 0 {
            [0.0, 0.0]
        } else {
            self.junctions[node - 1].coordinates.unwrap_or([0.0, 0.0])
        }
    }

    fn connect(&mut self, a: usize, b: usize, role: Role) {
        let [xa, ya] = self.xy(a);
        let [xb, yb] = self.xy(b);
        let length = ((xa - xb).powi(2) + (ya - yb).powi(2)).sqrt().max(1.0);
        self.pipes.push((a, b, (length * 10.0).round() / 10.0, role));
    }
}

/// Generate a connected single-reservoir district. Deterministic per seed.
pub fn synth_dma(config: &SynthConfig) -> Result<NetworkGraph> {
    config.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.junction_count;
    let loops = config.loop_count();
    let mut b = Builder {
        junctions: Vec::with_capacity(n),
        roles: Vec::with_capacity(n),
        pipes: Vec::with_capacity(config.pipe_count()),
    };

    // Inflow trunk heading west.
    let trunk = (n / 10).clamp(2, 12).min(n);
    let mut prev = 0;
    let mut pos = [0.0, 0.0];
    for _ in 0..trunk {
        pos = [pos[0] - rng.random_range(80.0..120.0), pos[1] + rng.random_range(-15.0..15.0)];
        let node = b.add_junction(pos, Role::Trunk);
        b.connect(prev, node, Role::Trunk);
        prev = node;
    }

    // Ladder grid with `loops` cells at the end of the trunk.
    if loops > 0 {
        let columns = loops + 1;
        let origin = pos;
        let mut top = Vec::with_capacity(columns);
        let mut bottom = Vec::with_capacity(columns);
        let mut x = origin[0];
        for _ in 0..columns {
            x -= rng.random_range(80.0..120.0);
            top.push(b.add_junction([x, origin[1] + 60.0], Role::Grid));
            bottom.push(b.add_junction([x, origin[1] - 60.0], Role::Grid));
        }
        b.connect(prev, top[0], Role::Grid);
        for c in 0..columns {
            b.connect(top[c], bottom[c], Role::Grid);
            if c + 1 < columns {
                b.connect(top[c], top[c + 1], Role::Grid);
                b.connect(bottom[c], bottom[c + 1], Role::Grid);
            }
        }
    }

    // Streets: short chains attached to random existing junctions.
    while b.junctions.len() < n {
        let remaining = n - b.junctions.len();
        let street = rng.random_range(3..=14usize).min(remaining);
        let backbone = trunk + 2 * if loops > 0 { loops + 1 } else { 0 };
        let mut at = if b.junctions.len() == backbone || rng.random_bool(0.6) {
            rng.random_range(1..=backbone)
        } else {
            rng.random_range(backbone + 1..=b.junctions.len())
        };
        let mut heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        for _ in 0..street {
            heading += rng.random_range(-0.3..0.3);
            let step = rng.random_range(20.0..60.0);
            let [x, y] = b.xy(at);
            let node = b.add_junction([x + step * heading.cos(), y + step * heading.sin()], Role::Branch);
            b.connect(at, node, Role::Branch);
            at = node;
        }
    }

    // Smooth elevation field, pressures of roughly 40-60 m.
    for j in &mut b.junctions {
        let [x, y] = j.coordinates.unwrap_or([0.0, 0.0]);
        let e = 252.0 + 4.0 * (x / 350.0).sin() + 3.0 * (y / 270.0).cos() + rng.random_range(-0.5..0.5);
        j.elevation = (e * 100.0).round() / 100.0;
    }

    // Diameters by role, scaled to the target ratio and rounded to whole mm.
    let raw: Vec<f64> = b
        .pipes
        .iter()
        .map(|&(_, _, _, role)| match role {
            Role::Trunk => 0.3,
            Role::Grid => 0.2,
            Role::Branch => [0.08, 0.1, 0.1, 0.11, 0.125][rng.random_range(0..5)],
        })
        .collect();
    let target_sum = config.target_diameter_demand_ratio * config.peak_inflow;
    let scale = target_sum / raw.iter().sum::<f64>();
    let diameters: Vec<f64> = raw.iter().map(|d| (d * scale * 1000.0).round() / 1000.0).collect();
    if let Some(d) = diameters.iter().find(|d| !(MIN_DIAMETER..=MAX_DIAMETER).contains(*d)) {
        return Err(Error::InfeasibleConfig(format!(
            "ratio {} with peak inflow {} m³/h needs diameter {d} m outside [{MIN_DIAMETER}, {MAX_DIAMETER}]",
            config.target_diameter_demand_ratio, config.peak_inflow
        )));
    }

    let roughness: Vec<f64> = b
        .pipes
        .iter()
        .map(|&(_, _, _, role)| match role {
            Role::Trunk => 0.5,
            Role::Grid => 1.0,
            Role::Branch => [0.5, 1.0, 1.5][rng.random_range(0..3)],
        })
        .collect();

    // Households on grid and street junctions.
    let hosts: Vec<usize> = (0..n).filter(|&i| b.roles[i] != Role::Trunk).collect();
    let hosts = if hosts.is_empty() { (0..n).collect() } else { hosts };
    let mut weight = vec![0.0; n];
    for _ in 0..config.active_households {
        let j = hosts[rng.random_range(0..hosts.len())];
        weight[j] += rng.random_range(0.5..1.5);
    }
    let total: f64 = weight.iter().sum();
    for (j, w) in b.junctions.iter_mut().zip(&weight) {
        j.base_demand = config.peak_inflow * w / total;
    }

    let reservoir = Reservoir {
        id: "R1".into(),
        elevation_head: RESERVOIR_ELEVATION_HEAD,
        coordinates: Some([0.0, 0.0]),
    };
    let node_id = |i: usize, js: &[Junction]| {
        if i == 0 {
            "R1".to_string()
        } else {
            js[i - 1].id.clone()
        }
    };
    let pipes: Vec<Pipe> = b
        .pipes
        .iter()
        .enumerate()
        .map(|(k, &(a, c, length, _))| Pipe {
            id: format!("P{}", k + 1),
            from: node_id(a, &b.junctions),
            to: node_id(c, &b.junctions),
            length,
            diameter: diameters[k],
            roughness: roughness[k],
        })
        .collect();
    let demand_nodes = b
        .junctions
        .iter()
        .filter(|j| j.base_demand > 0.0)
        .map(|j| j.id.clone())
        .collect();

    let mut graph = NetworkGraph {
        junctions: b.junctions,
        reservoirs: vec![reservoir],
        pipes,
        sensor_nodes: Vec::new(),
        demand_nodes,
    };
    let sensors = spread_nodes(&graph, config.sensor_count, &[])?;
    graph.sensor_nodes = sensors.iter().map(|&i| graph.junctions[i].id.clone()).collect();

    let realized = graph.diameter_demand_ratio();
    let rel = (realized / config.target_diameter_demand_ratio - 1.0).abs();
    if rel > 0.1 {
        return Err(Error::InfeasibleConfig(format!(
            "realized ratio {realized:.3} misses target {} by {:.1}%",
            config.target_diameter_demand_ratio,
            rel * 100.0
        )));
    }
    Ok(graph)
}

#[derive(Clone, Copy)]
struct Entry(f64, usize);

impl PartialEq for Entry {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Entry {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
    }
}

/// Shortest path lengths (m) from `sources` to every node. Node index space:
/// junction `j` is `j`, reservoir `r` is `junction_count + r`.
pub(crate) fn path_lengths(graph: &NetworkGraph, sources: &[usize]) -> Vec<f64> {
    let nj = graph.junctions.len();
    let total = graph.node_count();
    let index = graph.node_index();
    let flat = |id: &str| match index.get(id) {
        Some(NodeRef::Junction(j)) => Some(*j),
        Some(NodeRef::Reservoir(r)) => Some(nj + r),
        None => None,
    };
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); total];
    for p in &graph.pipes {
        if let (Some(a), Some(b)) = (flat(&p.from), flat(&p.to)) {
            adj[a].push((b, p.length));
            adj[b].push((a, p.length));
        }
    }
    let mut dist = vec![f64::INFINITY; total];
    let mut heap = BinaryHeap::new();
    for &s in sources {
        dist[s] = 0.0;
        heap.push(Entry(0.0, s));
    }
    while let Some(Entry(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Entry(nd, v));
            }
        }
    }
    dist
}

/// Farthest-point sampling of `count` junctions, seeded by the reservoir and
/// skipping `exclude`.
fn spread_nodes(graph: &NetworkGraph, count: usize, exclude: &[usize]) -> Result<Vec<usize>> {
    spread_among(graph, count, |j| !exclude.contains(&j))
}

fn spread_among(graph: &NetworkGraph, count: usize, eligible: impl Fn(usize) -> bool) -> Result<Vec<usize>> {
    let nj = graph.junctions.len();
    let mut nearest = path_lengths(graph, &[nj]);
    let mut chosen = Vec::with_capacity(count);
    for _ in 0..count {
        let next = (0..nj)
            .filter(|&j| eligible(j) && !chosen.contains(&j) && nearest[j].is_finite())
            .max_by(|&a, &b| nearest[a].total_cmp(&nearest[b]).then(b.cmp(&a)));
        let Some(next) = next else {
            return Err(Error::InfeasibleConfig(format!(
                "cannot place {count} spread nodes"
            )));
        };
        chosen.push(next);
        let d = path_lengths(graph, &[next]);
        for (n, dn) in nearest.iter_mut().zip(d) {
            *n = n.min(dn);
        }
    }
    Ok(chosen)
}

/// Candidate hydrant-trial sites. Far ones are taken farthest from the
/// reservoir first, each at least `FAR_SEPARATION` m of pipe from the others.
/// Close ones lie between 5% and 20% of the reservoir distance range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSites {
    pub far: Vec<String>,
    pub close: Vec<String>,
}

pub fn trial_nodes(graph: &NetworkGraph, far: usize, close: usize) -> Result<TrialSites> {
    let sensors = graph.sensor_positions()?;
    let nj = graph.junctions.len();
    let from_reservoir = path_lengths(graph, &[nj]);
    let reach = from_reservoir[..nj]
        .iter()
        .copied()
        .filter(|d| d.is_finite())
        .fold(0.0, f64::max);
    let mut by_distance: Vec<usize> = (0..nj).filter(|j| !sensors.contains(j) && from_reservoir[*j].is_finite()).collect();
    by_distance.sort_by(|&a, &b| from_reservoir[b].total_cmp(&from_reservoir[a]).then(a.cmp(&b)));
    let mut far_idx: Vec<usize> = Vec::with_capacity(far);
    let mut apart = vec![f64::INFINITY; nj + graph.reservoirs.len()];
    for j in by_distance {
        if far_idx.len() == far {
            break;
        }
        if apart[j] >= FAR_SEPARATION {
            far_idx.push(j);
            for (a, d) in apart.iter_mut().zip(path_lengths(graph, &[j])) {
                *a = a.min(d);
            }
        }
    }
    if far_idx.len() < far {
        return Err(Error::InfeasibleConfig("not enough far trial sites".into()));
    }
    let near = |j: usize| {
        !sensors.contains(&j)
            && !far_idx.contains(&j)
            && from_reservoir[j] >= 0.05 * reach
            && from_reservoir[j] <= 0.2 * reach
    };
    // Spread the close sites among themselves, starting nearest to the reservoir.
    let mut close_idx: Vec<usize> = Vec::with_capacity(close);
    let mut candidates: Vec<usize> = (0..nj).filter(|&j| near(j)).collect();
    candidates.sort_by(|&a, &b| from_reservoir[a].total_cmp(&from_reservoir[b]).then(a.cmp(&b)));
    if candidates.len() < close {
        return Err(Error::InfeasibleConfig("not enough close trial sites".into()));
    }
    if close > 0 {
        close_idx.push(candidates[0]);
        let mut nearest = path_lengths(graph, &[candidates[0]]);
        while close_idx.len() < close {
            let next = candidates
                .iter()
                .copied()
                .filter(|j| !close_idx.contains(j))
                .max_by(|&a, &b| nearest[a].total_cmp(&nearest[b]).then(b.cmp(&a)))
                .expect("candidate count checked");
            close_idx.push(next);
            let d = path_lengths(graph, &[next]);
            for (n, dn) in nearest.iter_mut().zip(d) {
                *n = n.min(dn);
            }
        }
    }
    let ids = |v: &[usize]| v.iter().map(|&j| graph.junctions[j].id.clone()).collect();
    Ok(TrialSites {
        far: ids(&far_idx),
        close: ids(&close_idx),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{parse_inp, serialize_inp, validate};

    #[test]
    fn deterministic_per_seed() {
        let c = SynthConfig::new(50, 13.55, 7);
        let a = serde_json::to_string(&synth_dma(&c).unwrap()).unwrap();
        let b = serde_json::to_string(&synth_dma(&c).unwrap()).unwrap();
        assert_eq!(a, b);
        let other = serde_json::to_string(&synth_dma(&SynthConfig::new(50, 13.55, 8)).unwrap()).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn realized_ratio_close_to_target() {
        let g = synth_dma(&SynthConfig::new(50, 13.55, 7)).unwrap();
        let r = g.diameter_demand_ratio();
        assert!((12.2..=14.9).contains(&r), "ratio {r}");
    }

    #[test]
    fn benchmark_ratio_is_about_24_times_smaller() {
        let a = synth_dma(&SynthConfig::new(200, 13.55, 3)).unwrap();
        let b = synth_dma(&SynthConfig::new(200, 0.57, 3)).unwrap();
        let factor = a.diameter_demand_ratio() / b.diameter_demand_ratio();
        assert!((factor / (13.55 / 0.57) - 1.0).abs() < 0.05, "factor {factor}");
        assert!((b.diameter_demand_ratio() / 0.57 - 1.0).abs() < 0.1);
    }

    #[test]
    fn default_matches_reference_district_size() {
        let c = SynthConfig::default();
        assert_eq!(c.pipe_count(), 1086);
        assert!((c.peak_inflow - 9.05).abs() < 1e-12);
        assert_eq!(c.active_households, 300);
        let g = synth_dma(&c).unwrap();
        assert_eq!(g.junction_count(), 1071);
        assert_eq!(g.pipe_count(), 1086);
        assert_eq!(g.sensor_nodes.len(), 11);
    }

    #[test]
    fn infeasible_ratio_rejected() {
        let mut c = SynthConfig::new(50, 13.55, 1);
        c.peak_inflow = 100.0;
        assert!(matches!(synth_dma(&c), Err(Error::InfeasibleConfig(_))));
    }

    #[test]
    fn demand_sum_equals_peak_inflow() {
        for seed in 0..10 {
            let c = SynthConfig::new(120, 13.55, seed);
            let g = synth_dma(&c).unwrap();
            let sum: f64 = g.junctions.iter().map(|j| j.base_demand).sum();
            assert!((sum - c.peak_inflow).abs() < 1e-9);
        }
    }

    #[test]
    fn valid_for_many_seeds() {
        for seed in 0..100 {
            let n = 20 + (seed as usize * 7) % 150;
            let g = synth_dma(&SynthConfig::new(n, 13.55, seed)).unwrap();
            assert_eq!(validate(&g), vec![], "seed {seed}");
        }
    }

    #[test]
    fn tiny_networks() {
        for n in 1..8 {
            let g = synth_dma(&SynthConfig::new(n, 13.55, 1)).unwrap();
            assert!(validate(&g).is_empty());
            assert_eq!(g.pipe_count(), n);
        }
    }

    #[test]
    fn inp_round_trip() {
        let g = synth_dma(&SynthConfig::new(50, 13.55, 7)).unwrap();
        let back = parse_inp(&serialize_inp(&g)).unwrap();
        assert_eq!(back.graph, g);
        assert!(back.diagnostics.is_empty());
    }

    #[test]
    fn trial_sites_are_distinct_and_ordered_by_distance() {
        let g = synth_dma(&SynthConfig::new(300, 13.55, 5)).unwrap();
        let sites = trial_nodes(&g, 2, 2).unwrap();
        assert_eq!(sites.far.len(), 2);
        assert_eq!(sites.close.len(), 2);
        let nj = g.junction_count();
        let d = path_lengths(&g, &[nj]);
        let dist = |id: &String| d[g.junction_position(id).unwrap()];
        let min_far = sites.far.iter().map(dist).fold(f64::INFINITY, f64::min);
        let max_close = sites.close.iter().map(dist).fold(0.0, f64::max);
        assert!(min_far > 2.0 * max_close);
    }
}
