//! Synthetic calibration bundles: a district, daily-usage and hydrant-trial
//! scenarios, and reference pressures simulated under a hidden roughness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hydraulics::{HydraulicModel, SolverConfig};
use crate::network::{synth_dma, trial_nodes, Bounds, NetworkGraph, SynthConfig, TrialSites};
use crate::scenario::{ReferencePressures, Scenario};

/// Trial discharge range, m³/h.
pub const TRIAL_FLOW: (f64, f64) = (9.615, 10.56);

/// Seed for the named stream derived from a root seed (SplitMix64 over an FNV-1a label hash).
pub fn derive_seed(root: u64, stream: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = root ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BundleConfig {
    pub junctions: usize,
    /// Sum of pipe diameters (m) per unit of peak inflow (m³/h).
    pub ratio: f64,
    pub sensors: usize,
    /// Demand scalings of the daily-usage hours, relative to the peak.
    pub daily_factors: Vec<f64>,
    pub far_trials: usize,
    pub close_trials: usize,
    /// Range of the background demand scaling during trials, which run at night.
    pub trial_background: (f64, f64),
    /// Ground truth multiplies the nominal roughness by a log-uniform factor in
    /// [1/spread, spread] shared by all pipes of one nominal value, then by a
    /// per-pipe factor in [1/jitter, jitter], and clamps to the bounds.
    pub truth_spread: f64,
    pub truth_jitter: f64,
    pub bounds: Bounds,
    /// Standard deviation of the Gaussian noise added to references, m.
    pub noise: f64,
    pub seed: u64,
}

impl Default for BundleConfig {
    fn default() -> Self {
        BundleConfig {
            junctions: 1071,
            ratio: 13.55,
            sensors: 11,
            daily_factors: vec![0.45, 0.7, 1.0, 0.85],
            far_trials: 2,
            close_trials: 2,
            trial_background: (0.05, 0.15),
            truth_spread: 4.0,
            truth_jitter: 1.25,
            bounds: Bounds::default(),
            noise: 0.005,
            seed: 0,
        }
    }
}

/// Hidden roughness the references were simulated under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub roughness: Vec<f64>,
    pub noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub graph: NetworkGraph,
    /// Daily-usage scenarios first, then far trials, then close trials.
    pub scenarios: Vec<Scenario>,
    pub references: Vec<ReferencePressures>,
    pub truth: GroundTruth,
    pub sites: TrialSites,
}

impl Bundle {
    pub fn daily(&self) -> Vec<Scenario> {
        self.scenarios.iter().filter(|s| s.hydrant.is_none()).cloned().collect()
    }

    pub fn trials(&self) -> Vec<Scenario> {
        self.scenarios.iter().filter(|s| s.hydrant.is_some()).cloned().collect()
    }

    /// Whether the trial scenario `id` discharges at a far site.
    pub fn is_far(&self, id: &str) -> bool {
        self.scenarios
            .iter()
            .find(|s| s.id == id)
            .and_then(|s| s.hydrant.as_ref())
            .is_some_and(|h| self.sites.far.contains(&h.node))
    }
}

pub fn synth_bundle(config: &BundleConfig, solver: &SolverConfig) -> Result<Bundle> {
    if !(config.truth_spread >= 1.0 && config.truth_jitter >= 1.0) || !(config.noise >= 0.0) {
        return Err(Error::InfeasibleConfig("truth spread and jitter must be >= 1 and noise >= 0".into()));
    }
    let (lo, hi) = config.trial_background;
    if !(0.0 <= lo && lo <= hi) || config.daily_factors.iter().any(|f| !(*f >= 0.0)) {
        return Err(Error::InfeasibleConfig("demand scalings must be >= 0".into()));
    }
    let mut net = SynthConfig::new(config.junctions, config.ratio, derive_seed(config.seed, "network"));
    net.sensor_count = config.sensors;
    let graph = synth_dma(&net)?;
    let sites = trial_nodes(&graph, config.far_trials, config.close_trials)?;
    let base = graph.base_demands()?;
    let head = graph.reservoir()?.elevation_head;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "truth"));
    let mut classes: Vec<f64> = graph.pipes.iter().map(|p| p.roughness).collect();
    classes.sort_by(f64::total_cmp);
    classes.dedup();
    let spread = config.truth_spread.ln();
    let class_factor: Vec<f64> = classes.iter().map(|_| rng.random_range(-spread..=spread).exp()).collect();
    let jitter = config.truth_jitter.ln();
    let truth: Vec<f64> = graph
        .pipes
        .iter()
        .map(|p| {
            let c = classes.iter().position(|&v| v == p.roughness).expect("class collected above");
            let r = p.roughness * class_factor[c] * rng.random_range(-jitter..=jitter).exp();
            r.clamp(config.bounds.low, config.bounds.high)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "scenarios"));
    let mut scenarios = Vec::new();
    for (i, f) in config.daily_factors.iter().enumerate() {
        let mut s = Scenario::daily(format!("daily-{}", i + 1), head, base.iter().map(|d| d * f).collect());
        s.timestamp = 3600 * (8 + 3 * i as i64);
        scenarios.push(s);
    }
    let trials = sites.far.iter().map(|n| ("far", n)).chain(sites.close.iter().map(|n| ("close", n)));
    let mut counts = (0, 0);
    for (kind, node) in trials {
        let k = if kind == "far" { &mut counts.0 } else { &mut counts.1 };
        *k += 1;
        let f = rng.random_range(lo..=hi);
        let flow = rng.random_range(TRIAL_FLOW.0..=TRIAL_FLOW.1);
        let mut s = Scenario::daily(format!("{kind}-{k}"), head, base.iter().map(|d| d * f).collect()).with_hydrant(node.clone(), flow);
        s.timestamp = 3600 * (10 + scenarios.len() as i64);
        scenarios.push(s);
    }

    let model = HydraulicModel::new(&graph)?;
    let normal = Normal::new(0.0, config.noise).map_err(|e| Error::InfeasibleConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "noise"));
    let mut references = Vec::with_capacity(scenarios.len());
    for s in &scenarios {
        let mut values = model.sensor_pressures(s, &truth, solver)?;
        if config.noise > 0.0 {
            for v in &mut values {
                *v += normal.sample(&mut rng);
            }
        }
        references.push(ReferencePressures {
            scenario_id: s.id.clone(),
            values,
        });
    }
    Ok(Bundle {
        graph,
        scenarios,
        references,
        truth: GroundTruth {
            roughness: truth,
            noise: config.noise,
            seed: config.seed,
        },
        sites,
    })
}
