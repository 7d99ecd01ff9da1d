//! Cross-validation of calibration methods and the statistics comparing them.
//!
//! Error changes follow Δe = e − e0, so a negative entry means calibration
//! lowered the absolute error at that sensor. The comparison z = e_DH − e_HH
//! is positive where calibration on hydrant trials beat calibration on daily
//! usage.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::{Calibration, CalibrationCase, Calibrator, Method};
use crate::error::{Error, Result};
use crate::hydraulics::{HydraulicModel, SolverConfig};
use crate::network::NetworkGraph;
use crate::scenario::{ReferencePressures, Scenario, ScenarioLabel};
use crate::stats::{gated_location_test, mean_sd, wilcoxon_signed_rank, GatedTest, WilcoxonResult};

/// Significance level of the normality gate.
pub const GATE_ALPHA: f64 = 0.05;

/// Training pool label followed by test pool label: H = hydrant trials, D = daily usage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setup {
    HH,
    DH,
    HD,
    DD,
}

impl Setup {
    pub fn train_label(self) -> ScenarioLabel {
        match self {
            Setup::HH | Setup::HD => ScenarioLabel::HydrantTrial,
            Setup::DH | Setup::DD => ScenarioLabel::DailyUsage,
        }
    }

    pub fn test_label(self) -> ScenarioLabel {
        match self {
            Setup::HH | Setup::DH => ScenarioLabel::HydrantTrial,
            Setup::HD | Setup::DD => ScenarioLabel::DailyUsage,
        }
    }

    /// Same-pool setups leave one scenario out; cross-pool setups train once.
    pub fn same_pool(self) -> bool {
        matches!(self, Setup::HH | Setup::DD)
    }

    /// The same-pool setup for scenarios carrying `label`.
    pub fn within(label: ScenarioLabel) -> Setup {
        match label {
            ScenarioLabel::HydrantTrial => Setup::HH,
            ScenarioLabel::DailyUsage => Setup::DD,
        }
    }
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Setup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "HH" => Ok(Setup::HH),
            "DH" => Ok(Setup::DH),
            "HD" => Ok(Setup::HD),
            "DD" => Ok(Setup::DD),
            _ => Err(Error::InvalidArgument(format!("unknown setup '{s}' (expected HH, DH, HD or DD)"))),
        }
    }
}

/// What one fold trains on and what it is tested on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub index: usize,
    pub setup: Setup,
    pub method: Method,
    /// Training scenario ids.
    pub training: Vec<String>,
    pub test_scenario: String,
    /// Held-out sensor in leave-one-sensor-out folds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub held_out_sensor: Option<String>,
    /// Sensors used in training (J).
    pub train_sensors: Vec<String>,
    /// Sensors scored in the test (J').
    pub test_sensors: Vec<String>,
}

impl FoldSpec {
    fn check(&self) -> Result<()> {
        if self.training.iter().any(|t| *t == self.test_scenario) && self.held_out_sensor.is_none() {
            return Err(Error::InvalidArgument(format!(
                "fold {}: test scenario '{}' is also a training scenario",
                self.index, self.test_scenario
            )));
        }
        if let Some(x) = &self.held_out_sensor {
            if self.train_sensors.contains(x) {
                return Err(Error::InvalidArgument(format!(
                    "fold {}: held-out sensor '{x}' is a training sensor",
                    self.index
                )));
            }
        }
        Ok(())
    }
}

/// Errors at the test sensors before and after calibration, all in m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub spec: FoldSpec,
    /// Reference pressure heads over J'.
    pub measured: Vec<f64>,
    /// Simulated under r0.
    pub p0: Vec<f64>,
    /// Simulated under the calibrated roughness.
    pub p: Vec<f64>,
    pub e0: Vec<f64>,
    pub e: Vec<f64>,
    pub delta_e: Vec<f64>,
    pub roughness: Vec<f64>,
    /// Calibration objective before and after, when the roughness came from a calibrator.
    pub objective_initial: Option<f64>,
    pub objective_final: Option<f64>,
}

impl FoldResult {
    pub fn mean_delta_e(&self) -> f64 {
        self.delta_e.iter().sum::<f64>() / self.delta_e.len() as f64
    }

    pub fn rows(&self) -> Vec<ErrorRow> {
        self.spec
            .test_sensors
            .iter()
            .enumerate()
            .map(|(i, sensor)| ErrorRow {
                scenario: self.spec.test_scenario.clone(),
                sensor: sensor.clone(),
                e0: self.e0[i],
                e: self.e[i],
                delta_e: self.delta_e[i],
                setup: self.spec.setup,
                method: self.spec.method,
            })
            .collect()
    }
}

/// A fold that could not be completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldFailure {
    pub spec: FoldSpec,
    pub message: String,
}

pub type FoldOutcome = std::result::Result<FoldResult, FoldFailure>;

/// Source of measured pressures by scenario id.
pub trait ReferenceSource: Sync {
    fn reference(&self, scenario_id: &str) -> Result<ReferencePressures>;
}

impl<T: ReferenceSource + ?Sized> ReferenceSource for &T {
    fn reference(&self, scenario_id: &str) -> Result<ReferencePressures> {
        (**self).reference(scenario_id)
    }
}

/// In-memory references keyed by scenario id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferenceSet(BTreeMap<String, ReferencePressures>);

impl ReferenceSet {
    pub fn new(references: Vec<ReferencePressures>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for r in references {
            if map.contains_key(&r.scenario_id) {
                return Err(Error::DuplicateId {
                    kind: "reference",
                    id: r.scenario_id,
                });
            }
            map.insert(r.scenario_id.clone(), r);
        }
        Ok(ReferenceSet(map))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl ReferenceSource for ReferenceSet {
    fn reference(&self, scenario_id: &str) -> Result<ReferencePressures> {
        self.0
            .get(scenario_id)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("no reference pressures for scenario '{scenario_id}'")))
    }
}

/// A network prepared for cross-validation with fixed r0 and solver settings.
#[derive(Debug, Clone)]
pub struct Evaluator {
    model: HydraulicModel,
    sensors: Vec<String>,
    sensor_positions: Vec<usize>,
    r0: Vec<f64>,
    solver: SolverConfig,
}

impl Evaluator {
    pub fn new(graph: &NetworkGraph, r0: Vec<f64>, solver: SolverConfig) -> Result<Self> {
        let model = HydraulicModel::new(graph)?;
        if r0.len() != model.pipe_count() {
            return Err(Error::Dimension {
                what: "initial roughness",
                expected: model.pipe_count(),
                got: r0.len(),
            });
        }
        if graph.sensor_nodes.is_empty() {
            return Err(Error::InvalidArgument("network has no sensor nodes".into()));
        }
        Ok(Evaluator {
            sensor_positions: model.sensor_positions().to_vec(),
            sensors: graph.sensor_nodes.clone(),
            model,
            r0,
            solver,
        })
    }

    pub fn model(&self) -> &HydraulicModel {
        &self.model
    }

    pub fn sensors(&self) -> &[String] {
        &self.sensors
    }

    pub fn r0(&self) -> &[f64] {
        &self.r0
    }

    fn sensor_index(&self, id: &str) -> Result<usize> {
        self.sensors
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| Error::InvalidArgument(format!("'{id}' is not a sensor node")))
    }

    fn reference_values(&self, refs: &dyn ReferenceSource, scenario_id: &str) -> Result<Vec<f64>> {
        let r = refs.reference(scenario_id)?;
        if r.values.len() != self.sensors.len() {
            return Err(Error::Dimension {
                what: "reference pressures",
                expected: self.sensors.len(),
                got: r.values.len(),
            });
        }
        Ok(r.values)
    }

    /// Training cases over the sensors in `train_sensors`.
    fn cases(&self, scenarios: &[&Scenario], refs: &dyn ReferenceSource, train_sensors: &[String]) -> Result<Vec<CalibrationCase>> {
        let idx: Vec<usize> = train_sensors.iter().map(|s| self.sensor_index(s)).collect::<Result<_>>()?;
        let positions: Vec<usize> = idx.iter().map(|&i| self.sensor_positions[i]).collect();
        scenarios
            .iter()
            .map(|s| {
                let values = self.reference_values(refs, &s.id)?;
                CalibrationCase::new((*s).clone(), positions.clone(), idx.iter().map(|&i| values[i]).collect())
            })
            .collect()
    }

    /// Simulate the test scenario under r0 and under `roughness` and score both
    /// against the reference at the fold's test sensors.
    pub fn test_stage(
        &self,
        scenario: &Scenario,
        reference: &ReferencePressures,
        roughness: &[f64],
        spec: FoldSpec,
    ) -> Result<FoldResult> {
        if reference.scenario_id != scenario.id {
            return Err(Error::InvalidArgument(format!(
                "reference for '{}' given for scenario '{}'",
                reference.scenario_id, scenario.id
            )));
        }
        if reference.values.len() != self.sensors.len() {
            return Err(Error::Dimension {
                what: "reference pressures",
                expected: self.sensors.len(),
                got: reference.values.len(),
            });
        }
        if roughness.len() != self.r0.len() {
            return Err(Error::Dimension {
                what: "calibrated roughness",
                expected: self.r0.len(),
                got: roughness.len(),
            });
        }
        let idx: Vec<usize> = spec.test_sensors.iter().map(|s| self.sensor_index(s)).collect::<Result<_>>()?;
        if idx.is_empty() {
            return Err(Error::InvalidArgument("test stage needs at least one sensor".into()));
        }
        let positions: Vec<usize> = idx.iter().map(|&i| self.sensor_positions[i]).collect();
        let measured: Vec<f64> = idx.iter().map(|&i| reference.values[i]).collect();
        let p0 = self.model.pressures_at(scenario, &self.r0, &self.solver, &positions)?;
        let p = self.model.pressures_at(scenario, roughness, &self.solver, &positions)?;
        let e0: Vec<f64> = p0.iter().zip(&measured).map(|(a, m)| (a - m).abs()).collect();
        let e: Vec<f64> = p.iter().zip(&measured).map(|(a, m)| (a - m).abs()).collect();
        let delta_e = e.iter().zip(&e0).map(|(a, b)| a - b).collect();
        Ok(FoldResult {
            spec,
            measured,
            p0,
            p,
            e0,
            e,
            delta_e,
            roughness: roughness.to_vec(),
            objective_initial: None,
            objective_final: None,
        })
    }

    fn run_test(&self, scenario: &Scenario, refs: &dyn ReferenceSource, calibration: &Calibration, spec: FoldSpec) -> Result<FoldResult> {
        let reference = refs.reference(&scenario.id)?;
        let mut result = self.test_stage(scenario, &reference, &calibration.roughness, spec)?;
        result.objective_initial = Some(calibration.objective_initial);
        result.objective_final = Some(calibration.objective_final);
        Ok(result)
    }

    /// Leave-one-scenario-out. Same-pool setups hold out each scenario of
    /// `train_pool` in turn (`test_pool` must then be the same pool or empty);
    /// cross-pool setups calibrate once on the whole training pool and test on
    /// every scenario of `test_pool`.
    pub fn loso_run(
        &self,
        setup: Setup,
        train_pool: &[Scenario],
        test_pool: &[Scenario],
        refs: &dyn ReferenceSource,
        calibrator: &dyn Calibrator,
    ) -> Result<Vec<FoldOutcome>> {
        check_pool(train_pool, setup.train_label(), "training")?;
        let method = calibrator.method();
        let all = self.sensors.clone();
        if setup.same_pool() {
            if !test_pool.is_empty() && !same_ids(train_pool, test_pool) {
                return Err(Error::InvalidArgument(format!("setup {setup} tests on its training pool")));
            }
            if train_pool.len() < 2 {
                return Err(Error::InvalidArgument("leave-one-out needs at least two scenarios".into()));
            }
            let outcomes = train_pool
                .par_iter()
                .enumerate()
                .map(|(k, test)| {
                    let training: Vec<&Scenario> = train_pool.iter().filter(|s| s.id != test.id).collect();
                    let spec = FoldSpec {
                        index: k,
                        setup,
                        method,
                        training: training.iter().map(|s| s.id.clone()).collect(),
                        test_scenario: test.id.clone(),
                        held_out_sensor: None,
                        train_sensors: all.clone(),
                        test_sensors: all.clone(),
                    };
                    self.fold(spec, &training, test, refs, calibrator, None)
                })
                .collect();
            Ok(outcomes)
        } else {
            check_pool(test_pool, setup.test_label(), "test")?;
            let training: Vec<&Scenario> = train_pool.iter().collect();
            let shared = self
                .cases(&training, refs, &all)
                .and_then(|cases| calibrator.calibrate(&self.model, &self.r0, &cases))
                .map_err(|e| e.to_string());
            let outcomes = test_pool
                .par_iter()
                .enumerate()
                .map(|(k, test)| {
                    let spec = FoldSpec {
                        index: k,
                        setup,
                        method,
                        training: training.iter().map(|s| s.id.clone()).collect(),
                        test_scenario: test.id.clone(),
                        held_out_sensor: None,
                        train_sensors: all.clone(),
                        test_sensors: all.clone(),
                    };
                    self.fold(spec, &training, test, refs, calibrator, Some(&shared))
                })
                .collect();
            Ok(outcomes)
        }
    }

    /// Leave-one-sensor-out on one scenario: fold x calibrates on every sensor
    /// but x and is scored at x alone.
    pub fn lo_sensor_run(&self, scenario: &Scenario, refs: &dyn ReferenceSource, calibrator: &dyn Calibrator) -> Result<Vec<FoldOutcome>> {
        scenario.validate()?;
        if self.sensors.len() < 2 {
            return Err(Error::InvalidArgument("leave-one-sensor-out needs at least two sensors".into()));
        }
        let setup = Setup::within(scenario.label);
        let method = calibrator.method();
        let outcomes = self
            .sensors
            .par_iter()
            .enumerate()
            .map(|(k, x)| {
                let spec = lo_sensor_spec(k, setup, method, &scenario.id, &self.sensors, x);
                self.fold(spec, &[scenario], scenario, refs, calibrator, None)
            })
            .collect();
        Ok(outcomes)
    }

    fn fold(
        &self,
        spec: FoldSpec,
        training: &[&Scenario],
        test: &Scenario,
        refs: &dyn ReferenceSource,
        calibrator: &dyn Calibrator,
        shared: Option<&std::result::Result<Calibration, String>>,
    ) -> FoldOutcome {
        let run = || -> std::result::Result<FoldResult, String> {
            spec.check().map_err(|e| e.to_string())?;
            let owned;
            let calibration = match shared {
                Some(c) => c.as_ref().map_err(|e| format!("calibration: {e}"))?,
                None => {
                    let cases = self.cases(training, refs, &spec.train_sensors).map_err(|e| e.to_string())?;
                    owned = calibrator
                        .calibrate(&self.model, &self.r0, &cases)
                        .map_err(|e| format!("calibration: {e}"))?;
                    &owned
                }
            };
            self.run_test(test, refs, calibration, spec.clone())
                .map_err(|e| format!("test: {e}"))
        };
        run().map_err(|message| FoldFailure {
            spec: spec.clone(),
            message,
        })
    }
}

/// Spec of the leave-one-sensor-out fold holding out `x`.
pub fn lo_sensor_spec(index: usize, setup: Setup, method: Method, scenario: &str, sensors: &[String], x: &str) -> FoldSpec {
    FoldSpec {
        index,
        setup,
        method,
        training: vec![scenario.to_string()],
        test_scenario: scenario.to_string(),
        held_out_sensor: Some(x.to_string()),
        train_sensors: sensors.iter().filter(|s| *s != x).cloned().collect(),
        test_sensors: vec![x.to_string()],
    }
}

fn check_pool(pool: &[Scenario], label: ScenarioLabel, what: &str) -> Result<()> {
    if pool.is_empty() {
        return Err(Error::InvalidArgument(format!("{what} pool is empty")));
    }
    let mut seen = HashSet::new();
    for s in pool {
        s.validate()?;
        if s.label != label {
            return Err(Error::InvalidArgument(format!(
                "{what} scenario '{}' is labelled {:?}, expected {:?}",
                s.id, s.label, label
            )));
        }
        if !seen.insert(s.id.as_str()) {
            return Err(Error::DuplicateId {
                kind: "scenario",
                id: s.id.clone(),
            });
        }
    }
    Ok(())
}

fn same_ids(a: &[Scenario], b: &[Scenario]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.id == y.id)
}

/// One CSV row: one sensor of one test scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub scenario: String,
    pub sensor: String,
    pub e0: f64,
    pub e: f64,
    pub delta_e: f64,
    pub setup: Setup,
    pub method: Method,
}

pub fn write_rows<W: Write>(writer: W, rows: &[ErrorRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(reader: R) -> Result<Vec<ErrorRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let rows = r.deserialize().collect::<std::result::Result<Vec<ErrorRow>, _>>()?;
    Ok(rows)
}

/// Completed folds and failures of one cross-validation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossvalReport {
    pub setup: Setup,
    pub method: Method,
    pub folds: Vec<FoldResult>,
    pub failures: Vec<FoldFailure>,
    /// Mean of all Δe entries over completed folds, m.
    pub mean_delta_e: Option<f64>,
}

impl CrossvalReport {
    pub fn new(setup: Setup, method: Method, outcomes: Vec<FoldOutcome>) -> Self {
        let mut folds = Vec::new();
        let mut failures = Vec::new();
        for o in outcomes {
            match o {
                Ok(f) => folds.push(f),
                Err(f) => failures.push(f),
            }
        }
        let all: Vec<f64> = folds.iter().flat_map(|f| f.delta_e.iter().copied()).collect();
        let mean_delta_e = (!all.is_empty()).then(|| all.iter().sum::<f64>() / all.len() as f64);
        CrossvalReport {
            setup,
            method,
            folds,
            failures,
            mean_delta_e,
        }
    }

    pub fn rows(&self) -> Vec<ErrorRow> {
        self.folds.iter().flat_map(FoldResult::rows).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZEntry {
    pub scenario: String,
    pub sensor: String,
    pub e_dh: f64,
    pub e_hh: f64,
    pub z: f64,
}

/// z vector of one test scenario over the m sensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioZ {
    pub scenario: String,
    pub z: Vec<f64>,
}

/// Comparison of daily-usage against hydrant-trial calibration; z = e_DH − e_HH.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZReport {
    pub method: Option<Method>,
    pub k: usize,
    pub m: usize,
    pub entries: Vec<ZEntry>,
    pub per_scenario: Vec<ScenarioZ>,
    pub mean: f64,
    /// Sample standard deviation of the entries.
    pub sd: f64,
    /// Normality gate and the location test it selected.
    pub gate: Option<GatedTest>,
    pub wilcoxon: Option<WilcoxonResult>,
    /// Why a test was not run.
    pub notes: Vec<String>,
}

/// z report from per-fold results of a DH run and an HH run.
pub fn z_vectors(dh: &[FoldResult], hh: &[FoldResult]) -> Result<ZReport> {
    let dh_rows: Vec<ErrorRow> = dh.iter().flat_map(FoldResult::rows).collect();
    let hh_rows: Vec<ErrorRow> = hh.iter().flat_map(FoldResult::rows).collect();
    z_from_rows(&dh_rows, &hh_rows)
}

/// z report from error rows matched by (scenario, sensor); entries follow the HH order.
pub fn z_from_rows(dh: &[ErrorRow], hh: &[ErrorRow]) -> Result<ZReport> {
    if hh.is_empty() {
        return Err(Error::InvalidArgument("no HH error rows".into()));
    }
    let mut dh_map: HashMap<(&str, &str), f64> = HashMap::new();
    for r in dh {
        if dh_map.insert((&r.scenario, &r.sensor), r.e).is_some() {
            return Err(mismatch(format!("DH rows repeat ({}, {})", r.scenario, r.sensor)));
        }
    }
    if dh_map.len() != hh.len() {
        return Err(mismatch(format!("{} DH entries against {} HH entries", dh_map.len(), hh.len())));
    }
    let mut entries = Vec::with_capacity(hh.len());
    let mut per_scenario: Vec<ScenarioZ> = Vec::new();
    let mut seen = HashSet::new();
    for r in hh {
        if !seen.insert((r.scenario.as_str(), r.sensor.as_str())) {
            return Err(mismatch(format!("HH rows repeat ({}, {})", r.scenario, r.sensor)));
        }
        let e_dh = *dh_map
            .get(&(r.scenario.as_str(), r.sensor.as_str()))
            .ok_or_else(|| mismatch(format!("no DH entry for ({}, {})", r.scenario, r.sensor)))?;
        let z = e_dh - r.e;
        match per_scenario.iter_mut().find(|s| s.scenario == r.scenario) {
            Some(s) => s.z.push(z),
            None => per_scenario.push(ScenarioZ {
                scenario: r.scenario.clone(),
                z: vec![z],
            }),
        }
        entries.push(ZEntry {
            scenario: r.scenario.clone(),
            sensor: r.sensor.clone(),
            e_dh,
            e_hh: r.e,
            z,
        });
    }
    let m = per_scenario[0].z.len();
    if per_scenario.iter().any(|s| s.z.len() != m) {
        return Err(mismatch("test scenarios cover different sensor counts".into()));
    }
    let methods: HashSet<Method> = dh.iter().chain(hh).map(|r| r.method).collect();
    let method = (methods.len() == 1).then(|| *methods.iter().next().expect("one method"));
    let z: Vec<f64> = entries.iter().map(|e| e.z).collect();
    let (mean, sd) = mean_sd(&z);
    let mut notes = Vec::new();
    let gate = gated_location_test(&z, GATE_ALPHA)
        .map_err(|e| notes.push(format!("gated test not run: {e}")))
        .ok();
    let wilcoxon = wilcoxon_signed_rank(&z)
        .map_err(|e| notes.push(format!("Wilcoxon test not run: {e}")))
        .ok();
    Ok(ZReport {
        method,
        k: per_scenario.len(),
        m,
        entries,
        per_scenario,
        mean,
        sd,
        gate,
        wilcoxon,
        notes,
    })
}

fn mismatch(message: String) -> Error {
    Error::InvalidArgument(format!("mismatched fold coverage: {message}"))
}
