mod common;

use std::sync::Mutex;

use common::{chain, random_tree, scenario};
use hydrocal::calib::{
    Calibration, CalibrationCase, CalibrationConfig, Calibrator, ClusteringSummary, Method, MethodCalibrator, MethodDetails,
};
use hydrocal::evaluation::{
    lo_sensor_spec, read_rows, write_rows, z_from_rows, z_vectors, CrossvalReport, ErrorRow, Evaluator, FoldResult, FoldSpec,
    ReferenceSet, ReferenceSource, Setup,
};
use hydrocal::hydraulics::{HydraulicModel, SolverConfig};
use hydrocal::kmeans::ClusterAssignment;
use hydrocal::network::NetworkGraph;
use hydrocal::optim::cobyla::CobylaStatus;
use hydrocal::scenario::{ReferencePressures, Scenario};
use hydrocal::Result;
use proptest::prelude::*;

fn references(graph: &NetworkGraph, scenarios: &[Scenario], roughness: &[f64]) -> ReferenceSet {
    let model = HydraulicModel::new(graph).unwrap();
    let solver = SolverConfig::default();
    ReferenceSet::new(
        scenarios
            .iter()
            .map(|s| ReferencePressures {
                scenario_id: s.id.clone(),
                values: model.sensor_pressures(s, roughness, &solver).unwrap(),
            })
            .collect(),
    )
    .unwrap()
}

fn hydrants(graph: &NetworkGraph, n: usize) -> Vec<Scenario> {
    let last = graph.junctions.last().unwrap().id.clone();
    (0..n)
        .map(|i| scenario(graph, &format!("H{i}"), 1.0 + 0.1 * i as f64, Some((&last, 9.6 + 0.3 * i as f64))))
        .collect()
}

fn dailies(graph: &NetworkGraph, n: usize) -> Vec<Scenario> {
    (0..n).map(|i| scenario(graph, &format!("D{i}"), 0.6 + 0.2 * i as f64, None)).collect()
}

fn spec(sensors: &[String], test: &str) -> FoldSpec {
    FoldSpec {
        index: 0,
        setup: Setup::HH,
        method: Method::ClusteringCobyla,
        training: vec![],
        test_scenario: test.into(),
        held_out_sensor: None,
        train_sensors: sensors.to_vec(),
        test_sensors: sensors.to_vec(),
    }
}

/// Returns a fixed roughness and records the scenario ids of every call.
struct Fixed {
    roughness: Vec<f64>,
    calls: Mutex<Vec<Vec<String>>>,
    fail_on: Option<String>,
}

impl Fixed {
    fn new(roughness: Vec<f64>) -> Self {
        Fixed {
            roughness,
            calls: Mutex::new(vec![]),
            fail_on: None,
        }
    }
}

fn dummy_calibration(roughness: Vec<f64>) -> Calibration {
    Calibration {
        method: Method::ClusteringCobyla,
        roughness,
        objective_initial: 1.0,
        objective_final: 0.5,
        details: MethodDetails::Cobyla(ClusteringSummary {
            clusters: ClusterAssignment {
                assignment: vec![],
                k: 0,
                centroids: vec![],
                inertia: 0.0,
                iterations: 0,
            },
            reduced: vec![],
            evaluations: 0,
            failed_evaluations: 0,
            status: CobylaStatus::Converged,
        }),
    }
}

impl Calibrator for Fixed {
    fn method(&self) -> Method {
        Method::ClusteringCobyla
    }

    fn calibrate(&self, _model: &HydraulicModel, _r0: &[f64], cases: &[CalibrationCase]) -> Result<Calibration> {
        let ids: Vec<String> = cases.iter().map(|c| c.scenario.id.clone()).collect();
        self.calls.lock().unwrap().push(ids.clone());
        if let Some(bad) = &self.fail_on {
            if ids.contains(bad) {
                return Err(hydrocal::Error::Optimizer("forced failure".into()));
            }
        }
        Ok(dummy_calibration(self.roughness.clone()))
    }
}

#[test]
fn unchanged_roughness_gives_zero_change() {
    let g = chain(4, 2.0);
    let pool = hydrants(&g, 1);
    let r0 = vec![1.0; 4];
    let refs = references(&g, &pool, &[2.0, 0.5, 1.5, 3.0]);
    let ev = Evaluator::new(&g, r0.clone(), SolverConfig::default()).unwrap();
    let res = ev.test_stage(&pool[0], &refs.reference("H0").unwrap(), &r0, spec(ev.sensors(), "H0")).unwrap();
    assert!(res.delta_e.iter().all(|&d| d == 0.0));
    assert!(res.e0.iter().any(|&e| e > 1e-3));
}

#[test]
fn perfect_calibration_removes_error() {
    let g = chain(4, 2.0);
    let pool = hydrants(&g, 1);
    let truth = [2.0, 0.5, 1.5, 3.0];
    let refs = references(&g, &pool, &truth);
    let ev = Evaluator::new(&g, vec![1.0; 4], SolverConfig::default()).unwrap();
    let res = ev.test_stage(&pool[0], &refs.reference("H0").unwrap(), &truth, spec(ev.sensors(), "H0")).unwrap();
    assert!(res.e.iter().all(|&e| e == 0.0));
    for (d, e0) in res.delta_e.iter().zip(&res.e0) {
        assert_eq!(*d, -e0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn delta_e_matches_stored_pressures(
        truth in prop::collection::vec(0.05f64..5.0, 4),
        fitted in prop::collection::vec(0.05f64..5.0, 4),
        noise in prop::collection::vec(-0.05f64..0.05, 4),
    ) {
        let g = chain(4, 2.0);
        let pool = hydrants(&g, 1);
        let mut refs = references(&g, &pool, &truth).reference("H0").unwrap();
        for (v, n) in refs.values.iter_mut().zip(&noise) {
            *v += n;
        }
        let ev = Evaluator::new(&g, vec![1.0; 4], SolverConfig::default()).unwrap();
        let res = ev.test_stage(&pool[0], &refs, &fitted, spec(ev.sensors(), "H0")).unwrap();
        for i in 0..4 {
            let e0 = (res.p0[i] - res.measured[i]).abs();
            let e = (res.p[i] - res.measured[i]).abs();
            prop_assert_eq!(res.e0[i], e0);
            prop_assert_eq!(res.e[i], e);
            prop_assert_eq!(res.delta_e[i], e - e0);
            prop_assert_eq!(res.measured[i], refs.values[i]);
        }
    }
}

#[test]
fn same_pool_leaves_one_out() {
    let g = chain(4, 2.0);
    let pool = hydrants(&g, 4);
    let refs = references(&g, &pool, &[2.0; 4]);
    let ev = Evaluator::new(&g, vec![1.0; 4], SolverConfig::default()).unwrap();
    let cal = Fixed::new(vec![1.5; 4]);
    let out = ev.loso_run(Setup::HH, &pool, &pool, &refs, &cal).unwrap();
    assert_eq!(out.len(), 4);
    for (k, o) in out.iter().enumerate() {
        let f = o.as_ref().unwrap();
        assert_eq!(f.spec.index, k);
        assert_eq!(f.spec.test_scenario, format!("H{k}"));
        assert_eq!(f.spec.training.len(), 3);
        assert!(!f.spec.training.contains(&f.spec.test_scenario));
        assert_eq!(f.spec.test_sensors, g.sensor_nodes);
        assert_eq!(f.spec.train_sensors, g.sensor_nodes);
        assert_eq!(f.delta_e.len(), 4);
    }
    assert_eq!(cal.calls.lock().unwrap().len(), 4);
}

#[test]
fn cross_pool_trains_once_on_full_pool() {
    let g = chain(4, 2.0);
    let h = hydrants(&g, 4);
    let d = dailies(&g, 4);
    let all: Vec<Scenario> = h.iter().chain(&d).cloned().collect();
    let refs = references(&g, &all, &[2.0; 4]);
    let ev = Evaluator::new(&g, vec![1.0; 4], SolverConfig::default()).unwrap();
    let cal = Fixed::new(vec![1.5; 4]);
    let out = ev.loso_run(Setup::DH, &d, &h, &refs, &cal).unwrap();
    assert_eq!(out.len(), 4);
    for o in &out {
        let f = o.as_ref().unwrap();
        assert_eq!(f.spec.training, vec!["D0", "D1", "D2", "D3"]);
        assert_eq!(f.spec.setup, Setup::DH);
    }
    assert_eq!(*cal.calls.lock().unwrap(), vec![vec!["D0", "D1", "D2", "D3"]]);
    // Pools must carry the labels the setup names.
    assert!(ev.loso_run(Setup::DH, &h, &d, &refs, &cal).is_err());
    assert!(ev.loso_run(Setup::HH, &d, &d, &refs, &cal).is_err());
}

#[test]
fn failing_fold_does_not_abort_others() {
    let g = chain(4, 2.0);
    let pool = hydrants(&g, 4);
    let refs = references(&g, &pool, &[2.0; 4]);
    let ev = Evaluator::new(&g, vec![1.0; 4], SolverConfig::default()).unwrap();
    let mut cal = Fixed::new(vec![1.5; 4]);
    // H2 is in the training set of every fold except the one testing it.
    cal.fail_on = Some("H2".into());
    let out = ev.loso_run(Setup::HH, &pool, &pool, &refs, &cal).unwrap();
    let ok: Vec<usize> = out.iter().filter_map(|o| o.as_ref().ok().map(|f| f.spec.index)).collect();
    assert_eq!(ok, vec![2]);
    let report = CrossvalReport::new(Setup::HH, Method::ClusteringCobyla, out);
    assert_eq!(report.failures.len(), 3);
    assert!(report.failures.iter().all(|f| f.message.contains("forced failure")));
}

#[test]
fn identical_daily_scenarios_from_r0_give_zero_change() {
    let g = random_tree(12, 5, 3);
    let r0 = vec![1.0; g.pipe_count()];
    let pool = vec![scenario(&g, "D0", 1.0, None), scenario(&g, "D1", 1.0, None)];
    let refs = references(&g, &pool, &r0);
    let ev = Evaluator::new(&g, r0, SolverConfig::default()).unwrap();
    let mut config = CalibrationConfig::default();
    config.cobyla.clusters = 3;
    let cal = MethodCalibrator {
        method: Method::ClusteringCobyla,
        config,
    };
    let out = ev.loso_run(Setup::DD, &pool, &[], &refs, &cal).unwrap();
    assert_eq!(out.len(), 2);
    for o in out {
        let f = o.unwrap();
        assert!(f.delta_e.iter().all(|&d| d == 0.0), "{:?}", f.delta_e);
    }
}

#[test]
fn leave_one_sensor_out_on_two_sensors() {
    let g = chain(2, 2.0);
    let s = hydrants(&g, 1).remove(0);
    let refs = references(&g, std::slice::from_ref(&s), &[2.0, 2.0]);
    let ev = Evaluator::new(&g, vec![1.0; 2], SolverConfig::default()).unwrap();
    let cal = Fixed::new(vec![1.5; 2]);
    let out = ev.lo_sensor_run(&s, &refs, &cal).unwrap();
    assert_eq!(out.len(), 2);
    for (o, x) in out.iter().zip(&g.sensor_nodes) {
        let f = o.as_ref().unwrap();
        assert_eq!(f.delta_e.len(), 1);
        assert_eq!(f.spec.held_out_sensor.as_ref(), Some(x));
        assert!(!f.spec.train_sensors.contains(x));
    }
}

#[test]
fn held_out_sensor_improves_when_truth_is_recoverable() {
    let g = chain(3, 2.0);
    let truth = vec![2.5; 3];
    let s = hydrants(&g, 1).remove(0);
    let refs = references(&g, std::slice::from_ref(&s), &truth);
    let ev = Evaluator::new(&g, vec![1.0; 3], SolverConfig::default()).unwrap();
    let mut config = CalibrationConfig::default();
    config.cobyla.clusters = 1;
    let cal = MethodCalibrator {
        method: Method::ClusteringCobyla,
        config,
    };
    for o in ev.lo_sensor_run(&s, &refs, &cal).unwrap() {
        let f = o.unwrap();
        assert!(f.delta_e[0] < 0.0, "{:?}", f.delta_e);
    }
}

#[test]
fn sensor_three_is_excluded_from_training() {
    let sensors: Vec<String> = (1..=6).map(|i| format!("J{i}")).collect();
    let s = lo_sensor_spec(2, Setup::HH, Method::AnnPso, "H0", &sensors, "J3");
    assert_eq!(s.train_sensors.len(), 5);
    assert!(!s.train_sensors.contains(&"J3".to_string()));
}

/// Records which scenario references were read, in order.
struct Tracking {
    inner: ReferenceSet,
    log: Mutex<Vec<String>>,
}

impl ReferenceSource for Tracking {
    fn reference(&self, scenario_id: &str) -> Result<ReferencePressures> {
        self.log.lock().unwrap().push(scenario_id.to_string());
        self.inner.reference(scenario_id)
    }
}

/// Checks at every calibration that the reads since the previous test read
/// are exactly the training scenarios.
struct Isolation<'a> {
    refs: &'a Tracking,
    seen: Mutex<usize>,
}

impl Calibrator for Isolation<'_> {
    fn method(&self) -> Method {
        Method::ClusteringCobyla
    }

    fn calibrate(&self, model: &HydraulicModel, _r0: &[f64], cases: &[CalibrationCase]) -> Result<Calibration> {
        let log = self.refs.log.lock().unwrap();
        let mut seen = self.seen.lock().unwrap();
        let window: Vec<String> = log[*seen..].to_vec();
        let ids: Vec<String> = cases.iter().map(|c| c.scenario.id.clone()).collect();
        assert_eq!(window, ids, "training stage read references outside its training set");
        // The next calibration starts after this fold's single test read.
        *seen = log.len() + 1;
        Ok(dummy_calibration(vec![1.5; model.pipe_count()]))
    }
}

#[test]
fn test_references_are_not_read_during_training() {
    let g = chain(4, 2.0);
    let pool = hydrants(&g, 4);
    let tracking = Tracking {
        inner: references(&g, &pool, &[2.0; 4]),
        log: Mutex::new(vec![]),
    };
    let ev = Evaluator::new(&g, vec![1.0; 4], SolverConfig::default()).unwrap();
    let cal = Isolation {
        refs: &tracking,
        seen: Mutex::new(0),
    };
    let pool_runner = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let out = pool_runner.install(|| ev.loso_run(Setup::HH, &pool, &pool, &tracking, &cal).unwrap());
    assert!(out.iter().all(|o| o.is_ok()));
    let log = tracking.log.lock().unwrap();
    // Three training reads then one test read per fold.
    assert_eq!(log.len(), 16);
    for k in 0..4 {
        let fold = &log[4 * k..4 * k + 4];
        assert_eq!(fold[3], format!("H{k}"));
        assert!(!fold[..3].contains(&fold[3]));
    }
}

#[test]
fn runs_are_deterministic() {
    let g = random_tree(10, 4, 8);
    let r0 = vec![1.0; g.pipe_count()];
    let truth: Vec<f64> = (0..g.pipe_count()).map(|i| 0.5 + 0.3 * (i % 5) as f64).collect();
    let last = g.junctions[6].id.clone();
    let pool: Vec<Scenario> = (0..3)
        .map(|i| scenario(&g, &format!("H{i}"), 1.0 + 0.2 * i as f64, Some((&last, 10.0))))
        .collect();
    let refs = references(&g, &pool, &truth);
    let ev = Evaluator::new(&g, r0, SolverConfig::default()).unwrap();
    let mut config = CalibrationConfig::default();
    config.cobyla.clusters = 3;
    config.cobyla.cobyla.maxfun = 60;
    let cal = MethodCalibrator {
        method: Method::ClusteringCobyla,
        config,
    };
    let a = ev.loso_run(Setup::HH, &pool, &pool, &refs, &cal).unwrap();
    let b = ev.loso_run(Setup::HH, &pool, &pool, &refs, &cal).unwrap();
    assert_eq!(a, b);
}

fn folds_from(errors: &[Vec<f64>]) -> Vec<FoldResult> {
    errors
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let sensors: Vec<String> = (0..e.len()).map(|i| format!("S{i}")).collect();
            let mut s = spec(&sensors, &format!("H{k}"));
            s.index = k;
            FoldResult {
                spec: s,
                measured: vec![0.0; e.len()],
                p0: vec![0.0; e.len()],
                p: e.clone(),
                e0: vec![0.0; e.len()],
                e: e.clone(),
                delta_e: e.clone(),
                roughness: vec![],
                objective_initial: None,
                objective_final: None,
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn identical_runs_give_zero_report(errors in prop::collection::vec(prop::collection::vec(0.0f64..0.1, 3), 1..5)) {
        let folds = folds_from(&errors);
        let r = z_vectors(&folds, &folds).unwrap();
        prop_assert!(r.entries.iter().all(|e| e.z == 0.0));
        prop_assert_eq!(r.mean, 0.0);
        prop_assert_eq!(r.sd, 0.0);
        prop_assert_eq!(r.k, errors.len());
        prop_assert_eq!(r.m, 3);
    }

    #[test]
    fn mean_z_is_brute_force_mean(
        dh in prop::collection::vec(prop::collection::vec(0.0f64..0.1, 4), 4),
        hh in prop::collection::vec(prop::collection::vec(0.0f64..0.1, 4), 4),
    ) {
        let r = z_vectors(&folds_from(&dh), &folds_from(&hh)).unwrap();
        let mut sum = 0.0;
        for (a, b) in dh.iter().zip(&hh) {
            for (x, y) in a.iter().zip(b) {
                sum += x - y;
            }
        }
        prop_assert!((r.mean - sum / 16.0).abs() < 1e-15);
        prop_assert_eq!(r.entries.len(), 16);
        for (i, s) in r.per_scenario.iter().enumerate() {
            for (j, z) in s.z.iter().enumerate() {
                prop_assert_eq!(*z, dh[i][j] - hh[i][j]);
            }
        }
    }
}

#[test]
fn z_report_tests_all_positive_entries() {
    let dh = folds_from(&vec![vec![0.02, 0.03, 0.025]; 4]);
    let hh = folds_from(&vec![vec![0.005, 0.004, 0.006]; 4]);
    let r = z_vectors(&dh, &hh).unwrap();
    assert!(r.mean > 0.0);
    let w = r.wilcoxon.unwrap();
    assert_eq!(w.n, 12);
    // All 12 entries positive: exact two-sided p is 2 / 2^12.
    assert!((w.p_value - 2.0 / 4096.0).abs() < 1e-15);
    assert!(r.gate.is_some());
}

#[test]
fn csv_round_trip_and_z_from_rows() {
    let folds = folds_from(&[vec![0.01, 0.02], vec![0.03, 0.04]]);
    let rows: Vec<ErrorRow> = folds.iter().flat_map(FoldResult::rows).collect();
    let mut buf = Vec::new();
    write_rows(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("scenario,sensor,e0,e,delta_e,setup,method\n"));
    let back = read_rows(buf.as_slice()).unwrap();
    assert_eq!(back, rows);
    let z = z_from_rows(&back, &rows).unwrap();
    assert!(z.entries.iter().all(|e| e.z == 0.0));
}
