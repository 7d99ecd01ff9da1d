//! Clustering-COBYLA: pipes grouped by standardized (roughness, mean absolute
//! flow) under r0, one roughness value per group fitted by COBYLA.

use std::cell::Cell;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_roughness, mean_mae, Calibration, CalibrationCase, Method, MethodDetails};
use crate::error::{Error, Result};
use crate::hydraulics::{HydraulicModel, SolverConfig};
use crate::kmeans::{kmeans, ClusterAssignment};
use crate::network::Bounds;
use crate::optim::cobyla::{self, CobylaConfig, CobylaStatus};
use crate::scenario::Scenario;

/// Objective value substituted where the hydraulic solve fails.
const FAILURE_PENALTY: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    pub clusters: usize,
    pub cobyla: CobylaConfig,
    pub seed: u64,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            clusters: 10,
            cobyla: CobylaConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringSummary {
    pub clusters: ClusterAssignment,
    pub reduced: Vec<f64>,
    pub evaluations: usize,
    pub failed_evaluations: usize,
    pub status: CobylaStatus,
}

fn standardize_column(values: &mut [f64]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    let spread = values.iter().fold(0.0f64, |m, v| m.max((v - mean).abs()));
    for v in values.iter_mut() {
        *v = if spread > 1e-12 * (1.0 + mean.abs()) { (*v - mean) / sd } else { 0.0 };
    }
}

/// Rows of (roughness, mean absolute flow over scenarios under r0), each
/// column standardized to mean 0 and population standard deviation 1.
/// Scenarios that fail to solve are skipped.
pub fn pipe_features(model: &HydraulicModel, r0: &[f64], scenarios: &[Scenario], solver: &SolverConfig) -> Result<Vec<Vec<f64>>> {
    if r0.len() != model.pipe_count() {
        return Err(Error::Dimension {
            what: "initial roughness",
            expected: model.pipe_count(),
            got: r0.len(),
        });
    }
    let states: Vec<Result<_>> = scenarios.par_iter().map(|s| model.converged(s, r0, solver)).collect();
    let mut flow = vec![0.0; model.pipe_count()];
    let mut solved = 0usize;
    let mut last_error = None;
    for st in states {
        match st {
            Ok(st) => {
                solved += 1;
                for (f, q) in flow.iter_mut().zip(&st.flow) {
                    *f += q.abs();
                }
            }
            Err(e) => last_error = Some(e),
        }
    }
    if solved == 0 {
        return Err(last_error.unwrap_or_else(|| Error::InvalidArgument("no scenarios for flow features".into())));
    }
    for f in &mut flow {
        *f /= solved as f64;
    }
    let mut rough = r0.to_vec();
    standardize_column(&mut rough);
    standardize_column(&mut flow);
    Ok(rough.into_iter().zip(flow).map(|(a, b)| vec![a, b]).collect())
}

pub fn cluster_pipes(features: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterAssignment> {
    if k > features.len() {
        return Err(Error::InvalidArgument(format!("{k} clusters for {} pipes", features.len())));
    }
    kmeans(features, k, seed)
}

/// Full-length roughness with each pipe taking its cluster's value.
pub fn expand_roughness(reduced: &[f64], assignment: &ClusterAssignment) -> Result<Vec<f64>> {
    if reduced.len() != assignment.k {
        return Err(Error::Dimension {
            what: "reduced roughness",
            expected: assignment.k,
            got: reduced.len(),
        });
    }
    Ok(assignment.assignment.iter().map(|&c| reduced[c]).collect())
}

/// Per-cluster mean of a full-length vector.
pub fn collapse_roughness(full: &[f64], assignment: &ClusterAssignment) -> Vec<f64> {
    let mut sum = vec![0.0; assignment.k];
    let mut count = vec![0usize; assignment.k];
    for (&c, v) in assignment.assignment.iter().zip(full) {
        sum[c] += v;
        count[c] += 1;
    }
    sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect()
}

/// Fit per-cluster roughness to the cases by COBYLA with the bounds as constraints.
pub fn cobyla_calibrate(
    model: &HydraulicModel,
    cases: &[CalibrationCase],
    r0: &[f64],
    bounds: &Bounds,
    config: &ClusteringConfig,
    solver: &SolverConfig,
) -> Result<Calibration> {
    check_roughness(model, r0, bounds)?;
    if cases.is_empty() {
        return Err(Error::InvalidArgument("no calibration cases".into()));
    }
    let scenarios: Vec<Scenario> = cases.iter().map(|c| c.scenario.clone()).collect();
    let features = pipe_features(model, r0, &scenarios, solver)?;
    let clusters = cluster_pipes(&features, config.clusters, config.seed)?;
    let start: Vec<f64> = collapse_roughness(r0, &clusters)
        .into_iter()
        .map(|v| v.clamp(bounds.low, bounds.high))
        .collect();

    let failures = Cell::new(0usize);
    let last_error = Cell::new(None::<String>);
    let objective = |x: &[f64]| {
        let clipped: Vec<f64> = x.iter().map(|v| v.clamp(bounds.low, bounds.high)).collect();
        let r = expand_roughness(&clipped, &clusters).expect("dimension fixed by construction");
        match mean_mae(model, cases, &r, solver) {
            Ok(v) => v,
            Err(e) => {
                failures.set(failures.get() + 1);
                last_error.set(Some(e.to_string()));
                FAILURE_PENALTY
            }
        }
    };
    let objective_initial = mean_mae(model, cases, &expand_roughness(&start, &clusters)?, solver)?;
    let box_bounds = vec![(bounds.low, bounds.high); clusters.k];
    let result = cobyla::minimize(objective, &[], &start, &box_bounds, &config.cobyla)?;
    if 2 * failures.get() > result.evaluations {
        return Err(Error::Optimizer(format!(
            "hydraulic solve failed at {} of {} probe points; last error: {}",
            failures.get(),
            result.evaluations,
            last_error.take().unwrap_or_default()
        )));
    }
    let reduced: Vec<f64> = result.x.iter().map(|v| v.clamp(bounds.low, bounds.high)).collect();
    let roughness = expand_roughness(&reduced, &clusters)?;
    let objective_final = mean_mae(model, cases, &roughness, solver)?;
    Ok(Calibration {
        method: Method::ClusteringCobyla,
        roughness,
        objective_initial,
        objective_final,
        details: MethodDetails::Cobyla(ClusteringSummary {
            clusters,
            reduced,
            evaluations: result.evaluations,
            failed_evaluations: failures.get(),
            status: result.status,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_columns_standardize_to_zero() {
        let mut v = vec![0.5; 4];
        standardize_column(&mut v);
        assert_eq!(v, vec![0.0; 4]);
        let mut w = vec![1.0, 3.0];
        standardize_column(&mut w);
        assert_eq!(w, vec![-1.0, 1.0]);
    }

    #[test]
    fn expansion_and_collapse() {
        let a = ClusterAssignment {
            assignment: vec![1, 0, 1, 2],
            k: 3,
            centroids: vec![vec![0.0]; 3],
            inertia: 0.0,
            iterations: 1,
        };
        let full = expand_roughness(&[0.1, 0.2, 0.3], &a).unwrap();
        assert_eq!(full, vec![0.2, 0.1, 0.2, 0.3]);
        assert_eq!(collapse_roughness(&full, &a), vec![0.1, 0.2, 0.3]);
        assert!(expand_roughness(&[0.1], &a).is_err());
    }
}
