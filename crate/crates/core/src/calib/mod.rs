//! Roughness calibration against measured sensor pressures.
//!
//! Both methods minimize the mean over scenarios of the mean absolute error
//! between simulated and measured pressure heads. They differ in how they
//! search: [`clustering`] reduces the roughness vector to per-cluster values
//! and runs COBYLA; [`annpso`] expands sparse measurements to the whole
//! network with a surrogate and fits the full vector by particle swarm.

pub mod annpso;
pub mod clustering;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hydraulics::{HydraulicModel, SolverConfig};
use crate::network::Bounds;
use crate::scenario::Scenario;

pub use annpso::{AnnPsoConfig, AnnPsoSummary, PsoMode};
pub use clustering::{ClusteringConfig, ClusteringSummary};

/// A scenario with measured pressure heads at junction positions J.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCase {
    pub scenario: Scenario,
    pub positions: Vec<usize>,
    pub measured: Vec<f64>,
}

impl CalibrationCase {
    pub fn new(scenario: Scenario, positions: Vec<usize>, measured: Vec<f64>) -> Result<Self> {
        if positions.len() != measured.len() {
            return Err(Error::Dimension {
                what: "measured pressures",
                expected: positions.len(),
                got: measured.len(),
            });
        }
        if positions.is_empty() {
            return Err(Error::InvalidArgument("calibration case needs at least one sensor".into()));
        }
        if measured.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("measured pressures must be finite".into()));
        }
        Ok(CalibrationCase {
            scenario,
            positions,
            measured,
        })
    }
}

pub(crate) fn mae(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Mean absolute error of the simulated pressures for one case.
pub fn case_mae(model: &HydraulicModel, case: &CalibrationCase, roughness: &[f64], solver: &SolverConfig) -> Result<f64> {
    let p = model.pressures_at(&case.scenario, roughness, solver, &case.positions)?;
    Ok(mae(&p, &case.measured))
}

/// Mean over cases of [`case_mae`]. Cases are solved in parallel and summed in order.
pub fn mean_mae(model: &HydraulicModel, cases: &[CalibrationCase], roughness: &[f64], solver: &SolverConfig) -> Result<f64> {
    if cases.is_empty() {
        return Err(Error::InvalidArgument("no calibration cases".into()));
    }
    let values: Vec<Result<f64>> = cases.par_iter().map(|c| case_mae(model, c, roughness, solver)).collect();
    let mut total = 0.0;
    for v in values {
        total += v?;
    }
    Ok(total / cases.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "annpso")]
    AnnPso,
    #[serde(rename = "cobyla")]
    ClusteringCobyla,
}

impl Method {
    /// Two-letter label used in setup names.
    pub fn short(self) -> &'static str {
        match self {
            Method::AnnPso => "AP",
            Method::ClusteringCobyla => "C",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::AnnPso => "annpso",
            Method::ClusteringCobyla => "cobyla",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "annpso" | "ap" | "ann-pso" => Ok(Method::AnnPso),
            "cobyla" | "c" | "clustering-cobyla" => Ok(Method::ClusteringCobyla),
            _ => Err(Error::InvalidArgument(format!("unknown method '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodDetails {
    Cobyla(ClusteringSummary),
    Annpso(AnnPsoSummary),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub method: Method,
    pub roughness: Vec<f64>,
    /// Objective at the method's starting point.
    pub objective_initial: f64,
    pub objective_final: f64,
    pub details: MethodDetails,
}

/// Settings shared by both methods plus each method's own block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub bounds: Bounds,
    pub solver: SolverConfig,
    pub cobyla: ClusteringConfig,
    pub annpso: AnnPsoConfig,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            bounds: Bounds::default(),
            solver: SolverConfig::default(),
            cobyla: ClusteringConfig::default(),
            annpso: AnnPsoConfig::default(),
        }
    }
}

/// Anything that turns training cases into a roughness vector.
pub trait Calibrator: Sync {
    fn method(&self) -> Method;
    fn calibrate(&self, model: &HydraulicModel, r0: &[f64], cases: &[CalibrationCase]) -> Result<Calibration>;
}

/// The built-in method selected by `method` with settings from `config`.
#[derive(Debug, Clone)]
pub struct MethodCalibrator {
    pub method: Method,
    pub config: CalibrationConfig,
}

impl Calibrator for MethodCalibrator {
    fn method(&self) -> Method {
        self.method
    }

    fn calibrate(&self, model: &HydraulicModel, r0: &[f64], cases: &[CalibrationCase]) -> Result<Calibration> {
        let c = &self.config;
        match self.method {
            Method::ClusteringCobyla => clustering::cobyla_calibrate(model, cases, r0, &c.bounds, &c.cobyla, &c.solver),
            Method::AnnPso => annpso::annpso_run(model, r0, cases, &c.bounds, &c.annpso, &c.solver),
        }
    }
}

fn check_roughness(model: &HydraulicModel, r0: &[f64], bounds: &Bounds) -> Result<()> {
    if r0.len() != model.pipe_count() {
        return Err(Error::Dimension {
            what: "initial roughness",
            expected: model.pipe_count(),
            got: r0.len(),
        });
    }
    if !(bounds.low > 0.0 && bounds.low < bounds.high) {
        return Err(Error::InvalidArgument(format!("roughness bounds {bounds} must satisfy 0 < low < high")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_aliases() {
        for s in ["C", "cobyla", "Clustering-COBYLA"] {
            assert_eq!(s.parse::<Method>().unwrap(), Method::ClusteringCobyla);
        }
        for s in ["AP", "annpso", "ANN-PSO"] {
            assert_eq!(s.parse::<Method>().unwrap(), Method::AnnPso);
        }
        assert!("slsqp".parse::<Method>().is_err());
    }

    #[test]
    fn case_dimensions_checked() {
        let s = Scenario::daily("s", 300.0, vec![]);
        assert!(CalibrationCase::new(s.clone(), vec![0, 1], vec![1.0]).is_err());
        assert!(CalibrationCase::new(s.clone(), vec![], vec![]).is_err());
        assert!(CalibrationCase::new(s, vec![0], vec![f64::NAN]).is_err());
    }
}
