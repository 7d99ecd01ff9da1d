//! Calibration of pipe roughness in water distribution network models from
//! sparse pressure measurements.
//!
//! The crate is organised around the calibration workflow:
//!
//! - [`network`]: graph model, INP subset reader/writer, synthetic districts;
//! - [`hydraulics`]: demand-driven steady-state solver (Darcy-Weisbach);
//! - [`dataprep`]: sensor traces to steady-state scenarios;
//! - [`scenario`]: boundary-condition snapshots and measured pressures;
//! - [`bundle`]: synthetic scenario bundles under a hidden roughness;
//! - [`calib`]: clustering-COBYLA and ANN-PSO calibration;
//! - [`optim`]: COBYLA and particle swarm optimizers;
//! - [`mlp`]: the regression network behind the surrogate;
//! - [`kmeans`]: k-means with k-means++ seeding;
//! - [`evaluation`]: leave-one-out cross-validation and z reports;
//! - [`stats`]: Wilcoxon signed-rank, Shapiro-Wilk and t tests.

pub mod bundle;
pub mod calib;
pub mod dataprep;
pub mod error;
pub mod evaluation;
pub mod hydraulics;
pub mod kmeans;
pub mod mlp;
pub mod network;
pub mod optim;
pub mod scenario;
pub mod stats;

pub use error::{Error, Result};
