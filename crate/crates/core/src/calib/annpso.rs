//! ANN-PSO: a surrogate per scenario maps sensor pressures to pressures at
//! every output node, then particle swarm fits the full roughness vector to
//! those estimates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_roughness, mae, mean_mae, Calibration, CalibrationCase, Method, MethodDetails};
use crate::error::{Error, Result};
use crate::hydraulics::{HydraulicModel, SolverConfig};
use crate::mlp::{train_surrogate, SurrogateNet, TrainConfig};
use crate::network::Bounds;
use crate::optim::pso::{self, PsoParams, PsoResult};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsoMode {
    /// One swarm over all scenarios.
    Before,
    /// One swarm per scenario; the result that best fits all measurements wins.
    After,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnPsoConfig {
    pub training_size: usize,
    pub train: TrainConfig,
    pub pso: PsoParams,
    pub mode: PsoMode,
    /// Junction positions estimated by the surrogate; `None` means every junction.
    pub outputs: Option<Vec<usize>>,
    /// Failed solves tolerated while building one training set.
    pub retry_budget: usize,
    pub seed: u64,
}

impl Default for AnnPsoConfig {
    fn default() -> Self {
        AnnPsoConfig {
            training_size: 100,
            train: TrainConfig::default(),
            pso: PsoParams::default(),
            mode: PsoMode::Before,
            outputs: None,
            retry_budget: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    /// Pressure heads at the input positions J.
    pub input: Vec<f64>,
    /// Pressure heads at the output positions O.
    pub target: Vec<f64>,
    pub roughness: Vec<f64>,
    /// Perturbed demands over the scenario's demand nodes (m³/h).
    pub demands: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFit {
    pub scenario_id: String,
    pub roughness: Vec<f64>,
    /// Mean MAE against measured pressures over all training scenarios.
    pub measured_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnPsoSummary {
    pub mode: PsoMode,
    pub learning_rates: Vec<f64>,
    pub validation_mse: Vec<f64>,
    /// Global-best history of the swarm that produced the result.
    pub history: Vec<f64>,
    pub per_scenario: Vec<ScenarioFit>,
    pub evaluations: usize,
    pub failed_evaluations: usize,
}

fn draw_sample(scenario: &Scenario, range: &Bounds, pipes: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Scenario) {
    let roughness: Vec<f64> = (0..pipes).map(|_| rng.random_range(range.low..=range.high)).collect();
    let total = scenario.metered_total();
    let weights: Vec<f64> = scenario.demands.iter().map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let sum: f64 = weights.iter().sum();
    let mut s = scenario.clone();
    s.demands = if total > 0.0 && sum > 0.0 {
        weights.iter().map(|w| total * w / sum).collect()
    } else {
        vec![0.0; weights.len()]
    };
    (roughness, s)
}

/// `size` solver-generated samples with uniformly drawn roughness and demands
/// reallocated by a flat Dirichlet draw that keeps the scenario's total.
#[allow(clippy::too_many_arguments)]
pub fn gen_training_set(
    model: &HydraulicModel,
    scenario: &Scenario,
    inputs: &[usize],
    outputs: &[usize],
    range: &Bounds,
    size: usize,
    retry_budget: usize,
    seed: u64,
    solver: &SolverConfig,
) -> Result<Vec<TrainingSample>> {
    if size == 0 {
        return Err(Error::InvalidArgument("training set size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(size);
    let mut failed = 0usize;
    while samples.len() < size {
        let batch: Vec<(Vec<f64>, Scenario)> = (samples.len()..size)
            .map(|_| draw_sample(scenario, range, model.pipe_count(), &mut rng))
            .collect();
        let solved: Vec<Result<_>> = batch.par_iter().map(|(r, s)| model.converged(s, r, solver)).collect();
        for ((roughness, s), st) in batch.into_iter().zip(solved) {
            match st {
                Ok(st) => samples.push(TrainingSample {
                    input: inputs.iter().map(|&j| st.pressure_head[j]).collect(),
                    target: outputs.iter().map(|&j| st.pressure_head[j]).collect(),
                    roughness,
                    demands: s.demands,
                }),
                Err(Error::NotConverged { .. }) => {
                    failed += 1;
                    if failed > retry_budget {
                        return Err(Error::RetryBudget { attempts: failed });
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(samples)
}

/// Surrogate estimate at `outputs`, with measured values substituted at every
/// output position that is also an input position.
pub fn infer_full_pressure(net: &SurrogateNet, inputs: &[usize], measured: &[f64], outputs: &[usize]) -> Result<Vec<f64>> {
    if inputs.len() != measured.len() || net.input.mean.len() != measured.len() {
        return Err(Error::Dimension {
            what: "surrogate input",
            expected: net.input.mean.len(),
            got: measured.len(),
        });
    }
    if net.output.mean.len() != outputs.len() {
        return Err(Error::Dimension {
            what: "surrogate output",
            expected: net.output.mean.len(),
            got: outputs.len(),
        });
    }
    let mut p = net.predict(measured);
    for (k, o) in outputs.iter().enumerate() {
        if let Some(i) = inputs.iter().position(|j| j == o) {
            p[k] = measured[i];
        }
    }
    Ok(p)
}

/// Minimize the mean over scenarios of the MAE at `outputs` against `targets`.
#[allow(clippy::too_many_arguments)]
pub fn pso_calibrate(
    model: &HydraulicModel,
    targets: &[Vec<f64>],
    outputs: &[usize],
    scenarios: &[Scenario],
    r0: &[f64],
    bounds: &Bounds,
    params: &PsoParams,
    solver: &SolverConfig,
) -> Result<PsoResult> {
    check_roughness(model, r0, bounds)?;
    if targets.len() != scenarios.len() || scenarios.is_empty() {
        return Err(Error::Dimension {
            what: "PSO targets",
            expected: scenarios.len(),
            got: targets.len(),
        });
    }
    if targets.iter().any(|t| t.len() != outputs.len()) {
        return Err(Error::InvalidArgument("every target must cover the output positions".into()));
    }
    let objective = |r: &[f64]| -> Option<f64> {
        let mut total = 0.0;
        for (s, t) in scenarios.iter().zip(targets) {
            let p = model.pressures_at(s, r, solver, outputs).ok()?;
            total += mae(&p, t);
        }
        Some(total / scenarios.len() as f64)
    };
    let seed: Vec<f64> = r0.iter().map(|v| v.clamp(bounds.low, bounds.high)).collect();
    let box_bounds = vec![(bounds.low, bounds.high); model.pipe_count()];
    pso::minimize(objective, &box_bounds, Some(&seed), params)
}

fn target_mae(model: &HydraulicModel, targets: &[Vec<f64>], outputs: &[usize], scenarios: &[Scenario], r: &[f64], solver: &SolverConfig) -> Result<f64> {
    let mut total = 0.0;
    for (s, t) in scenarios.iter().zip(targets) {
        total += mae(&model.pressures_at(s, r, solver, outputs)?, t);
    }
    Ok(total / scenarios.len() as f64)
}

/// Training, inference and swarm stages chained for the given cases.
pub fn annpso_run(
    model: &HydraulicModel,
    r0: &[f64],
    cases: &[CalibrationCase],
    bounds: &Bounds,
    config: &AnnPsoConfig,
    solver: &SolverConfig,
) -> Result<Calibration> {
    check_roughness(model, r0, bounds)?;
    if cases.is_empty() {
        return Err(Error::InvalidArgument("no calibration cases".into()));
    }
    let outputs: Vec<usize> = config.outputs.clone().unwrap_or_else(|| (0..model.junction_count()).collect());
    if outputs.iter().any(|&o| o >= model.junction_count()) {
        return Err(Error::InvalidArgument("output position outside the junction range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let seeds: Vec<(u64, u64)> = cases.iter().map(|_| (rng.random(), rng.random())).collect();

    let nets: Vec<Result<SurrogateNet>> = cases
        .par_iter()
        .zip(&seeds)
        .map(|(case, &(data_seed, train_seed))| {
            let samples = gen_training_set(
                model,
                &case.scenario,
                &case.positions,
                &outputs,
                bounds,
                config.training_size,
                config.retry_budget,
                data_seed,
                solver,
            )?;
            let xs: Vec<Vec<f64>> = samples.iter().map(|s| s.input.clone()).collect();
            let ys: Vec<Vec<f64>> = samples.into_iter().map(|s| s.target).collect();
            let train = TrainConfig {
                seed: train_seed,
                ..config.train.clone()
            };
            train_surrogate(&xs, &ys, &train)
        })
        .collect();
    let nets: Vec<SurrogateNet> = nets.into_iter().collect::<Result<_>>().map_err(|e| e.in_stage("ANN training"))?;

    let targets: Vec<Vec<f64>> = cases
        .iter()
        .zip(&nets)
        .map(|(c, net)| infer_full_pressure(net, &c.positions, &c.measured, &outputs))
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("ANN inference"))?;
    let scenarios: Vec<Scenario> = cases.iter().map(|c| c.scenario.clone()).collect();

    let summary_base = AnnPsoSummary {
        mode: config.mode,
        learning_rates: nets.iter().map(|n| n.learning_rate).collect(),
        validation_mse: nets.iter().map(|n| n.validation_mse).collect(),
        history: Vec::new(),
        per_scenario: Vec::new(),
        evaluations: 0,
        failed_evaluations: 0,
    };
    let pso_stage = |e: Error| e.in_stage("PSO");
    let objective_initial = target_mae(model, &targets, &outputs, &scenarios, r0, solver).map_err(pso_stage)?;

    let (roughness, summary) = match config.mode {
        PsoMode::Before => {
            let r = pso_calibrate(model, &targets, &outputs, &scenarios, r0, bounds, &config.pso, solver).map_err(pso_stage)?;
            let summary = AnnPsoSummary {
                history: r.history,
                evaluations: r.evaluations,
                failed_evaluations: r.failures,
                ..summary_base
            };
            (r.best, summary)
        }
        PsoMode::After => {
            let mut fits = Vec::with_capacity(cases.len());
            let mut runs = Vec::with_capacity(cases.len());
            for i in 0..cases.len() {
                let r = pso_calibrate(
                    model,
                    &targets[i..=i],
                    &outputs,
                    &scenarios[i..=i],
                    r0,
                    bounds,
                    &config.pso,
                    solver,
                )
                .map_err(pso_stage)?;
                let measured_mae = mean_mae(model, cases, &r.best, solver).map_err(pso_stage)?;
                fits.push(ScenarioFit {
                    scenario_id: cases[i].scenario.id.clone(),
                    roughness: r.best.clone(),
                    measured_mae,
                });
                runs.push(r);
            }
            let best = (0..fits.len())
                .min_by(|&a, &b| fits[a].measured_mae.total_cmp(&fits[b].measured_mae))
                .expect("at least one case");
            let run = runs.swap_remove(best);
            let summary = AnnPsoSummary {
                history: run.history,
                evaluations: fits.len() * run.evaluations,
                failed_evaluations: run.failures,
                per_scenario: fits,
                ..summary_base
            };
            (run.best, summary)
        }
    };
    let objective_final = target_mae(model, &targets, &outputs, &scenarios, &roughness, solver).map_err(pso_stage)?;
    Ok(Calibration {
        method: Method::AnnPso,
        roughness,
        objective_initial,
        objective_final,
        details: MethodDetails::Annpso(summary),
    })
}
