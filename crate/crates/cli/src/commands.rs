//! Subcommand arguments and implementations.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use hydrocal::bundle::{derive_seed, synth_bundle, BundleConfig};
use hydrocal::calib::{CalibrationCase, CalibrationConfig, Calibrator, Method, MethodCalibrator, MethodDetails, PsoMode};
use hydrocal::dataprep::{build_scenario, parse_timestamp, read_hourly_demands, read_traces, hour_start, ScenarioInput, TrialInput, TrialMeta, WindowParams};
use hydrocal::evaluation::{read_rows, write_rows, z_from_rows, CrossvalReport, Evaluator, ReferenceSet, ReferenceSource, Setup};
use hydrocal::hydraulics::HydraulicModel;
use serde::{Deserialize, Serialize};

use crate::files::{self, read_bundle, read_json, read_toml, write_bundle, write_csv, write_json};
use crate::CliError;

/// What a finished command reports back for its manifest.
#[derive(Debug, Clone, Default)]
pub struct Run {
    pub inputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub config: Option<serde_json::Value>,
    pub code: u8,
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value, CliError> {
    serde_json::to_value(v).map_err(CliError::internal)
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ParseArgs {
    /// INP file to read.
    pub input: PathBuf,
    /// Output directory; `HYDROCAL_OUT_DIR` takes precedence.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct NetworkDocument<'a> {
    network: &'a hydrocal::network::NetworkGraph,
    warnings: Vec<String>,
    diagnostics: &'a [hydrocal::network::Diagnostic],
}

/// Exit code 0 only when the network has no diagnostics.
pub fn parse(a: &ParseArgs) -> Result<Run, CliError> {
    let parsed = hydrocal::network::parse_inp(&files::read_text(&a.input)?)?;
    let warnings: Vec<String> = parsed
        .warnings
        .iter()
        .map(|w| format!("line {}: [{}] {}", w.line, w.section, w.message))
        .collect();
    for d in &parsed.diagnostics {
        eprintln!("diagnostic: {d:?}");
    }
    write_json(
        &a.out.join("network.json"),
        &NetworkDocument {
            network: &parsed.graph,
            warnings,
            diagnostics: &parsed.diagnostics,
        },
    )?;
    Ok(Run {
        inputs: vec![a.input.clone()],
        code: if parsed.diagnostics.is_empty() { 0 } else { CliError::VALIDATION },
        ..Run::default()
    })
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// TOML bundle configuration; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed, overriding the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; `HYDROCAL_OUT_DIR` takes precedence.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

pub fn synth(a: &SynthArgs) -> Result<Run, CliError> {
    let mut config: BundleConfig = read_toml(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let solver = Default::default();
    let b = synth_bundle(&config, &solver)?;
    write_bundle(&a.out, &b.graph, &b.scenarios, &b.references)?;
    write_json(&a.out.join("truth.json"), &b.truth)?;
    write_json(&a.out.join("sites.json"), &b.sites)?;
    Ok(Run {
        inputs: a.config.iter().cloned().collect(),
        seed: Some(config.seed),
        config: Some(to_value(&config)?),
        code: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub network: PathBuf,
    /// Pressure traces, `timestamp,sensor_id,value`; includes the reservoir outlet.
    #[arg(long)]
    pub traces: PathBuf,
    /// Sensor id of the reservoir outlet trace.
    #[arg(long)]
    pub reservoir_sensor: String,
    /// Hourly demands, `hour,node_id,demand_m3h`.
    #[arg(long)]
    pub demands: PathBuf,
    /// JSON list of trial descriptors.
    #[arg(long)]
    pub trials: Option<PathBuf>,
    /// Hydrant discharge traces, keyed by trial id in the `sensor_id` column.
    #[arg(long)]
    pub flows: Option<PathBuf>,
    /// Hours to turn into daily-usage scenarios.
    #[arg(long = "daily", value_delimiter = ',')]
    pub daily: Vec<String>,
    /// TOML stable-window parameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; `HYDROCAL_OUT_DIR` takes precedence.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

fn open(path: &Path) -> Result<std::fs::File, CliError> {
    std::fs::File::open(path).map_err(|e| CliError::validation(anyhow::anyhow!("{}: {e}", path.display())))
}

pub fn preprocess(a: &PreprocessArgs) -> Result<Run, CliError> {
    let graph = files::read_network(&a.network)?;
    let params: WindowParams = read_toml(a.config.as_deref())?;
    let traces = read_traces(open(&a.traces)?)?;
    let demands = read_hourly_demands(open(&a.demands)?)?;
    let reservoir = traces
        .iter()
        .find(|s| s.sensor_id == a.reservoir_sensor)
        .ok_or_else(|| CliError::validation(anyhow::anyhow!("no trace for reservoir sensor '{}'", a.reservoir_sensor)))?;
    let trials: Vec<TrialMeta> = match &a.trials {
        Some(p) => read_json(p)?,
        None => Vec::new(),
    };
    let flows = match &a.flows {
        Some(p) => read_traces(open(p)?)?,
        None => Vec::new(),
    };
    if a.daily.is_empty() && trials.is_empty() {
        return Err(CliError::usage("nothing to do: pass --daily hours or --trials"));
    }
    let mut inputs = vec![a.network.clone(), a.traces.clone(), a.demands.clone()];
    inputs.extend(a.trials.iter().chain(&a.flows).chain(&a.config).cloned());

    let mut scenarios = Vec::new();
    let mut references = Vec::new();
    let input = |id: String, hour: i64, trial| ScenarioInput {
        id,
        sensor_traces: &traces,
        reservoir_trace: reservoir,
        demands: &demands,
        hour,
        trial,
    };
    for (i, text) in a.daily.iter().enumerate() {
        let hour = hour_start(parse_timestamp(text)?);
        let (s, r) = build_scenario(&graph, &input(format!("daily-{}", i + 1), hour, None), &params)?;
        scenarios.push(s);
        references.push(r);
    }
    for meta in &trials {
        let flow = flows
            .iter()
            .find(|s| s.sensor_id == meta.id)
            .ok_or_else(|| CliError::validation(anyhow::anyhow!("no discharge trace for trial '{}'", meta.id)))?;
        let input = input(meta.id.clone(), 0, Some(TrialInput { meta, flow }));
        let (s, r) = build_scenario(&graph, &input, &params)?;
        scenarios.push(s);
        references.push(r);
    }
    write_bundle(&a.out, &graph, &scenarios, &references)?;
    Ok(Run {
        inputs,
        config: Some(to_value(&params)?),
        ..Run::default()
    })
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Bundle directory.
    #[arg(long)]
    pub bundle: PathBuf,
    /// `calibration.json` whose roughness replaces the network's.
    #[arg(long)]
    pub roughness: Option<PathBuf>,
    /// Output directory; `HYDROCAL_OUT_DIR` takes precedence.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

pub fn simulate(a: &SimulateArgs) -> Result<Run, CliError> {
    let b = read_bundle(&a.bundle)?;
    let mut inputs = b.files.clone();
    let roughness = match &a.roughness {
        Some(p) => {
            inputs.push(p.clone());
            read_json::<hydrocal::calib::Calibration>(p)?.roughness
        }
        None => b.graph.roughness().into_inner(),
    };
    let model = HydraulicModel::new(&b.graph)?;
    let solver = Default::default();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scenario", "node", "pressure_head"]).map_err(CliError::internal)?;
    for s in &b.scenarios {
        let st = model.converged(s, &roughness, &solver)?;
        for (j, p) in b.graph.junctions.iter().zip(&st.pressure_head) {
            w.write_record([s.id.as_str(), j.id.as_str(), &p.to_string()]).map_err(CliError::internal)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::internal(anyhow::anyhow!("{e}")))?;
    files::write_bytes(&a.out.join("pressures.csv"), &bytes)?;
    Ok(Run {
        inputs,
        ..Run::default()
    })
}

/// Starting roughness for calibration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Initial {
    /// Roughness stored in the network file.
    #[default]
    Network,
    /// Every pipe at the middle of the bounds.
    Mid,
}

/// TOML configuration shared by `calibrate` and `crossval`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub initial: Initial,
    pub calibration: CalibrationConfig,
}

impl RunConfig {
    fn load(path: Option<&Path>, seed: u64) -> Result<Self, CliError> {
        let mut c: RunConfig = read_toml(path)?;
        let cal = &mut c.calibration;
        cal.cobyla.seed = derive_seed(seed, "kmeans");
        cal.annpso.seed = derive_seed(seed, "training-set");
        cal.annpso.train.seed = derive_seed(seed, "mlp");
        cal.annpso.pso.seed = derive_seed(seed, "pso");
        Ok(c)
    }

    fn r0(&self, graph: &hydrocal::network::NetworkGraph) -> Vec<f64> {
        match self.initial {
            Initial::Network => graph.roughness().into_inner(),
            Initial::Mid => vec![self.calibration.bounds.mid(); graph.pipe_count()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Before,
    After,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CalibrateArgs {
    /// Bundle directory.
    #[arg(long)]
    pub bundle: PathBuf,
    /// `cobyla` (clustering-COBYLA) or `annpso`.
    #[arg(long)]
    pub method: Method,
    /// ANN-PSO swarm mode; overrides the configuration.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Scenario ids to train on; all scenarios when omitted.
    #[arg(long, value_delimiter = ',')]
    pub scenarios: Vec<String>,
    /// TOML run configuration: `initial` and a `[calibration]` table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed for every random stream of the run.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; `HYDROCAL_OUT_DIR` takes precedence.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct RoughnessRow<'a> {
    pipe: &'a str,
    initial: f64,
    calibrated: f64,
}

pub fn calibrate(a: &CalibrateArgs) -> Result<Run, CliError> {
    let b = read_bundle(&a.bundle)?;
    let mut config = RunConfig::load(a.config.as_deref(), a.seed)?;
    if let Some(mode) = a.mode {
        config.calibration.annpso.mode = match mode {
            ModeArg::Before => PsoMode::Before,
            ModeArg::After => PsoMode::After,
        };
    }
    let refs = ReferenceSet::new(b.references.clone())?;
    let model = HydraulicModel::new(&b.graph)?;
    let chosen: Vec<_> = if a.scenarios.is_empty() {
        b.scenarios.clone()
    } else {
        a.scenarios
            .iter()
            .map(|id| {
                b.scenarios
                    .iter()
                    .find(|s| &s.id == id)
                    .cloned()
                    .ok_or_else(|| CliError::validation(anyhow::anyhow!("no scenario '{id}' in bundle")))
            })
            .collect::<Result<_, _>>()?
    };
    if chosen.is_empty() {
        return Err(CliError::validation(anyhow::anyhow!("bundle has no scenarios")));
    }
    let cases = chosen
        .iter()
        .map(|s| {
            let r = refs.reference(&s.id)?;
            CalibrationCase::new(s.clone(), model.sensor_positions().to_vec(), r.values)
        })
        .collect::<hydrocal::Result<Vec<_>>>()?;
    let r0 = config.r0(&b.graph);
    let calibrator = MethodCalibrator {
        method: a.method,
        config: config.calibration.clone(),
    };
    let c = calibrator.calibrate(&model, &r0, &cases)?;
    eprintln!(
        "{}: objective {:.6} -> {:.6} m (improvement {:.6} m)",
        c.method,
        c.objective_initial,
        c.objective_final,
        c.objective_initial - c.objective_final
    );
    write_json(&a.out.join("calibration.json"), &c)?;
    write_csv(&a.out.join("roughness.csv"), |buf| {
        let mut w = csv::Writer::from_writer(buf);
        for ((p, r0), r) in b.graph.pipes.iter().zip(&r0).zip(&c.roughness) {
            w.serialize(RoughnessRow {
                pipe: &p.id,
                initial: *r0,
                calibrated: *r,
            })?;
        }
        w.flush()?;
        Ok(())
    })?;
    if let MethodDetails::Annpso(s) = &c.details {
        if s.mode == PsoMode::After {
            write_csv(&a.out.join("per_scenario.csv"), |buf| {
                let mut w = csv::Writer::from_writer(buf);
                w.write_record(["scenario", "measured_mae", "selected"])?;
                for f in &s.per_scenario {
                    let selected = f.roughness == c.roughness;
                    w.write_record([f.scenario_id.clone(), f.measured_mae.to_string(), selected.to_string()])?;
                }
                w.flush()?;
                Ok(())
            })?;
        }
    }
    let mut inputs = b.files;
    inputs.extend(a.config.iter().cloned());
    Ok(Run {
        inputs,
        seed: Some(a.seed),
        config: Some(to_value(&config)?),
        code: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CrossvalArgs {
    /// Bundle directory.
    #[arg(long)]
    pub bundle: PathBuf,
    /// HH, DH, HD or DD: training pool then test pool.
    #[arg(long)]
    pub setup: Setup,
    /// `cobyla` (`C`) or `annpso` (`AP`).
    #[arg(long)]
    pub method: Method,
    /// TOML run configuration: `initial` and a `[calibration]` table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed for every random stream of the run.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; `HYDROCAL_OUT_DIR` takes precedence.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

pub fn crossval(a: &CrossvalArgs) -> Result<Run, CliError> {
    let b = read_bundle(&a.bundle)?;
    let config = RunConfig::load(a.config.as_deref(), a.seed)?;
    let refs = ReferenceSet::new(b.references.clone())?;
    let pool = |label| b.scenarios.iter().filter(|s| s.label == label).cloned().collect::<Vec<_>>();
    let train = pool(a.setup.train_label());
    let test = pool(a.setup.test_label());
    let evaluator = Evaluator::new(&b.graph, config.r0(&b.graph), config.calibration.solver.clone())?;
    let calibrator = MethodCalibrator {
        method: a.method,
        config: config.calibration.clone(),
    };
    let outcomes = evaluator.loso_run(a.setup, &train, &test, &refs, &calibrator)?;
    let report = CrossvalReport::new(a.setup, a.method, outcomes);
    for f in &report.failures {
        eprintln!("fold {} ({}) failed: {}", f.spec.index, f.spec.test_scenario, f.message);
    }
    write_json(&a.out.join("report.json"), &report)?;
    let rows = report.rows();
    write_csv(&a.out.join("errors.csv"), |buf| write_rows(buf, &rows))?;
    if report.folds.is_empty() {
        return Err(CliError::internal(anyhow::anyhow!("every fold failed")));
    }
    match report.mean_delta_e {
        Some(m) => eprintln!("{}-{}: {} folds, mean delta e {m:.6} m", a.setup, a.method.short(), report.folds.len()),
        None => eprintln!("{}-{}: no completed folds", a.setup, a.method.short()),
    }
    let mut inputs = b.files;
    inputs.extend(a.config.iter().cloned());
    Ok(Run {
        inputs,
        seed: Some(a.seed),
        config: Some(to_value(&config)?),
        code: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct StatsArgs {
    /// `errors.csv` of a DH cross-validation.
    #[arg(long)]
    pub dh: PathBuf,
    /// `errors.csv` of an HH cross-validation.
    #[arg(long)]
    pub hh: PathBuf,
    /// Output directory; `HYDROCAL_OUT_DIR` takes precedence.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

pub fn stats(a: &StatsArgs) -> Result<Run, CliError> {
    let dh = read_rows(open(&a.dh)?)?;
    let hh = read_rows(open(&a.hh)?)?;
    let report = z_from_rows(&dh, &hh)?;
    write_json(&a.out.join("zreport.json"), &report)?;
    write_csv(&a.out.join("z.csv"), |buf| {
        let mut w = csv::Writer::from_writer(buf);
        for e in &report.entries {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    })?;
    let p = report.wilcoxon.as_ref().map(|w| w.p_value);
    eprintln!(
        "z mean {:.6} m, sd {:.6} m over {} entries, Wilcoxon p {}",
        report.mean,
        report.sd,
        report.entries.len(),
        p.map_or("n/a".to_string(), |p| format!("{p:.3e}"))
    );
    Ok(Run {
        inputs: vec![a.dh.clone(), a.hh.clone()],
        ..Run::default()
    })
}
