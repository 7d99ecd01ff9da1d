//! Sensor traces and hourly consumption to calibration scenarios.
//!
//! A hydrant trial is reduced to one steady snapshot: the stable part of each
//! pressure trace is located with a rolling standard deviation, averaged, and
//! held constant for the hour containing the trial.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NetworkGraph;
use crate::scenario::{ReferencePressures, Scenario, ScenarioLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub sensor_id: String,
    /// Unix seconds, strictly increasing.
    pub timestamps: Vec<f64>,
    /// Pressure head (m) or flow (m³/h).
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(sensor_id: impl Into<String>, timestamps: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let sensor_id = sensor_id.into();
        if timestamps.len() != values.len() {
            return Err(Error::Dimension {
                what: "series values",
                expected: timestamps.len(),
                got: values.len(),
            });
        }
        if let Some(i) = timestamps.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(format!(
                "series '{sensor_id}': timestamps not strictly increasing at sample {}",
                i + 1
            )));
        }
        if timestamps.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("series '{sensor_id}': non-finite sample")));
        }
        Ok(TimeSeries {
            sensor_id,
            timestamps,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Intervals between consecutive samples longer than `cadence` seconds.
    pub fn gaps(&self, cadence: f64) -> Vec<(f64, f64)> {
        self.timestamps
            .windows(2)
            .filter(|w| w[1] - w[0] > cadence * 1.5)
            .map(|w| (w[0], w[1]))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialClass {
    Far,
    Close,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub id: String,
    /// Nominal discharge, m³/h.
    pub flow: f64,
    /// Nominal duration, s.
    pub duration: f64,
    /// Unix seconds at which the hydrant opens.
    pub start: f64,
    pub node: String,
    pub class: TrialClass,
}

impl TrialMeta {
    pub fn validate(&self) -> Result<()> {
        if !(self.flow > 0.0 && self.duration > 0.0 && self.start.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "trial '{}': flow and duration must be > 0",
                self.id
            )));
        }
        Ok(())
    }

    pub fn interval(&self) -> Window {
        Window {
            start: self.start,
            end: self.start + self.duration,
        }
    }
}

/// Closed time interval in unix seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }

    pub fn intersect(&self, other: &Window) -> Option<Window> {
        let w = Window {
            start: self.start.max(other.start),
            end: self.end.min(other.end),
        };
        (w.start <= w.end).then_some(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowParams {
    /// Rolling window length w_s, s.
    pub rolling: f64,
    /// Largest rolling standard deviation counted as stable, m.
    pub sigma_max: f64,
    /// Shortest acceptable stable window, s.
    pub min_length: f64,
}

impl Default for WindowParams {
    fn default() -> Self {
        WindowParams {
            rolling: 10.0,
            sigma_max: 0.02,
            min_length: 60.0,
        }
    }
}

const MIN_TRIAL_SAMPLES: usize = 30;

/// Longest run of samples inside the trial interval whose trailing rolling
/// standard deviation stays below the threshold. Each rolling window must lie
/// entirely inside the trial interval.
pub fn detect_stable_window(pressure: &TimeSeries, meta: &TrialMeta, params: &WindowParams) -> Result<Window> {
    meta.validate()?;
    let trial = meta.interval();
    let inside: Vec<usize> = (0..pressure.len()).filter(|&i| trial.contains(pressure.timestamps[i])).collect();
    if inside.len() < MIN_TRIAL_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "series '{}' has {} samples in trial '{}', need {MIN_TRIAL_SAMPLES}",
            pressure.sensor_id,
            inside.len(),
            meta.id
        )));
    }
    let t = &pressure.timestamps;
    let v = &pressure.values;
    let mut best: Option<(usize, usize)> = None;
    let mut run: Option<usize> = None;
    let mut lo = inside[0];
    for &i in &inside {
        let stable = if t[i] - params.rolling >= trial.start {
            while t[lo] < t[i] - params.rolling {
                lo += 1;
            }
            population_std(&v[lo..=i]) <= params.sigma_max
        } else {
            false
        };
        if stable {
            let s = *run.get_or_insert(i);
            if best.is_none_or(|(a, b)| t[i] - t[s] > t[b] - t[a]) {
                best = Some((s, i));
            }
        } else {
            run = None;
        }
    }
    match best {
        Some((a, b)) if t[b] - t[a] >= params.min_length => Ok(Window { start: t[a], end: t[b] }),
        _ => Err(Error::NoStableWindow { trial: meta.id.clone() }),
    }
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Order-independent mean of the values in `[start, end]` (or `[start, end)`).
fn mean_in(series: &TimeSeries, start: f64, end: f64, closed: bool) -> Result<f64> {
    let mut picked: Vec<f64> = series
        .timestamps
        .iter()
        .zip(&series.values)
        .filter(|(t, _)| **t >= start && (**t < end || (closed && **t == end)))
        .map(|(_, v)| *v)
        .collect();
    if picked.is_empty() {
        return Err(Error::EmptyWindow(series.sensor_id.clone()));
    }
    picked.sort_by(f64::total_cmp);
    Ok(picked.iter().sum::<f64>() / picked.len() as f64)
}

/// Arithmetic mean of the samples inside `window`. Values are summed in
/// ascending order so the result does not depend on sample order.
pub fn average_window(series: &TimeSeries, window: &Window) -> Result<f64> {
    mean_in(series, window.start, window.end, true)
}

/// Reservoir hydraulic head from its pressure head and elevation.
pub fn reservoir_head(p_r: f64, e_r: f64) -> f64 {
    p_r + e_r
}

/// Hourly metered demands: hour start (unix seconds) → node id → m³/h.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HourlyDemands(pub BTreeMap<i64, BTreeMap<String, f64>>);

impl HourlyDemands {
    pub fn insert(&mut self, hour: i64, node: impl Into<String>, demand: f64) {
        *self.0.entry(hour).or_default().entry(node.into()).or_insert(0.0) += demand;
    }

    /// Demand vector over the graph's demand nodes for the hour starting at `hour`.
    pub fn vector(&self, graph: &NetworkGraph, hour: i64) -> Result<Vec<f64>> {
        let row = self.0.get(&hour).ok_or(Error::MissingDemandHour(hour))?;
        Ok(graph
            .demand_nodes
            .iter()
            .map(|q| row.get(q).copied().unwrap_or(0.0))
            .collect())
    }
}

pub fn hour_start(t: f64) -> i64 {
    (t / 3600.0).floor() as i64 * 3600
}

/// A hydrant trial: its descriptor and the discharge trace at the hydrant.
#[derive(Debug, Clone, Copy)]
pub struct TrialInput<'a> {
    pub meta: &'a TrialMeta,
    pub flow: &'a TimeSeries,
}

#[derive(Debug, Clone)]
pub struct ScenarioInput<'a> {
    pub id: String,
    /// Pressure traces, matched to the graph's sensor nodes by sensor id.
    pub sensor_traces: &'a [TimeSeries],
    /// Pressure head at the reservoir outlet.
    pub reservoir_trace: &'a TimeSeries,
    pub demands: &'a HourlyDemands,
    /// Hour start for daily-usage snapshots; ignored for trials.
    pub hour: i64,
    pub trial: Option<TrialInput<'a>>,
}

/// Reduce traces to one scenario and its reference pressures.
pub fn build_scenario(
    graph: &NetworkGraph,
    input: &ScenarioInput<'_>,
    params: &WindowParams,
) -> Result<(Scenario, ReferencePressures)> {
    let by_id: HashMap<&str, &TimeSeries> = input
        .sensor_traces
        .iter()
        .map(|s| (s.sensor_id.as_str(), s))
        .collect();
    let traces = graph
        .sensor_nodes
        .iter()
        .map(|id| by_id.get(id.as_str()).copied().ok_or_else(|| Error::MissingTrace(id.clone())))
        .collect::<Result<Vec<_>>>()?;
    let e_r = graph.reservoir()?.elevation_head;

    let (scenario, values) = match input.trial {
        None => {
            let demands = input.demands.vector(graph, input.hour)?;
            let (start, end) = (input.hour as f64, input.hour as f64 + 3600.0);
            let values = traces
                .iter()
                .map(|s| mean_in(s, start, end, false))
                .collect::<Result<Vec<_>>>()?;
            let p_r = mean_in(input.reservoir_trace, start, end, false)?;
            let scenario = Scenario {
                id: input.id.clone(),
                label: ScenarioLabel::DailyUsage,
                timestamp: input.hour,
                reservoir_head: reservoir_head(p_r, e_r),
                demands,
                hydrant: None,
            };
            (scenario, values)
        }
        Some(trial) => {
            let mut common = trial.meta.interval();
            for s in &traces {
                let w = detect_stable_window(s, trial.meta, params)?;
                common = common.intersect(&w).ok_or_else(|| {
                    Error::EmptyWindow(format!("stable windows of trial '{}' do not overlap", trial.meta.id))
                })?;
            }
            let values = traces
                .iter()
                .map(|s| average_window(s, &common))
                .collect::<Result<Vec<_>>>()?;
            let p_r = average_window(input.reservoir_trace, &common)?;
            let flow = average_window(trial.flow, &common)?;
            let hour = hour_start(trial.meta.start);
            let scenario = Scenario {
                id: input.id.clone(),
                label: ScenarioLabel::DailyUsage,
                timestamp: hour,
                reservoir_head: reservoir_head(p_r, e_r),
                demands: input.demands.vector(graph, hour)?,
                hydrant: None,
            }
            .with_hydrant(trial.meta.node.clone(), flow);
            (scenario, values)
        }
    };
    let reference = ReferencePressures {
        scenario_id: scenario.id.clone(),
        values,
    };
    Ok((scenario, reference))
}

pub fn parse_timestamp(text: &str) -> Result<f64> {
    let text = text.trim();
    let bad = || Error::InvalidArgument(format!("unparseable timestamp '{text}'"));
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Ok(dt.timestamp_micros() as f64 / 1e6);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(text, fmt) {
            return Ok(dt.and_utc().timestamp_micros() as f64 / 1e6);
        }
    }
    Err(bad())
}

pub fn format_timestamp(t: f64) -> String {
    let micros = (t * 1e6).round() as i64;
    DateTime::<Utc>::from_timestamp_micros(micros)
        .map(|dt| dt.to_rfc3339_opts(SecondsFormat::AutoSi, true))
        .unwrap_or_else(|| t.to_string())
}

#[derive(Deserialize, Serialize)]
struct TraceRow {
    timestamp: String,
    sensor_id: String,
    value: f64,
}

/// Read `timestamp,sensor_id,value` rows into one series per sensor, in order
/// of first appearance.
pub fn read_traces<R: Read>(reader: R) -> Result<Vec<TimeSeries>> {
    let mut order: Vec<String> = Vec::new();
    let mut data: HashMap<String, (Vec<f64>, Vec<f64>)> = HashMap::new();
    for row in csv::Reader::from_reader(reader).deserialize() {
        let row: TraceRow = row?;
        let t = parse_timestamp(&row.timestamp)?;
        let entry = data.entry(row.sensor_id.clone()).or_insert_with(|| {
            order.push(row.sensor_id.clone());
            (Vec::new(), Vec::new())
        });
        entry.0.push(t);
        entry.1.push(row.value);
    }
    order
        .into_iter()
        .map(|id| {
            let (t, v) = data.remove(&id).unwrap_or_default();
            TimeSeries::new(id, t, v)
        })
        .collect()
}

pub fn write_traces<W: Write>(writer: W, series: &[TimeSeries]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for s in series {
        for (t, v) in s.timestamps.iter().zip(&s.values) {
            w.serialize(TraceRow {
                timestamp: format_timestamp(*t),
                sensor_id: s.sensor_id.clone(),
                value: *v,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize, Serialize)]
struct DemandRow {
    hour: String,
    node_id: String,
    demand_m3h: f64,
}

/// Read `hour,node_id,demand_m3h` rows; repeated (hour, node) pairs add up.
pub fn read_hourly_demands<R: Read>(reader: R) -> Result<HourlyDemands> {
    let mut out = HourlyDemands::default();
    for row in csv::Reader::from_reader(reader).deserialize() {
        let row: DemandRow = row?;
        if !(row.demand_m3h.is_finite() && row.demand_m3h >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "negative or non-finite demand for '{}'",
                row.node_id
            )));
        }
        out.insert(hour_start(parse_timestamp(&row.hour)?), row.node_id, row.demand_m3h);
    }
    Ok(out)
}

pub fn write_hourly_demands<W: Write>(writer: W, demands: &HourlyDemands) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for (hour, row) in &demands.0 {
        for (node, d) in row {
            w.serialize(DemandRow {
                hour: format_timestamp(*hour as f64),
                node_id: node.clone(),
                demand_m3h: *d,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}
