//! Boundary-condition snapshots and the pressures measured under them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NetworkGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioLabel {
    HydrantTrial,
    DailyUsage,
}

/// Discharge of a hydrant trial, applied on top of the metered demands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HydrantDischarge {
    pub node: String,
    /// m³/h.
    pub flow: f64,
}

/// One steady-state snapshot: reservoir head plus nodal demands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub label: ScenarioLabel,
    /// Unix seconds of the hour the snapshot stands for.
    pub timestamp: i64,
    /// Reservoir hydraulic head, m.
    pub reservoir_head: f64,
    /// Metered demands over the graph's demand nodes, m³/h.
    pub demands: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hydrant: Option<HydrantDischarge>,
}

impl Scenario {
    pub fn daily(id: impl Into<String>, reservoir_head: f64, demands: Vec<f64>) -> Self {
        Scenario {
            id: id.into(),
            label: ScenarioLabel::DailyUsage,
            timestamp: 0,
            reservoir_head,
            demands,
            hydrant: None,
        }
    }

    pub fn with_hydrant(mut self, node: impl Into<String>, flow: f64) -> Self {
        self.label = ScenarioLabel::HydrantTrial;
        self.hydrant = Some(HydrantDischarge {
            node: node.into(),
            flow,
        });
        self
    }

    /// Metered consumption, excluding any hydrant discharge.
    pub fn metered_total(&self) -> f64 {
        self.demands.iter().sum()
    }

    /// Demand per junction in m³/h, hydrant discharge included.
    pub fn junction_demands(&self, graph: &NetworkGraph) -> Result<Vec<f64>> {
        let positions = graph.demand_positions()?;
        if positions.len() != self.demands.len() {
            return Err(Error::Dimension {
                what: "scenario demands",
                expected: positions.len(),
                got: self.demands.len(),
            });
        }
        let mut out = vec![0.0; graph.junction_count()];
        for (&j, &d) in positions.iter().zip(&self.demands) {
            out[j] += d;
        }
        if let Some(h) = &self.hydrant {
            let j = graph
                .junction_position(&h.node)
                .ok_or_else(|| Error::InvalidArgument(format!("hydrant node '{}' is not a junction", h.node)))?;
            out[j] += h.flow;
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.reservoir_head.is_finite() {
            return Err(Error::InvalidArgument(format!("scenario '{}': non-finite reservoir head", self.id)));
        }
        if self.demands.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidArgument(format!("scenario '{}': demands must be finite and >= 0", self.id)));
        }
        match (&self.hydrant, self.label) {
            (Some(h), ScenarioLabel::HydrantTrial) if h.flow.is_finite() && h.flow >= 0.0 => Ok(()),
            (None, ScenarioLabel::DailyUsage) => Ok(()),
            _ => Err(Error::InvalidArgument(format!(
                "scenario '{}': label and hydrant discharge disagree",
                self.id
            ))),
        }
    }
}

/// Measured pressure heads over the sensor nodes for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePressures {
    pub scenario_id: String,
    /// m, in sensor order.
    pub values: Vec<f64>,
}
