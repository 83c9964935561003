//! Scenario files: workload volume, phase lengths, topology and faults.
//!
//! ```toml
//! request_rate = 20.0
//! fault_free_s = 1800
//! production_s = 600
//!
//! [[faults]]
//! kind = "latency_injection"
//! target = "payment"
//! start_s = 200.5
//! duration_s = 180
//! magnitude = 10.0
//! ```

use postsample_core::model::ServiceId;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// Target span durations are multiplied by the magnitude.
    LatencyInjection,
    /// Each target call fails with probability `magnitude`.
    ErrorReturn,
    /// CPU dimensions of the target are multiplied by the magnitude.
    CpuSurge,
}

impl FaultKind {
    pub const ALL: [FaultKind; 3] = [FaultKind::LatencyInjection, FaultKind::ErrorReturn, FaultKind::CpuSurge];

    pub fn name(self) -> &'static str {
        match self {
            FaultKind::LatencyInjection => "latency_injection",
            FaultKind::ErrorReturn => "error_return",
            FaultKind::CpuSurge => "cpu_surge",
        }
    }

    fn parse(s: &str) -> Option<FaultKind> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// A fault relative to the start of the production phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub target: ServiceId,
    pub start_s: f64,
    pub duration_s: f64,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Requests per second.
    pub request_rate: f64,
    pub fault_free_s: f64,
    pub production_s: f64,
    /// Epoch second at which the fault-free phase starts; the default is a
    /// multiple of 60 so that minute windows are not cut short.
    pub epoch_s: u64,
    /// Seconds between metric readings.
    pub metric_interval_s: f64,
    pub topology: Topology,
    pub faults: Vec<FaultSpec>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            request_rate: 20.0,
            fault_free_s: 1800.0,
            production_s: 600.0,
            epoch_s: 1_700_000_040,
            metric_interval_s: 5.0,
            topology: Topology::default_shop(),
            faults: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("{field}: {reason}")]
    Field { field: String, reason: String },
    #[error("scenario is not valid TOML: {0}")]
    Syntax(String),
}

fn field(name: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Field {
        field: name.into(),
        reason: reason.into(),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFault {
    kind: String,
    target: String,
    start_s: f64,
    duration_s: f64,
    magnitude: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    request_rate: Option<f64>,
    fault_free_s: Option<f64>,
    production_s: Option<f64>,
    epoch_s: Option<u64>,
    metric_interval_s: Option<f64>,
    topology: Option<Topology>,
    #[serde(default)]
    faults: Vec<RawFault>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| ScenarioError::Syntax(e.to_string()))?;
        let d = Scenario::default();
        let faults = raw
            .faults
            .into_iter()
            .enumerate()
            .map(|(i, f)| {
                let kind = FaultKind::parse(&f.kind).ok_or_else(|| {
                    field(
                        format!("faults[{i}].kind"),
                        format!(
                            "unknown fault kind {:?}, expected one of latency_injection, error_return, cpu_surge",
                            f.kind
                        ),
                    )
                })?;
                Ok(FaultSpec {
                    kind,
                    target: ServiceId::new(f.target),
                    start_s: f.start_s,
                    duration_s: f.duration_s,
                    magnitude: f.magnitude,
                })
            })
            .collect::<Result<_, ScenarioError>>()?;
        let scenario = Scenario {
            request_rate: raw.request_rate.unwrap_or(d.request_rate),
            fault_free_s: raw.fault_free_s.unwrap_or(d.fault_free_s),
            production_s: raw.production_s.unwrap_or(d.production_s),
            epoch_s: raw.epoch_s.unwrap_or(d.epoch_s),
            metric_interval_s: raw.metric_interval_s.unwrap_or(d.metric_interval_s),
            topology: raw.topology.unwrap_or(d.topology),
            faults,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(field(name, format!("must be positive, got {v}")))
            }
        };
        positive("request_rate", self.request_rate)?;
        positive("fault_free_s", self.fault_free_s)?;
        positive("production_s", self.production_s)?;
        positive("metric_interval_s", self.metric_interval_s)?;
        if self.topology.templates.iter().any(|t| !(t.weight > 0.0)) {
            return Err(field("topology.templates.weight", "weights must be positive"));
        }
        for t in &self.topology.templates {
            let mut bad = None;
            t.root.visit(&mut |n| {
                if !(n.median_ms > 0.0) || n.sigma < 0.0 || n.info_rate < 0.0 || n.warn_rate < 0.0 {
                    bad = Some(n.operation.clone());
                }
            });
            if let Some(op) = bad {
                return Err(field(
                    format!("topology.templates.{}", t.name),
                    format!("operation {op} needs a positive median latency and non-negative rates"),
                ));
            }
        }
        for (i, f) in self.faults.iter().enumerate() {
            let name = |k: &str| format!("faults[{i}].{k}");
            if f.start_s < 0.0 || f.start_s + f.duration_s > self.production_s {
                return Err(field(name("start_s"), "fault window must lie within the production phase"));
            }
            positive(&name("duration_s"), f.duration_s)?;
            match f.kind {
                FaultKind::ErrorReturn if !(f.magnitude > 0.0 && f.magnitude <= 1.0) => {
                    return Err(field(name("magnitude"), "error rate must be in (0, 1]"));
                }
                FaultKind::LatencyInjection | FaultKind::CpuSurge if !(f.magnitude > 1.0) => {
                    return Err(field(name("magnitude"), "multiplier must exceed 1"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}
