//! Tunables for every stage, with their defaults.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid value for `{field}`: {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

fn check(ok: bool, field: &str, reason: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::new(field, reason))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileConfig {
    /// Cumulative explained variance the retained components must reach.
    pub variance_target: f64,
    /// `rho = mean + rho_sigma * std` of training reconstruction errors.
    pub rho_sigma: f64,
    /// Lower bound on `rho`; also the threshold of degenerate models.
    pub rho_floor: f64,
    pub histogram_bins: usize,
    pub span_sigma_floor_ms: f64,
    pub rate_sigma_floor: f64,
    pub template_similarity: f64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig {
            variance_target: 0.95,
            rho_sigma: 3.0,
            rho_floor: 1e-9,
            histogram_bins: 20,
            span_sigma_floor_ms: 0.01,
            rate_sigma_floor: 0.1,
            template_similarity: 0.5,
        }
    }
}

impl ProfileConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check(
            self.variance_target > 0.0 && self.variance_target <= 1.0,
            "profile.variance_target",
            "must lie in (0, 1]",
        )?;
        check(self.rho_sigma >= 0.0, "profile.rho_sigma", "must be non-negative")?;
        check(self.rho_floor > 0.0, "profile.rho_floor", "must be positive")?;
        check(self.histogram_bins >= 1, "profile.histogram_bins", "must be at least 1")?;
        check(self.span_sigma_floor_ms > 0.0, "profile.span_sigma_floor_ms", "must be positive")?;
        check(self.rate_sigma_floor > 0.0, "profile.rate_sigma_floor", "must be positive")?;
        check(
            self.template_similarity > 0.0 && self.template_similarity <= 1.0,
            "profile.template_similarity",
            "must lie in (0, 1]",
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    /// Weight of ERROR over WARN counts in the log rate.
    pub log_weight: f64,
    pub log_k: f64,
    pub trace_k: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            log_weight: 0.8,
            log_k: 3.0,
            trace_k: 3.0,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check(
            (0.0..=1.0).contains(&self.log_weight),
            "detect.log_weight",
            "must lie in [0, 1]",
        )?;
        check(self.log_k > 0.0, "detect.log_k", "must be positive")?;
        check(self.trace_k > 0.0, "detect.trace_k", "must be positive")
    }
}

/// How distributional overlap enters the metric deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    /// `k * (1 - O) + (1 - k) * mean_shift`
    Complement,
    /// `k * O + (1 - k) * mean_shift`
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RcaConfig {
    pub metric_weight: f64,
    pub overlap: OverlapMode,
    pub tau_metric: f64,
    pub tau_trace: f64,
    pub tau_log: f64,
    pub eps_freq: f64,
    pub eps_mean: f64,
}

impl Default for RcaConfig {
    fn default() -> Self {
        RcaConfig {
            metric_weight: 0.8,
            overlap: OverlapMode::Complement,
            tau_metric: 0.1,
            tau_trace: 0.5,
            tau_log: 0.0,
            eps_freq: 1.0,
            eps_mean: 1e-6,
        }
    }
}

impl RcaConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check(
            (0.0..=1.0).contains(&self.metric_weight),
            "rca.metric_weight",
            "must lie in [0, 1]",
        )?;
        check(self.tau_metric >= 0.0, "rca.tau_metric", "must be non-negative")?;
        check(self.tau_trace >= 0.0, "rca.tau_trace", "must be non-negative")?;
        check(self.tau_log >= 0.0, "rca.tau_log", "must be non-negative")?;
        check(self.eps_freq > 0.0, "rca.eps_freq", "must be positive")?;
        check(self.eps_mean > 0.0, "rca.eps_mean", "must be positive")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Rank,
    Bernoulli,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Composition {
    Multiply,
    Max,
}

/// Which sampling pillars contribute to the final probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pillars {
    Full,
    EdgeOnly,
    AnalysisOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Fraction of items kept per window and data type.
    pub budget: f64,
    /// Trace-to-log propagation strength.
    pub w_t: f64,
    /// Log-to-trace propagation strength.
    pub w_l: f64,
    pub mode: SelectionMode,
    pub composition: Composition,
    pub pillars: Pillars,
    /// Stabilizer inside `-ln(p' + eps)` for template rarity.
    pub template_eps: f64,
    /// z-score assigned to spans whose operation has no reference.
    pub z_unknown: f64,
    /// Pattern events attached to an item's evidence.
    pub evidence_events: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            budget: 0.05,
            w_t: 0.5,
            w_l: 0.5,
            mode: SelectionMode::Rank,
            composition: Composition::Multiply,
            pillars: Pillars::Full,
            template_eps: 1e-6,
            z_unknown: 3.0,
            evidence_events: 3,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check(
            self.budget > 0.0 && self.budget <= 1.0,
            "sampler.budget",
            "must lie in (0, 1]",
        )?;
        check(self.w_t > 0.0 && self.w_t <= 1.0, "sampler.w_t", "must lie in (0, 1]")?;
        check(self.w_l > 0.0 && self.w_l <= 1.0, "sampler.w_l", "must lie in (0, 1]")?;
        check(self.template_eps > 0.0, "sampler.template_eps", "must be positive")?;
        check(self.z_unknown >= 0.0, "sampler.z_unknown", "must be non-negative")
    }
}

/// Everything the analysis pipeline needs besides data and profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub window_length_s: u64,
    pub seed: u64,
    pub profile: ProfileConfig,
    pub detect: DetectConfig,
    pub rca: RcaConfig,
    pub sampler: SamplerConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            window_length_s: 60,
            seed: 0,
            profile: ProfileConfig::default(),
            detect: DetectConfig::default(),
            rca: RcaConfig::default(),
            sampler: SamplerConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn window_length_ns(&self) -> u64 {
        self.window_length_s * crate::model::NANOS_PER_SEC
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check(self.window_length_s > 0, "window_length_s", "must be positive")?;
        self.profile.validate()?;
        self.detect.validate()?;
        self.rca.validate()?;
        self.sampler.validate()
    }
}
