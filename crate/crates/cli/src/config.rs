//! The run configuration: one TOML file, then `--set key=value` overrides,
//! then dedicated flags. Later sources win.

use std::path::{Path, PathBuf};

use postsample_core::config::{ConfigError, DetectConfig, PipelineConfig, ProfileConfig, RcaConfig, SamplerConfig};
use postsample_eval::Variant;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

/// File locations. Relative paths resolve against `out_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub out_dir: PathBuf,
    /// Scenario file for `generate`; empty uses the built-in default.
    pub scenario: PathBuf,
    pub fault_free: PathBuf,
    pub production: PathBuf,
    pub profile: PathBuf,
    pub ground_truth: PathBuf,
    pub run_dir: PathBuf,
    pub results: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            out_dir: "postsample-out".into(),
            scenario: PathBuf::new(),
            fault_free: "fault_free".into(),
            production: "production".into(),
            profile: "profile.json".into(),
            ground_truth: "ground_truth.json".into(),
            run_dir: "run".into(),
            results: "results.csv".into(),
        }
    }
}

impl Paths {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.out_dir.join(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub budgets: Vec<f64>,
    pub variants: Vec<Variant>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            budgets: vec![0.01, 0.025, 0.05, 0.1],
            variants: Variant::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub window_length_s: u64,
    /// Worker threads; 0 uses every available processor.
    pub parallelism: usize,
    pub paths: Paths,
    pub profile: ProfileConfig,
    pub detect: DetectConfig,
    pub rca: RcaConfig,
    pub sampler: SamplerConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        RunConfig {
            seed: p.seed,
            window_length_s: p.window_length_s,
            parallelism: 0,
            paths: Paths::default(),
            profile: p.profile,
            detect: p.detect,
            rca: p.rca,
            sampler: p.sampler,
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            window_length_s: self.window_length_s,
            seed: self.seed,
            profile: self.profile.clone(),
            detect: self.detect.clone(),
            rca: self.rca.clone(),
            sampler: self.sampler.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.pipeline().validate()?;
        if self.eval.budgets.iter().any(|b| !(*b > 0.0 && *b <= 1.0)) {
            return Err(ConfigError::new("eval.budgets", "every budget must lie in (0, 1]"));
        }
        if self.eval.variants.is_empty() {
            return Err(ConfigError::new("eval.variants", "at least one variant is required"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Builds the effective configuration from an optional file and
    /// `(dotted key, value)` overrides applied in order.
    pub fn load(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<RunConfig, CliError> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                text.parse::<Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => Table::new(),
        };
        for (key, value) in overrides {
            set_dotted(&mut table, key, value.clone())?;
        }
        let config: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

fn set_dotted(table: &mut Table, key: &str, value: Value) -> Result<(), CliError> {
    let mut parts = key.split('.').peekable();
    let mut cur = table;
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(CliError::Config(format!("malformed key {key:?}")));
        }
        if parts.peek().is_none() {
            cur.insert(part.to_owned(), value);
            return Ok(());
        }
        let next = cur.entry(part.to_owned()).or_insert_with(|| Value::Table(Table::new()));
        cur = match next {
            Value::Table(t) => t,
            _ => return Err(CliError::Config(format!("{key}: {part} is not a section"))),
        };
    }
    Err(CliError::Config(format!("malformed key {key:?}")))
}

/// Parses `key=value`. The value is read as a TOML value when possible and
/// as a bare string otherwise, so `paths.out_dir=/tmp/x` works unquoted.
pub fn parse_assignment(s: &str) -> Result<(String, Value), String> {
    let (key, raw) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))?;
    let key = key.trim().to_owned();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_owned()));
    Ok((key, value))
}

fn flatten(prefix: &str, value: &Value, out: &mut Vec<String>) {
    match value {
        Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => out.push(format!("  {prefix} = {other}")),
    }
}

/// Every configuration key with its default, one per line.
pub fn defaults_listing() -> String {
    let value = Value::try_from(RunConfig::default()).expect("defaults serialize");
    let mut lines = Vec::new();
    flatten("", &value, &mut lines);
    format!(
        "Configuration keys (set in --config TOML or with --set KEY=VALUE; flags win):\n{}",
        lines.join("\n")
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_beat_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        std::fs::write(&file, "seed = 4\n[sampler]\nbudget = 0.2\n").unwrap();
        let c = RunConfig::load(Some(&file), &[parse_assignment("sampler.budget=0.3").unwrap()]).unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.sampler.budget, 0.3);
        assert_eq!(c.detect, DetectConfig::default());
    }

    #[test]
    fn unquoted_strings_and_arrays() {
        assert_eq!(
            parse_assignment("paths.out_dir=/tmp/x").unwrap().1,
            Value::String("/tmp/x".into())
        );
        let (_, v) = parse_assignment("eval.budgets=[0.1, 0.2]").unwrap();
        assert_eq!(v.as_array().unwrap().len(), 2);
        assert!(parse_assignment("novalue").is_err());
    }

    #[test]
    fn out_of_domain_names_the_field() {
        let err = RunConfig::load(None, &[parse_assignment("sampler.budget=0").unwrap()]).unwrap_err();
        assert!(err.to_string().contains("sampler.budget"), "{err}");
        let err = RunConfig::load(None, &[parse_assignment("sampler.nope=1").unwrap()]).unwrap_err();
        assert!(err.to_string().contains("nope"), "{err}");
    }

    #[test]
    fn listing_covers_every_key() {
        let text = defaults_listing();
        for key in [
            "seed = 0",
            "window_length_s = 60",
            "parallelism = 0",
            "paths.out_dir",
            "profile.variance_target = 0.95",
            "detect.log_weight = 0.8",
            "detect.trace_k = 3.0",
            "rca.tau_trace = 0.5",
            "sampler.budget = 0.05",
            "sampler.w_t = 0.5",
            "sampler.mode = \"rank\"",
            "eval.variants",
        ] {
            assert!(text.contains(key), "missing {key}");
        }
    }
}
