//! The four subcommands. Each takes the effective [`RunConfig`] and works
//! only through files under its paths.

use std::path::{Path, PathBuf};

use postsample_core::config::Pillars;
use postsample_core::detect::DetectionReport;
use postsample_core::io::{read_json, read_jsonl, write_json, write_jsonl, Telemetry, SPANS_FILE};
use postsample_core::pipeline::{analyze, sample, selected_ids};
use postsample_core::profile::{build_profile, ProfileError, ReferenceProfile};
use postsample_core::rca::RcaReport;
use postsample_core::sampler::SamplingDecision;
use postsample_eval::{evaluate, write_results, BenchmarkResult, Variant};
use postsample_synth::{generate, GroundTruth, Scenario};

use crate::config::RunConfig;
use crate::CliError;

pub const DETECTION_FILE: &str = "detection.jsonl";
pub const RCA_FILE: &str = "rca_report.jsonl";
pub const DECISIONS_FILE: &str = "decisions.jsonl";
pub const SAMPLED_TRACES_FILE: &str = "sampled_traces.jsonl";
pub const SAMPLED_LOGS_FILE: &str = "sampled_logs.jsonl";
pub const RUN_CONFIG_FILE: &str = "run_config.toml";
pub const SCENARIO_FILE: &str = "scenario.toml";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Writes both phases and the ground truth under `paths.out_dir`, plus the
/// scenario that produced them. Returns the scenario used.
pub fn cmd_generate(config: &RunConfig) -> Result<Scenario, CliError> {
    let paths = &config.paths;
    let scenario = if paths.scenario.as_os_str().is_empty() {
        Scenario::default()
    } else {
        let path = paths.resolve(&paths.scenario);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Scenario::from_toml(&text)?
    };
    let generated = generate(&scenario, config.seed)?;
    create_dir(&paths.out_dir)?;
    generated.write(&paths.out_dir)?;
    write_text(&paths.out_dir.join(SCENARIO_FILE), &scenario.to_toml())?;
    Ok(scenario)
}

/// Builds the reference profile from the fault-free directory.
pub fn cmd_profile(config: &RunConfig) -> Result<ReferenceProfile, CliError> {
    let paths = &config.paths;
    let dir = paths.resolve(&paths.fault_free);
    if !dir.join(SPANS_FILE).is_file() {
        return Err(ProfileError::EmptyPhase.into());
    }
    let data = Telemetry::load_dir(&dir)?;
    let profile = build_profile(&data, None, &config.pipeline())?;
    let out = paths.resolve(&paths.profile);
    if let Some(parent) = out.parent() {
        create_dir(parent)?;
    }
    write_json(&out, &profile)?;
    Ok(profile)
}

/// Counts reported after a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub windows: usize,
    pub anomalous_windows: usize,
    pub traces: usize,
    pub logs: usize,
    pub selected_traces: usize,
    pub selected_logs: usize,
    pub rejected_traces: usize,
    pub run_dir: PathBuf,
}

/// Detection, RCA and sampling over the production directory.
pub fn cmd_run(config: &RunConfig) -> Result<RunSummary, CliError> {
    let paths = &config.paths;
    let profile: ReferenceProfile = read_json(&paths.resolve(&paths.profile))?;
    profile.check_version()?;
    let data = Telemetry::load_dir(&paths.resolve(&paths.production))?;
    let pipeline = config.pipeline();
    let analysis = analyze(&data, &profile, &pipeline)?;
    let decisions = sample(&analysis, &pipeline.sampler, config.seed);

    let run_dir = paths.resolve(&paths.run_dir);
    create_dir(&run_dir)?;
    let detection: Vec<&DetectionReport> = analysis.windows.iter().map(|w| &w.detection).collect();
    write_jsonl(&run_dir.join(DETECTION_FILE), detection)?;
    write_jsonl(&run_dir.join(RCA_FILE), analysis.rca_reports())?;
    write_jsonl(&run_dir.join(DECISIONS_FILE), &decisions)?;
    let (traces, logs) = selected_ids(&decisions);
    write_jsonl(
        &run_dir.join(SAMPLED_TRACES_FILE),
        data.spans.iter().filter(|s| traces.contains(s.trace_id.as_str())),
    )?;
    write_jsonl(
        &run_dir.join(SAMPLED_LOGS_FILE),
        data.logs.iter().filter(|l| logs.contains(l.log_id.as_str())),
    )?;
    write_text(&run_dir.join(RUN_CONFIG_FILE), &config.to_toml())?;

    Ok(RunSummary {
        windows: analysis.windows.len(),
        anomalous_windows: analysis.windows.iter().filter(|w| w.detection.anomalous).count(),
        traces: analysis.traces.len(),
        logs: analysis.logs.len(),
        selected_traces: traces.len(),
        selected_logs: logs.len(),
        rejected_traces: analysis.rejected_traces.len(),
        run_dir,
    })
}

/// Scores a finished run against the ground truth for every configured
/// budget and variant and writes the results CSV.
pub fn cmd_eval(config: &RunConfig) -> Result<Vec<BenchmarkResult>, CliError> {
    let paths = &config.paths;
    let run_dir = paths.resolve(&paths.run_dir);
    let truth: GroundTruth = read_json(&paths.resolve(&paths.ground_truth))?;
    let run_config_path = run_dir.join(RUN_CONFIG_FILE);
    let run_config_text = std::fs::read_to_string(&run_config_path)
        .map_err(|e| CliError::Data(format!("{}: {e}", run_config_path.display())))?;
    let run_config: RunConfig = toml::from_str(&run_config_text)
        .map_err(|e| CliError::Data(format!("{}: {e}", run_config_path.display())))?;
    let needs_analysis = config
        .eval
        .variants
        .iter()
        .any(|v| matches!(v, Variant::Full | Variant::AnalysisOnly));
    if needs_analysis && run_config.sampler.pillars != Pillars::Full {
        return Err(CliError::Config(format!(
            "eval.variants: the run in {} used pillars = {:?}; full and analysis_only need a full-pillar run",
            run_dir.display(),
            run_config.sampler.pillars
        )));
    }
    let decisions: Vec<SamplingDecision> = read_jsonl(&run_dir.join(DECISIONS_FILE))?;
    let reports: Vec<RcaReport> = read_jsonl(&run_dir.join(RCA_FILE))?;
    let scenario_id = run_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_owned());
    let results = evaluate(
        &scenario_id,
        &decisions,
        &reports,
        &truth,
        &config.eval.budgets,
        &config.eval.variants,
        &config.sampler,
        config.seed,
        0.0,
    );
    let out = paths.resolve(&paths.results);
    if let Some(parent) = out.parent() {
        create_dir(parent)?;
    }
    write_results(&out, &results)?;
    Ok(results)
}
