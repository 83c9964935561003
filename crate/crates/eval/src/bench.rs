//! Benchmark runner: profile, analyze and sample each scenario under every
//! requested budget and sampler variant, then score against ground truth.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use postsample_core::config::{Pillars, PipelineConfig, SamplerConfig};
use postsample_core::pipeline::{analyze, resample, sample, selected_ids, PipelineError};
use postsample_core::profile::{build_profile, ProfileError};
use postsample_core::model::ServiceId;
use postsample_core::rca::RcaReport;
use postsample_core::sampler::{budget_count, selection_seed, DataType, SamplingDecision};
use postsample_synth::{generate, FaultCase, GenError, GroundTruth, Scenario};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{ac_at_k, coverage, mrr, RankedCase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    EdgeOnly,
    AnalysisOnly,
    Uniform,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::EdgeOnly, Variant::AnalysisOnly, Variant::Uniform];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::EdgeOnly => "edge_only",
            Variant::AnalysisOnly => "analysis_only",
            Variant::Uniform => "uniform",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub scenario_id: String,
    pub variant: Variant,
    pub budget: f64,
    pub trace_coverage: Option<f64>,
    /// Empty when the scenario labels no logs.
    pub log_coverage: Option<f64>,
    pub ac1: Option<f64>,
    pub ac3: Option<f64>,
    pub mrr: Option<f64>,
    /// Seconds spent on detection, RCA and sampling for this row.
    pub wall_time: f64,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Generate(#[from] GenError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("writing {path}: {source}")]
    Csv { path: String, source: csv::Error },
}

/// Uniformly random `budget_count` items per window and data type.
pub fn uniform_selection(decisions: &[SamplingDecision], budget: f64, seed: u64) -> (BTreeSet<&str>, BTreeSet<&str>) {
    let mut groups: BTreeMap<(u64, DataType), Vec<&str>> = BTreeMap::new();
    for d in decisions {
        groups.entry((d.window_start_ns, d.data_type)).or_default().push(&d.subject);
    }
    let mut traces = BTreeSet::new();
    let mut logs = BTreeSet::new();
    for ((start, data_type), mut group) in groups {
        group.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(selection_seed(seed, start, data_type));
        let k = budget_count(budget, group.len());
        let picked = sample_indices(&mut rng, group.len(), k).into_iter().map(|i| group[i]);
        match data_type {
            DataType::Trace => traces.extend(picked),
            DataType::Log => logs.extend(picked),
        }
    }
    (traces, logs)
}

/// Service ranking of the report with the largest total pattern deviation
/// among the windows overlapping the fault. Empty when none was analyzed.
pub fn case_ranking<'a>(reports: impl IntoIterator<Item = &'a RcaReport>, fault: &FaultCase) -> Vec<ServiceId> {
    reports
        .into_iter()
        .filter(|r| r.window.start_ns < fault.end_ns && fault.start_ns < r.window.end_ns())
        .fold(None, |best: Option<&RcaReport>, r| match best {
            Some(b) if b.total_deviation() >= r.total_deviation() => Some(b),
            _ => Some(r),
        })
        .map(|r| r.ranking())
        .unwrap_or_default()
}

pub fn ranked_cases(reports: &[RcaReport], truth: &GroundTruth) -> Vec<RankedCase> {
    truth
        .faults
        .iter()
        .map(|f| RankedCase {
            ranking: case_ranking(reports, f),
            truth: BTreeSet::from([f.root_cause.clone()]),
        })
        .collect()
}

pub fn sampler_for(variant: Variant, base: &SamplerConfig, budget: f64) -> SamplerConfig {
    let pillars = match variant {
        Variant::EdgeOnly => Pillars::EdgeOnly,
        Variant::AnalysisOnly => Pillars::AnalysisOnly,
        Variant::Full | Variant::Uniform => Pillars::Full,
    };
    SamplerConfig {
        budget,
        pillars,
        ..base.clone()
    }
}

/// Scores one run under each budget and variant. `decisions` must come from
/// a full-pillar run so every variant can be recomposed from them;
/// `analysis_s` is the time spent producing them.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    scenario_id: &str,
    decisions: &[SamplingDecision],
    reports: &[RcaReport],
    truth: &GroundTruth,
    budgets: &[f64],
    variants: &[Variant],
    base: &SamplerConfig,
    seed: u64,
    analysis_s: f64,
) -> Vec<BenchmarkResult> {
    let cases = ranked_cases(reports, truth);
    let ac1 = ac_at_k(&cases, 1).ok();
    let ac3 = ac_at_k(&cases, 3).ok();
    let mrr = (!cases.is_empty()).then(|| mrr(&cases));
    let mut out = Vec::new();
    for &budget in budgets {
        for &variant in variants {
            let started = Instant::now();
            let resampled;
            let (traces, logs) = if variant == Variant::Uniform {
                uniform_selection(decisions, budget, seed)
            } else {
                resampled = resample(decisions, &sampler_for(variant, base, budget), seed);
                selected_ids(&resampled)
            };
            out.push(BenchmarkResult {
                scenario_id: scenario_id.to_owned(),
                variant,
                budget,
                trace_coverage: coverage(&traces, &truth.labeled_traces).ok(),
                log_coverage: coverage(&logs, &truth.labeled_logs).ok(),
                ac1,
                ac3,
                mrr,
                wall_time: analysis_s + started.elapsed().as_secs_f64(),
            });
        }
    }
    out
}

/// One generated scenario to benchmark.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub id: String,
    pub scenario: Scenario,
    pub seed: u64,
}

/// Generates, profiles and analyzes each scenario, then evaluates every
/// budget and variant. Scenarios run in parallel; the result order follows
/// the input order.
pub fn run_benchmark(
    runs: &[ScenarioRun],
    budgets: &[f64],
    variants: &[Variant],
    config: &PipelineConfig,
) -> Result<Vec<BenchmarkResult>, BenchError> {
    let per_run: Vec<Vec<BenchmarkResult>> = runs
        .par_iter()
        .map(|run| -> Result<_, BenchError> {
            let generated = generate(&run.scenario, run.seed)?;
            let profile = build_profile(&generated.fault_free, Some(&run.scenario.topology.services), config)?;
            let started = Instant::now();
            let analysis = analyze(&generated.production, &profile, config)?;
            let full = sampler_for(Variant::Full, &config.sampler, config.sampler.budget);
            let decisions = sample(&analysis, &full, config.seed);
            let analysis_s = started.elapsed().as_secs_f64();
            let reports: Vec<RcaReport> = analysis.rca_reports().cloned().collect();
            Ok(evaluate(
                &run.id,
                &decisions,
                &reports,
                &generated.truth,
                budgets,
                variants,
                &config.sampler,
                config.seed,
                analysis_s,
            ))
        })
        .collect::<Result<_, _>>()?;
    Ok(per_run.into_iter().flatten().collect())
}

pub fn write_results(path: &Path, results: &[BenchmarkResult]) -> Result<(), BenchError> {
    let err = |source| BenchError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in results {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| err(e.into()))
}

pub fn read_results(path: &Path) -> Result<Vec<BenchmarkResult>, BenchError> {
    let err = |source| BenchError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    r.deserialize().collect::<Result<_, _>>().map_err(err)
}

/// Mean of a column over rows of one variant, skipping empty cells.
pub fn mean_of(results: &[BenchmarkResult], variant: Variant, column: impl Fn(&BenchmarkResult) -> Option<f64>) -> Option<f64> {
    let values: Vec<f64> = results.iter().filter(|r| r.variant == variant).filter_map(column).collect();
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}
