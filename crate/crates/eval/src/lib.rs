//! Evaluation of sampled telemetry against generator ground truth.

pub mod bench;
pub mod metrics;

pub use bench::{
    case_ranking, evaluate, mean_of, read_results, run_benchmark, write_results, BenchError, BenchmarkResult, ScenarioRun, Variant,
};
pub use metrics::{ac_at_k, coverage, mrr, EvalError, RankedCase};
