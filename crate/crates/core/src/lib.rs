//! Lifelong in-context learning evaluation harness.
//!
//! Builds single-task, lifelong and controlled prompts from task bundles,
//! queries OpenAI-compatible completion endpoints (or a scripted mock),
//! scores lifelong against single-task accuracy with paired t-tests and
//! renders heatmaps and diagnostic reports.

pub mod config;
pub mod float_repr;
pub mod lm;
pub mod pipeline;
pub mod plan;
pub mod prompt;
pub mod report;
pub mod seed;
pub mod stats;
pub mod synthetic;
pub mod task;
pub mod tokenizer;

pub use config::HarnessConfig;
pub use pipeline::{run_experiment, run_niah, score_and_report, Experiment, RunOptions, RunReport};
pub use report::{ResultsStore, ScoreOptions, Scored};
pub use lm::{EndpointConfig, LmClient, LmError, MockModel, MockScript, Prediction, ResponseCache};
pub use plan::{make_plan, EvaluationUnit, Mode, PlanConfig, RunManifest};
pub use prompt::{ControlledSetting, PromptBuilder, PromptRecord, SettingKind};
pub use stats::{StatsError, Verdict};
pub use task::{TaskBundle, TaskSpec};

pub type TTest64 = stats::TTest<f64>;
pub type TTest32 = stats::TTest<f32>;
pub type CellVerdict64 = stats::CellVerdict<f64>;
pub type PassRateSummary64 = stats::PassRateSummary<f64>;
pub type EffectivenessSplit64 = stats::EffectivenessSplit<f64>;
