//! End-to-end runs: configuration, per-cell evaluation, reports and
//! comparisons.

mod compare;
mod config;
mod report;
mod run;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use compare::{compare_selected, compare_systems, ComparisonSummary, MetricDelta};
pub use config::{scenario_label, ComparePair, EmbeddingEntry, Expectation, MetricName, RunConfig};
pub use report::{
    render_markdown, CellReport, CellResult, EvalReport, ExpectationResult, Provenance,
};
pub use run::{run_pipeline, RunOptions, RunOutcome};
pub use synth::{write_synth_bundle, SynthBundleConfig, SystemSpec};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EvalTask {
    #[serde(rename = "SV")]
    Sv,
    #[serde(rename = "AV")]
    Av,
    #[serde(rename = "AID")]
    Aid,
}

impl EvalTask {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalTask::Sv => "SV",
            EvalTask::Av => "AV",
            EvalTask::Aid => "AID",
        }
    }
}

impl fmt::Display for EvalTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalTask {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SV" => Ok(EvalTask::Sv),
            "AV" => Ok(EvalTask::Av),
            "AID" => Ok(EvalTask::Aid),
            _ => Err(Error::InvalidArgument(format!("unknown task `{s}`"))),
        }
    }
}
