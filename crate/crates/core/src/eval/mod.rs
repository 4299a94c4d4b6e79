//! Metrics, benchmark loaders and reports.

mod metrics;
mod report;
mod task;

use std::path::Path;

pub use metrics::{ca, context_scores, ia, ifr, pass_at_k, pass_at_k_exact};
pub use report::{aggregate, transcript_metrics, MetricsReport, RoundMetrics, TaskMetrics, TurnSummary};
pub use task::{
    load_codeif, load_codereval, load_record, load_tasks, Bench, Task, DEFAULT_FEEDBACK,
    DEFAULT_REPEAT_BUDGET,
};

use crate::error::{Error, Result};
use crate::orchestrator::Transcript;

/// Reads every `*.json` transcript in `dir`, in file-name order.
pub fn load_transcripts(dir: &Path) -> Result<Vec<Transcript>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|ext| ext == "json") {
            paths.push(path);
        }
    }
    paths.sort();
    paths
        .iter()
        .map(|path| {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::schema(path.display().to_string(), e.to_string()))
        })
        .collect()
}
