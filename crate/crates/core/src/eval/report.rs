//! Per-round metrics of transcripts and their turn-wise aggregate.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{ca, context_scores, ia, ifr};
use crate::orchestrator::Transcript;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u32,
    /// `None` when the round has no test outcome.
    pub ia: Option<u8>,
    pub ca: Option<f64>,
    pub ifr: Option<f64>,
    /// Whether any round so far passed its tests (pass@1 with one sample).
    pub pass_at_1: Option<f64>,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub tokens: u64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task_id: String,
    pub rounds: Vec<RoundMetrics>,
    pub total_tokens: u64,
    pub total_wall_ms: u64,
}

/// Metrics for every round of one transcript. The previously passed set of
/// a round is every test that passed in some earlier round.
pub fn transcript_metrics(transcript: &Transcript) -> TaskMetrics {
    let gold: BTreeSet<String> = transcript.gold_context.iter().cloned().collect();
    let mut previously_passed = BTreeSet::new();
    let mut solved = false;
    let mut rounds = Vec::new();
    for record in &transcript.rounds {
        let mut m = RoundMetrics {
            round: record.round,
            ia: None,
            ca: None,
            ifr: None,
            pass_at_1: None,
            recall: None,
            precision: None,
            tokens: record.tokens,
            wall_ms: record.wall_ms,
        };
        if let Some(outcome) = &record.test_outcome {
            let passed_round = outcome.round_passed();
            solved |= passed_round;
            m.ia = Some(ia(passed_round));
            let results: Vec<bool> = outcome.results.values().copied().collect();
            m.ca = ca(&results).ok();
            let mut failures = outcome.failed();
            if outcome.error.is_some() {
                failures.extend(previously_passed.iter().cloned());
            }
            m.ifr = Some(ifr(&previously_passed, &failures));
            m.pass_at_1 = Some(if solved { 1.0 } else { 0.0 });
            previously_passed.extend(outcome.passed());
        }
        if !gold.is_empty() {
            let memory: BTreeSet<String> = record.retained.iter().cloned().collect();
            let (recall, precision) = context_scores(&memory, &gold);
            m.recall = Some(recall);
            m.precision = Some(precision);
        }
        rounds.push(m);
    }
    TaskMetrics {
        task_id: transcript.task_id.clone(),
        total_tokens: transcript.total_tokens(),
        total_wall_ms: transcript.total_wall_ms(),
        rounds,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnSummary {
    pub turn: u32,
    /// Tasks that reached this turn.
    pub tasks: usize,
    pub ia: Option<f64>,
    pub ca: Option<f64>,
    pub ifr: Option<f64>,
    pub pass_at_1: Option<f64>,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tasks: Vec<TaskMetrics>,
    pub turns: Vec<TurnSummary>,
    pub total_tokens: u64,
    pub total_wall_ms: u64,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// Turn-wise means over the tasks present at each turn. A task that stopped
/// early because it was solved keeps contributing its solved pass@1 to the
/// later turns, up to the longest transcript.
pub fn aggregate(transcripts: &[Transcript]) -> MetricsReport {
    let tasks: Vec<TaskMetrics> = transcripts.iter().map(transcript_metrics).collect();
    let max_turns = tasks.iter().map(|t| t.rounds.len()).max().unwrap_or(0);
    let turns = (0..max_turns)
        .map(|turn| {
            let present: Vec<&RoundMetrics> = tasks.iter().filter_map(|t| t.rounds.get(turn)).collect();
            let carried = tasks.iter().filter_map(|t| {
                match t.rounds.get(turn) {
                    Some(m) => m.pass_at_1,
                    None => t.rounds.last().and_then(|m| m.pass_at_1).filter(|p| *p == 1.0),
                }
            });
            TurnSummary {
                turn: turn as u32 + 1,
                tasks: present.len(),
                ia: mean(present.iter().map(|m| m.ia.map(f64::from))),
                ca: mean(present.iter().map(|m| m.ca)),
                ifr: mean(present.iter().map(|m| m.ifr)),
                pass_at_1: mean(carried.map(Some)),
                recall: mean(present.iter().map(|m| m.recall)),
                precision: mean(present.iter().map(|m| m.precision)),
            }
        })
        .collect();
    MetricsReport {
        total_tokens: tasks.iter().map(|t| t.total_tokens).sum(),
        total_wall_ms: tasks.iter().map(|t| t.total_wall_ms).sum(),
        tasks,
        turns,
    }
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serializes");
        out.push('\n');
        out
    }

    /// Aligned text table, one row per turn, percentages with one decimal.
    pub fn to_table(&self) -> String {
        let headers = ["turn", "tasks", "IA", "CA", "IFR", "pass@1", "recall", "precision"];
        let pct = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |v| format!("{:.1}", v * 100.0));
        let rows: Vec<Vec<String>> = self
            .turns
            .iter()
            .map(|t| {
                vec![
                    t.turn.to_string(),
                    t.tasks.to_string(),
                    pct(t.ia),
                    pct(t.ca),
                    pct(t.ifr),
                    pct(t.pass_at_1),
                    pct(t.recall),
                    pct(t.precision),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..headers.len())
            .map(|i| rows.iter().map(|r| r[i].len()).chain([headers[i].len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let line = |cells: &[&str], out: &mut String| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect();
            let _ = writeln!(out, "{}", padded.join("  "));
        };
        line(&headers, &mut out);
        for row in &rows {
            let cells: Vec<&str> = row.iter().map(String::as_str).collect();
            line(&cells, &mut out);
        }
        let _ = writeln!(
            out,
            "tasks: {}  tokens: {}  wall time: {} ms",
            self.tasks.len(),
            self.total_tokens,
            self.total_wall_ms
        );
        out
    }
}
