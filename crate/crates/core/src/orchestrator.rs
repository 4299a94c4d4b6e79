//! Per-round pipeline and whole-session loop.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{Ablation, Config};
use crate::context::{decide_update, select, ContextMemory, Retriever, UpdateDecision, UpdateMode};
use crate::error::{Error, Result};
use crate::eval::Task;
use crate::gateway::{append_conflicts, render_prompt, Gateway, TemplateId};
use crate::index::{index_repository, BlockIndex};
use crate::python::strip_code_fences;
use crate::runner::{TestResult, TestRunner};
use crate::session::{
    detect, link_block, record_round, record_unparsed, refresh_note, render_working_set,
    working_set, ConflictReport, SessionStore,
};

/// Everything one session carries between rounds.
#[derive(Debug, Clone)]
pub struct SessionState {
    pub index: Arc<BlockIndex>,
    retriever: Arc<Retriever>,
    pub context: ContextMemory,
    pub store: SessionStore,
    /// Completed rounds.
    pub round: u32,
    pub instructions: Vec<String>,
    pub last_feedback: Option<String>,
    pub config: Config,
    /// Namespace of the function being generated.
    pub target: String,
}

impl SessionState {
    pub fn new(index: Arc<BlockIndex>, config: Config, target: impl Into<String>) -> Self {
        let retriever = Arc::new(Retriever::new(&index, config.bm25));
        Self {
            index,
            retriever,
            context: ContextMemory::new(),
            store: SessionStore::new(),
            round: 0,
            instructions: Vec::new(),
            last_feedback: None,
            config,
            target: target.into(),
        }
    }

    /// Rebuilds a state from persisted memory. Fails when the history does
    /// not match the round counter.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        index: Arc<BlockIndex>,
        config: Config,
        target: impl Into<String>,
        context: ContextMemory,
        store: SessionStore,
        round: u32,
        instructions: Vec<String>,
        last_feedback: Option<String>,
    ) -> Result<Self> {
        if instructions.len() != round as usize {
            return Err(Error::schema(
                "instructions",
                format!("{} instructions recorded for {round} rounds", instructions.len()),
            ));
        }
        let mut state = Self::new(index, config, target);
        state.context = context;
        state.store = store;
        state.round = round;
        state.instructions = instructions;
        state.last_feedback = last_feedback;
        Ok(state)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TestOutcome {
    /// Tests introduced by this round's instruction.
    pub round_tests: Vec<String>,
    /// Result of every cumulative test run against this round's final code.
    pub results: BTreeMap<String, bool>,
    /// Set when the runner itself failed; results are then empty.
    pub error: Option<String>,
}

impl TestOutcome {
    /// True when every test of this round ran and passed.
    pub fn round_passed(&self) -> bool {
        self.error.is_none()
            && self
                .round_tests
                .iter()
                .all(|t| self.results.get(t).copied().unwrap_or(false))
    }

    pub fn passed(&self) -> BTreeSet<String> {
        self.results.iter().filter(|(_, ok)| **ok).map(|(t, _)| t.clone()).collect()
    }

    pub fn failed(&self) -> BTreeSet<String> {
        self.results.iter().filter(|(_, ok)| !**ok).map(|(t, _)| t.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub instruction: String,
    /// `None` when the judge was skipped by the static-context ablation.
    pub decision: Option<UpdateDecision>,
    pub retrieved: Vec<String>,
    /// Candidate code before conflict handling.
    pub generated_code: String,
    pub conflicts: ConflictReport,
    pub regenerations: u32,
    pub final_code: String,
    /// Context memory namespaces after selection.
    pub retained: Vec<String>,
    /// Completion-side tokens (prompt plus completion) spent this round.
    pub tokens: u64,
    pub wall_ms: u64,
    pub test_outcome: Option<TestOutcome>,
    #[serde(default)]
    pub diagnostics: Vec<String>,
    /// Namespaces whose values were replaced by keys to fit the prompt budget.
    #[serde(default)]
    pub truncated: Vec<String>,
}

/// Context values for the generation prompt. Blocks past the character
/// budget contribute only their key; their namespaces are returned.
fn render_repo_context(memory: &ContextMemory, budget: usize) -> (String, Vec<String>) {
    let mut used = 0;
    let mut parts = Vec::new();
    let mut truncated = Vec::new();
    for block in memory.blocks() {
        let header = if block.file_path.is_empty() {
            format!("# {}", block.namespace)
        } else {
            format!("# {} ({})", block.namespace, block.file_path)
        };
        let full = format!("{header}\n{}", block.value.trim_end());
        let part = if used + full.len() <= budget {
            full
        } else {
            truncated.push(block.namespace.clone());
            format!("{header}\n{}", block.key.render())
        };
        used += part.len();
        parts.push(part);
    }
    (parts.join("\n\n"), truncated)
}

/// Runs one round of the pipeline. Any error leaves `state` as it was at
/// round start.
pub fn run_round(state: &mut SessionState, instruction: &str, gateway: &Gateway) -> Result<RoundRecord> {
    let started = Instant::now();
    let usage_before = gateway.usage();
    let mut next = state.clone();
    let round = next.round + 1;
    next.instructions.push(instruction.to_owned());
    let static_context = next.config.ablated(Ablation::Ctxmem) && round > 1;
    let mut diagnostics = Vec::new();

    // (1) and (2): judge, then retrieval and merge on ADD.
    let mut decision = None;
    let mut retrieved = Vec::new();
    if !static_context {
        let keys = next.context.rendered_keys();
        let d = decide_update(&next.instructions, &keys, gateway)?;
        if d.mode == UpdateMode::Add {
            retrieved = next.retriever.retrieve_for(&d, instruction, next.config.top_k);
            let blocks: Vec<_> = retrieved
                .iter()
                .filter_map(|ns| next.index.get(ns).cloned())
                .collect();
            next.context.merge(blocks, round);
        }
        decision = Some(d);
    }

    // (3): note on the previous block, then the working set.
    let memory_blocks = match next.store.get_mut(&next.target) {
        Some(sequence) if !sequence.is_empty() => {
            refresh_note(sequence, instruction, next.last_feedback.as_deref(), gateway)?;
            render_working_set(&working_set(sequence)?)
        }
        _ => String::new(),
    };

    // (4): generation.
    let (repo_context, truncated) = render_repo_context(&next.context, next.config.context_char_budget);
    let prompt = render_prompt(
        TemplateId::Generate,
        &[
            ("repo_context", &repo_context),
            ("memory_blocks", &memory_blocks),
            ("instruction", instruction),
        ],
    )
    .map_err(|e| Error::Domain(e.to_string()))?;
    let generated_code = strip_code_fences(&gateway.complete(&prompt)?);

    // (5): forgetting detection and regeneration.
    let mut final_code = generated_code.clone();
    let mut conflicts = ConflictReport::default();
    let mut regenerations = 0;
    if !next.config.ablated(Ablation::Sessast) {
        let tau = next.config.tau;
        let mut report = match next.store.get_mut(&next.target) {
            Some(sequence) => match detect(instruction, &final_code, sequence, gateway, tau) {
                Ok(report) => report,
                Err(Error::Parse(msg)) => {
                    diagnostics.push(format!("detector skipped: {msg}"));
                    ConflictReport::default()
                }
                Err(e) => return Err(e),
            },
            None => ConflictReport::default(),
        };
        conflicts = report.clone();
        while !report.is_empty() && regenerations < next.config.regeneration_limit {
            let regen_prompt = append_conflicts(&prompt, &final_code, &report.render());
            final_code = strip_code_fences(&gateway.complete(&regen_prompt)?);
            regenerations += 1;
            report = ConflictReport::default();
            if next.config.rerun_detector {
                if let Some(sequence) = next.store.get_mut(&next.target) {
                    match detect(instruction, &final_code, sequence, gateway, tau) {
                        Ok(r) => report = r,
                        Err(Error::Parse(msg)) => diagnostics.push(format!("detector skipped: {msg}")),
                        Err(e) => return Err(e),
                    }
                }
            }
        }
    }

    // (6): prune context memory against the final code.
    if !static_context && !next.config.ablated(Ablation::Ctxast) {
        let selection = select(&next.context, &final_code);
        diagnostics.extend(selection.diagnostic);
        next.context = selection.memory;
    }

    // (7): session memory.
    let block_id = match record_round(&mut next.store, &next.target, instruction, &final_code) {
        Ok(outcome) => {
            diagnostics.extend(outcome.rename);
            outcome.block.id
        }
        Err(e @ (Error::Parse(_) | Error::TargetMismatch { .. })) => {
            diagnostics.push(format!("recorded with empty diff: {e}"));
            record_unparsed(&mut next.store, &next.target, instruction, &final_code).id
        }
        Err(e) => return Err(e),
    };
    let tau = next.config.tau;
    let sequence = next
        .store
        .get_mut(&next.target)
        .expect("sequence exists after recording");
    link_block(sequence, block_id, gateway, tau)?;

    next.round = round;
    let record = RoundRecord {
        round,
        instruction: instruction.to_owned(),
        decision,
        retrieved,
        generated_code,
        conflicts,
        regenerations,
        final_code,
        retained: next.context.namespaces().into_iter().collect(),
        tokens: gateway.usage().since(&usage_before).llm_tokens(),
        wall_ms: started.elapsed().as_millis() as u64,
        test_outcome: None,
        diagnostics,
        truncated,
    };
    *state = next;
    Ok(record)
}

/// All rounds of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub task_id: String,
    pub target: String,
    #[serde(default)]
    pub gold_context: Vec<String>,
    pub rounds: Vec<RoundRecord>,
}

impl Transcript {
    pub fn total_tokens(&self) -> u64 {
        self.rounds.iter().map(|r| r.tokens).sum()
    }

    pub fn total_wall_ms(&self) -> u64 {
        self.rounds.iter().map(|r| r.wall_ms).sum()
    }
}

/// Names and output of failing tests, used as the next round's feedback.
fn failure_summary(results: &BTreeMap<String, TestResult>) -> Option<String> {
    let failures: Vec<String> = results
        .iter()
        .filter(|(_, r)| !r.passed)
        .map(|(id, r)| {
            let output = r.output.trim();
            if output.is_empty() {
                format!("FAILED {id}")
            } else {
                format!("FAILED {id}\n{output}")
            }
        })
        .collect();
    (!failures.is_empty()).then(|| failures.join("\n\n"))
}

fn run_tests(
    runner: &dyn TestRunner,
    state: &SessionState,
    task: &Task,
    code: &str,
    round_tests: &[String],
    cumulative: &[String],
) -> (TestOutcome, Option<String>) {
    let mut outcome = TestOutcome {
        round_tests: round_tests.to_vec(),
        ..TestOutcome::default()
    };
    if cumulative.is_empty() {
        return (outcome, None);
    }
    match runner.run(task, &state.index.root, code, cumulative) {
        Ok(results) => {
            outcome.results = results.iter().map(|(id, r)| (id.clone(), r.passed)).collect();
            let feedback = failure_summary(&results)
                .map(|summary| task.feedback.clone().unwrap_or(summary));
            (outcome, feedback)
        }
        Err(e) => {
            let message = e.to_string();
            outcome.error = Some(message.clone());
            (outcome, Some(task.feedback.clone().unwrap_or(message)))
        }
    }
}

/// Indexes `repo_root` and runs every round of `task`.
pub fn run_session(
    config: &Config,
    repo_root: &Path,
    task: &Task,
    runner: &dyn TestRunner,
    gateway: &Gateway,
) -> Result<Transcript> {
    let index = Arc::new(index_repository(repo_root, &config.include)?);
    run_session_with_index(config, index, task, runner, gateway)
}

/// Session loop over an existing index.
///
/// Iterative tasks run one round per instruction and test the cumulative
/// set after each. Repeat tasks (a single prompt with fixed feedback) send
/// the feedback as the next instruction until the tests pass or the round
/// budget is spent.
pub fn run_session_with_index(
    config: &Config,
    index: Arc<BlockIndex>,
    task: &Task,
    runner: &dyn TestRunner,
    gateway: &Gateway,
) -> Result<Transcript> {
    let mut state = SessionState::new(index, config.clone(), &task.target);
    let mut transcript = Transcript {
        task_id: task.id.clone(),
        target: task.target.clone(),
        gold_context: task.gold_context.clone(),
        rounds: Vec::new(),
    };
    let mut cumulative: Vec<String> = Vec::new();
    for round in 0..task.round_count() {
        let instruction = task.instruction_for(round);
        let round_tests = task.tests_for(round).to_vec();
        for t in &round_tests {
            if !cumulative.contains(t) {
                cumulative.push(t.clone());
            }
        }
        let mut record = run_round(&mut state, &instruction, gateway)?;
        let (outcome, feedback) = run_tests(runner, &state, task, &record.final_code, &round_tests, &cumulative);
        if let Some(err) = &outcome.error {
            log::warn!("task {} round {}: {err}", task.id, record.round);
        }
        let solved = task.is_repeat() && outcome.round_passed() && !round_tests.is_empty();
        state.last_feedback = feedback;
        record.test_outcome = Some(outcome);
        transcript.rounds.push(record);
        if solved {
            break;
        }
    }
    Ok(transcript)
}
