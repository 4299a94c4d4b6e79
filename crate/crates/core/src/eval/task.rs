//! Benchmark tasks and the loaders for the two record formats.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::module_path;
use crate::store::from_json_str;

/// Feedback sent after a failed attempt on repeat-style tasks.
pub const DEFAULT_FEEDBACK: &str = "Your answer is incorrect. Please regenerate.";
pub const DEFAULT_REPEAT_BUDGET: u32 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    /// Namespace of the function to generate.
    pub target: String,
    /// Repository directory, relative to the benchmark's repository root.
    pub repo: PathBuf,
    /// File holding the target, relative to `repo`.
    pub completion_path: Option<PathBuf>,
    pub instructions: Vec<String>,
    /// Test ids introduced by each instruction.
    pub round_tests: Vec<Vec<String>>,
    #[serde(default)]
    pub gold_context: Vec<String>,
    /// Fixed feedback; set for repeat-style tasks.
    pub feedback: Option<String>,
    /// Round budget for repeat-style tasks.
    pub budget: u32,
}

impl Task {
    /// A one-instruction task without tests.
    pub fn single(id: impl Into<String>, target: impl Into<String>, instruction: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            target: target.into(),
            repo: PathBuf::new(),
            completion_path: None,
            instructions: vec![instruction.into()],
            round_tests: vec![Vec::new()],
            gold_context: Vec::new(),
            feedback: None,
            budget: 1,
        }
    }

    /// A multi-instruction task with one test list per instruction.
    pub fn iterative(
        id: impl Into<String>,
        target: impl Into<String>,
        rounds: impl IntoIterator<Item = (String, Vec<String>)>,
    ) -> Self {
        let (instructions, round_tests): (Vec<_>, Vec<_>) = rounds.into_iter().unzip();
        Self {
            budget: instructions.len() as u32,
            instructions,
            round_tests,
            ..Self::single(id, target, "")
        }
    }

    /// Single prompt repeated with fixed feedback until solved.
    pub fn is_repeat(&self) -> bool {
        self.feedback.is_some() && self.instructions.len() == 1
    }

    pub fn round_count(&self) -> usize {
        if self.is_repeat() {
            self.budget as usize
        } else {
            self.instructions.len()
        }
    }

    pub fn instruction_for(&self, round: usize) -> String {
        match (&self.feedback, round) {
            (Some(feedback), r) if r > 0 && self.is_repeat() => feedback.clone(),
            _ => self.instructions.get(round).cloned().unwrap_or_default(),
        }
    }

    pub fn tests_for(&self, round: usize) -> &[String] {
        let index = if self.is_repeat() { 0 } else { round };
        self.round_tests.get(index).map_or(&[], Vec::as_slice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bench {
    Codeif,
    Codereval,
}

impl FromStr for Bench {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "codeif" | "codeifbench" => Ok(Bench::Codeif),
            "codereval" => Ok(Bench::Codereval),
            other => Err(Error::Config(format!("unknown benchmark `{other}`"))),
        }
    }
}

impl fmt::Display for Bench {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bench::Codeif => "codeif",
            Bench::Codereval => "codereval",
        })
    }
}

#[derive(Debug, Deserialize)]
struct RequirementEntry {
    requirement: String,
    test: String,
}

#[derive(Debug, Deserialize)]
struct CodeIfRecord {
    namespace: String,
    project_path: String,
    completion_path: String,
    prompt: String,
    requirement: IndexMap<String, RequirementEntry>,
    #[serde(default)]
    gold_context: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct CoderEvalRecord {
    #[serde(rename = "_id")]
    id: String,
    file_path: String,
    project: String,
    prompt: String,
    #[serde(default)]
    feedback_prompt: Option<String>,
    #[serde(default)]
    tests: Option<Vec<String>>,
    #[serde(default)]
    gold_context: Vec<String>,
}

/// One instruction per requirement category, in record order. The task
/// prompt leads the first instruction.
pub fn load_codeif(record: &str) -> Result<Task> {
    let r: CodeIfRecord = from_json_str(record)?;
    if r.requirement.is_empty() {
        return Err(Error::schema("requirement", "no requirement entries"));
    }
    let completion_path = Path::new(&r.completion_path)
        .strip_prefix(&r.project_path)
        .map(Path::to_path_buf)
        .unwrap_or_else(|_| PathBuf::from(&r.completion_path));
    let rounds = r.requirement.values().enumerate().map(|(i, entry)| {
        let instruction = if i == 0 {
            format!("{}\n\n{}", r.prompt.trim(), entry.requirement.trim())
        } else {
            entry.requirement.trim().to_owned()
        };
        (instruction, vec![entry.test.clone()])
    });
    let mut task = Task::iterative(r.namespace.clone(), r.namespace, rounds);
    task.repo = PathBuf::from(r.project_path);
    task.completion_path = Some(completion_path);
    task.gold_context = r.gold_context;
    Ok(task)
}

fn function_in_prompt(prompt: &str) -> Option<&str> {
    let after = &prompt[prompt.find("def ")? + 4..];
    let name = after.split('(').next()?.trim();
    (!name.is_empty() && name.chars().all(|c| c.is_alphanumeric() || c == '_')).then_some(name)
}

/// A single prompt with fixed feedback and the default round budget. The
/// target is the module of `file_path` plus the function the prompt defines.
pub fn load_codereval(record: &str) -> Result<Task> {
    let r: CoderEvalRecord = from_json_str(record)?;
    let name = function_in_prompt(&r.prompt)
        .ok_or_else(|| Error::schema("prompt", "prompt does not contain `def <name>(`"))?;
    let target = format!("{}.{name}", module_path(&r.file_path));
    let tests = r.tests.unwrap_or_else(|| vec![r.id.clone()]);
    let mut task = Task::iterative(r.id, target, [(r.prompt, tests)]);
    task.repo = PathBuf::from(r.project);
    task.completion_path = Some(PathBuf::from(r.file_path));
    task.gold_context = r.gold_context;
    task.feedback = Some(r.feedback_prompt.unwrap_or_else(|| DEFAULT_FEEDBACK.to_owned()));
    task.budget = DEFAULT_REPEAT_BUDGET;
    Ok(task)
}

pub fn load_record(bench: Bench, record: &str) -> Result<Task> {
    match bench {
        Bench::Codeif => load_codeif(record),
        Bench::Codereval => load_codereval(record),
    }
}

/// Loads a line-delimited file of records. Blank lines are skipped; schema
/// errors are prefixed with the file and line.
pub fn load_tasks(bench: Bench, path: &Path) -> Result<Vec<Task>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut tasks = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let located = |field: &str| format!("{}:{}: {field}", path.display(), i + 1);
        let task = load_record(bench, line).map_err(|e| match e {
            Error::Schema { path, message } => Error::schema(located(&path), message),
            other => other,
        })?;
        tasks.push(task);
    }
    Ok(tasks)
}
