//! Prompt templates and parsing of the judge's JSON decision.

use serde_json::Value;
use thiserror::Error;

use crate::context::{UpdateDecision, UpdateMode};

/// Substituted for slots whose value is empty.
pub const EMPTY_SLOT: &str = "(empty)";

/// Distinctive substrings of each prompt kind, handy for routing scripted
/// responses.
pub const JUDGE_MARKER: &str = "expert repository memory manager";
pub const GENERATE_MARKER: &str = "expert repository-level code generator";
pub const NOTE_MARKER: &str = "modification note";
pub const REGENERATE_MARKER: &str = "Conflicting Memory Blocks";

const JUDGE_TEMPLATE: &str = r#"You are an expert repository memory manager for repository code generation tasks.

Your goal is to decide whether the current repository code context memory needs updating based on the user's programming instructions.

Decision Objective

Decide if you need to modify the repository memory (Existing Repository Context) based on how well it already covers the entities mentioned in the user instructions.

Modes (Mutually Exclusive)

- KEEP — Use this mode when the existing repository context already contains all relevant classes/functions to understand or execute the instruction.
- ADD — Use this mode when Existing Repository Context lacks code context related to user instructions.

User Instructions:
<<<
{instructions}
>>>

Existing Repository Context:
<<<
{existing_repository_context}
>>>

Output Format (strict JSON)

{
  "mode": "<ADD | KEEP>",
  "action": "<short, specific description of what to update or not update>",
  "target_context": "<list of relevant namespaces or []>"
}
"#;

const GENERATE_TEMPLATE: &str = r#"You are an expert repository-level code generator.

Your goal is to generate the correct function implementation by leveraging the provided repository context and historical memory blocks.

Repo Context
<<<
{repo_context}
>>>

Memory Blocks
<<<
{memory_blocks}
>>>

Current Instruction
<<<
{instruction}
>>>

Output Requirement

Please output the correct function implementation.
"#;

const NOTE_TEMPLATE: &str = r#"You maintain session memory for an iterative code generation task.

Write a modification note of one to three sentences about the previous round: what the code change did, whether it satisfied the previous instruction given the execution feedback, and what later rounds should keep or correct.

Previous Instruction
<<<
{previous_instruction}
>>>

Previous Code
<<<
{previous_code}
>>>

AST Diff Nodes
<<<
{diff_nodes}
>>>

Execution Feedback
<<<
{feedback}
>>>

Current Instruction
<<<
{current_instruction}
>>>

Output only the note text.
"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateId {
    Judge,
    Generate,
    Note,
}

impl TemplateId {
    fn template(self) -> &'static str {
        match self {
            TemplateId::Judge => JUDGE_TEMPLATE,
            TemplateId::Generate => GENERATE_TEMPLATE,
            TemplateId::Note => NOTE_TEMPLATE,
        }
    }

    pub fn slots(self) -> &'static [&'static str] {
        match self {
            TemplateId::Judge => &["instructions", "existing_repository_context"],
            TemplateId::Generate => &["repo_context", "memory_blocks", "instruction"],
            TemplateId::Note => &[
                "previous_instruction",
                "previous_code",
                "diff_nodes",
                "feedback",
                "current_instruction",
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("missing prompt slot `{slot}` for {template:?} template")]
pub struct MissingSlot {
    pub template: TemplateId,
    pub slot: &'static str,
}

/// Fills every `{slot}` of the template in one pass, so slot values that
/// happen to contain `{name}` are never substituted again. Empty values
/// render as [`EMPTY_SLOT`].
pub fn render_prompt(template_id: TemplateId, slots: &[(&str, &str)]) -> Result<String, MissingSlot> {
    let names = template_id.slots();
    let mut values = Vec::with_capacity(names.len());
    for name in names {
        let value = slots
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| *v)
            .ok_or(MissingSlot {
                template: template_id,
                slot: name,
            })?;
        values.push(if value.trim().is_empty() { EMPTY_SLOT } else { value });
    }

    let template = template_id.template();
    let mut out = String::with_capacity(template.len() + values.iter().map(|v| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = names.iter().zip(&values).find(|(name, _)| {
            after.starts_with(**name) && after[name.len()..].starts_with('}')
        });
        match hit {
            Some((name, value)) => {
                out.push_str(value);
                rest = &after[name.len() + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Extends a rendered generation prompt with the detector's findings so the
/// model can regenerate without undoing earlier validated changes.
pub fn append_conflicts(generate_prompt: &str, candidate_code: &str, conflicts: &str) -> String {
    format!(
        "{generate_prompt}\n{REGENERATE_MARKER}\n\nThe candidate implementation below reverses changes recorded in earlier rounds under different instructions. Regenerate the function so it satisfies the current instruction while keeping those earlier changes, unless the current instruction explicitly asks to undo them.\n\nCandidate Code\n<<<\n{}\n>>>\n\nConflicts\n<<<\n{}\n>>>\n",
        candidate_code.trim_end(),
        conflicts.trim_end()
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot parse update decision: {0}")]
pub struct DecisionParseError(pub String);

/// The first balanced `{...}` in `text`, honoring JSON string escapes.
fn first_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + offset + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

fn parse_target_context(value: Option<&Value>) -> Result<Vec<String>, DecisionParseError> {
    match value {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::Array(items)) => items
            .iter()
            .map(|item| {
                item.as_str()
                    .map(|s| s.trim().to_owned())
                    .ok_or_else(|| DecisionParseError("target_context entries must be strings".into()))
            })
            .filter(|r| r.as_ref().map_or(true, |s| !s.is_empty()))
            .collect(),
        Some(Value::String(s)) => {
            let s = s.trim();
            if s.is_empty() || s == "[]" {
                return Ok(Vec::new());
            }
            if let Ok(Value::Array(items)) = serde_json::from_str::<Value>(s) {
                return parse_target_context(Some(&Value::Array(items)));
            }
            Ok(vec![s.to_owned()])
        }
        Some(_) => Err(DecisionParseError("target_context must be a list or string".into())),
    }
}

/// Parses the judge's completion. Only the first JSON object is considered;
/// `mode` must be ADD or KEEP. A KEEP decision never carries targets.
pub fn parse_decision(completion: &str) -> Result<UpdateDecision, DecisionParseError> {
    let object = first_json_object(completion)
        .ok_or_else(|| DecisionParseError("no JSON object in completion".into()))?;
    let value: Value =
        serde_json::from_str(object).map_err(|e| DecisionParseError(format!("invalid JSON: {e}")))?;
    let map = value
        .as_object()
        .ok_or_else(|| DecisionParseError("decision is not an object".into()))?;
    let mode = match map.get("mode").and_then(Value::as_str).map(str::trim) {
        Some(m) if m.eq_ignore_ascii_case("ADD") => UpdateMode::Add,
        Some(m) if m.eq_ignore_ascii_case("KEEP") => UpdateMode::Keep,
        Some(m) => return Err(DecisionParseError(format!("invalid mode {m:?}"))),
        None => return Err(DecisionParseError("missing string field `mode`".into())),
    };
    let action = match map.get("action") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(DecisionParseError("`action` must be a string".into())),
    };
    let target_context = match mode {
        UpdateMode::Keep => Vec::new(),
        UpdateMode::Add => parse_target_context(map.get("target_context"))?,
    };
    Ok(UpdateDecision {
        mode,
        action,
        target_context,
    })
}
