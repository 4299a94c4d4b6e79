//! Code context memory: the judge's ADD/KEEP decision, BM25 retrieval of
//! repository blocks, merging, and post-round pruning by the selector.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::api::{self, api_match};
use crate::bm25::{sort_ranked, Bm25Index, Bm25Params};
use crate::error::{Error, Result};
use crate::gateway::{parse_decision, render_prompt, Gateway, TemplateId};
use crate::index::{BlockIndex, CodeBlock};
use crate::python::ParsedSource;

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateMode {
    #[serde(rename = "ADD")]
    Add,
    #[serde(rename = "KEEP")]
    Keep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateDecision {
    pub mode: UpdateMode,
    pub action: String,
    pub target_context: Vec<String>,
}

impl UpdateDecision {
    pub fn add(action: impl Into<String>, target_context: Vec<String>) -> Self {
        Self {
            mode: UpdateMode::Add,
            action: action.into(),
            target_context,
        }
    }

    pub fn keep(action: impl Into<String>) -> Self {
        Self {
            mode: UpdateMode::Keep,
            action: action.into(),
            target_context: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ContextMemory {
    blocks: BTreeMap<String, CodeBlock>,
    round_added: BTreeMap<String, u32>,
}

impl ContextMemory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds memory from stored entries. Rounds below 1 are rejected.
    pub fn from_entries(entries: impl IntoIterator<Item = (CodeBlock, u32)>) -> Result<Self> {
        let mut memory = Self::new();
        for (block, round) in entries {
            if round == 0 {
                return Err(Error::schema(
                    format!("context_memory.{}.round_added", block.namespace),
                    "round indices start at 1",
                ));
            }
            memory.round_added.insert(block.namespace.clone(), round);
            memory.blocks.insert(block.namespace.clone(), block);
        }
        Ok(memory)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn contains(&self, namespace: &str) -> bool {
        self.blocks.contains_key(namespace)
    }

    pub fn blocks(&self) -> impl Iterator<Item = &CodeBlock> {
        self.blocks.values()
    }

    pub fn round_added(&self, namespace: &str) -> Option<u32> {
        self.round_added.get(namespace).copied()
    }

    pub fn namespaces(&self) -> BTreeSet<String> {
        self.blocks.keys().cloned().collect()
    }

    /// Keys as shown to the judge, one `[namespace]` headed entry per block.
    pub fn rendered_keys(&self) -> Vec<String> {
        self.blocks
            .values()
            .map(|b| format!("[{}]\n{}", b.namespace, b.key.render()))
            .collect()
    }

    /// Set union keyed on namespace; existing entries keep their round.
    pub fn merge(&mut self, new_blocks: impl IntoIterator<Item = CodeBlock>, round: u32) {
        let round = round.max(1);
        for block in new_blocks {
            if self.blocks.contains_key(&block.namespace) {
                continue;
            }
            self.round_added.insert(block.namespace.clone(), round);
            self.blocks.insert(block.namespace.clone(), block);
        }
    }

    fn retain(&mut self, keep: impl Fn(&CodeBlock) -> bool) {
        self.blocks.retain(|_, b| keep(b));
        let blocks = &self.blocks;
        self.round_added.retain(|ns, _| blocks.contains_key(ns));
    }
}

pub fn merge(memory: &ContextMemory, new_blocks: &[CodeBlock], round: u32) -> ContextMemory {
    let mut out = memory.clone();
    out.merge(new_blocks.iter().cloned(), round);
    out
}

fn format_history(instruction_history: &[String]) -> String {
    let last = instruction_history.len();
    instruction_history
        .iter()
        .enumerate()
        .map(|(i, text)| {
            let marker = if i + 1 == last { " (current)" } else { "" };
            format!("{}.{} {}", i + 1, marker, text.trim())
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Asks the judge whether memory needs new context. Empty memory forces ADD
/// without a gateway call. A malformed reply is retried once with an error
/// note; a second failure falls back to ADD targeted at the current
/// instruction.
pub fn decide_update(
    instruction_history: &[String],
    memory_keys: &[String],
    gateway: &Gateway,
) -> Result<UpdateDecision> {
    let current = instruction_history
        .last()
        .ok_or_else(|| Error::Domain("instruction history is empty".into()))?;
    if memory_keys.is_empty() {
        return Ok(UpdateDecision::add("context memory is empty", Vec::new()));
    }
    let prompt = render_prompt(
        TemplateId::Judge,
        &[
            ("instructions", &format_history(instruction_history)),
            ("existing_repository_context", &memory_keys.join("\n\n")),
        ],
    )
    .map_err(|e| Error::Domain(e.to_string()))?;

    let first = gateway.complete(&prompt)?;
    let err = match parse_decision(&first) {
        Ok(decision) => return Ok(decision),
        Err(e) => e,
    };
    log::warn!("judge reply unparseable, retrying: {err}");
    let retry_prompt = format!(
        "{prompt}\nYour previous reply could not be used ({err}). Reply with only the JSON object described above.\n"
    );
    let second = gateway.complete(&retry_prompt)?;
    match parse_decision(&second) {
        Ok(decision) => Ok(decision),
        Err(e) => {
            log::warn!("judge reply unparseable after retry, falling back to ADD: {e}");
            Ok(UpdateDecision::add(
                "fallback: judge output unparseable",
                vec![current.clone()],
            ))
        }
    }
}

/// BM25 retrieval over the rendered keys of an index.
#[derive(Debug, Clone)]
pub struct Retriever {
    bm25: Bm25Index,
    namespaces: BTreeSet<String>,
}

impl Retriever {
    pub fn new(index: &BlockIndex, params: Bm25Params) -> Self {
        Self {
            bm25: Bm25Index::new(
                params,
                index.blocks.values().map(|b| (b.namespace.clone(), b.key.render())),
            ),
            namespaces: index.blocks.keys().cloned().collect(),
        }
    }

    /// Top-`k` namespaces for one query.
    pub fn retrieve(&self, query: &str, k: usize) -> Vec<String> {
        self.bm25.top_k(query, k).into_iter().map(|(ns, _)| ns).collect()
    }

    /// Runs each query separately, keeps each namespace's best score, then
    /// truncates to `k`. A query equal to an indexed namespace always ranks
    /// that namespace first.
    pub fn retrieve_many<S: AsRef<str>>(&self, queries: &[S], k: usize) -> Vec<String> {
        let mut best: BTreeMap<String, f64> = BTreeMap::new();
        for query in queries {
            let query = query.as_ref().trim();
            if self.namespaces.contains(query) {
                best.insert(query.to_owned(), f64::INFINITY);
            }
            for (ns, score) in self.bm25.scores(query) {
                if score > 0.0 {
                    let entry = best.entry(ns).or_insert(score);
                    *entry = entry.max(score);
                }
            }
        }
        let mut ranked: Vec<(String, f64)> = best.into_iter().collect();
        sort_ranked(&mut ranked);
        ranked.truncate(k);
        ranked.into_iter().map(|(ns, _)| ns).collect()
    }

    /// Queries for an ADD decision: its targets, or the instruction itself.
    pub fn retrieve_for(&self, decision: &UpdateDecision, instruction: &str, k: usize) -> Vec<String> {
        if decision.target_context.is_empty() {
            self.retrieve(instruction, k)
        } else {
            self.retrieve_many(&decision.target_context, k)
        }
    }
}

/// Top-`k` blocks of `index` for `query` with default BM25 parameters.
pub fn retrieve_relevant(query: &str, index: &BlockIndex, k: usize) -> Vec<CodeBlock> {
    Retriever::new(index, Bm25Params::default())
        .retrieve(query, k)
        .into_iter()
        .filter_map(|ns| index.get(&ns).cloned())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub memory: ContextMemory,
    /// Set when pruning was skipped because the generated code does not parse.
    pub diagnostic: Option<String>,
}

/// Keeps exactly the blocks whose external or internal APIs match an
/// external API of `generated_code`. Unparseable code leaves memory as is.
pub fn select(memory: &ContextMemory, generated_code: &str) -> Selection {
    let parsed = match ParsedSource::parse(generated_code) {
        Ok(p) => p,
        Err(e) => {
            return Selection {
                memory: memory.clone(),
                diagnostic: Some(format!("selector skipped: {e}")),
            }
        }
    };
    let external = api::call_targets_in(&parsed);
    let mut out = memory.clone();
    out.retain(|block| {
        let names = match api::api_profile(block) {
            Ok(profile) => profile.all().cloned().collect(),
            // Stored values may be abbreviated; fall back to defined names.
            Err(_) => api::defined_names(block),
        };
        api_match(&names, &external)
    });
    Selection {
        memory: out,
        diagnostic: None,
    }
}
