//! Code session memory: per-function sequences of round records with AST
//! diffs and notes, instruction-similarity links, and the forgetting
//! detector.

mod diff;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use diff::{
    ast_diff, ast_diff_named, canonical_statements, conflicts, function_name, AstDiff, DiffNode,
    NodeSet,
};

use crate::error::{Error, Result};
use crate::gateway::{render_prompt, similarity, Embedding, Gateway, TemplateId};
use crate::python::ParsedSource;

pub const DEFAULT_TAU: f64 = 0.95;

/// One interaction round. Serialized field names follow the stored session
/// memory format. Equality ignores the cached embedding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionBlock {
    pub id: u32,
    pub instruction: String,
    pub code: String,
    #[serde(default)]
    pub note: String,
    #[serde(rename = "diff_nodes", default)]
    pub diff: AstDiff,
    #[serde(rename = "state_links", default)]
    pub links: Vec<u32>,
    /// Cached instruction embedding; recomputed on demand after a reload.
    #[serde(skip)]
    pub embedding: Option<Embedding>,
}

impl PartialEq for SessionBlock {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.instruction == other.instruction
            && self.code == other.code
            && self.note == other.note
            && self.diff == other.diff
            && self.links == other.links
    }
}

impl SessionBlock {
    fn new(id: u32, instruction: &str, code: &str, diff: AstDiff) -> Self {
        Self {
            id,
            instruction: instruction.to_owned(),
            code: code.to_owned(),
            note: String::new(),
            diff,
            links: Vec::new(),
            embedding: None,
        }
    }

    fn instruction_embedding(&mut self, gateway: &Gateway) -> Result<&Embedding> {
        if self.embedding.is_none() {
            self.embedding = Some(gateway.embed(&self.instruction)?);
        }
        Ok(self.embedding.as_ref().expect("embedding just cached"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemorySequence {
    pub namespace: String,
    pub blocks: Vec<SessionBlock>,
}

impl MemorySequence {
    pub fn new(namespace: impl Into<String>) -> Self {
        Self {
            namespace: namespace.into(),
            blocks: Vec::new(),
        }
    }

    pub fn latest(&self) -> Option<&SessionBlock> {
        self.blocks.last()
    }

    pub fn latest_mut(&mut self) -> Option<&mut SessionBlock> {
        self.blocks.last_mut()
    }

    pub fn get(&self, id: u32) -> Option<&SessionBlock> {
        self.blocks.get(id as usize)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    fn target_name(&self) -> &str {
        self.namespace.rsplit('.').next().unwrap_or(&self.namespace)
    }

    /// Most recent code that parses; the diff base for the next round.
    pub fn latest_parseable_code(&self) -> Option<&str> {
        self.blocks
            .iter()
            .rev()
            .map(|b| b.code.as_str())
            .find(|code| ParsedSource::parse(code).is_ok())
    }

    /// Replays diffs from the first parseable block and checks that every
    /// later parseable block's canonical statements are reproduced.
    pub fn reconstruction_holds(&self) -> bool {
        let name = Some(self.target_name());
        let mut state: Option<NodeSet> = None;
        for block in &self.blocks {
            let Ok(actual) = canonical_statements(&block.code, name) else {
                continue;
            };
            let expected = match &state {
                None => actual.clone(),
                Some(prev) => block.diff.apply(prev),
            };
            let matches = expected.len() == actual.len()
                && expected.iter().zip(&actual).all(|(a, b)| a.canonical_text == b.canonical_text);
            if !matches {
                return false;
            }
            state = Some(actual);
        }
        true
    }

    fn validate(&self) -> Result<()> {
        for (position, block) in self.blocks.iter().enumerate() {
            let path = format!("{}[{position}]", self.namespace);
            if block.id as usize != position {
                return Err(Error::schema(
                    format!("{path}.id"),
                    format!("expected id {position}, found {}", block.id),
                ));
            }
            if position == 0 && !block.diff.is_empty() {
                return Err(Error::schema(format!("{path}.diff_nodes"), "first block must have an empty diff"));
            }
            if let Some(bad) = block.links.iter().find(|l| **l >= block.id) {
                return Err(Error::schema(
                    format!("{path}.state_links"),
                    format!("link {bad} does not reference an earlier block"),
                ));
            }
            if let Some(both) = block.diff.added.intersection(&block.diff.removed).next() {
                return Err(Error::schema(
                    format!("{path}.diff_nodes"),
                    format!("node {:?} is both added and removed", both.canonical_text),
                ));
            }
        }
        Ok(())
    }
}

/// All memory sequences of a session, keyed by target namespace.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, Vec<SessionBlock>>", into = "BTreeMap<String, Vec<SessionBlock>>")]
pub struct SessionStore {
    sequences: BTreeMap<String, MemorySequence>,
}

impl TryFrom<BTreeMap<String, Vec<SessionBlock>>> for SessionStore {
    type Error = Error;

    fn try_from(raw: BTreeMap<String, Vec<SessionBlock>>) -> Result<Self> {
        let mut store = SessionStore::default();
        for (namespace, blocks) in raw {
            let sequence = MemorySequence {
                namespace: namespace.clone(),
                blocks,
            };
            sequence.validate()?;
            store.sequences.insert(namespace, sequence);
        }
        Ok(store)
    }
}

impl From<SessionStore> for BTreeMap<String, Vec<SessionBlock>> {
    fn from(store: SessionStore) -> Self {
        store
            .sequences
            .into_iter()
            .map(|(ns, seq)| (ns, seq.blocks))
            .collect()
    }
}

impl SessionStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, namespace: &str) -> Option<&MemorySequence> {
        self.sequences.get(namespace)
    }

    pub fn get_mut(&mut self, namespace: &str) -> Option<&mut MemorySequence> {
        self.sequences.get_mut(namespace)
    }

    pub fn sequences(&self) -> impl Iterator<Item = &MemorySequence> {
        self.sequences.values()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordOutcome {
    pub block: SessionBlock,
    /// Set when the generated function's name differs from the target's.
    pub rename: Option<String>,
}

/// Appends a round to `target`'s sequence (creating it on first use) with
/// the AST diff against the latest parseable code.
pub fn record_round(store: &mut SessionStore, target: &str, instruction: &str, code: &str) -> Result<RecordOutcome> {
    let target_name = target.rsplit('.').next().unwrap_or(target);
    let parsed = ParsedSource::parse(code)?;
    let top_functions: Vec<String> = crate::python::named_children(parsed.root())
        .into_iter()
        .map(crate::python::unwrap_decorated)
        .filter(|n| n.kind() == "function_definition")
        .filter_map(|n| crate::python::definition_name(n, parsed.source()).map(str::to_owned))
        .collect();
    let found = function_name(code, Some(target_name))?
        .ok_or_else(|| Error::Parse("generated code defines no function".into()))?;
    let rename = if found == target_name {
        None
    } else if top_functions.len() > 1 {
        return Err(Error::TargetMismatch {
            target: target.to_owned(),
            found: top_functions.join(", "),
        });
    } else {
        Some(format!("generated function `{found}` recorded under target `{target}`"))
    };

    let sequence = store
        .sequences
        .entry(target.to_owned())
        .or_insert_with(|| MemorySequence::new(target));
    let diff = match sequence.latest_parseable_code() {
        None => AstDiff::default(),
        Some(prev) => ast_diff_named(prev, code, Some(target_name))?,
    };
    let id = sequence.blocks.len() as u32;
    let block = SessionBlock::new(id, instruction, code, if id == 0 { AstDiff::default() } else { diff });
    sequence.blocks.push(block.clone());
    debug_assert!(sequence.reconstruction_holds());
    Ok(RecordOutcome { block, rename })
}

/// Records a round whose code does not parse, with an empty diff. Later
/// diffs skip it and compare against the last parseable code.
pub fn record_unparsed(store: &mut SessionStore, target: &str, instruction: &str, code: &str) -> SessionBlock {
    let sequence = store
        .sequences
        .entry(target.to_owned())
        .or_insert_with(|| MemorySequence::new(target));
    let block = SessionBlock::new(sequence.blocks.len() as u32, instruction, code, AstDiff::default());
    sequence.blocks.push(block.clone());
    block
}

/// Links block `block_id` to every earlier block whose instruction
/// similarity is at least `tau`; stores and returns the link ids.
pub fn link_block(sequence: &mut MemorySequence, block_id: u32, gateway: &Gateway, tau: f64) -> Result<Vec<u32>> {
    let index = block_id as usize;
    if index >= sequence.blocks.len() {
        return Err(Error::Domain(format!("block {block_id} is not in sequence {}", sequence.namespace)));
    }
    let (earlier, rest) = sequence.blocks.split_at_mut(index);
    let block = &mut rest[0];
    let current = block.instruction_embedding(gateway)?.clone();
    let mut links = Vec::new();
    for prior in earlier.iter_mut() {
        if similarity(&current, prior.instruction_embedding(gateway)?) >= tau {
            links.push(prior.id);
        }
    }
    block.links = links.clone();
    Ok(links)
}

/// The latest block followed by its linked blocks in id order.
pub fn working_set(sequence: &MemorySequence) -> Result<Vec<&SessionBlock>> {
    let latest = sequence.latest().ok_or(Error::EmptySequence)?;
    let mut ids = latest.links.clone();
    ids.sort_unstable();
    ids.dedup();
    let mut out = vec![latest];
    out.extend(
        ids.into_iter()
            .filter(|id| *id != latest.id)
            .filter_map(|id| sequence.get(id)),
    );
    Ok(out)
}

/// Serialized working set for the generation prompt.
pub fn render_working_set(blocks: &[&SessionBlock]) -> String {
    let items: Vec<_> = blocks
        .iter()
        .map(|b| {
            serde_json::json!({
                "id": b.id,
                "instruction": b.instruction,
                "code": b.code,
                "diff_nodes": b.diff,
                "note": b.note,
            })
        })
        .collect();
    if items.is_empty() {
        String::new()
    } else {
        serde_json::to_string_pretty(&items).expect("json values serialize")
    }
}

fn render_diff_nodes(diff: &AstDiff) -> String {
    serde_json::to_string_pretty(diff).expect("json values serialize")
}

/// Regenerates the latest block's note from its instruction, code, diff,
/// the execution feedback and the current instruction. On gateway failure
/// the previous note is kept and the error returned.
pub fn refresh_note(
    sequence: &mut MemorySequence,
    current_instruction: &str,
    feedback: Option<&str>,
    gateway: &Gateway,
) -> Result<String> {
    let block = sequence.latest_mut().ok_or(Error::EmptySequence)?;
    let prompt = render_prompt(
        TemplateId::Note,
        &[
            ("previous_instruction", &block.instruction),
            ("previous_code", &block.code),
            ("diff_nodes", &render_diff_nodes(&block.diff)),
            ("feedback", feedback.unwrap_or("")),
            ("current_instruction", current_instruction),
        ],
    )
    .map_err(|e| Error::Domain(e.to_string()))?;
    let note = gateway.complete(&prompt)?.trim().to_owned();
    block.note = note.clone();
    Ok(note)
}

/// Ids of blocks whose instruction similarity to `current_instruction` is
/// strictly below `tau`.
pub fn candidate_blocks(
    current_instruction: &str,
    sequence: &mut MemorySequence,
    gateway: &Gateway,
    tau: f64,
) -> Result<Vec<u32>> {
    if sequence.is_empty() {
        return Ok(Vec::new());
    }
    let current = gateway.embed(current_instruction)?;
    let mut out = Vec::new();
    for block in &mut sequence.blocks {
        if similarity(&current, block.instruction_embedding(gateway)?) < tau {
            out.push(block.id);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conflict {
    pub block_id: u32,
    pub instruction: String,
    pub nodes: NodeSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConflictReport {
    pub conflicts: Vec<Conflict>,
}

impl ConflictReport {
    pub fn is_empty(&self) -> bool {
        self.conflicts.is_empty()
    }

    pub fn block_ids(&self) -> Vec<u32> {
        self.conflicts.iter().map(|c| c.block_id).collect()
    }

    pub fn render(&self) -> String {
        serde_json::to_string_pretty(self).expect("json values serialize")
    }
}

/// Compares the change from the latest recorded code to `new_code` with the
/// recorded changes of dissimilar-instruction blocks, reporting every block
/// whose change `new_code` contradicts.
pub fn detect(
    current_instruction: &str,
    new_code: &str,
    sequence: &mut MemorySequence,
    gateway: &Gateway,
    tau: f64,
) -> Result<ConflictReport> {
    ParsedSource::parse(new_code)?;
    let Some(base) = sequence.latest_parseable_code() else {
        return Ok(ConflictReport::default());
    };
    let name = sequence.target_name().to_owned();
    let current = ast_diff_named(base, new_code, Some(&name))?;
    if current.is_empty() {
        return Ok(ConflictReport::default());
    }
    let candidates = candidate_blocks(current_instruction, sequence, gateway, tau)?;
    let mut report = ConflictReport::default();
    for id in candidates {
        let block = &sequence.blocks[id as usize];
        let nodes = conflicts(&current, &block.diff);
        if !nodes.is_empty() {
            report.conflicts.push(Conflict {
                block_id: id,
                instruction: block.instruction.clone(),
                nodes,
            });
        }
    }
    Ok(report)
}
