//! Statement-level AST diffs between two versions of a function.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use tree_sitter::Node;

use crate::error::Result;
use crate::python::{self, ParsedSource};

/// One body statement, identified by its canonical rendering. A compound
/// statement is a single node covering its header and whole body.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiffNode {
    #[serde(rename = "type")]
    pub node_type: String,
    #[serde(rename = "block")]
    pub canonical_text: String,
}

impl DiffNode {
    pub fn new(node_type: impl Into<String>, canonical_text: impl Into<String>) -> Self {
        Self {
            node_type: node_type.into(),
            canonical_text: canonical_text.into(),
        }
    }
}

impl PartialEq for DiffNode {
    fn eq(&self, other: &Self) -> bool {
        self.canonical_text == other.canonical_text
    }
}

impl Eq for DiffNode {}

impl Hash for DiffNode {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.canonical_text.hash(state);
    }
}

impl PartialOrd for DiffNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for DiffNode {
    fn cmp(&self, other: &Self) -> Ordering {
        self.canonical_text.cmp(&other.canonical_text)
    }
}

pub type NodeSet = BTreeSet<DiffNode>;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AstDiff {
    pub added: NodeSet,
    pub removed: NodeSet,
}

impl AstDiff {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }

    /// Applies this diff to a canonical statement set.
    pub fn apply(&self, base: &NodeSet) -> NodeSet {
        base.difference(&self.removed)
            .chain(self.added.iter())
            .cloned()
            .collect()
    }
}

/// `If+Raise` style label: the statement kind followed by the distinct
/// kinds of its immediate body statements, in order of first appearance.
fn node_label(stmt: Node<'_>) -> String {
    let mut parts = vec![python::statement_kind(stmt)];
    if let Some(body) = python::primary_body(stmt) {
        for child in python::named_children(body) {
            let kind = python::statement_kind(child);
            if !parts[1..].contains(&kind) {
                parts.push(kind);
            }
        }
    }
    parts.join("+")
}

fn statements_of(parsed: &ParsedSource, function_name: Option<&str>) -> NodeSet {
    let root = parsed.root();
    let body = python::find_function(root, parsed.source(), function_name)
        .and_then(|f| f.child_by_field_name("body"))
        .unwrap_or(root);
    python::named_children(body)
        .into_iter()
        .map(|stmt| DiffNode::new(node_label(stmt), python::canonical_text(stmt, parsed.source())))
        .collect()
}

/// Name of the function `code` defines, preferring `hint`.
pub fn function_name(code: &str, hint: Option<&str>) -> Result<Option<String>> {
    let parsed = ParsedSource::parse(code)?;
    Ok(python::find_function(parsed.root(), parsed.source(), hint)
        .and_then(|f| python::definition_name(f, parsed.source()))
        .map(str::to_owned))
}

/// Canonical statements of the function body in `code`. The function is
/// chosen by name when given, else the first top-level function; code
/// without any function contributes its module-level statements.
pub fn canonical_statements(code: &str, function_name: Option<&str>) -> Result<NodeSet> {
    let parsed = ParsedSource::parse(code)?;
    Ok(statements_of(&parsed, function_name))
}

pub fn ast_diff(prev_code: &str, new_code: &str) -> Result<AstDiff> {
    ast_diff_named(prev_code, new_code, None)
}

/// Diff of canonical statement sets. Without a name hint, the new version's
/// function is matched by the previous version's function name.
pub fn ast_diff_named(prev_code: &str, new_code: &str, function_name: Option<&str>) -> Result<AstDiff> {
    let prev = ParsedSource::parse(prev_code)?;
    let new = ParsedSource::parse(new_code)?;
    let prev_name = match function_name {
        Some(n) => Some(n.to_owned()),
        None => python::find_function(prev.root(), prev.source(), None)
            .and_then(|f| python::definition_name(f, prev.source()))
            .map(str::to_owned),
    };
    let before = statements_of(&prev, prev_name.as_deref());
    let after = statements_of(&new, prev_name.as_deref());
    Ok(AstDiff {
        added: after.difference(&before).cloned().collect(),
        removed: before.difference(&after).cloned().collect(),
    })
}

/// Nodes the current change adds that an earlier change removed, or removes
/// that an earlier change added.
pub fn conflicts(current: &AstDiff, earlier: &AstDiff) -> NodeSet {
    current
        .removed
        .intersection(&earlier.added)
        .chain(current.added.intersection(&earlier.removed))
        .cloned()
        .collect()
}
