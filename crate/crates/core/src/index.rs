//! Repository indexing: every top-level function and class of a Python tree
//! becomes a [`CodeBlock`] with a compact key and its full source as value.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use globset::{Glob, GlobSet, GlobSetBuilder};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tree_sitter::Node;
use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::python::{self, ParsedSource};

pub const DEFAULT_INCLUDE: &str = "**/*.py";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockKind {
    Function,
    Class,
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockKind::Function => f.write_str("Function"),
            BlockKind::Class => f.write_str("Class"),
        }
    }
}

/// LLM-facing summary of a block. Serializes with the `memory_key` field
/// names used by stored context memory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BlockKey {
    Function {
        #[serde(rename = "function_signature")]
        signature_with_doc: String,
    },
    Class {
        #[serde(rename = "class_signature")]
        class_signature_with_doc: String,
        #[serde(rename = "class_attributes")]
        attributes: Vec<String>,
        #[serde(rename = "class_methods")]
        methods: Vec<String>,
    },
}

impl BlockKey {
    pub fn kind(&self) -> BlockKind {
        match self {
            BlockKey::Function { .. } => BlockKind::Function,
            BlockKey::Class { .. } => BlockKind::Class,
        }
    }

    /// Sorts and deduplicates the class name lists.
    pub fn normalized(mut self) -> Self {
        if let BlockKey::Class {
            attributes,
            methods,
            ..
        } = &mut self
        {
            attributes.sort();
            attributes.dedup();
            methods.sort();
            methods.dedup();
        }
        self
    }

    /// Compact text shown to the memory judge. Never includes the value.
    pub fn render(&self) -> String {
        match self {
            BlockKey::Function { signature_with_doc } => signature_with_doc.clone(),
            BlockKey::Class {
                class_signature_with_doc,
                attributes,
                methods,
            } => format!(
                "{class_signature_with_doc}\nclass_attributes: [{}]\nclass_methods: [{}]",
                attributes.join(", "),
                methods.join(", ")
            ),
        }
    }
}

pub fn render_key(key: &BlockKey) -> String {
    key.render()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeBlock {
    pub namespace: String,
    pub file_path: String,
    pub kind: BlockKind,
    pub key: BlockKey,
    pub value: String,
}

impl CodeBlock {
    /// Name of the defined function or class (last namespace segment).
    pub fn name(&self) -> &str {
        self.namespace.rsplit('.').next().unwrap_or(&self.namespace)
    }

    pub fn with_file_path(mut self, file_path: impl Into<String>) -> Self {
        self.file_path = file_path.into();
        self
    }
}

/// Parses a single function or class definition into a block. Leading
/// comment lines and decorators are allowed; anything else is an error.
pub fn parse_block(source: &str, namespace: &str) -> Result<CodeBlock> {
    let parsed = ParsedSource::parse(source)?;
    let items = python::named_children(parsed.root());
    let def = match items.as_slice() {
        [only] if python::is_definition(*only) => *only,
        [] => return Err(Error::Parse("no definition found".into())),
        _ => {
            return Err(Error::Parse(format!(
                "expected a single function or class definition, found {} top-level items",
                items.len()
            )))
        }
    };
    let key = derive_key(&parsed, def)?;
    Ok(CodeBlock {
        namespace: namespace.to_owned(),
        file_path: String::new(),
        kind: key.kind(),
        key,
        value: source.to_owned(),
    })
}

fn derive_key(parsed: &ParsedSource, outer: Node<'_>) -> Result<BlockKey> {
    let def = python::unwrap_decorated(outer);
    let src = parsed.source();
    let body = def
        .child_by_field_name("body")
        .ok_or_else(|| Error::Parse("definition has no body".into()))?;
    let mut signature = src[..body.start_byte()].trim().to_owned();
    let statements = python::named_children(body);
    if let Some(doc) = statements.first().and_then(|s| docstring(*s)) {
        signature.push('\n');
        signature.push_str(&" ".repeat(doc.start_position().column));
        signature.push_str(parsed.text(doc));
    }

    if def.kind() == "function_definition" {
        return Ok(BlockKey::Function {
            signature_with_doc: signature,
        });
    }

    let mut attributes = Vec::new();
    let mut methods = Vec::new();
    for stmt in statements {
        match python::unwrap_decorated(stmt).kind() {
            "expression_statement" => {
                for expr in python::named_children(stmt) {
                    if expr.kind() == "assignment" {
                        assignment_targets(expr, &mut |target| {
                            if target.kind() == "identifier" {
                                attributes.push(src[target.byte_range()].to_owned());
                            }
                        });
                    }
                }
            }
            "function_definition" => {
                let func = python::unwrap_decorated(stmt);
                if let Some(name) = python::definition_name(func, src) {
                    methods.push(name.to_owned());
                    if name == "__init__" {
                        if let Some(init_body) = func.child_by_field_name("body") {
                            collect_self_attributes(init_body, src, &mut attributes);
                        }
                    }
                }
            }
            _ => {}
        }
    }
    Ok(BlockKey::Class {
        class_signature_with_doc: signature,
        attributes,
        methods,
    }
    .normalized())
}

fn docstring(stmt: Node<'_>) -> Option<Node<'_>> {
    if stmt.kind() != "expression_statement" {
        return None;
    }
    match python::named_children(stmt).as_slice() {
        [expr] if matches!(expr.kind(), "string" | "concatenated_string") => Some(*expr),
        _ => None,
    }
}

/// Visits each assignment target, descending into tuple targets and chained
/// assignments (`a = b = 1`).
fn assignment_targets<'t>(assign: Node<'t>, visit: &mut dyn FnMut(Node<'t>)) {
    if let Some(left) = assign.child_by_field_name("left") {
        flatten_target(left, visit);
    }
    if let Some(right) = assign.child_by_field_name("right") {
        if right.kind() == "assignment" {
            assignment_targets(right, visit);
        }
    }
}

fn flatten_target<'t>(target: Node<'t>, visit: &mut dyn FnMut(Node<'t>)) {
    match target.kind() {
        "pattern_list" | "tuple_pattern" | "list_pattern" | "expression_list" | "tuple" | "list" => {
            for child in python::named_children(target) {
                flatten_target(child, visit);
            }
        }
        "parenthesized_expression" => {
            for child in python::named_children(target) {
                flatten_target(child, visit);
            }
        }
        _ => visit(target),
    }
}

fn collect_self_attributes(node: Node<'_>, src: &str, out: &mut Vec<String>) {
    for child in python::named_children(node) {
        match child.kind() {
            // Nested scopes have their own `self`.
            "function_definition" | "class_definition" | "decorated_definition" | "lambda" => {}
            "assignment" => {
                assignment_targets(child, &mut |target| {
                    if target.kind() != "attribute" {
                        return;
                    }
                    let object = target.child_by_field_name("object");
                    let attr = target.child_by_field_name("attribute");
                    if let (Some(object), Some(attr)) = (object, attr) {
                        if &src[object.byte_range()] == "self" {
                            out.push(src[attr.byte_range()].to_owned());
                        }
                    }
                });
            }
            _ => collect_self_attributes(child, src, out),
        }
    }
}

/// A file that could not be indexed, or a definition that was shadowed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexDiagnostic {
    pub file_path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BlockIndex {
    pub root: PathBuf,
    pub blocks: BTreeMap<String, CodeBlock>,
    pub diagnostics: Vec<IndexDiagnostic>,
}

impl BlockIndex {
    pub fn from_blocks(root: impl Into<PathBuf>, blocks: impl IntoIterator<Item = CodeBlock>) -> Self {
        Self {
            root: root.into(),
            blocks: blocks
                .into_iter()
                .map(|b| (b.namespace.clone(), b))
                .collect(),
            diagnostics: Vec::new(),
        }
    }

    pub fn get(&self, namespace: &str) -> Option<&CodeBlock> {
        self.blocks.get(namespace)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// One JSON record per block: namespace, file_path, kind, key.
    pub fn manifest_lines(&self) -> impl Iterator<Item = String> + '_ {
        self.blocks.values().map(|b| {
            serde_json::json!({
                "namespace": b.namespace,
                "file_path": b.file_path,
                "kind": b.kind,
                "key": b.key,
            })
            .to_string()
        })
    }
}

fn build_globset(patterns: &[String]) -> Result<GlobSet> {
    let mut builder = GlobSetBuilder::new();
    if patterns.is_empty() {
        builder.add(Glob::new(DEFAULT_INCLUDE).expect("static glob"));
    }
    for pattern in patterns {
        let glob = Glob::new(pattern)
            .map_err(|e| Error::Config(format!("bad include glob {pattern:?}: {e}")))?;
        builder.add(glob);
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("cannot build include globs: {e}")))
}

pub fn module_path(relative_file: &str) -> String {
    relative_file
        .trim_end_matches(".py")
        .split('/')
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(".")
}

/// Indexes every file under `root` matching `include_globs` (default
/// `**/*.py`). Hidden directories are skipped. Files that fail to read or
/// parse are recorded in `diagnostics` and otherwise ignored.
pub fn index_repository(root: &Path, include_globs: &[String]) -> Result<BlockIndex> {
    let meta = std::fs::metadata(root).map_err(|e| Error::io(root, e))?;
    if !meta.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotADirectory, "not a directory"),
        ));
    }
    let globs = build_globset(include_globs)?;

    let mut files = Vec::new();
    let walker = WalkDir::new(root).sort_by_file_name().into_iter().filter_entry(|e| {
        e.depth() == 0 || !e.file_name().to_string_lossy().starts_with('.')
    });
    for entry in walker {
        let entry = entry.map_err(|e| {
            let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf());
            Error::io(path, e.into())
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .unwrap_or(entry.path())
            .to_string_lossy()
            .replace('\\', "/");
        if globs.is_match(&rel) {
            files.push((entry.path().to_path_buf(), rel));
        }
    }

    let per_file: Vec<(Vec<CodeBlock>, Vec<IndexDiagnostic>)> = files
        .par_iter()
        .map(|(path, rel)| index_file(path, rel))
        .collect();

    let mut index = BlockIndex {
        root: root.to_path_buf(),
        ..BlockIndex::default()
    };
    for (blocks, diagnostics) in per_file {
        index.diagnostics.extend(diagnostics);
        for block in blocks {
            if index.blocks.contains_key(&block.namespace) {
                index.diagnostics.push(IndexDiagnostic {
                    file_path: block.file_path.clone(),
                    message: format!("namespace {} already indexed; keeping first", block.namespace),
                });
                continue;
            }
            index.blocks.insert(block.namespace.clone(), block);
        }
    }
    Ok(index)
}

fn index_file(path: &Path, rel: &str) -> (Vec<CodeBlock>, Vec<IndexDiagnostic>) {
    let diag = |message: String| IndexDiagnostic {
        file_path: rel.to_owned(),
        message,
    };
    let source = match std::fs::read(path) {
        Ok(bytes) => match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(_) => return (Vec::new(), vec![diag("file is not valid UTF-8".into())]),
        },
        Err(e) => return (Vec::new(), vec![diag(format!("cannot read file: {e}"))]),
    };
    let parsed = match ParsedSource::parse(&source) {
        Ok(p) => p,
        Err(e) => return (Vec::new(), vec![diag(e.to_string())]),
    };

    let module = module_path(rel);
    let mut by_name: BTreeMap<String, CodeBlock> = BTreeMap::new();
    let mut diagnostics = Vec::new();
    for item in python::named_children(parsed.root()) {
        if !python::is_definition(item) {
            continue;
        }
        let Some(name) = python::definition_name(item, &source) else {
            continue;
        };
        let start = leading_comment_start(&source, item.start_byte());
        let value = &source[start..python::trimmed_end(item)];
        let namespace = format!("{module}.{name}");
        match parse_block(value, &namespace) {
            Ok(block) => {
                // Later definitions shadow earlier ones, as at import time.
                if by_name
                    .insert(name.to_owned(), block.with_file_path(rel))
                    .is_some()
                {
                    diagnostics.push(diag(format!("{namespace} redefined; keeping the last definition")));
                }
            }
            Err(e) => diagnostics.push(diag(format!("{namespace}: {e}"))),
        }
    }
    (by_name.into_values().collect(), diagnostics)
}

/// Start offset of the run of comment lines directly above `def_start`.
fn leading_comment_start(source: &str, def_start: usize) -> usize {
    let line_start = source[..def_start].rfind('\n').map_or(0, |i| i + 1);
    let mut start = line_start;
    while start > 0 {
        let prev_end = start - 1;
        let prev_start = source[..prev_end].rfind('\n').map_or(0, |i| i + 1);
        let line = source[prev_start..prev_end].trim();
        if line.starts_with('#') && !line.starts_with("#!") {
            start = prev_start;
        } else {
            break;
        }
    }
    start
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn function_signature_includes_docstring_only() {
        let src = "def setmaxsize(self, maxsize):\n    \"\"\"Set it.\"\"\"\n    self.maxsize = maxsize\n";
        let block = parse_block(src, "m.setmaxsize").unwrap();
        assert_eq!(block.kind, BlockKind::Function);
        let BlockKey::Function { signature_with_doc } = &block.key else {
            panic!("expected function key")
        };
        assert!(signature_with_doc.starts_with("def setmaxsize(self, maxsize)"));
        assert!(signature_with_doc.contains("\"\"\"Set it.\"\"\""));
        assert!(!signature_with_doc.contains("self.maxsize = maxsize"));
    }

    #[test]
    fn leading_comments_fold_into_signature() {
        let src = "# helper for sockets\n@cached\ndef f(x):\n    return x\n";
        let block = parse_block(src, "m.f").unwrap();
        assert!(block.key.render().starts_with("# helper for sockets\n@cached\ndef f(x):"));
    }

    #[test]
    fn empty_class_has_empty_lists() {
        let block = parse_block("class Empty:\n    pass\n", "m.Empty").unwrap();
        assert_eq!(
            block.key,
            BlockKey::Class {
                class_signature_with_doc: "class Empty:".into(),
                attributes: vec![],
                methods: vec![],
            }
        );
    }

    #[test]
    fn class_attributes_from_body_and_init() {
        let src = "class C:\n    z: int = 3\n    a = b = 0\n    def __init__(self):\n        self.y, self.x = 1, 2\n        if True:\n            self.w = 0\n        def inner(self):\n            self.hidden = 1\n    def m(self):\n        self.not_init = 1\n";
        let block = parse_block(src, "m.C").unwrap();
        let BlockKey::Class { attributes, methods, .. } = block.key else {
            panic!()
        };
        assert_eq!(attributes, ["a", "b", "w", "x", "y", "z"]);
        assert_eq!(methods, ["__init__", "m"]);
    }

    #[test]
    fn parse_block_rejects_non_definitions() {
        assert!(parse_block("x = 1\n", "m.x").is_err());
        assert!(parse_block("def a(): pass\ndef b(): pass\n", "m.a").is_err());
        assert!(parse_block("def a(:\n", "m.a").is_err());
    }

    #[test]
    fn key_rendering_ignores_method_order() {
        let a = BlockKey::Class {
            class_signature_with_doc: "class A:".into(),
            attributes: vec!["x".into()],
            methods: vec!["b".into(), "a".into()],
        }
        .normalized();
        let b = BlockKey::Class {
            class_signature_with_doc: "class A:".into(),
            attributes: vec!["x".into()],
            methods: vec!["a".into(), "b".into(), "a".into()],
        }
        .normalized();
        assert_eq!(render_key(&a), render_key(&b));
    }

    #[test]
    fn module_paths() {
        assert_eq!(module_path("boltons/socketutils.py"), "boltons.socketutils");
        assert_eq!(module_path("top.py"), "top");
    }
}
