//! Thin layer over tree-sitter-python: parsing, node helpers and the
//! whitespace/comment-insensitive statement rendering used by the diff and
//! API analyses.

use tree_sitter::{Node, Parser, Tree};

use crate::error::{Error, Result};

/// A parsed Python source together with the text it was parsed from.
pub struct ParsedSource {
    source: String,
    tree: Tree,
}

impl ParsedSource {
    /// Parses `source`, rejecting any input containing syntax errors.
    pub fn parse(source: &str) -> Result<Self> {
        let mut parser = Parser::new();
        parser
            .set_language(&tree_sitter_python::LANGUAGE.into())
            .map_err(|e| Error::Parse(format!("cannot load python grammar: {e}")))?;
        let tree = parser
            .parse(source, None)
            .ok_or_else(|| Error::Parse("parser returned no tree".into()))?;
        let root = tree.root_node();
        if root.has_error() {
            return Err(Error::Parse(describe_error(root, source)));
        }
        Ok(Self {
            source: source.to_owned(),
            tree,
        })
    }

    pub fn root(&self) -> Node<'_> {
        self.tree.root_node()
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn text(&self, node: Node<'_>) -> &str {
        &self.source[node.byte_range()]
    }
}

fn describe_error(root: Node<'_>, source: &str) -> String {
    let mut stack = vec![root];
    while let Some(node) = stack.pop() {
        if node.is_error() || node.is_missing() {
            let pos = node.start_position();
            let snippet: String = source[node.byte_range()].chars().take(40).collect();
            return format!(
                "syntax error at line {}, column {}: {:?}",
                pos.row + 1,
                pos.column + 1,
                snippet
            );
        }
        let mut cursor = node.walk();
        let children: Vec<_> = node.children(&mut cursor).collect();
        stack.extend(children.into_iter().rev());
    }
    "syntax error".to_owned()
}

pub(crate) fn is_comment(node: Node<'_>) -> bool {
    matches!(node.kind(), "comment" | "line_continuation")
}

/// Named, non-comment children of `node`.
pub(crate) fn named_children(node: Node<'_>) -> Vec<Node<'_>> {
    let mut cursor = node.walk();
    node.named_children(&mut cursor)
        .filter(|n| !is_comment(*n))
        .collect()
}

/// Strips a `decorated_definition` wrapper, returning the inner definition.
pub(crate) fn unwrap_decorated(node: Node<'_>) -> Node<'_> {
    if node.kind() == "decorated_definition" {
        if let Some(def) = node.child_by_field_name("definition") {
            return def;
        }
    }
    node
}

pub(crate) fn is_definition(node: Node<'_>) -> bool {
    matches!(
        unwrap_decorated(node).kind(),
        "function_definition" | "class_definition"
    )
}

pub(crate) fn definition_name<'a>(node: Node<'_>, source: &'a str) -> Option<&'a str> {
    unwrap_decorated(node)
        .child_by_field_name("name")
        .map(|n| &source[n.byte_range()])
}

/// End byte of `node` ignoring trailing comments that tree-sitter attaches
/// to the innermost block.
pub(crate) fn trimmed_end(node: Node<'_>) -> usize {
    let mut cursor = node.walk();
    let last = node
        .children(&mut cursor)
        .filter(|c| !is_comment(*c))
        .last();
    match last {
        Some(child) => trimmed_end(child),
        None => node.end_byte(),
    }
}

/// Finds a function definition in a snippet. Preference order: a top-level
/// function named `name`, any nested function named `name` (e.g. a method
/// inside an emitted class), then the first top-level function.
pub(crate) fn find_function<'t>(root: Node<'t>, source: &str, name: Option<&str>) -> Option<Node<'t>> {
    let top: Vec<Node<'t>> = named_children(root)
        .into_iter()
        .map(unwrap_decorated)
        .filter(|n| n.kind() == "function_definition")
        .collect();
    if let Some(name) = name {
        if let Some(found) = top
            .iter()
            .find(|n| definition_name(**n, source) == Some(name))
        {
            return Some(*found);
        }
        let mut stack = vec![root];
        while let Some(node) = stack.pop() {
            if node.kind() == "function_definition" && definition_name(node, source) == Some(name) {
                return Some(node);
            }
            let mut cursor = node.walk();
            let children: Vec<_> = node.named_children(&mut cursor).collect();
            stack.extend(children.into_iter().rev());
        }
    }
    top.first().copied()
}

/// Python `ast` class name for a statement node, e.g. `If`, `Assign`.
pub(crate) fn statement_kind(node: Node<'_>) -> String {
    let is_async = || {
        let mut cursor = node.walk();
        let found = node.children(&mut cursor).any(|c| c.kind() == "async");
        found
    };
    let kind = match node.kind() {
        "expression_statement" => {
            return match named_children(node).first().map(|c| c.kind()) {
                Some("assignment") => {
                    let inner = named_children(node)[0];
                    if inner.child_by_field_name("type").is_some() {
                        "AnnAssign".into()
                    } else {
                        "Assign".into()
                    }
                }
                Some("augmented_assignment") => "AugAssign".into(),
                _ => "Expr".into(),
            }
        }
        "decorated_definition" => return statement_kind(unwrap_decorated(node)),
        "function_definition" if is_async() => "AsyncFunctionDef",
        "function_definition" => "FunctionDef",
        "class_definition" => "ClassDef",
        "for_statement" if is_async() => "AsyncFor",
        "for_statement" => "For",
        "with_statement" if is_async() => "AsyncWith",
        "with_statement" => "With",
        "while_statement" => "While",
        "if_statement" => "If",
        "try_statement" => "Try",
        "match_statement" => "Match",
        "return_statement" => "Return",
        "pass_statement" => "Pass",
        "break_statement" => "Break",
        "continue_statement" => "Continue",
        "raise_statement" => "Raise",
        "assert_statement" => "Assert",
        "delete_statement" => "Delete",
        "global_statement" => "Global",
        "nonlocal_statement" => "Nonlocal",
        "import_statement" => "Import",
        "import_from_statement" | "future_import_statement" => "ImportFrom",
        "type_alias_statement" => "TypeAlias",
        "print_statement" | "exec_statement" => "Expr",
        other => return camel_case(other.trim_end_matches("_statement")),
    };
    kind.to_owned()
}

fn camel_case(s: &str) -> String {
    s.split('_')
        .filter(|p| !p.is_empty())
        .map(|p| {
            let mut chars = p.chars();
            match chars.next() {
                Some(first) => first.to_ascii_uppercase().to_string() + chars.as_str(),
                None => String::new(),
            }
        })
        .collect()
}

/// The block holding a compound statement's primary body.
pub(crate) fn primary_body(node: Node<'_>) -> Option<Node<'_>> {
    let node = unwrap_decorated(node);
    node.child_by_field_name("body")
        .or_else(|| node.child_by_field_name("consequence"))
}

struct Token<'a> {
    text: &'a str,
    kind: &'a str,
    parent: &'a str,
}

fn collect_tokens<'a>(node: Node<'a>, source: &'a str, out: &mut Vec<Token<'a>>) {
    if is_comment(node) {
        return;
    }
    let parent = node.parent().map(|p| p.kind()).unwrap_or("");
    if node.kind() == "string" || node.child_count() == 0 {
        let text = &source[node.byte_range()];
        if !text.is_empty() {
            out.push(Token {
                text,
                kind: node.kind(),
                parent,
            });
        }
        return;
    }
    let mut cursor = node.walk();
    for child in node.children(&mut cursor) {
        collect_tokens(child, source, out);
    }
}

fn needs_space(prev: &Token<'_>, next: &Token<'_>) -> bool {
    if matches!(next.text, ")" | "]" | "}" | "," | ":" | "." | ";") {
        return false;
    }
    if matches!(prev.text, "(" | "[" | "{" | ".") {
        return false;
    }
    if prev.text == "@" && prev.parent == "decorator" {
        return false;
    }
    if matches!(prev.text, "*" | "**") && prev.parent.contains("splat") {
        return false;
    }
    if prev.parent == "unary_operator" && matches!(prev.text, "-" | "+" | "~") {
        return false;
    }
    let keyword_eq = |t: &Token<'_>| {
        t.text == "=" && matches!(t.parent, "keyword_argument" | "default_parameter")
    };
    if keyword_eq(prev) || keyword_eq(next) {
        return false;
    }
    if matches!(next.text, "(" | "[")
        && (prev.kind == "identifier"
            || prev.kind == "string"
            || matches!(prev.text, ")" | "]" | "}"))
    {
        return false;
    }
    true
}

/// Renders `node` as a single line: comments dropped, layout replaced by a
/// fixed spacing rule, string literals kept verbatim. Two sources that differ
/// only in whitespace or comments render identically.
pub(crate) fn canonical_text(node: Node<'_>, source: &str) -> String {
    let mut tokens = Vec::new();
    collect_tokens(node, source, &mut tokens);
    let mut out = String::new();
    for (i, token) in tokens.iter().enumerate() {
        if i > 0 && needs_space(&tokens[i - 1], token) {
            out.push(' ');
        }
        out.push_str(token.text);
    }
    out
}

/// Extracts code from an LLM completion: the first fenced block when one is
/// present (preferring a `python`-tagged fence), otherwise the whole text.
pub fn strip_code_fences(completion: &str) -> String {
    let mut blocks: Vec<(String, String)> = Vec::new();
    let mut lines = completion.lines();
    while let Some(line) = lines.next() {
        let trimmed = line.trim_start();
        if let Some(tag) = trimmed.strip_prefix("```") {
            let tag = tag.trim().to_ascii_lowercase();
            let mut body = Vec::new();
            for inner in lines.by_ref() {
                if inner.trim_start().starts_with("```") {
                    break;
                }
                body.push(inner);
            }
            blocks.push((tag, body.join("\n")));
        }
    }
    let chosen = blocks
        .iter()
        .find(|(tag, _)| tag == "python" || tag == "py")
        .or_else(|| blocks.first());
    match chosen {
        Some((_, body)) => format!("{}\n", body.trim_end()),
        None => format!("{}\n", completion.trim_end()),
    }
}
