//! External (called) and internal (defined) API names of code, and the
//! matching rule the selector uses to decide whether two name sets touch.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use tree_sitter::Node;

use crate::error::Result;
use crate::index::{BlockKey, CodeBlock};
use crate::python::ParsedSource;

/// A dotted call path and its last segment. Ordered and compared by
/// `full_path`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ApiName {
    pub full_path: String,
    pub terminal: String,
}

impl ApiName {
    /// Returns `None` for an empty path or empty terminal segment.
    pub fn new(full_path: impl Into<String>) -> Option<Self> {
        let full_path = full_path.into();
        let terminal = full_path.rsplit('.').next()?.to_owned();
        if full_path.is_empty() || terminal.is_empty() {
            return None;
        }
        Some(Self {
            full_path,
            terminal,
        })
    }
}

pub type ApiSet = BTreeSet<ApiName>;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ApiProfile {
    pub external: ApiSet,
    pub internal: ApiSet,
}

impl ApiProfile {
    pub fn all(&self) -> impl Iterator<Item = &ApiName> {
        self.external.iter().chain(self.internal.iter())
    }
}

/// Builtins and standard I/O names. Calls to these are not dependencies
/// between repository blocks.
pub const BUILTIN_DENYLIST: &[&str] = &[
    "abs", "aiter", "all", "anext", "any", "ascii", "bin", "bool", "breakpoint", "bytearray",
    "bytes", "callable", "chr", "classmethod", "compile", "complex", "delattr", "dict", "dir",
    "divmod", "enumerate", "eval", "exec", "exit", "filter", "float", "format", "frozenset",
    "getattr", "globals", "hasattr", "hash", "help", "hex", "id", "input", "int", "isinstance",
    "issubclass", "iter", "len", "list", "locals", "map", "max", "memoryview", "min", "next",
    "object", "oct", "open", "ord", "pow", "print", "property", "quit", "range", "repr",
    "reversed", "round", "set", "setattr", "slice", "sorted", "staticmethod", "str", "sum",
    "super", "tuple", "type", "vars", "zip", "__import__",
];

fn is_builtin(name: &ApiName) -> bool {
    !name.full_path.contains('.') && BUILTIN_DENYLIST.contains(&name.full_path.as_str())
}

/// Dotted path of a callee built only from names and attribute accesses.
/// Complex bases (`a[0].b`, `f().g`) collapse to the attribute name alone.
fn callee_path(node: Node<'_>, src: &str) -> Option<String> {
    match node.kind() {
        "identifier" => Some(src[node.byte_range()].to_owned()),
        "attribute" => {
            let attr = node.child_by_field_name("attribute")?;
            let attr = &src[attr.byte_range()];
            let object = node.child_by_field_name("object")?;
            match callee_path_strict(object, src) {
                Some(base) => Some(format!("{base}.{attr}")),
                None => Some(attr.to_owned()),
            }
        }
        _ => None,
    }
}

fn callee_path_strict(node: Node<'_>, src: &str) -> Option<String> {
    match node.kind() {
        "identifier" => Some(src[node.byte_range()].to_owned()),
        "attribute" => {
            let base = callee_path_strict(node.child_by_field_name("object")?, src)?;
            let attr = node.child_by_field_name("attribute")?;
            Some(format!("{base}.{}", &src[attr.byte_range()]))
        }
        _ => None,
    }
}

fn collect_calls(node: Node<'_>, src: &str, out: &mut ApiSet) {
    match node.kind() {
        // Declarations, not behavior.
        "decorator" | "type" => return,
        "call" => {
            if let Some(name) = node
                .child_by_field_name("function")
                .and_then(|f| callee_path(f, src))
                .and_then(ApiName::new)
            {
                if !is_builtin(&name) {
                    out.insert(name);
                }
            }
        }
        _ => {}
    }
    let mut cursor = node.walk();
    for child in node.named_children(&mut cursor) {
        collect_calls(child, src, out);
    }
}

/// Every call site's callee in `source`, deduplicated, builtins excluded.
pub fn call_targets(source: &str) -> Result<ApiSet> {
    let parsed = ParsedSource::parse(source)?;
    Ok(call_targets_in(&parsed))
}

pub(crate) fn call_targets_in(parsed: &ParsedSource) -> ApiSet {
    let mut out = ApiSet::new();
    collect_calls(parsed.root(), parsed.source(), &mut out);
    out
}

/// Names a block defines: the function name, or the class name plus each
/// method as `Class.method`.
pub fn defined_names(block: &CodeBlock) -> ApiSet {
    let name = block.name();
    let mut out = ApiSet::new();
    out.extend(ApiName::new(name));
    if let BlockKey::Class { methods, .. } = &block.key {
        out.extend(methods.iter().filter_map(|m| ApiName::new(format!("{name}.{m}"))));
    }
    out
}

pub fn api_profile(block: &CodeBlock) -> Result<ApiProfile> {
    Ok(ApiProfile {
        external: call_targets(&block.value)?,
        internal: defined_names(block),
    })
}

/// True when some pair of names shares a full path or a terminal segment.
pub fn api_match<'a, A, B>(a: A, b: B) -> bool
where
    A: IntoIterator<Item = &'a ApiName>,
    B: IntoIterator<Item = &'a ApiName>,
{
    let mut paths = HashSet::new();
    let mut terminals = HashSet::new();
    for name in a {
        paths.insert(name.full_path.as_str());
        terminals.insert(name.terminal.as_str());
    }
    if paths.is_empty() {
        return false;
    }
    b.into_iter()
        .any(|n| paths.contains(n.full_path.as_str()) || terminals.contains(n.terminal.as_str()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::parse_block;

    fn names(paths: &[&str]) -> ApiSet {
        paths.iter().map(|p| ApiName::new(*p).unwrap()).collect()
    }

    fn terminals(set: &ApiSet) -> BTreeSet<&str> {
        set.iter().map(|n| n.terminal.as_str()).collect()
    }

    #[test]
    fn self_method_call_is_collected() {
        let src = "def setmaxsize(self, maxsize):\n    self.maxsize = maxsize\n    self._msgsize_maxsize = self._calc_msgsize_maxsize(maxsize)\n";
        let calls = call_targets(src).unwrap();
        assert!(terminals(&calls).contains("_calc_msgsize_maxsize"));
        assert!(calls.contains(&ApiName::new("self._calc_msgsize_maxsize").unwrap()));
    }

    #[test]
    fn no_calls_gives_empty_set() {
        assert!(call_targets("def f(): return 1\n").unwrap().is_empty());
    }

    #[test]
    fn repeated_calls_dedupe() {
        let calls = call_targets("a.b.c(); a.b.c()\n").unwrap();
        assert_eq!(calls, names(&["a.b.c"]));
    }

    #[test]
    fn builtins_decorators_and_annotations_are_skipped() {
        let src = "@register(app)\ndef f(x: make_type() = default()) -> build():\n    print(len(x))\n    return helper(x)\n";
        let calls = call_targets(src).unwrap();
        assert_eq!(calls, names(&["default", "helper"]));
    }

    #[test]
    fn complex_bases_keep_the_terminal() {
        let calls = call_targets("x = items[0].close()\ny = make().run()\n").unwrap();
        assert_eq!(terminals(&calls), BTreeSet::from(["close", "make", "run"]));
    }

    #[test]
    fn defined_names_for_function_and_class() {
        let f = parse_block("def setmaxsize(self, maxsize):\n    pass\n", "m.N.setmaxsize").unwrap();
        assert_eq!(defined_names(&f), names(&["setmaxsize"]));

        let c = parse_block("class Empty:\n    pass\n", "m.Empty").unwrap();
        assert_eq!(defined_names(&c), names(&["Empty"]));

        let c = parse_block("class K:\n    def a(self): pass\n    def b(self): pass\n", "m.K").unwrap();
        assert_eq!(defined_names(&c), names(&["K", "K.a", "K.b"]));
    }

    #[test]
    fn self_call_appears_in_both_sets() {
        let block = parse_block("def fact(n):\n    return n * fact(n - 1)\n", "m.fact").unwrap();
        let profile = api_profile(&block).unwrap();
        assert!(profile.external.contains(&ApiName::new("fact").unwrap()));
        assert!(profile.internal.contains(&ApiName::new("fact").unwrap()));
        assert_eq!(profile, api_profile(&block).unwrap());
    }

    #[test]
    fn matching_rule_branches() {
        // terminal branch
        assert!(api_match(
            &names(&["self._calc_msgsize_maxsize"]),
            &names(&["NetstringSocket._calc_msgsize_maxsize"])
        ));
        // full-path branch
        assert!(api_match(&names(&["a.f"]), &names(&["a.f"])));
        assert!(!api_match(&names(&["a.f"]), &names(&["b.g"])));
        assert!(!api_match(&ApiSet::new(), &names(&["x"])));
        assert!(!api_match(&names(&["x"]), &ApiSet::new()));
    }

    #[test]
    fn api_name_rejects_empty_segments() {
        assert!(ApiName::new("").is_none());
        assert!(ApiName::new("a.").is_none());
    }
}
