//! Random Python functions, edits and selector inputs for property tests.

use std::collections::BTreeSet;

use proptest::prelude::*;

use astmem::context::ContextMemory;
use astmem::index::{parse_block, CodeBlock};

/// Statement templates; `{n}` is replaced with a small integer. Compound
/// templates span several lines at relative indentation.
const TEMPLATES: &[&str] = &[
    "x{n} = a + {n}",
    "y = compute(x{n}, b)",
    "self.total += {n}",
    "values.append(a * {n})",
    "print(\"step\", {n})",
    "assert a != {n}",
    "z: int = {n}",
    "if a > {n}:\n    b = a - {n}",
    "if a == {n}:\n    raise ValueError(\"bad {n}\")",
    "for item in range({n}):\n    total += item\n    log(item)",
    "while b > {n}:\n    b -= 1",
    "with open(path) as fh{n}:\n    data = fh{n}.read()",
    "try:\n    value = parse(a, {n})\nexcept ValueError:\n    value = None",
    "return a + {n}",
];

#[derive(Debug, Clone)]
pub struct Stmt(pub String);

pub fn stmt() -> impl Strategy<Value = Stmt> {
    (0..TEMPLATES.len(), 0..6u8).prop_map(|(t, n)| Stmt(TEMPLATES[t].replace("{n}", &n.to_string())))
}

pub fn render_function(stmts: &[Stmt]) -> String {
    let mut out = String::from("def target(self, a, b):\n");
    if stmts.is_empty() {
        out.push_str("    pass\n");
    }
    for s in stmts {
        for line in s.0.lines() {
            out.push_str("    ");
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

#[derive(Debug, Clone)]
pub enum Edit {
    Insert(usize, Stmt),
    Delete(usize),
    Replace(usize, Stmt),
}

pub fn edit() -> impl Strategy<Value = Edit> {
    prop_oneof![
        (any::<usize>(), stmt()).prop_map(|(i, s)| Edit::Insert(i, s)),
        any::<usize>().prop_map(Edit::Delete),
        (any::<usize>(), stmt()).prop_map(|(i, s)| Edit::Replace(i, s)),
    ]
}

pub fn apply_edits(stmts: &[Stmt], edits: &[Edit]) -> Vec<Stmt> {
    let mut out = stmts.to_vec();
    for e in edits {
        match e {
            Edit::Insert(i, s) => {
                let at = i % (out.len() + 1);
                out.insert(at, s.clone());
            }
            Edit::Delete(i) if !out.is_empty() => {
                let at = i % out.len();
                out.remove(at);
            }
            Edit::Replace(i, s) if !out.is_empty() => {
                let at = i % out.len();
                out[at] = s.clone();
            }
            _ => {}
        }
    }
    out
}

/// A function before and after a random sequence of statement edits.
pub fn edit_pair() -> impl Strategy<Value = (String, String)> {
    (prop::collection::vec(stmt(), 0..8), prop::collection::vec(edit(), 1..5)).prop_map(|(stmts, edits)| {
        let new = apply_edits(&stmts, &edits);
        (render_function(&stmts), render_function(&new))
    })
}

/// Layout-only rewrite of `code`: comment lines, trailing comments, blank
/// lines and extra spaces around `=` and after commas, chosen by `seed`.
pub fn perturb(code: &str, seed: &[bool]) -> String {
    let mut out = String::new();
    let flag = |i: usize| seed.get(i % seed.len().max(1)).copied().unwrap_or(false);
    for (i, line) in code.lines().enumerate() {
        let indent = &line[..line.len() - line.trim_start().len()];
        if i > 0 && flag(3 * i) {
            out.push_str(&format!("{indent}# comment {i}\n"));
        }
        if i > 0 && flag(3 * i + 1) {
            out.push('\n');
        }
        let mut body = line.to_owned();
        if flag(3 * i + 2) && !line.contains('"') {
            body = body.replace(" = ", "  =   ").replace(", ", " ,  ");
        }
        out.push_str(&body);
        if flag(3 * i) && !line.trim_end().ends_with(':') {
            out.push_str("   # trailing");
        }
        out.push('\n');
    }
    out
}

pub fn perturbed_function() -> impl Strategy<Value = (String, String)> {
    (prop::collection::vec(stmt(), 0..8), prop::collection::vec(any::<bool>(), 1..24))
        .prop_map(|(stmts, seed)| {
            let code = render_function(&stmts);
            let perturbed = perturb(&code, &seed);
            (code, perturbed)
        })
}

/// Blocks of the selector universe with the terminal names they define and
/// call, recorded independently of the analysis under test.
pub struct UniverseBlock {
    pub block: CodeBlock,
    pub names: BTreeSet<&'static str>,
}

pub fn selector_universe() -> Vec<UniverseBlock> {
    let specs: [(&str, &str, &[&'static str]); 6] = [
        ("pkg.alpha", "def alpha(x):\n    return x + 1\n", &["alpha"]),
        ("pkg.beta", "def beta(x):\n    return helper_b(x) * 2\n", &["beta", "helper_b"]),
        ("pkg.gamma", "def gamma(x):\n    return x\n", &["gamma"]),
        (
            "pkg.Store",
            "class Store:\n    def __init__(self):\n        self.items = []\n    def put(self, v):\n        self.items.append(v)\n    def flush(self):\n        return io.write_all(self.items)\n",
            &["Store", "__init__", "put", "flush", "write_all", "append"],
        ),
        ("pkg.Empty", "class Empty:\n    pass\n", &["Empty"]),
        ("pkg.delta", "def delta(x):\n    return net.send(x)\n", &["delta", "send"]),
    ];
    specs
        .into_iter()
        .map(|(ns, src, names)| UniverseBlock {
            block: parse_block(src, ns).unwrap(),
            names: names.iter().copied().collect(),
        })
        .collect()
}

/// Call expressions the generated code may contain, with the terminal each
/// one calls. Builtins call nothing the selector counts.
pub const CALLS: &[(&str, Option<&str>)] = &[
    ("alpha(a)", Some("alpha")),
    ("pkg.beta(a)", Some("beta")),
    ("helper_b(a)", Some("helper_b")),
    ("gamma(a)", Some("gamma")),
    ("Store()", Some("Store")),
    ("store.put(a)", Some("put")),
    ("self.flush()", Some("flush")),
    ("Empty()", Some("Empty")),
    ("conn.send(a)", Some("send")),
    ("unknown_thing(a)", Some("unknown_thing")),
    ("len(a)", None),
    ("print(a)", None),
    ("items.append(a)", Some("append")),
];

/// Memory subset mask over the universe plus indices into `CALLS`.
pub fn selector_case() -> impl Strategy<Value = (Vec<bool>, Vec<usize>)> {
    (
        prop::collection::vec(any::<bool>(), 6),
        prop::collection::vec(0..CALLS.len(), 0..6),
    )
}

pub fn memory_of(universe: &[UniverseBlock], mask: &[bool]) -> ContextMemory {
    let mut memory = ContextMemory::new();
    memory.merge(
        universe
            .iter()
            .zip(mask)
            .filter(|(_, keep)| **keep)
            .map(|(u, _)| u.block.clone()),
        1,
    );
    memory
}

pub fn code_calling(calls: &[usize]) -> String {
    let mut code = String::from("def generated(self, a):\n    result = None\n");
    for i in calls {
        code.push_str(&format!("    result = {}\n", CALLS[*i].0));
    }
    code.push_str("    return result\n");
    code
}

/// Namespaces the selector must keep, from the recorded names alone.
pub fn expected_retained(universe: &[UniverseBlock], mask: &[bool], calls: &[usize]) -> BTreeSet<String> {
    let called: BTreeSet<&str> = calls.iter().filter_map(|i| CALLS[*i].1).collect();
    universe
        .iter()
        .zip(mask)
        .filter(|(u, keep)| **keep && u.names.iter().any(|n| called.contains(n)))
        .map(|(u, _)| u.block.namespace.clone())
        .collect()
}
