//! Helpers shared by the integration tests.
#![allow(dead_code)]

pub mod gen;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use astmem::config::Config;
use astmem::gateway::{
    CompletionBackend, Gateway, GatewayError, HashingEmbedder, ScriptEntry, ScriptedCompletion,
    GENERATE_MARKER, JUDGE_MARKER, NOTE_MARKER, REGENERATE_MARKER,
};
use astmem::index::{index_repository, parse_block, BlockIndex, CodeBlock};
use astmem::orchestrator::{run_round, RoundRecord, SessionState};

pub const TARGET: &str = "boltons.socketutils.NetstringSocket.setmaxsize";

pub const V0: &str = "def setmaxsize(self, maxsize):\n    self.maxsize = maxsize\n    self._msgsize_maxsize = self._calc_msgsize_maxsize(maxsize)\n";

pub const V_GUARD: &str = "def setmaxsize(self, maxsize):\n    if not isinstance(maxsize, int) or maxsize < 0:\n        raise ValueError(\"maxsize must be a non-negative integer\")\n    self.maxsize = maxsize\n    self._msgsize_maxsize = self._calc_msgsize_maxsize(maxsize)\n";

/// Adds the print but drops the guard.
pub const V_PRINT_NO_GUARD: &str = "def setmaxsize(self, maxsize):\n    self.maxsize = maxsize\n    self._msgsize_maxsize = self._calc_msgsize_maxsize(maxsize)\n    print(f\"Maxsize set to {maxsize}\")\n";

pub const V_PRINT_GUARD: &str = "def setmaxsize(self, maxsize):\n    if not isinstance(maxsize, int) or maxsize < 0:\n        raise ValueError(\"maxsize must be a non-negative integer\")\n    self.maxsize = maxsize\n    self._msgsize_maxsize = self._calc_msgsize_maxsize(maxsize)\n    print(f\"Maxsize set to {maxsize}\")\n";

pub const V_ANNOTATED: &str = "def setmaxsize(self, maxsize: int) -> None:\n    if not isinstance(maxsize, int) or maxsize < 0:\n        raise ValueError(\"maxsize must be a non-negative integer\")\n    self.maxsize = maxsize\n    self._msgsize_maxsize = self._calc_msgsize_maxsize(maxsize)\n    print(f\"Maxsize set to {maxsize}\")\n";

pub const GUARD_TEXT: &str =
    "if not isinstance(maxsize, int) or maxsize < 0: raise ValueError(\"maxsize must be a non-negative integer\")";

/// Instructions of the four-round forgetting scenario.
pub const INSTRUCTIONS: [&str; 4] = [
    "Please write a python function called 'setmaxsize' based on the NetstringSocket context.",
    "The 'setmaxsize' function should raise a ValueError if the 'maxsize' parameter is not a positive integer or zero.",
    "Extend the 'setmaxsize' function to print a message: 'Maxsize set to {new_maxsize}' indicating the change in 'maxsize' for debugging purposes.",
    "Ensure that the 'setmaxsize' function includes type annotations for its parameters and return type, including one parameters: 'maxsize': int, and return type: None.",
];

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn read_fixture(rel: &str) -> String {
    std::fs::read_to_string(fixture(rel)).unwrap()
}

pub fn boltons_index() -> Arc<BlockIndex> {
    Arc::new(index_repository(&fixture("repo"), &[]).unwrap())
}

pub fn fenced(code: &str) -> String {
    format!("```python\n{code}```\n")
}

pub fn keep() -> String {
    r#"{"mode": "KEEP", "action": "context is sufficient", "target_context": []}"#.to_owned()
}

pub fn add(targets: &[&str]) -> String {
    serde_json::json!({"mode": "ADD", "action": "add context", "target_context": targets}).to_string()
}

pub fn judge(response: impl Into<String>) -> ScriptEntry {
    ScriptEntry::expecting(JUDGE_MARKER, response)
}

pub fn note(text: &str) -> ScriptEntry {
    ScriptEntry::expecting(NOTE_MARKER, text)
}

pub fn generate(code: &str) -> ScriptEntry {
    ScriptEntry::expecting(GENERATE_MARKER, fenced(code))
}

pub fn regenerate(code: &str) -> ScriptEntry {
    ScriptEntry::expecting(REGENERATE_MARKER, fenced(code))
}

/// Script for the four-round scenario: the third generation drops the
/// guard, and the regeneration restores it.
pub fn forgetting_script() -> Vec<ScriptEntry> {
    vec![
        generate(V0),
        judge(keep()),
        note("Implemented setmaxsize by updating both size attributes."),
        generate(V_GUARD),
        judge(keep()),
        note("Added input validation that raises ValueError."),
        generate(V_PRINT_NO_GUARD),
        regenerate(V_PRINT_GUARD),
        judge(keep()),
        note("Added a debug print after updating the sizes."),
        generate(V_ANNOTATED),
    ]
}

pub fn scripted(entries: Vec<ScriptEntry>) -> (Gateway, Arc<ScriptedCompletion>) {
    let script = Arc::new(ScriptedCompletion::new(entries));
    (Gateway::scripted(script.clone()), script)
}

/// Test oracle for the scenario: each test passes when its feature is in
/// the code.
pub fn scenario_test_passes(code: &str, test: &str) -> bool {
    match test {
        "t_attr" => code.contains("self._msgsize_maxsize = self._calc_msgsize_maxsize(maxsize)"),
        "t_guard" => code.contains("raise ValueError"),
        "t_print" => code.contains("Maxsize set to"),
        "t_annot" => code.contains("maxsize: int) -> None"),
        other => panic!("unknown test {other}"),
    }
}

pub const SCENARIO_TESTS: [&str; 4] = ["t_attr", "t_guard", "t_print", "t_annot"];

pub fn run_rounds(state: &mut SessionState, gateway: &Gateway, instructions: &[&str]) -> Vec<RoundRecord> {
    instructions
        .iter()
        .map(|i| run_round(state, i, gateway).unwrap())
        .collect()
}

pub fn fresh_state(config: Config) -> SessionState {
    SessionState::new(boltons_index(), config, TARGET)
}

/// Replies by prompt kind: KEEP for the judge, a fixed note, and `code`
/// for generation.
pub struct MarkerBackend {
    pub code: String,
}

impl CompletionBackend for MarkerBackend {
    fn complete(&self, prompt: &str) -> Result<String, GatewayError> {
        if prompt.contains(JUDGE_MARKER) {
            Ok(keep())
        } else if prompt.contains(NOTE_MARKER) {
            Ok("Round handled.".into())
        } else {
            Ok(fenced(&self.code))
        }
    }
}

pub fn marker_gateway(code: &str) -> Gateway {
    Gateway::new(
        Arc::new(MarkerBackend { code: code.to_owned() }),
        Arc::new(HashingEmbedder::default()),
    )
}

/// Repository of single-function blocks, one per name, each calling
/// nothing.
pub fn synthetic_index(names: &[&str]) -> Arc<BlockIndex> {
    let blocks: Vec<CodeBlock> = names
        .iter()
        .map(|n| {
            parse_block(&format!("def {n}(value):\n    \"\"\"Handles {n}.\"\"\"\n    return value\n"), &format!("pkg.{n}"))
                .unwrap()
                .with_file_path("pkg/__init__.py")
        })
        .collect();
    Arc::new(BlockIndex::from_blocks("/synthetic", blocks))
}
