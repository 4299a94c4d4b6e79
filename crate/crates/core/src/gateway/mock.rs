use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{CompletionBackend, Embedding, EmbeddingBackend, GatewayError};
use crate::bm25::tokenize;
use crate::error::{Error, Result};

/// One scripted response. When `expect_substring` is set the entry only
/// answers prompts containing it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_substring: Option<String>,
    pub response: String,
}

impl ScriptEntry {
    pub fn new(response: impl Into<String>) -> Self {
        Self {
            expect_substring: None,
            response: response.into(),
        }
    }

    pub fn expecting(expect: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            expect_substring: Some(expect.into()),
            response: response.into(),
        }
    }

    fn accepts(&self, prompt: &str) -> bool {
        self.expect_substring
            .as_deref()
            .is_none_or(|needle| prompt.contains(needle))
    }
}

#[derive(Debug, Default)]
struct ScriptState {
    remaining: Vec<ScriptEntry>,
    prompts: Vec<String>,
}

/// Completion backend that replays a script. Each call consumes the first
/// remaining entry that accepts the prompt, so entries tagged for different
/// prompt kinds can be interleaved freely while entries of one kind keep
/// their order. Every prompt is recorded.
#[derive(Debug, Default)]
pub struct ScriptedCompletion {
    state: Mutex<ScriptState>,
}

impl ScriptedCompletion {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        Self {
            state: Mutex::new(ScriptState {
                remaining: entries,
                prompts: Vec::new(),
            }),
        }
    }

    pub fn from_responses<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(responses.into_iter().map(ScriptEntry::new).collect())
    }

    /// Loads a JSON array of `{expect_substring?, response}` objects.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<ScriptEntry> = serde_json::from_str(&text)
            .map_err(|e| Error::schema(path.display().to_string(), e.to_string()))?;
        Ok(Self::new(entries))
    }

    pub fn push(&self, entry: ScriptEntry) {
        self.lock().remaining.push(entry);
    }

    /// Prompts received so far, in call order.
    pub fn prompts(&self) -> Vec<String> {
        self.lock().prompts.clone()
    }

    pub fn remaining(&self) -> usize {
        self.lock().remaining.len()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, ScriptState> {
        self.state.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }
}

impl CompletionBackend for ScriptedCompletion {
    fn complete(&self, prompt: &str) -> Result<String, GatewayError> {
        let mut state = self.lock();
        state.prompts.push(prompt.to_owned());
        match state.remaining.iter().position(|e| e.accepts(prompt)) {
            Some(i) => Ok(state.remaining.remove(i).response),
            None => Err(GatewayError::ScriptExhausted(prompt.chars().take(60).collect())),
        }
    }
}

pub const DEFAULT_HASH_DIM: usize = 4096;

/// Offline embedder: a bag of identifier tokens hashed (FNV-1a) into a
/// fixed number of buckets. Equal texts embed identically; texts with no
/// shared token are orthogonal unless two tokens collide in a bucket.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dim as u64) as usize
    }

    pub fn vector(&self, text: &str) -> Embedding {
        let mut v = vec![0.0f32; self.dim];
        for token in tokenize(text) {
            v[self.bucket(&token)] += 1.0;
        }
        v
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_HASH_DIM)
    }
}

impl EmbeddingBackend for HashingEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, GatewayError> {
        Ok(self.vector(text))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::similarity;

    #[test]
    fn script_runs_out() {
        let mock = ScriptedCompletion::from_responses(["X"]);
        assert_eq!(mock.complete("p1").unwrap(), "X");
        assert!(matches!(mock.complete("p2"), Err(GatewayError::ScriptExhausted(_))));
        assert_eq!(mock.prompts(), ["p1", "p2"]);
    }

    #[test]
    fn tagged_entries_are_routed_in_order() {
        let mock = ScriptedCompletion::new(vec![
            ScriptEntry::expecting("judge", "j1"),
            ScriptEntry::expecting("gen", "g1"),
            ScriptEntry::expecting("judge", "j2"),
        ]);
        assert_eq!(mock.complete("gen please").unwrap(), "g1");
        assert_eq!(mock.complete("judge this").unwrap(), "j1");
        assert_eq!(mock.complete("judge again").unwrap(), "j2");
        assert_eq!(mock.remaining(), 0);
    }

    #[test]
    fn identical_scripts_replay_identically() {
        let run = || {
            let mock = ScriptedCompletion::from_responses(["a", "b"]);
            let out = (mock.complete("one").unwrap(), mock.complete("two").unwrap());
            (out, mock.prompts())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn hashing_embedder_similarity() {
        let e = HashingEmbedder::default();
        let a = e.vector("raise a ValueError on bad maxsize");
        assert!((similarity(&a, &a) - 1.0).abs() < 1e-9);
        let b = e.vector("print debug message");
        let ta: std::collections::HashSet<usize> =
            tokenize("raise a ValueError on bad maxsize").iter().map(|t| e.bucket(t)).collect();
        let tb: std::collections::HashSet<usize> =
            tokenize("print debug message").iter().map(|t| e.bucket(t)).collect();
        assert!(ta.is_disjoint(&tb));
        assert_eq!(similarity(&a, &b), 0.0);
    }

    #[test]
    fn script_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.json");
        std::fs::write(
            &path,
            r#"[{"expect_substring": "memory manager", "response": "{\"mode\":\"KEEP\"}"}, {"response": "def f(): pass"}]"#,
        )
        .unwrap();
        let mock = ScriptedCompletion::from_file(&path).unwrap();
        assert_eq!(mock.complete("anything").unwrap(), "def f(): pass");
        assert_eq!(mock.complete("a memory manager prompt").unwrap(), "{\"mode\":\"KEEP\"}");
    }
}
