//! Snapshot persistence for a session: context memory, session memory and
//! round state, written as canonical JSON.

use std::path::Path;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::context::ContextMemory;
use crate::error::{Error, Result};
use crate::index::{BlockIndex, BlockKey, BlockKind, CodeBlock};
use crate::orchestrator::SessionState;
use crate::session::SessionStore;

pub const STORE_VERSION: u64 = 1;

#[derive(Debug, Deserialize)]
struct RawKey {
    function_signature: Option<String>,
    class_signature: Option<String>,
    class_attributes: Option<Vec<String>>,
    class_methods: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
struct RawContextEntry {
    #[serde(default)]
    namespace: String,
    #[serde(default)]
    file_path: String,
    #[serde(default)]
    round_added: Option<u32>,
    memory_key: RawKey,
    memory_value: String,
}

/// One context-memory block as stored. `namespace`, `file_path` and
/// `round_added` may be omitted on input; the namespace then defaults to the
/// name in the signature and the round to 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawContextEntry")]
pub struct ContextEntry {
    pub namespace: String,
    pub file_path: String,
    pub kind: BlockKind,
    pub round_added: u32,
    pub memory_key: BlockKey,
    pub memory_value: String,
}

fn missing(field: &str) -> String {
    format!("missing field `{field}`")
}

/// Identifier after `def`/`class` in a signature.
fn signature_name(signature: &str) -> Option<String> {
    let rest = signature
        .split_whitespace()
        .skip_while(|w| !matches!(*w, "def" | "class"))
        .nth(1)?;
    let name: String = rest.chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect();
    (!name.is_empty()).then_some(name)
}

impl TryFrom<RawContextEntry> for ContextEntry {
    type Error = String;

    fn try_from(raw: RawContextEntry) -> Result<Self, String> {
        let k = raw.memory_key;
        let key = match (k.function_signature, k.class_signature) {
            (Some(signature_with_doc), None) => BlockKey::Function { signature_with_doc },
            (None, Some(class_signature_with_doc)) => BlockKey::Class {
                class_signature_with_doc,
                attributes: k.class_attributes.ok_or_else(|| missing("memory_key.class_attributes"))?,
                methods: k.class_methods.ok_or_else(|| missing("memory_key.class_methods"))?,
            },
            (None, None) => return Err(missing("memory_key.class_signature")),
            (Some(_), Some(_)) => {
                return Err("memory_key has both function_signature and class_signature".into())
            }
        }
        .normalized();
        let namespace = if raw.namespace.is_empty() {
            let signature = match &key {
                BlockKey::Function { signature_with_doc } => signature_with_doc,
                BlockKey::Class {
                    class_signature_with_doc,
                    ..
                } => class_signature_with_doc,
            };
            signature_name(signature).ok_or_else(|| missing("namespace"))?
        } else {
            raw.namespace
        };
        let round_added = raw.round_added.unwrap_or(1);
        if round_added == 0 {
            return Err("round_added must be at least 1".into());
        }
        Ok(Self {
            namespace,
            file_path: raw.file_path,
            kind: key.kind(),
            round_added,
            memory_key: key,
            memory_value: raw.memory_value,
        })
    }
}

impl ContextEntry {
    pub fn into_block(self) -> (CodeBlock, u32) {
        let block = CodeBlock {
            namespace: self.namespace,
            file_path: self.file_path,
            kind: self.kind,
            key: self.memory_key,
            value: self.memory_value,
        };
        (block, self.round_added)
    }
}

/// Everything needed to resume a session except the repository index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreSnapshot {
    pub version: u64,
    pub target: String,
    pub round: u32,
    pub instructions: Vec<String>,
    pub last_feedback: Option<String>,
    pub config_hash: String,
    pub context_memory: Vec<ContextEntry>,
    pub session_memory: SessionStore,
}

impl StoreSnapshot {
    pub fn of(state: &SessionState) -> Self {
        let context_memory = state
            .context
            .blocks()
            .map(|b| ContextEntry {
                namespace: b.namespace.clone(),
                file_path: b.file_path.clone(),
                kind: b.kind,
                round_added: state.context.round_added(&b.namespace).unwrap_or(1),
                memory_key: b.key.clone().normalized(),
                memory_value: b.value.clone(),
            })
            .collect();
        Self {
            version: STORE_VERSION,
            target: state.target.clone(),
            round: state.round,
            instructions: state.instructions.clone(),
            last_feedback: state.last_feedback.clone(),
            config_hash: state.config.hash(),
            context_memory,
            session_memory: state.store.clone(),
        }
    }

    /// Sorted keys, two-space indentation, LF line ends, trailing newline.
    pub fn to_canonical_json(&self) -> String {
        to_canonical_json(self)
    }

    pub fn context(&self) -> Result<ContextMemory> {
        ContextMemory::from_entries(self.context_memory.iter().cloned().map(ContextEntry::into_block))
    }

    /// Rebuilds a session over `index`. A config whose hash differs from
    /// the stored one is allowed but logged.
    pub fn into_state(self, index: Arc<BlockIndex>, config: Config) -> Result<SessionState> {
        if config.hash() != self.config_hash {
            log::warn!("resuming with a configuration that differs from the one stored");
        }
        let context = self.context()?;
        SessionState::from_parts(
            index,
            config,
            self.target,
            context,
            self.session_memory,
            self.round,
            self.instructions,
            self.last_feedback,
        )
    }
}

/// Serializes through a JSON value so object keys come out sorted.
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let value = serde_json::to_value(value).expect("store types serialize");
    let mut out = serde_json::to_string_pretty(&value).expect("json values serialize");
    out.push('\n');
    out
}

fn schema_error<E: std::fmt::Display>(e: serde_path_to_error::Error<E>) -> Error {
    let path = e.path().to_string();
    let inner = e.into_inner().to_string();
    let field = inner.strip_prefix("missing field `").and_then(|r| r.split('`').next());
    let path = match (field, path.as_str()) {
        (Some(f), ".") => f.to_owned(),
        (Some(f), p) => format!("{p}.{f}"),
        (None, p) => p.to_owned(),
    };
    Error::schema(path, inner)
}

/// Deserializes `value`, reporting the dotted path of the failing field.
pub fn from_json_value<T: DeserializeOwned>(value: &serde_json::Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(schema_error)
}

/// Like [`from_json_value`] but reads text directly, which keeps the order
/// of object keys for order-preserving targets.
pub fn from_json_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(schema_error)?;
    de.end().map_err(|e| Error::schema("<root>", e.to_string()))?;
    Ok(value)
}

pub fn save_store(state: &SessionState, path: &Path) -> Result<()> {
    save_snapshot(&StoreSnapshot::of(state), path)
}

pub fn save_snapshot(snapshot: &StoreSnapshot, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, snapshot.to_canonical_json()).map_err(|e| Error::io(path, e))
}

pub fn parse_snapshot(text: &str) -> Result<StoreSnapshot> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::schema("<root>", e.to_string()))?;
    let version = value
        .get("version")
        .ok_or_else(|| Error::schema("version", "missing field `version`"))?
        .as_u64()
        .ok_or_else(|| Error::schema("version", "expected an unsigned integer"))?;
    if version != STORE_VERSION {
        return Err(Error::Version {
            found: version,
            expected: STORE_VERSION,
        });
    }
    let snapshot: StoreSnapshot = from_json_value(&value)?;
    snapshot.context()?;
    Ok(snapshot)
}

pub fn load_store(path: &Path) -> Result<StoreSnapshot> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_snapshot(&text)
}

/// Loads a snapshot and resumes it over `index`.
pub fn resume(path: &Path, index: Arc<BlockIndex>, config: Config) -> Result<SessionState> {
    load_store(path)?.into_state(index, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::record_round;

    fn state() -> SessionState {
        let index = Arc::new(BlockIndex::from_blocks("/repo", Vec::new()));
        let mut state = SessionState::new(index, Config::default(), "m.f");
        let block = crate::index::parse_block(
            "class K:\n    def b(self): pass\n    def a(self): self.z = 1\n",
            "m.K",
        )
        .unwrap();
        state.context.merge([block], 1);
        record_round(&mut state.store, "m.f", "write f", "def f():\n    return 1\n").unwrap();
        record_round(&mut state.store, "m.f", "guard f", "def f():\n    if x: raise E\n    return 1\n").unwrap();
        state.round = 2;
        state.instructions = vec!["write f".into(), "guard f".into()];
        state
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        save_store(&state(), &a).unwrap();
        let loaded = load_store(&a).unwrap();
        save_snapshot(&loaded, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let text = std::fs::read_to_string(&a).unwrap();
        assert!(text.ends_with("}\n"));
        assert!(!text.contains(" \n"));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut value = serde_json::to_value(StoreSnapshot::of(&state())).unwrap();
        value["version"] = 7.into();
        assert!(matches!(
            parse_snapshot(&value.to_string()),
            Err(Error::Version { found: 7, expected: 1 })
        ));
    }

    #[test]
    fn missing_field_has_a_path() {
        let mut value = serde_json::to_value(StoreSnapshot::of(&state())).unwrap();
        value["session_memory"]["m.f"][1].as_object_mut().unwrap().remove("instruction");
        match parse_snapshot(&value.to_string()) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "session_memory.m.f[1].instruction"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn resumed_state_matches() {
        let original = state();
        let snapshot = StoreSnapshot::of(&original);
        let resumed = snapshot
            .into_state(original.index.clone(), Config::default())
            .unwrap();
        assert_eq!(resumed.context, original.context);
        assert_eq!(resumed.store, original.store);
        assert_eq!(resumed.round, 2);
    }

    #[test]
    fn signature_names() {
        assert_eq!(signature_name("class NetstringSocket(object):").as_deref(), Some("NetstringSocket"));
        assert_eq!(signature_name("@dec\nasync def go(x):").as_deref(), Some("go"));
        assert_eq!(signature_name("x = 1"), None);
    }
}
