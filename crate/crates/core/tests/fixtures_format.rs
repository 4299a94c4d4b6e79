mod common;

use astmem::eval::{load_tasks, Bench, DEFAULT_FEEDBACK};
use astmem::index::{BlockKey, BlockKind};
use astmem::session::{ast_diff, SessionStore};
use astmem::store::{from_json_str, ContextEntry};
use astmem::Error;
use common::*;

#[test]
fn codeif_record_loads_nine_ordered_rounds() {
    let tasks = load_tasks(Bench::Codeif, &fixture("samples/codeif.jsonl")).unwrap();
    assert_eq!(tasks.len(), 1);
    let task = &tasks[0];
    assert_eq!(task.target, TARGET);
    assert_eq!(task.instructions.len(), 9);
    assert_eq!(task.round_tests.len(), 9);
    assert!(task.instructions[0].starts_with("Set the maximum size for receiving netstrings"));
    assert!(task.instructions[1].contains("raise a ValueError"));
    assert_eq!(
        task.round_tests[8],
        ["tests/test_socketutils.py::test_setmaxsize_updates_attributes"]
    );
    assert_eq!(task.completion_path.as_deref().unwrap().to_str(), Some("boltons/socketutils.py"));
}

#[test]
fn codereval_record_loads_with_fixed_feedback() {
    let tasks = load_tasks(Bench::Codereval, &fixture("samples/codereval.jsonl")).unwrap();
    let task = &tasks[0];
    assert_eq!(task.id, "62e60f43d76274f8a4026e28");
    assert_eq!(task.feedback.as_deref(), Some(DEFAULT_FEEDBACK));
    assert_eq!(task.feedback.as_deref(), Some("Your answer is incorrect. Please regenerate."));
    assert_eq!(task.target, "neo4j._codec.hydration.v1.temporal.hydrate_time");
    assert_eq!(task.round_count(), 5);
}

#[test]
fn missing_requirement_names_the_field_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let mut record: serde_json::Value = serde_json::from_str(read_fixture("samples/codeif.jsonl").trim()).unwrap();
    record.as_object_mut().unwrap().remove("requirement");
    let path = dir.path().join("broken.jsonl");
    std::fs::write(&path, format!("\n{record}\n")).unwrap();
    match load_tasks(Bench::Codeif, &path) {
        Err(Error::Schema { path: field, message }) => {
            assert!(field.ends_with(":2: requirement"), "{field}");
            assert!(message.contains("requirement"));
        }
        other => panic!("expected schema error, got {other:?}"),
    }
}

#[test]
fn context_memory_example_loads() {
    let entry: ContextEntry = from_json_str(&read_fixture("samples/context_memory.json")).unwrap();
    assert_eq!(entry.namespace, "NetstringSocket");
    assert_eq!(entry.kind, BlockKind::Class);
    match &entry.memory_key {
        BlockKey::Class { attributes, methods, .. } => {
            assert_eq!(attributes, &["_msgsize_maxsize", "bsock", "maxsize", "timeout"]);
            assert_eq!(methods.len(), 5);
        }
        other => panic!("expected class key, got {other:?}"),
    }
    let json = serde_json::to_value(&entry).unwrap();
    for field in ["memory_key", "memory_value"] {
        assert!(json.get(field).is_some());
    }
    for field in ["class_signature", "class_attributes", "class_methods"] {
        assert!(json["memory_key"].get(field).is_some());
    }
}

#[test]
fn context_memory_missing_key_field_is_pinpointed() {
    let mut value: serde_json::Value = serde_json::from_str(&read_fixture("samples/context_memory.json")).unwrap();
    value["memory_key"].as_object_mut().unwrap().remove("class_methods");
    match from_json_str::<ContextEntry>(&value.to_string()) {
        Err(Error::Schema { path, .. }) => assert_eq!(path, "memory_key.class_methods"),
        other => panic!("expected schema error, got {other:?}"),
    }
}

#[test]
fn session_memory_example_loads_with_if_raise_block() {
    let store: SessionStore = from_json_str(&read_fixture("samples/session_memory.json")).unwrap();
    let seq = store.get(TARGET).unwrap();
    assert_eq!(seq.len(), 3);
    let added: Vec<_> = seq.blocks[2].diff.added.iter().collect();
    assert_eq!(added.len(), 1);
    assert_eq!(added[0].node_type, "If+Raise");
    assert_eq!(added[0].canonical_text, GUARD_TEXT);
    // The stored diff is what the differ computes from the stored code.
    assert_eq!(seq.blocks[2].diff, ast_diff(&seq.blocks[1].code, &seq.blocks[2].code).unwrap());
    assert!(seq.reconstruction_holds());
    let json = serde_json::to_value(&store).unwrap();
    let block = &json[TARGET][2];
    for field in ["id", "instruction", "code", "note", "diff_nodes", "state_links"] {
        assert!(block.get(field).is_some(), "{field}");
    }
    assert_eq!(block["diff_nodes"]["added"][0]["type"], "If+Raise");
    assert_eq!(block["diff_nodes"]["added"][0]["block"], GUARD_TEXT);
}

#[test]
fn session_memory_missing_field_is_pinpointed() {
    let mut value: serde_json::Value = serde_json::from_str(&read_fixture("samples/session_memory.json")).unwrap();
    value[TARGET][2].as_object_mut().unwrap().remove("code");
    match from_json_str::<SessionStore>(&value.to_string()) {
        Err(Error::Schema { path, .. }) => assert_eq!(path, format!("{TARGET}[2].code")),
        other => panic!("expected schema error, got {other:?}"),
    }
}

#[test]
fn fixture_repository_indexes_netstring_socket() {
    let index = boltons_index();
    let block = index.get("boltons.socketutils.NetstringSocket").unwrap();
    assert_eq!(block.file_path, "boltons/socketutils.py");
    match &block.key {
        BlockKey::Class { attributes, methods, class_signature_with_doc } => {
            assert_eq!(attributes, &["_msgsize_maxsize", "bsock", "maxsize", "timeout"]);
            for m in ["__init__", "fileno", "settimeout", "read_ns", "write_ns"] {
                assert!(methods.iter().any(|x| x == m), "{m}");
            }
            assert!(class_signature_with_doc.starts_with("class NetstringSocket(object):"));
            assert!(class_signature_with_doc.contains("netstring protocol"));
        }
        other => panic!("expected class key, got {other:?}"),
    }
    assert!(index.get("boltons.iterutils.chunked").is_some());
    assert!(index.diagnostics.is_empty());
}
