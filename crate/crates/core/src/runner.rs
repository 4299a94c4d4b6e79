//! External test execution. The generated function is spliced into its
//! source file, each test is run through a command template, and the file
//! is restored afterwards.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use tree_sitter::Node;
use wait_timeout::ChildExt;

use crate::error::{Error, Result};
use crate::eval::Task;
use crate::python::{self, ParsedSource};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestResult {
    pub passed: bool,
    /// Combined stdout and stderr, trimmed; empty for passing tests.
    pub output: String,
}

impl TestResult {
    pub fn pass() -> Self {
        Self {
            passed: true,
            output: String::new(),
        }
    }

    pub fn fail(output: impl Into<String>) -> Self {
        Self {
            passed: false,
            output: output.into(),
        }
    }
}

pub trait TestRunner: Send + Sync {
    /// Runs `tests` against `code` as the task's target implementation.
    fn run(&self, task: &Task, repo_root: &Path, code: &str, tests: &[String]) -> Result<BTreeMap<String, TestResult>>;
}

/// Decides each test with a closure over the code and the test id.
pub struct FnRunner<F>(pub F);

impl<F> TestRunner for FnRunner<F>
where
    F: Fn(&str, &str) -> bool + Send + Sync,
{
    fn run(&self, _: &Task, _: &Path, code: &str, tests: &[String]) -> Result<BTreeMap<String, TestResult>> {
        Ok(tests
            .iter()
            .map(|t| {
                let result = if (self.0)(code, t) {
                    TestResult::pass()
                } else {
                    TestResult::fail("assertion failed")
                };
                (t.clone(), result)
            })
            .collect())
    }
}

/// Maximum bytes of test output kept as feedback.
const OUTPUT_LIMIT: usize = 4000;

/// Runs `command` (with `{test}` substituted) through `sh -c` in the
/// repository root. Exit status 0 is a pass.
pub struct CommandRunner {
    command: String,
    timeout: Duration,
    // Splicing rewrites files in place, so runs are serialized.
    lock: Mutex<()>,
}

impl CommandRunner {
    pub fn new(command: impl Into<String>, timeout: Duration) -> Self {
        Self {
            command: command.into(),
            timeout,
            lock: Mutex::new(()),
        }
    }

    fn run_one(&self, repo_root: &Path, test: &str) -> Result<TestResult> {
        let command = self.command.replace("{test}", test);
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&command)
            .current_dir(repo_root)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Runner(format!("cannot start `{command}`: {e}")))?;
        let stdout = child.stdout.take().map(drain);
        let stderr = child.stderr.take().map(drain);
        let status = child
            .wait_timeout(self.timeout)
            .map_err(|e| Error::Runner(format!("waiting for `{command}`: {e}")))?;
        if status.is_none() {
            let _ = child.kill();
            let _ = child.wait();
            // Grandchildren may still hold the pipes; leave the readers detached.
            return Ok(TestResult::fail(format!("timed out after {:?}", self.timeout)));
        }
        let mut output = String::new();
        for handle in [stdout, stderr].into_iter().flatten() {
            output.push_str(&handle.join().unwrap_or_default());
        }
        if status.is_some_and(|s| s.success()) {
            Ok(TestResult::pass())
        } else {
            Ok(TestResult::fail(tail(output.trim(), OUTPUT_LIMIT)))
        }
    }
}

fn drain<R: Read + Send + 'static>(mut pipe: R) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = pipe.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).into_owned()
    })
}

fn tail(text: &str, limit: usize) -> String {
    if text.len() <= limit {
        return text.to_owned();
    }
    let mut start = text.len() - limit;
    while !text.is_char_boundary(start) {
        start += 1;
    }
    text[start..].to_owned()
}

impl TestRunner for CommandRunner {
    fn run(&self, task: &Task, repo_root: &Path, code: &str, tests: &[String]) -> Result<BTreeMap<String, TestResult>> {
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let _restore = match &task.completion_path {
            Some(rel) => {
                let path = repo_root.join(rel);
                let original = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let spliced = splice_function(&original, &task.target, code)?;
                std::fs::write(&path, spliced).map_err(|e| Error::io(&path, e))?;
                Some(Restore { path, original })
            }
            None => None,
        };
        let mut results = BTreeMap::new();
        for test in tests {
            results.insert(test.clone(), self.run_one(repo_root, test)?);
        }
        Ok(results)
    }
}

/// Writes the original file back when dropped, including on early return.
struct Restore {
    path: PathBuf,
    original: String,
}

impl Drop for Restore {
    fn drop(&mut self) {
        if let Err(e) = std::fs::write(&self.path, &self.original) {
            log::error!("could not restore {}: {e}", self.path.display());
        }
    }
}

/// Start byte of a definition including its decorators.
fn outer_start(def: Node<'_>) -> Node<'_> {
    match def.parent() {
        Some(p) if p.kind() == "decorated_definition" => p,
        _ => def,
    }
}

fn collect_defs<'t>(node: Node<'t>, src: &str, prefix: &str, out: &mut Vec<(String, Node<'t>)>) {
    for child in python::named_children(node) {
        let def = python::unwrap_decorated(child);
        if !python::is_definition(def) {
            continue;
        }
        let Some(name) = python::definition_name(def, src) else {
            continue;
        };
        let qualified = if prefix.is_empty() {
            name.to_owned()
        } else {
            format!("{prefix}.{name}")
        };
        if def.kind() == "function_definition" {
            out.push((qualified.clone(), def));
        }
        if let Some(body) = def.child_by_field_name("body") {
            collect_defs(body, src, &qualified, out);
        }
    }
}

fn line_indent(src: &str, byte: usize) -> &str {
    let line_start = src[..byte].rfind('\n').map_or(0, |i| i + 1);
    let line = &src[line_start..];
    &line[..line.len() - line.trim_start_matches([' ', '\t']).len()]
}

fn reindent(code: &str, indent: &str) -> String {
    let strip = code
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.len() - l.trim_start_matches([' ', '\t']).len())
        .min()
        .unwrap_or(0);
    code.lines()
        .map(|l| {
            if l.trim().is_empty() {
                String::new()
            } else {
                format!("{indent}{}", &l[strip.min(l.len())..])
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Replaces the definition of `target` (a dotted namespace whose trailing
/// segments name the function, possibly inside classes) in `file_source`
/// with the matching function from `generated`.
pub fn splice_function(file_source: &str, target: &str, generated: &str) -> Result<String> {
    let file = ParsedSource::parse(file_source)?;
    let mut defs = Vec::new();
    collect_defs(file.root(), file.source(), "", &mut defs);
    let (_, node) = defs
        .into_iter()
        .filter(|(q, _)| target == q || target.ends_with(&format!(".{q}")))
        .max_by_key(|(q, _)| q.len())
        .ok_or_else(|| Error::Runner(format!("target `{target}` not found in completion file")))?;
    let name = target.rsplit('.').next().unwrap_or(target);

    let generated_parsed = ParsedSource::parse(generated)?;
    let replacement = match python::find_function(generated_parsed.root(), generated, Some(name)) {
        Some(f) => {
            let start = outer_start(f);
            let from = generated[..start.start_byte()].rfind('\n').map_or(0, |i| i + 1);
            generated[from..python::trimmed_end(f)].to_owned()
        }
        None => generated.trim_end().to_owned(),
    };

    let outer = outer_start(node);
    let indent = line_indent(file_source, outer.start_byte());
    let line_start = outer.start_byte() - indent.len();
    let end = python::trimmed_end(node);
    Ok(format!(
        "{}{}{}",
        &file_source[..line_start],
        reindent(&replacement, indent),
        &file_source[end..]
    ))
}
