//! Completion and embedding backends behind one handle, with token
//! accounting shared by every caller.

mod http;
mod mock;
mod prompt;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpCompletion, HttpEmbedding};
pub use mock::{HashingEmbedder, ScriptEntry, ScriptedCompletion, DEFAULT_HASH_DIM};
pub use prompt::{
    append_conflicts, parse_decision, render_prompt, DecisionParseError, MissingSlot, TemplateId,
    EMPTY_SLOT, GENERATE_MARKER, JUDGE_MARKER, NOTE_MARKER, REGENERATE_MARKER,
};

pub type Embedding = Vec<f32>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Decode(String),
    #[error("mock script exhausted (no entry matches prompt starting {0:?})")]
    ScriptExhausted(String),
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("gateway misconfigured: {0}")]
    Config(String),
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, GatewayError>;
}

pub trait EmbeddingBackend: Send + Sync {
    fn embed(&self, text: &str) -> Result<Embedding, GatewayError>;
}

/// Deterministic token estimate: identifier and number runs count as one
/// token each, every other non-whitespace character counts as one.
pub fn estimate_tokens(text: &str) -> u64 {
    let mut count = 0;
    let mut in_word = false;
    for c in text.chars() {
        if c.is_alphanumeric() || c == '_' {
            if !in_word {
                count += 1;
                in_word = true;
            }
        } else {
            in_word = false;
            if !c.is_whitespace() {
                count += 1;
            }
        }
    }
    count
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn similarity(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub completion_calls: u64,
    pub embedding_tokens: u64,
    pub embedding_calls: u64,
}

impl Usage {
    /// Completion-side tokens (prompt plus completion).
    pub fn llm_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub fn since(&self, earlier: &Usage) -> Usage {
        Usage {
            prompt_tokens: self.prompt_tokens - earlier.prompt_tokens,
            completion_tokens: self.completion_tokens - earlier.completion_tokens,
            completion_calls: self.completion_calls - earlier.completion_calls,
            embedding_tokens: self.embedding_tokens - earlier.embedding_tokens,
            embedding_calls: self.embedding_calls - earlier.embedding_calls,
        }
    }
}

#[derive(Debug, Default)]
struct Counters {
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
    completion_calls: AtomicU64,
    embedding_tokens: AtomicU64,
    embedding_calls: AtomicU64,
}

/// Shared handle over a completion and an embedding backend.
#[derive(Clone)]
pub struct Gateway {
    completion: Arc<dyn CompletionBackend>,
    embedder: Arc<dyn EmbeddingBackend>,
    counters: Arc<Counters>,
}

impl Gateway {
    pub fn new(completion: Arc<dyn CompletionBackend>, embedder: Arc<dyn EmbeddingBackend>) -> Self {
        Self {
            completion,
            embedder,
            counters: Arc::default(),
        }
    }

    /// Scripted completions plus the hashing embedder.
    pub fn scripted(script: Arc<ScriptedCompletion>) -> Self {
        Self::new(script, Arc::new(HashingEmbedder::default()))
    }

    pub fn complete(&self, prompt: &str) -> Result<String, GatewayError> {
        if prompt.trim().is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        let response = self.completion.complete(prompt)?;
        let c = &self.counters;
        c.prompt_tokens.fetch_add(estimate_tokens(prompt), Ordering::Relaxed);
        c.completion_tokens.fetch_add(estimate_tokens(&response), Ordering::Relaxed);
        c.completion_calls.fetch_add(1, Ordering::Relaxed);
        Ok(response)
    }

    pub fn embed(&self, text: &str) -> Result<Embedding, GatewayError> {
        let vector = self.embedder.embed(text)?;
        let c = &self.counters;
        c.embedding_tokens.fetch_add(estimate_tokens(text), Ordering::Relaxed);
        c.embedding_calls.fetch_add(1, Ordering::Relaxed);
        Ok(vector)
    }

    pub fn usage(&self) -> Usage {
        let c = &self.counters;
        Usage {
            prompt_tokens: c.prompt_tokens.load(Ordering::Relaxed),
            completion_tokens: c.completion_tokens.load(Ordering::Relaxed),
            completion_calls: c.completion_calls.load(Ordering::Relaxed),
            embedding_tokens: c.embedding_tokens.load(Ordering::Relaxed),
            embedding_calls: c.embedding_calls.load(Ordering::Relaxed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_estimate_counts_words_and_punctuation() {
        assert_eq!(estimate_tokens("def f(x): return x_1 + 2"), 10);
        assert_eq!(estimate_tokens("   "), 0);
    }

    #[test]
    fn counters_sum_over_calls() {
        let script = Arc::new(ScriptedCompletion::from_responses(["ok", "fine then"]));
        let gateway = Gateway::scripted(script);
        let p1 = "first prompt (with punctuation)";
        let p2 = "second_prompt";
        gateway.complete(p1).unwrap();
        gateway.complete(p2).unwrap();
        let usage = gateway.usage();
        assert_eq!(usage.prompt_tokens, estimate_tokens(p1) + estimate_tokens(p2));
        assert_eq!(usage.completion_tokens, estimate_tokens("ok") + estimate_tokens("fine then"));
        assert_eq!(usage.completion_calls, 2);
    }

    #[test]
    fn empty_prompt_is_rejected() {
        let gateway = Gateway::scripted(Arc::new(ScriptedCompletion::from_responses(["x"])));
        assert_eq!(gateway.complete("  "), Err(GatewayError::EmptyPrompt));
    }

    #[test]
    fn similarity_basics() {
        let v = vec![1.0, 2.0, 3.0];
        assert!((similarity(&v, &v) - 1.0).abs() < 1e-12);
        assert_eq!(similarity(&v, &[0.0, 0.0, 0.0]), 0.0);
        assert!((similarity(&[1.0, 0.0], &[-1.0, 0.0]) + 1.0).abs() < 1e-12);
    }
}
