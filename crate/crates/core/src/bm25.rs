//! Okapi BM25 over rendered block keys.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Lowercased terms split on non-alphanumerics, snake_case underscores and
/// camelCase boundaries. `HTTPServerError2` yields `http`, `server`,
/// `error`, `2`.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut terms = Vec::new();
    for word in text.split(|c: char| !c.is_alphanumeric()) {
        if word.is_empty() {
            continue;
        }
        let chars: Vec<char> = word.chars().collect();
        let mut current = String::new();
        for (i, &c) in chars.iter().enumerate() {
            if i > 0 && !current.is_empty() {
                let prev = chars[i - 1];
                let next = chars.get(i + 1).copied();
                let boundary = (prev.is_lowercase() && c.is_uppercase())
                    || (prev.is_alphabetic() && c.is_ascii_digit())
                    || (prev.is_ascii_digit() && c.is_alphabetic())
                    || (prev.is_uppercase()
                        && c.is_uppercase()
                        && next.is_some_and(|n| n.is_lowercase()));
                if boundary {
                    terms.push(std::mem::take(&mut current));
                }
            }
            current.extend(c.to_lowercase());
        }
        if !current.is_empty() {
            terms.push(current);
        }
    }
    terms
}

#[derive(Debug, Clone)]
struct Doc {
    term_freqs: HashMap<String, u32>,
    len: usize,
}

/// An immutable BM25 index. Document ids are the caller's string keys.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    ids: Vec<String>,
    docs: Vec<Doc>,
    doc_freq: HashMap<String, u32>,
    avg_len: f64,
}

impl Bm25Index {
    pub fn new<I, S, T>(params: Bm25Params, documents: I) -> Self
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        let mut ids = Vec::new();
        let mut docs = Vec::new();
        let mut doc_freq: HashMap<String, u32> = HashMap::new();
        for (id, text) in documents {
            let terms = tokenize(text.as_ref());
            let mut term_freqs: HashMap<String, u32> = HashMap::new();
            for term in &terms {
                *term_freqs.entry(term.clone()).or_default() += 1;
            }
            for term in term_freqs.keys() {
                *doc_freq.entry(term.clone()).or_default() += 1;
            }
            ids.push(id.into());
            docs.push(Doc {
                term_freqs,
                len: terms.len(),
            });
        }
        let total: usize = docs.iter().map(|d| d.len).sum();
        let avg_len = if docs.is_empty() {
            0.0
        } else {
            total as f64 / docs.len() as f64
        };
        Self {
            params,
            ids,
            docs,
            doc_freq,
            avg_len,
        }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Non-negative smoothed idf: ln(1 + (N - df + 0.5) / (df + 0.5)).
    fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = f64::from(self.doc_freq.get(term).copied().unwrap_or(0));
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Scores every document. Repeated query terms count once per
    /// occurrence.
    pub fn scores(&self, query: &str) -> Vec<(String, f64)> {
        let terms = tokenize(query);
        let Bm25Params { k1, b } = self.params;
        self.ids
            .iter()
            .zip(&self.docs)
            .map(|(id, doc)| {
                let norm = if self.avg_len > 0.0 {
                    1.0 - b + b * doc.len as f64 / self.avg_len
                } else {
                    1.0
                };
                let score = terms
                    .iter()
                    .filter_map(|t| doc.term_freqs.get(t).map(|&tf| (t, f64::from(tf))))
                    .map(|(t, tf)| self.idf(t) * tf * (k1 + 1.0) / (tf + k1 * norm))
                    .sum();
                (id.clone(), score)
            })
            .collect()
    }

    /// Documents with a positive score, best first, ties broken by id.
    pub fn top_k(&self, query: &str, k: usize) -> Vec<(String, f64)> {
        let mut scored: Vec<_> = self.scores(query).into_iter().filter(|(_, s)| *s > 0.0).collect();
        sort_ranked(&mut scored);
        scored.truncate(k);
        scored
    }
}

pub(crate) fn sort_ranked(scored: &mut [(String, f64)]) {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_splits_identifiers() {
        assert_eq!(tokenize("NetstringSocket.read_ns"), ["netstring", "socket", "read", "ns"]);
        assert_eq!(tokenize("HTTPServerError2"), ["http", "server", "error", "2"]);
        assert_eq!(tokenize("_calc_msgsize_maxsize"), ["calc", "msgsize", "maxsize"]);
        assert!(tokenize("  ()  ").is_empty());
    }

    #[test]
    fn unique_term_ranks_first() {
        let index = Bm25Index::new(
            Bm25Params::default(),
            [("a", "def alpha(x): pass"), ("b", "def beta(x): pass"), ("c", "def gamma(x): pass")],
        );
        let top = index.top_k("please update beta", 5);
        assert_eq!(top[0].0, "b");
        assert_eq!(top.len(), 1);
    }

    #[test]
    fn empty_index_returns_nothing() {
        let index = Bm25Index::new(Bm25Params::default(), Vec::<(String, String)>::new());
        assert!(index.top_k("anything", 5).is_empty());
    }
}
