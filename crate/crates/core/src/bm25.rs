//! Okapi BM25 over a small in-memory corpus.
//!
//! score(D, Q) = Σ idf(q) · f(q,D)·(k1+1) / (f(q,D) + k1·(1 − b + b·|D|/avgdl))
//! with idf(q) = ln(1 + (N − n(q) + 0.5) / (n(q) + 0.5)), which stays positive.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::text::terms;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone)]
struct Doc {
    len: usize,
    tf: BTreeMap<String, u32>,
}

/// Term statistics for one field of one index.
#[derive(Debug, Clone, Default)]
pub struct Bm25Corpus {
    params: Bm25Params,
    docs: Vec<Doc>,
    doc_freq: BTreeMap<String, u32>,
    total_len: usize,
}

impl Bm25Corpus {
    pub fn new(params: Bm25Params) -> Self {
        Bm25Corpus {
            params,
            ..Default::default()
        }
    }

    /// Adds a document and returns its ordinal.
    pub fn add(&mut self, text: &str) -> usize {
        let toks = terms(text);
        let mut tf = BTreeMap::new();
        for t in &toks {
            *tf.entry(t.clone()).or_insert(0u32) += 1;
        }
        for t in tf.keys() {
            *self.doc_freq.entry(t.clone()).or_insert(0) += 1;
        }
        self.total_len += toks.len();
        self.docs.push(Doc { len: toks.len(), tf });
        self.docs.len() - 1
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        libm::log(1.0 + (n - df + 0.5) / (df + 0.5))
    }

    /// Score of document `ordinal` for `query`; `None` when no query term occurs in it.
    pub fn score(&self, ordinal: usize, query: &str) -> Option<f64> {
        let doc = self.docs.get(ordinal)?;
        let avgdl = if self.docs.is_empty() {
            0.0
        } else {
            self.total_len as f64 / self.docs.len() as f64
        };
        let Bm25Params { k1, b } = self.params;
        // repeated query terms count once
        let query_terms: BTreeSet<String> = terms(query).into_iter().collect();
        let mut matched = false;
        let mut total = 0.0;
        for t in &query_terms {
            let Some(&f) = doc.tf.get(t) else { continue };
            matched = true;
            let f = f as f64;
            let norm = if avgdl > 0.0 {
                1.0 - b + b * doc.len as f64 / avgdl
            } else {
                1.0
            };
            total += self.idf(t) * f * (k1 + 1.0) / (f + k1 * norm);
        }
        matched.then_some(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Frozen by a hand-run script: N=2, avgdl=2.5, d1 has length 3,
    // idf = ln(1 + 1.5/1.5) = ln 2 for both "server" and "restart",
    // tf-part = 2.2 / (1 + 1.2·(0.25 + 0.75·3/2.5)) = 2.2/2.38.
    const D1_SCORE: f64 = 1.281_448_569_102_42;

    #[test]
    fn hand_computed_score() {
        let mut c = Bm25Corpus::new(Bm25Params::default());
        let d1 = c.add("restart the server");
        let d2 = c.add("deploy pipeline");
        let s = c.score(d1, "server restart").unwrap();
        assert!((s - D1_SCORE).abs() < 1e-12, "{s}");
        assert_eq!(c.score(d2, "server restart"), None);
    }

    #[test]
    fn duplicate_query_terms_count_once() {
        let mut c = Bm25Corpus::new(Bm25Params::default());
        let d = c.add("disk full on node");
        c.add("unrelated words");
        assert_eq!(c.score(d, "disk"), c.score(d, "disk disk DISK"));
    }
}
