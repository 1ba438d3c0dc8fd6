//! Okapi BM25 over tokenized documents.
//!
//! `score(D, Q) = Σ_{q ∈ Q} idf(q) · tf(q, D)·(k1 + 1) / (tf(q, D) + k1·(1 − b + b·|D|/avgdl))`
//! with `idf(q) = ln(1 + (N − df(q) + 0.5) / (df(q) + 0.5))`, which is never
//! negative. Query terms are counted with multiplicity.

use std::collections::{HashMap, HashSet};

pub const K1: f64 = 1.2;
pub const B: f64 = 0.75;

/// Document frequencies and length statistics of a document collection.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DocumentStats {
    pub n_docs: usize,
    pub df: HashMap<String, usize>,
    pub avg_len: f64,
}

impl DocumentStats {
    pub fn from_documents<'a, I>(docs: I) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut n_docs = 0usize;
        let mut total_len = 0usize;
        for doc in docs {
            n_docs += 1;
            total_len += doc.len();
            let unique: HashSet<&String> = doc.iter().collect();
            for term in unique {
                *df.entry(term.clone()).or_default() += 1;
            }
        }
        let avg_len = if n_docs == 0 {
            0.0
        } else {
            total_len as f64 / n_docs as f64
        };
        Self { n_docs, df, avg_len }
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.df.get(term).copied().unwrap_or(0)
    }

    pub fn idf(&self, term: &str) -> f64 {
        idf(self.n_docs, self.doc_freq(term))
    }

    /// BM25 of `doc` against `query`.
    pub fn bm25(&self, query: &[String], doc: &[String]) -> f64 {
        if query.is_empty() || doc.is_empty() {
            return 0.0;
        }
        let mut tf: HashMap<&str, usize> = HashMap::new();
        for t in doc {
            *tf.entry(t.as_str()).or_default() += 1;
        }
        query
            .iter()
            .map(|q| match tf.get(q.as_str()) {
                Some(&f) => self.idf(q) * tf_norm(f as f64, doc.len() as f64, self.avg_len),
                None => 0.0,
            })
            .sum()
    }
}

pub fn idf(n_docs: usize, df: usize) -> f64 {
    let n = n_docs as f64;
    let df = (df as f64).min(n);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Saturated, length-normalized term frequency component.
pub fn tf_norm(tf: f64, doc_len: f64, avg_len: f64) -> f64 {
    let avg = if avg_len > 0.0 { avg_len } else { 1.0 };
    tf * (K1 + 1.0) / (tf + K1 * (1.0 - B + B * doc_len / avg))
}
