//! Hand-crafted (context, response) features consumed by the scorer.
//!
//! Feature order is fixed:
//!
//! | idx | feature |
//! |-----|---------|
//! | 0 | `ln(1 + BM25)` of the response against the concatenated context |
//! | 1 | unigram Jaccard between response and last context utterance |
//! | 2 | bigram Jaccard between response and last context utterance |
//! | 3 | IDF-weighted overlap: `Σ_{t∈R∩C} idf(t) / Σ_{t∈R} idf(t)` over term sets |
//! | 4 | `ln(1 + |response tokens|)` |
//! | 5 | `ln(1 + |context tokens|)` |
//! | 6 | cosine of hashed embeddings (context vs. response) |
//! | 7 | fraction of distinct context terms present in the response |
//!
//! Document statistics (df, average length) come from the training corpus'
//! candidate responses. Empty inputs give zero overlap features.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::bm25::DocumentStats;
use crate::data::DialogueInstance;
use crate::embedding::{dot, HashedEmbedder};
use crate::error::{Error, Result};
use crate::text::tokenize;

const STATS_MAGIC: &str = "# rankcal-stats v1";

pub const FEATURE_DIM: usize = 8;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "log_bm25",
    "jaccard_unigram",
    "jaccard_bigram",
    "idf_overlap",
    "log_response_len",
    "log_context_len",
    "hashed_cosine",
    "context_coverage",
];

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Corpus-level statistics needed for feature extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub documents: DocumentStats,
    pub embedder: HashedEmbedder,
}

impl CorpusStats {
    /// Statistics over the distinct (by id) candidate responses of `corpus`.
    pub fn from_corpus(corpus: &[DialogueInstance]) -> Self {
        let mut seen = HashSet::new();
        let docs: Vec<Vec<String>> = corpus
            .iter()
            .flat_map(|inst| inst.candidates())
            .filter(|c| seen.insert(c.id.as_str()))
            .map(|c| tokenize(&c.text))
            .collect();
        Self {
            documents: DocumentStats::from_documents(docs.iter().map(|d| d.as_slice())),
            embedder: HashedEmbedder::default(),
        }
    }

    /// Text form: a header with document count, average length and embedding
    /// dimension, then `term<TAB>df` lines in term order.
    pub fn to_text(&self, comment: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(c) = comment {
            let _ = writeln!(s, "# {c}");
        }
        let _ = writeln!(
            s,
            "{STATS_MAGIC}\tn_docs={}\tavg_len={:?}\tdim={}",
            self.documents.n_docs,
            self.documents.avg_len,
            self.embedder.dim()
        );
        let sorted: BTreeMap<&String, &usize> = self.documents.df.iter().collect();
        for (t, df) in sorted {
            let _ = writeln!(s, "{t}\t{df}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().skip_while(|(_, l)| !l.starts_with(STATS_MAGIC));
        let (_, header) = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            field: "header".into(),
            message: format!("missing `{STATS_MAGIC}`"),
        })?;
        let fields: HashMap<&str, &str> = header.split('\t').skip(1).filter_map(|f| f.split_once('=')).collect();
        let get = |k: &str| {
            fields.get(k).copied().ok_or_else(|| Error::Parse {
                line: 1,
                field: k.into(),
                message: "missing".into(),
            })
        };
        let bad = |k: &str| Error::Parse {
            line: 1,
            field: k.into(),
            message: "not a number".into(),
        };
        let n_docs: usize = get("n_docs")?.parse().map_err(|_| bad("n_docs"))?;
        let avg_len: f64 = get("avg_len")?.parse().map_err(|_| bad("avg_len"))?;
        let dim: usize = get("dim")?.parse().map_err(|_| bad("dim"))?;
        if dim == 0 {
            return Err(bad("dim"));
        }
        let mut df = HashMap::new();
        for (i, line) in lines {
            let (t, n) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: i + 1,
                field: "df".into(),
                message: "expected term<TAB>count".into(),
            })?;
            let n: usize = n.parse().map_err(|_| Error::Parse {
                line: i + 1,
                field: "df".into(),
                message: format!("bad count `{n}`"),
            })?;
            df.insert(t.to_string(), n);
        }
        Ok(Self {
            documents: DocumentStats { n_docs, df, avg_len },
            embedder: HashedEmbedder::new(dim),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>, comment: Option<&str>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text(comment)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// A tokenized context, reusable across all its candidate responses.
#[derive(Debug, Clone)]
pub struct PreparedContext {
    all: Vec<String>,
    terms: BTreeSet<String>,
    last_terms: BTreeSet<String>,
    last_bigrams: BTreeSet<(String, String)>,
    embedding: Vec<f64>,
}

fn bigrams(tokens: &[String]) -> BTreeSet<(String, String)> {
    tokens
        .windows(2)
        .map(|w| (w[0].clone(), w[1].clone()))
        .collect()
}

fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

impl PreparedContext {
    pub fn new<S: AsRef<str>>(context: &[S], stats: &CorpusStats) -> Self {
        let per_utt: Vec<Vec<String>> = context.iter().map(|u| tokenize(u.as_ref())).collect();
        let all: Vec<String> = per_utt.iter().flatten().cloned().collect();
        let last: &[String] = per_utt.last().map(|v| v.as_slice()).unwrap_or(&[]);
        Self {
            terms: all.iter().cloned().collect(),
            last_terms: last.iter().cloned().collect(),
            last_bigrams: bigrams(last),
            embedding: stats.embedder.embed(&all),
            all,
        }
    }

    pub fn features(&self, response: &str, stats: &CorpusStats) -> FeatureVector {
        let r = tokenize(response);
        let r_terms: BTreeSet<String> = r.iter().cloned().collect();
        let shared: Vec<&String> = r_terms.intersection(&self.terms).collect();

        let bm25 = stats.documents.bm25(&self.all, &r);
        let idf_total: f64 = r_terms.iter().map(|t| stats.documents.idf(t)).sum();
        let idf_shared: f64 = shared.iter().map(|t| stats.documents.idf(t)).sum();
        let idf_overlap = if idf_total > 0.0 {
            idf_shared / idf_total
        } else {
            0.0
        };
        let coverage = if self.terms.is_empty() {
            0.0
        } else {
            shared.len() as f64 / self.terms.len() as f64
        };
        let cosine = dot(&self.embedding, &stats.embedder.embed(&r));

        FeatureVector {
            values: vec![
                bm25.ln_1p(),
                jaccard(&r_terms, &self.last_terms),
                jaccard(&bigrams(&r), &self.last_bigrams),
                idf_overlap,
                (r.len() as f64).ln_1p(),
                (self.all.len() as f64).ln_1p(),
                cosine,
                coverage,
            ],
        }
    }
}

pub fn extract_features<S: AsRef<str>>(context: &[S], response: &str, stats: &CorpusStats) -> FeatureVector {
    PreparedContext::new(context, stats).features(response, stats)
}

/// Features for every candidate of an instance, in candidate order.
pub fn instance_features(instance: &DialogueInstance, stats: &CorpusStats) -> Vec<FeatureVector> {
    let ctx = PreparedContext::new(instance.context(), stats);
    instance
        .candidates()
        .iter()
        .map(|c| ctx.features(&c.text, stats))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CandidateResponse, Provenance};

    fn stats_for(responses: &[&str]) -> CorpusStats {
        let candidates: Vec<_> = responses
            .iter()
            .enumerate()
            .map(|(i, t)| CandidateResponse::new(format!("r{i}"), *t, Provenance::SampledRandom))
            .collect();
        let mut labels = vec![0u8; candidates.len()];
        labels[0] = 1;
        let inst = DialogueInstance::new("s", vec![], candidates, labels).unwrap();
        CorpusStats::from_corpus(&[inst])
    }

    #[test]
    fn response_equal_to_last_utterance() {
        let stats = stats_for(&["the printer is offline", "reboot it", "check the cable"]);
        let ctx = ["hello there", "my printer is offline again"];
        let f = extract_features(&ctx, "My printer is offline again!", &stats);
        assert_eq!(f.dim(), FEATURE_DIM);
        assert_eq!(f.values[1], 1.0);
        assert_eq!(f.values[2], 1.0);
        assert_eq!(f.values[3], 1.0);
    }

    #[test]
    fn disjoint_vocabulary_zeroes_overlap_features() {
        let stats = stats_for(&["alpha beta", "gamma"]);
        let f = extract_features(&["alpha beta gamma"], "delta epsilon", &stats);
        for idx in [0, 1, 2, 3, 7] {
            assert_eq!(f.values[idx], 0.0, "feature {}", FEATURE_NAMES[idx]);
        }
        assert!(f.values[4] > 0.0 && f.values[5] > 0.0);
    }

    #[test]
    fn empty_inputs_are_finite_zeros() {
        let stats = stats_for(&["alpha", "beta"]);
        let f = extract_features::<&str>(&[], "...", &stats);
        assert!(f.values.iter().all(|v| *v == 0.0));
    }

    /// Independent re-derivation of every feature for a small hand-built case.
    #[test]
    fn matches_hand_computation() {
        let stats = stats_for(&["a b", "b c c", "d"]);
        let ctx = ["x a", "a b c"];
        let response = "b c d";
        let f = extract_features(&ctx, response, &stats);

        let n = 3.0f64;
        let idf = |df: f64| (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        let (idf_b, idf_c, idf_d) = (idf(2.0), idf(1.0), idf(1.0));
        // doc "b c d", |D| = 3, avgdl = 2; query tokens x a a b c
        let tfn = 2.2 / (1.0 + 1.2 * (0.25 + 0.75 * 1.5));
        let bm25 = (idf_b + idf_c) * tfn;
        let expected = [
            bm25.ln_1p(),
            2.0 / 4.0,                                  // {b,c,d} vs {a,b,c}
            1.0 / 3.0,                                  // {bc,cd} vs {ab,bc}
            (idf_b + idf_c) / (idf_b + idf_c + idf_d),  // shared {b,c}
            4.0f64.ln(),
            6.0f64.ln(),
            f64::NAN, // checked separately
            2.0 / 4.0, // context terms {x,a,b,c}, covered {b,c}
        ];
        for (i, e) in expected.iter().enumerate() {
            if i == 6 {
                continue;
            }
            assert!((f.values[i] - e).abs() < 1e-12, "{}: {} vs {}", FEATURE_NAMES[i], f.values[i], e);
        }
        let emb = HashedEmbedder::default();
        let cos = dot(&emb.embed(&["x", "a", "a", "b", "c"]), &emb.embed(&["b", "c", "d"]));
        assert!((f.values[6] - cos).abs() < 1e-12);
    }

    #[test]
    fn deterministic() {
        let stats = stats_for(&["one two", "three"]);
        let a = extract_features(&["one two three"], "two three", &stats);
        let b = extract_features(&["one two three"], "two three", &stats);
        assert_eq!(a, b);
    }

    #[test]
    fn stats_text_round_trip() {
        use crate::data::{CandidateResponse, Provenance};
        let inst = DialogueInstance::new(
            "q",
            vec!["a b".into()],
            vec![
                CandidateResponse::new("1", "a b c", Provenance::GroundTruth),
                CandidateResponse::new("2", "c d", Provenance::SampledRandom),
            ],
            vec![1, 0],
        )
        .unwrap();
        let stats = CorpusStats::from_corpus(&[inst]);
        let text = stats.to_text(Some("config=x"));
        assert_eq!(CorpusStats::from_text(&text).unwrap(), stats);
        assert!(CorpusStats::from_text("nothing").is_err());
    }
}
