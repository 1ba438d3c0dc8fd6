//! Negative sampling: random, lexical (BM25) and embedding-similarity
//! strategies drawing from a shared response pool.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::bm25::{tf_norm, DocumentStats};
use crate::data::{CandidateResponse, DialogueInstance, Provenance};
use crate::embedding::{dot, HashedEmbedder};
use crate::error::{Error, Result};
use crate::seed;
use crate::text::{tokenize, tokenize_all};

/// Negatives per list when building `k = 10` evaluation lists.
pub const DEFAULT_NEGATIVES: usize = 9;

const POOL_MAGIC: &str = "# rankcal-pool v1";

/// All responses available for sampling, indexed for BM25 and embedding retrieval.
/// Responses are de-duplicated by id and kept in ascending id order.
#[derive(Debug, Clone)]
pub struct ResponsePool {
    responses: Vec<CandidateResponse>,
    tokens: Vec<Vec<String>>,
    /// term → (response index, term frequency), postings in ascending index
    index: BTreeMap<String, Vec<(usize, usize)>>,
    stats: DocumentStats,
    embedder: HashedEmbedder,
    embeddings: Vec<Vec<f64>>,
}

impl ResponsePool {
    pub fn new<I: IntoIterator<Item = CandidateResponse>>(responses: I) -> Self {
        Self::with_embedder(responses, HashedEmbedder::default())
    }

    pub fn with_embedder<I: IntoIterator<Item = CandidateResponse>>(responses: I, embedder: HashedEmbedder) -> Self {
        let mut by_id: BTreeMap<String, CandidateResponse> = BTreeMap::new();
        for r in responses {
            by_id.entry(r.id.clone()).or_insert(r);
        }
        let responses: Vec<CandidateResponse> = by_id.into_values().collect();
        let tokens: Vec<Vec<String>> = responses.iter().map(|r| tokenize(&r.text)).collect();
        let mut index: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
        for (d, toks) in tokens.iter().enumerate() {
            let mut tf: BTreeMap<&str, usize> = BTreeMap::new();
            for t in toks {
                *tf.entry(t).or_default() += 1;
            }
            for (t, n) in tf {
                index.entry(t.to_string()).or_default().push((d, n));
            }
        }
        let stats = DocumentStats::from_documents(tokens.iter().map(Vec::as_slice));
        let embeddings = tokens.iter().map(|t| embedder.embed(t)).collect();
        Self {
            responses,
            tokens,
            index,
            stats,
            embedder,
            embeddings,
        }
    }

    /// Pool of every candidate response in the corpus.
    pub fn from_corpus(corpus: &[DialogueInstance]) -> Self {
        Self::new(corpus.iter().flat_map(|i| i.candidates().iter().cloned()))
    }

    /// Pool of the ground-truth responses only.
    pub fn from_ground_truth(corpus: &[DialogueInstance]) -> Self {
        Self::new(corpus.iter().flat_map(|i| {
            i.candidates()
                .iter()
                .zip(i.labels())
                .filter(|(_, &l)| l == 1)
                .map(|(c, _)| c.clone())
        }))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn responses(&self) -> &[CandidateResponse] {
        &self.responses
    }

    pub fn postings(&self, term: &str) -> &[(usize, usize)] {
        self.index.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        &self.embeddings[i]
    }

    pub fn stats(&self) -> &DocumentStats {
        &self.stats
    }

    /// BM25 of every pooled response against the concatenated context.
    pub fn bm25_scores<S: AsRef<str>>(&self, context: &[S]) -> Vec<f64> {
        let mut qtf: BTreeMap<String, usize> = BTreeMap::new();
        for t in tokenize_all(context) {
            *qtf.entry(t).or_default() += 1;
        }
        let mut scores = vec![0.0; self.len()];
        for (term, q) in &qtf {
            let idf = self.stats.idf(term);
            for &(d, tf) in self.postings(term) {
                let len = self.tokens[d].len() as f64;
                scores[d] += *q as f64 * idf * tf_norm(tf as f64, len, self.stats.avg_len);
            }
        }
        scores
    }

    /// Dot product of the context embedding with every pooled response embedding.
    pub fn embedding_scores<S: AsRef<str>>(&self, context: &[S]) -> Vec<f64> {
        let q = self.embedder.embed(&tokenize_all(context));
        self.embeddings.iter().map(|e| dot(&q, e)).collect()
    }

    fn eligible(&self, exclude: &BTreeSet<String>, m: usize) -> Result<Vec<usize>> {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| !exclude.contains(&self.responses[i].id))
            .collect();
        if idx.len() < m {
            return Err(Error::InsufficientPool {
                requested: m,
                available: idx.len(),
            });
        }
        Ok(idx)
    }

    fn take(&self, idx: &[usize], provenance: Provenance) -> Vec<CandidateResponse> {
        idx.iter()
            .map(|&i| {
                let r = &self.responses[i];
                CandidateResponse::new(r.id.clone(), r.text.clone(), provenance)
            })
            .collect()
    }

    fn top_m(&self, scores: &[f64], m: usize, exclude: &BTreeSet<String>, provenance: Provenance) -> Result<Sampled> {
        let mut idx = self.eligible(exclude, m)?;
        // pool order is id order, so a stable sort breaks ties by ascending id
        idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        idx.truncate(m);
        let padded = idx.iter().any(|&i| scores[i] <= 0.0);
        Ok(Sampled {
            responses: self.take(&idx, provenance),
            padded,
        })
    }

    /// Persist the pool with a SHA-256 checksum over its body.
    pub fn save(&self, path: impl AsRef<Path>, config_hash: Option<&str>) -> Result<()> {
        let path = path.as_ref();
        let mut body = String::new();
        for r in &self.responses {
            let line = serde_json::to_string(r).map_err(|e| Error::invalid(e.to_string()))?;
            body.push_str(&line);
            body.push('\n');
        }
        let mut out = format!(
            "{POOL_MAGIC}\tsha256={}\tdim={}",
            hex::encode(Sha256::digest(body.as_bytes())),
            self.embedder.dim()
        );
        if let Some(h) = config_hash {
            let _ = write!(out, "\tconfig={h}");
        }
        out.push('\n');
        out.push_str(&body);
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Load a saved pool, verifying its checksum. Index and embeddings are rebuilt.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::io(path, e))?
            .ok_or_else(|| Error::Parse {
                line: 1,
                field: "header".into(),
                message: "empty pool file".into(),
            })?;
        let fields: HashMap<&str, &str> = header.split('\t').skip(1).filter_map(|f| f.split_once('=')).collect();
        if !header.starts_with(POOL_MAGIC) {
            return Err(Error::Parse {
                line: 1,
                field: "header".into(),
                message: format!("expected `{POOL_MAGIC}`"),
            });
        }
        let dim: usize = fields
            .get("dim")
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| Error::Parse {
                line: 1,
                field: "dim".into(),
                message: "missing or invalid".into(),
            })?;
        let mut body = String::new();
        let mut responses = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            body.push_str(&line);
            body.push('\n');
            let r: CandidateResponse = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: n + 2,
                field: "response".into(),
                message: e.to_string(),
            })?;
            responses.push(r);
        }
        if fields.get("sha256").copied() != Some(hex::encode(Sha256::digest(body.as_bytes())).as_str()) {
            return Err(Error::Checksum(path.to_path_buf()));
        }
        Ok(Self::with_embedder(responses, HashedEmbedder::new(dim)))
    }
}

/// Sampled negatives; `padded` is set when fewer than `m` responses scored
/// above zero and the tail was filled by id order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub responses: Vec<CandidateResponse>,
    pub padded: bool,
}

impl Sampled {
    pub fn ids(&self) -> Vec<&str> {
        self.responses.iter().map(|r| r.id.as_str()).collect()
    }
}

/// Uniform sample without replacement.
pub fn ns_random(pool: &ResponsePool, m: usize, seed: u64, exclude: &BTreeSet<String>) -> Result<Sampled> {
    let idx = pool.eligible(exclude, m)?;
    let mut rng = seed::rng(seed);
    let chosen: Vec<usize> = idx.choose_multiple(&mut rng, m).copied().collect();
    Ok(Sampled {
        responses: pool.take(&chosen, Provenance::SampledRandom),
        padded: false,
    })
}

/// Top `m` by BM25 against the concatenated context.
pub fn ns_lexical<S: AsRef<str>>(
    pool: &ResponsePool,
    context: &[S],
    m: usize,
    exclude: &BTreeSet<String>,
) -> Result<Sampled> {
    pool.top_m(&pool.bm25_scores(context), m, exclude, Provenance::SampledLexical)
}

/// Top `m` by hashed-embedding dot product with the context.
pub fn ns_embedding<S: AsRef<str>>(
    pool: &ResponsePool,
    context: &[S],
    m: usize,
    exclude: &BTreeSet<String>,
) -> Result<Sampled> {
    pool.top_m(&pool.embedding_scores(context), m, exclude, Provenance::SampledEmbedding)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Random,
    Bm25,
    Embed,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Random, Strategy::Bm25, Strategy::Embed];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Bm25 => "bm25",
            Strategy::Embed => "embed",
        }
    }

    pub fn sample<S: AsRef<str>>(
        &self,
        pool: &ResponsePool,
        context: &[S],
        m: usize,
        seed: u64,
        exclude: &BTreeSet<String>,
    ) -> Result<Sampled> {
        match self {
            Strategy::Random => ns_random(pool, m, seed, exclude),
            Strategy::Bm25 => ns_lexical(pool, context, m, exclude),
            Strategy::Embed => ns_embedding(pool, context, m, exclude),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "bm25" => Ok(Strategy::Bm25),
            "embed" => Ok(Strategy::Embed),
            other => Err(Error::invalid(format!(
                "unknown negative-sampling strategy `{other}` (expected random, bm25 or embed)"
            ))),
        }
    }
}

/// Rebuild every list as its ground truth plus `m` negatives drawn with
/// `strategy`; the ground truth lands at a seeded position.
pub fn resample_negatives(
    corpus: &[DialogueInstance],
    pool: &ResponsePool,
    strategy: Strategy,
    m: usize,
    seed: u64,
) -> Result<Vec<DialogueInstance>> {
    let out: Vec<(DialogueInstance, bool)> = corpus
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let gt_idx = match (inst.relevant_count(), inst.relevant_index()) {
                (1, Some(j)) => j,
                _ => {
                    return Err(Error::InvalidInstance {
                        id: inst.id().to_string(),
                        message: "negative resampling needs exactly one relevant candidate".into(),
                    })
                }
            };
            let gt = inst.candidates()[gt_idx].clone();
            let exclude = BTreeSet::from([gt.id.clone()]);
            let sampled = strategy.sample(
                pool,
                inst.context(),
                m,
                seed::derive_seed(seed, "ns-sample", i as u64),
                &exclude,
            )?;
            let mut cands = sampled.responses;
            let mut rng = seed::rng(seed::derive_seed(seed, "ns-position", i as u64));
            let mut slots: Vec<usize> = (0..=m).collect();
            slots.shuffle(&mut rng);
            let pos = slots[0];
            cands.insert(pos, CandidateResponse::new(gt.id, gt.text, Provenance::GroundTruth));
            let labels = (0..=m).map(|j| u8::from(j == pos)).collect();
            Ok((DialogueInstance::new(inst.id(), inst.context().to_vec(), cands, labels)?, sampled.padded))
        })
        .collect::<Result<_>>()?;
    let padded = out.iter().filter(|(_, p)| *p).count();
    if padded > 0 {
        log::info!("{strategy}: {padded} of {} lists padded by id order", out.len());
    }
    Ok(out.into_iter().map(|(i, _)| i).collect())
}

/// Jaccard overlap of two id sets.
pub fn jaccard<S: AsRef<str>>(a: &[S], b: &[S]) -> f64 {
    let a: BTreeSet<&str> = a.iter().map(AsRef::as_ref).collect();
    let b: BTreeSet<&str> = b.iter().map(AsRef::as_ref).collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resp(id: &str, text: &str) -> CandidateResponse {
        CandidateResponse::new(id, text, Provenance::GroundTruth)
    }

    fn none() -> BTreeSet<String> {
        BTreeSet::new()
    }

    #[test]
    fn pool_dedups_and_indexes() {
        let pool = ResponsePool::new([resp("b", "x y"), resp("a", "y z"), resp("b", "other")]);
        assert_eq!(pool.len(), 2);
        assert_eq!(pool.responses()[0].id, "a");
        assert_eq!(pool.postings("y"), &[(0, 1), (1, 1)]);
        for i in 0..pool.len() {
            let n: f64 = pool.embedding(i).iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
            for t in &pool.tokens[i] {
                assert!(pool.postings(t).iter().any(|&(d, _)| d == i));
            }
        }
    }

    #[test]
    fn random_full_complement_and_determinism() {
        let pool = ResponsePool::new((0..5).map(|i| resp(&format!("r{i}"), "t")));
        let ex = BTreeSet::from(["r2".to_string()]);
        let s = ns_random(&pool, 4, 7, &ex).unwrap();
        let mut ids = s.ids();
        ids.sort();
        assert_eq!(ids, vec!["r0", "r1", "r3", "r4"]);
        assert_eq!(ns_random(&pool, 3, 11, &ex).unwrap(), ns_random(&pool, 3, 11, &ex).unwrap());
        assert!(matches!(
            ns_random(&pool, 5, 1, &ex),
            Err(Error::InsufficientPool { requested: 5, available: 4 })
        ));
    }

    #[test]
    fn random_never_returns_excluded() {
        let pool = ResponsePool::new((0..12).map(|i| resp(&format!("r{i:02}"), "t")));
        let ex = BTreeSet::from(["r05".to_string()]);
        for s in 0..10_000u64 {
            assert!(!ns_random(&pool, 3, s, &ex).unwrap().ids().contains(&"r05"));
        }
    }

    #[test]
    fn lexical_hand_computed_ordering() {
        // docs: d1 = [a b], d2 = [a a c d], d3 = [e]; avgdl = 7/3; query = [a c]
        let pool = ResponsePool::new([resp("d1", "a b"), resp("d2", "a a c d"), resp("d3", "e")]);
        let idf_a = (1.0f64 + (3.0 - 2.0 + 0.5) / 2.5).ln();
        let idf_c = (1.0f64 + (3.0 - 1.0 + 0.5) / 1.5).ln();
        let avg = 7.0 / 3.0;
        let norm = |tf: f64, len: f64| tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * len / avg));
        let d1 = idf_a * norm(1.0, 2.0);
        let d2 = idf_a * norm(2.0, 4.0) + idf_c * norm(1.0, 4.0);
        let s = pool.bm25_scores(&["a c"]);
        assert!((s[0] - d1).abs() < 1e-12 && (s[1] - d2).abs() < 1e-12 && s[2] == 0.0);
        let got = ns_lexical(&pool, &["a c"], 3, &none()).unwrap();
        assert_eq!(got.ids(), vec!["d2", "d1", "d3"]);
        assert!(got.padded);
        let got = ns_lexical(&pool, &["a c"], 2, &none()).unwrap();
        assert!(!got.padded);
    }

    #[test]
    fn lexical_matches_document_stats() {
        let pool = ResponsePool::new([
            resp("1", "the cat sat on the mat"),
            resp("2", "a dog sat"),
            resp("3", "cats and dogs"),
            resp("4", "the the the"),
        ]);
        let q = tokenize("the cat sat the");
        let s = pool.bm25_scores(&["the cat sat the"]);
        for (i, toks) in pool.tokens.iter().enumerate() {
            assert!((s[i] - pool.stats().bm25(&q, toks)).abs() < 1e-12);
        }
    }

    #[test]
    fn lexical_identical_ranks_first_and_oov_padding() {
        let pool = ResponsePool::new([
            resp("a", "zebra yak"),
            resp("b", "hello world again"),
            resp("c", "quux frob"),
        ]);
        assert_eq!(ns_lexical(&pool, &["hello", "world again"], 1, &none()).unwrap().ids(), vec!["b"]);
        let oov = ns_lexical(&pool, &["nothing matches"], 3, &none()).unwrap();
        assert_eq!(oov.ids(), vec!["a", "b", "c"]);
        assert!(oov.padded);
    }

    #[test]
    fn embedding_identical_first_and_brute_force() {
        let texts = ["red green", "blue", "green blue red", "yellow", "red green"];
        let pool = ResponsePool::new(texts.iter().enumerate().map(|(i, t)| resp(&format!("e{i}"), t)));
        let ctx = ["green", "red"];
        let got = ns_embedding(&pool, &ctx, 5, &none()).unwrap();
        assert_eq!(&got.ids()[..2], &["e0", "e4"]);
        let emb = HashedEmbedder::default();
        let q = emb.embed(&tokenize_all(&ctx));
        let mut brute: Vec<(f64, String)> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| (dot(&q, &emb.embed(&tokenize(t))), format!("e{i}")))
            .collect();
        brute.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        assert_eq!(got.ids(), brute.iter().map(|b| b.1.as_str()).collect::<Vec<_>>());
        assert!((pool.embedding_scores(&ctx)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn strategies_exclude_ground_truth() {
        let pool = ResponsePool::new([resp("gt", "same words"), resp("x", "same"), resp("y", "words"), resp("z", "q")]);
        let ex = BTreeSet::from(["gt".to_string()]);
        for s in Strategy::ALL {
            let got = s.sample(&pool, &["same words"], 3, 5, &ex).unwrap();
            assert!(!got.ids().contains(&"gt"), "{s}");
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert!("sbert".parse::<Strategy>().is_err());
    }

    #[test]
    fn resample_places_ground_truth() {
        let inst = DialogueInstance::new(
            "q1",
            vec!["hello there".into()],
            vec![resp("g", "hi"), CandidateResponse::new("n", "no", Provenance::SampledRandom)],
            vec![1, 0],
        )
        .unwrap();
        let pool = ResponsePool::new((0..20).map(|i| resp(&format!("p{i:02}"), "hello")).chain([resp("g", "hi")]));
        let out = resample_negatives(&[inst], &pool, Strategy::Bm25, 9, 3).unwrap();
        let o = &out[0];
        assert_eq!(o.len(), 10);
        let j = o.relevant_index().unwrap();
        assert_eq!(o.candidates()[j].id, "g");
        assert_eq!(o.candidates()[j].provenance, Provenance::GroundTruth);
        assert_eq!(o.relevant_count(), 1);
    }

    #[test]
    fn save_load_round_trip_and_checksum() {
        let pool = ResponsePool::new([resp("a", "one two"), resp("b", "three")]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pool.jsonl");
        pool.save(&p, Some("abc")).unwrap();
        let back = ResponsePool::load(&p).unwrap();
        assert_eq!(back.responses(), pool.responses());
        assert_eq!(back.embeddings, pool.embeddings);
        let text = std::fs::read_to_string(&p).unwrap().replace("three", "thre3");
        std::fs::write(&p, text).unwrap();
        assert!(matches!(ResponsePool::load(&p), Err(Error::Checksum(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn bm25_non_negative_and_monotone_in_query_tf(
                docs in proptest::collection::vec("[a-e]( [a-e]){0,5}", 1..8),
                q in "[a-f]( [a-f]){0,4}",
                extra in "[a-f]",
            ) {
                let pool = ResponsePool::new(docs.iter().enumerate().map(|(i, t)| resp(&i.to_string(), t)));
                let base = pool.bm25_scores(&[q.as_str()]);
                let more = pool.bm25_scores(&[q.as_str(), extra.as_str()]);
                for (b, m) in base.iter().zip(&more) {
                    prop_assert!(*b >= 0.0);
                    prop_assert!(*m >= *b - 1e-12);
                }
            }
        }
    }
}
