//! Synthetic dialogue corpora with controllable context/response overlap and
//! vocabulary shift.
//!
//! Tokens are drawn from a Zipf-distributed vocabulary `w0, w1, ...`. A
//! relevant response takes each of its `L` tokens from the context with
//! probability `relevant_overlap` (or exactly `round(relevant_overlap · L)` of
//! them under [`OverlapSampling::Exact`]) and draws the rest from outside it;
//! distractors do the same with `distractor_overlap`. The shift knob renames a fixed,
//! hash-selected fraction of the vocabulary (`w17` becomes `x17`), so a shift
//! of 1 yields a vocabulary disjoint from the unshifted one.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CandidateResponse, DialogueInstance, Provenance, DEFAULT_K};
use crate::error::{Error, Result};
use crate::seed;

/// How many of a response's tokens come from the context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapSampling {
    /// Exactly `round(fraction · L)`.
    Exact,
    /// Each token independently with probability `fraction`.
    #[default]
    Binomial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticCorpusSpec {
    pub instances: usize,
    pub vocab_size: usize,
    /// Inclusive range of context turns.
    pub context_turns: (usize, usize),
    /// Inclusive range of tokens per context utterance.
    pub utterance_len: (usize, usize),
    /// Inclusive range of tokens per candidate response.
    pub response_len: (usize, usize),
    pub relevant_overlap: f64,
    pub distractor_overlap: f64,
    /// Fraction of the vocabulary renamed, in `[0, 1]`.
    pub shift: f64,
    pub zipf_exponent: f64,
    pub overlap_sampling: OverlapSampling,
    pub k: usize,
    pub seed: u64,
    pub id_prefix: String,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            instances: 2000,
            vocab_size: 2000,
            context_turns: (2, 4),
            utterance_len: (5, 12),
            response_len: (6, 12),
            relevant_overlap: 0.6,
            distractor_overlap: 0.1,
            shift: 0.0,
            zipf_exponent: 1.0,
            overlap_sampling: OverlapSampling::Binomial,
            k: DEFAULT_K,
            seed: 0,
            id_prefix: "s".into(),
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let frac = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {v} outside [0, 1]")))
            }
        };
        frac("relevant_overlap", self.relevant_overlap)?;
        frac("distractor_overlap", self.distractor_overlap)?;
        frac("shift", self.shift)?;
        if self.relevant_overlap <= self.distractor_overlap {
            return Err(Error::invalid(format!(
                "relevant_overlap {} must exceed distractor_overlap {}",
                self.relevant_overlap, self.distractor_overlap
            )));
        }
        for (name, (lo, hi)) in [
            ("context_turns", self.context_turns),
            ("utterance_len", self.utterance_len),
            ("response_len", self.response_len),
        ] {
            if lo == 0 || lo > hi {
                return Err(Error::invalid(format!("{name} range ({lo}, {hi}) is empty or starts at 0")));
            }
        }
        if self.k < 2 {
            return Err(Error::invalid("k must be at least 2"));
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
            return Err(Error::invalid("zipf_exponent must be finite and non-negative"));
        }
        let max_context = self.context_turns.1 * self.utterance_len.1;
        if self.vocab_size < 2 * max_context.max(self.response_len.1) {
            return Err(Error::invalid(format!(
                "vocabulary of {} too small: contexts reach {max_context} tokens and need as many outside tokens",
                self.vocab_size
            )));
        }
        Ok(())
    }
}

/// Whether vocabulary entry `t` is renamed at shift level `shift`. The
/// selection depends only on `t`, so larger shifts rename supersets.
pub fn is_rotated(t: usize, shift: f64) -> bool {
    let u = seed::derive_seed(0, "vocab-rotation", t as u64) as f64 / 18_446_744_073_709_551_616.0;
    u < shift
}

fn token_name(t: usize, shift: f64) -> String {
    if is_rotated(t, shift) {
        format!("x{t}")
    } else {
        format!("w{t}")
    }
}

struct Zipf {
    cdf: Vec<f64>,
}

impl Zipf {
    fn new(n: usize, s: f64) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = (0..n)
            .map(|r| {
                acc += 1.0 / ((r + 1) as f64).powf(s);
                acc
            })
            .collect();
        let total = acc;
        cdf.iter_mut().for_each(|c| *c /= total);
        Self { cdf }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }
}

fn response_tokens(
    rng: &mut ChaCha8Rng,
    zipf: &Zipf,
    spec: &SyntheticCorpusSpec,
    context: &[usize],
    overlap: f64,
) -> Vec<usize> {
    let len = rng.random_range(spec.response_len.0..=spec.response_len.1);
    let from_context = match spec.overlap_sampling {
        OverlapSampling::Exact => ((overlap * len as f64).round() as usize).min(len),
        OverlapSampling::Binomial => (0..len).filter(|_| rng.random::<f64>() < overlap).count(),
    };
    let mut distinct: Vec<usize> = context.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let mut toks: Vec<usize> = (0..from_context).map(|_| *distinct.choose(rng).expect("non-empty context")).collect();
    while toks.len() < len {
        let t = zipf.sample(rng);
        if distinct.binary_search(&t).is_err() {
            toks.push(t);
        }
    }
    toks.shuffle(rng);
    toks
}

fn render(toks: &[usize], shift: f64) -> String {
    toks.iter().map(|&t| token_name(t, shift)).collect::<Vec<_>>().join(" ")
}

fn generate_instance(spec: &SyntheticCorpusSpec, zipf: &Zipf, i: usize) -> Result<DialogueInstance> {
    let mut rng = seed::rng(seed::derive_seed(spec.seed, "synthetic", i as u64));
    let turns = rng.random_range(spec.context_turns.0..=spec.context_turns.1);
    let utterances: Vec<Vec<usize>> = (0..turns)
        .map(|_| {
            let n = rng.random_range(spec.utterance_len.0..=spec.utterance_len.1);
            (0..n).map(|_| zipf.sample(&mut rng)).collect()
        })
        .collect();
    let all: Vec<usize> = utterances.concat();
    let relevant_pos = rng.random_range(0..spec.k);
    let id = format!("{}{i:05}", spec.id_prefix);
    let mut cands = Vec::with_capacity(spec.k);
    for j in 0..spec.k {
        let (overlap, provenance) = if j == relevant_pos {
            (spec.relevant_overlap, Provenance::GroundTruth)
        } else {
            (spec.distractor_overlap, Provenance::SampledRandom)
        };
        let toks = response_tokens(&mut rng, zipf, spec, &all, overlap);
        cands.push(CandidateResponse::new(format!("{id}-{j}"), render(&toks, spec.shift), provenance));
    }
    let labels = (0..spec.k).map(|j| u8::from(j == relevant_pos)).collect();
    let context = utterances.iter().map(|u| render(u, spec.shift)).collect();
    DialogueInstance::new(id, context, cands, labels)
}

pub fn generate_synthetic_corpus(spec: &SyntheticCorpusSpec) -> Result<Vec<DialogueInstance>> {
    spec.validate()?;
    let zipf = Zipf::new(spec.vocab_size, spec.zipf_exponent);
    (0..spec.instances)
        .into_par_iter()
        .map(|i| generate_instance(spec, &zipf, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize_all;
    use std::collections::HashSet;

    fn small(seed: u64) -> SyntheticCorpusSpec {
        SyntheticCorpusSpec {
            instances: 50,
            vocab_size: 500,
            seed,
            ..Default::default()
        }
    }

    fn vocab(corpus: &[DialogueInstance]) -> HashSet<String> {
        corpus
            .iter()
            .flat_map(|i| {
                let mut t = tokenize_all(i.context());
                t.extend(i.candidates().iter().flat_map(|c| crate::text::tokenize(&c.text)));
                t
            })
            .collect()
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_synthetic_corpus(&small(3)).unwrap(), generate_synthetic_corpus(&small(3)).unwrap());
        assert_ne!(generate_synthetic_corpus(&small(3)).unwrap(), generate_synthetic_corpus(&small(4)).unwrap());
    }

    #[test]
    fn shape() {
        let c = generate_synthetic_corpus(&small(1)).unwrap();
        assert_eq!(c.len(), 50);
        for inst in &c {
            assert_eq!(inst.len(), 10);
            assert_eq!(inst.relevant_count(), 1);
        }
    }

    #[test]
    fn unigram_overlap_oracle_is_perfect_without_distractor_overlap() {
        let spec = SyntheticCorpusSpec {
            relevant_overlap: 0.8,
            distractor_overlap: 0.0,
            overlap_sampling: OverlapSampling::Exact,
            ..small(2)
        };
        for inst in generate_synthetic_corpus(&spec).unwrap() {
            let ctx: HashSet<String> = tokenize_all(inst.context()).into_iter().collect();
            let overlap: Vec<usize> = inst
                .candidates()
                .iter()
                .map(|c| crate::text::tokenize(&c.text).iter().filter(|t| ctx.contains(*t)).count())
                .collect();
            let best = (0..overlap.len()).max_by_key(|&j| (overlap[j], std::cmp::Reverse(j))).unwrap();
            assert_eq!(Some(best), inst.relevant_index());
            assert_eq!(overlap.iter().filter(|&&o| o > 0).count(), 1);
        }
    }

    #[test]
    fn full_shift_is_disjoint_and_zero_shift_identical() {
        let base = generate_synthetic_corpus(&small(5)).unwrap();
        let zero = generate_synthetic_corpus(&SyntheticCorpusSpec { shift: 0.0, ..small(5) }).unwrap();
        assert_eq!(base, zero);
        let full = generate_synthetic_corpus(&SyntheticCorpusSpec { shift: 1.0, ..small(5) }).unwrap();
        assert!(vocab(&base).is_disjoint(&vocab(&full)));
        let half = generate_synthetic_corpus(&SyntheticCorpusSpec { shift: 0.5, ..small(5) }).unwrap();
        let (hv, bv) = (vocab(&half), vocab(&base));
        let shared = hv.intersection(&bv).count() as f64 / hv.len() as f64;
        assert!(shared > 0.2 && shared < 0.8, "{shared}");
    }

    #[test]
    fn rotation_is_nested() {
        for t in 0..1000 {
            if is_rotated(t, 0.3) {
                assert!(is_rotated(t, 0.6));
            }
        }
    }

    #[test]
    fn infeasible_specs_rejected() {
        assert!(SyntheticCorpusSpec { relevant_overlap: 0.1, distractor_overlap: 0.1, ..small(0) }.validate().is_err());
        assert!(SyntheticCorpusSpec { vocab_size: 20, ..small(0) }.validate().is_err());
        assert!(SyntheticCorpusSpec { shift: 1.5, ..small(0) }.validate().is_err());
        assert!(SyntheticCorpusSpec { response_len: (0, 3), ..small(0) }.validate().is_err());
        assert!(generate_synthetic_corpus(&SyntheticCorpusSpec { k: 1, ..small(0) }).is_err());
    }
}
