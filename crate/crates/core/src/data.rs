//! Dialogue instances, candidate responses and ranked lists.
//!
//! A [`DialogueInstance`] is one conversation context with `k` candidate
//! responses and their binary relevance labels. Instances are immutable once
//! built; every constructor validates the structural invariants.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default candidate list length.
pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    GroundTruth,
    SampledRandom,
    SampledLexical,
    SampledEmbedding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateResponse {
    pub id: String,
    pub text: String,
    pub provenance: Provenance,
}

impl CandidateResponse {
    pub fn new(id: impl Into<String>, text: impl Into<String>, provenance: Provenance) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            provenance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueInstance {
    id: String,
    context: Vec<String>,
    candidates: Vec<CandidateResponse>,
    labels: Vec<u8>,
}

impl DialogueInstance {
    /// Build a fresh instance: `k >= 2` candidates and exactly one relevant label.
    pub fn new(
        id: impl Into<String>,
        context: Vec<String>,
        candidates: Vec<CandidateResponse>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let inst = Self::from_parts(id, context, candidates, labels)?;
        if inst.len() < 2 {
            return Err(inst.violation(format!("needs at least 2 candidates, got {}", inst.len())));
        }
        let relevant = inst.relevant_count();
        if relevant != 1 {
            return Err(inst.violation(format!("expected exactly one relevant label, got {relevant}")));
        }
        Ok(inst)
    }

    /// Build an instance checking only structural invariants (aligned labels,
    /// unique candidate ids, non-empty texts, binary labels). Used for
    /// truncated and NOTA lists, which may hold a single candidate or no
    /// relevant one.
    pub fn from_parts(
        id: impl Into<String>,
        context: Vec<String>,
        candidates: Vec<CandidateResponse>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let inst = Self {
            id: id.into(),
            context,
            candidates,
            labels,
        };
        inst.check_structure()?;
        Ok(inst)
    }

    fn violation(&self, message: String) -> Error {
        Error::InvalidInstance {
            id: self.id.clone(),
            message,
        }
    }

    fn check_structure(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(self.violation("no candidates".into()));
        }
        if self.candidates.len() != self.labels.len() {
            return Err(self.violation(format!(
                "{} labels for {} candidates",
                self.labels.len(),
                self.candidates.len()
            )));
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l > 1) {
            return Err(self.violation(format!("label {bad} is not binary")));
        }
        let mut seen = HashSet::new();
        for c in &self.candidates {
            if !seen.insert(c.id.as_str()) {
                return Err(self.violation(format!("duplicate candidate id `{}`", c.id)));
            }
            if c.text.is_empty() {
                return Err(self.violation(format!("candidate `{}` has empty text", c.id)));
            }
        }
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn context(&self) -> &[String] {
        &self.context
    }

    pub fn candidates(&self) -> &[CandidateResponse] {
        &self.candidates
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Number of candidates `k`.
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn relevant_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Index of the first relevant candidate.
    pub fn relevant_index(&self) -> Option<usize> {
        self.labels.iter().position(|&l| l == 1)
    }

    pub fn candidate_ids(&self) -> Vec<&str> {
        self.candidates.iter().map(|c| c.id.as_str()).collect()
    }

    /// Keep only the candidates at `keep` (in original order). The receiver
    /// is left untouched.
    pub fn truncate_candidates(&self, keep: &BTreeSet<usize>) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::invalid("keep set is empty"));
        }
        if let Some(&max) = keep.iter().next_back() {
            if max >= self.len() {
                return Err(Error::invalid(format!(
                    "keep index {max} out of range for {} candidates",
                    self.len()
                )));
            }
        }
        let candidates = keep.iter().map(|&i| self.candidates[i].clone()).collect();
        let labels = keep.iter().map(|&i| self.labels[i]).collect();
        Ok(Self {
            id: self.id.clone(),
            context: self.context.clone(),
            candidates,
            labels,
        })
    }

    /// Same instance with a different candidate list (structure re-checked).
    pub fn with_candidates(&self, candidates: Vec<CandidateResponse>, labels: Vec<u8>) -> Result<Self> {
        Self::from_parts(self.id.clone(), self.context.clone(), candidates, labels)
    }
}

/// Free-function form of [`DialogueInstance::truncate_candidates`].
pub fn truncate_candidates(instance: &DialogueInstance, keep: &BTreeSet<usize>) -> Result<DialogueInstance> {
    instance.truncate_candidates(keep)
}

// ---------------------------------------------------------------------------
// Corpus files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    /// One JSON object per line; lines starting with `#` and blank lines are skipped.
    #[default]
    JsonLines,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct CorpusRecord {
    pub id: String,
    pub context: Vec<String>,
    pub candidates: Vec<CandidateResponse>,
    pub labels: Vec<u8>,
}

impl From<&DialogueInstance> for CorpusRecord {
    fn from(inst: &DialogueInstance) -> Self {
        Self {
            id: inst.id.clone(),
            context: inst.context.clone(),
            candidates: inst.candidates.clone(),
            labels: inst.labels.clone(),
        }
    }
}

/// Iterate over the content lines of a JSON-lines file, yielding `(line_no, text)`.
pub(crate) fn content_lines<R: BufRead>(reader: R) -> impl Iterator<Item = std::io::Result<(usize, String)>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Ok(l) if l.trim().is_empty() || l.starts_with('#') => None,
            Ok(l) => Some(Ok((i + 1, l))),
            Err(e) => Some(Err(e)),
        })
}

fn parse_error(line: usize, err: &serde_json::Error) -> Error {
    let msg = err.to_string();
    let field = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.contains("field"))
        .unwrap_or("record")
        .to_string();
    Error::Parse {
        line,
        field,
        message: msg,
    }
}

fn instance_error(line: usize, err: Error) -> Error {
    match err {
        Error::InvalidInstance { id, message } => {
            let field = if message.contains("label") {
                "labels"
            } else {
                "candidates"
            };
            Error::Parse {
                line,
                field: field.into(),
                message: format!("instance `{id}`: {message}"),
            }
        }
        other => other,
    }
}

/// Parse a corpus from any reader.
pub fn read_corpus<R: BufRead>(reader: R, format: CorpusFormat) -> Result<Vec<DialogueInstance>> {
    let CorpusFormat::JsonLines = format;
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for item in content_lines(reader) {
        let (line, text) = item.map_err(|e| Error::io("<reader>", e))?;
        let rec: CorpusRecord = serde_json::from_str(&text).map_err(|e| parse_error(line, &e))?;
        let inst = DialogueInstance::new(rec.id, rec.context, rec.candidates, rec.labels)
            .map_err(|e| instance_error(line, e))?;
        if !ids.insert(inst.id.clone()) {
            return Err(Error::DuplicateId(inst.id));
        }
        out.push(inst);
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Vec<DialogueInstance>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file), format)
}

pub fn write_corpus<W: Write>(mut writer: W, instances: &[DialogueInstance]) -> Result<()> {
    for inst in instances {
        let line = serde_json::to_string(&CorpusRecord::from(inst)).expect("corpus record serializes");
        writeln!(writer, "{line}").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

/// Write a corpus file. `header`, when given, is emitted as a leading `#` line.
pub fn save_corpus(path: impl AsRef<Path>, instances: &[DialogueInstance], header: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    if let Some(h) = header {
        writeln!(w, "# {h}").map_err(|e| Error::io(path, e))?;
    }
    write_corpus(&mut w, instances)?;
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Ranked lists
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    #[default]
    ByCandidateId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub instance_id: String,
    /// Candidate indices, best first.
    pub ordering: Vec<usize>,
    /// Score of each candidate, indexed by candidate position (not rank).
    pub final_scores: Vec<f64>,
    pub tie_break: TieBreak,
}

impl RankedList {
    /// Order candidates by descending score, ties broken by ascending candidate id.
    pub fn from_scores<S: AsRef<str>>(
        instance_id: impl Into<String>,
        scores: Vec<f64>,
        candidate_ids: &[S],
    ) -> Result<Self> {
        if scores.len() != candidate_ids.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} scores for {} candidates",
                scores.len(),
                candidate_ids.len()
            )));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::NonFinite("ranking scores".into()));
        }
        let mut ordering: Vec<usize> = (0..scores.len()).collect();
        ordering.sort_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then_with(|| candidate_ids[a].as_ref().cmp(candidate_ids[b].as_ref()))
        });
        Ok(Self {
            instance_id: instance_id.into(),
            ordering,
            final_scores: scores,
            tie_break: TieBreak::ByCandidateId,
        })
    }

    pub fn len(&self) -> usize {
        self.ordering.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordering.is_empty()
    }

    /// Zero-based rank of candidate `index`.
    pub fn rank_of(&self, index: usize) -> Option<usize> {
        self.ordering.iter().position(|&i| i == index)
    }
}
