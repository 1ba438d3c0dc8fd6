//! On-disk formats owned by the CLI: model directories, ranked-list files
//! and artifact manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rankcal::data::{DialogueInstance, RankedList, TieBreak};
use rankcal::features::{CorpusStats, FEATURE_DIM};
use rankcal::scorer::ScorerParameters;
use rankcal::stochastic::format_sig9;
use rankcal::{Error, Result};
use sha2::{Digest, Sha256};

const RANKED_TAG: &str = "rankcal-ranked v1";
const STATS_FILE: &str = "stats.tsv";

fn io(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn write(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
    }
    std::fs::write(path, body).map_err(io(path))
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(io(dir)),
        None => Ok(()),
    }
}

pub fn header(config_hash: &str) -> String {
    format!("config={config_hash}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub stats: CorpusStats,
    pub members: Vec<ScorerParameters>,
}

fn member_path(dir: &Path, m: usize) -> PathBuf {
    dir.join(format!("scorer-{m}.txt"))
}

impl Model {
    pub fn save(&self, dir: &Path, config_hash: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let h = header(config_hash);
        self.stats.save(dir.join(STATS_FILE), Some(&h))?;
        for (m, p) in self.members.iter().enumerate() {
            p.save(member_path(dir, m), Some(&h))?;
        }
        Ok(())
    }

    /// Members are `scorer-0.txt`, `scorer-1.txt`, ... up to the first gap.
    pub fn load(dir: &Path, hidden: usize) -> Result<Self> {
        let stats = CorpusStats::load(dir.join(STATS_FILE))?;
        let mut members = Vec::new();
        while member_path(dir, members.len()).exists() {
            members.push(ScorerParameters::load(member_path(dir, members.len()), FEATURE_DIM, hidden)?);
        }
        if members.is_empty() {
            return Err(Error::InvalidArgument(format!("{} holds no scorer-0.txt", dir.display())));
        }
        Ok(Self { stats, members })
    }
}

/// One `instance<TAB>rank<TAB>candidate<TAB>score` line per candidate,
/// ranks starting at 1.
pub fn ranked_text(lists: &[RankedList], instances: &[DialogueInstance], b: f64, config_hash: &str) -> Result<String> {
    let mut s = format!("# {RANKED_TAG}\tb={b}\tconfig={config_hash}\n");
    for (list, inst) in lists.iter().zip(instances) {
        if list.instance_id != inst.id() {
            return Err(Error::DimensionMismatch(format!(
                "ranked list `{}` paired with instance `{}`",
                list.instance_id,
                inst.id()
            )));
        }
        for (rank, &j) in list.ordering.iter().enumerate() {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}",
                list.instance_id,
                rank + 1,
                inst.candidates()[j].id,
                format_sig9(list.final_scores[j])
            );
        }
    }
    Ok(s)
}

/// Parse a ranked-list file back into lists aligned with `instances`'
/// candidate order; every instance must be present.
pub fn read_ranked(path: &Path, instances: &[DialogueInstance]) -> Result<Vec<RankedList>> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    let bad = |line: usize, message: String| Error::Parse {
        line,
        field: "ranked list".into(),
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_start_matches('#').trim().starts_with(RANKED_TAG) => {}
        _ => return Err(bad(1, format!("expected `{RANKED_TAG}` header"))),
    }
    let mut rows: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
    for (i, line) in lines {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad(i + 1, format!("expected 4 fields, found {}", f.len())));
        }
        let rank: usize = f[1].parse().map_err(|_| bad(i + 1, format!("bad rank `{}`", f[1])))?;
        let score: f64 = f[3].parse().map_err(|_| bad(i + 1, format!("bad score `{}`", f[3])))?;
        rows.entry(f[0].to_string()).or_default().push((rank, f[2].to_string(), score));
    }
    instances
        .iter()
        .map(|inst| {
            let mut r = rows
                .remove(inst.id())
                .ok_or_else(|| Error::MissingDistribution(format!("ranked list for `{}`", inst.id())))?;
            if r.len() != inst.len() {
                return Err(Error::DimensionMismatch(format!(
                    "`{}`: {} ranked candidates for {}",
                    inst.id(),
                    r.len(),
                    inst.len()
                )));
            }
            r.sort_by_key(|(rank, _, _)| *rank);
            let index: BTreeMap<&str, usize> = inst.candidate_ids().into_iter().enumerate().map(|(j, c)| (c, j)).collect();
            let mut final_scores = vec![0.0; inst.len()];
            let mut ordering = Vec::with_capacity(inst.len());
            for (_, cid, score) in r {
                let j = *index
                    .get(cid.as_str())
                    .ok_or_else(|| Error::MissingDistribution(format!("{}/{cid}", inst.id())))?;
                final_scores[j] = score;
                ordering.push(j);
            }
            Ok(RankedList {
                instance_id: inst.id().to_string(),
                ordering,
                final_scores,
                tie_break: TieBreak::ByCandidateId,
            })
        })
        .collect()
}

fn collect_files(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io(dir)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(&p, root, out)?;
        } else {
            out.push(p.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

/// `sha256  relative/path` lines for every file under `dir` except `skip`,
/// sorted by path.
pub fn manifest(dir: &Path, skip: &str) -> Result<String> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    let mut s = String::new();
    for rel in files {
        let name = rel.to_string_lossy().replace('\\', "/");
        if name == skip {
            continue;
        }
        let p = dir.join(&rel);
        let bytes = std::fs::read(&p).map_err(io(&p))?;
        let _ = writeln!(s, "{}  {name}", hex::encode(Sha256::digest(&bytes)));
    }
    Ok(s)
}
