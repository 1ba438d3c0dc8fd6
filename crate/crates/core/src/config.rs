//! Experiment configuration: one TOML file, overridable from the environment
//! (`RANKCAL_<SECTION>__<KEY>`) and from `section.key=value` assignments.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{BucketScheme, DEFAULT_BUCKETS};
use crate::error::{Error, Result};
use crate::negatives::{Strategy, DEFAULT_NEGATIVES};
use crate::nota::{FeatureOrder, NotaFeatureSpec, DEFAULT_FOLDS};
use crate::risk::{default_b_grid, CovarianceTerm};
use crate::scorer::TrainConfig;
use crate::seed::derive_seed;
use crate::stochastic::{DropoutSpec, EnsembleSpec, MaskSharing};
use crate::synthetic::{OverlapSampling, SyntheticCorpusSpec};

pub const ENV_PREFIX: &str = "RANKCAL_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub master_seed: u64,
    /// Relative to the config file.
    pub output_dir: String,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            master_seed: 0,
            output_dir: "out".into(),
        }
    }
}

/// Generator settings shared by every synthetic domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub vocab_size: usize,
    pub context_turns: [usize; 2],
    pub utterance_len: [usize; 2],
    pub response_len: [usize; 2],
    pub relevant_overlap: f64,
    pub distractor_overlap: f64,
    pub zipf_exponent: f64,
    /// "binomial" or "exact".
    pub overlap_sampling: String,
    pub k: usize,
    pub train_instances: usize,
    pub valid_instances: usize,
    pub test_instances: usize,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let s = SyntheticCorpusSpec::default();
        Self {
            vocab_size: s.vocab_size,
            context_turns: [s.context_turns.0, s.context_turns.1],
            utterance_len: [s.utterance_len.0, s.utterance_len.1],
            response_len: [s.response_len.0, s.response_len.1],
            relevant_overlap: s.relevant_overlap,
            distractor_overlap: s.distractor_overlap,
            zipf_exponent: s.zipf_exponent,
            overlap_sampling: "binomial".into(),
            k: s.k,
            train_instances: 2000,
            valid_instances: 500,
            test_instances: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

/// A domain is either synthetic (vocabulary rotation `shift`) or a set of
/// corpus files. Files take precedence when given.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainSection {
    pub shift: f64,
    pub train: Option<String>,
    pub valid: Option<String>,
    pub test: Option<String>,
}

impl DomainSection {
    pub fn path(&self, split: Split) -> Option<&str> {
        match split {
            Split::Train => self.train.as_deref(),
            Split::Valid => self.valid.as_deref(),
            Split::Test => self.test.as_deref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NegativesSection {
    /// Strategy for rebuilding training lists; "none" keeps the corpus lists.
    pub train: String,
    /// Negatives per evaluation list.
    pub per_list: usize,
}

impl Default for NegativesSection {
    fn default() -> Self {
        Self {
            train: "none".into(),
            per_list: DEFAULT_NEGATIVES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScorerSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub balance: bool,
    pub hidden: usize,
    pub dropout_rate: f64,
}

impl Default for ScorerSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            balance: t.balance,
            hidden: t.hidden,
            dropout_rate: t.dropout_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub members: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self { members: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DropoutSection {
    pub passes: usize,
    pub rate: f64,
    /// "shared_per_pass" or "independent_per_candidate".
    pub mask_sharing: String,
}

impl Default for DropoutSection {
    fn default() -> Self {
        Self {
            passes: 20,
            rate: 0.1,
            mask_sharing: "shared_per_pass".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskSection {
    /// Risk aversion used by `rerank` when no value is given.
    pub b: f64,
    pub b_grid: Vec<f64>,
    pub include_self_covariance: bool,
    /// Cutoff `K` of the `R_n@K` metric used for sweeps and selection.
    pub recall_cutoff: usize,
}

impl Default for RiskSection {
    fn default() -> Self {
        Self {
            b: 0.0,
            b_grid: default_b_grid(),
            include_self_covariance: false,
            recall_cutoff: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    pub buckets: usize,
    pub non_rel_per_query: usize,
    /// "equal_width" or "equal_mass".
    pub scheme: String,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self {
            buckets: DEFAULT_BUCKETS,
            non_rel_per_query: 1,
            scheme: "equal_width".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NotaSection {
    pub folds: usize,
    pub trees: usize,
    /// `+`-joined block names, evaluated side by side.
    pub specs: Vec<String>,
    /// "by_mean", "sorted" or "raw".
    pub order: String,
}

impl Default for NotaSection {
    fn default() -> Self {
        Self {
            folds: DEFAULT_FOLDS,
            trees: 100,
            specs: vec![
                "sorted_means".into(),
                "sorted_means+sorted_vars_ensemble".into(),
                "sorted_means+sorted_vars_dropout".into(),
                "sorted_means+sorted_vars_ensemble+sorted_vars_dropout".into(),
            ],
            order: "by_mean".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    /// Strategies used to rebuild each target's test lists; "none" keeps them.
    pub test_ns: Vec<String>,
    /// Ensemble members also scored alone as deterministic baselines; member 0
    /// is the reported baseline, the rest feed `baseline_repeat_recall`.
    pub baseline_repeats: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            sources: vec!["base".into()],
            targets: vec!["base".into(), "rotated".into()],
            test_ns: vec!["none".into(), "bm25".into(), "embed".into()],
            baseline_repeats: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub synthetic: SyntheticSection,
    pub domains: BTreeMap<String, DomainSection>,
    pub negatives: NegativesSection,
    pub scorer: ScorerSection,
    pub ensemble: EnsembleSection,
    pub dropout: DropoutSection,
    pub risk: RiskSection,
    pub calibration: CalibrationSection,
    pub nota: NotaSection,
    pub grid: GridSection,
    /// Directory relative paths are resolved against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut domains = BTreeMap::new();
        domains.insert("base".into(), DomainSection::default());
        domains.insert(
            "rotated".into(),
            DomainSection {
                shift: 0.5,
                ..Default::default()
            },
        );
        domains.insert(
            "unseen".into(),
            DomainSection {
                shift: 1.0,
                ..Default::default()
            },
        );
        Self {
            run: RunSection::default(),
            synthetic: SyntheticSection::default(),
            domains,
            negatives: NegativesSection::default(),
            scorer: ScorerSection::default(),
            ensemble: EnsembleSection::default(),
            dropout: DropoutSection::default(),
            risk: RiskSection::default(),
            calibration: CalibrationSection::default(),
            nota: NotaSection::default(),
            grid: GridSection::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Set `path` (dot-separated) in `table` to `raw`, parsed as a TOML value
/// when possible and as a string otherwise.
fn assign(table: &mut toml::Table, path: &str, raw: &str) -> Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("bad override key `{path}`")));
    }
    let (last, parents) = keys.split_last().expect("non-empty");
    let mut cur = table;
    for k in parents {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{k}` in `{path}` is not a section")))?;
    }
    cur.insert(last.to_string(), parse_value(raw));
    Ok(())
}

impl ExperimentConfig {
    /// Parse `text`, then apply `overrides` in order.
    pub fn from_toml_with(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for (k, v) in overrides {
            assign(&mut table, k, v)?;
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with(text, &[])
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Load a config file, apply environment then explicit overrides, and
    /// anchor relative paths at the file's directory.
    pub fn load(path: impl AsRef<Path>, overrides: &[(String, String)]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut all = env_overrides(std::env::vars());
        all.extend_from_slice(overrides);
        let mut cfg = Self::from_toml_with(&text, &all)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: impl AsRef<Path>) -> PathBuf {
        let p = p.as_ref();
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.run.output_dir)
    }

    /// Hex SHA-256 of the canonical serialization, truncated to 16 digits.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))[..16].to_string()
    }

    pub fn seed(&self, component: &str, index: u64) -> u64 {
        derive_seed(self.run.master_seed, component, index)
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.dropout_spec().validate()?;
        if self.ensemble.members < 2 {
            return Err(Error::Config("ensemble.members must be at least 2".into()));
        }
        if !self.risk.b_grid.contains(&0.0) {
            return Err(Error::Config("risk.b_grid must contain 0.0".into()));
        }
        if self.risk.recall_cutoff == 0 {
            return Err(Error::Config("risk.recall_cutoff must be positive".into()));
        }
        if self.calibration.buckets == 0 || self.calibration.non_rel_per_query == 0 {
            return Err(Error::Config("calibration.buckets and non_rel_per_query must be positive".into()));
        }
        self.bucket_scheme()?;
        self.mask_sharing()?;
        self.overlap_sampling()?;
        self.nota_specs()?;
        self.train_strategy()?;
        self.test_strategies()?;
        if self.nota.trees == 0 || self.nota.folds < 2 {
            return Err(Error::Config("nota.trees must be positive and nota.folds at least 2".into()));
        }
        for name in self.grid.sources.iter().chain(&self.grid.targets) {
            if !self.domains.contains_key(name) {
                return Err(Error::Config(format!("grid refers to unknown domain `{name}`")));
            }
        }
        for (name, d) in &self.domains {
            if !(0.0..=1.0).contains(&d.shift) {
                return Err(Error::Config(format!("domains.{name}.shift outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.scorer.learning_rate,
            epochs: self.scorer.epochs,
            batch_size: self.scorer.batch_size,
            balance: self.scorer.balance,
            hidden: self.scorer.hidden,
            dropout_rate: self.scorer.dropout_rate,
        }
    }

    /// Member `m` trains from `seed("ensemble-member", m)` within `scope`.
    pub fn ensemble_spec(&self, scope: u64) -> EnsembleSpec {
        EnsembleSpec {
            member_seeds: (0..self.ensemble.members as u64)
                .map(|m| derive_seed(self.seed("ensemble", scope), "member", m))
                .collect(),
            train: self.train_config(),
        }
    }

    pub fn mask_sharing(&self) -> Result<MaskSharing> {
        self.dropout.mask_sharing.parse()
    }

    pub fn dropout_spec(&self) -> DropoutSpec {
        DropoutSpec {
            passes: self.dropout.passes,
            dropout_rate: self.dropout.rate,
            pass_seed_base: self.seed("dropout-pass", 0),
            mask_sharing: self.mask_sharing().unwrap_or_default(),
        }
    }

    pub fn covariance_term(&self) -> CovarianceTerm {
        if self.risk.include_self_covariance {
            CovarianceTerm::IncludeSelf
        } else {
            CovarianceTerm::ExcludeSelf
        }
    }

    pub fn bucket_scheme(&self) -> Result<BucketScheme> {
        match self.calibration.scheme.as_str() {
            "equal_width" => Ok(BucketScheme::EqualWidth),
            "equal_mass" => Ok(BucketScheme::EqualMass),
            other => Err(Error::Config(format!("unknown calibration.scheme `{other}`"))),
        }
    }

    pub fn overlap_sampling(&self) -> Result<OverlapSampling> {
        match self.synthetic.overlap_sampling.as_str() {
            "binomial" => Ok(OverlapSampling::Binomial),
            "exact" => Ok(OverlapSampling::Exact),
            other => Err(Error::Config(format!("unknown synthetic.overlap_sampling `{other}`"))),
        }
    }

    pub fn nota_specs(&self) -> Result<Vec<NotaFeatureSpec>> {
        let order: FeatureOrder = self.nota.order.parse()?;
        self.nota
            .specs
            .iter()
            .map(|s| {
                let mut spec: NotaFeatureSpec = s.parse()?;
                spec.order = order;
                Ok(spec)
            })
            .collect()
    }

    pub fn train_strategy(&self) -> Result<Option<Strategy>> {
        parse_strategy(&self.negatives.train)
    }

    pub fn test_strategies(&self) -> Result<Vec<Option<Strategy>>> {
        self.grid.test_ns.iter().map(|s| parse_strategy(s)).collect()
    }

    /// Generator spec for `domain`'s `split`; corpus seeds derive from the
    /// domain name and split.
    pub fn synthetic_spec(&self, domain: &str, split: Split) -> Result<SyntheticCorpusSpec> {
        let d = self
            .domains
            .get(domain)
            .ok_or_else(|| Error::Config(format!("unknown domain `{domain}`")))?;
        let s = &self.synthetic;
        let instances = match split {
            Split::Train => s.train_instances,
            Split::Valid => s.valid_instances,
            Split::Test => s.test_instances,
        };
        Ok(SyntheticCorpusSpec {
            instances,
            vocab_size: s.vocab_size,
            context_turns: (s.context_turns[0], s.context_turns[1]),
            utterance_len: (s.utterance_len[0], s.utterance_len[1]),
            response_len: (s.response_len[0], s.response_len[1]),
            relevant_overlap: s.relevant_overlap,
            distractor_overlap: s.distractor_overlap,
            shift: d.shift,
            zipf_exponent: s.zipf_exponent,
            overlap_sampling: self.overlap_sampling()?,
            k: s.k,
            seed: self.seed(&format!("corpus/{domain}/{}", split.as_str()), 0),
            id_prefix: format!("{domain}-{}-", split.as_str()),
        })
    }
}

fn parse_strategy(s: &str) -> Result<Option<Strategy>> {
    if s == "none" {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}

/// `RANKCAL_SECTION__KEY=value` pairs as `section.key` overrides, sorted by key.
pub fn env_overrides<I: IntoIterator<Item = (String, String)>>(vars: I) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix(ENV_PREFIX)?;
            rest.contains("__")
                .then(|| (rest.to_lowercase().split("__").collect::<Vec<_>>().join("."), v))
        })
        .collect();
    out.sort();
    out
}

/// Split `section.key=value`.
pub fn parse_assignment(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}
