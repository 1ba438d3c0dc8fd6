//! Pointwise relevance scorer: `input → tanh hidden (dropout) → 2 logits`.
//!
//! Logit 0 is "relevant", logit 1 "non-relevant"; the probability of relevance
//! is the softmax mass on logit 0. Training is plain minibatch SGD on
//! cross-entropy over (context, response) pairs, one dropout mask per example
//! on the hidden layer.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::data::DialogueInstance;
use crate::error::{Error, Result};
use crate::features::{instance_features, CorpusStats, FeatureVector, FEATURE_DIM};
use crate::seed;

pub const DEFAULT_HIDDEN: usize = 16;
const FORMAT_TAG: &str = "rankcal-scorer v1";
/// Probabilities are kept this far from 0 and 1.
const PROB_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParameters {
    input_dim: usize,
    hidden: usize,
    /// `hidden × input_dim`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `2 × hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub dropout_rate: f64,
    pub train_seed: u64,
}

/// Per-hidden-unit multipliers: `0` for dropped units, `1/(1 − rate)` for kept ones.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub multipliers: Vec<f64>,
}

impl DropoutMask {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, hidden: usize, rate: f64) -> Self {
        let keep = 1.0 - rate;
        let scale = 1.0 / keep;
        let multipliers = (0..hidden)
            .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
            .collect();
        Self { multipliers }
    }
}

struct Activations {
    hidden_tanh: Vec<f64>,
    hidden_out: Vec<f64>,
    logits: [f64; 2],
}

impl ScorerParameters {
    pub fn zeros(input_dim: usize, hidden: usize, dropout_rate: f64) -> Self {
        Self {
            input_dim,
            hidden,
            w1: vec![0.0; hidden * input_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; 2 * hidden],
            b2: vec![0.0; 2],
            dropout_rate,
            train_seed: 0,
        }
    }

    /// Uniform `[−0.5, 0.5]/sqrt(fan_in)` weights, zero biases.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, input_dim: usize, hidden: usize, dropout_rate: f64) -> Self {
        let mut p = Self::zeros(input_dim, hidden, dropout_rate);
        let s1 = 1.0 / (input_dim as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        p.w1.iter_mut()
            .for_each(|w| *w = (rng.random::<f64>() - 0.5) * s1);
        p.w2.iter_mut()
            .for_each(|w| *w = (rng.random::<f64>() - 0.5) * s2);
        p
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn get(&self, idx: usize) -> f64 {
        let (a, b, c) = (self.w1.len(), self.b1.len(), self.w2.len());
        match idx {
            i if i < a => self.w1[i],
            i if i < a + b => self.b1[i - a],
            i if i < a + b + c => self.w2[i - a - b],
            i => self.b2[i - a - b - c],
        }
    }

    fn get_mut(&mut self, idx: usize) -> &mut f64 {
        let (a, b, c) = (self.w1.len(), self.b1.len(), self.w2.len());
        match idx {
            i if i < a => &mut self.w1[i],
            i if i < a + b => &mut self.b1[i - a],
            i if i < a + b + c => &mut self.w2[i - a - b],
            i => &mut self.b2[i - a - b - c],
        }
    }

    pub fn is_finite(&self) -> bool {
        (0..self.param_count()).all(|i| self.get(i).is_finite())
    }

    fn check_input(&self, x: &FeatureVector, mask: Option<&DropoutMask>) -> Result<()> {
        if x.dim() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "feature vector has {} values, scorer expects {}",
                x.dim(),
                self.input_dim
            )));
        }
        if let Some(m) = mask {
            if m.multipliers.len() != self.hidden {
                return Err(Error::DimensionMismatch(format!(
                    "mask has {} units, hidden layer has {}",
                    m.multipliers.len(),
                    self.hidden
                )));
            }
        }
        Ok(())
    }

    fn activations(&self, x: &[f64], mask: Option<&DropoutMask>) -> Activations {
        let d = self.input_dim;
        let mut hidden_tanh = Vec::with_capacity(self.hidden);
        let mut hidden_out = Vec::with_capacity(self.hidden);
        for j in 0..self.hidden {
            let row = &self.w1[j * d..(j + 1) * d];
            let z = self.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            let t = z.tanh();
            hidden_tanh.push(t);
            hidden_out.push(match mask {
                Some(m) => t * m.multipliers[j],
                None => t,
            });
        }
        let h = self.hidden;
        let mut logits = [0.0; 2];
        for (c, l) in logits.iter_mut().enumerate() {
            let row = &self.w2[c * h..(c + 1) * h];
            *l = self.b2[c] + row.iter().zip(&hidden_out).map(|(w, a)| w * a).sum::<f64>();
        }
        Activations {
            hidden_tanh,
            hidden_out,
            logits,
        }
    }
}

fn relevance_probability(logits: [f64; 2]) -> f64 {
    let p = 1.0 / (1.0 + (logits[1] - logits[0]).exp());
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Probability of relevance for one feature vector.
pub fn forward(params: &ScorerParameters, x: &FeatureVector, mask: Option<&DropoutMask>) -> Result<f64> {
    params.check_input(x, mask)?;
    let act = params.activations(&x.values, mask);
    if !act.logits.iter().all(|l| l.is_finite()) {
        return Err(Error::NonFinite("scorer logits".into()));
    }
    Ok(relevance_probability(act.logits))
}

/// Score every feature vector with the same (optional) mask.
pub fn score_all(params: &ScorerParameters, xs: &[FeatureVector], mask: Option<&DropoutMask>) -> Result<Vec<f64>> {
    xs.iter().map(|x| forward(params, x, mask)).collect()
}

/// Cross-entropy of the label (`1` = relevant) and its gradient, in flat
/// parameter order `w1, b1, w2, b2`.
pub fn loss_and_gradient(
    params: &ScorerParameters,
    x: &[f64],
    label: u8,
    mask: Option<&DropoutMask>,
) -> (f64, Vec<f64>) {
    let act = params.activations(x, mask);
    let target = if label == 1 { 0 } else { 1 };
    let loss = cross_entropy(act.logits, target);

    let m = act.logits[0].max(act.logits[1]);
    let e0 = (act.logits[0] - m).exp();
    let e1 = (act.logits[1] - m).exp();
    let soft = [e0 / (e0 + e1), e1 / (e0 + e1)];
    let dlogit = [
        soft[0] - f64::from(u8::from(target == 0)),
        soft[1] - f64::from(u8::from(target == 1)),
    ];

    let (d, h) = (params.input_dim, params.hidden);
    let mut grad = vec![0.0; params.param_count()];
    let (g_w1, rest) = grad.split_at_mut(h * d);
    let (g_b1, rest) = rest.split_at_mut(h);
    let (g_w2, g_b2) = rest.split_at_mut(2 * h);

    for c in 0..2 {
        g_b2[c] = dlogit[c];
        for j in 0..h {
            g_w2[c * h + j] = dlogit[c] * act.hidden_out[j];
        }
    }
    for j in 0..h {
        let upstream = dlogit[0] * params.w2[j] + dlogit[1] * params.w2[h + j];
        let m = mask.map_or(1.0, |m| m.multipliers[j]);
        let t = act.hidden_tanh[j];
        let dz = upstream * m * (1.0 - t * t);
        g_b1[j] = dz;
        for i in 0..d {
            g_w1[j * d + i] = dz * x[i];
        }
    }
    (loss, grad)
}

fn cross_entropy(logits: [f64; 2], target: usize) -> f64 {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    lse - logits[target]
}

/// Largest relative discrepancy between the analytic gradient and a central
/// finite difference (step `1e-5`), over all parameters, dropout disabled.
pub fn gradient_check(params: &ScorerParameters, x: &FeatureVector, label: u8) -> f64 {
    const STEP: f64 = 1e-5;
    let (_, analytic) = loss_and_gradient(params, &x.values, label, None);
    let mut probe = params.clone();
    let target = if label == 1 { 0 } else { 1 };
    let mut worst = 0.0f64;
    for (idx, a) in analytic.iter().enumerate() {
        let orig = probe.get(idx);
        *probe.get_mut(idx) = orig + STEP;
        let up = cross_entropy(probe.activations(&x.values, None).logits, target);
        *probe.get_mut(idx) = orig - STEP;
        let down = cross_entropy(probe.activations(&x.values, None).logits, target);
        *probe.get_mut(idx) = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
        worst = worst.max(rel);
    }
    worst
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// One sampled non-relevant pair per relevant pair when set; all pairs otherwise.
    pub balance: bool,
    pub hidden: usize,
    pub dropout_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 5,
            batch_size: 32,
            balance: true,
            hidden: DEFAULT_HIDDEN,
            dropout_rate: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be a non-negative finite number"));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::invalid("epochs, batch_size and hidden must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout_rate must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ScorerParameters,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// `(instance index, candidate index)` pairs for one epoch, unshuffled.
pub fn epoch_pairs<R: Rng + ?Sized>(labels: &[&[u8]], balance: bool, rng: &mut R) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, ls) in labels.iter().enumerate() {
        let relevant: Vec<usize> = (0..ls.len()).filter(|&j| ls[j] == 1).collect();
        let negatives: Vec<usize> = (0..ls.len()).filter(|&j| ls[j] == 0).collect();
        pairs.extend(relevant.iter().map(|&j| (i, j)));
        if balance {
            pairs.extend(
                negatives
                    .choose_multiple(rng, relevant.len())
                    .map(|&j| (i, j)),
            );
        } else {
            pairs.extend(negatives.iter().map(|&j| (i, j)));
        }
    }
    pairs
}

pub fn train(corpus: &[DialogueInstance], stats: &CorpusStats, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    for inst in corpus {
        let rel = inst.relevant_count();
        if rel == 0 || rel == inst.len() {
            return Err(Error::InvalidInstance {
                id: inst.id().to_string(),
                message: "training needs at least one relevant and one non-relevant candidate".into(),
            });
        }
        if cfg.balance && inst.len() - rel < rel {
            return Err(Error::InvalidInstance {
                id: inst.id().to_string(),
                message: "too few non-relevant candidates for balanced sampling".into(),
            });
        }
    }

    let features: Vec<Vec<FeatureVector>> = corpus.iter().map(|inst| instance_features(inst, stats)).collect();
    let labels: Vec<&[u8]> = corpus.iter().map(|inst| inst.labels()).collect();

    let mut rng = seed::rng(seed);
    let mut params = ScorerParameters::init(&mut rng, FEATURE_DIM, cfg.hidden, cfg.dropout_rate);
    params.train_seed = seed;

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut pairs = epoch_pairs(&labels, cfg.balance, &mut rng);
        pairs.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch_no, batch) in pairs.chunks(cfg.batch_size).enumerate() {
            let mut grad_sum = vec![0.0; params.param_count()];
            let mut batch_loss = 0.0;
            for &(i, j) in batch {
                let mask = (cfg.dropout_rate > 0.0)
                    .then(|| DropoutMask::sample(&mut rng, cfg.hidden, cfg.dropout_rate));
                let (loss, grad) = loss_and_gradient(&params, &features[i][j].values, labels[i][j], mask.as_ref());
                batch_loss += loss;
                grad_sum.iter_mut().zip(&grad).for_each(|(s, g)| *s += g);
            }
            if !batch_loss.is_finite() || grad_sum.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_no,
                });
            }
            let step = cfg.learning_rate / batch.len() as f64;
            for (idx, g) in grad_sum.iter().enumerate() {
                *params.get_mut(idx) -= step * g;
            }
            total += batch_loss;
        }
        let mean = total / pairs.len() as f64;
        log::info!("seed {seed} epoch {epoch}: mean loss {mean:.6}");
        epoch_losses.push(mean);
    }
    if !params.is_finite() {
        return Err(Error::Diverged {
            epoch: cfg.epochs.saturating_sub(1),
            batch: 0,
        });
    }
    Ok(TrainOutcome { params, epoch_losses })
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

impl ScorerParameters {
    /// Versioned text form. `comment`, when given, becomes a leading `#` line.
    pub fn to_text(&self, comment: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(c) = comment {
            let _ = writeln!(s, "# {c}");
        }
        let _ = writeln!(s, "{FORMAT_TAG}");
        let _ = writeln!(s, "input_dim {}", self.input_dim);
        let _ = writeln!(s, "hidden {}", self.hidden);
        let _ = writeln!(s, "dropout_rate {}", self.dropout_rate);
        let _ = writeln!(s, "train_seed {}", self.train_seed);
        let row = |name: &str, vals: &[f64], s: &mut String| {
            let joined: Vec<String> = vals.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(s, "{name} {}", joined.join(" "));
        };
        for r in self.w1.chunks(self.input_dim) {
            row("w1", r, &mut s);
        }
        row("b1", &self.b1, &mut s);
        for r in self.w2.chunks(self.hidden) {
            row("w2", r, &mut s);
        }
        row("b2", &self.b2, &mut s);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
        let bad = |line: usize, field: &str, msg: &str| Error::Parse {
            line: line + 1,
            field: field.into(),
            message: msg.into(),
        };
        match lines.next() {
            Some((_, l)) if l.trim() == FORMAT_TAG => {}
            Some((n, _)) => return Err(bad(n, "header", "unknown scorer format")),
            None => return Err(bad(0, "header", "empty scorer file")),
        }
        let mut scalar = |name: &str| -> Result<String> {
            let (n, l) = lines.next().ok_or_else(|| bad(0, name, "missing"))?;
            let mut parts = l.split_whitespace();
            if parts.next() != Some(name) {
                return Err(bad(n, name, "unexpected key"));
            }
            parts.next().map(str::to_string).ok_or_else(|| bad(n, name, "missing value"))
        };
        let parse_usize = |s: String, f: &str| s.parse::<usize>().map_err(|e| bad(0, f, &e.to_string()));
        let input_dim = parse_usize(scalar("input_dim")?, "input_dim")?;
        let hidden = parse_usize(scalar("hidden")?, "hidden")?;
        let dropout_rate: f64 = scalar("dropout_rate")?
            .parse()
            .map_err(|e: std::num::ParseFloatError| bad(0, "dropout_rate", &e.to_string()))?;
        let train_seed: u64 = scalar("train_seed")?
            .parse()
            .map_err(|e: std::num::ParseIntError| bad(0, "train_seed", &e.to_string()))?;

        let mut p = Self::zeros(input_dim, hidden, dropout_rate);
        p.train_seed = train_seed;
        let mut w1 = Vec::new();
        let mut b1 = Vec::new();
        let mut w2 = Vec::new();
        let mut b2 = Vec::new();
        for (n, l) in lines {
            let mut parts = l.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let vals: Vec<f64> = parts
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(n, key, &e.to_string()))?;
            match key {
                "w1" => w1.extend(vals),
                "b1" => b1.extend(vals),
                "w2" => w2.extend(vals),
                "b2" => b2.extend(vals),
                other => return Err(bad(n, other, "unknown array")),
            }
        }
        if w1.len() != p.w1.len() || b1.len() != p.b1.len() || w2.len() != p.w2.len() || b2.len() != p.b2.len() {
            return Err(Error::DimensionMismatch(format!(
                "weight arrays do not match input_dim {input_dim}, hidden {hidden}"
            )));
        }
        p.w1 = w1;
        p.b1 = b1;
        p.w2 = w2;
        p.b2 = b2;
        if !p.is_finite() {
            return Err(Error::NonFinite("scorer file".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>, comment: Option<&str>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text(comment)).map_err(|e| Error::io(path, e))
    }

    /// Load a scorer, failing if its shape differs from `(input_dim, hidden)`.
    pub fn load(path: impl AsRef<Path>, input_dim: usize, hidden: usize) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p = Self::from_text(&text)?;
        if p.input_dim != input_dim || p.hidden != hidden {
            return Err(Error::DimensionMismatch(format!(
                "{} was saved with input_dim {}, hidden {}; expected {input_dim}, {hidden}",
                path.display(),
                p.input_dim,
                p.hidden
            )));
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_params(seed: u64, d: usize, h: usize) -> ScorerParameters {
        let mut rng = seed::rng(seed);
        let mut p = ScorerParameters::init(&mut rng, d, h, 0.2);
        p.b1.iter_mut().for_each(|b| *b = rng.random::<f64>() - 0.5);
        p.b2.iter_mut().for_each(|b| *b = rng.random::<f64>() - 0.5);
        p
    }

    fn random_x(seed: u64, d: usize) -> FeatureVector {
        let mut rng = seed::rng(seed ^ 0xabcdef);
        FeatureVector {
            values: (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
        }
    }

    #[test]
    fn zero_parameters_give_one_half() {
        let p = ScorerParameters::zeros(8, 16, 0.0);
        let x = random_x(1, 8);
        assert_eq!(forward(&p, &x, None).unwrap(), 0.5);
    }

    #[test]
    fn zero_rate_mask_is_identity() {
        let p = random_params(3, 8, 16);
        let x = random_x(3, 8);
        let mask = DropoutMask::sample(&mut seed::rng(9), 16, 0.0);
        assert_eq!(forward(&p, &x, Some(&mask)).unwrap(), forward(&p, &x, None).unwrap());
    }

    /// Scalar-by-scalar evaluation of a 2-input, 2-hidden network.
    #[test]
    fn matches_hand_evaluation() {
        let mut p = ScorerParameters::zeros(2, 2, 0.5);
        p.w1 = vec![0.5, -0.25, 0.1, 0.2];
        p.b1 = vec![0.05, -0.1];
        p.w2 = vec![0.3, -0.4, -0.2, 0.6];
        p.b2 = vec![0.01, -0.02];
        let x = FeatureVector { values: vec![1.0, 2.0] };
        let h0 = (0.05f64 + 0.5 * 1.0 - 0.25 * 2.0).tanh();
        let h1 = (-0.1f64 + 0.1 * 1.0 + 0.2 * 2.0).tanh();
        let l0 = 0.01 + 0.3 * h0 - 0.4 * h1;
        let l1 = -0.02 - 0.2 * h0 + 0.6 * h1;
        let expected = l0.exp() / (l0.exp() + l1.exp());
        assert!((forward(&p, &x, None).unwrap() - expected).abs() < 1e-15);

        // drop unit 1, scale unit 0 by 2
        let mask = DropoutMask { multipliers: vec![2.0, 0.0] };
        let l0 = 0.01 + 0.3 * 2.0 * h0;
        let l1 = -0.02 - 0.2 * 2.0 * h0;
        let expected = l0.exp() / (l0.exp() + l1.exp());
        assert!((forward(&p, &x, Some(&mask)).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn probability_strictly_inside_unit_interval() {
        let mut p = random_params(5, 8, 16);
        p.b2 = vec![1e6, -1e6];
        let x = random_x(5, 8);
        let prob = forward(&p, &x, None).unwrap();
        assert!(prob > 0.0 && prob < 1.0);
        p.b2 = vec![-1e6, 1e6];
        let prob = forward(&p, &x, None).unwrap();
        assert!(prob > 0.0 && prob < 1.0);
    }

    #[test]
    fn non_finite_forward_errors() {
        let mut p = random_params(5, 8, 16);
        p.b2[0] = f64::INFINITY;
        assert!(matches!(forward(&p, &random_x(1, 8), None), Err(Error::NonFinite(_))));
    }

    #[test]
    fn dimension_mismatch_errors() {
        let p = random_params(5, 8, 16);
        assert!(forward(&p, &random_x(1, 7), None).is_err());
        let mask = DropoutMask { multipliers: vec![1.0; 3] };
        assert!(forward(&p, &random_x(1, 8), Some(&mask)).is_err());
    }

    #[test]
    fn gradient_check_random_states() {
        for s in 0..100 {
            let p = random_params(s, 8, 16);
            let x = random_x(s, 8);
            let disc = gradient_check(&p, &x, (s % 2) as u8);
            assert!(disc < 1e-4, "seed {s}: {disc}");
        }
    }

    #[test]
    fn gradient_check_dead_path_and_determinism() {
        let p = random_params(11, 8, 16);
        let zero = FeatureVector { values: vec![0.0; 8] };
        let (_, g) = loss_and_gradient(&p, &zero.values, 1, None);
        assert!(g[..8 * 16].iter().all(|&v| v == 0.0));
        let a = gradient_check(&p, &zero, 1);
        assert!(a < 1e-4);
        assert_eq!(a, gradient_check(&p, &zero, 1));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let p = random_params(21, 8, 16);
        let back = ScorerParameters::from_text(&p.to_text(Some("config_hash=xyz"))).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn load_rejects_other_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        random_params(1, 8, 16).save(&path, None).unwrap();
        assert!(ScorerParameters::load(&path, 8, 16).is_ok());
        assert!(matches!(ScorerParameters::load(&path, 8, 32), Err(Error::DimensionMismatch(_))));
        assert!(ScorerParameters::load(&path, 6, 16).is_err());
    }

    #[test]
    fn balanced_pairs_have_equal_counts() {
        let labels_owned: Vec<Vec<u8>> = (0..50).map(|i| (0..10).map(|j| u8::from(j == i % 10)).collect()).collect();
        let labels: Vec<&[u8]> = labels_owned.iter().map(|l| l.as_slice()).collect();
        let pairs = epoch_pairs(&labels, true, &mut seed::rng(4));
        let pos = pairs.iter().filter(|&&(i, j)| labels[i][j] == 1).count();
        assert_eq!(pos, 50);
        assert_eq!(pairs.len() - pos, 50);
        let all = epoch_pairs(&labels, false, &mut seed::rng(4));
        assert_eq!(all.len(), 500);
    }
}
