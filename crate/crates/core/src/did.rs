//! Dialect identification with a multinomial Naive Bayes model over
//! phoneme n-grams.
//!
//! Training counts every n-gram of the configured orders per class and
//! applies add-alpha smoothing over the training vocabulary plus a single
//! shared bucket for n-grams never seen in training.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};
use crate::model::DialectRegion;

pub const MODEL_FORMAT_VERSION: u32 = 1;
/// Below this much speech a speaker-level decision is flagged.
pub const DEFAULT_MIN_SPEAKER_SECONDS: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbConfig {
    pub orders: Vec<usize>,
    pub alpha: f64,
}

impl Default for NbConfig {
    fn default() -> Self {
        NbConfig {
            orders: vec![1, 2, 3],
            alpha: 1.0,
        }
    }
}

impl NbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.orders.is_empty() || self.orders.contains(&0) {
            return Err(Error::Precondition(format!(
                "n-gram orders must be non-empty and >= 1, got {:?}",
                self.orders
            )));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Precondition(format!(
                "smoothing alpha must be > 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// All contiguous windows of each order, as space-joined keys with counts.
/// Ordered so that scores sum in a fixed order.
pub fn extract_ngrams<S: AsRef<str>>(tokens: &[S], orders: &[usize]) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for &k in orders {
        if k == 0 || tokens.len() < k {
            continue;
        }
        for w in tokens.windows(k) {
            let key = w.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ");
            *out.entry(key).or_insert(0) += 1;
        }
    }
    out
}

pub fn tokenize(phonemes: &str) -> Vec<&str> {
    phonemes.split_whitespace().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbModel {
    pub format_version: u32,
    pub config_hash: String,
    pub classes: Vec<DialectRegion>,
    pub orders: Vec<usize>,
    pub alpha: f64,
    /// N-gram keys in index order.
    pub vocab: Vec<String>,
    pub log_prior: Vec<f64>,
    /// `[class][vocab index]`
    pub log_likelihood: Vec<Vec<f64>>,
    /// Log probability of the shared unseen-n-gram bucket, per class.
    pub log_unseen: Vec<f64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: DialectRegion,
    /// Normalized log posteriors in model class order.
    pub log_posterior: Vec<(DialectRegion, f64)>,
    /// Input had no n-grams; the prior decided.
    pub empty_input: bool,
}

impl Prediction {
    pub fn posterior(&self, class: DialectRegion) -> Option<f64> {
        self.log_posterior
            .iter()
            .find(|(c, _)| *c == class)
            .map(|(_, lp)| lp.exp())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerPrediction {
    pub prediction: Prediction,
    pub total_s: f64,
    pub low_confidence: bool,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl NbModel {
    /// Trains on `(phoneme tokens, label)` pairs. Every class in `classes`
    /// needs at least one example; when `classes` is `None` the labels
    /// present in the corpus are used.
    pub fn train<S: AsRef<str>>(
        corpus: &[(Vec<S>, DialectRegion)],
        classes: Option<&[DialectRegion]>,
        config: &NbConfig,
    ) -> Result<NbModel> {
        config.validate()?;
        let classes: Vec<DialectRegion> = match classes {
            Some(c) => {
                let set: BTreeSet<_> = c.iter().copied().collect();
                set.into_iter().collect()
            }
            None => corpus
                .iter()
                .map(|(_, c)| *c)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        };
        if classes.is_empty() {
            return Err(Error::Precondition("training corpus is empty".into()));
        }

        let mut examples = vec![0u64; classes.len()];
        let mut counts: Vec<HashMap<String, u64>> = vec![HashMap::new(); classes.len()];
        for (tokens, label) in corpus {
            let ci = classes.binary_search(label).map_err(|_| {
                Error::Precondition(format!("example labelled {label} is not a declared class"))
            })?;
            examples[ci] += 1;
            for (g, n) in extract_ngrams(tokens, &config.orders) {
                *counts[ci].entry(g).or_insert(0) += n;
            }
        }
        if let Some(i) = examples.iter().position(|n| *n == 0) {
            return Err(Error::Precondition(format!(
                "class {} has no training examples",
                classes[i]
            )));
        }

        let vocab: Vec<String> = counts
            .iter()
            .flat_map(|m| m.keys().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let v = vocab.len() as f64;
        let alpha = config.alpha;
        let n_examples: u64 = examples.iter().sum();

        let mut log_likelihood = Vec::with_capacity(classes.len());
        let mut log_unseen = Vec::with_capacity(classes.len());
        for table in &counts {
            let total: u64 = table.values().sum();
            let denom = (total as f64 + alpha * (v + 1.0)).ln();
            log_likelihood.push(
                vocab
                    .iter()
                    .map(|g| (table.get(g).copied().unwrap_or(0) as f64 + alpha).ln() - denom)
                    .collect(),
            );
            log_unseen.push(alpha.ln() - denom);
        }
        let log_prior = examples
            .iter()
            .map(|n| (*n as f64).ln() - (n_examples as f64).ln())
            .collect();

        let mut model = NbModel {
            format_version: MODEL_FORMAT_VERSION,
            config_hash: config.hash(),
            classes,
            orders: config.orders.clone(),
            alpha,
            vocab,
            log_prior,
            log_likelihood,
            log_unseen,
            index: HashMap::new(),
        };
        model.build_index();
        Ok(model)
    }

    fn build_index(&mut self) {
        self.index = self
            .vocab
            .iter()
            .enumerate()
            .map(|(i, g)| (g.clone(), i))
            .collect();
    }

    /// Unnormalized per-class log scores and the number of n-grams seen.
    pub fn class_scores<S: AsRef<str>>(&self, tokens: &[S]) -> (Vec<f64>, u64) {
        let grams = extract_ngrams(tokens, &self.orders);
        let mut scores = self.log_prior.clone();
        let mut n = 0;
        for (g, count) in &grams {
            n += count;
            let idx = self.index.get(g);
            for (c, s) in scores.iter_mut().enumerate() {
                let ll = match idx {
                    Some(&i) => self.log_likelihood[c][i],
                    None => self.log_unseen[c],
                };
                *s += *count as f64 * ll;
            }
        }
        (scores, n)
    }

    pub fn predict<S: AsRef<str>>(&self, tokens: &[S]) -> Prediction {
        let (scores, n) = self.class_scores(tokens);
        let norm = log_sum_exp(&scores);
        let best = argmax(&scores);
        Prediction {
            class: self.classes[best],
            log_posterior: self
                .classes
                .iter()
                .zip(&scores)
                .map(|(c, s)| (*c, s - norm))
                .collect(),
            empty_input: n == 0,
        }
    }

    /// Classifies one speaker from the concatenation of their segments, in
    /// the given order. Flags the decision when the total duration is below
    /// `min_total_s`.
    pub fn classify_speaker<S: AsRef<str>>(
        &self,
        segments: &[Vec<S>],
        durations_s: &[f64],
        min_total_s: f64,
    ) -> Result<SpeakerPrediction> {
        if segments.is_empty() {
            return Err(Error::Precondition("speaker has no segments".into()));
        }
        if segments.len() != durations_s.len() {
            return Err(Error::Precondition(format!(
                "{} segments but {} durations",
                segments.len(),
                durations_s.len()
            )));
        }
        let joined: Vec<&str> = segments
            .iter()
            .flat_map(|s| s.iter().map(AsRef::as_ref))
            .collect();
        let total_s: f64 = durations_s.iter().sum();
        Ok(SpeakerPrediction {
            prediction: self.predict(&joined),
            total_s,
            low_confidence: total_s < min_total_s,
        })
    }

    pub fn evaluate<S: AsRef<str>>(&self, test: &[(Vec<S>, DialectRegion)]) -> Result<Evaluation> {
        if test.is_empty() {
            return Err(Error::Precondition("evaluation set is empty".into()));
        }
        let pairs: Vec<(DialectRegion, DialectRegion)> = test
            .iter()
            .map(|(tokens, truth)| (*truth, self.predict(tokens).class))
            .collect();
        Ok(Evaluation::from_pairs(&pairs))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("model serializes");
        fs::write(path, json + "\n").at(path)
    }

    pub fn load(path: &Path) -> Result<NbModel> {
        let text = fs::read_to_string(path).at(path)?;
        let mut model: NbModel = serde_json::from_str(&text)
            .map_err(|e| Error::invalid("model file", format!("{}: {e}", path.display())))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(
                "model file",
                format!("unsupported format_version {}", model.format_version),
            ));
        }
        let k = model.classes.len();
        if k == 0
            || model.log_prior.len() != k
            || model.log_unseen.len() != k
            || model.log_likelihood.len() != k
            || model.log_likelihood.iter().any(|r| r.len() != model.vocab.len())
        {
            return Err(Error::invalid("model file", "table dimensions disagree"));
        }
        model.build_index();
        Ok(model)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Rows are the true class, columns the prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: Vec<DialectRegion>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<DialectRegion>) -> Self {
        let k = classes.len();
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; k]; k],
        }
    }

    fn idx(&self, c: DialectRegion) -> usize {
        self.classes.iter().position(|x| *x == c).expect("class in matrix")
    }

    pub fn add(&mut self, truth: DialectRegion, predicted: DialectRegion) {
        let (i, j) = (self.idx(truth), self.idx(predicted));
        self.counts[i][j] += 1;
    }

    pub fn row_sum(&self, truth: DialectRegion) -> u64 {
        self.counts[self.idx(truth)].iter().sum()
    }

    pub fn col_sum(&self, predicted: DialectRegion) -> u64 {
        let j = self.idx(predicted);
        self.counts.iter().map(|r| r[j]).sum()
    }

    /// Per-class F1 for classes that occur in truth or prediction.
    pub fn per_class_f1(&self) -> BTreeMap<DialectRegion, f64> {
        let mut out = BTreeMap::new();
        for (i, c) in self.classes.iter().enumerate() {
            let tp = self.counts[i][i];
            let fn_ = self.row_sum(*c) - tp;
            let fp = self.col_sum(*c) - tp;
            if tp + fn_ + fp == 0 {
                continue;
            }
            out.insert(*c, 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64);
        }
        out
    }

    pub fn render(&self) -> String {
        let mut s = format!("{:<10}", "truth\\pred");
        for c in &self.classes {
            s += &format!(" {:>9}", c.as_str());
        }
        s.push('\n');
        for (c, row) in self.classes.iter().zip(&self.counts) {
            s += &format!("{:<10}", c.as_str());
            for n in row {
                s += &format!(" {n:>9}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub macro_f1: f64,
    pub per_class_f1: BTreeMap<DialectRegion, f64>,
    pub confusion: ConfusionMatrix,
}

impl Evaluation {
    /// Builds the confusion matrix over every class seen in the pairs.
    pub fn from_pairs(pairs: &[(DialectRegion, DialectRegion)]) -> Evaluation {
        let classes: Vec<DialectRegion> = pairs
            .iter()
            .flat_map(|(t, p)| [*t, *p])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut confusion = ConfusionMatrix::new(classes);
        for (t, p) in pairs {
            confusion.add(*t, *p);
        }
        let per_class_f1 = confusion.per_class_f1();
        let macro_f1 = if per_class_f1.is_empty() {
            0.0
        } else {
            per_class_f1.values().sum::<f64>() / per_class_f1.len() as f64
        };
        Evaluation {
            macro_f1,
            per_class_f1,
            confusion,
        }
    }
}

/// Reads `label<TAB>phoneme tokens` lines.
pub fn read_labeled_corpus(path: &Path) -> Result<Vec<(Vec<String>, DialectRegion)>> {
    let file = fs::File::open(path).at(path)?;
    let name = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        let (label, phonemes) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(&name, i + 1, "expected label<TAB>phonemes"))?;
        let label: DialectRegion = label
            .trim()
            .parse()
            .map_err(|e: Error| Error::parse(&name, i + 1, e.to_string()))?;
        out.push((tokenize(phonemes).into_iter().map(str::to_string).collect(), label));
    }
    Ok(out)
}

pub fn write_labeled_corpus(path: &Path, corpus: &[(Vec<String>, DialectRegion)]) -> Result<()> {
    let mut s = String::new();
    for (tokens, label) in corpus {
        s += label.as_str();
        s.push('\t');
        s += &tokens.join(" ");
        s.push('\n');
    }
    fs::write(path, s).at(path)
}
