//! Scoring of masked predictions and aggregation into metric tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Lexicons, PosGroup, ProbeItem};
use crate::error::{Error, Result};
use crate::geometry::{cosine_distance, euclidean_distance};
use crate::induction::Pseudoword;
use crate::model::ModelBundle;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub word: String,
    pub prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneralizeMode {
    Vanilla,
    Posthoc,
    Aggregate,
}

impl GeneralizeMode {
    pub fn label(self) -> &'static str {
        match self {
            GeneralizeMode::Vanilla => "vanilla",
            GeneralizeMode::Posthoc => "posthoc",
            GeneralizeMode::Aggregate => "aggregate",
        }
    }
}

/// What was fed at the focus position when the predictions were made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Condition {
    Vanilla,
    Mapp,
    Random { draw: usize },
    Perturbed { epsilon: f64, direction: usize },
    Interpolated { alpha: f64 },
    Generalized { mode: GeneralizeMode },
}

impl Condition {
    /// Condition name without its parameters, used as the CSV `condition` column.
    pub fn name(&self) -> String {
        match self {
            Condition::Vanilla => "vanilla".into(),
            Condition::Mapp => "mapp".into(),
            Condition::Random { .. } => "random".into(),
            Condition::Perturbed { .. } => "perturbed".into(),
            Condition::Interpolated { .. } => "interpolated".into(),
            Condition::Generalized { mode } => mode.label().into(),
        }
    }

    /// The grid parameter (ε or α) if any.
    pub fn param(&self) -> Option<f64> {
        match self {
            Condition::Perturbed { epsilon, .. } => Some(*epsilon),
            Condition::Interpolated { alpha } => Some(*alpha),
            _ => None,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Random { draw } => write!(f, "random(draw={draw})"),
            Condition::Perturbed { epsilon, direction } => write!(f, "perturbed(eps={epsilon},dir={direction})"),
            Condition::Interpolated { alpha } => write!(f, "interpolated(alpha={alpha})"),
            other => f.write_str(&other.name()),
        }
    }
}

/// Ranked cue-slot predictions for one item under one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub item_id: String,
    pub condition: Condition,
    pub predictions: Vec<Prediction>,
}

impl PredictionSet {
    pub fn new(item_id: impl Into<String>, condition: Condition, predictions: Vec<Prediction>) -> Self {
        Self {
            item_id: item_id.into(),
            condition,
            predictions,
        }
    }

    pub fn k(&self) -> usize {
        self.predictions.len()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.predictions.iter().map(|p| p.word.as_str())
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.predictions.len() {
            return Err(Error::Validation(format!(
                "k = {k} but item `{}` has {} predictions",
                self.item_id,
                self.predictions.len()
            )));
        }
        Ok(())
    }
}

/// Number of the top-`k` words that belong to the lexicon, out of `k`.
pub fn sense_match(preds: &PredictionSet, lexicon: &BTreeSet<String>, k: usize) -> Result<(usize, usize)> {
    preds.check_k(k)?;
    let hits = preds
        .words()
        .take(k)
        .filter(|w| lexicon.contains(&w.to_lowercase()))
        .count();
    Ok((hits, k))
}

/// Whether the original cue word is among the top `k`.
pub fn word_match(preds: &PredictionSet, cue_word: &str, k: usize) -> Result<bool> {
    preds.check_k(k)?;
    let cue = cue_word.to_lowercase();
    Ok(preds.words().take(k).any(|w| w.to_lowercase() == cue))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Code {
    A,
    B,
    Neither,
}

/// Codes each prediction as belonging to sense A, sense B, or neither.
pub fn code_interpolation(preds: &PredictionSet, lex_a: &BTreeSet<String>, lex_b: &BTreeSet<String>) -> Result<Vec<Code>> {
    if let Some(w) = lex_a.intersection(lex_b).next() {
        return Err(Error::Validation(format!("lexicons overlap on `{w}`")));
    }
    Ok(preds
        .words()
        .map(|w| {
            let w = w.to_lowercase();
            if lex_a.contains(&w) {
                Code::A
            } else if lex_b.contains(&w) {
                Code::B
            } else {
                Code::Neither
            }
        })
        .collect())
}

/// One scored observation before aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub item_id: String,
    /// Condition name as in [`Condition::name`], or a derived label such as `sense_a`.
    pub condition: String,
    pub param: Option<f64>,
    pub pos: Option<PosGroup>,
    pub k: usize,
    pub hits: u64,
    pub total: u64,
}

/// A grouped accuracy with its exact integer counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub condition: String,
    pub group: String,
    pub k: usize,
    pub numerator: u64,
    pub denominator: u64,
    pub accuracy: f64,
}

impl MetricRow {
    pub fn new(condition: impl Into<String>, group: impl Into<String>, k: usize, numerator: u64, denominator: u64) -> Self {
        let accuracy = if denominator == 0 {
            0.0
        } else {
            numerator as f64 / denominator as f64
        };
        Self {
            condition: condition.into(),
            group: group.into(),
            k,
            numerator,
            denominator,
            accuracy,
        }
    }
}

/// The three ε intervals used for binned perturbation results.
pub const EPSILON_BINS: [(f64, f64, &str); 3] = [(0.0, 0.4, "0-0.4"), (0.6, 1.0, "0.6-1.0"), (1.2, 1.8, "1.2-1.8")];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// One `all` group per (condition, k).
    Overall,
    /// `all` plus one group per part-of-speech group.
    PosGroups,
    /// One group per parameter value, labelled `{name}={value}`.
    PerParam(&'static str),
    /// The [`EPSILON_BINS`]; parameters outside every bin are dropped.
    EpsilonBins,
}

fn param_label(name: &str, v: f64) -> String {
    format!("{name}={}", fmt_param(v))
}

/// Shortest representation with at least two decimals, e.g. `0.20`, `0.15`.
pub fn fmt_param(v: f64) -> String {
    let s = format!("{v:.2}");
    if (s.parse::<f64>().unwrap() - v).abs() < 1e-12 {
        s
    } else {
        format!("{v}")
    }
}

fn bin_of(v: f64) -> Option<&'static str> {
    EPSILON_BINS
        .iter()
        .find(|(lo, hi, _)| v >= lo - 1e-9 && v <= hi + 1e-9)
        .map(|(_, _, l)| *l)
}

/// Groups scores and sums their counts. Rows are ordered by condition, then
/// k, then group (in scheme order).
pub fn aggregate(scores: &[Score], scheme: Scheme) -> Vec<MetricRow> {
    // (condition, k, group order key, group label) -> (num, den)
    let mut acc: BTreeMap<(String, usize, (u8, i64), String), (u64, u64)> = BTreeMap::new();
    let mut add = |s: &Score, order: (u8, i64), group: String| {
        let e = acc.entry((s.condition.clone(), s.k, order, group)).or_default();
        e.0 += s.hits;
        e.1 += s.total;
    };
    for s in scores {
        match scheme {
            Scheme::Overall => add(s, (0, 0), "all".into()),
            Scheme::PosGroups => {
                add(s, (0, 0), "all".into());
                if let Some(p) = s.pos {
                    add(s, (1, p as i64), p.label().into());
                }
            }
            Scheme::PerParam(name) => {
                if let Some(v) = s.param {
                    add(s, (0, (v * 1e6).round() as i64), param_label(name, v));
                }
            }
            Scheme::EpsilonBins => {
                if let Some(label) = s.param.and_then(bin_of) {
                    let idx = EPSILON_BINS.iter().position(|b| b.2 == label).unwrap();
                    add(s, (0, idx as i64), label.into());
                }
            }
        }
    }
    acc.into_iter()
        .map(|((condition, k, _, group), (n, d))| MetricRow::new(condition, group, k, n, d))
        .collect()
}

/// Sense-match accuracy at `k` when the focus row is a random vector drawn
/// from the Gaussian matched to the embedding table.
pub fn random_baseline(
    bundle: &ModelBundle,
    items: &[ProbeItem],
    lexicons: &Lexicons,
    n_draws: usize,
    k: usize,
    seed: u64,
) -> Result<MetricRow> {
    if n_draws == 0 {
        return Err(Error::Config("random baseline needs at least one draw".into()));
    }
    let (mean, std) = bundle.embedding_stats();
    let normal = Normal::new(mean, std.max(f64::MIN_POSITIVE)).expect("finite statistics");
    let d = bundle.config().hidden_dim;
    let mut num = 0u64;
    let mut den = 0u64;
    for it in items {
        let enc = bundle.encode_item(it)?;
        let lex = lexicons
            .get(&it.sense_id)
            .ok_or_else(|| Error::item(&it.id, format!("no lexicon for `{}`", it.sense_id)))?;
        for draw in 0..n_draws {
            let mut r = rng::stream(seed, "random-baseline", &it.id, draw as u64);
            let z: Vec<f32> = (0..d).map(|_| normal.sample(&mut r) as f32).collect();
            let preds = bundle.masked_topk(&enc, Some(ndarray::ArrayView1::from(&z[..])), k)?;
            let set = PredictionSet::new(&it.id, Condition::Random { draw }, preds);
            let (h, t) = sense_match(&set, lex, k)?;
            num += h as u64;
            den += t as u64;
        }
    }
    Ok(MetricRow::new("random", "all", k, num, den))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
        Some(Self {
            min: v[0],
            median,
            max: v[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceEntry {
    pub source: String,
    pub focus_word: String,
    pub euclidean: f64,
    pub cosine: f64,
}

/// Distances between each pseudoword and the static embedding of its focus word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub entries: Vec<DistanceEntry>,
    pub euclidean: Summary,
    pub cosine: Summary,
}

pub fn distance_report(pseudowords: &[Pseudoword], bundle: &ModelBundle) -> Result<DistanceReport> {
    let mut entries = Vec::with_capacity(pseudowords.len());
    for p in pseudowords {
        let id = bundle.vocab().id(&p.focus_word).ok_or_else(|| {
            Error::Vocabulary(format!("focus word `{}` has no static embedding", p.focus_word))
        })?;
        let zt = bundle.static_embedding(id);
        let zt = zt.as_slice().unwrap();
        entries.push(DistanceEntry {
            source: p.source_items.join("+"),
            focus_word: p.focus_word.clone(),
            euclidean: euclidean_distance(&p.vector, zt)?,
            cosine: cosine_distance(&p.vector, zt)?,
        });
    }
    entries.sort_by(|a, b| a.source.cmp(&b.source));
    let eu: Vec<f64> = entries.iter().map(|e| e.euclidean).collect();
    let co: Vec<f64> = entries.iter().map(|e| e.cosine).collect();
    let empty = || Error::EmptyReport("no pseudowords for the distance report".into());
    Ok(DistanceReport {
        euclidean: Summary::of(&eu).ok_or_else(empty)?,
        cosine: Summary::of(&co).ok_or_else(empty)?,
        entries,
    })
}
