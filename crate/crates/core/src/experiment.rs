//! End-to-end runners for the experiment families: specialization,
//! ε-perturbation, interpolation between minimal pairs, generalization over
//! sentences, and the random-vector baseline.
//!
//! Every runner writes its tables into `RunConfig::out` and also returns them.
//! Work is spread over a bounded rayon pool; results are collected in input
//! order and every random draw is keyed by item id, so output files do not
//! depend on the pool size.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use ndarray::ArrayView1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{gen_toy, pair_index, write_items, Lexicons, Portion, ProbeItem, Split, ToyCorpus, ToyCorpusSpec};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate, code_interpolation, distance_report, fmt_param, random_baseline, sense_match, word_match, Code,
    Condition, DistanceReport, GeneralizeMode, MetricRow, PredictionSet, Scheme, Score, EPSILON_BINS,
};
use crate::geometry::{default_alphas, default_epsilons, interpolate, perturb, sample_directions, MagnitudePolicy};
use crate::induction::{induce, induce_aggregate, posthoc_average, InductionConfig, Pseudoword};
use crate::model::{train_toy, ModelBundle, ModelConfig, TrainConfig, TrainReport};
use crate::plot::{self, Series};
use crate::report::{self, write_metrics, write_text};
use crate::store::PseudowordStore;
use crate::tokenizer::{Vocabulary, NUM_SPECIAL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Cut-offs for sense-match tables.
    pub ks: Vec<usize>,
    /// Cut-offs for the word-match table.
    pub word_ks: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub alphas: Vec<f64>,
    pub num_directions: usize,
    pub magnitude_policy: MagnitudePolicy,
    pub random_draws: usize,
    pub induction: InductionConfig,
    /// Worker pool size; 0 lets rayon decide.
    pub threads: usize,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            ks: vec![1, 5],
            word_ks: vec![1, 5, 20],
            epsilons: default_epsilons(),
            alphas: default_alphas(),
            num_directions: 10,
            magnitude_policy: MagnitudePolicy::Rescale,
            random_draws: 100,
            induction: InductionConfig::default(),
            threads: 0,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.ks.is_empty() || self.ks.contains(&0) || self.word_ks.contains(&0) {
            return fail("k lists must be non-empty and positive".into());
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(0.0..2.0).contains(*e)) {
            return fail(format!("epsilon {e} outside [0, 2)"));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return fail(format!("alpha {a} outside [0, 1]"));
        }
        if self.num_directions == 0 || self.random_draws == 0 {
            return fail("num_directions and random_draws must be positive".into());
        }
        self.induction.validate()
    }

    /// The induction settings with the master seed applied.
    pub fn induction_config(&self) -> InductionConfig {
        InductionConfig {
            seed: self.seed,
            ..self.induction.clone()
        }
    }

    /// [`validate`](Self::validate) plus the checks that need the model:
    /// every cut-off must fit in the number of rankable words.
    pub fn validate_for(&self, bundle: &ModelBundle) -> Result<()> {
        self.validate()?;
        let words = (0..bundle.vocab().len() as u32).filter(|&i| !Vocabulary::is_special(i)).count();
        if self.max_k() > words {
            return Err(Error::Config(format!(
                "k = {} exceeds the {words} non-special vocabulary entries",
                self.max_k()
            )));
        }
        Ok(())
    }

    fn max_k(&self) -> usize {
        self.ks.iter().chain(&self.word_ks).copied().max().unwrap_or(1)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// Induces pseudowords through a persistent store: entries already present
/// under the same key are reused, new ones are added and saved.
pub struct Inducer<'a> {
    bundle: &'a ModelBundle,
    cfg: InductionConfig,
    fingerprint: String,
    store: Mutex<PseudowordStore>,
    path: Option<PathBuf>,
}

fn fnv(text: &str) -> u64 {
    text.bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

impl<'a> Inducer<'a> {
    pub fn new(bundle: &'a ModelBundle, cfg: InductionConfig, path: Option<&Path>) -> Result<Self> {
        let store = match path {
            Some(p) => PseudowordStore::open(p)?,
            None => PseudowordStore::new(),
        };
        let spec = serde_json::to_string(&cfg)?;
        let fingerprint = format!("{:016x}{:016x}", fnv(&spec), bundle.weights().checksum());
        Ok(Self {
            bundle,
            cfg,
            fingerprint,
            store: Mutex::new(store),
            path: path.map(Path::to_path_buf),
        })
    }

    fn key(&self, ids: &[&str]) -> String {
        format!("{}@{}", ids.join("+"), self.fingerprint)
    }

    fn cached(&self, key: &str) -> Option<Pseudoword> {
        self.store.lock().unwrap().get(key).cloned()
    }

    fn remember(&self, key: String, pw: &Pseudoword) {
        self.store.lock().unwrap().insert(key, pw.clone());
    }

    pub fn one(&self, item: &ProbeItem) -> Result<Pseudoword> {
        let key = self.key(&[&item.id]);
        if let Some(p) = self.cached(&key) {
            return Ok(p);
        }
        let pw = induce(self.bundle, item, &self.cfg)?;
        self.remember(key, &pw);
        Ok(pw)
    }

    pub fn group(&self, items: &[ProbeItem]) -> Result<Pseudoword> {
        let ids: BTreeSet<&str> = items.iter().map(|i| i.id.as_str()).collect();
        let key = self.key(&ids.into_iter().collect::<Vec<_>>());
        if let Some(p) = self.cached(&key) {
            return Ok(p);
        }
        let pw = induce_aggregate(self.bundle, items, &self.cfg)?;
        self.remember(key, &pw);
        Ok(pw)
    }

    /// Induces every item, in parallel, keeping input order.
    pub fn many(&self, items: &[ProbeItem]) -> Vec<Result<Pseudoword>> {
        items.par_iter().map(|it| self.one(it)).collect()
    }

    pub fn save(&self) -> Result<()> {
        match &self.path {
            Some(p) => self.store.lock().unwrap().save(p),
            None => Ok(()),
        }
    }
}

fn store_path(cfg: &RunConfig) -> PathBuf {
    cfg.path("pseudowords.jsonl")
}

fn check_nonempty(items: &[ProbeItem], what: &str) -> Result<()> {
    if items.is_empty() {
        return Err(Error::EmptyReport(format!("no {what} items")));
    }
    Ok(())
}

fn lexicon<'l>(lexicons: &'l Lexicons, item: &ProbeItem) -> Result<&'l BTreeSet<String>> {
    lexicons
        .get(&item.sense_id)
        .ok_or_else(|| Error::item(&item.id, format!("no lexicon for sense `{}`", item.sense_id)))
}

fn topk(bundle: &ModelBundle, item: &ProbeItem, z: Option<&[f32]>, k: usize) -> Result<Vec<crate::eval::Prediction>> {
    let enc = bundle.encode_item(item)?;
    bundle.masked_topk(&enc, z.map(ArrayView1::from), k)
}

fn sense_scores(set: &PredictionSet, item: &ProbeItem, lex: &BTreeSet<String>, ks: &[usize]) -> Result<Vec<Score>> {
    ks.iter()
        .map(|&k| {
            let (hits, total) = sense_match(set, lex, k)?;
            Ok(Score {
                item_id: item.id.clone(),
                condition: set.condition.name(),
                param: set.condition.param(),
                pos: item.pos,
                k,
                hits: hits as u64,
                total: total as u64,
            })
        })
        .collect()
}

fn word_scores(set: &PredictionSet, item: &ProbeItem, ks: &[usize]) -> Result<Vec<Score>> {
    ks.iter()
        .map(|&k| {
            Ok(Score {
                item_id: item.id.clone(),
                condition: set.condition.name(),
                param: set.condition.param(),
                pos: item.pos,
                k,
                hits: word_match(set, item.cue_word(), k)? as u64,
                total: 1,
            })
        })
        .collect()
}

/// An item whose induction failed; the run goes on without it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub item_id: String,
    pub error: String,
}

fn write_failures(cfg: &RunConfig, name: &str, failures: &[Failure]) -> Result<()> {
    write_text(cfg.path(name), &report::to_csv(failures, &["item_id", "error"])?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecializeReport {
    pub sense: Vec<MetricRow>,
    pub word: Vec<MetricRow>,
    pub predictions: Vec<PredictionSet>,
    pub pseudowords: Vec<Pseudoword>,
    pub distances: Option<DistanceReport>,
    pub failures: Vec<Failure>,
}

impl SpecializeReport {
    pub fn sense_accuracy(&self, condition: &str, k: usize) -> Option<f64> {
        find(&self.sense, condition, "all", k)
    }
}

pub fn find(rows: &[MetricRow], condition: &str, group: &str, k: usize) -> Option<f64> {
    rows.iter()
        .find(|r| r.condition == condition && r.group == group && r.k == k)
        .map(|r| r.accuracy)
}

/// Vanilla vs MaPP predictions on each item, with sense-match and
/// word-match tables and the distance report.
pub fn run_specialize(bundle: &ModelBundle, items: &[ProbeItem], lexicons: &Lexicons, cfg: &RunConfig) -> Result<SpecializeReport> {
    cfg.validate_for(bundle)?;
    check_nonempty(items, "specialization")?;
    let pool = cfg.pool()?;
    let inducer = Inducer::new(bundle, cfg.induction_config(), Some(&store_path(cfg)))?;
    let kmax = cfg.max_k();
    let per_item: Vec<Result<(Vec<PredictionSet>, Option<Pseudoword>, Option<Failure>)>> = pool.install(|| {
        items
            .par_iter()
            .map(|it| {
                let vanilla = PredictionSet::new(&it.id, Condition::Vanilla, topk(bundle, it, None, kmax)?);
                match inducer.one(it) {
                    Ok(pw) => {
                        let mapp = PredictionSet::new(&it.id, Condition::Mapp, topk(bundle, it, Some(&pw.vector), kmax)?);
                        Ok((vec![vanilla, mapp], Some(pw), None))
                    }
                    Err(e) => Ok((
                        vec![vanilla],
                        None,
                        Some(Failure {
                            item_id: it.id.clone(),
                            error: e.to_string(),
                        }),
                    )),
                }
            })
            .collect()
    });
    inducer.save()?;

    let mut predictions = Vec::new();
    let mut pseudowords = Vec::new();
    let mut failures = Vec::new();
    let mut sense = Vec::new();
    let mut word = Vec::new();
    for (it, r) in items.iter().zip(per_item) {
        let (sets, pw, fail) = r?;
        let lex = lexicon(lexicons, it)?;
        for s in &sets {
            sense.extend(sense_scores(s, it, lex, &cfg.ks)?);
            word.extend(word_scores(s, it, &cfg.word_ks)?);
        }
        predictions.extend(sets);
        pseudowords.extend(pw);
        failures.extend(fail);
    }
    let sense = aggregate(&sense, Scheme::PosGroups);
    let word = aggregate(&word, Scheme::PosGroups);
    let distances = if pseudowords.is_empty() {
        None
    } else {
        Some(distance_report(&pseudowords, bundle)?)
    };

    write_metrics(cfg.path("specialize_sense.csv"), &sense)?;
    write_metrics(cfg.path("specialize_word.csv"), &word)?;
    write_text(cfg.path("specialize_predictions.jsonl"), &report::predictions_jsonl(&predictions))?;
    if let Some(d) = &distances {
        write_text(cfg.path("distances.csv"), &report::distances_csv(d)?)?;
    }
    write_failures(cfg, "specialize_failures.csv", &failures)?;
    Ok(SpecializeReport {
        sense,
        word,
        predictions,
        pseudowords,
        distances,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbReport {
    pub per_epsilon: Vec<MetricRow>,
    pub bins: Vec<MetricRow>,
    pub failures: Vec<Failure>,
}

/// Sense-match accuracy at points ε away from each item's pseudoword along
/// `num_directions` random directions.
pub fn run_perturb(bundle: &ModelBundle, items: &[ProbeItem], lexicons: &Lexicons, cfg: &RunConfig) -> Result<PerturbReport> {
    cfg.validate_for(bundle)?;
    check_nonempty(items, "perturbation")?;
    let pool = cfg.pool()?;
    let inducer = Inducer::new(bundle, cfg.induction_config(), Some(&store_path(cfg)))?;
    let dirs = sample_directions(cfg.num_directions, bundle.config().hidden_dim, cfg.seed)?;
    let kmax = *cfg.ks.iter().max().unwrap();
    let per_item: Vec<Result<std::result::Result<Vec<Score>, Failure>>> = pool.install(|| {
        items
            .par_iter()
            .map(|it| {
                let pw = match inducer.one(it) {
                    Ok(p) => p,
                    Err(e) => {
                        return Ok(Err(Failure {
                            item_id: it.id.clone(),
                            error: e.to_string(),
                        }))
                    }
                };
                let lex = lexicon(lexicons, it)?;
                let mut scores = Vec::new();
                for &epsilon in &cfg.epsilons {
                    for d in &dirs {
                        let z = perturb(&pw.vector, &d.vector, epsilon, cfg.magnitude_policy)?;
                        let cond = Condition::Perturbed {
                            epsilon,
                            direction: d.index,
                        };
                        let set = PredictionSet::new(&it.id, cond, topk(bundle, it, Some(&z), kmax)?);
                        scores.extend(sense_scores(&set, it, lex, &cfg.ks)?);
                    }
                }
                Ok(Ok(scores))
            })
            .collect()
    });
    inducer.save()?;
    let mut scores = Vec::new();
    let mut failures = Vec::new();
    for r in per_item {
        match r? {
            Ok(s) => scores.extend(s),
            Err(f) => failures.push(f),
        }
    }
    let per_epsilon = aggregate(&scores, Scheme::PerParam("eps"));
    let bins = aggregate(&scores, Scheme::EpsilonBins);
    write_metrics(cfg.path("perturb_eps.csv"), &per_epsilon)?;
    write_metrics(cfg.path("perturb_bins.csv"), &bins)?;
    write_failures(cfg, "perturb_failures.csv", &failures)?;
    emit_plots(&cfg.out)?;
    Ok(PerturbReport {
        per_epsilon,
        bins,
        failures,
    })
}

/// Codes of the top-`k` predictions for one pair at one α.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationRow {
    pub pair_id: String,
    /// Which member's masked sentence the vector was fed into (`a` or `b`).
    pub context: String,
    pub alpha: f64,
    pub k: usize,
    pub a: usize,
    pub b: usize,
    pub neither: usize,
}

/// Mean proportions over pairs and contexts for one (α, k).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationSummary {
    pub alpha: f64,
    pub k: usize,
    pub a: f64,
    pub b: f64,
    pub neither: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpolateReport {
    pub rows: Vec<InterpolationRow>,
    pub summary: Vec<InterpolationSummary>,
    /// Predictions at every (pair, context, α), in row order.
    pub predictions: Vec<(String, String, PredictionSet)>,
    pub failures: Vec<Failure>,
}

/// Walks the segment between the two pseudowords of each minimal pair and
/// codes the masked predictions as sense A, sense B or neither.
pub fn run_interpolate(bundle: &ModelBundle, items: &[ProbeItem], lexicons: &Lexicons, cfg: &RunConfig) -> Result<InterpolateReport> {
    cfg.validate_for(bundle)?;
    let pairs: Vec<(String, (ProbeItem, ProbeItem))> = pair_index(items)?.into_iter().collect();
    if pairs.is_empty() {
        return Err(Error::EmptyReport("no minimal pairs".into()));
    }
    let pool = cfg.pool()?;
    let inducer = Inducer::new(bundle, cfg.induction_config(), Some(&store_path(cfg)))?;
    let kmax = *cfg.ks.iter().max().unwrap();
    type PairOut = (Vec<InterpolationRow>, Vec<(String, String, PredictionSet)>);
    let per_pair: Vec<Result<std::result::Result<PairOut, Failure>>> = pool.install(|| {
        pairs
            .par_iter()
            .map(|(pid, (a, b))| {
                let (za, zb) = match (inducer.one(a), inducer.one(b)) {
                    (Ok(x), Ok(y)) => (x.vector, y.vector),
                    (Err(e), _) | (_, Err(e)) => {
                        return Ok(Err(Failure {
                            item_id: pid.clone(),
                            error: e.to_string(),
                        }))
                    }
                };
                let (la, lb) = (lexicon(lexicons, a)?, lexicon(lexicons, b)?);
                let mut rows = Vec::new();
                let mut preds = Vec::new();
                for (ctx, item) in [("a", a), ("b", b)] {
                    for &alpha in &cfg.alphas {
                        let z = interpolate(&za, &zb, alpha)?;
                        let set = PredictionSet::new(&item.id, Condition::Interpolated { alpha }, topk(bundle, item, Some(&z), kmax)?);
                        let codes = code_interpolation(&set, la, lb)?;
                        for &k in &cfg.ks {
                            let c = &codes[..k.min(codes.len())];
                            let count = |x: Code| c.iter().filter(|&&y| y == x).count();
                            rows.push(InterpolationRow {
                                pair_id: pid.clone(),
                                context: ctx.into(),
                                alpha,
                                k,
                                a: count(Code::A),
                                b: count(Code::B),
                                neither: count(Code::Neither),
                            });
                        }
                        preds.push((pid.clone(), ctx.to_string(), set));
                    }
                }
                Ok(Ok((rows, preds)))
            })
            .collect()
    });
    inducer.save()?;
    let mut rows = Vec::new();
    let mut predictions = Vec::new();
    let mut failures = Vec::new();
    for r in per_pair {
        match r? {
            Ok((r, p)) => {
                rows.extend(r);
                predictions.extend(p);
            }
            Err(f) => failures.push(f),
        }
    }
    let summary = summarize_interpolation(&rows);
    write_text(
        cfg.path("interpolate.csv"),
        &report::to_csv(&rows, &["pair_id", "context", "alpha", "k", "a", "b", "neither"])?,
    )?;
    write_text(
        cfg.path("interpolate_summary.csv"),
        &report::to_csv(&summary, &["alpha", "k", "a", "b", "neither"])?,
    )?;
    write_failures(cfg, "interpolate_failures.csv", &failures)?;
    emit_plots(&cfg.out)?;
    Ok(InterpolateReport {
        rows,
        summary,
        predictions,
        failures,
    })
}

pub fn summarize_interpolation(rows: &[InterpolationRow]) -> Vec<InterpolationSummary> {
    let mut acc: BTreeMap<(usize, i64), (f64, [usize; 3])> = BTreeMap::new();
    for r in rows {
        let e = acc.entry((r.k, (r.alpha * 1e6).round() as i64)).or_insert((r.alpha, [0; 3]));
        e.1[0] += r.a;
        e.1[1] += r.b;
        e.1[2] += r.neither;
    }
    acc.into_iter()
        .map(|((k, _), (alpha, c))| {
            let n = (c[0] + c[1] + c[2]).max(1) as f64;
            InterpolationSummary {
                alpha,
                k,
                a: c[0] as f64 / n,
                b: c[1] as f64 / n,
                neither: c[2] as f64 / n,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizeReport {
    pub metrics: Vec<MetricRow>,
    pub failures: Vec<Failure>,
}

/// For every (focus word, sense) group: an aggregate-loss pseudoword and a
/// post hoc average of per-sentence pseudowords, both from the train split,
/// evaluated with vanilla on the test split.
pub fn run_generalize(bundle: &ModelBundle, items: &[ProbeItem], lexicons: &Lexicons, cfg: &RunConfig) -> Result<GeneralizeReport> {
    cfg.validate_for(bundle)?;
    let items: Vec<&ProbeItem> = items.iter().filter(|i| i.portion == Portion::Generalization).collect();
    if items.is_empty() {
        return Err(Error::EmptyReport("no generalization items".into()));
    }
    let mut groups: BTreeMap<(String, String), (Vec<ProbeItem>, Vec<ProbeItem>)> = BTreeMap::new();
    for it in items {
        let g = groups.entry((it.focus_word.clone(), it.sense_id.clone())).or_default();
        match it.split {
            Some(Split::Train) => g.0.push(it.clone()),
            Some(Split::Test) => g.1.push(it.clone()),
            None => return Err(Error::item(&it.id, "generalization item without split")),
        }
    }
    let pool = cfg.pool()?;
    let inducer = Inducer::new(bundle, cfg.induction_config(), Some(&store_path(cfg)))?;
    let kmax = *cfg.ks.iter().max().unwrap();
    let groups: Vec<_> = groups.into_iter().collect();
    let per_group: Vec<Result<std::result::Result<Vec<Score>, Failure>>> = pool.install(|| {
        groups
            .par_iter()
            .map(|((word, sense), (train, test))| {
                let label = format!("{word}/{sense}");
                if train.is_empty() || test.is_empty() {
                    return Ok(Err(Failure {
                        item_id: label,
                        error: "group needs both train and test items".into(),
                    }));
                }
                let individual: std::result::Result<Vec<Pseudoword>, Error> = train.iter().map(|i| inducer.one(i)).collect();
                let (agg, singles) = match (inducer.group(train), individual) {
                    (Ok(a), Ok(s)) => (a, s),
                    (Err(e), _) | (_, Err(e)) => {
                        return Ok(Err(Failure {
                            item_id: label,
                            error: e.to_string(),
                        }))
                    }
                };
                check_leakage(test, singles.iter().chain([&agg]))?;
                let post = posthoc_average(&singles)?;
                let mut scores = Vec::new();
                for it in test {
                    let lex = lexicon(lexicons, it)?;
                    let conds: [(GeneralizeMode, Option<&[f32]>); 3] = [
                        (GeneralizeMode::Vanilla, None),
                        (GeneralizeMode::Posthoc, Some(&post)),
                        (GeneralizeMode::Aggregate, Some(&agg.vector)),
                    ];
                    for (mode, z) in conds {
                        let set = PredictionSet::new(&it.id, Condition::Generalized { mode }, topk(bundle, it, z, kmax)?);
                        scores.extend(sense_scores(&set, it, lex, &cfg.ks)?);
                    }
                }
                Ok(Ok(scores))
            })
            .collect()
    });
    inducer.save()?;
    let mut scores = Vec::new();
    let mut failures = Vec::new();
    for r in per_group {
        match r? {
            Ok(s) => scores.extend(s),
            Err(f) => failures.push(f),
        }
    }
    let metrics = aggregate(&scores, Scheme::Overall);
    write_metrics(cfg.path("generalize.csv"), &metrics)?;
    write_failures(cfg, "generalize_failures.csv", &failures)?;
    Ok(GeneralizeReport { metrics, failures })
}

/// Fails if any test item was used to induce one of the pseudowords.
pub fn check_leakage<'p>(test: &[ProbeItem], pseudowords: impl IntoIterator<Item = &'p Pseudoword>) -> Result<()> {
    let test_ids: BTreeSet<&str> = test.iter().map(|i| i.id.as_str()).collect();
    for p in pseudowords {
        if let Some(id) = p.source_items.iter().find(|s| test_ids.contains(s.as_str())) {
            return Err(Error::Validation(format!("test item `{id}` leaked into induction")));
        }
    }
    Ok(())
}

/// Random-vector sense-match accuracy at each k.
pub fn run_baseline(bundle: &ModelBundle, items: &[ProbeItem], lexicons: &Lexicons, cfg: &RunConfig) -> Result<Vec<MetricRow>> {
    cfg.validate_for(bundle)?;
    check_nonempty(items, "baseline")?;
    let pool = cfg.pool()?;
    let rows = pool.install(|| {
        cfg.ks
            .par_iter()
            .map(|&k| random_baseline(bundle, items, lexicons, cfg.random_draws, k, cfg.seed))
            .collect::<Result<Vec<_>>>()
    })?;
    write_metrics(cfg.path("baseline.csv"), &rows)?;
    Ok(rows)
}

fn series_by_k(rows: &[MetricRow], prefix: &str) -> Vec<Series> {
    let mut by_k: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        if let Some(v) = r.group.strip_prefix(prefix).and_then(|v| v.parse::<f64>().ok()) {
            by_k.entry(r.k).or_default().push((v, r.accuracy));
        }
    }
    by_k.into_iter()
        .map(|(k, mut points)| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series {
                name: format!("@{k}"),
                points,
            }
        })
        .collect()
}

/// Renders SVGs for whichever report tables exist in `dir`.
pub fn emit_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let eps = dir.join("perturb_eps.csv");
    if eps.exists() {
        let rows = report::read_metrics(&eps)?;
        let svg = plot::line_chart("Sense match vs. epsilon", "epsilon (cosine distance)", "accuracy", &series_by_k(&rows, "eps="));
        let p = dir.join("perturb.svg");
        write_text(&p, &svg)?;
        written.push(p);
    }
    let bins = dir.join("perturb_bins.csv");
    if bins.exists() {
        let rows = report::read_metrics(&bins)?;
        let k = rows.iter().map(|r| r.k).min().unwrap_or(1);
        let bars: Vec<(String, f64)> = EPSILON_BINS
            .iter()
            .map(|(_, _, label)| {
                let acc = rows.iter().find(|r| r.k == k && r.group == *label).map(|r| r.accuracy).unwrap_or(0.0);
                (label.to_string(), acc)
            })
            .collect();
        let p = dir.join("perturb_bins.svg");
        write_text(&p, &plot::bar_chart(&format!("Sense match @{k} by epsilon interval"), "epsilon interval", "accuracy", &bars))?;
        written.push(p);
    }
    let interp = dir.join("interpolate_summary.csv");
    if interp.exists() {
        let rows: Vec<InterpolationSummary> = report::read_csv(&interp)?;
        let k = rows.iter().map(|r| r.k).min().unwrap_or(1);
        let pick = |f: fn(&InterpolationSummary) -> f64| -> Vec<(f64, f64)> {
            rows.iter().filter(|r| r.k == k).map(|r| (r.alpha, f(r))).collect()
        };
        let layers = vec![
            Series {
                name: "sense A".into(),
                points: pick(|r| r.a),
            },
            Series {
                name: "sense B".into(),
                points: pick(|r| r.b),
            },
            Series {
                name: "neither".into(),
                points: pick(|r| r.neither),
            },
        ];
        let p = dir.join("interpolate.svg");
        write_text(&p, &plot::stacked_chart(&format!("Top-{k} predictions along the A to B segment"), "alpha", &layers))?;
        written.push(p);
    }
    Ok(written)
}

/// Group label used in per-ε tables for a given ε.
pub fn epsilon_group(epsilon: f64) -> String {
    format!("eps={}", fmt_param(epsilon))
}

/// Encoder shape for a toy run; the vocabulary size follows from the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyModelSpec {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
}

impl Default for ToyModelSpec {
    fn default() -> Self {
        let c = ModelConfig::toy(NUM_SPECIAL + 1);
        Self {
            num_layers: c.num_layers,
            hidden_dim: c.hidden_dim,
            num_heads: c.num_heads,
            ffn_dim: c.ffn_dim,
            max_positions: c.max_positions,
        }
    }
}

/// Everything needed to regenerate a toy corpus and train its model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToySetup {
    pub corpus: ToyCorpusSpec,
    pub model: ToyModelSpec,
    pub train: TrainConfig,
}

impl ToySetup {
    pub fn model_config(&self) -> ModelConfig {
        let mut c = ModelConfig::toy(self.corpus.words().len() + NUM_SPECIAL);
        c.num_layers = self.model.num_layers;
        c.hidden_dim = self.model.hidden_dim;
        c.num_heads = self.model.num_heads;
        c.ffn_dim = self.model.ffn_dim;
        c.max_positions = self.model.max_positions;
        c
    }

    /// Generates the corpus and trains the model with `seed`.
    pub fn build(&self, seed: u64) -> Result<(ToyCorpus, ModelBundle, TrainReport)> {
        let toy = gen_toy(&ToyCorpusSpec {
            seed,
            ..self.corpus.clone()
        })?;
        let (bundle, report) = train_toy(&toy.sentences, &self.model_config(), &self.train, seed)?;
        Ok((toy, bundle, report))
    }
}

/// File names used by [`write_toy`].
pub const TOY_FILES: [&str; 8] = [
    "model.pwar",
    "vocab.txt",
    "basic.jsonl",
    "minimal_pairs.jsonl",
    "generalization.jsonl",
    "lexicons.json",
    "corpus.txt",
    "train_report.json",
];

/// Saves a trained toy run as model archive, vocabulary, one item file per
/// portion, lexicons, corpus and the training report.
pub fn write_toy(dir: &Path, toy: &ToyCorpus, bundle: &ModelBundle, report: &TrainReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    bundle.save(dir.join(TOY_FILES[0]), dir.join(TOY_FILES[1]))?;
    for (portion, name) in [
        (Portion::Basic, TOY_FILES[2]),
        (Portion::MinimalPairs, TOY_FILES[3]),
        (Portion::Generalization, TOY_FILES[4]),
    ] {
        let items: Vec<ProbeItem> = toy.items.iter().filter(|i| i.portion == portion).cloned().collect();
        write_items(dir.join(name), &items)?;
    }
    write_text(dir.join(TOY_FILES[5]), &toy.lexicons.to_json())?;
    let corpus: String = toy.sentences.iter().map(|s| s.join(" ") + "\n").collect();
    write_text(dir.join(TOY_FILES[6]), &corpus)?;
    write_text(dir.join(TOY_FILES[7]), &serde_json::to_string_pretty(report)?)
}
