//! Pseudoword induction: gradient descent over one input-embedding row.
//!
//! For a sentence `s` with focus token `t`, the target `x_t` is the hidden
//! state of `t` at a chosen layer. Induction searches for a vector `z` that,
//! fed in place of `t`'s token embedding, reproduces `x_t`:
//!
//! ```text
//! z* = argmin_z || h(s with z at t) − x_t ||²
//! ```
//!
//! The aggregate variant shares one `z` across several sentences of the same
//! sense and minimizes the mean of their losses.

use std::collections::BTreeMap;

use ndarray::{Array1, ArrayView1};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::ProbeItem;
use crate::error::{Error, Result};
use crate::model::{EncodedItem, ModelBundle};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Gaussian with the mean and standard deviation of the embedding table.
    Gaussian,
    /// The focus token's own static embedding `z_t`.
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InductionConfig {
    pub num_inits: usize,
    pub init: InitMode,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub max_steps: usize,
    /// Stop once the loss improved by less than `stop_tolerance` (relative)
    /// over the last `stop_window` steps.
    pub stop_window: usize,
    pub stop_tolerance: f64,
    pub decode_check_k: usize,
    /// Turn a failed decode check into an error instead of a recorded rank.
    pub strict_decode: bool,
    /// Hidden layer holding the target; `None` means the final encoder layer.
    pub layer: Option<usize>,
    pub seed: u64,
}

impl Default for InductionConfig {
    fn default() -> Self {
        Self {
            num_inits: 5,
            init: InitMode::Gaussian,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            max_steps: 2000,
            stop_window: 50,
            stop_tolerance: 1e-6,
            decode_check_k: 1,
            strict_decode: false,
            layer: None,
            seed: 0,
        }
    }
}

impl InductionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_inits == 0 {
            return Err(Error::Config("num_inits must be at least 1".into()));
        }
        if self.stop_window == 0 || self.decode_check_k == 0 {
            return Err(Error::Config("stop_window and decode_check_k must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn resolve_layer(&self, bundle: &ModelBundle) -> Result<usize> {
        let layer = self.layer.unwrap_or(bundle.num_layers());
        bundle.check_layer(layer)?;
        Ok(layer)
    }
}

/// An induced input-space vector and how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pseudoword {
    pub vector: Vec<f32>,
    pub source_items: Vec<String>,
    pub focus_word: String,
    pub sense_id: String,
    pub layer: usize,
    /// Loss of the returned vector (the minimum over restarts).
    pub final_loss: f64,
    /// Loss at the initial point of the winning restart.
    pub initial_loss: f64,
    pub init_losses: Vec<f64>,
    pub winning_init: usize,
    /// Worst rank of the focus token over the source sentences, with the head
    /// applied at the unmasked focus position.
    pub decode_rank: usize,
    pub steps_used: usize,
}

impl Pseudoword {
    pub fn view(&self) -> ArrayView1<'_, f32> {
        ArrayView1::from(&self.vector[..])
    }

    pub fn decode_passed(&self, k: usize) -> bool {
        self.decode_rank <= k
    }
}

/// One optimization problem: a set of sentences with their targets.
struct Problem<'a> {
    bundle: &'a ModelBundle,
    encoded: Vec<EncodedItem>,
    targets: Vec<Array1<f32>>,
    layer: usize,
}

impl Problem<'_> {
    /// Mean loss over sentences and its gradient.
    fn eval(&self, z: &Array1<f32>) -> Result<(f64, Array1<f32>)> {
        let n = self.encoded.len();
        if n == 1 {
            return self.bundle.loss_and_gradient(&self.encoded[0], z.view(), &self.targets[0], self.layer);
        }
        let mut loss = 0.0;
        let mut grad = Array1::<f64>::zeros(z.len());
        for (enc, t) in self.encoded.iter().zip(&self.targets) {
            let (l, g) = self.bundle.loss_and_gradient(enc, z.view(), t, self.layer)?;
            loss += l;
            grad.zip_mut_with(&g, |a, &b| *a += b as f64);
        }
        let inv = 1.0 / n as f64;
        Ok((loss * inv, grad.mapv(|v| (v * inv) as f32)))
    }
}

struct RunResult {
    z: Array1<f32>,
    loss: f64,
    initial_loss: f64,
    steps: usize,
}

/// Adam on a single vector, keeping the best point seen. Evaluates the loss
/// at the initial point and after every update, so `max_steps = 0` returns
/// the initial point.
fn optimize(problem: &Problem, z0: Array1<f32>, cfg: &InductionConfig) -> Result<RunResult> {
    let d = z0.len();
    let mut z = z0;
    let mut m = vec![0.0f64; d];
    let mut v = vec![0.0f64; d];
    let mut history: Vec<f64> = Vec::with_capacity(cfg.max_steps.min(4096) + 1);
    let mut best: Option<(f64, Array1<f32>)> = None;
    let mut step = 0;
    loop {
        let (loss, grad) = problem.eval(&z)?;
        if !loss.is_finite() {
            break;
        }
        if best.as_ref().is_none_or(|(b, _)| loss < *b) {
            best = Some((loss, z.clone()));
        }
        history.push(loss);
        if step >= cfg.max_steps || loss == 0.0 {
            break;
        }
        if history.len() > cfg.stop_window {
            let old = history[history.len() - 1 - cfg.stop_window];
            if (old - loss) / old.abs().max(f64::MIN_POSITIVE) < cfg.stop_tolerance {
                break;
            }
        }
        step += 1;
        let t = step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..d {
            let g = grad[i] as f64;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let upd = cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.adam_epsilon);
            z[i] = (z[i] as f64 - upd) as f32;
        }
    }
    let initial_loss = history.first().copied().unwrap_or(f64::NAN);
    match best {
        Some((loss, z)) => Ok(RunResult {
            z,
            loss,
            initial_loss,
            steps: step,
        }),
        None => Ok(RunResult {
            z,
            loss: f64::NAN,
            initial_loss,
            steps: step,
        }),
    }
}

fn initial_point(bundle: &ModelBundle, focus_id: u32, cfg: &InductionConfig, key: &str, restart: usize) -> Array1<f32> {
    match cfg.init {
        InitMode::Static => bundle.static_embedding(focus_id),
        InitMode::Gaussian => {
            let (mean, std) = bundle.embedding_stats();
            let normal = Normal::new(mean, std.max(f64::MIN_POSITIVE)).expect("finite statistics");
            let mut r = rng::stream(cfg.seed, "induce-init", key, restart as u64);
            (0..bundle.config().hidden_dim).map(|_| normal.sample(&mut r) as f32).collect()
        }
    }
}

/// Solves Eq. 1 for one item (or Eq. 2 when given several).
fn solve(bundle: &ModelBundle, items: &[&ProbeItem], cfg: &InductionConfig) -> Result<Pseudoword> {
    cfg.validate()?;
    let layer = cfg.resolve_layer(bundle)?;
    let encoded = items.iter().map(|it| bundle.encode_item(it)).collect::<Result<Vec<_>>>()?;
    let targets = encoded
        .iter()
        .map(|e| bundle.hidden_at_focus(e, None, layer))
        .collect::<Result<Vec<_>>>()?;
    let key = items.iter().map(|i| i.id.as_str()).collect::<Vec<_>>().join("+");
    let problem = Problem {
        bundle,
        encoded,
        targets,
        layer,
    };
    let focus_id = problem.encoded[0].focus_id();

    let mut runs = Vec::with_capacity(cfg.num_inits);
    for r in 0..cfg.num_inits {
        let z0 = initial_point(bundle, focus_id, cfg, &key, r);
        runs.push(optimize(&problem, z0, cfg)?);
    }
    let init_losses: Vec<f64> = runs.iter().map(|r| r.loss).collect();
    let winner = (0..runs.len())
        .filter(|&i| runs[i].loss.is_finite())
        .min_by(|&a, &b| runs[a].loss.total_cmp(&runs[b].loss).then(a.cmp(&b)))
        .ok_or_else(|| Error::Induction {
            items: key.clone(),
            reason: format!("every restart diverged; losses {init_losses:?}"),
        })?;
    let run = &runs[winner];
    let mut decode_rank = 0;
    for enc in &problem.encoded {
        decode_rank = decode_rank.max(bundle.decode_rank(enc, run.z.view())?);
    }
    if cfg.strict_decode && decode_rank > cfg.decode_check_k {
        return Err(Error::Decode {
            item: key,
            rank: decode_rank,
            k: cfg.decode_check_k,
        });
    }
    Ok(Pseudoword {
        vector: run.z.to_vec(),
        source_items: items.iter().map(|i| i.id.clone()).collect(),
        focus_word: items[0].focus_word.clone(),
        sense_id: items[0].sense_id.clone(),
        layer,
        final_loss: run.loss,
        initial_loss: run.initial_loss,
        init_losses,
        winning_init: winner,
        decode_rank,
        steps_used: run.steps,
    })
}

/// Induces a pseudoword from a single sentence.
pub fn induce(bundle: &ModelBundle, item: &ProbeItem, cfg: &InductionConfig) -> Result<Pseudoword> {
    solve(bundle, &[item], cfg)
}

/// Induces one pseudoword shared by several sentences of the same focus word
/// and sense. Items are deduplicated by id and ordered by id, so the result
/// does not depend on input order, and a single item reproduces [`induce`].
pub fn induce_aggregate(bundle: &ModelBundle, items: &[ProbeItem], cfg: &InductionConfig) -> Result<Pseudoword> {
    let unique: BTreeMap<&str, &ProbeItem> = items.iter().map(|i| (i.id.as_str(), i)).collect();
    let items: Vec<&ProbeItem> = unique.into_values().collect();
    let first = items
        .first()
        .ok_or_else(|| Error::Validation("aggregate induction needs at least one item".into()))?;
    if let Some(bad) = items.iter().find(|i| i.sense_id != first.sense_id || i.focus_word != first.focus_word) {
        return Err(Error::Validation(format!(
            "aggregate over mixed senses: `{}` ({}/{}) vs `{}` ({}/{})",
            first.id, first.focus_word, first.sense_id, bad.id, bad.focus_word, bad.sense_id
        )));
    }
    solve(bundle, &items, cfg)
}

/// Arithmetic mean of independently induced vectors.
pub fn posthoc_average(pseudowords: &[Pseudoword]) -> Result<Vec<f32>> {
    let first = pseudowords
        .first()
        .ok_or_else(|| Error::Validation("cannot average an empty list of pseudowords".into()))?;
    let d = first.vector.len();
    if pseudowords.iter().any(|p| p.vector.len() != d) {
        return Err(Error::Validation("pseudowords differ in dimensionality".into()));
    }
    let mut sum = vec![0.0f64; d];
    for p in pseudowords {
        for (s, v) in sum.iter_mut().zip(&p.vector) {
            *s += *v as f64;
        }
    }
    let n = pseudowords.len() as f64;
    Ok(sum.into_iter().map(|s| (s / n) as f32).collect())
}

/// Rank of the focus token when `z` is fed at the focus position of the
/// unmasked sentence and the head is applied there; passing means rank ≤ k.
pub fn decode_check(bundle: &ModelBundle, item: &ProbeItem, z: ArrayView1<f32>) -> Result<usize> {
    let enc = bundle.encode_item(item)?;
    bundle.decode_rank(&enc, z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pw(v: Vec<f32>) -> Pseudoword {
        Pseudoword {
            vector: v,
            source_items: vec![],
            focus_word: "x".into(),
            sense_id: "s".into(),
            layer: 0,
            final_loss: 0.0,
            initial_loss: 0.0,
            init_losses: vec![0.0],
            winning_init: 0,
            decode_rank: 1,
            steps_used: 0,
        }
    }

    #[test]
    fn posthoc_average_identities() {
        let v = vec![0.1f32, -2.5, 3.75, 1e-7];
        assert_eq!(posthoc_average(&[pw(v.clone())]).unwrap(), v);
        let neg: Vec<f32> = v.iter().map(|x| -x).collect();
        assert!(posthoc_average(&[pw(v.clone()), pw(neg)]).unwrap().iter().all(|&x| x == 0.0));
        let copies: Vec<Pseudoword> = (0..7).map(|_| pw(v.clone())).collect();
        assert_eq!(posthoc_average(&copies).unwrap(), v);
        assert!(posthoc_average(&[]).is_err());
    }

    #[test]
    fn config_rejects_zero_inits() {
        let cfg = InductionConfig {
            num_inits: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
