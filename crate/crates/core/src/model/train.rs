//! Masked-LM training for small models on synthetic corpora.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::encoder::{self, gather_rows, head_backward, head_forward, scatter_rows};
use super::ops::softmax;
use super::weights::Weights;
use super::{ModelBundle, ModelConfig};
use crate::error::{Error, Result};
use crate::rng;
use crate::tokenizer::{TokenizerMode, Vocabulary, CLS_ID, MASK_ID, NUM_SPECIAL, SEP_ID};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// Fraction of non-framing positions selected for prediction.
    pub mask_prob: f64,
    /// Of the selected positions: replaced by `[MASK]`, then by a random word;
    /// the rest stay unchanged.
    pub mask_token_prob: f64,
    pub random_token_prob: f64,
    pub eval_every: usize,
    /// Number of evaluations without improvement before stopping.
    pub patience: usize,
    pub min_improvement: f64,
    /// Share of the corpus held out for the plateau criterion. When it would be
    /// empty, the training sentences are evaluated instead.
    pub heldout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_steps: 4000,
            batch_size: 64,
            learning_rate: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            mask_prob: 0.15,
            mask_token_prob: 0.8,
            random_token_prob: 0.1,
            eval_every: 200,
            patience: 4,
            min_improvement: 1e-3,
            heldout_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub final_loss: f64,
    /// Accuracy of predicting each held-out position when it alone is masked.
    pub heldout_accuracy: f64,
    pub heldout_sentences: usize,
    /// True when training stopped on the plateau rule rather than the step cap.
    pub converged: bool,
    pub history: Vec<(usize, f64)>,
    pub weight_checksum: u64,
}

/// Builds a closed vocabulary from the corpus words, padded with
/// `[unused…]` entries up to `vocab_size`.
pub fn corpus_vocabulary(corpus: &[Vec<String>], vocab_size: usize) -> Result<Vocabulary> {
    let mut words: Vec<&str> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for w in corpus.iter().flatten() {
        if seen.insert(w.as_str()) {
            words.push(w);
        }
    }
    if words.len() + NUM_SPECIAL > vocab_size {
        return Err(Error::Vocabulary(format!(
            "corpus has {} distinct words; vocab_size {vocab_size} leaves room for {}",
            words.len(),
            vocab_size.saturating_sub(NUM_SPECIAL)
        )));
    }
    let mut all: Vec<String> = words.into_iter().map(String::from).collect();
    let mut i = 0;
    while all.len() + NUM_SPECIAL < vocab_size {
        all.push(format!("[unused{i}]"));
        i += 1;
    }
    Vocabulary::with_words(all)
}

struct Example {
    input: Vec<u32>,
    positions: Vec<usize>,
    labels: Vec<u32>,
}

fn make_example<R: Rng>(ids: &[u32], tc: &TrainConfig, vocab_size: usize, rng: &mut R) -> Example {
    let inner: Vec<usize> = (1..ids.len() - 1).collect();
    let mut positions: Vec<usize> = inner.iter().copied().filter(|_| rng.random::<f64>() < tc.mask_prob).collect();
    if positions.is_empty() {
        positions.push(inner[rng.random_range(0..inner.len())]);
    }
    let mut input = ids.to_vec();
    for &p in &positions {
        let r: f64 = rng.random();
        if r < tc.mask_token_prob {
            input[p] = MASK_ID;
        } else if r < tc.mask_token_prob + tc.random_token_prob {
            input[p] = rng.random_range(NUM_SPECIAL as u32..vocab_size as u32);
        }
    }
    let labels = positions.iter().map(|&p| ids[p]).collect();
    Example { input, positions, labels }
}

/// Cross-entropy at the selected positions (summed) and parameter gradients
/// scaled by `scale`.
fn example_gradient(w: &Weights<f32>, cfg: &ModelConfig, ex: &Example, scale: f32) -> (f64, Weights<f32>) {
    let mut g = Weights::zeros(cfg);
    let trace = encoder::forward(w, cfg, &ex.input, None, cfg.num_layers);
    let top = trace.hidden.last().unwrap();
    let (logits, cache) = head_forward(&w.head, cfg, gather_rows(top, &ex.positions));
    let mut dlogits = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (r, &label) in ex.labels.iter().enumerate() {
        let p = softmax(logits.row(r).as_slice().unwrap());
        loss -= p[label as usize].max(1e-300).ln();
        let mut row = dlogits.row_mut(r);
        for (j, pj) in p.iter().enumerate() {
            row[j] = *pj as f32 * scale;
        }
        row[label as usize] -= scale;
    }
    let dh = head_backward(&w.head, &cache, &dlogits, Some(&mut g.head));
    let d_top = scatter_rows(&dh, &ex.positions, ex.input.len());
    encoder::backward(w, cfg, &trace, d_top, Some(&mut g));
    (loss, g)
}

/// Fraction of positions predicted correctly when each non-framing position
/// is masked on its own.
pub fn masked_accuracy(w: &Weights<f32>, cfg: &ModelConfig, sentences: &[Vec<u32>]) -> f64 {
    let (hits, total) = sentences
        .par_iter()
        .map(|ids| {
            let mut hits = 0usize;
            for p in 1..ids.len() - 1 {
                let mut input = ids.clone();
                input[p] = MASK_ID;
                let x0 = encoder::embed(w, cfg, &input, None);
                let hidden = encoder::run_layers(w, cfg, x0, cfg.num_layers);
                let (logits, _) = head_forward(&w.head, cfg, gather_rows(hidden.last().unwrap(), &[p]));
                let row = logits.row(0);
                let best = (NUM_SPECIAL..row.len())
                    .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
                    .unwrap();
                hits += (best as u32 == ids[p]) as usize;
            }
            (hits, ids.len() - 2)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    hits as f64 / total.max(1) as f64
}

struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: i32,
}

impl Adam {
    fn new(w: &Weights<f32>) -> Self {
        let shapes: Vec<usize> = w.slices().iter().map(|s| s.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, w: &mut Weights<f32>, g: &Weights<f32>, tc: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (tc.beta1 as f32, tc.beta2 as f32);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr = tc.learning_rate as f32;
        let eps = tc.adam_epsilon as f32;
        let grads = g.slices();
        let mut k = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        w.visit_mut(&mut |_, p| {
            let (gs, m, v) = (grads[k], &mut ms[k], &mut vs[k]);
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * gs[i];
                v[i] = b2 * v[i] + (1.0 - b2) * gs[i] * gs[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
            k += 1;
        });
    }
}

fn add_into(acc: &mut Weights<f32>, g: &Weights<f32>) {
    let src = g.slices();
    let mut k = 0;
    acc.visit_mut(&mut |_, dst| {
        for (d, s) in dst.iter_mut().zip(src[k]) {
            *d += *s;
        }
        k += 1;
    });
}

/// Trains a masked LM from scratch on whitespace-split sentences.
///
/// Every draw comes from streams keyed by `seed`, and per-example gradients
/// are summed in batch order, so the result is bit-identical for a given
/// seed regardless of the thread count. Stopping on the step cap is reported
/// with `converged = false`.
pub fn train_toy(corpus: &[Vec<String>], config: &ModelConfig, tc: &TrainConfig, seed: u64) -> Result<(ModelBundle, TrainReport)> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::Training("empty corpus".into()));
    }
    if tc.batch_size == 0 || tc.eval_every == 0 {
        return Err(Error::Training("batch_size and eval_every must be positive".into()));
    }
    let vocab = corpus_vocabulary(corpus, config.vocab_size)?;
    let encoded: Vec<Vec<u32>> = corpus
        .iter()
        .map(|s| {
            let mut ids = vec![CLS_ID];
            ids.extend(s.iter().map(|w| vocab.id(w).expect("vocabulary built from corpus")));
            ids.push(SEP_ID);
            ids
        })
        .collect();
    if let Some(long) = encoded.iter().find(|s| s.len() > config.max_positions) {
        return Err(Error::Length {
            len: long.len(),
            max: config.max_positions,
        });
    }
    if let Some(i) = encoded.iter().position(|s| s.len() < 3) {
        return Err(Error::Training(format!("sentence {i} is empty")));
    }

    let n_held = ((corpus.len() as f64) * tc.heldout_fraction).floor() as usize;
    let (train, heldout): (&[Vec<u32>], &[Vec<u32>]) = if n_held == 0 || n_held >= corpus.len() {
        (&encoded, &encoded)
    } else {
        let (a, b) = encoded.split_at(corpus.len() - n_held);
        (a, b)
    };

    let mut weights = Weights::<f32>::init(config, &mut rng::stream(seed, "train-init", "", 0));
    let mut adam = Adam::new(&weights);
    let mut batch_rng = rng::stream(seed, "train-batch", "", 0);
    let mut history = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut converged = false;
    let mut last_loss = f64::NAN;
    let mut steps = 0;

    while steps < tc.max_steps {
        let examples: Vec<Example> = (0..tc.batch_size)
            .map(|_| {
                let ids = &train[batch_rng.random_range(0..train.len())];
                make_example(ids, tc, config.vocab_size, &mut batch_rng)
            })
            .collect();
        let n_targets: usize = examples.iter().map(|e| e.positions.len()).sum();
        let scale = 1.0 / n_targets as f32;
        let results: Vec<(f64, Weights<f32>)> = examples
            .par_iter()
            .map(|ex| example_gradient(&weights, config, ex, scale))
            .collect();
        let mut grad = Weights::zeros(config);
        let mut loss = 0.0;
        for (l, g) in &results {
            loss += l;
            add_into(&mut grad, g);
        }
        if config.head_tied {
            grad.embeddings.word += &grad.head.decoder.weight;
        }
        adam.step(&mut weights, &grad, tc);
        if config.head_tied {
            weights.head.decoder.weight.assign(&weights.embeddings.word);
        }
        last_loss = loss / n_targets as f64;
        if !last_loss.is_finite() {
            return Err(Error::Training(format!("loss diverged at step {steps}")));
        }
        steps += 1;

        if steps % tc.eval_every == 0 {
            let acc = masked_accuracy(&weights, config, heldout);
            history.push((steps, acc));
            if acc > best + tc.min_improvement {
                best = acc;
                stale = 0;
            } else {
                stale += 1;
                if stale >= tc.patience {
                    converged = true;
                    break;
                }
            }
        }
    }

    let heldout_accuracy = masked_accuracy(&weights, config, heldout);
    let report = TrainReport {
        steps,
        final_loss: last_loss,
        heldout_accuracy,
        heldout_sentences: heldout.len(),
        converged,
        history,
        weight_checksum: weights.checksum(),
    };
    let bundle = ModelBundle::new(config.clone(), weights, vocab, TokenizerMode::ClosedWhitespace)?;
    Ok((bundle, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(s: &[&str]) -> Vec<Vec<String>> {
        s.iter().map(|x| x.split(' ').map(String::from).collect()).collect()
    }

    #[test]
    fn memorizes_a_single_sentence() {
        let c = corpus(&["the cat sat on the mat ."]);
        let cfg = ModelConfig::toy(16);
        let tc = TrainConfig {
            max_steps: 400,
            batch_size: 8,
            eval_every: 50,
            ..TrainConfig::default()
        };
        let (_, report) = train_toy(&c, &cfg, &tc, 1).unwrap();
        assert_eq!(report.heldout_accuracy, 1.0, "{report:?}");
    }

    #[test]
    fn same_seed_gives_identical_weights() {
        let c = corpus(&["a b c .", "a d c .", "e b f ."]);
        let cfg = ModelConfig::toy(12);
        let tc = TrainConfig {
            max_steps: 20,
            batch_size: 4,
            eval_every: 10,
            ..TrainConfig::default()
        };
        let (b1, r1) = train_toy(&c, &cfg, &tc, 5).unwrap();
        let (b2, r2) = train_toy(&c, &cfg, &tc, 5).unwrap();
        assert_eq!(r1.weight_checksum, r2.weight_checksum);
        assert_eq!(b1.weights(), b2.weights());
        let (_, r3) = train_toy(&c, &cfg, &tc, 6).unwrap();
        assert_ne!(r1.weight_checksum, r3.weight_checksum);
    }

    #[test]
    fn vocabulary_overflow_is_an_error() {
        let c = corpus(&["a b c d e f g ."]);
        let cfg = ModelConfig::toy(10);
        assert!(matches!(
            train_toy(&c, &cfg, &TrainConfig::default(), 0),
            Err(Error::Vocabulary(_))
        ));
    }
}
