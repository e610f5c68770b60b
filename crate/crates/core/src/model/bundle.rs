use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};

use super::encoder::{self, gather_rows, head_forward, reconstruction_loss};
use super::ops::softmax;
use super::weights::Weights;
use super::{ModelConfig, Real};
use crate::archive::TensorArchive;
use crate::dataset::ProbeItem;
use crate::error::{Error, Result};
use crate::eval::Prediction;
use crate::tokenizer::{TokenSequence, Tokenizer, TokenizerMode, Vocabulary, CLS_ID, MASK_ID, PAD_ID, SEP_ID};

/// Hidden states and MLM logits at the requested positions.
#[derive(Debug, Clone)]
pub struct ForwardResult<F> {
    /// `num_layers + 1` matrices, one row per requested position; entry 0 is
    /// the embedding-layer output.
    pub hidden: Vec<Array2<F>>,
    /// One row of `vocab_size` logits per requested position.
    pub logits: Array2<F>,
}

impl<F: Real> ForwardResult<F> {
    pub fn probabilities(&self, row: usize) -> Vec<f64> {
        softmax(self.logits.row(row).as_slice().unwrap())
    }
}

/// A probe item mapped to token ids, with the focus and cue words resolved to
/// single token positions (framing included).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedItem {
    pub item_id: String,
    pub ids: Vec<u32>,
    pub focus: usize,
    pub cue: usize,
}

impl EncodedItem {
    pub fn focus_id(&self) -> u32 {
        self.ids[self.focus]
    }

    pub fn cue_id(&self) -> u32 {
        self.ids[self.cue]
    }

    /// The ids with the cue replaced by `[MASK]`.
    pub fn masked_ids(&self) -> Vec<u32> {
        let mut ids = self.ids.clone();
        ids[self.cue] = MASK_ID;
        ids
    }
}

/// An immutable loaded model: configuration, weights, vocabulary and
/// tokenizer. Every method takes `&self`.
#[derive(Debug, Clone)]
pub struct ModelBundle<F = f32> {
    config: ModelConfig,
    weights: Weights<F>,
    vocab: Vocabulary,
    tokenizer: Tokenizer,
}

impl<F: Real> ModelBundle<F> {
    /// Assembles a bundle, checking that weights and vocabulary agree with the config.
    pub fn new(config: ModelConfig, weights: Weights<F>, vocab: Vocabulary, mode: TokenizerMode) -> Result<Self> {
        config.validate()?;
        if vocab.len() != config.vocab_size {
            return Err(Error::Vocabulary(format!(
                "vocabulary has {} tokens, model expects {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let reference = Weights::<F>::zeros(&config);
        let mut expected = Vec::new();
        reference.visit(&mut |name, shape, _| expected.push((name.to_string(), shape.to_vec())));
        let mut i = 0;
        let mut mismatch = None;
        weights.visit(&mut |name, shape, _| {
            if mismatch.is_none() && expected.get(i).is_none_or(|(n, s)| n != name || s != shape) {
                mismatch = Some(Error::schema(name, format!("shape {shape:?} does not match config")));
            }
            i += 1;
        });
        if let Some(e) = mismatch {
            return Err(e);
        }
        if i != expected.len() {
            return Err(Error::Config(format!("expected {} tensors, found {i}", expected.len())));
        }
        Ok(Self {
            config,
            weights,
            vocab,
            tokenizer: Tokenizer::new(mode),
        })
    }

    /// Loads a PWAR archive and a vocabulary file. The config is inferred from
    /// tensor shapes and the tokenizer mode from the vocabulary.
    pub fn load_archive(archive: impl AsRef<Path>, vocab: impl AsRef<Path>) -> Result<Self> {
        let a = TensorArchive::read(archive)?;
        let (config, weights) = Weights::from_archive(&a)?;
        let vocab = Vocabulary::read(vocab)?;
        let mode = vocab.infer_mode();
        Self::new(config, weights, vocab, mode)
    }

    pub fn save(&self, archive: impl AsRef<Path>, vocab: impl AsRef<Path>) -> Result<()> {
        self.weights.to_archive(&self.config).write(archive)?;
        self.vocab.write(vocab)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &Weights<F> {
        &self.weights
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn num_layers(&self) -> usize {
        self.config.num_layers
    }

    /// Same model in another float type.
    pub fn cast<G: Real>(&self) -> ModelBundle<G> {
        ModelBundle {
            config: self.config.clone(),
            weights: self.weights.cast(),
            vocab: self.vocab.clone(),
            tokenizer: self.tokenizer.clone(),
        }
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        let seq = self.tokenizer.tokenize(&self.vocab, text)?;
        self.check_length(seq.len())?;
        Ok(seq)
    }

    fn check_length(&self, len: usize) -> Result<()> {
        if len > self.config.max_positions {
            return Err(Error::Length {
                len,
                max: self.config.max_positions,
            });
        }
        Ok(())
    }

    pub fn check_layer(&self, layer: usize) -> Result<()> {
        if layer > self.config.num_layers {
            return Err(Error::Layer {
                layer,
                num_layers: self.config.num_layers,
            });
        }
        Ok(())
    }

    fn check_override(&self, ids: &[u32], pos: usize, z: &ArrayView1<F>) -> Result<()> {
        if pos >= ids.len() {
            return Err(Error::Position(format!("override position {pos} outside sequence of {}", ids.len())));
        }
        if matches!(ids[pos], CLS_ID | SEP_ID | PAD_ID) {
            return Err(Error::Position(format!("override position {pos} holds a framing token")));
        }
        if z.len() != self.config.hidden_dim {
            return Err(Error::Position(format!(
                "override vector has {} dims, model has {}",
                z.len(),
                self.config.hidden_dim
            )));
        }
        Ok(())
    }

    /// Embedding-layer output for `ids`, with the token row at the override
    /// position replaced before positional and segment rows are added.
    pub fn compose_inputs(&self, ids: &[u32], over: Option<(usize, ArrayView1<F>)>) -> Result<Array2<F>> {
        self.check_length(ids.len())?;
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(Error::Vocabulary(format!("token id {bad} out of range")));
        }
        if let Some((p, z)) = &over {
            self.check_override(ids, *p, z)?;
        }
        Ok(encoder::embed(&self.weights, &self.config, ids, over))
    }

    /// Runs the encoder stack on an input matrix and the MLM head at `positions`.
    pub fn forward(&self, inputs: &Array2<F>, positions: &[usize]) -> Result<ForwardResult<F>> {
        self.check_length(inputs.nrows())?;
        if inputs.ncols() != self.config.hidden_dim {
            return Err(Error::Config(format!("input width {} != hidden_dim", inputs.ncols())));
        }
        if let Some(&p) = positions.iter().find(|&&p| p >= inputs.nrows()) {
            return Err(Error::Position(format!("position {p} outside sequence of {}", inputs.nrows())));
        }
        let hidden = encoder::run_layers(&self.weights, &self.config, inputs.clone(), self.config.num_layers);
        let (logits, _) = head_forward(&self.weights.head, &self.config, gather_rows(hidden.last().unwrap(), positions));
        Ok(ForwardResult {
            hidden: hidden.iter().map(|h| gather_rows(h, positions)).collect(),
            logits,
        })
    }

    /// Maps an item to ids, rejecting focus or cue words that are not exactly one token.
    pub fn encode_item(&self, item: &ProbeItem) -> Result<EncodedItem> {
        item.validate()?;
        let seq = self.tokenizer.tokenize_words(&self.vocab, &item.tokens).map_err(|e| Error::item(&item.id, e.to_string()))?;
        self.check_length(seq.len())?;
        let single = |w: usize, role: &str| -> Result<usize> {
            let span = seq.word_span(w).expect("every word yields a piece");
            if span.len() != 1 {
                return Err(Error::item(
                    &item.id,
                    format!("{role} word `{}` splits into {} pieces", item.tokens[w], span.len()),
                ));
            }
            if seq.ids[span.start] == crate::tokenizer::UNK_ID {
                return Err(Error::item(&item.id, format!("{role} word `{}` is unknown", item.tokens[w])));
            }
            Ok(span.start)
        };
        let focus = single(item.focus_index, "focus")?;
        let cue = single(item.cue_index, "cue")?;
        Ok(EncodedItem {
            item_id: item.id.clone(),
            ids: seq.ids,
            focus,
            cue,
        })
    }

    /// Static input-embedding row of a token (`z_t` for the focus token).
    pub fn static_embedding(&self, id: u32) -> Array1<F> {
        self.weights.embeddings.word.row(id as usize).to_owned()
    }

    /// Mean and standard deviation over all entries of the token-embedding table.
    pub fn embedding_stats(&self) -> (f64, f64) {
        let w = &self.weights.embeddings.word;
        let n = w.len() as f64;
        let mean = w.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / n;
        let var = w.iter().map(|v| (v.to_f64().unwrap() - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    /// Hidden state at the focus position of the unmasked sentence at `layer`,
    /// optionally with the focus row overridden.
    pub fn hidden_at_focus(&self, enc: &EncodedItem, over: Option<ArrayView1<F>>, layer: usize) -> Result<Array1<F>> {
        self.check_layer(layer)?;
        let x0 = self.compose_inputs(&enc.ids, over.map(|z| (enc.focus, z)))?;
        let hidden = encoder::run_layers(&self.weights, &self.config, x0, layer);
        Ok(hidden[layer].row(enc.focus).to_owned())
    }

    /// `x_t`: the focus token's hidden state in the unmodified sentence.
    pub fn contextual_vector(&self, item: &ProbeItem, layer: usize) -> Result<Array1<F>> {
        let enc = self.encode_item(item)?;
        self.hidden_at_focus(&enc, None, layer)
    }

    /// Reconstruction loss `||h_layer(z) − target||²` at the focus position and
    /// its exact gradient with respect to `z`.
    pub fn loss_and_gradient(
        &self,
        enc: &EncodedItem,
        z: ArrayView1<F>,
        target: &Array1<F>,
        layer: usize,
    ) -> Result<(f64, Array1<F>)> {
        self.check_layer(layer)?;
        self.check_length(enc.ids.len())?;
        self.check_override(&enc.ids, enc.focus, &z)?;
        let trace = encoder::forward(&self.weights, &self.config, &enc.ids, Some((enc.focus, z)), layer);
        let (loss, d_top) = reconstruction_loss(trace.hidden.last().unwrap(), enc.focus, target);
        let de = encoder::backward(&self.weights, &self.config, &trace, d_top, None);
        Ok((loss, de.row(enc.focus).to_owned()))
    }

    pub fn input_gradient(&self, item: &ProbeItem, z: ArrayView1<F>, target: &Array1<F>, layer: usize) -> Result<Array1<F>> {
        let enc = self.encode_item(item)?;
        Ok(self.loss_and_gradient(&enc, z, target, layer)?.1)
    }

    /// Logits at the cue position with the cue masked and the focus row optionally overridden.
    pub fn masked_logits(&self, enc: &EncodedItem, over: Option<ArrayView1<F>>) -> Result<Array1<F>> {
        let x0 = self.compose_inputs(&enc.masked_ids(), over.map(|z| (enc.focus, z)))?;
        Ok(self.forward(&x0, &[enc.cue])?.logits.row(0).to_owned())
    }

    /// Top-`k` non-special words at the masked cue slot, by decreasing probability
    /// (ties broken by token id). Probabilities are normalized over the full vocabulary.
    pub fn masked_topk(&self, enc: &EncodedItem, over: Option<ArrayView1<F>>, k: usize) -> Result<Vec<Prediction>> {
        let logits = self.masked_logits(enc, over)?;
        Ok(self.rank_words(logits.as_slice().unwrap(), k))
    }

    pub fn rank_words(&self, logits: &[F], k: usize) -> Vec<Prediction> {
        let probs = softmax(logits);
        let mut order: Vec<usize> = (0..probs.len()).filter(|&i| !Vocabulary::is_special(i as u32)).collect();
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        order
            .into_iter()
            .take(k)
            .map(|i| Prediction {
                word: self.vocab.token(i as u32).to_string(),
                prob: probs[i],
            })
            .collect()
    }

    /// 1-based rank of the focus token under the MLM head applied at the
    /// unmasked focus position with `z` substituted there.
    pub fn decode_rank(&self, enc: &EncodedItem, z: ArrayView1<F>) -> Result<usize> {
        let x0 = self.compose_inputs(&enc.ids, Some((enc.focus, z)))?;
        let logits = self.forward(&x0, &[enc.focus])?.logits;
        let row = logits.row(0);
        let target = row[enc.focus_id() as usize];
        Ok(1 + row.iter().filter(|&&v| v > target).count())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Portion;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn toy_bundle() -> ModelBundle<f64> {
        let vocab = Vocabulary::with_words(["The", "event", "is", "in", "on", "London", "October", "."]).unwrap();
        let cfg = ModelConfig::toy(vocab.len());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let w = Weights::init(&cfg, &mut rng);
        ModelBundle::new(cfg, w, vocab, TokenizerMode::ClosedWhitespace).unwrap()
    }

    fn item() -> ProbeItem {
        let tokens: Vec<String> = "The event is in London .".split(' ').map(String::from).collect();
        ProbeItem {
            id: "t1".into(),
            portion: Portion::Basic,
            focus_word: "in".into(),
            tokens,
            focus_index: 3,
            cue_index: 4,
            sense_id: "in.locative".into(),
            pair_id: None,
            split: None,
            det_index: None,
            pos: None,
        }
    }

    #[test]
    fn override_with_own_row_is_identity() {
        let b = toy_bundle();
        let enc = b.encode_item(&item()).unwrap();
        let zt = b.static_embedding(enc.focus_id());
        let plain = b.compose_inputs(&enc.ids, None).unwrap();
        let over = b.compose_inputs(&enc.ids, Some((enc.focus, zt.view()))).unwrap();
        assert_eq!(plain, over);
    }

    #[test]
    fn override_at_framing_token_is_rejected() {
        let b = toy_bundle();
        let enc = b.encode_item(&item()).unwrap();
        let z = Array1::zeros(32);
        assert!(matches!(b.compose_inputs(&enc.ids, Some((0, z.view()))), Err(Error::Position(_))));
        let last = enc.ids.len() - 1;
        assert!(matches!(b.compose_inputs(&enc.ids, Some((last, z.view()))), Err(Error::Position(_))));
    }

    #[test]
    fn layer_zero_vector_is_composed_row() {
        let b = toy_bundle();
        let it = item();
        let enc = b.encode_item(&it).unwrap();
        let x0 = b.compose_inputs(&enc.ids, None).unwrap();
        assert_eq!(b.contextual_vector(&it, 0).unwrap(), x0.row(enc.focus).to_owned());
        assert!(matches!(b.contextual_vector(&it, 3), Err(Error::Layer { .. })));
    }

    #[test]
    fn forward_shapes_and_normalization() {
        let b = toy_bundle();
        let enc = b.encode_item(&item()).unwrap();
        let x0 = b.compose_inputs(&enc.ids, None).unwrap();
        let r = b.forward(&x0, &[1, 4]).unwrap();
        assert_eq!(r.hidden.len(), 3);
        assert!(r.hidden.iter().all(|h| h.dim() == (2, 32)));
        assert_eq!(r.logits.dim(), (2, b.config().vocab_size));
        assert_abs_diff_eq!(r.probabilities(1).iter().sum::<f64>(), 1.0, epsilon = 1e-5);
    }

    #[test]
    fn exhaustive_topk_covers_non_special_mass() {
        let b = toy_bundle();
        let enc = b.encode_item(&item()).unwrap();
        let k = b.config().vocab_size - crate::tokenizer::NUM_SPECIAL;
        let preds = b.masked_topk(&enc, None, k).unwrap();
        assert_eq!(preds.len(), k);
        let logits = b.masked_logits(&enc, None).unwrap();
        let probs = softmax(logits.as_slice().unwrap());
        let non_special: f64 = probs[crate::tokenizer::NUM_SPECIAL..].iter().sum();
        assert_abs_diff_eq!(preds.iter().map(|p| p.prob).sum::<f64>(), non_special, epsilon = 1e-12);
        assert!(preds.windows(2).all(|w| w[0].prob >= w[1].prob));
    }

    #[test]
    fn decode_rank_is_bounded_by_vocab() {
        let b = toy_bundle();
        let enc = b.encode_item(&item()).unwrap();
        let z = Array1::from_elem(32, 0.3);
        let r = b.decode_rank(&enc, z.view()).unwrap();
        assert!((1..=b.config().vocab_size).contains(&r));
    }
}
