//! Parameter storage, canonical tensor names, and archive conversion.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, Real};
use crate::archive::TensorArchive;
use crate::error::{Error, Result};

pub const WORD_EMBEDDINGS: &str = "embeddings.word_embeddings.weight";
pub const POSITION_EMBEDDINGS: &str = "embeddings.position_embeddings.weight";
pub const TOKEN_TYPE_EMBEDDINGS: &str = "embeddings.token_type_embeddings.weight";
pub const EMBEDDING_NORM: &str = "embeddings.layer_norm";
pub const HEAD_TRANSFORM: &str = "mlm_head.transform";
pub const HEAD_NORM: &str = "mlm_head.layer_norm";
pub const HEAD_DECODER: &str = "mlm_head.decoder";
/// Optional one-element tensors carrying settings that shapes cannot encode.
pub const META_NUM_HEADS: &str = "config.num_heads";
pub const META_LAYER_NORM_EPS: &str = "config.layer_norm_eps";

pub fn layer_prefix(i: usize) -> String {
    format!("encoder.layer.{i}")
}

/// `y = x Wᵀ + b` with `weight` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings<F> {
    pub word: Array2<F>,
    pub position: Array2<F>,
    pub token_type: Array2<F>,
    pub norm: LayerNormParams<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<F> {
    pub query: Linear<F>,
    pub key: Linear<F>,
    pub value: Linear<F>,
    pub attn_out: Linear<F>,
    pub attn_norm: LayerNormParams<F>,
    pub intermediate: Linear<F>,
    pub output: Linear<F>,
    pub out_norm: LayerNormParams<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlmHead<F> {
    pub transform: Linear<F>,
    pub norm: LayerNormParams<F>,
    pub decoder: Linear<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights<F> {
    pub embeddings: Embeddings<F>,
    pub layers: Vec<EncoderLayer<F>>,
    pub head: MlmHead<F>,
}

fn zeros_linear<F: Real>(out: usize, inp: usize) -> Linear<F> {
    Linear {
        weight: Array2::zeros((out, inp)),
        bias: Array1::zeros(out),
    }
}

fn unit_norm<F: Real>(d: usize) -> LayerNormParams<F> {
    LayerNormParams {
        gamma: Array1::ones(d),
        beta: Array1::zeros(d),
    }
}

impl<F: Real> Weights<F> {
    /// All-zero parameters with unit layer-norm gains; used for gradient buffers.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.hidden_dim;
        let mut w = Self {
            embeddings: Embeddings {
                word: Array2::zeros((cfg.vocab_size, d)),
                position: Array2::zeros((cfg.max_positions, d)),
                token_type: Array2::zeros((cfg.type_vocab_size, d)),
                norm: unit_norm(d),
            },
            layers: (0..cfg.num_layers)
                .map(|_| EncoderLayer {
                    query: zeros_linear(d, d),
                    key: zeros_linear(d, d),
                    value: zeros_linear(d, d),
                    attn_out: zeros_linear(d, d),
                    attn_norm: unit_norm(d),
                    intermediate: zeros_linear(cfg.ffn_dim, d),
                    output: zeros_linear(d, cfg.ffn_dim),
                    out_norm: unit_norm(d),
                })
                .collect(),
            head: MlmHead {
                transform: zeros_linear(d, d),
                norm: unit_norm(d),
                decoder: zeros_linear(cfg.vocab_size, d),
            },
        };
        w.fill_zero();
        w
    }

    /// BERT-style initialization: N(0, 0.02) matrices, zero biases, unit gains.
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let normal = Normal::new(0.0f64, 0.02).expect("valid std");
        let mut w = Self::zeros(cfg);
        w.visit_mut(&mut |name, data| {
            let is_norm = name.contains("layer_norm");
            let is_bias = name.ends_with(".bias");
            for v in data.iter_mut() {
                *v = if is_norm && name.ends_with(".weight") {
                    F::one()
                } else if is_norm || is_bias {
                    F::zero()
                } else {
                    F::from_f64(normal.sample(rng)).unwrap()
                };
            }
        });
        if cfg.head_tied {
            w.head.decoder.weight.assign(&w.embeddings.word);
        }
        w
    }

    fn fill_zero(&mut self) {
        self.visit_mut(&mut |_, data| data.iter_mut().for_each(|v| *v = F::zero()));
    }

    /// Visits every parameter tensor in canonical order.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &[usize], &'a [F])) {
        let e = &self.embeddings;
        f(WORD_EMBEDDINGS, e.word.shape(), e.word.as_slice().unwrap());
        f(POSITION_EMBEDDINGS, e.position.shape(), e.position.as_slice().unwrap());
        f(TOKEN_TYPE_EMBEDDINGS, e.token_type.shape(), e.token_type.as_slice().unwrap());
        visit_norm(EMBEDDING_NORM, &e.norm, f);
        for (i, l) in self.layers.iter().enumerate() {
            let p = layer_prefix(i);
            visit_linear(&format!("{p}.attention.query"), &l.query, f);
            visit_linear(&format!("{p}.attention.key"), &l.key, f);
            visit_linear(&format!("{p}.attention.value"), &l.value, f);
            visit_linear(&format!("{p}.attention.output"), &l.attn_out, f);
            visit_norm(&format!("{p}.attention.layer_norm"), &l.attn_norm, f);
            visit_linear(&format!("{p}.intermediate"), &l.intermediate, f);
            visit_linear(&format!("{p}.output"), &l.output, f);
            visit_norm(&format!("{p}.output.layer_norm"), &l.out_norm, f);
        }
        visit_linear(HEAD_TRANSFORM, &self.head.transform, f);
        visit_norm(HEAD_NORM, &self.head.norm, f);
        visit_linear(HEAD_DECODER, &self.head.decoder, f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [F])) {
        let e = &mut self.embeddings;
        f(WORD_EMBEDDINGS, e.word.as_slice_mut().unwrap());
        f(POSITION_EMBEDDINGS, e.position.as_slice_mut().unwrap());
        f(TOKEN_TYPE_EMBEDDINGS, e.token_type.as_slice_mut().unwrap());
        visit_norm_mut(EMBEDDING_NORM, &mut e.norm, f);
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = layer_prefix(i);
            visit_linear_mut(&format!("{p}.attention.query"), &mut l.query, f);
            visit_linear_mut(&format!("{p}.attention.key"), &mut l.key, f);
            visit_linear_mut(&format!("{p}.attention.value"), &mut l.value, f);
            visit_linear_mut(&format!("{p}.attention.output"), &mut l.attn_out, f);
            visit_norm_mut(&format!("{p}.attention.layer_norm"), &mut l.attn_norm, f);
            visit_linear_mut(&format!("{p}.intermediate"), &mut l.intermediate, f);
            visit_linear_mut(&format!("{p}.output"), &mut l.output, f);
            visit_norm_mut(&format!("{p}.output.layer_norm"), &mut l.out_norm, f);
        }
        visit_linear_mut(HEAD_TRANSFORM, &mut self.head.transform, f);
        visit_norm_mut(HEAD_NORM, &mut self.head.norm, f);
        visit_linear_mut(HEAD_DECODER, &mut self.head.decoder, f);
    }

    /// Flat views of every parameter, in `visit` order.
    pub fn slices(&self) -> Vec<&[F]> {
        let mut out = Vec::new();
        self.visit(&mut |_, _, s| out.push(s));
        out
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Order-sensitive FNV checksum over the raw bits of every parameter.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        self.visit(&mut |_, _, data| {
            for v in data {
                let bits = v.to_f64().unwrap().to_bits();
                h = (h ^ bits).wrapping_mul(0x0000_0100_0000_01b3);
            }
        });
        h
    }

    pub fn cast<G: Real>(&self) -> Weights<G> {
        let conv2 = |a: &Array2<F>| a.mapv(|v| G::from_f64(v.to_f64().unwrap()).unwrap());
        let conv1 = |a: &Array1<F>| a.mapv(|v| G::from_f64(v.to_f64().unwrap()).unwrap());
        let lin = |l: &Linear<F>| Linear {
            weight: conv2(&l.weight),
            bias: conv1(&l.bias),
        };
        let norm = |n: &LayerNormParams<F>| LayerNormParams {
            gamma: conv1(&n.gamma),
            beta: conv1(&n.beta),
        };
        Weights {
            embeddings: Embeddings {
                word: conv2(&self.embeddings.word),
                position: conv2(&self.embeddings.position),
                token_type: conv2(&self.embeddings.token_type),
                norm: norm(&self.embeddings.norm),
            },
            layers: self
                .layers
                .iter()
                .map(|l| EncoderLayer {
                    query: lin(&l.query),
                    key: lin(&l.key),
                    value: lin(&l.value),
                    attn_out: lin(&l.attn_out),
                    attn_norm: norm(&l.attn_norm),
                    intermediate: lin(&l.intermediate),
                    output: lin(&l.output),
                    out_norm: norm(&l.out_norm),
                })
                .collect(),
            head: MlmHead {
                transform: lin(&self.head.transform),
                norm: norm(&self.head.norm),
                decoder: lin(&self.head.decoder),
            },
        }
    }

    /// Every parameter under its canonical name, plus the settings tensors.
    /// The decoder is written explicitly even when tied.
    pub fn to_archive(&self, cfg: &ModelConfig) -> TensorArchive {
        let mut a = TensorArchive::new();
        self.visit(&mut |name, shape, data| {
            let data = data.iter().map(|v| v.to_f32().unwrap()).collect();
            a.insert(name, shape.to_vec(), data).expect("canonical names are unique");
        });
        a.insert(META_NUM_HEADS, vec![1], vec![cfg.num_heads as f32]).unwrap();
        a.insert(META_LAYER_NORM_EPS, vec![1], vec![cfg.layernorm_epsilon as f32]).unwrap();
        a
    }

    /// Infers the config from tensor shapes and copies all parameters out of
    /// the archive. Missing or mis-shaped tensors are named in the error.
    pub fn from_archive(archive: &TensorArchive) -> Result<(ModelConfig, Self)> {
        let word = archive
            .get(WORD_EMBEDDINGS)
            .ok_or_else(|| Error::schema(WORD_EMBEDDINGS, "missing"))?;
        if word.dims.len() != 2 {
            return Err(Error::schema(WORD_EMBEDDINGS, format!("expected rank 2, got {:?}", word.dims)));
        }
        let (vocab_size, hidden_dim) = (word.dims[0], word.dims[1]);
        let rows = |name: &str| -> Result<usize> {
            let t = archive.get(name).ok_or_else(|| Error::schema(name, "missing"))?;
            match t.dims.as_slice() {
                [r, c] if *c == hidden_dim => Ok(*r),
                other => Err(Error::schema(name, format!("expected [_, {hidden_dim}], got {other:?}"))),
            }
        };
        let max_positions = rows(POSITION_EMBEDDINGS)?;
        let type_vocab_size = rows(TOKEN_TYPE_EMBEDDINGS)?;
        let mut num_layers = 0;
        while archive
            .get(&format!("{}.attention.query.weight", layer_prefix(num_layers)))
            .is_some()
        {
            num_layers += 1;
        }
        if num_layers == 0 {
            return Err(Error::schema(
                format!("{}.attention.query.weight", layer_prefix(0)),
                "missing",
            ));
        }
        let ffn_dim = rows(&format!("{}.intermediate.weight", layer_prefix(0)))?;
        let num_heads = match archive.get(META_NUM_HEADS) {
            Some(t) if t.data.len() == 1 && t.data[0] >= 1.0 => t.data[0] as usize,
            Some(_) => return Err(Error::schema(META_NUM_HEADS, "expected one positive value")),
            None if hidden_dim % 64 == 0 => hidden_dim / 64,
            None => 1,
        };
        let layernorm_epsilon = match archive.get(META_LAYER_NORM_EPS) {
            // shortest decimal form, so 1e-12 stored as f32 reads back as 1e-12
            Some(t) if t.data.len() == 1 && t.data[0] > 0.0 => t.data[0].to_string().parse().unwrap(),
            Some(_) => return Err(Error::schema(META_LAYER_NORM_EPS, "expected one positive value")),
            None => 1e-12,
        };
        let mut cfg = ModelConfig {
            num_layers,
            hidden_dim,
            num_heads,
            ffn_dim,
            vocab_size,
            max_positions,
            type_vocab_size,
            layernorm_epsilon,
            activation: super::Activation::Gelu,
            head_tied: false,
        };
        cfg.validate()?;

        let mut weights = Self::zeros(&cfg);
        let mut failure = None;
        weights.visit_mut(&mut |name, dst| {
            if failure.is_some() {
                return;
            }
            match archive.get(name) {
                None => failure = Some(Error::schema(name, "missing")),
                Some(t) if t.data.len() != dst.len() => {
                    failure = Some(Error::schema(
                        name,
                        format!("has shape {:?} ({} values), expected {} values", t.dims, t.data.len(), dst.len()),
                    ))
                }
                Some(t) => {
                    for (d, s) in dst.iter_mut().zip(&t.data) {
                        *d = F::from_f32(*s).unwrap();
                    }
                }
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        // shapes with equal element counts but transposed layouts
        let mut shape_err = None;
        weights.visit(&mut |name, shape, _| {
            if shape_err.is_none() {
                if let Some(t) = archive.get(name) {
                    if t.dims != shape {
                        shape_err = Some(Error::schema(name, format!("has shape {:?}, expected {:?}", t.dims, shape)));
                    }
                }
            }
        });
        if let Some(e) = shape_err {
            return Err(e);
        }
        cfg.head_tied = weights.head.decoder.weight == weights.embeddings.word;
        Ok((cfg, weights))
    }
}

fn visit_linear<'a, F>(prefix: &str, l: &'a Linear<F>, f: &mut dyn FnMut(&str, &[usize], &'a [F])) {
    f(&format!("{prefix}.weight"), l.weight.shape(), l.weight.as_slice().unwrap());
    f(&format!("{prefix}.bias"), l.bias.shape(), l.bias.as_slice().unwrap());
}

fn visit_norm<'a, F>(prefix: &str, n: &'a LayerNormParams<F>, f: &mut dyn FnMut(&str, &[usize], &'a [F])) {
    f(&format!("{prefix}.weight"), n.gamma.shape(), n.gamma.as_slice().unwrap());
    f(&format!("{prefix}.bias"), n.beta.shape(), n.beta.as_slice().unwrap());
}

fn visit_linear_mut<F>(prefix: &str, l: &mut Linear<F>, f: &mut dyn FnMut(&str, &mut [F])) {
    f(&format!("{prefix}.weight"), l.weight.as_slice_mut().unwrap());
    f(&format!("{prefix}.bias"), l.bias.as_slice_mut().unwrap());
}

fn visit_norm_mut<F>(prefix: &str, n: &mut LayerNormParams<F>, f: &mut dyn FnMut(&str, &mut [F])) {
    f(&format!("{prefix}.weight"), n.gamma.as_slice_mut().unwrap());
    f(&format!("{prefix}.bias"), n.beta.as_slice_mut().unwrap());
}
