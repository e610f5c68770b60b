//! Finite-difference oracle for the input-row gradient, shared by the unit
//! test and the acceptance run.

#![allow(dead_code)]

use ndarray::Array1;
use pseudoword::dataset::{Portion, ProbeItem};
use pseudoword::model::{EncodedItem, ModelBundle, ModelConfig, Weights};
use pseudoword::rng;
use pseudoword::tokenizer::{TokenizerMode, Vocabulary};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn random_bundle(seed: u64) -> ModelBundle<f64> {
    let words: Vec<String> = (0..59).map(|i| format!("w{i}")).collect();
    let vocab = Vocabulary::with_words(&words).unwrap();
    let cfg = ModelConfig::toy(64);
    // larger-than-default weights so that attention is far from uniform
    let mut w = Weights::<f64>::init(&cfg, &mut rng::stream(seed, "weights", "", 0));
    let mut r = rng::stream(seed, "scale", "", 0);
    w.visit_mut(&mut |name, data| {
        if !name.contains("layer_norm") {
            for v in data.iter_mut() {
                *v = *v * 20.0 + if name.ends_with("bias") { r.random_range(-0.1..0.1) } else { 0.0 };
            }
        }
    });
    ModelBundle::new(cfg, w, vocab, TokenizerMode::ClosedWhitespace).unwrap()
}

pub fn item() -> ProbeItem {
    let tokens: Vec<String> = ["w1", "w2", "w3", "w4", "w5", "w6"].iter().map(|s| s.to_string()).collect();
    ProbeItem {
        id: "g".into(),
        portion: Portion::Basic,
        focus_word: "w3".into(),
        tokens,
        focus_index: 2,
        cue_index: 3,
        sense_id: "s".into(),
        pair_id: None,
        split: None,
        det_index: None,
        pos: None,
    }
}

fn loss(b: &ModelBundle<f64>, enc: &EncodedItem, z: &Array1<f64>, t: &Array1<f64>, layer: usize) -> f64 {
    let h = b.hidden_at_focus(enc, Some(z.view()), layer).unwrap();
    (&h - t).mapv(|v| v * v).sum()
}

/// Largest `|analytic − central difference| / max(|analytic|, 1e-8)` over 100
/// random coordinates, for the target taken at each encoder layer.
pub fn max_gradient_error(seed: u64) -> Vec<(usize, f64)> {
    let b = random_bundle(seed);
    let it = item();
    let enc = b.encode_item(&it).unwrap();
    let mut r = rng::stream(seed, "z", "", 0);
    let z: Array1<f64> = (0..32).map(|_| StandardNormal.sample(&mut r)).collect();
    let t: Array1<f64> = (0..32).map(|_| StandardNormal.sample(&mut r)).collect();
    let mut out = Vec::new();
    for layer in 1..=b.num_layers() {
        let (_, g) = b.loss_and_gradient(&enc, z.view(), &t, layer).unwrap();
        let h = 1e-3;
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let i = r.random_range(0..32);
            let mut zp = z.clone();
            zp[i] += h;
            let mut zm = z.clone();
            zm[i] -= h;
            let fd = (loss(&b, &enc, &zp, &t, layer) - loss(&b, &enc, &zm, &t, layer)) / (2.0 * h);
            worst = worst.max((g[i] - fd).abs() / g[i].abs().max(1e-8));
        }
        out.push((layer, worst));
    }
    out
}
