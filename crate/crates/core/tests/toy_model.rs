//! Behaviour of a small trained toy model: masked prediction, induction
//! invariants and the encoder's position handling.

mod common;

use std::sync::OnceLock;

use ndarray::{s, Array1};
use pseudoword::dataset::{gen_toy, Portion, ProbeItem, ToyCorpus, ToyCorpusSpec};
use pseudoword::experiment::{ToyModelSpec, ToySetup};
use pseudoword::induction::{induce, induce_aggregate, InductionConfig, InitMode};
use pseudoword::model::{ModelBundle, TrainConfig};
use pseudoword::rng;
use rand_distr::{Distribution, Normal};

fn toy() -> &'static (ToyCorpus, ModelBundle) {
    static TOY: OnceLock<(ToyCorpus, ModelBundle)> = OnceLock::new();
    TOY.get_or_init(|| {
        let setup = ToySetup {
            corpus: ToyCorpusSpec {
                num_relations: 4,
                anchors_per_sense: 0,
                anchor_rate: 0.0,
                templates: vec!["SUBJ REL CUE .".into()],
                corpus_size: 4000,
                generalization_relations: 1,
                ..ToyCorpusSpec::default()
            },
            model: ToyModelSpec::default(),
            train: TrainConfig {
                max_steps: 1500,
                ..TrainConfig::default()
            },
        };
        let (corpus, bundle, _) = setup.build(1).unwrap();
        (corpus, bundle)
    })
}

fn basic() -> Vec<ProbeItem> {
    toy().0.items.iter().filter(|i| i.portion == Portion::Basic).cloned().collect()
}

fn cfg(inits: usize) -> InductionConfig {
    InductionConfig {
        num_inits: inits,
        seed: 4,
        ..InductionConfig::default()
    }
}

fn sq(v: &Array1<f32>) -> f64 {
    v.iter().map(|&x| (x as f64).powi(2)).sum()
}

fn reconstruction(b: &ModelBundle, item: &ProbeItem, z: &[f32]) -> f64 {
    let layer = b.num_layers();
    let enc = b.encode_item(item).unwrap();
    let h = b.hidden_at_focus(&enc, Some(Array1::from(z.to_vec()).view()), layer).unwrap();
    sq(&(&h - &b.contextual_vector(item, layer).unwrap()))
}

#[test]
fn vanilla_predictions_stay_in_the_relations_cue_classes() {
    let (corpus, b) = toy();
    let items = basic();
    let mut hits = 0;
    for it in &items {
        let rel = corpus.relations.iter().find(|r| r.word == it.focus_word).unwrap();
        let enc = b.encode_item(it).unwrap();
        let top = &b.masked_topk(&enc, None, 1).unwrap()[0].word;
        hits += usize::from(rel.cues.iter().flatten().any(|c| c == top));
    }
    assert!(hits as f64 >= 0.95 * items.len() as f64, "{hits}/{}", items.len());
}

#[test]
fn contextual_vector_depends_on_the_cue() {
    let (_, b) = toy();
    let items = basic();
    let a = &items[0];
    let other = items.iter().find(|i| i.focus_word == a.focus_word && i.cue_word() != a.cue_word()).unwrap();
    let mut swapped = a.clone();
    swapped.tokens[a.cue_index] = other.cue_word().to_string();
    let layer = b.num_layers();
    let d = sq(&(&b.contextual_vector(a, layer).unwrap() - &b.contextual_vector(&swapped, layer).unwrap()));
    assert!(d > 0.0);
    assert_eq!(b.contextual_vector(a, layer).unwrap(), b.contextual_vector(a, layer).unwrap());
}

#[test]
fn static_embedding_decodes_to_itself() {
    let (_, b) = toy();
    for it in basic() {
        let enc = b.encode_item(&it).unwrap();
        let zt = b.static_embedding(enc.focus_id());
        assert_eq!(b.decode_rank(&enc, zt.view()).unwrap(), 1, "{}", it.id);
    }
    let (mean, std) = b.embedding_stats();
    let mut r = rng::stream(0, "random-decode", "", 0);
    let normal = Normal::new(mean, std).unwrap();
    let enc = b.encode_item(&basic()[0]).unwrap();
    let ranks: Vec<usize> = (0..100)
        .map(|_| {
            let z: Array1<f32> = (0..b.config().hidden_dim).map(|_| normal.sample(&mut r) as f32).collect();
            b.decode_rank(&enc, z.view()).unwrap()
        })
        .collect();
    let median = {
        let mut r = ranks.clone();
        r.sort();
        r[50]
    };
    eprintln!("decode rank of random vectors: median {median}, min {}", ranks.iter().min().unwrap());
}

#[test]
fn induction_reconstructs_and_decodes() {
    let (_, b) = toy();
    let before = b.weights().checksum();
    for it in basic().iter().take(8) {
        let pw = induce(b, it, &cfg(3)).unwrap();
        let x = b.contextual_vector(it, b.num_layers()).unwrap();
        assert!(pw.final_loss < 1e-3 * sq(&x), "{}: loss {} vs |x|^2 {}", it.id, pw.final_loss, sq(&x));
        assert_eq!(pw.decode_rank, 1, "{}", it.id);
        assert!(pw.vector.iter().all(|v| v.is_finite()));
        assert_eq!(pw.init_losses.len(), 3);
        assert!(pw.init_losses.iter().all(|&l| pw.final_loss <= l));
        assert_eq!(pw.final_loss, pw.init_losses.iter().cloned().fold(f64::INFINITY, f64::min));
        assert!(pw.final_loss <= pw.initial_loss);
    }
    assert_eq!(b.weights().checksum(), before);
}

#[test]
fn zero_steps_from_the_static_embedding_is_exact() {
    let (_, b) = toy();
    let c = InductionConfig {
        init: InitMode::Static,
        num_inits: 1,
        max_steps: 0,
        ..InductionConfig::default()
    };
    for it in basic() {
        let pw = induce(b, &it, &c).unwrap();
        let enc = b.encode_item(&it).unwrap();
        assert_eq!(pw.final_loss, 0.0);
        assert_eq!(pw.vector, b.static_embedding(enc.focus_id()).to_vec());
        assert_eq!(b.masked_topk(&enc, Some(pw.view()), 10).unwrap(), b.masked_topk(&enc, None, 10).unwrap());
    }
}

#[test]
fn aggregate_reduces_to_single_item_induction() {
    let (_, b) = toy();
    let it = &basic()[0];
    let single = induce(b, it, &cfg(2)).unwrap();
    let agg = induce_aggregate(b, std::slice::from_ref(it), &cfg(2)).unwrap();
    assert_eq!(single.vector, agg.vector);
    assert_eq!(single.final_loss, agg.final_loss);
    let mut copy = it.clone();
    copy.id = format!("{}-copy", it.id);
    // the aggregate loss is a mean, so two copies of a sentence cost as much as one
    let twice = induce_aggregate(b, &[it.clone(), copy], &cfg(2)).unwrap();
    assert_eq!(twice.source_items.len(), 2);
    let own = reconstruction(b, it, &twice.vector);
    assert!((twice.final_loss - own).abs() <= 1e-6 * own + 1e-12, "{} vs {own}", twice.final_loss);
    // the same id twice counts once
    let dup = induce_aggregate(b, &[it.clone(), it.clone()], &cfg(2)).unwrap();
    assert_eq!(dup.source_items, [it.id.clone()]);
    let other = basic().into_iter().find(|i| i.sense_id != it.sense_id && i.focus_word == it.focus_word).unwrap();
    assert!(induce_aggregate(b, &[it.clone(), other], &cfg(1)).is_err());
}

#[test]
fn aggregate_optimum_beats_any_single_item_solution() {
    let (corpus, b) = toy();
    let train: Vec<ProbeItem> = corpus
        .items
        .iter()
        .filter(|i| i.portion == Portion::Generalization && i.sense_id.ends_with(".a"))
        .take(14)
        .cloned()
        .collect();
    assert_eq!(train.len(), 14);
    let mean_loss = |z: &[f32]| train.iter().map(|i| reconstruction(b, i, z)).sum::<f64>() / train.len() as f64;
    let agg = induce_aggregate(b, &train, &cfg(2)).unwrap();
    let at_agg = mean_loss(&agg.vector);
    assert!((at_agg - agg.final_loss).abs() <= 1e-6 * at_agg.max(1e-12) + 1e-9);
    for it in train.iter().take(4) {
        let single = induce(b, it, &cfg(2)).unwrap();
        assert!(at_agg <= mean_loss(&single.vector) + 1e-9, "{}", it.id);
    }
}

#[test]
fn induction_is_reproducible() {
    let (_, b) = toy();
    let it = &basic()[3];
    assert_eq!(induce(b, it, &cfg(2)).unwrap(), induce(b, it, &cfg(2)).unwrap());
}

#[test]
fn swapping_tokens_with_their_positions_swaps_hidden_states() {
    let b = common::random_bundle(3);
    let enc = b.encode_item(&common::item()).unwrap();
    let x = b.compose_inputs(&enc.ids, None).unwrap();
    let mut y = x.clone();
    let (i, j) = (2, 5);
    y.row_mut(i).assign(&x.row(j));
    y.row_mut(j).assign(&x.row(i));
    let all: Vec<usize> = (0..x.nrows()).collect();
    let fx = b.forward(&x, &all).unwrap();
    let fy = b.forward(&y, &all).unwrap();
    for (hx, hy) in fx.hidden.iter().zip(&fy.hidden) {
        for (a, c) in [(i, j), (j, i)] {
            let diff = (&hx.row(a) - &hy.row(c)).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
            assert!(diff < 1e-9, "{diff}");
        }
        let rest = (&hx.slice(s![0..2, ..]) - &hy.slice(s![0..2, ..])).mapv(f64::abs).sum();
        assert!(rest < 1e-9);
    }
}

#[test]
fn toy_spec_is_self_consistent() {
    let toy = gen_toy(&ToyCorpusSpec::default()).unwrap();
    assert!(toy.items.iter().filter(|i| i.portion == Portion::Basic).count() >= 40);
}
