//! Synthetic ambiguous corpus: relation words whose sense is fixed only by
//! the class of the word that follows them.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Lexicons, PosGroup, Portion, ProbeItem, Split};
use crate::error::{Error, Result};
use crate::rng;

pub const SUBJ: &str = "SUBJ";
pub const REL: &str = "REL";
pub const CUE: &str = "CUE";
/// A second cue drawn from the same class as `CUE`.
pub const CUE2: &str = "CUE2";
/// A cue word of a different, randomly chosen relation.
pub const DISTRACTOR: &str = "DIS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyCorpusSpec {
    pub num_relations: usize,
    pub senses_per_relation: usize,
    pub cue_class_size: usize,
    pub num_subjects: usize,
    /// Unambiguous relation words per (relation, sense); they take the cue
    /// classes of one sense only.
    pub anchors_per_sense: usize,
    /// Probability that a sentence uses an anchor instead of the ambiguous word.
    pub anchor_rate: f64,
    /// Sentence templates over the placeholders `SUBJ`, `REL`, `CUE`, `CUE2`
    /// and `DIS`; any other token is copied literally. Probe items use the
    /// first template, which must not contain `CUE2`.
    pub templates: Vec<String>,
    pub corpus_size: usize,
    /// Probe items per (relation, sense) for the specialization portion.
    pub items_per_sense: usize,
    /// Minimal pairs per relation.
    pub pairs_per_relation: usize,
    /// Relations used for the generalization portion, with train/test counts per sense.
    pub generalization_relations: usize,
    pub generalization_train: usize,
    pub generalization_test: usize,
    pub seed: u64,
}

impl Default for ToyCorpusSpec {
    fn default() -> Self {
        Self {
            num_relations: 16,
            senses_per_relation: 2,
            cue_class_size: 8,
            num_subjects: 8,
            anchors_per_sense: 2,
            anchor_rate: 0.3,
            templates: vec![
                format!("{SUBJ} {REL} {CUE} ."),
                format!("{SUBJ} {REL} {CUE} and {CUE2} ."),
                format!("{SUBJ} {REL} {DISTRACTOR} {CUE} ."),
            ],
            corpus_size: 20_000,
            items_per_sense: 2,
            pairs_per_relation: 1,
            generalization_relations: 3,
            generalization_train: 14,
            generalization_test: 9,
            seed: 0,
        }
    }
}

/// Names of the words in one relation's family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyRelation {
    pub word: String,
    /// `senses[s]` is the sense id; `cues[s]` its cue class.
    pub senses: Vec<String>,
    pub cues: Vec<Vec<String>>,
    pub anchors: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyCorpus {
    pub sentences: Vec<Vec<String>>,
    pub relations: Vec<ToyRelation>,
    pub subjects: Vec<String>,
    pub items: Vec<ProbeItem>,
    pub lexicons: Lexicons,
}

const SENSE_LETTERS: &[u8] = b"abcdefgh";

impl ToyCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("toy corpus: {m}")));
        if self.num_relations == 0 || self.cue_class_size == 0 || self.num_subjects == 0 {
            return fail("relations, cue classes and subjects must be non-empty");
        }
        if !(2..=SENSE_LETTERS.len()).contains(&self.senses_per_relation) {
            return fail("senses_per_relation must be between 2 and 8");
        }
        if self.templates.is_empty() {
            return fail("at least one template is required");
        }
        for t in &self.templates {
            let toks: Vec<&str> = t.split_whitespace().collect();
            for ph in [SUBJ, REL, CUE] {
                if toks.iter().filter(|w| **w == ph).count() != 1 {
                    return fail(&format!("template `{t}` must contain {ph} exactly once"));
                }
            }
            let r = toks.iter().position(|w| *w == REL).unwrap();
            let c = toks.iter().position(|w| *w == CUE).unwrap();
            if c <= r {
                return fail(&format!("template `{t}` must place CUE after REL"));
            }
            if toks.iter().any(|w| *w == DISTRACTOR) && self.num_relations < 2 {
                return fail("distractors need at least two relations");
            }
        }
        if self.templates[0].split_whitespace().any(|w| w == CUE2) {
            return fail("the probe template must not contain CUE2");
        }
        if self.generalization_relations > self.num_relations {
            return fail("more generalization relations than relations");
        }
        if !(0.0..=1.0).contains(&self.anchor_rate) || (self.anchor_rate > 0.0 && self.anchors_per_sense == 0) {
            return fail("anchor_rate must be in [0, 1] and needs anchors");
        }
        if self.cue_class_size < self.items_per_sense.min(1) {
            return fail("cue classes too small");
        }
        Ok(())
    }

    pub fn relations(&self) -> Vec<ToyRelation> {
        (0..self.num_relations)
            .map(|r| {
                let letters = &SENSE_LETTERS[..self.senses_per_relation];
                ToyRelation {
                    word: format!("rel{r:02}"),
                    senses: letters.iter().map(|&l| format!("rel{r:02}.{}", l as char)).collect(),
                    cues: letters
                        .iter()
                        .map(|&l| (0..self.cue_class_size).map(|c| format!("c{r:02}{}{c:02}", l as char)).collect())
                        .collect(),
                    anchors: letters
                        .iter()
                        .map(|&l| (0..self.anchors_per_sense).map(|a| format!("a{r:02}{}{a}", l as char)).collect())
                        .collect(),
                }
            })
            .collect()
    }

    pub fn subjects(&self) -> Vec<String> {
        (0..self.num_subjects).map(|i| format!("s{i:02}")).collect()
    }

    /// Every word the corpus can contain, in a fixed order.
    pub fn words(&self) -> Vec<String> {
        let mut out = self.subjects();
        let mut literals: Vec<String> = Vec::new();
        for t in &self.templates {
            for w in t.split_whitespace() {
                if ![SUBJ, REL, CUE, CUE2, DISTRACTOR].contains(&w) && !literals.iter().any(|l| l == w) {
                    literals.push(w.to_string());
                }
            }
        }
        for rel in self.relations() {
            out.push(rel.word.clone());
            out.extend(rel.anchors.into_iter().flatten());
            out.extend(rel.cues.into_iter().flatten());
        }
        out.extend(literals);
        out
    }
}

struct Slots<'a> {
    subj: &'a str,
    rel: &'a str,
    cue: &'a str,
    cue2: &'a str,
    distractor: &'a str,
}

fn fill(template: &str, s: &Slots) -> (Vec<String>, usize, usize) {
    let (subj, rel, cue) = (s.subj, s.rel, s.cue);
    let mut focus = 0;
    let mut cue_at = 0;
    let words = template
        .split_whitespace()
        .enumerate()
        .map(|(i, w)| match w {
            SUBJ => subj.to_string(),
            CUE2 => s.cue2.to_string(),
            DISTRACTOR => s.distractor.to_string(),
            REL => {
                focus = i;
                rel.to_string()
            }
            CUE => {
                cue_at = i;
                cue.to_string()
            }
            other => other.to_string(),
        })
        .collect();
    (words, focus, cue_at)
}

/// Generates the corpus, probe items for all three portions, and lexicons
/// (one per sense, equal to its cue class). Deterministic per `spec.seed`.
pub fn gen_toy(spec: &ToyCorpusSpec) -> Result<ToyCorpus> {
    spec.validate()?;
    let relations = spec.relations();
    let subjects = spec.subjects();
    let mut lexicons = Lexicons::new();
    for rel in &relations {
        for (s, sense) in rel.senses.iter().enumerate() {
            lexicons.insert(sense.clone(), &rel.cues[s]);
        }
    }

    let mut r = rng::stream(spec.seed, "toy-corpus", "", 0);
    let mut sentences = Vec::with_capacity(spec.corpus_size);
    for _ in 0..spec.corpus_size {
        let ri = r.random_range(0..relations.len());
        let rel = &relations[ri];
        let s = r.random_range(0..spec.senses_per_relation);
        let cue = rel.cues[s].choose(&mut r).unwrap();
        let cue2 = rel.cues[s].choose(&mut r).unwrap();
        let subj = subjects.choose(&mut r).unwrap();
        let template = spec.templates.choose(&mut r).unwrap();
        let distractor = if relations.len() > 1 {
            let other = (ri + r.random_range(1..relations.len())) % relations.len();
            let ds = r.random_range(0..spec.senses_per_relation);
            relations[other].cues[ds].choose(&mut r).unwrap()
        } else {
            cue
        };
        let word = if spec.anchor_rate > 0.0 && r.random::<f64>() < spec.anchor_rate {
            rel.anchors[s].choose(&mut r).unwrap()
        } else {
            &rel.word
        };
        let slots = Slots {
            subj,
            rel: word,
            cue,
            cue2,
            distractor,
        };
        sentences.push(fill(template, &slots).0);
    }

    let mut items = Vec::new();
    let mut ir = rng::stream(spec.seed, "toy-items", "", 0);
    let pick_distractor = |r: &mut rand_chacha::ChaCha8Rng, ri: usize| -> String {
        if relations.len() < 2 {
            return String::new();
        }
        let other = (ri + r.random_range(1..relations.len())) % relations.len();
        let ds = r.random_range(0..spec.senses_per_relation);
        relations[other].cues[ds].choose(r).unwrap().clone()
    };
    let make = |portion: Portion, id: String, rel: &ToyRelation, s: usize, cue: &str, subj: &str, template: &str, distractor: &str| {
        let slots = Slots {
            subj,
            rel: &rel.word,
            cue,
            cue2: cue,
            distractor,
        };
        let (tokens, focus, cue_at) = fill(template, &slots);
        ProbeItem {
            id,
            portion,
            tokens,
            focus_index: focus,
            cue_index: cue_at,
            focus_word: rel.word.clone(),
            sense_id: rel.senses[s].clone(),
            pair_id: None,
            split: None,
            det_index: None,
            pos: Some(PosGroup::Preposition),
        }
    };
    let template0 = spec.templates[0].as_str();
    for (ri, rel) in relations.iter().enumerate() {
        for s in 0..spec.senses_per_relation {
            let cues: Vec<&String> = rel.cues[s].choose_multiple(&mut ir, spec.items_per_sense.min(spec.cue_class_size)).collect();
            for (i, cue) in cues.into_iter().enumerate() {
                let subj = subjects.choose(&mut ir).unwrap().clone();
                let id = format!("basic-{}-{i}", rel.senses[s]);
                let dis = pick_distractor(&mut ir, ri);
                items.push(make(Portion::Basic, id, rel, s, cue, &subj, template0, &dis));
            }
        }
    }
    for (ri, rel) in relations.iter().enumerate() {
        for p in 0..spec.pairs_per_relation {
            let subj = subjects.choose(&mut ir).unwrap().clone();
            let dis = pick_distractor(&mut ir, ri);
            let pid = format!("pair-{}-{p}", rel.word);
            for s in 0..2 {
                let cue = rel.cues[s].choose(&mut ir).unwrap().clone();
                let mut it = make(Portion::MinimalPairs, format!("{pid}-{}", SENSE_LETTERS[s] as char), rel, s, &cue, &subj, template0, &dis);
                it.pair_id = Some(pid.clone());
                items.push(it);
            }
        }
    }
    let probe_templates: Vec<&String> = spec.templates.iter().filter(|t| !t.split_whitespace().any(|w| w == CUE2)).collect();
    for (ri, rel) in relations.iter().enumerate().take(spec.generalization_relations) {
        for s in 0..2 {
            let n = spec.generalization_train + spec.generalization_test;
            for i in 0..n {
                let cue = rel.cues[s].choose(&mut ir).unwrap().clone();
                let subj = subjects.choose(&mut ir).unwrap().clone();
                let template = probe_templates.choose(&mut ir).unwrap().to_string();
                let dis = pick_distractor(&mut ir, ri);
                let mut it = make(Portion::Generalization, format!("gen-{}-{i:02}", rel.senses[s]), rel, s, &cue, &subj, &template, &dis);
                it.split = Some(if i < spec.generalization_train { Split::Train } else { Split::Test });
                items.push(it);
            }
        }
    }

    Ok(ToyCorpus {
        sentences,
        relations,
        subjects,
        items,
        lexicons,
    })
}
