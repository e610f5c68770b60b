//! Probe items, sense lexicons, the bundled example portions, and the toy corpus.

mod import;
mod toy;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use import::{import_raw, import_record, RawRecord};
pub use toy::{gen_toy, ToyCorpus, ToyCorpusSpec, ToyRelation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Portion {
    Basic,
    MinimalPairs,
    Generalization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Part-of-speech group of the focus word, used to break down accuracy tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosGroup {
    Verb,
    Preposition,
}

impl PosGroup {
    pub fn label(self) -> &'static str {
        match self {
            PosGroup::Verb => "verbs",
            PosGroup::Preposition => "prepositions",
        }
    }
}

/// One annotated sentence. `tokens` are words before framing; `focus_index`
/// and `cue_index` index into them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeItem {
    pub id: String,
    pub portion: Portion,
    pub tokens: Vec<String>,
    pub focus_index: usize,
    pub cue_index: usize,
    pub focus_word: String,
    pub sense_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    /// A second slot allowed to differ between the members of a minimal pair
    /// (a determiner that agrees with the cue).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub det_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<PosGroup>,
}

impl ProbeItem {
    pub fn cue_word(&self) -> &str {
        &self.tokens[self.cue_index]
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    /// Checks the structural invariants of a single item.
    pub fn validate(&self) -> Result<()> {
        let fail = |r: String| Err(Error::item(&self.id, r));
        let n = self.tokens.len();
        if self.id.is_empty() {
            return Err(Error::Validation("item with empty id".into()));
        }
        if n == 0 {
            return fail("no tokens".into());
        }
        if self.focus_index >= n || self.cue_index >= n {
            return fail(format!(
                "focus_index {} / cue_index {} out of bounds for {n} tokens",
                self.focus_index, self.cue_index
            ));
        }
        if self.focus_index == self.cue_index {
            return fail("focus_index equals cue_index".into());
        }
        if self.tokens[self.focus_index] != self.focus_word {
            return fail(format!(
                "focus_word `{}` does not match token `{}`",
                self.focus_word, self.tokens[self.focus_index]
            ));
        }
        if let Some(d) = self.det_index {
            if d >= n || d == self.focus_index || d == self.cue_index {
                return fail(format!("det_index {d} must be a distinct in-bounds slot"));
            }
        }
        if self.sense_id.is_empty() {
            return fail("empty sense_id".into());
        }
        if self.portion == Portion::Generalization && self.split.is_none() {
            return fail("generalization item without split".into());
        }
        if self.portion == Portion::MinimalPairs && self.pair_id.is_none() {
            return fail("minimal-pair item without pair_id".into());
        }
        Ok(())
    }
}

/// Parses and validates a JSON-lines item file. Blank lines are skipped.
pub fn parse_items(text: &str) -> Result<Vec<ProbeItem>> {
    let mut items = Vec::new();
    let mut seen = BTreeSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: ProbeItem = serde_json::from_str(line)
            .map_err(|e| Error::Validation(format!("line {}: {e}", lineno + 1)))?;
        item.validate()?;
        if !seen.insert(item.id.clone()) {
            return Err(Error::item(&item.id, "duplicate id"));
        }
        items.push(item);
    }
    Ok(items)
}

pub fn load_items(path: impl AsRef<Path>) -> Result<Vec<ProbeItem>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_items(&text)
}

pub fn items_to_jsonl(items: &[ProbeItem]) -> String {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("items serialize"));
        out.push('\n');
    }
    out
}

pub fn write_items(path: impl AsRef<Path>, items: &[ProbeItem]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, items_to_jsonl(items)).map_err(|e| Error::io(path, e))
}

/// Per-portion counts, distinct focus words and distinct senses.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PortionSummary {
    pub items: usize,
    pub focus_words: usize,
    pub senses: usize,
    pub pairs: usize,
}

pub fn summarize(items: &[ProbeItem]) -> BTreeMap<Portion, PortionSummary> {
    let mut words: BTreeMap<Portion, BTreeSet<&str>> = BTreeMap::new();
    let mut senses: BTreeMap<Portion, BTreeSet<&str>> = BTreeMap::new();
    let mut pairs: BTreeMap<Portion, BTreeSet<&str>> = BTreeMap::new();
    let mut out: BTreeMap<Portion, PortionSummary> = BTreeMap::new();
    for it in items {
        out.entry(it.portion).or_default().items += 1;
        words.entry(it.portion).or_default().insert(&it.focus_word);
        senses.entry(it.portion).or_default().insert(&it.sense_id);
        if let Some(p) = &it.pair_id {
            pairs.entry(it.portion).or_default().insert(p);
        }
    }
    for (portion, s) in out.iter_mut() {
        s.focus_words = words.get(portion).map_or(0, |w| w.len());
        s.senses = senses.get(portion).map_or(0, |w| w.len());
        s.pairs = pairs.get(portion).map_or(0, |w| w.len());
    }
    out
}

/// Indexes minimal pairs by `pair_id`, checking that the members differ only
/// at the cue slot and the flagged determiner slot. Members are returned in
/// file order.
pub fn pair_index(items: &[ProbeItem]) -> Result<BTreeMap<String, (ProbeItem, ProbeItem)>> {
    let mut groups: BTreeMap<String, Vec<&ProbeItem>> = BTreeMap::new();
    for it in items {
        if let Some(p) = &it.pair_id {
            groups.entry(p.clone()).or_default().push(it);
        }
    }
    let mut out = BTreeMap::new();
    for (pid, members) in groups {
        let [a, b] = members.as_slice() else {
            return Err(Error::Validation(format!(
                "pair `{pid}` has {} member(s), expected 2",
                members.len()
            )));
        };
        let bad = |r: String| Err(Error::Validation(format!("pair `{pid}`: {r}")));
        if a.focus_word != b.focus_word {
            return bad(format!("focus words differ (`{}` vs `{}`)", a.focus_word, b.focus_word));
        }
        if a.focus_index != b.focus_index || a.cue_index != b.cue_index {
            return bad("focus or cue slots differ".into());
        }
        if a.tokens.len() != b.tokens.len() {
            return bad("sentences differ in length".into());
        }
        if a.sense_id == b.sense_id {
            return bad(format!("both members have sense `{}`", a.sense_id));
        }
        let det = a.det_index.or(b.det_index);
        if a.det_index.is_some() && b.det_index.is_some() && a.det_index != b.det_index {
            return bad("determiner slots differ".into());
        }
        for (i, (x, y)) in a.tokens.iter().zip(&b.tokens).enumerate() {
            if x != y && i != a.cue_index && Some(i) != det {
                return bad(format!("members differ at unflagged slot {i} (`{x}` vs `{y}`)"));
            }
        }
        out.insert(pid, ((*a).clone(), (*b).clone()));
    }
    Ok(out)
}

/// Sense id → acceptable cue-slot fillers. Matching is case-insensitive.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lexicons {
    map: BTreeMap<String, BTreeSet<String>>,
}

impl Lexicons {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<I, S>(&mut self, sense: impl Into<String>, words: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set = self.map.entry(sense.into()).or_default();
        set.extend(words.into_iter().map(|w| w.as_ref().to_lowercase()));
    }

    pub fn get(&self, sense: &str) -> Option<&BTreeSet<String>> {
        self.map.get(sense)
    }

    pub fn contains(&self, sense: &str, word: &str) -> bool {
        self.map.get(sense).is_some_and(|s| s.contains(&word.to_lowercase()))
    }

    pub fn senses(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (sense, words) in &self.map {
            if words.is_empty() {
                return Err(Error::Validation(format!("lexicon `{sense}` is empty")));
            }
        }
        Ok(())
    }

    /// Checks that every item's sense has a lexicon and that the two senses
    /// of each minimal pair have disjoint lexicons.
    pub fn check_items(&self, items: &[ProbeItem]) -> Result<()> {
        for it in items {
            if !self.map.contains_key(&it.sense_id) {
                return Err(Error::item(&it.id, format!("no lexicon for sense `{}`", it.sense_id)));
            }
        }
        for (pid, (a, b)) in pair_index(items)? {
            let (la, lb) = (&self.map[&a.sense_id], &self.map[&b.sense_id]);
            if let Some(w) = la.intersection(lb).next() {
                return Err(Error::Validation(format!(
                    "pair `{pid}`: lexicons `{}` and `{}` share `{w}`",
                    a.sense_id, b.sense_id
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: HashMap<String, Vec<String>> = serde_json::from_str(text)?;
        let mut lex = Self::new();
        for (k, v) in raw {
            lex.insert(k, v);
        }
        lex.validate()?;
        Ok(lex)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.map).expect("lexicons serialize")
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// The reconstructed example portions shipped with the crate.
pub mod bundled {
    use super::*;

    pub const BASIC: &str = include_str!("../../data/basic.jsonl");
    pub const MINIMAL_PAIRS: &str = include_str!("../../data/minimal_pairs.jsonl");
    pub const GENERALIZATION: &str = include_str!("../../data/generalization.jsonl");
    pub const LEXICONS: &str = include_str!("../../data/lexicons.json");

    pub fn basic() -> Vec<ProbeItem> {
        parse_items(BASIC).expect("bundled basic portion is valid")
    }

    pub fn minimal_pairs() -> Vec<ProbeItem> {
        parse_items(MINIMAL_PAIRS).expect("bundled minimal pairs are valid")
    }

    pub fn generalization() -> Vec<ProbeItem> {
        parse_items(GENERALIZATION).expect("bundled generalization portion is valid")
    }

    pub fn lexicons() -> Lexicons {
        Lexicons::from_json(LEXICONS).expect("bundled lexicons are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, words: &str, focus: usize, cue: usize, sense: &str) -> ProbeItem {
        let tokens: Vec<String> = words.split(' ').map(String::from).collect();
        ProbeItem {
            id: id.into(),
            portion: Portion::MinimalPairs,
            focus_word: tokens[focus].clone(),
            tokens,
            focus_index: focus,
            cue_index: cue,
            sense_id: sense.into(),
            pair_id: Some("p".into()),
            split: None,
            det_index: None,
            pos: None,
        }
    }

    #[test]
    fn validation_names_the_item() {
        let mut it = item("x1", "The event is in London .", 3, 4, "in.locative");
        it.focus_word = "on".into();
        let err = it.validate().unwrap_err();
        assert!(err.to_string().contains("x1"));
        let mut it = item("x2", "The event is in London .", 3, 3, "in.locative");
        it.focus_word = "in".into();
        assert!(it.validate().is_err());
    }

    #[test]
    fn pair_with_different_focus_words_is_rejected() {
        let a = item("a", "The event is in October .", 3, 4, "in.temporal");
        let mut b = item("b", "The event is on London .", 3, 4, "on.locative");
        b.focus_word = "on".into();
        assert!(pair_index(&[a, b]).is_err());
    }

    #[test]
    fn pair_differing_outside_flagged_slots_is_rejected() {
        let a = item("a", "The event is in October .", 3, 4, "in.temporal");
        let b = item("b", "The party is in London .", 3, 4, "in.locative");
        assert!(pair_index(&[a, b]).is_err());
        let a = item("a", "I cut it with enjoyment .", 3, 4, "with.feeling");
        let mut b = item("b", "I cut it with a knife", 3, 5, "with.instrument");
        b.tokens = "I cut it with a knife .".split(' ').map(String::from).collect();
        b.cue_index = 4;
        assert!(pair_index(&[a, b]).is_err());
    }

    #[test]
    fn lexicon_matching_is_case_insensitive() {
        let mut lex = Lexicons::new();
        lex.insert("day", ["Monday", "sunday"]);
        assert!(lex.contains("day", "SUNDAY"));
        assert!(lex.contains("day", "monday"));
        assert!(!lex.contains("day", "London"));
        assert!(!lex.contains("month", "monday"));
    }

    #[test]
    fn bundled_portion_counts() {
        let count = |items: &[ProbeItem]| summarize(items).into_values().next().unwrap();
        let basic = bundled::basic();
        let s = count(&basic);
        assert_eq!((s.items, s.focus_words), (94, 8));
        let pairs = bundled::minimal_pairs();
        let s = count(&pairs);
        assert_eq!((pair_index(&pairs).unwrap().len(), s.focus_words, s.senses), (40, 7, 16));
        let gen = bundled::generalization();
        assert_eq!(gen.len(), 138);
        let mut per_sense: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for it in &gen {
            let e = per_sense.entry(&it.sense_id).or_default();
            match it.split {
                Some(Split::Train) => e.0 += 1,
                _ => e.1 += 1,
            }
        }
        assert!(per_sense.values().all(|&c| c == (14, 9)), "{per_sense:?}");
    }

    #[test]
    fn bundled_lexicons_cover_the_cues() {
        let lex = bundled::lexicons();
        lex.validate().unwrap();
        for items in [bundled::basic(), bundled::minimal_pairs(), bundled::generalization()] {
            lex.check_items(&items).unwrap();
        }
        for it in bundled::basic().iter().chain(&bundled::minimal_pairs()).chain(&bundled::generalization()) {
            assert!(lex.contains(&it.sense_id, it.cue_word()), "{}: `{}`", it.id, it.cue_word());
        }
    }
}
