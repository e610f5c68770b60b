//! Import of marked-up raw sentences into [`ProbeItem`]s.
//!
//! A raw record holds one sentence in which the focus word is wrapped in
//! asterisks and the cue word in square brackets, for example
//! `The event is *in* [October] .`. An optional determiner slot that differs
//! between minimal-pair members is wrapped in braces: `I ate {a} [pizza] .`.
//! Punctuation attached to a word is split off into its own token.

use serde::{Deserialize, Serialize};

use super::{PosGroup, Portion, ProbeItem, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub portion: Portion,
    pub sentence: String,
    pub sense: String,
    #[serde(default)]
    pub pair: Option<String>,
    #[serde(default)]
    pub split: Option<Split>,
    #[serde(default)]
    pub pos: Option<PosGroup>,
}

#[derive(Debug, PartialEq)]
enum Mark {
    None,
    Focus,
    Cue,
    Det,
}

fn split_punct(word: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = word;
    let mut tail = Vec::new();
    while let Some(c) = rest.chars().last() {
        if rest.chars().count() > 1 && matches!(c, '.' | ',' | '!' | '?' | ';' | ':') {
            tail.push(c.to_string());
            rest = &rest[..rest.len() - c.len_utf8()];
        } else {
            break;
        }
    }
    out.push(rest.to_string());
    out.extend(tail.into_iter().rev());
    out
}

fn unwrap_mark(tok: &str) -> (Mark, &str) {
    let pairs = [('*', '*', Mark::Focus), ('[', ']', Mark::Cue), ('{', '}', Mark::Det)];
    for (open, close, mark) in pairs {
        if tok.len() >= 3 && tok.starts_with(open) && tok.ends_with(close) {
            return (mark, &tok[1..tok.len() - 1]);
        }
    }
    (Mark::None, tok)
}

/// Converts one raw record; the resulting item is validated.
pub fn import_record(r: &RawRecord) -> Result<ProbeItem> {
    let fail = |m: String| Error::item(&r.id, m);
    let mut tokens = Vec::new();
    let mut focus = None;
    let mut cue = None;
    let mut det = None;
    for raw in r.sentence.split_whitespace() {
        for piece in split_punct(raw) {
            let (mark, word) = unwrap_mark(&piece);
            let slot = match mark {
                Mark::None => None,
                Mark::Focus => Some(&mut focus),
                Mark::Cue => Some(&mut cue),
                Mark::Det => Some(&mut det),
            };
            if let Some(slot) = slot {
                if slot.is_some() {
                    return Err(fail(format!("marker {mark:?} used twice in `{}`", r.sentence)));
                }
                *slot = Some(tokens.len());
            }
            tokens.push(word.to_string());
        }
    }
    let focus_index = focus.ok_or_else(|| fail(format!("no *focus* marker in `{}`", r.sentence)))?;
    let cue_index = cue.ok_or_else(|| fail(format!("no [cue] marker in `{}`", r.sentence)))?;
    let item = ProbeItem {
        id: r.id.clone(),
        portion: r.portion,
        focus_word: tokens[focus_index].clone(),
        tokens,
        focus_index,
        cue_index,
        sense_id: r.sense.clone(),
        pair_id: r.pair.clone(),
        split: r.split,
        det_index: det,
        pos: r.pos,
    };
    item.validate()?;
    Ok(item)
}

/// Parses JSON-lines raw records and converts each one.
pub fn import_raw(text: &str) -> Result<Vec<ProbeItem>> {
    let mut items = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: RawRecord =
            serde_json::from_str(line).map_err(|e| Error::Validation(format!("raw record on line {}: {e}", n + 1)))?;
        items.push(import_record(&r)?);
    }
    Ok(items)
}
