//! JSON-lines pseudoword store. Vectors are kept as base64 of little-endian
//! `f32` bytes so that they round-trip bit-exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::induction::Pseudoword;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Record {
    key: String,
    vector: String,
    dim: usize,
    source_items: Vec<String>,
    focus_word: String,
    sense_id: String,
    layer: usize,
    final_loss: f64,
    initial_loss: f64,
    init_losses: Vec<f64>,
    winning_init: usize,
    decode_rank: usize,
    steps_used: usize,
}

pub fn encode_vector(v: &[f32]) -> String {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_vector(s: &str) -> Result<Vec<f32>> {
    let bytes = STANDARD
        .decode(s)
        .map_err(|e| Error::Validation(format!("bad base64 vector: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Validation(format!("vector byte length {} is not a multiple of 4", bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

/// Pseudowords keyed by a caller-chosen string (usually the joined source ids).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PseudowordStore {
    entries: BTreeMap<String, Pseudoword>,
}

impl PseudowordStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reads a store; a missing file yields an empty store.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        match fs::read_to_string(path) {
            Ok(text) => Self::parse(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::new()),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: Record = serde_json::from_str(line)
                .map_err(|e| Error::Validation(format!("pseudoword store line {}: {e}", n + 1)))?;
            let vector = decode_vector(&r.vector)?;
            if vector.len() != r.dim {
                return Err(Error::Validation(format!(
                    "pseudoword `{}`: dim {} but {} values",
                    r.key,
                    r.dim,
                    vector.len()
                )));
            }
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("pseudoword `{}` has non-finite entries", r.key)));
            }
            let pw = Pseudoword {
                vector,
                source_items: r.source_items,
                focus_word: r.focus_word,
                sense_id: r.sense_id,
                layer: r.layer,
                final_loss: r.final_loss,
                initial_loss: r.initial_loss,
                init_losses: r.init_losses,
                winning_init: r.winning_init,
                decode_rank: r.decode_rank,
                steps_used: r.steps_used,
            };
            entries.insert(r.key, pw);
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&Pseudoword> {
        self.entries.get(key)
    }

    pub fn insert(&mut self, key: impl Into<String>, pw: Pseudoword) {
        self.entries.insert(key.into(), pw);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Pseudoword)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// One line per entry, in key order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (key, p) in &self.entries {
            let r = Record {
                key: key.clone(),
                vector: encode_vector(&p.vector),
                dim: p.vector.len(),
                source_items: p.source_items.clone(),
                focus_word: p.focus_word.clone(),
                sense_id: p.sense_id.clone(),
                layer: p.layer,
                final_loss: p.final_loss,
                initial_loss: p.initial_loss,
                init_losses: p.init_losses.clone(),
                winning_init: p.winning_init,
                decode_rank: p.decode_rank,
                steps_used: p.steps_used,
            };
            out.push_str(&serde_json::to_string(&r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pw(v: Vec<f32>) -> Pseudoword {
        Pseudoword {
            vector: v,
            source_items: vec!["a".into()],
            focus_word: "in".into(),
            sense_id: "in.time".into(),
            layer: 2,
            final_loss: 1e-9,
            initial_loss: 3.5,
            init_losses: vec![1e-9, 2e-9],
            winning_init: 0,
            decode_rank: 1,
            steps_used: 412,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut s = PseudowordStore::new();
        s.insert("a", pw(vec![0.1, -0.0, f32::MIN_POSITIVE, 1.0e30, -7.25]));
        s.insert("b", pw(vec![]));
        let back = PseudowordStore::parse(&s.to_jsonl()).unwrap();
        assert_eq!(back, s);
        let bits: Vec<u32> = back.get("a").unwrap().vector.iter().map(|x| x.to_bits()).collect();
        assert_eq!(bits[1], (-0.0f32).to_bits());
    }

    #[test]
    fn losses_round_trip_exactly() {
        let mut s = PseudowordStore::new();
        let mut p = pw(vec![1.0]);
        // parsed one ulp off by an approximate float parser
        p.final_loss = 0.013289085229667319;
        p.init_losses = vec![p.final_loss, 9.802109237468837, 1.0 / 3.0];
        s.insert("a", p.clone());
        let text = s.to_jsonl();
        let back = PseudowordStore::parse(&text).unwrap();
        let got = back.get("a").unwrap();
        assert_eq!(got.final_loss.to_bits(), p.final_loss.to_bits());
        assert_eq!(got.init_losses, p.init_losses);
        assert_eq!(back.to_jsonl(), text);
    }

    #[test]
    fn missing_file_is_empty_and_save_reopens() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pw.jsonl");
        assert!(PseudowordStore::open(&path).unwrap().is_empty());
        let mut s = PseudowordStore::new();
        s.insert("x", pw(vec![1.0, 2.0]));
        s.save(&path).unwrap();
        assert_eq!(PseudowordStore::open(&path).unwrap(), s);
    }

    #[test]
    fn rejects_corrupt_lines() {
        assert!(PseudowordStore::parse("{not json}\n").is_err());
        let mut s = PseudowordStore::new();
        s.insert("x", pw(vec![1.0, 2.0]));
        let bad = s.to_jsonl().replace("\"dim\":2", "\"dim\":3");
        assert!(PseudowordStore::parse(&bad).is_err());
    }
}
