//! The JSON manifest that accompanies an exported archive.
//!
//! An exporter writes one record per tensor with its shape and the SHA-256 of
//! its little-endian `f32` payload, the SHA-256 of the vocabulary file text
//! and the config the loader will infer. [`ExportManifest::verify`] checks an
//! archive and vocabulary against it before any experiment trusts them.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archive::{TensorArchive, TensorEntry};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Weights};
use crate::report::write_text;
use crate::tokenizer::Vocabulary;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub dims: Vec<usize>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    /// Checkpoint identifier or path the archive was produced from.
    pub source: String,
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub vocab_sha256: String,
    pub tensors: Vec<TensorRecord>,
}

fn hex(digest: &[u8]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over the tensor's values as little-endian `f32` bytes, in row-major order.
pub fn tensor_sha256(entry: &TensorEntry) -> String {
    let mut h = Sha256::new();
    for v in &entry.data {
        h.update(v.to_le_bytes());
    }
    hex(&h.finalize())
}

/// Names and shapes every archive for `cfg` must contain, in canonical order.
pub fn required_tensors(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    Weights::<f32>::zeros(cfg).visit(&mut |name, dims, _| out.push((name.to_string(), dims.to_vec())));
    out
}

impl ExportManifest {
    /// Describes an archive and its vocabulary. Fails with the same named
    /// errors as loading when a required tensor is missing or mis-shaped.
    pub fn describe(source: impl Into<String>, archive: &TensorArchive, vocab: &Vocabulary) -> Result<Self> {
        let (config, _) = Weights::<f32>::from_archive(archive)?;
        if config.vocab_size != vocab.len() {
            return Err(Error::Vocabulary(format!(
                "archive has {} embedding rows but the vocabulary has {} entries",
                config.vocab_size,
                vocab.len()
            )));
        }
        let tensors = archive
            .entries()
            .iter()
            .map(|e| TensorRecord {
                name: e.name.clone(),
                dims: e.dims.clone(),
                sha256: tensor_sha256(e),
            })
            .collect();
        Ok(Self {
            source: source.into(),
            config,
            vocab_size: vocab.len(),
            vocab_sha256: hex(&Sha256::digest(vocab.to_text().as_bytes())),
            tensors,
        })
    }

    /// Checks that `archive` and `vocab` are exactly what the manifest
    /// describes: the same tensor set with equal shapes and checksums, the
    /// same inferred config and the same vocabulary text.
    pub fn verify(&self, archive: &TensorArchive, vocab: &Vocabulary) -> Result<()> {
        let actual = Self::describe(self.source.clone(), archive, vocab)?;
        for want in &self.tensors {
            match actual.tensors.iter().find(|t| t.name == want.name) {
                None => return Err(Error::schema(&want.name, "listed in the manifest but missing from the archive")),
                Some(t) if t.dims != want.dims => {
                    return Err(Error::schema(&want.name, format!("shape {:?}, manifest says {:?}", t.dims, want.dims)))
                }
                Some(t) if t.sha256 != want.sha256 => return Err(Error::schema(&want.name, "checksum differs from the manifest")),
                Some(_) => {}
            }
        }
        if let Some(extra) = actual.tensors.iter().find(|t| !self.tensors.iter().any(|w| w.name == t.name)) {
            return Err(Error::schema(&extra.name, "present in the archive but not listed in the manifest"));
        }
        if actual.config != self.config {
            return Err(Error::Format(format!(
                "inferred config {:?} differs from the manifest's {:?}",
                actual.config, self.config
            )));
        }
        if actual.vocab_sha256 != self.vocab_sha256 || actual.vocab_size != self.vocab_size {
            return Err(Error::Vocabulary("vocabulary differs from the manifest".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path, &self.to_json())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn exported() -> (TensorArchive, Vocabulary) {
        let vocab = Vocabulary::with_words(["the", "event", "is", "in", "may", "."]).unwrap();
        let mut cfg = ModelConfig::toy(vocab.len());
        cfg.num_layers = 1;
        let w = Weights::<f32>::init(&cfg, &mut rng::stream(1, "manifest-test", "", 0));
        (w.to_archive(&cfg), vocab)
    }

    #[test]
    fn known_digest() {
        let e = TensorEntry {
            name: "x".into(),
            dims: vec![0],
            data: vec![],
        };
        assert_eq!(tensor_sha256(&e), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
        let one = TensorEntry {
            name: "x".into(),
            dims: vec![1],
            data: vec![1.0],
        };
        // sha256 of the bytes 00 00 80 3f
        assert_eq!(tensor_sha256(&one), hex(&Sha256::digest([0x00, 0x00, 0x80, 0x3f])));
    }

    #[test]
    fn describe_then_verify_round_trips_through_json() {
        let (archive, vocab) = exported();
        let m = ExportManifest::describe("toy", &archive, &vocab).unwrap();
        assert_eq!(m.config.num_layers, 1);
        assert_eq!(m.tensors.len(), archive.len());
        let back = ExportManifest::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        back.verify(&archive, &vocab).unwrap();
        assert_eq!(ExportManifest::describe("toy", &archive, &vocab).unwrap(), m);
    }

    #[test]
    fn every_required_tensor_is_exported() {
        let (archive, vocab) = exported();
        let m = ExportManifest::describe("toy", &archive, &vocab).unwrap();
        for (name, dims) in required_tensors(&m.config) {
            let rec = m.tensors.iter().find(|t| t.name == name).unwrap_or_else(|| panic!("{name} not exported"));
            assert_eq!(rec.dims, dims);
        }
    }

    #[test]
    fn tampering_is_named() {
        let (archive, vocab) = exported();
        let m = ExportManifest::describe("toy", &archive, &vocab).unwrap();
        let target = "encoder.layer.0.attention.value.bias";
        let mut changed = TensorArchive::new();
        for e in archive.entries() {
            let mut data = e.data.clone();
            if e.name == target {
                data[0] += 1.0;
            }
            changed.insert(e.name.clone(), e.dims.clone(), data).unwrap();
        }
        let err = m.verify(&changed, &vocab).unwrap_err().to_string();
        assert!(err.contains(target) && err.contains("checksum"), "{err}");

        let mut fewer = TensorArchive::new();
        for e in archive.entries().iter().filter(|e| e.name != "config.num_heads") {
            fewer.insert(e.name.clone(), e.dims.clone(), e.data.clone()).unwrap();
        }
        assert!(m.verify(&fewer, &vocab).unwrap_err().to_string().contains("config.num_heads"));

        let other = Vocabulary::with_words(["the", "event", "is", "in", "june", "."]).unwrap();
        assert!(matches!(m.verify(&archive, &other), Err(Error::Vocabulary(_))));
    }

    #[test]
    fn missing_tensor_is_named_on_describe() {
        let (archive, vocab) = exported();
        let mut partial = TensorArchive::new();
        for e in archive.entries().iter().filter(|e| !e.name.starts_with("mlm_head.decoder")) {
            partial.insert(e.name.clone(), e.dims.clone(), e.data.clone()).unwrap();
        }
        let err = ExportManifest::describe("toy", &partial, &vocab).unwrap_err().to_string();
        assert!(err.contains("mlm_head.decoder"), "{err}");
    }
}
