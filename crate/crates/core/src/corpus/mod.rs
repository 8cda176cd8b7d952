//! Utterance inventory, condition/probe identifiers and embedding sets.

mod aemb;
mod manifest;

pub use aemb::{
    load_embeddings, read_aemb, read_meta, sidecar_path, write_aemb, write_embeddings,
    EmbeddingMeta, AEMB_HEADER_LEN, AEMB_MAGIC, AEMB_VERSION,
};
pub use manifest::{load_manifest, CorpusManifest, UtteranceMeta};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ids in manifests are restricted to `[A-Za-z0-9_.-]+`.
pub fn is_valid_id(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-'))
}

const ORIGINAL: &str = "original";
const ANON_PREFIX: &str = "anon:";

/// Processing state of an utterance: `original` or `anon:<system>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ConditionId(String);

impl ConditionId {
    pub fn original() -> Self {
        ConditionId(ORIGINAL.to_owned())
    }

    pub fn anon(system: &str) -> Result<Self> {
        Self::parse(&format!("{ANON_PREFIX}{system}"))
    }

    pub fn parse(name: &str) -> Result<Self> {
        if name == ORIGINAL {
            return Ok(Self::original());
        }
        match name.strip_prefix(ANON_PREFIX) {
            Some(system) if is_valid_id(system) => Ok(ConditionId(name.to_owned())),
            _ => Err(Error::ConditionError(format!(
                "`{name}` is neither `original` nor `anon:<system>`"
            ))),
        }
    }

    pub fn is_original(&self) -> bool {
        self.0 == ORIGINAL
    }

    /// The anonymisation system name, if any.
    pub fn system(&self) -> Option<&str> {
        self.0.strip_prefix(ANON_PREFIX)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ConditionId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Self::parse(&s)
    }
}

impl From<ConditionId> for String {
    fn from(c: ConditionId) -> String {
        c.0
    }
}

impl fmt::Display for ConditionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Name of an embedding extractor ("evpc", "wnt", "genaid", ...).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ProbeId(String);

impl ProbeId {
    pub fn new(name: &str) -> Result<Self> {
        if is_valid_id(name) {
            Ok(ProbeId(name.to_owned()))
        } else {
            Err(Error::InvalidId(name.to_owned()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ProbeId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Self::new(&s)
    }
}

impl From<ProbeId> for String {
    fn from(p: ProbeId) -> String {
        p.0
    }
}

impl fmt::Display for ProbeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Fixed-dimension f32 vectors for one (probe, condition) pair, keyed by
/// utterance id. Records are held in byte-wise id order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub probe: ProbeId,
    pub condition: ConditionId,
    dim: usize,
    records: BTreeMap<String, Vec<f32>>,
}

impl EmbeddingSet {
    pub fn new(probe: ProbeId, condition: ConditionId, dim: usize) -> Self {
        Self {
            probe,
            condition,
            dim,
            records: BTreeMap::new(),
        }
    }

    /// Inserts a vector after checking length, finiteness and norm.
    pub fn insert(&mut self, utt_id: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        let utt_id = utt_id.into();
        if vector.len() != self.dim {
            return Err(Error::DimMismatch(self.dim, vector.len()));
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteEmbedding(utt_id));
        }
        if vector.iter().all(|&x| x == 0.0) {
            return Err(Error::DegenerateEmbedding(utt_id));
        }
        if self.records.contains_key(&utt_id) {
            return Err(Error::DuplicateUtterance(utt_id));
        }
        self.records.insert(utt_id, vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, utt_id: &str) -> Option<&[f32]> {
        self.records.get(utt_id).map(Vec::as_slice)
    }

    /// Records in byte-wise ascending utterance id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.records.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Same vectors under a different condition label.
    pub fn with_condition(mut self, condition: ConditionId) -> Self {
        self.condition = condition;
        self
    }

    /// Fails with `UnknownUtterance` if a record is absent from the manifest.
    pub fn check_against(&self, manifest: &CorpusManifest) -> Result<()> {
        match self.records.keys().find(|id| manifest.get(id).is_none()) {
            Some(id) => Err(Error::UnknownUtterance(id.clone())),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_parsing() {
        assert!(ConditionId::parse("original").unwrap().is_original());
        let c = ConditionId::parse("anon:b4").unwrap();
        assert_eq!(c.system(), Some("b4"));
        assert!(ConditionId::parse("Original").is_err());
        assert!(ConditionId::parse("anon:").is_err());
        assert!(ConditionId::parse("").is_err());
    }

    #[test]
    fn embedding_set_rejects_bad_vectors() {
        let mut s = EmbeddingSet::new(
            ProbeId::new("p").unwrap(),
            ConditionId::original(),
            2,
        );
        assert!(matches!(
            s.insert("a", vec![f32::NAN, 1.0]),
            Err(Error::NonFiniteEmbedding(_))
        ));
        assert!(matches!(
            s.insert("a", vec![0.0, 0.0]),
            Err(Error::DegenerateEmbedding(_))
        ));
        assert!(matches!(
            s.insert("a", vec![1.0]),
            Err(Error::DimMismatch(2, 1))
        ));
        s.insert("a", vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            s.insert("a", vec![1.0, 0.0]),
            Err(Error::DuplicateUtterance(_))
        ));
    }
}
