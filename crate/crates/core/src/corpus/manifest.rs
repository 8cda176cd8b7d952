use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::is_valid_id;
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 3] = ["utt_id", "speaker_id", "accent"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtteranceMeta {
    pub utt_id: String,
    pub speaker_id: String,
    pub accent: String,
}

/// Validated utterance inventory with derived accent and speaker sets.
#[derive(Debug, Clone)]
pub struct CorpusManifest {
    utterances: Vec<UtteranceMeta>,
    accents: Vec<String>,
    speakers: Vec<String>,
    index: HashMap<String, usize>,
    speaker_accent: BTreeMap<String, String>,
}

impl PartialEq for CorpusManifest {
    fn eq(&self, other: &Self) -> bool {
        self.utterances == other.utterances
    }
}

impl CorpusManifest {
    pub fn new(utterances: Vec<UtteranceMeta>) -> Result<Self> {
        let mut index = HashMap::with_capacity(utterances.len());
        let mut speaker_accent: BTreeMap<String, String> = BTreeMap::new();
        for (i, u) in utterances.iter().enumerate() {
            for (field, value) in [
                ("utt_id", &u.utt_id),
                ("speaker_id", &u.speaker_id),
                ("accent", &u.accent),
            ] {
                if !is_valid_id(value) {
                    return Err(Error::MalformedManifest {
                        line: i + 2,
                        reason: format!("invalid {field} `{value}`"),
                    });
                }
            }
            if index.insert(u.utt_id.clone(), i).is_some() {
                return Err(Error::DuplicateUtterance(u.utt_id.clone()));
            }
            match speaker_accent.get(&u.speaker_id) {
                Some(a) if *a != u.accent => {
                    return Err(Error::InconsistentAccent {
                        speaker: u.speaker_id.clone(),
                        first: a.clone(),
                        second: u.accent.clone(),
                    })
                }
                Some(_) => {}
                None => {
                    speaker_accent.insert(u.speaker_id.clone(), u.accent.clone());
                }
            }
        }
        let accents: BTreeSet<&String> = utterances.iter().map(|u| &u.accent).collect();
        let accents = accents.into_iter().cloned().collect();
        let speakers = speaker_accent.keys().cloned().collect();
        Ok(Self {
            utterances,
            accents,
            speakers,
            index,
            speaker_accent,
        })
    }

    pub fn utterances(&self) -> &[UtteranceMeta] {
        &self.utterances
    }

    /// Distinct accents, sorted.
    pub fn accents(&self) -> &[String] {
        &self.accents
    }

    /// Distinct speakers, sorted.
    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    /// Number of accent classes.
    pub fn k(&self) -> usize {
        self.accents.len()
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn get(&self, utt_id: &str) -> Option<&UtteranceMeta> {
        self.index.get(utt_id).map(|&i| &self.utterances[i])
    }

    pub fn accent_of_speaker(&self, speaker: &str) -> Option<&str> {
        self.speaker_accent.get(speaker).map(String::as_str)
    }

    /// Utterance ids per speaker, each list sorted.
    pub fn utterances_by_speaker(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut out: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for u in &self.utterances {
            out.entry(&u.speaker_id).or_default().push(&u.utt_id);
        }
        out.values_mut().for_each(|v| v.sort_unstable());
        out
    }

    /// Utterance ids per accent, each list sorted.
    pub fn utterances_by_accent(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut out: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for u in &self.utterances {
            out.entry(&u.accent).or_default().push(&u.utt_id);
        }
        out.values_mut().for_each(|v| v.sort_unstable());
        out
    }

    /// Speakers per accent, each list sorted.
    pub fn speakers_by_accent(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut out: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (s, a) in &self.speaker_accent {
            out.entry(a.as_str()).or_default().push(s.as_str());
        }
        out
    }

    /// Number of utterances per accent.
    pub fn accent_counts(&self) -> BTreeMap<&str, usize> {
        let mut out = BTreeMap::new();
        for u in &self.utterances {
            *out.entry(u.accent.as_str()).or_insert(0) += 1;
        }
        out
    }

    /// Canonical CSV text (row order preserved).
    pub fn to_csv(&self) -> String {
        let mut out = MANIFEST_HEADER.join(",");
        out.push('\n');
        for u in &self.utterances {
            out.push_str(&format!("{},{},{}\n", u.utt_id, u.speaker_id, u.accent));
        }
        out
    }

    /// SHA-256 over the sorted set of rows, so row order does not matter.
    pub fn content_hash(&self) -> String {
        let mut rows: Vec<&UtteranceMeta> = self.utterances.iter().collect();
        rows.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
        let mut h = Sha256::new();
        for u in rows {
            h.update(format!("{},{},{}\n", u.utt_id, u.speaker_id, u.accent).as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let wrap = |source| Error::WriteError {
            path: path.to_owned(),
            source,
        };
        let mut f = std::fs::File::create(path).map_err(wrap)?;
        f.write_all(self.to_csv().as_bytes()).map_err(wrap)
    }
}

/// Reads a `utt_id,speaker_id,accent` CSV manifest.
pub fn load_manifest(path: &Path) -> Result<CorpusManifest> {
    let data = std::fs::read(path).map_err(|source| Error::ReadError {
        path: path.to_owned(),
        source,
    })?;
    parse_manifest(&data)
}

pub fn parse_manifest(data: &[u8]) -> Result<CorpusManifest> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .quoting(false)
        .from_reader(data);
    let header = reader.headers().map_err(|e| Error::MalformedManifest {
        line: 1,
        reason: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::MalformedManifest {
            line: 1,
            reason: format!("expected header `{}`", MANIFEST_HEADER.join(",")),
        });
    }
    let mut utterances = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::MalformedManifest {
            line,
            reason: e.to_string(),
        })?;
        if record.len() != 3 {
            return Err(Error::MalformedManifest {
                line,
                reason: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let field = |j: usize| -> Result<String> {
            let v = &record[j];
            if v.is_empty() {
                Err(Error::MalformedManifest {
                    line,
                    reason: format!("empty {}", MANIFEST_HEADER[j]),
                })
            } else {
                Ok(v.to_owned())
            }
        };
        utterances.push(UtteranceMeta {
            utt_id: field(0)?,
            speaker_id: field(1)?,
            accent: field(2)?,
        });
    }
    CorpusManifest::new(utterances)
}
