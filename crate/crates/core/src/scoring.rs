//! Cosine scoring of trial lists.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ConditionId, EmbeddingSet, ProbeId};
use crate::error::{Error, Result};
use crate::trials::{Label, TrialList};
use crate::util::{format_significant, read_to_string, to_json_pretty, write_file};

/// Embedding sets keyed by (probe, condition).
pub type EmbeddingTable = BTreeMap<(ProbeId, ConditionId), EmbeddingSet>;

pub fn insert_set(table: &mut EmbeddingTable, set: EmbeddingSet) {
    table.insert((set.probe.clone(), set.condition.clone()), set);
}

/// Cosine similarity with f64 accumulation, clamped to [-1, 1].
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch(u.len(), v.len()));
    }
    let (mut dot, mut uu, mut vv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Err(Error::DegenerateEmbedding(String::new()));
    }
    Ok((dot / (uu * vv).sqrt()).clamp(-1.0, 1.0))
}

/// One score per trial, in trial order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    /// Content hash of the scored trial list.
    pub trial_list_ref: String,
    pub probe: ProbeId,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreSetMeta {
    pub trial_list_ref: String,
    pub probe: ProbeId,
    pub count: usize,
}

pub const SCORES_HEADER: &str = "trial_index,score";

impl ScoreSet {
    /// Scores split by the list's labels: `(targets, nontargets)`.
    pub fn by_label(&self, list: &TrialList) -> (Vec<f64>, Vec<f64>) {
        let mut tar = Vec::new();
        let mut non = Vec::new();
        for (t, &s) in list.trials.iter().zip(&self.scores) {
            match t.label {
                Label::Target => tar.push(s),
                Label::NonTarget => non.push(s),
            }
        }
        (tar, non)
    }

    /// CSV with scores at 9 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(16 * (self.scores.len() + 1));
        out.push_str(SCORES_HEADER);
        out.push('\n');
        for (i, s) in self.scores.iter().enumerate() {
            out.push_str(&format!("{i},{}\n", format_significant(*s, 9)));
        }
        out
    }

    /// Scores exactly as they read back from [`ScoreSet::to_csv`].
    pub fn as_serialized(&self) -> Vec<f64> {
        self.scores
            .iter()
            .map(|s| format_significant(*s, 9).parse().expect("formatted float parses"))
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_csv().as_bytes())?;
        let meta = ScoreSetMeta {
            trial_list_ref: self.trial_list_ref.clone(),
            probe: self.probe.clone(),
            count: self.scores.len(),
        };
        write_file(&path.with_extension("meta.json"), to_json_pretty(&meta)?.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let meta: ScoreSetMeta =
            serde_json::from_str(&read_to_string(&path.with_extension("meta.json"))?)?;
        let text = read_to_string(path)?;
        let mut lines = text.lines();
        let bad = |why: String| Error::FormatError(format!("{}: {why}", path.display()));
        if lines.next() != Some(SCORES_HEADER) {
            return Err(bad(format!("expected header `{SCORES_HEADER}`")));
        }
        let mut scores = Vec::with_capacity(meta.count);
        for (i, line) in lines.enumerate() {
            let (idx, score) = line
                .split_once(',')
                .ok_or_else(|| bad(format!("line {}: expected 2 fields", i + 2)))?;
            if idx.parse::<usize>().ok() != Some(i) {
                return Err(bad(format!("line {}: trial index out of order", i + 2)));
            }
            let score: f64 = score
                .parse()
                .map_err(|_| bad(format!("line {}: bad score `{score}`", i + 2)))?;
            scores.push(score);
        }
        if scores.len() != meta.count {
            return Err(bad(format!("{} scores, sidecar says {}", scores.len(), meta.count)));
        }
        Ok(ScoreSet {
            trial_list_ref: meta.trial_list_ref,
            probe: meta.probe,
            scores,
        })
    }
}

fn lookup<'a>(
    table: &'a EmbeddingTable,
    probe: &ProbeId,
    condition: &ConditionId,
) -> Result<&'a EmbeddingSet> {
    table
        .get(&(probe.clone(), condition.clone()))
        .ok_or_else(|| Error::MissingEmbeddingSet {
            probe: probe.to_string(),
            condition: condition.to_string(),
        })
}

/// Scores every trial with embeddings from `probe`. Per-trial work is
/// independent, so the result is identical for any thread count.
pub fn score_trials<'a>(
    list: &TrialList,
    probe: &ProbeId,
    table: &'a EmbeddingTable,
) -> Result<ScoreSet> {
    let enrol = lookup(table, probe, &list.scenario.enrol_condition())?;
    let test = lookup(table, probe, &list.scenario.test_condition())?;
    if enrol.dim() != test.dim() {
        return Err(Error::DimMismatch(enrol.dim(), test.dim()));
    }
    let enrol_index: HashMap<&str, &'a [f32]> = enrol.iter().collect();
    let test_index: HashMap<&str, &'a [f32]> = test.iter().collect();
    let fetch = |index: &HashMap<&str, &'a [f32]>, set: &EmbeddingSet, utt: &str| -> Result<&'a [f32]> {
        index.get(utt).copied().ok_or_else(|| Error::MissingEmbedding {
            utt_id: utt.to_owned(),
            condition: set.condition.to_string(),
            probe: probe.to_string(),
        })
    };
    let scores = list
        .trials
        .par_iter()
        .map(|t| {
            cosine(
                fetch(&enrol_index, enrol, &t.enrol_utt)?,
                fetch(&test_index, test, &t.test_utt)?,
            )
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ScoreSet {
        trial_list_ref: list.content_hash(),
        probe: probe.clone(),
        scores,
    })
}
