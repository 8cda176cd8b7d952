//! EER, per-accent recall, weighted average recall (WAR), the chance-level
//! WAR target, fairness summaries and relative change.

mod confusion;
mod eer;

pub use confusion::ConfusionMatrix;
pub use eer::{compute_eer, eer, roc_points, EerResult, RocPoint};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::format_2dp;

/// R_i = 100 · TP_i / N_i.
pub fn recall(cm: &ConfusionMatrix, accent: &str) -> Result<f64> {
    let i = cm
        .index_of(accent)
        .ok_or_else(|| Error::UnknownAccent(accent.to_owned()))?;
    let n = cm.row_sum(i);
    if n == 0 {
        return Err(Error::EmptyAccentClass(accent.to_owned()));
    }
    Ok(100.0 * cm.counts()[i][i] as f64 / n as f64)
}

/// Σ N_i R_i / Σ N_i over `(N_i, R_i)` pairs, R_i in percent.
pub fn weighted_average_recall(classes: &[(u64, f64)]) -> f64 {
    let total: u64 = classes.iter().map(|(n, _)| n).sum();
    let weighted: f64 = classes.iter().map(|&(n, r)| n as f64 * r).sum();
    weighted / total as f64
}

/// Weighted average recall over all classes of `cm`, in percent.
pub fn war(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.labels().is_empty() {
        return Err(Error::InvalidClassCount);
    }
    let classes = cm
        .labels()
        .iter()
        .enumerate()
        .map(|(i, label)| Ok((cm.row_sum(i), recall(cm, label)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(weighted_average_recall(&classes))
}

/// WAR of a classifier that carries no accent information: 100 / k.
pub fn war_target(k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidClassCount);
    }
    Ok(100.0 / k as f64)
}

/// Signed change from `before` to `after`, in percent of `before`.
pub fn relative_change(before: f64, after: f64) -> Result<f64> {
    if before == 0.0 {
        return Err(Error::DivisionByZeroBaseline);
    }
    Ok(100.0 * (after - before) / before)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub per_accent_recall: BTreeMap<String, f64>,
    pub war_percent: f64,
    pub n_per_accent: BTreeMap<String, u64>,
}

impl RecallReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self> {
        let mut per_accent_recall = BTreeMap::new();
        let mut n_per_accent = BTreeMap::new();
        for (i, label) in cm.labels().iter().enumerate() {
            per_accent_recall.insert(label.clone(), recall(cm, label)?);
            n_per_accent.insert(label.clone(), cm.row_sum(i));
        }
        Ok(RecallReport {
            per_accent_recall,
            war_percent: war(cm)?,
            n_per_accent,
        })
    }

    /// `accent,n,recall` rows plus a final `WAR` row, 2 decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("accent,n,recall\n");
        for (accent, r) in &self.per_accent_recall {
            out.push_str(&format!("{accent},{},{}\n", self.n_per_accent[accent], format_2dp(*r)));
        }
        let total: u64 = self.n_per_accent.values().sum();
        out.push_str(&format!("WAR,{total},{}\n", format_2dp(self.war_percent)));
        out
    }
}

/// Spread of per-accent recall, in percentage points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub min_recall: f64,
    pub max_recall: f64,
    pub recall_range: f64,
    /// Population standard deviation.
    pub recall_stddev: f64,
    pub war_target: f64,
    /// WAR minus the chance-level target.
    pub target_gap: f64,
}

pub fn fairness_report(rr: &RecallReport, k: usize) -> Result<FairnessReport> {
    let target = war_target(k)?;
    let recalls: Vec<f64> = rr.per_accent_recall.values().copied().collect();
    if recalls.is_empty() {
        return Err(Error::InvalidClassCount);
    }
    let min = recalls.iter().copied().fold(f64::INFINITY, f64::min);
    let max = recalls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = recalls.iter().sum::<f64>() / recalls.len() as f64;
    let var = recalls.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / recalls.len() as f64;
    Ok(FairnessReport {
        min_recall: min,
        max_recall: max,
        recall_range: max - min,
        recall_stddev: var.sqrt(),
        war_target: target,
        target_gap: rr.war_percent - target,
    })
}
