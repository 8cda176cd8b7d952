use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::ProbeId;
use crate::error::{Error, Result};
use crate::metrics::relative_change;
use crate::trials::ScenarioKind;

use super::config::MetricName;
use super::report::{CellReport, CellResult, EvalReport};
use super::EvalTask;

/// Change of one headline metric between two matched cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub task: EvalTask,
    pub probe: ProbeId,
    pub scenario: ScenarioKind,
    pub metric: MetricName,
    pub before: f64,
    pub after: f64,
    pub absolute_change: f64,
    /// `None` when `before` is zero.
    pub relative_change: Option<f64>,
    /// AID only: per-accent recall change in points.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_accent_recall_change: BTreeMap<String, f64>,
    /// AID only: mean over accents with nonzero prior recall of the
    /// relative recall decrease, in percent (positive means lower recall).
    #[serde(default)]
    pub average_relative_recall_reduction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub before: String,
    pub after: String,
    pub rows: Vec<MetricDelta>,
}

type Key = (EvalTask, ProbeId, ScenarioKind, Option<String>);

fn check_comparable(a: &EvalReport, b: &EvalReport) -> Result<()> {
    if a.manifest_hash != b.manifest_hash {
        return Err(Error::IncomparableReports("different manifests".into()));
    }
    if a.k != b.k {
        return Err(Error::IncomparableReports(format!("K differs ({} vs {})", a.k, b.k)));
    }
    let ta: BTreeSet<_> = a.tasks.iter().collect();
    let tb: BTreeSet<_> = b.tasks.iter().collect();
    if ta != tb {
        return Err(Error::IncomparableReports("different task sets".into()));
    }
    Ok(())
}

fn delta(before: &CellReport, after: &CellReport) -> Result<MetricDelta> {
    let (metric, x) = before.headline();
    let (_, y) = after.headline();
    let mut per_accent_recall_change = BTreeMap::new();
    let mut average_relative_recall_reduction = None;
    if let (CellResult::Aid { recall: ra, .. }, CellResult::Aid { recall: rb, .. }) = (&before.result, &after.result) {
        let mut rel = Vec::new();
        for (accent, &r0) in &ra.per_accent_recall {
            let r1 = *rb
                .per_accent_recall
                .get(accent)
                .ok_or_else(|| Error::IncomparableReports(format!("accent `{accent}` missing")))?;
            per_accent_recall_change.insert(accent.clone(), r1 - r0);
            if r0 != 0.0 {
                rel.push(relative_change(r0, r1)?);
            }
        }
        if !rel.is_empty() {
            average_relative_recall_reduction = Some(0.0 - rel.iter().sum::<f64>() / rel.len() as f64);
        }
    }
    Ok(MetricDelta {
        task: before.task,
        probe: before.probe.clone(),
        scenario: after.scenario.kind,
        metric,
        before: x,
        after: y,
        absolute_change: y - x,
        relative_change: relative_change(x, y).ok(),
        per_accent_recall_change,
        average_relative_recall_reduction,
    })
}

fn finish(before: String, after: String, rows: Vec<MetricDelta>) -> Result<ComparisonSummary> {
    if rows.is_empty() {
        return Err(Error::IncomparableReports("no evaluation cells in common".into()));
    }
    Ok(ComparisonSummary { before, after, rows })
}

/// Matches cells with identical task, probe and scenario (system
/// included) and reports the change of each headline metric from `a` to
/// `b`.
pub fn compare_systems(a: &EvalReport, b: &EvalReport) -> Result<ComparisonSummary> {
    check_comparable(a, b)?;
    let key = |c: &CellReport| -> Key { (c.task, c.probe.clone(), c.scenario.kind, c.scenario.system.clone()) };
    let in_b: BTreeMap<Key, &CellReport> = b.cells.iter().map(|c| (key(c), c)).collect();
    let mut rows = Vec::new();
    for c in &a.cells {
        if let Some(other) = in_b.get(&key(c)) {
            rows.push(delta(c, other)?);
        }
    }
    finish(a.corpus.clone(), b.corpus.clone(), rows)
}

/// Cells of `system` keyed by (task, probe, attacker scenario). The
/// baseline (`original`) stands in for every scenario.
fn select<'r>(r: &'r EvalReport, system: &str) -> BTreeMap<(EvalTask, ProbeId, ScenarioKind), &'r CellReport> {
    let mut out = BTreeMap::new();
    for c in &r.cells {
        match c.scenario.system.as_deref() {
            None if system == "original" => {
                for kind in [ScenarioKind::Ignorant, ScenarioKind::LazyInformed, ScenarioKind::Baseline] {
                    out.insert((c.task, c.probe.clone(), kind), c);
                }
            }
            Some(s) if s == system => {
                out.insert((c.task, c.probe.clone(), c.scenario.kind), c);
            }
            _ => {}
        }
    }
    out
}

/// Compares `system_a` in `a` with `system_b` in `b`, matching cells by
/// task, probe and attacker scenario. Either report may be the same.
pub fn compare_selected(a: &EvalReport, system_a: &str, b: &EvalReport, system_b: &str) -> Result<ComparisonSummary> {
    check_comparable(a, b)?;
    let sa = select(a, system_a);
    let sb = select(b, system_b);
    let mut rows = Vec::new();
    for (key, ca) in &sa {
        if let Some(cb) = sb.get(key) {
            // baseline vs baseline only once
            if ca.scenario.system.is_none() && cb.scenario.system.is_none() && key.2 != ScenarioKind::Baseline {
                continue;
            }
            let mut d = delta(ca, cb)?;
            d.scenario = key.2;
            rows.push(d);
        }
    }
    finish(system_a.to_owned(), system_b.to_owned(), rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{fairness_report, ConfusionMatrix, EerResult, RecallReport};
    use crate::pipeline::report::Provenance;
    use crate::trials::Scenario;

    fn aid_cell(system: Option<&str>, diag: &[u64]) -> CellReport {
        let labels: Vec<String> = (0..diag.len()).map(|i| format!("a{i}")).collect();
        let k = diag.len();
        let counts = (0..k)
            .map(|i| (0..k).map(|j| if i == j { diag[i] } else if j == (i + 1) % k { 100 - diag[i] } else { 0 }).collect())
            .collect();
        let cm = ConfusionMatrix::from_counts(labels, counts).unwrap();
        let recall = RecallReport::from_confusion(&cm).unwrap();
        let fairness = fairness_report(&recall, k).unwrap();
        CellReport {
            task: EvalTask::Aid,
            probe: ProbeId::new("genaid").unwrap(),
            scenario: match system {
                None => Scenario::baseline(),
                Some(s) => Scenario::ignorant(s).unwrap(),
            },
            dir: String::new(),
            result: CellResult::Aid { recall, fairness, confusion: cm, folds: 1 },
        }
    }

    fn eer_cell(system: &str, eer: f64) -> CellReport {
        CellReport {
            task: EvalTask::Av,
            probe: ProbeId::new("genaid").unwrap(),
            scenario: Scenario::lazy_informed(system).unwrap(),
            dir: String::new(),
            result: CellResult::Eer {
                eer: EerResult { eer_percent: eer, threshold: 0.0, n_target: 1, n_nontarget: 1 },
                trial_list_hash: String::new(),
                max_imbalance: 1.0,
            },
        }
    }

    fn report(cells: Vec<CellReport>) -> EvalReport {
        EvalReport {
            corpus: "c".into(),
            manifest_hash: "h".into(),
            k: 13,
            accents: vec![],
            n_utterances: 0,
            tasks: vec![EvalTask::Av, EvalTask::Aid],
            eer_method: String::new(),
            cells,
            comparisons: vec![],
            expectations: vec![],
            notes: vec![],
            provenance: Provenance {
                seed: 0,
                generator: String::new(),
                tool_version: String::new(),
                config_hash: String::new(),
                input_hashes: BTreeMap::new(),
            },
        }
    }

    const ORIGINAL: [u64; 13] = [44, 88, 78, 82, 20, 57, 80, 15, 81, 52, 76, 15, 50];
    const B4_STAR: [u64; 13] = [3, 5, 25, 25, 33, 4, 39, 1, 42, 5, 46, 1, 10];

    #[test]
    fn table_rows_relative_war_change() {
        let r = report(vec![aid_cell(None, &ORIGINAL), aid_cell(Some("b4s"), &B4_STAR)]);
        let s = compare_selected(&r, "original", &r, "b4s").unwrap();
        assert_eq!(s.rows.len(), 1);
        let d = &s.rows[0];
        assert!((d.before - 738.0 / 13.0).abs() < 1e-9);
        assert!((d.after - 239.0 / 13.0).abs() < 1e-9);
        assert!((d.relative_change.unwrap() - 100.0 * (239.0 - 738.0) / 738.0).abs() < 1e-9);
        assert_eq!(d.per_accent_recall_change["a0"], -41.0);
        assert!(d.average_relative_recall_reduction.unwrap() > 0.0);
    }

    #[test]
    fn eer_relative_change() {
        let a = report(vec![eer_cell("b4", 38.8)]);
        let b = report(vec![eer_cell("b4s", 43.4)]);
        let s = compare_selected(&a, "b4", &b, "b4s").unwrap();
        assert!((s.rows[0].relative_change.unwrap() - 11.855670103).abs() < 1e-8);
        assert!(matches!(compare_systems(&a, &b), Err(Error::IncomparableReports(_))));
    }

    #[test]
    fn identical_reports_have_zero_deltas() {
        let r = report(vec![aid_cell(None, &ORIGINAL), eer_cell("x", 12.5)]);
        let s = compare_systems(&r, &r).unwrap();
        assert_eq!(s.rows.len(), 2);
        for d in &s.rows {
            assert_eq!(d.absolute_change, 0.0);
            assert_eq!(d.relative_change, Some(0.0));
            assert!(d.per_accent_recall_change.values().all(|v| *v == 0.0));
            assert!(d.average_relative_recall_reduction.is_none_or(|v| v == 0.0));
        }
    }

    #[test]
    fn mismatched_corpora() {
        let a = report(vec![eer_cell("x", 1.0)]);
        let mut b = a.clone();
        b.manifest_hash = "other".into();
        assert!(matches!(compare_systems(&a, &b), Err(Error::IncomparableReports(_))));
        let mut c = a.clone();
        c.k = 4;
        assert!(matches!(compare_systems(&a, &c), Err(Error::IncomparableReports(_))));
        let mut d = a.clone();
        d.tasks = vec![EvalTask::Sv];
        assert!(matches!(compare_systems(&a, &d), Err(Error::IncomparableReports(_))));
    }
}
