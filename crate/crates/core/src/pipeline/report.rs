use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::ProbeId;
use crate::metrics::{ConfusionMatrix, EerResult, FairnessReport, RecallReport};
use crate::trials::{Scenario, ScenarioKind};
use crate::util::format_2dp;

use super::compare::ComparisonSummary;
use super::config::MetricName;
use super::EvalTask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CellResult {
    Eer {
        eer: EerResult,
        trial_list_hash: String,
        /// max/min targets per speaker (SV) or accent (AV); `null` if
        /// some group had none.
        #[serde(with = "crate::util::finite_or_null")]
        max_imbalance: f64,
    },
    Aid {
        recall: RecallReport,
        fairness: FairnessReport,
        confusion: ConfusionMatrix,
        folds: usize,
    },
}

/// One evaluated (task, probe, scenario) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub task: EvalTask,
    pub probe: ProbeId,
    pub scenario: Scenario,
    /// Artifact directory, relative to the output directory.
    pub dir: String,
    pub result: CellResult,
}

impl CellReport {
    pub fn metric(&self, m: MetricName) -> Option<f64> {
        match (&self.result, m) {
            (CellResult::Eer { eer, .. }, MetricName::Eer) => Some(eer.eer_percent),
            (CellResult::Aid { recall, .. }, MetricName::War) => Some(recall.war_percent),
            (CellResult::Aid { fairness, .. }, m) => match m {
                MetricName::MinRecall => Some(fairness.min_recall),
                MetricName::MaxRecall => Some(fairness.max_recall),
                MetricName::RecallRange => Some(fairness.recall_range),
                MetricName::RecallStddev => Some(fairness.recall_stddev),
                MetricName::TargetGap => Some(fairness.target_gap),
                _ => None,
            },
            _ => None,
        }
    }

    /// The headline figure: EER for verification, WAR for identification.
    pub fn headline(&self) -> (MetricName, f64) {
        match &self.result {
            CellResult::Eer { eer, .. } => (MetricName::Eer, eer.eer_percent),
            CellResult::Aid { recall, .. } => (MetricName::War, recall.war_percent),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationResult {
    pub name: String,
    pub value: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub advisory: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub generator: String,
    pub tool_version: String,
    /// SHA-256 over the configuration (minus worker count) and the hashes
    /// of every input file.
    pub config_hash: String,
    pub input_hashes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub corpus: String,
    pub manifest_hash: String,
    pub k: usize,
    pub accents: Vec<String>,
    pub n_utterances: usize,
    pub tasks: Vec<EvalTask>,
    pub eer_method: String,
    pub cells: Vec<CellReport>,
    pub comparisons: Vec<ComparisonSummary>,
    pub expectations: Vec<ExpectationResult>,
    pub notes: Vec<String>,
    pub provenance: Provenance,
}

impl EvalReport {
    pub fn find(&self, task: EvalTask, probe: &str, kind: ScenarioKind, system: Option<&str>) -> Option<&CellReport> {
        self.cells.iter().find(|c| {
            c.task == task
                && c.probe.as_str() == probe
                && c.scenario.kind == kind
                && c.scenario.system.as_deref() == system
        })
    }
}

fn row(out: &mut String, cells: &[String]) {
    out.push('|');
    for c in cells {
        let _ = write!(out, " {c} |");
    }
    out.push('\n');
}

fn header(out: &mut String, cells: &[String]) {
    row(out, cells);
    row(out, &vec!["---".to_owned(); cells.len()]);
}

fn task_title(task: EvalTask) -> &'static str {
    match task {
        EvalTask::Sv => "Speaker verification EER (%)",
        EvalTask::Av => "Accent verification EER (%)",
        EvalTask::Aid => "Accent identification recall (%)",
    }
}

fn systems_of<'a>(cells: &[&'a CellReport]) -> Vec<&'a str> {
    let set: BTreeSet<&str> = cells.iter().filter_map(|c| c.scenario.system.as_deref()).collect();
    set.into_iter().collect()
}

/// Verification grid: one row per system (the baseline as `Original`),
/// one column per probe and attacker scenario.
fn eer_table(out: &mut String, cells: &[&CellReport]) {
    let probes: BTreeSet<&ProbeId> = cells.iter().map(|c| &c.probe).collect();
    let attack_kinds: BTreeSet<ScenarioKind> = cells
        .iter()
        .map(|c| c.scenario.kind)
        .filter(|k| *k != ScenarioKind::Baseline)
        .collect();
    let kinds: Vec<ScenarioKind> = if attack_kinds.is_empty() {
        vec![ScenarioKind::Baseline]
    } else {
        attack_kinds.into_iter().collect()
    };
    let mut head = vec!["System".to_owned()];
    for p in &probes {
        for k in &kinds {
            head.push(format!("{p} {}", k.short()));
        }
    }
    header(out, &head);
    let value = |probe: &ProbeId, kind: ScenarioKind, system: Option<&str>| {
        cells
            .iter()
            .find(|c| &c.probe == probe && c.scenario.kind == kind && c.scenario.system.as_deref() == system)
            .map_or("–".to_owned(), |c| format_2dp(c.headline().1))
    };
    if cells.iter().any(|c| c.scenario.kind == ScenarioKind::Baseline) {
        let mut r = vec!["Original".to_owned()];
        for p in &probes {
            for _ in &kinds {
                r.push(value(p, ScenarioKind::Baseline, None));
            }
        }
        row(out, &r);
    }
    for s in systems_of(cells) {
        let mut r = vec![s.to_owned()];
        for p in &probes {
            for k in &kinds {
                r.push(value(p, *k, Some(s)));
            }
        }
        row(out, &r);
    }
}

fn row_label(c: &CellReport) -> String {
    match &c.scenario.system {
        None => "Original".to_owned(),
        Some(s) => format!("{s} ({})", c.scenario.kind.short()),
    }
}

fn aid_tables(out: &mut String, cells: &[&CellReport], accents: &[String]) {
    let probes: BTreeSet<&ProbeId> = cells.iter().map(|c| &c.probe).collect();
    for p in probes {
        let mut rows: Vec<&CellReport> = cells.iter().copied().filter(|c| &c.probe == p).collect();
        // Original first, then systems.
        rows.sort_by_key(|c| (c.scenario.system.is_some(), c.scenario.clone()));
        let _ = writeln!(out, "Probe `{p}`\n");
        let mut head = vec!["System".to_owned()];
        head.extend(accents.iter().cloned());
        head.push("WAR".to_owned());
        header(out, &head);
        for c in &rows {
            if let CellResult::Aid { recall, .. } = &c.result {
                let mut r = vec![row_label(c)];
                r.extend(accents.iter().map(|a| {
                    recall.per_accent_recall.get(a).map_or("–".to_owned(), |v| format_2dp(*v))
                }));
                r.push(format_2dp(recall.war_percent));
                row(out, &r);
            }
        }
        out.push('\n');
        header(
            out,
            &["System", "Min", "Max", "Range", "Std", "WAR target", "Target gap"].map(String::from),
        );
        for c in &rows {
            if let CellResult::Aid { fairness: f, .. } = &c.result {
                row(
                    out,
                    &[
                        row_label(c),
                        format_2dp(f.min_recall),
                        format_2dp(f.max_recall),
                        format_2dp(f.recall_range),
                        format_2dp(f.recall_stddev),
                        format_2dp(f.war_target),
                        format_2dp(f.target_gap),
                    ],
                );
            }
        }
        out.push('\n');
    }
}

fn opt_2dp(x: Option<f64>) -> String {
    x.map_or("–".to_owned(), format_2dp)
}

/// Markdown summary. Every number is the 2-decimal rendering of a value
/// stored in the JSON report.
pub fn render_markdown(r: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Evaluation report: {}\n", r.corpus);
    let _ = writeln!(
        out,
        "{} utterances, K = {} accents, manifest `{}`.\n",
        r.n_utterances,
        r.k,
        &r.manifest_hash[..16.min(r.manifest_hash.len())]
    );
    for task in &r.tasks {
        let cells: Vec<&CellReport> = r.cells.iter().filter(|c| c.task == *task).collect();
        if cells.is_empty() {
            continue;
        }
        let _ = writeln!(out, "## {}\n", task_title(*task));
        match task {
            EvalTask::Sv | EvalTask::Av => eer_table(&mut out, &cells),
            EvalTask::Aid => aid_tables(&mut out, &cells, &r.accents),
        }
        out.push('\n');
    }
    if !r.comparisons.is_empty() {
        let _ = writeln!(out, "## Comparisons\n");
        for c in &r.comparisons {
            let _ = writeln!(out, "`{}` → `{}`\n", c.before, c.after);
            header(
                &mut out,
                &["Task", "Probe", "Scenario", "Metric", "Before", "After", "Change", "Relative (%)", "Avg. recall reduction (%)"]
                    .map(String::from),
            );
            for d in &c.rows {
                row(
                    &mut out,
                    &[
                        d.task.to_string(),
                        d.probe.to_string(),
                        d.scenario.short().to_owned(),
                        d.metric.as_str().to_uppercase(),
                        format_2dp(d.before),
                        format_2dp(d.after),
                        format_2dp(d.absolute_change),
                        opt_2dp(d.relative_change),
                        opt_2dp(d.average_relative_recall_reduction),
                    ],
                );
            }
            out.push('\n');
        }
    }
    if !r.expectations.is_empty() {
        let _ = writeln!(out, "## Expectations\n");
        header(&mut out, &["Name", "Value", "Min", "Max", "Result"].map(String::from));
        for e in &r.expectations {
            let verdict = match (e.passed, e.advisory) {
                (true, _) => "PASS",
                (false, true) => "FAIL (advisory)",
                (false, false) => "FAIL",
            };
            row(
                &mut out,
                &[e.name.clone(), opt_2dp(e.value), opt_2dp(e.min), opt_2dp(e.max), verdict.to_owned()],
            );
        }
        out.push('\n');
    }
    if !r.notes.is_empty() {
        let _ = writeln!(out, "## Notes\n");
        for n in &r.notes {
            let _ = writeln!(out, "- {n}");
        }
        out.push('\n');
    }
    let p = &r.provenance;
    let _ = writeln!(out, "## Provenance\n");
    let _ = writeln!(out, "```");
    let _ = writeln!(out, "seed          {}", p.seed);
    let _ = writeln!(out, "generator     {}", p.generator);
    let _ = writeln!(out, "tool version  {}", p.tool_version);
    let _ = writeln!(out, "config hash   {}", p.config_hash);
    let _ = writeln!(out, "eer method    {}", r.eer_method);
    for (path, hash) in &p.input_hashes {
        let _ = writeln!(out, "input         {hash}  {path}");
    }
    let _ = writeln!(out, "```");
    out
}
