use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{is_valid_id, ConditionId, ProbeId};
use crate::error::{Error, Result};
use crate::trials::{Scenario, ScenarioKind, TargetQuota};

use super::EvalTask;

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingEntry {
    pub probe: ProbeId,
    pub condition: ConditionId,
    pub path: PathBuf,
}

/// A named pair of systems whose metrics are reported side by side.
/// `original` names the no-anonymisation baseline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparePair {
    pub before: String,
    pub after: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Eer,
    War,
    MinRecall,
    MaxRecall,
    RecallRange,
    RecallStddev,
    TargetGap,
}

impl MetricName {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Eer => "eer",
            MetricName::War => "war",
            MetricName::MinRecall => "min_recall",
            MetricName::MaxRecall => "max_recall",
            MetricName::RecallRange => "recall_range",
            MetricName::RecallStddev => "recall_stddev",
            MetricName::TargetGap => "target_gap",
        }
    }
}

/// A tolerance on one reported figure. Advisory expectations only fail a
/// run in strict mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub name: String,
    pub task: EvalTask,
    pub probe: ProbeId,
    pub scenario: ScenarioKind,
    #[serde(default)]
    pub system: Option<String>,
    pub metric: MetricName,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
    #[serde(default)]
    pub advisory: bool,
}

fn default_ratio() -> usize {
    1
}

fn default_folds() -> usize {
    1
}

fn default_corpus() -> String {
    "corpus".into()
}

/// A run configuration as written in TOML. Paths are relative to the
/// directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_corpus")]
    pub corpus: String,
    pub manifest: PathBuf,
    pub seed: u64,
    pub tasks: Vec<EvalTask>,
    /// Probes to evaluate; all probes in `embeddings` when absent.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub probes: Vec<ProbeId>,
    /// Anonymisation systems, each needing `anon:<system>` embeddings.
    #[serde(default)]
    pub systems: Vec<String>,
    pub scenarios: Vec<ScenarioKind>,
    #[serde(default = "default_ratio")]
    pub nontarget_per_target: usize,
    /// Same-accent targets kept per accent in AV lists; all when absent.
    #[serde(default)]
    pub av_targets_per_accent: Option<usize>,
    /// Speaker-disjoint folds for AID when training and evaluation share a
    /// condition; 1 disables cross-validation.
    #[serde(default = "default_folds")]
    pub aid_folds: usize,
    pub embeddings: Vec<EmbeddingEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compare: Vec<ComparePair>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expect: Vec<Expectation>,
    /// Directory the config was read from; paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.base_dir = base_dir.to_owned();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read `{}`: {e}", path.display())))?;
        let base = path.parent().map(Path::to_owned).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_owned()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn target_quota(&self) -> TargetQuota {
        self.av_targets_per_accent
            .map_or(TargetQuota::Exhaustive, TargetQuota::PerAccent)
    }

    /// Probes to evaluate, sorted.
    pub fn probe_list(&self) -> Vec<ProbeId> {
        let set: BTreeSet<ProbeId> = if self.probes.is_empty() {
            self.embeddings.iter().map(|e| e.probe.clone()).collect()
        } else {
            self.probes.iter().cloned().collect()
        };
        set.into_iter().collect()
    }

    /// Scenarios to evaluate: the baseline once if requested, then every
    /// other requested kind for every system, in sorted order.
    pub fn scenario_list(&self) -> Result<Vec<Scenario>> {
        let kinds: BTreeSet<ScenarioKind> = self.scenarios.iter().copied().collect();
        let systems: BTreeSet<&str> = self.systems.iter().map(String::as_str).collect();
        let mut out = Vec::new();
        for kind in kinds {
            if kind == ScenarioKind::Baseline {
                out.push(Scenario::baseline());
                continue;
            }
            for system in &systems {
                out.push(Scenario::new(kind, Some(system))?);
            }
        }
        out.sort();
        Ok(out)
    }

    /// Checks everything that can be checked without reading data files
    /// beyond their existence.
    pub fn validate(&self) -> Result<()> {
        if !is_valid_id(&self.corpus) {
            return Err(config_err(format!("invalid corpus name `{}`", self.corpus)));
        }
        if self.tasks.is_empty() {
            return Err(config_err("no tasks requested"));
        }
        if self.scenarios.is_empty() {
            return Err(config_err("no scenarios requested"));
        }
        if self.nontarget_per_target == 0 {
            return Err(config_err("nontarget_per_target must be at least 1"));
        }
        if self.av_targets_per_accent == Some(0) {
            return Err(config_err("av_targets_per_accent must be at least 1"));
        }
        if self.aid_folds == 0 {
            return Err(config_err("aid_folds must be at least 1"));
        }
        for s in &self.systems {
            if s == "original" || ConditionId::anon(s).is_err() {
                return Err(config_err(format!("invalid system name `{s}`")));
            }
        }
        let needs_system = self.scenarios.iter().any(|k| *k != ScenarioKind::Baseline);
        if needs_system && self.systems.is_empty() {
            return Err(config_err("anonymised scenarios requested but no systems listed"));
        }
        let manifest = self.resolve(&self.manifest);
        if !manifest.is_file() {
            return Err(config_err(format!("manifest `{}` not found", manifest.display())));
        }
        let mut table: BTreeMap<(&ProbeId, &ConditionId), &Path> = BTreeMap::new();
        for e in &self.embeddings {
            let path = self.resolve(&e.path);
            if !path.is_file() {
                return Err(config_err(format!("embedding file `{}` not found", path.display())));
            }
            if table.insert((&e.probe, &e.condition), &e.path).is_some() {
                return Err(config_err(format!(
                    "two embedding files for probe `{}`, condition `{}`",
                    e.probe, e.condition
                )));
            }
        }
        let probes = self.probe_list();
        if probes.is_empty() {
            return Err(config_err("no probes to evaluate"));
        }
        for probe in &probes {
            for scenario in self.scenario_list()? {
                for condition in [scenario.enrol_condition(), scenario.test_condition()] {
                    if !table.contains_key(&(probe, &condition)) {
                        return Err(config_err(format!(
                            "no embedding file for probe `{probe}`, condition `{condition}` \
                             (needed by scenario {})",
                            scenario_label(&scenario)
                        )));
                    }
                }
            }
        }
        let known: BTreeSet<&str> = self.systems.iter().map(String::as_str).chain(["original"]).collect();
        for c in &self.compare {
            for s in [&c.before, &c.after] {
                if !known.contains(s.as_str()) {
                    return Err(config_err(format!("compare refers to unknown system `{s}`")));
                }
            }
        }
        for e in &self.expect {
            if !self.tasks.contains(&e.task) {
                return Err(config_err(format!("expectation `{}`: task {} not run", e.name, e.task)));
            }
            let eer_metric = e.metric == MetricName::Eer;
            if eer_metric == (e.task == EvalTask::Aid) {
                return Err(config_err(format!(
                    "expectation `{}`: metric {} does not apply to {}",
                    e.name,
                    e.metric.as_str(),
                    e.task
                )));
            }
            if e.min.is_none() && e.max.is_none() {
                return Err(config_err(format!("expectation `{}` has neither min nor max", e.name)));
            }
        }
        Ok(())
    }
}

/// Directory-safe label: `baseline`, `ignorant_<system>`, ...
pub fn scenario_label(s: &Scenario) -> String {
    match &s.system {
        None => s.kind.as_str().to_owned(),
        Some(sys) => format!("{}_{sys}", s.kind.as_str()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
manifest = "m.csv"
seed = 3
tasks = ["SV", "AID"]
systems = ["b5", "b4"]
scenarios = ["lazy-informed", "baseline", "ignorant"]

[[embeddings]]
probe = "genaid"
condition = "original"
path = "o.aemb"
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = RunConfig::from_toml(MINIMAL, Path::new("/base")).unwrap();
        assert_eq!(cfg.corpus, "corpus");
        assert_eq!(cfg.nontarget_per_target, 1);
        assert_eq!(cfg.aid_folds, 1);
        assert_eq!(cfg.target_quota(), TargetQuota::Exhaustive);
        assert_eq!(cfg.resolve(Path::new("m.csv")), PathBuf::from("/base/m.csv"));
        let labels: Vec<String> = cfg.scenario_list().unwrap().iter().map(scenario_label).collect();
        assert_eq!(
            labels,
            ["ignorant_b4", "ignorant_b5", "lazy-informed_b4", "lazy-informed_b5", "baseline"]
        );
    }

    #[test]
    fn rejects_unknown_fields_and_tasks() {
        let bad = format!("{MINIMAL}\nbogus = 1\n");
        assert!(RunConfig::from_toml(&bad, Path::new(".")).unwrap_err().is_config_error());
        let bad = MINIMAL.replace("\"AID\"", "\"XYZ\"");
        assert!(RunConfig::from_toml(&bad, Path::new(".")).is_err());
    }

    #[test]
    fn missing_embedding_file_for_scenario() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("m.csv"), "utt_id,speaker_id,accent\n").unwrap();
        std::fs::write(dir.path().join("o.aemb"), b"").unwrap();
        let cfg = RunConfig::from_toml(MINIMAL, dir.path()).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.is_config_error());
        assert!(err.to_string().contains("anon:b4"), "{err}");

        let only_baseline = MINIMAL.replace(
            "scenarios = [\"lazy-informed\", \"baseline\", \"ignorant\"]",
            "scenarios = [\"baseline\"]",
        );
        RunConfig::from_toml(&only_baseline, dir.path()).unwrap().validate().unwrap();
        let missing = only_baseline.replace("o.aemb", "absent.aemb");
        assert!(RunConfig::from_toml(&missing, dir.path()).unwrap().validate().is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::from_toml(MINIMAL, Path::new("/b")).unwrap();
        let again = RunConfig::from_toml(&cfg.to_toml().unwrap(), Path::new("/b")).unwrap();
        assert_eq!(cfg, again);
    }
}
