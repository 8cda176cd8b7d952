use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{write_embeddings, ConditionId};
use crate::error::{Error, Result};
use crate::synthlab::{apply_anonymiser, gen_corpus, AnonSpec, SynthConfig};
use crate::trials::ScenarioKind;

use super::config::{ComparePair, EmbeddingEntry, RunConfig};
use super::EvalTask;

/// A named anonymiser applied to the synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub name: String,
    #[serde(flatten)]
    pub spec: AnonSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthBundleConfig {
    pub corpus: SynthConfig,
    #[serde(default)]
    pub systems: Vec<SystemSpec>,
}

impl SynthBundleConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Writes `manifest.csv`, one AEMB file per condition under
/// `<probe>/`, and a `run.toml` evaluating every system under all three
/// tasks. Returns the path of `run.toml`.
pub fn write_synth_bundle(cfg: &SynthBundleConfig, out: &Path) -> Result<PathBuf> {
    let mk = |p: &Path| {
        std::fs::create_dir_all(p).map_err(|source| Error::WriteError {
            path: p.to_owned(),
            source,
        })
    };
    let (manifest, original) = gen_corpus(&cfg.corpus)?;
    let probe_dir = PathBuf::from(&cfg.corpus.probe);
    mk(&out.join(&probe_dir))?;
    manifest.write(&out.join("manifest.csv"))?;

    let mut embeddings = Vec::new();
    let rel = probe_dir.join("original.aemb");
    write_embeddings(&original, &out.join(&rel))?;
    embeddings.push(EmbeddingEntry {
        probe: original.probe.clone(),
        condition: ConditionId::original(),
        path: rel,
    });
    let mut names = Vec::new();
    for system in &cfg.systems {
        let condition = ConditionId::anon(&system.name)?;
        let set = apply_anonymiser(&original, &manifest, &system.spec)?.with_condition(condition.clone());
        let rel = probe_dir.join(format!("{}.aemb", system.name));
        write_embeddings(&set, &out.join(&rel))?;
        embeddings.push(EmbeddingEntry {
            probe: original.probe.clone(),
            condition,
            path: rel,
        });
        names.push(system.name.clone());
    }

    let mut scenarios = vec![ScenarioKind::Baseline];
    if !names.is_empty() {
        scenarios.extend([ScenarioKind::Ignorant, ScenarioKind::LazyInformed]);
    }
    let run = RunConfig {
        corpus: "synthetic".into(),
        manifest: "manifest.csv".into(),
        seed: cfg.corpus.seed,
        tasks: if cfg.corpus.k_accents >= 2 {
            vec![EvalTask::Sv, EvalTask::Av, EvalTask::Aid]
        } else {
            vec![EvalTask::Sv]
        },
        probes: vec![],
        compare: names
            .iter()
            .map(|n| ComparePair {
                before: "original".into(),
                after: n.clone(),
            })
            .collect(),
        systems: names,
        scenarios,
        nontarget_per_target: 1,
        av_targets_per_accent: None,
        aid_folds: 1,
        embeddings,
        expect: vec![],
        base_dir: out.to_owned(),
    };
    let path = out.join("run.toml");
    crate::util::write_file(&path, run.to_toml()?.as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthlab::AnonKind;

    #[test]
    fn bundle_from_toml() {
        let text = r#"
[corpus]
k_accents = 3
speakers_per_accent = 2
utts_per_speaker = 2
dim = 4
sigma_accent = 1.0
sigma_speaker = 0.3
sigma_utt = 0.1
seed = 4

[[systems]]
name = "shrink50"
kind = "accent-shrink"
lambda = 0.5
seed = 2

[[systems]]
name = "ident"
kind = "identity"
"#;
        let cfg = SynthBundleConfig::from_toml(text).unwrap();
        assert_eq!(cfg.systems[0].spec.kind, AnonKind::AccentShrink { lambda: 0.5 });
        assert_eq!(cfg.systems[1].spec.seed, 0);
        let dir = tempfile::tempdir().unwrap();
        let run = write_synth_bundle(&cfg, dir.path()).unwrap();
        let rc = RunConfig::load(&run).unwrap();
        rc.validate().unwrap();
        assert_eq!(rc.embeddings.len(), 3);
        assert_eq!(rc.systems, ["shrink50", "ident"]);
        let meta = crate::corpus::read_meta(&dir.path().join("synthetic/shrink50.aemb")).unwrap();
        assert_eq!(meta.condition.as_str(), "anon:shrink50");
    }
}
