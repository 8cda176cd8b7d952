use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::classifier::cross_validated_aid;
use crate::corpus::{load_embeddings, load_manifest, CorpusManifest, ProbeId};
use crate::error::{Error, Result};
use crate::metrics::{eer, fairness_report, roc_points, RecallReport};
use crate::rng::GENERATOR_NAME;
use crate::scoring::{insert_set, score_trials, EmbeddingTable};
use crate::trials::{gen_av_trials, gen_sv_trials, Scenario, TrialList};
use crate::util::{format_significant, to_json_pretty, write_file};

use super::compare::compare_selected;
use super::config::{scenario_label, RunConfig};
use super::report::{render_markdown, CellReport, CellResult, EvalReport, ExpectationResult, Provenance};
use super::{EvalTask, TOOL_VERSION};

pub const EER_METHOD: &str =
    "ties form one operating point; accept when score >= threshold; linear interpolation \
     between the two operating points where FAR - FRR changes sign";

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Worker threads; 0 lets the thread pool decide.
    pub jobs: usize,
    /// Advisory expectations count as failures.
    pub strict: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: EvalReport,
    /// Some non-advisory expectation (or any, in strict mode) failed.
    pub acceptance_failed: bool,
}

struct Cell {
    task: EvalTask,
    probe: ProbeId,
    scenario: Scenario,
    dir: String,
}

struct Inputs {
    manifest: CorpusManifest,
    table: EmbeddingTable,
    hashes: BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|source| Error::ReadError {
        path: path.to_owned(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn rel_key(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let mpath = cfg.resolve(&cfg.manifest);
    let manifest = load_manifest(&mpath).map_err(|e| e.context(format!("manifest `{}`", mpath.display())))?;
    let mut hashes = BTreeMap::new();
    hashes.insert(rel_key(&cfg.manifest), sha256_file(&mpath)?);
    let mut table = EmbeddingTable::new();
    for entry in &cfg.embeddings {
        let path = cfg.resolve(&entry.path);
        let set = load_embeddings(&path, &manifest)
            .map_err(|e| e.context(format!("embeddings `{}`", path.display())))?;
        if set.probe != entry.probe || set.condition != entry.condition {
            return Err(Error::Config(format!(
                "`{}` holds probe `{}`, condition `{}` but the config lists probe `{}`, condition `{}`",
                path.display(),
                set.probe,
                set.condition,
                entry.probe,
                entry.condition
            )));
        }
        hashes.insert(rel_key(&entry.path), sha256_file(&path)?);
        let side = crate::corpus::sidecar_path(&entry.path);
        hashes.insert(rel_key(&side), sha256_file(&cfg.resolve(&side))?);
        insert_set(&mut table, set);
    }
    Ok(Inputs { manifest, table, hashes })
}

/// Hash over every configuration field except the worker count and output
/// location, plus the content hashes of all inputs and the tool version.
fn config_hash(cfg: &RunConfig, inputs: &BTreeMap<String, String>) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg)?);
    h.update(serde_json::to_vec(inputs)?);
    h.update(TOOL_VERSION.as_bytes());
    Ok(hex::encode(h.finalize()))
}

fn roc_csv(points: &[crate::metrics::RocPoint]) -> String {
    let mut out = String::from("threshold,far,frr\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{}\n",
            format_significant(p.threshold, 9),
            format_significant(p.far, 9),
            format_significant(p.frr, 9)
        ));
    }
    out
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|source| Error::WriteError {
        path: p.to_owned(),
        source,
    })
}

fn run_cell(cfg: &RunConfig, inputs: &Inputs, cell: &Cell, staging: &Path) -> Result<CellReport> {
    let dir = staging.join(&cell.dir);
    mkdir(&dir)?;
    let result = match cell.task {
        EvalTask::Sv | EvalTask::Av => {
            let list: TrialList = if cell.task == EvalTask::Sv {
                gen_sv_trials(&inputs.manifest, &cell.scenario, cfg.nontarget_per_target, cfg.seed)?
            } else {
                gen_av_trials(
                    &inputs.manifest,
                    &cell.scenario,
                    cfg.target_quota(),
                    cfg.nontarget_per_target,
                    cfg.seed,
                )?
            };
            list.write(&dir.join("trials.csv"))?;
            let scores = score_trials(&list, &cell.probe, &inputs.table)?;
            scores.write(&dir.join("scores.csv"))?;
            // Metrics come from the scores as written, so the report can be
            // recomputed exactly from the artifacts.
            let mut tar = Vec::new();
            let mut non = Vec::new();
            for (t, s) in list.trials.iter().zip(scores.as_serialized()) {
                match t.label {
                    crate::trials::Label::Target => tar.push(s),
                    crate::trials::Label::NonTarget => non.push(s),
                }
            }
            write_file(&dir.join("roc.csv"), roc_csv(&roc_points(&tar, &non)?).as_bytes())?;
            CellResult::Eer {
                eer: eer(&tar, &non)?,
                trial_list_hash: list.content_hash(),
                max_imbalance: list.balance.max_imbalance,
            }
        }
        EvalTask::Aid => {
            let get = |c| {
                inputs
                    .table
                    .get(&(cell.probe.clone(), c))
                    .ok_or_else(|| Error::Config(format!("missing embeddings for probe `{}`", cell.probe)))
            };
            let train = get(cell.scenario.enrol_condition())?;
            let eval = get(cell.scenario.test_condition())?;
            let cm = cross_validated_aid(train, eval, &inputs.manifest, cfg.aid_folds)?;
            cm.write(&dir.join("confusion.csv"))?;
            let recall = RecallReport::from_confusion(&cm)?;
            write_file(&dir.join("recall.csv"), recall.to_csv().as_bytes())?;
            let fairness = fairness_report(&recall, cm.labels().len())?;
            CellResult::Aid {
                recall,
                fairness,
                confusion: cm,
                folds: cfg.aid_folds,
            }
        }
    };
    Ok(CellReport {
        task: cell.task,
        probe: cell.probe.clone(),
        scenario: cell.scenario.clone(),
        dir: cell.dir.clone(),
        result,
    })
}

fn cells_of(cfg: &RunConfig) -> Result<Vec<Cell>> {
    let mut tasks = cfg.tasks.clone();
    tasks.sort();
    tasks.dedup();
    let mut out = Vec::new();
    for task in tasks {
        for probe in cfg.probe_list() {
            for scenario in cfg.scenario_list()? {
                let dir = format!("cells/{task}/{probe}/{}", scenario_label(&scenario));
                out.push(Cell {
                    task,
                    probe: probe.clone(),
                    scenario,
                    dir,
                });
            }
        }
    }
    Ok(out)
}

fn check_expectations(cfg: &RunConfig, cells: &[CellReport]) -> Vec<ExpectationResult> {
    cfg.expect
        .iter()
        .map(|e| {
            let value = cells
                .iter()
                .find(|c| {
                    c.task == e.task
                        && c.probe == e.probe
                        && c.scenario.kind == e.scenario
                        && c.scenario.system == e.system
                })
                .and_then(|c| c.metric(e.metric));
            let passed = value.is_some_and(|v| e.min.is_none_or(|m| v >= m) && e.max.is_none_or(|m| v <= m));
            ExpectationResult {
                name: e.name.clone(),
                value,
                min: e.min,
                max: e.max,
                advisory: e.advisory,
                passed,
            }
        })
        .collect()
}

fn notes(k: usize) -> Vec<String> {
    vec![
        format!("WAR figures are comparable across runs only at equal K (this corpus has K = {k})."),
        "Relative changes are 100 * (after - before) / before. The overall accent-identification \
         reduction of a system is read as the relative WAR change from the original row to that \
         system; the per-accent average is reported alongside."
            .to_owned(),
        "Attacker scenarios: I compares original enrolment with anonymised test material, L \
         anonymises both sides with the same system; AID under I uses a model fitted on original \
         embeddings, under L one fitted on anonymised embeddings."
            .to_owned(),
    ]
}

/// Replaces `dst` with `src` (file or directory).
fn replace(src: &Path, dst: &Path) -> Result<()> {
    let io = |source| Error::WriteError {
        path: dst.to_owned(),
        source,
    };
    if dst.is_dir() {
        std::fs::remove_dir_all(dst).map_err(io)?;
    } else if dst.exists() {
        std::fs::remove_file(dst).map_err(io)?;
    }
    std::fs::rename(src, dst).map_err(io)
}

fn execute(cfg: &RunConfig, opts: &RunOptions, staging: &Path) -> Result<RunOutcome> {
    let inputs = load_inputs(cfg)?;
    let provenance = Provenance {
        seed: cfg.seed,
        generator: GENERATOR_NAME.to_owned(),
        tool_version: TOOL_VERSION.to_owned(),
        config_hash: config_hash(cfg, &inputs.hashes)?,
        input_hashes: inputs.hashes.clone(),
    };
    let cells = cells_of(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<CellReport>> = pool.install(|| {
        cells
            .par_iter()
            .map(|c| {
                run_cell(cfg, &inputs, c, staging).map_err(|e| e.context(format!("cell {}", c.dir)))
            })
            .collect()
    });
    // first failure in cell order, independent of scheduling
    let cells: Vec<CellReport> = results.into_iter().collect::<Result<_>>()?;

    let mut report = EvalReport {
        corpus: cfg.corpus.clone(),
        manifest_hash: inputs.manifest.content_hash(),
        k: inputs.manifest.k(),
        accents: inputs.manifest.accents().to_vec(),
        n_utterances: inputs.manifest.len(),
        tasks: {
            let mut t = cfg.tasks.clone();
            t.sort();
            t.dedup();
            t
        },
        eer_method: EER_METHOD.to_owned(),
        cells,
        comparisons: Vec::new(),
        expectations: Vec::new(),
        notes: notes(inputs.manifest.k()),
        provenance,
    };
    for pair in &cfg.compare {
        report.comparisons.push(
            compare_selected(&report, &pair.before, &report, &pair.after)
                .map_err(|e| e.context(format!("compare {} -> {}", pair.before, pair.after)))?,
        );
    }
    report.expectations = check_expectations(cfg, &report.cells);
    let acceptance_failed = report
        .expectations
        .iter()
        .any(|e| !e.passed && (!e.advisory || opts.strict));
    write_file(&staging.join("report.json"), to_json_pretty(&report)?.as_bytes())?;
    write_file(&staging.join("report.md"), render_markdown(&report).as_bytes())?;
    Ok(RunOutcome {
        report,
        acceptance_failed,
    })
}

/// Runs every (task, probe, scenario) cell of `cfg` and writes
/// `report.json`, `report.md` and per-cell artifacts under `opts.out`.
///
/// Work happens in `<out>/.staging`; on success its contents replace the
/// previous outputs, on failure it is kept as `<out>/quarantine`.
pub fn run_pipeline(cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    mkdir(&opts.out)?;
    let staging = opts.out.join(".staging");
    if staging.exists() {
        std::fs::remove_dir_all(&staging).map_err(|source| Error::WriteError {
            path: staging.clone(),
            source,
        })?;
    }
    mkdir(&staging)?;
    match execute(cfg, opts, &staging) {
        Ok(outcome) => {
            for name in ["cells", "report.json", "report.md"] {
                let src = staging.join(name);
                if src.exists() {
                    replace(&src, &opts.out.join(name))?;
                } else {
                    let dst = opts.out.join(name);
                    if dst.is_dir() {
                        let _ = std::fs::remove_dir_all(&dst);
                    }
                }
            }
            let _ = std::fs::remove_dir_all(&staging);
            Ok(outcome)
        }
        Err(e) => {
            let _ = replace(&staging, &opts.out.join("quarantine"));
            Err(e)
        }
    }
}
