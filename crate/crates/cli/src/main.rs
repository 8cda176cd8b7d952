use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use anonleak::classifier::cross_validated_aid;
use anonleak::corpus::{load_embeddings, load_manifest, write_embeddings, ConditionId};
use anonleak::metrics::{compute_eer, fairness_report, RecallReport};
use anonleak::pipeline::{
    compare_selected, compare_systems, render_markdown, run_pipeline, write_synth_bundle, EvalReport, RunConfig,
    RunOptions, SynthBundleConfig,
};
use anonleak::scoring::{insert_set, score_trials, EmbeddingTable, ScoreSet};
use anonleak::synthlab::{apply_anonymiser, AnonSpec};
use anonleak::trials::{gen_av_trials, gen_sv_trials, Scenario, ScenarioKind, TargetQuota, Task, TrialList};
use anonleak::Error;

#[derive(Parser)]
#[command(name = "anonleak", version, about = "Embedding-space evaluation of voice anonymisation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0: one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Treat advisory expectations as failures.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus, anonymised variants and a run config.
    GenSynth,
    /// Apply a synthetic anonymiser (given by --config) to original embeddings.
    Anonymise {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// System name; the output condition is `anon:<system>`.
        #[arg(long)]
        system: String,
    },
    /// Generate an SV or AV trial list.
    GenTrials {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        task: Task,
        #[arg(long, default_value = "baseline")]
        scenario: ScenarioKind,
        #[arg(long)]
        system: Option<String>,
        #[arg(long, default_value_t = 1)]
        nontarget_per_target: usize,
        /// AV only: cap on targets per accent.
        #[arg(long)]
        targets_per_accent: Option<usize>,
    },
    /// Cosine-score a trial list.
    Score {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        enrol: PathBuf,
        /// Defaults to the enrolment file.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Equal error rate of scored trials.
    Eer {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        scores: PathBuf,
    },
    /// Accent identification with a nearest-centroid model.
    Aid {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        train: PathBuf,
        /// Defaults to the training file.
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        folds: usize,
    },
    /// Re-render the Markdown summary of a report.json.
    Report { report: PathBuf },
    /// Compare two report.json files.
    Compare {
        before: PathBuf,
        after: PathBuf,
        /// Compare this system of `before` (or `original`) ...
        #[arg(long, requires = "after_system")]
        before_system: Option<String>,
        /// ... with this system of `after`.
        #[arg(long, requires = "before_system")]
        after_system: Option<String>,
    },
    /// Full pipeline.
    Run,
}

enum Failure {
    Config(String),
    Data(Error),
    Acceptance,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let config = e.is_config_error()
            || matches!(
                e,
                Error::InvalidArgument(_) | Error::InvalidSynthConfig(_) | Error::InvalidId(_)
            );
        if config {
            Failure::Config(e.to_string())
        } else {
            Failure::Data(e)
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn need<'a, T>(v: &'a Option<T>, flag: &str) -> std::result::Result<&'a T, Failure> {
    v.as_ref().ok_or_else(|| Failure::Config(format!("--{flag} is required")))
}

fn read_text(path: &Path) -> std::result::Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|source| {
        Failure::Data(Error::ReadError {
            path: path.to_owned(),
            source,
        })
    })
}

fn mkdir(path: &Path) -> std::result::Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|source| {
        Failure::Data(Error::WriteError {
            path: path.to_owned(),
            source,
        })
    })
}

fn write(path: &Path, text: &str) -> std::result::Result<(), Failure> {
    std::fs::write(path, text).map_err(|source| {
        Failure::Data(Error::WriteError {
            path: path.to_owned(),
            source,
        })
    })
}

fn print_json<T: serde::Serialize>(v: &T) -> Outcome {
    println!("{}", serde_json::to_string_pretty(v).map_err(Error::from)?);
    Ok(())
}

fn load_report(path: &Path) -> std::result::Result<EvalReport, Failure> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Failure::Data(Error::from(e)))
}

fn run(cli: Cli) -> Outcome {
    let g = &cli.global;
    match cli.command {
        Command::GenSynth => {
            let mut cfg = SynthBundleConfig::from_toml(&read_text(need(&g.config, "config")?)?)?;
            if let Some(seed) = g.seed {
                cfg.corpus.seed = seed;
            }
            let out = need(&g.out, "out")?;
            let run = write_synth_bundle(&cfg, out)?;
            println!("{}", run.display());
        }
        Command::Anonymise { manifest, input, system } => {
            let mut spec: AnonSpec = toml::from_str(&read_text(need(&g.config, "config")?)?)
                .map_err(|e| Failure::Config(e.to_string()))?;
            if let Some(seed) = g.seed {
                spec.seed = seed;
            }
            let out = need(&g.out, "out")?;
            let manifest = load_manifest(&manifest)?;
            let original = load_embeddings(&input, &manifest)?;
            let set = apply_anonymiser(&original, &manifest, &spec)?.with_condition(ConditionId::anon(&system)?);
            mkdir(out)?;
            let path = out.join(format!("{system}.aemb"));
            write_embeddings(&set, &path)?;
            println!("{}", path.display());
        }
        Command::GenTrials {
            manifest,
            task,
            scenario,
            system,
            nontarget_per_target,
            targets_per_accent,
        } => {
            let out = need(&g.out, "out")?;
            let manifest = load_manifest(&manifest)?;
            let scenario = Scenario::new(scenario, system.as_deref())?;
            let seed = g.seed.unwrap_or(0);
            let list = match task {
                Task::Sv => gen_sv_trials(&manifest, &scenario, nontarget_per_target, seed)?,
                Task::Av => {
                    let quota = targets_per_accent.map_or(TargetQuota::Exhaustive, TargetQuota::PerAccent);
                    gen_av_trials(&manifest, &scenario, quota, nontarget_per_target, seed)?
                }
            };
            mkdir(out)?;
            let path = out.join("trials.csv");
            list.write(&path)?;
            print_json(&list.meta())?;
        }
        Command::Score {
            manifest,
            trials,
            enrol,
            test,
        } => {
            let out = need(&g.out, "out")?;
            let manifest = load_manifest(&manifest)?;
            let list = TrialList::read(&trials, &manifest)?;
            let mut table = EmbeddingTable::new();
            let enrol = load_embeddings(&enrol, &manifest)?;
            let probe = enrol.probe.clone();
            insert_set(&mut table, enrol);
            if let Some(test) = test {
                insert_set(&mut table, load_embeddings(&test, &manifest)?);
            }
            let scores = score_trials(&list, &probe, &table)?;
            mkdir(out)?;
            let path = out.join("scores.csv");
            scores.write(&path)?;
            println!("{}", path.display());
        }
        Command::Eer {
            manifest,
            trials,
            scores,
        } => {
            let manifest = load_manifest(&manifest)?;
            let list = TrialList::read(&trials, &manifest)?;
            let scores = ScoreSet::read(&scores)?;
            if scores.trial_list_ref != list.content_hash() {
                return Err(Failure::Config(format!(
                    "scores reference trial list {}, not {}",
                    scores.trial_list_ref,
                    list.content_hash()
                )));
            }
            print_json(&compute_eer(&scores, &list)?)?;
        }
        Command::Aid {
            manifest,
            train,
            eval,
            folds,
        } => {
            let manifest = load_manifest(&manifest)?;
            let train = load_embeddings(&train, &manifest)?;
            let eval = match eval {
                Some(p) => load_embeddings(&p, &manifest)?,
                None => train.clone(),
            };
            let cm = cross_validated_aid(&train, &eval, &manifest, folds)?;
            let recall = RecallReport::from_confusion(&cm)?;
            let fairness = fairness_report(&recall, cm.labels().len())?;
            if let Some(out) = &g.out {
                mkdir(out)?;
                cm.write(&out.join("confusion.csv"))?;
                write(&out.join("recall.csv"), &recall.to_csv())?;
            }
            print_json(&serde_json::json!({ "recall": recall, "fairness": fairness }))?;
        }
        Command::Report { report } => {
            let md = render_markdown(&load_report(&report)?);
            match &g.out {
                Some(out) => {
                    mkdir(out)?;
                    write(&out.join("report.md"), &md)?;
                }
                None => print!("{md}"),
            }
        }
        Command::Compare {
            before,
            after,
            before_system,
            after_system,
        } => {
            let a = load_report(&before)?;
            let b = load_report(&after)?;
            let summary = match (before_system, after_system) {
                (Some(sa), Some(sb)) => compare_selected(&a, &sa, &b, &sb)?,
                _ => compare_systems(&a, &b)?,
            };
            match &g.out {
                Some(out) => {
                    mkdir(out)?;
                    let text = serde_json::to_string_pretty(&summary).map_err(Error::from)?;
                    write(&out.join("comparison.json"), &text)?;
                }
                None => print_json(&summary)?,
            }
        }
        Command::Run => {
            let path = need(&g.config, "config")?;
            let mut cfg = RunConfig::load(path)?;
            if let Some(seed) = g.seed {
                cfg.seed = seed;
            }
            let out = g.out.clone().unwrap_or_else(|| cfg.base_dir.join("out"));
            let outcome = run_pipeline(
                &cfg,
                &RunOptions {
                    out: out.clone(),
                    jobs: g.jobs,
                    strict: g.strict,
                },
            )?;
            for e in &outcome.report.expectations {
                if !e.passed {
                    eprintln!("expectation `{}` failed{}", e.name, if e.advisory { " (advisory)" } else { "" });
                }
            }
            println!("{}", out.join("report.md").display());
            if outcome.acceptance_failed {
                return Err(Failure::Acceptance);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
        Err(Failure::Acceptance) => {
            eprintln!("error: acceptance expectations failed");
            ExitCode::from(4)
        }
    }
}
