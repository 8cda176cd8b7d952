//! Balanced, deterministic speaker- and accent-verification trial lists.
//!
//! Trials are ordered (enrolment, test) utterance pairs. An utterance is
//! never paired with itself, in any condition. Target pairs are enumerated
//! exhaustively (SV) or sampled per accent (AV); non-target pairs are
//! sampled without replacement from per-stratum streams so the result does
//! not depend on manifest row order or thread count. The final list is
//! sorted by `(enrol_utt, test_utt)`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{ConditionId, CorpusManifest};
use crate::error::{Error, Result};
use crate::rng::{Stream, GENERATOR_NAME};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "SV")]
    Sv,
    #[serde(rename = "AV")]
    Av,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Sv => "SV",
            Task::Av => "AV",
        })
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SV" | "sv" => Ok(Task::Sv),
            "AV" | "av" => Ok(Task::Av),
            _ => Err(Error::InvalidArgument(format!("unknown task `{s}`"))),
        }
    }
}

/// Attacker scenario. `Baseline` compares original with original material
/// and gives the no-anonymisation reference row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Ignorant,
    LazyInformed,
    Baseline,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Ignorant => "ignorant",
            ScenarioKind::LazyInformed => "lazy-informed",
            ScenarioKind::Baseline => "baseline",
        }
    }

    /// Column label used in report tables.
    pub fn short(self) -> &'static str {
        match self {
            ScenarioKind::Ignorant => "I",
            ScenarioKind::LazyInformed => "L",
            ScenarioKind::Baseline => "O",
        }
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ignorant" | "I" => Ok(ScenarioKind::Ignorant),
            "lazy-informed" | "L" => Ok(ScenarioKind::LazyInformed),
            "baseline" | "O" => Ok(ScenarioKind::Baseline),
            _ => Err(Error::InvalidArgument(format!("unknown scenario `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    /// Anonymisation system; `None` only for `Baseline`.
    pub system: Option<String>,
}

impl Scenario {
    pub fn ignorant(system: &str) -> Result<Self> {
        Self::new(ScenarioKind::Ignorant, Some(system))
    }

    pub fn lazy_informed(system: &str) -> Result<Self> {
        Self::new(ScenarioKind::LazyInformed, Some(system))
    }

    pub fn baseline() -> Self {
        Scenario {
            kind: ScenarioKind::Baseline,
            system: None,
        }
    }

    pub fn new(kind: ScenarioKind, system: Option<&str>) -> Result<Self> {
        match (kind, system) {
            (ScenarioKind::Baseline, None) => Ok(Self::baseline()),
            (ScenarioKind::Baseline, Some(s)) => Err(Error::InvalidArgument(format!(
                "baseline scenario takes no system (got `{s}`)"
            ))),
            (_, None) => Err(Error::InvalidArgument(format!(
                "{} scenario needs a system",
                kind.as_str()
            ))),
            (_, Some(s)) => {
                ConditionId::anon(s)?;
                Ok(Scenario {
                    kind,
                    system: Some(s.to_owned()),
                })
            }
        }
    }

    fn anon(&self) -> ConditionId {
        ConditionId::anon(self.system.as_deref().unwrap_or_default())
            .expect("system validated at construction")
    }

    pub fn enrol_condition(&self) -> ConditionId {
        match self.kind {
            ScenarioKind::Ignorant | ScenarioKind::Baseline => ConditionId::original(),
            ScenarioKind::LazyInformed => self.anon(),
        }
    }

    pub fn test_condition(&self) -> ConditionId {
        match self.kind {
            ScenarioKind::Baseline => ConditionId::original(),
            _ => self.anon(),
        }
    }

    pub fn system_name(&self) -> &str {
        self.system.as_deref().unwrap_or("")
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.system {
            Some(s) => write!(f, "{}({s})", self.kind.as_str()),
            None => f.write_str(self.kind.as_str()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Target,
    NonTarget,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Target => "target",
            Label::NonTarget => "nontarget",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub enrol_utt: String,
    pub enrol_condition: ConditionId,
    pub test_utt: String,
    pub test_condition: ConditionId,
    pub label: Label,
}

/// How many same-accent target pairs to keep per accent in AV lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetQuota {
    #[default]
    Exhaustive,
    PerAccent(usize),
}

/// Group counts of a trial list, always counted on the enrolment side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub per_speaker_target_counts: BTreeMap<String, usize>,
    pub per_speaker_nontarget_counts: BTreeMap<String, usize>,
    pub per_accent_target_counts: BTreeMap<String, usize>,
    pub per_accent_nontarget_counts: BTreeMap<String, usize>,
    /// Non-targets per unordered accent pair, keyed `A|B` with `A < B`.
    pub per_accent_pair_nontarget_counts: BTreeMap<String, usize>,
    /// max/min target count over speakers (SV) or accents (AV); infinite
    /// when some group has no targets. Serialized as `null` when infinite.
    #[serde(with = "crate::util::finite_or_null")]
    pub max_imbalance: f64,
}

impl BalanceReport {
    /// max − min over the values of a count map.
    pub fn spread(counts: &BTreeMap<String, usize>) -> usize {
        let max = counts.values().max().copied().unwrap_or(0);
        let min = counts.values().min().copied().unwrap_or(0);
        max - min
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialList {
    pub task: Task,
    pub scenario: Scenario,
    pub seed: u64,
    pub nontarget_per_target: usize,
    pub target_quota: TargetQuota,
    pub trials: Vec<Trial>,
    pub balance: BalanceReport,
}

pub const TRIALS_HEADER: &str = "task,scenario,system,enrol_utt,enrol_cond,test_utt,test_cond,label";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialListMeta {
    pub task: Task,
    pub scenario: ScenarioKind,
    pub system: Option<String>,
    pub seed: u64,
    pub generator: String,
    pub nontarget_per_target: usize,
    pub target_quota: TargetQuota,
    pub trial_count: usize,
    pub content_hash: String,
    pub balance: BalanceReport,
}

impl TrialList {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.trials.iter().filter(|t| t.label == label).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.trials.len() + 1));
        out.push_str(TRIALS_HEADER);
        out.push('\n');
        let prefix = format!("{},{},{},", self.task, self.scenario.kind.as_str(), self.scenario.system_name());
        for t in &self.trials {
            for field in [
                prefix.as_str(),
                &t.enrol_utt,
                ",",
                t.enrol_condition.as_str(),
                ",",
                &t.test_utt,
                ",",
                t.test_condition.as_str(),
                ",",
                t.label.as_str(),
                "\n",
            ] {
                out.push_str(field);
            }
        }
        out
    }

    /// SHA-256 of the CSV serialization.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv().as_bytes()))
    }

    pub fn meta(&self) -> TrialListMeta {
        self.meta_with_hash(self.content_hash())
    }

    fn meta_with_hash(&self, content_hash: String) -> TrialListMeta {
        TrialListMeta {
            task: self.task,
            scenario: self.scenario.kind,
            system: self.scenario.system.clone(),
            seed: self.seed,
            generator: GENERATOR_NAME.to_owned(),
            nontarget_per_target: self.nontarget_per_target,
            target_quota: self.target_quota,
            trial_count: self.trials.len(),
            content_hash,
            balance: self.balance.clone(),
        }
    }

    /// Writes `<path>` (CSV) and `<stem>.meta.json`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let csv = self.to_csv();
        crate::util::write_file(path, csv.as_bytes())?;
        let hash = hex::encode(Sha256::digest(csv.as_bytes()));
        let meta = crate::util::to_json_pretty(&self.meta_with_hash(hash))?;
        crate::util::write_file(&path.with_extension("meta.json"), meta.as_bytes())
    }

    /// Reads a list written by [`TrialList::write`], re-validating labels
    /// and conditions against the manifest.
    pub fn read(path: &Path, manifest: &CorpusManifest) -> Result<Self> {
        let text = crate::util::read_to_string(path)?;
        let meta: TrialListMeta =
            serde_json::from_str(&crate::util::read_to_string(&path.with_extension("meta.json"))?)?;
        let scenario = Scenario::new(meta.scenario, meta.system.as_deref())?;
        let mut lines = text.lines();
        if lines.next() != Some(TRIALS_HEADER) {
            return Err(Error::MalformedTrials(format!("expected header `{TRIALS_HEADER}`")));
        }
        let (enrol_cond, test_cond) = (scenario.enrol_condition(), scenario.test_condition());
        let mut trials = Vec::new();
        for (i, line) in lines.enumerate() {
            let bad = |why: &str| Error::MalformedTrials(format!("line {}: {why}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad("expected 8 fields"));
            }
            if f[0] != meta.task.to_string()
                || f[1] != scenario.kind.as_str()
                || f[2] != scenario.system_name()
            {
                return Err(bad("task/scenario/system differ from the sidecar"));
            }
            if f[4] != enrol_cond.as_str() || f[6] != test_cond.as_str() {
                return Err(bad("conditions do not match the scenario"));
            }
            let label = match f[7] {
                "target" => Label::Target,
                "nontarget" => Label::NonTarget,
                other => return Err(bad(&format!("unknown label `{other}`"))),
            };
            trials.push(Trial {
                enrol_utt: f[3].to_owned(),
                enrol_condition: enrol_cond.clone(),
                test_utt: f[5].to_owned(),
                test_condition: test_cond.clone(),
                label,
            });
        }
        let mut list = TrialList {
            task: meta.task,
            scenario,
            seed: meta.seed,
            nontarget_per_target: meta.nontarget_per_target,
            target_quota: meta.target_quota,
            trials,
            balance: empty_balance(),
        };
        check_labels(&list, manifest)?;
        list.balance = balance_check(&list, manifest)?;
        Ok(list)
    }
}

pub(crate) fn empty_balance() -> BalanceReport {
    BalanceReport {
        per_speaker_target_counts: BTreeMap::new(),
        per_speaker_nontarget_counts: BTreeMap::new(),
        per_accent_target_counts: BTreeMap::new(),
        per_accent_nontarget_counts: BTreeMap::new(),
        per_accent_pair_nontarget_counts: BTreeMap::new(),
        max_imbalance: f64::INFINITY,
    }
}

/// Verifies that every label agrees with the manifest and no trial pairs an
/// utterance with itself.
pub fn check_labels(list: &TrialList, manifest: &CorpusManifest) -> Result<()> {
    for t in &list.trials {
        let e = manifest
            .get(&t.enrol_utt)
            .ok_or_else(|| Error::UnknownUtterance(t.enrol_utt.clone()))?;
        let s = manifest
            .get(&t.test_utt)
            .ok_or_else(|| Error::UnknownUtterance(t.test_utt.clone()))?;
        if e.utt_id == s.utt_id {
            return Err(Error::MalformedTrials(format!(
                "utterance `{}` paired with itself",
                e.utt_id
            )));
        }
        let expected = match list.task {
            Task::Sv => e.speaker_id == s.speaker_id,
            Task::Av => e.accent == s.accent && e.speaker_id != s.speaker_id,
        };
        let same_speaker_av = list.task == Task::Av && e.speaker_id == s.speaker_id;
        if (t.label == Label::Target) != expected || same_speaker_av {
            return Err(Error::MalformedTrials(format!(
                "trial ({}, {}) labelled {}",
                e.utt_id,
                s.utt_id,
                t.label.as_str()
            )));
        }
    }
    Ok(())
}

/// Splits `total` across strata as evenly as their capacities allow; strata
/// that receive the remainder are picked from `stream`.
pub(crate) fn balanced_quotas(total: usize, caps: &[usize], stream: &mut Stream) -> Result<Vec<usize>> {
    let available: usize = caps.iter().sum();
    if total > available {
        return Err(Error::InsufficientPairs {
            requested: total,
            available,
        });
    }
    let mut quotas = vec![0usize; caps.len()];
    let mut remaining = total;
    let mut active: Vec<usize> = (0..caps.len()).filter(|&i| caps[i] > 0).collect();
    while remaining > 0 {
        let share = remaining / active.len();
        if share == 0 {
            stream.partial_shuffle(&mut active, remaining);
            for &i in &active[..remaining] {
                quotas[i] += 1;
            }
            break;
        }
        for &i in &active {
            let give = share.min(caps[i] - quotas[i]);
            quotas[i] += give;
            remaining -= give;
        }
        active.retain(|&i| quotas[i] < caps[i]);
    }
    Ok(quotas)
}

/// Picks `amount` distinct indices from `0..n`, returned sorted.
fn sample_indices(n: usize, amount: usize, stream: &mut Stream) -> Vec<usize> {
    if amount >= n {
        return (0..n).collect();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    stream.partial_shuffle(&mut idx, amount);
    idx.truncate(amount);
    idx.sort_unstable();
    idx
}

fn check_ratio(ratio: usize) -> Result<()> {
    if ratio == 0 {
        return Err(Error::InvalidArgument(
            "nontarget_per_target must be positive".into(),
        ));
    }
    Ok(())
}

type Pair<'a> = (&'a str, &'a str);

fn finish(
    manifest: &CorpusManifest,
    task: Task,
    scenario: &Scenario,
    seed: u64,
    ratio: usize,
    target_quota: TargetQuota,
    targets: Vec<Pair<'_>>,
    nontargets: Vec<Pair<'_>>,
) -> Result<TrialList> {
    let (ec, tc) = (scenario.enrol_condition(), scenario.test_condition());
    let mut trials: Vec<Trial> = targets
        .into_iter()
        .map(|p| (p, Label::Target))
        .chain(nontargets.into_iter().map(|p| (p, Label::NonTarget)))
        .map(|((e, t), label)| Trial {
            enrol_utt: e.to_owned(),
            enrol_condition: ec.clone(),
            test_utt: t.to_owned(),
            test_condition: tc.clone(),
            label,
        })
        .collect();
    trials.par_sort_unstable_by(|a, b| {
        a.enrol_utt
            .cmp(&b.enrol_utt)
            .then_with(|| a.test_utt.cmp(&b.test_utt))
    });
    let mut list = TrialList {
        task,
        scenario: scenario.clone(),
        seed,
        nontarget_per_target: ratio,
        target_quota,
        trials,
        balance: empty_balance(),
    };
    list.balance = balance_check(&list, manifest)?;
    Ok(list)
}

/// Speaker-verification trials: every ordered same-speaker pair of distinct
/// utterances as targets, plus `nontarget_per_target` times as many
/// different-speaker pairs, spread evenly over enrolment speakers.
pub fn gen_sv_trials(
    manifest: &CorpusManifest,
    scenario: &Scenario,
    nontarget_per_target: usize,
    seed: u64,
) -> Result<TrialList> {
    check_ratio(nontarget_per_target)?;
    let by_speaker = manifest.utterances_by_speaker();
    if by_speaker.len() < 2 {
        return Err(Error::InsufficientSpeakers(by_speaker.len()));
    }
    if let Some((s, _)) = by_speaker.iter().find(|(_, u)| u.len() < 2) {
        return Err(Error::InsufficientUtterances(s.to_string()));
    }
    let speakers: Vec<(&str, &Vec<&str>)> = by_speaker.iter().map(|(s, u)| (*s, u)).collect();
    let total_utts = manifest.len();

    let targets: Vec<Pair> = speakers
        .iter()
        .flat_map(|(_, utts)| {
            utts.iter()
                .flat_map(move |&e| utts.iter().filter(move |&&t| t != e).map(move |&t| (e, t)))
        })
        .collect();

    let wanted = targets.len() * nontarget_per_target;
    let caps: Vec<usize> = speakers
        .iter()
        .map(|(_, u)| u.len() * (total_utts - u.len()))
        .collect();
    let quotas = balanced_quotas(wanted, &caps, &mut Stream::new(seed, &["SV", "nontarget-quota"]))?;

    let nontargets: Vec<Pair> = speakers
        .par_iter()
        .zip(quotas.par_iter())
        .map(|(&(spk, utts), &quota)| -> Result<Vec<Pair>> {
            let others: Vec<(&str, &Vec<&str>)> =
                speakers.iter().filter(|(o, _)| *o != spk).copied().collect();
            let caps: Vec<usize> = others.iter().map(|(_, o)| utts.len() * o.len()).collect();
            let per_other =
                balanced_quotas(quota, &caps, &mut Stream::new(seed, &["SV", "impostors", spk]))?;
            let mut out = Vec::with_capacity(quota);
            for ((other, other_utts), q) in others.iter().zip(per_other) {
                if q == 0 {
                    continue;
                }
                let mut stream = Stream::new(seed, &["SV", "pairs", spk, other]);
                for i in sample_indices(utts.len() * other_utts.len(), q, &mut stream) {
                    out.push((utts[i / other_utts.len()], other_utts[i % other_utts.len()]));
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    finish(
        manifest,
        Task::Sv,
        scenario,
        seed,
        nontarget_per_target,
        TargetQuota::Exhaustive,
        targets,
        nontargets,
    )
}

/// Accent-verification trials: same-accent, different-speaker targets
/// (per-accent quota) and different-accent non-targets spread evenly over
/// unordered accent pairs.
pub fn gen_av_trials(
    manifest: &CorpusManifest,
    scenario: &Scenario,
    target_quota: TargetQuota,
    nontarget_per_target: usize,
    seed: u64,
) -> Result<TrialList> {
    check_ratio(nontarget_per_target)?;
    if manifest.k() < 2 {
        return Err(Error::InsufficientAccents(manifest.k()));
    }
    let speakers_by_accent = manifest.speakers_by_accent();
    if let Some((a, _)) = speakers_by_accent.iter().find(|(_, s)| s.len() < 2) {
        return Err(Error::InsufficientSpeakersForAccent(a.to_string()));
    }
    let by_accent = manifest.utterances_by_accent();
    let accents: Vec<(&str, &Vec<&str>)> = by_accent.iter().map(|(a, u)| (*a, u)).collect();
    let speaker = |u: &str| manifest.get(u).map(|m| m.speaker_id.as_str()).unwrap_or_default();

    let targets: Vec<Pair> = accents
        .par_iter()
        .map(|&(accent, utts)| {
            let pool: Vec<Pair> = utts
                .iter()
                .flat_map(|&e| {
                    utts.iter()
                        .filter(move |&&t| speaker(t) != speaker(e))
                        .map(move |&t| (e, t))
                })
                .collect();
            match target_quota {
                TargetQuota::Exhaustive => pool,
                TargetQuota::PerAccent(q) => {
                    let mut stream = Stream::new(seed, &["AV", "targets", accent]);
                    sample_indices(pool.len(), q, &mut stream)
                        .into_iter()
                        .map(|i| pool[i])
                        .collect()
                }
            }
        })
        .flatten()
        .collect();

    let mut strata = Vec::new();
    for (i, a) in accents.iter().enumerate() {
        for b in &accents[i + 1..] {
            strata.push((*a, *b));
        }
    }
    let wanted = targets.len() * nontarget_per_target;
    let caps: Vec<usize> = strata.iter().map(|((_, a), (_, b))| 2 * a.len() * b.len()).collect();
    let quotas = balanced_quotas(wanted, &caps, &mut Stream::new(seed, &["AV", "nontarget-quota"]))?;

    let nontargets: Vec<Pair> = strata
        .par_iter()
        .zip(quotas.par_iter())
        .map(|(&((a, ua), (b, ub)), &quota)| -> Result<Vec<Pair>> {
            let n = ua.len() * ub.len();
            let dirs = balanced_quotas(quota, &[n, n], &mut Stream::new(seed, &["AV", "direction", a, b]))?;
            let mut out = Vec::with_capacity(quota);
            let mut ab = Stream::new(seed, &["AV", "pairs", a, b]);
            for i in sample_indices(n, dirs[0], &mut ab) {
                out.push((ua[i / ub.len()], ub[i % ub.len()]));
            }
            let mut ba = Stream::new(seed, &["AV", "pairs", b, a]);
            for i in sample_indices(n, dirs[1], &mut ba) {
                out.push((ub[i / ua.len()], ua[i % ua.len()]));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    finish(
        manifest,
        Task::Av,
        scenario,
        seed,
        nontarget_per_target,
        target_quota,
        targets,
        nontargets,
    )
}

/// Recounts groupings of `list` from scratch.
pub fn balance_check(list: &TrialList, manifest: &CorpusManifest) -> Result<BalanceReport> {
    let zeros = |keys: &[String]| -> BTreeMap<String, usize> {
        keys.iter().map(|k| (k.clone(), 0)).collect()
    };
    let mut r = BalanceReport {
        per_speaker_target_counts: zeros(manifest.speakers()),
        per_speaker_nontarget_counts: zeros(manifest.speakers()),
        per_accent_target_counts: zeros(manifest.accents()),
        per_accent_nontarget_counts: zeros(manifest.accents()),
        per_accent_pair_nontarget_counts: BTreeMap::new(),
        max_imbalance: f64::INFINITY,
    };
    for t in &list.trials {
        let e = manifest
            .get(&t.enrol_utt)
            .ok_or_else(|| Error::UnknownUtterance(t.enrol_utt.clone()))?;
        let s = manifest
            .get(&t.test_utt)
            .ok_or_else(|| Error::UnknownUtterance(t.test_utt.clone()))?;
        let (spk, acc) = match t.label {
            Label::Target => (
                &mut r.per_speaker_target_counts,
                &mut r.per_accent_target_counts,
            ),
            Label::NonTarget => (
                &mut r.per_speaker_nontarget_counts,
                &mut r.per_accent_nontarget_counts,
            ),
        };
        *spk.get_mut(&e.speaker_id).expect("speaker from manifest") += 1;
        *acc.get_mut(&e.accent).expect("accent from manifest") += 1;
        if t.label == Label::NonTarget && e.accent != s.accent {
            let key = if e.accent < s.accent {
                format!("{}|{}", e.accent, s.accent)
            } else {
                format!("{}|{}", s.accent, e.accent)
            };
            *r.per_accent_pair_nontarget_counts.entry(key).or_insert(0) += 1;
        }
    }
    let primary = match list.task {
        Task::Sv => &r.per_speaker_target_counts,
        Task::Av => &r.per_accent_target_counts,
    };
    let max = primary.values().max().copied().unwrap_or(0);
    let min = primary.values().min().copied().unwrap_or(0);
    r.max_imbalance = if min == 0 {
        f64::INFINITY
    } else {
        max as f64 / min as f64
    };
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::UtteranceMeta;
    use std::collections::BTreeSet;

    fn manifest(rows: &[(&str, &str, &str)]) -> CorpusManifest {
        CorpusManifest::new(
            rows.iter()
                .map(|(u, s, a)| UtteranceMeta {
                    utt_id: u.to_string(),
                    speaker_id: s.to_string(),
                    accent: a.to_string(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn grid(k: usize, spk: usize, utt: usize) -> CorpusManifest {
        let mut rows = Vec::new();
        for a in 0..k {
            for s in 0..spk {
                for u in 0..utt {
                    rows.push((format!("a{a}s{s}u{u}"), format!("a{a}s{s}"), format!("acc{a:02}")));
                }
            }
        }
        CorpusManifest::new(
            rows.into_iter()
                .map(|(utt_id, speaker_id, accent)| UtteranceMeta {
                    utt_id,
                    speaker_id,
                    accent,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn sv_rejects_degenerate_inputs() {
        let one = manifest(&[("x", "s", "A")]);
        assert!(matches!(
            gen_sv_trials(&one, &Scenario::baseline(), 1, 0),
            Err(Error::InsufficientSpeakers(1))
        ));
        let single = manifest(&[("u1", "s1", "A"), ("u2", "s2", "A"), ("u3", "s2", "A")]);
        assert!(matches!(
            gen_sv_trials(&single, &Scenario::baseline(), 1, 0),
            Err(Error::InsufficientUtterances(s)) if s == "s1"
        ));
        assert!(matches!(
            gen_sv_trials(&grid(2, 2, 2), &Scenario::baseline(), 0, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn av_rejects_degenerate_inputs() {
        assert!(matches!(
            gen_av_trials(&grid(1, 3, 2), &Scenario::baseline(), TargetQuota::Exhaustive, 1, 0),
            Err(Error::InsufficientAccents(1))
        ));
        let m = manifest(&[("u1", "s1", "A"), ("u2", "s2", "A"), ("u3", "s3", "B")]);
        assert!(matches!(
            gen_av_trials(&m, &Scenario::baseline(), TargetQuota::Exhaustive, 1, 0),
            Err(Error::InsufficientSpeakersForAccent(a)) if a == "B"
        ));
    }

    #[test]
    fn conditions_follow_scenario() {
        let m = grid(2, 2, 2);
        let i = gen_sv_trials(&m, &Scenario::ignorant("sysA").unwrap(), 1, 3).unwrap();
        assert!(i
            .trials
            .iter()
            .all(|t| t.enrol_condition.is_original() && t.test_condition.as_str() == "anon:sysA"));
        let l = gen_sv_trials(&m, &Scenario::lazy_informed("sysA").unwrap(), 1, 3).unwrap();
        assert!(l
            .trials
            .iter()
            .all(|t| t.enrol_condition.as_str() == "anon:sysA" && t.test_condition.as_str() == "anon:sysA"));
        let pairs = |l: &TrialList| -> Vec<(String, String, Label)> {
            l.trials
                .iter()
                .map(|t| (t.enrol_utt.clone(), t.test_utt.clone(), t.label))
                .collect()
        };
        // Pair selection does not depend on the scenario.
        assert_eq!(pairs(&i), pairs(&l));
    }

    #[test]
    fn sv_nontargets_spread_over_enrolment_speakers() {
        let m = grid(3, 4, 5);
        let l = gen_sv_trials(&m, &Scenario::baseline(), 2, 11).unwrap();
        assert_eq!(l.count(Label::NonTarget), 2 * l.count(Label::Target));
        assert!(BalanceReport::spread(&l.balance.per_speaker_nontarget_counts) <= 1);
        assert!(BalanceReport::spread(&l.balance.per_speaker_target_counts) == 0);
        assert_eq!(l.balance.max_imbalance, 1.0);
        let distinct: BTreeSet<(&str, &str)> = l
            .trials
            .iter()
            .map(|t| (t.enrol_utt.as_str(), t.test_utt.as_str()))
            .collect();
        assert_eq!(distinct.len(), l.len());
        check_labels(&l, &m).unwrap();
    }

    #[test]
    fn av_quota_and_pair_balance() {
        let m = grid(4, 3, 3);
        let l = gen_av_trials(&m, &Scenario::baseline(), TargetQuota::PerAccent(20), 1, 5).unwrap();
        assert!(l.balance.per_accent_target_counts.values().all(|&c| c == 20));
        assert_eq!(l.balance.per_accent_pair_nontarget_counts.len(), 6);
        assert!(BalanceReport::spread(&l.balance.per_accent_pair_nontarget_counts) <= 1);
        assert_eq!(l.count(Label::NonTarget), 80);
        check_labels(&l, &m).unwrap();
    }

    #[test]
    fn too_many_nontargets_requested() {
        // Two speakers, 3 utts each: 12 targets, only 18 cross-speaker pairs.
        let m = grid(1, 2, 3);
        assert!(matches!(
            gen_sv_trials(&m, &Scenario::baseline(), 2, 0),
            Err(Error::InsufficientPairs { requested: 24, available: 18 })
        ));
    }

    #[test]
    fn all_trials_on_one_speaker_is_infinitely_imbalanced() {
        let m = grid(1, 2, 2);
        let s = Scenario::baseline();
        let list = TrialList {
            task: Task::Sv,
            scenario: s.clone(),
            seed: 0,
            nontarget_per_target: 1,
            target_quota: TargetQuota::Exhaustive,
            trials: vec![Trial {
                enrol_utt: "a0s0u0".into(),
                enrol_condition: s.enrol_condition(),
                test_utt: "a0s0u1".into(),
                test_condition: s.test_condition(),
                label: Label::Target,
            }],
            balance: empty_balance(),
        };
        let b = balance_check(&list, &m).unwrap();
        assert!(b.max_imbalance.is_infinite());
        assert_eq!(b.per_speaker_target_counts["a0s0"], 1);
        assert_eq!(b.per_speaker_target_counts["a0s1"], 0);
    }

    #[test]
    fn balance_check_unknown_utterance() {
        let m = grid(1, 2, 2);
        let mut l = gen_sv_trials(&m, &Scenario::baseline(), 1, 0).unwrap();
        l.trials[0].test_utt = "nope".into();
        assert!(matches!(balance_check(&l, &m), Err(Error::UnknownUtterance(u)) if u == "nope"));
    }

    #[test]
    fn quotas_respect_caps() {
        let mut s = Stream::new(1, &["q"]);
        let q = balanced_quotas(10, &[1, 100, 100, 0], &mut s).unwrap();
        assert_eq!(q.iter().sum::<usize>(), 10);
        assert_eq!(q[0], 1);
        assert_eq!(q[3], 0);
        assert!(q[1].abs_diff(q[2]) <= 1);
    }

    #[test]
    fn write_read_round_trip() {
        let m = grid(2, 2, 3);
        let l = gen_av_trials(&m, &Scenario::lazy_informed("x").unwrap(), TargetQuota::Exhaustive, 1, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trials.csv");
        l.write(&p).unwrap();
        let back = TrialList::read(&p, &m).unwrap();
        assert_eq!(back, l);
        let csv = std::fs::read_to_string(&p).unwrap();
        assert!(csv.starts_with(TRIALS_HEADER));
        assert!(csv.lines().nth(1).unwrap().starts_with("AV,lazy-informed,x,"));
    }
}
