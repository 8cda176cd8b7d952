//! Reference oracles and tolerances for the acceptance checks. The oracles
//! are deliberately naive (quadratic sweeps, full enumeration) so that
//! they share no code path with the library they check.

use std::collections::BTreeSet;
use std::path::Path;

use anonleak::corpus::CorpusManifest;
use serde::Deserialize;

/// EER by brute force: evaluate FAR and FRR at -inf, at every midpoint
/// between adjacent distinct scores and at +inf, then interpolate
/// linearly across the first sign change of FAR - FRR.
pub fn brute_force_eer(targets: &[f64], nontargets: &[f64]) -> f64 {
    let mut all: Vec<f64> = targets.iter().chain(nontargets).copied().collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.dedup();
    let mut thresholds = vec![f64::NEG_INFINITY];
    thresholds.extend(all.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    thresholds.push(f64::INFINITY);
    let rates = |t: f64| {
        let far = nontargets.iter().filter(|&&s| s >= t).count() as f64 / nontargets.len() as f64;
        let frr = targets.iter().filter(|&&s| s < t).count() as f64 / targets.len() as f64;
        (far, frr)
    };
    let mut prev = rates(thresholds[0]);
    if prev.0 == prev.1 {
        return 100.0 * prev.0;
    }
    for &t in &thresholds[1..] {
        let cur = rates(t);
        let d0 = prev.0 - prev.1;
        let d1 = cur.0 - cur.1;
        if d1 == 0.0 {
            return 100.0 * cur.0;
        }
        if d1 < 0.0 {
            let a = d0 / (d0 - d1);
            return 100.0 * (prev.0 + a * (cur.0 - prev.0));
        }
        prev = cur;
    }
    unreachable!("FAR - FRR is -1 at +inf")
}

/// All ordered (enrol, test) utterance pairs that must be SV targets.
pub fn sv_targets(m: &CorpusManifest) -> BTreeSet<(String, String)> {
    pairs(m, |a, b| a.speaker_id == b.speaker_id)
}

/// All ordered pairs that qualify as AV targets.
pub fn av_targets(m: &CorpusManifest) -> BTreeSet<(String, String)> {
    pairs(m, |a, b| a.accent == b.accent && a.speaker_id != b.speaker_id)
}

fn pairs(
    m: &CorpusManifest,
    keep: impl Fn(&anonleak::corpus::UtteranceMeta, &anonleak::corpus::UtteranceMeta) -> bool,
) -> BTreeSet<(String, String)> {
    let mut out = BTreeSet::new();
    for a in m.utterances() {
        for b in m.utterances() {
            if a.utt_id != b.utt_id && keep(a, b) {
                out.insert((a.utt_id.clone(), b.utt_id.clone()));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub war_table: WarTable,
    pub eer_oracle: EerOracle,
    pub synth: Synth,
    pub budgets: Budgets,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarTable {
    /// Allowed |WAR - printed WAR| for the row printed from unrounded recalls.
    pub b4_tolerance: f64,
    pub relative_change_tolerance: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EerOracle {
    pub sets: usize,
    pub min_class: usize,
    pub max_class: usize,
    pub tolerance: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Synth {
    pub seeds: Vec<u64>,
    pub chance_tolerance: f64,
    pub eer_low: f64,
    pub eer_high: f64,
    pub war_shift: f64,
    pub lambdas: Vec<f64>,
    pub step_tolerance: f64,
}

/// Wall-clock limits in seconds.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budgets {
    pub war_table: f64,
    pub eer_oracle: f64,
    pub identity: f64,
    pub collapse: f64,
    pub scramble: f64,
    pub shrink: f64,
    pub determinism: f64,
    pub trials: f64,
}

impl Tolerances {
    pub fn load(path: &Path) -> Tolerances {
        let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        toml::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
    }
}
