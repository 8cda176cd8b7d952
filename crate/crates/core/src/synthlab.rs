//! Synthetic corpora with known accent/speaker structure, and embedding-space
//! anonymiser transforms with analytically known effects.
//!
//! An utterance embedding is `mu_accent + delta_speaker + eps_utterance`,
//! each term an isotropic Gaussian drawn from its own seeded stream.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{ConditionId, CorpusManifest, EmbeddingSet, ProbeId, UtteranceMeta};
use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub k_accents: usize,
    pub speakers_per_accent: usize,
    pub utts_per_speaker: usize,
    pub dim: usize,
    pub sigma_accent: f64,
    pub sigma_speaker: f64,
    pub sigma_utt: f64,
    pub seed: u64,
    #[serde(default = "default_probe")]
    pub probe: String,
}

fn default_probe() -> String {
    "synthetic".into()
}

impl SynthConfig {
    /// 13 accents × 10 speakers × 10 utterances with well separated accents.
    pub fn separated(seed: u64) -> Self {
        SynthConfig {
            k_accents: 13,
            speakers_per_accent: 10,
            utts_per_speaker: 10,
            dim: 32,
            sigma_accent: 1.0,
            sigma_speaker: 0.3,
            sigma_utt: 0.1,
            seed,
            probe: default_probe(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |why: &str| Err(Error::InvalidSynthConfig(why.to_owned()));
        if self.k_accents == 0 || self.speakers_per_accent == 0 || self.utts_per_speaker == 0 {
            return bad("counts must be positive");
        }
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        let sigmas = [self.sigma_accent, self.sigma_speaker, self.sigma_utt];
        if sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return bad("sigmas must be finite and non-negative");
        }
        if sigmas.iter().all(|&s| s == 0.0) {
            return bad("at least one sigma must be positive");
        }
        if ProbeId::new(&self.probe).is_err() {
            return bad("invalid probe name");
        }
        Ok(())
    }
}

fn width(n: usize) -> usize {
    n.saturating_sub(1).to_string().len().max(2)
}

fn gaussian(stream: &mut Stream, sigma: f64, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| sigma * stream.normal()).collect()
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Generates the manifest and the `original` embedding set for `cfg`.
pub fn gen_corpus(cfg: &SynthConfig) -> Result<(CorpusManifest, EmbeddingSet)> {
    cfg.validate()?;
    let (wa, ws, wu) = (
        width(cfg.k_accents),
        width(cfg.speakers_per_accent),
        width(cfg.utts_per_speaker),
    );
    let mut rows = Vec::with_capacity(cfg.k_accents * cfg.speakers_per_accent * cfg.utts_per_speaker);
    let mut set = EmbeddingSet::new(ProbeId::new(&cfg.probe)?, ConditionId::original(), cfg.dim);
    for a in 0..cfg.k_accents {
        let accent = format!("acc{a:0wa$}");
        let mu = gaussian(&mut Stream::new(cfg.seed, &["synth", "accent", &accent]), cfg.sigma_accent, cfg.dim);
        for s in 0..cfg.speakers_per_accent {
            let speaker = format!("{accent}_s{s:0ws$}");
            let delta = gaussian(
                &mut Stream::new(cfg.seed, &["synth", "speaker", &speaker]),
                cfg.sigma_speaker,
                cfg.dim,
            );
            for u in 0..cfg.utts_per_speaker {
                let utt = format!("{speaker}_u{u:0wu$}");
                let eps = gaussian(&mut Stream::new(cfg.seed, &["synth", "utt", &utt]), cfg.sigma_utt, cfg.dim);
                let x: Vec<f64> = (0..cfg.dim).map(|i| mu[i] + delta[i] + eps[i]).collect();
                set.insert(utt.clone(), to_f32(&x))?;
                rows.push(UtteranceMeta {
                    utt_id: utt,
                    speaker_id: speaker.clone(),
                    accent: accent.clone(),
                });
            }
        }
    }
    Ok((CorpusManifest::new(rows)?, set))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AnonKind {
    /// Copies vectors unchanged.
    Identity,
    /// Replaces every vector by the set's global mean plus fresh
    /// `N(0, noise_sigma^2 I)` noise.
    AccentCollapse { noise_sigma: f64 },
    /// Within each accent, moves every speaker onto another speaker's mean
    /// offset (a derangement per accent).
    SpeakerScramble,
    /// Pulls each accent's empirical mean towards the global mean by
    /// `lambda`.
    AccentShrink { lambda: f64 },
    /// Adds `N(0, sigma^2 I)` noise.
    AddNoise { sigma: f64 },
}

impl AnonKind {
    pub fn name(&self) -> &'static str {
        match self {
            AnonKind::Identity => "identity",
            AnonKind::AccentCollapse { .. } => "accent-collapse",
            AnonKind::SpeakerScramble => "speaker-scramble",
            AnonKind::AccentShrink { .. } => "accent-shrink",
            AnonKind::AddNoise { .. } => "add-noise",
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            AnonKind::AccentCollapse { noise_sigma: s } | AnonKind::AddNoise { sigma: s } => {
                s.is_finite() && s >= 0.0
            }
            AnonKind::AccentShrink { lambda } => (0.0..=1.0).contains(&lambda),
            AnonKind::Identity | AnonKind::SpeakerScramble => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid parameters for {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnonSpec {
    #[serde(flatten)]
    pub kind: AnonKind,
    #[serde(default)]
    pub seed: u64,
}

struct Means {
    global: Vec<f64>,
    per_accent: BTreeMap<String, Vec<f64>>,
    per_speaker: BTreeMap<String, Vec<f64>>,
}

/// Empirical means, accumulated in sorted utterance order.
fn means(set: &EmbeddingSet, manifest: &CorpusManifest) -> Result<Means> {
    let dim = set.dim();
    let mut global = (vec![0.0; dim], 0usize);
    let mut per_accent: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    let mut per_speaker: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for (utt, v) in set.iter() {
        let meta = manifest
            .get(utt)
            .ok_or_else(|| Error::UnknownUtterance(utt.to_owned()))?;
        let a = per_accent.entry(meta.accent.clone()).or_insert_with(|| (vec![0.0; dim], 0));
        let s = per_speaker
            .entry(meta.speaker_id.clone())
            .or_insert_with(|| (vec![0.0; dim], 0));
        for i in 0..dim {
            let x = v[i] as f64;
            global.0[i] += x;
            a.0[i] += x;
            s.0[i] += x;
        }
        global.1 += 1;
        a.1 += 1;
        s.1 += 1;
    }
    let finish = |(sum, n): (Vec<f64>, usize)| -> Vec<f64> {
        sum.into_iter().map(|x| x / n.max(1) as f64).collect()
    };
    Ok(Means {
        global: finish(global),
        per_accent: per_accent.into_iter().map(|(k, v)| (k, finish(v))).collect(),
        per_speaker: per_speaker.into_iter().map(|(k, v)| (k, finish(v))).collect(),
    })
}

/// Applies `spec` to an `original` set; the result carries condition
/// `anon:<kind name>`.
pub fn apply_anonymiser(set: &EmbeddingSet, manifest: &CorpusManifest, spec: &AnonSpec) -> Result<EmbeddingSet> {
    if !set.condition.is_original() {
        return Err(Error::ConditionError(format!(
            "anonymiser input must be `original`, got `{}`",
            set.condition
        )));
    }
    spec.kind.validate()?;
    let stats = means(set, manifest)?;
    let dim = set.dim();
    let mut out = EmbeddingSet::new(set.probe.clone(), ConditionId::anon(spec.kind.name())?, dim);

    let scramble: BTreeMap<&str, &str> = match spec.kind {
        AnonKind::SpeakerScramble => {
            let present: std::collections::BTreeSet<&str> = set
                .iter()
                .filter_map(|(u, _)| manifest.get(u).map(|m| m.speaker_id.as_str()))
                .collect();
            let mut map = BTreeMap::new();
            for (accent, speakers) in manifest.speakers_by_accent() {
                let mut order: Vec<&str> = speakers.into_iter().filter(|s| present.contains(s)).collect();
                Stream::new(spec.seed, &["anon", "scramble", accent]).shuffle(&mut order);
                for (i, s) in order.iter().enumerate() {
                    map.insert(*s, order[(i + 1) % order.len()]);
                }
            }
            map
        }
        _ => BTreeMap::new(),
    };

    for (utt, v) in set.iter() {
        let meta = manifest.get(utt).expect("checked in means()");
        let x: Vec<f64> = v.iter().map(|&c| c as f64).collect();
        let y: Vec<f64> = match spec.kind {
            AnonKind::Identity => x,
            AnonKind::AccentCollapse { noise_sigma } => {
                let mut s = Stream::new(spec.seed, &["anon", "collapse", utt]);
                stats.global.iter().map(|m| m + noise_sigma * s.normal()).collect()
            }
            AnonKind::SpeakerScramble => {
                let accent_mean = &stats.per_accent[&meta.accent];
                let own = &stats.per_speaker[&meta.speaker_id];
                let other = &stats.per_speaker[scramble[meta.speaker_id.as_str()]];
                // x - (own - accent) + (other - accent)
                (0..dim)
                    .map(|i| x[i] - (own[i] - accent_mean[i]) + (other[i] - accent_mean[i]))
                    .collect()
            }
            AnonKind::AccentShrink { lambda } => {
                let accent_mean = &stats.per_accent[&meta.accent];
                (0..dim)
                    .map(|i| x[i] - lambda * (accent_mean[i] - stats.global[i]))
                    .collect()
            }
            AnonKind::AddNoise { sigma } => {
                let mut s = Stream::new(spec.seed, &["anon", "noise", utt]);
                x.iter().map(|c| c + sigma * s.normal()).collect()
            }
        };
        out.insert(utt, to_f32(&y))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            k_accents: 3,
            speakers_per_accent: 4,
            utts_per_speaker: 5,
            dim: 8,
            sigma_accent: 1.0,
            sigma_speaker: 0.3,
            sigma_utt: 0.1,
            seed,
            probe: "synthetic".into(),
        }
    }

    #[test]
    fn full_sized_structure() {
        let (m, set) = gen_corpus(&SynthConfig::separated(1)).unwrap();
        assert_eq!(m.len(), 1300);
        assert_eq!(m.k(), 13);
        assert_eq!(m.speakers().len(), 130);
        assert_eq!(set.len(), 1300);
        assert_eq!(set.dim(), 32);
        set.check_against(&m).unwrap();
    }

    #[test]
    fn deterministic() {
        let (m1, a) = gen_corpus(&small(5)).unwrap();
        let (m2, b) = gen_corpus(&small(5)).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(a, b);
        let (_, c) = gen_corpus(&small(6)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_configs() {
        let mut c = small(1);
        c.dim = 1;
        assert!(matches!(gen_corpus(&c), Err(Error::InvalidSynthConfig(_))));
        let mut c = small(1);
        c.sigma_accent = 0.0;
        c.sigma_speaker = 0.0;
        c.sigma_utt = 0.0;
        assert!(matches!(gen_corpus(&c), Err(Error::InvalidSynthConfig(_))));
        let mut c = small(1);
        c.speakers_per_accent = 0;
        assert!(matches!(gen_corpus(&c), Err(Error::InvalidSynthConfig(_))));
        let mut c = small(1);
        c.sigma_utt = -1.0;
        assert!(matches!(gen_corpus(&c), Err(Error::InvalidSynthConfig(_))));
    }

    #[test]
    fn component_variances_match_config() {
        // Within-speaker spread is sigma_utt; spread of accent means is sigma_accent.
        let cfg = SynthConfig {
            k_accents: 40,
            speakers_per_accent: 2,
            utts_per_speaker: 20,
            dim: 16,
            sigma_accent: 2.0,
            sigma_speaker: 0.5,
            sigma_utt: 0.25,
            seed: 3,
            probe: "p".into(),
        };
        let (m, set) = gen_corpus(&cfg).unwrap();
        let mut within = Vec::new();
        for utts in m.utterances_by_speaker().values() {
            let vs: Vec<&[f32]> = utts.iter().map(|u| set.get(u).unwrap()).collect();
            for d in 0..cfg.dim {
                let mean = vs.iter().map(|v| v[d] as f64).sum::<f64>() / vs.len() as f64;
                within.extend(vs.iter().map(|v| (v[d] as f64 - mean).powi(2) * vs.len() as f64 / (vs.len() - 1) as f64));
            }
        }
        let var_u = within.iter().sum::<f64>() / within.len() as f64;
        assert!((var_u.sqrt() - 0.25).abs() < 0.01, "{}", var_u.sqrt());
    }

    #[test]
    fn shrink_zero_is_bitwise_identity() {
        let (m, set) = gen_corpus(&small(2)).unwrap();
        let out = apply_anonymiser(&set, &m, &AnonSpec { kind: AnonKind::AccentShrink { lambda: 0.0 }, seed: 0 }).unwrap();
        assert_eq!(out.condition.as_str(), "anon:accent-shrink");
        for ((_, a), (_, b)) in set.iter().zip(out.iter()) {
            assert_eq!(
                a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
        let id = apply_anonymiser(&set, &m, &AnonSpec { kind: AnonKind::Identity, seed: 0 }).unwrap();
        assert_eq!(id.with_condition(ConditionId::original()), set);
    }

    #[test]
    fn shrink_one_centres_accents() {
        let (m, set) = gen_corpus(&small(2)).unwrap();
        let out = apply_anonymiser(&set, &m, &AnonSpec { kind: AnonKind::AccentShrink { lambda: 1.0 }, seed: 0 }).unwrap();
        let stats = means(&out.clone().with_condition(ConditionId::original()), &m).unwrap();
        for mean in stats.per_accent.values() {
            for (a, g) in mean.iter().zip(&stats.global) {
                assert!((a - g).abs() < 1e-6, "{a} vs {g}");
            }
        }
    }

    #[test]
    fn scramble_preserves_accent_means_and_moves_speakers() {
        let (m, set) = gen_corpus(&small(4)).unwrap();
        let out = apply_anonymiser(&set, &m, &AnonSpec { kind: AnonKind::SpeakerScramble, seed: 9 }).unwrap();
        let before = means(&set, &m).unwrap();
        let after = means(&out.clone().with_condition(ConditionId::original()), &m).unwrap();
        for (a, mean) in &before.per_accent {
            for (x, y) in mean.iter().zip(&after.per_accent[a]) {
                assert!((x - y).abs() < 1e-5);
            }
        }
        // Every speaker now sits on another speaker's mean.
        for (s, mean) in &after.per_speaker {
            let own = &before.per_speaker[s];
            let dist: f64 = mean.iter().zip(own).map(|(x, y)| (x - y).powi(2)).sum();
            assert!(dist > 1e-4, "speaker {s} kept its own offset");
            let matches_some_other = before.per_speaker.iter().any(|(o, om)| {
                o != s && om.iter().zip(mean).all(|(x, y)| (x - y).abs() < 1e-5)
            });
            assert!(matches_some_other);
        }
    }

    #[test]
    fn collapse_and_noise() {
        let (m, set) = gen_corpus(&small(4)).unwrap();
        let out = apply_anonymiser(&set, &m, &AnonSpec { kind: AnonKind::AccentCollapse { noise_sigma: 0.0 }, seed: 1 }).unwrap();
        let first = out.iter().next().unwrap().1.to_vec();
        assert!(out.iter().all(|(_, v)| v == first.as_slice()));
        let noisy = apply_anonymiser(&set, &m, &AnonSpec { kind: AnonKind::AddNoise { sigma: 0.5 }, seed: 1 }).unwrap();
        assert_eq!(noisy.len(), set.len());
        assert_ne!(noisy.with_condition(ConditionId::original()), set);
    }

    #[test]
    fn requires_original_input() {
        let (m, set) = gen_corpus(&small(4)).unwrap();
        let anon = set.with_condition(ConditionId::anon("x").unwrap());
        assert!(matches!(
            apply_anonymiser(&anon, &m, &AnonSpec { kind: AnonKind::Identity, seed: 0 }),
            Err(Error::ConditionError(_))
        ));
    }

    #[test]
    fn spec_parameter_ranges() {
        let (m, set) = gen_corpus(&small(4)).unwrap();
        for kind in [
            AnonKind::AccentShrink { lambda: 1.5 },
            AnonKind::AddNoise { sigma: -1.0 },
            AnonKind::AccentCollapse { noise_sigma: f64::NAN },
        ] {
            assert!(apply_anonymiser(&set, &m, &AnonSpec { kind, seed: 0 }).is_err());
        }
    }

    #[test]
    fn spec_from_toml() {
        let s: AnonSpec = toml::from_str("kind = \"accent-shrink\"\nlambda = 0.5\nseed = 3\n").unwrap();
        assert_eq!(s, AnonSpec { kind: AnonKind::AccentShrink { lambda: 0.5 }, seed: 3 });
    }
}
