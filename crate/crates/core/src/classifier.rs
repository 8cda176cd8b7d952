//! Nearest-centroid accent classifier (cosine), used as the accent
//! identification backend.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_aemb, write_aemb, ConditionId, CorpusManifest, EmbeddingSet, ProbeId};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::scoring::cosine;
use crate::util::{read_to_string, to_json_pretty, write_file};

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidModel {
    pub probe: ProbeId,
    /// Sorted accent labels.
    pub labels: Vec<String>,
    /// Unit-norm centroids, parallel to `labels`.
    pub centroids: Vec<Vec<f32>>,
    pub training_condition: ConditionId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelMeta {
    kind: String,
    probe: ProbeId,
    labels: Vec<String>,
    training_condition: ConditionId,
}

const MODEL_KIND: &str = "nearest-centroid";

/// Fits one centroid per manifest accent from the records of `train`.
pub fn fit_centroids(train: &EmbeddingSet, manifest: &CorpusManifest) -> Result<CentroidModel> {
    fit_on(train, manifest, |_| true)
}

/// Like [`fit_centroids`], restricted to utterances accepted by `keep`.
pub fn fit_on(
    train: &EmbeddingSet,
    manifest: &CorpusManifest,
    keep: impl Fn(&str) -> bool,
) -> Result<CentroidModel> {
    let dim = train.dim();
    let mut sums: BTreeMap<&str, (Vec<f64>, usize)> = manifest
        .accents()
        .iter()
        .map(|a| (a.as_str(), (vec![0.0; dim], 0)))
        .collect();
    // train.iter() is in sorted id order, so accumulation order is fixed.
    for (utt, v) in train.iter().filter(|(u, _)| keep(u)) {
        let meta = manifest
            .get(utt)
            .ok_or_else(|| Error::UnknownUtterance(utt.to_owned()))?;
        let (sum, n) = sums.get_mut(meta.accent.as_str()).expect("accent from manifest");
        for (s, &x) in sum.iter_mut().zip(v) {
            *s += x as f64;
        }
        *n += 1;
    }
    let mut labels = Vec::with_capacity(sums.len());
    let mut centroids = Vec::with_capacity(sums.len());
    for (accent, (sum, n)) in sums {
        if n == 0 {
            return Err(Error::EmptyAccentClass(accent.to_owned()));
        }
        let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::DegenerateCentroid(accent.to_owned()));
        }
        labels.push(accent.to_owned());
        centroids.push(sum.iter().map(|x| (x / norm) as f32).collect());
    }
    Ok(CentroidModel {
        probe: train.probe.clone(),
        labels,
        centroids,
        training_condition: train.condition.clone(),
    })
}

impl CentroidModel {
    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    /// Best label and the cosine to every centroid (in label order). Ties go
    /// to the lexicographically first label.
    pub fn classify(&self, x: &[f32]) -> Result<(&str, Vec<f64>)> {
        let scores = self
            .centroids
            .iter()
            .map(|c| cosine(x, c))
            .collect::<Result<Vec<f64>>>()?;
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate().skip(1) {
            if s > scores[best] {
                best = i;
            }
        }
        Ok((&self.labels[best], scores))
    }

    /// Centroids as AEMB (keyed by label) plus a `.meta.json` sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_aemb(
            path,
            self.dim(),
            self.labels.len(),
            self.labels
                .iter()
                .map(String::as_str)
                .zip(self.centroids.iter().map(Vec::as_slice)),
        )?;
        let meta = ModelMeta {
            kind: MODEL_KIND.into(),
            probe: self.probe.clone(),
            labels: self.labels.clone(),
            training_condition: self.training_condition.clone(),
        };
        write_file(&path.with_extension("meta.json"), to_json_pretty(&meta)?.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let meta: ModelMeta = serde_json::from_str(&read_to_string(&path.with_extension("meta.json"))?)?;
        if meta.kind != MODEL_KIND {
            return Err(Error::FormatError(format!("not a centroid model: `{}`", meta.kind)));
        }
        let (_, records) = read_aemb(path)?;
        let names: Vec<&String> = records.iter().map(|(l, _)| l).collect();
        if names != meta.labels.iter().collect::<Vec<_>>() {
            return Err(Error::FormatError("centroid labels differ from sidecar".into()));
        }
        Ok(CentroidModel {
            probe: meta.probe,
            labels: meta.labels,
            centroids: records.into_iter().map(|(_, v)| v).collect(),
            training_condition: meta.training_condition,
        })
    }
}

pub fn classify<'m>(model: &'m CentroidModel, x: &[f32]) -> Result<(&'m str, Vec<f64>)> {
    model.classify(x)
}

/// Confusion matrix of `model` over every record of `eval`.
pub fn evaluate_aid(
    model: &CentroidModel,
    eval: &EmbeddingSet,
    manifest: &CorpusManifest,
) -> Result<ConfusionMatrix> {
    evaluate_on(model, eval, manifest, |_| true)
}

/// Like [`evaluate_aid`], restricted to utterances accepted by `keep`.
pub fn evaluate_on(
    model: &CentroidModel,
    eval: &EmbeddingSet,
    manifest: &CorpusManifest,
    keep: impl Fn(&str) -> bool,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::zeros(model.labels.clone())?;
    for (utt, v) in eval.iter().filter(|(u, _)| keep(u)) {
        let at = |e: Error| Error::AtUtterance {
            utt_id: utt.to_owned(),
            source: Box::new(e),
        };
        let meta = manifest
            .get(utt)
            .ok_or_else(|| Error::UnknownUtterance(utt.to_owned()))?;
        let (predicted, _) = model.classify(v).map_err(at)?;
        cm.add(&meta.accent, predicted).map_err(at)?;
    }
    Ok(cm)
}

/// Speaker-disjoint cross-validated AID: speakers of each accent are dealt
/// round-robin into `folds` folds; each fold is evaluated on `eval` by a
/// model fitted on `train` without that fold's speakers. `folds <= 1` fits
/// on everything.
pub fn cross_validated_aid(
    train: &EmbeddingSet,
    eval: &EmbeddingSet,
    manifest: &CorpusManifest,
    folds: usize,
) -> Result<ConfusionMatrix> {
    if folds <= 1 {
        return evaluate_aid(&fit_centroids(train, manifest)?, eval, manifest);
    }
    let mut fold_of: BTreeMap<&str, usize> = BTreeMap::new();
    for speakers in manifest.speakers_by_accent().values() {
        for (i, s) in speakers.iter().enumerate() {
            fold_of.insert(s, i % folds);
        }
    }
    let fold = |utt: &str| manifest.get(utt).map(|m| fold_of[m.speaker_id.as_str()]);
    let mut total = ConfusionMatrix::zeros(manifest.accents().to_vec())?;
    for f in 0..folds {
        let model = fit_on(train, manifest, |u| fold(u) != Some(f))?;
        total.merge(&evaluate_on(&model, eval, manifest, |u| fold(u) == Some(f))?)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::UtteranceMeta;
    use proptest::prelude::*;

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

    fn set(records: &[(&str, Vec<f32>)]) -> EmbeddingSet {
        let dim = records[0].1.len();
        let mut s = EmbeddingSet::new(ProbeId::new("p").unwrap(), ConditionId::original(), dim);
        for (id, v) in records {
            s.insert(*id, v.clone()).unwrap();
        }
        s
    }

    #[test]
    fn single_embedding_centroids() {
        let m = manifest(&[("u1", "s1", "B"), ("u2", "s2", "A")]);
        let model = fit_centroids(&set(&[("u1", vec![3.0, 4.0]), ("u2", vec![0.0, -2.0])]), &m).unwrap();
        assert_eq!(model.labels, ["A", "B"]);
        assert_eq!(model.centroids[0], vec![0.0, -1.0]);
        assert_eq!(model.centroids[1], vec![0.6, 0.8]);
    }

    #[test]
    fn mean_of_orthogonal_pair() {
        let m = manifest(&[("u1", "s1", "A"), ("u2", "s1", "A")]);
        let model = fit_centroids(&set(&[("u1", vec![1.0, 0.0]), ("u2", vec![0.0, 1.0])]), &m).unwrap();
        let h = std::f32::consts::FRAC_1_SQRT_2;
        assert!((model.centroids[0][0] - h).abs() < 1e-7);
        assert!((model.centroids[0][1] - h).abs() < 1e-7);
    }

    #[test]
    fn fit_errors() {
        let m = manifest(&[("u1", "s1", "A"), ("u2", "s2", "B")]);
        assert!(matches!(
            fit_centroids(&set(&[("u1", vec![1.0, 0.0])]), &m),
            Err(Error::EmptyAccentClass(a)) if a == "B"
        ));
        let m = manifest(&[("u1", "s1", "A"), ("u2", "s1", "A")]);
        assert!(matches!(
            fit_centroids(&set(&[("u1", vec![1.0, 0.0]), ("u2", vec![-1.0, 0.0])]), &m),
            Err(Error::DegenerateCentroid(_))
        ));
    }

    #[test]
    fn classify_exact_and_tied() {
        let m = manifest(&[("u1", "s1", "B"), ("u2", "s2", "A")]);
        let model = fit_centroids(&set(&[("u1", vec![1.0, 0.0]), ("u2", vec![0.0, 1.0])]), &m).unwrap();
        let (label, scores) = classify(&model, &[1.0, 0.0]).unwrap();
        assert_eq!(label, "B");
        assert_eq!(scores[1], 1.0);
        let (label, scores) = classify(&model, &[2.0, 2.0]).unwrap();
        assert_eq!(scores[0], scores[1]);
        assert_eq!(label, "A");
        assert!(matches!(classify(&model, &[1.0]), Err(Error::DimMismatch(1, 2))));
        assert!(matches!(classify(&model, &[0.0, 0.0]), Err(Error::DegenerateEmbedding(_))));
    }

    #[test]
    fn evaluate_identity_and_empty() {
        let m = manifest(&[("u1", "s1", "A"), ("u2", "s2", "B"), ("u3", "s3", "C")]);
        let train = set(&[
            ("u1", vec![1.0, 0.0, 0.0]),
            ("u2", vec![0.0, 1.0, 0.0]),
            ("u3", vec![0.0, 0.0, 1.0]),
        ]);
        let model = fit_centroids(&train, &m).unwrap();
        let cm = evaluate_aid(&model, &train, &m).unwrap();
        assert_eq!(cm.counts(), [vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        let empty = EmbeddingSet::new(ProbeId::new("p").unwrap(), ConditionId::original(), 3);
        let cm = evaluate_aid(&model, &empty, &m).unwrap();
        assert!(cm.counts().iter().flatten().all(|&c| c == 0));
        assert_eq!(cm.labels().len(), 3);
    }

    #[test]
    fn model_round_trip() {
        let m = manifest(&[("u1", "s1", "B"), ("u2", "s2", "A")]);
        let model = fit_centroids(&set(&[("u1", vec![3.0, 4.0]), ("u2", vec![0.5, -2.0])]), &m).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.aemb");
        model.write(&path).unwrap();
        assert_eq!(CentroidModel::read(&path).unwrap(), model);
    }

    #[test]
    fn fit_ignores_record_order() {
        let rows: Vec<(String, String, String)> = (0..30)
            .map(|i| (format!("u{i:02}"), format!("s{}", i % 6), format!("acc{}", i % 3)))
            .collect();
        let m = CorpusManifest::new(
            rows.iter()
                .map(|(u, s, a)| UtteranceMeta {
                    utt_id: u.clone(),
                    speaker_id: s.clone(),
                    accent: a.clone(),
                })
                .collect(),
        )
        .unwrap();
        let vecs: Vec<(String, Vec<f32>)> = (0..30)
            .map(|i| (format!("u{i:02}"), vec![(i as f32).sin() + 0.1, (i as f32 * 0.7).cos(), 0.3]))
            .collect();
        let build = |order: Vec<usize>| {
            let mut s = EmbeddingSet::new(ProbeId::new("p").unwrap(), ConditionId::original(), 3);
            for i in order {
                s.insert(vecs[i].0.clone(), vecs[i].1.clone()).unwrap();
            }
            fit_centroids(&s, &m).unwrap()
        };
        let a = build((0..30).collect());
        let b = build((0..30).rev().collect());
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn decisions_are_scale_invariant(
            x in proptest::collection::vec(-5.0f32..5.0, 3).prop_filter("nonzero", |v| v.iter().any(|&c| c.abs() > 1e-3)),
            scale in 0.01f32..100.0,
        ) {
            let m = manifest(&[("u1", "s1", "A"), ("u2", "s2", "B"), ("u3", "s3", "C")]);
            let model = fit_centroids(&set(&[
                ("u1", vec![1.0, 0.2, 0.0]),
                ("u2", vec![-0.3, 1.0, 0.5]),
                ("u3", vec![0.1, -0.4, 1.0]),
            ]), &m).unwrap();
            let scaled: Vec<f32> = x.iter().map(|c| c * scale).collect();
            let (a, sa) = model.classify(&x).unwrap();
            let (b, _) = model.classify(&scaled).unwrap();
            // Decisions can only differ on a numerical near-tie.
            let mut sorted = sa.clone();
            sorted.sort_by(|p, q| q.total_cmp(p));
            prop_assume!(sorted[0] - sorted[1] > 1e-9);
            prop_assert_eq!(a, b);
        }
    }
}
