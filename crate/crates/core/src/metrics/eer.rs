//! Equal error rate from target / non-target score lists.
//!
//! A trial is accepted when `score >= threshold`. Identical scores form a
//! single operating point, so the empirical ROC has one point per distinct
//! score value plus the accept-all and reject-all ends. The EER is read off
//! where FAR − FRR changes sign, interpolating linearly between the two
//! bracketing points; an exact crossing is returned as is.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::ScoreSet;
use crate::trials::TrialList;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    pub eer_percent: f64,
    /// Interpolated operating threshold at the crossing.
    pub threshold: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

/// One operating point: accept scores `>= threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

struct Point {
    threshold: f64,
    /// non-targets accepted
    fa: u64,
    /// targets rejected
    fr: u64,
}

fn sorted(scores: &[f64]) -> Result<Vec<f64>> {
    if let Some(x) = scores.iter().find(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite score {x}")));
    }
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

fn operating_points(targets: &[f64], nontargets: &[f64]) -> Result<Vec<Point>> {
    if targets.is_empty() || nontargets.is_empty() {
        return Err(Error::MissingTrialClass);
    }
    let tar = sorted(targets)?;
    let non = sorted(nontargets)?;
    let lowest = tar[0].min(non[0]);
    let mut points = vec![Point {
        threshold: lowest,
        fa: non.len() as u64,
        fr: 0,
    }];
    let (mut i, mut j) = (0usize, 0usize);
    while i < tar.len() || j < non.len() {
        let v = match (tar.get(i), non.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        while i < tar.len() && tar[i] == v {
            i += 1;
        }
        while j < non.len() && non[j] == v {
            j += 1;
        }
        let next = match (tar.get(i), non.get(j)) {
            (Some(&a), Some(&b)) => Some(a.min(b)),
            (Some(&a), None) => Some(a),
            (None, Some(&b)) => Some(b),
            (None, None) => None,
        };
        let threshold = match next {
            Some(n) => v + (n - v) / 2.0,
            None => v.next_up(),
        };
        points.push(Point {
            threshold,
            fa: (non.len() - j) as u64,
            fr: i as u64,
        });
    }
    Ok(points)
}

/// The empirical ROC, from accept-all to reject-all.
pub fn roc_points(targets: &[f64], nontargets: &[f64]) -> Result<Vec<RocPoint>> {
    let (nt, nn) = (targets.len() as f64, nontargets.len() as f64);
    Ok(operating_points(targets, nontargets)?
        .into_iter()
        .map(|p| RocPoint {
            threshold: p.threshold,
            far: p.fa as f64 / nn,
            frr: p.fr as f64 / nt,
        })
        .collect())
}

pub fn eer(targets: &[f64], nontargets: &[f64]) -> Result<EerResult> {
    let points = operating_points(targets, nontargets)?;
    let (nt, nn) = (targets.len() as u64, nontargets.len() as u64);
    // sign of FAR - FRR = fa/nn - fr/nt, compared exactly in integers
    let diff_sign = |p: &Point| (p.fa as u128 * nt as u128).cmp(&(p.fr as u128 * nn as u128));
    let far = |p: &Point| p.fa as f64 / nn as f64;
    let frr = |p: &Point| p.fr as f64 / nt as f64;

    let k = points
        .iter()
        .position(|p| diff_sign(p) != std::cmp::Ordering::Greater)
        .expect("reject-all point has FAR 0 and FRR 1");
    let hit = &points[k];
    let (eer, threshold) = if diff_sign(hit) == std::cmp::Ordering::Equal {
        (far(hit), hit.threshold)
    } else {
        let prev = &points[k - 1];
        let d_prev = far(prev) - frr(prev);
        let d_hit = far(hit) - frr(hit);
        let alpha = d_prev / (d_prev - d_hit);
        (
            far(prev) + alpha * (far(hit) - far(prev)),
            prev.threshold + alpha * (hit.threshold - prev.threshold),
        )
    };
    Ok(EerResult {
        eer_percent: 100.0 * eer,
        threshold,
        n_target: targets.len(),
        n_nontarget: nontargets.len(),
    })
}

/// EER of a scored trial list.
pub fn compute_eer(scores: &ScoreSet, list: &TrialList) -> Result<EerResult> {
    if scores.scores.len() != list.trials.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores for {} trials",
            scores.scores.len(),
            list.trials.len()
        )));
    }
    let (tar, non) = scores.by_label(list);
    eer(&tar, &non)
}
