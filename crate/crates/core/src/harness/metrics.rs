use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::manifest::Label;

/// Scores at or above this are predicted real.
pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetMetrics {
    pub acc: f64,
    /// Absent when the subset has no fake samples.
    pub ap: Option<f64>,
    pub n_real: usize,
    pub n_fake: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    /// Mean of the defined per-subset APs; 0 when none is defined.
    pub map: f64,
    pub per_subset: BTreeMap<String, SubsetMetrics>,
    pub n_real: usize,
    pub n_fake: usize,
}

/// Fraction of correct predictions; `scores` are probabilities of real.
pub fn accuracy(scores: &[f64], labels: &[Label]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let hits = scores.iter().zip(labels).filter(|(&s, &l)| (s >= THRESHOLD) == (l == Label::Real)).count();
    hits as f64 / scores.len() as f64
}

/// Average precision of `scores` for the positive class. Tied scores form
/// one threshold: each positive is credited with the precision over all
/// samples scoring at least as high as it. `None` without positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut seen, mut tp, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut group_pos = 0;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            group_pos += positive[order[j]] as usize;
            j += 1;
        }
        seen += j - i;
        tp += group_pos;
        ap += group_pos as f64 * tp as f64 / seen as f64;
        i = j;
    }
    Some(ap / n_pos as f64)
}

/// Accuracy and per-generator AP, fake being the positive class with
/// fake-score `1 - score`.
pub fn compute_metrics(scores: &[f64], labels: &[Label], generators: &[String]) -> Metrics {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in generators.iter().enumerate() {
        groups.entry(g.as_str()).or_default().push(i);
    }
    let mut per_subset = BTreeMap::new();
    for (g, idx) in groups {
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let l: Vec<Label> = idx.iter().map(|&i| labels[i]).collect();
        let fake_scores: Vec<f64> = s.iter().map(|v| 1.0 - v).collect();
        let is_fake: Vec<bool> = l.iter().map(|&x| x == Label::Fake).collect();
        let n_fake = is_fake.iter().filter(|&&f| f).count();
        per_subset.insert(
            g.to_string(),
            SubsetMetrics {
                acc: accuracy(&s, &l),
                ap: average_precision(&fake_scores, &is_fake),
                n_real: l.len() - n_fake,
                n_fake,
            },
        );
    }
    let aps: Vec<f64> = per_subset.values().filter_map(|m| m.ap).collect();
    let map = if aps.is_empty() { 0.0 } else { aps.iter().sum::<f64>() / aps.len() as f64 };
    let n_fake = labels.iter().filter(|&&l| l == Label::Fake).count();
    Metrics { acc: accuracy(scores, labels), map, per_subset, n_real: labels.len() - n_fake, n_fake }
}
