//! Detection metrics, radii statistics and certified confusion matrices.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::smoothing::Decision;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("ROC AUC needs both classes")]
    SingleClass,
    #[error("no results to summarize")]
    EmptyResults,
}

fn check_len(a: usize, b: usize) -> Result<(), MetricsError> {
    if a == b {
        Ok(())
    } else {
        Err(MetricsError::LengthMismatch { left: a, right: b })
    }
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Pointwise F1 without adjustment.
pub fn pointwise_f1(pred: &[u8], labels: &[u8]) -> Result<f64, MetricsError> {
    check_len(pred.len(), labels.len())?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &y) in pred.iter().zip(labels) {
        match (p != 0, y != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    Ok(f1_from_counts(tp, fp, fn_))
}

/// F1 after promoting a hit anywhere in a labeled anomaly segment to the
/// whole segment.
pub fn point_adjusted_f1(pred: &[u8], labels: &[u8]) -> Result<f64, MetricsError> {
    check_len(pred.len(), labels.len())?;
    let mut adjusted: Vec<u8> = pred.iter().map(|&p| u8::from(p != 0)).collect();
    let mut i = 0;
    while i < labels.len() {
        if labels[i] == 0 {
            i += 1;
            continue;
        }
        let start = i;
        while i < labels.len() && labels[i] != 0 {
            i += 1;
        }
        if adjusted[start..i].contains(&1) {
            adjusted[start..i].fill(1);
        }
    }
    pointwise_f1(&adjusted, labels)
}

/// Area under the ROC curve via the Mann-Whitney statistic, with average
/// ranks for ties.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    check_len(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&y| y != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] != 0 {
                rank_sum_pos += avg;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadiiStats {
    pub mean: f64,
    pub max: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Fraction of radii strictly above zero.
    pub certified_proportion: f64,
}

pub fn radii_stats(radii: &[f64]) -> Result<RadiiStats, MetricsError> {
    if radii.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    let n = radii.len() as f64;
    let mean = radii.iter().sum::<f64>() / n;
    let var = radii.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    Ok(RadiiStats {
        mean,
        max: radii.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        std: var.sqrt(),
        certified_proportion: radii.iter().filter(|&&e| e > 0.0).count() as f64 / n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackMode {
    /// Anomalies perturbed to look benign.
    Evasion,
    /// Benign windows perturbed to raise alarms.
    Availability,
}

impl fmt::Display for AttackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackMode::Evasion => "evasion",
            AttackMode::Availability => "availability",
        })
    }
}

impl FromStr for AttackMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "evasion" => Ok(Self::Evasion),
            "availability" => Ok(Self::Availability),
            other => Err(format!("unknown attack mode {other:?}")),
        }
    }
}

/// One window as seen by the certified metrics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CertifiedItem {
    pub label: u8,
    pub decision: Decision,
    pub dtw_radius: f64,
    /// Decision of the plug-in smoothed score, used for the cells the
    /// attacker does not target.
    pub unperturbed_anomaly: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => (self.tp + self.tn) as f64 / n as f64,
        }
    }

    pub fn precision(&self) -> f64 {
        match self.tp + self.fp {
            0 => 0.0,
            d => self.tp as f64 / d as f64,
        }
    }

    pub fn recall(&self) -> f64 {
        match self.tp + self.fn_ {
            0 => 0.0,
            d => self.tp as f64 / d as f64,
        }
    }

    pub fn f1(&self) -> f64 {
        f1_from_counts(self.tp, self.fp, self.fn_)
    }
}

/// Confusion matrix where the attacked class only counts as correct when
/// certified at DTW budget `t`. Abstentions are never certified.
pub fn certified_confusion(items: &[CertifiedItem], t: f64, mode: AttackMode) -> Confusion {
    let mut c = Confusion::default();
    for it in items {
        let certified = |want: Decision| it.decision == want && it.dtw_radius >= t;
        match (mode, it.label != 0) {
            (AttackMode::Evasion, true) => {
                if certified(Decision::Anomaly) {
                    c.tp += 1;
                } else {
                    c.fn_ += 1;
                }
            }
            (AttackMode::Availability, false) => {
                if certified(Decision::Benign) {
                    c.tn += 1;
                } else {
                    c.fp += 1;
                }
            }
            (_, true) => {
                if it.unperturbed_anomaly {
                    c.tp += 1;
                } else {
                    c.fn_ += 1;
                }
            }
            (_, false) => {
                if it.unperturbed_anomaly {
                    c.fp += 1;
                } else {
                    c.tn += 1;
                }
            }
        }
    }
    c
}

/// Certified accuracy and F1 over a budget grid for both attack modes.
#[derive(Clone, Debug, PartialEq)]
pub struct CertifiedCurves {
    pub budgets: Vec<f64>,
    pub evasion_accuracy: Vec<f64>,
    pub evasion_f1: Vec<f64>,
    pub availability_accuracy: Vec<f64>,
    pub availability_f1: Vec<f64>,
}

/// `[0, 0.01, …, 0.5]`.
pub fn default_budgets() -> Vec<f64> {
    (0..=50).map(|i| i as f64 * 0.01).collect()
}

pub fn certified_curves(items: &[CertifiedItem], budgets: &[f64]) -> CertifiedCurves {
    let mut out = CertifiedCurves {
        budgets: budgets.to_vec(),
        evasion_accuracy: Vec::with_capacity(budgets.len()),
        evasion_f1: Vec::with_capacity(budgets.len()),
        availability_accuracy: Vec::with_capacity(budgets.len()),
        availability_f1: Vec::with_capacity(budgets.len()),
    };
    for &t in budgets {
        let e = certified_confusion(items, t, AttackMode::Evasion);
        let a = certified_confusion(items, t, AttackMode::Availability);
        out.evasion_accuracy.push(e.accuracy());
        out.evasion_f1.push(e.f1());
        out.availability_accuracy.push(a.accuracy());
        out.availability_f1.push(a.f1());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_adjusted_examples() {
        assert_eq!(point_adjusted_f1(&[0, 1, 0, 0], &[0, 1, 1, 0]).unwrap(), 1.0);
        assert_eq!(point_adjusted_f1(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert!((point_adjusted_f1(&[0, 1, 0, 0], &[1, 1, 0, 1]).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(point_adjusted_f1(&[0, 0], &[0, 0]).unwrap(), 0.0);
        assert!(point_adjusted_f1(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 4], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0.1, 0.2], &[1, 1]), Err(MetricsError::SingleClass));
    }

    #[test]
    fn radii_examples() {
        let s = radii_stats(&[0.0, 0.0]).unwrap();
        assert_eq!((s.mean, s.certified_proportion), (0.0, 0.0));
        let s = radii_stats(&[0.0, 0.2]).unwrap();
        assert!((s.mean - 0.1).abs() < 1e-15);
        assert_eq!(s.max, 0.2);
        assert!((s.std - 0.1).abs() < 1e-15);
        assert_eq!(s.certified_proportion, 0.5);
        assert_eq!(radii_stats(&[]), Err(MetricsError::EmptyResults));
    }

    fn item(label: u8, decision: Decision, e: f64, unperturbed: bool) -> CertifiedItem {
        CertifiedItem {
            label,
            decision,
            dtw_radius: e,
            unperturbed_anomaly: unperturbed,
        }
    }

    #[test]
    fn certified_confusion_cases() {
        let items = [
            item(1, Decision::Anomaly, 0.3, true),
            item(1, Decision::Anomaly, 0.1, true),
            item(1, Decision::Abstain, 0.0, true),
            item(0, Decision::Benign, 0.2, false),
            item(0, Decision::Anomaly, 0.2, true),
        ];
        let c = certified_confusion(&items, 0.0, AttackMode::Evasion);
        assert_eq!(c, Confusion { tp: 2, fn_: 1, fp: 1, tn: 1 });
        let c = certified_confusion(&items, 0.2, AttackMode::Evasion);
        assert_eq!(c, Confusion { tp: 1, fn_: 2, fp: 1, tn: 1 });
        let c = certified_confusion(&items, 1.0, AttackMode::Evasion);
        assert_eq!((c.tp, c.recall()), (0, 0.0));
        let c = certified_confusion(&items, 0.2, AttackMode::Availability);
        assert_eq!(c, Confusion { tp: 3, fn_: 0, fp: 1, tn: 1 });
        let c = certified_confusion(&items, 0.25, AttackMode::Availability);
        assert_eq!(c, Confusion { tp: 3, fn_: 0, fp: 2, tn: 0 });
    }

    #[test]
    fn budgets_grid() {
        let b = default_budgets();
        assert_eq!(b.len(), 51);
        assert_eq!(b[0], 0.0);
        assert_eq!(b[50], 0.5);
    }
}
