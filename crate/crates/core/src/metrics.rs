//! Patient-level AUC and Macro-F1.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Area under the ROC curve in the Mann-Whitney form: the fraction of
/// (positive, negative) pairs where the positive scores higher, ties
/// counting one half.
///
/// Computed from mid-ranks, which gives exactly the pair count.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("labels", scores.len(), labels.len()));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidArgument(format!("label must be 0 or 1, got {l}")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("AUC scores contain NaN".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument(
            "AUC needs both positive and negative examples".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps mid-ranks integral.
    let mut twice_rank_sum_pos: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share the mid-rank (i + j + 2) / 2.
        let twice_mid = (i + j + 2) as u64;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        twice_rank_sum_pos += twice_mid * pos_in_group;
        i = j + 1;
    }
    let (np, nn) = (n_pos as u64, n_neg as u64);
    // 2U = 2R - n_pos(n_pos + 1); AUC = U / (n_pos n_neg).
    let twice_u = twice_rank_sum_pos - np * (np + 1);
    Ok(twice_u as f64 / (2 * np * nn) as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(predictions: &[u8], labels: &[u8]) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::shape("labels", predictions.len(), labels.len()));
        }
        let mut c = Confusion::default();
        for (&p, &y) in predictions.iter().zip(labels) {
            match (p, y) {
                (1, 1) => c.tp += 1,
                (1, 0) => c.fp += 1,
                (0, 0) => c.tn += 1,
                (0, 1) => c.fn_ += 1,
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "predictions and labels must be 0 or 1, got ({p}, {y})"
                    )))
                }
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// Unweighted mean of the positive-class and negative-class F1 scores.
pub fn macro_f1(predictions: &[u8], labels: &[u8]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("Macro-F1 of an empty set".into()));
    }
    let c = Confusion::from_predictions(predictions, labels)?;
    Ok(macro_f1_from(&c))
}

fn macro_f1_from(c: &Confusion) -> f64 {
    let pos = f1(c.tp, c.fp, c.fn_);
    let neg = f1(c.tn, c.fn_, c.fp);
    (pos + neg) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scheme: String,
    pub auc: f64,
    pub macro_f1: f64,
    pub confusion: Confusion,
    pub n_patients: usize,
}

pub const REPORT_CSV_HEADER: &str = "scheme,auc,macro_f1,tp,fp,tn,fn,n_patients";

impl MetricsReport {
    pub fn compute(scheme: &str, scores: &[f64], predictions: &[u8], labels: &[u8]) -> Result<Self> {
        let auc = roc_auc(scores, labels)?;
        let confusion = Confusion::from_predictions(predictions, labels)?;
        if confusion.total() == 0 {
            return Err(Error::InvalidArgument("no patients to evaluate".into()));
        }
        Ok(MetricsReport {
            scheme: scheme.to_owned(),
            auc,
            macro_f1: macro_f1_from(&confusion),
            confusion,
            n_patients: labels.len(),
        })
    }

    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let c = &self.confusion;
        let _ = writeln!(s, "scheme={}", self.scheme);
        let _ = writeln!(s, "auc={:.6}", self.auc);
        let _ = writeln!(s, "macro_f1={:.6}", self.macro_f1);
        let _ = writeln!(s, "tp={}", c.tp);
        let _ = writeln!(s, "fp={}", c.fp);
        let _ = writeln!(s, "tn={}", c.tn);
        let _ = writeln!(s, "fn={}", c.fn_);
        let _ = writeln!(s, "n_patients={}", self.n_patients);
        s
    }

    /// One row matching [`REPORT_CSV_HEADER`].
    pub fn to_csv_row(&self) -> String {
        let c = &self.confusion;
        format!(
            "{},{:.6},{:.6},{},{},{},{},{}",
            self.scheme, self.auc, self.macro_f1, c.tp, c.fp, c.tn, c.fn_, self.n_patients
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(roc_auc(&[0.1], &[1, 0]).is_err());
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&[1, 0, 1, 0], &[1, 0, 1, 0]).unwrap(), 1.0);
        let v = macro_f1(&[1, 1, 1, 1], &[1, 1, 0, 0]).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(macro_f1(&[0, 1, 0], &[1, 0, 1]).unwrap(), 0.0);
        assert!(macro_f1(&[], &[]).is_err());
        assert!(macro_f1(&[2], &[1]).is_err());
    }

    #[test]
    fn report_formats() {
        let r = MetricsReport::compute("simple", &[0.2, 0.9, 0.6, 0.1], &[0, 1, 1, 0], &[0, 1, 0, 0]).unwrap();
        assert_eq!(r.confusion, Confusion { tp: 1, fp: 1, tn: 2, fn_: 0 });
        assert_eq!(r.n_patients, 4);
        assert_eq!(r.to_csv_row().split(',').count(), REPORT_CSV_HEADER.split(',').count());
        assert!(r.to_text().contains("auc=1.000000"));
    }
}
