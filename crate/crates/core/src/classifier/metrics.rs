use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Patient-positive confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    /// An item is called patient when its score is strictly above `threshold`.
    pub fn at_threshold(scores: &[f64], positives: &[bool], threshold: f64) -> Self {
        let mut c = Self::default();
        for (&s, &pos) in scores.iter().zip(positives) {
            match (s > threshold, pos) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// `num / den`, or 0 when nothing was counted.
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Items scoring at or above this value are called positive; the first
    /// point uses +inf and is serialized as null.
    pub threshold: Option<f64>,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points from (0, 0) to (1, 1), one per distinct score. Tied scores
/// move together, so the curve steps diagonally through them.
pub fn roc_curve(scores: &[f64], positives: &[bool]) -> Result<Vec<RocPoint>> {
    check_scores(scores, positives)?;
    let p = positives.iter().filter(|&&b| b).count();
    let n = positives.len() - p;
    if p == 0 || n == 0 {
        return invalid("ROC needs both positive and negative items");
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { threshold: None, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positives[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: Some(s),
            fpr: fp as f64 / n as f64,
            tpr: tp as f64 / p as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a ROC curve.
pub fn auc_trapezoid(roc: &[RocPoint]) -> f64 {
    roc.windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

fn check_scores(scores: &[f64], positives: &[bool]) -> Result<()> {
    if scores.is_empty() {
        return invalid("no scores to evaluate");
    }
    if scores.len() != positives.len() {
        return invalid(format!("{} scores but {} labels", scores.len(), positives.len()));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return invalid(format!("non-finite score {s}"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub threshold: f64,
    pub confusion: Confusion,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub roc: Vec<RocPoint>,
    pub auc: f64,
}

impl Metrics {
    pub fn from_scores(scores: &[f64], positives: &[bool], threshold: f64) -> Result<Self> {
        check_scores(scores, positives)?;
        let roc = roc_curve(scores, positives)?;
        let confusion = Confusion::at_threshold(scores, positives, threshold);
        Ok(Self {
            threshold,
            confusion,
            accuracy: confusion.accuracy(),
            precision: confusion.precision(),
            recall: confusion.recall(),
            f1: confusion.f1(),
            auc: auc_trapezoid(&roc),
            roc,
        })
    }

    /// Confusion and ROC as CSV tables.
    pub fn to_csv(&self) -> (String, String) {
        let c = &self.confusion;
        let summary = format!(
            "threshold,tp,fp,tn,fn,accuracy,precision,recall,f1,auc\n{},{},{},{},{},{},{},{},{},{}\n",
            self.threshold, c.tp, c.fp, c.tn, c.fn_, self.accuracy, self.precision, self.recall, self.f1, self.auc
        );
        let mut roc = String::from("threshold,fpr,tpr\n");
        for p in &self.roc {
            let t = p.threshold.map_or("inf".to_string(), |t| t.to_string());
            roc.push_str(&format!("{t},{},{}\n", p.fpr, p.tpr));
        }
        (summary, roc)
    }
}

/// Score in [0, 1] where higher means healthier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HealthIndex {
    pub value: f64,
}

pub fn health_index(p_patient: f64) -> Result<HealthIndex> {
    if !(0.0..=1.0).contains(&p_patient) {
        return invalid(format!("probability must be in [0, 1], got {p_patient}"));
    }
    Ok(HealthIndex { value: 1.0 - p_patient })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_ratios() {
        let c = Confusion { tp: 6, fp: 2, tn: 10, fn_: 2 };
        assert_eq!(c.accuracy(), 0.8);
        assert_eq!(c.precision(), 0.75);
        assert_eq!(c.recall(), 0.75);
        assert_eq!(c.f1(), 0.75);
        assert_eq!(Confusion::default().precision(), 0.0);
    }

    #[test]
    fn separated_scores() {
        let m = Metrics::from_scores(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false], 0.5).unwrap();
        assert_eq!(m.auc, 1.0);
        assert_eq!(m.recall, 1.0);
    }

    #[test]
    fn all_ties_give_half() {
        let m = Metrics::from_scores(&[0.4; 5], &[true, false, true, false, false], 0.5).unwrap();
        assert_eq!(m.auc, 0.5);
        assert_eq!(m.roc.len(), 2);
    }

    #[test]
    fn three_item_example() {
        let m = Metrics::from_scores(&[0.9, 0.8, 0.3], &[true, false, true], 0.5).unwrap();
        assert_eq!(m.auc, 0.5);
    }

    #[test]
    fn rejects_empty_and_single_class() {
        assert!(Metrics::from_scores(&[], &[], 0.5).is_err());
        assert!(Metrics::from_scores(&[0.2, 0.3], &[true, true], 0.5).is_err());
    }

    #[test]
    fn health_index_values() {
        assert_eq!(health_index(1.0).unwrap().value, 0.0);
        assert_eq!(health_index(0.0).unwrap().value, 1.0);
        assert_eq!(health_index(0.5).unwrap().value, 0.5);
        assert!(health_index(1.01).is_err());
        assert!(health_index(f64::NAN).is_err());
    }
}
