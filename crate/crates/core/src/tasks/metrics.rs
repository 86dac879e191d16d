use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};

fn check_finite(scores: &[f64]) -> Result<()> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite score".into()));
    }
    Ok(())
}

/// Area under the ROC curve as the Mann–Whitney statistic, ties counted as
/// one half. Sorts once, so `O(n log n)`.
pub fn auc_binary(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    check_finite(scores)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs both classes present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Count, for every positive, negatives strictly below plus half the tied ones.
    let mut twice_wins: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group = &order[i..j];
        let gp = group.iter().filter(|&&k| labels[k]).count() as u64;
        let gn = group.len() as u64 - gp;
        twice_wins += gp * (2 * neg_below + gn);
        neg_below += gn;
        i = j;
    }
    Ok(twice_wins as f64 / (2 * pos as u64 * neg as u64) as f64)
}

/// Mean one-vs-rest AUC over `classes` columns of a row-major `n × classes`
/// score matrix.
pub fn auc_macro(scores: &[f64], classes: usize, labels: &[usize]) -> Result<f64> {
    if classes < 2 || scores.len() != labels.len() * classes {
        return Err(Error::dim(format!(
            "{} scores for {} labels and {classes} classes",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::contract(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let mut total = 0.0;
    for c in 0..classes {
        if !labels.contains(&c) {
            return Err(Error::UndefinedMetric(format!("class {c} absent")));
        }
        let col: Vec<f64> = scores.iter().skip(c).step_by(classes).copied().collect();
        let bin: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        total += auc_binary(&col, &bin)?;
    }
    Ok(total / classes as f64)
}

/// Harrell's concordance index. A pair is comparable when the earlier time
/// is an observed event; it is concordant when that record has the higher
/// risk, and tied risks count one half.
pub fn c_index(risks: &[f64], times: &[f64], events: &[bool]) -> Result<f64> {
    let n = risks.len();
    if times.len() != n || events.len() != n {
        return Err(Error::dim("risks, times and events differ in length"));
    }
    check_finite(risks)?;
    let mut twice_concordant: u64 = 0;
    let mut comparable: u64 = 0;
    for i in 0..n {
        if !events[i] {
            continue;
        }
        for j in 0..n {
            if times[i] < times[j] {
                comparable += 1;
                twice_concordant += match risks[i].partial_cmp(&risks[j]) {
                    Some(Ordering::Greater) => 2,
                    Some(Ordering::Equal) => 1,
                    _ => 0,
                };
            }
        }
    }
    if comparable == 0 {
        return Err(Error::UndefinedMetric("no comparable pairs".into()));
    }
    Ok(twice_concordant as f64 / (2 * comparable) as f64)
}

/// Mean and population standard deviation of per-fold values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Summary {
            mean,
            std: var.sqrt(),
        })
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(
            auc_binary(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(),
            1.0
        );
        assert_eq!(
            auc_binary(&[0.5; 4], &[false, true, false, true]).unwrap(),
            0.5
        );
        assert_eq!(
            auc_binary(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(),
            0.75
        );
        assert!(matches!(
            auc_binary(&[1.0, 2.0], &[true, true]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn macro_two_classes_is_binary_auc() {
        let p1 = [0.2, 0.7, 0.4, 0.9, 0.1];
        let labels = [0, 1, 1, 1, 0];
        let scores: Vec<f64> = p1.iter().flat_map(|&p| [1.0 - p, p]).collect();
        let bin: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        assert_eq!(
            auc_macro(&scores, 2, &labels).unwrap(),
            auc_binary(&p1, &bin).unwrap()
        );
        assert!(matches!(
            auc_macro(&[0.3; 15], 3, &labels),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn c_index_examples() {
        let times = [1.0, 2.0, 3.0, 4.0];
        let events = [true; 4];
        assert_eq!(
            c_index(&[4.0, 3.0, 2.0, 1.0], &times, &events).unwrap(),
            1.0
        );
        assert_eq!(c_index(&[1.0; 4], &times, &events).unwrap(), 0.5);
        assert!(matches!(
            c_index(&[1.0, 2.0], &[1.0, 2.0], &[false, false]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn summary_format() {
        let s = Summary::of(&[0.9, 1.0]).unwrap();
        assert_eq!(s.to_string(), "0.950 ± 0.050");
    }
}
