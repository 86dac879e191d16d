use crate::error::{Error, Result};
use crate::tensor::kernels::sigmoid;

/// Discrete follow-up bins cut at quantiles of observed event times.
#[derive(Clone, Debug, PartialEq)]
pub struct SurvivalBins {
    /// Interior cut points, strictly increasing; `bins − 1` of them.
    pub edges: Vec<f64>,
}

impl SurvivalBins {
    /// Cuts at the `j/bins` quantiles (linear interpolation) of `event_times`.
    pub fn from_event_times(event_times: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::config("survival head needs at least one bin"));
        }
        let mut t: Vec<f64> = event_times.to_vec();
        if t.is_empty() && bins > 1 {
            return Err(Error::config("no observed events to place survival bins"));
        }
        t.sort_by(f64::total_cmp);
        let edges: Vec<f64> = (1..bins)
            .map(|j| {
                let pos = j as f64 / bins as f64 * (t.len() - 1) as f64;
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(t.len() - 1);
                t[lo] + (pos - lo as f64) * (t[hi] - t[lo])
            })
            .collect();
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!(
                "survival bin edges {edges:?} are not strictly increasing"
            )));
        }
        Ok(SurvivalBins { edges })
    }

    pub fn bins(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn bin(&self, time: f64) -> usize {
        self.edges.partition_point(|&e| e <= time)
    }
}

/// Survival curve `S_j = Π_{k≤j} (1 − sigmoid(logit_k))`.
pub fn survival_curve(logits: &[f64]) -> Vec<f64> {
    let mut s = 1.0;
    logits
        .iter()
        .map(|&x| {
            s *= 1.0 - sigmoid(x);
            s
        })
        .collect()
}

/// Ranking score: higher means earlier expected death.
pub fn risk_score(logits: &[f64]) -> f64 {
    -survival_curve(logits).iter().sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartile_bins() {
        let b = SurvivalBins::from_event_times(&[4.0, 1.0, 3.0, 2.0, 5.0], 4).unwrap();
        assert_eq!(b.edges, vec![2.0, 3.0, 4.0]);
        assert_eq!(b.bin(0.5), 0);
        assert_eq!(b.bin(2.0), 1);
        assert_eq!(b.bin(9.0), 3);
        assert!(SurvivalBins::from_event_times(&[1.0, 1.0, 1.0], 4).is_err());
    }

    #[test]
    fn higher_hazard_means_higher_risk() {
        assert!(risk_score(&[2.0, 2.0]) > risk_score(&[-2.0, -2.0]));
        assert_eq!(survival_curve(&[0.0]), vec![0.5]);
    }
}
