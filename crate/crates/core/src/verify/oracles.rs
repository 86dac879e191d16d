use rand::Rng;

use crate::attention::DilationSchedule;

/// AUC by enumerating every positive/negative pair.
pub fn auc_by_pairs(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1;
                twice += if scores[i] > scores[j] {
                    2
                } else if scores[i] == scores[j] {
                    1
                } else {
                    0
                };
            }
        }
    }
    (pairs > 0).then(|| twice as f64 / (2 * pairs) as f64)
}

/// Concordance by enumerating ordered pairs, independent of the metric code.
pub fn c_index_by_pairs(risks: &[f64], times: &[f64], events: &[bool]) -> Option<f64> {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for i in 0..risks.len() {
        for j in 0..risks.len() {
            if i != j && events[i] && times[i] < times[j] {
                pairs += 1;
                twice += if risks[i] > risks[j] {
                    2
                } else if risks[i] == risks[j] {
                    1
                } else {
                    0
                };
            }
        }
    }
    (pairs > 0).then(|| twice as f64 / (2 * pairs) as f64)
}

/// A valid schedule for `n` tokens: a dense first pair, then segments and
/// ratios that each at least double, ratios dividing segments.
pub fn random_schedule<R: Rng>(n: usize, rng: &mut R) -> DilationSchedule {
    let mut w = 1usize << rng.gen_range(1..=3);
    while w > n {
        w /= 2;
    }
    let mut pairs = vec![(w.max(1), 1usize)];
    let extra = rng.gen_range(0..=3);
    let mut r = 1;
    for _ in 0..extra {
        let nw = w * (1 << rng.gen_range(1..=2));
        let nr = r * (1 << rng.gen_range(1..=2));
        if nw > n.next_power_of_two() || nr > nw {
            break;
        }
        w = nw;
        r = nr;
        pairs.push((w, r));
    }
    DilationSchedule::new(pairs).expect("constructed schedules are valid")
}
