//! Detection quality and speed: F1, ROC-AUC, detection latency, throughput.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
}

impl Counts {
    pub fn from_predictions(preds: &[u8], labels: &[u8]) -> Result<Self> {
        check_dim("predictions vs labels", labels.len(), preds.len())?;
        let mut c = Counts::default();
        for (&p, &y) in preds.iter().zip(labels) {
            match (p != 0, y != 0) {
                (true, true) => c.true_positives += 1,
                (true, false) => c.false_positives += 1,
                (false, false) => c.true_negatives += 1,
                (false, true) => c.false_negatives += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.true_positives + self.false_positives + self.true_negatives + self.false_negatives
    }

    pub fn f1(&self) -> f64 {
        f1_from_counts(
            self.true_positives,
            self.false_positives,
            self.false_negatives,
        )
    }
}

/// `2PR / (P + R)`, or 0 when precision and recall are both 0 or undefined.
pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn f1_score(preds: &[u8], labels: &[u8]) -> Result<f64> {
    Ok(Counts::from_predictions(preds, labels)?.f1())
}

/// Mann-Whitney ROC-AUC with ties counted one half.
///
/// Sort once, give every tie group its mid-rank, and read the U statistic
/// off the positive rank sum. Rank sums are kept doubled so they stay
/// integral and the only rounding is the final division.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_dim("roc_auc labels", scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("roc_auc scores"));
    }
    let positives = labels.iter().filter(|&&y| y != 0).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass {
            positives,
            negatives,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // 2 * sum of positive ranks (ranks 1-based).
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1, doubled mid-rank = i + j + 2
        let twice_mid = (i + j + 2) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] != 0).count() as u128;
        twice_rank_sum += twice_mid * pos_in_group;
        i = j + 1;
    }
    let p = positives as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * negatives as u128) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    /// Mean over detected events; `None` when nothing was detected.
    pub mean: Option<f64>,
    /// One entry per event; `None` marks a miss.
    pub per_event: Vec<Option<usize>>,
    pub detected: usize,
    pub missed: usize,
}

/// Delay from each anomaly event's onset to the first alarm within
/// `horizon` steps of it. Events are maximal runs of positive labels.
pub fn detection_latency(preds: &[u8], labels: &[u8], horizon: usize) -> Result<LatencyReport> {
    check_dim("detection_latency labels", labels.len(), preds.len())?;
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be >= 1".into()));
    }
    let mut per_event = Vec::new();
    let mut t = 0;
    while t < labels.len() {
        if labels[t] != 0 && (t == 0 || labels[t - 1] == 0) {
            let end = (t + horizon).min(preds.len());
            per_event.push((t..end).find(|&k| preds[k] != 0).map(|k| k - t));
        }
        t += 1;
    }
    let hits: Vec<usize> = per_event.iter().flatten().copied().collect();
    let detected = hits.len();
    let mean = (detected > 0).then(|| hits.iter().sum::<usize>() as f64 / detected as f64);
    Ok(LatencyReport {
        mean,
        missed: per_event.len() - detected,
        per_event,
        detected,
    })
}

/// Latency over many sequences: events never span sequence boundaries.
pub fn pooled_latency<'a>(
    runs: impl IntoIterator<Item = (&'a [u8], &'a [u8])>,
    horizon: usize,
) -> Result<LatencyReport> {
    let mut per_event = Vec::new();
    for (preds, labels) in runs {
        per_event.extend(detection_latency(preds, labels, horizon)?.per_event);
    }
    let hits: Vec<usize> = per_event.iter().flatten().copied().collect();
    let detected = hits.len();
    Ok(LatencyReport {
        mean: (detected > 0).then(|| hits.iter().sum::<usize>() as f64 / detected as f64),
        missed: per_event.len() - detected,
        per_event,
        detected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub samples_per_second: f64,
    pub ns_per_sample: f64,
    pub samples: usize,
}

pub const MIN_THROUGHPUT_SAMPLES: usize = 10_000;

/// Times `n` consecutive single-sample calls of `run(i)` after `n / 10`
/// warm-up calls.
pub fn measure_throughput(mut run: impl FnMut(usize), n: usize) -> Result<Throughput> {
    if n < MIN_THROUGHPUT_SAMPLES {
        return Err(Error::TimerResolution(format!(
            "need at least {MIN_THROUGHPUT_SAMPLES} samples, got {n}"
        )));
    }
    let warmup = n / 10;
    for i in 0..warmup {
        run(i);
    }
    let start = Instant::now();
    for i in warmup..warmup + n {
        run(i);
    }
    let elapsed = start.elapsed().as_secs_f64();
    if elapsed <= 0.0 {
        return Err(Error::TimerResolution(format!(
            "{n} samples took no measurable time"
        )));
    }
    Ok(Throughput {
        samples_per_second: n as f64 / elapsed,
        ns_per_sample: elapsed * 1e9 / n as f64,
        samples: n,
    })
}

/// Everything `eval` reports for one detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub f1: f64,
    pub roc_auc: f64,
    pub mean_latency: Option<f64>,
    pub detected_events: usize,
    pub missed_events: usize,
    pub threshold: f64,
    pub throughput: Option<Throughput>,
    pub counts: Counts,
}

impl EvalResult {
    /// Scores the pooled test set against a threshold fixed beforehand.
    pub fn compute(
        per_sequence_scores: &[Vec<f64>],
        per_sequence_labels: &[&[u8]],
        threshold: f64,
        horizon: usize,
    ) -> Result<Self> {
        check_dim(
            "eval sequences",
            per_sequence_labels.len(),
            per_sequence_scores.len(),
        )?;
        let preds: Vec<Vec<u8>> = per_sequence_scores
            .iter()
            .map(|s| s.iter().map(|&v| u8::from(v > threshold)).collect())
            .collect();
        let flat_scores: Vec<f64> = per_sequence_scores.iter().flatten().copied().collect();
        let flat_labels: Vec<u8> = per_sequence_labels
            .iter()
            .flat_map(|l| l.iter().copied())
            .collect();
        let flat_preds: Vec<u8> = preds.iter().flatten().copied().collect();
        let counts = Counts::from_predictions(&flat_preds, &flat_labels)?;
        let latency = pooled_latency(
            preds
                .iter()
                .map(Vec::as_slice)
                .zip(per_sequence_labels.iter().copied()),
            horizon,
        )?;
        Ok(EvalResult {
            f1: counts.f1(),
            roc_auc: roc_auc(&flat_scores, &flat_labels)?,
            mean_latency: latency.mean,
            detected_events: latency.detected,
            missed_events: latency.missed,
            threshold,
            throughput: None,
            counts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            if labels[i] == 0 {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] != 0 {
                    continue;
                }
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_score(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(f1_score(&[0, 0, 0], &[1, 0, 1]).unwrap(), 0.0);
        assert_eq!(f1_score(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap(), 0.5);
        assert_eq!(f1_score(&[0, 0], &[0, 0]).unwrap(), 0.0);
        assert!(f1_score(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn counts_are_consistent() {
        let c = Counts::from_predictions(&[1, 1, 0, 0, 1], &[1, 0, 1, 0, 1]).unwrap();
        assert_eq!(c.total(), 5);
        let p = 2.0 / 3.0;
        let r = 2.0 / 3.0;
        assert!((c.f1() - 2.0 * p * r / (p + r)).abs() <= 1e-12);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.9, 0.1], &[0, 1]).unwrap(), 0.0);
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[1, 1]),
            Err(Error::SingleClass { .. })
        ));
    }

    #[test]
    fn auc_matches_pairwise_and_complements() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let n = rng.random_range(2..=30);
            let scores: Vec<f64> = (0..n)
                .map(|_| f64::from(rng.random_range(0..6u8)))
                .collect();
            let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
            labels[0] = 1;
            labels[1] = 0;
            let a = roc_auc(&scores, &labels).unwrap();
            assert!((a - pairwise_auc(&scores, &labels)).abs() <= 1e-12);
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            assert_eq!(a + roc_auc(&neg, &labels).unwrap(), 1.0);
        }
    }

    #[test]
    fn latency_examples() {
        let labels = [0, 1, 0, 0, 1, 1, 0, 0];
        let r = detection_latency(&labels, &labels, 25).unwrap();
        assert_eq!(r.mean, Some(0.0));

        let mut labels = vec![0u8; 40];
        labels[10] = 1;
        let mut preds = vec![0u8; 40];
        preds[14] = 1;
        let r = detection_latency(&preds, &labels, 20).unwrap();
        assert_eq!(r.per_event, vec![Some(4)]);
        assert_eq!(r.mean, Some(4.0));

        let r = detection_latency(&[0; 40], &labels, 20).unwrap();
        assert_eq!(r.mean, None);
        assert_eq!((r.detected, r.missed), (0, 1));
    }

    #[test]
    fn latency_respects_horizon() {
        let mut labels = vec![0u8; 30];
        labels[5] = 1;
        let mut preds = vec![0u8; 30];
        preds[9] = 1;
        assert_eq!(
            detection_latency(&preds, &labels, 4).unwrap().per_event,
            vec![None]
        );
        assert_eq!(
            detection_latency(&preds, &labels, 5).unwrap().per_event,
            vec![Some(4)]
        );
        // alarms before onset do not count
        let mut early = vec![0u8; 30];
        early[4] = 1;
        assert_eq!(detection_latency(&early, &labels, 25).unwrap().detected, 0);
    }

    #[test]
    fn throughput_smoke() {
        let mut acc = 0u64;
        let t = measure_throughput(|i| acc = acc.wrapping_add(i as u64), 20_000).unwrap();
        assert!(t.samples_per_second.is_finite() && t.samples_per_second > 0.0);
        assert!(measure_throughput(|_| {}, 100).is_err());
        std::hint::black_box(acc);
    }
}
