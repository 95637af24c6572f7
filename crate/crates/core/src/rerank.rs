//! Incident re-ranking: P(d) = α·IS + β·TS + γ·SS, plus the margin-based
//! document filter used after fusion.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for RerankWeights {
    fn default() -> Self {
        RerankWeights {
            alpha: 1.0 / 3.0,
            beta: 1.0 / 3.0,
            gamma: 1.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RerankError {
    #[error("weights must be non-negative with a positive sum: {0:?}")]
    BadWeights(RerankWeights),
    #[error("age must be non-negative, got {0}")]
    NegativeAge(f64),
    #[error("decay constant must be positive, got {0}")]
    BadTau(f64),
}

impl RerankWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, RerankError> {
        let w = RerankWeights { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), RerankError> {
        let parts = [self.alpha, self.beta, self.gamma];
        let ok = parts.iter().all(|w| w.is_finite() && *w >= 0.0) && parts.iter().sum::<f64>() > 0.0;
        if ok {
            Ok(())
        } else {
            Err(RerankError::BadWeights(*self))
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        RerankWeights {
            alpha: self.alpha * c,
            beta: self.beta * c,
            gamma: self.gamma * c,
        }
    }
}

/// Information, time and source scores of one incident.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RerankComponents {
    pub info: f64,
    pub time: f64,
    pub source: f64,
}

pub fn rerank_score(c: &RerankComponents, w: &RerankWeights) -> f64 {
    w.alpha * c.info + w.beta * c.time + w.gamma * c.source
}

/// exp(−age/τ): 1 at age 0, strictly decreasing.
pub fn time_score(age_days: f64, tau_days: f64) -> Result<f64, RerankError> {
    if !(age_days >= 0.0) {
        return Err(RerankError::NegativeAge(age_days));
    }
    if !(tau_days > 0.0) {
        return Err(RerankError::BadTau(tau_days));
    }
    Ok(libm::exp(-age_days / tau_days))
}

/// Min-max scales values into [0, 1]. A constant column maps to all ones.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return values.iter().map(|_| 1.0).collect();
    }
    values.iter().map(|&v| (v - lo) / (hi - lo)).collect()
}

/// Length of the prefix to keep.
///
/// Finds the smallest m ≥ 1 with `scores[m-1] − scores[m] > delta·scores[0]`
/// and keeps the first m items; without such a gap everything is kept.
/// `scores` must be descending.
pub fn margin_cut(scores: &[f64], delta: f64) -> usize {
    if scores.is_empty() {
        return 0;
    }
    let threshold = delta * scores[0];
    scores
        .windows(2)
        .position(|w| w[0] - w[1] > threshold)
        .map_or(scores.len(), |i| i + 1)
}

/// Keeps the leading items that stand out by a margin; see [`margin_cut`].
pub fn filter_by_margin<T>(mut items: Vec<T>, delta: f64, score: impl Fn(&T) -> f64) -> Vec<T> {
    let scores: Vec<f64> = items.iter().map(&score).collect();
    items.truncate(margin_cut(&scores, delta));
    items
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn projection_and_worked_sum() {
        let c = RerankComponents { info: 0.7, time: 0.2, source: 1.0 };
        assert_eq!(rerank_score(&c, &RerankWeights::new(1.0, 0.0, 0.0).unwrap()), 0.7);
        // 0.3·0.8 + 0.5·0.5 + 0.2·1 = 0.24 + 0.25 + 0.20
        let c = RerankComponents { info: 0.8, time: 0.5, source: 1.0 };
        let w = RerankWeights::new(0.3, 0.5, 0.2).unwrap();
        assert!((rerank_score(&c, &w) - 0.69).abs() < 1e-12);
    }

    #[test]
    fn weights_validation() {
        assert!(RerankWeights::new(0.0, 0.0, 0.0).is_err());
        assert!(RerankWeights::new(-1.0, 1.0, 1.0).is_err());
        assert!(RerankWeights::new(0.0, 0.0, 2.0).is_ok());
    }

    #[test]
    fn time_score_values() {
        assert_eq!(time_score(0.0, 180.0).unwrap(), 1.0);
        assert!((time_score(180.0, 180.0).unwrap() - 0.367_879_441_171_442_3).abs() < 1e-12);
        assert!(time_score(1.0, 180.0).unwrap() > time_score(2.0, 180.0).unwrap());
        assert!(time_score(-1.0, 180.0).is_err());
        assert!(time_score(1.0, 0.0).is_err());
    }

    #[test]
    fn normalization() {
        assert_eq!(min_max_normalize(&[2.0, 4.0, 3.0]), vec![0.0, 1.0, 0.5]);
        assert_eq!(min_max_normalize(&[5.0, 5.0]), vec![1.0, 1.0]);
        assert!(min_max_normalize(&[]).is_empty());
    }

    #[test]
    fn margin_examples() {
        // gaps 0.5 and 0.1 against threshold 2
        assert_eq!(margin_cut(&[10.0, 9.5, 9.4], 0.2), 3);
        // first gap 6 > 2
        assert_eq!(margin_cut(&[10.0, 4.0, 3.9], 0.2), 1);
        assert_eq!(margin_cut(&[3.0], 0.2), 1);
        assert_eq!(margin_cut(&[], 0.2), 0);
        let kept = filter_by_margin(vec![("a", 10.0), ("b", 4.0), ("c", 3.9)], 0.2, |x| x.1);
        assert_eq!(kept, vec![("a", 10.0)]);
    }

    #[test]
    fn delta_one_disables_filtering() {
        assert_eq!(margin_cut(&[10.0, 0.0, 0.0], 1.0), 3);
    }

    fn descending(v: Vec<f64>) -> Vec<f64> {
        let mut v = v;
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    proptest! {
        #[test]
        fn margin_is_nonempty_prefix_and_monotone(
            raw in proptest::collection::vec(0.0f64..100.0, 1..20),
            d1 in 0.0f64..1.0,
            d2 in 0.0f64..1.0,
        ) {
            let scores = descending(raw);
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let a = margin_cut(&scores, lo);
            let b = margin_cut(&scores, hi);
            prop_assert!(a >= 1 && a <= scores.len());
            prop_assert!(b >= a);
        }

        #[test]
        fn positive_rescaling_keeps_order(
            comps in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0u8..2), 2..30),
            w in (0.0f64..1.0, 0.0f64..1.0, 0.01f64..1.0),
            c in 0.01f64..100.0,
        ) {
            let w = RerankWeights::new(w.0, w.1, w.2).unwrap();
            let ws = w.scaled(c);
            let comps: Vec<RerankComponents> = comps
                .into_iter()
                .map(|(i, t, s)| RerankComponents { info: i, time: t, source: s as f64 })
                .collect();
            for x in &comps {
                let p = rerank_score(x, &w);
                prop_assert!((rerank_score(x, &ws) - c * p).abs() <= 1e-9 * (1.0 + c * p.abs()));
            }
        }
    }
}
