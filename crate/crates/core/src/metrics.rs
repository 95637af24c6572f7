//! Set-based evaluation metrics and the online answer categorizer.

use alloc::collections::BTreeSet;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Planner outcome for one case: selected skills vs the golden skill set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerMetrics {
    pub precision: f64,
    pub recall: f64,
    /// Every golden skill was selected.
    pub coverage: bool,
}

impl PlannerMetrics {
    pub fn compute<T: Ord>(selected: &BTreeSet<T>, golden: &BTreeSet<T>) -> Self {
        let hit = selected.intersection(golden).count() as f64;
        let precision = if selected.is_empty() {
            if golden.is_empty() {
                1.0
            } else {
                0.0
            }
        } else {
            hit / selected.len() as f64
        };
        let recall = if golden.is_empty() {
            1.0
        } else {
            hit / golden.len() as f64
        };
        PlannerMetrics {
            precision,
            recall,
            coverage: golden.is_subset(selected),
        }
    }
}

/// Documentation retrieval outcome for one case.
///
/// `precision` and `recall` compare the golden set G with the referenced set
/// Q*; `coverage` compares G with the retrieved set Q. Precision is `None`
/// when Q* is empty, and both are `None` when Q* was not collected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsgMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("golden set is empty")]
pub struct EmptyGolden;

impl TsgMetrics {
    pub fn compute<T: Ord>(
        golden: &BTreeSet<T>,
        retrieved: &BTreeSet<T>,
        referenced: Option<&BTreeSet<T>>,
    ) -> Result<Self, EmptyGolden> {
        if golden.is_empty() {
            return Err(EmptyGolden);
        }
        let g = golden.len() as f64;
        let (precision, recall) = match referenced {
            None => (None, None),
            Some(q) => {
                let hit = golden.intersection(q).count() as f64;
                let precision = (!q.is_empty()).then(|| hit / q.len() as f64);
                (precision, Some(hit / g))
            }
        };
        Ok(TsgMetrics {
            precision,
            recall,
            coverage: golden.intersection(retrieved).count() as f64 / g,
        })
    }
}

/// Online judge scores for one answered message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnlineScores {
    /// 1..=3
    pub answer_relevance: u8,
    /// 1..=3
    pub doc_relevance: u8,
    /// 0 or 1
    pub groundedness: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("online scores out of range: {0:?}")]
pub struct ScoreRangeError(pub OnlineScores);

impl OnlineScores {
    pub fn new(answer_relevance: u8, doc_relevance: u8, groundedness: u8) -> Result<Self, ScoreRangeError> {
        let s = OnlineScores {
            answer_relevance,
            doc_relevance,
            groundedness,
        };
        let ok = (1..=3).contains(&answer_relevance)
            && (1..=3).contains(&doc_relevance)
            && groundedness <= 1;
        if ok {
            Ok(s)
        } else {
            Err(ScoreRangeError(s))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OnlineCategory {
    #[serde(rename = "Relevant-Grounded")]
    RelevantGrounded,
    #[serde(rename = "Relevant-General")]
    RelevantGeneral,
    #[serde(rename = "Partially Relevant-Grounded")]
    PartiallyRelevantGrounded,
    #[serde(rename = "Document Issue")]
    DocumentIssue,
    #[serde(rename = "Grounding Issue")]
    GroundingIssue,
}

impl OnlineCategory {
    pub const ALL: [OnlineCategory; 5] = [
        OnlineCategory::RelevantGrounded,
        OnlineCategory::RelevantGeneral,
        OnlineCategory::PartiallyRelevantGrounded,
        OnlineCategory::DocumentIssue,
        OnlineCategory::GroundingIssue,
    ];

    pub fn label(self) -> &'static str {
        match self {
            OnlineCategory::RelevantGrounded => "Relevant-Grounded",
            OnlineCategory::RelevantGeneral => "Relevant-General",
            OnlineCategory::PartiallyRelevantGrounded => "Partially Relevant-Grounded",
            OnlineCategory::DocumentIssue => "Document Issue",
            OnlineCategory::GroundingIssue => "Grounding Issue",
        }
    }
}

impl fmt::Display for OnlineCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Maps judge scores to an answer category. Rules apply in order.
pub fn categorize_online(s: &OnlineScores) -> Result<OnlineCategory, ScoreRangeError> {
    let s = OnlineScores::new(s.answer_relevance, s.doc_relevance, s.groundedness)?;
    let cat = if s.doc_relevance >= 2 && s.groundedness == 0 {
        OnlineCategory::GroundingIssue
    } else if s.doc_relevance == 1 && s.answer_relevance == 3 {
        OnlineCategory::RelevantGeneral
    } else if s.doc_relevance == 1 {
        OnlineCategory::DocumentIssue
    } else if s.answer_relevance == 3 && s.groundedness == 1 {
        OnlineCategory::RelevantGrounded
    } else {
        OnlineCategory::PartiallyRelevantGrounded
    };
    Ok(cat)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[&'static str]) -> BTreeSet<&'static str> {
        items.iter().copied().collect()
    }

    #[test]
    fn planner_examples() {
        let m = PlannerMetrics::compute(&set(&["a", "b"]), &set(&["a", "b"]));
        assert_eq!(m, PlannerMetrics { precision: 1.0, recall: 1.0, coverage: true });
        let m = PlannerMetrics::compute(&set(&["a", "c"]), &set(&["a", "b"]));
        assert_eq!(m, PlannerMetrics { precision: 0.5, recall: 0.5, coverage: false });
        let m = PlannerMetrics::compute(&set(&[]), &set(&["a"]));
        assert_eq!(m.precision, 0.0);
        let m = PlannerMetrics::compute(&set(&[]), &set(&[]));
        assert_eq!(m.precision, 1.0);
    }

    #[test]
    fn tsg_examples() {
        let g = set(&["a", "b", "c"]);
        let m = TsgMetrics::compute(&g, &set(&["a"]), Some(&set(&["a", "b", "d"]))).unwrap();
        assert!((m.precision.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.recall.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.coverage - 1.0 / 3.0).abs() < 1e-15);

        let m = TsgMetrics::compute(&g, &set(&["a", "b", "c", "z"]), None).unwrap();
        assert_eq!(m.coverage, 1.0);
        assert_eq!(m.precision, None);

        let m = TsgMetrics::compute(&set(&["a"]), &set(&[]), Some(&set(&[]))).unwrap();
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, Some(0.0));

        assert_eq!(TsgMetrics::compute(&set(&[]), &set(&[]), None), Err(EmptyGolden));
    }

    #[test]
    fn categorizer_examples() {
        let c = |a, d, g| categorize_online(&OnlineScores { answer_relevance: a, doc_relevance: d, groundedness: g });
        assert_eq!(c(3, 3, 1), Ok(OnlineCategory::RelevantGrounded));
        assert_eq!(c(2, 1, 0), Ok(OnlineCategory::DocumentIssue));
        assert_eq!(c(2, 1, 1), Ok(OnlineCategory::DocumentIssue));
        assert_eq!(c(3, 3, 0), Ok(OnlineCategory::GroundingIssue));
        assert_eq!(c(3, 1, 0), Ok(OnlineCategory::RelevantGeneral));
        assert_eq!(c(2, 2, 1), Ok(OnlineCategory::PartiallyRelevantGrounded));
        assert!(c(0, 1, 0).is_err());
        assert!(c(1, 4, 0).is_err());
        assert!(c(1, 1, 2).is_err());
    }
}
