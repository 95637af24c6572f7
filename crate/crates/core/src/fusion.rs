//! Reciprocal rank fusion.
//!
//! A document's fused score is Σ 1/(k + rank) over the lists that contain it,
//! with 1-based ranks. Lists that do not contain the document contribute 0.

use alloc::collections::btree_map::Entry;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_RRF_K: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedHit {
    pub id: String,
    pub score: f64,
    /// List label to the document's 1-based rank in that list.
    pub ranks: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error("rrf constant must be positive and finite, got {0}")]
    BadConstant(f64),
    #[error("list `{label}` contains `{id}` more than once")]
    DuplicateId { label: String, id: String },
}

/// Fuses labeled ranked lists. Output is ordered by descending score, ties by id.
pub fn rrf_fuse<L, I>(lists: &[(L, Vec<I>)], k: f64) -> Result<Vec<FusedHit>, FusionError>
where
    L: AsRef<str>,
    I: AsRef<str>,
{
    if !(k > 0.0 && k.is_finite()) {
        return Err(FusionError::BadConstant(k));
    }
    let mut acc: BTreeMap<&str, FusedHit> = BTreeMap::new();
    for (label, ids) in lists {
        let label = label.as_ref();
        let mut seen = BTreeSet::new();
        for (pos, id) in ids.iter().enumerate() {
            let id = id.as_ref();
            if !seen.insert(id) {
                return Err(FusionError::DuplicateId {
                    label: label.into(),
                    id: id.into(),
                });
            }
            let rank = pos + 1;
            let hit = match acc.entry(id) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => e.insert(FusedHit {
                    id: id.into(),
                    score: 0.0,
                    ranks: BTreeMap::new(),
                }),
            };
            hit.score += 1.0 / (k + rank as f64);
            hit.ranks.insert(label.into(), rank);
        }
    }
    let mut hits: Vec<FusedHit> = acc.into_values().collect();
    sort_by_score_then_id(&mut hits, |h| (h.score, h.id.as_str()));
    Ok(hits)
}

/// Descending score, ascending id on ties.
pub fn sort_by_score_then_id<T>(items: &mut [T], key: impl Fn(&T) -> (f64, &str)) {
    items.sort_by(|a, b| {
        let (sa, ia) = key(a);
        let (sb, ib) = key(b);
        sb.total_cmp(&sa).then_with(|| ia.cmp(ib))
    });
}
