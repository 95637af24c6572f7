//! Fixed-size token windows and the incident helpfulness score.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::whitespace_token_count;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkingSpec {
    pub max_tokens: usize,
    pub overlap_tokens: usize,
    /// Neighbours on each side handed to code rechunking.
    pub neighbor_window: usize,
}

impl Default for ChunkingSpec {
    fn default() -> Self {
        ChunkingSpec {
            max_tokens: 1000,
            overlap_tokens: 200,
            neighbor_window: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChunkingError {
    #[error("max_tokens must be positive")]
    ZeroMax,
    #[error("overlap ({overlap}) must be smaller than max_tokens ({max})")]
    OverlapTooLarge { overlap: usize, max: usize },
}

impl ChunkingSpec {
    pub fn validate(&self) -> Result<(), ChunkingError> {
        if self.max_tokens == 0 {
            return Err(ChunkingError::ZeroMax);
        }
        if self.overlap_tokens >= self.max_tokens {
            return Err(ChunkingError::OverlapTooLarge {
                overlap: self.overlap_tokens,
                max: self.max_tokens,
            });
        }
        Ok(())
    }
}

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenWindow {
    pub ordinal: usize,
    pub start: usize,
    pub end: usize,
}

/// Windows of `max_tokens` advancing by `max_tokens − overlap_tokens`; the
/// last one is truncated at `n_tokens`.
pub fn fixed_windows(n_tokens: usize, spec: &ChunkingSpec) -> Result<Vec<TokenWindow>, ChunkingError> {
    spec.validate()?;
    let stride = spec.max_tokens - spec.overlap_tokens;
    let mut out = Vec::new();
    let mut start = 0;
    while start < n_tokens {
        let end = (start + spec.max_tokens).min(n_tokens);
        out.push(TokenWindow {
            ordinal: out.len(),
            start,
            end,
        });
        if end == n_tokens {
            break;
        }
        start += stride;
    }
    Ok(out)
}

pub const DEFAULT_HELPFULNESS_REF_TOKENS: usize = 400;

/// min(1, tokens(summary + mitigation) / reference_tokens).
pub fn helpfulness(summary: &str, mitigation: &str, reference_tokens: usize) -> f64 {
    if reference_tokens == 0 {
        return 1.0;
    }
    let tokens = whitespace_token_count(summary) + whitespace_token_count(mitigation);
    (tokens as f64 / reference_tokens as f64).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::String;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn short_document_is_one_window() {
        let w = fixed_windows(500, &ChunkingSpec::default()).unwrap();
        assert_eq!(w, vec![TokenWindow { ordinal: 0, start: 0, end: 500 }]);
    }

    #[test]
    fn stride_arithmetic() {
        // stride 1000 − 200 = 800
        let w = fixed_windows(2500, &ChunkingSpec::default()).unwrap();
        let starts: Vec<usize> = w.iter().map(|w| w.start).collect();
        assert_eq!(starts, vec![0, 800, 1600]);
        assert_eq!(w[2].end, 2500);
    }

    #[test]
    fn empty_and_invalid() {
        assert!(fixed_windows(0, &ChunkingSpec::default()).unwrap().is_empty());
        let bad = ChunkingSpec { max_tokens: 10, overlap_tokens: 10, neighbor_window: 0 };
        assert!(fixed_windows(5, &bad).is_err());
    }

    #[test]
    fn helpfulness_values() {
        assert_eq!(helpfulness("", "", 400), 0.0);
        let words = |n: usize| vec!["w"; n].join(" ");
        assert_eq!(helpfulness(&words(100), &words(100), 400), 0.5);
        assert_eq!(helpfulness(&words(500), "", 400), 1.0);
    }

    proptest! {
        #[test]
        fn windows_reconstruct_token_stream(n in 0usize..3000, max in 1usize..400, ov in 0usize..399) {
            prop_assume!(ov < max);
            let spec = ChunkingSpec { max_tokens: max, overlap_tokens: ov, neighbor_window: 5 };
            let ws = fixed_windows(n, &spec).unwrap();
            let mut rebuilt = Vec::new();
            for (i, w) in ws.iter().enumerate() {
                prop_assert!(w.end - w.start <= max);
                let skip = if i == 0 { 0 } else { ws[i - 1].end.saturating_sub(w.start) };
                rebuilt.extend(w.start + skip..w.end);
            }
            prop_assert_eq!(rebuilt, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn helpfulness_monotone(a in 0usize..600, b in 0usize..600) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let words = |n: usize| vec!["x"; n].join(" ");
            let empty = String::new();
            prop_assert!(helpfulness(&words(lo), &empty, 400) <= helpfulness(&words(hi), &empty, 400));
        }
    }
}
