//! Dense vector helpers and the hashed bag-of-terms projection used as a
//! deterministic embedding.

use alloc::vec;
use alloc::vec::Vec;
use core::hash::Hasher;

use fnv::FnvHasher;

use crate::text::terms;

/// Cosine similarity; 0 when either side has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (libm::sqrt(na) * libm::sqrt(nb))
}

/// Scales `v` to unit length in place. Zero vectors are left untouched.
pub fn l2_normalize(v: &mut [f32]) {
    let norm = libm::sqrt(v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>());
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x = (*x as f64 / norm) as f32;
        }
    }
}

/// FNV-1a (64 bit) bucket of a term.
pub fn term_bucket(term: &str, dimension: usize) -> usize {
    let mut h = FnvHasher::default();
    h.write(term.as_bytes());
    (h.finish() % dimension as u64) as usize
}

/// Counts of each term hashed into `dimension` buckets, L2-normalized.
pub fn hashed_projection(text: &str, dimension: usize) -> Vec<f32> {
    assert!(dimension > 0, "embedding dimension must be positive");
    let mut v = vec![0.0f32; dimension];
    for t in terms(text) {
        v[term_bucket(&t, dimension)] += 1.0;
    }
    l2_normalize(&mut v);
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_basics() {
        assert!((cosine(&[1.0, 0.0], &[1.0, 0.0]) - 1.0).abs() < 1e-12);
        assert!(cosine(&[1.0, 0.0], &[0.0, 1.0]).abs() < 1e-12);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn fnv_matches_reference_vector() {
        // FNV-1a 64 of "a" is 0xaf63dc4c8601ec8c
        let mut h = FnvHasher::default();
        h.write(b"a");
        assert_eq!(h.finish(), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn projection_is_order_free_and_unit() {
        let a = hashed_projection("restart server", 256);
        let b = hashed_projection("server restart", 256);
        assert_eq!(a, b);
        let norm: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum();
        assert!((norm - 1.0).abs() < 1e-6);
        assert!(hashed_projection("!!", 8).iter().all(|&x| x == 0.0));
    }
}
