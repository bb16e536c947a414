//! Closed-form predictions for the body model and the repetition code.

use crate::biokeys::{binomial, fused_error_rate};
use crate::fuzzycommit::CodeParams;

/// Probability that two independently fused witnesses disagree on a bit:
/// `2q(1 - q)` with `q` the fused error rate.
pub fn pairwise_mismatch(p: f64, r: usize) -> f64 {
    let q = fused_error_rate(p, r);
    2.0 * q * (1.0 - q)
}

/// Probability that a slave decommits the leader's key: every block of the
/// code sees at most `e` disagreeing bits.
pub fn key_acceptance(p: f64, r: usize, code: &CodeParams) -> f64 {
    let mu = pairwise_mismatch(p, r);
    let d = code.d;
    let e = code.correction_capability();
    let block: f64 = (0..=e)
        .map(|j| binomial(d, j) * mu.powi(j as i32) * (1.0 - mu).powi((d - j) as i32))
        .sum();
    block.powi(code.k as i32)
}

/// Probability that two witnesses of length `m` differ in at most `t` bits.
pub fn similarity(p: f64, r: usize, m: usize, t: usize) -> f64 {
    let mu = pairwise_mismatch(p, r);
    (0..=t.min(m))
        .map(|j| binomial(m, j) * mu.powi(j as i32) * (1.0 - mu).powi((m - j) as i32))
        .sum::<f64>()
        .min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_channel_always_accepts() {
        let code = CodeParams::default_repetition();
        assert_eq!(key_acceptance(0.0, 3, &code), 1.0);
        assert_eq!(similarity(0.0, 3, 384, 0), 1.0);
    }

    #[test]
    fn default_point() {
        let code = CodeParams::default_repetition();
        let q = 0.01f64.powi(3) + 3.0 * 0.01f64.powi(2) * 0.99;
        let mu = 2.0 * q * (1.0 - q);
        let s = ((1.0 - mu).powi(3) + 3.0 * mu * (1.0 - mu).powi(2)).powi(128);
        assert!((key_acceptance(0.01, 3, &code) - s).abs() < 1e-12);
        assert!((s - 0.99986).abs() < 1e-5);
    }

    #[test]
    fn monotone_in_noise_and_readings() {
        let code = CodeParams::default_repetition();
        let mut prev = 1.0;
        for p in [0.0, 0.005, 0.01, 0.02, 0.05, 0.1] {
            let s = key_acceptance(p, 3, &code);
            assert!(s <= prev);
            prev = s;
        }
        let a: Vec<f64> = [1, 3, 5].iter().map(|&r| key_acceptance(0.05, r, &code)).collect();
        assert!(a[0] <= a[1] && a[1] <= a[2]);
    }

    #[test]
    fn similarity_is_a_cdf() {
        let full = similarity(0.05, 3, 384, 384);
        assert!((full - 1.0).abs() < 1e-9);
        assert!(similarity(0.05, 3, 384, 5) < similarity(0.05, 3, 384, 24));
    }
}
