//! Masked categorical action distribution.
//!
//! Disallowed logits are replaced by -1e9 before the softmax, which pushes
//! their probability to exactly zero in f64 while keeping every intermediate
//! finite. The same convention is used on the tape side during updates.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Replacement value for disallowed logits.
pub const MASK_PENALTY: f64 = -1e9;

/// A categorical distribution restricted to mask-admitted actions.
#[derive(Debug, Clone)]
pub struct MaskedCategorical {
    log_probs: Vec<f64>,
    admitted: Vec<bool>,
}

impl MaskedCategorical {
    /// Build from raw logits and a mask; errors when nothing is admitted.
    pub fn new(logits: &[f64], mask: &[bool]) -> Result<Self> {
        debug_assert_eq!(logits.len(), mask.len());
        if !mask.iter().any(|&m| m) {
            return Err(Error::EmptyMask);
        }
        let masked: Vec<f64> = logits
            .iter()
            .zip(mask.iter())
            .map(|(&l, &m)| if m { l } else { MASK_PENALTY })
            .collect();
        let max = masked.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = masked.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
        Ok(MaskedCategorical {
            log_probs: masked.iter().map(|l| l - lse).collect(),
            admitted: mask.to_vec(),
        })
    }

    pub fn num_actions(&self) -> usize {
        self.log_probs.len()
    }

    pub fn prob(&self, action: usize) -> f64 {
        self.log_probs[action].exp()
    }

    pub fn log_prob(&self, action: usize) -> f64 {
        self.log_probs[action]
    }

    /// Entropy over the admitted support.
    pub fn entropy(&self) -> f64 {
        self.log_probs
            .iter()
            .zip(self.admitted.iter())
            .filter(|(_, &m)| m)
            .map(|(&lp, _)| {
                let p = lp.exp();
                if p > 0.0 {
                    -p * lp
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// Sample an admitted action.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last_admitted = 0;
        for (a, (&lp, &m)) in self.log_probs.iter().zip(self.admitted.iter()).enumerate() {
            if !m {
                continue;
            }
            last_admitted = a;
            acc += lp.exp();
            if u < acc {
                return a;
            }
        }
        last_admitted
    }

    /// Highest-probability admitted action (greedy evaluation).
    pub fn argmax(&self) -> usize {
        let mut best = None;
        for (a, (&lp, &m)) in self.log_probs.iter().zip(self.admitted.iter()).enumerate() {
            if !m {
                continue;
            }
            match best {
                None => best = Some((a, lp)),
                Some((_, cur)) if lp > cur => best = Some((a, lp)),
                _ => {}
            }
        }
        best.expect("constructor guarantees an admitted action").0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn single_admitted_action_is_certain() {
        let d = MaskedCategorical::new(&[0.3, -1.0, 2.0], &[false, true, false]).unwrap();
        assert!((d.prob(1) - 1.0).abs() < 1e-12);
        assert!(d.entropy().abs() < 1e-12);
        let mut rng = stream_rng(1, 1);
        for _ in 0..100 {
            assert_eq!(d.sample(&mut rng), 1);
        }
    }

    #[test]
    fn uniform_logits_give_uniform_admitted_probabilities() {
        let d = MaskedCategorical::new(&[0.5; 5], &[true, false, true, true, false]).unwrap();
        for a in [0, 2, 3] {
            assert!((d.prob(a) - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!((d.entropy() - (3.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn disallowed_actions_never_sampled() {
        let d = MaskedCategorical::new(&[1.0, 5.0, 0.2, 3.0], &[true, false, true, true]).unwrap();
        let mut rng = stream_rng(2, 2);
        for _ in 0..100_000 {
            assert_ne!(d.sample(&mut rng), 1);
        }
        assert!(d.prob(1) < 1e-30);
        assert!(d.log_prob(1) <= -20.0);
    }

    #[test]
    fn empty_mask_is_an_error() {
        assert!(matches!(
            MaskedCategorical::new(&[1.0, 2.0], &[false, false]),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn sampling_frequencies_match_probabilities() {
        let d = MaskedCategorical::new(&[0.0, 1.0, 0.5, -9.0], &[true, true, true, false]).unwrap();
        let mut rng = stream_rng(3, 3);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[d.sample(&mut rng)] += 1;
        }
        for a in 0..3 {
            let f = counts[a] as f64 / n as f64;
            assert!((f - d.prob(a)).abs() < 0.01, "action {}: {} vs {}", a, f, d.prob(a));
        }
        assert_eq!(counts[3], 0);
    }
}
