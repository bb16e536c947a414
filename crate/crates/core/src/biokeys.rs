//! Biometric witnesses.
//!
//! The body is modeled as a per-epoch uniform ground-truth bit string that
//! every sensor observes through an independent binary symmetric channel with
//! crossover probability `p`. A node's witness for an epoch is the bitwise
//! majority of `R` independent readings.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{BitError, BitString};
use crate::protocol::NodeId;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BioError {
    #[error("bit error probability {0} outside [0, 0.5)")]
    Probability(f64),
    #[error("readings per fuse must be odd and positive, got {0}")]
    EvenReadings(usize),
    #[error("expected {expected} readings, got {got}")]
    ReadingCount { expected: usize, got: usize },
    #[error("reading index {index} outside [0, {readings})")]
    ReadingIndex { index: usize, readings: usize },
    #[error("witness length must be positive")]
    EmptyWitness,
    #[error("threshold {t} exceeds length {len}")]
    Threshold { t: usize, len: usize },
    #[error(transparent)]
    Bits(#[from] BitError),
}

/// Synchronization period during which all nodes sense the same signal window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Epoch {
    pub index: u64,
    pub period_ticks: u64,
}

impl Epoch {
    pub fn containing(tick: u64, period_ticks: u64) -> Self {
        assert!(period_ticks > 0, "epoch period must be positive");
        Self {
            index: tick / period_ticks,
            period_ticks,
        }
    }

    pub fn start_tick(&self) -> u64 {
        self.index * self.period_ticks
    }

    pub fn next(&self) -> Self {
        Self {
            index: self.index + 1,
            period_ticks: self.period_ticks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodySignalModel {
    pub seed: u64,
    pub witness_len: usize,
    pub bit_error_prob: f64,
    pub readings_per_fuse: usize,
}

impl BodySignalModel {
    pub fn new(
        seed: u64,
        witness_len: usize,
        bit_error_prob: f64,
        readings_per_fuse: usize,
    ) -> Result<Self, BioError> {
        let model = Self {
            seed,
            witness_len,
            bit_error_prob,
            readings_per_fuse,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), BioError> {
        if self.witness_len == 0 {
            return Err(BioError::EmptyWitness);
        }
        if !(0.0..0.5).contains(&self.bit_error_prob) {
            return Err(BioError::Probability(self.bit_error_prob));
        }
        if self.readings_per_fuse.is_multiple_of(2) {
            return Err(BioError::EvenReadings(self.readings_per_fuse));
        }
        Ok(())
    }

    /// Fuses `R` readings taken by `node` during `epoch` into its witness.
    pub fn fuse(&self, node: NodeId, epoch: u64) -> BiometricKey {
        let truth = epoch_truth(self, epoch);
        let readings: Vec<BitString> = (0..self.readings_per_fuse)
            .map(|r| self.noisy(truth.clone(), node, epoch, r))
            .collect();
        let bits = majority_fuse(&readings, self.readings_per_fuse)
            .expect("readings are generated with consistent length and odd count");
        BiometricKey { node, epoch, bits }
    }

    fn noisy(&self, mut bits: BitString, node: NodeId, epoch: u64, reading_index: usize) -> BitString {
        if self.bit_error_prob > 0.0 {
            let mut rng = rng::stream(
                "bsk.noise",
                &[self.seed, u64::from(node.0), epoch, reading_index as u64],
            );
            for pos in noise_positions(&mut rng, self.bit_error_prob, self.witness_len) {
                bits.flip(pos);
            }
        }
        bits
    }
}

/// Per-node, per-epoch witness.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BiometricKey {
    pub node: NodeId,
    pub epoch: u64,
    pub bits: BitString,
}

/// Ground-truth signal bits for `epoch`; a pure function of `(seed, epoch)`.
pub fn epoch_truth(model: &BodySignalModel, epoch: u64) -> BitString {
    let mut rng = rng::stream("bsk.truth", &[model.seed, epoch]);
    let mut bytes = vec![0u8; model.witness_len.div_ceil(8)];
    rng.fill_bytes(&mut bytes);
    BitString::from_bytes(&bytes, model.witness_len).expect("buffer sized from witness_len")
}

/// One noisy reading of the epoch signal by `node`.
pub fn observe(
    model: &BodySignalModel,
    node: NodeId,
    epoch: u64,
    reading_index: usize,
) -> Result<BitString, BioError> {
    if reading_index >= model.readings_per_fuse {
        return Err(BioError::ReadingIndex {
            index: reading_index,
            readings: model.readings_per_fuse,
        });
    }
    Ok(model.noisy(epoch_truth(model, epoch), node, epoch, reading_index))
}

// Positions of i.i.d. Bernoulli(p) successes over `len` trials, generated by
// geometric gap sampling.
fn noise_positions<R: Rng>(rng: &mut R, p: f64, len: usize) -> Vec<usize> {
    let gaps = Geometric::new(p).expect("p validated to lie in (0, 0.5)");
    let mut out = Vec::new();
    let mut pos: u64 = 0;
    loop {
        pos = pos.saturating_add(gaps.sample(rng));
        if pos >= len as u64 {
            return out;
        }
        out.push(pos as usize);
        pos += 1;
    }
}

/// Bitwise majority over exactly `r` equal-length readings.
pub fn majority_fuse(readings: &[BitString], r: usize) -> Result<BitString, BioError> {
    if r.is_multiple_of(2) {
        return Err(BioError::EvenReadings(r));
    }
    if readings.len() != r {
        return Err(BioError::ReadingCount {
            expected: r,
            got: readings.len(),
        });
    }
    let len = readings[0].len();
    if let Some(bad) = readings.iter().find(|b| b.len() != len) {
        return Err(BitError::LengthMismatch {
            left: len,
            right: bad.len(),
        }
        .into());
    }
    let mut out = BitString::zeros(len);
    for j in 0..len {
        let ones = readings.iter().filter(|b| b.get(j)).count();
        if 2 * ones > r {
            out.set(j, true);
        }
    }
    Ok(out)
}

pub fn hamming(a: &BitString, b: &BitString) -> Result<usize, BioError> {
    Ok(a.distance(b)?)
}

/// True iff the two witnesses are within Hamming distance `t` (inclusive).
pub fn similar(a: &BitString, b: &BitString, t: usize) -> Result<bool, BioError> {
    if t > a.len() {
        return Err(BioError::Threshold { t, len: a.len() });
    }
    Ok(hamming(a, b)? <= t)
}

/// Per-bit error rate of an `r`-reading majority vote over a channel with
/// crossover `p`.
pub fn fused_error_rate(p: f64, r: usize) -> f64 {
    (r / 2 + 1..=r)
        .map(|k| binomial(r, k) * p.powi(k as i32) * (1.0 - p).powi((r - k) as i32))
        .sum()
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
