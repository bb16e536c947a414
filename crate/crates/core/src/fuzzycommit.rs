//! Fuzzy commitment over a binary block code.
//!
//! A payload is encoded to a codeword `c`; the commitment is `(h(c), x ^ c)`
//! for witness `x`. Opening with a nearby witness `x'` decodes `x' ^ delta`
//! and accepts only if the re-encoded codeword hashes to the stored digest.
//! Decoding never fails on well-sized input: the digest check decides.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bits::{BitError, BitString};

pub const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FuzzyError {
    #[error("{what}: expected {expected} bits, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid code parameters: {0}")]
    Params(String),
    #[error("commitment encoding: expected {expected} bytes, got {got}")]
    Wire { expected: usize, got: usize },
    #[error("decommitment failed: witness too far or commitment altered")]
    DecommitFailed,
}

impl From<BitError> for FuzzyError {
    fn from(e: BitError) -> Self {
        match e {
            BitError::LengthMismatch { left, right } => FuzzyError::Length {
                what: "operand",
                expected: left,
                got: right,
            },
            other => FuzzyError::Params(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeFamily {
    /// Each payload bit is repeated `D` times contiguously.
    Repetition,
}

/// An `(M, K, D)` binary block code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CodeParams {
    pub family: CodeFamily,
    pub m: usize,
    pub k: usize,
    pub d: usize,
}

impl CodeParams {
    pub fn repetition(k: usize, d: usize) -> Result<Self, FuzzyError> {
        let params = Self {
            family: CodeFamily::Repetition,
            m: k * d,
            k,
            d,
        };
        params.validate()?;
        Ok(params)
    }

    /// The default `(384, 128, 3)` repetition code.
    pub fn default_repetition() -> Self {
        Self::repetition(128, 3).expect("valid constant parameters")
    }

    pub fn validate(&self) -> Result<(), FuzzyError> {
        if self.k == 0 || self.d == 0 || self.m < self.k {
            return Err(FuzzyError::Params(format!(
                "need M >= K >= 1 and D >= 1, got ({}, {}, {})",
                self.m, self.k, self.d
            )));
        }
        match self.family {
            CodeFamily::Repetition => {
                if self.d.is_multiple_of(2) {
                    return Err(FuzzyError::Params(format!(
                        "repetition code needs odd D, got {}",
                        self.d
                    )));
                }
                if self.m != self.k * self.d {
                    return Err(FuzzyError::Params(format!(
                        "repetition code needs M = K * D, got M = {} for K = {}, D = {}",
                        self.m, self.k, self.d
                    )));
                }
            }
        }
        Ok(())
    }

    /// Errors corrected per block: `floor((D - 1) / 2)`.
    pub fn correction_capability(&self) -> usize {
        (self.d - 1) / 2
    }

    /// Length of one independently decoded block.
    pub fn block_len(&self) -> usize {
        match self.family {
            CodeFamily::Repetition => self.d,
        }
    }

    pub fn delta_bytes(&self) -> usize {
        self.m.div_ceil(8)
    }

    pub fn commitment_bytes(&self) -> usize {
        DIGEST_LEN + self.delta_bytes()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codeword {
    pub bits: BitString,
    pub params: CodeParams,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Commitment {
    pub digest: [u8; DIGEST_LEN],
    pub delta: BitString,
    pub params: CodeParams,
}

impl Commitment {
    /// `digest || delta`, delta packed most-significant-bit first.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.params.commitment_bytes());
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(self.delta.as_bytes());
        out
    }

    pub fn from_bytes(params: CodeParams, bytes: &[u8]) -> Result<Self, FuzzyError> {
        let expected = params.commitment_bytes();
        if bytes.len() != expected {
            return Err(FuzzyError::Wire {
                expected,
                got: bytes.len(),
            });
        }
        let mut digest = [0u8; DIGEST_LEN];
        digest.copy_from_slice(&bytes[..DIGEST_LEN]);
        let delta = BitString::from_bytes(&bytes[DIGEST_LEN..], params.m)?;
        Ok(Self {
            digest,
            delta,
            params,
        })
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), FuzzyError> {
    if expected != got {
        return Err(FuzzyError::Length {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

pub fn encode(params: &CodeParams, payload: &BitString) -> Result<Codeword, FuzzyError> {
    check_len("payload", params.k, payload.len())?;
    let mut bits = BitString::zeros(params.m);
    match params.family {
        CodeFamily::Repetition => {
            for (i, bit) in payload.iter().enumerate() {
                if bit {
                    for j in i * params.d..(i + 1) * params.d {
                        bits.set(j, true);
                    }
                }
            }
        }
    }
    Ok(Codeword {
        bits,
        params: *params,
    })
}

/// Nearest-codeword decoding within capability; per-block majority for the
/// repetition code. Beyond capability the result may be wrong.
pub fn decode(params: &CodeParams, word: &BitString) -> Result<BitString, FuzzyError> {
    check_len("word", params.m, word.len())?;
    let mut payload = BitString::zeros(params.k);
    match params.family {
        CodeFamily::Repetition => {
            let d = params.d;
            for i in 0..params.k {
                let ones = (i * d..(i + 1) * d).filter(|&j| word.get(j)).count();
                if 2 * ones > d {
                    payload.set(i, true);
                }
            }
        }
    }
    Ok(payload)
}

/// Public injective map from `K`-bit secrets to `M`-bit strings, used to
/// combine a secret with a witness.
pub fn expand(params: &CodeParams, value: &BitString) -> Result<BitString, FuzzyError> {
    Ok(encode(params, value)?.bits)
}

fn digest_of(codeword: &BitString) -> [u8; DIGEST_LEN] {
    Sha256::digest(codeword.as_bytes()).into()
}

pub fn commit(
    params: &CodeParams,
    payload: &BitString,
    witness: &BitString,
) -> Result<Commitment, FuzzyError> {
    check_len("witness", params.m, witness.len())?;
    let c = encode(params, payload)?;
    Ok(Commitment {
        digest: digest_of(&c.bits),
        delta: witness.xor(&c.bits)?,
        params: *params,
    })
}

pub fn decommit(
    commitment: &Commitment,
    witness_prime: &BitString,
) -> Result<BitString, FuzzyError> {
    let params = &commitment.params;
    check_len("witness", params.m, witness_prime.len())?;
    check_len("delta", params.m, commitment.delta.len())?;
    let noisy = witness_prime.xor(&commitment.delta)?;
    let payload = decode(params, &noisy)?;
    let c = encode(params, &payload)?;
    if digest_of(&c.bits) == commitment.digest {
        Ok(payload)
    } else {
        Err(FuzzyError::DecommitFailed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits(s: &str) -> BitString {
        s.parse().unwrap()
    }

    fn rep3(k: usize) -> CodeParams {
        CodeParams::repetition(k, 3).unwrap()
    }

    #[test]
    fn default_code() {
        let p = CodeParams::default_repetition();
        assert_eq!((p.m, p.k, p.d), (384, 128, 3));
        assert_eq!(p.correction_capability(), 1);
        assert_eq!(p.commitment_bytes(), 32 + 48);
    }

    #[test]
    fn capability_from_distance() {
        assert_eq!(rep3(4).correction_capability(), 1);
        assert_eq!(CodeParams::repetition(4, 5).unwrap().correction_capability(), 2);
    }

    #[test]
    fn invalid_params() {
        assert!(CodeParams::repetition(4, 2).is_err());
        assert!(CodeParams::repetition(0, 3).is_err());
        let bad = CodeParams {
            family: CodeFamily::Repetition,
            m: 10,
            k: 4,
            d: 3,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn encode_by_hand() {
        let p = rep3(2);
        assert_eq!(encode(&p, &bits("10")).unwrap().bits, bits("111000"));
        assert_eq!(encode(&p, &bits("00")).unwrap().bits, bits("000000"));
        assert_eq!(expand(&p, &bits("01")).unwrap(), bits("000111"));
        assert!(matches!(
            encode(&p, &bits("101")),
            Err(FuzzyError::Length { what: "payload", .. })
        ));
    }

    #[test]
    fn decode_by_hand() {
        let p = rep3(2);
        assert_eq!(decode(&p, &bits("110000")).unwrap(), bits("10"));
        // Two flips in one block exceed capability.
        assert_eq!(decode(&p, &bits("100000")).unwrap(), bits("00"));
        assert!(decode(&p, &bits("10000")).is_err());
    }

    #[test]
    fn commit_cases() {
        let p = rep3(2);
        let payload = bits("10");
        let c = encode(&p, &payload).unwrap().bits;
        let com = commit(&p, &payload, &c).unwrap();
        assert_eq!(com.delta, BitString::zeros(6));
        assert_eq!(decommit(&com, &c).unwrap(), payload);

        let other = commit(&p, &payload, &bits("010110")).unwrap();
        assert_eq!(com.digest, other.digest);
        assert_ne!(com.delta, other.delta);
    }

    #[test]
    fn decommit_within_and_beyond_capability() {
        let p = rep3(2);
        let w = bits("011010");
        let com = commit(&p, &bits("01"), &w).unwrap();
        // One flip in each block.
        assert_eq!(decommit(&com, &bits("111011")).unwrap(), bits("01"));
        // Two flips in block 1.
        assert_eq!(decommit(&com, &bits("011100")), Err(FuzzyError::DecommitFailed));
    }

    #[test]
    fn wire_layout() {
        let p = rep3(8);
        let com = commit(&p, &bits("10110001"), &BitString::ones(24)).unwrap();
        let bytes = com.to_bytes();
        assert_eq!(bytes.len(), 32 + 3);
        assert_eq!(&bytes[..32], &com.digest);
        assert_eq!(Commitment::from_bytes(p, &bytes).unwrap(), com);
        assert!(matches!(
            Commitment::from_bytes(p, &bytes[1..]),
            Err(FuzzyError::Wire { expected: 35, got: 34 })
        ));
    }

    proptest! {
        #[test]
        fn expand_is_linear(
            a in prop::collection::vec(any::<bool>(), 16),
            b in prop::collection::vec(any::<bool>(), 16),
        ) {
            let p = rep3(16);
            let a = BitString::from_bools(&a);
            let b = BitString::from_bools(&b);
            let lhs = expand(&p, &a).unwrap().xor(&expand(&p, &b).unwrap()).unwrap();
            prop_assert_eq!(lhs, expand(&p, &a.xor(&b).unwrap()).unwrap());
        }

        #[test]
        fn noiseless_round_trip(
            payload in prop::collection::vec(any::<bool>(), 128),
            witness in prop::collection::vec(any::<bool>(), 384),
        ) {
            let p = CodeParams::default_repetition();
            let payload = BitString::from_bools(&payload);
            let witness = BitString::from_bools(&witness);
            prop_assert_eq!(decode(&p, &encode(&p, &payload).unwrap().bits).unwrap(), payload.clone());
            let com = commit(&p, &payload, &witness).unwrap();
            prop_assert_eq!(decommit(&com, &witness).unwrap(), payload);
        }

        #[test]
        fn any_single_tamper_never_yields_wrong_payload(
            payload in prop::collection::vec(any::<bool>(), 32),
            witness in prop::collection::vec(any::<bool>(), 96),
            flip in 0usize..(32 * 8 + 96),
        ) {
            let p = rep3(32);
            let payload = BitString::from_bools(&payload);
            let witness = BitString::from_bools(&witness);
            let com = commit(&p, &payload, &witness).unwrap();
            let mut bytes = com.to_bytes();
            bytes[flip / 8] ^= 0x80 >> (flip % 8);
            let tampered = Commitment::from_bytes(p, &bytes).unwrap();
            match decommit(&tampered, &witness) {
                Ok(got) => prop_assert_eq!(got, payload),
                Err(e) => prop_assert_eq!(e, FuzzyError::DecommitFailed),
            }
        }
    }
}
