//! Fixed-length bit strings.
//!
//! Bits are packed most-significant-first: bit 0 is the high bit of the first
//! byte. Padding bits in the last byte are always zero, so byte-level equality
//! and hashing agree with bit-level equality.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BitError {
    #[error("length mismatch: {left} bits vs {right} bits")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid bit character {0:?}")]
    InvalidChar(char),
    #[error("{bytes} bytes cannot hold {bits} bits")]
    ByteLength { bytes: usize, bits: usize },
}

#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitString {
    bytes: Vec<u8>,
    len: usize,
}

impl BitString {
    pub fn zeros(len: usize) -> Self {
        Self {
            bytes: vec![0; len.div_ceil(8)],
            len,
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut s = Self {
            bytes: vec![0xff; len.div_ceil(8)],
            len,
        };
        s.clear_padding();
        s
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut s = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            s.set(i, b);
        }
        s
    }

    /// Builds a string of `len` bits from packed bytes. Extra padding bits in
    /// the final byte are cleared.
    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<Self, BitError> {
        if bytes.len() != len.div_ceil(8) {
            return Err(BitError::ByteLength {
                bytes: bytes.len(),
                bits: len,
            });
        }
        let mut s = Self {
            bytes: bytes.to_vec(),
            len,
        };
        s.clear_padding();
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.bytes[i / 8] & (0x80 >> (i % 8)) != 0
    }

    #[inline]
    pub fn set(&mut self, i: usize, bit: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let mask = 0x80 >> (i % 8);
        if bit {
            self.bytes[i / 8] |= mask;
        } else {
            self.bytes[i / 8] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.bytes[i / 8] ^= 0x80 >> (i % 8);
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn xor(&self, other: &BitString) -> Result<BitString, BitError> {
        self.check_len(other)?;
        Ok(BitString {
            bytes: self
                .bytes
                .iter()
                .zip(&other.bytes)
                .map(|(a, b)| a ^ b)
                .collect(),
            len: self.len,
        })
    }

    pub fn xor_assign(&mut self, other: &BitString) -> Result<(), BitError> {
        self.check_len(other)?;
        for (a, b) in self.bytes.iter_mut().zip(&other.bytes) {
            *a ^= b;
        }
        Ok(())
    }

    pub fn not(&self) -> BitString {
        let mut s = BitString {
            bytes: self.bytes.iter().map(|b| !b).collect(),
            len: self.len,
        };
        s.clear_padding();
        s
    }

    /// Number of positions where `self` and `other` differ.
    pub fn distance(&self, other: &BitString) -> Result<usize, BitError> {
        self.check_len(other)?;
        Ok(self
            .bytes
            .iter()
            .zip(&other.bytes)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    pub(crate) fn clear_padding(&mut self) {
        let rem = self.len % 8;
        if rem != 0 {
            if let Some(last) = self.bytes.last_mut() {
                *last &= 0xffu8 << (8 - rem);
            }
        }
    }

    fn check_len(&self, other: &BitString) -> Result<(), BitError> {
        if self.len != other.len {
            return Err(BitError::LengthMismatch {
                left: self.len,
                right: other.len,
            });
        }
        Ok(())
    }
}

impl FromStr for BitString {
    type Err = BitError;

    /// Parses a string of `0`/`1` characters; `_` is accepted as a separator.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bits = s
            .chars()
            .filter(|c| *c != '_')
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(BitError::InvalidChar(other)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_bools(&bits))
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 64 {
            write!(f, "BitString({self})")
        } else {
            write!(f, "BitString[{}]({})", self.len, hex::encode(&self.bytes))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits(s: &str) -> BitString {
        s.parse().unwrap()
    }

    #[test]
    fn parse_and_display() {
        let b = bits("1010_0001_1");
        assert_eq!(b.len(), 9);
        assert_eq!(b.to_string(), "101000011");
        assert_eq!(b.as_bytes(), &[0b1010_0001, 0b1000_0000]);
        assert!(matches!(
            "10x".parse::<BitString>(),
            Err(BitError::InvalidChar('x'))
        ));
    }

    #[test]
    fn xor_rejects_length_mismatch() {
        assert_eq!(
            bits("101").xor(&bits("1010")),
            Err(BitError::LengthMismatch { left: 3, right: 4 })
        );
    }

    #[test]
    fn from_bytes_clears_padding() {
        let b = BitString::from_bytes(&[0xff], 3).unwrap();
        assert_eq!(b, bits("111"));
        assert!(BitString::from_bytes(&[0, 0], 3).is_err());
    }

    #[test]
    fn complement_keeps_padding_zero() {
        let b = bits("10100");
        assert_eq!(b.not(), bits("01011"));
        assert_eq!(b.not().count_ones(), 3);
    }

    proptest! {
        #[test]
        fn xor_preserves_length_and_self_xor_is_zero(v in prop::collection::vec(any::<bool>(), 0..300)) {
            let a = BitString::from_bools(&v);
            let z = a.xor(&a).unwrap();
            prop_assert_eq!(z.len(), a.len());
            prop_assert_eq!(z, BitString::zeros(a.len()));
        }

        #[test]
        fn distance_matches_bitwise_count(
            pair in (1usize..200).prop_flat_map(|n| (
                prop::collection::vec(any::<bool>(), n),
                prop::collection::vec(any::<bool>(), n),
            ))
        ) {
            let (x, y) = pair;
            let expected = x.iter().zip(&y).filter(|(a, b)| a != b).count();
            let a = BitString::from_bools(&x);
            let b = BitString::from_bools(&y);
            prop_assert_eq!(a.distance(&b).unwrap(), expected);
            prop_assert_eq!(b.distance(&a).unwrap(), expected);
        }
    }
}
