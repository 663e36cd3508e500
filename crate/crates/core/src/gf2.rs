//! Packed GF(2) vectors and matrices.
//!
//! Every bit string exchanged by the protocol (raw key material, parity
//! strings, pads, code generators) is a [`BitVec`]. Bits are indexed from 0
//! and stored little-endian inside `u64` words; bits past `len` are always
//! zero so that word-level equality and hashing are sound.
//!
//! Elimination is deterministic: pivots are taken at the leftmost nonzero
//! column, using the first available row.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

const WORD_BITS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Gf2Error {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("generator is rank deficient: rank {rank} of {rows} rows")]
    RankDeficient { rank: usize, rows: usize },
    #[error("row {row} has {len} bits, expected {cols}")]
    RowLength { row: usize, len: usize, cols: usize },
    #[error("invalid hex bit string: {0}")]
    InvalidHex(String),
    #[error("invalid binary digit {0:?}")]
    InvalidDigit(char),
}

/// Ordered sequence of bits packed into machine words.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitVec {
    words: Vec<u64>,
    len: usize,
}

#[inline]
fn words_for(len: usize) -> usize {
    len.div_ceil(WORD_BITS)
}

impl BitVec {
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; words_for(len)],
            len,
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut v = Self {
            words: vec![u64::MAX; words_for(len)],
            len,
        };
        v.mask_tail();
        v
    }

    /// Vector with only bit `i` set.
    pub fn unit(len: usize, i: usize) -> Self {
        let mut v = Self::zeros(len);
        v.set(i, true);
        v
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        bits.iter().copied().collect()
    }

    /// Uniformly random vector of `len` fair-coin bits.
    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut v = Self {
            words: (0..words_for(len)).map(|_| rng.random::<u64>()).collect(),
            len,
        };
        v.mask_tail();
        v
    }

    fn mask_tail(&mut self) {
        let rem = self.len % WORD_BITS;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// # Panics
    /// Panics if `i >= len`.
    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range (len={})", self.len);
        (self.words[i / WORD_BITS] >> (i % WORD_BITS)) & 1 == 1
    }

    /// # Panics
    /// Panics if `i >= len`.
    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range (len={})", self.len);
        let mask = 1u64 << (i % WORD_BITS);
        if value {
            self.words[i / WORD_BITS] |= mask;
        } else {
            self.words[i / WORD_BITS] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit index {i} out of range (len={})", self.len);
        self.words[i / WORD_BITS] ^= 1u64 << (i % WORD_BITS);
    }

    pub fn push(&mut self, bit: bool) {
        if self.len.is_multiple_of(WORD_BITS) {
            self.words.push(0);
        }
        self.len += 1;
        self.set(self.len - 1, bit);
    }

    pub fn extend_from(&mut self, other: &BitVec) {
        for bit in other.iter() {
            self.push(bit);
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Indices of the set bits, ascending.
    pub fn ones_positions(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.count_ones());
        for (wi, &w) in self.words.iter().enumerate() {
            let mut w = w;
            while w != 0 {
                let tz = w.trailing_zeros() as usize;
                out.push(wi * WORD_BITS + tz);
                w &= w - 1;
            }
        }
        out
    }

    /// Index of the last set bit, if any.
    pub fn last_one(&self) -> Option<usize> {
        self.words
            .iter()
            .enumerate()
            .rev()
            .find(|(_, &w)| w != 0)
            .map(|(wi, &w)| wi * WORD_BITS + (WORD_BITS - 1 - w.leading_zeros() as usize))
    }

    /// Index of the first set bit, if any.
    pub fn first_one(&self) -> Option<usize> {
        self.words
            .iter()
            .enumerate()
            .find(|(_, &w)| w != 0)
            .map(|(wi, &w)| wi * WORD_BITS + w.trailing_zeros() as usize)
    }

    fn check_len(&self, other: &BitVec) -> Result<(), Gf2Error> {
        if self.len != other.len {
            return Err(Gf2Error::LengthMismatch {
                left: self.len,
                right: other.len,
            });
        }
        Ok(())
    }

    pub fn xor(&self, other: &BitVec) -> Result<BitVec, Gf2Error> {
        let mut out = self.clone();
        out.xor_assign(other)?;
        Ok(out)
    }

    pub fn xor_assign(&mut self, other: &BitVec) -> Result<(), Gf2Error> {
        self.check_len(other)?;
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= b;
        }
        Ok(())
    }

    pub fn and(&self, other: &BitVec) -> Result<BitVec, Gf2Error> {
        self.check_len(other)?;
        Ok(BitVec {
            words: self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect(),
            len: self.len,
        })
    }

    /// Mod-2 inner product.
    pub fn dot(&self, other: &BitVec) -> Result<bool, Gf2Error> {
        self.check_len(other)?;
        let acc = self
            .words
            .iter()
            .zip(&other.words)
            .fold(0u64, |acc, (a, b)| acc ^ (a & b));
        Ok(acc.count_ones() & 1 == 1)
    }

    /// XOR of all bits.
    pub fn parity(&self) -> bool {
        self.words.iter().fold(0u64, |acc, w| acc ^ w).count_ones() & 1 == 1
    }

    /// Removes bit `i`, shifting every later bit down by one position.
    pub fn remove(&mut self, i: usize) -> bool {
        let removed = self.get(i);
        let wi = i / WORD_BITS;
        let bi = i % WORD_BITS;
        let n = self.words.len();
        let low_mask = if bi == 0 { 0 } else { (1u64 << bi) - 1 };
        let w = self.words[wi];
        let mut shifted = (w & low_mask) | ((w >> 1) & !low_mask);
        if wi + 1 < n {
            shifted |= (self.words[wi + 1] & 1) << (WORD_BITS - 1);
        }
        self.words[wi] = shifted;
        for j in wi + 1..n {
            let mut w = self.words[j] >> 1;
            if j + 1 < n {
                w |= (self.words[j + 1] & 1) << (WORD_BITS - 1);
            }
            self.words[j] = w;
        }
        self.len -= 1;
        if self.words.len() > words_for(self.len) {
            self.words.pop();
        }
        self.mask_tail();
        removed
    }

    /// Gathers the bits at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> BitVec {
        indices.iter().map(|&i| self.get(i)).collect()
    }

    /// Lowercase hex, most-significant nibble first. Bit 0 is the high bit
    /// of the first nibble; the final nibble is zero-padded on the right.
    pub fn to_hex(&self) -> String {
        const DIGITS: &[u8; 16] = b"0123456789abcdef";
        let mut out = String::with_capacity(self.len.div_ceil(4));
        for chunk in 0..self.len.div_ceil(4) {
            let mut nibble = 0usize;
            for k in 0..4 {
                let i = chunk * 4 + k;
                nibble <<= 1;
                if i < self.len && self.get(i) {
                    nibble |= 1;
                }
            }
            out.push(DIGITS[nibble] as char);
        }
        out
    }

    pub fn from_hex(hex: &str, len: usize) -> Result<BitVec, Gf2Error> {
        let hex = hex.trim();
        if hex.len() != len.div_ceil(4) {
            return Err(Gf2Error::InvalidHex(format!(
                "{} digits cannot hold exactly {len} bits",
                hex.len()
            )));
        }
        let mut v = BitVec::zeros(len);
        for (chunk, c) in hex.chars().enumerate() {
            let nibble = c
                .to_digit(16)
                .ok_or_else(|| Gf2Error::InvalidHex(format!("bad digit {c:?}")))?;
            for k in 0..4 {
                let i = chunk * 4 + k;
                let bit = (nibble >> (3 - k)) & 1 == 1;
                if i < len {
                    v.set(i, bit);
                } else if bit {
                    return Err(Gf2Error::InvalidHex("nonzero padding bits".into()));
                }
            }
        }
        Ok(v)
    }

    /// Packs bits MSB-first into bytes; the final byte is zero-padded.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len.div_ceil(8)];
        for i in self.ones_positions() {
            out[i / 8] |= 0x80 >> (i % 8);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<BitVec, Gf2Error> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Gf2Error::LengthMismatch {
                left: bytes.len(),
                right: len.div_ceil(8),
            });
        }
        Ok((0..len).map(|i| bytes[i / 8] & (0x80 >> (i % 8)) != 0).collect())
    }
}

impl FromIterator<bool> for BitVec {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        let mut v = BitVec::zeros(0);
        for bit in iter {
            v.push(bit);
        }
        v
    }
}

/// Parses a string of `0`/`1` digits; underscores and spaces are ignored.
impl FromStr for BitVec {
    type Err = Gf2Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.chars()
            .filter(|c| *c != '_' && !c.is_whitespace())
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Gf2Error::InvalidDigit(other)),
            })
            .collect()
    }
}

impl fmt::Display for BitVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for bit in self.iter() {
            f.write_str(if bit { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 128 {
            write!(f, "BitVec({self})")
        } else {
            write!(f, "BitVec(len={}, hex={})", self.len, self.to_hex())
        }
    }
}

#[derive(Serialize, Deserialize)]
struct HexBits {
    len: usize,
    hex: String,
}

impl Serialize for BitVec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        HexBits {
            len: self.len,
            hex: self.to_hex(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BitVec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = HexBits::deserialize(deserializer)?;
        BitVec::from_hex(&raw.hex, raw.len).map_err(serde::de::Error::custom)
    }
}

/// Dense row-major GF(2) matrix.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BitMatrix {
    cols: usize,
    rows: Vec<BitVec>,
}

impl BitMatrix {
    pub fn from_rows(cols: usize, rows: Vec<BitVec>) -> Result<Self, Gf2Error> {
        for (row, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Gf2Error::RowLength {
                    row,
                    len: r.len(),
                    cols,
                });
            }
        }
        Ok(Self { cols, rows })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            cols,
            rows: vec![BitVec::zeros(cols); rows],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            cols: n,
            rows: (0..n).map(|i| BitVec::unit(n, i)).collect(),
        }
    }

    pub fn random<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        Self {
            cols,
            rows: (0..rows).map(|_| BitVec::random(cols, rng)).collect(),
        }
    }

    #[inline]
    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    #[inline]
    pub fn num_cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> &[BitVec] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &BitVec {
        &self.rows[i]
    }

    pub fn swap_rows(&mut self, a: usize, b: usize) {
        self.rows.swap(a, b);
    }

    /// `rows[dst] ^= rows[src]`.
    pub fn add_row(&mut self, dst: usize, src: usize) {
        assert_ne!(dst, src);
        let src_row = self.rows[src].clone();
        self.rows[dst].xor_assign(&src_row).expect("rows share a length");
    }

    /// Reduced row echelon form and the pivot column of each nonzero row.
    pub fn rref(&self) -> (BitMatrix, Vec<usize>) {
        let mut m = self.clone();
        let mut pivots = Vec::new();
        let mut next = 0;
        for col in 0..m.cols {
            if next == m.rows.len() {
                break;
            }
            let Some(p) = (next..m.rows.len()).find(|&r| m.rows[r].get(col)) else {
                continue;
            };
            m.rows.swap(next, p);
            let pivot_row = m.rows[next].clone();
            for r in 0..m.rows.len() {
                if r != next && m.rows[r].get(col) {
                    m.rows[r].xor_assign(&pivot_row).expect("rows share a length");
                }
            }
            pivots.push(col);
            next += 1;
        }
        (m, pivots)
    }

    pub fn rank(&self) -> usize {
        self.rref().1.len()
    }

    /// GF(2) product `M·v`.
    pub fn mat_vec(&self, v: &BitVec) -> Result<BitVec, Gf2Error> {
        if v.len() != self.cols {
            return Err(Gf2Error::LengthMismatch {
                left: self.cols,
                right: v.len(),
            });
        }
        self.rows.iter().map(|r| r.dot(v)).collect()
    }

    /// `self · otherᵀ`, a `self.rows × other.rows` matrix.
    pub fn mul_transpose(&self, other: &BitMatrix) -> Result<BitMatrix, Gf2Error> {
        if self.cols != other.cols {
            return Err(Gf2Error::LengthMismatch {
                left: self.cols,
                right: other.cols,
            });
        }
        let rows = self
            .rows
            .iter()
            .map(|a| other.rows.iter().map(|b| a.dot(b)).collect())
            .collect::<Result<Vec<BitVec>, _>>()?;
        Ok(BitMatrix {
            cols: other.rows.len(),
            rows,
        })
    }

    /// Row-major flattening into one bit string.
    pub fn to_bitvec(&self) -> BitVec {
        let mut out = BitVec::zeros(0);
        for r in &self.rows {
            out.extend_from(r);
        }
        out
    }

    pub fn from_bitvec(bits: &BitVec, rows: usize, cols: usize) -> Result<Self, Gf2Error> {
        if bits.len() != rows * cols {
            return Err(Gf2Error::LengthMismatch {
                left: bits.len(),
                right: rows * cols,
            });
        }
        let rows = (0..rows)
            .map(|r| (0..cols).map(|c| bits.get(r * cols + c)).collect())
            .collect();
        Ok(Self { cols, rows })
    }
}

/// Parity-check matrix of the code spanned by the rows of `generator`.
///
/// For a full-rank `r × k` generator the result is `(k − r) × k`, full
/// rank, and annihilates exactly the row space: `H·w = 0` iff `w` is a
/// codeword, so `H·v` labels the coset `v + C`.
pub fn parity_check_of(generator: &BitMatrix) -> Result<BitMatrix, Gf2Error> {
    let k = generator.num_cols();
    let (reduced, pivots) = generator.rref();
    if pivots.len() != generator.num_rows() {
        return Err(Gf2Error::RankDeficient {
            rank: pivots.len(),
            rows: generator.num_rows(),
        });
    }
    let mut is_pivot = vec![false; k];
    for &p in &pivots {
        is_pivot[p] = true;
    }
    let rows = (0..k)
        .filter(|&c| !is_pivot[c])
        .map(|free| {
            let mut h = BitVec::unit(k, free);
            for (i, &p) in pivots.iter().enumerate() {
                if reduced.row(i).get(free) {
                    h.set(p, true);
                }
            }
            h
        })
        .collect();
    BitMatrix::from_rows(k, rows)
}
