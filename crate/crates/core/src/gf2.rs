//! Dense linear algebra over GF(2).
//!
//! Bits are packed little-endian into `u64` words: bit `i` of a vector lives in
//! word `i / 64` at position `i % 64`. Unused high bits of the last word are
//! always zero, so word-wise equality is bit-wise equality.
//!
//! The textual form (hex) is MSB-first: the first hex digit carries bits
//! 0..4 with bit 0 as its most significant bit.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Gf2Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid dimensions {rows}x{cols}")]
    InvalidDims { rows: usize, cols: usize },
    #[error("right-hand side is not in the column space")]
    NoSolution,
    #[error("invalid hex encoding: {0}")]
    BadHex(String),
}

const WORD: usize = 64;

#[inline]
fn words_for(bits: usize) -> usize {
    bits.div_ceil(WORD)
}

#[inline]
fn tail_mask(bits: usize) -> u64 {
    match bits % WORD {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

/// A fixed-length vector over GF(2).
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitBlock {
    len: usize,
    words: Vec<u64>,
}

impl BitBlock {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; words_for(len)],
        }
    }

    /// Wraps LSB-first packed words; bits past `len` must be clear.
    pub fn from_words(len: usize, words: Vec<u64>) -> Result<Self, Gf2Error> {
        if words.len() != words_for(len) {
            return Err(Gf2Error::DimensionMismatch {
                expected: words_for(len),
                actual: words.len(),
            });
        }
        if let Some(&last) = words.last() {
            if last & !tail_mask(len) != 0 {
                return Err(Gf2Error::DimensionMismatch {
                    expected: len,
                    actual: 64 * words.len() - (last.leading_zeros() as usize),
                });
            }
        }
        Ok(Self { len, words })
    }

    /// Builds a block from 0/1 values; any non-zero entry is a set bit.
    pub fn from_bits(bits: &[u8]) -> Self {
        let mut b = Self::zeros(bits.len());
        for (i, &v) in bits.iter().enumerate() {
            if v != 0 {
                b.set(i, true);
            }
        }
        b
    }

    pub fn from_bools<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        let mut words = Vec::new();
        let mut len = 0;
        for bit in iter {
            if len % WORD == 0 {
                words.push(0);
            }
            if bit {
                words[len / WORD] |= 1 << (len % WORD);
            }
            len += 1;
        }
        Self { len, words }
    }

    /// Interprets the low `len` bits of `value`, bit 0 first.
    pub fn from_u64(value: u64, len: usize) -> Self {
        assert!(len <= WORD);
        let mut b = Self::zeros(len);
        if len > 0 {
            b.words[0] = value & tail_mask(len);
        }
        b
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut b = Self::zeros(len);
        for w in &mut b.words {
            *w = rng.random();
        }
        b.clear_tail();
        b
    }

    fn clear_tail(&mut self) {
        if let Some(last) = self.words.last_mut() {
            *last &= tail_mask(self.len);
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

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        (self.words[i / WORD] >> (i % WORD)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let m = 1u64 << (i % WORD);
        if v {
            self.words[i / WORD] |= m;
        } else {
            self.words[i / WORD] &= !m;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len);
        self.words[i / WORD] ^= 1 << (i % WORD);
    }

    pub fn xor_assign(&mut self, other: &BitBlock) {
        assert_eq!(self.len, other.len, "xor of blocks with different lengths");
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= b;
        }
    }

    pub fn xor(&self, other: &BitBlock) -> BitBlock {
        let mut out = self.clone();
        out.xor_assign(other);
        out
    }

    pub fn weight(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn hamming(&self, other: &BitBlock) -> usize {
        assert_eq!(self.len, other.len);
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }

    /// Index of the lowest set bit.
    pub fn first_one(&self) -> Option<usize> {
        self.words
            .iter()
            .enumerate()
            .find(|(_, &w)| w != 0)
            .map(|(i, w)| i * WORD + w.trailing_zeros() as usize)
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    /// Positions of the set bits in increasing order.
    pub fn support(&self) -> Vec<usize> {
        (0..self.len).filter(|&i| self.get(i)).collect()
    }

    pub fn to_bits(&self) -> Vec<u8> {
        self.iter().map(u8::from).collect()
    }

    pub fn slice(&self, start: usize, len: usize) -> BitBlock {
        assert!(start + len <= self.len);
        BitBlock::from_bools((start..start + len).map(|i| self.get(i)))
    }

    pub fn concat<'a, I: IntoIterator<Item = &'a BitBlock>>(blocks: I) -> BitBlock {
        BitBlock::from_bools(blocks.into_iter().flat_map(|b| b.iter()))
    }

    /// Bytes with bit 0 in the MSB of byte 0; trailing pad bits are zero.
    pub fn to_msb_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len.div_ceil(8)];
        for i in 0..self.len {
            if self.get(i) {
                out[i / 8] |= 0x80 >> (i % 8);
            }
        }
        out
    }

    pub fn from_msb_bytes(bytes: &[u8], len: usize) -> Result<BitBlock, Gf2Error> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Gf2Error::BadHex(format!(
                "{} bytes cannot hold exactly {len} bits",
                bytes.len()
            )));
        }
        let mut b = BitBlock::zeros(len);
        for (byte_idx, &byte) in bytes.iter().enumerate() {
            for k in 0..8 {
                let i = byte_idx * 8 + k;
                let bit = byte & (0x80 >> k) != 0;
                if i < len {
                    b.set(i, bit);
                } else if bit {
                    return Err(Gf2Error::BadHex("non-zero padding bits".into()));
                }
            }
        }
        Ok(b)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_msb_bytes())
    }

    pub fn from_hex(s: &str, len: usize) -> Result<BitBlock, Gf2Error> {
        let bytes = hex::decode(s.trim()).map_err(|e| Gf2Error::BadHex(e.to_string()))?;
        Self::from_msb_bytes(&bytes, len)
    }
}

impl fmt::Debug for BitBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitBlock({self})")
    }
}

impl fmt::Display for BitBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Hex string with its declared bit length; the wire form of syndromes and keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HexBits {
    pub bits: usize,
    pub hex: String,
}

impl From<&BitBlock> for HexBits {
    fn from(b: &BitBlock) -> Self {
        HexBits {
            bits: b.len(),
            hex: b.to_hex(),
        }
    }
}

impl TryFrom<&HexBits> for BitBlock {
    type Error = Gf2Error;
    fn try_from(h: &HexBits) -> Result<Self, Gf2Error> {
        BitBlock::from_hex(&h.hex, h.bits)
    }
}

#[derive(Debug, Clone, Copy)]
enum RowOp {
    Swap(usize, usize),
    Add { src: usize, dst: usize },
}

/// Dense row-major bit matrix.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct Gf2Matrix {
    rows: usize,
    cols: usize,
    stride: usize,
    data: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    data: Vec<String>,
}

impl From<Gf2Matrix> for MatrixRepr {
    fn from(m: Gf2Matrix) -> Self {
        MatrixRepr {
            rows: m.rows,
            cols: m.cols,
            data: (0..m.rows).map(|r| m.row(r).to_hex()).collect(),
        }
    }
}

impl TryFrom<MatrixRepr> for Gf2Matrix {
    type Error = Gf2Error;
    fn try_from(r: MatrixRepr) -> Result<Self, Gf2Error> {
        if r.data.len() != r.rows {
            return Err(Gf2Error::DimensionMismatch {
                expected: r.rows,
                actual: r.data.len(),
            });
        }
        let rows = r
            .data
            .iter()
            .map(|h| BitBlock::from_hex(h, r.cols))
            .collect::<Result<Vec<_>, _>>()?;
        Gf2Matrix::from_row_blocks(&rows, r.cols)
    }
}

impl fmt::Debug for Gf2Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Gf2Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Gf2Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let stride = words_for(cols);
        Self {
            rows,
            cols,
            stride,
            data: vec![0; rows * stride],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    /// Builds a matrix from rows of 0/1 values.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self, Gf2Error> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let blocks: Vec<BitBlock> = rows.iter().map(|r| BitBlock::from_bits(r.as_ref())).collect();
        Self::from_row_blocks(&blocks, cols)
    }

    pub fn from_row_blocks(rows: &[BitBlock], cols: usize) -> Result<Self, Gf2Error> {
        let mut m = Self::zeros(rows.len(), cols);
        for (r, block) in rows.iter().enumerate() {
            if block.len() != cols {
                return Err(Gf2Error::DimensionMismatch {
                    expected: cols,
                    actual: block.len(),
                });
            }
            m.row_words_mut(r).copy_from_slice(block.words());
        }
        Ok(m)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        assert!(r < self.rows && c < self.cols);
        (self.data[r * self.stride + c / WORD] >> (c % WORD)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        assert!(r < self.rows && c < self.cols);
        let w = &mut self.data[r * self.stride + c / WORD];
        let m = 1u64 << (c % WORD);
        if v {
            *w |= m;
        } else {
            *w &= !m;
        }
    }

    #[inline]
    fn row_words(&self, r: usize) -> &[u64] {
        &self.data[r * self.stride..(r + 1) * self.stride]
    }

    #[inline]
    fn row_words_mut(&mut self, r: usize) -> &mut [u64] {
        &mut self.data[r * self.stride..(r + 1) * self.stride]
    }

    pub fn row(&self, r: usize) -> BitBlock {
        BitBlock {
            len: self.cols,
            words: self.row_words(r).to_vec(),
        }
    }

    pub fn column(&self, c: usize) -> BitBlock {
        BitBlock::from_bools((0..self.rows).map(|r| self.get(r, c)))
    }

    pub fn columns(&self) -> Vec<BitBlock> {
        (0..self.cols).map(|c| self.column(c)).collect()
    }

    pub fn transpose(&self) -> Gf2Matrix {
        let mut t = Gf2Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                if self.get(r, c) {
                    t.set(c, r, true);
                }
            }
        }
        t
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Gf2Matrix) -> Result<Gf2Matrix, Gf2Error> {
        if self.cols != other.cols {
            return Err(Gf2Error::DimensionMismatch {
                expected: self.cols,
                actual: other.cols,
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Gf2Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            stride: self.stride,
            data,
        })
    }

    /// Rows `start..start + count` as a new matrix.
    pub fn row_range(&self, start: usize, count: usize) -> Gf2Matrix {
        assert!(start + count <= self.rows);
        Gf2Matrix {
            rows: count,
            cols: self.cols,
            stride: self.stride,
            data: self.data[start * self.stride..(start + count) * self.stride].to_vec(),
        }
    }

    pub fn matvec(&self, v: &BitBlock) -> Result<BitBlock, Gf2Error> {
        if v.len() != self.cols {
            return Err(Gf2Error::DimensionMismatch {
                expected: self.cols,
                actual: v.len(),
            });
        }
        let mut out = BitBlock::zeros(self.rows);
        for r in 0..self.rows {
            let parity = self
                .row_words(r)
                .iter()
                .zip(v.words())
                .fold(0u32, |acc, (a, b)| acc ^ (a & b).count_ones())
                & 1;
            if parity == 1 {
                out.set(r, true);
            }
        }
        Ok(out)
    }

    /// Reduced row echelon form and the pivot column of each non-zero row.
    pub fn rref(&self) -> (Gf2Matrix, Vec<usize>) {
        let mut m = self.clone();
        let pivots = m.eliminate(|_| {});
        (m, pivots)
    }

    /// In-place Gauss-Jordan elimination. `on_op` mirrors each row operation
    /// onto side data such as a right-hand side.
    fn eliminate(&mut self, mut on_op: impl FnMut(RowOp)) -> Vec<usize> {
        let mut pivots = Vec::new();
        let mut lead = 0;
        for c in 0..self.cols {
            if lead == self.rows {
                break;
            }
            let Some(p) = (lead..self.rows).find(|&r| self.get(r, c)) else {
                continue;
            };
            if p != lead {
                self.swap_rows(p, lead);
                on_op(RowOp::Swap(p, lead));
            }
            for r in 0..self.rows {
                if r != lead && self.get(r, c) {
                    self.add_row(lead, r);
                    on_op(RowOp::Add { src: lead, dst: r });
                }
            }
            pivots.push(c);
            lead += 1;
        }
        pivots
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        for k in 0..self.stride {
            self.data.swap(a * self.stride + k, b * self.stride + k);
        }
    }

    /// `row[dst] ^= row[src]`
    fn add_row(&mut self, src: usize, dst: usize) {
        for k in 0..self.stride {
            let s = self.data[src * self.stride + k];
            self.data[dst * self.stride + k] ^= s;
        }
    }

    pub fn rank(&self) -> usize {
        self.rref().1.len()
    }

    /// A uniformly random `rows x cols` matrix of rank `rows`.
    ///
    /// Rows are drawn one at a time and rejected while they fall in the span of
    /// the rows already accepted, which samples uniformly from the full-rank
    /// matrices. A consequence is that, for a fixed seed, the first `k` rows of
    /// the result equal `random_full_rank(k, cols, seed)`.
    pub fn random_full_rank(rows: usize, cols: usize, seed: u64) -> Result<Gf2Matrix, Gf2Error> {
        if rows > cols || cols == 0 {
            return Err(Gf2Error::InvalidDims { rows, cols });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut basis = RowBasis::new(cols);
        let mut m = Gf2Matrix::zeros(rows, cols);
        let mut r = 0;
        while r < rows {
            let candidate = BitBlock::random(cols, &mut rng);
            if basis.insert(&candidate) {
                m.row_words_mut(r).copy_from_slice(candidate.words());
                r += 1;
            }
        }
        Ok(m)
    }

    /// Basis of `{v : M v = 0}` with one vector per free column.
    pub fn null_space_basis(&self) -> Vec<BitBlock> {
        let (r, pivots) = self.rref();
        let mut is_pivot = vec![false; self.cols];
        for &p in &pivots {
            is_pivot[p] = true;
        }
        (0..self.cols)
            .filter(|&f| !is_pivot[f])
            .map(|f| {
                let mut v = BitBlock::zeros(self.cols);
                v.set(f, true);
                for (row, &p) in pivots.iter().enumerate() {
                    if r.get(row, f) {
                        v.set(p, true);
                    }
                }
                v
            })
            .collect()
    }

    /// Some `v` with `M v = s`; free variables are set to zero.
    pub fn solve_particular(&self, s: &BitBlock) -> Result<BitBlock, Gf2Error> {
        if s.len() != self.rows {
            return Err(Gf2Error::DimensionMismatch {
                expected: self.rows,
                actual: s.len(),
            });
        }
        let mut m = self.clone();
        let mut rhs = s.clone();
        let pivots = m.eliminate(|op| match op {
            RowOp::Swap(a, b) => {
                let (x, y) = (rhs.get(a), rhs.get(b));
                rhs.set(a, y);
                rhs.set(b, x);
            }
            RowOp::Add { src, dst } => {
                if rhs.get(src) {
                    rhs.flip(dst);
                }
            }
        });
        if (pivots.len()..self.rows).any(|r| rhs.get(r)) {
            return Err(Gf2Error::NoSolution);
        }
        let mut v = BitBlock::zeros(self.cols);
        for (row, &p) in pivots.iter().enumerate() {
            v.set(p, rhs.get(row));
        }
        Ok(v)
    }
}

/// Incrementally maintained basis of a row space.
///
/// Each stored vector is reduced against every earlier one, so its lowest set
/// bit (its pivot) is clear in all vectors stored after it.
#[derive(Debug, Clone)]
pub struct RowBasis {
    cols: usize,
    vectors: Vec<(usize, BitBlock)>,
}

impl RowBasis {
    pub fn new(cols: usize) -> Self {
        Self {
            cols,
            vectors: Vec::new(),
        }
    }

    pub fn from_matrix(m: &Gf2Matrix) -> Self {
        let mut b = Self::new(m.cols());
        for r in 0..m.rows() {
            b.insert(&m.row(r));
        }
        b
    }

    pub fn rank(&self) -> usize {
        self.vectors.len()
    }

    pub fn reduce(&self, v: &BitBlock) -> BitBlock {
        assert_eq!(v.len(), self.cols);
        let mut v = v.clone();
        for (pivot, b) in &self.vectors {
            if v.get(*pivot) {
                v.xor_assign(b);
            }
        }
        v
    }

    pub fn contains(&self, v: &BitBlock) -> bool {
        self.reduce(v).is_zero()
    }

    /// Adds `v` if it is independent of the basis; returns whether it was.
    pub fn insert(&mut self, v: &BitBlock) -> bool {
        let r = self.reduce(v);
        match r.first_one() {
            Some(p) => {
                self.vectors.push((p, r));
                true
            }
            None => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits(s: &str) -> BitBlock {
        BitBlock::from_bools(s.chars().map(|c| c == '1'))
    }

    // Bit-by-bit parity, kept apart from the word-level kernel.
    fn naive_matvec(m: &Gf2Matrix, v: &BitBlock) -> BitBlock {
        BitBlock::from_bools((0..m.rows()).map(|r| {
            (0..m.cols()).filter(|&c| m.get(r, c) && v.get(c)).count() % 2 == 1
        }))
    }

    #[test]
    fn matvec_examples() {
        let v = bits("101");
        assert_eq!(Gf2Matrix::identity(3).matvec(&v).unwrap(), v);
        assert!(Gf2Matrix::zeros(3, 3).matvec(&v).unwrap().is_zero());
        let m = Gf2Matrix::from_rows(&[[1, 1, 0], [0, 1, 1]]).unwrap();
        assert_eq!(m.matvec(&v).unwrap(), bits("11"));
        assert_eq!(naive_matvec(&m, &v), bits("11"));
        assert!(matches!(
            m.matvec(&bits("10")),
            Err(Gf2Error::DimensionMismatch { expected: 3, actual: 2 })
        ));
    }

    #[test]
    fn rank_examples() {
        assert_eq!(Gf2Matrix::identity(7).rank(), 7);
        let m = Gf2Matrix::from_rows(&[[1, 0, 1, 1], [1, 0, 1, 1]]).unwrap();
        assert_eq!(m.rank(), 1);
        assert_eq!(Gf2Matrix::zeros(3, 5).rank(), 0);
    }

    #[test]
    fn random_full_rank_examples() {
        let m = Gf2Matrix::random_full_rank(4, 4, 11).unwrap();
        assert_eq!(m.rank(), 4);
        assert_eq!(m, Gf2Matrix::random_full_rank(4, 4, 11).unwrap());
        assert!(matches!(
            Gf2Matrix::random_full_rank(5, 4, 0),
            Err(Gf2Error::InvalidDims { .. })
        ));
        for seed in 0..100 {
            assert_eq!(Gf2Matrix::random_full_rank(142, 160, seed).unwrap().rank(), 142);
        }
    }

    #[test]
    fn random_full_rank_is_nested_in_rows() {
        let big = Gf2Matrix::random_full_rank(150, 160, 5).unwrap();
        let small = Gf2Matrix::random_full_rank(120, 160, 5).unwrap();
        assert_eq!(big.row_range(0, 120), small);
    }

    #[test]
    fn null_space_examples() {
        assert!(Gf2Matrix::identity(5).null_space_basis().is_empty());
        assert_eq!(Gf2Matrix::zeros(1, 6).null_space_basis().len(), 6);
        let m = Gf2Matrix::from_rows(&[[1, 1]]).unwrap();
        assert_eq!(m.null_space_basis(), vec![bits("11")]);
    }

    #[test]
    fn solve_examples() {
        let m = Gf2Matrix::from_rows(&[[1, 1, 0, 1, 0], [0, 1, 1, 0, 0], [1, 0, 0, 0, 1]]).unwrap();
        let zero = BitBlock::zeros(3);
        let v = m.solve_particular(&zero).unwrap();
        assert!(m.matvec(&v).unwrap().is_zero());

        let s = bits("1101");
        assert_eq!(Gf2Matrix::identity(4).solve_particular(&s).unwrap(), s);

        let dup = Gf2Matrix::from_rows(&[[1, 1], [1, 1]]).unwrap();
        assert_eq!(dup.solve_particular(&bits("10")), Err(Gf2Error::NoSolution));
    }

    #[test]
    fn full_rank_3x5_solves_every_rhs() {
        for seed in 0..20 {
            let m = Gf2Matrix::random_full_rank(3, 5, seed).unwrap();
            for s in 0..8u64 {
                let s = BitBlock::from_u64(s, 3);
                let v = m.solve_particular(&s).unwrap();
                assert_eq!(naive_matvec(&m, &v), s);
            }
        }
    }

    #[test]
    fn hex_round_trip_and_msb_order() {
        let b = bits("1000000001");
        assert_eq!(b.to_hex(), "8040");
        assert_eq!(BitBlock::from_hex("8040", 10).unwrap(), b);
        assert!(BitBlock::from_hex("8041", 10).is_err());

        let m = Gf2Matrix::from_rows(&[[1, 0, 0], [0, 1, 1]]).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"rows":2,"cols":3,"data":["80","60"]}"#);
        let back: Gf2Matrix = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }

    fn arb_matrix() -> impl Strategy<Value = Gf2Matrix> {
        (1usize..12, 1usize..80, any::<u64>()).prop_map(|(r, c, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<BitBlock> = (0..r).map(|_| BitBlock::random(c, &mut rng)).collect();
            Gf2Matrix::from_row_blocks(&rows, c).unwrap()
        })
    }

    proptest! {
        #[test]
        fn matvec_is_linear(m in arb_matrix(), s1 in any::<u64>(), s2 in any::<u64>()) {
            let mut r1 = ChaCha8Rng::seed_from_u64(s1);
            let mut r2 = ChaCha8Rng::seed_from_u64(s2);
            let a = BitBlock::random(m.cols(), &mut r1);
            let b = BitBlock::random(m.cols(), &mut r2);
            let lhs = m.matvec(&a.xor(&b)).unwrap();
            let rhs = m.matvec(&a).unwrap().xor(&m.matvec(&b).unwrap());
            prop_assert_eq!(&lhs, &rhs);
            prop_assert_eq!(m.matvec(&a).unwrap(), naive_matvec(&m, &a));
        }

        #[test]
        fn kernel_basis_is_exact(m in arb_matrix()) {
            let basis = m.null_space_basis();
            prop_assert_eq!(basis.len(), m.cols() - m.rank());
            for v in &basis {
                prop_assert!(m.matvec(v).unwrap().is_zero());
            }
            let mut rb = RowBasis::new(m.cols());
            for v in &basis {
                prop_assert!(rb.insert(v));
            }
        }

        #[test]
        fn particular_solution_plus_kernel(m in arb_matrix(), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = BitBlock::random(m.cols(), &mut rng);
            let s = m.matvec(&x).unwrap();
            let v = m.solve_particular(&s).unwrap();
            prop_assert_eq!(&m.matvec(&v).unwrap(), &s);
            for k in m.null_space_basis() {
                prop_assert_eq!(&m.matvec(&v.xor(&k)).unwrap(), &s);
            }
        }

        #[test]
        fn row_basis_rank_matches_elimination(m in arb_matrix()) {
            prop_assert_eq!(RowBasis::from_matrix(&m).rank(), m.rank());
        }
    }
}
