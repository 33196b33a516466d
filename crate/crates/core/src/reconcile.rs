//! Syndrome-based information reconciliation.
//!
//! Alice publishes `z = H x` for each block. Bob looks for the member of the
//! coset `W = {w : H w = z}` closest to his own block `y`; writing `w = y ^ e`
//! this is the minimum-weight solution of `H e = z ^ H y`.
//!
//! Ties between equally distant coset members are broken towards the error
//! pattern whose sorted support is lexicographically smallest. Every decoder
//! in this module applies that rule, so they agree bit for bit.

use rustc_hash::FxHashMap as HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gf2::{BitBlock, Gf2Error, Gf2Matrix};

/// Largest block length accepted by [`exhaustive_decode`].
pub const EXHAUSTIVE_MAX_BITS: usize = 24;

/// Default cap on the kernel dimension for full coset enumeration.
pub const DEFAULT_COSET_LIMIT_BITS: usize = 24;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReconcileError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("no coset member within the decoder's search budget")]
    DecodeFailure,
    #[error("instance too large for enumeration: {bits} bits exceeds limit {limit}")]
    OversizedInstance { bits: usize, limit: usize },
    #[error("invalid code configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Gf2(#[from] Gf2Error),
}

fn map_dims(e: Gf2Error) -> ReconcileError {
    match e {
        Gf2Error::DimensionMismatch { expected, actual } => {
            ReconcileError::DimensionMismatch { expected, actual }
        }
        Gf2Error::NoSolution => ReconcileError::DecodeFailure,
        other => ReconcileError::Gf2(other),
    }
}

/// Block code parameters shared by Alice and Bob.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeConfig {
    /// Block length N.
    pub n_bits: usize,
    /// Syndrome length M.
    pub syndrome_bits: usize,
    pub seed: u64,
    /// Largest error weight tried by the bounded decoder.
    pub w_max: usize,
}

impl Default for CodeConfig {
    fn default() -> Self {
        Self {
            n_bits: 160,
            syndrome_bits: 142,
            seed: 0,
            w_max: 4,
        }
    }
}

impl CodeConfig {
    pub fn validate(&self, bits_per_symbol: usize) -> Result<(), ReconcileError> {
        if self.syndrome_bits == 0 || self.syndrome_bits >= self.n_bits {
            return Err(ReconcileError::InvalidConfig(format!(
                "need 0 < M < N, got M={} N={}",
                self.syndrome_bits, self.n_bits
            )));
        }
        if bits_per_symbol == 0 || self.n_bits % bits_per_symbol != 0 {
            return Err(ReconcileError::InvalidConfig(format!(
                "N={} is not a whole number of {bits_per_symbol}-bit symbols",
                self.n_bits
            )));
        }
        if self.w_max == 0 {
            return Err(ReconcileError::InvalidConfig("w_max must be at least 1".into()));
        }
        Ok(())
    }

    /// Key bits per block, `K = N - M`.
    pub fn key_bits(&self) -> usize {
        self.n_bits - self.syndrome_bits
    }

    pub fn parity_check(&self) -> Result<Gf2Matrix, ReconcileError> {
        Ok(Gf2Matrix::random_full_rank(
            self.syndrome_bits,
            self.n_bits,
            self.seed,
        )?)
    }
}

/// How Bob searches the coset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    /// Error patterns of weight `0..=w_max` only.
    Bounded,
    /// Full coset enumeration; exact nearest member.
    Nearest,
    /// `Nearest` when the kernel dimension is within the coset limit, else `Bounded`.
    #[default]
    Auto,
}

impl std::str::FromStr for DecoderKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bounded" => Ok(Self::Bounded),
            "nearest" => Ok(Self::Nearest),
            "auto" => Ok(Self::Auto),
            other => Err(format!("unknown decoder {other:?} (bounded|nearest|auto)")),
        }
    }
}

/// `z = H x`.
pub fn syndrome(h: &Gf2Matrix, x_bits: &BitBlock) -> Result<BitBlock, ReconcileError> {
    h.matvec(x_bits).map_err(map_dims)
}

/// Returns `true` when `a` beats `b` under the tie-break rule, assuming equal weight:
/// at the lowest position where they differ, the winner has the set bit.
fn support_precedes(a: &BitBlock, b: &BitBlock) -> bool {
    match a.xor(b).first_one() {
        Some(i) => a.get(i),
        None => false,
    }
}

fn popcount(w: &[u64]) -> u32 {
    w.iter().map(|x| x.count_ones()).sum()
}

/// Word-level [`support_precedes`].
fn words_precede(a: &[u64], b: &[u64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        let d = x ^ y;
        if d != 0 {
            return x & (d & d.wrapping_neg()) != 0;
        }
    }
    false
}

/// Gray-code walk over `start ^ span(kernel)`, returning the member of least
/// weight (ties: [`words_precede`]). `kernel` holds `k` rows of `start.len()` words.
fn walk(mut v: Vec<u64>, kernel: &[u64], k: usize) -> Vec<u64> {
    let stride = v.len();
    let mut best = v.clone();
    let mut best_d = popcount(&v);
    for step in 1u64..(1u64 << k) {
        let j = step.trailing_zeros() as usize;
        let row = &kernel[j * stride..(j + 1) * stride];
        let mut d = 0;
        for (a, b) in v.iter_mut().zip(row) {
            *a ^= b;
            d += a.count_ones();
        }
        if d < best_d || (d == best_d && words_precede(&v, &best)) {
            best_d = d;
            best.copy_from_slice(&v);
        }
    }
    best
}

/// [`walk`] with the word count fixed at compile time. The low kernel rows are
/// expanded into a table of all their combinations, so the inner loop has no
/// carried dependency. The result does not depend on visiting order because
/// (weight, [`words_precede`]) is a strict total order.
fn walk_fixed<const S: usize>(start: &[u64], kernel: &[u64], k: usize) -> Vec<u64> {
    let rows: Vec<[u64; S]> = kernel
        .chunks_exact(S)
        .map(|c| c.try_into().expect("chunk of S words"))
        .collect();
    let low = k.min(8);
    let mut table = vec![[0u64; S]; 1 << low];
    for g in 1..table.len() {
        let j = g.trailing_zeros() as usize;
        let prev = table[g & (g - 1)];
        for i in 0..S {
            table[g][i] = prev[i] ^ rows[j][i];
        }
    }
    let mut outer: [u64; S] = start.try_into().expect("S words");
    let mut best = outer;
    let mut best_d = popcount(&outer);
    for step in 0u64..(1u64 << (k - low)) {
        if step > 0 {
            let row = &rows[low + step.trailing_zeros() as usize];
            for i in 0..S {
                outer[i] ^= row[i];
            }
        }
        for t in &table {
            let mut d = 0;
            let mut v = [0u64; S];
            for i in 0..S {
                v[i] = outer[i] ^ t[i];
                d += v[i].count_ones();
            }
            if d <= best_d && (d < best_d || words_precede(&v, &best)) {
                best_d = d;
                best = v;
            }
        }
    }
    best.to_vec()
}

/// Precomputed tables for decoding many blocks against one parity-check matrix.
#[derive(Debug, Clone)]
pub struct SyndromeDecoder {
    h: Gf2Matrix,
    columns: Vec<BitBlock>,
    // column value -> ascending positions carrying it
    column_index: HashMap<Vec<u64>, Vec<usize>>,
    kernel: Vec<BitBlock>,
    // kernel rows packed back to back for the coset walk
    kernel_words: Vec<u64>,
}

impl SyndromeDecoder {
    pub fn new(h: &Gf2Matrix) -> Self {
        let columns = h.columns();
        let mut column_index: HashMap<Vec<u64>, Vec<usize>> = HashMap::default();
        for (i, c) in columns.iter().enumerate() {
            column_index.entry(c.words().to_vec()).or_default().push(i);
        }
        let kernel = h.null_space_basis();
        let kernel_words = kernel.iter().flat_map(|k| k.words().iter().copied()).collect();
        Self {
            h: h.clone(),
            columns,
            column_index,
            kernel,
            kernel_words,
        }
    }

    pub fn parity_check(&self) -> &Gf2Matrix {
        &self.h
    }

    pub fn n_bits(&self) -> usize {
        self.h.cols()
    }

    pub fn syndrome_bits(&self) -> usize {
        self.h.rows()
    }

    /// Dimension of the code, i.e. log2 of every coset's size.
    pub fn kernel_dim(&self) -> usize {
        self.kernel.len()
    }

    fn check(&self, z: &BitBlock, y: &BitBlock) -> Result<(), ReconcileError> {
        if z.len() != self.h.rows() {
            return Err(ReconcileError::DimensionMismatch {
                expected: self.h.rows(),
                actual: z.len(),
            });
        }
        if y.len() != self.h.cols() {
            return Err(ReconcileError::DimensionMismatch {
                expected: self.h.cols(),
                actual: y.len(),
            });
        }
        Ok(())
    }

    /// Minimum-weight `e` with `H e = target` and `|e| <= w_max`.
    fn min_error_pattern(&self, target: &BitBlock, w_max: usize) -> Option<BitBlock> {
        let n = self.h.cols();
        if target.is_zero() {
            return Some(BitBlock::zeros(n));
        }
        let stride = target.words().len();
        let mut prefix = Vec::with_capacity(w_max);
        // One accumulator per search depth, reused across the whole search.
        let mut scratch = vec![0u64; stride * w_max.max(1)];
        for w in 1..=w_max.min(n) {
            scratch[..stride].copy_from_slice(target.words());
            if self.search(&mut scratch, stride, 0, 0, w, &mut prefix) {
                let mut e = BitBlock::zeros(n);
                for &i in &prefix {
                    e.set(i, true);
                }
                return Some(e);
            }
        }
        None
    }

    // Depth-first over ascending index tuples; the last index comes from the
    // column table, taking the smallest admissible position.
    fn search(
        &self,
        scratch: &mut [u64],
        stride: usize,
        depth: usize,
        start: usize,
        remaining: usize,
        prefix: &mut Vec<usize>,
    ) -> bool {
        let n = self.h.cols();
        let here = depth * stride;
        if remaining == 1 {
            if let Some(pos) = self.column_index.get(&scratch[here..here + stride]) {
                let k = pos.partition_point(|&p| p < start);
                if let Some(&p) = pos.get(k) {
                    prefix.push(p);
                    return true;
                }
            }
            return false;
        }
        for i in start..n.saturating_sub(remaining - 1) {
            let (done, next) = scratch.split_at_mut(here + stride);
            let col = self.columns[i].words();
            for ((dst, a), c) in next[..stride].iter_mut().zip(&done[here..]).zip(col) {
                *dst = a ^ c;
            }
            prefix.push(i);
            if self.search(scratch, stride, depth + 1, i + 1, remaining - 1, prefix) {
                return true;
            }
            prefix.pop();
        }
        false
    }

    /// Bounded-distance decoding: nearest coset member within `w_max` of `y`.
    pub fn decode_bounded(
        &self,
        z: &BitBlock,
        y: &BitBlock,
        w_max: usize,
    ) -> Result<BitBlock, ReconcileError> {
        self.check(z, y)?;
        let target = z.xor(&self.h.matvec(y)?);
        let e = self
            .min_error_pattern(&target, w_max)
            .ok_or(ReconcileError::DecodeFailure)?;
        Ok(y.xor(&e))
    }

    /// Exact nearest coset member by walking the whole coset in Gray-code order.
    pub fn decode_nearest(
        &self,
        z: &BitBlock,
        y: &BitBlock,
        limit_bits: usize,
    ) -> Result<BitBlock, ReconcileError> {
        self.check(z, y)?;
        let k = self.kernel.len();
        if k > limit_bits {
            return Err(ReconcileError::OversizedInstance {
                bits: k,
                limit: limit_bits,
            });
        }
        let p = self.h.solve_particular(z).map_err(map_dims)?;
        // Walk the difference v = w ^ y; only its weight and support matter.
        let v: Vec<u64> = p.words().iter().zip(y.words()).map(|(a, b)| a ^ b).collect();
        let best = match v.len() {
            1 => walk_fixed::<1>(&v, &self.kernel_words, k),
            2 => walk_fixed::<2>(&v, &self.kernel_words, k),
            3 => walk_fixed::<3>(&v, &self.kernel_words, k),
            4 => walk_fixed::<4>(&v, &self.kernel_words, k),
            _ => walk(v, &self.kernel_words, k),
        };
        let diff = BitBlock::from_words(y.len(), best)?;
        Ok(y.xor(&diff))
    }

    pub fn decode(
        &self,
        z: &BitBlock,
        y: &BitBlock,
        kind: DecoderKind,
        w_max: usize,
        limit_bits: usize,
    ) -> Result<BitBlock, ReconcileError> {
        match kind {
            DecoderKind::Bounded => self.decode_bounded(z, y, w_max),
            DecoderKind::Nearest => self.decode_nearest(z, y, limit_bits),
            DecoderKind::Auto if self.kernel.len() <= limit_bits => {
                self.decode_nearest(z, y, limit_bits)
            }
            DecoderKind::Auto => self.decode_bounded(z, y, w_max),
        }
    }

    /// Eve's guess from the syndrome alone: the minimum-weight coset member.
    ///
    /// Exact when the coset fits the enumeration limit. Otherwise a bounded
    /// search for a low-weight leader, falling back to a greedy descent from
    /// the particular solution over the kernel basis.
    pub fn coset_leader(
        &self,
        z: &BitBlock,
        w_max: usize,
        limit_bits: usize,
    ) -> Result<BitBlock, ReconcileError> {
        let zero = BitBlock::zeros(self.h.cols());
        if self.kernel.len() <= limit_bits {
            return self.decode_nearest(z, &zero, limit_bits);
        }
        self.check(z, &zero)?;
        if let Some(e) = self.min_error_pattern(z, w_max) {
            return Ok(e);
        }
        let mut w = self.h.solve_particular(z).map_err(map_dims)?;
        loop {
            let current = w.weight();
            let better = self
                .kernel
                .iter()
                .map(|k| w.xor(k))
                .filter(|c| c.weight() < current)
                .min_by(|a, b| {
                    a.weight().cmp(&b.weight()).then_with(|| {
                        if support_precedes(a, b) {
                            std::cmp::Ordering::Less
                        } else {
                            std::cmp::Ordering::Greater
                        }
                    })
                });
            match better {
                Some(c) => w = c,
                None => return Ok(w),
            }
        }
    }
}

/// Bounded-distance syndrome decoding by increasing error weight.
///
/// Returns `y ^ e` for the minimum-weight `e` with `H e = z ^ H y` and
/// `|e| <= w_max`, or [`ReconcileError::DecodeFailure`] if there is none.
pub fn decode(
    h: &Gf2Matrix,
    z: &BitBlock,
    y_bits: &BitBlock,
    w_max: usize,
) -> Result<BitBlock, ReconcileError> {
    SyndromeDecoder::new(h).decode_bounded(z, y_bits, w_max)
}

/// Literal minimum-distance decoding over the full coset (particular solution
/// plus every kernel combination). Intended as a reference for small codes.
pub fn exhaustive_decode(
    h: &Gf2Matrix,
    z: &BitBlock,
    y_bits: &BitBlock,
) -> Result<BitBlock, ReconcileError> {
    let n = h.cols();
    if n > EXHAUSTIVE_MAX_BITS {
        return Err(ReconcileError::OversizedInstance {
            bits: n,
            limit: EXHAUSTIVE_MAX_BITS,
        });
    }
    if y_bits.len() != n {
        return Err(ReconcileError::DimensionMismatch {
            expected: n,
            actual: y_bits.len(),
        });
    }
    let coset = coset_members(h, z)?;
    let mut best: Option<(usize, BitBlock)> = None;
    for w in coset {
        let e = w.xor(y_bits);
        let d = e.weight();
        let replace = match &best {
            None => true,
            Some((bd, bw)) => d < *bd || (d == *bd && support_precedes(&e, &bw.xor(y_bits))),
        };
        if replace {
            best = Some((d, w));
        }
    }
    Ok(best.expect("coset is never empty").1)
}

/// All `w` with `H w = z`, in binary-counter order over the kernel basis.
pub fn coset_members(h: &Gf2Matrix, z: &BitBlock) -> Result<Vec<BitBlock>, ReconcileError> {
    let p = h.solve_particular(z).map_err(map_dims)?;
    let basis = h.null_space_basis();
    if basis.len() > EXHAUSTIVE_MAX_BITS {
        return Err(ReconcileError::OversizedInstance {
            bits: basis.len(),
            limit: EXHAUSTIVE_MAX_BITS,
        });
    }
    Ok((0u64..1 << basis.len())
        .map(|mask| {
            let mut w = p.clone();
            for (i, b) in basis.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    w.xor_assign(b);
                }
            }
            w
        })
        .collect())
}

/// Eve's decoding rule: the minimum-weight member of the coset named by `z`.
pub fn eve_decode(h: &Gf2Matrix, z: &BitBlock, w_max: usize) -> Result<BitBlock, ReconcileError> {
    SyndromeDecoder::new(h).coset_leader(z, w_max, DEFAULT_COSET_LIMIT_BITS)
}
