//! Privacy amplification by a linear map complementary to the parity check.
//!
//! `A` (K x N, K = N - M) is chosen so that the stacked matrix `[H; A]` has
//! rank N. Then `x -> (H x, A x)` is a bijection of `{0,1}^N`, so for a
//! uniform block the key `A x` is uniform and independent of the syndrome.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gf2::{BitBlock, Gf2Error, Gf2Matrix, RowBasis};

pub const EXHAUSTIVE_MAX_BITS: usize = 24;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PrivacyError {
    #[error("parity-check matrix is not full row rank (rank {rank}, rows {rows}, cols {cols})")]
    NotFullRank { rank: usize, rows: usize, cols: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("instance too large for exhaustive verification: N={n} > {limit}")]
    OversizedInstance { n: usize, limit: usize },
    #[error(transparent)]
    Gf2(#[from] Gf2Error),
}

/// Amplification matrix together with the parity check it complements.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmplifierSpec {
    pub a: Gf2Matrix,
    pub h: Gf2Matrix,
}

impl AmplifierSpec {
    pub fn key_bits(&self) -> usize {
        self.a.rows()
    }

    pub fn n_bits(&self) -> usize {
        self.a.cols()
    }
}

/// Draws random rows, keeping each one that raises the rank of `[H; A]`,
/// until the stack reaches rank N.
pub fn make_privacy_matrix(h: &Gf2Matrix, seed: u64) -> Result<AmplifierSpec, PrivacyError> {
    let (m, n) = (h.rows(), h.cols());
    let rank = h.rank();
    if rank != m || m >= n {
        return Err(PrivacyError::NotFullRank { rank, rows: m, cols: n });
    }
    let mut basis = RowBasis::from_matrix(h);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n - m);
    while basis.rank() < n {
        let candidate = BitBlock::random(n, &mut rng);
        if basis.insert(&candidate) {
            rows.push(candidate);
        }
    }
    Ok(AmplifierSpec {
        a: Gf2Matrix::from_row_blocks(&rows, n)?,
        h: h.clone(),
    })
}

/// `key = A x`.
pub fn extract_key(spec: &AmplifierSpec, bits: &BitBlock) -> Result<BitBlock, PrivacyError> {
    spec.a.matvec(bits).map_err(|e| match e {
        Gf2Error::DimensionMismatch { expected, actual } => {
            PrivacyError::DimensionMismatch { expected, actual }
        }
        other => other.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SecrecyMode {
    /// Enumerate every input block (N <= 24).
    Exhaustive,
    /// Rank condition only; valid for any N.
    Structural,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecrecyReport {
    pub mode: SecrecyMode,
    pub n_bits: usize,
    pub syndrome_bits: usize,
    pub key_bits: usize,
    pub stacked_rank: usize,
    /// `K = N - rank(H)`.
    pub key_length_consistent: bool,
    pub key_marginal_uniform: Option<bool>,
    pub key_uniform_given_syndrome: Option<bool>,
    /// Empirical `I(key; z)` in bits under uniform inputs.
    pub mutual_information_bits: Option<f64>,
    pub passed: bool,
}

pub fn verify_secrecy(spec: &AmplifierSpec, mode: SecrecyMode) -> Result<SecrecyReport, PrivacyError> {
    let (m, n, k) = (spec.h.rows(), spec.h.cols(), spec.a.rows());
    if spec.a.cols() != n {
        return Err(PrivacyError::DimensionMismatch {
            expected: n,
            actual: spec.a.cols(),
        });
    }
    let stacked_rank = spec.h.vstack(&spec.a)?.rank();
    let key_length_consistent = k == n - spec.h.rank();
    let structural_ok = stacked_rank == n && key_length_consistent;

    let mut report = SecrecyReport {
        mode,
        n_bits: n,
        syndrome_bits: m,
        key_bits: k,
        stacked_rank,
        key_length_consistent,
        key_marginal_uniform: None,
        key_uniform_given_syndrome: None,
        mutual_information_bits: None,
        passed: structural_ok,
    };
    if mode == SecrecyMode::Structural {
        return Ok(report);
    }
    if n > EXHAUSTIVE_MAX_BITS {
        return Err(PrivacyError::OversizedInstance {
            n,
            limit: EXHAUSTIVE_MAX_BITS,
        });
    }

    let as_index = |b: &BitBlock| b.words().first().copied().unwrap_or(0) as usize;
    let (zs, ks) = (1usize << m, 1usize << k);
    let mut joint = vec![0u64; zs * ks];
    for x in 0..1u64 << n {
        let x = BitBlock::from_u64(x, n);
        let z = as_index(&spec.h.matvec(&x)?);
        let key = as_index(&spec.a.matvec(&x)?);
        joint[z * ks + key] += 1;
    }
    let total = (1u64 << n) as f64;
    let key_marg: Vec<u64> = (0..ks).map(|c| (0..zs).map(|z| joint[z * ks + c]).sum()).collect();
    let z_marg: Vec<u64> = (0..zs).map(|z| joint[z * ks..(z + 1) * ks].iter().sum()).collect();

    let marginal_uniform = key_marg.iter().all(|&c| c == key_marg[0]);
    let conditional_uniform = (0..zs).all(|z| {
        let row = &joint[z * ks..(z + 1) * ks];
        row.iter().all(|&c| c == row[0])
    });
    let mut mi = 0.0;
    for z in 0..zs {
        for c in 0..ks {
            let n_zc = joint[z * ks + c];
            if n_zc == 0 {
                continue;
            }
            let p = n_zc as f64 / total;
            let pz = z_marg[z] as f64 / total;
            let pk = key_marg[c] as f64 / total;
            mi += p * (p / (pz * pk)).log2();
        }
    }
    report.key_marginal_uniform = Some(marginal_uniform);
    report.key_uniform_given_syndrome = Some(conditional_uniform);
    report.mutual_information_bits = Some(mi);
    report.passed = structural_ok && marginal_uniform && conditional_uniform && mi.abs() < 1e-12;
    Ok(report)
}
