//! Disagreement rates, key rate and mutual-information-rate bounds.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gf2::BitBlock;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
}

/// Clamp applied to squared correlation and coherence.
pub const SATURATION_EPS: f64 = 1e-12;
pub const MIN_BOUND_SAMPLES: usize = 8;

/// Fraction of differing bits across two equally shaped block streams.
pub fn disagreement_rate(a: &[BitBlock], b: &[BitBlock]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    let mut diff = 0usize;
    let mut total = 0usize;
    for (x, y) in a.iter().zip(b) {
        if x.len() != y.len() {
            return Err(MetricsError::LengthMismatch(x.len(), y.len()));
        }
        diff += x.hamming(y);
        total += x.len();
    }
    Ok(if total == 0 { 0.0 } else { diff as f64 / total as f64 })
}

/// Mean share of differing bits inside each `bits_per_symbol` group, in percent.
pub fn per_symbol_disagreement_pct(
    a: &[BitBlock],
    b: &[BitBlock],
    bits_per_symbol: usize,
) -> Result<f64, MetricsError> {
    if bits_per_symbol == 0 {
        return Err(MetricsError::InvalidParams("bits per symbol must be positive".into()));
    }
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    let mut sum = 0.0;
    let mut symbols = 0usize;
    for (x, y) in a.iter().zip(b) {
        if x.len() != y.len() {
            return Err(MetricsError::LengthMismatch(x.len(), y.len()));
        }
        if x.len() % bits_per_symbol != 0 {
            return Err(MetricsError::InvalidParams(format!(
                "block of {} bits is not a whole number of {bits_per_symbol}-bit symbols",
                x.len()
            )));
        }
        let d = x.xor(y);
        for s in 0..x.len() / bits_per_symbol {
            let ones = (0..bits_per_symbol).filter(|&k| d.get(s * bits_per_symbol + k)).count();
            sum += ones as f64 / bits_per_symbol as f64;
            symbols += 1;
        }
    }
    Ok(if symbols == 0 { 0.0 } else { 100.0 * sum / symbols as f64 })
}

/// `((n - m) / n) * b / t` bits per second.
pub fn key_rate(n: usize, m: usize, b: u32, t_s: f64) -> Result<f64, MetricsError> {
    if n == 0 || m > n || !(t_s > 0.0 && t_s.is_finite()) {
        return Err(MetricsError::InvalidParams(format!(
            "need 0 <= M <= N, N > 0, T > 0 (N={n}, M={m}, T={t_s})"
        )));
    }
    Ok((n - m) as f64 / n as f64 * f64::from(b) / t_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MirEstimator {
    /// Zero-lag correlation of the paired sequences.
    #[default]
    Correlation,
    /// Welch-averaged magnitude-squared coherence.
    Spectral,
}

impl std::str::FromStr for MirEstimator {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "correlation" => Ok(Self::Correlation),
            "spectral" => Ok(Self::Spectral),
            other => Err(format!("unknown estimator {other:?} (correlation|spectral)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub bits_per_s: f64,
    /// True when the clamp on rho^2 or coherence was hit.
    pub saturated: bool,
}

fn check_pair(x: &[f64], y: &[f64], needed: usize, t_s: f64) -> Result<(), MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < needed {
        return Err(MetricsError::TooShort { needed, got: x.len() });
    }
    if !(t_s > 0.0 && t_s.is_finite()) {
        return Err(MetricsError::InvalidParams(format!("T must be positive, got {t_s}")));
    }
    Ok(())
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Gaussian-equivalent mutual information rate, a lower bound on the true rate.
pub fn mir_lower_gaussian(
    x: &[f64],
    y: &[f64],
    t_s: f64,
    estimator: MirEstimator,
) -> Result<LowerBound, MetricsError> {
    check_pair(x, y, MIN_BOUND_SAMPLES, t_s)?;
    let clamp = |v: f64| {
        let cap = 1.0 - SATURATION_EPS;
        if v > cap { (cap, true) } else { (v.max(0.0), false) }
    };
    let (bits_per_symbol, saturated) = match estimator {
        MirEstimator::Correlation => {
            let r = pearson(x, y);
            let (r2, sat) = clamp(r * r);
            (-0.5 * (1.0 - r2).log2(), sat)
        }
        MirEstimator::Spectral => {
            let coh = coherence(x, y);
            let mut sat = false;
            let mean = coh
                .iter()
                .map(|&c| {
                    let (c, s) = clamp(c);
                    sat |= s;
                    (1.0 - c).log2()
                })
                .sum::<f64>()
                / coh.len() as f64;
            (-0.5 * mean, sat)
        }
    };
    Ok(LowerBound {
        bits_per_s: bits_per_symbol / t_s,
        saturated,
    })
}

/// Welch segment length: a power of two near `n / 4`, between 8 and 256.
fn welch_segment(n: usize) -> usize {
    let target = (n / 4).clamp(MIN_BOUND_SAMPLES, 256);
    let mut seg = MIN_BOUND_SAMPLES;
    while seg * 2 <= target {
        seg *= 2;
    }
    seg
}

/// Magnitude-squared coherence on bins `1..=seg/2` (Hann window, 50% overlap,
/// per-segment mean removal).
pub fn coherence(x: &[f64], y: &[f64]) -> Vec<f64> {
    let seg = welch_segment(x.len());
    let hop = seg / 2;
    let window: Vec<f64> = (0..seg)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / seg as f64).cos())
        .collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(seg);
    let bins = seg / 2;
    let mut sxx = vec![0.0; bins];
    let mut syy = vec![0.0; bins];
    let mut sxy = vec![Complex::new(0.0, 0.0); bins];
    let prepare = |s: &[f64]| {
        let m = s.iter().sum::<f64>() / s.len() as f64;
        s.iter()
            .zip(&window)
            .map(|(v, w)| Complex::new((v - m) * w, 0.0))
            .collect::<Vec<_>>()
    };
    let mut start = 0;
    while start + seg <= x.len() {
        let mut fx = prepare(&x[start..start + seg]);
        let mut fy = prepare(&y[start..start + seg]);
        fft.process(&mut fx);
        fft.process(&mut fy);
        for k in 0..bins {
            let (a, b) = (fx[k + 1], fy[k + 1]);
            sxx[k] += a.norm_sqr();
            syy[k] += b.norm_sqr();
            sxy[k] += a * b.conj();
        }
        start += hop;
    }
    (0..bins)
        .map(|k| {
            let den = sxx[k] * syy[k];
            if den > 0.0 { (sxy[k].norm_sqr() / den).min(1.0) } else { 0.0 }
        })
        .collect()
}

/// Equal-frequency bin of each value; tied values share the bin of their lowest rank.
fn rank_bins(v: &[f64], bins: usize) -> Vec<usize> {
    let n = v.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0; n];
    let mut first = 0;
    for r in 0..n {
        if r > 0 && v[order[r]] != v[order[r - 1]] {
            first = r;
        }
        out[order[r]] = first * bins / n;
    }
    out
}

/// Plug-in single-symbol mutual information on an equal-frequency grid, with
/// Miller-Madow correction, as bits per second. An upper bound on the rate.
pub fn mi_upper_single_symbol(x: &[f64], y: &[f64], bins: usize, t_s: f64) -> Result<f64, MetricsError> {
    if bins < 2 {
        return Err(MetricsError::InvalidParams(format!("need at least 2 bins, got {bins}")));
    }
    check_pair(x, y, bins.max(MIN_BOUND_SAMPLES), t_s)?;
    let n = x.len();
    let bx = rank_bins(x, bins);
    let by = rank_bins(y, bins);
    let mut joint = vec![0usize; bins * bins];
    let mut mx = vec![0usize; bins];
    let mut my = vec![0usize; bins];
    for (&i, &j) in bx.iter().zip(&by) {
        joint[i * bins + j] += 1;
        mx[i] += 1;
        my[j] += 1;
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let c = joint[i * bins + j];
            if c > 0 {
                let c = c as f64;
                mi += c / nf * (c * nf / (mx[i] as f64 * my[j] as f64)).log2();
            }
        }
    }
    let nonzero = |v: &[usize]| v.iter().filter(|&&c| c > 0).count() as f64;
    let correction =
        (nonzero(&joint) - nonzero(&mx) - nonzero(&my) + 1.0) / (2.0 * nf * std::f64::consts::LN_2);
    Ok(((mi - correction) / t_s).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityBounds {
    pub lower_bps: f64,
    pub upper_bps: f64,
    pub lower_saturated: bool,
    /// Sampling noise put the lower estimate above the upper one. Never swapped.
    pub crossed: bool,
}

pub fn secret_key_capacity_bounds(
    x: &[f64],
    y: &[f64],
    t_s: f64,
    bins: usize,
    estimator: MirEstimator,
) -> Result<CapacityBounds, MetricsError> {
    let lower = mir_lower_gaussian(x, y, t_s, estimator)?;
    let upper = mi_upper_single_symbol(x, y, bins, t_s)?;
    Ok(CapacityBounds {
        lower_bps: lower.bits_per_s,
        upper_bps: upper,
        lower_saturated: lower.saturated,
        crossed: lower.bits_per_s > upper,
    })
}

/// Outcome of one key-agreement session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub pair_id: (String, String),
    /// Bit disagreement of the raw observations (ADC codes or unquantized IPIs).
    pub raw_disagreement_pct: f64,
    /// Alice vs Bob quantized bits.
    pub pre_reconciliation_pct: f64,
    /// Alice vs Bob's decoded estimate.
    pub post_reconciliation_pct: f64,
    /// Alice vs Eve's best coset estimate from the syndromes alone.
    pub eve_disagreement_pct: f64,
    /// Alice's key vs Eve's key.
    pub eve_key_disagreement_pct: f64,
    /// Bob's MAP guess of Alice's symbols without syndromes.
    pub bob_no_syndrome_pct: f64,
    /// Share of blocks where Bob's result differs from Alice's block.
    pub decode_failure_rate: f64,
    pub blocks: usize,
    /// Blocks where Bob ends up without Alice's bits, for either reason below.
    pub block_errors: usize,
    /// Blocks the decoder gave up on; Bob knows and drops them.
    pub detected_failures: usize,
    /// Blocks decoded to a wrong coset member; they stay in the key.
    pub undetected_errors: usize,
    pub symbols: usize,
    pub mean_ipi_s: f64,
    pub key_rate_bps: f64,
    pub mir_lower_bps: f64,
    pub mir_upper_bps: f64,
    pub mir_lower_saturated: bool,
    pub bounds_crossed: bool,
    pub quantizer_objective_bits: f64,
    pub key_bits: usize,
    pub keys_match: bool,
    pub key_hex: String,
}

impl SessionReport {
    /// Checks the range invariants; the bound ordering is reported by `bounds_crossed`.
    pub fn check(&self) -> Result<(), MetricsError> {
        let pct = [
            self.raw_disagreement_pct,
            self.pre_reconciliation_pct,
            self.post_reconciliation_pct,
            self.eve_disagreement_pct,
            self.eve_key_disagreement_pct,
            self.bob_no_syndrome_pct,
        ];
        if pct.iter().any(|p| !(0.0..=100.0).contains(p)) {
            return Err(MetricsError::InvalidParams("percentage outside [0, 100]".into()));
        }
        if self.block_errors != self.detected_failures + self.undetected_errors
            || self.block_errors > self.blocks
        {
            return Err(MetricsError::InvalidParams("block error counts inconsistent".into()));
        }
        if !(0.0..=1.0).contains(&self.decode_failure_rate) || self.key_rate_bps < 0.0 {
            return Err(MetricsError::InvalidParams("rate out of range".into()));
        }
        if self.bounds_crossed != (self.mir_lower_bps > self.mir_upper_bps) {
            return Err(MetricsError::InvalidParams("bounds_crossed flag inconsistent".into()));
        }
        Ok(())
    }
}
