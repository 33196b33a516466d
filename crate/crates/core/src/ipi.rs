//! R-peak detection and inter-pulse interval (IPI) extraction.
//!
//! The detector follows the usual Pan-Tompkins chain, run offline with
//! zero-phase (centred) filters so peak positions need no delay correction:
//!
//! 1. band-pass ~5-15 Hz built from running-sum (moving average) filters,
//! 2. five-point derivative,
//! 3. squaring,
//! 4. 150 ms moving-window integration,
//! 5. adaptive signal/noise thresholds with a 200 ms refractory period and
//!    search-back over missed beats.
//!
//! Each detection is then moved to the band-passed maximum of its QRS.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::ecg_io::Signal;

#[derive(Debug, Error)]
pub enum IpiError {
    #[error("signal too short: {seconds:.2} s, need at least 2 s")]
    TooShort { seconds: f64 },
    #[error("fewer than two R peaks found")]
    NoPeaksFound,
    #[error("too few peaks to form an in-window IPI")]
    TooFewPeaks,
    #[error("peak indices must be strictly increasing")]
    UnsortedPeaks,
    #[error("sampling rate must be positive")]
    InvalidRate,
    #[error("no IPI pairs left after filtering")]
    EmptyAfterFiltering,
    #[error("paired sequences differ in length or are empty ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("bad IPI value on line {line}: {value:?}")]
    Parse { line: usize, value: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Accepted IPI range in ms (24-240 bpm).
pub const IPI_WINDOW_MS: (f64, f64) = (250.0, 2500.0);
pub const REFRACTORY_S: f64 = 0.200;
const INTEGRATION_S: f64 = 0.150;
const LEARNING_S: f64 = 2.0;
const SEARCH_BACK_FACTOR: f64 = 1.66;
const REFINE_S: f64 = 0.075;

/// Odd window length closest to `seconds * fs`, at least 1.
fn odd_window(seconds: f64, fs: f64) -> usize {
    let w = (seconds * fs).round().max(1.0) as usize;
    w | 1
}

/// Centred moving average; edges average over the samples available.
fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let n = x.len();
    let half = window / 2;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &v in x {
        acc += v;
        prefix.push(acc);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

fn band_pass(x: &[f64], fs: f64) -> Vec<f64> {
    let lp_w = odd_window(1.0 / 30.0, fs);
    let lp = moving_average(&moving_average(x, lp_w), lp_w);
    let baseline = moving_average(&lp, odd_window(1.0 / 5.0, fs));
    lp.iter().zip(&baseline).map(|(a, b)| a - b).collect()
}

/// Five-point derivative with the tap spacing scaled so it spans ~20 ms at any rate.
fn derivative(x: &[f64], fs: f64) -> Vec<f64> {
    let n = x.len() as isize;
    let k = (fs / 200.0).round().max(1.0) as isize;
    let at = |i: isize| x[i.clamp(0, n - 1) as usize];
    let scale = fs / (8.0 * k as f64);
    (0..n)
        .map(|i| (2.0 * at(i + 2 * k) + at(i + k) - at(i - k) - 2.0 * at(i - 2 * k)) * scale)
        .collect()
}

/// Filtered signals produced on the way to detection; exposed for diagnostics.
#[derive(Debug, Clone)]
pub struct DetectionTrace {
    pub band_passed: Vec<f64>,
    pub integrated: Vec<f64>,
    /// Detections on the integrated signal before refinement.
    pub coarse_peaks: Vec<usize>,
}

pub fn detect_r_peaks(signal: &Signal) -> Result<Vec<usize>, IpiError> {
    detect_r_peaks_traced(signal).map(|(p, _)| p)
}

pub fn detect_r_peaks_traced(signal: &Signal) -> Result<(Vec<usize>, DetectionTrace), IpiError> {
    let fs = signal.fs_hz;
    if !(fs > 0.0) {
        return Err(IpiError::InvalidRate);
    }
    if signal.duration_s() < LEARNING_S {
        return Err(IpiError::TooShort {
            seconds: signal.duration_s(),
        });
    }
    let bp = band_pass(&signal.values, fs);
    let squared: Vec<f64> = derivative(&bp, fs).into_iter().map(|d| d * d).collect();
    let integrated = moving_average(&squared, odd_window(INTEGRATION_S, fs));

    let coarse = classify(&integrated, fs);

    let refractory = (REFRACTORY_S * fs).ceil() as usize;
    let reach = (REFINE_S * fs).round() as usize;
    let mut peaks: Vec<usize> = Vec::with_capacity(coarse.len());
    for &c in &coarse {
        let lo = c.saturating_sub(reach);
        let hi = (c + reach + 1).min(bp.len());
        let best = (lo..hi).fold(lo, |b, i| if bp[i] > bp[b] { i } else { b });
        match peaks.last() {
            Some(&last) if best < last + refractory => {
                if bp[best] > bp[last] {
                    *peaks.last_mut().unwrap() = best;
                }
            }
            _ => peaks.push(best),
        }
    }
    if peaks.len() < 2 {
        return Err(IpiError::NoPeaksFound);
    }
    Ok((
        peaks,
        DetectionTrace {
            band_passed: bp,
            integrated,
            coarse_peaks: coarse,
        },
    ))
}

/// Adaptive dual-threshold classification of integrated-signal maxima.
fn classify(m: &[f64], fs: f64) -> Vec<usize> {
    let n = m.len();
    let candidates: Vec<usize> = (1..n.saturating_sub(1))
        .filter(|&i| m[i] > 0.0 && m[i] > m[i - 1] && m[i] >= m[i + 1])
        .collect();
    let learn = ((LEARNING_S * fs) as usize).min(n);
    let head = &m[..learn];
    let mut spki = 0.25 * head.iter().copied().fold(0.0, f64::max);
    let mut npki = 0.5 * head.iter().sum::<f64>() / learn as f64;
    let refractory = (REFRACTORY_S * fs).ceil() as usize;

    let mut qrs: Vec<usize> = Vec::new();
    let mut noise: Vec<usize> = Vec::new();
    let mut rr: Vec<usize> = Vec::new();

    let threshold = |spki: f64, npki: f64| npki + 0.25 * (spki - npki);

    for &i in &candidates {
        let v = m[i];
        if let Some(&last) = qrs.last() {
            if i < last + refractory {
                if v > m[last] {
                    *qrs.last_mut().unwrap() = i;
                }
                continue;
            }
            // Search back for a beat missed since the last detection.
            if rr.len() >= 2 {
                let avg = rr.iter().sum::<usize>() as f64 / rr.len() as f64;
                if (i - last) as f64 > SEARCH_BACK_FACTOR * avg {
                    let thr2 = 0.5 * threshold(spki, npki);
                    let missed = noise
                        .iter()
                        .copied()
                        .filter(|&j| j >= last + refractory && j + refractory <= i && m[j] > thr2)
                        .fold(None, |best: Option<usize>, j| match best {
                            Some(b) if m[b] >= m[j] => Some(b),
                            _ => Some(j),
                        });
                    if let Some(j) = missed {
                        spki = 0.25 * m[j] + 0.75 * spki;
                        push_rr(&mut rr, j - last);
                        qrs.push(j);
                        noise.clear();
                    }
                }
            }
        }
        let last = qrs.last().copied();
        if v > threshold(spki, npki) && last.is_none_or(|l| i >= l + refractory) {
            spki = 0.125 * v + 0.875 * spki;
            if let Some(l) = last {
                push_rr(&mut rr, i - l);
            }
            qrs.push(i);
            noise.clear();
        } else {
            npki = 0.125 * v + 0.875 * npki;
            noise.push(i);
        }
    }
    qrs
}

fn push_rr(rr: &mut Vec<usize>, v: usize) {
    rr.push(v);
    if rr.len() > 8 {
        rr.remove(0);
    }
}

/// IPIs of one sensor, in ms.
#[derive(Debug, Clone, PartialEq)]
pub struct IpiSequence {
    /// Retained R peaks (sample indices), strictly increasing.
    pub peak_indices: Vec<usize>,
    /// `ipis_ms[i]` spans `peak_indices[starts[i]]` to `peak_indices[starts[i] + 1]`.
    pub ipis_ms: Vec<f64>,
    pub starts: Vec<usize>,
    /// Mean IPI in seconds.
    pub mean_ipi_s: f64,
    pub fs_hz: f64,
    /// Intervals rejected by the physiological window.
    pub dropped: usize,
}

/// Converts peaks to IPIs, keeping only intervals inside [`IPI_WINDOW_MS`].
///
/// A too-short interval is treated as a spurious detection and its closing
/// peak is discarded; a too-long interval (missed beats) is skipped.
pub fn extract_ipis(peaks: &[usize], fs_hz: f64) -> Result<IpiSequence, IpiError> {
    if !(fs_hz > 0.0) {
        return Err(IpiError::InvalidRate);
    }
    if peaks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(IpiError::UnsortedPeaks);
    }
    if peaks.len() < 2 {
        return Err(IpiError::TooFewPeaks);
    }
    let ms = |a: usize, b: usize| (b - a) as f64 / fs_hz * 1000.0;
    let mut dropped = 0;
    let mut kept = vec![peaks[0]];
    for &p in &peaks[1..] {
        if ms(*kept.last().unwrap(), p) < IPI_WINDOW_MS.0 {
            dropped += 1;
        } else {
            kept.push(p);
        }
    }
    let mut ipis_ms = Vec::new();
    let mut starts = Vec::new();
    for (k, w) in kept.windows(2).enumerate() {
        let d = ms(w[0], w[1]);
        if d > IPI_WINDOW_MS.1 {
            dropped += 1;
        } else {
            ipis_ms.push(d);
            starts.push(k);
        }
    }
    if ipis_ms.is_empty() {
        return Err(IpiError::TooFewPeaks);
    }
    let mean_ipi_s = ipis_ms.iter().sum::<f64>() / ipis_ms.len() as f64 / 1000.0;
    Ok(IpiSequence {
        peak_indices: kept,
        ipis_ms,
        starts,
        mean_ipi_s,
        fs_hz,
        dropped,
    })
}

/// Index-aligned Alice/Bob IPI pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedIpis {
    pub x_ms: Vec<f64>,
    pub y_ms: Vec<f64>,
    /// Pairs removed by outlier rejection.
    pub rejected: usize,
}

impl PairedIpis {
    pub fn new(x_ms: Vec<f64>, y_ms: Vec<f64>) -> Result<Self, IpiError> {
        if x_ms.len() != y_ms.len() || x_ms.is_empty() {
            return Err(IpiError::LengthMismatch(x_ms.len(), y_ms.len()));
        }
        Ok(Self {
            x_ms,
            y_ms,
            rejected: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.x_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_ms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.x_ms.iter().copied().zip(self.y_ms.iter().copied())
    }
}

/// Pairs by index after truncating to the shorter sequence; optionally drops
/// pairs differing by more than `outlier_ms`.
pub fn pair_ipis(a: &[f64], b: &[f64], outlier_ms: Option<f64>) -> Result<PairedIpis, IpiError> {
    let n = a.len().min(b.len());
    if n == 0 {
        return Err(IpiError::EmptyAfterFiltering);
    }
    let mut x_ms = Vec::with_capacity(n);
    let mut y_ms = Vec::with_capacity(n);
    let mut rejected = 0;
    for (&x, &y) in a.iter().zip(b) {
        if outlier_ms.is_some_and(|lim| (x - y).abs() > lim) {
            rejected += 1;
            continue;
        }
        x_ms.push(x);
        y_ms.push(y);
    }
    if x_ms.is_empty() {
        return Err(IpiError::EmptyAfterFiltering);
    }
    Ok(PairedIpis { x_ms, y_ms, rejected })
}

/// One value per line, in ms.
pub fn write_ipis_csv(path: &Path, ipis_ms: &[f64]) -> Result<(), IpiError> {
    let mut out = String::with_capacity(ipis_ms.len() * 8);
    for v in ipis_ms {
        out.push_str(&v.to_string());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_ipis_csv(path: &Path) -> Result<Vec<f64>, IpiError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v > 0.0)
                .ok_or_else(|| IpiError::Parse {
                    line: i + 1,
                    value: l.to_owned(),
                })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecg_io::{select_lead, synthesize_ecg};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lead(beats: &[f64], fs: f64, noise: f64, seed: u64) -> Signal {
        select_lead(&synthesize_ecg(beats, fs, noise, 0.0, seed).unwrap(), "L1").unwrap()
    }

    fn irregular_beats(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = 0.6;
        (0..n)
            .map(|_| {
                let b = t;
                t += rng.random_range(0.6..1.1);
                b
            })
            .collect()
    }

    #[test]
    fn noiseless_detection_is_exact() {
        let beats: Vec<f64> = (1..=10).map(f64::from).collect();
        let peaks = detect_r_peaks(&lead(&beats, 1000.0, 0.0, 0)).unwrap();
        assert_eq!(peaks.len(), 10);
        for (p, t) in peaks.iter().zip(&beats) {
            assert!((*p as f64 - t * 1000.0).abs() <= 5.0);
        }
    }

    #[test]
    fn noiseless_ipis_reproduce_beat_gaps() {
        for (seed, fs) in [(1, 1000.0), (2, 360.0), (3, 250.0)] {
            let beats = irregular_beats(30, seed);
            let sig = lead(&beats, fs, 0.0, seed);
            let peaks = detect_r_peaks(&sig).unwrap();
            assert_eq!(peaks.len(), beats.len());
            let seq = extract_ipis(&peaks, fs).unwrap();
            for (ipi, w) in seq.ipis_ms.iter().zip(beats.windows(2)) {
                let truth = (w[1] - w[0]) * 1000.0;
                assert!((ipi - truth).abs() <= 2000.0 / fs, "fs {fs}: {ipi} vs {truth}");
            }
        }
    }

    #[test]
    fn noisy_detection_sensitivity() {
        let mut hits = 0;
        let mut total = 0;
        for seed in 0..100 {
            let beats = irregular_beats(20, seed);
            let sig = lead(&beats, 1000.0, 0.05, seed + 500);
            let peaks = detect_r_peaks(&sig).unwrap_or_default();
            for t in &beats {
                total += 1;
                let truth = t * 1000.0;
                if peaks.iter().any(|&p| (p as f64 - truth).abs() <= 10.0) {
                    hits += 1;
                }
            }
        }
        assert!(hits as f64 >= 0.95 * total as f64, "{hits}/{total}");
    }

    #[test]
    fn flat_signal_has_no_peaks() {
        let sig = Signal {
            values: vec![0.0; 5000],
            fs_hz: 1000.0,
            lead_name: "I".into(),
            subject_id: "s".into(),
        };
        assert!(matches!(detect_r_peaks(&sig), Err(IpiError::NoPeaksFound)));
        let short = Signal {
            values: vec![0.0; 1500],
            ..sig
        };
        assert!(matches!(detect_r_peaks(&short), Err(IpiError::TooShort { .. })));
    }

    #[test]
    fn detection_ignores_amplitude_scale() {
        let beats = irregular_beats(25, 7);
        let sig = lead(&beats, 500.0, 0.05, 8);
        let base = detect_r_peaks(&sig).unwrap();
        for c in [4.0, 0.37, 12.5] {
            let scaled = Signal {
                values: sig.values.iter().map(|v| v * c).collect(),
                ..sig.clone()
            };
            assert_eq!(detect_r_peaks(&scaled).unwrap(), base, "scale {c}");
        }
    }

    #[test]
    fn detections_respect_refractory_period() {
        let beats = irregular_beats(40, 11);
        let peaks = detect_r_peaks(&lead(&beats, 360.0, 0.1, 3)).unwrap();
        assert!(peaks.windows(2).all(|w| w[1] - w[0] >= (0.2f64 * 360.0).ceil() as usize));
    }

    #[test]
    fn extract_examples() {
        let s = extract_ipis(&[1000, 2000, 3000], 1000.0).unwrap();
        assert_eq!(s.ipis_ms, [1000.0, 1000.0]);
        assert_eq!(s.mean_ipi_s, 1.0);

        assert!(matches!(extract_ipis(&[0, 100], 1000.0), Err(IpiError::TooFewPeaks)));

        let s = extract_ipis(&[0, 750, 1500], 1000.0).unwrap();
        assert!((s.mean_ipi_s - 0.750).abs() < 1e-15);
        assert!(matches!(extract_ipis(&[5, 5], 1000.0), Err(IpiError::UnsortedPeaks)));
    }

    #[test]
    fn extract_drops_out_of_window_intervals() {
        // 100 ms spurious peak, then a 3 s gap.
        let s = extract_ipis(&[0, 800, 900, 1600, 4600, 5400], 1000.0).unwrap();
        assert_eq!(s.peak_indices, [0, 800, 1600, 4600, 5400]);
        assert_eq!(s.ipis_ms, [800.0, 800.0, 800.0]);
        assert_eq!(s.starts, [0, 1, 3]);
        assert_eq!(s.dropped, 2);
        for (ipi, &k) in s.ipis_ms.iter().zip(&s.starts) {
            let d = (s.peak_indices[k + 1] - s.peak_indices[k]) as f64 / 1000.0 * 1000.0;
            assert_eq!(*ipi, d);
        }
    }

    #[test]
    fn pairing_examples() {
        let p = pair_ipis(&[800.0, 810.0], &[805.0, 812.0, 900.0], None).unwrap();
        assert_eq!(p.x_ms, [800.0, 810.0]);
        assert_eq!(p.y_ms, [805.0, 812.0]);
        assert!(matches!(
            pair_ipis(&[800.0], &[1400.0], Some(100.0)),
            Err(IpiError::EmptyAfterFiltering)
        ));
        let same = [700.0, 900.0, 650.0];
        let p = pair_ipis(&same, &same, Some(1.0)).unwrap();
        assert!(p.iter().all(|(x, y)| x == y));
        assert_eq!(p.rejected, 0);
        let p = pair_ipis(&[800.0, 810.0, 700.0], &[805.0, 990.0, 701.0], Some(50.0)).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.rejected, 1);
    }

    #[test]
    fn ipi_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ipis.csv");
        let v = [812.0, 799.5, 1001.25];
        write_ipis_csv(&path, &v).unwrap();
        assert_eq!(read_ipis_csv(&path).unwrap(), v);
        fs::write(&path, "800\nabc\n").unwrap();
        assert!(matches!(read_ipis_csv(&path), Err(IpiError::Parse { line: 2, .. })));
    }
}
