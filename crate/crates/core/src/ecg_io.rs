//! Multi-lead ECG records: CSV + JSON sidecar loading, lead selection and a
//! synthetic generator with known beat times.
//!
//! CSV layout: a header row of lead names, then one row per sample with one
//! value per lead in mV. The sidecar carries `fs_hz`, `resolution_bits`,
//! `gain_mv` (full-scale range in mV) and `subject_id`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EcgIoError {
    #[error("missing or invalid metadata field `{0}`")]
    MissingMetadata(&'static str),
    #[error("malformed sample at row {row}, lead {lead}: {value:?}")]
    MalformedSample { row: usize, lead: usize, value: String },
    #[error("row {row} has {found} values, expected {expected}")]
    RaggedRows { row: usize, found: usize, expected: usize },
    #[error("duplicate lead name `{0}`")]
    DuplicateLead(String),
    #[error("unknown lead `{0}`")]
    UnknownLead(String),
    #[error("record needs at least 2 samples per lead, found {0}")]
    TooFewSamples(usize),
    #[error("invalid beat times: {0}")]
    InvalidBeatTimes(String),
    #[error("invalid synthesis parameter: {0}")]
    InvalidParameter(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("sidecar JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Sidecar metadata, exactly as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub fs_hz: f64,
    pub resolution_bits: u32,
    pub gain_mv: f64,
    pub subject_id: String,
}

#[derive(Deserialize)]
struct RawMeta {
    fs_hz: Option<f64>,
    resolution_bits: Option<u32>,
    gain_mv: Option<f64>,
    subject_id: Option<String>,
}

/// A validated multi-lead recording. Samples are in mV, one column per lead.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    subject_id: String,
    lead_names: Vec<String>,
    fs_hz: f64,
    gain_mv: f64,
    resolution_bits: u32,
    samples: Vec<Vec<f64>>,
}

impl EcgRecord {
    pub fn new(
        meta: RecordMeta,
        lead_names: Vec<String>,
        samples: Vec<Vec<f64>>,
    ) -> Result<Self, EcgIoError> {
        if !(meta.fs_hz.is_finite() && meta.fs_hz > 0.0) {
            return Err(EcgIoError::MissingMetadata("fs_hz"));
        }
        if meta.resolution_bits == 0 {
            return Err(EcgIoError::MissingMetadata("resolution_bits"));
        }
        let mut seen = HashSet::new();
        for name in &lead_names {
            if !seen.insert(name.as_str()) {
                return Err(EcgIoError::DuplicateLead(name.clone()));
            }
        }
        if samples.len() != lead_names.len() {
            return Err(EcgIoError::RaggedRows {
                row: 0,
                found: samples.len(),
                expected: lead_names.len(),
            });
        }
        let len = samples.first().map_or(0, Vec::len);
        for (lead, col) in samples.iter().enumerate() {
            if col.len() != len {
                return Err(EcgIoError::RaggedRows {
                    row: col.len().min(len) + 1,
                    found: col.len(),
                    expected: len,
                });
            }
            if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                return Err(EcgIoError::MalformedSample {
                    row: row + 1,
                    lead,
                    value: col[row].to_string(),
                });
            }
        }
        if len < 2 {
            return Err(EcgIoError::TooFewSamples(len));
        }
        Ok(Self {
            subject_id: meta.subject_id,
            lead_names,
            fs_hz: meta.fs_hz,
            gain_mv: meta.gain_mv,
            resolution_bits: meta.resolution_bits,
            samples,
        })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn lead_names(&self) -> &[String] {
        &self.lead_names
    }

    pub fn fs_hz(&self) -> f64 {
        self.fs_hz
    }

    pub fn gain_mv(&self) -> f64 {
        self.gain_mv
    }

    pub fn resolution_bits(&self) -> u32 {
        self.resolution_bits
    }

    pub fn len(&self) -> usize {
        self.samples[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lead(&self, index: usize) -> &[f64] {
        &self.samples[index]
    }

    pub fn meta(&self) -> RecordMeta {
        RecordMeta {
            fs_hz: self.fs_hz,
            resolution_bits: self.resolution_bits,
            gain_mv: self.gain_mv,
            subject_id: self.subject_id.clone(),
        }
    }

    /// Maps a value in mV to an offset-binary ADC code spanning `gain_mv`
    /// symmetrically around zero, saturating at the rails.
    pub fn adc_code(&self, mv: f64) -> u32 {
        let levels = (1u64 << self.resolution_bits) as f64;
        let half = self.gain_mv / 2.0;
        let code = ((mv + half) / self.gain_mv * levels).floor();
        code.clamp(0.0, levels - 1.0) as u32
    }
}

/// A single lead ready for peak detection.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub values: Vec<f64>,
    pub fs_hz: f64,
    pub lead_name: String,
    pub subject_id: String,
}

impl Signal {
    pub fn duration_s(&self) -> f64 {
        self.values.len() as f64 / self.fs_hz
    }
}

pub fn load_record(path: &Path, meta_path: &Path) -> Result<EcgRecord, EcgIoError> {
    let raw: RawMeta = serde_json::from_reader(BufReader::new(File::open(meta_path)?))?;
    let fs_hz = raw
        .fs_hz
        .filter(|f| f.is_finite() && *f > 0.0)
        .ok_or(EcgIoError::MissingMetadata("fs_hz"))?;
    let meta = RecordMeta {
        fs_hz,
        resolution_bits: raw
            .resolution_bits
            .ok_or(EcgIoError::MissingMetadata("resolution_bits"))?,
        gain_mv: raw.gain_mv.ok_or(EcgIoError::MissingMetadata("gain_mv"))?,
        subject_id: raw.subject_id.ok_or(EcgIoError::MissingMetadata("subject_id"))?,
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let lead_names: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let mut samples = vec![Vec::new(); lead_names.len()];
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        if rec.len() != lead_names.len() {
            return Err(EcgIoError::RaggedRows {
                row,
                found: rec.len(),
                expected: lead_names.len(),
            });
        }
        for (lead, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| EcgIoError::MalformedSample {
                row,
                lead,
                value: field.to_owned(),
            })?;
            if !v.is_finite() {
                return Err(EcgIoError::MalformedSample {
                    row,
                    lead,
                    value: field.to_owned(),
                });
            }
            samples[lead].push(v);
        }
    }
    EcgRecord::new(meta, lead_names, samples)
}

/// Writes a record in the same CSV + sidecar layout [`load_record`] reads.
/// Values use Rust's shortest round-trip float formatting.
pub fn write_record(record: &EcgRecord, path: &Path, meta_path: &Path) -> Result<(), EcgIoError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(record.lead_names())?;
    for i in 0..record.len() {
        w.write_record(record.samples.iter().map(|col| col[i].to_string()))?;
    }
    w.flush()?;
    let mut f = File::create(meta_path)?;
    serde_json::to_writer_pretty(&mut f, &record.meta())?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn select_lead(record: &EcgRecord, name: &str) -> Result<Signal, EcgIoError> {
    let idx = record
        .lead_names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| EcgIoError::UnknownLead(name.to_owned()))?;
    Ok(Signal {
        values: record.samples[idx].clone(),
        fs_hz: record.fs_hz,
        lead_name: name.to_owned(),
        subject_id: record.subject_id.clone(),
    })
}

/// Standard deviation of the synthetic R-wave pulse, giving a ~20 ms FWHM.
const PULSE_SIGMA_S: f64 = 0.0085;
const MIN_BEAT_GAP_S: f64 = 0.25;

/// Two-lead synthetic ECG; see [`synthesize_ecg_leads`].
pub fn synthesize_ecg(
    beat_times_s: &[f64],
    fs_hz: f64,
    noise_std_mv: f64,
    jitter_std_s: f64,
    seed: u64,
) -> Result<EcgRecord, EcgIoError> {
    synthesize_ecg_leads(beat_times_s, fs_hz, noise_std_mv, jitter_std_s, seed, 2)
}

/// Renders every beat on each lead as a 1 mV Gaussian pulse centred at the
/// beat time plus independent per-lead Gaussian jitter, then adds white
/// Gaussian noise. The record ends one second after the last beat.
pub fn synthesize_ecg_leads(
    beat_times_s: &[f64],
    fs_hz: f64,
    noise_std_mv: f64,
    jitter_std_s: f64,
    seed: u64,
    n_leads: usize,
) -> Result<EcgRecord, EcgIoError> {
    if beat_times_s.is_empty() {
        return Err(EcgIoError::InvalidBeatTimes("no beats".into()));
    }
    if beat_times_s.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(EcgIoError::InvalidBeatTimes("beat times must be finite and >= 0".into()));
    }
    if let Some(w) = beat_times_s.windows(2).find(|w| w[1] - w[0] <= MIN_BEAT_GAP_S) {
        return Err(EcgIoError::InvalidBeatTimes(format!(
            "beats at {} s and {} s are not more than {MIN_BEAT_GAP_S} s apart",
            w[0], w[1]
        )));
    }
    if !(fs_hz >= 100.0) {
        return Err(EcgIoError::InvalidParameter(format!("fs_hz must be >= 100, got {fs_hz}")));
    }
    if !(noise_std_mv >= 0.0) || !(jitter_std_s >= 0.0) || n_leads == 0 {
        return Err(EcgIoError::InvalidParameter(
            "noise and jitter must be non-negative and at least one lead requested".into(),
        ));
    }

    let last = *beat_times_s.last().unwrap();
    let n = ((last + 1.0) * fs_hz).ceil() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, jitter_std_s).expect("validated std");
    let noise = Normal::new(0.0, noise_std_mv).expect("validated std");
    let reach = (5.0 * PULSE_SIGMA_S * fs_hz).ceil() as isize;

    let mut samples = Vec::with_capacity(n_leads);
    for _ in 0..n_leads {
        let mut lead = vec![0.0; n];
        for &t in beat_times_s {
            let centre = t + jitter.sample(&mut rng);
            let c = (centre * fs_hz).round() as isize;
            for i in (c - reach).max(0)..=(c + reach).min(n as isize - 1) {
                let dt = i as f64 / fs_hz - centre;
                lead[i as usize] += (-0.5 * (dt / PULSE_SIGMA_S).powi(2)).exp();
            }
        }
        if noise_std_mv > 0.0 {
            for v in &mut lead {
                *v += noise.sample(&mut rng);
            }
        }
        samples.push(lead);
    }
    let names = (1..=n_leads).map(|i| format!("L{i}")).collect();
    EcgRecord::new(
        RecordMeta {
            fs_hz,
            resolution_bits: 16,
            gain_mv: 32.768,
            subject_id: format!("synthetic-{seed}"),
        },
        names,
        samples,
    )
}
