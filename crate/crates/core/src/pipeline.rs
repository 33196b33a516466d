//! End-to-end key agreement sessions: observation sources, quantization,
//! block reconciliation, privacy amplification, reporting, replay and sweeps.
//!
//! Seeds: the parity-check matrix uses `seed`, the amplification matrix and
//! synthetic sources use fixed salts of it, so one integer pins a whole run.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ecg_io::{self, EcgIoError, EcgRecord};
use crate::gf2::{BitBlock, Gf2Error, Gf2Matrix, HexBits};
use crate::ipi::{self, IpiError, PairedIpis};
use crate::metrics::{self, MetricsError, MirEstimator, SessionReport};
use crate::privacy::{self, AmplifierSpec, PrivacyError};
use crate::quantizer::{self, BitMapping, DesignStage, QuantizerError, QuantizerSpec};
use crate::reconcile::{CodeConfig, DecoderKind, ReconcileError, SyndromeDecoder};

const AMPLIFIER_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const SOURCE_SALT: u64 = 0xd1b5_4a32_d192_ed03;
pub const TRANSCRIPT_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    EcgIo(#[from] EcgIoError),
    #[error(transparent)]
    Ipi(#[from] IpiError),
    #[error(transparent)]
    Quantizer(#[from] QuantizerError),
    #[error(transparent)]
    Reconcile(#[from] ReconcileError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Gf2(#[from] Gf2Error),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{stage} failed{}: {source}", block.map(|b| format!(" on block {b}")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        block: Option<usize>,
        #[source]
        source: StageError,
    },
    #[error("not enough material: {bits} bits, one block needs {n_bits}")]
    NotEnoughData { bits: usize, n_bits: usize },
    #[error("inconsistent transcript: {0}")]
    Transcript(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl PipelineError {
    pub fn is_config(&self) -> bool {
        matches!(self, PipelineError::Config(_))
    }
}

fn stage<E: Into<StageError>>(stage: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        block: None,
        source: e.into(),
    }
}

fn block_stage<E: Into<StageError>>(stage: &'static str, block: usize) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        block: Some(block),
        source: e.into(),
    }
}

/// Where Alice's and Bob's observations come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    /// Multi-lead CSV record plus JSON sidecar.
    Record { path: PathBuf, meta: PathBuf },
    /// Pre-extracted IPI sequences, one value in ms per line.
    Ipis { alice: PathBuf, bob: PathBuf },
    /// Correlated Gaussian IPIs.
    Gaussian {
        rho: f64,
        #[serde(default = "default_blocks")]
        blocks: usize,
        #[serde(default = "default_mean_ipi_ms")]
        mean_ms: f64,
        #[serde(default = "default_std_ms")]
        std_ms: f64,
    },
    /// Uniform symbols; Bob's symbol is replaced by a different uniform one with probability `p`.
    SymbolFlip {
        p: f64,
        #[serde(default = "default_blocks")]
        blocks: usize,
        #[serde(default = "default_period_s")]
        period_s: f64,
    },
    /// Uniform bits; Bob sees each bit flipped independently with probability `p`.
    BitFlip {
        p: f64,
        #[serde(default = "default_blocks")]
        blocks: usize,
        #[serde(default = "default_period_s")]
        period_s: f64,
    },
    /// Synthetic multi-lead ECG sharing one beat train, with per-lead timing jitter.
    Ecg {
        #[serde(default = "default_ecg_blocks")]
        blocks: usize,
        #[serde(default = "default_leads")]
        leads: usize,
        #[serde(default = "default_fs")]
        fs_hz: f64,
        #[serde(default = "default_jitter_ms")]
        jitter_ms: f64,
        #[serde(default = "default_noise_mv")]
        noise_mv: f64,
        #[serde(default = "default_mean_ipi_ms")]
        mean_ms: f64,
        #[serde(default = "default_std_ms")]
        std_ms: f64,
    },
}

fn default_blocks() -> usize {
    100
}
fn default_ecg_blocks() -> usize {
    5
}
fn default_mean_ipi_ms() -> f64 {
    800.0
}
fn default_std_ms() -> f64 {
    50.0
}
fn default_period_s() -> f64 {
    0.8
}
fn default_leads() -> usize {
    3
}
fn default_fs() -> f64 {
    500.0
}
fn default_jitter_ms() -> f64 {
    3.0
}
fn default_noise_mv() -> f64 {
    0.02
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig::Gaussian {
            rho: 0.99,
            blocks: default_blocks(),
            mean_ms: default_mean_ipi_ms(),
            std_ms: default_std_ms(),
        }
    }
}

/// How the quantizer is obtained.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantizerChoice {
    #[default]
    Optimize,
    Uniform,
    Load(PathBuf),
}

impl std::str::FromStr for QuantizerChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "optimize" => Ok(Self::Optimize),
            "uniform" => Ok(Self::Uniform),
            _ => match s.strip_prefix("load:") {
                Some(p) if !p.is_empty() => Ok(Self::Load(PathBuf::from(p))),
                _ => Err(format!("expected optimize, uniform or load:<path>, got {s:?}")),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub source: SourceConfig,
    /// Lead names for record and ECG sources; the first two leads when unset.
    pub alice_lead: Option<String>,
    pub bob_lead: Option<String>,
    /// Bits per symbol.
    pub b: u32,
    /// Block length N.
    #[serde(alias = "N")]
    pub n: usize,
    /// Syndrome length M.
    #[serde(alias = "M")]
    pub m: usize,
    pub w_max: usize,
    pub seed: u64,
    pub bit_mapping: BitMapping,
    pub quantizer: QuantizerChoice,
    pub bounds_bins: usize,
    pub outlier_ms: Option<f64>,
    pub decoder: DecoderKind,
    pub coset_limit_bits: usize,
    pub grid_resolution_ms: f64,
    pub mir_estimator: MirEstimator,
    /// Decode failure rate above which a run counts as failed.
    pub max_failure_rate: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            source: SourceConfig::default(),
            alice_lead: None,
            bob_lead: None,
            b: 4,
            n: 160,
            m: 142,
            w_max: 4,
            seed: 0,
            bit_mapping: BitMapping::Gray,
            quantizer: QuantizerChoice::Optimize,
            bounds_bins: 16,
            outlier_ms: None,
            decoder: DecoderKind::Auto,
            coset_limit_bits: crate::reconcile::DEFAULT_COSET_LIMIT_BITS,
            grid_resolution_ms: 1.0,
            mir_estimator: MirEstimator::Correlation,
            max_failure_rate: None,
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_owned(),
            source,
        })?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn code(&self) -> CodeConfig {
        CodeConfig {
            n_bits: self.n,
            syndrome_bits: self.m,
            seed: self.seed,
            w_max: self.w_max,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(1..=quantizer::MAX_BITS).contains(&self.b) {
            return Err(cfg_err(format!("b must be in 1..={}, got {}", quantizer::MAX_BITS, self.b)));
        }
        self.code()
            .validate(self.b as usize)
            .map_err(|e| cfg_err(e.to_string()))?;
        if self.bounds_bins < 2 {
            return Err(cfg_err("bounds_bins must be at least 2"));
        }
        if !(self.grid_resolution_ms > 0.0 && self.grid_resolution_ms.is_finite()) {
            return Err(cfg_err("grid_resolution_ms must be positive"));
        }
        if self.outlier_ms.is_some_and(|o| !(o > 0.0)) {
            return Err(cfg_err("outlier_ms must be positive"));
        }
        if self.max_failure_rate.is_some_and(|r| !(0.0..=1.0).contains(&r)) {
            return Err(cfg_err("max_failure_rate must lie in [0, 1]"));
        }
        if let (Some(a), Some(b)) = (&self.alice_lead, &self.bob_lead) {
            if a == b {
                return Err(cfg_err("alice_lead and bob_lead must differ"));
            }
        }
        let prob = |p: f64| (0.0..1.0).contains(&p);
        let positive = |v: f64| v > 0.0 && v.is_finite();
        match &self.source {
            SourceConfig::Record { .. } | SourceConfig::Ipis { .. } => {}
            SourceConfig::Gaussian {
                rho,
                blocks,
                mean_ms,
                std_ms,
            } => {
                if !(rho.abs() < 1.0) {
                    return Err(cfg_err(format!("rho must satisfy |rho| < 1, got {rho}")));
                }
                if *blocks == 0 || !positive(*mean_ms) || !positive(*std_ms) {
                    return Err(cfg_err("gaussian source needs blocks >= 1 and positive mean/std"));
                }
            }
            SourceConfig::SymbolFlip { p, blocks, period_s } | SourceConfig::BitFlip { p, blocks, period_s } => {
                if !prob(*p) {
                    return Err(cfg_err(format!("p must lie in [0, 1), got {p}")));
                }
                if *blocks == 0 || !positive(*period_s) {
                    return Err(cfg_err("flip source needs blocks >= 1 and a positive period"));
                }
            }
            SourceConfig::Ecg {
                blocks,
                leads,
                fs_hz,
                jitter_ms,
                noise_mv,
                mean_ms,
                std_ms,
            } => {
                if *blocks == 0 || *leads < 2 || !(*fs_hz >= 100.0) {
                    return Err(cfg_err("ecg source needs blocks >= 1, leads >= 2, fs_hz >= 100"));
                }
                if !(*jitter_ms >= 0.0) || !(*noise_mv >= 0.0) || !positive(*mean_ms) || !(*std_ms >= 0.0) {
                    return Err(cfg_err("ecg source parameters must be non-negative"));
                }
                if *mean_ms - 4.0 * std_ms <= 300.0 {
                    return Err(cfg_err("ecg mean_ms - 4 std_ms must exceed 300 ms"));
                }
            }
        }
        Ok(())
    }

    fn symbols_needed(&self, blocks: usize) -> usize {
        blocks * self.n / self.b as usize
    }
}

/// Paired observations before the code stage.
#[derive(Debug, Clone)]
enum Material {
    /// Real-valued IPIs to be quantized.
    Ipis {
        pairs: PairedIpis,
        t_s: f64,
        /// Raw-observation disagreement in percent, if available.
        raw_pct: Option<f64>,
    },
    /// Already-discrete symbols in `1..=L`.
    Symbols { a: Vec<u16>, b: Vec<u16>, t_s: f64 },
    /// Already-binary observations.
    Bits { a: Vec<u8>, b: Vec<u8>, t_s: f64 },
}

/// Output of the stages that do not depend on M.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub pair_id: (String, String),
    pub alice_bits: Vec<BitBlock>,
    pub bob_bits: Vec<BitBlock>,
    pub quantizer: Option<QuantizerSpec>,
    pub quantizer_objective_bits: f64,
    pub mean_ipi_s: f64,
    pub raw_disagreement_pct: f64,
    pub bob_no_syndrome_pct: f64,
    pub mir_lower_bps: f64,
    pub mir_upper_bps: f64,
    pub mir_lower_saturated: bool,
    pub bounds_crossed: bool,
}

/// Result of a full session.
#[derive(Debug, Clone)]
pub struct Session {
    pub report: SessionReport,
    pub transcript: Transcript,
    pub bob_observation: BobObservation,
    pub alice_key: BitBlock,
    pub bob_key: BitBlock,
    pub eve_key: BitBlock,
}

/// Everything sent over the public channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub format: u32,
    pub code: CodeConfig,
    pub decoder: DecoderKind,
    pub coset_limit_bits: usize,
    pub bits_per_symbol: u32,
    pub bit_mapping: BitMapping,
    pub quantizer: Option<QuantizerSpec>,
    pub h: Gf2Matrix,
    pub a: Gf2Matrix,
    /// One syndrome per block.
    pub syndromes: Vec<HexBits>,
    /// Blocks Bob reported as undecodable; excluded from the key.
    pub failed_blocks: Vec<usize>,
}

/// Bob's quantized bits, one entry per block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BobObservation {
    pub lead: String,
    pub blocks: Vec<HexBits>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub bob_key: HexBits,
    pub eve_key: HexBits,
    pub failed_blocks: Vec<usize>,
    /// Replayed failures equal the ones recorded in the transcript.
    pub failures_consistent: bool,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| PipelineError::Json {
        path: path.to_owned(),
        source,
    })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| PipelineError::Json {
        path: path.to_owned(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|source| PipelineError::Io {
        path: path.to_owned(),
        source,
    })
}

impl Transcript {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        read_json(path)
    }
}

impl BobObservation {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        read_json(path)
    }
}

/// Key file contents: `<bit length>:<hex>`.
pub fn format_key(key: &BitBlock) -> String {
    format!("{}:{}", key.len(), key.to_hex())
}

pub fn parse_key(text: &str) -> Result<BitBlock, PipelineError> {
    let text = text.trim();
    let (bits, hex) = text
        .split_once(':')
        .ok_or_else(|| cfg_err(format!("key file must read <bits>:<hex>, got {text:?}")))?;
    let bits: usize = bits.parse().map_err(|_| cfg_err(format!("bad key length {bits:?}")))?;
    BitBlock::from_hex(hex, bits).map_err(stage("key parsing"))
}

fn leads_for(config: &PipelineConfig, names: &[String]) -> Result<(String, String), PipelineError> {
    let pick = |want: &Option<String>, fallback: usize| -> Result<String, PipelineError> {
        match want {
            Some(n) if names.contains(n) => Ok(n.clone()),
            Some(n) => Err(cfg_err(format!("unknown lead {n:?}; available: {}", names.join(", ")))),
            None => names
                .get(fallback)
                .cloned()
                .ok_or_else(|| cfg_err("record needs at least two leads")),
        }
    };
    let a = pick(&config.alice_lead, 0)?;
    let b = pick(&config.bob_lead, 1)?;
    if a == b {
        return Err(cfg_err("alice_lead and bob_lead must differ"));
    }
    Ok((a, b))
}

/// Builds the shared beat train and renders a synthetic multi-lead record.
pub fn synthetic_ecg_record(config: &PipelineConfig) -> Result<EcgRecord, PipelineError> {
    let SourceConfig::Ecg {
        blocks,
        leads,
        fs_hz,
        jitter_ms,
        noise_mv,
        mean_ms,
        std_ms,
    } = &config.source
    else {
        return Err(cfg_err("not an ecg source"));
    };
    // Margin for beats lost to detection or the IPI window.
    let beats = config.symbols_needed(*blocks) + config.symbols_needed(*blocks) / 20 + 4;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SOURCE_SALT);
    let rr = Normal::new(*mean_ms, *std_ms).map_err(|e| cfg_err(e.to_string()))?;
    let mut t = 1.0;
    let times: Vec<f64> = (0..beats)
        .map(|_| {
            let now = t;
            let gap: f64 = rr.sample(&mut rng);
            t += gap.clamp(mean_ms - 4.0 * std_ms, mean_ms + 4.0 * std_ms) / 1000.0;
            now
        })
        .collect();
    ecg_io::synthesize_ecg_leads(
        &times,
        *fs_hz,
        *noise_mv,
        jitter_ms / 1000.0,
        config.seed ^ SOURCE_SALT ^ 1,
        *leads,
    )
    .map_err(stage("synthesis"))
}

/// Percent of differing ADC-code bits between two leads, sample by sample.
pub fn raw_adc_disagreement_pct(record: &EcgRecord, a: usize, b: usize) -> f64 {
    let bits = record.resolution_bits();
    let (la, lb) = (record.lead(a), record.lead(b));
    let diff: u64 = la
        .iter()
        .zip(lb)
        .map(|(&x, &y)| u64::from((record.adc_code(x) ^ record.adc_code(y)).count_ones()))
        .sum();
    100.0 * diff as f64 / (la.len() as f64 * f64::from(bits))
}

/// Percent of differing bits between 16-bit codes of the IPIs at 1 ms resolution.
fn raw_ipi_disagreement_pct(pairs: &PairedIpis) -> f64 {
    let code = |v: f64| v.round().clamp(0.0, 65535.0) as u16;
    let diff: u32 = pairs.iter().map(|(x, y)| (code(x) ^ code(y)).count_ones()).sum();
    100.0 * f64::from(diff) / (16.0 * pairs.len() as f64)
}

fn record_material(config: &PipelineConfig, record: &EcgRecord) -> Result<((String, String), Material), PipelineError> {
    let (la, lb) = leads_for(config, record.lead_names())?;
    let idx = |n: &str| record.lead_names().iter().position(|x| x == n).expect("checked lead");
    let raw = raw_adc_disagreement_pct(record, idx(&la), idx(&lb));
    let seq = |lead: &str| -> Result<ipi::IpiSequence, PipelineError> {
        let sig = ecg_io::select_lead(record, lead).map_err(stage("lead selection"))?;
        let peaks = ipi::detect_r_peaks(&sig).map_err(stage("peak detection"))?;
        ipi::extract_ipis(&peaks, sig.fs_hz).map_err(stage("ipi extraction"))
    };
    let (sa, sb) = (seq(&la)?, seq(&lb)?);
    let pairs = ipi::pair_ipis(&sa.ipis_ms, &sb.ipis_ms, config.outlier_ms).map_err(stage("ipi pairing"))?;
    Ok((
        (la, lb),
        Material::Ipis {
            pairs,
            t_s: sa.mean_ipi_s,
            raw_pct: Some(raw),
        },
    ))
}

fn load_material(config: &PipelineConfig) -> Result<((String, String), Material), PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SOURCE_SALT);
    let pair = |a: &str, b: &str| (a.to_owned(), b.to_owned());
    match &config.source {
        SourceConfig::Record { path, meta } => {
            let record = ecg_io::load_record(path, meta).map_err(stage("record loading"))?;
            record_material(config, &record)
        }
        SourceConfig::Ecg { .. } => {
            let record = synthetic_ecg_record(config)?;
            record_material(config, &record)
        }
        SourceConfig::Ipis { alice, bob } => {
            let a = ipi::read_ipis_csv(alice).map_err(stage("ipi loading"))?;
            let b = ipi::read_ipis_csv(bob).map_err(stage("ipi loading"))?;
            let pairs = ipi::pair_ipis(&a, &b, config.outlier_ms).map_err(stage("ipi pairing"))?;
            let t_s = pairs.x_ms.iter().sum::<f64>() / pairs.len() as f64 / 1000.0;
            let raw = raw_ipi_disagreement_pct(&pairs);
            Ok((
                pair("alice", "bob"),
                Material::Ipis {
                    pairs,
                    t_s,
                    raw_pct: Some(raw),
                },
            ))
        }
        SourceConfig::Gaussian {
            rho,
            blocks,
            mean_ms,
            std_ms,
        } => {
            // Margin so that quantized symbols cover every block.
            let n = config.symbols_needed(*blocks);
            let s = (1.0 - rho * rho).sqrt();
            let (x, y): (Vec<f64>, Vec<f64>) = (0..n)
                .map(|_| {
                    let u: f64 = StandardNormal.sample(&mut rng);
                    let v: f64 = StandardNormal.sample(&mut rng);
                    (mean_ms + std_ms * u, mean_ms + std_ms * (rho * u + s * v))
                })
                .unzip();
            let pairs = PairedIpis::new(x, y).map_err(stage("synthesis"))?;
            let raw = raw_ipi_disagreement_pct(&pairs);
            Ok((
                pair("alice", "bob"),
                Material::Ipis {
                    pairs,
                    t_s: mean_ms / 1000.0,
                    raw_pct: Some(raw),
                },
            ))
        }
        SourceConfig::SymbolFlip { p, blocks, period_s } => {
            let levels = 1u16 << config.b;
            let n = config.symbols_needed(*blocks);
            let mut a = Vec::with_capacity(n);
            let mut b = Vec::with_capacity(n);
            for _ in 0..n {
                let s = rng.random_range(1..=levels);
                let t = if levels > 1 && rng.random::<f64>() < *p {
                    let other = rng.random_range(1..levels);
                    if other >= s { other + 1 } else { other }
                } else {
                    s
                };
                a.push(s);
                b.push(t);
            }
            Ok((pair("alice", "bob"), Material::Symbols { a, b, t_s: *period_s }))
        }
        SourceConfig::BitFlip { p, blocks, period_s } => {
            let n = blocks * config.n;
            let a: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
            let b: Vec<u8> = a
                .iter()
                .map(|&bit| bit ^ u8::from(rng.random::<f64>() < *p))
                .collect();
            Ok((pair("alice", "bob"), Material::Bits { a, b, t_s: *period_s }))
        }
    }
}

/// Obtains the quantizer for a set of IPI pairs according to the config.
pub fn design_quantizer(
    config: &PipelineConfig,
    pairs: &PairedIpis,
) -> Result<(QuantizerSpec, Vec<DesignStage>), PipelineError> {
    match &config.quantizer {
        QuantizerChoice::Optimize => {
            let hist = quantizer::build_joint_histogram(pairs, config.grid_resolution_ms)
                .map_err(stage("histogram"))?;
            quantizer::optimize_thresholds_traced(&hist, config.b, config.bit_mapping)
                .map_err(stage("quantizer design"))
        }
        QuantizerChoice::Uniform => {
            let tx = quantizer::uniform_quantizer(&pairs.x_ms, config.b).map_err(stage("quantizer design"))?;
            let ty = quantizer::uniform_quantizer(&pairs.y_ms, config.b).map_err(stage("quantizer design"))?;
            let spec = QuantizerSpec::new(config.b, tx, ty, config.bit_mapping).map_err(stage("quantizer design"))?;
            Ok((spec, Vec::new()))
        }
        QuantizerChoice::Load(path) => {
            let spec = QuantizerSpec::load(path).map_err(stage("quantizer loading"))?;
            if spec.bits != config.b {
                return Err(cfg_err(format!(
                    "loaded quantizer has {} bits, config asks for {}",
                    spec.bits, config.b
                )));
            }
            Ok((spec, Vec::new()))
        }
    }
}

/// IPI pairs for quantizer design; errors for sources that are not IPI based.
pub fn load_pairs(config: &PipelineConfig) -> Result<((String, String), PairedIpis), PipelineError> {
    config.validate()?;
    match load_material(config)? {
        (id, Material::Ipis { pairs, .. }) => Ok((id, pairs)),
        _ => Err(cfg_err("quantizer design needs an IPI-producing source")),
    }
}

/// MAP guess of Alice's symbol from Bob's alone, using the empirical joint pmf.
fn map_guess(a: &[u16], b: &[u16], levels: usize) -> Vec<u16> {
    let mut joint = vec![0usize; levels * levels];
    for (&x, &y) in a.iter().zip(b) {
        joint[(usize::from(y) - 1) * levels + usize::from(x) - 1] += 1;
    }
    let best: Vec<u16> = (0..levels)
        .map(|y| {
            let row = &joint[y * levels..(y + 1) * levels];
            let mut arg = 0;
            for (i, &c) in row.iter().enumerate() {
                if c > row[arg] {
                    arg = i;
                }
            }
            arg as u16 + 1
        })
        .collect();
    b.iter().map(|&y| best[usize::from(y) - 1]).collect()
}

fn bits_pct(a: &[u8], b: &[u8]) -> f64 {
    let d = a.iter().zip(b).filter(|(x, y)| x != y).count();
    if a.is_empty() { 0.0 } else { 100.0 * d as f64 / a.len() as f64 }
}

fn into_blocks(bits: &[u8], n: usize, blocks: usize) -> Vec<BitBlock> {
    (0..blocks).map(|k| BitBlock::from_bits(&bits[k * n..(k + 1) * n])).collect()
}

/// Runs every stage that does not depend on the syndrome length.
pub fn prepare(config: &PipelineConfig) -> Result<Prepared, PipelineError> {
    config.validate()?;
    let (pair_id, material) = load_material(config)?;
    let b = config.b;
    let levels = 1usize << b;
    let mapping = config.bit_mapping;

    let (sym_a, sym_b, quant, objective, t_s, raw_pct, bound_x, bound_y, bits) = match material {
        Material::Ipis { pairs, t_s, raw_pct } => {
            let (spec, _) = design_quantizer(config, &pairs)?;
            let objective = quantizer::pairs_objective(&pairs, &spec.tau_x, &spec.tau_y)
                .map_err(stage("quantizer objective"))?;
            let sa = spec.quantize_x(&pairs.x_ms);
            let sb = spec.quantize_y(&pairs.y_ms);
            (sa, sb, Some(spec), objective, t_s, raw_pct, pairs.x_ms, pairs.y_ms, None)
        }
        Material::Symbols { a, b: sb, t_s } => {
            let xs: Vec<f64> = a.iter().map(|&s| f64::from(s)).collect();
            let ys: Vec<f64> = sb.iter().map(|&s| f64::from(s)).collect();
            (a, sb, None, 0.0, t_s, None, xs, ys, None)
        }
        Material::Bits { a, b: bb, t_s } => {
            let sa = quantizer::bits_to_symbols(&a, b, mapping).map_err(stage("symbol mapping"))?;
            let sb = quantizer::bits_to_symbols(&bb, b, mapping).map_err(stage("symbol mapping"))?;
            let xs: Vec<f64> = sa.iter().map(|&s| f64::from(s)).collect();
            let ys: Vec<f64> = sb.iter().map(|&s| f64::from(s)).collect();
            (sa, sb, None, 0.0, t_s, None, xs, ys, Some((a, bb)))
        }
    };
    let objective = if quant.is_none() {
        let cut: Vec<f64> = (1..levels).map(|k| k as f64 + 0.5).collect();
        let p = PairedIpis::new(bound_x.clone(), bound_y.clone()).map_err(stage("symbol pairing"))?;
        quantizer::pairs_objective(&p, &cut, &cut).map_err(stage("quantizer objective"))?
    } else {
        objective
    };

    let (bits_a, bits_b) = match bits {
        Some(pair) => pair,
        None => (
            quantizer::symbols_to_bits(&sym_a, b, mapping).map_err(stage("symbol mapping"))?,
            quantizer::symbols_to_bits(&sym_b, b, mapping).map_err(stage("symbol mapping"))?,
        ),
    };
    let n = config.n;
    let blocks = bits_a.len() / n;
    if blocks == 0 {
        return Err(PipelineError::NotEnoughData {
            bits: bits_a.len(),
            n_bits: n,
        });
    }
    let used = blocks * n;
    let used_symbols = used / b as usize;

    let guess = map_guess(&sym_a[..used_symbols], &sym_b[..used_symbols], levels);
    let guess_bits = quantizer::symbols_to_bits(&guess, b, mapping).map_err(stage("symbol mapping"))?;
    let bob_no_syndrome_pct = bits_pct(&bits_a[..used], &guess_bits);
    let raw_disagreement_pct = raw_pct.unwrap_or_else(|| bits_pct(&bits_a[..used], &bits_b[..used]));

    let bounds = metrics::secret_key_capacity_bounds(&bound_x, &bound_y, t_s, config.bounds_bins, config.mir_estimator)
        .map_err(stage("capacity bounds"))?;

    Ok(Prepared {
        pair_id,
        alice_bits: into_blocks(&bits_a, n, blocks),
        bob_bits: into_blocks(&bits_b, n, blocks),
        quantizer: quant,
        quantizer_objective_bits: objective,
        mean_ipi_s: t_s,
        raw_disagreement_pct,
        bob_no_syndrome_pct,
        mir_lower_bps: bounds.lower_bps,
        mir_upper_bps: bounds.upper_bps,
        mir_lower_saturated: bounds.lower_saturated,
        bounds_crossed: bounds.crossed,
    })
}

struct BlockResult {
    z: BitBlock,
    decoded: Option<BitBlock>,
    eve: BitBlock,
}

/// Reconciliation, amplification and reporting for prepared material.
pub fn run_code_stage(config: &PipelineConfig, prepared: &Prepared) -> Result<Session, PipelineError> {
    config.validate()?;
    let code = config.code();
    let h = code.parity_check().map_err(stage("parity-check generation"))?;
    let amp = privacy::make_privacy_matrix(&h, config.seed ^ AMPLIFIER_SALT).map_err(stage("privacy amplification"))?;
    let decoder = SyndromeDecoder::new(&h);

    let results: Vec<BlockResult> = prepared
        .alice_bits
        .par_iter()
        .zip(&prepared.bob_bits)
        .enumerate()
        .map(|(k, (x, y))| -> Result<BlockResult, PipelineError> {
            let z = h.matvec(x).map_err(block_stage("syndrome", k))?;
            let decoded = match decoder.decode(&z, y, config.decoder, config.w_max, config.coset_limit_bits) {
                Ok(v) => Some(v),
                Err(ReconcileError::DecodeFailure) => None,
                Err(e) => return Err(block_stage("decoding", k)(e)),
            };
            let eve = decoder
                .coset_leader(&z, config.w_max, config.coset_limit_bits)
                .map_err(block_stage("eve estimate", k))?;
            Ok(BlockResult { z, decoded, eve })
        })
        .collect::<Result<_, _>>()?;

    let blocks = results.len();
    let failed_blocks: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.decoded.is_none())
        .map(|(k, _)| k)
        .collect();
    let undetected = results
        .iter()
        .zip(&prepared.alice_bits)
        .filter(|(r, x)| r.decoded.as_ref().is_some_and(|d| d != *x))
        .count();

    // Bob keeps every block his decoder accepted, right or wrong.
    let mut alice_keys = Vec::new();
    let mut bob_keys = Vec::new();
    let mut eve_keys = Vec::new();
    let mut ok_alice = Vec::new();
    let mut ok_bob = Vec::new();
    for (k, r) in results.iter().enumerate() {
        if let Some(d) = &r.decoded {
            let x = &prepared.alice_bits[k];
            alice_keys.push(privacy::extract_key(&amp, x).map_err(block_stage("key extraction", k))?);
            bob_keys.push(privacy::extract_key(&amp, d).map_err(block_stage("key extraction", k))?);
            eve_keys.push(privacy::extract_key(&amp, &r.eve).map_err(block_stage("key extraction", k))?);
            ok_alice.push(x.clone());
            ok_bob.push(d.clone());
        }
    }
    let alice_key = BitBlock::concat(&alice_keys);
    let bob_key = BitBlock::concat(&bob_keys);
    let eve_key = BitBlock::concat(&eve_keys);

    let pct = |a: &[BitBlock], b: &[BitBlock]| -> Result<f64, PipelineError> {
        Ok(100.0 * metrics::disagreement_rate(a, b).map_err(stage("metrics"))?)
    };
    let eve_est: Vec<BitBlock> = results.iter().map(|r| r.eve.clone()).collect();
    let key_rate = metrics::key_rate(config.n, config.m, config.b, prepared.mean_ipi_s).map_err(stage("metrics"))?;
    let report = SessionReport {
        pair_id: prepared.pair_id.clone(),
        raw_disagreement_pct: prepared.raw_disagreement_pct,
        pre_reconciliation_pct: pct(&prepared.alice_bits, &prepared.bob_bits)?,
        post_reconciliation_pct: pct(&ok_alice, &ok_bob)?,
        eve_disagreement_pct: pct(&prepared.alice_bits, &eve_est)?,
        eve_key_disagreement_pct: pct(&alice_keys, &eve_keys)?,
        bob_no_syndrome_pct: prepared.bob_no_syndrome_pct,
        decode_failure_rate: (failed_blocks.len() + undetected) as f64 / blocks as f64,
        blocks,
        block_errors: failed_blocks.len() + undetected,
        detected_failures: failed_blocks.len(),
        undetected_errors: undetected,
        symbols: blocks * config.n / config.b as usize,
        mean_ipi_s: prepared.mean_ipi_s,
        key_rate_bps: key_rate,
        mir_lower_bps: prepared.mir_lower_bps,
        mir_upper_bps: prepared.mir_upper_bps,
        mir_lower_saturated: prepared.mir_lower_saturated,
        bounds_crossed: prepared.bounds_crossed,
        quantizer_objective_bits: prepared.quantizer_objective_bits,
        key_bits: alice_key.len(),
        keys_match: !alice_key.is_empty() && alice_key == bob_key,
        key_hex: alice_key.to_hex(),
    };
    let transcript = Transcript {
        format: TRANSCRIPT_FORMAT,
        code,
        decoder: config.decoder,
        coset_limit_bits: config.coset_limit_bits,
        bits_per_symbol: config.b,
        bit_mapping: config.bit_mapping,
        quantizer: prepared.quantizer.clone(),
        h,
        a: amp.a,
        syndromes: results.iter().map(|r| HexBits::from(&r.z)).collect(),
        failed_blocks,
    };
    let bob_observation = BobObservation {
        lead: prepared.pair_id.1.clone(),
        blocks: prepared.bob_bits.iter().map(HexBits::from).collect(),
    };
    Ok(Session {
        report,
        transcript,
        bob_observation,
        alice_key,
        bob_key,
        eve_key,
    })
}

pub fn run_session(config: &PipelineConfig) -> Result<Session, PipelineError> {
    let prepared = prepare(config)?;
    run_code_stage(config, &prepared)
}

/// Recomputes Bob's key from his observation and the transcript, and Eve's
/// key from the transcript alone.
pub fn replay(transcript: &Transcript, observation: &BobObservation) -> Result<ReplayOutcome, PipelineError> {
    let t = transcript;
    let (m, n) = (t.h.rows(), t.h.cols());
    if t.code.n_bits != n || t.code.syndrome_bits != m || t.a.cols() != n || t.a.rows() != n - m {
        return Err(PipelineError::Transcript("matrix shapes disagree with the code parameters".into()));
    }
    if t.syndromes.len() != observation.blocks.len() {
        return Err(PipelineError::Transcript(format!(
            "{} syndromes but {} observed blocks",
            t.syndromes.len(),
            observation.blocks.len()
        )));
    }
    let amp = AmplifierSpec {
        a: t.a.clone(),
        h: t.h.clone(),
    };
    let stacked = t.h.vstack(&t.a).map_err(stage("transcript check"))?;
    if stacked.rank() != n {
        return Err(PipelineError::Transcript("[H; A] is not invertible".into()));
    }
    let decoder = SyndromeDecoder::new(&t.h);
    let decoded: Vec<(Option<BitBlock>, BitBlock)> = t
        .syndromes
        .par_iter()
        .zip(&observation.blocks)
        .enumerate()
        .map(|(k, (zs, ys))| -> Result<_, PipelineError> {
            let z = BitBlock::try_from(zs).map_err(block_stage("transcript parsing", k))?;
            let y = BitBlock::try_from(ys).map_err(block_stage("observation parsing", k))?;
            let d = match decoder.decode(&z, &y, t.decoder, t.code.w_max, t.coset_limit_bits) {
                Ok(v) => Some(v),
                Err(ReconcileError::DecodeFailure) => None,
                Err(e) => return Err(block_stage("decoding", k)(e)),
            };
            let eve = decoder
                .coset_leader(&z, t.code.w_max, t.coset_limit_bits)
                .map_err(block_stage("eve estimate", k))?;
            Ok((d, eve))
        })
        .collect::<Result<_, _>>()?;
    let failed: Vec<usize> = decoded
        .iter()
        .enumerate()
        .filter(|(_, (d, _))| d.is_none())
        .map(|(k, _)| k)
        .collect();
    let mut bob = Vec::new();
    let mut eve = Vec::new();
    for (k, (d, e)) in decoded.iter().enumerate() {
        if t.failed_blocks.binary_search(&k).is_ok() {
            continue;
        }
        let d = d.as_ref().ok_or_else(|| {
            PipelineError::Transcript(format!("block {k} fails to decode but is not marked failed"))
        })?;
        bob.push(privacy::extract_key(&amp, d).map_err(block_stage("key extraction", k))?);
        eve.push(privacy::extract_key(&amp, e).map_err(block_stage("key extraction", k))?);
    }
    Ok(ReplayOutcome {
        bob_key: HexBits::from(&BitBlock::concat(&bob)),
        eve_key: HexBits::from(&BitBlock::concat(&eve)),
        failures_consistent: failed == t.failed_blocks,
        failed_blocks: failed,
    })
}

/// One (pair, M) cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub alice: String,
    pub bob: String,
    pub m: usize,
    pub report: Option<SessionReport>,
    pub error: Option<String>,
    /// Smallest M of this pair with zero decode failures.
    pub min_zero_failure_m: Option<usize>,
}

/// All unordered lead pairs, in lead order.
pub fn lead_pairs(leads: &[String]) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for i in 0..leads.len() {
        for j in i + 1..leads.len() {
            out.push((leads[i].clone(), leads[j].clone()));
        }
    }
    out
}

/// Lead names available from the configured source.
pub fn source_leads(config: &PipelineConfig) -> Result<Vec<String>, PipelineError> {
    match &config.source {
        SourceConfig::Record { path, meta } => Ok(ecg_io::load_record(path, meta)
            .map_err(stage("record loading"))?
            .lead_names()
            .to_vec()),
        SourceConfig::Ecg { leads, .. } => Ok((1..=*leads).map(|i| format!("L{i}")).collect()),
        _ => Ok(vec!["alice".into(), "bob".into()]),
    }
}

/// Runs every (pair, M) combination. Cells run in parallel; output order
/// follows the pair list, then the M list. Failing cells carry the error.
pub fn sweep(config: &PipelineConfig, leads: &[String], m_values: &[usize]) -> Result<Vec<SweepRow>, PipelineError> {
    config.validate()?;
    if leads.len() < 2 {
        return Err(cfg_err("a sweep needs at least two leads"));
    }
    if m_values.is_empty() {
        return Err(cfg_err("a sweep needs at least one M value"));
    }
    for &m in m_values {
        let mut c = config.clone();
        c.m = m;
        c.validate()?;
    }
    let multi_lead = matches!(config.source, SourceConfig::Record { .. } | SourceConfig::Ecg { .. });
    let pairs = if multi_lead {
        lead_pairs(leads)
    } else {
        vec![(leads[0].clone(), leads[1].clone())]
    };
    let prepared: Vec<Result<Prepared, String>> = pairs
        .par_iter()
        .map(|(a, b)| {
            let mut c = config.clone();
            if multi_lead {
                c.alice_lead = Some(a.clone());
                c.bob_lead = Some(b.clone());
            }
            prepare(&c).map_err(|e| e.to_string())
        })
        .collect();
    let cells: Vec<(usize, usize)> = (0..pairs.len())
        .flat_map(|p| m_values.iter().map(move |&m| (p, m)))
        .collect();
    let mut rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|&(p, m)| {
            let (alice, bob) = pairs[p].clone();
            let outcome = match &prepared[p] {
                Ok(prep) => {
                    let mut c = config.clone();
                    c.m = m;
                    run_code_stage(&c, prep).map(|s| s.report).map_err(|e| e.to_string())
                }
                Err(e) => Err(e.clone()),
            };
            let (report, error) = match outcome {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e)),
            };
            SweepRow {
                alice,
                bob,
                m,
                report,
                error,
                min_zero_failure_m: None,
            }
        })
        .collect();
    for chunk in rows.chunks_mut(m_values.len()) {
        let best = chunk
            .iter()
            .filter(|r| r.report.as_ref().is_some_and(|rep| rep.block_errors == 0))
            .map(|r| r.m)
            .min();
        for r in chunk {
            r.min_zero_failure_m = best;
        }
    }
    Ok(rows)
}

pub const SWEEP_CSV_HEADER: &[&str] = &[
    "alice",
    "bob",
    "m",
    "blocks",
    "block_errors",
    "detected_failures",
    "undetected_errors",
    "decode_failure_rate",
    "raw_disagreement_pct",
    "pre_reconciliation_pct",
    "post_reconciliation_pct",
    "eve_disagreement_pct",
    "eve_key_disagreement_pct",
    "bob_no_syndrome_pct",
    "mean_ipi_s",
    "key_rate_bps",
    "mir_lower_bps",
    "mir_upper_bps",
    "bounds_crossed",
    "key_bits",
    "keys_match",
    "min_zero_failure_m",
    "is_min_zero_failure",
    "error",
];

/// Flat CSV of a sweep, one row per cell.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), PipelineError> {
    let io = |source: std::io::Error| PipelineError::Io {
        path: path.to_owned(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    w.write_record(SWEEP_CSV_HEADER).map_err(|e| io(e.into()))?;
    for r in rows {
        let min = r.min_zero_failure_m.map(|m| m.to_string()).unwrap_or_default();
        let is_min = (r.min_zero_failure_m == Some(r.m)).to_string();
        let mut fields = vec![r.alice.clone(), r.bob.clone(), r.m.to_string()];
        match &r.report {
            Some(rep) => fields.extend([
                rep.blocks.to_string(),
                rep.block_errors.to_string(),
                rep.detected_failures.to_string(),
                rep.undetected_errors.to_string(),
                rep.decode_failure_rate.to_string(),
                rep.raw_disagreement_pct.to_string(),
                rep.pre_reconciliation_pct.to_string(),
                rep.post_reconciliation_pct.to_string(),
                rep.eve_disagreement_pct.to_string(),
                rep.eve_key_disagreement_pct.to_string(),
                rep.bob_no_syndrome_pct.to_string(),
                rep.mean_ipi_s.to_string(),
                rep.key_rate_bps.to_string(),
                rep.mir_lower_bps.to_string(),
                rep.mir_upper_bps.to_string(),
                rep.bounds_crossed.to_string(),
                rep.key_bits.to_string(),
                rep.keys_match.to_string(),
            ]),
            None => fields.extend(std::iter::repeat_n(String::new(), 18)),
        }
        fields.extend([min, is_min, r.error.clone().unwrap_or_default()]);
        w.write_record(&fields).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}
