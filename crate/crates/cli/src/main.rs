use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ecgkey_core::pipeline;
use ecgkey_core::{
    BitBlock, BitMapping, BobObservation, DecoderKind, MirEstimator, PipelineConfig, PipelineError, QuantizerChoice, Session, SessionReport,
    SourceConfig, Transcript,
};

const EXIT_MISMATCH: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_FAILURES: u8 = 4;

/// Secret-key agreement from correlated ECG inter-pulse intervals
#[derive(Parser, Debug)]
#[command(name = "ecgkey", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one session and write keys, transcript and report
    Keygen {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run one session on a synthetic correlated source
    Simulate {
        #[arg(long, value_enum)]
        model: Model,
        /// Correlation of the gaussian model
        #[arg(long)]
        rho: Option<f64>,
        /// Flip probability of the flip models
        #[arg(long)]
        p: Option<f64>,
        /// Number of N-bit blocks to generate
        #[arg(long)]
        blocks: Option<usize>,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run every lead pair against every M and write sweep.csv
    Sweep {
        /// Syndrome lengths to try
        #[arg(long = "m-values", value_delimiter = ',', required = true)]
        m_values: Vec<usize>,
        /// Leads to pair up (default: all leads of the source)
        #[arg(long, value_delimiter = ',')]
        leads: Option<Vec<String>>,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Recompute Bob's key from his observation and the transcript, and Eve's from the transcript
    Replay {
        #[arg(long)]
        transcript: PathBuf,
        #[arg(long)]
        observation: PathBuf,
        /// Bob's key file from the original run, compared byte for byte
        #[arg(long)]
        bob_key: Option<PathBuf>,
        /// Alice's key file, used to score Eve's key
        #[arg(long)]
        alice_key: Option<PathBuf>,
        /// Where to write the replay report
        #[arg(long, default_value = "replay.json")]
        report: PathBuf,
    },
    /// Design the quantizer for a source and save it
    QuantizeDesign {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output quantizer file
        #[arg(long, default_value = "quantizer.json")]
        output: PathBuf,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Model {
    Gaussian,
    SymbolFlip,
    BitFlip,
    Ecg,
}

#[derive(Args, Debug)]
struct OutArgs {
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

/// Pipeline settings; flags override the JSON config file.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// JSON config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Multi-lead CSV record (needs --meta)
    #[arg(long, requires = "meta")]
    record: Option<PathBuf>,
    /// JSON sidecar of the record
    #[arg(long, requires = "record")]
    meta: Option<PathBuf>,
    /// Alice's IPI file, one value in ms per line (needs --bob-ipis)
    #[arg(long, requires = "bob_ipis", conflicts_with = "record")]
    alice_ipis: Option<PathBuf>,
    #[arg(long, requires = "alice_ipis")]
    bob_ipis: Option<PathBuf>,
    #[arg(long)]
    alice_lead: Option<String>,
    #[arg(long)]
    bob_lead: Option<String>,
    /// Bits per symbol
    #[arg(long)]
    b: Option<u32>,
    /// Block length
    #[arg(long)]
    n: Option<usize>,
    /// Syndrome length
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    w_max: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// gray or natural
    #[arg(long)]
    bit_mapping: Option<BitMapping>,
    /// optimize, uniform or load:<path>
    #[arg(long)]
    quantizer: Option<QuantizerChoice>,
    #[arg(long)]
    bounds_bins: Option<usize>,
    /// Drop pairs whose IPIs differ by more than this many ms
    #[arg(long)]
    outlier_ms: Option<f64>,
    /// bounded, nearest or auto
    #[arg(long)]
    decoder: Option<DecoderKind>,
    #[arg(long)]
    coset_limit_bits: Option<usize>,
    #[arg(long)]
    grid_resolution_ms: Option<f64>,
    /// correlation or spectral
    #[arg(long)]
    mir_estimator: Option<MirEstimator>,
    /// Exit with status 4 when the decode failure rate exceeds this
    #[arg(long)]
    max_failure_rate: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig, PipelineError> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::load(path).map_err(|e| match e {
                PipelineError::Io { path, source } => {
                    PipelineError::Config(format!("cannot read {}: {source}", path.display()))
                }
                other => other,
            })?,
            None => PipelineConfig::default(),
        };
        if let (Some(path), Some(meta)) = (&self.record, &self.meta) {
            c.source = SourceConfig::Record {
                path: path.clone(),
                meta: meta.clone(),
            };
        }
        if let (Some(alice), Some(bob)) = (&self.alice_ipis, &self.bob_ipis) {
            c.source = SourceConfig::Ipis {
                alice: alice.clone(),
                bob: bob.clone(),
            };
        }
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = &self.$f { c.$f = v.clone(); })*};
        }
        set!(b, n, m, w_max, seed, bit_mapping, quantizer, bounds_bins, decoder, coset_limit_bits);
        set!(grid_resolution_ms, mir_estimator);
        if self.alice_lead.is_some() {
            c.alice_lead = self.alice_lead.clone();
        }
        if self.bob_lead.is_some() {
            c.bob_lead = self.bob_lead.clone();
        }
        if self.outlier_ms.is_some() {
            c.outlier_ms = self.outlier_ms;
        }
        if self.max_failure_rate.is_some() {
            c.max_failure_rate = self.max_failure_rate;
        }
        c.validate()?;
        Ok(c)
    }
}

fn simulated_source(
    model: Model,
    base: &SourceConfig,
    rho: Option<f64>,
    p: Option<f64>,
    blocks: Option<usize>,
) -> Result<SourceConfig, PipelineError> {
    let need = |v: Option<f64>, name: &str| v.ok_or_else(|| PipelineError::Config(format!("--{name} is required")));
    let flip_blocks = blocks.unwrap_or(100);
    Ok(match (model, base.clone()) {
        (Model::Gaussian, SourceConfig::Gaussian { mean_ms, std_ms, .. }) => SourceConfig::Gaussian {
            rho: need(rho, "rho")?,
            blocks: flip_blocks,
            mean_ms,
            std_ms,
        },
        (Model::Gaussian, _) => SourceConfig::Gaussian {
            rho: need(rho, "rho")?,
            blocks: flip_blocks,
            mean_ms: 800.0,
            std_ms: 50.0,
        },
        (Model::SymbolFlip, _) => SourceConfig::SymbolFlip {
            p: need(p, "p")?,
            blocks: flip_blocks,
            period_s: 0.8,
        },
        (Model::BitFlip, _) => SourceConfig::BitFlip {
            p: need(p, "p")?,
            blocks: flip_blocks,
            period_s: 0.8,
        },
        (Model::Ecg, SourceConfig::Ecg { .. }) if blocks.is_none() => base.clone(),
        (Model::Ecg, _) => {
            let mut v = json!({ "kind": "ecg" });
            if let Some(k) = blocks {
                v["blocks"] = json!(k);
            }
            serde_json::from_value(v).expect("ecg source defaults")
        }
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_session(dir: &Path, s: &Session) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    pipeline::write_json(&dir.join("report.json"), &s.report)?;
    pipeline::write_json(&dir.join("transcript.json"), &s.transcript)?;
    pipeline::write_json(&dir.join("bob_observation.json"), &s.bob_observation)?;
    write_text(&dir.join("key_alice.hex"), &(pipeline::format_key(&s.alice_key) + "\n"))?;
    write_text(&dir.join("key_bob.hex"), &(pipeline::format_key(&s.bob_key) + "\n"))?;
    Ok(())
}

fn summary(r: &SessionReport) {
    eprintln!(
        "pair {}-{}: {} blocks, {} errors ({} detected), key {} bits, match {}",
        r.pair_id.0, r.pair_id.1, r.blocks, r.block_errors, r.detected_failures, r.key_bits, r.keys_match
    );
    eprintln!(
        "disagreement: raw {:.2}%  pre {:.2}%  post {:.2}%  eve key {:.2}%  bob w/o syndrome {:.2}%",
        r.raw_disagreement_pct,
        r.pre_reconciliation_pct,
        r.post_reconciliation_pct,
        r.eve_key_disagreement_pct,
        r.bob_no_syndrome_pct
    );
    eprintln!(
        "rate {:.4} bit/s; bounds [{:.4}, {:.4}] bit/s{}",
        r.key_rate_bps,
        r.mir_lower_bps,
        r.mir_upper_bps,
        if r.bounds_crossed { " (crossed)" } else { "" }
    );
}

fn session_exit(config: &PipelineConfig, r: &SessionReport) -> u8 {
    if config.max_failure_rate.is_some_and(|max| r.decode_failure_rate > max) {
        EXIT_FAILURES
    } else if r.keys_match {
        0
    } else {
        EXIT_MISMATCH
    }
}

fn keygen(config: PipelineConfig, out: &Path) -> Result<u8> {
    let session = pipeline::run_session(&config)?;
    write_session(out, &session)?;
    summary(&session.report);
    Ok(session_exit(&config, &session.report))
}

fn read_key(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn replay(
    transcript: &Path,
    observation: &Path,
    bob_key: Option<&Path>,
    alice_key: Option<&Path>,
    report: &Path,
) -> Result<u8> {
    let t = Transcript::load(transcript)?;
    let obs = BobObservation::load(observation)?;
    let outcome = pipeline::replay(&t, &obs)?;
    let bob = BitBlock::try_from(&outcome.bob_key)?;
    let eve = BitBlock::try_from(&outcome.eve_key)?;
    let bob_text = pipeline::format_key(&bob) + "\n";
    let bob_identical = match bob_key {
        Some(p) => Some(read_key(p)?.as_bytes() == bob_text.as_bytes()),
        None => None,
    };
    let eve_pct = match alice_key {
        Some(p) => {
            let alice = pipeline::parse_key(&read_key(p)?)?;
            (alice.len() == eve.len() && !alice.is_empty())
                .then(|| 100.0 * alice.hamming(&eve) as f64 / alice.len() as f64)
        }
        None => None,
    };
    let doc = json!({
        "bob_key": pipeline::format_key(&bob),
        "eve_key": pipeline::format_key(&eve),
        "failed_blocks": outcome.failed_blocks,
        "failures_consistent": outcome.failures_consistent,
        "bob_key_identical": bob_identical,
        "eve_key_disagreement_pct": eve_pct,
    });
    pipeline::write_json(report, &doc)?;
    println!("{}", serde_json::to_string_pretty(&doc)?);
    let ok = outcome.failures_consistent && bob_identical.unwrap_or(true);
    Ok(if ok { 0 } else { EXIT_MISMATCH })
}

fn sweep(config: PipelineConfig, leads: Option<Vec<String>>, m_values: &[usize], out: &Path) -> Result<u8> {
    let leads = match leads {
        Some(l) => l,
        None => pipeline::source_leads(&config)?,
    };
    let rows = pipeline::sweep(&config, &leads, m_values)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    pipeline::write_sweep_csv(&out.join("sweep.csv"), &rows)?;
    for r in &rows {
        match (&r.report, &r.error) {
            (Some(rep), _) => eprintln!(
                "{}-{} M={}: failure rate {:.4}, rate {:.4} bit/s",
                r.alice, r.bob, r.m, rep.decode_failure_rate, rep.key_rate_bps
            ),
            (None, Some(e)) => eprintln!("{}-{} M={}: error: {e}", r.alice, r.bob, r.m),
            (None, None) => {}
        }
    }
    Ok(0)
}

fn quantize_design(config: PipelineConfig, output: &Path) -> Result<u8> {
    let (pair, pairs) = pipeline::load_pairs(&config)?;
    let (spec, stages) = pipeline::design_quantizer(&config, &pairs)?;
    spec.save(output)?;
    eprintln!("pair {}-{}: {} IPI pairs", pair.0, pair.1, pairs.len());
    for s in &stages {
        eprintln!("L={:>3}: objective {:.4} bits after {} sweeps", s.levels, s.objective, s.refine_sweeps);
    }
    let objective = ecgkey_core::quantizer::pairs_objective(&pairs, &spec.tau_x, &spec.tau_y)?;
    eprintln!("final objective {objective:.4} bits; wrote {}", output.display());
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Keygen { config, out } => keygen(config.resolve()?, &out.out),
        Command::Simulate {
            model,
            rho,
            p,
            blocks,
            config,
            out,
        } => {
            let mut c = config.resolve()?;
            c.source = simulated_source(model, &c.source, rho, p, blocks)?;
            c.validate()?;
            keygen(c, &out.out)
        }
        Command::Sweep {
            m_values,
            leads,
            config,
            out,
        } => sweep(config.resolve()?, leads, &m_values, &out.out),
        Command::Replay {
            transcript,
            observation,
            bob_key,
            alice_key,
            report,
        } => replay(&transcript, &observation, bob_key.as_deref(), alice_key.as_deref(), &report),
        Command::QuantizeDesign { config, output } => quantize_design(config.resolve()?, &output),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.downcast_ref::<PipelineError>().is_some_and(PipelineError::is_config);
            ExitCode::from(if config { EXIT_CONFIG } else { 1 })
        }
    }
}
