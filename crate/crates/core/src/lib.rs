//! ECG inter-pulse-interval secret key agreement.
//!
//! Two sensors on one body observe correlated heartbeat timing. Each side
//! quantizes its inter-pulse intervals; Alice publishes per-block syndromes,
//! Bob decodes Alice's bits from them, and both compress their blocks with a
//! matrix chosen so that the key is independent of what was published.

pub mod ecg_io;
pub mod gf2;
pub mod ipi;
pub mod metrics;
pub mod pipeline;
pub mod privacy;
pub mod quantizer;
pub mod reconcile;

pub use ecg_io::{EcgRecord, RecordMeta, Signal};
pub use gf2::{BitBlock, Gf2Matrix, HexBits};
pub use ipi::{IpiSequence, PairedIpis};
pub use metrics::{MirEstimator, SessionReport};
pub use pipeline::{BobObservation, PipelineConfig, PipelineError, QuantizerChoice, Session, SourceConfig, Transcript};
pub use privacy::AmplifierSpec;
pub use quantizer::{BitMapping, JointHistogram, QuantizerSpec};
pub use reconcile::{CodeConfig, DecoderKind};
