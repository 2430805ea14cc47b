//! Privacy-preserving smart-meter aggregation with reversible watermarking.
//!
//! Meters embed a keyed watermark bit into each reading, mask and encrypt
//! it, and send it to an aggregator that can sum but not read the values.
//! The control center strips the masks, checks the watermark parity of the
//! aggregate to detect in-transit tampering, and recovers the exact sum.
//!
//! Modules, bottom-up:
//!
//! - [`domain`]: readings, fixed-point codec, frame/meter identifiers,
//!   epoch configuration, and the registry with its odd-count dummy meter.
//! - [`watermark`]: watermark schedule generation and the two reversible
//!   embeddings (LSB shift for low-frequency, difference expansion for
//!   high-frequency) with aggregate-level verification.
//! - [`shield`]: AES block encryption, the block codec, and the three mask
//!   streams R1/R2/R3.
//! - [`entities`]: the meter, aggregator, and control-center state machines,
//!   the wire format, and the registration phase.
//! - [`netsim`]: deterministic message bus with scripted adversaries, the
//!   epoch driver, and detection-rate evaluation.
//! - [`scenario`]: TOML scenario configs, CSV trace ingestion, and synthetic
//!   trace generation.
//! - [`bench`]: wall-clock microbenchmarks for the initialization and
//!   per-frame iteration workloads.

pub mod bench;
pub mod domain;
pub mod entities;
pub mod netsim;
pub mod scenario;
pub mod shield;
pub mod watermark;

pub use bench::{run_bench, BenchConfig, BenchReport, TimingStats};
pub use domain::{
    AesKeySize, DomainError, EpochConfig, FrameIndex, HashAlg, MeterId, MeterReading, Mode,
    Registry, Scale,
};
pub use entities::{
    register, AggregateOutcome, CcState, DaState, Deployment, EntityError, Payload,
    ProtocolMessage, SmState,
};
pub use netsim::{
    attack_eval, eavesdrop_probe, run_epoch, wilson_ci, AdversaryScript, AttackEvalReport,
    AttackEvalRow, Channel, Delivery, DeltaSpec, FramePredicate, FrameRecord, LeakageVerdict,
    Link, RunReport, TamperAction, Verdict,
};
pub use scenario::{
    load_csv, synth_trace, DataSource, ScenarioConfig, ScenarioError, TraceTable,
};
pub use shield::{AesKey, CipherBlock, KeyMaterial, MaskSeed, SeedSet, ShieldError, StreamTag};
pub use watermark::{
    generate_watermark, AggregateFrame, WatermarkError, WatermarkKey, WatermarkSchedule,
};
