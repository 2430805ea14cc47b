//! Deterministic message bus with adversary hooks, the epoch driver that
//! pushes a trace through the meter, aggregator, and control-center state
//! machines, and detection-rate evaluation for the attack classes the
//! channel model allows: eavesdropping, replay, bit flips, additive
//! modification, forgery, and message deletion.
//!
//! Registration traffic is modeled as out-of-band; adversary hooks apply
//! only to the two public links.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::domain::{EpochConfig, FrameIndex, MeterReading, Mode, Registry};
use crate::entities::{
    register, Deployment, EntityError, Payload, ProtocolMessage, HEADER_LEN,
};
use crate::scenario::{DataSource, ScenarioConfig, ScenarioError, TraceTable};
use crate::shield::AGGREGATOR_INDEX;
use crate::watermark::WatermarkError;

// ---------------------------------------------------------------------------
// Adversary model
// ---------------------------------------------------------------------------

/// The two public links an adversary can reach.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Link {
    SmToDa,
    DaToCc,
}

/// How an additive tamper picks its delta.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaSpec {
    Fixed(i64),
    UniformRandom,
    RandomOdd,
    RandomEven,
}

/// One adversarial capability, applied to a message in flight. Bit indices
/// count payload bits from the most significant bit of the first payload
/// byte; additive deltas apply to the trailing 8 payload bytes read as a
/// big-endian integer, wrapping mod 2^64.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TamperAction {
    /// Flip one payload bit; `None` draws a uniform bit index per strike.
    BitFlip(Option<u8>),
    /// Replace the message with the same sender's previous one.
    ReplayPrevious,
    /// Delete the message.
    Drop,
    /// Replace the payload, keeping the header plausible; `None` draws
    /// uniform random payload bytes per strike.
    InjectForged(Option<Vec<u8>>),
    /// Add a delta to the trailing 8 payload bytes.
    ModifyAdd(DeltaSpec),
}

/// Which frames a script strikes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FramePredicate {
    All,
    Single(u32),
    Range(u32, u32),
    EveryNth(u32),
}

impl FramePredicate {
    pub fn matches(&self, frame: u32) -> bool {
        match *self {
            FramePredicate::All => true,
            FramePredicate::Single(j) => frame == j,
            FramePredicate::Range(a, b) => frame >= a && frame <= b,
            FramePredicate::EveryNth(k) => k >= 1 && frame.is_multiple_of(k),
        }
    }
}

/// A scripted adversary: one action, one link, an optional meter filter
/// (meter link only), a frame predicate, and its own RNG seed so runs stay
/// reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryScript {
    pub action: TamperAction,
    pub link: Link,
    pub meter_filter: Option<u32>,
    pub frames: FramePredicate,
    pub rng_seed: u64,
}

/// Outcome of carrying one message across a channel.
pub struct Delivery {
    pub bytes: Option<Vec<u8>>,
    pub altered: bool,
}

/// One public link. Remembers each sender's previous message so a replay
/// has something to resend, and counts carried messages.
pub struct Channel {
    script: Option<ScriptState>,
    last_seen: BTreeMap<u32, Vec<u8>>,
    messages_carried: u64,
}

struct ScriptState {
    script: AdversaryScript,
    rng: ChaCha8Rng,
}

impl Channel {
    pub fn new(link: Link, script: Option<AdversaryScript>) -> Self {
        let script = script.map(|s| {
            debug_assert_eq!(s.link, link, "script routed to the wrong link");
            ScriptState {
                rng: ChaCha8Rng::seed_from_u64(s.rng_seed),
                script: s,
            }
        });
        Channel {
            script,
            last_seen: BTreeMap::new(),
            messages_carried: 0,
        }
    }

    pub fn messages_carried(&self) -> u64 {
        self.messages_carried
    }

    /// Carries one message. The adversary, if scripted for this frame and
    /// sender, strikes the serialized bytes; `altered` reports whether the
    /// delivery differs from what was sent.
    pub fn send(&mut self, bytes: Vec<u8>, sender: u32, frame: u32) -> Delivery {
        self.messages_carried += 1;
        let delivered = match &mut self.script {
            Some(state)
                if state.script.frames.matches(frame)
                    && state.script.meter_filter.is_none_or(|m| m == sender) =>
            {
                apply_action(
                    &state.script.action,
                    &mut state.rng,
                    &bytes,
                    self.last_seen.get(&sender),
                )
            }
            _ => Some(bytes.clone()),
        };
        let altered = delivered.as_deref() != Some(bytes.as_slice());
        self.last_seen.insert(sender, bytes);
        Delivery {
            bytes: delivered,
            altered,
        }
    }
}

fn apply_action(
    action: &TamperAction,
    rng: &mut ChaCha8Rng,
    original: &[u8],
    previous: Option<&Vec<u8>>,
) -> Option<Vec<u8>> {
    match action {
        TamperAction::Drop => None,
        TamperAction::ReplayPrevious => {
            Some(previous.cloned().unwrap_or_else(|| original.to_vec()))
        }
        TamperAction::BitFlip(bit) => {
            let mut out = original.to_vec();
            let payload_bits = ((out.len() - HEADER_LEN) * 8) as u32;
            let idx = match bit {
                Some(b) => u32::from(*b),
                None => rng.gen_range(0..payload_bits),
            };
            debug_assert!(idx < payload_bits, "bit index validated at config time");
            out[HEADER_LEN + (idx / 8) as usize] ^= 1 << (7 - (idx % 8));
            Some(out)
        }
        TamperAction::InjectForged(payload) => {
            let mut out = original.to_vec();
            match payload {
                Some(p) => out[HEADER_LEN..].copy_from_slice(p),
                None => rng.fill(&mut out[HEADER_LEN..]),
            }
            Some(out)
        }
        TamperAction::ModifyAdd(spec) => {
            let mut out = original.to_vec();
            let delta: u64 = match spec {
                DeltaSpec::Fixed(d) => *d as u64,
                DeltaSpec::UniformRandom => rng.gen(),
                DeltaSpec::RandomOdd => rng.gen::<u64>() | 1,
                DeltaSpec::RandomEven => rng.gen::<u64>() & !1,
            };
            let tail = out.len() - 8;
            let v = u64::from_be_bytes(out[tail..].try_into().unwrap());
            out[tail..].copy_from_slice(&v.wrapping_add(delta).to_be_bytes());
            Some(out)
        }
    }
}

// ---------------------------------------------------------------------------
// Run reports
// ---------------------------------------------------------------------------

/// How one frame ended at the receiving side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    /// Aggregate recovered and equal to ground truth.
    Clean,
    /// Watermark parity mismatch; frame declined.
    DetectedParity,
    /// Block padding nonzero after decryption; frame declined.
    DetectedPadding,
    /// Frame index stale or ahead; message rejected.
    DetectedFreshness,
    /// A message never arrived.
    DetectedMissing,
    /// Watermark parity passed but recovery was non-integral.
    DetectedNonIntegral,
    /// Message failed structural parsing.
    DetectedMalformed,
    /// Aggregate recovered but differs from ground truth.
    CorruptedUndetected,
}

impl Verdict {
    pub fn is_detection(self) -> bool {
        !matches!(self, Verdict::Clean | Verdict::CorruptedUndetected)
    }

    pub fn name(self) -> &'static str {
        match self {
            Verdict::Clean => "clean",
            Verdict::DetectedParity => "detected-parity",
            Verdict::DetectedPadding => "detected-padding",
            Verdict::DetectedFreshness => "detected-freshness",
            Verdict::DetectedMissing => "detected-missing",
            Verdict::DetectedNonIntegral => "detected-non-integral",
            Verdict::DetectedMalformed => "detected-malformed",
            Verdict::CorruptedUndetected => "corrupted-undetected",
        }
    }
}

/// Per-frame outcome. `attacked` marks frames where a delivery actually
/// differed from what was sent. In high-frequency mode the two frames of a
/// pair are verified together, so a tamper on one frame can surface on its
/// sibling's recovered value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameRecord {
    pub frame: u32,
    pub attacked: bool,
    pub verdict: Verdict,
    pub recovered_raw: Option<i64>,
    pub truth_raw: i64,
    pub exact: Option<bool>,
}

/// Complete, deterministic record of one epoch run. Contains no clocks or
/// host state: identical configs produce byte-identical reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub mode: String,
    pub meters_registered: u32,
    pub effective_meters: u32,
    pub master_seed: u64,
    pub freshness_checks: bool,
    pub adversary: Option<String>,
    pub frames_total: u32,
    pub frames_attacked: u32,
    pub frames_detected: u32,
    pub detections_on_attacked: u32,
    pub frames_corrupted_undetected: u32,
    pub frames_recovered_exact: u32,
    pub detections_by_kind: BTreeMap<String, u32>,
    pub sm_to_da_messages: u64,
    pub da_to_cc_messages: u64,
    pub frames: Vec<FrameRecord>,
}

impl RunReport {
    pub fn all_clean_and_exact(&self) -> bool {
        self.frames_detected == 0
            && self.frames_corrupted_undetected == 0
            && self.frames_recovered_exact == self.frames_total
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Per-frame verdicts as CSV, one row per frame.
    pub fn frames_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for rec in &self.frames {
            w.serialize(rec).expect("frame record serializes");
        }
        String::from_utf8(w.into_inner().expect("csv buffer")).expect("csv is utf-8")
    }

    fn from_frames(cfg: &ScenarioConfig, frames: Vec<FrameRecord>, sm_msgs: u64, cc_msgs: u64) -> Self {
        let mut detections_by_kind: BTreeMap<String, u32> = BTreeMap::new();
        let mut attacked = 0;
        let mut detected = 0;
        let mut detected_attacked = 0;
        let mut corrupted = 0;
        let mut exact = 0;
        for rec in &frames {
            if rec.attacked {
                attacked += 1;
            }
            if rec.verdict.is_detection() {
                detected += 1;
                if rec.attacked {
                    detected_attacked += 1;
                }
                *detections_by_kind.entry(rec.verdict.name().into()).or_insert(0) += 1;
            }
            if rec.verdict == Verdict::CorruptedUndetected {
                corrupted += 1;
            }
            if rec.exact == Some(true) {
                exact += 1;
            }
        }
        RunReport {
            mode: match cfg.epoch.mode {
                Mode::LowFrequency => "low".into(),
                Mode::HighFrequency => "high".into(),
            },
            meters_registered: cfg.epoch.n_registered,
            effective_meters: Registry::build(cfg.epoch.n_registered).effective_n(),
            master_seed: cfg.master_seed,
            freshness_checks: cfg.check_freshness,
            adversary: cfg.adversary.as_ref().map(|s| format!("{s:?}")),
            frames_total: frames.len() as u32,
            frames_attacked: attacked,
            frames_detected: detected,
            detections_on_attacked: detected_attacked,
            frames_corrupted_undetected: corrupted,
            frames_recovered_exact: exact,
            detections_by_kind,
            sm_to_da_messages: sm_msgs,
            da_to_cc_messages: cc_msgs,
            frames,
        }
    }
}

// ---------------------------------------------------------------------------
// Epoch driver
// ---------------------------------------------------------------------------

fn verdict_from_error(e: &EntityError) -> Verdict {
    match e {
        EntityError::FrameMismatch { .. } => Verdict::DetectedFreshness,
        EntityError::MissingMeter { .. } => Verdict::DetectedMissing,
        EntityError::TamperSuspected { .. } => Verdict::DetectedPadding,
        EntityError::Watermark(WatermarkError::TamperDetected { .. }) => Verdict::DetectedParity,
        EntityError::Watermark(WatermarkError::NonIntegralRecovery { .. }) => {
            Verdict::DetectedNonIntegral
        }
        _ => Verdict::DetectedMalformed,
    }
}

fn declined(frame: u32, attacked: bool, verdict: Verdict, truth: i64) -> FrameRecord {
    FrameRecord {
        frame,
        attacked,
        verdict,
        recovered_raw: None,
        truth_raw: truth,
        exact: None,
    }
}

fn recovered(frame: u32, attacked: bool, raw: i64, truth: i64) -> FrameRecord {
    let exact = raw == truth;
    FrameRecord {
        frame,
        attacked,
        verdict: if exact {
            Verdict::Clean
        } else {
            Verdict::CorruptedUndetected
        },
        recovered_raw: Some(raw),
        truth_raw: truth,
        exact: Some(exact),
    }
}

/// Sends every meter's message for one frame across the meter link and
/// parses what arrives. Returns the parsed batch, whether any delivery was
/// altered, and whether any arrival failed to parse.
fn deliver_meter_batch(
    ch_sm: &mut Channel,
    msgs: Vec<ProtocolMessage>,
    frame: u32,
) -> (Vec<ProtocolMessage>, bool, bool) {
    let mut batch = Vec::with_capacity(msgs.len());
    let mut attacked = false;
    let mut malformed = false;
    for msg in msgs {
        let sender = msg.sender;
        let delivery = ch_sm.send(msg.to_bytes(), sender, frame);
        attacked |= delivery.altered;
        if let Some(bytes) = delivery.bytes {
            match ProtocolMessage::from_bytes(&bytes) {
                Ok(m) => batch.push(m),
                Err(_) => malformed = true,
            }
        }
    }
    (batch, attacked, malformed)
}

fn run_low_frame(
    dep: &mut Deployment,
    trace: &TraceTable,
    ch_sm: &mut Channel,
    ch_cc: &mut Channel,
    j: u32,
) -> FrameRecord {
    let f = FrameIndex::new(j);
    let truth = trace.truth_raw(f);

    let msgs: Vec<ProtocolMessage> = dep
        .sms
        .iter()
        .enumerate()
        .map(|(pos, sm)| {
            let d = MeterReading::new(trace.raw(pos, f), sm.meter(), f)
                .expect("trace readings are validated");
            sm.sm_step_low(d, f).expect("sealing a valid reading cannot fail")
        })
        .collect();
    let (batch, mut attacked, malformed) = deliver_meter_batch(ch_sm, msgs, j);

    let agg = match dep.da.da_step(&batch) {
        Err(e) => {
            dep.cc.skip_frames(1);
            let verdict = if malformed {
                Verdict::DetectedMalformed
            } else {
                verdict_from_error(&e)
            };
            return declined(j, attacked, verdict, truth);
        }
        Ok(agg) => agg,
    };

    let delivery = ch_cc.send(agg.to_bytes(), AGGREGATOR_INDEX, j);
    attacked |= delivery.altered;
    let Some(bytes) = delivery.bytes else {
        dep.cc.skip_frames(1);
        return declined(j, attacked, Verdict::DetectedMissing, truth);
    };
    let msg = match ProtocolMessage::from_bytes(&bytes) {
        Ok(m) => m,
        Err(_) => {
            dep.cc.skip_frames(1);
            return declined(j, attacked, Verdict::DetectedMalformed, truth);
        }
    };
    match dep.cc.cc_step_low(&msg) {
        Err(e) => declined(j, attacked, verdict_from_error(&e), truth),
        Ok(out) => recovered(j, attacked, out.raw_sum, truth),
    }
}

fn run_high_pair(
    dep: &mut Deployment,
    trace: &TraceTable,
    ch_sm: &mut Channel,
    ch_cc: &mut Channel,
    pair: u32,
) -> (FrameRecord, FrameRecord) {
    let odd = FrameIndex::new(2 * pair - 1);
    let even = odd.next();
    let truth1 = trace.truth_raw(odd);
    let truth2 = trace.truth_raw(even);

    let mut msgs1 = Vec::with_capacity(dep.sms.len());
    let mut msgs2 = Vec::with_capacity(dep.sms.len());
    for (pos, sm) in dep.sms.iter().enumerate() {
        let d1 = MeterReading::new(trace.raw(pos, odd), sm.meter(), odd)
            .expect("trace readings are validated");
        let d2 = MeterReading::new(trace.raw(pos, even), sm.meter(), even)
            .expect("trace readings are validated");
        let (m1, m2) = sm
            .sm_step_high(d1, d2, pair)
            .expect("sealing valid readings cannot fail");
        msgs1.push(m1);
        msgs2.push(m2);
    }
    let (batch1, attacked1, malformed1) = deliver_meter_batch(ch_sm, msgs1, odd.get());
    let (batch2, attacked2, malformed2) = deliver_meter_batch(ch_sm, msgs2, even.get());
    let mut attacked = [attacked1, attacked2];

    let results = [dep.da.da_step(&batch1), dep.da.da_step(&batch2)];
    if results.iter().any(|r| r.is_err()) {
        dep.cc.skip_frames(2);
        let verdict_of = |r: &Result<ProtocolMessage, EntityError>, malformed: bool| match r {
            Err(_) if malformed => Verdict::DetectedMalformed,
            Err(e) => verdict_from_error(e),
            // The sibling frame is declined because its pair is incomplete.
            Ok(_) => Verdict::DetectedMissing,
        };
        return (
            declined(odd.get(), attacked[0], verdict_of(&results[0], malformed1), truth1),
            declined(even.get(), attacked[1], verdict_of(&results[1], malformed2), truth2),
        );
    }
    let [Ok(agg1), Ok(agg2)] = results else { unreachable!() };

    let mut arrivals: Vec<Result<ProtocolMessage, Verdict>> = Vec::with_capacity(2);
    for (agg, frame) in [(agg1, odd), (agg2, even)] {
        let delivery = ch_cc.send(agg.to_bytes(), AGGREGATOR_INDEX, frame.get());
        attacked[(frame.get() & 1) as usize ^ 1] |= delivery.altered;
        arrivals.push(match delivery.bytes {
            None => Err(Verdict::DetectedMissing),
            Some(bytes) => match ProtocolMessage::from_bytes(&bytes) {
                Ok(m) => Ok(m),
                Err(_) => Err(Verdict::DetectedMalformed),
            },
        });
    }
    let (m1, m2) = match (&arrivals[0], &arrivals[1]) {
        (Ok(m1), Ok(m2)) => (*m1, *m2),
        (a, b) => {
            dep.cc.skip_frames(2);
            let v1 = a.as_ref().err().copied().unwrap_or(Verdict::DetectedMissing);
            let v2 = b.as_ref().err().copied().unwrap_or(Verdict::DetectedMissing);
            return (
                declined(odd.get(), attacked[0], v1, truth1),
                declined(even.get(), attacked[1], v2, truth2),
            );
        }
    };

    match dep.cc.cc_step_high(&m1, &m2) {
        // Verification is a pair property: a failure declines both frames.
        Err(e) => {
            let v = verdict_from_error(&e);
            (
                declined(odd.get(), attacked[0], v, truth1),
                declined(even.get(), attacked[1], v, truth2),
            )
        }
        Ok((o1, o2)) => (
            recovered(odd.get(), attacked[0], o1.raw_sum, truth1),
            recovered(even.get(), attacked[1], o2.raw_sum, truth2),
        ),
    }
}

/// Runs one full epoch: registration out-of-band, then every frame through
/// the two adversarial links. Deterministic: the report is a pure function
/// of the config.
pub fn run_epoch(cfg: &ScenarioConfig) -> Result<RunReport, ScenarioError> {
    cfg.validate()?;
    let trace = cfg.trace()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.master_seed);
    let mut dep = register(&cfg.epoch, &mut rng, cfg.check_freshness);

    let (script_sm, script_cc) = match cfg.adversary.clone() {
        Some(s) if s.link == Link::SmToDa => (Some(s), None),
        Some(s) => (None, Some(s)),
        None => (None, None),
    };
    let mut ch_sm = Channel::new(Link::SmToDa, script_sm);
    let mut ch_cc = Channel::new(Link::DaToCc, script_cc);

    let mut frames = Vec::with_capacity(cfg.epoch.m as usize);
    match cfg.epoch.mode {
        Mode::LowFrequency => {
            for j in 1..=cfg.epoch.m {
                frames.push(run_low_frame(&mut dep, &trace, &mut ch_sm, &mut ch_cc, j));
            }
        }
        Mode::HighFrequency => {
            for pair in 1..=(cfg.epoch.m / 2) {
                let (r1, r2) = run_high_pair(&mut dep, &trace, &mut ch_sm, &mut ch_cc, pair);
                frames.push(r1);
                frames.push(r2);
            }
        }
    }

    Ok(RunReport::from_frames(
        cfg,
        frames,
        ch_sm.messages_carried(),
        ch_cc.messages_carried(),
    ))
}

// ---------------------------------------------------------------------------
// Eavesdropping probe
// ---------------------------------------------------------------------------

/// Result of the repeated-plaintext probe: the same reading sealed in
/// different frames (or by different meters in the same frame) must never
/// produce the same ciphertext payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LeakageVerdict {
    pub payloads_observed: u64,
    pub distinct_payloads: u64,
    pub collisions: u64,
    pub leak_free: bool,
}

/// Seals a constant reading with every meter over `frames` frames and
/// counts ciphertext collisions on the meter link.
pub fn eavesdrop_probe(
    epoch: &EpochConfig,
    master_seed: u64,
    constant_raw: u64,
    frames: u32,
) -> LeakageVerdict {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    let dep = register(epoch, &mut rng, true);
    let frames = frames.min(epoch.m);
    let mut seen: BTreeSet<[u8; 16]> = BTreeSet::new();
    let mut observed: u64 = 0;

    let mut record = |msg: &ProtocolMessage| {
        let Payload::Block(b) = msg.payload else {
            unreachable!("meters emit cipher blocks")
        };
        observed += 1;
        seen.insert(*b.as_bytes());
    };

    match epoch.mode {
        Mode::LowFrequency => {
            for j in 1..=frames {
                let f = FrameIndex::new(j);
                for sm in &dep.sms {
                    let raw = if sm.meter().is_dummy() { 0 } else { constant_raw };
                    let d = MeterReading::new(raw, sm.meter(), f).expect("constant in range");
                    record(&sm.sm_step_low(d, f).expect("valid reading"));
                }
            }
        }
        Mode::HighFrequency => {
            for pair in 1..=(frames / 2) {
                let odd = FrameIndex::new(2 * pair - 1);
                let even = odd.next();
                for sm in &dep.sms {
                    let raw = if sm.meter().is_dummy() { 0 } else { constant_raw };
                    let d1 = MeterReading::new(raw, sm.meter(), odd).expect("in range");
                    let d2 = MeterReading::new(raw, sm.meter(), even).expect("in range");
                    let (m1, m2) = sm.sm_step_high(d1, d2, pair).expect("valid readings");
                    record(&m1);
                    record(&m2);
                }
            }
        }
    }

    let distinct = seen.len() as u64;
    LeakageVerdict {
        payloads_observed: observed,
        distinct_payloads: distinct,
        collisions: observed - distinct,
        leak_free: observed == distinct,
    }
}

// ---------------------------------------------------------------------------
// Attack evaluation
// ---------------------------------------------------------------------------

/// 95% Wilson score interval for a binomial proportion.
pub fn wilson_ci(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054_f64;
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = (z / denom) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    // At the extremes the exact endpoints are 0 and 1; snap them so float
    // roundoff cannot push the interval off the observed proportion.
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackEvalRow {
    pub attack: String,
    pub link: Link,
    pub freshness_checks: bool,
    pub frames_attacked: u32,
    pub detected: u32,
    pub rate: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
    pub expected: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackEvalReport {
    pub mode: String,
    pub trials: u32,
    pub rows: Vec<AttackEvalRow>,
}

impl AttackEvalReport {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Plain-text table for terminal output.
    pub fn human_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<34} {:>8} {:>9} {:>7}  {:<16} {}\n",
            "attack", "attacked", "detected", "rate", "95% CI", "expected"
        ));
        for row in &self.rows {
            out.push_str(&format!(
                "{:<34} {:>8} {:>9} {:>7.4}  [{:.4}, {:.4}] {}\n",
                row.attack,
                row.frames_attacked,
                row.detected,
                row.rate,
                row.ci95_low,
                row.ci95_high,
                row.expected
            ));
        }
        out
    }
}

/// Runs every attack class against a derived scenario of `trials` attacked
/// frames each and reports detection rates with confidence intervals.
pub fn attack_eval(base: &ScenarioConfig, trials: u32) -> Result<AttackEvalReport, ScenarioError> {
    if trials < 1000 {
        return Err(ScenarioError::Config(
            "attack evaluation needs at least 1000 trials".into(),
        ));
    }
    let mode = base.epoch.mode;
    let m = match mode {
        Mode::LowFrequency => trials,
        Mode::HighFrequency => trials + (trials % 2),
    };
    let max_raw = match base.data {
        DataSource::Synthetic { max_raw } => max_raw,
        DataSource::Csv(_) => 10_000,
    };
    let epoch = EpochConfig::new(
        mode,
        base.epoch.n_registered,
        m,
        base.epoch.hash_alg,
        base.epoch.aes_size,
        base.epoch.scale,
        EpochConfig::regular_timestamps(0, crate::scenario::default_step(mode), m),
    )?;

    struct Case {
        label: &'static str,
        action: TamperAction,
        link: Link,
        freshness: bool,
        expected: &'static str,
    }
    let cases = [
        Case {
            label: "replay previous (freshness on)",
            action: TamperAction::ReplayPrevious,
            link: Link::DaToCc,
            freshness: true,
            expected: "1.0 (frame check)",
        },
        Case {
            label: "replay previous (freshness off)",
            action: TamperAction::ReplayPrevious,
            link: Link::DaToCc,
            freshness: false,
            expected: "~0.5 (parity)",
        },
        Case {
            label: "bit flip, random payload bit",
            action: TamperAction::BitFlip(None),
            link: Link::DaToCc,
            freshness: true,
            expected: "~1/64 (parity)",
        },
        Case {
            label: "modify-add, odd delta",
            action: TamperAction::ModifyAdd(DeltaSpec::RandomOdd),
            link: Link::DaToCc,
            freshness: true,
            expected: "1.0 (parity)",
        },
        Case {
            label: "modify-add, even delta",
            action: TamperAction::ModifyAdd(DeltaSpec::RandomEven),
            link: Link::DaToCc,
            freshness: true,
            expected: "0.0 (parity-blind)",
        },
        Case {
            label: "modify-add, uniform delta",
            action: TamperAction::ModifyAdd(DeltaSpec::UniformRandom),
            link: Link::DaToCc,
            freshness: true,
            expected: "~0.5 (parity)",
        },
        Case {
            label: "inject forged payload, meter link",
            action: TamperAction::InjectForged(None),
            link: Link::SmToDa,
            freshness: true,
            expected: "~1.0 (padding)",
        },
        Case {
            label: "drop, aggregator link",
            action: TamperAction::Drop,
            link: Link::DaToCc,
            freshness: true,
            expected: "1.0 (missing)",
        },
    ];

    let mut rows = Vec::new();

    // Eavesdropping is measured as payload distinctness under a repeated
    // plaintext, not as a per-frame detection.
    let probe = eavesdrop_probe(&epoch, base.master_seed, max_raw / 2, m);
    let (lo, hi) = wilson_ci(probe.distinct_payloads, probe.payloads_observed);
    rows.push(AttackEvalRow {
        attack: "eavesdrop (repeated plaintext distinctness)".into(),
        link: Link::SmToDa,
        freshness_checks: true,
        frames_attacked: probe.payloads_observed as u32,
        detected: probe.distinct_payloads as u32,
        rate: if probe.payloads_observed == 0 {
            1.0
        } else {
            probe.distinct_payloads as f64 / probe.payloads_observed as f64
        },
        ci95_low: lo,
        ci95_high: hi,
        expected: "1.0 (distinct ciphertexts)".into(),
    });

    for (i, case) in cases.iter().enumerate() {
        let cfg = ScenarioConfig {
            epoch: epoch.clone(),
            data: DataSource::Synthetic { max_raw },
            adversary: Some(AdversaryScript {
                action: case.action.clone(),
                link: case.link,
                meter_filter: None,
                frames: FramePredicate::All,
                rng_seed: base.master_seed ^ (0x0105_0431 + i as u64),
            }),
            master_seed: base.master_seed,
            check_freshness: case.freshness,
            out_dir: None,
        };
        let report = run_epoch(&cfg)?;
        let (lo, hi) = wilson_ci(
            report.detections_on_attacked as u64,
            report.frames_attacked as u64,
        );
        rows.push(AttackEvalRow {
            attack: case.label.into(),
            link: case.link,
            freshness_checks: case.freshness,
            frames_attacked: report.frames_attacked,
            detected: report.detections_on_attacked,
            rate: if report.frames_attacked == 0 {
                0.0
            } else {
                f64::from(report.detections_on_attacked) / f64::from(report.frames_attacked)
            },
            ci95_low: lo,
            ci95_high: hi,
            expected: case.expected.into(),
        });
    }

    Ok(AttackEvalReport {
        mode: match mode {
            Mode::LowFrequency => "low".into(),
            Mode::HighFrequency => "high".into(),
        },
        trials: m,
        rows,
    })
}
