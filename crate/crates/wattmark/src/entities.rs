//! The three protocol state machines: smart meter (watermark, mask,
//! encrypt), data aggregator (decrypt, sum, re-mask), and control center
//! (unmask, verify, recover). Each holds exactly the secrets its role is
//! allowed: the aggregator can sum but never unmask a reading, the control
//! center can verify aggregates but never decrypt an individual meter.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{EpochConfig, FrameIndex, MeterId, MeterReading, Mode, Registry, Scale};
use crate::shield::{
    add_mask, block_decode, block_encode, mask128, mask64, xor_layer, AesKey, BlockCipher,
    CipherBlock, KeyMaterial, MaskSeed, ShieldError, StreamTag, AGGREGATOR_INDEX,
};
use crate::watermark::{
    generate_watermark, rde_verify_extract, rls_embed, rls_verify_extract, rde_embed,
    AggregateFrame, WatermarkError, WatermarkSchedule,
};

pub const WIRE_VERSION: u8 = 0x01;
/// version + mode + sender + frame.
pub const HEADER_LEN: usize = 10;
/// Meter-to-aggregator message: header plus one cipher block.
pub const SM_TO_DA_LEN: usize = HEADER_LEN + 16;
/// Aggregator-to-control-center message: header plus one masked aggregate.
pub const DA_TO_CC_LEN: usize = HEADER_LEN + 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EntityError {
    #[error("frame {got} does not match expected frame {expected}")]
    FrameMismatch { expected: u32, got: u32 },
    #[error("no message from meter {meter} for frame {frame}")]
    MissingMeter { meter: u32, frame: u32 },
    #[error("duplicate message from sender {sender}")]
    DuplicateSender { sender: u32 },
    #[error("message from unregistered sender {sender}")]
    UnknownSender { sender: u32 },
    #[error("reading belongs to meter {got}, this meter is {expected}")]
    WrongMeter { expected: u32, got: u32 },
    #[error("padding violation in message from sender {sender} at frame {frame}: tampering suspected")]
    TamperSuspected { sender: u32, frame: u32 },
    #[error(transparent)]
    Watermark(#[from] WatermarkError),
    #[error("malformed message: {0}")]
    Malformed(String),
}

// ---------------------------------------------------------------------------
// Wire format
// ---------------------------------------------------------------------------

/// Message payload: a full cipher block upstream of the aggregator, a masked
/// 64-bit aggregate downstream of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Payload {
    Block(CipherBlock),
    Aggregate(u64),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::Block(_) => 16,
            Payload::Aggregate(_) => 8,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// One protocol message. Wire layout, all header fields big-endian:
/// version(1) ‖ mode(1) ‖ sender_id(4) ‖ frame(4) ‖ payload(16 or 8).
/// Meters send with their 1-based registry index, the aggregator with
/// sender id 0. Total size is fixed per direction: 26 bytes meter to
/// aggregator, 18 bytes aggregator to control center.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProtocolMessage {
    pub version: u8,
    pub mode: Mode,
    pub sender: u32,
    pub frame: FrameIndex,
    pub payload: Payload,
}

impl ProtocolMessage {
    pub fn new(mode: Mode, sender: u32, frame: FrameIndex, payload: Payload) -> Self {
        ProtocolMessage {
            version: WIRE_VERSION,
            mode,
            sender,
            frame,
            payload,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.push(self.version);
        out.push(self.mode.wire_byte());
        out.extend_from_slice(&self.sender.to_be_bytes());
        out.extend_from_slice(&self.frame.get().to_be_bytes());
        match self.payload {
            Payload::Block(b) => out.extend_from_slice(b.as_bytes()),
            Payload::Aggregate(q) => out.extend_from_slice(&q.to_be_bytes()),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EntityError> {
        if bytes.len() != SM_TO_DA_LEN && bytes.len() != DA_TO_CC_LEN {
            return Err(EntityError::Malformed(format!(
                "invalid message length {}",
                bytes.len()
            )));
        }
        let version = bytes[0];
        if version != WIRE_VERSION {
            return Err(EntityError::Malformed(format!(
                "unknown version byte 0x{version:02x}"
            )));
        }
        let mode = Mode::from_wire_byte(bytes[1])
            .ok_or_else(|| EntityError::Malformed(format!("unknown mode byte 0x{:02x}", bytes[1])))?;
        let sender = u32::from_be_bytes(bytes[2..6].try_into().unwrap());
        let frame = u32::from_be_bytes(bytes[6..10].try_into().unwrap());
        if frame == 0 {
            return Err(EntityError::Malformed("frame index 0".into()));
        }
        let payload = if bytes.len() == SM_TO_DA_LEN {
            Payload::Block(CipherBlock::from_bytes(bytes[10..26].try_into().unwrap()))
        } else {
            Payload::Aggregate(u64::from_be_bytes(bytes[10..18].try_into().unwrap()))
        };
        Ok(ProtocolMessage {
            version,
            mode,
            sender,
            frame: FrameIndex::new(frame),
            payload,
        })
    }
}

/// Frame at which the R1 and R2 streams are drawn: every frame in
/// low-frequency mode, once per pair (at the even frame) in high-frequency
/// mode.
fn shared_mask_frame(mode: Mode, frame: FrameIndex) -> FrameIndex {
    match mode {
        Mode::LowFrequency => frame,
        Mode::HighFrequency => frame.pair_even(),
    }
}

// ---------------------------------------------------------------------------
// Smart meter
// ---------------------------------------------------------------------------

/// Smart meter state: its AES key, its R1 and R3 seeds, and the watermark
/// schedule. Never holds the R2 seed.
pub struct SmState {
    meter: MeterId,
    mode: Mode,
    cipher: BlockCipher,
    r1_seed: MaskSeed,
    r3_seed: MaskSeed,
    schedule: WatermarkSchedule,
}

impl SmState {
    pub fn new(
        meter: MeterId,
        mode: Mode,
        aes_key: &AesKey,
        r1_seed: MaskSeed,
        r3_seed: MaskSeed,
        schedule: WatermarkSchedule,
    ) -> Self {
        SmState {
            meter,
            mode,
            cipher: BlockCipher::new(aes_key),
            r1_seed,
            r3_seed,
            schedule,
        }
    }

    pub fn meter(&self) -> MeterId {
        self.meter
    }

    fn check_reading(&self, d: &MeterReading, frame: FrameIndex) -> Result<(), EntityError> {
        if d.meter() != self.meter {
            return Err(EntityError::WrongMeter {
                expected: self.meter.index(),
                got: d.meter().index(),
            });
        }
        if d.frame() != frame {
            return Err(EntityError::FrameMismatch {
                expected: frame.get(),
                got: d.frame().get(),
            });
        }
        if frame.get() as usize > self.schedule.len() {
            return Err(EntityError::Malformed(format!(
                "frame {frame} is beyond the {}-frame epoch",
                self.schedule.len()
            )));
        }
        Ok(())
    }

    /// Seals one watermarked reading: d″ = (2d + w_j + R3) mod 2^64, then
    /// AES, then the R1 XOR layer.
    fn seal(&self, marked: u64, r3_frame: FrameIndex, r1_frame: FrameIndex) -> CipherBlock {
        let idx = self.meter.index();
        let masked = add_mask(marked, mask64(StreamTag::R3, &self.r3_seed, idx, r3_frame));
        let enc = self.cipher.encrypt(block_encode(masked));
        xor_layer(enc, mask128(&self.r1_seed, idx, r1_frame))
    }

    /// Low-frequency step: one reading per frame, one message out.
    pub fn sm_step_low(
        &self,
        d: MeterReading,
        frame: FrameIndex,
    ) -> Result<ProtocolMessage, EntityError> {
        debug_assert_eq!(self.mode, Mode::LowFrequency);
        self.check_reading(&d, frame)?;
        let w = self.schedule.bit(frame);
        let marked = rls_embed(d.raw(), w)?;
        let block = self.seal(marked, frame, frame);
        Ok(ProtocolMessage::new(
            self.mode,
            self.meter.index(),
            frame,
            Payload::Block(block),
        ))
    }

    /// High-frequency step: consumes the readings of pair j (frames 2j−1 and
    /// 2j), embeds one watermark bit across the pair, and emits two messages.
    /// Both are XORed with the single R1 value of the even frame.
    pub fn sm_step_high(
        &self,
        d1: MeterReading,
        d2: MeterReading,
        pair_index: u32,
    ) -> Result<(ProtocolMessage, ProtocolMessage), EntityError> {
        debug_assert_eq!(self.mode, Mode::HighFrequency);
        assert!(pair_index >= 1, "pair indices are 1-based");
        let odd = FrameIndex::new(2 * pair_index - 1);
        let even = odd.next();
        self.check_reading(&d1, odd)?;
        self.check_reading(&d2, even)?;
        let w = self.schedule.bit(even);
        let (e1, e2) = rde_embed(d1.raw(), d2.raw(), w)?;
        let b1 = self.seal(e1, odd, even);
        let b2 = self.seal(e2, even, even);
        let idx = self.meter.index();
        Ok((
            ProtocolMessage::new(self.mode, idx, odd, Payload::Block(b1)),
            ProtocolMessage::new(self.mode, idx, even, Payload::Block(b2)),
        ))
    }
}

// ---------------------------------------------------------------------------
// Data aggregator
// ---------------------------------------------------------------------------

/// Aggregator state: per-meter AES keys and R1 seeds, plus the R2 seed it
/// shares with the control center. Holds no R3 seed and no watermark
/// material, so it can sum the masked readings but never see a raw value.
pub struct DaState {
    mode: Mode,
    ciphers: BTreeMap<u32, BlockCipher>,
    r1_seeds: BTreeMap<u32, MaskSeed>,
    r2_seed: MaskSeed,
    expected_frame: FrameIndex,
    check_freshness: bool,
}

impl DaState {
    pub fn new(
        mode: Mode,
        meter_keys: &BTreeMap<u32, AesKey>,
        r1_seeds: BTreeMap<u32, MaskSeed>,
        r2_seed: MaskSeed,
        check_freshness: bool,
    ) -> Self {
        let ciphers = meter_keys
            .iter()
            .map(|(&idx, key)| (idx, BlockCipher::new(key)))
            .collect();
        DaState {
            mode,
            ciphers,
            r1_seeds,
            r2_seed,
            expected_frame: FrameIndex::new(1),
            check_freshness,
        }
    }

    pub fn expected_frame(&self) -> FrameIndex {
        self.expected_frame
    }

    pub fn meter_count(&self) -> usize {
        self.ciphers.len()
    }

    /// Consumes one frame's batch (exactly one message per registered meter),
    /// decrypts and sums the masked readings, and emits the re-masked
    /// aggregate Q′ = Q XOR R2. The aggregator's frame clock advances once
    /// per call whether or not the frame is accepted, mirroring a receiver
    /// that drops a bad frame and moves on.
    pub fn da_step(&mut self, msgs: &[ProtocolMessage]) -> Result<ProtocolMessage, EntityError> {
        let frame = self.expected_frame;
        self.expected_frame = frame.next();

        let mut by_sender: BTreeMap<u32, &ProtocolMessage> = BTreeMap::new();
        for msg in msgs {
            if msg.mode != self.mode {
                return Err(EntityError::Malformed(format!(
                    "mode byte 0x{:02x} does not match this deployment",
                    msg.mode.wire_byte()
                )));
            }
            if !self.ciphers.contains_key(&msg.sender) {
                return Err(EntityError::UnknownSender { sender: msg.sender });
            }
            if by_sender.insert(msg.sender, msg).is_some() {
                return Err(EntityError::DuplicateSender { sender: msg.sender });
            }
            if self.check_freshness && msg.frame != frame {
                return Err(EntityError::FrameMismatch {
                    expected: frame.get(),
                    got: msg.frame.get(),
                });
            }
        }

        let r1_frame = shared_mask_frame(self.mode, frame);
        let mut q: u64 = 0;
        for (&idx, cipher) in &self.ciphers {
            let msg = by_sender.get(&idx).ok_or(EntityError::MissingMeter {
                meter: idx,
                frame: frame.get(),
            })?;
            let block = match msg.payload {
                Payload::Block(b) => b,
                Payload::Aggregate(_) => {
                    return Err(EntityError::Malformed(
                        "meter message must carry a cipher block".into(),
                    ))
                }
            };
            // Masks derive from the aggregator's own clock, never from the
            // message header, so a replayed message decrypts to garbage.
            let enc = xor_layer(block, mask128(&self.r1_seeds[&idx], idx, r1_frame));
            let plain = cipher.decrypt(enc);
            let d2 = block_decode(plain).map_err(|e| match e {
                ShieldError::PaddingViolation => EntityError::TamperSuspected {
                    sender: idx,
                    frame: frame.get(),
                },
                other => EntityError::Malformed(other.to_string()),
            })?;
            q = q.wrapping_add(d2);
        }

        let r2 = mask64(StreamTag::R2, &self.r2_seed, AGGREGATOR_INDEX, r1_frame);
        Ok(ProtocolMessage::new(
            self.mode,
            AGGREGATOR_INDEX,
            frame,
            Payload::Aggregate(q ^ r2),
        ))
    }
}

// ---------------------------------------------------------------------------
// Control center
// ---------------------------------------------------------------------------

/// One verified frame at the control center: the exact sum of the original
/// readings across all meters, raw and in energy units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateOutcome {
    pub frame: FrameIndex,
    pub raw_sum: i64,
    pub energy: f64,
}

impl AggregateOutcome {
    fn new(frame: FrameIndex, raw_sum: i64, scale: Scale) -> Self {
        AggregateOutcome {
            frame,
            raw_sum,
            energy: raw_sum as f64 / scale.factor() as f64,
        }
    }
}

/// Control center state: the registry, per-meter R3 seeds, the R2 seed, and
/// the watermark schedule. Never holds an AES key or R1 seed, so it can
/// verify and recover aggregates but never decrypt an individual meter's
/// message.
pub struct CcState {
    mode: Mode,
    registry: Registry,
    r3_seeds: BTreeMap<u32, MaskSeed>,
    r2_seed: MaskSeed,
    schedule: WatermarkSchedule,
    scale: Scale,
    expected_frame: FrameIndex,
    check_freshness: bool,
}

impl CcState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mode: Mode,
        registry: Registry,
        r3_seeds: BTreeMap<u32, MaskSeed>,
        r2_seed: MaskSeed,
        schedule: WatermarkSchedule,
        scale: Scale,
        check_freshness: bool,
    ) -> Self {
        CcState {
            mode,
            registry,
            r3_seeds,
            r2_seed,
            schedule,
            scale,
            expected_frame: FrameIndex::new(1),
            check_freshness,
        }
    }

    pub fn expected_frame(&self) -> FrameIndex {
        self.expected_frame
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    /// Advances the frame clock past frames that were declined upstream and
    /// never reached the control center.
    pub fn skip_frames(&mut self, count: u32) {
        for _ in 0..count {
            self.expected_frame = self.expected_frame.next();
        }
    }

    fn check_msg(&self, msg: &ProtocolMessage, expected: FrameIndex) -> Result<u64, EntityError> {
        if msg.mode != self.mode {
            return Err(EntityError::Malformed(format!(
                "mode byte 0x{:02x} does not match this deployment",
                msg.mode.wire_byte()
            )));
        }
        if msg.sender != AGGREGATOR_INDEX {
            return Err(EntityError::UnknownSender { sender: msg.sender });
        }
        if self.check_freshness && msg.frame != expected {
            return Err(EntityError::FrameMismatch {
                expected: expected.get(),
                got: msg.frame.get(),
            });
        }
        match msg.payload {
            Payload::Aggregate(q) => Ok(q),
            Payload::Block(_) => Err(EntityError::Malformed(
                "aggregator message must carry a 64-bit aggregate".into(),
            )),
        }
    }

    /// Strips all R3 contributions for one frame. Addition commutes with the
    /// aggregator's summation, so subtracting the sum of masks is exact.
    fn unmask_r3(&self, q: u64, frame: FrameIndex) -> i64 {
        let mut v = q;
        for meter in self.registry.meters() {
            let idx = meter.index();
            v = v.wrapping_sub(mask64(StreamTag::R3, &self.r3_seeds[&idx], idx, frame));
        }
        v as i64
    }

    /// Low-frequency step: unmasks one aggregate, checks the watermark
    /// parity, and recovers the exact per-frame sum. A parity mismatch means
    /// the frame was tampered with in transit and is declined.
    pub fn cc_step_low(&mut self, msg: &ProtocolMessage) -> Result<AggregateOutcome, EntityError> {
        debug_assert_eq!(self.mode, Mode::LowFrequency);
        let frame = self.expected_frame;
        self.expected_frame = frame.next();
        let q_prime = self.check_msg(msg, frame)?;
        let q = q_prime ^ mask64(StreamTag::R2, &self.r2_seed, AGGREGATOR_INDEX, frame);
        let v = self.unmask_r3(q, frame);
        let w = self.schedule.bit(frame);
        let d = rls_verify_extract(AggregateFrame::new(v, frame), w, self.registry.effective_n())?;
        Ok(AggregateOutcome::new(frame, d, self.scale))
    }

    /// High-frequency step: unmasks the two aggregates of a pair (they share
    /// the R2 value of the even frame), verifies the pair watermark, and
    /// recovers both per-frame sums.
    pub fn cc_step_high(
        &mut self,
        msg1: &ProtocolMessage,
        msg2: &ProtocolMessage,
    ) -> Result<(AggregateOutcome, AggregateOutcome), EntityError> {
        debug_assert_eq!(self.mode, Mode::HighFrequency);
        let odd = self.expected_frame;
        debug_assert_eq!(odd.get() % 2, 1, "pairs start on odd frames");
        let even = odd.next();
        self.expected_frame = even.next();
        let q1_prime = self.check_msg(msg1, odd)?;
        let q2_prime = self.check_msg(msg2, even)?;
        let r2 = mask64(StreamTag::R2, &self.r2_seed, AGGREGATOR_INDEX, even);
        let v1 = self.unmask_r3(q1_prime ^ r2, odd);
        let v2 = self.unmask_r3(q2_prime ^ r2, even);
        let w = self.schedule.bit(even);
        let (s1, s2) = rde_verify_extract(
            AggregateFrame::new(v1, odd),
            AggregateFrame::new(v2, even),
            w,
            self.registry.effective_n(),
        )?;
        Ok((
            AggregateOutcome::new(odd, s1, self.scale),
            AggregateOutcome::new(even, s2, self.scale),
        ))
    }
}

// ---------------------------------------------------------------------------
// Registration
// ---------------------------------------------------------------------------

/// Everything registration produces: one state machine per meter (including
/// the dummy meter when the registered count is even), the aggregator, and
/// the control center. Each entity is handed only its declared secrets.
pub struct Deployment {
    pub sms: Vec<SmState>,
    pub da: DaState,
    pub cc: CcState,
}

/// Runs the registration phase: builds the registry, deals out keys and
/// seeds, generates the watermark schedule, and constructs the three kinds
/// of entities from their respective shares.
pub fn register<R: rand::RngCore>(
    epoch: &EpochConfig,
    rng: &mut R,
    check_freshness: bool,
) -> Deployment {
    let registry = Registry::build(epoch.n_registered);
    let material = KeyMaterial::generate(rng, &registry, epoch.aes_size, epoch.hash_alg);
    let schedule = generate_watermark(&material.watermark_key, &epoch.timestamps, epoch.hash_alg);

    let sms = registry
        .meters()
        .iter()
        .map(|&meter| {
            let idx = meter.index();
            SmState::new(
                meter,
                epoch.mode,
                &material.aes_keys[&idx],
                *material.seeds.r1(idx).expect("seed dealt per meter"),
                *material.seeds.r3(idx).expect("seed dealt per meter"),
                schedule.clone(),
            )
        })
        .collect();

    let da = DaState::new(
        epoch.mode,
        &material.aes_keys,
        material.seeds.r1_map().clone(),
        *material.seeds.r2(),
        check_freshness,
    );

    let cc = CcState::new(
        epoch.mode,
        registry,
        material.seeds.r3_map().clone(),
        *material.seeds.r2(),
        schedule,
        epoch.scale,
        check_freshness,
    );

    Deployment { sms, da, cc }
}
