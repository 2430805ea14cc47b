//! Domain types shared by every layer of the protocol: fixed-point energy
//! encoding, epoch and frame bookkeeping, and the meter registry with its
//! dummy-meter parity rule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound (exclusive) on a scaled reading. Keeps every sum in the
/// pipeline inside a 63-bit signed range for up to [`MAX_METERS`] meters.
pub const RAW_LIMIT: u64 = 1 << 40;

/// Maximum number of registered meters per epoch.
pub const MAX_METERS: u32 = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("negative energy reading")]
    NegativeReading,
    #[error("energy reading is not a finite number")]
    NotFinite,
    #[error("scaled reading {0} exceeds the raw limit 2^40")]
    Overflow(u128),
    #[error("invalid epoch configuration: {0}")]
    InvalidConfig(String),
}

/// Protocol variant selected for an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// One reading per frame, watermarked by LSB shifting.
    LowFrequency,
    /// Frames processed in consecutive pairs, watermarked by difference
    /// expansion.
    HighFrequency,
}

impl Mode {
    /// Wire encoding of the mode byte.
    pub fn wire_byte(self) -> u8 {
        match self {
            Mode::LowFrequency => 0,
            Mode::HighFrequency => 1,
        }
    }

    pub fn from_wire_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Mode::LowFrequency),
            1 => Some(Mode::HighFrequency),
            _ => None,
        }
    }
}

/// Hash algorithm used for watermark generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HashAlg {
    Sha224,
    Sha256,
    Sha512,
}

impl HashAlg {
    /// Digest length in bytes.
    pub fn output_len(self) -> usize {
        match self {
            HashAlg::Sha224 => 28,
            HashAlg::Sha256 => 32,
            HashAlg::Sha512 => 64,
        }
    }

    /// Digest length in bits.
    pub fn bit_len(self) -> usize {
        self.output_len() * 8
    }

    pub fn name(self) -> &'static str {
        match self {
            HashAlg::Sha224 => "sha224",
            HashAlg::Sha256 => "sha256",
            HashAlg::Sha512 => "sha512",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sha224" | "sha-224" | "224" => Some(HashAlg::Sha224),
            "sha256" | "sha-256" | "256" => Some(HashAlg::Sha256),
            "sha512" | "sha-512" | "512" => Some(HashAlg::Sha512),
            _ => None,
        }
    }
}

/// AES key size for the confidentiality layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AesKeySize {
    Aes128,
    Aes192,
    Aes256,
}

impl AesKeySize {
    pub fn byte_len(self) -> usize {
        match self {
            AesKeySize::Aes128 => 16,
            AesKeySize::Aes192 => 24,
            AesKeySize::Aes256 => 32,
        }
    }

    pub fn bits(self) -> u16 {
        (self.byte_len() * 8) as u16
    }

    pub fn from_bits(bits: u16) -> Option<Self> {
        match bits {
            128 => Some(AesKeySize::Aes128),
            192 => Some(AesKeySize::Aes192),
            256 => Some(AesKeySize::Aes256),
            _ => None,
        }
    }
}

/// Decimal scale factor applied to energy values before protocol arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Scale(u32);

impl Scale {
    pub const UNIT: Scale = Scale(1);
    /// Milli-unit resolution, the default.
    pub const MILLI: Scale = Scale(1000);

    /// Accepts powers of ten from 1 to 1000.
    pub fn new(factor: u32) -> Result<Self, DomainError> {
        match factor {
            1 | 10 | 100 | 1000 => Ok(Scale(factor)),
            other => Err(DomainError::InvalidConfig(format!(
                "scale must be one of 1, 10, 100, 1000 (got {other})"
            ))),
        }
    }

    pub fn factor(self) -> u32 {
        self.0
    }
}

impl Default for Scale {
    fn default() -> Self {
        Scale::MILLI
    }
}

/// Identity of one smart meter inside an epoch registry. Indices are 1-based;
/// the dummy meter, when present, always holds the highest index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MeterId {
    index: u32,
    is_dummy: bool,
}

impl MeterId {
    pub fn new(index: u32) -> Self {
        assert!(index >= 1, "meter indices are 1-based");
        MeterId {
            index,
            is_dummy: false,
        }
    }

    pub fn dummy(index: u32) -> Self {
        assert!(index >= 1, "meter indices are 1-based");
        MeterId {
            index,
            is_dummy: true,
        }
    }

    pub fn index(self) -> u32 {
        self.index
    }

    pub fn is_dummy(self) -> bool {
        self.is_dummy
    }
}

/// 1-based position of a frame within an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FrameIndex(u32);

impl FrameIndex {
    pub fn new(j: u32) -> Self {
        assert!(j >= 1, "frame indices are 1-based");
        FrameIndex(j)
    }

    pub fn get(self) -> u32 {
        self.0
    }

    pub fn next(self) -> FrameIndex {
        FrameIndex(self.0 + 1)
    }

    /// The even frame index of the pair this frame belongs to. High-frequency
    /// mask streams R1 and R2 are drawn once per pair, at the even frame.
    pub fn pair_even(self) -> FrameIndex {
        FrameIndex(self.0 + (self.0 & 1))
    }
}

impl std::fmt::Display for FrameIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One scaled, non-negative energy reading for one meter at one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeterReading {
    raw: u64,
    meter: MeterId,
    frame: FrameIndex,
}

impl MeterReading {
    /// `raw` is the already-scaled integer value. Dummy meters must read 0.
    pub fn new(raw: u64, meter: MeterId, frame: FrameIndex) -> Result<Self, DomainError> {
        if raw >= RAW_LIMIT {
            return Err(DomainError::Overflow(raw as u128));
        }
        if meter.is_dummy() && raw != 0 {
            return Err(DomainError::InvalidConfig(format!(
                "dummy meter {} must read 0, got {raw}",
                meter.index()
            )));
        }
        Ok(MeterReading { raw, meter, frame })
    }

    pub fn raw(self) -> u64 {
        self.raw
    }

    pub fn meter(self) -> MeterId {
        self.meter
    }

    pub fn frame(self) -> FrameIndex {
        self.frame
    }
}

/// Full description of one epoch: protocol variant, meter and frame counts,
/// algorithm choices, and the frame timestamp schedule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochConfig {
    pub mode: Mode,
    pub n_registered: u32,
    pub m: u32,
    pub hash_alg: HashAlg,
    pub aes_size: AesKeySize,
    pub scale: Scale,
    /// Abstract frame timestamps (seconds since epoch start), length `m`.
    pub timestamps: Vec<u64>,
}

impl EpochConfig {
    pub fn new(
        mode: Mode,
        n_registered: u32,
        m: u32,
        hash_alg: HashAlg,
        aes_size: AesKeySize,
        scale: Scale,
        timestamps: Vec<u64>,
    ) -> Result<Self, DomainError> {
        let cfg = EpochConfig {
            mode,
            n_registered,
            m,
            hash_alg,
            aes_size,
            scale,
            timestamps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.n_registered < 1 {
            return Err(DomainError::InvalidConfig(
                "at least one meter must be registered".into(),
            ));
        }
        if self.n_registered > MAX_METERS {
            return Err(DomainError::InvalidConfig(format!(
                "meter count {} exceeds the limit 2^20",
                self.n_registered
            )));
        }
        if self.m < 1 {
            return Err(DomainError::InvalidConfig(
                "an epoch needs at least one frame".into(),
            ));
        }
        if self.mode == Mode::HighFrequency && !self.m.is_multiple_of(2) {
            return Err(DomainError::InvalidConfig(format!(
                "high-frequency mode needs an even frame count (got {})",
                self.m
            )));
        }
        if self.timestamps.len() != self.m as usize {
            return Err(DomainError::InvalidConfig(format!(
                "expected {} timestamps, got {}",
                self.m,
                self.timestamps.len()
            )));
        }
        Ok(())
    }

    /// Timestamps at a fixed cadence: `start + k * step` for k in 0..m.
    pub fn regular_timestamps(start: u64, step: u64, m: u32) -> Vec<u64> {
        (0..m as u64).map(|k| start + k * step).collect()
    }
}

/// The epoch meter registry. Adds a zero-consumption dummy meter whenever the
/// registered count is even, so the effective count is always odd.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registry {
    meters: Vec<MeterId>,
    effective_n: u32,
}

impl Registry {
    pub fn build(n_registered: u32) -> Self {
        assert!(n_registered >= 1, "n_registered must be at least 1");
        let mut meters: Vec<MeterId> = (1..=n_registered).map(MeterId::new).collect();
        if n_registered.is_multiple_of(2) {
            meters.push(MeterId::dummy(n_registered + 1));
        }
        let effective_n = meters.len() as u32;
        debug_assert!(effective_n % 2 == 1);
        Registry {
            meters,
            effective_n,
        }
    }

    pub fn meters(&self) -> &[MeterId] {
        &self.meters
    }

    pub fn effective_n(&self) -> u32 {
        self.effective_n
    }

    pub fn has_dummy(&self) -> bool {
        self.meters.last().is_some_and(|m| m.is_dummy())
    }
}

/// Converts a decimal energy value to its scaled integer form, rounding
/// half-up.
pub fn fixed_point_encode(value: f64, scale: Scale) -> Result<u64, DomainError> {
    if !value.is_finite() {
        return Err(DomainError::NotFinite);
    }
    if value < 0.0 {
        return Err(DomainError::NegativeReading);
    }
    let scaled = value * scale.factor() as f64;
    let raw = (scaled + 0.5).floor();
    if raw >= RAW_LIMIT as f64 {
        return Err(DomainError::Overflow(raw as u128));
    }
    Ok(raw as u64)
}

/// Inverse of [`fixed_point_encode`], back to energy units.
pub fn fixed_point_decode(raw: u64, scale: Scale) -> f64 {
    raw as f64 / scale.factor() as f64
}

/// Parses a decimal string (as found in CSV traces) straight to the scaled
/// integer, digit-exact, rounding half-up on excess fractional digits.
pub fn fixed_point_parse(text: &str, scale: Scale) -> Result<u64, DomainError> {
    let t = text.trim();
    if let Some(stripped) = t.strip_prefix('-') {
        // "-0", "-0.0" still count as negative input per the CSV contract.
        if !stripped.is_empty() {
            return Err(DomainError::NegativeReading);
        }
    }
    let t = t.strip_prefix('+').unwrap_or(t);
    let (int_part, frac_part) = match t.split_once('.') {
        Some((i, f)) => (i, f),
        None => (t, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(DomainError::NotFinite);
    }
    if !int_part.chars().all(|c| c.is_ascii_digit())
        || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return Err(DomainError::NotFinite);
    }
    let mut raw: u128 = 0;
    for c in int_part.chars() {
        raw = raw * 10 + (c as u8 - b'0') as u128;
        if raw >= (RAW_LIMIT as u128) * 10_000 {
            return Err(DomainError::Overflow(raw));
        }
    }
    let frac_digits = scale.factor().ilog10() as usize;
    let mut frac: u128 = 0;
    for c in frac_part.chars().take(frac_digits) {
        frac = frac * 10 + (c as u8 - b'0') as u128;
    }
    for _ in frac_part.len()..frac_digits {
        frac *= 10;
    }
    raw = raw * scale.factor() as u128 + frac;
    // Round half-up on the first truncated digit, if any.
    if let Some(c) = frac_part.chars().nth(frac_digits) {
        if c >= '5' {
            raw += 1;
        }
    }
    if raw >= RAW_LIMIT as u128 {
        return Err(DomainError::Overflow(raw));
    }
    Ok(raw as u64)
}
