//! Confidentiality layer: single-block AES over a fixed 16-byte packing of
//! the 64-bit masked reading, plus the three keyed mask streams R1 (meter to
//! aggregator), R2 (aggregator to control center), and R3 (meter to control
//! center).
//!
//! Masks are derived counter-style: hash(seed, stream tag, entity index,
//! frame) truncated to the stream width. Both holders of a seed derive the
//! same value from the frame counter alone, so no generator state has to be
//! kept in sync.

use std::collections::{BTreeMap, BTreeSet};

use aes::cipher::generic_array::GenericArray;
use aes::cipher::{BlockDecrypt, BlockEncrypt, KeyInit};
use aes::{Aes128, Aes192, Aes256};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{AesKeySize, FrameIndex, HashAlg, Registry};
use crate::watermark::WatermarkKey;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ShieldError {
    #[error("cipher block padding is nonzero: wrong key or corrupted ciphertext")]
    PaddingViolation,
    #[error("mask seeds must be pairwise distinct")]
    SeedCollision,
    #[error("AES key must be 16, 24, or 32 bytes, got {got}")]
    KeyLength { got: usize },
}

/// Entity index used in mask derivation for the aggregator (meters use
/// their 1-based registry index).
pub const AGGREGATOR_INDEX: u32 = 0;

// ---------------------------------------------------------------------------
// Mask streams
// ---------------------------------------------------------------------------

/// Which of the three mask streams a value belongs to. The tag byte is mixed
/// into the derivation so the streams never collide even under a reused seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum StreamTag {
    R1,
    R2,
    R3,
}

impl StreamTag {
    pub fn tag_byte(self) -> u8 {
        match self {
            StreamTag::R1 => 1,
            StreamTag::R2 => 2,
            StreamTag::R3 => 3,
        }
    }

    /// Natural width of the stream: R1 blinds a 16-byte cipher block, R2 and
    /// R3 combine with 64-bit integers.
    pub fn width(self) -> MaskWidth {
        match self {
            StreamTag::R1 => MaskWidth::W128,
            StreamTag::R2 | StreamTag::R3 => MaskWidth::W64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskWidth {
    W64,
    W128,
}

impl MaskWidth {
    pub fn bits(self) -> u32 {
        match self {
            MaskWidth::W64 => 64,
            MaskWidth::W128 => 128,
        }
    }
}

/// 32-byte secret seeding one mask stream for one pair of entities.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct MaskSeed([u8; 32]);

impl MaskSeed {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        MaskSeed(bytes)
    }

    pub fn generate<R: rand::RngCore>(rng: &mut R) -> Self {
        let mut bytes = [0u8; 32];
        rng.fill_bytes(&mut bytes);
        MaskSeed(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl std::fmt::Debug for MaskSeed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "MaskSeed(redacted)")
    }
}

/// Derives one mask value: hash(seed ‖ tag ‖ be32(entity) ‖ be32(frame))
/// truncated big-endian to `width` bits. Widths follow the stream: 128 for
/// R1, 64 for R2 and R3. Meters pass their registry index, the aggregator
/// passes [`AGGREGATOR_INDEX`].
pub fn mask_value(
    tag: StreamTag,
    seed: &MaskSeed,
    entity_index: u32,
    frame: FrameIndex,
    width: MaskWidth,
) -> u128 {
    debug_assert_eq!(width, tag.width(), "stream width mismatch");
    let mut h = Sha256::new();
    h.update(seed.as_bytes());
    h.update([tag.tag_byte()]);
    h.update(entity_index.to_be_bytes());
    h.update(frame.get().to_be_bytes());
    let digest = h.finalize();
    match width {
        MaskWidth::W64 => u64::from_be_bytes(digest[..8].try_into().unwrap()) as u128,
        MaskWidth::W128 => u128::from_be_bytes(digest[..16].try_into().unwrap()),
    }
}

/// 64-bit mask for the R2 or R3 stream.
pub fn mask64(tag: StreamTag, seed: &MaskSeed, entity_index: u32, frame: FrameIndex) -> u64 {
    mask_value(tag, seed, entity_index, frame, MaskWidth::W64) as u64
}

/// 128-bit mask for the R1 stream.
pub fn mask128(seed: &MaskSeed, entity_index: u32, frame: FrameIndex) -> u128 {
    mask_value(StreamTag::R1, seed, entity_index, frame, MaskWidth::W128)
}

/// Additive masking over Z mod 2^64. Commutes with summation, which is what
/// lets the control center strip all R3 contributions from an aggregate at
/// once.
pub fn add_mask(v: u64, r: u64) -> u64 {
    v.wrapping_add(r)
}

pub fn remove_mask(v: u64, r: u64) -> u64 {
    v.wrapping_sub(r)
}

// ---------------------------------------------------------------------------
// Block codec and AES
// ---------------------------------------------------------------------------

/// One 16-byte AES block. Every payload is exactly one block regardless of
/// the reading's magnitude, so message sizes leak nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CipherBlock(pub [u8; 16]);

impl CipherBlock {
    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }

    pub fn from_bytes(bytes: [u8; 16]) -> Self {
        CipherBlock(bytes)
    }
}

/// Packs a 64-bit value as 8 zero bytes followed by its big-endian bytes.
pub fn block_encode(v: u64) -> CipherBlock {
    let mut bytes = [0u8; 16];
    bytes[8..].copy_from_slice(&v.to_be_bytes());
    CipherBlock(bytes)
}

/// Inverts [`block_encode`]. Nonzero padding means the block was decrypted
/// with the wrong key or the ciphertext was altered in transit.
pub fn block_decode(b: CipherBlock) -> Result<u64, ShieldError> {
    if b.0[..8] != [0u8; 8] {
        return Err(ShieldError::PaddingViolation);
    }
    Ok(u64::from_be_bytes(b.0[8..].try_into().unwrap()))
}

/// Bytewise XOR of a block with a 128-bit mask. Involution: applying it
/// twice with the same mask is the identity.
pub fn xor_layer(b: CipherBlock, r: u128) -> CipherBlock {
    let mask = r.to_be_bytes();
    let mut out = b.0;
    for (o, m) in out.iter_mut().zip(mask) {
        *o ^= m;
    }
    CipherBlock(out)
}

/// AES key of one of the three standard sizes.
#[derive(Clone, PartialEq, Eq)]
pub enum AesKey {
    Aes128([u8; 16]),
    Aes192([u8; 24]),
    Aes256([u8; 32]),
}

impl AesKey {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ShieldError> {
        match bytes.len() {
            16 => Ok(AesKey::Aes128(bytes.try_into().unwrap())),
            24 => Ok(AesKey::Aes192(bytes.try_into().unwrap())),
            32 => Ok(AesKey::Aes256(bytes.try_into().unwrap())),
            got => Err(ShieldError::KeyLength { got }),
        }
    }

    pub fn generate<R: rand::RngCore>(rng: &mut R, size: AesKeySize) -> Self {
        let mut bytes = vec![0u8; size.byte_len()];
        rng.fill_bytes(&mut bytes);
        AesKey::from_bytes(&bytes).expect("generated length is valid")
    }

    pub fn size(&self) -> AesKeySize {
        match self {
            AesKey::Aes128(_) => AesKeySize::Aes128,
            AesKey::Aes192(_) => AesKeySize::Aes192,
            AesKey::Aes256(_) => AesKeySize::Aes256,
        }
    }

    pub fn as_bytes(&self) -> &[u8] {
        match self {
            AesKey::Aes128(b) => b,
            AesKey::Aes192(b) => b,
            AesKey::Aes256(b) => b,
        }
    }
}

impl std::fmt::Debug for AesKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "AesKey({}-bit, redacted)", self.size().bits())
    }
}

/// An AES key with its schedule expanded once, for repeated block calls.
#[derive(Clone)]
pub struct BlockCipher {
    kind: CipherKind,
}

#[derive(Clone)]
enum CipherKind {
    A128(Aes128),
    A192(Aes192),
    A256(Aes256),
}

impl BlockCipher {
    pub fn new(key: &AesKey) -> Self {
        let kind = match key {
            AesKey::Aes128(b) => CipherKind::A128(Aes128::new(GenericArray::from_slice(b))),
            AesKey::Aes192(b) => CipherKind::A192(Aes192::new(GenericArray::from_slice(b))),
            AesKey::Aes256(b) => CipherKind::A256(Aes256::new(GenericArray::from_slice(b))),
        };
        BlockCipher { kind }
    }

    pub fn encrypt(&self, b: CipherBlock) -> CipherBlock {
        let mut block = GenericArray::clone_from_slice(&b.0);
        match &self.kind {
            CipherKind::A128(c) => c.encrypt_block(&mut block),
            CipherKind::A192(c) => c.encrypt_block(&mut block),
            CipherKind::A256(c) => c.encrypt_block(&mut block),
        }
        CipherBlock(block.into())
    }

    pub fn decrypt(&self, b: CipherBlock) -> CipherBlock {
        let mut block = GenericArray::clone_from_slice(&b.0);
        match &self.kind {
            CipherKind::A128(c) => c.decrypt_block(&mut block),
            CipherKind::A192(c) => c.decrypt_block(&mut block),
            CipherKind::A256(c) => c.decrypt_block(&mut block),
        }
        CipherBlock(block.into())
    }
}

/// Single-block AES encryption. Expands the key schedule per call; entities
/// that encrypt every frame hold a [`BlockCipher`] instead.
pub fn aes_encrypt(b: CipherBlock, k: &AesKey) -> CipherBlock {
    BlockCipher::new(k).encrypt(b)
}

pub fn aes_decrypt(b: CipherBlock, k: &AesKey) -> CipherBlock {
    BlockCipher::new(k).decrypt(b)
}

// ---------------------------------------------------------------------------
// Registration material
// ---------------------------------------------------------------------------

/// All mask seeds issued at registration. R1 and R3 are per meter, R2 is a
/// single seed between the aggregator and the control center.
#[derive(Clone)]
pub struct SeedSet {
    r1: BTreeMap<u32, MaskSeed>,
    r2: MaskSeed,
    r3: BTreeMap<u32, MaskSeed>,
}

impl SeedSet {
    pub fn new(
        r1: BTreeMap<u32, MaskSeed>,
        r2: MaskSeed,
        r3: BTreeMap<u32, MaskSeed>,
    ) -> Result<Self, ShieldError> {
        let mut all: BTreeSet<[u8; 32]> = BTreeSet::new();
        for seed in r1.values().chain(r3.values()).chain(std::iter::once(&r2)) {
            if !all.insert(*seed.as_bytes()) {
                return Err(ShieldError::SeedCollision);
            }
        }
        Ok(SeedSet { r1, r2, r3 })
    }

    pub fn generate<R: rand::RngCore>(rng: &mut R, registry: &Registry) -> Self {
        loop {
            let r1 = registry
                .meters()
                .iter()
                .map(|m| (m.index(), MaskSeed::generate(rng)))
                .collect();
            let r3 = registry
                .meters()
                .iter()
                .map(|m| (m.index(), MaskSeed::generate(rng)))
                .collect();
            if let Ok(set) = SeedSet::new(r1, MaskSeed::generate(rng), r3) {
                return set;
            }
        }
    }

    pub fn r1(&self, meter_index: u32) -> Option<&MaskSeed> {
        self.r1.get(&meter_index)
    }

    pub fn r2(&self) -> &MaskSeed {
        &self.r2
    }

    pub fn r3(&self, meter_index: u32) -> Option<&MaskSeed> {
        self.r3.get(&meter_index)
    }

    pub fn r1_map(&self) -> &BTreeMap<u32, MaskSeed> {
        &self.r1
    }

    pub fn r3_map(&self) -> &BTreeMap<u32, MaskSeed> {
        &self.r3
    }
}

/// Everything the registration phase deals out: per-meter AES keys, the
/// mask seeds, and the watermark key. Entity constructors take only their
/// slice of this.
pub struct KeyMaterial {
    pub aes_keys: BTreeMap<u32, AesKey>,
    pub seeds: SeedSet,
    pub watermark_key: WatermarkKey,
}

impl KeyMaterial {
    pub fn generate<R: rand::RngCore>(
        rng: &mut R,
        registry: &Registry,
        aes_size: AesKeySize,
        hash_alg: HashAlg,
    ) -> Self {
        let aes_keys = registry
            .meters()
            .iter()
            .map(|m| (m.index(), AesKey::generate(rng, aes_size)))
            .collect();
        KeyMaterial {
            aes_keys,
            seeds: SeedSet::generate(rng, registry),
            watermark_key: WatermarkKey::generate(rng, hash_alg),
        }
    }
}
