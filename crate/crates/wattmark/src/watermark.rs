//! Watermark schedule generation from a keyed hash chain, and the two
//! reversible embedding schemes: LSB shifting (low-frequency) and difference
//! expansion (high-frequency), with aggregate-level verification and
//! recovery.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha224, Sha256, Sha512};
use thiserror::Error;

use crate::domain::{FrameIndex, HashAlg};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WatermarkError {
    #[error("watermark parity mismatch at frame {frame}: aggregate must be declined")]
    TamperDetected { frame: u32 },
    #[error("non-integral recovery at frame {frame}: even-parity tampering suspected")]
    NonIntegralRecovery { frame: u32 },
    #[error("watermarked value would overflow the 63-bit range")]
    Overflow,
    #[error("watermark key must be {expected} bytes for this hash, got {got}")]
    KeyLength { expected: usize, got: usize },
}

/// Secret key for watermark generation. Held by every smart meter and by the
/// control center, never by the aggregator. Its length always equals the
/// digest length of the configured hash.
#[derive(Clone, PartialEq, Eq)]
pub struct WatermarkKey {
    bytes: Vec<u8>,
}

impl WatermarkKey {
    pub fn from_bytes(bytes: Vec<u8>, hash_alg: HashAlg) -> Result<Self, WatermarkError> {
        if bytes.len() != hash_alg.output_len() {
            return Err(WatermarkError::KeyLength {
                expected: hash_alg.output_len(),
                got: bytes.len(),
            });
        }
        Ok(WatermarkKey { bytes })
    }

    pub fn generate<R: rand::RngCore>(rng: &mut R, hash_alg: HashAlg) -> Self {
        let mut bytes = vec![0u8; hash_alg.output_len()];
        rng.fill_bytes(&mut bytes);
        WatermarkKey { bytes }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }
}

impl std::fmt::Debug for WatermarkKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "WatermarkKey({} bytes)", self.bytes.len())
    }
}

/// The per-epoch bit sequence w_1..w_m. Reproducible: two schedules built
/// from the same key, timestamps, and hash are bit-identical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatermarkSchedule {
    bits: Vec<u8>,
    hash_alg: HashAlg,
}

impl WatermarkSchedule {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Watermark bit for a frame, in {0, 1}.
    pub fn bit(&self, frame: FrameIndex) -> u8 {
        self.bits[(frame.get() - 1) as usize]
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }
}

fn hash_keyed(alg: HashAlg, key: &[u8], timestamp: u64) -> Vec<u8> {
    let ts = timestamp.to_be_bytes();
    match alg {
        HashAlg::Sha224 => {
            let mut h = Sha224::new();
            h.update(key);
            h.update(ts);
            h.finalize().to_vec()
        }
        HashAlg::Sha256 => {
            let mut h = Sha256::new();
            h.update(key);
            h.update(ts);
            h.finalize().to_vec()
        }
        HashAlg::Sha512 => {
            let mut h = Sha512::new();
            h.update(key);
            h.update(ts);
            h.finalize().to_vec()
        }
    }
}

/// Builds the watermark schedule: hashes the key with each frame timestamp,
/// XOR-folds all digests into one bit string W, then assigns
/// w_j = bit (j-1) mod L of W, counting bits from the most significant bit
/// of the first byte. Wrapping covers epochs longer than the digest.
pub fn generate_watermark(
    key: &WatermarkKey,
    timestamps: &[u64],
    hash_alg: HashAlg,
) -> WatermarkSchedule {
    assert!(!timestamps.is_empty(), "an epoch needs at least one frame");
    debug_assert_eq!(key.as_bytes().len(), hash_alg.output_len());
    let mut folded = vec![0u8; hash_alg.output_len()];
    for &t in timestamps {
        let digest = hash_keyed(hash_alg, key.as_bytes(), t);
        for (acc, b) in folded.iter_mut().zip(digest) {
            *acc ^= b;
        }
    }
    let bit_len = hash_alg.bit_len();
    let bits = (0..timestamps.len())
        .map(|j| {
            let p = j % bit_len;
            (folded[p / 8] >> (7 - (p % 8))) & 1
        })
        .collect();
    WatermarkSchedule { bits, hash_alg }
}

/// LSB-shift embedding: shifts the reading left one bit and places the
/// watermark bit in the vacated LSB.
pub fn rls_embed(d: u64, w: u8) -> Result<u64, WatermarkError> {
    debug_assert!(w <= 1);
    let shifted = d.checked_mul(2).ok_or(WatermarkError::Overflow)?;
    let out = shifted.checked_add(w as u64).ok_or(WatermarkError::Overflow)?;
    if out > i64::MAX as u64 {
        return Err(WatermarkError::Overflow);
    }
    Ok(out)
}

/// Sum of watermarked readings for one frame after unmasking, reinterpreted
/// in the signed range. Negative values can only arise under tampering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AggregateFrame {
    pub v: i64,
    pub frame: FrameIndex,
}

impl AggregateFrame {
    pub fn new(v: i64, frame: FrameIndex) -> Self {
        AggregateFrame { v, frame }
    }
}

/// Non-negative residue mod 2, defined for negative aggregates as well so
/// the verification bit is always in {0, 1}.
fn parity(v: i64) -> u8 {
    v.rem_euclid(2) as u8
}

/// Verifies the low-frequency watermark on an aggregate and recovers the sum
/// of the original readings. With an odd meter count, the aggregate parity
/// equals the frame's watermark bit; mismatch means the frame was tampered
/// with and must be declined.
pub fn rls_verify_extract(
    agg: AggregateFrame,
    w: u8,
    effective_n: u32,
) -> Result<i64, WatermarkError> {
    debug_assert!(w <= 1);
    debug_assert!(effective_n % 2 == 1, "meter count must be odd");
    if parity(agg.v) != w {
        return Err(WatermarkError::TamperDetected {
            frame: agg.frame.get(),
        });
    }
    // V = 2*D + n*w, so the halved difference is the exact aggregate.
    let d = (agg.v as i128 - (effective_n as i128) * (w as i128)) / 2;
    Ok(d as i64)
}

/// Difference-expansion embedding over one pair of consecutive readings.
/// The average/difference transform doubles both values, swaps their
/// positions, and stores the watermark bit in the pair difference:
/// (d1, d2, w) -> (2*d2, 2*d1 + w). The first output is always even and
/// the pair difference carries w in its LSB.
pub fn rde_embed(d1: u64, d2: u64, w: u8) -> Result<(u64, u64), WatermarkError> {
    debug_assert!(w <= 1);
    let avg = (d1 as i128) + (d2 as i128);
    let diff = 2 * ((d1 as i128) - (d2 as i128));
    let out1 = avg - diff / 2;
    let out2 = avg + diff / 2 + w as i128;
    if out1 < 0 || out2 < 0 || out1 > i64::MAX as i128 || out2 > i64::MAX as i128 {
        return Err(WatermarkError::Overflow);
    }
    debug_assert_eq!(out1 as u64, 2 * d2);
    debug_assert_eq!(out2 as u64, 2 * d1 + w as u64);
    Ok((out1 as u64, out2 as u64))
}

/// Verifies the high-frequency watermark over a frame pair and recovers both
/// original per-frame sums. The parity of the pair difference must equal the
/// watermark bit; recovery then inverts the embedding transform, where both
/// divisions are exact for untampered aggregates. An inexact final halving
/// signals even-parity tampering that slipped past the parity check.
pub fn rde_verify_extract(
    agg1: AggregateFrame,
    agg2: AggregateFrame,
    w: u8,
    effective_n: u32,
) -> Result<(i64, i64), WatermarkError> {
    debug_assert!(w <= 1);
    debug_assert!(effective_n % 2 == 1, "meter count must be odd");
    let v1 = agg1.v as i128;
    let v2 = agg2.v as i128;
    if (v2 - v1).rem_euclid(2) as u8 != w {
        return Err(WatermarkError::TamperDetected {
            frame: agg2.frame.get(),
        });
    }
    let nw = (effective_n as i128) * (w as i128);
    let diff = (v2 - v1 - nw) / 2;
    let avg = (v2 + v1 - nw) / 2;
    // Inverse of the embedding: the doubled originals are avg +- diff, with
    // the pair swap undone by the labels.
    let doubled_first = avg + diff;
    let doubled_second = avg - diff;
    if doubled_first.rem_euclid(2) != 0 {
        return Err(WatermarkError::NonIntegralRecovery {
            frame: agg1.frame.get(),
        });
    }
    if doubled_second.rem_euclid(2) != 0 {
        return Err(WatermarkError::NonIntegralRecovery {
            frame: agg2.frame.get(),
        });
    }
    Ok(((doubled_first / 2) as i64, (doubled_second / 2) as i64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::HashAlg;

    fn frame(j: u32) -> FrameIndex {
        FrameIndex::new(j)
    }

    fn agg(v: i64, j: u32) -> AggregateFrame {
        AggregateFrame::new(v, frame(j))
    }

    #[test]
    fn watermark_single_frame_is_msb_of_first_hash() {
        // With m = 1 the fold equals H_1, so w_1 is its most significant bit.
        let key = WatermarkKey::from_bytes(vec![0x01; 32], HashAlg::Sha256).unwrap();
        let schedule = generate_watermark(&key, &[1], HashAlg::Sha256);
        // H_1 = SHA-256(key || be64(1)) = bc731a1b...; MSB of 0xbc is 1.
        assert_eq!(schedule.bits(), &[1]);
    }

    #[test]
    fn watermark_three_frame_schedule_matches_fold_oracle() {
        let key_bytes = vec![0x01; 32];
        let key = WatermarkKey::from_bytes(key_bytes.clone(), HashAlg::Sha256).unwrap();
        let schedule = generate_watermark(&key, &[1, 2, 3], HashAlg::Sha256);
        // Frozen from an independent XOR-fold of SHA-256 digests:
        // W = 2dc7b50f..., whose leading bits are 0,0,1.
        assert_eq!(schedule.bits(), &[0, 0, 1]);

        // Recompute through a direct fold as the in-test oracle.
        use sha2::{Digest, Sha256};
        let mut folded = [0u8; 32];
        for t in [1u64, 2, 3] {
            let mut h = Sha256::new();
            h.update(&key_bytes);
            h.update(t.to_be_bytes());
            for (acc, b) in folded.iter_mut().zip(h.finalize()) {
                *acc ^= b;
            }
        }
        assert_eq!(folded[0], 0x2d);
        for (j, &bit) in schedule.bits().iter().enumerate() {
            assert_eq!(bit, (folded[j / 8] >> (7 - j % 8)) & 1);
        }
    }

    #[test]
    fn watermark_is_deterministic() {
        let key = WatermarkKey::from_bytes(vec![0x42; 64], HashAlg::Sha512).unwrap();
        let ts: Vec<u64> = (0..100).map(|k| 1000 + 60 * k).collect();
        let a = generate_watermark(&key, &ts, HashAlg::Sha512);
        let b = generate_watermark(&key, &ts, HashAlg::Sha512);
        assert_eq!(a, b);
    }

    #[test]
    fn watermark_wraps_past_hash_length() {
        let key = WatermarkKey::from_bytes(vec![0x07; 28], HashAlg::Sha224).unwrap();
        let ts: Vec<u64> = (0..500u64).collect();
        let schedule = generate_watermark(&key, &ts, HashAlg::Sha224);
        assert_eq!(schedule.len(), 500);
        let l = HashAlg::Sha224.bit_len();
        for j in 0..(500 - l) {
            assert_eq!(schedule.bits()[j], schedule.bits()[j + l]);
        }
    }

    #[test]
    fn key_length_must_match_hash() {
        assert!(WatermarkKey::from_bytes(vec![0; 32], HashAlg::Sha512).is_err());
        assert!(WatermarkKey::from_bytes(vec![0; 64], HashAlg::Sha512).is_ok());
    }

    #[test]
    fn rls_embed_direct() {
        assert_eq!(rls_embed(5, 1).unwrap(), 11);
        assert_eq!(rls_embed(0, 0).unwrap(), 0);
        assert_eq!(rls_embed(123_456, 1).unwrap(), 246_913);
    }

    #[test]
    fn rls_embed_overflow() {
        assert_eq!(rls_embed(u64::MAX / 2 + 1, 0), Err(WatermarkError::Overflow));
        assert_eq!(rls_embed((i64::MAX as u64) / 2 + 1, 1), Err(WatermarkError::Overflow));
    }

    #[test]
    fn rls_verify_extract_forward_oracle() {
        // Readings {2,3,4} with w=1 embed to {5,7,9}; V = 21, D = (21-3)/2 = 9.
        let v: u64 = [2u64, 3, 4].iter().map(|&d| rls_embed(d, 1).unwrap()).sum();
        assert_eq!(v, 21);
        assert_eq!(rls_verify_extract(agg(21, 1), 1, 3).unwrap(), 9);
    }

    #[test]
    fn rls_verify_detects_parity_mismatch() {
        assert_eq!(
            rls_verify_extract(agg(20, 1), 1, 3),
            Err(WatermarkError::TamperDetected { frame: 1 })
        );
    }

    #[test]
    fn rls_verify_all_zero_frame() {
        assert_eq!(rls_verify_extract(agg(0, 1), 0, 5).unwrap(), 0);
    }

    #[test]
    fn rls_round_trip_brute_force() {
        for d in 0..=10_000u64 {
            for w in 0..=1u8 {
                let e = rls_embed(d, w).unwrap();
                assert_eq!(e / 2, d);
                assert_eq!((e % 2) as u8, w);
            }
        }
    }

    #[test]
    fn rde_embed_direct() {
        assert_eq!(rde_embed(3, 5, 1).unwrap(), (10, 7));
        assert_eq!(rde_embed(0, 0, 0).unwrap(), (0, 0));
        assert_eq!(rde_embed(7, 7, 1).unwrap(), (14, 15));
    }

    #[test]
    fn rde_embed_first_output_even_and_diff_carries_bit() {
        for d1 in 0..50u64 {
            for d2 in 0..50u64 {
                for w in 0..=1u8 {
                    let (a, b) = rde_embed(d1, d2, w).unwrap();
                    assert_eq!(a % 2, 0);
                    assert_eq!((b as i64 - a as i64).rem_euclid(2) as u8, w);
                }
            }
        }
    }

    #[test]
    fn rde_verify_extract_single_meter() {
        // Inverse of rde_embed(3, 5, 1) = (10, 7).
        assert_eq!(rde_verify_extract(agg(10, 1), agg(7, 2), 1, 1).unwrap(), (3, 5));
    }

    #[test]
    fn rde_verify_extract_three_meters() {
        // Pairs (1,2), (3,4), (0,5) with w=1 embed to (4,3), (8,7), (10,1):
        // V1 = 22, V2 = 11, and the recovered sums are (4, 11).
        let pairs = [(1u64, 2u64), (3, 4), (0, 5)];
        let mut v1 = 0u64;
        let mut v2 = 0u64;
        for &(d1, d2) in &pairs {
            let (a, b) = rde_embed(d1, d2, 1).unwrap();
            v1 += a;
            v2 += b;
        }
        assert_eq!((v1, v2), (22, 11));
        assert_eq!(
            rde_verify_extract(agg(22, 1), agg(11, 2), 1, 3).unwrap(),
            (4, 11)
        );
    }

    #[test]
    fn rde_verify_detects_parity_mismatch() {
        assert_eq!(
            rde_verify_extract(agg(10, 1), agg(8, 2), 1, 1),
            Err(WatermarkError::TamperDetected { frame: 2 })
        );
    }

    #[test]
    fn rde_detects_same_parity_tamper_via_non_integral_recovery() {
        // Adding 1 to both aggregates keeps the pair parity but breaks the
        // final halving.
        let (a, b) = rde_embed(3, 5, 1).unwrap();
        let got = rde_verify_extract(agg(a as i64 + 1, 1), agg(b as i64 + 1, 2), 1, 1);
        assert!(matches!(got, Err(WatermarkError::NonIntegralRecovery { .. })));
    }

    #[test]
    fn rde_negative_difference_uses_nonnegative_residue() {
        // V2 - V1 negative and odd must still verify against w = 1.
        let (a, b) = rde_embed(0, 10, 1).unwrap(); // (20, 1)
        assert!((b as i64) < (a as i64));
        assert_eq!(
            rde_verify_extract(agg(a as i64, 1), agg(b as i64, 2), 1, 1).unwrap(),
            (0, 10)
        );
    }

    #[test]
    fn rde_aggregate_linearity_random_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = 2 * rng.gen_range(0..8) + 1;
            let w = rng.gen_range(0..=1u8);
            let mut v1: i64 = 0;
            let mut v2: i64 = 0;
            let mut sum1: i64 = 0;
            let mut sum2: i64 = 0;
            for _ in 0..n {
                let d1 = rng.gen_range(0..100_000u64);
                let d2 = rng.gen_range(0..100_000u64);
                let (a, b) = rde_embed(d1, d2, w).unwrap();
                v1 += a as i64;
                v2 += b as i64;
                sum1 += d1 as i64;
                sum2 += d2 as i64;
            }
            let got = rde_verify_extract(agg(v1, 1), agg(v2, 2), w, n as u32).unwrap();
            assert_eq!(got, (sum1, sum2));
        }
    }

    #[test]
    fn parity_soundness_odd_deltas_always_detected() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let d: u64 = rng.gen_range(0..1_000_000);
            let w = rng.gen_range(0..=1u8);
            let v = rls_embed(d, w).unwrap() as i64;
            let odd = 2 * rng.gen_range(-500_000i64..500_000) + 1;
            assert!(matches!(
                rls_verify_extract(agg(v + odd, 1), w, 1),
                Err(WatermarkError::TamperDetected { .. })
            ));
            let even = 2 * rng.gen_range(-500_000i64..500_000);
            assert!(rls_verify_extract(agg(v + even, 1), w, 1).is_ok());
        }
    }
}
