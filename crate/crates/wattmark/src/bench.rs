//! Wall-clock microbenchmarks for the two protocol phases a meter pays for:
//! epoch initialization (key and seed setup plus watermark generation) and
//! the per-reading sealing step, for each hash algorithm and AES key size.
//!
//! Timings are host-dependent; the stable claims are the relative orderings
//! (a longer digest costs more to fold, a longer AES key schedule costs more
//! per block). Workloads are deterministic: every repetition processes
//! identical inputs.

use std::hint::black_box;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::domain::{
    AesKeySize, EpochConfig, FrameIndex, HashAlg, MeterId, MeterReading, Mode, Registry,
};
use crate::entities::SmState;
use crate::shield::KeyMaterial;
use crate::watermark::generate_watermark;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BenchError {
    #[error("benchmarks need at least 1000 repetitions, got {got}")]
    TooFewReps { got: u32 },
    #[error("benchmark config invalid: {0}")]
    Invalid(String),
}

/// What to measure. Defaults mirror a 24-frame epoch across every supported
/// hash and key size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchConfig {
    pub reps: u32,
    pub frames: u32,
    pub hashes: Vec<HashAlg>,
    pub aes_sizes: Vec<AesKeySize>,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            reps: 1000,
            frames: 24,
            hashes: vec![HashAlg::Sha224, HashAlg::Sha256, HashAlg::Sha512],
            aes_sizes: vec![AesKeySize::Aes128, AesKeySize::Aes192, AesKeySize::Aes256],
            seed: 0xB37C,
        }
    }
}

/// Trimmed summary of one timing series, in milliseconds. The top and
/// bottom 1% of samples are dropped before computing mean and deviation so
/// scheduler hiccups do not skew the result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingStats {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub samples: u32,
}

impl TimingStats {
    pub fn from_samples(mut samples: Vec<f64>) -> Self {
        assert!(!samples.is_empty(), "timing series cannot be empty");
        samples.sort_by(|a, b| a.partial_cmp(b).expect("timings are finite"));
        let trim = samples.len() / 100;
        let kept = &samples[trim..samples.len() - trim];
        let n = kept.len() as f64;
        let mean = kept.iter().sum::<f64>() / n;
        let var = if kept.len() > 1 {
            kept.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        TimingStats {
            mean_ms: mean,
            std_ms: var.sqrt(),
            min_ms: kept[0],
            max_ms: kept[kept.len() - 1],
            samples: kept.len() as u32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InitRow {
    pub hash: HashAlg,
    pub stats: TimingStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterRow {
    pub aes_bits: u16,
    pub scheme: Scheme,
    pub stats: TimingStats,
}

/// The two reversible embeddings, as benchmark labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Rls,
    Rde,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Rls => "rls",
            Scheme::Rde => "rde",
        }
    }
}

/// Benchmark results: initialization cost per hash algorithm and
/// per-reading sealing cost per AES key size and embedding scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub repetitions: u32,
    pub frames: u32,
    pub host: String,
    pub init: Vec<InitRow>,
    pub iter: Vec<IterRow>,
}

impl BenchReport {
    pub fn init_mean(&self, hash: HashAlg) -> Option<f64> {
        self.init.iter().find(|r| r.hash == hash).map(|r| r.stats.mean_ms)
    }

    pub fn iter_mean(&self, bits: u16, scheme: Scheme) -> Option<f64> {
        self.iter
            .iter()
            .find(|r| r.aes_bits == bits && r.scheme == scheme)
            .map(|r| r.stats.mean_ms)
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Plain-text table for terminal output.
    pub fn human_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "host: {} | repetitions: {} | epoch frames: {}\n\n",
            self.host, self.repetitions, self.frames
        ));
        out.push_str("initialization (key/seed setup + watermark schedule)\n");
        out.push_str(&format!("  {:<10} {:>12} {:>12}\n", "hash", "mean ms", "std ms"));
        for row in &self.init {
            out.push_str(&format!(
                "  {:<10} {:>12.4} {:>12.4}\n",
                row.hash.name(),
                row.stats.mean_ms,
                row.stats.std_ms
            ));
        }
        out.push_str("\nper-reading sealing step\n");
        out.push_str(&format!(
            "  {:<8} {:<8} {:>12} {:>12}\n",
            "scheme", "aes", "mean ms", "std ms"
        ));
        for row in &self.iter {
            out.push_str(&format!(
                "  {:<8} {:<8} {:>12.6} {:>12.6}\n",
                row.scheme.name(),
                row.aes_bits,
                row.stats.mean_ms,
                row.stats.std_ms
            ));
        }
        out
    }
}

fn ms_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// One initialization: everything an epoch needs before the first frame.
fn init_workload(hash: HashAlg, timestamps: &[u64], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let registry = Registry::build(1);
    let material = KeyMaterial::generate(&mut rng, &registry, AesKeySize::Aes128, hash);
    let schedule = generate_watermark(&material.watermark_key, timestamps, hash);
    black_box((material, schedule));
}

/// Builds the meter used for iteration timing, deterministically.
fn bench_meter(mode: Mode, aes: AesKeySize, seed: u64) -> SmState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let registry = Registry::build(1);
    let material = KeyMaterial::generate(&mut rng, &registry, aes, HashAlg::Sha256);
    let timestamps = EpochConfig::regular_timestamps(0, 3600, 2);
    let schedule = generate_watermark(&material.watermark_key, &timestamps, HashAlg::Sha256);
    let meter = MeterId::new(1);
    SmState::new(
        meter,
        mode,
        &material.aes_keys[&1],
        *material.seeds.r1(1).expect("meter 1 has an R1 seed"),
        *material.seeds.r3(1).expect("meter 1 has an R3 seed"),
        schedule,
    )
}

/// Runs the full measurement matrix.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    if cfg.reps < 1000 {
        return Err(BenchError::TooFewReps { got: cfg.reps });
    }
    if cfg.frames == 0 || cfg.hashes.is_empty() || cfg.aes_sizes.is_empty() {
        return Err(BenchError::Invalid(
            "need at least one frame, one hash, and one key size".into(),
        ));
    }

    // Comparisons between rows are the point of the report, so sampling is
    // paired: each repetition measures every workload once, in a rotating
    // order. Slow drift (frequency scaling, scheduler pressure) then lands
    // evenly on all series instead of biasing whichever ran last.
    let warmup = cfg.reps.min(100);
    let timestamps = EpochConfig::regular_timestamps(0, 3600, cfg.frames);

    let mut init_series: Vec<(HashAlg, Vec<f64>)> = cfg
        .hashes
        .iter()
        .map(|&h| (h, Vec::with_capacity(cfg.reps as usize)))
        .collect();
    for &hash in &cfg.hashes {
        for _ in 0..warmup {
            init_workload(hash, &timestamps, cfg.seed);
        }
    }
    let k = init_series.len();
    for rep in 0..cfg.reps as usize {
        for off in 0..k {
            let (hash, samples) = &mut init_series[(rep + off) % k];
            let start = Instant::now();
            init_workload(*hash, &timestamps, cfg.seed);
            samples.push(ms_since(start));
        }
    }
    let init = init_series
        .into_iter()
        .map(|(hash, samples)| InitRow {
            hash,
            stats: TimingStats::from_samples(samples),
        })
        .collect();

    struct IterSeries {
        aes_bits: u16,
        scheme: Scheme,
        sm: SmState,
        samples: Vec<f64>,
    }
    let mut iter_series: Vec<IterSeries> = Vec::new();
    for &aes in &cfg.aes_sizes {
        iter_series.push(IterSeries {
            aes_bits: aes.bits(),
            scheme: Scheme::Rls,
            sm: bench_meter(Mode::LowFrequency, aes, cfg.seed ^ 0xA5),
            samples: Vec::with_capacity(cfg.reps as usize),
        });
        iter_series.push(IterSeries {
            aes_bits: aes.bits(),
            scheme: Scheme::Rde,
            sm: bench_meter(Mode::HighFrequency, aes, cfg.seed ^ 0x5A),
            samples: Vec::with_capacity(cfg.reps as usize),
        });
    }

    // Single sealing steps sit near the timer's resolution, so one sample
    // times a small batch and records the per-reading cost.
    const ITER_BATCH: u32 = 32;
    let meter = MeterId::new(1);
    let frame1 = FrameIndex::new(1);
    let frame2 = frame1.next();
    let time_one = |series: &mut IterSeries| {
        match series.scheme {
            Scheme::Rls => {
                let start = Instant::now();
                for _ in 0..ITER_BATCH {
                    let d = MeterReading::new(123_456, meter, frame1)
                        .expect("fixed reading in range");
                    black_box(series.sm.sm_step_low(d, frame1).expect("sealing succeeds"));
                }
                series.samples.push(ms_since(start) / f64::from(ITER_BATCH));
            }
            Scheme::Rde => {
                let start = Instant::now();
                for _ in 0..ITER_BATCH {
                    let d1 =
                        MeterReading::new(123_456, meter, frame1).expect("fixed reading in range");
                    let d2 =
                        MeterReading::new(654_321, meter, frame2).expect("fixed reading in range");
                    black_box(series.sm.sm_step_high(d1, d2, 1).expect("sealing succeeds"));
                }
                // One pair step seals two readings; report the per-reading cost.
                series.samples.push(ms_since(start) / f64::from(2 * ITER_BATCH));
            }
        }
    };

    for series in &mut iter_series {
        for _ in 0..warmup.min(25) {
            time_one(series);
        }
        series.samples.clear();
    }
    let k = iter_series.len();
    for rep in 0..cfg.reps as usize {
        for off in 0..k {
            time_one(&mut iter_series[(rep + off) % k]);
        }
    }
    let iter = iter_series
        .into_iter()
        .map(|series| IterRow {
            aes_bits: series.aes_bits,
            scheme: series.scheme,
            stats: TimingStats::from_samples(series.samples),
        })
        .collect();

    Ok(BenchReport {
        repetitions: cfg.reps,
        frames: cfg.frames,
        host: format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS),
        init,
        iter,
    })
}
