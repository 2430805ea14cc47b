//! Release gate: one test per acceptance criterion. Each test prints a
//! single `criterion N ...: PASS` line once its assertions hold, so a
//! `cargo test --test acceptance -- --nocapture` run reads as a checklist.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wattmark::bench::{run_bench, BenchConfig, Scheme};
use wattmark::domain::{
    AesKeySize, EpochConfig, FrameIndex, HashAlg, MeterReading, Mode, Registry, Scale,
};
use wattmark::entities::{register, CcState, DaState, SmState, DA_TO_CC_LEN, SM_TO_DA_LEN};
use wattmark::netsim::{
    eavesdrop_probe, run_epoch, AdversaryScript, DeltaSpec, FramePredicate, Link, TamperAction,
    Verdict,
};
use wattmark::scenario::{DataSource, ScenarioConfig};
use wattmark::shield::{add_mask, mask64, KeyMaterial, StreamTag, AGGREGATOR_INDEX};
use wattmark::watermark::{
    generate_watermark, rde_embed, rde_verify_extract, rls_embed, AggregateFrame,
};

fn synthetic_scenario(mode: Mode, n: u32, m: u32, master_seed: u64) -> ScenarioConfig {
    let epoch = EpochConfig::new(
        mode,
        n,
        m,
        HashAlg::Sha256,
        AesKeySize::Aes128,
        Scale::MILLI,
        EpochConfig::regular_timestamps(0, 3600, m),
    )
    .expect("valid epoch");
    ScenarioConfig {
        epoch,
        data: DataSource::Synthetic { max_raw: 50_000 },
        adversary: None,
        master_seed,
        check_freshness: true,
        out_dir: None,
    }
}

#[test]
fn criterion_1_end_to_end_exactness() {
    let mut meta = ChaCha8Rng::seed_from_u64(0xACCE);
    let hashes = [HashAlg::Sha224, HashAlg::Sha256, HashAlg::Sha512];
    let aes_sizes = [AesKeySize::Aes128, AesKeySize::Aes192, AesKeySize::Aes256];
    let scales = [Scale::UNIT, Scale::MILLI];
    let mut ran = 0u32;
    for i in 0..200u32 {
        let mode = if i % 2 == 0 {
            Mode::LowFrequency
        } else {
            Mode::HighFrequency
        };
        let n = meta.gen_range(1..=50);
        let m = match mode {
            Mode::LowFrequency => meta.gen_range(2..=48),
            Mode::HighFrequency => 2 * meta.gen_range(1..=24),
        };
        let epoch = EpochConfig::new(
            mode,
            n,
            m,
            hashes[(i % 3) as usize],
            aes_sizes[((i / 3) % 3) as usize],
            scales[(i % 2) as usize],
            EpochConfig::regular_timestamps(u64::from(meta.gen::<u32>()), 60, m),
        )
        .expect("valid epoch");
        let cfg = ScenarioConfig {
            epoch,
            data: DataSource::Synthetic {
                max_raw: meta.gen_range(1..=200_000),
            },
            adversary: None,
            master_seed: meta.gen(),
            check_freshness: true,
            out_dir: None,
        };
        let report = run_epoch(&cfg).expect("clean scenario runs");
        assert!(
            report.all_clean_and_exact(),
            "scenario {i} (mode {mode:?}, n={n}, m={m}) was not exact: {report:?}"
        );
        assert_eq!(report.frames_total, m);
        for rec in &report.frames {
            assert_eq!(rec.recovered_raw, Some(rec.truth_raw), "scenario {i} frame {}", rec.frame);
        }
        ran += 1;
    }
    assert_eq!(ran, 200);
    println!("criterion 1 (200 randomized scenarios recover every per-frame sum exactly): PASS");
}

#[test]
fn criterion_2_pair_embedding_round_trip_exhaustive() {
    let f1 = FrameIndex::new(1);
    let f2 = FrameIndex::new(2);
    let mut cases = 0u32;
    for d1 in 0..=200u64 {
        for d2 in 0..=200u64 {
            for w in 0..=1u8 {
                let (e1, e2) = rde_embed(d1, d2, w).expect("small values embed");
                let (s1, s2) = rde_verify_extract(
                    AggregateFrame::new(e1 as i64, f1),
                    AggregateFrame::new(e2 as i64, f2),
                    w,
                    1,
                )
                .unwrap_or_else(|e| panic!("d1={d1} d2={d2} w={w}: {e}"));
                assert_eq!((s1, s2), (d1 as i64, d2 as i64), "d1={d1} d2={d2} w={w}");
                cases += 1;
            }
        }
    }
    assert_eq!(cases, 80_802);
    println!("criterion 2 (pair embedding inverts exactly in all 80,802 cases): PASS");
}

fn modify_add_scenario(spec: DeltaSpec, master_seed: u64) -> ScenarioConfig {
    let mut cfg = synthetic_scenario(Mode::LowFrequency, 3, 10_000, master_seed);
    cfg.adversary = Some(AdversaryScript {
        action: TamperAction::ModifyAdd(spec),
        link: Link::DaToCc,
        meter_filter: None,
        frames: FramePredicate::All,
        rng_seed: master_seed ^ 0xD17A,
    });
    cfg
}

#[test]
fn criterion_3_parity_detection_law() {
    let odd = run_epoch(&modify_add_scenario(DeltaSpec::RandomOdd, 0xC3A)).unwrap();
    assert_eq!(odd.frames_attacked, 10_000);
    assert_eq!(
        odd.detections_on_attacked, 10_000,
        "odd deltas must always flip the parity"
    );

    let even = run_epoch(&modify_add_scenario(DeltaSpec::RandomEven, 0xC3B)).unwrap();
    assert_eq!(even.frames_attacked, 10_000);
    assert_eq!(even.frames_detected, 0, "even deltas never flip the parity");

    let uniform = run_epoch(&modify_add_scenario(DeltaSpec::UniformRandom, 0xC3C)).unwrap();
    assert_eq!(uniform.frames_attacked, 10_000);
    let detected = uniform.detections_on_attacked;
    // 95% binomial interval around 0.5 over 10,000 trials: 0.5 ± 1.96·√(0.25/10⁴).
    assert!(
        (4902..=5098).contains(&detected),
        "uniform-delta detections {detected} outside [4902, 5098]"
    );
    println!(
        "criterion 3 (parity law: odd 10000/10000, even 0/10000, uniform {detected}/10000 in 95% CI): PASS"
    );
}

#[test]
fn criterion_4_replay_resistance() {
    let mut cfg = synthetic_scenario(Mode::LowFrequency, 3, 1001, 0xC4);
    cfg.adversary = Some(AdversaryScript {
        action: TamperAction::ReplayPrevious,
        link: Link::DaToCc,
        meter_filter: None,
        frames: FramePredicate::All,
        rng_seed: 0xC4F,
    });

    let on = run_epoch(&cfg).unwrap();
    // The first frame has no predecessor to replay and passes unaltered.
    assert_eq!(on.frames_attacked, 1000);
    assert_eq!(on.detections_on_attacked, 1000, "freshness must reject every replay");
    assert_eq!(on.detections_by_kind["detected-freshness"], 1000);

    cfg.check_freshness = false;
    let off = run_epoch(&cfg).unwrap();
    assert_eq!(off.frames_attacked, 1000);

    // Independent brute-force oracle: rebuild the dealt secrets from the
    // same master seed and predict, frame by frame, whether the stale
    // aggregate survives the parity check under the current frame's masks.
    let trace = cfg.trace().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.master_seed);
    let registry = Registry::build(cfg.epoch.n_registered);
    let material = KeyMaterial::generate(&mut rng, &registry, cfg.epoch.aes_size, cfg.epoch.hash_alg);
    let schedule = generate_watermark(&material.watermark_key, &cfg.epoch.timestamps, cfg.epoch.hash_alg);

    let masked_aggregate = |j: u32| -> u64 {
        let f = FrameIndex::new(j);
        let w = schedule.bit(f);
        let mut q: u64 = 0;
        for (pos, meter) in registry.meters().iter().enumerate() {
            let idx = meter.index();
            let marked = rls_embed(trace.raw(pos, f), w).unwrap();
            let r3 = mask64(StreamTag::R3, material.seeds.r3(idx).unwrap(), idx, f);
            q = q.wrapping_add(add_mask(marked, r3));
        }
        q ^ mask64(StreamTag::R2, material.seeds.r2(), AGGREGATOR_INDEX, f)
    };

    let mut predicted = 0u32;
    for j in 2..=cfg.epoch.m {
        let f = FrameIndex::new(j);
        let stale = masked_aggregate(j - 1);
        let mut v = stale ^ mask64(StreamTag::R2, material.seeds.r2(), AGGREGATOR_INDEX, f);
        for meter in registry.meters() {
            let idx = meter.index();
            v = v.wrapping_sub(mask64(StreamTag::R3, material.seeds.r3(idx).unwrap(), idx, f));
        }
        let detect = (v as i64).rem_euclid(2) as u8 != schedule.bit(f);
        let rec = &off.frames[(j - 1) as usize];
        if detect {
            predicted += 1;
            assert_eq!(
                rec.verdict,
                Verdict::DetectedParity,
                "frame {j}: oracle predicts a parity detection"
            );
        } else {
            assert!(
                matches!(rec.verdict, Verdict::CorruptedUndetected | Verdict::Clean),
                "frame {j}: oracle predicts no detection, run said {:?}",
                rec.verdict
            );
        }
    }
    assert_eq!(off.detections_on_attacked, predicted);
    println!(
        "criterion 4 (replay: 1000/1000 rejected with freshness on; without, {predicted}/1000 \
         detections exactly match the brute-force parity oracle): PASS"
    );
}

#[test]
fn criterion_5_zero_communication_overhead() {
    let values: [u64; 4] = [0, 1, 1 << 20, 1 << 39];

    let epoch = EpochConfig::new(
        Mode::LowFrequency,
        3,
        values.len() as u32,
        HashAlg::Sha256,
        AesKeySize::Aes128,
        Scale::MILLI,
        EpochConfig::regular_timestamps(0, 3600, values.len() as u32),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC5);
    let mut dep = register(&epoch, &mut rng, true);
    for (k, &value) in values.iter().enumerate() {
        let f = FrameIndex::new(k as u32 + 1);
        let batch: Vec<_> = dep
            .sms
            .iter()
            .map(|sm| {
                let raw = if sm.meter().is_dummy() { 0 } else { value };
                let d = MeterReading::new(raw, sm.meter(), f).unwrap();
                let msg = sm.sm_step_low(d, f).unwrap();
                assert_eq!(msg.to_bytes().len(), SM_TO_DA_LEN);
                assert_eq!(msg.payload.len(), 16, "meter payload is one cipher block");
                msg
            })
            .collect();
        let agg = dep.da.da_step(&batch).unwrap();
        assert_eq!(agg.to_bytes().len(), DA_TO_CC_LEN);
        assert_eq!(agg.payload.len(), 8, "aggregate payload is one 64-bit word");
        let out = dep.cc.cc_step_low(&agg).unwrap();
        assert_eq!(out.raw_sum, 3 * value as i64);
    }

    let epoch_high = EpochConfig::new(
        Mode::HighFrequency,
        4,
        2 * values.len() as u32,
        HashAlg::Sha256,
        AesKeySize::Aes128,
        Scale::MILLI,
        EpochConfig::regular_timestamps(0, 60, 2 * values.len() as u32),
    )
    .unwrap();
    let mut dep = register(&epoch_high, &mut rng, true);
    for (k, &value) in values.iter().enumerate() {
        let pair = k as u32 + 1;
        let odd = FrameIndex::new(2 * pair - 1);
        let even = odd.next();
        let mut batch1 = Vec::new();
        let mut batch2 = Vec::new();
        for sm in &dep.sms {
            let raw = if sm.meter().is_dummy() { 0 } else { value };
            let d1 = MeterReading::new(raw, sm.meter(), odd).unwrap();
            let d2 = MeterReading::new(raw, sm.meter(), even).unwrap();
            let (m1, m2) = sm.sm_step_high(d1, d2, pair).unwrap();
            for msg in [&m1, &m2] {
                assert_eq!(msg.to_bytes().len(), SM_TO_DA_LEN);
                assert_eq!(msg.payload.len(), 16);
            }
            batch1.push(m1);
            batch2.push(m2);
        }
        let a1 = dep.da.da_step(&batch1).unwrap();
        let a2 = dep.da.da_step(&batch2).unwrap();
        for msg in [&a1, &a2] {
            assert_eq!(msg.to_bytes().len(), DA_TO_CC_LEN);
            assert_eq!(msg.payload.len(), 8);
        }
        let (o1, o2) = dep.cc.cc_step_high(&a1, &a2).unwrap();
        assert_eq!(o1.raw_sum, 4 * value as i64);
        assert_eq!(o2.raw_sum, 4 * value as i64);
    }

    // Message counts match the plaintext baseline: one message per meter
    // per frame on the meter link, one aggregate per frame downstream.
    for mode in [Mode::LowFrequency, Mode::HighFrequency] {
        let report = run_epoch(&synthetic_scenario(mode, 4, 6, 0xC5F)).unwrap();
        assert_eq!(report.effective_meters, 5);
        assert_eq!(report.sm_to_da_messages, 5 * 6);
        assert_eq!(report.da_to_cc_messages, 6);
    }
    println!(
        "criterion 5 (16-byte meter payloads, 8-byte aggregates across the value sweep; \
         message counts equal the plaintext baseline): PASS"
    );
}

#[test]
fn criterion_6_confidentiality_probe() {
    let epoch = EpochConfig::new(
        Mode::LowFrequency,
        1,
        1000,
        HashAlg::Sha256,
        AesKeySize::Aes128,
        Scale::MILLI,
        EpochConfig::regular_timestamps(0, 60, 1000),
    )
    .unwrap();
    let verdict = eavesdrop_probe(&epoch, 0xC6, 4242, 1000);
    assert_eq!(verdict.payloads_observed, 1000);
    assert_eq!(verdict.distinct_payloads, 1000);
    assert_eq!(verdict.collisions, 0);
    assert!(verdict.leak_free);
    println!("criterion 6 (a constant reading seals to 1000 distinct payloads, zero collisions): PASS");
}

#[test]
fn criterion_7_benchmark_orderings() {
    let cfg = BenchConfig {
        reps: 2000,
        frames: 24,
        hashes: vec![HashAlg::Sha224, HashAlg::Sha256, HashAlg::Sha512],
        aes_sizes: vec![AesKeySize::Aes128, AesKeySize::Aes192, AesKeySize::Aes256],
        seed: 0xC7,
    };
    let report = run_bench(&cfg).expect("2000 repetitions is a valid benchmark");
    assert_eq!(report.repetitions, 2000);

    let init256 = report.init_mean(HashAlg::Sha256).unwrap();
    let init512 = report.init_mean(HashAlg::Sha512).unwrap();
    assert!(init256 > 0.0 && init512 > 0.0);
    assert!(
        init512 > init256,
        "init mean sha512 {init512:.6} ms must exceed sha256 {init256:.6} ms"
    );

    for scheme in [Scheme::Rls, Scheme::Rde] {
        let i128 = report.iter_mean(128, scheme).unwrap();
        let i192 = report.iter_mean(192, scheme).unwrap();
        let i256 = report.iter_mean(256, scheme).unwrap();
        assert!(i128 > 0.0);
        assert!(
            i256 >= i192 && i192 >= i128,
            "{}: iteration means must be non-decreasing in key size \
             (128: {i128:.6}, 192: {i192:.6}, 256: {i256:.6})",
            scheme.name()
        );
    }
    println!(
        "criterion 7 (init sha512 {init512:.4} ms > sha256 {init256:.4} ms; \
         iteration means non-decreasing in AES key size for both schemes): PASS"
    );
}

#[test]
fn criterion_8_knowledge_partition() {
    let mode = Mode::LowFrequency;
    let mut rng = ChaCha8Rng::seed_from_u64(0xC8);
    let registry = Registry::build(4);
    assert!(registry.has_dummy(), "even count gets a dummy meter");
    let material = KeyMaterial::generate(&mut rng, &registry, AesKeySize::Aes192, HashAlg::Sha256);
    let timestamps = EpochConfig::regular_timestamps(0, 3600, 3);
    let schedule = generate_watermark(&material.watermark_key, &timestamps, HashAlg::Sha256);

    // Each meter holds its own key and seeds plus the schedule.
    let sms: Vec<SmState> = registry
        .meters()
        .iter()
        .map(|&meter| {
            let idx = meter.index();
            SmState::new(
                meter,
                mode,
                &material.aes_keys[&idx],
                *material.seeds.r1(idx).unwrap(),
                *material.seeds.r3(idx).unwrap(),
                schedule.clone(),
            )
        })
        .collect();

    // The aggregator's constructor accepts AES keys, R1 seeds, and the R2
    // seed: there is no parameter through which an R3 seed or the
    // watermark key could reach it.
    let da_keys = material.aes_keys.clone();
    let da_r1 = material.seeds.r1_map().clone();
    let shared_r2 = *material.seeds.r2();
    let mut da = DaState::new(mode, &da_keys, da_r1, shared_r2, true);

    // The control center's constructor accepts the registry, R3 seeds, the
    // R2 seed, and the schedule: no AES key, no R1 seed.
    let cc_r3 = material.seeds.r3_map().clone();
    let mut cc = CcState::new(
        mode,
        registry.clone(),
        cc_r3,
        shared_r2,
        schedule.clone(),
        Scale::MILLI,
        true,
    );

    // The full dealing goes away; every entity now runs on its share alone.
    drop(material);

    for j in 1..=3u32 {
        let f = FrameIndex::new(j);
        let batch: Vec<_> = sms
            .iter()
            .map(|sm| {
                let raw = if sm.meter().is_dummy() {
                    0
                } else {
                    100 + u64::from(j) * u64::from(sm.meter().index())
                };
                let d = MeterReading::new(raw, sm.meter(), f).unwrap();
                sm.sm_step_low(d, f).unwrap()
            })
            .collect();
        let agg = da.da_step(&batch).unwrap();
        let out = cc.cc_step_low(&agg).unwrap();
        let truth: i64 = registry
            .meters()
            .iter()
            .filter(|meter| !meter.is_dummy())
            .map(|meter| 100 + i64::from(j) * i64::from(meter.index()))
            .sum();
        assert_eq!(out.raw_sum, truth, "frame {j}");
    }
    println!(
        "criterion 8 (aggregator and control center are built from disjoint secret shares \
         and still complete the protocol): PASS"
    );
}
