//! Scenario configuration and meter-data ingestion: a flat key-value config
//! format, CSV trace loading with strict completeness checks, and seeded
//! synthetic trace generation, plus the ground-truth table the simulator
//! compares recovered aggregates against.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::domain::{
    fixed_point_encode, fixed_point_parse, DomainError, EpochConfig, FrameIndex, HashAlg, Mode,
    Registry, Scale, RAW_LIMIT,
};
use crate::netsim::{AdversaryScript, DeltaSpec, FramePredicate, Link, TamperAction};

/// Default seconds between frames per mode: hourly readings in low-frequency
/// mode, one minute in high-frequency mode.
pub fn default_step(mode: Mode) -> u64 {
    match mode {
        Mode::LowFrequency => 3600,
        Mode::HighFrequency => 60,
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("row {row}: {detail}")]
    Parse { row: usize, detail: String },
    #[error("row {row}: negative energy value")]
    NegativeReading { row: usize },
    #[error("row {row}: energy value out of range")]
    Overflow { row: usize },
    #[error("missing reading for meter {meter} at frame {frame}")]
    MissingCell { meter: u32, frame: u32 },
    #[error("duplicate reading for meter {meter} at frame {frame} (row {row})")]
    DuplicateCell { meter: u32, frame: u32, row: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl From<DomainError> for ScenarioError {
    fn from(e: DomainError) -> Self {
        ScenarioError::Config(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// Trace table
// ---------------------------------------------------------------------------

/// Where the readings come from: a CSV file of real traces, or a seeded
/// uniform synthetic generator bounded by `max_raw` (fixed-point units).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic { max_raw: u64 },
}

/// The complete n × m rectangle of readings for one epoch, in registry
/// order (dummy meter last when present), plus per-frame ground-truth sums.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceTable {
    meters: u32,
    m: u32,
    readings: Vec<u64>,
    truth: Vec<i64>,
}

impl TraceTable {
    fn build<F: FnMut(usize, u32) -> u64>(registry: &Registry, m: u32, mut cell: F) -> TraceTable {
        let meters = registry.meters().len() as u32;
        let mut readings = Vec::with_capacity((meters * m) as usize);
        for (pos, meter) in registry.meters().iter().enumerate() {
            for frame in 1..=m {
                let raw = if meter.is_dummy() { 0 } else { cell(pos, frame) };
                debug_assert!(raw < RAW_LIMIT);
                readings.push(raw);
            }
        }
        let truth = (1..=m)
            .map(|frame| {
                (0..meters as usize)
                    .map(|pos| readings[pos * m as usize + (frame - 1) as usize] as i64)
                    .sum()
            })
            .collect();
        TraceTable {
            meters,
            m,
            readings,
            truth,
        }
    }

    /// Constant-value trace for every real meter; the dummy meter stays zero.
    pub fn constant(registry: &Registry, m: u32, raw: u64) -> TraceTable {
        TraceTable::build(registry, m, |_, _| raw)
    }

    pub fn meters(&self) -> u32 {
        self.meters
    }

    pub fn frames(&self) -> u32 {
        self.m
    }

    /// Reading for the meter at `pos` in registry order.
    pub fn raw(&self, pos: usize, frame: FrameIndex) -> u64 {
        self.readings[pos * self.m as usize + (frame.get() - 1) as usize]
    }

    /// Ground-truth sum of all readings in a frame.
    pub fn truth_raw(&self, frame: FrameIndex) -> i64 {
        self.truth[(frame.get() - 1) as usize]
    }
}

/// Draws a uniform trace in [0, max_raw], deterministic for a fixed seed.
pub fn synth_trace(seed: u64, epoch: &EpochConfig, max_raw: u64) -> TraceTable {
    assert!(max_raw < RAW_LIMIT, "synthetic bound exceeds the raw range");
    let registry = Registry::build(epoch.n_registered);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TraceTable::build(&registry, epoch.m, |_, _| rng.gen_range(0..=max_raw))
}

/// Scans a CSV trace for its frame schedule: the sorted set of distinct
/// timestamps. Used to derive the epoch before a full load.
pub fn csv_timestamps(path: &Path) -> Result<Vec<u64>, ScenarioError> {
    let mut reader = csv_reader(path)?;
    check_headers(&mut reader, path)?;
    let mut stamps = BTreeSet::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| ScenarioError::Parse {
            row,
            detail: e.to_string(),
        })?;
        stamps.insert(parse_timestamp(&record, row)?);
    }
    if stamps.is_empty() {
        return Err(ScenarioError::Config(format!(
            "{} contains no data rows",
            path.display()
        )));
    }
    Ok(stamps.into_iter().collect())
}

/// Loads a CSV trace against an already-validated epoch. The file must form
/// a complete rectangle: one reading per registered meter per epoch
/// timestamp, no duplicates, no negatives.
pub fn load_csv(path: &Path, epoch: &EpochConfig) -> Result<TraceTable, ScenarioError> {
    let registry = Registry::build(epoch.n_registered);
    let frame_of: BTreeMap<u64, u32> = epoch
        .timestamps
        .iter()
        .enumerate()
        .map(|(i, &t)| (t, i as u32 + 1))
        .collect();
    if frame_of.len() != epoch.timestamps.len() {
        return Err(ScenarioError::Config(
            "epoch timestamps must be distinct".into(),
        ));
    }

    let mut cells: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    let mut reader = csv_reader(path)?;
    check_headers(&mut reader, path)?;
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| ScenarioError::Parse {
            row,
            detail: e.to_string(),
        })?;
        let meter: u32 = record
            .get(0)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| ScenarioError::Parse {
                row,
                detail: format!("meter_id {:?} is not an integer", record.get(0).unwrap_or("")),
            })?;
        if meter < 1 || meter > epoch.n_registered {
            return Err(ScenarioError::Parse {
                row,
                detail: format!(
                    "meter_id {meter} is outside the registered range 1..={}",
                    epoch.n_registered
                ),
            });
        }
        let stamp = parse_timestamp(&record, row)?;
        let frame = *frame_of.get(&stamp).ok_or_else(|| ScenarioError::Parse {
            row,
            detail: format!("timestamp {stamp} is not part of the epoch schedule"),
        })?;
        let energy = record.get(2).unwrap_or("").trim();
        let raw = fixed_point_parse(energy, epoch.scale).map_err(|e| match e {
            DomainError::NegativeReading => ScenarioError::NegativeReading { row },
            DomainError::Overflow(_) => ScenarioError::Overflow { row },
            other => ScenarioError::Parse {
                row,
                detail: format!("energy {energy:?}: {other}"),
            },
        })?;
        if cells.insert((meter, frame), raw).is_some() {
            return Err(ScenarioError::DuplicateCell { meter, frame, row });
        }
    }

    for meter in 1..=epoch.n_registered {
        for frame in 1..=epoch.m {
            if !cells.contains_key(&(meter, frame)) {
                return Err(ScenarioError::MissingCell { meter, frame });
            }
        }
    }

    Ok(TraceTable::build(&registry, epoch.m, |pos, frame| {
        cells[&(pos as u32 + 1, frame)]
    }))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>, ScenarioError> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
}

fn check_headers(
    reader: &mut csv::Reader<std::fs::File>,
    path: &Path,
) -> Result<(), ScenarioError> {
    let headers = reader.headers().map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let got: Vec<&str> = headers.iter().collect();
    if got != ["meter_id", "timestamp", "energy"] {
        return Err(ScenarioError::Parse {
            row: 1,
            detail: format!("expected header meter_id,timestamp,energy, got {got:?}"),
        });
    }
    Ok(())
}

fn parse_timestamp(record: &csv::StringRecord, row: usize) -> Result<u64, ScenarioError> {
    record
        .get(1)
        .unwrap_or("")
        .trim()
        .parse()
        .map_err(|_| ScenarioError::Parse {
            row,
            detail: format!(
                "timestamp {:?} is not a non-negative integer",
                record.get(1).unwrap_or("")
            ),
        })
}

// ---------------------------------------------------------------------------
// Scenario configuration
// ---------------------------------------------------------------------------

/// A full simulation scenario: the epoch, the data source, an optional
/// adversary, and the seed that makes the run reproducible.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub epoch: EpochConfig,
    pub data: DataSource,
    pub adversary: Option<AdversaryScript>,
    pub master_seed: u64,
    pub check_freshness: bool,
    pub out_dir: Option<PathBuf>,
}

impl ScenarioConfig {
    /// Reads a config file. Keys are flat `key = value` pairs; see the
    /// project README for the full list.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ScenarioError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e| ScenarioError::Config(format!("syntax: {e}")))?;
        let keys = Keys::new(table)?;

        let mode = match keys.str("mode")?.as_deref() {
            Some("low") => Mode::LowFrequency,
            Some("high") => Mode::HighFrequency,
            Some(other) => {
                return Err(ScenarioError::Config(format!(
                    "mode must be \"low\" or \"high\", got {other:?}"
                )))
            }
            None => return Err(ScenarioError::Config("missing key: mode".into())),
        };
        let meters = keys.u32("meters")?.ok_or_else(|| {
            ScenarioError::Config("missing key: meters".into())
        })?;
        let hash_alg = match keys.str("hash")? {
            None => HashAlg::Sha256,
            Some(s) => HashAlg::parse(&s).ok_or_else(|| {
                ScenarioError::Config(format!(
                    "hash must be sha224, sha256, or sha512, got {s:?}"
                ))
            })?,
        };
        let aes_size = match keys.u32("aes_bits")? {
            None => crate::domain::AesKeySize::Aes128,
            Some(bits) => crate::domain::AesKeySize::from_bits(bits as u16).ok_or_else(|| {
                ScenarioError::Config(format!("aes_bits must be 128, 192, or 256, got {bits}"))
            })?,
        };
        let scale = match keys.u32("scale")? {
            None => Scale::default(),
            Some(f) => Scale::new(f)?,
        };
        let master_seed = keys.u64("master_seed")?.unwrap_or(1);
        let check_freshness = keys.bool("freshness_checks")?.unwrap_or(true);
        let out_dir = keys.str("out_dir")?.map(|s| base_dir.join(s));

        // The data source fixes the frame schedule: a CSV supplies its own
        // timestamps, a synthetic run builds a regular cadence.
        let csv_path = keys.str("data_csv")?.map(|s| base_dir.join(s));
        let synthetic_max = keys.f64("synthetic_max")?;
        if csv_path.is_some() && synthetic_max.is_some() {
            return Err(ScenarioError::Config(
                "data_csv and synthetic_max are mutually exclusive".into(),
            ));
        }
        let frames_key = keys.u32("frames")?;
        let start = keys.u64("timestamp_start")?.unwrap_or(0);
        let step = keys.u64("timestamp_step")?.unwrap_or(default_step(mode));
        if step == 0 {
            return Err(ScenarioError::Config("timestamp_step must be >= 1".into()));
        }

        let (data, timestamps) = match csv_path {
            Some(path) => {
                let stamps = csv_timestamps(&path)?;
                if let Some(frames) = frames_key {
                    if frames as usize != stamps.len() {
                        return Err(ScenarioError::Config(format!(
                            "frames = {frames} but {} has {} distinct timestamps",
                            path.display(),
                            stamps.len()
                        )));
                    }
                }
                (DataSource::Csv(path), stamps)
            }
            None => {
                let frames = frames_key.ok_or_else(|| {
                    ScenarioError::Config("missing key: frames (required without data_csv)".into())
                })?;
                let energy = synthetic_max.unwrap_or(10.0);
                let max_raw = fixed_point_encode(energy, scale).map_err(|e| {
                    ScenarioError::Config(format!("synthetic_max: {e}"))
                })?;
                (
                    DataSource::Synthetic { max_raw },
                    EpochConfig::regular_timestamps(start, step, frames),
                )
            }
        };

        let m = timestamps.len() as u32;
        let epoch = EpochConfig::new(mode, meters, m, hash_alg, aes_size, scale, timestamps)?;

        let adversary = parse_adversary(&keys, master_seed)?;
        keys.finish()?;

        let cfg = ScenarioConfig {
            epoch,
            data,
            adversary,
            master_seed,
            check_freshness,
            out_dir,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field validation beyond what the epoch itself enforces.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.epoch.validate()?;
        if let DataSource::Synthetic { max_raw } = self.data {
            if max_raw >= RAW_LIMIT {
                return Err(ScenarioError::Config(
                    "synthetic_max exceeds the raw range".into(),
                ));
            }
        }
        if let Some(script) = &self.adversary {
            let payload_bits: u32 = match script.link {
                Link::SmToDa => 128,
                Link::DaToCc => 64,
            };
            match &script.action {
                TamperAction::BitFlip(Some(bit)) if u32::from(*bit) >= payload_bits => {
                    return Err(ScenarioError::Config(format!(
                        "adversary_bit {bit} is outside the {payload_bits}-bit payload"
                    )));
                }
                TamperAction::InjectForged(Some(payload))
                    if payload.len() as u32 * 8 != payload_bits =>
                {
                    return Err(ScenarioError::Config(format!(
                        "adversary_payload must be {} bytes on this link, got {}",
                        payload_bits / 8,
                        payload.len()
                    )));
                }
                _ => {}
            }
            if let Some(meter) = script.meter_filter {
                if script.link != Link::SmToDa {
                    return Err(ScenarioError::Config(
                        "adversary_meter applies only to the sm-da link".into(),
                    ));
                }
                let effective = Registry::build(self.epoch.n_registered).effective_n();
                if meter < 1 || meter > effective {
                    return Err(ScenarioError::Config(format!(
                        "adversary_meter {meter} is outside the effective range 1..={effective}"
                    )));
                }
            }
            match script.frames {
                FramePredicate::Single(j) if j < 1 || j > self.epoch.m => {
                    return Err(ScenarioError::Config(format!(
                        "adversary_frames targets frame {j}, epoch has {} frames",
                        self.epoch.m
                    )));
                }
                FramePredicate::Range(a, b) if a < 1 || a > b => {
                    return Err(ScenarioError::Config(format!(
                        "adversary_frames range {a}..{b} is empty or 0-based"
                    )));
                }
                FramePredicate::EveryNth(k) if k < 1 => {
                    return Err(ScenarioError::Config(
                        "adversary_frames every:k needs k >= 1".into(),
                    ));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Materializes the readings for this scenario.
    pub fn trace(&self) -> Result<TraceTable, ScenarioError> {
        match &self.data {
            DataSource::Csv(path) => load_csv(path, &self.epoch),
            DataSource::Synthetic { max_raw } => {
                Ok(synth_trace(self.master_seed, &self.epoch, *max_raw))
            }
        }
    }
}

fn parse_adversary(keys: &Keys, master_seed: u64) -> Result<Option<AdversaryScript>, ScenarioError> {
    let action_name = match keys.str("adversary_action")? {
        Some(s) => s,
        None => {
            for dependent in [
                "adversary_link",
                "adversary_bit",
                "adversary_delta",
                "adversary_delta_mode",
                "adversary_meter",
                "adversary_frames",
                "adversary_seed",
                "adversary_payload",
            ] {
                if keys.present(dependent) {
                    return Err(ScenarioError::Config(format!(
                        "{dependent} requires adversary_action"
                    )));
                }
            }
            return Ok(None);
        }
    };

    let link = match keys.str("adversary_link")?.as_deref() {
        None | Some("da-cc") => Link::DaToCc,
        Some("sm-da") => Link::SmToDa,
        Some(other) => {
            return Err(ScenarioError::Config(format!(
                "adversary_link must be \"sm-da\" or \"da-cc\", got {other:?}"
            )))
        }
    };

    let action = match action_name.as_str() {
        "bitflip" => {
            let bit = keys.u32("adversary_bit")?.map(|b| {
                u8::try_from(b).unwrap_or(u8::MAX)
            });
            TamperAction::BitFlip(bit)
        }
        "replay" => TamperAction::ReplayPrevious,
        "drop" => TamperAction::Drop,
        "inject" => {
            let payload = match keys.str("adversary_payload")? {
                None => None,
                Some(s) => Some(hex::decode(s.trim()).map_err(|e| {
                    ScenarioError::Config(format!("adversary_payload is not hex: {e}"))
                })?),
            };
            TamperAction::InjectForged(payload)
        }
        "modify-add" => {
            let delta = keys.i64("adversary_delta")?;
            let spec = match keys.str("adversary_delta_mode")?.as_deref() {
                None => match delta {
                    Some(d) => DeltaSpec::Fixed(d),
                    None => DeltaSpec::UniformRandom,
                },
                Some("fixed") => DeltaSpec::Fixed(delta.ok_or_else(|| {
                    ScenarioError::Config("delta_mode \"fixed\" requires adversary_delta".into())
                })?),
                Some("uniform") => DeltaSpec::UniformRandom,
                Some("odd") => DeltaSpec::RandomOdd,
                Some("even") => DeltaSpec::RandomEven,
                Some(other) => {
                    return Err(ScenarioError::Config(format!(
                        "adversary_delta_mode must be fixed, uniform, odd, or even, got {other:?}"
                    )))
                }
            };
            TamperAction::ModifyAdd(spec)
        }
        other => {
            return Err(ScenarioError::Config(format!(
                "adversary_action must be bitflip, replay, drop, inject, or modify-add, got {other:?}"
            )))
        }
    };

    let frames = match keys.str("adversary_frames")? {
        None => FramePredicate::All,
        Some(s) => parse_frame_predicate(&s)?,
    };
    let meter_filter = keys.u32("adversary_meter")?;
    let rng_seed = keys
        .u64("adversary_seed")?
        .unwrap_or(master_seed ^ 0x5bd1_e995_9ddc_5f2d);

    Ok(Some(AdversaryScript {
        action,
        link,
        meter_filter,
        frames,
        rng_seed,
    }))
}

fn parse_frame_predicate(s: &str) -> Result<FramePredicate, ScenarioError> {
    let bad = || ScenarioError::Config(format!(
        "adversary_frames must be \"all\", a frame number, \"a..b\", or \"every:k\", got {s:?}"
    ));
    if s == "all" {
        return Ok(FramePredicate::All);
    }
    if let Some(k) = s.strip_prefix("every:") {
        return k.parse().map(FramePredicate::EveryNth).map_err(|_| bad());
    }
    if let Some((a, b)) = s.split_once("..") {
        let a = a.parse().map_err(|_| bad())?;
        let b = b.parse().map_err(|_| bad())?;
        return Ok(FramePredicate::Range(a, b));
    }
    s.parse().map(FramePredicate::Single).map_err(|_| bad())
}

/// Typed access to a flat TOML table, tracking which keys were consumed so
/// misspelled keys are reported instead of silently ignored.
struct Keys {
    table: toml::Table,
    seen: std::cell::RefCell<BTreeSet<String>>,
}

impl Keys {
    fn new(table: toml::Table) -> Result<Self, ScenarioError> {
        for (key, value) in &table {
            if value.is_table() {
                return Err(ScenarioError::Config(format!(
                    "[{key}] sections are not supported; the config is flat key = value"
                )));
            }
        }
        Ok(Keys {
            table,
            seen: std::cell::RefCell::new(BTreeSet::new()),
        })
    }

    fn present(&self, key: &str) -> bool {
        self.table.contains_key(key)
    }

    fn value(&self, key: &str) -> Option<&toml::Value> {
        self.seen.borrow_mut().insert(key.to_string());
        self.table.get(key)
    }

    fn str(&self, key: &str) -> Result<Option<String>, ScenarioError> {
        match self.value(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => Err(type_err(key, "a string", v)),
        }
    }

    fn i64(&self, key: &str) -> Result<Option<i64>, ScenarioError> {
        match self.value(key) {
            None => Ok(None),
            Some(toml::Value::Integer(i)) => Ok(Some(*i)),
            Some(v) => Err(type_err(key, "an integer", v)),
        }
    }

    fn u64(&self, key: &str) -> Result<Option<u64>, ScenarioError> {
        match self.i64(key)? {
            None => Ok(None),
            Some(i) => u64::try_from(i)
                .map(Some)
                .map_err(|_| ScenarioError::Config(format!("{key} must be non-negative"))),
        }
    }

    fn u32(&self, key: &str) -> Result<Option<u32>, ScenarioError> {
        match self.i64(key)? {
            None => Ok(None),
            Some(i) => u32::try_from(i)
                .map(Some)
                .map_err(|_| ScenarioError::Config(format!("{key} is out of range"))),
        }
    }

    fn f64(&self, key: &str) -> Result<Option<f64>, ScenarioError> {
        match self.value(key) {
            None => Ok(None),
            Some(toml::Value::Float(f)) => Ok(Some(*f)),
            Some(toml::Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(v) => Err(type_err(key, "a number", v)),
        }
    }

    fn bool(&self, key: &str) -> Result<Option<bool>, ScenarioError> {
        match self.value(key) {
            None => Ok(None),
            Some(toml::Value::Boolean(b)) => Ok(Some(*b)),
            Some(v) => Err(type_err(key, "a boolean", v)),
        }
    }

    fn finish(&self) -> Result<(), ScenarioError> {
        let seen = self.seen.borrow();
        for key in self.table.keys() {
            if !seen.contains(key) {
                return Err(ScenarioError::Config(format!("unknown key: {key}")));
            }
        }
        Ok(())
    }
}

fn type_err(key: &str, want: &str, got: &toml::Value) -> ScenarioError {
    ScenarioError::Config(format!("{key} must be {want}, got {}", got.type_str()))
}
