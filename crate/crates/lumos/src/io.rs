//! Partitioned dataset layout on disk.
//!
//! A data directory holds `part-NNNNN.jsonl` files (one user record per
//! line), `calendar.jsonl` (one day per line) and `manifest.json`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lumos_core::datamodel::{EventCalendar, FeatureScalers, TaskSpec, UserRecord};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CALENDAR_FILE: &str = "calendar.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub d_u: usize,
    pub d_s: usize,
    pub d_static: usize,
    pub tasks: Vec<TaskSpec>,
    pub scalers: FeatureScalers,
    pub generator_seed: u64,
    pub n_partitions: usize,
    pub n_users: usize,
    pub first_day: i64,
    pub last_day: i64,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    user_id: String,
    registration_day: i64,
    static_features: Vec<f64>,
    activity: BTreeMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct CalendarLine {
    day: i64,
    context: Vec<f64>,
}

pub fn partition_file(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("part-{index:05}.jsonl"))
}

/// Stable partition of a user: SHA-256 of the id, first 8 bytes, mod `n`.
pub fn partition_of(user_id: &str, n_partitions: usize) -> usize {
    let digest = Sha256::digest(user_id.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    (u64::from_be_bytes(head) % n_partitions as u64) as usize
}

pub fn record_to_json(record: &UserRecord) -> Result<String> {
    let line = RecordLine {
        user_id: record.user_id.clone(),
        registration_day: record.registration_day,
        static_features: record.static_features.clone(),
        activity: record
            .activity
            .iter()
            .map(|(d, v)| (d.to_string(), v.clone()))
            .collect(),
    };
    Ok(serde_json::to_string(&line)?)
}

pub fn record_from_json(line: &str) -> Result<UserRecord> {
    let raw: RecordLine = serde_json::from_str(line)?;
    let activity = raw
        .activity
        .into_iter()
        .map(|(d, v)| {
            d.parse::<i64>()
                .map(|d| (d, v))
                .with_context(|| format!("activity key `{d}` is not a day index"))
        })
        .collect::<Result<_>>()?;
    Ok(UserRecord {
        user_id: raw.user_id,
        registration_day: raw.registration_day,
        static_features: raw.static_features,
        activity,
    })
}

/// Hashes `records` into `n_partitions` files under `dir`. Records keep their
/// input order inside each file, so equal inputs give byte-identical files.
pub fn write_partitions(records: &[UserRecord], dir: &Path, n_partitions: usize) -> Result<Vec<PathBuf>> {
    if n_partitions == 0 {
        bail!("n_partitions must be >= 1");
    }
    let mut groups: Vec<Vec<&UserRecord>> = vec![Vec::new(); n_partitions];
    for r in records {
        groups[partition_of(&r.user_id, n_partitions)].push(r);
    }
    write_groups(&groups, dir)
}

/// Writes pre-grouped records as consecutive partition files.
pub fn write_groups(groups: &[Vec<&UserRecord>], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut paths = Vec::with_capacity(groups.len());
    for (i, group) in groups.iter().enumerate() {
        let path = partition_file(dir, i);
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        for r in group {
            writeln!(w, "{}", record_to_json(r)?)?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn read_partition(path: &Path) -> Result<Vec<UserRecord>> {
    let f = File::open(path).with_context(|| format!("missing partition file {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(record_from_json(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

pub fn write_calendar(calendar: &EventCalendar, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let path = dir.join(CALENDAR_FILE);
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    for (day, context) in &calendar.context {
        let line = CalendarLine {
            day: *day,
            context: context.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&line)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_calendar(dir: &Path, d_s: usize) -> Result<EventCalendar> {
    let path = dir.join(CALENDAR_FILE);
    let f = File::open(&path).with_context(|| format!("missing calendar {}", path.display()))?;
    let mut context = BTreeMap::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let c: CalendarLine = serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        if c.context.len() != d_s {
            bail!("{}:{}: context has {} entries, expected {d_s}", path.display(), i + 1, c.context.len());
        }
        context.insert(c.day, c.context);
    }
    Ok(EventCalendar { d_s, context })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// A data directory with its manifest and calendar loaded; partitions are
/// read lazily.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    pub calendar: EventCalendar,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest: DatasetManifest = read_json(&dir.join(MANIFEST_FILE))?;
        let calendar = read_calendar(dir, manifest.d_s)?;
        for i in 0..manifest.n_partitions {
            let p = partition_file(dir, i);
            if !p.is_file() {
                bail!("missing partition file {}", p.display());
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            calendar,
        })
    }

    pub fn n_partitions(&self) -> usize {
        self.manifest.n_partitions
    }

    pub fn partition(&self, index: usize) -> Result<Vec<UserRecord>> {
        read_partition(&partition_file(&self.dir, index))
    }

    pub fn all_records(&self) -> Result<Vec<UserRecord>> {
        let mut out = Vec::new();
        for i in 0..self.n_partitions() {
            out.extend(self.partition(i)?);
        }
        Ok(out)
    }
}
