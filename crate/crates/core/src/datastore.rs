//! Append-only telemetry log: one JSONL file per day, time-range queries,
//! mean downsampling, and in-memory ring buffers for live graphs.
//!
//! Line shapes:
//!
//! ```text
//! {"seq":0,"t":120,"ch":"co2","v":612.3,"q":"corrected"}
//! {"seq":1,"t":120,"cmd":{"t":120,"air_heater":1.0,...}}
//! {"seq":2,"t":121,"alarm":"ph-fault"}
//! {"seq":3,"t":121,"forecast":{...}}
//! ```

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::compensation::ForecastReport;
use crate::telemetry::{Actuator, ActuatorCommandSet, Channel, Quality, Reading, DAY_SECONDS};

/// Readings kept in memory per series.
pub const DEFAULT_RING: usize = 3600;
const FLUSH_EVERY: Duration = Duration::from_secs(1);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Event {
    Reading(Reading),
    Command(ActuatorCommandSet),
    Alarm { t: i64, alarm: String },
    Forecast { t: i64, forecast: ForecastReport },
}

impl Event {
    pub fn timestamp(&self) -> i64 {
        match self {
            Event::Reading(r) => r.timestamp,
            Event::Command(c) => c.t,
            Event::Alarm { t, .. } | Event::Forecast { t, .. } => *t,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub seq: u64,
    pub event: Event,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Wire {
    Reading {
        seq: u64,
        t: i64,
        ch: Channel,
        #[serde(default)]
        v: Option<f64>,
        q: Quality,
    },
    Command {
        seq: u64,
        t: i64,
        cmd: ActuatorCommandSet,
    },
    Alarm {
        seq: u64,
        t: i64,
        alarm: String,
    },
    Forecast {
        seq: u64,
        t: i64,
        forecast: ForecastReport,
    },
}

impl Record {
    pub fn to_line(&self) -> String {
        let seq = self.seq;
        let wire = match &self.event {
            Event::Reading(r) => Wire::Reading {
                seq,
                t: r.timestamp,
                ch: r.channel,
                v: r.value,
                q: r.quality,
            },
            Event::Command(c) => Wire::Command { seq, t: c.t, cmd: *c },
            Event::Alarm { t, alarm } => Wire::Alarm {
                seq,
                t: *t,
                alarm: alarm.clone(),
            },
            Event::Forecast { t, forecast } => Wire::Forecast {
                seq,
                t: *t,
                forecast: forecast.clone(),
            },
        };
        serde_json::to_string(&wire).expect("records serialize")
    }

    pub fn from_line(line: &str) -> Result<Record, serde_json::Error> {
        Ok(match serde_json::from_str::<Wire>(line)? {
            Wire::Reading { seq, t, ch, v, q } => Record {
                seq,
                event: Event::Reading(Reading {
                    timestamp: t,
                    channel: ch,
                    value: v,
                    quality: q,
                }),
            },
            Wire::Command { seq, t, mut cmd } => {
                cmd.t = t;
                Record {
                    seq,
                    event: Event::Command(cmd),
                }
            }
            Wire::Alarm { seq, t, alarm } => Record {
                seq,
                event: Event::Alarm { t, alarm },
            },
            Wire::Forecast { seq, t, forecast } => Record {
                seq,
                event: Event::Forecast { t, forecast },
            },
        })
    }
}

/// Names a series: a sensor channel or an actuator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SeriesKey {
    Channel(Channel),
    Actuator(Actuator),
}

impl FromStr for SeriesKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Ok(c) = s.parse::<Channel>() {
            return Ok(SeriesKey::Channel(c));
        }
        s.parse::<Actuator>()
            .map(SeriesKey::Actuator)
            .map_err(|_| format!("unknown series {s:?}"))
    }
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeriesKey::Channel(c) => write!(f, "{c}"),
            SeriesKey::Actuator(a) => write!(f, "{a}"),
        }
    }
}

impl Serialize for SeriesKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SeriesKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub t: i64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub key: SeriesKey,
    pub points: Vec<Point>,
}

impl Series {
    /// Builds a series from unordered points: sorted by time, and for a
    /// repeated timestamp the later point wins.
    pub fn from_points(key: SeriesKey, points: impl IntoIterator<Item = Point>) -> Series {
        let dedup: BTreeMap<i64, f64> = points.into_iter().map(|p| (p.t, p.v)).collect();
        Series {
            key,
            points: dedup.into_iter().map(|(t, v)| Point { t, v }).collect(),
        }
    }
}

/// One point per non-empty bucket: (bucket start, mean). `bucket_s` below 1 is treated as 1.
pub fn downsample(s: &Series, bucket_s: i64) -> Series {
    let b = bucket_s.max(1);
    let mut points: Vec<Point> = Vec::new();
    let mut acc: Option<(i64, f64, usize)> = None;
    for p in &s.points {
        let start = p.t.div_euclid(b) * b;
        match &mut acc {
            Some((bs, sum, n)) if *bs == start => {
                *sum += p.v;
                *n += 1;
            }
            _ => {
                if let Some((bs, sum, n)) = acc {
                    points.push(Point { t: bs, v: sum / n as f64 });
                }
                acc = Some((start, p.v, 1));
            }
        }
    }
    if let Some((bs, sum, n)) = acc {
        points.push(Point { t: bs, v: sum / n as f64 });
    }
    Series { key: s.key, points }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("datastore i/o on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("query range is inverted: from {from} > to {to}")]
    Range { from: i64, to: i64 },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn day_of(t: i64) -> i64 {
    t.div_euclid(DAY_SECONDS as i64)
}

pub fn day_file(dir: &Path, day: i64) -> PathBuf {
    dir.join(format!("telemetry-{day}.jsonl"))
}

/// Day files in `dir`, ordered by day.
pub fn day_files(dir: &Path) -> Result<Vec<(i64, PathBuf)>, StoreError> {
    let mut out = Vec::new();
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(io_err(dir)(e)),
    };
    for entry in entries {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(day) = name
            .strip_prefix("telemetry-")
            .and_then(|r| r.strip_suffix(".jsonl"))
            .and_then(|d| d.parse::<i64>().ok())
        {
            out.push((day, entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

/// Reads one day file. `allow_torn_tail` tolerates a last line without a
/// newline that does not parse (a write cut short by a crash).
/// Returns whether such a torn tail was dropped.
fn read_file(path: &Path, allow_torn_tail: bool, mut keep: impl FnMut(&str) -> bool, out: &mut Vec<Record>) -> Result<bool, StoreError> {
    let mut reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut line = String::new();
    let mut n = 0;
    loop {
        line.clear();
        let read = reader.read_line(&mut line).map_err(io_err(path))?;
        if read == 0 {
            return Ok(false);
        }
        n += 1;
        let complete = line.ends_with('\n');
        let body = line.trim_end();
        if body.is_empty() || !keep(body) {
            continue;
        }
        match Record::from_line(body) {
            Ok(r) => out.push(r),
            Err(_) if !complete && allow_torn_tail => return Ok(true),
            Err(e) => {
                return Err(StoreError::Malformed {
                    path: path.to_path_buf(),
                    line: n,
                    message: e.to_string(),
                })
            }
        }
    }
}

/// Every record in `dir`, in sequence order.
pub fn replay(dir: &Path) -> Result<Vec<Record>, StoreError> {
    Ok(load_log(dir)?.records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogContents {
    pub records: Vec<Record>,
    /// Files whose last line was cut short and skipped.
    pub torn: Vec<PathBuf>,
}

/// Reads a log directory or a single day file, in sequence order.
pub fn load_log(path: &Path) -> Result<LogContents, StoreError> {
    let files = if path.is_file() {
        vec![path.to_path_buf()]
    } else {
        day_files(path)?.into_iter().map(|(_, p)| p).collect()
    };
    let mut records = Vec::new();
    let mut torn = Vec::new();
    for f in files {
        if read_file(&f, true, |_| true, &mut records)? {
            torn.push(f);
        }
    }
    records.sort_by_key(|r| r.seq);
    Ok(LogContents { records, torn })
}

/// Read-only view of a log directory (or of one log file); sees flushed
/// data only.
#[derive(Debug, Clone)]
pub struct DataReader {
    path: PathBuf,
    single_file: bool,
}

impl DataReader {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        DataReader {
            path: dir.into(),
            single_file: false,
        }
    }

    /// Reads only `path`, whatever its name.
    pub fn file(path: impl Into<PathBuf>) -> Self {
        DataReader {
            path: path.into(),
            single_file: true,
        }
    }

    pub fn dir(&self) -> &Path {
        &self.path
    }

    fn files(&self, first: i64, last: i64) -> Result<Vec<PathBuf>, StoreError> {
        if self.single_file {
            return Ok(vec![self.path.clone()]);
        }
        Ok(day_files(&self.path)?
            .into_iter()
            .filter(|(day, _)| (first..=last).contains(day))
            .map(|(_, p)| p)
            .collect())
    }

    /// Points of `key` with `from ≤ t < to`, sorted, one per timestamp.
    /// Faulted readings carry no value and are left out.
    pub fn query(&self, key: SeriesKey, from: i64, to: i64) -> Result<Series, StoreError> {
        if from > to {
            return Err(StoreError::Range { from, to });
        }
        if from == to {
            return Ok(Series { key, points: Vec::new() });
        }
        let (first, last) = (day_of(from), day_of(to - 1));
        let needle = match key {
            SeriesKey::Channel(c) => format!("\"ch\":\"{c}\""),
            SeriesKey::Actuator(_) => "\"cmd\"".to_string(),
        };
        let mut records = Vec::new();
        for path in self.files(first, last)? {
            read_file(&path, true, |l| l.contains(&needle), &mut records)?;
        }
        records.sort_by_key(|r| r.seq);
        let points = records.iter().filter_map(|r| {
            let (t, v) = match (&r.event, key) {
                (Event::Reading(rd), SeriesKey::Channel(c)) if rd.channel == c => (rd.timestamp, rd.value?),
                (Event::Command(cmd), SeriesKey::Actuator(a)) => (cmd.t, cmd.get(a)),
                _ => return None,
            };
            (from..to).contains(&t).then_some(Point { t, v })
        });
        Ok(Series::from_points(key, points))
    }
}

struct DayWriter {
    day: i64,
    path: PathBuf,
    out: BufWriter<File>,
}

/// The single writer of a log directory.
pub struct Datastore {
    dir: PathBuf,
    next_seq: u64,
    writer: Option<DayWriter>,
    last_flush: Instant,
    ring_capacity: usize,
    rings: BTreeMap<SeriesKey, VecDeque<Point>>,
}

impl Datastore {
    /// Opens (creating if needed) a log directory. Sequence numbers continue
    /// after the highest one already on disk; a torn final line is cut off.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Datastore, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let files = day_files(&dir)?;
        let mut next_seq = 0;
        for (_, path) in &files {
            repair_tail(path)?;
            let mut recs = Vec::new();
            read_file(path, false, |_| true, &mut recs)?;
            if let Some(max) = recs.iter().map(|r| r.seq).max() {
                next_seq = next_seq.max(max + 1);
            }
        }
        Ok(Datastore {
            dir,
            next_seq,
            writer: None,
            last_flush: Instant::now(),
            ring_capacity: DEFAULT_RING,
            rings: BTreeMap::new(),
        })
    }

    pub fn with_ring_capacity(mut self, n: usize) -> Self {
        self.ring_capacity = n.max(1);
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn reader(&self) -> DataReader {
        DataReader::new(self.dir.clone())
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Appends one record and returns its sequence number.
    pub fn append(&mut self, event: Event) -> Result<u64, StoreError> {
        let seq = self.next_seq;
        let day = day_of(event.timestamp());
        let rec = Record { seq, event };
        let w = self.writer_for(day)?;
        let path = w.path.clone();
        writeln!(w.out, "{}", rec.to_line()).map_err(io_err(&path))?;
        self.next_seq += 1;
        self.remember(&rec.event);
        if self.last_flush.elapsed() >= FLUSH_EVERY {
            self.flush()?;
        }
        Ok(seq)
    }

    pub fn flush(&mut self) -> Result<(), StoreError> {
        self.last_flush = Instant::now();
        if let Some(w) = &mut self.writer {
            w.out.flush().map_err(io_err(&w.path))?;
        }
        Ok(())
    }

    /// Most recent points of a series held in memory.
    pub fn recent(&self, key: SeriesKey) -> Series {
        let points: Vec<Point> = self.rings.get(&key).map(|r| r.iter().copied().collect()).unwrap_or_default();
        Series::from_points(key, points)
    }

    pub fn query(&mut self, key: SeriesKey, from: i64, to: i64) -> Result<Series, StoreError> {
        self.flush()?;
        self.reader().query(key, from, to)
    }

    fn writer_for(&mut self, day: i64) -> Result<&mut DayWriter, StoreError> {
        if self.writer.as_ref().is_none_or(|w| w.day != day) {
            if let Some(mut old) = self.writer.take() {
                old.out.flush().map_err(io_err(&old.path))?;
            }
            let path = day_file(&self.dir, day);
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(io_err(&path))?;
            self.writer = Some(DayWriter {
                day,
                path,
                out: BufWriter::new(file),
            });
        }
        Ok(self.writer.as_mut().expect("writer just opened"))
    }

    fn remember(&mut self, e: &Event) {
        let cap = self.ring_capacity;
        let mut push = |key: SeriesKey, p: Point| {
            let ring = self.rings.entry(key).or_default();
            if ring.back().is_some_and(|last| last.t == p.t) {
                ring.pop_back();
            }
            ring.push_back(p);
            while ring.len() > cap {
                ring.pop_front();
            }
        };
        match e {
            Event::Reading(r) => {
                if let Some(v) = r.value {
                    push(SeriesKey::Channel(r.channel), Point { t: r.timestamp, v });
                }
            }
            Event::Command(c) => {
                for a in Actuator::ALL {
                    push(SeriesKey::Actuator(a), Point { t: c.t, v: c.get(a) });
                }
            }
            _ => {}
        }
    }
}

impl Drop for Datastore {
    fn drop(&mut self) {
        if let Err(e) = self.flush() {
            log::error!("{e}");
        }
    }
}

/// Truncates a file after its last newline.
fn repair_tail(path: &Path) -> Result<(), StoreError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    log::warn!("{}: dropping torn final line ({} bytes)", path.display(), bytes.len() - keep);
    let mut f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
    f.set_len(keep as u64).map_err(io_err(path))?;
    f.seek(SeekFrom::End(0)).map_err(io_err(path))?;
    Ok(())
}
