//! End-to-end latency records, exact order statistics and CSV export.

use std::fmt;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{SimDuration, SimTime};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty latency series")]
    EmptySeries,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("bad CSV row: {0}")]
    BadRow(String),
}

/// The four experiment arms: where CAN-bearing frames are queued, and whether
/// the jamming talker is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Arm {
    #[serde(rename = "Eth_nature")]
    EthNature,
    #[serde(rename = "Eth_jam")]
    EthJam,
    #[serde(rename = "AVB_nature")]
    AvbNature,
    #[serde(rename = "AVB_jam")]
    AvbJam,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::EthNature, Arm::EthJam, Arm::AvbNature, Arm::AvbJam];

    pub fn new(avb: bool, jam: bool) -> Arm {
        match (avb, jam) {
            (false, false) => Arm::EthNature,
            (false, true) => Arm::EthJam,
            (true, false) => Arm::AvbNature,
            (true, true) => Arm::AvbJam,
        }
    }

    pub fn is_avb(self) -> bool {
        matches!(self, Arm::AvbNature | Arm::AvbJam)
    }

    pub fn is_jam(self) -> bool {
        matches!(self, Arm::EthJam | Arm::AvbJam)
    }

    pub fn label(self) -> &'static str {
        match self {
            Arm::EthNature => "Eth_nature",
            Arm::EthJam => "Eth_jam",
            Arm::AvbNature => "AVB_nature",
            Arm::AvbJam => "AVB_jam",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Arm::ALL
            .into_iter()
            .find(|a| a.label() == s)
            .ok_or_else(|| format!("unknown arm `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyRecord {
    pub seq: u64,
    pub can_id: u16,
    pub created_at: SimTime,
    pub delivered_at: SimTime,
    pub arm: Arm,
}

impl LatencyRecord {
    pub fn latency(&self) -> SimDuration {
        self.delivered_at - self.created_at
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    seq: u64,
    can_id: u16,
    created_at_ns: u64,
    delivered_at_ns: u64,
    latency_ns: u64,
    arm: Arm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub count: usize,
    pub min: SimDuration,
    pub max: SimDuration,
    pub mean_ns: f64,
    pub p50: SimDuration,
    pub p99: SimDuration,
}

/// Nearest-rank percentile of an ascending slice: the value at 1-based rank
/// `ceil(p/100 * n)`.
pub fn nearest_rank(sorted: &[SimDuration], p: u32) -> Option<SimDuration> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len() as u64;
    let rank = (p as u64 * n).div_ceil(100).clamp(1, n);
    Some(sorted[rank as usize - 1])
}

pub fn summarize(series: &[LatencyRecord]) -> Result<LatencyStats, MetricsError> {
    summarize_latencies(series.iter().map(LatencyRecord::latency).collect())
}

pub fn summarize_latencies(mut lat: Vec<SimDuration>) -> Result<LatencyStats, MetricsError> {
    if lat.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    lat.sort_unstable();
    let sum: u128 = lat.iter().map(|d| d.as_nanos() as u128).sum();
    Ok(LatencyStats {
        count: lat.len(),
        min: lat[0],
        max: lat[lat.len() - 1],
        mean_ns: sum as f64 / lat.len() as f64,
        p50: nearest_rank(&lat, 50).expect("non-empty"),
        p99: nearest_rank(&lat, 99).expect("non-empty"),
    })
}

/// Per-run statistics plus loss counters.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub arm: Arm,
    pub count: usize,
    /// `None` for an empty series.
    pub stats: Option<LatencyStats>,
    pub jam_frames_received: u64,
    pub drops: Vec<(String, u64)>,
}

impl RunSummary {
    pub fn new(
        arm: Arm,
        series: &[LatencyRecord],
        jam_frames_received: u64,
        drops: Vec<(String, u64)>,
    ) -> Self {
        RunSummary {
            arm,
            count: series.len(),
            stats: summarize(series).ok(),
            jam_frames_received,
            drops,
        }
    }
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "arm {}: {} CAN messages delivered", self.arm, self.count)?;
        match &self.stats {
            Some(s) => writeln!(
                f,
                "  latency ms: min {:.6}  p50 {:.6}  p99 {:.6}  max {:.6}  mean {:.6}",
                s.min.as_millis_f64(),
                s.p50.as_millis_f64(),
                s.p99.as_millis_f64(),
                s.max.as_millis_f64(),
                s.mean_ns / 1e6
            )?,
            None => writeln!(f, "  latency: undefined (empty series)")?,
        }
        writeln!(f, "  jam frames received: {}", self.jam_frames_received)?;
        let dropped: Vec<String> = self
            .drops
            .iter()
            .filter(|(_, n)| *n > 0)
            .map(|(q, n)| format!("{q}={n}"))
            .collect();
        if dropped.is_empty() {
            write!(f, "  drops: none")
        } else {
            write!(f, "  drops: {}", dropped.join(" "))
        }
    }
}

/// Records in delivery order.
#[derive(Debug, Clone, Default)]
pub struct LatencySeries {
    records: Vec<LatencyRecord>,
}

impl LatencySeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, r: LatencyRecord) {
        debug_assert!(r.delivered_at >= r.created_at);
        self.records.push(r);
    }

    pub fn records(&self) -> &[LatencyRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn summarize(&self) -> Result<LatencyStats, MetricsError> {
        summarize(&self.records)
    }

    pub fn into_records(self) -> Vec<LatencyRecord> {
        self.records
    }
}

fn creation_order(series: &[LatencyRecord]) -> Vec<LatencyRecord> {
    let mut sorted = series.to_vec();
    sorted.sort_by_key(|r| (r.created_at, r.can_id, r.seq, r.delivered_at));
    sorted
}

pub fn write_csv<W: Write>(series: &[LatencyRecord], out: W) -> Result<(), MetricsError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record([
        "seq",
        "can_id",
        "created_at_ns",
        "delivered_at_ns",
        "latency_ns",
        "arm",
    ])?;
    for r in creation_order(series) {
        w.serialize(CsvRow {
            seq: r.seq,
            can_id: r.can_id,
            created_at_ns: r.created_at.as_nanos(),
            delivered_at_ns: r.delivered_at.as_nanos(),
            latency_ns: r.latency().as_nanos(),
            arm: r.arm,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_csv(series: &[LatencyRecord], path: &Path) -> Result<(), MetricsError> {
    let file = File::create(path)?;
    write_csv(series, io::BufWriter::new(file))
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<LatencyRecord>, MetricsError> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in rd.deserialize() {
        let row: CsvRow = row?;
        if row.delivered_at_ns < row.created_at_ns
            || row.delivered_at_ns - row.created_at_ns != row.latency_ns
        {
            return Err(MetricsError::BadRow(format!(
                "inconsistent latency for seq {}",
                row.seq
            )));
        }
        out.push(LatencyRecord {
            seq: row.seq,
            can_id: row.can_id,
            created_at: SimTime::from_nanos(row.created_at_ns),
            delivered_at: SimTime::from_nanos(row.delivered_at_ns),
            arm: row.arm,
        });
    }
    Ok(out)
}
