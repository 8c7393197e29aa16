//! Trip-record ingestion: parse raw trip CSVs, drop very short rides,
//! aggregate the rest into one mobility network per calendar day, and split
//! the resulting set into train and test.
//!
//! Input schema (optionally gzip-compressed, optional header row):
//! `start_lon,start_lat,end_lon,end_lat,start_time,end_time` with RFC 3339
//! timestamps. Zone-level datasets are expected to carry zone centroids as
//! the trip endpoints; that preprocessing happens outside this crate.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::{DateTime, FixedOffset, NaiveDate};
use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::net::{MobilityNetwork, Tessellation};
use crate::{Error, Result};

/// Minimum ride duration kept by the standard pipeline, in seconds.
pub const MIN_TRIP_DURATION_S: f64 = 60.0;

/// Default test-set size for the standard two-year pipeline.
pub const DEFAULT_TEST_COUNT: usize = 146;

/// One trip: where it started and ended, and when.
#[derive(Debug, Clone, PartialEq)]
pub struct TripRecord {
    /// (lon, lat) of the pick-up point, degrees.
    pub start_point: (f64, f64),
    /// (lon, lat) of the drop-off point, degrees.
    pub end_point: (f64, f64),
    pub start_time: DateTime<FixedOffset>,
    pub end_time: DateTime<FixedOffset>,
}

impl TripRecord {
    pub fn duration_s(&self) -> f64 {
        (self.end_time - self.start_time).as_seconds_f64()
    }
}

/// Per-node daily marginals: how many trips leave each node (outflow) and how
/// many arrive there (relevance, i.e. drop-offs including self-loops).
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalProfile {
    pub outflows: Array1<f64>,
    pub relevance: Array1<f64>,
}

/// Counters accumulated by the ingestion pipeline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    /// Records successfully parsed.
    pub parsed: u64,
    /// Rows rejected at parse time (bad fields, non-finite coordinates,
    /// end before start).
    pub malformed: u64,
    /// Parsed trips removed by the minimum-duration filter.
    pub filtered_short: u64,
    /// Trips with an endpoint outside the tessellation.
    pub dropped_outside: u64,
}

impl IngestReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::parse(path, 0, e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Parse one trip CSV (gzip accepted, header row optional). Malformed rows
/// are counted, not fatal.
pub fn parse_trips(path: &Path) -> Result<(Vec<TripRecord>, u64, u64)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(flate2::read::GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = Vec::new();
    let mut parsed = 0u64;
    let mut malformed = 0u64;
    for (idx, row) in csv.records().enumerate() {
        let row = row.map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        match parse_row(&row) {
            Some(rec) => {
                parsed += 1;
                records.push(rec);
            }
            None => {
                // a non-numeric first row is a header, not a data error
                if idx == 0 && row.get(0).is_some_and(|c| c.parse::<f64>().is_err()) {
                    continue;
                }
                malformed += 1;
            }
        }
    }
    Ok((records, parsed, malformed))
}

fn parse_row(row: &csv::StringRecord) -> Option<TripRecord> {
    if row.len() != 6 {
        return None;
    }
    let coord = |i: usize| -> Option<f64> {
        let v: f64 = row.get(i)?.trim().parse().ok()?;
        v.is_finite().then_some(v)
    };
    let time = |i: usize| DateTime::parse_from_rfc3339(row.get(i)?.trim()).ok();
    let rec = TripRecord {
        start_point: (coord(0)?, coord(1)?),
        end_point: (coord(2)?, coord(3)?),
        start_time: time(4)?,
        end_time: time(5)?,
    };
    (rec.end_time >= rec.start_time).then_some(rec)
}

/// Keep only trips lasting at least `min_duration_s` seconds; order is
/// preserved. A trip of exactly the minimum duration is kept.
pub fn filter_trips(records: Vec<TripRecord>, min_duration_s: f64) -> Vec<TripRecord> {
    records
        .into_iter()
        .filter(|r| r.duration_s() >= min_duration_s)
        .collect()
}

/// Aggregate filtered trips into one network per calendar day present in the
/// data. Days come from `start_time` in the timestamp's own offset. Trips
/// with either endpoint outside the tessellation are dropped; the count of
/// dropped trips is returned alongside the networks.
pub fn build_daily_networks(
    records: &[TripRecord],
    tess: &Tessellation,
) -> (Vec<MobilityNetwork>, u64) {
    use std::collections::BTreeMap;
    let n = tess.len();
    let mut by_day: BTreeMap<NaiveDate, MobilityNetwork> = BTreeMap::new();
    let mut dropped = 0u64;
    for rec in records {
        let from = tess.tile_of(rec.start_point.0, rec.start_point.1);
        let to = tess.tile_of(rec.end_point.0, rec.end_point.1);
        let (Some(i), Some(j)) = (from, to) else {
            dropped += 1;
            continue;
        };
        let day = rec.start_time.date_naive();
        let net = by_day
            .entry(day)
            .or_insert_with(|| MobilityNetwork::zeros(day.format("%Y-%m-%d").to_string(), n));
        net.weights[[i, j]] += 1.0;
    }
    (by_day.into_values().collect(), dropped)
}

/// Row sums (outflows) and column sums (relevance) of one network.
pub fn marginals(net: &MobilityNetwork) -> MarginalProfile {
    MarginalProfile {
        outflows: net.weights.sum_axis(ndarray::Axis(1)),
        relevance: net.weights.sum_axis(ndarray::Axis(0)),
    }
}

/// Seeded uniform random split into (train, test) of sizes
/// (len - test_count, test_count). Input order is preserved inside each half.
pub fn split_networks(
    nets: Vec<MobilityNetwork>,
    test_count: usize,
    seed: u64,
) -> Result<(Vec<MobilityNetwork>, Vec<MobilityNetwork>)> {
    if test_count >= nets.len() {
        return Err(Error::InvalidInput(format!(
            "test_count {} must be smaller than the set size {}",
            test_count,
            nets.len()
        )));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..nets.len()).collect();
    order.shuffle(&mut rng);
    let mut in_test = vec![false; nets.len()];
    for &idx in order.iter().take(test_count) {
        in_test[idx] = true;
    }
    let mut train = Vec::with_capacity(nets.len() - test_count);
    let mut test = Vec::with_capacity(test_count);
    for (net, is_test) in nets.into_iter().zip(in_test) {
        if is_test {
            test.push(net);
        } else {
            train.push(net);
        }
    }
    Ok((train, test))
}

/// Chronological split: the last `test_count` networks (by input order, which
/// [`crate::net::load_networks`] keeps sorted by date) form the test set.
pub fn split_networks_chronological(
    nets: Vec<MobilityNetwork>,
    test_count: usize,
) -> Result<(Vec<MobilityNetwork>, Vec<MobilityNetwork>)> {
    if test_count >= nets.len() {
        return Err(Error::InvalidInput(format!(
            "test_count {} must be smaller than the set size {}",
            test_count,
            nets.len()
        )));
    }
    let mut train = nets;
    let test = train.split_off(train.len() - test_count);
    Ok((train, test))
}

/// Full pipeline over one or more input shards: parse (in parallel), filter,
/// aggregate. Returns the daily networks and the ingest counters.
pub fn run_ingest(
    inputs: &[PathBuf],
    tess: &Tessellation,
    min_duration_s: f64,
) -> Result<(Vec<MobilityNetwork>, IngestReport)> {
    let shards: Vec<(Vec<TripRecord>, u64, u64)> = inputs
        .par_iter()
        .map(|p| parse_trips(p))
        .collect::<Result<_>>()?;
    let mut report = IngestReport::default();
    let mut records = Vec::new();
    for (recs, parsed, malformed) in shards {
        report.parsed += parsed;
        report.malformed += malformed;
        records.extend(recs);
    }
    let before = records.len();
    let records = filter_trips(records, min_duration_s);
    report.filtered_short = (before - records.len()) as u64;
    let (nets, dropped) = build_daily_networks(&records, tess);
    report.dropped_outside = dropped;
    Ok((nets, report))
}
