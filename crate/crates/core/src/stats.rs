//! Aggregate event statistics: per-sector tables, same-second co-occurrence,
//! weekly counts, size histograms, and direction shares. Everything here is
//! an associative reduction over the event list, so partial results from
//! concurrent workers can be merged freely.

use std::collections::BTreeMap;

use chrono::Datelike;

use crate::detector::{Direction, UeeEvent};
use crate::error::{EmptyEventSet, IdentityViolation, InvalidParameter};

/// Ticker-to-sector mapping. Tickers absent from the map fall into an
/// explicit "unclassified" bucket.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SectorMap {
    map: BTreeMap<String, String>,
}

impl SectorMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, ticker: impl Into<String>, sector: impl Into<String>) {
        self.map.insert(ticker.into(), sector.into());
    }

    pub fn sector(&self, ticker: &str) -> Option<&str> {
        self.map.get(ticker).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.map.iter().map(|(t, s)| (t.as_str(), s.as_str()))
    }
}

/// One sector row: company count over the full mapped universe, total
/// events, mean events per company, and the population standard deviation of
/// per-company counts (zero-event companies included).
#[derive(Debug, Clone, PartialEq)]
pub struct SectorRow {
    pub sector: String,
    pub companies: usize,
    pub total_events: u64,
    pub events_per_company: f64,
    pub std_dev: f64,
}

/// Sector table plus the unclassified bucket. For unclassified tickers the
/// universe is unknown, so `companies` counts the distinct tickers seen.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorTable {
    pub rows: Vec<SectorRow>,
    pub unclassified: Option<SectorRow>,
    /// Number of events whose ticker was not in the map.
    pub unclassified_events: u64,
}

impl SectorTable {
    pub fn total_events(&self) -> u64 {
        self.rows.iter().map(|r| r.total_events).sum::<u64>()
            + self.unclassified.as_ref().map_or(0, |r| r.total_events)
    }
}

fn population_std_dev(counts: &[u64]) -> f64 {
    if counts.is_empty() {
        return 0.0;
    }
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<u64>() as f64 / n;
    let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n;
    var.sqrt()
}

/// Group events per sector. Company counts follow the mapped universe, so
/// sectors with zero events still appear with zero rows of activity.
pub fn sector_stats(events: &[UeeEvent], sectors: &SectorMap) -> SectorTable {
    // ticker -> event count, classified or not
    let mut per_ticker: BTreeMap<&str, u64> = BTreeMap::new();
    for e in events {
        *per_ticker.entry(e.key.symbol.as_str()).or_insert(0) += 1;
    }

    let mut universe: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (ticker, sector) in sectors.iter() {
        universe.entry(sector).or_default().push(ticker);
    }

    let mut rows = Vec::with_capacity(universe.len());
    for (sector, tickers) in &universe {
        let counts: Vec<u64> = tickers.iter().map(|t| per_ticker.get(t).copied().unwrap_or(0)).collect();
        let total: u64 = counts.iter().sum();
        rows.push(SectorRow {
            sector: sector.to_string(),
            companies: tickers.len(),
            total_events: total,
            events_per_company: total as f64 / tickers.len() as f64,
            std_dev: population_std_dev(&counts),
        });
    }

    let unknown: Vec<(&str, u64)> = per_ticker
        .iter()
        .filter(|(t, _)| sectors.sector(t).is_none())
        .map(|(t, c)| (*t, *c))
        .collect();
    let unclassified_events: u64 = unknown.iter().map(|(_, c)| c).sum();
    let unclassified = if unknown.is_empty() {
        None
    } else {
        let counts: Vec<u64> = unknown.iter().map(|(_, c)| *c).collect();
        Some(SectorRow {
            sector: "unclassified".to_string(),
            companies: unknown.len(),
            total_events: unclassified_events,
            events_per_company: unclassified_events as f64 / unknown.len() as f64,
            std_dev: population_std_dev(&counts),
        })
    };

    SectorTable { rows, unclassified, unclassified_events }
}

/// Wall-clock second of an event's start, keyed by day so streams from
/// different days never share a second.
fn start_second(event: &UeeEvent) -> (chrono::NaiveDate, u32) {
    (event.key.day, event.t0_uee.floor() as u32)
}

/// For each second containing at least one event start, the number `k` of
/// events starting in it increments bucket `k`. Not cumulative: a second
/// with three events counts once under `k = 3`.
pub fn cooccurrence_histogram(events: &[UeeEvent]) -> BTreeMap<usize, u64> {
    let mut per_second: BTreeMap<(chrono::NaiveDate, u32), usize> = BTreeMap::new();
    for e in events {
        *per_second.entry(start_second(e)).or_insert(0) += 1;
    }
    let mut histogram: BTreeMap<usize, u64> = BTreeMap::new();
    for k in per_second.values() {
        *histogram.entry(*k).or_insert(0) += 1;
    }
    histogram
}

/// ISO-8601 week key, displayed as e.g. `2008-W41`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WeekKey {
    pub year: i32,
    pub week: u32,
}

impl std::fmt::Display for WeekKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-W{:02}", self.year, self.week)
    }
}

/// Event counts per ISO week.
pub fn weekly_counts(events: &[UeeEvent]) -> BTreeMap<WeekKey, u64> {
    let mut weeks = BTreeMap::new();
    for e in events {
        let iso = e.key.day.iso_week();
        let key = WeekKey { year: iso.year(), week: iso.week() };
        *weeks.entry(key).or_insert(0) += 1;
    }
    weeks
}

/// Histogram of signed event sizes. Bin `b` covers
/// `[b*width, (b+1)*width)`; by the detection criterion no populated bin can
/// lie strictly inside `(-min_relative_change, +min_relative_change)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeHistogram {
    pub bin_width: f64,
    pub bins: BTreeMap<i64, u64>,
}

impl SizeHistogram {
    pub fn edges(&self, bin: i64) -> (f64, f64) {
        (bin as f64 * self.bin_width, (bin + 1) as f64 * self.bin_width)
    }

    /// True when bin `b` lies entirely inside the open interval
    /// `(-threshold, +threshold)`.
    pub fn strictly_inside(&self, bin: i64, threshold: f64) -> bool {
        let (lo, hi) = self.edges(bin);
        lo > -threshold && hi <= threshold
    }
}

pub fn size_histogram(events: &[UeeEvent], bin_width: f64) -> Result<SizeHistogram, InvalidParameter> {
    if !(bin_width > 0.0) {
        return Err(InvalidParameter("size histogram bin width must be positive".into()));
    }
    let mut bins: BTreeMap<i64, u64> = BTreeMap::new();
    for e in events {
        let b = (e.size / bin_width).floor() as i64;
        *bins.entry(b).or_insert(0) += 1;
    }
    Ok(SizeHistogram { bin_width, bins })
}

/// Crash/spike split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionShares {
    pub crash: f64,
    pub spike: f64,
    pub crash_count: usize,
    pub spike_count: usize,
}

pub fn direction_shares(events: &[UeeEvent]) -> Result<DirectionShares, EmptyEventSet> {
    if events.is_empty() {
        return Err(EmptyEventSet);
    }
    let crash_count = events.iter().filter(|e| e.direction == Direction::Crash).count();
    let spike_count = events.len() - crash_count;
    Ok(DirectionShares {
        crash: crash_count as f64 / events.len() as f64,
        spike: spike_count as f64 / events.len() as f64,
        crash_count,
        spike_count,
    })
}

/// The full report: every aggregate table plus the identities tying them
/// together.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsReport {
    pub total_events: u64,
    pub direction: DirectionShares,
    pub sector: SectorTable,
    pub cooccurrence: BTreeMap<usize, u64>,
    pub weekly: BTreeMap<WeekKey, u64>,
    pub sizes: SizeHistogram,
}

impl StatsReport {
    /// Cross-table counting identities; a violation indicates an upstream
    /// bug and must abort report emission.
    pub fn verify_identities(&self, min_relative_change: f64) -> Result<(), IdentityViolation> {
        let cooc: u64 = self.cooccurrence.iter().map(|(k, count)| *k as u64 * count).sum();
        if cooc != self.total_events {
            return Err(IdentityViolation(format!(
                "co-occurrence weighted sum {cooc} != total events {}",
                self.total_events
            )));
        }
        let weekly: u64 = self.weekly.values().sum();
        if weekly != self.total_events {
            return Err(IdentityViolation(format!(
                "weekly sum {weekly} != total events {}",
                self.total_events
            )));
        }
        let sector = self.sector.total_events();
        if sector != self.total_events {
            return Err(IdentityViolation(format!(
                "sector totals {sector} != total events {}",
                self.total_events
            )));
        }
        let size_total: u64 = self.sizes.bins.values().sum();
        if size_total != self.total_events {
            return Err(IdentityViolation(format!(
                "size histogram total {size_total} != total events {}",
                self.total_events
            )));
        }
        for (&bin, &count) in &self.sizes.bins {
            if count > 0 && self.sizes.strictly_inside(bin, min_relative_change) {
                let (lo, hi) = self.sizes.edges(bin);
                return Err(IdentityViolation(format!(
                    "size bin [{lo}, {hi}) inside the criterion gap holds {count} events"
                )));
            }
        }
        Ok(())
    }
}

/// Build all aggregates and verify their identities.
pub fn build_stats_report(
    events: &[UeeEvent],
    sectors: &SectorMap,
    size_bin_width: f64,
    min_relative_change: f64,
) -> Result<StatsReport, StatsReportError> {
    let direction = direction_shares(events)?;
    let report = StatsReport {
        total_events: events.len() as u64,
        direction,
        sector: sector_stats(events, sectors),
        cooccurrence: cooccurrence_histogram(events),
        weekly: weekly_counts(events),
        sizes: size_histogram(events, size_bin_width)?,
    };
    report.verify_identities(min_relative_change)?;
    Ok(report)
}

#[derive(Debug, thiserror::Error)]
pub enum StatsReportError {
    #[error(transparent)]
    Empty(#[from] EmptyEventSet),
    #[error(transparent)]
    Parameter(#[from] InvalidParameter),
    #[error(transparent)]
    Identity(#[from] IdentityViolation),
}
