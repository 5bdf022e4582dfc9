//! Detection of ultrafast extreme events (mini flash crashes and spikes) in
//! trade streams.
//!
//! An event is a weakly monotone price run that contains at least one
//! qualifying core window: `min_trades` or more trades spanning at most
//! `max_duration` seconds with a relative price change of at least
//! `min_relative_change`. The reported run starts at the first trade that
//! opens a qualifying window and extends to the run's natural end: the trade
//! before the first trend reversal, or before a gap of at least
//! `pause_threshold` seconds, whichever comes first. When both apply at the
//! same trade the pause wins, since it elapses before the reversing trade
//! prints.
//!
//! Events claim their trade indices: scanning resumes after an event's end,
//! so no trade belongs to two events.

use std::collections::BTreeMap;

use crate::error::{EmptyEventSet, InvalidParameter};
use crate::types::{StreamKey, TradeTick};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Detection thresholds. Defaults are the standard criterion: a monotone
/// move of at least 0.8 percent within 1.5 seconds and at least ten trades,
/// with a one-second trading pause ending an event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UeeCriterion {
    /// Minimum |relative price change| of a qualifying window.
    pub min_relative_change: f64,
    /// Maximum time span of a qualifying window, in seconds.
    pub max_duration: f64,
    /// Minimum number of trades in a qualifying window (both ends counted).
    pub min_trades: usize,
    /// A gap of at least this many seconds ends an event.
    pub pause_threshold: f64,
}

impl Default for UeeCriterion {
    fn default() -> Self {
        Self { min_relative_change: 0.008, max_duration: 1.5, min_trades: 10, pause_threshold: 1.0 }
    }
}

impl UeeCriterion {
    pub fn validate(&self) -> Result<(), InvalidParameter> {
        if !(self.min_relative_change > 0.0) {
            return Err(InvalidParameter("min_relative_change must be positive".into()));
        }
        if !(self.max_duration > 0.0) {
            return Err(InvalidParameter("max_duration must be positive".into()));
        }
        if self.min_trades < 2 {
            return Err(InvalidParameter("min_trades must be at least 2".into()));
        }
        if !(self.pause_threshold > 0.0) {
            return Err(InvalidParameter("pause_threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Sign of an event's price move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Crash,
    Spike,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Crash => "crash",
            Direction::Spike => "spike",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "crash" => Some(Direction::Crash),
            "spike" => Some(Direction::Spike),
            _ => None,
        }
    }
}

/// Which rule ended the event's run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EndTrigger {
    TrendReversal,
    TradingPause,
    StreamEnd,
}

impl EndTrigger {
    pub fn as_str(&self) -> &'static str {
        match self {
            EndTrigger::TrendReversal => "trend_reversal",
            EndTrigger::TradingPause => "trading_pause",
            EndTrigger::StreamEnd => "stream_end",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "trend_reversal" => Some(EndTrigger::TrendReversal),
            "trading_pause" => Some(EndTrigger::TradingPause),
            "stream_end" => Some(EndTrigger::StreamEnd),
            _ => None,
        }
    }
}

/// One detected event. `start_index` is the first trade of the reported run
/// (the first trade opening a qualifying window), `end_index` the extremum
/// trade where recovery starts.
#[derive(Debug, Clone, PartialEq)]
pub struct UeeEvent {
    pub key: StreamKey,
    pub direction: Direction,
    pub start_index: usize,
    pub end_index: usize,
    /// Time of the start trade.
    pub t0_uee: f64,
    /// Time of the extremum trade.
    pub t0_rec: f64,
    pub price_start: f64,
    pub price_extreme: f64,
    /// (price_extreme - price_start) / price_start.
    pub size: f64,
    pub end_trigger: EndTrigger,
}

impl UeeEvent {
    /// Number of trades in the reported run, both ends counted.
    pub fn n_trades(&self) -> usize {
        self.end_index - self.start_index + 1
    }
}

/// Signed relative deviation between an event's start and extremum trades.
pub fn event_size(event: &UeeEvent) -> f64 {
    relative_change(event.price_start, event.price_extreme)
}

#[inline]
pub(crate) fn relative_change(base: f64, to: f64) -> f64 {
    (to - base) / base
}

#[inline]
fn conforms(direction: Direction, prev: f64, next: f64) -> bool {
    match direction {
        Direction::Crash => next <= prev,
        Direction::Spike => next >= prev,
    }
}

#[inline]
fn change_qualifies(direction: Direction, base: f64, to: f64, min_change: f64) -> bool {
    match direction {
        Direction::Crash => relative_change(base, to) <= -min_change,
        Direction::Spike => relative_change(base, to) >= min_change,
    }
}

/// Smallest window start `i` in `[lo, hi]` such that the window from `i` to
/// the farthest trade within `max_duration` qualifies. Prices on
/// `[lo, hi]` must be weakly monotone in `direction`, so for fixed `i` the
/// farthest reachable trade maximizes both trade count and price change.
fn first_qualifying_start(
    ticks: &[TradeTick],
    lo: usize,
    hi: usize,
    direction: Direction,
    criterion: &UeeCriterion,
) -> Option<usize> {
    let mut j = lo;
    for i in lo..=hi {
        if j < i {
            j = i;
        }
        while j < hi && ticks[j + 1].t - ticks[i].t <= criterion.max_duration {
            j += 1;
        }
        if j - i + 1 >= criterion.min_trades
            && change_qualifies(direction, ticks[i].price, ticks[j].price, criterion.min_relative_change)
        {
            return Some(i);
        }
    }
    None
}

/// Scan one stream for events. The stream must have strictly increasing
/// fractional timestamps (see [`crate::tickstore::assign_subsecond_timestamps`]).
pub fn detect_uees(key: &StreamKey, ticks: &[TradeTick], criterion: &UeeCriterion) -> Vec<UeeEvent> {
    debug_assert!(criterion.validate().is_ok());
    let n = ticks.len();
    let mut events = Vec::new();
    if n < 2 {
        return events;
    }

    // Pause boundaries split the stream into segments; a run never spans a
    // pause because the pause would already have ended it.
    let mut seg_start = 0;
    while seg_start < n {
        let mut seg_end = seg_start;
        while seg_end + 1 < n && ticks[seg_end + 1].t - ticks[seg_end].t < criterion.pause_threshold {
            seg_end += 1;
        }

        let mut pos = seg_start;
        while pos < seg_end {
            // First strict price move at or after pos; everything before it
            // within the segment is flat and belongs to the coming run.
            let mut m = pos;
            while m < seg_end && ticks[m + 1].price == ticks[m].price {
                m += 1;
            }
            if m == seg_end {
                break;
            }
            let direction = if ticks[m + 1].price < ticks[m].price {
                Direction::Crash
            } else {
                Direction::Spike
            };
            let run_start = pos;
            let mut run_end = m + 1;
            while run_end < seg_end && conforms(direction, ticks[run_end].price, ticks[run_end + 1].price) {
                run_end += 1;
            }

            if let Some(start) = first_qualifying_start(ticks, run_start, run_end, direction, criterion) {
                let end_trigger = if run_end < seg_end {
                    EndTrigger::TrendReversal
                } else if seg_end + 1 < n {
                    EndTrigger::TradingPause
                } else {
                    EndTrigger::StreamEnd
                };
                events.push(UeeEvent {
                    key: key.clone(),
                    direction,
                    start_index: start,
                    end_index: run_end,
                    t0_uee: ticks[start].t,
                    t0_rec: ticks[run_end].t,
                    price_start: ticks[start].price,
                    price_extreme: ticks[run_end].price,
                    size: relative_change(ticks[start].price, ticks[run_end].price),
                    end_trigger,
                });
                pos = run_end + 1;
            } else {
                // The next run shares this run's trailing flat stretch (at
                // minimum the pivot trade), so back up to its first trade.
                let mut f = run_end;
                while f > run_start && ticks[f - 1].price == ticks[f].price {
                    f -= 1;
                }
                pos = f;
            }
        }
        seg_start = seg_end + 1;
    }
    events
}

/// Detect events across many streams and merge the results in key order.
/// With the `parallel` feature (default) streams are scanned on the rayon
/// pool; the merge order is deterministic either way.
pub fn detect_streams(
    streams: &BTreeMap<StreamKey, Vec<TradeTick>>,
    criterion: &UeeCriterion,
) -> Vec<UeeEvent> {
    #[cfg(feature = "parallel")]
    {
        let entries: Vec<(&StreamKey, &Vec<TradeTick>)> = streams.iter().collect();
        entries
            .par_iter()
            .map(|(key, ticks)| detect_uees(key, ticks, criterion))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        detect_streams_seq(streams, criterion)
    }
}

/// Sequential fallback of [`detect_streams`]; also used as the baseline in
/// the bench suite.
pub fn detect_streams_seq(
    streams: &BTreeMap<StreamKey, Vec<TradeTick>>,
    criterion: &UeeCriterion,
) -> Vec<UeeEvent> {
    streams
        .iter()
        .flat_map(|(key, ticks)| detect_uees(key, ticks, criterion))
        .collect()
}

/// Shares of events per end trigger. With `include_stream_end = false`,
/// stream-end events are removed from the denominator and their share is
/// reported as zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndTriggerShares {
    pub trend_reversal: f64,
    pub trading_pause: f64,
    pub stream_end: f64,
    pub denominator: usize,
}

pub fn end_trigger_shares(events: &[UeeEvent], include_stream_end: bool) -> Result<EndTriggerShares, EmptyEventSet> {
    let mut reversal = 0usize;
    let mut pause = 0usize;
    let mut stream_end = 0usize;
    for e in events {
        match e.end_trigger {
            EndTrigger::TrendReversal => reversal += 1,
            EndTrigger::TradingPause => pause += 1,
            EndTrigger::StreamEnd => stream_end += 1,
        }
    }
    let denominator = if include_stream_end { reversal + pause + stream_end } else { reversal + pause };
    if denominator == 0 {
        return Err(EmptyEventSet);
    }
    let d = denominator as f64;
    Ok(EndTriggerShares {
        trend_reversal: reversal as f64 / d,
        trading_pause: pause as f64 / d,
        stream_end: if include_stream_end { stream_end as f64 / d } else { 0.0 },
        denominator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn key() -> StreamKey {
        StreamKey::new("TST", "Q", NaiveDate::from_ymd_opt(2008, 10, 6).unwrap())
    }

    /// Stream from (t, price) pairs; `second` is unused by detection.
    fn stream(points: &[(f64, f64)]) -> Vec<TradeTick> {
        points
            .iter()
            .enumerate()
            .map(|(i, &(t, price))| TradeTick { second: t as u32, seq: i as u32, t, price, size: 100 })
            .collect()
    }

    fn c() -> UeeCriterion {
        UeeCriterion::default()
    }

    #[test]
    fn eleven_trade_crash_detected() {
        // 100.00 down to 99.10 in uniform steps over one second: -0.9%.
        let pts: Vec<(f64, f64)> = (0..11).map(|i| (i as f64 * 0.1, 100.0 - 0.09 * i as f64)).collect();
        let ticks = stream(&pts);
        let events = detect_uees(&key(), &ticks, &c());
        assert_eq!(events.len(), 1);
        let e = &events[0];
        assert_eq!(e.direction, Direction::Crash);
        assert_eq!(e.start_index, 0);
        assert_eq!(e.end_index, 10);
        assert!((e.size + 0.009).abs() < 1e-12);
        assert_eq!(e.end_trigger, EndTrigger::StreamEnd);
        assert_eq!(e.n_trades(), 11);
    }

    #[test]
    fn half_percent_fall_is_no_event() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64 * 0.1, 100.0 - 0.05 * i as f64)).collect();
        assert!(detect_uees(&key(), &stream(&pts), &c()).is_empty());
    }

    #[test]
    fn slow_one_percent_fall_is_no_event() {
        // 11 trades, 1.0% over 2.0 s: no <=1.5 s window holds >=10 trades.
        let pts: Vec<(f64, f64)> = (0..11).map(|i| (i as f64 * 0.2, 100.0 - 0.1 * i as f64)).collect();
        assert!(detect_uees(&key(), &stream(&pts), &c()).is_empty());
    }

    #[test]
    fn alternating_ticks_are_no_event() {
        let pts: Vec<(f64, f64)> = (0..40)
            .map(|i| (i as f64 * 0.05, if i % 2 == 0 { 100.0 } else { 99.0 }))
            .collect();
        assert!(detect_uees(&key(), &stream(&pts), &c()).is_empty());
    }

    #[test]
    fn run_extends_past_core_window_to_extremum() {
        // Qualifying fall in the first second, then two slower falling
        // trades, then a reversal: the event must end at the true extremum.
        let mut pts: Vec<(f64, f64)> = (0..11).map(|i| (i as f64 * 0.1, 100.0 - 0.09 * i as f64)).collect();
        pts.push((1.4, 99.05));
        pts.push((1.8, 99.0));
        pts.push((2.0, 99.5)); // reversal
        let events = detect_uees(&key(), &stream(&pts), &c());
        assert_eq!(events.len(), 1);
        let e = &events[0];
        assert_eq!(e.end_index, 12);
        assert_eq!(e.price_extreme, 99.0);
        assert_eq!(e.end_trigger, EndTrigger::TrendReversal);
    }

    #[test]
    fn pause_ends_event_before_reversal() {
        // Fall, then a 1.2 s gap, then higher prices: the pause ends the
        // event even though the next print also reverses.
        let mut pts: Vec<(f64, f64)> = (0..11).map(|i| (i as f64 * 0.1, 100.0 - 0.09 * i as f64)).collect();
        pts.push((2.2, 99.4));
        pts.push((2.3, 99.5));
        let events = detect_uees(&key(), &stream(&pts), &c());
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].end_index, 10);
        assert_eq!(events[0].end_trigger, EndTrigger::TradingPause);
    }

    #[test]
    fn pause_ends_event_even_when_trend_would_continue() {
        let mut pts: Vec<(f64, f64)> = (0..11).map(|i| (i as f64 * 0.1, 100.0 - 0.09 * i as f64)).collect();
        pts.push((2.2, 99.0)); // still falling, but after a pause
        let events = detect_uees(&key(), &stream(&pts), &c());
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].end_index, 10);
        assert_eq!(events[0].end_trigger, EndTrigger::TradingPause);
    }

    #[test]
    fn equal_prices_do_not_break_a_run() {
        // 12 trades: flat pair in the middle of the fall still one event.
        let prices = [100.0, 99.9, 99.8, 99.8, 99.7, 99.6, 99.5, 99.4, 99.3, 99.2, 99.1, 99.0];
        let pts: Vec<(f64, f64)> = prices.iter().enumerate().map(|(i, &p)| (i as f64 * 0.1, p)).collect();
        let events = detect_uees(&key(), &stream(&pts), &c());
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].n_trades(), 12);
    }

    #[test]
    fn flat_tail_is_part_of_the_event() {
        // Extremum price printed three times before the reversal: the event
        // ends at the last flat print.
        let mut pts: Vec<(f64, f64)> = (0..11).map(|i| (i as f64 * 0.1, 100.0 - 0.09 * i as f64)).collect();
        pts.push((1.2, 99.1));
        pts.push((1.3, 99.1));
        pts.push((1.4, 99.6));
        let events = detect_uees(&key(), &stream(&pts), &c());
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].end_index, 12);
        assert_eq!(events[0].price_extreme, 99.1);
    }

    #[test]
    fn events_claim_indices_disjointly() {
        // Crash then immediate qualifying rebound: the rebound event starts
        // after the crash extremum, never on it.
        let mut pts: Vec<(f64, f64)> = (0..11).map(|i| (i as f64 * 0.1, 100.0 - 0.1 * i as f64)).collect();
        for i in 1..12 {
            pts.push((1.0 + i as f64 * 0.1, 99.0 + 0.1 * i as f64));
        }
        let events = detect_uees(&key(), &stream(&pts), &c());
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].direction, Direction::Crash);
        assert_eq!(events[1].direction, Direction::Spike);
        assert!(events[0].end_index < events[1].start_index);
    }

    #[test]
    fn empty_and_tiny_streams() {
        assert!(detect_uees(&key(), &[], &c()).is_empty());
        let one = stream(&[(0.0, 100.0)]);
        assert!(detect_uees(&key(), &one, &c()).is_empty());
    }

    #[test]
    fn event_size_examples() {
        let pts: Vec<(f64, f64)> = (0..11).map(|i| (i as f64 * 0.1, 100.0 - 0.09 * i as f64)).collect();
        let e = &detect_uees(&key(), &stream(&pts), &c())[0];
        assert_eq!(event_size(e), e.size);
        assert!((event_size(e) + 0.009).abs() < 1e-12);
    }

    #[test]
    fn trigger_shares_sum_to_one() {
        let pts: Vec<(f64, f64)> = (0..11).map(|i| (i as f64 * 0.1, 100.0 - 0.09 * i as f64)).collect();
        let e = detect_uees(&key(), &stream(&pts), &c()).remove(0);
        let mut reversal = e.clone();
        reversal.end_trigger = EndTrigger::TrendReversal;
        let mut pause = e.clone();
        pause.end_trigger = EndTrigger::TradingPause;
        let events = vec![reversal.clone(), reversal.clone(), reversal, pause];
        let shares = end_trigger_shares(&events, true).unwrap();
        assert_eq!(shares.trend_reversal, 0.75);
        assert_eq!(shares.trading_pause, 0.25);
        assert_eq!(shares.stream_end, 0.0);
        assert_eq!(shares.denominator, 4);
        assert!(end_trigger_shares(&[], true).is_err());
    }

    #[test]
    fn stream_end_events_can_be_excluded_from_shares() {
        let pts: Vec<(f64, f64)> = (0..11).map(|i| (i as f64 * 0.1, 100.0 - 0.09 * i as f64)).collect();
        let e = detect_uees(&key(), &stream(&pts), &c()).remove(0);
        assert_eq!(e.end_trigger, EndTrigger::StreamEnd);
        let mut reversal = e.clone();
        reversal.end_trigger = EndTrigger::TrendReversal;
        let events = vec![e, reversal];
        let incl = end_trigger_shares(&events, true).unwrap();
        assert_eq!(incl.denominator, 2);
        assert_eq!(incl.stream_end, 0.5);
        let excl = end_trigger_shares(&events, false).unwrap();
        assert_eq!(excl.denominator, 1);
        assert_eq!(excl.trend_reversal, 1.0);
        assert_eq!(excl.stream_end, 0.0);
    }

    #[test]
    fn default_criterion_matches_reference_values() {
        let c = UeeCriterion::default();
        assert_eq!(c.min_relative_change, 0.008);
        assert_eq!(c.max_duration, 1.5);
        assert_eq!(c.min_trades, 10);
        assert_eq!(c.pause_threshold, 1.0);
        assert!(c.validate().is_ok());
        assert!(UeeCriterion { min_trades: 1, ..c }.validate().is_err());
        assert!(UeeCriterion { min_relative_change: 0.0, ..c }.validate().is_err());
    }
}
