//! Core domain types for per-venue tick streams.

use std::fmt;

use chrono::NaiveDate;

/// Identifies one trade or quote stream: a ticker on one venue for one
/// calendar day. Events are counted per stream, so the same stock on three
/// venues yields three independent streams.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StreamKey {
    pub symbol: String,
    pub venue: String,
    pub day: NaiveDate,
}

impl StreamKey {
    pub fn new(symbol: impl Into<String>, venue: impl Into<String>, day: NaiveDate) -> Self {
        Self {
            symbol: symbol.into(),
            venue: venue.into(),
            day,
        }
    }
}

impl fmt::Display for StreamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.symbol, self.venue, self.day)
    }
}

/// One executed trade inside a stream.
///
/// `second` is the wall-clock timestamp from the source file (seconds since
/// midnight, one-second resolution). `t` is the repaired fractional
/// timestamp: the `m` trades sharing a second `s` sit at `s + k/m`, so `t`
/// strictly increases within a stream. `seq` is the in-stream ordinal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradeTick {
    pub second: u32,
    pub seq: u32,
    pub t: f64,
    pub price: f64,
    pub size: u64,
}

/// One best-bid/ask update inside a stream. Timestamps are repaired the same
/// way as trades. `crossed` flags updates with bid >= ask; they are kept
/// because jump analysis uses one side at a time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuoteTick {
    pub second: u32,
    pub seq: u32,
    pub t: f64,
    pub bid: f64,
    pub ask: f64,
    pub crossed: bool,
}

/// Fractional timestamp for the `k`-th of `m` records sharing integer
/// second `s`. The first record sits exactly at the integer second.
#[inline]
pub fn subsecond_time(second: u32, k: usize, m: usize) -> f64 {
    second as f64 + (k as f64) / (m as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_key_display_and_order() {
        let d = NaiveDate::from_ymd_opt(2008, 12, 1).unwrap();
        let k = StreamKey::new("AAPL", "Q", d);
        assert_eq!(k.to_string(), "AAPL:Q:2008-12-01");
        let k2 = StreamKey::new("AAPL", "N", d);
        assert!(k2 < k);
    }

    #[test]
    fn subsecond_first_record_at_integer_second() {
        assert_eq!(subsecond_time(34200, 0, 4), 34200.0);
        assert_eq!(subsecond_time(34200, 3, 4), 34200.75);
        assert_eq!(subsecond_time(34200, 0, 1), 34200.0);
    }
}
