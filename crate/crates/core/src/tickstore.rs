//! Ingestion of delimited trade/quote files and repair of one-second
//! timestamps into strictly ordered fractional timestamps.
//!
//! Input schema (comma-separated, header optional):
//! trades `symbol,venue,date,time,price,size`, quotes
//! `symbol,venue,date,time,bid,ask`, with `date` as `YYYY-MM-DD` and `time`
//! as integer seconds since midnight. Column positions can be remapped with
//! a format spec such as `symbol=0,venue=1,date=2,time=3,price=4,size=5`.

use std::collections::BTreeMap;
use std::io::Read;

use chrono::NaiveDate;

use crate::error::IngestError;
use crate::types::{subsecond_time, QuoteTick, StreamKey, TradeTick};

/// At most this many per-row diagnostics are retained verbatim; the reject
/// counter is always exact.
pub const MAX_DIAGNOSTICS: usize = 100;

/// Column positions for trade files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TradeFormat {
    pub symbol: usize,
    pub venue: usize,
    pub date: usize,
    pub time: usize,
    pub price: usize,
    pub size: usize,
}

impl Default for TradeFormat {
    fn default() -> Self {
        Self { symbol: 0, venue: 1, date: 2, time: 3, price: 4, size: 5 }
    }
}

/// Column positions for quote files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuoteFormat {
    pub symbol: usize,
    pub venue: usize,
    pub date: usize,
    pub time: usize,
    pub bid: usize,
    pub ask: usize,
}

impl Default for QuoteFormat {
    fn default() -> Self {
        Self { symbol: 0, venue: 1, date: 2, time: 3, bid: 4, ask: 5 }
    }
}

fn apply_mapping(spec: &str, mut set: impl FnMut(&str, usize) -> bool) -> Result<(), IngestError> {
    for part in spec.split(',').filter(|p| !p.trim().is_empty()) {
        let (name, idx) = part
            .split_once('=')
            .ok_or_else(|| IngestError::Format(format!("expected name=index, got {part:?}")))?;
        let idx: usize = idx
            .trim()
            .parse()
            .map_err(|_| IngestError::Format(format!("bad column index in {part:?}")))?;
        if !set(name.trim(), idx) {
            return Err(IngestError::Format(format!("unknown column name {:?}", name.trim())));
        }
    }
    Ok(())
}

impl TradeFormat {
    /// Parse a remap spec like `symbol=0,venue=1,date=2,time=3,price=4,size=5`.
    /// Unnamed columns keep their default positions.
    pub fn parse(spec: &str) -> Result<Self, IngestError> {
        let mut f = Self::default();
        apply_mapping(spec, |name, idx| {
            match name {
                "symbol" => f.symbol = idx,
                "venue" => f.venue = idx,
                "date" => f.date = idx,
                "time" => f.time = idx,
                "price" => f.price = idx,
                "size" => f.size = idx,
                _ => return false,
            }
            true
        })?;
        Ok(f)
    }

    fn max_index(&self) -> usize {
        self.symbol.max(self.venue).max(self.date).max(self.time).max(self.price).max(self.size)
    }
}

impl QuoteFormat {
    /// Parse a remap spec like `symbol=0,venue=1,date=2,time=3,bid=4,ask=5`.
    pub fn parse(spec: &str) -> Result<Self, IngestError> {
        let mut f = Self::default();
        apply_mapping(spec, |name, idx| {
            match name {
                "symbol" => f.symbol = idx,
                "venue" => f.venue = idx,
                "date" => f.date = idx,
                "time" => f.time = idx,
                "bid" => f.bid = idx,
                "ask" => f.ask = idx,
                _ => return false,
            }
            true
        })?;
        Ok(f)
    }

    fn max_index(&self) -> usize {
        self.symbol.max(self.venue).max(self.date).max(self.time).max(self.bid).max(self.ask)
    }
}

/// One rejected row, with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowDiagnostic {
    pub line: u64,
    pub message: String,
}

/// Result of parsing one file: accepted rows in file order plus reject
/// accounting. Rows are never silently dropped.
#[derive(Debug, Clone)]
pub struct ParseOutcome<T> {
    pub rows: Vec<T>,
    /// First [`MAX_DIAGNOSTICS`] reject reasons.
    pub diagnostics: Vec<RowDiagnostic>,
    pub rows_rejected: u64,
    pub lines_read: u64,
    /// Quote rows with bid >= ask (kept, but counted).
    pub crossed_rows: u64,
}

impl<T> ParseOutcome<T> {
    fn new() -> Self {
        Self { rows: Vec::new(), diagnostics: Vec::new(), rows_rejected: 0, lines_read: 0, crossed_rows: 0 }
    }

    fn reject(&mut self, line: u64, message: String) {
        self.rows_rejected += 1;
        if self.diagnostics.len() < MAX_DIAGNOSTICS {
            self.diagnostics.push(RowDiagnostic { line, message });
        }
    }
}

/// A parsed trade row before stream partitioning.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeRow {
    pub symbol: String,
    pub venue: String,
    pub day: NaiveDate,
    pub second: u32,
    pub price: f64,
    pub size: u64,
}

/// A parsed quote row before stream partitioning.
#[derive(Debug, Clone, PartialEq)]
pub struct QuoteRow {
    pub symbol: String,
    pub venue: String,
    pub day: NaiveDate,
    pub second: u32,
    pub bid: f64,
    pub ask: f64,
    pub crossed: bool,
}

/// Caches the most recent date string; tick files carry one date per file,
/// so this avoids re-parsing it per row.
struct DateCache {
    raw: String,
    parsed: Option<NaiveDate>,
}

impl DateCache {
    fn new() -> Self {
        Self { raw: String::new(), parsed: None }
    }

    fn get(&mut self, s: &str) -> Option<NaiveDate> {
        if self.raw != s {
            self.raw.clear();
            self.raw.push_str(s);
            self.parsed = NaiveDate::parse_from_str(s, "%Y-%m-%d").ok();
        }
        self.parsed
    }
}

fn field<'a>(record: &'a csv::StringRecord, idx: usize) -> &'a str {
    record.get(idx).unwrap_or("").trim()
}

/// True when the first record looks like a header row: its time column does
/// not parse as an integer.
fn looks_like_header(record: &csv::StringRecord, time_idx: usize) -> bool {
    field(record, time_idx).parse::<u32>().is_err()
}

/// Parse a trade file. Malformed rows (wrong arity, unparsable fields,
/// nonpositive price or size) are rejected with a per-row diagnostic.
pub fn parse_trades<R: Read>(reader: R, format: &TradeFormat) -> Result<ParseOutcome<TradeRow>, IngestError> {
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut out = ParseOutcome::new();
    let mut dates = DateCache::new();
    let need = format.max_index() + 1;

    let mut record = csv::StringRecord::new();
    let mut first = true;
    loop {
        match csv_reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                out.lines_read += 1;
                out.reject(out.lines_read, format!("unreadable row: {e}"));
                continue;
            }
        }
        out.lines_read += 1;
        let line = out.lines_read;
        if first {
            first = false;
            if looks_like_header(&record, format.time) {
                continue;
            }
        }
        if record.len() < need {
            out.reject(line, format!("expected at least {need} columns, got {}", record.len()));
            continue;
        }
        let Some(day) = dates.get(field(&record, format.date)) else {
            out.reject(line, format!("bad date {:?}", field(&record, format.date)));
            continue;
        };
        let Ok(second) = field(&record, format.time).parse::<u32>() else {
            out.reject(line, format!("bad time {:?}", field(&record, format.time)));
            continue;
        };
        let Ok(price) = field(&record, format.price).parse::<f64>() else {
            out.reject(line, format!("bad price {:?}", field(&record, format.price)));
            continue;
        };
        let Ok(size) = field(&record, format.size).parse::<i64>() else {
            out.reject(line, format!("bad size {:?}", field(&record, format.size)));
            continue;
        };
        if !(price > 0.0) || !price.is_finite() {
            out.reject(line, format!("nonpositive price {price}"));
            continue;
        }
        if size <= 0 {
            out.reject(line, format!("nonpositive size {size}"));
            continue;
        }
        let symbol = field(&record, format.symbol);
        let venue = field(&record, format.venue);
        if symbol.is_empty() || venue.is_empty() {
            out.reject(line, "empty symbol or venue".to_string());
            continue;
        }
        out.rows.push(TradeRow {
            symbol: symbol.to_string(),
            venue: venue.to_string(),
            day,
            second,
            price,
            size: size as u64,
        });
    }
    Ok(out)
}

/// Parse a quote file. Crossed rows (bid >= ask) are retained and counted.
pub fn parse_quotes<R: Read>(reader: R, format: &QuoteFormat) -> Result<ParseOutcome<QuoteRow>, IngestError> {
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut out = ParseOutcome::new();
    let mut dates = DateCache::new();
    let need = format.max_index() + 1;

    let mut record = csv::StringRecord::new();
    let mut first = true;
    loop {
        match csv_reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                out.lines_read += 1;
                out.reject(out.lines_read, format!("unreadable row: {e}"));
                continue;
            }
        }
        out.lines_read += 1;
        let line = out.lines_read;
        if first {
            first = false;
            if looks_like_header(&record, format.time) {
                continue;
            }
        }
        if record.len() < need {
            out.reject(line, format!("expected at least {need} columns, got {}", record.len()));
            continue;
        }
        let Some(day) = dates.get(field(&record, format.date)) else {
            out.reject(line, format!("bad date {:?}", field(&record, format.date)));
            continue;
        };
        let Ok(second) = field(&record, format.time).parse::<u32>() else {
            out.reject(line, format!("bad time {:?}", field(&record, format.time)));
            continue;
        };
        let Ok(bid) = field(&record, format.bid).parse::<f64>() else {
            out.reject(line, format!("bad bid {:?}", field(&record, format.bid)));
            continue;
        };
        let Ok(ask) = field(&record, format.ask).parse::<f64>() else {
            out.reject(line, format!("bad ask {:?}", field(&record, format.ask)));
            continue;
        };
        if !(bid > 0.0) || !(ask > 0.0) || !bid.is_finite() || !ask.is_finite() {
            out.reject(line, format!("nonpositive quote {bid}/{ask}"));
            continue;
        }
        let symbol = field(&record, format.symbol);
        let venue = field(&record, format.venue);
        if symbol.is_empty() || venue.is_empty() {
            out.reject(line, "empty symbol or venue".to_string());
            continue;
        }
        if bid >= ask {
            out.crossed_rows += 1;
        }
        out.rows.push(QuoteRow {
            symbol: symbol.to_string(),
            venue: venue.to_string(),
            day,
            second,
            bid,
            ask,
            crossed: bid >= ask,
        });
    }
    Ok(out)
}

/// Partition trade rows into per-(symbol, venue, day) streams. Every row
/// lands in exactly one stream; per-stream arrival order is preserved, then
/// each stream is stably sorted by integer second and sequence numbers are
/// assigned in final order.
pub fn partition_trades(rows: Vec<TradeRow>) -> BTreeMap<StreamKey, Vec<TradeTick>> {
    let mut streams: BTreeMap<StreamKey, Vec<TradeTick>> = BTreeMap::new();
    for row in rows {
        let key = StreamKey::new(row.symbol, row.venue, row.day);
        let stream = streams.entry(key).or_default();
        stream.push(TradeTick {
            second: row.second,
            seq: stream.len() as u32,
            t: row.second as f64,
            price: row.price,
            size: row.size,
        });
    }
    for stream in streams.values_mut() {
        if !stream.windows(2).all(|w| w[0].second <= w[1].second) {
            stream.sort_by_key(|t| t.second);
        }
        for (i, tick) in stream.iter_mut().enumerate() {
            tick.seq = i as u32;
        }
        assign_subsecond_timestamps(stream);
    }
    streams
}

/// Partition quote rows into per-(symbol, venue, day) streams; same ordering
/// and timestamp treatment as trades.
pub fn partition_quotes(rows: Vec<QuoteRow>) -> BTreeMap<StreamKey, Vec<QuoteTick>> {
    let mut streams: BTreeMap<StreamKey, Vec<QuoteTick>> = BTreeMap::new();
    for row in rows {
        let key = StreamKey::new(row.symbol, row.venue, row.day);
        let stream = streams.entry(key).or_default();
        stream.push(QuoteTick {
            second: row.second,
            seq: stream.len() as u32,
            t: row.second as f64,
            bid: row.bid,
            ask: row.ask,
            crossed: row.crossed,
        });
    }
    for stream in streams.values_mut() {
        if !stream.windows(2).all(|w| w[0].second <= w[1].second) {
            stream.sort_by_key(|q| q.second);
        }
        for (i, q) in stream.iter_mut().enumerate() {
            q.seq = i as u32;
        }
        assign_subsecond_quotes(stream);
    }
    streams
}

fn assign_subsecond_by<T>(items: &mut [T], second: impl Fn(&T) -> u32, set_t: impl Fn(&mut T, f64)) {
    let mut start = 0;
    while start < items.len() {
        let s = second(&items[start]);
        let mut end = start + 1;
        while end < items.len() && second(&items[end]) == s {
            end += 1;
        }
        let m = end - start;
        for (k, item) in items[start..end].iter_mut().enumerate() {
            set_t(item, subsecond_time(s, k, m));
        }
        start = end;
    }
}

/// Spread the `m` trades sharing an integer second equidistantly over it:
/// `t = s + k/m` for `k = 0..m-1`. The input must be sorted by
/// (second, seq); the result is strictly increasing in `t`.
pub fn assign_subsecond_timestamps(stream: &mut [TradeTick]) {
    debug_assert!(stream.windows(2).all(|w| w[0].second <= w[1].second));
    assign_subsecond_by(stream, |t| t.second, |t, v| t.t = v);
}

/// Quote-side counterpart of [`assign_subsecond_timestamps`].
pub fn assign_subsecond_quotes(stream: &mut [QuoteTick]) {
    debug_assert!(stream.windows(2).all(|w| w[0].second <= w[1].second));
    assign_subsecond_by(stream, |q| q.second, |q, v| q.t = v);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn parses_plain_row() {
        let data = "AAPL,Q,2008-12-01,34200,91.25,100\n";
        let out = parse_trades(data.as_bytes(), &TradeFormat::default()).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.rows_rejected, 0);
        let row = &out.rows[0];
        assert_eq!(row.symbol, "AAPL");
        assert_eq!(row.venue, "Q");
        assert_eq!(row.day, date("2008-12-01"));
        assert_eq!(row.second, 34200);
        assert_eq!(row.price, 91.25);
        assert_eq!(row.size, 100);
    }

    #[test]
    fn rejects_zero_price() {
        let data = "AAPL,Q,2008-12-01,34200,0,100\n";
        let out = parse_trades(data.as_bytes(), &TradeFormat::default()).unwrap();
        assert!(out.rows.is_empty());
        assert_eq!(out.rows_rejected, 1);
        assert_eq!(out.diagnostics.len(), 1);
        assert_eq!(out.diagnostics[0].line, 1);
    }

    #[test]
    fn counts_malformed_rows_and_keeps_good_ones() {
        let data = "AAPL,Q,2008-12-01,34200,91.25,100\n\
                    AAPL,Q,2008-12-01,nonsense,91.25,100\n\
                    AAPL,Q,2008-12-01,34201,91.26,200\n";
        let out = parse_trades(data.as_bytes(), &TradeFormat::default()).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert_eq!(out.rows_rejected, 1);
        assert_eq!(out.diagnostics[0].line, 2);
    }

    #[test]
    fn skips_optional_header() {
        let data = "symbol,venue,date,time,price,size\nAAPL,Q,2008-12-01,34200,91.25,100\n";
        let out = parse_trades(data.as_bytes(), &TradeFormat::default()).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.rows_rejected, 0);
    }

    #[test]
    fn remapped_columns() {
        let fmt = TradeFormat::parse("price=0,size=1,symbol=2,venue=3,date=4,time=5").unwrap();
        let data = "91.25,100,AAPL,Q,2008-12-01,34200\n";
        let out = parse_trades(data.as_bytes(), &fmt).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.rows[0].price, 91.25);
    }

    #[test]
    fn bad_format_spec_is_fatal() {
        assert!(TradeFormat::parse("nope=0").is_err());
        assert!(TradeFormat::parse("price").is_err());
    }

    #[test]
    fn quotes_flag_crossed() {
        let data = "AAPL,Q,2008-12-01,34200,91.25,91.20\nAAPL,Q,2008-12-01,34201,91.10,91.20\n";
        let out = parse_quotes(data.as_bytes(), &QuoteFormat::default()).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert_eq!(out.crossed_rows, 1);
        assert!(out.rows[0].crossed);
        assert!(!out.rows[1].crossed);
    }

    #[test]
    fn four_trades_in_one_second_are_equidistant() {
        let mut stream: Vec<TradeTick> = (0..4)
            .map(|i| TradeTick { second: 34200, seq: i, t: 0.0, price: 100.0, size: 1 })
            .collect();
        assign_subsecond_timestamps(&mut stream);
        let ts: Vec<f64> = stream.iter().map(|t| t.t).collect();
        assert_eq!(ts, vec![34200.0, 34200.25, 34200.5, 34200.75]);
    }

    #[test]
    fn single_trade_keeps_integer_second() {
        let mut stream = vec![TradeTick { second: 34200, seq: 0, t: 0.0, price: 100.0, size: 1 }];
        assign_subsecond_timestamps(&mut stream);
        assert_eq!(stream[0].t, 34200.0);
    }

    #[test]
    fn ten_trades_have_uniform_tenth_second_gaps() {
        let mut stream: Vec<TradeTick> = (0..10)
            .map(|i| TradeTick { second: 500, seq: i, t: 0.0, price: 100.0, size: 1 })
            .collect();
        assign_subsecond_timestamps(&mut stream);
        for w in stream.windows(2) {
            assert!((w[1].t - w[0].t - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn partition_splits_by_key() {
        let d = date("2008-12-01");
        let rows = vec![
            TradeRow { symbol: "AAPL".into(), venue: "Q".into(), day: d, second: 1, price: 1.0, size: 1 },
            TradeRow { symbol: "AAPL".into(), venue: "N".into(), day: d, second: 1, price: 1.0, size: 1 },
            TradeRow { symbol: "AAPL".into(), venue: "Q".into(), day: d, second: 2, price: 1.0, size: 1 },
        ];
        let streams = partition_trades(rows);
        assert_eq!(streams.len(), 2);
        let q = &streams[&StreamKey::new("AAPL", "Q", d)];
        assert_eq!(q.len(), 2);
        assert_eq!(q[0].seq, 0);
        assert_eq!(q[1].seq, 1);
    }

    #[test]
    fn partition_of_empty_input_is_empty() {
        assert!(partition_trades(Vec::new()).is_empty());
    }

    #[test]
    fn partition_preserves_totals() {
        let d = date("2008-12-01");
        let rows: Vec<TradeRow> = (0..1000)
            .map(|i| TradeRow {
                symbol: format!("S{}", i % 3),
                venue: "Q".into(),
                day: d,
                second: i as u32 / 10,
                price: 10.0,
                size: 1,
            })
            .collect();
        let streams = partition_trades(rows);
        assert_eq!(streams.len(), 3);
        let total: usize = streams.values().map(|s| s.len()).sum();
        assert_eq!(total, 1000);
    }

    #[test]
    fn subsecond_is_strictly_increasing_after_assignment() {
        let d = date("2008-12-01");
        let rows: Vec<TradeRow> = (0..200)
            .map(|i| TradeRow {
                symbol: "X".into(),
                venue: "Q".into(),
                day: d,
                second: (i / 7) as u32,
                price: 10.0,
                size: 1,
            })
            .collect();
        let streams = partition_trades(rows);
        let stream = streams.values().next().unwrap();
        assert!(stream.windows(2).all(|w| w[0].t < w[1].t));
    }
}
