//! Deterministic synthetic tick streams with ground-truth injections, plus
//! an exhaustive brute-force reference detector.
//!
//! Prices live on an integer tick grid and are converted to `f64` exactly
//! the way the CSV reader would parse them, so ground-truth expectations
//! match the pipeline bit for bit. Injections overwrite whole seconds
//! rather than superposing onto the background, which keeps their
//! boundaries exact; every assembled stream is re-checked against
//! [`oracle_detect`] before it is handed out.

use std::collections::BTreeMap;
use std::ops::Bound;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detector::{relative_change, Direction, EndTrigger, UeeCriterion, UeeEvent};
use crate::error::SynthError;
use crate::mechanism::{classify_trigger, JumpThresholds, TriggerRegime};
use crate::types::{subsecond_time, QuoteTick, StreamKey, TradeTick};

/// Decimal price grid: tick size is `10^-decimals` currency units.
/// `value()` equals what parsing the rendered decimal string yields, since
/// both are the correctly rounded binary value of `ticks / 10^decimals`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PriceGrid {
    pub decimals: u8,
}

impl PriceGrid {
    pub fn scale(&self) -> i64 {
        10_i64.pow(self.decimals as u32)
    }

    pub fn value(&self, ticks: i64) -> f64 {
        ticks as f64 / self.scale() as f64
    }

    pub fn render(&self, ticks: i64) -> String {
        if self.decimals == 0 {
            return ticks.to_string();
        }
        let scale = self.scale();
        format!("{}.{:0width$}", ticks / scale, (ticks % scale).abs(), width = self.decimals as usize)
    }
}

/// Background random-walk parameters. `volatility` is the probability that
/// a trade moves the price by one tick (split evenly between up and down);
/// zero yields a constant price.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundConfig {
    pub seed: u64,
    pub n_trades: usize,
    pub start_second: u32,
    pub start_price_ticks: i64,
    pub decimals: u8,
    pub volatility: f64,
    pub trades_per_second: (u32, u32),
    pub quotes_per_second: (u32, u32),
    pub half_spread_ticks: i64,
    pub max_retries: u32,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_trades: 10_000,
            start_second: 34_200,
            start_price_ticks: 10_000, // 100.00 at two decimals
            decimals: 2,
            volatility: 0.5,
            trades_per_second: (3, 7),
            quotes_per_second: (1, 3),
            half_spread_ticks: 2,
            max_retries: 16,
        }
    }
}

/// What an injection is designed to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InjectionKind {
    /// Satisfies the criterion; the detector must find exactly this event.
    Qualifying,
    /// One trade short of `min_trades`.
    NearMissCount,
    /// Price move just below `min_relative_change`.
    NearMissChange,
    /// Enough trades and change, but no window fits in `max_duration`.
    NearMissDuration,
}

impl InjectionKind {
    pub fn is_qualifying(&self) -> bool {
        matches!(self, InjectionKind::Qualifying)
    }
}

/// How the injected run is terminated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndDesign {
    /// A recovery path reverses the trend right after the extremum.
    Reversal,
    /// An empty second follows the extremum.
    Pause,
    /// The stream is truncated at the extremum.
    StreamEnd,
}

/// Shape of the best-quote move on the event-relevant side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuoteProfile {
    /// One jump of the given signed relative size; sign must match the
    /// event direction.
    SingleStep { jump: f64 },
    /// The move is spread over this many equal steps.
    UniformSteps { steps: u32 },
}

/// One injection request. The core run starts at `anchor_second` (the
/// second before it is claimed as a guard) and lays out `core_layout[i]`
/// trades in the i-th core second.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionSpec {
    pub anchor_second: u32,
    pub direction: Direction,
    pub kind: InjectionKind,
    /// Target |relative change| of the core run.
    pub change: f64,
    pub core_layout: Vec<u32>,
    pub end_design: EndDesign,
    /// Designed recovery rates, realized on the tick grid. Required
    /// nonempty for `Reversal`, must be empty for `StreamEnd` and
    /// near-misses.
    pub eta_path: Vec<f64>,
    pub quote_profile: Option<QuoteProfile>,
}

/// Expected detector output for one qualifying injection.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedEvent {
    pub start_index: usize,
    pub end_index: usize,
    pub t0_uee: f64,
    pub t0_rec: f64,
    pub price_start: f64,
    pub price_extreme: f64,
    pub size: f64,
    pub end_trigger: EndTrigger,
}

/// Ground truth for one injection, resolved to global trade indices.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthEntry {
    pub key: StreamKey,
    pub kind: InjectionKind,
    pub direction: Direction,
    /// Global index range of the injected core trades.
    pub window: (usize, usize),
    pub expected: Option<ExpectedEvent>,
    /// Realized recovery rates of the designed path.
    pub eta: Vec<f64>,
    /// Realized extreme quote jump of the relevant side, when quotes were
    /// injected.
    pub max_jump: Option<f64>,
    pub regime: Option<TriggerRegime>,
}

#[derive(Debug, Clone)]
struct TradePoint {
    ticks: i64,
    size: u64,
}

#[derive(Debug, Clone)]
struct QuotePoint {
    bid: i64,
    ask: i64,
}

#[derive(Debug, Clone)]
struct PendingInjection {
    kind: InjectionKind,
    direction: Direction,
    /// (second, trade count) of each core second.
    core: Vec<(u32, u32)>,
    expected_trigger: EndTrigger,
    start_ticks: i64,
    extreme_ticks: i64,
    eta_ticks: Vec<i64>,
    /// Relevant-side values of the injected quote sequence, time order.
    quote_values: Option<Vec<i64>>,
}

/// A synthetic stream under construction: background plus injections, still
/// on the tick grid.
#[derive(Debug, Clone)]
pub struct SyntheticStream {
    pub key: StreamKey,
    pub grid: PriceGrid,
    criterion: UeeCriterion,
    trades: BTreeMap<u32, Vec<TradePoint>>,
    quotes: BTreeMap<u32, Vec<QuotePoint>>,
    claims: Vec<(u32, u32)>,
    injections: Vec<PendingInjection>,
    first_second: u32,
    half_spread_ticks: i64,
}

/// A finished stream: pipeline-ready ticks plus resolved ground truth.
#[derive(Debug, Clone)]
pub struct MaterializedStream {
    pub key: StreamKey,
    pub decimals: u8,
    pub trades: Vec<TradeTick>,
    pub quotes: Vec<QuoteTick>,
    pub ground_truth: Vec<GroundTruthEntry>,
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 step over seed ^ salt
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SyntheticStream {
    /// Deterministic random-walk background; no event-freeness guarantee.
    /// Use [`generate_background`] for a verified event-free stream.
    pub fn background(key: StreamKey, cfg: &BackgroundConfig, criterion: &UeeCriterion) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let grid = PriceGrid { decimals: cfg.decimals };
        let mut trades: BTreeMap<u32, Vec<TradePoint>> = BTreeMap::new();
        let mut quotes: BTreeMap<u32, Vec<QuotePoint>> = BTreeMap::new();
        let mut price = cfg.start_price_ticks;
        let mut second = cfg.start_second;
        let mut produced = 0usize;
        while produced < cfg.n_trades {
            let m = rng.gen_range(cfg.trades_per_second.0..=cfg.trades_per_second.1).max(1) as usize;
            let m = m.min(cfg.n_trades - produced);
            let mut points = Vec::with_capacity(m);
            for _ in 0..m {
                if cfg.volatility > 0.0 && rng.gen_bool(cfg.volatility.min(1.0)) {
                    price += if rng.gen_bool(0.5) { 1 } else { -1 };
                    price = price.max(1);
                }
                points.push(TradePoint { ticks: price, size: 100 * rng.gen_range(1..=9) as u64 });
            }
            trades.insert(second, points);
            let q = rng.gen_range(cfg.quotes_per_second.0..=cfg.quotes_per_second.1) as usize;
            if q > 0 {
                let mut qpoints = Vec::with_capacity(q);
                for _ in 0..q {
                    let jitter = rng.gen_range(-1..=1);
                    let bid = (price - cfg.half_spread_ticks + jitter).max(1);
                    let ask = bid + 2 * cfg.half_spread_ticks.max(1);
                    qpoints.push(QuotePoint { bid, ask });
                }
                quotes.insert(second, qpoints);
            }
            produced += m;
            second += 1;
        }
        Self {
            key,
            grid,
            criterion: *criterion,
            trades,
            quotes,
            claims: Vec::new(),
            injections: Vec::new(),
            first_second: cfg.start_second,
            half_spread_ticks: cfg.half_spread_ticks.max(1),
        }
    }

    pub fn criterion(&self) -> &UeeCriterion {
        &self.criterion
    }

    fn last_second(&self) -> u32 {
        self.trades.keys().next_back().copied().unwrap_or(self.first_second)
    }

    fn claim(&mut self, lo: u32, hi: u32) -> Result<(), SynthError> {
        for &(a, b) in &self.claims {
            if lo <= b && a <= hi {
                return Err(SynthError::OverlappingInjection { second: lo });
            }
        }
        self.claims.push((lo, hi));
        Ok(())
    }

    /// Last background trade price strictly before `second`, skipping
    /// claimed ranges implicitly (their prices are injected, which is fine
    /// as a base too).
    fn price_before(&self, second: u32) -> i64 {
        self.trades
            .range((Bound::Unbounded, Bound::Excluded(second)))
            .next_back()
            .and_then(|(_, points)| points.last())
            .map(|p| p.ticks)
            .unwrap_or(10_000)
    }
}

/// Near-equal partition of `total` into `parts` nonnegative summands,
/// larger ones first.
fn step_partition(total: i64, parts: usize) -> Vec<i64> {
    debug_assert!(total >= 0 && parts > 0);
    let base = total / parts as i64;
    let rem = (total % parts as i64) as usize;
    (0..parts).map(|i| if i < rem { base + 1 } else { base }).collect()
}

/// Exhaustive check whether any window over the given core trades
/// satisfies the criterion; also reports whether the window starting at the
/// first trade does. Times and prices are the realized values.
fn scan_core_windows(times: &[f64], prices: &[f64], direction: Direction, criterion: &UeeCriterion) -> (bool, bool) {
    let n = times.len();
    let mut any = false;
    let mut from_zero = false;
    for i in 0..n {
        for j in (i + 1)..n {
            if times[j] - times[i] > criterion.max_duration {
                break;
            }
            if times[j] - times[j - 1] >= criterion.pause_threshold {
                break;
            }
            if j - i + 1 < criterion.min_trades {
                continue;
            }
            let monotone = prices[i..=j].windows(2).all(|w| match direction {
                Direction::Crash => w[1] <= w[0],
                Direction::Spike => w[1] >= w[0],
            });
            if !monotone {
                continue;
            }
            let rel = relative_change(prices[i], prices[j]);
            let ok = match direction {
                Direction::Crash => rel <= -criterion.min_relative_change,
                Direction::Spike => rel >= criterion.min_relative_change,
            };
            if ok {
                any = true;
                if i == 0 {
                    from_zero = true;
                }
            }
        }
    }
    (any, from_zero)
}

const PATH_TRADES_PER_SECOND: u32 = 5;

/// Apply one injection to the stream. Returns the injection's ordinal; the
/// resolved ground-truth entry appears at that position in
/// [`SyntheticStream::materialize`]'s output.
pub fn inject_uee(stream: &mut SyntheticStream, spec: &InjectionSpec) -> Result<usize, SynthError> {
    let criterion = stream.criterion;
    let grid = stream.grid;
    let invalid = |msg: &str| SynthError::InvalidSpec(msg.to_string());

    if spec.core_layout.is_empty() || spec.core_layout.iter().any(|&m| m < 2) {
        return Err(invalid("core layout needs at least two trades per second"));
    }
    if spec.anchor_second < stream.first_second + 2 {
        return Err(invalid("anchor too close to stream start"));
    }
    // Path pacing guarantees no qualifying window can live inside the
    // recovery path: min_trades - 2 path gaps must already exceed
    // max_duration.
    if (criterion.min_trades as f64 - 2.0) / PATH_TRADES_PER_SECOND as f64 <= criterion.max_duration {
        return Err(invalid("path pacing too dense for this criterion"));
    }
    let n: usize = spec.core_layout.iter().map(|&m| m as usize).sum();
    match spec.kind {
        InjectionKind::Qualifying | InjectionKind::NearMissChange | InjectionKind::NearMissDuration => {
            if n < criterion.min_trades {
                return Err(invalid("layout holds fewer than min_trades trades"));
            }
        }
        InjectionKind::NearMissCount => {
            if n >= criterion.min_trades {
                return Err(invalid("count near-miss must stay below min_trades"));
            }
        }
    }
    if !spec.kind.is_qualifying() && !spec.eta_path.is_empty() {
        return Err(invalid("near-misses take no recovery path"));
    }
    match spec.end_design {
        EndDesign::Reversal if spec.kind.is_qualifying() && spec.eta_path.is_empty() => {
            return Err(invalid("reversal design needs a recovery path"));
        }
        EndDesign::StreamEnd if !spec.eta_path.is_empty() => {
            return Err(invalid("stream-end design takes no recovery path"));
        }
        _ => {}
    }
    if !(spec.change > 0.0) {
        return Err(invalid("change must be positive"));
    }

    let dir_sign: i64 = match spec.direction {
        Direction::Crash => -1,
        Direction::Spike => 1,
    };
    let start_ticks = stream.price_before(spec.anchor_second - 1);

    // Realized core times from the layout.
    let core_seconds: Vec<(u32, u32)> = spec
        .core_layout
        .iter()
        .enumerate()
        .map(|(i, &m)| (spec.anchor_second + i as u32, m))
        .collect();
    let mut times = Vec::with_capacity(n);
    for &(s, m) in &core_seconds {
        for k in 0..m as usize {
            times.push(subsecond_time(s, k, m as usize));
        }
    }

    // Tick deltas tuned until the realized f64 changes match the design.
    let mut delta = ((spec.change * start_ticks as f64).round() as i64).max(1);
    let mut prices_ticks: Vec<i64> = Vec::new();
    let mut settled = false;
    for _ in 0..512 {
        let steps = step_partition(delta, n - 1);
        let mut ticks = Vec::with_capacity(n);
        let mut p = start_ticks;
        ticks.push(p);
        for st in &steps {
            p += dir_sign * st;
            ticks.push(p);
        }
        if ticks.iter().any(|&t| t <= 0) {
            return Err(invalid("injection would push the price to zero"));
        }
        let prices: Vec<f64> = ticks.iter().map(|&t| grid.value(t)).collect();
        let (any, from_zero) = scan_core_windows(&times, &prices, spec.direction, &criterion);
        match spec.kind {
            InjectionKind::Qualifying => {
                if from_zero {
                    prices_ticks = ticks;
                    settled = true;
                    break;
                }
                delta += 1;
            }
            InjectionKind::NearMissChange => {
                if !any {
                    prices_ticks = ticks;
                    settled = true;
                    break;
                }
                if delta == 1 {
                    return Err(invalid("cannot realize a sub-threshold change"));
                }
                delta -= 1;
            }
            InjectionKind::NearMissCount | InjectionKind::NearMissDuration => {
                if any {
                    return Err(invalid("near-miss layout qualifies structurally"));
                }
                prices_ticks = ticks;
                settled = true;
                break;
            }
        }
    }
    if !settled {
        return Err(invalid("could not realize the designed change on the grid"));
    }
    let extreme_ticks = *prices_ticks.last().expect("nonempty core");

    // Recovery path on the grid.
    let height = extreme_ticks - start_ticks;
    let mut eta_ticks = Vec::with_capacity(spec.eta_path.len());
    for &eta in &spec.eta_path {
        let ticks = extreme_ticks - (eta * height as f64).round() as i64;
        if ticks <= 0 {
            return Err(invalid("recovery path would push the price to zero"));
        }
        eta_ticks.push(ticks);
    }
    if spec.end_design == EndDesign::Reversal {
        let reverses = match spec.direction {
            Direction::Crash => eta_ticks.first().is_some_and(|&t| t > extreme_ticks),
            Direction::Spike => eta_ticks.first().is_some_and(|&t| t < extreme_ticks),
        };
        if spec.kind.is_qualifying() && !reverses {
            return Err(invalid("reversal design needs eta_1 to move off the extremum"));
        }
    }

    // Seconds occupied by the injection.
    let extremum_second = core_seconds.last().expect("nonempty layout").0;
    let guard_second = spec.anchor_second - 1;
    let path_secs = (eta_ticks.len() as u32).div_ceil(PATH_TRADES_PER_SECOND);
    let path_start = match spec.end_design {
        EndDesign::Reversal => extremum_second + 1,
        EndDesign::Pause => extremum_second + 2,
        EndDesign::StreamEnd => extremum_second + 1, // unused
    };
    let claim_hi = match spec.end_design {
        EndDesign::StreamEnd => stream.last_second(),
        EndDesign::Pause if eta_ticks.is_empty() => extremum_second + 1,
        _ => path_start + path_secs, // settle second included
    };
    if spec.end_design != EndDesign::StreamEnd && claim_hi >= stream.last_second() {
        return Err(invalid("injection does not fit before the stream end"));
    }
    stream.claim(guard_second, claim_hi)?;

    // Overwrite the claimed seconds: first wipe, then lay out the pieces.
    let wipe: Vec<u32> = stream
        .trades
        .range(guard_second..=claim_hi)
        .map(|(&s, _)| s)
        .collect();
    for s in wipe {
        stream.trades.remove(&s);
        stream.quotes.remove(&s);
    }
    if spec.end_design == EndDesign::StreamEnd {
        let tail: Vec<u32> = stream.trades.range((Bound::Excluded(extremum_second), Bound::Unbounded)).map(|(&s, _)| s).collect();
        for s in tail {
            stream.trades.remove(&s);
            stream.quotes.remove(&s);
        }
    }

    let guard_ticks = start_ticks + dir_sign; // one tick on the far side of the start
    if guard_ticks <= 0 {
        return Err(invalid("guard price would be nonpositive"));
    }
    stream.trades.insert(
        guard_second,
        vec![TradePoint { ticks: guard_ticks, size: 100 }, TradePoint { ticks: guard_ticks, size: 100 }],
    );

    let mut cursor = 0usize;
    for &(s, m) in &core_seconds {
        let points: Vec<TradePoint> = prices_ticks[cursor..cursor + m as usize]
            .iter()
            .map(|&t| TradePoint { ticks: t, size: 200 })
            .collect();
        stream.trades.insert(s, points);
        cursor += m as usize;
    }

    if spec.end_design != EndDesign::StreamEnd && !eta_ticks.is_empty() {
        let mut sec = path_start;
        for chunk in eta_ticks.chunks(PATH_TRADES_PER_SECOND as usize) {
            stream
                .trades
                .insert(sec, chunk.iter().map(|&t| TradePoint { ticks: t, size: 100 }).collect());
            let hs = stream.half_spread_ticks;
            let mid = *chunk.last().expect("nonempty chunk");
            stream
                .quotes
                .insert(sec, vec![QuotePoint { bid: (mid - hs).max(1), ask: mid + hs }]);
            sec += 1;
        }
        // Settle zigzag so no monotone run can continue into the
        // background.
        let last = *eta_ticks.last().expect("nonempty path");
        stream.trades.insert(
            sec,
            vec![TradePoint { ticks: last + 1, size: 100 }, TradePoint { ticks: (last - 1).max(1), size: 100 }],
        );
    }

    // Quotes: a standing guard quote plus the profiled in-window sequence.
    let hs = stream.half_spread_ticks;
    let side_base = match spec.direction {
        Direction::Crash => start_ticks - hs,
        Direction::Spike => start_ticks + hs,
    };
    if side_base <= 0 {
        return Err(invalid("quote base would be nonpositive"));
    }
    stream.quotes.insert(guard_second, vec![quote_point(spec.direction, side_base, hs)]);
    let quote_values = match spec.quote_profile {
        None => None,
        Some(profile) => {
            let mut values = vec![side_base];
            match profile {
                QuoteProfile::SingleStep { jump } => {
                    let sign_ok = match spec.direction {
                        Direction::Crash => jump < 0.0,
                        Direction::Spike => jump > 0.0,
                    };
                    if !sign_ok {
                        return Err(invalid("quote jump sign must match the event direction"));
                    }
                    let stepped = side_base + (jump * side_base as f64).round() as i64;
                    if stepped <= 0 {
                        return Err(invalid("quote jump would cross zero"));
                    }
                    values.push(stepped);
                    values.push(stepped);
                }
                QuoteProfile::UniformSteps { steps } => {
                    if steps == 0 {
                        return Err(invalid("uniform quote profile needs at least one step"));
                    }
                    let total = dir_sign * ((spec.change * side_base as f64).round() as i64).max(1);
                    let parts = step_partition(total.abs(), steps as usize);
                    let mut level = side_base;
                    for part in parts {
                        level += dir_sign * part;
                        if level <= 0 {
                            return Err(invalid("quote path would cross zero"));
                        }
                        values.push(level);
                    }
                }
            }
            let capacity: usize = core_seconds.iter().map(|&(_, m)| m as usize).sum();
            if values.len() > capacity {
                return Err(invalid("more quote updates than core trades"));
            }
            // Distribute over core seconds, at most one quote per trade so
            // every update stays inside the event window.
            let mut remaining = values.as_slice();
            for &(s, m) in &core_seconds {
                if remaining.is_empty() {
                    break;
                }
                let take = remaining.len().min(m as usize);
                let qpoints: Vec<QuotePoint> = remaining[..take]
                    .iter()
                    .map(|&v| quote_point(spec.direction, v, hs))
                    .collect();
                stream.quotes.insert(s, qpoints);
                remaining = &remaining[take..];
            }
            Some(values)
        }
    };

    let expected_trigger = match spec.end_design {
        EndDesign::Reversal => EndTrigger::TrendReversal,
        EndDesign::Pause => EndTrigger::TradingPause,
        EndDesign::StreamEnd => EndTrigger::StreamEnd,
    };
    stream.injections.push(PendingInjection {
        kind: spec.kind,
        direction: spec.direction,
        core: core_seconds,
        expected_trigger,
        start_ticks,
        extreme_ticks,
        eta_ticks,
        quote_values,
    });
    Ok(stream.injections.len() - 1)
}

fn quote_point(direction: Direction, side_value: i64, half_spread: i64) -> QuotePoint {
    match direction {
        Direction::Crash => QuotePoint { bid: side_value, ask: side_value + 2 * half_spread },
        Direction::Spike => QuotePoint { bid: (side_value - 2 * half_spread).max(1), ask: side_value },
    }
}

impl SyntheticStream {
    /// Resolve the stream into pipeline-ready ticks plus ground truth with
    /// exact global indices.
    pub fn materialize(&self) -> MaterializedStream {
        let mut trades = Vec::new();
        let mut first_index: BTreeMap<u32, usize> = BTreeMap::new();
        for (&second, points) in &self.trades {
            first_index.insert(second, trades.len());
            let m = points.len();
            for (k, p) in points.iter().enumerate() {
                trades.push(TradeTick {
                    second,
                    seq: trades.len() as u32,
                    t: subsecond_time(second, k, m),
                    price: self.grid.value(p.ticks),
                    size: p.size,
                });
            }
        }
        let mut quotes = Vec::new();
        for (&second, points) in &self.quotes {
            let m = points.len();
            for (k, q) in points.iter().enumerate() {
                let bid = self.grid.value(q.bid);
                let ask = self.grid.value(q.ask);
                quotes.push(QuoteTick {
                    second,
                    seq: quotes.len() as u32,
                    t: subsecond_time(second, k, m),
                    bid,
                    ask,
                    crossed: bid >= ask,
                });
            }
        }

        let ground_truth = self
            .injections
            .iter()
            .map(|inj| {
                let (first_sec, first_m) = inj.core[0];
                let (last_sec, last_m) = *inj.core.last().expect("nonempty core");
                let start_index = first_index[&first_sec];
                let end_index = first_index[&last_sec] + last_m as usize - 1;
                let price_start = self.grid.value(inj.start_ticks);
                let price_extreme = self.grid.value(inj.extreme_ticks);
                let expected = inj.kind.is_qualifying().then(|| ExpectedEvent {
                    start_index,
                    end_index,
                    t0_uee: subsecond_time(first_sec, 0, first_m as usize),
                    t0_rec: subsecond_time(last_sec, last_m as usize - 1, last_m as usize),
                    price_start,
                    price_extreme,
                    size: relative_change(price_start, price_extreme),
                    end_trigger: inj.expected_trigger,
                });
                let eta: Vec<f64> = inj
                    .eta_ticks
                    .iter()
                    .map(|&t| (price_extreme - self.grid.value(t)) / (price_extreme - price_start))
                    .collect();
                let max_jump = inj.quote_values.as_ref().map(|values| {
                    let mut extreme: Option<f64> = None;
                    for w in values.windows(2) {
                        let jump = relative_change(self.grid.value(w[0]), self.grid.value(w[1]));
                        let better = match (inj.direction, extreme) {
                            (_, None) => true,
                            (Direction::Crash, Some(e)) => jump < e,
                            (Direction::Spike, Some(e)) => jump > e,
                        };
                        if better {
                            extreme = Some(jump);
                        }
                    }
                    extreme.expect("profile has at least two values")
                });
                let regime =
                    max_jump.map(|j| classify_trigger(inj.direction, j, &JumpThresholds::default()));
                GroundTruthEntry {
                    key: self.key.clone(),
                    kind: inj.kind,
                    direction: inj.direction,
                    window: (start_index, end_index),
                    expected,
                    eta,
                    max_jump,
                    regime,
                }
            })
            .collect();

        MaterializedStream { key: self.key.clone(), decimals: self.grid.decimals, trades, quotes, ground_truth }
    }

    /// Materialize and check the stream against the brute-force oracle: the
    /// oracle must find exactly the designed qualifying events and nothing
    /// else.
    pub fn verify(&self) -> Result<MaterializedStream, SynthError> {
        let m = self.materialize();
        let found = oracle_detect(&self.key, &m.trades, &self.criterion);
        let mut expected: Vec<(&GroundTruthEntry, &ExpectedEvent)> = m
            .ground_truth
            .iter()
            .filter_map(|g| g.expected.as_ref().map(|e| (g, e)))
            .collect();
        expected.sort_by_key(|(_, e)| e.start_index);
        if found.len() != expected.len() {
            return Err(SynthError::GroundTruthMismatch(format!(
                "oracle found {} events, designed {}",
                found.len(),
                expected.len()
            )));
        }
        for (event, (g, e)) in found.iter().zip(&expected) {
            let matches = event.direction == g.direction
                && event.start_index == e.start_index
                && event.end_index == e.end_index
                && event.t0_uee == e.t0_uee
                && event.t0_rec == e.t0_rec
                && event.price_start == e.price_start
                && event.price_extreme == e.price_extreme
                && event.size == e.size
                && event.end_trigger == e.end_trigger;
            if !matches {
                return Err(SynthError::GroundTruthMismatch(format!(
                    "event at index {} deviates from its design",
                    e.start_index
                )));
            }
        }
        Ok(m)
    }
}

/// Event-free background stream: generated, oracle-checked, and re-drawn
/// with a derived seed until clean.
pub fn generate_background(
    key: StreamKey,
    cfg: &BackgroundConfig,
    criterion: &UeeCriterion,
) -> Result<SyntheticStream, SynthError> {
    for retry in 0..=cfg.max_retries {
        let mut attempt_cfg = *cfg;
        attempt_cfg.seed = if retry == 0 { cfg.seed } else { mix_seed(cfg.seed, retry as u64) };
        let stream = SyntheticStream::background(key.clone(), &attempt_cfg, criterion);
        let m = stream.materialize();
        if oracle_detect(&key, &m.trades, criterion).is_empty() {
            return Ok(stream);
        }
    }
    Err(SynthError::EventfulBackground { retries: cfg.max_retries })
}

/// Exhaustive reference detector: scans all trade-index pairs for
/// qualifying windows, merges them into maximal runs via the same
/// termination rules, and claims indices left to right. Quadratic by
/// design; correctness over speed.
pub fn oracle_detect(key: &StreamKey, ticks: &[TradeTick], criterion: &UeeCriterion) -> Vec<UeeEvent> {
    let n = ticks.len();
    let mut events = Vec::new();
    let mut claim_from = 0usize;

    let step_ok = |direction: Direction, prev: f64, next: f64| match direction {
        Direction::Crash => next <= prev,
        Direction::Spike => next >= prev,
    };
    let window_monotone = |i: usize, j: usize, direction: Direction| {
        (i..j).all(|k| step_ok(direction, ticks[k].price, ticks[k + 1].price))
    };

    'outer: loop {
        for i in claim_from..n.saturating_sub(1) {
            let mut j = i + 1;
            while j < n {
                if ticks[j].t - ticks[i].t > criterion.max_duration {
                    break;
                }
                if ticks[j].t - ticks[j - 1].t >= criterion.pause_threshold {
                    break;
                }
                if j - i + 1 >= criterion.min_trades {
                    for direction in [Direction::Crash, Direction::Spike] {
                        let rel = (ticks[j].price - ticks[i].price) / ticks[i].price;
                        let qualifies = match direction {
                            Direction::Crash => rel <= -criterion.min_relative_change,
                            Direction::Spike => rel >= criterion.min_relative_change,
                        };
                        if qualifies && window_monotone(i, j, direction) {
                            let mut end = j;
                            while end + 1 < n
                                && ticks[end + 1].t - ticks[end].t < criterion.pause_threshold
                                && step_ok(direction, ticks[end].price, ticks[end + 1].price)
                            {
                                end += 1;
                            }
                            let end_trigger = if end + 1 >= n {
                                EndTrigger::StreamEnd
                            } else if ticks[end + 1].t - ticks[end].t >= criterion.pause_threshold {
                                EndTrigger::TradingPause
                            } else {
                                EndTrigger::TrendReversal
                            };
                            events.push(UeeEvent {
                                key: key.clone(),
                                direction,
                                start_index: i,
                                end_index: end,
                                t0_uee: ticks[i].t,
                                t0_rec: ticks[end].t,
                                price_start: ticks[i].price,
                                price_extreme: ticks[end].price,
                                size: (ticks[end].price - ticks[i].price) / ticks[i].price,
                                end_trigger,
                            });
                            claim_from = end + 1;
                            continue 'outer;
                        }
                    }
                }
                j += 1;
            }
        }
        break;
    }
    events
}

/// Multi-stream fixture parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureConfig {
    pub seed: u64,
    pub n_streams: usize,
    pub qualifying_per_stream: usize,
    pub near_misses_per_stream: usize,
    /// Length of designed recovery paths; 0 disables them.
    pub eta_path_len: usize,
    pub n_days: u32,
    pub base_day: NaiveDate,
    pub criterion: UeeCriterion,
    pub background: BackgroundConfig,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_streams: 8,
            qualifying_per_stream: 4,
            near_misses_per_stream: 2,
            eta_path_len: 20,
            n_days: 1,
            base_day: NaiveDate::from_ymd_opt(2008, 10, 6).expect("valid date"),
            criterion: UeeCriterion::default(),
            background: BackgroundConfig::default(),
        }
    }
}

const VENUES: [&str; 4] = ["N", "P", "Q", "Z"];
const SECTOR_NAMES: [&str; 5] = ["Financials", "Energy", "Information Technology", "Utilities", "Materials"];

/// Key of the idx-th fixture stream.
pub fn fixture_key(cfg: &FixtureConfig, idx: usize) -> StreamKey {
    let day = cfg.base_day + chrono::Days::new((idx as u64) % cfg.n_days.max(1) as u64);
    StreamKey::new(format!("SYN{idx:03}"), VENUES[idx % VENUES.len()], day)
}

/// Sector map for a fixture: all symbols but the last stream's, plus a few
/// mapped companies that never trade (their zero counts matter for the
/// sector standard deviation).
pub fn fixture_sector_map(cfg: &FixtureConfig) -> crate::stats::SectorMap {
    let mut map = crate::stats::SectorMap::new();
    for idx in 0..cfg.n_streams.saturating_sub(1) {
        map.insert(format!("SYN{idx:03}"), SECTOR_NAMES[idx % SECTOR_NAMES.len()]);
    }
    for k in 0..3 {
        map.insert(format!("IDLE{k:02}"), SECTOR_NAMES[k % SECTOR_NAMES.len()]);
    }
    map
}

/// Build the idx-th stream of a fixture: background plus randomized
/// injections, verified against the oracle. Redraws the background on
/// interaction, never the injection designs.
pub fn generate_stream_fixture(cfg: &FixtureConfig, idx: usize) -> Result<MaterializedStream, SynthError> {
    let key = fixture_key(cfg, idx);
    let specs = fixture_specs(cfg, idx)?;
    let mut last_err = SynthError::EventfulBackground { retries: cfg.background.max_retries };
    for retry in 0..=cfg.background.max_retries {
        let mut bg_cfg = cfg.background;
        bg_cfg.seed = mix_seed(cfg.seed, (idx as u64) << 20 | retry as u64);
        let mut stream = SyntheticStream::background(key.clone(), &bg_cfg, &cfg.criterion);
        for spec in &specs {
            inject_uee(&mut stream, spec)?;
        }
        match stream.verify() {
            Ok(m) => return Ok(m),
            Err(SynthError::GroundTruthMismatch(msg)) => {
                last_err = SynthError::GroundTruthMismatch(msg);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err)
}

/// Deterministic injection designs for one stream; independent of
/// background retries.
fn fixture_specs(cfg: &FixtureConfig, idx: usize) -> Result<Vec<InjectionSpec>, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x494E_4A00 ^ idx as u64));
    let criterion = &cfg.criterion;
    let theta = criterion.min_relative_change;
    let m = criterion.min_trades as u32;

    let avg_tps = (cfg.background.trades_per_second.0 + cfg.background.trades_per_second.1).max(2) / 2;
    let stream_seconds = (cfg.background.n_trades as u32 / avg_tps.max(1)).max(10);
    let path_secs = (cfg.eta_path_len as u32).div_ceil(PATH_TRADES_PER_SECOND);
    let spacing = 10 + path_secs;
    let slots = cfg.qualifying_per_stream + cfg.near_misses_per_stream;
    let needed = 6 + slots as u32 * spacing + 8;
    if needed > stream_seconds {
        return Err(SynthError::InvalidSpec(format!(
            "{slots} injections need {needed} seconds, stream has {stream_seconds}"
        )));
    }

    let single_layouts: [&[u32]; 5] = [&[m + 1], &[m], &[m + 2], &[m + 3], &[m + 4]];
    let mut specs = Vec::with_capacity(slots);
    let with_stream_end = idx % 4 == 3 && cfg.qualifying_per_stream > 0;

    for slot in 0..cfg.qualifying_per_stream {
        let anchor = cfg.background.start_second + 6 + (slot as u32) * spacing;
        let direction = if rng.gen_bool(0.5) { Direction::Crash } else { Direction::Spike };
        let two_second = slot % 5 == 4;
        let (core_layout, change): (Vec<u32>, f64) = if two_second {
            (vec![m - 2, m - 2], theta * (1.45 + rng.gen_range(0.0..0.6)))
        } else {
            (
                single_layouts[rng.gen_range(0..single_layouts.len())].to_vec(),
                theta * (1.07 + rng.gen_range(0.0..1.0)),
            )
        };
        let is_last = slot + 1 == cfg.qualifying_per_stream;
        let end_design = if with_stream_end && is_last {
            EndDesign::StreamEnd
        } else if slot % 3 == 1 {
            EndDesign::Pause
        } else {
            EndDesign::Reversal
        };
        let eta_path = if end_design == EndDesign::StreamEnd || cfg.eta_path_len == 0 {
            Vec::new()
        } else {
            let mut path = Vec::with_capacity(cfg.eta_path_len);
            path.push((10 + rng.gen_range(0..=120)) as f64 / 100.0); // 0.10 ..= 1.30
            for _ in 1..cfg.eta_path_len {
                path.push(rng.gen_range(-30..=160) as f64 / 100.0);
            }
            path
        };
        let eta_path = if end_design == EndDesign::Reversal && eta_path.is_empty() {
            vec![0.25, 0.5, 0.75]
        } else {
            eta_path
        };
        let dir_sign = if direction == Direction::Crash { -1.0 } else { 1.0 };
        let quote_profile = match slot % 4 {
            0 => Some(QuoteProfile::SingleStep { jump: dir_sign * change }),
            1 => Some(QuoteProfile::SingleStep { jump: dir_sign * 0.006 }),
            2 => Some(QuoteProfile::UniformSteps { steps: m }),
            _ => None,
        };
        // Stream-end injections sit at the tail instead of their slot.
        let anchor = if end_design == EndDesign::StreamEnd {
            cfg.background.start_second + stream_seconds - core_layout.len() as u32 - 4
        } else {
            anchor
        };
        specs.push(InjectionSpec {
            anchor_second: anchor,
            direction,
            kind: InjectionKind::Qualifying,
            change,
            core_layout,
            end_design,
            eta_path,
            quote_profile,
        });
    }

    for slot in 0..cfg.near_misses_per_stream {
        let anchor =
            cfg.background.start_second + 6 + ((cfg.qualifying_per_stream + slot) as u32) * spacing;
        let direction = if rng.gen_bool(0.5) { Direction::Crash } else { Direction::Spike };
        let (kind, core_layout, change) = match slot % 3 {
            0 => (InjectionKind::NearMissCount, vec![m - 1], theta * 1.12),
            1 => (InjectionKind::NearMissChange, vec![m + 1], theta * 0.9875),
            _ => (InjectionKind::NearMissDuration, vec![m - 3, 3], theta * 1.06),
        };
        specs.push(InjectionSpec {
            anchor_second: anchor,
            direction,
            kind,
            change,
            core_layout,
            end_design: EndDesign::Pause,
            eta_path: Vec::new(),
            quote_profile: None,
        });
    }
    Ok(specs)
}

/// A complete multi-stream fixture.
#[derive(Debug, Clone)]
pub struct FixtureBundle {
    pub streams: Vec<MaterializedStream>,
    pub sector_map: crate::stats::SectorMap,
}

impl FixtureBundle {
    pub fn trade_streams(&self) -> BTreeMap<StreamKey, Vec<TradeTick>> {
        self.streams.iter().map(|s| (s.key.clone(), s.trades.clone())).collect()
    }

    pub fn quote_streams(&self) -> BTreeMap<StreamKey, Vec<QuoteTick>> {
        self.streams.iter().map(|s| (s.key.clone(), s.quotes.clone())).collect()
    }

    pub fn ground_truth(&self) -> impl Iterator<Item = &GroundTruthEntry> {
        self.streams.iter().flat_map(|s| s.ground_truth.iter())
    }
}

/// Generate every stream of a fixture. Streams are independent and built in
/// parallel when the `parallel` feature is on; the result order is by
/// stream index either way.
pub fn generate_fixture(cfg: &FixtureConfig) -> Result<FixtureBundle, SynthError> {
    #[cfg(feature = "parallel")]
    let streams: Result<Vec<MaterializedStream>, SynthError> = {
        use rayon::prelude::*;
        (0..cfg.n_streams).into_par_iter().map(|idx| generate_stream_fixture(cfg, idx)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let streams: Result<Vec<MaterializedStream>, SynthError> =
        (0..cfg.n_streams).map(|idx| generate_stream_fixture(cfg, idx)).collect();
    Ok(FixtureBundle { streams: streams?, sector_map: fixture_sector_map(cfg) })
}
