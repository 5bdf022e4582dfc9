//! Trigger-mechanism analysis: the largest single jump of the event-relevant
//! best-quote side during an event, and the regime it implies.
//!
//! A crash is driven by the best bid, a spike by the best ask. One large
//! jump points to a single big market order sweeping the book; many small
//! jumps point to incremental order flow.

use std::collections::BTreeMap;

use crate::detector::{relative_change, Direction, UeeEvent};
use crate::error::{InvalidParameter, QuoteCoverageError};
use crate::types::{QuoteTick, StreamKey};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Jump-size thresholds separating the trigger regimes. Defaults: 0.5%
/// for a major single order, 0.8% for one order large enough to satisfy the
/// event criterion on its own.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpThresholds {
    pub major: f64,
    pub dominant: f64,
}

impl Default for JumpThresholds {
    fn default() -> Self {
        Self { major: 0.005, dominant: 0.008 }
    }
}

impl JumpThresholds {
    pub fn validate(&self) -> Result<(), InvalidParameter> {
        if !(self.major > 0.0 && self.dominant > 0.0) {
            return Err(InvalidParameter("jump thresholds must be positive".into()));
        }
        if self.major > self.dominant {
            return Err(InvalidParameter("major threshold must not exceed dominant threshold".into()));
        }
        Ok(())
    }
}

/// Trigger regime of one event, from its largest quote jump.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TriggerRegime {
    /// One jump at least as large as the event criterion itself.
    SingleOrderDominant,
    /// One jump of at least the major threshold but below dominant.
    SingleOrderMajor,
    /// Only small jumps; the move was built incrementally.
    Incremental,
}

impl TriggerRegime {
    pub fn as_str(&self) -> &'static str {
        match self {
            TriggerRegime::SingleOrderDominant => "single_order_dominant",
            TriggerRegime::SingleOrderMajor => "single_order_major",
            TriggerRegime::Incremental => "incremental",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "single_order_dominant" => Some(TriggerRegime::SingleOrderDominant),
            "single_order_major" => Some(TriggerRegime::SingleOrderMajor),
            "incremental" => Some(TriggerRegime::Incremental),
            _ => None,
        }
    }
}

/// One classified event.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerClassification {
    pub event_id: usize,
    pub key: StreamKey,
    pub direction: Direction,
    pub max_jump: f64,
    pub regime: TriggerRegime,
}

/// The largest relative jump of the event-relevant quote side inside
/// `[t0_uee, t0_rec]`, signed in the event's direction. The quote standing
/// at `t0_uee` (last update at or before it) opens the sequence so the first
/// in-event change is measurable. Relative jumps use the pre-step quote as
/// base.
pub fn max_quote_jump(quotes: &[QuoteTick], event: &UeeEvent) -> Result<f64, QuoteCoverageError> {
    let side = |q: &QuoteTick| match event.direction {
        Direction::Crash => q.bid,
        Direction::Spike => q.ask,
    };

    // First index with t > t0_uee; the standing quote, if any, sits right
    // before it.
    let upper = quotes.partition_point(|q| q.t <= event.t0_uee);
    let start = upper.saturating_sub(1);
    let mut values: Vec<f64> = Vec::new();
    if upper > 0 {
        values.push(side(&quotes[start]));
    }
    for q in &quotes[upper..] {
        if q.t > event.t0_rec {
            break;
        }
        values.push(side(q));
    }
    if values.len() < 2 {
        return Err(QuoteCoverageError::InsufficientQuotes { found: values.len() });
    }

    let mut extreme: Option<f64> = None;
    for w in values.windows(2) {
        let jump = relative_change(w[0], w[1]);
        let more_extreme = match (event.direction, extreme) {
            (_, None) => true,
            (Direction::Crash, Some(e)) => jump < e,
            (Direction::Spike, Some(e)) => jump > e,
        };
        if more_extreme {
            extreme = Some(jump);
        }
    }
    Ok(extreme.expect("at least one consecutive pair"))
}

/// Map a signed jump to its regime. Boundaries are inclusive (`>=`), in the
/// event's direction.
pub fn classify_trigger(direction: Direction, max_jump: f64, thresholds: &JumpThresholds) -> TriggerRegime {
    let magnitude = match direction {
        Direction::Crash => -max_jump,
        Direction::Spike => max_jump,
    };
    if magnitude >= thresholds.dominant {
        TriggerRegime::SingleOrderDominant
    } else if magnitude >= thresholds.major {
        TriggerRegime::SingleOrderMajor
    } else {
        TriggerRegime::Incremental
    }
}

/// Why an event was left out of the mechanism statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedEvent {
    pub event_id: usize,
    pub reason: QuoteCoverageError,
}

/// Classification results plus coverage accounting, so regime percentages
/// keep honest denominators.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismOutcome {
    pub classifications: Vec<TriggerClassification>,
    pub skipped: Vec<SkippedEvent>,
}

/// Classify every event against its stream's quotes. Events without a quote
/// stream or with fewer than two in-window updates are reported in
/// `skipped`, not dropped silently.
pub fn classify_events(
    events: &[UeeEvent],
    quote_streams: &BTreeMap<StreamKey, Vec<QuoteTick>>,
    thresholds: &JumpThresholds,
) -> MechanismOutcome {
    let classify_one = |(event_id, event): (usize, &UeeEvent)| -> Result<TriggerClassification, SkippedEvent> {
        let Some(quotes) = quote_streams.get(&event.key) else {
            return Err(SkippedEvent { event_id, reason: QuoteCoverageError::MissingStream });
        };
        match max_quote_jump(quotes, event) {
            Ok(max_jump) => Ok(TriggerClassification {
                event_id,
                key: event.key.clone(),
                direction: event.direction,
                max_jump,
                regime: classify_trigger(event.direction, max_jump, thresholds),
            }),
            Err(reason) => Err(SkippedEvent { event_id, reason }),
        }
    };

    #[cfg(feature = "parallel")]
    let results: Vec<Result<TriggerClassification, SkippedEvent>> =
        events.par_iter().enumerate().map(classify_one).collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<TriggerClassification, SkippedEvent>> =
        events.iter().enumerate().map(classify_one).collect();

    let mut out = MechanismOutcome { classifications: Vec::new(), skipped: Vec::new() };
    for r in results {
        match r {
            Ok(c) => out.classifications.push(c),
            Err(s) => out.skipped.push(s),
        }
    }
    out
}

/// Regime counts and shares for one direction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegimeShares {
    pub dominant: usize,
    pub major: usize,
    pub incremental: usize,
}

impl RegimeShares {
    pub fn total(&self) -> usize {
        self.dominant + self.major + self.incremental
    }

    pub fn share(&self, regime: TriggerRegime) -> f64 {
        let n = match regime {
            TriggerRegime::SingleOrderDominant => self.dominant,
            TriggerRegime::SingleOrderMajor => self.major,
            TriggerRegime::Incremental => self.incremental,
        };
        n as f64 / self.total() as f64
    }

    /// Share of events with a jump of at least the major threshold
    /// (major + dominant combined).
    pub fn at_least_major_share(&self) -> f64 {
        (self.dominant + self.major) as f64 / self.total() as f64
    }
}

/// Histogram of |max_jump| per direction, with regime shares alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismHistogram {
    pub bin_width: f64,
    /// bin index b covers [b*w, (b+1)*w) over |max_jump|.
    pub crash_bins: BTreeMap<i64, u64>,
    pub spike_bins: BTreeMap<i64, u64>,
    pub crash_regimes: RegimeShares,
    pub spike_regimes: RegimeShares,
}

pub fn mechanism_histogram(classifications: &[TriggerClassification], bin_width: f64) -> MechanismHistogram {
    let mut h = MechanismHistogram {
        bin_width,
        crash_bins: BTreeMap::new(),
        spike_bins: BTreeMap::new(),
        crash_regimes: RegimeShares::default(),
        spike_regimes: RegimeShares::default(),
    };
    for c in classifications {
        let bin = (c.max_jump.abs() / bin_width).floor() as i64;
        let (bins, regimes) = match c.direction {
            Direction::Crash => (&mut h.crash_bins, &mut h.crash_regimes),
            Direction::Spike => (&mut h.spike_bins, &mut h.spike_regimes),
        };
        *bins.entry(bin).or_insert(0) += 1;
        match c.regime {
            TriggerRegime::SingleOrderDominant => regimes.dominant += 1,
            TriggerRegime::SingleOrderMajor => regimes.major += 1,
            TriggerRegime::Incremental => regimes.incremental += 1,
        }
    }
    h
}
