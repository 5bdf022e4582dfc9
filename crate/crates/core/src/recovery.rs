//! Post-event price recovery: the rate
//! `eta_n = (S(rec) - S(n)) / (S(rec) - S(start))` over the trades following
//! each event's extremum, plus probability curves and level densities
//! derived from it. `eta = 0` means the price stayed at the extremum,
//! `eta = 1` full recovery; overshoots make it leave [0, 1].

use std::collections::BTreeMap;

use crate::detector::{Direction, UeeEvent};
use crate::error::InvalidParameter;
use crate::types::{StreamKey, TradeTick};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Default number of post-event trades to follow.
pub const DEFAULT_RECOVERY_TRADES: usize = 100;

/// Default probability-curve thresholds.
pub const DEFAULT_UPPER_ETA: f64 = 0.8;
pub const DEFAULT_LOWER_ETA: f64 = 0.2;

/// Recovery rates for one event. `etas[k]` is `eta_{k+1}`; the vector is
/// truncated at the number of trades actually available in the stream.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryProfile {
    pub event_id: usize,
    pub key: StreamKey,
    pub direction: Direction,
    pub n_requested: usize,
    pub etas: Vec<f64>,
}

impl RecoveryProfile {
    /// Number of post-event trades present (`<= n_requested`).
    pub fn available(&self) -> usize {
        self.etas.len()
    }

    pub fn eta(&self, n: usize) -> Option<f64> {
        if n == 0 {
            return None;
        }
        self.etas.get(n - 1).copied()
    }
}

/// Recovery rates over the `n` trades following `event` in its own stream.
/// Trade `n` is the n-th trade strictly after the extremum; day boundaries
/// truncate the profile (`available < n`). Zero post-event trades yield an
/// empty profile, which aggregate curves skip at every `n`.
pub fn recovery_profile(ticks: &[TradeTick], event: &UeeEvent, event_id: usize, n: usize) -> RecoveryProfile {
    let base = event.price_extreme - event.price_start;
    debug_assert!(base != 0.0, "event size is bounded away from zero by the criterion");
    let first = event.end_index + 1;
    let last = (event.end_index + n).min(ticks.len().saturating_sub(1));
    let mut etas = Vec::new();
    if first < ticks.len() {
        etas.reserve(last + 1 - first);
        for tick in &ticks[first..=last] {
            etas.push((event.price_extreme - tick.price) / base);
        }
    }
    RecoveryProfile {
        event_id,
        key: event.key.clone(),
        direction: event.direction,
        n_requested: n,
        etas,
    }
}

/// Profiles for every event, resolved against their streams. Events whose
/// stream is missing are skipped and reported by id.
pub fn recovery_profiles(
    events: &[UeeEvent],
    streams: &BTreeMap<StreamKey, Vec<TradeTick>>,
    n: usize,
) -> (Vec<RecoveryProfile>, Vec<usize>) {
    let one = |(event_id, event): (usize, &UeeEvent)| -> Result<RecoveryProfile, usize> {
        match streams.get(&event.key) {
            Some(ticks) => Ok(recovery_profile(ticks, event, event_id, n)),
            None => Err(event_id),
        }
    };
    #[cfg(feature = "parallel")]
    let results: Vec<Result<RecoveryProfile, usize>> = events.par_iter().enumerate().map(one).collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<RecoveryProfile, usize>> = events.iter().enumerate().map(one).collect();

    let mut profiles = Vec::new();
    let mut missing = Vec::new();
    for r in results {
        match r {
            Ok(p) => profiles.push(p),
            Err(id) => missing.push(id),
        }
    }
    (profiles, missing)
}

/// One point of the probability curves. `None` where no profile reaches that
/// `n` (undefined, emitted as a missing value).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub n: usize,
    pub crash_up: Option<f64>,
    pub crash_down: Option<f64>,
    pub spike_up: Option<f64>,
    pub spike_down: Option<f64>,
    pub crash_support: usize,
    pub spike_support: usize,
}

/// Probability curves `P(eta_n >= upper)` and `P(eta_n <= lower)` for
/// `n = 1..=n_max`, computed separately for crashes and spikes. Each `n`
/// uses its own denominator: the profiles with at least `n` post-event
/// trades, so short profiles near the day close do not distort later points.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryCurves {
    pub upper: f64,
    pub lower: f64,
    pub points: Vec<CurvePoint>,
}

pub fn recovery_probabilities(
    profiles: &[RecoveryProfile],
    upper: f64,
    lower: f64,
    n_max: usize,
) -> Result<RecoveryCurves, InvalidParameter> {
    if !(lower <= upper) {
        return Err(InvalidParameter("lower eta threshold above upper".into()));
    }
    let mut points = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let mut counts = [(0usize, 0usize, 0usize); 2]; // (support, up, down) per direction
        for p in profiles {
            let Some(eta) = p.eta(n) else { continue };
            let slot = match p.direction {
                Direction::Crash => &mut counts[0],
                Direction::Spike => &mut counts[1],
            };
            slot.0 += 1;
            if eta >= upper {
                slot.1 += 1;
            }
            if eta <= lower {
                slot.2 += 1;
            }
        }
        let share = |support: usize, k: usize| {
            if support == 0 { None } else { Some(k as f64 / support as f64) }
        };
        points.push(CurvePoint {
            n,
            crash_up: share(counts[0].0, counts[0].1),
            crash_down: share(counts[0].0, counts[0].2),
            spike_up: share(counts[1].0, counts[1].1),
            spike_down: share(counts[1].0, counts[1].2),
            crash_support: counts[0].0,
            spike_support: counts[1].0,
        });
    }
    Ok(RecoveryCurves { upper, lower, points })
}

/// Uniform eta binning for the level density: bin `b` covers
/// `[lo + b*width, lo + (b+1)*width)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaBins {
    pub lo: f64,
    pub width: f64,
    pub count: usize,
}

impl Default for EtaBins {
    fn default() -> Self {
        // Covers eta in [-1, 3).
        Self { lo: -1.0, width: 0.05, count: 80 }
    }
}

impl EtaBins {
    pub fn validate(&self) -> Result<(), InvalidParameter> {
        if !(self.width > 0.0) || self.count == 0 {
            return Err(InvalidParameter("eta bins need positive width and count".into()));
        }
        Ok(())
    }

    pub fn index(&self, eta: f64) -> Option<usize> {
        let b = ((eta - self.lo) / self.width).floor();
        if b < 0.0 || b >= self.count as f64 {
            None
        } else {
            Some(b as usize)
        }
    }

    pub fn edges(&self, b: usize) -> (f64, f64) {
        (self.lo + b as f64 * self.width, self.lo + (b + 1) as f64 * self.width)
    }
}

/// 2-D histogram of profiles over (n, eta bin), per direction. Values
/// outside the binned range are tallied in `out_of_range`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelDensity {
    pub bins: EtaBins,
    pub n_max: usize,
    /// `crash[n-1][bin]`.
    pub crash: Vec<Vec<u64>>,
    pub spike: Vec<Vec<u64>>,
    pub out_of_range: u64,
}

pub fn recovery_level_density(
    profiles: &[RecoveryProfile],
    bins: &EtaBins,
    n_max: usize,
) -> Result<LevelDensity, InvalidParameter> {
    bins.validate()?;
    let mut density = LevelDensity {
        bins: *bins,
        n_max,
        crash: vec![vec![0; bins.count]; n_max],
        spike: vec![vec![0; bins.count]; n_max],
        out_of_range: 0,
    };
    for p in profiles {
        let grid = match p.direction {
            Direction::Crash => &mut density.crash,
            Direction::Spike => &mut density.spike,
        };
        for (k, &eta) in p.etas.iter().take(n_max).enumerate() {
            match bins.index(eta) {
                Some(b) => grid[k][b] += 1,
                None => density.out_of_range += 1,
            }
        }
    }
    Ok(density)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::EndTrigger;
    use chrono::NaiveDate;

    fn key() -> StreamKey {
        StreamKey::new("TST", "Q", NaiveDate::from_ymd_opt(2008, 10, 6).unwrap())
    }

    fn ticks(prices: &[f64]) -> Vec<TradeTick> {
        prices
            .iter()
            .enumerate()
            .map(|(i, &p)| TradeTick { second: i as u32, seq: i as u32, t: i as f64 * 0.1, price: p, size: 1 })
            .collect()
    }

    fn crash(end_index: usize, price_start: f64, price_extreme: f64) -> UeeEvent {
        UeeEvent {
            key: key(),
            direction: Direction::Crash,
            start_index: 0,
            end_index,
            t0_uee: 0.0,
            t0_rec: end_index as f64 * 0.1,
            price_start,
            price_extreme,
            size: (price_extreme - price_start) / price_start,
            end_trigger: EndTrigger::TrendReversal,
        }
    }

    #[test]
    fn full_recovery_after_one_trade() {
        let stream = ticks(&[100.0, 99.0, 100.0]);
        let p = recovery_profile(&stream, &crash(1, 100.0, 99.0), 0, 100);
        assert_eq!(p.available(), 1);
        assert_eq!(p.eta(1), Some(1.0));
    }

    #[test]
    fn no_recovery_after_one_trade() {
        let stream = ticks(&[100.0, 99.0, 99.0]);
        let p = recovery_profile(&stream, &crash(1, 100.0, 99.0), 0, 100);
        assert_eq!(p.eta(1), Some(0.0));
    }

    #[test]
    fn overshoot_gives_eta_above_one() {
        let stream = ticks(&[100.0, 99.0, 100.5]);
        let p = recovery_profile(&stream, &crash(1, 100.0, 99.0), 0, 100);
        assert_eq!(p.eta(1), Some(1.5));
    }

    #[test]
    fn spike_recovery_is_sign_symmetric() {
        let stream = ticks(&[100.0, 101.0, 100.0]);
        let mut e = crash(1, 100.0, 101.0);
        e.direction = Direction::Spike;
        e.size = 0.01;
        let p = recovery_profile(&stream, &e, 0, 100);
        assert_eq!(p.eta(1), Some(1.0));
    }

    #[test]
    fn profile_truncates_at_stream_end() {
        let stream = ticks(&[100.0, 99.0, 99.5, 99.8]);
        let p = recovery_profile(&stream, &crash(1, 100.0, 99.0), 0, 100);
        assert_eq!(p.available(), 2);
        assert_eq!(p.n_requested, 100);
        let empty = recovery_profile(&ticks(&[100.0, 99.0]), &crash(1, 100.0, 99.0), 0, 100);
        assert_eq!(empty.available(), 0);
        assert_eq!(empty.eta(1), None);
    }

    #[test]
    fn eta_depends_only_on_three_prices() {
        let a = ticks(&[100.0, 99.0, 99.5, 98.0, 97.0]);
        let b = ticks(&[100.0, 99.0, 99.5, 55.5, 1400.0]);
        let e = crash(1, 100.0, 99.0);
        let pa = recovery_profile(&a, &e, 0, 1);
        let pb = recovery_profile(&b, &e, 0, 1);
        assert_eq!(pa.eta(1), pb.eta(1));
    }

    fn profile(direction: Direction, etas: &[f64]) -> RecoveryProfile {
        RecoveryProfile { event_id: 0, key: key(), direction, n_requested: 100, etas: etas.to_vec() }
    }

    #[test]
    fn probability_curves_count_directly() {
        let profiles = vec![
            profile(Direction::Crash, &[1.0]),
            profile(Direction::Crash, &[0.0]),
            profile(Direction::Crash, &[0.5]),
            profile(Direction::Crash, &[0.9]),
        ];
        let curves = recovery_probabilities(&profiles, 0.8, 0.2, 2).unwrap();
        let p1 = curves.points[0];
        assert_eq!(p1.crash_up, Some(0.5));
        assert_eq!(p1.crash_down, Some(0.25));
        assert_eq!(p1.crash_support, 4);
        assert_eq!(p1.spike_up, None);
        // n = 2 has no support at all.
        let p2 = curves.points[1];
        assert_eq!(p2.crash_up, None);
        assert_eq!(p2.crash_support, 0);
    }

    #[test]
    fn fully_recovered_profiles_saturate_curves() {
        let profiles: Vec<_> = (0..5).map(|_| profile(Direction::Spike, &[1.0, 1.2, 1.0])).collect();
        let curves = recovery_probabilities(&profiles, 0.8, 0.2, 3).unwrap();
        for pt in &curves.points {
            assert_eq!(pt.spike_up, Some(1.0));
            assert_eq!(pt.spike_down, Some(0.0));
        }
    }

    #[test]
    fn up_mid_down_partition_sums_to_one() {
        let profiles = vec![
            profile(Direction::Crash, &[1.0, 0.3]),
            profile(Direction::Crash, &[0.1, 0.5]),
            profile(Direction::Crash, &[0.85, -0.2]),
            profile(Direction::Crash, &[0.2, 2.0]),
        ];
        let curves = recovery_probabilities(&profiles, 0.8, 0.2, 2).unwrap();
        for (i, pt) in curves.points.iter().enumerate() {
            let n = i + 1;
            let mid = profiles
                .iter()
                .filter_map(|p| p.eta(n))
                .filter(|&e| e > 0.2 && e < 0.8)
                .count() as f64
                / pt.crash_support as f64;
            let total = pt.crash_up.unwrap() + mid + pt.crash_down.unwrap();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn level_density_single_profile() {
        let bins = EtaBins { lo: 0.95, width: 0.1, count: 1 };
        let profiles = vec![profile(Direction::Crash, &[1.0])];
        let d = recovery_level_density(&profiles, &bins, 1).unwrap();
        assert_eq!(d.crash[0][0], 1);
        assert_eq!(d.out_of_range, 0);
    }

    #[test]
    fn level_density_identical_profiles_stack() {
        let bins = EtaBins::default();
        let profiles: Vec<_> = (0..7).map(|_| profile(Direction::Spike, &[0.5, 1.0])).collect();
        let d = recovery_level_density(&profiles, &bins, 2).unwrap();
        let b1 = bins.index(0.5).unwrap();
        let b2 = bins.index(1.0).unwrap();
        assert_eq!(d.spike[0][b1], 7);
        assert_eq!(d.spike[1][b2], 7);
    }

    #[test]
    fn level_density_counts_out_of_range() {
        let bins = EtaBins { lo: 0.0, width: 0.1, count: 10 };
        let profiles = vec![profile(Direction::Crash, &[5.0])];
        let d = recovery_level_density(&profiles, &bins, 1).unwrap();
        assert_eq!(d.out_of_range, 1);
    }
}
