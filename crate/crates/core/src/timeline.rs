//! Occupancy timeline for a single exclusive resource (bus, channel, die).
//!
//! Reservations never overlap. A new reservation takes the earliest gap that
//! starts no earlier than the requested instant and is long enough.

use std::collections::BTreeMap;

use crate::sim::SimTime;

/// One recorded busy interval, `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Occupancy {
    pub start: SimTime,
    pub end: SimTime,
    pub owner: u32,
}

#[derive(Clone, Debug, Default)]
pub struct Timeline {
    busy: BTreeMap<SimTime, (SimTime, u32)>,
    audit: Option<Vec<Occupancy>>,
    busy_total: SimTime,
}

impl Timeline {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keeps a full history of reservations for later inspection.
    pub fn with_audit() -> Self {
        Timeline {
            audit: Some(Vec::new()),
            ..Self::default()
        }
    }

    pub fn enable_audit(&mut self) {
        if self.audit.is_none() {
            self.audit = Some(Vec::new());
        }
    }

    pub fn audit_log(&self) -> &[Occupancy] {
        self.audit.as_deref().unwrap_or(&[])
    }

    /// Sum of all reserved durations.
    pub fn busy_total(&self) -> SimTime {
        self.busy_total
    }

    pub fn earliest_fit(&self, earliest: SimTime, dur: SimTime) -> SimTime {
        if dur == SimTime::ZERO {
            return earliest;
        }
        let mut t = earliest;
        if let Some((_, &(end, _))) = self.busy.range(..=t).next_back() {
            if end > t {
                t = end;
            }
        }
        for (&start, &(end, _)) in self.busy.range(t..) {
            if start >= t + dur {
                break;
            }
            t = t.max(end);
        }
        t
    }

    pub fn is_free(&self, start: SimTime, end: SimTime) -> bool {
        if end <= start {
            return true;
        }
        match self.busy.range(..end).next_back() {
            Some((_, &(e, _))) => e <= start,
            None => true,
        }
    }

    /// End of the first busy interval overlapping `[start, end)`, if any.
    pub fn first_conflict_end(&self, start: SimTime, end: SimTime) -> Option<SimTime> {
        if let Some((_, &(e, _))) = self.busy.range(..=start).next_back() {
            if e > start {
                return Some(e);
            }
        }
        self.busy
            .range(start..end)
            .next()
            .map(|(_, &(e, _))| e)
    }

    /// Reserves `dur` at the earliest fitting instant `>= earliest`.
    pub fn reserve(&mut self, earliest: SimTime, dur: SimTime, owner: u32) -> (SimTime, SimTime) {
        let start = self.earliest_fit(earliest, dur);
        self.insert(start, dur, owner);
        (start, start + dur)
    }

    /// Reserves exactly `[start, start + dur)`; panics if that overlaps.
    pub fn reserve_exact(&mut self, start: SimTime, dur: SimTime, owner: u32) {
        assert!(
            self.is_free(start, start + dur),
            "overlapping reservation at {start}"
        );
        self.insert(start, dur, owner);
    }

    fn insert(&mut self, start: SimTime, dur: SimTime, owner: u32) {
        if dur == SimTime::ZERO {
            return;
        }
        let end = start + dur;
        self.busy.insert(start, (end, owner));
        self.busy_total += dur;
        if let Some(log) = self.audit.as_mut() {
            log.push(Occupancy { start, end, owner });
        }
    }

    /// Forgets intervals that end at or before `horizon`.
    pub fn prune(&mut self, horizon: SimTime) {
        let keep = self.busy.split_off(&horizon);
        let mut old = std::mem::replace(&mut self.busy, keep);
        // an interval starting before the horizon may still be live
        if let Some((&s, &(e, o))) = old.iter().next_back() {
            if e > horizon {
                self.busy.insert(s, (e, o));
            }
        }
        old.clear();
    }

    /// Whether the resource is occupied at instant `t`.
    pub fn busy_at(&self, t: SimTime) -> Option<Occupancy> {
        self.busy
            .range(..=t)
            .next_back()
            .filter(|(_, &(e, _))| e > t)
            .map(|(&s, &(e, o))| Occupancy {
                start: s,
                end: e,
                owner: o,
            })
    }
}

/// True when no two intervals in `log` overlap.
pub fn non_overlapping(log: &[Occupancy]) -> bool {
    let mut v: Vec<_> = log.to_vec();
    v.sort_by_key(|o| o.start);
    v.windows(2).all(|w| w[0].end <= w[1].start)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(ps: u64) -> SimTime {
        SimTime::from_ps(ps)
    }

    #[test]
    fn fills_gaps_before_later_reservations() {
        let mut tl = Timeline::new();
        tl.reserve_exact(t(10), t(10), 0);
        assert_eq!(tl.reserve(t(0), t(5), 1), (t(0), t(5)));
        // the 5..10 gap is big enough
        assert_eq!(tl.reserve(t(5), t(5), 1), (t(5), t(10)));
        // nothing fits before 20 anymore
        assert_eq!(tl.reserve(t(0), t(1), 1), (t(20), t(21)));
    }

    #[test]
    fn conflict_detection() {
        let mut tl = Timeline::new();
        tl.reserve_exact(t(10), t(10), 0);
        assert!(tl.is_free(t(0), t(10)));
        assert!(!tl.is_free(t(5), t(11)));
        assert!(tl.is_free(t(20), t(30)));
        assert_eq!(tl.first_conflict_end(t(0), t(15)), Some(t(20)));
        assert_eq!(tl.first_conflict_end(t(12), t(13)), Some(t(20)));
        assert_eq!(tl.first_conflict_end(t(20), t(25)), None);
    }

    #[test]
    fn prune_keeps_live_intervals() {
        let mut tl = Timeline::new();
        tl.reserve_exact(t(0), t(10), 0);
        tl.reserve_exact(t(10), t(10), 0);
        tl.prune(t(15));
        assert!(!tl.is_free(t(15), t(16)));
        assert!(tl.is_free(t(0), t(10)));
    }

    #[test]
    fn zero_length_is_free() {
        let mut tl = Timeline::new();
        tl.reserve_exact(t(0), t(10), 0);
        assert_eq!(tl.reserve(t(3), SimTime::ZERO, 0), (t(3), t(3)));
    }
}
