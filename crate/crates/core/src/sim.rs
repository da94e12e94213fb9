//! Deterministic discrete-event engine.
//!
//! Time is kept in picoseconds so that DDR4 sub-nanosecond beats and
//! 100 µs flash programs share one integer clock. Events are dispatched in
//! strict `(fire_at, sequence)` order; `sequence` is assigned when the
//! event is scheduled, so same-instant events fire in schedule order.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A point (or span) on the simulated clock, in picoseconds.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_ps(ps: u64) -> Self {
        SimTime(ps)
    }

    pub const fn from_ns(ns: u64) -> Self {
        SimTime(ns * 1_000)
    }

    pub const fn from_us(us: u64) -> Self {
        SimTime(us * 1_000_000)
    }

    /// Rounds to the nearest picosecond.
    pub fn from_ns_f64(ns: f64) -> Self {
        assert!(ns.is_finite() && ns >= 0.0, "negative or non-finite duration");
        SimTime((ns * 1_000.0).round() as u64)
    }

    pub fn from_us_f64(us: f64) -> Self {
        Self::from_ns_f64(us * 1_000.0)
    }

    pub const fn as_ps(self) -> u64 {
        self.0
    }

    pub fn as_ns_f64(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub fn as_us_f64(self) -> f64 {
        self.0 as f64 / 1_000_000.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e12
    }

    pub fn checked_add(self, rhs: SimTime) -> Option<SimTime> {
        self.0.checked_add(rhs.0).map(SimTime)
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }

    pub fn max(self, other: SimTime) -> SimTime {
        if self >= other {
            self
        } else {
            other
        }
    }
}

impl Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        self.checked_add(rhs).expect("simulated clock overflow")
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        *self = *self + rhs;
    }
}

impl Sub for SimTime {
    type Output = SimTime;

    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(
            self.0
                .checked_sub(rhs.0)
                .expect("negative simulated duration"),
        )
    }
}

impl std::iter::Sum for SimTime {
    fn sum<I: Iterator<Item = SimTime>>(iter: I) -> SimTime {
        iter.fold(SimTime::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ps", self.0)
    }
}

/// Which model an event is addressed to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeviceId {
    Driver,
    Controller,
    NvmeEngine,
    Flash,
    Interconnect,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("event scheduled at {at} but the clock is already at {now}")]
    SchedulingInPast { at: SimTime, now: SimTime },
    #[error("simulated clock would overflow")]
    ClockOverflow,
}

/// A timestamped event. `sequence` breaks ties between equal `fire_at`.
#[derive(Clone, Debug)]
pub struct SimEvent<P> {
    pub fire_at: SimTime,
    pub target: DeviceId,
    pub payload: P,
    pub sequence: u64,
}

/// Opaque handle returned by [`EventQueue::schedule`], usable for cancellation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

struct Queued<P>(SimEvent<P>);

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.0.sequence == other.0.sequence
    }
}

impl<P> Eq for Queued<P> {}

impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Queued<P> {
    // BinaryHeap is a max-heap; invert to pop the smallest key first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.fire_at, other.0.sequence).cmp(&(self.0.fire_at, self.0.sequence))
    }
}

/// Binary-heap event queue with lazy cancellation.
pub struct EventQueue<P> {
    heap: BinaryHeap<Queued<P>>,
    cancelled: HashSet<u64>,
    now: SimTime,
    next_sequence: u64,
    dispatched: u64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
            now: SimTime::ZERO,
            next_sequence: 0,
            dispatched: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of events dispatched so far.
    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn len(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn schedule(
        &mut self,
        fire_at: SimTime,
        target: DeviceId,
        payload: P,
    ) -> Result<EventHandle, SimError> {
        if fire_at < self.now {
            return Err(SimError::SchedulingInPast {
                at: fire_at,
                now: self.now,
            });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Queued(SimEvent {
            fire_at,
            target,
            payload,
            sequence,
        }));
        Ok(EventHandle(sequence))
    }

    pub fn schedule_in(
        &mut self,
        delay: SimTime,
        target: DeviceId,
        payload: P,
    ) -> Result<EventHandle, SimError> {
        let at = self.now.checked_add(delay).ok_or(SimError::ClockOverflow)?;
        self.schedule(at, target, payload)
    }

    /// Returns false if the event already fired or was already cancelled.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        let live = self.heap.iter().any(|q| q.0.sequence == handle.0);
        live && self.cancelled.insert(handle.0)
    }

    fn skip_cancelled(&mut self) {
        while let Some(top) = self.heap.peek() {
            let seq = top.0.sequence;
            if self.cancelled.remove(&seq) {
                self.heap.pop();
            } else {
                break;
            }
        }
    }

    pub fn peek_time(&mut self) -> Option<SimTime> {
        self.skip_cancelled();
        self.heap.peek().map(|q| q.0.fire_at)
    }

    /// Pops the next event if it fires at or before `limit`, advancing the clock.
    pub fn pop_until(&mut self, limit: SimTime) -> Option<SimEvent<P>> {
        self.skip_cancelled();
        match self.heap.peek() {
            Some(top) if top.0.fire_at <= limit => {
                let ev = self.heap.pop().expect("peeked").0;
                debug_assert!(ev.fire_at >= self.now);
                self.now = ev.fire_at;
                self.dispatched += 1;
                Some(ev)
            }
            _ => None,
        }
    }

    /// Dispatches every event with `fire_at <= limit` and returns the final clock.
    ///
    /// Events scheduled by the handler are eligible in the same call.
    pub fn run_until<F>(&mut self, limit: SimTime, mut handler: F) -> SimTime
    where
        F: FnMut(&mut Self, SimEvent<P>),
    {
        while let Some(ev) = self.pop_until(limit) {
            handler(self, ev);
        }
        if limit != SimTime::MAX && limit > self.now {
            self.now = limit;
        }
        self.now
    }

    /// Drops every pending event (used when a power failure halts the system).
    pub fn clear(&mut self) {
        self.heap.clear();
        self.cancelled.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drain(q: &mut EventQueue<u32>, limit: SimTime) -> Vec<u32> {
        let mut out = Vec::new();
        q.run_until(limit, |_, ev| out.push(ev.payload));
        out
    }

    #[test]
    fn same_instant_precedes_next_instant() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_ps(1), DeviceId::Driver, 1).unwrap();
        q.schedule(SimTime::from_ps(0), DeviceId::Driver, 0).unwrap();
        assert_eq!(drain(&mut q, SimTime::from_ps(10)), vec![0, 1]);
    }

    #[test]
    fn ties_fire_in_schedule_order() {
        let mut q = EventQueue::new();
        for i in 0..5 {
            q.schedule(SimTime::from_ps(7), DeviceId::Flash, i).unwrap();
        }
        assert_eq!(drain(&mut q, SimTime::MAX), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn cancelled_event_never_fires() {
        let mut q = EventQueue::new();
        let h = q.schedule(SimTime::from_ps(3), DeviceId::Flash, 3).unwrap();
        q.schedule(SimTime::from_ps(4), DeviceId::Flash, 4).unwrap();
        assert!(q.cancel(h));
        assert!(!q.cancel(h));
        assert_eq!(q.len(), 1);
        assert_eq!(drain(&mut q, SimTime::MAX), vec![4]);
    }

    #[test]
    fn empty_run_advances_clock_to_limit() {
        let mut q: EventQueue<u32> = EventQueue::new();
        let end = q.run_until(SimTime::from_ps(100), |_, _| panic!("no events"));
        assert_eq!(end, SimTime::from_ps(100));
        assert_eq!(q.dispatched(), 0);
    }

    #[test]
    fn out_of_order_schedule_dispatches_sorted() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_ps(5), DeviceId::Driver, 5).unwrap();
        q.schedule(SimTime::from_ps(3), DeviceId::Driver, 3).unwrap();
        assert_eq!(drain(&mut q, SimTime::MAX), vec![3, 5]);
    }

    #[test]
    fn scheduling_in_the_past_is_rejected() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_ps(10), DeviceId::Driver, 0).unwrap();
        drain(&mut q, SimTime::from_ps(10));
        let err = q.schedule(SimTime::from_ps(9), DeviceId::Driver, 1).unwrap_err();
        assert_eq!(
            err,
            SimError::SchedulingInPast {
                at: SimTime::from_ps(9),
                now: SimTime::from_ps(10)
            }
        );
    }

    #[test]
    fn handler_may_schedule_follow_ups() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::ZERO, DeviceId::Driver, 0u32).unwrap();
        let mut seen = Vec::new();
        q.run_until(SimTime::from_ps(50), |q, ev| {
            seen.push((ev.fire_at.as_ps(), ev.payload));
            if ev.payload < 3 {
                q.schedule_in(SimTime::from_ps(10), DeviceId::Driver, ev.payload + 1)
                    .unwrap();
            }
        });
        assert_eq!(seen, vec![(0, 0), (10, 1), (20, 2), (30, 3)]);
    }

    #[test]
    fn overflow_is_guarded() {
        let mut q: EventQueue<()> = EventQueue::new();
        q.schedule(SimTime::MAX, DeviceId::Driver, ()).unwrap();
        q.pop_until(SimTime::MAX).unwrap();
        assert_eq!(
            q.schedule_in(SimTime::from_ps(1), DeviceId::Driver, ()),
            Err(SimError::ClockOverflow)
        );
    }
}
