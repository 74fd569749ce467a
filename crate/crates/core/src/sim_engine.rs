//! Discrete-event kernel: simulation clock, event calendar and seeded
//! random-variate streams.
//!
//! Events are dispatched in `(fire_at, sequence)` order, so events scheduled
//! for the same instant fire in the order they were scheduled.
//!
//! Uniform variates come from PCG-XSL-RR 128/64 (`rand_pcg::Pcg64`). Each
//! stream is sub-seeded from the master seed and its stream id through
//! SplitMix64, so interarrival and service draws never share state.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use rand::Rng;
use rand_pcg::Pcg64;

use crate::ConfigError;

/// Name of the uniform generator, echoed into every output file.
pub const GENERATOR_NAME: &str = "pcg64 (PCG-XSL-RR 128/64, rand_pcg 0.3) sub-seeded by splitmix64";

/// Simulated time in seconds.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct SimTime(pub f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);

    pub fn seconds(self) -> f64 {
        self.0
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Arrival,
    ServiceCompletion,
    MeasurementTick,
    ControlTick,
    EndOfRun,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEvent {
    pub fire_at: SimTime,
    pub kind: EventKind,
    /// Request identifier for request-scoped events, interval index for ticks.
    pub payload: Option<u64>,
}

impl SimEvent {
    pub fn new(fire_at: f64, kind: EventKind) -> Self {
        SimEvent {
            fire_at: SimTime(fire_at),
            kind,
            payload: None,
        }
    }

    pub fn with_payload(mut self, payload: u64) -> Self {
        self.payload = Some(payload);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum ScheduleError {
    #[error("event {kind:?} scheduled at {fire_at} but the clock is already at {now}")]
    InThePast {
        kind: EventKind,
        fire_at: SimTime,
        now: SimTime,
    },
    #[error("event {kind:?} has a non-finite fire time")]
    NotFinite { kind: EventKind },
}

struct Entry {
    event: SimEvent,
    seq: u64,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // Reversed: BinaryHeap is a max-heap and we want the earliest event on top.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .event
            .fire_at
            .0
            .total_cmp(&self.event.fire_at.0)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Future-event list plus the simulation clock.
#[derive(Default)]
pub struct EventCalendar {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Entry>,
    dispatched: u64,
}

impl EventCalendar {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Number of events handed out so far.
    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn try_schedule(&mut self, event: SimEvent) -> Result<(), ScheduleError> {
        if !event.fire_at.0.is_finite() {
            return Err(ScheduleError::NotFinite { kind: event.kind });
        }
        if event.fire_at.0 < self.now.0 {
            return Err(ScheduleError::InThePast {
                kind: event.kind,
                fire_at: event.fire_at,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { event, seq });
        Ok(())
    }

    /// Schedules `event`.
    ///
    /// Panics if the event lies before the current clock: that is a bug in
    /// the caller, not a recoverable condition.
    pub fn schedule(&mut self, event: SimEvent) {
        if let Err(e) = self.try_schedule(event) {
            panic!("{e}");
        }
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.event.fire_at)
    }

    /// Pops the next event if it fires no later than `end`, advancing the clock.
    pub fn pop_until(&mut self, end: SimTime) -> Option<SimEvent> {
        match self.heap.peek() {
            Some(e) if e.event.fire_at.0 <= end.0 => {
                let entry = self.heap.pop().expect("peeked");
                self.now = entry.event.fire_at;
                self.dispatched += 1;
                Some(entry.event)
            }
            _ => None,
        }
    }

    /// Dispatches every event with `fire_at <= end` to `handler`, then leaves
    /// the clock at exactly `end`. Events the handler schedules inside the
    /// horizon are dispatched in the same call.
    pub fn run_until<F>(&mut self, end: SimTime, mut handler: F)
    where
        F: FnMut(&mut EventCalendar, SimEvent),
    {
        assert!(
            end.0 >= self.now.0,
            "run_until({end}) called with clock at {}",
            self.now
        );
        while let Some(ev) = self.pop_until(end) {
            handler(self, ev);
        }
        self.now = end;
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const INTERARRIVAL_STREAM: u32 = 0;
pub const SERVICE_STREAM: u32 = 1;

/// A reproducible source of uniform and exponential variates.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u32,
    rng: Pcg64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u32) -> Self {
        let state = splitmix64(seed ^ splitmix64(u64::from(stream_id).wrapping_add(1)));
        let increment = splitmix64(state);
        let state128 = (u128::from(state) << 64) | u128::from(splitmix64(state ^ 0xA5A5_A5A5));
        // Distinct increments select distinct PCG sequences.
        let stream128 = (u128::from(increment) << 64) | u128::from(stream_id);
        RngStream {
            seed,
            stream_id,
            rng: Pcg64::new(state128, stream128),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u32 {
        self.stream_id
    }

    /// Uniform on (0, 1].
    pub fn uniform(&mut self) -> f64 {
        1.0 - self.rng.gen::<f64>()
    }

    pub fn exponential(&mut self, mean: f64) -> f64 {
        let u = self.uniform();
        exponential_from_uniform(mean, u)
    }
}

/// Inverse-transform exponential variate `mean * -ln(u)` for `u` in (0, 1].
pub fn exponential_from_uniform(mean: f64, u: f64) -> f64 {
    debug_assert!(u > 0.0 && u <= 1.0, "uniform {u} outside (0, 1]");
    let x = -mean * u.ln();
    // u == 1 gives exactly zero; the smallest positive value keeps the
    // variate strictly positive.
    if x > 0.0 {
        x
    } else {
        f64::MIN_POSITIVE
    }
}

/// Draws one exponential variate, rejecting a non-positive mean.
pub fn sample_exponential(stream: &mut RngStream, mean: f64) -> Result<f64, ConfigError> {
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(ConfigError::NonPositive {
            name: "exponential mean",
            value: mean,
        });
    }
    Ok(stream.exponential(mean))
}
