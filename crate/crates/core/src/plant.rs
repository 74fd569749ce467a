//! The controlled system.
//!
//! [`PlantState`] is the admission-controlled pool: at most `max_requests`
//! requests are in service at once and everything else waits in one
//! unbounded FIFO queue. [`WorkerPool`] drives it from the event calendar
//! with exponential interarrival and service times, i.e. an M/M/c queue with
//! `c = max_requests`. [`ArxPlant`] is the linear first-order stand-in used to
//! exercise controllers without a queue.
//!
//! Response time is the time a request waits in the queue; service time is
//! not included.

use std::collections::VecDeque;

use crate::sim_engine::{
    EventCalendar, EventKind, RngStream, SimEvent, SimTime, INTERARRIVAL_STREAM, SERVICE_STREAM,
};
use crate::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkloadConfig {
    pub mean_interarrival: f64,
    pub mean_service: f64,
}

impl Default for WorkloadConfig {
    /// 300 requests per minute, one minute of service each.
    fn default() -> Self {
        WorkloadConfig {
            mean_interarrival: 0.2,
            mean_service: 60.0,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, value) in [
            ("mean_interarrival", self.mean_interarrival),
            ("mean_service", self.mean_service),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConfigError::NonPositive { name, value });
            }
        }
        Ok(())
    }

    /// Mean number of busy workers an unlimited pool would need (λ/μ).
    pub fn offered_load(&self) -> f64 {
        self.mean_service / self.mean_interarrival
    }
}

/// One request entering service.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceEntry {
    pub id: u64,
    pub arrival: f64,
    pub entered: f64,
}

impl ServiceEntry {
    pub fn wait(&self) -> f64 {
        self.entered - self.arrival
    }
}

/// One measurement-interval record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalSample {
    /// Interval index, starting at 1.
    pub k: u32,
    pub window_end: SimTime,
    /// `max_requests` in force during the interval.
    pub applied_max_requests: u32,
    pub mean_response: f64,
    /// Service entries inside the sampling window; 0 means `mean_response`
    /// was held from the previous interval.
    pub n_observed: u64,
    /// reference - mean_response.
    pub error: f64,
}

#[derive(Debug, Clone)]
pub struct PlantState {
    pending: VecDeque<(u64, f64)>,
    busy: u32,
    max_requests: u32,
    next_id: u64,
    recent_entries: Vec<ServiceEntry>,
    held_response: Option<f64>,
    arrivals: u64,
    completions: u64,
    entered: u64,
    wait_sum: f64,
}

impl PlantState {
    pub fn new(max_requests: u32) -> Self {
        assert!(max_requests > 0, "max_requests must be positive");
        PlantState {
            pending: VecDeque::new(),
            busy: 0,
            max_requests,
            next_id: 0,
            recent_entries: Vec::new(),
            held_response: None,
            arrivals: 0,
            completions: 0,
            entered: 0,
            wait_sum: 0.0,
        }
    }

    pub fn max_requests(&self) -> u32 {
        self.max_requests
    }

    /// Changes the pool size. Shrinking never preempts: surplus in-service
    /// requests finish normally and no new request starts until `busy`
    /// falls below the new cap.
    pub fn set_max_requests(&mut self, max_requests: u32) {
        assert!(max_requests > 0, "max_requests must be positive");
        self.max_requests = max_requests;
    }

    pub fn busy_workers(&self) -> u32 {
        self.busy
    }

    pub fn queue_len(&self) -> usize {
        self.pending.len()
    }

    pub fn arrivals(&self) -> u64 {
        self.arrivals
    }

    pub fn completions(&self) -> u64 {
        self.completions
    }

    /// Requests that have entered service so far.
    pub fn entered(&self) -> u64 {
        self.entered
    }

    /// Mean queue wait over every request that has entered service.
    pub fn mean_wait(&self) -> Option<f64> {
        (self.entered > 0).then(|| self.wait_sum / self.entered as f64)
    }

    /// Appends a new request to the back of the queue and returns its id.
    pub fn enqueue(&mut self, now: f64) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.arrivals += 1;
        self.pending.push_back((id, now));
        id
    }

    /// Moves queued requests into service while a worker is free.
    pub fn dispatch_if_free(&mut self, now: f64) -> Vec<ServiceEntry> {
        let mut started = Vec::new();
        while self.busy < self.max_requests {
            let Some((id, arrival)) = self.pending.pop_front() else {
                break;
            };
            let entry = ServiceEntry {
                id,
                arrival,
                entered: now,
            };
            self.busy += 1;
            self.entered += 1;
            self.wait_sum += entry.wait();
            self.recent_entries.push(entry);
            started.push(entry);
        }
        started
    }

    pub fn complete(&mut self) {
        assert!(self.busy > 0, "completion with no request in service");
        self.busy -= 1;
        self.completions += 1;
    }

    /// Averages the waits of requests that entered service in
    /// `[window.0, window.1)`. An empty window repeats the previous
    /// interval's value (the reference before any measurement exists).
    pub fn sample_window(
        &mut self,
        k: u32,
        reference: f64,
        window: (SimTime, SimTime),
    ) -> IntervalSample {
        let (start, end) = (window.0 .0, window.1 .0);
        let (sum, n) = self
            .recent_entries
            .iter()
            .filter(|e| e.entered >= start && e.entered < end)
            .fold((0.0, 0u64), |(s, n), e| (s + e.wait(), n + 1));
        let mean_response = if n > 0 {
            sum / n as f64
        } else {
            self.held_response.unwrap_or(reference)
        };
        self.held_response = Some(mean_response);
        self.recent_entries.retain(|e| e.entered >= end);
        IntervalSample {
            k,
            window_end: window.1,
            applied_max_requests: self.max_requests,
            mean_response,
            n_observed: n,
            error: reference - mean_response,
        }
    }
}

/// [`PlantState`] wired to the event calendar with exponential workload.
#[derive(Debug, Clone)]
pub struct WorkerPool {
    pub state: PlantState,
    workload: WorkloadConfig,
    interarrival: RngStream,
    service: RngStream,
}

impl WorkerPool {
    pub fn new(
        workload: WorkloadConfig,
        seed: u64,
        max_requests: u32,
    ) -> Result<Self, ConfigError> {
        workload.validate()?;
        if max_requests == 0 {
            return Err(ConfigError::Invalid(
                "max_requests must be at least 1".into(),
            ));
        }
        Ok(WorkerPool {
            state: PlantState::new(max_requests),
            workload,
            interarrival: RngStream::new(seed, INTERARRIVAL_STREAM),
            service: RngStream::new(seed, SERVICE_STREAM),
        })
    }

    pub fn workload(&self) -> &WorkloadConfig {
        &self.workload
    }

    /// Schedules the first arrival.
    pub fn start(&mut self, cal: &mut EventCalendar) {
        let t = cal.now().0
            + self
                .interarrival
                .exponential(self.workload.mean_interarrival);
        cal.schedule(SimEvent::new(t, EventKind::Arrival));
    }

    /// Handles plant events; returns `false` for events it does not own.
    pub fn handle(&mut self, cal: &mut EventCalendar, ev: SimEvent) -> bool {
        match ev.kind {
            EventKind::Arrival => self.on_arrival(cal),
            EventKind::ServiceCompletion => self.on_completion(cal),
            _ => return false,
        }
        true
    }

    pub fn on_arrival(&mut self, cal: &mut EventCalendar) {
        let now = cal.now().0;
        self.state.enqueue(now);
        self.dispatch_if_free(cal);
        let next = now
            + self
                .interarrival
                .exponential(self.workload.mean_interarrival);
        cal.schedule(SimEvent::new(next, EventKind::Arrival));
    }

    pub fn on_completion(&mut self, cal: &mut EventCalendar) {
        self.state.complete();
        self.dispatch_if_free(cal);
    }

    pub fn dispatch_if_free(&mut self, cal: &mut EventCalendar) {
        let now = cal.now().0;
        for entry in self.state.dispatch_if_free(now) {
            let done = now + self.service.exponential(self.workload.mean_service);
            cal.schedule(SimEvent::new(done, EventKind::ServiceCompletion).with_payload(entry.id));
        }
    }

    /// Applies a new cap and starts queued work if the pool grew.
    pub fn set_max_requests(&mut self, cal: &mut EventCalendar, max_requests: u32) {
        self.state.set_max_requests(max_requests);
        self.dispatch_if_free(cal);
    }
}

/// First-order ARX plant in deviation variables around `(y0, u0)`:
/// `y_dev' = a * y_dev + b * u_dev`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArxPlant {
    pub a: f64,
    pub b: f64,
    pub y_dev: f64,
    pub u_dev: f64,
    pub y0: f64,
    pub u0: f64,
}

impl ArxPlant {
    pub fn new(a: f64, b: f64, y0: f64, u0: f64) -> Self {
        ArxPlant {
            a,
            b,
            y_dev: 0.0,
            u_dev: 0.0,
            y0,
            u0,
        }
    }

    pub fn output(&self) -> f64 {
        self.y0 + self.y_dev
    }

    /// Applies input `u` for one step and returns the new absolute output.
    pub fn step(&mut self, u: f64) -> f64 {
        self.u_dev = u - self.u0;
        self.y_dev = self.a * self.y_dev + self.b * self.u_dev;
        self.output()
    }

    /// Deviation after `n` steps of constant input deviation `u_dev`,
    /// from the closed form of the geometric series.
    pub fn y_dev_after(&self, n: u32, u_dev: f64) -> f64 {
        let an = self.a.powi(n as i32);
        let forced = if (1.0 - self.a).abs() < f64::EPSILON {
            self.b * u_dev * f64::from(n)
        } else {
            self.b * u_dev * (1.0 - an) / (1.0 - self.a)
        };
        an * self.y_dev + forced
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_system_serves_immediately() {
        let mut s = PlantState::new(1);
        s.enqueue(4.0);
        let started = s.dispatch_if_free(4.0);
        assert_eq!(started.len(), 1);
        assert_eq!(started[0].wait(), 0.0);
    }

    #[test]
    fn full_pool_makes_arrivals_wait() {
        let mut s = PlantState::new(2);
        for t in [0.0, 0.1] {
            s.enqueue(t);
            s.dispatch_if_free(t);
        }
        s.enqueue(0.2);
        assert!(s.dispatch_if_free(0.2).is_empty());
        assert_eq!(s.queue_len(), 1);
    }

    #[test]
    fn second_request_waits_for_first() {
        let mut s = PlantState::new(1);
        s.enqueue(0.0);
        s.dispatch_if_free(0.0);
        s.enqueue(1.0);
        assert!(s.dispatch_if_free(1.0).is_empty());
        s.complete();
        let started = s.dispatch_if_free(5.0);
        assert_eq!(started[0].id, 1);
        assert_eq!(started[0].wait(), 4.0);
    }

    #[test]
    fn capacity_arithmetic() {
        let mut s = PlantState::new(3);
        for _ in 0..5 {
            s.enqueue(0.0);
        }
        assert_eq!(s.dispatch_if_free(0.0).len(), 3);
        assert_eq!(s.queue_len(), 2);
        assert_eq!(s.busy_workers(), 3);
    }

    #[test]
    fn wait_is_entry_minus_arrival() {
        let mut s = PlantState::new(1);
        s.enqueue(0.0);
        s.dispatch_if_free(0.0);
        s.enqueue(10.0);
        s.complete();
        let e = s.dispatch_if_free(31.7)[0];
        assert!((e.wait() - 21.7).abs() < 1e-12);
    }

    #[test]
    fn shrink_is_lazy() {
        let mut s = PlantState::new(300);
        for _ in 0..320 {
            s.enqueue(0.0);
        }
        s.dispatch_if_free(0.0);
        for _ in 0..20 {
            s.complete();
        }
        assert_eq!(s.busy_workers(), 280);
        s.set_max_requests(250);
        assert_eq!(s.busy_workers(), 280);
        // 280 -> 250 completions: still nothing may start.
        for _ in 0..30 {
            s.complete();
            assert!(s.dispatch_if_free(1.0).is_empty());
        }
        assert_eq!(s.busy_workers(), 250);
        s.complete();
        assert_eq!(s.dispatch_if_free(2.0).len(), 1);
        assert_eq!(s.busy_workers(), 250);
    }

    fn state_with_waits(waits: &[(f64, f64)]) -> PlantState {
        let mut s = PlantState::new(1);
        for &(arrival, entry) in waits {
            s.enqueue(arrival);
            s.dispatch_if_free(entry);
            s.complete();
        }
        s
    }

    #[test]
    fn window_mean_and_error() {
        let mut s = state_with_waits(&[(100.0, 118.0), (110.0, 130.0), (120.0, 142.0)]);
        let sample = s.sample_window(1, 25.0, (SimTime(120.0), SimTime(180.0)));
        assert_eq!(sample.n_observed, 2);
        assert!((sample.mean_response - 21.0).abs() < 1e-12);

        let mut s = state_with_waits(&[(130.0, 148.0), (140.0, 160.0), (150.0, 172.0)]);
        let sample = s.sample_window(1, 20.0, (SimTime(120.0), SimTime(180.0)));
        assert_eq!(sample.n_observed, 3);
        assert_eq!(sample.mean_response, 20.0);
        assert_eq!(sample.error, 0.0);
    }

    #[test]
    fn error_sign() {
        let mut s = state_with_waits(&[(130.0, 155.0)]);
        let sample = s.sample_window(1, 20.0, (SimTime(120.0), SimTime(180.0)));
        assert_eq!(sample.error, -5.0);
    }

    #[test]
    fn empty_window_holds_previous_value() {
        let mut s = state_with_waits(&[(100.0, 117.2)]);
        let first = s.sample_window(1, 20.0, (SimTime(60.0), SimTime(120.0)));
        assert!((first.mean_response - 17.2).abs() < 1e-12);
        let second = s.sample_window(2, 20.0, (SimTime(180.0), SimTime(240.0)));
        assert_eq!(second.n_observed, 0);
        assert_eq!(second.mean_response, first.mean_response);
        assert_eq!(second.error, 20.0 - first.mean_response);
    }

    #[test]
    fn empty_first_window_reports_reference() {
        let mut s = PlantState::new(5);
        let sample = s.sample_window(1, 20.0, (SimTime(120.0), SimTime(180.0)));
        assert_eq!(sample.mean_response, 20.0);
        assert_eq!(sample.error, 0.0);
    }

    #[test]
    fn arx_equilibrium() {
        let mut p = ArxPlant::new(0.1, -0.36, 20.0, 300.0);
        assert_eq!(p.step(300.0), 20.0);
    }

    #[test]
    fn arx_free_decay() {
        let mut p = ArxPlant::new(0.1, -0.36, 0.0, 0.0);
        p.y_dev = 10.0;
        p.step(0.0);
        assert!((p.y_dev - 1.0).abs() < 1e-15);
    }

    #[test]
    fn arx_more_workers_less_wait() {
        let mut p = ArxPlant::new(0.1, -0.36, 0.0, 300.0);
        p.step(310.0);
        assert!((p.y_dev + 3.6).abs() < 1e-12);
    }

    #[test]
    fn worker_pool_rejects_bad_workload() {
        let w = WorkloadConfig {
            mean_interarrival: 0.0,
            mean_service: 60.0,
        };
        assert!(WorkerPool::new(w, 1, 10).is_err());
    }
}
