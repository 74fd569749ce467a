//! First-order ARX identification and proportional-loop stability analysis.
//!
//! The model is `y(k+1) = a*y(k) + b*u(k)` in deviation variables, where
//! `u(k)` is the input chosen after observing `y(k)`. In experiment data each
//! pair `(u_j, y_j)` holds the input applied during interval `j` and the
//! output measured at its end, so the regression is `y_j` on
//! `(y_{j-1}, u_j)`.
//!
//! With the proportional law `u = Kp * (r - y)` the closed loop has a single
//! pole at `a - b*Kp`.

use crate::plant::{ArxPlant, WorkerPool, WorkloadConfig};
use crate::sim_engine::{EventCalendar, SimTime};
use crate::ConfigError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SysIdError {
    #[error("need at least 3 data points, got {0}")]
    TooFewPoints(usize),
    #[error("regressors are collinear; the experiment does not identify a and b")]
    NotIdentifiable,
    #[error("b = 0: the input has no effect on the output")]
    NoActuation,
    #[error("queue length {queue_len} exceeded the guard {guard} in interval {interval}")]
    Divergence {
        interval: u32,
        queue_len: usize,
        guard: usize,
    },
    #[error("input {0} is not a valid max_requests value")]
    BadInput(f64),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArxModel {
    pub a: f64,
    pub b: f64,
    pub y0: f64,
    pub u0: f64,
    pub residual_rms: f64,
}

impl ArxModel {
    pub fn new(a: f64, b: f64) -> Self {
        ArxModel {
            a,
            b,
            y0: 0.0,
            u0: 0.0,
            residual_rms: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    pub kp: f64,
    pub pole: f64,
    pub stable: bool,
    pub kp_min: f64,
    pub kp_max: f64,
}

/// Anything that can take one input and report the resulting output.
pub trait StepPlant {
    fn apply(&mut self, u: f64) -> Result<f64, SysIdError>;
}

impl StepPlant for ArxPlant {
    fn apply(&mut self, u: f64) -> Result<f64, SysIdError> {
        Ok(self.step(u))
    }
}

/// The simulated worker pool, advanced one measurement interval per input.
pub struct QueueStepPlant {
    pool: WorkerPool,
    cal: EventCalendar,
    interval: f64,
    window: f64,
    k: u32,
    queue_guard: usize,
}

impl QueueStepPlant {
    pub fn new(
        workload: WorkloadConfig,
        seed: u64,
        interval: f64,
        window: f64,
        queue_guard: usize,
    ) -> Result<Self, ConfigError> {
        if !(interval > 0.0 && window > 0.0 && window <= interval) {
            return Err(ConfigError::Invalid(format!(
                "need 0 < window ({window}) <= interval ({interval})"
            )));
        }
        let mut pool = WorkerPool::new(workload, seed, 1)?;
        let mut cal = EventCalendar::new();
        pool.start(&mut cal);
        Ok(QueueStepPlant {
            pool,
            cal,
            interval,
            window,
            k: 0,
            queue_guard,
        })
    }
}

impl StepPlant for QueueStepPlant {
    fn apply(&mut self, u: f64) -> Result<f64, SysIdError> {
        if !(u.is_finite() && u >= 1.0 && u <= f64::from(u32::MAX)) {
            return Err(SysIdError::BadInput(u));
        }
        self.k += 1;
        self.pool.set_max_requests(&mut self.cal, u.round() as u32);
        let end = f64::from(self.k) * self.interval;
        let pool = &mut self.pool;
        self.cal.run_until(SimTime(end), |cal, ev| {
            pool.handle(cal, ev);
        });
        let queue_len = self.pool.state.queue_len();
        if queue_len > self.queue_guard {
            return Err(SysIdError::Divergence {
                interval: self.k,
                queue_len,
                guard: self.queue_guard,
            });
        }
        let window = (SimTime(end - self.window), SimTime(end));
        Ok(self
            .pool
            .state
            .sample_window(self.k, 0.0, window)
            .mean_response)
    }
}

/// Applies `u_start + k*u_step` for `k = 0..n_intervals` and records the
/// output of each interval.
pub fn run_step_experiment<P: StepPlant>(
    plant: &mut P,
    u_start: i64,
    u_step: i64,
    n_intervals: usize,
) -> Result<Vec<(f64, f64)>, SysIdError> {
    if n_intervals < 3 {
        return Err(SysIdError::TooFewPoints(n_intervals));
    }
    (0..n_intervals as i64)
        .map(|k| {
            let u = (u_start + k * u_step) as f64;
            plant.apply(u).map(|y| (u, y))
        })
        .collect()
}

/// Least-squares fit of `(a, b)` on deviations from `(y0, u0)`, via the
/// 2x2 normal equations.
pub fn fit_arx(data: &[(f64, f64)], y0: f64, u0: f64) -> Result<ArxModel, SysIdError> {
    if data.len() < 3 {
        return Err(SysIdError::TooFewPoints(data.len()));
    }
    let dev: Vec<(f64, f64)> = data.iter().map(|&(u, y)| (u - u0, y - y0)).collect();
    let (mut syy, mut syu, mut suu, mut sy_t, mut su_t) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for w in dev.windows(2) {
        let y_prev = w[0].1;
        let (u, target) = w[1];
        syy += y_prev * y_prev;
        syu += y_prev * u;
        suu += u * u;
        sy_t += y_prev * target;
        su_t += u * target;
    }
    let det = syy * suu - syu * syu;
    if det.is_nan() || det <= 1e-12 * syy * suu || syy == 0.0 || suu == 0.0 {
        return Err(SysIdError::NotIdentifiable);
    }
    let a = (sy_t * suu - su_t * syu) / det;
    let b = (syy * su_t - syu * sy_t) / det;
    let n = (dev.len() - 1) as f64;
    let sse: f64 = dev
        .windows(2)
        .map(|w| {
            let r = w[1].1 - a * w[0].1 - b * w[1].0;
            r * r
        })
        .sum();
    Ok(ArxModel {
        a,
        b,
        y0,
        u0,
        residual_rms: (sse / n).sqrt(),
    })
}

/// [`fit_arx`] centred on the sample means of the data.
pub fn fit_arx_centered(data: &[(f64, f64)]) -> Result<ArxModel, SysIdError> {
    let n = data.len().max(1) as f64;
    let u0 = data.iter().map(|p| p.0).sum::<f64>() / n;
    let y0 = data.iter().map(|p| p.1).sum::<f64>() / n;
    fit_arx(data, y0, u0)
}

pub fn closed_loop_pole(model: &ArxModel, kp: f64) -> f64 {
    model.a - model.b * kp
}

/// The open interval of gains for which `|a - b*Kp| < 1`.
pub fn stable_gain_interval(model: &ArxModel) -> Result<(f64, f64), SysIdError> {
    if model.b == 0.0 {
        return Err(SysIdError::NoActuation);
    }
    let lo = (model.a - 1.0) / model.b;
    let hi = (model.a + 1.0) / model.b;
    Ok((lo.min(hi), lo.max(hi)))
}

pub fn analyze(model: &ArxModel, kp: f64) -> Result<StabilityReport, SysIdError> {
    let (kp_min, kp_max) = stable_gain_interval(model)?;
    let pole = closed_loop_pole(model, kp);
    Ok(StabilityReport {
        kp,
        pole,
        stable: pole.abs() < 1.0,
        kp_min,
        kp_max,
    })
}
