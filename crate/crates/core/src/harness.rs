//! Experiment orchestration: the timed control loop, run summaries, paired
//! controller comparison, CSV/SVG output and the Erlang-C oracle used to
//! validate the queueing simulator.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::controllers::{
    Controller, FixedController, FuzzyConfig, FuzzyController, PConfig, ProportionalController,
};
use crate::plant::{IntervalSample, WorkerPool, WorkloadConfig};
use crate::sim_engine::{EventCalendar, EventKind, SimEvent, SimTime, GENERATOR_NAME};
use crate::ConfigError;

/// Final-half mean response must sit within this fraction of the reference
/// for a run to count as converged.
pub const REGULATION_BAND: f64 = 0.25;

pub const CSV_COLUMNS: [&str; 6] = [
    "k",
    "window_end_sec",
    "applied_max_requests",
    "mean_response_sec",
    "n_observed",
    "error_sec",
];

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("queue length {queue_len} exceeded the guard {guard} at interval {interval}")]
    Divergence {
        interval: u32,
        queue_len: usize,
        guard: usize,
    },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("unstable load: lambda / (c * mu) = {rho} >= 1")]
    UnstableLoad { rho: f64 },
}

impl HarnessError {
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            HarnessError::Config(_) | HarnessError::UnstableLoad { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Prop,
    Fuzzy,
    Fixed,
}

impl ControllerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::Prop => "prop",
            ControllerKind::Fuzzy => "fuzzy",
            ControllerKind::Fixed => "fixed",
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prop" => Ok(ControllerKind::Prop),
            "fuzzy" => Ok(ControllerKind::Fuzzy),
            "fixed" => Ok(ControllerKind::Fixed),
            other => Err(ConfigError::Invalid(format!(
                "unknown controller {other:?} (expected prop, fuzzy or fixed)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub controller: ControllerKind,
    pub reference: f64,
    pub duration: f64,
    pub measurement_interval: f64,
    pub sampling_window: f64,
    pub workload: WorkloadConfig,
    pub seed: u64,
    /// Pool size during the first interval. The fixed controller ignores it
    /// and runs at `u0` throughout.
    pub initial_max_requests: u32,
    pub u0: f64,
    pub kp: f64,
    /// Fuzzy input gain; `None` means `1 / reference`.
    pub ge: Option<f64>,
    pub gu: f64,
    pub u_min: u32,
    pub u_max: u32,
    pub queue_guard: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            controller: ControllerKind::Prop,
            reference: 20.0,
            duration: 3600.0,
            measurement_interval: 180.0,
            sampling_window: 60.0,
            workload: WorkloadConfig::default(),
            seed: 1,
            initial_max_requests: 200,
            u0: 300.0,
            kp: -1.5,
            ge: None,
            gu: 0.02,
            u_min: 1,
            u_max: 10_000,
            queue_guard: 1_000_000,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.workload.validate()?;
        for (name, value) in [
            ("reference", self.reference),
            ("duration", self.duration),
            ("interval", self.measurement_interval),
            ("window", self.sampling_window),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConfigError::NonPositive { name, value });
            }
        }
        if self.sampling_window > self.measurement_interval {
            return Err(ConfigError::Invalid(format!(
                "window ({}) must not exceed interval ({})",
                self.sampling_window, self.measurement_interval
            )));
        }
        let ratio = self.duration / self.measurement_interval;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(ConfigError::Invalid(format!(
                "duration ({}) must be a multiple of interval ({})",
                self.duration, self.measurement_interval
            )));
        }
        if self.initial_max_requests < self.u_min || self.initial_max_requests > self.u_max {
            return Err(ConfigError::Invalid(format!(
                "initial max_requests {} outside [{}, {}]",
                self.initial_max_requests, self.u_min, self.u_max
            )));
        }
        self.p_config().validate()?;
        self.fuzzy_config().validate()?;
        if self.controller == ControllerKind::Fixed {
            self.fixed_value()?;
        }
        Ok(())
    }

    pub fn n_intervals(&self) -> u32 {
        (self.duration / self.measurement_interval).round() as u32
    }

    pub fn p_config(&self) -> PConfig {
        PConfig {
            kp: self.kp,
            reference: self.reference,
            u0: self.u0,
            u_min: self.u_min,
            u_max: self.u_max,
        }
    }

    pub fn fuzzy_config(&self) -> FuzzyConfig {
        let mut cfg = FuzzyConfig::new(self.reference);
        if let Some(ge) = self.ge {
            cfg.ge = ge;
        }
        cfg.gu = self.gu;
        cfg.u_min = self.u_min;
        cfg.u_max = self.u_max;
        cfg
    }

    fn fixed_value(&self) -> Result<u32, ConfigError> {
        let u = self.u0.round();
        if !(u >= f64::from(self.u_min) && u <= f64::from(self.u_max)) {
            return Err(ConfigError::Invalid(format!(
                "fixed max_requests {} outside [{}, {}]",
                self.u0, self.u_min, self.u_max
            )));
        }
        Ok(u as u32)
    }

    fn build_controller(&self) -> Result<(Box<dyn Controller + Send>, u32), ConfigError> {
        Ok(match self.controller {
            ControllerKind::Prop => (
                Box::new(ProportionalController::new(self.p_config())?),
                self.initial_max_requests,
            ),
            ControllerKind::Fuzzy => (
                Box::new(FuzzyController::new(
                    self.fuzzy_config(),
                    self.initial_max_requests,
                )?),
                self.initial_max_requests,
            ),
            ControllerKind::Fixed => {
                let u = self.fixed_value()?;
                (Box::new(FixedController { u_fixed: u }), u)
            }
        })
    }

    /// Every resolved setting as `(key, value)` pairs, keys spelled like the
    /// CLI flags.
    pub fn resolved(&self) -> Vec<(&'static str, String)> {
        let ge = self.ge.unwrap_or(1.0 / self.reference);
        vec![
            ("controller", self.controller.as_str().to_string()),
            ("reference", fmt_real(self.reference)),
            ("duration", fmt_real(self.duration)),
            ("interval", fmt_real(self.measurement_interval)),
            ("window", fmt_real(self.sampling_window)),
            (
                "mean-interarrival",
                fmt_real(self.workload.mean_interarrival),
            ),
            ("mean-service", fmt_real(self.workload.mean_service)),
            ("seed", self.seed.to_string()),
            (
                "initial-max-requests",
                self.initial_max_requests.to_string(),
            ),
            ("u0", fmt_real(self.u0)),
            ("kp", fmt_real(self.kp)),
            ("ge", fmt_real(ge)),
            ("gu", fmt_real(self.gu)),
            ("u-min", self.u_min.to_string()),
            ("u-max", self.u_max.to_string()),
            ("queue-guard", self.queue_guard.to_string()),
        ]
    }
}

fn fmt_real(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub final_half_mean_response: f64,
    pub final_half_mean_max_requests: f64,
    pub final_half_rms_error: f64,
    pub converged: bool,
}

impl Summary {
    /// Statistics over samples whose window ends after `duration / 2`.
    pub fn from_samples(samples: &[IntervalSample], reference: f64, duration: f64) -> Summary {
        let tail: Vec<&IntervalSample> = samples
            .iter()
            .filter(|s| s.window_end.0 > duration / 2.0)
            .collect();
        let n = tail.len() as f64;
        if tail.is_empty() {
            return Summary {
                final_half_mean_response: f64::NAN,
                final_half_mean_max_requests: f64::NAN,
                final_half_rms_error: f64::NAN,
                converged: false,
            };
        }
        let mean_response = tail.iter().map(|s| s.mean_response).sum::<f64>() / n;
        let mean_u = tail
            .iter()
            .map(|s| f64::from(s.applied_max_requests))
            .sum::<f64>()
            / n;
        let rms = (tail.iter().map(|s| s.error * s.error).sum::<f64>() / n).sqrt();
        Summary {
            final_half_mean_response: mean_response,
            final_half_mean_max_requests: mean_u,
            final_half_rms_error: rms,
            converged: (mean_response - reference).abs() <= REGULATION_BAND * reference,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub samples: Vec<IntervalSample>,
    pub summary: Summary,
}

/// Runs one closed-loop experiment. At each interval boundary the last
/// `sampling_window` seconds are sampled, the controller is consulted and
/// the new `max_requests` applies to the following interval.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let (mut controller, initial_u) = cfg.build_controller()?;
    let mut pool = WorkerPool::new(cfg.workload, cfg.seed, initial_u)?;
    let mut cal = EventCalendar::new();
    pool.start(&mut cal);

    let n = cfg.n_intervals();
    for k in 1..=n {
        let t = f64::from(k) * cfg.measurement_interval;
        cal.schedule(SimEvent::new(t, EventKind::MeasurementTick).with_payload(u64::from(k)));
        cal.schedule(SimEvent::new(t, EventKind::ControlTick).with_payload(u64::from(k)));
    }
    cal.schedule(SimEvent::new(cfg.duration, EventKind::EndOfRun));

    let mut samples = Vec::with_capacity(n as usize);
    for k in 1..=n {
        let end = f64::from(k) * cfg.measurement_interval;
        let mut latest: Option<IntervalSample> = None;
        cal.run_until(SimTime(end), |cal, ev| match ev.kind {
            EventKind::Arrival | EventKind::ServiceCompletion => {
                pool.handle(cal, ev);
            }
            EventKind::MeasurementTick => {
                let now = cal.now();
                let window = (SimTime(now.0 - cfg.sampling_window), now);
                let idx = ev.payload.expect("tick carries its interval") as u32;
                latest = Some(pool.state.sample_window(idx, cfg.reference, window));
            }
            EventKind::ControlTick => {
                let sample = latest.as_ref().expect("measurement precedes control");
                let next = controller.update(sample);
                pool.set_max_requests(cal, next);
            }
            EventKind::EndOfRun => {}
        });
        samples.push(latest.expect("one measurement per interval"));
        let queue_len = pool.state.queue_len();
        if queue_len > cfg.queue_guard {
            return Err(HarnessError::Divergence {
                interval: k,
                queue_len,
                guard: cfg.queue_guard,
            });
        }
    }

    let summary = Summary::from_samples(&samples, cfg.reference, cfg.duration);
    Ok(RunReport {
        config: cfg.clone(),
        samples,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub prop: RunReport,
    pub fuzzy: RunReport,
    /// Proportional minus fuzzy final-half mean max_requests; negative means
    /// the proportional controller regulated with fewer workers.
    pub efficiency_delta: f64,
}

/// Runs both controllers on the same arrival and service realization.
pub fn compare(
    cfg_prop: &ExperimentConfig,
    cfg_fuzzy: &ExperimentConfig,
) -> Result<ComparisonReport, HarnessError> {
    if cfg_prop.controller != ControllerKind::Prop || cfg_fuzzy.controller != ControllerKind::Fuzzy
    {
        return Err(
            ConfigError::Invalid("compare needs a prop config and a fuzzy config".into()).into(),
        );
    }
    let shared = |c: &ExperimentConfig| {
        (
            c.workload,
            c.seed,
            c.reference,
            c.duration,
            c.measurement_interval,
            c.sampling_window,
        )
    };
    if shared(cfg_prop) != shared(cfg_fuzzy) {
        return Err(ConfigError::Invalid(
            "compared runs must share workload, seed, reference, duration, interval and window"
                .into(),
        )
        .into());
    }
    let (prop, fuzzy) = std::thread::scope(|s| {
        let p = s.spawn(|| run_experiment(cfg_prop));
        let f = run_experiment(cfg_fuzzy);
        (p.join().expect("prop run panicked"), f)
    });
    let (prop, fuzzy) = (prop?, fuzzy?);
    let efficiency_delta =
        prop.summary.final_half_mean_max_requests - fuzzy.summary.final_half_mean_max_requests;
    Ok(ComparisonReport {
        prop,
        fuzzy,
        efficiency_delta,
    })
}

pub fn csv_string(report: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# generator = {GENERATOR_NAME}");
    for (key, value) in report.config.resolved() {
        let _ = writeln!(out, "# {key} = {value}");
    }
    out.push_str(&CSV_COLUMNS.join(","));
    out.push('\n');
    for s in &report.samples {
        let _ = writeln!(
            out,
            "{},{:.6},{},{:.6},{},{:.6}",
            s.k, s.window_end.0, s.applied_max_requests, s.mean_response, s.n_observed, s.error
        );
    }
    out
}

/// Writes the run as CSV: `# key = value` comment lines with the generator
/// and resolved config, then the column header and one row per interval.
pub fn emit_csv(report: &RunReport, path: &Path) -> Result<(), HarnessError> {
    write_file(path, csv_string(report).as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let io_err = |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    w.write_all(bytes).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Two stacked line plots: max_requests and mean response per interval.
pub fn svg_string(report: &RunReport) -> String {
    const W: f64 = 640.0;
    const H: f64 = 240.0;
    const PAD: f64 = 40.0;
    let panels: [(&str, Vec<f64>, Option<f64>); 2] = [
        (
            "max_requests",
            report
                .samples
                .iter()
                .map(|s| f64::from(s.applied_max_requests))
                .collect(),
            None,
        ),
        (
            "mean response (s)",
            report.samples.iter().map(|s| s.mean_response).collect(),
            Some(report.config.reference),
        ),
    ];
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{}" font-family="sans-serif" font-size="11">"#,
        2.0 * H
    );
    for (i, (label, ys, reference)) in panels.iter().enumerate() {
        let top = i as f64 * H;
        let n = ys.len().max(2) as f64;
        let mut lo = ys
            .iter()
            .copied()
            .chain(*reference)
            .fold(f64::INFINITY, f64::min);
        let mut hi = ys
            .iter()
            .copied()
            .chain(*reference)
            .fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-9 {
            hi = lo + 1.0;
        }
        let x = |j: usize| PAD + (W - 2.0 * PAD) * j as f64 / (n - 1.0);
        let y = |v: f64| top + H - PAD - (H - 2.0 * PAD) * (v - lo) / (hi - lo);
        let _ = writeln!(
            out,
            r#"<rect x="{PAD}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            top + PAD,
            W - 2.0 * PAD,
            H - 2.0 * PAD
        );
        let _ = writeln!(
            out,
            r#"<text x="{PAD}" y="{}">{label} ({})</text>"#,
            top + PAD - 8.0,
            report.config.controller.as_str()
        );
        let _ = writeln!(
            out,
            r#"<text x="2" y="{:.2}">{hi:.1}</text>"#,
            top + PAD + 4.0
        );
        let _ = writeln!(
            out,
            r#"<text x="2" y="{:.2}">{lo:.1}</text>"#,
            top + H - PAD
        );
        if let Some(r) = reference {
            let _ = writeln!(
                out,
                r#"<line x1="{PAD}" x2="{}" y1="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4 3"/>"#,
                W - PAD,
                y(*r),
                y(*r)
            );
        }
        let points: Vec<String> = ys
            .iter()
            .enumerate()
            .map(|(j, v)| format!("{:.2},{:.2}", x(j), y(*v)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
    }
    out.push_str("</svg>\n");
    out
}

pub fn emit_svg(report: &RunReport, path: &Path) -> Result<(), HarnessError> {
    write_file(path, svg_string(report).as_bytes())
}

/// Mean queue wait of an M/M/c queue, with the Erlang-C probability of
/// waiting computed through the Erlang-B recurrence.
pub fn erlang_c_wait(lambda: f64, mu: f64, c: u32) -> Result<f64, HarnessError> {
    for (name, value) in [("lambda", lambda), ("mu", mu)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(ConfigError::NonPositive { name, value }.into());
        }
    }
    if c == 0 {
        return Err(ConfigError::Invalid("c must be at least 1".into()).into());
    }
    let capacity = f64::from(c) * mu;
    let rho = lambda / capacity;
    if rho >= 1.0 {
        return Err(HarnessError::UnstableLoad { rho });
    }
    let offered = lambda / mu;
    let mut erlang_b = 1.0;
    for k in 1..=c {
        erlang_b = offered * erlang_b / (f64::from(k) + offered * erlang_b);
    }
    let p_wait = f64::from(c) * erlang_b / (f64::from(c) - offered * (1.0 - erlang_b));
    Ok(p_wait / (capacity - lambda))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoolStats {
    pub mean_wait: f64,
    pub entered: u64,
    pub completions: u64,
    pub sim_seconds: f64,
}

/// Runs the pool at a constant size until `completions` requests have
/// finished service and reports the mean queue wait of every request that
/// entered service.
pub fn simulate_fixed_pool(
    workload: WorkloadConfig,
    c: u32,
    completions: u64,
    seed: u64,
) -> Result<FixedPoolStats, HarnessError> {
    let mut pool = WorkerPool::new(workload, seed, c)?;
    let mut cal = EventCalendar::new();
    pool.start(&mut cal);
    while pool.state.completions() < completions {
        let ev = cal
            .pop_until(SimTime(f64::INFINITY))
            .expect("arrivals keep the calendar non-empty");
        pool.handle(&mut cal, ev);
    }
    Ok(FixedPoolStats {
        mean_wait: pool.state.mean_wait().unwrap_or(0.0),
        entered: pool.state.entered(),
        completions: pool.state.completions(),
        sim_seconds: cal.now().0,
    })
}
