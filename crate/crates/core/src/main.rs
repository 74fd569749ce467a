use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use autotune::harness::{
    compare, csv_string, emit_csv, emit_svg, erlang_c_wait, run_experiment, simulate_fixed_pool,
    ControllerKind, ExperimentConfig, HarnessError, RunReport,
};
use autotune::plant::WorkloadConfig;
use autotune::sysid::{self, ArxModel, QueueStepPlant, SysIdError};
use autotune::ConfigError;

#[derive(Parser)]
#[command(
    name = "autotune",
    version,
    about = "Response-time regulation of a simulated worker pool"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Step-sweep the simulated pool and fit a first-order ARX model.
    Identify(IdentifyArgs),
    /// Closed-loop pole and stable gain interval for a given model.
    Analyze(AnalyzeArgs),
    /// Run one closed-loop experiment and write its interval series as CSV.
    Run(RunArgs),
    /// Run the proportional and fuzzy controllers on identical traffic.
    Compare(CompareArgs),
    /// Erlang-C mean queue wait, optionally checked against the simulator.
    Oracle(OracleArgs),
}

/// Experiment settings. Every field may also come from the `--config` file,
/// under the same kebab-case key.
#[derive(Args, Deserialize, Default, Clone, Debug)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct ExperimentOpts {
    /// prop, fuzzy or fixed
    #[arg(long)]
    controller: Option<String>,
    /// Target response time, seconds
    #[arg(long)]
    reference: Option<f64>,
    #[arg(long)]
    duration: Option<f64>,
    /// Measurement interval, seconds
    #[arg(long)]
    interval: Option<f64>,
    /// Sampling window at the end of each interval, seconds
    #[arg(long)]
    window: Option<f64>,
    #[arg(long)]
    mean_interarrival: Option<f64>,
    #[arg(long)]
    mean_service: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    initial_max_requests: Option<u32>,
    /// Operating-point max_requests (also the fixed controller's value)
    #[arg(long)]
    u0: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    kp: Option<f64>,
    /// Fuzzy input gain (default 1/reference)
    #[arg(long)]
    ge: Option<f64>,
    /// Fuzzy output gain
    #[arg(long)]
    gu: Option<f64>,
    #[arg(long)]
    u_min: Option<u32>,
    #[arg(long)]
    u_max: Option<u32>,
    #[arg(long)]
    queue_guard: Option<usize>,
}

impl ExperimentOpts {
    /// Values set here win over `base`.
    fn over(self, base: ExperimentOpts) -> ExperimentOpts {
        ExperimentOpts {
            controller: self.controller.or(base.controller),
            reference: self.reference.or(base.reference),
            duration: self.duration.or(base.duration),
            interval: self.interval.or(base.interval),
            window: self.window.or(base.window),
            mean_interarrival: self.mean_interarrival.or(base.mean_interarrival),
            mean_service: self.mean_service.or(base.mean_service),
            seed: self.seed.or(base.seed),
            initial_max_requests: self.initial_max_requests.or(base.initial_max_requests),
            u0: self.u0.or(base.u0),
            kp: self.kp.or(base.kp),
            ge: self.ge.or(base.ge),
            gu: self.gu.or(base.gu),
            u_min: self.u_min.or(base.u_min),
            u_max: self.u_max.or(base.u_max),
            queue_guard: self.queue_guard.or(base.queue_guard),
        }
    }

    fn resolve(self) -> Result<ExperimentConfig, ConfigError> {
        let d = ExperimentConfig::default();
        let cfg = ExperimentConfig {
            controller: match self.controller {
                Some(c) => c.parse()?,
                None => d.controller,
            },
            reference: self.reference.unwrap_or(d.reference),
            duration: self.duration.unwrap_or(d.duration),
            measurement_interval: self.interval.unwrap_or(d.measurement_interval),
            sampling_window: self.window.unwrap_or(d.sampling_window),
            workload: WorkloadConfig {
                mean_interarrival: self
                    .mean_interarrival
                    .unwrap_or(d.workload.mean_interarrival),
                mean_service: self.mean_service.unwrap_or(d.workload.mean_service),
            },
            seed: self.seed.unwrap_or(d.seed),
            initial_max_requests: self.initial_max_requests.unwrap_or(d.initial_max_requests),
            u0: self.u0.unwrap_or(d.u0),
            kp: self.kp.unwrap_or(d.kp),
            ge: self.ge.or(d.ge),
            gu: self.gu.unwrap_or(d.gu),
            u_min: self.u_min.unwrap_or(d.u_min),
            u_max: self.u_max.unwrap_or(d.u_max),
            queue_guard: self.queue_guard.unwrap_or(d.queue_guard),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentOpts, CliError> {
    let Some(path) = path else {
        return Ok(ExperimentOpts::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())).into())
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` file; flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    opts: ExperimentOpts,
    /// CSV destination (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a two-panel SVG plot
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    opts: ExperimentOpts,
    /// Write `<prefix>prop.csv` and `<prefix>fuzzy.csv`
    #[arg(long)]
    out_prefix: Option<String>,
}

#[derive(Args)]
struct IdentifyArgs {
    #[arg(long, default_value_t = 200)]
    u_start: i64,
    #[arg(long, default_value_t = 10, allow_hyphen_values = true)]
    u_step: i64,
    #[arg(long, default_value_t = 20)]
    n_intervals: usize,
    #[arg(long, default_value_t = 0.2)]
    mean_interarrival: f64,
    #[arg(long, default_value_t = 60.0)]
    mean_service: f64,
    #[arg(long, default_value_t = 180.0)]
    interval: f64,
    #[arg(long, default_value_t = 60.0)]
    window: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1_000_000)]
    queue_guard: usize,
    /// Gain checked against the fitted model
    #[arg(long, default_value_t = -1.5, allow_hyphen_values = true)]
    kp: f64,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long, default_value_t = 0.1, allow_hyphen_values = true)]
    a: f64,
    #[arg(long, default_value_t = -0.36, allow_hyphen_values = true)]
    b: f64,
    #[arg(long, default_value_t = -1.5, allow_hyphen_values = true)]
    kp: f64,
}

#[derive(Args)]
struct OracleArgs {
    /// Arrival rate, requests per second
    #[arg(long, default_value_t = 5.0)]
    lambda: f64,
    /// Service rate per worker, per second
    #[arg(long, default_value_t = 1.0 / 60.0)]
    mu: f64,
    #[arg(long, default_value_t = 320)]
    c: u32,
    /// Also simulate until this many completions
    #[arg(long)]
    completions: Option<u64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    SysId(#[from] SysIdError),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Harness(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Harness(e) if e.is_config() => 1,
            CliError::SysId(SysIdError::Config(_) | SysIdError::TooFewPoints(_)) => 1,
            _ => 2,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Identify(args) => identify(args),
        Command::Analyze(args) => analyze(args),
        Command::Run(args) => run(args),
        Command::Compare(args) => compare_cmd(args),
        Command::Oracle(args) => oracle(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn print_summary(report: &RunReport) {
    let s = &report.summary;
    eprintln!(
        "{}: final-half mean response {:.3} s (reference {}), mean max_requests {:.1}, rms error {:.3} s, converged {}",
        report.config.controller.as_str(),
        s.final_half_mean_response,
        report.config.reference,
        s.final_half_mean_max_requests,
        s.final_half_rms_error,
        s.converged
    );
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let file = load_config(args.config.as_deref())?;
    let cfg = args.opts.over(file).resolve()?;
    if cfg.controller == ControllerKind::Prop {
        if let Some(w) = cfg.p_config().stability_warning(&ArxModel::new(0.1, -0.36)) {
            eprintln!("warning: {w} of the reference model");
        }
    }
    let report = run_experiment(&cfg)?;
    match &args.out {
        Some(path) => emit_csv(&report, path)?,
        None => print!("{}", csv_string(&report)),
    }
    if let Some(path) = &args.svg {
        emit_svg(&report, path)?;
    }
    print_summary(&report);
    Ok(())
}

fn compare_cmd(args: CompareArgs) -> Result<(), CliError> {
    let file = load_config(args.config.as_deref())?;
    let base = args.opts.over(file);
    let with = |kind: &str| {
        ExperimentOpts {
            controller: Some(kind.to_string()),
            ..base.clone()
        }
        .resolve()
    };
    let report = compare(&with("prop")?, &with("fuzzy")?)?;
    if let Some(prefix) = &args.out_prefix {
        emit_csv(&report.prop, Path::new(&format!("{prefix}prop.csv")))?;
        emit_csv(&report.fuzzy, Path::new(&format!("{prefix}fuzzy.csv")))?;
    }
    println!("controller,final_half_mean_response_sec,final_half_mean_max_requests,final_half_rms_error_sec,converged");
    for r in [&report.prop, &report.fuzzy] {
        let s = &r.summary;
        println!(
            "{},{:.6},{:.6},{:.6},{}",
            r.config.controller.as_str(),
            s.final_half_mean_response,
            s.final_half_mean_max_requests,
            s.final_half_rms_error,
            s.converged
        );
    }
    println!(
        "# efficiency_delta (prop - fuzzy mean max_requests) = {:.6}",
        report.efficiency_delta
    );
    Ok(())
}

fn identify(args: IdentifyArgs) -> Result<(), CliError> {
    let workload = WorkloadConfig {
        mean_interarrival: args.mean_interarrival,
        mean_service: args.mean_service,
    };
    let mut plant = QueueStepPlant::new(
        workload,
        args.seed,
        args.interval,
        args.window,
        args.queue_guard,
    )?;
    let data = sysid::run_step_experiment(&mut plant, args.u_start, args.u_step, args.n_intervals)?;
    let model = sysid::fit_arx_centered(&data)?;
    let report = sysid::analyze(&model, args.kp)?;
    println!("u0 = {:.6}", model.u0);
    println!("y0 = {:.6}", model.y0);
    println!("a = {:.6}", model.a);
    println!("b = {:.6}", model.b);
    println!("residual_rms = {:.6}", model.residual_rms);
    println!("pole({}) = {:.6}", args.kp, report.pole);
    println!("kp_min = {:.6}", report.kp_min);
    println!("kp_max = {:.6}", report.kp_max);
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let model = ArxModel::new(args.a, args.b);
    let r = sysid::analyze(&model, args.kp).map_err(|e| match e {
        SysIdError::NoActuation => CliError::from(ConfigError::Invalid(e.to_string())),
        other => other.into(),
    })?;
    println!("a = {:.6}", args.a);
    println!("b = {:.6}", args.b);
    println!("pole({}) = {:.6}", args.kp, r.pole);
    println!("stable({}) = {}", args.kp, r.stable);
    println!("kp_min = {:.6}", r.kp_min);
    println!("kp_max = {:.6}", r.kp_max);
    Ok(())
}

fn oracle(args: OracleArgs) -> Result<(), CliError> {
    let wait = erlang_c_wait(args.lambda, args.mu, args.c)?;
    println!("erlang_c_wait = {wait:.6}");
    if let Some(n) = args.completions {
        let workload = WorkloadConfig {
            mean_interarrival: 1.0 / args.lambda,
            mean_service: 1.0 / args.mu,
        };
        let stats = simulate_fixed_pool(workload, args.c, n, args.seed)?;
        println!("simulated_wait = {:.6}", stats.mean_wait);
        println!("relative_error = {:.6}", (stats.mean_wait - wait) / wait);
        println!("simulated_seconds = {:.6}", stats.sim_seconds);
    }
    Ok(())
}
