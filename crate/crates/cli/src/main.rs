//! `aoi`: experiment runner for the analysis, simulation and optimization
//! routines of `aoi-core`.

mod config;
mod table;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aoi_core::{
    approx_metrics, exact_avg_aoi, optimize_policy, simulate, AoiError, Backend, ExactOptions,
    Metric, Objective, OptimizerOptions, SystemConfig, TransmissionPolicy,
};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use config::{
    BackendName, BaselineName, ExperimentConfig, Manifest, MetricName, Mode, Output, Weighting,
};
use table::{render, ResultRow, RESULT_COLUMNS, STEADY_STATE_COLUMNS};

/// Default grid of the validation command.
const VALIDATION_GRID: [f64; 5] = [0.2, 0.5, 1.0, 2.0, 3.0];
/// Approximate and exact average AoI must agree within this relative gap.
const VALIDATION_REL_GAP: f64 = 0.05;
/// Simulation estimates must lie within this many standard errors.
const VALIDATION_SE: f64 = 3.0;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    StateCap(String),
    #[error("{0}")]
    Core(AoiError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("validation failed: {0}")]
    Check(String),
}

impl From<AoiError> for CliError {
    fn from(e: AoiError) -> Self {
        match e {
            AoiError::InvalidParameter { field, reason } => {
                CliError::Config(format!("field `{}`: {reason}", config_key(field)))
            }
            AoiError::StateSpaceTooLarge { states, cap } if states == usize::MAX => {
                CliError::StateCap(format!(
                    "the exact chain has more composite states than can be counted (cap {cap}); use `approx` or `simulate`"
                ))
            }
            e @ AoiError::StateSpaceTooLarge { .. } => CliError::StateCap(e.to_string()),
            other => CliError::Core(other),
        }
    }
}

/// Config key corresponding to a library parameter name.
pub fn config_key(field: &str) -> &str {
    match field {
        "device_count" => "u",
        "battery_capacity" => "e",
        "update_prob" => "alpha",
        "harvest_prob" => "eta",
        "policy" => "pi",
        other => other,
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::StateCap(_) => 3,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "aoi", version, about = "Age of Information of energy-harvesting slotted ALOHA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML config file, or a JSON manifest from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of devices.
    #[arg(long)]
    u: Option<usize>,
    /// Battery capacity.
    #[arg(long)]
    e: Option<usize>,
    /// Per-device update probability.
    #[arg(long, conflicts_with = "u_alpha")]
    alpha: Option<f64>,
    /// Offered load U*alpha.
    #[arg(long)]
    u_alpha: Option<f64>,
    /// Harvest probability per slot.
    #[arg(long)]
    eta: Option<f64>,
    /// Transmission probabilities per battery level, e.g. `0,0,1`.
    #[arg(long, value_delimiter = ',', conflicts_with = "baseline")]
    pi: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    baseline: Option<BaselineName>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Violation threshold of the AoI violation probability.
    #[arg(long)]
    theta: Option<u64>,
    /// Offered-load grid, e.g. `0.5,1,2`.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    /// Simulated slots, warmup included.
    #[arg(long)]
    slots: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "AOI_OUT_DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct ExactArgs {
    #[arg(long)]
    state_cap: Option<usize>,
    #[arg(long, value_enum)]
    weighting: Option<Weighting>,
}

#[derive(Args, Debug, Clone)]
struct OptimizeArgs {
    #[arg(long, value_enum)]
    metric: Option<MetricName>,
    #[arg(long, value_enum)]
    backend: Option<BackendName>,
    /// Multistart seed points.
    #[arg(long)]
    starts: Option<usize>,
    /// Evaluation budget per start.
    #[arg(long)]
    max_evals: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Battery steady state and averaged success probability per level.
    SteadyState {
        #[command(flatten)]
        common: Common,
    },
    /// Average AoI from the exact Markov chain.
    Exact {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        exact: ExactArgs,
    },
    /// Average AoI, violation probability and throughput from the approximation.
    Approx {
        #[command(flatten)]
        common: Common,
    },
    /// Slot-level simulation.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Policy optimization, reported next to both baselines.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opt: OptimizeArgs,
    },
    /// Any combination of outputs over the offered-load grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        exact: ExactArgs,
        /// Quantities to compute, e.g. `exact,approx,sim`.
        #[arg(long, value_enum, value_delimiter = ',')]
        outputs: Option<Vec<Output>>,
    },
    /// Cross-checks the approximation against the exact chain and simulation.
    Validate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        exact: ExactArgs,
    },
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if self.u.is_some() {
            c.u = self.u;
        }
        if self.e.is_some() {
            c.e = self.e;
        }
        if self.alpha.is_some() {
            c.alpha = self.alpha;
            c.u_alpha = None;
        }
        if self.u_alpha.is_some() {
            c.u_alpha = self.u_alpha;
            c.alpha = None;
        }
        if self.eta.is_some() {
            c.eta = self.eta;
        }
        if self.pi.is_some() {
            c.pi = self.pi.clone();
            c.baseline = None;
        }
        if self.baseline.is_some() {
            c.baseline = self.baseline;
            c.pi = None;
        }
        if self.mode.is_some() {
            c.mode = self.mode;
        }
        if self.theta.is_some() {
            c.theta = self.theta;
        }
        if self.grid.is_some() {
            c.sweep.u_alpha = self.grid.clone();
        }
        if self.slots.is_some() {
            c.sim.slots = self.slots;
        }
        if self.seed.is_some() {
            c.sim.seed = self.seed;
        }
        Ok(c)
    }
}

impl ExactArgs {
    fn apply(&self, c: &mut ExperimentConfig) {
        if self.state_cap.is_some() {
            c.exact.state_cap = self.state_cap;
        }
        if self.weighting.is_some() {
            c.exact.weighting = self.weighting;
        }
    }
}

/// Writes `<name>.csv` and `<name>.manifest.json` into `out` and echoes the
/// table on stdout.
fn emit(out: &Path, name: &str, table: &str, config: &ExperimentConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    let table_file = format!("{name}.csv");
    std::fs::write(out.join(&table_file), table)?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: name.to_string(),
        seed: config.sim.seed.unwrap_or_default(),
        table: table_file,
        config: config.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(out.join(format!("{name}.manifest.json")), json + "\n")?;
    print!("{table}");
    Ok(())
}

/// Grid points crossed with policies, in output order.
fn jobs(
    c: &ExperimentConfig,
    fallback: &[BaselineName],
) -> Result<Vec<(f64, String, TransmissionPolicy, SystemConfig)>, CliError> {
    let policies = c.policies(fallback)?;
    let mut out = Vec::new();
    for load in c.u_alpha_grid() {
        let system = c.system(load)?;
        let load = load.unwrap_or_else(|| system.offered_load());
        for (label, p) in &policies {
            p.check_capacity(system.battery_capacity)?;
            out.push((load, label.clone(), p.clone(), system.clone()));
        }
    }
    Ok(out)
}

/// Evaluates the requested outputs at every job; rows keep job order.
fn evaluate(
    c: &ExperimentConfig,
    fallback: &[BaselineName],
    outputs: &[Output],
    check: bool,
) -> Result<Vec<ResultRow>, CliError> {
    let jobs = jobs(c, fallback)?;
    let theta = c.theta();
    let exact_opts = ExactOptions {
        state_cap: c.exact.state_cap.unwrap_or(aoi_core::DEFAULT_STATE_CAP),
        weighting: c.weighting(),
    };
    let sim_params = if outputs.contains(&Output::Sim) {
        Some(c.sim_params()?)
    } else {
        None
    };
    jobs.par_iter()
        .map(|(load, label, policy, system)| -> Result<ResultRow, CliError> {
            let mut row = ResultRow {
                label: label.clone(),
                u_alpha: *load,
                policy: policy.probs().to_vec(),
                ..Default::default()
            };
            if outputs.contains(&Output::Approx) {
                let m = approx_metrics(system, policy, theta)?;
                row.avg_aoi_approx = Some(m.avg_aoi);
                row.avp = Some(m.avp);
                row.throughput = Some(m.throughput);
            }
            if outputs.contains(&Output::Exact) {
                row.avg_aoi_exact = Some(exact_avg_aoi(system, policy, &exact_opts)?.avg_aoi);
            }
            if let Some(params) = &sim_params {
                let s = simulate(system, policy, params)?;
                row.sim_mean = Some(s.avg_aoi.mean);
                row.sim_stderr = Some(s.avg_aoi.stderr);
                row.sim_avp = Some(s.avp.mean);
                row.sim_avp_stderr = Some(s.avp.stderr);
                row.sim_throughput = Some(s.throughput.mean);
                row.seed = Some(params.seed);
                if check {
                    let (ex, ap, avp) = (
                        row.avg_aoi_exact.unwrap_or(f64::NAN),
                        row.avg_aoi_approx.unwrap_or(f64::NAN),
                        row.avp.unwrap_or(f64::NAN),
                    );
                    let ok = (ap - ex).abs() <= VALIDATION_REL_GAP * ex
                        && s.avg_aoi.within(ex, VALIDATION_SE)
                        && s.avg_aoi.within(ap, VALIDATION_SE)
                        && s.avp.within(avp, VALIDATION_SE);
                    row.check = Some(ok);
                }
            }
            Ok(row)
        })
        .collect()
}

fn steady_state(c: &ExperimentConfig) -> Result<Vec<Vec<String>>, CliError> {
    let theta = c.theta();
    let per_job = jobs(c, &[BaselineName::AlwaysTransmit])?
        .par_iter()
        .map(|(load, label, policy, system)| -> Result<Vec<Vec<String>>, CliError> {
            let m = approx_metrics(system, policy, theta)?;
            Ok(m.battery
                .probs()
                .iter()
                .zip(&m.wbar)
                .enumerate()
                .map(|(level, (nu, w))| {
                    vec![
                        label.clone(),
                        load.to_string(),
                        table::policy_cell(policy.probs()),
                        level.to_string(),
                        nu.to_string(),
                        w.to_string(),
                    ]
                })
                .collect())
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(per_job.into_iter().flatten().collect())
}

fn optimize(c: &ExperimentConfig) -> Result<Vec<ResultRow>, CliError> {
    let theta = c.theta();
    let metric = match c.optimize.metric.unwrap_or(MetricName::AvgAoi) {
        MetricName::AvgAoi => Metric::AvgAoi,
        MetricName::Avp => Metric::Avp { theta },
        MetricName::Throughput => Metric::Throughput,
    };
    let backend = match c.optimize.backend.unwrap_or(BackendName::Approx) {
        BackendName::Approx => Backend::Approx,
        BackendName::Simulation => Backend::Simulation(c.sim_params()?),
    };
    let objective = Objective { metric, backend };
    let d = OptimizerOptions::default();
    let opts = OptimizerOptions {
        starts: c.optimize.starts.unwrap_or(d.starts),
        max_evaluations: c.optimize.max_evaluations.unwrap_or(d.max_evaluations),
        seed: c.optimize.seed.unwrap_or(d.seed),
        ..d
    };
    let e = c.e.unwrap_or(2);
    let mut rows = Vec::new();
    for load in c.u_alpha_grid() {
        let system = c.system(load)?;
        let load = load.unwrap_or_else(|| system.offered_load());
        let best = optimize_policy(&system, &objective, &opts)?;
        if best.exhausted {
            eprintln!("warning: some optimizer start ran out of its evaluation budget at u_alpha = {load}");
        }
        let mut candidates = vec![("optimized".to_string(), best.policy.clone())];
        for b in [BaselineName::FullBatteryOnly, BaselineName::AlwaysTransmit] {
            candidates.push((b.label().to_string(), aoi_core::baseline_policy(b.kind(), e)));
        }
        for (label, policy) in candidates {
            let m = approx_metrics(&system, &policy, theta)?;
            let cost = if label == "optimized" {
                best.cost
            } else {
                objective.cost(&system, &policy)
            };
            rows.push(ResultRow {
                label,
                u_alpha: load,
                policy: policy.probs().to_vec(),
                avg_aoi_approx: Some(m.avg_aoi),
                avp: Some(m.avp),
                throughput: Some(m.throughput),
                seed: Some(opts.seed),
                cost: Some(cost),
                ..Default::default()
            });
        }
    }
    Ok(rows)
}

fn apply_optimize(c: &mut ExperimentConfig, a: &OptimizeArgs) {
    if a.metric.is_some() {
        c.optimize.metric = a.metric;
    }
    if a.backend.is_some() {
        c.optimize.backend = a.backend;
    }
    if a.starts.is_some() {
        c.optimize.starts = a.starts;
    }
    if a.max_evals.is_some() {
        c.optimize.max_evaluations = a.max_evals;
    }
}

fn result_table(rows: &[ResultRow]) -> String {
    render(
        RESULT_COLUMNS,
        &rows.iter().map(ResultRow::cells).collect::<Vec<_>>(),
    )
}

fn run(cli: Cli) -> Result<(), CliError> {
    const ALWAYS: &[BaselineName] = &[BaselineName::AlwaysTransmit];
    match cli.command {
        Command::SteadyState { common } => {
            let c = common.config()?.resolved()?;
            let rows = steady_state(&c)?;
            emit(&common.out, "steady-state", &render(STEADY_STATE_COLUMNS, &rows), &c)
        }
        Command::Exact { common, exact } => {
            let mut c = common.config()?;
            exact.apply(&mut c);
            let c = c.resolved()?;
            let rows = evaluate(&c, ALWAYS, &[Output::Exact], false)?;
            emit(&common.out, "exact", &result_table(&rows), &c)
        }
        Command::Approx { common } => {
            let c = common.config()?.resolved()?;
            let rows = evaluate(&c, ALWAYS, &[Output::Approx], false)?;
            emit(&common.out, "approx", &result_table(&rows), &c)
        }
        Command::Simulate { common } => {
            let c = common.config()?.resolved()?;
            let rows = evaluate(&c, ALWAYS, &[Output::Sim], false)?;
            emit(&common.out, "simulate", &result_table(&rows), &c)
        }
        Command::Optimize { common, opt } => {
            let mut c = common.config()?;
            apply_optimize(&mut c, &opt);
            let c = c.resolved()?;
            let rows = optimize(&c)?;
            emit(&common.out, "optimize", &result_table(&rows), &c)
        }
        Command::Sweep {
            common,
            exact,
            outputs,
        } => {
            let mut c = common.config()?;
            exact.apply(&mut c);
            if outputs.is_some() {
                c.sweep.outputs = outputs;
            }
            let c = c.resolved()?;
            let outputs = c.sweep.outputs.clone().unwrap_or_default();
            let rows = evaluate(&c, ALWAYS, &outputs, false)?;
            emit(&common.out, "sweep", &result_table(&rows), &c)
        }
        Command::Validate { common, exact } => {
            let mut c = common.config()?;
            exact.apply(&mut c);
            if c.sweep.u_alpha.is_none() {
                c.sweep.u_alpha = Some(VALIDATION_GRID.to_vec());
            }
            let c = c.resolved()?;
            let fallback = [BaselineName::AlwaysTransmit, BaselineName::FullBatteryOnly];
            let rows = evaluate(&c, &fallback, &[Output::Exact, Output::Approx, Output::Sim], true)?;
            emit(&common.out, "validate", &result_table(&rows), &c)?;
            let failed: Vec<String> = rows
                .iter()
                .filter(|r| r.check == Some(false))
                .map(|r| format!("{} at u_alpha = {}", r.label, r.u_alpha))
                .collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Check(failed.join(", ")))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("aoi: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
