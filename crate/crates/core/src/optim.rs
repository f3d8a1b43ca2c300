//! Box-constrained Nelder-Mead and transmission-policy optimization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::approx_metrics;
use crate::error::{AoiError, Result};
use crate::model::{SystemConfig, TransmissionPolicy};
use crate::sim::{simulate, SimParams};

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerOptions {
    /// Evaluation budget of one Nelder-Mead run, restarts included.
    pub max_evaluations: usize,
    /// Edge length of the initial simplex.
    pub initial_scale: f64,
    /// Stop when the simplex diameter (max norm) falls below this.
    pub xtol: f64,
    /// Stop when `f_worst - f_best <= ftol * |f_best|`.
    pub ftol: f64,
    /// Fresh simplices built around the best point after convergence.
    pub restarts: usize,
    /// Number of multistart seed points, baselines first.
    pub starts: usize,
    pub seed: u64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            max_evaluations: 5000,
            initial_scale: 0.25,
            xtol: 1e-6,
            ftol: 1e-10,
            restarts: 2,
            starts: 8,
            seed: 0,
        }
    }
}

impl OptimizerOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: &str| {
            Err(AoiError::InvalidParameter {
                field,
                reason: reason.into(),
            })
        };
        if self.max_evaluations == 0 {
            return bad("max_evaluations", "must be positive");
        }
        if !(self.initial_scale > 0.0 && self.initial_scale <= 1.0) {
            return bad("initial_scale", "must lie in (0, 1]");
        }
        if !(self.xtol > 0.0) || !(self.ftol > 0.0) {
            return bad("xtol", "tolerances must be positive");
        }
        if self.starts == 0 {
            return bad("starts", "must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    /// The budget ran out before convergence; `x` is the best point seen.
    pub exhausted: bool,
}

fn clip(x: &mut [f64]) {
    for v in x {
        *v = v.clamp(0.0, 1.0);
    }
}

fn diameter(simplex: &[Vec<f64>]) -> f64 {
    let best = &simplex[0];
    simplex[1..]
        .iter()
        .flat_map(|v| v.iter().zip(best).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}

/// Minimizes `f` over `[0,1]^d` from `x0`. Every proposed vertex is clipped
/// into the box.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], opts: &OptimizerOptions) -> NelderMeadResult {
    let d = x0.len();
    assert!(d >= 1, "nelder_mead needs at least one dimension");
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut best = x0.to_vec();
    clip(&mut best);
    let mut fbest = eval(&best);
    let mut exhausted = false;

    'runs: for _ in 0..=opts.restarts {
        let mut simplex = vec![best.clone()];
        let mut fs = vec![fbest];
        for i in 0..d {
            let mut v = best.clone();
            v[i] = if v[i] + opts.initial_scale <= 1.0 {
                v[i] + opts.initial_scale
            } else {
                v[i] - opts.initial_scale
            };
            clip(&mut v);
            fs.push(eval(&v));
            simplex.push(v);
        }
        loop {
            let mut order: Vec<usize> = (0..=d).collect();
            order.sort_by(|&a, &b| fs[a].total_cmp(&fs[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            fs = order.iter().map(|&i| fs[i]).collect();
            if fs[0] < fbest {
                fbest = fs[0];
                best = simplex[0].clone();
            }
            let spread = fs[d] - fs[0];
            if diameter(&simplex) <= opts.xtol
                || (spread.is_finite() && spread <= opts.ftol * fs[0].abs())
                || spread == 0.0
            {
                break;
            }
            if evals.get() >= opts.max_evaluations {
                exhausted = true;
                break 'runs;
            }
            let centroid: Vec<f64> = (0..d)
                .map(|k| simplex[..d].iter().map(|v| v[k]).sum::<f64>() / d as f64)
                .collect();
            let toward = |coef: f64| {
                let mut p: Vec<f64> = (0..d)
                    .map(|k| centroid[k] + coef * (centroid[k] - simplex[d][k]))
                    .collect();
                clip(&mut p);
                p
            };
            let xr = toward(REFLECT);
            let fr = eval(&xr);
            if fr < fs[0] {
                let xe = toward(REFLECT * EXPAND);
                let fe = eval(&xe);
                if fe < fr {
                    simplex[d] = xe;
                    fs[d] = fe;
                } else {
                    simplex[d] = xr;
                    fs[d] = fr;
                }
                continue;
            }
            if fr < fs[d - 1] {
                simplex[d] = xr;
                fs[d] = fr;
                continue;
            }
            let (xc, fc) = if fr < fs[d] {
                let xc = toward(REFLECT * CONTRACT);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = toward(-CONTRACT);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < fs[d].min(fr) {
                simplex[d] = xc;
                fs[d] = fc;
                continue;
            }
            for i in 1..=d {
                let mut v: Vec<f64> = (0..d)
                    .map(|k| simplex[0][k] + SHRINK * (simplex[i][k] - simplex[0][k]))
                    .collect();
                clip(&mut v);
                fs[i] = eval(&v);
                simplex[i] = v;
            }
        }
        if fs[0] < fbest {
            fbest = fs[0];
            best = simplex[0].clone();
        }
    }
    NelderMeadResult {
        x: best,
        f: fbest,
        evaluations: evals.get(),
        exhausted,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    /// Transmit only with a full battery.
    FullBatteryOnly,
    /// Transmit whenever a reading and any energy are available.
    AlwaysTransmit,
}

pub fn baseline_policy(kind: Baseline, capacity: usize) -> TransmissionPolicy {
    let probs = match kind {
        Baseline::FullBatteryOnly => (1..=capacity)
            .map(|b| if b == capacity { 1.0 } else { 0.0 })
            .collect(),
        Baseline::AlwaysTransmit => vec![1.0; capacity],
    };
    TransmissionPolicy::clipped(&probs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    AvgAoi,
    Avp { theta: u64 },
    Throughput,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    #[default]
    Approx,
    Simulation(SimParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub metric: Metric,
    pub backend: Backend,
}

impl Objective {
    pub fn new(metric: Metric) -> Self {
        Self {
            metric,
            backend: Backend::Approx,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Metric::Avp { theta: 0 } = self.metric {
            return Err(AoiError::InvalidParameter {
                field: "theta",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// Value of the metric itself (throughput is not negated).
    pub fn metric_value(&self, config: &SystemConfig, policy: &TransmissionPolicy) -> Result<f64> {
        let theta = match self.metric {
            Metric::Avp { theta } => theta,
            _ => 1,
        };
        match &self.backend {
            Backend::Approx => {
                let m = approx_metrics(config, policy, theta)?;
                Ok(match self.metric {
                    Metric::AvgAoi => m.avg_aoi,
                    Metric::Avp { .. } => m.avp,
                    Metric::Throughput => m.throughput,
                })
            }
            Backend::Simulation(params) => {
                let params = SimParams {
                    theta,
                    ..params.clone()
                };
                let s = simulate(config, policy, &params)?;
                Ok(match self.metric {
                    Metric::AvgAoi => s.avg_aoi.mean,
                    Metric::Avp { .. } => s.avp.mean,
                    Metric::Throughput => s.throughput.mean,
                })
            }
        }
    }

    /// Quantity minimized: the metric, negated for throughput. Failed
    /// evaluations score `+inf`.
    pub fn cost(&self, config: &SystemConfig, policy: &TransmissionPolicy) -> f64 {
        match self.metric_value(config, policy) {
            Ok(v) if self.metric == Metric::Throughput => -v,
            Ok(v) => v,
            Err(_) => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizedPolicy {
    pub policy: TransmissionPolicy,
    /// Minimized cost (negated throughput for the throughput metric).
    pub cost: f64,
    pub evaluations: usize,
    /// Some start ran out of budget.
    pub exhausted: bool,
}

/// Seed points of the multistart: both baselines, then uniform interior
/// points. The sequence for `k + 1` starts extends the one for `k`.
pub fn multistart_points(capacity: usize, starts: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut points = vec![
        baseline_policy(Baseline::FullBatteryOnly, capacity).probs().to_vec(),
        baseline_policy(Baseline::AlwaysTransmit, capacity).probs().to_vec(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while points.len() < starts {
        points.push((0..capacity).map(|_| rng.gen::<f64>()).collect());
    }
    points.truncate(starts);
    points
}

/// Multistart Nelder-Mead over `[0,1]^E`. Starts run in parallel; the result
/// is deterministic given `opts.seed`.
pub fn optimize_policy(
    config: &SystemConfig,
    objective: &Objective,
    opts: &OptimizerOptions,
) -> Result<OptimizedPolicy> {
    config.validate()?;
    objective.validate()?;
    opts.validate()?;
    let starts = multistart_points(config.battery_capacity, opts.starts, opts.seed);
    let runs: Vec<NelderMeadResult> = starts
        .par_iter()
        .map(|x0| {
            nelder_mead(
                |x| objective.cost(config, &TransmissionPolicy::clipped(x)),
                x0,
                opts,
            )
        })
        .collect();
    let evaluations = runs.iter().map(|r| r.evaluations).sum();
    let exhausted = runs.iter().any(|r| r.exhausted);
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.f < a.f { b } else { a })
        .expect("at least one start");
    if !best.f.is_finite() {
        return Err(AoiError::NoRefresh);
    }
    Ok(OptimizedPolicy {
        policy: TransmissionPolicy::clipped(&best.x),
        cost: best.f,
        evaluations,
        exhausted,
    })
}
