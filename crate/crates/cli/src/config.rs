//! Experiment configuration: a flat TOML document with `[channel]`, `[sim]`,
//! `[sweep]`, `[exact]` and `[optimize]` blocks. Command-line flags override
//! file values; every missing value is filled with a default so that the
//! resolved document, stored in the run manifest, reproduces the run.

use std::path::Path;

use aoi_core::presets::{NOISE_DB, RATE, SLOT_LENGTH, SMALL_VALIDATION_THETA};
use aoi_core::{
    baseline_policy, AoiError, Baseline, Channel, ChannelParams, DecodingMode, RefreshWeighting,
    SimParams, SystemConfig, TransmissionPolicy, DEFAULT_STATE_CAP,
};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Capture,
    NoCapture,
}

impl From<Mode> for DecodingMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Capture => DecodingMode::Capture,
            Mode::NoCapture => DecodingMode::NoCapture,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineName {
    FullBatteryOnly,
    AlwaysTransmit,
}

impl BaselineName {
    pub fn label(self) -> &'static str {
        match self {
            BaselineName::FullBatteryOnly => "full-battery-only",
            BaselineName::AlwaysTransmit => "always-transmit",
        }
    }

    pub fn kind(self) -> Baseline {
        match self {
            BaselineName::FullBatteryOnly => Baseline::FullBatteryOnly,
            BaselineName::AlwaysTransmit => Baseline::AlwaysTransmit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    Uniform,
    Stationary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MetricName {
    AvgAoi,
    Avp,
    Throughput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendName {
    Approx,
    Simulation,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ideal: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slot_length: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_linear: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slots: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batches: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Output {
    Exact,
    Approx,
    Sim,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_alpha: Option<Vec<f64>>,
    /// Quantities computed by the `sweep` command.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outputs: Option<Vec<Output>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state_cap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weighting: Option<Weighting>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric: Option<MetricName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub starts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_evaluations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// One document shape serves as the user's config file and as the resolved
/// record in the manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e: Option<usize>,
    /// Per-device update probability. Mutually exclusive with `u_alpha`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Offered load U*alpha.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pi: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<u64>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub channel: ChannelBlock,
    #[serde(default, skip_serializing_if = "is_default")]
    pub sim: SimBlock,
    #[serde(default, skip_serializing_if = "is_default")]
    pub sweep: SweepBlock,
    #[serde(default, skip_serializing_if = "is_default")]
    pub exact: ExactBlock,
    #[serde(default, skip_serializing_if = "is_default")]
    pub optimize: OptimizeBlock,
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

/// Manifest written next to every output table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub table: String,
    pub config: ExperimentConfig,
}

fn config_error(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Config(format!("field `{field}`: {}", reason.into()))
}

impl ExperimentConfig {
    /// Reads a TOML config, or the `config` section of a JSON manifest.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|x| x == "json") {
            let m: Manifest = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            Ok(m.config)
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        }
    }

    /// Fills every unset value with its default. The result is what the
    /// manifest records.
    pub fn resolved(mut self) -> Result<Self, CliError> {
        if self.alpha.is_some() && self.u_alpha.is_some() {
            return Err(config_error("alpha", "give either `alpha` or `u_alpha`, not both"));
        }
        if self.pi.is_some() && self.baseline.is_some() {
            return Err(config_error("pi", "give either `pi` or `baseline`, not both"));
        }
        let u = *self.u.get_or_insert(30);
        if *self.e.get_or_insert(2) == 0 {
            return Err(config_error("e", "battery capacity must be positive"));
        }
        if self.alpha.is_none() && self.u_alpha.is_none() {
            self.u_alpha = Some(1.0);
        }
        if u == 0 {
            return Err(config_error("u", "must be positive"));
        }
        self.eta.get_or_insert(0.05);
        self.mode.get_or_insert(Mode::Capture);
        self.theta.get_or_insert(SMALL_VALIDATION_THETA);

        let ch = &mut self.channel;
        if ch.noise_db.is_some() && ch.noise_linear.is_some() {
            return Err(config_error(
                "channel.noise_db",
                "give exactly one of `noise_db` and `noise_linear`",
            ));
        }
        if ch.ideal != Some(true) {
            ch.ideal = Some(false);
            ch.slot_length.get_or_insert(SLOT_LENGTH);
            ch.rate.get_or_insert(RATE);
            if ch.noise_linear.is_none() {
                ch.noise_db.get_or_insert(NOISE_DB);
            }
        }

        let defaults = SimParams::default();
        self.sim.slots.get_or_insert(defaults.total_slots);
        self.sim.seed.get_or_insert(defaults.seed);
        self.sim.warmup.get_or_insert(defaults.warmup_slots);
        self.sim.batches.get_or_insert(defaults.batches);

        self.exact.state_cap.get_or_insert(DEFAULT_STATE_CAP);
        self.exact.weighting.get_or_insert(Weighting::Uniform);

        let opt = aoi_core::OptimizerOptions::default();
        self.optimize.metric.get_or_insert(MetricName::AvgAoi);
        self.optimize.backend.get_or_insert(BackendName::Approx);
        self.optimize.starts.get_or_insert(opt.starts);
        self.optimize.max_evaluations.get_or_insert(opt.max_evaluations);
        self.optimize.seed.get_or_insert(opt.seed);

        if self.sweep.outputs.as_ref().is_some_and(|o| o.is_empty()) {
            return Err(config_error("sweep.outputs", "select at least one output"));
        }
        self.sweep.outputs.get_or_insert_with(|| vec![Output::Approx]);
        if let Some(grid) = &self.sweep.u_alpha {
            if grid.is_empty() {
                return Err(config_error("sweep.u_alpha", "grid must not be empty"));
            }
        }
        Ok(self)
    }

    pub fn channel(&self) -> Result<Channel, CliError> {
        let ch = &self.channel;
        if ch.ideal == Some(true) {
            return Ok(Channel::Ideal);
        }
        let n = ch.slot_length.unwrap_or(SLOT_LENGTH);
        let r = ch.rate.unwrap_or(RATE);
        let params = match (ch.noise_db, ch.noise_linear) {
            (_, Some(lin)) => ChannelParams::new(n, r, lin),
            (db, None) => ChannelParams::with_noise_db(n, r, db.unwrap_or(NOISE_DB)),
        };
        params.map(Channel::Awgn).map_err(|e| prefixed("channel", e))
    }

    /// System at the configured load, or at `u_alpha` when given.
    pub fn system(&self, u_alpha: Option<f64>) -> Result<SystemConfig, CliError> {
        let u = self.u.unwrap_or(30);
        if u == 0 {
            return Err(config_error("u", "must be positive"));
        }
        let alpha = match (u_alpha, self.alpha, self.u_alpha) {
            (Some(load), _, _) => load / u as f64,
            (None, Some(a), _) => a,
            (None, None, Some(load)) => load / u as f64,
            (None, None, None) => 1.0 / u as f64,
        };
        if u_alpha.or(self.u_alpha).is_some() && !(0.0..=1.0).contains(&alpha) {
            return Err(config_error(
                "u_alpha",
                format!("gives alpha = {alpha}, which is not a probability in [0, 1]"),
            ));
        }
        let mode: DecodingMode = self.mode.unwrap_or(Mode::Capture).into();
        SystemConfig::new(
            u,
            self.e.unwrap_or(2),
            alpha,
            self.eta.unwrap_or(0.05),
            self.channel()?,
            mode,
        )
        .map_err(CliError::from)
    }

    pub fn theta(&self) -> u64 {
        self.theta.unwrap_or(SMALL_VALIDATION_THETA)
    }

    /// The configured policy with its table label, or `fallback` when
    /// neither `pi` nor `baseline` is set.
    pub fn policies(
        &self,
        fallback: &[BaselineName],
    ) -> Result<Vec<(String, TransmissionPolicy)>, CliError> {
        let e = self.e.unwrap_or(2);
        if let Some(pi) = &self.pi {
            if pi.len() != e {
                return Err(config_error(
                    "pi",
                    format!("has {} entries but the battery capacity is {e}", pi.len()),
                ));
            }
            let p = TransmissionPolicy::new(pi.clone())?;
            return Ok(vec![("given".into(), p)]);
        }
        let names: Vec<BaselineName> = match self.baseline {
            Some(b) => vec![b],
            None => fallback.to_vec(),
        };
        Ok(names
            .into_iter()
            .map(|b| (b.label().to_string(), baseline_policy(b.kind(), e)))
            .collect())
    }

    pub fn sim_params(&self) -> Result<SimParams, CliError> {
        let d = SimParams::default();
        let p = SimParams {
            total_slots: self.sim.slots.unwrap_or(d.total_slots),
            seed: self.sim.seed.unwrap_or(d.seed),
            warmup_slots: self.sim.warmup.unwrap_or(d.warmup_slots),
            theta: self.theta(),
            batches: self.sim.batches.unwrap_or(d.batches),
            ..d
        };
        p.validate(self.u.unwrap_or(30)).map_err(|e| prefixed("sim", e))?;
        Ok(p)
    }

    pub fn weighting(&self) -> RefreshWeighting {
        match self.exact.weighting {
            Some(Weighting::Stationary) => RefreshWeighting::Stationary,
            _ => RefreshWeighting::Uniform,
        }
    }

    /// Sweep points; `None` stands for the base configuration.
    pub fn u_alpha_grid(&self) -> Vec<Option<f64>> {
        match &self.sweep.u_alpha {
            Some(grid) => grid.iter().copied().map(Some).collect(),
            None => vec![None],
        }
    }
}

fn prefixed(block: &str, e: AoiError) -> CliError {
    match e {
        AoiError::InvalidParameter { field, reason } => {
            CliError::Config(format!("field `{block}.{}`: {reason}", crate::config_key(field)))
        }
        other => CliError::from(other),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolution_fills_defaults_and_roundtrips() {
        let c = ExperimentConfig::default().resolved().unwrap();
        assert_eq!(c.u, Some(30));
        assert_eq!(c.channel.noise_db, Some(NOISE_DB));
        let text = toml::to_string(&c).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.clone().resolved().unwrap(), c);
    }

    #[test]
    fn both_noise_forms_rejected() {
        let c: ExperimentConfig =
            toml::from_str("[channel]\nnoise_db = -20\nnoise_linear = 0.01\n").unwrap();
        let err = c.resolved().unwrap_err().to_string();
        assert!(err.contains("noise_db"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let err = toml::from_str::<ExperimentConfig>("u = 3\nalpah = 0.1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("alpah") && msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn policy_length_checked() {
        let c = ExperimentConfig {
            pi: Some(vec![1.0]),
            ..Default::default()
        }
        .resolved()
        .unwrap();
        assert!(c.policies(&[]).unwrap_err().to_string().contains("`pi`"));
    }
}
