//! Slot-level Monte-Carlo simulation of the full protocol.
//!
//! Every device owns a ChaCha stream (`set_stream(device)`) and draws three
//! uniforms per slot in this order: reading arrival, transmit decision,
//! harvest. The draws are made whether or not they are used, so a device's
//! trajectory of random numbers does not depend on the others. Decoding draws
//! from a separate stream.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::delivery::{error_prob_from_sums, singleton_error_prob, Channel};
use crate::error::{AoiError, Result};
use crate::model::{DecodingMode, SystemConfig, TransmissionPolicy};

const DECODE_STREAM: u64 = u64::MAX;

/// Devices whose AoI is recorded.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrackedDevices {
    #[default]
    All,
    Subset(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub total_slots: u64,
    pub seed: u64,
    pub warmup_slots: u64,
    pub theta: u64,
    pub tracked: TrackedDevices,
    /// Number of batches for the batch-means standard errors.
    pub batches: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            total_slots: 1_000_000,
            seed: 0,
            warmup_slots: 10_000,
            theta: 1000,
            tracked: TrackedDevices::All,
            batches: 100,
        }
    }
}

impl SimParams {
    pub fn validate(&self, device_count: usize) -> Result<()> {
        if self.total_slots <= self.warmup_slots {
            return Err(AoiError::InvalidParameter {
                field: "total_slots",
                reason: format!(
                    "{} must exceed warmup_slots = {}",
                    self.total_slots, self.warmup_slots
                ),
            });
        }
        if self.theta < 1 {
            return Err(AoiError::InvalidParameter {
                field: "theta",
                reason: "must be at least 1".into(),
            });
        }
        if self.batches < 2 || self.batches > self.total_slots - self.warmup_slots {
            return Err(AoiError::InvalidParameter {
                field: "batches",
                reason: format!(
                    "{} must lie in [2, measured slots = {}]",
                    self.batches,
                    self.total_slots - self.warmup_slots
                ),
            });
        }
        if let TrackedDevices::Subset(ids) = &self.tracked {
            if ids.is_empty() {
                return Err(AoiError::InvalidParameter {
                    field: "tracked",
                    reason: "subset is empty".into(),
                });
            }
            if let Some(&bad) = ids.iter().find(|&&d| d >= device_count) {
                return Err(AoiError::InvalidParameter {
                    field: "tracked",
                    reason: format!("device {bad} out of range 0..{device_count}"),
                });
            }
        }
        Ok(())
    }
}

/// A point estimate with its batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    /// `|mean - target| <= k * stderr`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub avg_aoi: Estimate,
    pub avp: Estimate,
    pub throughput: Estimate,
    /// Mean of the observed inter-refresh times.
    pub mean_interval: Estimate,
    pub measured_slots: u64,
    pub refreshes: u64,
    /// Inter-refresh time to number of observations.
    pub histogram: BTreeMap<u64, u64>,
}

/// What happened in one slot.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SlotOutcome {
    /// `(device, energy)` of every transmission.
    pub transmissions: Vec<(usize, usize)>,
    pub harvested: Vec<usize>,
    pub decoded: Vec<usize>,
}

/// Decodes one slot. Returns the decoded devices in processing order.
///
/// Without capture only a lone transmission can be decoded. With capture the
/// levels are processed from the highest down; each packet at level `j` is
/// decoded against every packet still present at levels `<= j`, all
/// successes at a level are cancelled together, and a failure at a level
/// stops decoding below it.
pub fn decode_slot<R: Rng>(
    transmissions: &[(usize, usize)],
    mode: DecodingMode,
    channel: &Channel,
    rng: &mut R,
) -> Vec<usize> {
    match mode {
        DecodingMode::NoCapture => match transmissions {
            [(dev, b)] => {
                let eps = singleton_error_prob(*b, channel);
                if rng.gen::<f64>() >= eps {
                    vec![*dev]
                } else {
                    vec![]
                }
            }
            _ => vec![],
        },
        DecodingMode::Capture => {
            let mut by_level: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            let (mut s1, mut s2) = (0.0, 0.0);
            for &(dev, b) in transmissions {
                by_level.entry(b).or_default().push(dev);
                s1 += b as f64;
                s2 += (b * b) as f64;
            }
            let mut decoded = Vec::new();
            for (&j, devs) in by_level.iter().rev() {
                let jf = j as f64;
                let eps = error_prob_from_sums(channel, j, s1 - jf, s2 - jf * jf);
                let mut failed = false;
                for &dev in devs {
                    if rng.gen::<f64>() >= eps {
                        decoded.push(dev);
                    } else {
                        failed = true;
                    }
                }
                if failed {
                    break;
                }
                let k = devs.len() as f64;
                s1 -= k * jf;
                s2 -= k * jf * jf;
            }
            decoded
        }
    }
}

/// Protocol state stepped one slot at a time.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: SystemConfig,
    policy: TransmissionPolicy,
    batteries: Vec<usize>,
    streams: Vec<ChaCha8Rng>,
    decode_rng: ChaCha8Rng,
    slot: u64,
}

impl Simulation {
    pub fn new(config: &SystemConfig, policy: &TransmissionPolicy, seed: u64) -> Result<Self> {
        config.validate()?;
        policy.check_capacity(config.battery_capacity)?;
        let stream = |s: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s);
            rng
        };
        Ok(Self {
            config: config.clone(),
            policy: policy.clone(),
            batteries: vec![0; config.device_count],
            streams: (0..config.device_count as u64).map(&stream).collect(),
            decode_rng: stream(DECODE_STREAM),
            slot: 0,
        })
    }

    pub fn batteries(&self) -> &[usize] {
        &self.batteries
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn step(&mut self) -> SlotOutcome {
        let e = self.config.battery_capacity;
        let alpha = self.config.update_prob;
        let eta = self.config.harvest_prob;
        let mut out = SlotOutcome::default();
        for (dev, rng) in self.streams.iter_mut().enumerate() {
            let reading = rng.gen::<f64>();
            let decide = rng.gen::<f64>();
            let harvest = rng.gen::<f64>();
            let b = self.batteries[dev];
            if b > 0 && reading < alpha && decide < self.policy.prob(b) {
                out.transmissions.push((dev, b));
                self.batteries[dev] = 0;
            } else if b < e && harvest < eta {
                out.harvested.push(dev);
                self.batteries[dev] = b + 1;
            }
        }
        out.decoded = decode_slot(
            &out.transmissions,
            self.config.decoding_mode,
            &self.config.channel,
            &mut self.decode_rng,
        );
        self.slot += 1;
        out
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Batch {
    area: f64,
    violations: f64,
    decoded: f64,
    interval_sum: f64,
    intervals: f64,
}

fn batch_estimate(values: impl Iterator<Item = f64>, mean: f64) -> Estimate {
    let v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
    let n = v.len() as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Estimate {
        mean,
        stderr: (var / n).sqrt(),
    }
}

/// Runs the protocol and returns time-averaged metrics of the tracked devices.
pub fn simulate(
    config: &SystemConfig,
    policy: &TransmissionPolicy,
    params: &SimParams,
) -> Result<SimResult> {
    simulate_with_trace(config, policy, params, None)
}

/// As [`simulate`], optionally writing one `slot,transmissions,decoded` line
/// per measured slot.
pub fn simulate_with_trace(
    config: &SystemConfig,
    policy: &TransmissionPolicy,
    params: &SimParams,
    mut trace: Option<&mut dyn Write>,
) -> Result<SimResult> {
    params.validate(config.device_count)?;
    let mut sim = Simulation::new(config, policy, params.seed)?;
    let u = config.device_count;
    let tracked: Vec<bool> = match &params.tracked {
        TrackedDevices::All => vec![true; u],
        TrackedDevices::Subset(ids) => {
            let mut t = vec![false; u];
            for &d in ids {
                t[d] = true;
            }
            t
        }
    };
    let n_tracked = tracked.iter().filter(|&&t| t).count() as f64;
    let measured = params.total_slots - params.warmup_slots;
    let per_batch = measured / params.batches;
    let mut batches = vec![Batch::default(); params.batches as usize];
    let mut ages = vec![1u64; u];
    let mut histogram = BTreeMap::new();
    let mut delivered = vec![false; u];

    if let Some(w) = trace.as_deref_mut() {
        writeln!(w, "slot,transmissions,decoded").map_err(io_err)?;
    }

    for t in 0..params.total_slots {
        let out = sim.step();
        for &d in &out.decoded {
            delivered[d] = true;
        }
        let measuring = t >= params.warmup_slots;
        // the trailing remainder of slots is folded into the last batch
        let bi = if measuring {
            (((t - params.warmup_slots) / per_batch) as usize).min(batches.len() - 1)
        } else {
            0
        };
        if measuring {
            let batch = &mut batches[bi];
            batch.decoded += out.decoded.len() as f64;
            for dev in 0..u {
                if !tracked[dev] {
                    continue;
                }
                let a = ages[dev];
                batch.area += a as f64 + 0.5;
                if a >= params.theta {
                    batch.violations += 1.0;
                }
                if delivered[dev] {
                    batch.interval_sum += a as f64;
                    batch.intervals += 1.0;
                    *histogram.entry(a).or_insert(0u64) += 1;
                }
            }
            if let Some(w) = trace.as_deref_mut() {
                let tx: Vec<String> = out
                    .transmissions
                    .iter()
                    .map(|(d, b)| format!("{d}:{b}"))
                    .collect();
                let dec: Vec<String> = out.decoded.iter().map(|d| d.to_string()).collect();
                writeln!(w, "{t},{},{}", tx.join(" "), dec.join(" ")).map_err(io_err)?;
            }
        }
        for dev in 0..u {
            if delivered[dev] {
                ages[dev] = 1;
                delivered[dev] = false;
            } else {
                ages[dev] += 1;
            }
        }
    }

    let slot_counts: Vec<f64> = (0..batches.len() as u64)
        .map(|i| {
            if i + 1 == params.batches {
                (measured - per_batch * (params.batches - 1)) as f64
            } else {
                per_batch as f64
            }
        })
        .collect();
    let total = |f: fn(&Batch) -> f64| batches.iter().map(f).sum::<f64>();
    let obs = measured as f64 * n_tracked;
    let avg_aoi = total(|b| b.area) / obs;
    let avp = total(|b| b.violations) / obs;
    let thr = total(|b| b.decoded) / measured as f64;
    let refreshes = total(|b| b.intervals);
    let mean_interval = total(|b| b.interval_sum) / refreshes;
    let per = |f: fn(&Batch) -> f64, scale: f64| {
        batches
            .iter()
            .zip(&slot_counts)
            .map(move |(b, &n)| f(b) / (n * scale))
    };
    Ok(SimResult {
        avg_aoi: batch_estimate(per(|b| b.area, n_tracked), avg_aoi),
        avp: batch_estimate(per(|b| b.violations, n_tracked), avp),
        throughput: batch_estimate(per(|b| b.decoded, 1.0), thr),
        mean_interval: batch_estimate(
            batches.iter().map(|b| b.interval_sum / b.intervals),
            mean_interval,
        ),
        measured_slots: measured,
        refreshes: refreshes as u64,
        histogram,
    })
}

fn io_err(e: std::io::Error) -> AoiError {
    AoiError::InvalidParameter {
        field: "trace",
        reason: e.to_string(),
    }
}

/// Writes the inter-refresh histogram as `interval,count` lines.
pub fn write_histogram<W: Write>(histogram: &BTreeMap<u64, u64>, mut out: W) -> std::io::Result<()> {
    writeln!(out, "interval,count")?;
    for (y, c) in histogram {
        writeln!(out, "{y},{c}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delivery::ChannelParams;

    fn ideal(u: usize, e: usize, alpha: f64, eta: f64, mode: DecodingMode) -> SystemConfig {
        SystemConfig::new(u, e, alpha, eta, Channel::Ideal, mode).unwrap()
    }

    #[test]
    fn empty_slot_decodes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for mode in [DecodingMode::NoCapture, DecodingMode::Capture] {
            assert!(decode_slot(&[], mode, &Channel::Ideal, &mut rng).is_empty());
        }
    }

    #[test]
    fn singleton_with_ideal_channel_decodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = decode_slot(&[(4, 2)], DecodingMode::NoCapture, &Channel::Ideal, &mut rng);
        assert_eq!(d, vec![4]);
    }

    #[test]
    fn collision_without_capture_is_lost() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = decode_slot(&[(0, 1), (1, 2)], DecodingMode::NoCapture, &Channel::Ideal, &mut rng);
        assert!(d.is_empty());
    }

    #[test]
    fn sic_resolves_two_levels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = decode_slot(&[(0, 1), (1, 2)], DecodingMode::Capture, &Channel::Ideal, &mut rng);
        assert_eq!(d, vec![1, 0]);
    }

    #[test]
    fn failure_stops_lower_levels() {
        // two equal-power packets at the top level jam each other at this SNR
        let ch = Channel::Awgn(ChannelParams::with_noise_db(100, 0.8, -20.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = decode_slot(&[(0, 1), (1, 2), (2, 2)], DecodingMode::Capture, &ch, &mut rng);
        assert!(d.is_empty());
    }

    #[test]
    fn same_seed_same_result() {
        let config = ideal(3, 2, 0.3, 0.2, DecodingMode::Capture);
        let policy = TransmissionPolicy::new(vec![0.5, 1.0]).unwrap();
        let params = SimParams {
            total_slots: 20_000,
            warmup_slots: 1000,
            theta: 10,
            seed: 9,
            ..SimParams::default()
        };
        let a = simulate(&config, &policy, &params).unwrap();
        let b = simulate(&config, &policy, &params).unwrap();
        assert_eq!(a, b);
        let c = simulate(&config, &policy, &SimParams { seed: 10, ..params }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_params_rejected() {
        let config = ideal(2, 1, 0.3, 0.2, DecodingMode::NoCapture);
        let policy = TransmissionPolicy::new(vec![1.0]).unwrap();
        let bad = SimParams {
            total_slots: 10,
            warmup_slots: 10,
            ..SimParams::default()
        };
        assert!(simulate(&config, &policy, &bad).is_err());
        let bad = SimParams {
            tracked: TrackedDevices::Subset(vec![2]),
            ..SimParams::default()
        };
        assert!(bad.validate(2).is_err());
    }

    #[test]
    fn trace_has_header_and_rows() {
        let config = ideal(2, 1, 0.5, 0.5, DecodingMode::NoCapture);
        let policy = TransmissionPolicy::new(vec![1.0]).unwrap();
        let params = SimParams {
            total_slots: 120,
            warmup_slots: 20,
            theta: 5,
            ..SimParams::default()
        };
        let mut buf = Vec::new();
        simulate_with_trace(&config, &policy, &params, Some(&mut buf)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 101);
        assert!(text.starts_with("slot,transmissions,decoded\n20,"));
    }
}
