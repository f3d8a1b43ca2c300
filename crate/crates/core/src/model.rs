//! Domain types shared across the crate, the single-device battery chain and
//! the battery-profile chain of the devices other than the tagged one.
//!
//! The battery of a device evolves as a birth/reset chain on `0..=E`:
//! an empty battery can only harvest, a non-empty one resets to zero when it
//! transmits (with probability `alpha * pi_b`) and otherwise harvests one unit
//! with probability `eta` unless it is already full.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::delivery::{Channel, DeliveryOptions};
use crate::error::{check_prob, AoiError, Result};

/// Row-sum tolerance for every stochastic matrix built here.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecodingMode {
    /// Only singleton slots are decoded.
    NoCapture,
    /// Every packet is decoded treating the others as noise, with successive
    /// interference cancellation from the highest energy level down.
    Capture,
}

impl std::fmt::Display for DecodingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DecodingMode::NoCapture => f.write_str("no-capture"),
            DecodingMode::Capture => f.write_str("capture"),
        }
    }
}

impl std::str::FromStr for DecodingMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "no-capture" | "nocapture" | "no_capture" => Ok(DecodingMode::NoCapture),
            "capture" => Ok(DecodingMode::Capture),
            other => Err(format!("unknown decoding mode `{other}` (expected capture|no-capture)")),
        }
    }
}

/// Population, battery, traffic, harvesting and channel parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Number of devices `U`.
    pub device_count: usize,
    /// Battery capacity `E` in energy units.
    pub battery_capacity: usize,
    /// Probability `alpha` that a device gets a new reading in a slot.
    pub update_prob: f64,
    /// Probability `eta` that a device harvests one energy unit in a slot.
    pub harvest_prob: f64,
    pub channel: Channel,
    pub decoding_mode: DecodingMode,
    #[serde(default)]
    pub delivery: DeliveryOptions,
}

impl SystemConfig {
    pub fn new(
        device_count: usize,
        battery_capacity: usize,
        update_prob: f64,
        harvest_prob: f64,
        channel: Channel,
        decoding_mode: DecodingMode,
    ) -> Result<Self> {
        let config = Self {
            device_count,
            battery_capacity,
            update_prob,
            harvest_prob,
            channel,
            decoding_mode,
            delivery: DeliveryOptions::default(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.device_count == 0 {
            return Err(AoiError::InvalidParameter {
                field: "device_count",
                reason: "at least one device is required".into(),
            });
        }
        if self.battery_capacity == 0 {
            return Err(AoiError::InvalidParameter {
                field: "battery_capacity",
                reason: "battery capacity must be at least one energy unit".into(),
            });
        }
        check_prob("update_prob", self.update_prob)?;
        check_prob("harvest_prob", self.harvest_prob)?;
        self.channel.validate()
    }

    /// Mean number of new readings per slot across the population (`U * alpha`).
    pub fn offered_load(&self) -> f64 {
        self.device_count as f64 * self.update_prob
    }

    /// Copy of this configuration with `alpha` chosen so that `U * alpha = load`.
    pub fn with_offered_load(&self, load: f64) -> Result<Self> {
        let mut c = self.clone();
        c.update_prob = load / self.device_count as f64;
        c.validate()?;
        Ok(c)
    }
}

/// Transmission probabilities `(pi_1, ..., pi_E)`; an empty battery never transmits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransmissionPolicy {
    probs: Vec<f64>,
}

impl TransmissionPolicy {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(AoiError::InvalidParameter {
                field: "policy",
                reason: "policy needs one probability per battery level".into(),
            });
        }
        for &p in &probs {
            check_prob("policy", p)?;
        }
        Ok(Self { probs })
    }

    /// Builds a policy by clipping every coordinate into `[0, 1]`.
    pub fn clipped(values: &[f64]) -> Self {
        Self {
            probs: values
                .iter()
                .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
                .collect(),
        }
    }

    /// `pi_b`, with `pi_0 = 0`.
    #[inline]
    pub fn prob(&self, level: usize) -> f64 {
        if level == 0 {
            0.0
        } else {
            self.probs[level - 1]
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Battery capacity this policy is defined for.
    pub fn capacity(&self) -> usize {
        self.probs.len()
    }

    pub fn check_capacity(&self, capacity: usize) -> Result<()> {
        if self.probs.len() != capacity {
            return Err(AoiError::DimensionMismatch {
                what: "policy length vs battery capacity",
                expected: capacity,
                actual: self.probs.len(),
            });
        }
        Ok(())
    }

    pub fn is_silent(&self) -> bool {
        self.probs.iter().all(|&p| p == 0.0)
    }
}

impl std::fmt::Display for TransmissionPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.probs.iter().map(|p| format!("{p:.6}")).collect();
        write!(f, "({})", parts.join(";"))
    }
}

/// Steady-state battery level distribution `(nu_0, ..., nu_E)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BatteryDistribution {
    nu: Vec<f64>,
}

impl BatteryDistribution {
    pub fn new(nu: Vec<f64>) -> Result<Self> {
        let sum: f64 = nu.iter().sum();
        if nu.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) || (sum - 1.0).abs() > 1e-12 {
            return Err(AoiError::InvalidParameter {
                field: "battery_distribution",
                reason: format!("entries must be nonnegative and sum to one (sum = {sum})"),
            });
        }
        Ok(Self { nu })
    }

    pub fn probs(&self) -> &[f64] {
        &self.nu
    }

    pub fn capacity(&self) -> usize {
        self.nu.len() - 1
    }
}

/// Occupancy counts `(L_0, ..., L_E)` of the battery levels of the other devices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BatteryProfile {
    counts: Vec<usize>,
}

impl BatteryProfile {
    pub fn new(counts: Vec<usize>) -> Self {
        Self { counts }
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn capacity(&self) -> usize {
        self.counts.len() - 1
    }
}

/// Dense square row-stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    entries: DMatrix<f64>,
}

impl StochasticMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(AoiError::DimensionMismatch {
                what: "stochastic matrix must be square",
                expected: entries.nrows(),
                actual: entries.ncols(),
            });
        }
        for (i, row) in entries.row_iter().enumerate() {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(AoiError::InvalidParameter {
                    field: "stochastic_matrix",
                    reason: format!("row {i} has an entry outside [0, 1]"),
                });
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(AoiError::InvalidParameter {
                    field: "stochastic_matrix",
                    reason: format!("row {i} sums to {s}"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    #[inline]
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.entries[(from, to)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }
}

/// Transition matrix of the battery chain of one device (dimension `E + 1`).
pub fn m1_transition_matrix(
    config: &SystemConfig,
    policy: &TransmissionPolicy,
) -> Result<StochasticMatrix> {
    let e = config.battery_capacity;
    policy.check_capacity(e)?;
    let alpha = config.update_prob;
    let eta = config.harvest_prob;
    let mut m = DMatrix::zeros(e + 1, e + 1);
    m[(0, 0)] = 1.0 - eta;
    m[(0, 1)] = eta;
    for i in 1..=e {
        let tx = alpha * policy.prob(i);
        m[(i, 0)] += tx;
        if i < e {
            m[(i, i)] += (1.0 - eta) * (1.0 - tx);
            m[(i, i + 1)] += eta * (1.0 - tx);
        } else {
            m[(i, i)] += 1.0 - tx;
        }
    }
    StochasticMatrix::new(m)
}

/// Stationary distribution of the battery chain.
///
/// Solves `nu^T (P - I) = 0` with the last balance equation replaced by
/// `sum(nu) = 1`. A chain without harvesting has no unique stationary law and
/// is rejected.
pub fn battery_steady_state(m1: &StochasticMatrix) -> Result<BatteryDistribution> {
    let n = m1.dim();
    if n < 2 {
        return Err(AoiError::DegenerateChain("battery chain needs at least two levels".into()));
    }
    if m1.get(0, 1) <= 0.0 {
        return Err(AoiError::DegenerateChain(
            "no energy is ever harvested, so the stationary distribution is not unique".into(),
        ));
    }
    let mut a = m1.as_matrix().transpose() - DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let nu = a
        .lu()
        .solve(&rhs)
        .ok_or(AoiError::Singular("battery balance equations"))?;
    // round-off can leave tiny negative entries on transient levels
    let mut nu: Vec<f64> = nu.iter().map(|&p| p.max(0.0)).collect();
    let s: f64 = nu.iter().sum();
    nu.iter_mut().for_each(|p| *p /= s);
    BatteryDistribution::new(nu)
}

/// All compositions of `device_count` into `capacity + 1` parts.
///
/// Profiles are listed in colexicographic order: `L_E` is the most
/// significant component, then `L_{E-1}`, down to `L_0`, all ascending.
pub fn enumerate_profiles(device_count: usize, capacity: usize) -> Vec<BatteryProfile> {
    fn rec(level: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<BatteryProfile>) {
        if level == 0 {
            cur[0] = left;
            out.push(BatteryProfile::new(cur.clone()));
            return;
        }
        for k in 0..=left {
            cur[level] = k;
            rec(level - 1, left - k, cur, out);
        }
        cur[level] = 0;
    }
    let mut out = Vec::with_capacity(profile_count(device_count, capacity));
    let mut cur = vec![0; capacity + 1];
    rec(capacity, device_count, &mut cur, &mut out);
    out
}

/// Number of battery profiles, `C(device_count + capacity, capacity)`.
pub fn profile_count(device_count: usize, capacity: usize) -> usize {
    let mut c: u128 = 1;
    for k in 1..=capacity as u128 {
        c = c * (device_count as u128 + k) / k;
        if c > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    c as usize
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

#[inline]
fn pow(p: f64, k: usize) -> f64 {
    if k == 0 {
        1.0
    } else {
        p.powi(k as i32)
    }
}

/// Probability that the other devices' profile moves from `from` to `to` in one slot.
///
/// Every device follows the battery chain independently, so a device at level
/// `j` either stays, moves to `j + 1` or resets to `0`. The sum runs over all
/// feasible flow tables `u_{j,k}`; with both end profiles fixed, the only free
/// quantities are `u_{0,0}` and the resets `u_{j,0}` for `1 <= j < E`, and
/// everything else is forced level by level.
pub fn profile_transition_prob(
    from: &BatteryProfile,
    to: &BatteryProfile,
    m1: &StochasticMatrix,
) -> Result<f64> {
    let e = m1.dim() - 1;
    if from.counts.len() != e + 1 || to.counts.len() != e + 1 {
        return Err(AoiError::DimensionMismatch {
            what: "profile length vs battery chain",
            expected: e + 1,
            actual: from.counts.len().max(to.counts.len()),
        });
    }
    if from.total() != to.total() {
        return Err(AoiError::InconsistentProfiles {
            from: from.total(),
            to: to.total(),
        });
    }
    let src = &from.counts;
    let dst = &to.counts;

    struct Walk<'a> {
        src: &'a [usize],
        dst: &'a [usize],
        m1: &'a StochasticMatrix,
        e: usize,
    }

    impl Walk<'_> {
        /// Levels `1..=E`; `carry` devices arrive at `level` from below and
        /// `resets` devices may still return to level 0.
        fn level(&self, level: usize, carry: usize, resets: usize) -> f64 {
            let (src, dst, m1, e) = (self.src, self.dst, self.m1, self.e);
            if carry > dst[level] {
                return 0.0;
            }
            let stay = dst[level] - carry;
            if stay > src[level] {
                return 0.0;
            }
            let rest = src[level] - stay;
            if level == e {
                // at a full battery the remaining devices must all reset
                if rest != resets {
                    return 0.0;
                }
                return binomial(src[e], rest)
                    * pow(m1.get(e, e), stay)
                    * pow(m1.get(e, 0), rest);
            }
            let mut total = 0.0;
            for reset in 0..=rest.min(resets) {
                let up = rest - reset;
                let coeff = binomial(src[level], reset) * binomial(src[level] - reset, stay);
                let w = coeff
                    * pow(m1.get(level, 0), reset)
                    * pow(m1.get(level, level), stay)
                    * pow(m1.get(level, level + 1), up);
                if w == 0.0 {
                    continue;
                }
                total += w * self.level(level + 1, up, resets - reset);
            }
            total
        }
    }

    let walk = Walk { src, dst, m1, e };
    let mut total = 0.0;
    for stay0 in 0..=src[0].min(dst[0]) {
        let up0 = src[0] - stay0;
        let w = binomial(src[0], stay0) * pow(m1.get(0, 0), stay0) * pow(m1.get(0, 1), up0);
        if w == 0.0 {
            continue;
        }
        total += w * walk.level(1, up0, dst[0] - stay0);
    }
    Ok(total)
}

/// Indexed profile space with its one-slot transition matrix.
#[derive(Debug, Clone)]
pub struct ProfileChain {
    profiles: Vec<BatteryProfile>,
    index: HashMap<BatteryProfile, usize>,
    transitions: DMatrix<f64>,
}

impl ProfileChain {
    /// Builds the transition matrix by pushing each source profile forward
    /// through every per-level split into (reset, stay, up).
    pub fn build(device_count: usize, m1: &StochasticMatrix) -> Self {
        let e = m1.dim() - 1;
        let profiles = enumerate_profiles(device_count, e);
        let index: HashMap<BatteryProfile, usize> = profiles
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, p)| (p, i))
            .collect();
        let n = profiles.len();
        let mut transitions = DMatrix::zeros(n, n);
        let mut dst = vec![0usize; e + 1];
        for (i, p) in profiles.iter().enumerate() {
            dst.iter_mut().for_each(|d| *d = 0);
            push_forward(p.counts(), 0, 1.0, m1, &mut dst, &mut |d, w| {
                let j = index[&BatteryProfile::new(d.to_vec())];
                transitions[(i, j)] += w;
            });
        }
        Self {
            profiles,
            index,
            transitions,
        }
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn profiles(&self) -> &[BatteryProfile] {
        &self.profiles
    }

    pub fn index_of(&self, profile: &BatteryProfile) -> Option<usize> {
        self.index.get(profile).copied()
    }

    pub fn transitions(&self) -> &DMatrix<f64> {
        &self.transitions
    }
}

fn push_forward(
    src: &[usize],
    level: usize,
    weight: f64,
    m1: &StochasticMatrix,
    dst: &mut [usize],
    emit: &mut dyn FnMut(&[usize], f64),
) {
    let e = src.len() - 1;
    if level > e {
        emit(dst, weight);
        return;
    }
    let n = src[level];
    if level == 0 {
        for up in 0..=n {
            let stay = n - up;
            let w = binomial(n, up) * pow(m1.get(0, 0), stay) * pow(m1.get(0, 1), up);
            if w == 0.0 {
                continue;
            }
            dst[0] += stay;
            dst[1] += up;
            push_forward(src, 1, weight * w, m1, dst, emit);
            dst[0] -= stay;
            dst[1] -= up;
        }
    } else if level == e {
        for reset in 0..=n {
            let stay = n - reset;
            let w = binomial(n, reset) * pow(m1.get(e, 0), reset) * pow(m1.get(e, e), stay);
            if w == 0.0 {
                continue;
            }
            dst[0] += reset;
            dst[e] += stay;
            push_forward(src, e + 1, weight * w, m1, dst, emit);
            dst[0] -= reset;
            dst[e] -= stay;
        }
    } else {
        for reset in 0..=n {
            for stay in 0..=n - reset {
                let up = n - reset - stay;
                let w = binomial(n, reset)
                    * binomial(n - reset, stay)
                    * pow(m1.get(level, 0), reset)
                    * pow(m1.get(level, level), stay)
                    * pow(m1.get(level, level + 1), up);
                if w == 0.0 {
                    continue;
                }
                dst[0] += reset;
                dst[level] += stay;
                dst[level + 1] += up;
                push_forward(src, level + 1, weight * w, m1, dst, emit);
                dst[0] -= reset;
                dst[level] -= stay;
                dst[level + 1] -= up;
            }
        }
    }
}

/// Multinomial pmf of `profile` with event probabilities `nu`.
pub fn multinomial_pmf(profile: &BatteryProfile, nu: &[f64]) -> f64 {
    let mut left = profile.total();
    let mut p = 1.0;
    for (&k, &q) in profile.counts().iter().zip(nu) {
        p *= binomial(left, k) * pow(q, k);
        left -= k;
    }
    p
}
