//! Packet delivery model: finite-blocklength error probabilities on an AWGN
//! slot, with or without capture and successive interference cancellation,
//! and the success probabilities and throughput derived from them.
//!
//! Energies are integers (battery units). With `n` channel uses per slot and
//! noise power `sigma2`, a packet sent with `b` units has SNR `b / (n sigma2)`.
//! Interference is summarised by two integer sums over the interfering
//! packets, `sum(i)` and `sum(i^2)`, which is all the dispersion formula needs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{AoiError, Result};
use crate::model::{
    enumerate_profiles, multinomial_pmf, profile_count, BatteryDistribution, BatteryProfile,
    DecodingMode, SystemConfig, TransmissionPolicy,
};

/// Arguments of the Q-function are clamped to this magnitude.
pub const Q_ARG_CLAMP: f64 = 38.0;

/// Slot-level AWGN channel parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Channel uses per slot `n`.
    pub slot_length: usize,
    /// Rate `R` in bits per channel use.
    pub rate: f64,
    /// Noise power `sigma^2` on a linear scale.
    pub noise_power: f64,
}

impl ChannelParams {
    pub fn new(slot_length: usize, rate: f64, noise_power: f64) -> Result<Self> {
        let ch = Self {
            slot_length,
            rate,
            noise_power,
        };
        ch.validate()?;
        Ok(ch)
    }

    pub fn with_noise_db(slot_length: usize, rate: f64, noise_db: f64) -> Result<Self> {
        Self::new(slot_length, rate, db_to_linear(noise_db))
    }

    pub fn validate(&self) -> Result<()> {
        if self.slot_length == 0 {
            return Err(AoiError::InvalidParameter {
                field: "slot_length",
                reason: "a slot needs at least one channel use".into(),
            });
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(AoiError::InvalidParameter {
                field: "rate",
                reason: format!("rate must be positive, got {}", self.rate),
            });
        }
        if !(self.noise_power > 0.0 && self.noise_power.is_finite()) {
            return Err(AoiError::InvalidParameter {
                field: "noise_power",
                reason: format!("noise power must be positive, got {}", self.noise_power),
            });
        }
        Ok(())
    }

    /// `n * sigma^2`: the noise energy of one slot.
    fn noise_energy(&self) -> f64 {
        self.slot_length as f64 * self.noise_power
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Error model of a slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Channel {
    /// Finite-blocklength normal approximation on a real AWGN channel.
    Awgn(ChannelParams),
    /// Every packet with nonzero energy is decoded whenever decoding is attempted.
    Ideal,
}

impl Channel {
    pub fn validate(&self) -> Result<()> {
        match self {
            Channel::Awgn(p) => p.validate(),
            Channel::Ideal => Ok(()),
        }
    }
}

/// How a collision-free slot is computed without capture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SingletonRule {
    /// Another device at level `i` is silent with probability `1 - alpha * pi_i`.
    #[default]
    ReadingAndPolicy,
    /// Another device at level `i` is silent with probability `1 - pi_i`
    /// (readings are assumed always available to the interferers).
    PolicyOnly,
}

/// Interference state against which higher-level packets are decoded in the
/// capture success probability of a tagged packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SicReference {
    /// A level-`j` packet sees every remaining packet at levels `<= j`.
    #[default]
    OwnLevel,
    /// A level-`j` packet is scored against the tagged packet's interference state.
    TaggedLevel,
}

/// Knobs of the delivery model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeliveryOptions {
    pub singleton_rule: SingletonRule,
    pub sic_reference: SicReference,
    /// Largest number of interferer-count configurations enumerated exactly
    /// for one battery profile; larger supports are sampled.
    pub support_cap: usize,
    /// Number of Monte-Carlo draws when the support is too large.
    pub samples: usize,
    pub seed: u64,
    /// Largest profile space averaged by direct enumeration; larger
    /// populations use the thinned-multinomial expansion.
    pub profile_cap: usize,
    /// Branches of the thinned-multinomial expansion whose probability mass
    /// times success bound falls below this are dropped.
    pub truncation: f64,
}

impl Default for DeliveryOptions {
    fn default() -> Self {
        Self {
            singleton_rule: SingletonRule::default(),
            sic_reference: SicReference::default(),
            support_cap: 100_000,
            samples: 10_000,
            seed: 0x5eed,
            profile_cap: 2_000,
            truncation: 1e-16,
        }
    }
}

/// Gaussian tail `Q(x) = P[N(0,1) > x]`.
pub fn q_function(x: f64) -> f64 {
    let x = x.clamp(-Q_ARG_CLAMP, Q_ARG_CLAMP);
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Transmit counts of the interfering devices per energy level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterferenceState {
    transmit_counts: Vec<usize>,
}

impl InterferenceState {
    pub fn new(transmit_counts: Vec<usize>) -> Self {
        Self { transmit_counts }
    }

    pub fn none(capacity: usize) -> Self {
        Self::new(vec![0; capacity + 1])
    }

    pub fn counts(&self) -> &[usize] {
        &self.transmit_counts
    }

    /// `(sum i * L_i, sum i^2 * L_i)` in energy units.
    pub fn energy_sums(&self) -> (f64, f64) {
        self.transmit_counts
            .iter()
            .enumerate()
            .fold((0.0, 0.0), |(s1, s2), (i, &k)| {
                let (i, k) = (i as f64, k as f64);
                (s1 + i * k, s2 + i * i * k)
            })
    }

    /// Interference-to-noise ratio.
    pub fn inr(&self, ch: &ChannelParams) -> f64 {
        self.energy_sums().0 / ch.noise_energy()
    }

    /// Second-moment term of the interference, normalised by `(n sigma^2)^2`.
    pub fn second_moment(&self, ch: &ChannelParams) -> f64 {
        self.energy_sums().1 / (ch.noise_energy() * ch.noise_energy())
    }

    /// SINR of a packet with `energy` units against this interference.
    pub fn sinr(&self, energy: usize, ch: &ChannelParams) -> f64 {
        (energy as f64 / ch.noise_energy()) / (self.inr(ch) + 1.0)
    }
}

/// Error probability of a packet with `energy` units, treating interference
/// with energy sums `(s1, s2)` as noise.
pub fn error_prob_from_sums(channel: &Channel, energy: usize, s1: f64, s2: f64) -> f64 {
    if energy == 0 {
        return 1.0;
    }
    let ch = match channel {
        Channel::Ideal => return 0.0,
        Channel::Awgn(ch) => ch,
    };
    let ne = ch.noise_energy();
    let x = energy as f64 / ne;
    let pt = s1 / ne;
    let pb = s2 / (ne * ne);
    let sinr = x / (pt + 1.0);
    let capacity = 0.5 * (1.0 + sinr).log2();
    let log2e = std::f64::consts::LOG2_E;
    let dispersion = (x * x * (1.0 + 2.0 * pt + pt * pt - pb) + 2.0 * x * (pt + 1.0).powi(3))
        / (2.0 * (pt + 1.0).powi(2) * (x + pt + 1.0).powi(2))
        * log2e
        * log2e;
    if !(dispersion > 0.0) {
        return if capacity > ch.rate { 0.0 } else { 1.0 };
    }
    let arg = (ch.slot_length as f64 / dispersion).sqrt() * (capacity - ch.rate);
    q_function(arg).clamp(0.0, 1.0)
}

/// Error probability of a packet alone in its slot.
pub fn singleton_error_prob(energy: usize, channel: &Channel) -> f64 {
    error_prob_from_sums(channel, energy, 0.0, 0.0)
}

/// Error probability of a packet decoded against `interferers`.
pub fn capture_error_prob(energy: usize, interferers: &InterferenceState, channel: &Channel) -> f64 {
    let (s1, s2) = interferers.energy_sums();
    error_prob_from_sums(channel, energy, s1, s2)
}

fn silence_prob(level: usize, policy: &TransmissionPolicy, alpha: f64, rule: SingletonRule) -> f64 {
    match rule {
        SingletonRule::ReadingAndPolicy => 1.0 - alpha * policy.prob(level),
        SingletonRule::PolicyOnly => 1.0 - policy.prob(level),
    }
}

/// Success probability without capture given the other devices' profile.
pub fn success_prob_no_capture(
    energy: usize,
    profile: &BatteryProfile,
    policy: &TransmissionPolicy,
    alpha: f64,
    channel: &Channel,
    opts: &DeliveryOptions,
) -> f64 {
    let others: f64 = profile
        .counts()
        .iter()
        .enumerate()
        .map(|(i, &l)| silence_prob(i, policy, alpha, opts.singleton_rule).powi(l as i32))
        .product();
    (1.0 - singleton_error_prob(energy, channel)) * others
}

/// Probability that the tagged packet at `energy` is recovered by SIC when
/// the other transmitting packets per level are `counts` (index = level).
///
/// Levels above the tagged one must all be decoded first; each level-`j`
/// packet is decoded against every packet still present at levels `<= j`.
pub fn sic_success_given(
    energy: usize,
    counts: &[usize],
    channel: &Channel,
    reference: SicReference,
) -> f64 {
    let e = counts.len() - 1;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut tagged = (0.0, 0.0);
    let mut p = 1.0;
    for (j, &k) in counts.iter().enumerate().skip(1) {
        let (jf, kf) = (j as f64, k as f64);
        s1 += jf * kf;
        s2 += jf * jf * kf;
        if j == energy {
            tagged = (s1, s2);
            p *= 1.0 - error_prob_from_sums(channel, energy, s1, s2);
        }
        if j > energy && k > 0 {
            let eps = match reference {
                SicReference::OwnLevel => {
                    let b = energy as f64;
                    error_prob_from_sums(channel, j, s1 - jf + b, s2 - jf * jf + b * b)
                }
                SicReference::TaggedLevel => error_prob_from_sums(channel, j, tagged.0, tagged.1),
            };
            p *= (1.0 - eps).powi(k as i32);
        }
        if p == 0.0 {
            return 0.0;
        }
    }
    debug_assert!(energy <= e);
    p
}

/// Binomial law of the number of transmitters at one level, possibly
/// conditioned on the transmitters already placed at lower levels.
#[derive(Debug, Clone, Copy)]
struct LevelLaw {
    trials: usize,
    prob: f64,
}

impl LevelLaw {
    fn mean(&self) -> f64 {
        self.trials as f64 * self.prob
    }

    fn pmf(&self, k: usize) -> f64 {
        let (n, p) = (self.trials, self.prob);
        if k > n {
            return 0.0;
        }
        if p <= 0.0 {
            return if k == 0 { 1.0 } else { 0.0 };
        }
        if p >= 1.0 {
            return if k == n { 1.0 } else { 0.0 };
        }
        let ln = ln_binomial(n as u64, k as u64) + k as f64 * p.ln() + (n - k) as f64 * (-p).ln_1p();
        ln.exp()
    }
}

/// Expectation of [`sic_success_given`] over transmitter counts drawn level
/// by level from `law(level, placed_so_far)`.
///
/// Levels are visited bottom-up. Once the tagged level is placed its success
/// factor is known; before that, the tagged factor evaluated on the partial
/// interference is an upper bound because the error probability does not
/// decrease with more interferers. Branches whose mass times bound is below
/// `cutoff` are dropped; `cutoff = 0` enumerates the whole support.
struct SicExpansion<'a, F: Fn(usize, usize) -> LevelLaw> {
    energy: usize,
    capacity: usize,
    channel: &'a Channel,
    reference: SicReference,
    law: F,
    cutoff: f64,
}

impl<F: Fn(usize, usize) -> LevelLaw> SicExpansion<'_, F> {
    fn run(&self) -> f64 {
        self.visit(1, 0, 0.0, 0.0, (0.0, 0.0), 1.0, 1.0)
    }

    #[allow(clippy::too_many_arguments)]
    fn visit(
        &self,
        level: usize,
        placed: usize,
        s1: f64,
        s2: f64,
        tagged: (f64, f64),
        mass: f64,
        factor: f64,
    ) -> f64 {
        if level > self.capacity {
            return mass * factor;
        }
        let law = (self.law)(level, placed);
        let mean = law.mean();
        let jf = level as f64;
        let b = self.energy as f64;
        let mut total = 0.0;
        for k in 0..=law.trials {
            let pk = law.pmf(k);
            let m = mass * pk;
            if m == 0.0 || m < self.cutoff {
                if k as f64 > mean {
                    break;
                }
                continue;
            }
            let kf = k as f64;
            let (t1, t2) = (s1 + jf * kf, s2 + jf * jf * kf);
            let mut f = factor;
            let mut tag = tagged;
            let bound;
            if level == self.energy {
                tag = (t1, t2);
                f *= 1.0 - error_prob_from_sums(self.channel, self.energy, t1, t2);
                bound = f;
            } else if level > self.energy {
                if k > 0 {
                    let eps = match self.reference {
                        SicReference::OwnLevel => error_prob_from_sums(
                            self.channel,
                            level,
                            t1 - jf + b,
                            t2 - jf * jf + b * b,
                        ),
                        SicReference::TaggedLevel => {
                            error_prob_from_sums(self.channel, level, tag.0, tag.1)
                        }
                    };
                    f *= (1.0 - eps).powi(k as i32);
                }
                bound = f;
            } else {
                bound = f * (1.0 - error_prob_from_sums(self.channel, self.energy, t1, t2));
            }
            if bound == 0.0 || m * bound < self.cutoff {
                if k as f64 > mean {
                    break;
                }
                continue;
            }
            total += self.visit(level + 1, placed + k, t1, t2, tag, m, f);
        }
        total
    }
}

fn support_size(profile: &BatteryProfile) -> usize {
    profile
        .counts()
        .iter()
        .skip(1)
        .fold(1usize, |acc, &l| acc.saturating_mul(l + 1))
}

/// Success probability with capture and SIC given the other devices'
/// profile: the expectation over independent binomial transmitter counts.
pub fn success_prob_capture(
    energy: usize,
    profile: &BatteryProfile,
    policy: &TransmissionPolicy,
    alpha: f64,
    channel: &Channel,
    opts: &DeliveryOptions,
) -> f64 {
    if energy == 0 {
        return 0.0;
    }
    let counts = profile.counts();
    let capacity = counts.len() - 1;
    if support_size(profile) <= opts.support_cap {
        let expansion = SicExpansion {
            energy,
            capacity,
            channel,
            reference: opts.sic_reference,
            law: |level: usize, _| LevelLaw {
                trials: counts[level],
                prob: alpha * policy.prob(level),
            },
            cutoff: 0.0,
        };
        return expansion.run().clamp(0.0, 1.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    sample_capture_success(energy, counts, policy, alpha, channel, opts, &mut rng)
}

fn sample_capture_success<R: Rng>(
    energy: usize,
    counts: &[usize],
    policy: &TransmissionPolicy,
    alpha: f64,
    channel: &Channel,
    opts: &DeliveryOptions,
    rng: &mut R,
) -> f64 {
    let laws: Vec<Binomial> = counts
        .iter()
        .enumerate()
        .map(|(i, &l)| Binomial::new(l as u64, (alpha * policy.prob(i)).clamp(0.0, 1.0)).unwrap())
        .collect();
    let mut drawn = vec![0usize; counts.len()];
    let mut sum = 0.0;
    for _ in 0..opts.samples.max(1) {
        for (d, law) in drawn.iter_mut().zip(&laws) {
            *d = law.sample(rng) as usize;
        }
        drawn[0] = 0;
        sum += sic_success_given(energy, &drawn, channel, opts.sic_reference);
    }
    sum / opts.samples.max(1) as f64
}

/// Success probability of a packet with `energy` units given the profile of
/// the other devices, for the configured decoding mode.
pub fn success_prob(
    config: &SystemConfig,
    policy: &TransmissionPolicy,
    energy: usize,
    profile: &BatteryProfile,
) -> f64 {
    match config.decoding_mode {
        DecodingMode::NoCapture => success_prob_no_capture(
            energy,
            profile,
            policy,
            config.update_prob,
            &config.channel,
            &config.delivery,
        ),
        DecodingMode::Capture => success_prob_capture(
            energy,
            profile,
            policy,
            config.update_prob,
            &config.channel,
            &config.delivery,
        ),
    }
}

/// Success probability averaged over the other devices' profile drawn from
/// the multinomial law with `U - 1` trials and event probabilities `nu`.
pub fn avg_success_prob(
    energy: usize,
    nu: &BatteryDistribution,
    device_count: usize,
    policy: &TransmissionPolicy,
    alpha: f64,
    channel: &Channel,
    mode: DecodingMode,
    opts: &DeliveryOptions,
) -> f64 {
    if energy == 0 {
        return 0.0;
    }
    let others = device_count - 1;
    let capacity = nu.capacity();
    match mode {
        DecodingMode::NoCapture => {
            // product of independent per-device silence factors
            let per_device: f64 = nu
                .probs()
                .iter()
                .enumerate()
                .map(|(i, &q)| q * silence_prob(i, policy, alpha, opts.singleton_rule))
                .sum();
            (1.0 - singleton_error_prob(energy, channel)) * per_device.powi(others as i32)
        }
        DecodingMode::Capture => {
            if profile_count(others, capacity) <= opts.profile_cap {
                enumerate_profiles(others, capacity)
                    .iter()
                    .map(|p| {
                        multinomial_pmf(p, nu.probs())
                            * success_prob_capture(energy, p, policy, alpha, channel, opts)
                    })
                    .sum::<f64>()
                    .clamp(0.0, 1.0)
            } else {
                thinned_capture_success(energy, nu, others, policy, alpha, channel, opts)
            }
        }
    }
}

/// Each of the `others` devices independently transmits at level `i` with
/// probability `nu_i * alpha * pi_i`, so the per-level transmitter counts are
/// jointly multinomial and can be placed level by level as conditional
/// binomials.
fn thinned_capture_success(
    energy: usize,
    nu: &BatteryDistribution,
    others: usize,
    policy: &TransmissionPolicy,
    alpha: f64,
    channel: &Channel,
    opts: &DeliveryOptions,
) -> f64 {
    let capacity = nu.capacity();
    let tx: Vec<f64> = (0..=capacity)
        .map(|i| nu.probs()[i] * alpha * policy.prob(i))
        .collect();
    // remaining[i] = probability a device is not placed at levels < i
    let mut remaining = vec![1.0; capacity + 2];
    for i in 1..=capacity {
        remaining[i + 1] = (remaining[i] - tx[i]).max(0.0);
    }
    let expansion = SicExpansion {
        energy,
        capacity,
        channel,
        reference: opts.sic_reference,
        law: |level: usize, placed: usize| LevelLaw {
            trials: others - placed,
            prob: if remaining[level] > 0.0 {
                (tx[level] / remaining[level]).clamp(0.0, 1.0)
            } else {
                0.0
            },
        },
        cutoff: opts.truncation,
    };
    expansion.run().clamp(0.0, 1.0)
}

/// `w_bar_b` for every level `b` in `0..=E` under the configured decoding mode.
pub fn avg_success_probs(
    config: &SystemConfig,
    policy: &TransmissionPolicy,
    nu: &BatteryDistribution,
) -> Vec<f64> {
    (0..=config.battery_capacity)
        .map(|b| {
            avg_success_prob(
                b,
                nu,
                config.device_count,
                policy,
                config.update_prob,
                &config.channel,
                config.decoding_mode,
                &config.delivery,
            )
        })
        .collect()
}

/// Mean number of packets decoded per slot, `alpha U sum_b nu_b pi_b w_bar_b`.
pub fn throughput(
    config: &SystemConfig,
    policy: &TransmissionPolicy,
    nu: &BatteryDistribution,
    wbar: &[f64],
) -> Result<f64> {
    let e = config.battery_capacity;
    policy.check_capacity(e)?;
    if nu.probs().len() != e + 1 || wbar.len() != e + 1 {
        return Err(AoiError::DimensionMismatch {
            what: "throughput inputs",
            expected: e + 1,
            actual: nu.probs().len().min(wbar.len()),
        });
    }
    let s: f64 = (1..=e)
        .map(|b| nu.probs()[b] * policy.prob(b) * wbar[b])
        .sum();
    Ok(config.update_prob * config.device_count as f64 * s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn awgn() -> Channel {
        Channel::Awgn(ChannelParams::with_noise_db(100, 0.8, -20.0).unwrap())
    }

    #[test]
    fn q_function_reference_values() {
        assert_eq!(q_function(0.0), 0.5);
        assert!((q_function(1.0) - 0.158_655_253_931_457_05).abs() < 1e-16);
        assert!((q_function(-2.0) - 0.977_249_868_051_820_8).abs() < 1e-15);
        assert_eq!(q_function(100.0), q_function(Q_ARG_CLAMP));
        assert_eq!(q_function(-100.0), 1.0);
    }

    #[test]
    fn zero_energy_never_decodes() {
        assert_eq!(singleton_error_prob(0, &awgn()), 1.0);
        assert_eq!(singleton_error_prob(0, &Channel::Ideal), 1.0);
    }

    #[test]
    fn half_error_at_capacity() {
        // with n sigma^2 = 1, C(b) = R exactly when b = 2^(2R) - 1
        let b_star: f64 = 2f64.powf(1.6) - 1.0;
        let ch = ChannelParams::new(100, 0.5 * (1.0 + 3.0f64).log2(), 0.01).unwrap();
        assert!((singleton_error_prob(3, &Channel::Awgn(ch)) - 0.5).abs() < 1e-12);
        assert!(b_star > 2.0 && b_star < 3.0);
    }

    #[test]
    fn capture_without_interference_matches_singleton_exactly() {
        for b in 1..=16 {
            let none = InterferenceState::none(16);
            assert_eq!(capture_error_prob(b, &none, &awgn()), singleton_error_prob(b, &awgn()));
        }
    }

    #[test]
    fn sinr_with_one_equal_interferer() {
        let ch = ChannelParams::new(100, 0.8, 0.01).unwrap();
        let mut counts = vec![0; 9];
        counts[8] = 1;
        let st = InterferenceState::new(counts);
        assert!((st.sinr(8, &ch) - 8.0 / 9.0).abs() < 1e-15);
        assert!((st.inr(&ch) - 8.0).abs() < 1e-15);
        assert!((st.second_moment(&ch) - 64.0).abs() < 1e-12);
    }

    #[test]
    fn no_capture_edge_cases() {
        let opts = DeliveryOptions::default();
        let pol = TransmissionPolicy::new(vec![1.0, 0.5]).unwrap();
        let idle = BatteryProfile::new(vec![4, 0, 0]);
        let w = success_prob_no_capture(2, &idle, &pol, 0.7, &awgn(), &opts);
        assert_eq!(w, 1.0 - singleton_error_prob(2, &awgn()));
        let busy = BatteryProfile::new(vec![1, 2, 1]);
        assert_eq!(success_prob_no_capture(2, &busy, &pol, 1.0, &Channel::Ideal, &opts), 0.0);
        let pol = TransmissionPolicy::new(vec![0.5]).unwrap();
        let w = success_prob_no_capture(1, &BatteryProfile::new(vec![0, 2]), &pol, 0.4, &Channel::Ideal, &opts);
        assert!((w - 0.64).abs() < 1e-15);
    }

    #[test]
    fn capture_with_silent_others() {
        let opts = DeliveryOptions::default();
        let p = BatteryProfile::new(vec![5, 0, 0]);
        let pol = TransmissionPolicy::new(vec![1.0, 1.0]).unwrap();
        let w = success_prob_capture(2, &p, &pol, 0.5, &awgn(), &opts);
        assert_eq!(w, 1.0 - singleton_error_prob(2, &awgn()));
        let silent = TransmissionPolicy::new(vec![0.0, 0.0]).unwrap();
        let p = BatteryProfile::new(vec![1, 2, 2]);
        let w = success_prob_capture(1, &p, &silent, 0.5, &awgn(), &opts);
        assert_eq!(w, 1.0 - singleton_error_prob(1, &awgn()));
    }

    #[test]
    fn sampled_capture_tracks_enumeration() {
        let ch = Channel::Awgn(ChannelParams::new(100, 0.8, 0.1).unwrap());
        let pol = TransmissionPolicy::new(vec![0.7, 1.0]).unwrap();
        let profile = BatteryProfile::new(vec![0, 2, 2]);
        let exact = DeliveryOptions::default();
        let sampled = DeliveryOptions {
            support_cap: 1,
            samples: 20_000,
            ..exact
        };
        for b in 1..=2 {
            let w = success_prob_capture(b, &profile, &pol, 0.6, &ch, &exact);
            let s = success_prob_capture(b, &profile, &pol, 0.6, &ch, &sampled);
            // each draw lies in [0, 1], so the standard error is at most 0.5 / sqrt(n)
            let se = 0.5 / (sampled.samples as f64).sqrt();
            assert!((w - s).abs() < 3.0 * se, "b={b}: exact {w} sampled {s}");
        }
    }

    #[test]
    fn throughput_vanishes_without_traffic() {
        let cfg = SystemConfig::new(3, 2, 0.0, 0.2, Channel::Ideal, DecodingMode::NoCapture).unwrap();
        let pol = TransmissionPolicy::new(vec![1.0, 1.0]).unwrap();
        let nu = BatteryDistribution::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(throughput(&cfg, &pol, &nu, &[0.0, 1.0, 1.0]).unwrap(), 0.0);
        let cfg = SystemConfig { update_prob: 0.4, ..cfg };
        let silent = TransmissionPolicy::new(vec![0.0, 0.0]).unwrap();
        assert_eq!(throughput(&cfg, &silent, &nu, &[0.0, 1.0, 1.0]).unwrap(), 0.0);
    }
}
