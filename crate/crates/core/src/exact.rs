//! Exact average AoI from the joint chain of the tagged device's slot outcome,
//! its battery level and the other devices' battery profile.
//!
//! A refresh leaves the tagged battery empty, so only `(Success, 0, profile)`
//! success states exist. The inter-refresh time is the first-passage time
//! from the slot after a refresh into the success states; its first two
//! moments follow from first-step analysis on the failure block `Q`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::approx::avg_aoi_from_moments;
use crate::delivery::success_prob;
use crate::error::{AoiError, Result};
use crate::model::{m1_transition_matrix, profile_count, ProfileChain, SystemConfig, TransmissionPolicy};

/// Default cap on the number of composite states `2 (E+1) |profiles|`.
pub const DEFAULT_STATE_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    Fail,
}

/// A state of the joint chain; `profile` indexes [`IndexedChain::profiles`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AncillaryState {
    pub outcome: Outcome,
    pub battery: usize,
    pub profile: usize,
}

/// How the profile seen in the slot right after a refresh is weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefreshWeighting {
    /// Every success state contributes its outgoing mass with equal weight.
    #[default]
    Uniform,
    /// Success states are weighted by how often the chain refreshes through
    /// them in steady state.
    Stationary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactOptions {
    pub state_cap: usize,
    pub weighting: RefreshWeighting,
}

impl Default for ExactOptions {
    fn default() -> Self {
        Self {
            state_cap: DEFAULT_STATE_CAP,
            weighting: RefreshWeighting::default(),
        }
    }
}

/// The joint chain with states densely indexed: failure states `(b, profile)`
/// at `b * P + profile`, then success states `(0, profile)` at `(E+1) * P + profile`.
#[derive(Debug, Clone)]
pub struct IndexedChain {
    capacity: usize,
    update_prob: f64,
    harvest_prob: f64,
    policy: TransmissionPolicy,
    profiles: ProfileChain,
    /// `success[b][profile]` is the delivery probability at energy `b`.
    success: Vec<Vec<f64>>,
    q: DMatrix<f64>,
    r: DVector<f64>,
}

/// Number of composite states of the joint chain before pruning.
pub fn composite_state_count(device_count: usize, capacity: usize) -> usize {
    profile_count(device_count.saturating_sub(1), capacity)
        .saturating_mul(2 * (capacity + 1))
}

pub fn build_ancillary_chain(
    config: &SystemConfig,
    policy: &TransmissionPolicy,
    state_cap: usize,
) -> Result<IndexedChain> {
    config.validate()?;
    let e = config.battery_capacity;
    policy.check_capacity(e)?;
    let states = composite_state_count(config.device_count, e);
    if states > state_cap {
        return Err(AoiError::StateSpaceTooLarge {
            states,
            cap: state_cap,
        });
    }
    let m1 = m1_transition_matrix(config, policy)?;
    let profiles = ProfileChain::build(config.device_count - 1, &m1);
    let np = profiles.len();
    let success: Vec<Vec<f64>> = (0..=e)
        .map(|b| {
            profiles
                .profiles()
                .iter()
                .map(|p| if b == 0 { 0.0 } else { success_prob(config, policy, b, p) })
                .collect()
        })
        .collect();

    let mut chain = IndexedChain {
        capacity: e,
        update_prob: config.update_prob,
        harvest_prob: config.harvest_prob,
        policy: policy.clone(),
        profiles,
        success,
        q: DMatrix::zeros(0, 0),
        r: DVector::zeros(0),
    };

    let nf = (e + 1) * np;
    let mut q = DMatrix::zeros(nf, nf);
    let mut r = DVector::zeros(nf);
    let pt = chain.profiles.transitions();
    for from_b in 0..=e {
        for from_p in 0..np {
            let row = from_b * np + from_p;
            r[row] = chain.refresh_prob(from_b, from_p);
            for to_b in 0..=e {
                let local = chain.fail_local(from_b, to_b, from_p);
                if local == 0.0 {
                    continue;
                }
                let base = to_b * np;
                for to_p in 0..np {
                    q[(row, base + to_p)] = local * pt[(from_p, to_p)];
                }
            }
        }
    }
    chain.q = q;
    chain.r = r;
    Ok(chain)
}

impl IndexedChain {
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn profiles(&self) -> &ProfileChain {
        &self.profiles
    }

    /// Number of failure states `(E+1) * |profiles|`.
    pub fn fail_states(&self) -> usize {
        (self.capacity + 1) * self.profiles.len()
    }

    /// Total number of indexed states (failure plus success).
    pub fn len(&self) -> usize {
        self.fail_states() + self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index_of(&self, s: AncillaryState) -> Option<usize> {
        let np = self.profiles.len();
        if s.profile >= np || s.battery > self.capacity {
            return None;
        }
        match s.outcome {
            Outcome::Fail => Some(s.battery * np + s.profile),
            Outcome::Success if s.battery == 0 => Some(self.fail_states() + s.profile),
            Outcome::Success => None,
        }
    }

    pub fn state(&self, index: usize) -> AncillaryState {
        let np = self.profiles.len();
        if index < self.fail_states() {
            AncillaryState {
                outcome: Outcome::Fail,
                battery: index / np,
                profile: index % np,
            }
        } else {
            AncillaryState {
                outcome: Outcome::Success,
                battery: 0,
                profile: index - self.fail_states(),
            }
        }
    }

    pub fn success_prob(&self, battery: usize, profile: usize) -> f64 {
        self.success[battery][profile]
    }

    /// Failure-to-failure block.
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Failure-to-any-success mass per failure state.
    pub fn r(&self) -> &DVector<f64> {
        &self.r
    }

    fn refresh_prob(&self, battery: usize, profile: usize) -> f64 {
        self.update_prob * self.policy.prob(battery) * self.success[battery][profile]
    }

    /// Battery part of a failure-to-failure move given the profile at the
    /// start of the slot.
    fn fail_local(&self, from: usize, to: usize, profile: usize) -> f64 {
        let e = self.capacity;
        let eta = self.harvest_prob;
        let tx = self.update_prob * self.policy.prob(from);
        let idle = if from < e {
            if to == from {
                1.0 - eta
            } else if to == from + 1 {
                eta
            } else {
                0.0
            }
        } else if to == e {
            1.0
        } else {
            0.0
        };
        let mut p = (1.0 - tx) * idle;
        if to == 0 {
            p += tx * (1.0 - self.success[from][profile]);
        }
        p
    }

    /// Battery part of the move out of a success state.
    fn after_refresh_local(&self, to: usize) -> f64 {
        match to {
            0 => 1.0 - self.harvest_prob,
            1 => self.harvest_prob,
            _ => 0.0,
        }
    }

    /// One-slot transition probability between two indexed states.
    pub fn transition(&self, from: AncillaryState, to: AncillaryState) -> f64 {
        let pt = self.profiles.transitions()[(from.profile, to.profile)];
        match (from.outcome, to.outcome) {
            (Outcome::Success, Outcome::Fail) => self.after_refresh_local(to.battery) * pt,
            (Outcome::Success, Outcome::Success) => 0.0,
            (Outcome::Fail, Outcome::Success) => {
                if to.battery == 0 {
                    self.refresh_prob(from.battery, from.profile) * pt
                } else {
                    0.0
                }
            }
            (Outcome::Fail, Outcome::Fail) => {
                self.fail_local(from.battery, to.battery, from.profile) * pt
            }
        }
    }

    /// Distribution of the state at the end of the first slot after a
    /// refresh, as a vector over the failure states.
    pub fn initial_state_dist(&self, weighting: RefreshWeighting) -> Result<DVector<f64>> {
        let np = self.profiles.len();
        let source = match weighting {
            RefreshWeighting::Uniform => DVector::from_element(np, 1.0),
            RefreshWeighting::Stationary => self.refresh_profile_weights()?,
        };
        let pt = self.profiles.transitions();
        let arrival = pt.tr_mul(&source);
        let mut init = DVector::zeros(self.fail_states());
        for b in 0..=1.min(self.capacity) {
            let local = self.after_refresh_local(b);
            for p in 0..np {
                init[b * np + p] = local * arrival[p];
            }
        }
        let total = init.sum();
        Ok(init / total)
    }

    /// Stationary weights of the success states: the fixed point of the
    /// refresh-to-refresh profile kernel.
    fn refresh_profile_weights(&self) -> Result<DVector<f64>> {
        let np = self.profiles.len();
        let nf = self.fail_states();
        let pt = self.profiles.transitions();
        let lu = (DMatrix::<f64>::identity(nf, nf) - &self.q).lu();
        // kernel[s, s'] = P(next refresh lands in s' | refresh in s)
        let mut kernel = DMatrix::zeros(np, np);
        let mut absorb = DMatrix::zeros(nf, np);
        for from in 0..nf {
            let st = self.state(from);
            let rate = self.refresh_prob(st.battery, st.profile);
            if rate == 0.0 {
                continue;
            }
            for to in 0..np {
                absorb[(from, to)] = rate * pt[(st.profile, to)];
            }
        }
        let hit = lu.solve(&absorb).ok_or(AoiError::NoRefresh)?;
        for s in 0..np {
            let mut start = DVector::zeros(nf);
            for b in 0..=1.min(self.capacity) {
                let local = self.after_refresh_local(b);
                for p in 0..np {
                    start[b * np + p] = local * pt[(s, p)];
                }
            }
            let row = hit.tr_mul(&start);
            kernel.set_row(s, &row.transpose());
        }
        // stationary law of the kernel: balance equations with one row
        // replaced by the normalization
        let mut a = kernel.transpose() - DMatrix::<f64>::identity(np, np);
        a.row_mut(np - 1).fill(1.0);
        let mut rhs = DVector::zeros(np);
        rhs[np - 1] = 1.0;
        let w = a
            .lu()
            .solve(&rhs)
            .ok_or(AoiError::Singular("refresh profile kernel"))?;
        Ok(w)
    }
}

/// First two moments of the inter-refresh time from the joint chain.
pub fn inter_refresh_moments_exact(
    chain: &IndexedChain,
    weighting: RefreshWeighting,
) -> Result<(f64, f64)> {
    if chain.policy.is_silent() || chain.r.iter().all(|&p| p == 0.0) {
        return Err(AoiError::NoRefresh);
    }
    let nf = chain.fail_states();
    let lu = (DMatrix::<f64>::identity(nf, nf) - &chain.q).lu();
    let ones = DVector::from_element(nf, 1.0);
    let e1 = lu.solve(&(&ones + &chain.r)).ok_or(AoiError::NoRefresh)?;
    let rhs2 = &e1 * 2.0 + &chain.r - &ones;
    let e2 = lu.solve(&rhs2).ok_or(AoiError::NoRefresh)?;
    let init = chain.initial_state_dist(weighting)?;
    let mean = init.dot(&e1);
    let second = init.dot(&e2);
    if !(mean.is_finite() && second.is_finite()) || mean < 1.0 {
        return Err(AoiError::NoRefresh);
    }
    Ok((mean, second))
}

/// Exact results for one configuration and policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactSolution {
    pub mean_interval: f64,
    pub second_moment: f64,
    pub avg_aoi: f64,
}

pub fn exact_avg_aoi(
    config: &SystemConfig,
    policy: &TransmissionPolicy,
    opts: &ExactOptions,
) -> Result<ExactSolution> {
    let chain = build_ancillary_chain(config, policy, opts.state_cap)?;
    let (mean, second) = inter_refresh_moments_exact(&chain, opts.weighting)?;
    Ok(ExactSolution {
        mean_interval: mean,
        second_moment: second,
        avg_aoi: avg_aoi_from_moments(mean, second),
    })
}
