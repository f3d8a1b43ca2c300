//! Approximate analysis that treats the other devices' battery profile as
//! independent across slots.
//!
//! The tagged device then follows a terminating chain on `E + 1` transient
//! states (battery level, no refresh yet) with one absorbing state (refresh).
//! State 0 doubles as the start state right after a refresh, since the
//! battery is empty then. The inter-refresh time `Y` is discrete phase-type
//! with transient block `T` and exit vector `t0`.

use nalgebra::{DMatrix, DVector};

use crate::delivery::{avg_success_probs, throughput};
use crate::error::{AoiError, Result};
use crate::model::{
    battery_steady_state, m1_transition_matrix, BatteryDistribution, SystemConfig,
    TransmissionPolicy,
};

/// Conservation tolerance for `T 1 + t0 = 1`.
pub const CONSERVATION_TOL: f64 = 1e-12;

/// The pmf iteration stops once `P[Y >= y]` drops below this.
pub const TAIL_CUTOFF: f64 = 1e-12;

/// Average AoI of a renewal refresh process from the first two moments of
/// the inter-refresh time.
pub fn avg_aoi_from_moments(mean: f64, second_moment: f64) -> f64 {
    1.0 + second_moment / (2.0 * mean)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTypeModel {
    transient: DMatrix<f64>,
    exit: DVector<f64>,
}

impl PhaseTypeModel {
    pub fn new(transient: DMatrix<f64>, exit: DVector<f64>) -> Result<Self> {
        let n = transient.nrows();
        if transient.ncols() != n || exit.len() != n {
            return Err(AoiError::DimensionMismatch {
                what: "phase-type blocks",
                expected: n,
                actual: exit.len(),
            });
        }
        for i in 0..n {
            let row = transient.row(i);
            if row.iter().chain(std::iter::once(&exit[i])).any(|&p| p < 0.0) {
                return Err(AoiError::InvalidParameter {
                    field: "phase_type",
                    reason: format!("row {i} has a negative entry"),
                });
            }
            let s = row.sum() + exit[i];
            if (s - 1.0).abs() > CONSERVATION_TOL {
                return Err(AoiError::InvalidParameter {
                    field: "phase_type",
                    reason: format!("row {i} loses mass: T 1 + t0 = {s}"),
                });
            }
        }
        Ok(Self { transient, exit })
    }

    pub fn transient(&self) -> &DMatrix<f64> {
        &self.transient
    }

    pub fn exit(&self) -> &DVector<f64> {
        &self.exit
    }

    pub fn dim(&self) -> usize {
        self.exit.len()
    }

    /// True when absorption is certain from every state reachable from the start.
    pub fn is_terminating(&self) -> bool {
        let n = self.dim();
        let reachable = reachable_from(n, 0, |i, j| self.transient[(i, j)] > 0.0);
        // states that can reach an exit, by backward search
        let mut exits = vec![false; n];
        let mut stack: Vec<usize> = (0..n).filter(|&i| self.exit[i] > 0.0).collect();
        for &i in &stack {
            exits[i] = true;
        }
        while let Some(j) = stack.pop() {
            for i in 0..n {
                if !exits[i] && self.transient[(i, j)] > 0.0 {
                    exits[i] = true;
                    stack.push(i);
                }
            }
        }
        (0..n).all(|i| !reachable[i] || exits[i])
    }

    fn ensure_terminating(&self) -> Result<()> {
        if self.is_terminating() {
            Ok(())
        } else {
            Err(AoiError::NoRefresh)
        }
    }

    /// Iterator over `(y, P[Y = y], P[Y >= y])` for `y = 1, 2, ...`.
    pub fn distribution(&self) -> RefreshDistribution<'_> {
        let mut row = DVector::zeros(self.dim());
        row[0] = 1.0;
        RefreshDistribution {
            model: self,
            row,
            y: 0,
        }
    }

    /// `P[Y = y]` for `y >= 1`.
    pub fn pmf(&self, y: u64) -> f64 {
        assert!(y >= 1, "inter-refresh times start at one slot");
        self.distribution().nth((y - 1) as usize).map_or(0.0, |s| s.pmf)
    }

    /// `P[Y >= y]` for `y >= 1`.
    pub fn ccdf(&self, y: u64) -> f64 {
        assert!(y >= 1, "inter-refresh times start at one slot");
        self.distribution().nth((y - 1) as usize).map_or(0.0, |s| s.ccdf)
    }

    /// `x = (I - T)^-1 1` and `z = (I - T)^-2 1`.
    fn fundamental_sums(&self) -> Result<(DVector<f64>, DVector<f64>)> {
        self.ensure_terminating()?;
        let n = self.dim();
        let lu = (DMatrix::<f64>::identity(n, n) - &self.transient).lu();
        let x = lu
            .solve(&DVector::from_element(n, 1.0))
            .ok_or(AoiError::NoRefresh)?;
        let z = lu.solve(&x).ok_or(AoiError::NoRefresh)?;
        if !x[0].is_finite() || !z[0].is_finite() {
            return Err(AoiError::NoRefresh);
        }
        Ok((x, z))
    }

    /// `(E[Y], E[Y^2])`.
    pub fn moments(&self) -> Result<(f64, f64)> {
        let (x, z) = self.fundamental_sums()?;
        Ok((x[0], 2.0 * z[0] - x[0]))
    }

    /// Average AoI, `1/2 + [(I-T)^-2 1]_0 / [(I-T)^-1 1]_0`.
    pub fn avg_aoi(&self) -> Result<f64> {
        let (x, z) = self.fundamental_sums()?;
        Ok(0.5 + z[0] / x[0])
    }

    /// Age-violation probability `P[Delta > theta]` as a one-pass sum over the
    /// first `theta - 1` inter-refresh probabilities:
    /// `1 - (sum_{y<theta} y P[Y=y] + (theta-1) P[Y>=theta]) / E[Y]`.
    pub fn avp(&self, theta: u64) -> Result<f64> {
        assert!(theta >= 1, "the age threshold is at least one slot");
        let (x, _) = self.fundamental_sums()?;
        let mut head = 0.0;
        let mut dist = self.distribution();
        for _ in 1..theta {
            let s = dist.next().expect("distribution iterator is unbounded");
            head += s.y as f64 * s.pmf;
        }
        let at_theta = dist.next().expect("distribution iterator is unbounded").ccdf;
        let zeta = 1.0 - (head + (theta - 1) as f64 * at_theta) / x[0];
        Ok(zeta.clamp(0.0, 1.0))
    }

    /// Same quantity as [`Self::avp`] written as a tail sum,
    /// `e_0^T T^(theta-1) (I - T)^-1 1 / [(I - T)^-1 1]_0`, which has no
    /// cancellation when the violation probability is tiny.
    pub fn avp_tail(&self, theta: u64) -> Result<f64> {
        assert!(theta >= 1, "the age threshold is at least one slot");
        let (x, _) = self.fundamental_sums()?;
        let row = self.row_after(theta - 1);
        Ok((row.dot(&x) / x[0]).clamp(0.0, 1.0))
    }

    /// `e_0^T T^steps`.
    fn row_after(&self, steps: u64) -> DVector<f64> {
        let mut row = DVector::zeros(self.dim());
        row[0] = 1.0;
        let tt = self.transient.transpose();
        for _ in 0..steps {
            row = &tt * row;
        }
        row
    }
}

fn reachable_from(n: usize, start: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<bool> {
    let mut seen = vec![false; n];
    seen[start] = true;
    let mut stack = vec![start];
    while let Some(i) = stack.pop() {
        for j in 0..n {
            if !seen[j] && edge(i, j) {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen
}

/// One step of the inter-refresh distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefreshStep {
    pub y: u64,
    pub pmf: f64,
    pub ccdf: f64,
}

/// Walks `e_0^T T^(y-1)` forward one mat-vec per step.
#[derive(Debug, Clone)]
pub struct RefreshDistribution<'a> {
    model: &'a PhaseTypeModel,
    row: DVector<f64>,
    y: u64,
}

impl<'a> RefreshDistribution<'a> {
    /// Steps up to the first `y` with `P[Y >= y] < TAIL_CUTOFF`, capped at `max_y`.
    pub fn truncated(self, max_y: u64) -> impl Iterator<Item = RefreshStep> + 'a {
        self.take_while(move |s| s.ccdf >= TAIL_CUTOFF && s.y <= max_y)
    }
}

impl Iterator for RefreshDistribution<'_> {
    type Item = RefreshStep;

    fn next(&mut self) -> Option<RefreshStep> {
        if self.y > 0 {
            self.row = self.model.transient.tr_mul(&self.row);
        }
        self.y += 1;
        Some(RefreshStep {
            y: self.y,
            pmf: self.row.dot(&self.model.exit),
            ccdf: self.row.sum(),
        })
    }
}

/// Builds the phase-type model from the policy and the averaged success
/// probabilities `w_bar` (indexed by level, `w_bar[0]` unused).
pub fn build_phase_type(
    config: &SystemConfig,
    policy: &TransmissionPolicy,
    wbar: &[f64],
) -> Result<PhaseTypeModel> {
    let e = config.battery_capacity;
    policy.check_capacity(e)?;
    if wbar.len() != e + 1 {
        return Err(AoiError::DimensionMismatch {
            what: "averaged success probabilities",
            expected: e + 1,
            actual: wbar.len(),
        });
    }
    for &w in &wbar[1..] {
        crate::error::check_prob("wbar", w)?;
    }
    let alpha = config.update_prob;
    let eta = config.harvest_prob;
    let mut t = DMatrix::zeros(e + 1, e + 1);
    let mut t0 = DVector::zeros(e + 1);
    t[(0, 0)] = 1.0 - eta;
    t[(0, 1)] = eta;
    for b in 1..=e {
        let tx = alpha * policy.prob(b);
        t0[b] = tx * wbar[b];
        t[(b, 0)] = tx * (1.0 - wbar[b]);
        if b < e {
            t[(b, b)] = (1.0 - eta) * (1.0 - tx);
            t[(b, b + 1)] = eta * (1.0 - tx);
        } else {
            t[(b, b)] = 1.0 - tx;
        }
    }
    PhaseTypeModel::new(t, t0)
}

/// Every quantity of the approximate analysis for one operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxMetrics {
    pub battery: BatteryDistribution,
    pub wbar: Vec<f64>,
    pub mean_interval: f64,
    pub second_moment: f64,
    pub avg_aoi: f64,
    pub avp: f64,
    pub throughput: f64,
}

/// Steady state, averaged success probabilities and the phase-type model for
/// one configuration and policy.
pub fn approx_model(
    config: &SystemConfig,
    policy: &TransmissionPolicy,
) -> Result<(BatteryDistribution, Vec<f64>, PhaseTypeModel)> {
    config.validate()?;
    let m1 = m1_transition_matrix(config, policy)?;
    let nu = battery_steady_state(&m1)?;
    let wbar = avg_success_probs(config, policy, &nu);
    let model = build_phase_type(config, policy, &wbar)?;
    Ok((nu, wbar, model))
}

pub fn approx_metrics(
    config: &SystemConfig,
    policy: &TransmissionPolicy,
    theta: u64,
) -> Result<ApproxMetrics> {
    let (nu, wbar, model) = approx_model(config, policy)?;
    let (mean, second) = model.moments()?;
    let avg_aoi = model.avg_aoi()?;
    let avp = model.avp_tail(theta)?;
    let s = throughput(config, policy, &nu, &wbar)?;
    Ok(ApproxMetrics {
        battery: nu,
        wbar,
        mean_interval: mean,
        second_moment: second,
        avg_aoi,
        avp,
        throughput: s,
    })
}
