//! Age of Information of energy-harvesting devices sharing a slotted ALOHA
//! channel: battery and profile chains, finite-blocklength delivery model,
//! exact and phase-type analyses, a slot-level simulator and a policy
//! optimizer.

pub mod approx;
pub mod delivery;
pub mod error;
pub mod exact;
pub mod model;
pub mod optim;
pub mod presets;
pub mod sim;

pub use delivery::{
    avg_success_prob, avg_success_probs, capture_error_prob, singleton_error_prob,
    success_prob_capture, success_prob_no_capture, throughput, Channel, ChannelParams,
    DeliveryOptions, InterferenceState, SicReference, SingletonRule,
};
pub use approx::{
    approx_metrics, approx_model, avg_aoi_from_moments, build_phase_type, ApproxMetrics,
    PhaseTypeModel,
};
pub use exact::{
    build_ancillary_chain, composite_state_count, exact_avg_aoi, inter_refresh_moments_exact,
    AncillaryState, ExactOptions, ExactSolution, IndexedChain, Outcome, RefreshWeighting,
    DEFAULT_STATE_CAP,
};
pub use optim::{
    baseline_policy, multistart_points, nelder_mead, optimize_policy, Backend, Baseline, Metric,
    NelderMeadResult, Objective, OptimizedPolicy, OptimizerOptions,
};
pub use sim::{
    decode_slot, simulate, simulate_with_trace, Estimate, SimParams, SimResult, Simulation,
    SlotOutcome, TrackedDevices,
};
pub use error::{AoiError, Result};
pub use model::{
    battery_steady_state, enumerate_profiles, m1_transition_matrix, profile_transition_prob,
    BatteryDistribution, BatteryProfile, DecodingMode, ProfileChain, StochasticMatrix,
    SystemConfig, TransmissionPolicy,
};
