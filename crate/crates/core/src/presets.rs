//! Operating points used throughout the tests, benches and CLI examples.

use crate::delivery::{Channel, ChannelParams};
use crate::error::Result;
use crate::model::{DecodingMode, SystemConfig};

/// Channel uses per slot.
pub const SLOT_LENGTH: usize = 100;
/// Bits per channel use.
pub const RATE: f64 = 0.8;
pub const NOISE_DB: f64 = -20.0;

pub fn default_channel() -> Channel {
    Channel::Awgn(
        ChannelParams::with_noise_db(SLOT_LENGTH, RATE, NOISE_DB).expect("constants are valid"),
    )
}

/// Small population where the exact solver is tractable: U=30, E=2, eta=0.05.
/// `offered_load` is U*alpha.
pub fn small_validation_setting(offered_load: f64, mode: DecodingMode) -> Result<SystemConfig> {
    SystemConfig::new(30, 2, offered_load / 30.0, 0.05, default_channel(), mode)
}

pub const SMALL_VALIDATION_THETA: u64 = 1000;

/// Large population for policy optimization: U=1000, E=8, eta=0.005.
pub fn large_population_setting(offered_load: f64, mode: DecodingMode) -> Result<SystemConfig> {
    SystemConfig::new(1000, 8, offered_load / 1000.0, 0.005, default_channel(), mode)
}

pub const LARGE_POPULATION_THETA: u64 = 10_000;
