//! Calibration constants shared by the RBE cycle model, the power model and
//! the delay model. All tunable numbers live in one versioned JSON file so
//! that every anchored value is auditable in a single place.

use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RbeCalib {
    /// TCDM streamer width in 32-bit words per cycle (288-bit port).
    pub streamer_words_per_cycle: u64,
    /// Pixels held by the engine input buffer (5x5 patch).
    pub input_patch_pixels: u64,
    /// Extra COMPUTE cycles per (spatial, kin, pass, kout) tile iteration.
    pub compute_tile_overhead: u64,
    /// Cycles per NORMQUANT invocation.
    pub normquant_cycles: u64,
    /// Fixed per-job controller overhead in cycles.
    pub job_overhead: u64,
    pub nominal_freq_hz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerCalib {
    /// Measured total cluster power at the nominal operating point.
    pub total_mw_nominal: f64,
    /// Dynamic share of the nominal power figure.
    pub dynamic_fraction_nominal: f64,
    pub nominal_vdd: f64,
    pub nominal_freq_hz: f64,
    /// Exponent of the leakage dependence on Vdd.
    pub leakage_vdd_exponent: f64,
    /// Exponential coefficient of leakage growth with forward body bias (1/V).
    pub leakage_fbb_coeff: f64,
    pub activity_rbe: f64,
    pub activity_cores: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DelayCalib {
    pub fmax_hz_at_nominal: f64,
    pub vdd_nominal: f64,
    pub fmax_hz_at_low: f64,
    pub vdd_low: f64,
    /// Minimum error-free supply at 400 MHz without body bias.
    pub min_vdd_no_bias_at_400mhz: f64,
    /// Minimum error-free supply at 400 MHz with full forward body bias.
    pub min_vdd_full_bias_at_400mhz: f64,
    /// Safety factor applied when solving the body-bias coefficient.
    pub bias_solve_margin: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbbCalib {
    /// Cycles for a body-bias step to settle after a pre-error.
    pub settle_cycles: u64,
    /// Quiet cycles before the bias is relaxed by one step.
    pub relax_window_cycles: u64,
    pub vbb_step: f64,
    pub vbb_max: f64,
    /// Pre-error shadow delay margin as a fraction of the clock period.
    pub preerror_margin_fraction: f64,
    pub path_count: usize,
    pub path_sigma: f64,
    pub monitored_fraction: f64,
    pub population_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryCalib {
    pub dma_setup_cycles: u64,
    pub dma_bytes_per_cycle: u64,
    pub l3_bytes_per_cycle: f64,
    pub l3_latency_cycles: u64,
    pub l1_bytes: u64,
    pub l2_bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Calibration {
    pub rbe: RbeCalib,
    pub power: PowerCalib,
    pub delay: DelayCalib,
    pub abb: AbbCalib,
    pub memory: MemoryCalib,
}

const DEFAULT_JSON: &str = include_str!("../calibration.json");

impl Default for Calibration {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_JSON).expect("embedded calibration.json is valid")
    }
}

impl Calibration {
    pub fn load(path: &Path) -> Result<Self, CalibError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CalibError::Io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(CalibError::Parse)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CalibError {
    #[error("cannot read calibration file {0}: {1}")]
    Io(String, std::io::Error),
    #[error("invalid calibration file: {0}")]
    Parse(serde_json::Error),
}
