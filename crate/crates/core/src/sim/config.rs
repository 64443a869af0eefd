use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Integration, contact, drive and noise settings for the surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub timestep_s: f64,
    pub duration_s: f64,
    pub gravity_mm_s2: f64,
    pub ground_stiffness_n_per_mm: f64,
    pub ground_damping_n_s_per_mm: f64,
    /// Contact engages below this height, so resting nodes sit at z >= 0.
    pub contact_skin_mm: f64,
    pub friction_coefficient: f64,
    /// Motor angular frequency per unit of the frequency byte, rad/s.
    pub freq_gain_rad_s: f64,
    /// Motors-off time used to reach the resting pose.
    pub settle_s: f64,
    /// Extra velocity damping while settling, 1/s.
    pub settle_damping_per_s: f64,
    /// Std of the Gaussian perturbation of initial node positions. 0 disables.
    pub noise_mm: f64,
    /// Std of a random horizontal force on every node, applied each step
    /// once `process_noise_onset_s` has elapsed. 0 disables.
    pub process_noise_n: f64,
    pub process_noise_onset_s: f64,
    /// Springs push as well as pull unless this is set.
    pub unilateral_springs: bool,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            timestep_s: 2e-4,
            duration_s: 10.0,
            gravity_mm_s2: 9810.0,
            ground_stiffness_n_per_mm: 2.0,
            ground_damping_n_s_per_mm: 0.01,
            contact_skin_mm: 0.1,
            friction_coefficient: 0.6,
            freq_gain_rad_s: 2.0 * PI * 0.35,
            settle_s: 1.5,
            settle_damping_per_s: 20.0,
            noise_mm: 0.0,
            process_noise_n: 0.0,
            process_noise_onset_s: 10.0,
            unilateral_springs: false,
            seed: 0,
        }
    }
}

impl SimConfig {
    /// Frequency byte to motor angular frequency.
    pub fn omega(&self, f: u8) -> f64 {
        self.freq_gain_rad_s * f as f64
    }

    pub fn steps(&self, seconds: f64) -> usize {
        (seconds / self.timestep_s).round() as usize
    }
}
