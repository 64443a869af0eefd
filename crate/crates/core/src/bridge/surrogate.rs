use super::{Backend, BackendError};
use crate::repertoire::{Behavior, ParameterSet};
use crate::sim::Simulator;

/// In-process backend running the surrogate simulator. Each trial gets its
/// own noise seed derived from the simulator seed and the trial id, so a
/// trial's result does not depend on which trials ran before it.
#[derive(Debug, Clone)]
pub struct SurrogateBackend {
    sim: Simulator,
}

impl SurrogateBackend {
    pub fn new(sim: Simulator) -> Self {
        Self { sim }
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn trial_seed(&self, trial_id: u64) -> u64 {
        let mut z = self.sim.config().seed ^ trial_id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

impl Backend for SurrogateBackend {
    fn run_trial(&mut self, trial_id: u64, params: ParameterSet, duration_s: f64) -> Result<Behavior, BackendError> {
        let seed = self.trial_seed(trial_id);
        Ok(self.sim.trial(&params, duration_s, seed)?)
    }
}
