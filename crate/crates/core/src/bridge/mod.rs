//! Evaluator contract, stationarity gate, trial logs and the wire protocol
//! for external evaluators.

mod external;
mod log;
pub mod protocol;
mod surrogate;

use std::fmt;
use std::time::Duration;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::repertoire::{fitness, Behavior, BinGeometry, BinIndex, Evaluator, ParameterSet, Phase};

pub use external::{serve_lines, ExternalBackend, Transport};
pub use log::{read_trial_log, write_trial_log, TrialLogError, TrialLogWriter, TRIAL_LOG_HEADER};
pub use surrogate::SurrogateBackend;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Surrogate,
    External,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "surrogate" => Ok(Self::Surrogate),
            "external" => Ok(Self::External),
            other => Err(format!("unknown backend `{other}` (expected surrogate or external)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluatorConfig {
    /// Trials whose motor bytes sum to at most this value are assumed to
    /// leave the robot stationary and are not run.
    pub stationarity_threshold: u32,
    pub trial_duration_s: f64,
    /// Pause after each external trial, seconds.
    pub cooldown_s: f64,
    pub backend: BackendKind,
    /// `host:port` or a serial device path, for the external backend.
    pub endpoint: Option<String>,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        Self {
            stationarity_threshold: 90,
            trial_duration_s: 10.0,
            cooldown_s: 4.0,
            backend: BackendKind::Surrogate,
            endpoint: None,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("invalid evaluator config: {0}")]
pub struct EvaluatorConfigError(pub String);

impl EvaluatorConfig {
    pub fn validate(&self) -> Result<(), EvaluatorConfigError> {
        if self.stationarity_threshold > 765 {
            return Err(EvaluatorConfigError(format!(
                "stationarity_threshold {} exceeds 765",
                self.stationarity_threshold
            )));
        }
        if !(self.trial_duration_s.is_finite() && self.trial_duration_s > 0.0) {
            return Err(EvaluatorConfigError("trial_duration_s must be positive".into()));
        }
        if !(self.cooldown_s.is_finite() && self.cooldown_s >= 0.0) {
            return Err(EvaluatorConfigError("cooldown_s must be non-negative".into()));
        }
        if self.backend == BackendKind::External && self.endpoint.is_none() {
            return Err(EvaluatorConfigError("external backend needs an endpoint".into()));
        }
        Ok(())
    }

    pub fn duration_ms(&self) -> u64 {
        (self.trial_duration_s * 1000.0).round() as u64
    }

    /// Per-request deadline for external evaluators.
    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.duration_ms() + 15_000)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrialOutcome {
    Evaluated,
    SkippedStationary,
    Error,
}

impl TrialOutcome {
    pub const fn as_str(&self) -> &'static str {
        match self {
            TrialOutcome::Evaluated => "Evaluated",
            TrialOutcome::SkippedStationary => "SkippedStationary",
            TrialOutcome::Error => "Error",
        }
    }
}

impl fmt::Display for TrialOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TrialOutcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Evaluated" => Ok(Self::Evaluated),
            "SkippedStationary" => Ok(Self::SkippedStationary),
            "Error" => Ok(Self::Error),
            other => Err(format!("unknown outcome `{other}`")),
        }
    }
}

/// Provenance of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub phase: Phase,
    pub params: ParameterSet,
    pub behavior: Behavior,
    pub bin: BinIndex,
    pub fitness: f64,
    pub outcome: TrialOutcome,
    /// Error detail; not persisted in the CSV log.
    pub message: Option<String>,
    /// ISO 8601 UTC time at which the trial started.
    pub timestamp: String,
}

impl TrialRecord {
    fn with(
        trial_id: u64,
        phase: Phase,
        params: ParameterSet,
        behavior: Behavior,
        outcome: TrialOutcome,
        geometry: &BinGeometry,
    ) -> Self {
        let (bin, _) = geometry.bin_index(&behavior);
        Self {
            trial_id,
            phase,
            params,
            behavior,
            bin,
            fitness: fitness(&behavior, geometry),
            outcome,
            message: None,
            timestamp: now_iso8601(),
        }
    }

    /// Successful evaluation; the behavior is snapped to log resolution.
    pub fn evaluated(trial_id: u64, phase: Phase, params: ParameterSet, behavior: Behavior, geometry: &BinGeometry) -> Self {
        Self::with(trial_id, phase, params, behavior.quantized(), TrialOutcome::Evaluated, geometry)
    }

    pub fn skipped(trial_id: u64, phase: Phase, params: ParameterSet, geometry: &BinGeometry) -> Self {
        Self::with(trial_id, phase, params, Behavior::ZERO, TrialOutcome::SkippedStationary, geometry)
    }

    pub fn error(trial_id: u64, phase: Phase, params: ParameterSet, message: String, geometry: &BinGeometry) -> Self {
        let mut r = Self::with(trial_id, phase, params, Behavior::ZERO, TrialOutcome::Error, geometry);
        r.message = Some(message);
        r
    }
}

pub fn now_iso8601() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("protocol: {0}")]
    Protocol(#[from] protocol::ProtocolError),
    #[error("remote error {code}: {message}")]
    Remote { code: i64, message: String },
    #[error("transport: {0}")]
    Io(String),
    #[error("simulation: {0}")]
    Sim(#[from] crate::sim::SimError),
}

/// Something that physically (or virtually) runs a trial.
pub trait Backend {
    fn run_trial(&mut self, trial_id: u64, params: ParameterSet, duration_s: f64) -> Result<Behavior, BackendError>;

    /// Whether the gate should wait `cooldown_s` after each trial.
    fn needs_cooldown(&self) -> bool {
        false
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn run_trial(&mut self, trial_id: u64, params: ParameterSet, duration_s: f64) -> Result<Behavior, BackendError> {
        (**self).run_trial(trial_id, params, duration_s)
    }

    fn needs_cooldown(&self) -> bool {
        (**self).needs_cooldown()
    }
}

impl<B: Backend + ?Sized> Backend for &mut B {
    fn run_trial(&mut self, trial_id: u64, params: ParameterSet, duration_s: f64) -> Result<Behavior, BackendError> {
        (**self).run_trial(trial_id, params, duration_s)
    }

    fn needs_cooldown(&self) -> bool {
        (**self).needs_cooldown()
    }
}

/// Skip trials below the stationarity threshold; otherwise run the backend
/// and, for backends that need it, wait out the cooldown.
pub fn gate_and_evaluate<B: Backend + ?Sized>(
    trial_id: u64,
    phase: Phase,
    params: ParameterSet,
    cfg: &EvaluatorConfig,
    geometry: &BinGeometry,
    backend: &mut B,
) -> TrialRecord {
    if params.byte_sum() <= cfg.stationarity_threshold {
        return TrialRecord::skipped(trial_id, phase, params, geometry);
    }
    let timestamp = now_iso8601();
    let result = backend.run_trial(trial_id, params, cfg.trial_duration_s);
    if backend.needs_cooldown() && cfg.cooldown_s > 0.0 {
        std::thread::sleep(Duration::from_secs_f64(cfg.cooldown_s));
    }
    let mut record = match result {
        Ok(b) if b.is_finite() => TrialRecord::evaluated(trial_id, phase, params, b, geometry),
        Ok(b) => TrialRecord::error(trial_id, phase, params, format!("non-finite behavior {b:?}"), geometry),
        Err(e) => TrialRecord::error(trial_id, phase, params, e.to_string(), geometry),
    };
    record.timestamp = timestamp;
    record
}

/// The gate bound to a backend, usable wherever an [`Evaluator`] is needed.
pub struct GatedEvaluator<B> {
    pub cfg: EvaluatorConfig,
    pub geometry: BinGeometry,
    pub backend: B,
}

impl<B: Backend> GatedEvaluator<B> {
    pub fn new(cfg: EvaluatorConfig, geometry: BinGeometry, backend: B) -> Self {
        Self { cfg, geometry, backend }
    }
}

impl<B: Backend> Evaluator for GatedEvaluator<B> {
    fn evaluate(&mut self, trial_id: u64, phase: Phase, params: ParameterSet) -> TrialRecord {
        gate_and_evaluate(trial_id, phase, params, &self.cfg, &self.geometry, &mut self.backend)
    }
}
