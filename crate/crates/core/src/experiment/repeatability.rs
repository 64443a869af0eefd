use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, ExperimentError};
use crate::bridge::SurrogateBackend;
use crate::descriptor::{repeatability_stats, RepeatabilityReport, ReplicateTrial};
use crate::repertoire::{fmt3, ParameterSet};
use crate::sim::SimConfig;

/// Replicate schedule and the noise that makes replicates differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepeatabilityConfig {
    pub durations_s: Vec<f64>,
    /// Replicates per parameter set and duration.
    pub replicates: usize,
    pub noise_mm: f64,
    pub process_noise_n: f64,
    pub process_noise_onset_s: f64,
}

impl Default for RepeatabilityConfig {
    fn default() -> Self {
        Self {
            durations_s: vec![5.0, 10.0, 15.0],
            replicates: 10,
            noise_mm: 0.5,
            process_noise_n: 0.002,
            process_noise_onset_s: 10.0,
        }
    }
}

impl RepeatabilityConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(format!("repeatability: {m}")));
        if self.durations_s.is_empty() || self.durations_s.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return bad("durations must be positive");
        }
        if self.replicates < 2 {
            return bad("need at least 2 replicates");
        }
        if !(self.noise_mm >= 0.0 && self.process_noise_n >= 0.0 && self.process_noise_onset_s >= 0.0) {
            return bad("noise settings must be non-negative");
        }
        Ok(())
    }

    /// The simulator config with this protocol's noise switched on.
    pub fn noisy(&self, base: &SimConfig) -> SimConfig {
        SimConfig {
            noise_mm: self.noise_mm,
            process_noise_n: self.process_noise_n,
            process_noise_onset_s: self.process_noise_onset_s,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct RepeatabilityRun {
    pub trials: Vec<ReplicateTrial>,
    pub report: RepeatabilityReport,
}

/// Parameter sets, one `f1,f2,f3` per line. Blank lines, `#` comments and
/// an `f1,f2,f3` header are ignored.
pub fn read_param_list<R: Read>(input: R) -> Result<Vec<ParameterSet>, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        if rec.iter().all(str::is_empty) || (i == 0 && rec.get(0) == Some("f1")) {
            continue;
        }
        if rec.len() != 3 {
            return Err(format!("line {}: expected f1,f2,f3", i + 1));
        }
        let mut f = [0u8; 3];
        for (k, v) in f.iter_mut().enumerate() {
            *v = rec[k].parse().map_err(|e| format!("line {}: `{}`: {e}", i + 1, &rec[k]))?;
        }
        out.push(ParameterSet::from_array(f));
    }
    if out.is_empty() {
        return Err("no parameter sets".into());
    }
    Ok(out)
}

/// Run every parameter set `replicates` times at every duration on the
/// noise-enabled surrogate and summarize the spread.
pub fn run_repeatability(cfg: &ExperimentConfig, params: &[ParameterSet]) -> Result<RepeatabilityRun, ExperimentError> {
    let rc = &cfg.repeatability;
    rc.validate()?;
    let noisy = ExperimentConfig { sim: rc.noisy(&cfg.sim), ..cfg.clone() };
    let backend = SurrogateBackend::new(noisy.simulator()?);

    let mut jobs = Vec::new();
    for (pi, p) in params.iter().enumerate() {
        for (di, d) in rc.durations_s.iter().enumerate() {
            for r in 0..rc.replicates {
                let id = ((pi * rc.durations_s.len() + di) * rc.replicates + r) as u64;
                jobs.push((id, *p, *d));
            }
        }
    }
    let trials = jobs
        .par_iter()
        .map(|&(id, p, d)| {
            let behavior = backend.simulator().trial(&p, d, backend.trial_seed(id))?;
            Ok(ReplicateTrial { params: p, duration_s: d, behavior: behavior.quantized() })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    let report = repeatability_stats(&trials).map_err(|e| ExperimentError::Config(e.to_string()))?;
    Ok(RepeatabilityRun { trials, report })
}

/// Write `repeatability_trials.csv` and `repeatability_report.toml`.
pub fn write_repeatability_outputs(run: &RepeatabilityRun, dir: &Path) -> io::Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let trials = dir.join("repeatability_trials.csv");
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(&trials)?;
    w.write_record(["f1", "f2", "f3", "duration_s", "dx_mm", "dy_mm", "dpsi_deg"])?;
    for t in &run.trials {
        let p = t.params;
        w.write_record([
            p.f1.to_string(),
            p.f2.to_string(),
            p.f3.to_string(),
            t.duration_s.to_string(),
            fmt3(t.behavior.dx),
            fmt3(t.behavior.dy),
            fmt3(t.behavior.dpsi),
        ])?;
    }
    w.flush()?;
    let report = dir.join("repeatability_report.toml");
    let text = toml::to_string(&run.report).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    fs::write(&report, text)?;
    Ok((trials, report))
}
