//! The branching experiment: a shared random phase, then a MAP-Elites
//! treatment branch and a random control branch that both start from the
//! shared archive snapshot.
//!
//! Layout of an output directory:
//!
//! ```text
//! manifest.toml            effective config, derived seeds, version
//! shared_trials.csv        shared random phase, trial ids 0..n_shared
//! shared_archive.csv       archive snapshot after the shared phase
//! mutation_trials.csv      treatment branch trials
//! mutation_archive.csv
//! control_trials.csv       control branch trials
//! control_archive.csv
//! metrics.csv
//! plots/{mutation,control}/grid_psi_<lo>_<hi>.csv, topdown.svg, topdown.csv
//! ```
//!
//! Everything except the manifest and the plots can be regenerated from the
//! three trial logs.

mod metrics;
mod plots;
mod repeatability;

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bridge::{
    read_trial_log, BackendError, EvaluatorConfig, EvaluatorConfigError, GatedEvaluator, TrialLogError,
    TrialLogWriter, TrialOutcome, TrialRecord,
};
use crate::bridge::Backend;
use crate::repertoire::{
    run_map_elites, Archive, ArchiveError, BinGeometry, GaussianMutation, GeometryError, Phase, SearchConfig,
    SearchError,
};
use crate::sim::{PrismParams, SimConfig, SimError, Simulator, StructureSpec};

pub use metrics::{compute_metrics, MetricsRow, MetricsTable, METRICS_HEADER};
pub use plots::{emit_rotation_grids, emit_topdown_arrows, grid_file_name, read_grid};
pub use repeatability::{
    read_param_list, run_repeatability, write_repeatability_outputs, RepeatabilityConfig, RepeatabilityRun,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every stream in the run is derived from it.
    pub seed: u64,
    pub n_shared: usize,
    /// Trials per branch.
    pub n_branch: usize,
    pub sigma: f64,
    pub output_dir: PathBuf,
    pub evaluator: EvaluatorConfig,
    pub geometry: BinGeometry,
    pub sim: SimConfig,
    pub structure: PrismParams,
    pub repeatability: RepeatabilityConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_shared: 100,
            n_branch: 400,
            sigma: GaussianMutation::DEFAULT_SIGMA,
            output_dir: PathBuf::from("runs/tensemap"),
            evaluator: EvaluatorConfig::default(),
            geometry: BinGeometry::default(),
            sim: SimConfig::default(),
            structure: PrismParams::default(),
            repeatability: RepeatabilityConfig::default(),
        }
    }
}

/// Seeds derived from the master seed, one per independent stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub shared: u64,
    pub mutation: u64,
    pub control: u64,
    pub simulator: u64,
}

impl Seeds {
    pub fn derive(master: u64) -> Self {
        let d = |tag: &[u8; 8]| {
            let mut key = [0u8; 32];
            key[..8].copy_from_slice(&master.to_le_bytes());
            key[8..16].copy_from_slice(tag);
            ChaCha8Rng::from_seed(key).next_u64()
        };
        Self { master, shared: d(b"shared\0\0"), mutation: d(b"mutation"), control: d(b"control\0"), simulator: d(b"simulatr") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tensemap_version: String,
    pub created: String,
    pub seeds: Seeds,
    pub config: ExperimentConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Log { path: PathBuf, source: TrialLogError },
    #[error("{path}: {source}")]
    Archive { path: PathBuf, source: ArchiveError },
    #[error("{phase} phase: {source}")]
    Search { phase: Phase, source: SearchError },
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("simulator: {0}")]
    Sim(#[from] SimError),
    #[error("{0} already holds a run; pass --resume to continue it")]
    OutputExists(PathBuf),
    #[error("cannot resume: {0}")]
    Resume(String),
}

impl From<EvaluatorConfigError> for ExperimentError {
    fn from(e: EvaluatorConfigError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<GeometryError> for ExperimentError {
    fn from(e: GeometryError) -> Self {
        Self::Config(e.to_string())
    }
}

impl ExperimentError {
    /// Process exit code by error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::OutputExists(_) => 2,
            Self::Io { .. } => 3,
            Self::Search { source: SearchError::Sink(_), .. } => 3,
            Self::Search { .. } | Self::Backend(_) => 4,
            Self::Sim(_) => 5,
            Self::Log { .. } | Self::Archive { .. } | Self::Resume(_) => 6,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            ExperimentError::Config(m) => ExperimentError::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.evaluator.validate()?;
        self.geometry.validate()?;
        if GaussianMutation::new(self.sigma).is_none() {
            return Err(ExperimentError::Config(format!("sigma {} must be finite and non-negative", self.sigma)));
        }
        if self.n_shared == 0 && self.n_branch > 0 {
            return Err(ExperimentError::Config("n_shared must be positive: the mutation branch needs elites".into()));
        }
        self.repeatability.validate()?;
        Ok(())
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::derive(self.seed)
    }

    /// Surrogate simulator described by this config, seeded from the master
    /// seed.
    pub fn simulator(&self) -> Result<Simulator, SimError> {
        let sim = SimConfig { seed: self.seeds().simulator, ..self.sim.clone() };
        Simulator::new(StructureSpec::hexagonal_prism(&self.structure), sim)
    }

    fn phase_plan(&self, phase: Phase) -> SearchConfig {
        let seeds = self.seeds();
        let base = SearchConfig { sigma: self.sigma, completed: 0, ..SearchConfig::default() };
        let (shared, branch) = (self.n_shared as u64, self.n_branch as u64);
        match phase {
            Phase::SharedRandom => SearchConfig {
                n_random: self.n_shared,
                n_mutation: 0,
                seed: seeds.shared,
                first_trial_id: 0,
                random_phase: Phase::SharedRandom,
                ..base
            },
            Phase::Mutation => SearchConfig {
                n_random: 0,
                n_mutation: self.n_branch,
                seed: seeds.mutation,
                first_trial_id: shared,
                random_phase: Phase::Mutation,
                ..base
            },
            Phase::RandomControl => SearchConfig {
                n_random: self.n_branch,
                n_mutation: 0,
                seed: seeds.control,
                first_trial_id: shared + branch,
                random_phase: Phase::RandomControl,
                ..base
            },
        }
    }
}

/// File stem used for each phase's log and archive.
pub fn phase_stem(phase: Phase) -> &'static str {
    match phase {
        Phase::SharedRandom => "shared",
        Phase::Mutation => "mutation",
        Phase::RandomControl => "control",
    }
}

pub fn trial_log_path(dir: &Path, phase: Phase) -> PathBuf {
    dir.join(format!("{}_trials.csv", phase_stem(phase)))
}

pub fn archive_path(dir: &Path, phase: Phase) -> PathBuf {
    dir.join(format!("{}_archive.csv", phase_stem(phase)))
}

pub const MANIFEST: &str = "manifest.toml";
pub const METRICS: &str = "metrics.csv";

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub dir: PathBuf,
    pub seeds: Seeds,
    pub metrics: MetricsTable,
    pub shared_archive: Archive,
    pub mutation_archive: Archive,
    pub control_archive: Archive,
    pub shared_log: Vec<TrialRecord>,
    pub mutation_log: Vec<TrialRecord>,
    pub control_log: Vec<TrialRecord>,
}

/// Run the full experiment into `cfg.output_dir`, which must not already
/// hold a run.
pub fn run_experiment<B: Backend + ?Sized>(cfg: &ExperimentConfig, backend: &mut B) -> Result<ExperimentOutcome, ExperimentError> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    if dir.join(MANIFEST).exists() {
        return Err(ExperimentError::OutputExists(dir));
    }
    let manifest = Manifest {
        tensemap_version: env!("CARGO_PKG_VERSION").to_string(),
        created: crate::bridge::now_iso8601(),
        seeds: cfg.seeds(),
        config: cfg.clone(),
    };
    write_manifest(&dir, &manifest)?;
    execute(&dir, cfg, backend, false)
}

/// Continue an interrupted run from its logs. The manifest's config is
/// used; `evaluator` replaces the recorded evaluator settings when given
/// (for instance a new endpoint after reconnecting hardware).
pub fn resume_experiment<B: Backend + ?Sized>(
    dir: &Path,
    evaluator: Option<EvaluatorConfig>,
    backend: &mut B,
) -> Result<ExperimentOutcome, ExperimentError> {
    let mut manifest = read_manifest(dir)?;
    if let Some(e) = evaluator {
        if e.stationarity_threshold != manifest.config.evaluator.stationarity_threshold
            || e.trial_duration_s != manifest.config.evaluator.trial_duration_s
        {
            return Err(ExperimentError::Resume(
                "threshold and trial duration cannot change within a run".into(),
            ));
        }
        manifest.config.evaluator = e;
    }
    let mut cfg = manifest.config.clone();
    cfg.output_dir = dir.to_path_buf();
    cfg.validate()?;
    execute(dir, &cfg, backend, true)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, ExperimentError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let m: Manifest = toml::from_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
    if m.seeds != m.config.seeds() {
        return Err(ExperimentError::Config(format!("{}: seeds do not match the master seed", path.display())));
    }
    Ok(m)
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<(), ExperimentError> {
    let path = dir.join(MANIFEST);
    let text = toml::to_string(m).map_err(|e| ExperimentError::Config(e.to_string()))?;
    fs::write(&path, text).map_err(io_err(&path))
}

fn execute<B: Backend + ?Sized>(
    dir: &Path,
    cfg: &ExperimentConfig,
    backend: &mut B,
    resume: bool,
) -> Result<ExperimentOutcome, ExperimentError> {
    let geometry = cfg.geometry;
    let mut evaluator = GatedEvaluator::new(cfg.evaluator.clone(), geometry, backend);

    let empty = Archive::new(geometry);
    let (shared_archive, shared_log) = run_phase(dir, cfg, Phase::SharedRandom, &empty, &mut evaluator, resume)?;
    let (mutation_archive, mutation_log) =
        run_phase(dir, cfg, Phase::Mutation, &shared_archive, &mut evaluator, resume)?;
    let (control_archive, control_log) =
        run_phase(dir, cfg, Phase::RandomControl, &shared_archive, &mut evaluator, resume)?;

    let metrics = compute_metrics(&shared_log, &mutation_log, &control_log, &geometry);
    let path = dir.join(METRICS);
    metrics.write_csv(File::create(&path).map_err(io_err(&path))?).map_err(io_err(&path))?;
    emit_all_plots(dir, &mutation_archive, &control_archive)?;

    Ok(ExperimentOutcome {
        dir: dir.to_path_buf(),
        seeds: cfg.seeds(),
        metrics,
        shared_archive,
        mutation_archive,
        control_archive,
        shared_log,
        mutation_log,
        control_log,
    })
}

fn run_phase<E: crate::repertoire::Evaluator + ?Sized>(
    dir: &Path,
    cfg: &ExperimentConfig,
    phase: Phase,
    start: &Archive,
    evaluator: &mut E,
    resume: bool,
) -> Result<(Archive, Vec<TrialRecord>), ExperimentError> {
    let mut plan = cfg.phase_plan(phase);
    let log_path = trial_log_path(dir, phase);
    let mut archive = start.clone();
    let mut done = Vec::new();
    let mut writer = if resume && log_path.exists() {
        // opening for append first drops a torn final line
        let writer = TrialLogWriter::append(&log_path).map_err(io_err(&log_path))?;
        done = load_phase_log(&log_path, &plan, &cfg.geometry)?;
        replay(&mut archive, &done);
        plan.completed = done.len();
        writer
    } else {
        TrialLogWriter::create(&log_path).map_err(io_err(&log_path))?
    };
    let fresh = run_map_elites(&plan, evaluator, &mut archive, &mut writer)
        .map_err(|source| ExperimentError::Search { phase, source })?;
    done.extend(fresh);

    let path = archive_path(dir, phase);
    let file = File::create(&path).map_err(io_err(&path))?;
    archive
        .write_csv(BufWriter::new(file))
        .map_err(|source| ExperimentError::Archive { path: path.clone(), source })?;
    Ok((archive, done))
}

/// Offer every non-error record of a log to `archive`, in order.
pub fn replay(archive: &mut Archive, log: &[TrialRecord]) {
    for r in log.iter().filter(|r| r.outcome != TrialOutcome::Error) {
        archive.offer(r.params, r.behavior, r.trial_id, r.phase);
    }
}

/// Reduce a raw log to the trials that count: a failed trial that was later
/// retried is superseded by the retry, and a trailing failure is dropped so
/// that it runs again.
pub fn effective_log(raw: Vec<TrialRecord>) -> Vec<TrialRecord> {
    let mut out: Vec<TrialRecord> = Vec::with_capacity(raw.len());
    for r in raw {
        match out.last() {
            Some(last) if last.trial_id == r.trial_id && last.outcome == TrialOutcome::Error => {
                *out.last_mut().expect("non-empty") = r;
            }
            _ => out.push(r),
        }
    }
    if out.last().is_some_and(|r| r.outcome == TrialOutcome::Error) {
        out.pop();
    }
    out
}

fn load_phase_log(path: &Path, plan: &SearchConfig, geometry: &BinGeometry) -> Result<Vec<TrialRecord>, ExperimentError> {
    let file = File::open(path).map_err(io_err(path))?;
    let raw = read_trial_log(BufReader::new(file), geometry)
        .map_err(|source| ExperimentError::Log { path: path.to_path_buf(), source })?;
    let log = effective_log(raw);
    let bad = |m: String| ExperimentError::Resume(format!("{}: {m}", path.display()));
    if log.len() > plan.total() {
        return Err(bad(format!("{} trials logged but the phase has only {}", log.len(), plan.total())));
    }
    for (k, r) in log.iter().enumerate() {
        let id = plan.first_trial_id + k as u64;
        if r.trial_id != id {
            return Err(bad(format!("expected trial {id}, found {}", r.trial_id)));
        }
        let phase = if k < plan.n_random { plan.random_phase } else { Phase::Mutation };
        if r.phase != phase {
            return Err(bad(format!("trial {id} is labelled {} instead of {phase}", r.phase)));
        }
        if r.outcome == TrialOutcome::Error {
            return Err(bad(format!("trial {id} failed and was never retried")));
        }
    }
    Ok(log)
}

/// Read the three phase logs of a run directory.
pub fn load_logs(dir: &Path) -> Result<(Manifest, [Vec<TrialRecord>; 3]), ExperimentError> {
    let manifest = read_manifest(dir)?;
    let cfg = &manifest.config;
    let mut logs: [Vec<TrialRecord>; 3] = Default::default();
    for (slot, phase) in logs.iter_mut().zip([Phase::SharedRandom, Phase::Mutation, Phase::RandomControl]) {
        let path = trial_log_path(dir, phase);
        *slot = load_phase_log(&path, &cfg.phase_plan(phase), &cfg.geometry)?;
    }
    Ok((manifest, logs))
}

/// Recompute the metrics table of a run directory from its trial logs.
pub fn metrics_from_dir(dir: &Path) -> Result<MetricsTable, ExperimentError> {
    let (manifest, [shared, mutation, control]) = load_logs(dir)?;
    Ok(compute_metrics(&shared, &mutation, &control, &manifest.config.geometry))
}

/// Rebuild both branch archives from the logs and write every plot.
pub fn plots_from_dir(dir: &Path) -> Result<(), ExperimentError> {
    let (manifest, [shared, mutation, control]) = load_logs(dir)?;
    let mut base = Archive::new(manifest.config.geometry);
    replay(&mut base, &shared);
    let mut treated = base.clone();
    replay(&mut treated, &mutation);
    let mut controlled = base;
    replay(&mut controlled, &control);
    emit_all_plots(dir, &treated, &controlled)
}

fn emit_all_plots(dir: &Path, mutation: &Archive, control: &Archive) -> Result<(), ExperimentError> {
    for (name, archive) in [("mutation", mutation), ("control", control)] {
        let out = dir.join("plots").join(name);
        fs::create_dir_all(&out).map_err(io_err(&out))?;
        emit_rotation_grids(archive, &out).map_err(io_err(&out))?;
        emit_topdown_arrows(archive, &out).map_err(io_err(&out))?;
    }
    Ok(())
}
