use super::variation::{sample_random, select_elite, trial_rng, GaussianMutation};
use super::{Archive, ArchiveError, ParameterSet, Phase};
use crate::bridge::{TrialOutcome, TrialRecord};

/// Anything that can turn a parameter set into a logged trial: the gated
/// surrogate, an external robot, or a test double.
pub trait Evaluator {
    fn evaluate(&mut self, trial_id: u64, phase: Phase, params: ParameterSet) -> TrialRecord;
}

impl<E: Evaluator + ?Sized> Evaluator for &mut E {
    fn evaluate(&mut self, trial_id: u64, phase: Phase, params: ParameterSet) -> TrialRecord {
        (**self).evaluate(trial_id, phase, params)
    }
}

/// Destination for completed trials, written before the archive is touched.
pub trait TrialSink {
    fn record(&mut self, record: &TrialRecord) -> std::io::Result<()>;
}

impl TrialSink for Vec<TrialRecord> {
    fn record(&mut self, record: &TrialRecord) -> std::io::Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

/// Discards records; handy when only the returned log matters.
impl TrialSink for () {
    fn record(&mut self, _: &TrialRecord) -> std::io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    /// Phase-1 evaluations of uniformly random parameter sets.
    pub n_random: usize,
    /// Phase-2 select/mutate/evaluate/offer iterations.
    pub n_mutation: usize,
    pub sigma: f64,
    pub seed: u64,
    /// Id given to the first trial of this search; later trials count up.
    pub first_trial_id: u64,
    /// Label for phase-1 records.
    pub random_phase: Phase,
    /// Number of trials already completed (and replayed into the archive)
    /// by an interrupted run; the search continues from there.
    pub completed: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            n_random: 100,
            n_mutation: 400,
            sigma: GaussianMutation::DEFAULT_SIGMA,
            seed: 0,
            first_trial_id: 0,
            random_phase: Phase::SharedRandom,
            completed: 0,
        }
    }
}

impl SearchConfig {
    pub fn total(&self) -> usize {
        self.n_random + self.n_mutation
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("trial {trial_id}: {source}")]
    Archive { trial_id: u64, source: ArchiveError },
    #[error("trial {trial_id} failed: {message}")]
    Evaluator { trial_id: u64, message: String },
    #[error("mutation sigma {0} must be finite and non-negative")]
    Sigma(f64),
    #[error("writing trial log: {0}")]
    Sink(#[from] std::io::Error),
}

/// Two-phase MAP-Elites. Phase 1 offers `n_random` random parameter sets;
/// phase 2 repeats select, mutate, evaluate, offer `n_mutation` times.
///
/// Every trial is handed to `sink` before it is offered. An evaluator error
/// is logged and then returned; the archive and log up to that point are
/// consistent, so the run can be resumed with `completed` set accordingly.
pub fn run_map_elites<E, S>(
    cfg: &SearchConfig,
    evaluator: &mut E,
    archive: &mut Archive,
    sink: &mut S,
) -> Result<Vec<TrialRecord>, SearchError>
where
    E: Evaluator + ?Sized,
    S: TrialSink + ?Sized,
{
    let mutation = GaussianMutation::new(cfg.sigma).ok_or(SearchError::Sigma(cfg.sigma))?;
    let mut records = Vec::with_capacity(cfg.total().saturating_sub(cfg.completed));
    for k in cfg.completed..cfg.total() {
        let trial_id = cfg.first_trial_id + k as u64;
        let (phase, params) = if k < cfg.n_random {
            let mut rng = trial_rng(cfg.seed, cfg.random_phase, trial_id);
            (cfg.random_phase, sample_random(&mut rng))
        } else {
            let mut rng = trial_rng(cfg.seed, Phase::Mutation, trial_id);
            let parent = select_elite(archive, &mut rng)
                .map_err(|source| SearchError::Archive { trial_id, source })?;
            (Phase::Mutation, mutation.mutate(parent.params, &mut rng))
        };
        let record = evaluator.evaluate(trial_id, phase, params);
        sink.record(&record)?;
        if record.outcome == TrialOutcome::Error {
            return Err(SearchError::Evaluator {
                trial_id,
                message: record.message.unwrap_or_else(|| "unknown error".into()),
            });
        }
        archive.offer(params, record.behavior, trial_id, phase);
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repertoire::{Behavior, BinGeometry};

    /// Deterministic toy landscape: behavior is an affine function of params.
    struct Affine;

    impl Evaluator for Affine {
        fn evaluate(&mut self, trial_id: u64, phase: Phase, p: ParameterSet) -> TrialRecord {
            let b = Behavior::new(
                (p.f1 as f64 - p.f2 as f64) * 1.5,
                (p.f3 as f64 - 128.0) * 2.5,
                (p.f1 as f64 - p.f3 as f64) * 0.7,
            );
            TrialRecord::evaluated(trial_id, phase, p, b, &BinGeometry::default())
        }
    }

    struct FailAt(u64);

    impl Evaluator for FailAt {
        fn evaluate(&mut self, trial_id: u64, phase: Phase, p: ParameterSet) -> TrialRecord {
            if trial_id == self.0 {
                TrialRecord::error(trial_id, phase, p, "motor stall".into(), &BinGeometry::default())
            } else {
                Affine.evaluate(trial_id, phase, p)
            }
        }
    }

    fn cfg(n_random: usize, n_mutation: usize) -> SearchConfig {
        SearchConfig { n_random, n_mutation, seed: 11, ..SearchConfig::default() }
    }

    #[test]
    fn empty_archive_fails_at_phase_two() {
        let mut a = Archive::new(BinGeometry::default());
        let err = run_map_elites(&cfg(0, 5), &mut Affine, &mut a, &mut ()).unwrap_err();
        assert!(matches!(err, SearchError::Archive { trial_id: 0, source: ArchiveError::Empty }));
    }

    #[test]
    fn phases_and_ids() {
        let mut a = Archive::new(BinGeometry::default());
        let c = SearchConfig { first_trial_id: 100, ..cfg(10, 20) };
        let log = run_map_elites(&c, &mut Affine, &mut a, &mut ()).unwrap();
        assert_eq!(log.len(), 30);
        assert!(log[..10].iter().all(|r| r.phase == Phase::SharedRandom));
        assert!(log[10..].iter().all(|r| r.phase == Phase::Mutation));
        let ids: Vec<u64> = log.iter().map(|r| r.trial_id).collect();
        assert_eq!(ids, (100..130).collect::<Vec<_>>());
    }

    #[test]
    fn occupied_bins_never_decrease() {
        let mut a = Archive::new(BinGeometry::default());
        let c = cfg(20, 0);
        run_map_elites(&c, &mut Affine, &mut a, &mut ()).unwrap();
        let mut last = a.len();
        for k in 0..50 {
            let c = SearchConfig { n_random: 0, n_mutation: 1, first_trial_id: 20 + k, ..cfg(0, 1) };
            run_map_elites(&c, &mut Affine, &mut a, &mut ()).unwrap();
            assert!(a.len() >= last);
            last = a.len();
        }
    }

    #[test]
    fn error_is_logged_then_resume_matches_uninterrupted() {
        let geometry = BinGeometry::default();
        let full_cfg = cfg(8, 12);
        let mut full = Archive::new(geometry);
        let full_log = run_map_elites(&full_cfg, &mut Affine, &mut full, &mut ()).unwrap();

        let mut a = Archive::new(geometry);
        let mut sink: Vec<TrialRecord> = Vec::new();
        let err = run_map_elites(&full_cfg, &mut FailAt(13), &mut a, &mut sink).unwrap_err();
        assert!(matches!(err, SearchError::Evaluator { trial_id: 13, .. }));
        assert_eq!(sink.len(), 14);
        assert_eq!(sink.last().unwrap().outcome, TrialOutcome::Error);

        let resumed = SearchConfig { completed: 13, ..full_cfg };
        let rest = run_map_elites(&resumed, &mut Affine, &mut a, &mut ()).unwrap();
        assert_eq!(a, full);
        assert_eq!(rest.len(), 7);
        for (r, f) in rest.iter().zip(&full_log[13..]) {
            assert_eq!((r.trial_id, r.params, r.bin), (f.trial_id, f.params, f.bin));
        }
    }

    #[test]
    fn same_seed_same_archive() {
        let run = || {
            let mut a = Archive::new(BinGeometry::default());
            run_map_elites(&cfg(30, 60), &mut Affine, &mut a, &mut ()).unwrap();
            let mut buf = Vec::new();
            a.write_csv(&mut buf).unwrap();
            buf
        };
        assert_eq!(run(), run());
    }
}
