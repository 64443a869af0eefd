use std::collections::BTreeSet;
use std::io::{self, Read, Write};

use crate::bridge::{TrialOutcome, TrialRecord};
use crate::repertoire::{Archive, BinGeometry, BinIndex};

pub const METRICS_HEADER: [&str; 6] =
    ["set", "trials", "unique_behaviors", "avg_elite_fitness", "avg_trial_fitness", "coverage"];

/// One trial set's row of the metrics table. Averages are `None` when the
/// set is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub set: String,
    pub trials: usize,
    /// Bins attributed to this set.
    pub unique: usize,
    /// Mean fitness of the final elites of those bins.
    pub avg_elite_fitness: Option<f64>,
    /// Mean fitness over every trial in the set; skipped trials count as 0.
    pub avg_trial_fitness: Option<f64>,
    /// `unique` over the total number of bins.
    pub coverage: f64,
}

/// Metrics for the shared phase, each branch, and the shared phase plus the
/// treatment branch.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub shared: MetricsRow,
    pub mutation: MetricsRow,
    pub random: MetricsRow,
    pub mutation_total: MetricsRow,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, sum) = values.fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    (n > 0).then(|| sum / n as f64)
}

fn row(set: &str, trials: &[&TrialRecord], archive: &Archive, bins: &BTreeSet<BinIndex>) -> MetricsRow {
    let elites = bins.iter().map(|b| archive.get(b).expect("attributed bin is occupied").fitness);
    MetricsRow {
        set: set.to_string(),
        trials: trials.len(),
        unique: bins.len(),
        avg_elite_fitness: mean(elites),
        avg_trial_fitness: mean(trials.iter().map(|r| r.fitness)),
        coverage: bins.len() as f64 / archive.geometry().bin_count() as f64,
    }
}

fn counted(log: &[TrialRecord]) -> Vec<&TrialRecord> {
    log.iter().filter(|r| r.outcome != TrialOutcome::Error).collect()
}

/// Metrics as a pure function of the three trial logs.
///
/// The shared set owns every bin occupied after the shared phase. Each
/// branch owns the bins it newly occupied relative to that snapshot, so
/// `mutation_total.unique == shared.unique + mutation.unique` always holds.
/// Elite averages use the elites present at the end of the respective set.
/// Failed trials are ignored.
pub fn compute_metrics(
    shared: &[TrialRecord],
    mutation: &[TrialRecord],
    control: &[TrialRecord],
    geometry: &BinGeometry,
) -> MetricsTable {
    let mut base = Archive::new(*geometry);
    super::replay(&mut base, shared);
    let mut treated = base.clone();
    super::replay(&mut treated, mutation);
    let mut controlled = base.clone();
    super::replay(&mut controlled, control);

    let base_bins: BTreeSet<BinIndex> = base.iter().map(|(b, _)| *b).collect();
    let new_bins = |a: &Archive| a.iter().map(|(b, _)| *b).filter(|b| !base_bins.contains(b)).collect::<BTreeSet<_>>();
    let treated_all: BTreeSet<BinIndex> = treated.iter().map(|(b, _)| *b).collect();

    let shared_trials = counted(shared);
    let mutation_trials = counted(mutation);
    let control_trials = counted(control);
    let total_trials: Vec<&TrialRecord> = shared_trials.iter().chain(&mutation_trials).copied().collect();

    MetricsTable {
        shared: row("shared_random", &shared_trials, &base, &base_bins),
        mutation: row("mutation", &mutation_trials, &treated, &new_bins(&treated)),
        random: row("random", &control_trials, &controlled, &new_bins(&controlled)),
        mutation_total: row("mutation_total", &total_trials, &treated, &treated_all),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl MetricsTable {
    pub fn rows(&self) -> [&MetricsRow; 4] {
        [&self.shared, &self.mutation, &self.random, &self.mutation_total]
    }

    /// Treatment over control new-bin count; `None` if the control found none.
    pub fn unique_ratio(&self) -> Option<f64> {
        (self.random.unique > 0).then(|| self.mutation.unique as f64 / self.random.unique as f64)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(METRICS_HEADER)?;
        for r in self.rows() {
            w.write_record([
                r.set.clone(),
                r.trials.to_string(),
                r.unique.to_string(),
                opt(r.avg_elite_fitness),
                opt(r.avg_trial_fitness),
                format!("{:.6}", r.coverage),
            ])?;
        }
        w.flush()
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, String> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            let num = |i: usize| rec.get(i).unwrap_or("").parse::<f64>().map_err(|e| format!("{}: {e}", METRICS_HEADER[i]));
            let count = |i: usize| rec.get(i).unwrap_or("").parse::<usize>().map_err(|e| format!("{}: {e}", METRICS_HEADER[i]));
            let optional = |i: usize| match rec.get(i) {
                Some("") => Ok(None),
                _ => num(i).map(Some),
            };
            rows.push(MetricsRow {
                set: rec.get(0).unwrap_or("").to_string(),
                trials: count(1)?,
                unique: count(2)?,
                avg_elite_fitness: optional(3)?,
                avg_trial_fitness: optional(4)?,
                coverage: num(5)?,
            });
        }
        let [shared, mutation, random, mutation_total]: [MetricsRow; 4] =
            rows.try_into().map_err(|r: Vec<MetricsRow>| format!("expected 4 rows, found {}", r.len()))?;
        Ok(Self { shared, mutation, random, mutation_total })
    }

    /// Human-readable table.
    pub fn render(&self) -> String {
        let mut s = format!(
            "{:<16} {:>6} {:>7} {:>9} {:>10} {:>9}\n",
            "set", "trials", "unique", "elite_fit", "trial_fit", "coverage"
        );
        let f = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
        for r in self.rows() {
            s += &format!(
                "{:<16} {:>6} {:>7} {:>9} {:>10} {:>8.1}%\n",
                r.set,
                r.trials,
                r.unique,
                f(r.avg_elite_fitness),
                f(r.avg_trial_fitness),
                r.coverage * 100.0
            );
        }
        s
    }
}
