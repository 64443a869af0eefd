use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use super::{TrialOutcome, TrialRecord};
use crate::repertoire::fmt3;
use crate::repertoire::{fitness, Behavior, BinGeometry, BinIndex, ParameterSet, Phase, TrialSink};

pub const TRIAL_LOG_HEADER: [&str; 14] = [
    "trial_id",
    "phase",
    "f1",
    "f2",
    "f3",
    "dx_mm",
    "dy_mm",
    "dpsi_deg",
    "bin_x",
    "bin_y",
    "bin_psi",
    "fitness",
    "outcome",
    "timestamp_iso8601",
];

#[derive(Debug, thiserror::Error)]
pub enum TrialLogError {
    #[error("trial log line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("trial log: {0}")]
    Csv(#[from] csv::Error),
    #[error("trial log: {0}")]
    Io(#[from] io::Error),
}

fn row(r: &TrialRecord) -> [String; 14] {
    [
        r.trial_id.to_string(),
        r.phase.to_string(),
        r.params.f1.to_string(),
        r.params.f2.to_string(),
        r.params.f3.to_string(),
        fmt3(r.behavior.dx),
        fmt3(r.behavior.dy),
        fmt3(r.behavior.dpsi),
        r.bin.ix.to_string(),
        r.bin.iy.to_string(),
        r.bin.ipsi.to_string(),
        format!("{:.6}", r.fitness),
        r.outcome.to_string(),
        r.timestamp.clone(),
    ]
}

/// Append-only CSV trial log. Every record is flushed before `record`
/// returns, so a crash loses at most the line being written.
pub struct TrialLogWriter {
    out: csv::Writer<BufWriter<File>>,
}

impl TrialLogWriter {
    /// Start a new log, replacing any existing file.
    pub fn create(path: impl AsRef<Path>) -> io::Result<Self> {
        let file = File::create(path)?;
        let mut w = Self::wrap(file);
        w.out.write_record(TRIAL_LOG_HEADER)?;
        w.out.flush()?;
        Ok(w)
    }

    /// Continue an existing log. A torn final line is cut off; a missing or
    /// empty file gets a fresh header.
    pub fn append(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref();
        let mut file = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        file.set_len(keep as u64)?;
        file.seek(SeekFrom::End(0))?;
        let mut w = Self::wrap(file);
        if keep == 0 {
            w.out.write_record(TRIAL_LOG_HEADER)?;
            w.out.flush()?;
        }
        Ok(w)
    }

    fn wrap(file: File) -> Self {
        let out = csv::WriterBuilder::new()
            .has_headers(false)
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(BufWriter::new(file));
        Self { out }
    }
}

impl TrialSink for TrialLogWriter {
    fn record(&mut self, r: &TrialRecord) -> io::Result<()> {
        self.out.write_record(row(r))?;
        self.out.flush()
    }
}

/// Write a complete log to `out`.
pub fn write_trial_log<W: Write>(records: &[TrialRecord], out: W) -> Result<(), TrialLogError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(TRIAL_LOG_HEADER)?;
    for r in records {
        w.write_record(row(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a trial log. Bin and fitness are recomputed from the logged
/// behavior and must agree with the logged columns.
pub fn read_trial_log<R: Read>(input: R, geometry: &BinGeometry) -> Result<Vec<TrialRecord>, TrialLogError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(input);
    if rdr.headers()?.iter().ne(TRIAL_LOG_HEADER.iter().copied()) {
        return Err(TrialLogError::Malformed { line: 1, message: "unexpected header".into() });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| TrialLogError::Malformed { line, message };
        if rec.len() != TRIAL_LOG_HEADER.len() {
            return Err(bad(format!("expected {} fields, found {}", TRIAL_LOG_HEADER.len(), rec.len())));
        }
        fn parse<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            rec[i].parse::<T>().map_err(|e| format!("{} `{}`: {e}", TRIAL_LOG_HEADER[i], &rec[i]))
        }
        let f = |i| parse::<f64>(&rec, i).map_err(bad);
        let u = |i| parse::<usize>(&rec, i).map_err(bad);
        let byte = |i| parse::<u8>(&rec, i).map_err(bad);

        let trial_id = parse::<u64>(&rec, 0).map_err(bad)?;
        let phase: Phase = rec[1].parse().map_err(|e: String| bad(e))?;
        let params = ParameterSet::new(byte(2)?, byte(3)?, byte(4)?);
        let behavior = Behavior::new(f(5)?, f(6)?, f(7)?);
        if !behavior.is_finite() {
            return Err(bad("non-finite behavior".into()));
        }
        let logged_bin = BinIndex::new(u(8)?, u(9)?, u(10)?);
        let logged_fitness = f(11)?;
        let outcome: TrialOutcome = rec[12].parse().map_err(|e: String| bad(e))?;

        let (bin, _) = geometry.bin_index(&behavior);
        if bin != logged_bin {
            return Err(bad(format!("bin {logged_bin} does not match behavior (expected {bin})")));
        }
        let fit = fitness(&behavior, geometry);
        if (fit - logged_fitness).abs() > 1e-6 {
            return Err(bad(format!("fitness {logged_fitness} does not match behavior ({fit:.6})")));
        }
        if outcome != TrialOutcome::Evaluated && behavior != Behavior::ZERO {
            return Err(bad(format!("{outcome} trial with non-zero behavior")));
        }
        out.push(TrialRecord {
            trial_id,
            phase,
            params,
            behavior,
            bin,
            fitness: fit,
            outcome,
            message: None,
            timestamp: rec[13].to_string(),
        });
    }
    Ok(out)
}
