use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{fitness, quantize, Behavior, BinGeometry, BinIndex, ClampFlags, ParameterSet, Phase};

/// The best solution found so far for one bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elite {
    pub params: ParameterSet,
    pub behavior: Behavior,
    pub fitness: f64,
    pub trial_id: u64,
    pub phase: Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OfferOutcome {
    NewBin,
    Replaced,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Offer {
    pub outcome: OfferOutcome,
    pub bin: BinIndex,
    pub clamped: ClampFlags,
    pub fitness: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("archive is empty: the mutation phase needs at least one elite from a random phase")]
    Empty,
    #[error("archive csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("archive csv line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub const ARCHIVE_HEADER: [&str; 12] = [
    "bin_x", "bin_y", "bin_psi", "f1", "f2", "f3", "dx_mm", "dy_mm", "dpsi_deg", "fitness",
    "trial_id", "phase",
];

/// Map from bin to elite. Iteration order (and therefore selection and the
/// persisted form) follows `BinIndex` ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    geometry: BinGeometry,
    bins: BTreeMap<BinIndex, Elite>,
}

impl Archive {
    pub fn new(geometry: BinGeometry) -> Self {
        Self { geometry, bins: BTreeMap::new() }
    }

    pub fn geometry(&self) -> &BinGeometry {
        &self.geometry
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn coverage(&self) -> f64 {
        self.len() as f64 / self.geometry.bin_count() as f64
    }

    pub fn get(&self, bin: &BinIndex) -> Option<&Elite> {
        self.bins.get(bin)
    }

    pub fn contains(&self, bin: &BinIndex) -> bool {
        self.bins.contains_key(bin)
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (&BinIndex, &Elite)> {
        self.bins.iter()
    }

    pub fn elites(&self) -> impl ExactSizeIterator<Item = &Elite> {
        self.bins.values()
    }

    pub fn nth_elite(&self, n: usize) -> Option<&Elite> {
        self.bins.values().nth(n)
    }

    /// Insert into an empty bin, or replace the incumbent when the new
    /// fitness is strictly greater. Ties keep the incumbent.
    pub fn offer(&mut self, params: ParameterSet, behavior: Behavior, trial_id: u64, phase: Phase) -> Offer {
        let (bin, clamped) = self.geometry.bin_index(&behavior);
        let fit = fitness(&behavior, &self.geometry);
        let elite = Elite { params, behavior, fitness: fit, trial_id, phase };
        let outcome = match self.bins.get_mut(&bin) {
            None => {
                self.bins.insert(bin, elite);
                OfferOutcome::NewBin
            }
            Some(incumbent) if incumbent.fitness < fit => {
                *incumbent = elite;
                OfferOutcome::Replaced
            }
            Some(_) => OfferOutcome::Rejected,
        };
        Offer { outcome, bin, clamped, fitness: fit }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ArchiveError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(ARCHIVE_HEADER)?;
        for (bin, e) in &self.bins {
            w.write_record([
                bin.ix.to_string(),
                bin.iy.to_string(),
                bin.ipsi.to_string(),
                e.params.f1.to_string(),
                e.params.f2.to_string(),
                e.params.f3.to_string(),
                fmt3(e.behavior.dx),
                fmt3(e.behavior.dy),
                fmt3(e.behavior.dpsi),
                fmt3(e.fitness),
                e.trial_id.to_string(),
                e.phase.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Load a persisted archive. Fitness is recomputed from the stored
    /// behavior and every row must sit in the bin its behavior maps to.
    pub fn read_csv<R: Read>(input: R, geometry: BinGeometry) -> Result<Self, ArchiveError> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(input);
        let header = rdr.headers()?.clone();
        if header.iter().ne(ARCHIVE_HEADER.iter().copied()) {
            return Err(ArchiveError::Malformed { line: 1, message: "unexpected header".into() });
        }
        let mut archive = Archive::new(geometry);
        for row in rdr.records() {
            let row = row?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            let bad = |message: String| ArchiveError::Malformed { line, message };
            let field = |i: usize| row.get(i).unwrap_or("");
            let int = |i: usize| field(i).parse::<u64>().map_err(|e| bad(format!("{}: {e}", ARCHIVE_HEADER[i])));
            let byte = |i: usize| field(i).parse::<u8>().map_err(|e| bad(format!("{}: {e}", ARCHIVE_HEADER[i])));
            let float = |i: usize| field(i).parse::<f64>().map_err(|e| bad(format!("{}: {e}", ARCHIVE_HEADER[i])));
            let bin = BinIndex::new(int(0)? as usize, int(1)? as usize, int(2)? as usize);
            let params = ParameterSet::new(byte(3)?, byte(4)?, byte(5)?);
            let behavior = Behavior::new(float(6)?, float(7)?, float(8)?);
            let trial_id = int(10)?;
            let phase = field(11).parse::<Phase>().map_err(&bad)?;
            let (actual, _) = geometry.bin_index(&behavior);
            if actual != bin {
                return Err(bad(format!("behavior maps to {actual}, row claims {bin}")));
            }
            if archive.bins.contains_key(&bin) {
                return Err(bad(format!("duplicate bin {bin}")));
            }
            let fit = fitness(&behavior, &geometry);
            archive.bins.insert(bin, Elite { params, behavior, fitness: fit, trial_id, phase });
        }
        Ok(archive)
    }
}

pub(crate) fn fmt3(v: f64) -> String {
    format!("{:.3}", quantize(v))
}
