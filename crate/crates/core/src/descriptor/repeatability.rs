use std::collections::BTreeMap;

use serde::Serialize;

use super::wrap_angle;
use crate::repertoire::{Behavior, ParameterSet};

/// One replicate: a parameter set run for `duration_s` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicateTrial {
    pub params: ParameterSet,
    pub duration_s: f64,
    pub behavior: Behavior,
}

/// Statistics of all replicates sharing a parameter set and duration.
/// Axis order is `[dx, dy, dpsi]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStats {
    pub params: ParameterSet,
    pub duration_s: f64,
    pub n: usize,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DurationScore {
    pub duration_s: f64,
    /// Per axis: largest group std over the mean absolute group mean.
    pub normalized_std: [f64; 3],
    /// Largest of the three.
    pub score: f64,
    pub max_std: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepeatabilityReport {
    pub groups: Vec<GroupStats>,
    pub durations: Vec<DurationScore>,
    /// Twice the largest per-axis std over every group.
    pub suggested_widths: [f64; 3],
    pub suggested_duration_s: f64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RepeatabilityError {
    #[error("no trials given")]
    Empty,
    #[error("parameter set {params} at {duration_s} s has {n} replicate(s), need at least 2")]
    InsufficientReplicates { params: ParameterSet, duration_s: f64, n: usize },
    #[error("duration {0} s is not a positive finite number")]
    BadDuration(f64),
}

/// Per-group sample statistics (n - 1 denominator) and the derived bin
/// width and trial duration suggestions.
///
/// Yaw is treated as circular: residuals are taken about the circular mean
/// and wrapped before squaring. The suggested duration minimizes the worst
/// per-axis normalized std; ties go to the shorter duration.
pub fn repeatability_stats(trials: &[ReplicateTrial]) -> Result<RepeatabilityReport, RepeatabilityError> {
    if trials.is_empty() {
        return Err(RepeatabilityError::Empty);
    }
    let mut grouped: BTreeMap<(u64, ParameterSet), Vec<Behavior>> = BTreeMap::new();
    for t in trials {
        if !(t.duration_s.is_finite() && t.duration_s > 0.0) {
            return Err(RepeatabilityError::BadDuration(t.duration_s));
        }
        grouped.entry((t.duration_s.to_bits(), t.params)).or_default().push(t.behavior);
    }

    let mut groups = Vec::with_capacity(grouped.len());
    for ((bits, params), reps) in &grouped {
        let duration_s = f64::from_bits(*bits);
        if reps.len() < 2 {
            return Err(RepeatabilityError::InsufficientReplicates { params: *params, duration_s, n: reps.len() });
        }
        let (mx, sx) = linear_stats(reps.iter().map(|b| b.dx));
        let (my, sy) = linear_stats(reps.iter().map(|b| b.dy));
        let (mpsi, spsi) = circular_stats(reps.iter().map(|b| b.dpsi));
        groups.push(GroupStats { params: *params, duration_s, n: reps.len(), mean: [mx, my, mpsi], std: [sx, sy, spsi] });
    }

    let mut suggested_widths = [0.0f64; 3];
    for g in &groups {
        for a in 0..3 {
            suggested_widths[a] = suggested_widths[a].max(2.0 * g.std[a]);
        }
    }

    let mut durations: Vec<f64> = groups.iter().map(|g| g.duration_s).collect();
    durations.sort_by(f64::total_cmp);
    durations.dedup();
    let scores: Vec<DurationScore> = durations
        .iter()
        .map(|&d| {
            let at: Vec<&GroupStats> = groups.iter().filter(|g| g.duration_s == d).collect();
            let mut max_std = [0.0f64; 3];
            let mut mean_abs = [0.0f64; 3];
            for g in &at {
                for a in 0..3 {
                    max_std[a] = max_std[a].max(g.std[a]);
                    mean_abs[a] += g.mean[a].abs() / at.len() as f64;
                }
            }
            let normalized_std: [f64; 3] = std::array::from_fn(|a| match (max_std[a], mean_abs[a]) {
                (0.0, _) => 0.0,
                (_, 0.0) => f64::INFINITY,
                (s, m) => s / m,
            });
            let score = normalized_std.iter().copied().fold(0.0, f64::max);
            DurationScore { duration_s: d, normalized_std, score, max_std }
        })
        .collect();
    let best = scores
        .iter()
        .fold(None::<&DurationScore>, |best, s| match best {
            Some(b) if b.score <= s.score => Some(b),
            _ => Some(s),
        })
        .expect("at least one duration");

    Ok(RepeatabilityReport {
        suggested_duration_s: best.duration_s,
        groups,
        durations: scores,
        suggested_widths,
    })
}

fn linear_stats(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn circular_stats(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (s, c) = values
        .clone()
        .map(|v| v.to_radians().sin_cos())
        .fold((0.0, 0.0), |(s, c), (vs, vc)| (s + vs, c + vc));
    let center = if s == 0.0 && c == 0.0 { 0.0 } else { s.atan2(c).to_degrees() };
    let (offset, std) = linear_stats(values.map(|v| wrap_angle(v - center)));
    (wrap_angle(center + offset), std)
}
