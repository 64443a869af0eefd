//! Global-frame pose tracking to local-frame behaviors.
//!
//! Yaw is stored counter-clockwise positive seen from above; the local frame
//! of a trial is the initial pose of the robot.

mod repeatability;

use std::io::Read;

use serde::Deserialize;

use crate::repertoire::Behavior;

pub use repeatability::{
    repeatability_stats, GroupStats, RepeatabilityError, RepeatabilityReport, ReplicateTrial,
};

/// Equivalent angle in `[-180, 180)` degrees. Angles already in range are
/// returned unchanged.
pub fn wrap_angle(deg: f64) -> f64 {
    if (-180.0..180.0).contains(&deg) {
        return deg;
    }
    let w = (deg + 180.0).rem_euclid(360.0) - 180.0;
    if w >= 180.0 {
        w - 360.0
    } else {
        w
    }
}

/// One planar pose from the tracking stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl PoseSample {
    pub fn new(t: f64, x: f64, y: f64, yaw: f64) -> Self {
        Self { t, x, y, yaw: wrap_angle(yaw) }
    }

    fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x.is_finite() && self.y.is_finite() && self.yaw.is_finite()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DescriptorError {
    #[error("final sample time {end} s is not after initial time {start} s")]
    NonIncreasingTime { start: f64, end: f64 },
    #[error("pose stream has fewer than two valid samples")]
    TooFewSamples,
    #[error("pose stream row {row}: time {t} s goes backwards")]
    TimeReversal { row: usize, t: f64 },
    #[error("pose csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Behavior between two poses: the global displacement rotated into the
/// initial heading frame, `local = R(-yaw0) * delta`, and the wrapped yaw
/// change.
pub fn to_local_behavior(initial: &PoseSample, last: &PoseSample) -> Result<Behavior, DescriptorError> {
    if !(last.t > initial.t) {
        return Err(DescriptorError::NonIncreasingTime { start: initial.t, end: last.t });
    }
    let gx = last.x - initial.x;
    let gy = last.y - initial.y;
    let (s, c) = initial.yaw.to_radians().sin_cos();
    Ok(Behavior::new(c * gx + s * gy, -s * gx + c * gy, wrap_angle(last.yaw - initial.yaw)))
}

#[derive(Debug, Deserialize)]
struct PoseRow {
    t_s: f64,
    x_mm: f64,
    y_mm: f64,
    #[allow(dead_code)]
    z_mm: f64,
    #[allow(dead_code)]
    roll_deg: f64,
    #[allow(dead_code)]
    pitch_deg: f64,
    yaw_deg: f64,
}

/// Parse a `t_s,x_mm,y_mm,z_mm,roll_deg,pitch_deg,yaw_deg` stream. Only
/// time, planar position and yaw are kept.
pub fn read_pose_csv<R: Read>(input: R) -> Result<Vec<PoseSample>, DescriptorError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out: Vec<PoseSample> = Vec::new();
    for (row, rec) in rdr.deserialize::<PoseRow>().enumerate() {
        let r = rec?;
        let sample = PoseSample::new(r.t_s, r.x_mm, r.y_mm, r.yaw_deg);
        if let Some(prev) = out.last() {
            if sample.t < prev.t {
                return Err(DescriptorError::TimeReversal { row: row + 1, t: sample.t });
            }
        }
        out.push(sample);
    }
    Ok(out)
}

/// Behavior over a whole stream, from its first and last finite samples.
pub fn behavior_from_stream(samples: &[PoseSample]) -> Result<Behavior, DescriptorError> {
    let mut valid = samples.iter().filter(|s| s.is_finite());
    let first = valid.next().ok_or(DescriptorError::TooFewSamples)?;
    let last = valid.next_back().ok_or(DescriptorError::TooFewSamples)?;
    to_local_behavior(first, last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: Behavior, b: (f64, f64, f64)) -> bool {
        (a.dx - b.0).abs() < 1e-9 && (a.dy - b.1).abs() < 1e-9 && (a.dpsi - b.2).abs() < 1e-9
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_angle(0.0), 0.0);
        assert_eq!(wrap_angle(180.0), -180.0);
        assert_eq!(wrap_angle(350.0), -10.0);
        assert_eq!(wrap_angle(-180.0), -180.0);
        assert_eq!(wrap_angle(-190.0), 170.0);
        assert_eq!(wrap_angle(720.0), 0.0);
        assert!(wrap_angle(-1e-14 - 180.0) < 180.0);
    }

    #[test]
    fn local_behavior_examples() {
        let b = to_local_behavior(&PoseSample::new(0.0, 0.0, 0.0, 0.0), &PoseSample::new(10.0, 50.0, 25.0, 0.0)).unwrap();
        assert_eq!(b, Behavior::new(50.0, 25.0, 0.0));
        let b = to_local_behavior(&PoseSample::new(0.0, 0.0, 0.0, 0.0), &PoseSample::new(10.0, 0.0, 0.0, 90.0)).unwrap();
        assert_eq!(b, Behavior::new(0.0, 0.0, 90.0));
        let b = to_local_behavior(&PoseSample::new(0.0, 0.0, 0.0, 90.0), &PoseSample::new(10.0, 0.0, 100.0, 90.0)).unwrap();
        assert!(close(b, (100.0, 0.0, 0.0)), "{b:?}");
        let b = to_local_behavior(&PoseSample::new(0.0, 10.0, 10.0, 170.0), &PoseSample::new(10.0, 10.0, 10.0, -170.0)).unwrap();
        assert!(close(b, (0.0, 0.0, 20.0)), "{b:?}");
    }

    #[test]
    fn time_must_advance() {
        let p = PoseSample::new(1.0, 0.0, 0.0, 0.0);
        assert!(matches!(to_local_behavior(&p, &p), Err(DescriptorError::NonIncreasingTime { .. })));
    }

    #[test]
    fn pose_csv_ingest() {
        let text = "t_s,x_mm,y_mm,z_mm,roll_deg,pitch_deg,yaw_deg\n\
                    0.0,100,200,40,1,2,350\n\
                    5.0,120,210,41,0,0,0\n\
                    10.0,150,225,40,0,0,10\n";
        let s = read_pose_csv(text.as_bytes()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].yaw, -10.0);
        let b = behavior_from_stream(&s).unwrap();
        assert!((b.dpsi - 20.0).abs() < 1e-9);
        let bad = "t_s,x_mm,y_mm,z_mm,roll_deg,pitch_deg,yaw_deg\n1,0,0,0,0,0,0\n0.5,0,0,0,0,0,0\n";
        assert!(matches!(read_pose_csv(bad.as_bytes()), Err(DescriptorError::TimeReversal { row: 2, .. })));
    }

    #[test]
    fn stream_skips_invalid_samples() {
        let s = [
            PoseSample::new(0.0, f64::NAN, 0.0, 0.0),
            PoseSample::new(0.1, 0.0, 0.0, 0.0),
            PoseSample::new(1.0, 5.0, 0.0, 0.0),
            PoseSample::new(1.1, f64::NAN, 0.0, 0.0),
        ];
        assert_eq!(behavior_from_stream(&s).unwrap(), Behavior::new(5.0, 0.0, 0.0));
        assert!(behavior_from_stream(&s[..2]).is_err());
    }

    proptest! {
        #[test]
        fn wrap_is_idempotent_and_in_range(a in -1e6f64..1e6) {
            let w = wrap_angle(a);
            prop_assert!((-180.0..180.0).contains(&w));
            prop_assert_eq!(wrap_angle(w), w);
        }

        #[test]
        fn null_motion_is_exactly_zero(x in -1e3f64..1e3, y in -1e3f64..1e3, yaw in -180f64..180.0) {
            let p = PoseSample::new(0.0, x, y, yaw);
            let q = PoseSample { t: 1.0, ..p };
            prop_assert_eq!(to_local_behavior(&p, &q).unwrap(), Behavior::ZERO);
        }
    }
}
