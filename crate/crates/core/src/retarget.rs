//! Encoder-count to actuator-command mapping by per-joint piecewise-linear
//! tables sampled at matching physical postures.
//!
//! Outside a joint's calibrated encoder range the command is clamped to the
//! end waypoint; the table never extrapolates.

use std::fmt::Write as _;

use crate::stream_ingest::EncoderFrame;
use crate::FINGER_CHANNELS;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RetargetError {
    #[error("joint {joint}: need at least two distinct waypoints, got {got}")]
    TooFewWaypoints { joint: usize, got: usize },
    #[error("joint {joint}: waypoint at raw {raw} has conflicting commands {a} and {b}")]
    ConflictingWaypoint { joint: usize, raw: f64, a: f64, b: f64 },
    #[error("joint {joint}: non-finite waypoint")]
    NonFinite { joint: usize },
    #[error("joint index {0} out of range")]
    BadJoint(usize),
    #[error("joint {0}: commands are not strictly monotone, inverse undefined")]
    NonMonotone(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTable {
    joints: [Vec<(f64, f64)>; FINGER_CHANNELS],
}

/// Sorts and deduplicates raw `(encoder_raw, command)` pairs for every joint.
pub fn calibrate(pairs: [Vec<(f64, f64)>; FINGER_CHANNELS]) -> Result<CalibrationTable, RetargetError> {
    let mut joints: [Vec<(f64, f64)>; FINGER_CHANNELS] = Default::default();
    for (joint, mut wps) in pairs.into_iter().enumerate() {
        if wps.iter().any(|(r, c)| !(r.is_finite() && c.is_finite())) {
            return Err(RetargetError::NonFinite { joint });
        }
        wps.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(wps.len());
        for (raw, cmd) in wps {
            match out.last() {
                Some(&(r, c)) if r == raw => {
                    if c != cmd {
                        return Err(RetargetError::ConflictingWaypoint { joint, raw, a: c, b: cmd });
                    }
                }
                _ => out.push((raw, cmd)),
            }
        }
        if out.len() < 2 {
            return Err(RetargetError::TooFewWaypoints { joint, got: out.len() });
        }
        joints[joint] = out;
    }
    Ok(CalibrationTable { joints })
}

fn interpolate(xs: impl Fn(usize) -> f64, ys: impl Fn(usize) -> f64, n: usize, x: f64) -> f64 {
    if x <= xs(0) {
        return ys(0);
    }
    if x >= xs(n - 1) {
        return ys(n - 1);
    }
    // first index with xs > x; always in 1..n here
    let (mut lo, mut hi) = (0, n - 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if xs(mid) <= x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (x0, x1, y0, y1) = (xs(lo), xs(hi), ys(lo), ys(hi));
    y0 + (y1 - y0) * ((x - x0) / (x1 - x0))
}

impl CalibrationTable {
    pub fn waypoints(&self, joint: usize) -> Result<&[(f64, f64)], RetargetError> {
        self.joints
            .get(joint)
            .map(Vec::as_slice)
            .ok_or(RetargetError::BadJoint(joint))
    }

    /// `(min, max)` of a joint's waypoint commands.
    pub fn command_envelope(&self, joint: usize) -> Result<(f64, f64), RetargetError> {
        let w = self.waypoints(joint)?;
        Ok(w.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, c)| {
            (lo.min(c), hi.max(c))
        }))
    }

    pub fn map_encoder(&self, joint: usize, raw: f64) -> Result<f64, RetargetError> {
        let w = self.waypoints(joint)?;
        Ok(interpolate(|i| w[i].0, |i| w[i].1, w.len(), raw))
    }

    /// Piecewise-linear inverse of [`Self::map_encoder`] for strictly
    /// monotone commands, clamped to the calibrated encoder range.
    pub fn invert_map(&self, joint: usize, command: f64) -> Result<f64, RetargetError> {
        let w = self.waypoints(joint)?;
        let rising = w[1].1 > w[0].1;
        let monotone = w
            .windows(2)
            .all(|p| if rising { p[1].1 > p[0].1 } else { p[1].1 < p[0].1 });
        if !monotone {
            return Err(RetargetError::NonMonotone(joint));
        }
        let n = w.len();
        Ok(if rising {
            interpolate(|i| w[i].1, |i| w[i].0, n, command)
        } else {
            interpolate(|i| w[n - 1 - i].1, |i| w[n - 1 - i].0, n, command)
        })
    }

    pub fn apply_table(&self, frame: &EncoderFrame) -> [f64; FINGER_CHANNELS] {
        self.apply_raw(&frame.values)
    }

    pub fn apply_raw(&self, values: &[u16; FINGER_CHANNELS]) -> [f64; FINGER_CHANNELS] {
        std::array::from_fn(|j| {
            let w = &self.joints[j];
            interpolate(|i| w[i].0, |i| w[i].1, w.len(), f64::from(values[j]))
        })
    }

    /// Parses `joint <i> <raw> <command>` rows and validates them through
    /// [`calibrate`].
    pub fn parse(text: &str) -> Result<Self, RetargetError> {
        let mut pairs: [Vec<(f64, f64)>; FINGER_CHANNELS] = Default::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let fields: Vec<&str> = raw.split('#').next().unwrap_or("").split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let err = |message: String| RetargetError::Parse { line, message };
            if fields.len() != 4 || fields[0] != "joint" {
                return Err(err("expected `joint <i> <raw> <command>`".into()));
            }
            let joint: usize = fields[1]
                .parse()
                .map_err(|_| err(format!("bad joint index `{}`", fields[1])))?;
            if joint >= FINGER_CHANNELS {
                return Err(err(format!("joint index {joint} out of range")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number `{s}`")));
            pairs[joint].push((num(fields[2])?, num(fields[3])?));
        }
        calibrate(pairs)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (j, wps) in self.joints.iter().enumerate() {
            for (raw, cmd) in wps {
                let _ = writeln!(out, "joint {j} {raw} {cmd}");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear() -> CalibrationTable {
        calibrate(std::array::from_fn(|_| vec![(0.0, 0.0), (4095.0, 1000.0)])).unwrap()
    }

    #[test]
    fn minimal_table() {
        let t = linear();
        assert_eq!(t.map_encoder(0, 0.0).unwrap(), 0.0);
        assert!((t.map_encoder(0, 2048.0).unwrap() - 2048.0 * 1000.0 / 4095.0).abs() < 1e-9);
        assert_eq!(t.map_encoder(0, 5000.0).unwrap(), 1000.0);
        assert_eq!(t.map_encoder(0, -5.0).unwrap(), 0.0);
        assert_eq!(t.invert_map(0, 1000.0).unwrap(), 4095.0);
        assert_eq!(t.map_encoder(6, 0.0), Err(RetargetError::BadJoint(6)));
    }

    #[test]
    fn dedup_and_conflict() {
        let mut pairs: [Vec<(f64, f64)>; 6] = std::array::from_fn(|_| vec![(0.0, 0.0), (10.0, 1.0)]);
        pairs[2] = vec![(100.0, 5.0), (0.0, 0.0), (100.0, 5.0)];
        let t = calibrate(pairs.clone()).unwrap();
        assert_eq!(t.waypoints(2).unwrap(), &[(0.0, 0.0), (100.0, 5.0)]);
        pairs[3] = vec![(100.0, 5.0), (0.0, 0.0), (100.0, 9.0)];
        assert!(matches!(
            calibrate(pairs.clone()),
            Err(RetargetError::ConflictingWaypoint { joint: 3, .. })
        ));
        pairs[3] = vec![(1.0, 1.0), (1.0, 1.0)];
        assert_eq!(
            calibrate(pairs).unwrap_err(),
            RetargetError::TooFewWaypoints { joint: 3, got: 1 }
        );
    }

    #[test]
    fn non_monotone_inverse() {
        let mut pairs: [Vec<(f64, f64)>; 6] = std::array::from_fn(|_| vec![(0.0, 0.0), (10.0, 1.0)]);
        pairs[1] = vec![(0.0, 0.0), (1.0, 5.0), (2.0, 3.0)];
        let t = calibrate(pairs).unwrap();
        assert_eq!(t.invert_map(1, 1.0), Err(RetargetError::NonMonotone(1)));
    }

    #[test]
    fn decreasing_inverse() {
        let t = calibrate(std::array::from_fn(|_| vec![(0.0, 10.0), (50.0, 4.0), (100.0, 0.0)])).unwrap();
        for c in [0.5, 3.0, 4.0, 7.0, 9.9] {
            let raw = t.invert_map(0, c).unwrap();
            assert!((t.map_encoder(0, raw).unwrap() - c).abs() < 1e-9);
        }
    }

    #[test]
    fn apply_channelwise() {
        let t = calibrate(std::array::from_fn(|j| vec![(0.0, 0.0), (10.0, 10.0 * (j + 1) as f64)])).unwrap();
        let f = EncoderFrame {
            seq: 0,
            t_us: 0,
            values: [0, 1, 2, 3, 4, 5],
        };
        let out = t.apply_table(&f);
        for j in 0..6 {
            assert_eq!(out[j], j as f64 * (j + 1) as f64);
        }
        let zero = EncoderFrame { values: [0; 6], ..f };
        assert_eq!(t.apply_table(&zero), [0.0; 6]);
        let top = EncoderFrame { values: [10; 6], ..f };
        assert_eq!(t.apply_table(&top), std::array::from_fn(|j| 10.0 * (j + 1) as f64));
    }

    #[test]
    fn text_format() {
        let t = linear();
        assert_eq!(CalibrationTable::parse(&t.to_text()).unwrap(), t);
        assert!(matches!(
            CalibrationTable::parse("joint 7 0 0\n"),
            Err(RetargetError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            CalibrationTable::parse("# hi\nmotor 0 0 0\n"),
            Err(RetargetError::Parse { line: 2, .. })
        ));
    }
}
