//! Alignment of the encoder and pose streams against video frame timestamps.

use nalgebra::{Quaternion, UnitQuaternion};

use crate::pose::Pose;
use crate::stream_ingest::{EncoderFrame, FrameIndexEntry, PoseSample};
use crate::FINGER_CHANNELS;

pub const DEFAULT_MAX_STALE_US: u64 = 20_000;
pub const DEFAULT_POSE_RATE_HZ: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SyncError {
    #[error("{stream} stream is empty")]
    Empty { stream: &'static str },
    #[error("resampling needs at least two poses, got {0}")]
    TooFewPoses(usize),
    #[error("rate must be positive, got {0}")]
    BadRate(f64),
    #[error("{stream} timestamps are not increasing at index {index}")]
    Unsorted { stream: &'static str, index: usize },
    #[error("frame {frame_no}: nearest {stream} sample is {age_us} µs away (limit {max_stale_us} µs) inside the episode")]
    InteriorGap {
        frame_no: u32,
        stream: &'static str,
        age_us: u64,
        max_stale_us: u64,
    },
    #[error("no video frame has both pose and encoder data within {0} µs")]
    NoOverlap(u64),
}

/// Shortest-arc spherical interpolation from `a` (t = 0) to `b` (t = 1).
pub fn slerp_shortest(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>, t: f64) -> UnitQuaternion<f64> {
    let qa = a.quaternion();
    let mut qb = *b.quaternion();
    let mut cos = qa.dot(&qb);
    if cos < 0.0 {
        qb = -qb;
        cos = -cos;
    }
    let blended: Quaternion<f64> = if cos > 1.0 - 1e-12 {
        qa * (1.0 - t) + qb * t
    } else {
        let theta = cos.min(1.0).acos();
        let s = theta.sin();
        qa * (((1.0 - t) * theta).sin() / s) + qb * ((t * theta).sin() / s)
    };
    UnitQuaternion::from_quaternion(blended)
}

fn check_increasing<T>(items: &[T], key: impl Fn(&T) -> u64, strict: bool, stream: &'static str) -> Result<(), SyncError> {
    for (i, w) in items.windows(2).enumerate() {
        let (a, b) = (key(&w[0]), key(&w[1]));
        if b < a || (strict && b == a) {
            return Err(SyncError::Unsorted { stream, index: i + 1 });
        }
    }
    Ok(())
}

/// Resamples a pose track onto a uniform grid starting at the first sample
/// and ending at or before the last. Grid times are rounded to whole
/// microseconds; samples that fall exactly on an input timestamp are copied.
pub fn resample_poses(poses: &[PoseSample], rate_hz: f64) -> Result<Vec<PoseSample>, SyncError> {
    if poses.len() < 2 {
        return Err(SyncError::TooFewPoses(poses.len()));
    }
    if !(rate_hz > 0.0 && rate_hz.is_finite()) {
        return Err(SyncError::BadRate(rate_hz));
    }
    check_increasing(poses, |p| p.t_us, true, "pose")?;
    let t0 = poses[0].t_us;
    let t_end = poses[poses.len() - 1].t_us;
    let period = 1e6 / rate_hz;

    let mut out = Vec::new();
    let mut seg = 0;
    for k in 0u64.. {
        let t = t0 + (k as f64 * period).round() as u64;
        if t > t_end {
            break;
        }
        while seg + 2 < poses.len() && poses[seg + 1].t_us <= t {
            seg += 1;
        }
        let (a, b) = (&poses[seg], &poses[seg + 1]);
        let sample = if t == a.t_us {
            *a
        } else if t == b.t_us {
            *b
        } else {
            let alpha = (t - a.t_us) as f64 / (b.t_us - a.t_us) as f64;
            PoseSample {
                t_us: t,
                position: a.position + (b.position - a.position) * alpha,
                orientation: slerp_shortest(&a.orientation, &b.orientation, alpha),
            }
        };
        out.push(sample);
    }
    Ok(out)
}

/// For each master timestamp, the index of the sample closest in time; an
/// exact tie picks the earlier sample, and among equal timestamps the first.
/// Both inputs must be non-decreasing. Linear in the total length.
pub fn nearest_align(master_t: &[u64], sample_t: &[u64]) -> Result<Vec<usize>, SyncError> {
    if sample_t.is_empty() {
        return Err(SyncError::Empty { stream: "sample" });
    }
    check_increasing(master_t, |t| *t, false, "master")?;
    check_increasing(sample_t, |t| *t, false, "sample")?;

    // `above` = number of samples with time <= m; `run` = first index of the
    // value at `above - 1`.
    let mut above = 0;
    let mut run = 0;
    let mut out = Vec::with_capacity(master_t.len());
    for &m in master_t {
        while above < sample_t.len() && sample_t[above] <= m {
            if above == 0 || sample_t[above] != sample_t[above - 1] {
                run = above;
            }
            above += 1;
        }
        let idx = match (above, sample_t.get(above)) {
            (0, _) => 0,
            (_, None) => run,
            (_, Some(&next)) => {
                if m - sample_t[run] <= next - m {
                    run
                } else {
                    above
                }
            }
        };
        out.push(idx);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedRecord {
    pub frame_no: u32,
    pub t_us: u64,
    pub ee_pose: Pose,
    pub fingers: [u16; FINGER_CHANNELS],
    pub pose_age_us: u64,
    pub encoder_age_us: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SyncReport {
    pub records: usize,
    pub dropped_head: usize,
    pub dropped_tail: usize,
    pub max_pose_age_us: u64,
    pub max_encoder_age_us: u64,
}

impl std::fmt::Display for SyncReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "records={} dropped_head={} dropped_tail={} max_pose_age_us={} max_encoder_age_us={}",
            self.records, self.dropped_head, self.dropped_tail, self.max_pose_age_us, self.max_encoder_age_us
        )
    }
}

/// Joins the three streams on video time. Frames at the start or end of the
/// recording without fresh pose and encoder data are dropped and counted;
/// a stale frame between fresh ones is an error.
pub fn build_episode(
    frames: &[FrameIndexEntry],
    encoders: &[EncoderFrame],
    poses: &[PoseSample],
    max_stale_us: u64,
) -> Result<(Vec<AlignedRecord>, SyncReport), SyncError> {
    if frames.is_empty() {
        return Err(SyncError::Empty { stream: "frame" });
    }
    if encoders.is_empty() {
        return Err(SyncError::Empty { stream: "encoder" });
    }
    if poses.is_empty() {
        return Err(SyncError::Empty { stream: "pose" });
    }
    check_increasing(frames, |f| f.t_us, false, "frame")?;
    let frame_t: Vec<u64> = frames.iter().map(|f| f.t_us).collect();
    let pose_t: Vec<u64> = poses.iter().map(|p| p.t_us).collect();
    let enc_t: Vec<u64> = encoders.iter().map(|e| e.t_us).collect();
    let pose_idx = nearest_align(&frame_t, &pose_t).map_err(|e| rename(e, "pose"))?;
    let enc_idx = nearest_align(&frame_t, &enc_t).map_err(|e| rename(e, "encoder"))?;

    let ages: Vec<(u64, u64)> = frames
        .iter()
        .enumerate()
        .map(|(i, f)| (f.t_us.abs_diff(pose_t[pose_idx[i]]), f.t_us.abs_diff(enc_t[enc_idx[i]])))
        .collect();
    let fresh = |a: &(u64, u64)| a.0 <= max_stale_us && a.1 <= max_stale_us;
    let first = ages.iter().position(fresh).ok_or(SyncError::NoOverlap(max_stale_us))?;
    let last = ages.iter().rposition(fresh).expect("a fresh frame exists");

    let mut records = Vec::with_capacity(last - first + 1);
    let mut report = SyncReport {
        dropped_head: first,
        dropped_tail: frames.len() - 1 - last,
        ..SyncReport::default()
    };
    for i in first..=last {
        let (pose_age, enc_age) = ages[i];
        if !fresh(&ages[i]) {
            let (stream, age_us) = if pose_age > max_stale_us {
                ("pose", pose_age)
            } else {
                ("encoder", enc_age)
            };
            return Err(SyncError::InteriorGap {
                frame_no: frames[i].frame_no,
                stream,
                age_us,
                max_stale_us,
            });
        }
        let pose = &poses[pose_idx[i]];
        records.push(AlignedRecord {
            frame_no: frames[i].frame_no,
            t_us: frames[i].t_us,
            ee_pose: Pose::new(pose.orientation, pose.position),
            fingers: encoders[enc_idx[i]].values,
            pose_age_us: pose_age,
            encoder_age_us: enc_age,
        });
        report.max_pose_age_us = report.max_pose_age_us.max(pose_age);
        report.max_encoder_age_us = report.max_encoder_age_us.max(enc_age);
    }
    report.records = records.len();
    Ok((records, report))
}

fn rename(e: SyncError, stream: &'static str) -> SyncError {
    match e {
        SyncError::Unsorted { stream: "sample", index } => SyncError::Unsorted { stream, index },
        other => other,
    }
}
