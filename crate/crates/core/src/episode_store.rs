//! Episode directories and training-sample export.
//!
//! An episode is a directory holding
//!
//! - `manifest`: key-value text (see [`EpisodeManifest`]);
//! - `records.bin`: one [`RECORD_LEN`]-byte little-endian row per aligned
//!   video frame: `frame_no` u32, `t_us` u64, pose as 7×f64
//!   (`px py pz qw qx qy qz`), six u16 finger counts, then pose age and
//!   encoder age as u32 microseconds;
//! - `frames/`: images produced elsewhere, referenced by frame number.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};

use nalgebra::{Vector3, Vector6};

use crate::keyvalue::{KeyValueError, KeyValues};
use crate::pose::{Pose, PoseError};
use crate::retarget::CalibrationTable;
use crate::sync_align::AlignedRecord;
use crate::FINGER_CHANNELS;

pub const FORMAT_VERSION: u32 = 1;
pub const RECORD_LEN: usize = 4 + 8 + 7 * 8 + FINGER_CHANNELS * 2 + 2 * 4;
pub const ACTION_DIM: usize = 6 + FINGER_CHANNELS;
pub const DEFAULT_HORIZON: usize = 16;
pub const DEFAULT_EXECUTE: usize = 8;

const MANIFEST_FILE: &str = "manifest";
const RECORDS_FILE: &str = "records.bin";

#[derive(Debug, thiserror::Error)]
pub enum EpisodeError {
    #[error("episode has no records")]
    Empty,
    #[error("manifest says {manifest} records, got {actual}")]
    CountMismatch { manifest: usize, actual: usize },
    #[error("destination {0} already exists")]
    DestinationExists(PathBuf),
    #[error("unsupported episode format version {0}")]
    UnsupportedVersion(u32),
    #[error("record {index}: {message}")]
    BadRecord { index: usize, message: String },
    #[error("manifest: {0}")]
    Manifest(#[from] KeyValueError),
    #[error("episode has {len} records, shorter than horizon {horizon}")]
    TooShort { len: usize, horizon: usize },
    #[error("need horizon >= execute >= 1, got horizon {horizon}, execute {execute}")]
    BadHorizon { horizon: usize, execute: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraInfo {
    pub width: u32,
    pub height: u32,
    pub rate_hz: f64,
}

impl Default for CameraInfo {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            rate_hz: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeManifest {
    pub episode_id: String,
    pub created_t_us: u64,
    pub record_count: usize,
    /// Rate of the resampled pose stream.
    pub rate_hz: f64,
    /// Image directory relative to the episode root.
    pub image_dir: String,
    pub camera: CameraInfo,
    pub format_version: u32,
}

impl EpisodeManifest {
    pub fn new(episode_id: &str, created_t_us: u64, record_count: usize) -> Self {
        Self {
            episode_id: episode_id.to_string(),
            created_t_us,
            record_count,
            rate_hz: crate::sync_align::DEFAULT_POSE_RATE_HZ,
            image_dir: "frames".into(),
            camera: CameraInfo::default(),
            format_version: FORMAT_VERSION,
        }
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.insert("format_version", [self.format_version]);
        kv.insert("episode_id", [&self.episode_id]);
        kv.insert("created_t_us", [self.created_t_us]);
        kv.insert("record_count", [self.record_count]);
        kv.insert("rate_hz", [self.rate_hz]);
        kv.insert("image_dir", [&self.image_dir]);
        kv.insert("camera_width", [self.camera.width]);
        kv.insert("camera_height", [self.camera.height]);
        kv.insert("camera_rate_hz", [self.camera.rate_hz]);
        kv
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self, EpisodeError> {
        let version = kv.u64("format_version")?;
        if version != u64::from(FORMAT_VERSION) {
            return Err(EpisodeError::UnsupportedVersion(version.min(u32::MAX as u64) as u32));
        }
        let small = |key: &str| -> Result<u32, EpisodeError> {
            u32::try_from(kv.u64(key)?).map_err(|_| {
                EpisodeError::Manifest(KeyValueError::BadValue {
                    key: key.into(),
                    message: "out of range".into(),
                })
            })
        };
        Ok(Self {
            episode_id: kv.str("episode_id")?.to_string(),
            created_t_us: kv.u64("created_t_us")?,
            record_count: kv.u64("record_count")? as usize,
            rate_hz: kv.f64("rate_hz")?,
            image_dir: kv.str("image_dir")?.to_string(),
            camera: CameraInfo {
                width: small("camera_width")?,
                height: small("camera_height")?,
                rate_hz: kv.f64("camera_rate_hz")?,
            },
            format_version: FORMAT_VERSION,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub manifest: EpisodeManifest,
    pub records: Vec<AlignedRecord>,
}

pub fn encode_record(r: &AlignedRecord) -> Result<[u8; RECORD_LEN], EpisodeError> {
    let age = |v: u64, what: &str| {
        u32::try_from(v).map_err(|_| EpisodeError::BadRecord {
            index: r.frame_no as usize,
            message: format!("{what} age {v} µs does not fit the row format"),
        })
    };
    let mut out = [0u8; RECORD_LEN];
    let mut at = 0;
    let mut put = |bytes: &[u8]| {
        out[at..at + bytes.len()].copy_from_slice(bytes);
        at += bytes.len();
    };
    put(&r.frame_no.to_le_bytes());
    put(&r.t_us.to_le_bytes());
    for v in r.ee_pose.translation().iter().chain(r.ee_pose.wxyz().iter()) {
        put(&v.to_le_bytes());
    }
    for v in r.fingers {
        put(&v.to_le_bytes());
    }
    put(&age(r.pose_age_us, "pose")?.to_le_bytes());
    put(&age(r.encoder_age_us, "encoder")?.to_le_bytes());
    Ok(out)
}

pub fn decode_record(bytes: &[u8; RECORD_LEN]) -> Result<AlignedRecord, PoseError> {
    let mut at = 0;
    let mut take = |n: usize| {
        let s = &bytes[at..at + n];
        at += n;
        s
    };
    let frame_no = u32::from_le_bytes(take(4).try_into().unwrap());
    let t_us = u64::from_le_bytes(take(8).try_into().unwrap());
    let mut pose = [0.0f64; 7];
    for v in pose.iter_mut() {
        *v = f64::from_le_bytes(take(8).try_into().unwrap());
    }
    let mut fingers = [0u16; FINGER_CHANNELS];
    for v in fingers.iter_mut() {
        *v = u16::from_le_bytes(take(2).try_into().unwrap());
    }
    let pose_age_us = u32::from_le_bytes(take(4).try_into().unwrap()) as u64;
    let encoder_age_us = u32::from_le_bytes(take(4).try_into().unwrap()) as u64;
    Ok(AlignedRecord {
        frame_no,
        t_us,
        ee_pose: Pose::from_wxyz(
            Vector3::new(pose[0], pose[1], pose[2]),
            [pose[3], pose[4], pose[5], pose[6]],
        )?,
        fingers,
        pose_age_us,
        encoder_age_us,
    })
}

/// Creates `dest` and writes the episode into it. Fails if `dest` exists.
pub fn write_episode(
    records: &[AlignedRecord],
    manifest: &EpisodeManifest,
    dest: &Path,
) -> Result<(), EpisodeError> {
    if records.is_empty() {
        return Err(EpisodeError::Empty);
    }
    if records.len() != manifest.record_count {
        return Err(EpisodeError::CountMismatch {
            manifest: manifest.record_count,
            actual: records.len(),
        });
    }
    let mut rows = Vec::with_capacity(records.len() * RECORD_LEN);
    for r in records {
        rows.extend_from_slice(&encode_record(r)?);
    }
    match fs::create_dir(dest) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
            return Err(EpisodeError::DestinationExists(dest.to_path_buf()))
        }
        Err(e) => return Err(e.into()),
    }
    fs::create_dir_all(dest.join(&manifest.image_dir))?;
    fs::write(dest.join(MANIFEST_FILE), manifest.to_key_values().to_text())?;
    let mut f = fs::File::create(dest.join(RECORDS_FILE))?;
    f.write_all(&rows)?;
    f.sync_all()?;
    Ok(())
}

pub fn read_episode(dir: &Path) -> Result<Episode, EpisodeError> {
    let manifest_text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest = EpisodeManifest::from_key_values(&KeyValues::parse(&manifest_text)?)?;
    let bytes = fs::read(dir.join(RECORDS_FILE))?;
    if bytes.len() % RECORD_LEN != 0 {
        return Err(EpisodeError::BadRecord {
            index: bytes.len() / RECORD_LEN,
            message: "truncated row".into(),
        });
    }
    let records = bytes
        .chunks_exact(RECORD_LEN)
        .enumerate()
        .map(|(index, row)| {
            decode_record(row.try_into().unwrap()).map_err(|e| EpisodeError::BadRecord {
                index,
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    if records.len() != manifest.record_count {
        return Err(EpisodeError::CountMismatch {
            manifest: manifest.record_count,
            actual: records.len(),
        });
    }
    Ok(Episode { manifest, records })
}

/// `[p_k − p_0; log(R₀⁻¹·R_k)]`: base-frame translation difference and the
/// principal axis-angle of the relative rotation. Exactly zero when
/// `t0 == tk`.
pub fn relative_pose(t0: &Pose, tk: &Pose) -> Vector6<f64> {
    let dp = tk.translation() - t0.translation();
    let [w0, x0, y0, z0] = t0.wxyz();
    let [wk, xk, yk, zk] = tk.wxyz();
    // conj(q0)·qk with each cancelling pair grouped
    let w = w0 * wk + x0 * xk + y0 * yk + z0 * zk;
    let v = Vector3::new(
        (w0 * xk - wk * x0) - (y0 * zk - z0 * yk),
        (w0 * yk - wk * y0) - (z0 * xk - x0 * zk),
        (w0 * zk - wk * z0) - (x0 * yk - y0 * xk),
    );
    let s = v.norm();
    let rot = if s == 0.0 {
        Vector3::zeros()
    } else {
        // q and −q are the same rotation; pick the one with w ≥ 0
        let half = s.atan2(w.abs());
        v * (w.signum() * 2.0 * half / s)
    };
    Vector6::new(dp.x, dp.y, dp.z, rot.x, rot.y, rot.z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FingerMode {
    /// Retargeted commands as-is.
    #[default]
    Absolute,
    /// Retargeted commands minus those of the horizon's first step.
    RelativeToFirst,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub obs_frame_no: u32,
    /// `horizon` rows of `[Δp (3), axis-angle (3), finger commands (6)]`.
    pub actions: Vec<[f64; ACTION_DIM]>,
    pub horizon: usize,
    pub execute: usize,
}

/// One sample per start index (stride 1); the observation is the start frame.
pub fn export_training(
    records: &[AlignedRecord],
    table: &CalibrationTable,
    horizon: usize,
    execute: usize,
    fingers: FingerMode,
) -> Result<Vec<TrainingSample>, EpisodeError> {
    if !(execute >= 1 && horizon >= execute) {
        return Err(EpisodeError::BadHorizon { horizon, execute });
    }
    if records.len() < horizon {
        return Err(EpisodeError::TooShort {
            len: records.len(),
            horizon,
        });
    }
    let commands: Vec<[f64; FINGER_CHANNELS]> =
        records.iter().map(|r| table.apply_raw(&r.fingers)).collect();
    Ok((0..=records.len() - horizon)
        .map(|start| {
            let t0 = &records[start].ee_pose;
            let actions = (start..start + horizon)
                .map(|k| {
                    let ee = relative_pose(t0, &records[k].ee_pose);
                    let mut row = [0.0; ACTION_DIM];
                    row[..6].copy_from_slice(ee.as_slice());
                    for j in 0..FINGER_CHANNELS {
                        row[6 + j] = match fingers {
                            FingerMode::Absolute => commands[k][j],
                            FingerMode::RelativeToFirst => commands[k][j] - commands[start][j],
                        };
                    }
                    row
                })
                .collect();
            TrainingSample {
                obs_frame_no: records[start].frame_no,
                actions,
                horizon,
                execute,
            }
        })
        .collect())
}

/// `obs_frame_no horizon execute a_0 ... a_{12·horizon−1}` per line.
pub fn write_training_text(samples: &[TrainingSample]) -> String {
    let mut out = String::new();
    for s in samples {
        let _ = write!(out, "{} {} {}", s.obs_frame_no, s.horizon, s.execute);
        for v in s.actions.iter().flatten() {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    out
}

/// Little-endian rows: `obs_frame_no` u32, `horizon` u16, `execute` u16,
/// then `12·horizon` f64 action values.
pub fn write_training_binary(samples: &[TrainingSample]) -> Vec<u8> {
    let mut out = Vec::new();
    for s in samples {
        out.extend_from_slice(&s.obs_frame_no.to_le_bytes());
        out.extend_from_slice(&(s.horizon as u16).to_le_bytes());
        out.extend_from_slice(&(s.execute as u16).to_le_bytes());
        for v in s.actions.iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retarget::calibrate;
    use nalgebra::UnitQuaternion;

    fn record(i: u32, pose: Pose) -> AlignedRecord {
        AlignedRecord {
            frame_no: i,
            t_us: i as u64 * 33_333,
            ee_pose: pose,
            fingers: [i as u16; 6],
            pose_age_us: 100 + i as u64,
            encoder_age_us: 7,
        }
    }

    fn table() -> CalibrationTable {
        calibrate(std::array::from_fn(|_| vec![(0.0, 0.0), (4095.0, 1000.0)])).unwrap()
    }

    #[test]
    fn round_trip_three_records() {
        let dir = tempfile::tempdir().unwrap();
        let dest = dir.path().join("ep0");
        let records: Vec<_> = (0..3)
            .map(|i| {
                record(
                    i,
                    Pose::new(
                        UnitQuaternion::from_euler_angles(0.1 * i as f64, 0.2, -0.3),
                        Vector3::new(0.1, -0.2, 0.3 * i as f64),
                    ),
                )
            })
            .collect();
        let manifest = EpisodeManifest::new("ep0", 42, 3);
        write_episode(&records, &manifest, &dest).unwrap();
        assert!(dest.join("frames").is_dir());
        let back = read_episode(&dest).unwrap();
        assert_eq!(back.records, records);
        assert_eq!(back.manifest, manifest);
        assert!(matches!(
            write_episode(&records, &manifest, &dest),
            Err(EpisodeError::DestinationExists(_))
        ));
    }

    #[test]
    fn write_preconditions() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = EpisodeManifest::new("e", 0, 0);
        assert!(matches!(
            write_episode(&[], &manifest, &dir.path().join("x")),
            Err(EpisodeError::Empty)
        ));
        let manifest = EpisodeManifest::new("e", 0, 2);
        assert!(matches!(
            write_episode(&[record(0, Pose::identity())], &manifest, &dir.path().join("x")),
            Err(EpisodeError::CountMismatch { .. })
        ));
        assert!(!dir.path().join("x").exists());
    }

    #[test]
    fn relative_pose_basics() {
        let t = Pose::new(UnitQuaternion::from_euler_angles(0.3, 0.2, 0.1), Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(relative_pose(&t, &t), Vector6::zeros());
        let moved = Pose::new(*t.rotation(), Vector3::new(1.5, 2.0, 2.0));
        let rel = relative_pose(&t, &moved);
        assert!((rel - Vector6::new(0.5, 0.0, -1.0, 0.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn static_and_stride() {
        let recs: Vec<_> = (0..17).map(|i| record(i, Pose::identity())).collect();
        let one = export_training(&recs[..16], &table(), 16, 8, FingerMode::Absolute).unwrap();
        assert_eq!(one.len(), 1);
        assert!(one[0].actions.iter().all(|a| a[..6].iter().all(|&v| v == 0.0)));
        let two = export_training(&recs, &table(), 16, 8, FingerMode::Absolute).unwrap();
        assert_eq!(two.len(), 2);
        assert_eq!(two[1].obs_frame_no, 1);
        assert_eq!(two[1].actions[0][6], table().map_encoder(0, 1.0).unwrap());
        assert!(matches!(
            export_training(&recs[..15], &table(), 16, 8, FingerMode::Absolute),
            Err(EpisodeError::TooShort { len: 15, horizon: 16 })
        ));
        assert!(matches!(
            export_training(&recs, &table(), 4, 8, FingerMode::Absolute),
            Err(EpisodeError::BadHorizon { .. })
        ));
    }

    #[test]
    fn relative_fingers() {
        let recs: Vec<_> = (0..16).map(|i| record(i * 10, Pose::identity())).collect();
        let s = export_training(&recs, &table(), 16, 8, FingerMode::RelativeToFirst).unwrap();
        assert!(s[0].actions[0][6..].iter().all(|&v| v == 0.0));
        let expect = table().map_encoder(0, 50.0).unwrap();
        assert!((s[0].actions[5][6] - expect).abs() < 1e-12);
    }

    #[test]
    fn export_formats() {
        let recs: Vec<_> = (0..3).map(|i| record(i, Pose::identity())).collect();
        let s = export_training(&recs, &table(), 2, 1, FingerMode::Absolute).unwrap();
        let bin = write_training_binary(&s);
        assert_eq!(bin.len(), 2 * (8 + 2 * ACTION_DIM * 8));
        let text = write_training_text(&s);
        let first: Vec<&str> = text.lines().next().unwrap().split(' ').collect();
        assert_eq!(first.len(), 3 + 2 * ACTION_DIM);
        assert_eq!(&first[..3], &["0", "2", "1"]);
    }
}
