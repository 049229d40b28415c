mod common;

use exokit::episode_store::{
    export_training, read_episode, relative_pose, write_episode, write_training_binary,
    EpisodeError, EpisodeManifest, FingerMode, ACTION_DIM, RECORD_LEN,
};
use exokit::retarget::CalibrationTable;
use exokit::sync_align::AlignedRecord;
use exokit::{Pose, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{gaussian3, random_pose, random_rotation};

fn random_records(rng: &mut ChaCha8Rng, n: usize) -> Vec<AlignedRecord> {
    (0..n)
        .map(|i| AlignedRecord {
            frame_no: i as u32 * 2 + 1,
            t_us: 1_000_000 + i as u64 * 33_333,
            ee_pose: random_pose(rng, 0.5),
            fingers: rng.random(),
            pose_age_us: rng.random_range(0..20_000),
            encoder_age_us: rng.random_range(0..20_000),
        })
        .collect()
}

#[test]
fn large_episode_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let records = random_records(&mut rng, 10_000);
    let dir = tempfile::tempdir().unwrap();
    let dest = dir.path().join("episode");
    let manifest = EpisodeManifest::new("large", 1_000_000, records.len());
    write_episode(&records, &manifest, &dest).unwrap();
    assert_eq!(
        std::fs::metadata(dest.join("records.bin")).unwrap().len(),
        (records.len() * RECORD_LEN) as u64
    );
    let back = read_episode(&dest).unwrap();
    assert_eq!(back.manifest.record_count, 10_000);
    assert_eq!(back.records, records);
}

#[test]
fn truncated_data_block_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    let records = random_records(&mut rng, 5);
    let dir = tempfile::tempdir().unwrap();
    let dest = dir.path().join("e");
    write_episode(&records, &EpisodeManifest::new("e", 0, 5), &dest).unwrap();
    let path = dest.join("records.bin");
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..4 * RECORD_LEN]).unwrap();
    assert!(matches!(read_episode(&dest), Err(EpisodeError::CountMismatch { manifest: 5, actual: 4 })));
    std::fs::write(&path, &bytes[..4 * RECORD_LEN + 3]).unwrap();
    assert!(matches!(read_episode(&dest), Err(EpisodeError::BadRecord { .. })));
}

#[test]
fn relative_pose_matches_rotation_log() {
    let mut rng = ChaCha8Rng::seed_from_u64(73);
    for _ in 0..10_000 {
        let (a, b) = (random_pose(&mut rng, 1.0), random_pose(&mut rng, 1.0));
        let rel = relative_pose(&a, &b);
        let r = a.rotation().to_rotation_matrix().matrix().transpose() * b.rotation().to_rotation_matrix().matrix();
        let want = common::rotation_log(&r);
        let got = Vector3::new(rel[3], rel[4], rel[5]);
        assert!((got - want).norm() < 1e-9, "{got} vs {want}");
        assert!(got.norm() <= std::f64::consts::PI + 1e-12);
        assert_eq!(Vector3::new(rel[0], rel[1], rel[2]), b.translation() - a.translation());
    }
}

#[test]
fn collinear_translations_add() {
    let mut rng = ChaCha8Rng::seed_from_u64(74);
    let rot = random_rotation(&mut rng);
    let dir = gaussian3(&mut rng);
    let at = |s: f64| Pose::new(rot, dir * s);
    let ab = relative_pose(&at(0.0), &at(1.0));
    let bc = relative_pose(&at(1.0), &at(3.0));
    let ac = relative_pose(&at(0.0), &at(3.0));
    for i in 0..3 {
        assert!((ab[i] + bc[i] - ac[i]).abs() < 1e-12);
    }
    assert!(ac.fixed_rows::<3>(3).norm() < 1e-15);
}

fn linear_table() -> CalibrationTable {
    CalibrationTable::parse(common::CALIBRATION).unwrap()
}

#[test]
fn linear_motion_export() {
    let step = Vector3::new(0.002, -0.001, 0.0005);
    let rot = UnitQuaternion::from_euler_angles(0.2, -0.1, 0.4);
    let records: Vec<AlignedRecord> = (0..40)
        .map(|i| AlignedRecord {
            frame_no: i,
            t_us: i as u64 * 33_333,
            ee_pose: Pose::new(rot, Vector3::new(0.3, 0.1, 0.2) + step * i as f64),
            fingers: [1000 + 10 * i as u16; 6],
            pose_age_us: 0,
            encoder_age_us: 0,
        })
        .collect();
    let samples = export_training(&records, &linear_table(), 16, 8, FingerMode::Absolute).unwrap();
    assert_eq!(samples.len(), 25);
    for (s, sample) in samples.iter().enumerate() {
        assert_eq!(sample.obs_frame_no, s as u32);
        assert_eq!(sample.actions.len(), 16);
        assert!(sample.actions[0][..6].iter().all(|&v| v == 0.0));
        for (k, a) in sample.actions.iter().enumerate() {
            for i in 0..3 {
                assert!((a[i] - step[i] * k as f64).abs() < 1e-12);
            }
            assert!(a[3..6].iter().all(|v| v.abs() < 1e-15));
        }
    }
    let bin = write_training_binary(&samples);
    assert_eq!(bin.len(), samples.len() * (8 + 16 * ACTION_DIM * 8));
}
