#![allow(dead_code)]

use exokit::hand_model::{parse_chain, PassiveThumbConfig};
use exokit::keyvalue::KeyValues;
use exokit::stream_ingest::EncoderFrame;
use exokit::thumb_coupling::{
    coupling_from_key_values, CouplingGeometry, ThumbModel, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use exokit::{Pose, Twist, UnitQuaternion, Vector3};
use nalgebra::{Matrix4, Vector4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const CHAIN: &str = include_str!("../../fixtures/passive_thumb.chain");
pub const GEOMETRY: &str = include_str!("../../fixtures/passive_thumb.geom");
pub const CALIBRATION: &str = include_str!("../../fixtures/calibration.table");
pub const GOLDEN_FRAME: &[u8] = include_bytes!("../../fixtures/golden_frame.bin");

pub fn golden() -> EncoderFrame {
    EncoderFrame {
        seq: 7,
        t_us: 1_234_567,
        values: [100, 200, 300, 400, 500, 600],
    }
}

pub fn thumb() -> ThumbModel {
    let chain = parse_chain(CHAIN).unwrap();
    let kv = KeyValues::parse(GEOMETRY).unwrap();
    let geom = CouplingGeometry::from_key_values(&kv).unwrap();
    let f = coupling_from_key_values(&kv, &chain).unwrap();
    ThumbModel::new(chain, f, geom).unwrap()
}

pub fn gaussian3(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::from_fn(|_, _| StandardNormal.sample(rng))
}

pub fn random_twist(rng: &mut ChaCha8Rng, lin: f64, ang: f64) -> Twist {
    let v = gaussian3(rng) * lin;
    let w = gaussian3(rng) * ang;
    Twist::new(v.x, v.y, v.z, w.x, w.y, w.z)
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    let q = nalgebra::Quaternion::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    );
    UnitQuaternion::from_quaternion(q)
}

pub fn random_pose(rng: &mut ChaCha8Rng, spread: f64) -> Pose {
    Pose::new(random_rotation(rng), gaussian3(rng) * spread)
}

/// Configuration inside the inner 80% of the fixture's joint limits.
pub fn random_config(rng: &mut ChaCha8Rng, thumb: &ThumbModel) -> PassiveThumbConfig {
    let mut pick = |name: &str| {
        let (lo, hi) = thumb.chain().joint_limits(name).unwrap();
        let pad = 0.1 * (hi - lo);
        rng.random_range(lo + pad..hi - pad)
    };
    let theta2 = pick("theta2");
    let theta4 = pick("theta4");
    PassiveThumbConfig::new(theta2, theta4)
}

/// Feasible `(q, pose)` obtained by projecting a perturbed identity guess.
pub fn random_feasible(rng: &mut ChaCha8Rng, thumb: &ThumbModel) -> (PassiveThumbConfig, Pose) {
    loop {
        let q = random_config(rng, thumb);
        let guess = Pose::identity().retract(&random_twist(rng, 0.003, 0.03));
        if let Ok(p) = thumb.project_to_manifold(&guess, &q, DEFAULT_TOL, DEFAULT_MAX_ITER) {
            return (q, p.pose);
        }
    }
}

/// 4×4 homogeneous matrix for a rotation about a unit axis (Rodrigues) plus
/// a translation, built without the library's pose type.
pub fn homogeneous(axis: &Vector3<f64>, angle: f64, t: &Vector3<f64>) -> Matrix4<f64> {
    let k = axis.normalize();
    let kx = nalgebra::Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    let r = nalgebra::Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos());
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
    m
}

pub fn apply(m: &Matrix4<f64>, p: &Vector3<f64>) -> Vector3<f64> {
    (m * Vector4::new(p.x, p.y, p.z, 1.0)).xyz()
}

/// Rotation logarithm from the matrix: angle via atan2 of the skew and trace
/// parts, axis from the skew part, or from the symmetric part near π.
pub fn rotation_log(r: &nalgebra::Matrix3<f64>) -> Vector3<f64> {
    let skew = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin = skew.norm() / 2.0;
    let cos = (r.trace() - 1.0) / 2.0;
    let angle = sin.atan2(cos);
    if angle < 1e-7 {
        return skew / 2.0;
    }
    if std::f64::consts::PI - angle > 1e-4 {
        return skew / skew.norm() * angle;
    }
    // (R + I)/2 = k kᵀ at π
    let b = (r + nalgebra::Matrix3::identity()) / 2.0;
    let i = (0..3).max_by(|&a, &c| b[(a, a)].total_cmp(&b[(c, c)])).unwrap();
    let mut k = b.column(i) / b[(i, i)].sqrt();
    if k.dot(&skew) < 0.0 {
        k = -k;
    }
    k.normalize() * angle
}
