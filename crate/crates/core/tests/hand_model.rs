mod common;

use exokit::hand_model::{
    fk_attachment_points, parse_chain, serialize_chain, CouplingFunction, JointSpec, KinematicChain,
    Marker, PassiveThumbConfig,
};
use exokit::{Pose, UnitQuaternion, Vector3};
use nalgebra::Matrix4;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{apply, gaussian3, homogeneous};

#[test]
fn fixture_zero_pose_by_hand() {
    let chain = parse_chain(common::CHAIN).unwrap();
    assert_eq!(chain.joints().len(), 3);
    assert_eq!(chain.markers().len(), 2);
    let f = CouplingFunction::identity(-0.2, 1.4);
    let (rd, rm) = fk_attachment_points(&chain, &f, &PassiveThumbConfig::new(0.0, 0.0)).unwrap();
    // all origins are pure translations along x at zero angles
    assert!((rd - Vector3::new(0.02 + 0.045 + 0.03 + 0.02, -0.015, 0.01)).norm() < 1e-15);
    assert!((rm - Vector3::new(0.02 + 0.025, -0.015, 0.012)).norm() < 1e-15);
}

struct RandomChain {
    chain: KinematicChain,
    /// Per joint: parent index, origin matrix, axis.
    oracle: Vec<(Option<usize>, Matrix4<f64>, Vector3<f64>)>,
    markers: Vec<(usize, Vector3<f64>)>,
}

fn random_chain(rng: &mut ChaCha8Rng) -> RandomChain {
    let n = rng.random_range(1..=6);
    let mut joints = Vec::new();
    let mut oracle = Vec::new();
    for i in 0..n {
        let parent = if i == 0 || rng.random_bool(0.2) {
            None
        } else {
            Some(rng.random_range(0..i))
        };
        let o_axis = gaussian3(rng).normalize();
        let o_angle = rng.random_range(-3.0..3.0);
        let t = gaussian3(rng) * 0.05;
        let axis = gaussian3(rng).normalize();
        joints.push(JointSpec {
            name: format!("j{i}"),
            parent: parent.map(|p| format!("j{p}")),
            origin: Pose::new(
                UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(o_axis), o_angle),
                t,
            ),
            axis,
            limits: (-3.0, 3.0),
        });
        oracle.push((parent, homogeneous(&o_axis, o_angle, &t), axis));
    }
    let markers: Vec<(usize, Vector3<f64>)> = (0..rng.random_range(1..=3))
        .map(|_| (rng.random_range(0..n), gaussian3(rng) * 0.03))
        .collect();
    let chain = KinematicChain::new(
        joints,
        markers
            .iter()
            .enumerate()
            .map(|(m, (j, offset))| Marker {
                name: format!("m{m}"),
                joint: format!("j{j}"),
                offset: *offset,
            })
            .collect(),
    )
    .unwrap();
    RandomChain {
        chain,
        oracle,
        markers,
    }
}

fn oracle_marker(rc: &RandomChain, angles: &[f64], marker: usize) -> Vector3<f64> {
    let mut world: Vec<Matrix4<f64>> = Vec::new();
    for (i, (parent, origin, axis)) in rc.oracle.iter().enumerate() {
        let local = origin * homogeneous(axis, angles[i], &Vector3::zeros());
        world.push(match parent {
            Some(p) => world[*p] * local,
            None => local,
        });
    }
    let (j, offset) = rc.markers[marker];
    apply(&world[j], &offset)
}

fn angles_in_chain_order(rc: &RandomChain, by_name: &[f64]) -> Vec<f64> {
    rc.chain
        .joints()
        .iter()
        .map(|j| by_name[j.name[1..].parse::<usize>().unwrap()])
        .collect()
}

#[test]
fn forward_kinematics_matches_matrix_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let rc = random_chain(&mut rng);
        let by_name: Vec<f64> = (0..rc.oracle.len()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let angles = angles_in_chain_order(&rc, &by_name);
        for m in 0..rc.markers.len() {
            let got = rc.chain.marker_position(&format!("m{m}"), &angles).unwrap();
            let want = oracle_marker(&rc, &by_name, m);
            assert!((got - want).norm() < 1e-10, "{got} vs {want}");
        }
    }
}

#[test]
fn serialize_parse_round_trip_random_chains() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let rc = random_chain(&mut rng);
        let text = serialize_chain(&rc.chain);
        let back = parse_chain(&text).unwrap();
        assert_eq!(back, rc.chain);
        assert_eq!(serialize_chain(&back), text);
    }
}

#[test]
fn marker_motion_is_bounded_by_link_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let rc = random_chain(&mut rng);
        let n = rc.chain.joints().len();
        let angles: Vec<f64> = (0..n).map(|_| rng.random_range(-2.9..2.9)).collect();
        let bound_per_rad = rc.chain.total_link_length();
        for j in 0..n {
            let delta = rng.random_range(0.0..1e-6);
            let mut moved = angles.clone();
            moved[j] += delta;
            for m in 0..rc.markers.len() {
                let name = format!("m{m}");
                let a = rc.chain.marker_position(&name, &angles).unwrap();
                let b = rc.chain.marker_position(&name, &moved).unwrap();
                assert!((a - b).norm() <= bound_per_rad * delta * (1.0 + 1e-6));
            }
        }
    }
}

fn dense_oracle(wps: &[(f64, f64)], x: f64) -> f64 {
    if x <= wps[0].0 {
        return wps[0].1;
    }
    for w in wps.windows(2) {
        if x <= w[1].0 {
            let t = (x - w[0].0) / (w[1].0 - w[0].0);
            return w[0].1 + t * (w[1].1 - w[0].1);
        }
    }
    wps[wps.len() - 1].1
}

fn monotone_table(rng: &mut ChaCha8Rng, n: usize) -> Vec<(f64, f64)> {
    let mut x = rng.random_range(-1.0..0.0);
    let mut y = rng.random_range(-1.0..1.0);
    (0..n)
        .map(|_| {
            x += rng.random_range(0.01..0.4);
            y += rng.random_range(0.0..0.4);
            (x, y)
        })
        .collect()
}

#[test]
fn coupling_matches_dense_interpolation() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let wps = monotone_table(&mut rng, 8);
    let f = CouplingFunction::new(wps.clone()).unwrap();
    let (lo, hi) = (wps[0].0 - 0.5, wps[7].0 + 0.5);
    for i in 0..1000 {
        let x = lo + (hi - lo) * i as f64 / 999.0;
        assert!((f.eval(x) - dense_oracle(&wps, x)).abs() <= 1e-12);
    }
    for (x, y) in &wps {
        assert_eq!(f.eval(*x), *y);
    }
}

proptest! {
    #[test]
    fn non_decreasing_table_gives_non_decreasing_coupling(seed in any::<u64>(), n in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wps = monotone_table(&mut rng, n);
        let f = CouplingFunction::new(wps.clone()).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..200 {
            let x = wps[0].0 - 0.1 + (wps[n - 1].0 - wps[0].0 + 0.2) * i as f64 / 199.0;
            let y = f.eval(x);
            prop_assert!(y >= prev);
            prev = y;
        }
    }

    #[test]
    fn decreasing_segment_breaks_monotonicity(seed in any::<u64>(), n in 3usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut wps = monotone_table(&mut rng, n);
        let k = rng.random_range(1..n);
        wps[k].1 = wps[k - 1].1 - 0.1;
        let f = CouplingFunction::new(wps.clone()).unwrap();
        prop_assert!(f.eval(wps[k].0) < f.eval(wps[k - 1].0));
    }
}
