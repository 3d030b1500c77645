use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;

use dexsynth::hand_model::{
    ChainFile, Finger, JointEntry, JointKind, JointVector, KinematicChain, LinkEntry, LoadOptions, OriginEntry,
    SampleEntry,
};
use dexsynth::synth::synth3_chain;
use nalgebra::{Isometry3, Matrix3, Matrix4, Point3, Translation3, UnitQuaternion, Vector3, Vector4};
use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn synth3() -> KinematicChain {
    KinematicChain::from_file(synth3_chain(), LoadOptions::default()).unwrap()
}

fn random_q(chain: &KinematicChain, rng: &mut ChaCha8Rng) -> JointVector {
    JointVector(
        chain
            .joints()
            .iter()
            .map(|j| if j.limits[0] < j.limits[1] { rng.random_range(j.limits[0]..j.limits[1]) } else { j.limits[0] })
            .collect(),
    )
}

// Independent oracle: homogeneous 4x4 matrices, Rodrigues rotations, and
// recursion over the raw file description.
fn rodrigues(axis: [f64; 3], angle: f64) -> Matrix3<f64> {
    let k = Vector3::from(axis).normalize();
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
}

fn homogeneous(r: Matrix3<f64>, t: Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    m
}

fn quat_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y),
    )
}

fn oracle_link_transforms(file: &ChainFile, q: &[f64]) -> HashMap<String, Matrix4<f64>> {
    let jidx: HashMap<&str, usize> = file.joints.iter().enumerate().map(|(i, j)| (j.name.as_str(), i)).collect();
    let mut root = Matrix4::identity();
    for i in 0..6 {
        let j = &file.joints[i];
        let step = if i < 3 {
            homogeneous(Matrix3::identity(), Vector3::from(j.axis) * q[i])
        } else {
            homogeneous(rodrigues(j.axis, q[i]), Vector3::zeros())
        };
        root *= step;
    }
    fn resolve(
        name: &str,
        file: &ChainFile,
        jidx: &HashMap<&str, usize>,
        q: &[f64],
        root: &Matrix4<f64>,
        out: &mut HashMap<String, Matrix4<f64>>,
    ) -> Matrix4<f64> {
        if let Some(m) = out.get(name) {
            return *m;
        }
        let link = file.links.iter().find(|l| l.name == name).unwrap();
        let o = homogeneous(quat_matrix(link.origin.quat_wxyz), Vector3::from(link.origin.translation));
        let m = match &link.parent_joint {
            None => root * o,
            Some(jn) => {
                let ji = jidx[jn.as_str()];
                let j = &file.joints[ji];
                let parent = resolve(j.parent_link.as_deref().unwrap(), file, jidx, q, root, out);
                let motion = match j.kind {
                    JointKind::Prismatic => homogeneous(Matrix3::identity(), Vector3::from(j.axis) * q[ji]),
                    _ => homogeneous(rodrigues(j.axis, q[ji]), Vector3::zeros()),
                };
                parent * o * motion
            }
        };
        out.insert(name.to_string(), m);
        m
    }
    let mut out = HashMap::new();
    for l in &file.links {
        resolve(&l.name, file, &jidx, q, &root, &mut out);
    }
    out
}

fn oracle_keypoints(file: &ChainFile, q: &[f64]) -> Vec<Point3<f64>> {
    let t = oracle_link_transforms(file, q);
    file.keypoints
        .iter()
        .map(|k| {
            let v = t[&k.link] * Vector4::new(k.offset[0], k.offset[1], k.offset[2], 1.0);
            Point3::new(v.x, v.y, v.z)
        })
        .collect()
}

#[test]
fn zero_pose_is_composition_of_rest_transforms() {
    let chain = synth3();
    let file = synth3_chain();
    let q = JointVector::zeros(28);
    let fk = chain.forward_kinematics(&q);
    let oracle = oracle_link_transforms(&file, &q);
    for (link, pose) in chain.links().iter().zip(&fk.link_poses) {
        let diff = pose.to_homogeneous() - oracle[&link.name];
        assert!(diff.amax() < 1e-12, "{}", link.name);
    }
    assert!(!fk.clamped);
}

#[test]
fn root_translation_shifts_every_link() {
    let chain = synth3();
    let base = chain.forward_kinematics(&JointVector::zeros(28));
    let mut q = JointVector::zeros(28);
    q[0] = 1.0;
    q[1] = 2.0;
    q[2] = 3.0;
    let mut chain_file = synth3_chain();
    for j in chain_file.joints.iter_mut().take(3) {
        j.limits = [-5.0, 5.0];
    }
    let wide = KinematicChain::from_file(chain_file, LoadOptions::default()).unwrap();
    let moved = wide.forward_kinematics(&q);
    for (a, b) in base.link_poses.iter().zip(&moved.link_poses) {
        let d = b.translation.vector - a.translation.vector;
        assert!((d - Vector3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
    }
    // Within synth3's own limits the translation is clamped and flagged.
    assert!(chain.forward_kinematics(&q).clamped);
}

fn free_joints() -> Vec<JointEntry> {
    ["tx", "ty", "tz", "rx", "ry", "rz"]
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let mut axis = [0.0; 3];
            axis[i % 3] = 1.0;
            JointEntry {
                name: n.to_string(),
                parent_link: None,
                kind: JointKind::Free,
                axis,
                limits: [-10.0, 10.0],
                rest: 0.0,
                finger: Finger::Palm,
            }
        })
        .collect()
}

#[test]
fn single_revolute_quarter_turn() {
    let mut joints = free_joints();
    joints.push(JointEntry {
        name: "hinge".into(),
        parent_link: Some("base".into()),
        kind: JointKind::Revolute,
        axis: [0.0, 0.0, 1.0],
        limits: [-4.0, 4.0],
        rest: 0.0,
        finger: Finger::Index,
    });
    let link = |name: &str, pj: Option<&str>, t: [f64; 3], finger| LinkEntry {
        name: name.into(),
        parent_joint: pj.map(String::from),
        origin: OriginEntry { translation: t, quat_wxyz: [1.0, 0.0, 0.0, 0.0] },
        finger,
        fingertip: None,
        samples: vec![SampleEntry { p: [1.0, 0.0, 0.0], n: [1.0, 0.0, 0.0] }],
    };
    let file = ChainFile {
        name: "hinge".into(),
        joints,
        links: vec![
            link("base", None, [0.0; 3], Finger::Palm),
            link("arm", Some("hinge"), [0.0, 0.0, 0.5], Finger::Index),
        ],
        keypoints: vec![dexsynth::hand_model::KeypointEntry { link: "arm".into(), offset: [1.0, 0.0, 0.0] }],
    };
    let opts = LoadOptions { allow_count_mismatch: true, ..LoadOptions::default() };
    let chain = KinematicChain::from_file(file, opts).unwrap();
    let mut q = JointVector::zeros(7);
    q[6] = FRAC_PI_2;
    // Hand-computed: arm frame at (0, 0, 0.5) rotated 90 degrees about z, so
    // its local point (1, 0, 0) lands at (0, 1, 0.5).
    let kp = chain.keypoints(&q);
    assert!((kp[0] - Point3::new(0.0, 1.0, 0.5)).norm() < 1e-12);
    let expected = Isometry3::from_parts(
        Translation3::new(0.0, 0.0, 0.5),
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2),
    );
    let fk = chain.forward_kinematics(&q);
    assert!((fk.link_poses[1].to_homogeneous() - expected.to_homogeneous()).amax() < 1e-12);
    let sp = chain.surface_points(&q, Some(Finger::Index));
    assert_eq!(sp.len(), 1);
    assert!((sp[0].normal.into_inner() - Vector3::y()).norm() < 1e-12);
}

#[test]
fn keypoints_match_independent_oracle() {
    let chain = synth3();
    let file = synth3_chain();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let q = random_q(&chain, &mut rng);
        let kp = chain.keypoints(&q);
        let oracle = oracle_keypoints(&file, &q);
        assert_eq!(kp.len(), 13);
        for (a, b) in kp.iter().zip(&oracle) {
            assert!((a - b).norm() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn zero_pose_keypoints_are_rest_markers() {
    let chain = synth3();
    let kp = chain.keypoints(&JointVector::zeros(28));
    let fk = chain.forward_kinematics(&JointVector::zeros(28));
    for (def, p) in chain.keypoint_defs().iter().zip(kp.iter()) {
        let li = chain.link_index(&def.link).unwrap();
        assert_eq!(*p, fk.link_poses[li] * Point3::from(def.offset));
    }
    // The palm root keypoint sits at the world origin.
    assert_eq!(kp[0], Point3::origin());
}

#[test]
fn surface_points_filter_and_rest_frame() {
    let chain = synth3();
    let q = JointVector::zeros(28);
    let all = chain.surface_points(&q, None);
    assert_eq!(all.len(), chain.sample_count());
    let thumb = chain.surface_points(&q, Some(Finger::Thumb));
    assert!(!thumb.is_empty());
    assert!(thumb.iter().all(|s| s.finger == Finger::Thumb));
    assert_eq!(thumb.len(), chain.finger_samples(Finger::Thumb).len());
    // Palm samples at rest are exactly the authored points.
    let palm = &chain.links()[0];
    for (s, authored) in all.iter().zip(&palm.samples) {
        assert_eq!(s.position, authored.position);
    }
}

#[test]
fn sample_density_per_link() {
    let chain = synth3();
    for link in chain.links() {
        let min = if link.fingertip.is_some() { 32 } else { 8 };
        assert!(link.samples.len() >= min, "{} has {} samples", link.name, link.samples.len());
    }
}

#[test]
fn rotated_root_rotates_normals() {
    let chain = synth3();
    let mut q = JointVector::zeros(28);
    q[3] = 0.3;
    q[4] = -0.7;
    q[5] = 1.1;
    let r = chain.root_pose(&q).rotation;
    let rest = chain.surface_points(&JointVector::zeros(28), None);
    let rotated = chain.surface_points(&q, None);
    for (a, b) in rest.iter().zip(&rotated) {
        assert!((r * a.normal.into_inner() - b.normal.into_inner()).norm() < 1e-12);
        assert!((b.normal.norm() - 1.0).abs() < 1e-12);
    }
}

fn arb_q() -> impl Strategy<Value = Vec<f64>> {
    let chain = synth3();
    let ranges: Vec<_> = chain
        .joints()
        .iter()
        .map(|j| (j.limits[0] - 0.5)..=(j.limits[1] + 0.5))
        .collect();
    ranges
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fk_rotations_are_orthonormal(q in arb_q()) {
        let chain = synth3();
        let fk = chain.forward_kinematics(&JointVector(q));
        for pose in &fk.link_poses {
            let r = pose.rotation.to_rotation_matrix().into_inner();
            prop_assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-8);
        }
    }

    #[test]
    fn clamping_is_idempotent(q in arb_q()) {
        let chain = synth3();
        let (once, _) = chain.clamp(&JointVector(q));
        let (twice, flagged) = chain.clamp(&once);
        prop_assert_eq!(&once, &twice);
        prop_assert!(!flagged);
    }

    #[test]
    fn keypoints_equivariant_under_root_motion(
        q in arb_q(),
        g in prop::array::uniform6(-0.3f64..0.3),
    ) {
        let chain = synth3();
        let (mut q, _) = chain.clamp(&JointVector(q));
        let h = chain.root_pose(&q);
        let g_iso = Isometry3::from_parts(
            Translation3::new(g[0], g[1], g[2]),
            UnitQuaternion::from_euler_angles(g[3], g[4], g[5]),
        );
        let composed = g_iso * h;
        let root = chain.root_dofs_for_pose(&composed).unwrap();
        prop_assume!(root[..3].iter().all(|t| t.abs() < 0.5));
        let before = chain.keypoints(&q);
        q[..6].copy_from_slice(&root);
        let after = chain.keypoints(&q);
        prop_assert_eq!(after.len(), 13);
        for (a, b) in before.iter().zip(after.iter()) {
            prop_assert!((g_iso * a - b).norm() < 1e-9);
        }
    }
}
