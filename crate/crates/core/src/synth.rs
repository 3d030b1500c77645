//! Generators for the bundled synthetic fixtures: the three-finger `synth3`
//! hand, primitive meshes, demo trajectories and a noisy contact trace.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{Point3, UnitQuaternion, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::contact::FingertipTrace;
use crate::geometry::TriangleMesh;
use crate::hand_model::{
    ChainFile, Finger, JointEntry, JointKind, JointVector, KeypointEntry, KinematicChain, LinkEntry, OriginEntry,
    SampleEntry,
};
use crate::retarget::HumanFrame;

/// Unit cube centred at the origin with outward winding.
pub fn unit_cube() -> TriangleMesh {
    let v: Vec<Point3<f64>> = (0..8)
        .map(|i| {
            Point3::new(
                if i & 1 == 0 { -0.5 } else { 0.5 },
                if i & 2 == 0 { -0.5 } else { 0.5 },
                if i & 4 == 0 { -0.5 } else { 0.5 },
            )
        })
        .collect();
    let t = vec![
        [0, 2, 3], [0, 3, 1], // -z
        [4, 5, 7], [4, 7, 6], // +z
        [0, 1, 5], [0, 5, 4], // -y
        [2, 6, 7], [2, 7, 3], // +y
        [0, 4, 6], [0, 6, 2], // -x
        [1, 3, 7], [1, 7, 5], // +x
    ];
    TriangleMesh::new(v, t).expect("cube is valid")
}

/// Subdivided icosahedron of the given radius centred at `center`.
pub fn icosphere(subdivisions: usize, radius: f64, center: Point3<f64>) -> TriangleMesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        [-1.0, phi, 0.0], [1.0, phi, 0.0], [-1.0, -phi, 0.0], [1.0, -phi, 0.0],
        [0.0, -1.0, phi], [0.0, 1.0, phi], [0.0, -1.0, -phi], [0.0, 1.0, -phi],
        [phi, 0.0, -1.0], [phi, 0.0, 1.0], [-phi, 0.0, -1.0], [-phi, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vector3::from(*v).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| {
            *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let points = verts.iter().map(|v| center + v * radius).collect();
    TriangleMesh::new(points, faces).expect("icosphere is valid")
}

struct FingerLayout {
    finger: Finger,
    base: [f64; 3],
    yaw: f64,
    proximal: f64,
    limits: [[f64; 2]; 4],
    /// Roll of the fingertip marker around the distal axis, from the pad.
    tip_roll: f64,
}

const MIDDLE_LEN: f64 = 0.025;
const DISTAL_CYL: f64 = 0.016;
const RADIUS: f64 = 0.0085;

fn sample(p: Vector3<f64>, n: Vector3<f64>) -> SampleEntry {
    SampleEntry {
        p: p.into(),
        n: n.normalize().into(),
    }
}

/// Rings of samples around a link's +y axis; angle 0 faces +z (the palm side).
fn cylinder_samples(ys: &[f64], per_ring: usize) -> Vec<SampleEntry> {
    let mut out = Vec::new();
    for &y in ys {
        for k in 0..per_ring {
            let phi = 2.0 * PI * k as f64 / per_ring as f64;
            let n = Vector3::new(phi.sin(), 0.0, phi.cos());
            out.push(sample(n * RADIUS + Vector3::new(0.0, y, 0.0), n));
        }
    }
    out
}

fn revolute(name: String, parent: &str, axis: [f64; 3], limits: [f64; 2], finger: Finger) -> JointEntry {
    JointEntry {
        name,
        parent_link: Some(parent.to_string()),
        kind: JointKind::Revolute,
        axis,
        limits,
        rest: 0.0f64.clamp(limits[0], limits[1]),
        finger,
    }
}

fn origin(t: [f64; 3], rot: UnitQuaternion<f64>) -> OriginEntry {
    let q = rot.quaternion();
    OriginEntry {
        translation: t,
        quat_wxyz: [q.w, q.i, q.j, q.k],
    }
}

/// The `synth3` test hand: palm, thumb, index and middle fingers (four joints
/// each), ten zero-range padding joints standing in for ring and pinky, and
/// 13 keypoints.
pub fn synth3_chain() -> ChainFile {
    let mut joints = Vec::new();
    for (i, name) in ["root_tx", "root_ty", "root_tz", "root_rx", "root_ry", "root_rz"].iter().enumerate() {
        let mut axis = [0.0; 3];
        axis[i % 3] = 1.0;
        let limits = if i < 3 { [-0.5, 0.5] } else { [-PI, PI] };
        joints.push(JointEntry {
            name: name.to_string(),
            parent_link: None,
            kind: JointKind::Free,
            axis,
            limits,
            rest: 0.0,
            finger: Finger::Palm,
        });
    }

    let mut palm_samples = Vec::new();
    for &y in &[0.005, 0.02, 0.035, 0.05, 0.065, 0.08] {
        for &x in &[-0.035, -0.0175, 0.0, 0.0175, 0.035] {
            palm_samples.push(sample(Vector3::new(x, y, 0.01), Vector3::z()));
        }
    }
    for &y in &[0.015, 0.045, 0.075] {
        for &x in &[-0.03, 0.0, 0.03] {
            palm_samples.push(sample(Vector3::new(x, y, -0.01), -Vector3::z()));
        }
    }
    let mut links = vec![LinkEntry {
        name: "palm".into(),
        parent_joint: None,
        origin: OriginEntry::default(),
        finger: Finger::Palm,
        fingertip: None,
        samples: palm_samples,
    }];

    let layouts = [
        FingerLayout {
            finger: Finger::Thumb,
            base: [0.045, 0.025, 0.01],
            yaw: -0.9,
            proximal: 0.035,
            limits: [[-0.6, 0.6], [-0.3, 1.3], [0.0, 1.4], [0.0, 1.3]],
            tip_roll: -PI / 4.0,
        },
        FingerLayout {
            finger: Finger::Index,
            base: [0.02, 0.09, 0.0],
            yaw: 0.0,
            proximal: 0.045,
            limits: [[-0.35, 0.35], [-0.25, 1.6], [0.0, 1.75], [0.0, 1.4]],
            tip_roll: 0.0,
        },
        FingerLayout {
            finger: Finger::Middle,
            base: [-0.02, 0.09, 0.0],
            yaw: 0.0,
            proximal: 0.045,
            limits: [[-0.35, 0.35], [-0.25, 1.6], [0.0, 1.75], [0.0, 1.4]],
            tip_roll: 0.0,
        },
    ];

    let mut keypoints = vec![
        KeypointEntry { link: "palm".into(), offset: [0.0, 0.0, 0.0] },
        KeypointEntry { link: "palm".into(), offset: [0.0, 0.045, 0.0] },
        KeypointEntry { link: "palm".into(), offset: [0.04, 0.09, 0.0] },
        KeypointEntry { link: "palm".into(), offset: [-0.04, 0.09, 0.0] },
    ];

    for l in &layouts {
        let f = l.finger.name();
        let knuckle = format!("{f}_knuckle");
        let proximal = format!("{f}_proximal");
        let middle = format!("{f}_middle");
        let distal = format!("{f}_distal");

        joints.push(revolute(format!("{f}_abd"), "palm", [0.0, 0.0, 1.0], l.limits[0], l.finger));
        joints.push(revolute(format!("{f}_mcp"), &knuckle, [1.0, 0.0, 0.0], l.limits[1], l.finger));
        joints.push(revolute(format!("{f}_pip"), &proximal, [1.0, 0.0, 0.0], l.limits[2], l.finger));
        joints.push(revolute(format!("{f}_dip"), &middle, [1.0, 0.0, 0.0], l.limits[3], l.finger));

        let knuckle_samples = (0..8)
            .map(|k| {
                let phi = 2.0 * PI * k as f64 / 8.0;
                let n = Vector3::new(phi.sin(), 0.0, phi.cos());
                sample(n * 0.009, n)
            })
            .collect();
        let mut distal_samples = cylinder_samples(&[0.004, 0.010, DISTAL_CYL], 8);
        let cap = Vector3::new(0.0, DISTAL_CYL, 0.0);
        for k in 0..8 {
            let phi = 2.0 * PI * k as f64 / 8.0;
            let s45 = std::f64::consts::FRAC_1_SQRT_2;
            let n = Vector3::new(s45 * phi.sin(), s45, s45 * phi.cos());
            distal_samples.push(sample(cap + n * RADIUS, n));
        }
        distal_samples.push(sample(cap + Vector3::y() * RADIUS, Vector3::y()));

        links.push(LinkEntry {
            name: knuckle.clone(),
            parent_joint: Some(format!("{f}_abd")),
            origin: origin(l.base, UnitQuaternion::from_axis_angle(&Vector3::z_axis(), l.yaw)),
            finger: l.finger,
            fingertip: None,
            samples: knuckle_samples,
        });
        links.push(LinkEntry {
            name: proximal.clone(),
            parent_joint: Some(format!("{f}_mcp")),
            origin: OriginEntry::default(),
            finger: l.finger,
            fingertip: None,
            samples: cylinder_samples(&[0.01, l.proximal / 2.0, l.proximal - 0.008], 6),
        });
        links.push(LinkEntry {
            name: middle.clone(),
            parent_joint: Some(format!("{f}_pip")),
            origin: origin([0.0, l.proximal, 0.0], UnitQuaternion::identity()),
            finger: l.finger,
            fingertip: None,
            samples: cylinder_samples(&[0.006, 0.0125, 0.019], 6),
        });
        links.push(LinkEntry {
            name: distal.clone(),
            parent_joint: Some(format!("{f}_dip")),
            origin: origin([0.0, MIDDLE_LEN, 0.0], UnitQuaternion::identity()),
            finger: l.finger,
            fingertip: Some([RADIUS * l.tip_roll.sin(), 0.012, RADIUS * l.tip_roll.cos()]),
            samples: distal_samples,
        });

        keypoints.push(KeypointEntry { link: proximal, offset: [0.0, l.proximal / 2.0, 0.0] });
        keypoints.push(KeypointEntry { link: middle, offset: [0.0, MIDDLE_LEN / 2.0, 0.0] });
        keypoints.push(KeypointEntry { link: distal, offset: [0.0, DISTAL_CYL + RADIUS, 0.0] });
    }

    for finger in [Finger::Ring, Finger::Pinky] {
        for k in 1..=5 {
            let mut j = revolute(format!("{}_pad{k}", finger.name()), "palm", [1.0, 0.0, 0.0], [0.0, 0.0], finger);
            j.rest = 0.0;
            joints.push(j);
        }
    }

    ChainFile {
        name: "synth3".into(),
        joints,
        links,
        keypoints,
    }
}

/// Smooth joint path for `chain`: a slow wrist drift plus per-joint sinusoids
/// around the middle of each articulated range.
pub fn smooth_joint_path(chain: &KinematicChain, frames: usize, dt: f64) -> Vec<JointVector> {
    let lo = chain.lower_bounds();
    let hi = chain.upper_bounds();
    (0..frames)
        .map(|f| {
            let t = f as f64 * dt;
            let mut q = vec![0.0; chain.dof()];
            q[0] = 0.03 * (0.8 * t).sin();
            q[1] = 0.02 * (0.6 * t).cos();
            q[2] = 0.1 + 0.015 * (0.5 * t).sin();
            q[3] = 0.15 * (0.7 * t).sin();
            q[4] = -0.1 + 0.1 * (0.4 * t).cos();
            q[5] = 0.2 * (0.3 * t).sin();
            for i in chain.articulated_dofs() {
                let mid = 0.5 * (lo[i] + hi[i]);
                let amp = 0.3 * (hi[i] - lo[i]);
                let freq = 0.6 + 0.07 * (i % 5) as f64;
                q[i] = mid + amp * (2.0 * PI * freq * t + 0.9 * i as f64).sin();
            }
            JointVector(q)
        })
        .collect()
}

/// Human frames whose keypoints are the chain's own keypoints along `path`.
pub fn frames_from_path(chain: &KinematicChain, path: &[JointVector], dt: f64) -> Vec<HumanFrame> {
    path.iter()
        .enumerate()
        .map(|(f, q)| HumanFrame {
            timestamp: f as f64 * dt,
            keypoints: chain.keypoints(q).0,
        })
        .collect()
}

/// Default uniform scale between the human capture and the robot hand.
pub const DEMO_SCALE: f64 = 10.0 / 9.0;
pub const DEMO_FRAMES: usize = 120;
pub const DEMO_DT: f64 = 1.0 / 30.0;
/// Radius of the demo sphere after scaling.
pub const DEMO_RADIUS: f64 = 0.04;

/// Demo grasp: the hand approaches a sphere, closes three fingers until they
/// touch it at frame 75, then squeezes until the thumb, index and middle
/// fingers end 4, 3 and 2.5 mm inside the surface at frame 110.
pub struct DemoScene {
    /// Sphere as stored on disk, before scaling by [`DEMO_SCALE`].
    pub mesh_unscaled: TriangleMesh,
    /// Human keypoint frames as stored on disk, before scaling.
    pub human_unscaled: Vec<HumanFrame>,
    /// Ground-truth robot joint path in the scaled frame.
    pub path: Vec<JointVector>,
}

const DEMO_CENTER: [f64; 3] = [0.01, 0.055, 0.06];
const DEMO_DEPTHS: [(Finger, f64, [f64; 4]); 3] = [
    (Finger::Thumb, 0.004, [-0.6, 1.0, 0.8, 0.0]),
    (Finger::Index, 0.003, [0.0, 1.2, 0.6, 0.2]),
    (Finger::Middle, 0.0025, [0.2, 1.2, 0.4, 0.2]),
];

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

fn finger_depth(chain: &KinematicChain, q: &JointVector, finger: Finger, mesh: &TriangleMesh) -> f64 {
    chain
        .surface_points(q, Some(finger))
        .iter()
        .map(|p| -mesh.signed_distance(&p.position))
        .fold(0.0, f64::max)
}

/// Open-hand pose with each finger closed by `closure[finger]` of its grip.
fn demo_pose(chain: &KinematicChain, closure: &[f64; 3], approach: f64) -> JointVector {
    let mut q = JointVector::zeros(chain.dof());
    q[2] = -0.03 * (1.0 - approach);
    q[1] = -0.01 * (1.0 - approach);
    for ((finger, _, grip), s) in DEMO_DEPTHS.iter().zip(closure) {
        for (&i, g) in chain.finger_dofs(*finger).iter().zip(grip) {
            q[i] = 0.1 * g + s * 0.9 * g;
        }
    }
    q
}

pub fn demo_scene(chain: &KinematicChain) -> DemoScene {
    let center = Point3::from(DEMO_CENTER);
    let mesh = icosphere(3, DEMO_RADIUS, center);

    // Bisect each finger's closure to first touch and to its target depth.
    let bisect = |k: usize, depth: f64, finger: Finger, base: [f64; 3]| {
        let (mut lo, mut hi) = (0.0, 1.5);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let mut c = base;
            c[k] = mid;
            if finger_depth(chain, &demo_pose(chain, &c, 1.0), finger, &mesh) <= depth {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let mut closure = [1.0; 3];
    let mut touch = [1.0; 3];
    for (k, (finger, depth, _)) in DEMO_DEPTHS.iter().enumerate() {
        closure[k] = bisect(k, *depth, *finger, closure);
    }
    for (k, (finger, _, _)) in DEMO_DEPTHS.iter().enumerate() {
        touch[k] = bisect(k, 0.0, *finger, closure);
    }

    // Fingers ease onto the surface, pause, then squeeze into it.
    let path: Vec<JointVector> = (0..DEMO_FRAMES)
        .map(|f| {
            let f = f as f64;
            let approach = smoothstep(f / 40.0);
            let close = smoothstep((f - 30.0) / 45.0);
            let squeeze = smoothstep((f - 75.0) / 35.0);
            let c: [f64; 3] = std::array::from_fn(|k| touch[k] * close + (closure[k] - touch[k]) * squeeze);
            demo_pose(chain, &c, approach)
        })
        .collect();
    let human = frames_from_path(chain, &path, DEMO_DT);
    DemoScene {
        mesh_unscaled: mesh.scaled(1.0 / DEMO_SCALE).expect("positive scale"),
        human_unscaled: human.iter().map(|h| h.scaled(1.0 / DEMO_SCALE)).collect(),
        path,
    }
}

/// Frames of [`noisy_contact_trace`] where the fingertips move faster than
/// the default speed gate allows.
pub const NOISY_FAST_FRAMES: std::ops::Range<usize> = 120..150;
pub const NOISY_FRAMES: usize = 200;

/// Fingertip trace with scheduled contact segments and isolated one-frame
/// distance spikes that cross both thresholds. Fingertips drift slowly
/// except during [`NOISY_FAST_FRAMES`], where they sweep at 2 m/s.
pub fn noisy_contact_trace(seed: u64) -> FingertipTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = 1.0 / 30.0;
    let timestamps: Vec<f64> = (0..NOISY_FRAMES).map(|f| f as f64 * dt).collect();
    let (t0, t1) = (NOISY_FAST_FRAMES.start as f64 * dt, NOISY_FAST_FRAMES.end as f64 * dt);
    let positions = timestamps
        .iter()
        .map(|&t| {
            std::array::from_fn(|d| {
                let phase = d as f64;
                let sweep = 2.0 * (t.clamp(t0, t1) - t0);
                Some(Point3::new(
                    0.02 * d as f64 + 0.05 * (2.0 * PI * 0.3 * t + phase).sin() + sweep,
                    0.02 * (2.0 * PI * 0.2 * t + phase).cos(),
                    0.01 * t * t,
                ))
            })
        })
        .collect();
    let mut distances = vec![[0.0; 5]; NOISY_FRAMES];
    for d in 0..5 {
        let on = |f: usize| (20 + 10 * d..90 + 10 * d).contains(&f) || (160..190).contains(&f);
        let mut last_spike = 0;
        for (f, row) in distances.iter_mut().enumerate() {
            let spike = f >= 2 && f + 2 < NOISY_FRAMES && f > last_spike + 2 && rng.random_bool(0.12);
            if spike {
                last_spike = f;
            }
            row[d] = match (on(f), spike) {
                (true, false) => rng.random_range(0.0005..0.0015),
                (false, false) => rng.random_range(0.007..0.009),
                (true, true) => rng.random_range(0.0065..0.009),
                (false, true) => rng.random_range(0.0005..0.0015),
            };
        }
    }
    FingertipTrace {
        timestamps,
        positions,
        distances,
    }
}
