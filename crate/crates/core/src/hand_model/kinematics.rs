use nalgebra::{Isometry3, Point3, Translation3, Unit, UnitQuaternion, Vector3};

use super::{Finger, JointKind, JointVector, KeypointSet, KinematicChain, DUMMY_DOF};

/// Link poses in the world frame, indexed like [`KinematicChain::links`].
#[derive(Clone, Debug)]
pub struct FkResult {
    pub link_poses: Vec<Isometry3<f64>>,
    /// Set when any joint value had to be clamped into its limits.
    pub clamped: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfacePoint {
    /// Global sample index.
    pub index: usize,
    pub position: Point3<f64>,
    pub normal: Unit<Vector3<f64>>,
    pub finger: Finger,
}

impl KinematicChain {
    /// Clamps every entry into its joint limits.
    pub fn clamp(&self, q: &JointVector) -> (JointVector, bool) {
        let mut clamped = false;
        let out = q
            .iter()
            .zip(&self.joints)
            .map(|(&v, j)| {
                let c = v.clamp(j.limits[0], j.limits[1]);
                clamped |= c != v;
                c
            })
            .collect();
        (JointVector(out), clamped)
    }

    /// Root link placement encoded by the six free joints.
    pub fn root_pose(&self, q: &[f64]) -> Isometry3<f64> {
        let mut pose = Isometry3::identity();
        for (i, j) in self.joints[..DUMMY_DOF].iter().enumerate() {
            let step = if i < 3 {
                Isometry3::from_parts(Translation3::from(j.axis.into_inner() * q[i]), UnitQuaternion::identity())
            } else {
                Isometry3::from_parts(Translation3::identity(), UnitQuaternion::from_axis_angle(&j.axis, q[i]))
            };
            pose *= step;
        }
        pose
    }

    /// Root DoF values reproducing `pose`, for chains whose free joints use
    /// the canonical x, y, z axes in order. Returns `None` otherwise.
    pub fn root_dofs_for_pose(&self, pose: &Isometry3<f64>) -> Option<[f64; 6]> {
        let canonical = [Vector3::x(), Vector3::y(), Vector3::z()];
        for (i, j) in self.joints[..DUMMY_DOF].iter().enumerate() {
            if (j.axis.into_inner() - canonical[i % 3]).norm() > 1e-12 {
                return None;
            }
        }
        let r = pose.rotation.to_rotation_matrix();
        let m = r.matrix();
        let b = m[(0, 2)].clamp(-1.0, 1.0).asin();
        let a = (-m[(1, 2)]).atan2(m[(2, 2)]);
        let c = (-m[(0, 1)]).atan2(m[(0, 0)]);
        let t = pose.translation.vector;
        Some([t.x, t.y, t.z, a, b, c])
    }

    pub fn forward_kinematics(&self, q: &JointVector) -> FkResult {
        let (q, clamped) = self.clamp(q);
        let mut poses: Vec<Isometry3<f64>> = Vec::with_capacity(self.links.len());
        for (li, link) in self.links.iter().enumerate() {
            let pose = match (self.link_parent_joint[li], self.link_parent_link[li]) {
                (Some(ji), Some(pl)) => {
                    let j = &self.joints[ji];
                    let motion = match j.kind {
                        JointKind::Revolute => Isometry3::from_parts(
                            Translation3::identity(),
                            UnitQuaternion::from_axis_angle(&j.axis, q[ji]),
                        ),
                        JointKind::Prismatic => Isometry3::from_parts(
                            Translation3::from(j.axis.into_inner() * q[ji]),
                            UnitQuaternion::identity(),
                        ),
                        JointKind::Free => unreachable!("free joints only drive the root"),
                    };
                    poses[pl] * link.origin * motion
                }
                _ => self.root_pose(&q) * link.origin,
            };
            poses.push(pose);
        }
        FkResult {
            link_poses: poses,
            clamped,
        }
    }

    pub fn keypoints(&self, q: &JointVector) -> KeypointSet {
        self.keypoints_from_fk(&self.forward_kinematics(q))
    }

    pub fn keypoints_from_fk(&self, fk: &FkResult) -> KeypointSet {
        KeypointSet(
            self.keypoints
                .iter()
                .map(|(li, off)| fk.link_poses[*li] * Point3::from(*off))
                .collect(),
        )
    }

    pub fn surface_points(&self, q: &JointVector, finger_filter: Option<Finger>) -> Vec<SurfacePoint> {
        self.surface_points_from_fk(&self.forward_kinematics(q), finger_filter)
    }

    pub fn surface_points_from_fk(&self, fk: &FkResult, finger_filter: Option<Finger>) -> Vec<SurfacePoint> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(i, _)| finger_filter.is_none_or(|f| self.sample_fingers[*i] == f))
            .map(|(i, _)| self.surface_point(fk, i))
            .collect()
    }

    /// World position of one global sample.
    pub fn sample_position(&self, fk: &FkResult, index: usize) -> Point3<f64> {
        let r = self.samples[index];
        fk.link_poses[r.link] * self.links[r.link].samples[r.local].position
    }

    /// World position and normal of one global sample.
    pub fn surface_point(&self, fk: &FkResult, index: usize) -> SurfacePoint {
        let r = self.samples[index];
        let s = &self.links[r.link].samples[r.local];
        let pose = &fk.link_poses[r.link];
        SurfacePoint {
            index,
            position: pose * s.position,
            normal: Unit::new_normalize(pose.rotation * s.normal.into_inner()),
            finger: self.sample_fingers[index],
        }
    }

    /// World fingertip marker positions, thumb to pinky.
    pub fn fingertip_positions(&self, fk: &FkResult) -> [Option<Point3<f64>>; 5] {
        let mut out = [None; 5];
        for (slot, tip) in out.iter_mut().zip(&self.fingertips) {
            *slot = tip.map(|(li, p)| fk.link_poses[li] * p);
        }
        out
    }

    /// Partial derivatives of a point rigidly attached to `link` with respect
    /// to each articulated ancestor joint, as `(joint index, dp/dq)`.
    pub fn point_jacobian(&self, fk: &FkResult, link: usize, point: &Point3<f64>) -> Vec<(usize, Vector3<f64>)> {
        self.link_ancestors[link]
            .iter()
            .map(|&ji| {
                let (axis, origin) = self.joint_world_axis(fk, ji);
                let d = match self.joints[ji].kind {
                    JointKind::Prismatic => axis,
                    _ => axis.cross(&(point - origin)),
                };
                (ji, d)
            })
            .collect()
    }

    /// Partial derivatives of a direction rigidly attached to `link`.
    pub fn direction_jacobian(&self, fk: &FkResult, link: usize, dir: &Vector3<f64>) -> Vec<(usize, Vector3<f64>)> {
        self.link_ancestors[link]
            .iter()
            .map(|&ji| {
                let d = match self.joints[ji].kind {
                    JointKind::Prismatic => Vector3::zeros(),
                    _ => self.joint_world_axis(fk, ji).0.cross(dir),
                };
                (ji, d)
            })
            .collect()
    }

    /// World axis direction and a point on the axis of an articulated joint.
    fn joint_world_axis(&self, fk: &FkResult, joint: usize) -> (Vector3<f64>, Point3<f64>) {
        let child = self.joint_child_link[joint].expect("ancestor joints always drive a link");
        let pose = &fk.link_poses[child];
        (pose.rotation * self.joints[joint].axis.into_inner(), Point3::from(pose.translation.vector))
    }
}
