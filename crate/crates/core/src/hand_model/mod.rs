//! Robot hand kinematic model: chain description, forward kinematics,
//! task-space keypoints and per-link surface samples.
//!
//! A chain carries exactly six leading "free" joints that place the root
//! link in the world (three translations followed by three rotations,
//! composed in that order, so canonical axes give an intrinsic X-Y-Z Euler
//! parameterisation). All remaining joints are articulated revolute or
//! prismatic joints arranged as a tree below the root link.

mod kinematics;
mod schema;

use std::fmt;
use std::ops::{Deref, DerefMut};
use std::str::FromStr;

use nalgebra::{Isometry3, Point3, Unit, Vector3};
use serde::{Deserialize, Serialize};

pub use kinematics::{FkResult, SurfacePoint};
pub use schema::{
    ChainFile, JointEntry, KeypointEntry, LinkEntry, LoadOptions, OriginEntry, SampleEntry,
};

/// Number of leading free joints that encode the root pose.
pub const DUMMY_DOF: usize = 6;
pub const DEFAULT_DOF: usize = 28;
pub const DEFAULT_KEYPOINTS: usize = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Finger {
    Thumb,
    Index,
    Middle,
    Ring,
    Pinky,
    Palm,
}

impl Finger {
    /// The five digits in thumb-to-pinky order.
    pub const DIGITS: [Finger; 5] = [
        Finger::Thumb,
        Finger::Index,
        Finger::Middle,
        Finger::Ring,
        Finger::Pinky,
    ];

    pub fn digit_index(self) -> Option<usize> {
        Finger::DIGITS.iter().position(|&f| f == self)
    }

    pub fn name(self) -> &'static str {
        match self {
            Finger::Thumb => "thumb",
            Finger::Index => "index",
            Finger::Middle => "middle",
            Finger::Ring => "ring",
            Finger::Pinky => "pinky",
            Finger::Palm => "palm",
        }
    }
}

impl fmt::Display for Finger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Finger {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "thumb" => Ok(Finger::Thumb),
            "index" => Ok(Finger::Index),
            "middle" => Ok(Finger::Middle),
            "ring" => Ok(Finger::Ring),
            "pinky" => Ok(Finger::Pinky),
            "palm" => Ok(Finger::Palm),
            other => Err(format!("unknown finger label `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
    Free,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointSpec {
    pub name: String,
    /// Link the joint hangs from. `None` only for the free root joints.
    pub parent_link: Option<String>,
    pub axis: Unit<Vector3<f64>>,
    pub kind: JointKind,
    pub limits: [f64; 2],
    pub rest_value: f64,
    pub finger: Finger,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceSample {
    pub position: Point3<f64>,
    pub normal: Unit<Vector3<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkFrame {
    pub name: String,
    /// Joint driving this link. `None` for the root link.
    pub parent_joint: Option<String>,
    /// Transform from the parent link frame to this link's joint frame.
    pub origin: Isometry3<f64>,
    pub fingertip: Option<Point3<f64>>,
    pub samples: Vec<SurfaceSample>,
    pub finger: Finger,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeypointDef {
    pub link: String,
    pub offset: Vector3<f64>,
}

/// Location of a surface sample in the chain's flattened sample list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleRef {
    pub link: usize,
    pub local: usize,
}

/// Validated, immutable robot hand description.
#[derive(Clone, Debug)]
pub struct KinematicChain {
    name: String,
    joints: Vec<JointSpec>,
    /// Links in topological order; index 0 is the root.
    links: Vec<LinkFrame>,
    link_parent_joint: Vec<Option<usize>>,
    link_parent_link: Vec<Option<usize>>,
    joint_child_link: Vec<Option<usize>>,
    /// Articulated joints on the path from the root to each link, root first.
    link_ancestors: Vec<Vec<usize>>,
    keypoint_defs: Vec<KeypointDef>,
    keypoints: Vec<(usize, Vector3<f64>)>,
    fingertips: [Option<(usize, Point3<f64>)>; 5],
    samples: Vec<SampleRef>,
    sample_fingers: Vec<Finger>,
}

impl KinematicChain {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[JointSpec] {
        &self.joints
    }

    pub fn links(&self) -> &[LinkFrame] {
        &self.links
    }

    pub fn keypoint_defs(&self) -> &[KeypointDef] {
        &self.keypoint_defs
    }

    pub fn keypoint_count(&self) -> usize {
        self.keypoints.len()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn joint_names(&self) -> Vec<String> {
        self.joints.iter().map(|j| j.name.clone()).collect()
    }

    pub fn lower_bounds(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.limits[0]).collect()
    }

    pub fn upper_bounds(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.limits[1]).collect()
    }

    pub fn rest_pose(&self) -> JointVector {
        JointVector(self.joints.iter().map(|j| j.rest_value).collect())
    }

    /// Indices of the articulated joints labelled with `finger`.
    pub fn finger_dofs(&self, finger: Finger) -> Vec<usize> {
        self.joints
            .iter()
            .enumerate()
            .skip(DUMMY_DOF)
            .filter(|(_, j)| j.finger == finger)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn articulated_dofs(&self) -> std::ops::Range<usize> {
        DUMMY_DOF..self.joints.len()
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    pub fn sample_ref(&self, index: usize) -> SampleRef {
        self.samples[index]
    }

    pub fn sample_finger(&self, index: usize) -> Finger {
        self.sample_fingers[index]
    }

    /// Global sample indices carrying `finger`'s label.
    pub fn finger_samples(&self, finger: Finger) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.sample_fingers[i] == finger)
            .collect()
    }

    pub fn link_parent_link(&self, link: usize) -> Option<usize> {
        self.link_parent_link[link]
    }

    pub fn link_ancestors(&self, link: usize) -> &[usize] {
        &self.link_ancestors[link]
    }

    pub fn joint_child_link(&self, joint: usize) -> Option<usize> {
        self.joint_child_link[joint]
    }

    /// Links joined directly by a joint (parent and child).
    pub fn links_adjacent(&self, a: usize, b: usize) -> bool {
        a == b || self.link_parent_link[a] == Some(b) || self.link_parent_link[b] == Some(a)
    }

    /// Fingertip marker (link index, local offset) for each digit.
    pub fn fingertip(&self, finger: Finger) -> Option<(usize, Point3<f64>)> {
        finger.digit_index().and_then(|i| self.fingertips[i])
    }

    /// Digits that carry a fingertip marker.
    pub fn digits(&self) -> Vec<Finger> {
        Finger::DIGITS
            .into_iter()
            .filter(|f| self.fingertip(*f).is_some())
            .collect()
    }
}

/// Joint configuration: six root DoF followed by the articulated joints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointVector(pub Vec<f64>);

impl JointVector {
    pub fn zeros(n: usize) -> Self {
        JointVector(vec![0.0; n])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn distance_squared(&self, other: &JointVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for JointVector {
    fn from(v: Vec<f64>) -> Self {
        JointVector(v)
    }
}

impl AsRef<[f64]> for JointVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl Deref for JointVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for JointVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// World-frame task-space keypoints.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointSet(pub Vec<Point3<f64>>);

impl Deref for KeypointSet {
    type Target = [Point3<f64>];

    fn deref(&self) -> &[Point3<f64>] {
        &self.0
    }
}
