//! On-disk chain description (JSON) and its validation.
//!
//! ```json
//! {
//!   "name": "synth3",
//!   "joints": [
//!     {"name": "root_tx", "kind": "free", "axis": [1, 0, 0], "limits": [-0.5, 0.5], "rest": 0, "finger": "palm"},
//!     {"name": "index_mcp", "parent_link": "index_knuckle", "kind": "revolute",
//!      "axis": [1, 0, 0], "limits": [-0.2, 1.6], "rest": 0, "finger": "index"}
//!   ],
//!   "links": [
//!     {"name": "palm", "parent_joint": null, "finger": "palm",
//!      "origin": {"translation": [0, 0, 0], "quat_wxyz": [1, 0, 0, 0]},
//!      "fingertip": null, "samples": [{"p": [0, 0, 0.01], "n": [0, 0, 1]}]}
//!   ],
//!   "keypoints": [{"link": "palm", "offset": [0, 0, 0]}]
//! }
//! ```
//!
//! Unknown fields are rejected.

use std::collections::{HashMap, HashSet, VecDeque};
use std::path::Path;

use log::warn;
use nalgebra::{Isometry3, Point3, Quaternion, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{
    Finger, JointKind, JointSpec, KeypointDef, KinematicChain, LinkFrame, SampleRef,
    SurfaceSample, DEFAULT_DOF, DEFAULT_KEYPOINTS, DUMMY_DOF,
};
use crate::error::{Error, Result};

const AXIS_TOL: f64 = 1e-9;
const NORMAL_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainFile {
    pub name: String,
    pub joints: Vec<JointEntry>,
    pub links: Vec<LinkEntry>,
    pub keypoints: Vec<KeypointEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_link: Option<String>,
    pub kind: JointKind,
    pub axis: [f64; 3],
    pub limits: [f64; 2],
    #[serde(default)]
    pub rest: f64,
    pub finger: Finger,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkEntry {
    pub name: String,
    #[serde(default)]
    pub parent_joint: Option<String>,
    #[serde(default)]
    pub origin: OriginEntry,
    pub finger: Finger,
    #[serde(default)]
    pub fingertip: Option<[f64; 3]>,
    #[serde(default)]
    pub samples: Vec<SampleEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OriginEntry {
    pub translation: [f64; 3],
    pub quat_wxyz: [f64; 4],
}

impl Default for OriginEntry {
    fn default() -> Self {
        OriginEntry {
            translation: [0.0; 3],
            quat_wxyz: [1.0, 0.0, 0.0, 0.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub p: [f64; 3],
    pub n: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointEntry {
    pub link: String,
    pub offset: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoadOptions {
    pub expected_dof: usize,
    pub expected_keypoints: usize,
    /// Accept other DoF / keypoint counts with a warning instead of failing.
    pub allow_count_mismatch: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            expected_dof: DEFAULT_DOF,
            expected_keypoints: DEFAULT_KEYPOINTS,
            allow_count_mismatch: false,
        }
    }
}

fn chain_err(msg: impl Into<String>) -> Error {
    Error::Chain(msg.into())
}

fn unit_axis(v: [f64; 3], what: &str, tol: f64) -> Result<Unit<Vector3<f64>>> {
    let v = Vector3::from(v);
    let n = v.norm();
    if !n.is_finite() || (n - 1.0).abs() > tol {
        return Err(chain_err(format!("{what} is not unit length (norm {n})")));
    }
    Ok(Unit::new_normalize(v))
}

impl KinematicChain {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::load_with(path, LoadOptions::default())
    }

    pub fn load_with(path: impl AsRef<Path>, opts: LoadOptions) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, opts)
            .map_err(|e| match e {
                Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
                other => other,
            })
    }

    pub fn from_json_str(text: &str, opts: LoadOptions) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::parse("chain", "empty file"));
        }
        let file: ChainFile = serde_json::from_str(text).map_err(|e| Error::parse("chain", e))?;
        Self::from_file(file, opts)
    }

    pub fn from_file(file: ChainFile, opts: LoadOptions) -> Result<Self> {
        let mut joint_ids = HashMap::new();
        for (i, j) in file.joints.iter().enumerate() {
            if joint_ids.insert(j.name.as_str(), i).is_some() {
                return Err(chain_err(format!("duplicate joint `{}`", j.name)));
            }
        }
        let mut link_ids = HashMap::new();
        for (i, l) in file.links.iter().enumerate() {
            if link_ids.insert(l.name.as_str(), i).is_some() {
                return Err(chain_err(format!("duplicate link `{}`", l.name)));
            }
        }

        let free_count = file.joints.iter().filter(|j| j.kind == JointKind::Free).count();
        if free_count != DUMMY_DOF
            || file.joints.len() < DUMMY_DOF
            || file.joints[..DUMMY_DOF].iter().any(|j| j.kind != JointKind::Free)
        {
            return Err(chain_err(format!(
                "the first {DUMMY_DOF} joints must be the only free joints (found {free_count} free)"
            )));
        }

        let mut joints = Vec::with_capacity(file.joints.len());
        for j in &file.joints {
            let axis = unit_axis(j.axis, &format!("axis of joint `{}`", j.name), AXIS_TOL)?;
            let [lo, hi] = j.limits;
            if !(lo.is_finite() && hi.is_finite() && j.rest.is_finite()) || lo > j.rest || j.rest > hi {
                return Err(chain_err(format!(
                    "joint `{}` violates lo <= rest <= hi ({lo}, {}, {hi})",
                    j.name, j.rest
                )));
            }
            match (j.kind, &j.parent_link) {
                (JointKind::Free, Some(_)) => {
                    return Err(chain_err(format!("free joint `{}` must not name a parent link", j.name)))
                }
                (JointKind::Free, None) => {}
                (_, None) => {
                    return Err(chain_err(format!("joint `{}` has no parent link", j.name)))
                }
                (_, Some(p)) if !link_ids.contains_key(p.as_str()) => {
                    return Err(chain_err(format!("joint `{}` references unknown link `{p}`", j.name)))
                }
                _ => {}
            }
            joints.push(JointSpec {
                name: j.name.clone(),
                parent_link: j.parent_link.clone(),
                axis,
                kind: j.kind,
                limits: j.limits,
                rest_value: j.rest,
                finger: j.finger,
            });
        }

        // Link -> parent joint -> parent link.
        let mut roots = Vec::new();
        let mut parent_joint_of = vec![None; file.links.len()];
        let mut child_of_joint: Vec<Option<usize>> = vec![None; joints.len()];
        for (li, l) in file.links.iter().enumerate() {
            match &l.parent_joint {
                None => roots.push(li),
                Some(jn) => {
                    let ji = *joint_ids
                        .get(jn.as_str())
                        .ok_or_else(|| chain_err(format!("link `{}` references unknown joint `{jn}`", l.name)))?;
                    if joints[ji].kind == JointKind::Free {
                        return Err(chain_err(format!("link `{}` cannot hang from free joint `{jn}`", l.name)));
                    }
                    if let Some(prev) = child_of_joint[ji] {
                        return Err(chain_err(format!(
                            "joint `{jn}` drives two links (`{}` and `{}`)",
                            file.links[prev].name, l.name
                        )));
                    }
                    if joints[ji].finger != l.finger {
                        return Err(chain_err(format!(
                            "joint `{jn}` is labelled {} but its link `{}` is labelled {}",
                            joints[ji].finger, l.name, l.finger
                        )));
                    }
                    child_of_joint[ji] = Some(li);
                    parent_joint_of[li] = Some(ji);
                }
            }
        }
        if roots.len() != 1 {
            return Err(chain_err(format!("expected exactly one root link, found {}", roots.len())));
        }
        let root = roots[0];

        // Breadth-first from the root; anything unreached sits on a cycle.
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); file.links.len()];
        for (li, pj) in parent_joint_of.iter().enumerate() {
            if let Some(ji) = pj {
                let parent = link_ids[joints[*ji].parent_link.as_deref().unwrap_or_default()];
                children[parent].push(li);
            }
        }
        let mut order = Vec::with_capacity(file.links.len());
        let mut seen = HashSet::new();
        let mut queue = VecDeque::from([root]);
        while let Some(li) = queue.pop_front() {
            if !seen.insert(li) {
                return Err(chain_err("cycle detected in joint tree"));
            }
            order.push(li);
            queue.extend(children[li].iter().copied());
        }
        if order.len() != file.links.len() {
            return Err(chain_err("cycle detected in joint tree"));
        }
        let mut new_index = vec![0usize; file.links.len()];
        for (ni, &oi) in order.iter().enumerate() {
            new_index[oi] = ni;
        }

        let mut links = Vec::with_capacity(order.len());
        let mut link_parent_joint = Vec::with_capacity(order.len());
        let mut link_parent_link = Vec::with_capacity(order.len());
        let mut link_ancestors: Vec<Vec<usize>> = Vec::with_capacity(order.len());
        let mut joint_child_link = vec![None; joints.len()];
        for (ni, &oi) in order.iter().enumerate() {
            let entry = &file.links[oi];
            let q = entry.origin.quat_wxyz;
            let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
            let qn = quat.norm();
            if !qn.is_finite() || (qn - 1.0).abs() > NORMAL_TOL {
                return Err(chain_err(format!("origin quaternion of link `{}` is not unit", entry.name)));
            }
            let origin = Isometry3::from_parts(
                Translation3::from(Vector3::from(entry.origin.translation)),
                UnitQuaternion::from_quaternion(quat),
            );
            let samples = entry
                .samples
                .iter()
                .map(|s| {
                    Ok(SurfaceSample {
                        position: Point3::from(s.p),
                        normal: unit_axis(s.n, &format!("sample normal on link `{}`", entry.name), NORMAL_TOL)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let pj = parent_joint_of[oi];
            let parent_link = pj.map(|ji| new_index[link_ids[joints[ji].parent_link.as_deref().unwrap_or_default()]]);
            let ancestors = match (pj, parent_link) {
                (Some(ji), Some(pl)) => {
                    let mut a = link_ancestors[pl].clone();
                    a.push(ji);
                    a
                }
                _ => Vec::new(),
            };
            if let Some(ji) = pj {
                joint_child_link[ji] = Some(ni);
            }
            link_parent_joint.push(pj);
            link_parent_link.push(parent_link);
            link_ancestors.push(ancestors);
            links.push(LinkFrame {
                name: entry.name.clone(),
                parent_joint: entry.parent_joint.clone(),
                origin,
                fingertip: entry.fingertip.map(Point3::from),
                samples,
                finger: entry.finger,
            });
        }

        let mut fingertips = [None; 5];
        for (li, l) in links.iter().enumerate() {
            if let Some(tip) = l.fingertip {
                let di = l
                    .finger
                    .digit_index()
                    .ok_or_else(|| chain_err(format!("fingertip marker on non-digit link `{}`", l.name)))?;
                if fingertips[di].is_some() {
                    return Err(chain_err(format!("more than one fingertip marker for {}", l.finger)));
                }
                fingertips[di] = Some((li, tip));
            }
        }

        let mut keypoint_defs = Vec::with_capacity(file.keypoints.len());
        let mut keypoints = Vec::with_capacity(file.keypoints.len());
        for k in &file.keypoints {
            let li = links
                .iter()
                .position(|l| l.name == k.link)
                .ok_or_else(|| chain_err(format!("keypoint references unknown link `{}`", k.link)))?;
            keypoint_defs.push(KeypointDef {
                link: k.link.clone(),
                offset: Vector3::from(k.offset),
            });
            keypoints.push((li, Vector3::from(k.offset)));
        }

        check_count("degrees of freedom", joints.len(), opts.expected_dof, opts.allow_count_mismatch)?;
        check_count("keypoints", keypoints.len(), opts.expected_keypoints, opts.allow_count_mismatch)?;

        let mut samples = Vec::new();
        let mut sample_fingers = Vec::new();
        for (li, l) in links.iter().enumerate() {
            for local in 0..l.samples.len() {
                samples.push(SampleRef { link: li, local });
                sample_fingers.push(l.finger);
            }
        }

        Ok(KinematicChain {
            name: file.name,
            joints,
            links,
            link_parent_joint,
            link_parent_link,
            joint_child_link,
            link_ancestors,
            keypoint_defs,
            keypoints,
            fingertips,
            samples,
            sample_fingers,
        })
    }

    /// Serialisable description equivalent to this chain.
    pub fn to_file(&self) -> ChainFile {
        ChainFile {
            name: self.name.clone(),
            joints: self
                .joints
                .iter()
                .map(|j| JointEntry {
                    name: j.name.clone(),
                    parent_link: j.parent_link.clone(),
                    kind: j.kind,
                    axis: (*j.axis).into(),
                    limits: j.limits,
                    rest: j.rest_value,
                    finger: j.finger,
                })
                .collect(),
            links: self
                .links
                .iter()
                .map(|l| {
                    let q = l.origin.rotation.quaternion();
                    LinkEntry {
                        name: l.name.clone(),
                        parent_joint: l.parent_joint.clone(),
                        origin: OriginEntry {
                            translation: l.origin.translation.vector.into(),
                            quat_wxyz: [q.w, q.i, q.j, q.k],
                        },
                        finger: l.finger,
                        fingertip: l.fingertip.map(|p| p.coords.into()),
                        samples: l
                            .samples
                            .iter()
                            .map(|s| SampleEntry {
                                p: s.position.coords.into(),
                                n: (*s.normal).into(),
                            })
                            .collect(),
                    }
                })
                .collect(),
            keypoints: self
                .keypoint_defs
                .iter()
                .map(|k| KeypointEntry {
                    link: k.link.clone(),
                    offset: k.offset.into(),
                })
                .collect(),
        }
    }

    pub fn parent_joint_index(&self, link: usize) -> Option<usize> {
        self.link_parent_joint[link]
    }
}

fn check_count(what: &str, actual: usize, expected: usize, allow: bool) -> Result<()> {
    if actual == expected {
        return Ok(());
    }
    if allow {
        warn!("chain has {actual} {what}, expected {expected}; accepted by override");
        Ok(())
    } else {
        Err(chain_err(format!("chain has {actual} {what}, expected {expected}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synth3_chain;

    fn load(file: ChainFile) -> Result<KinematicChain> {
        KinematicChain::from_file(file, LoadOptions::default())
    }

    #[test]
    fn synth3_counts() {
        let chain = load(synth3_chain()).unwrap();
        assert_eq!(chain.dof(), 28);
        assert_eq!(chain.keypoint_count(), 13);
        assert_eq!(chain.digits(), vec![Finger::Thumb, Finger::Index, Finger::Middle]);
    }

    #[test]
    fn duplicate_joint_rejected() {
        let mut file = synth3_chain();
        let dup = file.joints[7].clone();
        file.joints.push(dup);
        let err = load(file).unwrap_err().to_string();
        assert!(err.contains("duplicate joint"), "{err}");
    }

    #[test]
    fn empty_file_is_parse_error() {
        let err = KinematicChain::from_json_str("", LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        let err = KinematicChain::from_json_str("   \n", LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn unknown_field_rejected() {
        let mut v = serde_json::to_value(synth3_chain()).unwrap();
        v["joints"][0]["mass"] = serde_json::json!(1.0);
        let err = KinematicChain::from_json_str(&v.to_string(), LoadOptions::default()).unwrap_err();
        assert!(err.to_string().contains("mass"), "{err}");
    }

    #[test]
    fn cycle_rejected() {
        let mut file = synth3_chain();
        // Re-hang the index knuckle from its own distal link.
        let j = file.joints.iter_mut().find(|j| j.name == "index_abd").unwrap();
        j.parent_link = Some("index_distal".into());
        let err = load(file).unwrap_err().to_string();
        assert!(err.contains("cycle"), "{err}");
    }

    #[test]
    fn dof_count_enforced_unless_overridden() {
        let mut file = synth3_chain();
        file.joints.pop();
        let err = load(file.clone()).unwrap_err().to_string();
        assert!(err.contains("degrees of freedom"), "{err}");
        let opts = LoadOptions {
            allow_count_mismatch: true,
            ..LoadOptions::default()
        };
        let chain = KinematicChain::from_file(file, opts).unwrap();
        assert_eq!(chain.dof(), 27);
    }

    #[test]
    fn non_unit_axis_rejected() {
        let mut file = synth3_chain();
        file.joints[8].axis = [1.0, 1.0, 0.0];
        assert!(load(file).unwrap_err().to_string().contains("unit"));
    }

    #[test]
    fn rest_outside_limits_rejected() {
        let mut file = synth3_chain();
        file.joints[9].rest = 5.0;
        assert!(load(file).unwrap_err().to_string().contains("lo <= rest <= hi"));
    }

    #[test]
    fn finger_label_mismatch_rejected() {
        let mut file = synth3_chain();
        let j = file.joints.iter_mut().find(|j| j.name == "index_mcp").unwrap();
        j.finger = Finger::Middle;
        assert!(load(file).is_err());
    }

    #[test]
    fn round_trip_through_file() {
        let chain = load(synth3_chain()).unwrap();
        let again = load(chain.to_file()).unwrap();
        let q = chain.rest_pose();
        assert_eq!(chain.keypoints(&q), again.keypoints(&q));
    }
}
