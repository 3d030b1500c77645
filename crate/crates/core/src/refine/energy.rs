use nalgebra::{Point3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;
use crate::hand_model::{FkResult, Finger, JointVector, KinematicChain, DUMMY_DOF};

/// A hand sample pulled towards an object anchor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Target {
    /// Global hand surface sample index.
    pub point: usize,
    pub anchor: Point3<f64>,
    /// Outward object normal at the anchor.
    pub normal: Unit<Vector3<f64>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalConvention {
    /// Compare the hand normal with the flipped object normal, so flush
    /// contact scores zero.
    #[default]
    Facing,
    /// Compare against the object normal as given.
    Literal,
}

impl NormalConvention {
    fn reference(self, n: &Unit<Vector3<f64>>) -> Vector3<f64> {
        match self {
            NormalConvention::Facing => -n.into_inner(),
            NormalConvention::Literal => n.into_inner(),
        }
    }
}

fn add_chain_rule(grad: &mut [f64], jac: &[(usize, Vector3<f64>)], coeff: &Vector3<f64>) {
    for (j, d) in jac {
        grad[*j] += coeff.dot(d);
    }
}

fn sample_world(chain: &KinematicChain, fk: &FkResult, index: usize) -> (usize, Point3<f64>) {
    (chain.sample_ref(index).link, chain.sample_position(fk, index))
}

pub(crate) fn dis_fk(chain: &KinematicChain, fk: &FkResult, targets: &[Target], grad: Option<&mut [f64]>) -> f64 {
    let mut e = 0.0;
    let mut grad = grad;
    for t in targets {
        let (link, p) = sample_world(chain, fk, t.point);
        let r = p - t.anchor;
        e += r.norm_squared();
        if let Some(g) = grad.as_deref_mut() {
            add_chain_rule(g, &chain.point_jacobian(fk, link, &p), &(2.0 * r));
        }
    }
    e
}

pub(crate) fn pen_fk(
    chain: &KinematicChain,
    fk: &FkResult,
    mesh: &TriangleMesh,
    clearance: f64,
    samples: impl Iterator<Item = usize>,
    grad: Option<&mut [f64]>,
) -> f64 {
    let mut e = 0.0;
    let mut grad = grad;
    for i in samples {
        let (link, p) = sample_world(chain, fk, i);
        let Some((sd, dd)) = mesh.signed_within(&p, clearance) else { continue };
        let h = clearance - sd;
        if h <= 0.0 {
            continue;
        }
        e += h * h;
        if let Some(g) = grad.as_deref_mut() {
            add_chain_rule(g, &chain.point_jacobian(fk, link, &p), &(-2.0 * h * dd));
        }
    }
    e
}

pub(crate) fn align_fk(
    chain: &KinematicChain,
    fk: &FkResult,
    targets: &[Target],
    convention: NormalConvention,
    grad: Option<&mut [f64]>,
) -> f64 {
    let mut e = 0.0;
    let mut grad = grad;
    for t in targets {
        let sp = chain.surface_point(fk, t.point);
        let m = convention.reference(&t.normal);
        let r = 1.0 - sp.normal.dot(&m);
        e += r * r;
        if let Some(g) = grad.as_deref_mut() {
            let link = chain.sample_ref(t.point).link;
            add_chain_rule(g, &chain.direction_jacobian(fk, link, &sp.normal), &(-2.0 * r * m));
        }
    }
    e
}

pub(crate) fn spen_fk(chain: &KinematicChain, fk: &FkResult, active: Finger, delta: f64, grad: Option<&mut [f64]>) -> f64 {
    let n = chain.sample_count();
    let links = chain.links().len();
    let world: Vec<(usize, Point3<f64>)> = (0..n).map(|i| sample_world(chain, fk, i)).collect();
    // Per-link bounding spheres let whole link pairs be skipped.
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); links];
    for (i, (l, _)) in world.iter().enumerate() {
        members[*l].push(i);
    }
    let spheres: Vec<(Point3<f64>, f64)> = members
        .iter()
        .map(|m| {
            if m.is_empty() {
                return (Point3::origin(), f64::NEG_INFINITY);
            }
            let c = Point3::from(m.iter().map(|&i| world[i].1.coords).sum::<Vector3<f64>>() / m.len() as f64);
            (c, m.iter().map(|&i| (world[i].1 - c).norm()).fold(0.0, f64::max))
        })
        .collect();
    let delta2 = delta * delta;
    let mut e = 0.0;
    let mut grad = grad;
    for la in 0..links {
        let Some(&first) = members[la].first() else { continue };
        if chain.sample_finger(first) != active {
            continue;
        }
        for lb in 0..links {
            let Some(&other) = members[lb].first() else { continue };
            if chain.sample_finger(other) == active || chain.links_adjacent(la, lb) {
                continue;
            }
            let (ca, ra) = spheres[la];
            let (cb, rb) = spheres[lb];
            if (ca - cb).norm() >= ra + rb + delta {
                continue;
            }
            for &i in &members[la] {
                let pa = world[i].1;
                for &j in &members[lb] {
                    let pb = world[j].1;
                    let r = pa - pb;
                    let d2 = r.norm_squared();
                    if d2 >= delta2 {
                        continue;
                    }
                    let d = d2.sqrt();
                    e += delta - d;
                    if let (Some(g), true) = (grad.as_deref_mut(), d > 0.0) {
                        let u = r / d;
                        add_chain_rule(g, &chain.point_jacobian(fk, la, &pa), &(-u));
                        add_chain_rule(g, &chain.point_jacobian(fk, lb, &pb), &u);
                    }
                }
            }
        }
    }
    e
}

fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Dimension { what, expected, actual });
    }
    Ok(())
}

/// Sum of squared distances between hand samples and their anchors.
pub fn e_dis(chain: &KinematicChain, q: &JointVector, targets: &[Target]) -> f64 {
    dis_fk(chain, &chain.forward_kinematics(q), targets, None)
}

/// Squared hinge on `clearance - signed distance` over every hand sample.
pub fn e_pen(chain: &KinematicChain, q: &JointVector, mesh: &TriangleMesh, clearance: f64) -> f64 {
    pen_fk(chain, &chain.forward_kinematics(q), mesh, clearance, 0..chain.sample_count(), None)
}

/// Squared normal misalignment over the targets.
pub fn e_align(chain: &KinematicChain, q: &JointVector, targets: &[Target], convention: NormalConvention) -> f64 {
    align_fk(chain, &chain.forward_kinematics(q), targets, convention, None)
}

/// Linear hinge on the distance between `active` samples and every other
/// non-adjacent sample closer than `delta`.
pub fn e_spen(chain: &KinematicChain, q: &JointVector, active: Finger, delta: f64) -> f64 {
    spen_fk(chain, &chain.forward_kinematics(q), active, delta, None)
}

/// Squared deviation of the articulated joints from `q_init`.
pub fn e_joints(q: &JointVector, q_init: &JointVector) -> Result<f64> {
    check_len("joint vectors", q_init.len(), q.len())?;
    Ok(q.iter()
        .zip(q_init.iter())
        .skip(DUMMY_DOF)
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Gradients of the same terms with respect to every DoF. Root entries are
/// zero: the root pose is not an optimisation variable.
pub fn grad_e_dis(chain: &KinematicChain, q: &JointVector, targets: &[Target]) -> Vec<f64> {
    let mut g = vec![0.0; chain.dof()];
    dis_fk(chain, &chain.forward_kinematics(q), targets, Some(&mut g));
    g
}

pub fn grad_e_pen(chain: &KinematicChain, q: &JointVector, mesh: &TriangleMesh, clearance: f64) -> Vec<f64> {
    let mut g = vec![0.0; chain.dof()];
    pen_fk(chain, &chain.forward_kinematics(q), mesh, clearance, 0..chain.sample_count(), Some(&mut g));
    g
}

pub fn grad_e_align(chain: &KinematicChain, q: &JointVector, targets: &[Target], convention: NormalConvention) -> Vec<f64> {
    let mut g = vec![0.0; chain.dof()];
    align_fk(chain, &chain.forward_kinematics(q), targets, convention, Some(&mut g));
    g
}

pub fn grad_e_spen(chain: &KinematicChain, q: &JointVector, active: Finger, delta: f64) -> Vec<f64> {
    let mut g = vec![0.0; chain.dof()];
    spen_fk(chain, &chain.forward_kinematics(q), active, delta, Some(&mut g));
    g
}

pub fn grad_e_joints(q: &JointVector, q_init: &JointVector) -> Result<Vec<f64>> {
    check_len("joint vectors", q_init.len(), q.len())?;
    Ok(q.iter()
        .zip(q_init.iter())
        .enumerate()
        .map(|(i, (a, b))| if i < DUMMY_DOF { 0.0 } else { 2.0 * (a - b) })
        .collect())
}
