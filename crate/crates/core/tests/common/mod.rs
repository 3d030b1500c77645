#![allow(dead_code)]

use std::f64::consts::PI;

use dexsynth::geometry::TriangleMesh;
use dexsynth::hand_model::{KinematicChain, LoadOptions, SampleEntry};
use dexsynth::synth::synth3_chain;
use nalgebra::Point3;

// Oracle: project onto the triangle plane, keep the projection if its
// barycentric coordinates are inside, otherwise take the best of the three
// clamped edge projections.
fn segment_distance(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

fn oracle_triangle_distance(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> f64 {
    let n = (b - a).cross(&(c - a));
    let n2 = n.norm_squared();
    let proj = p - n * ((p - a).dot(&n) / n2);
    let l1 = (c - b).cross(&(proj - b)).dot(&n) / n2;
    let l2 = (a - c).cross(&(proj - c)).dot(&n) / n2;
    let l3 = 1.0 - l1 - l2;
    if l1 >= 0.0 && l2 >= 0.0 && l3 >= 0.0 {
        (p - proj).norm()
    } else {
        segment_distance(p, a, b).min(segment_distance(p, b, c)).min(segment_distance(p, c, a))
    }
}

pub fn oracle_distance(mesh: &TriangleMesh, p: &Point3<f64>) -> f64 {
    let v = mesh.vertices();
    mesh.triangles()
        .iter()
        .map(|t| oracle_triangle_distance(p, &v[t[0]], &v[t[1]], &v[t[2]]))
        .fold(f64::INFINITY, f64::min)
}

/// Generalised winding number: about 1 inside a closed outward-wound mesh,
/// about 0 outside.
pub fn winding_number(mesh: &TriangleMesh, p: &Point3<f64>) -> f64 {
    let v = mesh.vertices();
    let mut total = 0.0;
    for t in mesh.triangles() {
        let (a, b, c) = (v[t[0]] - p, v[t[1]] - p, v[t[2]] - p);
        let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
        let num = a.dot(&b.cross(&c));
        let den = la * lb * lc + a.dot(&b) * lc + a.dot(&c) * lb + b.dot(&c) * la;
        total += 2.0 * num.atan2(den);
    }
    total / (4.0 * PI)
}

pub fn oracle_signed_distance(mesh: &TriangleMesh, p: &Point3<f64>) -> f64 {
    let d = oracle_distance(mesh, p);
    if winding_number(mesh, p) > 0.5 {
        -d
    } else {
        d
    }
}

/// Axis-aligned box with outward winding.
pub fn box_mesh(min: [f64; 3], max: [f64; 3]) -> TriangleMesh {
    let v: Vec<Point3<f64>> = (0..8)
        .map(|i| {
            Point3::new(
                if i & 1 == 0 { min[0] } else { max[0] },
                if i & 2 == 0 { min[1] } else { max[1] },
                if i & 4 == 0 { min[2] } else { max[2] },
            )
        })
        .collect();
    let t = vec![
        [0, 2, 3], [0, 3, 1],
        [4, 5, 7], [4, 7, 6],
        [0, 1, 5], [0, 5, 4],
        [2, 6, 7], [2, 7, 3],
        [0, 4, 6], [0, 6, 2],
        [1, 3, 7], [1, 7, 5],
    ];
    TriangleMesh::new(v, t).unwrap()
}

/// synth3 with every sample removed except the ones given per link name.
pub fn sparse_chain(keep: &[(&str, [f64; 3])]) -> KinematicChain {
    let mut file = synth3_chain();
    for link in &mut file.links {
        link.samples = keep
            .iter()
            .filter(|(name, _)| *name == link.name)
            .map(|(_, p)| SampleEntry { p: *p, n: [0.0, 0.0, 1.0] })
            .collect();
    }
    KinematicChain::from_file(file, LoadOptions::default()).unwrap()
}

