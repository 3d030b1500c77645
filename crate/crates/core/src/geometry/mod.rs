//! Object meshes: OBJ loading, uniform scaling, nearest-surface queries,
//! signed distance and point-cloud nearest neighbours.

mod bvh;
pub mod triangle;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use log::debug;
use nalgebra::{Point3, Unit, Vector3};
use serde::Serialize;

pub use bvh::ClosestHit;
use bvh::Bvh;
use triangle::Feature;

use crate::error::{Error, Result};

/// Fixed, non-axis-aligned ray directions for parity voting.
const RAY_DIRS: [[f64; 3]; 3] = [
    [0.5773502691896258, 0.5773502691896258, 0.5773502691896258],
    [-0.3345653031794291, 0.8944271909999159, 0.2965267283733958],
    [0.2672612419124244, -0.5345224838248488, -0.8017837257372732],
];

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct MeshStats {
    pub vertices: usize,
    pub triangles: usize,
    pub watertight: bool,
    pub degenerate_dropped: usize,
    pub unreferenced_pruned: usize,
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceQueryResult {
    pub closest_point: Point3<f64>,
    pub distance: f64,
    /// Negative inside. Equal to `distance` when the sign is unavailable.
    pub signed_distance: f64,
    /// Angle-weighted pseudonormal of the feature holding the closest point.
    pub normal: Unit<Vector3<f64>>,
    /// Mesh vertex nearest to the query point.
    pub vertex_index: usize,
    pub triangle: usize,
    /// False when the mesh is not watertight and the sign was not computed.
    pub sign_valid: bool,
}

impl SurfaceQueryResult {
    /// Gradient of the signed distance with respect to the query point.
    pub fn gradient(&self, query: &Point3<f64>) -> Vector3<f64> {
        let d = query - self.closest_point;
        let n = d.norm();
        if n > 1e-12 {
            d * (self.signed_distance.signum() / n)
        } else {
            self.normal.into_inner()
        }
    }
}

/// Immutable triangle mesh with a BVH over faces and a k-d tree over vertices.
#[derive(Clone)]
pub struct TriangleMesh {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[usize; 3]>,
    face_normals: Vec<Unit<Vector3<f64>>>,
    vertex_normals: Vec<Unit<Vector3<f64>>>,
    edge_normals: HashMap<(usize, usize), Unit<Vector3<f64>>>,
    watertight: bool,
    stats: MeshStats,
    bvh: Bvh,
    vertex_tree: ImmutableKdTree<f64, 3>,
    bound_center: Point3<f64>,
    bound_radius: f64,
}

impl std::fmt::Debug for TriangleMesh {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TriangleMesh").field("stats", &self.stats).finish()
    }
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl TriangleMesh {
    /// Builds a mesh, dropping zero-area triangles and unreferenced vertices.
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        for t in &triangles {
            if t.iter().any(|&i| i >= vertices.len()) {
                return Err(Error::Mesh(format!("triangle {t:?} indexes past {} vertices", vertices.len())));
            }
        }
        if vertices.iter().any(|v| !v.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::Mesh("non-finite vertex coordinate".into()));
        }
        let before = triangles.len();
        let triangles: Vec<[usize; 3]> = triangles
            .into_iter()
            .filter(|t| {
                let n = (vertices[t[1]] - vertices[t[0]]).cross(&(vertices[t[2]] - vertices[t[0]]));
                t[0] != t[1] && t[1] != t[2] && t[0] != t[2] && n.norm() > 0.0
            })
            .collect();
        let degenerate_dropped = before - triangles.len();
        if triangles.is_empty() {
            return Err(Error::Mesh("mesh has no non-degenerate triangles".into()));
        }

        let mut used = vec![false; vertices.len()];
        for t in &triangles {
            for &vi in t {
                used[vi] = true;
            }
        }
        let referenced: Vec<usize> = (0..vertices.len()).filter(|&i| used[i]).collect();
        let mut remap = vec![usize::MAX; vertices.len()];
        for (ni, &oi) in referenced.iter().enumerate() {
            remap[oi] = ni;
        }
        let unreferenced_pruned = vertices.len() - referenced.len();
        let vertices: Vec<Point3<f64>> = referenced.iter().map(|&i| vertices[i]).collect();
        let triangles: Vec<[usize; 3]> = triangles.iter().map(|t| t.map(|i| remap[i])).collect();

        if degenerate_dropped > 0 || unreferenced_pruned > 0 {
            debug!("mesh cleanup: dropped {degenerate_dropped} degenerate triangles, pruned {unreferenced_pruned} vertices");
        }
        Ok(Self::assemble(vertices, triangles, degenerate_dropped, unreferenced_pruned))
    }

    fn assemble(
        vertices: Vec<Point3<f64>>,
        triangles: Vec<[usize; 3]>,
        degenerate_dropped: usize,
        unreferenced_pruned: usize,
    ) -> Self {
        let face_normals: Vec<Unit<Vector3<f64>>> = triangles
            .iter()
            .map(|t| {
                Unit::new_normalize((vertices[t[1]] - vertices[t[0]]).cross(&(vertices[t[2]] - vertices[t[0]])))
            })
            .collect();

        let mut vsum = vec![Vector3::zeros(); vertices.len()];
        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        let mut esum: HashMap<(usize, usize), Vector3<f64>> = HashMap::new();
        for (t, n) in triangles.iter().zip(&face_normals) {
            for k in 0..3 {
                let (i, j, l) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
                let e1 = (vertices[j] - vertices[i]).normalize();
                let e2 = (vertices[l] - vertices[i]).normalize();
                let angle = e1.dot(&e2).clamp(-1.0, 1.0).acos();
                vsum[i] += n.into_inner() * angle;
                let key = edge_key(i, j);
                *edge_count.entry(key).or_default() += 1;
                *esum.entry(key).or_insert_with(Vector3::zeros) += n.into_inner();
            }
        }
        let vertex_normals = vsum
            .into_iter()
            .map(|v| Unit::try_new(v, 1e-300).unwrap_or(Vector3::z_axis()))
            .collect();
        let edge_normals = esum
            .into_iter()
            .map(|(k, v)| (k, Unit::try_new(v, 1e-300).unwrap_or(Vector3::z_axis())))
            .collect();
        let watertight = edge_count.values().all(|&c| c == 2);

        let mut bmin = Point3::from([f64::INFINITY; 3]);
        let mut bmax = Point3::from([f64::NEG_INFINITY; 3]);
        for v in &vertices {
            bmin = bmin.inf(v);
            bmax = bmax.sup(v);
        }
        let stats = MeshStats {
            vertices: vertices.len(),
            triangles: triangles.len(),
            watertight,
            degenerate_dropped,
            unreferenced_pruned,
            bbox_min: bmin.coords.into(),
            bbox_max: bmax.coords.into(),
        };
        let bound_center = nalgebra::center(&bmin, &bmax);
        let bound_radius = vertices.iter().map(|v| (v - bound_center).norm()).fold(0.0, f64::max);
        let bvh = Bvh::build(&vertices, &triangles);
        let pts: Vec<[f64; 3]> = vertices.iter().map(|v| v.coords.into()).collect();
        let vertex_tree = ImmutableKdTree::new_from_slice(&pts);
        TriangleMesh {
            vertices,
            triangles,
            face_normals,
            vertex_normals,
            edge_normals,
            watertight,
            stats,
            bvh,
            vertex_tree,
            bound_center,
            bound_radius,
        }
    }

    pub fn load_obj(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_obj(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })
    }

    /// Parses `v` and `f` records; everything else is ignored.
    pub fn parse_obj(text: &str) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let ctx = || format!("obj line {}", lineno + 1);
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("v") => {
                    let coords: Vec<f64> = parts
                        .take(3)
                        .map(|s| s.parse::<f64>().map_err(|e| Error::parse(ctx(), e)))
                        .collect::<Result<_>>()?;
                    if coords.len() != 3 {
                        return Err(Error::parse(ctx(), "vertex needs three coordinates"));
                    }
                    vertices.push(Point3::new(coords[0], coords[1], coords[2]));
                }
                Some("f") => {
                    let idx: Vec<usize> = parts
                        .map(|tok| {
                            let first = tok.split('/').next().unwrap_or_default();
                            let i: i64 = first.parse().map_err(|e| Error::parse(ctx(), e))?;
                            let n = vertices.len() as i64;
                            let resolved = if i > 0 { i - 1 } else { n + i };
                            if i == 0 || resolved < 0 || resolved >= n {
                                return Err(Error::parse(ctx(), format!("face index {i} out of range")));
                            }
                            Ok(resolved as usize)
                        })
                        .collect::<Result<_>>()?;
                    if idx.len() != 3 {
                        return Err(Error::parse(ctx(), format!("only triangles are supported, got {} corners", idx.len())));
                    }
                    triangles.push([idx[0], idx[1], idx[2]]);
                }
                _ => {}
            }
        }
        if triangles.is_empty() {
            return Err(Error::Mesh("mesh has no faces".into()));
        }
        Self::new(vertices, triangles)
    }

    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        out
    }

    /// Uniform scaling about the mesh origin.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Config(format!("scale factor must be positive, got {s}")));
        }
        let vertices = self.vertices.iter().map(|v| Point3::from(v.coords * s)).collect();
        let mut out = Self::assemble(
            vertices,
            self.triangles.clone(),
            self.stats.degenerate_dropped,
            self.stats.unreferenced_pruned,
        );
        // Uniform scaling preserves directions; keep them bit-identical.
        out.face_normals = self.face_normals.clone();
        out.vertex_normals = self.vertex_normals.clone();
        out.edge_normals = self.edge_normals.clone();
        Ok(out)
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn vertex_normals(&self) -> &[Unit<Vector3<f64>>] {
        &self.vertex_normals
    }

    pub fn face_normal(&self, triangle: usize) -> Unit<Vector3<f64>> {
        self.face_normals[triangle]
    }

    pub fn is_watertight(&self) -> bool {
        self.watertight
    }

    pub fn stats(&self) -> &MeshStats {
        &self.stats
    }

    pub fn centroid(&self) -> Point3<f64> {
        let sum: Vector3<f64> = self.vertices.iter().map(|v| v.coords).sum();
        Point3::from(sum / self.vertices.len() as f64)
    }

    /// Closest surface triangle via the BVH.
    pub fn closest(&self, p: &Point3<f64>) -> ClosestHit {
        self.bvh
            .closest(&self.vertices, &self.triangles, p)
            .expect("meshes are never empty")
    }

    /// Index of the mesh vertex nearest to `p`.
    pub fn nearest_vertex(&self, p: &Point3<f64>) -> usize {
        self.vertex_tree
            .nearest_one::<SquaredEuclidean>(&p.coords.into())
            .item as usize
    }

    fn feature_normal(&self, hit: &ClosestHit) -> Unit<Vector3<f64>> {
        let t = self.triangles[hit.triangle];
        match hit.feature {
            Feature::Face => self.face_normals[hit.triangle],
            Feature::Vertex(k) => self.vertex_normals[t[k as usize]],
            Feature::Edge(k) => {
                let k = k as usize;
                self.edge_normals[&edge_key(t[k], t[(k + 1) % 3])]
            }
        }
    }

    /// Whether `p` lies inside, from ray-parity voting with a pseudonormal
    /// fallback when every ray is ambiguous or the vote ties.
    fn inside(&self, p: &Point3<f64>, hit: &ClosestHit, normal: &Unit<Vector3<f64>>) -> bool {
        let mut inside_votes = 0;
        let mut outside_votes = 0;
        for d in RAY_DIRS {
            match self.bvh.ray_crossings(&self.vertices, &self.triangles, p, &Vector3::from(d)) {
                Some(n) if n % 2 == 1 => inside_votes += 1,
                Some(_) => outside_votes += 1,
                None => {}
            }
        }
        if inside_votes != outside_votes {
            inside_votes > outside_votes
        } else {
            (p - hit.point).dot(normal) < 0.0
        }
    }

    pub fn nearest_point(&self, p: &Point3<f64>) -> SurfaceQueryResult {
        let hit = self.closest(p);
        let distance = hit.distance_squared.sqrt();
        let normal = self.feature_normal(&hit);
        let signed_distance = if !self.watertight || distance == 0.0 {
            distance
        } else if self.inside(p, &hit, &normal) {
            -distance
        } else {
            distance
        };
        SurfaceQueryResult {
            closest_point: hit.point,
            distance,
            signed_distance,
            normal,
            vertex_index: self.nearest_vertex(p),
            triangle: hit.triangle,
            sign_valid: self.watertight,
        }
    }

    /// Signed distance (negative inside). Unsigned for open meshes; see
    /// [`TriangleMesh::signed_distance_checked`].
    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        self.signed_distance_checked(p).0
    }

    /// Signed distance plus whether the sign is meaningful.
    pub fn signed_distance_checked(&self, p: &Point3<f64>) -> (f64, bool) {
        let hit = self.closest(p);
        let distance = hit.distance_squared.sqrt();
        if !self.watertight {
            return (distance, false);
        }
        if distance == 0.0 {
            return (0.0, true);
        }
        let normal = self.feature_normal(&hit);
        (if self.inside(p, &hit, &normal) { -distance } else { distance }, true)
    }

    /// Signed distance and its gradient, or `None` when `p` is provably
    /// further than `margin` outside the surface. Cheaper than
    /// [`TriangleMesh::nearest_point`] for points well clear of the mesh.
    pub fn signed_within(&self, p: &Point3<f64>, margin: f64) -> Option<(f64, Vector3<f64>)> {
        if (p - self.bound_center).norm() > self.bound_radius + margin {
            return None;
        }
        let hit = self.closest(p);
        let distance = hit.distance_squared.sqrt();
        let normal = self.feature_normal(&hit);
        let signed = if !self.watertight || distance == 0.0 || !self.inside(p, &hit, &normal) {
            distance
        } else {
            -distance
        };
        if signed > margin {
            return None;
        }
        let d = p - hit.point;
        let grad = if distance > 1e-12 { d * (signed.signum() / distance) } else { normal.into_inner() };
        Some((signed, grad))
    }

    /// Human-readable summary of [`MeshStats`] as pretty JSON.
    pub fn report(&self) -> String {
        serde_json::to_string_pretty(&self.stats).unwrap_or_default()
    }
}
