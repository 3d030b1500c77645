//! Axis-aligned bounding-volume tree over triangles: median split on the
//! longest centroid axis, at most four triangles per leaf.

use nalgebra::{Point3, Vector3};

use super::triangle::{self, Feature, RayHit};

const LEAF_SIZE: usize = 4;

#[derive(Clone, Copy, Debug)]
struct Aabb {
    min: Point3<f64>,
    max: Point3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            min: Point3::from([f64::INFINITY; 3]),
            max: Point3::from([f64::NEG_INFINITY; 3]),
        }
    }

    fn grow(&mut self, p: &Point3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    fn distance_squared(&self, p: &Point3<f64>) -> f64 {
        let mut d = 0.0;
        for i in 0..3 {
            let v = if p[i] < self.min[i] {
                self.min[i] - p[i]
            } else if p[i] > self.max[i] {
                p[i] - self.max[i]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }

    fn ray_hits(&self, origin: &Point3<f64>, inv_dir: &Vector3<f64>) -> bool {
        let mut tmin = 0.0f64;
        let mut tmax = f64::INFINITY;
        for i in 0..3 {
            let t1 = (self.min[i] - origin[i]) * inv_dir[i];
            let t2 = (self.max[i] - origin[i]) * inv_dir[i];
            tmin = tmin.max(t1.min(t2));
            tmax = tmax.min(t1.max(t2));
        }
        tmin <= tmax
    }
}

#[derive(Clone, Debug)]
enum NodeKind {
    Leaf { start: usize, count: usize },
    Inner { left: usize, right: usize },
}

#[derive(Clone, Debug)]
struct Node {
    bounds: Aabb,
    kind: NodeKind,
}

#[derive(Clone, Debug)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

/// Closest triangle hit from a point query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosestHit {
    pub triangle: usize,
    pub point: Point3<f64>,
    pub feature: Feature,
    pub distance_squared: f64,
}

impl Bvh {
    pub fn build(vertices: &[Point3<f64>], triangles: &[[usize; 3]]) -> Self {
        let centroids: Vec<Point3<f64>> = triangles
            .iter()
            .map(|t| Point3::from((vertices[t[0]].coords + vertices[t[1]].coords + vertices[t[2]].coords) / 3.0))
            .collect();
        let mut bvh = Bvh {
            nodes: Vec::new(),
            order: (0..triangles.len()).collect(),
        };
        if !triangles.is_empty() {
            bvh.build_node(vertices, triangles, &centroids, 0, triangles.len());
        }
        bvh
    }

    fn build_node(
        &mut self,
        vertices: &[Point3<f64>],
        triangles: &[[usize; 3]],
        centroids: &[Point3<f64>],
        start: usize,
        end: usize,
    ) -> usize {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &ti in &self.order[start..end] {
            for &vi in &triangles[ti] {
                bounds.grow(&vertices[vi]);
            }
            cbounds.grow(&centroids[ti]);
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            bounds,
            kind: NodeKind::Leaf {
                start,
                count: end - start,
            },
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let extent = cbounds.max - cbounds.min;
        let axis = extent.imax();
        let mid = (start + end) / 2;
        // Ties broken by triangle index so the build is deterministic.
        self.order[start..end].sort_by(|&a, &b| {
            centroids[a][axis]
                .total_cmp(&centroids[b][axis])
                .then(a.cmp(&b))
        });
        let left = self.build_node(vertices, triangles, centroids, start, mid);
        let right = self.build_node(vertices, triangles, centroids, mid, end);
        self.nodes[id].kind = NodeKind::Inner { left, right };
        id
    }

    /// Nearest triangle to `p`. Equal distances resolve to the lowest
    /// triangle index, matching a linear scan.
    pub fn closest(&self, vertices: &[Point3<f64>], triangles: &[[usize; 3]], p: &Point3<f64>) -> Option<ClosestHit> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<ClosestHit> = None;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if let Some(b) = &best {
                if node.bounds.distance_squared(p) > b.distance_squared {
                    continue;
                }
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for &ti in &self.order[start..start + count] {
                        let [a, b, c] = triangles[ti];
                        let (q, feature) = triangle::closest_point(p, &vertices[a], &vertices[b], &vertices[c]);
                        let d2 = (q - p).norm_squared();
                        let better = match &best {
                            None => true,
                            Some(cur) => d2 < cur.distance_squared || (d2 == cur.distance_squared && ti < cur.triangle),
                        };
                        if better {
                            best = Some(ClosestHit {
                                triangle: ti,
                                point: q,
                                feature,
                                distance_squared: d2,
                            });
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    let dl = self.nodes[left].bounds.distance_squared(p);
                    let dr = self.nodes[right].bounds.distance_squared(p);
                    // Push the farther child first so the nearer is visited next.
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        best
    }

    /// Number of triangles crossed by the ray, or `None` if any crossing is
    /// ambiguous.
    pub fn ray_crossings(
        &self,
        vertices: &[Point3<f64>],
        triangles: &[[usize; 3]],
        origin: &Point3<f64>,
        dir: &Vector3<f64>,
    ) -> Option<usize> {
        if self.nodes.is_empty() {
            return Some(0);
        }
        let inv = Vector3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut count = 0;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if !node.bounds.ray_hits(origin, &inv) {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, count: n } => {
                    for &ti in &self.order[start..start + n] {
                        let [a, b, c] = triangles[ti];
                        match triangle::ray_intersect(origin, dir, &vertices[a], &vertices[b], &vertices[c]) {
                            RayHit::Hit(_) => count += 1,
                            RayHit::Miss => {}
                            RayHit::Ambiguous => return None,
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    stack.push(left);
                    stack.push(right);
                }
            }
        }
        Some(count)
    }
}
