use nalgebra::{Point3, Vector3};

/// Feature of a triangle on which a closest point lies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feature {
    Vertex(u8),
    /// Edge between local corners `(i, (i + 1) % 3)`.
    Edge(u8),
    Face,
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision
/// Detection, 5.1.5) together with the feature it lies on.
pub fn closest_point(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> (Point3<f64>, Feature) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, Feature::Vertex(0));
    }

    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, Feature::Vertex(1));
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, Feature::Edge(0));
    }

    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, Feature::Vertex(2));
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, Feature::Edge(2));
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, Feature::Edge(1));
    }

    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, Feature::Face)
}

/// Outcome of a ray/triangle test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RayHit {
    Miss,
    Hit(f64),
    /// The ray passes within tolerance of an edge or vertex, or grazes the
    /// plane; its parity count cannot be trusted.
    Ambiguous,
}

/// Möller–Trumbore intersection for rays starting at `origin` (t > 0).
pub fn ray_intersect(
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> RayHit {
    const EDGE_EPS: f64 = 1e-10;
    let e1 = b - a;
    let e2 = c - a;
    let h = dir.cross(&e2);
    let det = e1.dot(&h);
    let scale = e1.norm() * e2.norm() * dir.norm();
    if det.abs() <= 1e-12 * scale {
        return RayHit::Miss;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(&h) * inv;
    let qv = s.cross(&e1);
    let v = dir.dot(&qv) * inv;
    let t = e2.dot(&qv) * inv;
    if t <= 0.0 {
        return RayHit::Miss;
    }
    let w = 1.0 - u - v;
    if u < -EDGE_EPS || v < -EDGE_EPS || w < -EDGE_EPS {
        return RayHit::Miss;
    }
    if u < EDGE_EPS || v < EDGE_EPS || w < EDGE_EPS {
        return RayHit::Ambiguous;
    }
    RayHit::Hit(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regions() {
        let a = Point3::new(0.0, 0.0, 0.0);
        let b = Point3::new(1.0, 0.0, 0.0);
        let c = Point3::new(0.0, 1.0, 0.0);
        let (q, f) = closest_point(&Point3::new(0.2, 0.2, 1.0), &a, &b, &c);
        assert_eq!(f, Feature::Face);
        assert!((q - Point3::new(0.2, 0.2, 0.0)).norm() < 1e-15);
        let (q, f) = closest_point(&Point3::new(-1.0, -1.0, 0.0), &a, &b, &c);
        assert_eq!((q, f), (a, Feature::Vertex(0)));
        let (q, f) = closest_point(&Point3::new(0.5, -1.0, 0.0), &a, &b, &c);
        assert_eq!(f, Feature::Edge(0));
        assert!((q - Point3::new(0.5, 0.0, 0.0)).norm() < 1e-15);
        let (_, f) = closest_point(&Point3::new(1.0, 1.0, 0.0), &a, &b, &c);
        assert_eq!(f, Feature::Edge(1));
    }

    #[test]
    fn rays() {
        let a = Point3::new(0.0, 0.0, 0.0);
        let b = Point3::new(1.0, 0.0, 0.0);
        let c = Point3::new(0.0, 1.0, 0.0);
        let up = Vector3::z();
        assert_eq!(ray_intersect(&Point3::new(0.2, 0.2, -1.0), &up, &a, &b, &c), RayHit::Hit(1.0));
        assert_eq!(ray_intersect(&Point3::new(0.2, 0.2, 1.0), &up, &a, &b, &c), RayHit::Miss);
        assert_eq!(ray_intersect(&Point3::new(2.0, 2.0, -1.0), &up, &a, &b, &c), RayHit::Miss);
        assert_eq!(ray_intersect(&Point3::new(0.5, 0.0, -1.0), &up, &a, &b, &c), RayHit::Ambiguous);
    }
}
