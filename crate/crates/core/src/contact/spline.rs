use nalgebra::{DMatrix, DVector, Point3, Vector3};

use crate::error::{Error, Result};

/// Least-squares cubic per axis in `u - u0`.
#[derive(Clone, Debug, PartialEq)]
pub struct CubicFit {
    pub u0: f64,
    /// `coeffs[axis][i]` multiplies `(u - u0)^i`.
    pub coeffs: [[f64; 4]; 3],
    /// Root-mean-square fit residual over the samples, in position units.
    pub residual: f64,
}

impl CubicFit {
    pub fn position(&self, u: f64) -> Point3<f64> {
        let s = u - self.u0;
        Point3::from(self.axes(|c| c[0] + s * (c[1] + s * (c[2] + s * c[3]))))
    }

    pub fn velocity(&self, u: f64) -> Vector3<f64> {
        let s = u - self.u0;
        self.axes(|c| c[1] + s * (2.0 * c[2] + s * 3.0 * c[3]))
    }

    pub fn acceleration(&self, u: f64) -> Vector3<f64> {
        let s = u - self.u0;
        self.axes(|c| 2.0 * c[2] + 6.0 * s * c[3])
    }

    fn axes(&self, f: impl Fn(&[f64; 4]) -> f64) -> Vector3<f64> {
        Vector3::new(f(&self.coeffs[0]), f(&self.coeffs[1]), f(&self.coeffs[2]))
    }
}

/// Fits a cubic through `positions` sampled at `times` (at least four
/// distinct samples). The abscissa is normalised to `[0, 1]` for the solve.
pub fn fit_spline(positions: &[Point3<f64>], times: &[f64]) -> Result<CubicFit> {
    if positions.len() != times.len() {
        return Err(Error::Dimension {
            what: "spline samples",
            expected: times.len(),
            actual: positions.len(),
        });
    }
    if times.len() < 4 {
        return Err(Error::Dimension {
            what: "spline samples (minimum)",
            expected: 4,
            actual: times.len(),
        });
    }
    for (i, a) in times.iter().enumerate() {
        if times[i + 1..].iter().any(|b| b == a) {
            return Err(Error::DuplicateTimestamps);
        }
    }
    let u0 = times.iter().copied().fold(f64::INFINITY, f64::min);
    let span = times.iter().map(|t| t - u0).fold(0.0, f64::max);
    let n = times.len();
    let vander = DMatrix::from_fn(n, 4, |r, c| ((times[r] - u0) / span).powi(c as i32));
    let svd = vander.clone().svd(true, true);

    let mut coeffs = [[0.0; 4]; 3];
    let mut sq = 0.0;
    for (axis, out) in coeffs.iter_mut().enumerate() {
        // Relative to the first sample so a constant series fits exactly.
        let base = positions[0][axis];
        let y = DVector::from_iterator(n, positions.iter().map(|p| p[axis] - base));
        let c = svd.solve(&y, 1e-14).expect("svd computed with u and v");
        sq += (&vander * &c - &y).norm_squared();
        for (i, o) in out.iter_mut().enumerate() {
            *o = c[i] / span.powi(i as i32);
        }
        out[0] += base;
    }
    Ok(CubicFit {
        u0,
        coeffs,
        residual: (sq / n as f64).sqrt(),
    })
}
