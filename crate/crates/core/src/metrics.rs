//! Trajectory quality scores: time-aligned Chamfer distance, speed
//! distribution divergence, RMS acceleration, penetration depth and contact
//! distance.

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::contact::ContactState;
use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;
use crate::hand_model::{JointVector, KinematicChain};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CdMode {
    /// The single smallest pairwise distance per frame.
    Literal,
    /// Mean of the two directed mean nearest-neighbour distances.
    #[default]
    Bidirectional,
}

impl CdMode {
    pub fn name(self) -> &'static str {
        match self {
            CdMode::Literal => "literal",
            CdMode::Bidirectional => "bidirectional",
        }
    }
}

impl std::str::FromStr for CdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(CdMode::Literal),
            "bidirectional" => Ok(CdMode::Bidirectional),
            _ => Err(Error::Config(format!("unknown chamfer mode `{s}`"))),
        }
    }
}

/// Space in which RMS acceleration is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccelerationSpace {
    /// Joint angles, rad/s².
    #[default]
    Joint,
    /// Robot keypoint positions, m/s².
    Keypoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsOptions {
    pub cd_mode: CdMode,
    pub kl_bins: usize,
    /// Upper edge of the speed histogram in m/s; faster samples land in the
    /// last bin.
    pub kl_max_speed: f64,
    pub kl_epsilon: f64,
    pub acceleration_space: AccelerationSpace,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        MetricsOptions {
            cd_mode: CdMode::Bidirectional,
            kl_bins: 50,
            kl_max_speed: 2.0,
            kl_epsilon: 1e-9,
            acceleration_space: AccelerationSpace::Joint,
        }
    }
}

impl MetricsOptions {
    pub fn validate(&self) -> Result<()> {
        if self.kl_bins == 0 {
            return Err(Error::Config("metrics.kl_bins must be at least 1".into()));
        }
        if !(self.kl_max_speed > 0.0 && self.kl_max_speed.is_finite()) {
            return Err(Error::Config("metrics.kl_max_speed must be positive".into()));
        }
        if !(self.kl_epsilon > 0.0 && self.kl_epsilon.is_finite()) {
            return Err(Error::Config("metrics.kl_epsilon must be positive".into()));
        }
        Ok(())
    }
}

fn tree(points: &[Point3<f64>]) -> ImmutableKdTree<f64, 3> {
    let pts: Vec<[f64; 3]> = points.iter().map(|p| p.coords.into()).collect();
    ImmutableKdTree::new_from_slice(&pts)
}

/// Distances from every point of `from` to its nearest neighbour in `to`.
fn nearest_distances<'a>(from: &'a [Point3<f64>], to: &'a ImmutableKdTree<f64, 3>) -> impl Iterator<Item = f64> + 'a {
    from.iter()
        .map(move |p| to.nearest_one::<SquaredEuclidean>(&p.coords.into()).distance.sqrt())
}

/// Chamfer distance between two clouds in the given mode.
pub fn chamfer(reference: &[Point3<f64>], generated: &[Point3<f64>], mode: CdMode) -> Result<f64> {
    if reference.is_empty() || generated.is_empty() {
        return Err(Error::Config("chamfer distance needs nonempty point clouds".into()));
    }
    let gen_tree = tree(generated);
    Ok(match mode {
        CdMode::Literal => nearest_distances(reference, &gen_tree).fold(f64::INFINITY, f64::min),
        CdMode::Bidirectional => {
            let ref_tree = tree(reference);
            let a: f64 = nearest_distances(reference, &gen_tree).sum::<f64>() / reference.len() as f64;
            let b: f64 = nearest_distances(generated, &ref_tree).sum::<f64>() / generated.len() as f64;
            0.5 * (a + b)
        }
    })
}

/// Per-frame Chamfer distances of two equally long sequences.
pub fn chamfer_series(
    reference: &[Vec<Point3<f64>>],
    generated: &[Vec<Point3<f64>>],
    mode: CdMode,
) -> Result<Vec<f64>> {
    if reference.len() != generated.len() {
        return Err(Error::Dimension {
            what: "chamfer frame count",
            expected: reference.len(),
            actual: generated.len(),
        });
    }
    reference
        .iter()
        .zip(generated)
        .map(|(r, g)| chamfer(r, g, mode))
        .collect()
}

/// Time-averaged Chamfer distance.
pub fn chamfer_over_time(
    reference: &[Vec<Point3<f64>>],
    generated: &[Vec<Point3<f64>>],
    mode: CdMode,
) -> Result<f64> {
    let series = chamfer_series(reference, generated, mode)?;
    if series.is_empty() {
        return Err(Error::Config("chamfer distance needs at least one frame".into()));
    }
    Ok(series.iter().sum::<f64>() / series.len() as f64)
}

/// Finite-difference speeds of every tracked point between consecutive
/// frames, frame-major.
pub fn point_speeds(seq: &[Vec<Point3<f64>>], dt: f64) -> Result<Vec<f64>> {
    if seq.len() < 2 {
        return Err(Error::Dimension {
            what: "frames for speeds (minimum)",
            expected: 2,
            actual: seq.len(),
        });
    }
    let n = seq[0].len();
    let mut out = Vec::with_capacity((seq.len() - 1) * n);
    for w in seq.windows(2) {
        if w[1].len() != n {
            return Err(Error::Dimension {
                what: "points per frame",
                expected: n,
                actual: w[1].len(),
            });
        }
        out.extend(w[0].iter().zip(&w[1]).map(|(a, b)| (b - a).norm() / dt));
    }
    Ok(out)
}

/// Smoothed normalised histogram of `values` over `[0, max)` with overflow
/// folded into the last bin.
pub fn speed_histogram(values: &[f64], bins: usize, max: f64, epsilon: f64) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    for &v in values {
        let k = ((v / max) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize;
        counts[k] += 1.0;
    }
    let total = values.len() as f64 + epsilon * bins as f64;
    counts.iter().map(|c| (c + epsilon) / total).collect()
}

/// KL(P‖Q) in nats.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum::<f64>()
        .max(0.0)
}

/// KL divergence between the speed histograms of two point trajectories.
pub fn velocity_kl(
    reference: &[Vec<Point3<f64>>],
    generated: &[Vec<Point3<f64>>],
    dt: f64,
    opts: &MetricsOptions,
) -> Result<f64> {
    opts.validate()?;
    let p = speed_histogram(&point_speeds(reference, dt)?, opts.kl_bins, opts.kl_max_speed, opts.kl_epsilon);
    let q = speed_histogram(&point_speeds(generated, dt)?, opts.kl_bins, opts.kl_max_speed, opts.kl_epsilon);
    Ok(kl_divergence(&p, &q))
}

fn need_three(len: usize) -> Result<()> {
    if len < 3 {
        return Err(Error::Dimension {
            what: "frames for acceleration (minimum)",
            expected: 3,
            actual: len,
        });
    }
    Ok(())
}

/// Per interior frame, the mean squared second difference over channels,
/// divided by dt⁴.
fn squared_acc_series<T: AsRef<[f64]>>(seq: &[T], dt: f64) -> Result<Vec<f64>> {
    need_three(seq.len())?;
    let n = seq[0].as_ref().len();
    let dt2 = dt * dt;
    seq.windows(3)
        .map(|w| {
            let (a, b, c) = (w[0].as_ref(), w[1].as_ref(), w[2].as_ref());
            if b.len() != n || c.len() != n {
                return Err(Error::Dimension {
                    what: "channels per frame",
                    expected: n,
                    actual: b.len().min(c.len()),
                });
            }
            let s: f64 = (0..n).map(|i| ((c[i] - 2.0 * b[i] + a[i]) / dt2).powi(2)).sum();
            Ok(s / n.max(1) as f64)
        })
        .collect()
}

/// RMS of the second central differences over dt², over all frames and
/// scalar channels (joint angles).
pub fn rms_acceleration<T: AsRef<[f64]>>(seq: &[T], dt: f64) -> Result<f64> {
    let s = squared_acc_series(seq, dt)?;
    Ok((s.iter().sum::<f64>() / s.len() as f64).sqrt())
}

/// Per interior frame RMS acceleration (length `T - 2`).
pub fn acceleration_series<T: AsRef<[f64]>>(seq: &[T], dt: f64) -> Result<Vec<f64>> {
    Ok(squared_acc_series(seq, dt)?.into_iter().map(f64::sqrt).collect())
}

/// Point trajectories as flat coordinate channels, scaled so that the
/// per-channel mean equals the mean squared vector norm over points.
fn point_channels(seq: &[Vec<Point3<f64>>]) -> Vec<Vec<f64>> {
    seq.iter()
        .map(|f| f.iter().flat_map(|p| (p.coords * 3f64.sqrt()).data.0[0]).collect())
        .collect()
}

/// RMS acceleration of point trajectories, using the vector norm per point.
pub fn rms_acceleration_points(seq: &[Vec<Point3<f64>>], dt: f64) -> Result<f64> {
    rms_acceleration(&point_channels(seq), dt)
}

pub fn acceleration_series_points(seq: &[Vec<Point3<f64>>], dt: f64) -> Result<Vec<f64>> {
    acceleration_series(&point_channels(seq), dt)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenetrationSummary {
    pub max_penetration: f64,
    /// `None` when no digit is ever flagged in contact.
    pub mean_contact_distance: Option<f64>,
    pub penetration: Vec<f64>,
    pub contact_distance: Vec<Option<f64>>,
}

/// Deepest penetration of any hand sample, and the mean fingertip-to-surface
/// distance over every (frame, digit) flagged in contact.
pub fn penetration_and_contact(
    chain: &KinematicChain,
    q_seq: &[JointVector],
    mesh: &TriangleMesh,
    states: &[ContactState],
) -> Result<PenetrationSummary> {
    if q_seq.is_empty() {
        return Err(Error::Config("penetration metric needs a nonempty sequence".into()));
    }
    if states.len() != q_seq.len() {
        return Err(Error::Dimension {
            what: "contact states",
            expected: q_seq.len(),
            actual: states.len(),
        });
    }
    let mut penetration = Vec::with_capacity(q_seq.len());
    let mut contact_distance = Vec::with_capacity(q_seq.len());
    let (mut sum, mut count) = (0.0, 0usize);
    for (q, state) in q_seq.iter().zip(states) {
        let fk = chain.forward_kinematics(q);
        let depth = chain
            .surface_points_from_fk(&fk, None)
            .iter()
            .map(|p| (-mesh.signed_distance(&p.position)).max(0.0))
            .fold(0.0, f64::max);
        penetration.push(depth);
        let tips = chain.fingertip_positions(&fk);
        let d: Vec<f64> = tips
            .iter()
            .zip(state.0)
            .filter_map(|(tip, on)| tip.filter(|_| on))
            .map(|p| mesh.closest(&p).distance_squared.sqrt())
            .collect();
        sum += d.iter().sum::<f64>();
        count += d.len();
        contact_distance.push((!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64));
    }
    Ok(PenetrationSummary {
        max_penetration: penetration.iter().copied().fold(0.0, f64::max),
        mean_contact_distance: (count > 0).then(|| sum / count as f64),
        penetration,
        contact_distance,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSeries {
    /// Chamfer distance per frame, in the headline mode.
    pub cd: Vec<f64>,
    /// RMS acceleration per interior frame.
    pub rms_acc: Vec<f64>,
    pub penetration: Vec<f64>,
    pub contact_distance: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub frames: usize,
    /// What the Chamfer distance and speed histograms compare.
    pub cloud_source: String,
    pub cd_mode: CdMode,
    /// Headline Chamfer distance in `cd_mode`, meters.
    pub cd: f64,
    pub cd_literal: f64,
    pub cd_bidirectional: f64,
    /// Nats.
    pub velocity_kl: f64,
    pub rms_acc: f64,
    pub rms_acc_space: AccelerationSpace,
    pub rms_acc_unit: String,
    pub max_penetration: f64,
    pub mean_contact_distance: Option<f64>,
    pub series: MetricsSeries,
}

/// Scores a robot joint sequence against reference keypoint clouds.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    chain: &KinematicChain,
    reference: &[Vec<Point3<f64>>],
    q_seq: &[JointVector],
    dt: f64,
    mesh: &TriangleMesh,
    states: &[ContactState],
    cloud_source: &str,
    opts: &MetricsOptions,
) -> Result<MetricsReport> {
    opts.validate()?;
    let generated: Vec<Vec<Point3<f64>>> = q_seq.iter().map(|q| chain.keypoints(q).0).collect();
    let literal = chamfer_series(reference, &generated, CdMode::Literal)?;
    let bidirectional = chamfer_series(reference, &generated, CdMode::Bidirectional)?;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
    let (cd_literal, cd_bidirectional) = (mean(&literal), mean(&bidirectional));
    let (rms_acc, acc_series, unit) = match opts.acceleration_space {
        AccelerationSpace::Joint => (rms_acceleration(q_seq, dt)?, acceleration_series(q_seq, dt)?, "rad/s^2"),
        AccelerationSpace::Keypoint => (
            rms_acceleration_points(&generated, dt)?,
            acceleration_series_points(&generated, dt)?,
            "m/s^2",
        ),
    };
    let pen = penetration_and_contact(chain, q_seq, mesh, states)?;
    let (cd, cd_series) = match opts.cd_mode {
        CdMode::Literal => (cd_literal, literal),
        CdMode::Bidirectional => (cd_bidirectional, bidirectional),
    };
    Ok(MetricsReport {
        frames: q_seq.len(),
        cloud_source: cloud_source.to_string(),
        cd_mode: opts.cd_mode,
        cd,
        cd_literal,
        cd_bidirectional,
        velocity_kl: velocity_kl(reference, &generated, dt, opts)?,
        rms_acc,
        rms_acc_space: opts.acceleration_space,
        rms_acc_unit: unit.to_string(),
        max_penetration: pen.max_penetration,
        mean_contact_distance: pen.mean_contact_distance,
        series: MetricsSeries {
            cd: cd_series,
            rms_acc: acc_series,
            penetration: pen.penetration,
            contact_distance: pen.contact_distance,
        },
    })
}
