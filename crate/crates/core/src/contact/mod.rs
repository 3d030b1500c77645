//! Fingertip contact detection with hysteresis, temporal imputation of
//! flickering states, and hand–object correspondence maps.

mod spline;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;
use crate::hand_model::{Finger, JointVector, KinematicChain};

pub use spline::{fit_spline, CubicFit};

/// Frames in the spline window around the imputed frame.
pub const SPLINE_WINDOW: usize = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbabilityMode {
    /// `sigmoid(-beta1 * |a_hand - a_obj|)`.
    #[default]
    Norm,
    /// `sigmoid(beta1 * sum(a_hand - a_obj))`, summing the components.
    StrictLiteral,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImputationScope {
    /// Only frames whose two neighbours agree with each other but not with
    /// the frame itself.
    #[default]
    Flicker,
    /// Every interior frame.
    AllFrames,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VelocitySource {
    /// The configured average finger speed.
    #[default]
    Nominal,
    /// Mean of the fitted fingertip speeds at the neighbouring frames.
    Measured,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContactConfig {
    pub dis_min: f64,
    pub dis_max: f64,
    pub alpha_v: f64,
    pub tau_c: f64,
    pub v_f: f64,
    pub f_c: f64,
    pub beta1: f64,
    pub v_max: f64,
    /// Correspondence radius; defaults to `dis_max`.
    pub delta_contact_map: Option<f64>,
    pub probability_mode: ProbabilityMode,
    pub scope: ImputationScope,
    pub velocity_source: VelocitySource,
    pub passes: usize,
}

impl Default for ContactConfig {
    fn default() -> Self {
        ContactConfig {
            dis_min: 0.002,
            dis_max: 0.005,
            alpha_v: 0.6,
            tau_c: 0.7,
            v_f: 0.8,
            f_c: 30.0,
            beta1: 5.0,
            v_max: 1.5,
            delta_contact_map: None,
            probability_mode: ProbabilityMode::Norm,
            scope: ImputationScope::Flicker,
            velocity_source: VelocitySource::Nominal,
            passes: 1,
        }
    }
}

impl ContactConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("contact.{m}")));
        if !(self.dis_min > 0.0 && self.dis_min < self.dis_max && self.dis_max.is_finite()) {
            return bad("thresholds must satisfy 0 < dis_min < dis_max");
        }
        if !(self.tau_c > 0.0 && self.tau_c < 1.0) {
            return bad("tau_c must lie in (0, 1)");
        }
        if !(self.f_c > 0.0 && self.f_c.is_finite()) {
            return bad("f_c must be positive");
        }
        if !(self.v_max > 0.0 && self.v_f >= 0.0 && self.alpha_v >= 0.0 && self.beta1.is_finite()) {
            return bad("v_max must be positive, v_f and alpha_v non-negative, beta1 finite");
        }
        if self.delta_contact_map.is_some_and(|d| !(d >= 0.0 && d.is_finite())) {
            return bad("delta_contact_map must be non-negative");
        }
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        self.delta_contact_map.unwrap_or(self.dis_max)
    }
}

/// Contact flag per digit, thumb to pinky.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContactState(pub [bool; 5]);

impl ContactState {
    pub fn any(&self) -> bool {
        self.0.iter().any(|c| *c)
    }

    pub fn finger(&self, f: Finger) -> bool {
        f.digit_index().is_some_and(|i| self.0[i])
    }
}

/// Fingertip positions and surface distances per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FingertipTrace {
    pub timestamps: Vec<f64>,
    /// `None` for digits without a fingertip marker.
    pub positions: Vec<[Option<Point3<f64>>; 5]>,
    /// Non-negative distance to the surface; infinite for missing digits.
    pub distances: Vec<[f64; 5]>,
}

impl FingertipTrace {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Fingertip trace of a posed sequence against a static mesh. Penetrating
    /// fingertips report distance zero.
    pub fn from_poses(chain: &KinematicChain, timestamps: &[f64], poses: &[JointVector], mesh: &TriangleMesh) -> Result<Self> {
        if timestamps.len() != poses.len() {
            return Err(Error::Dimension {
                what: "fingertip trace frames",
                expected: timestamps.len(),
                actual: poses.len(),
            });
        }
        let mut positions = Vec::with_capacity(poses.len());
        let mut distances = Vec::with_capacity(poses.len());
        for q in poses {
            let tips = chain.fingertip_positions(&chain.forward_kinematics(q));
            let mut d = [f64::INFINITY; 5];
            for (slot, tip) in d.iter_mut().zip(&tips) {
                if let Some(p) = tip {
                    *slot = mesh.signed_distance(p).max(0.0);
                }
            }
            positions.push(tips);
            distances.push(d);
        }
        Ok(FingertipTrace {
            timestamps: timestamps.to_vec(),
            positions,
            distances,
        })
    }
}

/// Dual-threshold automaton over one distance series.
pub fn hysteresis(distances: &[f64], dis_min: f64, dis_max: f64) -> Vec<bool> {
    let mut prev = false;
    distances
        .iter()
        .map(|&d| {
            prev = if d < dis_min {
                true
            } else if d > dis_max {
                false
            } else {
                prev
            };
            prev
        })
        .collect()
}

pub fn dual_threshold(trace: &FingertipTrace, cfg: &ContactConfig) -> Vec<ContactState> {
    let mut states = vec![ContactState::default(); trace.len()];
    for f in 0..5 {
        let series: Vec<f64> = trace.distances.iter().map(|d| d[f]).collect();
        for (s, c) in states.iter_mut().zip(hysteresis(&series, cfg.dis_min, cfg.dis_max)) {
            s.0[f] = c;
        }
    }
    states
}

/// Distance covered between frames given the neighbouring speeds.
pub fn velocity_displacement(v_prev: f64, v_next: f64, dt: f64) -> f64 {
    0.5 * (v_prev + v_next) * dt
}

/// Blended contact decision from the neighbouring states and an expected
/// displacement.
pub fn interpolate_with(c_prev: bool, c_next: bool, displacement: f64, alpha_v: f64, tau_c: f64) -> bool {
    let mean = ((c_prev as u8 + c_next as u8) as f64 / 2.0).abs();
    mean + alpha_v * displacement > tau_c
}

pub fn interpolate_contact(c_prev: bool, c_next: bool, cfg: &ContactConfig) -> bool {
    interpolate_with(c_prev, c_next, cfg.v_f / cfg.f_c, cfg.alpha_v, cfg.tau_c)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn contact_probability(hand_acc: &Vector3<f64>, obj_acc: &Vector3<f64>, beta1: f64) -> f64 {
    sigmoid(-beta1 * (hand_acc - obj_acc).norm())
}

pub fn contact_probability_literal(hand_acc: &Vector3<f64>, obj_acc: &Vector3<f64>, beta1: f64) -> f64 {
    sigmoid(beta1 * (hand_acc - obj_acc).sum())
}

/// Object placement over time.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum ObjectMotion {
    #[default]
    Static,
    /// Object reference point per frame.
    Trajectory(Vec<Point3<f64>>),
}

/// Gate inputs evaluated for one frame and digit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateSample {
    pub probability: f64,
    pub speed: f64,
    pub open: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Imputation {
    pub states: Vec<ContactState>,
    /// Per frame and digit; `None` where the gate was not evaluated.
    pub gates: Vec<[Option<GateSample>; 5]>,
    /// `(frame, digit)` pairs whose state differs from the raw input.
    pub changed: Vec<(usize, usize)>,
}

fn window_start(t: usize, len: usize) -> usize {
    t.saturating_sub(SPLINE_WINDOW / 2).min(len - SPLINE_WINDOW)
}

fn gate(
    trace: &FingertipTrace,
    obj: &ObjectMotion,
    t: usize,
    digit: usize,
    cfg: &ContactConfig,
) -> Result<Option<(GateSample, CubicFit)>> {
    let start = window_start(t, trace.len());
    let times = &trace.timestamps[start..start + SPLINE_WINDOW];
    let Some(points) = trace.positions[start..start + SPLINE_WINDOW]
        .iter()
        .map(|p| p[digit])
        .collect::<Option<Vec<_>>>()
    else {
        return Ok(None);
    };
    let hand = fit_spline(&points, times)?;
    let u = trace.timestamps[t];
    let obj_acc = match obj {
        ObjectMotion::Static => Vector3::zeros(),
        ObjectMotion::Trajectory(p) => fit_spline(&p[start..start + SPLINE_WINDOW], times)?.acceleration(u),
    };
    let hand_acc = hand.acceleration(u);
    let probability = match cfg.probability_mode {
        ProbabilityMode::Norm => contact_probability(&hand_acc, &obj_acc, cfg.beta1),
        ProbabilityMode::StrictLiteral => contact_probability_literal(&hand_acc, &obj_acc, cfg.beta1),
    };
    let speed = hand.velocity(u).norm();
    let open = probability > 0.5 && speed < cfg.v_max;
    Ok(Some((GateSample { probability, speed, open }, hand)))
}

/// Replaces raw states by interpolated ones where the likelihood and speed
/// gate is open. Boundary frames keep their raw state, as do sequences
/// shorter than the spline window.
pub fn impute_states(
    raw: &[ContactState],
    trace: &FingertipTrace,
    obj: &ObjectMotion,
    cfg: &ContactConfig,
) -> Result<Imputation> {
    if trace.len() != raw.len() {
        return Err(Error::Dimension {
            what: "contact states",
            expected: trace.len(),
            actual: raw.len(),
        });
    }
    if let ObjectMotion::Trajectory(p) = obj {
        if p.len() != raw.len() {
            return Err(Error::Dimension {
                what: "object trajectory",
                expected: raw.len(),
                actual: p.len(),
            });
        }
    }
    let n = raw.len();
    let mut gates = vec![[None; 5]; n];
    let mut states = raw.to_vec();
    if n < SPLINE_WINDOW {
        return Ok(Imputation { states, gates, changed: Vec::new() });
    }

    let mut fits: Vec<[Option<CubicFit>; 5]> = vec![Default::default(); n];
    for t in 1..n - 1 {
        for digit in 0..5 {
            if let Some((g, fit)) = gate(trace, obj, t, digit, cfg).map_err(|e| e.at_frame("contact", t))? {
                gates[t][digit] = Some(g);
                fits[t][digit] = Some(fit);
            }
        }
    }

    let dt = 1.0 / cfg.f_c;
    for _ in 0..cfg.passes {
        let prev = states.clone();
        for t in 1..n - 1 {
            for digit in 0..5 {
                let (Some(g), Some(fit)) = (gates[t][digit], &fits[t][digit]) else { continue };
                let (a, cur, b) = (prev[t - 1].0[digit], prev[t].0[digit], prev[t + 1].0[digit]);
                if !g.open || (cfg.scope == ImputationScope::Flicker && !(a == b && a != cur)) {
                    continue;
                }
                let displacement = match cfg.velocity_source {
                    VelocitySource::Nominal => cfg.v_f * dt,
                    VelocitySource::Measured => velocity_displacement(
                        fit.velocity(trace.timestamps[t - 1]).norm(),
                        fit.velocity(trace.timestamps[t + 1]).norm(),
                        dt,
                    ),
                };
                states[t].0[digit] = interpolate_with(a, b, displacement, cfg.alpha_v, cfg.tau_c);
            }
        }
    }

    let changed = (0..n)
        .flat_map(|t| (0..5).map(move |d| (t, d)))
        .filter(|&(t, d)| states[t].0[d] != raw[t].0[d])
        .collect();
    Ok(Imputation { states, gates, changed })
}

/// Number of frames whose state differs from both neighbours, which agree.
pub fn count_flicker(states: &[ContactState]) -> usize {
    states
        .windows(3)
        .map(|w| (0..5).filter(|&d| w[0].0[d] == w[2].0[d] && w[0].0[d] != w[1].0[d]).count())
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    /// Global hand surface sample index.
    pub point: usize,
    /// Nearest object mesh vertex.
    pub vertex: usize,
    /// Signed distance of the hand point at detection.
    pub distance: f64,
}

/// Correspondences per digit, thumb to pinky.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContactMap(pub [Vec<Correspondence>; 5]);

impl ContactMap {
    pub fn is_empty(&self) -> bool {
        self.0.iter().all(Vec::is_empty)
    }

    pub fn finger(&self, f: Finger) -> &[Correspondence] {
        f.digit_index().map_or(&[], |i| &self.0[i])
    }
}

/// Pairs every surface sample of each in-contact digit that lies within the
/// correspondence radius (or inside the object) with its nearest vertex.
pub fn build_contact_map(
    chain: &KinematicChain,
    q: &JointVector,
    mesh: &TriangleMesh,
    state: &ContactState,
    cfg: &ContactConfig,
) -> ContactMap {
    let mut map = ContactMap::default();
    if !state.any() {
        return map;
    }
    let fk = chain.forward_kinematics(q);
    let delta = cfg.delta();
    for (digit, finger) in Finger::DIGITS.iter().enumerate() {
        if !state.0[digit] {
            continue;
        }
        for sp in chain.surface_points_from_fk(&fk, Some(*finger)) {
            let d = mesh.signed_distance(&sp.position);
            if d <= delta {
                map.0[digit].push(Correspondence {
                    point: sp.index,
                    vertex: mesh.nearest_vertex(&sp.position),
                    distance: d,
                });
            }
        }
    }
    map
}

/// Raw and imputed states plus correspondence maps for a whole sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactTimeline {
    pub raw: Vec<ContactState>,
    pub states: Vec<ContactState>,
    pub maps: Vec<ContactMap>,
}

pub fn extract_contacts(
    chain: &KinematicChain,
    timestamps: &[f64],
    poses: &[JointVector],
    mesh: &TriangleMesh,
    obj: &ObjectMotion,
    cfg: &ContactConfig,
) -> Result<ContactTimeline> {
    cfg.validate()?;
    let trace = FingertipTrace::from_poses(chain, timestamps, poses, mesh)?;
    let raw = dual_threshold(&trace, cfg);
    let imputed = impute_states(&raw, &trace, obj, cfg)?;
    log::info!(
        "contact: {} raw flicker frames, {} after imputation",
        count_flicker(&raw),
        count_flicker(&imputed.states)
    );
    let maps = poses
        .iter()
        .zip(&imputed.states)
        .map(|(q, s)| build_contact_map(chain, q, mesh, s, cfg))
        .collect();
    Ok(ContactTimeline {
        raw,
        states: imputed.states,
        maps,
    })
}
