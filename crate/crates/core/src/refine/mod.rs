//! Per-finger grasp refinement against the object surface.
//!
//! Each in-contact finger is optimised in turn with the others held fixed,
//! minimising anchor distance, penetration, normal misalignment,
//! self-penetration and drift from the retargeted pose.

mod energy;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contact::ContactMap;
use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;
use crate::hand_model::{FkResult, Finger, JointVector, KinematicChain};

pub use energy::{
    e_align, e_dis, e_joints, e_pen, e_spen, grad_e_align, grad_e_dis, grad_e_joints, grad_e_pen, grad_e_spen,
    NormalConvention, Target,
};

const ARMIJO_C: f64 = 1e-4;
const SHRINK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 40;
/// Largest joint change attempted by the first trial step, in radians.
const MAX_TRIAL_STEP: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyWeights {
    pub w_pen: f64,
    pub w_align: f64,
    pub w_spen: f64,
    pub w_joints: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        EnergyWeights {
            w_pen: 100.0,
            w_align: 1.0,
            w_spen: 10.0,
            w_joints: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub weights: EnergyWeights,
    pub delta_spen: f64,
    pub pen_clearance: f64,
    pub finger_order: Vec<Finger>,
    pub max_iters_per_finger: usize,
    /// Relative frame-energy improvement below which rounds stop.
    pub step_tol: f64,
    pub outer_rounds: usize,
    pub normal_convention: NormalConvention,
    /// Move each anchor to the nearest vertex of its hand point between rounds.
    pub reproject_anchors: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            weights: EnergyWeights::default(),
            delta_spen: 0.002,
            pen_clearance: 0.0,
            finger_order: Finger::DIGITS.to_vec(),
            max_iters_per_finger: 100,
            step_tol: 1e-6,
            outer_rounds: 3,
            normal_convention: NormalConvention::Facing,
            reproject_anchors: false,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        if [w.w_pen, w.w_align, w.w_spen, w.w_joints].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("refine weights must be finite and >= 0".into()));
        }
        if !(self.delta_spen > 0.0 && self.step_tol > 0.0) {
            return Err(Error::Config("refine.delta_spen and refine.step_tol must be positive".into()));
        }
        if !(self.pen_clearance.is_finite() && self.pen_clearance >= 0.0) {
            return Err(Error::Config("refine.pen_clearance must be >= 0".into()));
        }
        let mut sorted = self.finger_order.clone();
        sorted.sort();
        if sorted != Finger::DIGITS.to_vec() {
            return Err(Error::Config("refine.finger_order must be a permutation of the five digits".into()));
        }
        Ok(())
    }
}

/// Contact targets per digit, thumb to pinky.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FingerTargets(pub [Vec<Target>; 5]);

impl FingerTargets {
    /// Anchors each correspondence at its object vertex and vertex normal.
    pub fn from_contact_map(map: &ContactMap, mesh: &TriangleMesh) -> Self {
        let mut out = FingerTargets::default();
        for (slot, list) in out.0.iter_mut().zip(&map.0) {
            *slot = list
                .iter()
                .map(|c| Target {
                    point: c.point,
                    anchor: mesh.vertices()[c.vertex],
                    normal: mesh.vertex_normals()[c.vertex],
                })
                .collect();
        }
        out
    }

    pub fn finger(&self, f: Finger) -> &[Target] {
        f.digit_index().map_or(&[], |i| &self.0[i])
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(Vec::is_empty)
    }

    fn reproject(&mut self, chain: &KinematicChain, fk: &FkResult, mesh: &TriangleMesh) {
        for t in self.0.iter_mut().flatten() {
            let v = mesh.nearest_vertex(&chain.surface_point(fk, t.point).position);
            t.anchor = mesh.vertices()[v];
            t.normal = mesh.vertex_normals()[v];
        }
    }
}

/// Weighted energy terms; `total` is their weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub dis: f64,
    pub pen: f64,
    pub align: f64,
    pub spen: f64,
    pub joints: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn weighted(dis: f64, pen: f64, align: f64, spen: f64, joints: f64, w: &EnergyWeights) -> Self {
        let (pen, align, spen, joints) = (w.w_pen * pen, w.w_align * align, w.w_spen * spen, w.w_joints * joints);
        EnergyBreakdown {
            dis,
            pen,
            align,
            spen,
            joints,
            total: dis + pen + align + spen + joints,
        }
    }

    fn check(&self) -> Result<()> {
        for (term, v) in [
            ("dis", self.dis),
            ("pen", self.pen),
            ("align", self.align),
            ("spen", self.spen),
            ("joints", self.joints),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFiniteEnergy { term });
            }
        }
        Ok(())
    }
}

/// Total energy for one active finger: its targets, every hand sample's
/// penetration, the finger's self-penetration and all articulated joints.
pub fn finger_energy(
    chain: &KinematicChain,
    q: &JointVector,
    finger: Finger,
    targets: &[Target],
    mesh: &TriangleMesh,
    q_init: &JointVector,
    cfg: &RefineConfig,
) -> Result<EnergyBreakdown> {
    let fk = chain.forward_kinematics(q);
    let b = EnergyBreakdown::weighted(
        energy::dis_fk(chain, &fk, targets, None),
        energy::pen_fk(chain, &fk, mesh, cfg.pen_clearance, 0..chain.sample_count(), None),
        energy::align_fk(chain, &fk, targets, cfg.normal_convention, None),
        energy::spen_fk(chain, &fk, finger, cfg.delta_spen, None),
        e_joints(q, q_init)?,
        &cfg.weights,
    );
    b.check()?;
    Ok(b)
}

/// The part of [`finger_energy`] that depends on the finger's own DoF, plus
/// its gradient over those DoF.
struct ActiveEnergy<'a> {
    chain: &'a KinematicChain,
    mesh: &'a TriangleMesh,
    cfg: &'a RefineConfig,
    finger: Finger,
    targets: &'a [Target],
    q_init: &'a JointVector,
    samples: Vec<usize>,
    dofs: Vec<usize>,
}

impl ActiveEnergy<'_> {
    fn eval(&self, q: &JointVector, grad: Option<&mut [f64]>) -> (f64, &'static str) {
        let w = &self.cfg.weights;
        let fk = self.chain.forward_kinematics(q);
        let dof = self.chain.dof();
        let want = grad.is_some();
        let n = if want { dof } else { 0 };
        let mut parts = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let [gd, gp, ga, gs] = &mut parts;
        let terms = [
            ("dis", energy::dis_fk(self.chain, &fk, self.targets, pick(gd, want))),
            (
                "pen",
                w.w_pen * energy::pen_fk(self.chain, &fk, self.mesh, self.cfg.pen_clearance, self.samples.iter().copied(), pick(gp, want)),
            ),
            ("align", w.w_align * energy::align_fk(self.chain, &fk, self.targets, self.cfg.normal_convention, pick(ga, want))),
            ("spen", w.w_spen * energy::spen_fk(self.chain, &fk, self.finger, self.cfg.delta_spen, pick(gs, want))),
            (
                "joints",
                w.w_joints * self.dofs.iter().map(|&i| (q[i] - self.q_init[i]).powi(2)).sum::<f64>(),
            ),
        ];
        if let Some(g) = grad {
            for (k, &i) in self.dofs.iter().enumerate() {
                g[k] = gd[i] + w.w_pen * gp[i] + w.w_align * ga[i] + w.w_spen * gs[i]
                    + w.w_joints * 2.0 * (q[i] - self.q_init[i]);
            }
        }
        let mut total = 0.0;
        for (name, v) in terms {
            if !v.is_finite() {
                return (f64::NAN, name);
            }
            total += v;
        }
        (total, "")
    }
}

fn pick(v: &mut [f64], want: bool) -> Option<&mut [f64]> {
    want.then_some(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FingerResult {
    pub finger: Finger,
    pub q: JointVector,
    pub before: EnergyBreakdown,
    pub after: EnergyBreakdown,
    /// Total energy after each accepted iterate, starting with the entry value.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

/// Projected gradient descent with Armijo backtracking over the DoF of
/// `finger`. Every other entry of `q` is returned bitwise unchanged.
pub fn optimize_finger(
    chain: &KinematicChain,
    q: &JointVector,
    finger: Finger,
    targets: &[Target],
    mesh: &TriangleMesh,
    q_init: &JointVector,
    cfg: &RefineConfig,
) -> Result<FingerResult> {
    let before = finger_energy(chain, q, finger, targets, mesh, q_init, cfg)?;
    let lower = chain.lower_bounds();
    let upper = chain.upper_bounds();
    let dofs: Vec<usize> = chain.finger_dofs(finger).into_iter().filter(|&i| upper[i] > lower[i]).collect();
    let active = ActiveEnergy {
        chain,
        mesh,
        cfg,
        finger,
        targets,
        q_init,
        samples: chain.finger_samples(finger),
        dofs: dofs.clone(),
    };
    // Everything outside the active part is constant while only `dofs` move.
    let (start, _) = active.eval(q, None);
    let offset = before.total - start;

    let mut x = chain.clamp(q).0;
    for (i, v) in x.iter_mut().enumerate() {
        if !dofs.contains(&i) {
            *v = q[i];
        }
    }
    let mut value = active.eval(&x, None).0;
    let mut trace = vec![value + offset];
    let mut grad = vec![0.0; dofs.len()];
    let mut iterations = 0;
    // Largest joint change of the last accepted step; the next trial starts
    // a little above it instead of at the full trial step.
    let mut last_move = MAX_TRIAL_STEP;
    while iterations < cfg.max_iters_per_finger && !dofs.is_empty() {
        iterations += 1;
        let (v, bad) = active.eval(&x, Some(&mut grad));
        if !v.is_finite() {
            return Err(Error::NonFiniteEnergy { term: bad });
        }
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax == 0.0 {
            break;
        }
        let mut step = (4.0 * last_move).min(MAX_TRIAL_STEP) / gmax;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut cand = x.clone();
            let mut decrease = 0.0;
            for (k, &i) in dofs.iter().enumerate() {
                cand[i] = (x[i] - step * grad[k]).clamp(lower[i], upper[i]);
                decrease += grad[k] * (x[i] - cand[i]);
            }
            if decrease <= 0.0 {
                break;
            }
            let (f, bad) = active.eval(&cand, None);
            if !f.is_finite() {
                return Err(Error::NonFiniteEnergy { term: bad });
            }
            if f <= value - ARMIJO_C * decrease {
                accepted = Some((cand, f));
                break;
            }
            step *= SHRINK;
        }
        let Some((cand, f)) = accepted else { break };
        last_move = dofs.iter().fold(0.0f64, |m, &i| m.max((cand[i] - x[i]).abs())).max(1e-12);
        let rel = (value - f) / value.abs().max(f64::MIN_POSITIVE);
        x = cand;
        value = f;
        trace.push(value + offset);
        if rel < 1e-9 {
            break;
        }
    }

    let after = finger_energy(chain, &x, finger, targets, mesh, q_init, cfg)?;
    Ok(FingerResult {
        finger,
        q: x,
        before,
        after,
        trace,
        iterations,
    })
}

/// Energy of a whole frame: all targets, all penetration, the
/// self-penetration of every finger that carries targets, and joint drift.
pub fn frame_energy(
    chain: &KinematicChain,
    q: &JointVector,
    targets: &FingerTargets,
    mesh: &TriangleMesh,
    q_init: &JointVector,
    cfg: &RefineConfig,
) -> Result<EnergyBreakdown> {
    let fk = chain.forward_kinematics(q);
    let all: Vec<Target> = targets.0.iter().flatten().copied().collect();
    let spen = Finger::DIGITS
        .iter()
        .filter(|f| !targets.finger(**f).is_empty())
        .map(|f| energy::spen_fk(chain, &fk, *f, cfg.delta_spen, None))
        .sum();
    let b = EnergyBreakdown::weighted(
        energy::dis_fk(chain, &fk, &all, None),
        energy::pen_fk(chain, &fk, mesh, cfg.pen_clearance, 0..chain.sample_count(), None),
        energy::align_fk(chain, &fk, &all, cfg.normal_convention, None),
        spen,
        e_joints(q, q_init)?,
        &cfg.weights,
    );
    b.check()?;
    Ok(b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FingerPass {
    pub round: usize,
    #[serde(flatten)]
    pub result: FingerResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinedFrame {
    pub q: JointVector,
    pub before: EnergyBreakdown,
    pub after: EnergyBreakdown,
    pub rounds: usize,
    pub passes: Vec<FingerPass>,
}

/// Refines one frame. Frames without targets come back unchanged.
pub fn refine_frame(
    chain: &KinematicChain,
    q: &JointVector,
    map: &ContactMap,
    mesh: &TriangleMesh,
    cfg: &RefineConfig,
) -> Result<RefinedFrame> {
    let mut targets = FingerTargets::from_contact_map(map, mesh);
    let before = frame_energy(chain, q, &targets, mesh, q, cfg)?;
    let mut out = RefinedFrame {
        q: q.clone(),
        before,
        after: before,
        rounds: 0,
        passes: Vec::new(),
    };
    if targets.is_empty() {
        return Ok(out);
    }
    let mut energy = before.total;
    for round in 0..cfg.outer_rounds {
        if round > 0 && cfg.reproject_anchors {
            targets.reproject(chain, &chain.forward_kinematics(&out.q), mesh);
            energy = frame_energy(chain, &out.q, &targets, mesh, q, cfg)?.total;
        }
        for &finger in &cfg.finger_order {
            let t = targets.finger(finger);
            if t.is_empty() {
                continue;
            }
            let r = optimize_finger(chain, &out.q, finger, t, mesh, q, cfg)?;
            out.q = r.q.clone();
            out.passes.push(FingerPass { round, result: r });
        }
        out.rounds = round + 1;
        let next = frame_energy(chain, &out.q, &targets, mesh, q, cfg)?.total;
        let rel = (energy - next) / energy.abs().max(f64::MIN_POSITIVE);
        energy = next;
        if rel < cfg.step_tol {
            break;
        }
    }
    out.after = frame_energy(chain, &out.q, &targets, mesh, q, cfg)?;
    Ok(out)
}

/// Refines every frame independently, in parallel, keeping frame order.
pub fn sequential_refine(
    chain: &KinematicChain,
    q_seq: &[JointVector],
    maps: &[ContactMap],
    mesh: &TriangleMesh,
    cfg: &RefineConfig,
) -> Result<Vec<RefinedFrame>> {
    cfg.validate()?;
    if q_seq.len() != maps.len() {
        return Err(Error::Dimension {
            what: "contact timeline frames",
            expected: q_seq.len(),
            actual: maps.len(),
        });
    }
    q_seq
        .par_iter()
        .zip(maps)
        .enumerate()
        .map(|(t, (q, m))| refine_frame(chain, q, m, mesh, cfg).map_err(|e| e.at_frame("refine", t)))
        .collect()
}
