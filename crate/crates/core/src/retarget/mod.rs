//! Per-frame retargeting of human keypoints onto the robot chain.
//!
//! Each frame minimises keypoint alignment, a step penalty towards the
//! previous pose, a second-difference penalty over a sliding window and a
//! pull towards the constant-velocity prediction. A global search proposes a
//! pose and a damped Gauss–Newton polish refines it.

mod search;

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Point3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hand_model::{JointVector, KinematicChain};

pub use search::{
    default_population, global_search, polish, PolishOptions, PolishResult, SearchOptions, SearchResult,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetargetConfig {
    /// Weight of the step penalty towards the previous frame.
    pub alpha: f64,
    /// Weight of the second-difference penalty.
    pub lambda: f64,
    /// Weight of the pull towards the constant-velocity prediction.
    pub gamma: f64,
    /// Multiplier on the keypoint term. Keypoints are in meters while the
    /// regularisers are in joint units, so tracking-heavy runs raise this.
    pub align_weight: f64,
    /// Full weight matrix for the second-difference norm; identity if absent.
    pub sigma_inv: Option<Vec<Vec<f64>>>,
    /// Number of past frames kept in the window.
    pub window_k: usize,
    pub dt: f64,
    /// Objective evaluations per frame for the global search.
    pub search_budget: usize,
    pub population_size: Option<usize>,
    /// Standard deviation of the jittered warm-start copies.
    pub warm_jitter: f64,
    pub polish: bool,
    pub polish_max_iters: usize,
    pub polish_rel_tol: f64,
    pub seed: u64,
}

impl Default for RetargetConfig {
    fn default() -> Self {
        RetargetConfig {
            alpha: 0.05,
            lambda: 0.1,
            gamma: 0.5,
            align_weight: 100.0,
            sigma_inv: None,
            window_k: 4,
            dt: 1.0 / 30.0,
            search_budget: 3000,
            population_size: None,
            warm_jitter: 0.05,
            polish: true,
            polish_max_iters: 100,
            polish_rel_tol: 1e-8,
            seed: 0,
        }
    }
}

impl RetargetConfig {
    /// Checks the scalar fields and returns the weight matrix for `dof`.
    pub fn validate(&self, dof: usize) -> Result<DMatrix<f64>> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("align_weight", self.align_weight),
            ("warm_jitter", self.warm_jitter),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("retarget.{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.window_k < 2 {
            return Err(Error::Config("retarget.window_k must be at least 2".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config("retarget.dt must be positive".into()));
        }
        let Some(rows) = &self.sigma_inv else {
            return Ok(DMatrix::identity(dof, dof));
        };
        if rows.len() != dof || rows.iter().any(|r| r.len() != dof) {
            return Err(Error::Config(format!("retarget.sigma_inv must be {dof}x{dof}")));
        }
        let m = DMatrix::from_fn(dof, dof, |i, j| rows[i][j]);
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("retarget.sigma_inv has non-finite entries".into()));
        }
        if (&m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
            return Err(Error::Config("retarget.sigma_inv is not symmetric".into()));
        }
        let eig = m.clone().symmetric_eigen();
        if eig.eigenvalues.min() < -1e-12 * m.amax().max(1.0) {
            return Err(Error::Config("retarget.sigma_inv is not positive semidefinite".into()));
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HumanFrame {
    pub timestamp: f64,
    pub keypoints: Vec<Point3<f64>>,
}

impl HumanFrame {
    pub fn scaled(&self, s: f64) -> HumanFrame {
        HumanFrame {
            timestamp: self.timestamp,
            keypoints: self.keypoints.iter().map(|p| Point3::from(p.coords * s)).collect(),
        }
    }
}

/// The most recent poses, oldest first.
#[derive(Clone, Debug)]
pub struct SlidingWindow {
    k: usize,
    dt: f64,
    history: VecDeque<(f64, JointVector)>,
    last_velocity: Option<Vec<f64>>,
}

impl SlidingWindow {
    pub fn new(k: usize, dt: f64) -> Self {
        SlidingWindow {
            k,
            dt,
            history: VecDeque::with_capacity(k + 1),
            last_velocity: None,
        }
    }

    pub fn push(&mut self, timestamp: f64, q: JointVector) {
        if let Some((_, prev)) = self.history.back() {
            self.last_velocity = Some(q.iter().zip(prev.iter()).map(|(a, b)| (a - b) / self.dt).collect());
        }
        self.history.push_back((timestamp, q));
        while self.history.len() > self.k {
            self.history.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn history(&self) -> impl Iterator<Item = &(f64, JointVector)> {
        self.history.iter()
    }

    pub fn last(&self) -> Option<&JointVector> {
        self.history.back().map(|(_, q)| q)
    }

    /// Backward-difference velocity of the newest pose.
    pub fn last_velocity(&self) -> Option<&[f64]> {
        self.last_velocity.as_deref()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }
}

fn check_keypoints(chain: &KinematicChain, frame: &HumanFrame) -> Result<()> {
    if frame.keypoints.len() != chain.keypoint_count() {
        return Err(Error::Dimension {
            what: "human keypoints",
            expected: chain.keypoint_count(),
            actual: frame.keypoints.len(),
        });
    }
    Ok(())
}

fn keypoint_error(chain: &KinematicChain, q: &JointVector, frame: &HumanFrame) -> f64 {
    chain
        .keypoints(q)
        .iter()
        .zip(&frame.keypoints)
        .map(|(r, h)| (h - r).norm_squared())
        .sum()
}

/// Keypoint alignment plus `alpha` times the squared step from `q_prev`.
pub fn alignment_loss(
    chain: &KinematicChain,
    q: &JointVector,
    frame: &HumanFrame,
    q_prev: Option<&JointVector>,
    alpha: f64,
) -> Result<f64> {
    check_keypoints(chain, frame)?;
    let step = q_prev.map_or(0.0, |p| alpha * q.distance_squared(p));
    Ok(keypoint_error(chain, q, frame) + step)
}

fn second_difference(a: &[f64], b: &[f64], c: &[f64]) -> DVector<f64> {
    DVector::from_iterator(a.len(), a.iter().zip(b).zip(c).map(|((a, b), c)| c - 2.0 * b + a))
}

/// `lambda` times the weighted squared second differences over the window
/// followed by `q`. Zero with fewer than three poses.
pub fn temporal_loss(window: &SlidingWindow, q: &JointVector, sigma_inv: &DMatrix<f64>, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let seq: Vec<&[f64]> = window.history().map(|(_, p)| &p[..]).chain(std::iter::once(&q[..])).collect();
    let sum: f64 = seq
        .windows(3)
        .map(|w| {
            let d = second_difference(w[0], w[1], w[2]);
            (d.transpose() * sigma_inv * &d)[(0, 0)]
        })
        .sum();
    lambda * sum
}

/// Constant-velocity extrapolation of the newest pose.
pub fn predicted_pose(window: &SlidingWindow) -> Option<JointVector> {
    let last = window.last()?;
    Some(match window.last_velocity() {
        Some(v) => JointVector(last.iter().zip(v).map(|(q, v)| q + window.dt() * v).collect()),
        None => last.clone(),
    })
}

/// Value of each objective term for one candidate pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveTerms {
    pub alignment: f64,
    pub temporal: f64,
    pub prediction: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.alignment + self.temporal + self.prediction
    }
}

/// The per-frame objective with its window-derived constants precomputed.
pub struct FrameObjective<'a> {
    chain: &'a KinematicChain,
    frame: &'a HumanFrame,
    cfg: &'a RetargetConfig,
    sigma_inv: &'a DMatrix<f64>,
    /// Square-root factor `S` with `SᵀS = sigma_inv`.
    sigma_root: DMatrix<f64>,
    window: &'a SlidingWindow,
    q_prev: Option<JointVector>,
    q_pred: Option<JointVector>,
}

impl<'a> FrameObjective<'a> {
    pub fn new(
        chain: &'a KinematicChain,
        frame: &'a HumanFrame,
        window: &'a SlidingWindow,
        cfg: &'a RetargetConfig,
        sigma_inv: &'a DMatrix<f64>,
    ) -> Result<Self> {
        check_keypoints(chain, frame)?;
        let dof = chain.dof();
        if sigma_inv.nrows() != dof || sigma_inv.ncols() != dof {
            return Err(Error::Dimension {
                what: "sigma_inv",
                expected: dof,
                actual: sigma_inv.nrows(),
            });
        }
        let eig = sigma_inv.clone().symmetric_eigen();
        let sqrt_d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
        let sigma_root = sqrt_d * eig.eigenvectors.transpose();
        Ok(FrameObjective {
            chain,
            frame,
            cfg,
            sigma_inv,
            sigma_root,
            window,
            q_prev: window.last().cloned(),
            q_pred: predicted_pose(window),
        })
    }

    pub fn q_prev(&self) -> Option<&JointVector> {
        self.q_prev.as_ref()
    }

    pub fn q_pred(&self) -> Option<&JointVector> {
        self.q_pred.as_ref()
    }

    pub fn terms(&self, q: &JointVector) -> ObjectiveTerms {
        let step = self.q_prev.as_ref().map_or(0.0, |p| self.cfg.alpha * q.distance_squared(p));
        let prediction = self.q_pred.as_ref().map_or(0.0, |p| self.cfg.gamma * q.distance_squared(p));
        ObjectiveTerms {
            alignment: self.cfg.align_weight * keypoint_error(self.chain, q, self.frame) + step,
            temporal: temporal_loss(self.window, q, self.sigma_inv, self.cfg.lambda),
            prediction,
        }
    }

    pub fn value(&self, q: &JointVector) -> f64 {
        self.terms(q).total()
    }

    /// Residual vector whose squared norm equals [`Self::value`] up to rounding.
    pub fn residuals(&self, q: &JointVector) -> Vec<f64> {
        let mut r = Vec::with_capacity(3 * self.frame.keypoints.len() + 4 * q.len());
        let w = self.cfg.align_weight.sqrt();
        for (p, h) in self.chain.keypoints(q).iter().zip(&self.frame.keypoints) {
            r.extend((h - p).iter().map(|v| w * v));
        }
        if let Some(prev) = &self.q_prev {
            let a = self.cfg.alpha.sqrt();
            r.extend(q.iter().zip(prev.iter()).map(|(x, y)| a * (x - y)));
        }
        if self.cfg.lambda > 0.0 {
            let l = self.cfg.lambda.sqrt();
            let seq: Vec<&[f64]> = self.window.history().map(|(_, p)| &p[..]).chain(std::iter::once(&q[..])).collect();
            for w in seq.windows(3) {
                let d = &self.sigma_root * second_difference(w[0], w[1], w[2]);
                r.extend(d.iter().map(|v| l * v));
            }
        }
        if let Some(pred) = &self.q_pred {
            let g = self.cfg.gamma.sqrt();
            r.extend(q.iter().zip(pred.iter()).map(|(x, y)| g * (x - y)));
        }
        r
    }
}

/// Sum of the alignment, temporal and prediction terms for pose `q`.
pub fn total_objective(
    chain: &KinematicChain,
    q: &JointVector,
    frame: &HumanFrame,
    window: &SlidingWindow,
    cfg: &RetargetConfig,
) -> Result<f64> {
    let sigma_inv = cfg.validate(chain.dof())?;
    Ok(FrameObjective::new(chain, frame, window, cfg, &sigma_inv)?.value(q))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetargetedFrame {
    pub timestamp: f64,
    pub q: JointVector,
    pub objective: f64,
    pub evaluations: usize,
}

fn validate_frames(chain: &KinematicChain, frames: &[HumanFrame]) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::Config("no input frames".into()));
    }
    let mut last = f64::NEG_INFINITY;
    for (t, f) in frames.iter().enumerate() {
        check_keypoints(chain, f).map_err(|e| e.at_frame("retarget", t))?;
        if !f.timestamp.is_finite() || f.keypoints.iter().any(|p| !p.coords.iter().all(|v| v.is_finite())) {
            return Err(Error::parse(format!("human frame {t}"), "non-finite value"));
        }
        if f.timestamp <= last {
            return Err(Error::parse(format!("human frame {t}"), "timestamps must increase"));
        }
        last = f.timestamp;
    }
    Ok(())
}

fn warm_seeds(
    anchors: &[JointVector],
    count: usize,
    sigma: f64,
    lower: &[f64],
    upper: &[f64],
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let mut seeds: Vec<Vec<f64>> = anchors.iter().map(|a| a.to_vec()).collect();
    let normal = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("sigma checked positive"));
    let mut k = 0;
    while seeds.len() < count {
        let base = &anchors[k % anchors.len()];
        k += 1;
        let s = base
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let j = normal.as_ref().map_or(0.0, |n| n.sample(rng));
                (v + j).clamp(lower[i], upper[i])
            })
            .collect();
        seeds.push(s);
    }
    seeds
}

/// Retargets one frame given the window of already solved poses.
pub fn retarget_frame(
    chain: &KinematicChain,
    frame: &HumanFrame,
    window: &SlidingWindow,
    cfg: &RetargetConfig,
    sigma_inv: &DMatrix<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<RetargetedFrame> {
    let lower = chain.lower_bounds();
    let upper = chain.upper_bounds();
    let objective = FrameObjective::new(chain, frame, window, cfg, sigma_inv)?;

    let anchors: Vec<JointVector> = match (objective.q_prev(), objective.q_pred()) {
        (Some(p), Some(pr)) => vec![p.clone(), chain.clamp(pr).0],
        _ => vec![chain.rest_pose()],
    };
    let population = cfg.population_size.unwrap_or_else(|| default_population(&lower, &upper));
    let seeds = warm_seeds(&anchors, population / 2, cfg.warm_jitter, &lower, &upper, rng);
    let opts = SearchOptions {
        budget: cfg.search_budget,
        population_size: Some(population),
    };
    let found = global_search(|x| objective.value(&JointVector(x.to_vec())), &lower, &upper, &opts, &seeds, rng)?;

    let (x, value, evaluations) = if cfg.polish {
        let p = polish(
            |x| objective.residuals(&JointVector(x.to_vec())),
            |x| objective.value(&JointVector(x.to_vec())),
            &found.x,
            &lower,
            &upper,
            &PolishOptions {
                max_iters: cfg.polish_max_iters,
                rel_tol: cfg.polish_rel_tol,
                ..PolishOptions::default()
            },
        );
        (p.x, p.value, found.evaluations + p.evaluations)
    } else {
        (found.x, found.value, found.evaluations)
    };
    if !value.is_finite() {
        return Err(Error::NonFiniteEnergy { term: "retarget objective" });
    }
    Ok(RetargetedFrame {
        timestamp: frame.timestamp,
        q: JointVector(x),
        objective: value,
        evaluations,
    })
}

/// Retargets a whole sequence frame by frame.
///
/// Frame `t` draws from RNG stream `t` of the configured seed, so the output
/// depends only on the inputs and the configuration.
pub fn retarget_sequence(
    chain: &KinematicChain,
    frames: &[HumanFrame],
    cfg: &RetargetConfig,
) -> Result<Vec<RetargetedFrame>> {
    let sigma_inv = cfg.validate(chain.dof())?;
    validate_frames(chain, frames)?;
    let mut window = SlidingWindow::new(cfg.window_k, cfg.dt);
    let mut out = Vec::with_capacity(frames.len());
    for (t, frame) in frames.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(t as u64);
        let r = retarget_frame(chain, frame, &window, cfg, &sigma_inv, &mut rng).map_err(|e| e.at_frame("retarget", t))?;
        log::debug!("retarget frame {t}: objective {:.3e}, {} evaluations", r.objective, r.evaluations);
        window.push(r.timestamp, r.q.clone());
        out.push(r);
    }
    Ok(out)
}
