//! Controlled random search with local mutation, plus a bounded
//! Levenberg–Marquardt polish on a residual vector.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, RngExt};
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SearchOptions {
    /// Maximum number of objective evaluations, population included.
    pub budget: usize,
    /// Defaults to `10 * (n + 1)` where `n` counts the non-degenerate bounds.
    pub population_size: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

fn free_dims(lower: &[f64], upper: &[f64]) -> usize {
    lower.iter().zip(upper).filter(|(l, u)| u > l).count()
}

pub fn default_population(lower: &[f64], upper: &[f64]) -> usize {
    10 * (free_dims(lower, upper) + 1)
}

fn clamp_into(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, l), u) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*l, *u);
    }
}

fn in_bounds(x: &[f64], lower: &[f64], upper: &[f64]) -> bool {
    x.iter().zip(lower).zip(upper).all(|((v, l), u)| v >= l && v <= u)
}

/// Minimises `objective` inside the box `[lower, upper]`.
///
/// `seeds` are placed first in the initial population (clamped); the rest is
/// drawn uniformly. The initial population is evaluated in parallel and the
/// iteration itself is sequential, so the result depends only on the RNG.
pub fn global_search<F, R>(
    objective: F,
    lower: &[f64],
    upper: &[f64],
    opts: &SearchOptions,
    seeds: &[Vec<f64>],
    rng: &mut R,
) -> Result<SearchResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
    R: Rng + ?Sized,
{
    let dim = lower.len();
    if upper.len() != dim {
        return Err(Error::Dimension {
            what: "search bounds",
            expected: dim,
            actual: upper.len(),
        });
    }
    if lower.iter().zip(upper).any(|(l, u)| !l.is_finite() || !u.is_finite() || l > u) {
        return Err(Error::Config("search bounds must be finite with lo <= hi".into()));
    }
    let n = free_dims(lower, upper).max(1);
    let pop_size = opts.population_size.unwrap_or(10 * (n + 1)).max(n + 1);
    if opts.budget < pop_size {
        return Err(Error::Budget {
            budget: opts.budget,
            population: pop_size,
        });
    }

    let mut points: Vec<Vec<f64>> = Vec::with_capacity(pop_size);
    for s in seeds.iter().take(pop_size) {
        let mut x = s.clone();
        clamp_into(&mut x, lower, upper);
        points.push(x);
    }
    while points.len() < pop_size {
        points.push(
            lower
                .iter()
                .zip(upper)
                .map(|(&l, &u)| if u > l { rng.random_range(l..=u) } else { l })
                .collect(),
        );
    }
    let mut values: Vec<f64> = points.par_iter().map(|x| sanitize(objective(x))).collect();
    let mut evaluations = pop_size;

    let mut trial = vec![0.0; dim];
    let mut centroid = vec![0.0; dim];
    while evaluations < opts.budget {
        let best = argmin(&values);
        let worst = argmax(&values);

        // Best point plus n distinct others; the last one is reflected
        // through the centroid of the first n.
        let picks = index::sample(rng, pop_size - 1, n);
        let others: Vec<usize> = picks.iter().map(|i| if i >= best { i + 1 } else { i }).collect();
        let reflected = others[n - 1];
        centroid.copy_from_slice(&points[best]);
        for &o in &others[..n - 1] {
            for (c, v) in centroid.iter_mut().zip(&points[o]) {
                *c += v;
            }
        }
        for ((t, c), v) in trial.iter_mut().zip(&centroid).zip(&points[reflected]) {
            *t = 2.0 * c / n as f64 - v;
        }

        let mut accepted = false;
        if in_bounds(&trial, lower, upper) {
            let f = sanitize(objective(&trial));
            evaluations += 1;
            if f < values[worst] {
                points[worst].copy_from_slice(&trial);
                values[worst] = f;
                accepted = true;
            }
        }
        if !accepted && evaluations < opts.budget {
            for (i, t) in trial.iter_mut().enumerate() {
                let w: f64 = rng.random();
                *t = (1.0 + w) * points[best][i] - w * *t;
            }
            clamp_into(&mut trial, lower, upper);
            let f = sanitize(objective(&trial));
            evaluations += 1;
            if f < values[worst] {
                points[worst].copy_from_slice(&trial);
                values[worst] = f;
            }
        }
    }

    let best = argmin(&values);
    Ok(SearchResult {
        x: points.swap_remove(best),
        value: values[best],
        evaluations,
    })
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() { f64::INFINITY } else { v }
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

fn argmax(v: &[f64]) -> usize {
    let mut worst = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[worst] {
            worst = i;
        }
    }
    worst
}

#[derive(Clone, Debug)]
pub struct PolishOptions {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub fd_step: f64,
}

impl Default for PolishOptions {
    fn default() -> Self {
        PolishOptions {
            max_iters: 100,
            rel_tol: 1e-8,
            fd_step: 1e-5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PolishResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub iterations: usize,
}

/// Damped Gauss–Newton on `‖residuals(x)‖²` inside a box.
///
/// The Jacobian uses central differences, falling back to one-sided steps at
/// the bounds. Degenerate dimensions stay fixed. A step is only taken when
/// `objective` decreases, so the returned value never exceeds the start.
pub fn polish<Fr, Fo>(
    residuals: Fr,
    objective: Fo,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &PolishOptions,
) -> PolishResult
where
    Fr: Fn(&[f64]) -> Vec<f64>,
    Fo: Fn(&[f64]) -> f64,
{
    let free: Vec<usize> = (0..x0.len()).filter(|&i| upper[i] > lower[i]).collect();
    let mut x = x0.to_vec();
    let mut value = objective(&x);
    let mut evaluations = 1;
    let mut mu = 1e-3;
    let mut iterations = 0;
    if free.is_empty() || !value.is_finite() {
        return PolishResult { x, value, evaluations, iterations };
    }

    while iterations < opts.max_iters {
        iterations += 1;
        let r0 = DVector::from_vec(residuals(&x));
        let m = r0.len();
        let mut jac = DMatrix::zeros(m, free.len());
        for (col, &i) in free.iter().enumerate() {
            let h = opts.fd_step;
            let (lo, hi) = (x[i] - h >= lower[i], x[i] + h <= upper[i]);
            let mut xp = x.clone();
            let derivative = if lo && hi {
                xp[i] = x[i] + h;
                let rp = DVector::from_vec(residuals(&xp));
                xp[i] = x[i] - h;
                let rm = DVector::from_vec(residuals(&xp));
                evaluations += 2;
                (rp - rm) / (2.0 * h)
            } else if hi {
                xp[i] = x[i] + h;
                evaluations += 1;
                (DVector::from_vec(residuals(&xp)) - &r0) / h
            } else {
                xp[i] = x[i] - h;
                evaluations += 1;
                (&r0 - DVector::from_vec(residuals(&xp))) / h
            };
            jac.set_column(col, &derivative);
        }
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r0;

        let mut improved = None;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for d in 0..free.len() {
                a[(d, d)] += mu * jtj[(d, d)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&grad))) else {
                mu *= 4.0;
                continue;
            };
            let mut cand = x.clone();
            for (k, &i) in free.iter().enumerate() {
                cand[i] += step[k];
            }
            clamp_into(&mut cand, lower, upper);
            let f = objective(&cand);
            evaluations += 1;
            if f < value {
                improved = Some((cand, f));
                mu = (mu / 3.0).max(1e-12);
                break;
            }
            mu *= 4.0;
        }
        let Some((cand, f)) = improved else { break };
        let rel = (value - f) / value.abs().max(f64::MIN_POSITIVE);
        x = cand;
        value = f;
        if rel < opts.rel_tol {
            break;
        }
    }
    PolishResult { x, value, evaluations, iterations }
}
