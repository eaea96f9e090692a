//! Projected-gradient maximization of a concave function over a set with a
//! cheap exact projection (a product of capped simplices, or of nonnegative
//! unit-ball sectors), plus an augmented-Lagrangian wrapper for extra concave
//! `>=` constraints.
//!
//! The ascent uses spectral (Barzilai-Borwein) step lengths with a
//! non-monotone Armijo backtracking search. Every iterate is a convex
//! combination of feasible points, so feasibility is exact up to rounding.

use serde::{Deserialize, Serialize};

/// A closed convex set with an exact Euclidean projection.
pub trait FeasibleSet {
    fn dim(&self) -> usize;
    fn project(&self, v: &mut [f64]);
}

/// `{ x : x >= 0, ||x_G||_2 <= 1 for each group G }`. Groups must be disjoint
/// and cover every coordinate. Projection clips negatives and then rescales
/// each group back onto the ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallSectors {
    pub dim: usize,
    pub groups: Vec<Vec<usize>>,
}

impl FeasibleSet for BallSectors {
    fn dim(&self) -> usize {
        self.dim
    }

    fn project(&self, v: &mut [f64]) {
        for g in &self.groups {
            let mut norm2 = 0.0;
            for &i in g {
                v[i] = v[i].max(0.0);
                norm2 += v[i] * v[i];
            }
            if norm2 > 1.0 {
                let inv = 1.0 / norm2.sqrt();
                for &i in g {
                    v[i] *= inv;
                }
            }
        }
    }
}

/// `{ x : 0 <= x <= upper, sum over each group <= budget }`. Groups must be
/// disjoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    pub upper: Vec<f64>,
    pub groups: Vec<(Vec<usize>, f64)>,
}

impl FeasibleSet for Polytope {
    fn dim(&self) -> usize {
        self.upper.len()
    }

    fn project(&self, v: &mut [f64]) {
        let mut grouped = vec![false; v.len()];
        for (members, budget) in &self.groups {
            for &i in members {
                grouped[i] = true;
            }
            project_capped_simplex(v, members, &self.upper, *budget);
        }
        for i in 0..v.len() {
            if !grouped[i] {
                v[i] = v[i].clamp(0.0, self.upper[i]);
            }
        }
    }
}

impl Polytope {
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        let boxed = x
            .iter()
            .zip(&self.upper)
            .all(|(&xi, &u)| xi >= -tol && xi <= u + tol);
        boxed
            && self
                .groups
                .iter()
                .all(|(m, b)| m.iter().map(|&i| x[i]).sum::<f64>() <= b + tol)
    }
}

/// Projects `v[members]` onto `{0 <= x <= upper, sum x <= budget}`.
fn project_capped_simplex(v: &mut [f64], members: &[usize], upper: &[f64], budget: f64) {
    let clipped = |tau: f64, i: usize, v: &[f64]| (v[i] - tau).clamp(0.0, upper[i]);
    let total: f64 = members.iter().map(|&i| clipped(0.0, i, v)).sum();
    if total <= budget {
        for &i in members {
            v[i] = clipped(0.0, i, v);
        }
        return;
    }
    // sum of clipped(tau) is non-increasing in tau; bracket and bisect
    let mut lo = 0.0;
    let mut hi = members
        .iter()
        .map(|&i| v[i])
        .fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let s: f64 = members.iter().map(|&i| clipped(mid, i, v)).sum();
        if s > budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(1e-300) {
            break;
        }
    }
    // the sum is affine in tau between breakpoints: solve it exactly there
    let tau = 0.5 * (lo + hi);
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    let mut fixed = 0.0;
    for &i in members {
        let shifted = v[i] - tau;
        if shifted >= upper[i] {
            fixed += upper[i];
        } else if shifted > 0.0 {
            free_sum += v[i];
            free_count += 1;
        }
    }
    let tau = if free_count > 0 {
        (free_sum + fixed - budget) / free_count as f64
    } else {
        tau
    };
    for &i in members {
        v[i] = clipped(tau, i, v);
    }
}

/// A concave function with its gradient. `value` may return `-inf` outside
/// the function's domain.
pub trait ConcaveObjective {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], grad: &mut [f64]);
}

/// Adapter for a pair of closures.
pub struct FnObjective<F, G> {
    pub f: F,
    pub g: G,
}

impl<F, G> ConcaveObjective for FnObjective<F, G>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
{
    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        (self.g)(x, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcaveOptions {
    /// Stop once the projected-gradient residual (sup norm) falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ConcaveOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcaveOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// `|| P(x + grad) - x ||_inf` at the returned point.
    pub residual: f64,
    /// True when the residual target was not met.
    pub degraded: bool,
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

fn residual(poly: &impl FeasibleSet, x: &[f64], grad: &[f64], scratch: &mut [f64]) -> f64 {
    for i in 0..x.len() {
        scratch[i] = x[i] + grad[i];
    }
    poly.project(scratch);
    scratch
        .iter()
        .zip(x)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

const HISTORY: usize = 10;
const ARMIJO: f64 = 1e-4;
const STEP_MIN: f64 = 1e-30;
const STEP_MAX: f64 = 1e30;

/// Maximizes a concave objective over a feasible set starting from the
/// projection of `start`.
pub fn maximize_concave(
    objective: &impl ConcaveObjective,
    poly: &impl FeasibleSet,
    start: &[f64],
    options: &ConcaveOptions,
) -> ConcaveOutcome {
    let n = poly.dim();
    let mut x = start.to_vec();
    poly.project(&mut x);
    let mut f = sanitize(objective.value(&x));
    let mut g = vec![0.0; n];
    objective.gradient(&x, &mut g);
    let mut scratch = vec![0.0; n];
    let mut res = residual(poly, &x, &g, &mut scratch);
    if res <= options.tolerance || n == 0 {
        return ConcaveOutcome {
            x,
            value: f,
            iterations: 0,
            residual: res,
            degraded: false,
        };
    }

    let mut history = vec![f];
    let mut step = (1.0 / res).clamp(STEP_MIN, STEP_MAX);
    let mut best = (f, x.clone(), res);
    let mut trial = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut iterations = 0;

    while iterations < options.max_iterations {
        iterations += 1;
        for i in 0..n {
            dir[i] = x[i] + step * g[i];
        }
        poly.project(&mut dir);
        let mut slope = 0.0;
        for i in 0..n {
            dir[i] -= x[i];
            slope += g[i] * dir[i];
        }
        let reference = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut t = 1.0;
        let mut accepted = false;
        let mut f_trial = f64::NEG_INFINITY;
        for _ in 0..60 {
            for i in 0..n {
                trial[i] = x[i] + t * dir[i];
            }
            f_trial = sanitize(objective.value(&trial));
            if f_trial >= reference + ARMIJO * t * slope {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        objective.gradient(&trial, &mut g_new);
        let mut ss = 0.0;
        let mut sy = 0.0;
        for i in 0..n {
            let s = trial[i] - x[i];
            ss += s * s;
            // curvature of the negated objective
            sy -= s * (g_new[i] - g[i]);
        }
        step = if sy > 0.0 {
            (ss / sy).clamp(STEP_MIN, STEP_MAX)
        } else {
            STEP_MAX.min(step * 10.0)
        };
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut g, &mut g_new);
        f = f_trial;
        history.push(f);
        if history.len() > HISTORY {
            history.remove(0);
        }
        res = residual(poly, &x, &g, &mut scratch);
        if f >= best.0 {
            best = (f, x.clone(), res);
        }
        if res <= options.tolerance {
            return ConcaveOutcome {
                x,
                value: f,
                iterations,
                residual: res,
                degraded: false,
            };
        }
    }
    let (value, x, residual) = best;
    ConcaveOutcome {
        degraded: residual > options.tolerance,
        x,
        value,
        iterations,
        residual,
    }
}

/// A concave constraint `g(x) >= target`, expressed through the objective
/// below.
pub trait ConstrainedObjective {
    fn constraint_count(&self) -> usize;
    /// Objective value and normalized constraint slacks `h_i = (b_i - g_i)/b_i`
    /// (feasible when `<= 0`).
    fn evaluate(&self, x: &[f64], slack: &mut [f64]) -> f64;
    /// Gradient of `objective + sum_i w_i * g_i / b_i`.
    fn weighted_gradient(&self, x: &[f64], weights: &[f64], grad: &mut [f64]);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedOutcome {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Largest normalized constraint violation, 0 when feasible.
    pub violation: f64,
    pub slack: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub iterations: usize,
    pub degraded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentedOptions {
    pub inner: ConcaveOptions,
    pub feasibility: f64,
    pub max_outer: usize,
    pub penalty_start: f64,
    pub penalty_max: f64,
}

impl Default for AugmentedOptions {
    fn default() -> Self {
        Self {
            inner: ConcaveOptions::default(),
            feasibility: 1e-8,
            max_outer: 40,
            penalty_start: 10.0,
            penalty_max: 1e9,
        }
    }
}

struct Lagrangian<'a, P: ConstrainedObjective> {
    problem: &'a P,
    mu: &'a [f64],
    rho: f64,
}

impl<P: ConstrainedObjective> Lagrangian<'_, P> {
    fn multiplier_estimate(&self, slack: &[f64]) -> Vec<f64> {
        slack
            .iter()
            .zip(self.mu)
            .map(|(&h, &m)| (m + self.rho * h).max(0.0))
            .collect()
    }
}

impl<P: ConstrainedObjective> ConcaveObjective for Lagrangian<'_, P> {
    fn value(&self, x: &[f64]) -> f64 {
        let mut slack = vec![0.0; self.problem.constraint_count()];
        let f = self.problem.evaluate(x, &mut slack);
        if !f.is_finite() || slack.iter().any(|h| !h.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let penalty: f64 = slack
            .iter()
            .zip(self.mu)
            .map(|(&h, &m)| {
                let shifted = (m + self.rho * h).max(0.0);
                shifted * shifted - m * m
            })
            .sum();
        f - penalty / (2.0 * self.rho)
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        let mut slack = vec![0.0; self.problem.constraint_count()];
        self.problem.evaluate(x, &mut slack);
        let weights = self.multiplier_estimate(&slack);
        grad.fill(0.0);
        self.problem.weighted_gradient(x, &weights, grad);
    }
}

/// Maximizes a concave objective subject to concave `>=` constraints and the
/// polytope, by the method of multipliers. Multipliers may be warm-started.
pub fn maximize_constrained(
    problem: &impl ConstrainedObjective,
    poly: &impl FeasibleSet,
    start: &[f64],
    warm_multipliers: Option<&[f64]>,
    options: &AugmentedOptions,
) -> ConstrainedOutcome {
    let m = problem.constraint_count();
    let mut mu = warm_multipliers.map_or(vec![0.0; m], |w| w.to_vec());
    let mut rho = options.penalty_start;
    let mut x = start.to_vec();
    poly.project(&mut x);
    let mut slack = vec![0.0; m];
    let mut iterations = 0;
    let mut degraded = false;
    let mut last_violation = f64::INFINITY;

    if m == 0 {
        let lagr = Lagrangian {
            problem,
            mu: &mu,
            rho,
        };
        let out = maximize_concave(&lagr, poly, &x, &options.inner);
        let objective = problem.evaluate(&out.x, &mut slack);
        return ConstrainedOutcome {
            x: out.x,
            objective,
            violation: 0.0,
            slack,
            multipliers: mu,
            iterations: out.iterations,
            degraded: out.degraded,
        };
    }

    for _ in 0..options.max_outer {
        let lagr = Lagrangian {
            problem,
            mu: &mu,
            rho,
        };
        let out = maximize_concave(&lagr, poly, &x, &options.inner);
        iterations += out.iterations;
        degraded = out.degraded;
        x = out.x;
        problem.evaluate(&x, &mut slack);
        let violation = slack.iter().copied().fold(0.0, f64::max);
        let complementarity = slack
            .iter()
            .zip(&mu)
            .map(|(&h, &mm)| (mm * h).abs())
            .fold(0.0, f64::max);
        for i in 0..m {
            mu[i] = (mu[i] + rho * slack[i]).max(0.0);
        }
        if violation <= options.feasibility && complementarity <= options.inner.tolerance.max(1e-9)
        {
            break;
        }
        if violation > 0.25 * last_violation {
            if rho >= options.penalty_max {
                // the penalty is capped and feasibility no longer improves
                degraded = true;
                break;
            }
            rho = (rho * 10.0).min(options.penalty_max);
        }
        last_violation = violation;
    }
    let objective = problem.evaluate(&x, &mut slack);
    let violation = slack.iter().copied().fold(0.0, f64::max);
    ConstrainedOutcome {
        x,
        objective,
        violation,
        slack,
        multipliers: mu,
        iterations,
        degraded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bowl(center: Vec<f64>) -> impl ConcaveObjective {
        let c2 = center.clone();
        FnObjective {
            f: move |x: &[f64]| {
                -x.iter()
                    .zip(&center)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
            },
            g: move |x: &[f64], g: &mut [f64]| {
                for i in 0..x.len() {
                    g[i] = -2.0 * (x[i] - c2[i]);
                }
            },
        }
    }

    fn single_group(n: usize, budget: f64) -> Polytope {
        Polytope {
            upper: vec![budget; n],
            groups: vec![((0..n).collect(), budget)],
        }
    }

    #[test]
    fn interior_optimum_of_bowl() {
        let poly = single_group(3, 10.0);
        let out = maximize_concave(
            &bowl(vec![1.0, 2.0, 0.5]),
            &poly,
            &[0.0; 3],
            &ConcaveOptions::default(),
        );
        for (a, b) in out.x.iter().zip([1.0, 2.0, 0.5]) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(!out.degraded);
    }

    #[test]
    fn budget_face_optimum() {
        // unconstrained peak at (2, 2) lies outside sum <= 1
        let poly = single_group(2, 1.0);
        let out = maximize_concave(
            &bowl(vec![2.0, 2.5]),
            &poly,
            &[0.1, 0.1],
            &ConcaveOptions::default(),
        );
        assert_relative_eq!(out.x.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        // projection of (2, 2.5) onto the simplex is (0.25, 0.75)
        assert_relative_eq!(out.x[0], 0.25, epsilon = 1e-6);
        assert_relative_eq!(out.x[1], 0.75, epsilon = 1e-6);
    }

    #[test]
    fn start_at_optimum_returns_immediately() {
        let poly = single_group(2, 10.0);
        let out = maximize_concave(
            &bowl(vec![1.0, 1.0]),
            &poly,
            &[1.0, 1.0],
            &ConcaveOptions::default(),
        );
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn projection_is_exact() {
        let poly = Polytope {
            upper: vec![1.0, 0.3, 1.0, 5.0],
            groups: vec![(vec![0, 1, 2], 1.0)],
        };
        let mut v = vec![0.9, 0.8, -0.2, 7.0];
        poly.project(&mut v);
        assert_relative_eq!(v[0] + v[1] + v[2], 1.0, epsilon = 1e-12);
        assert_eq!(v[1], 0.3);
        assert_eq!(v[2], 0.0);
        assert_eq!(v[3], 5.0);
        assert_relative_eq!(v[0], 0.7, epsilon = 1e-12);
    }

    struct LinearWithDisk;

    impl ConstrainedObjective for LinearWithDisk {
        fn constraint_count(&self) -> usize {
            1
        }
        // minimize x0 + x1 subject to sqrt(x0) + sqrt(x1) >= 1
        fn evaluate(&self, x: &[f64], slack: &mut [f64]) -> f64 {
            slack[0] = 1.0 - (x[0].sqrt() + x[1].sqrt());
            -(x[0] + x[1])
        }
        fn weighted_gradient(&self, x: &[f64], w: &[f64], g: &mut [f64]) {
            for i in 0..2 {
                g[i] = -1.0 + w[0] * 0.5 / x[i].max(1e-30).sqrt();
            }
        }
    }

    #[test]
    fn augmented_lagrangian_hits_constraint() {
        let poly = single_group(2, 10.0);
        let out = maximize_constrained(
            &LinearWithDisk,
            &poly,
            &[1.0, 1.0],
            None,
            &AugmentedOptions::default(),
        );
        // optimum x0 = x1 = 1/4
        assert!(out.violation <= 1e-8);
        assert_relative_eq!(out.x[0], 0.25, epsilon = 1e-5);
        assert_relative_eq!(out.x[1], 0.25, epsilon = 1e-5);
    }
}
