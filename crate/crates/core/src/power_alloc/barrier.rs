//! Log-barrier Newton solver for the minimum-power surrogate.
//!
//! Works in the amplitude variables `u = sqrt(p / budget)` of
//! [`super::Transformed`]: minimize `sum p / power_ref` subject to transformed
//! rate floors and one unit ball per AP. The sign of `u` is left free since
//! flipping a negative amplitude never hurts; callers take `|u|`.

use nalgebra::{DMatrix, DVector};

use super::transform::log2_extended;
use super::RateConstraint;
use crate::rate_energy::LinkSet;

/// Barrier growth factor between centering steps.
const GROWTH: f64 = 100.0;
const MAX_CENTERING: usize = 40;
const MAX_NEWTON: usize = 60;
/// Stop centering once half the squared Newton decrement is below this.
const DECREMENT_TOL: f64 = 1e-10;

pub(crate) struct MinPowerSurrogate<'a> {
    pub links: &'a LinkSet,
    pub y: &'a [f64],
    pub scale: &'a [f64],
    pub groups: &'a [Vec<usize>],
    pub constraints: &'a [RateConstraint],
    pub power_ref: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct BarrierOutcome {
    pub u: Vec<f64>,
    pub newton_steps: usize,
    pub converged: bool,
}

/// Derivatives of one link's transformed rate.
struct LinkTerms {
    rate: f64,
    /// `(index, d rate / d u_index)`
    grad: Vec<(usize, f64)>,
    /// Coefficient of the rank-one part `grad_arg grad_arg^T`.
    outer: f64,
    /// `(index, d^2 rate / d u_index^2)` from the interference curvature.
    diag: Vec<(usize, f64)>,
}

impl MinPowerSurrogate<'_> {
    fn dim(&self) -> usize {
        self.links.len()
    }

    fn power(&self, u: &[f64]) -> f64 {
        u.iter()
            .zip(self.scale)
            .map(|(a, b)| b * a * a)
            .sum::<f64>()
            / self.power_ref
    }

    fn arg(&self, l: usize, u: &[f64]) -> f64 {
        let link = &self.links.links[l];
        let y = self.y[l];
        let interference: f64 = link
            .interferers
            .iter()
            .map(|&(i, c)| c * self.scale[i] * u[i] * u[i])
            .sum();
        let own = 2.0 * y * (link.gain * self.scale[l]).sqrt() * u[l];
        1.0 + link.snr_factor * (own - y * y * (interference + link.noise))
    }

    fn link_terms(&self, l: usize, u: &[f64]) -> LinkTerms {
        let link = &self.links.links[l];
        let y = self.y[l];
        let k = link.snr_factor;
        let arg = self.arg(l, u);
        let ln2 = std::f64::consts::LN_2;
        let slope = link.weight / (ln2 * arg.max(1.0));
        let curvature = if arg > 1.0 {
            -link.weight / (ln2 * arg * arg)
        } else {
            0.0
        };
        let mut darg = Vec::with_capacity(1 + link.interferers.len());
        darg.push((l, 2.0 * k * y * (link.gain * self.scale[l]).sqrt()));
        let mut diag = Vec::with_capacity(link.interferers.len());
        for &(i, c) in &link.interferers {
            darg.push((i, -2.0 * k * y * y * c * self.scale[i] * u[i]));
            diag.push((i, slope * -2.0 * k * y * y * c * self.scale[i]));
        }
        LinkTerms {
            rate: link.weight * log2_extended(arg),
            grad: darg.iter().map(|&(i, d)| (i, slope * d)).collect(),
            outer: if slope > 0.0 {
                curvature / (slope * slope)
            } else {
                0.0
            },
            diag,
        }
    }

    /// Constraint slacks `(g_k, h_G)`, or `None` outside the barrier domain.
    fn slacks(&self, u: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let rates: Vec<f64> = (0..self.dim())
            .map(|l| self.links.links[l].weight * log2_extended(self.arg(l, u)))
            .collect();
        let g: Vec<f64> = self
            .constraints
            .iter()
            .map(|c| c.links.iter().map(|&l| rates[l]).sum::<f64>() / c.target - 1.0)
            .collect();
        let h: Vec<f64> = self
            .groups
            .iter()
            .map(|grp| 1.0 - grp.iter().map(|&i| u[i] * u[i]).sum::<f64>())
            .collect();
        let inside = g.iter().chain(&h).all(|&s| s > 0.0 && s.is_finite());
        inside.then_some((g, h))
    }

    fn barrier(&self, u: &[f64], t: f64) -> Option<f64> {
        let (g, h) = self.slacks(u)?;
        let logs: f64 = g.iter().chain(&h).map(|s| s.ln()).sum();
        Some(t * self.power(u) - logs)
    }

    /// Gradient and Hessian of the barrier function at a domain point.
    fn derivatives(&self, u: &[f64], t: f64) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.dim();
        let terms: Vec<LinkTerms> = (0..n).map(|l| self.link_terms(l, u)).collect();
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);

        for l in 0..n {
            grad[l] += t * 2.0 * self.scale[l] * u[l] / self.power_ref;
            hess[(l, l)] += t * 2.0 * self.scale[l] / self.power_ref;
        }

        let mut link_coef = vec![0.0; n];
        let mut dg = DVector::zeros(n);
        for c in self.constraints {
            let value: f64 = c.links.iter().map(|&l| terms[l].rate).sum::<f64>() / c.target - 1.0;
            dg.fill(0.0);
            for &l in &c.links {
                for &(i, d) in &terms[l].grad {
                    dg[i] += d / c.target;
                }
                link_coef[l] += 1.0 / (value * c.target);
            }
            grad.axpy(-1.0 / value, &dg, 1.0);
            hess.ger(1.0 / (value * value), &dg, &dg, 1.0);
        }
        // minus the constraint curvature, which is negative semidefinite
        for l in 0..n {
            let coef = link_coef[l];
            if coef == 0.0 {
                continue;
            }
            let term = &terms[l];
            for &(i, d) in &term.diag {
                hess[(i, i)] -= coef * d;
            }
            if term.outer != 0.0 {
                for &(i, di) in &term.grad {
                    for &(j, dj) in &term.grad {
                        hess[(i, j)] -= coef * term.outer * di * dj;
                    }
                }
            }
        }

        for grp in self.groups {
            let h = 1.0 - grp.iter().map(|&i| u[i] * u[i]).sum::<f64>();
            for &i in grp {
                grad[i] += 2.0 * u[i] / h;
                hess[(i, i)] += 2.0 / h;
                for &j in grp {
                    hess[(i, j)] += 4.0 * u[i] * u[j] / (h * h);
                }
            }
        }
        (grad, hess)
    }

    /// Minimizes from a strictly feasible `start`; `None` when `start` is
    /// outside the barrier domain. `weight` overrides the initial barrier
    /// weight; `m / weight` should roughly match the expected objective
    /// decrease from `start`.
    pub fn solve(
        &self,
        start: &[f64],
        relative_gap: f64,
        weight: Option<f64>,
    ) -> Option<BarrierOutcome> {
        let n = self.dim();
        let mut u = start.to_vec();
        self.slacks(&u)?;
        let m = (self.constraints.len() + self.groups.len()) as f64;
        let mut t = weight.unwrap_or(m / self.power(&u).max(1e-12));
        let mut newton_steps = 0;
        let mut converged = false;

        for _ in 0..MAX_CENTERING {
            for _ in 0..MAX_NEWTON {
                let (grad, hess) = self.derivatives(&u, t);
                let step = match newton_direction(hess, &grad) {
                    Some(d) => d,
                    None => break,
                };
                let decrement = -grad.dot(&step);
                if decrement / 2.0 <= DECREMENT_TOL {
                    break;
                }
                newton_steps += 1;
                let phi = self.barrier(&u, t).expect("iterate stays in the domain");
                let mut alpha = 1.0;
                let mut trial = vec![0.0; n];
                let mut moved = false;
                for _ in 0..60 {
                    for i in 0..n {
                        trial[i] = u[i] + alpha * step[i];
                    }
                    if let Some(v) = self.barrier(&trial, t) {
                        if v <= phi - 0.25 * alpha * decrement {
                            moved = true;
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                if !moved {
                    break;
                }
                std::mem::swap(&mut u, &mut trial);
            }
            let power = self.power(&u);
            if m / t <= relative_gap * power.max(1e-12) {
                converged = true;
                break;
            }
            t *= GROWTH;
        }
        for v in &mut u {
            *v = v.abs();
        }
        Some(BarrierOutcome {
            u,
            newton_steps,
            converged,
        })
    }
}

/// Solves `hess * d = -grad`, adding diagonal damping if the matrix is not
/// numerically positive definite.
fn newton_direction(hess: DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = hess.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut shift = 0.0;
    for _ in 0..12 {
        let mut h = hess.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += shift;
        }
        if let Some(chol) = h.cholesky() {
            return Some(-chol.solve(grad));
        }
        shift = if shift == 0.0 {
            1e-12 * scale
        } else {
            shift * 100.0
        };
    }
    None
}
