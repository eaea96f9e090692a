//! Energy-efficient power allocation for a fixed AP assignment and subchannel
//! grant.
//!
//! The sum rate and total power are traded off with the epsilon-constraint
//! method: first the largest achievable sum rate `R_max` is found, then for
//! each `lambda` in `{step, 2 step, ..., 1}` the transmit power is minimized
//! subject to a sum rate of at least `lambda * R_max`. Both subproblems are
//! non-convex in the powers; each is solved by alternating a closed-form
//! update of the quadratic-transform auxiliaries with a concave program in
//! the powers. The entry with the best EE is returned.
//!
//! Minimum-rate constraints apply to every served user whose target is
//! reachable; users that cannot reach it even alone at full budget, or that
//! turn out jointly infeasible, have the constraint dropped and are reported.

mod barrier;
pub mod solver;
pub mod transform;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::channel::ChannelState;
use crate::rate_energy::{circuit_power, Allocation, LinkSet};
use crate::scenario::ScenarioConfig;

use solver::{
    maximize_constrained, AugmentedOptions, BallSectors, ConcaveOptions, ConstrainedObjective,
};
use transform::{accumulate_amplitude_gradient, optimal_aux, transformed_rate};

pub use solver::{maximize_concave, ConcaveObjective, ConcaveOutcome, FnObjective};
pub use transform::{optimal_y, quad_sinr};

/// Alternation cap for both outer loops.
pub const MAX_ALTERNATIONS: usize = 50;

/// Relative slack used when checking rate targets on returned solutions.
pub const RATE_RTOL: f64 = 1e-6;

/// Auxiliary variables, one per active link in [`LinkSet`] order.
pub type AuxiliaryVars = Vec<f64>;

/// A rate floor over a set of links.
#[derive(Debug, Clone, PartialEq)]
struct RateConstraint {
    links: Vec<usize>,
    target: f64,
}

/// Transformed subproblem in budget-normalized amplitudes
/// `u = sqrt(p / budget)`, where each AP's feasible set is the nonnegative
/// part of the unit ball. Objective:
/// `rate_weight * sum of transformed rates - power_weight * sum p`.
struct Transformed<'a> {
    links: &'a LinkSet,
    y: &'a [f64],
    scale: &'a [f64],
    rate_weight: f64,
    power_weight: f64,
    constraints: &'a [RateConstraint],
    /// Constraint indices each link contributes to.
    membership: &'a [Vec<usize>],
}

impl Transformed<'_> {
    fn powers(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(self.scale).map(|(a, b)| b * a * a).collect()
    }
}

impl ConstrainedObjective for Transformed<'_> {
    fn constraint_count(&self) -> usize {
        self.constraints.len()
    }

    fn evaluate(&self, u: &[f64], slack: &mut [f64]) -> f64 {
        let p = self.powers(u);
        let rates: Vec<f64> = (0..self.links.len())
            .map(|l| transformed_rate(self.links, l, &p, self.y))
            .collect();
        if rates.iter().any(|r| !r.is_finite()) {
            slack.fill(f64::INFINITY);
            return f64::NEG_INFINITY;
        }
        for (i, c) in self.constraints.iter().enumerate() {
            let got: f64 = c.links.iter().map(|&l| rates[l]).sum();
            slack[i] = (c.target - got) / c.target;
        }
        self.rate_weight * rates.iter().sum::<f64>() - self.power_weight * p.iter().sum::<f64>()
    }

    fn weighted_gradient(&self, u: &[f64], weights: &[f64], grad: &mut [f64]) {
        let omega: Vec<f64> = self
            .membership
            .iter()
            .map(|m| {
                self.rate_weight
                    + m.iter()
                        .map(|&i| weights[i] / self.constraints[i].target)
                        .sum::<f64>()
            })
            .collect();
        grad.fill(0.0);
        accumulate_amplitude_gradient(self.links, u, self.scale, self.y, &omega, grad);
        for l in 0..u.len() {
            grad[l] -= self.power_weight * 2.0 * self.scale[l] * u[l];
        }
    }
}

/// Outcome of the `R_max` stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmaxSolution {
    pub rmax: f64,
    pub p: Vec<f64>,
    pub y: AuxiliaryVars,
    /// True sum rate after each alternation.
    pub trace: Vec<f64>,
    pub degraded: bool,
}

/// Outcome of one minimum-power subproblem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinPowerSolution {
    pub p: Vec<f64>,
    pub y: AuxiliaryVars,
    pub transmit_power: f64,
    pub sum_rate: f64,
    /// Transmit power after each alternation.
    pub trace: Vec<f64>,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoEntry {
    pub lambda: f64,
    pub epsilon: f64,
    pub p: Vec<f64>,
    pub y: AuxiliaryVars,
    pub sum_rate: f64,
    pub total_power: f64,
    pub ee: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoFrontier {
    /// Sorted by `lambda` ascending.
    pub entries: Vec<ParetoEntry>,
}

impl ParetoFrontier {
    /// Index of the entry with the highest EE (first on ties).
    pub fn best(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, e) in self.entries.iter().enumerate() {
            if best.is_none_or(|b| e.ee > self.entries[b].ee) {
                best = Some(i);
            }
        }
        best
    }

    /// True when no entry dominates another: at least as much rate and at
    /// most as much power, strictly better in one.
    pub fn is_non_dominated(&self) -> bool {
        for a in &self.entries {
            for b in &self.entries {
                let weakly = a.sum_rate >= b.sum_rate && a.total_power <= b.total_power;
                let strictly = a.sum_rate > b.sum_rate || a.total_power < b.total_power;
                if weakly && strictly {
                    return false;
                }
            }
        }
        true
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> crate::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "lambda",
            "epsilon_bps",
            "sum_rate_bps",
            "total_power_w",
            "ee",
        ])?;
        for e in &self.entries {
            w.write_record(&[
                e.lambda.to_string(),
                e.epsilon.to_string(),
                e.sum_rate.to_string(),
                e.total_power.to_string(),
                e.ee.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The lambda grid `{step, 2 step, ..., 1}` with `ceil(1/step)` points.
pub fn lambda_grid(step: f64) -> Vec<f64> {
    let n = ((1.0 / step) - 1e-9).ceil().max(1.0) as usize;
    (1..=n).map(|i| (i as f64 * step).min(1.0)).collect()
}

/// Power allocation problem for one `(x, s)`.
#[derive(Debug, Clone)]
pub struct PowerProblem<'a> {
    pub links: LinkSet,
    channel: &'a ChannelState,
    config: &'a ScenarioConfig,
    scale: Vec<f64>,
    poly: BallSectors,
    /// Users whose minimum rate is enforced.
    pub qos_users: Vec<usize>,
    /// Served users whose minimum rate had to be dropped.
    pub dropped_users: Vec<usize>,
}

impl<'a> PowerProblem<'a> {
    pub fn new(alloc: &Allocation, channel: &'a ChannelState, config: &'a ScenarioConfig) -> Self {
        let links = LinkSet::from_allocation(alloc, channel, config);
        let mut scale = vec![0.0; links.len()];
        let mut groups = Vec::new();
        for g in &links.groups {
            for &l in &g.links {
                scale[l] = g.budget;
            }
            groups.push(g.links.clone());
        }
        let poly = BallSectors {
            dim: links.len(),
            groups,
        };
        let mut problem = Self {
            links,
            channel,
            config,
            scale,
            poly,
            qos_users: Vec::new(),
            dropped_users: Vec::new(),
        };
        if config.r_min > 0.0 {
            for j in 0..alloc.user_count() {
                if !alloc.a[j] || problem.links.user_links[j].is_empty() {
                    continue;
                }
                if problem.standalone_capacity(j) >= config.r_min {
                    problem.qos_users.push(j);
                } else {
                    problem.dropped_users.push(j);
                }
            }
        }
        problem
    }

    /// Largest rate user `j` could get with every one of its APs' budgets and
    /// no interference (water-filling per AP).
    pub fn standalone_capacity(&self, j: usize) -> f64 {
        let mine = &self.links.user_links[j];
        let mut total = 0.0;
        for g in &self.links.groups {
            let own: Vec<usize> = g
                .links
                .iter()
                .copied()
                .filter(|l| mine.contains(l))
                .collect();
            if own.is_empty() {
                continue;
            }
            // p_l = max(0, w_l * level - noise_l / (k_l a_l))
            let floor = |l: usize| {
                let link = &self.links.links[l];
                if link.gain > 0.0 {
                    link.noise / (link.snr_factor * link.gain)
                } else {
                    f64::INFINITY
                }
            };
            let alloc_at = |level: f64| -> Vec<f64> {
                own.iter()
                    .map(|&l| (self.links.links[l].weight * level - floor(l)).max(0.0))
                    .collect()
            };
            let (mut lo, mut hi) = (0.0, 1.0);
            while alloc_at(hi).iter().sum::<f64>() < g.budget && hi < 1e300 {
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if alloc_at(mid).iter().sum::<f64>() > g.budget {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            for (&l, p) in own.iter().zip(alloc_at(lo)) {
                let link = &self.links.links[l];
                total += link.weight * (1.0 + link.snr_factor * p * link.gain / link.noise).log2();
            }
        }
        total
    }

    pub fn equal_powers(&self) -> Vec<f64> {
        self.links.equal_powers(self.channel.subchannel_count())
    }

    pub fn circuit(&self) -> f64 {
        circuit_power(self.channel, self.config)
    }

    fn to_q(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(&self.scale)
            .map(|(a, b)| (a / b).max(0.0).sqrt())
            .collect()
    }

    fn to_p(&self, q: &[f64]) -> Vec<f64> {
        q.iter().zip(&self.scale).map(|(a, b)| b * a * a).collect()
    }

    fn options(&self) -> AugmentedOptions {
        AugmentedOptions {
            inner: ConcaveOptions {
                tolerance: 1e-6,
                max_iterations: 500,
            },
            ..Default::default()
        }
    }

    fn qos_constraints(&self) -> Vec<RateConstraint> {
        self.qos_users
            .iter()
            .map(|&j| RateConstraint {
                links: self.links.user_links[j].clone(),
                target: self.config.r_min,
            })
            .collect()
    }

    fn membership(&self, constraints: &[RateConstraint]) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.links.len()];
        for (i, c) in constraints.iter().enumerate() {
            for &l in &c.links {
                m[l].push(i);
            }
        }
        m
    }

    /// True when every enforced user meets the target at powers `p`.
    pub fn meets_qos(&self, p: &[f64]) -> bool {
        let rates = self.links.user_rates(p);
        self.qos_users
            .iter()
            .all(|&j| rates[j] >= self.config.r_min * (1.0 - RATE_RTOL))
    }

    /// Equal split, except that on every subchannel shared by interfering
    /// APs only the link with the best interference-free rate transmits.
    /// Links of users with an enforced minimum rate are never silenced.
    /// `None` when nothing would be silenced.
    pub fn interference_free_start(&self) -> Option<Vec<f64>> {
        let epa = self.equal_powers();
        let solo: Vec<f64> = (0..self.links.len())
            .map(|l| {
                let link = &self.links.links[l];
                link.weight * (1.0 + link.snr_factor * epa[l] * link.gain / link.noise).log2()
            })
            .collect();
        let mut p = epa.clone();
        for (l, link) in self.links.links.iter().enumerate() {
            // ties go to the lower index
            let beaten = link
                .interferers
                .iter()
                .any(|&(i, _)| solo[i] > solo[l] || (solo[i] == solo[l] && i < l));
            if beaten && !self.qos_users.contains(&link.user) {
                p[l] = 0.0;
            }
        }
        (p != epa).then_some(p)
    }

    /// Largest sum rate. The alternation runs from the equal split and, when
    /// links interfere, also from [`Self::interference_free_start`]; the
    /// better result that meets every enforced minimum rate is kept. Users
    /// found jointly infeasible are moved from `qos_users` to
    /// `dropped_users` and the stage is re-run.
    pub fn solve_rmax(&mut self) -> RmaxSolution {
        loop {
            let mut sol = self.rmax_once(self.equal_powers());
            if let Some(start) = self.interference_free_start() {
                let alt = self.rmax_once(start);
                if alt.rmax > sol.rmax && self.meets_qos(&alt.p) {
                    sol = alt;
                }
            }
            let rates = self.links.user_rates(&sol.p);
            let failing: Vec<usize> = self
                .qos_users
                .iter()
                .copied()
                .filter(|&j| rates[j] < self.config.r_min * (1.0 - RATE_RTOL))
                .collect();
            if failing.is_empty() {
                return sol;
            }
            debug!("dropping minimum-rate constraint of users {failing:?}");
            self.qos_users.retain(|j| !failing.contains(j));
            self.dropped_users.extend(failing);
            self.dropped_users.sort_unstable();
        }
    }

    fn rmax_once(&self, start: Vec<f64>) -> RmaxSolution {
        let mut p = start;
        let mut y = optimal_aux(&self.links, &p);
        if self.links.is_empty() {
            return RmaxSolution {
                rmax: 0.0,
                p,
                y,
                trace: vec![0.0],
                degraded: false,
            };
        }
        let constraints = self.qos_constraints();
        let membership = self.membership(&constraints);
        let reference = self.links.sum_rate(&p).max(1.0);
        let opts = self.options();
        let mut q = self.to_q(&p);
        let mut multipliers: Option<Vec<f64>> = None;
        let mut trace = Vec::new();
        let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
        let mut degraded = false;
        for _ in 0..MAX_ALTERNATIONS {
            let sub = Transformed {
                links: &self.links,
                y: &y,
                scale: &self.scale,
                rate_weight: 1.0 / reference,
                power_weight: 0.0,
                constraints: &constraints,
                membership: &membership,
            };
            let out = maximize_constrained(&sub, &self.poly, &q, multipliers.as_deref(), &opts);
            degraded |= out.degraded;
            q = out.x;
            // multipliers from a stalled solve are inflated; start afresh
            multipliers = (!out.degraded).then_some(out.multipliers);
            p = self.to_p(&q);
            y = optimal_aux(&self.links, &p);
            let rate = self.links.sum_rate(&p);
            trace.push(rate);
            let previous = best.as_ref().map(|b| b.0);
            if previous.is_none_or(|r| rate >= r) {
                best = Some((rate, p.clone(), y.clone()));
            }
            if let Some(r) = previous {
                if rate - r <= self.config.solver_tolerance * r.max(f64::MIN_POSITIVE) {
                    break;
                }
            }
        }
        let (rmax, p, y) = best.expect("at least one alternation");
        RmaxSolution {
            rmax,
            p,
            y,
            trace,
            degraded,
        }
    }

    /// Minimum transmit power reaching sum rate `epsilon`, starting the
    /// alternation from powers `start`.
    ///
    /// Each surrogate is solved by a barrier method from the previous iterate,
    /// which stays strictly feasible after the `y` update because the
    /// transformed rates can only grow. Targets carry half of [`RATE_RTOL`]
    /// as slack so a start sitting exactly on a floor is still interior. If
    /// the start is not interior the augmented-Lagrangian path is used.
    pub fn solve_min_power(&self, epsilon: f64, start: &[f64]) -> MinPowerSolution {
        let mut p = start.to_vec();
        let mut y = optimal_aux(&self.links, &p);
        if self.links.is_empty() {
            return MinPowerSolution {
                sum_rate: 0.0,
                transmit_power: 0.0,
                p,
                y,
                trace: vec![0.0],
                feasible: epsilon <= 0.0,
            };
        }
        let slack = 1.0 - 0.5 * RATE_RTOL;
        let mut constraints = self.qos_constraints();
        for c in &mut constraints {
            c.target *= slack;
        }
        if epsilon > 0.0 {
            constraints.push(RateConstraint {
                links: (0..self.links.len()).collect(),
                target: epsilon * slack,
            });
        }
        let membership = self.membership(&constraints);
        let reference: f64 = self.links.groups.iter().map(|g| g.budget).sum();
        let opts = self.options();
        let mut u = self.to_q(&p);
        // budgets are often tight at the start; pull those APs just inside
        for g in &self.poly.groups {
            let norm2: f64 = g.iter().map(|&i| u[i] * u[i]).sum();
            if norm2 >= 1.0 - 1e-12 {
                let shrink = (1.0 - 1e-9) / norm2.sqrt();
                for &i in g {
                    u[i] *= shrink;
                }
            }
        }
        p = self.to_p(&u);
        y = optimal_aux(&self.links, &p);
        let mut multipliers: Option<Vec<f64>> = None;
        let mut trace = Vec::new();
        let mut previous = p.iter().sum::<f64>();
        let mut weight = None;
        for _ in 0..MAX_ALTERNATIONS {
            let surrogate = barrier::MinPowerSurrogate {
                links: &self.links,
                y: &y,
                scale: &self.scale,
                groups: &self.poly.groups,
                constraints: &constraints,
                power_ref: reference,
            };
            let next = match surrogate.solve(&u, 1e-2 * self.config.solver_tolerance, weight) {
                Some(out) => {
                    if !out.converged {
                        debug!(
                            "barrier solve stopped after {} Newton steps",
                            out.newton_steps
                        );
                    }
                    out.u
                }
                None => {
                    debug!("min-power start not interior, using the penalty path");
                    let sub = Transformed {
                        links: &self.links,
                        y: &y,
                        scale: &self.scale,
                        rate_weight: 0.0,
                        power_weight: 1.0 / reference,
                        constraints: &constraints,
                        membership: &membership,
                    };
                    let out =
                        maximize_constrained(&sub, &self.poly, &u, multipliers.as_deref(), &opts);
                    multipliers = Some(out.multipliers);
                    out.x
                }
            };
            let power: f64 = self.to_p(&next).iter().sum();
            if power > previous && !trace.is_empty() {
                // the surrogate gap can leave a hair above the last iterate
                break;
            }
            u = next;
            p = self.to_p(&u);
            y = optimal_aux(&self.links, &p);
            trace.push(power);
            if (previous - power).abs() <= self.config.solver_tolerance * previous.max(1e-12) {
                break;
            }
            // the next surrogate moves about as far as this one did; start its
            // barrier weight where the duality gap matches that distance
            let m = (constraints.len() + self.poly.groups.len()) as f64;
            let expected = (previous - power).abs().max(1e-6 * power) / reference;
            weight = Some(m / expected);
            previous = power;
        }
        let sum_rate = self.links.sum_rate(&p);
        let feasible = sum_rate >= epsilon * (1.0 - RATE_RTOL) && self.meets_qos(&p);
        if !feasible {
            warn!("min-power subproblem at epsilon {epsilon:.4e} ended infeasible");
        }
        MinPowerSolution {
            transmit_power: p.iter().sum(),
            sum_rate,
            p,
            y,
            trace,
            feasible,
        }
    }

    fn entry(&self, lambda: f64, epsilon: f64, p: &[f64], y: &[f64]) -> ParetoEntry {
        let sum_rate = self.links.sum_rate(p);
        let total_power = self.circuit() + p.iter().sum::<f64>();
        ParetoEntry {
            lambda,
            epsilon,
            p: p.to_vec(),
            y: y.to_vec(),
            sum_rate,
            total_power,
            ee: sum_rate / total_power,
        }
    }

    /// Runs the epsilon-constraint sweep. Lambdas are solved from 1 downward,
    /// each warm-started from the previous solution, which is feasible for
    /// the smaller target. Each frontier entry is then the least-power
    /// solution found (over all solves, the `R_max` point and the equal
    /// split) that meets its target.
    pub fn sweep_pareto(&mut self) -> (RmaxSolution, ParetoFrontier) {
        let rmax = self.solve_rmax();
        let lambdas = lambda_grid(self.config.lambda_step);
        let mut candidates: Vec<(Vec<f64>, Vec<f64>)> = vec![(rmax.p.clone(), rmax.y.clone())];
        let epa = self.equal_powers();
        if self.meets_qos(&epa) {
            let y = optimal_aux(&self.links, &epa);
            candidates.push((epa, y));
        }
        let mut start = rmax.p.clone();
        for &lambda in lambdas.iter().rev() {
            let sol = self.solve_min_power(lambda * rmax.rmax, &start);
            if sol.feasible && self.meets_qos(&sol.p) {
                start = sol.p.clone();
                candidates.push((sol.p, sol.y));
            } else {
                debug!("lambda {lambda} subproblem skipped as infeasible");
            }
        }
        let scored: Vec<(f64, f64)> = candidates
            .iter()
            .map(|(p, _)| (self.links.sum_rate(p), p.iter().sum::<f64>()))
            .collect();
        let entries = lambdas
            .iter()
            .map(|&lambda| {
                let epsilon = lambda * rmax.rmax;
                let pick = (0..candidates.len())
                    .filter(|&c| scored[c].0 >= epsilon * (1.0 - RATE_RTOL))
                    .min_by(|&a, &b| {
                        scored[a]
                            .1
                            .total_cmp(&scored[b].1)
                            .then(scored[b].0.total_cmp(&scored[a].0))
                    })
                    .unwrap_or(0);
                self.entry(lambda, epsilon, &candidates[pick].0, &candidates[pick].1)
            })
            .collect();
        (rmax, ParetoFrontier { entries })
    }
}

/// Result of optimizing the powers of an allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerOutcome {
    pub rmax: RmaxSolution,
    pub frontier: ParetoFrontier,
    pub best: usize,
    pub dropped_users: Vec<usize>,
}

/// Largest achievable sum rate for `(x, s)`.
pub fn solve_rmax(
    alloc: &Allocation,
    channel: &ChannelState,
    config: &ScenarioConfig,
) -> RmaxSolution {
    PowerProblem::new(alloc, channel, config).solve_rmax()
}

/// Minimum power meeting sum rate `epsilon`, started from the `R_max` powers.
pub fn solve_min_power(
    epsilon: f64,
    alloc: &Allocation,
    channel: &ChannelState,
    config: &ScenarioConfig,
) -> MinPowerSolution {
    let mut problem = PowerProblem::new(alloc, channel, config);
    let rmax = problem.solve_rmax();
    problem.solve_min_power(epsilon, &rmax.p)
}

/// Full sweep; writes the best-EE powers into `alloc`.
pub fn sweep_pareto(
    alloc: &mut Allocation,
    channel: &ChannelState,
    config: &ScenarioConfig,
) -> PowerOutcome {
    let mut problem = PowerProblem::new(alloc, channel, config);
    let (rmax, frontier) = problem.sweep_pareto();
    let best = frontier.best().unwrap_or(0);
    if let Some(entry) = frontier.entries.get(best) {
        problem.links.scatter_powers(&entry.p, alloc);
    }
    PowerOutcome {
        rmax,
        frontier,
        best,
        dropped_users: problem.dropped_users,
    }
}
