//! Complete allocation schemes built from the pipeline stages, the exhaustive
//! oracle for tiny instances and Monte-Carlo sweeps over scenario parameters.
//!
//! The proposed scheme runs matching, SCG subchannel allocation and the
//! Pareto power sweep, either once or alternating with the optimized powers
//! fed back into the matching preferences. Benchmarks swap one stage at a
//! time: strongest-gain AP choice with equal powers, QoS-first subchannels,
//! or single-tier (hybrid) attachment.

mod exhaustive;
mod experiment;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use log::debug;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::channel::{build_channel_state, ApKind, ChannelState};
use crate::error::{Error, Result};
use crate::matching::{
    build_preferences, extract_assignment, run_matching, MatchingState, PowerFeedback,
    PreferenceTables,
};
use crate::power_alloc::{sweep_pareto, ParetoFrontier};
use crate::rate_energy::{evaluate, Allocation, AssignmentMode, EvaluatedAllocation, TxAp};
use crate::scenario::{generate_topology, ScenarioConfig, Topology};
use crate::subchannel::{allocate_qos_first, allocate_scg};

pub use exhaustive::{run_exhaustive, tiny_config, MAX_ORACLE_LEVELS, ORACLE_LEVELS};
pub use experiment::{
    apply_sweep, run_experiment, CellSummary, ExperimentRow, ExperimentTable, SweepParam, LOS_BANDS,
};

/// Relative EE gain below which the alternating loop stops.
pub const CONVERGENCE_RTOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeId {
    ProposedIterative,
    ProposedOneshot,
    ScgScgEpa,
    BaselineApprox,
    HybridIterative,
    ExhaustiveOracle,
}

impl SchemeId {
    pub const ALL: [SchemeId; 6] = [
        SchemeId::ProposedIterative,
        SchemeId::ProposedOneshot,
        SchemeId::ScgScgEpa,
        SchemeId::BaselineApprox,
        SchemeId::HybridIterative,
        SchemeId::ExhaustiveOracle,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SchemeId::ProposedIterative => "proposed-iterative",
            SchemeId::ProposedOneshot => "proposed-oneshot",
            SchemeId::ScgScgEpa => "scg-scg-epa",
            SchemeId::BaselineApprox => "baseline-approx",
            SchemeId::HybridIterative => "hybrid-iterative",
            SchemeId::ExhaustiveOracle => "exhaustive-oracle",
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scheme '{s}'")))
    }
}

/// Outcome of one scheme on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub scheme: SchemeId,
    pub seed: u64,
    pub evaluated: EvaluatedAllocation,
    pub outage_count: usize,
    pub iterations_used: usize,
    pub wall_time_s: f64,
    /// EE of every accepted outer iteration.
    pub ee_trace: Vec<f64>,
    pub allocation: Allocation,
    pub matching: Option<MatchingState>,
    pub preferences: Option<PreferenceTables>,
    pub frontier: Option<ParetoFrontier>,
    /// Served users whose minimum rate could not be enforced.
    pub dropped_users: Vec<usize>,
}

/// A generated scenario.
#[derive(Debug, Clone)]
pub struct Instance {
    pub config: ScenarioConfig,
    pub topology: Topology,
    pub channel: ChannelState,
}

impl Instance {
    pub fn generate(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let topology = generate_topology(&config)?;
        let channel = build_channel_state(&topology, &config)?;
        Ok(Self {
            config,
            topology,
            channel,
        })
    }

    pub fn run(&self, scheme: SchemeId) -> Result<RunResult> {
        run_scheme(scheme, &self.config, &self.channel)
    }
}

/// Dispatches to the scheme's runner. The oracle uses [`ORACLE_LEVELS`].
pub fn run_scheme(
    scheme: SchemeId,
    config: &ScenarioConfig,
    channel: &ChannelState,
) -> Result<RunResult> {
    match scheme {
        SchemeId::ProposedIterative => run_alternating(config, channel),
        SchemeId::ProposedOneshot => run_oneshot(config, channel),
        SchemeId::ScgScgEpa => run_scg_scg_epa(config, channel),
        SchemeId::BaselineApprox => run_baseline(config, channel),
        SchemeId::HybridIterative => run_hybrid(config, channel),
        SchemeId::ExhaustiveOracle => run_exhaustive(config, channel, ORACLE_LEVELS),
    }
}

/// One matching -> subchannel -> power pass.
struct Pass {
    alloc: Allocation,
    matching: MatchingState,
    prefs: PreferenceTables,
    frontier: ParetoFrontier,
    dropped_users: Vec<usize>,
    evaluated: EvaluatedAllocation,
}

fn run_pass(
    config: &ScenarioConfig,
    channel: &ChannelState,
    mode: AssignmentMode,
    feedback: Option<&PowerFeedback>,
) -> Result<Pass> {
    let prefs = build_preferences(channel, config, feedback);
    let matching = run_matching(&prefs);
    let (mut x_rf, mut x_vlc) =
        extract_assignment(&matching, channel.rf_ap_count(), channel.vlc_count());
    if mode == AssignmentMode::Hybrid {
        keep_better_tier(&matching, &prefs, &mut x_rf, &mut x_vlc);
    }
    let mut alloc = allocate_scg(&x_rf, &x_vlc, channel, mode);
    let power = sweep_pareto(&mut alloc, channel, config);
    let evaluated = evaluate(&alloc, channel, config)?;
    Ok(Pass {
        alloc,
        matching,
        prefs,
        frontier: power.frontier,
        dropped_users: power.dropped_users,
        evaluated,
    })
}

/// Hybrid attachment: each user keeps whichever of its two matches has the
/// larger preference metric.
fn keep_better_tier(
    matching: &MatchingState,
    prefs: &PreferenceTables,
    x_rf: &mut Array2<bool>,
    x_vlc: &mut Array2<bool>,
) {
    for j in 0..x_rf.ncols() {
        let k = matching.rf_ap(j);
        match matching.vlc_ap(j) {
            Some(v) if prefs.vlc.metric[[v, j]] > prefs.rf.metric[[k, j]] => {
                x_rf.column_mut(j).fill(false);
            }
            _ => x_vlc.column_mut(j).fill(false),
        }
    }
}

/// Per-user average optimized power for the next round of preferences. Users
/// not served by an AP get that AP's average power per granted subchannel, or
/// the equal share when it serves no one; the interference level is the AP's
/// total power spread over all subchannels.
pub fn power_feedback(
    alloc: &Allocation,
    channel: &ChannelState,
    config: &ScenarioConfig,
) -> PowerFeedback {
    let users = channel.user_count();
    let n = channel.subchannel_count();
    let mut fb = PowerFeedback {
        rf_own: Array2::zeros((channel.rf_ap_count(), users)),
        rf_ap_level: vec![0.0; channel.rf_ap_count()],
        vlc_own: Array2::zeros((channel.vlc_count(), users)),
        vlc_ap_level: vec![0.0; channel.vlc_count()],
    };
    for ap in TxAp::all(channel) {
        let mut per_user = vec![(0.0, 0usize); users];
        let mut total = 0.0;
        let mut granted = 0usize;
        for q in 0..n {
            if let Some(j) = alloc.holder(ap, q) {
                let p = alloc.p(ap, j, q);
                per_user[j].0 += p;
                per_user[j].1 += 1;
                total += p;
                granted += 1;
            }
        }
        let fallback = if granted > 0 {
            total / granted as f64
        } else {
            ap.budget(config) / n as f64
        };
        let (own, level) = match ap.kind {
            ApKind::Vlc => (fb.vlc_own.row_mut(ap.idx), &mut fb.vlc_ap_level[ap.idx]),
            ApKind::Macro => (fb.rf_own.row_mut(0), &mut fb.rf_ap_level[0]),
            ApKind::Pico => (
                fb.rf_own.row_mut(ap.idx + 1),
                &mut fb.rf_ap_level[ap.idx + 1],
            ),
        };
        *level = total / n as f64;
        for (slot, (sum, count)) in own.into_iter().zip(per_user) {
            *slot = if count > 0 {
                sum / count as f64
            } else {
                fallback
            };
        }
    }
    fb
}

fn outage_count(alloc: &Allocation) -> usize {
    alloc.a.iter().filter(|&&a| !a).count()
}

fn finish(
    scheme: SchemeId,
    config: &ScenarioConfig,
    pass: Pass,
    iterations: usize,
    trace: Vec<f64>,
    start: Instant,
) -> RunResult {
    RunResult {
        scheme,
        seed: config.seed,
        outage_count: outage_count(&pass.alloc),
        evaluated: pass.evaluated,
        iterations_used: iterations,
        wall_time_s: start.elapsed().as_secs_f64(),
        ee_trace: trace,
        allocation: pass.alloc,
        matching: Some(pass.matching),
        preferences: Some(pass.prefs),
        frontier: Some(pass.frontier),
        dropped_users: pass.dropped_users,
    }
}

fn alternate(
    scheme: SchemeId,
    config: &ScenarioConfig,
    channel: &ChannelState,
    mode: AssignmentMode,
) -> Result<RunResult> {
    let start = Instant::now();
    let mut best = run_pass(config, channel, mode, None)?;
    let mut trace = vec![best.evaluated.ee];
    let mut iterations = 1;
    while iterations < config.max_outer_iterations {
        let feedback = power_feedback(&best.alloc, channel, config);
        let next = run_pass(config, channel, mode, Some(&feedback))?;
        iterations += 1;
        let (old, new) = (best.evaluated.ee, next.evaluated.ee);
        debug!("outer iteration {iterations}: EE {old} -> {new}");
        if new < old {
            break;
        }
        trace.push(new);
        best = next;
        if new - old <= CONVERGENCE_RTOL * old {
            break;
        }
    }
    Ok(finish(scheme, config, best, iterations, trace, start))
}

/// Alternating matching, SCG and power allocation with keep-best: stops on a
/// relative EE gain of at most [`CONVERGENCE_RTOL`], on a worse iteration
/// (returning the incumbent) or after `max_outer_iterations` passes.
pub fn run_alternating(config: &ScenarioConfig, channel: &ChannelState) -> Result<RunResult> {
    alternate(
        SchemeId::ProposedIterative,
        config,
        channel,
        AssignmentMode::Aggregated,
    )
}

/// A single matching, SCG and power allocation pass.
pub fn run_oneshot(config: &ScenarioConfig, channel: &ChannelState) -> Result<RunResult> {
    let start = Instant::now();
    let pass = run_pass(config, channel, AssignmentMode::Aggregated, None)?;
    let trace = vec![pass.evaluated.ee];
    Ok(finish(
        SchemeId::ProposedOneshot,
        config,
        pass,
        1,
        trace,
        start,
    ))
}

/// The alternating scheme with every user on a single AP.
pub fn run_hybrid(config: &ScenarioConfig, channel: &ChannelState) -> Result<RunResult> {
    alternate(
        SchemeId::HybridIterative,
        config,
        channel,
        AssignmentMode::Hybrid,
    )
}

/// Strongest-gain AP assignment and QoS-first subchannels, with the proposed
/// power allocation.
pub fn run_baseline(config: &ScenarioConfig, channel: &ChannelState) -> Result<RunResult> {
    let start = Instant::now();
    let (x_rf, x_vlc) = strongest_gain_assignment(config, channel);
    let mut alloc = allocate_qos_first(&x_rf, &x_vlc, channel, config, AssignmentMode::Aggregated);
    let power = sweep_pareto(&mut alloc, channel, config);
    let evaluated = evaluate(&alloc, channel, config)?;
    Ok(RunResult {
        scheme: SchemeId::BaselineApprox,
        seed: config.seed,
        outage_count: outage_count(&alloc),
        ee_trace: vec![evaluated.ee],
        evaluated,
        iterations_used: 1,
        wall_time_s: start.elapsed().as_secs_f64(),
        allocation: alloc,
        matching: None,
        preferences: None,
        frontier: Some(power.frontier),
        dropped_users: power.dropped_users,
    })
}

fn argmax(candidates: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    candidates
        .fold(None, |best: Option<(usize, f64)>, (i, g)| match best {
            Some((_, bg)) if bg >= g => best,
            _ => Some((i, g)),
        })
        .map(|(i, _)| i)
}

/// Per tier, the covered AP with the largest average gain.
fn strongest_gain_assignment(
    config: &ScenarioConfig,
    channel: &ChannelState,
) -> (Array2<bool>, Array2<bool>) {
    let users = channel.user_count();
    let mut x_rf = Array2::from_elem((channel.rf_ap_count(), users), false);
    let mut x_vlc = Array2::from_elem((channel.vlc_count(), users), false);
    for j in 0..users {
        let rf = argmax(
            (0..channel.rf_ap_count())
                .filter(|&k| channel.rf_coverage[[k, j]])
                .map(|k| (k, config.rf_effective_gain(channel.mean_rf_gain(k, j)))),
        );
        x_rf[[rf.unwrap_or(0), j]] = true;
        let vlc = argmax(
            (0..channel.vlc_count())
                .filter(|&v| channel.vlc_reachable(v, j))
                .map(|v| (v, channel.mean_vlc_gain(v, j))),
        );
        if let Some(v) = vlc {
            x_vlc[[v, j]] = true;
        }
    }
    (x_rf, x_vlc)
}

/// Strongest average gain AP per tier, SCG subchannels and the equal split.
pub fn run_scg_scg_epa(config: &ScenarioConfig, channel: &ChannelState) -> Result<RunResult> {
    let start = Instant::now();
    let (x_rf, x_vlc) = strongest_gain_assignment(config, channel);
    let mut alloc = allocate_scg(&x_rf, &x_vlc, channel, AssignmentMode::Aggregated);
    alloc.apply_equal_power(config, channel);
    let evaluated = evaluate(&alloc, channel, config)?;
    Ok(RunResult {
        scheme: SchemeId::ScgScgEpa,
        seed: config.seed,
        outage_count: outage_count(&alloc),
        ee_trace: vec![evaluated.ee],
        evaluated,
        iterations_used: 1,
        wall_time_s: start.elapsed().as_secs_f64(),
        allocation: alloc,
        matching: None,
        preferences: None,
        frontier: None,
        dropped_users: Vec::new(),
    })
}
