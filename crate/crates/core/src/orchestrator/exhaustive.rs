//! Exhaustive search over AP assignments, subchannel grants and quantized
//! powers for tiny instances.
//!
//! APs that do not interfere contribute independently, so each interference
//! group (the macro, all picos, all VLC APs) is enumerated on its own and
//! reduced to the configurations not dominated in per-user rates and power
//! among those serving the same users. Groups are then combined with the
//! same pruning, which keeps the search exact for the max-EE objective under
//! minimum-rate constraints.

use std::collections::HashMap;
use std::time::Instant;

use ndarray::Array2;

use super::{outage_count, RunResult, SchemeId};
use crate::channel::{ApKind, ChannelState};
use crate::error::{Error, Result};
use crate::rate_energy::{
    circuit_power, evaluate, rate_macro, rate_pico, rate_vlc, Allocation, AssignmentMode, TxAp,
};
use crate::scenario::ScenarioConfig;

/// Power levels per subchannel used by [`super::run_scheme`].
pub const ORACLE_LEVELS: usize = 5;
pub const MAX_ORACLE_LEVELS: usize = 9;
const MAX_USERS: usize = 4;
const MAX_APS: usize = 3;
const MAX_SUBCHANNELS: usize = 3;
/// Relative slack on the minimum-rate check.
const QOS_RTOL: f64 = 1e-9;

/// Tiny scenario with one macro, one pico and one VLC AP in a 200 m cell.
pub fn tiny_config(seed: u64, users: usize, subchannels: usize) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        user_count: users,
        subchannels_per_ap: subchannels,
        macro_radius: 200.0,
        pico_count: 1,
        room_count: 1,
        vlc_aps_per_room: 1,
        ..ScenarioConfig::default()
    }
}

/// One grant: `(ap, user, subchannel, power)`.
type Grant = (TxAp, usize, usize, f64);

#[derive(Debug, Clone)]
struct Candidate {
    /// Bit `j` set when user `j` holds a subchannel.
    served: u8,
    rates: [f64; MAX_USERS],
    power: f64,
}

impl Candidate {
    fn dominates(&self, other: &Candidate) -> bool {
        self.served == other.served
            && self.power <= other.power
            && self.rates.iter().zip(&other.rates).all(|(a, b)| a >= b)
    }

    fn combine(&self, other: &Candidate) -> Candidate {
        let mut rates = self.rates;
        for (r, o) in rates.iter_mut().zip(&other.rates) {
            *r += o;
        }
        Candidate {
            served: self.served | other.served,
            rates,
            power: self.power + other.power,
        }
    }
}

/// Indices of the candidates not dominated by another one. Among identical
/// candidates the first is kept.
fn pareto_filter(cands: &[Candidate]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| {
        cands[a]
            .power
            .total_cmp(&cands[b].power)
            .then_with(|| {
                let sa: f64 = cands[a].rates.iter().sum();
                let sb: f64 = cands[b].rates.iter().sum();
                sb.total_cmp(&sa)
            })
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if !kept.iter().any(|&k| cands[k].dominates(&cands[i])) {
            kept.push(i);
        }
    }
    kept
}

/// Non-dominated configurations of one interference group.
struct GroupTable {
    cands: Vec<Candidate>,
    grants: Vec<Vec<Grant>>,
}

struct Enumerator<'a> {
    channel: &'a ChannelState,
    config: &'a ScenarioConfig,
    aps: &'a [TxAp],
    /// Users assigned to each AP of the group.
    users: Vec<Vec<usize>>,
    levels: usize,
    subs: usize,
    /// Per slot `(ap position, sub)`: `(user, level)` or `None`.
    choice: Vec<Option<(usize, usize)>>,
    spent: Vec<usize>,
    cands: Vec<Candidate>,
    grants: Vec<Vec<Grant>>,
}

impl Enumerator<'_> {
    fn power(&self, ap: TxAp, level: usize) -> f64 {
        ap.budget(self.config) * level as f64 / (self.levels - 1) as f64
    }

    fn gain(&self, ap: TxAp, user: usize, sub: usize) -> f64 {
        match ap.kind {
            ApKind::Macro => self.channel.g_macro[[user, sub]],
            ApKind::Pico => self.channel.g_pico[[ap.idx, user, sub]],
            ApKind::Vlc => self.channel.g_vlc[[ap.idx, user, sub]],
        }
    }

    fn recurse(&mut self, slot: usize) {
        if slot == self.choice.len() {
            self.record();
            return;
        }
        let a = slot / self.subs;
        self.choice[slot] = None;
        self.recurse(slot + 1);
        for ui in 0..self.users[a].len() {
            let user = self.users[a][ui];
            for level in 1..self.levels {
                if self.spent[a] + level > self.levels - 1 {
                    break;
                }
                self.spent[a] += level;
                self.choice[slot] = Some((user, level));
                self.recurse(slot + 1);
                self.spent[a] -= level;
            }
        }
        self.choice[slot] = None;
    }

    fn record(&mut self) {
        let mut cand = Candidate {
            served: 0,
            rates: [0.0; MAX_USERS],
            power: 0.0,
        };
        let mut grants = Vec::new();
        for (slot, c) in self.choice.iter().enumerate() {
            let Some((user, level)) = *c else { continue };
            let (a, sub) = (slot / self.subs, slot % self.subs);
            let ap = self.aps[a];
            let p = self.power(ap, level);
            let interferers: Vec<(f64, f64)> = (0..self.aps.len())
                .filter(|&o| o != a)
                .filter_map(|o| {
                    self.choice[o * self.subs + sub].map(|(_, lo)| {
                        (
                            self.power(self.aps[o], lo),
                            self.gain(self.aps[o], user, sub),
                        )
                    })
                })
                .collect();
            let g = self.gain(ap, user, sub);
            let rate = match ap.kind {
                ApKind::Macro => rate_macro(p, g, self.config),
                ApKind::Pico => rate_pico(p, g, &interferers, self.config),
                ApKind::Vlc => rate_vlc(
                    p,
                    g,
                    self.channel.rho[[ap.idx, user, sub]],
                    &interferers,
                    self.config,
                ),
            };
            cand.served |= 1 << user;
            cand.rates[user] += rate;
            cand.power += p;
            grants.push((ap, user, sub, p));
        }
        self.cands.push(cand);
        self.grants.push(grants);
    }
}

fn enumerate_group(
    channel: &ChannelState,
    config: &ScenarioConfig,
    aps: &[TxAp],
    users: Vec<Vec<usize>>,
    levels: usize,
) -> GroupTable {
    let subs = channel.subchannel_count();
    let mut e = Enumerator {
        channel,
        config,
        aps,
        users,
        levels,
        subs,
        choice: vec![None; aps.len() * subs],
        spent: vec![0; aps.len()],
        cands: Vec::new(),
        grants: Vec::new(),
    };
    e.recurse(0);
    let keep = pareto_filter(&e.cands);
    GroupTable {
        cands: keep.iter().map(|&i| e.cands[i].clone()).collect(),
        grants: keep
            .iter()
            .map(|&i| std::mem::take(&mut e.grants[i]))
            .collect(),
    }
}

/// Per-user AP choices: `(rf AP, vlc AP)`.
fn user_options(channel: &ChannelState, j: usize) -> Vec<(usize, Option<usize>)> {
    let rf: Vec<usize> = (0..channel.rf_ap_count())
        .filter(|&k| channel.rf_coverage[[k, j]])
        .collect();
    let mut vlc = vec![None];
    vlc.extend(
        (0..channel.vlc_count())
            .filter(|&v| channel.vlc_reachable(v, j))
            .map(Some),
    );
    rf.iter()
        .flat_map(|&k| vlc.iter().map(move |&v| (k, v)))
        .collect()
}

fn assigned(ap: TxAp, choice: &[(usize, Option<usize>)]) -> Vec<usize> {
    (0..choice.len())
        .filter(|&j| match ap.kind {
            ApKind::Macro => choice[j].0 == 0,
            ApKind::Pico => choice[j].0 == ap.idx + 1,
            ApKind::Vlc => choice[j].1 == Some(ap.idx),
        })
        .collect()
}

/// Exhaustive max-EE allocation over every aggregated AP assignment, every
/// subchannel grant and per-subchannel powers `i * budget / (levels - 1)`
/// within each AP budget. Served users must meet the minimum rate; users
/// without subchannels are in outage.
pub fn run_exhaustive(
    config: &ScenarioConfig,
    channel: &ChannelState,
    levels: usize,
) -> Result<RunResult> {
    let start = Instant::now();
    let users = channel.user_count();
    let aps = 1 + channel.pico_count() + channel.vlc_count();
    let subs = channel.subchannel_count();
    if users > MAX_USERS || aps > MAX_APS || subs > MAX_SUBCHANNELS || levels > MAX_ORACLE_LEVELS {
        return Err(Error::Refused(format!(
            "{users} users, {aps} APs, {subs} subchannels, {levels} levels; limits are \
             {MAX_USERS}, {MAX_APS}, {MAX_SUBCHANNELS}, {MAX_ORACLE_LEVELS}"
        )));
    }
    if levels < 2 {
        return Err(Error::InvalidConfig(
            "at least two power levels are needed".into(),
        ));
    }

    let all = TxAp::all(channel);
    let groups: Vec<Vec<TxAp>> = [ApKind::Macro, ApKind::Pico, ApKind::Vlc]
        .iter()
        .map(|kind| {
            all.iter()
                .copied()
                .filter(|ap| ap.kind == *kind)
                .collect::<Vec<_>>()
        })
        .filter(|g| !g.is_empty())
        .collect();

    let options: Vec<Vec<(usize, Option<usize>)>> =
        (0..users).map(|j| user_options(channel, j)).collect();
    let circuit = circuit_power(channel, config);
    let floor = config.r_min * (1.0 - QOS_RTOL);

    let mut cache: Vec<HashMap<Vec<Vec<usize>>, GroupTable>> =
        (0..groups.len()).map(|_| HashMap::new()).collect();
    let mut best: Option<(f64, Vec<(usize, Option<usize>)>, Vec<Grant>)> = None;
    let mut idx = vec![0usize; users];
    loop {
        let choice: Vec<(usize, Option<usize>)> = (0..users).map(|j| options[j][idx[j]]).collect();
        let keys: Vec<Vec<Vec<usize>>> = groups
            .iter()
            .map(|g| g.iter().map(|&ap| assigned(ap, &choice)).collect())
            .collect();
        for (gi, g) in groups.iter().enumerate() {
            cache[gi]
                .entry(keys[gi].clone())
                .or_insert_with(|| enumerate_group(channel, config, g, keys[gi].clone(), levels));
        }
        let tables: Vec<&GroupTable> = keys
            .iter()
            .enumerate()
            .map(|(gi, k)| &cache[gi][k])
            .collect();

        // combine groups with pruning; `parts` indexes into each table
        let mut combined = vec![Candidate {
            served: 0,
            rates: [0.0; MAX_USERS],
            power: 0.0,
        }];
        let mut parts: Vec<Vec<usize>> = vec![Vec::new()];
        for table in &tables {
            let mut cands = Vec::with_capacity(combined.len() * table.cands.len());
            let mut origin = Vec::with_capacity(cands.capacity());
            for (ci, c) in combined.iter().enumerate() {
                for (ti, t) in table.cands.iter().enumerate() {
                    cands.push(c.combine(t));
                    origin.push((ci, ti));
                }
            }
            let keep = pareto_filter(&cands);
            parts = keep
                .iter()
                .map(|&i| {
                    let (ci, ti) = origin[i];
                    let mut p = parts[ci].clone();
                    p.push(ti);
                    p
                })
                .collect();
            combined = keep.iter().map(|&i| cands[i].clone()).collect();
        }

        for (c, part) in combined.iter().zip(&parts) {
            let feasible = (0..users).all(|j| c.served & (1 << j) == 0 || c.rates[j] >= floor);
            if !feasible {
                continue;
            }
            let ee = c.rates.iter().sum::<f64>() / (circuit + c.power);
            if best.as_ref().is_none_or(|b| ee > b.0) {
                let grants = part
                    .iter()
                    .zip(&tables)
                    .flat_map(|(&ti, t)| t.grants[ti].iter().copied())
                    .collect();
                best = Some((ee, choice.clone(), grants));
            }
        }

        // next assignment, odometer style
        let mut j = 0;
        while j < users {
            idx[j] += 1;
            if idx[j] < options[j].len() {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
        if j == users {
            break;
        }
    }

    let (_, choice, grants) = best.expect("the all-off configuration is always feasible");
    let mut alloc = Allocation::empty(channel);
    alloc.mode = AssignmentMode::Aggregated;
    let mut x_vlc = Array2::from_elem((channel.vlc_count(), users), false);
    for (j, &(k, v)) in choice.iter().enumerate() {
        alloc.x_rf[[k, j]] = true;
        if let Some(v) = v {
            x_vlc[[v, j]] = true;
        }
    }
    alloc.x_vlc = x_vlc;
    for (ap, user, sub, p) in grants {
        alloc.set_s(ap, user, sub, true);
        alloc.set_p(ap, user, sub, p);
    }
    alloc.refresh_outage_flags();
    let evaluated = evaluate(&alloc, channel, config)?;
    Ok(RunResult {
        scheme: SchemeId::ExhaustiveOracle,
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
