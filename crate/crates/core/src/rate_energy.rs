//! Achievable rates, power consumption and energy efficiency of an allocation,
//! plus the structural constraint checker.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::channel::{ApKind, ChannelState};
use crate::error::{Error, Result};
use crate::scenario::ScenarioConfig;

/// `e / 2pi`, the SNR penalty of the VLC capacity lower bound.
pub const VLC_SNR_FACTOR: f64 = std::f64::consts::E / (2.0 * std::f64::consts::PI);

/// Relative slack applied to power budget checks.
const BUDGET_RTOL: f64 = 1e-9;

/// Interference contribution `(power, gain)` of one co-channel transmitter.
pub type Interferer = (f64, f64);

pub fn rate_macro(p: f64, gain: f64, config: &ScenarioConfig) -> f64 {
    rate_pico(p, gain, &[], config)
}

pub fn rate_pico(p: f64, gain: f64, interferers: &[Interferer], config: &ScenarioConfig) -> f64 {
    let interference: f64 = interferers
        .iter()
        .map(|&(q, g)| q * config.rf_effective_gain(g))
        .sum();
    let noise = config.noise_psd_rf * config.bandwidth_rf;
    let sinr = p * config.rf_effective_gain(gain) / (interference + noise);
    config.bandwidth_rf * (1.0 + sinr).log2()
}

pub fn rate_vlc(
    p: f64,
    gain: f64,
    rho: f64,
    interferers: &[Interferer],
    config: &ScenarioConfig,
) -> f64 {
    let interference: f64 = interferers
        .iter()
        .map(|&(q, g)| q * config.vlc_effective_gain(g))
        .sum();
    let noise = config.noise_psd_vlc * config.bandwidth_vlc;
    let sinr = p * config.vlc_effective_gain(gain) / (interference + noise);
    rho * config.bandwidth_vlc * (1.0 + VLC_SNR_FACTOR * sinr).log2()
}

/// Transmitting AP identified by tier and tier-local index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TxAp {
    pub kind: ApKind,
    pub idx: usize,
}

impl TxAp {
    pub fn budget(&self, config: &ScenarioConfig) -> f64 {
        match self.kind {
            ApKind::Macro => config.p_macro_budget,
            ApKind::Pico => config.p_pico_budget,
            ApKind::Vlc => config.p_vlc_budget,
        }
    }

    /// Every AP of a channel state: macro, picos, then VLC APs.
    pub fn all(channel: &ChannelState) -> Vec<TxAp> {
        let mut aps = vec![TxAp {
            kind: ApKind::Macro,
            idx: 0,
        }];
        aps.extend((0..channel.pico_count()).map(|idx| TxAp {
            kind: ApKind::Pico,
            idx,
        }));
        aps.extend((0..channel.vlc_count()).map(|idx| TxAp {
            kind: ApKind::Vlc,
            idx,
        }));
        aps
    }
}

/// How many RF and VLC APs a user must be attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AssignmentMode {
    /// Exactly one RF AP and at most one VLC AP.
    #[default]
    Aggregated,
    /// Exactly one AP in total, RF or VLC.
    Hybrid,
}

/// Decision variables of the joint problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub mode: AssignmentMode,
    /// `[rf AP, user]`, row 0 is the macro.
    pub x_rf: Array2<bool>,
    /// `[vlc AP, user]`
    pub x_vlc: Array2<bool>,
    /// `[user, subchannel]`
    pub s_macro: Array2<bool>,
    /// `[pico, user, subchannel]`
    pub s_pico: Array3<bool>,
    /// `[vlc AP, user, subchannel]`
    pub s_vlc: Array3<bool>,
    pub p_macro: Array2<f64>,
    pub p_pico: Array3<f64>,
    pub p_vlc: Array3<f64>,
    /// `a[j]` is false when user `j` is in outage.
    pub a: Vec<bool>,
}

impl Allocation {
    /// All-zero allocation shaped for a channel state.
    pub fn empty(channel: &ChannelState) -> Self {
        let (u, n) = (channel.user_count(), channel.subchannel_count());
        let (k, v) = (channel.pico_count(), channel.vlc_count());
        Self {
            mode: AssignmentMode::Aggregated,
            x_rf: Array2::from_elem((1 + k, u), false),
            x_vlc: Array2::from_elem((v, u), false),
            s_macro: Array2::from_elem((u, n), false),
            s_pico: Array3::from_elem((k, u, n), false),
            s_vlc: Array3::from_elem((v, u, n), false),
            p_macro: Array2::zeros((u, n)),
            p_pico: Array3::zeros((k, u, n)),
            p_vlc: Array3::zeros((v, u, n)),
            a: vec![false; u],
        }
    }

    pub fn user_count(&self) -> usize {
        self.a.len()
    }

    pub fn subchannel_count(&self) -> usize {
        self.s_macro.ncols()
    }

    pub fn s(&self, ap: TxAp, user: usize, sub: usize) -> bool {
        match ap.kind {
            ApKind::Macro => self.s_macro[[user, sub]],
            ApKind::Pico => self.s_pico[[ap.idx, user, sub]],
            ApKind::Vlc => self.s_vlc[[ap.idx, user, sub]],
        }
    }

    pub fn set_s(&mut self, ap: TxAp, user: usize, sub: usize, value: bool) {
        match ap.kind {
            ApKind::Macro => self.s_macro[[user, sub]] = value,
            ApKind::Pico => self.s_pico[[ap.idx, user, sub]] = value,
            ApKind::Vlc => self.s_vlc[[ap.idx, user, sub]] = value,
        }
    }

    pub fn p(&self, ap: TxAp, user: usize, sub: usize) -> f64 {
        match ap.kind {
            ApKind::Macro => self.p_macro[[user, sub]],
            ApKind::Pico => self.p_pico[[ap.idx, user, sub]],
            ApKind::Vlc => self.p_vlc[[ap.idx, user, sub]],
        }
    }

    pub fn set_p(&mut self, ap: TxAp, user: usize, sub: usize, value: f64) {
        match ap.kind {
            ApKind::Macro => self.p_macro[[user, sub]] = value,
            ApKind::Pico => self.p_pico[[ap.idx, user, sub]] = value,
            ApKind::Vlc => self.p_vlc[[ap.idx, user, sub]] = value,
        }
    }

    pub fn x(&self, ap: TxAp, user: usize) -> bool {
        match ap.kind {
            ApKind::Macro => self.x_rf[[0, user]],
            ApKind::Pico => self.x_rf[[ap.idx + 1, user]],
            ApKind::Vlc => self.x_vlc[[ap.idx, user]],
        }
    }

    /// The user holding subchannel `sub` of `ap`, if any.
    pub fn holder(&self, ap: TxAp, sub: usize) -> Option<usize> {
        (0..self.user_count()).find(|&j| self.s(ap, j, sub))
    }

    pub fn subchannels_of(&self, user: usize) -> usize {
        let n = self.subchannel_count();
        let mut count = (0..n).filter(|&q| self.s_macro[[user, q]]).count();
        for k in 0..self.s_pico.shape()[0] {
            count += (0..n).filter(|&q| self.s_pico[[k, user, q]]).count();
        }
        for v in 0..self.s_vlc.shape()[0] {
            count += (0..n).filter(|&q| self.s_vlc[[v, user, q]]).count();
        }
        count
    }

    pub fn transmit_power(&self) -> f64 {
        self.p_macro.sum() + self.p_pico.sum() + self.p_vlc.sum()
    }

    /// Equal power split: every granted subchannel gets budget / |subchannels|.
    pub fn apply_equal_power(&mut self, config: &ScenarioConfig, channel: &ChannelState) {
        let n = self.subchannel_count();
        for ap in TxAp::all(channel) {
            let share = ap.budget(config) / n as f64;
            for j in 0..self.user_count() {
                for q in 0..n {
                    let value = if self.s(ap, j, q) { share } else { 0.0 };
                    self.set_p(ap, j, q, value);
                }
            }
        }
    }

    /// Sets `a[j]` from whether user `j` holds any subchannel.
    pub fn refresh_outage_flags(&mut self) {
        for j in 0..self.user_count() {
            self.a[j] = self.subchannels_of(j) > 0;
        }
    }
}

/// One active (AP, user, subchannel) transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub ap: TxAp,
    pub user: usize,
    pub sub: usize,
    /// Multiplies own transmit power in the SINR numerator.
    pub gain: f64,
    /// Pre-log factor in bit/s (bandwidth, times LoS probability for VLC).
    pub weight: f64,
    /// SNR scaling inside the logarithm.
    pub snr_factor: f64,
    pub noise: f64,
    /// `(link index, gain from that link's transmitter to this receiver)`
    pub interferers: Vec<(usize, f64)>,
}

/// Transmitters sharing one power budget.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetGroup {
    pub ap: TxAp,
    pub budget: f64,
    pub links: Vec<usize>,
}

/// Flattened view of the active links of an allocation, used both for
/// evaluation and as the variable layout of the power optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSet {
    pub links: Vec<Link>,
    pub groups: Vec<BudgetGroup>,
    /// Links of each user.
    pub user_links: Vec<Vec<usize>>,
}

impl LinkSet {
    pub fn from_allocation(
        alloc: &Allocation,
        channel: &ChannelState,
        config: &ScenarioConfig,
    ) -> Self {
        let users = alloc.user_count();
        let subs = alloc.subchannel_count();
        let mut links = Vec::new();
        let mut groups = Vec::new();
        let mut user_links = vec![Vec::new(); users];
        // index of the link on (ap, sub), for interference lookups
        let aps = TxAp::all(channel);
        let mut on_sub: Vec<Vec<Option<usize>>> = vec![vec![None; subs]; aps.len()];

        for (a_idx, &ap) in aps.iter().enumerate() {
            let mut members = Vec::new();
            for q in 0..subs {
                if let Some(j) = alloc.holder(ap, q) {
                    let (gain, weight, snr_factor, noise) = match ap.kind {
                        ApKind::Macro | ApKind::Pico => (
                            config.rf_effective_gain(channel.rf_gain(rf_index(ap), j, q)),
                            config.bandwidth_rf,
                            1.0,
                            config.noise_psd_rf * config.bandwidth_rf,
                        ),
                        ApKind::Vlc => (
                            config.vlc_effective_gain(channel.g_vlc[[ap.idx, j, q]]),
                            channel.rho[[ap.idx, j, q]] * config.bandwidth_vlc,
                            VLC_SNR_FACTOR,
                            config.noise_psd_vlc * config.bandwidth_vlc,
                        ),
                    };
                    let l = links.len();
                    links.push(Link {
                        ap,
                        user: j,
                        sub: q,
                        gain,
                        weight,
                        snr_factor,
                        noise,
                        interferers: Vec::new(),
                    });
                    members.push(l);
                    user_links[j].push(l);
                    on_sub[a_idx][q] = Some(l);
                }
            }
            if !members.is_empty() {
                groups.push(BudgetGroup {
                    ap,
                    budget: ap.budget(config),
                    links: members,
                });
            }
        }

        for l in 0..links.len() {
            let (ap, j, q) = (links[l].ap, links[l].user, links[l].sub);
            if ap.kind == ApKind::Macro {
                continue;
            }
            let mut interferers = Vec::new();
            for (b_idx, other) in aps.iter().enumerate() {
                if other.kind != ap.kind || *other == ap {
                    continue;
                }
                if let Some(i) = on_sub[b_idx][q] {
                    let g = match other.kind {
                        ApKind::Pico => config.rf_effective_gain(channel.g_pico[[other.idx, j, q]]),
                        _ => config.vlc_effective_gain(channel.g_vlc[[other.idx, j, q]]),
                    };
                    if g > 0.0 {
                        interferers.push((i, g));
                    }
                }
            }
            links[l].interferers = interferers;
        }

        Self {
            links,
            groups,
            user_links,
        }
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn interference(&self, l: usize, p: &[f64]) -> f64 {
        self.links[l]
            .interferers
            .iter()
            .map(|&(i, g)| p[i] * g)
            .sum()
    }

    pub fn sinr(&self, l: usize, p: &[f64]) -> f64 {
        let link = &self.links[l];
        p[l] * link.gain / (self.interference(l, p) + link.noise)
    }

    pub fn rate(&self, l: usize, p: &[f64]) -> f64 {
        let link = &self.links[l];
        link.weight * (1.0 + link.snr_factor * self.sinr(l, p)).log2()
    }

    pub fn user_rates(&self, p: &[f64]) -> Vec<f64> {
        self.user_links
            .iter()
            .map(|ls| ls.iter().map(|&l| self.rate(l, p)).sum())
            .collect()
    }

    pub fn sum_rate(&self, p: &[f64]) -> f64 {
        (0..self.len()).map(|l| self.rate(l, p)).sum()
    }

    pub fn gather_powers(&self, alloc: &Allocation) -> Vec<f64> {
        self.links
            .iter()
            .map(|l| alloc.p(l.ap, l.user, l.sub))
            .collect()
    }

    pub fn scatter_powers(&self, p: &[f64], alloc: &mut Allocation) {
        alloc.p_macro.fill(0.0);
        alloc.p_pico.fill(0.0);
        alloc.p_vlc.fill(0.0);
        for (l, link) in self.links.iter().enumerate() {
            alloc.set_p(link.ap, link.user, link.sub, p[l]);
        }
    }

    /// Equal power split over each AP's subchannels.
    pub fn equal_powers(&self, subchannels: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.len()];
        for g in &self.groups {
            for &l in &g.links {
                p[l] = g.budget / subchannels as f64;
            }
        }
        p
    }
}

fn rf_index(ap: TxAp) -> usize {
    match ap.kind {
        ApKind::Macro => 0,
        _ => ap.idx + 1,
    }
}

/// Rates, power and energy efficiency of an allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedAllocation {
    pub per_user_rate: Vec<f64>,
    pub sum_rate: f64,
    pub transmit_power: f64,
    pub total_power: f64,
    /// bit/J
    pub ee: f64,
}

/// Checks the structural constraints of an allocation: subchannels only on
/// assigned APs, power bounds and budgets, one user per subchannel, AP
/// attachment counts and outage consistency.
pub fn validate(alloc: &Allocation, channel: &ChannelState, config: &ScenarioConfig) -> Result<()> {
    let users = channel.user_count();
    let subs = channel.subchannel_count();
    let (k, v) = (channel.pico_count(), channel.vlc_count());
    if alloc.x_rf.dim() != (1 + k, users)
        || alloc.x_vlc.dim() != (v, users)
        || alloc.s_macro.dim() != (users, subs)
        || alloc.s_pico.dim() != (k, users, subs)
        || alloc.s_vlc.dim() != (v, users, subs)
        || alloc.p_macro.dim() != (users, subs)
        || alloc.p_pico.dim() != (k, users, subs)
        || alloc.p_vlc.dim() != (v, users, subs)
        || alloc.a.len() != users
    {
        return Err(Error::InvalidConfig(
            "allocation shape does not match the channel state".into(),
        ));
    }
    validate_sa(alloc)?;
    for ap in TxAp::all(channel) {
        let budget = ap.budget(config);
        let limit = budget * (1.0 + BUDGET_RTOL);
        let mut total = 0.0;
        for j in 0..users {
            for q in 0..subs {
                let p = alloc.p(ap, j, q);
                let cap = if alloc.s(ap, j, q) { limit } else { 0.0 };
                if !(p >= 0.0) || p > cap {
                    return Err(Error::violation(
                        "C2",
                        format!(
                            "{} AP {} user {j} subchannel {q}: power {p} outside [0, {cap}]",
                            ap.kind.as_str(),
                            ap.idx
                        ),
                    ));
                }
                total += p;
            }
        }
        if total > limit {
            return Err(Error::violation(
                "C3",
                format!(
                    "{} AP {} transmits {total} W over its {budget} W budget",
                    ap.kind.as_str(),
                    ap.idx
                ),
            ));
        }
    }
    for j in 0..users {
        let rf = (0..=k).filter(|&r| alloc.x_rf[[r, j]]).count();
        let vlc = (0..v).filter(|&r| alloc.x_vlc[[r, j]]).count();
        match alloc.mode {
            AssignmentMode::Aggregated => {
                if rf != 1 {
                    return Err(Error::violation(
                        "C6",
                        format!("user {j} is attached to {rf} RF APs"),
                    ));
                }
                if vlc > 1 {
                    return Err(Error::violation(
                        "C7",
                        format!("user {j} is attached to {vlc} VLC APs"),
                    ));
                }
            }
            AssignmentMode::Hybrid => {
                if rf + vlc != 1 {
                    return Err(Error::violation(
                        "C6",
                        format!("user {j} is attached to {} APs in hybrid mode", rf + vlc),
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Checks subchannel-grant constraints: grants only on assigned APs (C1), one
/// user per subchannel (C4) and no grants to users in outage (C5).
pub fn validate_sa(alloc: &Allocation) -> Result<()> {
    let users = alloc.user_count();
    let subs = alloc.subchannel_count();
    let mut aps = vec![TxAp {
        kind: ApKind::Macro,
        idx: 0,
    }];
    aps.extend((0..alloc.s_pico.shape()[0]).map(|idx| TxAp {
        kind: ApKind::Pico,
        idx,
    }));
    aps.extend((0..alloc.s_vlc.shape()[0]).map(|idx| TxAp {
        kind: ApKind::Vlc,
        idx,
    }));
    for ap in aps {
        for q in 0..subs {
            let holders: Vec<usize> = (0..users).filter(|&j| alloc.s(ap, j, q)).collect();
            if holders.len() > 1 {
                return Err(Error::violation(
                    "C4",
                    format!(
                        "{} AP {} subchannel {q} granted to users {holders:?}",
                        ap.kind.as_str(),
                        ap.idx
                    ),
                ));
            }
            for &j in &holders {
                if !alloc.x(ap, j) {
                    return Err(Error::violation(
                        "C1",
                        format!(
                            "user {j} holds subchannel {q} of {} AP {} without being assigned to it",
                            ap.kind.as_str(),
                            ap.idx
                        ),
                    ));
                }
                if !alloc.a[j] {
                    return Err(Error::violation(
                        "C5",
                        format!("user {j} is in outage but holds subchannel {q}"),
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Evaluates rates, total power and EE. Circuit power of every deployed AP is
/// counted whether or not it serves anyone.
pub fn evaluate(
    alloc: &Allocation,
    channel: &ChannelState,
    config: &ScenarioConfig,
) -> Result<EvaluatedAllocation> {
    validate(alloc, channel, config)?;
    let links = LinkSet::from_allocation(alloc, channel, config);
    let p = links.gather_powers(alloc);
    Ok(evaluate_links(&links, &p, channel, config))
}

/// Evaluation over a prepared link set, skipping structural checks.
pub fn evaluate_links(
    links: &LinkSet,
    p: &[f64],
    channel: &ChannelState,
    config: &ScenarioConfig,
) -> EvaluatedAllocation {
    let per_user_rate = links.user_rates(p);
    let sum_rate = per_user_rate.iter().sum();
    let transmit_power: f64 = p.iter().sum();
    let total_power = circuit_power(channel, config) + transmit_power;
    EvaluatedAllocation {
        per_user_rate,
        sum_rate,
        transmit_power,
        total_power,
        ee: sum_rate / total_power,
    }
}

/// Circuit power of all deployed APs.
pub fn circuit_power(channel: &ChannelState, config: &ScenarioConfig) -> f64 {
    config.circuit_macro
        + config.circuit_pico * channel.pico_count() as f64
        + config.circuit_vlc * channel.vlc_count() as f64
}

/// Per-user minimum-rate check. A user in outage passes vacuously.
pub fn check_qos(
    evaluated: &EvaluatedAllocation,
    alloc: &Allocation,
    config: &ScenarioConfig,
) -> Vec<bool> {
    check_qos_with_tolerance(evaluated, alloc, config, 0.0)
}

/// As [`check_qos`], accepting rates down to `r_min * (1 - rtol)`.
pub fn check_qos_with_tolerance(
    evaluated: &EvaluatedAllocation,
    alloc: &Allocation,
    config: &ScenarioConfig,
    rtol: f64,
) -> Vec<bool> {
    evaluated
        .per_user_rate
        .iter()
        .zip(&alloc.a)
        .map(|(&r, &active)| !active || r >= config.r_min * (1.0 - rtol))
        .collect()
}
