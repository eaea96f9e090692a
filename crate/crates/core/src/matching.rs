//! AP assignment as a many-to-one matching game with power quotas.
//!
//! Users and APs rank each other by a potential-EE metric computed from
//! subchannel-averaged gains and a per-user power share. Deferred acceptance
//! runs separately for the RF tier (macro plus picos) and the VLC tier. An AP
//! can hold as many users as fit in its power budget at that share.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelState;
use crate::error::Result;
use crate::rate_energy::VLC_SNR_FACTOR;
use crate::scenario::ScenarioConfig;

/// Relative slack on quota checks.
const QUOTA_RTOL: f64 = 1e-9;

/// Preference structure of one matching game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceList {
    /// `[ap, user]` potential EE in bit/J.
    pub metric: Array2<f64>,
    /// `[ap, user]` whether the pair may be matched at all.
    pub acceptable: Array2<bool>,
    /// Acceptable APs of each user, best first.
    pub user_pref: Vec<Vec<usize>>,
    /// Acceptable users of each AP, best first.
    pub ap_pref: Vec<Vec<usize>>,
}

impl PreferenceList {
    /// Builds both sides' orderings from a metric matrix. Ties go to the lower
    /// index.
    pub fn from_metric(metric: Array2<f64>, acceptable: Array2<bool>) -> Self {
        let (aps, users) = metric.dim();
        let user_pref = (0..users)
            .map(|j| {
                let mut list: Vec<usize> = (0..aps).filter(|&k| acceptable[[k, j]]).collect();
                list.sort_by(|&a, &b| metric[[b, j]].total_cmp(&metric[[a, j]]).then(a.cmp(&b)));
                list
            })
            .collect();
        let ap_pref = (0..aps)
            .map(|k| {
                let mut list: Vec<usize> = (0..users).filter(|&j| acceptable[[k, j]]).collect();
                list.sort_by(|&a, &b| metric[[k, b]].total_cmp(&metric[[k, a]]).then(a.cmp(&b)));
                list
            })
            .collect();
        Self {
            metric,
            acceptable,
            user_pref,
            ap_pref,
        }
    }

    pub fn ap_count(&self) -> usize {
        self.metric.nrows()
    }

    pub fn user_count(&self) -> usize {
        self.metric.ncols()
    }

    /// Position of `user` in the AP's list (lower is better).
    fn ap_ranks(&self) -> Vec<Vec<usize>> {
        self.ap_pref
            .iter()
            .map(|list| {
                let mut rank = vec![usize::MAX; self.user_count()];
                for (pos, &j) in list.iter().enumerate() {
                    rank[j] = pos;
                }
                rank
            })
            .collect()
    }

    /// Position of each AP in the user's list (lower is better).
    fn user_ranks(&self) -> Vec<Vec<usize>> {
        self.user_pref
            .iter()
            .map(|list| {
                let mut rank = vec![usize::MAX; self.ap_count()];
                for (pos, &k) in list.iter().enumerate() {
                    rank[k] = pos;
                }
                rank
            })
            .collect()
    }
}

/// Power budgets and the per-user reservation of each AP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quotas {
    pub budget: Vec<f64>,
    pub per_user: Vec<f64>,
}

impl Quotas {
    pub fn admits(&self, ap: usize, count: usize) -> bool {
        count as f64 * self.per_user[ap] <= self.budget[ap] * (1.0 + QUOTA_RTOL)
    }
}

/// Preferences of both games.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTables {
    pub rf: PreferenceList,
    pub vlc: PreferenceList,
    pub rf_quotas: Quotas,
    pub vlc_quotas: Quotas,
}

/// Transmit powers fed back from a previous power allocation. `own[[ap, user]]`
/// replaces the per-user share in that pair's signal term and `ap_level[ap]`
/// replaces it in interference terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFeedback {
    pub rf_own: Array2<f64>,
    pub rf_ap_level: Vec<f64>,
    pub vlc_own: Array2<f64>,
    pub vlc_ap_level: Vec<f64>,
}

/// Potential-EE preference tables. Without feedback every AP is assumed to
/// spend budget / |subchannels| per user, with every co-tier AP transmitting
/// at its share (worst-case interference).
pub fn build_preferences(
    channel: &ChannelState,
    config: &ScenarioConfig,
    feedback: Option<&PowerFeedback>,
) -> PreferenceTables {
    let users = channel.user_count();
    let n = channel.subchannel_count() as f64;
    let rf_aps = channel.rf_ap_count();
    let vlc_aps = channel.vlc_count();

    let rf_budget: Vec<f64> = (0..rf_aps)
        .map(|k| {
            if k == 0 {
                config.p_macro_budget
            } else {
                config.p_pico_budget
            }
        })
        .collect();
    let rf_share: Vec<f64> = rf_budget.iter().map(|b| b / n).collect();
    let vlc_budget = vec![config.p_vlc_budget; vlc_aps];
    let vlc_share: Vec<f64> = vlc_budget.iter().map(|b| b / n).collect();

    let rf_own = |k: usize, j: usize| feedback.map_or(rf_share[k], |f| f.rf_own[[k, j]]);
    let rf_level = |k: usize| feedback.map_or(rf_share[k], |f| f.rf_ap_level[k]);
    let vlc_own = |v: usize, j: usize| feedback.map_or(vlc_share[v], |f| f.vlc_own[[v, j]]);
    let vlc_level = |v: usize| feedback.map_or(vlc_share[v], |f| f.vlc_ap_level[v]);

    let rf_noise = config.noise_psd_rf * config.bandwidth_rf;
    let mut rf_metric = Array2::zeros((rf_aps, users));
    let mut rf_ok = Array2::from_elem((rf_aps, users), false);
    for j in 0..users {
        let mean_gain: Vec<f64> = (0..rf_aps)
            .map(|k| config.rf_effective_gain(channel.mean_rf_gain(k, j)))
            .collect();
        for k in 0..rf_aps {
            let (interference, circuit) = if k == 0 {
                (0.0, config.circuit_macro)
            } else {
                let i: f64 = (1..rf_aps)
                    .filter(|&o| o != k)
                    .map(|o| rf_level(o) * mean_gain[o])
                    .sum();
                (i, config.circuit_pico)
            };
            let sinr = rf_own(k, j) * mean_gain[k] / (interference + rf_noise);
            rf_metric[[k, j]] =
                config.bandwidth_rf * (1.0 + sinr).log2() / (circuit + rf_budget[k]);
            rf_ok[[k, j]] = channel.rf_coverage[[k, j]];
        }
    }

    let vlc_noise = config.noise_psd_vlc * config.bandwidth_vlc;
    let mut vlc_metric = Array2::zeros((vlc_aps, users));
    let mut vlc_ok = Array2::from_elem((vlc_aps, users), false);
    for j in 0..users {
        let mean_gain: Vec<f64> = (0..vlc_aps)
            .map(|v| config.vlc_effective_gain(channel.mean_vlc_gain(v, j)))
            .collect();
        for v in 0..vlc_aps {
            let interference: f64 = (0..vlc_aps)
                .filter(|&o| o != v)
                .map(|o| vlc_level(o) * mean_gain[o])
                .sum();
            let sinr = vlc_own(v, j) * mean_gain[v] / (interference + vlc_noise);
            vlc_metric[[v, j]] = channel.mean_rho(v, j)
                * config.bandwidth_vlc
                * (1.0 + VLC_SNR_FACTOR * sinr).log2()
                / (config.circuit_vlc + vlc_budget[v]);
            vlc_ok[[v, j]] = channel.vlc_reachable(v, j);
        }
    }

    PreferenceTables {
        rf: PreferenceList::from_metric(rf_metric, rf_ok),
        vlc: PreferenceList::from_metric(vlc_metric, vlc_ok),
        rf_quotas: Quotas {
            budget: rf_budget,
            per_user: rf_share,
        },
        vlc_quotas: Quotas {
            budget: vlc_budget,
            per_user: vlc_share,
        },
    }
}

/// Result of one deferred-acceptance game.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameOutcome {
    /// AP matched to each user.
    pub partner: Vec<Option<usize>>,
    /// Users held by each AP, in the AP's preference order.
    pub waitlists: Vec<Vec<usize>>,
    /// Proposals made by each user.
    pub proposals: Vec<usize>,
    pub rounds: usize,
}

impl GameOutcome {
    pub fn total_proposals(&self) -> usize {
        self.proposals.iter().sum()
    }
}

/// User-proposing deferred acceptance with power quotas.
pub fn run_game(prefs: &PreferenceList, quotas: &Quotas) -> GameOutcome {
    let users = prefs.user_count();
    let aps = prefs.ap_count();
    let rank = prefs.ap_ranks();
    let mut next = vec![0usize; users];
    let mut partner: Vec<Option<usize>> = vec![None; users];
    let mut waitlists: Vec<Vec<usize>> = vec![Vec::new(); aps];
    let mut proposals = vec![0usize; users];
    let mut rounds = 0;

    loop {
        let mut applicants: Vec<Vec<usize>> = vec![Vec::new(); aps];
        let mut any = false;
        for j in 0..users {
            if partner[j].is_none() && next[j] < prefs.user_pref[j].len() {
                let k = prefs.user_pref[j][next[j]];
                next[j] += 1;
                proposals[j] += 1;
                applicants[k].push(j);
                any = true;
            }
        }
        if !any {
            break;
        }
        rounds += 1;
        for k in 0..aps {
            if applicants[k].is_empty() {
                continue;
            }
            let mut pool = std::mem::take(&mut waitlists[k]);
            pool.append(&mut applicants[k]);
            pool.sort_by_key(|&j| rank[k][j]);
            let mut kept = Vec::new();
            for j in pool {
                if quotas.admits(k, kept.len() + 1) {
                    partner[j] = Some(k);
                    kept.push(j);
                } else {
                    partner[j] = None;
                }
            }
            waitlists[k] = kept;
        }
    }

    GameOutcome {
        partner,
        waitlists,
        proposals,
        rounds,
    }
}

/// Final AP assignment of both tiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingState {
    pub rf: GameOutcome,
    pub vlc: GameOutcome,
    /// Users rejected by every RF AP; they are attached to the macro with no
    /// reserved power.
    pub rf_fallback: Vec<usize>,
}

impl MatchingState {
    /// RF AP of each user after the macro fallback.
    pub fn rf_ap(&self, user: usize) -> usize {
        self.rf.partner[user].unwrap_or(0)
    }

    pub fn vlc_ap(&self, user: usize) -> Option<usize> {
        self.vlc.partner[user]
    }
}

/// Runs the RF and VLC games independently.
pub fn run_matching(prefs: &PreferenceTables) -> MatchingState {
    let rf = run_game(&prefs.rf, &prefs.rf_quotas);
    let vlc = run_game(&prefs.vlc, &prefs.vlc_quotas);
    let rf_fallback = (0..rf.partner.len())
        .filter(|&j| rf.partner[j].is_none())
        .collect();
    MatchingState {
        rf,
        vlc,
        rf_fallback,
    }
}

/// Binary assignment matrices `(x_rf [rf AP, user], x_vlc [vlc AP, user])`.
pub fn extract_assignment(
    matching: &MatchingState,
    rf_aps: usize,
    vlc_aps: usize,
) -> (Array2<bool>, Array2<bool>) {
    let users = matching.rf.partner.len();
    let mut x_rf = Array2::from_elem((rf_aps, users), false);
    let mut x_vlc = Array2::from_elem((vlc_aps, users), false);
    for j in 0..users {
        if rf_aps > 0 {
            x_rf[[matching.rf_ap(j), j]] = true;
        }
        if let Some(v) = matching.vlc_ap(j) {
            x_vlc[[v, j]] = true;
        }
    }
    (x_rf, x_vlc)
}

/// Outcome of a stability scan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub stable: bool,
    /// A `(user, ap)` pair that blocks the matching.
    pub blocking_pair: Option<(usize, usize)>,
}

/// Scans every acceptable (user, AP) pair for a blocking pair: the user
/// strictly prefers the AP to its partner, and the AP has spare quota or
/// holds someone it ranks below the user. Also rejects matchings that break
/// a quota or pair unacceptable partners.
pub fn certify_stability(
    outcome: &GameOutcome,
    prefs: &PreferenceList,
    quotas: &Quotas,
) -> StabilityReport {
    let ap_rank = prefs.ap_ranks();
    let user_rank = prefs.user_ranks();
    let aps = prefs.ap_count();
    let mut held: Vec<Vec<usize>> = vec![Vec::new(); aps];
    for (j, p) in outcome.partner.iter().enumerate() {
        if let Some(k) = *p {
            if !prefs.acceptable[[k, j]] {
                return StabilityReport {
                    stable: false,
                    blocking_pair: Some((j, k)),
                };
            }
            held[k].push(j);
        }
    }
    for (k, members) in held.iter().enumerate() {
        if !quotas.admits(k, members.len()) {
            return StabilityReport {
                stable: false,
                blocking_pair: members.last().map(|&j| (j, k)),
            };
        }
    }
    for j in 0..prefs.user_count() {
        let current = outcome.partner[j].map_or(usize::MAX, |k| user_rank[j][k]);
        for &k in &prefs.user_pref[j] {
            if user_rank[j][k] >= current {
                break;
            }
            let slack = quotas.admits(k, held[k].len() + 1);
            let displaces = held[k].iter().any(|&i| ap_rank[k][i] > ap_rank[k][j]);
            if slack || displaces {
                return StabilityReport {
                    stable: false,
                    blocking_pair: Some((j, k)),
                };
            }
        }
    }
    StabilityReport {
        stable: true,
        blocking_pair: None,
    }
}

/// Writes `user, rf_ap, vlc_ap_or_none, ee_rf_metric, ee_vlc_metric` rows.
pub fn write_matching_csv<W: Write>(
    matching: &MatchingState,
    prefs: &PreferenceTables,
    out: W,
) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        user: usize,
        rf_ap: usize,
        vlc_ap_or_none: Option<usize>,
        ee_rf_metric: f64,
        ee_vlc_metric: Option<f64>,
    }
    let mut w = csv::Writer::from_writer(out);
    for j in 0..matching.rf.partner.len() {
        let rf_ap = matching.rf_ap(j);
        let vlc = matching.vlc_ap(j);
        w.serialize(Row {
            user: j,
            rf_ap,
            vlc_ap_or_none: vlc,
            ee_rf_metric: prefs.rf.metric[[rf_ap, j]],
            ee_vlc_metric: vlc.map(|v| prefs.vlc.metric[[v, j]]),
        })?;
    }
    w.flush()?;
    Ok(())
}
