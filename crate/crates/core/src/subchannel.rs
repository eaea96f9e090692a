//! Subchannel allocation given an AP assignment.
//!
//! The SCG rule grants each subchannel of an AP to the assigned user with the
//! strongest gain on it. The QoS-first variant first hands out subchannels
//! round-robin to users below the minimum rate, then falls back to SCG.

use ndarray::Array2;

use crate::channel::{ApKind, ChannelState};
use crate::rate_energy::{rate_macro, rate_vlc, Allocation, AssignmentMode, TxAp};
use crate::scenario::ScenarioConfig;

pub use crate::rate_energy::validate_sa;

fn tier_gain(channel: &ChannelState, ap: TxAp, user: usize, sub: usize) -> f64 {
    match ap.kind {
        ApKind::Macro => channel.g_macro[[user, sub]],
        ApKind::Pico => channel.g_pico[[ap.idx, user, sub]],
        ApKind::Vlc => channel.g_vlc[[ap.idx, user, sub]],
    }
}

fn with_assignment(
    x_rf: &Array2<bool>,
    x_vlc: &Array2<bool>,
    channel: &ChannelState,
    mode: AssignmentMode,
) -> Allocation {
    let mut alloc = Allocation::empty(channel);
    alloc.mode = mode;
    alloc.x_rf.assign(x_rf);
    alloc.x_vlc.assign(x_vlc);
    alloc
}

fn assigned_users(alloc: &Allocation, ap: TxAp) -> Vec<usize> {
    (0..alloc.user_count())
        .filter(|&j| alloc.x(ap, j))
        .collect()
}

/// Grants every still-free subchannel of every AP to its strongest assigned
/// user.
fn fill_scg(alloc: &mut Allocation, channel: &ChannelState) {
    for ap in TxAp::all(channel) {
        let users = assigned_users(alloc, ap);
        if users.is_empty() {
            continue;
        }
        for q in 0..alloc.subchannel_count() {
            if alloc.holder(ap, q).is_some() {
                continue;
            }
            let mut best = users[0];
            for &j in &users[1..] {
                if tier_gain(channel, ap, j, q) > tier_gain(channel, ap, best, q) {
                    best = j;
                }
            }
            alloc.set_s(ap, best, q, true);
        }
    }
}

/// SCG subchannel allocation. Powers are left at zero; `a[j]` is set iff user
/// `j` received at least one subchannel.
pub fn allocate_scg(
    x_rf: &Array2<bool>,
    x_vlc: &Array2<bool>,
    channel: &ChannelState,
    mode: AssignmentMode,
) -> Allocation {
    let mut alloc = with_assignment(x_rf, x_vlc, channel, mode);
    fill_scg(&mut alloc, channel);
    alloc.refresh_outage_flags();
    alloc
}

/// Interference-free rate of one subchannel at an equal power split.
fn estimated_rate(
    channel: &ChannelState,
    config: &ScenarioConfig,
    ap: TxAp,
    user: usize,
    sub: usize,
) -> f64 {
    let share = ap.budget(config) / channel.subchannel_count() as f64;
    let g = tier_gain(channel, ap, user, sub);
    match ap.kind {
        ApKind::Vlc => rate_vlc(share, g, channel.rho[[ap.idx, user, sub]], &[], config),
        _ => rate_macro(share, g, config),
    }
}

/// QoS-first allocation: per AP (VLC first, then picos, then the macro),
/// users short of `r_min` take turns in ascending order of their current
/// estimated rate, each taking its best remaining subchannel, until they reach
/// `r_min` or the AP runs out. Remaining subchannels go out by SCG.
pub fn allocate_qos_first(
    x_rf: &Array2<bool>,
    x_vlc: &Array2<bool>,
    channel: &ChannelState,
    config: &ScenarioConfig,
    mode: AssignmentMode,
) -> Allocation {
    let mut alloc = with_assignment(x_rf, x_vlc, channel, mode);
    let subs = alloc.subchannel_count();
    let mut current = vec![0.0; alloc.user_count()];

    let mut order = TxAp::all(channel);
    order.sort_by_key(|ap| match ap.kind {
        ApKind::Vlc => 0,
        ApKind::Pico => 1,
        ApKind::Macro => 2,
    });

    for ap in order {
        let mut free: Vec<usize> = (0..subs).collect();
        let mut needy: Vec<usize> = assigned_users(&alloc, ap)
            .into_iter()
            .filter(|&j| current[j] < config.r_min)
            .collect();
        while !needy.is_empty() && !free.is_empty() {
            needy.sort_by(|&a, &b| current[a].total_cmp(&current[b]).then(a.cmp(&b)));
            let mut still = Vec::new();
            for &j in &needy {
                if free.is_empty() {
                    still.push(j);
                    continue;
                }
                let (pos, rate) = free
                    .iter()
                    .enumerate()
                    .map(|(pos, &q)| (pos, estimated_rate(channel, config, ap, j, q)))
                    .fold((0, f64::NEG_INFINITY), |best, cur| {
                        if cur.1 > best.1 {
                            cur
                        } else {
                            best
                        }
                    });
                if rate <= 0.0 {
                    // nothing useful left for this user on this AP
                    continue;
                }
                let q = free.remove(pos);
                alloc.set_s(ap, j, q, true);
                current[j] += rate;
                if current[j] < config.r_min {
                    still.push(j);
                }
            }
            needy = still;
        }
    }

    fill_scg(&mut alloc, channel);
    alloc.refresh_outage_flags();
    alloc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use ndarray::{Array2, Array3};

    /// Macro-only channel with the given `[user, sub]` gains.
    fn macro_channel(g: Array2<f64>) -> ChannelState {
        let (u, n) = g.dim();
        ChannelState {
            g_macro: g,
            g_pico: Array3::zeros((0, u, n)),
            g_vlc: Array3::zeros((0, u, n)),
            rho: Array3::zeros((0, u, n)),
            rf_coverage: Array2::from_elem((1, u), true),
        }
    }

    fn all_on_macro(users: usize) -> (Array2<bool>, Array2<bool>) {
        (
            Array2::from_elem((1, users), true),
            Array2::from_elem((0, users), false),
        )
    }

    #[test]
    fn lone_user_takes_everything() {
        let ch = macro_channel(Array2::from_elem((1, 4), 1e-10));
        let (x_rf, x_vlc) = all_on_macro(1);
        let alloc = allocate_scg(&x_rf, &x_vlc, &ch, AssignmentMode::Aggregated);
        assert!(alloc.s_macro.iter().all(|&s| s));
        assert_eq!(alloc.a, vec![true]);
    }

    #[test]
    fn per_subchannel_argmax() {
        let g = ndarray::array![[3.0, 1.0, 2.0], [1.0, 4.0, 2.0]];
        let ch = macro_channel(g.clone());
        let (x_rf, x_vlc) = all_on_macro(2);
        let alloc = allocate_scg(&x_rf, &x_vlc, &ch, AssignmentMode::Aggregated);
        for q in 0..3 {
            let best = if g[[1, q]] > g[[0, q]] { 1 } else { 0 };
            assert!(alloc.s_macro[[best, q]]);
            assert!(!alloc.s_macro[[1 - best, q]]);
        }
        validate_sa(&alloc).unwrap();
    }

    #[test]
    fn blocked_vlc_does_not_affect_macro() {
        let u = 1;
        let n = 2;
        let ch = ChannelState {
            g_macro: Array2::from_elem((u, n), 1e-10),
            g_pico: Array3::zeros((0, u, n)),
            g_vlc: Array3::zeros((1, u, n)),
            rho: Array3::zeros((1, u, n)),
            rf_coverage: Array2::from_elem((1, u), true),
        };
        let x_rf = Array2::from_elem((1, u), true);
        let x_vlc = Array2::from_elem((1, u), true);
        let alloc = allocate_scg(&x_rf, &x_vlc, &ch, AssignmentMode::Aggregated);
        assert!(alloc.s_macro.iter().all(|&s| s));
    }

    #[test]
    fn weaker_user_served_first() {
        let cfg = ScenarioConfig::default();
        let g = ndarray::array![[1e-9, 1e-9], [1e-12, 1e-12]];
        let ch = macro_channel(g.clone());
        let (x_rf, x_vlc) = all_on_macro(2);
        let scg = allocate_scg(&x_rf, &x_vlc, &ch, AssignmentMode::Aggregated);
        assert_eq!(scg.a, vec![true, false]);
        let qos = allocate_qos_first(&x_rf, &x_vlc, &ch, &cfg, AssignmentMode::Aggregated);
        assert_eq!(qos.a, vec![true, true]);
        assert_eq!(qos.subchannels_of(1), 1);
    }

    #[test]
    fn zero_rate_target_is_plain_scg() {
        let cfg = ScenarioConfig {
            r_min: 0.0,
            ..Default::default()
        };
        let g = ndarray::array![[3.0e-10, 1.0e-10, 2.0e-10], [1.0e-10, 4.0e-10, 2.5e-10]];
        let ch = macro_channel(g);
        let (x_rf, x_vlc) = all_on_macro(2);
        let scg = allocate_scg(&x_rf, &x_vlc, &ch, AssignmentMode::Aggregated);
        let qos = allocate_qos_first(&x_rf, &x_vlc, &ch, &cfg, AssignmentMode::Aggregated);
        assert_eq!(scg, qos);
    }

    #[test]
    fn abundant_subchannels_meet_targets() {
        let cfg = ScenarioConfig {
            subchannels_per_ap: 40,
            ..Default::default()
        };
        let g = Array2::from_shape_fn((3, 40), |(j, q)| 1e-10 * (1.0 + ((j * 7 + q) % 5) as f64));
        let ch = macro_channel(g);
        let (x_rf, x_vlc) = all_on_macro(3);
        let alloc = allocate_qos_first(&x_rf, &x_vlc, &ch, &cfg, AssignmentMode::Aggregated);
        let ap = TxAp {
            kind: ApKind::Macro,
            idx: 0,
        };
        for j in 0..3 {
            let est: f64 = (0..40)
                .filter(|&q| alloc.s_macro[[j, q]])
                .map(|q| estimated_rate(&ch, &cfg, ap, j, q))
                .sum();
            assert!(est >= cfg.r_min);
        }
        validate_sa(&alloc).unwrap();
    }

    #[test]
    fn manual_violations() {
        let ch = macro_channel(Array2::from_elem((2, 2), 1e-10));
        let (x_rf, x_vlc) = all_on_macro(2);
        let mut alloc = allocate_scg(&x_rf, &x_vlc, &ch, AssignmentMode::Aggregated);
        alloc.a = vec![true, true];
        alloc.s_macro[[1, 0]] = true;
        assert!(matches!(
            validate_sa(&alloc),
            Err(Error::ConstraintViolation {
                constraint: "C4",
                ..
            })
        ));

        let mut x_rf = Array2::from_elem((1, 2), true);
        x_rf[[0, 1]] = false;
        let mut alloc = allocate_scg(&x_rf, &x_vlc, &ch, AssignmentMode::Aggregated);
        alloc.s_macro[[0, 1]] = false;
        alloc.s_macro[[1, 1]] = true;
        alloc.a[1] = true;
        assert!(matches!(
            validate_sa(&alloc),
            Err(Error::ConstraintViolation {
                constraint: "C1",
                ..
            })
        ));
    }
}
