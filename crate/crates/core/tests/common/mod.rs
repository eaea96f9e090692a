#![allow(dead_code)]

use ndarray::{Array2, Array3};
use rfvlc_core::channel::{build_channel_state, ChannelState};
use rfvlc_core::matching::{build_preferences, extract_assignment, run_matching};
use rfvlc_core::rate_energy::{Allocation, AssignmentMode};
use rfvlc_core::scenario::{generate_topology, ScenarioConfig};
use rfvlc_core::subchannel::allocate_scg;

/// RF noise power over one subchannel for the default config.
pub fn rf_noise(cfg: &ScenarioConfig) -> f64 {
    cfg.noise_psd_rf * cfg.bandwidth_rf
}

/// Macro-only channel with `[user, sub]` gains; every user is covered.
pub fn macro_channel(g: Array2<f64>) -> ChannelState {
    let (u, n) = g.dim();
    ChannelState {
        g_macro: g,
        g_pico: Array3::zeros((0, u, n)),
        g_vlc: Array3::zeros((0, u, n)),
        rho: Array3::zeros((0, u, n)),
        rf_coverage: Array2::from_elem((1, u), true),
    }
}

/// Two picos on one subchannel, user `i` served by pico `i`. `own[i]` is the
/// serving gain of user `i` and `cross[i]` the gain from the other pico.
pub fn pico_pair(own: [f64; 2], cross: [f64; 2]) -> ChannelState {
    let mut g_pico = Array3::zeros((2, 2, 1));
    for i in 0..2 {
        g_pico[[i, i, 0]] = own[i];
        g_pico[[1 - i, i, 0]] = cross[i];
    }
    ChannelState {
        g_macro: Array2::zeros((2, 1)),
        g_pico,
        g_vlc: Array3::zeros((0, 2, 1)),
        rho: Array3::zeros((0, 2, 1)),
        rf_coverage: Array2::from_elem((3, 2), true),
    }
}

pub fn pico_pair_allocation(channel: &ChannelState) -> Allocation {
    let mut x_rf = Array2::from_elem((3, 2), false);
    x_rf[[1, 0]] = true;
    x_rf[[2, 1]] = true;
    let x_vlc = Array2::from_elem((0, 2), false);
    allocate_scg(&x_rf, &x_vlc, channel, AssignmentMode::Aggregated)
}

/// Every user on the macro, subchannels by SCG.
pub fn all_on_macro(channel: &ChannelState) -> Allocation {
    let u = channel.user_count();
    let x_rf = Array2::from_elem((1, u), true);
    let x_vlc = Array2::from_elem((0, u), false);
    allocate_scg(&x_rf, &x_vlc, channel, AssignmentMode::Aggregated)
}

/// A generated scenario with its matching-based SCG allocation.
pub struct Instance {
    pub config: ScenarioConfig,
    pub channel: ChannelState,
    pub alloc: Allocation,
}

pub fn desk_instance(config: ScenarioConfig) -> Instance {
    let topology = generate_topology(&config).unwrap();
    let channel = build_channel_state(&topology, &config).unwrap();
    let prefs = build_preferences(&channel, &config, None);
    let matching = run_matching(&prefs);
    let (x_rf, x_vlc) = extract_assignment(&matching, channel.rf_ap_count(), channel.vlc_count());
    let alloc = allocate_scg(&x_rf, &x_vlc, &channel, AssignmentMode::Aggregated);
    Instance {
        config,
        channel,
        alloc,
    }
}

pub fn small_desk(seed: u64, users: usize) -> Instance {
    desk_instance(ScenarioConfig {
        seed,
        user_count: users,
        subchannels_per_ap: 4,
        ..Default::default()
    })
}
