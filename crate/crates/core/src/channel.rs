//! RF and VLC channel power gains.
//!
//! RF gains combine distance path loss, indoor penetration loss, log-normal
//! shadowing and Rayleigh power fading, all in dB. VLC gains follow the
//! Lambertian line-of-sight model with a non-imaging concentrator, scaled by
//! the LoS availability probability.
//!
//! Random draws come from one ChaCha stream per (tier, AP, user), so a larger
//! scenario reuses the draws of a smaller one and changing `los_prob_range`
//! keeps the underlying uniforms fixed.

use std::f64::consts::PI;
use std::io::Write;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{Point3, ScenarioConfig, Topology};

/// Ground distances below this are clamped before evaluating RF path loss.
pub const MIN_RF_DISTANCE_M: f64 = 10.0;

/// Upper bound of the indoor penetration distance parameter, meters.
const MAX_PENETRATION_DEPTH_M: f64 = 25.0;

const CHANNEL_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApKind {
    Macro,
    Pico,
    Vlc,
}

impl ApKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ApKind::Macro => "macro",
            ApKind::Pico => "pico",
            ApKind::Vlc => "vlc",
        }
    }
}

fn check_distance(distance_km: f64) -> Result<()> {
    if distance_km > 0.0 && distance_km.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "path loss needs a positive distance, got {distance_km} km"
        )))
    }
}

/// Macrocell path loss in dB for a distance in km.
pub fn rf_pathloss_macro(distance_km: f64) -> Result<f64> {
    check_distance(distance_km)?;
    Ok(128.1 + 37.6 * distance_km.log10())
}

/// Picocell path loss in dB for a distance in km.
pub fn rf_pathloss_pico(distance_km: f64) -> Result<f64> {
    check_distance(distance_km)?;
    Ok(140.7 + 36.7 * distance_km.log10())
}

/// Indoor penetration loss in dB for a penetration distance in meters.
pub fn penetration_loss_db(kind: ApKind, depth_m: f64) -> f64 {
    match kind {
        ApKind::Pico => 23.0 + 0.5 * depth_m,
        _ => 20.0 + 0.5 * depth_m,
    }
}

/// Random dB terms of one RF link. Penetration depth and shadowing are per
/// (AP, user); fading is per subchannel.
#[derive(Debug, Clone, PartialEq)]
pub struct RfDraws {
    pub penetration_depth_m: f64,
    pub shadowing_db: f64,
    pub fading_db: Vec<f64>,
}

impl RfDraws {
    /// Draws the terms for one (AP, user) pair. The draw sequence does not
    /// depend on `indoor`.
    pub fn sample(
        rng: &mut impl Rng,
        ground_distance_m: f64,
        sigma_db: f64,
        subchannels: usize,
    ) -> Self {
        let u: f64 = rng.random();
        let penetration_depth_m = u * MAX_PENETRATION_DEPTH_M.min(ground_distance_m);
        let z: f64 = rng.sample(Normal::new(0.0, 1.0).expect("unit normal"));
        let fading_db = (0..subchannels)
            .map(|_| {
                let h: f64 = Exp1.sample(rng);
                -10.0 * h.max(f64::MIN_POSITIVE).log10()
            })
            .collect();
        Self {
            penetration_depth_m,
            shadowing_db: sigma_db * z,
            fading_db,
        }
    }
}

/// Gain `10^(-(L + Psi + Gamma + X)/10)` from explicit dB terms.
pub fn rf_gain_from_terms(
    kind: ApKind,
    distance_km: f64,
    indoor: bool,
    penetration_depth_m: f64,
    fading_db: f64,
    shadowing_db: f64,
) -> Result<f64> {
    let pathloss = match kind {
        ApKind::Macro => rf_pathloss_macro(distance_km)?,
        ApKind::Pico => rf_pathloss_pico(distance_km)?,
        ApKind::Vlc => {
            return Err(Error::Domain("rf_gain called with a VLC AP".into()));
        }
    };
    let psi = if indoor {
        penetration_loss_db(kind, penetration_depth_m)
    } else {
        0.0
    };
    Ok(10f64.powf(-(pathloss + psi + fading_db + shadowing_db) / 10.0))
}

/// Per-subchannel RF gains for one (AP, user) pair.
pub fn rf_gain(
    kind: ApKind,
    distance_km: f64,
    indoor: bool,
    sigma_db: f64,
    subchannels: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    check_distance(distance_km)?;
    let draws = RfDraws::sample(rng, distance_km * 1000.0, sigma_db, subchannels);
    draws
        .fading_db
        .iter()
        .map(|&fade| {
            rf_gain_from_terms(
                kind,
                distance_km,
                indoor,
                draws.penetration_depth_m,
                fade,
                draws.shadowing_db,
            )
        })
        .collect()
}

/// Lambertian order for a semi-angle at half power in degrees.
pub fn lambertian_order(semi_angle_deg: f64) -> f64 {
    -std::f64::consts::LN_2 / semi_angle_deg.to_radians().cos().ln()
}

/// Concentrator gain inside the field of view.
pub fn concentrator_gain(refractive_index: f64, fov_deg: f64) -> f64 {
    let s = fov_deg.to_radians().sin();
    refractive_index * refractive_index / (s * s)
}

/// Line-of-sight VLC gain for a downward-facing AP and an upward-facing
/// receiver, scaled by `rho`.
pub fn vlc_gain(ap: &Point3, user: &Point3, rho: f64, config: &ScenarioConfig) -> f64 {
    let d = ap.distance(user);
    let vertical = ap.z - user.z;
    if d <= 0.0 || vertical <= 0.0 {
        return 0.0;
    }
    let cos_angle = vertical / d;
    let incidence = cos_angle.clamp(-1.0, 1.0).acos();
    if incidence > config.pd_fov.to_radians() {
        return 0.0;
    }
    let m1 = lambertian_order(config.semi_angle_half_power);
    rho * config.pd_area * (m1 + 1.0) / (2.0 * PI * d * d)
        * cos_angle.powf(m1)
        * config.optical_filter_gain
        * concentrator_gain(config.refractive_index, config.pd_fov)
        * cos_angle
}

/// Gains and LoS probabilities for every (AP, user, subchannel) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    /// `[user, subchannel]`
    pub g_macro: Array2<f64>,
    /// `[pico, user, subchannel]`
    pub g_pico: Array3<f64>,
    /// `[vlc AP, user, subchannel]`, includes the LoS probability factor.
    pub g_vlc: Array3<f64>,
    /// `[vlc AP, user, subchannel]`
    pub rho: Array3<f64>,
    /// `[rf AP, user]` with row 0 the macro. A user may associate with a pico
    /// only inside its coverage radius; the macro covers everyone.
    pub rf_coverage: Array2<bool>,
}

fn stream_rng(seed: u64, tier: u64, ap: usize, user: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ CHANNEL_SEED_SALT);
    rng.set_stream((tier << 56) | ((ap as u64) << 28) | user as u64);
    rng
}

/// Assembles the channel tensors for a topology. Deterministic per
/// `config.seed`.
pub fn build_channel_state(topology: &Topology, config: &ScenarioConfig) -> Result<ChannelState> {
    let users = topology.user_count();
    let subs = config.subchannels_per_ap;
    let picos = topology.pico_positions.len();
    let vlc_positions = topology.vlc_ap_positions();
    let vlcs = vlc_positions.len();

    let mut g_macro = Array2::zeros((users, subs));
    let mut g_pico = Array3::zeros((picos, users, subs));
    let mut g_vlc = Array3::zeros((vlcs, users, subs));
    let mut rho = Array3::zeros((vlcs, users, subs));
    let mut rf_coverage = Array2::from_elem((1 + picos, users), false);

    let [lo, hi] = config.los_prob_range;
    for (j, user) in topology.user_positions.iter().enumerate() {
        let ground = user.ground();
        let indoor = topology.is_indoor(j);

        let rf_row = |kind: ApKind, ap_idx: usize, ap_pos| -> Result<Vec<f64>> {
            let dist_m = ground.distance(&ap_pos).max(MIN_RF_DISTANCE_M);
            let tier = if kind == ApKind::Macro { 0 } else { 1 };
            let mut rng = stream_rng(config.seed, tier, ap_idx, j);
            rf_gain(
                kind,
                dist_m / 1000.0,
                indoor,
                config.shadowing_sigma,
                subs,
                &mut rng,
            )
        };

        let macro_gains = rf_row(ApKind::Macro, 0, topology.macro_position)?;
        g_macro
            .row_mut(j)
            .assign(&ndarray::Array1::from(macro_gains));
        rf_coverage[[0, j]] = true;

        for (k, pos) in topology.pico_positions.iter().enumerate() {
            let gains = rf_row(ApKind::Pico, k, *pos)?;
            for (n, g) in gains.into_iter().enumerate() {
                g_pico[[k, j, n]] = g;
            }
            rf_coverage[[k + 1, j]] = ground.distance(pos) <= config.pico_radius;
        }

        for (v, ap) in vlc_positions.iter().enumerate() {
            let mut rng = stream_rng(config.seed, 2, v, j);
            let same_room = topology.user_room[j] == Some(topology.vlc_ap_room(v));
            for q in 0..subs {
                let u: f64 = rng.random();
                let r = lo + (hi - lo) * u;
                rho[[v, j, q]] = r;
                if same_room {
                    g_vlc[[v, j, q]] = vlc_gain(ap, user, r, config);
                }
            }
        }
    }

    Ok(ChannelState {
        g_macro,
        g_pico,
        g_vlc,
        rho,
        rf_coverage,
    })
}

impl ChannelState {
    pub fn user_count(&self) -> usize {
        self.g_macro.nrows()
    }

    pub fn subchannel_count(&self) -> usize {
        self.g_macro.ncols()
    }

    pub fn pico_count(&self) -> usize {
        self.g_pico.shape()[0]
    }

    pub fn vlc_count(&self) -> usize {
        self.g_vlc.shape()[0]
    }

    pub fn rf_ap_count(&self) -> usize {
        1 + self.pico_count()
    }

    /// Gain of RF AP `k` (0 = macro) to `user` on subchannel `sub`.
    pub fn rf_gain(&self, k: usize, user: usize, sub: usize) -> f64 {
        if k == 0 {
            self.g_macro[[user, sub]]
        } else {
            self.g_pico[[k - 1, user, sub]]
        }
    }

    pub fn mean_rf_gain(&self, k: usize, user: usize) -> f64 {
        let n = self.subchannel_count();
        (0..n).map(|s| self.rf_gain(k, user, s)).sum::<f64>() / n as f64
    }

    pub fn mean_vlc_gain(&self, v: usize, user: usize) -> f64 {
        let n = self.subchannel_count();
        (0..n).map(|s| self.g_vlc[[v, user, s]]).sum::<f64>() / n as f64
    }

    pub fn mean_rho(&self, v: usize, user: usize) -> f64 {
        let n = self.subchannel_count();
        (0..n).map(|s| self.rho[[v, user, s]]).sum::<f64>() / n as f64
    }

    /// A VLC AP is usable by a user only with a non-zero line-of-sight gain.
    pub fn vlc_reachable(&self, v: usize, user: usize) -> bool {
        (0..self.subchannel_count()).any(|s| self.g_vlc[[v, user, s]] > 0.0)
    }

    /// Writes every gain as a CSV row
    /// `ap_kind, ap_idx, user_idx, subch_idx, gain, rho`; `rho` is empty for RF.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            ap_kind: &'static str,
            ap_idx: usize,
            user_idx: usize,
            subch_idx: usize,
            gain: f64,
            rho: Option<f64>,
        }
        let mut w = csv::Writer::from_writer(out);
        let subs = self.subchannel_count();
        for j in 0..self.user_count() {
            for n in 0..subs {
                w.serialize(Row {
                    ap_kind: ApKind::Macro.as_str(),
                    ap_idx: 0,
                    user_idx: j,
                    subch_idx: n,
                    gain: self.g_macro[[j, n]],
                    rho: None,
                })?;
            }
        }
        for k in 0..self.pico_count() {
            for j in 0..self.user_count() {
                for n in 0..subs {
                    w.serialize(Row {
                        ap_kind: ApKind::Pico.as_str(),
                        ap_idx: k,
                        user_idx: j,
                        subch_idx: n,
                        gain: self.g_pico[[k, j, n]],
                        rho: None,
                    })?;
                }
            }
        }
        for v in 0..self.vlc_count() {
            for j in 0..self.user_count() {
                for n in 0..subs {
                    w.serialize(Row {
                        ap_kind: ApKind::Vlc.as_str(),
                        ap_idx: v,
                        user_idx: j,
                        subch_idx: n,
                        gain: self.g_vlc[[v, j, n]],
                        rho: Some(self.rho[[v, j, n]]),
                    })?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}
