//! Scenario configuration and seeded three-tier topology generation.
//!
//! A scenario is one macrocell disk centred on the origin, a set of picocell
//! APs and a set of square rooms dropped uniformly inside it, and the users.
//! Each room holds `vlc_aps_per_room` ceiling-mounted VLC APs on its long
//! axis. Everything is a pure function of the [`ScenarioConfig`] and its seed.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Converts a power level in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

/// Static parameters of a simulated network. Field names are the scenario
/// file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Macrocell radius in meters.
    pub macro_radius: f64,
    pub pico_count: usize,
    /// Picocell coverage radius in meters.
    pub pico_radius: f64,
    pub room_count: usize,
    /// Side of each square room in meters.
    pub room_side: f64,
    pub vlc_aps_per_room: usize,
    pub vlc_ap_height: f64,
    pub receiver_height: f64,
    pub user_count: usize,
    /// Probability that a user is dropped inside a (uniformly chosen) room.
    /// Users not dropped indoors are uniform over the macro disk.
    pub indoor_fraction: f64,
    /// Subchannels per AP, shared by the macro, pico and VLC tiers.
    pub subchannels_per_ap: usize,
    /// RF subchannel bandwidth in Hz.
    pub bandwidth_rf: f64,
    /// VLC subchannel bandwidth in Hz.
    pub bandwidth_vlc: f64,
    pub p_macro_budget: f64,
    pub p_pico_budget: f64,
    pub p_vlc_budget: f64,
    pub circuit_macro: f64,
    pub circuit_pico: f64,
    pub circuit_vlc: f64,
    /// W/Hz
    pub noise_psd_rf: f64,
    /// A^2/Hz
    pub noise_psd_vlc: f64,
    /// Minimum per-user rate in bit/s.
    pub r_min: f64,
    /// Photodetector area in m^2.
    pub pd_area: f64,
    /// LED semi-angle at half power, degrees.
    pub semi_angle_half_power: f64,
    pub optical_filter_gain: f64,
    pub refractive_index: f64,
    /// Photodetector field of view, degrees.
    pub pd_fov: f64,
    /// A/W
    pub pd_responsivity: f64,
    /// Log-normal shadowing standard deviation, dB.
    pub shadowing_sigma: f64,
    /// Square the RF power gain inside the SINR. Off by default because the
    /// gain is already a power ratio; squaring it leaves RF links at SNRs
    /// near 1e-8.
    pub square_rf_gain: bool,
    pub los_prob_range: [f64; 2],
    pub lambda_step: f64,
    pub solver_tolerance: f64,
    pub max_outer_iterations: usize,
}

impl Default for ScenarioConfig {
    /// The desk-scale scenario: one macro, two picos, two rooms with two VLC
    /// APs each, 20 users and 10 subchannels per AP.
    fn default() -> Self {
        Self {
            seed: 1,
            macro_radius: 500.0,
            pico_count: 2,
            pico_radius: 100.0,
            room_count: 2,
            room_side: 5.0,
            vlc_aps_per_room: 2,
            vlc_ap_height: 2.15,
            receiver_height: 0.85,
            user_count: 20,
            indoor_fraction: 0.5,
            subchannels_per_ap: 10,
            bandwidth_rf: 10e6,
            bandwidth_vlc: 20e6,
            p_macro_budget: dbm_to_watts(46.0),
            p_pico_budget: dbm_to_watts(30.0),
            p_vlc_budget: dbm_to_watts(30.0),
            circuit_macro: 130.0,
            circuit_pico: 6.8,
            circuit_vlc: 4.0,
            noise_psd_rf: dbm_to_watts(-174.0),
            noise_psd_vlc: 1e-21,
            r_min: 50e6,
            pd_area: 1e-4,
            semi_angle_half_power: 60.0,
            optical_filter_gain: 1.0,
            refractive_index: 1.5,
            pd_fov: 70.0,
            pd_responsivity: 0.53,
            shadowing_sigma: 10.0,
            square_rf_gain: false,
            los_prob_range: [0.0, 1.0],
            lambda_step: 0.1,
            solver_tolerance: 1e-4,
            max_outer_iterations: 10,
        }
    }
}

impl ScenarioConfig {
    /// Full-size parameter set: 50 subchannels per AP and 180 users.
    pub fn full_scale() -> Self {
        Self {
            subchannels_per_ap: 50,
            user_count: 180,
            pico_count: 4,
            room_count: 8,
            ..Self::default()
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn rf_ap_count(&self) -> usize {
        1 + self.pico_count
    }

    pub fn vlc_ap_count(&self) -> usize {
        self.room_count * self.vlc_aps_per_room
    }

    /// Sum of the circuit power of every deployed AP.
    pub fn circuit_total(&self) -> f64 {
        self.circuit_macro
            + self.circuit_pico * self.pico_count as f64
            + self.circuit_vlc * self.vlc_ap_count() as f64
    }

    /// The RF gain term that multiplies transmit power in the SINR.
    pub fn rf_effective_gain(&self, gain: f64) -> f64 {
        if self.square_rf_gain {
            gain * gain
        } else {
            gain
        }
    }

    /// The VLC gain term that multiplies transmit power in the SINR.
    pub fn vlc_effective_gain(&self, gain: f64) -> f64 {
        let current = self.pd_responsivity * gain;
        current * current
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("macro_radius", self.macro_radius),
            ("pico_radius", self.pico_radius),
            ("room_side", self.room_side),
            ("vlc_ap_height", self.vlc_ap_height),
            ("bandwidth_rf", self.bandwidth_rf),
            ("bandwidth_vlc", self.bandwidth_vlc),
            ("p_macro_budget", self.p_macro_budget),
            ("p_pico_budget", self.p_pico_budget),
            ("p_vlc_budget", self.p_vlc_budget),
            ("noise_psd_rf", self.noise_psd_rf),
            ("noise_psd_vlc", self.noise_psd_vlc),
            ("pd_area", self.pd_area),
            ("semi_angle_half_power", self.semi_angle_half_power),
            ("pd_fov", self.pd_fov),
            ("pd_responsivity", self.pd_responsivity),
            ("refractive_index", self.refractive_index),
            ("solver_tolerance", self.solver_tolerance),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be strictly positive, got {value}"
                )));
            }
        }
        let non_negative = [
            ("circuit_macro", self.circuit_macro),
            ("circuit_pico", self.circuit_pico),
            ("circuit_vlc", self.circuit_vlc),
            ("r_min", self.r_min),
            ("receiver_height", self.receiver_height),
            ("optical_filter_gain", self.optical_filter_gain),
            ("shadowing_sigma", self.shadowing_sigma),
        ];
        for (name, value) in non_negative {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be non-negative, got {value}"
                )));
            }
        }
        if self.subchannels_per_ap == 0 {
            return Err(Error::InvalidConfig(
                "subchannels_per_ap must be > 0".into(),
            ));
        }
        if self.room_count > 0 && self.vlc_aps_per_room == 0 {
            return Err(Error::InvalidConfig("vlc_aps_per_room must be > 0".into()));
        }
        if self.max_outer_iterations == 0 {
            return Err(Error::InvalidConfig(
                "max_outer_iterations must be > 0".into(),
            ));
        }
        if self.vlc_ap_height <= self.receiver_height {
            return Err(Error::InvalidConfig(
                "vlc_ap_height must exceed receiver_height".into(),
            ));
        }
        if self.semi_angle_half_power >= 90.0 || self.pd_fov >= 90.0 {
            return Err(Error::InvalidConfig(
                "angles must be below 90 degrees".into(),
            ));
        }
        let [lo, hi] = self.los_prob_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::InvalidConfig(format!(
                "los_prob_range must satisfy 0 <= low <= high <= 1, got [{lo}, {hi}]"
            )));
        }
        if !(self.lambda_step > 0.0 && self.lambda_step <= 1.0) {
            return Err(Error::InvalidConfig(
                "lambda_step must lie in (0, 1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.indoor_fraction) {
            return Err(Error::InvalidConfig(
                "indoor_fraction must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point2 {
    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl Point3 {
    pub fn ground(&self) -> Point2 {
        Point2 {
            x: self.x,
            y: self.y,
        }
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    /// Lower-left corner of the footprint.
    pub origin: Point2,
    pub side: f64,
    pub vlc_ap_positions: Vec<Point3>,
}

impl Room {
    pub fn contains(&self, p: &Point2) -> bool {
        p.x >= self.origin.x
            && p.x <= self.origin.x + self.side
            && p.y >= self.origin.y
            && p.y <= self.origin.y + self.side
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub macro_position: Point2,
    pub pico_positions: Vec<Point2>,
    pub rooms: Vec<Room>,
    pub user_positions: Vec<Point3>,
    /// Room index for indoor users, `None` outdoors.
    pub user_room: Vec<Option<usize>>,
}

impl Topology {
    pub fn user_count(&self) -> usize {
        self.user_positions.len()
    }

    pub fn is_indoor(&self, user: usize) -> bool {
        self.user_room[user].is_some()
    }

    /// VLC AP positions in global index order (room-major).
    pub fn vlc_ap_positions(&self) -> Vec<Point3> {
        self.rooms
            .iter()
            .flat_map(|r| r.vlc_ap_positions.iter().copied())
            .collect()
    }

    /// Room that hosts the given global VLC AP index.
    pub fn vlc_ap_room(&self, vlc_ap: usize) -> usize {
        let mut remaining = vlc_ap;
        for (idx, room) in self.rooms.iter().enumerate() {
            if remaining < room.vlc_ap_positions.len() {
                return idx;
            }
            remaining -= room.vlc_ap_positions.len();
        }
        panic!("VLC AP index {vlc_ap} out of range");
    }
}

fn uniform_in_disk(radius: f64, u: f64, v: f64) -> Point2 {
    let r = radius * u.sqrt();
    let theta = 2.0 * std::f64::consts::PI * v;
    Point2 {
        x: r * theta.cos(),
        y: r * theta.sin(),
    }
}

/// Ceiling positions of `count` APs spread evenly along the room's long axis.
/// Two APs land on the quarter points.
pub fn vlc_ap_layout(origin: Point2, side: f64, count: usize, height: f64) -> Vec<Point3> {
    (0..count)
        .map(|i| Point3 {
            x: origin.x + (2 * i + 1) as f64 * side / (2 * count) as f64,
            y: origin.y + side / 2.0,
            z: height,
        })
        .collect()
}

/// Draws a topology from the scenario. Deterministic per seed; every user
/// consumes the same number of draws so topologies with more users extend
/// those with fewer.
pub fn generate_topology(config: &ScenarioConfig) -> Result<Topology> {
    config.validate()?;
    if config.room_side > config.macro_radius {
        return Err(Error::Geometry(format!(
            "room_side {} exceeds macro_radius {}",
            config.room_side, config.macro_radius
        )));
    }
    let radius = config.macro_radius;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let pico_positions = (0..config.pico_count)
        .map(|_| {
            let (u, v) = (rng.random::<f64>(), rng.random::<f64>());
            uniform_in_disk(radius, u, v)
        })
        .collect();

    let side = config.room_side;
    let mut rooms = Vec::with_capacity(config.room_count);
    for _ in 0..config.room_count {
        // origins uniform over the disk, kept only when the footprint fits
        let origin = loop {
            let (u, v) = (rng.random::<f64>(), rng.random::<f64>());
            let o = uniform_in_disk(radius, u, v);
            let corners = [(0.0, 0.0), (side, 0.0), (0.0, side), (side, side)];
            if corners
                .iter()
                .all(|(dx, dy)| (o.x + dx).hypot(o.y + dy) <= radius)
            {
                break o;
            }
        };
        rooms.push(Room {
            origin,
            side,
            vlc_ap_positions: vlc_ap_layout(
                origin,
                side,
                config.vlc_aps_per_room,
                config.vlc_ap_height,
            ),
        });
    }

    let mut user_positions = Vec::with_capacity(config.user_count);
    let mut user_room = Vec::with_capacity(config.user_count);
    for _ in 0..config.user_count {
        let coin: f64 = rng.random();
        let pick: f64 = rng.random();
        let a: f64 = rng.random();
        let b: f64 = rng.random();
        let ground = if !rooms.is_empty() && coin < config.indoor_fraction {
            let idx = ((pick * rooms.len() as f64) as usize).min(rooms.len() - 1);
            let room: &Room = &rooms[idx];
            Point2 {
                x: room.origin.x + a * side,
                y: room.origin.y + b * side,
            }
        } else {
            uniform_in_disk(radius, a, b)
        };
        user_room.push(rooms.iter().position(|r| r.contains(&ground)));
        user_positions.push(Point3 {
            x: ground.x,
            y: ground.y,
            z: config.receiver_height,
        });
    }

    Ok(Topology {
        macro_position: Point2 { x: 0.0, y: 0.0 },
        pico_positions,
        rooms,
        user_positions,
        user_room,
    })
}
