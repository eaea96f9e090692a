//! Quadratic transform of the SINR terms.
//!
//! For a link with signal coefficient `a`, interference `I` and noise `s`,
//! `2 y sqrt(p a) - y^2 (I + s)` is concave in the powers for fixed `y >= 0`
//! and its maximum over `y`, reached at `y = sqrt(p a) / (I + s)`, equals the
//! SINR `p a / (I + s)`.

use crate::rate_energy::{Interferer, LinkSet};

/// Transformed SINR. `interferers` holds `(power, gain)` pairs.
pub fn quad_sinr(p: f64, gain: f64, interferers: &[Interferer], noise: f64, y: f64) -> f64 {
    let interference: f64 = interferers.iter().map(|&(q, g)| q * g).sum();
    2.0 * y * (p * gain).sqrt() - y * y * (interference + noise)
}

/// Maximizer of [`quad_sinr`] over `y`.
pub fn optimal_y(p: f64, gain: f64, interferers: &[Interferer], noise: f64) -> f64 {
    let interference: f64 = interferers.iter().map(|&(q, g)| q * g).sum();
    (p * gain).sqrt() / (interference + noise)
}

/// Auxiliary variables of every link at powers `p`.
pub fn optimal_aux(links: &LinkSet, p: &[f64]) -> Vec<f64> {
    (0..links.len())
        .map(|l| {
            let link = &links.links[l];
            (p[l] * link.gain).sqrt() / (links.interference(l, p) + link.noise)
        })
        .collect()
}

/// Transformed SINR of link `l`.
pub fn link_quad_sinr(links: &LinkSet, l: usize, p: &[f64], y: &[f64]) -> f64 {
    let link = &links.links[l];
    let yl = y[l];
    2.0 * yl * (p[l] * link.gain).sqrt() - yl * yl * (links.interference(l, p) + link.noise)
}

/// `log2` on `[1, inf)`, continued below 1 by its tangent at 1. The result is
/// concave, continuously differentiable and finite everywhere; below 1 it is
/// negative, so a transformed rate stays a lower bound on the true rate.
pub fn log2_extended(arg: f64) -> f64 {
    if arg >= 1.0 {
        arg.log2()
    } else {
        (arg - 1.0) / std::f64::consts::LN_2
    }
}

fn log2_extended_slope(arg: f64) -> f64 {
    1.0 / (std::f64::consts::LN_2 * arg.max(1.0))
}

/// Transformed rate of link `l`.
pub fn transformed_rate(links: &LinkSet, l: usize, p: &[f64], y: &[f64]) -> f64 {
    let link = &links.links[l];
    link.weight * log2_extended(1.0 + link.snr_factor * link_quad_sinr(links, l, p, y))
}

pub fn transformed_sum_rate(links: &LinkSet, p: &[f64], y: &[f64]) -> f64 {
    (0..links.len())
        .map(|l| transformed_rate(links, l, p, y))
        .sum()
}

/// Smallest power used inside the square-root derivative, so the gradient
/// stays finite at zero power.
pub(crate) const SQRT_FLOOR: f64 = 1e-30;

/// Adds `sum_l w[l] * d(transformed_rate_l)/dp` into `grad`.
pub fn accumulate_weighted_gradient(
    links: &LinkSet,
    p: &[f64],
    y: &[f64],
    w: &[f64],
    grad: &mut [f64],
) {
    for l in 0..links.len() {
        if w[l] == 0.0 {
            continue;
        }
        let link = &links.links[l];
        let yl = y[l];
        let arg = 1.0 + link.snr_factor * link_quad_sinr(links, l, p, y);
        let d = w[l] * link.weight * link.snr_factor * log2_extended_slope(arg);
        if yl > 0.0 && link.gain > 0.0 {
            grad[l] += d * yl * link.gain.sqrt() / p[l].max(SQRT_FLOOR).sqrt();
        }
        for &(i, c) in &link.interferers {
            grad[i] -= d * yl * yl * c;
        }
    }
}

/// Adds `sum_l w[l] * d(transformed_rate_l)/du` into `grad`, where the
/// powers are parametrized as `p_l = scale_l * u_l^2`. In these amplitude
/// variables the transformed rates are concave and smooth down to zero.
pub fn accumulate_amplitude_gradient(
    links: &LinkSet,
    u: &[f64],
    scale: &[f64],
    y: &[f64],
    w: &[f64],
    grad: &mut [f64],
) {
    let p: Vec<f64> = u.iter().zip(scale).map(|(a, b)| b * a * a).collect();
    for l in 0..links.len() {
        if w[l] == 0.0 {
            continue;
        }
        let link = &links.links[l];
        let yl = y[l];
        let arg = 1.0 + link.snr_factor * link_quad_sinr(links, l, &p, y);
        let d = w[l] * link.weight * link.snr_factor * log2_extended_slope(arg);
        grad[l] += d * 2.0 * yl * (link.gain * scale[l]).sqrt();
        for &(i, c) in &link.interferers {
            grad[i] -= d * yl * yl * c * 2.0 * scale[i] * u[i];
        }
    }
}

/// Gradient of [`transformed_sum_rate`] with respect to the powers.
pub fn transformed_sum_rate_gradient(links: &LinkSet, p: &[f64], y: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; links.len()];
    accumulate_weighted_gradient(links, p, y, &vec![1.0; links.len()], &mut grad);
    grad
}
