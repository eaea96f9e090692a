mod common;

use approx::assert_relative_eq;
use common::*;
use ndarray::array;
use proptest::prelude::*;
use rfvlc_core::power_alloc::{
    lambda_grid, optimal_y, quad_sinr, solve_min_power, solve_rmax, sweep_pareto, transform,
    PowerProblem,
};
use rfvlc_core::rate_energy::LinkSet;
use rfvlc_core::scenario::ScenarioConfig;

fn no_qos() -> ScenarioConfig {
    ScenarioConfig {
        r_min: 0.0,
        ..Default::default()
    }
}

#[test]
fn single_link_rmax_uses_full_budget() {
    let cfg = no_qos();
    let g = 1e-12;
    let ch = macro_channel(array![[g]]);
    let alloc = all_on_macro(&ch);
    let sol = solve_rmax(&alloc, &ch, &cfg);
    let expected = cfg.bandwidth_rf * (1.0 + cfg.p_macro_budget * g / rf_noise(&cfg)).log2();
    assert_relative_eq!(sol.rmax, expected, max_relative = 1e-9);
    assert_relative_eq!(sol.p[0], cfg.p_macro_budget, max_relative = 1e-9);
}

#[test]
fn single_link_min_power_inverts_rate() {
    let cfg = no_qos();
    for g in [1e-13, 1e-12, 3e-11] {
        let ch = macro_channel(array![[g]]);
        let alloc = all_on_macro(&ch);
        let rmax = solve_rmax(&alloc, &ch, &cfg).rmax;
        for lambda in [0.1, 0.35, 0.6, 0.9] {
            let eps = lambda * rmax;
            let sol = solve_min_power(eps, &alloc, &ch, &cfg);
            let closed = (2f64.powf(eps / cfg.bandwidth_rf) - 1.0) * rf_noise(&cfg) / g;
            assert!(sol.feasible);
            assert_relative_eq!(sol.transmit_power, closed, max_relative = 1e-3);
        }
    }
}

#[test]
fn min_power_at_rmax_recovers_rate() {
    let inst = small_desk(3, 6);
    let mut problem = PowerProblem::new(&inst.alloc, &inst.channel, &inst.config);
    let rmax = problem.solve_rmax();
    let sol = problem.solve_min_power(rmax.rmax, &rmax.p);
    assert!(sol.feasible);
    assert_relative_eq!(sol.sum_rate, rmax.rmax, max_relative = 1e-4);
}

#[test]
fn tiny_target_without_qos_turns_power_off() {
    let mut cfg = no_qos();
    cfg.subchannels_per_ap = 4;
    let inst = desk_instance(ScenarioConfig {
        seed: 5,
        user_count: 4,
        ..cfg
    });
    let mut problem = PowerProblem::new(&inst.alloc, &inst.channel, &inst.config);
    let rmax = problem.solve_rmax();
    let sol = problem.solve_min_power(1e-6 * rmax.rmax, &rmax.p);
    assert!(sol.transmit_power < 1e-3 * rmax.p.iter().sum::<f64>());
}

#[test]
fn zero_gain_gives_zero_rate_at_equal_split() {
    let cfg = no_qos();
    let ch = macro_channel(array![[0.0, 0.0]]);
    let alloc = all_on_macro(&ch);
    let sol = solve_rmax(&alloc, &ch, &cfg);
    assert_eq!(sol.rmax, 0.0);
    for &p in &sol.p {
        assert_relative_eq!(p, cfg.p_macro_budget / 2.0, max_relative = 1e-12);
    }
}

/// Best true sum rate over a `levels x levels` grid of the two pico powers.
fn grid_rmax(links: &LinkSet, budget: f64, levels: usize) -> f64 {
    let mut best: f64 = 0.0;
    for a in 0..levels {
        for b in 0..levels {
            let p = [
                budget * a as f64 / (levels - 1) as f64,
                budget * b as f64 / (levels - 1) as f64,
            ];
            best = best.max(links.sum_rate(&p));
        }
    }
    best
}

#[test]
fn two_link_rmax_matches_grid() {
    let cfg = no_qos();
    let cases = [
        ([1e-10, 1e-10], [1e-13, 1e-13]),
        ([1e-11, 2e-10], [1e-12, 5e-13]),
        ([5e-12, 5e-12], [1e-12, 1e-12]),
    ];
    for (own, cross) in cases {
        let ch = pico_pair(own, cross);
        let alloc = pico_pair_allocation(&ch);
        let links = LinkSet::from_allocation(&alloc, &ch, &cfg);
        assert_eq!(links.len(), 2);
        let grid = grid_rmax(&links, cfg.p_pico_budget, 100);
        let sol = solve_rmax(&alloc, &ch, &cfg);
        assert!(
            (sol.rmax - grid).abs() <= 0.01 * grid,
            "solver {} grid {}",
            sol.rmax,
            grid
        );
    }
}

#[test]
fn rmax_trace_is_non_decreasing() {
    for seed in 0..4 {
        let inst = small_desk(seed, 8);
        let sol = solve_rmax(&inst.alloc, &inst.channel, &inst.config);
        for w in sol.trace.windows(2) {
            assert!(w[1] >= w[0] * (1.0 - 1e-9), "{:?}", sol.trace);
        }
    }
}

#[test]
fn min_power_trace_is_non_increasing() {
    for seed in 0..4 {
        let inst = small_desk(seed, 8);
        let mut problem = PowerProblem::new(&inst.alloc, &inst.channel, &inst.config);
        let rmax = problem.solve_rmax();
        let sol = problem.solve_min_power(0.5 * rmax.rmax, &rmax.p);
        for w in sol.trace.windows(2) {
            assert!(w[1] <= w[0], "{:?}", sol.trace);
        }
    }
}

#[test]
fn lambda_grid_counts() {
    assert_eq!(lambda_grid(0.1).len(), 10);
    assert_eq!(lambda_grid(0.25).len(), 4);
    assert_eq!(lambda_grid(0.3).len(), 4);
    assert_eq!(*lambda_grid(0.3).last().unwrap(), 1.0);
    assert_eq!(lambda_grid(1.0), vec![1.0]);
}

#[test]
fn pareto_frontier_shape() {
    for seed in 0..3 {
        let mut inst = small_desk(seed, 8);
        let out = sweep_pareto(&mut inst.alloc, &inst.channel, &inst.config);
        let entries = &out.frontier.entries;
        assert_eq!(entries.len(), 10);
        assert!(out.frontier.is_non_dominated());
        for w in entries.windows(2) {
            assert!(w[0].lambda < w[1].lambda);
            assert!(w[0].sum_rate <= w[1].sum_rate);
            assert!(w[0].total_power <= w[1].total_power);
        }
        let best = &entries[out.best];
        assert!(best.ee >= entries[0].ee && best.ee >= entries[9].ee);
        for e in entries {
            assert!(e.sum_rate >= e.epsilon * (1.0 - 1e-6));
        }
    }
}

#[test]
fn sweep_writes_best_powers_within_budgets() {
    let mut inst = small_desk(11, 10);
    let out = sweep_pareto(&mut inst.alloc, &inst.channel, &inst.config);
    let links = LinkSet::from_allocation(&inst.alloc, &inst.channel, &inst.config);
    let p = links.gather_powers(&inst.alloc);
    for (a, b) in p.iter().zip(&out.frontier.entries[out.best].p) {
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }
    for g in &links.groups {
        let used: f64 = g.links.iter().map(|&l| p[l]).sum();
        assert!(used <= g.budget * (1.0 + 1e-9));
    }
    assert!(p.iter().all(|&x| x >= 0.0));
}

#[test]
fn pareto_csv_has_header_and_rows() {
    let mut inst = small_desk(2, 5);
    let out = sweep_pareto(&mut inst.alloc, &inst.channel, &inst.config);
    let mut buf = Vec::new();
    out.frontier.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "lambda,epsilon_bps,sum_rate_bps,total_power_w,ee"
    );
    assert_eq!(lines.count(), 10);
}

#[test]
fn qos_users_meet_target_when_enforced() {
    for seed in 0..3 {
        let mut inst = small_desk(seed, 8);
        let out = sweep_pareto(&mut inst.alloc, &inst.channel, &inst.config);
        let links = LinkSet::from_allocation(&inst.alloc, &inst.channel, &inst.config);
        let rates = links.user_rates(&links.gather_powers(&inst.alloc));
        for j in 0..rates.len() {
            let served = inst.alloc.a[j] && !links.user_links[j].is_empty();
            if served && !out.dropped_users.contains(&j) {
                assert!(rates[j] >= inst.config.r_min * (1.0 - 1e-6));
            }
        }
    }
}

/// Relative error with an absolute floor for components near zero.
fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(scale)
}

#[test]
fn gradient_matches_central_differences() {
    for seed in 0..5 {
        let inst = small_desk(seed, 6);
        let links = LinkSet::from_allocation(&inst.alloc, &inst.channel, &inst.config);
        let p: Vec<f64> = links
            .equal_powers(inst.channel.subchannel_count())
            .iter()
            .enumerate()
            .map(|(i, &x)| x * (0.5 + 0.1 * (i % 5) as f64))
            .collect();
        let y = transform::optimal_aux(&links, &p);
        let grad = transform::transformed_sum_rate_gradient(&links, &p, &y);
        let scale = grad.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for l in 0..links.len() {
            let h = 1e-6 * p[l];
            let mut hi = p.clone();
            let mut lo = p.clone();
            hi[l] += h;
            lo[l] -= h;
            let fd = (transform::transformed_sum_rate(&links, &hi, &y)
                - transform::transformed_sum_rate(&links, &lo, &y))
                / (2.0 * h);
            assert!(
                close(grad[l], fd, 1e-3 * scale),
                "link {l}: {} vs {fd}",
                grad[l]
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn transform_is_tight_at_optimal_aux(
        p in 1e-4f64..40.0,
        g in 1e-14f64..1e-8,
        inter in proptest::collection::vec((0.0f64..10.0, 0.0f64..1e-9), 0..4),
        noise in 1e-15f64..1e-12,
    ) {
        let y = optimal_y(p, g, &inter, noise);
        let i: f64 = inter.iter().map(|&(q, c)| q * c).sum();
        let sinr = p * g / (i + noise);
        let quad = quad_sinr(p, g, &inter, noise, y);
        prop_assert!((quad - sinr).abs() <= 1e-9 * sinr);
    }

    #[test]
    fn transform_never_exceeds_sinr(
        p in 0.0f64..40.0,
        g in 1e-14f64..1e-8,
        noise in 1e-15f64..1e-12,
        y in 0.0f64..1e9,
    ) {
        let sinr = p * g / noise;
        prop_assert!(quad_sinr(p, g, &[], noise, y) <= sinr * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn extended_log_is_concave_and_negative_below_one(a in -50.0f64..50.0, b in -50.0f64..50.0) {
        let f = transform::log2_extended;
        prop_assert!(f((a + b) / 2.0) >= (f(a) + f(b)) / 2.0 - 1e-12);
        if a >= 1.0 {
            prop_assert_eq!(f(a), a.log2());
        } else {
            prop_assert!(f(a) < 0.0);
        }
    }
}
