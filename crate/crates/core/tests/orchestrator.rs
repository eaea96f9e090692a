use approx::assert_relative_eq;
use rfvlc_core::channel::ApKind;
use rfvlc_core::orchestrator::{
    power_feedback, run_exhaustive, run_experiment, tiny_config, Instance, SchemeId, SweepParam,
    MAX_ORACLE_LEVELS,
};
use rfvlc_core::rate_energy::{
    circuit_power, rate_macro, rate_pico, rate_vlc, validate, AssignmentMode, TxAp,
};
use rfvlc_core::scenario::ScenarioConfig;
use rfvlc_core::Error;

fn small(seed: u64) -> Instance {
    Instance::generate(ScenarioConfig {
        seed,
        user_count: 6,
        subchannels_per_ap: 4,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn scheme_ids_round_trip() {
    for id in SchemeId::ALL {
        assert_eq!(id.as_str().parse::<SchemeId>().unwrap(), id);
        assert_eq!(serde_json::to_string(&id).unwrap(), format!("\"{id}\""));
    }
    assert!("proposed".parse::<SchemeId>().is_err());
}

#[test]
fn every_scheme_returns_a_consistent_result() {
    let inst = small(4);
    let schemes = [
        SchemeId::ProposedIterative,
        SchemeId::ProposedOneshot,
        SchemeId::ScgScgEpa,
        SchemeId::BaselineApprox,
        SchemeId::HybridIterative,
    ];
    for scheme in schemes {
        let r = inst.run(scheme).unwrap();
        assert_eq!(r.scheme, scheme);
        assert_eq!(r.seed, 4);
        validate(&r.allocation, &inst.channel, &inst.config).unwrap();
        let e = &r.evaluated;
        assert_relative_eq!(e.ee, e.sum_rate / e.total_power, max_relative = 1e-12);
        assert_relative_eq!(
            e.total_power,
            circuit_power(&inst.channel, &inst.config) + e.transmit_power,
            max_relative = 1e-12
        );
        let idle = (0..6)
            .filter(|&j| r.allocation.subchannels_of(j) == 0)
            .count();
        assert_eq!(r.outage_count, idle, "{scheme}");
        assert!(r.outage_count <= 6);
        assert!(r.iterations_used >= 1 && r.iterations_used <= inst.config.max_outer_iterations);
        assert!(r.ee_trace.windows(2).all(|w| w[1] >= w[0]), "{scheme}");
        assert_eq!(*r.ee_trace.last().unwrap(), e.ee);
    }
}

#[test]
fn iterating_never_loses_to_one_pass() {
    for seed in 0..4 {
        let inst = small(seed);
        let once = inst.run(SchemeId::ProposedOneshot).unwrap();
        let iter = inst.run(SchemeId::ProposedIterative).unwrap();
        assert_eq!(iter.ee_trace[0], once.evaluated.ee);
        assert!(iter.evaluated.ee >= once.evaluated.ee);
    }
}

#[test]
fn runs_are_reproducible() {
    let inst = small(9);
    for scheme in [SchemeId::ProposedIterative, SchemeId::BaselineApprox] {
        let mut a = inst.run(scheme).unwrap();
        let mut b = small(9).run(scheme).unwrap();
        a.wall_time_s = 0.0;
        b.wall_time_s = 0.0;
        assert_eq!(a, b);
    }
}

#[test]
fn hybrid_attaches_each_user_to_one_ap() {
    for seed in 0..3 {
        let r = small(seed).run(SchemeId::HybridIterative).unwrap();
        let alloc = &r.allocation;
        assert_eq!(alloc.mode, AssignmentMode::Hybrid);
        for j in 0..6 {
            let links = alloc
                .x_rf
                .column(j)
                .iter()
                .chain(alloc.x_vlc.column(j))
                .filter(|&&x| x)
                .count();
            assert_eq!(links, 1, "seed {seed} user {j}");
        }
    }
}

#[test]
fn equal_power_scheme_spends_the_per_subchannel_share() {
    let inst = Instance::generate(ScenarioConfig {
        user_count: 30,
        ..ScenarioConfig::full_scale()
    })
    .unwrap();
    let r = inst.run(SchemeId::ScgScgEpa).unwrap();
    let macro_ap = TxAp {
        kind: ApKind::Macro,
        idx: 0,
    };
    let n = inst.config.subchannels_per_ap;
    assert_eq!(n, 50);
    let share = inst.config.p_macro_budget / n as f64;
    // 46 dBm over 50 subchannels
    assert_relative_eq!(share, 0.7962143411069939, max_relative = 1e-12);
    for q in 0..n {
        let j = r
            .allocation
            .holder(macro_ap, q)
            .expect("macro serves someone");
        assert_relative_eq!(r.allocation.p(macro_ap, j, q), share, max_relative = 1e-12);
    }
}

#[test]
fn feedback_reports_mean_power_per_held_subchannel() {
    let inst = small(2);
    let r = inst.run(SchemeId::ProposedOneshot).unwrap();
    let fb = power_feedback(&r.allocation, &inst.channel, &inst.config);
    let ch = &inst.channel;
    assert_eq!(fb.rf_own.dim(), (ch.rf_ap_count(), 6));
    assert_eq!(fb.vlc_own.dim(), (ch.vlc_count(), 6));
    assert_eq!(fb.rf_ap_level.len(), ch.rf_ap_count());
    assert_eq!(fb.vlc_ap_level.len(), ch.vlc_count());
    let alloc = &r.allocation;
    for ap in TxAp::all(ch) {
        let (own, level) = match ap.kind {
            ApKind::Macro => (fb.rf_own.row(0), fb.rf_ap_level[0]),
            ApKind::Pico => (fb.rf_own.row(ap.idx + 1), fb.rf_ap_level[ap.idx + 1]),
            ApKind::Vlc => (fb.vlc_own.row(ap.idx), fb.vlc_ap_level[ap.idx]),
        };
        let total: f64 = (0..4)
            .filter_map(|q| alloc.holder(ap, q).map(|j| alloc.p(ap, j, q)))
            .sum();
        assert_relative_eq!(level, total / 4.0, max_relative = 1e-12);
        for j in 0..6 {
            let held: Vec<f64> = (0..4)
                .filter(|&q| alloc.s(ap, j, q))
                .map(|q| alloc.p(ap, j, q))
                .collect();
            if !held.is_empty() {
                let mean = held.iter().sum::<f64>() / held.len() as f64;
                assert_relative_eq!(own[j], mean, max_relative = 1e-12);
            }
            assert!(own[j] >= 0.0 && own[j] <= ap.budget(&inst.config));
        }
    }
}

/// Independent oracle for one user on one subchannel: try every attachment
/// and every on-grid power per AP.
fn single_user_oracle(inst: &Instance, levels: usize) -> f64 {
    let (cfg, ch) = (&inst.config, &inst.channel);
    let circuit = circuit_power(ch, cfg);
    let grid = |budget: f64| (0..levels).map(move |i| i as f64 * budget / (levels - 1) as f64);
    let mut best = 0.0f64;
    for k in (0..ch.rf_ap_count()).filter(|&k| ch.rf_coverage[[k, 0]]) {
        let rf_budget = if k == 0 {
            cfg.p_macro_budget
        } else {
            cfg.p_pico_budget
        };
        let vlc_opts: Vec<Option<usize>> = std::iter::once(None)
            .chain(
                (0..ch.vlc_count())
                    .filter(|&v| ch.vlc_reachable(v, 0))
                    .map(Some),
            )
            .collect();
        for v in vlc_opts {
            for p_rf in grid(rf_budget) {
                let vlc_grid: Vec<f64> = match v {
                    Some(_) => grid(cfg.p_vlc_budget).collect(),
                    None => vec![0.0],
                };
                for &p_vlc in &vlc_grid {
                    if p_rf == 0.0 && p_vlc == 0.0 {
                        continue;
                    }
                    let mut rate = 0.0;
                    if p_rf > 0.0 {
                        rate += if k == 0 {
                            rate_macro(p_rf, ch.g_macro[[0, 0]], cfg)
                        } else {
                            rate_pico(p_rf, ch.g_pico[[k - 1, 0, 0]], &[], cfg)
                        };
                    }
                    if let (Some(v), true) = (v, p_vlc > 0.0) {
                        rate += rate_vlc(p_vlc, ch.g_vlc[[v, 0, 0]], ch.rho[[v, 0, 0]], &[], cfg);
                    }
                    if rate >= cfg.r_min {
                        best = best.max(rate / (circuit + p_rf + p_vlc));
                    }
                }
            }
        }
    }
    best
}

#[test]
fn oracle_matches_brute_force_for_one_user() {
    for seed in 0..8 {
        for r_min in [0.0, 5e7] {
            let inst = Instance::generate(ScenarioConfig {
                r_min,
                ..tiny_config(seed, 1, 1)
            })
            .unwrap();
            let r = run_exhaustive(&inst.config, &inst.channel, 3).unwrap();
            let expected = single_user_oracle(&inst, 3);
            assert_relative_eq!(r.evaluated.ee, expected, max_relative = 1e-9);
            validate(&r.allocation, &inst.channel, &inst.config).unwrap();
        }
    }
}

#[test]
fn oracle_dominates_the_on_grid_equal_power_scheme() {
    for seed in 0..6 {
        let cfg = ScenarioConfig {
            r_min: 0.0,
            ..tiny_config(seed, 3, 2)
        };
        let inst = Instance::generate(cfg).unwrap();
        // budget / 2 is level 2 of 5
        let oracle = run_exhaustive(&inst.config, &inst.channel, 5).unwrap();
        let epa = inst.run(SchemeId::ScgScgEpa).unwrap();
        assert!(
            oracle.evaluated.ee >= epa.evaluated.ee * (1.0 - 1e-12),
            "seed {seed}"
        );
    }
}

#[test]
fn oracle_refuses_large_instances() {
    let inst = Instance::generate(tiny_config(0, 2, 2)).unwrap();
    let err = run_exhaustive(&inst.config, &inst.channel, MAX_ORACLE_LEVELS + 1).unwrap_err();
    assert!(matches!(err, Error::Refused(_)));
    assert!(matches!(
        run_exhaustive(&inst.config, &inst.channel, 1),
        Err(Error::InvalidConfig(_))
    ));
    let big = Instance::generate(tiny_config(0, 5, 2)).unwrap();
    assert!(matches!(
        run_exhaustive(&big.config, &big.channel, 3),
        Err(Error::Refused(_))
    ));
    assert!(matches!(
        small(0).run(SchemeId::ExhaustiveOracle),
        Err(Error::Refused(_))
    ));
}

#[test]
fn scenario_without_users() {
    let inst = Instance::generate(ScenarioConfig {
        user_count: 0,
        ..Default::default()
    })
    .unwrap();
    for scheme in [
        SchemeId::ProposedIterative,
        SchemeId::ScgScgEpa,
        SchemeId::BaselineApprox,
    ] {
        let r = inst.run(scheme).unwrap();
        assert_eq!(r.evaluated.sum_rate, 0.0);
        assert_eq!(r.evaluated.ee, 0.0);
        assert_eq!(r.outage_count, 0);
    }
}

#[test]
fn experiments_are_ordered_and_summarized() {
    let base = ScenarioConfig {
        user_count: 4,
        subchannels_per_ap: 3,
        ..Default::default()
    };
    let schemes = [SchemeId::ScgScgEpa, SchemeId::ProposedOneshot];
    let table = run_experiment(&base, SweepParam::Rmin, &[0.0, 1e7], &schemes, &[3, 1]).unwrap();
    assert_eq!(table.rows.len(), 8);
    let keys: Vec<(f64, SchemeId, u64)> = table
        .rows
        .iter()
        .map(|r| (r.sweep_value, r.scheme, r.seed))
        .collect();
    assert_eq!(
        keys[..4],
        [
            (0.0, SchemeId::ScgScgEpa, 3),
            (0.0, SchemeId::ScgScgEpa, 1),
            (0.0, SchemeId::ProposedOneshot, 3),
            (0.0, SchemeId::ProposedOneshot, 1),
        ]
    );
    let cell = table.cell(1e7, SchemeId::ProposedOneshot).unwrap();
    assert_eq!(cell.runs, 2);
    let ees: Vec<f64> = table.rows[6..].iter().map(|r| r.ee).collect();
    assert_relative_eq!(cell.mean_ee, (ees[0] + ees[1]) / 2.0, max_relative = 1e-12);
    assert_relative_eq!(
        cell.se_ee,
        (ees[0] - ees[1]).abs() / 2.0,
        max_relative = 1e-9
    );

    // common random numbers: a scheme's row matches a direct run
    let direct = Instance::generate(ScenarioConfig {
        seed: 1,
        r_min: 1e7,
        ..base.clone()
    })
    .unwrap()
    .run(SchemeId::ScgScgEpa)
    .unwrap();
    assert_eq!(table.rows[5].ee, direct.evaluated.ee);

    let empty = run_experiment(&base, SweepParam::Users, &[4.0], &schemes, &[]).unwrap();
    assert!(empty.rows.is_empty() && empty.cells.is_empty());
    let mut buf = Vec::new();
    empty.write_csv(&mut buf).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap().trim_end(),
        "sweep_param,sweep_value,scheme,seed,sum_rate_bps,total_power_w,ee,outage_count,iterations,wall_time_s"
    );
    assert!(run_experiment(&base, SweepParam::Los, &[7.0], &schemes, &[0]).is_err());
}
