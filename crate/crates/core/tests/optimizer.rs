mod common;

use rsma_ee::conic::{ClarabelSolver, ConicSolver, ConicStatus};
use rsma_ee::error::Error;
use rsma_ee::grouping::{group_users, GroupingResult};
use rsma_ee::optimizer::{
    build_convex_subproblem, dinkelbach_step, point_vector, sca_loop, solve_ee_max, solve_ee_max_from, start_beams,
    Linearization, OptimizerOptions, Phase, QosPartition, StartKind, SubproblemObjective,
};
use rsma_ee::oracle::{grid_search_ee, straight_line_rates, GridOutcome, GridSearchSpec};
use rsma_ee::rates::{achievable_rates, common_sinr, energy_efficiency, private_sinr, total_transmit_power, BeamformerSet, RateAllocation};
use rsma_ee::scenario::{generate_scenario, Scenario, SystemConfig};

fn instance(seed: u64, n: usize, k: usize) -> (Scenario, GroupingResult) {
    let cfg = SystemConfig {
        n_tx: n,
        n_users: k,
        seed,
        ..SystemConfig::default()
    };
    let s = generate_scenario(&cfg).unwrap();
    let g = group_users(s.channel(), cfg.decode_layers).unwrap();
    (s, g)
}

/// Rates (bit/s/Hz) splitting every target in proportion to what `beams`
/// achieve; `None` when a target is out of reach.
fn pinned(s: &Scenario, g: &GroupingResult, p: &QosPartition, beams: &BeamformerSet) -> Option<(Vec<f64>, Vec<f64>)> {
    let cfg = s.config();
    let r = achievable_rates(s, beams, g);
    let b = cfg.bandwidth_hz;
    let mut xi_p = Vec::new();
    let mut xi_c = Vec::new();
    for u in 0..s.n_users() {
        let target = p.target_bps(u, cfg);
        let total = r.user_total(u);
        if total < target {
            return None;
        }
        xi_p.push(target * r.private_rate[u] / total / b);
        xi_c.push(target * r.common_rate[u] / total / b);
    }
    Some((xi_p, xi_c))
}

/// First start family whose beams already meet every target.
fn first_pinned_start(
    s: &Scenario,
    g: &GroupingResult,
    p: &QosPartition,
    budget: f64,
) -> Option<(BeamformerSet, Vec<f64>, Vec<f64>)> {
    [StartKind::CommonRouted, StartKind::PrivateRouted, StartKind::Mrt].into_iter().find_map(|kind| {
        let beams = start_beams(s, g, p, budget, kind);
        pinned(s, g, p, &beams).map(|(xi_p, xi_c)| (beams, xi_p, xi_c))
    })
}

fn rates_bps(s: &Scenario, xi_p: &[f64], xi_c: &[f64]) -> RateAllocation {
    let b = s.config().bandwidth_hz;
    RateAllocation {
        private_rate: xi_p.iter().map(|v| v * b).collect(),
        common_rate: xi_c.iter().map(|v| v * b).collect(),
    }
}

#[test]
fn dinkelbach_step_examples() {
    let r = RateAllocation {
        private_rate: vec![25e6, 0.0],
        common_rate: vec![5e6, 10e6],
    };
    assert!((dinkelbach_step(&r, 1.0, 3.0) - 10e6).abs() < 1e-6);
    assert_eq!(dinkelbach_step(&RateAllocation::zeros(2), 1.0, 3.0), 0.0);
    assert_eq!(dinkelbach_step(&r, 0.7, 5.01), energy_efficiency(&r, 0.7, 5.01));
}

#[test]
fn linearization_point_is_feasible_for_the_subproblem() {
    let opts = OptimizerOptions::default();
    let mut checked = 0;
    for seed in 0..80 {
        let (s, g) = instance(seed, 4, 4);
        let p = if seed % 3 == 0 {
            QosPartition::new(4, &[1, 3]).unwrap()
        } else {
            QosPartition::all_hd(4)
        };
        let budget = s.config().p_tr_w();
        let Some((beams, xi_p, xi_c)) = first_pinned_start(&s, &g, &p, budget) else { continue };
        checked += 1;
        let point = Linearization::at(&s, &g, &beams, opts.eps_floor);
        let lambda = dinkelbach_step(&rates_bps(&s, &xi_p, &xi_c), total_transmit_power(&beams), s.config().p_circ_w())
            / s.config().bandwidth_hz;
        for (objective, scale) in [
            (SubproblemObjective::Dinkelbach { lambda }, 0.0),
            (SubproblemObjective::Feasibility { cap: 1.05 }, 1.0),
        ] {
            let sub = build_convex_subproblem(&s, &g, &point, objective, &p, budget);
            let x = point_vector(&sub, &point, &xi_p, &xi_c, scale);
            let v = sub.program.max_violation(&x);
            assert!(v <= 1e-9, "seed {seed}: violation {v}");
        }
    }
    assert!(checked >= 20, "only {checked} feasible starts");
}

#[test]
fn subproblem_solution_improves_on_the_point() {
    let solver = ClarabelSolver::default();
    let mut r = common::rng(11);
    let cfg = SystemConfig {
        n_tx: 2,
        n_users: 2,
        ..SystemConfig::default()
    };
    let p = QosPartition::all_hd(2);
    let mut checked = 0;
    for _ in 0..400 {
        if checked == 50 {
            break;
        }
        let s = common::real_scenario(&mut r, cfg.clone(), 0.2);
        let g = group_users(s.channel(), 2).unwrap();
        let beams = common::random_beams(&mut r, 2, 2, 1e-2, 1.0, 0.0);
        let Some((xi_p, xi_c)) = pinned(&s, &g, &p, &beams) else { continue };
        if total_transmit_power(&beams) > cfg.p_tr_w() {
            continue;
        }
        checked += 1;
        let point = Linearization::at(&s, &g, &beams, 1e-10);
        let lambda = dinkelbach_step(&rates_bps(&s, &xi_p, &xi_c), total_transmit_power(&beams), cfg.p_circ_w()) / cfg.bandwidth_hz;
        let sub = build_convex_subproblem(&s, &g, &point, SubproblemObjective::Dinkelbach { lambda }, &p, cfg.p_tr_w());
        let x0 = point_vector(&sub, &point, &xi_p, &xi_c, 0.0);
        let sol = solver.solve(&sub.program);
        assert!(matches!(sol.status, ConicStatus::Solved | ConicStatus::AlmostSolved), "{:?}", sol.status);
        let (at_point, at_solution) = (sub.program.objective(&x0), sub.program.objective(&sol.x));
        assert!(at_solution <= at_point + 1e-7 * at_point.abs().max(1.0), "{at_solution} > {at_point}");
    }
    assert_eq!(checked, 50);
}

#[test]
fn sca_ascends_and_stays_inside_true_constraints() {
    let opts = OptimizerOptions::default();
    let solver = ClarabelSolver::default();
    let mut runs = 0;
    for seed in 100..130 {
        let (s, g) = instance(seed, 4, 3);
        let p = QosPartition::all_hd(3);
        let budget = s.config().p_tr_w();
        let Some((start, xi_p, xi_c)) = first_pinned_start(&s, &g, &p, budget) else { continue };
        runs += 1;
        let lambda = dinkelbach_step(&rates_bps(&s, &xi_p, &xi_c), total_transmit_power(&start), s.config().p_circ_w());
        let out = sca_loop(&s, &g, &p, budget, lambda, &start, &opts, &solver).unwrap();
        let objs: Vec<f64> = out.history.iter().filter(|h| h.phase == Phase::Dinkelbach).map(|h| h.surrogate_objective).collect();
        assert!(objs.first().is_some_and(|&o| o >= out.report.start_objective * (1.0 - 1e-12) - 1e-6));
        for w in objs.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "seed {seed}: {} then {}", w[0], w[1]);
        }
        assert!(out.history.iter().all(|h| h.max_residual <= 1e-6));
        let achievable = achievable_rates(&s, &out.beams, &g);
        for u in 0..3 {
            let tol = opts.rate_eps_rel * s.config().r_sd_bps;
            assert!(out.rates.private_rate[u] <= achievable.private_rate[u] + tol);
            assert!(out.rates.common_rate[u] <= achievable.common_rate[u] + tol);
        }
        assert!(total_transmit_power(&out.beams) <= budget * (1.0 + 1e-8));
    }
    assert!(runs >= 10, "only {runs} feasible instances");
}

#[test]
fn converged_point_is_a_fixed_point() {
    let opts = OptimizerOptions::default();
    let solver = ClarabelSolver::default();
    let (s, g) = instance(7, 3, 3);
    let p = QosPartition::all_hd(3);
    let budget = s.config().p_tr_w();
    let sol = solve_ee_max(&s, &g, &p, budget, &opts).unwrap();
    assert!(sol.feasible.feasible);
    let again = sca_loop(&s, &g, &p, budget, sol.lambda, &sol.beams, &opts, &solver).unwrap();
    assert_eq!(again.report.iterations, 1);
    let gain = again.report.final_objective - again.report.start_objective;
    assert!(gain.abs() <= opts.eps_sca * sol.rates.sum_rate() / s.config().bandwidth_hz, "gain {gain}");
}

#[test]
fn solutions_meet_the_contract() {
    let opts = OptimizerOptions::default();
    for seed in 0..6 {
        let (s, g) = instance(seed, 4, 5);
        let cfg = s.config();
        let p = if seed % 2 == 0 {
            QosPartition::all_hd(5)
        } else {
            QosPartition::new(5, &[0, 4]).unwrap()
        };
        let sol = solve_ee_max(&s, &g, &p, cfg.p_tr_w(), &opts).unwrap();
        assert!(sol.feasible.feasible, "seed {seed}: {:?}", sol.feasible);
        for u in 0..5 {
            assert!((sol.rates.user_total(u) - p.target_bps(u, cfg)).abs() <= 1e-6 * cfg.r_sd_bps);
            if !p.is_hd(u) {
                assert!(!sol.beams.private_active(u));
                assert_eq!(sol.rates.private_rate[u], 0.0);
            }
        }
        assert!(total_transmit_power(&sol.beams) <= cfg.p_tr_w() * (1.0 + 1e-8));
        for w in sol.lambda_history.windows(2) {
            assert!(w[1] >= w[0] * (1.0 - 1e-9));
        }
        assert!(sol.dinkelbach_residual.abs() <= opts.eps_dink);
        // slacks are inner bounds on the true SINRs
        for u in 0..5 {
            if p.is_hd(u) {
                assert!(private_sinr(&s, &sol.beams, &g, u) >= sol.slacks.t_p[u] * (1.0 - 1e-6));
            }
            for &rx in g.decoded_by(u) {
                assert!(common_sinr(&s, &sol.beams, &g, rx, u).unwrap() >= sol.slacks.t_c[u] * (1.0 - 1e-6));
            }
        }
        assert_eq!(sol.ee, energy_efficiency(&sol.rates, sol.transmit_power_w, cfg.p_circ_w()));
    }
}

#[test]
fn common_only_service_matches_direct_evaluation() {
    let opts = OptimizerOptions::default();
    let (s, g) = instance(3, 4, 4);
    let p = QosPartition::new(4, &[0, 1, 2, 3]).unwrap();
    let sol = solve_ee_max(&s, &g, &p, s.config().p_tr_w(), &opts).unwrap();
    assert_eq!(sol.beams.total_private_power(), 0.0);
    let mut stripped = sol.beams.clone();
    for u in 0..4 {
        stripped.deactivate_private(u);
    }
    let a = achievable_rates(&s, &sol.beams, &g);
    let b = straight_line_rates(&s, &stripped, &g);
    for (x, y) in a.private_rate.iter().chain(&a.common_rate).zip(b.private_rate.iter().chain(&b.common_rate)) {
        assert!((x - y).abs() <= 1e-10 * x.abs().max(y.abs()));
    }
}

#[test]
fn unreachable_targets_are_reported_by_optimizer_and_grid() {
    let mut r = common::rng(3);
    let cfg = SystemConfig {
        n_tx: 2,
        n_users: 2,
        r_hd_bps: 2e9,
        r_sd_bps: 1e9,
        p_tr_dbm: 0.0,
        ..SystemConfig::default()
    };
    let s = common::real_scenario(&mut r, cfg.clone(), 0.2);
    let g = group_users(s.channel(), 2).unwrap();
    let p = QosPartition::all_hd(2);
    let err = solve_ee_max(&s, &g, &p, cfg.p_tr_w(), &OptimizerOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Infeasible { .. }), "{err}");
    let spec = GridSearchSpec::geometric(cfg.p_tr_w(), 4, 4, 5);
    assert!(matches!(
        grid_search_ee(&s, &g, &p, cfg.p_tr_w(), &spec).unwrap(),
        GridOutcome::NoFeasiblePoint { .. }
    ));
}

#[test]
fn bad_arguments_are_rejected() {
    let (s, g) = instance(1, 3, 3);
    let p = QosPartition::all_hd(3);
    let opts = OptimizerOptions::default();
    assert!(matches!(solve_ee_max(&s, &g, &p, 0.0, &opts), Err(Error::InvalidArgument(_))));
    assert!(matches!(
        solve_ee_max(&s, &g, &QosPartition::all_hd(4), 1.0, &opts),
        Err(Error::InvalidArgument(_))
    ));
    let no_starts = OptimizerOptions {
        starts: Vec::new(),
        ..OptimizerOptions::default()
    };
    assert!(matches!(solve_ee_max(&s, &g, &p, 1.0, &no_starts), Err(Error::InvalidArgument(_))));
    let wrong = BeamformerSet::zeros(3, 2);
    assert!(matches!(
        solve_ee_max_from(&s, &g, &p, 1.0, &wrong, &opts, &ClarabelSolver::default()),
        Err(Error::InvalidArgument(_))
    ));
    let start = start_beams(&s, &g, &p, 1.0, StartKind::Mrt);
    assert!(sca_loop(&s, &g, &p, 1.0, -1.0, &start, &opts, &ClarabelSolver::default()).is_err());
}
