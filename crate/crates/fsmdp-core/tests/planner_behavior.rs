//! Separation-oracle and ellipsoid behavior on instances small enough to
//! check exhaustively.

mod common;

use common::{random_env_instance, tabular_structure, vi_weights};
use fsmdp_core::basis::WeightMatrix;
use fsmdp_core::elimination::{cost_network_for, min_degree_order};
use fsmdp_core::env::two_state_env_with_horizon;
use fsmdp_core::estimation::ConfidenceState;
use fsmdp_core::model::ProblemStructure;
use fsmdp_core::optimism::{build_tables, build_tables_scaled, OptimismFlags, OptimisticTables, Sign};
use fsmdp_core::oracle::tabular_vi;
use fsmdp_core::planner::{OracleOutcome, Planner, PlannerConfig};
use fsmdp_core::Scope;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn make_planner<'a>(structure: &'a ProblemStructure, tau: usize, w_bound: f64) -> Planner<'a> {
    let net = cost_network_for(structure);
    let order = min_degree_order(&net, None).unwrap();
    Planner::new(structure, order, tau, w_bound, PlannerConfig::default()).unwrap()
}

/// Exhaustive feasibility check of the planning constraints with the stored
/// sign-resolved tables.
fn feasible_exhaustive(
    structure: &ProblemStructure,
    tables: &OptimisticTables,
    w: &WeightMatrix,
    tau: usize,
    slack: f64,
) -> bool {
    if (1..=tau).any(|l| w.step_l1(l) > w.bound() * (1.0 + 1e-9)) {
        return false;
    }
    for s in structure.space.enumerate_states(1 << 10).unwrap() {
        for a in 0..structure.actions() {
            for l in 1..=tau {
                let lhs = structure.eval_value(w, l, &s);
                let mut rhs = 0.0;
                for i in 0..structure.num_rewards() {
                    let z = structure.reward_indexer(i).rank_of_state(&s) as usize;
                    rhs += tables.reward(structure, i, a, z);
                }
                if l < tau {
                    for j in 0..structure.phi() {
                        let wn = w.get(l + 1, j);
                        if wn == 0.0 {
                            continue;
                        }
                        if j == 0 {
                            rhs += wn;
                        } else {
                            let pa = structure.parent_indexer(j).rank_of_state(&s) as usize;
                            rhs += wn
                                * tables.backprojection(structure, j, a, pa, Sign::of_weight(wn));
                        }
                    }
                }
                if lhs < rhs - slack {
                    return false;
                }
            }
        }
    }
    true
}

#[test]
fn exact_tabular_weights_are_feasible() {
    let env = two_state_env_with_horizon(2);
    let structure = tabular_structure(&env.space, vec![env.rewards[0].scope.clone()]);
    let model = env.true_model(&structure).unwrap();
    let tables = OptimisticTables::exact_from_model(&structure, &model).unwrap();
    let vi = tabular_vi(&env).unwrap();
    let w = vi_weights(&vi, 8.0);
    let mut planner = make_planner(&structure, 2, 8.0);
    match planner.separation_oracle(&w, &tables).unwrap() {
        OracleOutcome::Feasible => {}
        OracleOutcome::Cut { violation, .. } => {
            panic!("exact value weights rejected with violation {violation}")
        }
    }
}

#[test]
fn norm_violation_yields_ball_cut_without_witness() {
    let env = two_state_env_with_horizon(2);
    let structure = tabular_structure(&env.space, vec![env.rewards[0].scope.clone()]);
    let model = env.true_model(&structure).unwrap();
    let tables = OptimisticTables::exact_from_model(&structure, &model).unwrap();
    let mut planner = make_planner(&structure, 2, 1.0);
    let mut w = WeightMatrix::zeros(2, structure.phi(), 1.0);
    w.set(1, 0, 5.0).unwrap();
    match planner.separation_oracle(&w, &tables).unwrap() {
        OracleOutcome::Cut { witness: None, hyperplane, violation } => {
            assert!(violation > 3.9);
            assert!(hyperplane.eval(w.flat_free()) > 0.0);
        }
        other => panic!("expected a norm cut, got {other:?}"),
    }
}

#[test]
fn cuts_exclude_query_and_keep_sampled_feasible_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (env, structure) = random_env_instance(&mut rng, 2, 2);
    let mut conf = ConfidenceState::new(&structure, 0.1, 0.2, 1.0).unwrap();
    // a little data so widths are finite but loose
    for _ in 0..40 {
        let s = env.reset(&mut rng);
        let a = rng.gen_range(0..2);
        let (n, obs) = env.step(&s, a, &mut rng);
        conf.record_step(&structure, &s, a, &obs, &n).unwrap();
    }
    let w_bound = 12.0;
    let tables = build_tables(&structure, &conf, OptimismFlags::default());
    let mut planner = make_planner(&structure, 2, w_bound);
    let phi = structure.phi();

    // a known feasible anchor: generous constant-only weights
    let mut anchor = WeightMatrix::zeros(2, phi, w_bound);
    anchor.set(1, 0, 5.0).unwrap();
    anchor.set(2, 0, 2.4).unwrap();
    assert!(feasible_exhaustive(&structure, &tables, &anchor, 2, 1e-9));

    // drive h0 weight far negative: must produce a violated-constraint cut
    let mut bad = WeightMatrix::zeros(2, phi, w_bound);
    bad.set(1, 0, -6.0).unwrap();
    let OracleOutcome::Cut { hyperplane, violation, witness } =
        planner.separation_oracle(&bad, &tables).unwrap()
    else {
        panic!("deeply negative value weights must violate")
    };
    assert!(violation > 0.0);
    assert!(witness.is_some());
    assert!(hyperplane.eval(bad.flat_free()) > 0.0);

    // rejection-sample feasible points around the anchor; the cut must keep
    // every one of them on the nonpositive side
    let mut kept = 0;
    while kept < 300 {
        let mut cand = anchor.clone();
        for l in 1..=2 {
            for j in 0..phi {
                let v = cand.get(l, j) + rng.gen_range(-1.2..1.2);
                cand.set(l, j, v).unwrap();
            }
        }
        if feasible_exhaustive(&structure, &tables, &cand, 2, 1e-9) {
            kept += 1;
            let hv = hyperplane.eval(cand.flat_free());
            assert!(hv <= 1e-7, "feasible point on the wrong side: {hv}");
        }
    }
}

#[test]
fn oracle_feasible_verdicts_hold_exhaustively() {
    let mut rng = ChaCha8Rng::seed_from_u64(1123);
    let mut checked = 0;
    'outer: for trial in 0..40 {
        let (env, structure) = random_env_instance(&mut rng, 2, 2);
        let mut conf = ConfidenceState::new(&structure, 0.1, 0.2, 1.0).unwrap();
        for _ in 0..30 {
            let s = env.reset(&mut rng);
            let a = rng.gen_range(0..2);
            let (n, obs) = env.step(&s, a, &mut rng);
            conf.record_step(&structure, &s, a, &obs, &n).unwrap();
        }
        let tables = build_tables(&structure, &conf, OptimismFlags::default());
        let mut planner = make_planner(&structure, 2, 10.0);
        // random queries; whenever the oracle says feasible, verify every
        // constraint directly
        for _ in 0..20 {
            let w = common::random_weights(&mut rng, 2, structure.phi(), 10.0);
            if let OracleOutcome::Feasible = planner.separation_oracle(&w, &tables).unwrap() {
                assert!(
                    feasible_exhaustive(&structure, &tables, &w, 2, 1e-7),
                    "trial {trial}: feasible verdict contradicted by enumeration"
                );
                checked += 1;
                if checked > 10 {
                    break 'outer;
                }
            }
        }
    }
}

#[test]
fn planner_matches_exhaustive_lp_and_vi_on_tabular_instance() {
    // 4-state instance keeps this quick; the acceptance suite runs the
    // 8-state version
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (env, _) = random_env_instance(&mut rng, 2, 2);
    let structure = tabular_structure(&env.space, env.rewards.iter().map(|r| r.scope.clone()).collect());
    let model = env.true_model(&structure).unwrap();
    let tables = OptimisticTables::exact_from_model(&structure, &model).unwrap();
    let vi = tabular_vi(&env).unwrap();
    let w_bound = 4.0 + vi.values[0].iter().map(|v| v.abs()).sum::<f64>();
    let mut planner = make_planner(&structure, 2, w_bound);
    let eps = 1e-3;
    let outcome = planner.plan_with_tables(&tables, eps).unwrap();
    let (lp_value, _) =
        fsmdp_core::oracle::exhaustive_lp_plan(&structure, &tables, 2, w_bound).unwrap();
    let vi_total: f64 = vi.values[0].iter().sum();
    assert!(
        (outcome.objective - lp_value).abs() <= eps,
        "ellipsoid {} vs exhaustive {lp_value}",
        outcome.objective
    );
    assert!(
        (lp_value - vi_total).abs() <= 1e-6,
        "exhaustive LP {lp_value} vs VI total {vi_total}"
    );
    // the planner's value function dominates the optimum pointwise
    let full = structure.space.full_scope();
    let idx = fsmdp_core::ScopeIndexer::new(&structure.space, &full).unwrap();
    for s in structure.space.enumerate_states(1 << 10).unwrap() {
        let v_hat = structure.eval_value(&outcome.weights, 1, &s);
        let v_star = vi.at(1, idx.rank_of_state(&s) as usize);
        assert!(v_hat >= v_star - 1e-6 - eps);
    }
}

#[test]
fn epsilon_halving_never_worsens_objective() {
    let env = two_state_env_with_horizon(2);
    let structure = tabular_structure(&env.space, vec![env.rewards[0].scope.clone()]);
    let mut conf = ConfidenceState::new(&structure, 0.1, 0.1, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..25 {
        let s = env.reset(&mut rng);
        let a = rng.gen_range(0..2);
        let (n, obs) = env.step(&s, a, &mut rng);
        conf.record_step(&structure, &s, a, &obs, &n).unwrap();
    }
    let tables = build_tables(&structure, &conf, OptimismFlags::default());
    let mut planner = make_planner(&structure, 2, 8.0);
    let mut prev = f64::INFINITY;
    let mut eps = 0.4;
    for _ in 0..4 {
        let out = planner.plan_with_tables(&tables, eps).unwrap();
        assert!(
            out.objective <= prev + 1e-12,
            "objective worsened when epsilon shrank: {} -> {}",
            prev,
            out.objective
        );
        prev = out.objective;
        eps /= 2.0;
    }
}

#[test]
fn planning_is_deterministic() {
    let env = two_state_env_with_horizon(2);
    let structure = tabular_structure(&env.space, vec![env.rewards[0].scope.clone()]);
    let mut conf = ConfidenceState::new(&structure, 0.1, 0.1, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..12 {
        let s = env.reset(&mut rng);
        let (n, obs) = env.step(&s, 1, &mut rng);
        conf.record_step(&structure, &s, 1, &obs, &n).unwrap();
    }
    let mut planner = make_planner(&structure, 2, 8.0);
    let (o1, t1) = planner.plan(&conf, 0.05).unwrap();
    let (o2, t2) = planner.plan(&conf, 0.05).unwrap();
    assert_eq!(t1, t2);
    assert_eq!(o1.weights.flat_free(), o2.weights.flat_free());
    assert_eq!(o1.objective, o2.objective);
}

#[test]
fn trivial_zero_value_instance_plans_to_nonpositive_objective() {
    // all rewards zero, zero widths: V* == 0 so the optimum is <= 0 + eps
    let mut env = two_state_env_with_horizon(2);
    env.rewards[0].mean = vec![0.0; 4];
    env.rewards[0].sigma = 0.0;
    let structure = tabular_structure(&env.space, vec![env.rewards[0].scope.clone()]);
    let model = env.true_model(&structure).unwrap();
    let tables = OptimisticTables::exact_from_model(&structure, &model).unwrap();
    let mut planner = make_planner(&structure, 2, 4.0);
    let out = planner.plan_with_tables(&tables, 1e-3).unwrap();
    assert!(out.objective <= 1e-3);
}

#[test]
fn widening_confidence_never_decreases_planner_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    for trial in 0..5 {
        let (env, structure) = random_env_instance(&mut rng, 2, 2);
        let mut conf = ConfidenceState::new(&structure, 0.1, 0.2, 1.0).unwrap();
        for _ in 0..60 {
            let s = env.reset(&mut rng);
            let a = rng.gen_range(0..2);
            let (n, obs) = env.step(&s, a, &mut rng);
            conf.record_step(&structure, &s, a, &obs, &n).unwrap();
        }
        let eps = 1e-3;
        let narrow = build_tables_scaled(&structure, &conf, OptimismFlags::default(), 0.3);
        let wide = build_tables_scaled(&structure, &conf, OptimismFlags::default(), 1.0);
        let mut planner = make_planner(&structure, 2, 14.0);
        let v_narrow = planner.plan_with_tables(&narrow, eps).unwrap().objective;
        let v_wide = planner.plan_with_tables(&wide, eps).unwrap().objective;
        assert!(
            v_wide >= v_narrow - 2.0 * eps - 1e-9,
            "trial {trial}: widening decreased value {v_narrow} -> {v_wide}"
        );
    }
}

#[test]
fn oracle_trace_emits_json_lines() {
    let env = two_state_env_with_horizon(2);
    let structure = tabular_structure(&env.space, vec![env.rewards[0].scope.clone()]);
    let model = env.true_model(&structure).unwrap();
    let tables = OptimisticTables::exact_from_model(&structure, &model).unwrap();
    let buf = std::sync::Arc::new(std::sync::Mutex::new(Vec::<u8>::new()));
    struct SharedSink(std::sync::Arc<std::sync::Mutex<Vec<u8>>>);
    impl std::io::Write for SharedSink {
        fn write(&mut self, data: &[u8]) -> std::io::Result<usize> {
            self.0.lock().unwrap().extend_from_slice(data);
            Ok(data.len())
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }
    let mut planner = make_planner(&structure, 2, 8.0);
    planner.set_trace(Some(Box::new(SharedSink(buf.clone()))));
    let _ = planner.plan_with_tables(&tables, 0.1).unwrap();
    planner.set_trace(None);
    let text = String::from_utf8(buf.lock().unwrap().clone()).unwrap();
    let mut saw_cut = false;
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("query").is_some());
        if v["verdict"] == "cut" {
            saw_cut = true;
            assert!(v["cut"]["coeffs"].is_array());
        }
    }
    assert!(saw_cut);
}

#[test]
fn two_state_scoped_basis_plan_is_optimistic() {
    // the production basis for the two-state runs: h0 plus the state
    // indicator, scoped marginals rather than tabular
    let env = two_state_env_with_horizon(2);
    let scope = Scope::new(vec![0]).unwrap();
    let space = env.space.clone();
    let basis = fsmdp_core::BasisSet::new(
        &space,
        vec![
            fsmdp_core::BasisFunction {
                value_scope: Scope::empty(),
                parent_scope: Scope::empty(),
                table: vec![1.0],
            },
            fsmdp_core::BasisFunction {
                value_scope: scope.clone(),
                parent_scope: scope.clone(),
                table: vec![0.0, 1.0],
            },
        ],
        1.0,
    )
    .unwrap();
    let structure = ProblemStructure::new(space, basis, vec![scope]).unwrap();
    let conf = ConfidenceState::new(&structure, 0.1, 0.1, 1.0).unwrap();
    let mut planner = make_planner(&structure, 2, 6.0);
    // fresh state: everything unvisited, fully optimistic -> V-hat >= tau * C
    let (out, _tables) = planner.plan(&conf, 0.05).unwrap();
    let v0 = structure.eval_value(&out.weights, 1, &[0]);
    let v1 = structure.eval_value(&out.weights, 1, &[1]);
    assert!(v0 >= 2.0 - 0.06 && v1 >= 2.0 - 0.06, "V = ({v0}, {v1})");
}
