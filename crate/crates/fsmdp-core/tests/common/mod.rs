#![allow(dead_code)]

//! Shared randomized-instance machinery for the integration suites.

use fsmdp_core::basis::{BasisFunction, BasisSet, WeightMatrix};
use fsmdp_core::elimination::{cost_network_for, min_degree_order, EliminationOrder};
use fsmdp_core::model::ProblemStructure;
use fsmdp_core::optimism::OptimisticTables;
use fsmdp_core::space::{FactoredSpace, Scope};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct RandomInstance {
    pub structure: ProblemStructure,
    pub tables: OptimisticTables,
    pub order: EliminationOrder,
    pub tau: usize,
}

pub fn random_scope(rng: &mut ChaCha8Rng, m: usize, max_size: usize, min_size: usize) -> Scope {
    let size = rng.gen_range(min_size..=max_size.min(m));
    let mut idx: Vec<usize> = (0..m).collect();
    for i in 0..size {
        let j = rng.gen_range(i..m);
        idx.swap(i, j);
    }
    idx.truncate(size);
    Scope::new(idx).unwrap()
}

fn random_distribution(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..k).map(|_| -(rng.gen::<f64>().max(1e-12)).ln()).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// A structure over `m` binary variables with random scopes of size at most
/// `scope_max`, random basis tables, and synthetic optimistic tables (both
/// sign variants drawn independently, which elimination must handle anyway).
pub fn random_instance(rng: &mut ChaCha8Rng, m: usize, scope_max: usize, tau: usize) -> RandomInstance {
    let actions = rng.gen_range(1..=3);
    let space = FactoredSpace::new(vec![2; m], actions).unwrap();
    let n_rewards = rng.gen_range(1..=3);
    let reward_scopes: Vec<Scope> = (0..n_rewards)
        .map(|_| random_scope(rng, m, scope_max, 0))
        .collect();
    let mut funcs = vec![BasisFunction {
        value_scope: Scope::empty(),
        parent_scope: Scope::empty(),
        table: vec![1.0],
    }];
    let n_basis = rng.gen_range(1..=3);
    for _ in 0..n_basis {
        let value_scope = random_scope(rng, m, scope_max, 1);
        let parent_scope = random_scope(rng, m, scope_max, 0);
        let entries = 1usize << value_scope.len();
        let table: Vec<f64> = (0..entries).map(|_| rng.gen_range(-1.0..1.0)).collect();
        funcs.push(BasisFunction { value_scope, parent_scope, table });
    }
    let basis = BasisSet::new(&space, funcs, 1.0).unwrap();
    let structure = ProblemStructure::new(space, basis, reward_scopes).unwrap();
    let tables = random_tables(rng, &structure);
    let net = cost_network_for(&structure);
    let order = min_degree_order(&net, None).unwrap();
    RandomInstance { structure, tables, order, tau }
}

/// Synthetic optimistic tables with independent random parameters.
pub fn random_tables(rng: &mut ChaCha8Rng, structure: &ProblemStructure) -> OptimisticTables {
    let actions = structure.actions();
    let rewards = (0..structure.num_rewards())
        .map(|i| {
            (0..actions * structure.reward_cells(i))
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect()
        })
        .collect();
    let mut marginal_plus = Vec::new();
    let mut marginal_minus = Vec::new();
    let mut backproj_plus = Vec::new();
    let mut backproj_minus = Vec::new();
    for j in 1..structure.phi() {
        let h = &structure.basis.func(j).table;
        let out = structure.outcomes(j);
        let cells = actions * structure.parents(j);
        let mut plus = Vec::new();
        let mut minus = Vec::new();
        let mut bp_p = Vec::new();
        let mut bp_m = Vec::new();
        for _ in 0..cells {
            let p = random_distribution(rng, out);
            let m = random_distribution(rng, out);
            bp_p.push(p.iter().zip(h).map(|(p, h)| p * h).sum());
            bp_m.push(m.iter().zip(h).map(|(p, h)| p * h).sum());
            plus.extend(p);
            minus.extend(m);
        }
        marginal_plus.push(plus);
        marginal_minus.push(minus);
        backproj_plus.push(bp_p);
        backproj_minus.push(bp_m);
    }
    OptimisticTables {
        rewards,
        marginal_plus,
        marginal_minus,
        backproj_plus,
        backproj_minus,
    }
}

/// A simulatable environment plus a structure whose basis value scopes equal
/// the transition cluster scopes (the scope-equality assumption the config
/// layer enforces).
pub fn random_env_instance(
    rng: &mut ChaCha8Rng,
    m: usize,
    tau: usize,
) -> (fsmdp_core::Environment, ProblemStructure) {
    use fsmdp_core::{
        Environment, InitialDistribution, JointTransitionSpec, RewardComponentSpec,
        TransitionCluster,
    };
    let actions = 2;
    let space = FactoredSpace::new(vec![2; m], actions).unwrap();
    let mut clusters = Vec::new();
    let mut funcs = vec![BasisFunction {
        value_scope: Scope::empty(),
        parent_scope: Scope::empty(),
        table: vec![1.0],
    }];
    for i in 0..m {
        let scope = Scope::new(vec![i]).unwrap();
        let mut parent_vars = vec![i];
        if m > 1 && rng.gen_bool(0.5) {
            let other = (i + 1 + rng.gen_range(0..m - 1)) % m;
            if other != i {
                parent_vars.push(other);
            }
        }
        let parents = Scope::new(parent_vars).unwrap();
        let pa_count = 1usize << parents.len();
        let mut rows = Vec::new();
        for _ in 0..actions * pa_count {
            let p: f64 = rng.gen_range(0.05..0.95);
            rows.extend_from_slice(&[p, 1.0 - p]);
        }
        clusters.push(TransitionCluster {
            scope: scope.clone(),
            parents: parents.clone(),
            rows,
        });
        funcs.push(BasisFunction {
            value_scope: scope,
            parent_scope: parents,
            table: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
        });
    }
    let n_rewards = rng.gen_range(1..=2);
    let reward_scopes: Vec<Scope> = (0..n_rewards)
        .map(|_| random_scope(rng, m, 2, 0))
        .collect();
    let rewards: Vec<RewardComponentSpec> = reward_scopes
        .iter()
        .map(|z| {
            let cells = 1usize << z.len();
            RewardComponentSpec {
                scope: z.clone(),
                mean: (0..actions * cells).map(|_| rng.gen_range(-0.8..0.8)).collect(),
                sigma: 0.2,
                c_bound: 1.0,
            }
        })
        .collect();
    let env = Environment::new(
        space.clone(),
        rewards,
        JointTransitionSpec::Product(clusters),
        InitialDistribution::Uniform,
        tau,
    )
    .unwrap();
    let basis = BasisSet::new(&space, funcs, 1.0).unwrap();
    let structure = ProblemStructure::new(space, basis, reward_scopes).unwrap();
    (env, structure)
}

/// Indicator basis over the full joint space (plus the constant): exact for
/// any value function on enumerable instances.
pub fn tabular_structure(
    space: &FactoredSpace,
    reward_scopes: Vec<Scope>,
) -> ProblemStructure {
    let n = space.joint_size().unwrap() as usize;
    let full = space.full_scope();
    let mut funcs = vec![BasisFunction {
        value_scope: Scope::empty(),
        parent_scope: Scope::empty(),
        table: vec![1.0],
    }];
    for r in 0..n {
        let mut table = vec![0.0; n];
        table[r] = 1.0;
        funcs.push(BasisFunction {
            value_scope: full.clone(),
            parent_scope: full.clone(),
            table,
        });
    }
    let basis = BasisSet::new(space, funcs, 1.0).unwrap();
    ProblemStructure::new(space.clone(), basis, reward_scopes).unwrap()
}

/// VI values written into indicator weights: `w_{r+1}^(l) = V_l(state_r)`.
pub fn vi_weights(
    values: &fsmdp_core::oracle::TabularValueFunction,
    bound: f64,
) -> WeightMatrix {
    let n = values.values[0].len();
    let tau = values.tau;
    let mut w = WeightMatrix::zeros(tau, n + 1, bound);
    for l in 1..=tau {
        for r in 0..n {
            w.set(l, r + 1, values.at(l, r)).unwrap();
        }
    }
    w
}

pub fn random_weights(rng: &mut ChaCha8Rng, tau: usize, phi: usize, bound: f64) -> WeightMatrix {
    let free: Vec<f64> = (0..tau * phi)
        .map(|_| {
            if rng.gen_bool(0.15) {
                0.0
            } else {
                rng.gen_range(-2.0..2.0)
            }
        })
        .collect();
    WeightMatrix::from_flat(tau, phi, bound, &free).unwrap()
}
