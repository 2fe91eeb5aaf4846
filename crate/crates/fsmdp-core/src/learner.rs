//! The outer episodic learning loop: plan optimistically, act greedily
//! against the optimistic model, record everything, account regret.
//!
//! Policy extraction is a one-step optimistic lookahead: the planner returns
//! per-step weights and frozen tables, and the executed action maximizes
//! `sum_i R~_i(s, a) + sum_j w_j^(l+1) sum_s' h_j(s') P_j(s' | s, a)` with
//! ties to the lowest action index. Per-episode regret is measured against
//! exact tabular values whenever the joint space is enumerable; otherwise the
//! trace carries a realized-reward proxy and says so.

use crate::basis::WeightMatrix;
use crate::env::Environment;
use crate::error::{FsmdpError, Result};
use crate::estimation::ConfidenceState;
use crate::model::ProblemStructure;
use crate::optimism::{OptimisticTables, Sign};
use crate::oracle::{tabular_policy_value, tabular_vi};
use crate::planner::{Planner, PlannerConfig};
use crate::space::ScopeIndexer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Inputs of the regret reference curve.
#[derive(Debug, Clone, Copy)]
pub struct BoundParams {
    /// Number of non-constant basis functions.
    pub phi: usize,
    pub tau: usize,
    pub weight_bound: f64,
    pub basis_bound: f64,
    /// Largest scoped-assignment count across marginals and rewards.
    pub j_card: usize,
    /// Number of distinct transition marginals.
    pub n_marginals: usize,
    /// Scope-size bound.
    pub zeta: usize,
    pub delta: f64,
}

impl BoundParams {
    pub fn from_structure(structure: &ProblemStructure, weight_bound: f64, delta: f64) -> Self {
        let mut j_card = 1;
        let mut zeta = 1;
        for j in 1..structure.phi() {
            j_card = j_card.max(structure.outcomes(j)).max(structure.parents(j));
            zeta = zeta
                .max(structure.basis.func(j).parent_scope.len())
                .max(structure.basis.func(j).value_scope.len());
        }
        for i in 0..structure.num_rewards() {
            j_card = j_card.max(structure.reward_cells(i));
            zeta = zeta.max(structure.reward_scopes[i].len());
        }
        BoundParams {
            phi: structure.phi().saturating_sub(1).max(1),
            tau: 0, // filled by callers that know the horizon
            weight_bound,
            basis_bound: structure.basis.bound(),
            j_card,
            n_marginals: structure.marginal_count().max(1),
            zeta,
            delta,
        }
    }
}

/// The regret reference curve
/// `tau * 30 phi W G sqrt(T J (J ln 2 + ln(2 N zeta T^2 / delta)))`,
/// requiring `W G >= 1`.
pub fn theoretical_bound(p: &BoundParams, t: f64) -> Result<f64> {
    if p.weight_bound * p.basis_bound < 1.0 {
        return Err(FsmdpError::Config(format!(
            "the bound needs W*G >= 1, got {}",
            p.weight_bound * p.basis_bound
        )));
    }
    if !(t >= 1.0) {
        return Err(FsmdpError::Config("bound needs T >= 1".into()));
    }
    let j = p.j_card as f64;
    let inner = j * std::f64::consts::LN_2
        + (2.0 * p.n_marginals as f64 * p.zeta as f64 * t * t / p.delta).ln();
    Ok(p.tau as f64
        * 30.0
        * p.phi as f64
        * p.weight_bound
        * p.basis_bound
        * (t * j * inner).sqrt())
}

/// Optimistic one-step lookahead. Ties break to the lowest action index.
pub fn greedy_action(
    structure: &ProblemStructure,
    tables: &OptimisticTables,
    w: &WeightMatrix,
    state: &[u32],
    l: usize,
) -> usize {
    let tau = w.tau();
    let mut best_a = 0;
    let mut best_q = f64::NEG_INFINITY;
    for a in 0..structure.actions() {
        let mut q = 0.0;
        for i in 0..structure.num_rewards() {
            let z = structure.reward_indexer(i).rank_of_state(state) as usize;
            q += tables.reward(structure, i, a, z);
        }
        if l < tau {
            for j in 0..structure.phi() {
                let wn = w.get(l + 1, j);
                if wn == 0.0 {
                    continue;
                }
                if j == 0 {
                    q += wn;
                } else {
                    let pa = structure.parent_indexer(j).rank_of_state(state) as usize;
                    q += wn * tables.backprojection(structure, j, a, pa, Sign::of_weight(wn));
                }
            }
        }
        if q > best_q {
            best_q = q;
            best_a = a;
        }
    }
    best_a
}

/// One recorded transition.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Vec<u32>,
    pub action: usize,
    pub observations: Vec<f64>,
    pub next_state: Vec<u32>,
}

/// Roll one episode with the greedy policy, recording every step into the
/// confidence state.
pub fn run_episode(
    env: &Environment,
    structure: &ProblemStructure,
    tables: &OptimisticTables,
    w: &WeightMatrix,
    conf: &mut ConfidenceState,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Transition>, f64)> {
    let mut state = env.reset(rng);
    let mut trajectory = Vec::with_capacity(env.tau);
    let mut realized = 0.0;
    for l in 1..=env.tau {
        let action = greedy_action(structure, tables, w, &state, l);
        let (next, obs) = env.step(&state, action, rng);
        realized += obs.iter().sum::<f64>();
        conf.record_step(structure, &state, action, &obs, &next)?;
        trajectory.push(Transition {
            state: state.clone(),
            action,
            observations: obs,
            next_state: next.clone(),
        });
        state = next;
    }
    Ok((trajectory, realized))
}

/// One per-episode accounting row.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub episode: u64,
    pub realized_reward: f64,
    pub regret: f64,
    pub regret_is_proxy: bool,
    pub cumulative_regret: f64,
    pub bound: f64,
}

/// The full run record: rows plus the coverage flags when tracked.
#[derive(Debug, Clone, Default)]
pub struct RegretTrace {
    pub rows: Vec<TraceRow>,
    /// Per episode: did the confidence sets contain the true model at the
    /// episode boundary?
    pub coverage: Vec<bool>,
}

impl RegretTrace {
    pub fn cumulative_regret(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.cumulative_regret)
    }
}

#[derive(Debug, Clone)]
pub struct LearnerOptions {
    pub delta: f64,
    pub weight_bound: f64,
    pub planner: PlannerConfig,
    /// Compute exact per-episode regret when the joint size is at most this.
    pub exact_regret_limit: u64,
    /// Check `contains_model(true model)` each episode.
    pub track_coverage: bool,
}

impl Default for LearnerOptions {
    fn default() -> Self {
        LearnerOptions {
            delta: 0.1,
            weight_bound: 6.0,
            planner: PlannerConfig::default(),
            exact_regret_limit: 1 << 14,
            track_coverage: false,
        }
    }
}

/// The planner accuracy schedule.
#[inline]
pub fn epsilon_schedule(k: u64) -> f64 {
    (1.0 / k as f64).sqrt()
}

/// Convenience wrapper returning the trace and the final confidence state.
pub fn run(
    env: &Environment,
    structure: &ProblemStructure,
    episodes: u64,
    seed: u64,
    options: &LearnerOptions,
) -> Result<(RegretTrace, ConfidenceState)> {
    let net = crate::elimination::cost_network_for(structure);
    let order = crate::elimination::min_degree_order(&net, None)?;
    let mut planner = Planner::new(
        structure,
        order,
        env.tau,
        options.weight_bound,
        options.planner.clone(),
    )?;
    run_collect(env, structure, &mut planner, episodes, seed, options)
}

/// Like [`run_with`] but also returning the final confidence state (used for
/// snapshot persistence).
pub fn run_collect(
    env: &Environment,
    structure: &ProblemStructure,
    planner: &mut Planner<'_>,
    episodes: u64,
    seed: u64,
    options: &LearnerOptions,
) -> Result<(RegretTrace, ConfidenceState)> {
    let sigma = env.rewards.iter().map(|r| r.sigma).fold(0.0, f64::max);
    let c_bound = env.rewards.iter().map(|r| r.c_bound).fold(0.0, f64::max);
    let mut conf = ConfidenceState::new(structure, options.delta, sigma, c_bound)?;
    let trace = run_resumable(env, structure, planner, episodes, seed, options, &mut conf, 1, 0.0, |_| {})?;
    Ok((trace, conf))
}

/// The resumable core: `conf`, `first_k`, and `cumulative` come from a
/// snapshot (or fresh defaults), rows stream through `on_row`.
#[allow(clippy::too_many_arguments)]
pub fn run_resumable(
    env: &Environment,
    structure: &ProblemStructure,
    planner: &mut Planner<'_>,
    episodes: u64,
    seed: u64,
    options: &LearnerOptions,
    conf: &mut ConfidenceState,
    first_k: u64,
    starting_cumulative: f64,
    mut on_row: impl FnMut(&TraceRow),
) -> Result<RegretTrace> {
    if episodes < first_k {
        return Err(FsmdpError::Config(format!(
            "resume episode {first_k} is beyond the requested {episodes}"
        )));
    }
    let exact = structure
        .space
        .joint_size()
        .map_or(false, |n| n <= options.exact_regret_limit);
    let optimal = if exact { Some(tabular_vi(env)?) } else { None };
    let full_idx = if exact {
        Some(ScopeIndexer::new(&structure.space, &structure.space.full_scope())?)
    } else {
        None
    };
    let true_model = if options.track_coverage {
        Some(env.true_model(structure)?)
    } else {
        None
    };
    let mut bound_params = BoundParams::from_structure(structure, options.weight_bound, options.delta);
    bound_params.tau = env.tau;
    let mut trace = RegretTrace::default();
    let mut cumulative = starting_cumulative;
    let mut best_realized = f64::NEG_INFINITY;
    for k in first_k..=episodes {
        conf.set_episode(k)?;
        if let Some(model) = &true_model {
            trace.coverage.push(conf.contains_model(structure, model)?);
        }
        let (plan, tables) = planner.plan(conf, epsilon_schedule(k))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let (trajectory, realized) = run_episode(env, structure, &tables, &plan.weights, conf, &mut rng)?;
        best_realized = best_realized.max(realized);
        let (regret, proxy) = match (&optimal, &full_idx) {
            (Some(v_star), Some(idx)) => {
                let start_state = &trajectory[0].state;
                let mut policy =
                    |s: &[u32], l: usize| greedy_action(structure, &tables, &plan.weights, s, l);
                let v_pi = tabular_policy_value(env, &mut policy)?;
                let rank = idx.rank_of_state(start_state) as usize;
                (v_star.at(1, rank) - v_pi.at(1, rank), false)
            }
            _ => ((best_realized - realized).max(0.0), true),
        };
        cumulative += regret;
        let bound = theoretical_bound(&bound_params, (k * env.tau as u64) as f64)?;
        let row = TraceRow {
            episode: k,
            realized_reward: realized,
            regret,
            regret_is_proxy: proxy,
            cumulative_regret: cumulative,
            bound,
        };
        on_row(&row);
        trace.rows.push(row);
    }
    Ok(trace)
}
