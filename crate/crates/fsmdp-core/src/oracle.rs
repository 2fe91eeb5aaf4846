//! Independent brute-force oracles.
//!
//! Everything here certifies an optimized component by doing the exponential
//! thing directly on enumerable instances: full backward induction, explicit
//! state enumeration of the oracle objective, polytope vertex enumeration,
//! and the exhaustive planning LP. None of it shares code with the
//! elimination or transition-optimization paths it checks.

use crate::basis::WeightMatrix;
use crate::env::Environment;
use crate::error::{FsmdpError, Result};
use crate::model::ProblemStructure;
use crate::optimism::{OptimisticTables, Sign};
use crate::planner::objective_coefficients;
use crate::simplex::{minimize_free_inequalities, SimplexScratch};
use crate::space::ScopeIndexer;

/// Enumeration ceiling for value iteration and bracket maximization.
pub const VI_STATE_LIMIT: u64 = 1 << 14;
/// Ceiling for the exhaustive planning LP.
pub const LP_STATE_LIMIT: u64 = 1 << 8;

/// Exact finite-horizon values per step and joint state rank; the `tau + 1`
/// slice is identically zero.
#[derive(Debug, Clone)]
pub struct TabularValueFunction {
    pub tau: usize,
    /// `values[l - 1][state_rank]` for `l = 1..=tau+1`.
    pub values: Vec<Vec<f64>>,
}

impl TabularValueFunction {
    pub fn at(&self, l: usize, state_rank: usize) -> f64 {
        self.values[l - 1][state_rank]
    }
}

/// Backward induction over the full joint space.
pub fn tabular_vi(env: &Environment) -> Result<TabularValueFunction> {
    let n = env.space.joint_size()?;
    if n > VI_STATE_LIMIT {
        return Err(FsmdpError::ScaleExceeded(format!(
            "tabular VI refused: {n} states > {VI_STATE_LIMIT}"
        )));
    }
    let states = env.space.enumerate_states(VI_STATE_LIMIT)?;
    let tau = env.tau;
    let mut values = vec![vec![0.0; n as usize]; tau + 1];
    for l in (1..=tau).rev() {
        for (rank, s) in states.iter().enumerate() {
            let mut best = f64::NEG_INFINITY;
            for a in 0..env.space.action_count() {
                let mut q = env.expected_reward(s, a);
                if l < tau {
                    let row = env.joint_next_probs(s, a, VI_STATE_LIMIT)?;
                    q += row
                        .iter()
                        .zip(&values[l]) // values[l] holds V_{l+1}
                        .map(|(p, v)| p * v)
                        .sum::<f64>();
                } else {
                    // V_{tau+1} == 0
                }
                best = best.max(q);
            }
            values[l - 1][rank] = best;
        }
    }
    Ok(TabularValueFunction { tau, values })
}

/// Exact value of a deterministic `(state, step) -> action` policy.
pub fn tabular_policy_value(
    env: &Environment,
    policy: &mut dyn FnMut(&[u32], usize) -> usize,
) -> Result<TabularValueFunction> {
    let n = env.space.joint_size()?;
    if n > VI_STATE_LIMIT {
        return Err(FsmdpError::ScaleExceeded(format!(
            "policy evaluation refused: {n} states > {VI_STATE_LIMIT}"
        )));
    }
    let states = env.space.enumerate_states(VI_STATE_LIMIT)?;
    let tau = env.tau;
    let mut values = vec![vec![0.0; n as usize]; tau + 1];
    for l in (1..=tau).rev() {
        for (rank, s) in states.iter().enumerate() {
            let a = policy(s, l);
            let mut q = env.expected_reward(s, a);
            if l < tau {
                let row = env.joint_next_probs(s, a, VI_STATE_LIMIT)?;
                q += row.iter().zip(&values[l]).map(|(p, v)| p * v).sum::<f64>();
            }
            values[l - 1][rank] = q;
        }
    }
    Ok(TabularValueFunction { tau, values })
}

/// Enumerate every joint state and maximize the oracle bracket
/// `sum_i R(s,a) + sum_j (-w_j^(l) h_j(s) + w_j^(l+1) sum_s' h_j(s') P_j(s'|s,a))`
/// directly. Returns the maximum and its first attaining state in canonical
/// order.
pub fn brute_force_bracket_max(
    structure: &ProblemStructure,
    tables: &OptimisticTables,
    w: &WeightMatrix,
    l: usize,
    action: usize,
) -> Result<(f64, Vec<u32>)> {
    let n = structure.space.joint_size()?;
    if n > VI_STATE_LIMIT {
        return Err(FsmdpError::ScaleExceeded(format!(
            "bracket enumeration refused: {n} states > {VI_STATE_LIMIT}"
        )));
    }
    let states = structure.space.enumerate_states(VI_STATE_LIMIT)?;
    let mut best = f64::NEG_INFINITY;
    let mut arg = Vec::new();
    for s in &states {
        let v = bracket_value(structure, tables, w, l, action, s);
        if v > best {
            best = v;
            arg = s.clone();
        }
    }
    Ok((best, arg))
}

/// The bracket at one state, summing backprojections term by term from the
/// stored optimistic distributions.
pub fn bracket_value(
    structure: &ProblemStructure,
    tables: &OptimisticTables,
    w: &WeightMatrix,
    l: usize,
    action: usize,
    state: &[u32],
) -> f64 {
    let mut total = 0.0;
    for i in 0..structure.num_rewards() {
        let z = structure.reward_indexer(i).rank_of_state(state) as usize;
        total += tables.reward(structure, i, action, z);
    }
    let tau = w.tau();
    for j in 0..structure.phi() {
        let h = &structure.basis.func(j).table;
        let zr = structure.value_indexer(j).rank_of_state(state) as usize;
        total -= w.get(l, j) * h[zr];
        if l < tau {
            let wn = w.get(l + 1, j);
            if wn != 0.0 {
                if j == 0 {
                    total += wn;
                } else {
                    let pa = structure.parent_indexer(j).rank_of_state(state) as usize;
                    let dist = tables.marginal(structure, j, action, pa, Sign::of_weight(wn));
                    total += wn * dist.iter().zip(h).map(|(p, h)| p * h).sum::<f64>();
                }
            }
        }
    }
    total
}

/// Maximize `sign * h.P` over `{ ||P - Phat||_1 <= 2 * half_width }` cut with
/// the probability simplex, by enumerating polytope vertices through active
/// constraint sets. Supports at most 5 outcomes.
pub fn vertex_enum_transition_opt(
    empirical: &[f64],
    half_width: f64,
    h: &[f64],
    sign: Sign,
) -> Result<Vec<f64>> {
    let k = empirical.len();
    if k > 5 {
        return Err(FsmdpError::ScaleExceeded(format!(
            "vertex enumeration supports <= 5 outcomes, got {k}"
        )));
    }
    if k == 0 {
        return Err(FsmdpError::Config("empty support".into()));
    }
    let r = 2.0 * half_width;
    // constraint pool: rows g.P <= rhs
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for i in 0..k {
        let mut g = vec![0.0; k];
        g[i] = -1.0; // -P_i <= 0
        rows.push((g, 0.0));
    }
    for mask in 0..(1u32 << k) {
        let g: Vec<f64> = (0..k)
            .map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 })
            .collect();
        let rhs = r + g.iter().zip(empirical).map(|(g, p)| g * p).sum::<f64>();
        rows.push((g, rhs));
    }
    let orient = match sign {
        Sign::Plus => 1.0,
        Sign::Minus => -1.0,
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut active = vec![0usize; k.saturating_sub(1)];
    enumerate_subsets(rows.len(), k - 1, &mut active, 0, 0, &mut |chosen| {
        // solve: sum P = 1 plus the chosen rows at equality
        let mut a = vec![0.0; k * k];
        let mut b = vec![0.0; k];
        for j in 0..k {
            a[j] = 1.0;
        }
        b[0] = 1.0;
        for (r_i, &c) in chosen.iter().enumerate() {
            let (g, rhs) = &rows[c];
            for j in 0..k {
                a[(r_i + 1) * k + j] = g[j];
            }
            b[r_i + 1] = *rhs;
        }
        if let Some(p) = solve_dense(k, &mut a, &mut b) {
            // feasibility across the full pool
            const TOL: f64 = 1e-9;
            if rows.iter().all(|(g, rhs)| {
                g.iter().zip(&p).map(|(g, p)| g * p).sum::<f64>() <= rhs + TOL
            }) {
                let obj = orient * h.iter().zip(&p).map(|(h, p)| h * p).sum::<f64>();
                if best.as_ref().map_or(true, |(bo, _)| obj > *bo) {
                    best = Some((obj, p));
                }
            }
        }
    });
    best.map(|(_, p)| p)
        .ok_or_else(|| FsmdpError::Invariant("vertex enumeration found no feasible vertex".into()))
}

fn enumerate_subsets(
    n: usize,
    want: usize,
    buf: &mut [usize],
    depth: usize,
    start: usize,
    f: &mut dyn FnMut(&[usize]),
) {
    if depth == want {
        f(&buf[..depth]);
        return;
    }
    for i in start..n {
        buf[depth] = i;
        enumerate_subsets(n, want, buf, depth + 1, i + 1, f);
    }
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve_dense(n: usize, a: &mut [f64], b: &mut [f64]) -> Option<Vec<f64>> {
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r * n + col].abs() > a[piv * n + col].abs() {
                piv = r;
            }
        }
        if a[piv * n + col].abs() < 1e-11 {
            return None;
        }
        if piv != col {
            for j in 0..n {
                a.swap(col * n + j, piv * n + j);
            }
            b.swap(col, piv);
        }
        let d = a[col * n + col];
        for r in 0..n {
            if r != col && a[r * n + col] != 0.0 {
                let f = a[r * n + col] / d;
                for j in col..n {
                    a[r * n + j] -= f * a[col * n + j];
                }
                b[r] -= f * b[col];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i * n + i]).collect())
}

/// Solve the full planning LP by explicit enumeration: one inequality per
/// `(s, a, l)`, epigraph variables per `(marginal, action, parent, step)`
/// covering both sign-orderings of the stored optimistic marginals, and the
/// l1 box on each step's weights. Shares only the simplex core with the
/// production path; every constraint here is written out directly.
pub fn exhaustive_lp_plan(
    structure: &ProblemStructure,
    tables: &OptimisticTables,
    tau: usize,
    weight_bound: f64,
) -> Result<(f64, WeightMatrix)> {
    let n_states = structure.space.joint_size()?;
    if n_states > LP_STATE_LIMIT || tau > 3 {
        return Err(FsmdpError::ScaleExceeded(format!(
            "exhaustive LP refused: {n_states} states (limit {LP_STATE_LIMIT}), tau {tau} (limit 3)"
        )));
    }
    let phi = structure.phi();
    let actions = structure.actions();
    let states = structure.space.enumerate_states(LP_STATE_LIMIT)?;
    // variable layout: w (tau*phi) | t (per j>=1, a, pa, next_l in 2..=tau)
    //                  | v (tau*phi, absolute-value helpers)
    let n_w = tau * phi;
    let mut t_index = Vec::new(); // (j, a, pa, next_l) -> column
    let mut t_cols = 0usize;
    if tau >= 2 {
        for j in 1..phi {
            for a in 0..actions {
                for pa in 0..structure.parents(j) {
                    for next_l in 2..=tau {
                        t_index.push((j, a, pa, next_l));
                        t_cols += 1;
                    }
                }
            }
        }
    }
    let t_col = |j: usize, a: usize, pa: usize, next_l: usize, structure: &ProblemStructure| -> usize {
        // mirror of the enumeration order above
        let mut col = 0;
        for jj in 1..j {
            col += actions * structure.parents(jj) * (tau - 1);
        }
        col += a * structure.parents(j) * (tau - 1);
        col += pa * (tau - 1);
        col += next_l - 2;
        n_w + col
    };
    let n_v = tau * phi;
    let cols = n_w + t_cols + n_v;
    let v_base = n_w + t_cols;

    let mut rows_a: Vec<f64> = Vec::new();
    let mut rows_b: Vec<f64> = Vec::new();
    let push_row = |row: Vec<f64>, rhs: f64, rows_a: &mut Vec<f64>, rows_b: &mut Vec<f64>| {
        rows_a.extend(row);
        rows_b.push(rhs);
    };

    // state-action-step constraints
    for l in 1..=tau {
        for a in 0..actions {
            for s in &states {
                let mut row = vec![0.0; cols];
                for j in 0..phi {
                    let h = structure.basis.func(j).table
                        [structure.value_indexer(j).rank_of_state(s) as usize];
                    row[(l - 1) * phi + j] += h;
                }
                if l < tau {
                    // h0 backprojection is exactly w0^(l+1)
                    row[l * phi] -= 1.0;
                    for j in 1..phi {
                        let pa = structure.parent_indexer(j).rank_of_state(s) as usize;
                        row[t_col(j, a, pa, l + 1, structure)] -= 1.0;
                    }
                }
                let mut rhs = 0.0;
                for i in 0..structure.num_rewards() {
                    let z = structure.reward_indexer(i).rank_of_state(s) as usize;
                    rhs += tables.reward(structure, i, a, z);
                }
                push_row(row, rhs, &mut rows_a, &mut rows_b);
            }
        }
    }
    // epigraph rows: t >= w_j^(next_l) * bp for both sign tables
    for (col_off, &(j, a, pa, next_l)) in t_index.iter().enumerate() {
        let col = n_w + col_off;
        for sign in [Sign::Plus, Sign::Minus] {
            let bp = tables.backprojection(structure, j, a, pa, sign);
            let mut row = vec![0.0; cols];
            row[col] = 1.0;
            row[(next_l - 1) * phi + j] -= bp;
            push_row(row, 0.0, &mut rows_a, &mut rows_b);
        }
    }
    // l1 box: v >= w, v >= -w, sum_j v_{l,j} <= W
    for l in 0..tau {
        for j in 0..phi {
            let wi = l * phi + j;
            let vi = v_base + l * phi + j;
            let mut row = vec![0.0; cols];
            row[vi] = 1.0;
            row[wi] = -1.0;
            push_row(row, 0.0, &mut rows_a, &mut rows_b);
            let mut row = vec![0.0; cols];
            row[vi] = 1.0;
            row[wi] = 1.0;
            push_row(row, 0.0, &mut rows_a, &mut rows_b);
        }
        let mut row = vec![0.0; cols];
        for j in 0..phi {
            row[v_base + l * phi + j] = -1.0;
        }
        push_row(row, -weight_bound, &mut rows_a, &mut rows_b);
    }

    let mut c = vec![0.0; cols];
    let obj = objective_coefficients(structure, &crate::planner::ObjectiveKind::Uniform)?;
    c[..phi].copy_from_slice(&obj);

    let n_rows = rows_b.len();
    let mut scratch = SimplexScratch::default();
    let (value, x) = minimize_free_inequalities(n_rows, cols, &rows_a, &rows_b, &c, &mut scratch)?;
    let weights = WeightMatrix::from_flat(tau, phi, weight_bound, &x[..n_w])?;
    Ok((value, weights))
}

/// Does an exact solution `F w = q` exist? Row-echelon test with tolerance;
/// used by the nonlinearity witness over the penalized action's
/// feature/reward system.
pub fn exact_fit_exists(features: &[Vec<f64>], targets: &[f64], tol: f64) -> bool {
    let rows = features.len();
    if rows == 0 {
        return true;
    }
    let cols = features[0].len();
    let mut m: Vec<Vec<f64>> = features
        .iter()
        .zip(targets)
        .map(|(f, &t)| {
            let mut row = f.clone();
            row.push(t);
            row
        })
        .collect();
    let mut pivot_row = 0;
    for col in 0..cols {
        let Some(best) = (pivot_row..rows).max_by(|&a, &b| {
            m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap()
        }) else {
            break;
        };
        if m[best][col].abs() < tol {
            continue;
        }
        m.swap(pivot_row, best);
        for r in 0..rows {
            if r != pivot_row && m[r][col].abs() > 0.0 {
                let f = m[r][col] / m[pivot_row][col];
                for j in col..=cols {
                    let upd = m[pivot_row][j] * f;
                    m[r][j] -= upd;
                }
            }
        }
        pivot_row += 1;
        if pivot_row == rows {
            break;
        }
    }
    // inconsistent iff some row is (0 ... 0 | nonzero)
    !m.iter().any(|row| {
        row[..cols].iter().all(|v| v.abs() < tol) && row[cols].abs() >= tol
    })
}

/// Marginal L1 distance helper used by coverage experiments.
pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Rank of the projection of a state onto an indexer, as usize.
pub fn rank_of(idx: &ScopeIndexer, state: &[u32]) -> usize {
    idx.rank_of_state(state) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_safe_action_family, make_two_state_env, two_state_env_with_horizon};

    #[test]
    fn vi_zero_rewards_gives_zero_values() {
        let mut env = make_two_state_env();
        if let crate::env::JointTransitionSpec::Product(_) = env.transition {}
        env.rewards[0].mean = vec![0.0; 4];
        let v = tabular_vi(&env).unwrap();
        for l in 1..=env.tau + 1 {
            assert!(v.values[l - 1].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn vi_safe_action_family_value_is_zero() {
        for seed in [0, 1, 2] {
            let env = make_safe_action_family(4, seed).unwrap();
            let v = tabular_vi(&env).unwrap();
            assert!(v.values[0].iter().all(|&x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn vi_horizon_one_is_reward_max() {
        let env = two_state_env_with_horizon(1);
        let v = tabular_vi(&env).unwrap();
        // max_a r(s, a): both states have a zero-reward action
        assert_eq!(v.at(1, 0), 0.0);
        assert_eq!(v.at(1, 1), 0.0);
    }

    #[test]
    fn vi_two_state_hand_computed_horizon_three() {
        let env = two_state_env_with_horizon(3);
        let v = tabular_vi(&env).unwrap();
        // V* == 0 everywhere: a zero-reward action exists in both states and
        // every continuation is itself worth 0
        for l in 1..=3 {
            assert_eq!(v.at(l, 0), 0.0);
            assert_eq!(v.at(l, 1), 0.0);
        }
        // hand-check a suboptimal policy: always risky from state 1
        let mut always_risky = |_s: &[u32], _l: usize| 1usize;
        let pv = tabular_policy_value(&env, &mut always_risky).unwrap();
        // V_3(1) = -1; V_3(0) = 0
        // V_2(1) = -1 + 0.7 * -1 = -1.7; V_2(0) = 0.7 * -1 = -0.7
        // V_1(1) = -1 + 0.3 * -0.7 + 0.7 * -1.7 = -2.40
        assert!((pv.at(3, 1) + 1.0).abs() < 1e-12);
        assert!((pv.at(2, 1) + 1.7).abs() < 1e-12);
        assert!((pv.at(2, 0) + 0.7).abs() < 1e-12);
        assert!((pv.at(1, 1) + 2.40).abs() < 1e-12);
    }

    #[test]
    fn vertex_enum_zero_width_returns_empirical() {
        let p = vertex_enum_transition_opt(&[0.3, 0.5, 0.2], 0.0, &[1.0, 2.0, 3.0], Sign::Plus)
            .unwrap();
        for (a, b) in p.iter().zip(&[0.3, 0.5, 0.2]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn vertex_enum_reproduces_binary_boost() {
        let p = vertex_enum_transition_opt(&[0.5, 0.5], 0.3, &[1.0, 0.0], Sign::Plus).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-9 && (p[1] - 0.2).abs() < 1e-9);
    }

    #[test]
    fn fit_test_detects_consistency() {
        // q in the row space
        let f = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        assert!(exact_fit_exists(&f, &[1.0, 2.0, 3.0], 1e-9));
        assert!(!exact_fit_exists(&f, &[1.0, 2.0, 4.0], 1e-9));
    }
}
