//! Ground-truth environment simulator.
//!
//! The learner only ever sees marginal transition probabilities, but a
//! simulator needs a full joint. The joint is specified either as a product
//! of per-cluster conditional tables (classic DBN factors) or as a finite
//! mixture of such products; mixtures realize *correlated* cluster
//! transitions, which is exactly the case plain product-form FMDPs cannot
//! express. Exact marginalization stays cheap in both forms.

use crate::error::{FsmdpError, Result};
use crate::model::{FsmdpModel, ProblemStructure};
use crate::space::{FactoredSpace, Scope, ScopeIndexer};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// One factored reward term: a mean table over `Val(Z_i^R) x A` plus
/// subgaussian observation noise.
///
/// Means are validated to `[-C, C]`. (The reward class bounds means by `C`
/// from above; the demonstration families pay negative penalties, so the
/// lower end is symmetric rather than zero.)
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardComponentSpec {
    pub scope: Scope,
    /// Flat `[a][z]` layout.
    pub mean: Vec<f64>,
    pub sigma: f64,
    pub c_bound: f64,
}

/// A conditional table `P(s'[scope] | s[parents], a)`, flat `[a][pa][outcome]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionCluster {
    pub scope: Scope,
    pub parents: Scope,
    pub rows: Vec<f64>,
}

/// Full joint dynamics: a product of clusters, or a mixture of products.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum JointTransitionSpec {
    Product(Vec<TransitionCluster>),
    Mixture {
        weights: Vec<f64>,
        components: Vec<Vec<TransitionCluster>>,
    },
}

impl JointTransitionSpec {
    fn components(&self) -> Vec<(f64, &[TransitionCluster])> {
        match self {
            JointTransitionSpec::Product(c) => vec![(1.0, c.as_slice())],
            JointTransitionSpec::Mixture { weights, components } => weights
                .iter()
                .copied()
                .zip(components.iter().map(|c| c.as_slice()))
                .collect(),
        }
    }
}

/// Initial-state distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum InitialDistribution {
    Point(Vec<u32>),
    Uniform,
    /// Independent per-variable distributions.
    Product(Vec<Vec<f64>>),
}

pub struct Environment {
    pub space: FactoredSpace,
    pub rewards: Vec<RewardComponentSpec>,
    pub transition: JointTransitionSpec,
    pub rho: InitialDistribution,
    pub tau: usize,
    reward_idx: Vec<ScopeIndexer>,
}

const PROB_TOL: f64 = 1e-12;

fn check_cluster(space: &FactoredSpace, c: &TransitionCluster) -> Result<(ScopeIndexer, ScopeIndexer)> {
    let out_idx = ScopeIndexer::new(space, &c.scope)?;
    let pa_idx = ScopeIndexer::new(space, &c.parents)?;
    let rows = space.action_count() as u64 * pa_idx.count();
    if c.rows.len() as u64 != rows * out_idx.count() {
        return Err(FsmdpError::Config(format!(
            "transition cluster over {:?}: expected {} entries, got {}",
            c.scope.indices(),
            rows * out_idx.count(),
            c.rows.len()
        )));
    }
    for row in c.rows.chunks(out_idx.count() as usize) {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > PROB_TOL || row.iter().any(|&p| p < -PROB_TOL) {
            return Err(FsmdpError::Config(format!(
                "transition cluster over {:?}: row does not sum to 1 (got {s})",
                c.scope.indices()
            )));
        }
    }
    Ok((out_idx, pa_idx))
}

impl Environment {
    pub fn new(
        space: FactoredSpace,
        rewards: Vec<RewardComponentSpec>,
        transition: JointTransitionSpec,
        rho: InitialDistribution,
        tau: usize,
    ) -> Result<Self> {
        if tau == 0 {
            return Err(FsmdpError::Config("horizon tau must be >= 1".into()));
        }
        if rewards.is_empty() {
            return Err(FsmdpError::Config("environment needs at least one reward component".into()));
        }
        let mut reward_idx = Vec::with_capacity(rewards.len());
        for (i, r) in rewards.iter().enumerate() {
            let idx = ScopeIndexer::new(&space, &r.scope)?;
            if r.mean.len() as u64 != space.action_count() as u64 * idx.count() {
                return Err(FsmdpError::Config(format!("reward component {i}: table size mismatch")));
            }
            if !(r.sigma >= 0.0) || !(r.c_bound > 0.0) {
                return Err(FsmdpError::Config(format!(
                    "reward component {i}: need sigma >= 0 and C > 0"
                )));
            }
            if let Some(&m) = r.mean.iter().find(|m| m.abs() > r.c_bound + PROB_TOL) {
                return Err(FsmdpError::Config(format!(
                    "reward component {i}: mean {m} outside [-C, C] with C = {}",
                    r.c_bound
                )));
            }
            reward_idx.push(idx);
        }
        // every mixture component must partition the variables
        for (w, clusters) in transition.components() {
            if w < -PROB_TOL {
                return Err(FsmdpError::Config("negative mixture weight".into()));
            }
            let mut covered = vec![false; space.num_vars()];
            for c in clusters {
                check_cluster(&space, c)?;
                for &i in c.scope.indices() {
                    if covered[i] {
                        return Err(FsmdpError::Config(format!(
                            "variable {i} covered by two transition clusters"
                        )));
                    }
                    covered[i] = true;
                }
            }
            if let Some(i) = covered.iter().position(|&c| !c) {
                return Err(FsmdpError::Config(format!(
                    "variable {i} not covered by any transition cluster"
                )));
            }
        }
        if let JointTransitionSpec::Mixture { weights, components } = &transition {
            if weights.len() != components.len() || weights.is_empty() {
                return Err(FsmdpError::Config("mixture weights/components mismatch".into()));
            }
            let s: f64 = weights.iter().sum();
            if (s - 1.0).abs() > PROB_TOL {
                return Err(FsmdpError::Config(format!("mixture weights sum to {s}, expected 1")));
            }
        }
        match &rho {
            InitialDistribution::Point(v) => {
                if v.len() != space.num_vars()
                    || v.iter().enumerate().any(|(i, &x)| x >= space.card(i))
                {
                    return Err(FsmdpError::Config("initial point state out of range".into()));
                }
            }
            InitialDistribution::Uniform => {}
            InitialDistribution::Product(per_var) => {
                if per_var.len() != space.num_vars() {
                    return Err(FsmdpError::Config("initial product distribution: wrong arity".into()));
                }
                for (i, d) in per_var.iter().enumerate() {
                    let s: f64 = d.iter().sum();
                    if d.len() != space.card(i) as usize || (s - 1.0).abs() > PROB_TOL {
                        return Err(FsmdpError::Config(format!(
                            "initial distribution for variable {i} is not a distribution"
                        )));
                    }
                }
            }
        }
        Ok(Environment { space, rewards, transition, rho, tau, reward_idx })
    }

    /// Draw an initial state from rho.
    pub fn reset<R: Rng>(&self, rng: &mut R) -> Vec<u32> {
        match &self.rho {
            InitialDistribution::Point(v) => v.clone(),
            InitialDistribution::Uniform => (0..self.space.num_vars())
                .map(|i| rng.gen_range(0..self.space.card(i)))
                .collect(),
            InitialDistribution::Product(per_var) => {
                per_var.iter().map(|d| sample_categorical(d, rng) as u32).collect()
            }
        }
    }

    /// Expected summed reward at `(s, a)`.
    pub fn expected_reward(&self, state: &[u32], action: usize) -> f64 {
        self.rewards
            .iter()
            .zip(&self.reward_idx)
            .map(|(r, idx)| {
                r.mean[action * idx.count() as usize + idx.rank_of_state(state) as usize]
            })
            .sum()
    }

    /// One transition: per-component reward observations (individually
    /// observed, never pre-summed) plus a sampled next state.
    pub fn step<R: Rng>(&self, state: &[u32], action: usize, rng: &mut R) -> (Vec<u32>, Vec<f64>) {
        let obs: Vec<f64> = self
            .rewards
            .iter()
            .zip(&self.reward_idx)
            .map(|(r, idx)| {
                let mean =
                    r.mean[action * idx.count() as usize + idx.rank_of_state(state) as usize];
                mean + truncated_gaussian(r.sigma, rng)
            })
            .collect();
        let clusters = match &self.transition {
            JointTransitionSpec::Product(c) => c.as_slice(),
            JointTransitionSpec::Mixture { weights, components } => {
                &components[sample_categorical(weights, rng)]
            }
        };
        let mut next = vec![0u32; self.space.num_vars()];
        for c in clusters {
            let out_idx = ScopeIndexer::new(&self.space, &c.scope).expect("validated");
            let pa_idx = ScopeIndexer::new(&self.space, &c.parents).expect("validated");
            let base = (action as u64 * pa_idx.count() + pa_idx.rank_of_state(state)) as usize
                * out_idx.count() as usize;
            let row = &c.rows[base..base + out_idx.count() as usize];
            let outcome = sample_categorical(row, rng) as u64;
            let vals = out_idx.unrank(outcome);
            for (k, &i) in c.scope.indices().iter().enumerate() {
                next[i] = vals[k];
            }
        }
        (next, obs)
    }

    /// Exact marginal `P(s'[Z] | z_pa, a)` over `Val(Z)`, by summing the
    /// joint over variables outside `Z` (mixtures: weighted sum of component
    /// marginals). The supplied parent scope must cover every parent the
    /// clusters intersecting `Z` condition on.
    pub fn marginalize_joint(
        &self,
        value_scope: &Scope,
        parent_scope: &Scope,
        parent_values: &[u32],
        action: usize,
    ) -> Result<Vec<f64>> {
        let out_idx = ScopeIndexer::new(&self.space, value_scope)?;
        let mut total = vec![0.0; out_idx.count() as usize];
        for (weight, clusters) in self.transition.components() {
            let part = self.product_marginal(
                clusters,
                value_scope,
                &out_idx,
                parent_scope,
                parent_values,
                action,
            )?;
            for (t, p) in total.iter_mut().zip(part) {
                *t += weight * p;
            }
        }
        Ok(total)
    }

    fn product_marginal(
        &self,
        clusters: &[TransitionCluster],
        value_scope: &Scope,
        out_idx: &ScopeIndexer,
        parent_scope: &Scope,
        parent_values: &[u32],
        action: usize,
    ) -> Result<Vec<f64>> {
        // per relevant cluster, the marginal over its overlap with the scope
        let mut parts: Vec<(ScopeIndexer, Vec<f64>)> = Vec::new();
        for c in clusters {
            let overlap = Scope::new(
                c.scope
                    .indices()
                    .iter()
                    .copied()
                    .filter(|&i| value_scope.contains(i))
                    .collect(),
            )?;
            if overlap.is_empty() {
                continue;
            }
            for &p in c.parents.indices() {
                if !parent_scope.contains(p) {
                    return Err(FsmdpError::Config(format!(
                        "marginal over {:?} needs parent variable {p}, absent from the given parent scope",
                        value_scope.indices()
                    )));
                }
            }
            let cl_out = ScopeIndexer::new(&self.space, &c.scope)?;
            let cl_pa = ScopeIndexer::new(&self.space, &c.parents)?;
            // rank the parent assignment inside the cluster's parent scope
            let mut pa_vals = Vec::with_capacity(c.parents.len());
            for &p in c.parents.indices() {
                let pos = parent_scope.indices().iter().position(|&q| q == p).unwrap();
                pa_vals.push(parent_values[pos]);
            }
            let base = (action as u64 * cl_pa.count() + cl_pa.rank_of_values(&pa_vals)) as usize
                * cl_out.count() as usize;
            let row = &c.rows[base..base + cl_out.count() as usize];
            let ov_idx = ScopeIndexer::new(&self.space, &overlap)?;
            let mut acc = vec![0.0; ov_idx.count() as usize];
            let mut buf = vec![0u32; c.scope.len()];
            for (r, &p) in row.iter().enumerate() {
                cl_out.unrank_into(r as u64, &mut buf);
                let mut proj = Vec::with_capacity(overlap.len());
                for &i in overlap.indices() {
                    let pos = c.scope.indices().iter().position(|&q| q == i).unwrap();
                    proj.push(buf[pos]);
                }
                acc[ov_idx.rank_of_values(&proj) as usize] += p;
            }
            parts.push((ov_idx, acc));
        }
        let mut out = vec![1.0; out_idx.count() as usize];
        let mut buf = vec![0u32; value_scope.len()];
        for (r, slot) in out.iter_mut().enumerate() {
            out_idx.unrank_into(r as u64, &mut buf);
            for (ov_idx, acc) in &parts {
                let mut proj = Vec::with_capacity(ov_idx.scope().len());
                for &i in ov_idx.scope().indices() {
                    let pos = value_scope.indices().iter().position(|&q| q == i).unwrap();
                    proj.push(buf[pos]);
                }
                *slot *= acc[ov_idx.rank_of_values(&proj) as usize];
            }
        }
        Ok(out)
    }

    /// Full joint next-state distribution for `(s, a)` over canonical state
    /// ranks. Brute-force paths only.
    pub fn joint_next_probs(&self, state: &[u32], action: usize, limit: u64) -> Result<Vec<f64>> {
        let n = self.space.joint_size()?;
        if n > limit {
            return Err(FsmdpError::ScaleExceeded(format!(
                "joint size {n} exceeds limit {limit}"
            )));
        }
        let full = self.space.full_scope();
        let full_idx = ScopeIndexer::new(&self.space, &full)?;
        let mut out = vec![0.0; n as usize];
        let mut buf = vec![0u32; self.space.num_vars()];
        for (weight, clusters) in self.transition.components() {
            let prepared: Vec<(ScopeIndexer, &[f64])> = clusters
                .iter()
                .map(|c| {
                    let cl_out = ScopeIndexer::new(&self.space, &c.scope).expect("validated");
                    let cl_pa = ScopeIndexer::new(&self.space, &c.parents).expect("validated");
                    let count = cl_out.count() as usize;
                    let base = (action as u64 * cl_pa.count() + cl_pa.rank_of_state(state))
                        as usize
                        * count;
                    let row = &c.rows[base..base + count];
                    (cl_out, row)
                })
                .collect();
            for (r, slot) in out.iter_mut().enumerate() {
                full_idx.unrank_into(r as u64, &mut buf);
                let mut p = weight;
                for (cl_out, row) in &prepared {
                    p *= row[cl_out.rank_of_state(&buf) as usize];
                }
                *slot += p;
            }
        }
        Ok(out)
    }

    /// Exact `(R, P)` parameters of this environment in the shape of a given
    /// problem structure.
    pub fn true_model(&self, structure: &ProblemStructure) -> Result<FsmdpModel> {
        if self.rewards.len() != structure.num_rewards()
            || self
                .rewards
                .iter()
                .zip(&structure.reward_scopes)
                .any(|(r, z)| &r.scope != z)
        {
            return Err(FsmdpError::Config(
                "environment reward scopes do not match the problem structure".into(),
            ));
        }
        let reward_means = self.rewards.iter().map(|r| r.mean.clone()).collect();
        let mut marginals = Vec::with_capacity(structure.phi().saturating_sub(1));
        for j in 1..structure.phi() {
            let f = structure.basis.func(j);
            let pa_idx = structure.parent_indexer(j);
            let mut table =
                Vec::with_capacity(structure.actions() * structure.parents(j) * structure.outcomes(j));
            for a in 0..structure.actions() {
                for z in 0..structure.parents(j) as u64 {
                    let pa_vals = pa_idx.unrank(z);
                    let dist =
                        self.marginalize_joint(&f.value_scope, &f.parent_scope, &pa_vals, a)?;
                    table.extend_from_slice(&dist);
                }
            }
            marginals.push(table);
        }
        Ok(FsmdpModel { reward_means, marginals })
    }
}

#[inline]
fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let mut u: f64 = rng.gen();
    for (i, &p) in probs.iter().enumerate() {
        u -= p;
        if u <= 0.0 {
            return i;
        }
    }
    probs.len() - 1
}

/// Symmetric truncated Gaussian noise (rejection at 4 sigma keeps the mean
/// exact while bounding observations).
fn truncated_gaussian<R: Rng>(sigma: f64, rng: &mut R) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    loop {
        let x: f64 = rng.sample::<f64, _>(StandardNormal) * sigma;
        if x.abs() <= 4.0 * sigma {
            return x;
        }
    }
}

/// The hard-to-fit-Q family: `2^m` states, horizon 1, a reset action worth 0
/// everywhere and a penalized action with rewards in `{-1, -1/2}`. The
/// optimal value function is identically zero (always reset), hence linear in
/// any basis; the Q-function of the penalized action resists linear fits.
pub fn make_safe_action_family(m: usize, rng_seed: u64) -> Result<Environment> {
    use rand::SeedableRng;
    if m == 0 || m > 20 {
        return Err(FsmdpError::Config("safe-action family needs 1 <= m <= 20".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed);
    let space = FactoredSpace::new(vec![2; m], 2)?;
    let n = 1u64 << m;
    let opt: u64 = rng.gen_range(0..n);
    // j(i) != opt, uniform over the other states
    let targets: Vec<u64> = (0..n)
        .map(|_| {
            let t = rng.gen_range(0..n - 1);
            if t >= opt {
                t + 1
            } else {
                t
            }
        })
        .collect();
    let full = space.full_scope();
    let mut clusters = Vec::with_capacity(m);
    for b in 0..m {
        let scope = Scope::new(vec![b])?;
        let mut rows = Vec::with_capacity(2 * n as usize * 2);
        // action 0: reset to opt
        for _ in 0..n {
            let bit = (opt >> b) & 1;
            rows.extend_from_slice(if bit == 0 { &[1.0, 0.0] } else { &[0.0, 1.0] });
        }
        // action 1: deterministic scramble i -> j(i)
        for i in 0..n {
            let bit = (targets[i as usize] >> b) & 1;
            rows.extend_from_slice(if bit == 0 { &[1.0, 0.0] } else { &[0.0, 1.0] });
        }
        clusters.push(TransitionCluster { scope, parents: full.clone(), rows });
    }
    let mut mean = vec![0.0; 2 * n as usize];
    for i in 0..n as usize {
        mean[n as usize + i] = if rng.gen::<bool>() { -1.0 } else { -0.5 };
    }
    let rewards = vec![RewardComponentSpec {
        scope: full,
        mean,
        sigma: 0.0,
        c_bound: 1.0,
    }];
    Environment::new(
        space,
        rewards,
        JointTransitionSpec::Product(clusters),
        InitialDistribution::Uniform,
        1,
    )
}

/// The two-state lower-bound environment, penalty variant: one binary state
/// variable, a safe action that resets to state 0 and a risky action that
/// drifts toward state 1, where it pays -1. `V* == 0` (take the safe action
/// at state 1), so the optimal value function is linear.
pub fn make_two_state_env() -> Environment {
    two_state_env_with_horizon(2)
}

pub fn two_state_env_with_horizon(tau: usize) -> Environment {
    let space = FactoredSpace::new(vec![2], 2).expect("static");
    let scope = Scope::new(vec![0]).expect("static");
    let rewards = vec![RewardComponentSpec {
        scope: scope.clone(),
        // [a=0][s=0,1], [a=1][s=0,1]
        mean: vec![0.0, 0.0, 0.0, -1.0],
        sigma: 0.1,
        c_bound: 1.0,
    }];
    let clusters = vec![TransitionCluster {
        scope: scope.clone(),
        parents: scope,
        // safe: -> state 0 surely; risky: -> state 1 w.p. 0.7 from anywhere
        rows: vec![1.0, 0.0, 1.0, 0.0, 0.3, 0.7, 0.3, 0.7],
    }];
    Environment::new(
        space,
        rewards,
        JointTransitionSpec::Product(clusters),
        InitialDistribution::Uniform,
        tau,
    )
    .expect("static environment is valid")
}
