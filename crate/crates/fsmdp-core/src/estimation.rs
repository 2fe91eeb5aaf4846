//! Online empirical estimates and confidence sets.
//!
//! Counts and sums are kept per scoped assignment: one cell per
//! `(reward component, action, z)` and one per
//! `(marginal, action, parent assignment)` with per-outcome counters. Width
//! schedules follow the episodic rule
//!
//! ```text
//! d^{R_i}_k = 4 sigma^2 ln(4 l |X[Z_i^R]| k / delta)
//! d^{P_j}_k = 2 |Val(Z_j)| ln 2 - 2 ln(delta / (2 N |Pa(Z_j)| k^2))
//! ```
//!
//! where `|X[Z_i^R]| = |A| |Val(Z_i^R)|`, `N` is the marginal count, and
//! `|Pa(Z_j)|` is the parent scope size (floored at one for parentless
//! bases). Both schedules are nondecreasing in the episode index. Widths are
//! frozen at episode boundaries: callers bump the episode index once per
//! episode and the planner reads a snapshot taken at that point.

use crate::error::{FsmdpError, Result};
use crate::model::{FsmdpModel, ProblemStructure};
use crate::space::Scope;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RewardCells {
    scope: Scope,
    /// Flat `[a][z]`.
    counts: Vec<u64>,
    sums: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MarginalCells {
    value_scope: Scope,
    parent_scope: Scope,
    /// Flat `[a][z_pa]`.
    counts: Vec<u64>,
    /// Flat `[a][z_pa][outcome]`.
    outcome_counts: Vec<u64>,
}

/// Visit counts, running sums, and the episodic width schedules.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfidenceState {
    delta: f64,
    sigma: f64,
    c_bound: f64,
    episode: u64,
    rewards: Vec<RewardCells>,
    marginals: Vec<MarginalCells>,
    /// `N = |A| sum_j |Val(Pa_j)|`.
    marginal_count: usize,
    actions: usize,
}

impl ConfidenceState {
    pub fn new(structure: &ProblemStructure, delta: f64, sigma: f64, c_bound: f64) -> Result<Self> {
        if !(0.0 < delta && delta < 1.0) {
            return Err(FsmdpError::Config(format!("delta must be in (0,1), got {delta}")));
        }
        if !(sigma >= 0.0) || !(c_bound > 0.0) {
            return Err(FsmdpError::Config("need sigma >= 0 and C > 0".into()));
        }
        let actions = structure.actions();
        let rewards = (0..structure.num_rewards())
            .map(|i| {
                let n = actions * structure.reward_cells(i);
                RewardCells {
                    scope: structure.reward_scopes[i].clone(),
                    counts: vec![0; n],
                    sums: vec![0.0; n],
                }
            })
            .collect();
        let marginals = (1..structure.phi())
            .map(|j| {
                let cells = actions * structure.parents(j);
                MarginalCells {
                    value_scope: structure.basis.func(j).value_scope.clone(),
                    parent_scope: structure.basis.func(j).parent_scope.clone(),
                    counts: vec![0; cells],
                    outcome_counts: vec![0; cells * structure.outcomes(j)],
                }
            })
            .collect();
        Ok(ConfidenceState {
            delta,
            sigma,
            c_bound,
            episode: 1,
            rewards,
            marginals,
            marginal_count: structure.marginal_count(),
            actions,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn c_bound(&self) -> f64 {
        self.c_bound
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    /// `N`, the number of distinct transition marginals tracked.
    pub fn marginal_count(&self) -> usize {
        self.marginal_count
    }

    pub fn set_episode(&mut self, k: u64) -> Result<()> {
        if k < 1 {
            return Err(FsmdpError::Config("episode index starts at 1".into()));
        }
        self.episode = k;
        Ok(())
    }

    /// Record one observed transition: bumps every touched reward cell and
    /// every (marginal, parent assignment, action, outcome) cell.
    pub fn record_step(
        &mut self,
        structure: &ProblemStructure,
        state: &[u32],
        action: usize,
        reward_observations: &[f64],
        next_state: &[u32],
    ) -> Result<()> {
        if reward_observations.len() != self.rewards.len() {
            return Err(FsmdpError::Config(format!(
                "expected {} reward observations, got {}",
                self.rewards.len(),
                reward_observations.len()
            )));
        }
        for (i, cells) in self.rewards.iter_mut().enumerate() {
            let idx = structure.reward_indexer(i);
            let cell = action * idx.count() as usize + idx.rank_of_state(state) as usize;
            cells.counts[cell] += 1;
            cells.sums[cell] += reward_observations[i];
        }
        for (jm, cells) in self.marginals.iter_mut().enumerate() {
            let j = jm + 1;
            let pa = structure.parent_indexer(j).rank_of_state(state) as usize;
            let out = structure.value_indexer(j).rank_of_state(next_state) as usize;
            let cell = action * structure.parents(j) + pa;
            cells.counts[cell] += 1;
            cells.outcome_counts[cell * structure.outcomes(j) + out] += 1;
        }
        Ok(())
    }

    pub fn reward_count(&self, i: usize, a: usize, z: usize) -> u64 {
        let cells = &self.rewards[i];
        cells.counts[a * (cells.counts.len() / self.actions) + z]
    }

    /// Empirical reward mean; `None` while the cell is unvisited.
    pub fn empirical_reward(&self, i: usize, a: usize, z: usize) -> Option<f64> {
        let cells = &self.rewards[i];
        let cell = a * (cells.counts.len() / self.actions) + z;
        if cells.counts[cell] == 0 {
            None
        } else {
            Some(cells.sums[cell] / cells.counts[cell] as f64)
        }
    }

    pub fn marginal_visits(&self, j: usize, a: usize, z_pa: usize) -> u64 {
        let cells = &self.marginals[j - 1];
        cells.counts[a * (cells.counts.len() / self.actions) + z_pa]
    }

    /// Empirical marginal distribution; `None` is the unvisited sentinel.
    pub fn empirical_marginal(&self, j: usize, a: usize, z_pa: usize) -> Option<Vec<f64>> {
        let cells = &self.marginals[j - 1];
        let pa_cells = cells.counts.len() / self.actions;
        let cell = a * pa_cells + z_pa;
        let n = cells.counts[cell];
        if n == 0 {
            return None;
        }
        let out = cells.outcome_counts.len() / cells.counts.len();
        Some(
            cells.outcome_counts[cell * out..(cell + 1) * out]
                .iter()
                .map(|&c| c as f64 / n as f64)
                .collect(),
        )
    }

    /// Reward width `d_k^{R_i}` at a given episode index.
    pub fn reward_width_at(&self, i: usize, k: u64) -> f64 {
        debug_assert!(k >= 1);
        if self.sigma == 0.0 {
            return 0.0;
        }
        let l = self.rewards.len() as f64;
        let x_card = self.rewards[i].counts.len() as f64; // |A| * |Val(Z_i^R)|
        let arg = 4.0 * l * x_card * k as f64 / self.delta;
        (4.0 * self.sigma * self.sigma * arg.ln()).max(0.0)
    }

    /// Transition width `d_k^{P_j}` at a given episode index (basis `j >= 1`).
    pub fn marginal_width_at(&self, j: usize, k: u64) -> f64 {
        debug_assert!(k >= 1);
        let cells = &self.marginals[j - 1];
        let outcomes = (cells.outcome_counts.len() / cells.counts.len()) as f64;
        let pa_size = cells.parent_scope.len().max(1) as f64;
        let n = self.marginal_count as f64;
        let kf = k as f64;
        2.0 * outcomes * std::f64::consts::LN_2
            + 2.0 * (2.0 * n * pa_size * kf * kf / self.delta).ln()
    }

    pub fn reward_width(&self, i: usize) -> f64 {
        self.reward_width_at(i, self.episode)
    }

    pub fn marginal_width(&self, j: usize) -> f64 {
        self.marginal_width_at(j, self.episode)
    }

    /// Membership test for the current confidence set family: every visited
    /// reward cell within `sqrt(d/n)` of the empirical mean, every visited
    /// marginal within `sqrt(d/n)` in L1. Unvisited cells are unconstrained.
    pub fn contains_model(&self, structure: &ProblemStructure, model: &FsmdpModel) -> Result<bool> {
        if self.rewards.len() != structure.num_rewards()
            || self.marginals.len() + 1 != structure.phi()
        {
            return Err(FsmdpError::Config("model/confidence shape mismatch".into()));
        }
        for (i, cells) in self.rewards.iter().enumerate() {
            if cells.scope != structure.reward_scopes[i] {
                return Err(FsmdpError::Config(format!("reward scope mismatch at component {i}")));
            }
        }
        model.validate(structure)?;
        const TOL: f64 = 1e-9;
        for i in 0..self.rewards.len() {
            let d = self.reward_width(i);
            let z_count = structure.reward_cells(i);
            for a in 0..self.actions {
                for z in 0..z_count {
                    let n = self.reward_count(i, a, z);
                    if n == 0 {
                        continue;
                    }
                    let emp = self.empirical_reward(i, a, z).unwrap();
                    if (model.reward_mean(structure, i, a, z) - emp).abs()
                        > (d / n as f64).sqrt() + TOL
                    {
                        return Ok(false);
                    }
                }
            }
        }
        for j in 1..structure.phi() {
            let d = self.marginal_width(j);
            for a in 0..self.actions {
                for z in 0..structure.parents(j) {
                    let n = self.marginal_visits(j, a, z);
                    if n == 0 {
                        continue;
                    }
                    let emp = self.empirical_marginal(j, a, z).unwrap();
                    let l1: f64 = emp
                        .iter()
                        .zip(model.marginal(structure, j, a, z))
                        .map(|(e, m)| (e - m).abs())
                        .sum();
                    if l1 > (d / n as f64).sqrt() + TOL {
                        return Ok(false);
                    }
                }
            }
        }
        Ok(true)
    }

    /// Exact snapshot of the observed counts: the empirical model itself.
    /// Unvisited cells fall back to zero reward and a uniform marginal.
    pub fn empirical_model(&self, structure: &ProblemStructure) -> FsmdpModel {
        let reward_means = (0..self.rewards.len())
            .map(|i| {
                let z_count = structure.reward_cells(i);
                let mut t = vec![0.0; self.actions * z_count];
                for a in 0..self.actions {
                    for z in 0..z_count {
                        if let Some(m) = self.empirical_reward(i, a, z) {
                            t[a * z_count + z] = m;
                        }
                    }
                }
                t
            })
            .collect();
        let marginals = (1..structure.phi())
            .map(|j| {
                let out = structure.outcomes(j);
                let pa = structure.parents(j);
                let mut t = vec![1.0 / out as f64; self.actions * pa * out];
                for a in 0..self.actions {
                    for z in 0..pa {
                        if let Some(d) = self.empirical_marginal(j, a, z) {
                            t[(a * pa + z) * out..(a * pa + z + 1) * out].copy_from_slice(&d);
                        }
                    }
                }
                t
            })
            .collect();
        FsmdpModel { reward_means, marginals }
    }

    /// Total number of recorded transitions (per the first marginal, or the
    /// first reward component when the basis is constant-only).
    pub fn total_transitions(&self) -> u64 {
        if let Some(m) = self.marginals.first() {
            m.counts.iter().sum()
        } else {
            self.rewards[0].counts.iter().sum()
        }
    }

    /// Serializable snapshot for experiment resumption.
    pub fn to_snapshot_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_snapshot_json(structure: &ProblemStructure, json: &str) -> Result<Self> {
        let state: ConfidenceState = serde_json::from_str(json)?;
        let fresh = ConfidenceState::new(structure, state.delta, state.sigma, state.c_bound)?;
        let shape_ok = state.rewards.len() == fresh.rewards.len()
            && state.marginals.len() == fresh.marginals.len()
            && state
                .rewards
                .iter()
                .zip(&fresh.rewards)
                .all(|(a, b)| a.scope == b.scope && a.counts.len() == b.counts.len())
            && state.marginals.iter().zip(&fresh.marginals).all(|(a, b)| {
                a.value_scope == b.value_scope
                    && a.parent_scope == b.parent_scope
                    && a.outcome_counts.len() == b.outcome_counts.len()
            });
        if !shape_ok {
            return Err(FsmdpError::Config(
                "snapshot does not match the problem structure".into(),
            ));
        }
        Ok(state)
    }
}
