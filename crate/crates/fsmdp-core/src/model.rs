//! The static problem description shared by every stage of the pipeline, and
//! the `(R, P)` parameter container used for both ground truth and estimates.
//!
//! Table layout conventions (used everywhere):
//! - reward component `i`: flat index `a * |Val(Z_i^R)| + rank(z)`
//! - marginal for basis `j >= 1`: flat index
//!   `(a * |Val(Pa_j)| + rank(z_pa)) * |Val(Z_j)| + rank(outcome)`

use crate::basis::{eval_value, BasisSet, WeightMatrix};
use crate::error::{FsmdpError, Result};
use crate::space::{FactoredSpace, Scope, ScopeIndexer};

/// Space + basis + reward scopes, with precomputed indexers.
#[derive(Debug, Clone)]
pub struct ProblemStructure {
    pub space: FactoredSpace,
    pub basis: BasisSet,
    pub reward_scopes: Vec<Scope>,
    value_idx: Vec<ScopeIndexer>,
    parent_idx: Vec<ScopeIndexer>,
    reward_idx: Vec<ScopeIndexer>,
}

impl ProblemStructure {
    pub fn new(space: FactoredSpace, basis: BasisSet, reward_scopes: Vec<Scope>) -> Result<Self> {
        if reward_scopes.is_empty() {
            return Err(FsmdpError::Config("at least one reward component is required".into()));
        }
        let value_idx = basis
            .funcs()
            .iter()
            .map(|f| ScopeIndexer::new(&space, &f.value_scope))
            .collect::<Result<Vec<_>>>()?;
        let parent_idx = basis
            .funcs()
            .iter()
            .map(|f| ScopeIndexer::new(&space, &f.parent_scope))
            .collect::<Result<Vec<_>>>()?;
        let reward_idx = reward_scopes
            .iter()
            .map(|z| ScopeIndexer::new(&space, z))
            .collect::<Result<Vec<_>>>()?;
        Ok(ProblemStructure {
            space,
            basis,
            reward_scopes,
            value_idx,
            parent_idx,
            reward_idx,
        })
    }

    pub fn phi(&self) -> usize {
        self.basis.len()
    }

    pub fn num_rewards(&self) -> usize {
        self.reward_scopes.len()
    }

    pub fn actions(&self) -> usize {
        self.space.action_count()
    }

    pub fn value_indexer(&self, j: usize) -> &ScopeIndexer {
        &self.value_idx[j]
    }

    pub fn parent_indexer(&self, j: usize) -> &ScopeIndexer {
        &self.parent_idx[j]
    }

    pub fn reward_indexer(&self, i: usize) -> &ScopeIndexer {
        &self.reward_idx[i]
    }

    /// Outcome count `|Val(Z_j)|` for basis `j`.
    pub fn outcomes(&self, j: usize) -> usize {
        self.value_idx[j].count() as usize
    }

    /// Parent assignment count `|Val(Pa_j)|` for basis `j`.
    pub fn parents(&self, j: usize) -> usize {
        self.parent_idx[j].count() as usize
    }

    pub fn reward_cells(&self, i: usize) -> usize {
        self.reward_idx[i].count() as usize
    }

    /// `N = |A| * sum_{j>=1} |Val(Pa_j)|`: number of distinct transition
    /// marginals tracked.
    pub fn marginal_count(&self) -> usize {
        self.actions() * (1..self.phi()).map(|j| self.parents(j)).sum::<usize>()
    }

    pub fn eval_value(&self, w: &WeightMatrix, l: usize, state: &[u32]) -> f64 {
        eval_value(&self.basis, &self.value_idx, w, l, state)
    }
}

/// Means and marginals for a concrete model: ground truth or an estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct FsmdpModel {
    /// Per reward component, `[a][z]` flattened.
    pub reward_means: Vec<Vec<f64>>,
    /// Per basis `j >= 1` (index `j - 1`), `[a][z_pa][outcome]` flattened.
    pub marginals: Vec<Vec<f64>>,
}

impl FsmdpModel {
    pub fn reward_mean(&self, structure: &ProblemStructure, i: usize, a: usize, z: usize) -> f64 {
        self.reward_means[i][a * structure.reward_cells(i) + z]
    }

    /// Marginal distribution slice for basis `j >= 1`.
    pub fn marginal(&self, structure: &ProblemStructure, j: usize, a: usize, z_pa: usize) -> &[f64] {
        let out = structure.outcomes(j);
        let base = (a * structure.parents(j) + z_pa) * out;
        &self.marginals[j - 1][base..base + out]
    }

    pub fn validate(&self, structure: &ProblemStructure) -> Result<()> {
        if self.reward_means.len() != structure.num_rewards()
            || self.marginals.len() != structure.phi().saturating_sub(1)
        {
            return Err(FsmdpError::Config("model shape does not match problem structure".into()));
        }
        for (i, t) in self.reward_means.iter().enumerate() {
            if t.len() != structure.actions() * structure.reward_cells(i) {
                return Err(FsmdpError::Config(format!("reward table {i} has wrong size")));
            }
        }
        for j in 1..structure.phi() {
            let t = &self.marginals[j - 1];
            let expect = structure.actions() * structure.parents(j) * structure.outcomes(j);
            if t.len() != expect {
                return Err(FsmdpError::Config(format!("marginal table for basis {j} has wrong size")));
            }
            for row in t.chunks(structure.outcomes(j)) {
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-9 || row.iter().any(|&p| !(0.0..=1.0 + 1e-12).contains(&p)) {
                    return Err(FsmdpError::Config(format!(
                        "marginal row for basis {j} is not a distribution (sum {s})"
                    )));
                }
            }
        }
        Ok(())
    }
}
