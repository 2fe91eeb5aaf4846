//! Basis functions for factored linear value functions, and per-step weight
//! matrices.
//!
//! A value function is `V_l(s) = sum_j w_j^(l) h_j(s[Z_j])` where each `h_j`
//! is a table over its value scope. Basis index 0 is reserved for the
//! constant function `h_0 == 1` (empty scopes), which keeps the planning LP
//! feasible. Each non-constant basis function also carries a parent scope:
//! the state variables its next-step marginal conditions on.

use crate::error::{FsmdpError, Result};
use crate::space::{FactoredSpace, ScopeIndexer, Scope};
use serde::{Deserialize, Serialize};

/// A table-valued basis function `h_j : Val(Z_j) -> R` with its parent scope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisFunction {
    pub value_scope: Scope,
    pub parent_scope: Scope,
    /// One value per assignment of `value_scope`, in canonical rank order.
    pub table: Vec<f64>,
}

/// The full basis, index 0 being `h_0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisSet {
    funcs: Vec<BasisFunction>,
    /// Declared bound `G` on `|h_j|`.
    bound: f64,
}

impl BasisSet {
    pub fn new(space: &FactoredSpace, funcs: Vec<BasisFunction>, bound: f64) -> Result<Self> {
        if funcs.is_empty() {
            return Err(FsmdpError::Config("basis must contain h_0".into()));
        }
        let h0 = &funcs[0];
        if !h0.value_scope.is_empty()
            || !h0.parent_scope.is_empty()
            || h0.table.len() != 1
            || (h0.table[0] - 1.0).abs() > 1e-12
        {
            return Err(FsmdpError::Config(
                "basis index 0 must be the constant function h_0 == 1 with empty scopes".into(),
            ));
        }
        if !(bound.is_finite() && bound >= 1.0) {
            return Err(FsmdpError::Config(format!(
                "basis bound G must be finite and >= 1 (h_0 attains 1), got {bound}"
            )));
        }
        for (j, f) in funcs.iter().enumerate() {
            f.value_scope.validate_for(space)?;
            f.parent_scope.validate_for(space)?;
            if j > 0 && f.value_scope.is_empty() {
                return Err(FsmdpError::Config(format!(
                    "basis function {j} has an empty value scope; only h_0 may be constant"
                )));
            }
            let expect = ScopeIndexer::new(space, &f.value_scope)?.count();
            if f.table.len() as u64 != expect {
                return Err(FsmdpError::Config(format!(
                    "basis function {j}: table has {} entries, scope needs {expect}",
                    f.table.len()
                )));
            }
            if let Some(&v) = f.table.iter().find(|v| !v.is_finite() || v.abs() > bound + 1e-12) {
                return Err(FsmdpError::Config(format!(
                    "basis function {j}: entry {v} exceeds declared bound G = {bound}"
                )));
            }
        }
        Ok(BasisSet { funcs, bound })
    }

    pub fn len(&self) -> usize {
        self.funcs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn func(&self, j: usize) -> &BasisFunction {
        &self.funcs[j]
    }

    pub fn funcs(&self) -> &[BasisFunction] {
        &self.funcs
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }
}

/// Per-step linear value weights `w^(l)_j`, `l = 1..=tau+1`. The row for
/// `tau + 1` is structurally zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    tau: usize,
    phi: usize,
    /// Row-major `(tau+1) x phi`; the last row stays zero.
    w: Vec<f64>,
    /// Per-step l1 budget `W`.
    bound: f64,
}

impl WeightMatrix {
    pub fn zeros(tau: usize, phi: usize, bound: f64) -> Self {
        WeightMatrix {
            tau,
            phi,
            w: vec![0.0; (tau + 1) * phi],
            bound,
        }
    }

    /// Build from the free block (`tau * phi` entries, step-major); the
    /// `tau+1` row is implicitly zero.
    pub fn from_flat(tau: usize, phi: usize, bound: f64, free: &[f64]) -> Result<Self> {
        if free.len() != tau * phi {
            return Err(FsmdpError::Config(format!(
                "weight vector has {} entries, expected tau*phi = {}",
                free.len(),
                tau * phi
            )));
        }
        let mut w = vec![0.0; (tau + 1) * phi];
        w[..tau * phi].copy_from_slice(free);
        Ok(WeightMatrix { tau, phi, w, bound })
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn phi(&self) -> usize {
        self.phi
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// `w^(l)_j` with `l` in `1..=tau+1`.
    #[inline]
    pub fn get(&self, l: usize, j: usize) -> f64 {
        debug_assert!((1..=self.tau + 1).contains(&l));
        self.w[(l - 1) * self.phi + j]
    }

    /// Set `w^(l)_j` for `l <= tau`; the `tau+1` row is pinned at zero.
    pub fn set(&mut self, l: usize, j: usize, value: f64) -> Result<()> {
        if l == 0 || l > self.tau {
            return Err(FsmdpError::Config(format!(
                "weight step {l} out of range 1..={} (the tau+1 row is fixed at zero)",
                self.tau
            )));
        }
        self.w[(l - 1) * self.phi + j] = value;
        Ok(())
    }

    pub fn row(&self, l: usize) -> &[f64] {
        &self.w[(l - 1) * self.phi..l * self.phi]
    }

    /// The free coordinates (steps `1..=tau`), step-major.
    pub fn flat_free(&self) -> &[f64] {
        &self.w[..self.tau * self.phi]
    }

    pub fn step_l1(&self, l: usize) -> f64 {
        self.row(l).iter().map(|v| v.abs()).sum()
    }
}

/// `V_l(s)` for a full state; zero at step `tau + 1` regardless of storage.
pub fn eval_value(
    basis: &BasisSet,
    indexers: &[ScopeIndexer],
    w: &WeightMatrix,
    l: usize,
    state: &[u32],
) -> f64 {
    if l == w.tau() + 1 {
        return 0.0;
    }
    let mut v = 0.0;
    for (j, f) in basis.funcs().iter().enumerate() {
        let r = indexers[j].rank_of_state(state) as usize;
        v += w.get(l, j) * f.table[r];
    }
    v
}
