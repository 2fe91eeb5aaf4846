//! Factored state spaces, scopes, and assignment enumeration.
//!
//! A state is a vector of `m` discrete variables, variable `i` taking values
//! in `0..card(i)`. A [`Scope`] is a sorted subset of variable indices, and an
//! [`Assignment`] is a value vector over a scope. Assignments are ranked in
//! canonical mixed-radix order with the *lowest* scope index as the
//! fastest-varying digit, so `rank`/`unrank` are bijective and table layouts
//! are reproducible.

use crate::error::{FsmdpError, Result};
use serde::{Deserialize, Serialize};

/// The variable universe: per-variable cardinalities plus the action count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactoredSpace {
    cards: Vec<u32>,
    action_count: usize,
}

impl FactoredSpace {
    pub fn new(cards: Vec<u32>, action_count: usize) -> Result<Self> {
        if cards.is_empty() {
            return Err(FsmdpError::Config("state space needs at least one variable".into()));
        }
        if let Some(&c) = cards.iter().find(|&&c| c < 2) {
            return Err(FsmdpError::Config(format!(
                "every state variable needs cardinality >= 2, got {c}"
            )));
        }
        if action_count == 0 {
            return Err(FsmdpError::Config("action count must be >= 1".into()));
        }
        Ok(FactoredSpace { cards, action_count })
    }

    pub fn num_vars(&self) -> usize {
        self.cards.len()
    }

    pub fn card(&self, var: usize) -> u32 {
        self.cards[var]
    }

    pub fn cards(&self) -> &[u32] {
        &self.cards
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    /// Total joint size `prod_i card(i)`, overflow-checked. Brute-force paths
    /// refuse to run when this errors; learner paths never need it.
    pub fn joint_size(&self) -> Result<u64> {
        let mut n: u64 = 1;
        for &c in &self.cards {
            n = n
                .checked_mul(u64::from(c))
                .ok_or_else(|| FsmdpError::ScaleExceeded("joint state space overflows u64".into()))?;
        }
        Ok(n)
    }

    pub fn full_scope(&self) -> Scope {
        Scope::new((0..self.num_vars()).collect()).expect("full scope is always valid")
    }

    /// Iterate all joint states in canonical rank order. Errors if the joint
    /// size exceeds `limit`.
    pub fn enumerate_states(&self, limit: u64) -> Result<Vec<Vec<u32>>> {
        let n = self.joint_size()?;
        if n > limit {
            return Err(FsmdpError::ScaleExceeded(format!(
                "joint size {n} exceeds enumeration limit {limit}"
            )));
        }
        let full = self.full_scope();
        let idx = ScopeIndexer::new(self, &full)?;
        let mut out = Vec::with_capacity(n as usize);
        let mut buf = vec![0u32; self.num_vars()];
        for r in 0..n {
            idx.unrank_into(r, &mut buf);
            out.push(buf.clone());
        }
        Ok(out)
    }
}

/// A sorted, duplicate-free subset of state-variable indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Scope {
    indices: Vec<usize>,
}

impl Scope {
    /// Build a scope from indices; they must be strictly increasing after
    /// sorting (duplicates rejected).
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(FsmdpError::Config("scope contains duplicate variable indices".into()));
        }
        Ok(Scope { indices })
    }

    pub fn empty() -> Self {
        Scope { indices: Vec::new() }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, var: usize) -> bool {
        self.indices.binary_search(&var).is_ok()
    }

    pub fn union(&self, other: &Scope) -> Scope {
        let mut v = self.indices.clone();
        v.extend_from_slice(&other.indices);
        v.sort_unstable();
        v.dedup();
        Scope { indices: v }
    }

    pub fn minus(&self, var: usize) -> Scope {
        Scope {
            indices: self.indices.iter().copied().filter(|&i| i != var).collect(),
        }
    }

    pub fn validate_for(&self, space: &FactoredSpace) -> Result<()> {
        match self.indices.last() {
            Some(&i) if i >= space.num_vars() => Err(FsmdpError::Config(format!(
                "scope index {i} out of range for {} variables",
                space.num_vars()
            ))),
            _ => Ok(()),
        }
    }
}

/// A value per scope index, paired with the scope itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub scope: Scope,
    pub values: Vec<u32>,
}

/// Precomputed strides for ranking assignments of one scope. The lowest scope
/// index is the fastest-varying digit.
#[derive(Debug, Clone)]
pub struct ScopeIndexer {
    scope: Scope,
    cards: Vec<u32>,
    strides: Vec<u64>,
    count: u64,
}

impl ScopeIndexer {
    pub fn new(space: &FactoredSpace, scope: &Scope) -> Result<Self> {
        scope.validate_for(space)?;
        let mut strides = Vec::with_capacity(scope.len());
        let mut cards = Vec::with_capacity(scope.len());
        let mut acc: u64 = 1;
        for &i in scope.indices() {
            strides.push(acc);
            cards.push(space.card(i));
            acc = acc.checked_mul(u64::from(space.card(i))).ok_or_else(|| {
                FsmdpError::ScaleExceeded("scope assignment count overflows u64".into())
            })?;
        }
        Ok(ScopeIndexer {
            scope: scope.clone(),
            cards,
            strides,
            count: acc,
        })
    }

    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    /// Number of assignments `|Val(Z)|`.
    pub fn count(&self) -> u64 {
        self.count
    }

    /// Rank of the projection of a full state onto this scope.
    #[inline]
    pub fn rank_of_state(&self, state: &[u32]) -> u64 {
        let mut r = 0u64;
        for (k, &i) in self.scope.indices().iter().enumerate() {
            r += u64::from(state[i]) * self.strides[k];
        }
        r
    }

    /// Rank of an in-scope value vector.
    #[inline]
    pub fn rank_of_values(&self, values: &[u32]) -> u64 {
        debug_assert_eq!(values.len(), self.scope.len());
        values
            .iter()
            .zip(&self.strides)
            .map(|(&v, &s)| u64::from(v) * s)
            .sum()
    }

    /// Inverse of [`rank_of_values`]: writes the value vector for `rank`.
    pub fn unrank_into(&self, rank: u64, out: &mut [u32]) {
        debug_assert!(rank < self.count.max(1));
        let mut r = rank;
        for (k, &c) in self.cards.iter().enumerate() {
            out[k] = (r % u64::from(c)) as u32;
            r /= u64::from(c);
        }
    }

    pub fn unrank(&self, rank: u64) -> Vec<u32> {
        let mut v = vec![0u32; self.scope.len()];
        self.unrank_into(rank, &mut v);
        v
    }
}

/// All assignments of `scope`, in canonical rank order.
pub fn enumerate_assignments(space: &FactoredSpace, scope: &Scope) -> Result<Vec<Assignment>> {
    let idx = ScopeIndexer::new(space, scope)?;
    let mut out = Vec::with_capacity(idx.count() as usize);
    for r in 0..idx.count() {
        out.push(Assignment {
            scope: scope.clone(),
            values: idx.unrank(r),
        });
    }
    Ok(out)
}

/// Restrict a full state to `scope`, order-preserving. Total: never fails for
/// a state covering all variables.
pub fn project(state: &[u32], scope: &Scope) -> Vec<u32> {
    scope.indices().iter().map(|&i| state[i]).collect()
}

/// `g(Z) = prod_{i not in Z} card(i)`: how many joint states share one
/// assignment of `Z`. Overflow reports a brute-force scale error.
pub fn counting_factor(space: &FactoredSpace, value_scope: &Scope) -> Result<u64> {
    value_scope.validate_for(space)?;
    let mut g: u64 = 1;
    for i in 0..space.num_vars() {
        if !value_scope.contains(i) {
            g = g.checked_mul(u64::from(space.card(i))).ok_or_else(|| {
                FsmdpError::ScaleExceeded("brute-force scale exceeded computing counting factor".into())
            })?;
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn space(cards: &[u32]) -> FactoredSpace {
        FactoredSpace::new(cards.to_vec(), 2).unwrap()
    }

    #[test]
    fn empty_scope_yields_single_assignment() {
        let sp = space(&[2, 2, 2]);
        let a = enumerate_assignments(&sp, &Scope::empty()).unwrap();
        assert_eq!(a.len(), 1);
        assert!(a[0].values.is_empty());
    }

    #[test]
    fn binary_pair_enumeration() {
        let sp = space(&[2, 3, 2]);
        let z = Scope::new(vec![0, 2]).unwrap();
        let a = enumerate_assignments(&sp, &z).unwrap();
        // lowest index (var 0) is the fastest-varying digit
        let vals: Vec<Vec<u32>> = a.into_iter().map(|x| x.values).collect();
        assert_eq!(vals, vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![1, 1]]);
    }

    #[test]
    fn single_ternary_variable() {
        let sp = space(&[2, 3, 2]);
        let z = Scope::new(vec![1]).unwrap();
        assert_eq!(enumerate_assignments(&sp, &z).unwrap().len(), 3);
    }

    #[test]
    fn projection_examples() {
        let z = Scope::new(vec![0, 2]).unwrap();
        assert_eq!(project(&[1, 0, 1], &z), vec![1, 1]);
        let full = Scope::new(vec![0, 1, 2]).unwrap();
        assert_eq!(project(&[1, 0, 1], &full), vec![1, 0, 1]);
        assert_eq!(project(&[1, 0, 1], &Scope::empty()), Vec::<u32>::new());
    }

    #[test]
    fn counting_factor_examples() {
        let sp = space(&[2, 2, 2]);
        assert_eq!(counting_factor(&sp, &Scope::new(vec![0]).unwrap()).unwrap(), 4);
        assert_eq!(counting_factor(&sp, &sp.full_scope()).unwrap(), 1);
        let sp4 = space(&[2, 3, 2, 2]);
        assert_eq!(counting_factor(&sp4, &Scope::new(vec![1]).unwrap()).unwrap(), 8);
    }

    #[test]
    fn bad_scope_rejected() {
        assert!(Scope::new(vec![1, 1]).is_err());
        let sp = space(&[2, 2]);
        let z = Scope::new(vec![5]).unwrap();
        assert!(matches!(
            enumerate_assignments(&sp, &z),
            Err(FsmdpError::Config(_))
        ));
    }

    #[test]
    fn cardinality_one_rejected() {
        assert!(FactoredSpace::new(vec![2, 1], 2).is_err());
        assert!(FactoredSpace::new(vec![2, 2], 0).is_err());
    }

    proptest! {
        // Rank/unrank bijection for scopes up to size 12 over mixed radices.
        #[test]
        fn rank_unrank_roundtrip(cards in proptest::collection::vec(2u32..5, 1..12), seed in any::<u64>()) {
            let m = cards.len();
            let sp = FactoredSpace::new(cards, 2).unwrap();
            // pseudo-random sub-scope from the seed
            let idxs: Vec<usize> = (0..m).filter(|i| (seed >> (i % 64)) & 1 == 1).collect();
            let z = Scope::new(idxs).unwrap();
            let indexer = ScopeIndexer::new(&sp, &z).unwrap();
            for r in 0..indexer.count().min(256) {
                let vals = indexer.unrank(r);
                prop_assert_eq!(indexer.rank_of_values(&vals), r);
            }
        }
    }
}
