//! Optimistic parameters: reward bonuses and the greedy L1-ball transition
//! optimization.
//!
//! The transition routine sorts outcomes by basis value (descending for a
//! nonnegative weight, ascending for a negative one; ties by canonical
//! assignment rank), boosts the top outcome by half the confidence width,
//! then walks from the bottom of the order truncating mass until the result
//! is a distribution again. That vertex maximizes `sign * sum_s h(s) P(s)`
//! over the L1 ball around the empirical estimate intersected with the
//! simplex.
//!
//! Tables are built once per episode and are a pure function of the frozen
//! confidence state: optimistic rewards do not depend on the query weights at
//! all, and transitions only through the weight signs, so storing both
//! orderings per marginal is enough for every later oracle call.

use crate::error::Result;
use crate::estimation::ConfidenceState;
use crate::model::{FsmdpModel, ProblemStructure};
use serde::{Deserialize, Serialize};

/// Which ordering a marginal was optimized for. Zero weights count as
/// nonnegative so the pick is deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    #[inline]
    pub fn of_weight(w: f64) -> Sign {
        if w < 0.0 {
            Sign::Minus
        } else {
            Sign::Plus
        }
    }
}

/// Table-building switches surfaced in the experiment config.
#[derive(Debug, Clone, Copy)]
pub struct OptimismFlags {
    /// Clip optimistic reward means at `C` (the default; the unclipped
    /// variant is exposed for comparison runs).
    pub clip_reward: bool,
}

impl Default for OptimismFlags {
    fn default() -> Self {
        OptimismFlags { clip_reward: true }
    }
}

/// Precomputed optimistic parameters for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimisticTables {
    /// Per reward component, flat `[a][z]`.
    pub rewards: Vec<Vec<f64>>,
    /// Per basis `j >= 1`, flat `[a][z_pa][outcome]`, one table per sign.
    pub marginal_plus: Vec<Vec<f64>>,
    pub marginal_minus: Vec<Vec<f64>>,
    /// Backprojections `sum_s h_j(s) P_j(s | z_pa, a)`, flat `[a][z_pa]`.
    pub backproj_plus: Vec<Vec<f64>>,
    pub backproj_minus: Vec<Vec<f64>>,
}

impl OptimisticTables {
    #[inline]
    pub fn reward(&self, structure: &ProblemStructure, i: usize, a: usize, z: usize) -> f64 {
        self.rewards[i][a * structure.reward_cells(i) + z]
    }

    #[inline]
    pub fn marginal(
        &self,
        structure: &ProblemStructure,
        j: usize,
        a: usize,
        z_pa: usize,
        sign: Sign,
    ) -> &[f64] {
        let out = structure.outcomes(j);
        let base = (a * structure.parents(j) + z_pa) * out;
        let t = match sign {
            Sign::Plus => &self.marginal_plus[j - 1],
            Sign::Minus => &self.marginal_minus[j - 1],
        };
        &t[base..base + out]
    }

    /// `sum_s h_j(s) P_j(s | z_pa, a)` for the stored sign-variant.
    #[inline]
    pub fn backprojection(
        &self,
        structure: &ProblemStructure,
        j: usize,
        a: usize,
        z_pa: usize,
        sign: Sign,
    ) -> f64 {
        let t = match sign {
            Sign::Plus => &self.backproj_plus[j - 1],
            Sign::Minus => &self.backproj_minus[j - 1],
        };
        t[a * structure.parents(j) + z_pa]
    }

    /// Zero-width tables: exact parameters of a known model. Both sign
    /// variants coincide with the model's marginals.
    pub fn exact_from_model(structure: &ProblemStructure, model: &FsmdpModel) -> Result<Self> {
        model.validate(structure)?;
        let rewards = model.reward_means.clone();
        let marginal_plus = model.marginals.clone();
        let marginal_minus = model.marginals.clone();
        let mut backproj_plus = Vec::new();
        for j in 1..structure.phi() {
            let h = &structure.basis.func(j).table;
            let out = structure.outcomes(j);
            let bp: Vec<f64> = model.marginals[j - 1]
                .chunks(out)
                .map(|p| p.iter().zip(h).map(|(p, h)| p * h).sum())
                .collect();
            backproj_plus.push(bp);
        }
        let backproj_minus = backproj_plus.clone();
        Ok(OptimisticTables {
            rewards,
            marginal_plus,
            marginal_minus,
            backproj_plus,
            backproj_minus,
        })
    }
}

/// The sorted boost-and-truncate step on one marginal.
///
/// `half_width` is half the L1 budget; `None` for `empirical` means the cell
/// is unvisited, which gets the maximally optimistic point mass.
pub fn optimize_marginal(
    empirical: Option<&[f64]>,
    half_width: f64,
    h: &[f64],
    sign: Sign,
) -> Vec<f64> {
    let k = h.len();
    let mut order: Vec<usize> = (0..k).collect();
    match sign {
        Sign::Plus => order.sort_by(|&a, &b| h[b].partial_cmp(&h[a]).unwrap().then(a.cmp(&b))),
        Sign::Minus => order.sort_by(|&a, &b| h[a].partial_cmp(&h[b]).unwrap().then(a.cmp(&b))),
    }
    let mut p = match empirical {
        None => {
            let mut p = vec![0.0; k];
            p[order[0]] = 1.0;
            return p;
        }
        Some(e) => e.to_vec(),
    };
    p[order[0]] = (p[order[0]] + half_width).min(1.0);
    let mut total: f64 = p.iter().sum();
    let mut i = k;
    while total > 1.0 && i > 1 {
        i -= 1;
        let idx = order[i];
        let others = total - p[idx];
        let new = (1.0 - others).max(0.0);
        total = others + new;
        p[idx] = new;
    }
    p
}

/// Optimistic reward mean for one cell: empirical plus `sqrt(d/n)`, clipped
/// at `C` (unvisited cells get `C` outright).
pub fn optimistic_reward(
    structure: &ProblemStructure,
    conf: &ConfidenceState,
    i: usize,
    a: usize,
    z: usize,
    flags: OptimismFlags,
) -> f64 {
    optimistic_reward_with_width(structure, conf, i, a, z, conf.reward_width(i), flags)
}

fn optimistic_reward_with_width(
    _structure: &ProblemStructure,
    conf: &ConfidenceState,
    i: usize,
    a: usize,
    z: usize,
    width: f64,
    flags: OptimismFlags,
) -> f64 {
    let n = conf.reward_count(i, a, z);
    if n == 0 {
        return conf.c_bound();
    }
    let value = conf.empirical_reward(i, a, z).unwrap() + (width / n as f64).sqrt();
    if flags.clip_reward {
        value.min(conf.c_bound())
    } else {
        value
    }
}

/// Optimistic marginal for one cell at the frozen episode width.
pub fn optimistic_marginal(
    structure: &ProblemStructure,
    conf: &ConfidenceState,
    j: usize,
    a: usize,
    z_pa: usize,
    sign: Sign,
) -> Vec<f64> {
    let h = &structure.basis.func(j).table;
    let emp = conf.empirical_marginal(j, a, z_pa);
    let hw = match conf.marginal_visits(j, a, z_pa) {
        0 => 0.0,
        n => 0.5 * (conf.marginal_width(j) / n as f64).sqrt(),
    };
    optimize_marginal(emp.as_deref(), hw, h, sign)
}

/// Build every reward entry and both sign-variants of every marginal for the
/// confidence state's current episode.
pub fn build_tables(
    structure: &ProblemStructure,
    conf: &ConfidenceState,
    flags: OptimismFlags,
) -> OptimisticTables {
    build_tables_scaled(structure, conf, flags, 1.0)
}

/// Same, with every width multiplied by `width_scale` (used by nested-width
/// monotonicity checks).
pub fn build_tables_scaled(
    structure: &ProblemStructure,
    conf: &ConfidenceState,
    flags: OptimismFlags,
    width_scale: f64,
) -> OptimisticTables {
    let actions = structure.actions();
    let rewards = (0..structure.num_rewards())
        .map(|i| {
            let z_count = structure.reward_cells(i);
            let width = conf.reward_width(i) * width_scale;
            let mut t = Vec::with_capacity(actions * z_count);
            for a in 0..actions {
                for z in 0..z_count {
                    t.push(optimistic_reward_with_width(structure, conf, i, a, z, width, flags));
                }
            }
            t
        })
        .collect();
    let mut marginal_plus = Vec::new();
    let mut marginal_minus = Vec::new();
    let mut backproj_plus = Vec::new();
    let mut backproj_minus = Vec::new();
    for j in 1..structure.phi() {
        let h = &structure.basis.func(j).table;
        let out = structure.outcomes(j);
        let pa_count = structure.parents(j);
        let width = conf.marginal_width(j) * width_scale;
        let mut plus = Vec::with_capacity(actions * pa_count * out);
        let mut minus = Vec::with_capacity(actions * pa_count * out);
        let mut bp_plus = Vec::with_capacity(actions * pa_count);
        let mut bp_minus = Vec::with_capacity(actions * pa_count);
        for a in 0..actions {
            for z in 0..pa_count {
                let emp = conf.empirical_marginal(j, a, z);
                let hw = match conf.marginal_visits(j, a, z) {
                    0 => 0.0,
                    n => 0.5 * (width / n as f64).sqrt(),
                };
                let p = optimize_marginal(emp.as_deref(), hw, h, Sign::Plus);
                let m = optimize_marginal(emp.as_deref(), hw, h, Sign::Minus);
                bp_plus.push(p.iter().zip(h).map(|(p, h)| p * h).sum());
                bp_minus.push(m.iter().zip(h).map(|(p, h)| p * h).sum());
                plus.extend(p);
                minus.extend(m);
            }
        }
        marginal_plus.push(plus);
        marginal_minus.push(minus);
        backproj_plus.push(bp_plus);
        backproj_minus.push(bp_minus);
    }
    OptimisticTables {
        rewards,
        marginal_plus,
        marginal_minus,
        backproj_plus,
        backproj_minus,
    }
}
