//! Cost networks, elimination orders, and the variable-elimination
//! constraint generator.
//!
//! For a fixed `(action, step)` the separation-oracle objective is a maximum
//! over joint states of a sum of scoped terms: optimistic rewards, the
//! `-w_j h_j(s)` value parts, and the backprojected transition parts.
//! Eliminating one state variable at a time replaces the terms that mention
//! it with a fresh variable over the residual scope, constrained from below
//! by every (residual assignment, eliminated value) combination. Minimizing
//! the sum of the surviving empty-scope variables then reproduces the state
//! maximum exactly, with constraint counts exponential only in the induced
//! width of the cost network.
//!
//! The structure of the generated system depends only on the scopes and the
//! order, so [`EliminationTemplate`] resolves it once; per-query
//! instantiation just refreshes numbers in place. The planner leans on this:
//! one template serves every `(w, step, action)` query of every episode.

use crate::basis::WeightMatrix;
use crate::error::{FsmdpError, Result};
use crate::model::ProblemStructure;
use crate::optimism::{OptimisticTables, Sign};
use crate::space::{Scope, ScopeIndexer};

/// Undirected co-occurrence graph over the state variables.
#[derive(Debug, Clone)]
pub struct CostNetwork {
    m: usize,
    adj: Vec<Vec<bool>>,
}

impl CostNetwork {
    pub fn num_vars(&self) -> usize {
        self.m
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u][v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].iter().filter(|&&e| e).count()
    }
}

/// Edge between two variables iff they appear together in some scope.
pub fn build_cost_network(m: usize, scopes: &[Scope]) -> CostNetwork {
    let mut adj = vec![vec![false; m]; m];
    for z in scopes {
        let idx = z.indices();
        for (k, &u) in idx.iter().enumerate() {
            for &v in &idx[k + 1..] {
                adj[u][v] = true;
                adj[v][u] = true;
            }
        }
    }
    CostNetwork { m, adj }
}

/// The scopes that drive elimination for a problem: reward scopes plus both
/// the value and parent scopes of every basis function.
pub fn cost_network_for(structure: &ProblemStructure) -> CostNetwork {
    let mut scopes: Vec<Scope> = structure.reward_scopes.clone();
    for f in structure.basis.funcs() {
        scopes.push(f.value_scope.clone());
        scopes.push(f.parent_scope.clone());
    }
    build_cost_network(structure.space.num_vars(), &scopes)
}

/// Simulated elimination along `order`: connect the neighbors of each
/// eliminated node and record the largest clique-minus-one seen.
pub fn induced_width(order: &[usize], network: &CostNetwork) -> Result<usize> {
    let m = network.m;
    if order.len() != m {
        return Err(FsmdpError::Config("elimination order must be a permutation".into()));
    }
    let mut seen = vec![false; m];
    for &v in order {
        if v >= m || seen[v] {
            return Err(FsmdpError::Config("elimination order must be a permutation".into()));
        }
        seen[v] = true;
    }
    let mut adj = network.adj.clone();
    let mut eliminated = vec![false; m];
    let mut width = 0;
    for &v in order {
        let nbrs: Vec<usize> = (0..m).filter(|&u| adj[v][u] && !eliminated[u]).collect();
        width = width.max(nbrs.len());
        for (k, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[k + 1..] {
                adj[a][b] = true;
                adj[b][a] = true;
            }
        }
        eliminated[v] = true;
    }
    Ok(width)
}

/// A validated permutation with its recorded induced width.
#[derive(Debug, Clone)]
pub struct EliminationOrder {
    order: Vec<usize>,
    width: usize,
}

impl EliminationOrder {
    pub fn from_permutation(order: Vec<usize>, network: &CostNetwork) -> Result<Self> {
        let width = induced_width(&order, network)?;
        Ok(EliminationOrder { order, width })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

/// Greedy min-degree ordering, ties broken by lowest index. `width_cap`
/// rejects orders whose induced width exceeds the configured bound; pass an
/// explicit order instead when that trips.
pub fn min_degree_order(network: &CostNetwork, width_cap: Option<usize>) -> Result<EliminationOrder> {
    let m = network.m;
    let mut adj = network.adj.clone();
    let mut eliminated = vec![false; m];
    let mut order = Vec::with_capacity(m);
    for _ in 0..m {
        let v = (0..m)
            .filter(|&v| !eliminated[v])
            .min_by_key(|&v| (0..m).filter(|&u| adj[v][u] && !eliminated[u]).count())
            .expect("nodes remain");
        let nbrs: Vec<usize> = (0..m).filter(|&u| adj[v][u] && !eliminated[u]).collect();
        for (k, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[k + 1..] {
                adj[a][b] = true;
                adj[b][a] = true;
            }
        }
        eliminated[v] = true;
        order.push(v);
    }
    let out = EliminationOrder::from_permutation(order, network)?;
    if let Some(cap) = width_cap {
        if out.width() > cap {
            return Err(FsmdpError::Config(format!(
                "min-degree order has induced width {} > omega_max {cap}; supply an explicit elimination order",
                out.width()
            )));
        }
    }
    Ok(out)
}

/// Which scoped term seeds a value table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedKind {
    /// Optimistic reward for component `i`.
    Reward(usize),
    /// `-w_j^(l) h_j(s[Z_j])`.
    ValuePart(usize),
    /// `w_j^(l+1) sum_s' h_j(s') P_j(s' | s[Pa_j], a)`.
    TransPart(usize),
}

#[derive(Debug, Clone)]
pub struct SeedRecord {
    pub kind: SeedKind,
    pub scope: Scope,
    pub values: Vec<f64>,
}

/// One `u_z^e >= sum of terms` row. Seed contributions are folded into
/// `constant`; `terms` reference free variables only. Provenance pins the
/// eliminated variable and its value for back-tracing.
#[derive(Debug, Clone, Copy)]
pub struct SysConstraint {
    pub var: u32,
    pub constant: f64,
    terms_start: u32,
    terms_end: u32,
    seed_terms_start: u32,
    seed_terms_end: u32,
    pub elim_var: u32,
    pub elim_value: u32,
}

#[derive(Debug, Clone, Copy)]
pub struct UVarMeta {
    /// Which elimination step created the variable.
    pub step: u32,
    /// Assignment rank within the step's residual scope.
    pub assignment: u32,
}

/// The flattened linear system produced by variable elimination.
#[derive(Debug, Clone, Default)]
pub struct ConstraintSystem {
    pub num_vars: usize,
    pub var_meta: Vec<UVarMeta>,
    pub constraints: Vec<SysConstraint>,
    term_vars: Vec<u32>,
    seed_terms: Vec<(u32, u32)>,
    /// Residual scope per elimination step.
    pub step_scopes: Vec<Scope>,
    pub step_vars: Vec<usize>,
    /// First variable id of each step.
    pub var_base: Vec<u32>,
    pub terminal_vars: Vec<u32>,
    pub terminal_constant: f64,
    pub seeds: Vec<SeedRecord>,
    structure_ready: bool,
}

impl ConstraintSystem {
    pub fn terms(&self, c: &SysConstraint) -> &[u32] {
        &self.term_vars[c.terms_start as usize..c.terms_end as usize]
    }

    pub fn seed_terms_of(&self, c: &SysConstraint) -> &[(u32, u32)] {
        &self.seed_terms[c.seed_terms_start as usize..c.seed_terms_end as usize]
    }

    /// Componentwise-minimal feasible point: each variable at the max of its
    /// own rows, swept in creation order (rows only reference earlier
    /// variables). This is an optimal LP solution, and the one on which every
    /// variable is tight somewhere, which the state back-trace needs.
    pub fn minimal_solution(&self, out: &mut Vec<f64>) -> f64 {
        out.clear();
        out.resize(self.num_vars, f64::NEG_INFINITY);
        for c in &self.constraints {
            let mut rhs = c.constant;
            for &t in self.terms(c) {
                rhs += out[t as usize];
            }
            let v = c.var as usize;
            if rhs > out[v] {
                out[v] = rhs;
            }
        }
        let mut total = self.terminal_constant;
        for &t in &self.terminal_vars {
            total += out[t as usize];
        }
        total
    }

    /// Exact optimum of `min sum(terminal u)` subject to the system.
    pub fn optimum(&self) -> f64 {
        let mut buf = Vec::new();
        self.minimal_solution(&mut buf)
    }

    /// Human-readable dump: seeds, per-step max constraints with provenance,
    /// and the terminal pool.
    pub fn render_text(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "seed functions:");
        for (i, seed) in self.seeds.iter().enumerate() {
            let label = match seed.kind {
                SeedKind::Reward(i) => format!("R~{i}"),
                SeedKind::ValuePart(j) => format!("val[h{j}]"),
                SeedKind::TransPart(j) => format!("trans[h{j}]"),
            };
            let _ = writeln!(
                s,
                "  f{i} = {label} over {:?}: {:?}",
                seed.scope.indices(),
                seed.values
            );
        }
        let _ = writeln!(s, "variables and constraints:");
        for (v, meta) in self.var_meta.iter().enumerate() {
            let scope = &self.step_scopes[meta.step as usize];
            let _ = writeln!(
                s,
                "  u{} = u^e{}_{{z={}}} over {:?}",
                v, meta.step, meta.assignment, scope.indices()
            );
        }
        for c in &self.constraints {
            let terms: Vec<String> = self
                .terms(c)
                .iter()
                .map(|t| format!("u{t}"))
                .chain(self.seed_terms_of(c).iter().map(|(f, z)| format!("f{f}[{z}]")))
                .collect();
            let _ = writeln!(
                s,
                "  u{} >= {} ({})   [var {} = {}]",
                c.var,
                c.constant,
                terms.join(" + "),
                c.elim_var,
                c.elim_value
            );
        }
        let terminals: Vec<String> = self.terminal_vars.iter().map(|v| format!("u{v}")).collect();
        let _ = writeln!(
            s,
            "objective: minimize {} + {}",
            self.terminal_constant,
            terminals.join(" + ")
        );
        s
    }
}

#[derive(Debug, Clone, Copy)]
enum FuncRef {
    Seed(usize),
    Created(usize),
}

struct TemplateStep {
    var: usize,
    card: u32,
    residual: Scope,
    residual_count: usize,
    /// Inputs with per-residual-position strides plus the eliminated
    /// variable's stride inside the input's own scope.
    inputs: Vec<(FuncRef, Vec<u64>, u64)>,
}

/// Scope resolution of the elimination run: which functions exist, what each
/// step consumes, and where each constraint's terms live.
pub struct EliminationTemplate {
    seeds: Vec<(SeedKind, Scope, usize)>,
    steps: Vec<TemplateStep>,
    terminal_created: Vec<usize>,
    terminal_seeds: Vec<usize>,
    expected_constraints: usize,
}

impl EliminationTemplate {
    pub fn new(structure: &ProblemStructure, order: &EliminationOrder) -> Result<Self> {
        let space = &structure.space;
        if order.order().len() != space.num_vars() {
            return Err(FsmdpError::Config(
                "elimination order does not cover the state variables".into(),
            ));
        }
        let mut seeds: Vec<(SeedKind, Scope, usize)> = Vec::new();
        for (i, z) in structure.reward_scopes.iter().enumerate() {
            seeds.push((SeedKind::Reward(i), z.clone(), structure.reward_cells(i)));
        }
        for j in 0..structure.phi() {
            let f = structure.basis.func(j);
            seeds.push((SeedKind::ValuePart(j), f.value_scope.clone(), structure.outcomes(j)));
            seeds.push((SeedKind::TransPart(j), f.parent_scope.clone(), structure.parents(j)));
        }

        let mut active: Vec<(Scope, FuncRef)> = seeds
            .iter()
            .enumerate()
            .filter(|(_, (_, scope, _))| !scope.is_empty())
            .map(|(i, (_, scope, _))| (scope.clone(), FuncRef::Seed(i)))
            .collect();
        let terminal_seeds: Vec<usize> = seeds
            .iter()
            .enumerate()
            .filter(|(_, (_, scope, _))| scope.is_empty())
            .map(|(i, _)| i)
            .collect();

        let mut steps = Vec::new();
        let mut terminal_created = Vec::new();
        let mut expected_constraints = 0usize;
        for &v in order.order() {
            let (relevant, rest): (Vec<_>, Vec<_>) =
                active.into_iter().partition(|(scope, _)| scope.contains(v));
            active = rest;
            if relevant.is_empty() {
                continue;
            }
            let mut residual = Scope::empty();
            for (scope, _) in &relevant {
                residual = residual.union(scope);
            }
            let residual = residual.minus(v);
            let residual_count = ScopeIndexer::new(space, &residual)?.count() as usize;
            let mut inputs = Vec::with_capacity(relevant.len());
            for (scope, fref) in &relevant {
                // strides of the input's scope, aligned to residual positions
                let mut strides = vec![0u64; residual.len()];
                let mut v_stride = 0u64;
                let mut acc = 1u64;
                for &i in scope.indices() {
                    if i == v {
                        v_stride = acc;
                    } else {
                        let pos = residual.indices().iter().position(|&q| q == i).unwrap();
                        strides[pos] = acc;
                    }
                    acc *= u64::from(space.card(i));
                }
                inputs.push((*fref, strides, v_stride));
            }
            let step_idx = steps.len();
            expected_constraints += residual_count * space.card(v) as usize;
            steps.push(TemplateStep {
                var: v,
                card: space.card(v),
                residual: residual.clone(),
                residual_count,
                inputs,
            });
            if residual.is_empty() {
                terminal_created.push(step_idx);
            } else {
                active.push((residual, FuncRef::Created(step_idx)));
            }
        }
        if !active.is_empty() {
            return Err(FsmdpError::Invariant(
                "elimination left functions with non-empty scope".into(),
            ));
        }
        Ok(EliminationTemplate {
            seeds,
            steps,
            terminal_created,
            terminal_seeds,
            expected_constraints,
        })
    }

    pub fn expected_constraint_count(&self) -> usize {
        self.expected_constraints
    }

    /// Fill `system` for one `(w, step l, action)` query. The structural part
    /// is built on first use and reused afterwards; only numbers change.
    pub fn instantiate_into(
        &self,
        system: &mut ConstraintSystem,
        structure: &ProblemStructure,
        w: &WeightMatrix,
        l: usize,
        action: usize,
        tables: &OptimisticTables,
    ) -> Result<()> {
        if l == 0 || l > w.tau() {
            return Err(FsmdpError::Config(format!("step {l} outside 1..={}", w.tau())));
        }
        if !system.structure_ready {
            self.build_structure(structure, system)?;
        }
        // refresh seed values
        for (sid, (kind, _, count)) in self.seeds.iter().enumerate() {
            let vals = &mut system.seeds[sid].values;
            debug_assert_eq!(vals.len(), *count);
            match *kind {
                SeedKind::Reward(i) => {
                    let cells = structure.reward_cells(i);
                    vals.copy_from_slice(&tables.rewards[i][action * cells..(action + 1) * cells]);
                }
                SeedKind::ValuePart(j) => {
                    let coef = -w.get(l, j);
                    for (z, slot) in vals.iter_mut().enumerate() {
                        *slot = coef * structure.basis.func(j).table[z];
                    }
                }
                SeedKind::TransPart(j) => {
                    let coef = if l == w.tau() { 0.0 } else { w.get(l + 1, j) };
                    if j == 0 {
                        vals[0] = coef;
                    } else if coef == 0.0 {
                        vals.iter_mut().for_each(|v| *v = 0.0);
                    } else {
                        let sign = Sign::of_weight(coef);
                        for (z, slot) in vals.iter_mut().enumerate() {
                            *slot = coef * tables.backprojection(structure, j, action, z, sign);
                        }
                    }
                }
            }
        }
        // refold constants
        for c in system.constraints.iter_mut() {
            let mut k = 0.0;
            for &(f, z) in
                &system.seed_terms[c.seed_terms_start as usize..c.seed_terms_end as usize]
            {
                k += system.seeds[f as usize].values[z as usize];
            }
            c.constant = k;
        }
        let mut terminal_constant = 0.0;
        for &sid in &self.terminal_seeds {
            terminal_constant += system.seeds[sid].values[0];
        }
        system.terminal_constant = terminal_constant;
        Ok(())
    }

    fn build_structure(&self, structure: &ProblemStructure, system: &mut ConstraintSystem) -> Result<()> {
        let space = &structure.space;
        *system = ConstraintSystem::default();
        for (kind, scope, count) in &self.seeds {
            system.seeds.push(SeedRecord {
                kind: *kind,
                scope: scope.clone(),
                values: vec![0.0; *count],
            });
        }
        for step in &self.steps {
            system.var_base.push(system.num_vars as u32);
            system.step_scopes.push(step.residual.clone());
            system.step_vars.push(step.var);
            for z in 0..step.residual_count {
                system.var_meta.push(UVarMeta {
                    step: (system.step_scopes.len() - 1) as u32,
                    assignment: z as u32,
                });
                system.num_vars += 1;
            }
        }
        let mut zvals: Vec<u32> = Vec::new();
        for (s, step) in self.steps.iter().enumerate() {
            let res_idx = ScopeIndexer::new(space, &step.residual)?;
            zvals.resize(step.residual.len(), 0);
            for z in 0..step.residual_count {
                res_idx.unrank_into(z as u64, &mut zvals);
                // base rank of each input at this residual assignment
                let bases: Vec<(FuncRef, u64, u64)> = step
                    .inputs
                    .iter()
                    .map(|(fref, strides, v_stride)| {
                        let base: u64 = zvals
                            .iter()
                            .zip(strides)
                            .map(|(&v, &s)| u64::from(v) * s)
                            .sum();
                        (*fref, base, *v_stride)
                    })
                    .collect();
                for value in 0..step.card {
                    let terms_start = system.term_vars.len() as u32;
                    let seed_start = system.seed_terms.len() as u32;
                    for (fref, base, v_stride) in &bases {
                        let rank = base + u64::from(value) * v_stride;
                        match fref {
                            FuncRef::Seed(i) => {
                                system.seed_terms.push((*i as u32, rank as u32));
                            }
                            FuncRef::Created(t) => {
                                system.term_vars.push(system.var_base[*t] + rank as u32);
                            }
                        }
                    }
                    system.constraints.push(SysConstraint {
                        var: system.var_base[s] + z as u32,
                        constant: 0.0,
                        terms_start,
                        terms_end: system.term_vars.len() as u32,
                        seed_terms_start: seed_start,
                        seed_terms_end: system.seed_terms.len() as u32,
                        elim_var: step.var as u32,
                        elim_value: value,
                    });
                }
            }
        }
        for &t in &self.terminal_created {
            system.terminal_vars.push(system.var_base[t]);
        }
        debug_assert_eq!(system.constraints.len(), self.expected_constraints);
        system.structure_ready = true;
        Ok(())
    }
}

/// One-shot constraint generation; the planner reuses a template instead.
pub fn generate_constraints(
    structure: &ProblemStructure,
    order: &EliminationOrder,
    w: &WeightMatrix,
    l: usize,
    action: usize,
    tables: &OptimisticTables,
) -> Result<ConstraintSystem> {
    let template = EliminationTemplate::new(structure, order)?;
    let mut system = ConstraintSystem::default();
    template.instantiate_into(&mut system, structure, w, l, action, tables)?;
    Ok(system)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scope(v: &[usize]) -> Scope {
        Scope::new(v.to_vec()).unwrap()
    }

    #[test]
    fn singleton_scopes_make_edgeless_graph() {
        let net = build_cost_network(4, &[scope(&[0]), scope(&[1]), scope(&[3])]);
        for u in 0..4 {
            for v in 0..4 {
                assert!(!net.has_edge(u, v));
            }
        }
        assert_eq!(induced_width(&[0, 1, 2, 3], &net).unwrap(), 0);
    }

    #[test]
    fn full_scope_makes_complete_graph() {
        let net = build_cost_network(3, &[scope(&[0, 1, 2])]);
        for u in 0..3 {
            for v in 0..3 {
                assert_eq!(net.has_edge(u, v), u != v);
            }
        }
    }

    #[test]
    fn chain_scopes_make_path() {
        let net = build_cost_network(3, &[scope(&[0, 1]), scope(&[1, 2])]);
        assert!(net.has_edge(0, 1) && net.has_edge(1, 2) && !net.has_edge(0, 2));
        // endpoint-first elimination keeps width 1
        assert_eq!(induced_width(&[0, 2, 1], &net).unwrap(), 1);
        // middle-first forces a clique on the endpoints, still width 2 max
        assert_eq!(induced_width(&[1, 0, 2], &net).unwrap(), 2);
    }

    #[test]
    fn four_cycle_width_two_for_every_order() {
        let net = build_cost_network(
            4,
            &[scope(&[0, 1]), scope(&[1, 2]), scope(&[2, 3]), scope(&[0, 3])],
        );
        // exhaustive over all 24 orders
        let mut orders = Vec::new();
        let mut perm = [0usize, 1, 2, 3];
        permute(&mut perm, 0, &mut orders);
        for o in orders {
            assert_eq!(induced_width(&o, &net).unwrap(), 2);
        }
    }

    fn permute(p: &mut [usize; 4], k: usize, out: &mut Vec<[usize; 4]>) {
        if k == 4 {
            out.push(*p);
            return;
        }
        for i in k..4 {
            p.swap(k, i);
            permute(p, k + 1, out);
            p.swap(k, i);
        }
    }

    #[test]
    fn min_degree_on_star_and_path() {
        let star = build_cost_network(4, &[scope(&[0, 3]), scope(&[1, 3]), scope(&[2, 3])]);
        let o = min_degree_order(&star, None).unwrap();
        assert_eq!(o.width(), 1);
        assert_eq!(o.order()[3], 3, "hub eliminated last");
        let path = build_cost_network(4, &[scope(&[0, 1]), scope(&[1, 2]), scope(&[2, 3])]);
        assert_eq!(min_degree_order(&path, None).unwrap().width(), 1);
        assert!(min_degree_order(&path, Some(0)).is_err());
    }

    #[test]
    fn min_degree_width_at_least_exact_treewidth() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..30 {
            let m = rng.gen_range(3..=7usize);
            let mut scopes = Vec::new();
            for _ in 0..rng.gen_range(2..6) {
                let a = rng.gen_range(0..m);
                let b = rng.gen_range(0..m);
                if a != b {
                    scopes.push(Scope::new(vec![a, b]).unwrap());
                }
            }
            let net = build_cost_network(m, &scopes);
            let greedy = min_degree_order(&net, None).unwrap();
            // exact treewidth: min induced width over all permutations
            let mut best = usize::MAX;
            let mut perm: Vec<usize> = (0..m).collect();
            loop {
                best = best.min(induced_width(&perm, &net).unwrap());
                if !next_permutation(&mut perm) {
                    break;
                }
            }
            assert!(greedy.width() >= best);
        }
    }

    fn next_permutation(p: &mut [usize]) -> bool {
        let n = p.len();
        if n < 2 {
            return false;
        }
        let mut i = n - 1;
        while i > 0 && p[i - 1] >= p[i] {
            i -= 1;
        }
        if i == 0 {
            return false;
        }
        let mut j = n - 1;
        while p[j] <= p[i - 1] {
            j -= 1;
        }
        p.swap(i - 1, j);
        p[i..].reverse();
        true
    }
}
