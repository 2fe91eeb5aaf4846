//! Dense revised simplex for standard-form problems:
//! `min c.x  s.t.  A x = b, x >= 0`.
//!
//! Two phases with artificial variables, Bland's rule throughout
//! (lowest-index entering column, lowest-index leaving variable among ratio
//! ties) so cycling cannot occur, and an explicit basis inverse updated by
//! eta pivots. Sized for the small systems variable elimination produces and
//! for the desk-scale exhaustive planning LP; not a general-purpose solver.

use crate::error::{FsmdpError, Result};

pub const PIVOT_TOL: f64 = 1e-9;

/// Reusable buffers; callers in hot loops keep one of these alive.
#[derive(Debug, Default, Clone)]
pub struct SimplexScratch {
    binv: Vec<f64>,
    xb: Vec<f64>,
    y: Vec<f64>,
    u: Vec<f64>,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    b: Vec<f64>,
    a: Vec<f64>,
    cost: Vec<f64>,
}

/// Minimize `c.x` subject to `A x = b`, `x >= 0`; `a` is row-major
/// `rows x cols`. Writes the primal solution into `x_out` and returns the
/// optimal value.
pub fn minimize_standard(
    rows: usize,
    cols: usize,
    a: &[f64],
    b: &[f64],
    c: &[f64],
    scratch: &mut SimplexScratch,
    x_out: &mut Vec<f64>,
) -> Result<f64> {
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert_eq!(b.len(), rows);
    debug_assert_eq!(c.len(), cols);
    if rows == 0 {
        // nothing constrains x; the only bounded case is c >= 0 with x = 0
        if c.iter().any(|&cj| cj < -PIVOT_TOL) {
            return Err(FsmdpError::Solver("unbounded: empty constraint set".into()));
        }
        x_out.clear();
        x_out.resize(cols, 0.0);
        return Ok(0.0);
    }

    let total = cols + rows; // structurals then artificials
    scratch.a.clear();
    scratch.a.reserve(rows * total);
    scratch.b.clear();
    scratch.b.extend_from_slice(b);
    // flip rows so b >= 0, artificials start as a feasible identity basis
    for r in 0..rows {
        let flip = scratch.b[r] < 0.0;
        if flip {
            scratch.b[r] = -scratch.b[r];
        }
        for j in 0..cols {
            let v = a[r * cols + j];
            scratch.a.push(if flip { -v } else { v });
        }
        for k in 0..rows {
            let v = if k == r { 1.0 } else { 0.0 };
            scratch.a.push(v);
        }
    }

    scratch.binv.clear();
    scratch.binv.resize(rows * rows, 0.0);
    for r in 0..rows {
        scratch.binv[r * rows + r] = 1.0;
    }
    scratch.basis.clear();
    scratch.basis.extend(cols..total);
    scratch.in_basis.clear();
    scratch.in_basis.resize(total, false);
    for j in cols..total {
        scratch.in_basis[j] = true;
    }
    scratch.xb.clear();
    scratch.xb.extend_from_slice(&scratch.b);

    let budget = 200 + 50 * (rows + cols);

    // phase 1: drive artificial mass to zero
    scratch.cost.clear();
    scratch.cost.resize(total, 0.0);
    for j in cols..total {
        scratch.cost[j] = 1.0;
    }
    run_phase(rows, total, scratch, total, budget)?;
    let infeas: f64 = (0..rows)
        .filter(|&r| scratch.basis[r] >= cols)
        .map(|r| scratch.xb[r])
        .sum();
    if infeas > 1e-7 {
        return Err(FsmdpError::Solver(format!(
            "phase-1 ended with artificial mass {infeas}: system infeasible"
        )));
    }

    // phase 2 with real costs; artificials may linger basic at zero but may
    // not re-enter
    scratch.cost.clear();
    scratch.cost.extend_from_slice(c);
    scratch.cost.resize(total, 0.0);
    run_phase(rows, total, scratch, cols, budget)?;

    x_out.clear();
    x_out.resize(cols, 0.0);
    let mut value = 0.0;
    for r in 0..rows {
        let j = scratch.basis[r];
        if j < cols {
            x_out[j] = scratch.xb[r];
            value += c[j] * scratch.xb[r];
        }
    }
    Ok(value)
}

/// Bland-rule simplex iterations on the current scratch state. `enter_limit`
/// restricts entering candidates to columns `< enter_limit`.
fn run_phase(
    rows: usize,
    total: usize,
    s: &mut SimplexScratch,
    enter_limit: usize,
    budget: usize,
) -> Result<()> {
    for _ in 0..budget {
        // y = c_B B^-1
        s.y.clear();
        s.y.resize(rows, 0.0);
        for r in 0..rows {
            let cb = s.cost[s.basis[r]];
            if cb != 0.0 {
                for k in 0..rows {
                    s.y[k] += cb * s.binv[r * rows + k];
                }
            }
        }
        // Bland: first column with negative reduced cost
        let mut entering = None;
        for j in 0..enter_limit {
            if s.in_basis[j] {
                continue;
            }
            let mut d = s.cost[j];
            for k in 0..rows {
                d -= s.y[k] * s.a[k * total + j];
            }
            if d < -PIVOT_TOL {
                entering = Some(j);
                break;
            }
        }
        let Some(j) = entering else {
            return Ok(());
        };
        // u = B^-1 a_j
        s.u.clear();
        s.u.resize(rows, 0.0);
        for r in 0..rows {
            let mut acc = 0.0;
            for k in 0..rows {
                acc += s.binv[r * rows + k] * s.a[k * total + j];
            }
            s.u[r] = acc;
        }
        // guard: a lingering basic artificial at zero whose direction
        // coefficient is negative would drift positive; pivot it out with a
        // zero-length step (negative pivot element is valid algebra here)
        let mut leave: Option<usize> = None;
        if enter_limit < total {
            for r in 0..rows {
                if s.basis[r] >= enter_limit && s.xb[r] <= PIVOT_TOL && s.u[r] < -PIVOT_TOL {
                    s.xb[r] = 0.0;
                    leave = Some(r);
                    break;
                }
            }
        }
        let r = match leave {
            Some(r) => r,
            None => {
                let mut best: Option<(f64, usize, usize)> = None; // ratio, basis var, row
                for r in 0..rows {
                    if s.u[r] > PIVOT_TOL {
                        let ratio = s.xb[r] / s.u[r];
                        let key = (ratio, s.basis[r]);
                        match best {
                            Some((br, bv, _)) if (br, bv) <= key => {}
                            _ => best = Some((ratio, s.basis[r], r)),
                        }
                    }
                }
                match best {
                    Some((_, _, r)) => r,
                    None => {
                        return Err(FsmdpError::Solver("LP unbounded below".into()));
                    }
                }
            }
        };
        // eta update of B^-1 and the basic solution
        let piv = s.u[r];
        let step = s.xb[r] / piv;
        for k in 0..rows {
            s.binv[r * rows + k] /= piv;
        }
        s.xb[r] = step;
        for i in 0..rows {
            if i != r && s.u[i].abs() > 0.0 {
                let f = s.u[i];
                for k in 0..rows {
                    s.binv[i * rows + k] -= f * s.binv[r * rows + k];
                }
                s.xb[i] -= f * step;
                if s.xb[i] < 0.0 && s.xb[i] > -1e-12 {
                    s.xb[i] = 0.0;
                }
            }
        }
        s.in_basis[s.basis[r]] = false;
        s.basis[r] = j;
        s.in_basis[j] = true;
    }
    Err(FsmdpError::Solver(
        "pivot budget exhausted (cycling should be impossible under Bland's rule)".into(),
    ))
}

/// Convenience wrapper for inequality-form problems:
/// `min c.x  s.t.  A x >= b` with free `x`, solved by splitting
/// `x = p - q` and adding surplus variables.
pub fn minimize_free_inequalities(
    rows: usize,
    cols: usize,
    a: &[f64],
    b: &[f64],
    c: &[f64],
    scratch: &mut SimplexScratch,
) -> Result<(f64, Vec<f64>)> {
    let std_cols = 2 * cols + rows;
    let mut sa = vec![0.0; rows * std_cols];
    let mut sc = vec![0.0; std_cols];
    for j in 0..cols {
        sc[j] = c[j];
        sc[cols + j] = -c[j];
    }
    for r in 0..rows {
        for j in 0..cols {
            sa[r * std_cols + j] = a[r * cols + j];
            sa[r * std_cols + cols + j] = -a[r * cols + j];
        }
        sa[r * std_cols + 2 * cols + r] = -1.0; // surplus
    }
    let mut x = Vec::new();
    let value = minimize_standard(rows, std_cols, &sa, b, &sc, scratch, &mut x)?;
    let primal: Vec<f64> = (0..cols).map(|j| x[j] - x[cols + j]).collect();
    Ok((value, primal))
}
