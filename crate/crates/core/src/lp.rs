//! Max-margin feasibility probe used by chamber enumeration.
//!
//! Given hyperplanes `w_i . xi + c_i` with required strict signs `s_i` and a
//! bounding box `|xi_j| <= B_j`, the probe solves the linear program
//!
//! ```text
//!   maximize t   subject to   s_i (w_i . xi + c_i) >= t,   -B_j <= xi_j <= B_j,
//! ```
//!
//! i.e. it maximizes the minimum signed slack over the box. The caller prunes
//! a sign assignment iff the optimal margin is <= epsilon.
//!
//! The number of structural variables is tiny (feature dimension + 1, at most
//! seven or so) while the number of rows grows with the move catalog, so the
//! probe runs the revised simplex on the LP dual, whose basis is a dense
//! (r+1)x(r+1) matrix. The LP is always feasible (t can go very negative) and
//! always bounded (t is capped by the box), so every solve terminates with an
//! optimal witness.

use crate::error::{CoreError, Result};

/// One slack functional `w . xi + c` over the probe's xi-space.
#[derive(Debug, Clone)]
pub struct LpRow {
    pub w: Vec<f64>,
    pub c: f64,
}

/// Reusable buffers for repeated probes of the same dimensions.
#[derive(Debug, Default)]
pub struct Workspace {
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    pi: Vec<f64>,
    col: Vec<f64>,
    u: Vec<f64>,
    cost_b: Vec<f64>,
    scratch: Vec<f64>,
}

const RC_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-11;

/// Maximize the minimum signed slack of `rows[..signs.len()]` over the box.
///
/// `signs[i]` is +1.0 or -1.0; `bounds[j] > 0` is the half-width of the box in
/// coordinate `j`. Returns the witness point and the optimal margin (which may
/// be negative when the sign assignment is infeasible at every box point).
pub fn max_margin(
    rows: &[LpRow],
    signs: &[f64],
    bounds: &[f64],
    ws: &mut Workspace,
) -> Result<(Vec<f64>, f64)> {
    let k = signs.len();
    debug_assert!(k <= rows.len());
    let r = bounds.len();
    let d = r + 1; // structural variables: xi then t
    let nrows = k + r + 1; // margin rows, box rows, t-cap row
    let ncols = nrows + d; // y columns then v columns

    // Scale anchor: t_lo = -M - 1 guarantees the all-slack start is feasible,
    // t_hi = M + 1 keeps the LP bounded.
    let mut m_scale = 0.0f64;
    for (row, _) in rows.iter().zip(signs.iter()) {
        let reach: f64 = row
            .w
            .iter()
            .zip(bounds.iter())
            .map(|(w, b)| w.abs() * b)
            .sum::<f64>()
            + row.c.abs();
        m_scale = m_scale.max(reach);
    }
    let t_lo = -m_scale - 1.0;
    let t_hi = m_scale + 1.0;

    // rhs of primal row i (the dual cost of column y_i)
    let rhs = |i: usize| -> f64 {
        if i < k {
            let row = &rows[i];
            let s = signs[i];
            let wdotb: f64 = row
                .w
                .iter()
                .zip(bounds.iter())
                .map(|(w, b)| w * b)
                .sum();
            s * row.c - s * wdotb - t_lo
        } else if i < k + r {
            2.0 * bounds[i - k]
        } else {
            t_hi - t_lo
        }
    };

    // structural column of primal row i, written into `out`
    let fill_row = |i: usize, out: &mut [f64]| {
        out.iter_mut().for_each(|v| *v = 0.0);
        if i < k {
            let s = signs[i];
            for (j, w) in rows[i].w.iter().enumerate() {
                out[j] = -s * w;
            }
            out[r] = 1.0;
        } else if i < k + r {
            out[i - k] = 1.0;
        } else {
            out[r] = 1.0;
        }
    };

    ws.basis.clear();
    ws.basis.push(k + r); // y of the t-cap row (structural column e_t)
    for j in 0..r {
        ws.basis.push(nrows + j); // v_j for every xi coordinate
    }
    debug_assert_eq!(ws.basis.len(), d);
    ws.in_basis.clear();
    ws.in_basis.resize(ncols, false);
    for &b in &ws.basis {
        ws.in_basis[b] = true;
    }

    ws.binv.resize(d * d, 0.0);
    ws.xb.resize(d, 0.0);
    ws.pi.resize(d, 0.0);
    ws.col.resize(d, 0.0);
    ws.u.resize(d, 0.0);
    ws.cost_b.resize(d, 0.0);
    ws.scratch.resize(2 * d * d, 0.0);

    // Initial basis matrix has columns [e_t, -e_0, ..., -e_{r-1}]; the inverse
    // maps e_t -> slot 0 and e_j -> -slot(1+j).
    ws.binv.iter_mut().for_each(|v| *v = 0.0);
    ws.binv[r] = 1.0; // Binv[0][r]
    for j in 0..r {
        ws.binv[(1 + j) * d + j] = -1.0;
    }
    // The dual equation rhs is e_t, so x_B[i] = Binv[i][r].
    let recompute_xb = |binv: &[f64], xb: &mut [f64]| {
        for i in 0..d {
            xb[i] = binv[i * d + r];
        }
    };
    recompute_xb(&ws.binv, &mut ws.xb);

    let cost = |col_id: usize| -> f64 {
        if col_id < nrows {
            rhs(col_id)
        } else {
            0.0
        }
    };
    for (slot, &b) in ws.basis.iter().enumerate() {
        ws.cost_b[slot] = cost(b);
    }

    let cost_scale: f64 = (0..nrows).map(rhs).fold(1.0f64, |a, b| a.max(b.abs()));
    let rc_cut = -RC_TOL * cost_scale;

    let max_iters = 400 + 60 * nrows;
    let bland_after = 40 + 6 * nrows;
    let mut iter = 0usize;
    let mut since_refactor = 0usize;

    loop {
        iter += 1;
        if iter > max_iters {
            return Err(CoreError::LpStall);
        }
        let bland = iter > bland_after;

        // simplex multipliers: pi = Binv' * cost_B
        for j in 0..d {
            let mut acc = 0.0;
            for i in 0..d {
                acc += ws.binv[i * d + j] * ws.cost_b[i];
            }
            ws.pi[j] = acc;
        }

        // pricing
        let mut enter: Option<usize> = None;
        let mut best_rc = rc_cut;
        let consider = |q: usize, rc: f64, enter: &mut Option<usize>, best_rc: &mut f64| {
            if rc < *best_rc {
                *enter = Some(q);
                if bland {
                    // first (lowest-index) improving column wins
                    *best_rc = rc_cut;
                } else {
                    *best_rc = rc;
                }
            }
        };
        'price: {
            for i in 0..k {
                if ws.in_basis[i] {
                    continue;
                }
                let s = signs[i];
                let mut a_dot_pi = ws.pi[r]; // t coefficient is 1
                for (j, w) in rows[i].w.iter().enumerate() {
                    a_dot_pi += -s * w * ws.pi[j];
                }
                let rc = rhs(i) - a_dot_pi;
                consider(i, rc, &mut enter, &mut best_rc);
                if bland && enter.is_some() {
                    break 'price;
                }
            }
            for j in 0..r {
                if ws.in_basis[k + j] {
                    continue;
                }
                let rc = rhs(k + j) - ws.pi[j];
                consider(k + j, rc, &mut enter, &mut best_rc);
                if bland && enter.is_some() {
                    break 'price;
                }
            }
            if !ws.in_basis[k + r] {
                let rc = rhs(k + r) - ws.pi[r];
                consider(k + r, rc, &mut enter, &mut best_rc);
                if bland && enter.is_some() {
                    break 'price;
                }
            }
            for j in 0..d {
                if ws.in_basis[nrows + j] {
                    continue;
                }
                let rc = ws.pi[j]; // cost 0 minus pi . (-e_j)
                consider(nrows + j, rc, &mut enter, &mut best_rc);
                if bland && enter.is_some() {
                    break 'price;
                }
            }
        }

        let Some(q) = enter else {
            // Optimal: pi is the primal solution in shifted coordinates.
            let mut xi = vec![0.0; r];
            for j in 0..r {
                xi[j] = ws.pi[j] - bounds[j];
            }
            let margin = ws.pi[r] + t_lo;
            return Ok((xi, margin));
        };

        // entering column and its basis representation u = Binv * col_q
        if q < nrows {
            fill_row(q, &mut ws.col);
        } else {
            ws.col.iter_mut().for_each(|v| *v = 0.0);
            ws.col[q - nrows] = -1.0;
        }
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += ws.binv[i * d + j] * ws.col[j];
            }
            ws.u[i] = acc;
        }

        // ratio test
        let mut leave: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..d {
            if ws.u[i] > PIVOT_TOL {
                let ratio = ws.xb[i] / ws.u[i];
                let better = match leave {
                    None => true,
                    Some(l) => {
                        ratio < best_ratio - 1e-14
                            || (ratio < best_ratio + 1e-14 && ws.basis[i] < ws.basis[l])
                    }
                };
                if better {
                    leave = Some(i);
                    best_ratio = ratio;
                }
            }
        }
        let Some(l) = leave else {
            // Dual unbounded would mean the primal is infeasible, which cannot
            // happen for this LP; treat as a numerical failure.
            return Err(CoreError::LpStall);
        };

        // pivot: replace basis slot l with column q, update Binv and x_B
        let ul = ws.u[l];
        ws.in_basis[ws.basis[l]] = false;
        ws.in_basis[q] = true;
        ws.basis[l] = q;
        ws.cost_b[l] = cost(q);
        for j in 0..d {
            ws.binv[l * d + j] /= ul;
        }
        for i in 0..d {
            if i != l {
                let ui = ws.u[i];
                if ui != 0.0 {
                    for j in 0..d {
                        ws.binv[i * d + j] -= ui * ws.binv[l * d + j];
                    }
                }
            }
        }
        recompute_xb(&ws.binv, &mut ws.xb);

        since_refactor += 1;
        if since_refactor >= 64 {
            since_refactor = 0;
            refactorize(&ws.basis, nrows, r, d, &fill_row, &mut ws.binv, &mut ws.scratch)?;
            recompute_xb(&ws.binv, &mut ws.xb);
        }
    }
}

/// Rebuild the basis inverse from scratch by Gauss-Jordan with partial
/// pivoting. Guards against slow numerical drift over long pivot sequences.
fn refactorize(
    basis: &[usize],
    nrows: usize,
    _r: usize,
    d: usize,
    fill_row: &impl Fn(usize, &mut [f64]),
    binv: &mut [f64],
    scratch: &mut [f64],
) -> Result<()> {
    let (mat, inv) = scratch.split_at_mut(d * d);
    inv.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..d {
        inv[i * d + i] = 1.0;
    }
    let mut col = vec![0.0; d];
    for (slot, &id) in basis.iter().enumerate() {
        if id < nrows {
            fill_row(id, &mut col);
        } else {
            col.iter_mut().for_each(|v| *v = 0.0);
            col[id - nrows] = -1.0;
        }
        for i in 0..d {
            mat[i * d + slot] = col[i];
        }
    }
    for piv in 0..d {
        let mut best = piv;
        for i in piv + 1..d {
            if mat[i * d + piv].abs() > mat[best * d + piv].abs() {
                best = i;
            }
        }
        if mat[best * d + piv].abs() < 1e-13 {
            return Err(CoreError::LpStall);
        }
        if best != piv {
            for j in 0..d {
                mat.swap(piv * d + j, best * d + j);
                inv.swap(piv * d + j, best * d + j);
            }
        }
        let pv = mat[piv * d + piv];
        for j in 0..d {
            mat[piv * d + j] /= pv;
            inv[piv * d + j] /= pv;
        }
        for i in 0..d {
            if i != piv {
                let f = mat[i * d + piv];
                if f != 0.0 {
                    for j in 0..d {
                        mat[i * d + j] -= f * mat[piv * d + j];
                        inv[i * d + j] -= f * inv[piv * d + j];
                    }
                }
            }
        }
    }
    // Binv = inverse of column-assembled basis; rows of `inv` now hold it.
    binv.copy_from_slice(inv);
    Ok(())
}
