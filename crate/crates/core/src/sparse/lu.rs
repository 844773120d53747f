//! Sparse LU factorization with partial pivoting.
//!
//! Left-looking column factorization: each column of the factors is produced
//! by one sparse triangular solve whose nonzero pattern comes from a reach
//! (depth-first) traversal of the already-built part of L, followed by a
//! partial-pivot choice over the unpivoted rows. Columns are pre-ordered by a
//! fill-reducing permutation (approximate minimum degree on the symmetrized
//! pattern by default; callers with structural knowledge can pass their own).
//!
//! A factorization retains its pivot sequence and factor patterns, so
//! refreshing the values of a matrix with the identical pattern skips the
//! symbolic work entirely ([`LuFactorization::refactorize`]); if the frozen
//! pivot sequence turns numerically unstable for the new values, it falls
//! back to a fresh pivoting pass by itself.

use super::amd::amd_pattern;
use super::matrix::SparseMatrix;
use crate::scalar::Scalar;
use num_traits::ToPrimitive;
use std::sync::Arc;
use thiserror::Error;

const NONE: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum LuError {
    #[error("matrix is singular at column {column}: pivot magnitude {pivot:.3e} below threshold")]
    Singular { column: usize, pivot: f64 },
    #[error("dimension mismatch: factorization is {expect}, vector has length {got}")]
    Dimension { expect: usize, got: usize },
    #[error("matrix must be square, got {rows} x {cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("refactorize needs the sparsity pattern the factorization was built from")]
    PatternChanged,
    #[error("column permutation is not a permutation of 0..{0}")]
    BadOrder(usize),
}

/// How [`LuFactorization::refactorize`] got its result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Refactor {
    /// Pivot sequence and patterns reused; numeric sweep only.
    Reused,
    /// Frozen pivots went unstable on the new values; repivoted from scratch.
    Repivoted,
}

/// Sparse LU of a square matrix: P_r A P_c = L U with unit-diagonal L.
///
/// Row permutation comes from partial pivoting, column permutation from the
/// fill-reducing preorder. Factors are stored by columns in pivot-space row
/// indices, each column sorted by row; the matrix itself is retained for the
/// refinement step in [`Self::solve`].
pub struct LuFactorization<S: Scalar> {
    n: usize,
    a: Arc<SparseMatrix<S>>,
    /// CSC view of the input pattern: per original column, the original row
    /// and the position of the entry in the CSR value array.
    acsc_ptr: Vec<usize>,
    acsc_row: Vec<u32>,
    acsc_val: Vec<usize>,
    /// q[k]: original column eliminated at step k.
    col_perm: Vec<u32>,
    /// r[k]: original row chosen as pivot at step k.
    row_perm: Vec<u32>,
    /// pinv[original row] = pivot step.
    row_perm_inv: Vec<u32>,
    /// Strict lower triangle (multipliers), unit diagonal implicit.
    l_ptr: Vec<usize>,
    l_row: Vec<u32>,
    l_val: Vec<S>,
    /// Upper triangle including the diagonal (last entry of each column).
    u_ptr: Vec<usize>,
    u_row: Vec<u32>,
    u_val: Vec<S>,
    /// Relative pivot threshold: a pivot below this times ||A||_inf is
    /// reported as singular.
    pivot_tol: f64,
    norm_a: f64,
}

/// Relative magnitude under which a pivot is declared numerically zero.
const PIVOT_TOL: f64 = 1e-13;

/// A reused pivot smaller than this fraction of its column's best candidate
/// triggers repivoting.
const REFACTOR_GUARD: f64 = 1e-3;

struct Workspace<S> {
    x: Vec<S>,
    /// DFS visit stamps on original rows.
    stamp: Vec<u32>,
    clock: u32,
    /// Reach of the current column, topologically ordered, original rows.
    topo: Vec<u32>,
    /// DFS stack of (row, resume position in its successor list).
    stack: Vec<(u32, usize)>,
}

impl<S: Scalar> Workspace<S> {
    fn new(n: usize) -> Self {
        Workspace {
            x: vec![S::zero(); n],
            stamp: vec![0; n],
            clock: 0,
            topo: Vec::with_capacity(64),
            stack: Vec::with_capacity(64),
        }
    }
}

/// Factorizes with an approximate-minimum-degree column preorder computed
/// from the symmetrized pattern.
pub fn factorize<S: Scalar>(a: Arc<SparseMatrix<S>>) -> Result<LuFactorization<S>, LuError> {
    if a.n_cols() != a.n_rows() {
        return Err(LuError::NotSquare { rows: a.n_rows(), cols: a.n_cols() });
    }
    let order = amd_pattern(&a.pattern);
    factorize_with_order(a, order)
}

/// Factorizes with a caller-supplied column elimination order.
pub fn factorize_with_order<S: Scalar>(
    a: Arc<SparseMatrix<S>>,
    col_perm: Vec<u32>,
) -> Result<LuFactorization<S>, LuError> {
    let n = a.n_rows();
    if a.n_cols() != n {
        return Err(LuError::NotSquare { rows: n, cols: a.n_cols() });
    }
    {
        let mut seen = vec![false; n];
        if col_perm.len() != n
            || !col_perm.iter().all(|&c| {
                let ok = (c as usize) < n && !seen[c as usize];
                if ok {
                    seen[c as usize] = true;
                }
                ok
            })
        {
            return Err(LuError::BadOrder(n));
        }
    }

    // Column-compressed index of the fixed pattern.
    let pat = &a.pattern;
    let mut counts = vec![0usize; n + 1];
    for &j in &pat.cols {
        counts[j as usize + 1] += 1;
    }
    for j in 0..n {
        counts[j + 1] += counts[j];
    }
    let acsc_ptr = counts.clone();
    let mut acsc_row = vec![0u32; pat.cols.len()];
    let mut acsc_val = vec![0usize; pat.cols.len()];
    let mut next = counts;
    for i in 0..n {
        for idx in pat.row_ptr[i]..pat.row_ptr[i + 1] {
            let j = pat.cols[idx] as usize;
            let slot = next[j];
            next[j] += 1;
            acsc_row[slot] = i as u32;
            acsc_val[slot] = idx;
        }
    }

    let norm_a = a.norm_inf().to_f64().unwrap_or(f64::INFINITY);
    let mut f = LuFactorization {
        n,
        a,
        acsc_ptr,
        acsc_row,
        acsc_val,
        col_perm,
        row_perm: vec![0; n],
        row_perm_inv: vec![NONE; n],
        l_ptr: Vec::new(),
        l_row: Vec::new(),
        l_val: Vec::new(),
        u_ptr: Vec::new(),
        u_row: Vec::new(),
        u_val: Vec::new(),
        pivot_tol: PIVOT_TOL,
        norm_a,
    };
    f.pivoting_pass()?;
    Ok(f)
}

impl<S: Scalar> LuFactorization<S> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn l_nnz(&self) -> usize {
        self.l_row.len()
    }

    pub fn u_nnz(&self) -> usize {
        self.u_row.len()
    }

    /// (row permutation, column permutation): step k eliminated original row
    /// `rows[k]` and original column `cols[k]`.
    pub fn permutations(&self) -> (&[u32], &[u32]) {
        (&self.row_perm, &self.col_perm)
    }

    /// Relative pivot threshold the factorization was built with.
    pub fn pivot_tolerance(&self) -> f64 {
        self.pivot_tol
    }

    /// Entries of L (unit diagonal included) as (pivot row, pivot col, value).
    pub fn lower(&self) -> impl Iterator<Item = (usize, usize, S)> + '_ {
        (0..self.n).flat_map(move |k| {
            std::iter::once((k, k, S::one())).chain(
                (self.l_ptr[k]..self.l_ptr[k + 1])
                    .map(move |idx| (self.l_row[idx] as usize, k, self.l_val[idx])),
            )
        })
    }

    /// Entries of U as (pivot row, pivot col, value), diagonal included.
    pub fn upper(&self) -> impl Iterator<Item = (usize, usize, S)> + '_ {
        (0..self.n).flat_map(move |k| {
            (self.u_ptr[k]..self.u_ptr[k + 1])
                .map(move |idx| (self.u_row[idx] as usize, k, self.u_val[idx]))
        })
    }

    /// Full factorization pass: frees any previous factors, then runs the
    /// left-looking sweep with partial pivoting.
    fn pivoting_pass(&mut self) -> Result<(), LuError> {
        let n = self.n;
        self.l_ptr = Vec::with_capacity(n + 1);
        self.l_row = Vec::new();
        self.l_val = Vec::new();
        self.u_ptr = Vec::with_capacity(n + 1);
        self.u_row = Vec::new();
        self.u_val = Vec::new();
        self.l_ptr.push(0);
        self.u_ptr.push(0);
        self.row_perm_inv = vec![NONE; n];
        let mut ws = Workspace::<S>::new(n);
        let floor = self.pivot_tol * self.norm_a;

        for k in 0..n {
            let col = self.col_perm[k] as usize;
            self.reach_and_solve(col, k, &mut ws);

            // Partial pivoting over the unpivoted rows of the reach.
            let mut best = NONE;
            let mut best_mag = -1.0f64;
            for &r in &ws.topo {
                if self.row_perm_inv[r as usize] == NONE {
                    let mag = ws.x[r as usize].modulus().to_f64().unwrap_or(0.0);
                    if mag > best_mag {
                        best_mag = mag;
                        best = r;
                    }
                }
            }
            if best == NONE || !(best_mag > floor) {
                for &r in &ws.topo {
                    ws.x[r as usize] = S::zero();
                }
                return Err(LuError::Singular { column: col, pivot: best_mag.max(0.0) });
            }
            let pivot_val = ws.x[best as usize];
            let pivot_inv = inv(pivot_val);
            self.row_perm[k] = best;
            self.row_perm_inv[best as usize] = k as u32;

            for &r in &ws.topo {
                let ru = r as usize;
                let v = ws.x[ru];
                ws.x[ru] = S::zero();
                let p = self.row_perm_inv[ru];
                if p == k as u32 {
                    continue;
                }
                if p != NONE {
                    self.u_row.push(p);
                    self.u_val.push(v);
                } else if v != S::zero() {
                    self.l_row.push(r); // original row; remapped after the pass
                    self.l_val.push(v * pivot_inv);
                }
            }
            self.u_row.push(k as u32);
            self.u_val.push(pivot_val);
            self.l_ptr.push(self.l_row.len());
            self.u_ptr.push(self.u_row.len());
        }

        // Remap L rows into pivot space and sort all columns by row.
        for r in &mut self.l_row {
            *r = self.row_perm_inv[*r as usize];
        }
        for k in 0..n {
            sort_column(&mut self.l_row, &mut self.l_val, self.l_ptr[k], self.l_ptr[k + 1]);
            sort_column(&mut self.u_row, &mut self.u_val, self.u_ptr[k], self.u_ptr[k + 1]);
        }
        Ok(())
    }

    /// Scatters original column `col` into the workspace and eliminates it
    /// against the pivoted columns found by the reach traversal. On return
    /// `ws.topo` lists the pattern (original rows) in topological order and
    /// `ws.x` holds the values.
    fn reach_and_solve(&self, col: usize, k: usize, ws: &mut Workspace<S>) {
        ws.clock += 1;
        let stamp = ws.clock;
        ws.topo.clear();
        for idx in self.acsc_ptr[col]..self.acsc_ptr[col + 1] {
            let r0 = self.acsc_row[idx];
            ws.x[r0 as usize] = self.a.values[self.acsc_val[idx]];
            if ws.stamp[r0 as usize] == stamp {
                continue;
            }
            // Depth-first reach: successors of a pivoted row are the rows of
            // its L column; unpivoted rows are terminal.
            ws.stack.push((r0, 0));
            ws.stamp[r0 as usize] = stamp;
            while let Some(&mut (r, ref mut pos)) = ws.stack.last_mut() {
                let p = self.row_perm_inv[r as usize];
                let advanced = if p != NONE && (p as usize) < k {
                    let (lo, hi) = (self.l_ptr[p as usize], self.l_ptr[p as usize + 1]);
                    let mut next_child = None;
                    while lo + *pos < hi {
                        let child = self.l_row[lo + *pos];
                        *pos += 1;
                        if ws.stamp[child as usize] != stamp {
                            ws.stamp[child as usize] = stamp;
                            next_child = Some(child);
                            break;
                        }
                    }
                    next_child
                } else {
                    None
                };
                match advanced {
                    Some(child) => ws.stack.push((child, 0)),
                    None => {
                        ws.stack.pop();
                        ws.topo.push(r);
                    }
                }
            }
        }
        // Finish order is reverse topological: dependencies last. Reverse it,
        // then run the numeric elimination in place.
        ws.topo.reverse();
        for i in 0..ws.topo.len() {
            let r = ws.topo[i];
            let p = self.row_perm_inv[r as usize];
            if p == NONE || p as usize >= k {
                continue;
            }
            let xr = ws.x[r as usize];
            if xr == S::zero() {
                continue;
            }
            for idx in self.l_ptr[p as usize]..self.l_ptr[p as usize + 1] {
                let child = self.l_row[idx] as usize;
                let delta = self.l_val[idx] * xr;
                ws.x[child] = ws.x[child] - delta;
            }
        }
    }

    /// Refreshes the numeric factors for a matrix sharing the original
    /// pattern, reusing pivot sequence and factor patterns. Falls back to a
    /// full repivoting pass when a frozen pivot loses too much magnitude
    /// against its column, and reports which path was taken.
    pub fn refactorize(&mut self, a: Arc<SparseMatrix<S>>) -> Result<Refactor, LuError> {
        if !Arc::ptr_eq(&a.pattern, &self.a.pattern) && *a.pattern != *self.a.pattern {
            return Err(LuError::PatternChanged);
        }
        self.a = a;
        self.norm_a = self.a.norm_inf().to_f64().unwrap_or(f64::INFINITY);
        let floor = self.pivot_tol * self.norm_a;
        let n = self.n;
        let mut x = vec![S::zero(); n];
        let mut new_l = vec![S::zero(); self.l_val.len()];
        let mut new_u = vec![S::zero(); self.u_val.len()];

        let mut stable = true;
        'columns: for k in 0..n {
            let col = self.col_perm[k] as usize;
            // Scatter A(:, col) in pivot space; off-pattern stays zero.
            for idx in self.acsc_ptr[col]..self.acsc_ptr[col + 1] {
                let p = self.row_perm_inv[self.acsc_row[idx] as usize];
                x[p as usize] = self.a.values[self.acsc_val[idx]];
            }
            // Ascending pivot rows of U's column are a topological order.
            for idx in self.u_ptr[k]..self.u_ptr[k + 1] {
                let j = self.u_row[idx] as usize;
                if j == k {
                    break;
                }
                let xj = x[j];
                x[j] = S::zero();
                new_u[idx] = xj;
                if xj == S::zero() {
                    continue;
                }
                for l in self.l_ptr[j]..self.l_ptr[j + 1] {
                    let child = self.l_row[l] as usize;
                    // new_l's column j is complete: the sweep is left-looking.
                    x[child] = x[child] - new_l[l] * xj;
                }
            }
            let dk = self.u_ptr[k + 1] - 1;
            debug_assert_eq!(self.u_row[dk] as usize, k);
            let pivot = x[k];
            x[k] = S::zero();
            new_u[dk] = pivot;
            let pmag = pivot.modulus().to_f64().unwrap_or(0.0);
            let mut cmax = pmag;
            for idx in self.l_ptr[k]..self.l_ptr[k + 1] {
                let r = self.l_row[idx] as usize;
                cmax = cmax.max(x[r].modulus().to_f64().unwrap_or(0.0));
            }
            if !(pmag > floor) || pmag < REFACTOR_GUARD * cmax {
                // Clear the scratch the slow way and repivot from scratch.
                for v in x.iter_mut() {
                    *v = S::zero();
                }
                stable = false;
                break 'columns;
            }
            let pivot_inv = inv(pivot);
            for idx in self.l_ptr[k]..self.l_ptr[k + 1] {
                let r = self.l_row[idx] as usize;
                new_l[idx] = x[r] * pivot_inv;
                x[r] = S::zero();
            }
        }

        if stable {
            self.l_val = new_l;
            self.u_val = new_u;
            Ok(Refactor::Reused)
        } else {
            self.pivoting_pass()?;
            Ok(Refactor::Repivoted)
        }
    }

    /// Solves A x = b with one step of iterative refinement.
    pub fn solve(&self, b: &[S]) -> Result<Vec<S>, LuError> {
        if b.len() != self.n {
            return Err(LuError::Dimension { expect: self.n, got: b.len() });
        }
        let mut x = self.solve_raw(b);
        // One refinement step: r = b - A x, x += A^{-1} r.
        let mut r = b.to_vec();
        let ax = self.a.matvec_alloc(&x);
        for i in 0..self.n {
            r[i] = r[i] - ax[i];
        }
        let dx = self.solve_raw(&r);
        for i in 0..self.n {
            x[i] = x[i] + dx[i];
        }
        Ok(x)
    }

    /// Plain forward/backward substitution without refinement.
    pub fn solve_raw(&self, b: &[S]) -> Vec<S> {
        let n = self.n;
        let mut y = vec![S::zero(); n];
        for k in 0..n {
            y[k] = b[self.row_perm[k] as usize];
        }
        for k in 0..n {
            let yk = y[k];
            if yk == S::zero() {
                continue;
            }
            for idx in self.l_ptr[k]..self.l_ptr[k + 1] {
                let i = self.l_row[idx] as usize;
                y[i] = y[i] - self.l_val[idx] * yk;
            }
        }
        for k in (0..n).rev() {
            let dk = self.u_ptr[k + 1] - 1;
            let yk = y[k] * inv(self.u_val[dk]);
            y[k] = yk;
            if yk == S::zero() {
                continue;
            }
            for idx in self.u_ptr[k]..dk {
                let j = self.u_row[idx] as usize;
                y[j] = y[j] - self.u_val[idx] * yk;
            }
        }
        let mut x = vec![S::zero(); n];
        for k in 0..n {
            x[self.col_perm[k] as usize] = y[k];
        }
        x
    }
}

fn sort_column<S: Scalar>(rows: &mut [u32], vals: &mut [S], lo: usize, hi: usize) {
    let mut pairs: Vec<(u32, S)> =
        (lo..hi).map(|i| (rows[i], vals[i])).collect();
    pairs.sort_unstable_by_key(|p| p.0);
    for (off, (r, v)) in pairs.into_iter().enumerate() {
        rows[lo + off] = r;
        vals[lo + off] = v;
    }
}

fn inv<S: Scalar>(v: S) -> S {
    S::one() / v
}
