//! Dense spectral kernels backing the iterative eigensolver.
//!
//! The restart machinery projects the big generalized problem onto a small
//! subspace and then needs full spectral information about the projected
//! matrix: a Schur decomposition, a way to reorder it so the wanted part of
//! the spectrum sits in the leading columns, and eigenvectors obtained by
//! back substitution. Matrices here are tiny (the restart dimension, under a
//! hundred), so everything is plain row major `Vec` storage and O(n^3) is
//! perfectly fine.
//!
//! Two parallel code paths exist on purpose. A real matrix is kept in real
//! arithmetic through a quasi-triangular Schur form whose 2x2 diagonal
//! blocks are standardized (equal diagonal entries, off-diagonal product
//! negative) so each block encodes an exact conjugate pair. A complex matrix
//! goes through the ordinary triangular form. The real path must never split
//! a conjugate pair, which is why reordering works on whole blocks.

use crate::scalar::Real;
use num_complex::Complex;

/// Failure modes of the dense decompositions.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DenseError {
    /// The QR iteration failed to deflate within the sweep budget.
    #[error("qr iteration stalled with {remaining} rows still active")]
    QrStalled { remaining: usize },
    /// Flat storage length does not match the stated dimension.
    #[error("matrix storage holds {len} entries, expected {n}*{n}")]
    BadShape { len: usize, n: usize },
}

#[inline]
fn ix(n: usize, i: usize, j: usize) -> usize {
    i * n + j
}

// ---------------------------------------------------------------------------
// real path
// ---------------------------------------------------------------------------

/// Real Schur decomposition `A = Q T Q^t`.
///
/// `T` is upper quasi-triangular: 1x1 diagonal blocks carry real eigenvalues
/// and standardized 2x2 blocks carry conjugate pairs. Subdiagonal entries
/// outside the 2x2 blocks are exactly zero, so the block structure can be
/// read off `T` directly.
#[derive(Debug, Clone)]
pub struct RealSchur<T: Real> {
    n: usize,
    t: Vec<T>,
    q: Vec<T>,
}

/// Computes the real Schur decomposition of a flat row-major `n` by `n`
/// matrix via Householder reduction to Hessenberg form followed by the
/// implicit double-shift QR iteration.
pub fn real_schur<T: Real>(a: &[T], n: usize) -> Result<RealSchur<T>, DenseError> {
    if a.len() != n * n {
        return Err(DenseError::BadShape { len: a.len(), n });
    }
    let mut t = a.to_vec();
    let mut q = identity(n);
    hessenberg(&mut t, &mut q, n);
    francis_qr(&mut t, &mut q, n)?;
    Ok(RealSchur { n, t, q })
}

impl<T: Real> RealSchur<T> {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Quasi-triangular factor, row major.
    pub fn t(&self) -> &[T] {
        &self.t
    }

    /// Orthogonal factor, row major.
    pub fn q(&self) -> &[T] {
        &self.q
    }

    /// Diagonal blocks as `(start, size)` with size 1 or 2.
    pub fn blocks(&self) -> Vec<(usize, usize)> {
        block_list(&self.t, self.n)
    }

    /// Eigenvalues in diagonal order; a 2x2 block contributes the member
    /// with positive imaginary part first.
    pub fn eigenvalues(&self) -> Vec<Complex<T>> {
        let mut out = Vec::with_capacity(self.n);
        for (s, sz) in self.blocks() {
            if sz == 1 {
                out.push(Complex::new(self.t[ix(self.n, s, s)], T::zero()));
            } else {
                let (re, im) = pair_of_block(&self.t, self.n, s);
                out.push(Complex::new(re, im));
                out.push(Complex::new(re, -im));
            }
        }
        out
    }

    /// Reorders the decomposition so that every leading block satisfies
    /// `pred` on its eigenvalue (the positive-imaginary member for pairs).
    ///
    /// Swaps act on whole blocks, so conjugate pairs move together. Returns
    /// the number of leading columns whose blocks all satisfy the predicate
    /// after the reorder; a rejected swap (possible only when two blocks
    /// share an eigenvalue to working precision) ends the pass early, so the
    /// count is the verified prefix, not the requested one.
    pub fn select_to_front(&mut self, mut pred: impl FnMut(Complex<T>) -> bool) -> usize {
        let n = self.n;
        let mut target = 0usize;
        // each successful swap moves a selected block left; cap the total in
        // case a near-degenerate predicate keeps flipping at the threshold.
        let mut budget = 4 * n * n + 8;
        'outer: loop {
            let blocks = block_list(&self.t, n);
            let mut chosen = None;
            for &(s, sz) in &blocks {
                if s < target {
                    continue;
                }
                if pred(block_eigenvalue(&self.t, n, s, sz)) {
                    chosen = Some((s, sz));
                    break;
                }
            }
            let Some((s, sz)) = chosen else { break };
            if s == target {
                target += sz;
                continue;
            }
            // neighbor block ending at s - 1
            let np = if s >= 2 && self.t[ix(n, s - 1, s - 2)] != T::zero() { 2 } else { 1 };
            if budget == 0 || !swap_blocks(&mut self.t, &mut self.q, n, s - np, np, sz) {
                break 'outer;
            }
            budget -= 1;
        }
        // report what actually holds rather than what was attempted
        let mut front = 0;
        for (s, sz) in block_list(&self.t, n) {
            if s == front && pred(block_eigenvalue(&self.t, n, s, sz)) {
                front += sz;
            } else {
                break;
            }
        }
        front
    }

    /// Right eigenvectors of the original matrix, unit 2-norm, in diagonal
    /// order and conjugate-closed: a 2x2 block yields both pair members.
    pub fn eigenvectors(&self) -> Vec<(Complex<T>, Vec<Complex<T>>)> {
        let n = self.n;
        quasi_triangular_eigenvectors(&self.t, n)
            .into_iter()
            .map(|(lam, x)| {
                // rotate back through q; q is real so real/imag parts map independently
                let mut y = vec![Complex::new(T::zero(), T::zero()); n];
                for i in 0..n {
                    let mut acc = Complex::new(T::zero(), T::zero());
                    for k in 0..n {
                        acc = acc + x[k].scale(self.q[ix(n, i, k)]);
                    }
                    y[i] = acc;
                }
                (lam, y)
            })
            .collect()
    }
}

fn identity<T: Real>(n: usize) -> Vec<T> {
    let mut q = vec![T::zero(); n * n];
    for i in 0..n {
        q[ix(n, i, i)] = T::one();
    }
    q
}

fn block_list<T: Real>(t: &[T], n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut j = 0;
    while j < n {
        if j + 1 < n && t[ix(n, j + 1, j)] != T::zero() {
            out.push((j, 2));
            j += 2;
        } else {
            out.push((j, 1));
            j += 1;
        }
    }
    out
}

/// Conjugate pair `(re, im)` of a standardized 2x2 block, `im > 0`.
fn pair_of_block<T: Real>(t: &[T], n: usize, s: usize) -> (T, T) {
    let re = (t[ix(n, s, s)] + t[ix(n, s + 1, s + 1)]) * T::of(0.5);
    let prod = t[ix(n, s, s + 1)] * t[ix(n, s + 1, s)];
    // standardization keeps the product negative; clamp defends roundoff
    let im = (-prod).max(T::zero()).sqrt();
    (re, im)
}

fn block_eigenvalue<T: Real>(t: &[T], n: usize, s: usize, sz: usize) -> Complex<T> {
    if sz == 1 {
        Complex::new(t[ix(n, s, s)], T::zero())
    } else {
        let (re, im) = pair_of_block(t, n, s);
        Complex::new(re, im)
    }
}

/// Width (1 or 2) of the diagonal block at position `s` of a
/// quasi-triangular matrix of logical order `n` stored with row stride
/// `ld`, for callers that keep the matrix inside a larger buffer.
pub(crate) fn quasi_block_size<T: Real>(t: &[T], ld: usize, n: usize, s: usize) -> usize {
    if s + 1 < n && t[(s + 1) * ld + s] != T::zero() {
        2
    } else {
        1
    }
}

/// Eigenvalue of the diagonal block at `s` (the `im > 0` member for a
/// pair), with row stride `ld`.
pub(crate) fn quasi_block_eigenvalue<T: Real>(t: &[T], ld: usize, n: usize, s: usize) -> Complex<T> {
    if quasi_block_size(t, ld, n, s) == 1 {
        Complex::new(t[s * ld + s], T::zero())
    } else {
        let re = (t[s * ld + s] + t[(s + 1) * ld + s + 1]) * T::of(0.5);
        let prod = t[s * ld + s + 1] * t[(s + 1) * ld + s];
        Complex::new(re, (-prod).max(T::zero()).sqrt())
    }
}

/// Householder reflector for `x`: returns `(v1, v2, tau, beta)` for a
/// 3-vector stored as `[x0, x1, x2]` with the convention `v = (1, v1, v2)`
/// and `H = I - tau v v^t`, `H x = beta e1`. Pass `x2 = 0` for 2-vectors.
fn house3<T: Real>(x0: T, x1: T, x2: T) -> (T, T, T, T) {
    let sigma = x1 * x1 + x2 * x2;
    if sigma == T::zero() {
        return (T::zero(), T::zero(), T::zero(), x0);
    }
    let mu = (x0 * x0 + sigma).sqrt();
    let beta = if x0 <= T::zero() { mu } else { -mu };
    let tau = (beta - x0) / beta;
    let denom = x0 - beta;
    (x1 / denom, x2 / denom, tau, beta)
}

/// Householder reduction to upper Hessenberg form, accumulating the
/// similarity into `q` (so `a_in = q h q^t` on return).
fn hessenberg<T: Real>(h: &mut [T], q: &mut [T], n: usize) {
    if n < 3 {
        return;
    }
    let mut v = vec![T::zero(); n];
    for k in 0..n - 2 {
        let m = n - k - 1; // length of the column tail below the diagonal
        let x0 = h[ix(n, k + 1, k)];
        let mut sigma = T::zero();
        for i in 2..=m {
            sigma += h[ix(n, k + i, k)] * h[ix(n, k + i, k)];
        }
        if sigma == T::zero() {
            continue;
        }
        let mu = (x0 * x0 + sigma).sqrt();
        let beta = if x0 <= T::zero() { mu } else { -mu };
        let tau = (beta - x0) / beta;
        let denom = x0 - beta;
        v[0] = T::one();
        for i in 1..m {
            v[i] = h[ix(n, k + 1 + i, k)] / denom;
        }
        // left: rows k+1..n over columns k..n
        for j in k..n {
            let mut s = T::zero();
            for i in 0..m {
                s += v[i] * h[ix(n, k + 1 + i, j)];
            }
            s *= tau;
            for i in 0..m {
                h[ix(n, k + 1 + i, j)] -= s * v[i];
            }
        }
        // right: all rows over columns k+1..n
        for i in 0..n {
            let mut s = T::zero();
            for j in 0..m {
                s += h[ix(n, i, k + 1 + j)] * v[j];
            }
            s *= tau;
            for j in 0..m {
                h[ix(n, i, k + 1 + j)] -= s * v[j];
            }
        }
        for i in 0..n {
            let mut s = T::zero();
            for j in 0..m {
                s += q[ix(n, i, k + 1 + j)] * v[j];
            }
            s *= tau;
            for j in 0..m {
                q[ix(n, i, k + 1 + j)] -= s * v[j];
            }
        }
        h[ix(n, k + 1, k)] = beta;
        for i in 2..=m {
            h[ix(n, k + i, k)] = T::zero();
        }
    }
}

/// Applies the plane rotation `[[cs, -sn], [sn, cs]]` as a similarity on
/// rows and columns `(j, j+1)` of `t`, and to the columns of `q`.
fn rotate<T: Real>(t: &mut [T], q: &mut [T], n: usize, j: usize, cs: T, sn: T) {
    for col in 0..n {
        let a = t[ix(n, j, col)];
        let b = t[ix(n, j + 1, col)];
        t[ix(n, j, col)] = cs * a + sn * b;
        t[ix(n, j + 1, col)] = cs * b - sn * a;
    }
    for row in 0..n {
        let a = t[ix(n, row, j)];
        let b = t[ix(n, row, j + 1)];
        t[ix(n, row, j)] = cs * a + sn * b;
        t[ix(n, row, j + 1)] = cs * b - sn * a;
        let a = q[ix(n, row, j)];
        let b = q[ix(n, row, j + 1)];
        q[ix(n, row, j)] = cs * a + sn * b;
        q[ix(n, row, j + 1)] = cs * b - sn * a;
    }
}

/// Brings the 2x2 block at `(j, j)` to standard form: triangular when its
/// eigenvalues are real, otherwise equal diagonal entries with an
/// off-diagonal product equal to minus the squared imaginary part.
fn standardize_block<T: Real>(t: &mut [T], q: &mut [T], n: usize, j: usize) {
    for _ in 0..2 {
        let a = t[ix(n, j, j)];
        let b = t[ix(n, j, j + 1)];
        let c = t[ix(n, j + 1, j)];
        let d = t[ix(n, j + 1, j + 1)];
        if c == T::zero() {
            return;
        }
        let half = T::of(0.5);
        let p = (a - d) * half;
        let disc = p * p + b * c;
        if disc >= T::zero() {
            // real eigenvalues: rotate an eigenvector into the first axis
            let sq = disc.sqrt();
            let m = (a + d) * half;
            let l1 = m + sq;
            let l2 = m - sq;
            let lam = if (l1 - d).abs() >= (l2 - d).abs() { l1 } else { l2 };
            let v0 = lam - d;
            let v1 = c;
            let r = v0.hypot(v1);
            if r == T::zero() {
                return;
            }
            rotate(t, q, n, j, v0 / r, v1 / r);
            t[ix(n, j + 1, j)] = T::zero();
            return;
        }
        // complex pair: equalize the diagonal
        let theta = T::of(0.5) * (d - a).atan2(b + c);
        rotate(t, q, n, j, theta.cos(), theta.sin());
        let aa = t[ix(n, j, j)];
        let dd = t[ix(n, j + 1, j + 1)];
        let mean = (aa + dd) * half;
        t[ix(n, j, j)] = mean;
        t[ix(n, j + 1, j + 1)] = mean;
        if t[ix(n, j, j + 1)] * t[ix(n, j + 1, j)] < T::zero() {
            return;
        }
        // roundoff pushed a near-real pair over the line; rerun as real
    }
}

/// Implicit double-shift QR on an upper Hessenberg matrix, accumulating
/// into `q`. On success `t` is quasi-triangular with standardized blocks.
fn francis_qr<T: Real>(t: &mut [T], q: &mut [T], n: usize) -> Result<(), DenseError> {
    if n < 2 {
        return Ok(());
    }
    let eps = T::epsilon();
    let mut hi = n - 1;
    let mut since_deflation = 0usize;
    let mut sweeps = 0usize;
    let max_sweeps = 40 * n;
    loop {
        // overall scale of the active window, for the zero-sum corner case
        let mut hnorm = T::zero();
        for i in 0..=hi {
            for jj in i.saturating_sub(1)..=hi {
                hnorm = hnorm.max(t[ix(n, i, jj)].abs());
            }
        }
        // split at negligible subdiagonal entries
        let mut lo = hi;
        while lo > 0 {
            let s = t[ix(n, lo - 1, lo - 1)].abs() + t[ix(n, lo, lo)].abs();
            let s = if s == T::zero() { hnorm } else { s };
            if t[ix(n, lo, lo - 1)].abs() <= eps * s {
                t[ix(n, lo, lo - 1)] = T::zero();
                break;
            }
            lo -= 1;
        }
        if lo == hi {
            since_deflation = 0;
            if hi <= 1 {
                if hi == 1 && t[ix(n, 1, 0)] != T::zero() {
                    standardize_block(t, q, n, 0);
                }
                return Ok(());
            }
            hi -= 1;
            continue;
        }
        if lo + 1 == hi {
            standardize_block(t, q, n, lo);
            since_deflation = 0;
            if lo == 0 {
                return Ok(());
            }
            hi = lo - 1;
            continue;
        }
        sweeps += 1;
        since_deflation += 1;
        if sweeps > max_sweeps {
            return Err(DenseError::QrStalled { remaining: hi + 1 });
        }
        // double shift from the trailing 2x2, with the classic ad hoc
        // perturbation when the window refuses to deflate
        let (ssum, sprod) = if since_deflation % 10 == 0 {
            let mut ss = t[ix(n, hi, hi - 1)].abs();
            if hi >= lo + 2 {
                ss += t[ix(n, hi - 1, hi - 2)].abs();
            }
            let aa = T::of(0.75) * ss + t[ix(n, hi, hi)];
            (aa + aa, aa * aa + T::of(0.4375) * ss * ss)
        } else {
            let h11 = t[ix(n, hi - 1, hi - 1)];
            let h12 = t[ix(n, hi - 1, hi)];
            let h21 = t[ix(n, hi, hi - 1)];
            let h22 = t[ix(n, hi, hi)];
            (h11 + h22, h11 * h22 - h12 * h21)
        };
        // first column of (H - s1)(H - s2) e1, direction only
        let h00 = t[ix(n, lo, lo)];
        let h10 = t[ix(n, lo + 1, lo)];
        let mut p = h00 * h00 + t[ix(n, lo, lo + 1)] * h10 - ssum * h00 + sprod;
        let mut qq = h10 * (h00 + t[ix(n, lo + 1, lo + 1)] - ssum);
        let mut rr = h10 * t[ix(n, lo + 2, lo + 1)];
        let scale = p.abs() + qq.abs() + rr.abs();
        if scale != T::zero() {
            p /= scale;
            qq /= scale;
            rr /= scale;
        }
        for k in lo..hi {
            let three = k + 1 < hi;
            let (v1, v2, tau, beta) = if three {
                house3(p, qq, rr)
            } else {
                house3(p, qq, T::zero())
            };
            if k > lo {
                t[ix(n, k, k - 1)] = beta;
                t[ix(n, k + 1, k - 1)] = T::zero();
                if three {
                    t[ix(n, k + 2, k - 1)] = T::zero();
                }
            }
            if tau != T::zero() {
                // left: rows k..k+2 (or k..k+1), columns k..n
                for j in k..n {
                    let mut s = t[ix(n, k, j)] + v1 * t[ix(n, k + 1, j)];
                    if three {
                        s += v2 * t[ix(n, k + 2, j)];
                    }
                    s *= tau;
                    t[ix(n, k, j)] -= s;
                    t[ix(n, k + 1, j)] -= s * v1;
                    if three {
                        t[ix(n, k + 2, j)] -= s * v2;
                    }
                }
                // right: columns k..k+2 over rows reaching the bulge
                let rmax = if three { (k + 3).min(hi) } else { hi };
                for i in 0..=rmax {
                    let mut s = t[ix(n, i, k)] + v1 * t[ix(n, i, k + 1)];
                    if three {
                        s += v2 * t[ix(n, i, k + 2)];
                    }
                    s *= tau;
                    t[ix(n, i, k)] -= s;
                    t[ix(n, i, k + 1)] -= s * v1;
                    if three {
                        t[ix(n, i, k + 2)] -= s * v2;
                    }
                }
                for i in 0..n {
                    let mut s = q[ix(n, i, k)] + v1 * q[ix(n, i, k + 1)];
                    if three {
                        s += v2 * q[ix(n, i, k + 2)];
                    }
                    s *= tau;
                    q[ix(n, i, k)] -= s;
                    q[ix(n, i, k + 1)] -= s * v1;
                    if three {
                        q[ix(n, i, k + 2)] -= s * v2;
                    }
                }
            }
            p = t[ix(n, k + 1, k)];
            if k + 2 <= hi {
                qq = t[ix(n, k + 2, k)];
            }
            rr = if k + 3 <= hi { t[ix(n, k + 3, k)] } else { T::zero() };
        }
    }
}

/// Solves the tiny linear system for a block swap by Gaussian elimination
/// with partial pivoting. Returns false when a pivot is negligible, which
/// happens only if the two blocks share an eigenvalue.
fn solve_small<T: Real>(a: &mut [T], b: &mut [T], m: usize) -> bool {
    let mut anorm = T::zero();
    for v in a.iter() {
        anorm = anorm.max(v.abs());
    }
    let floor = anorm * T::epsilon() * T::of(16.0) + T::min_positive_value();
    for k in 0..m {
        let mut piv = k;
        for i in k + 1..m {
            if a[ix(m, i, k)].abs() > a[ix(m, piv, k)].abs() {
                piv = i;
            }
        }
        if a[ix(m, piv, k)].abs() <= floor {
            return false;
        }
        if piv != k {
            for j in 0..m {
                a.swap(ix(m, k, j), ix(m, piv, j));
            }
            b.swap(k, piv);
        }
        let d = a[ix(m, k, k)];
        for i in k + 1..m {
            let f = a[ix(m, i, k)] / d;
            if f == T::zero() {
                continue;
            }
            for j in k..m {
                let v = a[ix(m, k, j)];
                a[ix(m, i, j)] -= f * v;
            }
            b[i] -= f * b[k];
        }
    }
    for k in (0..m).rev() {
        let mut s = b[k];
        for j in k + 1..m {
            s -= a[ix(m, k, j)] * b[j];
        }
        b[k] = s / a[ix(m, k, k)];
    }
    true
}

/// Swaps the adjacent diagonal blocks at `(j, p)` and `(j+p, qs)`.
///
/// The direct method: solve the small Sylvester equation for the coupling,
/// orthonormalize the invariant subspace of the trailing block, and apply
/// the resulting similarity. The swap is accepted only when the would-be
/// zero block actually comes out negligible, so failure leaves the
/// decomposition intact.
fn swap_blocks<T: Real>(t: &mut [T], q: &mut [T], n: usize, j: usize, p: usize, qs: usize) -> bool {
    if p == 1 && qs == 1 {
        let t12 = t[ix(n, j, j + 1)];
        let diff = t[ix(n, j + 1, j + 1)] - t[ix(n, j, j)];
        let r = t12.hypot(diff);
        if r == T::zero() {
            return true; // equal eigenvalues, nothing to move
        }
        let (l1, l2) = (t[ix(n, j, j)], t[ix(n, j + 1, j + 1)]);
        rotate(t, q, n, j, t12 / r, diff / r);
        t[ix(n, j + 1, j)] = T::zero();
        t[ix(n, j, j)] = l2;
        t[ix(n, j + 1, j + 1)] = l1;
        return true;
    }
    let m = p + qs;
    // local copies of the blocks
    let mut d = [T::zero(); 16];
    for a in 0..m {
        for b in 0..m {
            d[ix(m, a, b)] = t[ix(n, j + a, j + b)];
        }
    }
    let mut dnorm = T::zero();
    for a in 0..m {
        for b in 0..m {
            dnorm = dnorm.max(d[ix(m, a, b)].abs());
        }
    }
    // sylvester: B11 X - X B22 = -B12, so [[X], [I]] spans the invariant
    // subspace of the trailing block; unknowns X (p by qs) in row-major vec
    let sz = p * qs;
    let mut sys = [T::zero(); 16];
    let mut rhs = [T::zero(); 4];
    for a in 0..p {
        for b in 0..qs {
            let row = a * qs + b;
            rhs[row] = -d[ix(m, a, p + b)];
            for c in 0..p {
                sys[ix(sz, row, c * qs + b)] += d[ix(m, a, c)];
            }
            for e in 0..qs {
                sys[ix(sz, row, a * qs + e)] -= d[ix(m, p + e, p + b)];
            }
        }
    }
    if !solve_small(&mut sys[..sz * sz], &mut rhs[..sz], sz) {
        return false;
    }
    // orthonormalize the columns of [[X], [I]] with Householder QR,
    // accumulating the full square factor
    let mut g = [T::zero(); 16];
    for a in 0..p {
        for b in 0..qs {
            g[ix(qs, a, b)] = rhs[a * qs + b];
        }
    }
    for b in 0..qs {
        g[ix(qs, p + b, b)] = T::one();
    }
    let mut qs_full = [T::zero(); 16];
    for a in 0..m {
        qs_full[ix(m, a, a)] = T::one();
    }
    for col in 0..qs {
        let len = m - col;
        let x0 = g[ix(qs, col, col)];
        let mut sigma = T::zero();
        for i in 1..len {
            sigma += g[ix(qs, col + i, col)] * g[ix(qs, col + i, col)];
        }
        let (v, tau) = {
            let mut v = [T::zero(); 4];
            v[0] = T::one();
            if sigma == T::zero() {
                (v, T::zero())
            } else {
                let mu = (x0 * x0 + sigma).sqrt();
                let beta = if x0 <= T::zero() { mu } else { -mu };
                let denom = x0 - beta;
                for i in 1..len {
                    v[i] = g[ix(qs, col + i, col)] / denom;
                }
                g[ix(qs, col, col)] = beta;
                for i in 1..len {
                    g[ix(qs, col + i, col)] = T::zero();
                }
                (v, (beta - x0) / beta)
            }
        };
        if tau != T::zero() {
            // push the reflector through the remaining columns of g
            for b in col + 1..qs {
                let mut s = T::zero();
                for i in 0..len {
                    s += v[i] * g[ix(qs, col + i, b)];
                }
                s *= tau;
                for i in 0..len {
                    g[ix(qs, col + i, b)] -= s * v[i];
                }
            }
            // accumulate qs_full = H0 H1 ... (right application)
            for row in 0..m {
                let mut s = T::zero();
                for i in 0..len {
                    s += qs_full[ix(m, row, col + i)] * v[i];
                }
                s *= tau;
                for i in 0..len {
                    qs_full[ix(m, row, col + i)] -= s * v[i];
                }
            }
        }
    }
    // candidate block: qs_full^t d qs_full
    let mut tmp = [T::zero(); 16];
    for a in 0..m {
        for b in 0..m {
            let mut s = T::zero();
            for c in 0..m {
                s += qs_full[ix(m, c, a)] * d[ix(m, c, b)];
            }
            tmp[ix(m, a, b)] = s;
        }
    }
    let mut dp = [T::zero(); 16];
    for a in 0..m {
        for b in 0..m {
            let mut s = T::zero();
            for c in 0..m {
                s += tmp[ix(m, a, c)] * qs_full[ix(m, c, b)];
            }
            dp[ix(m, a, b)] = s;
        }
    }
    let thresh = T::of(20.0) * T::epsilon() * dnorm + T::min_positive_value();
    for a in qs..m {
        for b in 0..qs {
            if dp[ix(m, a, b)].abs() > thresh {
                return false;
            }
        }
    }
    // accepted: apply the similarity to the full factors
    for col in 0..n {
        let mut s = [T::zero(); 4];
        for a in 0..m {
            let mut acc = T::zero();
            for c in 0..m {
                acc += qs_full[ix(m, c, a)] * t[ix(n, j + c, col)];
            }
            s[a] = acc;
        }
        for a in 0..m {
            t[ix(n, j + a, col)] = s[a];
        }
    }
    for row in 0..n {
        let mut s = [T::zero(); 4];
        for a in 0..m {
            let mut acc = T::zero();
            for c in 0..m {
                acc += t[ix(n, row, j + c)] * qs_full[ix(m, c, a)];
            }
            s[a] = acc;
        }
        for a in 0..m {
            t[ix(n, row, j + a)] = s[a];
        }
        let mut sq = [T::zero(); 4];
        for a in 0..m {
            let mut acc = T::zero();
            for c in 0..m {
                acc += q[ix(n, row, j + c)] * qs_full[ix(m, c, a)];
            }
            sq[a] = acc;
        }
        for a in 0..m {
            q[ix(n, row, j + a)] = sq[a];
        }
    }
    for a in qs..m {
        for b in 0..qs {
            t[ix(n, j + a, j + b)] = T::zero();
        }
    }
    if qs == 2 {
        standardize_block(t, q, n, j);
    }
    if p == 2 {
        standardize_block(t, q, n, j + qs);
    }
    true
}

/// Right eigenvectors of a quasi-triangular matrix by back substitution,
/// unit 2-norm, diagonal order, conjugate-closed.
///
/// Near-singular pivots (repeated eigenvalues) are floored rather than
/// rejected; the resulting vectors are still meaningful for well-separated
/// parts of the spectrum and callers recheck residuals anyway.
pub fn quasi_triangular_eigenvectors<T: Real>(t: &[T], n: usize) -> Vec<(Complex<T>, Vec<Complex<T>>)> {
    let mut tnorm = T::zero();
    for v in t.iter() {
        tnorm = tnorm.max(v.abs());
    }
    let smin = T::epsilon() * tnorm + T::min_positive_value();
    let blocks = block_list(t, n);
    let mut out = Vec::with_capacity(n);
    for bi in 0..blocks.len() {
        let (s, sz) = blocks[bi];
        let lam;
        let mut x = vec![Complex::new(T::zero(), T::zero()); n];
        if sz == 1 {
            lam = Complex::new(t[ix(n, s, s)], T::zero());
            x[s] = Complex::new(T::one(), T::zero());
        } else {
            let (re, im) = pair_of_block(t, n, s);
            lam = Complex::new(re, im);
            let b = t[ix(n, s, s + 1)];
            let c = t[ix(n, s + 1, s)];
            // eigenvector of [[a, b], [c, a]] for a + i q: (b, iq) or (iq, c)
            if b.abs() >= c.abs() {
                x[s] = Complex::new(b, T::zero());
                x[s + 1] = Complex::new(T::zero(), im);
            } else {
                x[s] = Complex::new(T::zero(), im);
                x[s + 1] = Complex::new(c, T::zero());
            }
        }
        let top = s + sz; // columns with nonzero entries so far
        for ub in (0..bi).rev() {
            let (i, bs) = blocks[ub];
            if bs == 1 {
                let mut rhs = Complex::new(T::zero(), T::zero());
                for k in i + 1..top {
                    rhs = rhs - x[k].scale(t[ix(n, i, k)]);
                }
                let mut d = Complex::new(t[ix(n, i, i)], T::zero()) - lam;
                let da = d.norm();
                if da < smin {
                    d = if da == T::zero() {
                        Complex::new(smin, T::zero())
                    } else {
                        d.scale(smin / da)
                    };
                }
                x[i] = rhs / d;
            } else {
                let mut r0 = Complex::new(T::zero(), T::zero());
                let mut r1 = Complex::new(T::zero(), T::zero());
                for k in i + 2..top {
                    r0 = r0 - x[k].scale(t[ix(n, i, k)]);
                    r1 = r1 - x[k].scale(t[ix(n, i + 1, k)]);
                }
                let a00 = Complex::new(t[ix(n, i, i)], T::zero()) - lam;
                let a01 = Complex::new(t[ix(n, i, i + 1)], T::zero());
                let a10 = Complex::new(t[ix(n, i + 1, i)], T::zero());
                let a11 = Complex::new(t[ix(n, i + 1, i + 1)], T::zero()) - lam;
                let mut det = a00 * a11 - a01 * a10;
                let dd = det.norm();
                if dd < smin * smin {
                    det = if dd == T::zero() {
                        Complex::new(smin * smin, T::zero())
                    } else {
                        det.scale(smin * smin / dd)
                    };
                }
                x[i] = (r0 * a11 - a01 * r1) / det;
                x[i + 1] = (a00 * r1 - r0 * a10) / det;
            }
        }
        let mut nrm = T::zero();
        for v in &x[..top] {
            nrm += v.norm_sqr();
        }
        let nrm = nrm.sqrt();
        if nrm > T::zero() {
            for v in x.iter_mut() {
                *v = v.unscale(nrm);
            }
        }
        if sz == 1 {
            out.push((lam, x));
        } else {
            let xc: Vec<Complex<T>> = x.iter().map(|v| v.conj()).collect();
            out.push((lam, x));
            out.push((lam.conj(), xc));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// complex path
// ---------------------------------------------------------------------------

/// Complex Schur decomposition `A = Q T Q^h` with triangular `T`.
#[derive(Debug, Clone)]
pub struct ComplexSchur<T: Real> {
    n: usize,
    t: Vec<Complex<T>>,
    q: Vec<Complex<T>>,
}

/// Computes the complex Schur decomposition via Givens reduction to
/// Hessenberg form and the implicit single-shift QR iteration.
pub fn complex_schur<T: Real>(a: &[Complex<T>], n: usize) -> Result<ComplexSchur<T>, DenseError> {
    if a.len() != n * n {
        return Err(DenseError::BadShape { len: a.len(), n });
    }
    let mut t = a.to_vec();
    let mut q = identity_c(n);
    hessenberg_c(&mut t, &mut q, n);
    qr_c(&mut t, &mut q, n)?;
    Ok(ComplexSchur { n, t, q })
}

impl<T: Real> ComplexSchur<T> {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> &[Complex<T>] {
        &self.t
    }

    pub fn q(&self) -> &[Complex<T>] {
        &self.q
    }

    /// Diagonal of `T`, in order.
    pub fn eigenvalues(&self) -> Vec<Complex<T>> {
        (0..self.n).map(|i| self.t[ix(self.n, i, i)]).collect()
    }

    /// Reorders so that every leading diagonal entry satisfies `pred`.
    /// Returns the verified leading count, as in the real case.
    pub fn select_to_front(&mut self, mut pred: impl FnMut(Complex<T>) -> bool) -> usize {
        let n = self.n;
        let mut target = 0usize;
        loop {
            let mut chosen = None;
            for s in target..n {
                if pred(self.t[ix(n, s, s)]) {
                    chosen = Some(s);
                    break;
                }
            }
            let Some(s) = chosen else { break };
            if s == target {
                target += 1;
                continue;
            }
            for pos in (target..s).rev() {
                swap_adjacent_c(&mut self.t, &mut self.q, n, pos);
            }
            target += 1;
        }
        let mut front = 0;
        while front < n && pred(self.t[ix(n, front, front)]) {
            front += 1;
        }
        front
    }

    /// Right eigenvectors of the original matrix, unit 2-norm.
    pub fn eigenvectors(&self) -> Vec<(Complex<T>, Vec<Complex<T>>)> {
        let n = self.n;
        triangular_eigenvectors(&self.t, n)
            .into_iter()
            .map(|(lam, x)| {
                let mut y = vec![Complex::new(T::zero(), T::zero()); n];
                for i in 0..n {
                    let mut acc = Complex::new(T::zero(), T::zero());
                    for k in 0..n {
                        acc = acc + self.q[ix(n, i, k)] * x[k];
                    }
                    y[i] = acc;
                }
                (lam, y)
            })
            .collect()
    }
}

fn identity_c<T: Real>(n: usize) -> Vec<Complex<T>> {
    let mut q = vec![Complex::new(T::zero(), T::zero()); n * n];
    for i in 0..n {
        q[ix(n, i, i)] = Complex::new(T::one(), T::zero());
    }
    q
}

/// Complex Givens rotation: returns `(c, s)` with `c` real so that
/// `[[c, s], [-conj(s), c]] [f; g] = [r; 0]`.
fn givens_c<T: Real>(f: Complex<T>, g: Complex<T>) -> (T, Complex<T>) {
    let gn = g.norm();
    if gn == T::zero() {
        return (T::one(), Complex::new(T::zero(), T::zero()));
    }
    let fn_ = f.norm();
    if fn_ == T::zero() {
        return (T::zero(), g.conj().unscale(gn));
    }
    let d = (fn_ * fn_ + gn * gn).sqrt();
    let phase = f.unscale(fn_);
    (fn_ / d, phase * g.conj().unscale(d))
}

/// Applies the rotation as a similarity on rows/columns `(j, j+1)`:
/// left by `G`, right by `G^h`, and `q <- q G^h`.
fn rotate_c<T: Real>(
    t: &mut [Complex<T>],
    q: &mut [Complex<T>],
    n: usize,
    j: usize,
    c: T,
    s: Complex<T>,
) {
    for col in 0..n {
        let a = t[ix(n, j, col)];
        let b = t[ix(n, j + 1, col)];
        t[ix(n, j, col)] = a.scale(c) + s * b;
        t[ix(n, j + 1, col)] = b.scale(c) - s.conj() * a;
    }
    for row in 0..n {
        let a = t[ix(n, row, j)];
        let b = t[ix(n, row, j + 1)];
        t[ix(n, row, j)] = a.scale(c) + s.conj() * b;
        t[ix(n, row, j + 1)] = b.scale(c) - s * a;
        let a = q[ix(n, row, j)];
        let b = q[ix(n, row, j + 1)];
        q[ix(n, row, j)] = a.scale(c) + s.conj() * b;
        q[ix(n, row, j + 1)] = b.scale(c) - s * a;
    }
}

fn hessenberg_c<T: Real>(t: &mut [Complex<T>], q: &mut [Complex<T>], n: usize) {
    if n < 3 {
        return;
    }
    for k in 0..n - 2 {
        for i in (k + 2..n).rev() {
            if t[ix(n, i, k)].norm() == T::zero() {
                continue;
            }
            let (c, s) = givens_c(t[ix(n, i - 1, k)], t[ix(n, i, k)]);
            rotate_c(t, q, n, i - 1, c, s);
            t[ix(n, i, k)] = Complex::new(T::zero(), T::zero());
        }
    }
}

fn qr_c<T: Real>(t: &mut [Complex<T>], q: &mut [Complex<T>], n: usize) -> Result<(), DenseError> {
    if n < 2 {
        return Ok(());
    }
    let eps = T::epsilon();
    let mut hi = n - 1;
    let mut since_deflation = 0usize;
    let mut sweeps = 0usize;
    let max_sweeps = 60 * n;
    loop {
        let mut hnorm = T::zero();
        for i in 0..=hi {
            for jj in i.saturating_sub(1)..=hi {
                hnorm = hnorm.max(t[ix(n, i, jj)].norm());
            }
        }
        let mut lo = hi;
        while lo > 0 {
            let s = t[ix(n, lo - 1, lo - 1)].norm() + t[ix(n, lo, lo)].norm();
            let s = if s == T::zero() { hnorm } else { s };
            if t[ix(n, lo, lo - 1)].norm() <= eps * s {
                t[ix(n, lo, lo - 1)] = Complex::new(T::zero(), T::zero());
                break;
            }
            lo -= 1;
        }
        if lo == hi {
            since_deflation = 0;
            if hi <= 1 {
                return Ok(());
            }
            hi -= 1;
            continue;
        }
        sweeps += 1;
        since_deflation += 1;
        if sweeps > max_sweeps {
            return Err(DenseError::QrStalled { remaining: hi + 1 });
        }
        let shift = if since_deflation % 10 == 0 {
            t[ix(n, hi, hi)] + Complex::new(T::of(0.75) * t[ix(n, hi, hi - 1)].norm(), T::zero())
        } else {
            // wilkinson: trailing 2x2 eigenvalue closest to the corner
            let a = t[ix(n, hi - 1, hi - 1)];
            let b = t[ix(n, hi - 1, hi)];
            let c = t[ix(n, hi, hi - 1)];
            let d = t[ix(n, hi, hi)];
            let m = (a + d).scale(T::of(0.5));
            let det = a * d - b * c;
            let root = (m * m - det).sqrt();
            let l1 = m + root;
            let l2 = m - root;
            if (l1 - d).norm() <= (l2 - d).norm() {
                l1
            } else {
                l2
            }
        };
        let mut x = t[ix(n, lo, lo)] - shift;
        let mut y = t[ix(n, lo + 1, lo)];
        for k in lo..hi {
            let (c, s) = givens_c(x, y);
            rotate_c(t, q, n, k, c, s);
            if k > lo {
                t[ix(n, k + 1, k - 1)] = Complex::new(T::zero(), T::zero());
            }
            if k + 1 < hi {
                x = t[ix(n, k + 1, k)];
                y = t[ix(n, k + 2, k)];
            }
        }
    }
}

/// Swaps adjacent diagonal entries of a triangular matrix by a unitary
/// similarity built from the eigenvector of the trailing entry.
fn swap_adjacent_c<T: Real>(t: &mut [Complex<T>], q: &mut [Complex<T>], n: usize, j: usize) {
    let t12 = t[ix(n, j, j + 1)];
    let diff = t[ix(n, j + 1, j + 1)] - t[ix(n, j, j)];
    let r = (t12.norm_sqr() + diff.norm_sqr()).sqrt();
    if r == T::zero() {
        return;
    }
    let l1 = t[ix(n, j, j)];
    let l2 = t[ix(n, j + 1, j + 1)];
    // unitary with first column (t12, diff)/r: columns map exactly as the
    // real rotation with c complex; reuse rotate_c with the conjugate trick
    let c_col = t12.unscale(r);
    let s_col = diff.unscale(r);
    // G^h has rows (conj c, conj s; -s, c): rotate_c applies G rows with real
    // c, which this is not, so apply by hand
    for col in 0..n {
        let a = t[ix(n, j, col)];
        let b = t[ix(n, j + 1, col)];
        t[ix(n, j, col)] = c_col.conj() * a + s_col.conj() * b;
        t[ix(n, j + 1, col)] = c_col * b - s_col * a;
    }
    for row in 0..n {
        let a = t[ix(n, row, j)];
        let b = t[ix(n, row, j + 1)];
        t[ix(n, row, j)] = a * c_col + b * s_col;
        t[ix(n, row, j + 1)] = b * c_col.conj() - a * s_col.conj();
        let a = q[ix(n, row, j)];
        let b = q[ix(n, row, j + 1)];
        q[ix(n, row, j)] = a * c_col + b * s_col;
        q[ix(n, row, j + 1)] = b * c_col.conj() - a * s_col.conj();
    }
    t[ix(n, j + 1, j)] = Complex::new(T::zero(), T::zero());
    t[ix(n, j, j)] = l2;
    t[ix(n, j + 1, j + 1)] = l1;
}

/// Right eigenvectors of a triangular matrix by back substitution,
/// unit 2-norm, diagonal order. Near-singular pivots are floored.
pub fn triangular_eigenvectors<T: Real>(t: &[Complex<T>], n: usize) -> Vec<(Complex<T>, Vec<Complex<T>>)> {
    let mut tnorm = T::zero();
    for v in t.iter() {
        tnorm = tnorm.max(v.norm());
    }
    let smin = T::epsilon() * tnorm + T::min_positive_value();
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let lam = t[ix(n, j, j)];
        let mut x = vec![Complex::new(T::zero(), T::zero()); n];
        x[j] = Complex::new(T::one(), T::zero());
        for i in (0..j).rev() {
            let mut rhs = Complex::new(T::zero(), T::zero());
            for k in i + 1..=j {
                rhs = rhs - t[ix(n, i, k)] * x[k];
            }
            let mut d = t[ix(n, i, i)] - lam;
            let da = d.norm();
            if da < smin {
                d = if da == T::zero() {
                    Complex::new(smin, T::zero())
                } else {
                    d.scale(smin / da)
                };
            }
            x[i] = rhs / d;
        }
        let mut nrm = T::zero();
        for v in &x[..=j] {
            nrm += v.norm_sqr();
        }
        let nrm = nrm.sqrt();
        for v in x.iter_mut() {
            *v = v.unscale(nrm);
        }
        out.push((lam, x));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand_chacha::rand_core::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type C64 = Complex<f64>;

    fn uniform(rng: &mut ChaCha8Rng) -> f64 {
        rng.next_u32() as f64 / u32::MAX as f64
    }

    fn random_mat(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * n).map(|_| 2.0 * uniform(&mut rng) - 1.0).collect()
    }

    fn random_mat_c(n: usize, seed: u64) -> Vec<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * n)
            .map(|_| Complex::new(2.0 * uniform(&mut rng) - 1.0, 2.0 * uniform(&mut rng) - 1.0))
            .collect()
    }

    fn max_abs(v: &[f64]) -> f64 {
        v.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// max |q^t q - I|
    fn orth_defect(q: &[f64], n: usize) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += q[ix(n, k, i)] * q[ix(n, k, j)];
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }

    fn unitary_defect(q: &[C64], n: usize) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let mut s = Complex::new(0.0, 0.0);
                for k in 0..n {
                    s = s + q[ix(n, k, i)].conj() * q[ix(n, k, j)];
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((s - Complex::new(target, 0.0)).norm());
            }
        }
        worst
    }

    /// max |q t q^t - a|
    fn reconstruction_defect(s: &RealSchur<f64>, a: &[f64]) -> f64 {
        let n = s.dim();
        let (t, q) = (s.t(), s.q());
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    let mut tk = 0.0;
                    for l in 0..n {
                        tk += t[ix(n, k, l)] * q[ix(n, j, l)];
                    }
                    acc += q[ix(n, i, k)] * tk;
                }
                worst = worst.max((acc - a[ix(n, i, j)]).abs());
            }
        }
        worst
    }

    fn reconstruction_defect_c(s: &ComplexSchur<f64>, a: &[C64]) -> f64 {
        let n = s.dim();
        let (t, q) = (s.t(), s.q());
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let mut acc = Complex::new(0.0, 0.0);
                for k in 0..n {
                    let mut tk = Complex::new(0.0, 0.0);
                    for l in 0..n {
                        tk = tk + t[ix(n, k, l)] * q[ix(n, j, l)].conj();
                    }
                    acc = acc + q[ix(n, i, k)] * tk;
                }
                worst = worst.max((acc - a[ix(n, i, j)]).norm());
            }
        }
        worst
    }

    /// Greedy nearest-neighbour pairing of two spectra.
    fn assert_spectra_match(mine: &[C64], oracle: &[C64], tol: f64) {
        assert_eq!(mine.len(), oracle.len());
        let mut used = vec![false; oracle.len()];
        for m in mine {
            let mut best = usize::MAX;
            let mut bd = f64::INFINITY;
            for (i, o) in oracle.iter().enumerate() {
                if !used[i] && (m - o).norm() < bd {
                    bd = (m - o).norm();
                    best = i;
                }
            }
            used[best] = true;
            assert!(bd <= tol, "eigenvalue {m} off by {bd:.3e}");
        }
    }

    fn quasi_triangular_ok(t: &[f64], n: usize) {
        for i in 0..n {
            for j in 0..i.saturating_sub(1) {
                assert_eq!(t[ix(n, i, j)], 0.0, "entry ({i},{j}) below the subdiagonal");
            }
        }
        for (s, sz) in block_list(t, n) {
            if sz == 2 {
                assert_eq!(t[ix(n, s, s)], t[ix(n, s + 1, s + 1)], "block at {s} not standardized");
                assert!(
                    t[ix(n, s, s + 1)] * t[ix(n, s + 1, s)] < 0.0,
                    "block at {s} has a nonnegative off-diagonal product"
                );
                if s + 2 < n {
                    assert_eq!(t[ix(n, s + 2, s + 1)], 0.0, "blocks overlap at {s}");
                }
            }
        }
    }

    #[test]
    fn schur_reconstructs_random_matrices() {
        for &n in &[1usize, 2, 3, 5, 8, 13, 21, 34] {
            for seed in 0..3 {
                let a = random_mat(n, 100 * n as u64 + seed);
                let s = real_schur(&a, n).unwrap();
                quasi_triangular_ok(s.t(), n);
                let scale = max_abs(&a).max(1.0);
                assert!(
                    orth_defect(s.q(), n) <= 1e-13 * (n.max(1) as f64),
                    "q lost orthogonality at n={n} seed={seed}"
                );
                let d = reconstruction_defect(&s, &a);
                assert!(d <= 1e-12 * (n.max(1) as f64) * scale, "defect {d:.3e} at n={n} seed={seed}");
            }
        }
    }

    #[test]
    fn eigenvalues_match_dense_oracle() {
        for &n in &[2usize, 3, 5, 8, 13, 21] {
            for seed in 0..3 {
                let a = random_mat(n, 7 * n as u64 + seed);
                let s = real_schur(&a, n).unwrap();
                let mine = s.eigenvalues();
                let oracle: Vec<C64> = DMatrix::from_row_slice(n, n, &a)
                    .complex_eigenvalues()
                    .iter()
                    .copied()
                    .collect();
                assert_spectra_match(&mine, &oracle, 1e-8);
            }
        }
    }

    #[test]
    fn symmetric_input_gives_real_spectrum() {
        let n = 12;
        let b = random_mat(n, 42);
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[ix(n, i, j)] = b[ix(n, i, j)] + b[ix(n, j, i)];
            }
        }
        let s = real_schur(&a, n).unwrap();
        let mut mine: Vec<f64> = s
            .eigenvalues()
            .iter()
            .map(|l| {
                assert!(l.im.abs() <= 1e-9, "symmetric matrix produced imaginary part {}", l.im);
                l.re
            })
            .collect();
        mine.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let sym = DMatrix::from_row_slice(n, n, &a).symmetric_eigen();
        let mut oracle: Vec<f64> = sym.eigenvalues.iter().copied().collect();
        oracle.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (m, o) in mine.iter().zip(&oracle) {
            assert!((m - o).abs() <= 1e-9, "{m} vs {o}");
        }
    }

    #[test]
    fn eigenvectors_satisfy_defining_relation() {
        let n = 13;
        let a = random_mat(n, 5);
        let s = real_schur(&a, n).unwrap();
        let pairs = s.eigenvectors();
        assert_eq!(pairs.len(), n);
        let scale = max_abs(&a);
        for (lam, v) in &pairs {
            let mut worst = 0.0f64;
            for i in 0..n {
                let mut av = Complex::new(0.0, 0.0);
                for k in 0..n {
                    av = av + v[k].scale(a[ix(n, i, k)]);
                }
                worst = worst.max((av - lam * v[i]).norm());
            }
            assert!(worst <= 1e-10 * scale * (n as f64), "residual {worst:.3e} at {lam}");
        }
        // conjugate closure
        let spec: Vec<C64> = pairs.iter().map(|(l, _)| *l).collect();
        let conj: Vec<C64> = spec.iter().map(|l| l.conj()).collect();
        assert_spectra_match(&spec, &conj, 1e-12);
    }

    #[test]
    fn select_to_front_partitions_spectrum() {
        let n = 16;
        let a = random_mat(n, 11);
        let mut s = real_schur(&a, n).unwrap();
        let all = s.eigenvalues();
        let mut mags: Vec<f64> = all.iter().map(|l| l.norm()).collect();
        mags.sort_by(|x, y| y.partial_cmp(x).unwrap());
        let cut = 0.5 * (mags[5] + mags[6]); // aim for the six largest
        let front = s.select_to_front(|l| l.norm() > cut);
        let wanted: Vec<C64> = all.iter().copied().filter(|l| l.norm() > cut).collect();
        assert_eq!(front, wanted.len(), "front does not cover the selected eigenvalues");
        let leading: Vec<C64> = s.eigenvalues().into_iter().take(front).collect();
        assert_spectra_match(&leading, &wanted, 1e-8);
        quasi_triangular_ok(s.t(), n);
        assert!(orth_defect(s.q(), n) <= 1e-12);
        let d = reconstruction_defect(&s, &a);
        assert!(d <= 1e-11, "reorder broke the decomposition: {d:.3e}");
    }

    #[test]
    fn select_handles_trivial_predicates() {
        let n = 9;
        let a = random_mat(n, 23);
        let mut s = real_schur(&a, n).unwrap();
        assert_eq!(s.select_to_front(|_| true), n);
        assert_eq!(s.select_to_front(|_| false), 0);
    }

    #[test]
    fn defective_block_still_decomposes() {
        // jordan block: repeated eigenvalue without a second eigenvector
        let a = vec![1.0, 1.0, 0.0, 1.0];
        let s = real_schur(&a, 2).unwrap();
        for l in s.eigenvalues() {
            assert!((l - Complex::new(1.0, 0.0)).norm() <= 1e-12);
        }
        assert!(reconstruction_defect(&s, &a) <= 1e-14);
        for (_, v) in s.eigenvectors() {
            let mut worst = 0.0f64;
            for i in 0..2 {
                let mut av = Complex::new(0.0, 0.0);
                for k in 0..2 {
                    av = av + v[k].scale(a[ix(2, i, k)]);
                }
                worst = worst.max((av - v[i]).norm());
            }
            assert!(worst <= 1e-8);
        }
    }

    #[test]
    fn complex_schur_round_trip() {
        for &n in &[1usize, 2, 5, 13, 21] {
            let a = random_mat_c(n, 31 + n as u64);
            let s = complex_schur(&a, n).unwrap();
            for i in 0..n {
                for j in 0..i {
                    assert_eq!(s.t()[ix(n, i, j)], Complex::new(0.0, 0.0));
                }
            }
            assert!(unitary_defect(s.q(), n) <= 1e-13 * (n.max(1) as f64));
            let d = reconstruction_defect_c(&s, &a);
            assert!(d <= 2e-12 * (n.max(1) as f64), "defect {d:.3e} at n={n}");
            for (lam, v) in s.eigenvectors() {
                let mut worst = 0.0f64;
                for i in 0..n {
                    let mut av = Complex::new(0.0, 0.0);
                    for k in 0..n {
                        av = av + v[k] * a[ix(n, i, k)];
                    }
                    worst = worst.max((av - lam * v[i]).norm());
                }
                assert!(worst <= 1e-9 * (n as f64), "residual {worst:.3e} at {lam}");
            }
        }
    }

    #[test]
    fn complex_path_agrees_with_real_path_on_real_input() {
        let n = 12;
        let a = random_mat(n, 77);
        let ac: Vec<C64> = a.iter().map(|&x| Complex::new(x, 0.0)).collect();
        let sr = real_schur(&a, n).unwrap();
        let sc = complex_schur(&ac, n).unwrap();
        assert_spectra_match(&sr.eigenvalues(), &sc.eigenvalues(), 1e-8);
    }

    #[test]
    fn complex_select_to_front() {
        let n = 10;
        let a = random_mat_c(n, 3);
        let mut s = complex_schur(&a, n).unwrap();
        let all = s.eigenvalues();
        let mut res: Vec<f64> = all.iter().map(|l| l.re).collect();
        res.sort_by(|x, y| y.partial_cmp(x).unwrap());
        let cut = 0.5 * (res[3] + res[4]);
        let front = s.select_to_front(|l| l.re > cut);
        assert_eq!(front, 4);
        let leading: Vec<C64> = s.eigenvalues().into_iter().take(front).collect();
        let wanted: Vec<C64> = all.iter().copied().filter(|l| l.re > cut).collect();
        assert_spectra_match(&leading, &wanted, 1e-8);
        assert!(reconstruction_defect_c(&s, &a) <= 1e-11);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        assert!(matches!(
            real_schur(&[1.0, 2.0, 3.0], 2),
            Err(DenseError::BadShape { len: 3, n: 2 })
        ));
        assert!(matches!(
            complex_schur(&[Complex::new(1.0, 0.0)], 2),
            Err(DenseError::BadShape { len: 1, n: 2 })
        ));
    }
}
