//! Compressed sparse row matrices with a shareable symbolic pattern.
//!
//! The pattern (row pointers plus sorted column indices) is factored out so
//! repeated numeric assemblies over the same mesh reuse one symbolic object.
//! Column indices are 32-bit: the largest systems here stay far below 2^32
//! rows, and the narrower index keeps desk-scale factorizations in memory.

use crate::scalar::{Real, Scalar};
use std::io::{self, BufRead, Write};
use std::sync::Arc;

/// Symbolic CSR structure: row extents and sorted, duplicate-free columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsrPattern {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
}

impl CsrPattern {
    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Value index of entry (i, j), if present.
    pub fn find(&self, i: usize, j: u32) -> Option<usize> {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.cols[lo..hi].binary_search(&j).ok().map(|k| lo + k)
    }
}

/// CSR matrix: shared pattern plus a value per stored entry.
#[derive(Debug, Clone)]
pub struct SparseMatrix<S> {
    pub pattern: Arc<CsrPattern>,
    pub values: Vec<S>,
}

impl<S: Scalar> SparseMatrix<S> {
    pub fn zeros(pattern: Arc<CsrPattern>) -> Self {
        let nnz = pattern.nnz();
        SparseMatrix { pattern, values: vec![S::zero(); nnz] }
    }

    pub fn n_rows(&self) -> usize {
        self.pattern.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.pattern.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.pattern.nnz()
    }

    pub fn get(&self, i: usize, j: u32) -> S {
        self.pattern.find(i, j).map_or(S::zero(), |k| self.values[k])
    }

    /// Adds `v` to the stored entry (i, j); panics if the entry is not in the
    /// pattern, which always signals an assembly bug.
    pub fn add(&mut self, i: usize, j: u32, v: S) {
        let k = self
            .pattern
            .find(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside the symbolic pattern"));
        self.values[k] += v;
    }

    /// y = A x.
    pub fn matvec(&self, x: &[S], y: &mut [S]) {
        assert_eq!(x.len(), self.n_cols());
        assert_eq!(y.len(), self.n_rows());
        for i in 0..self.n_rows() {
            let mut acc = S::zero();
            for k in self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1] {
                acc += self.values[k] * x[self.pattern.cols[k] as usize];
            }
            y[i] = acc;
        }
    }

    pub fn matvec_alloc(&self, x: &[S]) -> Vec<S> {
        let mut y = vec![S::zero(); self.n_rows()];
        self.matvec(x, &mut y);
        y
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> S::Re {
        let mut best = <S::Re as num_traits::Zero>::zero();
        for i in 0..self.n_rows() {
            let mut s = <S::Re as num_traits::Zero>::zero();
            for k in self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1] {
                s += self.values[k].modulus();
            }
            if s > best {
                best = s;
            }
        }
        best
    }

    /// Dense copy for small test oracles.
    pub fn to_dense(&self) -> Vec<Vec<S>> {
        let mut d = vec![vec![S::zero(); self.n_cols()]; self.n_rows()];
        for i in 0..self.n_rows() {
            for k in self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1] {
                d[i][self.pattern.cols[k] as usize] = self.values[k];
            }
        }
        d
    }

    /// Re-types the values through a map while keeping the pattern.
    pub fn map<S2: Scalar>(&self, f: impl Fn(S) -> S2) -> SparseMatrix<S2> {
        SparseMatrix {
            pattern: Arc::clone(&self.pattern),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Coordinate-format accumulator for building small matrices and tests.
#[derive(Debug, Clone)]
pub struct Triplets<S> {
    pub n_rows: usize,
    pub n_cols: usize,
    entries: Vec<(u32, u32, S)>,
}

impl<S: Scalar> Triplets<S> {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        Triplets { n_rows, n_cols, entries: Vec::new() }
    }

    pub fn push(&mut self, i: usize, j: usize, v: S) {
        debug_assert!(i < self.n_rows && j < self.n_cols);
        self.entries.push((i as u32, j as u32, v));
    }

    /// Sorts, merges duplicates and freezes into CSR.
    pub fn to_csr(mut self) -> SparseMatrix<S> {
        self.entries.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = Vec::with_capacity(self.n_rows + 1);
        let mut cols: Vec<u32> = Vec::with_capacity(self.entries.len());
        let mut values: Vec<S> = Vec::with_capacity(self.entries.len());
        row_ptr.push(0usize);
        let mut row = 0usize;
        for &(i, j, v) in &self.entries {
            while row < i as usize {
                row_ptr.push(cols.len());
                row += 1;
            }
            let row_start = *row_ptr.last().unwrap();
            if cols.len() > row_start && *cols.last().unwrap() == j {
                *values.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                values.push(v);
            }
        }
        while row < self.n_rows {
            row_ptr.push(cols.len());
            row += 1;
        }
        let pattern =
            CsrPattern { n_rows: self.n_rows, n_cols: self.n_cols, row_ptr, cols };
        SparseMatrix { pattern: Arc::new(pattern), values }
    }
}

/// Writes a real matrix in Matrix Market coordinate format (1-based).
pub fn write_matrix_market<T: Real>(
    m: &SparseMatrix<T>,
    w: &mut impl Write,
) -> io::Result<()> {
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", m.n_rows(), m.n_cols(), m.nnz())?;
    for i in 0..m.n_rows() {
        for k in m.pattern.row_ptr[i]..m.pattern.row_ptr[i + 1] {
            writeln!(w, "{} {} {:.17e}", i + 1, m.pattern.cols[k] + 1, m.values[k])?;
        }
    }
    Ok(())
}

/// Reads a real matrix in Matrix Market coordinate format. Accepts the
/// `general` and `symmetric` qualifiers (the latter mirrors off-diagonal
/// entries); comment lines start with `%`. Parse failures carry the
/// offending line number.
pub fn read_matrix_market<T: Real>(r: &mut impl BufRead) -> io::Result<SparseMatrix<T>> {
    fn bad(ln: usize, what: impl std::fmt::Display) -> io::Error {
        io::Error::new(io::ErrorKind::InvalidData, format!("line {ln}: {what}"))
    }
    let mut symmetric = false;
    let mut shape: Option<(usize, usize, usize)> = None;
    let mut t: Option<Triplets<T>> = None;
    let mut seen = 0usize;
    for (idx, line) in r.lines().enumerate() {
        let ln = idx + 1;
        let line = line?;
        let s = line.trim();
        if ln == 1 {
            let mut f = s.split_whitespace();
            let ok = f.next() == Some("%%MatrixMarket")
                && f.next() == Some("matrix")
                && f.next() == Some("coordinate")
                && f.next() == Some("real");
            symmetric = match f.next() {
                Some("general") | None => false,
                Some("symmetric") => true,
                Some(q) => return Err(bad(ln, format!("unsupported qualifier {q}"))),
            };
            if !ok {
                return Err(bad(ln, "expected a coordinate real MatrixMarket header"));
            }
            continue;
        }
        if s.is_empty() || s.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = s.split_whitespace().collect();
        if shape.is_none() {
            if fields.len() != 3 {
                return Err(bad(ln, "expected `rows cols nnz`"));
            }
            let dims: Vec<usize> = fields
                .iter()
                .map(|f| f.parse().map_err(|e| bad(ln, e)))
                .collect::<Result<_, _>>()?;
            shape = Some((dims[0], dims[1], dims[2]));
            t = Some(Triplets::new(dims[0], dims[1]));
            continue;
        }
        let (nr, nc, nnz) = shape.unwrap();
        if fields.len() != 3 {
            return Err(bad(ln, "expected `row col value`"));
        }
        let i: usize = fields[0].parse().map_err(|e| bad(ln, e))?;
        let j: usize = fields[1].parse().map_err(|e| bad(ln, e))?;
        let v: f64 = fields[2].parse().map_err(|e| bad(ln, e))?;
        if i == 0 || i > nr || j == 0 || j > nc {
            return Err(bad(ln, format!("entry ({i}, {j}) outside {nr} x {nc}")));
        }
        seen += 1;
        if seen > nnz {
            return Err(bad(ln, format!("more than the declared {nnz} entries")));
        }
        let tr = t.as_mut().unwrap();
        tr.push(i - 1, j - 1, T::of(v));
        if symmetric && i != j {
            tr.push(j - 1, i - 1, T::of(v));
        }
    }
    match (shape, t) {
        (Some((_, _, nnz)), Some(tr)) if seen == nnz => Ok(tr.to_csr()),
        (Some((_, _, nnz)), Some(_)) => Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("declared {nnz} entries but found {seen}"),
        )),
        _ => Err(io::Error::new(io::ErrorKind::InvalidData, "missing size line")),
    }
}
