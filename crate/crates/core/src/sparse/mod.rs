//! Sparse linear algebra: storage, fill-reducing ordering, LU factorization
//! with triangular solves, and a shift-invert Krylov-Schur eigensolver.

pub mod amd;
pub mod dense;
pub mod eigs;
pub mod lu;
pub mod matrix;

pub use dense::{complex_schur, real_schur, ComplexSchur, DenseError, RealSchur};
pub use eigs::{eigs_shift_invert, EigenPair, EigenPairSet, EigsError, IterationStats};
pub use lu::{factorize, factorize_with_order, LuError, LuFactorization, Refactor};
pub use matrix::{read_matrix_market, write_matrix_market, CsrPattern, SparseMatrix, Triplets};
