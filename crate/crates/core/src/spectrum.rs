//! Spectrum of the linearized profile operator: direct eigensolves near a
//! shift, eigenpair continuation along an amplitude branch, location of the
//! real-axis crossing, and the angular-momentum identity check.
//!
//! The discrete problem at amplitude sigma is the generalized pencil
//! `A(U_sigma) v = lambda kappa^2 M v`, where `A` is the profile Jacobian
//! with homogeneous wall and axis conditions and `M` is the velocity mass
//! matrix with constrained rows and columns masked. The `kappa^2` factor on
//! the mass term carries the domain rescaling into the spectral parameter;
//! at `kappa^2 = 1` the pencil reduces to the unrescaled problem.
//!
//! Direct solves at distinct amplitudes are independent: everything here
//! takes `&Assembler` and keeps its own workspace, so callers may evaluate
//! several amplitudes concurrently. Eigenpair *tracking* is inherently
//! sequential, each accepted pair seeding the next.

use num_complex::Complex;
use std::sync::Arc;

use thiserror::Error;

use crate::assembly::{Assembler, AssemblyError, Field};
use crate::continuation::{
    solve_at, Branch, ContinuationError, NewtonCfg, ProfileSolution, StepSchedule,
};
use crate::scalar::{Real, Scalar};
use crate::sparse::eigs::{
    dot_conj, eigs_shift_invert, matvec_re, norm2, pencil, EigenPair, EigenPairSet, EigsError,
};
use crate::sparse::lu::{factorize, LuError, LuFactorization};
use crate::sparse::matrix::SparseMatrix;

/// Eigenpairs requested by default when scanning a spectrum.
pub const DEFAULT_EIG_COUNT: usize = 36;
/// Relative 2-norm residual every reported eigenpair must satisfy.
const RESIDUAL_TOL: f64 = 1e-8;
/// Seeds re-verified at the first branch point may be this loose.
const SEED_TOL: f64 = 1e-7;
/// Successive tracked eigenvectors must overlap at least this much in the
/// mass inner product, else the tracked mode has been lost to a relabeling.
const OVERLAP_MIN: f64 = 0.8;
/// Eigenvalues within this relative distance of the real axis are snapped
/// onto it, keeping real modes on the cheap real arithmetic path.
const IM_SNAP: f64 = 1e-8;
/// Relative imaginary kick applied when a real tracking step fails and the
/// mode is suspected to have merged into a complex pair.
const COMPLEX_KICK: f64 = 0.02;
/// Newton iterations allowed per tracking step.
const TRACK_MAX_ITER: usize = 25;
/// Profile/eigenvalue evaluations allowed while refining a crossing.
const MAX_CROSSING_EVALS: usize = 64;

#[derive(Debug, Error)]
pub enum SpectrumError<T: Real> {
    #[error("eigensolve failed")]
    Eigs(#[from] EigsError<T>),
    #[error("profile solve failed during spectrum work")]
    Continuation(#[from] ContinuationError<T>),
    #[error("assembly failed")]
    Assembly(#[from] AssemblyError),
    #[error("linear solve failed")]
    Linear(#[from] LuError),
    #[error("solution was computed on a different mesh than the assembler")]
    MeshMismatch,
    #[error("eigenpair residual {residual:e} exceeds {tol:e}")]
    ResidualAboveTol { residual: T, tol: T },
    #[error("spectrum not closed under conjugation: {re}+{im}i has no partner")]
    ConjugateGap { re: T, im: T },
    #[error("mode tracking lost at sigma {sigma}: overlap {overlap} below {min}")]
    ModeLost { sigma: T, overlap: T, min: T },
    #[error("tracking Newton stalled at sigma {sigma}; last relative residual {residual:e}")]
    TrackStalled { sigma: T, residual: T },
    #[error("no sign change of Re lambda along the curve")]
    NoCrossing,
    #[error("eigenvalue has imaginary part {im:e} at trial sigma {sigma}; bracket too wide")]
    ComplexAtTrial { sigma: T, im: T },
    #[error("crossing refinement exceeded {0} evaluations")]
    TooManyEvals(usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
}

/// Computes the `k` eigenpairs of the linearized operator at `sol` nearest
/// `shift`, verified to the module residual tolerance and closed under
/// conjugation.
pub fn compute_spectrum<T: Real>(
    asm: &Assembler<T>,
    sol: &ProfileSolution<T>,
    k: usize,
    shift: Complex<T>,
) -> Result<EigenPairSet<T>, SpectrumError<T>> {
    compute_spectrum_warm(asm, sol, k, shift, None)
}

/// [`compute_spectrum`] with warm-start directions from a previous solve of
/// a nearby pencil.
pub fn compute_spectrum_warm<T: Real>(
    asm: &Assembler<T>,
    sol: &ProfileSolution<T>,
    k: usize,
    shift: Complex<T>,
    warm: Option<&[Vec<Complex<T>>]>,
) -> Result<EigenPairSet<T>, SpectrumError<T>> {
    if sol.mesh_hash != asm.space.mesh.hash() {
        return Err(SpectrumError::MeshMismatch);
    }
    let tol = T::of(RESIDUAL_TOL);
    let sys = asm.assemble_jacobian(&sol.field, sol.sigma, sol.kappa2)?;
    let b = scaled_matrix(&sys.mass_masked, sol.kappa2);
    let set = eigs_shift_invert(&sys.jacobian, &b, shift, k, tol, warm)?;
    for p in &set.pairs {
        if p.residual > tol {
            return Err(SpectrumError::ResidualAboveTol { residual: p.residual, tol });
        }
    }
    check_conjugate_closure(&set.pairs)?;
    Ok(set)
}

/// Shift for a spectrum scan: on the real axis at the expected smallest real
/// part, displaced slightly upward so a real eigenvalue can never make the
/// shifted pencil singular.
pub fn default_shift<T: Real>(smallest_re: T) -> Complex<T> {
    Complex::new(smallest_re, T::of(0.05))
}

fn scaled_matrix<T: Real>(m: &SparseMatrix<T>, factor: T) -> SparseMatrix<T> {
    let mut out = SparseMatrix::clone(m);
    for v in out.values.iter_mut() {
        *v *= factor;
    }
    out
}

/// Every eigenvalue with a nonnegligible imaginary part must have a
/// conjugate partner in the set (the pencil is real).
fn check_conjugate_closure<T: Real>(pairs: &[EigenPair<T>]) -> Result<(), SpectrumError<T>> {
    let tol = T::of(RESIDUAL_TOL);
    for p in pairs {
        let scale = T::one() + p.lambda.norm();
        if p.lambda.im.abs() <= tol * scale {
            continue;
        }
        let conj = p.lambda.conj();
        if !pairs.iter().any(|q| (q.lambda - conj).norm() <= tol * scale) {
            return Err(SpectrumError::ConjugateGap { re: p.lambda.re, im: p.lambda.im });
        }
    }
    Ok(())
}

/// One point of a tracked eigenvalue curve.
#[derive(Debug, Clone)]
pub struct CurvePoint<T: Real> {
    pub sigma: T,
    pub lambda: Complex<T>,
    /// Mass-normalized eigenvector, phase-fixed like the direct solver's.
    pub vector: Vec<Complex<T>>,
    /// Recomputed relative 2-norm pencil residual.
    pub residual: T,
}

/// An eigenvalue followed through a sequence of profile solutions.
#[derive(Debug, Clone)]
pub struct EigenCurve<T: Real> {
    pub points: Vec<CurvePoint<T>>,
    /// `|<v_i, M v_{i+1}>|` for successive points; all at least the module
    /// overlap floor, certifying the curve follows one physical mode.
    pub overlaps: Vec<T>,
}

impl<T: Real> EigenCurve<T> {
    pub fn last(&self) -> &CurvePoint<T> {
        self.points.last().expect("curve has at least its seed point")
    }

    /// Minimum continuity certificate along the curve (1 for a single point).
    pub fn worst_overlap(&self) -> T {
        self.overlaps.iter().fold(T::one(), |a, &b| a.min(b))
    }
}

/// Workspace carrying factorization reuse across tracking steps.
pub struct TrackWorkspace<T: Real> {
    real: Option<LuFactorization<T>>,
    complex: Option<LuFactorization<Complex<T>>>,
}

impl<T: Real> Default for TrackWorkspace<T> {
    fn default() -> Self {
        TrackWorkspace { real: None, complex: None }
    }
}

/// Follows the eigenpair `seed` along a branch by Newton on the augmented
/// system `{A v - lambda kappa^2 M v = 0, c* v = 1}` with `c` the previous
/// eigenvector, re-verifying residual and mode overlap at every point.
pub fn track_eigenpair<T: Real>(
    asm: &Assembler<T>,
    branch: &Branch<T>,
    seed: &EigenPair<T>,
) -> Result<EigenCurve<T>, SpectrumError<T>> {
    track_along(asm, &branch.solutions, seed)
}

/// [`track_eigenpair`] over an explicit solution sequence; the order of the
/// slice is the tracking order, so a reversed slice tracks backwards.
pub fn track_along<T: Real>(
    asm: &Assembler<T>,
    solutions: &[ProfileSolution<T>],
    seed: &EigenPair<T>,
) -> Result<EigenCurve<T>, SpectrumError<T>> {
    let first = solutions.first().ok_or(SpectrumError::Empty("no solutions to track along"))?;
    if solutions.iter().any(|s| s.mesh_hash != asm.space.mesh.hash()) {
        return Err(SpectrumError::MeshMismatch);
    }
    let mass = asm.mass_masked();

    // re-verify the seed against the first point's pencil
    let sys = asm.assemble_jacobian(&first.field, first.sigma, first.kappa2)?;
    let mut vec0 = seed.vector.clone();
    let (res0, _) = finalize_pair(&sys.jacobian, &mass, first.kappa2, seed.lambda, &mut vec0);
    let seed_tol = T::of(SEED_TOL);
    if res0 > seed_tol {
        return Err(SpectrumError::ResidualAboveTol { residual: res0, tol: seed_tol });
    }
    let lambda0 = snap_real(seed.lambda, T::of(IM_SNAP));

    let mut points = vec![CurvePoint {
        sigma: first.sigma,
        lambda: lambda0,
        vector: vec0,
        residual: res0,
    }];
    let mut overlaps = Vec::new();
    let mut ws = TrackWorkspace::default();

    for sol in &solutions[1..] {
        let prev = points.last().expect("at least the seed point");
        let sys = asm.assemble_jacobian(&sol.field, sol.sigma, sol.kappa2)?;
        let (lambda, vector, residual) =
            track_step(&sys.jacobian, &mass, sol.kappa2, prev, &mut ws, sol.sigma)?;
        let overlap = mode_overlap(&mass, &prev.vector, &vector);
        let min = T::of(OVERLAP_MIN);
        if overlap < min {
            return Err(SpectrumError::ModeLost { sigma: sol.sigma, overlap, min });
        }
        overlaps.push(overlap);
        points.push(CurvePoint { sigma: sol.sigma, lambda, vector, residual });
    }
    Ok(EigenCurve { points, overlaps })
}

/// `|<x, M y>|` with both vectors mass-normalized, so 1 means same mode.
fn mode_overlap<T: Real>(
    mass: &SparseMatrix<T>,
    x: &[Complex<T>],
    y: &[Complex<T>],
) -> T {
    let mut my = vec![Complex::<T>::zero(); y.len()];
    matvec_re(mass, y, &mut my);
    dot_conj(x, &my).norm()
}

fn snap_real<T: Real>(lambda: Complex<T>, rel: T) -> Complex<T> {
    if lambda.im.abs() <= rel * (T::one() + lambda.norm()) {
        Complex::new(lambda.re, T::zero())
    } else {
        lambda
    }
}

/// One tracking step: real-arithmetic Newton while the mode is real, with a
/// complex fallback that lets a pair of colliding real eigenvalues leave the
/// axis (an imaginary kick breaks the real-invariant iteration).
fn track_step<T: Real>(
    a: &SparseMatrix<T>,
    mass: &SparseMatrix<T>,
    kappa2: T,
    prev: &CurvePoint<T>,
    ws: &mut TrackWorkspace<T>,
    sigma: T,
) -> Result<(Complex<T>, Vec<Complex<T>>, T), SpectrumError<T>> {
    let tol = T::of(RESIDUAL_TOL);
    let is_real = prev.lambda.im == T::zero();

    if is_real {
        let c: Vec<T> = prev.vector.iter().map(|z| z.re).collect();
        match bordered_newton::<T>(a, mass, kappa2, &c, prev.lambda.re, tol, &mut ws.real) {
            Ok((lam, v)) => {
                let mut vector: Vec<Complex<T>> =
                    v.into_iter().map(|x| Complex::new(x, T::zero())).collect();
                let lambda = Complex::new(lam, T::zero());
                let (residual, _) = finalize_pair(a, mass, kappa2, lambda, &mut vector);
                if residual <= tol {
                    return Ok((lambda, vector, residual));
                }
            }
            Err(TrackFail::Linear(e)) => return Err(SpectrumError::Linear(e)),
            Err(_) => {}
        }
    }

    // complex path; kick a real start off the axis so a merged pair is
    // reachable (a real iterate can never acquire an imaginary part)
    let mut lambda0 = prev.lambda;
    if is_real {
        lambda0.im = T::of(COMPLEX_KICK) * (T::one() + prev.lambda.norm());
    }
    let c = prev.vector.clone();
    match bordered_newton::<Complex<T>>(a, mass, kappa2, &c, lambda0, tol, &mut ws.complex) {
        Ok((lambda, mut vector)) => {
            let lambda = snap_real(lambda, T::of(IM_SNAP));
            let (residual, _) = finalize_pair(a, mass, kappa2, lambda, &mut vector);
            if residual > tol {
                return Err(SpectrumError::TrackStalled { sigma, residual });
            }
            // of the two conjugate representatives, keep the one continuing
            // the previous point; prefer im >= 0 when both do
            let keep_conj = if prev.lambda.im == T::zero() {
                lambda.im < T::zero()
            } else {
                let direct = mode_overlap(mass, &prev.vector, &vector);
                let conj_v: Vec<Complex<T>> = vector.iter().map(|z| z.conj()).collect();
                let swapped = mode_overlap(mass, &prev.vector, &conj_v);
                swapped > direct
            };
            if keep_conj {
                for z in vector.iter_mut() {
                    *z = z.conj();
                }
                return Ok((lambda.conj(), vector, residual));
            }
            Ok((lambda, vector, residual))
        }
        Err(TrackFail::Linear(e)) => Err(SpectrumError::Linear(e)),
        Err(TrackFail::Stalled { residual }) => Err(SpectrumError::TrackStalled { sigma, residual }),
    }
}

enum TrackFail<T: Real> {
    Stalled { residual: T },
    Linear(LuError),
}

/// Newton on the bordered system `{A v - lambda kappa^2 M v = 0, c* v = 1}`,
/// solved by block elimination through `C = A - lambda kappa^2 M`. The two
/// back-solves against `C` are individually ill-conditioned near the
/// eigenvalue, but their errors align with the null direction and cancel in
/// the eigenvalue update, which is what makes inverse iteration work.
fn bordered_newton<S: Scalar>(
    a: &SparseMatrix<S::Re>,
    mass: &SparseMatrix<S::Re>,
    kappa2: S::Re,
    c: &[S],
    lambda0: S,
    tol: S::Re,
    lu: &mut Option<LuFactorization<S>>,
) -> Result<(S, Vec<S>), TrackFail<S::Re>> {
    let n = c.len();
    let tiny = S::Re::min_positive_value().sqrt();

    // start on the constraint manifold: v = c / (c* c)
    let cc = dot_conj(c, c);
    if cc.modulus() <= tiny {
        return Err(TrackFail::Stalled { residual: S::Re::infinity() });
    }
    let mut v: Vec<S> = c.iter().map(|&x| x / cc).collect();
    let mut lambda = lambda0;

    let mut av = vec![S::zero(); n];
    let mut bv = vec![S::zero(); n];
    let mut r1 = vec![S::zero(); n];
    let mut last = S::Re::infinity();

    for it in 0..=TRACK_MAX_ITER {
        matvec_re(a, &v, &mut av);
        matvec_re(mass, &v, &mut bv);
        for x in bv.iter_mut() {
            *x = x.scale(kappa2);
        }
        for i in 0..n {
            r1[i] = av[i] - lambda * bv[i];
        }
        let vn = norm2(&v).max(tiny);
        last = norm2(&r1) / vn;
        if last <= tol {
            return Ok((lambda, v));
        }
        if it == TRACK_MAX_ITER {
            break;
        }

        let cmat = Arc::new(pencil(a, mass, lambda.scale(kappa2)));
        let fact = match lu.as_mut() {
            Some(f) => {
                f.refactorize(cmat).map_err(TrackFail::Linear)?;
                f
            }
            None => lu.insert(factorize(cmat).map_err(TrackFail::Linear)?),
        };
        let x1 = fact.solve(&r1).map_err(TrackFail::Linear)?;
        let x2 = fact.solve(&bv).map_err(TrackFail::Linear)?;

        let den = dot_conj(c, &x2);
        if den.modulus() <= tiny {
            return Err(TrackFail::Stalled { residual: last });
        }
        let r2 = dot_conj(c, &v) - S::one();
        let dl = (r2 - dot_conj(c, &x1)) / den;
        for i in 0..n {
            v[i] = v[i] - (x1[i] + dl * x2[i]);
        }
        lambda = lambda - dl;
        if !lambda.finite() {
            return Err(TrackFail::Stalled { residual: last });
        }
    }
    Err(TrackFail::Stalled { residual: last })
}

/// Mass-normalizes and phase-fixes `v` in place, then recomputes the
/// relative 2-norm pencil residual from scratch. Returns the residual and
/// the 2-norm of the normalized vector.
fn finalize_pair<T: Real>(
    a: &SparseMatrix<T>,
    mass: &SparseMatrix<T>,
    kappa2: T,
    lambda: Complex<T>,
    v: &mut [Complex<T>],
) -> (T, T) {
    let n = v.len();
    let tiny = T::min_positive_value().sqrt();
    let mut mv = vec![Complex::<T>::zero(); n];
    matvec_re(mass, v, &mut mv);
    let mnorm = dot_conj(v, &mv).re.max(T::zero()).sqrt();
    if mnorm > tiny {
        let inv = T::one() / mnorm;
        for x in v.iter_mut() {
            *x = x.scale(inv);
        }
    }
    let mut p_at = 0usize;
    let mut p_mag = T::zero();
    for (i, x) in v.iter().enumerate() {
        if x.norm_sqr() > p_mag {
            p_mag = x.norm_sqr();
            p_at = i;
        }
    }
    if p_mag > T::zero() {
        let phase = v[p_at].conj().unscale(v[p_at].norm());
        for x in v.iter_mut() {
            *x = *x * phase;
        }
    }
    let mut av = vec![Complex::<T>::zero(); n];
    matvec_re(a, v, &mut av);
    matvec_re(mass, v, &mut mv);
    let mut rsq = T::zero();
    for i in 0..n {
        rsq = rsq + (av[i] - lambda * mv[i].scale(kappa2)).norm_sqr();
    }
    let vn = norm2(v);
    let residual = if vn > T::zero() { rsq.sqrt() / vn } else { T::infinity() };
    (residual, vn)
}

/// Parity of a field under reflection across the symmetry plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParityClass {
    Even,
    Odd,
}

#[derive(Debug, Clone, Copy)]
pub struct SymmetryReport<T> {
    pub class: ParityClass,
    /// `min(|v - Rv|, |v + Rv|)_M / |v|_M`: distance to the nearer parity
    /// subspace, 0 for a vector of pure parity.
    pub defect: T,
}

/// Classifies a dof vector as reflection-even or -odd with a defect
/// certificate.
pub fn classify_symmetry<T: Real>(asm: &Assembler<T>, v: &[Complex<T>]) -> SymmetryReport<T> {
    let (re, im) = split_field(asm, v);
    let rre = crate::assembly::reflect_field(&re);
    let rim = crate::assembly::reflect_field(&im);

    let norm = |fr: &Field<T>, fi: &Field<T>, sign: T| -> T {
        let dr: Vec<T> = fr.data.iter().zip(&rre.data).map(|(a, b)| *a - sign * *b).collect();
        let di: Vec<T> = fi.data.iter().zip(&rim.data).map(|(a, b)| *a - sign * *b).collect();
        (asm.m_norm(&dr).powi(2) + asm.m_norm(&di).powi(2)).sqrt()
    };
    let vnorm =
        (asm.m_norm(&re.data).powi(2) + asm.m_norm(&im.data).powi(2)).sqrt().max(T::min_positive_value());
    let even_defect = norm(&re, &im, T::one());
    let odd_defect = norm(&re, &im, -T::one());
    if even_defect <= odd_defect {
        SymmetryReport { class: ParityClass::Even, defect: even_defect / vnorm }
    } else {
        SymmetryReport { class: ParityClass::Odd, defect: odd_defect / vnorm }
    }
}

fn split_field<T: Real>(asm: &Assembler<T>, v: &[Complex<T>]) -> (Field<T>, Field<T>) {
    let mut re = Field::zero(&asm.space);
    let mut im = Field::zero(&asm.space);
    for (i, z) in v.iter().enumerate() {
        re.data[i] = z.re;
        im.data[i] = z.im;
    }
    (re, im)
}

/// Angular momentum of the swirl component: the integral of `r u_theta`
/// over the domain with the cylindrical `r dr dz` measure. Computed as
/// `g^T M u` with `g` the swirl field `r`, which the quadratic elements
/// represent exactly, against the unmasked mass matrix.
pub fn angular_momentum_z<T: Real>(asm: &Assembler<T>, v: &[Complex<T>]) -> Complex<T> {
    let g = Field::from_fn(&asm.space, |r, _| [T::zero(), r, T::zero()], |_, _| T::zero());
    let mass = asm.mass();
    let mut mv = vec![Complex::<T>::zero(); v.len()];
    matvec_re(&mass, v, &mut mv);
    let mut acc = Complex::<T>::zero();
    for (gi, mvi) in g.data.iter().zip(&mv) {
        acc += mvi.scale(*gi);
    }
    acc
}

/// Violation of the angular-momentum identity: any eigenpair with
/// `lambda != 3/2` must have vanishing swirl angular momentum, so
/// `|(lambda - 3/2) * integral(r u_theta)| / |v|_M` measures how far the
/// discrete pair is from satisfying it.
pub fn momentum_identity_check<T: Real>(asm: &Assembler<T>, pair: &EigenPair<T>) -> T {
    let i = angular_momentum_z(asm, &pair.vector);
    let factor = pair.lambda - Complex::new(T::of(1.5), T::zero());
    let (re, im) = split_field(asm, &pair.vector);
    let vnorm = (asm.m_norm(&re.data).powi(2) + asm.m_norm(&im.data).powi(2)).sqrt();
    factor.norm() * i.norm() / vnorm.max(T::min_positive_value())
}

/// A refined sign change of a scalar function of sigma.
#[derive(Debug, Clone)]
pub struct BracketedRoot<T: Real, P> {
    /// Final secant estimate of the root.
    pub sigma0: T,
    /// Interval containing the root, no wider than the requested width.
    pub bracket: (T, T),
    /// Secant slope over the final bracket.
    pub slope: T,
    /// Caller payload from the evaluation nearest the root.
    pub payload: P,
    /// Evaluations spent.
    pub evals: usize,
}

/// Refines a sign change of `eval` between `sa` and `sb` to a bracket of at
/// most `width` by secant steps, falling back to bisection whenever the
/// secant point leaves the bracket interior.
pub fn refine_crossing<T: Real, P>(
    mut eval: impl FnMut(T) -> Result<(T, P), SpectrumError<T>>,
    sa: T,
    sb: T,
    width: T,
) -> Result<BracketedRoot<T, P>, SpectrumError<T>> {
    let mut evals = 0usize;
    let mut eval = move |s: T| -> Result<(T, P), SpectrumError<T>> {
        evals += 1;
        if evals > MAX_CROSSING_EVALS {
            return Err(SpectrumError::TooManyEvals(MAX_CROSSING_EVALS));
        }
        eval(s)
    };
    let (mut a, mut b) = (sa.min(sb), sa.max(sb));
    let (mut fa, pa) = eval(a)?;
    let (mut fb, pb) = eval(b)?;
    if fa == T::zero() {
        return Ok(BracketedRoot { sigma0: a, bracket: (a, a), slope: (fb - fa) / (b - a), payload: pa, evals: 2 });
    }
    if fb == T::zero() {
        return Ok(BracketedRoot { sigma0: b, bracket: (b, b), slope: (fb - fa) / (b - a), payload: pb, evals: 2 });
    }
    if (fa > T::zero()) == (fb > T::zero()) {
        return Err(SpectrumError::NoCrossing);
    }
    let mut best = if fa.abs() <= fb.abs() { (fa, pa) } else { (fb, pb) };
    let mut used = 2usize;

    while b - a > width {
        let gap = b - a;
        let margin = gap * T::of(0.01);
        let mut s = b - fb * gap / (fb - fa);
        if !s.is_finite() || s <= a + margin || s >= b - margin {
            s = a + gap * T::of(0.5);
        }
        let (fs, ps) = eval(s)?;
        used += 1;
        if fs.abs() < best.0.abs() {
            best = (fs, ps);
        }
        if fs == T::zero() {
            return Ok(BracketedRoot {
                sigma0: s,
                bracket: (s, s),
                slope: (fb - fa) / gap,
                payload: best.1,
                evals: used,
            });
        }
        if (fs > T::zero()) == (fa > T::zero()) {
            a = s;
            fa = fs;
        } else {
            b = s;
            fb = fs;
        }
    }
    let slope = (fb - fa) / (b - a);
    let sigma0 = (b - fb / slope).max(a).min(b);
    Ok(BracketedRoot { sigma0, bracket: (a, b), slope, payload: best.1, evals: used })
}

/// Where an eigenvalue curve crosses the real axis.
#[derive(Debug, Clone)]
pub struct CrossingReport<T: Real> {
    pub sigma0: T,
    pub bracket: (T, T),
    /// Secant estimate of `d(Re lambda)/d sigma` at the crossing.
    pub slope: T,
    /// Eigenvalue at the accepted trial nearest the crossing.
    pub lambda: Complex<T>,
    /// Eigenvector at that trial.
    pub vector: Vec<Complex<T>>,
    pub symmetry: SymmetryReport<T>,
    /// Profile and eigenvalue evaluations spent.
    pub evals: usize,
}

/// Locates the amplitude where the tracked eigenvalue's real part changes
/// sign, re-solving the nonlinear profile at every trial amplitude and
/// Newton-correcting the eigenpair there.
///
/// The curve must exhibit a real sign change; a trial eigenvalue leaving
/// the real axis means the bracket straddles structure the secant model
/// cannot see, and is reported as an error.
pub fn locate_crossing<T: Real>(
    asm: &Assembler<T>,
    branch: &Branch<T>,
    curve: &EigenCurve<T>,
    schedule: &StepSchedule<T>,
    cfg: NewtonCfg<T>,
    width: T,
) -> Result<CrossingReport<T>, SpectrumError<T>> {
    let im_tol = |l: Complex<T>| T::of(IM_SNAP) * (T::one() + l.norm());
    let change = curve
        .points
        .windows(2)
        .find(|w| {
            w[0].lambda.im.abs() <= im_tol(w[0].lambda)
                && w[1].lambda.im.abs() <= im_tol(w[1].lambda)
                && (w[0].lambda.re > T::zero()) != (w[1].lambda.re > T::zero())
        })
        .ok_or(SpectrumError::NoCrossing)?;
    let (sa, sb) = (change[0].sigma, change[1].sigma);

    let eval = |sigma: T| -> Result<(T, (Complex<T>, Vec<Complex<T>>)), SpectrumError<T>> {
        let near_sol = branch
            .solutions
            .iter()
            .min_by(|x, y| {
                (x.sigma - sigma).abs().partial_cmp(&(y.sigma - sigma).abs()).expect("finite sigmas")
            })
            .ok_or(SpectrumError::Empty("branch has no solutions"))?;
        let sol = solve_at(asm, near_sol, sigma, schedule, cfg)?;
        let near_pt = curve
            .points
            .iter()
            .min_by(|x, y| {
                (x.sigma - sigma).abs().partial_cmp(&(y.sigma - sigma).abs()).expect("finite sigmas")
            })
            .expect("curve has points");
        let sys = asm.assemble_jacobian(&sol.field, sol.sigma, sol.kappa2)?;
        let mass = asm.mass_masked();
        let mut ws = TrackWorkspace::default();
        let (lambda, vector, _residual) =
            track_step(&sys.jacobian, &mass, sol.kappa2, near_pt, &mut ws, sigma)?;
        if lambda.im.abs() > im_tol(lambda) {
            return Err(SpectrumError::ComplexAtTrial { sigma, im: lambda.im });
        }
        Ok((lambda.re, (lambda, vector)))
    };

    let root = refine_crossing(eval, sa, sb, width)?;
    let (lambda, vector) = root.payload;
    let symmetry = classify_symmetry(asm, &vector);
    Ok(CrossingReport {
        sigma0: root.sigma0,
        bracket: root.bracket,
        slope: root.slope,
        lambda,
        vector,
        symmetry,
        evals: root.evals,
    })
}
