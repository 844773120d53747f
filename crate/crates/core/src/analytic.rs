//! Closed-form reference solutions at zero datum amplitude.
//!
//! At sigma = 0 the linearized operator has point spectrum lambda_n = 3/2 + n/2
//! (n = 0, 1, ...) with multiplicity n + 1 in the axisymmetric setting. The
//! eigenfields factor through scalar solutions of the radial equation
//!
//! ```text
//!     f'' + (2/r + r/2) f' - l(l+1) f / r^2 + lambda f = 0,
//! ```
//!
//! solved by `f_{lambda,l}(r) = r^l 1F1(lambda + l/2; l + 3/2; -r^2/4)`, and
//! split into toroidal (pure swirl) and poloidal (meridional) families indexed
//! by the spherical degree l. The `lambda` in the radial equation is not the
//! operator eigenvalue itself: reducing the vector eigenproblem to the scalar
//! equation shifts the coefficient by +1/2 for the toroidal family and leaves
//! it unshifted for the poloidal one (see [`RadialEigenfunction::toroidal_mode`]
//! and [`RadialEigenfunction::poloidal_mode`]). This module provides the
//! confluent hypergeometric kernel, the radial solutions, and the eigenvalue
//! bookkeeping; the mesh sampler that turns a swirl mode into a nodal field is
//! [`crate::assembly::sample_toroidal_mode`].

use crate::scalar::Real;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticError {
    #[error("kummer_1f1: b = {0} is a nonpositive integer (function undefined)")]
    BadSecondParameter(f64),
    #[error("kummer_1f1: series failed to converge for (a={0}, b={1}, x={2})")]
    NoConvergence(f64, f64, f64),
    #[error("{0}")]
    Domain(String),
}

/// Taylor summation is used up to this argument magnitude; beyond it the
/// large-argument expansion takes over. 60 keeps the Taylor term count modest
/// while the asymptotic remainder at the crossover is already ~e^-60.
const TAYLOR_CUTOFF: f64 = 60.0;

const MAX_TERMS: usize = 4000;

/// Confluent hypergeometric function 1F1(a; b; x).
///
/// For x < 0 the alternating series is hopeless in floating point, so the
/// Kummer transform 1F1(a;b;x) = e^x 1F1(b-a; b; -x) rewrites everything in
/// terms of a nonnegative argument first. Positive arguments use plain Taylor
/// summation up to [`TAYLOR_CUTOFF`] and the standard large-argument expansion
/// beyond; when the (transformed) first parameter is a nonpositive integer the
/// series terminates and is summed exactly as a polynomial.
pub fn kummer_1f1<T: Real>(a: T, b: T, x: T) -> Result<T, AnalyticError> {
    if is_nonpositive_integer(b) {
        return Err(AnalyticError::BadSecondParameter(b.to_f64().unwrap_or(f64::NAN)));
    }
    if x == T::zero() {
        return Ok(T::one());
    }
    if x < T::zero() {
        // 1F1(a;b;x) = e^x * 1F1(b-a; b; -x), argument now positive.
        let val = kummer_nonnegative(b - a, b, -x)?;
        return Ok(x.exp() * val);
    }
    kummer_nonnegative(a, b, x)
}

/// 1F1(a; b; y) for y >= 0, b not a nonpositive integer.
fn kummer_nonnegative<T: Real>(a: T, b: T, y: T) -> Result<T, AnalyticError> {
    if is_nonpositive_integer(a) {
        return Ok(kummer_polynomial(a, b, y));
    }
    if y <= T::of(TAYLOR_CUTOFF) {
        kummer_taylor(a, b, y)
    } else {
        Ok(kummer_asymptotic(a, b, y))
    }
}

fn is_nonpositive_integer<T: Real>(v: T) -> bool {
    v <= T::zero() && v == v.round()
}

/// Terminating series for a = -m: a polynomial of degree m in y.
fn kummer_polynomial<T: Real>(a: T, b: T, y: T) -> T {
    let m = (-a).to_f64().unwrap() as usize;
    let mut term = T::one();
    let mut sum = T::one();
    let mut k = T::zero();
    for _ in 0..m {
        term = term * (a + k) * y / ((b + k) * (k + T::one()));
        sum = sum + term;
        k = k + T::one();
    }
    sum
}

/// Plain Taylor summation; all terms share one sign once k exceeds |a| for
/// a < 0, so the relative error stays at the level of term-count * epsilon.
fn kummer_taylor<T: Real>(a: T, b: T, y: T) -> Result<T, AnalyticError> {
    let mut term = T::one();
    let mut sum = T::one();
    let mut k = T::zero();
    let eps = T::epsilon();
    for _ in 0..MAX_TERMS {
        term = term * (a + k) * y / ((b + k) * (k + T::one()));
        sum = sum + term;
        k = k + T::one();
        if term.abs() <= eps * sum.abs() && k > a.abs() {
            return Ok(sum);
        }
    }
    Err(AnalyticError::NoConvergence(
        a.to_f64().unwrap_or(f64::NAN),
        b.to_f64().unwrap_or(f64::NAN),
        y.to_f64().unwrap_or(f64::NAN),
    ))
}

/// Large-argument expansion for y > TAYLOR_CUTOFF,
///
/// ```text
/// 1F1(a;b;y) ~ G(b)/G(a) e^y y^(a-b) S1  +  G(b)/G(b-a) cos(pi a) y^(-a) S2,
/// ```
///
/// with S1, S2 the usual divergent tails truncated at their smallest term. The
/// second branch is e^(-y)-small relative to the first but costs nothing and
/// covers parameter ranges where 1/G(a) nearly vanishes.
fn kummer_asymptotic<T: Real>(a: T, b: T, y: T) -> T {
    let dominant = (gamma(b) / gamma(a)) * y.exp() * y.powf(a - b) * asymptotic_tail(b - a, T::one() - a, y);
    let recessive = if is_nonpositive_integer(b - a) {
        T::zero()
    } else {
        (gamma(b) / gamma(b - a))
            * (T::of(std::f64::consts::PI) * a).cos()
            * y.powf(-a)
            * asymptotic_tail(a, a - b + T::one(), y)
    };
    dominant + recessive
}

/// sum_k (p)_k (q)_k / (k! y^k), truncated at the smallest term.
fn asymptotic_tail<T: Real>(p: T, q: T, y: T) -> T {
    let mut term = T::one();
    let mut sum = T::one();
    let mut best = T::infinity();
    let mut k = T::zero();
    for _ in 0..200 {
        term = term * (p + k) * (q + k) / ((k + T::one()) * y);
        if term.abs() >= best {
            break;
        }
        best = term.abs();
        sum = sum + term;
        k = k + T::one();
        if term.abs() <= T::epsilon() * sum.abs() {
            break;
        }
    }
    sum
}

/// Gamma function via the Lanczos approximation (g = 7, 9 coefficients),
/// reflected for arguments below 1/2. Poles at nonpositive integers return
/// infinity; callers needing those ranges must special-case first.
pub fn gamma<T: Real>(x: T) -> T {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let half = T::of(0.5);
    let pi = T::of(std::f64::consts::PI);
    if x < half {
        if is_nonpositive_integer(x) {
            return T::infinity();
        }
        // Reflection: G(x) G(1-x) = pi / sin(pi x).
        return pi / ((pi * x).sin() * gamma(T::one() - x));
    }
    let z = x - T::one();
    let mut acc = T::of(COEF[0]);
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc = acc + T::of(c) / (z + T::of(i as f64));
    }
    let t = z + T::of(G) + half;
    let sqrt_two_pi = T::of((2.0 * std::f64::consts::PI).sqrt());
    sqrt_two_pi * t.powf(z + half) * (-t).exp() * acc
}

/// Legendre polynomial P_l and its derivative at u in [-1, 1], by the
/// three-term recurrence (derivative via the standard relation; endpoints use
/// the closed-form limit l(l+1)/2 * (+-1)^(l+1)).
pub fn legendre<T: Real>(l: usize, u: T) -> (T, T) {
    if l == 0 {
        return (T::one(), T::zero());
    }
    let mut p_prev = T::one();
    let mut p = u;
    for k in 1..l {
        let kf = T::of(k as f64);
        let next = ((T::of(2.0) * kf + T::one()) * u * p - kf * p_prev) / (kf + T::one());
        p_prev = p;
        p = next;
    }
    let lf = T::of(l as f64);
    let denom = u * u - T::one();
    let dp = if denom.abs() < T::of(1e-14) {
        // P_l'(+-1) = (+-1)^(l+1) l(l+1)/2
        let sign = if u > T::zero() || l % 2 == 1 { T::one() } else { -T::one() };
        sign * lf * (lf + T::one()) * T::of(0.5)
    } else {
        lf * (u * p - p_prev) / denom
    };
    (p, dp)
}

/// Eigenvalue of the n-th discrete cluster at sigma = 0: 3/2 + n/2.
pub fn sigma0_eigenvalue<T: Real>(n: usize) -> T {
    T::of(1.5) + T::of(n as f64) * T::of(0.5)
}

/// Axisymmetric multiplicity of the n-th cluster.
pub fn sigma0_multiplicity(n: usize) -> usize {
    n + 1
}

/// Spherical degrees of the toroidal members of cluster n:
/// l in {1, 3, ..., n+1} for n even, {2, 4, ..., n+1} for n odd.
pub fn toroidal_degrees(n: usize) -> Vec<usize> {
    let start = if n % 2 == 0 { 1 } else { 2 };
    (start..=n + 1).step_by(2).collect()
}

/// Spherical degrees of the poloidal members of cluster n:
/// l in {2, 4, ..., n} for n even, {1, 3, ..., n} for n odd.
pub fn poloidal_degrees(n: usize) -> Vec<usize> {
    let start = if n % 2 == 0 { 2 } else { 1 };
    if n == 0 {
        return Vec::new();
    }
    (start..=n).step_by(2).collect()
}

/// Radial factor `f_{lambda,l}(r) = r^l 1F1(lambda + l/2; l + 3/2; -r^2/4)` of
/// the scalar eigenfunctions, with its closed-form derivative.
#[derive(Debug, Clone, Copy)]
pub struct RadialEigenfunction<T> {
    pub lambda: T,
    pub l: usize,
}

impl<T: Real> RadialEigenfunction<T> {
    pub fn new(lambda: T, l: usize) -> Result<Self, AnalyticError> {
        if l == 0 {
            return Err(AnalyticError::Domain("spherical degree l must be >= 1".into()));
        }
        if !lambda.is_finite() {
            return Err(AnalyticError::Domain("lambda must be finite".into()));
        }
        Ok(Self { lambda, l })
    }

    /// Radial factor of the pure-swirl (toroidal) eigenfield with operator
    /// eigenvalue `lambda` and degree `l`. The swirl component is
    /// `u_theta = f(rho) sin(theta) P_l'(cos(theta))`; inserting that ansatz
    /// into the vector eigenproblem, the zeroth-order -u/2 term lands on the
    /// radial equation as a +1/2 shift of its coefficient, so the factor is
    /// f_{lambda + 1/2, l}. For lambda = 3/2, l = 1 this is r e^(-r^2/4).
    pub fn toroidal_mode(lambda: T, l: usize) -> Result<Self, AnalyticError> {
        Self::new(lambda + T::of(0.5), l)
    }

    /// Radial factor of the meridional (poloidal) eigenfield with operator
    /// eigenvalue `lambda` and degree `l`; this reduction leaves the
    /// coefficient unshifted, so the factor is f_{lambda, l}. Together with
    /// [`Self::toroidal_mode`] the termination criterion then reproduces the
    /// cluster degree sets exactly: for lambda = 3/2 + n/2, the toroidal
    /// members are l = n+1, n-1, ... and the poloidal ones l = n, n-2, ...,
    /// in total n + 1 modes.
    pub fn poloidal_mode(lambda: T, l: usize) -> Result<Self, AnalyticError> {
        Self::new(lambda, l)
    }

    fn params(&self) -> (T, T) {
        let lf = T::of(self.l as f64);
        (self.lambda + lf * T::of(0.5), lf + T::of(1.5))
    }

    /// True when the hypergeometric series terminates, i.e. the factor decays
    /// like a polynomial times e^(-r^2/4). Exactly the terminating members
    /// belong to the point spectrum; a non-terminating factor only decays
    /// algebraically and falls outside the weighted space.
    pub fn terminates(&self) -> bool {
        let (a, b) = self.params();
        is_nonpositive_integer(b - a)
    }

    /// f(r). Finite for all r >= 0; f(0) = 0 since l >= 1.
    pub fn value(&self, r: T) -> Result<T, AnalyticError> {
        let (a, b) = self.params();
        let arg = -r * r * T::of(0.25);
        Ok(r.powi(self.l as i32) * kummer_1f1(a, b, arg)?)
    }

    /// f'(r), using d/dx 1F1(a;b;x) = (a/b) 1F1(a+1;b+1;x).
    pub fn derivative(&self, r: T) -> Result<T, AnalyticError> {
        let (a, b) = self.params();
        let arg = -r * r * T::of(0.25);
        let f1 = kummer_1f1(a, b, arg)?;
        let f2 = kummer_1f1(a + T::one(), b + T::one(), arg)?;
        let lf = T::of(self.l as f64);
        let lead = if self.l == 1 {
            f1
        } else {
            lf * r.powi(self.l as i32 - 1) * f1
        };
        Ok(lead - r.powi(self.l as i32 + 1) * T::of(0.5) * (a / b) * f2)
    }

    /// Value and derivative of g(r) = f(r)/r, extended smoothly through r = 0.
    /// Used by the poloidal field formulas, which only involve f/r and (r f)'/r.
    pub fn value_over_r(&self, r: T) -> Result<T, AnalyticError> {
        let (a, b) = self.params();
        if r == T::zero() {
            return Ok(if self.l == 1 { T::one() } else { T::zero() });
        }
        let arg = -r * r * T::of(0.25);
        Ok(r.powi(self.l as i32 - 1) * kummer_1f1(a, b, arg)?)
    }

    /// (r f(r))' / r, extended smoothly through r = 0.
    pub fn rf_prime_over_r(&self, r: T) -> Result<T, AnalyticError> {
        if r == T::zero() {
            return Ok(if self.l == 1 { T::of(2.0) } else { T::zero() });
        }
        Ok(self.value_over_r(r)? + self.derivative(r)?)
    }

    /// Leading large-r form: e^(-r^2/4) r^(2 lambda - 3) when the series
    /// terminates (lambda - (3+l)/2 a nonnegative integer), r^(-2 lambda)
    /// otherwise. Only the shape is meaningful; the constant is not included.
    pub fn asymptotic_shape(&self, r: T) -> T {
        let (a, b) = self.params();
        if is_nonpositive_integer(b - a) {
            (-r * r * T::of(0.25)).exp() * r.powf(T::of(2.0) * self.lambda - T::of(3.0))
        } else {
            r.powf(-T::of(2.0) * self.lambda)
        }
    }
}
