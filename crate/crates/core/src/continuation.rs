//! Newton correction of the discrete profile equations and amplitude
//! continuation of solution branches, with a stepped schedule in the datum
//! amplitude sigma and a coarse-to-fine mesh lift.
//!
//! A converged profile at amplitude sigma lives on the rescaled domain with
//! kappa^2 = 1 + sigma/4; that pairing is kept exact by constructing every
//! solution through [`kappa2_of`]. Continuation uses the previous solution as
//! the predictor (with refreshed boundary data), halves the step on failure,
//! and can hold iterates in the reflection-even subspace so the symmetric
//! branch never drifts onto an asymmetric neighbour through round-off.

use crate::assembly::{
    interpolate_field, reflect_field, Assembler, AssemblyError, Field,
};
use crate::mesh::MeshError;
use crate::scalar::Real;
use crate::sparse::{factorize, LuError, LuFactorization};
use log::warn;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ContinuationError<T: Real> {
    #[error("guess violates the axis constraints or has the wrong length")]
    Inadmissible,
    #[error("field lives on a different mesh than the assembler")]
    MeshMismatch,
    #[error("starting solution re-verifies at residual {residual:e}, above tolerance {tol:e}")]
    StartNotConverged { residual: T, tol: T },
    #[error("Newton stalled after {max_iter} iterations at residual {last:e}")]
    NewtonStalled { max_iter: usize, last: T },
    #[error("linear solve failed (a singular Jacobian suggests a fold or bifurcation): {0}")]
    Linear(#[from] LuError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("continuation target {end} lies below the branch start {start}")]
    BackwardTarget { start: T, end: T },
    #[error("invalid step schedule: {0}")]
    BadSchedule(String),
    #[error("rim profile needs a nonzero datum amplitude")]
    ZeroAmplitude,
}

/// The exact domain rescaling paired with amplitude `sigma`.
pub fn kappa2_of<T: Real>(sigma: T) -> T {
    T::one() + sigma * T::of(0.25)
}

/// A converged profile at one datum amplitude.
#[derive(Debug, Clone)]
pub struct ProfileSolution<T: Real> {
    pub sigma: T,
    /// Equals `kappa2_of(sigma)` for every solution built here.
    pub kappa2: T,
    pub field: Field<T>,
    /// Euclidean norm of the assembled residual at acceptance.
    pub residual_norm: T,
    /// Newton corrections spent (0 when the guess already satisfied the
    /// tolerance).
    pub iterations: usize,
    /// Content hash of the mesh the field lives on.
    pub mesh_hash: u64,
    /// Branch tag carried into diagrams and checkpoints.
    pub label: String,
}

/// Where a branch came from: the branch it split off, if any, and the
/// amplitude of the split.
#[derive(Debug, Clone)]
pub struct Provenance<T> {
    pub parent: Option<String>,
    pub bifurcation_sigma: Option<T>,
}

impl<T> Default for Provenance<T> {
    fn default() -> Self {
        Provenance { parent: None, bifurcation_sigma: None }
    }
}

/// Why a continuation stopped early.
#[derive(Debug, Clone)]
pub struct BranchFailure<T> {
    /// The scheduled amplitude that could not be reached.
    pub sigma: T,
    pub message: String,
}

/// An ordered sweep of converged solutions sharing one mesh.
#[derive(Debug, Clone)]
pub struct Branch<T: Real> {
    pub solutions: Vec<ProfileSolution<T>>,
    pub schedule: StepSchedule<T>,
    pub provenance: Provenance<T>,
    /// Present when the sweep aborted before its target amplitude; the
    /// solutions up to that point are still valid.
    pub failure: Option<BranchFailure<T>>,
}

impl<T: Real> Branch<T> {
    pub fn last(&self) -> &ProfileSolution<T> {
        self.solutions.last().expect("a branch is never empty")
    }

    /// Largest M-distance per unit sigma between consecutive solutions, a
    /// finite-difference bound on the branch slope.
    pub fn max_secant_slope(&self, asm: &Assembler<T>) -> T {
        let mut best = T::zero();
        for w in self.solutions.windows(2) {
            let d: Vec<T> = w[1]
                .field
                .data
                .iter()
                .zip(&w[0].field.data)
                .map(|(&a, &b)| a - b)
                .collect();
            let ds = w[1].sigma - w[0].sigma;
            if ds > T::zero() {
                best = best.max(asm.m_norm(&d) / ds);
            }
        }
        best
    }
}

/// Piecewise-constant amplitude step sizes: each `(upper, step)` segment
/// applies below its upper bound, the last step continuing beyond it.
#[derive(Debug, Clone)]
pub struct StepSchedule<T> {
    segments: Vec<(T, T)>,
}

impl<T: Real> StepSchedule<T> {
    /// Validated schedule; uppers must ascend strictly and steps must be
    /// positive and finite.
    pub fn new(segments: Vec<(T, T)>) -> Result<Self, ContinuationError<T>> {
        if segments.is_empty() {
            return Err(ContinuationError::BadSchedule("no segments".into()));
        }
        for w in segments.windows(2) {
            if !(w[0].0 < w[1].0) {
                return Err(ContinuationError::BadSchedule(
                    "segment bounds must ascend strictly".into(),
                ));
            }
        }
        for &(_, h) in &segments {
            if !(h > T::zero()) || !h.is_finite() {
                return Err(ContinuationError::BadSchedule(
                    "steps must be positive and finite".into(),
                ));
            }
        }
        Ok(StepSchedule { segments })
    }

    /// The default sweep: 0.1 up to sigma = 2, then 0.5 up to 50, then 1.
    pub fn standard() -> Self {
        StepSchedule {
            segments: vec![
                (T::of(2.0), T::of(0.1)),
                (T::of(50.0), T::of(0.5)),
                (T::infinity(), T::one()),
            ],
        }
    }

    pub fn uniform(step: T) -> Result<Self, ContinuationError<T>> {
        Self::new(vec![(T::infinity(), step)])
    }

    pub fn segments(&self) -> &[(T, T)] {
        &self.segments
    }

    /// Step size governing motion upward from `sigma`.
    pub fn step_at(&self, sigma: T) -> T {
        for &(upper, h) in &self.segments {
            if sigma < upper {
                return h;
            }
        }
        self.segments.last().expect("validated nonempty").1
    }

    /// Step size governing motion downward from `sigma`.
    pub fn step_below(&self, sigma: T) -> T {
        for &(upper, h) in &self.segments {
            if sigma <= upper {
                return h;
            }
        }
        self.segments.last().expect("validated nonempty").1
    }

    /// Next grid point walking up toward `target`. Segment boundaries are hit
    /// exactly; a final sliver shorter than half a step is absorbed into the
    /// last move so `target` itself is returned exactly.
    pub fn next_up(&self, sigma: T, target: T) -> T {
        let h = self.step_at(sigma);
        let mut nxt = sigma + h;
        for &(upper, _) in &self.segments {
            if sigma < upper && upper < nxt {
                nxt = upper;
                break;
            }
        }
        if target < nxt + h * T::of(0.5) {
            nxt = target;
        }
        nxt
    }

    /// Mirror of [`Self::next_up`] for walking down toward `target`.
    pub fn next_down(&self, sigma: T, target: T) -> T {
        let h = self.step_below(sigma);
        let mut nxt = sigma - h;
        for &(upper, _) in self.segments.iter().rev() {
            if upper < sigma && nxt < upper {
                nxt = upper;
                break;
            }
        }
        if target > nxt - h * T::of(0.5) {
            nxt = target;
        }
        nxt
    }
}

/// Newton settings. `symmetric` holds every iterate in the reflection-even
/// subspace, which keeps a symmetric branch symmetric to round-off even where
/// the even/odd splitting of the Jacobian is nearly singular.
#[derive(Debug, Clone, Copy)]
pub struct NewtonCfg<T> {
    pub tol: T,
    pub max_iter: usize,
    pub symmetric: bool,
}

impl<T: Real> Default for NewtonCfg<T> {
    fn default() -> Self {
        NewtonCfg { tol: T::of(1e-10), max_iter: 8, symmetric: false }
    }
}

impl<T: Real> NewtonCfg<T> {
    pub fn symmetric(self) -> Self {
        NewtonCfg { symmetric: true, ..self }
    }
}

/// Carries the numeric LU factors between Newton solves on one assembler so
/// repeated corrections reuse the pivot sequence and factor patterns. Use a
/// fresh workspace per assembler; a mesh change is rejected by the solver.
pub struct NewtonWorkspace<T: Real> {
    lu: Option<LuFactorization<T>>,
}

impl<T: Real> Default for NewtonWorkspace<T> {
    fn default() -> Self {
        NewtonWorkspace { lu: None }
    }
}

fn l2<T: Real>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

fn symmetrize<T: Real>(u: &mut Field<T>) {
    let r = reflect_field(u);
    let half = T::of(0.5);
    for (a, b) in u.data.iter_mut().zip(r.data) {
        *a = (*a + b) * half;
    }
}

/// Newton's method on the profile equations at fixed `sigma`, from `guess`.
///
/// Converges when the Euclidean residual norm falls to `cfg.tol` (absolute);
/// the count of corrections is recorded on the result. The Jacobian is
/// refactorized in place through `ws`, so consecutive solves on the same
/// assembler share symbolic work.
pub fn newton_solve<T: Real>(
    asm: &Assembler<T>,
    mut guess: Field<T>,
    sigma: T,
    cfg: NewtonCfg<T>,
    ws: &mut NewtonWorkspace<T>,
) -> Result<ProfileSolution<T>, ContinuationError<T>> {
    if !guess.space.same_mesh(&asm.space) {
        return Err(ContinuationError::MeshMismatch);
    }
    if !guess.is_admissible() {
        return Err(ContinuationError::Inadmissible);
    }
    let kappa2 = kappa2_of(sigma);
    for it in 0..=cfg.max_iter {
        if cfg.symmetric {
            symmetrize(&mut guess);
        }
        let res = asm.assemble_residual(&guess, sigma, kappa2)?;
        let rn = l2(&res);
        if rn <= cfg.tol {
            return Ok(ProfileSolution {
                sigma,
                kappa2,
                field: guess,
                residual_norm: rn,
                iterations: it,
                mesh_hash: asm.space.mesh.hash(),
                label: String::new(),
            });
        }
        if it == cfg.max_iter {
            return Err(ContinuationError::NewtonStalled { max_iter: cfg.max_iter, last: rn });
        }
        let sys = asm.assemble_jacobian(&guess, sigma, kappa2)?;
        let jac = Arc::new(sys.jacobian);
        match ws.lu.as_mut() {
            Some(lu) => {
                lu.refactorize(jac)?;
            }
            None => ws.lu = Some(factorize(jac)?),
        }
        let delta = ws.lu.as_ref().expect("factorized above").solve(&res)?;
        for (u, d) in guess.data.iter_mut().zip(&delta) {
            *u -= *d;
        }
    }
    unreachable!("loop returns on the last iteration")
}

/// The trivial root of the zero-amplitude problem, labeled as the branch
/// origin. Costs one residual assembly (zero corrections).
pub fn base_start<T: Real>(
    asm: &Assembler<T>,
    cfg: NewtonCfg<T>,
) -> Result<ProfileSolution<T>, ContinuationError<T>> {
    let mut sol = newton_solve(asm, Field::zero(&asm.space), T::zero(), cfg, &mut NewtonWorkspace::default())?;
    sol.label = "base".into();
    Ok(sol)
}

fn verify_start<T: Real>(
    asm: &Assembler<T>,
    start: &ProfileSolution<T>,
    tol: T,
) -> Result<(), ContinuationError<T>> {
    if start.mesh_hash != asm.space.mesh.hash() || !start.field.space.same_mesh(&asm.space) {
        return Err(ContinuationError::MeshMismatch);
    }
    let res = asm.assemble_residual(&start.field, start.sigma, start.kappa2)?;
    let rn = l2(&res);
    if rn > tol {
        return Err(ContinuationError::StartNotConverged { residual: rn, tol });
    }
    Ok(())
}

/// One continuation step: try `target`, halving back toward `from` up to
/// four times. The caller decides what a final failure means.
fn step_with_halving<T: Real>(
    asm: &Assembler<T>,
    from: &ProfileSolution<T>,
    target: T,
    cfg: NewtonCfg<T>,
    ws: &mut NewtonWorkspace<T>,
) -> Result<ProfileSolution<T>, ContinuationError<T>> {
    let mut trial = target;
    let half = T::of(0.5);
    let mut last_err = None;
    for _ in 0..=4 {
        let mut guess = from.field.clone();
        guess.set_boundary(trial);
        match newton_solve(asm, guess, trial, cfg, ws) {
            Ok(mut sol) => {
                if sol.iterations > 3 {
                    warn!(
                        "slow Newton: {} iterations at sigma = {trial}",
                        sol.iterations
                    );
                }
                sol.label = from.label.clone();
                return Ok(sol);
            }
            Err(e) => {
                warn!("step to sigma = {trial} failed ({e}); halving");
                trial = from.sigma + (trial - from.sigma) * half;
                last_err = Some(e);
            }
        }
    }
    Err(last_err.expect("at least one attempt ran"))
}

/// Sweeps the branch of `start` up to `sigma_end` on the schedule grid,
/// using each converged solution as the next predictor. A step that still
/// fails after four halvings ends the sweep; the partial branch is returned
/// with the failure annotated rather than discarded.
pub fn continue_branch<T: Real>(
    asm: &Assembler<T>,
    start: ProfileSolution<T>,
    sigma_end: T,
    schedule: StepSchedule<T>,
    cfg: NewtonCfg<T>,
) -> Result<Branch<T>, ContinuationError<T>> {
    if sigma_end < start.sigma {
        return Err(ContinuationError::BackwardTarget { start: start.sigma, end: sigma_end });
    }
    verify_start(asm, &start, cfg.tol)?;
    let mut ws = NewtonWorkspace::default();
    let mut solutions = vec![start];
    let mut failure = None;
    while solutions.last().expect("nonempty").sigma < sigma_end {
        let cur = solutions.last().expect("nonempty");
        let target = schedule.next_up(cur.sigma, sigma_end);
        match step_with_halving(asm, cur, target, cfg, &mut ws) {
            Ok(sol) => solutions.push(sol),
            Err(e) => {
                failure = Some(BranchFailure { sigma: target, message: e.to_string() });
                break;
            }
        }
    }
    Ok(Branch {
        solutions,
        schedule,
        provenance: Provenance::default(),
        failure,
    })
}

/// Re-solves the profile at an arbitrary amplitude by walking there from a
/// converged solution in schedule-sized steps (either direction), returning
/// only the endpoint. Unlike [`continue_branch`], intermediate failures
/// propagate as errors.
pub fn solve_at<T: Real>(
    asm: &Assembler<T>,
    from: &ProfileSolution<T>,
    sigma_target: T,
    schedule: &StepSchedule<T>,
    cfg: NewtonCfg<T>,
) -> Result<ProfileSolution<T>, ContinuationError<T>> {
    verify_start(asm, from, cfg.tol)?;
    let mut ws = NewtonWorkspace::default();
    let mut cur = from.clone();
    while cur.sigma != sigma_target {
        let next = if sigma_target > cur.sigma {
            schedule.next_up(cur.sigma, sigma_target)
        } else {
            schedule.next_down(cur.sigma, sigma_target)
        };
        cur = step_with_halving(asm, &cur, next, cfg, &mut ws)?;
    }
    Ok(cur)
}

/// Interpolates a converged solution onto a finer space over the same domain
/// and re-corrects there. Identical meshes short-circuit to a residual
/// re-check. More than two corrections suggest the source solve was
/// under-resolved, and are warned about.
pub fn lift_to_fine<T: Real>(
    asm_fine: &Assembler<T>,
    sol: &ProfileSolution<T>,
    cfg: NewtonCfg<T>,
) -> Result<ProfileSolution<T>, ContinuationError<T>> {
    if sol.mesh_hash == asm_fine.space.mesh.hash() {
        verify_start(asm_fine, sol, cfg.tol)?;
        return Ok(sol.clone());
    }
    if sol.field.space.mesh.radius != asm_fine.space.mesh.radius {
        return Err(ContinuationError::Mesh(MeshError::Incompatible(
            "fine mesh covers a different domain".into(),
        )));
    }
    let mut guess = interpolate_field(&sol.field, &asm_fine.space)?;
    guess.set_boundary(sol.sigma);
    let mut lifted =
        newton_solve(asm_fine, guess, sol.sigma, cfg, &mut NewtonWorkspace::default())?;
    if lifted.iterations > 2 {
        warn!(
            "mesh lift at sigma = {} needed {} corrections; coarse solve may be under-resolved",
            sol.sigma, lifted.iterations
        );
    }
    lifted.label = sol.label.clone();
    Ok(lifted)
}

/// Scale-invariant rim profile of a solution: for each arc radius `s` in
/// `s_values`, the supremum over `n_angles` direction samples of
/// `s * |U| / sigma` on the arc of radius `s` around the origin. For the
/// rescaled fields stored here this equals the physical-space profile
/// `sigma^{-1} sup |x| |U(x)|` on the sphere of physical radius
/// `kappa * s`, because the rescaling factors cancel.
pub fn rim_profile<T: Real>(
    sol: &ProfileSolution<T>,
    s_values: &[T],
    n_angles: usize,
) -> Result<Vec<T>, ContinuationError<T>> {
    if sol.sigma == T::zero() {
        return Err(ContinuationError::ZeroAmplitude);
    }
    let n_angles = n_angles.max(2);
    let pi = T::of(std::f64::consts::PI);
    let mut out = Vec::with_capacity(s_values.len());
    for &s in s_values {
        let mut sup = T::zero();
        for k in 0..n_angles {
            let phi = pi * T::of(k as f64) / T::of((n_angles - 1) as f64);
            let (sin, cos) = (phi.sin(), phi.cos());
            let p = [s * sin, s * cos];
            let v = sol.field.velocity_at(p)?;
            let mag = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            sup = sup.max(mag);
        }
        out.push(s * sup / sol.sigma);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Space;

    fn asm4() -> Assembler<f64> {
        Assembler::new(Space::build(20.0f64, 4).unwrap())
    }

    fn cfg() -> NewtonCfg<f64> {
        NewtonCfg::default().symmetric()
    }

    fn asymmetry(asm: &Assembler<f64>, f: &Field<f64>) -> f64 {
        let r = reflect_field(f);
        let d: Vec<f64> = f.data.iter().zip(&r.data).map(|(a, b)| a - b).collect();
        let n = asm.m_norm(&f.data);
        if n == 0.0 { 0.0 } else { asm.m_norm(&d) / n }
    }

    #[test]
    fn zero_amplitude_root_is_immediate() {
        let asm = asm4();
        let sol = base_start(&asm, cfg()).unwrap();
        assert_eq!(sol.sigma, 0.0);
        assert_eq!(sol.kappa2, 1.0);
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.residual_norm, 0.0);
        assert!(sol.field.data.iter().all(|&v| v == 0.0));
        assert_eq!(sol.label, "base");
    }

    #[test]
    fn datum_guess_converges_at_half_amplitude() {
        let asm = asm4();
        let mut guess = Field::zero(&asm.space);
        guess.set_boundary(0.5);
        let sol =
            newton_solve(&asm, guess, 0.5, cfg(), &mut NewtonWorkspace::default()).unwrap();
        eprintln!("sigma=0.5 from datum guess: {} iterations", sol.iterations);
        assert!(sol.iterations <= 5, "took {}", sol.iterations);
        assert!(sol.residual_norm <= 1e-10);
        assert_eq!(sol.kappa2, 1.0 + 0.5 / 4.0);
    }

    #[test]
    fn newton_rejects_bad_guesses() {
        let asm = asm4();
        let other = Assembler::new(Space::build(20.0f64, 8).unwrap());
        let got = newton_solve(
            &asm,
            Field::zero(&other.space),
            0.0,
            cfg(),
            &mut NewtonWorkspace::default(),
        );
        assert!(matches!(got, Err(ContinuationError::MeshMismatch)));

        let mut bad = Field::zero(&asm.space);
        let axis_node = asm.space.dofs.axis_nodes[0] as usize;
        bad.data[axis_node] = 1.0;
        let got = newton_solve(&asm, bad, 0.0, cfg(), &mut NewtonWorkspace::default());
        assert!(matches!(got, Err(ContinuationError::Inadmissible)));
    }

    #[test]
    fn branch_sweep_follows_schedule_and_stays_symmetric() {
        let asm = asm4();
        let start = base_start(&asm, cfg()).unwrap();
        let schedule = StepSchedule::standard();

        let b1 = continue_branch(&asm, start, 2.0, schedule.clone(), cfg()).unwrap();
        assert!(b1.failure.is_none(), "{:?}", b1.failure);
        assert_eq!(b1.solutions.len(), 21);
        assert_eq!(b1.last().sigma, 2.0);
        for w in b1.solutions.windows(2) {
            assert!(w[1].sigma > w[0].sigma);
            assert!((w[1].sigma - w[0].sigma - 0.1).abs() < 1e-9);
        }
        // secant slope bounds the branch-continuity constant; measured 3.04
        let slope = b1.max_secant_slope(&asm);
        eprintln!("max secant slope on [0,2]: {slope:.3e}");
        assert!(slope.is_finite() && slope > 0.0 && slope < 4.0);

        let b2 =
            continue_branch(&asm, b1.last().clone(), 6.0, schedule.clone(), cfg()).unwrap();
        assert!(b2.failure.is_none(), "{:?}", b2.failure);
        assert_eq!(b2.last().sigma, 6.0);
        for w in b2.solutions.windows(2) {
            assert!((w[1].sigma - w[0].sigma - 0.5).abs() < 1e-9, "spacing {:?}", w[1].sigma - w[0].sigma);
        }

        let b3 =
            continue_branch(&asm, b2.last().clone(), 10.0, schedule.clone(), cfg()).unwrap();
        assert!(b3.failure.is_none(), "{:?}", b3.failure);
        assert_eq!(b3.last().sigma, 10.0);

        for sol in b1.solutions.iter().chain(&b2.solutions).chain(&b3.solutions) {
            assert_eq!(sol.kappa2, 1.0 + sol.sigma / 4.0);
            assert_eq!(sol.label, "base");
            assert_eq!(sol.mesh_hash, asm.space.mesh.hash());
            // residual certificate: re-assembly reproduces convergence
            let res = asm
                .assemble_residual(&sol.field, sol.sigma, sol.kappa2)
                .unwrap();
            assert!(l2(&res) <= 1e-10);
            let a = asymmetry(&asm, &sol.field);
            assert!(a <= 1e-9, "asymmetry {a:.3e} at sigma {}", sol.sigma);
        }

        // zeroth-order predictor quality: the canonical half-unit step from
        // sigma=10 needs only a few corrections (measured 3)
        let mut g = b3.last().field.clone();
        g.set_boundary(10.5);
        let stepped =
            newton_solve(&asm, g, 10.5, cfg(), &mut NewtonWorkspace::default()).unwrap();
        eprintln!("sigma 10 -> 10.5 step: {} iterations", stepped.iterations);
        assert!(stepped.iterations <= 5, "took {}", stepped.iterations);
    }

    #[test]
    fn degenerate_sweep_is_single_point() {
        let asm = asm4();
        let start = base_start(&asm, cfg()).unwrap();
        let b = continue_branch(&asm, start, 0.0, StepSchedule::standard(), cfg()).unwrap();
        assert_eq!(b.solutions.len(), 1);
        assert!(b.failure.is_none());
    }

    #[test]
    fn backward_target_is_rejected() {
        let asm = asm4();
        let start = base_start(&asm, cfg()).unwrap();
        let got = continue_branch(&asm, start, -1.0, StepSchedule::standard(), cfg());
        assert!(matches!(got, Err(ContinuationError::BackwardTarget { .. })));
    }

    #[test]
    fn exhausted_halving_returns_partial_branch_with_annotation() {
        let asm = asm4();
        let start = base_start(&asm, cfg()).unwrap();
        // zero correction budget: every nonzero step fails, halving included
        let strict = NewtonCfg { max_iter: 0, ..cfg() };
        let b = continue_branch(&asm, start, 1.0, StepSchedule::standard(), strict).unwrap();
        assert_eq!(b.solutions.len(), 1);
        let failure = b.failure.expect("must be annotated");
        assert!((failure.sigma - 0.1).abs() < 1e-12);
        assert!(failure.message.contains("stalled"), "{}", failure.message);
    }

    #[test]
    fn schedule_grid_and_walking() {
        let s = StepSchedule::<f64>::standard();
        assert_eq!(s.step_at(0.0), 0.1);
        assert_eq!(s.step_at(2.0), 0.5);
        assert_eq!(s.step_below(2.0), 0.1);
        assert_eq!(s.step_at(50.0), 1.0);
        assert_eq!(s.step_below(50.0), 0.5);

        // ascending walk counts: 20 moves across [0,2], boundary hit exactly
        let mut sigma = 0.0f64;
        let mut count = 0;
        while sigma < 2.0 {
            sigma = s.next_up(sigma, 2.0);
            count += 1;
        }
        assert_eq!(count, 20);
        assert_eq!(sigma, 2.0);

        assert_eq!(s.next_up(1.95, 10.0), 2.0);
        assert_eq!(s.next_up(49.9, 300.0), 50.0);
        assert_eq!(s.next_up(50.0, 300.0), 51.0);
        assert_eq!(s.next_down(50.0, 0.0), 49.5);
        assert_eq!(s.next_down(2.0, 0.0), 1.9);
        assert_eq!(s.next_down(0.05, 0.0), 0.0);
        // sliver absorption on the way up
        assert_eq!(s.next_up(0.98, 1.0), 1.0);

        assert!(matches!(
            StepSchedule::<f64>::new(vec![]),
            Err(ContinuationError::BadSchedule(_))
        ));
        assert!(matches!(
            StepSchedule::new(vec![(2.0, 0.1), (1.0, 0.5)]),
            Err(ContinuationError::BadSchedule(_))
        ));
        assert!(matches!(
            StepSchedule::new(vec![(2.0, -0.1)]),
            Err(ContinuationError::BadSchedule(_))
        ));
    }

    #[test]
    fn solve_at_walks_both_directions() {
        let asm = asm4();
        let start = base_start(&asm, cfg()).unwrap();
        let schedule = StepSchedule::standard();
        let b = continue_branch(&asm, start, 1.0, schedule.clone(), cfg()).unwrap();

        let up = solve_at(&asm, b.last(), 1.23, &schedule, cfg()).unwrap();
        assert_eq!(up.sigma, 1.23);
        assert!(up.residual_norm <= 1e-10);

        let down = solve_at(&asm, &up, 0.87, &schedule, cfg()).unwrap();
        assert_eq!(down.sigma, 0.87);
        assert!(down.residual_norm <= 1e-10);
    }

    #[test]
    fn lift_identity_and_coarse_to_fine() {
        let asm = asm4();
        let fine = Assembler::new(Space::build(20.0f64, 8).unwrap());
        let start = base_start(&asm, cfg()).unwrap();

        // identical meshes: unchanged after residual re-check
        let same = lift_to_fine(&asm, &start, cfg()).unwrap();
        assert_eq!(same.field.data, start.field.data);
        assert_eq!(same.iterations, start.iterations);

        // zero solution lifts to the zero solution
        let z = lift_to_fine(&fine, &start, cfg()).unwrap();
        assert_eq!(z.iterations, 0);
        assert!(z.field.data.iter().all(|&v| v == 0.0));

        // a nonzero solution lifts with a couple of corrections
        let b = continue_branch(&asm, start, 1.0, StepSchedule::standard(), cfg()).unwrap();
        let lifted = lift_to_fine(&fine, b.last(), cfg()).unwrap();
        eprintln!("lift n=4 -> n=8 at sigma=1: {} iterations", lifted.iterations);
        assert!(lifted.iterations <= 2, "took {}", lifted.iterations);
        assert!(lifted.residual_norm <= 1e-10);
        assert_eq!(lifted.label, "base");
        assert_eq!(lifted.mesh_hash, fine.space.mesh.hash());

        // different radius is not a lift
        let other = Assembler::new(Space::build(10.0f64, 4).unwrap());
        assert!(lift_to_fine(&other, b.last(), cfg()).is_err());
    }

    #[test]
    fn rim_profile_shape_and_guards() {
        let asm = asm4();
        let start = base_start(&asm, cfg()).unwrap();
        assert!(matches!(
            rim_profile(&start, &[10.0], 8),
            Err(ContinuationError::ZeroAmplitude)
        ));

        let b = continue_branch(&asm, start, 1.0, StepSchedule::standard(), cfg()).unwrap();
        let s: Vec<f64> = (0..11).map(|k| 10.0 + k as f64).collect();
        let gamma = rim_profile(b.last(), &s, 32).unwrap();
        assert_eq!(gamma.len(), s.len());
        assert!(gamma.iter().all(|g| g.is_finite() && *g >= 0.0));
        assert!(gamma.iter().any(|g| *g > 0.0));
    }
}
