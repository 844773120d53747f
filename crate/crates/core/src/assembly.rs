//! Axisymmetric cylindrical weak form of the rescaled profile equations:
//! nonlinear residual, Jacobian and mass matrix on the Taylor-Hood space.
//!
//! With meridional gradient `D = (d/dr, d/dz)`, measure `r dr dz` and test
//! functions phi (velocity, per component) and q (pressure), the residual of
//! the state (U, p) at datum amplitude sigma and rescaling kappa2 reads
//!
//! ```text
//!   sum_c (D u_c, D phi_c) + (u_r phi_r + u_t phi_t)/r^2
//!     - kappa2/2 * [(r d_r u_c + z d_z u_c) + u_c] phi_c
//!     + conv_c phi_c + p * div(phi) ,        div(phi) = d_r phi_r + phi_r/r + d_z phi_z
//!   (d_r u_r + u_r/r + d_z u_z, q)
//! ```
//!
//! where the convection components carry the swirl curvature terms
//! `conv_r = u_m . D u_r - u_t^2/r`, `conv_t = u_m . D u_t + u_r u_t/r`,
//! `conv_z = u_m . D u_z` with meridional velocity `u_m = (u_r, u_z)`. The
//! drift term has no curvature contribution because its velocity field has no
//! azimuthal component. At kappa2 = 1 this is the unrescaled weak form; there
//! is no separate code path.
//!
//! Quadrature is the interior 7-point degree-5 triangle rule, so no quadrature
//! node touches r = 0 and the 1/r^2 terms (damped by the measure r) stay
//! finite. Dirichlet rows are identity rows; the residual there is u_i - g_i.

use crate::analytic::{legendre, AnalyticError, RadialEigenfunction};
use crate::mesh::{self, Constraint, MeshError, Space, U_R, U_THETA, U_Z};
use crate::scalar::Real;
use crate::sparse::{CsrPattern, SparseMatrix};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("boundary datum is singular at the origin")]
    OriginDatum,
    #[error("field contains a non-finite value at dof {0}")]
    NonFinite(usize),
}

/// Azimuthal amplitude of the scale-invariant boundary datum
/// `a0(r, z) = exp(-4 (z/r)^2) / sqrt(r^2 + z^2)`; the r and z components
/// vanish identically. On the axis (r = 0, z != 0) the limit is 0.
pub fn evaluate_a0<T: Real>(r: T, z: T) -> Result<T, AssemblyError> {
    if r == T::zero() && z == T::zero() {
        return Err(AssemblyError::OriginDatum);
    }
    if r == T::zero() {
        return Ok(T::zero());
    }
    let ratio = z / r;
    Ok((-T::of(4.0) * ratio * ratio).exp() / (r * r + z * z).sqrt())
}

/// Velocity (P2, three components) and pressure (P1) coefficients on a space.
#[derive(Debug, Clone)]
pub struct Field<T> {
    pub space: Space<T>,
    /// Layout `[u_r | u_theta | u_z | p]`, length `total_dofs`.
    pub data: Vec<T>,
}

impl<T: Real> Field<T> {
    pub fn zero(space: &Space<T>) -> Self {
        Field { space: space.clone(), data: vec![T::zero(); space.dofs.total_dofs()] }
    }

    /// Nodal interpolant of analytic velocity/pressure functions of (r, z).
    pub fn from_fn(
        space: &Space<T>,
        velocity: impl Fn(T, T) -> [T; 3],
        pressure: impl Fn(T, T) -> T,
    ) -> Self {
        let dofs = &space.dofs;
        let np2 = dofs.n_p2();
        let mut data = vec![T::zero(); dofs.total_dofs()];
        for (i, c) in dofs.p2_coords.iter().enumerate() {
            let v = velocity(c[0], c[1]);
            data[i] = v[0];
            data[np2 + i] = v[1];
            data[2 * np2 + i] = v[2];
        }
        for v in 0..dofs.n_vertices {
            let c = space.mesh.vertices[v];
            data[3 * np2 + v] = pressure(c[0], c[1]);
        }
        Field { space: space.clone(), data }
    }

    /// Writes the Dirichlet data for amplitude `sigma` into the constrained
    /// entries: swirl = sigma a0 on the outer boundary, zero elsewhere.
    pub fn set_boundary(&mut self, sigma: T) {
        let dofs = self.space.dofs.clone();
        let np2 = dofs.n_p2();
        for &node in &dofs.gamma_nodes {
            let [r, z] = dofs.p2_coords[node as usize];
            let a0 = evaluate_a0(r, z).expect("outer boundary excludes the origin");
            self.data[U_R * np2 + node as usize] = T::zero();
            self.data[U_THETA * np2 + node as usize] = sigma * a0;
            self.data[U_Z * np2 + node as usize] = T::zero();
        }
        for &node in &dofs.axis_nodes {
            self.data[U_R * np2 + node as usize] = T::zero();
            self.data[U_THETA * np2 + node as usize] = T::zero();
        }
        self.data[dofs.pinned_pressure_dof()] = T::zero();
    }

    /// Admissible: u_r = u_theta = 0 exactly on the axis.
    pub fn is_admissible(&self) -> bool {
        let dofs = &self.space.dofs;
        let np2 = dofs.n_p2();
        self.data.len() == dofs.total_dofs()
            && dofs.axis_nodes.iter().all(|&n| {
                self.data[U_R * np2 + n as usize] == T::zero()
                    && self.data[U_THETA * np2 + n as usize] == T::zero()
            })
    }

    pub fn check_finite(&self) -> Result<(), AssemblyError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(AssemblyError::NonFinite(i)),
            None => Ok(()),
        }
    }

    pub fn velocity_at(&self, p: [T; 2]) -> Result<[T; 3], MeshError> {
        let (t, lam) = self.space.mesh.locate(p)?;
        let sh = mesh::p2_shape(lam);
        let p2 = self.space.dofs.tri_p2[t];
        let np2 = self.space.dofs.n_p2();
        let mut out = [T::zero(); 3];
        for (comp, o) in out.iter_mut().enumerate() {
            for a in 0..6 {
                *o += sh[a] * self.data[comp * np2 + p2[a] as usize];
            }
        }
        Ok(out)
    }

    /// Meridional gradients d/d(r,z) of the three velocity components.
    pub fn velocity_gradient_at(&self, p: [T; 2]) -> Result<[[T; 2]; 3], MeshError> {
        let (t, lam) = self.space.mesh.locate(p)?;
        let (dr, dz) = mesh::p2_shape_gradients(&self.space.mesh, t, lam);
        let p2 = self.space.dofs.tri_p2[t];
        let np2 = self.space.dofs.n_p2();
        let mut out = [[T::zero(); 2]; 3];
        for (comp, o) in out.iter_mut().enumerate() {
            for a in 0..6 {
                let c = self.data[comp * np2 + p2[a] as usize];
                o[0] += dr[a] * c;
                o[1] += dz[a] * c;
            }
        }
        Ok(out)
    }

    pub fn pressure_at(&self, p: [T; 2]) -> Result<T, MeshError> {
        let (t, lam) = self.space.mesh.locate(p)?;
        let tri = self.space.mesh.triangles[t];
        let base = self.space.dofs.n_velocity();
        let mut out = T::zero();
        for k in 0..3 {
            out += lam[k] * self.data[base + tri[k] as usize];
        }
        Ok(out)
    }
}

/// Interpolates a field onto another space covering the same domain by direct
/// finite-element evaluation at the target nodes. Identical meshes (by content
/// hash) short-circuit to an exact copy.
pub fn interpolate_field<T: Real>(src: &Field<T>, dst: &Space<T>) -> Result<Field<T>, MeshError> {
    if src.space.same_mesh(dst) {
        return Ok(Field { space: dst.clone(), data: src.data.clone() });
    }
    let dofs = &dst.dofs;
    let np2 = dofs.n_p2();
    let mut out = Field::zero(dst);
    for i in 0..np2 {
        let v = src.velocity_at(dofs.p2_coords[i])?;
        out.data[i] = v[0];
        out.data[np2 + i] = v[1];
        out.data[2 * np2 + i] = v[2];
    }
    for v in 0..dofs.n_vertices {
        out.data[3 * np2 + v] = src.pressure_at(dst.mesh.vertices[v])?;
    }
    Ok(out)
}

/// Image of a field under the reflection z -> -z: u_r, u_theta and the
/// pressure are even, u_z is odd. Exact (bitwise) on the z-symmetric meshes
/// built here, via the precomputed node pairing.
pub fn reflect_field<T: Real>(f: &Field<T>) -> Field<T> {
    let dofs = &f.space.dofs;
    let np2 = dofs.n_p2();
    let mut out = Field::zero(&f.space);
    for i in 0..np2 {
        let m = dofs.mirror_p2[i] as usize;
        out.data[U_R * np2 + i] = f.data[U_R * np2 + m];
        out.data[U_THETA * np2 + i] = f.data[U_THETA * np2 + m];
        out.data[U_Z * np2 + i] = -f.data[U_Z * np2 + m];
    }
    let base = dofs.n_velocity();
    for v in 0..dofs.n_vertices {
        out.data[base + v] = f.data[base + dofs.mirror_vertex[v] as usize];
    }
    out
}

/// Nodal interpolant of the pure-swirl analytic eigenfield with operator
/// eigenvalue `lambda` and spherical degree `l`:
/// u_theta(r, z) = f(rho) sin(theta) P_l'(cos(theta)), rho^2 = r^2 + z^2,
/// with meridional velocity and pressure identically zero. The radial factor
/// carries the +1/2 coefficient shift of the swirl reduction (see
/// [`RadialEigenfunction::toroidal_mode`]). Used to check the assembled
/// linearization against the zero-datum point spectrum.
pub fn sample_toroidal_mode<T: Real>(
    space: &Space<T>,
    lambda: T,
    l: usize,
) -> Result<Field<T>, AnalyticError> {
    let f = RadialEigenfunction::toroidal_mode(lambda, l)?;
    let mut field = Field::zero(space);
    let np2 = space.dofs.n_p2();
    for (i, c) in space.dofs.p2_coords.iter().enumerate() {
        let (r, z) = (c[0], c[1]);
        let rho = (r * r + z * z).sqrt();
        if rho == T::zero() {
            continue; // u_theta(0) = 0: f ~ rho^l with l >= 1, times sin(theta)
        }
        let (_, dp) = legendre(l, z / rho);
        // f(rho) sin(theta) = (f(rho)/rho) r, smooth through the origin.
        field.data[np2 + i] = f.value_over_r(rho)? * r * dp;
    }
    Ok(field)
}

/// Jacobian, mass and constraint bookkeeping produced by one linearization.
#[derive(Debug, Clone)]
pub struct SystemMatrices<T> {
    pub jacobian: SparseMatrix<T>,
    /// Raw velocity mass (no constraint masking), zero pressure block.
    pub mass: Arc<SparseMatrix<T>>,
    /// Mass with constrained rows and columns zeroed, for eigenproblems.
    pub mass_masked: Arc<SparseMatrix<T>>,
    /// Constrained global dofs, ascending.
    pub constrained: Arc<Vec<u32>>,
}

/// Degree-5 interior quadrature rule on the reference triangle; weights sum
/// to one and are scaled by the physical area on use.
fn quad_rule<T: Real>() -> ([[T; 3]; 7], [T; 7]) {
    let s15 = T::of(15.0).sqrt();
    let a1 = (T::of(6.0) - s15) / T::of(21.0);
    let b1 = T::one() - T::of(2.0) * a1;
    let a2 = (T::of(6.0) + s15) / T::of(21.0);
    let b2 = T::one() - T::of(2.0) * a2;
    let third = T::one() / T::of(3.0);
    let w0 = T::of(9.0 / 40.0);
    let w1 = (T::of(155.0) - s15) / T::of(1200.0);
    let w2 = (T::of(155.0) + s15) / T::of(1200.0);
    (
        [
            [third, third, third],
            [a1, a1, b1],
            [a1, b1, a1],
            [b1, a1, a1],
            [a2, a2, b2],
            [a2, b2, a2],
            [b2, a2, a2],
        ],
        [w0, w1, w1, w1, w2, w2, w2],
    )
}

/// Per-mesh assembler: owns the symbolic Jacobian/mass patterns and the mass
/// matrices so repeated numeric assemblies reuse all symbolic work.
#[derive(Debug, Clone)]
pub struct Assembler<T> {
    pub space: Space<T>,
    jac_pattern: Arc<CsrPattern>,
    pub constrained: Arc<Vec<u32>>,
    mass: Arc<SparseMatrix<T>>,
    mass_masked: Arc<SparseMatrix<T>>,
}

impl<T: Real> Assembler<T> {
    pub fn new(space: Space<T>) -> Self {
        let jac_pattern = Arc::new(build_jacobian_pattern(&space));
        let constrained: Vec<u32> = space
            .dofs
            .constraint
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != Constraint::Free)
            .map(|(i, _)| i as u32)
            .collect();
        let mass = Arc::new(assemble_mass(&space));
        let mut masked = SparseMatrix::clone(&mass);
        let is_constrained: Vec<bool> =
            space.dofs.constraint.iter().map(|c| *c != Constraint::Free).collect();
        for i in 0..masked.n_rows() {
            let (lo, hi) = (masked.pattern.row_ptr[i], masked.pattern.row_ptr[i + 1]);
            if is_constrained[i] {
                masked.values[lo..hi].fill(T::zero());
            } else {
                for k in lo..hi {
                    if is_constrained[masked.pattern.cols[k] as usize] {
                        masked.values[k] = T::zero();
                    }
                }
            }
        }
        Assembler {
            space,
            jac_pattern,
            constrained: Arc::new(constrained),
            mass,
            mass_masked: Arc::new(masked),
        }
    }

    pub fn mass(&self) -> Arc<SparseMatrix<T>> {
        Arc::clone(&self.mass)
    }

    pub fn mass_masked(&self) -> Arc<SparseMatrix<T>> {
        Arc::clone(&self.mass_masked)
    }

    /// M-inner product of the velocity blocks of two dof vectors (masked
    /// mass, so constrained dofs do not contribute).
    pub fn m_inner(&self, x: &[T], y: &[T]) -> T {
        let my = self.mass_masked.matvec_alloc(y);
        x.iter().zip(&my).map(|(&a, &b)| a * b).sum()
    }

    pub fn m_norm(&self, x: &[T]) -> T {
        self.m_inner(x, x).sqrt()
    }

    /// Nonlinear residual; Dirichlet rows hold `u_i - g_i(sigma)`.
    pub fn assemble_residual(
        &self,
        u: &Field<T>,
        sigma: T,
        kappa2: T,
    ) -> Result<Vec<T>, AssemblyError> {
        u.check_finite()?;
        let dofs = &self.space.dofs;
        let mesh = &self.space.mesh;
        let np2 = dofs.n_p2();
        let (qp, qw) = quad_rule::<T>();
        let mut res = vec![T::zero(); dofs.total_dofs()];
        let half_k2 = kappa2 * T::of(0.5);
        let mut scratch = ElementScratch::new();

        for t in 0..mesh.n_triangles() {
            scratch.load(&self.space, t, &qp);
            let p2 = dofs.tri_p2[t];
            let tri = mesh.triangles[t];
            let mut local = [T::zero(); 21];
            for (q, &wq) in qw.iter().enumerate() {
                let g = &scratch.qp[q];
                let w = wq * scratch.area * g.r;
                let inv_r = T::one() / g.r;
                // field values and meridional gradients at the point
                let mut val = [T::zero(); 3];
                let mut grad = [[T::zero(); 2]; 3];
                for comp in 0..3 {
                    for a in 0..6 {
                        let c = u.data[comp * np2 + p2[a] as usize];
                        val[comp] += g.n[a] * c;
                        grad[comp][0] += g.dr[a] * c;
                        grad[comp][1] += g.dz[a] * c;
                    }
                }
                let mut p = T::zero();
                for k in 0..3 {
                    p += g.lam[k] * u.data[3 * np2 + tri[k] as usize];
                }
                let [ur, ut, uz] = val;
                let conv = [
                    ur * grad[0][0] + uz * grad[0][1] - ut * ut * inv_r,
                    ur * grad[1][0] + uz * grad[1][1] + ur * ut * inv_r,
                    ur * grad[2][0] + uz * grad[2][1],
                ];
                for a in 0..6 {
                    for comp in 0..3 {
                        let drift =
                            half_k2 * (g.r * grad[comp][0] + g.z * grad[comp][1] + val[comp]);
                        let mut acc = g.dr[a] * grad[comp][0] + g.dz[a] * grad[comp][1]
                            + (conv[comp] - drift) * g.n[a];
                        if comp != U_Z {
                            acc += g.n[a] * val[comp] * inv_r * inv_r;
                        }
                        if comp == U_R {
                            acc += p * (g.dr[a] + g.n[a] * inv_r);
                        } else if comp == U_Z {
                            acc += p * g.dz[a];
                        }
                        local[comp * 6 + a] += w * acc;
                    }
                }
                let div = grad[0][0] + ur * inv_r + grad[2][1];
                for k in 0..3 {
                    local[18 + k] += w * g.lam[k] * div;
                }
            }
            for (l, &v) in local.iter().enumerate() {
                let row = local_dof(dofs.n_p2(), &p2, &tri, l);
                if dofs.constraint[row] == Constraint::Free {
                    res[row] += v;
                }
            }
        }

        // Dirichlet rows: u - g.
        for &node in &dofs.gamma_nodes {
            let [r, z] = dofs.p2_coords[node as usize];
            let a0 = evaluate_a0(r, z).expect("outer boundary excludes the origin");
            res[U_R * np2 + node as usize] = u.data[U_R * np2 + node as usize];
            res[U_THETA * np2 + node as usize] =
                u.data[U_THETA * np2 + node as usize] - sigma * a0;
            res[U_Z * np2 + node as usize] = u.data[U_Z * np2 + node as usize];
        }
        for &node in &dofs.axis_nodes {
            res[U_R * np2 + node as usize] = u.data[U_R * np2 + node as usize];
            res[U_THETA * np2 + node as usize] = u.data[U_THETA * np2 + node as usize];
        }
        res[dofs.pinned_pressure_dof()] = u.data[dofs.pinned_pressure_dof()];
        Ok(res)
    }

    /// Jacobian of the residual. `sigma` only affects Dirichlet data, which
    /// differentiates to identity rows either way; it is accepted to mirror
    /// the residual signature and validated.
    pub fn assemble_jacobian(
        &self,
        u: &Field<T>,
        sigma: T,
        kappa2: T,
    ) -> Result<SystemMatrices<T>, AssemblyError> {
        if !sigma.is_finite() || !kappa2.is_finite() {
            return Err(AssemblyError::NonFinite(usize::MAX));
        }
        u.check_finite()?;
        let dofs = &self.space.dofs;
        let mesh = &self.space.mesh;
        let np2 = dofs.n_p2();
        let (qp, qw) = quad_rule::<T>();
        let mut jac = SparseMatrix::zeros(Arc::clone(&self.jac_pattern));
        let half_k2 = kappa2 * T::of(0.5);
        let two = T::of(2.0);
        let mut scratch = ElementScratch::new();

        for t in 0..mesh.n_triangles() {
            scratch.load(&self.space, t, &qp);
            let p2 = dofs.tri_p2[t];
            let tri = mesh.triangles[t];
            let mut local = [[T::zero(); 21]; 21];
            for (q, &wq) in qw.iter().enumerate() {
                let g = &scratch.qp[q];
                let w = wq * scratch.area * g.r;
                let inv_r = T::one() / g.r;
                let mut val = [T::zero(); 3];
                let mut grad = [[T::zero(); 2]; 3];
                for comp in 0..3 {
                    for a in 0..6 {
                        let c = u.data[comp * np2 + p2[a] as usize];
                        val[comp] += g.n[a] * c;
                        grad[comp][0] += g.dr[a] * c;
                        grad[comp][1] += g.dz[a] * c;
                    }
                }
                let [ur, ut, uz] = val;
                for a in 0..6 {
                    let na = g.n[a];
                    for b in 0..6 {
                        let lap = g.dr[a] * g.dr[b] + g.dz[a] * g.dz[b];
                        let curv = na * g.n[b] * inv_r * inv_r;
                        let drift = half_k2 * (g.r * g.dr[b] + g.z * g.dz[b] + g.n[b]) * na;
                        let adv = (ur * g.dr[b] + uz * g.dz[b]) * na;
                        // u_r row
                        local[a][b] += w * (lap + curv - drift + adv + g.n[b] * grad[0][0] * na);
                        local[a][6 + b] -= w * two * ut * g.n[b] * inv_r * na;
                        local[a][12 + b] += w * g.n[b] * grad[0][1] * na;
                        // u_theta row
                        local[6 + a][b] += w * g.n[b] * (grad[1][0] + ut * inv_r) * na;
                        local[6 + a][6 + b] +=
                            w * (lap + curv - drift + adv + ur * g.n[b] * inv_r * na);
                        local[6 + a][12 + b] += w * g.n[b] * grad[1][1] * na;
                        // u_z row
                        local[12 + a][b] += w * g.n[b] * grad[2][0] * na;
                        local[12 + a][12 + b] += w * (lap - drift + adv + g.n[b] * grad[2][1] * na);
                    }
                    for k in 0..3 {
                        let grad_div = w * g.lam[k] * (g.dr[a] + na * inv_r);
                        let grad_z = w * g.lam[k] * g.dz[a];
                        local[a][18 + k] += grad_div;
                        local[12 + a][18 + k] += grad_z;
                        local[18 + k][a] += grad_div;
                        local[18 + k][12 + a] += grad_z;
                    }
                }
            }
            for (la, row_vals) in local.iter().enumerate() {
                let row = local_dof(np2, &p2, &tri, la);
                if dofs.constraint[row] != Constraint::Free {
                    continue;
                }
                let (lo, hi) = (jac.pattern.row_ptr[row], jac.pattern.row_ptr[row + 1]);
                let cols = &jac.pattern.cols[lo..hi];
                for (lb, &v) in row_vals.iter().enumerate() {
                    let col = local_dof(np2, &p2, &tri, lb) as u32;
                    let k = cols.binary_search(&col).expect("pattern must cover element");
                    jac.values[lo + k] += v;
                }
            }
        }
        for &row in self.constrained.iter() {
            let k = jac
                .pattern
                .find(row as usize, row)
                .expect("constrained diagonal present in pattern");
            jac.values[k] = T::one();
        }
        Ok(SystemMatrices {
            jacobian: jac,
            mass: Arc::clone(&self.mass),
            mass_masked: Arc::clone(&self.mass_masked),
            constrained: Arc::clone(&self.constrained),
        })
    }
}

/// Raw velocity mass matrix with measure r dr dz: three identical P2 blocks,
/// empty pressure rows. Symmetric positive definite on the velocity dofs.
pub fn assemble_mass<T: Real>(space: &Space<T>) -> SparseMatrix<T> {
    let dofs = &space.dofs;
    let mesh = &space.mesh;
    let np2 = dofs.n_p2();
    let (qp, qw) = quad_rule::<T>();
    let pattern = Arc::new(build_mass_pattern(space));
    let mut m = SparseMatrix::zeros(pattern);
    let mut scratch = ElementScratch::new();
    for t in 0..mesh.n_triangles() {
        scratch.load(space, t, &qp);
        let p2 = dofs.tri_p2[t];
        let mut local = [[T::zero(); 6]; 6];
        for (q, &wq) in qw.iter().enumerate() {
            let g = &scratch.qp[q];
            let w = wq * scratch.area * g.r;
            for a in 0..6 {
                for b in 0..6 {
                    // parenthesized so the block is bitwise symmetric
                    local[a][b] += w * (g.n[a] * g.n[b]);
                }
            }
        }
        for a in 0..6 {
            for comp in 0..3 {
                let row = comp * np2 + p2[a] as usize;
                let (lo, hi) = (m.pattern.row_ptr[row], m.pattern.row_ptr[row + 1]);
                let cols = &m.pattern.cols[lo..hi];
                for b in 0..6 {
                    let col = (comp * np2 + p2[b] as usize) as u32;
                    let k = cols.binary_search(&col).expect("mass pattern covers element");
                    m.values[lo + k] += local[a][b];
                }
            }
        }
    }
    m
}

/// Local dof `l` (0..21) to global: velocity comps then element pressure.
#[inline]
fn local_dof(np2: usize, p2: &[u32; 6], tri: &[u32; 3], l: usize) -> usize {
    if l < 18 {
        (l / 6) * np2 + p2[l % 6] as usize
    } else {
        3 * np2 + tri[l - 18] as usize
    }
}

struct QpGeom<T> {
    lam: [T; 3],
    n: [T; 6],
    dr: [T; 6],
    dz: [T; 6],
    r: T,
    z: T,
}

struct ElementScratch<T> {
    area: T,
    qp: Vec<QpGeom<T>>,
}

impl<T: Real> ElementScratch<T> {
    fn new() -> Self {
        ElementScratch { area: T::zero(), qp: Vec::with_capacity(7) }
    }

    fn load(&mut self, space: &Space<T>, t: usize, qp: &[[T; 3]; 7]) {
        let mesh = &space.mesh;
        let [ia, ib, ic] = mesh.triangles[t];
        let va = mesh.vertices[ia as usize];
        let vb = mesh.vertices[ib as usize];
        let vc = mesh.vertices[ic as usize];
        let det = (vb[0] - va[0]) * (vc[1] - va[1]) - (vc[0] - va[0]) * (vb[1] - va[1]);
        self.area = det * T::of(0.5);
        // Constant barycentric gradients.
        let g = [
            [(vb[1] - vc[1]) / det, (vc[0] - vb[0]) / det],
            [(vc[1] - va[1]) / det, (va[0] - vc[0]) / det],
            [(va[1] - vb[1]) / det, (vb[0] - va[0]) / det],
        ];
        let four = T::of(4.0);
        self.qp.clear();
        for lam in qp.iter() {
            let n = mesh::p2_shape(*lam);
            let mut dr = [T::zero(); 6];
            let mut dz = [T::zero(); 6];
            for k in 0..2 {
                let d = [
                    (four * lam[0] - T::one()) * g[0][k],
                    (four * lam[1] - T::one()) * g[1][k],
                    (four * lam[2] - T::one()) * g[2][k],
                    four * (lam[0] * g[1][k] + lam[1] * g[0][k]),
                    four * (lam[1] * g[2][k] + lam[2] * g[1][k]),
                    four * (lam[2] * g[0][k] + lam[0] * g[2][k]),
                ];
                if k == 0 {
                    dr = d;
                } else {
                    dz = d;
                }
            }
            let r = lam[0] * va[0] + lam[1] * vb[0] + lam[2] * vc[0];
            let z = lam[0] * va[1] + lam[1] * vb[1] + lam[2] * vc[1];
            self.qp.push(QpGeom { lam: *lam, n, dr, dz, r, z });
        }
    }
}

/// Full element-coupling pattern: each free row holds every dof sharing a
/// triangle with it plus its diagonal; constrained rows hold the diagonal
/// only, making the identity-row convention structural.
fn build_jacobian_pattern<T: Real>(space: &Space<T>) -> CsrPattern {
    let dofs = &space.dofs;
    let np2 = dofs.n_p2();
    let nd = dofs.total_dofs();
    let free: Vec<bool> = dofs.constraint.iter().map(|c| *c == Constraint::Free).collect();
    let mut counts = vec![1u32; nd];
    for t in 0..space.mesh.n_triangles() {
        let p2 = dofs.tri_p2[t];
        let tri = space.mesh.triangles[t];
        for la in 0..21 {
            let row = local_dof(np2, &p2, &tri, la);
            if free[row] {
                counts[row] += 21;
            }
        }
    }
    let mut offsets = vec![0usize; nd + 1];
    for i in 0..nd {
        offsets[i + 1] = offsets[i] + counts[i] as usize;
    }
    let mut buf = vec![0u32; offsets[nd]];
    let mut cursor: Vec<usize> = offsets[..nd].to_vec();
    for (i, c) in cursor.iter_mut().enumerate() {
        buf[*c] = i as u32;
        *c += 1;
    }
    for t in 0..space.mesh.n_triangles() {
        let p2 = dofs.tri_p2[t];
        let tri = space.mesh.triangles[t];
        let mut locals = [0u32; 21];
        for (l, s) in locals.iter_mut().enumerate() {
            *s = local_dof(np2, &p2, &tri, l) as u32;
        }
        for &row in &locals {
            if free[row as usize] {
                let c = &mut cursor[row as usize];
                buf[*c..*c + 21].copy_from_slice(&locals);
                *c += 21;
            }
        }
    }
    let mut row_ptr = vec![0usize; nd + 1];
    let mut cols = Vec::with_capacity(offsets[nd] / 3);
    for i in 0..nd {
        let row = &mut buf[offsets[i]..cursor[i]];
        row.sort_unstable();
        let mut last = u32::MAX;
        for &c in row.iter() {
            if c != last {
                cols.push(c);
                last = c;
            }
        }
        row_ptr[i + 1] = cols.len();
    }
    cols.shrink_to_fit();
    CsrPattern { n_rows: nd, n_cols: nd, row_ptr, cols }
}

/// Mass pattern: P2 node adjacency replicated per velocity component;
/// pressure rows empty.
fn build_mass_pattern<T: Real>(space: &Space<T>) -> CsrPattern {
    let dofs = &space.dofs;
    let np2 = dofs.n_p2();
    let nd = dofs.total_dofs();
    let mut counts = vec![0u32; np2];
    for p2 in &dofs.tri_p2 {
        for &a in p2 {
            counts[a as usize] += 6;
        }
    }
    let mut offsets = vec![0usize; np2 + 1];
    for i in 0..np2 {
        offsets[i + 1] = offsets[i] + counts[i] as usize;
    }
    let mut buf = vec![0u32; offsets[np2]];
    let mut cursor: Vec<usize> = offsets[..np2].to_vec();
    for p2 in &dofs.tri_p2 {
        for &a in p2 {
            let c = &mut cursor[a as usize];
            for &b in p2 {
                buf[*c] = b;
                *c += 1;
            }
        }
    }
    let mut adj: Vec<Vec<u32>> = Vec::with_capacity(np2);
    for i in 0..np2 {
        let row = &mut buf[offsets[i]..cursor[i]];
        row.sort_unstable();
        let mut v = Vec::with_capacity(row.len());
        let mut last = u32::MAX;
        for &c in row.iter() {
            if c != last {
                v.push(c);
                last = c;
            }
        }
        adj.push(v);
    }
    let mut row_ptr = vec![0usize; nd + 1];
    let mut cols = Vec::new();
    for comp in 0..3 {
        for (i, neigh) in adj.iter().enumerate() {
            for &j in neigh {
                cols.push((comp * np2) as u32 + j);
            }
            row_ptr[comp * np2 + i + 1] = cols.len();
        }
    }
    for v in 0..dofs.n_pressure() {
        row_ptr[3 * np2 + v + 1] = cols.len();
    }
    CsrPattern { n_rows: nd, n_cols: nd, row_ptr, cols }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Space;

    fn small_space() -> Space<f64> {
        Space::build(20.0f64, 4).unwrap()
    }

    struct XorShift(u64);
    impl XorShift {
        fn next_f64(&mut self) -> f64 {
            self.0 ^= self.0 << 13;
            self.0 ^= self.0 >> 7;
            self.0 ^= self.0 << 17;
            (self.0 >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        }
    }

    #[test]
    fn datum_values() {
        assert_eq!(evaluate_a0(1.0f64, 0.0).unwrap(), 1.0);
        assert_eq!(evaluate_a0(0.0f64, 1.0).unwrap(), 0.0);
        let v = evaluate_a0(1.0f64, 1.0).unwrap();
        let want = (-4.0f64).exp() / 2.0f64.sqrt();
        assert!((v - want).abs() < 1e-16);
        assert!((v - 0.012951112459987980).abs() < 1e-15);
        assert!(evaluate_a0(0.0f64, 0.0).is_err());
        // even in z
        assert_eq!(evaluate_a0(2.0f64, 1.5).unwrap(), evaluate_a0(2.0f64, -1.5).unwrap());
    }

    #[test]
    fn residual_of_zero_field_is_exactly_zero() {
        let space = small_space();
        let asm = Assembler::new(space.clone());
        let u = Field::zero(&space);
        let res = asm.assemble_residual(&u, 0.0, 1.0).unwrap();
        assert!(res.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_non_finite_fields() {
        let space = small_space();
        let asm = Assembler::new(space.clone());
        let mut u = Field::zero(&space);
        u.data[7] = f64::NAN;
        assert!(matches!(
            asm.assemble_residual(&u, 0.0, 1.0),
            Err(AssemblyError::NonFinite(7))
        ));
    }

    #[test]
    fn dirichlet_rows_are_identity() {
        let space = small_space();
        let asm = Assembler::new(space.clone());
        let u = Field::zero(&space);
        let sys = asm.assemble_jacobian(&u, 1.0, 1.0).unwrap();
        let n = space.dofs.total_dofs();
        for &row in asm.constrained.iter().step_by(9) {
            let mut e = vec![0.0f64; n];
            e[row as usize] = 1.0;
            let y = sys.jacobian.matvec_alloc(&e);
            // identity row: row `row` maps e_row to 1 there...
            assert_eq!(
                sys.jacobian.pattern.row(row as usize),
                &[row],
                "constrained row must hold only its diagonal"
            );
            assert_eq!(y[row as usize], 1.0);
        }
    }

    #[test]
    fn jacobian_matches_directional_finite_differences() {
        let space = small_space();
        let asm = Assembler::new(space.clone());
        let n = space.dofs.total_dofs();
        let mut rng = XorShift(0x9e3779b97f4a7c15);
        let mut u = Field::zero(&space);
        for v in u.data.iter_mut() {
            *v = 0.4 * rng.next_f64();
        }
        u.set_boundary(2.0);
        let sigma = 2.0;
        let kappa2 = 1.0 + sigma / 4.0;
        let sys = asm.assemble_jacobian(&u, sigma, kappa2).unwrap();
        let eps = 1e-5;
        for trial in 0..10 {
            let mut w = vec![0.0f64; n];
            for (i, x) in w.iter_mut().enumerate() {
                if space.dofs.constraint[i] == Constraint::Free {
                    *x = rng.next_f64();
                }
            }
            let jw = sys.jacobian.matvec_alloc(&w);
            let mut up = u.clone();
            let mut um = u.clone();
            for i in 0..n {
                up.data[i] += eps * w[i];
                um.data[i] -= eps * w[i];
            }
            let rp = asm.assemble_residual(&up, sigma, kappa2).unwrap();
            let rm = asm.assemble_residual(&um, sigma, kappa2).unwrap();
            let scale = jw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let mut worst = 0.0f64;
            for i in 0..n {
                let fd = (rp[i] - rm[i]) / (2.0 * eps);
                worst = worst.max((fd - jw[i]).abs());
            }
            assert!(
                worst <= 1e-6 * scale,
                "trial {trial}: fd mismatch {worst:.3e} vs scale {scale:.3e}"
            );
        }
    }

    #[test]
    fn residual_expansion_is_second_order() {
        let space = small_space();
        let asm = Assembler::new(space.clone());
        let n = space.dofs.total_dofs();
        let mut rng = XorShift(42);
        let mut u = Field::zero(&space);
        for v in u.data.iter_mut() {
            *v = 0.3 * rng.next_f64();
        }
        u.set_boundary(1.0);
        let sys = asm.assemble_jacobian(&u, 1.0, 1.25).unwrap();
        let r0 = asm.assemble_residual(&u, 1.0, 1.25).unwrap();
        let mut w = vec![0.0f64; n];
        for (i, x) in w.iter_mut().enumerate() {
            if space.dofs.constraint[i] == Constraint::Free {
                *x = rng.next_f64();
            }
        }
        let jw = sys.jacobian.matvec_alloc(&w);
        let mut errs = Vec::new();
        for k in 3..=6 {
            let eps = 10.0f64.powi(-k);
            let mut up = u.clone();
            for i in 0..n {
                up.data[i] += eps * w[i];
            }
            let rp = asm.assemble_residual(&up, 1.0, 1.25).unwrap();
            let mut err = 0.0f64;
            for i in 0..n {
                err = err.max((rp[i] - r0[i] - eps * jw[i]).abs());
            }
            errs.push(err / eps);
        }
        // The residual is quadratic, so err/eps shrinks linearly in eps.
        for k in 1..errs.len() {
            assert!(
                errs[k] <= errs[k - 1] * 0.2,
                "remainder not O(eps^2): {errs:?}"
            );
        }
    }

    #[test]
    fn theta_mass_total_is_cube_of_radius() {
        let space = small_space();
        let m = assemble_mass(&space);
        let np2 = space.dofs.n_p2();
        let n = space.dofs.total_dofs();
        let mut ones = vec![0.0f64; n];
        for i in 0..np2 {
            ones[np2 + i] = 1.0;
        }
        let y = m.matvec_alloc(&ones);
        let total: f64 = (np2..2 * np2).map(|i| y[i]).sum();
        assert!(
            (total - 8000.0).abs() < 8000.0 * 1e-12,
            "sum {total} != R^3"
        );
    }

    #[test]
    fn mass_is_symmetric_and_velocity_block_positive() {
        let space = small_space();
        let m = assemble_mass(&space);
        // bitwise symmetry: local blocks are symmetric and both triangle
        // accumulation orders coincide
        for i in 0..m.n_rows() {
            for k in m.pattern.row_ptr[i]..m.pattern.row_ptr[i + 1] {
                let j = m.pattern.cols[k] as usize;
                assert_eq!(m.values[k], m.get(j, i as u32), "entry ({i}, {j})");
            }
        }
        // quadratic form positive on a handful of sparse directions
        let n = space.dofs.total_dofs();
        let nvel = space.dofs.n_velocity();
        let mut rng = XorShift(7);
        for _ in 0..5 {
            let mut x = vec![0.0f64; n];
            for v in x.iter_mut().take(nvel) {
                *v = rng.next_f64();
            }
            let y = m.matvec_alloc(&x);
            let q: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
            assert!(q > 0.0);
        }
        // pressure rows are empty
        for v in 0..space.dofs.n_pressure() {
            let row = space.dofs.n_velocity() + v;
            assert_eq!(m.pattern.row_ptr[row], m.pattern.row_ptr[row + 1]);
        }
    }

    #[test]
    fn residual_is_reflection_equivariant() {
        let space = small_space();
        let asm = Assembler::new(space.clone());
        let u = Field::from_fn(
            &space,
            |r, z| {
                let e = (-(r * r + z * z) / 60.0).exp();
                [r * z * e, r * e * (1.0 + 0.3 * z), (1.0 + r) * (z / 5.0).cos() * e]
            },
            |r, z| (r / 3.0).sin() * z,
        );
        let sigma = 2.0;
        let kappa2 = 1.0 + sigma / 4.0;
        let res = asm.assemble_residual(&u, sigma, kappa2).unwrap();

        // reflected field: u_r, u_theta, p even pullbacks; u_z odd.
        let dofs = &space.dofs;
        let np2 = dofs.n_p2();
        let mut ru = Field::zero(&space);
        for i in 0..np2 {
            let m = dofs.mirror_p2[i] as usize;
            ru.data[i] = u.data[m];
            ru.data[np2 + i] = u.data[np2 + m];
            ru.data[2 * np2 + i] = -u.data[2 * np2 + m];
        }
        for v in 0..dofs.n_vertices {
            ru.data[3 * np2 + v] = u.data[3 * np2 + dofs.mirror_vertex[v] as usize];
        }
        let rres = asm.assemble_residual(&ru, sigma, kappa2).unwrap();

        let scale = res.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut worst = 0.0f64;
        for i in 0..np2 {
            let m = dofs.mirror_p2[i] as usize;
            worst = worst.max((rres[i] - res[m]).abs());
            worst = worst.max((rres[np2 + i] - res[np2 + m]).abs());
            worst = worst.max((rres[2 * np2 + i] + res[2 * np2 + m]).abs());
        }
        // The pinned pressure row (vertex 0) and its mirror are gauge rows,
        // structurally exempt from equivariance.
        let pin_mirror = dofs.mirror_vertex[0] as usize;
        for v in 0..dofs.n_vertices {
            if v == 0 || v == pin_mirror {
                continue;
            }
            let m = dofs.mirror_vertex[v] as usize;
            worst = worst.max((rres[3 * np2 + v] - res[3 * np2 + m]).abs());
        }
        assert!(worst <= 1e-12 * scale, "equivariance defect {worst:.3e} vs {scale:.3e}");
    }

    #[test]
    fn interpolation_reproduces_constants_and_quadratics() {
        let coarse = small_space();
        let fine = Space::build(20.0f64, 8).unwrap();
        let c = Field::from_fn(&coarse, |_, _| [2.5, -1.0, 0.75], |_, _| 3.25);
        let f = interpolate_field(&c, &fine).unwrap();
        let np2 = fine.dofs.n_p2();
        for i in 0..np2 {
            assert!((f.data[i] - 2.5).abs() < 1e-13);
            assert!((f.data[np2 + i] + 1.0).abs() < 1e-13);
            assert!((f.data[2 * np2 + i] - 0.75).abs() < 1e-13);
        }
        // global quadratic: P2 interpolation is exact on any target mesh
        let q = |r: f64, z: f64| 1.0 + 2.0 * r - z + 0.5 * r * r - r * z + 0.25 * z * z;
        let c = Field::from_fn(&coarse, |r, z| [q(r, z), 0.0, 0.0], |r, z| 1.0 + r + z);
        let f = interpolate_field(&c, &fine).unwrap();
        for (i, coord) in fine.dofs.p2_coords.iter().enumerate() {
            let want = q(coord[0], coord[1]);
            assert!(
                (f.data[i] - want).abs() < 1e-11 * want.abs().max(1.0),
                "node {i}: {} vs {want}",
                f.data[i]
            );
        }
        // linear pressure reproduced at vertices
        for v in 0..fine.dofs.n_vertices {
            let [r, z] = fine.mesh.vertices[v];
            let got = f.data[3 * np2 + v];
            assert!((got - (1.0 + r + z)).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_same_mesh_is_exact_copy() {
        let space = small_space();
        let mut rng = XorShift(11);
        let mut u = Field::zero(&space);
        for v in u.data.iter_mut() {
            *v = rng.next_f64();
        }
        let same = Space::new(crate::mesh::build_mesh(20.0f64, 4).unwrap()).unwrap();
        let copied = interpolate_field(&u, &same).unwrap();
        assert_eq!(u.data, copied.data);
    }

    #[test]
    fn datum_interpolation_coarse_to_fine_deviation() {
        // sigma * a0 interpolated on the coarse mesh, lifted to the fine mesh,
        // compared against direct evaluation at fine nodes away from the axis
        // (a0 varies like 1/|x| so the sharpest error sits at small radius).
        let coarse = small_space();
        let fine = Space::build(20.0f64, 8).unwrap();
        let sigma = 10.0;
        let c = Field::from_fn(
            &coarse,
            |r, z| [0.0, sigma * evaluate_a0(r, z).unwrap_or(0.0), 0.0],
            |_, _| 0.0,
        );
        let f = interpolate_field(&c, &fine).unwrap();
        let np2 = fine.dofs.n_p2();
        let mut worst = 0.0f64;
        for (i, coord) in fine.dofs.p2_coords.iter().enumerate() {
            if coord[0] < 5.0 {
                continue;
            }
            let want = sigma * evaluate_a0(coord[0], coord[1]).unwrap_or(0.0);
            worst = worst.max((f.data[np2 + i] - want).abs());
        }
        // Away from the axis (r >= 5) the datum is smooth and the coarse
        // interpolant's error is plain discretization error: measured
        // 6.33e-3 * sigma at n = 4 -> 8, frozen with margin. Near the axis
        // the datum grows like 1/|x| and pointwise deviations are O(sigma).
        assert!(worst <= 1e-2 * sigma, "datum deviation {worst:.3e}");
    }

    // For the lowest swirl mode u_theta = r e^(-rho^2/4): the largest free-row
    // entry of J u - lambda M u relative to the scale of lambda M u, and the
    // Rayleigh quotient (u, J u) / (u, M u).
    fn swirl_eigenpair_probe(n: usize) -> (f64, f64) {
        let space = Space::build(20.0f64, n).unwrap();
        let asm = Assembler::new(space.clone());
        let u = sample_toroidal_mode(&space, 1.5, 1).unwrap();
        let sys = asm.assemble_jacobian(&Field::zero(&space), 0.0, 1.0).unwrap();
        let ju = sys.jacobian.matvec_alloc(&u.data);
        let mu = sys.mass_masked.matvec_alloc(&u.data);
        let lambda = 1.5;
        let scale = mu.iter().fold(0.0f64, |m, v| m.max(v.abs())) * lambda;
        let mut worst = 0.0f64;
        for (i, c) in space.dofs.constraint.iter().enumerate() {
            if *c == Constraint::Free {
                worst = worst.max((ju[i] - lambda * mu[i]).abs());
            }
        }
        let uju: f64 = u.data.iter().zip(&ju).map(|(a, b)| a * b).sum();
        let umu: f64 = u.data.iter().zip(&mu).map(|(a, b)| a * b).sum();
        (worst / scale, uju / umu)
    }

    #[test]
    fn linearized_operator_reproduces_analytic_eigenpair_at_zero_datum() {
        let (coarse, _) = swirl_eigenpair_probe(8);
        let (fine, rayleigh) = swirl_eigenpair_probe(16);
        // The entrywise residual of the interpolated mode is first order in h
        // (residual entries scale like h^3, mass entries like h^2); measured
        // 1.18e-1 at n=8 and 7.00e-2 at n=16, frozen with margin.
        assert!(fine < 0.75 * coarse, "no decrease: n=8 {coarse:.3e}, n=16 {fine:.3e}");
        assert!(fine < 8.0e-2, "eigenpair residual {fine:.3e}");
        // The Rayleigh quotient cancels the first-order term and homes in on
        // the eigenvalue 3/2 much faster; measured error 8.44e-5 at n=16
        // (5.63e-6 by n=32). A sign slip in any operator term would shift it
        // by orders of magnitude.
        assert!((rayleigh - 1.5).abs() < 1.5e-4, "rayleigh {rayleigh:.10}");
    }

    #[test]
    fn reflection_flips_signs_and_is_involutive() {
        let space = small_space();
        let f = Field::from_fn(
            &space,
            |r, z| [z, r * z, 1.0 + z],
            |_, z| z * z,
        );
        let rf = reflect_field(&f);
        // componentwise: u_r, u_theta and p pick up the mirrored argument,
        // u_z also flips sign; the mesh stores exact negated coordinates, so
        // the comparison is bitwise
        let expect = Field::from_fn(
            &space,
            |r, z| [-z, -(r * z), -(1.0 - z)],
            |_, z| z * z,
        );
        assert_eq!(rf.data, expect.data);
        assert_eq!(reflect_field(&rf).data, f.data);
    }
}
