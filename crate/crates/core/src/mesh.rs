//! Structured triangulation of the half-plane rectangle [0,R] x [-R,R] and the
//! Taylor-Hood (P2/P1) degree-of-freedom layout over it.
//!
//! The base grid has n columns and 2n rows of squares, each square split into
//! two triangles with the diagonal mirrored about z = 0 so that the mesh maps
//! onto itself under the reflection z -> -z (coordinates are generated so that
//! mirrored vertices have bitwise-negated z). Every cell meeting the open
//! square {r < R/2, |z| < R/4} is red-refined (1 -> 4 through edge midpoints);
//! neighbours left with one hanging midpoint are split in two (green closure),
//! which keeps the triangulation conforming. Because the refined cell set is a
//! full rectangle of cells, no triangle ever carries two hanging nodes.
//!
//! Degrees of freedom: velocity components are P2 (vertices plus edge
//! midpoints), pressure is P1 (vertices). Global layout is
//! `[u_r | u_theta | u_z | p]` with the axis constraints (u_r = u_theta = 0 on
//! r = 0), the outer Dirichlet set on r = R or |z| = R, and the pressure pinned
//! at its lowest global index.

use crate::scalar::Real;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("mesh resolution n = {0} must be even (refined square must align with grid lines)")]
    OddResolution(usize),
    #[error("mesh resolution n = {0} too coarse; need n >= 4")]
    TooCoarse(usize),
    #[error("mesh radius must be positive and finite")]
    BadRadius,
    #[error("point ({0}, {1}) lies outside the mesh")]
    PointOutside(f64, f64),
    #[error("mesh parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("meshes are incompatible: {0}")]
    Incompatible(String),
}

/// Tag of a boundary edge: the rotation axis r = 0, or the outer boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryTag {
    Axis,
    Gamma,
}

/// Constraint kind of a single global dof.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    Free,
    /// u_r or u_theta on the axis; value pinned to zero.
    Axis,
    /// Any velocity component on the outer boundary; value set by the datum.
    Gamma,
    /// The single pinned pressure dof.
    PressurePin,
}

pub const MESH_FORMAT_VERSION: &str = "axiprof mesh v1";

#[derive(Debug, Clone)]
pub struct Mesh<T> {
    pub radius: T,
    pub n: usize,
    /// Vertex coordinates (r, z).
    pub vertices: Vec<[T; 2]>,
    /// Counter-clockwise vertex index triples.
    pub triangles: Vec<[u32; 3]>,
    /// Boundary edges as sorted vertex pairs with their tag.
    pub boundary_edges: Vec<([u32; 2], BoundaryTag)>,
    grid: BackgroundGrid<T>,
    hash: u64,
}

/// Builds the refined, z-symmetric triangulation of [0,R] x [-R,R].
pub fn build_mesh<T: Real>(radius: T, n: usize) -> Result<Mesh<T>, MeshError> {
    if !(radius > T::zero()) || !radius.is_finite() {
        return Err(MeshError::BadRadius);
    }
    if n < 4 {
        return Err(MeshError::TooCoarse(n));
    }
    if n % 2 != 0 {
        return Err(MeshError::OddResolution(n));
    }
    let ni = n as i64;
    let nn = T::of(n as f64);
    // r_i = R * (i/n), z_j = R * ((j-n)/n); the second factor is an exact
    // negation under j -> 2n - j, so mirrored vertices match bitwise.
    let coord_r = |i: i64| radius * (T::of(i as f64) / nn);
    let coord_z = |j: i64| radius * (T::of((j - ni) as f64) / nn);
    let vid = |i: i64, j: i64| (i * (2 * ni + 1) + j) as u32;

    let mut vertices = Vec::with_capacity(((n + 1) * (2 * n + 1)) as usize);
    for i in 0..=ni {
        for j in 0..=2 * ni {
            vertices.push([coord_r(i), coord_z(j)]);
        }
    }

    // Base triangles, two per cell, diagonals mirrored about z = 0.
    let mut base: Vec<([u32; 3], bool)> = Vec::with_capacity(4 * n * n);
    for i in 0..ni {
        for j in 0..2 * ni {
            let bl = vid(i, j);
            let br = vid(i + 1, j);
            let tr = vid(i + 1, j + 1);
            let tl = vid(i, j + 1);
            // Cell intersects the open refinement square {r < R/2, |z| < R/4}?
            let refined = 2 * i < ni && 4 * (j - ni) < ni && 4 * (j + 1 - ni) > -ni;
            if j >= ni {
                // upper half: diagonal bl-tr
                base.push(([bl, br, tr], refined));
                base.push(([bl, tr, tl], refined));
            } else {
                // lower half: diagonal tl-br (mirror image of the upper rule)
                base.push(([bl, br, tl], refined));
                base.push(([br, tr, tl], refined));
            }
        }
    }

    // Red refinement: midpoint vertices appended in sorted-edge order.
    let mut refined_edges: Vec<[u32; 2]> = Vec::new();
    for (tri, refined) in &base {
        if *refined {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                refined_edges.push(if a < b { [a, b] } else { [b, a] });
            }
        }
    }
    refined_edges.sort_unstable();
    refined_edges.dedup();
    let mut midpoint: BTreeMap<[u32; 2], u32> = BTreeMap::new();
    for e in &refined_edges {
        let [a, b] = *e;
        let va = vertices[a as usize];
        let vb = vertices[b as usize];
        let half = T::of(0.5);
        let id = vertices.len() as u32;
        vertices.push([(va[0] + vb[0]) * half, (va[1] + vb[1]) * half]);
        midpoint.insert(*e, id);
    }

    let edge_key = |a: u32, b: u32| if a < b { [a, b] } else { [b, a] };
    let mut triangles: Vec<[u32; 3]> = Vec::with_capacity(base.len() * 2);
    for (tri, refined) in &base {
        let [a, b, c] = *tri;
        if *refined {
            let mab = midpoint[&edge_key(a, b)];
            let mbc = midpoint[&edge_key(b, c)];
            let mca = midpoint[&edge_key(c, a)];
            triangles.push([a, mab, mca]);
            triangles.push([mab, b, mbc]);
            triangles.push([mca, mbc, c]);
            triangles.push([mab, mbc, mca]);
        } else {
            let hanging: Vec<usize> = (0..3)
                .filter(|&k| midpoint.contains_key(&edge_key(tri[k], tri[(k + 1) % 3])))
                .collect();
            match hanging.as_slice() {
                [] => triangles.push(*tri),
                [k] => {
                    let (p, q, opp) = (tri[*k], tri[(k + 1) % 3], tri[(k + 2) % 3]);
                    let m = midpoint[&edge_key(p, q)];
                    triangles.push([p, m, opp]);
                    triangles.push([m, q, opp]);
                }
                _ => unreachable!("rectangular refined region cannot leave two hanging nodes"),
            }
        }
    }

    // Boundary edges: edges incident to exactly one triangle.
    let mut edge_count: BTreeMap<[u32; 2], u32> = BTreeMap::new();
    for tri in &triangles {
        for k in 0..3 {
            *edge_count.entry(edge_key(tri[k], tri[(k + 1) % 3])).or_insert(0) += 1;
        }
    }
    let mut boundary_edges = Vec::new();
    for (e, cnt) in &edge_count {
        debug_assert!(*cnt <= 2, "non-conforming edge {e:?}");
        if *cnt == 1 {
            let on_axis =
                vertices[e[0] as usize][0] == T::zero() && vertices[e[1] as usize][0] == T::zero();
            let tag = if on_axis { BoundaryTag::Axis } else { BoundaryTag::Gamma };
            boundary_edges.push((*e, tag));
        }
    }

    let grid = BackgroundGrid::build(radius, &vertices, &triangles);
    let hash = mesh_hash(radius, n, &vertices, &triangles);
    Ok(Mesh { radius, n, vertices, triangles, boundary_edges, grid, hash })
}

impl<T: Real> Mesh<T> {
    /// Content hash over radius, resolution, vertex bits and connectivity.
    pub fn hash(&self) -> u64 {
        self.hash
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Signed (twice-)area-normalized barycentric coordinates of `p` in
    /// triangle `t`.
    pub fn barycentric(&self, t: usize, p: [T; 2]) -> [T; 3] {
        let [a, b, c] = self.triangles[t];
        let va = self.vertices[a as usize];
        let vb = self.vertices[b as usize];
        let vc = self.vertices[c as usize];
        let det = (vb[0] - va[0]) * (vc[1] - va[1]) - (vc[0] - va[0]) * (vb[1] - va[1]);
        let l1 = ((p[0] - va[0]) * (vc[1] - va[1]) - (vc[0] - va[0]) * (p[1] - va[1])) / det;
        let l2 = ((vb[0] - va[0]) * (p[1] - va[1]) - (p[0] - va[0]) * (vb[1] - va[1])) / det;
        [T::one() - l1 - l2, l1, l2]
    }

    /// Locates the triangle containing `p`; ties on shared edges resolve to the
    /// lowest triangle index. Returns the triangle and barycentric coordinates.
    pub fn locate(&self, p: [T; 2]) -> Result<(usize, [T; 3]), MeshError> {
        let tol = T::of(1e-10);
        let mut best: Option<(usize, [T; 3], T)> = None;
        for &t in self.grid.candidates(p) {
            let lam = self.barycentric(t as usize, p);
            let min_l = lam[0].min(lam[1]).min(lam[2]);
            if min_l >= -tol {
                return Ok((t as usize, lam));
            }
            // Track the least-bad candidate to absorb boundary round-off.
            if best.map_or(true, |(_, _, m)| min_l > m) {
                best = Some((t as usize, lam, min_l));
            }
        }
        if let Some((t, lam, m)) = best {
            if m >= -T::of(1e-7) {
                return Ok((t, lam));
            }
        }
        Err(MeshError::PointOutside(
            p[0].to_f64().unwrap_or(f64::NAN),
            p[1].to_f64().unwrap_or(f64::NAN),
        ))
    }

    /// Plain-text serialization with a version header; coordinates are stored
    /// as IEEE bit patterns for an exact round trip.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MESH_FORMAT_VERSION}");
        let _ = writeln!(s, "radius {}", self.radius.to_bit_hex());
        let _ = writeln!(s, "n {}", self.n);
        let _ = writeln!(s, "vertices {}", self.vertices.len());
        for v in &self.vertices {
            let _ = writeln!(s, "{} {}", v[0].to_bit_hex(), v[1].to_bit_hex());
        }
        let _ = writeln!(s, "triangles {}", self.triangles.len());
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        let _ = writeln!(s, "end");
        s
    }

    /// Inverse of [`to_text`]; boundary tags, the location grid and the hash
    /// are rebuilt from the connectivity.
    pub fn from_text(text: &str) -> Result<Mesh<T>, MeshError> {
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| MeshError::Parse { line: 0, msg: format!("missing {what}") })
        };
        let (ln, header) = next("header")?;
        if header.trim() != MESH_FORMAT_VERSION {
            return Err(MeshError::Parse { line: ln + 1, msg: format!("bad header {header:?}") });
        }
        let parse_kv = |(ln, line): (usize, &str), key: &str| -> Result<String, MeshError> {
            let mut it = line.split_whitespace();
            match (it.next(), it.next()) {
                (Some(k), Some(v)) if k == key => Ok(v.to_string()),
                _ => Err(MeshError::Parse { line: ln + 1, msg: format!("expected `{key} <value>`") }),
            }
        };
        let radius_hex = parse_kv(next("radius")?, "radius")?;
        let radius = T::from_bit_hex(&radius_hex)
            .ok_or_else(|| MeshError::Parse { line: 2, msg: "bad radius bits".into() })?;
        let n: usize = parse_kv(next("n")?, "n")?
            .parse()
            .map_err(|_| MeshError::Parse { line: 3, msg: "bad n".into() })?;
        let nv: usize = parse_kv(next("vertices")?, "vertices")?
            .parse()
            .map_err(|_| MeshError::Parse { line: 4, msg: "bad vertex count".into() })?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (ln, line) = next("vertex")?;
            let mut it = line.split_whitespace();
            let mut coord = |name| {
                it.next()
                    .and_then(T::from_bit_hex)
                    .ok_or_else(|| MeshError::Parse { line: ln + 1, msg: format!("bad {name}") })
            };
            vertices.push([coord("r")?, coord("z")?]);
        }
        let (ln_t, line_t) = next("triangles")?;
        let nt: usize = parse_kv((ln_t, line_t), "triangles")?
            .parse()
            .map_err(|_| MeshError::Parse { line: ln_t + 1, msg: "bad triangle count".into() })?;
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            let (ln, line) = next("triangle")?;
            let mut it = line.split_whitespace();
            let mut idx = || -> Result<u32, MeshError> {
                it.next()
                    .and_then(|w| w.parse().ok())
                    .filter(|&v: &u32| (v as usize) < nv)
                    .ok_or_else(|| MeshError::Parse { line: ln + 1, msg: "bad triangle index".into() })
            };
            triangles.push([idx()?, idx()?, idx()?]);
        }
        let (ln, end) = next("end")?;
        if end.trim() != "end" {
            return Err(MeshError::Parse { line: ln + 1, msg: "missing end marker".into() });
        }

        let edge_key = |a: u32, b: u32| if a < b { [a, b] } else { [b, a] };
        let mut edge_count: BTreeMap<[u32; 2], u32> = BTreeMap::new();
        for tri in &triangles {
            for k in 0..3 {
                *edge_count.entry(edge_key(tri[k], tri[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        let mut boundary_edges = Vec::new();
        for (e, cnt) in &edge_count {
            if *cnt == 1 {
                let on_axis = vertices[e[0] as usize][0] == T::zero()
                    && vertices[e[1] as usize][0] == T::zero();
                let tag = if on_axis { BoundaryTag::Axis } else { BoundaryTag::Gamma };
                boundary_edges.push((*e, tag));
            }
        }
        let grid = BackgroundGrid::build(radius, &vertices, &triangles);
        let hash = mesh_hash(radius, n, &vertices, &triangles);
        Ok(Mesh { radius, n, vertices, triangles, boundary_edges, grid, hash })
    }
}

fn mesh_hash<T: Real>(radius: T, n: usize, vertices: &[[T; 2]], triangles: &[[u32; 3]]) -> u64 {
    let mut h = Fnv1a::new();
    h.write(MESH_FORMAT_VERSION.as_bytes());
    h.write(radius.to_bit_hex().as_bytes());
    h.write(&(n as u64).to_le_bytes());
    for v in vertices {
        h.write(v[0].to_bit_hex().as_bytes());
        h.write(v[1].to_bit_hex().as_bytes());
    }
    for t in triangles {
        for &i in t {
            h.write(&i.to_le_bytes());
        }
    }
    h.finish()
}

/// FNV-1a, 64-bit.
pub struct Fnv1a(u64);

impl Fnv1a {
    pub fn new() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x1000_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}

/// Uniform-bin point-location accelerator. A triangle is registered in every
/// bin its bounding box overlaps, so the bin of a query point lists every
/// triangle that can contain it; bins keep ascending triangle order.
#[derive(Debug, Clone)]
struct BackgroundGrid<T> {
    nx: usize,
    ny: usize,
    inv_dx: T,
    inv_dy: T,
    r0: T,
    z0: T,
    offsets: Vec<u32>,
    entries: Vec<u32>,
}

impl<T: Real> BackgroundGrid<T> {
    fn build(radius: T, vertices: &[[T; 2]], triangles: &[[u32; 3]]) -> Self {
        let nx = ((triangles.len() as f64 / 4.0).sqrt().ceil() as usize).clamp(4, 1024);
        let ny = 2 * nx;
        let r0 = T::zero();
        let z0 = -radius;
        let inv_dx = T::of(nx as f64) / radius;
        let inv_dy = T::of(ny as f64) / (T::of(2.0) * radius);
        let bin_of = |x: T, inv: T, origin: T, count: usize| -> usize {
            let b = ((x - origin) * inv).floor().to_f64().unwrap_or(0.0) as i64;
            b.clamp(0, count as i64 - 1) as usize
        };
        let mut counts = vec![0u32; nx * ny];
        let mut spans = Vec::with_capacity(triangles.len());
        for tri in triangles {
            let (mut rmin, mut rmax) = (T::infinity(), -T::infinity());
            let (mut zmin, mut zmax) = (T::infinity(), -T::infinity());
            for &v in tri {
                let [r, z] = vertices[v as usize];
                rmin = rmin.min(r);
                rmax = rmax.max(r);
                zmin = zmin.min(z);
                zmax = zmax.max(z);
            }
            let gx0 = bin_of(rmin, inv_dx, r0, nx);
            let gx1 = bin_of(rmax, inv_dx, r0, nx);
            let gy0 = bin_of(zmin, inv_dy, z0, ny);
            let gy1 = bin_of(zmax, inv_dy, z0, ny);
            for gx in gx0..=gx1 {
                for gy in gy0..=gy1 {
                    counts[gx * ny + gy] += 1;
                }
            }
            spans.push([gx0, gx1, gy0, gy1]);
        }
        let mut offsets = vec![0u32; nx * ny + 1];
        for i in 0..nx * ny {
            offsets[i + 1] = offsets[i] + counts[i];
        }
        let mut cursor = offsets.clone();
        let mut entries = vec![0u32; offsets[nx * ny] as usize];
        for (t, span) in spans.iter().enumerate() {
            for gx in span[0]..=span[1] {
                for gy in span[2]..=span[3] {
                    let bin = gx * ny + gy;
                    entries[cursor[bin] as usize] = t as u32;
                    cursor[bin] += 1;
                }
            }
        }
        BackgroundGrid { nx, ny, inv_dx, inv_dy, r0, z0, offsets, entries }
    }

    fn candidates(&self, p: [T; 2]) -> &[u32] {
        let gx = ((p[0] - self.r0) * self.inv_dx).floor().to_f64().unwrap_or(0.0) as i64;
        let gy = ((p[1] - self.z0) * self.inv_dy).floor().to_f64().unwrap_or(0.0) as i64;
        let gx = gx.clamp(0, self.nx as i64 - 1) as usize;
        let gy = gy.clamp(0, self.ny as i64 - 1) as usize;
        let bin = gx * self.ny + gy;
        &self.entries[self.offsets[bin] as usize..self.offsets[bin + 1] as usize]
    }
}

/// Velocity component indices in the global layout.
pub const U_R: usize = 0;
pub const U_THETA: usize = 1;
pub const U_Z: usize = 2;

/// Taylor-Hood dof layout over a mesh.
#[derive(Debug)]
pub struct DofMap<T> {
    pub n_vertices: usize,
    /// Unique triangle edges as sorted vertex pairs, lexicographic order.
    pub edges: Vec<[u32; 2]>,
    /// Per-triangle P2 nodes: [v0, v1, v2, m01, m12, m20].
    pub tri_p2: Vec<[u32; 6]>,
    /// Coordinates of every P2 node (vertices then edge midpoints).
    pub p2_coords: Vec<[T; 2]>,
    /// P2 nodes on the axis and not on the outer boundary, ascending.
    pub axis_nodes: Vec<u32>,
    /// P2 nodes on the outer boundary, ascending.
    pub gamma_nodes: Vec<u32>,
    /// z -> -z image of every P2 node.
    pub mirror_p2: Vec<u32>,
    /// z -> -z image of every vertex.
    pub mirror_vertex: Vec<u32>,
    /// Constraint kind per global dof.
    pub constraint: Vec<Constraint>,
}

impl<T: Real> DofMap<T> {
    pub fn n_p2(&self) -> usize {
        self.p2_coords.len()
    }

    pub fn n_velocity(&self) -> usize {
        3 * self.n_p2()
    }

    pub fn n_pressure(&self) -> usize {
        self.n_vertices
    }

    pub fn total_dofs(&self) -> usize {
        self.n_velocity() + self.n_pressure()
    }

    /// Global dof of velocity component `comp` at P2 node `node`.
    pub fn velocity_dof(&self, comp: usize, node: u32) -> usize {
        comp * self.n_p2() + node as usize
    }

    /// Global dof of the pressure at vertex `v`.
    pub fn pressure_dof(&self, v: u32) -> usize {
        self.n_velocity() + v as usize
    }

    /// The pinned pressure dof: lowest pressure index.
    pub fn pinned_pressure_dof(&self) -> usize {
        self.n_velocity()
    }
}

/// Builds the P2/P1 dof map, constraint classification and reflection pairing.
pub fn build_dofmap<T: Real>(mesh: &Mesh<T>) -> Result<DofMap<T>, MeshError> {
    let nv = mesh.vertices.len();
    let edge_key = |a: u32, b: u32| if a < b { [a, b] } else { [b, a] };
    let mut edges: Vec<[u32; 2]> = Vec::with_capacity(mesh.triangles.len() * 3 / 2);
    for tri in &mesh.triangles {
        for k in 0..3 {
            edges.push(edge_key(tri[k], tri[(k + 1) % 3]));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    let edge_index: BTreeMap<[u32; 2], u32> =
        edges.iter().enumerate().map(|(i, e)| (*e, i as u32)).collect();

    let mut tri_p2 = Vec::with_capacity(mesh.triangles.len());
    for tri in &mesh.triangles {
        let [a, b, c] = *tri;
        tri_p2.push([
            a,
            b,
            c,
            nv as u32 + edge_index[&edge_key(a, b)],
            nv as u32 + edge_index[&edge_key(b, c)],
            nv as u32 + edge_index[&edge_key(c, a)],
        ]);
    }

    let half = T::of(0.5);
    let mut p2_coords = mesh.vertices.clone();
    p2_coords.reserve(edges.len());
    for e in &edges {
        let va = mesh.vertices[e[0] as usize];
        let vb = mesh.vertices[e[1] as usize];
        p2_coords.push([(va[0] + vb[0]) * half, (va[1] + vb[1]) * half]);
    }
    let n_p2 = p2_coords.len();

    // Boundary classification: outer boundary wins where a node sits on both.
    let mut on_gamma = vec![false; n_p2];
    let mut on_axis = vec![false; n_p2];
    for (e, tag) in &mesh.boundary_edges {
        let mid = nv as u32 + edge_index[e];
        let mark = match tag {
            BoundaryTag::Gamma => &mut on_gamma,
            BoundaryTag::Axis => &mut on_axis,
        };
        mark[e[0] as usize] = true;
        mark[e[1] as usize] = true;
        mark[mid as usize] = true;
    }
    let gamma_nodes: Vec<u32> =
        (0..n_p2 as u32).filter(|&i| on_gamma[i as usize]).collect();
    let axis_nodes: Vec<u32> =
        (0..n_p2 as u32).filter(|&i| on_axis[i as usize] && !on_gamma[i as usize]).collect();

    // Reflection pairing via exact coordinate bits; z = 0 is canonicalized so
    // +-0.0 cannot split the fixed line.
    let key_of = |c: [T; 2]| -> (String, String) {
        let z = if c[1] == T::zero() { T::zero() } else { c[1] };
        (c[0].to_bit_hex(), z.to_bit_hex())
    };
    let mut by_coord: BTreeMap<(String, String), u32> = BTreeMap::new();
    for (i, c) in p2_coords.iter().enumerate() {
        by_coord.insert(key_of(*c), i as u32);
    }
    let mut mirror_p2 = Vec::with_capacity(n_p2);
    for c in &p2_coords {
        let mz = if c[1] == T::zero() { T::zero() } else { -c[1] };
        let img = by_coord.get(&key_of([c[0], mz])).copied().ok_or_else(|| {
            MeshError::Incompatible(format!(
                "mesh is not z-symmetric: no mirror node for ({:?}, {:?})",
                c[0], c[1]
            ))
        })?;
        mirror_p2.push(img);
    }
    let mirror_vertex = mirror_p2[..nv].to_vec();

    let total = 3 * n_p2 + nv;
    let mut constraint = vec![Constraint::Free; total];
    for &node in &gamma_nodes {
        for comp in [U_R, U_THETA, U_Z] {
            constraint[comp * n_p2 + node as usize] = Constraint::Gamma;
        }
    }
    for &node in &axis_nodes {
        for comp in [U_R, U_THETA] {
            constraint[comp * n_p2 + node as usize] = Constraint::Axis;
        }
    }
    constraint[3 * n_p2] = Constraint::PressurePin;

    Ok(DofMap {
        n_vertices: nv,
        edges,
        tri_p2,
        p2_coords,
        axis_nodes,
        gamma_nodes,
        mirror_p2,
        mirror_vertex,
        constraint,
    })
}

/// A mesh with its dof layout, shared by fields and assemblies.
#[derive(Debug, Clone)]
pub struct Space<T> {
    pub mesh: Arc<Mesh<T>>,
    pub dofs: Arc<DofMap<T>>,
}

impl<T: Real> Space<T> {
    pub fn new(mesh: Mesh<T>) -> Result<Self, MeshError> {
        let dofs = build_dofmap(&mesh)?;
        Ok(Space { mesh: Arc::new(mesh), dofs: Arc::new(dofs) })
    }

    pub fn build(radius: T, n: usize) -> Result<Self, MeshError> {
        Self::new(build_mesh(radius, n)?)
    }

    pub fn same_mesh(&self, other: &Space<T>) -> bool {
        self.mesh.hash() == other.mesh.hash()
    }
}

/// P2 shape functions at barycentric coordinates, ordered as `tri_p2`.
pub fn p2_shape<T: Real>(l: [T; 3]) -> [T; 6] {
    let four = T::of(4.0);
    let two = T::of(2.0);
    [
        l[0] * (two * l[0] - T::one()),
        l[1] * (two * l[1] - T::one()),
        l[2] * (two * l[2] - T::one()),
        four * l[0] * l[1],
        four * l[1] * l[2],
        four * l[2] * l[0],
    ]
}

/// Gradients of the P2 shape functions in physical (r, z) coordinates for
/// triangle `t`: returns d/dr and d/dz for the six nodes.
pub fn p2_shape_gradients<T: Real>(mesh: &Mesh<T>, t: usize, l: [T; 3]) -> ([T; 6], [T; 6]) {
    let [a, b, c] = mesh.triangles[t];
    let va = mesh.vertices[a as usize];
    let vb = mesh.vertices[b as usize];
    let vc = mesh.vertices[c as usize];
    let det = (vb[0] - va[0]) * (vc[1] - va[1]) - (vc[0] - va[0]) * (vb[1] - va[1]);
    // Barycentric gradients.
    let g = [
        [(vb[1] - vc[1]) / det, (vc[0] - vb[0]) / det],
        [(vc[1] - va[1]) / det, (va[0] - vc[0]) / det],
        [(va[1] - vb[1]) / det, (vb[0] - va[0]) / det],
    ];
    let four = T::of(4.0);
    let d = |k: usize| -> [T; 6] {
        [
            (four * l[0] - T::one()) * g[0][k],
            (four * l[1] - T::one()) * g[1][k],
            (four * l[2] - T::one()) * g[2][k],
            four * (l[0] * g[1][k] + l[1] * g[0][k]),
            four * (l[1] * g[2][k] + l[2] * g[1][k]),
            four * (l[2] * g[0][k] + l[0] * g[2][k]),
        ]
    };
    (d(0), d(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signed_area(m: &Mesh<f64>, t: usize) -> f64 {
        let [a, b, c] = m.triangles[t];
        let va = m.vertices[a as usize];
        let vb = m.vertices[b as usize];
        let vc = m.vertices[c as usize];
        0.5 * ((vb[0] - va[0]) * (vc[1] - va[1]) - (vc[0] - va[0]) * (vb[1] - va[1]))
    }

    #[test]
    fn frozen_counts_r20_n4() {
        // Enumerated independently before the implementation: 61 vertices,
        // 94 triangles, 154 edges, 215 P2 nodes, 706 total dofs.
        let mesh = build_mesh(20.0f64, 4).unwrap();
        assert_eq!(mesh.n_vertices(), 61);
        assert_eq!(mesh.n_triangles(), 94);
        let dofs = build_dofmap(&mesh).unwrap();
        assert_eq!(dofs.edges.len(), 154);
        assert_eq!(dofs.n_p2(), 215);
        assert_eq!(dofs.total_dofs(), 706);
    }

    #[test]
    fn base_grid_counts_before_refinement() {
        // n = 8: 2 n^2 = 128 squares, 256 base triangles; refinement replaces
        // 32 of them with 128 children plus 12 green splits.
        let mesh = build_mesh(20.0f64, 8).unwrap();
        assert_eq!(mesh.n_triangles(), 256 - 32 - 12 + 128 + 24);
        assert_eq!(mesh.n_vertices(), 209);
    }

    #[test]
    fn rejects_bad_resolutions() {
        assert!(matches!(build_mesh(20.0f64, 5), Err(MeshError::OddResolution(5))));
        assert!(matches!(build_mesh(20.0f64, 2), Err(MeshError::TooCoarse(2))));
        assert!(matches!(build_mesh(-1.0f64, 8), Err(MeshError::BadRadius)));
    }

    #[test]
    fn all_triangles_positive_and_conforming() {
        for n in [4usize, 6, 8, 10] {
            let mesh = build_mesh(17.5f64, n).unwrap();
            let mut edge_count: BTreeMap<[u32; 2], u32> = BTreeMap::new();
            for t in 0..mesh.n_triangles() {
                assert!(signed_area(&mesh, t) > 0.0, "n={n} t={t} not CCW");
                let tri = mesh.triangles[t];
                for k in 0..3 {
                    let (a, b) = (tri[k], tri[(k + 1) % 3]);
                    *edge_count.entry(if a < b { [a, b] } else { [b, a] }).or_insert(0) += 1;
                }
            }
            assert!(edge_count.values().all(|&c| c <= 2), "n={n}: edge in >2 triangles");
            // Euler: V - E + (T + 1) = 2 for a disc.
            let e = edge_count.len();
            assert_eq!(mesh.n_vertices() + mesh.n_triangles() + 1 - e, 2, "n={n}");
        }
    }

    #[test]
    fn refinement_containment() {
        // Every triangle with a vertex strictly inside the refinement square
        // has at most a quarter of the base triangle area.
        for n in [4usize, 6, 8] {
            let mesh = build_mesh(20.0f64, n).unwrap();
            let h = 20.0 / n as f64;
            let base_area = 0.5 * h * h;
            for t in 0..mesh.n_triangles() {
                let strictly_inside = mesh.triangles[t].iter().any(|&v| {
                    let [r, z] = mesh.vertices[v as usize];
                    r < 10.0 - 1e-12 && z.abs() < 5.0 - 1e-12
                });
                if strictly_inside {
                    assert!(
                        signed_area(&mesh, t) <= 0.25 * base_area * (1.0 + 1e-12),
                        "n={n} t={t}: unrefined triangle inside refinement square"
                    );
                }
            }
        }
    }

    #[test]
    fn mesh_is_z_symmetric() {
        for n in [4usize, 6, 10] {
            let mesh = build_mesh(20.0f64, n).unwrap();
            let dofs = build_dofmap(&mesh).unwrap();
            for (i, &img) in dofs.mirror_p2.iter().enumerate() {
                assert_eq!(dofs.mirror_p2[img as usize] as usize, i, "not an involution");
                let a = dofs.p2_coords[i];
                let b = dofs.p2_coords[img as usize];
                assert_eq!(a[0].to_bits(), b[0].to_bits());
                let neg = if a[1] == 0.0 { 0.0f64 } else { -a[1] };
                assert_eq!(neg.to_bits(), b[1].to_bits(), "z not bitwise mirrored");
            }
            // Mirrored triangles exist as vertex sets.
            let mut keys: std::collections::BTreeSet<[u32; 3]> = Default::default();
            for tri in &mesh.triangles {
                let mut k = *tri;
                k.sort_unstable();
                keys.insert(k);
            }
            for tri in &mesh.triangles {
                let mut m = [
                    dofs.mirror_vertex[tri[0] as usize],
                    dofs.mirror_vertex[tri[1] as usize],
                    dofs.mirror_vertex[tri[2] as usize],
                ];
                m.sort_unstable();
                assert!(keys.contains(&m), "mirrored triangle missing");
            }
        }
    }

    #[test]
    fn constraint_sets_are_disjoint_and_complete() {
        let mesh = build_mesh(20.0f64, 6).unwrap();
        let dofs = build_dofmap(&mesh).unwrap();
        for &g in &dofs.gamma_nodes {
            assert!(!dofs.axis_nodes.contains(&g));
            let [r, z] = dofs.p2_coords[g as usize];
            assert!(r == 20.0 || z.abs() == 20.0, "gamma node off the outer boundary");
        }
        for &a in &dofs.axis_nodes {
            let [r, z] = dofs.p2_coords[a as usize];
            assert_eq!(r, 0.0);
            assert!(z.abs() < 20.0);
        }
        // Corners (0, +-R) carry the outer Dirichlet set.
        let corner = dofs
            .p2_coords
            .iter()
            .position(|c| c[0] == 0.0 && c[1] == 20.0)
            .unwrap() as u32;
        assert!(dofs.gamma_nodes.contains(&corner));
        assert_eq!(dofs.constraint[dofs.pinned_pressure_dof()], Constraint::PressurePin);
        let n_constrained = dofs.constraint.iter().filter(|c| **c != Constraint::Free).count();
        assert_eq!(
            n_constrained,
            3 * dofs.gamma_nodes.len() + 2 * dofs.axis_nodes.len() + 1
        );
    }

    #[test]
    fn locate_hits_lowest_triangle_index_on_ties() {
        let mesh = build_mesh(20.0f64, 4).unwrap();
        // A point on an interior shared edge: take the midpoint of any
        // interior edge and scan all triangles containing it.
        let dofs = build_dofmap(&mesh).unwrap();
        let boundary: std::collections::BTreeSet<[u32; 2]> =
            mesh.boundary_edges.iter().map(|(e, _)| *e).collect();
        let e = dofs.edges.iter().find(|e| !boundary.contains(*e)).unwrap();
        let va = mesh.vertices[e[0] as usize];
        let vb = mesh.vertices[e[1] as usize];
        let p = [(va[0] + vb[0]) / 2.0, (va[1] + vb[1]) / 2.0];
        let (t, _) = mesh.locate(p).unwrap();
        let containing: Vec<usize> = (0..mesh.n_triangles())
            .filter(|&t| {
                let l = mesh.barycentric(t, p);
                l.iter().all(|&x| x >= -1e-10)
            })
            .collect();
        assert!(containing.len() >= 2, "midpoint of interior edge should tie");
        assert_eq!(t, containing[0]);
    }

    #[test]
    fn locate_rejects_outside_points() {
        let mesh = build_mesh(20.0f64, 4).unwrap();
        assert!(matches!(mesh.locate([25.0, 0.0]), Err(MeshError::PointOutside(_, _))));
        assert!(matches!(mesh.locate([5.0, -33.0]), Err(MeshError::PointOutside(_, _))));
    }

    #[test]
    fn serialization_round_trip_is_bitwise() {
        let mesh = build_mesh(20.0f64, 6).unwrap();
        let text = mesh.to_text();
        let back: Mesh<f64> = Mesh::from_text(&text).unwrap();
        assert_eq!(mesh.hash(), back.hash());
        assert_eq!(mesh.triangles, back.triangles);
        for (a, b) in mesh.vertices.iter().zip(&back.vertices) {
            assert_eq!(a[0].to_bits(), b[0].to_bits());
            assert_eq!(a[1].to_bits(), b[1].to_bits());
        }
        assert_eq!(mesh.boundary_edges, back.boundary_edges);
    }

    #[test]
    fn serialization_rejects_corruption() {
        let mesh = build_mesh(20.0f64, 4).unwrap();
        let text = mesh.to_text();
        let bad = text.replace("axiprof mesh v1", "axiprof mesh v9");
        assert!(matches!(Mesh::<f64>::from_text(&bad), Err(MeshError::Parse { line: 1, .. })));
        let mut lines: Vec<&str> = text.lines().collect();
        lines[7] = "zzz zzz";
        let bad = lines.join("\n");
        match Mesh::<f64>::from_text(&bad) {
            Err(MeshError::Parse { line, .. }) => assert_eq!(line, 8),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn p2_shape_partition_of_unity() {
        let l = [0.2f64, 0.5, 0.3];
        let s = p2_shape(l);
        let sum: f64 = s.iter().sum();
        assert!((sum - 1.0).abs() < 1e-14);
        // Nodal property at a vertex and an edge midpoint.
        let s = p2_shape([1.0f64, 0.0, 0.0]);
        assert_eq!(s, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let s = p2_shape([0.5f64, 0.5, 0.0]);
        assert_eq!(s, [0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }
}
