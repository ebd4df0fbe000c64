//! P1 finite elements for the Robin/Neumann Poisson problem and the Lamé-type
//! system with tangential Robin walls.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{rigid_fields_default, Mesh, Point, RigidFieldBasis};
use crate::sparse::{dot, minres, pcg, CsrMatrix, SaddleSystem, SolveStats};

pub const SOLVE_TOL: f64 = 1e-10;
/// Two boundary edges meeting at a vertex with normals further apart than this are a corner.
pub const CORNER_ANGLE: f64 = std::f64::consts::FRAC_PI_4;

/// Gradients of the three barycentric basis functions of triangle `t`.
pub fn p1_gradients(mesh: &Mesh, t: usize) -> [Point; 3] {
    let [a, b, c] = mesh.triangles[t];
    let (pa, pb, pc) = (mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]);
    let det = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]);
    [
        [(pb[1] - pc[1]) / det, (pc[0] - pb[0]) / det],
        [(pc[1] - pa[1]) / det, (pa[0] - pc[0]) / det],
        [(pa[1] - pb[1]) / det, (pb[0] - pa[0]) / det],
    ]
}

/// `α/(2−α)`.
pub fn robin_weight(alpha: f64) -> f64 {
    alpha / (2.0 - alpha)
}

pub fn assemble_stiffness(mesh: &Mesh) -> CsrMatrix {
    let mut t = Vec::with_capacity(9 * mesh.n_cells());
    for (k, tri) in mesh.triangles.iter().enumerate() {
        let g = p1_gradients(mesh, k);
        let a = mesh.cell_areas[k];
        for i in 0..3 {
            for j in 0..3 {
                t.push((tri[i], tri[j], a * (g[i][0] * g[j][0] + g[i][1] * g[j][1])));
            }
        }
    }
    let n = mesh.n_vertices();
    CsrMatrix::from_triplets(n, n, t)
}

pub fn assemble_mass(mesh: &Mesh) -> CsrMatrix {
    let mut t = Vec::with_capacity(9 * mesh.n_cells());
    for (k, tri) in mesh.triangles.iter().enumerate() {
        let a = mesh.cell_areas[k];
        for i in 0..3 {
            for j in 0..3 {
                t.push((tri[i], tri[j], a * if i == j { 1.0 / 6.0 } else { 1.0 / 12.0 }));
            }
        }
    }
    let n = mesh.n_vertices();
    CsrMatrix::from_triplets(n, n, t)
}

/// `∫_{∂Ω} α/(2−α) u w` by the edge-midpoint rule.
pub fn assemble_boundary_mass(mesh: &Mesh) -> CsrMatrix {
    let mut t = Vec::new();
    for e in &mesh.boundary {
        let w = robin_weight(e.alpha) * e.length / 4.0;
        if w == 0.0 {
            continue;
        }
        for &i in &e.v {
            for &j in &e.v {
                t.push((i, j, w));
            }
        }
    }
    let n = mesh.n_vertices();
    CsrMatrix::from_triplets(n, n, t)
}

/// `∫ φ_i` for every vertex.
pub fn vertex_masses(mesh: &Mesh) -> Vec<f64> {
    let mut c = vec![0.0; mesh.n_vertices()];
    for (k, tri) in mesh.triangles.iter().enumerate() {
        for &i in tri {
            c[i] += mesh.cell_areas[k] / 3.0;
        }
    }
    c
}

/// Load vector `∫ ξ φ_i` of a cellwise-constant source.
pub fn cell_load(mesh: &Mesh, xi: &[f64]) -> Vec<f64> {
    let mut b = vec![0.0; mesh.n_vertices()];
    for (k, tri) in mesh.triangles.iter().enumerate() {
        for &i in tri {
            b[i] += xi[k] * mesh.cell_areas[k] / 3.0;
        }
    }
    b
}

#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// Dense constraint rows `c·u = 0`.
    pub constraints: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    Neumann,
    Robin,
    Lame,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalarField {
    pub values: Vec<f64>,
    pub problem: Problem,
    pub l2_norm: f64,
    pub h1_norm: f64,
    pub h2_proxy: f64,
    pub source_l2: f64,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VectorField {
    pub values: Vec<Point>,
    pub l2_norm: f64,
    pub h1_norm: f64,
    pub h2_proxy: f64,
    pub source_l2: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Cellwise gradient of a nodal P1 field.
pub fn cell_gradients(mesh: &Mesh, u: &[f64]) -> Vec<Point> {
    (0..mesh.n_cells())
        .map(|k| {
            let g = p1_gradients(mesh, k);
            let tri = mesh.triangles[k];
            let mut out = [0.0, 0.0];
            for i in 0..3 {
                out[0] += u[tri[i]] * g[i][0];
                out[1] += u[tri[i]] * g[i][1];
            }
            out
        })
        .collect()
}

/// Area-weighted nodal average of the cell gradients.
pub fn recovered_gradient(mesh: &Mesh, u: &[f64]) -> Vec<Point> {
    let cg = cell_gradients(mesh, u);
    let mut acc = vec![[0.0, 0.0]; mesh.n_vertices()];
    let mut w = vec![0.0; mesh.n_vertices()];
    for (k, tri) in mesh.triangles.iter().enumerate() {
        let a = mesh.cell_areas[k];
        for &i in tri {
            acc[i][0] += a * cg[k][0];
            acc[i][1] += a * cg[k][1];
            w[i] += a;
        }
    }
    acc.iter().zip(&w).map(|(g, w)| [g[0] / w, g[1] / w]).collect()
}

/// `‖∇G‖²` with `G` the recovered gradient.
fn recovered_seminorm2(mesh: &Mesh, u: &[f64]) -> f64 {
    let g = recovered_gradient(mesh, u);
    let gx: Vec<f64> = g.iter().map(|p| p[0]).collect();
    let gy: Vec<f64> = g.iter().map(|p| p[1]).collect();
    let mut s = 0.0;
    for comp in [&gx, &gy] {
        for (k, d) in cell_gradients(mesh, comp).iter().enumerate() {
            s += mesh.cell_areas[k] * (d[0] * d[0] + d[1] * d[1]);
        }
    }
    s
}

fn cell_l2(mesh: &Mesh, xi: &[f64]) -> f64 {
    xi.iter().zip(&mesh.cell_areas).map(|(x, a)| a * x * x).sum::<f64>().sqrt()
}

/// `(∫(u_h − u*)²)^{1/2}` with `u*` interpolated at vertices.
pub fn nodal_l2_distance(mesh: &Mesh, mass: &CsrMatrix, u: &[f64], exact: impl Fn(Point) -> f64) -> f64 {
    let e: Vec<f64> = u.iter().zip(&mesh.vertices).map(|(a, x)| a - exact(*x)).collect();
    mass.quadratic_form(&e).max(0.0).sqrt()
}

pub fn assemble_poisson(mesh: &Mesh, xi: &[f64]) -> LinearSystem {
    let k = assemble_stiffness(mesh);
    let b = assemble_boundary_mass(mesh);
    let neumann = mesh.alpha_is_zero();
    LinearSystem {
        matrix: k.plus(&b),
        rhs: cell_load(mesh, xi),
        constraints: if neumann { vec![vertex_masses(mesh)] } else { Vec::new() },
    }
}

/// Solves `−Δu = ξ` with `(2−α)∂ₙu + αu = 0`, reusable across sources.
#[derive(Debug, Clone)]
pub struct PoissonSolver {
    pub neumann: bool,
    pub matrix: CsrMatrix,
    pub mass: CsrMatrix,
    pub stiffness: CsrMatrix,
    mean_row: Vec<f64>,
    precond: Vec<f64>,
    pub max_iter: usize,
}

impl PoissonSolver {
    pub fn new(mesh: &Mesh) -> Self {
        Self::with_alpha_zero(mesh, mesh.alpha_is_zero())
    }

    /// Neumann solver regardless of the wall coefficients.
    pub fn neumann(mesh: &Mesh) -> Self {
        Self::with_alpha_zero(mesh, true)
    }

    fn with_alpha_zero(mesh: &Mesh, neumann: bool) -> Self {
        let stiffness = assemble_stiffness(mesh);
        let matrix = if neumann {
            stiffness.clone()
        } else {
            stiffness.plus(&assemble_boundary_mass(mesh))
        };
        let mean_row = vertex_masses(mesh);
        let constraints = [mean_row.clone()];
        let precond = SaddleSystem {
            a: &matrix,
            constraints: &constraints,
        }
        .preconditioner();
        Self {
            neumann,
            mass: assemble_mass(mesh),
            stiffness,
            matrix,
            mean_row,
            precond,
            max_iter: 20 * mesh.n_vertices() + 100,
        }
    }

    pub fn solve(&self, mesh: &Mesh, xi: &[f64]) -> Result<ScalarField> {
        if xi.len() != mesh.n_cells() {
            return Err(Error::ShapeMismatch {
                expected: mesh.n_cells(),
                got: xi.len(),
            });
        }
        let n = mesh.n_vertices();
        let b = cell_load(mesh, xi);
        let (u, stats) = if self.neumann {
            let total: f64 = xi.iter().zip(&mesh.cell_areas).map(|(x, a)| x * a).sum();
            let scale: f64 = xi.iter().zip(&mesh.cell_areas).map(|(x, a)| x.abs() * a).sum();
            if total.abs() > 1e-10 * scale.max(1e-300) {
                return Err(Error::Compatibility(format!(
                    "Neumann source has nonzero integral {total:.3e}"
                )));
            }
            let constraints = [self.mean_row.clone()];
            let sys = SaddleSystem {
                a: &self.matrix,
                constraints: &constraints,
            };
            let mut rhs = b.clone();
            rhs.push(0.0);
            let mut x = vec![0.0; n + 1];
            let stats = minres(|u, v| sys.apply(u, v), &self.precond, &rhs, &mut x, SOLVE_TOL, self.max_iter)?;
            x.truncate(n);
            (x, stats)
        } else {
            let mut x = vec![0.0; n];
            let stats = pcg(&self.matrix, &b, &mut x, SOLVE_TOL, self.max_iter)?;
            (x, stats)
        };
        Ok(self.finish(mesh, u, xi, stats))
    }

    fn finish(&self, mesh: &Mesh, u: Vec<f64>, xi: &[f64], stats: SolveStats) -> ScalarField {
        let l2 = self.mass.quadratic_form(&u).max(0.0);
        let h1 = l2 + self.stiffness.quadratic_form(&u).max(0.0);
        let h2 = h1 + recovered_seminorm2(mesh, &u);
        ScalarField {
            problem: if self.neumann { Problem::Neumann } else { Problem::Robin },
            l2_norm: l2.sqrt(),
            h1_norm: h1.sqrt(),
            h2_proxy: h2.sqrt(),
            source_l2: cell_l2(mesh, xi),
            iterations: stats.iterations,
            residual: stats.residual,
            values: u,
        }
    }

    /// `max_w |a(u,w) − (ξ,w)| / ‖b‖` over nodal basis functions.
    pub fn galerkin_residual(&self, mesh: &Mesh, u: &[f64], xi: &[f64]) -> f64 {
        let b = cell_load(mesh, xi);
        let au = self.matrix.matvec(u);
        let bn = b.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-300);
        au.iter().zip(&b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / bn
    }
}

pub fn solve_poisson(mesh: &Mesh, xi: &[f64]) -> Result<ScalarField> {
    if mesh.alpha_is_zero() {
        return solve_neumann(mesh, xi);
    }
    PoissonSolver::new(mesh).solve(mesh, xi)
}

pub fn solve_neumann(mesh: &Mesh, xi: &[f64]) -> Result<ScalarField> {
    PoissonSolver::neumann(mesh).solve(mesh, xi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum VertexKind {
    Interior,
    /// Boundary vertex carrying one tangential unknown along `τ`.
    Tangent { tangent: Point },
    /// Both components fixed to zero.
    Pinned,
}

/// Reduced unknowns of vector fields with `U·n = 0` at boundary vertices.
#[derive(Debug, Clone)]
pub struct LameDofs {
    pub kinds: Vec<VertexKind>,
    /// For each full unknown `2v + d`, its expansion over reduced unknowns.
    pub rows: Vec<Vec<(usize, f64)>>,
    pub n_reduced: usize,
}

impl LameDofs {
    pub fn new(mesh: &Mesh) -> Self {
        let nvx = mesh.n_vertices();
        let mut incident: Vec<Vec<Point>> = vec![Vec::new(); nvx];
        for e in &mesh.boundary {
            for &v in &e.v {
                incident[v].push(e.normal);
            }
        }
        let cos_limit = CORNER_ANGLE.cos();
        let kinds: Vec<VertexKind> = incident
            .iter()
            .map(|ns| match ns.len() {
                0 => VertexKind::Interior,
                2 => {
                    let (a, b) = (ns[0], ns[1]);
                    if a[0] * b[0] + a[1] * b[1] < cos_limit {
                        VertexKind::Pinned
                    } else {
                        let s = [a[0] + b[0], a[1] + b[1]];
                        let l = s[0].hypot(s[1]);
                        VertexKind::Tangent {
                            tangent: [-s[1] / l, s[0] / l],
                        }
                    }
                }
                _ => VertexKind::Pinned,
            })
            .collect();
        let mut rows = vec![Vec::new(); 2 * nvx];
        let mut next = 0;
        for (v, k) in kinds.iter().enumerate() {
            match k {
                VertexKind::Interior => {
                    rows[2 * v] = vec![(next, 1.0)];
                    rows[2 * v + 1] = vec![(next + 1, 1.0)];
                    next += 2;
                }
                VertexKind::Tangent { tangent } => {
                    rows[2 * v] = vec![(next, tangent[0])];
                    rows[2 * v + 1] = vec![(next, tangent[1])];
                    next += 1;
                }
                VertexKind::Pinned => {}
            }
        }
        Self {
            kinds,
            rows,
            n_reduced: next,
        }
    }

    pub fn expand(&self, u: &[f64]) -> Vec<Point> {
        (0..self.kinds.len())
            .map(|v| {
                let c = |d: usize| self.rows[2 * v + d].iter().map(|&(i, a)| a * u[i]).sum::<f64>();
                [c(0), c(1)]
            })
            .collect()
    }

    /// `Pᵀ b` for a full-length vector.
    pub fn restrict(&self, b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_reduced];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, a) in row {
                out[j] += a * b[i];
            }
        }
        out
    }

    /// Best reduced representation of a nodal field (tangential part at the wall).
    pub fn project(&self, u: &[Point]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_reduced];
        for (v, k) in self.kinds.iter().enumerate() {
            match k {
                VertexKind::Interior => {
                    out[self.rows[2 * v][0].0] = u[v][0];
                    out[self.rows[2 * v + 1][0].0] = u[v][1];
                }
                VertexKind::Tangent { tangent } => {
                    out[self.rows[2 * v][0].0] = u[v][0] * tangent[0] + u[v][1] * tangent[1];
                }
                VertexKind::Pinned => {}
            }
        }
        out
    }

    pub fn count_tangent(&self) -> usize {
        self.kinds.iter().filter(|k| matches!(k, VertexKind::Tangent { .. })).count()
    }

    pub fn count_pinned(&self) -> usize {
        self.kinds.iter().filter(|k| matches!(k, VertexKind::Pinned)).count()
    }
}

/// Full-space `∫∇ˢU:∇ˢW` on unknowns `2v + d`.
pub fn assemble_sym_stiffness(mesh: &Mesh) -> CsrMatrix {
    let mut t = Vec::with_capacity(36 * mesh.n_cells());
    for (k, tri) in mesh.triangles.iter().enumerate() {
        let g = p1_gradients(mesh, k);
        let area = mesh.cell_areas[k];
        for i in 0..3 {
            for j in 0..3 {
                let gij = g[i][0] * g[j][0] + g[i][1] * g[j][1];
                for a in 0..2 {
                    for b in 0..2 {
                        let delta = if a == b { gij } else { 0.0 };
                        let val = 0.5 * area * (delta + g[i][b] * g[j][a]);
                        t.push((2 * tri[i] + a, 2 * tri[j] + b, val));
                    }
                }
            }
        }
    }
    let n = 2 * mesh.n_vertices();
    CsrMatrix::from_triplets(n, n, t)
}

/// Componentwise copy of a scalar matrix onto unknowns `2v + d`.
pub fn vectorize(m: &CsrMatrix) -> CsrMatrix {
    let mut t = Vec::with_capacity(2 * m.nnz());
    for i in 0..m.n_rows {
        for p in m.indptr[i]..m.indptr[i + 1] {
            let j = m.indices[p];
            for d in 0..2 {
                t.push((2 * i + d, 2 * j + d, m.data[p]));
            }
        }
    }
    CsrMatrix::from_triplets(2 * m.n_rows, 2 * m.n_cols, t)
}

/// Full-space row of `∫ (∂₁U₂ − ∂₂U₁)`, i.e. `∫ ∇ᵃU : J`.
pub fn curl_row(mesh: &Mesh) -> Vec<f64> {
    let mut r = vec![0.0; 2 * mesh.n_vertices()];
    for (k, tri) in mesh.triangles.iter().enumerate() {
        let g = p1_gradients(mesh, k);
        let a = mesh.cell_areas[k];
        for i in 0..3 {
            r[2 * tri[i] + 1] += a * g[i][0];
            r[2 * tri[i]] -= a * g[i][1];
        }
    }
    r
}

/// Reduced Lamé forms on one mesh.
#[derive(Debug, Clone)]
pub struct LameForms {
    pub dofs: LameDofs,
    /// `A_α` on reduced unknowns.
    pub a_alpha: CsrMatrix,
    /// `∫∇ˢU:∇ˢW` on reduced unknowns.
    pub sym: CsrMatrix,
    /// `∫∇U:∇W` on reduced unknowns.
    pub grad: CsrMatrix,
    /// `∫U·W` on reduced unknowns.
    pub mass: CsrMatrix,
    /// Rigid-mode constraint rows on reduced unknowns.
    pub rigid_rows: Vec<Vec<f64>>,
    pub rigid: RigidFieldBasis,
}

impl LameForms {
    pub fn new(mesh: &Mesh) -> Self {
        let dofs = LameDofs::new(mesh);
        let n = dofs.n_reduced;
        let sym_full = assemble_sym_stiffness(mesh);
        let bnd_full = vectorize(&assemble_boundary_mass(mesh));
        let sym = sym_full.congruence(&dofs.rows, n);
        let a_alpha = sym_full.plus(&bnd_full).congruence(&dofs.rows, n);
        let grad = vectorize(&assemble_stiffness(mesh)).congruence(&dofs.rows, n);
        let mass = vectorize(&assemble_mass(mesh)).congruence(&dofs.rows, n);
        let rigid = rigid_fields_default(mesh);
        let rigid_rows = if mesh.alpha_is_zero() && !rigid.is_empty() {
            vec![dofs.restrict(&curl_row(mesh))]
        } else {
            Vec::new()
        };
        Self {
            dofs,
            a_alpha,
            sym,
            grad,
            mass,
            rigid_rows,
            rigid,
        }
    }
}

pub fn assemble_lame(mesh: &Mesh, xi: &[Point]) -> (LinearSystem, LameDofs) {
    let forms = LameForms::new(mesh);
    let rhs = forms.dofs.restrict(&vector_cell_load(mesh, xi));
    (
        LinearSystem {
            matrix: forms.a_alpha,
            rhs,
            constraints: forms.rigid_rows,
        },
        forms.dofs,
    )
}

pub fn vector_cell_load(mesh: &Mesh, xi: &[Point]) -> Vec<f64> {
    let mut b = vec![0.0; 2 * mesh.n_vertices()];
    for (k, tri) in mesh.triangles.iter().enumerate() {
        let a = mesh.cell_areas[k] / 3.0;
        for &i in tri {
            b[2 * i] += xi[k][0] * a;
            b[2 * i + 1] += xi[k][1] * a;
        }
    }
    b
}

/// Solves `−Div ∇ˢU = Ξ` on `U·n = 0` with tangential Robin walls.
#[derive(Debug, Clone)]
pub struct LameSolver {
    pub forms: LameForms,
    precond: Vec<f64>,
    mass_full: CsrMatrix,
    grad_full: CsrMatrix,
    pub max_iter: usize,
}

impl LameSolver {
    pub fn new(mesh: &Mesh) -> Self {
        let forms = LameForms::new(mesh);
        let precond = SaddleSystem {
            a: &forms.a_alpha,
            constraints: &forms.rigid_rows,
        }
        .preconditioner();
        Self {
            max_iter: 20 * forms.dofs.n_reduced + 100,
            forms,
            precond,
            mass_full: vectorize(&assemble_mass(mesh)),
            grad_full: vectorize(&assemble_stiffness(mesh)),
        }
    }

    pub fn check_compatibility(&self, mesh: &Mesh, xi: &[Point]) -> Result<()> {
        if self.forms.rigid_rows.is_empty() {
            return Ok(());
        }
        let mut dotp = 0.0;
        let mut nx = 0.0;
        let mut nj = 0.0;
        for (k, x) in mesh.cell_centroids.iter().enumerate() {
            let a = mesh.cell_areas[k];
            let jx = [-x[1], x[0]];
            dotp += a * (xi[k][0] * jx[0] + xi[k][1] * jx[1]);
            nx += a * (xi[k][0] * xi[k][0] + xi[k][1] * xi[k][1]);
            nj += a * (jx[0] * jx[0] + jx[1] * jx[1]);
        }
        if dotp.abs() > 1e-10 * (nx * nj).sqrt().max(1e-300) {
            return Err(Error::Compatibility(format!(
                "source is not orthogonal to the rotation field: ⟨Ξ, Jx⟩ = {dotp:.3e}"
            )));
        }
        Ok(())
    }

    pub fn solve(&self, mesh: &Mesh, xi: &[Point]) -> Result<VectorField> {
        if xi.len() != mesh.n_cells() {
            return Err(Error::ShapeMismatch {
                expected: mesh.n_cells(),
                got: xi.len(),
            });
        }
        self.check_compatibility(mesh, xi)?;
        let n = self.forms.dofs.n_reduced;
        let b = self.forms.dofs.restrict(&vector_cell_load(mesh, xi));
        let (u, stats) = if self.forms.rigid_rows.is_empty() {
            let mut x = vec![0.0; n];
            let s = pcg(&self.forms.a_alpha, &b, &mut x, SOLVE_TOL, self.max_iter)?;
            (x, s)
        } else {
            let sys = SaddleSystem {
                a: &self.forms.a_alpha,
                constraints: &self.forms.rigid_rows,
            };
            let mut rhs = b;
            rhs.extend(std::iter::repeat(0.0).take(self.forms.rigid_rows.len()));
            let mut x = vec![0.0; sys.dim()];
            let s = minres(|u, v| sys.apply(u, v), &self.precond, &rhs, &mut x, SOLVE_TOL, self.max_iter)?;
            x.truncate(n);
            (x, s)
        };
        let values = self.forms.dofs.expand(&u);
        let flat: Vec<f64> = values.iter().flat_map(|p| [p[0], p[1]]).collect();
        let l2 = self.mass_full.quadratic_form(&flat).max(0.0);
        let h1 = l2 + self.grad_full.quadratic_form(&flat).max(0.0);
        let comp = |d: usize| values.iter().map(|p| p[d]).collect::<Vec<f64>>();
        let h2 = h1 + recovered_seminorm2(mesh, &comp(0)) + recovered_seminorm2(mesh, &comp(1));
        let src: f64 = xi
            .iter()
            .zip(&mesh.cell_areas)
            .map(|(x, a)| a * (x[0] * x[0] + x[1] * x[1]))
            .sum();
        Ok(VectorField {
            values,
            l2_norm: l2.sqrt(),
            h1_norm: h1.sqrt(),
            h2_proxy: h2.sqrt(),
            source_l2: src.sqrt(),
            iterations: stats.iterations,
            residual: stats.residual,
        })
    }

    /// Relative Galerkin residual over the reduced test space.
    pub fn galerkin_residual(&self, mesh: &Mesh, u: &[Point], xi: &[Point]) -> f64 {
        let ur = self.forms.dofs.project(u);
        let b = self.forms.dofs.restrict(&vector_cell_load(mesh, xi));
        let mut au = self.forms.a_alpha.matvec(&ur);
        // Remove the multiplier direction when the rigid constraint is active.
        for c in &self.forms.rigid_rows {
            let r: Vec<f64> = au.iter().zip(&b).map(|(a, b)| a - b).collect();
            let s = dot(&r, c) / dot(c, c);
            for (a, ci) in au.iter_mut().zip(c) {
                *a -= s * ci;
            }
        }
        let bn = b.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-300);
        au.iter().zip(&b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / bn
    }
}

pub fn solve_lame(mesh: &Mesh, xi: &[Point]) -> Result<VectorField> {
    LameSolver::new(mesh).solve(mesh, xi)
}
