//! Best constants of the Poincaré and Korn inequalities as extreme eigenvalues
//! of constrained generalized eigenproblems on the P1 forms.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::elliptic::{
    assemble_boundary_mass, assemble_mass, assemble_stiffness, assemble_sym_stiffness, vectorize, LameForms,
};
use crate::error::{invalid, Result};
use crate::geometry::Mesh;
use crate::rng;
use crate::sparse::{dot, minres, pcg, CsrMatrix, SaddleSystem};

const INNER_TOL: f64 = 1e-12;
const WARMUP: usize = 8;
/// Shift as a fraction of the Rayleigh estimate; keeps `F − σT` positive definite on `V`.
const SHIFT: f64 = 0.5;

/// `max_{x ∈ V} xᵀTx / xᵀFx` with `V = {x : Cx = 0}` and `F` positive definite on `V`.
#[derive(Debug, Clone)]
pub struct Pencil {
    pub target: CsrMatrix,
    pub form: CsrMatrix,
    pub constraints: Vec<Vec<f64>>,
    precond: Vec<f64>,
    gram_inv: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenResult {
    pub value: f64,
    pub vector: Vec<f64>,
    pub iterations: usize,
}

impl Pencil {
    pub fn new(target: CsrMatrix, form: CsrMatrix, constraints: Vec<Vec<f64>>) -> Self {
        let precond = SaddleSystem {
            a: &form,
            constraints: &constraints,
        }
        .preconditioner();
        let k = constraints.len();
        let gram = DMatrix::from_fn(k, k, |i, j| dot(&constraints[i], &constraints[j]));
        let gram_inv = gram.try_inverse().unwrap_or_else(|| DMatrix::zeros(k, k));
        Self {
            target,
            form,
            constraints,
            precond,
            gram_inv,
        }
    }

    pub fn dim(&self) -> usize {
        self.form.n_rows
    }

    /// Euclidean projection onto `V`.
    pub fn project(&self, x: &mut [f64]) {
        let k = self.constraints.len();
        if k == 0 {
            return;
        }
        let r: Vec<f64> = self.constraints.iter().map(|c| dot(c, x)).collect();
        for i in 0..k {
            let s: f64 = (0..k).map(|j| self.gram_inv[(i, j)] * r[j]).sum();
            for (a, c) in x.iter_mut().zip(&self.constraints[i]) {
                *a -= s * c;
            }
        }
    }

    pub fn rayleigh(&self, x: &[f64]) -> f64 {
        self.target.quadratic_form(x) / self.form.quadratic_form(x)
    }

    /// `y ∈ V` with `yᵀF z = bᵀz` for all `z ∈ V`.
    pub fn solve_form(&self, b: &[f64], guess: Option<&[f64]>) -> Result<Vec<f64>> {
        let n = self.dim();
        if self.constraints.is_empty() {
            let mut x = guess.map_or_else(|| vec![0.0; n], |g| g.to_vec());
            pcg(&self.form, b, &mut x, INNER_TOL, 40 * n + 200)?;
            return Ok(x);
        }
        let sys = SaddleSystem {
            a: &self.form,
            constraints: &self.constraints,
        };
        let mut rhs = b.to_vec();
        rhs.extend(std::iter::repeat(0.0).take(self.constraints.len()));
        let mut x = vec![0.0; sys.dim()];
        if let Some(g) = guess {
            x[..n].copy_from_slice(g);
        }
        minres(|u, v| sys.apply(u, v), &self.precond, &rhs, &mut x, INNER_TOL, 40 * n + 200)?;
        x.truncate(n);
        Ok(x)
    }

    fn start_vector(&self, seed: u64, index: u64) -> Vec<f64> {
        let mut r = rng::stream(seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15), rng::STREAM_KORN);
        let mut x: Vec<f64> = (0..self.dim()).map(|_| r.random_range(-1.0..1.0)).collect();
        self.project(&mut x);
        x
    }

    /// `y ∈ V` with `yᵀS z = bᵀz` for all `z ∈ V`.
    fn solve_shifted(&self, s: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        let sys = SaddleSystem {
            a: s,
            constraints: &self.constraints,
        };
        let mut rhs = b.to_vec();
        rhs.extend(std::iter::repeat(0.0).take(self.constraints.len()));
        let mut x = vec![0.0; sys.dim()];
        minres(|u, v| sys.apply(u, v), &self.precond, &rhs, &mut x, INNER_TOL, 40 * n + 200)?;
        x.truncate(n);
        Ok(x)
    }

    /// Shifted inverse iteration `x ← (F − σT)⁻¹Tx` on `V`, with `σ` half the
    /// Rayleigh estimate of the smallest pencil eigenvalue `1/μ_max`.
    pub fn inverse_iteration(&self, seed: u64, max_iter: usize, tol: f64) -> Result<EigenResult> {
        let mut x = self.start_vector(seed, 0);
        let mut mu = self.rayleigh(&x);
        let mut shifted: Option<CsrMatrix> = None;
        for it in 1..=max_iter {
            let tx = self.target.matvec(&x);
            let mut y = match &shifted {
                Some(s) => self.solve_shifted(s, &tx)?,
                None => self.solve_form(&tx, None)?,
            };
            let s = self.form.quadratic_form(&y).sqrt();
            y.iter_mut().for_each(|v| *v /= s);
            let next = self.rayleigh(&y);
            x = y;
            if (next - mu).abs() <= tol * next.abs() {
                return Ok(EigenResult {
                    value: next,
                    vector: x,
                    iterations: it,
                });
            }
            mu = next;
            if it == WARMUP {
                let sigma = SHIFT / mu;
                shifted = Some(self.form.plus(&self.target.scaled(-sigma)));
            }
        }
        Ok(EigenResult {
            value: mu,
            vector: x,
            iterations: max_iter,
        })
    }

    /// Block Rayleigh–Ritz iteration on `[X, F⁻¹R, P]` (LOBPCG with exact form solves).
    pub fn block_iteration(&self, block: usize, seed: u64, max_iter: usize, tol: f64) -> Result<EigenResult> {
        let block = block.max(1).min(self.dim().saturating_sub(self.constraints.len()).max(1));
        let mut x: Vec<Vec<f64>> = (0..block).map(|i| self.start_vector(seed, i as u64 + 1)).collect();
        let mut p: Vec<Vec<f64>> = Vec::new();
        let mut w: Vec<Vec<f64>> = Vec::new();
        let mut theta_prev = f64::NAN;
        for it in 1..=max_iter {
            let mut basis: Vec<Vec<f64>> = Vec::new();
            let mut fbasis: Vec<Vec<f64>> = Vec::new();
            for v in x.iter().chain(w.iter()).chain(p.iter()) {
                let mut v = v.clone();
                self.project(&mut v);
                for _ in 0..2 {
                    for (b, fb) in basis.iter().zip(&fbasis) {
                        let c = dot(&v, fb);
                        for (a, bb) in v.iter_mut().zip(b) {
                            *a -= c * bb;
                        }
                    }
                }
                let fv = self.form.matvec(&v);
                let nn = dot(&v, &fv);
                let scale = v.iter().map(|a| a * a).sum::<f64>();
                if !(nn > 1e-24 * scale.max(1e-300)) || nn <= 0.0 {
                    continue;
                }
                let s = 1.0 / nn.sqrt();
                basis.push(v.iter().map(|a| a * s).collect());
                fbasis.push(fv.iter().map(|a| a * s).collect());
            }
            let k = basis.len();
            let tb: Vec<Vec<f64>> = basis.iter().map(|b| self.target.matvec(b)).collect();
            let tm = DMatrix::from_fn(k, k, |i, j| 0.5 * (dot(&basis[i], &tb[j]) + dot(&basis[j], &tb[i])));
            let eig = SymmetricEigen::new(tm);
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            let top: Vec<usize> = order.into_iter().take(block.min(k)).collect();
            let combine = |coef: &dyn Fn(usize) -> f64, src: &[Vec<f64>]| -> Vec<f64> {
                let mut out = vec![0.0; self.dim()];
                for (i, b) in src.iter().enumerate() {
                    let c = coef(i);
                    if c != 0.0 {
                        for (o, v) in out.iter_mut().zip(b) {
                            *o += c * v;
                        }
                    }
                }
                out
            };
            let new_x: Vec<Vec<f64>> = top
                .iter()
                .map(|&j| combine(&|i| eig.eigenvectors[(i, j)], &basis))
                .collect();
            let theta: Vec<f64> = top.iter().map(|&j| eig.eigenvalues[j]).collect();
            // Search direction: new iterate minus its component along the old block.
            let n_old = x.len().min(k);
            p = new_x
                .iter()
                .map(|nx| {
                    let old = combine(&|i| if i < n_old { dot(nx, &fbasis[i]) } else { 0.0 }, &basis);
                    nx.iter().zip(&old).map(|(a, b)| a - b).collect()
                })
                .collect();
            x = new_x;
            let lead = theta[0];
            if (lead - theta_prev).abs() <= tol * lead.abs() {
                let vector = x[0].clone();
                return Ok(EigenResult {
                    value: self.rayleigh(&vector),
                    vector,
                    iterations: it,
                });
            }
            theta_prev = lead;
            w = x
                .iter()
                .zip(&theta)
                .map(|(xi, th)| {
                    let t = self.target.matvec(xi);
                    let f = self.form.matvec(xi);
                    let r: Vec<f64> = t.iter().zip(&f).map(|(a, b)| a - th * b).collect();
                    self.solve_form(&r, None)
                })
                .collect::<Result<Vec<_>>>()?;
        }
        let vector = x[0].clone();
        Ok(EigenResult {
            value: self.rayleigh(&vector),
            vector,
            iterations: max_iter,
        })
    }

    /// Largest sampled ratio over random constrained fields and the count above `(1+1e−8)·bound`.
    pub fn certify(&self, bound: f64, samples: usize, seed: u64) -> (f64, usize) {
        let mut r = rng::stream(seed, rng::STREAM_SAMPLES);
        let mut worst: f64 = 0.0;
        let mut violations = 0;
        for _ in 0..samples {
            let mut x: Vec<f64> = (0..self.dim()).map(|_| r.random_range(-1.0..1.0)).collect();
            self.project(&mut x);
            let q = self.rayleigh(&x);
            worst = worst.max(q);
            if q > (1.0 + 1e-8) * bound {
                violations += 1;
            }
        }
        (worst, violations)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Inequality {
    /// `‖u‖ ≤ C‖∇u‖` on mean-zero `u`.
    Pw,
    /// `‖u‖² ≤ C a_α(u,u)`.
    RobinP,
    /// `‖U‖²_{H¹} ≤ C² A_α(U,U)` on `U·n = 0`.
    KornRobin,
    /// `‖U‖²_{H¹} ≤ C² ‖∇ˢU‖²` on `U·n = 0` with the rotational average removed.
    KornRigid,
    /// `‖∇U‖² ≤ C² (‖∇ˢU‖² + ‖U‖²)`.
    KornL2,
    /// `‖U‖ ≤ C‖∇U‖` on `U·n = 0`.
    VectorPoincare,
    /// Robin Korn bound without the wall constraint.
    KornRobinFree,
}

impl Inequality {
    pub const ALL: [Inequality; 7] = [
        Inequality::Pw,
        Inequality::RobinP,
        Inequality::KornRobin,
        Inequality::KornRigid,
        Inequality::KornL2,
        Inequality::VectorPoincare,
        Inequality::KornRobinFree,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Inequality::Pw => "PW",
            Inequality::RobinP => "Robin-P",
            Inequality::KornRobin => "Korn-Robin",
            Inequality::KornRigid => "Korn-rigid",
            Inequality::KornL2 => "Korn-L2",
            Inequality::VectorPoincare => "vector-Poincare",
            Inequality::KornRobinFree => "Korn-Robin-free",
        }
    }

    /// Constants that bound a norm (not its square) are reported as `√μ_max`.
    fn squared(&self) -> bool {
        !matches!(self, Inequality::RobinP)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityReport {
    pub inequality: &'static str,
    pub constant: f64,
    /// Largest generalized eigenvalue `μ_max` of (target, form).
    pub eigenvalue: f64,
    pub eigenvalue_block: f64,
    pub agreement: f64,
    pub mesh_h: f64,
    pub iterations: usize,
    pub certified: bool,
    pub max_sample_ratio: f64,
    pub violations: usize,
    pub samples: usize,
    /// Rigid constraint requested but the domain has no rotational symmetry.
    pub rigid_constraint_dropped: bool,
    #[serde(skip)]
    pub eigenvector: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub block: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            max_iter: 3000,
            tol: 1e-14,
            block: 3,
            samples: 200,
            seed: 0,
        }
    }
}

/// Builds the pencil for an inequality on `mesh` (using its wall coefficients).
pub fn pencil(mesh: &Mesh, which: Inequality) -> Result<(Pencil, bool)> {
    let mut dropped = false;
    let p = match which {
        Inequality::Pw => {
            let c = crate::elliptic::vertex_masses(mesh);
            Pencil::new(assemble_mass(mesh), assemble_stiffness(mesh), vec![c])
        }
        Inequality::RobinP => {
            if mesh.alpha_is_zero() {
                return invalid("the Robin Poincaré inequality needs α ≢ 0");
            }
            Pencil::new(
                assemble_mass(mesh),
                assemble_stiffness(mesh).plus(&assemble_boundary_mass(mesh)),
                Vec::new(),
            )
        }
        Inequality::KornRobin | Inequality::KornRigid | Inequality::VectorPoincare => {
            let f = LameForms::new(mesh);
            let h1 = f.mass.plus(&f.grad);
            match which {
                Inequality::KornRobin => {
                    if mesh.alpha_is_zero() {
                        return invalid("the Robin Korn inequality needs α ≢ 0");
                    }
                    Pencil::new(h1, f.a_alpha, Vec::new())
                }
                Inequality::KornRigid => {
                    let zero = mesh.with_alpha(&crate::geometry::AlphaProfile::constant(0.0))?;
                    let fz = LameForms::new(&zero);
                    dropped = fz.rigid_rows.is_empty();
                    Pencil::new(h1, fz.sym, fz.rigid_rows)
                }
                _ => Pencil::new(f.mass, f.grad, Vec::new()),
            }
        }
        Inequality::KornL2 => {
            let m = vectorize(&assemble_mass(mesh));
            let k = vectorize(&assemble_stiffness(mesh));
            Pencil::new(k, assemble_sym_stiffness(mesh).plus(&m), Vec::new())
        }
        Inequality::KornRobinFree => {
            if mesh.alpha_is_zero() {
                return invalid("the Robin Korn inequality needs α ≢ 0");
            }
            let m = vectorize(&assemble_mass(mesh));
            let k = vectorize(&assemble_stiffness(mesh));
            let b = vectorize(&assemble_boundary_mass(mesh));
            Pencil::new(m.plus(&k), assemble_sym_stiffness(mesh).plus(&b), Vec::new())
        }
    };
    Ok((p, dropped))
}

pub fn inequality_constant(mesh: &Mesh, which: Inequality, opts: &EigenOptions) -> Result<InequalityReport> {
    let (p, dropped) = pencil(mesh, which)?;
    let a = p.inverse_iteration(opts.seed, opts.max_iter, opts.tol)?;
    let b = p.block_iteration(opts.block, opts.seed, opts.max_iter, opts.tol)?;
    let mu = a.value.max(b.value);
    let agreement = (a.value - b.value).abs() / mu;
    let constant = if which.squared() { mu.sqrt() } else { mu };
    let (worst, violations) = p.certify(mu, opts.samples, opts.seed);
    Ok(InequalityReport {
        inequality: which.id(),
        constant,
        eigenvalue: a.value,
        eigenvalue_block: b.value,
        agreement,
        mesh_h: mesh.h_max(),
        iterations: a.iterations + b.iterations,
        certified: violations == 0 && agreement <= 1e-8,
        max_sample_ratio: worst / mu,
        violations,
        samples: opts.samples,
        rigid_constraint_dropped: dropped,
        eigenvector: if a.value >= b.value { a.vector } else { b.vector },
    })
}

/// `C = 1/√λ₁` for `‖u‖ ≤ C‖∇u‖` on mean-zero `u`.
pub fn poincare_wirtinger_constant(mesh: &Mesh, opts: &EigenOptions) -> Result<InequalityReport> {
    inequality_constant(mesh, Inequality::Pw, opts)
}

pub fn robin_poincare_constant(mesh: &Mesh, opts: &EigenOptions) -> Result<InequalityReport> {
    inequality_constant(mesh, Inequality::RobinP, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KornVariant {
    Robin,
    Rigid,
}

pub fn korn_constant(mesh: &Mesh, variant: KornVariant, opts: &EigenOptions) -> Result<InequalityReport> {
    inequality_constant(
        mesh,
        match variant {
            KornVariant::Robin => Inequality::KornRobin,
            KornVariant::Rigid => Inequality::KornRigid,
        },
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_normalized, AlphaProfile, DomainSpec, Point, Shape};

    fn mesh(shape: Shape, alpha: f64, h: f64) -> Mesh {
        build_normalized(&DomainSpec::new(shape, AlphaProfile::constant(alpha)), h).unwrap()
    }

    #[test]
    fn two_methods_agree_on_square() {
        let m = mesh(Shape::UnitSquare, 1.0, 0.1);
        let r = poincare_wirtinger_constant(&m, &EigenOptions::default()).unwrap();
        assert!(r.certified, "{r:?}");
        let lambda = 1.0 / r.eigenvalue;
        assert!((lambda / std::f64::consts::PI.powi(2) - 1.0).abs() < 0.05, "{lambda}");
    }

    #[test]
    fn robin_p_rejects_specular() {
        let m = mesh(Shape::UnitSquare, 0.0, 0.25);
        assert!(robin_poincare_constant(&m, &EigenOptions::default()).is_err());
    }

    #[test]
    fn rotation_has_zero_sym_energy() {
        let m = mesh(Shape::Disk, 0.0, 0.25);
        let f = LameForms::new(&m);
        let jx: Vec<Point> = m.vertices.iter().map(|x| [-x[1], x[0]]).collect();
        let u = f.dofs.project(&jx);
        assert!(f.sym.quadratic_form(&u) < 1e-12 * f.grad.quadratic_form(&u));
    }

    #[test]
    fn rigid_variant_on_square_drops_constraint() {
        let m = mesh(Shape::UnitSquare, 0.0, 0.25);
        let r = korn_constant(&m, KornVariant::Rigid, &EigenOptions::default()).unwrap();
        assert!(r.rigid_constraint_dropped);
        assert!(r.constant.is_finite() && r.constant > 0.0);
    }

    #[test]
    fn robin_p_exceeds_pw_and_is_monotone_in_alpha() {
        let o = EigenOptions::default();
        let pw = poincare_wirtinger_constant(&mesh(Shape::UnitSquare, 1.0, 0.2), &o).unwrap();
        let mut last = f64::INFINITY;
        for a in [0.25, 0.5, 1.0] {
            let r = robin_poincare_constant(&mesh(Shape::UnitSquare, a, 0.2), &o).unwrap();
            assert!(r.certified);
            assert!(r.constant > pw.constant * pw.constant);
            assert!(r.constant <= last * (1.0 + 1e-12));
            last = r.constant;
        }
    }

    #[test]
    fn wall_constraint_strengthens_robin_korn() {
        let m = mesh(Shape::UnitSquare, 1.0, 0.2);
        let o = EigenOptions::default();
        let c = inequality_constant(&m, Inequality::KornRobin, &o).unwrap();
        let f = inequality_constant(&m, Inequality::KornRobinFree, &o).unwrap();
        assert!(c.certified && f.certified);
        assert!(c.constant <= f.constant);
    }

    #[test]
    fn disk_rigid_minimizer_has_no_mean_rotation() {
        let m = mesh(Shape::Disk, 0.0, 0.2);
        let r = korn_constant(&m, KornVariant::Rigid, &EigenOptions::default()).unwrap();
        assert!(!r.rigid_constraint_dropped && r.certified, "{r:?}");
        let f = LameForms::new(&m);
        assert_eq!(f.rigid_rows.len(), 1);
        let scale = f.rigid_rows[0].iter().map(|c| c.abs()).sum::<f64>() * r.eigenvector.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(dot(&f.rigid_rows[0], &r.eigenvector).abs() < 1e-10 * scale);
    }

    #[test]
    fn korn_l2_and_vector_poincare_certify() {
        let m = mesh(Shape::Disk, 0.5, 0.2);
        for which in [Inequality::KornL2, Inequality::VectorPoincare] {
            let r = inequality_constant(&m, which, &EigenOptions::default()).unwrap();
            assert!(r.certified && r.violations == 0 && r.constant > 0.0, "{r:?}");
        }
    }
}
