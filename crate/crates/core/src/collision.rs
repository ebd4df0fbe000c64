//! Conservative relaxation operators and a checker for their structural
//! properties (kernel, symmetry, spectral gap, polynomial bounds).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::velocity::VelocityGrid;

/// Radial weight `ω(v) = (1 + |v|²)^s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weight {
    pub s: f64,
}

impl Default for Weight {
    fn default() -> Self {
        Weight { s: 1.0 }
    }
}

impl Weight {
    pub fn at_speed2(&self, v2: f64) -> f64 {
        (1.0 + v2).powf(self.s)
    }

    /// Value at radius `r`.
    pub fn radial(&self, r: f64) -> f64 {
        self.at_speed2(r * r)
    }

    pub fn on_grid(&self, grid: &VelocityGrid) -> Vec<f64> {
        (0..grid.nv()).map(|k| self.at_speed2(grid.speed2(k))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CollisionModel {
    /// `𝒞f = πf − f`.
    Bgk,
    /// `𝒞f = ρμ − f`.
    MassRelax,
    /// `𝒞f = −(I−π)[ω₀⁻¹ (I−π) f]`.
    WeakBgk { omega0: Weight },
}

impl CollisionModel {
    pub fn lambda(&self) -> f64 {
        1.0
    }

    pub fn omega0(&self) -> Weight {
        match self {
            CollisionModel::WeakBgk { omega0 } => *omega0,
            _ => Weight::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let CollisionModel::WeakBgk { omega0 } = self {
            if !(omega0.s > 0.0 && omega0.s.is_finite()) {
                return invalid("weak-bgk needs a weight exponent s > 0");
            }
        }
        Ok(())
    }

    pub fn kernel_dim_expected(&self) -> usize {
        match self {
            CollisionModel::MassRelax => 1,
            _ => 4,
        }
    }
}

/// Applies the collision operator to one velocity slice.
pub fn apply_collision(model: &CollisionModel, grid: &VelocityGrid, f: &[f64], out: &mut [f64]) {
    match model {
        CollisionModel::Bgk => {
            grid.project_pi_into(f, out);
            for (o, a) in out.iter_mut().zip(f) {
                *o -= a;
            }
        }
        CollisionModel::MassRelax => {
            let rho = grid.integrate(f);
            for k in 0..f.len() {
                out[k] = rho * grid.mu[k] - f[k];
            }
        }
        CollisionModel::WeakBgk { omega0 } => {
            let mut g = grid.project_pi(f);
            for k in 0..f.len() {
                g[k] = (f[k] - g[k]) / omega0.at_speed2(grid.speed2(k));
            }
            grid.project_pi_into(&g, out);
            for k in 0..f.len() {
                out[k] -= g[k];
            }
        }
    }
}

pub fn collide(model: &CollisionModel, grid: &VelocityGrid, f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    apply_collision(model, grid, f, &mut out);
    out
}

/// Dense matrix of `𝒞` in orthonormal coordinates `a_k = f_k √(w_k/μ_k)`.
pub fn orthonormal_matrix(model: &CollisionModel, grid: &VelocityGrid) -> DMatrix<f64> {
    let nv = grid.nv();
    let s: Vec<f64> = grid.ipw.iter().map(|w| w.sqrt()).collect();
    let mut m = DMatrix::zeros(nv, nv);
    let mut e = vec![0.0; nv];
    let mut out = vec![0.0; nv];
    for l in 0..nv {
        e.iter_mut().for_each(|x| *x = 0.0);
        e[l] = 1.0 / s[l];
        apply_collision(model, grid, &e, &mut out);
        for k in 0..nv {
            m[(k, l)] = out[k] * s[k];
        }
    }
    m
}

/// Orthonormal basis of the orthogonal complement of the collision invariants,
/// in orthonormal velocity coordinates.
pub fn micro_basis(grid: &VelocityGrid) -> DMatrix<f64> {
    let nv = grid.nv();
    let s: Vec<f64> = grid.ipw.iter().map(|w| w.sqrt()).collect();
    let mut p = DMatrix::<f64>::identity(nv, nv);
    for a in 0..4 {
        let mode = grid.invariant_mode(a);
        let e = DVector::from_iterator(nv, (0..nv).map(|k| mode[k] * s[k]));
        p -= &e * e.transpose();
    }
    let eig = SymmetricEigen::new(p);
    let cols: Vec<DVector<f64>> = (0..nv)
        .filter(|&i| eig.eigenvalues[i] > 0.5)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    DMatrix::from_columns(&cols)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub kernel_dim: usize,
    pub self_adjoint_residual: f64,
    pub spectral_gap: f64,
    /// `‖𝒞(φμ)‖_{μ⁻¹}` for monomials `φ` of degree ≤ 4.
    pub a3_bounds: BTreeMap<String, f64>,
    /// `‖𝒞(φμ)‖_{ω₀μ⁻¹}` for the same monomials.
    pub a3_weighted_bounds: BTreeMap<String, f64>,
    /// Smallest constant `C` with `|∫φ f⊥| ≤ C ‖f⊥‖_{ω₀⁻¹μ⁻¹}` over the monomials.
    pub a3_moment_constant: f64,
    /// `inf ⟨−𝒞f,f⟩ / ‖f⊥‖²_{ω₀⁻¹μ⁻¹}`.
    pub weak_gap: f64,
    /// `sup ⟨𝒞f,f⟩_{ω₁μ⁻¹} / ‖f‖²_{ω₀⁻¹μ⁻¹}` over velocity-only `f`.
    pub a4_constant: f64,
    pub max_conservation_defect: f64,
}

fn monomial_name(a: u32, b: u32) -> String {
    let part = |v: &str, p: u32| match p {
        0 => String::new(),
        1 => v.to_string(),
        _ => format!("{v}^{p}"),
    };
    match (a, b) {
        (0, 0) => "1".into(),
        (_, 0) => part("v1", a),
        (0, _) => part("v2", b),
        _ => format!("{}*{}", part("v1", a), part("v2", b)),
    }
}

fn min_generalized(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (f64, f64) {
    let l = b.clone().cholesky().expect("weight matrix is SPD").l();
    let li = l.clone().try_inverse().expect("invertible factor");
    let m = &li * a * li.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let ev = SymmetricEigen::new(m).eigenvalues;
    (ev.min(), ev.max())
}

pub fn verify_assumptions(model: &CollisionModel, grid: &VelocityGrid) -> AssumptionReport {
    verify_assumptions_with(model, grid, model.omega0())
}

pub fn verify_assumptions_with(
    model: &CollisionModel,
    grid: &VelocityGrid,
    omega1: Weight,
) -> AssumptionReport {
    let nv = grid.nv();
    let c = orthonormal_matrix(model, grid);
    let scale = c.abs().max().max(1e-300);
    let self_adjoint_residual = (&c - c.transpose()).abs().max() / scale;
    let sym = (&c + c.transpose()) * 0.5;
    let ev = SymmetricEigen::new(-&sym).eigenvalues;
    let tol = 1e-10 * ev.abs().max().max(1.0);
    let kernel_dim = ev.iter().filter(|l| l.abs() <= tol).count();
    let spectral_gap = ev.iter().copied().filter(|&l| l > tol).fold(f64::INFINITY, f64::min);

    let s: Vec<f64> = grid.ipw.iter().map(|w| w.sqrt()).collect();
    let w0 = model.omega0().on_grid(grid);
    let w1 = omega1.on_grid(grid);

    let mut a3_bounds = BTreeMap::new();
    let mut a3_weighted_bounds = BTreeMap::new();
    let q = micro_basis(grid);
    let w0inv = DMatrix::from_diagonal(&DVector::from_iterator(nv, w0.iter().map(|w| 1.0 / w)));
    let b = q.transpose() * &w0inv * &q;
    let b_inv = b.clone().try_inverse().expect("SPD");
    let mut a3_moment_constant: f64 = 0.0;
    let mut max_conservation_defect: f64 = 0.0;
    for deg in 0..=4u32 {
        for a in (0..=deg).rev() {
            let bb = deg - a;
            let phi_mu: Vec<f64> = (0..nv)
                .map(|k| {
                    let v = grid.nodes[k];
                    v[0].powi(a as i32) * v[1].powi(bb as i32) * grid.mu[k]
                })
                .collect();
            let cphi = collide(model, grid, &phi_mu);
            let name = monomial_name(a, bb);
            a3_bounds.insert(name.clone(), grid.inner(&cphi, &cphi).sqrt());
            let weighted: f64 = (0..nv).map(|k| cphi[k] * cphi[k] * grid.ipw[k] * w0[k]).sum();
            a3_weighted_bounds.insert(name, weighted.sqrt());
            // ∫φ f⊥ = ⟨φμ, f⊥⟩_{μ⁻¹}; dual norm over the micro subspace.
            let g = DVector::from_iterator(nv, (0..nv).map(|k| phi_mu[k] * s[k]));
            let gq = q.transpose() * g;
            a3_moment_constant = a3_moment_constant.max((gq.transpose() * &b_inv * &gq)[0].sqrt());
        }
    }
    // Local conservation on random-like test vectors.
    for t in 0..8 {
        let f: Vec<f64> = (0..nv)
            .map(|k| grid.mu[k] * (((k * 7 + t * 13) % 17) as f64 / 17.0 - 0.4))
            .collect();
        let cf = collide(model, grid, &f);
        let invariants = if model.kernel_dim_expected() == 1 { 1 } else { 4 };
        for a in 0..invariants {
            let mode = grid.invariant_mode(a);
            let d = (0..nv).map(|k| cphi_dot(&mode, &cf, grid, k)).sum::<f64>();
            max_conservation_defect = max_conservation_defect.max(d.abs());
        }
    }

    let a_mat = q.transpose() * (-&sym) * &q;
    let (weak_gap, _) = min_generalized(&a_mat, &b);

    let w1m = DMatrix::from_diagonal(&DVector::from_vec(w1));
    let g = (&w1m * &c + c.transpose() * &w1m) * 0.5;
    let w0m = DMatrix::from_diagonal(&DVector::from_iterator(nv, w0.iter().map(|w| 1.0 / w)));
    let (_, a4_constant) = min_generalized(&g, &w0m);

    AssumptionReport {
        kernel_dim,
        self_adjoint_residual,
        spectral_gap,
        a3_bounds,
        a3_weighted_bounds,
        a3_moment_constant,
        weak_gap,
        a4_constant,
        max_conservation_defect,
    }
}

fn cphi_dot(mode: &[f64], cf: &[f64], grid: &VelocityGrid, k: usize) -> f64 {
    mode[k] * cf[k] * grid.ipw[k]
}

/// Exact solver for the implicit collision stage `(I − τ𝒞) g = f`.
#[derive(Debug, Clone)]
pub struct ImplicitCollision {
    model: CollisionModel,
    tau: f64,
    /// Dense inverse in physical coordinates (weak-bgk only).
    dense: Option<DMatrix<f64>>,
}

impl ImplicitCollision {
    pub fn new(model: CollisionModel, grid: &VelocityGrid, tau: f64) -> Self {
        let dense = match model {
            CollisionModel::WeakBgk { .. } => {
                let nv = grid.nv();
                let c = orthonormal_matrix(&model, grid);
                let m = DMatrix::<f64>::identity(nv, nv) - c * tau;
                let inv = m.cholesky().expect("I − τ𝒞 is SPD").inverse();
                let s: Vec<f64> = grid.ipw.iter().map(|w| w.sqrt()).collect();
                Some(DMatrix::from_fn(nv, nv, |k, l| inv[(k, l)] * s[l] / s[k]))
            }
            _ => None,
        };
        Self { model, tau, dense }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Overwrites `f` with `(I − τ𝒞)⁻¹ f`; `scratch` must have the slice length.
    pub fn apply(&self, grid: &VelocityGrid, f: &mut [f64], scratch: &mut [f64]) {
        let r = 1.0 / (1.0 + self.tau);
        match self.model {
            CollisionModel::Bgk => {
                grid.project_pi_into(f, scratch);
                for (a, p) in f.iter_mut().zip(scratch.iter()) {
                    *a = p + (*a - p) * r;
                }
            }
            CollisionModel::MassRelax => {
                let rho = grid.integrate(f);
                for k in 0..f.len() {
                    f[k] = (f[k] + self.tau * rho * grid.mu[k]) * r;
                }
            }
            CollisionModel::WeakBgk { .. } => {
                let m = self.dense.as_ref().expect("dense inverse");
                scratch.copy_from_slice(f);
                let n = f.len();
                for k in 0..n {
                    let row = m.row(k);
                    let mut acc = 0.0;
                    for l in 0..n {
                        acc += row[l] * scratch[l];
                    }
                    f[k] = acc;
                }
            }
        }
    }
}
