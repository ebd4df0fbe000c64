//! Gauss–Hermite velocity grid, Maxwellian, the projector onto collision
//! invariants and the moment functionals of the macroscopic fields.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};

/// Space dimension.
pub const D: f64 = 2.0;

/// `√(2d)`, the normalisation of the energy mode.
pub fn sqrt_2d() -> f64 {
    (2.0 * D).sqrt()
}

#[derive(Debug, Clone)]
pub struct VelocityGrid {
    pub n_per_axis: usize,
    /// One-dimensional Gauss–Hermite nodes for the standard normal weight.
    pub axis_nodes: Vec<f64>,
    /// One-dimensional weights, summing to 1.
    pub axis_weights: Vec<f64>,
    /// Node `k = i·n + j` is `(axis_nodes[i], axis_nodes[j])`.
    pub nodes: Vec<[f64; 2]>,
    /// Absorbed weights: `Σ_k w_k μ_k p(v_k) ≈ ∫ p μ dv`.
    pub weights: Vec<f64>,
    pub mu: Vec<f64>,
    /// `w_k μ_k`, the probability weights of the tensor rule.
    pub wmu: Vec<f64>,
    /// `w_k / μ_k`, the weights of the `μ⁻¹` inner product.
    pub ipw: Vec<f64>,
    pub v_max: f64,
}

pub fn maxwellian(v: [f64; 2]) -> f64 {
    (-(v[0] * v[0] + v[1] * v[1]) / 2.0).exp() / (2.0 * std::f64::consts::PI)
}

/// Orthonormal probabilists' Hermite values `p_0 … p_{n}` at `x`.
fn hermite_orthonormal(n: usize, x: f64) -> Vec<f64> {
    let mut p = vec![0.0; n + 1];
    p[0] = 1.0;
    if n >= 1 {
        p[1] = x;
    }
    for k in 1..n {
        p[k + 1] = (x * p[k] - (k as f64).sqrt() * p[k - 1]) / ((k + 1) as f64).sqrt();
    }
    p
}

/// Gauss–Hermite rule for the standard normal density (Golub–Welsch, Newton-polished).
pub fn gauss_hermite_1d(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jac[(k - 1, k)] = b;
        jac[(k, k - 1)] = b;
    }
    let mut x: Vec<f64> = SymmetricEigen::new(jac).eigenvalues.iter().copied().collect();
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for xi in x.iter_mut() {
        for _ in 0..3 {
            let p = hermite_orthonormal(n, *xi);
            let dp = (n as f64).sqrt() * p[n - 1];
            *xi -= p[n] / dp;
        }
    }
    for i in 0..n / 2 {
        let a = 0.5 * (x[n - 1 - i] - x[i]);
        x[i] = -a;
        x[n - 1 - i] = a;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    let mut w: Vec<f64> = x
        .iter()
        .map(|&xi| {
            let p = hermite_orthonormal(n - 1, xi);
            1.0 / p.iter().map(|q| q * q).sum::<f64>()
        })
        .collect();
    for i in 0..n / 2 {
        let a = 0.5 * (w[i] + w[n - 1 - i]);
        w[i] = a;
        w[n - 1 - i] = a;
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|wi| *wi /= s);
    (x, w)
}

pub fn gauss_hermite_grid(n_per_axis: usize) -> Result<VelocityGrid> {
    if n_per_axis < 6 {
        return invalid(format!(
            "n_per_axis = {n_per_axis}; at least 6 nodes per axis are required"
        ));
    }
    let n = n_per_axis;
    let (x, w) = gauss_hermite_1d(n);
    let mut nodes = Vec::with_capacity(n * n);
    let mut wmu = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            nodes.push([x[i], x[j]]);
            wmu.push(w[i] * w[j]);
        }
    }
    let mu: Vec<f64> = nodes.iter().map(|&v| maxwellian(v)).collect();
    let weights: Vec<f64> = wmu.iter().zip(&mu).map(|(a, m)| a / m).collect();
    let ipw: Vec<f64> = weights.iter().zip(&mu).map(|(a, m)| a / m).collect();
    let v_max = nodes
        .iter()
        .map(|v| v[0].hypot(v[1]))
        .fold(0.0, f64::max);
    Ok(VelocityGrid {
        n_per_axis: n,
        axis_nodes: x,
        axis_weights: w,
        nodes,
        weights,
        mu,
        wmu,
        ipw,
        v_max,
    })
}

/// Per-cell macroscopic fields.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroFields {
    pub rho: Vec<f64>,
    pub m: Vec<[f64; 2]>,
    pub theta: Vec<f64>,
}

/// Per-cell higher moments; `mq` is stored as a full symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentFields {
    pub mp: Vec<[f64; 2]>,
    pub mq: Vec<[[f64; 2]; 2]>,
}

/// Per-cell moment of one velocity slice.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CellMoments {
    pub rho: f64,
    pub m: [f64; 2],
    pub theta: f64,
    pub mp: [f64; 2],
    pub mq: [[f64; 2]; 2],
}

impl VelocityGrid {
    pub fn nv(&self) -> usize {
        self.nodes.len()
    }

    pub fn speed2(&self, k: usize) -> f64 {
        let v = self.nodes[k];
        v[0] * v[0] + v[1] * v[1]
    }

    /// Energy weight `(|v|² − d)/√(2d)`.
    pub fn energy_poly(&self, k: usize) -> f64 {
        (self.speed2(k) - D) / sqrt_2d()
    }

    /// Index of the node `−v_k`.
    pub fn mirror(&self, k: usize) -> usize {
        self.nv() - 1 - k
    }

    /// `Σ_k w_k μ_k φ(v_k)`, summed over `±v` pairs so odd integrands vanish exactly.
    pub fn integrate_mu(&self, phi: impl Fn([f64; 2]) -> f64) -> f64 {
        let mut s = 0.0;
        for k in 0..self.nv() {
            let m = self.mirror(k);
            if k < m {
                s += self.wmu[k] * (phi(self.nodes[k]) + phi(self.nodes[m]));
            } else if k == m {
                s += self.wmu[k] * phi(self.nodes[k]);
            }
        }
        s
    }

    /// `∫ g dv ≈ Σ w_k g_k`.
    pub fn integrate(&self, g: &[f64]) -> f64 {
        g.iter().zip(&self.weights).map(|(a, w)| a * w).sum()
    }

    /// Velocity-only `μ⁻¹` inner product.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter()
            .zip(g)
            .zip(&self.ipw)
            .map(|((a, b), w)| a * b * w)
            .sum()
    }

    pub fn rho_m_theta(&self, f: &[f64]) -> (f64, [f64; 2], f64) {
        let (mut r, mut m0, mut m1, mut t) = (0.0, 0.0, 0.0, 0.0);
        for k in 0..f.len() {
            let a = self.weights[k] * f[k];
            let v = self.nodes[k];
            r += a;
            m0 += a * v[0];
            m1 += a * v[1];
            t += a * self.energy_poly(k);
        }
        (r, [m0, m1], t)
    }

    pub fn cell_moments(&self, f: &[f64]) -> CellMoments {
        let mut c = CellMoments::default();
        let s = sqrt_2d();
        for k in 0..f.len() {
            let a = self.weights[k] * f[k];
            let v = self.nodes[k];
            let e = self.speed2(k);
            c.rho += a;
            c.m[0] += a * v[0];
            c.m[1] += a * v[1];
            c.theta += a * (e - D) / s;
            let p = (e - D - 2.0) / s;
            c.mp[0] += a * v[0] * p;
            c.mp[1] += a * v[1] * p;
            c.mq[0][0] += a * (v[0] * v[0] - 1.0);
            c.mq[0][1] += a * v[0] * v[1];
            c.mq[1][1] += a * (v[1] * v[1] - 1.0);
        }
        c.mq[1][0] = c.mq[0][1];
        c
    }

    /// `πf = ρμ + m·vμ + θ (|v|²−d)/√(2d) μ` written into `out`.
    pub fn project_pi_into(&self, f: &[f64], out: &mut [f64]) {
        let (r, m, t) = self.rho_m_theta(f);
        for k in 0..f.len() {
            let v = self.nodes[k];
            out[k] = self.mu[k] * (r + m[0] * v[0] + m[1] * v[1] + t * self.energy_poly(k));
        }
    }

    pub fn project_pi(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        self.project_pi_into(f, &mut out);
        out
    }

    /// Conserved-mode function `μ, v₁μ, v₂μ, (|v|²−d)/√(2d) μ` values for index `a`.
    pub fn invariant_mode(&self, a: usize) -> Vec<f64> {
        (0..self.nv())
            .map(|k| {
                let v = self.nodes[k];
                let p = match a {
                    0 => 1.0,
                    1 => v[0],
                    2 => v[1],
                    _ => self.energy_poly(k),
                };
                p * self.mu[k]
            })
            .collect()
    }

    fn check(&self, values: &[f64]) -> Result<usize> {
        let nv = self.nv();
        if values.is_empty() || values.len() % nv != 0 {
            return Err(Error::ShapeMismatch {
                expected: nv,
                got: values.len(),
            });
        }
        Ok(values.len() / nv)
    }
}

/// Mass, momentum and energy of every cell of a cell-major array.
pub fn moments(grid: &VelocityGrid, values: &[f64]) -> Result<MacroFields> {
    grid.check(values)?;
    let per: Vec<(f64, [f64; 2], f64)> = values
        .par_chunks(grid.nv())
        .map(|f| grid.rho_m_theta(f))
        .collect();
    Ok(MacroFields {
        rho: per.iter().map(|p| p.0).collect(),
        m: per.iter().map(|p| p.1).collect(),
        theta: per.iter().map(|p| p.2).collect(),
    })
}

/// `M_p[f]` per cell.
pub fn moment_p(grid: &VelocityGrid, values: &[f64]) -> Result<Vec<[f64; 2]>> {
    grid.check(values)?;
    Ok(values
        .par_chunks(grid.nv())
        .map(|f| grid.cell_moments(f).mp)
        .collect())
}

/// `M_q[f]` per cell.
pub fn moment_q(grid: &VelocityGrid, values: &[f64]) -> Result<Vec<[[f64; 2]; 2]>> {
    grid.check(values)?;
    Ok(values
        .par_chunks(grid.nv())
        .map(|f| grid.cell_moments(f).mq)
        .collect())
}

/// All moments per cell in one pass.
pub fn all_moments(grid: &VelocityGrid, values: &[f64]) -> Result<Vec<CellMoments>> {
    grid.check(values)?;
    Ok(values
        .par_chunks(grid.nv())
        .map(|f| grid.cell_moments(f))
        .collect())
}

/// Applies π cell by cell.
pub fn project_pi_field(grid: &VelocityGrid, values: &[f64]) -> Result<Vec<f64>> {
    grid.check(values)?;
    let mut out = vec![0.0; values.len()];
    out.par_chunks_mut(grid.nv())
        .zip(values.par_chunks(grid.nv()))
        .for_each(|(o, f)| grid.project_pi_into(f, o));
    Ok(out)
}
