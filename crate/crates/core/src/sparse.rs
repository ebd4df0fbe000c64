//! Compressed-row matrices and Krylov solvers.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl CsrMatrix {
    /// Sums duplicate entries; column indices sorted within rows.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0; n_rows + 1];
        let mut indices = Vec::with_capacity(t.len());
        let mut data: Vec<f64> = Vec::with_capacity(t.len());
        let mut last = (usize::MAX, usize::MAX);
        for (i, j, v) in t {
            if (i, j) == last {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(j);
                data.push(v);
                indptr[i + 1] += 1;
                last = (i, j);
            }
        }
        for i in 0..n_rows {
            indptr[i + 1] += indptr[i];
        }
        Self {
            n_rows,
            n_cols,
            indptr,
            indices,
            data,
        }
    }

    /// `self + other` (same shape).
    pub fn plus(&self, other: &CsrMatrix) -> CsrMatrix {
        let mut t = Vec::with_capacity(self.nnz() + other.nnz());
        for m in [self, other] {
            for i in 0..m.n_rows {
                for p in m.indptr[i]..m.indptr[i + 1] {
                    t.push((i, m.indices[p], m.data[p]));
                }
            }
        }
        CsrMatrix::from_triplets(self.n_rows, self.n_cols, t)
    }

    pub fn scaled(&self, s: f64) -> CsrMatrix {
        let mut m = self.clone();
        m.data.iter_mut().for_each(|v| *v *= s);
        m
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n_rows {
            let mut s = 0.0;
            for p in self.indptr[i]..self.indptr[i + 1] {
                s += self.data[p] * x[self.indices[p]];
            }
            y[i] = s;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| {
                (self.indptr[i]..self.indptr[i + 1])
                    .find(|&p| self.indices[p] == i)
                    .map_or(0.0, |p| self.data[p])
            })
            .collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = &self.indices[self.indptr[i]..self.indptr[i + 1]];
        r.binary_search(&j).map_or(0.0, |p| self.data[self.indptr[i] + p])
    }

    /// `max |a_ij − a_ji| / max |a_ij|`.
    pub fn symmetry_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..self.n_rows {
            for p in self.indptr[i]..self.indptr[i + 1] {
                let j = self.indices[p];
                scale = scale.max(self.data[p].abs());
                worst = worst.max((self.data[p] - self.get(j, i)).abs());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.matvec(x))
    }

    /// Matrix Market coordinate format, symmetric storage not assumed.
    pub fn to_matrix_market(&self) -> String {
        let mut s = String::from("%%MatrixMarket matrix coordinate real general\n");
        let _ = writeln!(s, "{} {} {}", self.n_rows, self.n_cols, self.nnz());
        for i in 0..self.n_rows {
            for p in self.indptr[i]..self.indptr[i + 1] {
                let _ = writeln!(s, "{} {} {:.17e}", i + 1, self.indices[p] + 1, self.data[p]);
            }
        }
        s
    }

    /// `Pᵀ A P` for a sparse column map `P` given row-wise as `(column, coefficient)` lists.
    pub fn congruence(&self, rows: &[Vec<(usize, f64)>], n_reduced: usize) -> CsrMatrix {
        let mut t = Vec::with_capacity(self.nnz() * 2);
        for i in 0..self.n_rows {
            for p in self.indptr[i]..self.indptr[i + 1] {
                let j = self.indices[p];
                for &(a, ca) in &rows[i] {
                    for &(b, cb) in &rows[j] {
                        t.push((a, b, ca * self.data[p] * cb));
                    }
                }
            }
        }
        CsrMatrix::from_triplets(n_reduced, n_reduced, t)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (u, v) in y.iter_mut().zip(x) {
        *u += a * v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Jacobi-preconditioned conjugate gradients; `x` holds the initial guess.
pub fn pcg(a: &CsrMatrix, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<SolveStats> {
    let n = b.len();
    let dinv: Vec<f64> = a.diagonal().iter().map(|d| if *d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let bn = norm(b);
    if bn == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut r = a.matvec(x);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        let rn = norm(&r) / bn;
        if rn <= tol {
            return Ok(SolveStats {
                iterations: it,
                residual: rn,
            });
        }
        a.matvec_into(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        axpy(x, alpha, &p);
        axpy(&mut r, -alpha, &ap);
        for i in 0..n {
            z[i] = r[i] * dinv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rn = norm(&r) / bn;
    if rn <= tol {
        return Ok(SolveStats {
            iterations: max_iter,
            residual: rn,
        });
    }
    Err(Error::NoConvergence {
        method: "pcg",
        iterations: max_iter,
        residual: rn,
    })
}

/// Symmetric matrix bordered by dense constraint rows:
/// `[A Cᵀ; C 0]`.
#[derive(Debug, Clone)]
pub struct SaddleSystem<'a> {
    pub a: &'a CsrMatrix,
    pub constraints: &'a [Vec<f64>],
}

impl SaddleSystem<'_> {
    pub fn dim(&self) -> usize {
        self.a.n_rows + self.constraints.len()
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.a.n_rows;
        self.a.matvec_into(&x[..n], &mut y[..n]);
        for (k, c) in self.constraints.iter().enumerate() {
            let lam = x[n + k];
            axpy(&mut y[..n], lam, c);
            y[n + k] = dot(c, &x[..n]);
        }
    }

    /// Diagonal of the block-Jacobi preconditioner `diag(A)` and `C diag(A)⁻¹ Cᵀ`.
    pub fn preconditioner(&self) -> Vec<f64> {
        let d = self.a.diagonal();
        let mut out: Vec<f64> = d.iter().map(|v| if *v > 0.0 { 1.0 / v } else { 1.0 }).collect();
        for c in self.constraints {
            let s: f64 = c.iter().zip(&d).map(|(ci, di)| ci * ci / di.max(1e-300)).sum();
            out.push(1.0 / s);
        }
        out
    }
}

/// Preconditioned MINRES for a symmetric indefinite operator with diagonal SPD preconditioner `minv`.
pub fn minres(
    apply: impl Fn(&[f64], &mut [f64]),
    minv: &[f64],
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveStats> {
    let n = b.len();
    let bn = norm(b);
    if bn == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut tmp = vec![0.0; n];
    let true_residual = |x: &[f64], tmp: &mut [f64]| {
        apply(x, tmp);
        let r: f64 = b.iter().zip(tmp.iter()).map(|(a, c)| (a - c) * (a - c)).sum();
        r.sqrt() / bn
    };
    let mut total = 0;
    // Restart if the recurrence residual drifts from the true one.
    for _cycle in 0..4 {
        apply(x, &mut tmp);
        let mut r1: Vec<f64> = (0..n).map(|i| b[i] - tmp[i]).collect();
        let mut y: Vec<f64> = (0..n).map(|i| minv[i] * r1[i]).collect();
        let mut beta1 = dot(&r1, &y);
        if beta1 <= 0.0 {
            return Ok(SolveStats {
                iterations: total,
                residual: true_residual(x, &mut tmp),
            });
        }
        beta1 = beta1.sqrt();
        let mut r2 = r1.clone();
        let (mut oldb, mut beta) = (0.0, beta1);
        let (mut dbar, mut epsln) = (0.0, 0.0);
        let mut phibar = beta1;
        let (mut cs, mut sn) = (-1.0f64, 0.0f64);
        let mut w = vec![0.0; n];
        let mut w2 = vec![0.0; n];
        let mut v = vec![0.0; n];
        let prec_b: f64 = (0..n).map(|i| b[i] * b[i] * minv[i]).sum::<f64>().sqrt();
        while total < max_iter {
            total += 1;
            let s = 1.0 / beta;
            for i in 0..n {
                v[i] = s * y[i];
            }
            apply(&v, &mut y);
            if oldb != 0.0 {
                axpy(&mut y, -beta / oldb, &r1);
            }
            let alfa = dot(&v, &y);
            axpy(&mut y, -alfa / beta, &r2);
            std::mem::swap(&mut r1, &mut r2);
            r2.copy_from_slice(&y);
            for i in 0..n {
                y[i] = minv[i] * r2[i];
            }
            oldb = beta;
            beta = dot(&r2, &y).max(0.0).sqrt();
            let oldeps = epsln;
            let delta = cs * dbar + sn * alfa;
            let gbar = sn * dbar - cs * alfa;
            epsln = sn * beta;
            dbar = -cs * beta;
            let gamma = gbar.hypot(beta).max(1e-300);
            cs = gbar / gamma;
            sn = beta / gamma;
            let phi = cs * phibar;
            phibar *= sn;
            let denom = 1.0 / gamma;
            let w1 = std::mem::take(&mut w2);
            w2 = w;
            w = (0..n)
                .map(|i| (v[i] - oldeps * w1[i] - delta * w2[i]) * denom)
                .collect();
            axpy(x, phi, &w);
            if phibar / prec_b <= 0.1 * tol || beta == 0.0 {
                break;
            }
        }
        let rn = true_residual(x, &mut tmp);
        if rn <= tol {
            return Ok(SolveStats {
                iterations: total,
                residual: rn,
            });
        }
        if total >= max_iter {
            return Err(Error::NoConvergence {
                method: "minres",
                iterations: total,
                residual: rn,
            });
        }
    }
    let rn = true_residual(x, &mut tmp);
    if rn <= tol {
        Ok(SolveStats {
            iterations: total,
            residual: rn,
        })
    } else {
        Err(Error::NoConvergence {
            method: "minres",
            iterations: total,
            residual: rn,
        })
    }
}
