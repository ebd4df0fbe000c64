//! Modified scalar product, lemma diagnostics, coercivity certificates and
//! decay fits.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::BoundaryOperator;
use crate::collision::{collide, CollisionModel, Weight};
use crate::elliptic::{cell_gradients, LameSolver, PoissonSolver, ScalarField, VectorField};
use crate::error::{invalid, Error, Result};
use crate::geometry::{CellEdge, Mesh, Point};
use crate::rng;
use crate::transport::{h_inner, make_admissible, transport_part, ConservedModes, Trajectory};
use crate::velocity::{all_moments, CellMoments, VelocityGrid};

type Sym2 = [[f64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Strong,
    Epsilon,
    Weak,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypoParams {
    pub eta: f64,
    pub epsilon: f64,
    pub variant: Variant,
}

impl HypoParams {
    pub fn new(eta: f64, epsilon: f64, variant: Variant) -> Result<Self> {
        let p = Self { eta, epsilon, variant };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta < 1.0) {
            return invalid(format!("eta = {} must lie in [0, 1)", self.eta));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return invalid(format!("epsilon = {} must lie in (0, 1]", self.epsilon));
        }
        Ok(())
    }

    /// `(η₁, η₂, η₃) = (η, η^{3/2}, η^{7/4})`.
    pub fn etas(&self) -> [f64; 3] {
        [self.eta, self.eta.powf(1.5), self.eta.powf(1.75)]
    }

    /// Cross-term weights, with the extra factor `ε` of the epsilon variant.
    pub fn weights(&self) -> [f64; 3] {
        let s = if self.variant == Variant::Epsilon { self.epsilon } else { 1.0 };
        self.etas().map(|e| e * s)
    }
}

/// `u[θ]`, `U[m]`, `u_N[ρ]` and their cellwise derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxSolutions {
    pub u_theta: ScalarField,
    pub u_m: VectorField,
    pub u_rho: ScalarField,
    pub grad_u_theta: Vec<Point>,
    pub sym_grad_u_m: Vec<Sym2>,
    pub grad_u_rho: Vec<Point>,
}

/// Assembled elliptic solvers reused across states on one mesh.
#[derive(Debug, Clone)]
pub struct AuxSolver {
    pub theta: PoissonSolver,
    pub rho: PoissonSolver,
    pub lame: LameSolver,
}

impl AuxSolver {
    pub fn new(mesh: &Mesh) -> Self {
        Self {
            theta: PoissonSolver::new(mesh),
            rho: PoissonSolver::neumann(mesh),
            lame: LameSolver::new(mesh),
        }
    }

    pub fn solve_sources(&self, mesh: &Mesh, theta: &[f64], m: &[Point], rho: &[f64]) -> Result<AuxSolutions> {
        let u_theta = self.theta.solve(mesh, theta)?;
        let u_m = self.lame.solve(mesh, m)?;
        let u_rho = self.rho.solve(mesh, rho)?;
        let comp = |d: usize| u_m.values.iter().map(|p| p[d]).collect::<Vec<f64>>();
        let g0 = cell_gradients(mesh, &comp(0));
        let g1 = cell_gradients(mesh, &comp(1));
        let sym_grad_u_m = g0
            .iter()
            .zip(&g1)
            .map(|(a, b)| {
                let off = 0.5 * (a[1] + b[0]);
                [[a[0], off], [off, b[1]]]
            })
            .collect();
        Ok(AuxSolutions {
            grad_u_theta: cell_gradients(mesh, &u_theta.values),
            grad_u_rho: cell_gradients(mesh, &u_rho.values),
            sym_grad_u_m,
            u_theta,
            u_m,
            u_rho,
        })
    }

    /// Solves with the macroscopic fields of `moments`. Fields whose `L²` norm is
    /// below `floor` are treated as zero; compatibility defects up to
    /// [`DRIFT_TOL`] (round-off drift of the conserved quantities) are removed.
    fn solve_moments(&self, mesh: &Mesh, moments: &[CellMoments], floor: f64) -> Result<AuxSolutions> {
        let l2 = |g: &dyn Fn(&CellMoments) -> f64| -> f64 {
            moments
                .iter()
                .zip(&mesh.cell_areas)
                .map(|(c, a)| a * g(c) * g(c))
                .sum::<f64>()
                .sqrt()
        };
        let keep = |n: f64| n > floor;
        let n = moments.len();
        let mut theta: Vec<f64> = if keep(l2(&|c| c.theta)) {
            moments.iter().map(|c| c.theta).collect()
        } else {
            vec![0.0; n]
        };
        let mut rho: Vec<f64> = if keep(l2(&|c| c.rho)) {
            moments.iter().map(|c| c.rho).collect()
        } else {
            vec![0.0; n]
        };
        let mn = l2(&|c| (c.m[0] * c.m[0] + c.m[1] * c.m[1]).sqrt());
        let mut m: Vec<Point> = if keep(mn) {
            moments.iter().map(|c| c.m).collect()
        } else {
            vec![[0.0, 0.0]; n]
        };
        remove_mean_drift(mesh, &mut rho);
        if self.theta.neumann {
            remove_mean_drift(mesh, &mut theta);
        }
        if !self.lame.forms.rigid_rows.is_empty() {
            remove_rotation_drift(mesh, &mut m);
        }
        self.solve_sources(mesh, &theta, &m, &rho)
    }
}

/// Absolute tolerance on `∫ξ` and `∫Ξ·Jx` treated as round-off drift.
pub const DRIFT_TOL: f64 = 1e-12;

fn remove_mean_drift(mesh: &Mesh, xi: &mut [f64]) {
    let total: f64 = xi.iter().zip(&mesh.cell_areas).map(|(x, a)| a * x).sum();
    if total != 0.0 && total.abs() <= DRIFT_TOL {
        let mean = total / mesh.total_area;
        xi.iter_mut().for_each(|x| *x -= mean);
    }
}

fn remove_rotation_drift(mesh: &Mesh, xi: &mut [Point]) {
    let (mut dot, mut nj) = (0.0, 0.0);
    for (k, x) in mesh.cell_centroids.iter().enumerate() {
        let a = mesh.cell_areas[k];
        dot += a * (-xi[k][0] * x[1] + xi[k][1] * x[0]);
        nj += a * (x[0] * x[0] + x[1] * x[1]);
    }
    if dot != 0.0 && dot.abs() <= DRIFT_TOL {
        let c = dot / nj;
        for (k, x) in mesh.cell_centroids.iter().enumerate() {
            xi[k][0] += c * x[1];
            xi[k][1] -= c * x[0];
        }
    }
}

/// `[⟨∇u[θ_f], M_p[g]⟩, ⟨∇ˢU[m_f], M_q[g]⟩, ⟨∇u_N[ρ_f], m[g]⟩]`.
pub fn cross_terms(mesh: &Mesh, aux_f: &AuxSolutions, moments_g: &[CellMoments]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (c, g) in moments_g.iter().enumerate() {
        let a = mesh.cell_areas[c];
        let gt = aux_f.grad_u_theta[c];
        let s = aux_f.sym_grad_u_m[c];
        let gr = aux_f.grad_u_rho[c];
        out[0] += a * (gt[0] * g.mp[0] + gt[1] * g.mp[1]);
        out[1] += a * (s[0][0] * g.mq[0][0] + 2.0 * s[0][1] * g.mq[0][1] + s[1][1] * g.mq[1][1]);
        out[2] += a * (gr[0] * g.m[0] + gr[1] * g.m[1]);
    }
    out
}

fn add3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Per-state quantities from which every Rayleigh quotient is a closed form in `(η, ε)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleTerms {
    pub h2: f64,
    pub perp2: f64,
    pub rho2: f64,
    pub m2: f64,
    pub theta2: f64,
    /// `‖√(α(2−α)) D⊥f₊‖²` on the boundary.
    pub dperp2: f64,
    /// `‖f‖²` in `L²(ω₀⁻¹μ⁻¹)`.
    pub h0_2: f64,
    /// `⟨T f, f⟩_𝓗`.
    pub transport: f64,
    /// `⟨−𝒞f, f⟩_𝓗`.
    pub collision: f64,
    /// Cross terms of `f` with itself (one side).
    pub base: [f64; 3],
    /// Symmetrized cross terms of `f` with `T f`.
    pub cross_t: [f64; 3],
    /// Symmetrized cross terms of `f` with `𝒞f`.
    pub cross_c: [f64; 3],
}

impl SampleTerms {
    /// `⟨⟨−𝓛_ε f, f⟩⟩`.
    pub fn numerator(&self, p: &HypoParams) -> f64 {
        let e = p.epsilon;
        let w = p.weights();
        let mut n = self.transport / e + self.collision / (e * e);
        for k in 0..3 {
            n += w[k] * (self.cross_t[k] / e - self.cross_c[k] / (e * e));
        }
        n
    }

    /// `|||f|||²`.
    pub fn hypo_norm2(&self, p: &HypoParams) -> f64 {
        let w = p.weights();
        self.h2 + 2.0 * (0..3).map(|k| w[k] * self.base[k]).sum::<f64>()
    }

    /// Norm controlled by the certificate: `|||f|||²`, or `‖f‖²_{𝓗₀}` for the weak variant.
    pub fn denominator(&self, p: &HypoParams) -> f64 {
        match p.variant {
            Variant::Weak => self.h0_2,
            _ => self.hypo_norm2(p),
        }
    }

    pub fn quotient(&self, p: &HypoParams) -> f64 {
        self.numerator(p) / self.denominator(p)
    }

    /// Largest `κ` with `⟨⟨−𝓛_εf,f⟩⟩ ≥ κ(|||f|||² + ε⁻²‖f⊥‖²)` on this state.
    pub fn extended_quotient(&self, p: &HypoParams) -> f64 {
        self.numerator(p) / (self.denominator(p) + self.perp2 / (p.epsilon * p.epsilon))
    }

    /// Left-hand sides of the energy, momentum and mass lemmas (`ε = 1`).
    pub fn lemma_lhs(&self) -> [f64; 3] {
        [0, 1, 2].map(|k| self.cross_t[k] - self.cross_c[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityResidual {
    pub l2: f64,
    pub h_minus1: f64,
    /// `L²` norm of the divergence term the residual is compared with.
    pub reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaTerms {
    pub lhs: f64,
    pub controlled: f64,
    pub allowed: BTreeMap<&'static str, f64>,
}

impl LemmaTerms {
    pub fn allowed_sum(&self) -> f64 {
        self.allowed.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaResiduals {
    /// `⟨−𝓛f,f⟩ − λ‖f⊥‖² − ½‖√(α(2−α))D⊥f₊‖²`.
    pub micro_gap: f64,
    pub dissipation: f64,
    pub rho_lf: IdentityResidual,
    pub theta_lf: IdentityResidual,
    pub m_lf: IdentityResidual,
    /// `max |M_p[f] − M_p[f⊥]|`.
    pub mp_f: f64,
    /// `max |M_q[f] − √(2/d)θI − M_q[f⊥]|`.
    pub mq_f: f64,
    /// Energy, momentum and mass lemmas.
    pub lemmas: [LemmaTerms; 3],
}

/// Empirical constants making `lhs ≥ κ·controlled − C·allowed` hold on a state set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaConstants {
    pub kappa: f64,
    pub c: f64,
    pub min_margin: f64,
}

/// Everything needed to evaluate the modified scalar product on one mesh.
pub struct HypoContext<'a> {
    pub mesh: &'a Mesh,
    pub grid: &'a VelocityGrid,
    pub model: CollisionModel,
    pub boundary: BoundaryOperator,
    pub aux: AuxSolver,
    pub modes: ConservedModes,
    omega0: Vec<f64>,
}

impl<'a> HypoContext<'a> {
    pub fn new(mesh: &'a Mesh, grid: &'a VelocityGrid, model: CollisionModel) -> Result<Self> {
        model.validate()?;
        let omega0 = match model {
            CollisionModel::WeakBgk { omega0 } => omega0.on_grid(grid),
            _ => vec![1.0; grid.nv()],
        };
        Ok(Self {
            boundary: BoundaryOperator::new(mesh, grid)?,
            aux: AuxSolver::new(mesh),
            modes: ConservedModes::of(mesh),
            mesh,
            grid,
            model,
            omega0,
        })
    }

    fn check(&self, f: &[f64]) -> Result<()> {
        let expected = self.mesh.n_cells() * self.grid.nv();
        if f.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                got: f.len(),
            });
        }
        Ok(())
    }

    pub fn transport(&self, f: &[f64]) -> Vec<f64> {
        transport_part(self.mesh, self.grid, &self.boundary, f)
    }

    pub fn collision(&self, f: &[f64]) -> Vec<f64> {
        let nv = self.grid.nv();
        f.par_chunks(nv).flat_map_iter(|c| collide(&self.model, self.grid, c)).collect()
    }

    /// `𝓛_ε f`.
    pub fn generator(&self, f: &[f64], epsilon: f64) -> Vec<f64> {
        let t = self.transport(f);
        let c = self.collision(f);
        t.iter()
            .zip(&c)
            .map(|(t, c)| -t / epsilon + c / (epsilon * epsilon))
            .collect()
    }

    pub fn moments(&self, f: &[f64]) -> Result<Vec<CellMoments>> {
        all_moments(self.grid, f)
    }

    pub fn h_inner(&self, f: &[f64], g: &[f64]) -> f64 {
        h_inner(self.mesh, self.grid, f, g)
    }

    /// `Σ_c |T_c| Σ_k w_k ψ_k f² / μ_k` for a velocity weight `ψ`.
    pub fn weighted_norm2(&self, f: &[f64], psi: &[f64]) -> f64 {
        let nv = self.grid.nv();
        self.mesh
            .cell_areas
            .iter()
            .enumerate()
            .map(|(c, a)| {
                let fc = &f[c * nv..(c + 1) * nv];
                a * (0..nv).map(|k| self.grid.ipw[k] * psi[k] * fc[k] * fc[k]).sum::<f64>()
            })
            .sum()
    }

    /// `‖f‖²_{𝓗₀}` with the weight `ω₀⁻¹` of the collision model.
    pub fn h0_norm2(&self, f: &[f64]) -> f64 {
        let psi: Vec<f64> = self.omega0.iter().map(|w| 1.0 / w).collect();
        self.weighted_norm2(f, &psi)
    }

    pub fn solve_aux(&self, f: &[f64]) -> Result<AuxSolutions> {
        self.check(f)?;
        let m = self.moments(f)?;
        self.aux.solve_moments(self.mesh, &m, 1e-12 * self.h_inner(f, f).sqrt())
    }

    pub fn hypo_inner(&self, f: &[f64], g: &[f64], p: &HypoParams) -> Result<f64> {
        self.check(g)?;
        let w = p.weights();
        let base = self.h_inner(f, g);
        if w.iter().all(|x| *x == 0.0) {
            return Ok(base);
        }
        let (af, ag) = (self.solve_aux(f)?, self.solve_aux(g)?);
        let (mf, mg) = (self.moments(f)?, self.moments(g)?);
        let c = add3(cross_terms(self.mesh, &af, &mg), cross_terms(self.mesh, &ag, &mf));
        Ok(base + (0..3).map(|k| w[k] * c[k]).sum::<f64>())
    }

    pub fn hypo_norm2(&self, f: &[f64], p: &HypoParams) -> Result<f64> {
        self.hypo_inner(f, f, p)
    }

    /// Closed-form pieces of `⟨⟨−𝓛_εf,f⟩⟩` and `|||f|||²`.
    pub fn sample_terms(&self, f: &[f64]) -> Result<SampleTerms> {
        self.check(f)?;
        let mesh = self.mesh;
        let scale = self.h_inner(f, f).sqrt();
        let floor = 1e-12 * scale;
        let tf = self.transport(f);
        let cf = self.collision(f);
        let (mf, mt, mc) = (self.moments(f)?, self.moments(&tf)?, self.moments(&cf)?);
        let af = self.aux.solve_moments(mesh, &mf, floor)?;
        let at = self.aux.solve_moments(mesh, &mt, floor)?;
        let ac = self.aux.solve_moments(mesh, &mc, floor)?;
        let (h2, perp2, rho2, m2, theta2) = norms2(mesh, self.grid, f);
        Ok(SampleTerms {
            h2,
            perp2,
            rho2,
            m2,
            theta2,
            dperp2: self.boundary.dperp_boundary_norm(self.grid, f),
            h0_2: self.h0_norm2(f),
            transport: self.h_inner(&tf, f),
            collision: -self.h_inner(&cf, f),
            base: cross_terms(mesh, &af, &mf),
            cross_t: add3(cross_terms(mesh, &af, &mt), cross_terms(mesh, &at, &mf)),
            cross_c: add3(cross_terms(mesh, &af, &mc), cross_terms(mesh, &ac, &mf)),
        })
    }

    pub fn lemma_diagnostics(&self, f: &[f64]) -> Result<LemmaResiduals> {
        let mesh = self.mesh;
        let grid = self.grid;
        let nv = grid.nv();
        let t = self.sample_terms(f)?;
        let lf = self.generator(f, 1.0);
        let mf = self.moments(f)?;
        let ml = self.moments(&lf)?;
        let mut perp = f.to_vec();
        for c in perp.chunks_mut(nv) {
            let p = grid.project_pi(c);
            for (a, b) in c.iter_mut().zip(&p) {
                *a -= b;
            }
        }
        let mperp = self.moments(&perp)?;

        let m: Vec<Point> = mf.iter().map(|c| c.m).collect();
        let rho: Vec<f64> = mf.iter().map(|c| c.rho).collect();
        let div_m = face_divergence(mesh, &m);
        let div_mp = face_divergence(mesh, &mf.iter().map(|c| c.mp).collect::<Vec<_>>());
        let div_mq = [0, 1].map(|i| face_divergence(mesh, &mf.iter().map(|c| c.mq[i]).collect::<Vec<_>>()));
        let grad_rho = lsq_gradient(mesh, &rho);
        let k = (2.0 / crate::velocity::D).sqrt();

        let r_rho: Vec<f64> = (0..mesh.n_cells()).map(|c| ml[c].rho + div_m[c]).collect();
        let r_theta: Vec<f64> = (0..mesh.n_cells())
            .map(|c| ml[c].theta + k * div_m[c] + div_mp[c])
            .collect();
        let r_m: [Vec<f64>; 2] =
            [0, 1].map(|i| (0..mesh.n_cells()).map(|c| ml[c].m[i] + grad_rho[c][i] + div_mq[i][c]).collect());
        let theta_ref: Vec<f64> = (0..mesh.n_cells()).map(|c| k * div_m[c] + div_mp[c]).collect();
        let m_ref: [Vec<f64>; 2] =
            [0, 1].map(|i| (0..mesh.n_cells()).map(|c| grad_rho[c][i] + div_mq[i][c]).collect());

        let mut mp_f: f64 = 0.0;
        let mut mq_f: f64 = 0.0;
        for c in 0..mesh.n_cells() {
            for i in 0..2 {
                mp_f = mp_f.max((mf[c].mp[i] - mperp[c].mp[i]).abs());
                for j in 0..2 {
                    let delta = if i == j { k * mf[c].theta } else { 0.0 };
                    mq_f = mq_f.max((mf[c].mq[i][j] - delta - mperp[c].mq[i][j]).abs());
                }
            }
        }

        let dissipation = t.transport + t.collision;
        let lhs = t.lemma_lhs();
        let (fp, r, mm, th, dp) = (t.perp2.sqrt(), t.rho2.sqrt(), t.m2.sqrt(), t.theta2.sqrt(), t.dperp2);
        let lemmas = [
            LemmaTerms {
                lhs: lhs[0],
                controlled: t.theta2,
                allowed: BTreeMap::from([("m*perp", mm * fp), ("perp^2", t.perp2), ("dperp^2", dp)]),
            },
            LemmaTerms {
                lhs: lhs[1],
                controlled: t.m2,
                allowed: BTreeMap::from([
                    ("rho*perp", r * fp),
                    ("rho*theta", r * th),
                    ("theta^2", t.theta2),
                    ("perp^2", t.perp2),
                    ("dperp^2", dp),
                ]),
            },
            LemmaTerms {
                lhs: lhs[2],
                controlled: t.rho2,
                allowed: BTreeMap::from([
                    ("m^2", t.m2),
                    ("theta^2", t.theta2),
                    ("perp^2", t.perp2),
                    ("dperp^2", dp),
                ]),
            },
        ];
        Ok(LemmaResiduals {
            micro_gap: dissipation - self.model.lambda() * t.perp2 - 0.5 * t.dperp2,
            dissipation,
            rho_lf: self.residual(&[&r_rho], &[&div_m]),
            theta_lf: self.residual(&[&r_theta], &[&theta_ref]),
            m_lf: self.residual(&[&r_m[0], &r_m[1]], &[&m_ref[0], &m_ref[1]]),
            mp_f,
            mq_f,
            lemmas,
        })
    }

    fn residual(&self, r: &[&Vec<f64>], reference: &[&Vec<f64>]) -> IdentityResidual {
        let mesh = self.mesh;
        let l2 = |v: &[&Vec<f64>]| -> f64 {
            v.iter()
                .map(|c| c.iter().zip(&mesh.cell_areas).map(|(x, a)| a * x * x).sum::<f64>())
                .sum::<f64>()
                .sqrt()
        };
        let mut hm1 = 0.0;
        for comp in r {
            let mean = comp.iter().zip(&mesh.cell_areas).map(|(x, a)| a * x).sum::<f64>() / mesh.total_area;
            let centered: Vec<f64> = comp.iter().map(|x| x - mean).collect();
            if let Ok(u) = self.aux.rho.solve(mesh, &centered) {
                hm1 += self.aux.rho.stiffness.quadratic_form(&u.values).max(0.0) + mean * mean * mesh.total_area;
            }
        }
        IdentityResidual {
            l2: l2(r),
            h_minus1: hm1.sqrt(),
            reference: l2(reference),
        }
    }

    /// Smooth random macroscopic fields plus cellwise microscopic noise,
    /// projected onto the admissible subspace and normalized.
    pub fn random_state(&self, seed: u64, index: usize) -> Vec<f64> {
        let mesh = self.mesh;
        let grid = self.grid;
        let nv = grid.nv();
        let mut r = rng::stream(seed.wrapping_add(index as u64), rng::STREAM_CERTIFY);
        let smooth = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            let waves: Vec<([f64; 2], f64, f64)> = (0..6)
                .map(|_| {
                    let k = [r.random_range(0..4) as f64, r.random_range(0..4) as f64];
                    let a = r.random_range(-1.0..1.0) / (1.0 + k[0] * k[0] + k[1] * k[1]);
                    (k, r.random_range(0.0..std::f64::consts::TAU), a)
                })
                .collect();
            mesh.cell_centroids
                .iter()
                .map(|x| {
                    waves
                        .iter()
                        .map(|(k, ph, a)| a * (std::f64::consts::PI * (k[0] * x[0] + k[1] * x[1]) + ph).cos())
                        .sum()
                })
                .collect()
        };
        let kind = index % 4;
        let fields: [Vec<f64>; 4] = std::array::from_fn(|_| smooth(&mut r));
        let only = r.random_range(0..4usize);
        let mut macro_part = vec![0.0; mesh.n_cells() * nv];
        for c in 0..mesh.n_cells() {
            let coef: [f64; 4] = std::array::from_fn(|i| if kind == 3 && i != only { 0.0 } else { fields[i][c] });
            for k in 0..nv {
                let v = grid.nodes[k];
                macro_part[c * nv + k] =
                    grid.mu[k] * (coef[0] + coef[1] * v[0] + coef[2] * v[1] + coef[3] * grid.energy_poly(k));
            }
        }
        let mut micro = vec![0.0; mesh.n_cells() * nv];
        for (i, x) in micro.iter_mut().enumerate() {
            *x = r.random_range(-1.0..1.0) * grid.mu[i % nv];
        }
        for c in micro.chunks_mut(nv) {
            let p = grid.project_pi(c);
            for (a, b) in c.iter_mut().zip(&p) {
                *a -= b;
            }
        }
        let weight_micro = match kind {
            0 => r.random_range(0.0..1.0),
            1 => 0.0,
            2 => 1.0,
            _ => 10f64.powf(r.random_range(-3.0..-1.0)),
        };
        let nm = self.h_inner(&macro_part, &macro_part).sqrt().max(1e-300);
        let nu = self.h_inner(&micro, &micro).sqrt().max(1e-300);
        let mut f: Vec<f64> = macro_part
            .iter()
            .zip(&micro)
            .map(|(a, b)| (1.0 - weight_micro) * a / nm + weight_micro * b / nu)
            .collect();
        make_admissible(mesh, grid, &mut f, self.modes);
        let n = self.h_inner(&f, &f).sqrt();
        if n > 0.0 {
            f.iter_mut().for_each(|x| *x /= n);
        }
        f
    }

    /// `|||f|||²` as a Lyapunov functional; non-finite if an auxiliary solve fails.
    pub fn lyapunov(&self, p: HypoParams) -> impl FnMut(&[f64]) -> f64 + '_ {
        move |f| self.hypo_norm2(f, &p).unwrap_or(f64::NAN)
    }
}

fn norms2(mesh: &Mesh, grid: &VelocityGrid, f: &[f64]) -> (f64, f64, f64, f64, f64) {
    let nv = grid.nv();
    let (mut total, mut rho, mut m, mut th) = (0.0, 0.0, 0.0, 0.0);
    for (c, a) in mesh.cell_areas.iter().enumerate() {
        let fc = &f[c * nv..(c + 1) * nv];
        let (r, mm, t) = grid.rho_m_theta(fc);
        total += a * grid.inner(fc, fc);
        rho += a * r * r;
        m += a * (mm[0] * mm[0] + mm[1] * mm[1]);
        th += a * t * t;
    }
    (total, (total - rho - m - th).max(0.0), rho, m, th)
}

pub fn solve_aux(ctx: &HypoContext, f: &[f64]) -> Result<AuxSolutions> {
    ctx.solve_aux(f)
}

pub fn hypo_inner(ctx: &HypoContext, f: &[f64], g: &[f64], p: &HypoParams) -> Result<f64> {
    ctx.hypo_inner(f, g, p)
}

pub fn lemma_diagnostics(ctx: &HypoContext, f: &[f64]) -> Result<LemmaResiduals> {
    ctx.lemma_diagnostics(f)
}

/// `κ = ½ min lhs/controlled` over states whose allowed terms are at most 1% of
/// the controlled quantity (all states with positive `lhs` if none qualify),
/// then the smallest `C` making every margin non-negative.
pub fn lemma_constants(states: &[LemmaResiduals], which: usize) -> LemmaConstants {
    let terms: Vec<&LemmaTerms> = states.iter().map(|s| &s.lemmas[which]).collect();
    let ratio = |t: &&LemmaTerms| t.lhs / t.controlled;
    let clean: Vec<f64> = terms
        .iter()
        .filter(|t| t.controlled > 0.0 && t.allowed_sum() <= 1e-2 * t.controlled)
        .map(ratio)
        .collect();
    let pool = if clean.is_empty() {
        terms
            .iter()
            .filter(|t| t.controlled > 0.0 && t.lhs > 0.0)
            .map(ratio)
            .collect()
    } else {
        clean
    };
    let kappa = 0.5 * pool.iter().cloned().fold(f64::INFINITY, f64::min);
    let kappa = if kappa.is_finite() { kappa.max(0.0) } else { 0.0 };
    let c = terms
        .iter()
        .filter(|t| t.allowed_sum() > 0.0)
        .map(|t| (kappa * t.controlled - t.lhs) / t.allowed_sum())
        .fold(0.0, f64::max);
    let min_margin = terms
        .iter()
        .map(|t| t.lhs - kappa * t.controlled + c * t.allowed_sum())
        .fold(f64::INFINITY, f64::min);
    LemmaConstants { kappa, c, min_margin }
}

/// Cellwise least-squares gradient from face neighbours (neighbours of
/// neighbours where fewer than two exist).
pub fn lsq_gradient(mesh: &Mesh, u: &[f64]) -> Vec<Point> {
    let neighbors = |c: usize| -> Vec<usize> {
        mesh.cell_edges[c]
            .iter()
            .filter_map(|e| match e {
                CellEdge::Interior { neighbor, .. } => Some(*neighbor),
                CellEdge::Boundary { .. } => None,
            })
            .collect()
    };
    (0..mesh.n_cells())
        .map(|c| {
            let mut nb = neighbors(c);
            if nb.len() < 2 {
                let second: Vec<usize> = nb.iter().flat_map(|&n| neighbors(n)).filter(|&n| n != c).collect();
                nb.extend(second);
                nb.sort_unstable();
                nb.dedup();
            }
            let xc = mesh.cell_centroids[c];
            let (mut a, mut b) = ([[0.0; 2]; 2], [0.0; 2]);
            for n in nb {
                let x = mesh.cell_centroids[n];
                let d = [x[0] - xc[0], x[1] - xc[1]];
                let w = 1.0 / (d[0] * d[0] + d[1] * d[1]);
                let du = u[n] - u[c];
                for i in 0..2 {
                    b[i] += w * d[i] * du;
                    for j in 0..2 {
                        a[i][j] += w * d[i] * d[j];
                    }
                }
            }
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            if det.abs() < 1e-300 {
                return [0.0, 0.0];
            }
            [
                (a[1][1] * b[0] - a[0][1] * b[1]) / det,
                (a[0][0] * b[1] - a[1][0] * b[0]) / det,
            ]
        })
        .collect()
}

/// Cellwise divergence `|T|⁻¹ Σ_e |e| n·F_e`, face values averaged from the
/// two adjacent cells and taken from the cell itself on walls.
pub fn face_divergence(mesh: &Mesh, field: &[Point]) -> Vec<f64> {
    (0..mesh.n_cells())
        .map(|c| {
            let fc = field[c];
            let mut s = 0.0;
            for e in &mesh.cell_edges[c] {
                match *e {
                    CellEdge::Interior {
                        neighbor,
                        normal,
                        length,
                        ..
                    } => {
                        let fnb = field[neighbor];
                        s += length * 0.5 * (normal[0] * (fc[0] + fnb[0]) + normal[1] * (fc[1] + fnb[1]));
                    }
                    CellEdge::Boundary { edge } => {
                        let b = &mesh.boundary[edge];
                        s += b.length * (b.normal[0] * fc[0] + b.normal[1] * fc[1]);
                    }
                }
            }
            s / mesh.cell_areas[c]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateOptions {
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Fixed `η`; chosen by the sweep when absent.
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_eta_range")]
    pub eta_range: [f64; 2],
    #[serde(default = "default_sweep_points")]
    pub sweep_points: usize,
}

fn default_samples() -> usize {
    200
}
fn default_variant() -> Variant {
    Variant::Strong
}
fn default_epsilons() -> Vec<f64> {
    vec![1.0]
}
fn default_eta_range() -> [f64; 2] {
    [1e-4, 0.5]
}
fn default_sweep_points() -> usize {
    48
}

impl Default for CertificateOptions {
    fn default() -> Self {
        Self {
            n_samples: default_samples(),
            seed: 0,
            eta: None,
            variant: default_variant(),
            epsilons: default_epsilons(),
            eta_range: default_eta_range(),
            sweep_points: default_sweep_points(),
        }
    }
}

impl CertificateOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 100 {
            return invalid(format!("n_samples = {} must be at least 100", self.n_samples));
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            return invalid("epsilons must be a non-empty list in (0, 1]");
        }
        let [a, b] = self.eta_range;
        if !(a > 0.0 && a < b && b < 1.0) || self.sweep_points < 3 {
            return invalid("eta_range must satisfy 0 < lo < hi < 1 with at least 3 sweep points");
        }
        if let Some(e) = self.eta {
            HypoParams::new(e, 1.0, self.variant)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport {
    pub eta: f64,
    pub etas: [f64; 3],
    pub variant: Variant,
    pub epsilons: Vec<f64>,
    /// Minimum over samples and `ε` of `⟨⟨−𝓛_εf,f⟩⟩ / |||f|||²` (or `/‖f‖²_{𝓗₀}`).
    pub kappa: f64,
    pub kappa_by_epsilon: Vec<f64>,
    /// Minimum of `⟨⟨−𝓛_εf,f⟩⟩ / (|||f|||² + ε⁻²‖f⊥‖²)` per `ε`.
    pub kappa_extended: Vec<f64>,
    pub positive: bool,
    pub n_samples: usize,
    pub worst_sample: usize,
    /// `[min, max]` of `|||f|||²/‖f‖²` per `ε`.
    pub norm_bracket: Vec<[f64; 2]>,
    /// Smallest `η` above the optimum where the certificate changes sign.
    pub eta_sign_boundary: Option<f64>,
    pub sweep: Vec<[f64; 2]>,
    #[serde(skip)]
    pub worst_state: Vec<f64>,
}

fn min_quotient(terms: &[SampleTerms], p: &HypoParams) -> (f64, usize) {
    terms
        .iter()
        .enumerate()
        .map(|(i, t)| (t.quotient(p), i))
        .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a })
}

fn certificate_at(terms: &[SampleTerms], eta: f64, variant: Variant, epsilons: &[f64]) -> f64 {
    epsilons
        .iter()
        .map(|&e| {
            min_quotient(
                terms,
                &HypoParams {
                    eta,
                    epsilon: e,
                    variant,
                },
            )
            .0
        })
        .fold(f64::INFINITY, f64::min)
}

/// Samples `n_samples` admissible states and evaluates the certificate; picks
/// `η` by a log-grid scan, golden-section refinement and a sign bisection.
pub fn coercivity_certificate(ctx: &HypoContext, opts: &CertificateOptions) -> Result<CertificateReport> {
    opts.validate()?;
    let states: Vec<Vec<f64>> = (0..opts.n_samples)
        .into_par_iter()
        .map(|i| ctx.random_state(opts.seed, i))
        .collect();
    let terms = states
        .par_iter()
        .map(|f| ctx.sample_terms(f))
        .collect::<Result<Vec<_>>>()?;
    certificate_from_terms(&terms, &states, opts)
}

pub fn certificate_from_terms(
    terms: &[SampleTerms],
    states: &[Vec<f64>],
    opts: &CertificateOptions,
) -> Result<CertificateReport> {
    let objective = |eta: f64| certificate_at(terms, eta, opts.variant, &opts.epsilons);
    let [lo, hi] = opts.eta_range;
    let n = opts.sweep_points;
    let grid: Vec<f64> = (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect();
    let sweep: Vec<[f64; 2]> = grid.iter().map(|&e| [e, objective(e)]).collect();
    let eta = match opts.eta {
        Some(e) => e,
        None => {
            let best = (0..n).max_by(|&a, &b| sweep[a][1].total_cmp(&sweep[b][1])).unwrap_or(0);
            let (mut a, mut b) = (grid[best.saturating_sub(1)].ln(), grid[(best + 1).min(n - 1)].ln());
            let g = 0.5 * (5f64.sqrt() - 1.0);
            for _ in 0..60 {
                let x1 = b - g * (b - a);
                let x2 = a + g * (b - a);
                if objective(x1.exp()) >= objective(x2.exp()) {
                    b = x2;
                } else {
                    a = x1;
                }
            }
            let cand = (0.5 * (a + b)).exp();
            if objective(cand) >= sweep[best][1] {
                cand
            } else {
                grid[best]
            }
        }
    };
    let eta_sign_boundary = if objective(eta) > 0.0 && objective(hi) <= 0.0 {
        let (mut a, mut b) = (eta, hi);
        for _ in 0..80 {
            let m = 0.5 * (a + b);
            if objective(m) > 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        Some(b)
    } else {
        None
    };
    let mut kappa = f64::INFINITY;
    let mut worst = 0;
    let mut kappa_by_epsilon = Vec::new();
    let mut kappa_extended = Vec::new();
    let mut norm_bracket = Vec::new();
    for &e in &opts.epsilons {
        let p = HypoParams::new(eta, e, opts.variant)?;
        let (k, i) = min_quotient(terms, &p);
        if k < kappa {
            kappa = k;
            worst = i;
        }
        kappa_by_epsilon.push(k);
        kappa_extended.push(
            terms
                .iter()
                .map(|t| t.extended_quotient(&p))
                .fold(f64::INFINITY, f64::min),
        );
        let ratios = terms.iter().map(|t| t.hypo_norm2(&p) / t.h2);
        norm_bracket.push(ratios.fold([f64::INFINITY, f64::NEG_INFINITY], |b, r| [b[0].min(r), b[1].max(r)]));
    }
    let p = HypoParams::new(eta, 1.0, opts.variant)?;
    Ok(CertificateReport {
        eta,
        etas: p.etas(),
        variant: opts.variant,
        epsilons: opts.epsilons.clone(),
        kappa,
        kappa_by_epsilon,
        kappa_extended,
        positive: kappa > 0.0,
        n_samples: terms.len(),
        worst_sample: worst,
        norm_bracket,
        eta_sign_boundary,
        sweep,
        worst_state: states.get(worst).cloned().unwrap_or_default(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayReport {
    pub kappa: f64,
    pub c: f64,
    pub r2: f64,
    pub window: [f64; 2],
    pub n_points: usize,
}

/// Least-squares fit of `log n(t) ≈ log C − κt` over `window`
/// (default: the last 90% of the time span).
pub fn fit_decay(times: &[f64], norms: &[f64], window: Option<[f64; 2]>) -> Result<DecayReport> {
    if times.len() != norms.len() || times.is_empty() {
        return invalid("times and norms must be non-empty and of equal length");
    }
    let (t0, t1) = (times[0], times[times.len() - 1]);
    let window = window.unwrap_or([t0 + 0.1 * (t1 - t0), t1]);
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(norms)
        .filter(|(t, _)| **t >= window[0] - 1e-12 && **t <= window[1] + 1e-12)
        .map(|(t, n)| (*t, *n))
        .collect();
    if pts.len() < 20 {
        return invalid(format!("{} samples in the fit window, need at least 20", pts.len()));
    }
    if pts.iter().any(|(_, n)| !(*n > 0.0)) {
        return invalid("non-positive norm in the fit window");
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1.ln() - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let icpt = my - slope * mt;
    let ss_tot: f64 = pts.iter().map(|p| (p.1.ln() - my).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1.ln() - icpt - slope * p.0).powi(2)).sum();
    let r2 = if ss_tot > 1e-300 * n { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(DecayReport {
        kappa: -slope,
        c: icpt.exp(),
        r2,
        window,
        n_points: pts.len(),
    })
}

pub fn fit_trajectory(traj: &Trajectory, window: Option<[f64; 2]>) -> Result<DecayReport> {
    fit_decay(&traj.times(), &traj.norms(), window)
}

/// `ε⁻² ∫ ‖f⊥‖² e^{2κt} dt` by the trapezoid rule over the recorded times.
pub fn weighted_micro_integral(traj: &Trajectory, epsilon: f64, kappa: f64) -> f64 {
    let g: Vec<(f64, f64)> = traj
        .records
        .iter()
        .map(|r| (r.t, r.hperp_norm * r.hperp_norm * (2.0 * kappa * r.t).exp()))
        .collect();
    g.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum::<f64>() / (epsilon * epsilon)
}

pub const ENVELOPE_R_MAX: f64 = 1e4;
pub const ENVELOPE_POINTS: usize = 4000;

/// `ϑ(t) = (inf_R {exp(−cκt/ω₀(R)) + C/(cω₁(R))})^{1/2}` over a geometric
/// grid of `R` in `[1, R_max]`.
pub fn weak_envelope(t: f64, omega0: &Weight, omega1: &Weight, c: f64, kappa: f64, big_c: f64) -> f64 {
    weak_envelope_with(t, omega0, omega1, c, kappa, big_c, ENVELOPE_R_MAX, ENVELOPE_POINTS)
}

#[allow(clippy::too_many_arguments)]
pub fn weak_envelope_with(
    t: f64,
    omega0: &Weight,
    omega1: &Weight,
    c: f64,
    kappa: f64,
    big_c: f64,
    r_max: f64,
    points: usize,
) -> f64 {
    let n = points.max(2);
    (0..n)
        .map(|i| {
            let r = r_max.powf(i as f64 / (n - 1) as f64);
            (-c * kappa * t / omega0.radial(r)).exp() + big_c / (c * omega1.radial(r))
        })
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// `ω₀(R)‖g‖²_{𝓗₀} + ω₁(R)⁻¹‖g‖²_{𝓗₁} − ‖g‖²_𝓗`, non-negative for every `R`.
pub fn interpolation_gap(ctx: &HypoContext, g: &[f64], omega0: &Weight, omega1: &Weight, r: f64) -> f64 {
    let grid = ctx.grid;
    let w0: Vec<f64> = (0..grid.nv()).map(|k| 1.0 / omega0.at_speed2(grid.speed2(k))).collect();
    let w1 = omega1.on_grid(grid);
    omega0.radial(r) * ctx.weighted_norm2(g, &w0) + ctx.weighted_norm2(g, &w1) / omega1.radial(r) - ctx.h_inner(g, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_normalized, AlphaProfile, DomainSpec, Shape};
    use crate::velocity::gauss_hermite_grid;

    fn setup(shape: Shape, alpha: f64, h: f64) -> (Mesh, VelocityGrid) {
        let m = build_normalized(&DomainSpec::new(shape, AlphaProfile::constant(alpha)), h).unwrap();
        (m, gauss_hermite_grid(6).unwrap())
    }

    #[test]
    fn zero_state_has_zero_aux_fields() {
        let (m, g) = setup(Shape::UnitSquare, 1.0, 0.25);
        let ctx = HypoContext::new(&m, &g, CollisionModel::Bgk).unwrap();
        let a = ctx.solve_aux(&vec![0.0; m.n_cells() * g.nv()]).unwrap();
        assert!(a.u_theta.values.iter().chain(&a.u_rho.values).all(|x| *x == 0.0));
        assert!(a.u_m.values.iter().all(|p| p[0] == 0.0 && p[1] == 0.0));
    }

    #[test]
    fn zero_eta_gives_plain_product() {
        let (m, g) = setup(Shape::Disk, 0.5, 0.25);
        let ctx = HypoContext::new(&m, &g, CollisionModel::Bgk).unwrap();
        let f = ctx.random_state(1, 0);
        let h = ctx.random_state(1, 1);
        let p = HypoParams::new(0.0, 1.0, Variant::Strong).unwrap();
        assert_eq!(ctx.hypo_inner(&f, &h, &p).unwrap(), ctx.h_inner(&f, &h));
    }

    #[test]
    fn sample_terms_match_direct_evaluation() {
        let (m, g) = setup(Shape::UnitSquare, 1.0, 0.2);
        let ctx = HypoContext::new(&m, &g, CollisionModel::Bgk).unwrap();
        let f = ctx.random_state(3, 0);
        let t = ctx.sample_terms(&f).unwrap();
        for (eta, eps, v) in [(0.1, 1.0, Variant::Strong), (0.2, 0.3, Variant::Epsilon)] {
            let p = HypoParams::new(eta, eps, v).unwrap();
            let lf: Vec<f64> = ctx.generator(&f, eps).iter().map(|x| -x).collect();
            let n = ctx.hypo_inner(&lf, &f, &p).unwrap();
            assert!((n - t.numerator(&p)).abs() < 1e-9 * n.abs().max(1.0), "{n} {}", t.numerator(&p));
            let d = ctx.hypo_norm2(&f, &p).unwrap();
            assert!((d - t.hypo_norm2(&p)).abs() < 1e-12 * d);
        }
    }

    #[test]
    fn macro_energy_state_gains_dissipation_from_cross_term() {
        let (m, g) = setup(Shape::UnitSquare, 1.0, 0.1);
        let ctx = HypoContext::new(&m, &g, CollisionModel::Bgk).unwrap();
        let nv = g.nv();
        let mut f = vec![0.0; m.n_cells() * nv];
        for (c, x) in m.cell_centroids.iter().enumerate() {
            let th = (std::f64::consts::PI * x[0]).cos() * (std::f64::consts::PI * x[1]).cos();
            for k in 0..nv {
                f[c * nv + k] = th * g.energy_poly(k) * g.mu[k];
            }
        }
        let t = ctx.sample_terms(&f).unwrap();
        assert!(t.lemma_lhs()[0] > 0.5 * t.theta2, "{:?}", t.lemma_lhs());
    }

    #[test]
    fn decay_fit_recovers_exponential() {
        let t: Vec<f64> = (0..100).map(|i| i as f64 * 0.05).collect();
        let n: Vec<f64> = t.iter().map(|t| 3.0 * (-2.0 * t).exp()).collect();
        let r = fit_decay(&t, &n, Some([0.0, 5.0])).unwrap();
        assert!((r.kappa - 2.0).abs() < 1e-12 && (r.c - 3.0).abs() < 1e-12 && (r.r2 - 1.0).abs() < 1e-12);
        let flat = fit_decay(&t, &vec![0.7; 100], None).unwrap();
        assert!(flat.kappa.abs() < 1e-14);
        assert!(fit_decay(&t[..10], &n[..10], None).is_err());
    }

    #[test]
    fn envelope_matches_closed_form_minimum() {
        let w = Weight { s: 1.0 };
        // With ω = 1+R² the infimum over ω of e^{−t/ω} + 1/ω is (1 + ln t)/t at ω = t/ln t.
        let t: f64 = 10.0;
        let exact = ((1.0 + t.ln()) / t).sqrt();
        let v = weak_envelope(t, &w, &w, 1.0, 1.0, 1.0);
        assert!(v >= exact && v - exact < 1e-6, "{v} {exact}");
        assert!((v - 0.574_681_224_070_705_7).abs() < 1e-6);
        let v0 = weak_envelope(0.0, &w, &w, 1.0, 1.0, 1.0);
        assert!(v0 <= (1.0f64 + 0.5).sqrt());
    }
}
