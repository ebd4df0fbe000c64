//! Discrete Maxwell wall operator: specular stencil, diffusive re-emission,
//! conservative flux correction and trace norms.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::geometry::{Mesh, Point};
use crate::rng;
use crate::velocity::VelocityGrid;

/// Nodes with `|n·v| ≤ ZERO_FLUX · v_max` belong to neither half-space.
pub const ZERO_FLUX: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SpecularRow {
    /// Incoming node.
    pub node: usize,
    /// Interpolation weights on `g/μ` over outgoing nodes; they sum to 1.
    pub weights: Vec<(usize, f64)>,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeOperator {
    pub alpha: f64,
    pub normal: Point,
    pub length: f64,
    pub cell: usize,
    /// `n·v_k`, with zero-flux nodes set to exactly 0.
    pub flux: Vec<f64>,
    pub incoming: Vec<usize>,
    pub outgoing: Vec<usize>,
    pub specular: Vec<SpecularRow>,
    pub c_mu: f64,
    /// Shift making `(|v|²−β)μ` carry no incoming mass flux.
    pub beta: f64,
    in_mass: f64,
    in_energy2: f64,
}

/// Flux-correction coefficients applied to one reflected trace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Correction {
    pub c0: f64,
    pub c2: f64,
}

impl Correction {
    pub fn magnitude(&self) -> f64 {
        self.c0.abs() + self.c2.abs()
    }
}

#[derive(Debug, Clone)]
pub struct BoundaryOperator {
    pub edges: Vec<EdgeOperator>,
}

fn axis_locate(axis: &[f64], x: f64) -> (usize, f64) {
    let n = axis.len();
    let x = x.clamp(axis[0], axis[n - 1]);
    let mut i = match axis.iter().position(|&a| a > x) {
        Some(0) => 0,
        Some(p) => p - 1,
        None => n - 2,
    };
    if i > n - 2 {
        i = n - 2;
    }
    let t = (x - axis[i]) / (axis[i + 1] - axis[i]);
    (i, t.clamp(0.0, 1.0))
}

fn exact_node(grid: &VelocityGrid, v: Point) -> Option<usize> {
    let tol = 1e-10 * grid.v_max;
    let n = grid.n_per_axis;
    let i = grid.axis_nodes.iter().position(|&a| (a - v[0]).abs() <= tol)?;
    let j = grid.axis_nodes.iter().position(|&a| (a - v[1]).abs() <= tol)?;
    Some(i * n + j)
}

/// Specular stencil for one incoming node.
pub fn specular_map(grid: &VelocityGrid, normal: Point, flux: &[f64], node: usize) -> Result<SpecularRow> {
    let v = grid.nodes[node];
    let nv = normal[0] * v[0] + normal[1] * v[1];
    let r = [v[0] - 2.0 * normal[0] * nv, v[1] - 2.0 * normal[1] * nv];
    if let Some(k) = exact_node(grid, r) {
        if flux[k] > 0.0 {
            return Ok(SpecularRow {
                node,
                weights: vec![(k, 1.0)],
                exact: true,
            });
        }
    }
    let n = grid.n_per_axis;
    let (i, tx) = axis_locate(&grid.axis_nodes, r[0]);
    let (j, ty) = axis_locate(&grid.axis_nodes, r[1]);
    let corners = [
        (i * n + j, (1.0 - tx) * (1.0 - ty)),
        ((i + 1) * n + j, tx * (1.0 - ty)),
        (i * n + j + 1, (1.0 - tx) * ty),
        ((i + 1) * n + j + 1, tx * ty),
    ];
    let mut weights: Vec<(usize, f64)> = corners
        .iter()
        .copied()
        .filter(|&(k, w)| flux[k] > 0.0 && w > 0.0)
        .collect();
    let total: f64 = weights.iter().map(|x| x.1).sum();
    if weights.is_empty() || total <= 1e-14 {
        let nearest = (0..grid.nv())
            .filter(|&k| flux[k] > 0.0)
            .min_by(|&a, &b| {
                let da = dist2(grid.nodes[a], r);
                let db = dist2(grid.nodes[b], r);
                da.total_cmp(&db).then(a.cmp(&b))
            });
        return match nearest {
            Some(k) => Ok(SpecularRow {
                node,
                weights: vec![(k, 1.0)],
                exact: false,
            }),
            None => invalid("empty outgoing velocity set"),
        };
    }
    for w in weights.iter_mut() {
        w.1 /= total;
    }
    Ok(SpecularRow {
        node,
        weights,
        exact: false,
    })
}

fn dist2(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

impl EdgeOperator {
    pub fn new(grid: &VelocityGrid, normal: Point, alpha: f64, length: f64, cell: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return invalid(format!("accommodation coefficient {alpha} outside [0, 1]"));
        }
        let nv = grid.nv();
        let tol = ZERO_FLUX * grid.v_max;
        let flux: Vec<f64> = grid
            .nodes
            .iter()
            .map(|v| {
                let f = normal[0] * v[0] + normal[1] * v[1];
                if f.abs() <= tol {
                    0.0
                } else {
                    f
                }
            })
            .collect();
        let incoming: Vec<usize> = (0..nv).filter(|&k| flux[k] < 0.0).collect();
        let outgoing: Vec<usize> = (0..nv).filter(|&k| flux[k] > 0.0).collect();
        if outgoing.is_empty() || incoming.is_empty() {
            return invalid("edge has an empty velocity half-space");
        }
        let specular = incoming
            .iter()
            .map(|&k| specular_map(grid, normal, &flux, k))
            .collect::<Result<Vec<_>>>()?;
        let out_mass: f64 = outgoing.iter().map(|&k| grid.wmu[k] * flux[k]).sum();
        let in_mass: f64 = incoming.iter().map(|&k| grid.wmu[k] * flux[k]).sum();
        let in_energy: f64 = incoming
            .iter()
            .map(|&k| grid.wmu[k] * grid.speed2(k) * flux[k])
            .sum();
        let beta = in_energy / in_mass;
        let in_energy2: f64 = incoming
            .iter()
            .map(|&k| grid.wmu[k] * (grid.speed2(k) - beta).powi(2) * flux[k])
            .sum();
        Ok(Self {
            alpha,
            normal,
            length,
            cell,
            flux,
            incoming,
            outgoing,
            specular,
            c_mu: 1.0 / out_mass,
            beta,
            in_mass,
            in_energy2,
        })
    }

    /// Outgoing flux integral `g̃ = Σ_out w g (n·v)`.
    pub fn outgoing_flux(&self, grid: &VelocityGrid, g: &[f64]) -> f64 {
        self.outgoing.iter().map(|&k| grid.weights[k] * g[k] * self.flux[k]).sum()
    }

    /// Writes `(R g)(v)` on incoming nodes of `out`.
    pub fn specular_apply(&self, grid: &VelocityGrid, g: &[f64], out: &mut [f64]) {
        for row in &self.specular {
            let mu = grid.mu[row.node];
            out[row.node] = row.weights.iter().map(|&(k, w)| w * g[k] / grid.mu[k]).sum::<f64>() * mu;
        }
    }

    /// Writes `Dg = c_μ μ g̃` on incoming nodes of `out`.
    pub fn diffusive_apply(&self, grid: &VelocityGrid, g: &[f64], out: &mut [f64]) {
        let s = self.c_mu * self.outgoing_flux(grid, g);
        for &k in &self.incoming {
            out[k] = s * grid.mu[k];
        }
    }

    /// Adds `c₀μ` (and `c₂(|v|²−β)μ` when `α = 0`) on incoming nodes so that the
    /// mass flux (and energy flux) of `(g_out, g_in)` across the edge vanish.
    pub fn flux_correction(&self, grid: &VelocityGrid, g_out: &[f64], g_in: &mut [f64]) -> Correction {
        let mut mass = 0.0;
        let mut energy = 0.0;
        for &k in &self.outgoing {
            let a = grid.weights[k] * g_out[k] * self.flux[k];
            mass += a;
            energy += a * (grid.speed2(k) - self.beta);
        }
        for &k in &self.incoming {
            let a = grid.weights[k] * g_in[k] * self.flux[k];
            mass += a;
            energy += a * (grid.speed2(k) - self.beta);
        }
        let c0 = -mass / self.in_mass;
        let c2 = if self.alpha == 0.0 {
            -energy / self.in_energy2
        } else {
            0.0
        };
        for &k in &self.incoming {
            g_in[k] += (c0 + c2 * (grid.speed2(k) - self.beta)) * grid.mu[k];
        }
        Correction { c0, c2 }
    }

    /// Incoming trace from the outgoing one: `(1−α)Rg + αDg`, flux corrected.
    pub fn maxwell_reflect(&self, grid: &VelocityGrid, g: &[f64], ghost: &mut [f64]) -> Correction {
        let a = self.alpha;
        if a < 1.0 {
            self.specular_apply(grid, g, ghost);
        }
        if a > 0.0 {
            let s = self.c_mu * self.outgoing_flux(grid, g);
            for &k in &self.incoming {
                let d = s * grid.mu[k];
                ghost[k] = if a == 1.0 { d } else { (1.0 - a) * ghost[k] + a * d };
            }
        }
        self.flux_correction(grid, g, ghost)
    }

    /// `α(2−α) Σ_out w (f − Df)² μ⁻¹ (n·v)` per unit edge length.
    pub fn dperp_density(&self, grid: &VelocityGrid, g: &[f64]) -> f64 {
        let a = self.alpha * (2.0 - self.alpha);
        if a == 0.0 {
            return 0.0;
        }
        let s = self.c_mu * self.outgoing_flux(grid, g);
        let sum: f64 = self
            .outgoing
            .iter()
            .map(|&k| {
                let d = g[k] - s * grid.mu[k];
                grid.ipw[k] * d * d * self.flux[k]
            })
            .sum();
        a * sum
    }
}

impl BoundaryOperator {
    pub fn new(mesh: &Mesh, grid: &VelocityGrid) -> Result<Self> {
        let edges = mesh
            .boundary
            .par_iter()
            .map(|e| EdgeOperator::new(grid, e.normal, e.alpha, e.length, e.cell))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { edges })
    }

    /// `‖√(α(2−α)) D⊥f₊‖²` over the whole boundary, traces taken from cell values.
    pub fn dperp_boundary_norm(&self, grid: &VelocityGrid, values: &[f64]) -> f64 {
        let nv = grid.nv();
        self.edges
            .iter()
            .map(|e| e.length * e.dperp_density(grid, &values[e.cell * nv..(e.cell + 1) * nv]))
            .sum()
    }

    pub fn all_exact(&self) -> bool {
        self.edges.iter().all(|e| e.specular.iter().all(|r| r.exact))
    }

    /// Reflects `samples` random outgoing traces per edge and measures the
    /// normal fluxes of the completed trace and the reflection of `μ`.
    pub fn verify_invariants(&self, grid: &VelocityGrid, samples: usize, seed: u64) -> BoundaryInvariants {
        let nv = grid.nv();
        let mut r = rng::stream(seed, rng::STREAM_SAMPLES);
        let mut out = BoundaryInvariants {
            edges: self.edges.len(),
            samples,
            all_exact: self.all_exact(),
            ..Default::default()
        };
        let mut ghost = vec![0.0; nv];
        for e in &self.edges {
            e.maxwell_reflect(grid, &grid.mu, &mut ghost);
            for &k in &e.incoming {
                out.equilibrium_defect = out.equilibrium_defect.max((ghost[k] - grid.mu[k]).abs() / grid.mu[k]);
            }
            for _ in 0..samples {
                let g: Vec<f64> = (0..nv).map(|k| r.random_range(-1.0..1.0) * grid.mu[k]).collect();
                ghost.copy_from_slice(&g);
                e.maxwell_reflect(grid, &g, &mut ghost);
                let (mut mass, mut energy, mut scale) = (0.0, 0.0, 0.0);
                for k in e.outgoing.iter().chain(&e.incoming) {
                    let a = grid.weights[*k] * ghost[*k] * e.flux[*k];
                    mass += a;
                    energy += a * grid.speed2(*k);
                    scale += a.abs() * (1.0 + grid.speed2(*k));
                }
                out.mass_flux = out.mass_flux.max(mass.abs() / scale);
                if e.alpha == 0.0 {
                    out.energy_flux = out.energy_flux.max(energy.abs() / scale);
                }
            }
        }
        out
    }
}

/// Worst relative defects over all edges and sampled traces.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BoundaryInvariants {
    pub edges: usize,
    pub samples: usize,
    pub all_exact: bool,
    pub mass_flux: f64,
    /// Specular edges only.
    pub energy_flux: f64,
    pub equilibrium_defect: f64,
}

impl BoundaryInvariants {
    pub fn passed(&self, tol: f64) -> bool {
        self.mass_flux <= tol && self.energy_flux <= tol && self.equilibrium_defect <= tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::velocity::gauss_hermite_grid;

    fn grid() -> VelocityGrid {
        gauss_hermite_grid(8).unwrap()
    }

    #[test]
    fn axis_normal_mirrors_first_component() {
        let g = grid();
        let e = EdgeOperator::new(&g, [1.0, 0.0], 0.0, 1.0, 0).unwrap();
        for row in &e.specular {
            assert!(row.exact);
            let v = g.nodes[row.node];
            let w = g.nodes[row.weights[0].0];
            assert_eq!(w, [-v[0], v[1]]);
        }
    }

    #[test]
    fn diagonal_normal_swaps_components() {
        let g = grid();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let e = EdgeOperator::new(&g, [s, s], 0.0, 1.0, 0).unwrap();
        for row in &e.specular {
            assert!(row.exact);
            let v = g.nodes[row.node];
            let w = g.nodes[row.weights[0].0];
            assert!((w[0] + v[1]).abs() < 1e-12 && (w[1] + v[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn generic_rows_sum_to_one() {
        let g = grid();
        let t: f64 = 0.3;
        let e = EdgeOperator::new(&g, [t.cos(), t.sin()], 0.5, 1.0, 0).unwrap();
        for row in &e.specular {
            let s: f64 = row.weights.iter().map(|x| x.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let out: f64 = e.outgoing.iter().map(|&k| g.wmu[k] * e.flux[k]).sum();
        assert!((e.c_mu * out - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disk_invariants_hold() {
        use crate::geometry::{build_normalized, AlphaProfile, DomainSpec, Shape};
        let g = grid();
        for a in [0.0, 0.5, 1.0] {
            let m = build_normalized(&DomainSpec::new(Shape::Disk, AlphaProfile::constant(a)), 0.2).unwrap();
            let r = BoundaryOperator::new(&m, &g).unwrap().verify_invariants(&g, 5, 0);
            assert!(r.passed(1e-12), "{r:?}");
        }
    }

    #[test]
    fn maxwellian_is_reflected_unchanged() {
        let g = grid();
        for (n, alpha) in [([1.0, 0.0], 0.0), ([0.6, 0.8], 0.0), ([0.6, 0.8], 0.5), ([0.28, -0.96], 1.0)] {
            let e = EdgeOperator::new(&g, n, alpha, 1.0, 0).unwrap();
            let mut ghost = vec![0.0; g.nv()];
            let c = e.maxwell_reflect(&g, &g.mu, &mut ghost);
            for &k in &e.incoming {
                assert!((ghost[k] - g.mu[k]).abs() < 1e-12 * g.mu[k].max(1e-3), "{n:?} {alpha}");
            }
            assert!(c.magnitude() < 1e-12);
        }
    }

    #[test]
    fn diffusive_sees_only_normal_flux() {
        let g = grid();
        let e = EdgeOperator::new(&g, [1.0, 0.0], 1.0, 1.0, 0).unwrap();
        let even: Vec<f64> = (0..g.nv()).map(|k| g.mu[k] * (1.0 + g.nodes[k][0])).collect();
        let odd: Vec<f64> = (0..g.nv())
            .map(|k| even[k] + g.mu[k] * g.nodes[k][1] * g.nodes[k][0])
            .collect();
        let (mut a, mut b) = (vec![0.0; g.nv()], vec![0.0; g.nv()]);
        e.diffusive_apply(&g, &even, &mut a);
        e.diffusive_apply(&g, &odd, &mut b);
        for &k in &e.incoming {
            assert!((a[k] - b[k]).abs() < 1e-14);
        }
    }
}
