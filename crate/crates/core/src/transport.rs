//! Explicit upwind transport with Maxwell walls and exact implicit collisions.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::BoundaryOperator;
use crate::collision::{CollisionModel, ImplicitCollision};
use crate::error::{invalid, Error, Result};
use crate::geometry::{rigid_fields_default, CellEdge, Mesh, Point};
use crate::rng;
use crate::velocity::VelocityGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct KineticState {
    /// Cell-major: `values[c * nv + k]`.
    pub values: Vec<f64>,
    pub time: f64,
    pub epsilon: f64,
    pub nv: usize,
}

impl KineticState {
    pub fn zeros(mesh: &Mesh, grid: &VelocityGrid, epsilon: f64) -> Self {
        Self {
            values: vec![0.0; mesh.n_cells() * grid.nv()],
            time: 0.0,
            epsilon,
            nv: grid.nv(),
        }
    }

    pub fn from_fn(mesh: &Mesh, grid: &VelocityGrid, epsilon: f64, f: impl Fn(Point, [f64; 2], usize) -> f64) -> Self {
        let nv = grid.nv();
        let mut s = Self::zeros(mesh, grid, epsilon);
        for (c, x) in mesh.cell_centroids.iter().enumerate() {
            for k in 0..nv {
                s.values[c * nv + k] = f(*x, grid.nodes[k], k);
            }
        }
        s
    }

    pub fn cell(&self, c: usize) -> &[f64] {
        &self.values[c * self.nv..(c + 1) * self.nv]
    }

    pub fn check(&self, mesh: &Mesh, grid: &VelocityGrid) -> Result<()> {
        let expected = mesh.n_cells() * grid.nv();
        if self.values.len() != expected || self.nv != grid.nv() {
            return Err(Error::ShapeMismatch {
                expected,
                got: self.values.len(),
            });
        }
        Ok(())
    }
}

/// Discrete `⟨f, g⟩_𝓗 = Σ_c |T_c| Σ_k w_k f g / μ_k`.
pub fn h_inner(mesh: &Mesh, grid: &VelocityGrid, f: &[f64], g: &[f64]) -> f64 {
    let nv = grid.nv();
    mesh.cell_areas
        .iter()
        .enumerate()
        .map(|(c, a)| a * grid.inner(&f[c * nv..(c + 1) * nv], &g[c * nv..(c + 1) * nv]))
        .sum()
}

pub fn h_norm(mesh: &Mesh, grid: &VelocityGrid, f: &[f64]) -> f64 {
    h_inner(mesh, grid, f, f).sqrt()
}

/// Global conserved quantities `(∫f, ∫|v|²f, ∫(Jx)·v f)`.
pub fn conserved(mesh: &Mesh, grid: &VelocityGrid, f: &[f64]) -> [f64; 3] {
    let nv = grid.nv();
    let mut out = [0.0; 3];
    for (c, a) in mesh.cell_areas.iter().enumerate() {
        let x = mesh.cell_centroids[c];
        let fc = &f[c * nv..(c + 1) * nv];
        for k in 0..nv {
            let w = a * grid.weights[k] * fc[k];
            let v = grid.nodes[k];
            out[0] += w;
            out[1] += w * grid.speed2(k);
            out[2] += w * (-x[1] * v[0] + x[0] * v[1]);
        }
    }
    out
}

/// Which global modes are conserved by the walls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConservedModes {
    pub energy: bool,
    pub rotation: bool,
}

impl ConservedModes {
    pub fn of(mesh: &Mesh) -> Self {
        let specular = mesh.alpha_is_zero();
        Self {
            energy: specular,
            rotation: specular && !rigid_fields_default(mesh).is_empty(),
        }
    }
}

fn mode_values(mesh: &Mesh, grid: &VelocityGrid, which: usize) -> Vec<f64> {
    let nv = grid.nv();
    let mut out = vec![0.0; mesh.n_cells() * nv];
    for (c, x) in mesh.cell_centroids.iter().enumerate() {
        for k in 0..nv {
            let v = grid.nodes[k];
            out[c * nv + k] = grid.mu[k]
                * match which {
                    0 => 1.0,
                    1 => grid.energy_poly(k),
                    _ => -x[1] * v[0] + x[0] * v[1],
                };
        }
    }
    out
}

/// Removes the `𝓗`-orthogonal projection onto the conserved global modes.
pub fn make_admissible(mesh: &Mesh, grid: &VelocityGrid, values: &mut [f64], modes: ConservedModes) {
    let mut list = vec![0];
    if modes.energy {
        list.push(1);
    }
    if modes.rotation {
        list.push(2);
    }
    for which in list {
        let m = mode_values(mesh, grid, which);
        let nn = h_inner(mesh, grid, &m, &m);
        if nn == 0.0 {
            continue;
        }
        let s = h_inner(mesh, grid, values, &m) / nn;
        for (a, b) in values.iter_mut().zip(&m) {
            *a -= s * b;
        }
    }
}

/// Discrete `v·∇ₓf` with wall ghosts. Returns the largest flux-correction magnitude.
pub fn transport_apply(
    mesh: &Mesh,
    grid: &VelocityGrid,
    bnd: &BoundaryOperator,
    f: &[f64],
    out: &mut [f64],
    ghosts: &mut [f64],
) -> f64 {
    let nv = grid.nv();
    let corr = fill_ghosts(grid, bnd, f, ghosts);
    out.par_chunks_mut(nv).enumerate().for_each(|(c, o)| {
        cell_divergence(mesh, grid, bnd, f, ghosts, c, o);
        let a = mesh.cell_areas[c];
        for x in o.iter_mut() {
            *x /= a;
        }
    });
    corr
}

fn fill_ghosts(grid: &VelocityGrid, bnd: &BoundaryOperator, f: &[f64], ghosts: &mut [f64]) -> f64 {
    let nv = grid.nv();
    let corrections: Vec<f64> = ghosts
        .par_chunks_mut(nv)
        .zip(bnd.edges.par_iter())
        .map(|(g, e)| {
            let fc = &f[e.cell * nv..(e.cell + 1) * nv];
            e.maxwell_reflect(grid, fc, g).magnitude()
        })
        .collect();
    corrections.into_iter().fold(0.0, f64::max)
}

/// `Σ_e |e| (n·v) f_upwind` for one cell, written into `o`.
fn cell_divergence(
    mesh: &Mesh,
    grid: &VelocityGrid,
    bnd: &BoundaryOperator,
    f: &[f64],
    ghosts: &[f64],
    c: usize,
    o: &mut [f64],
) {
    let nv = grid.nv();
    let fc = &f[c * nv..(c + 1) * nv];
    o.iter_mut().for_each(|x| *x = 0.0);
    for ce in &mesh.cell_edges[c] {
        match *ce {
            CellEdge::Interior {
                neighbor,
                normal,
                length,
                ..
            } => {
                let fnb = &f[neighbor * nv..(neighbor + 1) * nv];
                for k in 0..nv {
                    let v = grid.nodes[k];
                    let fl = length * (normal[0] * v[0] + normal[1] * v[1]);
                    o[k] += fl * if fl > 0.0 { fc[k] } else { fnb[k] };
                }
            }
            CellEdge::Boundary { edge } => {
                let e = &bnd.edges[edge];
                let g = &ghosts[edge * nv..(edge + 1) * nv];
                for k in 0..nv {
                    let fl = e.length * e.flux[k];
                    if fl > 0.0 {
                        o[k] += fl * fc[k];
                    } else if fl < 0.0 {
                        o[k] += fl * g[k];
                    }
                }
            }
        }
    }
}

/// Spatial part `T f ≈ v·∇ₓf` of the scheme, including the rotational
/// correction applied by the stepper on symmetric specular domains.
pub fn transport_part(mesh: &Mesh, grid: &VelocityGrid, bnd: &BoundaryOperator, f: &[f64]) -> Vec<f64> {
    let nv = grid.nv();
    let mut out = vec![0.0; f.len()];
    let mut ghosts = vec![0.0; bnd.edges.len() * nv];
    transport_apply(mesh, grid, bnd, f, &mut out, &mut ghosts);
    if ConservedModes::of(mesh).rotation {
        let m = mode_values(mesh, grid, 2);
        let g = h_inner(mesh, grid, &out, &m) / h_inner(mesh, grid, &m, &m);
        for (o, b) in out.iter_mut().zip(&m) {
            *o -= g * b;
        }
    }
    out
}

/// Discrete generator `𝓛_ε f = −ε⁻¹ T f + ε⁻² 𝒞f`.
pub fn generator_apply(
    mesh: &Mesh,
    grid: &VelocityGrid,
    bnd: &BoundaryOperator,
    model: &CollisionModel,
    epsilon: f64,
    f: &[f64],
) -> Vec<f64> {
    let nv = grid.nv();
    let mut out = transport_part(mesh, grid, bnd, f);
    out.par_chunks_mut(nv).zip(f.par_chunks(nv)).for_each(|(o, fc)| {
        let cf = crate::collision::collide(model, grid, fc);
        for k in 0..nv {
            o[k] = -o[k] / epsilon + cf[k] / (epsilon * epsilon);
        }
    });
    out
}

/// Largest stable step `ε h_min / v_max` (positivity of the upwind update).
pub fn cfl_bound(mesh: &Mesh, grid: &VelocityGrid, epsilon: f64) -> f64 {
    epsilon * mesh.h_min() / grid.v_max
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StepInfo {
    /// Largest wall flux-correction coefficient.
    pub wall_correction: f64,
    /// Coefficient of the global rotational correction.
    pub rotation_correction: f64,
}

/// One-step integrator holding the wall operator, collision solver and buffers.
pub struct Stepper<'a> {
    pub mesh: &'a Mesh,
    pub grid: &'a VelocityGrid,
    pub boundary: BoundaryOperator,
    pub model: CollisionModel,
    pub epsilon: f64,
    pub dt: f64,
    pub modes: ConservedModes,
    implicit: ImplicitCollision,
    rotation_mode: Option<(Vec<f64>, f64)>,
    scratch: Vec<f64>,
    ghosts: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(mesh: &'a Mesh, grid: &'a VelocityGrid, model: CollisionModel, epsilon: f64, dt: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return invalid(format!("epsilon = {epsilon} must lie in (0, 1]"));
        }
        model.validate()?;
        let bound = cfl_bound(mesh, grid, epsilon);
        if !(dt > 0.0) || dt > bound * (1.0 + 1e-12) {
            return Err(Error::Cfl { dt, bound });
        }
        let boundary = BoundaryOperator::new(mesh, grid)?;
        let modes = ConservedModes::of(mesh);
        let rotation_mode = modes.rotation.then(|| {
            let m = mode_values(mesh, grid, 2);
            let nn = h_inner(mesh, grid, &m, &m);
            (m, nn)
        });
        Ok(Self {
            mesh,
            grid,
            implicit: ImplicitCollision::new(model, grid, dt / (epsilon * epsilon)),
            boundary,
            model,
            epsilon,
            dt,
            modes,
            rotation_mode,
            scratch: vec![0.0; mesh.n_cells() * grid.nv()],
            ghosts: Vec::new(),
        })
    }

    pub fn step(&mut self, state: &mut KineticState) -> Result<StepInfo> {
        let nv = self.grid.nv();
        let (mesh, grid) = (self.mesh, self.grid);
        if self.ghosts.len() != self.boundary.edges.len() * nv {
            self.ghosts = vec![0.0; self.boundary.edges.len() * nv];
        }
        let wall_correction = fill_ghosts(grid, &self.boundary, &state.values, &mut self.ghosts);
        let rot_before = self
            .rotation_mode
            .as_ref()
            .map(|(m, _)| h_inner(mesh, grid, &state.values, m));
        let f = &state.values;
        let ghosts = &self.ghosts;
        let bnd = &self.boundary;
        let r = self.dt / self.epsilon;
        let implicit = &self.implicit;
        self.scratch.par_chunks_mut(nv).enumerate().for_each(|(c, o)| {
            cell_divergence(mesh, grid, bnd, f, ghosts, c, o);
            let s = r / mesh.cell_areas[c];
            let fc = &f[c * nv..(c + 1) * nv];
            for k in 0..nv {
                o[k] = fc[k] - s * o[k];
            }
        });
        std::mem::swap(&mut state.values, &mut self.scratch);
        let mut rotation_correction = 0.0;
        if let (Some((m, nn)), Some(before)) = (&self.rotation_mode, rot_before) {
            let after = h_inner(mesh, grid, &state.values, m);
            let g = (before - after) / nn;
            for (a, b) in state.values.iter_mut().zip(m) {
                *a += g * b;
            }
            rotation_correction = g.abs();
        }
        let finite = state
            .values
            .par_chunks_mut(nv)
            .map(|fc| {
                let mut tmp = vec![0.0; nv];
                implicit.apply(grid, fc, &mut tmp);
                fc.iter().all(|x| x.is_finite())
            })
            .reduce(|| true, |a, b| a && b);
        state.time += self.dt;
        if !finite {
            return Err(Error::NonFinite { time: state.time });
        }
        Ok(StepInfo {
            wall_correction,
            rotation_correction,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialCondition {
    Zero,
    Equilibrium,
    /// Uniform noise in `[−a, a]` times `μ`, independent per cell and velocity.
    Noise { amplitude: f64 },
    /// `b(x)(ρ + m·v + θ(|v|²−2)/2)μ` with `b = (1 − |x−c|²/r²)₊⁴`.
    MacroBump {
        rho: f64,
        m: [f64; 2],
        theta: f64,
        center: [f64; 2],
        radius: f64,
    },
    /// Momentum field `(a x₂, 0)`.
    Shear { amplitude: f64 },
    /// `a e^{−d(x)/w}(1 + v₁v₂)μ`, `d` the distance to the nearest wall midpoint.
    BoundaryLayer { amplitude: f64, width: f64 },
    /// `a (Jx)·v μ`.
    Rotation { amplitude: f64 },
    /// `a (1 + x₁)(|v|²/2)^p μ`.
    Tail { amplitude: f64, power: f64 },
    /// Pointwise sum of several initial conditions.
    Sum { parts: Vec<InitialCondition> },
}

pub fn bump(x: Point, center: Point, radius: f64) -> f64 {
    let r2 = ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)) / (radius * radius);
    if r2 >= 1.0 {
        0.0
    } else {
        (1.0 - r2).powi(4)
    }
}

pub fn initial_state(
    mesh: &Mesh,
    grid: &VelocityGrid,
    ic: &InitialCondition,
    epsilon: f64,
    seed: u64,
) -> KineticState {
    let mut s = KineticState::zeros(mesh, grid, epsilon);
    add_initial(mesh, grid, ic, seed, &mut s.values);
    s
}

fn add_initial(mesh: &Mesh, grid: &VelocityGrid, ic: &InitialCondition, seed: u64, out: &mut [f64]) {
    let nv = grid.nv();
    let each = |out: &mut [f64], f: &dyn Fn(Point, [f64; 2], usize) -> f64| {
        for (c, x) in mesh.cell_centroids.iter().enumerate() {
            for k in 0..nv {
                out[c * nv + k] += f(*x, grid.nodes[k], k);
            }
        }
    };
    match ic {
        InitialCondition::Zero => {}
        InitialCondition::Equilibrium => each(out, &|_, _, k| grid.mu[k]),
        InitialCondition::Noise { amplitude } => {
            let mut r = rng::stream(seed, rng::STREAM_INITIAL);
            for (i, x) in out.iter_mut().enumerate() {
                *x += amplitude * r.random_range(-1.0..1.0) * grid.mu[i % nv];
            }
        }
        InitialCondition::MacroBump {
            rho,
            m,
            theta,
            center,
            radius,
        } => each(out, &|x, v, k| {
            bump(x, *center, *radius) * (rho + m[0] * v[0] + m[1] * v[1] + theta * grid.energy_poly(k)) * grid.mu[k]
        }),
        InitialCondition::Shear { amplitude } => each(out, &|x, v, k| amplitude * x[1] * v[0] * grid.mu[k]),
        InitialCondition::BoundaryLayer { amplitude, width } => {
            let dist: Vec<f64> = mesh
                .cell_centroids
                .iter()
                .map(|x| {
                    mesh.boundary
                        .iter()
                        .map(|e| ((x[0] - e.midpoint[0]).powi(2) + (x[1] - e.midpoint[1]).powi(2)).sqrt())
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            for (c, d) in dist.iter().enumerate() {
                for k in 0..nv {
                    let v = grid.nodes[k];
                    out[c * nv + k] += amplitude * (-d / width).exp() * (1.0 + v[0] * v[1]) * grid.mu[k];
                }
            }
        }
        InitialCondition::Rotation { amplitude } => {
            each(out, &|x, v, k| amplitude * (-x[1] * v[0] + x[0] * v[1]) * grid.mu[k])
        }
        InitialCondition::Tail { amplitude, power } => each(out, &|x, _, k| {
            amplitude * (1.0 + x[0]) * (0.5 * grid.speed2(k)).powf(*power) * grid.mu[k]
        }),
        InitialCondition::Sum { parts } => {
            for (i, p) in parts.iter().enumerate() {
                add_initial(mesh, grid, p, seed.wrapping_add(i as u64), out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    pub t_end: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub collision: CollisionModel,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    pub initial_condition: InitialCondition,
    /// Project the initial data onto the admissible subspace.
    #[serde(default = "default_true")]
    pub admissible: bool,
    /// Normalize the initial data to unit `𝓗` norm.
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_cfl() -> f64 {
    0.5
}
fn default_epsilon() -> f64 {
    1.0
}
fn default_record_every() -> usize {
    10
}
fn default_true() -> bool {
    true
}

impl RunConfig {
    pub fn new(collision: CollisionModel, initial_condition: InitialCondition, t_end: f64) -> Self {
        Self {
            cfl: default_cfl(),
            t_end,
            epsilon: 1.0,
            collision,
            record_every: default_record_every(),
            initial_condition,
            admissible: true,
            normalize: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            return invalid(format!("cfl = {} must lie in (0, 1)", self.cfl));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return invalid("t_end must be finite and non-negative");
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return invalid(format!("epsilon = {} must lie in (0, 1]", self.epsilon));
        }
        if self.record_every == 0 {
            return invalid("record_every must be positive");
        }
        self.collision.validate()
    }

    /// Uniform step `t_end / ⌈t_end / dt_cfl⌉` and the step count.
    pub fn time_step(&self, mesh: &Mesh, grid: &VelocityGrid) -> (f64, usize) {
        let dt = self.cfl * cfl_bound(mesh, grid, self.epsilon);
        if self.t_end == 0.0 {
            return (dt, 0);
        }
        let n = (self.t_end / dt).ceil().max(1.0) as usize;
        (self.t_end / n as f64, n)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Record {
    pub t: f64,
    pub h_norm: f64,
    pub hperp_norm: f64,
    pub rho_l2: f64,
    pub m_l2: f64,
    pub theta_l2: f64,
    pub lyap: f64,
    pub boundary_diss: f64,
    pub mass_residual: f64,
    pub energy_residual: f64,
    pub angmom_residual: f64,
    pub correction_mag: f64,
}

pub const CSV_HEADER: &str = "t,H_norm,Hperp_norm,rho_L2,m_L2,theta_L2,lyap,boundary_diss,mass_residual,energy_residual,angmom_residual,correction_mag";

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Trajectory {
    pub records: Vec<Record>,
    pub dt: f64,
    pub steps: usize,
    /// Largest relative per-step increase of `‖f‖_𝓗`.
    pub max_norm_increase: f64,
    pub initial_norm: f64,
}

impl Trajectory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                r.t,
                r.h_norm,
                r.hperp_norm,
                r.rho_l2,
                r.m_l2,
                r.theta_l2,
                r.lyap,
                r.boundary_diss,
                r.mass_residual,
                r.energy_residual,
                r.angmom_residual,
                r.correction_mag
            );
        }
        s
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn norms(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.h_norm).collect()
    }
}

/// Macro and micro norms of a state.
pub fn split_norms(mesh: &Mesh, grid: &VelocityGrid, f: &[f64]) -> (f64, f64, f64, f64, f64) {
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
    let perp = (total - rho - m - th).max(0.0);
    (total.sqrt(), perp.sqrt(), rho.sqrt(), m.sqrt(), th.sqrt())
}

/// Runs with a plain diagnostic set; the Lyapunov column is filled by `lyap`.
pub fn run_with(
    mesh: &Mesh,
    grid: &VelocityGrid,
    config: &RunConfig,
    mut lyap: impl FnMut(&[f64]) -> f64,
) -> Result<(Trajectory, KineticState)> {
    config.validate()?;
    let mut state = initial_state(mesh, grid, &config.initial_condition, config.epsilon, config.seed);
    if config.admissible {
        make_admissible(mesh, grid, &mut state.values, ConservedModes::of(mesh));
    }
    if config.normalize {
        let n = h_norm(mesh, grid, &state.values);
        if n > 0.0 {
            state.values.iter_mut().for_each(|x| *x /= n);
        }
    }
    run_from(mesh, grid, config, state, &mut lyap)
}

pub fn run_from(
    mesh: &Mesh,
    grid: &VelocityGrid,
    config: &RunConfig,
    mut state: KineticState,
    lyap: &mut dyn FnMut(&[f64]) -> f64,
) -> Result<(Trajectory, KineticState)> {
    config.validate()?;
    state.check(mesh, grid)?;
    let (dt, steps) = config.time_step(mesh, grid);
    let mut stepper = Stepper::new(mesh, grid, config.collision, config.epsilon, dt)?;
    let c0 = conserved(mesh, grid, &state.values);
    let mut traj = Trajectory {
        dt,
        steps,
        ..Default::default()
    };
    let mut corr: f64 = 0.0;
    let mut prev = record(mesh, grid, &stepper.boundary, &state, &c0, 0.0, lyap, &mut traj);
    traj.initial_norm = prev;
    for n in 1..=steps {
        let info = stepper.step(&mut state)?;
        corr = corr.max(info.wall_correction + info.rotation_correction);
        if n % config.record_every == 0 || n == steps {
            let h = record(mesh, grid, &stepper.boundary, &state, &c0, corr, lyap, &mut traj);
            if prev > 0.0 {
                traj.max_norm_increase = traj.max_norm_increase.max((h - prev) / prev);
            }
            prev = h;
            corr = 0.0;
        }
    }
    Ok((traj, state))
}

#[allow(clippy::too_many_arguments)]
fn record(
    mesh: &Mesh,
    grid: &VelocityGrid,
    bnd: &BoundaryOperator,
    state: &KineticState,
    c0: &[f64; 3],
    corr: f64,
    lyap: &mut dyn FnMut(&[f64]) -> f64,
    traj: &mut Trajectory,
) -> f64 {
    let (h, perp, rho, m, th) = split_norms(mesh, grid, &state.values);
    let c = conserved(mesh, grid, &state.values);
    traj.records.push(Record {
        t: state.time,
        h_norm: h,
        hperp_norm: perp,
        rho_l2: rho,
        m_l2: m,
        theta_l2: th,
        lyap: lyap(&state.values),
        boundary_diss: bnd.dperp_boundary_norm(grid, &state.values),
        mass_residual: (c[0] - c0[0]).abs(),
        energy_residual: (c[1] - c0[1]).abs(),
        angmom_residual: (c[2] - c0[2]).abs(),
        correction_mag: corr,
    });
    h
}

/// Runs without a Lyapunov functional (column set to 0).
pub fn run(mesh: &Mesh, grid: &VelocityGrid, config: &RunConfig) -> Result<(Trajectory, KineticState)> {
    run_with(mesh, grid, config, |_| 0.0)
}
