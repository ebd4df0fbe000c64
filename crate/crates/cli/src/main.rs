//! `hypokin` command-line driver: meshes, assumption checks, functional
//! inequality constants, simulations and coercivity certificates.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::Rng;
use serde::{Deserialize, Serialize};

use hypokin::boundary::{BoundaryInvariants, BoundaryOperator};
use hypokin::collision::{collide, verify_assumptions_with, AssumptionReport, CollisionModel, Weight};
use hypokin::geometry::{build_normalized, AlphaProfile, DomainSpec, Mesh, Shape};
use hypokin::hypocoercivity::{
    coercivity_certificate, fit_trajectory, weak_envelope, CertificateOptions, CertificateReport, DecayReport,
    HypoContext, HypoParams, Variant,
};
use hypokin::korn::{inequality_constant, EigenOptions, Inequality, InequalityReport};
use hypokin::rng;
use hypokin::transport::{run_with, InitialCondition, RunConfig};
use hypokin::velocity::{gauss_hermite_grid, VelocityGrid};

const SCHEMA: u32 = 1;

#[derive(Parser)]
#[command(name = "hypokin", version, about = "Hypocoercivity experiments for kinetic equations with Maxwell walls")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON); built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, env = "HYPO_THREADS")]
    threads: Option<usize>,
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Write the normalized mesh as JSON.
    Mesh,
    /// Check the collision assumptions and the wall operator invariants.
    Verify,
    /// Poincaré and Korn constants.
    Constants,
    /// Simulate, fit decay rates and track the Lyapunov functional.
    Run,
    /// Sampled coercivity certificate with the η sweep.
    Certify,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Auto {
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Eta {
    Fixed(f64),
    Auto(Auto),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentConfig {
    schema: u32,
    domain: DomainSpec,
    #[serde(default = "default_h")]
    h: f64,
    #[serde(default = "default_n")]
    n_per_axis: usize,
    #[serde(default = "default_collision")]
    collision: CollisionModel,
    #[serde(default = "default_epsilons")]
    epsilons: Vec<f64>,
    #[serde(default = "default_eta")]
    eta: Eta,
    #[serde(default = "default_t_end")]
    t_end: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    out: Option<PathBuf>,
    #[serde(default = "default_ic")]
    initial_condition: InitialCondition,
    #[serde(default = "default_cfl")]
    cfl: f64,
    #[serde(default = "default_record_every")]
    record_every: usize,
    #[serde(default = "default_samples")]
    samples: usize,
    #[serde(default = "default_variant")]
    variant: Variant,
    /// Defaults to every inequality defined for the domain.
    #[serde(default)]
    inequalities: Option<Vec<Inequality>>,
    /// `ω₁` of the weak envelope; defaults to `ω₀`.
    #[serde(default)]
    omega1: Option<Weight>,
}

fn default_h() -> f64 {
    0.1
}
fn default_n() -> usize {
    8
}
fn default_collision() -> CollisionModel {
    CollisionModel::Bgk
}
fn default_epsilons() -> Vec<f64> {
    vec![1.0]
}
fn default_eta() -> Eta {
    Eta::Auto(Auto::Auto)
}
fn default_t_end() -> f64 {
    10.0
}
fn default_ic() -> InitialCondition {
    InitialCondition::Sum {
        parts: vec![
            InitialCondition::MacroBump {
                rho: 1.0,
                m: [0.5, -0.3],
                theta: 0.7,
                center: [0.1, -0.05],
                radius: 0.35,
            },
            InitialCondition::Noise { amplitude: 0.1 },
        ],
    }
}
fn default_cfl() -> f64 {
    0.5
}
fn default_record_every() -> usize {
    10
}
fn default_samples() -> usize {
    200
}
fn default_variant() -> Variant {
    Variant::Strong
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA,
            domain: DomainSpec::new(Shape::UnitSquare, AlphaProfile::constant(1.0)),
            h: default_h(),
            n_per_axis: default_n(),
            collision: default_collision(),
            epsilons: default_epsilons(),
            eta: default_eta(),
            t_end: default_t_end(),
            seed: 0,
            out: None,
            initial_condition: default_ic(),
            cfl: default_cfl(),
            record_every: default_record_every(),
            samples: default_samples(),
            variant: default_variant(),
            inequalities: None,
            omega1: None,
        }
    }
}

impl ExperimentConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let cfg: Self = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => Self::default(),
        };
        if cfg.schema != SCHEMA {
            bail!("unsupported config schema {} (expected {SCHEMA})", cfg.schema);
        }
        if !(cfg.h > 0.0) {
            bail!("h must be positive");
        }
        if cfg.epsilons.is_empty() {
            bail!("epsilons must not be empty");
        }
        if let Eta::Fixed(e) = cfg.eta {
            HypoParams::new(e, 1.0, cfg.variant)?;
        }
        cfg.domain.alpha.validate()?;
        cfg.collision.validate()?;
        Ok(cfg)
    }

    fn certificate_options(&self, epsilons: Vec<f64>) -> CertificateOptions {
        CertificateOptions {
            n_samples: self.samples,
            seed: self.seed,
            eta: match self.eta {
                Eta::Fixed(e) => Some(e),
                Eta::Auto(_) => None,
            },
            variant: self.variant,
            epsilons,
            ..Default::default()
        }
    }
}

struct Session {
    cfg: ExperimentConfig,
    out: PathBuf,
    quiet: bool,
}

impl Session {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let p = self.out.join(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        self.say(format!("wrote {}", p.display()));
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, &s)
    }

    fn mesh(&self) -> Result<Mesh> {
        Ok(build_normalized(&self.cfg.domain, self.cfg.h)?)
    }

    fn grid(&self) -> Result<VelocityGrid> {
        Ok(gauss_hermite_grid(self.cfg.n_per_axis)?)
    }
}

#[derive(Serialize)]
struct VerifyReport {
    collision: CollisionModel,
    assumptions: AssumptionReport,
    /// `max |⟨−𝒞f,f⟩ − ‖ω₀^{-1/2} f⊥‖²| / ‖f‖²` over random velocity vectors.
    weighted_gap_identity: f64,
    boundary: BoundaryInvariants,
    violations: Vec<String>,
}

fn weighted_gap_identity(model: &CollisionModel, grid: &VelocityGrid, samples: usize, seed: u64) -> f64 {
    let nv = grid.nv();
    let w0 = match model {
        CollisionModel::WeakBgk { omega0 } => omega0.on_grid(grid),
        _ => vec![1.0; nv],
    };
    let mut r = rng::stream(seed, rng::STREAM_SAMPLES);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let f: Vec<f64> = (0..nv).map(|k| r.random_range(-1.0..1.0) * grid.mu[k]).collect();
        let p = grid.project_pi(&f);
        let perp: Vec<f64> = f.iter().zip(&p).map(|(a, b)| a - b).collect();
        let weighted: f64 = (0..nv).map(|k| grid.ipw[k] * perp[k] * perp[k] / w0[k]).sum();
        let cf = collide(model, grid, &f);
        let d = -grid.inner(&cf, &f) - weighted;
        worst = worst.max(d.abs() / grid.inner(&f, &f));
    }
    worst
}

fn cmd_mesh(s: &Session) -> Result<bool> {
    let m = s.mesh()?;
    s.say(format!(
        "mesh: {} vertices, {} triangles, {} boundary edges, h_max {:.4}",
        m.n_vertices(),
        m.n_cells(),
        m.boundary.len(),
        m.h_max()
    ));
    s.write_json("mesh.json", &m.to_json())?;
    Ok(true)
}

fn cmd_verify(s: &Session) -> Result<bool> {
    let cfg = &s.cfg;
    let grid = s.grid()?;
    let mesh = s.mesh()?;
    let model = cfg.collision;
    let omega1 = cfg.omega1.unwrap_or(model.omega0());
    let a = verify_assumptions_with(&model, &grid, omega1);
    let weighted = weighted_gap_identity(&model, &grid, 100, cfg.seed);
    let b = BoundaryOperator::new(&mesh, &grid)?.verify_invariants(&grid, 20, cfg.seed);
    let mut violations = Vec::new();
    if a.kernel_dim != model.kernel_dim_expected() {
        violations.push(format!("kernel dimension {} != {}", a.kernel_dim, model.kernel_dim_expected()));
    }
    if a.self_adjoint_residual > 1e-12 {
        violations.push(format!("self-adjoint residual {:.3e}", a.self_adjoint_residual));
    }
    let gap = match model {
        CollisionModel::WeakBgk { .. } => a.weak_gap,
        _ => a.spectral_gap,
    };
    if gap < model.lambda() - 1e-10 {
        violations.push(format!("spectral gap {gap:.6} below {}", model.lambda()));
    }
    if a.max_conservation_defect > 1e-12 {
        violations.push(format!("conservation defect {:.3e}", a.max_conservation_defect));
    }
    if weighted > 1e-12 {
        violations.push(format!("weighted gap identity defect {weighted:.3e}"));
    }
    if !b.passed(1e-12) {
        violations.push(format!(
            "wall invariants: mass {:.3e}, energy {:.3e}, equilibrium {:.3e}",
            b.mass_flux, b.energy_flux, b.equilibrium_defect
        ));
    }
    for v in &violations {
        s.say(format!("violation: {v}"));
    }
    let ok = violations.is_empty();
    s.write_json(
        "verify.json",
        &VerifyReport {
            collision: model,
            assumptions: a,
            weighted_gap_identity: weighted,
            boundary: b,
            violations,
        },
    )?;
    s.say(if ok { "verify: all checks passed" } else { "verify: FAILED" });
    Ok(ok)
}

fn cmd_constants(s: &Session) -> Result<bool> {
    let mesh = s.mesh()?;
    let list = s.cfg.inequalities.clone().unwrap_or_else(|| {
        let mut v = vec![Inequality::Pw];
        if !mesh.alpha_is_zero() {
            v.extend([Inequality::RobinP, Inequality::KornRobin]);
        }
        v.extend([Inequality::KornRigid, Inequality::KornL2, Inequality::VectorPoincare]);
        v
    });
    let opts = EigenOptions {
        seed: s.cfg.seed,
        ..Default::default()
    };
    let mut reports: Vec<InequalityReport> = Vec::new();
    for which in list {
        let r = inequality_constant(&mesh, which, &opts)?;
        s.say(format!(
            "{:<16} C = {:.6}  (eigenvalue {:.8}, agreement {:.1e}, violations {})",
            r.inequality, r.constant, r.eigenvalue, r.agreement, r.violations
        ));
        reports.push(r);
    }
    let ok = reports.iter().all(|r| r.certified);
    s.write_json("constants.json", &reports)?;
    Ok(ok)
}

#[derive(Serialize)]
struct EpsilonRun {
    epsilon: f64,
    csv: String,
    steps: usize,
    dt: f64,
    certificate_kappa: f64,
    eta: f64,
    decay: Option<DecayReport>,
    lyapunov_violations: usize,
    /// Largest `‖f(t)‖ / (ϑ(t)‖f_in‖_{𝓗₁})` (weak-bgk only).
    envelope_ratio: Option<f64>,
    /// Largest `‖f(t)‖_{𝓗₁} / ‖f_in‖_{𝓗₁}` (weak-bgk only).
    h1_growth: Option<f64>,
}

#[derive(Serialize)]
struct RunReport {
    config: ExperimentConfig,
    runs: Vec<EpsilonRun>,
}

fn cmd_run(s: &Session) -> Result<bool> {
    let cfg = &s.cfg;
    let grid = s.grid()?;
    let mesh = s.mesh()?;
    let ctx = HypoContext::new(&mesh, &grid, cfg.collision)?;
    let weak = matches!(cfg.collision, CollisionModel::WeakBgk { .. });
    let omega0 = cfg.collision.omega0();
    let omega1 = cfg.omega1.unwrap_or(omega0);
    let w1 = omega1.on_grid(&grid);
    let mut ok = true;
    let mut runs = Vec::new();
    for &eps in &cfg.epsilons {
        let cert = coercivity_certificate(&ctx, &cfg.certificate_options(vec![eps]))?;
        let variant = if cfg.variant == Variant::Weak { Variant::Strong } else { cfg.variant };
        let params = HypoParams::new(cert.eta, eps, variant)?;
        let mut run_cfg = RunConfig::new(cfg.collision, cfg.initial_condition.clone(), cfg.t_end);
        run_cfg.cfl = cfg.cfl;
        run_cfg.epsilon = eps;
        run_cfg.record_every = cfg.record_every;
        run_cfg.seed = cfg.seed;
        let mut h1 = Vec::new();
        let (traj, _) = run_with(&mesh, &grid, &run_cfg, |f| {
            if weak {
                h1.push(ctx.weighted_norm2(f, &w1).sqrt());
            }
            ctx.hypo_norm2(f, &params).unwrap_or(f64::NAN)
        })?;
        let csv = format!("trajectory_eps{eps}.csv");
        s.write(&csv, &traj.to_csv())?;
        let lyap: Vec<f64> = traj.records.iter().map(|r| r.lyap).collect();
        let violations = if cert.positive {
            lyap.windows(2).filter(|w| !(w[1] <= w[0] * (1.0 + 1e-10))).count()
        } else {
            0
        };
        if violations > 0 {
            s.say(format!("eps {eps}: {violations} Lyapunov increases"));
            ok = false;
        }
        let decay = if traj.records.iter().all(|r| r.h_norm > 0.0) {
            match fit_trajectory(&traj, None) {
                Ok(d) => Some(d),
                Err(e) => {
                    s.say(format!("eps {eps}: no decay fit ({e})"));
                    None
                }
            }
        } else {
            s.say(format!("eps {eps}: zero norm encountered, no decay fit"));
            None
        };
        let (envelope_ratio, h1_growth) = if weak && !h1.is_empty() && h1[0] > 0.0 {
            let ratio = traj
                .records
                .iter()
                .map(|r| r.h_norm / (weak_envelope(r.t, &omega0, &omega1, 1.0, cert.kappa.max(0.0), 1.0) * h1[0]))
                .fold(0.0, f64::max);
            (Some(ratio), Some(h1.iter().map(|x| x / h1[0]).fold(0.0, f64::max)))
        } else {
            (None, None)
        };
        if let Some(d) = &decay {
            s.say(format!(
                "eps {eps}: kappa {:.5}  r2 {:.5}  certificate {:.5} at eta {:.4}",
                d.kappa, d.r2, cert.kappa, cert.eta
            ));
        }
        runs.push(EpsilonRun {
            epsilon: eps,
            csv,
            steps: traj.steps,
            dt: traj.dt,
            certificate_kappa: cert.kappa,
            eta: cert.eta,
            decay,
            lyapunov_violations: violations,
            envelope_ratio,
            h1_growth,
        });
    }
    s.write_json(
        "run.json",
        &RunReport {
            config: cfg.clone(),
            runs,
        },
    )?;
    Ok(ok)
}

fn cmd_certify(s: &Session) -> Result<bool> {
    let cfg = &s.cfg;
    let grid = s.grid()?;
    let mesh = s.mesh()?;
    let ctx = HypoContext::new(&mesh, &grid, cfg.collision)?;
    let epsilons = if cfg.variant == Variant::Epsilon {
        cfg.epsilons.clone()
    } else {
        vec![1.0]
    };
    let r: CertificateReport = coercivity_certificate(&ctx, &cfg.certificate_options(epsilons))?;
    s.say(format!(
        "certificate: kappa {:.6} at eta {:.5} over {} samples ({})",
        r.kappa,
        r.eta,
        r.n_samples,
        if r.positive { "positive" } else { "NOT positive" }
    ));
    s.write_json("certificate.json", &r)?;
    if !r.positive {
        s.write_json("worst_state.json", &r.worst_state)?;
    }
    Ok(r.positive)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn execute(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let session = Session {
        cfg,
        out,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Mesh => cmd_mesh(&session),
        Command::Verify => cmd_verify(&session),
        Command::Constants => cmd_constants(&session),
        Command::Run => cmd_run(&session),
        Command::Certify => cmd_certify(&session),
    }
}
