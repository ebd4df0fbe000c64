use hypokin::collision::CollisionModel;
use hypokin::elliptic::{solve_lame, solve_neumann, solve_poisson};
use hypokin::geometry::{build_normalized, AlphaProfile, DomainSpec, Mesh, Shape};
use hypokin::hypocoercivity::{
    coercivity_certificate, lemma_constants, CertificateOptions, HypoContext, HypoParams, Variant,
};
use hypokin::transport::{initial_state, make_admissible, ConservedModes, InitialCondition};
use hypokin::velocity::{gauss_hermite_grid, VelocityGrid};

fn setup(alpha: f64) -> (Mesh, VelocityGrid) {
    let mesh = build_normalized(&DomainSpec::new(Shape::UnitSquare, AlphaProfile::constant(alpha)), 0.2).unwrap();
    (mesh, gauss_hermite_grid(6).unwrap())
}

fn bump() -> InitialCondition {
    InitialCondition::MacroBump {
        rho: 1.0,
        m: [0.4, -0.2],
        theta: 0.6,
        center: [0.1, 0.0],
        radius: 0.35,
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn aux_fields_match_direct_solves() {
    let (mesh, grid) = setup(1.0);
    let ctx = HypoContext::new(&mesh, &grid, CollisionModel::Bgk).unwrap();
    let mut f = initial_state(&mesh, &grid, &bump(), 1.0, 0).values;
    make_admissible(&mesh, &grid, &mut f, ConservedModes::of(&mesh));
    let aux = ctx.solve_aux(&f).unwrap();
    let mom = ctx.moments(&f).unwrap();
    let rho: Vec<f64> = mom.iter().map(|c| c.rho).collect();
    let theta: Vec<f64> = mom.iter().map(|c| c.theta).collect();
    let m: Vec<[f64; 2]> = mom.iter().map(|c| c.m).collect();
    assert!(max_diff(&aux.u_rho.values, &solve_neumann(&mesh, &rho).unwrap().values) <= 1e-10);
    assert!(max_diff(&aux.u_theta.values, &solve_poisson(&mesh, &theta).unwrap().values) <= 1e-10);
    let lame = solve_lame(&mesh, &m).unwrap();
    for (a, b) in aux.u_m.values.iter().zip(&lame.values) {
        assert!((a[0] - b[0]).abs().max((a[1] - b[1]).abs()) <= 1e-10);
    }
}

#[test]
fn micro_state_has_no_aux_fields() {
    let (mesh, grid) = setup(1.0);
    let ctx = HypoContext::new(&mesh, &grid, CollisionModel::Bgk).unwrap();
    let f = initial_state(&mesh, &grid, &InitialCondition::Noise { amplitude: 1.0 }, 1.0, 3).values;
    let perp: Vec<f64> = f
        .chunks(grid.nv())
        .flat_map(|c| {
            let p = grid.project_pi(c);
            c.iter().zip(p).map(|(a, b)| a - b).collect::<Vec<_>>()
        })
        .collect();
    let aux = ctx.solve_aux(&perp).unwrap();
    assert_eq!(aux.u_rho.l2_norm, 0.0);
    assert_eq!(aux.u_theta.l2_norm, 0.0);
    assert_eq!(aux.u_m.l2_norm, 0.0);
    let p = HypoParams::new(0.4, 1.0, Variant::Strong).unwrap();
    let plain = ctx.h_inner(&perp, &perp);
    assert!((ctx.hypo_norm2(&perp, &p).unwrap() - plain).abs() <= 1e-14 * plain);
}

#[test]
fn certificate_is_positive_and_reproducible() {
    let (mesh, grid) = setup(1.0);
    let ctx = HypoContext::new(&mesh, &grid, CollisionModel::Bgk).unwrap();
    let opts = CertificateOptions {
        n_samples: 100,
        seed: 11,
        sweep_points: 12,
        ..Default::default()
    };
    let a = coercivity_certificate(&ctx, &opts).unwrap();
    let b = coercivity_certificate(&ctx, &opts).unwrap();
    assert!(a.kappa > 0.0 && a.positive);
    assert_eq!(a.kappa, b.kappa);
    assert_eq!(a.eta, b.eta);
}

#[test]
fn fixed_eta_certificate_is_below_the_sweep_optimum() {
    let (mesh, grid) = setup(1.0);
    let ctx = HypoContext::new(&mesh, &grid, CollisionModel::Bgk).unwrap();
    let base = CertificateOptions {
        n_samples: 100,
        seed: 5,
        sweep_points: 12,
        ..Default::default()
    };
    let swept = coercivity_certificate(&ctx, &base).unwrap();
    let fixed = coercivity_certificate(
        &ctx,
        &CertificateOptions {
            eta: Some(0.01),
            ..base
        },
    )
    .unwrap();
    assert!(fixed.kappa <= swept.kappa + 1e-12);
}

#[test]
fn lemma_constants_are_finite_on_admissible_states() {
    let (mesh, grid) = setup(0.5);
    let ctx = HypoContext::new(&mesh, &grid, CollisionModel::Bgk).unwrap();
    let states: Vec<_> = (0..8)
        .map(|i| {
            let mut f = ctx.random_state(2, i);
            make_admissible(&mesh, &grid, &mut f, ConservedModes::of(&mesh));
            ctx.lemma_diagnostics(&f).unwrap()
        })
        .collect();
    for which in 0..3 {
        let c = lemma_constants(&states, which);
        assert!(c.kappa.is_finite() && c.kappa > 0.0, "lemma {which}: {c:?}");
        assert!(c.c.is_finite());
    }
}
