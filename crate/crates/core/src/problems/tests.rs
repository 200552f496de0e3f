use std::f64::consts::PI;

use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::autodiff::Bindings;
use crate::sampling::{boundary_sample, rng_stream, uniform_random, BoundaryMode};

fn names() -> Vec<&'static str> {
    catalog().iter().map(|p| p.name).collect()
}

#[test]
fn catalog_has_the_six_experiments() {
    assert_eq!(
        names(),
        vec![
            "poisson1",
            "poisson2",
            "burgers",
            "poisson_param",
            "ocp_poisson",
            "ocp_stokes"
        ]
    );
    assert!(matches!(
        Problem::by_name("heat"),
        Err(ProblemError::Unknown(_))
    ));
}

#[test]
fn structural_invariants() {
    for p in catalog() {
        let mut g = Graph::new();
        let ctx = FieldCtx {
            fields: p.fields.iter().map(|_| g.var(VarId::fresh())).collect(),
            coords: (0..p.domain.dim()).map(|_| VarId::fresh()).collect(),
            mu: (0..p.params.dim()).map(|_| VarId::fresh()).collect(),
        };
        let r = p.residual_exprs(&mut g, &ctx).unwrap();
        assert_eq!(r.len(), p.fields.len(), "{}", p.name);
        for bc in &p.bcs {
            assert!(bc.field < p.fields.len());
            assert!(!bc.facets.is_empty());
        }
        for rel in &p.relations {
            assert!(p.field_index(rel.output).is_some());
            assert!(!p.pi_arch_base.contains(&rel.output));
        }
        for f in &p.pi_arch_base {
            assert!(p.field_index(f).is_some());
        }
        if !p.relations.is_empty() {
            assert_eq!(p.pi_arch_base.len() + p.relations.len(), p.fields.len());
        }
    }
}

#[test]
fn closed_form_values() {
    let p1 = Problem::by_name("poisson1").unwrap();
    let w = p1.exact_solution(&[0.5, 0.5], &[]).unwrap()[0];
    assert!((w + 1.0 / (2.0 * PI * PI)).abs() < 1e-15);
    assert!((w + 0.0506606).abs() < 1e-7);
    assert_eq!(p1.exact_solution(&[0.0, 0.0], &[]).unwrap()[0].abs(), 0.0);
    let p2 = Problem::by_name("poisson2").unwrap();
    assert_eq!(p2.exact_solution(&[0.5, 0.5], &[]).unwrap(), vec![0.0625]);
    for name in ["burgers", "poisson_param", "ocp_poisson", "ocp_stokes"] {
        assert!(Problem::by_name(name)
            .unwrap()
            .exact_solution(&[0.0, 0.0], &[])
            .is_none());
    }
}

fn max_abs(g: &Graph, exprs: &[Expr], ctx: &FieldCtx, pts: &[&[f64]]) -> f64 {
    let mut worst: f64 = 0.0;
    for p in pts {
        let mut b = Bindings::new();
        for (v, x) in ctx.coords.iter().zip(p.iter()) {
            b.set(*v, *x);
        }
        for v in g.evaluate_many(exprs, &b).unwrap() {
            worst = worst.max(v.abs());
        }
    }
    worst
}

#[test]
fn closed_forms_zero_the_residual() {
    for name in ["poisson1", "poisson2"] {
        let p = Problem::by_name(name).unwrap();
        let mut g = Graph::new();
        let ctx = p.exact_exprs(&mut g).unwrap();
        let r = p.residual_exprs(&mut g, &ctx).unwrap();
        let pts = uniform_random(&p.domain, 200, 17).unwrap();
        let rows: Vec<&[f64]> = pts.iter().collect();
        assert!(max_abs(&g, &r, &ctx, &rows) < 1e-8, "{name}");
    }
}

#[test]
fn closed_forms_satisfy_dirichlet_data() {
    for name in ["poisson1", "poisson2"] {
        let p = Problem::by_name(name).unwrap();
        let mut g = Graph::new();
        let ctx = p.exact_exprs(&mut g).unwrap();
        let m = p.boundary_exprs(&mut g, &ctx).unwrap();
        let pts = boundary_sample(
            &p.domain,
            400,
            BoundaryMode::UniformRandom,
            3,
            &p.domain.facets(),
        )
        .unwrap();
        let rows: Vec<&[f64]> = pts.iter().collect();
        assert!(max_abs(&g, &m, &ctx, &rows) < 1e-12, "{name}");
    }
}

#[test]
fn zero_solves_burgers_in_the_interior() {
    let p = Problem::by_name("burgers").unwrap();
    let mut g = Graph::new();
    let ctx = FieldCtx {
        fields: vec![g.zero()],
        coords: vec![VarId::fresh(), VarId::fresh()],
        mu: vec![],
    };
    let r = p.residual_exprs(&mut g, &ctx).unwrap();
    assert_eq!(g.as_const(r[0]), Some(0.0));
}

#[test]
fn hardwired_relation_zeroes_the_optimality_residual() {
    let p = Problem::by_name("ocp_poisson").unwrap();
    let mut g = Graph::new();
    let coords = vec![VarId::fresh(), VarId::fresh()];
    let mu = vec![VarId::fresh(), VarId::fresh()];
    let (x0, x1) = (g.var(coords[0]), g.var(coords[1]));
    let m2 = g.var(mu[1]);
    let s = g.sin(x0);
    let y = g.mul(s, x1);
    let c = g.cos(x1);
    let u = g.add(c, x0);
    let z = g.mul(m2, u);
    let ctx = FieldCtx {
        fields: vec![y, u, z],
        coords,
        mu,
    };
    let r = p.residual_exprs(&mut g, &ctx).unwrap();
    assert_eq!(g.as_const(r[1]), Some(0.0));
}

#[test]
fn couette_flow_solves_the_uncontrolled_state_equations() {
    let p = Problem::by_name("ocp_stokes").unwrap();
    let mut g = Graph::new();
    let coords = vec![VarId::fresh(), VarId::fresh()];
    let mu = vec![VarId::fresh()];
    let x1 = g.var(coords[1]);
    let zero = g.zero();
    let p_const = g.constant(2.5);
    let mut fields = vec![zero; 8];
    fields[0] = x1;
    fields[2] = p_const;
    let ctx = FieldCtx { fields, coords, mu };
    let r = p.residual_exprs(&mut g, &ctx).unwrap();
    let mut rng = rng_stream(4, 0);
    for _ in 0..50 {
        let b = Bindings::new()
            .with(ctx.coords[0], rng.random())
            .with(ctx.coords[1], 2.0 * rng.random::<f64>())
            .with(ctx.mu[0], 0.0);
        // state momentum (two components) and continuity
        for k in 5..8 {
            assert_eq!(g.evaluate(r[k], &b).unwrap(), 0.0);
        }
    }
    // v = (x1, 0) meets the wall and inflow data
    let m = p.boundary_exprs(&mut g, &ctx).unwrap();
    let b = Bindings::new()
        .with(ctx.coords[0], 0.0)
        .with(ctx.coords[1], 1.3)
        .with(ctx.mu[0], 0.0);
    assert_eq!(g.evaluate(m[0], &b).unwrap(), 0.0);
    assert_eq!(g.evaluate(m[1], &b).unwrap(), 0.0);
}

#[test]
fn stokes_relation_text_matches_penalty() {
    let p = Problem::by_name("ocp_stokes").unwrap();
    for rel in &p.relations {
        assert!(rel.expr.starts_with(&format!("{STOKES_PENALTY}*")));
    }
}

#[test]
fn arity_mismatch_is_an_error() {
    let p = Problem::by_name("ocp_poisson").unwrap();
    let mut g = Graph::new();
    let ctx = FieldCtx {
        fields: vec![g.zero()],
        coords: vec![VarId::fresh(), VarId::fresh()],
        mu: vec![VarId::fresh(), VarId::fresh()],
    };
    assert_eq!(
        p.residual_exprs(&mut g, &ctx).unwrap_err(),
        ProblemError::Arity {
            what: "field count",
            expected: 3,
            got: 1
        }
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    // Residual graphs differentiate consistently with finite differences,
    // for smooth stand-in fields.
    #[test]
    fn residual_derivatives_match_finite_differences(idx in 0usize..6, seed in 0u64..1000) {
        let p = catalog().remove(idx);
        let mut g = Graph::new();
        let coords: Vec<VarId> = (0..p.domain.dim()).map(|_| VarId::fresh()).collect();
        let mu: Vec<VarId> = (0..p.params.dim()).map(|_| VarId::fresh()).collect();
        let mut rng = rng_stream(seed, 0);
        let (a, b) = (g.var(coords[0]), g.var(coords[1]));
        let fields = (0..p.fields.len())
            .map(|_| {
                let sa = g.scale(rng.random_range(-2.0..2.0), a);
                let sb = g.scale(rng.random_range(-2.0..2.0), b);
                let s = g.add(sa, sb);
                let t = g.tanh(s);
                let m = g.mul(t, a);
                g.sin(m)
            })
            .collect();
        let ctx = FieldCtx { fields, coords, mu };
        let r = p.residual_exprs(&mut g, &ctx).unwrap();
        let mut bind = Bindings::new();
        for v in ctx.coords.iter().chain(&ctx.mu) {
            bind.set(*v, rng.random_range(-0.9..0.9));
        }
        for e in r {
            let scale = 1.0 + g.evaluate(e, &bind).unwrap().abs();
            prop_assert!(g.fd_check(e, &bind, 1e-5).unwrap() < 1e-5 * scale);
        }
    }
}
