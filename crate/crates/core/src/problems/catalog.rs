use std::f64::consts::PI;

use super::{BcKind, BoundaryCondition, Defaults, FieldCtx, Problem, Relation};
use crate::autodiff::{Expr, Graph};
use crate::network::Activation;
use crate::sampling::{Axis, AxisKind, BoundaryMode, BoxDomain, Facet, SamplerKind};

pub const STOKES_VISCOSITY: f64 = 0.1;
pub const STOKES_PENALTY: f64 = 0.008;

const BURGERS_VISCOSITY: f64 = 0.01 / PI;

fn boxed(axes: &[(&str, f64, f64, AxisKind)]) -> BoxDomain {
    BoxDomain::new(
        axes.iter()
            .map(|&(n, lo, hi, k)| Axis::new(n, lo, hi, k))
            .collect(),
    )
    .expect("catalog boxes are valid")
}

fn square(lo: f64, hi: f64) -> BoxDomain {
    boxed(&[
        ("x0", lo, hi, AxisKind::Spatial),
        ("x1", lo, hi, AxisKind::Spatial),
    ])
}

fn all_facets() -> Vec<Facet> {
    vec![Facet::low(0), Facet::high(0), Facet::low(1), Facet::high(1)]
}

fn zero(g: &mut Graph, _: &FieldCtx) -> Expr {
    g.zero()
}

fn sin_pi(g: &mut Graph, x: Expr) -> Expr {
    let a = g.scale(PI, x);
    g.sin(a)
}

fn sine_product(g: &mut Graph, ctx: &FieldCtx) -> Expr {
    let (x0, x1) = (ctx.x(g, 0), ctx.x(g, 1));
    let a = sin_pi(g, x0);
    let b = sin_pi(g, x1);
    g.mul(a, b)
}

/// `x (1 - x)`
fn bump(g: &mut Graph, x: Expr) -> Expr {
    let one = g.one();
    let c = g.sub(one, x);
    g.mul(x, c)
}

fn poisson1_residual(g: &mut Graph, ctx: &FieldCtx) -> Vec<Expr> {
    let lap = ctx.lap(g, 0, &[0, 1]);
    let f = sine_product(g, ctx);
    vec![g.sub(lap, f)]
}

fn poisson1_exact(g: &mut Graph, ctx: &FieldCtx) -> Vec<Expr> {
    let s = sine_product(g, ctx);
    vec![g.scale(-1.0 / (2.0 * PI * PI), s)]
}

fn poisson2_forcing(g: &mut Graph, ctx: &FieldCtx) -> Expr {
    let (x0, x1) = (ctx.x(g, 0), ctx.x(g, 1));
    let a = bump(g, x1);
    let b = bump(g, x0);
    let s = g.add(a, b);
    g.scale(-2.0, s)
}

fn poisson2_residual(g: &mut Graph, ctx: &FieldCtx) -> Vec<Expr> {
    let lap = ctx.lap(g, 0, &[0, 1]);
    let f = poisson2_forcing(g, ctx);
    vec![g.sub(lap, f)]
}

fn poisson2_exact(g: &mut Graph, ctx: &FieldCtx) -> Vec<Expr> {
    let (x0, x1) = (ctx.x(g, 0), ctx.x(g, 1));
    let a = bump(g, x0);
    let b = bump(g, x1);
    vec![g.mul(a, b)]
}

fn burgers_residual(g: &mut Graph, ctx: &FieldCtx) -> Vec<Expr> {
    let w = ctx.fields[0];
    let wt = ctx.d(g, 0, 1);
    let wx = ctx.d(g, 0, 0);
    let wxx = g.derive(wx, ctx.coords[0]);
    let adv = g.mul(w, wx);
    let diff = g.scale(-BURGERS_VISCOSITY, wxx);
    vec![g.sum(&[wt, adv, diff])]
}

fn burgers_initial(g: &mut Graph, ctx: &FieldCtx) -> Expr {
    let x = ctx.x(g, 0);
    let s = sin_pi(g, x);
    g.neg(s)
}

fn gaussian_forcing(g: &mut Graph, ctx: &FieldCtx) -> Expr {
    let (x0, x1, m1) = (ctx.x(g, 0), ctx.x(g, 1), ctx.mu(g, 0));
    let a = g.sub(x0, m1);
    let b = g.sub(x1, m1);
    let a2 = g.square(a);
    let b2 = g.square(b);
    let s = g.add(a2, b2);
    let e = g.scale(-2.0, s);
    g.exp(e)
}

fn poisson_param_residual(g: &mut Graph, ctx: &FieldCtx) -> Vec<Expr> {
    let lap = ctx.lap(g, 0, &[0, 1]);
    let f = gaussian_forcing(g, ctx);
    let s = g.add(lap, f);
    vec![g.neg(s)]
}

// fields: y, u, z
fn ocp_poisson_residual(g: &mut Graph, ctx: &FieldCtx) -> Vec<Expr> {
    let [y, u, z] = [ctx.fields[0], ctx.fields[1], ctx.fields[2]];
    let (m1, m2) = (ctx.mu(g, 0), ctx.mu(g, 1));
    let lap_z = ctx.lap(g, 2, &[0, 1]);
    let lap_y = ctx.lap(g, 0, &[0, 1]);
    let adjoint = {
        let a = g.sub(y, lap_z);
        g.sub(a, m1)
    };
    let optimality = {
        let a = g.mul(m2, u);
        g.sub(a, z)
    };
    let state = {
        let a = g.neg(lap_y);
        g.sub(a, u)
    };
    vec![adjoint, optimality, state]
}

fn ocp_poisson_cost(g: &mut Graph, ctx: &FieldCtx) -> Expr {
    let (y, u) = (ctx.fields[0], ctx.fields[1]);
    let (m1, m2) = (ctx.mu(g, 0), ctx.mu(g, 1));
    let dy = g.sub(y, m1);
    let track = g.square(dy);
    let u2 = g.square(u);
    let pen = g.mul(m2, u2);
    let s = g.add(track, pen);
    g.scale(0.5, s)
}

// fields: v1, v2, p, z1, z2, r, u1, u2
const V1: usize = 0;
const V2: usize = 1;
const P: usize = 2;
const Z1: usize = 3;
const Z2: usize = 4;
const R: usize = 5;
const U1: usize = 6;
const U2: usize = 7;

/// `-nu lap(vel_k) + d_k(pressure) - rhs`
fn stokes_momentum(
    g: &mut Graph,
    ctx: &FieldCtx,
    vel: usize,
    pressure: usize,
    axis: usize,
    rhs: Expr,
) -> Expr {
    let lap = ctx.lap(g, vel, &[0, 1]);
    let visc = g.scale(-STOKES_VISCOSITY, lap);
    let dp = ctx.d(g, pressure, axis);
    let s = g.add(visc, dp);
    g.sub(s, rhs)
}

fn divergence(g: &mut Graph, ctx: &FieldCtx, a: usize, b: usize) -> Expr {
    let da = ctx.d(g, a, 0);
    let db = ctx.d(g, b, 1);
    g.add(da, db)
}

fn ocp_stokes_residual(g: &mut Graph, ctx: &FieldCtx) -> Vec<Expr> {
    let f = ctx.fields.clone();
    let x1 = ctx.x(g, 1);
    let mu = ctx.mu(g, 0);
    let zero = g.zero();

    let track = g.sub(x1, f[V1]);
    let adj1 = stokes_momentum(g, ctx, Z1, R, 0, track);
    let adj2 = stokes_momentum(g, ctx, Z2, R, 1, zero);
    let adj_div = divergence(g, ctx, Z1, Z2);
    let mut opt = Vec::new();
    for (u, z) in [(U1, Z1), (U2, Z2)] {
        let a = g.scale(STOKES_PENALTY, f[u]);
        opt.push(g.sub(a, f[z]));
    }
    let force1 = g.add(mu, f[U1]);
    let st1 = stokes_momentum(g, ctx, V1, P, 0, force1);
    let st2 = stokes_momentum(g, ctx, V2, P, 1, f[U2]);
    let st_div = divergence(g, ctx, V1, V2);
    vec![adj1, adj2, adj_div, opt[0], opt[1], st1, st2, st_div]
}

fn shear_profile(g: &mut Graph, ctx: &FieldCtx) -> Expr {
    ctx.x(g, 1)
}

/// `-pressure + nu d(vel)/dn` on the facet x0 = 1.
fn outflow(g: &mut Graph, ctx: &FieldCtx, vel: usize, pressure: usize) -> Expr {
    let dv = ctx.d(g, vel, 0);
    let s = g.scale(STOKES_VISCOSITY, dv);
    g.sub(s, ctx.fields[pressure])
}

fn state_outflow(g: &mut Graph, ctx: &FieldCtx) -> Expr {
    outflow(g, ctx, V1, P)
}

fn adjoint_outflow(g: &mut Graph, ctx: &FieldCtx) -> Expr {
    outflow(g, ctx, Z1, R)
}

fn ocp_stokes_cost(g: &mut Graph, ctx: &FieldCtx) -> Expr {
    let x1 = ctx.x(g, 1);
    let dv = g.sub(ctx.fields[V1], x1);
    let track = g.square(dv);
    let a = g.square(ctx.fields[U1]);
    let b = g.square(ctx.fields[U2]);
    let u2 = g.add(a, b);
    let pen = g.scale(STOKES_PENALTY, u2);
    let s = g.add(track, pen);
    g.scale(0.5, s)
}

fn dirichlet(
    name: &'static str,
    facets: Vec<Facet>,
    field: usize,
    value: super::ScalarFn,
) -> BoundaryCondition {
    BoundaryCondition {
        name,
        facets,
        field,
        kind: BcKind::Dirichlet(value),
    }
}

fn poisson_defaults(max_epochs: usize, features: Vec<&'static str>) -> Defaults {
    Defaults {
        hidden: vec![10, 10],
        activation: Activation::Softplus,
        lr: 0.003,
        max_epochs,
        n_interior: 100,
        interior_sampler: SamplerKind::InteriorGrid,
        n_boundary: 40,
        boundary_mode: BoundaryMode::Equispaced,
        n_mu: 1,
        mu_sampler: SamplerKind::Grid,
        features,
    }
}

/// The six experiments, in a fixed order.
pub fn catalog() -> Vec<Problem> {
    let none = BoxDomain::empty;
    vec![
        Problem {
            name: "poisson1",
            domain: square(0.0, 1.0),
            params: none(),
            fields: vec!["w"],
            residual: poisson1_residual,
            bcs: vec![dirichlet("w=0", all_facets(), 0, zero)],
            exact: Some(poisson1_exact),
            relations: vec![],
            pi_arch_base: vec![],
            cost: None,
            defaults: poisson_defaults(1000, vec![]),
        },
        Problem {
            name: "poisson2",
            domain: square(0.0, 1.0),
            params: none(),
            fields: vec!["w"],
            residual: poisson2_residual,
            bcs: vec![dirichlet("w=0", all_facets(), 0, zero)],
            exact: Some(poisson2_exact),
            relations: vec![],
            pi_arch_base: vec![],
            cost: None,
            defaults: poisson_defaults(10000, vec!["poisson2_forcing"]),
        },
        Problem {
            name: "burgers",
            domain: boxed(&[
                ("x0", -1.0, 1.0, AxisKind::Spatial),
                ("t", 0.0, 1.0, AxisKind::Temporal),
            ]),
            params: none(),
            fields: vec!["w"],
            residual: burgers_residual,
            bcs: vec![
                dirichlet("w(+-1,t)=0", vec![Facet::low(0), Facet::high(0)], 0, zero),
                dirichlet("w(x,0)=-sin(pi x)", vec![Facet::low(1)], 0, burgers_initial),
            ],
            exact: None,
            relations: vec![],
            pi_arch_base: vec![],
            cost: None,
            defaults: Defaults {
                hidden: vec![20, 10, 5],
                activation: Activation::Tanh,
                lr: 0.006,
                max_epochs: 10000,
                n_interior: 8000,
                interior_sampler: SamplerKind::LatinHypercube,
                n_boundary: 150,
                boundary_mode: BoundaryMode::UniformRandom,
                n_mu: 1,
                mu_sampler: SamplerKind::Grid,
                features: vec!["burgers_ic"],
            },
        },
        Problem {
            name: "poisson_param",
            domain: square(-1.0, 1.0),
            params: boxed(&[
                ("mu1", -1.0, 1.0, AxisKind::Parametric),
                ("mu2", -1.0, 1.0, AxisKind::Parametric),
            ]),
            fields: vec!["w"],
            residual: poisson_param_residual,
            bcs: vec![dirichlet("w=0", all_facets(), 0, zero)],
            exact: None,
            relations: vec![],
            pi_arch_base: vec![],
            cost: None,
            defaults: Defaults {
                hidden: vec![20, 20, 20],
                activation: Activation::Softplus,
                lr: 0.03,
                max_epochs: 1000,
                n_interior: 400,
                interior_sampler: SamplerKind::InteriorGrid,
                n_boundary: 80,
                boundary_mode: BoundaryMode::Equispaced,
                n_mu: 40,
                mu_sampler: SamplerKind::Grid,
                features: vec!["parametric_gaussian"],
            },
        },
        Problem {
            name: "ocp_poisson",
            domain: square(-1.0, 1.0),
            params: boxed(&[
                ("mu1", 0.5, 3.0, AxisKind::Parametric),
                ("mu2", 0.01, 1.0, AxisKind::Parametric),
            ]),
            fields: vec!["y", "u", "z"],
            residual: ocp_poisson_residual,
            bcs: vec![
                dirichlet("y=0", all_facets(), 0, zero),
                dirichlet("z=0", all_facets(), 2, zero),
            ],
            exact: None,
            relations: vec![Relation {
                output: "z",
                expr: "mu2*u",
            }],
            pi_arch_base: vec!["u", "y"],
            cost: Some(ocp_poisson_cost),
            defaults: Defaults {
                hidden: vec![40, 40, 20],
                activation: Activation::Softplus,
                lr: 0.002,
                max_epochs: 10000,
                n_interior: 900,
                interior_sampler: SamplerKind::InteriorGrid,
                n_boundary: 200,
                boundary_mode: BoundaryMode::Equispaced,
                n_mu: 50,
                mu_sampler: SamplerKind::Grid,
                features: vec!["ocp_bubble"],
            },
        },
        Problem {
            name: "ocp_stokes",
            domain: boxed(&[
                ("x0", 0.0, 1.0, AxisKind::Spatial),
                ("x1", 0.0, 2.0, AxisKind::Spatial),
            ]),
            params: boxed(&[("mu1", 0.5, 1.5, AxisKind::Parametric)]),
            fields: vec!["v1", "v2", "p", "z1", "z2", "r", "u1", "u2"],
            residual: ocp_stokes_residual,
            bcs: {
                let inflow = Facet::low(0);
                let out = Facet::high(0);
                let walls = [Facet::low(1), Facet::high(1)];
                let dirichlet_part = vec![inflow, walls[0], walls[1]];
                vec![
                    dirichlet("v1=x1", dirichlet_part.clone(), V1, shear_profile),
                    dirichlet("v2=0", all_facets(), V2, zero),
                    BoundaryCondition {
                        name: "-p+0.1 dv1/dn=0",
                        facets: vec![out],
                        field: V1,
                        kind: BcKind::Neumann(state_outflow),
                    },
                    dirichlet("z1=0", dirichlet_part, Z1, zero),
                    dirichlet("z2=0", all_facets(), Z2, zero),
                    BoundaryCondition {
                        name: "-r+0.1 dz1/dn=0",
                        facets: vec![out],
                        field: Z1,
                        kind: BcKind::Neumann(adjoint_outflow),
                    },
                ]
            },
            exact: None,
            relations: vec![
                Relation {
                    output: "z1",
                    expr: "0.008*u1",
                },
                Relation {
                    output: "z2",
                    expr: "0.008*u2",
                },
            ],
            pi_arch_base: vec!["v1", "v2", "p", "r", "u1", "u2"],
            cost: Some(ocp_stokes_cost),
            defaults: Defaults {
                hidden: vec![40, 40, 40, 40],
                activation: Activation::Softplus,
                lr: 0.003,
                max_epochs: 10000,
                n_interior: 400,
                interior_sampler: SamplerKind::LatinHypercube,
                n_boundary: 1800,
                boundary_mode: BoundaryMode::UniformRandom,
                n_mu: 10,
                mu_sampler: SamplerKind::LatinHypercube,
                features: vec![],
            },
        },
    ]
}
