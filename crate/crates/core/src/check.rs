//! Invariant self-test: fast checks of derivatives, exact solutions, the
//! grid oracle and untrained composed models. Backs the `check` command.

use rand::Rng;

use crate::autodiff::{Bindings, Graph, Unary, VarId};
use crate::experiment::config::{preset, PRESETS};
use crate::experiment::{build_model, evaluation_grid, Architecture};
use crate::features::FeatureSet;
use crate::network::{Activation, NetworkSpec};
use crate::piarch::{relation_violation, ComposedModel};
use crate::problems::{catalog, FieldCtx, Problem};
use crate::reference::{oracle, GridSolution};
use crate::sampling::{latin_hypercube, rng_stream};
use crate::training::{CompiledLoss, LossSpec, MuPairing, SamplingPlan};

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, passed: bool, detail: String) -> Self {
        CheckOutcome {
            name: name.into(),
            passed,
            detail,
        }
    }
}

fn relative_gap(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// First and second derivatives of every elementwise function at `n`
/// random points against central differences of the level below.
pub fn activation_gradients(n: usize, seed: u64) -> CheckOutcome {
    let ops = [
        Unary::Exp,
        Unary::Ln,
        Unary::Sin,
        Unary::Cos,
        Unary::Tanh,
        Unary::Softplus,
        Unary::Sigmoid,
    ];
    let mut rng = rng_stream(seed, 20);
    let mut worst = 0.0_f64;
    for op in ops {
        let mut g = Graph::new();
        let (x, xe) = g.new_var();
        let f = g.unary(op, xe);
        let d1 = g.derive(f, x);
        let d2 = g.derive(d1, x);
        for _ in 0..n {
            let at = if op == Unary::Ln {
                rng.random_range(0.2..4.0)
            } else {
                rng.random_range(-4.0..4.0)
            };
            let eval = |e, v: f64| g.evaluate(e, &Bindings::new().with(x, v)).expect("bound");
            for (lower, upper) in [(f, d1), (d1, d2)] {
                let fd = (eval(lower, at + FD_STEP) - eval(lower, at - FD_STEP)) / (2.0 * FD_STEP);
                worst = worst.max(relative_gap(fd, eval(upper, at), 1.0));
            }
        }
    }
    CheckOutcome::new(
        "activation derivatives",
        worst <= FD_REL_TOL,
        format!(
            "worst relative gap {worst:.2e} over {} points",
            n * ops.len()
        ),
    )
}

fn small_model(p: &Problem, act: Activation, seed: u64) -> ComposedModel {
    let spec = NetworkSpec {
        inputs: p.n_inputs(),
        hidden: vec![4, 3],
        outputs: p.fields.len(),
        activation: act,
        seed,
    };
    ComposedModel::flat(spec, &p.fields, &p.input_names(), FeatureSet::empty())
        .expect("valid model")
}

/// Every problem residual of a random small network, differentiated with
/// respect to coordinates, parameters and weights, at `n` random
/// configurations per problem.
pub fn residual_gradients(n: usize, seed: u64) -> CheckOutcome {
    let mut rng = rng_stream(seed, 21);
    let mut worst = 0.0_f64;
    let mut count = 0;
    for p in catalog() {
        for k in 0..n {
            let act = if k % 2 == 0 {
                Activation::Tanh
            } else {
                Activation::Softplus
            };
            let model = small_model(&p, act, seed.wrapping_add(k as u64));
            let mut g = Graph::new();
            let coords: Vec<VarId> = (0..p.domain.dim()).map(|_| VarId::fresh()).collect();
            let mu: Vec<VarId> = (0..p.params.dim()).map(|_| VarId::fresh()).collect();
            let raw: Vec<_> = coords.iter().chain(&mu).map(|&v| g.var(v)).collect();
            let fields = model.forward_graph(&mut g, &raw).expect("model graph");
            let ctx = FieldCtx { fields, coords, mu };
            let residuals = p.residual_exprs(&mut g, &ctx).expect("arity matches");
            let mut bind = Bindings::new();
            for (ax, v) in p.domain.axes().iter().zip(&ctx.coords) {
                bind.set(*v, rng.random_range(ax.low..ax.high));
            }
            for (ax, v) in p.params.axes().iter().zip(&ctx.mu) {
                bind.set(*v, rng.random_range(ax.low..ax.high));
            }
            for (id, val) in model.param_ids().iter().zip(model.params()) {
                bind.set(*id, val);
            }
            for r in residuals {
                let vars = g.free_vars(&[r]);
                let grad = g.gradient(r, &vars, &bind).expect("bound");
                let scale = grad.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
                let gap = g.fd_check(r, &bind, FD_STEP).expect("bound");
                worst = worst.max(gap / scale);
                count += 1;
            }
        }
    }
    CheckOutcome::new(
        "residual derivatives",
        worst <= FD_REL_TOL,
        format!("worst relative gap {worst:.2e} over {count} residuals"),
    )
}

/// Gradient of the global loss with respect to every trainable parameter,
/// `n` configurations spread over the problems.
pub fn loss_gradients(n: usize, seed: u64) -> CheckOutcome {
    let problems = catalog();
    let mut worst = 0.0_f64;
    let mut checked = 0;
    for k in 0..n {
        let p = &problems[k % problems.len()];
        let pairing = if k % 2 == 0 {
            MuPairing::Tensor
        } else {
            MuPairing::Paired
        };
        let plan = SamplingPlan {
            n_interior: 10,
            n_boundary: 12,
            n_mu: if p.is_parametric() { 3 } else { 1 },
            mu_shape: None,
            pairing,
            ..SamplingPlan::defaults(p, seed.wrapping_add(k as u64))
        };
        let spec = LossSpec::sample(p, &plan).expect("small plans sample");
        let act = if k % 3 == 0 {
            Activation::Tanh
        } else {
            Activation::Softplus
        };
        let model = small_model(p, act, seed.wrapping_add(100 + k as u64));
        let loss = CompiledLoss::new(p, &model, &spec).expect("compiles");
        let params = model.params();
        let (_, grad) = loss.evaluate_with_grad(&params);
        for i in 0..params.len() {
            let mut x = params.clone();
            x[i] += FD_STEP;
            let hi = loss.evaluate(&x).total();
            x[i] -= 2.0 * FD_STEP;
            let lo = loss.evaluate(&x).total();
            let fd = (hi - lo) / (2.0 * FD_STEP);
            worst = worst.max(relative_gap(fd, grad[i], 1e-3));
            checked += 1;
        }
    }
    CheckOutcome::new(
        "loss gradients",
        worst <= FD_REL_TOL,
        format!("worst relative gap {worst:.2e} over {checked} partials in {n} configurations"),
    )
}

/// Closed-form solutions give (numerically) zero residual and boundary loss.
pub fn exact_solution_losses() -> Vec<CheckOutcome> {
    ["poisson1", "poisson2"]
        .iter()
        .map(|name| {
            let p = Problem::by_name(name).expect("catalog problem");
            let spec =
                LossSpec::sample(&p, &SamplingPlan::defaults(&p, 1)).expect("defaults sample");
            let loss = CompiledLoss::for_exact(&p, &spec)
                .expect("problem has a closed form")
                .expect("closed form compiles");
            let b = loss.evaluate(&[]);
            CheckOutcome::new(
                format!("{name} exact solution loss"),
                b.mse_p < 1e-14 && b.mse_b < 1e-20,
                format!("residual {:.2e}, boundary {:.2e}", b.mse_p, b.mse_b),
            )
        })
        .collect()
}

fn max_gap(sol: &GridSolution, points: &[f64], exact: impl Fn(&[f64]) -> f64) -> f64 {
    points.chunks(2).fold(0.0_f64, |m, x| {
        let v = sol.interpolate(x).expect("point inside the box")[0];
        m.max((v - exact(x)).abs())
    })
}

/// Node and evaluation-grid errors of the oracle on the closed-form
/// problems at `n` and `2n - 1` nodes per axis.
pub struct OracleConvergence {
    pub problem: &'static str,
    pub node_errors: [f64; 2],
    pub grid_errors: [f64; 2],
}

impl OracleConvergence {
    pub fn node_ratio(&self) -> f64 {
        self.node_errors[0] / self.node_errors[1]
    }

    pub fn grid_ratio(&self) -> f64 {
        self.grid_errors[0] / self.grid_errors[1]
    }
}

pub fn oracle_convergence(n: usize) -> Vec<OracleConvergence> {
    ["poisson1", "poisson2"]
        .into_iter()
        .map(|name| {
            let p = Problem::by_name(name).expect("catalog problem");
            let exact = |x: &[f64]| p.exact_solution(x, &[]).expect("closed form")[0];
            let eval_points = evaluation_grid(&p, 50);
            let mut node_errors = [0.0; 2];
            let mut grid_errors = [0.0; 2];
            for (k, nodes) in [n, 2 * n - 1].into_iter().enumerate() {
                let sol = oracle(name, &[], nodes).expect("oracle solves");
                let node_points: Vec<f64> = (0..nodes)
                    .flat_map(|i| (0..nodes).flat_map(move |j| [i, j]))
                    .map(|i| sol.node(i))
                    .collect();
                node_errors[k] = max_gap(&sol, &node_points, exact);
                grid_errors[k] = max_gap(&sol, &eval_points, exact);
            }
            OracleConvergence {
                problem: p.name,
                node_errors,
                grid_errors,
            }
        })
        .collect()
}

/// Untrained composed models satisfy their relations exactly; flat ones do
/// not.
pub fn untrained_relations() -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    for name in [
        "ocp_poisson",
        "ocp_stokes",
        "ocp_poisson_flat",
        "ocp_stokes_flat",
    ] {
        let mut exp = preset(name).expect("shipped preset");
        exp.network.hidden = vec![8, 8];
        let model = build_model(&exp).expect("preset builds");
        let p = exp.problem();
        let mut box_axes = p.domain.axes().to_vec();
        box_axes.extend(p.params.axes().iter().cloned());
        let b = crate::sampling::BoxDomain::new(box_axes).expect("valid box");
        let pts = latin_hypercube(&b, 200, 3).expect("sample");
        let v = relation_violation(&model, &p, pts.coords()).expect("relations build");
        let composed = exp.architecture == Architecture::PiArch;
        out.push(CheckOutcome::new(
            format!("{name} relation violation"),
            if composed { v == 0.0 } else { v > 0.0 },
            format!("{v:.3e}"),
        ));
    }
    out
}

pub fn presets_validate() -> CheckOutcome {
    let bad: Vec<&str> = PRESETS
        .iter()
        .filter(|(_, src)| crate::experiment::Experiment::from_toml(src).is_err())
        .map(|(n, _)| *n)
        .collect();
    CheckOutcome::new(
        "shipped presets validate",
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} presets", PRESETS.len())
        } else {
            format!("invalid: {}", bad.join(", "))
        },
    )
}

/// The whole self-test.
pub fn self_test() -> Vec<CheckOutcome> {
    let mut out = vec![
        activation_gradients(100, 1),
        residual_gradients(17, 2),
        loss_gradients(100, 3),
    ];
    out.extend(exact_solution_losses());
    for c in oracle_convergence(65) {
        let passed = match c.problem {
            // the 5-point stencil is exact on quadratics
            "poisson2" => c.node_errors.iter().all(|e| *e < 1e-12) && c.grid_ratio() >= 3.5,
            _ => c.node_ratio() >= 3.5 && c.grid_ratio() >= 3.5,
        };
        out.push(CheckOutcome::new(
            format!("{} oracle convergence", c.problem),
            passed,
            format!(
                "node errors {:.2e} -> {:.2e}, grid errors {:.2e} -> {:.2e} (ratio {:.2})",
                c.node_errors[0],
                c.node_errors[1],
                c.grid_errors[0],
                c.grid_errors[1],
                c.grid_ratio()
            ),
        ));
    }
    out.extend(untrained_relations());
    out.push(presets_validate());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_test_passes() {
        for c in self_test() {
            println!("{}: {}", c.name, c.detail);
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
