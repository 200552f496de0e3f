//! Loss assembly and training.
//!
//! The global loss averages, over parameter samples, the boundary loss
//! (per condition, the mean squared mismatch over that condition's points)
//! plus the residual loss (per equation, the mean squared residual over the
//! interior points). Every term becomes a per-point weight, so the whole
//! loss is one weighted sum of squares per compiled program.

mod adam;

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{adam_step, AdamState};

use crate::autodiff::{Exec, Expr, Graph, PointBatch, Program, VarId};
use crate::piarch::{ComposedModel, PiArchError};
use crate::problems::{FieldCtx, Problem, ProblemError};
use crate::sampling::{
    boundary_sample, cartesian_grid, grid_shape, interior_grid, latin_hypercube, rng_stream,
    uniform_random, BoundaryMode, BoxDomain, Facet, PointSet, SamplerKind, SamplingError,
};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Model(#[from] PiArchError),
    #[error("boundary condition '{0}' has no sample points")]
    EmptyCondition(String),
    #[error("model fields {model:?} do not match problem fields {problem:?}")]
    FieldMismatch {
        model: Vec<String>,
        problem: Vec<String>,
    },
    #[error("writing loss history: {0}")]
    Csv(#[from] csv::Error),
}

/// How spatial points are combined with parameter samples.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MuPairing {
    /// Every point at every parameter sample.
    #[default]
    Tensor,
    /// Each point is assigned to one parameter sample (round robin over a
    /// seeded shuffle); per-sample means are kept.
    Paired,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingPlan {
    pub interior: SamplerKind,
    pub n_interior: usize,
    pub boundary: BoundaryMode,
    pub n_boundary: usize,
    pub mu: SamplerKind,
    pub n_mu: usize,
    /// Points per parameter axis for the grid samplers; chosen by
    /// `grid_shape` when absent.
    pub mu_shape: Option<Vec<usize>>,
    pub pairing: MuPairing,
    pub seed: u64,
}

impl SamplingPlan {
    /// The problem's reported sampling, with the given seed.
    pub fn defaults(problem: &Problem, seed: u64) -> Self {
        let d = &problem.defaults;
        SamplingPlan {
            interior: d.interior_sampler,
            n_interior: d.n_interior,
            boundary: d.boundary_mode,
            n_boundary: d.n_boundary,
            mu: d.mu_sampler,
            n_mu: d.n_mu,
            mu_shape: None,
            pairing: MuPairing::Tensor,
            seed,
        }
    }
}

/// Samples `n` points of `domain` with `kind`.
pub fn sample_box(
    domain: &BoxDomain,
    kind: SamplerKind,
    n: usize,
    seed: u64,
) -> Result<PointSet, SamplingError> {
    match kind {
        SamplerKind::Grid => cartesian_grid(domain, &grid_shape(domain, n)),
        SamplerKind::InteriorGrid => interior_grid(domain, &grid_shape(domain, n)),
        SamplerKind::LatinHypercube => latin_hypercube(domain, n, seed),
        SamplerKind::UniformRandom => uniform_random(domain, n, seed),
    }
}

/// Collocation points of one training problem.
#[derive(Clone, Debug, PartialEq)]
pub struct LossSpec {
    pub interior: PointSet,
    /// One set per boundary condition, in problem order.
    pub boundary: Vec<PointSet>,
    /// Parameter samples; the single empty point for non-parametric problems.
    pub mu: PointSet,
    pub pairing: MuPairing,
    pub seed: u64,
}

impl LossSpec {
    pub fn sample(problem: &Problem, plan: &SamplingPlan) -> Result<Self, TrainingError> {
        let interior = sample_box(&problem.domain, plan.interior, plan.n_interior, plan.seed)?;
        let mut facets: Vec<Facet> = problem.bcs.iter().flat_map(|b| b.facets.clone()).collect();
        facets.sort();
        facets.dedup();
        let all = boundary_sample(
            &problem.domain,
            plan.n_boundary,
            plan.boundary,
            plan.seed,
            &facets,
        )?;
        let mut boundary = Vec::with_capacity(problem.bcs.len());
        for bc in &problem.bcs {
            let rows: Vec<Vec<f64>> = all
                .iter()
                .filter(|p| {
                    bc.facets
                        .iter()
                        .any(|&f| problem.domain.on_facet(p, f, 0.0))
                })
                .map(|p| p.to_vec())
                .collect();
            if rows.is_empty() {
                return Err(TrainingError::EmptyCondition(bc.name.to_string()));
            }
            boundary.push(PointSet::from_rows(
                problem.domain.clone(),
                &rows,
                all.sampler,
                plan.seed,
            ));
        }
        let mu = if problem.is_parametric() {
            match (&plan.mu_shape, plan.mu) {
                (Some(shape), SamplerKind::Grid) => cartesian_grid(&problem.params, shape)?,
                (Some(shape), SamplerKind::InteriorGrid) => interior_grid(&problem.params, shape)?,
                _ => sample_box(&problem.params, plan.mu, plan.n_mu, plan.seed)?,
            }
        } else {
            PointSet::singleton_empty()
        };
        Ok(LossSpec {
            interior,
            boundary,
            mu,
            pairing: plan.pairing,
            seed: plan.seed,
        })
    }

    /// Same points, a different parameter set.
    pub fn with_mu(&self, mu: PointSet) -> Self {
        LossSpec { mu, ..self.clone() }
    }
}

/// Rows `[x, mu]` and weights realizing `(1/N_mu) sum_i (1/N_i) sum_k`.
fn weighted_rows(
    points: &PointSet,
    mu: &PointSet,
    pairing: MuPairing,
    seed: u64,
    stream: u64,
) -> (Vec<f64>, Vec<f64>) {
    let n_mu = mu.len();
    let mut coords = Vec::new();
    let mut weights = Vec::new();
    match pairing {
        MuPairing::Tensor => {
            let w = 1.0 / (n_mu as f64 * points.len() as f64);
            for m in mu.iter() {
                for p in points.iter() {
                    coords.extend_from_slice(p);
                    coords.extend_from_slice(m);
                    weights.push(w);
                }
            }
        }
        MuPairing::Paired => {
            let mut order: Vec<usize> = (0..points.len()).collect();
            order.shuffle(&mut rng_stream(seed, stream));
            let mut group = vec![0; points.len()];
            for (pos, &k) in order.iter().enumerate() {
                group[k] = pos % n_mu;
            }
            let mut counts = vec![0usize; n_mu];
            for &gi in &group {
                counts[gi] += 1;
            }
            for (k, p) in points.iter().enumerate() {
                coords.extend_from_slice(p);
                coords.extend_from_slice(mu.point(group[k]));
                weights.push(1.0 / (n_mu as f64 * counts[group[k]] as f64));
            }
        }
    }
    (coords, weights)
}

struct Term {
    program: Program,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl Term {
    fn batch(&self) -> PointBatch<'_> {
        PointBatch::new(&self.coords, self.program.n_inputs(), &self.weights)
    }
}

/// Loss components at one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub mse_b: f64,
    pub mse_p: f64,
    /// Residual contribution of each equation.
    pub per_equation: Vec<f64>,
    /// Boundary contribution of each condition.
    pub per_condition: Vec<f64>,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.mse_b + self.mse_p
    }
}

/// A model's global loss, compiled for repeated evaluation.
pub struct CompiledLoss {
    interior: Term,
    boundary: Vec<Term>,
    n_params: usize,
    pub exec: Exec,
}

impl CompiledLoss {
    pub fn new(
        problem: &Problem,
        model: &ComposedModel,
        spec: &LossSpec,
    ) -> Result<Self, TrainingError> {
        if model.fields() != problem.fields.as_slice() {
            return Err(TrainingError::FieldMismatch {
                model: model.fields().to_vec(),
                problem: problem.fields.iter().map(|s| s.to_string()).collect(),
            });
        }
        Self::from_fields(problem, spec, &model.param_ids(), |g, raw, _| {
            Ok(model.forward_graph(g, raw)?)
        })
    }

    /// Loss of the problem's closed-form solution; `None` without one.
    pub fn for_exact(problem: &Problem, spec: &LossSpec) -> Option<Result<Self, TrainingError>> {
        let exact = problem.exact?;
        Some(Self::from_fields(problem, spec, &[], |g, _, ctx| {
            Ok(exact(g, ctx))
        }))
    }

    /// Loss of whatever fields `build` produces from the raw input graphs
    /// (coordinates then parameters), with `params` as the trainable
    /// variables.
    pub fn from_fields(
        problem: &Problem,
        spec: &LossSpec,
        params: &[VarId],
        build: impl FnOnce(&mut Graph, &[Expr], &FieldCtx) -> Result<Vec<Expr>, TrainingError>,
    ) -> Result<Self, TrainingError> {
        let mut g = Graph::new();
        let coords: Vec<VarId> = (0..problem.domain.dim()).map(|_| VarId::fresh()).collect();
        let mu: Vec<VarId> = (0..problem.params.dim()).map(|_| VarId::fresh()).collect();
        let inputs: Vec<VarId> = coords.iter().chain(&mu).copied().collect();
        let raw: Vec<Expr> = inputs.iter().map(|&v| g.var(v)).collect();
        let mut ctx = FieldCtx {
            fields: Vec::new(),
            coords,
            mu,
        };
        ctx.fields = build(&mut g, &raw, &ctx)?;
        let residuals = problem.residual_exprs(&mut g, &ctx)?;
        let mismatches = problem.boundary_exprs(&mut g, &ctx)?;
        let compile = |roots: &[Expr]| {
            Program::compile(&g, roots, &inputs, params)
                .expect("loss graphs only use inputs and parameters")
        };
        let (ic, iw) = weighted_rows(&spec.interior, &spec.mu, spec.pairing, spec.seed, 10);
        let interior = Term {
            program: compile(&residuals),
            coords: ic,
            weights: iw,
        };
        let boundary = mismatches
            .iter()
            .zip(&spec.boundary)
            .enumerate()
            .map(|(l, (&m, pts))| {
                let (c, w) = weighted_rows(pts, &spec.mu, spec.pairing, spec.seed, 11 + l as u64);
                Term {
                    program: compile(&[m]),
                    coords: c,
                    weights: w,
                }
            })
            .collect();
        Ok(CompiledLoss {
            interior,
            boundary,
            n_params: params.len(),
            exec: Exec::default(),
        })
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Number of weighted point evaluations per loss call.
    pub fn n_rows(&self) -> usize {
        self.interior.weights.len() + self.boundary.iter().map(|t| t.weights.len()).sum::<usize>()
    }

    pub fn evaluate(&self, params: &[f64]) -> LossBreakdown {
        let per_equation =
            self.interior
                .program
                .squared_loss(params, &self.interior.batch(), self.exec);
        let per_condition: Vec<f64> = self
            .boundary
            .iter()
            .map(|t| t.program.squared_loss(params, &t.batch(), self.exec)[0])
            .collect();
        LossBreakdown {
            mse_b: per_condition.iter().sum(),
            mse_p: per_equation.iter().sum(),
            per_equation,
            per_condition,
        }
    }

    pub fn evaluate_with_grad(&self, params: &[f64]) -> (LossBreakdown, Vec<f64>) {
        let inner =
            self.interior
                .program
                .squared_loss_grad(params, &self.interior.batch(), self.exec);
        let mut grad = inner.grad;
        let mut per_condition = Vec::with_capacity(self.boundary.len());
        for t in &self.boundary {
            let b = t.program.squared_loss_grad(params, &t.batch(), self.exec);
            for (g, d) in grad.iter_mut().zip(&b.grad) {
                *g += d;
            }
            per_condition.push(b.per_root[0]);
        }
        let breakdown = LossBreakdown {
            mse_b: per_condition.iter().sum(),
            mse_p: inner.per_root.iter().sum(),
            per_equation: inner.per_root,
            per_condition,
        };
        (breakdown, grad)
    }
}

fn single_mu(spec: &LossSpec, problem: &Problem, mu: &[f64]) -> LossSpec {
    let set = if problem.is_parametric() {
        PointSet::from_rows(problem.params.clone(), &[mu.to_vec()], SamplerKind::Grid, 0)
    } else {
        PointSet::singleton_empty()
    };
    LossSpec {
        pairing: MuPairing::Tensor,
        ..spec.with_mu(set)
    }
}

/// Boundary loss at one parameter value.
pub fn boundary_loss(
    model: &ComposedModel,
    problem: &Problem,
    spec: &LossSpec,
    mu: &[f64],
) -> Result<f64, TrainingError> {
    let c = CompiledLoss::new(problem, model, &single_mu(spec, problem, mu))?;
    Ok(c.evaluate(&model.params()).mse_b)
}

/// Residual loss at one parameter value.
pub fn residual_loss(
    model: &ComposedModel,
    problem: &Problem,
    spec: &LossSpec,
    mu: &[f64],
) -> Result<f64, TrainingError> {
    let c = CompiledLoss::new(problem, model, &single_mu(spec, problem, mu))?;
    Ok(c.evaluate(&model.params()).mse_p)
}

/// Boundary plus residual loss, averaged over the parameter samples.
pub fn global_loss(
    model: &ComposedModel,
    problem: &Problem,
    spec: &LossSpec,
) -> Result<f64, TrainingError> {
    let c = CompiledLoss::new(problem, model, spec)?;
    Ok(c.evaluate(&model.params()).total())
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub mse_b: f64,
    pub mse_p: f64,
    pub total: f64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxEpochs,
    LossTolerance,
    Diverged,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub lr: f64,
    pub max_epochs: usize,
    pub loss_tol: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRun {
    /// Loss at the start of each executed epoch (before its update).
    pub history: Vec<LossRecord>,
    /// Cumulative wall-clock milliseconds at the end of each epoch.
    pub wall_ms: Vec<f64>,
    /// Loss of the returned parameters.
    pub final_loss: LossRecord,
    pub params: Vec<f64>,
    pub termination: Termination,
}

impl TrainRun {
    pub fn epochs(&self) -> usize {
        self.history.len()
    }

    /// First epoch whose loss is at or below `tol`.
    pub fn epochs_to(&self, tol: f64) -> Option<usize> {
        self.history
            .iter()
            .chain(std::iter::once(&self.final_loss))
            .find(|r| r.total <= tol)
            .map(|r| r.epoch)
    }

    /// `epoch,mse_b,mse_p,total`, one row per history entry.
    pub fn write_loss_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.history {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `epoch,wall_ms`.
    pub fn write_timing_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "wall_ms"])?;
        for (r, ms) in self.history.iter().zip(&self.wall_ms) {
            w.write_record([r.epoch.to_string(), format!("{ms:.3}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn record(epoch: usize, b: &LossBreakdown) -> LossRecord {
    LossRecord {
        epoch,
        mse_b: b.mse_b,
        mse_p: b.mse_p,
        total: b.total(),
    }
}

/// Full-batch Adam until `max_epochs` or the loss reaches `loss_tol`.
/// `on_epoch` sees every history record as it is produced.
pub fn train_with(
    model: &mut ComposedModel,
    loss: &CompiledLoss,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&LossRecord),
) -> TrainRun {
    let mut params = model.params();
    let mut adam = AdamState::new(params.len(), opts.lr);
    let mut history = Vec::with_capacity(opts.max_epochs);
    let mut wall_ms = Vec::with_capacity(opts.max_epochs);
    let start = Instant::now();
    let mut termination = Termination::MaxEpochs;
    let mut final_loss = None;
    for epoch in 1..=opts.max_epochs {
        let (b, grad) = loss.evaluate_with_grad(&params);
        let rec = record(epoch, &b);
        history.push(rec);
        wall_ms.push(start.elapsed().as_secs_f64() * 1e3);
        on_epoch(&rec);
        if !rec.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            termination = Termination::Diverged;
            final_loss = Some(rec);
            break;
        }
        if opts.loss_tol.is_some_and(|tol| rec.total <= tol) {
            termination = Termination::LossTolerance;
            final_loss = Some(rec);
            break;
        }
        adam.step(&mut params, &grad);
    }
    let final_loss =
        final_loss.unwrap_or_else(|| record(history.len() + 1, &loss.evaluate(&params)));
    model
        .set_params(&params)
        .expect("parameter count is fixed during training");
    TrainRun {
        history,
        wall_ms,
        final_loss,
        params,
        termination,
    }
}

pub fn train(model: &mut ComposedModel, loss: &CompiledLoss, opts: &TrainOptions) -> TrainRun {
    train_with(model, loss, opts, |_| {})
}
