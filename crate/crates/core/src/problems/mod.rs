//! Problem catalog: domains, residual operators, boundary conditions,
//! closed-form solutions and the optimality relations of the control
//! problems.

mod catalog;

use thiserror::Error;

use crate::autodiff::{Bindings, Expr, Graph, VarId};
use crate::network::Activation;
use crate::sampling::{BoundaryMode, BoxDomain, Facet, SamplerKind};

pub use catalog::{catalog, STOKES_PENALTY, STOKES_VISCOSITY};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("unknown problem '{0}'")]
    Unknown(String),
    #[error("{what}: expected {expected}, got {got}")]
    Arity {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Graph handles a residual or boundary builder works with: one expression
/// per field (in problem order) and the coordinate and parameter variables.
#[derive(Clone, Debug)]
pub struct FieldCtx {
    pub fields: Vec<Expr>,
    pub coords: Vec<VarId>,
    pub mu: Vec<VarId>,
}

impl FieldCtx {
    pub fn x(&self, g: &mut Graph, axis: usize) -> Expr {
        g.var(self.coords[axis])
    }

    pub fn mu(&self, g: &mut Graph, k: usize) -> Expr {
        g.var(self.mu[k])
    }

    /// First derivative of field `f` along coordinate `axis`.
    pub fn d(&self, g: &mut Graph, f: usize, axis: usize) -> Expr {
        g.derive(self.fields[f], self.coords[axis])
    }

    /// Laplacian of field `f` over the spatial axes `axes`.
    pub fn lap(&self, g: &mut Graph, f: usize, axes: &[usize]) -> Expr {
        let vars: Vec<VarId> = axes.iter().map(|&a| self.coords[a]).collect();
        g.laplacian(self.fields[f], &vars)
    }
}

pub type ResidualFn = fn(&mut Graph, &FieldCtx) -> Vec<Expr>;
pub type ScalarFn = fn(&mut Graph, &FieldCtx) -> Expr;

#[derive(Copy, Clone, Debug)]
pub enum BcKind {
    /// Prescribed field value.
    Dirichlet(ScalarFn),
    /// Flux mismatch built from field derivatives; zero when satisfied.
    Neumann(ScalarFn),
}

#[derive(Clone, Debug)]
pub struct BoundaryCondition {
    pub name: &'static str,
    pub facets: Vec<Facet>,
    /// Index of the constrained field.
    pub field: usize,
    pub kind: BcKind,
}

impl BoundaryCondition {
    /// The quantity whose square enters the boundary loss.
    pub fn mismatch(&self, g: &mut Graph, ctx: &FieldCtx) -> Expr {
        match self.kind {
            BcKind::Dirichlet(value) => {
                let v = value(g, ctx);
                g.sub(ctx.fields[self.field], v)
            }
            BcKind::Neumann(flux) => flux(g, ctx),
        }
    }
}

/// A closed-form relation `output = expr(inputs)`, written in the feature
/// expression language over field, coordinate and parameter names.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Relation {
    pub output: &'static str,
    pub expr: &'static str,
}

/// Hyperparameters the experiments were reported with.
#[derive(Clone, Debug, PartialEq)]
pub struct Defaults {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr: f64,
    pub max_epochs: usize,
    pub n_interior: usize,
    pub interior_sampler: SamplerKind,
    pub n_boundary: usize,
    pub boundary_mode: BoundaryMode,
    pub n_mu: usize,
    pub mu_sampler: SamplerKind,
    pub features: Vec<&'static str>,
}

#[derive(Clone, Debug)]
pub struct Problem {
    pub name: &'static str,
    /// Space (and time) box; axis names are the coordinate input names.
    pub domain: BoxDomain,
    /// Parameter box; empty for non-parametric problems.
    pub params: BoxDomain,
    pub fields: Vec<&'static str>,
    pub residual: ResidualFn,
    pub bcs: Vec<BoundaryCondition>,
    /// Closed-form solution, one expression per field.
    pub exact: Option<ResidualFn>,
    /// Optimality relations a composed model can hardwire.
    pub relations: Vec<Relation>,
    /// Fields the base network predicts when the relations are hardwired.
    pub pi_arch_base: Vec<&'static str>,
    /// Pointwise integrand of the control cost functional.
    pub cost: Option<ScalarFn>,
    pub defaults: Defaults,
}

impl Problem {
    pub fn by_name(name: &str) -> Result<Problem, ProblemError> {
        catalog()
            .into_iter()
            .find(|p| p.name == name)
            .ok_or_else(|| ProblemError::Unknown(name.to_string()))
    }

    pub fn coord_names(&self) -> Vec<&str> {
        self.domain.axes().iter().map(|a| a.name.as_str()).collect()
    }

    pub fn mu_names(&self) -> Vec<&str> {
        self.params.axes().iter().map(|a| a.name.as_str()).collect()
    }

    /// Coordinates followed by parameters: the raw network input.
    pub fn input_names(&self) -> Vec<&str> {
        let mut v = self.coord_names();
        v.extend(self.mu_names());
        v
    }

    pub fn n_inputs(&self) -> usize {
        self.domain.dim() + self.params.dim()
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| *f == name)
    }

    pub fn is_parametric(&self) -> bool {
        self.params.dim() > 0
    }

    fn check_ctx(&self, ctx: &FieldCtx) -> Result<(), ProblemError> {
        let checks = [
            ("field count", self.fields.len(), ctx.fields.len()),
            ("coordinate count", self.domain.dim(), ctx.coords.len()),
            ("parameter count", self.params.dim(), ctx.mu.len()),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(ProblemError::Arity {
                    what,
                    expected,
                    got,
                });
            }
        }
        Ok(())
    }

    /// One residual graph per equation.
    pub fn residual_exprs(&self, g: &mut Graph, ctx: &FieldCtx) -> Result<Vec<Expr>, ProblemError> {
        self.check_ctx(ctx)?;
        Ok((self.residual)(g, ctx))
    }

    /// Boundary mismatch graphs, one per condition.
    pub fn boundary_exprs(&self, g: &mut Graph, ctx: &FieldCtx) -> Result<Vec<Expr>, ProblemError> {
        self.check_ctx(ctx)?;
        Ok(self.bcs.iter().map(|bc| bc.mismatch(g, ctx)).collect())
    }

    /// Closed-form field expressions in terms of fresh coordinate and
    /// parameter variables.
    pub fn exact_exprs(&self, g: &mut Graph) -> Option<FieldCtx> {
        let exact = self.exact?;
        let mut ctx = FieldCtx {
            fields: Vec::new(),
            coords: (0..self.domain.dim()).map(|_| VarId::fresh()).collect(),
            mu: (0..self.params.dim()).map(|_| VarId::fresh()).collect(),
        };
        ctx.fields = exact(g, &ctx);
        Some(ctx)
    }

    /// Closed-form solution at `(x, mu)`, when one is known.
    pub fn exact_solution(&self, x: &[f64], mu: &[f64]) -> Option<Vec<f64>> {
        let mut g = Graph::new();
        let ctx = self.exact_exprs(&mut g)?;
        let mut b = Bindings::new();
        for (v, &val) in ctx.coords.iter().zip(x).chain(ctx.mu.iter().zip(mu)) {
            b.set(*v, val);
        }
        Some(
            g.evaluate_many(&ctx.fields, &b)
                .expect("closed form binds only its own variables"),
        )
    }
}

#[cfg(test)]
mod tests;
