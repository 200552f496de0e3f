//! Extra input features: closed-form functions of the inputs appended to the
//! network input vector, optionally carrying trainable parameters.

pub mod parse;

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::autodiff::{Expr, Graph, VarId};
pub use parse::{Ast, ParseError};

/// Names a feature formula may use as inputs.
pub const INPUT_NAMES: [&str; 5] = ["x0", "x1", "t", "mu1", "mu2"];

/// Prefixes that mark a name as a learnable parameter, with initial value.
const LEARNABLE_PREFIXES: [(&str, f64); 3] = [("alpha", 1.0), ("beta", 1.0), ("gamma", 0.0)];

pub const PRESETS: [(&str, &str); 6] = [
    ("poisson_sine", "sin(pi*x0)*sin(pi*x1)"),
    (
        "poisson_sine_learnable",
        "beta0*sin(alpha0*x0+gamma0)*beta1*sin(alpha1*x1+gamma1)",
    ),
    ("poisson2_forcing", "-2*(x1*(1-x1)+x0*(1-x0))"),
    ("burgers_ic", "sin(pi*x0)"),
    ("ocp_bubble", "(1-x0^2)*(1-x1^2)"),
    // mu1 appears in both terms
    ("parametric_gaussian", "exp(-2*((x0-mu1)^2+(x1-mu1)^2))"),
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("in feature '{expr}': {source}")]
    Parse { expr: String, source: ParseError },
    #[error("unknown feature preset '{0}'")]
    UnknownPreset(String),
    #[error("feature '{expr}' refers to unknown name '{name}'")]
    UnknownName { expr: String, name: String },
    #[error("feature refers to '{0}', which is not an input of this problem")]
    UnknownVariable(String),
    #[error("learnable parameter '{0}' is declared by more than one feature")]
    DuplicateParam(String),
    #[error("expected {expected} feature parameters, got {got}")]
    ParamCount { expected: usize, got: usize },
}

fn learnable_init(name: &str) -> Option<f64> {
    LEARNABLE_PREFIXES.iter().find_map(|(p, init)| {
        let rest = name.strip_prefix(p)?;
        rest.chars().all(|c| c.is_ascii_digit()).then_some(*init)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnableParam {
    pub name: String,
    pub id: VarId,
    pub init: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Feature {
    pub source: String,
    ast: Ast,
    inputs: Vec<String>,
    params: Vec<LearnableParam>,
}

impl Feature {
    /// Parses a formula over the input names, `pi`, `sin`, `cos`, `exp`,
    /// and learnable parameters named `alpha<k>`, `beta<k>`, `gamma<k>`.
    /// Each learnable name gets a fresh parameter variable.
    pub fn parse(src: &str) -> Result<Self, FeatureError> {
        let ast = Ast::parse(src).map_err(|source| FeatureError::Parse {
            expr: src.to_string(),
            source,
        })?;
        let mut inputs = Vec::new();
        let mut params = Vec::new();
        for name in ast.identifiers() {
            if INPUT_NAMES.contains(&name.as_str()) {
                inputs.push(name);
            } else if let Some(init) = learnable_init(&name) {
                params.push(LearnableParam {
                    name,
                    id: VarId::fresh(),
                    init,
                });
            } else {
                return Err(FeatureError::UnknownName {
                    expr: src.to_string(),
                    name,
                });
            }
        }
        Ok(Feature {
            source: src.to_string(),
            ast,
            inputs,
            params,
        })
    }

    pub fn preset(name: &str) -> Result<Self, FeatureError> {
        let (_, src) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| FeatureError::UnknownPreset(name.to_string()))?;
        Feature::parse(src)
    }

    pub fn is_learnable(&self) -> bool {
        !self.params.is_empty()
    }

    /// Input names the formula reads.
    pub fn inputs(&self) -> &[String] {
        &self.inputs
    }
}

/// Ordered features plus the current values of their learnable parameters.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct FeatureSet {
    features: Vec<Feature>,
    values: Vec<f64>,
}

impl FeatureSet {
    pub fn new(features: Vec<Feature>) -> Result<Self, FeatureError> {
        let mut seen = HashSet::new();
        for p in features.iter().flat_map(|f| &f.params) {
            if !seen.insert(p.name.clone()) {
                return Err(FeatureError::DuplicateParam(p.name.clone()));
            }
        }
        let values = features
            .iter()
            .flat_map(|f| f.params.iter().map(|p| p.init))
            .collect();
        Ok(FeatureSet { features, values })
    }

    pub fn empty() -> Self {
        FeatureSet::default()
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    /// Every learnable parameter with its initial value, in feature order.
    pub fn feature_params(&self) -> Vec<(VarId, f64)> {
        self.features
            .iter()
            .flat_map(|f| f.params.iter().map(|p| (p.id, p.init)))
            .collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.features
            .iter()
            .flat_map(|f| f.params.iter().map(|p| p.name.clone()))
            .collect()
    }

    pub fn param_ids(&self) -> Vec<VarId> {
        self.feature_params()
            .into_iter()
            .map(|(id, _)| id)
            .collect()
    }

    /// Current learnable values, aligned with [`FeatureSet::param_ids`].
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn set_values(&mut self, values: &[f64]) -> Result<(), FeatureError> {
        if values.len() != self.values.len() {
            return Err(FeatureError::ParamCount {
                expected: self.values.len(),
                got: values.len(),
            });
        }
        self.values.copy_from_slice(values);
        Ok(())
    }

    /// The named inputs followed by one graph per feature.
    pub fn augment(
        &self,
        g: &mut Graph,
        inputs: &[(&str, Expr)],
    ) -> Result<Vec<Expr>, FeatureError> {
        let mut env: HashMap<String, Expr> =
            inputs.iter().map(|(n, e)| (n.to_string(), *e)).collect();
        for f in &self.features {
            for p in &f.params {
                let e = g.var(p.id);
                env.insert(p.name.clone(), e);
            }
        }
        let mut out: Vec<Expr> = inputs.iter().map(|(_, e)| *e).collect();
        for f in &self.features {
            let e = f
                .ast
                .build(g, &env)
                .map_err(FeatureError::UnknownVariable)?;
            out.push(e);
        }
        Ok(out)
    }
}
