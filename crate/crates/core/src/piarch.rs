//! Composed models: a base network predicts some fields, and relation stages
//! derive the remaining fields from them. A model with no stages is a plain
//! network.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::autodiff::{Exec, Expr, Graph, Program, VarId};
use crate::features::{Ast, FeatureError, FeatureSet, ParseError};
use crate::network::{Activation, Network, NetworkError, NetworkSpec};
use crate::problems::Problem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PiArchError {
    #[error("field '{0}' is not produced by any stage")]
    Uncovered(String),
    #[error("field '{0}' is produced more than once")]
    DoublyCovered(String),
    #[error("'{0}' is not a field of the problem")]
    UnknownField(String),
    #[error(
        "relation for '{output}' reads '{name}', which is neither an input nor an earlier field"
    )]
    UnknownInput { output: String, name: String },
    #[error("base network has {outputs} outputs for {fields} fields")]
    BaseWidth { outputs: usize, fields: usize },
    #[error("expected {expected} parameters, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("relation '{expr}': {source}")]
    Parse { expr: String, source: ParseError },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Clone, Debug, PartialEq)]
pub enum XiKind {
    /// Exact closed-form relation.
    Closed(Ast),
    /// A second network approximating the relation from its inputs.
    Learned(NetworkSpec),
}

/// `output = relation(inputs)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationXi {
    pub inputs: Vec<String>,
    pub output: String,
    pub kind: XiKind,
}

impl RelationXi {
    pub fn closed(output: &str, expr: &str) -> Result<Self, PiArchError> {
        let ast = Ast::parse(expr).map_err(|source| PiArchError::Parse {
            expr: expr.to_string(),
            source,
        })?;
        Ok(RelationXi {
            inputs: ast.identifiers().into_iter().collect(),
            output: output.to_string(),
            kind: XiKind::Closed(ast),
        })
    }

    /// A learned relation over the same inputs a closed form would read.
    pub fn learned(
        output: &str,
        inputs: Vec<String>,
        hidden: Vec<usize>,
        activation: Activation,
        seed: u64,
    ) -> Self {
        let spec = NetworkSpec {
            inputs: inputs.len(),
            hidden,
            outputs: 1,
            activation,
            seed,
        };
        RelationXi {
            inputs,
            output: output.to_string(),
            kind: XiKind::Learned(spec),
        }
    }
}

#[derive(Clone, Debug)]
struct Stage {
    relation: RelationXi,
    net: Option<Network>,
}

/// Base network plus relation stages, mapped onto the problem's fields.
#[derive(Clone, Debug)]
pub struct ComposedModel {
    base: Network,
    base_fields: Vec<String>,
    stages: Vec<Stage>,
    fields: Vec<String>,
    raw_inputs: Vec<String>,
    features: FeatureSet,
}

impl ComposedModel {
    /// `base_fields` names the base outputs; stages run in order and may
    /// read raw inputs, base fields and outputs of earlier stages.
    pub fn compose(
        base: NetworkSpec,
        base_fields: &[&str],
        relations: Vec<RelationXi>,
        fields: &[&str],
        raw_inputs: &[&str],
        features: FeatureSet,
    ) -> Result<Self, PiArchError> {
        if base.outputs != base_fields.len() {
            return Err(PiArchError::BaseWidth {
                outputs: base.outputs,
                fields: base_fields.len(),
            });
        }
        let field_set: HashSet<&str> = fields.iter().copied().collect();
        let mut produced: HashSet<String> = HashSet::new();
        let mut available: HashSet<String> = raw_inputs.iter().map(|s| s.to_string()).collect();
        let produce = |name: &str, produced: &mut HashSet<String>| {
            if !field_set.contains(name) {
                return Err(PiArchError::UnknownField(name.to_string()));
            }
            if !produced.insert(name.to_string()) {
                return Err(PiArchError::DoublyCovered(name.to_string()));
            }
            Ok(())
        };
        for f in base_fields {
            produce(f, &mut produced)?;
            available.insert(f.to_string());
        }
        let mut stages = Vec::with_capacity(relations.len());
        for rel in relations {
            if let Some(name) = rel.inputs.iter().find(|n| !available.contains(*n)) {
                return Err(PiArchError::UnknownInput {
                    output: rel.output.clone(),
                    name: name.clone(),
                });
            }
            produce(&rel.output, &mut produced)?;
            available.insert(rel.output.clone());
            let net = match &rel.kind {
                XiKind::Closed(_) => None,
                XiKind::Learned(spec) => Some(Network::init(spec.clone())?),
            };
            stages.push(Stage { relation: rel, net });
        }
        if let Some(f) = fields.iter().find(|f| !produced.contains(**f)) {
            return Err(PiArchError::Uncovered(f.to_string()));
        }
        Ok(ComposedModel {
            base: Network::init(base)?,
            base_fields: base_fields.iter().map(|s| s.to_string()).collect(),
            stages,
            fields: fields.iter().map(|s| s.to_string()).collect(),
            raw_inputs: raw_inputs.iter().map(|s| s.to_string()).collect(),
            features,
        })
    }

    /// A single network predicting every field.
    pub fn flat(
        base: NetworkSpec,
        fields: &[&str],
        raw_inputs: &[&str],
        features: FeatureSet,
    ) -> Result<Self, PiArchError> {
        Self::compose(base, fields, Vec::new(), fields, raw_inputs, features)
    }

    pub fn base(&self) -> &Network {
        &self.base
    }

    pub fn features(&self) -> &FeatureSet {
        &self.features
    }

    pub fn fields(&self) -> &[String] {
        &self.fields
    }

    pub fn raw_inputs(&self) -> &[String] {
        &self.raw_inputs
    }

    pub fn is_composed(&self) -> bool {
        !self.stages.is_empty()
    }

    /// Base, then learned stages, then learnable features.
    pub fn param_ids(&self) -> Vec<VarId> {
        let mut ids = self.base.param_ids().to_vec();
        for s in &self.stages {
            if let Some(n) = &s.net {
                ids.extend_from_slice(n.param_ids());
            }
        }
        ids.extend(self.features.param_ids());
        ids
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v = self.base.params().to_vec();
        for s in &self.stages {
            if let Some(n) = &s.net {
                v.extend_from_slice(n.params());
            }
        }
        v.extend_from_slice(self.features.values());
        v
    }

    pub fn n_params(&self) -> usize {
        self.param_ids().len()
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<(), PiArchError> {
        let expected = self.n_params();
        if values.len() != expected {
            return Err(PiArchError::ParamCount {
                expected,
                got: values.len(),
            });
        }
        let (head, mut rest) = values.split_at(self.base.params().len());
        self.base.set_params(head)?;
        for s in &mut self.stages {
            if let Some(n) = &mut s.net {
                let (h, r) = rest.split_at(n.params().len());
                n.set_params(h)?;
                rest = r;
            }
        }
        self.features.set_values(rest)?;
        Ok(())
    }

    /// One graph per problem field, in field order, from graphs of the raw
    /// inputs.
    pub fn forward_graph(&self, g: &mut Graph, raw: &[Expr]) -> Result<Vec<Expr>, PiArchError> {
        if raw.len() != self.raw_inputs.len() {
            return Err(NetworkError::DimensionMismatch {
                expected: self.raw_inputs.len(),
                got: raw.len(),
            }
            .into());
        }
        let named: Vec<(&str, Expr)> = self
            .raw_inputs
            .iter()
            .map(|s| s.as_str())
            .zip(raw.iter().copied())
            .collect();
        let augmented = self.features.augment(g, &named)?;
        let outs = self.base.forward_graph(g, &augmented)?;
        let mut env: HashMap<String, Expr> =
            named.iter().map(|(n, e)| (n.to_string(), *e)).collect();
        for (name, e) in self.base_fields.iter().zip(outs) {
            env.insert(name.clone(), e);
        }
        for s in &self.stages {
            let e = match (&s.relation.kind, &s.net) {
                (XiKind::Closed(ast), _) => ast
                    .build(g, &env)
                    .expect("relation inputs checked at compose time"),
                (XiKind::Learned(_), Some(net)) => {
                    let ins: Vec<Expr> = s.relation.inputs.iter().map(|n| env[n]).collect();
                    net.forward_graph(g, &ins)?[0]
                }
                (XiKind::Learned(_), None) => unreachable!("learned stage without network"),
            };
            env.insert(s.relation.output.clone(), e);
        }
        Ok(self.fields.iter().map(|f| env[f]).collect())
    }

    /// Field values at each row of `inputs` (row-major, raw input order),
    /// returned row-major `n_points x n_fields`.
    pub fn predict(&self, inputs: &[f64], exec: Exec) -> Result<Vec<f64>, PiArchError> {
        let mut g = Graph::new();
        let vars: Vec<VarId> = self.raw_inputs.iter().map(|_| VarId::fresh()).collect();
        let raw: Vec<Expr> = vars.iter().map(|&v| g.var(v)).collect();
        let out = self.forward_graph(&mut g, &raw)?;
        let prog = Program::compile(&g, &out, &vars, &self.param_ids())
            .expect("model graphs only use inputs and parameters");
        Ok(prog.eval(&self.params(), inputs, vars.len(), exec))
    }
}

/// The closed-form relations a problem declares, as composition stages.
pub fn problem_relations(problem: &Problem) -> Result<Vec<RelationXi>, PiArchError> {
    problem
        .relations
        .iter()
        .map(|r| RelationXi::closed(r.output, r.expr))
        .collect()
}

/// Max over `points` (rows of raw inputs) of `|relation(fields) - output|`
/// for every relation the problem declares.
pub fn relation_violation(
    model: &ComposedModel,
    problem: &Problem,
    points: &[f64],
) -> Result<f64, PiArchError> {
    let relations = problem_relations(problem)?;
    let mut g = Graph::new();
    let n_in = model.raw_inputs.len();
    let vars: Vec<VarId> = (0..n_in).map(|_| VarId::fresh()).collect();
    let raw: Vec<Expr> = vars.iter().map(|&v| g.var(v)).collect();
    let fields = model.forward_graph(&mut g, &raw)?;
    let mut env: HashMap<String, Expr> = model
        .raw_inputs
        .iter()
        .cloned()
        .zip(raw.iter().copied())
        .collect();
    for (name, e) in model.fields.iter().zip(&fields) {
        env.insert(name.clone(), *e);
    }
    let mut gaps = Vec::new();
    for rel in &relations {
        let XiKind::Closed(ast) = &rel.kind else {
            unreachable!("problem relations are closed-form")
        };
        let target = ast
            .build(&mut g, &env)
            .map_err(|name| PiArchError::UnknownInput {
                output: rel.output.clone(),
                name,
            })?;
        let out = *env
            .get(&rel.output)
            .ok_or_else(|| PiArchError::UnknownField(rel.output.clone()))?;
        gaps.push(g.sub(target, out));
    }
    if gaps.iter().all(|&e| g.as_const(e) == Some(0.0)) {
        return Ok(0.0);
    }
    let prog = Program::compile(&g, &gaps, &vars, &model.param_ids())
        .expect("model graphs only use inputs and parameters");
    let vals = prog.eval(&model.params(), points, n_in, Exec::default());
    Ok(vals.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Feature;
    use crate::sampling::{latin_hypercube, Axis, AxisKind, BoxDomain};

    fn ocp() -> Problem {
        Problem::by_name("ocp_poisson").unwrap()
    }

    fn spec(inputs: usize, outputs: usize) -> NetworkSpec {
        NetworkSpec {
            inputs,
            hidden: vec![6, 5],
            outputs,
            activation: Activation::Softplus,
            seed: 3,
        }
    }

    fn ocp_points(n: usize) -> Vec<f64> {
        let b = BoxDomain::new(vec![
            Axis::new("x0", -1.0, 1.0, AxisKind::Spatial),
            Axis::new("x1", -1.0, 1.0, AxisKind::Spatial),
            Axis::new("mu1", 0.5, 3.0, AxisKind::Parametric),
            Axis::new("mu2", 0.01, 1.0, AxisKind::Parametric),
        ])
        .unwrap();
        latin_hypercube(&b, n, 8).unwrap().coords().to_vec()
    }

    fn ocp_pi_arch() -> ComposedModel {
        let p = ocp();
        let fs = FeatureSet::new(vec![Feature::preset("ocp_bubble").unwrap()]).unwrap();
        ComposedModel::compose(
            spec(5, 2),
            &p.pi_arch_base,
            problem_relations(&p).unwrap(),
            &p.fields,
            &p.input_names(),
            fs,
        )
        .unwrap()
    }

    #[test]
    fn pi_arch_hardwires_the_relation() {
        let p = ocp();
        let m = ocp_pi_arch();
        assert_eq!(m.fields(), &["y", "u", "z"]);
        let pts = ocp_points(50);
        assert_eq!(relation_violation(&m, &p, &pts).unwrap(), 0.0);
        let vals = m.predict(&pts, Exec::Sequential).unwrap();
        for (row, x) in vals.chunks(3).zip(pts.chunks(4)) {
            assert_eq!(row[2], x[3] * row[1]);
        }
    }

    #[test]
    fn flat_network_violates_the_relation() {
        let p = ocp();
        let m = ComposedModel::flat(spec(4, 3), &p.fields, &p.input_names(), FeatureSet::empty())
            .unwrap();
        assert!(relation_violation(&m, &p, &ocp_points(50)).unwrap() > 0.0);
    }

    #[test]
    fn stokes_relation_is_exact() {
        let p = Problem::by_name("ocp_stokes").unwrap();
        let m = ComposedModel::compose(
            spec(3, 6),
            &p.pi_arch_base,
            problem_relations(&p).unwrap(),
            &p.fields,
            &p.input_names(),
            FeatureSet::empty(),
        )
        .unwrap();
        let b = BoxDomain::new(vec![
            Axis::new("x0", 0.0, 1.0, AxisKind::Spatial),
            Axis::new("x1", 0.0, 2.0, AxisKind::Spatial),
            Axis::new("mu1", 0.5, 1.5, AxisKind::Parametric),
        ])
        .unwrap();
        let pts = latin_hypercube(&b, 40, 1).unwrap();
        assert_eq!(relation_violation(&m, &p, pts.coords()).unwrap(), 0.0);
        // the optimality residuals fold to zero
        let mut g = Graph::new();
        let vars: Vec<VarId> = (0..3).map(|_| VarId::fresh()).collect();
        let raw: Vec<Expr> = vars.iter().map(|&v| g.var(v)).collect();
        let fields = m.forward_graph(&mut g, &raw).unwrap();
        let ctx = crate::problems::FieldCtx {
            fields,
            coords: vars[..2].to_vec(),
            mu: vars[2..].to_vec(),
        };
        let r = p.residual_exprs(&mut g, &ctx).unwrap();
        assert_eq!(g.as_const(r[3]), Some(0.0));
        assert_eq!(g.as_const(r[4]), Some(0.0));
    }

    #[test]
    fn empty_composition_is_the_base_network() {
        let p = ocp();
        let m = ComposedModel::flat(spec(4, 3), &p.fields, &p.input_names(), FeatureSet::empty())
            .unwrap();
        let net = Network::init(spec(4, 3)).unwrap();
        assert_eq!(m.params(), net.params());
        let pts = ocp_points(10);
        let vals = m.predict(&pts, Exec::Sequential).unwrap();
        for (row, x) in vals.chunks(3).zip(pts.chunks(4)) {
            let direct = net.forward(x).unwrap();
            for (a, b) in row.iter().zip(&direct) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn field_map_errors() {
        let p = ocp();
        let names = p.input_names();
        let rel = || problem_relations(&p).unwrap();
        let fs = FeatureSet::empty;
        assert_eq!(
            ComposedModel::compose(spec(4, 1), &["u"], rel(), &p.fields, &names, fs()).unwrap_err(),
            PiArchError::Uncovered("y".into())
        );
        assert_eq!(
            ComposedModel::compose(spec(4, 3), &["y", "u", "z"], rel(), &p.fields, &names, fs())
                .unwrap_err(),
            PiArchError::DoublyCovered("z".into())
        );
        let bad = RelationXi::closed("z", "mu3*u").unwrap();
        assert!(matches!(
            ComposedModel::compose(spec(4, 2), &["u", "y"], vec![bad], &p.fields, &names, fs()),
            Err(PiArchError::UnknownInput { .. })
        ));
        // a stage may not read a field produced by a later stage
        let first = RelationXi::closed("y", "z+1").unwrap();
        let second = RelationXi::closed("z", "mu2*u").unwrap();
        assert!(matches!(
            ComposedModel::compose(
                spec(4, 1),
                &["u"],
                vec![first, second],
                &p.fields,
                &names,
                fs()
            ),
            Err(PiArchError::UnknownInput { .. })
        ));
        assert!(matches!(
            ComposedModel::compose(spec(4, 2), &["u", "q"], rel(), &p.fields, &names, fs()),
            Err(PiArchError::UnknownField(_))
        ));
    }

    #[test]
    fn learned_relation_trains_alongside() {
        let p = ocp();
        let xi = RelationXi::learned(
            "z",
            vec!["u".into(), "mu2".into()],
            vec![4],
            Activation::Tanh,
            5,
        );
        let mut m = ComposedModel::compose(
            spec(4, 2),
            &p.pi_arch_base,
            vec![xi],
            &p.fields,
            &p.input_names(),
            FeatureSet::empty(),
        )
        .unwrap();
        let n_base = spec(4, 2).param_count();
        assert_eq!(m.n_params(), n_base + (2 * 4 + 4) + (4 + 1));
        assert!(relation_violation(&m, &p, &ocp_points(20)).unwrap() > 0.0);
        let mut v = m.params();
        v[n_base] += 1.0;
        m.set_params(&v).unwrap();
        assert_eq!(m.params(), v);
        assert!(m.set_params(&v[1..]).is_err());
    }
}
