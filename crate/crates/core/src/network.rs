//! Dense feed-forward networks, evaluated numerically or built into a graph.
//!
//! "3 layers of 20" in experiment descriptions is read as three hidden
//! layers of width 20; the input and output layers are implied by the
//! problem. The output layer is linear.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Expr, Graph, VarId};
use crate::sampling::rng_stream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("expected {expected} inputs, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("expected {expected} parameters, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("malformed parameter file: {0}")]
    Json(String),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Softplus,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => crate::autodiff::softplus(x),
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn build(self, g: &mut Graph, x: Expr) -> Expr {
        match self {
            Activation::Softplus => g.softplus(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub inputs: usize,
    /// Hidden layer widths; may be empty.
    pub hidden: Vec<usize>,
    pub outputs: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.inputs == 0 || self.outputs == 0 {
            return Err(NetworkError::InvalidSpec(
                "input and output dimensions must be positive".into(),
            ));
        }
        if let Some(w) = self.hidden.iter().find(|&&w| w == 0) {
            return Err(NetworkError::InvalidSpec(format!(
                "hidden width {w} is not positive"
            )));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.inputs];
        w.extend(&self.hidden);
        w.push(self.outputs);
        w
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|p| (p[0] + 1) * p[1]).sum()
    }
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    /// Start of this layer's weights in the flat parameter vector; biases
    /// follow the `fan_out * fan_in` weights.
    offset: usize,
}

impl Layer {
    fn weight(&self, out: usize, inp: usize) -> usize {
        debug_assert!(out < self.fan_out && inp < self.fan_in);
        self.offset + out * self.fan_in + inp
    }

    fn bias(&self, out: usize) -> usize {
        self.offset + self.fan_out * self.fan_in + out
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
    params: Vec<f64>,
    ids: Vec<VarId>,
}

impl Network {
    /// Weights uniform in `±sqrt(1/fan_in)`, biases zero.
    pub fn init(spec: NetworkSpec) -> Result<Self, NetworkError> {
        spec.validate()?;
        let widths = spec.widths();
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut offset = 0;
        for pair in widths.windows(2) {
            layers.push(Layer {
                fan_in: pair[0],
                fan_out: pair[1],
                offset,
            });
            offset += (pair[0] + 1) * pair[1];
        }
        let mut rng = rng_stream(spec.seed, 0);
        let mut params = vec![0.0; offset];
        for layer in &layers {
            let bound = (1.0 / layer.fan_in as f64).sqrt();
            let n = layer.fan_in * layer.fan_out;
            for w in &mut params[layer.offset..layer.offset + n] {
                *w = rng.random_range(-bound..=bound);
            }
        }
        let ids = (0..offset).map(|_| VarId::fresh()).collect();
        Ok(Network {
            spec,
            layers,
            params,
            ids,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_ids(&self) -> &[VarId] {
        &self.ids
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<(), NetworkError> {
        if values.len() != self.params.len() {
            return Err(NetworkError::ParamCount {
                expected: self.params.len(),
                got: values.len(),
            });
        }
        self.params.copy_from_slice(values);
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NetworkError> {
        if input.len() != self.spec.inputs {
            return Err(NetworkError::DimensionMismatch {
                expected: self.spec.inputs,
                got: input.len(),
            });
        }
        let p = &self.params;
        let mut h = input.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let last = l + 1 == self.layers.len();
            let next: Vec<f64> = (0..layer.fan_out)
                .map(|o| {
                    // same association order as the graph's sum node
                    let mut acc = p[layer.weight(o, 0)] * h[0];
                    for (i, hi) in h.iter().enumerate().skip(1) {
                        acc += p[layer.weight(o, i)] * hi;
                    }
                    acc += p[layer.bias(o)];
                    if last {
                        acc
                    } else {
                        self.spec.activation.apply(acc)
                    }
                })
                .collect();
            h = next;
        }
        Ok(h)
    }

    /// One graph per output, with the network parameters as variables.
    pub fn forward_graph(&self, g: &mut Graph, inputs: &[Expr]) -> Result<Vec<Expr>, NetworkError> {
        if inputs.len() != self.spec.inputs {
            return Err(NetworkError::DimensionMismatch {
                expected: self.spec.inputs,
                got: inputs.len(),
            });
        }
        let mut h = inputs.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let last = l + 1 == self.layers.len();
            let mut next = Vec::with_capacity(layer.fan_out);
            for o in 0..layer.fan_out {
                let mut terms = Vec::with_capacity(layer.fan_in + 1);
                for (i, &hi) in h.iter().enumerate() {
                    let w = g.var(self.ids[layer.weight(o, i)]);
                    terms.push(g.mul(w, hi));
                }
                terms.push(g.var(self.ids[layer.bias(o)]));
                let pre = g.sum(&terms);
                next.push(if last {
                    pre
                } else {
                    self.spec.activation.build(g, pre)
                });
            }
            h = next;
        }
        Ok(h)
    }

    /// Flat JSON array: layer by layer, row-major weights then biases.
    pub fn params_json(&self) -> String {
        serde_json::to_string(&self.params).expect("f64 slice serializes")
    }

    pub fn load_params_json(&mut self, text: &str) -> Result<(), NetworkError> {
        let values: Vec<f64> =
            serde_json::from_str(text).map_err(|e| NetworkError::Json(e.to_string()))?;
        self.set_params(&values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Bindings;

    fn spec(hidden: Vec<usize>, act: Activation) -> NetworkSpec {
        NetworkSpec {
            inputs: 3,
            hidden,
            outputs: 2,
            activation: act,
            seed: 11,
        }
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let a = Network::init(spec(vec![8, 4], Activation::Tanh)).unwrap();
        let b = Network::init(spec(vec![8, 4], Activation::Tanh)).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.param_ids(), b.param_ids());
    }

    #[test]
    fn parameter_count_without_hidden_layers() {
        let net = Network::init(NetworkSpec {
            inputs: 5,
            hidden: vec![],
            outputs: 1,
            activation: Activation::Softplus,
            seed: 0,
        })
        .unwrap();
        assert_eq!(net.params().len(), 6);
        assert_eq!(net.spec().param_count(), 6);
    }

    #[test]
    fn initial_weights_respect_fan_in_bound() {
        let net = Network::init(NetworkSpec {
            inputs: 10,
            hidden: vec![],
            outputs: 7,
            activation: Activation::Softplus,
            seed: 3,
        })
        .unwrap();
        let bound = 0.1_f64.sqrt();
        assert!(net.params()[..70].iter().all(|w| w.abs() <= bound));
        assert!(net.params()[70..].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_parameters_give_output_biases() {
        let mut net = Network::init(spec(vec![4], Activation::Softplus)).unwrap();
        let n = net.params().len();
        net.set_params(&vec![0.0; n]).unwrap();
        assert_eq!(net.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        let mut p = vec![0.0; n];
        p[n - 2] = 0.25;
        p[n - 1] = -4.0;
        net.set_params(&p).unwrap();
        assert_eq!(net.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.25, -4.0]);
    }

    #[test]
    fn no_hidden_layers_is_affine() {
        let net = Network::init(spec(vec![], Activation::Tanh)).unwrap();
        let f = |x: &[f64]| net.forward(x).unwrap();
        let (a, b) = ([0.1, 0.5, -0.2], [1.3, -0.7, 0.4]);
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        let (fa, fb, fm) = (f(&a), f(&b), f(&mid));
        for k in 0..2 {
            assert!((fm[k] - 0.5 * (fa[k] + fb[k])).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let net = Network::init(spec(vec![2], Activation::Tanh)).unwrap();
        assert_eq!(
            net.forward(&[1.0]),
            Err(NetworkError::DimensionMismatch {
                expected: 3,
                got: 1
            })
        );
        let mut g = Graph::new();
        let x = g.constant(1.0);
        assert!(net.forward_graph(&mut g, &[x]).is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(Network::init(spec(vec![4, 0], Activation::Tanh)).is_err());
        let mut s = spec(vec![], Activation::Tanh);
        s.outputs = 0;
        assert!(Network::init(s).is_err());
    }

    #[test]
    fn graph_matches_numeric_forward() {
        let net = Network::init(spec(vec![7, 5], Activation::Softplus)).unwrap();
        let mut g = Graph::new();
        let vars: Vec<(VarId, Expr)> = (0..3).map(|_| g.new_var()).collect();
        let inputs: Vec<Expr> = vars.iter().map(|v| v.1).collect();
        let outs = net.forward_graph(&mut g, &inputs).unwrap();
        let mut worst = 0.0_f64;
        for k in 0..100 {
            let t = k as f64 * 0.37;
            let x = [t.sin(), (1.3 * t).cos(), 0.5 * (0.7 * t).sin()];
            let mut b: Bindings = net
                .param_ids()
                .iter()
                .copied()
                .zip(net.params().iter().copied())
                .collect();
            for (v, xv) in vars.iter().zip(x) {
                b.set(v.0, xv);
            }
            let got = g.evaluate_many(&outs, &b).unwrap();
            let want = net.forward(&x).unwrap();
            for (a, w) in got.iter().zip(&want) {
                worst = worst.max((a - w).abs());
            }
        }
        assert!(worst < 1e-15, "{worst}");
    }

    #[test]
    fn graph_parameters_are_network_parameters() {
        let net = Network::init(spec(vec![3], Activation::Tanh)).unwrap();
        let mut g = Graph::new();
        let inputs: Vec<Expr> = (0..3).map(|_| g.new_var().1).collect();
        let outs = net.forward_graph(&mut g, &inputs).unwrap();
        let mut used = g.free_vars(&outs);
        for e in &inputs {
            used.retain(|v| Some(*v) != g.as_var(*e));
        }
        let mut ids = net.param_ids().to_vec();
        ids.sort_unstable();
        assert_eq!(used, ids);
    }

    #[test]
    fn second_derivatives_are_finite_and_match_fd() {
        let net = Network::init(spec(vec![6, 6], Activation::Softplus)).unwrap();
        let mut g = Graph::new();
        let vars: Vec<(VarId, Expr)> = (0..3).map(|_| g.new_var()).collect();
        let inputs: Vec<Expr> = vars.iter().map(|v| v.1).collect();
        let out = net.forward_graph(&mut g, &inputs).unwrap()[0];
        let d1 = g.derive(out, vars[0].0);
        let d2 = g.derive(d1, vars[1].0);
        let mut b: Bindings = net
            .param_ids()
            .iter()
            .copied()
            .zip(net.params().iter().copied())
            .collect();
        for (v, xv) in vars.iter().zip([0.2, -0.4, 0.9]) {
            b.set(v.0, xv);
        }
        assert!(g.evaluate(d2, &b).unwrap().is_finite());
        assert!(g.fd_check(d1, &b, 1e-5).unwrap() < 1e-5);
    }

    #[test]
    fn parameter_updates_are_visible() {
        let mut net = Network::init(spec(vec![3], Activation::Tanh)).unwrap();
        let x = [0.3, 0.2, 0.1];
        let before = net.forward(&x).unwrap();
        let mut p = net.params().to_vec();
        let n = p.len();
        p[n - 1] += 1.0;
        net.set_params(&p).unwrap();
        let after = net.forward(&x).unwrap();
        assert!((after[1] - before[1] - 1.0).abs() < 1e-12);
        assert_eq!(after[0], before[0]);
    }

    #[test]
    fn json_round_trip() {
        let net = Network::init(spec(vec![3], Activation::Tanh)).unwrap();
        let mut other = Network::init(NetworkSpec {
            seed: 99,
            ..net.spec().clone()
        })
        .unwrap();
        other.load_params_json(&net.params_json()).unwrap();
        assert_eq!(other.params(), net.params());
        assert!(other.load_params_json("[1.0]").is_err());
    }
}
