//! Symbolic scalar computation graphs.
//!
//! A [`Graph`] is an append-only arena of hash-consed nodes. Every node's
//! children have smaller indices than the node itself, so index order is a
//! topological order. Derivatives are built symbolically ([`Graph::derive`])
//! and are themselves ordinary graph nodes, which makes nesting to any order
//! uniform: the Laplacian of a network output is two nested `derive` calls,
//! and the parameter gradient of a loss built from it is a reverse sweep over
//! the resulting graph.
//!
//! Single-point evaluation lives here; bulk evaluation over many collocation
//! points goes through a compiled [`Program`].

mod program;

pub use program::{Exec, PointBatch, Program};

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU32, Ordering};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("missing binding for variable {0}")]
    MissingBinding(VarId),
    #[error("non-positive finite-difference step {0}")]
    BadStep(f64),
}

static NEXT_VAR: AtomicU32 = AtomicU32::new(0);

/// Identifier of an input or parameter variable.
///
/// Identifiers come from a process-wide counter, so they are unique across
/// every graph built in the process.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(u32);

impl VarId {
    pub fn fresh() -> Self {
        VarId(NEXT_VAR.fetch_add(1, Ordering::Relaxed))
    }

    pub fn index(self) -> u32 {
        self.0
    }
}

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// Handle to a node of a [`Graph`]. Only meaningful for the graph that
/// created it.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Expr(u32);

impl Expr {
    pub(crate) fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Unary {
    Exp,
    Ln,
    Sin,
    Cos,
    Tanh,
    Softplus,
    /// Logistic function; appears as the derivative of softplus.
    Sigmoid,
}

impl Unary {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Tanh => x.tanh(),
            Unary::Softplus => softplus(x),
            Unary::Sigmoid => sigmoid(x),
        }
    }

    /// d/dx of the function, given the argument `x` and the value `y = f(x)`.
    #[inline]
    pub(crate) fn slope(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Exp => y,
            Unary::Ln => 1.0 / x,
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::Tanh => 1.0 - y * y,
            Unary::Softplus => sigmoid(x),
            Unary::Sigmoid => y * (1.0 - y),
        }
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    // ln(1 + e^x) without overflow for large |x|
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn powf(x: f64, p: f64) -> f64 {
    if p == 2.0 {
        x * x
    } else if p == -1.0 {
        1.0 / x
    } else if p == p.trunc() && p.abs() <= 16.0 {
        x.powi(p as i32)
    } else {
        x.powf(p)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub(crate) enum Node {
    /// Constant stored as raw bits so nodes can be hashed.
    Const(u64),
    Var(VarId),
    Add(Expr, Expr),
    Mul(Expr, Expr),
    Neg(Expr),
    /// Left-to-right sum of the children.
    Sum(Box<[Expr]>),
    /// Power with a constant real exponent, stored as raw bits.
    Pow(Expr, u64),
    Unary(Unary, Expr),
}

impl Node {
    pub(crate) fn children(&self) -> impl Iterator<Item = Expr> + '_ {
        let (fixed, list): ([Option<Expr>; 2], &[Expr]) = match self {
            Node::Const(_) | Node::Var(_) => ([None, None], &[]),
            Node::Add(a, b) | Node::Mul(a, b) => ([Some(*a), Some(*b)], &[]),
            Node::Neg(a) | Node::Pow(a, _) | Node::Unary(_, a) => ([Some(*a), None], &[]),
            Node::Sum(xs) => ([None, None], xs),
        };
        fixed.into_iter().flatten().chain(list.iter().copied())
    }
}

/// Variable values for single-point evaluation.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    values: HashMap<VarId, f64>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, var: VarId, value: f64) -> &mut Self {
        self.values.insert(var, value);
        self
    }

    pub fn with(mut self, var: VarId, value: f64) -> Self {
        self.values.insert(var, value);
        self
    }

    pub fn get(&self, var: VarId) -> Option<f64> {
        self.values.get(&var).copied()
    }

    pub fn vars(&self) -> impl Iterator<Item = VarId> + '_ {
        self.values.keys().copied()
    }
}

impl FromIterator<(VarId, f64)> for Bindings {
    fn from_iter<T: IntoIterator<Item = (VarId, f64)>>(iter: T) -> Self {
        Bindings {
            values: iter.into_iter().collect(),
        }
    }
}

/// Append-only arena of expression nodes with structural sharing.
///
/// Construction applies a small set of value-preserving rewrites (constant
/// folding, `x + 0`, `x * 1`, `x * 0`, `x - x`, double negation) which keeps
/// symbolic derivative graphs linear in the size of their source graph.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    interned: HashMap<Node, Expr>,
    derivs: HashMap<(Expr, VarId), Expr>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn node(&self, e: Expr) -> &Node {
        &self.nodes[e.idx()]
    }

    fn intern(&mut self, node: Node) -> Expr {
        if let Some(&e) = self.interned.get(&node) {
            return e;
        }
        let e = Expr(self.nodes.len() as u32);
        self.nodes.push(node.clone());
        self.interned.insert(node, e);
        e
    }

    /// Value of `e` if it is a constant node.
    pub fn as_const(&self, e: Expr) -> Option<f64> {
        match self.node(e) {
            Node::Const(bits) => Some(f64::from_bits(*bits)),
            _ => None,
        }
    }

    /// The variable behind `e`, if `e` is a variable node.
    pub fn as_var(&self, e: Expr) -> Option<VarId> {
        match self.node(e) {
            Node::Var(v) => Some(*v),
            _ => None,
        }
    }

    fn is_const(&self, e: Expr, value: f64) -> bool {
        self.as_const(e) == Some(value)
    }

    pub fn constant(&mut self, value: f64) -> Expr {
        // fold -0.0 into 0.0 so zero tests stay simple
        let value = if value == 0.0 { 0.0 } else { value };
        self.intern(Node::Const(value.to_bits()))
    }

    pub fn zero(&mut self) -> Expr {
        self.constant(0.0)
    }

    pub fn one(&mut self) -> Expr {
        self.constant(1.0)
    }

    pub fn var(&mut self, v: VarId) -> Expr {
        self.intern(Node::Var(v))
    }

    /// Allocates a fresh variable and returns it together with its node.
    pub fn new_var(&mut self) -> (VarId, Expr) {
        let v = VarId::fresh();
        (v, self.var(v))
    }

    pub fn add(&mut self, a: Expr, b: Expr) -> Expr {
        match (self.as_const(a), self.as_const(b)) {
            (Some(x), Some(y)) => return self.constant(x + y),
            (Some(x), _) if x == 0.0 => return b,
            (_, Some(y)) if y == 0.0 => return a,
            _ => {}
        }
        if self.node(a) == &Node::Neg(b) || self.node(b) == &Node::Neg(a) {
            return self.zero();
        }
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        self.intern(Node::Add(a, b))
    }

    pub fn sub(&mut self, a: Expr, b: Expr) -> Expr {
        if a == b {
            return self.zero();
        }
        let nb = self.neg(b);
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: Expr, b: Expr) -> Expr {
        match (self.as_const(a), self.as_const(b)) {
            (Some(x), Some(y)) => return self.constant(x * y),
            (Some(x), _) | (_, Some(x)) if x == 0.0 => return self.zero(),
            (Some(x), _) if x == 1.0 => return b,
            (_, Some(y)) if y == 1.0 => return a,
            (Some(x), _) if x == -1.0 => return self.neg(b),
            (_, Some(y)) if y == -1.0 => return self.neg(a),
            _ => {}
        }
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        self.intern(Node::Mul(a, b))
    }

    pub fn scale(&mut self, c: f64, a: Expr) -> Expr {
        let c = self.constant(c);
        self.mul(c, a)
    }

    pub fn div(&mut self, a: Expr, b: Expr) -> Expr {
        let inv = self.powf(b, -1.0);
        self.mul(a, inv)
    }

    pub fn neg(&mut self, a: Expr) -> Expr {
        match self.node(a).clone() {
            Node::Const(bits) => self.constant(-f64::from_bits(bits)),
            Node::Neg(inner) => inner,
            _ => self.intern(Node::Neg(a)),
        }
    }

    /// Left-to-right sum. Zero constants are dropped.
    pub fn sum(&mut self, terms: &[Expr]) -> Expr {
        let kept: Vec<Expr> = terms
            .iter()
            .copied()
            .filter(|&t| !self.is_const(t, 0.0))
            .collect();
        match kept.len() {
            0 => self.zero(),
            1 => kept[0],
            2 => self.add(kept[0], kept[1]),
            _ => {
                if kept.iter().all(|&t| self.as_const(t).is_some()) {
                    let mut acc = self.as_const(kept[0]).unwrap();
                    for &t in &kept[1..] {
                        acc += self.as_const(t).unwrap();
                    }
                    return self.constant(acc);
                }
                self.intern(Node::Sum(kept.into_boxed_slice()))
            }
        }
    }

    pub fn powf(&mut self, a: Expr, p: f64) -> Expr {
        if p == 0.0 {
            return self.one();
        }
        if p == 1.0 {
            return a;
        }
        if let Some(x) = self.as_const(a) {
            return self.constant(powf(x, p));
        }
        self.intern(Node::Pow(a, p.to_bits()))
    }

    pub fn square(&mut self, a: Expr) -> Expr {
        self.powf(a, 2.0)
    }

    pub fn unary(&mut self, op: Unary, a: Expr) -> Expr {
        if let Some(x) = self.as_const(a) {
            return self.constant(op.apply(x));
        }
        self.intern(Node::Unary(op, a))
    }

    pub fn exp(&mut self, a: Expr) -> Expr {
        self.unary(Unary::Exp, a)
    }

    pub fn ln(&mut self, a: Expr) -> Expr {
        self.unary(Unary::Ln, a)
    }

    pub fn sin(&mut self, a: Expr) -> Expr {
        self.unary(Unary::Sin, a)
    }

    pub fn cos(&mut self, a: Expr) -> Expr {
        self.unary(Unary::Cos, a)
    }

    pub fn tanh(&mut self, a: Expr) -> Expr {
        self.unary(Unary::Tanh, a)
    }

    pub fn softplus(&mut self, a: Expr) -> Expr {
        self.unary(Unary::Softplus, a)
    }

    pub fn sigmoid(&mut self, a: Expr) -> Expr {
        self.unary(Unary::Sigmoid, a)
    }

    /// Sum of the unmixed second derivatives of `e` along `axes`.
    pub fn laplacian(&mut self, e: Expr, axes: &[VarId]) -> Expr {
        let terms: Vec<Expr> = axes
            .iter()
            .map(|&v| {
                let d = self.derive(e, v);
                self.derive(d, v)
            })
            .collect();
        self.sum(&terms)
    }

    /// Symbolic partial derivative of `e` with respect to `wrt`.
    ///
    /// Results are memoized per `(node, variable)`, so repeated and nested
    /// calls share structure.
    pub fn derive(&mut self, e: Expr, wrt: VarId) -> Expr {
        if let Some(&d) = self.derivs.get(&(e, wrt)) {
            return d;
        }
        let mut pending = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![e];
        while let Some(n) = stack.pop() {
            if !seen.insert(n) || self.derivs.contains_key(&(n, wrt)) {
                continue;
            }
            pending.push(n);
            stack.extend(self.node(n).children());
        }
        pending.sort_unstable();
        for n in pending {
            let d = self.derive_node(n, wrt);
            self.derivs.insert((n, wrt), d);
        }
        self.derivs[&(e, wrt)]
    }

    fn d(&self, e: Expr, wrt: VarId) -> Expr {
        self.derivs[&(e, wrt)]
    }

    fn derive_node(&mut self, n: Expr, wrt: VarId) -> Expr {
        match self.node(n).clone() {
            Node::Const(_) => self.zero(),
            Node::Var(v) => {
                if v == wrt {
                    self.one()
                } else {
                    self.zero()
                }
            }
            Node::Add(a, b) => {
                let (da, db) = (self.d(a, wrt), self.d(b, wrt));
                self.add(da, db)
            }
            Node::Mul(a, b) => {
                let (da, db) = (self.d(a, wrt), self.d(b, wrt));
                let l = self.mul(da, b);
                let r = self.mul(a, db);
                self.add(l, r)
            }
            Node::Neg(a) => {
                let da = self.d(a, wrt);
                self.neg(da)
            }
            Node::Sum(xs) => {
                let ds: Vec<Expr> = xs.iter().map(|&x| self.d(x, wrt)).collect();
                self.sum(&ds)
            }
            Node::Pow(a, bits) => {
                let da = self.d(a, wrt);
                if self.is_const(da, 0.0) {
                    return da;
                }
                let p = f64::from_bits(bits);
                let base = self.powf(a, p - 1.0);
                let scaled = self.scale(p, base);
                self.mul(scaled, da)
            }
            Node::Unary(op, a) => {
                let da = self.d(a, wrt);
                if self.is_const(da, 0.0) {
                    return da;
                }
                let slope = match op {
                    Unary::Exp => n,
                    Unary::Ln => self.powf(a, -1.0),
                    Unary::Sin => self.cos(a),
                    Unary::Cos => {
                        let s = self.sin(a);
                        self.neg(s)
                    }
                    Unary::Tanh => {
                        let sq = self.mul(n, n);
                        let one = self.one();
                        self.sub(one, sq)
                    }
                    Unary::Softplus => self.sigmoid(a),
                    Unary::Sigmoid => {
                        let one = self.one();
                        let c = self.sub(one, n);
                        self.mul(n, c)
                    }
                };
                self.mul(slope, da)
            }
        }
    }

    /// Nodes reachable from `roots`, in ascending (topological) order.
    pub(crate) fn reachable(&self, roots: &[Expr]) -> Vec<Expr> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack: Vec<Expr> = roots.to_vec();
        let mut out = Vec::new();
        while let Some(n) = stack.pop() {
            if seen[n.idx()] {
                continue;
            }
            seen[n.idx()] = true;
            out.push(n);
            stack.extend(self.node(n).children());
        }
        out.sort_unstable();
        out
    }

    /// Variables reachable from `roots`, sorted.
    pub fn free_vars(&self, roots: &[Expr]) -> Vec<VarId> {
        let mut vars: Vec<VarId> = self
            .reachable(roots)
            .into_iter()
            .filter_map(|n| self.as_var(n))
            .collect();
        vars.sort_unstable();
        vars
    }

    fn forward_values(
        &self,
        order: &[Expr],
        bindings: &Bindings,
    ) -> Result<HashMap<Expr, f64>, AutodiffError> {
        let mut vals: HashMap<Expr, f64> = HashMap::with_capacity(order.len());
        for &n in order {
            let v = match self.node(n) {
                Node::Const(bits) => f64::from_bits(*bits),
                Node::Var(var) => bindings
                    .get(*var)
                    .ok_or(AutodiffError::MissingBinding(*var))?,
                Node::Add(a, b) => vals[a] + vals[b],
                Node::Mul(a, b) => vals[a] * vals[b],
                Node::Neg(a) => -vals[a],
                Node::Sum(xs) => {
                    let mut acc = vals[&xs[0]];
                    for x in &xs[1..] {
                        acc += vals[x];
                    }
                    acc
                }
                Node::Pow(a, bits) => powf(vals[a], f64::from_bits(*bits)),
                Node::Unary(op, a) => op.apply(vals[a]),
            };
            vals.insert(n, v);
        }
        Ok(vals)
    }

    pub fn evaluate(&self, e: Expr, bindings: &Bindings) -> Result<f64, AutodiffError> {
        Ok(self.evaluate_many(&[e], bindings)?[0])
    }

    pub fn evaluate_many(
        &self,
        roots: &[Expr],
        bindings: &Bindings,
    ) -> Result<Vec<f64>, AutodiffError> {
        let order = self.reachable(roots);
        let vals = self.forward_values(&order, bindings)?;
        Ok(roots.iter().map(|r| vals[r]).collect())
    }

    /// All first partials of `e` with respect to `wrt`, by one reverse sweep.
    pub fn gradient(
        &self,
        e: Expr,
        wrt: &[VarId],
        bindings: &Bindings,
    ) -> Result<Vec<f64>, AutodiffError> {
        let order = self.reachable(&[e]);
        let vals = self.forward_values(&order, bindings)?;
        let mut adj: HashMap<Expr, f64> = HashMap::with_capacity(order.len());
        adj.insert(e, 1.0);
        let mut by_var: HashMap<VarId, f64> = HashMap::new();
        for &n in order.iter().rev() {
            let Some(&g) = adj.get(&n) else { continue };
            let mut push = |x: Expr, v: f64| *adj.entry(x).or_insert(0.0) += v;
            match self.node(n) {
                Node::Const(_) => {}
                Node::Var(var) => *by_var.entry(*var).or_insert(0.0) += g,
                Node::Add(a, b) => {
                    push(*a, g);
                    push(*b, g);
                }
                Node::Mul(a, b) => {
                    push(*a, g * vals[b]);
                    push(*b, g * vals[a]);
                }
                Node::Neg(a) => push(*a, -g),
                Node::Sum(xs) => {
                    for &x in xs.iter() {
                        push(x, g);
                    }
                }
                Node::Pow(a, bits) => {
                    let p = f64::from_bits(*bits);
                    push(*a, g * p * powf(vals[a], p - 1.0));
                }
                Node::Unary(op, a) => push(*a, g * op.slope(vals[a], vals[&n])),
            }
        }
        Ok(wrt
            .iter()
            .map(|v| by_var.get(v).copied().unwrap_or(0.0))
            .collect())
    }

    /// Largest absolute gap between a central finite difference and the
    /// reverse-mode derivative, over every bound variable that `e` uses.
    pub fn fd_check(&self, e: Expr, bindings: &Bindings, step: f64) -> Result<f64, AutodiffError> {
        if step <= 0.0 || !step.is_finite() {
            return Err(AutodiffError::BadStep(step));
        }
        let vars = self.free_vars(&[e]);
        let grad = self.gradient(e, &vars, bindings)?;
        let mut worst = 0.0_f64;
        for (&v, &g) in vars.iter().zip(&grad) {
            let x = bindings.get(v).ok_or(AutodiffError::MissingBinding(v))?;
            let mut b = bindings.clone();
            b.set(v, x + step);
            let hi = self.evaluate(e, &b)?;
            b.set(v, x - step);
            let lo = self.evaluate(e, &b)?;
            let fd = (hi - lo) / (2.0 * step);
            worst = worst.max((fd - g).abs());
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{LN_2, PI};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn evaluate_basic_values() {
        let mut g = Graph::new();
        let (x, xe) = g.new_var();
        let (y, ye) = g.new_var();
        let sq = g.mul(xe, xe);
        assert_eq!(g.evaluate(sq, &Bindings::new().with(x, 3.0)).unwrap(), 9.0);

        let sp = g.softplus(xe);
        let v = g.evaluate(sp, &Bindings::new().with(x, 0.0)).unwrap();
        assert!(close(v, LN_2, 1e-15));

        let pi = g.constant(PI);
        let a = g.mul(pi, xe);
        let b = g.mul(pi, ye);
        let (sa, sb) = (g.sin(a), g.sin(b));
        let k = g.mul(sa, sb);
        let v = g
            .evaluate(k, &Bindings::new().with(x, 0.5).with(y, 0.5))
            .unwrap();
        assert!(close(v, 1.0, 1e-15));
    }

    #[test]
    fn missing_binding_names_variable() {
        let mut g = Graph::new();
        let (x, xe) = g.new_var();
        let (y, ye) = g.new_var();
        let s = g.add(xe, ye);
        let err = g.evaluate(s, &Bindings::new().with(x, 1.0)).unwrap_err();
        assert_eq!(err, AutodiffError::MissingBinding(y));
        assert!(err.to_string().contains(&y.to_string()));
    }

    #[test]
    fn derive_examples() {
        let mut g = Graph::new();
        let (x, xe) = g.new_var();
        let sq = g.mul(xe, xe);
        let d = g.derive(sq, x);
        assert_eq!(g.evaluate(d, &Bindings::new().with(x, 3.0)).unwrap(), 6.0);

        let s = g.sin(xe);
        let d1 = g.derive(s, x);
        let d2 = g.derive(d1, x);
        assert_eq!(g.evaluate(d2, &Bindings::new().with(x, 0.0)).unwrap(), 0.0);

        let sp = g.softplus(xe);
        let d = g.derive(sp, x);
        assert_eq!(g.evaluate(d, &Bindings::new().with(x, 0.0)).unwrap(), 0.5);
    }

    #[test]
    fn derivative_wrt_absent_variable_is_zero_graph() {
        let mut g = Graph::new();
        let (_, xe) = g.new_var();
        let (y, _) = g.new_var();
        let e = g.exp(xe);
        let d = g.derive(e, y);
        assert_eq!(g.as_const(d), Some(0.0));
    }

    #[test]
    fn third_order_nesting() {
        let mut g = Graph::new();
        let (x, xe) = g.new_var();
        let x4 = g.powf(xe, 4.0);
        let d1 = g.derive(x4, x);
        let d2 = g.derive(d1, x);
        let d3 = g.derive(d2, x);
        let v = g.evaluate(d3, &Bindings::new().with(x, 2.0)).unwrap();
        assert!(close(v, 48.0, 1e-9));
    }

    #[test]
    fn gradient_examples() {
        let mut g = Graph::new();
        let (x, xe) = g.new_var();
        let (y, ye) = g.new_var();
        let two_y = g.scale(2.0, ye);
        let e = g.add(xe, two_y);
        let b = Bindings::new().with(x, 0.3).with(y, -1.7);
        assert_eq!(g.gradient(e, &[x, y], &b).unwrap(), vec![1.0, 2.0]);

        let p = g.mul(xe, ye);
        let b = Bindings::new().with(x, 2.0).with(y, 3.0);
        assert_eq!(g.gradient(p, &[x, y], &b).unwrap(), vec![3.0, 2.0]);
    }

    #[test]
    fn fd_check_examples() {
        let mut g = Graph::new();
        let (x, xe) = g.new_var();
        let e = g.exp(xe);
        let err = g.fd_check(e, &Bindings::new().with(x, 1.0), 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");

        let c = g.constant(4.2);
        assert_eq!(g.fd_check(c, &Bindings::new(), 1e-5).unwrap(), 0.0);
        assert!(matches!(
            g.fd_check(c, &Bindings::new(), 0.0),
            Err(AutodiffError::BadStep(_))
        ));
    }

    #[test]
    fn subtraction_of_shared_node_folds_to_zero() {
        let mut g = Graph::new();
        let (_, xe) = g.new_var();
        let (_, ye) = g.new_var();
        let p = g.mul(xe, ye);
        let q = g.mul(ye, xe);
        assert_eq!(p, q);
        let z = g.sub(p, q);
        assert_eq!(g.as_const(z), Some(0.0));
    }

    #[test]
    fn activations_pass_fd_check() {
        let mut g = Graph::new();
        let (x, xe) = g.new_var();
        let acts = [
            g.softplus(xe),
            g.tanh(xe),
            g.sigmoid(xe),
            g.sin(xe),
            g.cos(xe),
            g.exp(xe),
        ];
        for &a in &acts {
            let d = g.derive(a, x);
            for i in 0..100 {
                let xv = -3.0 + 6.0 * (i as f64 + 0.5) / 100.0;
                let b = Bindings::new().with(x, xv);
                assert!(g.fd_check(a, &b, 1e-5).unwrap() < 1e-6);
                assert!(g.fd_check(d, &b, 1e-5).unwrap() < 1e-6);
            }
        }
    }

    #[test]
    fn softplus_is_stable_for_large_arguments() {
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert!(sigmoid(-800.0).is_finite());
    }
}
