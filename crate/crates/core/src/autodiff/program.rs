//! Compiled batch evaluation of graph roots over many points.
//!
//! Nodes that depend only on parameters and constants ("uniform" nodes) are
//! evaluated once per call as scalars. Nodes that depend on per-point inputs
//! are evaluated column-wise over fixed-size chunks of points. A sum whose
//! children are `uniform * varying` products is fused into one
//! linear-combination instruction, which is the shape every dense layer and
//! every derivative of a dense layer takes.
//!
//! Chunk boundaries do not depend on the execution mode, and partial results
//! are combined with the same pairwise tree in both modes, so sequential and
//! parallel runs are bit-identical.

use std::collections::HashMap;

use super::{powf, AutodiffError, Expr, Graph, Node, Unary, VarId};

/// Points per evaluation chunk.
pub const CHUNK: usize = 64;

/// How chunk work is scheduled.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    /// Rayon over chunks; falls back to sequential when the `parallel`
    /// feature is disabled.
    #[default]
    Parallel,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum Op {
    U(u32),
    V(u32),
}

#[derive(Clone, Debug)]
enum UInstr {
    Const(f64),
    Param(usize),
    Add(u32, u32),
    Mul(u32, u32),
    Neg(u32),
    Sum(Box<[u32]>),
    Pow(u32, f64),
    Unary(Unary, u32),
}

#[derive(Copy, Clone, Debug)]
enum Term {
    /// `uniform * varying`
    Scaled(u32, u32),
    Plain(Op),
}

#[derive(Clone, Debug)]
enum VInstr {
    Input(usize),
    /// First operand is always varying.
    Add(u32, Op),
    Mul(u32, Op),
    Neg(u32),
    Sum(Box<[Term]>),
    Pow(u32, f64),
    Unary(Unary, u32),
}

/// Points in row-major layout plus one loss weight per point.
#[derive(Clone, Copy, Debug)]
pub struct PointBatch<'a> {
    pub coords: &'a [f64],
    pub dim: usize,
    pub weights: &'a [f64],
}

impl<'a> PointBatch<'a> {
    pub fn new(coords: &'a [f64], dim: usize, weights: &'a [f64]) -> Self {
        assert_eq!(coords.len(), dim * weights.len(), "batch shape mismatch");
        Self {
            coords,
            dim,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Result of a weighted sum-of-squares evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct SquaredLoss {
    /// `sum_i w_i * root_r(x_i)^2` for each root `r`.
    pub per_root: Vec<f64>,
    /// Gradient of the total with respect to the program parameters.
    pub grad: Vec<f64>,
}

impl SquaredLoss {
    pub fn total(&self) -> f64 {
        self.per_root.iter().sum()
    }
}

/// A set of graph roots compiled for batch evaluation.
#[derive(Clone, Debug)]
pub struct Program {
    uniform: Vec<UInstr>,
    varying: Vec<VInstr>,
    roots: Vec<Op>,
    n_inputs: usize,
    n_params: usize,
}

struct Scratch {
    inputs: Vec<f64>,
    vals: Vec<f64>,
    adj: Vec<f64>,
}

impl Program {
    /// Compiles `roots`. Variables in `inputs` vary per point (columns of a
    /// [`PointBatch`]); variables in `params` are shared by all points.
    pub fn compile(
        graph: &Graph,
        roots: &[Expr],
        inputs: &[VarId],
        params: &[VarId],
    ) -> Result<Self, AutodiffError> {
        let input_col: HashMap<VarId, usize> =
            inputs.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let param_idx: HashMap<VarId, usize> =
            params.iter().enumerate().map(|(i, &v)| (v, i)).collect();

        let order = graph.reachable(roots);
        let mut is_uniform: HashMap<Expr, bool> = HashMap::with_capacity(order.len());
        let mut uses: HashMap<Expr, usize> = HashMap::with_capacity(order.len());
        for &n in &order {
            let node = graph.node(n);
            let uniform = match node {
                Node::Const(_) => true,
                Node::Var(v) => {
                    if param_idx.contains_key(v) {
                        true
                    } else if input_col.contains_key(v) {
                        false
                    } else {
                        return Err(AutodiffError::MissingBinding(*v));
                    }
                }
                _ => node.children().all(|c| is_uniform[&c]),
            };
            is_uniform.insert(n, uniform);
            for c in node.children() {
                *uses.entry(c).or_insert(0) += 1;
            }
        }
        for r in roots {
            *uses.entry(*r).or_insert(0) += 1;
        }

        // products consumed only by one varying sum are folded into it
        let mut fused: HashMap<Expr, (Expr, Expr)> = HashMap::new();
        for &n in &order {
            if is_uniform[&n] {
                continue;
            }
            if let Node::Sum(xs) = graph.node(n) {
                for &c in xs.iter() {
                    if let Node::Mul(a, b) = graph.node(c) {
                        if uses[&c] != 1 {
                            continue;
                        }
                        match (is_uniform[a], is_uniform[b]) {
                            (true, false) => {
                                fused.insert(c, (*a, *b));
                            }
                            (false, true) => {
                                fused.insert(c, (*b, *a));
                            }
                            _ => {}
                        }
                    }
                }
            }
        }

        let mut uniform = Vec::new();
        let mut varying = Vec::new();
        let mut slot: HashMap<Expr, Op> = HashMap::with_capacity(order.len());
        for &n in &order {
            if fused.contains_key(&n) {
                continue;
            }
            let node = graph.node(n);
            if is_uniform[&n] {
                let us = |e: &Expr| match slot[e] {
                    Op::U(s) => s,
                    Op::V(_) => unreachable!("uniform node with varying child"),
                };
                let instr = match node {
                    Node::Const(bits) => UInstr::Const(f64::from_bits(*bits)),
                    Node::Var(v) => UInstr::Param(param_idx[v]),
                    Node::Add(a, b) => UInstr::Add(us(a), us(b)),
                    Node::Mul(a, b) => UInstr::Mul(us(a), us(b)),
                    Node::Neg(a) => UInstr::Neg(us(a)),
                    Node::Sum(xs) => UInstr::Sum(xs.iter().map(us).collect()),
                    Node::Pow(a, bits) => UInstr::Pow(us(a), f64::from_bits(*bits)),
                    Node::Unary(op, a) => UInstr::Unary(*op, us(a)),
                };
                slot.insert(n, Op::U(uniform.len() as u32));
                uniform.push(instr);
            } else {
                let vs = |e: &Expr| match slot[e] {
                    Op::V(s) => s,
                    Op::U(_) => unreachable!("expected varying operand"),
                };
                let instr = match node {
                    Node::Var(v) => VInstr::Input(input_col[v]),
                    Node::Add(a, b) | Node::Mul(a, b) => {
                        let (sa, sb) = (slot[a], slot[b]);
                        let (first, other) = match sa {
                            Op::V(s) => (s, sb),
                            Op::U(_) => (vs(b), sa),
                        };
                        if matches!(node, Node::Add(..)) {
                            VInstr::Add(first, other)
                        } else {
                            VInstr::Mul(first, other)
                        }
                    }
                    Node::Neg(a) => VInstr::Neg(vs(a)),
                    Node::Sum(xs) => VInstr::Sum(
                        xs.iter()
                            .map(|c| match fused.get(c) {
                                Some((u, v)) => {
                                    let Op::U(us) = slot[u] else { unreachable!() };
                                    Term::Scaled(us, vs(v))
                                }
                                None => Term::Plain(slot[c]),
                            })
                            .collect(),
                    ),
                    Node::Pow(a, bits) => VInstr::Pow(vs(a), f64::from_bits(*bits)),
                    Node::Unary(op, a) => VInstr::Unary(*op, vs(a)),
                    Node::Const(_) => unreachable!("constants are uniform"),
                };
                slot.insert(n, Op::V(varying.len() as u32));
                varying.push(instr);
            }
        }

        Ok(Program {
            uniform,
            varying,
            roots: roots.iter().map(|r| slot[r]).collect(),
            n_inputs: inputs.len(),
            n_params: params.len(),
        })
    }

    pub fn n_roots(&self) -> usize {
        self.roots.len()
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    /// Number of compiled instructions (uniform, varying).
    pub fn size(&self) -> (usize, usize) {
        (self.uniform.len(), self.varying.len())
    }

    fn scratch(&self) -> Scratch {
        Scratch {
            inputs: vec![0.0; self.n_inputs * CHUNK],
            vals: vec![0.0; self.varying.len() * CHUNK],
            adj: vec![0.0; self.varying.len() * CHUNK],
        }
    }

    fn uniform_values(&self, params: &[f64]) -> Vec<f64> {
        assert_eq!(params.len(), self.n_params, "parameter count mismatch");
        let mut u: Vec<f64> = Vec::with_capacity(self.uniform.len());
        for ins in &self.uniform {
            let v = match ins {
                UInstr::Const(c) => *c,
                UInstr::Param(p) => params[*p],
                UInstr::Add(a, b) => u[*a as usize] + u[*b as usize],
                UInstr::Mul(a, b) => u[*a as usize] * u[*b as usize],
                UInstr::Neg(a) => -u[*a as usize],
                UInstr::Sum(xs) => {
                    let mut acc = u[xs[0] as usize];
                    for &x in &xs[1..] {
                        acc += u[x as usize];
                    }
                    acc
                }
                UInstr::Pow(a, p) => powf(u[*a as usize], *p),
                UInstr::Unary(op, a) => op.apply(u[*a as usize]),
            };
            u.push(v);
        }
        u
    }

    fn uniform_backward(&self, u: &[f64], mut uadj: Vec<f64>) -> Vec<f64> {
        let mut grad = vec![0.0; self.n_params];
        for s in (0..self.uniform.len()).rev() {
            let g = uadj[s];
            if g == 0.0 {
                continue;
            }
            match &self.uniform[s] {
                UInstr::Const(_) => {}
                UInstr::Param(p) => grad[*p] += g,
                UInstr::Add(a, b) => {
                    uadj[*a as usize] += g;
                    uadj[*b as usize] += g;
                }
                UInstr::Mul(a, b) => {
                    let (a, b) = (*a as usize, *b as usize);
                    uadj[a] += g * u[b];
                    uadj[b] += g * u[a];
                }
                UInstr::Neg(a) => uadj[*a as usize] -= g,
                UInstr::Sum(xs) => {
                    for &x in xs.iter() {
                        uadj[x as usize] += g;
                    }
                }
                UInstr::Pow(a, p) => {
                    let a = *a as usize;
                    uadj[a] += g * p * powf(u[a], p - 1.0);
                }
                UInstr::Unary(op, a) => {
                    let a = *a as usize;
                    uadj[a] += g * op.slope(u[a], u[s]);
                }
            }
        }
        grad
    }

    fn load_chunk(&self, batch: &PointBatch, start: usize, m: usize, inputs: &mut [f64]) {
        assert!(batch.dim >= self.n_inputs, "batch has too few columns");
        for i in 0..m {
            let row = &batch.coords[(start + i) * batch.dim..(start + i + 1) * batch.dim];
            for (c, &x) in row.iter().take(self.n_inputs).enumerate() {
                inputs[c * CHUNK + i] = x;
            }
        }
    }

    fn forward_chunk(&self, u: &[f64], inputs: &[f64], m: usize, vals: &mut [f64]) {
        for (k, ins) in self.varying.iter().enumerate() {
            let (prev, rest) = vals.split_at_mut(k * CHUNK);
            let out = &mut rest[..m];
            let prev: &[f64] = prev;
            let col = |s: u32| column(prev, s, m);
            match ins {
                VInstr::Input(c) => out.copy_from_slice(&inputs[c * CHUNK..c * CHUNK + m]),
                VInstr::Add(a, b) => {
                    let a = col(*a);
                    match *b {
                        Op::U(s) => {
                            let b = u[s as usize];
                            for i in 0..m {
                                out[i] = a[i] + b;
                            }
                        }
                        Op::V(s) => {
                            let b = col(s);
                            for i in 0..m {
                                out[i] = a[i] + b[i];
                            }
                        }
                    }
                }
                VInstr::Mul(a, b) => {
                    let a = col(*a);
                    match *b {
                        Op::U(s) => {
                            let b = u[s as usize];
                            for i in 0..m {
                                out[i] = a[i] * b;
                            }
                        }
                        Op::V(s) => {
                            let b = col(s);
                            for i in 0..m {
                                out[i] = a[i] * b[i];
                            }
                        }
                    }
                }
                VInstr::Neg(a) => {
                    let a = col(*a);
                    for i in 0..m {
                        out[i] = -a[i];
                    }
                }
                VInstr::Sum(terms) => {
                    for (t, term) in terms.iter().enumerate() {
                        match *term {
                            Term::Scaled(c, v) => {
                                let c = u[c as usize];
                                let v = col(v);
                                if t == 0 {
                                    for i in 0..m {
                                        out[i] = c * v[i];
                                    }
                                } else {
                                    for i in 0..m {
                                        out[i] += c * v[i];
                                    }
                                }
                            }
                            Term::Plain(Op::U(s)) => {
                                let c = u[s as usize];
                                if t == 0 {
                                    out.fill(c);
                                } else {
                                    for o in out.iter_mut() {
                                        *o += c;
                                    }
                                }
                            }
                            Term::Plain(Op::V(s)) => {
                                let v = col(s);
                                if t == 0 {
                                    out.copy_from_slice(v);
                                } else {
                                    for i in 0..m {
                                        out[i] += v[i];
                                    }
                                }
                            }
                        }
                    }
                }
                VInstr::Pow(a, p) => {
                    let a = col(*a);
                    let p = *p;
                    if p == 2.0 {
                        for i in 0..m {
                            out[i] = a[i] * a[i];
                        }
                    } else {
                        for i in 0..m {
                            out[i] = powf(a[i], p);
                        }
                    }
                }
                VInstr::Unary(op, a) => {
                    let a = col(*a);
                    let op = *op;
                    for i in 0..m {
                        out[i] = op.apply(a[i]);
                    }
                }
            }
        }
    }

    /// Accumulates adjoints of the varying slots into `adj` (pre-seeded by
    /// the caller) and of the uniform slots into `uadj`.
    fn backward_chunk(&self, u: &[f64], vals: &[f64], m: usize, adj: &mut [f64], uadj: &mut [f64]) {
        let col = |s: u32| column(vals, s, m);
        for k in (0..self.varying.len()).rev() {
            let (prev, rest) = adj.split_at_mut(k * CHUNK);
            let ao = &rest[..m];
            if ao.iter().all(|&g| g == 0.0) {
                continue;
            }
            match &self.varying[k] {
                VInstr::Input(_) => {}
                VInstr::Add(a, b) => {
                    let da = column_mut(prev, *a, m);
                    for i in 0..m {
                        da[i] += ao[i];
                    }
                    match *b {
                        Op::U(s) => uadj[s as usize] += ao.iter().sum::<f64>(),
                        Op::V(s) => {
                            let db = column_mut(prev, s, m);
                            for i in 0..m {
                                db[i] += ao[i];
                            }
                        }
                    }
                }
                VInstr::Mul(a, b) => {
                    let av = col(*a);
                    match *b {
                        Op::U(s) => {
                            let bv = u[s as usize];
                            let mut dot = 0.0;
                            for i in 0..m {
                                dot += ao[i] * av[i];
                            }
                            uadj[s as usize] += dot;
                            let da = column_mut(prev, *a, m);
                            for i in 0..m {
                                da[i] += ao[i] * bv;
                            }
                        }
                        Op::V(s) => {
                            let bv = col(s);
                            {
                                let da = column_mut(prev, *a, m);
                                for i in 0..m {
                                    da[i] += ao[i] * bv[i];
                                }
                            }
                            let db = column_mut(prev, s, m);
                            for i in 0..m {
                                db[i] += ao[i] * av[i];
                            }
                        }
                    }
                }
                VInstr::Neg(a) => {
                    let da = column_mut(prev, *a, m);
                    for i in 0..m {
                        da[i] -= ao[i];
                    }
                }
                VInstr::Sum(terms) => {
                    for term in terms.iter() {
                        match *term {
                            Term::Scaled(c, v) => {
                                let vv = col(v);
                                let mut dot = 0.0;
                                for i in 0..m {
                                    dot += ao[i] * vv[i];
                                }
                                uadj[c as usize] += dot;
                                let cv = u[c as usize];
                                let dv = column_mut(prev, v, m);
                                for i in 0..m {
                                    dv[i] += cv * ao[i];
                                }
                            }
                            Term::Plain(Op::U(s)) => uadj[s as usize] += ao.iter().sum::<f64>(),
                            Term::Plain(Op::V(s)) => {
                                let ds = column_mut(prev, s, m);
                                for i in 0..m {
                                    ds[i] += ao[i];
                                }
                            }
                        }
                    }
                }
                VInstr::Pow(a, p) => {
                    let av = col(*a);
                    let p = *p;
                    let da = column_mut(prev, *a, m);
                    if p == 2.0 {
                        for i in 0..m {
                            da[i] += ao[i] * 2.0 * av[i];
                        }
                    } else {
                        for i in 0..m {
                            da[i] += ao[i] * p * powf(av[i], p - 1.0);
                        }
                    }
                }
                VInstr::Unary(op, a) => {
                    let av = col(*a);
                    let yv = col(k as u32);
                    let op = *op;
                    let da = column_mut(prev, *a, m);
                    for i in 0..m {
                        da[i] += ao[i] * op.slope(av[i], yv[i]);
                    }
                }
            }
        }
    }

    fn map_chunks<T, F>(&self, n_points: usize, exec: Exec, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize, usize, &mut Scratch) -> T + Sync,
    {
        let n_chunks = n_points.div_ceil(CHUNK);
        let run = |c: usize, s: &mut Scratch| {
            let start = c * CHUNK;
            f(start, CHUNK.min(n_points - start), s)
        };
        match exec {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                (0..n_chunks)
                    .into_par_iter()
                    .map_init(|| self.scratch(), |s, c| run(c, s))
                    .collect()
            }
            _ => {
                let mut s = self.scratch();
                (0..n_chunks).map(|c| run(c, &mut s)).collect()
            }
        }
    }

    /// Root values at every point, row-major `n_points x n_roots`.
    pub fn eval(&self, params: &[f64], coords: &[f64], dim: usize, exec: Exec) -> Vec<f64> {
        let u = self.uniform_values(params);
        let n_points = if dim == 0 { 0 } else { coords.len() / dim };
        let weights = vec![0.0; n_points];
        let batch = PointBatch::new(coords, dim, &weights);
        let nr = self.roots.len();
        let parts = self.map_chunks(n_points, exec, |start, m, s| {
            self.load_chunk(&batch, start, m, &mut s.inputs);
            self.forward_chunk(&u, &s.inputs, m, &mut s.vals);
            let mut out = vec![0.0; m * nr];
            for (r, root) in self.roots.iter().enumerate() {
                for i in 0..m {
                    out[i * nr + r] = match *root {
                        Op::U(k) => u[k as usize],
                        Op::V(k) => s.vals[k as usize * CHUNK + i],
                    };
                }
            }
            out
        });
        parts.concat()
    }

    /// Weighted sums of squared roots, without gradients.
    pub fn squared_loss(&self, params: &[f64], batch: &PointBatch, exec: Exec) -> Vec<f64> {
        let u = self.uniform_values(params);
        let parts = self.map_chunks(batch.len(), exec, |start, m, s| {
            self.load_chunk(batch, start, m, &mut s.inputs);
            self.forward_chunk(&u, &s.inputs, m, &mut s.vals);
            let w = &batch.weights[start..start + m];
            self.roots
                .iter()
                .map(|root| match *root {
                    Op::U(k) => {
                        let v = u[k as usize];
                        w.iter().map(|wi| wi * v * v).sum()
                    }
                    Op::V(k) => {
                        let col = &s.vals[k as usize * CHUNK..k as usize * CHUNK + m];
                        w.iter().zip(col).map(|(wi, v)| wi * v * v).sum()
                    }
                })
                .collect::<Vec<f64>>()
        });
        pairwise_sum(parts).unwrap_or_else(|| vec![0.0; self.roots.len()])
    }

    /// `sum_i w_i * sum_r root_r(x_i)^2`, split by root, and its gradient
    /// with respect to the parameters.
    pub fn squared_loss_grad(&self, params: &[f64], batch: &PointBatch, exec: Exec) -> SquaredLoss {
        let u = self.uniform_values(params);
        let nr = self.roots.len();
        let nu = self.uniform.len();
        let parts = self.map_chunks(batch.len(), exec, |start, m, s| {
            self.load_chunk(batch, start, m, &mut s.inputs);
            self.forward_chunk(&u, &s.inputs, m, &mut s.vals);
            s.adj.fill(0.0);
            let w = &batch.weights[start..start + m];
            // [per-root losses | uniform adjoints]
            let mut out = vec![0.0; nr + nu];
            for (r, root) in self.roots.iter().enumerate() {
                match *root {
                    Op::U(k) => {
                        let v = u[k as usize];
                        let wsum: f64 = w.iter().sum();
                        out[r] = wsum * v * v;
                        out[nr + k as usize] += 2.0 * wsum * v;
                    }
                    Op::V(k) => {
                        let base = k as usize * CHUNK;
                        let mut l = 0.0;
                        for i in 0..m {
                            let v = s.vals[base + i];
                            l += w[i] * v * v;
                            s.adj[base + i] += 2.0 * w[i] * v;
                        }
                        out[r] = l;
                    }
                }
            }
            let (_, uadj) = out.split_at_mut(nr);
            self.backward_chunk(&u, &s.vals, m, &mut s.adj, uadj);
            out
        });
        let total = pairwise_sum(parts).unwrap_or_else(|| vec![0.0; nr + nu]);
        let (per_root, uadj) = total.split_at(nr);
        SquaredLoss {
            per_root: per_root.to_vec(),
            grad: self.uniform_backward(&u, uadj.to_vec()),
        }
    }
}

#[inline]
fn column(vals: &[f64], s: u32, m: usize) -> &[f64] {
    &vals[s as usize * CHUNK..s as usize * CHUNK + m]
}

#[inline]
fn column_mut(vals: &mut [f64], s: u32, m: usize) -> &mut [f64] {
    &mut vals[s as usize * CHUNK..s as usize * CHUNK + m]
}

/// Elementwise sum of equal-length vectors, combined as a balanced binary
/// tree in input order.
pub(crate) fn pairwise_sum(mut parts: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    if parts.is_empty() {
        return None;
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Bindings;

    /// f(x, y; a, b) = softplus(a*x + b*y) * tanh(x) + a^2
    fn sample_graph() -> (Graph, Expr, [VarId; 2], [VarId; 2]) {
        let mut g = Graph::new();
        let (x, xe) = g.new_var();
        let (y, ye) = g.new_var();
        let (a, ae) = g.new_var();
        let (b, be) = g.new_var();
        let ax = g.mul(ae, xe);
        let by = g.mul(be, ye);
        let s = g.sum(&[ax, by, ae]);
        let sp = g.softplus(s);
        let t = g.tanh(xe);
        let p = g.mul(sp, t);
        let a2 = g.square(ae);
        let f = g.add(p, a2);
        let dx = g.derive(f, x);
        let lap = g.derive(dx, x);
        (g, lap, [x, y], [a, b])
    }

    fn points(n: usize) -> Vec<f64> {
        (0..n)
            .flat_map(|i| {
                let t = i as f64 / n as f64;
                [(7.1 * t).sin(), (3.3 * t + 0.2).cos()]
            })
            .collect()
    }

    #[test]
    fn batch_eval_matches_single_point_evaluation() {
        let (g, root, [x, y], [a, b]) = sample_graph();
        let prog = Program::compile(&g, &[root], &[x, y], &[a, b]).unwrap();
        let pts = points(150);
        let params = [0.7, -1.3];
        let vals = prog.eval(&params, &pts, 2, Exec::Sequential);
        for i in 0..150 {
            let bind = Bindings::new()
                .with(x, pts[2 * i])
                .with(y, pts[2 * i + 1])
                .with(a, params[0])
                .with(b, params[1]);
            assert_eq!(vals[i], g.evaluate(root, &bind).unwrap());
        }
    }

    #[test]
    fn loss_gradient_matches_single_point_gradients() {
        let (g, root, [x, y], [a, b]) = sample_graph();
        let prog = Program::compile(&g, &[root], &[x, y], &[a, b]).unwrap();
        let n = 130;
        let pts = points(n);
        let w: Vec<f64> = (0..n).map(|i| 1.0 + (i % 3) as f64).collect();
        let params = [0.4, 0.9];
        let res = prog.squared_loss_grad(&params, &PointBatch::new(&pts, 2, &w), Exec::Sequential);

        // oracle: per-point derive + evaluate of w * f^2
        let mut g2 = g.clone();
        let sq = g2.square(root);
        let (da, db) = (g2.derive(sq, a), g2.derive(sq, b));
        let mut expect = [0.0, 0.0];
        let mut loss = 0.0;
        for i in 0..n {
            let bind = Bindings::new()
                .with(x, pts[2 * i])
                .with(y, pts[2 * i + 1])
                .with(a, params[0])
                .with(b, params[1]);
            loss += w[i] * g2.evaluate(sq, &bind).unwrap();
            expect[0] += w[i] * g2.evaluate(da, &bind).unwrap();
            expect[1] += w[i] * g2.evaluate(db, &bind).unwrap();
        }
        assert!((res.total() - loss).abs() <= 1e-12 * loss.abs());
        for k in 0..2 {
            assert!(
                (res.grad[k] - expect[k]).abs() <= 1e-12 * expect[k].abs().max(1.0),
                "{} vs {}",
                res.grad[k],
                expect[k]
            );
        }
    }

    #[test]
    fn parallel_and_sequential_are_bit_identical() {
        let (g, root, [x, y], [a, b]) = sample_graph();
        let prog = Program::compile(&g, &[root], &[x, y], &[a, b]).unwrap();
        let n = 1000;
        let pts = points(n);
        let w = vec![1.0 / n as f64; n];
        let batch = PointBatch::new(&pts, 2, &w);
        let s = prog.squared_loss_grad(&[0.3, 0.1], &batch, Exec::Sequential);
        let p = prog.squared_loss_grad(&[0.3, 0.1], &batch, Exec::Parallel);
        assert_eq!(s, p);
    }

    #[test]
    fn unbound_variable_fails_compilation() {
        let (g, root, [x, _y], [a, b]) = sample_graph();
        assert!(matches!(
            Program::compile(&g, &[root], &[x], &[a, b]),
            Err(AutodiffError::MissingBinding(_))
        ));
    }

    #[test]
    fn uniform_roots_are_supported() {
        let mut g = Graph::new();
        let (x, _) = g.new_var();
        let (a, ae) = g.new_var();
        let r = g.scale(3.0, ae);
        let prog = Program::compile(&g, &[r], &[x], &[a]).unwrap();
        let pts = [0.0, 1.0, 2.0];
        let w = [0.5, 0.5, 0.5];
        let res = prog.squared_loss_grad(&[2.0], &PointBatch::new(&pts, 1, &w), Exec::Sequential);
        assert_eq!(res.total(), 1.5 * 36.0);
        assert_eq!(res.grad, vec![1.5 * 2.0 * 6.0 * 3.0]);
    }

    #[test]
    fn pairwise_sum_combines_everything() {
        let parts = (0..7).map(|i| vec![i as f64, 1.0]).collect();
        assert_eq!(pairwise_sum(parts), Some(vec![21.0, 7.0]));
        assert_eq!(pairwise_sum(vec![]), None);
    }
}
