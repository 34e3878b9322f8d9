use std::collections::HashMap;

use super::kernels;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
///
/// Handles are plain indices; using a handle with a graph other than the one
/// that created it is a logic error.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The primitive that produced a node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Op {
    Leaf,
    MatVec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Softplus(Var),
    Sigmoid(Var),
    Sum(Var),
    SqNorm(Var),
    Dot(Var, Var),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatVec(..) => "matvec",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Softplus(..) => "softplus",
            Op::Sigmoid(..) => "sigmoid",
            Op::Sum(..) => "sum",
            Op::SqNorm(..) => "sq_norm",
            Op::Dot(..) => "dot",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tangent: Option<Var>,
    /// Elementwise derivative cached by the forward pass (softplus only).
    slope: Option<Tensor>,
}

/// Append-only computation graph.
///
/// Every primitive evaluates eagerly and records an edge. When an input
/// carries a tangent (see [`Graph::leaf_with_tangent`]), the output tangent is
/// built from further primitives on the same graph, so the tangent values are
/// themselves differentiable by [`Graph::grad`]. That is what makes the
/// gradient of a loss containing `v^T J v` available without materializing
/// Jacobians. Tangent-of-tangent is never formed.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    suppress_tangents: bool,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn op(&self, v: Var) -> Op {
        self.nodes[v.0].op
    }

    pub fn parents(&self, v: Var) -> Vec<Var> {
        match self.nodes[v.0].op {
            Op::Leaf => vec![],
            Op::Scale(a, _) | Op::Softplus(a) | Op::Sigmoid(a) | Op::Sum(a) | Op::SqNorm(a) => {
                vec![a]
            }
            Op::MatVec(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Dot(a, b) => {
                vec![a, b]
            }
        }
    }

    /// Forward-mode tangent of `v`, if any input upstream of it carried one.
    pub fn tangent(&self, v: Var) -> Option<Var> {
        self.nodes[v.0].tangent
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Same as [`Graph::leaf`]; reads better for values never differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value)
    }

    /// Records an input `x` carrying the direction `v` for forward-mode
    /// differentiation.
    pub fn leaf_with_tangent(&mut self, x: Tensor, v: Tensor) -> Result<Var> {
        if x.shape() != v.shape() {
            return Err(Error::Shape {
                op: "jvp",
                lhs: x.shape().to_vec(),
                rhs: v.shape().to_vec(),
            });
        }
        let t = self.leaf(v);
        let out = self.leaf(x);
        self.nodes[out.0].tangent = Some(t);
        Ok(out)
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op,
            tangent: None,
            slope: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op, value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        Ok(self.push(op, value))
    }

    fn wants_tangent(&self, inputs: &[Var]) -> bool {
        !self.suppress_tangents && inputs.iter().any(|v| self.nodes[v.0].tangent.is_some())
    }

    /// Builds the tangent of `out` with nested tangent propagation disabled.
    fn attach_tangent(
        &mut self,
        out: Var,
        rule: impl FnOnce(&mut Graph) -> Result<Var>,
    ) -> Result<()> {
        self.suppress_tangents = true;
        let t = rule(self);
        self.suppress_tangents = false;
        let t = t?;
        debug_assert_eq!(self.value(t).shape(), self.value(out).shape());
        self.nodes[out.0].tangent = Some(t);
        Ok(())
    }

    fn zeros_like(&mut self, v: Var) -> Var {
        let z = Tensor::zeros(self.value(v).shape());
        self.constant(z)
    }

    /// Sum of optional terms; `None` when there is no term at all.
    fn add_terms(&mut self, a: Option<Var>, b: Option<Var>) -> Result<Option<Var>> {
        Ok(match (a, b) {
            (Some(a), Some(b)) => Some(self.add(a, b)?),
            (t, None) | (None, t) => t,
        })
    }

    /// Matrix-vector product `W x`; for a batch `x` (one input per row) this
    /// is `X W^T`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let value = kernels::matvec(self.value(w), self.value(x))?;
        let out = self.record(Op::MatVec(w, x), value)?;
        if self.wants_tangent(&[w, x]) {
            let (tw, tx) = (self.tangent(w), self.tangent(x));
            self.attach_tangent(out, |g| {
                let a = tx.map(|tx| g.matvec(w, tx)).transpose()?;
                let b = tw.map(|tw| g.matvec(tw, x)).transpose()?;
                Ok(g.add_terms(a, b)?.expect("some input has a tangent"))
            })?;
        }
        Ok(out)
    }

    /// Elementwise `a + b`; `b` may be a row vector added to every row of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::zip("add", self.value(a), self.value(b), |x, y| x + y)?;
        let out = self.record(Op::Add(a, b), value)?;
        if self.wants_tangent(&[a, b]) {
            let (ta, tb) = (self.tangent(a), self.tangent(b));
            self.attach_tangent(out, |g| match (ta, tb) {
                (Some(ta), None) => Ok(ta),
                (ta, Some(tb)) => {
                    let ta = ta.unwrap_or_else(|| g.zeros_like(a));
                    g.add(ta, tb)
                }
                (None, None) => unreachable!(),
            })?;
        }
        Ok(out)
    }

    /// Elementwise `a - b`, with the same broadcasting rule as [`Graph::add`].
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::zip("sub", self.value(a), self.value(b), |x, y| x - y)?;
        let out = self.record(Op::Sub(a, b), value)?;
        if self.wants_tangent(&[a, b]) {
            let (ta, tb) = (self.tangent(a), self.tangent(b));
            self.attach_tangent(out, |g| match (ta, tb) {
                (Some(ta), None) => Ok(ta),
                (ta, Some(tb)) => {
                    let ta = ta.unwrap_or_else(|| g.zeros_like(a));
                    g.sub(ta, tb)
                }
                (None, None) => unreachable!(),
            })?;
        }
        Ok(out)
    }

    /// Elementwise (Hadamard) product; `b` may be a broadcast row vector.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::zip("mul", self.value(a), self.value(b), |x, y| x * y)?;
        let out = self.record(Op::Mul(a, b), value)?;
        if self.wants_tangent(&[a, b]) {
            let (ta, tb) = (self.tangent(a), self.tangent(b));
            self.attach_tangent(out, |g| {
                let x = ta.map(|ta| g.mul(ta, b)).transpose()?;
                let y = tb.map(|tb| g.mul(a, tb)).transpose()?;
                Ok(g.add_terms(x, y)?.expect("some input has a tangent"))
            })?;
        }
        Ok(out)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).map(|x| c * x);
        let out = self.record(Op::Scale(a, c), value)?;
        if self.wants_tangent(&[a]) {
            let ta = self.tangent(a).unwrap();
            self.attach_tangent(out, |g| g.scale(ta, c))?;
        }
        Ok(out)
    }

    /// `ln(1 + e^x)` elementwise.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let input = self.value(a);
        let mut value = Vec::with_capacity(input.len());
        let mut slope = Vec::with_capacity(input.len());
        for &x in input.data() {
            let (y, s) = kernels::softplus_with_slope(x);
            value.push(y);
            slope.push(s);
        }
        let shape = input.shape().to_vec();
        let slope = Tensor::from_parts(shape.clone(), slope);
        let out = self.record(Op::Softplus(a), Tensor::from_parts(shape, value))?;
        if self.wants_tangent(&[a]) {
            let ta = self.tangent(a).unwrap();
            let s = self.push(Op::Sigmoid(a), slope.clone());
            self.attach_tangent(out, |g| g.mul(s, ta))?;
        }
        self.nodes[out.0].slope = Some(slope);
        Ok(out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(kernels::sigmoid);
        let out = self.record(Op::Sigmoid(a), value)?;
        if self.wants_tangent(&[a]) {
            let ta = self.tangent(a).unwrap();
            self.attach_tangent(out, |g| {
                let sq = g.mul(out, out)?;
                let d = g.sub(out, sq)?;
                g.mul(d, ta)
            })?;
        }
        Ok(out)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        let out = self.record(Op::Sum(a), value)?;
        if self.wants_tangent(&[a]) {
            let ta = self.tangent(a).unwrap();
            self.attach_tangent(out, |g| g.sum(ta))?;
        }
        Ok(out)
    }

    /// Squared L2 norm over all elements, as a scalar.
    pub fn sq_norm(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).data().iter().map(|x| x * x).sum());
        let out = self.record(Op::SqNorm(a), value)?;
        if self.wants_tangent(&[a]) {
            let ta = self.tangent(a).unwrap();
            self.attach_tangent(out, |g| {
                let d = g.dot(a, ta)?;
                g.scale(d, 2.0)
            })?;
        }
        Ok(out)
    }

    /// Full contraction `sum_ij a_ij b_ij` of two same-shaped tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = Tensor::scalar(kernels::dot("dot", self.value(a), self.value(b))?);
        let out = self.record(Op::Dot(a, b), value)?;
        if self.wants_tangent(&[a, b]) {
            let (ta, tb) = (self.tangent(a), self.tangent(b));
            self.attach_tangent(out, |g| {
                let x = ta.map(|ta| g.dot(ta, b)).transpose()?;
                let y = tb.map(|tb| g.dot(a, tb)).transpose()?;
                Ok(g.add_terms(x, y)?.expect("some input has a tangent"))
            })?;
        }
        Ok(out)
    }

    /// Reverse-mode gradient of the scalar `output` with respect to `wrt`.
    ///
    /// Requested nodes that `output` does not depend on get zero gradients.
    pub fn grad(&self, output: Var, wrt: &[Var]) -> Result<GradientMap> {
        let out_value = self.value(output);
        if out_value.len() != 1 {
            return Err(Error::NonScalar(out_value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        adj[output.0] = Some(Tensor::filled(out_value.shape(), 1.0));

        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.backprop_node(i, &g, &mut adj);
            adj[i] = Some(g);
        }

        let mut index = HashMap::with_capacity(wrt.len());
        let grads = wrt
            .iter()
            .enumerate()
            .map(|(k, v)| {
                index.entry(*v).or_insert(k);
                adj.get(v.0)
                    .and_then(|g| g.clone())
                    .unwrap_or_else(|| Tensor::zeros(self.value(*v).shape()))
            })
            .collect();
        Ok(GradientMap { index, grads })
    }

    fn backprop_node(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let mut send = |v: Var, contribution: Tensor| match &mut adj[v.0] {
            Some(acc) => kernels::accumulate(acc, &contribution),
            slot @ None => *slot = Some(contribution),
        };
        // Reduces a gradient of the broadcast output back to a row operand.
        let fit = |target: Var, t: Tensor| {
            if t.shape() == self.value(target).shape() {
                t
            } else {
                kernels::sum_rows(&t)
            }
        };
        match node.op {
            Op::Leaf => {}
            Op::MatVec(w, x) => {
                let (dw, dx) = kernels::matvec_backward(self.value(w), self.value(x), g);
                send(w, dw);
                send(x, dx);
            }
            Op::Add(a, b) => {
                send(a, g.clone());
                send(b, fit(b, g.clone()));
            }
            Op::Sub(a, b) => {
                send(a, g.clone());
                send(b, fit(b, g.map(|v| -v)));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                let da = kernels::zip("mul", g, vb, |x, y| x * y).expect("shapes checked");
                let db = kernels::zip("mul", g, va, |x, y| x * y).expect("shapes checked");
                send(a, da);
                send(b, fit(b, db));
            }
            Op::Scale(a, c) => send(a, g.map(|v| c * v)),
            Op::Softplus(a) => {
                let slope = node.slope.as_ref().expect("softplus caches its slope");
                let d = kernels::zip("softplus", g, slope, |gv, s| gv * s).expect("same shape");
                send(a, d);
            }
            Op::Sigmoid(a) => {
                let d = kernels::zip("sigmoid", g, &node.value, |gv, s| gv * s * (1.0 - s))
                    .expect("same shape");
                send(a, d);
            }
            Op::Sum(a) => {
                let gv = g.data()[0];
                send(a, Tensor::filled(self.value(a).shape(), gv));
            }
            Op::SqNorm(a) => {
                let gv = g.data()[0];
                send(a, self.value(a).map(|x| 2.0 * gv * x));
            }
            Op::Dot(a, b) => {
                let gv = g.data()[0];
                send(a, self.value(b).map(|x| gv * x));
                send(b, self.value(a).map(|x| gv * x));
            }
        }
    }
}

/// Gradients keyed by the graph nodes they were requested for.
#[derive(Clone, Debug)]
pub struct GradientMap {
    index: HashMap<Var, usize>,
    grads: Vec<Tensor>,
}

impl GradientMap {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.index.get(&v).map(|&k| &self.grads[k])
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Gradients in the order they were requested.
    pub fn into_vec(self) -> Vec<Tensor> {
        self.grads
    }
}

/// Evaluates `f` at `x` and its directional derivative `J_f(x) v`.
///
/// Returns `(f(x), J v)` as graph nodes; both can feed losses that are later
/// passed to [`Graph::grad`].
pub fn jvp<F>(graph: &mut Graph, x: &Tensor, v: &Tensor, f: F) -> Result<(Var, Var)>
where
    F: FnOnce(&mut Graph, Var) -> Result<Var>,
{
    let input = graph.leaf_with_tangent(x.clone(), v.clone())?;
    let out = f(graph, input)?;
    let tangent = match graph.tangent(out) {
        Some(t) => t,
        None => graph.zeros_like(out),
    };
    Ok((out, tangent))
}
