//! Define-then-run operator graphs with hand-derived backward rules.
//!
//! A [`Graph`] is built once per configuration (shapes are fixed at build
//! time), then evaluated many times against fresh input bindings. Forward
//! evaluation is deterministic: nodes run in insertion order, which is a
//! topological order by construction.
//!
//! Backward rules are written per operator rather than synthesized; the
//! operator set is small and fixed by the losses this crate computes.
//! Iverson-bracket nodes ([`Op::Less`], [`Op::Greater`], reprojection
//! validity) are forward-only: they multiply losses as constants and no
//! gradient is defined for them.

mod backward;
mod conv;
mod gradcheck;
mod op;
#[cfg(test)]
mod tests;

pub use gradcheck::{grad_check, GradCheckReport};
pub use op::Op;

pub(crate) use conv::ConvDims;

use crate::array::{Array, Scalar};
use crate::error::{Error, Result};
use crate::geometry::{self, Intrinsics};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

pub(crate) struct Node<T: Scalar> {
    pub op: Op<T>,
    pub inputs: Vec<NodeId>,
    pub shape: Vec<usize>,
}

/// Operator graph over arrays of `T`.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    input_shapes: Vec<Vec<usize>>,
    input_nodes: Vec<NodeId>,
}

/// Reusable forward workspace: one value buffer per node plus per-node
/// scratch for the convolution lowering.
pub struct Evaluation<T: Scalar> {
    values: Vec<Array<T>>,
    scratch: Vec<Vec<T>>,
}

impl<T: Scalar> Evaluation<T> {
    pub fn value(&self, id: NodeId) -> &Array<T> {
        &self.values[id.0]
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            input_shapes: Vec::new(),
            input_nodes: Vec::new(),
        }
    }

    pub fn num_inputs(&self) -> usize {
        self.input_shapes.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn input_nodes(&self) -> &[NodeId] {
        &self.input_nodes
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.name()
    }

    pub fn node_inputs(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].inputs
    }

    /// For an input node, its binding slot; `None` otherwise.
    pub fn input_index(&self, id: NodeId) -> Option<usize> {
        match self.nodes[id.0].op {
            Op::Input(idx) => Some(idx),
            _ => None,
        }
    }

    fn push(&mut self, op: Op<T>, inputs: Vec<NodeId>) -> NodeId {
        for id in &inputs {
            assert!(id.0 < self.nodes.len(), "node id out of range");
        }
        let shapes: Vec<&[usize]> = inputs
            .iter()
            .map(|id| self.nodes[id.0].shape.as_slice())
            .collect();
        let shape = op.infer_shape(&shapes).unwrap_or_else(|| {
            panic!(
                "graph node {} ({}): invalid input shapes {:?}",
                self.nodes.len(),
                op.name(),
                shapes
            )
        });
        self.nodes.push(Node { op, inputs, shape });
        NodeId(self.nodes.len() - 1)
    }

    // ---- leaves ----

    /// Declare a graph input with a fixed shape; bound at evaluation time in
    /// declaration order.
    pub fn input(&mut self, shape: &[usize]) -> NodeId {
        let index = self.input_shapes.len();
        self.input_shapes.push(shape.to_vec());
        self.nodes.push(Node {
            op: Op::Input(index),
            inputs: vec![],
            shape: shape.to_vec(),
        });
        let id = NodeId(self.nodes.len() - 1);
        self.input_nodes.push(id);
        id
    }

    pub fn constant(&mut self, value: Array<T>) -> NodeId {
        let shape = value.shape().to_vec();
        self.nodes.push(Node {
            op: Op::Const(value),
            inputs: vec![],
            shape,
        });
        NodeId(self.nodes.len() - 1)
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add, vec![a, b])
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub, vec![a, b])
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul, vec![a, b])
    }
    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Div, vec![a, b])
    }
    pub fn min_elem(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MinElem, vec![a, b])
    }
    pub fn max_elem(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MaxElem, vec![a, b])
    }

    /// `x * mul + add`
    pub fn affine(&mut self, x: NodeId, mul: f64, add: f64) -> NodeId {
        self.push(Op::Affine { mul, add }, vec![x])
    }
    pub fn scale(&mut self, x: NodeId, mul: f64) -> NodeId {
        self.affine(x, mul, 0.0)
    }
    pub fn abs(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Abs, vec![x])
    }
    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Exp, vec![x])
    }
    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sigmoid, vec![x])
    }
    pub fn recip(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Recip, vec![x])
    }
    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        self.push(Op::LeakyRelu { slope }, vec![x])
    }
    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        self.push(Op::Clamp { lo, hi }, vec![x])
    }

    // ---- structure ----

    pub fn conv2d(&mut self, x: NodeId, weight: NodeId, bias: NodeId, stride: usize, pad: usize) -> NodeId {
        self.push(Op::Conv2d { stride, pad }, vec![x, weight, bias])
    }
    pub fn avg_pool(&mut self, x: NodeId, k: usize, stride: usize, reflect: bool) -> NodeId {
        self.push(Op::AvgPool { k, stride, reflect }, vec![x])
    }
    pub fn upsample_nearest(&mut self, x: NodeId, factor: usize) -> NodeId {
        self.push(Op::UpsampleNearest { factor }, vec![x])
    }
    pub fn concat0(&mut self, parts: &[NodeId]) -> NodeId {
        self.push(Op::Concat0, parts.to_vec())
    }
    pub fn slice0(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        self.push(Op::Slice0 { start, len }, vec![x])
    }
    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        self.push(Op::Reshape { shape: shape.to_vec() }, vec![x])
    }

    // ---- reductions ----

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        self.push(Op::MeanAll, vec![x])
    }
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        self.push(Op::SumAll, vec![x])
    }
    pub fn mean_axis0(&mut self, x: NodeId) -> NodeId {
        self.push(Op::MeanAxis0, vec![x])
    }
    pub fn mean_spatial(&mut self, x: NodeId) -> NodeId {
        self.push(Op::MeanSpatial, vec![x])
    }
    pub fn div_bcast(&mut self, x: NodeId, scalar: NodeId) -> NodeId {
        self.push(Op::DivBcast, vec![x, scalar])
    }

    pub fn diff_x(&mut self, x: NodeId) -> NodeId {
        self.push(Op::DiffX, vec![x])
    }
    pub fn diff_y(&mut self, x: NodeId) -> NodeId {
        self.push(Op::DiffY, vec![x])
    }

    // ---- masks and gradient control ----

    pub fn less(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Less, vec![a, b])
    }
    pub fn greater(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Greater, vec![a, b])
    }
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Detach, vec![x])
    }

    // ---- view synthesis ----

    pub fn pose_to_matrix(&mut self, v6: NodeId) -> NodeId {
        self.push(Op::PoseToMatrix, vec![v6])
    }
    pub fn reproject(&mut self, depth: NodeId, mat: NodeId, intr: Intrinsics) -> NodeId {
        self.push(Op::Reproject { intr }, vec![depth, mat])
    }
    pub fn reproject_validity(&mut self, depth: NodeId, mat: NodeId, intr: Intrinsics) -> NodeId {
        self.push(Op::ReprojectValidity { intr }, vec![depth, mat])
    }
    pub fn bilinear_sample(&mut self, source: NodeId, coords: NodeId) -> NodeId {
        self.push(Op::BilinearSample, vec![source, coords])
    }

    // ---- evaluation ----

    pub fn evaluation(&self) -> Evaluation<T> {
        Evaluation {
            values: self
                .nodes
                .iter()
                .map(|n| Array::zeros(&n.shape))
                .collect(),
            scratch: (0..self.nodes.len()).map(|_| Vec::new()).collect(),
        }
    }

    /// Run the graph against the given input bindings, filling `eval`.
    pub fn forward(&self, inputs: &[&Array<T>], eval: &mut Evaluation<T>) -> Result<()> {
        if inputs.len() != self.input_shapes.len() {
            return Err(Error::InvalidInput(format!(
                "graph expects {} inputs, got {}",
                self.input_shapes.len(),
                inputs.len()
            )));
        }
        for (i, (arr, shape)) in inputs.iter().zip(&self.input_shapes).enumerate() {
            if arr.shape() != shape.as_slice() {
                return Err(Error::shape(
                    format!("graph input #{i}"),
                    shape,
                    arr.shape(),
                ));
            }
        }
        for i in 0..self.nodes.len() {
            let (before, rest) = eval.values.split_at_mut(i);
            let out = &mut rest[0];
            let node = &self.nodes[i];
            let args: Vec<&Array<T>> = node.inputs.iter().map(|id| &before[id.0]).collect();
            eval_node(node, &args, inputs, &mut eval.scratch[i], out);
        }
        Ok(())
    }

    /// Convenience: evaluate and return the value of one node.
    pub fn eval_node(&self, inputs: &[&Array<T>], node: NodeId) -> Result<Array<T>> {
        let mut eval = self.evaluation();
        self.forward(inputs, &mut eval)?;
        Ok(eval.value(node).clone())
    }

    /// Reverse sweep from `seed_node`, seeded with `seed`; returns one
    /// gradient per graph input (zeros where no differentiable path exists).
    pub fn backward(
        &self,
        eval: &Evaluation<T>,
        seed_node: NodeId,
        seed: &Array<T>,
    ) -> Result<Vec<Array<T>>> {
        let wrt = self.input_nodes.clone();
        self.backward_wrt(eval, seed_node, seed, &wrt)
    }

    /// Reverse sweep retaining gradients for an explicit set of nodes.
    ///
    /// Requesting the gradient of a forward-only node (an Iverson mask or a
    /// validity map) is an error: those are constants in backward. Subgraphs
    /// that cannot reach any requested node are skipped entirely.
    pub fn backward_wrt(
        &self,
        eval: &Evaluation<T>,
        seed_node: NodeId,
        seed: &Array<T>,
        wrt: &[NodeId],
    ) -> Result<Vec<Array<T>>> {
        for id in wrt {
            let op = &self.nodes[id.0].op;
            if !op.differentiable() {
                return Err(Error::NonDifferentiable {
                    node: id.0,
                    op: op.name(),
                });
            }
        }
        if seed.shape() != self.nodes[seed_node.0].shape.as_slice() {
            return Err(Error::shape(
                "backward seed",
                &self.nodes[seed_node.0].shape,
                seed.shape(),
            ));
        }
        // needs[i]: some requested node lies under i
        let mut needs = vec![false; self.nodes.len()];
        for id in wrt {
            needs[id.0] = true;
        }
        for i in 0..self.nodes.len() {
            if !needs[i] {
                needs[i] = self.nodes[i].inputs.iter().any(|j| needs[j.0]);
            }
        }
        let mut adjoints: Vec<Option<Array<T>>> = vec![None; self.nodes.len()];
        adjoints[seed_node.0] = Some(seed.clone());
        let mut workspace: Vec<T> = Vec::new();

        for i in (0..=seed_node.0).rev() {
            if adjoints[i].is_none() || !needs[i] {
                continue;
            }
            let node = &self.nodes[i];
            if node.inputs.is_empty() || !node.op.differentiable() {
                continue;
            }
            if matches!(node.op, Op::Detach) {
                continue;
            }
            let (before, rest) = adjoints.split_at_mut(i);
            let adj = rest[0].as_ref().unwrap();
            let args: Vec<&Array<T>> = node.inputs.iter().map(|id| eval.value(*id)).collect();
            let wanted: Vec<bool> = node.inputs.iter().map(|id| needs[id.0]).collect();
            let contribs = backward::backward_node(
                node,
                &args,
                eval.value(NodeId(i)),
                adj,
                &eval.scratch[i],
                &wanted,
                &mut workspace,
            );
            for (pos, contrib) in contribs.into_iter().enumerate() {
                let Some(contrib) = contrib else { continue };
                let j = node.inputs[pos].0;
                if !needs[j] {
                    continue;
                }
                match &mut before[j] {
                    Some(acc) => {
                        for (dst, src) in acc.data_mut().iter_mut().zip(contrib.iter()) {
                            *dst = *dst + *src;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
        }

        Ok(wrt
            .iter()
            .map(|id| {
                adjoints[id.0]
                    .take()
                    .unwrap_or_else(|| Array::zeros(&self.nodes[id.0].shape))
            })
            .collect())
    }
}

fn eval_node<T: Scalar>(
    node: &Node<T>,
    args: &[&Array<T>],
    bindings: &[&Array<T>],
    scratch: &mut Vec<T>,
    out: &mut Array<T>,
) {
    use Op::*;
    let data_of = |i: usize| args[i].data();
    match &node.op {
        Input(idx) => out.data_mut().copy_from_slice(bindings[*idx].data()),
        Const(value) => out.data_mut().copy_from_slice(value.data()),
        Add => zip2(data_of(0), data_of(1), out.data_mut(), |a, b| a + b),
        Sub => zip2(data_of(0), data_of(1), out.data_mut(), |a, b| a - b),
        Mul => zip2(data_of(0), data_of(1), out.data_mut(), |a, b| a * b),
        Div => zip2(data_of(0), data_of(1), out.data_mut(), |a, b| a / b),
        MinElem => zip2(data_of(0), data_of(1), out.data_mut(), |a, b| a.minv(b)),
        MaxElem => zip2(data_of(0), data_of(1), out.data_mut(), |a, b| a.maxv(b)),
        Affine { mul, add } => {
            let (m, a) = (T::from_f64(*mul), T::from_f64(*add));
            map1(data_of(0), out.data_mut(), |x| x * m + a);
        }
        Abs => map1(data_of(0), out.data_mut(), |x| x.abs()),
        Exp => map1(data_of(0), out.data_mut(), |x| x.exp()),
        Sigmoid => map1(data_of(0), out.data_mut(), |x| {
            T::ONE / (T::ONE + (-x).exp())
        }),
        Recip => map1(data_of(0), out.data_mut(), |x| T::ONE / x),
        LeakyRelu { slope } => {
            let s = T::from_f64(*slope);
            map1(data_of(0), out.data_mut(), |x| {
                if x >= T::ZERO {
                    x
                } else {
                    s * x
                }
            });
        }
        Clamp { lo, hi } => {
            let (lo, hi) = (T::from_f64(*lo), T::from_f64(*hi));
            map1(data_of(0), out.data_mut(), |x| x.maxv(lo).minv(hi));
        }
        Conv2d { stride, pad } => {
            let d = ConvDims::new(args[0].shape(), args[1].shape(), *stride, *pad);
            conv::conv2d_forward(
                data_of(0),
                data_of(1),
                data_of(2),
                &d,
                scratch,
                out.data_mut(),
            );
        }
        AvgPool { k, stride, reflect } => {
            let [c, h, w] = args[0].shape() else { unreachable!() };
            conv::avg_pool_forward(data_of(0), *c, *h, *w, *k, *stride, *reflect, out.data_mut());
        }
        UpsampleNearest { factor } => {
            let [c, h, w] = args[0].shape() else { unreachable!() };
            conv::upsample_nearest_forward(data_of(0), *c, *h, *w, *factor, out.data_mut());
        }
        Concat0 => {
            let mut offset = 0;
            for a in args {
                out.data_mut()[offset..offset + a.len()].copy_from_slice(a.data());
                offset += a.len();
            }
        }
        Slice0 { start, len } => {
            let inner: usize = args[0].shape()[1..].iter().product();
            out.data_mut()
                .copy_from_slice(&data_of(0)[start * inner..(start + len) * inner]);
        }
        Reshape { .. } => out.data_mut().copy_from_slice(data_of(0)),
        MeanAll => {
            let d = data_of(0);
            let sum = d.iter().fold(T::ZERO, |acc, &v| acc + v);
            out.data_mut()[0] = sum / T::from_f64(d.len() as f64);
        }
        SumAll => {
            out.data_mut()[0] = data_of(0).iter().fold(T::ZERO, |acc, &v| acc + v);
        }
        MeanAxis0 => {
            let c = args[0].shape()[0];
            let inner: usize = args[0].shape()[1..].iter().product();
            let d = data_of(0);
            let inv = T::from_f64(1.0 / c as f64);
            for i in 0..inner {
                let mut acc = T::ZERO;
                for ch in 0..c {
                    acc = acc + d[ch * inner + i];
                }
                out.data_mut()[i] = acc * inv;
            }
        }
        MeanSpatial => {
            let [c, h, w] = args[0].shape() else { unreachable!() };
            let n = h * w;
            let inv = T::from_f64(1.0 / n as f64);
            let d = data_of(0);
            for ch in 0..*c {
                let mut acc = T::ZERO;
                for &v in &d[ch * n..(ch + 1) * n] {
                    acc = acc + v;
                }
                out.data_mut()[ch] = acc * inv;
            }
        }
        DivBcast => {
            let s = data_of(1)[0];
            map1(data_of(0), out.data_mut(), |x| x / s);
        }
        DiffX => {
            let [c, h, w] = args[0].shape() else { unreachable!() };
            let d = data_of(0);
            for ch in 0..*c {
                for y in 0..*h {
                    let row = ch * h * w + y * w;
                    let orow = ch * h * (w - 1) + y * (w - 1);
                    for x in 0..w - 1 {
                        out.data_mut()[orow + x] = d[row + x + 1] - d[row + x];
                    }
                }
            }
        }
        DiffY => {
            let [c, h, w] = args[0].shape() else { unreachable!() };
            let d = data_of(0);
            for ch in 0..*c {
                for y in 0..h - 1 {
                    let row = ch * h * w + y * w;
                    let orow = ch * (h - 1) * w + y * w;
                    for x in 0..*w {
                        out.data_mut()[orow + x] = d[row + w + x] - d[row + x];
                    }
                }
            }
        }
        Less => zip2(data_of(0), data_of(1), out.data_mut(), |a, b| {
            if a < b {
                T::ONE
            } else {
                T::ZERO
            }
        }),
        Greater => zip2(data_of(0), data_of(1), out.data_mut(), |a, b| {
            if a > b {
                T::ONE
            } else {
                T::ZERO
            }
        }),
        Detach => out.data_mut().copy_from_slice(data_of(0)),
        PoseToMatrix => {
            let m = geometry::rodrigues_vec6(data_of(0));
            out.data_mut().copy_from_slice(&m);
        }
        Reproject { intr } => {
            let [_, h, w] = args[0].shape() else { unreachable!() };
            geometry::reproject_kernel(intr, data_of(0), data_of(1), *h, *w, out.data_mut(), None);
        }
        ReprojectValidity { intr } => {
            let [_, h, w] = args[0].shape() else { unreachable!() };
            scratch.resize(2 * h * w, T::ZERO);
            geometry::reproject_kernel(
                intr,
                data_of(0),
                data_of(1),
                *h,
                *w,
                scratch,
                Some(out.data_mut()),
            );
        }
        BilinearSample => {
            let [c, h, w] = args[0].shape() else { unreachable!() };
            geometry::bilinear_kernel(data_of(0), data_of(1), *c, *h, *w, out.data_mut());
        }
    }
}

#[inline]
fn map1<T: Scalar>(a: &[T], out: &mut [T], f: impl Fn(T) -> T) {
    for (o, &x) in out.iter_mut().zip(a.iter()) {
        *o = f(x);
    }
}

#[inline]
fn zip2<T: Scalar>(a: &[T], b: &[T], out: &mut [T], f: impl Fn(T, T) -> T) {
    for ((o, &x), &y) in out.iter_mut().zip(a.iter()).zip(b.iter()) {
        *o = f(x, y);
    }
}
