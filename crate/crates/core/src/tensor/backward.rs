use std::collections::{HashMap, HashSet};

use super::{GradModeGuard, Op, Result, Tensor, TensorError};
use crate::Scalar;

/// The primitive operations reachable from a root, in execution order.
///
/// Only nodes that require a gradient are recorded. Because node ids are
/// assigned at creation, every node's inputs precede it.
pub struct Tape<T: Scalar> {
    nodes: Vec<Tensor<T>>,
}

impl<T: Scalar> Tape<T> {
    /// Collects the graph below `root`, not expanding past `stop` nodes.
    pub fn record(root: &Tensor<T>, stop: &HashSet<u64>) -> Self {
        let mut nodes = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![root.clone()];
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || !seen.insert(t.id()) {
                continue;
            }
            if !stop.contains(&t.id()) {
                for p in t.op().parents() {
                    if p.requires_grad() && !seen.contains(&p.id()) {
                        stack.push(p.clone());
                    }
                }
            }
            nodes.push(t);
        }
        nodes.sort_by_key(Tensor::id);
        Tape { nodes }
    }

    pub fn nodes(&self) -> &[Tensor<T>] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

fn check_scalar_root<T: Scalar>(root: &Tensor<T>) -> Result<()> {
    if root.numel() != 1 {
        return Err(TensorError::NonScalarRoot(root.shape().to_vec()));
    }
    Ok(())
}

/// Reverse sweep over `tape`, returning the gradient of every visited node
/// that was not consumed along the way (stop nodes and leaves).
fn sweep<T: Scalar>(
    root: &Tensor<T>,
    tape: &Tape<T>,
    stop: &HashSet<u64>,
) -> Result<HashMap<u64, Tensor<T>>> {
    let mut grads: HashMap<u64, Tensor<T>> = HashMap::new();
    grads.insert(root.id(), Tensor::ones(root.shape()));
    let mut kept = HashMap::new();
    for node in tape.nodes().iter().rev() {
        let Some(g) = grads.remove(&node.id()) else {
            continue;
        };
        if stop.contains(&node.id()) || node.is_leaf() {
            kept.insert(node.id(), g);
            continue;
        }
        for (parent, pg) in vjp(node, &g)? {
            let acc = match grads.remove(&parent.id()) {
                Some(prev) => prev.add(&pg)?,
                None => pg,
            };
            grads.insert(parent.id(), acc);
        }
    }
    Ok(kept)
}

/// Gradients of the scalar `root` with respect to each tensor in `wrt`.
///
/// With `create_graph` the returned gradients are themselves differentiable
/// functions of the inputs, so they may be fed into a second backward pass.
/// Tensors in `wrt` that `root` does not depend on get zero gradients. The
/// tensors in `wrt` must not be ancestors of one another.
pub fn grad<T: Scalar>(
    root: &Tensor<T>,
    wrt: &[Tensor<T>],
    create_graph: bool,
) -> Result<Vec<Tensor<T>>> {
    check_scalar_root(root)?;
    let stop: HashSet<u64> = wrt.iter().map(Tensor::id).collect();
    let tape = Tape::record(root, &stop);
    let _mode = GradModeGuard::new(create_graph);
    let grads = sweep(root, &tape, &stop)?;
    Ok(wrt
        .iter()
        .map(|w| {
            grads
                .get(&w.id())
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(w.shape()))
        })
        .collect())
}

/// Accumulates `∂root/∂leaf` into the stored gradient of every
/// gradient-tracking leaf reachable from `root`.
pub fn backward<T: Scalar>(root: &Tensor<T>) -> Result<()> {
    check_scalar_root(root)?;
    let stop = HashSet::new();
    let tape = Tape::record(root, &stop);
    let _mode = GradModeGuard::new(false);
    let grads = sweep(root, &tape, &stop)?;
    for node in tape.nodes() {
        if node.is_leaf() {
            if let Some(g) = grads.get(&node.id()) {
                node.accumulate_grad(g.data());
            }
        }
    }
    Ok(())
}

fn mask<T: Scalar>(t: &Tensor<T>, keep: impl Fn(T) -> bool) -> Tensor<T> {
    let data = t
        .data()
        .iter()
        .map(|&v| if keep(v) { T::one() } else { T::zero() })
        .collect();
    Tensor::new(data, t.shape().to_vec()).expect("mask shape")
}

/// Vector-Jacobian product of one node, expressed in tensor operations.
/// Only parents that track gradients are returned.
fn vjp<T: Scalar>(out: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<(Tensor<T>, Tensor<T>)>> {
    let two = T::lit(2.0);
    let mut res = Vec::with_capacity(2);
    let mut push = |p: &Tensor<T>, f: &dyn Fn() -> Result<Tensor<T>>| -> Result<()> {
        if p.requires_grad() {
            res.push((p.clone(), f()?));
        }
        Ok(())
    };
    match out.op() {
        Op::Leaf => {}
        Op::Add(a, b) => {
            push(a, &|| Ok(g.clone()))?;
            push(b, &|| Ok(g.clone()))?;
        }
        Op::Sub(a, b) => {
            push(a, &|| Ok(g.clone()))?;
            push(b, &|| Ok(g.neg()))?;
        }
        Op::Mul(a, b) => {
            push(a, &|| g.mul(b))?;
            push(b, &|| g.mul(a))?;
        }
        Op::Div(a, b) => {
            push(a, &|| g.div(b))?;
            push(b, &|| Ok(g.mul(a)?.div(&b.square())?.neg()))?;
        }
        Op::Neg(a) => push(a, &|| Ok(g.neg()))?,
        Op::Scale(a, c) => push(a, &|| Ok(g.scale(*c)))?,
        Op::AddScalar(a) => push(a, &|| Ok(g.clone()))?,
        Op::ScaleBy(s, a) => {
            push(s, &|| g.mul(a)?.sum().reshape(s.shape()))?;
            push(a, &|| g.scale_by(s))?;
        }
        Op::Matmul(a, b) => {
            push(a, &|| g.matmul(&b.transpose()?))?;
            push(b, &|| a.transpose()?.matmul(g))?;
        }
        Op::Transpose(a) => push(a, &|| g.transpose())?,
        Op::Reshape(a) => push(a, &|| g.reshape(a.shape()))?,
        Op::Relu(a) => push(a, &|| g.mul(&mask(a, |v| v > T::zero())))?,
        Op::Clamp(a, lo, hi) => push(a, &|| g.mul(&mask(a, |v| v > *lo && v < *hi)))?,
        Op::Exp(a) => push(a, &|| g.mul(out))?,
        Op::Log(a) => push(a, &|| g.div(a))?,
        Op::Sqrt(a) => push(a, &|| g.scale(T::lit(0.5)).div(out))?,
        Op::Square(a) => push(a, &|| g.mul(&a.scale(two)))?,
        Op::Sin(a) => push(a, &|| g.mul(&a.cos()))?,
        Op::Cos(a) => push(a, &|| Ok(g.mul(&a.sin())?.neg()))?,
        Op::Concat(parts, axis) => {
            let mut offset = 0;
            for p in parts {
                let len = p.shape()[*axis];
                push(p, &|| g.narrow(*axis, offset, len))?;
                offset += len;
            }
        }
        Op::Narrow { src, axis, start } => {
            push(src, &|| g.pad(*axis, *start, src.shape()[*axis]))?
        }
        Op::Pad { src, axis, start } => {
            push(src, &|| g.narrow(*axis, *start, src.shape()[*axis]))?
        }
        Op::GatherRows(a, idx) => push(a, &|| g.scatter_rows(idx, a.shape()[0]))?,
        Op::ScatterRows(a, idx) => push(a, &|| g.gather_rows(idx))?,
        Op::SumAxis(a, axis) => push(a, &|| g.broadcast_axis(*axis, a.shape()[*axis]))?,
        Op::BroadcastAxis(a, axis) => push(a, &|| g.sum_axis(*axis))?,
        Op::SelectAxis(a, axis, idx) => {
            push(a, &|| g.scatter_axis(*axis, idx, a.shape()[*axis]))?
        }
        Op::ScatterAxis(a, axis, idx) => push(a, &|| g.select_axis(*axis, idx))?,
        Op::Softmax(a) => push(a, &|| {
            let last = out.rank() - 1;
            let cols = out.shape()[last];
            let inner = g.mul(out)?.sum_axis(last)?.broadcast_axis(last, cols)?;
            out.mul(&g.sub(&inner)?)
        })?,
        Op::PairwiseSqDist(a, b) => {
            // D_ij = |a_i - b_j|^2:
            //   dA = 2 (diag(G 1) A - G B),  dB = 2 (diag(G^T 1) B - G^T A)
            let last = g.rank() - 1;
            let d = a.shape()[a.rank() - 1];
            push(a, &|| {
                let rows = g.sum_axis(last)?.broadcast_axis(last, d)?;
                Ok(rows.mul(a)?.sub(&g.matmul(b)?)?.scale(two))
            })?;
            push(b, &|| {
                let cols = g.sum_axis(last - 1)?.broadcast_axis(last, d)?;
                Ok(cols.mul(b)?.sub(&g.transpose()?.matmul(a)?)?.scale(two))
            })?;
        }
    }
    Ok(res)
}
