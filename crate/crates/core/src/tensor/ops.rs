use std::rc::Rc;

use super::{numel, Indices, Op, Result, Tensor, TensorError};
use crate::Scalar;

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(TensorError::InvalidAxis {
            op,
            axis,
            shape: shape.to_vec(),
        });
    }
    Ok(())
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Batch count and matrix extents of a rank-2 or rank-3 tensor.
fn matrix_dims(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [r, c] => Some((1, r, c)),
        [b, r, c] => Some((b, r, c)),
        _ => None,
    }
}

impl<T: Scalar> Tensor<T> {
    fn zip_map(
        &self,
        other: &Tensor<T>,
        op_name: &'static str,
        f: impl Fn(T, T) -> T,
        op: impl FnOnce(Tensor<T>, Tensor<T>) -> Op<T>,
    ) -> Result<Tensor<T>> {
        same_shape(op_name, self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            op(self.clone(), other.clone()),
        ))
    }

    fn map(&self, f: impl Fn(T) -> T, op: Op<T>) -> Tensor<T> {
        let data = self.data().iter().map(|&v| f(v)).collect();
        Tensor::from_op(data, self.shape().to_vec(), op)
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, "sub", |a, b| a - b, Op::Sub)
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, "mul", |a, b| a * b, Op::Mul)
    }

    /// Elementwise quotient.
    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, "div", |a, b| a / b, Op::Div)
    }

    pub fn neg(&self) -> Tensor<T> {
        self.map(|v| -v, Op::Neg(self.clone()))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&self, c: T) -> Tensor<T> {
        self.map(|v| v * c, Op::Scale(self.clone(), c))
    }

    /// Adds a constant to every element.
    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        self.map(|v| v + c, Op::AddScalar(self.clone()))
    }

    /// Multiplies every element by the single value held in `s`.
    pub fn scale_by(&self, s: &Tensor<T>) -> Result<Tensor<T>> {
        if s.numel() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "scale_by",
                lhs: self.shape().to_vec(),
                rhs: s.shape().to_vec(),
            });
        }
        let c = s.data()[0];
        Ok(self.map(|v| v * c, Op::ScaleBy(s.clone(), self.clone())))
    }

    /// Matrix product of rank-2 tensors, or a batched product of rank-3
    /// tensors with equal batch extent.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: self.shape().to_vec(),
            rhs: other.shape().to_vec(),
        };
        if self.rank() != other.rank() {
            return Err(mismatch());
        }
        let (ba, n, k) = matrix_dims(self.shape()).ok_or_else(mismatch)?;
        let (bb, k2, m) = matrix_dims(other.shape()).ok_or_else(mismatch)?;
        if ba != bb || k != k2 {
            return Err(mismatch());
        }
        let a = self.data();
        let b = other.data();
        let mut out = vec![T::zero(); ba * n * m];
        for batch in 0..ba {
            let a = &a[batch * n * k..(batch + 1) * n * k];
            let b = &b[batch * k * m..(batch + 1) * k * m];
            let o = &mut out[batch * n * m..(batch + 1) * n * m];
            for i in 0..n {
                let row = &mut o[i * m..(i + 1) * m];
                for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
                    if aip == T::zero() {
                        continue;
                    }
                    for (r, &bpj) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                        *r = *r + aip * bpj;
                    }
                }
            }
        }
        let shape = if self.rank() == 2 {
            vec![n, m]
        } else {
            vec![ba, n, m]
        };
        Ok(Tensor::from_op(
            out,
            shape,
            Op::Matmul(self.clone(), other.clone()),
        ))
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&self) -> Result<Tensor<T>> {
        let (b, r, c) = matrix_dims(self.shape()).ok_or_else(|| TensorError::InvalidAxis {
            op: "transpose",
            axis: self.rank().saturating_sub(1),
            shape: self.shape().to_vec(),
        })?;
        let src = self.data();
        let mut out = vec![T::zero(); src.len()];
        for batch in 0..b {
            let off = batch * r * c;
            for i in 0..r {
                for j in 0..c {
                    out[off + j * r + i] = src[off + i * c + j];
                }
            }
        }
        let mut shape = self.shape().to_vec();
        let n = shape.len();
        shape.swap(n - 2, n - 1);
        Ok(Tensor::from_op(out, shape, Op::Transpose(self.clone())))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            Op::Reshape(self.clone()),
        ))
    }

    pub fn relu(&self) -> Tensor<T> {
        self.map(|v| v.max(T::zero()), Op::Relu(self.clone()))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the open interval.
    pub fn clamp(&self, lo: T, hi: T) -> Tensor<T> {
        self.map(|v| v.max(lo).min(hi), Op::Clamp(self.clone(), lo, hi))
    }

    pub fn exp(&self) -> Tensor<T> {
        self.map(T::exp, Op::Exp(self.clone()))
    }

    /// Natural logarithm.
    pub fn ln(&self) -> Tensor<T> {
        self.map(T::ln, Op::Log(self.clone()))
    }

    pub fn sqrt(&self) -> Tensor<T> {
        self.map(T::sqrt, Op::Sqrt(self.clone()))
    }

    pub fn square(&self) -> Tensor<T> {
        self.map(|v| v * v, Op::Square(self.clone()))
    }

    pub fn sin(&self) -> Tensor<T> {
        self.map(T::sin, Op::Sin(self.clone()))
    }

    pub fn cos(&self) -> Tensor<T> {
        self.map(T::cos, Op::Cos(self.clone()))
    }

    /// `|x|` written as `relu(x) + relu(-x)`.
    pub fn abs(&self) -> Tensor<T> {
        self.relu()
            .add(&self.neg().relu())
            .expect("identical shapes")
    }

    /// Logistic function `1 / (1 + exp(-x))`.
    pub fn sigmoid(&self) -> Tensor<T> {
        let denom = self.neg().exp().add_scalar(T::one());
        Tensor::ones(self.shape())
            .div(&denom)
            .expect("identical shapes")
    }

    /// Concatenates tensors of equal rank along `axis`.
    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts.first().ok_or(TensorError::InvalidAxis {
            op: "concat",
            axis,
            shape: vec![],
        })?;
        check_axis("concat", first.shape(), axis)?;
        let mut shape = first.shape().to_vec();
        let mut total = 0;
        for p in parts {
            let compatible = p.rank() == first.rank()
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            total += p.shape()[axis];
        }
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape()[axis] * inner;
                out.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(Tensor::from_op(out, shape, Op::Concat(parts.to_vec(), axis)))
    }

    /// The slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        check_axis("narrow", self.shape(), axis)?;
        let (outer, alen, inner) = split_axis(self.shape(), axis);
        if len == 0 || start + len > alen {
            return Err(TensorError::IndexOutOfRange {
                op: "narrow",
                index: start + len,
                len: alen,
            });
        }
        let src = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * alen * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(
            out,
            shape,
            Op::Narrow {
                src: self.clone(),
                axis,
                start,
            },
        ))
    }

    /// Embeds `self` at offset `start` of a zero tensor whose `axis` has
    /// extent `total`. Adjoint of [`Tensor::narrow`].
    pub fn pad(&self, axis: usize, start: usize, total: usize) -> Result<Tensor<T>> {
        check_axis("pad", self.shape(), axis)?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        if start + len > total {
            return Err(TensorError::IndexOutOfRange {
                op: "pad",
                index: start + len,
                len: total,
            });
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = total;
        let mut out = vec![T::zero(); numel(&shape)];
        let src = self.data();
        for o in 0..outer {
            let dst = o * total * inner + start * inner;
            out[dst..dst + len * inner].copy_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
        }
        Ok(Tensor::from_op(
            out,
            shape,
            Op::Pad {
                src: self.clone(),
                axis,
                start,
            },
        ))
    }

    /// Rows of a rank-2 tensor selected by `idx`, in order.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor<T>> {
        let &[rows, cols] = self.shape() else {
            return Err(TensorError::InvalidAxis {
                op: "gather_rows",
                axis: 0,
                shape: self.shape().to_vec(),
            });
        };
        if idx.is_empty() {
            return Err(TensorError::IndexOutOfRange {
                op: "gather_rows",
                index: 0,
                len: 0,
            });
        }
        let src = self.data();
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    len: rows,
                });
            }
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let idx: Indices = Rc::from(idx);
        Ok(Tensor::from_op(
            out,
            vec![idx.len(), cols],
            Op::GatherRows(self.clone(), idx),
        ))
    }

    /// Sums row `r` of `self` into row `idx[r]` of a zero `rows × cols`
    /// tensor. Adjoint of [`Tensor::gather_rows`].
    pub fn scatter_rows(&self, idx: &[usize], rows: usize) -> Result<Tensor<T>> {
        let &[n, cols] = self.shape() else {
            return Err(TensorError::InvalidAxis {
                op: "scatter_rows",
                axis: 0,
                shape: self.shape().to_vec(),
            });
        };
        if n != idx.len() {
            return Err(TensorError::ShapeMismatch {
                op: "scatter_rows",
                lhs: self.shape().to_vec(),
                rhs: vec![idx.len()],
            });
        }
        let mut out = vec![T::zero(); rows * cols];
        let src = self.data();
        for (r, &i) in idx.iter().enumerate() {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "scatter_rows",
                    index: i,
                    len: rows,
                });
            }
            for c in 0..cols {
                out[i * cols + c] = out[i * cols + c] + src[r * cols + c];
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![rows, cols],
            Op::ScatterRows(self.clone(), Rc::from(idx)),
        ))
    }

    /// Sum along `axis`; the axis is removed from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor<T>> {
        check_axis("sum_axis", self.shape(), axis)?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let src = self.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] = out[o * inner + i] + src[base + i];
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Ok(Tensor::from_op(out, shape, Op::SumAxis(self.clone(), axis)))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor<T>> {
        check_axis("mean_axis", self.shape(), axis)?;
        let n = T::from_usize(self.shape()[axis]).expect("axis length fits scalar");
        Ok(self.sum_axis(axis)?.scale(T::one() / n))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&self) -> Tensor<T> {
        self.reshape(&[self.numel()])
            .and_then(|t| t.sum_axis(0))
            .expect("flatten is always valid")
    }

    /// Mean of all elements as a rank-0 tensor.
    pub fn mean(&self) -> Tensor<T> {
        let n = T::from_usize(self.numel()).expect("element count fits scalar");
        self.sum().scale(T::one() / n)
    }

    /// Inserts a new axis at `axis` and repeats the data `size` times along
    /// it. Adjoint of [`Tensor::sum_axis`].
    pub fn broadcast_axis(&self, axis: usize, size: usize) -> Result<Tensor<T>> {
        if axis > self.rank() || size == 0 {
            return Err(TensorError::InvalidAxis {
                op: "broadcast_axis",
                axis,
                shape: self.shape().to_vec(),
            });
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis..].iter().product();
        let src = self.data();
        let mut out = Vec::with_capacity(outer * size * inner);
        for o in 0..outer {
            let chunk = &src[o * inner..(o + 1) * inner];
            for _ in 0..size {
                out.extend_from_slice(chunk);
            }
        }
        let mut shape = self.shape().to_vec();
        shape.insert(axis, size);
        Ok(Tensor::from_op(
            out,
            shape,
            Op::BroadcastAxis(self.clone(), axis),
        ))
    }

    /// Picks one element along `axis` for each (outer, inner) position;
    /// `idx` is laid out in the shape with `axis` removed.
    pub fn select_axis(&self, axis: usize, idx: &[usize]) -> Result<Tensor<T>> {
        check_axis("select_axis", self.shape(), axis)?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        if idx.len() != outer * inner {
            return Err(TensorError::ShapeMismatch {
                op: "select_axis",
                lhs: self.shape().to_vec(),
                rhs: vec![idx.len()],
            });
        }
        let src = self.data();
        let mut out = Vec::with_capacity(idx.len());
        for o in 0..outer {
            for i in 0..inner {
                let l = idx[o * inner + i];
                if l >= len {
                    return Err(TensorError::IndexOutOfRange {
                        op: "select_axis",
                        index: l,
                        len,
                    });
                }
                out.push(src[(o * len + l) * inner + i]);
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Ok(Tensor::from_op(
            out,
            shape,
            Op::SelectAxis(self.clone(), axis, Rc::from(idx)),
        ))
    }

    /// Places each element at position `idx` of a new zero axis of extent
    /// `len`. Adjoint of [`Tensor::select_axis`].
    pub fn scatter_axis(&self, axis: usize, idx: &[usize], len: usize) -> Result<Tensor<T>> {
        if axis > self.rank() || idx.len() != self.numel() {
            return Err(TensorError::InvalidAxis {
                op: "scatter_axis",
                axis,
                shape: self.shape().to_vec(),
            });
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis..].iter().product();
        let mut out = vec![T::zero(); outer * len * inner];
        let src = self.data();
        for o in 0..outer {
            for i in 0..inner {
                let l = idx[o * inner + i];
                if l >= len {
                    return Err(TensorError::IndexOutOfRange {
                        op: "scatter_axis",
                        index: l,
                        len,
                    });
                }
                out[(o * len + l) * inner + i] = src[o * inner + i];
            }
        }
        let mut shape = self.shape().to_vec();
        shape.insert(axis, len);
        Ok(Tensor::from_op(
            out,
            shape,
            Op::ScatterAxis(self.clone(), axis, Rc::from(idx)),
        ))
    }

    fn arg_reduce(&self, axis: usize, better: impl Fn(T, T) -> bool) -> Result<Vec<usize>> {
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let src = self.data();
        let mut idx = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = 0;
                let mut best_v = src[o * len * inner + i];
                for l in 1..len {
                    let v = src[(o * len + l) * inner + i];
                    if better(v, best_v) {
                        best = l;
                        best_v = v;
                    }
                }
                idx[o * inner + i] = best;
            }
        }
        Ok(idx)
    }

    /// Maximum along `axis` with its arg-index. Ties resolve to the lowest
    /// index and the gradient flows to that element only.
    pub fn max_axis(&self, axis: usize) -> Result<(Tensor<T>, Vec<usize>)> {
        check_axis("max_axis", self.shape(), axis)?;
        let idx = self.arg_reduce(axis, |v, best| v > best)?;
        Ok((self.select_axis(axis, &idx)?, idx))
    }

    /// Minimum along `axis` with its arg-index (lowest index on ties).
    pub fn min_axis(&self, axis: usize) -> Result<(Tensor<T>, Vec<usize>)> {
        check_axis("min_axis", self.shape(), axis)?;
        let idx = self.arg_reduce(axis, |v, best| v < best)?;
        Ok((self.select_axis(axis, &idx)?, idx))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Tensor<T>> {
        let cols = *self.shape().last().ok_or(TensorError::InvalidAxis {
            op: "softmax",
            axis: 0,
            shape: vec![],
        })?;
        let src = self.data();
        let mut out = vec![T::zero(); src.len()];
        for (row_in, row_out) in src.chunks(cols).zip(out.chunks_mut(cols)) {
            let max = row_in.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for (o, &v) in row_out.iter_mut().zip(row_in) {
                *o = (v - max).exp();
                total = total + *o;
            }
            for o in row_out.iter_mut() {
                *o = *o / total;
            }
        }
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            Op::Softmax(self.clone()),
        ))
    }

    /// Squared Euclidean distances between the rows of `self` (`n × d`) and
    /// `other` (`m × d`), giving `n × m`; rank-3 inputs are batched.
    pub fn pairwise_sqdist(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "pairwise_sqdist",
            lhs: self.shape().to_vec(),
            rhs: other.shape().to_vec(),
        };
        if self.rank() != other.rank() {
            return Err(mismatch());
        }
        let (ba, n, d) = matrix_dims(self.shape()).ok_or_else(mismatch)?;
        let (bb, m, d2) = matrix_dims(other.shape()).ok_or_else(mismatch)?;
        if ba != bb || d != d2 {
            return Err(mismatch());
        }
        let a = self.data();
        let b = other.data();
        let mut out = Vec::with_capacity(ba * n * m);
        for batch in 0..ba {
            let a = &a[batch * n * d..(batch + 1) * n * d];
            let b = &b[batch * m * d..(batch + 1) * m * d];
            for i in 0..n {
                let ai = &a[i * d..(i + 1) * d];
                for j in 0..m {
                    let bj = &b[j * d..(j + 1) * d];
                    let mut s = T::zero();
                    for (&x, &y) in ai.iter().zip(bj) {
                        let diff = x - y;
                        s = s + diff * diff;
                    }
                    out.push(s);
                }
            }
        }
        let shape = if self.rank() == 2 {
            vec![n, m]
        } else {
            vec![ba, n, m]
        };
        Ok(Tensor::from_op(
            out,
            shape,
            Op::PairwiseSqDist(self.clone(), other.clone()),
        ))
    }
}
