//! Eager tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass as a node in
//! construction order, so the node list is already topologically sorted and
//! [`Graph::backward`] just walks it in reverse. Graphs are rebuilt for every
//! step; nothing is compiled or cached.
//!
//! Tensors are treated as matrices whose columns are the last axis, which is
//! all the sequence models need. Batched matrix products operate on 3-D
//! `[batch, rows, cols]` tensors.

use crate::error::{shape_err, Error, Result};
use crate::params::{Bindings, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Floor added inside the logarithm of every cross-entropy term.
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Bmm {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Affine {
        x: Var,
        scale: T,
    },
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    Softmax(Var),
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<T>,
        probs: Vec<T>,
    },
    CrossEntropy {
        probs: Var,
        target: usize,
    },
    Sum(Var),
    MulConst {
        x: Var,
        c: Vec<T>,
    },
    AddConst(Var),
    Blend {
        new: Var,
        old: Var,
        mask: Vec<T>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Reshape(Var),
    AddRepeatRows {
        x: Var,
        y: Var,
        repeat: usize,
    },
    SwapMid {
        x: Var,
        dims: [usize; 4],
    },
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
    /// Persistent gradient, only populated for leaves.
    grad: Option<Vec<T>>,
}

/// Computation graph recorded during one forward pass.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(format!("{what}: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

/// Returns the gradient buffer for `v`, allocating zeros on first touch.
fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds a leaf; it takes part in differentiation when the tensor's
    /// `requires_grad` flag is set.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let requires_grad = t.requires_grad();
        self.nodes.push(Node {
            op: Op::Leaf,
            value: t,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_grad(false))
    }

    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_grad(true))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    // ----- forward ops -----

    /// `[.., k] @ [k, n]`; leading axes of `a` are flattened into rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.shape().len() != 2 || ta.cols() != tb.shape()[0] {
            return shape_err(format!("matmul {:?} x {:?}", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            ta.data(),
            k as isize,
            1,
            tb.data(),
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let t = Tensor::new(shape, out)?;
        Ok(self.push(Op::MatMul(a, b), t, &[a, b]))
    }

    /// Batched product of `[bt, m, k]` with `[bt, k, n]` (or `[bt, n, k]`
    /// when `trans_b`).
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 3 || tb.shape().len() != 3 || ta.shape()[0] != tb.shape()[0] {
            return shape_err(format!("bmm {:?} x {:?}", ta.shape(), tb.shape()));
        }
        let (bt, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
        let (kb, n) = if trans_b {
            (tb.shape()[2], tb.shape()[1])
        } else {
            (tb.shape()[1], tb.shape()[2])
        };
        if kb != k {
            return shape_err(format!(
                "bmm inner dims {:?} x {:?} (trans_b={trans_b})",
                ta.shape(),
                tb.shape()
            ));
        }
        let mut out = vec![T::zero(); bt * m * n];
        let (rsb, csb) = if trans_b {
            (1, k as isize)
        } else {
            (n as isize, 1)
        };
        for i in 0..bt {
            T::gemm(
                m,
                k,
                n,
                T::one(),
                &ta.data()[i * m * k..],
                k as isize,
                1,
                &tb.data()[i * k * n..],
                rsb,
                csb,
                T::zero(),
                &mut out[i * m * n..],
                n as isize,
                1,
            );
        }
        let t = Tensor::new(vec![bt, m, n], out)?;
        Ok(self.push(Op::Bmm { a, b, trans_b }, t, &[a, b]))
    }

    fn zip_op(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, what)?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_op(a, b, "add", |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), t, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_op(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), t, &[a, b]))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_op(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), t, &[a, b]))
    }

    /// Adds a bias vector to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let c = tx.cols();
        if tb.len() != c {
            return shape_err(format!("bias of {} for {:?}", tb.len(), tx.shape()));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            row.iter_mut().zip(tb.data()).for_each(|(a, b)| *a += *b);
        }
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(Op::AddBias(x, bias), t, &[x, bias]))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Result<Var> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| scale * v + shift).collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(Op::Affine { x, scale }, t, &[x]))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        self.affine(x, s, T::zero())
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        self.affine(x, -T::one(), T::one())
    }

    fn map_op(&mut self, x: Var, f: impl Fn(T) -> T) -> Result<Tensor<T>> {
        let tx = self.value(x);
        Tensor::new(
            tx.shape().to_vec(),
            tx.data().iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let t = self.map_op(x, |v| v.tanh())?;
        Ok(self.push(Op::Tanh(x), t, &[x]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let t = self.map_op(x, sigmoid)?;
        Ok(self.push(Op::Sigmoid(x), t, &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.map_op(x, |v| v.max(T::zero()))?;
        Ok(self.push(Op::Relu(x), t, &[x]))
    }

    /// Concatenates matrices with equal row counts along the last axis.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return shape_err("concat of nothing");
        }
        let rows = self.value(xs[0]).rows();
        let mut total = 0;
        for &v in xs {
            let t = self.value(v);
            if t.rows() != rows {
                return shape_err(format!("concat_cols row mismatch {rows} vs {}", t.rows()));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &v in xs {
                data.extend_from_slice(self.value(v).row_slice(r));
            }
        }
        let t = Tensor::new(vec![rows, total], data)?;
        Ok(self.push(Op::ConcatCols(xs.to_vec()), t, xs))
    }

    /// Stacks matrices with equal column counts along the first axis.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return shape_err("concat of nothing");
        }
        let cols = self.value(xs[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &v in xs {
            let t = self.value(v);
            if t.cols() != cols {
                return shape_err(format!("concat_rows col mismatch {cols} vs {}", t.cols()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let t = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(Op::ConcatRows(xs.to_vec()), t, xs))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        if start + len > tx.cols() {
            return shape_err(format!(
                "slice {start}..{} of {:?}",
                start + len,
                tx.shape()
            ));
        }
        let rows = tx.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&tx.row_slice(r)[start..start + len]);
        }
        let t = Tensor::new(vec![rows, len], data)?;
        Ok(self.push(Op::SliceCols { x, start }, t, &[x]))
    }

    /// Selects rows by index (embedding lookup when `x` is a table).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let rows = tx.rows();
        let mut data = Vec::with_capacity(idx.len() * tx.cols());
        for &i in idx {
            if i >= rows {
                return Err(Error::IndexError(format!("row {i} of {rows}")));
            }
            data.extend_from_slice(tx.row_slice(i));
        }
        let t = Tensor::new(vec![idx.len(), tx.cols()], data)?;
        Ok(self.push(
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            t,
            &[x],
        ))
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.softmax_masked(x, None)
    }

    /// Row-wise softmax where entries with `mask == false` get probability
    /// zero. A fully masked row yields all zeros.
    pub fn softmax_masked(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let tx = self.value(x);
        let c = tx.cols();
        if tx.is_empty() || c == 0 {
            return shape_err("softmax of an empty vector");
        }
        if let Some(m) = mask {
            if m.len() != tx.len() {
                return shape_err(format!("softmax mask of {} for {:?}", m.len(), tx.shape()));
            }
        }
        let mut data = tx.data().to_vec();
        for (r, row) in data.chunks_mut(c).enumerate() {
            let keep = |j: usize| mask.is_none_or(|m| m[r * c + j]);
            softmax_row(row, keep);
        }
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(Op::Softmax(x), t, &[x]))
    }

    /// Weighted sum of `-ln(softmax(logits)[target] + floor)` over rows.
    ///
    /// Rows with weight zero contribute nothing (padding).
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[T],
    ) -> Result<Var> {
        let tx = self.value(logits);
        let (n, v) = (tx.rows(), tx.cols());
        if targets.len() != n || weights.len() != n {
            return shape_err(format!(
                "{} targets / {} weights for {n} rows",
                targets.len(),
                weights.len()
            ));
        }
        let mut probs = tx.data().to_vec();
        let floor = T::lit(LOG_FLOOR);
        let mut loss = T::zero();
        for (r, row) in probs.chunks_mut(v).enumerate() {
            softmax_row(row, |_| true);
            if weights[r] != T::zero() {
                let t = targets[r];
                if t >= v {
                    return Err(Error::IndexError(format!("target {t} for {v} classes")));
                }
                loss -= weights[r] * (row[t] + floor).ln();
            }
        }
        let out = Tensor::scalar(loss);
        Ok(self.push(
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            out,
            &[logits],
        ))
    }

    /// `-ln(probs[target] + 1e-12)` for a probability vector.
    pub fn cross_entropy(&mut self, probs: Var, target: usize) -> Result<Var> {
        let tp = self.value(probs);
        if target >= tp.len() {
            return Err(Error::IndexError(format!(
                "target {target} for {} classes",
                tp.len()
            )));
        }
        let loss = -(tp.data()[target] + T::lit(LOG_FLOOR)).ln();
        Ok(self.push(
            Op::CrossEntropy { probs, target },
            Tensor::scalar(loss),
            &[probs],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum();
        Ok(self.push(Op::Sum(x), Tensor::scalar(s), &[x]))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        self.sum(p)
    }

    /// Element-wise product with a constant buffer (dropout masks).
    pub fn mul_const(&mut self, x: Var, c: Vec<T>) -> Result<Var> {
        let tx = self.value(x);
        if c.len() != tx.len() {
            return shape_err(format!("constant of {} for {:?}", c.len(), tx.shape()));
        }
        let data = tx.data().iter().zip(&c).map(|(&a, &b)| a * b).collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(Op::MulConst { x, c }, t, &[x]))
    }

    /// Adds a constant buffer (positional encodings).
    pub fn add_const(&mut self, x: Var, c: &[T]) -> Result<Var> {
        let tx = self.value(x);
        if c.len() != tx.len() {
            return shape_err(format!("constant of {} for {:?}", c.len(), tx.shape()));
        }
        let data = tx.data().iter().zip(c).map(|(&a, &b)| a + b).collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(Op::AddConst(x), t, &[x]))
    }

    /// Per-row select: `mask[r] * new[r] + (1 - mask[r]) * old[r]`.
    pub fn blend_rows(&mut self, new: Var, old: Var, mask: &[T]) -> Result<Var> {
        let (tn, to) = (self.value(new), self.value(old));
        same_shape(tn, to, "blend")?;
        if mask.len() != tn.rows() {
            return shape_err(format!("blend mask of {} for {:?}", mask.len(), tn.shape()));
        }
        let c = tn.cols();
        let mut data = Vec::with_capacity(tn.len());
        for (r, &m) in mask.iter().enumerate() {
            let (a, b) = (tn.row_slice(r), to.row_slice(r));
            data.extend(
                a.iter()
                    .zip(b)
                    .take(c)
                    .map(|(&x, &y)| m * x + (T::one() - m) * y),
            );
        }
        let t = Tensor::new(tn.shape().to_vec(), data)?;
        Ok(self.push(
            Op::Blend {
                new,
                old,
                mask: mask.to_vec(),
            },
            t,
            &[new, old],
        ))
    }

    /// Row-wise layer normalisation with gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let c = tx.cols();
        if tg.len() != c || tb.len() != c {
            return shape_err(format!(
                "layer_norm gain {} bias {} for {:?}",
                tg.len(),
                tb.len(),
                tx.shape()
            ));
        }
        let rows = tx.rows();
        let cf = T::from_usize(c).unwrap();
        let mut xhat = Vec::with_capacity(tx.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(tx.len());
        for r in 0..rows {
            let row = tx.row_slice(r);
            let mean = row.iter().copied().sum::<T>() / cf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cf;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * tg.data()[j] + tb.data()[j]);
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            t,
            &[x, gain, bias],
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().with_grad(false).reshape(shape)?;
        Ok(self.push(Op::Reshape(x), t, &[x]))
    }

    /// `out[b * repeat + i] = x[b * repeat + i] + y[b]`.
    pub fn add_repeat_rows(&mut self, x: Var, y: Var, repeat: usize) -> Result<Var> {
        let (tx, ty) = (self.value(x), self.value(y));
        if tx.cols() != ty.cols() || tx.rows() != ty.rows() * repeat {
            return shape_err(format!(
                "add_repeat_rows {:?} + {:?} x{repeat}",
                tx.shape(),
                ty.shape()
            ));
        }
        let c = tx.cols();
        let mut data = tx.data().to_vec();
        for (r, row) in data.chunks_mut(c).enumerate() {
            let yr = ty.row_slice(r / repeat);
            row.iter_mut().zip(yr).for_each(|(a, b)| *a += *b);
        }
        let t = Tensor::new(vec![tx.rows(), c], data)?;
        Ok(self.push(Op::AddRepeatRows { x, y, repeat }, t, &[x, y]))
    }

    /// Views `x` as `[outer, a, b, inner]` and swaps the two middle axes.
    /// The result has shape `[outer, b, a, inner]`.
    pub fn swap_mid(
        &mut self,
        x: Var,
        outer: usize,
        a: usize,
        b: usize,
        inner: usize,
    ) -> Result<Var> {
        let tx = self.value(x);
        if outer * a * b * inner != tx.len() {
            return shape_err(format!(
                "swap_mid [{outer},{a},{b},{inner}] of {:?}",
                tx.shape()
            ));
        }
        let data = swap_mid_data(tx.data(), [outer, a, b, inner]);
        let t = Tensor::new(vec![outer, b, a, inner], data)?;
        Ok(self.push(
            Op::SwapMid {
                x,
                dims: [outer, a, b, inner],
            },
            t,
            &[x],
        ))
    }

    // ----- reverse pass -----

    /// Back-propagates from a scalar `loss`. Leaf gradients accumulate across
    /// calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return shape_err(format!("backward from non-scalar {:?}", self.shape(loss)));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else {
                continue;
            };
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&gout).for_each(|(a, b)| *a += *b),
                    None => node.grad = Some(gout),
                }
                continue;
            }
            self.propagate(i, &gout, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if needs(*a) {
                    // dA = dC @ B^T
                    let ga = slot(grads, *a, m * k);
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        gout,
                        n as isize,
                        1,
                        tb.data(),
                        1,
                        n as isize,
                        T::one(),
                        ga,
                        k as isize,
                        1,
                    );
                }
                if needs(*b) {
                    // dB = A^T @ dC
                    let gb = slot(grads, *b, k * n);
                    T::gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        ta.data(),
                        1,
                        k as isize,
                        gout,
                        n as isize,
                        1,
                        T::one(),
                        gb,
                        n as isize,
                        1,
                    );
                }
            }
            Op::Bmm { a, b, trans_b } => {
                let (ta, tb) = (val(*a), val(*b));
                let (bt, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
                let n = if *trans_b {
                    tb.shape()[1]
                } else {
                    tb.shape()[2]
                };
                // B viewed as k x n with strides (rsb, csb)
                let (rsb, csb) = if *trans_b {
                    (1isize, k as isize)
                } else {
                    (n as isize, 1isize)
                };
                if needs(*a) {
                    let ga = slot(grads, *a, bt * m * k);
                    for s in 0..bt {
                        // dA = dC @ B^T ; B^T has strides (csb, rsb)
                        T::gemm(
                            m,
                            n,
                            k,
                            T::one(),
                            &gout[s * m * n..],
                            n as isize,
                            1,
                            &tb.data()[s * k * n..],
                            csb,
                            rsb,
                            T::one(),
                            &mut ga[s * m * k..],
                            k as isize,
                            1,
                        );
                    }
                }
                if needs(*b) {
                    let gb = slot(grads, *b, bt * k * n);
                    for s in 0..bt {
                        // dB (as k x n, same strides as B) = A^T @ dC
                        T::gemm(
                            k,
                            m,
                            n,
                            T::one(),
                            &ta.data()[s * m * k..],
                            1,
                            k as isize,
                            &gout[s * m * n..],
                            n as isize,
                            1,
                            T::one(),
                            &mut gb[s * k * n..],
                            rsb,
                            csb,
                        );
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        let g = slot(grads, v, gout.len());
                        g.iter_mut().zip(gout).for_each(|(x, y)| *x += *y);
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    let g = slot(grads, *a, gout.len());
                    g.iter_mut().zip(gout).for_each(|(x, y)| *x += *y);
                }
                if needs(*b) {
                    let g = slot(grads, *b, gout.len());
                    g.iter_mut().zip(gout).for_each(|(x, y)| *x -= *y);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if needs(*a) {
                    let g = slot(grads, *a, gout.len());
                    for ((x, &d), &o) in g.iter_mut().zip(gout).zip(tb.data()) {
                        *x += d * o;
                    }
                }
                if needs(*b) {
                    let g = slot(grads, *b, gout.len());
                    for ((x, &d), &o) in g.iter_mut().zip(gout).zip(ta.data()) {
                        *x += d * o;
                    }
                }
            }
            Op::AddBias(x, b) => {
                if needs(*x) {
                    let g = slot(grads, *x, gout.len());
                    g.iter_mut().zip(gout).for_each(|(a, d)| *a += *d);
                }
                if needs(*b) {
                    let c = val(*b).len();
                    let g = slot(grads, *b, c);
                    for row in gout.chunks(c) {
                        g.iter_mut().zip(row).for_each(|(a, d)| *a += *d);
                    }
                }
            }
            Op::Affine { x, scale } => {
                if needs(*x) {
                    let g = slot(grads, *x, gout.len());
                    g.iter_mut().zip(gout).for_each(|(a, d)| *a += *scale * *d);
                }
            }
            Op::Tanh(x) => {
                if needs(*x) {
                    let y = node.value.data();
                    let g = slot(grads, *x, gout.len());
                    for ((a, &d), &yv) in g.iter_mut().zip(gout).zip(y) {
                        *a += d * (T::one() - yv * yv);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if needs(*x) {
                    let y = node.value.data();
                    let g = slot(grads, *x, gout.len());
                    for ((a, &d), &yv) in g.iter_mut().zip(gout).zip(y) {
                        *a += d * yv * (T::one() - yv);
                    }
                }
            }
            Op::Relu(x) => {
                if needs(*x) {
                    let xin = val(*x).data();
                    let g = slot(grads, *x, gout.len());
                    for ((a, &d), &xv) in g.iter_mut().zip(gout).zip(xin) {
                        if xv > T::zero() {
                            *a += d;
                        }
                    }
                }
            }
            Op::ConcatCols(xs) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut offset = 0;
                for &v in xs {
                    let c = val(v).cols();
                    if needs(v) {
                        let g = slot(grads, v, rows * c);
                        for r in 0..rows {
                            let src = &gout[r * total + offset..r * total + offset + c];
                            g[r * c..(r + 1) * c]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(a, d)| *a += *d);
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(xs) => {
                let mut offset = 0;
                for &v in xs {
                    let len = val(v).len();
                    if needs(v) {
                        let g = slot(grads, v, len);
                        g.iter_mut()
                            .zip(&gout[offset..offset + len])
                            .for_each(|(a, d)| *a += *d);
                    }
                    offset += len;
                }
            }
            Op::SliceCols { x, start } => {
                if needs(*x) {
                    let tx = val(*x);
                    let (rows, c) = (tx.rows(), tx.cols());
                    let len = node.value.cols();
                    let g = slot(grads, *x, rows * c);
                    for r in 0..rows {
                        let dst = &mut g[r * c + start..r * c + start + len];
                        dst.iter_mut()
                            .zip(&gout[r * len..(r + 1) * len])
                            .for_each(|(a, d)| *a += *d);
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                if needs(*x) {
                    let tx = val(*x);
                    let c = tx.cols();
                    let g = slot(grads, *x, tx.len());
                    for (r, &src) in idx.iter().enumerate() {
                        let dst = &mut g[src * c..(src + 1) * c];
                        dst.iter_mut()
                            .zip(&gout[r * c..(r + 1) * c])
                            .for_each(|(a, d)| *a += *d);
                    }
                }
            }
            Op::Softmax(x) => {
                if needs(*x) {
                    let y = node.value.data();
                    let c = node.value.cols();
                    let g = slot(grads, *x, gout.len());
                    for ((gr, dr), yr) in g.chunks_mut(c).zip(gout.chunks(c)).zip(y.chunks(c)) {
                        let s: T = dr.iter().zip(yr).map(|(&d, &p)| d * p).sum();
                        for ((a, &d), &p) in gr.iter_mut().zip(dr).zip(yr) {
                            *a += p * (d - s);
                        }
                    }
                }
            }
            Op::SoftmaxXent {
                logits,
                targets,
                weights,
                probs,
            } => {
                if needs(*logits) {
                    let v = val(*logits).cols();
                    let floor = T::lit(LOG_FLOOR);
                    let g = slot(grads, *logits, probs.len());
                    for (r, (gr, pr)) in g.chunks_mut(v).zip(probs.chunks(v)).enumerate() {
                        let w = weights[r];
                        if w == T::zero() {
                            continue;
                        }
                        let t = targets[r];
                        // d/dz of -ln(p_t + floor) = -(p_t / (p_t + floor)) (onehot - p)
                        let k = gout[0] * w * pr[t] / (pr[t] + floor);
                        for (j, (a, &p)) in gr.iter_mut().zip(pr).enumerate() {
                            let onehot = if j == t { T::one() } else { T::zero() };
                            *a += k * (p - onehot);
                        }
                    }
                }
            }
            Op::CrossEntropy { probs, target } => {
                if needs(*probs) {
                    let tp = val(*probs);
                    let p = tp.data()[*target];
                    let g = slot(grads, *probs, tp.len());
                    g[*target] -= gout[0] / (p + T::lit(LOG_FLOOR));
                }
            }
            Op::Sum(x) => {
                if needs(*x) {
                    let len = val(*x).len();
                    let g = slot(grads, *x, len);
                    g.iter_mut().for_each(|a| *a += gout[0]);
                }
            }
            Op::MulConst { x, c } => {
                if needs(*x) {
                    let g = slot(grads, *x, gout.len());
                    for ((a, &d), &m) in g.iter_mut().zip(gout).zip(c) {
                        *a += d * m;
                    }
                }
            }
            Op::AddConst(x) | Op::Reshape(x) => {
                if needs(*x) {
                    let g = slot(grads, *x, gout.len());
                    g.iter_mut().zip(gout).for_each(|(a, d)| *a += *d);
                }
            }
            Op::Blend { new, old, mask } => {
                let c = node.value.cols();
                if needs(*new) {
                    let g = slot(grads, *new, gout.len());
                    for ((gr, dr), &m) in g.chunks_mut(c).zip(gout.chunks(c)).zip(mask) {
                        gr.iter_mut().zip(dr).for_each(|(a, &d)| *a += m * d);
                    }
                }
                if needs(*old) {
                    let g = slot(grads, *old, gout.len());
                    for ((gr, dr), &m) in g.chunks_mut(c).zip(gout.chunks(c)).zip(mask) {
                        gr.iter_mut()
                            .zip(dr)
                            .for_each(|(a, &d)| *a += (T::one() - m) * d);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let c = node.value.cols();
                let cf = T::from_usize(c).unwrap();
                let gvals = val(*gain).data();
                if needs(*gain) {
                    let g = slot(grads, *gain, c);
                    for (dr, hr) in gout.chunks(c).zip(xhat.chunks(c)) {
                        g.iter_mut()
                            .zip(dr.iter().zip(hr))
                            .for_each(|(a, (&d, &h))| *a += d * h);
                    }
                }
                if needs(*bias) {
                    let g = slot(grads, *bias, c);
                    for dr in gout.chunks(c) {
                        g.iter_mut().zip(dr).for_each(|(a, &d)| *a += d);
                    }
                }
                if needs(*x) {
                    let g = slot(grads, *x, gout.len());
                    for (r, ((gr, dr), hr)) in g
                        .chunks_mut(c)
                        .zip(gout.chunks(c))
                        .zip(xhat.chunks(c))
                        .enumerate()
                    {
                        // dxhat = d * gain; dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..c {
                            let dh = dr[j] * gvals[j];
                            s1 += dh;
                            s2 += dh * hr[j];
                        }
                        let (m1, m2) = (s1 / cf, s2 / cf);
                        for j in 0..c {
                            let dh = dr[j] * gvals[j];
                            gr[j] += inv_std[r] * (dh - m1 - hr[j] * m2);
                        }
                    }
                }
            }
            Op::AddRepeatRows { x, y, repeat } => {
                let c = node.value.cols();
                if needs(*x) {
                    let g = slot(grads, *x, gout.len());
                    g.iter_mut().zip(gout).for_each(|(a, d)| *a += *d);
                }
                if needs(*y) {
                    let g = slot(grads, *y, val(*y).len());
                    for (r, dr) in gout.chunks(c).enumerate() {
                        let b = r / repeat;
                        g[b * c..(b + 1) * c]
                            .iter_mut()
                            .zip(dr)
                            .for_each(|(a, d)| *a += *d);
                    }
                }
            }
            Op::SwapMid { x, dims } => {
                if needs(*x) {
                    let [o, a, b, inner] = *dims;
                    let back = swap_mid_data(gout, [o, b, a, inner]);
                    let g = slot(grads, *x, gout.len());
                    g.iter_mut().zip(&back).for_each(|(p, d)| *p += *d);
                }
            }
        }
    }
}

fn softmax_row<T: Scalar>(row: &mut [T], keep: impl Fn(usize) -> bool) {
    let mut max = T::neg_infinity();
    for (j, &v) in row.iter().enumerate() {
        if keep(j) && v > max {
            max = v;
        }
    }
    if max == T::neg_infinity() {
        row.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let mut total = T::zero();
    for (j, v) in row.iter_mut().enumerate() {
        if keep(j) {
            *v = (*v - max).exp();
            total += *v;
        } else {
            *v = T::zero();
        }
    }
    row.iter_mut().for_each(|v| *v /= total);
}

fn swap_mid_data<T: Copy>(src: &[T], [outer, a, b, inner]: [usize; 4]) -> Vec<T> {
    let mut out = Vec::with_capacity(src.len());
    for o in 0..outer {
        for j in 0..b {
            for i in 0..a {
                let start = ((o * a + i) * b + j) * inner;
                out.extend_from_slice(&src[start..start + inner]);
            }
        }
    }
    out
}

/// Plain (non-graph) numerically stable softmax of a vector.
pub fn softmax_vec<T: Scalar>(x: &[T]) -> Result<Vec<T>> {
    if x.is_empty() {
        return shape_err("softmax of an empty vector");
    }
    let mut out = x.to_vec();
    softmax_row(&mut out, |_| true);
    Ok(out)
}

/// Compares reverse-mode gradients against central differences.
///
/// `objective` builds a scalar loss from the bound parameters. Returns the
/// maximum over every scalar of every tensor that requires a gradient of
/// `|g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8)`.
pub fn finite_diff_check<T, F>(params: &ParamSet<T>, eps: T, objective: F) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &Bindings) -> Result<Var>,
{
    let eval = |p: &ParamSet<T>| -> Result<T> {
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let loss = objective(&mut g, &b)?;
        if g.value(loss).len() != 1 {
            return shape_err("objective must be scalar");
        }
        Ok(g.value(loss).data()[0])
    };

    let mut g = Graph::new();
    let bindings = params.bind(&mut g, true);
    let loss = objective(&mut g, &bindings)?;
    let base = g.value(loss).data()[0];
    if eval(params)? != base {
        return Err(Error::NonDeterministic(
            "two forward passes disagree".into(),
        ));
    }
    g.backward(loss)?;

    let floor = T::lit(1e-8);
    let two = T::lit(2.0);
    let mut worst = T::zero();
    let mut probe = params.clone();
    for (name, tensor) in params.iter().filter(|(_, t)| t.requires_grad()) {
        let var = bindings.get(name)?;
        let zeros = vec![T::zero(); tensor.len()];
        let analytic = g.grad(var).unwrap_or(&zeros).to_vec();
        for (k, &ad) in analytic.iter().enumerate() {
            let orig = tensor.data()[k];
            probe.get_mut(name)?.data_mut()[k] = orig + eps;
            let up = eval(&probe)?;
            probe.get_mut(name)?.data_mut()[k] = orig - eps;
            let down = eval(&probe)?;
            probe.get_mut(name)?.data_mut()[k] = orig;
            let fd = (up - down) / (two * eps);
            let denom = ad.abs().max(fd.abs()).max(floor);
            let err = (ad - fd).abs() / denom;
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}
