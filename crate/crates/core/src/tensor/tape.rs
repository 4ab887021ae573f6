use std::cell::Cell;
use std::sync::Arc;

use super::{Result, Tensor, TensorError};

/// Lower clamp for probabilities fed to the cross-entropy node; the upper
/// clamp is `1 - BCE_EPSILON`.
pub const BCE_EPSILON: f64 = 1e-7;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate backward-pass defects used to prove that gradient checking
/// catches real bugs. Never set outside tests and the hidden CLI hook.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Negates the adjoint of `tanh`.
    TanhBackwardSign,
}

thread_local! {
    static FAULT: Cell<Option<Fault>> = const { Cell::new(None) };
}

/// Arms (or clears) a backward fault for tapes run on the current thread.
#[doc(hidden)]
pub fn inject_fault(fault: Option<Fault>) {
    FAULT.with(|f| f.set(fault));
}

/// Elementwise operations accepted by [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Sigmoid,
    Tanh,
    Relu,
    Abs,
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatVec(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Abs(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        input: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    GatherRows {
        table: Var,
        indices: Vec<usize>,
    },
    Conv1d {
        input: Var,
        kernels: Var,
        bias: Var,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Softmax(Var),
    Sum(Var),
    Bce {
        probs: Var,
        labels: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records operations in execution order so [`Tape::backward`] can replay
/// their adjoints in reverse.
///
/// A tape belongs to one thread and one forward pass. Operations whose
/// inputs do not require gradients are stored as constants and are skipped
/// during the reverse sweep. After `backward`, only leaf adjoints are kept;
/// calling `backward` again recomputes them from scratch.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Leaves created with `requires_grad` receive adjoints.
    pub fn leaf(&mut self, value: impl Into<Arc<Tensor>>, requires_grad: bool) -> Var {
        self.push(value.into(), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: impl Into<Arc<Tensor>>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Adjoint of a leaf after [`Tape::backward`]. `None` if the leaf does not
    /// require gradients or is not connected to the loss.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.value(v).shape().to_vec(), g.clone()).expect("grad shape"))
    }

    fn push(&mut self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var {
        debug_assert!(
            value.is_finite() || matches!(op, Op::Leaf),
            "non-finite value from {op:?}"
        );
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.push(Arc::new(value), op, requires_grad)
    }

    // ---- linear algebra ----

    /// `a[m×k] · b[k×n] -> [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2("matmul")?;
        let (k2, n) = bv.dims2("matmul")?;
        if k != k2 {
            return Err(mismatch("matmul", av, bv));
        }
        let (ad, bd) = (av.data(), bv.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = ad[i * k + p];
                if x == 0.0 {
                    continue;
                }
                for (o, &y) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                    *o += x * y;
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.record(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `w[m×k] · x[k] -> [m]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (wv, xv) = (self.value(w), self.value(x));
        let (m, k) = wv.dims2("matvec")?;
        if xv.rank() != 1 || xv.len() != k {
            return Err(mismatch("matvec", wv, xv));
        }
        let xd = xv.data();
        let out = wv
            .data()
            .chunks_exact(k)
            .map(|row| dot(row, xd))
            .collect::<Vec<_>>();
        debug_assert_eq!(out.len(), m);
        Ok(self.record(Tensor::vector(out), Op::MatVec(w, x), &[w, x]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = av.dims2("transpose")?;
        let value = Tensor::new(vec![n, m], transposed(av.data(), m, n))?;
        Ok(self.record(value, Op::Transpose(a), &[a]))
    }

    // ---- elementwise ----

    /// Dispatches one of the [`Elementwise`] operations. Unary operations take
    /// one argument, binary operations two.
    pub fn elementwise(&mut self, op: Elementwise, args: &[Var]) -> Result<Var> {
        let arity = match op {
            Elementwise::Sigmoid | Elementwise::Tanh | Elementwise::Relu | Elementwise::Abs => 1,
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => 2,
        };
        if args.len() != arity {
            return Err(TensorError::Index {
                op: "elementwise arity",
                index: args.len(),
                bound: arity,
            });
        }
        Ok(match op {
            Elementwise::Sigmoid => self.sigmoid(args[0]),
            Elementwise::Tanh => self.tanh(args[0]),
            Elementwise::Relu => self.relu(args[0]),
            Elementwise::Abs => self.abs(args[0]),
            Elementwise::Add => self.add(args[0], args[1])?,
            Elementwise::Sub => self.sub(args[0], args[1])?,
            Elementwise::Mul => self.mul(args[0], args[1])?,
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.record(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.record(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.record(value, Op::Mul(a, b), &[a, b]))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.unary(a, |x| x * factor);
        self.record(value, Op::Scale(a, factor), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.unary(a, sigmoid);
        self.record(value, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.unary(a, f64::tanh);
        self.record(value, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.unary(a, |x| x.max(0.0));
        self.record(value, Op::Relu(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.unary(a, f64::abs);
        self.record(value, Op::Abs(a), &[a])
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| f(x)).collect();
        Tensor::new(av.shape().to_vec(), data).expect("same shape")
    }

    fn binary(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            let data = av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            Tensor::new(av.shape().to_vec(), data)
        } else if bv.is_scalar() {
            let y = bv.data()[0];
            let data = av.data().iter().map(|&x| f(x, y)).collect();
            Tensor::new(av.shape().to_vec(), data)
        } else if av.is_scalar() {
            let x = av.data()[0];
            let data = bv.data().iter().map(|&y| f(x, y)).collect();
            Tensor::new(bv.shape().to_vec(), data)
        } else {
            Err(mismatch(op, av, bv))
        }
    }

    // ---- structural ----

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = match inputs.first() {
            Some(&v) => self.value(v),
            None => return Err(TensorError::Empty { op: "concat" }),
        };
        let rank = first.rank();
        if axis >= rank {
            return Err(TensorError::Axis {
                op: "concat",
                axis,
                shape: first.shape().to_vec(),
            });
        }
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = 0;
        for &v in inputs {
            let s = self.value(v).shape();
            let compatible = s.len() == rank
                && s.iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(mismatch("concat", first, self.value(v)));
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let block = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let value = Tensor::new(out_shape, out)?;
        Ok(self.record(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// Slice `start..start + len` along `axis`.
    pub fn narrow(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(input);
        if axis >= t.rank() {
            return Err(TensorError::Axis {
                op: "narrow",
                axis,
                shape: t.shape().to_vec(),
            });
        }
        let dim = t.shape()[axis];
        if start + len > dim {
            return Err(TensorError::Index {
                op: "narrow",
                index: start + len,
                bound: dim,
            });
        }
        let outer: usize = t.shape()[..axis].iter().product();
        let inner: usize = t.shape()[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            out.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::new(shape, out)?;
        Ok(self.record(value, Op::Narrow { input, axis, start }, &[input]))
    }

    /// Splits along `axis` into consecutive pieces of the given sizes.
    pub fn split(&mut self, input: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let t = self.value(input);
        let total: usize = sizes.iter().sum();
        if axis >= t.rank() || t.shape()[axis] != total {
            return Err(TensorError::ShapeMismatch {
                op: "split",
                left: t.shape().to_vec(),
                right: sizes.to_vec(),
            });
        }
        let mut start = 0;
        let mut parts = Vec::with_capacity(sizes.len());
        for &len in sizes {
            parts.push(self.narrow(input, axis, start, len)?);
            start += len;
        }
        Ok(parts)
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).reshape(shape)?;
        Ok(self.record(value, Op::Reshape(input), &[input]))
    }

    /// Selects rows of a rank-2 tensor, in the order given (repeats allowed).
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, cols) = t.dims2("gather_rows")?;
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: i,
                    bound: rows,
                });
            }
            out.extend_from_slice(&t.data()[i * cols..(i + 1) * cols]);
        }
        let value = Tensor::new(vec![indices.len(), cols], out)?;
        Ok(self.record(
            value,
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
            &[table],
        ))
    }

    // ---- sequence ops ----

    /// Valid cross-correlation of `input[T×Cin]` with `kernels[w×Cin×Cout]`
    /// plus `bias[Cout]`, giving `[(T−w+1)×Cout]`.
    pub fn conv1d(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        let (iv, kv, bv) = (self.value(input), self.value(kernels), self.value(bias));
        let (t, cin) = iv.dims2("conv1d")?;
        let [w, kcin, cout] = kv.shape()[..] else {
            return Err(TensorError::Rank {
                op: "conv1d",
                expected: 3,
                shape: kv.shape().to_vec(),
            });
        };
        if kcin != cin {
            return Err(mismatch("conv1d", iv, kv));
        }
        if bv.shape() != [cout] {
            return Err(mismatch("conv1d bias", kv, bv));
        }
        if t < w {
            return Err(TensorError::SequenceTooShort { len: t, width: w });
        }
        let steps = t - w + 1;
        let (id, kd) = (iv.data(), kv.data());
        let mut out = Vec::with_capacity(steps * cout);
        for s in 0..steps {
            let mut acc = bv.data().to_vec();
            for dw in 0..w {
                let x = &id[(s + dw) * cin..(s + dw + 1) * cin];
                for (c, &xc) in x.iter().enumerate() {
                    let k = &kd[(dw * cin + c) * cout..(dw * cin + c + 1) * cout];
                    for (a, &kk) in acc.iter_mut().zip(k) {
                        *a += xc * kk;
                    }
                }
            }
            out.extend(acc);
        }
        let value = Tensor::new(vec![steps, cout], out)?;
        Ok(self.record(
            value,
            Op::Conv1d {
                input,
                kernels,
                bias,
            },
            &[input, kernels, bias],
        ))
    }

    /// Per-channel maximum over the time axis of `[T×C]`. Ties resolve to the
    /// first row.
    pub fn maxpool_over_time(&mut self, input: Var) -> Result<Var> {
        let iv = self.value(input);
        let (t, c) = iv.dims2("maxpool_over_time")?;
        if t == 0 {
            return Err(TensorError::Empty {
                op: "maxpool_over_time",
            });
        }
        let d = iv.data();
        let mut argmax = vec![0usize; c];
        let mut out = d[..c].to_vec();
        for row in 1..t {
            for ch in 0..c {
                let x = d[row * c + ch];
                if x > out[ch] {
                    out[ch] = x;
                    argmax[ch] = row;
                }
            }
        }
        Ok(self.record(Tensor::vector(out), Op::MaxPool { input, argmax }, &[input]))
    }

    /// Numerically stable softmax of a vector.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let iv = self.value(input);
        if iv.rank() != 1 {
            return Err(TensorError::Rank {
                op: "softmax",
                expected: 1,
                shape: iv.shape().to_vec(),
            });
        }
        if iv.is_empty() {
            return Err(TensorError::Empty { op: "softmax" });
        }
        let max = iv.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = iv.data().iter().map(|&x| (x - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let out = exps.into_iter().map(|e| e / total).collect();
        Ok(self.record(Tensor::vector(out), Op::Softmax(input), &[input]))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).data().iter().sum();
        self.record(Tensor::scalar(total), Op::Sum(input), &[input])
    }

    /// Mean binary cross-entropy of `probs` against `labels`, with the
    /// probabilities clamped to `[BCE_EPSILON, 1 − BCE_EPSILON]`. The clamp
    /// passes zero gradient where it is active.
    pub fn bce(&mut self, probs: Var, labels: &[f64]) -> Result<Var> {
        let pv = self.value(probs);
        if pv.len() != labels.len() || labels.is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: "bce",
                left: pv.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        let n = labels.len() as f64;
        let total: f64 = pv
            .data()
            .iter()
            .zip(labels)
            .map(|(&p, &y)| {
                let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        Ok(self.record(
            Tensor::scalar(total / n),
            Op::Bce {
                probs,
                labels: labels.to_vec(),
            },
            &[probs],
        ))
    }

    // ---- reverse sweep ----

    /// Propagates adjoints from a scalar `loss` to every leaf that requires
    /// gradients. Intermediate adjoints are discarded afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 || lv.rank() > 1 {
            return Err(TensorError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let fault = FAULT.with(Cell::get);
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let out = &node.value;
            let mut sweep = Sweep {
                nodes: &self.nodes,
                grads: &mut grads,
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (m, k) = sweep.dims2(*a);
                    let n = out.shape()[1];
                    if sweep.needs(*a) {
                        let bd = sweep.data(*b);
                        sweep.acc(*a, |ga| {
                            for i in 0..m {
                                let gi = &g[i * n..(i + 1) * n];
                                for p in 0..k {
                                    ga[i * k + p] += dot(gi, &bd[p * n..(p + 1) * n]);
                                }
                            }
                        });
                    }
                    if sweep.needs(*b) {
                        let ad = sweep.data(*a);
                        sweep.acc(*b, |gb| {
                            for i in 0..m {
                                let gi = &g[i * n..(i + 1) * n];
                                for p in 0..k {
                                    let x = ad[i * k + p];
                                    for (o, &gg) in gb[p * n..(p + 1) * n].iter_mut().zip(gi) {
                                        *o += x * gg;
                                    }
                                }
                            }
                        });
                    }
                }
                Op::MatVec(w, x) => {
                    let (_, k) = sweep.dims2(*w);
                    if sweep.needs(*w) {
                        let xd = sweep.data(*x);
                        sweep.acc(*w, |gw| {
                            for (row, &gi) in gw.chunks_exact_mut(k).zip(&g) {
                                if gi == 0.0 {
                                    continue;
                                }
                                for (o, &xv) in row.iter_mut().zip(xd) {
                                    *o += gi * xv;
                                }
                            }
                        });
                    }
                    if sweep.needs(*x) {
                        let wd = sweep.data(*w);
                        sweep.acc(*x, |gx| {
                            for (row, &gi) in wd.chunks_exact(k).zip(&g) {
                                for (o, &wv) in gx.iter_mut().zip(row) {
                                    *o += gi * wv;
                                }
                            }
                        });
                    }
                }
                Op::Transpose(a) => {
                    let (m, n) = sweep.dims2(*a);
                    let gt = transposed(&g, n, m);
                    sweep.acc(*a, |ga| add_into(ga, &gt));
                }
                Op::Add(a, b) => {
                    sweep.acc_broadcast(*a, &g, |_, gg| gg);
                    sweep.acc_broadcast(*b, &g, |_, gg| gg);
                }
                Op::Sub(a, b) => {
                    sweep.acc_broadcast(*a, &g, |_, gg| gg);
                    sweep.acc_broadcast(*b, &g, |_, gg| -gg);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (sweep.value(*a), sweep.value(*b));
                    let other_b = broadcast_view(bv, g.len());
                    let other_a = broadcast_view(av, g.len());
                    sweep.acc_broadcast(*a, &g, |j, gg| gg * other_b(j));
                    sweep.acc_broadcast(*b, &g, |j, gg| gg * other_a(j));
                }
                Op::Scale(a, factor) => {
                    sweep.acc(*a, |ga| {
                        for (o, &gg) in ga.iter_mut().zip(&g) {
                            *o += gg * factor;
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    let y = out.data();
                    sweep.acc(*a, |ga| {
                        for ((o, &gg), &yy) in ga.iter_mut().zip(&g).zip(y) {
                            *o += gg * yy * (1.0 - yy);
                        }
                    });
                }
                Op::Tanh(a) => {
                    let y = out.data();
                    let sign = if fault == Some(Fault::TanhBackwardSign) {
                        -1.0
                    } else {
                        1.0
                    };
                    sweep.acc(*a, |ga| {
                        for ((o, &gg), &yy) in ga.iter_mut().zip(&g).zip(y) {
                            *o += sign * gg * (1.0 - yy * yy);
                        }
                    });
                }
                Op::Relu(a) => {
                    let x = sweep.data(*a);
                    sweep.acc(*a, |ga| {
                        for ((o, &gg), &xx) in ga.iter_mut().zip(&g).zip(x) {
                            if xx > 0.0 {
                                *o += gg;
                            }
                        }
                    });
                }
                Op::Abs(a) => {
                    let x = sweep.data(*a);
                    sweep.acc(*a, |ga| {
                        for ((o, &gg), &xx) in ga.iter_mut().zip(&g).zip(x) {
                            if xx > 0.0 {
                                *o += gg;
                            } else if xx < 0.0 {
                                *o -= gg;
                            }
                        }
                    });
                }
                Op::Concat { inputs, axis } => {
                    let shape = out.shape();
                    let outer: usize = shape[..*axis].iter().product();
                    let inner: usize = shape[axis + 1..].iter().product();
                    let row = shape[*axis] * inner;
                    let mut offset = 0;
                    for &v in inputs {
                        let block = sweep.value(v).shape()[*axis] * inner;
                        if sweep.needs(v) {
                            sweep.acc(v, |gv| {
                                for o in 0..outer {
                                    let src = &g[o * row + offset..o * row + offset + block];
                                    add_into(&mut gv[o * block..(o + 1) * block], src);
                                }
                            });
                        }
                        offset += block;
                    }
                }
                Op::Narrow { input, axis, start } => {
                    let shape = sweep.value(*input).shape();
                    let dim = shape[*axis];
                    let outer: usize = shape[..*axis].iter().product();
                    let inner: usize = shape[axis + 1..].iter().product();
                    let len = out.shape()[*axis];
                    sweep.acc(*input, |gi| {
                        for o in 0..outer {
                            let base = o * dim * inner + start * inner;
                            let src = &g[o * len * inner..(o + 1) * len * inner];
                            add_into(&mut gi[base..base + len * inner], src);
                        }
                    });
                }
                Op::Reshape(a) => sweep.acc(*a, |ga| add_into(ga, &g)),
                Op::GatherRows { table, indices } => {
                    let cols = out.shape()[1];
                    sweep.acc(*table, |gt| {
                        for (r, &i) in indices.iter().enumerate() {
                            add_into(
                                &mut gt[i * cols..(i + 1) * cols],
                                &g[r * cols..(r + 1) * cols],
                            );
                        }
                    });
                }
                Op::Conv1d {
                    input,
                    kernels,
                    bias,
                } => {
                    let (_, cin) = sweep.dims2(*input);
                    let kshape = sweep.value(*kernels).shape();
                    let (w, cout) = (kshape[0], kshape[2]);
                    let steps = out.shape()[0];
                    if sweep.needs(*input) {
                        let kd = sweep.data(*kernels);
                        sweep.acc(*input, |gi| {
                            for s in 0..steps {
                                let gs = &g[s * cout..(s + 1) * cout];
                                for dw in 0..w {
                                    for c in 0..cin {
                                        let k =
                                            &kd[(dw * cin + c) * cout..(dw * cin + c + 1) * cout];
                                        gi[(s + dw) * cin + c] += dot(gs, k);
                                    }
                                }
                            }
                        });
                    }
                    if sweep.needs(*kernels) {
                        let id = sweep.data(*input);
                        sweep.acc(*kernels, |gk| {
                            for s in 0..steps {
                                let gs = &g[s * cout..(s + 1) * cout];
                                for dw in 0..w {
                                    for c in 0..cin {
                                        let x = id[(s + dw) * cin + c];
                                        let k = &mut gk
                                            [(dw * cin + c) * cout..(dw * cin + c + 1) * cout];
                                        for (o, &gg) in k.iter_mut().zip(gs) {
                                            *o += x * gg;
                                        }
                                    }
                                }
                            }
                        });
                    }
                    if sweep.needs(*bias) {
                        sweep.acc(*bias, |gb| {
                            for gs in g.chunks_exact(cout) {
                                add_into(gb, gs);
                            }
                        });
                    }
                }
                Op::MaxPool { input, argmax } => {
                    let c = argmax.len();
                    sweep.acc(*input, |gi| {
                        for (ch, &row) in argmax.iter().enumerate() {
                            gi[row * c + ch] += g[ch];
                        }
                    });
                }
                Op::Softmax(a) => {
                    let y = out.data();
                    let inner = dot(&g, y);
                    sweep.acc(*a, |ga| {
                        for ((o, &gg), &yy) in ga.iter_mut().zip(&g).zip(y) {
                            *o += yy * (gg - inner);
                        }
                    });
                }
                Op::Sum(a) => {
                    let gg = g[0];
                    sweep.acc(*a, |ga| ga.iter_mut().for_each(|o| *o += gg));
                }
                Op::Bce { probs, labels } => {
                    let p = sweep.data(*probs);
                    let n = labels.len() as f64;
                    let gg = g[0];
                    sweep.acc(*probs, |gp| {
                        for ((o, &pp), &y) in gp.iter_mut().zip(p).zip(labels) {
                            if (BCE_EPSILON..=1.0 - BCE_EPSILON).contains(&pp) {
                                *o += gg * (pp - y) / (pp * (1.0 - pp)) / n;
                            }
                        }
                    });
                }
            }
        }
        self.grads = grads;
        Ok(())
    }
}

/// Mutable view used during the reverse sweep: reads node values and
/// accumulates into input adjoints.
struct Sweep<'a> {
    nodes: &'a [Node],
    grads: &'a mut Vec<Option<Vec<f64>>>,
}

impl<'a> Sweep<'a> {
    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn value(&self, v: Var) -> &'a Tensor {
        &self.nodes[v.0].value
    }

    fn data(&self, v: Var) -> &'a [f64] {
        self.nodes[v.0].value.data()
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let s = self.value(v).shape();
        (s[0], s[1])
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.needs(v) {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
    }

    /// Accumulates `f(j, g[j])` into `v`, summing over the broadcast axis when
    /// `v` is a scalar operand of a larger result.
    fn acc_broadcast(&mut self, v: Var, g: &[f64], f: impl Fn(usize, f64) -> f64) {
        let len = self.value(v).len();
        if len == g.len() {
            self.acc(v, |gv| {
                for (j, (o, &gg)) in gv.iter_mut().zip(g).enumerate() {
                    *o += f(j, gg);
                }
            });
        } else {
            let total: f64 = g.iter().enumerate().map(|(j, &gg)| f(j, gg)).sum();
            self.acc(v, |gv| gv[0] += total);
        }
    }
}

fn broadcast_view(t: &Tensor, len: usize) -> impl Fn(usize) -> f64 + '_ {
    let scalar = t.len() != len;
    move |j| if scalar { t.data()[0] } else { t.data()[j] }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn transposed(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}
