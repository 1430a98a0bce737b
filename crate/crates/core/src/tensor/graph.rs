use std::collections::BTreeMap;

use super::kernels::{self, Bcast, ImageDims};
use super::{ParamId, ParamStore, Tensor, TensorError};

/// Handle to a tensor recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Concat(Vec<Var>),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Sum(Var),
    Mean(Var),
    Abs(Var),
    Gather(Var, Vec<usize>),
    ScatterAdd(Var, Vec<usize>),
    Conv2d(Var, Var),
    GridSample(Var, Var),
    Reshape(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// A single forward pass recorded as a topologically ordered tape.
///
/// Nodes are appended after their inputs, so reverse insertion order is a
/// valid backward schedule. Leaf gradients accumulate across `backward` calls
/// until [`Graph::zero_grad`].
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: BTreeMap<ParamId, Var>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        op_name: &'static str,
        value: Tensor,
        op: Op,
        inputs: &[Var],
    ) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push(value, op, needs_grad))
    }

    /// A constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives a gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Inserts a parameter (once per graph) as a gradient-receiving leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Leaf, true);
        self.nodes[v.0].param = Some(id);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shape(v), g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = match (ta.shape(), tb.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            _ => return Err(shape_err("matmul", ta, tb)),
        };
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, false);
        let t = Tensor::new(&[m, n], out)?;
        self.push_checked("matmul", t, Op::MatMul(a, b), &[a, b])
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, Vec<usize>), TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = kernels::broadcast_shape(ta.shape(), tb.shape())
            .ok_or_else(|| shape_err(name, ta, tb))?;
        let ia = Bcast::new(ta.shape(), &shape);
        let ib = Bcast::new(tb.shape(), &shape);
        let total: usize = shape.iter().product();
        let (da, db) = (ta.data(), tb.data());
        let data = (0..total)
            .map(|i| f(da[ia.index(i)], db[ib.index(i)]))
            .collect();
        Ok((Tensor::new(&shape, data)?, shape))
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (t, _) = self.binary("add", a, b, |x, y| x + y)?;
        self.push_checked("add", t, Op::Add(a, b), &[a, b])
    }

    /// Elementwise product with numpy-style broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (t, _) = self.binary("multiply", a, b, |x, y| x * y)?;
        self.push_checked("multiply", t, Op::Mul(a, b), &[a, b])
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::EmptyDim(vec![0]))?;
        let lead = {
            let s = self.shape(first);
            s[..s.len() - 1].to_vec()
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(shape_err("concat", self.value(first), self.value(p)));
            }
            widths.push(s[s.len() - 1]);
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let t = Tensor::new(&shape, data)?;
        self.push_checked("concat", t, Op::Concat(parts.to_vec()), parts)
    }

    fn unary(
        &mut self,
        name: &'static str,
        x: Var,
        op: Op,
        f: impl Fn(f64) -> f64,
    ) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(tx.shape(), data)?;
        self.push_checked(name, t, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("relu", x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("sigmoid", x, Op::Sigmoid(x), |v| 1.0 / (1.0 + (-v).exp()))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("tanh", x, Op::Tanh(x), f64::tanh)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("abs", x, Op::Abs(x), f64::abs)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.value(x).data().iter().sum();
        self.push_checked("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push_checked("mean", Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Embedding lookup: rows `indices` of `table`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(table);
        let rows = t.shape()[0];
        let width = t.numel() / rows;
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            if i >= rows {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: i,
                    len: rows,
                });
            }
            data.extend_from_slice(t.row(i));
        }
        let mut shape = t.shape().to_vec();
        shape[0] = indices.len();
        let out = Tensor::new(&shape, data)?;
        self.push_checked(
            "gather_rows",
            out,
            Op::Gather(table, indices.to_vec()),
            &[table],
        )
    }

    /// Segment sum: row `k` of `src` is added into row `indices[k]` of an
    /// `rows`-row output.
    pub fn scatter_add_rows(
        &mut self,
        src: Var,
        indices: &[usize],
        rows: usize,
    ) -> Result<Var, TensorError> {
        let t = self.value(src);
        if t.shape()[0] != indices.len() {
            return Err(TensorError::Shape {
                op: "scatter_add_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![indices.len()],
            });
        }
        let width = t.numel() / t.shape()[0];
        let mut data = vec![0.0; rows * width];
        for (k, &i) in indices.iter().enumerate() {
            if i >= rows {
                return Err(TensorError::Index {
                    op: "scatter_add_rows",
                    index: i,
                    len: rows,
                });
            }
            for (d, s) in data[i * width..(i + 1) * width].iter_mut().zip(t.row(k)) {
                *d += s;
            }
        }
        let mut shape = t.shape().to_vec();
        shape[0] = rows;
        let out = Tensor::new(&shape, data)?;
        self.push_checked(
            "scatter_add_rows",
            out,
            Op::ScatterAdd(src, indices.to_vec()),
            &[src],
        )
    }

    /// 3×3 convolution, stride 1, zero padding. `input` is `[N,H,W,C]` or
    /// `[H,W,C]`; `kernel` is `[3,3,C,C_out]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var) -> Result<Var, TensorError> {
        let (ti, tk) = (self.value(input), self.value(kernel));
        let dims = ImageDims::of(ti.shape()).ok_or_else(|| shape_err("conv2d", ti, tk))?;
        let c_out = match *tk.shape() {
            [3, 3, c, co] if c == dims.c => co,
            _ => return Err(shape_err("conv2d", ti, tk)),
        };
        let cols = kernels::im2col(ti.data(), dims);
        let mut out = vec![0.0; dims.pixels() * c_out];
        kernels::gemm(
            dims.pixels(),
            9 * dims.c,
            c_out,
            &cols,
            false,
            tk.data(),
            false,
            &mut out,
            false,
        );
        let mut shape = ti.shape().to_vec();
        *shape.last_mut().unwrap() = c_out;
        let t = Tensor::new(&shape, out)?;
        self.push_checked("conv2d", t, Op::Conv2d(input, kernel), &[input, kernel])
    }

    /// Backward bilinear warp: `out[y,x] = image(x + flow_x, y + flow_y)` with
    /// border clamping. `flow` is in pixels, shaped like `image` with 2 channels.
    pub fn bilinear_sample(&mut self, image: Var, flow: Var) -> Result<Var, TensorError> {
        let (ti, tf) = (self.value(image), self.value(flow));
        let dims = ImageDims::of(ti.shape()).ok_or_else(|| shape_err("bilinear_sample", ti, tf))?;
        let ok = tf.rank() == ti.rank()
            && tf.shape()[..ti.rank() - 1] == ti.shape()[..ti.rank() - 1]
            && tf.shape()[ti.rank() - 1] == 2;
        if !ok {
            return Err(shape_err("bilinear_sample", ti, tf));
        }
        let out = kernels::grid_sample(ti.data(), tf.data(), dims);
        let t = Tensor::new(ti.shape(), out)?;
        self.push_checked(
            "bilinear_sample",
            t,
            Op::GridSample(image, flow),
            &[image, flow],
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(x).clone().reshaped(shape)?;
        self.push_checked("reshape", t, Op::Reshape(x), &[x])
    }

    /// Reverse pass from a scalar `loss`. Leaf gradients are added to any
    /// gradients left by earlier calls.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if loss.0 >= self.nodes.len() {
            return Err(TensorError::UnknownVar(loss.0));
        }
        let lt = &self.nodes[loss.0].value;
        if lt.numel() != 1 {
            return Err(TensorError::NotScalar(lt.shape().to_vec()));
        }
        let mut tmp: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        tmp[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = tmp[idx].take() else {
                continue;
            };
            if matches!(self.nodes[idx].op, Op::Leaf) {
                tmp[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut tmp);
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if !(node.needs_grad && matches!(node.op, Op::Leaf)) {
                continue;
            }
            let acc = self.grads[idx].get_or_insert_with(|| vec![0.0; node.value.numel()]);
            if let Some(Some(g)) = tmp.get(idx) {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        Ok(())
    }

    /// Adds the gradients of every parameter leaf into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for (&id, &v) in &self.params {
            if let Some(g) = &self.grads[v.0] {
                store.accumulate_grad(id, g);
            }
        }
    }

    fn propagate(&self, idx: usize, g: &[f64], tmp: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        // Takes the input's gradient buffer out of `tmp`, lets `f` add into it,
        // and puts it back. Taking and restoring keeps aliased inputs
        // (e.g. `mul(x, x)`) correct.
        let with_buf = |v: Var, tmp: &mut [Option<Vec<f64>>], f: &mut dyn FnMut(&mut [f64])| {
            let n = self.nodes[v.0].value.numel();
            let mut b = tmp[v.0].take().unwrap_or_else(|| vec![0.0; n]);
            f(&mut b);
            tmp[v.0] = Some(b);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if wants(*a) {
                    with_buf(*a, tmp, &mut |ga| {
                        kernels::gemm(m, n, k, g, false, tb.data(), true, ga, true)
                    });
                }
                if wants(*b) {
                    with_buf(*b, tmp, &mut |gb| {
                        kernels::gemm(k, m, n, ta.data(), true, g, false, gb, true)
                    });
                }
            }
            Op::Add(a, b) | Op::Mul(a, b) => {
                let is_mul = matches!(node.op, Op::Mul(..));
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ia = Bcast::new(ta.shape(), out.shape());
                let ib = Bcast::new(tb.shape(), out.shape());
                if wants(*a) {
                    with_buf(*a, tmp, &mut |ga| {
                        for (i, gi) in g.iter().enumerate() {
                            let f = if is_mul { tb.data()[ib.index(i)] } else { 1.0 };
                            ga[ia.index(i)] += gi * f;
                        }
                    });
                }
                if wants(*b) {
                    with_buf(*b, tmp, &mut |gb| {
                        for (i, gi) in g.iter().enumerate() {
                            let f = if is_mul { ta.data()[ia.index(i)] } else { 1.0 };
                            gb[ib.index(i)] += gi * f;
                        }
                    });
                }
            }
            Op::Concat(parts) => {
                let total = *out.shape().last().unwrap();
                let rows = out.numel() / total;
                let mut off = 0;
                for &p in parts {
                    let w = *self.shape(p).last().unwrap();
                    if wants(p) {
                        with_buf(p, tmp, &mut |gp| {
                            for r in 0..rows {
                                for c in 0..w {
                                    gp[r * w + c] += g[r * total + off + c];
                                }
                            }
                        });
                    }
                    off += w;
                }
            }
            Op::Relu(x) => {
                let xs = self.value(*x).data();
                with_buf(*x, tmp, &mut |gx| {
                    for ((gxi, gi), xi) in gx.iter_mut().zip(g).zip(xs) {
                        if *xi > 0.0 {
                            *gxi += gi;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => with_buf(*x, tmp, &mut |gx| {
                for ((gxi, gi), s) in gx.iter_mut().zip(g).zip(out.data()) {
                    *gxi += gi * s * (1.0 - s);
                }
            }),
            Op::Tanh(x) => with_buf(*x, tmp, &mut |gx| {
                for ((gxi, gi), t) in gx.iter_mut().zip(g).zip(out.data()) {
                    *gxi += gi * (1.0 - t * t);
                }
            }),
            Op::Abs(x) => {
                let xs = self.value(*x).data();
                with_buf(*x, tmp, &mut |gx| {
                    for ((gxi, gi), xi) in gx.iter_mut().zip(g).zip(xs) {
                        if *xi != 0.0 {
                            *gxi += gi * xi.signum();
                        }
                    }
                });
            }
            Op::Sum(x) | Op::Mean(x) => {
                let n = self.value(*x).numel();
                let scale = if matches!(node.op, Op::Mean(_)) {
                    g[0] / n as f64
                } else {
                    g[0]
                };
                with_buf(*x, tmp, &mut |gx| gx.iter_mut().for_each(|v| *v += scale));
            }
            Op::Gather(table, indices) => {
                let t = self.value(*table);
                let width = t.numel() / t.shape()[0];
                with_buf(*table, tmp, &mut |gt| {
                    for (k, &i) in indices.iter().enumerate() {
                        for c in 0..width {
                            gt[i * width + c] += g[k * width + c];
                        }
                    }
                });
            }
            Op::ScatterAdd(src, indices) => {
                let width = out.numel() / out.shape()[0];
                with_buf(*src, tmp, &mut |gs| {
                    for (k, &i) in indices.iter().enumerate() {
                        for c in 0..width {
                            gs[k * width + c] += g[i * width + c];
                        }
                    }
                });
            }
            Op::Conv2d(input, kernel) => {
                let (ti, tk) = (self.value(*input), self.value(*kernel));
                let dims = ImageDims::of(ti.shape()).unwrap();
                let c_out = tk.shape()[3];
                let p = dims.pixels();
                let k9 = 9 * dims.c;
                if wants(*kernel) {
                    let cols = kernels::im2col(ti.data(), dims);
                    with_buf(*kernel, tmp, &mut |gk| {
                        kernels::gemm(k9, p, c_out, &cols, true, g, false, gk, true)
                    });
                }
                if wants(*input) {
                    let mut dcols = vec![0.0; p * k9];
                    kernels::gemm(p, c_out, k9, g, false, tk.data(), true, &mut dcols, false);
                    with_buf(*input, tmp, &mut |gi| kernels::col2im_add(&dcols, dims, gi));
                }
            }
            Op::GridSample(image, flow) => {
                let (ti, tf) = (self.value(*image), self.value(*flow));
                let dims = ImageDims::of(ti.shape()).unwrap();
                if wants(*image) {
                    with_buf(*image, tmp, &mut |gi| {
                        kernels::grid_sample_backward(ti.data(), tf.data(), dims, g, Some(gi), None)
                    });
                }
                if wants(*flow) {
                    with_buf(*flow, tmp, &mut |gf| {
                        kernels::grid_sample_backward(ti.data(), tf.data(), dims, g, None, Some(gf))
                    });
                }
            }
            Op::Reshape(x) => with_buf(*x, tmp, &mut |gx| {
                for (gxi, gi) in gx.iter_mut().zip(g) {
                    *gxi += gi;
                }
            }),
        }
    }
}
