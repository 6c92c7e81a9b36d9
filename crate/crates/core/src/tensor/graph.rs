use super::kernels::{self, Window};
use super::{Real, Result, Tensor, TensorError};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
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
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MulScalar(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Logit {
        x: Var,
        eps: T,
    },
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        win: Window,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        win: Window,
    },
    AvgPool {
        x: Var,
        wh: usize,
        ww: usize,
    },
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    MulMap(Var, Var),
    Pow(Var, Var),
    PadReplicate(Var),
    Crop(Var),
    Depthwise {
        x: Var,
        kernel: Tensor<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Record of a forward computation, replayed in reverse by [`Graph::backward`].
///
/// Nodes are appended in evaluation order, so every input precedes its
/// consumer and the record is acyclic by construction. A graph is meant to
/// live for one forward/backward pass on one thread.
#[derive(Debug, Default)]
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], available for leaf variables.
#[derive(Debug)]
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `var`. `None` when `var` does not
    /// influence the loss or was created with [`Graph::constant`].
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::get`] but returns zeros shaped like `like` when the
    /// variable received no gradient.
    pub fn get_or_zeros(&self, var: Var, like: &[usize]) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(like))
    }
}

fn shape_mismatch(op: &'static str, a: &Tensor<impl Real>, b: &Tensor<impl Real>) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn invalid(op: &'static str, message: String) -> TensorError {
    TensorError::InvalidShape { op, message }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A differentiable input (typically a parameter).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let value = self.value(x).map(f);
        self.push(name, value, op, &[x])
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_mismatch(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(name, value, op, &[a, b])
    }

    /// Matrix product of `[m,k]` and `[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    /// Transpose of a matrix.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose()?;
        self.push("transpose", value, Op::Transpose(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        self.unary("scale", x, |v| v * c, Op::Scale(x, c))
    }

    /// Adds a constant to every element.
    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        self.unary("add_scalar", x, |v| v + c, Op::AddScalar(x))
    }

    /// Multiplies every element of `x` by the single value held in `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let ts = self.value(s);
        if ts.len() != 1 {
            return Err(invalid(
                "mul_scalar",
                format!("scale must hold one value, got {:?}", ts.shape()),
            ));
        }
        let c = ts.data()[0];
        self.unary("mul_scalar", x, |v| v * c, Op::MulScalar(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    /// Inverse sigmoid `ln(c / (1 − c))` of `c = clamp(x, eps, 1 − eps)`.
    /// The gradient is zero where the clamp is active.
    pub fn logit(&mut self, x: Var, eps: T) -> Result<Var> {
        if !(eps > T::zero() && eps < T::from_f64_lossy(0.5)) {
            return Err(invalid("logit", format!("eps must lie in (0, 0.5), got {eps:?}")));
        }
        let hi = T::one() - eps;
        self.unary(
            "logit",
            x,
            |v| {
                let c = v.max(eps).min(hi);
                (c / (T::one() - c)).ln()
            },
            Op::Logit { x, eps },
        )
    }

    /// Softmax along `axis`; every slice along that axis sums to one.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let shape = t.shape();
        if axis >= shape.len() {
            return Err(invalid("softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = t.data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let mut max = T::neg_infinity();
                for j in 0..len {
                    max = max.max(src[at(j)]);
                }
                if max == T::neg_infinity() {
                    return Err(invalid("softmax", "slice is entirely -inf".into()));
                }
                let mut total = T::zero();
                for j in 0..len {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[at(j)] /= total;
                }
            }
        }
        let value = Tensor::new(shape.to_vec(), out)?;
        self.push("softmax", value, Op::Softmax { x, outer, len, inner }, &[x])
    }

    /// 2-D cross-correlation of `x: [Cin,H,W]` with `w: [Cout,Cin,k,k]` plus an
    /// optional per-channel `bias: [Cout]`.
    ///
    /// Output extent is `⌊(H + 2·pad − k)/stride⌋ + 1`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let [cin, h, wd] = tx.dims3("conv2d")?;
        let [cout, wcin, kh, kw] = tw.dims4("conv2d")?;
        if wcin != cin {
            return Err(shape_mismatch("conv2d", tx, tw));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(invalid(
                "conv2d",
                format!("kernel must be square and odd, got {kh}x{kw}"),
            ));
        }
        if stride == 0 {
            return Err(invalid("conv2d", "stride must be positive".into()));
        }
        let k = kh;
        let (span_h, span_w) = (h + 2 * pad, wd + 2 * pad);
        if span_h < k || span_w < k {
            return Err(invalid(
                "conv2d",
                format!("input {h}x{wd} with pad {pad} is smaller than kernel {k}"),
            ));
        }
        let win = Window {
            channels: cin,
            height: h,
            width: wd,
            kernel: k,
            stride,
            pad,
            out_height: (span_h - k) / stride + 1,
            out_width: (span_w - k) / stride + 1,
        };
        if let Some(b) = bias {
            if self.value(b).shape() != [cout] {
                return Err(shape_mismatch("conv2d bias", self.value(b), tw));
            }
        }
        let cols_owned;
        let cols: &[T] = if win.is_pointwise() {
            tx.data()
        } else {
            cols_owned = kernels::im2col(tx.data(), &win);
            &cols_owned
        };
        let (r, l) = (win.rows(), win.cols());
        let mut out = vec![T::zero(); cout * l];
        if let Some(b) = bias {
            for (row, &bv) in out.chunks_mut(l).zip(self.value(b).data()) {
                row.fill(bv);
            }
        }
        T::gemm(
            cout,
            r,
            l,
            T::one(),
            tw.data(),
            (r as isize, 1),
            cols,
            (l as isize, 1),
            T::one(),
            &mut out,
        );
        let value = Tensor::new([cout, win.out_height, win.out_width], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        self.push("conv2d", value, Op::Conv2d { x, w, b: bias, win }, &inputs)
    }

    /// Transposed convolution (the adjoint of a strided [`Graph::conv2d`]).
    ///
    /// `x: [Cin,H,W]`, `w: [Cin,Cout,k,k]`; output extent `(H−1)·stride − 2·pad + k`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let [cin, h, wd] = tx.dims3("conv_transpose2d")?;
        let [wcin, cout, kh, kw] = tw.dims4("conv_transpose2d")?;
        if wcin != cin || kh != kw {
            return Err(shape_mismatch("conv_transpose2d", tx, tw));
        }
        let k = kh;
        if stride == 0 || (h - 1) * stride + k <= 2 * pad || (wd - 1) * stride + k <= 2 * pad {
            return Err(invalid("conv_transpose2d", format!("degenerate geometry for {h}x{wd}")));
        }
        let win = Window {
            channels: cout,
            height: (h - 1) * stride + k - 2 * pad,
            width: (wd - 1) * stride + k - 2 * pad,
            kernel: k,
            stride,
            pad,
            out_height: h,
            out_width: wd,
        };
        if let Some(b) = bias {
            if self.value(b).shape() != [cout] {
                return Err(shape_mismatch("conv_transpose2d bias", self.value(b), tw));
            }
        }
        let (r, l) = (win.rows(), win.cols());
        let mut cols = vec![T::zero(); r * l];
        T::gemm(
            r,
            cin,
            l,
            T::one(),
            tw.data(),
            (1, r as isize),
            tx.data(),
            (l as isize, 1),
            T::zero(),
            &mut cols,
        );
        let plane = win.height * win.width;
        let mut out = vec![T::zero(); cout * plane];
        if let Some(b) = bias {
            for (row, &bv) in out.chunks_mut(plane).zip(self.value(b).data()) {
                row.fill(bv);
            }
        }
        kernels::col2im(&cols, &win, &mut out);
        let value = Tensor::new([cout, win.height, win.width], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        self.push(
            "conv_transpose2d",
            value,
            Op::ConvTranspose2d { x, w, b: bias, win },
            &inputs,
        )
    }

    /// Average pooling of `[C,H,W]` with a non-overlapping `wh × ww` window
    /// (stride equal to the window). `H` and `W` must be divisible.
    pub fn avg_pool2d(&mut self, x: Var, wh: usize, ww: usize) -> Result<Var> {
        let t = self.value(x);
        let [c, h, w] = t.dims3("avg_pool2d")?;
        if wh == 0 || ww == 0 || h % wh != 0 || w % ww != 0 {
            return Err(invalid(
                "avg_pool2d",
                format!("{h}x{w} is not divisible into {wh}x{ww} windows"),
            ));
        }
        let out = kernels::avg_pool(t.data(), c, h, w, wh, ww);
        let value = Tensor::new([c, h / wh, w / ww], out)?;
        self.push("avg_pool2d", value, Op::AvgPool { x, wh, ww }, &[x])
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push("sum", value, Op::Sum(x), &[x])
    }

    /// Mean of all elements, as a one-element tensor.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).mean());
        self.push("mean", value, Op::Mean(x), &[x])
    }

    /// Concatenates along the leading axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| invalid("concat", "nothing to concatenate".into()))?;
        let tail = self.value(first).shape()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &v in xs {
            let t = self.value(v);
            if t.shape()[1..] != tail[..] {
                return Err(shape_mismatch("concat", self.value(first), t));
            }
            lead += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let value = Tensor::new(shape, data)?;
        self.push("concat", value, Op::Concat(xs.to_vec()), xs)
    }

    /// `x[start..start+len]` along the leading axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let lead = t.shape()[0];
        if len == 0 || start + len > lead {
            return Err(invalid(
                "slice",
                format!("range {start}..{} out of 0..{lead}", start + len),
            ));
        }
        let stride = t.len() / lead;
        let mut shape = t.shape().to_vec();
        shape[0] = len;
        let value = Tensor::new(shape, t.data()[start * stride..(start + len) * stride].to_vec())?;
        self.push("slice", value, Op::Slice { x, start }, &[x])
    }

    /// Multiplies every channel of `x: [C,H,W]` by the map `m: [1,H,W]`.
    pub fn mul_map(&mut self, x: Var, m: Var) -> Result<Var> {
        let (tx, tm) = (self.value(x), self.value(m));
        let [_, h, w] = tx.dims3("mul_map")?;
        if tm.shape() != [1, h, w] {
            return Err(shape_mismatch("mul_map", tx, tm));
        }
        let plane = h * w;
        let data = tx
            .data()
            .chunks(plane)
            .flat_map(|ch| ch.iter().zip(tm.data()).map(|(&a, &b)| a * b))
            .collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("mul_map", value, Op::MulMap(x, m), &[x, m])
    }

    /// Elementwise `x^e` for nonnegative `x` and a single exponent `e`.
    ///
    /// `0^e` is 0, and both partial derivatives at `x = 0` are taken as 0 so
    /// black pixels never produce singular gradients for `e` in `(1, 2)`.
    pub fn pow(&mut self, x: Var, e: Var) -> Result<Var> {
        let te = self.value(e);
        if te.len() != 1 {
            return Err(invalid(
                "pow",
                format!("exponent must hold one value, got {:?}", te.shape()),
            ));
        }
        let p = te.data()[0];
        self.unary(
            "pow",
            x,
            |v| if v == T::zero() { T::zero() } else { v.powf(p) },
            Op::Pow(x, e),
        )
    }

    /// Extends `[C,H,W]` by `pad_h` rows at the bottom and `pad_w` columns at
    /// the right, replicating the edge values.
    pub fn pad_replicate(&mut self, x: Var, pad_h: usize, pad_w: usize) -> Result<Var> {
        let t = self.value(x);
        let [c, h, w] = t.dims3("pad_replicate")?;
        let (ho, wo) = (h + pad_h, w + pad_w);
        let mut out = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for y in 0..ho {
                let row = (ch * h + y.min(h - 1)) * w;
                out.extend((0..wo).map(|xx| t.data()[row + xx.min(w - 1)]));
            }
        }
        let value = Tensor::new([c, ho, wo], out)?;
        self.push("pad_replicate", value, Op::PadReplicate(x), &[x])
    }

    /// Top-left `[C,h,w]` window of `[C,H,W]`.
    pub fn crop(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let t = self.value(x);
        let [c, th, tw] = t.dims3("crop")?;
        if h == 0 || w == 0 || h > th || w > tw {
            return Err(invalid("crop", format!("cannot crop {th}x{tw} to {h}x{w}")));
        }
        let mut out = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in 0..h {
                let row = (ch * th + y) * tw;
                out.extend_from_slice(&t.data()[row..row + w]);
            }
        }
        let value = Tensor::new([c, h, w], out)?;
        self.push("crop", value, Op::Crop(x), &[x])
    }

    /// Filters every channel of `[C,H,W]` with a fixed `[k,k]` kernel, keeping
    /// only fully overlapping positions (`[C,H−k+1,W−k+1]`).
    pub fn depthwise_filter(&mut self, x: Var, kernel: &Tensor<T>) -> Result<Var> {
        let t = self.value(x);
        let [c, h, w] = t.dims3("depthwise_filter")?;
        let [kh, kw] = kernel.dims2("depthwise_filter")?;
        if kh != kw || kh > h || kw > w {
            return Err(shape_mismatch("depthwise_filter", t, kernel));
        }
        let out = kernels::depthwise_valid(t.data(), c, h, w, kernel.data(), kh);
        let value = Tensor::new([c, h - kh + 1, w - kw + 1], out)?;
        self.push(
            "depthwise_filter",
            value,
            Op::Depthwise {
                x,
                kernel: kernel.clone(),
            },
            &[x],
        )
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        let mut out: Vec<Option<Tensor<T>>> = vec![None; n];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                out[i] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
            }
        }
        Ok(Gradients { grads: out })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, contribution: impl FnOnce() -> Vec<T>) {
        if !self.wants(v) {
            return;
        }
        let c = contribution();
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.iter_mut().zip(c) {
                    *e += x;
                }
            }
            slot @ None => *slot = Some(c),
        }
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let elementwise =
            |v: Var, f: &dyn Fn(T, T) -> T| -> Vec<T> { val(v).iter().zip(g).map(|(&x, &gi)| f(x, gi)).collect() };
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let [m, k] = self.value(a).dims2("matmul").unwrap();
                let n = self.value(b).shape()[1];
                self.accumulate(grads, a, || {
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        g,
                        (n as isize, 1),
                        val(b),
                        (1, n as isize),
                        T::zero(),
                        &mut da,
                    );
                    da
                });
                self.accumulate(grads, b, || {
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        val(a),
                        (1, k as isize),
                        g,
                        (n as isize, 1),
                        T::zero(),
                        &mut db,
                    );
                    db
                });
            }
            &Op::Transpose(x) => {
                let [r, c] = self.value(x).dims2("transpose").unwrap();
                self.accumulate(grads, x, || {
                    let mut dx = vec![T::zero(); r * c];
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] = g[j * r + i];
                        }
                    }
                    dx
                });
            }
            &Op::Reshape(x) | &Op::AddScalar(x) => self.accumulate(grads, x, || g.to_vec()),
            &Op::Add(a, b) => {
                self.accumulate(grads, a, || g.to_vec());
                self.accumulate(grads, b, || g.to_vec());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, || g.to_vec());
                self.accumulate(grads, b, || g.iter().map(|&v| -v).collect());
            }
            &Op::Mul(a, b) => {
                self.accumulate(grads, a, || elementwise(b, &|y, gi| y * gi));
                self.accumulate(grads, b, || elementwise(a, &|x, gi| x * gi));
            }
            &Op::Div(a, b) => {
                self.accumulate(grads, a, || elementwise(b, &|y, gi| gi / y));
                self.accumulate(grads, b, || {
                    val(a)
                        .iter()
                        .zip(val(b))
                        .zip(g)
                        .map(|((&x, &y), &gi)| -gi * x / (y * y))
                        .collect()
                });
            }
            &Op::Scale(x, c) => self.accumulate(grads, x, || g.iter().map(|&v| v * c).collect()),
            &Op::MulScalar(x, s) => {
                let c = val(s)[0];
                self.accumulate(grads, x, || g.iter().map(|&v| v * c).collect());
                self.accumulate(grads, s, || vec![val(x).iter().zip(g).map(|(&xv, &gi)| xv * gi).sum()]);
            }
            &Op::Relu(x) => self.accumulate(grads, x, || {
                elementwise(x, &|v, gi| if v > T::zero() { gi } else { T::zero() })
            }),
            Op::Sigmoid(x) => {
                let y = node.value.data();
                self.accumulate(grads, *x, || {
                    y.iter().zip(g).map(|(&s, &gi)| gi * s * (T::one() - s)).collect()
                });
            }
            &Op::Logit { x, eps } => {
                let hi = T::one() - eps;
                self.accumulate(grads, x, || {
                    elementwise(x, &|v, gi| {
                        if v > eps && v < hi {
                            gi / (v * (T::one() - v))
                        } else {
                            T::zero()
                        }
                    })
                })
            }
            &Op::Softmax { x, outer, len, inner } => {
                let y = node.value.data();
                self.accumulate(grads, x, || {
                    let mut dx = vec![T::zero(); y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * len + j) * inner + i;
                            let dot: T = (0..len).map(|j| y[at(j)] * g[at(j)]).sum();
                            for j in 0..len {
                                dx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                    dx
                });
            }
            &Op::Conv2d { x, w, b, win } => {
                let cout = self.value(w).shape()[0];
                let (r, l) = (win.rows(), win.cols());
                if let Some(b) = b {
                    self.accumulate(grads, b, || g.chunks(l).map(|row| row.iter().copied().sum()).collect());
                }
                let cols_owned;
                let cols: &[T] = if win.is_pointwise() {
                    val(x)
                } else if self.wants(w) {
                    cols_owned = kernels::im2col(val(x), &win);
                    &cols_owned
                } else {
                    &[]
                };
                self.accumulate(grads, w, || {
                    let mut dw = vec![T::zero(); cout * r];
                    T::gemm(
                        cout,
                        l,
                        r,
                        T::one(),
                        g,
                        (l as isize, 1),
                        cols,
                        (1, l as isize),
                        T::zero(),
                        &mut dw,
                    );
                    dw
                });
                self.accumulate(grads, x, || {
                    let mut dcols = vec![T::zero(); r * l];
                    T::gemm(
                        r,
                        cout,
                        l,
                        T::one(),
                        val(w),
                        (1, r as isize),
                        g,
                        (l as isize, 1),
                        T::zero(),
                        &mut dcols,
                    );
                    if win.is_pointwise() {
                        dcols
                    } else {
                        let mut dx = vec![T::zero(); win.channels * win.height * win.width];
                        kernels::col2im(&dcols, &win, &mut dx);
                        dx
                    }
                });
            }
            &Op::ConvTranspose2d { x, w, b, win } => {
                let cin = self.value(x).shape()[0];
                let (r, l) = (win.rows(), win.cols());
                if let Some(b) = b {
                    let plane = win.height * win.width;
                    self.accumulate(grads, b, || {
                        g.chunks(plane).map(|row| row.iter().copied().sum()).collect()
                    });
                }
                let dcols = kernels::im2col(g, &win);
                self.accumulate(grads, x, || {
                    let mut dx = vec![T::zero(); cin * l];
                    T::gemm(
                        cin,
                        r,
                        l,
                        T::one(),
                        val(w),
                        (r as isize, 1),
                        &dcols,
                        (l as isize, 1),
                        T::zero(),
                        &mut dx,
                    );
                    dx
                });
                self.accumulate(grads, w, || {
                    let mut dw = vec![T::zero(); cin * r];
                    T::gemm(
                        cin,
                        l,
                        r,
                        T::one(),
                        val(x),
                        (l as isize, 1),
                        &dcols,
                        (1, l as isize),
                        T::zero(),
                        &mut dw,
                    );
                    dw
                });
            }
            &Op::AvgPool { x, wh, ww } => {
                let [c, h, w] = self.value(x).dims3("avg_pool2d").unwrap();
                self.accumulate(grads, x, || kernels::avg_pool_backward(g, c, h, w, wh, ww));
            }
            &Op::Sum(x) => self.accumulate(grads, x, || vec![g[0]; val(x).len()]),
            &Op::Mean(x) => {
                let n = val(x).len();
                let v = g[0] / T::from_usize(n).unwrap();
                self.accumulate(grads, x, || vec![v; n]);
            }
            Op::Concat(xs) => {
                let mut offset = 0;
                for &v in xs {
                    let len = val(v).len();
                    self.accumulate(grads, v, || g[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            &Op::Slice { x, start } => {
                let t = self.value(x);
                let stride = t.len() / t.shape()[0];
                self.accumulate(grads, x, || {
                    let mut dx = vec![T::zero(); t.len()];
                    dx[start * stride..start * stride + g.len()].copy_from_slice(g);
                    dx
                });
            }
            &Op::MulMap(x, m) => {
                let plane = val(m).len();
                self.accumulate(grads, x, || {
                    g.chunks(plane)
                        .flat_map(|ch| ch.iter().zip(val(m)).map(|(&gi, &mv)| gi * mv))
                        .collect()
                });
                self.accumulate(grads, m, || {
                    let mut dm = vec![T::zero(); plane];
                    for (gc, xc) in g.chunks(plane).zip(val(x).chunks(plane)) {
                        for ((d, &gi), &xv) in dm.iter_mut().zip(gc).zip(xc) {
                            *d += gi * xv;
                        }
                    }
                    dm
                });
            }
            &Op::Pow(x, e) => {
                let p = val(e)[0];
                let y = node.value.data();
                self.accumulate(grads, x, || {
                    val(x)
                        .iter()
                        .zip(g)
                        .map(|(&xv, &gi)| {
                            if xv > T::zero() {
                                gi * p * xv.powf(p - T::one())
                            } else {
                                T::zero()
                            }
                        })
                        .collect()
                });
                self.accumulate(grads, e, || {
                    let de = val(x)
                        .iter()
                        .zip(y)
                        .zip(g)
                        .filter(|((&xv, _), _)| xv > T::zero())
                        .map(|((&xv, &yv), &gi)| gi * yv * xv.ln())
                        .sum();
                    vec![de]
                });
            }
            &Op::PadReplicate(x) => {
                let [c, h, w] = self.value(x).dims3("pad_replicate").unwrap();
                let [_, ho, wo] = node.value.dims3("pad_replicate").unwrap();
                self.accumulate(grads, x, || {
                    let mut dx = vec![T::zero(); c * h * w];
                    for ch in 0..c {
                        for y in 0..ho {
                            for xx in 0..wo {
                                dx[(ch * h + y.min(h - 1)) * w + xx.min(w - 1)] += g[(ch * ho + y) * wo + xx];
                            }
                        }
                    }
                    dx
                });
            }
            &Op::Crop(x) => {
                let [c, th, tw] = self.value(x).dims3("crop").unwrap();
                let [_, h, w] = node.value.dims3("crop").unwrap();
                self.accumulate(grads, x, || {
                    let mut dx = vec![T::zero(); c * th * tw];
                    for ch in 0..c {
                        for y in 0..h {
                            let dst = (ch * th + y) * tw;
                            dx[dst..dst + w].copy_from_slice(&g[(ch * h + y) * w..(ch * h + y + 1) * w]);
                        }
                    }
                    dx
                });
            }
            Op::Depthwise { x, kernel } => {
                let [c, h, w] = self.value(*x).dims3("depthwise_filter").unwrap();
                let k = kernel.shape()[0];
                self.accumulate(grads, *x, || {
                    kernels::depthwise_valid_backward(g, c, h, w, kernel.data(), k)
                });
            }
        }
    }
}

fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
