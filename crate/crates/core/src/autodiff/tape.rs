use super::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    /// Batched `a[N,m,k] * b[N,k,n]`.
    Bmm {
        a: Var,
        b: Var,
    },
    /// Batched `a[N,m,k] * b[N,n,k]^T`.
    BmmNt {
        a: Var,
        b: Var,
    },
    Conv2dSame {
        x: Var,
        kernel: Var,
        bias: Var,
    },
    MaxPool {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
        argmax: Vec<usize>,
    },
    Concat {
        xs: Vec<Var>,
        outer: usize,
        widths: Vec<usize>,
    },
    Slice {
        x: Var,
        outer: usize,
        width: usize,
        start: usize,
        len: usize,
    },
    SplitHeads {
        x: Var,
        heads: usize,
    },
    MergeHeads {
        x: Var,
        heads: usize,
    },
    UnfoldRows {
        x: Var,
        k: usize,
    },
    FeatureEmbed {
        s: Var,
        w: Var,
        b: Var,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Mse {
        pred: Var,
        target: Var,
    },
    AbsSmooth(Var, f64),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records primitive operations in execution order and replays them in
/// reverse to accumulate gradients of a scalar.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

/// `C = A*B + beta*C` over strided row-major views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |r: usize, cc: usize, rs: usize, cs: usize| (r - 1) * rs + (cc - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len() && last(k, n, rsb, csb) < b.len());
    }
    assert!(last(m, n, rsc, csc) < c.len());
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dims3(t: &Tensor, what: &str) -> (usize, usize, usize) {
    match *t.shape() {
        [a, b, c] => (a, b, c),
        ref s => panic!("{what}: expected a rank-3 tensor, got shape {s:?}"),
    }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated by the last [`Tape::backward`], if `v` took part.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let (fan_in, fan_out) = match *wv.shape() {
            [i, o] => (i, o),
            ref s => panic!("linear: weight must be rank 2, got {s:?}"),
        };
        let xs = xv.shape();
        assert!(
            xs.last() == Some(&fan_in),
            "linear: input shape {xs:?} incompatible with weight shape {:?}",
            wv.shape()
        );
        let rows = xv.len() / fan_in;
        let mut out = vec![0.0; rows * fan_out];
        gemm(rows, fan_in, fan_out, xv.data(), fan_in, 1, wv.data(), fan_out, 1, 0.0, &mut out, fan_out, 1);
        if let Some(b) = b {
            let bv = self.value(b);
            assert_eq!(bv.shape(), [fan_out], "linear: bias shape {:?} vs {fan_out} outputs", bv.shape());
            for row in out.chunks_mut(fan_out) {
                for (o, bi) in row.iter_mut().zip(bv.data()) {
                    *o += bi;
                }
            }
        }
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = fan_out;
        let rg = self.needs(&[x, w]) || b.is_some_and(|b| self.needs(&[b]));
        self.push(Tensor::new(shape, out), Op::Linear { x, w, b }, rg)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(xv.shape().to_vec(), data);
        let rg = self.needs(&[x]);
        self.push(t, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    /// `sqrt(x^2 + delta^2) - delta`, a differentiable |x|.
    pub fn abs_smooth(&mut self, x: Var, delta: f64) -> Var {
        self.unary(x, |v| (v * v + delta * delta).sqrt() - delta, Op::AbsSmooth(x, delta))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let width = *xv.shape().last().expect("softmax_rows on a scalar");
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(width) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out);
        let rg = self.needs(&[x]);
        self.push(t, Op::SoftmaxRows(x), rg)
    }

    fn binary_same(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op, name: &str) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "{name}: shape mismatch {:?} vs {:?}", av.shape(), bv.shape());
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(av.shape().to_vec(), data);
        let rg = self.needs(&[a, b]);
        self.push(t, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_same(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_same(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Var {
        let t = self.value(x).clone().reshaped(shape);
        let rg = self.needs(&[x]);
        self.push(t, Op::Reshape(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.data().iter().sum::<f64>() / xv.len() as f64;
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Var {
        let (p, t) = (self.value(pred), self.value(target));
        assert_eq!(p.shape(), t.shape(), "mse: shape mismatch {:?} vs {:?}", p.shape(), t.shape());
        let s = p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
        let rg = self.needs(&[pred, target]);
        self.push(Tensor::scalar(s), Op::Mse { pred, target }, rg)
    }

    pub fn bmm(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, m, k) = dims3(av, "bmm lhs");
        let (n2, k2, p) = dims3(bv, "bmm rhs");
        assert!(n == n2 && k == k2, "bmm: shapes {:?} and {:?}", av.shape(), bv.shape());
        let mut out = vec![0.0; n * m * p];
        for bi in 0..n {
            let ab = &av.data()[bi * m * k..(bi + 1) * m * k];
            let bb = &bv.data()[bi * k * p..(bi + 1) * k * p];
            let ob = &mut out[bi * m * p..(bi + 1) * m * p];
            for i in 0..m {
                for l in 0..k {
                    let x = ab[i * k + l];
                    for j in 0..p {
                        ob[i * p + j] += x * bb[l * p + j];
                    }
                }
            }
        }
        let rg = self.needs(&[a, b]);
        self.push(Tensor::new(vec![n, m, p], out), Op::Bmm { a, b }, rg)
    }

    pub fn bmm_nt(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, m, k) = dims3(av, "bmm_nt lhs");
        let (n2, p, k2) = dims3(bv, "bmm_nt rhs");
        assert!(n == n2 && k == k2, "bmm_nt: shapes {:?} and {:?}", av.shape(), bv.shape());
        let mut out = vec![0.0; n * m * p];
        for bi in 0..n {
            let ab = &av.data()[bi * m * k..(bi + 1) * m * k];
            let bb = &bv.data()[bi * p * k..(bi + 1) * p * k];
            for i in 0..m {
                for j in 0..p {
                    out[bi * m * p + i * p + j] =
                        ab[i * k..(i + 1) * k].iter().zip(&bb[j * k..(j + 1) * k]).map(|(x, y)| x * y).sum();
                }
            }
        }
        let rg = self.needs(&[a, b]);
        self.push(Tensor::new(vec![n, m, p], out), Op::BmmNt { a, b }, rg)
    }

    /// Stride-1, zero-padded "same" convolution of `N` single-channel maps
    /// `x[N,H,W]`. Map `n` uses `kernel[n % G]` and `bias[n % G]`.
    pub fn conv2d_same(&mut self, x: Var, kernel: Var, bias: Var) -> Var {
        let (xv, kv, bv) = (self.value(x), self.value(kernel), self.value(bias));
        let (n, h, w) = dims3(xv, "conv2d input");
        let (g, kh, kw) = dims3(kv, "conv2d kernel");
        assert!(kh % 2 == 1 && kw % 2 == 1, "conv2d: kernel {kh}x{kw} must be odd-sized");
        assert_eq!(bv.shape(), [g], "conv2d: bias shape {:?} for {g} kernels", bv.shape());
        let (ph, pw) = (kh / 2, kw / 2);
        let mut out = vec![0.0; n * h * w];
        for m in 0..n {
            let gi = m % g;
            let k = &kv.data()[gi * kh * kw..(gi + 1) * kh * kw];
            let src = &xv.data()[m * h * w..(m + 1) * h * w];
            let dst = &mut out[m * h * w..(m + 1) * h * w];
            for i in 0..h {
                for j in 0..w {
                    let mut acc = bv.data()[gi];
                    for a in 0..kh {
                        let ii = i + a;
                        if ii < ph || ii - ph >= h {
                            continue;
                        }
                        for b in 0..kw {
                            let jj = j + b;
                            if jj < pw || jj - pw >= w {
                                continue;
                            }
                            acc += k[a * kw + b] * src[(ii - ph) * w + (jj - pw)];
                        }
                    }
                    dst[i * w + j] = acc;
                }
            }
        }
        let rg = self.needs(&[x, kernel, bias]);
        self.push(Tensor::new(vec![n, h, w], out), Op::Conv2dSame { x, kernel, bias }, rg)
    }

    /// Max over `axis`; the axis is removed from the shape.
    pub fn maxpool_over_axis(&mut self, x: Var, axis: usize) -> Var {
        let xv = self.value(x);
        let shape = xv.shape();
        assert!(axis < shape.len(), "maxpool: axis {axis} out of range for {shape:?}");
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        assert!(len > 0, "maxpool over empty axis");
        let mut out = vec![0.0; outer * inner];
        let mut argmax = vec![0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = f64::NEG_INFINITY;
                let mut at = 0;
                for l in 0..len {
                    let v = xv.data()[(o * len + l) * inner + i];
                    if v > best {
                        best = v;
                        at = l;
                    }
                }
                out[o * inner + i] = best;
                argmax[o * inner + i] = at;
            }
        }
        let mut new_shape = shape.to_vec();
        new_shape.remove(axis);
        let rg = self.needs(&[x]);
        self.push(Tensor::new(new_shape, out), Op::MaxPool { x, outer, len, inner, argmax }, rg)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Var {
        assert!(!xs.is_empty(), "concat of nothing");
        let first = self.value(xs[0]).shape().to_vec();
        assert!(axis < first.len(), "concat: axis {axis} out of range for {first:?}");
        let outer: usize = first[..axis].iter().product();
        let mut widths = Vec::with_capacity(xs.len());
        let mut axis_total = 0;
        for &v in xs {
            let s = self.value(v).shape();
            assert!(
                s.len() == first.len() && s[..axis] == first[..axis] && s[axis + 1..] == first[axis + 1..],
                "concat: shape {s:?} incompatible with {first:?} on axis {axis}"
            );
            widths.push(s[axis..].iter().product::<usize>());
            axis_total += s[axis];
        }
        let total_width: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total_width);
        for o in 0..outer {
            for (&v, &wd) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(v).data()[o * wd..(o + 1) * wd]);
            }
        }
        let mut shape = first;
        shape[axis] = axis_total;
        let rg = self.needs(xs);
        self.push(Tensor::new(shape, out), Op::Concat { xs: xs.to_vec(), outer, widths }, rg)
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let shape = self.value(x).shape().to_vec();
        assert!(axis < shape.len() && start + len <= shape[axis], "slice {start}+{len} of axis {axis} in {shape:?}");
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let width = shape[axis] * inner;
        let mut out = Vec::with_capacity(outer * len * inner);
        let src = self.value(x).data();
        for o in 0..outer {
            let base = o * width + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let rg = self.needs(&[x]);
        self.push(
            Tensor::new(new_shape, out),
            Op::Slice { x, outer, width, start: start * inner, len: len * inner },
            rg,
        )
    }

    /// `[B,F,D] -> [B*h, F, D/h]`, head-major within each sample.
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Var {
        let xv = self.value(x);
        let (b, f, d) = dims3(xv, "split_heads");
        assert!(heads > 0 && d % heads == 0, "split_heads: width {d} not divisible by {heads}");
        let dh = d / heads;
        let mut out = vec![0.0; b * f * d];
        for bi in 0..b {
            for r in 0..f {
                for hj in 0..heads {
                    let src = &xv.data()[(bi * f + r) * d + hj * dh..][..dh];
                    out[((bi * heads + hj) * f + r) * dh..][..dh].copy_from_slice(src);
                }
            }
        }
        let rg = self.needs(&[x]);
        self.push(Tensor::new(vec![b * heads, f, dh], out), Op::SplitHeads { x, heads }, rg)
    }

    /// Inverse of [`Tape::split_heads`].
    pub fn merge_heads(&mut self, x: Var, heads: usize) -> Var {
        let xv = self.value(x);
        let (bh, f, dh) = dims3(xv, "merge_heads");
        assert!(heads > 0 && bh % heads == 0, "merge_heads: {bh} maps not divisible by {heads}");
        let b = bh / heads;
        let d = dh * heads;
        let mut out = vec![0.0; b * f * d];
        for bi in 0..b {
            for r in 0..f {
                for hj in 0..heads {
                    let src = &xv.data()[((bi * heads + hj) * f + r) * dh..][..dh];
                    out[(bi * f + r) * d + hj * dh..][..dh].copy_from_slice(src);
                }
            }
        }
        let rg = self.needs(&[x]);
        self.push(Tensor::new(vec![b, f, d], out), Op::MergeHeads { x, heads }, rg)
    }

    /// Windows of `k` consecutive rows, flattened: `[B,F,D] -> [B, F-k+1, k*D]`.
    pub fn unfold_rows(&mut self, x: Var, k: usize) -> Var {
        let xv = self.value(x);
        let (b, f, d) = dims3(xv, "unfold_rows");
        assert!(k >= 1 && k <= f, "unfold_rows: window {k} over {f} rows");
        let p = f - k + 1;
        let mut out = Vec::with_capacity(b * p * k * d);
        for bi in 0..b {
            for pos in 0..p {
                out.extend_from_slice(&xv.data()[(bi * f + pos) * d..(bi * f + pos + k) * d]);
            }
        }
        let rg = self.needs(&[x]);
        self.push(Tensor::new(vec![b, p, k * d], out), Op::UnfoldRows { x, k }, rg)
    }

    /// Per-feature embedding: `out[b,f,:] = s[b,f] * w[f,:] + bias[f,:]`.
    pub fn feature_embed(&mut self, s: Var, w: Var, b: Var) -> Var {
        let (sv, wv, bv) = (self.value(s), self.value(w), self.value(b));
        let (batch, f) = match *sv.shape() {
            [batch, f] => (batch, f),
            ref sh => panic!("feature_embed: input must be [B,F], got {sh:?}"),
        };
        let d = match *wv.shape() {
            [ff, d] if ff == f => d,
            ref sh => panic!("feature_embed: weight {sh:?} for {f} features"),
        };
        assert_eq!(bv.shape(), wv.shape(), "feature_embed: bias shape {:?} vs weight {:?}", bv.shape(), wv.shape());
        let mut out = vec![0.0; batch * f * d];
        for bi in 0..batch {
            for fi in 0..f {
                let x = sv.data()[bi * f + fi];
                let dst = &mut out[(bi * f + fi) * d..][..d];
                for ((o, wi), bi_) in dst.iter_mut().zip(&wv.data()[fi * d..][..d]).zip(&bv.data()[fi * d..][..d]) {
                    *o = x * wi + bi_;
                }
            }
        }
        let rg = self.needs(&[s, w, b]);
        self.push(Tensor::new(vec![batch, f, d], out), Op::FeatureEmbed { s, w, b }, rg)
    }

    /// Reverse pass from the scalar `loss`. Gradients of earlier calls are
    /// discarded.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.value(loss).len(), 1, "backward from non-scalar shape {:?}", self.shape(loss));
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else { continue };
            self.backprop_node(idx, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        self.grads = grads;
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        let want = |v: Var| nodes[v.0].requires_grad;
        let out = &nodes[idx].value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(buf);
        };
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (fan_in, fan_out) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.len() / fan_in;
                acc(*x, &mut |dx| {
                    gemm(rows, fan_out, fan_in, g, fan_out, 1, wv.data(), 1, fan_out, 1.0, dx, fan_in, 1)
                });
                acc(*w, &mut |dw| {
                    gemm(fan_in, rows, fan_out, xv.data(), 1, fan_in, g, fan_out, 1, 1.0, dw, fan_out, 1)
                });
                if let Some(b) = b {
                    acc(*b, &mut |db| {
                        for row in g.chunks(fan_out) {
                            for (d, gi) in db.iter_mut().zip(row) {
                                *d += gi;
                            }
                        }
                    });
                }
            }
            Op::Relu(x) => {
                let xv = val(*x);
                acc(*x, &mut |dx| {
                    for ((d, gi), xi) in dx.iter_mut().zip(g).zip(xv.data()) {
                        if *xi > 0.0 {
                            *d += gi;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => acc(*x, &mut |dx| {
                for ((d, gi), y) in dx.iter_mut().zip(g).zip(out.data()) {
                    *d += gi * y * (1.0 - y);
                }
            }),
            Op::Scale(x, c) => acc(*x, &mut |dx| {
                for (d, gi) in dx.iter_mut().zip(g) {
                    *d += gi * c;
                }
            }),
            Op::AbsSmooth(x, delta) => {
                let xv = val(*x);
                acc(*x, &mut |dx| {
                    for ((d, gi), xi) in dx.iter_mut().zip(g).zip(xv.data()) {
                        *d += gi * xi / (xi * xi + delta * delta).sqrt();
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let width = *out.shape().last().unwrap();
                acc(*x, &mut |dx| {
                    for ((drow, grow), yrow) in dx.chunks_mut(width).zip(g.chunks(width)).zip(out.data().chunks(width))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((d, gi), y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += y * (gi - dot);
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &mut |d| d.iter_mut().zip(g).for_each(|(d, gi)| *d += gi));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |d| {
                    for ((d, gi), y) in d.iter_mut().zip(g).zip(bv.data()) {
                        *d += gi * y;
                    }
                });
                acc(*b, &mut |d| {
                    for ((d, gi), x) in d.iter_mut().zip(g).zip(av.data()) {
                        *d += gi * x;
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(d, gi)| *d += gi)),
            Op::Sum(x) => acc(*x, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(x) => {
                let n = val(*x).len() as f64;
                acc(*x, &mut |d| d.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::Mse { pred, target } => {
                let (p, t) = (val(*pred), val(*target));
                let k = 2.0 * g[0] / p.len() as f64;
                acc(*pred, &mut |d| {
                    for ((d, a), b) in d.iter_mut().zip(p.data()).zip(t.data()) {
                        *d += k * (a - b);
                    }
                });
                acc(*target, &mut |d| {
                    for ((d, a), b) in d.iter_mut().zip(p.data()).zip(t.data()) {
                        *d -= k * (a - b);
                    }
                });
            }
            Op::Bmm { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                let (n, m, k) = dims3(av, "bmm");
                let p = bv.shape()[2];
                acc(*a, &mut |da| {
                    // dA = G B^T
                    for bi in 0..n {
                        for i in 0..m {
                            for l in 0..k {
                                let mut s = 0.0;
                                for j in 0..p {
                                    s += g[bi * m * p + i * p + j] * bv.data()[bi * k * p + l * p + j];
                                }
                                da[bi * m * k + i * k + l] += s;
                            }
                        }
                    }
                });
                acc(*b, &mut |db| {
                    // dB = A^T G
                    for bi in 0..n {
                        for i in 0..m {
                            for l in 0..k {
                                let x = av.data()[bi * m * k + i * k + l];
                                for j in 0..p {
                                    db[bi * k * p + l * p + j] += x * g[bi * m * p + i * p + j];
                                }
                            }
                        }
                    }
                });
            }
            Op::BmmNt { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                let (n, m, k) = dims3(av, "bmm_nt");
                let p = bv.shape()[1];
                acc(*a, &mut |da| {
                    // dA = G B
                    for bi in 0..n {
                        for i in 0..m {
                            for j in 0..p {
                                let gi = g[bi * m * p + i * p + j];
                                for l in 0..k {
                                    da[bi * m * k + i * k + l] += gi * bv.data()[bi * p * k + j * k + l];
                                }
                            }
                        }
                    }
                });
                acc(*b, &mut |db| {
                    // dB = G^T A
                    for bi in 0..n {
                        for i in 0..m {
                            for j in 0..p {
                                let gi = g[bi * m * p + i * p + j];
                                for l in 0..k {
                                    db[bi * p * k + j * k + l] += gi * av.data()[bi * m * k + i * k + l];
                                }
                            }
                        }
                    }
                });
            }
            Op::Conv2dSame { x, kernel, bias } => {
                let (xv, kv) = (val(*x), val(*kernel));
                let (n, h, w) = dims3(xv, "conv2d");
                let (gk, kh, kw) = dims3(kv, "conv2d kernel");
                let (ph, pw) = (kh / 2, kw / 2);
                let taps = |f: &mut dyn FnMut(usize, usize, usize, usize)| {
                    for m in 0..n {
                        for i in 0..h {
                            for j in 0..w {
                                for a in 0..kh {
                                    let ii = i + a;
                                    if ii < ph || ii - ph >= h {
                                        continue;
                                    }
                                    for b in 0..kw {
                                        let jj = j + b;
                                        if jj < pw || jj - pw >= w {
                                            continue;
                                        }
                                        f(m, i * w + j, (ii - ph) * w + (jj - pw), a * kw + b);
                                    }
                                }
                            }
                        }
                    }
                };
                if want(*x) {
                    acc(*x, &mut |dx| {
                        taps(&mut |m, o, s, t| {
                            dx[m * h * w + s] += kv.data()[(m % gk) * kh * kw + t] * g[m * h * w + o];
                        })
                    });
                }
                if want(*kernel) {
                    acc(*kernel, &mut |dk| {
                        taps(&mut |m, o, s, t| {
                            dk[(m % gk) * kh * kw + t] += xv.data()[m * h * w + s] * g[m * h * w + o];
                        })
                    });
                }
                acc(*bias, &mut |db| {
                    for m in 0..n {
                        db[m % gk] += g[m * h * w..(m + 1) * h * w].iter().sum::<f64>();
                    }
                });
            }
            Op::MaxPool { x, outer, len, inner, argmax } => acc(*x, &mut |dx| {
                for o in 0..*outer {
                    for i in 0..*inner {
                        let l = argmax[o * inner + i];
                        dx[(o * len + l) * inner + i] += g[o * inner + i];
                    }
                }
            }),
            Op::Concat { xs, outer, widths } => {
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (&v, &wd) in xs.iter().zip(widths) {
                    acc(v, &mut |d| {
                        for o in 0..*outer {
                            for (dd, gi) in d[o * wd..(o + 1) * wd].iter_mut().zip(&g[o * total + offset..][..wd]) {
                                *dd += gi;
                            }
                        }
                    });
                    offset += wd;
                }
            }
            Op::Slice { x, outer, width, start, len } => acc(*x, &mut |d| {
                for o in 0..*outer {
                    for (dd, gi) in d[o * width + start..][..*len].iter_mut().zip(&g[o * len..][..*len]) {
                        *dd += gi;
                    }
                }
            }),
            Op::SplitHeads { x, heads } => {
                let (b, f, d) = dims3(val(*x), "split_heads");
                let dh = d / heads;
                acc(*x, &mut |dx| {
                    for bi in 0..b {
                        for r in 0..f {
                            for hj in 0..*heads {
                                let src = &g[((bi * heads + hj) * f + r) * dh..][..dh];
                                for (dd, gi) in dx[(bi * f + r) * d + hj * dh..][..dh].iter_mut().zip(src) {
                                    *dd += gi;
                                }
                            }
                        }
                    }
                });
            }
            Op::MergeHeads { x, heads } => {
                let (bh, f, dh) = dims3(val(*x), "merge_heads");
                let b = bh / heads;
                let d = dh * heads;
                acc(*x, &mut |dx| {
                    for bi in 0..b {
                        for r in 0..f {
                            for hj in 0..*heads {
                                let src = &g[(bi * f + r) * d + hj * dh..][..dh];
                                for (dd, gi) in dx[((bi * heads + hj) * f + r) * dh..][..dh].iter_mut().zip(src) {
                                    *dd += gi;
                                }
                            }
                        }
                    }
                });
            }
            Op::UnfoldRows { x, k } => {
                let (b, f, d) = dims3(val(*x), "unfold_rows");
                let p = f - k + 1;
                let kd = k * d;
                acc(*x, &mut |dx| {
                    for bi in 0..b {
                        for pos in 0..p {
                            let src = &g[(bi * p + pos) * kd..][..kd];
                            for (dd, gi) in dx[(bi * f + pos) * d..][..kd].iter_mut().zip(src) {
                                *dd += gi;
                            }
                        }
                    }
                });
            }
            Op::FeatureEmbed { s, w, b } => {
                let (sv, wv) = (val(*s), val(*w));
                let (batch, f) = (sv.shape()[0], sv.shape()[1]);
                let d = wv.shape()[1];
                acc(*s, &mut |ds| {
                    for bi in 0..batch {
                        for fi in 0..f {
                            ds[bi * f + fi] += g[(bi * f + fi) * d..][..d]
                                .iter()
                                .zip(&wv.data()[fi * d..][..d])
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                        }
                    }
                });
                acc(*w, &mut |dw| {
                    for bi in 0..batch {
                        for fi in 0..f {
                            let x = sv.data()[bi * f + fi];
                            for (dd, gi) in dw[fi * d..][..d].iter_mut().zip(&g[(bi * f + fi) * d..][..d]) {
                                *dd += x * gi;
                            }
                        }
                    }
                });
                acc(*b, &mut |db| {
                    for bi in 0..batch {
                        for (dd, gi) in db.iter_mut().zip(&g[bi * f * d..][..f * d]) {
                            *dd += gi;
                        }
                    }
                });
            }
        }
    }
}
