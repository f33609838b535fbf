//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] walks the record in reverse and returns gradients for
//! every node that depends on a gradient-tracked leaf.

use super::tensor::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Backward rule for an operation defined outside the tape.
pub trait CustomOp {
    /// Vector-Jacobian product: one optional gradient per input.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Softplus(Var),
    ClampMax(Var, f64),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    MaxPool2(Var, Vec<usize>),
    GlobalAvgPool(Var),
    Reshape(Var),
    TileConcat(Var, Var),
    Sum(Var),
    Mean(Var),
    GatherRows(Var, Vec<usize>),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Gradients produced by [`Tape::backward`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Gradient-tracked leaf.
    pub fn var(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn any_tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    fn unary(&mut self, a: Var, value: Tensor, op: Op) -> Var {
        let tracked = self.nodes[a.0].tracked;
        self.push(value, op, tracked)
    }

    fn binary(&mut self, a: Var, b: Var, value: Tensor, op: Op) -> Var {
        let tracked = self.any_tracked(&[a, b]);
        self.push(value, op, tracked)
    }

    /// `[m,k] · [k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.value(a).dims2();
        let (k2, n) = self.value(b).dims2();
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (n as isize, 1),
            &mut out,
            0.0,
        );
        self.binary(a, b, Tensor::from_vec(&[m, n], out), Op::MatMul(a, b))
    }

    /// Adds a `[n]` bias to every row of `[m,n]`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (m, n) = self.value(a).dims2();
        assert_eq!(self.value(bias).len(), n, "bias width");
        let mut out = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for r in 0..m {
            for (o, bv) in out.data_mut()[r * n..(r + 1) * n].iter_mut().zip(&b) {
                *o += bv;
            }
        }
        self.binary(a, bias, out, Op::AddBias(a, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.binary(a, b, out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.binary(a, b, out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.binary(a, b, out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.unary(a, out, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.unary(a, out, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.unary(a, out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.unary(a, out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.unary(a, out, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.unary(a, out, Op::LeakyRelu(a, slope))
    }

    /// `log(1 + e^x)`, computed stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        self.unary(a, out, Op::Softplus(a))
    }

    /// `min(x, c)`; zero gradient where clamped.
    pub fn clamp_max(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x.min(c));
        self.unary(a, out, Op::ClampMax(a, c))
    }

    /// Concatenates 2-D tensors along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let m = self.value(parts[0]).dims2().0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (r, c) = self.value(p).dims2();
                assert_eq!(r, m, "concat row mismatch");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; m * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..m {
                out[r * total + off..r * total + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let tracked = self.any_tracked(parts);
        self.push(
            Tensor::from_vec(&[m, total], out),
            Op::Concat(parts.to_vec()),
            tracked,
        )
    }

    /// Columns `[start, start+len)` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (m, n) = self.value(a).dims2();
        assert!(start + len <= n, "slice out of range");
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        self.unary(a, Tensor::from_vec(&[m, len], out), Op::SliceCols(a, start))
    }

    /// NCHW convolution with square kernels. `w` is `[O,C,k,k]`, `b` is `[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let geom = ConvGeom::new(self.value(x), self.value(w), stride, pad);
        let ConvGeom {
            batch,
            out_c,
            out_h,
            out_w,
            ..
        } = geom;
        let plane = out_h * out_w;
        let mut out = vec![0.0; batch * out_c * plane];
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let bs = self.value(b).data();
        let mut cols = vec![0.0; geom.patch() * plane];
        for n in 0..batch {
            geom.im2col(&xs[n * geom.in_size()..(n + 1) * geom.in_size()], &mut cols);
            let dst = &mut out[n * out_c * plane..(n + 1) * out_c * plane];
            for (o, bv) in bs.iter().enumerate() {
                dst[o * plane..(o + 1) * plane].fill(*bv);
            }
            gemm(
                out_c,
                geom.patch(),
                plane,
                ws,
                (geom.patch() as isize, 1),
                &cols,
                (plane as isize, 1),
                dst,
                1.0,
            );
        }
        let tracked = self.any_tracked(&[x, w, b]);
        self.push(
            Tensor::from_vec(&[batch, out_c, out_h, out_w], out),
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            tracked,
        )
    }

    /// 2×2 max pooling with stride 2 (odd trailing rows/cols dropped).
    pub fn max_pool2(&mut self, a: Var) -> Var {
        let (n, c, h, w) = self.value(a).dims4();
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut arg = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for y in 0..oh {
                for x in 0..ow {
                    let mut best = base + 2 * y * w + 2 * x;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * y + dy) * w + 2 * x + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    arg.push(best);
                }
            }
        }
        self.unary(
            a,
            Tensor::from_vec(&[n, c, oh, ow], out),
            Op::MaxPool2(a, arg),
        )
    }

    /// `[N,C,H,W] -> [N,C]` spatial mean.
    pub fn global_avg_pool(&mut self, a: Var) -> Var {
        let (n, c, h, w) = self.value(a).dims4();
        let hw = (h * w) as f64;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().sum::<f64>() / hw)
            .collect();
        self.unary(a, Tensor::from_vec(&[n, c], out), Op::GlobalAvgPool(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let out = self.value(a).clone().reshaped(shape);
        self.unary(a, out, Op::Reshape(a))
    }

    /// Tiles `cond: [N,D]` over the spatial grid of `x: [N,C,H,W]` and
    /// concatenates along channels, giving `[N,C+D,H,W]`.
    pub fn tile_concat(&mut self, x: Var, cond: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let (n2, d) = self.value(cond).dims2();
        assert_eq!(n, n2, "tile batch mismatch");
        let plane = h * w;
        let xs = self.value(x).data();
        let cs = self.value(cond).data();
        let mut out = Vec::with_capacity(n * (c + d) * plane);
        for i in 0..n {
            out.extend_from_slice(&xs[i * c * plane..(i + 1) * c * plane]);
            for j in 0..d {
                out.extend(std::iter::repeat_n(cs[i * d + j], plane));
            }
        }
        self.binary(
            x,
            cond,
            Tensor::from_vec(&[n, c + d, h, w], out),
            Op::TileConcat(x, cond),
        )
    }

    /// `conv2d(tile_concat(x, cond), w, b)` without materializing the tiled
    /// channels: the constant planes contribute, at each output position,
    /// the sum of their kernel taps that land inside the padded input.
    pub fn conv2d_tiled(&mut self, x: Var, cond: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let (_, c, h, wd) = self.value(x).dims4();
        let (_, d) = self.value(cond).dims2();
        let (o, cw, k, _) = self.value(w).dims4();
        assert_eq!(cw, c + d, "tiled conv channel mismatch");
        let kk = k * k;
        let flat = self.reshape(w, &[o, cw * kk]);
        let wx = self.slice_cols(flat, 0, c * kk);
        let wx = self.reshape(wx, &[o, c, k, k]);
        let wc = self.slice_cols(flat, c * kk, d * kk);
        let spatial = self.conv2d(x, wx, b, stride, pad);
        let op = TiledCond::new(h, wd, k, stride, pad);
        let value = op.forward(self.value(cond), self.value(wc));
        let tiled = self.custom(&[cond, wc], value, Box::new(op));
        self.add(spatial, tiled)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.unary(a, Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.sum() / t.len() as f64;
        self.unary(a, Tensor::scalar(s), Op::Mean(a))
    }

    /// Selects rows of a `[V,D]` table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let (_, d) = self.value(table).dims2();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(self.value(table).row(i));
        }
        self.unary(
            table,
            Tensor::from_vec(&[ids.len(), d], out),
            Op::GatherRows(table, ids.to_vec()),
        )
    }

    /// Records an externally computed value together with its backward rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn CustomOp>) -> Var {
        let tracked = self.any_tracked(inputs);
        self.push(value, Op::Custom(inputs.to_vec(), op), tracked)
    }

    /// Gradients of the scalar `loss` with respect to every tracked node.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_vec(self.value(loss).shape(), vec![1.0]));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].tracked {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = av.dims2();
                let n = bv.dims2().1;
                if self.nodes[a.0].tracked {
                    // dA = dC · Bᵀ
                    let mut da = vec![0.0; m * k];
                    gemm(
                        m,
                        n,
                        k,
                        g.data(),
                        (n as isize, 1),
                        bv.data(),
                        (1, n as isize),
                        &mut da,
                        0.0,
                    );
                    acc(*a, Tensor::from_vec(&[m, k], da));
                }
                if self.nodes[b.0].tracked {
                    // dB = Aᵀ · dC
                    let mut db = vec![0.0; k * n];
                    gemm(
                        k,
                        m,
                        n,
                        av.data(),
                        (1, k as isize),
                        g.data(),
                        (n as isize, 1),
                        &mut db,
                        0.0,
                    );
                    acc(*b, Tensor::from_vec(&[k, n], db));
                }
            }
            Op::AddBias(a, b) => {
                let (m, n) = g.dims2();
                let mut db = vec![0.0; n];
                for r in 0..m {
                    for (d, gv) in db.iter_mut().zip(g.row(r)) {
                        *d += gv;
                    }
                }
                acc(*a, g.clone());
                let shape = self.value(*b).shape().to_vec();
                acc(*b, Tensor::from_vec(&shape, db));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(self.value(*b), |gv, bv| gv * bv));
                acc(*b, g.zip_map(self.value(*a), |gv, av| gv * av));
            }
            Op::Scale(a, c) => acc(*a, g.map(|v| v * c)),
            Op::AddScalar(a) | Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                acc(*a, g.clone().reshaped(&shape));
            }
            Op::Sigmoid(a) => acc(*a, g.zip_map(&node.value, |gv, s| gv * s * (1.0 - s))),
            Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |gv, t| gv * (1.0 - t * t))),
            Op::Relu(a) => acc(
                *a,
                g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 }),
            ),
            Op::LeakyRelu(a, slope) => acc(
                *a,
                g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { slope * gv }),
            ),
            Op::Softplus(a) => acc(*a, g.zip_map(self.value(*a), |gv, x| gv * sigmoid(x))),
            Op::ClampMax(a, c) => acc(
                *a,
                g.zip_map(self.value(*a), |gv, x| if x < *c { gv } else { 0.0 }),
            ),
            Op::Concat(parts) => {
                let (m, total) = g.dims2();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).dims2().1;
                    let mut d = Vec::with_capacity(m * w);
                    for r in 0..m {
                        d.extend_from_slice(&g.data()[r * total + off..r * total + off + w]);
                    }
                    acc(p, Tensor::from_vec(&[m, w], d));
                    off += w;
                }
            }
            Op::SliceCols(a, start) => {
                let (m, n) = self.value(*a).dims2();
                let len = g.dims2().1;
                let mut d = vec![0.0; m * n];
                for r in 0..m {
                    d[r * n + start..r * n + start + len].copy_from_slice(g.row(r));
                }
                acc(*a, Tensor::from_vec(&[m, n], d));
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let geom = ConvGeom::new(xv, wv, *stride, *pad);
                let plane = geom.out_h * geom.out_w;
                let patch = geom.patch();
                let (tx, tw, tb) = (
                    self.nodes[x.0].tracked,
                    self.nodes[w.0].tracked,
                    self.nodes[b.0].tracked,
                );
                let mut dw = vec![0.0; geom.out_c * patch];
                let mut db = vec![0.0; geom.out_c];
                let mut dx = vec![0.0; if tx { xv.len() } else { 0 }];
                let mut cols = vec![0.0; patch * plane];
                let mut dcols = vec![0.0; patch * plane];
                for n in 0..geom.batch {
                    let gout = &g.data()[n * geom.out_c * plane..(n + 1) * geom.out_c * plane];
                    if tb {
                        for (o, d) in db.iter_mut().enumerate() {
                            *d += gout[o * plane..(o + 1) * plane].iter().sum::<f64>();
                        }
                    }
                    if tw {
                        let xs = &xv.data()[n * geom.in_size()..(n + 1) * geom.in_size()];
                        geom.im2col(xs, &mut cols);
                        gemm(
                            geom.out_c,
                            plane,
                            patch,
                            gout,
                            (plane as isize, 1),
                            &cols,
                            (1, plane as isize),
                            &mut dw,
                            1.0,
                        );
                    }
                    if tx {
                        gemm(
                            patch,
                            geom.out_c,
                            plane,
                            wv.data(),
                            (1, patch as isize),
                            gout,
                            (plane as isize, 1),
                            &mut dcols,
                            0.0,
                        );
                        geom.col2im(
                            &dcols,
                            &mut dx[n * geom.in_size()..(n + 1) * geom.in_size()],
                        );
                    }
                }
                if tx {
                    acc(*x, Tensor::from_vec(xv.shape(), dx));
                }
                if tw {
                    acc(*w, Tensor::from_vec(wv.shape(), dw));
                }
                if tb {
                    acc(*b, Tensor::from_vec(&[geom.out_c], db));
                }
            }
            Op::MaxPool2(a, arg) => {
                let mut d = Tensor::zeros(self.value(*a).shape());
                for (gv, &i) in g.data().iter().zip(arg) {
                    d.data_mut()[i] += gv;
                }
                acc(*a, d);
            }
            Op::GlobalAvgPool(a) => {
                let (n, c, h, w) = self.value(*a).dims4();
                let inv = 1.0 / (h * w) as f64;
                let mut d = Vec::with_capacity(n * c * h * w);
                for &gv in g.data() {
                    d.extend(std::iter::repeat_n(gv * inv, h * w));
                }
                acc(*a, Tensor::from_vec(&[n, c, h, w], d));
            }
            Op::TileConcat(x, cond) => {
                let (n, c, h, w) = self.value(*x).dims4();
                let d = self.value(*cond).dims2().1;
                let plane = h * w;
                let stride = (c + d) * plane;
                let mut dx = Vec::with_capacity(n * c * plane);
                let mut dc = Vec::with_capacity(n * d);
                for i in 0..n {
                    let gi = &g.data()[i * stride..(i + 1) * stride];
                    dx.extend_from_slice(&gi[..c * plane]);
                    for j in 0..d {
                        dc.push(gi[(c + j) * plane..(c + j + 1) * plane].iter().sum());
                    }
                }
                acc(*x, Tensor::from_vec(&[n, c, h, w], dx));
                acc(*cond, Tensor::from_vec(&[n, d], dc));
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                acc(*a, Tensor::full(&shape, g.data()[0]));
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                acc(*a, Tensor::full(t.shape(), g.data()[0] / t.len() as f64));
            }
            Op::GatherRows(table, ids) => {
                let mut d = Tensor::zeros(self.value(*table).shape());
                let width = g.dims2().1;
                for (r, &i) in ids.iter().enumerate() {
                    for (dst, gv) in d.data_mut()[i * width..(i + 1) * width]
                        .iter_mut()
                        .zip(g.row(r))
                    {
                        *dst += gv;
                    }
                }
                acc(*table, d);
            }
            Op::Custom(inputs, op) => {
                let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let out = op.backward(&values, &node.value, g);
                for (&v, d) in inputs.iter().zip(out) {
                    if let Some(d) = d {
                        acc(v, d);
                    }
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Contribution of spatially constant input planes to a convolution.
/// `taps[i]` lists the kernel rows (or columns) valid at output row (or column) `i`.
struct TiledCond {
    rows: Vec<Vec<usize>>,
    cols: Vec<Vec<usize>>,
    k: usize,
}

impl TiledCond {
    fn new(h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        let taps = |n: usize| -> Vec<Vec<usize>> {
            let out = (n + 2 * pad - k) / stride + 1;
            (0..out)
                .map(|i| {
                    (0..k)
                        .filter(|&t| {
                            let p = (i * stride + t) as isize - pad as isize;
                            p >= 0 && (p as usize) < n
                        })
                        .collect()
                })
                .collect()
        };
        Self {
            rows: taps(h),
            cols: taps(w),
            k,
        }
    }

    /// `cond` is `[B, D]`, `wc` is `[O, D·k·k]`; returns `[B, O, H_out, W_out]`.
    fn forward(&self, cond: &Tensor, wc: &Tensor) -> Tensor {
        let (batch, d) = cond.dims2();
        let (o, _) = wc.dims2();
        let kk = self.k * self.k;
        // v[b, o, tap] = sum_d wc[o, d, tap] cond[b, d]
        let mut v = vec![0.0; batch * o * kk];
        for bi in 0..batch {
            for oi in 0..o {
                let dst = &mut v[(bi * o + oi) * kk..(bi * o + oi + 1) * kk];
                for di in 0..d {
                    let cv = cond.data()[bi * d + di];
                    let wrow = &wc.data()[oi * d * kk + di * kk..oi * d * kk + (di + 1) * kk];
                    for (t, wv) in dst.iter_mut().zip(wrow) {
                        *t += cv * wv;
                    }
                }
            }
        }
        let (oh, ow) = (self.rows.len(), self.cols.len());
        let mut out = Vec::with_capacity(batch * o * oh * ow);
        for chunk in v.chunks(kk) {
            for rows in &self.rows {
                for cols in &self.cols {
                    let mut acc = 0.0;
                    for &r in rows {
                        for &c in cols {
                            acc += chunk[r * self.k + c];
                        }
                    }
                    out.push(acc);
                }
            }
        }
        Tensor::from_vec(&[batch, o, oh, ow], out)
    }
}

impl CustomOp for TiledCond {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (cond, wc) = (inputs[0], inputs[1]);
        let (batch, d) = cond.dims2();
        let (o, _) = wc.dims2();
        let kk = self.k * self.k;
        let plane = self.rows.len() * self.cols.len();
        // dv[b, o, tap] = sum of upstream gradient over positions where the tap is valid.
        let mut dv = vec![0.0; batch * o * kk];
        for (bo, g) in grad.data().chunks(plane).enumerate() {
            let dst = &mut dv[bo * kk..(bo + 1) * kk];
            let mut idx = 0;
            for rows in &self.rows {
                for cols in &self.cols {
                    let gv = g[idx];
                    idx += 1;
                    for &r in rows {
                        for &c in cols {
                            dst[r * self.k + c] += gv;
                        }
                    }
                }
            }
        }
        let mut dcond = vec![0.0; batch * d];
        let mut dwc = vec![0.0; o * d * kk];
        for bi in 0..batch {
            for oi in 0..o {
                let dvr = &dv[(bi * o + oi) * kk..(bi * o + oi + 1) * kk];
                for di in 0..d {
                    let cv = cond.data()[bi * d + di];
                    let base = oi * d * kk + di * kk;
                    let mut acc = 0.0;
                    for t in 0..kk {
                        acc += dvr[t] * wc.data()[base + t];
                        dwc[base + t] += dvr[t] * cv;
                    }
                    dcond[bi * d + di] += acc;
                }
            }
        }
        vec![
            Some(Tensor::from_vec(&[batch, d], dcond)),
            Some(Tensor::from_vec(wc.shape(), dwc)),
        ]
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    batch: usize,
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    out_h: usize,
    out_w: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn new(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Self {
        let (batch, in_c, in_h, in_w) = x.dims4();
        let (out_c, wc, k, k2) = w.dims4();
        assert_eq!(wc, in_c, "conv channel mismatch");
        assert_eq!(k, k2, "square kernels only");
        let out_h = (in_h + 2 * pad - k) / stride + 1;
        let out_w = (in_w + 2 * pad - k) / stride + 1;
        Self {
            batch,
            in_c,
            in_h,
            in_w,
            out_c,
            out_h,
            out_w,
            k,
            stride,
            pad,
        }
    }

    fn patch(&self) -> usize {
        self.in_c * self.k * self.k
    }

    fn in_size(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let plane = self.out_h * self.out_w;
        for c in 0..self.in_c {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if iy < 0 || iy >= self.in_h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &x[(c * self.in_h + iy as usize) * self.in_w..];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= self.in_w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let plane = self.out_h * self.out_w;
        for c in 0..self.in_c {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        let base = (c * self.in_h + iy as usize) * self.in_w;
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.in_w as isize {
                                dx[base + ix as usize] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}
