//! Minimal reverse-mode automatic differentiation over `ndarray` tensors.
//!
//! A [`Tape`] records the forward computation as a flat list of nodes; the
//! backward pass walks the list in reverse and accumulates gradients into
//! every node reachable from a trainable leaf. The op set is exactly what
//! the models here need: dense and convolution layers, 2x2 max pooling,
//! nearest upsampling, batch normalization, sigmoid/relu gating, axis
//! reductions and softmax cross-entropy.

use ndarray::{Array1, Array2, Array4, ArrayD, Axis, IxDyn};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Relu(Var),
    /// Value holds the sigmoid output.
    Sigmoid(Var),
    Reshape(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    MeanAxis {
        x: Var,
        axis: usize,
        keepdim: bool,
    },
    SumAxis {
        x: Var,
        axis: usize,
        keepdim: bool,
    },
    MeanAll(Var),
    /// `b` has the same rank as `a` with broadcast axes of length 1.
    DivBroadcast {
        a: Var,
        b: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        pad: Padding,
        cols: Vec<Array2<f32>>,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample2(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        x_hat: Array2<f32>,
        inv_std: Array1<f32>,
        train: bool,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Array2<f32>,
    },
}

/// (top, bottom, left, right) zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Padding(pub usize, pub usize, pub usize, pub usize);

impl Padding {
    /// Symmetric padding used by odd kernels ("same" for 3x3 is `sym(1)`).
    pub fn sym(p: usize) -> Self {
        Padding(p, p, p, p)
    }

    /// "Same" padding for an even kernel: the extra pixel goes bottom/right.
    pub fn same_even(k: usize) -> Self {
        let total = k - 1;
        Padding(total / 2, total - total / 2, total / 2, total - total / 2)
    }
}

struct Node {
    value: ArrayD<f32>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: ArrayD<f32>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &ArrayD<f32> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Constant input: gradients are not tracked through it.
    pub fn constant(&mut self, value: ArrayD<f32>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: ArrayD<f32>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Var {
        let value = self.nodes[a.0].value.mapv(|v| v * c);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, c), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|v| v.max(0.0));
        let ng = self.needs(a);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(sigmoid_scalar);
        let ng = self.needs(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let value = self.nodes[a.0]
            .value
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: element count mismatch");
        let ng = self.needs(a);
        self.push(value, Op::Reshape(a), ng)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        let views: Vec<_> = parts.iter().map(|v| self.nodes[v.0].value.view()).collect();
        let value = ndarray::concatenate(Axis(axis), &views).expect("concat shape mismatch");
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::Concat { parts: parts.to_vec(), axis }, ng)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Var {
        let mut value = self.nodes[x.0].value.mean_axis(Axis(axis)).expect("empty axis");
        if keepdim {
            value = value.insert_axis(Axis(axis));
        }
        let ng = self.needs(x);
        self.push(value, Op::MeanAxis { x, axis, keepdim }, ng)
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Var {
        let mut value = self.nodes[x.0].value.sum_axis(Axis(axis));
        if keepdim {
            value = value.insert_axis(Axis(axis));
        }
        let ng = self.needs(x);
        self.push(value, Op::SumAxis { x, axis, keepdim }, ng)
    }

    /// Mean over every element; result is a 0-d tensor.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let m = self.nodes[x.0].value.mean().expect("empty tensor");
        let ng = self.needs(x);
        self.push(ArrayD::from_elem(IxDyn(&[]), m), Op::MeanAll(x), ng)
    }

    /// Elementwise `a / b` where `b` broadcasts over `a` (axes of length 1).
    pub fn div_broadcast(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value / &self.nodes[b.0].value;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::DivBroadcast { a, b }, ng)
    }

    /// `x [N,D] . w [D,K] + b [K]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xv = as2(&self.nodes[x.0].value);
        let wv = as2(&self.nodes[w.0].value);
        let bv = &self.nodes[b.0].value;
        let mut y = xv.dot(&wv);
        let bv1 = bv.view().into_dimensionality::<ndarray::Ix1>().expect("bias rank 1");
        y += &bv1;
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(y.into_dyn(), Op::Linear { x, w, b }, ng)
    }

    /// Stride-1 2-D convolution. `x [N,Cin,H,W]`, `w [Cout,Cin,kh,kw]`,
    /// `b [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, pad: Padding) -> Var {
        let xv = as4(&self.nodes[x.0].value);
        let wv = as4(&self.nodes[w.0].value);
        let bv = &self.nodes[b.0].value;
        let (n, cin, h, wd) = xv.dim();
        let (cout, cin2, kh, kw) = wv.dim();
        assert_eq!(cin, cin2, "conv2d: channel mismatch");
        let oh = h + pad.0 + pad.1 + 1 - kh;
        let ow = wd + pad.2 + pad.3 + 1 - kw;

        let w2 = wv
            .to_owned()
            .into_shape_with_order((cout, cin * kh * kw))
            .expect("weight reshape");
        let mut out = Array4::<f32>::zeros((n, cout, oh, ow));
        let mut cols = Vec::with_capacity(n);
        for i in 0..n {
            let col = im2col(&xv.index_axis(Axis(0), i).to_owned(), kh, kw, pad, oh, ow);
            let y = w2.dot(&col); // [cout, oh*ow]
            let mut slot = out.index_axis_mut(Axis(0), i);
            for c in 0..cout {
                let bias = bv[c];
                let row = y.row(c);
                let mut plane = slot.index_axis_mut(Axis(0), c);
                for yy in 0..oh {
                    for xx in 0..ow {
                        plane[[yy, xx]] = row[yy * ow + xx] + bias;
                    }
                }
            }
            cols.push(col);
        }
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(out.into_dyn(), Op::Conv2d { x, w, b, pad, cols }, ng)
    }

    /// 2x2 max pooling with stride 2; spatial dims must be even.
    pub fn max_pool2(&mut self, x: Var) -> Var {
        let xv = as4(&self.nodes[x.0].value);
        let (n, c, h, w) = xv.dim();
        assert!(h % 2 == 0 && w % 2 == 0, "max_pool2 needs even spatial dims");
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Array4::<f32>::zeros((n, c, oh, ow));
        let mut argmax = vec![0usize; n * c * oh * ow];
        let mut oi = 0;
        for i in 0..n {
            for ch in 0..c {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut best = f32::NEG_INFINITY;
                        let mut best_idx = 0;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let (sy, sx) = (2 * y + dy, 2 * xx + dx);
                                let v = xv[[i, ch, sy, sx]];
                                if v > best {
                                    best = v;
                                    best_idx = ((i * c + ch) * h + sy) * w + sx;
                                }
                            }
                        }
                        out[[i, ch, y, xx]] = best;
                        argmax[oi] = best_idx;
                        oi += 1;
                    }
                }
            }
        }
        let ng = self.needs(x);
        self.push(out.into_dyn(), Op::MaxPool2 { x, argmax }, ng)
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let xv = as4(&self.nodes[x.0].value);
        let (n, c, h, w) = xv.dim();
        let mut out = Array4::<f32>::zeros((n, c, h * 2, w * 2));
        for i in 0..n {
            for ch in 0..c {
                for y in 0..h * 2 {
                    for xx in 0..w * 2 {
                        out[[i, ch, y, xx]] = xv[[i, ch, y / 2, xx / 2]];
                    }
                }
            }
        }
        let ng = self.needs(x);
        self.push(out.into_dyn(), Op::Upsample2(x), ng)
    }

    /// Batch normalization over `x [N,D]` per feature.
    ///
    /// In training mode batch statistics are used and returned so the caller
    /// can maintain running averages; in eval mode the provided running
    /// statistics are treated as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&Array1<f32>, &Array1<f32>)>,
        eps: f32,
    ) -> (Var, Option<(Array1<f32>, Array1<f32>)>) {
        let xv = as2(&self.nodes[x.0].value).to_owned();
        let (n, d) = xv.dim();
        let (mean, var, train) = match running {
            None => {
                let mean = xv.mean_axis(Axis(0)).expect("batch > 0");
                let var = xv
                    .axis_iter(Axis(1))
                    .zip(mean.iter())
                    .map(|(col, &m)| col.iter().map(|v| (v - m) * (v - m)).sum::<f32>() / n as f32)
                    .collect::<Array1<f32>>();
                (mean, var, true)
            }
            Some((m, v)) => (m.clone(), v.clone(), false),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let mut x_hat = xv;
        for mut row in x_hat.axis_iter_mut(Axis(0)) {
            for j in 0..d {
                row[j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        let gv = self.nodes[gamma.0]
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("gamma rank 1")
            .to_owned();
        let bv = self.nodes[beta.0]
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("beta rank 1")
            .to_owned();
        let mut y = x_hat.clone();
        for mut row in y.axis_iter_mut(Axis(0)) {
            for j in 0..d {
                row[j] = row[j] * gv[j] + bv[j];
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let out = self.push(
            y.into_dyn(),
            Op::BatchNorm { x, gamma, beta, x_hat, inv_std: inv_std.clone(), train },
            ng,
        );
        let stats = train.then(|| (mean, var));
        (out, stats)
    }

    /// Mean softmax cross-entropy between `logits [N,C]` and class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lv = as2(&self.nodes[logits.0].value).to_owned();
        let probs = softmax_rows(&lv);
        let n = targets.len();
        assert_eq!(lv.nrows(), n);
        let mut loss = 0.0f64;
        for (i, &t) in targets.iter().enumerate() {
            loss -= (probs[[i, t]].max(1e-12) as f64).ln();
        }
        let value = ArrayD::from_elem(IxDyn(&[]), (loss / n as f64) as f32);
        let ng = self.needs(logits);
        self.push(
            value,
            Op::SoftmaxCrossEntropy { logits, targets: targets.to_vec(), probs },
            ng,
        )
    }

    /// Run the backward pass from a scalar output. Returns per-node gradient
    /// storage indexed by `Var`.
    pub fn backward(&self, out: Var) -> Gradients {
        assert!(
            self.nodes[out.0].value.ndim() == 0,
            "backward expects a scalar output"
        );
        let mut grads: Vec<Option<ArrayD<f32>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(ArrayD::from_elem(IxDyn(&[]), 1.0));

        for i in (0..self.nodes.len()).rev() {
            if grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let dy = grads[i].take().expect("checked above");
            self.accumulate(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Gradients { grads }
    }

    fn accumulate(&self, i: usize, dy: &ArrayD<f32>, grads: &mut [Option<ArrayD<f32>>]) {
        let add_to = |grads: &mut [Option<ArrayD<f32>>], v: Var, g: ArrayD<f32>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => *acc += &g,
                slot @ None => *slot = Some(g),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_to(grads, *a, dy.clone());
                add_to(grads, *b, dy.clone());
            }
            Op::Sub(a, b) => {
                add_to(grads, *a, dy.clone());
                add_to(grads, *b, dy.mapv(|v| -v));
            }
            Op::Mul(a, b) => {
                add_to(grads, *a, dy * &self.nodes[b.0].value);
                add_to(grads, *b, dy * &self.nodes[a.0].value);
            }
            Op::Scale(a, c) => add_to(grads, *a, dy.mapv(|v| v * c)),
            Op::Relu(a) => {
                let mask = self.nodes[a.0].value.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                add_to(grads, *a, dy * &mask);
            }
            Op::Sigmoid(a) => {
                let s = &self.nodes[i].value;
                add_to(grads, *a, dy * &(s * &s.mapv(|v| 1.0 - v)));
            }
            Op::Reshape(a) => {
                let g = dy
                    .as_standard_layout()
                    .to_owned()
                    .into_shape_with_order(self.nodes[a.0].value.raw_dim())
                    .expect("reshape grad");
                add_to(grads, *a, g);
            }
            Op::Concat { parts, axis } => {
                let mut start = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.shape()[*axis];
                    let g = dy
                        .slice_axis(Axis(*axis), ndarray::Slice::from(start..start + len))
                        .to_owned();
                    add_to(grads, p, g);
                    start += len;
                }
            }
            Op::MeanAxis { x, axis, keepdim } => {
                let len = self.nodes[x.0].value.shape()[*axis];
                let g = spread_axis(dy, *axis, len, *keepdim).mapv(|v| v / len as f32);
                add_to(grads, *x, g);
            }
            Op::SumAxis { x, axis, keepdim } => {
                let len = self.nodes[x.0].value.shape()[*axis];
                let g = spread_axis(dy, *axis, len, *keepdim);
                add_to(grads, *x, g);
            }
            Op::MeanAll(x) => {
                let shape = self.nodes[x.0].value.raw_dim();
                let count = self.nodes[x.0].value.len() as f32;
                let v = dy.first().copied().expect("scalar grad") / count;
                add_to(grads, *x, ArrayD::from_elem(shape, v));
            }
            Op::DivBroadcast { a, b } => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                add_to(grads, *a, dy / bv);
                if self.nodes[b.0].needs_grad {
                    // db = -sum over broadcast axes of dy * a / b^2
                    let full = dy * av / (bv * bv);
                    let mut g = full.mapv(|v| -v);
                    for (ax, &blen) in bv.shape().iter().enumerate() {
                        if blen == 1 && g.shape()[ax] != 1 {
                            g = g.sum_axis(Axis(ax)).insert_axis(Axis(ax));
                        }
                    }
                    add_to(grads, *b, g);
                }
            }
            Op::Linear { x, w, b } => {
                let dy2 = as2(dy);
                let xv = as2(&self.nodes[x.0].value);
                let wv = as2(&self.nodes[w.0].value);
                add_to(grads, *x, dy2.dot(&wv.t()).into_dyn());
                add_to(grads, *w, xv.t().dot(&dy2).into_dyn());
                add_to(grads, *b, dy2.sum_axis(Axis(0)).into_dyn());
            }
            Op::Conv2d { x, w, b, pad, cols } => {
                self.conv2d_backward(dy, *x, *w, *b, *pad, cols, grads, add_to);
            }
            Op::MaxPool2 { x, argmax } => {
                let mut g = ArrayD::zeros(self.nodes[x.0].value.raw_dim());
                let gs = g.as_slice_mut().expect("standard layout");
                for (o, &src) in dy.iter().zip(argmax.iter()) {
                    gs[src] += *o;
                }
                add_to(grads, *x, g);
            }
            Op::Upsample2(x) => {
                let dy4 = as4(dy);
                let (n, c, h2, w2) = dy4.dim();
                let mut g = Array4::<f32>::zeros((n, c, h2 / 2, w2 / 2));
                for i in 0..n {
                    for ch in 0..c {
                        for y in 0..h2 {
                            for xx in 0..w2 {
                                g[[i, ch, y / 2, xx / 2]] += dy4[[i, ch, y, xx]];
                            }
                        }
                    }
                }
                add_to(grads, *x, g.into_dyn());
            }
            Op::BatchNorm { x, gamma, beta, x_hat, inv_std, train } => {
                let dy2 = as2(dy);
                let (n, d) = x_hat.dim();
                let gv = self.nodes[gamma.0]
                    .value
                    .view()
                    .into_dimensionality::<ndarray::Ix1>()
                    .expect("gamma rank 1");
                // dgamma, dbeta
                let mut dgamma = Array1::<f32>::zeros(d);
                let mut dbeta = Array1::<f32>::zeros(d);
                for i in 0..n {
                    for j in 0..d {
                        dgamma[j] += dy2[[i, j]] * x_hat[[i, j]];
                        dbeta[j] += dy2[[i, j]];
                    }
                }
                add_to(grads, *gamma, dgamma.clone().into_dyn());
                add_to(grads, *beta, dbeta.into_dyn());
                if self.nodes[x.0].needs_grad {
                    let mut dx = Array2::<f32>::zeros((n, d));
                    if *train {
                        // Standard batch-stats backward.
                        let mut sum_dxhat = Array1::<f32>::zeros(d);
                        let mut sum_dxhat_xhat = Array1::<f32>::zeros(d);
                        for i in 0..n {
                            for j in 0..d {
                                let dxh = dy2[[i, j]] * gv[j];
                                sum_dxhat[j] += dxh;
                                sum_dxhat_xhat[j] += dxh * x_hat[[i, j]];
                            }
                        }
                        for i in 0..n {
                            for j in 0..d {
                                let dxh = dy2[[i, j]] * gv[j];
                                dx[[i, j]] = inv_std[j] / n as f32
                                    * (n as f32 * dxh
                                        - sum_dxhat[j]
                                        - x_hat[[i, j]] * sum_dxhat_xhat[j]);
                            }
                        }
                    } else {
                        for i in 0..n {
                            for j in 0..d {
                                dx[[i, j]] = dy2[[i, j]] * gv[j] * inv_std[j];
                            }
                        }
                    }
                    add_to(grads, *x, dx.into_dyn());
                }
            }
            Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                let scale = dy.first().copied().expect("scalar grad") / targets.len() as f32;
                let mut g = probs.clone();
                for (i, &t) in targets.iter().enumerate() {
                    g[[i, t]] -= 1.0;
                }
                add_to(grads, *logits, g.mapv(|v| v * scale).into_dyn());
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &self,
        dy: &ArrayD<f32>,
        x: Var,
        w: Var,
        b: Var,
        pad: Padding,
        cols: &[Array2<f32>],
        grads: &mut [Option<ArrayD<f32>>],
        add_to: impl Fn(&mut [Option<ArrayD<f32>>], Var, ArrayD<f32>),
    ) {
        let dy4 = as4(dy);
        let xv = as4(&self.nodes[x.0].value);
        let wv = as4(&self.nodes[w.0].value);
        let (n, cin, h, wd) = xv.dim();
        let (cout, _, kh, kw) = wv.dim();
        let (_, _, oh, ow) = dy4.dim();
        let w2 = wv
            .to_owned()
            .into_shape_with_order((cout, cin * kh * kw))
            .expect("weight reshape");

        let mut dw2 = Array2::<f32>::zeros((cout, cin * kh * kw));
        let mut db = Array1::<f32>::zeros(cout);
        let x_needs = self.nodes[x.0].needs_grad;
        let mut dx = x_needs.then(|| Array4::<f32>::zeros((n, cin, h, wd)));
        for i in 0..n {
            let mut dyi = Array2::<f32>::zeros((cout, oh * ow));
            for c in 0..cout {
                for y in 0..oh {
                    for xx in 0..ow {
                        let v = dy4[[i, c, y, xx]];
                        dyi[[c, y * ow + xx]] = v;
                        db[c] += v;
                    }
                }
            }
            dw2 += &dyi.dot(&cols[i].t());
            if let Some(dx) = dx.as_mut() {
                let dcol = w2.t().dot(&dyi);
                col2im_accumulate(
                    &dcol,
                    &mut dx.index_axis_mut(Axis(0), i),
                    kh,
                    kw,
                    pad,
                    oh,
                    ow,
                );
            }
        }
        add_to(
            grads,
            w,
            dw2.into_shape_with_order((cout, cin, kh, kw)).expect("dw reshape").into_dyn(),
        );
        add_to(grads, b, db.into_dyn());
        if let Some(dx) = dx {
            add_to(grads, x, dx.into_dyn());
        }
    }
}

pub struct Gradients {
    grads: Vec<Option<ArrayD<f32>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&ArrayD<f32>> {
        self.grads[v.0].as_ref()
    }
}

pub fn sigmoid_scalar(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

pub fn softmax_rows(logits: &Array2<f32>) -> Array2<f32> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn as2(a: &ArrayD<f32>) -> ndarray::ArrayView2<'_, f32> {
    a.view().into_dimensionality().expect("rank-2 tensor")
}

fn as4(a: &ArrayD<f32>) -> ndarray::ArrayView4<'_, f32> {
    a.view().into_dimensionality().expect("rank-4 tensor")
}

/// Broadcast a reduced gradient back along `axis`.
fn spread_axis(dy: &ArrayD<f32>, axis: usize, len: usize, keepdim: bool) -> ArrayD<f32> {
    let with_axis = if keepdim {
        dy.clone()
    } else {
        dy.clone().insert_axis(Axis(axis))
    };
    let mut shape = with_axis.shape().to_vec();
    shape[axis] = len;
    let mut out = ArrayD::zeros(IxDyn(&shape));
    for mut lane in out.axis_iter_mut(Axis(axis)) {
        lane += &with_axis.index_axis(Axis(axis), 0);
    }
    out
}

/// Gather padded patches into a `[cin*kh*kw, oh*ow]` matrix.
fn im2col(
    x: &ndarray::Array3<f32>,
    kh: usize,
    kw: usize,
    pad: Padding,
    oh: usize,
    ow: usize,
) -> Array2<f32> {
    let (cin, h, w) = x.dim();
    let mut col = Array2::<f32>::zeros((cin * kh * kw, oh * ow));
    for c in 0..cin {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                for oy in 0..oh {
                    let sy = oy + ky;
                    if sy < pad.0 || sy >= h + pad.0 {
                        continue;
                    }
                    for ox in 0..ow {
                        let sx = ox + kx;
                        if sx < pad.2 || sx >= w + pad.2 {
                            continue;
                        }
                        col[[row, oy * ow + ox]] = x[[c, sy - pad.0, sx - pad.2]];
                    }
                }
            }
        }
    }
    col
}

/// Scatter-add the columns gradient back into the (unpadded) input image.
fn col2im_accumulate(
    dcol: &Array2<f32>,
    dx: &mut ndarray::ArrayViewMut3<'_, f32>,
    kh: usize,
    kw: usize,
    pad: Padding,
    oh: usize,
    ow: usize,
) {
    let (cin, h, w) = dx.dim();
    for c in 0..cin {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                for oy in 0..oh {
                    let sy = oy + ky;
                    if sy < pad.0 || sy >= h + pad.0 {
                        continue;
                    }
                    for ox in 0..ow {
                        let sx = ox + kx;
                        if sx < pad.2 || sx >= w + pad.2 {
                            continue;
                        }
                        dx[[c, sy - pad.0, sx - pad.2]] += dcol[[row, oy * ow + ox]];
                    }
                }
            }
        }
    }
}
